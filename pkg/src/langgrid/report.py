"""Figure rendering for training and evaluation artifacts.

Everything draws through the Agg backend straight to files; nothing here
opens a window. Figures are a convenience layer over the CSVs, which stay
the canonical record.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .evalkit import EvalReport, QDistancePoint  # noqa: E402


def _read_csv(path: Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [row for row in csv.DictReader(fh) if not row.get("rollout", "").startswith("#")]


def training_figure(metrics_csv: str | Path, out_path: str | Path) -> Path:
    """Reward, loss, and schedule curves; adds the eval snapshot panel when
    the sidecar exists next to the metrics file."""
    metrics_csv = Path(metrics_csv)
    rows = _read_csv(metrics_csv)
    rollouts = [int(r["rollout"]) for r in rows]

    fig, axes = plt.subplots(2, 2, figsize=(11, 7))
    ax = axes[0][0]
    ax.plot(rollouts, [float(r["teacher_reward_sum"]) for r in rows], label="teacher", lw=0.8)
    ax.plot(rollouts, [float(r["student_reward_sum"]) for r in rows], label="student", lw=0.8)
    ax.set_xlabel("rollout")
    ax.set_ylabel("episode reward")
    ax.legend()

    ax = axes[0][1]
    ax.plot(rollouts, [float(r["rl_loss"]) for r in rows], label="td loss", lw=0.8)
    ax.plot(rollouts, [float(r["bc_loss"]) for r in rows], label="imitation loss", lw=0.8)
    ax.set_xlabel("rollout")
    ax.set_ylabel("loss")
    ax.legend()

    ax = axes[1][0]
    ax.plot(rollouts, [float(r["bc_coeff"]) for r in rows], label="imitation weight", lw=0.8)
    ax.plot(rollouts, [float(r["epsilon_student"]) for r in rows], label="epsilon", lw=0.8)
    ax.set_xlabel("rollout")
    ax.legend()

    ax = axes[1][1]
    eval_csv = metrics_csv.with_name("eval_snapshots.csv")
    if eval_csv.exists():
        erows = _read_csv(eval_csv)
        ax.plot(
            [int(r["rollout"]) for r in erows],
            [float(r["success_rate"]) for r in erows],
            marker="o",
            ms=3,
        )
        ax.set_ylim(-0.02, 1.02)
        ax.set_ylabel("test success rate")
    else:
        ax.set_axis_off()
    ax.set_xlabel("rollout")

    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def eval_figure(report: EvalReport, out_path: str | Path) -> Path:
    """Histogram of per-case goal completion plus the headline rate."""
    fracs = [
        r.events_reached / r.events_total if r.events_total else 0.0
        for r in report.case_results
    ]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.hist(fracs, bins=20, range=(0.0, 1.0), edgecolor="black", lw=0.5)
    ax.set_xlabel("fraction of case events completed")
    ax.set_ylabel("cases")
    ax.set_title(f"mode={report.mode}  success_rate={report.success_rate:.3f}")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def q_distance_figure(
    points: list[QDistancePoint], slope: float, out_path: str | Path
) -> Path:
    """Scatter of per-synonym mean max value against embedding distance from
    the root phrasing, with the fitted trend overlaid."""
    xs = [p.distance for p in points]
    ys = [p.mean_max_q for p in points]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.scatter(xs, ys, s=12, alpha=0.6)
    if points and slope == slope:  # a nan slope has nothing to draw
        import numpy as np

        coeffs = np.polyfit(xs, ys, 1)
        grid = np.linspace(min(xs), max(xs), 50)
        ax.plot(grid, np.polyval(coeffs, grid), color="black", lw=1.0,
                label=f"slope {slope:.4f}")
        ax.legend()
    ax.set_xlabel("embedding distance from root instruction")
    ax.set_ylabel("mean max Q")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
