"""Adversarial teacher curriculum for language-instructed gridworld agents.

Subpackages split along the pipeline: ``envgrid`` simulates the world and its
events, ``instructor`` turns events into natural-language goals, ``embed``
turns goals into vectors, ``qlearn`` holds the value networks and losses,
``orchestrator`` runs the teacher/student training loop, ``evalkit`` scores
checkpoints against generated test sets, and ``cli`` ties it all together.
"""

__version__ = "0.1.0"
