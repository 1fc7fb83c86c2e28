"""Desk-scale laboratory for grounded-imagination model-based RL.

Subpackages: a minimal reverse-mode autodiff engine, diagonal-Gaussian
machinery, toy environments with a frozen grounding oracle, the latent
world model and its trust-region controller, imagination-based policy
learning, drift metrics, exact tabular theory checks, and evaluation
statistics.
"""

__version__ = "0.1.0"
