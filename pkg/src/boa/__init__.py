"""Bayesian online adaptation of discrete-action imitation policies.

Fuses a base policy's action distribution (as a Dirichlet prior) with the
action counts of the k nearest expert latents (as Multinomial evidence), and
benchmarks the result on small deterministic gridworlds.
"""

__version__ = "0.1.0"
