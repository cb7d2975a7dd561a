"""Norm-ball geometry toolkit and desk-scale adversarial robustness lab.

Two halves that share one RNG discipline:

* ``geometry`` quantifies how fast the overlap between equal-volume L2 and
  Linf balls collapses with dimension (exact radii, concentration bounds,
  Monte Carlo estimates).
* ``nn`` / ``attacks`` / ``defenses`` / ``experiments`` provide a small
  MLP with exact gradients, PGD and Carlini-Wagner style attacks, a family
  of robust training procedures, and the experiment harness that measures
  the resulting attack/defense interplay on synthetic data.
"""

__version__ = "0.1.0"
