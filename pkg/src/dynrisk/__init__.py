"""Risk-sensitive reinforcement learning with dynamic spectral risk measures.

Estimates time-consistent dynamic risk (CVaR and finite-spectrum spectral
risks) of full episodes with strictly consistent scoring functions, and
optimises policies with an actor-critic that needs no nested inner
simulations.  A nested-simulation baseline, brute-force oracles, and three
market simulators ship alongside for validation.
"""

__version__ = "0.1.0"
