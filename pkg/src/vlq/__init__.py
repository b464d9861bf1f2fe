"""Weak-turbulence kinetic plasma toolkit.

Synthesizes stochastic electric fields with prescribed autocorrelation,
integrates the scaled Vlasov / Vlasov-Poisson system, builds quasilinear
and resonance-broadened velocity diffusion matrices, and verifies the
diffusion limit by Monte-Carlo ensembles.
"""

__version__ = "0.1.0"
