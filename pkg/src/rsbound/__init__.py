"""Replica-symmetric upper bounds on the MAP threshold of LDPC ensembles."""

from . import channel, ensemble, exact_gibbs, interpolation, rs_solver

__version__ = "0.1.0"
__all__ = ["channel", "ensemble", "exact_gibbs", "interpolation", "rs_solver"]
