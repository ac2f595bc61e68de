"""Monte Carlo solvers for Markovian quadratic BSDEs on Galerkin-truncated
state spaces, with Bismut gradient estimators, inf-sup regularisation and
the associated stochastic control problem."""

__version__ = "0.1.0"
