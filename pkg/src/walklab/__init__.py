"""walklab: return probabilities and heat kernels of spread-out random walks on
finitely generated groups of polynomial growth and lamplighter groups."""

__version__ = "0.1.0"
