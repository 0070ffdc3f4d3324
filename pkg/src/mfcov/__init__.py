"""Low-rank covariance function estimation for multidimensional functional data.

The estimator minimizes a squared-error loss over off-diagonal cross-products
of the observations, penalized by a convex combination of the trace norm of
the square unfolding (operator rank) and the trace norms of the one-way
unfoldings (marginal ranks) of the coefficient tensor, solved by an
accelerated ADMM in a reduced kernel basis.
"""

__version__ = "0.1.0"
