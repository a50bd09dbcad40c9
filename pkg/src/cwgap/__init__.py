"""Component-wise MCMC laboratory: block Gibbs / block MALA samplers for
Gaussian targets, closed-form spectral-gap bounds, and grid oracles that
check those bounds by brute force."""

__version__ = "0.1.0"
