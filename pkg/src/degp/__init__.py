"""Deep ensembles as Gaussian-process posteriors, trained by functional VI."""

__version__ = "0.1.0"
