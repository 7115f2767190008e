"""Reconstruction-based anomaly detection for multivariate time series.

The package layers a small float64 autodiff core (:mod:`tsad.autodiff`)
under a Time2Vec + EdgeConv/Transformer reconstruction model, and pairs
it with rolling-Gaussian anomaly scoring, thresholding rules, and
point/segment/range evaluation metrics. :mod:`tsad.pipeline` wires the
pieces into train / score / evaluate runs; ``tsad.cli`` exposes them as
a command line.
"""

from tsad.autodiff import Tensor, backward, no_grad  # noqa: F401

__version__ = "0.1.0"
