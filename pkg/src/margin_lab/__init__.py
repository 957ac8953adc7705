"""Toolkit for training small MLPs under explicit normalized-margin control
and reproducing the associated controlled generalization studies."""

from . import dataset, experiments, margins, network, nngp, numerics, training

__version__ = "0.1.0"

__all__ = ["dataset", "experiments", "margins", "network", "nngp",
           "numerics", "training", "__version__"]
