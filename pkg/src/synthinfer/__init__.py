"""Differentially private synthetic data with combining-rule inference.

Subpackages and modules:

* :mod:`synthinfer.tabular` - typed datasets, schemas and CSV persistence
* :mod:`synthinfer.randkit` - seeded streams, samplers and special functions
* :mod:`synthinfer.dp` - privacy budgets, mechanisms and the composition ledger
* :mod:`synthinfer.synthesizers` - private generative models and m-copy bundles
* :mod:`synthinfer.estimators` - per-dataset point and variance estimates
* :mod:`synthinfer.combine` - pooling estimates across synthetic copies
* :mod:`synthinfer.simlab` - Monte Carlo experiments and report tables
"""

__version__ = "0.1.0"
