"""Simulation toolkit for the k-coarse log-correlated field on the torus R^2/(4Z)^2.

Modules: ``torus`` (geometry), ``covariance`` (closed-form kernel),
``field`` (sampler), ``gmc`` (Liouville measure), ``lbm`` (Brownian paths and
the time change), ``classify`` (fast and slow points), ``exponents``
(scaling experiments), ``runner``/``cli`` (configuration and command line).
"""

__version__ = "0.1.0"
