"""Hot numeric kernels, dispatched to numba or numpy at import time.

Both backends are importable directly (``tbcal.kernels._numpy`` always,
``tbcal.kernels._numba`` when numba is installed) so they can be compared.
"""

from .._accel import USE_NUMBA

if USE_NUMBA:
    from . import _numba as _impl
else:
    from . import _numpy as _impl

discretize = _impl.discretize
count_covariance = _impl.count_covariance
covariance_grid = _impl.covariance_grid
histogram2d = _impl.histogram2d
nb_pmf = _impl.nb_pmf
nb_cutoff = _impl.nb_cutoff
pair_grid = _impl.pair_grid
model_grid = _impl.model_grid
model_shape = _impl.model_shape
declination_batch = _impl.declination_batch

__all__ = [
    "discretize",
    "count_covariance",
    "covariance_grid",
    "histogram2d",
    "nb_pmf",
    "nb_cutoff",
    "pair_grid",
    "model_grid",
    "model_shape",
    "declination_batch",
]
