"""Dispatch to the numba or numpy kernel backend (see ``nbbr._accel``)."""

from __future__ import annotations

from ._accel import BACKEND, USE_NUMBA

if USE_NUMBA:
    from ._kernels_numba import data_sums, series_expectations, tail_probabilities
else:
    from ._kernels_numpy import data_sums, series_expectations, tail_probabilities

__all__ = ["BACKEND", "data_sums", "series_expectations", "tail_probabilities"]
