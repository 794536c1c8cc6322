"""Bundled datasets."""

from __future__ import annotations

from importlib import resources

import numpy as np


def salmonella_path():
    return resources.files(__name__).joinpath("salmonella.csv")


def salmonella():
    """Ames salmonella assay: ``(freq, dose)`` for 3 plates at each of 6 doses."""
    with resources.as_file(salmonella_path()) as path:
        raw = np.genfromtxt(path, delimiter=",", names=True)
    return raw["freq"].astype(np.int64), raw["dose"].astype(np.float64)


def salmonella_spec(transform="identity"):
    """Log-linear model with intercept, dose and log(dose + 10)."""
    from ..model import ModelSpec

    freq, dose = salmonella()
    X = np.column_stack([np.ones_like(dose), dose, np.log(dose + 10.0)])
    return ModelSpec(freq, X, None, "log", transform)
