"""Small bundled datasets used for exact-optimum checks of the count models."""

from __future__ import annotations

import csv
from importlib import resources

import numpy as np

MICRO_NAMES = ("m1", "m2", "m3", "m4", "m5")


def load_micro(name: str):
    """Return ``(X, y, offset)`` for a micro dataset: intercept + one covariate, log-exposure offset."""
    if name not in MICRO_NAMES:
        raise KeyError(f"unknown micro dataset {name!r}")
    with resources.files("hbesafety").joinpath("data/micro.csv").open(encoding="utf-8") as fh:
        recs = [r for r in csv.DictReader(fh) if r["dataset"] == name]
    x = np.array([float(r["x"]) for r in recs])
    X = np.column_stack([np.ones_like(x), x])
    y = np.array([float(r["y"]) for r in recs])
    offset = np.log([float(r["exposure"]) for r in recs])
    return X, y, offset
