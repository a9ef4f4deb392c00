"""Shared fixtures and random-input generators."""

from __future__ import annotations

import numpy as np
import pytest

from flowtrack.geometry import Box3D


def random_box(
    rng: np.random.Generator,
    center_range: float = 10.0,
    dim_low: float = 0.5,
    dim_high: float = 5.0,
) -> Box3D:
    """A valid box with uniform center, dims and yaw."""
    return Box3D(
        x=float(rng.uniform(-center_range, center_range)),
        y=float(rng.uniform(-center_range, center_range)),
        z=float(rng.uniform(-2.0, 2.0)),
        l=float(rng.uniform(dim_low, dim_high)),
        w=float(rng.uniform(dim_low, dim_high)),
        h=float(rng.uniform(dim_low, dim_high)),
        theta=float(rng.uniform(-np.pi, np.pi)),
    )


def nearby_box(rng: np.random.Generator, base: Box3D) -> Box3D:
    """A box perturbed from ``base`` so overlap is common but not certain."""
    return Box3D(
        x=base.x + float(rng.uniform(-base.l, base.l)),
        y=base.y + float(rng.uniform(-base.w, base.w)),
        z=base.z + float(rng.uniform(-base.h, base.h)),
        l=float(rng.uniform(0.5, 5.0)),
        w=float(rng.uniform(0.5, 5.0)),
        h=float(rng.uniform(0.5, 5.0)),
        theta=float(rng.uniform(-np.pi, np.pi)),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
