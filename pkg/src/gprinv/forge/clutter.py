"""Correlated random clutter standing in for heterogeneous-soil reflections."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ConfigError

# family id -> (amplitude ratio, correlation lengths in samples (t, y, x),
# background permittivity of the matching ground-truth maps; None = soil)
FAMILIES = {
    0: (0.5, (4.0, 2.0, 2.0), None),
    1: (0.6, (3.0, 3.0, 3.0), 5.72),
    2: (0.7, (2.0, 4.0, 4.0), 6.34),
}


@dataclass
class ClutterParams:
    family: int = 0
    amplitude_ratio: float = 0.5
    correlation_lengths: tuple = (4.0, 2.0, 2.0)
    seed: int = 0
    background_epsilon_r: float | None = None

    @classmethod
    def from_family(cls, family, seed=0, **overrides):
        if family not in FAMILIES:
            raise ConfigError(f"unknown clutter family {family}", key="clutter.family")
        ratio, corr, bg = FAMILIES[family]
        params = cls(family, ratio, corr, seed, bg)
        for k, v in overrides.items():
            if v is not None:
                setattr(params, k, v)
        return params

    def validate(self):
        if self.amplitude_ratio < 0:
            raise ConfigError("clutter.amplitude_ratio must be >= 0", key="clutter.amplitude_ratio")
        if any(c < 0 for c in self.correlation_lengths):
            raise ConfigError("clutter.correlation_lengths must be >= 0", key="clutter.correlation_lengths")
        return self

    def to_dict(self):
        d = asdict(self)
        d["correlation_lengths"] = list(self.correlation_lengths)
        return d


def synthesize_clutter(params: ClutterParams, dims, reference_rms):
    """White Gaussian noise smoothed by a separable Gaussian kernel, scaled so
    its RMS equals ``amplitude_ratio * reference_rms``."""
    params.validate()
    dims = tuple(int(d) for d in dims)
    target = params.amplitude_ratio * float(reference_rms)
    if target == 0.0:
        return np.zeros(dims)
    rng = np.random.default_rng(params.seed)
    field = gaussian_filter(rng.standard_normal(dims), sigma=params.correlation_lengths, mode="reflect")
    rms = float(np.sqrt(np.mean(field * field)))
    if rms == 0.0:
        return np.zeros(dims)
    return field * (target / rms)
