"""Survey geometry, Ricker source and a Born point-scatterer forward model.

Each horizontal permittivity interface in the rasterised scene acts as a
point scatterer with the normal-incidence Fresnel coefficient of that
interface. A scatterer at p seen by a transmitter/receiver pair contributes

    gamma * w(t - t0 - (R_tx + R_rx) / v) / (R_tx + R_rx)

with v = c / sqrt(eps_soil) and w the peak-normalised Ricker wavelet.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import kernels
from ..errors import ConfigError, GprInvError
from .scene import PLACEMENT_HI, PLACEMENT_LO, Scene, rasterize_labels, voxel_centers

C0 = 299_792_458.0


@dataclass
class SurveyConfig:
    domain: tuple = (1.0, 1.0, 0.26)
    lines: int = 12
    points_per_line: int = 10
    # survey grid footprint (x, y), centred on the origin
    scan_extent: tuple = (0.4, 0.4)
    tx_rx_offset: float = 0.10
    antenna_height: float = 0.02
    center_frequency: float = 1e9
    time_window: float = 15e-9
    time_samples: int = 256
    # None -> one period (1 / f_c) so the wavelet starts near zero amplitude
    source_delay: float | None = None
    voxel_size: float = 0.0025
    scatterers_per_object: int = 2000
    direct_coupling: bool = True

    def validate(self):
        for key in ("lines", "points_per_line", "center_frequency", "time_window", "time_samples",
                    "voxel_size", "scatterers_per_object"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"survey.{key} must be positive", key=f"survey.{key}")
        if self.tx_rx_offset < 0 or self.antenna_height < 0:
            raise ConfigError("survey offsets must be non-negative", key="survey.tx_rx_offset")
        if self.tx_rx_offset >= self.domain[0]:
            raise ConfigError("survey.tx_rx_offset must be smaller than the domain width",
                              key="survey.tx_rx_offset")
        return self

    @property
    def dt(self):
        return self.time_window / self.time_samples

    @property
    def t0(self):
        return 1.0 / self.center_frequency if self.source_delay is None else self.source_delay

    def trace_centres(self):
        """(lines, points, 2) array of (x, y) trace midpoints."""
        ex, ey = self.scan_extent
        xs = _span(self.points_per_line, ex)
        ys = _span(self.lines, ey)
        y, x = np.meshgrid(ys, xs, indexing="ij")
        return np.stack([x, y], axis=-1)

    def antenna_positions(self):
        """Transmitter and receiver coordinates, each (lines*points, 3).

        The pair straddles the trace midpoint along x and sits
        ``antenna_height`` above the surface (negative z).
        """
        c = self.trace_centres().reshape(-1, 2)
        half = self.tx_rx_offset / 2
        z = np.full(len(c), -self.antenna_height)
        tx = np.column_stack([c[:, 0] - half, c[:, 1], z])
        rx = np.column_stack([c[:, 0] + half, c[:, 1], z])
        return tx, rx

    def to_dict(self):
        return asdict(self)


def _span(n, extent):
    return np.zeros(1) if n == 1 else np.linspace(-extent / 2, extent / 2, n)


def ricker(fc, t):
    """Peak-normalised Ricker wavelet (1 - 2 pi^2 f^2 t^2) exp(-pi^2 f^2 t^2)."""
    if fc <= 0:
        raise ValueError("centre frequency must be positive")
    a = (np.pi * fc * np.asarray(t, dtype=float)) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def reflection_coefficient(eps_above, eps_below):
    """Normal-incidence amplitude coefficient for a wave travelling downwards."""
    a, b = np.sqrt(eps_above), np.sqrt(eps_below)
    return (a - b) / (a + b)


def wave_speed(eps):
    return C0 / np.sqrt(eps)


def interface_scatterers(labels, eps_map, voxel_size, origin=PLACEMENT_LO, cap_per_label=2000, soil_eps=None):
    """Point scatterers on horizontal interfaces of a rasterised scene.

    Interfaces are found between vertically adjacent voxels whose labels
    differ (including the top and bottom faces of the grid against soil).
    Each is weighted by its Fresnel coefficient times its area in cm^2.
    Interfaces are grouped by the object that owns them and subsampled
    deterministically (evenly spaced in scan order) to ``cap_per_label``,
    with weights scaled up by the subsampling ratio.

    Returns (points (n, 3) in (x, y, z), weights (n,), labels (n,)).
    """
    dz, dy, dx = (voxel_size,) * 3 if np.ndim(voxel_size) == 0 else voxel_size
    soil = eps_map.flat[0] if soil_eps is None else soil_eps
    nz = labels.shape[0]
    lab = np.concatenate([np.zeros((1,) + labels.shape[1:], labels.dtype), labels,
                          np.zeros((1,) + labels.shape[1:], labels.dtype)])
    eps = np.concatenate([np.full((1,) + eps_map.shape[1:], soil), eps_map,
                          np.full((1,) + eps_map.shape[1:], soil)])
    # interface k sits between padded rows k and k+1, i.e. at depth z0 + k*dz
    differs = lab[:-1] != lab[1:]
    k, j, i = np.nonzero(differs)
    owner = np.maximum(lab[k, j, i], lab[k + 1, j, i])
    gamma = reflection_coefficient(eps[k, j, i], eps[k + 1, j, i])
    zc, yc, xc = voxel_centers((nz,) + labels.shape[1:], (dz, dy, dx), origin)
    pts = np.column_stack([xc[i], yc[j], origin[2] + k * dz])
    area = dx * dy / 1e-4
    keep_pts, keep_w, keep_lab = [], [], []
    for lbl in np.unique(owner):
        sel = np.flatnonzero(owner == lbl)
        ratio = 1.0
        if len(sel) > cap_per_label:
            pick = np.unique(np.round(np.linspace(0, len(sel) - 1, cap_per_label)).astype(np.int64))
            ratio = len(sel) / len(pick)
            sel = sel[pick]
        keep_pts.append(pts[sel])
        keep_w.append(gamma[sel] * area * ratio)
        keep_lab.append(np.full(len(sel), lbl))
    if not keep_pts:
        return np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int16)
    return np.concatenate(keep_pts), np.concatenate(keep_w), np.concatenate(keep_lab)


def forward_points(points, weights, survey: SurveyConfig, soil_eps=4.0):
    """C-scan (time, line, trace) of explicit point scatterers."""
    survey.validate()
    tx, rx = survey.antenna_positions()
    traces = np.zeros((len(tx), survey.time_samples))
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    w = np.ascontiguousarray(np.asarray(weights, dtype=np.float64).reshape(-1))
    if len(pts):
        kernels.born_accumulate(
            traces, np.ascontiguousarray(tx), np.ascontiguousarray(rx), pts, w,
            float(wave_speed(soil_eps)), survey.dt, survey.t0, survey.center_frequency,
            2.0 / survey.center_frequency,
        )
    return traces.T.reshape(survey.time_samples, survey.lines, survey.points_per_line)


def _placement_grid(survey):
    extent = PLACEMENT_HI - PLACEMENT_LO
    dims = tuple(int(round(e / survey.voxel_size)) for e in extent[::-1])
    vox = tuple(e / n for e, n in zip(extent[::-1], dims))
    return dims, vox


def forward_model(scene_or_map, survey: SurveyConfig, soil_eps=None, voxel_size=None, origin=PLACEMENT_LO):
    """Noise-free object response for a ``Scene`` or a permittivity map.

    A map is treated as piecewise constant with interfaces wherever the
    permittivity changes vertically; ``soil_eps`` then defaults to its
    first voxel and ``voxel_size`` must be given.
    """
    survey.validate()
    if isinstance(scene_or_map, Scene):
        scene = scene_or_map
        soil = scene.soil_epsilon_r if soil_eps is None else soil_eps
        dims, vox = _placement_grid(survey)
        labels = rasterize_labels(scene, dims, vox)
        lut = np.array([soil] + [o.epsilon_r for o in scene.objects])
        eps = lut[labels]
        pts, w, _ = interface_scatterers(labels, eps, vox, cap_per_label=survey.scatterers_per_object,
                                         soil_eps=soil)
        if scene.objects and len(pts) == 0:
            raise GprInvError("scene has objects but no scatterers survived rasterisation "
                              "(objects smaller than a voxel?)")
    else:
        eps = np.asarray(scene_or_map, dtype=np.float64)
        if voxel_size is None:
            raise ConfigError("voxel_size is required for permittivity-map input", key="survey.voxel_size")
        soil = float(eps.flat[0]) if soil_eps is None else soil_eps
        # label every distinct permittivity value so each change is an interface
        _, inv = np.unique(eps, return_inverse=True)
        labels = np.where(eps == soil, 0, inv.reshape(eps.shape) + 1).astype(np.int32)
        pts, w, _ = interface_scatterers(labels, eps, voxel_size, origin,
                                         cap_per_label=survey.scatterers_per_object, soil_eps=soil)
    return forward_points(pts, w, survey, soil)


def simulate_raw(scene, survey: SurveyConfig):
    """Raw acquisition: object response plus the direct TX->RX coupling wave
    and the ground-surface reflection, which are identical on every trace."""
    data = forward_model(scene, survey)
    if survey.direct_coupling:
        t = np.arange(survey.time_samples) * survey.dt
        fc, t0 = survey.center_frequency, survey.t0
        off = max(survey.tx_rx_offset, 1e-3)
        direct = ricker(fc, t - t0 - off / C0) / off
        path = 2.0 * np.hypot(survey.antenna_height, survey.tx_rx_offset / 2)
        path = max(path, 1e-3)
        g = reflection_coefficient(1.0, scene.soil_epsilon_r)
        ground = g * ricker(fc, t - t0 - path / C0) / path
        data = data + (direct + ground)[:, None, None]
    return data
