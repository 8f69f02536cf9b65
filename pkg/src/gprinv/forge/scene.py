"""Subsurface scene description, random sampling and voxel rasterisation.

Coordinates are metres with x, y horizontal (origin at the centre of the
survey area) and z the depth below the ground surface (positive down).
Grids are indexed (z, y, x) to match the (time, scan line, trace) layout of
C-scans.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError

SHAPES = ("cylinder", "sphere", "box")

EPS_RANGE = (8.0, 27.0)
RADIUS_RANGE = (0.02, 0.05)
CYLINDER_LENGTH_RANGE = (0.01, 0.33)
BOX_EDGE_RANGE = (0.04, 0.1)
# objects are confined to a 0.4 x 0.4 x 0.26 m block centred under the survey
PLACEMENT_LO = np.array([-0.2, -0.2, 0.0])
PLACEMENT_HI = np.array([0.2, 0.2, 0.26])


@dataclass
class SubsurfaceObject:
    shape: str
    center: tuple
    epsilon_r: float
    radius: float = 0.0
    length: float = 0.0
    edges: tuple = (0.0, 0.0, 0.0)
    # horizontal orientation angle (radians) of a cylinder axis or box x-edge
    azimuth: float = 0.0

    def axis(self):
        return np.array([np.cos(self.azimuth), np.sin(self.azimuth), 0.0])

    def half_extent(self):
        """Half sizes of the axis-aligned bounding box, (x, y, z)."""
        if self.shape == "sphere":
            return np.full(3, self.radius)
        if self.shape == "cylinder":
            u = self.axis()
            return np.abs(u) * self.length / 2 + self.radius * np.sqrt(np.clip(1 - u * u, 0, None))
        c, s = abs(np.cos(self.azimuth)), abs(np.sin(self.azimuth))
        ex, ey, ez = self.edges
        return np.array([c * ex / 2 + s * ey / 2, s * ex / 2 + c * ey / 2, ez / 2])

    def bounding_box(self):
        c = np.asarray(self.center, dtype=float)
        h = self.half_extent()
        return c - h, c + h

    def contains(self, pts):
        """Boolean mask for points of shape (..., 3) in (x, y, z)."""
        d = pts - np.asarray(self.center, dtype=float)
        if self.shape == "sphere":
            return (d * d).sum(-1) <= self.radius ** 2
        if self.shape == "cylinder":
            u = self.axis()
            t = d @ u
            radial = d - t[..., None] * u
            return (np.abs(t) <= self.length / 2) & ((radial * radial).sum(-1) <= self.radius ** 2)
        if self.shape == "box":
            c, s = np.cos(self.azimuth), np.sin(self.azimuth)
            lx = d[..., 0] * c + d[..., 1] * s
            ly = -d[..., 0] * s + d[..., 1] * c
            ex, ey, ez = self.edges
            return (np.abs(lx) <= ex / 2) & (np.abs(ly) <= ey / 2) & (np.abs(d[..., 2]) <= ez / 2)
        raise ConfigError(f"unknown shape {self.shape!r}", key="scene.shape")

    def to_dict(self):
        d = asdict(self)
        d["center"] = list(map(float, self.center))
        d["edges"] = list(map(float, self.edges))
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["center"] = tuple(d["center"])
        d["edges"] = tuple(d.get("edges", (0.0, 0.0, 0.0)))
        return cls(**d)


@dataclass
class Scene:
    soil_epsilon_r: float = 4.0
    # recorded for completeness; the Born model ignores conductivity
    soil_conductivity: float = 0.0
    objects: list = field(default_factory=list)
    seed: int | None = None

    def to_dict(self):
        return {
            "soil_epsilon_r": self.soil_epsilon_r,
            "soil_conductivity": self.soil_conductivity,
            "objects": [o.to_dict() for o in self.objects],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            soil_epsilon_r=d["soil_epsilon_r"],
            soil_conductivity=d.get("soil_conductivity", 0.0),
            objects=[SubsurfaceObject.from_dict(o) for o in d["objects"]],
            seed=d.get("seed"),
        )


def sample_object(rng, eps_range=EPS_RANGE, shapes=SHAPES):
    shape = shapes[rng.integers(len(shapes))]
    eps = float(rng.uniform(*eps_range))
    azimuth = float(rng.uniform(0.0, np.pi))
    if shape == "sphere":
        obj = SubsurfaceObject("sphere", (0, 0, 0), eps, radius=float(rng.uniform(*RADIUS_RANGE)))
    elif shape == "cylinder":
        obj = SubsurfaceObject(
            "cylinder", (0, 0, 0), eps,
            radius=float(rng.uniform(*RADIUS_RANGE)),
            length=float(rng.uniform(*CYLINDER_LENGTH_RANGE)),
            azimuth=azimuth,
        )
    else:
        edges = tuple(float(e) for e in rng.uniform(*BOX_EDGE_RANGE, size=3))
        obj = SubsurfaceObject("box", (0, 0, 0), eps, edges=edges, azimuth=azimuth)
    # keep the whole object inside the placement block
    half = obj.half_extent()
    lo = PLACEMENT_LO + half
    hi = np.maximum(PLACEMENT_HI - half, lo)
    obj.center = tuple(float(v) for v in rng.uniform(lo, hi))
    return obj


def sample_scene(rng, n_objects, soil_epsilon_r=4.0, eps_range=EPS_RANGE, seed=None):
    """Random scene with ``n_objects`` in {0, 1, 2, 3}."""
    if n_objects not in (0, 1, 2, 3):
        raise ConfigError(f"n_objects must be 0..3, got {n_objects}", key="scene.n_objects")
    if isinstance(rng, (int, np.integer)):
        seed = int(rng) if seed is None else seed
        rng = np.random.default_rng(rng)
    objs = [sample_object(rng, eps_range) for _ in range(n_objects)]
    return Scene(soil_epsilon_r=soil_epsilon_r, objects=objs, seed=seed)


def voxel_centers(grid_dims, voxel_size, origin=PLACEMENT_LO):
    """1-D centre coordinates (z, y, x) of a grid whose corner is ``origin``."""
    dz, dy, dx = _triple(voxel_size)
    nz, ny, nx = grid_dims
    ox, oy, oz = origin
    return (
        oz + (np.arange(nz) + 0.5) * dz,
        oy + (np.arange(ny) + 0.5) * dy,
        ox + (np.arange(nx) + 0.5) * dx,
    )


def rasterize_labels(scene, grid_dims, voxel_size, origin=PLACEMENT_LO):
    """Integer map: 0 for soil, i+1 where object i (last wins) covers the
    voxel centre."""
    labels = np.zeros(tuple(grid_dims), dtype=np.int16)
    zc, yc, xc = voxel_centers(grid_dims, voxel_size, origin)
    for i, obj in enumerate(scene.objects):
        lo, hi = obj.bounding_box()
        sl = []
        for centers, a, b in ((zc, lo[2], hi[2]), (yc, lo[1], hi[1]), (xc, lo[0], hi[0])):
            i0 = int(np.searchsorted(centers, a, side="left"))
            i1 = int(np.searchsorted(centers, b, side="right"))
            sl.append(slice(i0, i1))
        if any(s.stop <= s.start for s in sl):
            continue
        z, y, x = np.meshgrid(zc[sl[0]], yc[sl[1]], xc[sl[2]], indexing="ij")
        inside = obj.contains(np.stack([x, y, z], axis=-1))
        labels[sl[0], sl[1], sl[2]][inside] = i + 1
    return labels


def rasterize_permittivity(scene, grid_dims, voxel_size, origin=PLACEMENT_LO, background=None):
    """Relative permittivity on a (z, y, x) grid; background defaults to the
    soil value."""
    labels = rasterize_labels(scene, grid_dims, voxel_size, origin)
    return labels_to_permittivity(labels, scene, background)


def labels_to_permittivity(labels, scene, background=None):
    bg = scene.soil_epsilon_r if background is None else background
    lut = np.array([bg] + [o.epsilon_r for o in scene.objects], dtype=np.float64)
    return lut[labels]


def _triple(v):
    if np.ndim(v) == 0:
        return (float(v),) * 3
    v = tuple(float(a) for a in v)
    if len(v) != 3:
        raise ConfigError("voxel size must be a scalar or a (dz, dy, dx) triple", key="survey.voxel_size")
    return v
