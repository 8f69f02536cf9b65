"""Run configuration: JSON document -> validated, defaulted dataclasses.

Top-level sections and their keys (all optional; defaults in brackets):

scene     n_scenes [4], object_counts [[1, 2]], soil_epsilon_r [4.0],
          soil_conductivity [0.0], eps_range [[8, 27]], seed [0]
survey    lines [12], points_per_line [10], scan_extent [[0.4, 0.4]],
          tx_rx_offset [0.10], antenna_height [0.02], center_frequency [1e9],
          time_window [15e-9], time_samples [256], source_delay [null = 1/f_c],
          voxel_size [0.0025], scatterers_per_object [2000],
          direct_coupling [true], domain [[1.0, 1.0, 0.26]]
clutter   family [0], amplitude_ratio [family], correlation_lengths [family],
          background_epsilon_r [family; null = soil]
grid      dims [[128, 128, 128]], trim_time_tail [false] (drop the samples
          time-zero correction pads before resampling the time axis)
model     denoiser {m [2], channels [8], reduction [4]},
          inverter {n [4], channels [8], msfa [true]}
train     lr0 [0.001], decay_factor [0.98], epochs [100], batch_size [2],
          split [0.9], seed [0], dtype ["float32"]
fine_tune lr0 [0.0006], decay_factor [0.99], epochs [100], batch_size [2],
          split [0.9], seed [0], dtype ["float32"]
eval      mape_floor [1e-6]
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .forge.survey import SurveyConfig


@dataclass
class SceneSection:
    n_scenes: int = 4
    object_counts: list = field(default_factory=lambda: [1, 2])
    soil_epsilon_r: float = 4.0
    soil_conductivity: float = 0.0
    eps_range: list = field(default_factory=lambda: [8.0, 27.0])
    seed: int = 0


@dataclass
class ClutterSection:
    family: int = 0
    amplitude_ratio: float | None = None
    correlation_lengths: list | None = None
    background_epsilon_r: float | None = None


@dataclass
class GridSection:
    dims: list = field(default_factory=lambda: [128, 128, 128])
    trim_time_tail: bool = False


@dataclass
class DenoiserSection:
    m: int = 2
    channels: int = 8
    reduction: int = 4


@dataclass
class InverterSection:
    n: int = 4
    channels: int = 8
    msfa: bool = True


@dataclass
class ModelSection:
    denoiser: DenoiserSection = field(default_factory=DenoiserSection)
    inverter: InverterSection = field(default_factory=InverterSection)


@dataclass
class TrainSection:
    lr0: float = 0.001
    decay_factor: float = 0.98
    epochs: int = 100
    batch_size: int = 2
    split: float = 0.9
    seed: int = 0
    dtype: str = "float32"


@dataclass
class FineTuneSection(TrainSection):
    lr0: float = 0.0006
    decay_factor: float = 0.99


@dataclass
class EvalSection:
    mape_floor: float = 1e-6


@dataclass
class RunConfig:
    scene: SceneSection = field(default_factory=SceneSection)
    survey: SurveyConfig = field(default_factory=SurveyConfig)
    clutter: ClutterSection = field(default_factory=ClutterSection)
    grid: GridSection = field(default_factory=GridSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    fine_tune: FineTuneSection = field(default_factory=FineTuneSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self):
        return _to_jsonable(dataclasses.asdict(self))

    def dumps(self):
        """Canonical serialisation (sorted keys) used for fingerprinting."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self):
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()[:16]

    def train_config(self, stage):
        from .trainer import TrainConfig

        return TrainConfig(**dataclasses.asdict(self.train), loss="mse" if stage == "denoiser" else "mae")

    def fine_tune_config(self, stage):
        from .trainer import FineTuneConfig

        return FineTuneConfig(**dataclasses.asdict(self.fine_tune), loss="mse" if stage == "denoiser" else "mae")


def _to_jsonable(v):
    if isinstance(v, dict):
        return {k: _to_jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_to_jsonable(x) for x in v]
    return v


def _build(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object", key=path or None)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            raise ConfigError(f"unknown configuration key {_join(path, key)!r}", key=_join(path, key))
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            continue
        value = data[name]
        proto = f.default_factory() if f.default_factory is not dataclasses.MISSING else None
        if proto is not None and dataclasses.is_dataclass(proto):
            value = _build(type(proto), value, _join(path, name))
        elif isinstance(value, list) and name in _TUPLE_KEYS:
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


_TUPLE_KEYS = {"domain", "scan_extent"}


def _join(path, key):
    return f"{path}.{key}" if path else key


def _require(cond, key, msg):
    if not cond:
        raise ConfigError(f"{key}: {msg}", key=key)


def validate(cfg: RunConfig) -> RunConfig:
    s = cfg.scene
    _require(isinstance(s.n_scenes, int) and s.n_scenes >= 0, "scene.n_scenes", "must be a non-negative integer")
    _require(s.object_counts and all(c in (0, 1, 2, 3) for c in s.object_counts),
             "scene.object_counts", "entries must be in 0..3")
    _require(s.soil_epsilon_r >= 1, "scene.soil_epsilon_r", "must be >= 1")
    _require(s.soil_conductivity >= 0, "scene.soil_conductivity", "must be >= 0")
    _require(len(s.eps_range) == 2 and 1 <= s.eps_range[0] <= s.eps_range[1],
             "scene.eps_range", "must be [lo, hi] with 1 <= lo <= hi")
    cfg.survey.validate()
    c = cfg.clutter
    from .forge.clutter import FAMILIES

    _require(c.family in FAMILIES, "clutter.family", f"must be one of {sorted(FAMILIES)}")
    _require(c.amplitude_ratio is None or c.amplitude_ratio >= 0, "clutter.amplitude_ratio", "must be >= 0")
    _require(c.correlation_lengths is None or (len(c.correlation_lengths) == 3 and min(c.correlation_lengths) >= 0),
             "clutter.correlation_lengths", "must be three non-negative numbers")
    _require(c.background_epsilon_r is None or c.background_epsilon_r >= 1,
             "clutter.background_epsilon_r", "must be >= 1")
    _require(len(cfg.grid.dims) == 3 and all(isinstance(d, int) and d >= 2 for d in cfg.grid.dims),
             "grid.dims", "must be three integers >= 2")
    _require(isinstance(cfg.grid.trim_time_tail, bool), "grid.trim_time_tail", "must be true or false")
    d = cfg.model.denoiser
    _require(d.m >= 0, "model.denoiser.m", "must be >= 0")
    _require(d.channels >= 1, "model.denoiser.channels", "must be >= 1")
    _require(d.reduction >= 1 and d.channels % d.reduction == 0, "model.denoiser.reduction",
             "must divide model.denoiser.channels")
    i = cfg.model.inverter
    _require(i.n >= 1, "model.inverter.n", "must be >= 1")
    _require(i.channels >= 1, "model.inverter.channels", "must be >= 1")
    for name in ("train", "fine_tune"):
        t = getattr(cfg, name)
        _require(t.lr0 > 0, f"{name}.lr0", "must be > 0")
        _require(0 < t.decay_factor <= 1, f"{name}.decay_factor", "must lie in (0, 1]")
        _require(isinstance(t.epochs, int) and t.epochs >= 0, f"{name}.epochs", "must be a non-negative integer")
        _require(isinstance(t.batch_size, int) and t.batch_size >= 1, f"{name}.batch_size", "must be >= 1")
        _require(0 < t.split < 1, f"{name}.split", "must lie in (0, 1)")
        _require(t.dtype in ("float32", "float64"), f"{name}.dtype", "must be float32 or float64")
    _require(cfg.eval.mape_floor > 0, "eval.mape_floor", "must be > 0")
    return cfg


def config_from_dict(data) -> RunConfig:
    return validate(_build(RunConfig, data, ""))


def loads(text) -> RunConfig:
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    return config_from_dict(data)


def parse_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"configuration is not valid UTF-8: {exc}") from exc
    return loads(text)
