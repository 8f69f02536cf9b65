"""Desk-scale end-to-end benchmark: data, three training steps, evaluation.

Small enough to run on one CPU core: 32^3 volumes, 48/8/8 scenes,
Denoiser(m=1, C1=4) and Inverter(n=3, C2=4).

Step 1 trains the denoiser (noisy -> clean). Step 2 trains the inverter
(clean -> permittivity). Step 3 fine-tunes the inverter, starting from the
step-2 weights with the gentler fine-tuning schedule, on the inputs it will
actually receive: denoiser outputs for the full pipeline, raw noisy C-scans
for the no-denoiser ablation.
"""
from __future__ import annotations

import dataclasses
import os
import time

import numpy as np

from .config import config_from_dict
from .denoiser import Denoiser, DenoiserConfig, denoiser_forward
from .evaluate import evaluate_dataset
from .forge.dataset import generate_dataset, load_manifest, load_volume_set
from .inverter import Inverter, InverterConfig
from .trainer import Adam, FineTuneConfig, TrainConfig, fit

N_TRAIN, N_VAL, N_TEST = 48, 8, 8

DESK_CONFIG = {
    "scene": {"object_counts": [1, 2], "seed": 0},
    # after time-zero correction the remaining ~3.5 ns is the two-way time
    # across the 0.26 m map depth at the soil wave speed, so time index and
    # depth index line up
    "survey": {"time_window": 4.8e-9, "time_samples": 128},
    "grid": {"dims": [32, 32, 32], "trim_time_tail": True},
    "model": {
        "denoiser": {"m": 1, "channels": 4, "reduction": 4},
        "inverter": {"n": 3, "channels": 4, "msfa": True},
    },
}


@dataclasses.dataclass
class DeskSchedule:
    """Epochs and learning rates for the three desk training steps.

    The default training schedule assumes thousands of scenes; here every
    step gets about 1/200 of the optimizer updates, so the inverter runs at
    three times the default learning rate (fine-tuning keeps the default
    0.6 ratio) and learns permittivity in units of ``target_span`` above the
    background.
    """

    denoiser_epochs: int = 60
    inverter_epochs: int = 60
    fine_tune_epochs: int = 60
    batch_size: int = 2
    denoiser_lr: float = 0.001
    inverter_lr: float = 0.003
    fine_tune_lr: float = 0.0018
    target_span: float = 10.0


def desk_config(**overrides):
    data = {k: dict(v) for k, v in DESK_CONFIG.items()}
    for k, v in overrides.items():
        data.setdefault(k, {}).update(v)
    return config_from_dict(data)


def build_datasets(root, cfg=None, master_seed=0, workers=1):
    """Generate (or reuse) the train/val/test manifests under ``root``."""
    cfg = cfg or desk_config()
    out = {}
    offset = 0
    for name, n in (("train", N_TRAIN), ("val", N_VAL), ("test", N_TEST)):
        path = os.path.join(root, name)
        if os.path.exists(os.path.join(path, "manifest.json")):
            out[name] = load_manifest(path)
        else:
            out[name] = generate_dataset(cfg, path, n_scenes=n, master_seed=master_seed,
                                         workers=workers, index_offset=offset)
        offset += n
    return out


def _apply(fn, volumes):
    return [np.asarray(fn(v), dtype=np.float32) for v in volumes]


def fold_output_affine(inv, scale, shift):
    """Make the inverter emit ``scale * out + shift`` by rewriting its last conv."""
    inv.head.weight.data *= scale
    inv.head.bias.data *= scale
    inv.head.bias.data += shift
    return inv


def run_pipeline(data, seed=0, use_denoiser=True, msfa=True, schedule=None, cfg=None, log=None):
    """Train and evaluate one model variant; returns a result dict."""
    cfg = cfg or desk_config()
    sch = schedule or DeskSchedule()
    t0 = time.time()
    tr, va, te = data["train"], data["val"], data["test"]
    noisy_tr, noisy_va = load_volume_set(tr, "noisy"), load_volume_set(va, "noisy")
    clean_tr, clean_va = load_volume_set(tr, "clean"), load_volume_set(va, "clean")
    background, span = cfg.scene.soil_epsilon_r, sch.target_span
    # objects reach 8..27 against a background of 4; scaled targets keep the
    # output layer's job within what a few thousand Adam steps can reach
    perm_tr = [(p - background) / span for p in load_volume_set(tr, "permittivity")]
    perm_va = [(p - background) / span for p in load_volume_set(va, "permittivity")]
    histories = {}

    def train(mode, **kw):
        cls = FineTuneConfig if mode == "fine_tune" else TrainConfig
        return cls(batch_size=sch.batch_size, seed=seed, **kw)

    den = None
    if use_denoiser:
        dc = cfg.model.denoiser
        den = Denoiser(DenoiserConfig(dc.m, dc.channels, dc.reduction), seed=seed, dtype=np.float32)
        den.identity_start()
        res = fit(den, noisy_tr, clean_tr, noisy_va, clean_va,
                  train("pre", lr0=sch.denoiser_lr, epochs=sch.denoiser_epochs, loss="mse"), on_epoch=log)
        histories["denoiser"] = res.history
        den = res.best.build(np.float32)

    ic = cfg.model.inverter
    inv = Inverter(InverterConfig(ic.n, ic.channels, msfa), seed=seed, dtype=np.float32)
    res = fit(inv, clean_tr, perm_tr, clean_va, perm_va,
              train("pre", lr0=sch.inverter_lr, epochs=sch.inverter_epochs, loss="mae"), on_epoch=log)
    histories["inverter"] = res.history
    inv = res.best.build(np.float32)

    if sch.fine_tune_epochs:
        if den is not None:
            in_tr = _apply(lambda v: denoiser_forward(den, v), noisy_tr)
            in_va = _apply(lambda v: denoiser_forward(den, v), noisy_va)
        else:
            in_tr, in_va = noisy_tr, noisy_va
        res = fit(inv, in_tr, perm_tr, in_va, perm_va,
                  train("fine_tune", lr0=sch.fine_tune_lr, epochs=sch.fine_tune_epochs, loss="mae"),
                  optimizer=Adam(), on_epoch=log)
        histories["fine_tune"] = res.history
        inv = res.best.build(np.float32)

    fold_output_affine(inv, span, background)
    report = evaluate_dataset(den, inv, te)
    return {
        "seed": seed,
        "use_denoiser": use_denoiser,
        "msfa": msfa,
        "summary": report.summary()["overall"],
        "rows": report.rows,
        "histories": histories,
        "seconds": time.time() - t0,
    }
