"""Dataset assembly: {noisy C-scan, clean C-scan, permittivity map} triples.

Every scene draws its randomness from ``SeedSequence([master_seed, index])``
so the output is a pure function of (master seed, scene index) and does not
depend on how many worker processes share the work.
"""
from __future__ import annotations

import hashlib
import json
import multiprocessing as mp
import os
from functools import partial

import numpy as np

from ..volumes import atomic_write, read_volume, write_volume
from .clutter import ClutterParams, synthesize_clutter
from .preprocess import apply_range, mean_subtraction, normalize01, resize_trilinear, time_zero_correction
from .scene import PLACEMENT_HI, PLACEMENT_LO, Scene, rasterize_permittivity, sample_scene
from .survey import simulate_raw

MANIFEST_VERSION = 1
KINDS = ("noisy", "clean", "permittivity")


def scene_streams(master_seed, index):
    """Independent (scene, clutter) generators for one scene."""
    scene_ss, clutter_ss = np.random.SeedSequence([int(master_seed), int(index)]).spawn(2)
    return np.random.default_rng(scene_ss), int(clutter_ss.generate_state(1)[0])


def clutter_params(cfg, seed):
    c = cfg.clutter
    corr = tuple(c.correlation_lengths) if c.correlation_lengths is not None else None
    return ClutterParams.from_family(
        c.family, seed=seed, amplitude_ratio=c.amplitude_ratio,
        correlation_lengths=corr, background_epsilon_r=c.background_epsilon_r,
    )


def make_sample(index, cfg, master_seed):
    """Build one scene and its three volumes (plus intermediates)."""
    from ..evaluate import classify_group

    rng, clutter_seed = scene_streams(master_seed, index)
    counts = list(cfg.scene.object_counts)
    n_obj = int(counts[rng.integers(len(counts))])
    scene = sample_scene(rng, n_obj, soil_epsilon_r=cfg.scene.soil_epsilon_r,
                         eps_range=tuple(cfg.scene.eps_range))
    scene.soil_conductivity = cfg.scene.soil_conductivity
    scene.seed = [int(master_seed), int(index)]
    dims = tuple(cfg.grid.dims)

    raw = simulate_raw(scene, cfg.survey)
    aligned, shift = time_zero_correction(raw, return_shift=True)
    if cfg.grid.trim_time_tail and 0 < shift < raw.shape[0] - 1:
        aligned = aligned[: raw.shape[0] - shift]
    clean_raw = resize_trilinear(mean_subtraction(aligned), dims)
    params = clutter_params(cfg, clutter_seed)
    ref = float(np.sqrt(np.mean(clean_raw ** 2)))
    # an object-free scene still receives clutter; its scale is irrelevant
    # after normalisation, so any positive reference will do
    noise = synthesize_clutter(params, dims, ref if ref > 0 else 1.0)
    noisy_raw = clean_raw + noise
    noisy, value_range = normalize01(noisy_raw, return_range=True)
    clean = apply_range(clean_raw, value_range)

    background = params.background_epsilon_r or scene.soil_epsilon_r
    vox = cfg.survey.voxel_size
    extent = (PLACEMENT_HI - PLACEMENT_LO)[::-1]
    fine = tuple(int(round(e / vox)) for e in extent)
    fine_vox = tuple(e / n for e, n in zip(extent, fine))
    perm = resize_trilinear(rasterize_permittivity(scene, fine, fine_vox, background=background), dims)

    record = {
        "id": f"scene_{index:05d}",
        "index": int(index),
        "seed": [int(master_seed), int(index)],
        "n_objects": n_obj,
        "group": classify_group(scene),
        "scene": scene.to_dict(),
        "background_epsilon_r": float(background),
        "clutter": params.to_dict(),
        "value_range": list(value_range),
    }
    arrays = {"noisy": noisy, "clean": clean, "permittivity": perm,
              "clean_raw": clean_raw, "noise": noise, "noisy_raw": noisy_raw}
    return record, arrays


def _work(index, cfg, master_seed):
    rec, arrs = make_sample(index, cfg, master_seed)
    return rec, {k: arrs[k].astype(np.float32) for k in KINDS}


def generate_dataset(cfg, out_dir, n_scenes=None, master_seed=None, workers=1, index_offset=0):
    """Write volumes and ``manifest.json`` into ``out_dir``; return the manifest."""
    n = cfg.scene.n_scenes if n_scenes is None else n_scenes
    seed = cfg.scene.seed if master_seed is None else master_seed
    indices = list(range(index_offset, index_offset + n))
    fn = partial(_work, cfg=cfg, master_seed=seed)
    if workers > 1 and n > 1:
        with mp.get_context("fork").Pool(workers) as pool:
            results = pool.map(fn, indices, chunksize=1)
    else:
        results = [fn(i) for i in indices]
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for rec, arrs in results:
        files = {}
        for kind in KINDS:
            name = f"{rec['id']}_{kind}.gprv"
            write_volume(os.path.join(out_dir, name), arrs[kind])
            files[kind] = name
        rec["files"] = files
        records.append(rec)
    manifest = {
        "version": MANIFEST_VERSION,
        "master_seed": int(seed),
        "index_offset": int(index_offset),
        "grid_dims": list(cfg.grid.dims),
        "config": cfg.to_dict(),
        "fingerprint": dataset_fingerprint(cfg, seed, indices),
        "records": records,
    }
    atomic_write(os.path.join(out_dir, "manifest.json"),
                 json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8"))
    manifest["_root"] = os.path.abspath(out_dir)
    return manifest


def dataset_fingerprint(cfg, seed, indices):
    h = hashlib.sha256(cfg.dumps().encode("utf-8"))
    h.update(json.dumps([int(seed), list(map(int, indices))]).encode("utf-8"))
    return h.hexdigest()[:16]


def load_manifest(path):
    """Read a manifest; ``path`` may be the JSON file or its directory."""
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    manifest["_root"] = os.path.dirname(os.path.abspath(path))
    for rec in manifest.get("records", []):
        for kind in KINDS:
            if kind not in rec.get("files", {}):
                raise ValueError(f"record {rec.get('id')} lacks a {kind!r} volume")
    return manifest


def load_record_volume(manifest, record, kind):
    return read_volume(os.path.join(manifest["_root"], record["files"][kind]))


def load_volume_set(manifest, kind):
    return [load_record_volume(manifest, rec, kind) for rec in manifest["records"]]


def record_scene(record) -> Scene:
    return Scene.from_dict(record["scene"])
