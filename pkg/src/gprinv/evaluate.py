"""Per-sample evaluation of the two-stage pipeline and grouped reporting."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .forge.scene import Scene
from .metrics import MAPE_FLOOR, denoise_metrics, inversion_metrics, localization_iou
from .volumes import atomic_write

GROUPS = ("i", "ii", "iii")
DENOISE_KEYS = ("SSIM", "PSNR", "MAE", "MRE")
INVERT_KEYS = ("SSIM", "MSE", "MAE", "MAPE")
CSV_COLUMNS = ["id", "group"] + [f"denoise_{k}" for k in DENOISE_KEYS] + [f"inversion_{k}" for k in INVERT_KEYS]
# localisation IoU rides along after the eight metrics; blank when undefined
EXTRA_COLUMNS = ["IoU"]


def classify_group(scene: Scene) -> str:
    """'i' one object, 'ii' two objects with disjoint bounding boxes, 'iii'
    two objects whose bounding boxes intersect, 'other' otherwise."""
    objs = scene.objects
    if len(objs) == 1:
        return "i"
    if len(objs) != 2:
        return "other"
    (lo1, hi1), (lo2, hi2) = objs[0].bounding_box(), objs[1].bounding_box()
    overlap = np.all(lo1 <= hi2) and np.all(lo2 <= hi1)
    return "iii" if overlap else "ii"


def iou_threshold(record):
    """Midway between the map background and the weakest object permittivity."""
    bg = record["background_epsilon_r"]
    eps = [o["epsilon_r"] for o in record["scene"]["objects"]]
    return None if not eps else 0.5 * (bg + min(eps))


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def summary(self):
        return aggregate(self.rows)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS + EXTRA_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def write(self, csv_path, json_path):
        atomic_write(csv_path, self.to_csv().encode("utf-8"))
        atomic_write(json_path, json.dumps(self.summary(), indent=2, sort_keys=True).encode("utf-8"))


def _mean(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    return float(math.fsum(vals) / len(vals)) if all(math.isfinite(v) for v in vals) else math.inf


def aggregate(rows):
    """Mean of every metric per group (i, ii, iii) and overall, folded in row order."""
    buckets = {g: [r for r in rows if r["group"] == g] for g in GROUPS}
    buckets["overall"] = list(rows)
    out = {}
    for name, rs in buckets.items():
        if not rs:
            continue
        out[name] = {
            "count": len(rs),
            "denoiser": {k: _mean([r[f"denoise_{k}"] for r in rs]) for k in DENOISE_KEYS},
            "inverter": {k: _mean([r[f"inversion_{k}"] for r in rs]) for k in INVERT_KEYS},
        }
        ious = [r.get("IoU") for r in rs if r.get("IoU") is not None]
        if ious:
            out[name]["inverter"]["IoU"] = _mean(ious)
    return out


def read_rows_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = {"id": r["id"], "group": r["group"]}
            for k in CSV_COLUMNS[2:]:
                row[k] = float(r[k])
            iou = r.get("IoU")
            row["IoU"] = float(iou) if iou else None
            rows.append(row)
    return rows


def _as_callable(model, kind):
    if model is None:
        return lambda v: v
    if callable(model) and not hasattr(model, "named_parameters"):
        return model
    if kind == "denoiser":
        from .denoiser import denoiser_forward

        return lambda v: denoiser_forward(model, v)
    from .inverter import inverter_forward

    return lambda v: inverter_forward(model, v)


def evaluate_dataset(denoiser, inverter, manifest, mape_floor=MAPE_FLOOR):
    """Run noisy C-scan -> denoiser -> inverter for every record.

    ``denoiser`` may be None (the inverter then sees the noisy input
    directly); either model may also be a plain callable on volumes.
    """
    from .forge.dataset import load_record_volume

    den = _as_callable(denoiser, "denoiser")
    inv = _as_callable(inverter, "inverter")
    report = EvalReport()
    for rec in manifest["records"]:
        noisy = load_record_volume(manifest, rec, "noisy").astype(np.float64)
        clean = load_record_volume(manifest, rec, "clean").astype(np.float64)
        truth = load_record_volume(manifest, rec, "permittivity").astype(np.float64)
        denoised = np.asarray(den(noisy), dtype=np.float64)
        pred = np.asarray(inv(denoised), dtype=np.float64)
        row = {"id": rec["id"], "group": rec["group"]}
        for k, v in denoise_metrics(clean, denoised).items():
            row[f"denoise_{k}"] = v
        for k, v in inversion_metrics(truth, pred, mape_floor).items():
            row[f"inversion_{k}"] = v
        thr = iou_threshold(rec)
        row["IoU"] = None if thr is None else localization_iou(truth, pred, thr)
        report.rows.append(row)
    return report
