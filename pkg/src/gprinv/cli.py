"""Command-line entry point: ``gprinv <command> [flags]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .errors import GprInvError

COMMANDS = ("gen", "train-denoiser", "train-inverter", "fine-tune", "infer", "eval", "gradcheck", "report")


def _load_config(path):
    from .config import RunConfig, parse_config, validate

    return parse_config(path) if path else validate(RunConfig())


def _with_seed(cfg, seed, section="train"):
    if seed is not None:
        sec = getattr(cfg, section)
        setattr(cfg, section, dataclasses.replace(sec, seed=seed))
    return cfg


def _load_checkpoints(paths):
    """Map network kind -> checkpoint for every ``--checkpoint`` given."""
    from .checkpoint import load_checkpoint

    out = {}
    for p in paths or []:
        ck = load_checkpoint(p)
        out[ck.config.get("kind")] = ck
    return out


def cmd_gen(args):
    from .forge.dataset import generate_dataset

    cfg = _load_config(args.config)
    manifest = generate_dataset(cfg, args.out, n_scenes=args.n_scenes, master_seed=args.seed,
                                workers=args.workers, index_offset=args.index_offset)
    print(f"wrote {len(manifest['records'])} scenes to {args.out} (fingerprint {manifest['fingerprint']})")


def _train(args, stage):
    from .checkpoint import save_checkpoint
    from .denoiser import Denoiser, DenoiserConfig
    from .forge.dataset import load_manifest
    from .inverter import Inverter, InverterConfig
    from .trainer import train_stage

    cfg = _with_seed(_load_config(args.config), args.seed)
    tcfg = cfg.train_config(stage)
    dtype = np.dtype(tcfg.dtype)
    if stage == "denoiser":
        net = Denoiser(DenoiserConfig(**dataclasses.asdict(cfg.model.denoiser)), seed=tcfg.seed, dtype=dtype)
    else:
        net = Inverter(InverterConfig(**dataclasses.asdict(cfg.model.inverter)), seed=tcfg.seed, dtype=dtype)
    manifest = load_manifest(args.manifest)
    val = load_manifest(args.val_manifest) if args.val_manifest else None
    result = train_stage(net, manifest, tcfg, stage=stage, val_manifest=val, log_path=args.log)
    save_checkpoint(args.out, result.best)
    print(f"{stage}: best val loss {result.best.best_val_loss!r} at epoch {result.best.epoch}; saved {args.out}")


def cmd_train_denoiser(args):
    _train(args, "denoiser")


def cmd_train_inverter(args):
    _train(args, "inverter")


def cmd_fine_tune(args):
    from .checkpoint import save_checkpoint
    from .forge.dataset import load_manifest
    from .trainer import fine_tune

    cfg = _with_seed(_load_config(args.config), args.seed, "fine_tune")
    cks = _load_checkpoints(args.checkpoint)
    if len(cks) != 1:
        raise GprInvError("fine-tune takes exactly one --checkpoint")
    (kind, ck), = cks.items()
    section = getattr(cfg.model, kind)
    expected = {"kind": kind, **dataclasses.asdict(section)}
    manifest = load_manifest(args.manifest)
    val = load_manifest(args.val_manifest) if args.val_manifest else None
    result = fine_tune(ck, manifest, cfg.fine_tune_config(kind), expected_arch=expected,
                       val_manifest=val, log_path=args.log)
    save_checkpoint(args.out, result.best)
    print(f"fine-tuned {kind}: best val loss {result.best.best_val_loss!r}; saved {args.out}")


def _pipeline(cks):
    for kind in ("denoiser", "inverter"):
        if kind not in cks:
            raise GprInvError(f"missing {kind} checkpoint (pass --checkpoint twice: denoiser and inverter)")
    return cks["denoiser"].build(np.float64), cks["inverter"].build(np.float64)


def cmd_infer(args):
    from .denoiser import denoiser_forward
    from .inverter import inverter_forward
    from .volumes import read_volume, write_volume

    den, inv = _pipeline(_load_checkpoints(args.checkpoint))
    volume = read_volume(args.input).astype(np.float64)
    inv.check_input(volume.shape)
    denoised = denoiser_forward(den, volume)
    pred = inverter_forward(inv, denoised)
    write_volume(args.out, pred.astype(np.float32))
    if args.denoised_out:
        write_volume(args.denoised_out, denoised.astype(np.float32))
    print(f"wrote permittivity map {pred.shape} to {args.out}")


def cmd_eval(args):
    from .config import RunConfig
    from .evaluate import evaluate_dataset
    from .forge.dataset import load_manifest

    mape_floor = _load_config(args.config).eval.mape_floor if args.config else RunConfig().eval.mape_floor
    den, inv = _pipeline(_load_checkpoints(args.checkpoint))
    report = evaluate_dataset(den, inv, load_manifest(args.manifest), mape_floor=mape_floor)
    os.makedirs(args.out, exist_ok=True)
    report.write(os.path.join(args.out, "metrics.csv"), os.path.join(args.out, "summary.json"))
    print(json.dumps(report.summary().get("overall", {}), indent=2))


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    ok, _ = run_suite(seed=args.seed or 0)
    if not ok:
        raise GprInvError("gradient check failed")


def cmd_report(args):
    from .evaluate import EvalReport, read_rows_csv
    from .volumes import atomic_write

    summary = EvalReport(read_rows_csv(args.input)).summary()
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out:
        atomic_write(args.out, text.encode("utf-8"))
    print(text)


def build_parser():
    p = argparse.ArgumentParser(prog="gprinv", description="Two-stage 3D GPR inversion: data, training, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", metavar="command")

    def common(sp, seed_help="override the seed"):
        sp.add_argument("--seed", type=int, default=None, help=seed_help)
        sp.add_argument("--workers", type=int, default=1, help="worker processes (gen only)")
        sp.add_argument("--deterministic", action="store_true",
                        help="bit-reproducible mode (every path is deterministic; accepted for all commands)")

    sp = sub.add_parser("gen", help="generate a synthetic dataset")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--n-scenes", type=int, default=None)
    sp.add_argument("--index-offset", type=int, default=0)
    common(sp, "master seed (default: scene.seed)")
    sp.set_defaults(fn=cmd_gen)

    for name, fn in (("train-denoiser", cmd_train_denoiser), ("train-inverter", cmd_train_inverter)):
        sp = sub.add_parser(name, help=f"pre-train the {name.split('-')[1]}")
        sp.add_argument("--config")
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--val-manifest")
        sp.add_argument("--out", required=True, help="checkpoint path")
        sp.add_argument("--log", help="per-epoch CSV log")
        common(sp, "training seed")
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("fine-tune", help="continue training a checkpoint on a new dataset")
    sp.add_argument("--config")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--val-manifest")
    sp.add_argument("--checkpoint", action="append", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")
    common(sp, "fine-tuning seed")
    sp.set_defaults(fn=cmd_fine_tune)

    sp = sub.add_parser("infer", help="denoise then invert one C-scan volume")
    sp.add_argument("--checkpoint", action="append", required=True, help="denoiser and inverter checkpoints")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--denoised-out")
    common(sp)
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("eval", help="evaluate the pipeline on a dataset")
    sp.add_argument("--config")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint", action="append", required=True)
    sp.add_argument("--out", required=True, help="directory for metrics.csv and summary.json")
    common(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    common(sp)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("report", help="re-aggregate a metrics CSV")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out")
    common(sp)
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "fn", None):
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.fn(args)
    except (GprInvError, OSError, ValueError, KeyError) as exc:
        print(f"gprinv {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
