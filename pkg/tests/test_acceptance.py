"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single ``[acceptance] criterion N ...: PASS|FAIL`` line
before asserting; the line bypasses output capture. Criteria 7 and 8 train the desk-scale
benchmark and are marked slow.
"""
import time

import numpy as np
import pytest

import oracles
from gprinv.checkpoint import decode_checkpoint, encode_checkpoint, from_network
from gprinv.config import config_from_dict
from gprinv.denoiser import Denoiser, DenoiserConfig
from gprinv.forge.dataset import generate_dataset, load_record_volume
from gprinv.forge.scene import PLACEMENT_HI, PLACEMENT_LO, Scene, SubsurfaceObject
from gprinv.forge.survey import SurveyConfig, forward_model, forward_points, reflection_coefficient, wave_speed
from gprinv.gradcheck import run_suite
from gprinv.inverter import Inverter, InverterConfig, receptive_field
from gprinv.layers import count_parameters
from gprinv.metrics import compute_mae, compute_mape, compute_mre, compute_mse, compute_psnr, compute_ssim
from gprinv import ops
from gprinv.trainer import TrainConfig, fit, loss_mae, loss_mse


_capsys = None


@pytest.fixture(autouse=True)
def _uncaptured(capsys):
    # the verdict lines should reach the terminal even without -s
    global _capsys
    _capsys = capsys
    yield
    _capsys = None


def report(n, name, ok, detail=""):
    line = f"[acceptance] criterion {n} {name}: {'PASS' if ok else 'FAIL'}"
    line += f" ({detail})" if detail else ""
    with _capsys.disabled():
        print("\n" + line, flush=True)
    assert ok, f"criterion {n} failed: {detail}"


def test_criterion_1_parameter_anchor():
    inv = count_parameters(Inverter(InverterConfig(n=4, channels=8, msfa=True)))
    den = count_parameters(Denoiser(DenoiserConfig(m=2, channels=8, reduction=4)))
    rel = (inv - 3_208_642) / 3_208_642
    ok = abs(rel) <= 0.01 and 10_000 <= den <= 16_000
    report(1, "parameter-count anchor", ok, f"inverter {inv} ({rel:+.2%}), denoiser {den}")


def test_criterion_2_gradient_suite():
    t = time.time()
    ok, results = run_suite(seed=0, out=None)
    worst_op = max(r.max_rel_error for r, tol, _ in results if tol <= 1e-4)
    worst_net = max(r.max_rel_error for r, tol, _ in results if tol > 1e-4)
    ops_ok = all(p for r, tol, p in results if tol <= 1e-4) and worst_op < 1e-4
    net_ok = all(p for r, tol, p in results if tol > 1e-4) and worst_net < 1e-3
    report(2, "gradient suite", ok and ops_ok and net_ok,
           f"ops max {worst_op:.1e}, end-to-end max {worst_net:.1e}, {time.time() - t:.0f} s")


def _unbatch(a):
    return a[0]


def test_criterion_3_oracle_equivalence():
    rng = np.random.default_rng(2024)
    worst = {}

    def track(name, a, b):
        worst[name] = max(worst.get(name, 0.0), float(np.max(np.abs(np.asarray(a) - np.asarray(b)))))

    for _ in range(100):
        c_in, c_out = rng.integers(1, 3, size=2)
        k = int(rng.choice([1, 2, 3]))
        s = int(rng.choice([1, 2]))
        p = int(rng.integers(0, k))
        n_out = int(rng.integers(1, 4))
        dims = [(n_out - 1) * s + k - 2 * p for _ in range(3)]
        if min(dims) < 1:
            dims = [(n_out - 1) * s + k for _ in range(3)]
            p = 0
        x = rng.normal(size=(1, c_in, *dims))
        w = rng.normal(size=(c_out, c_in, k, k, k))
        b = rng.normal(size=c_out)
        out, _ = ops.conv3d_forward(x, w, b, s, p)
        track("conv3d", _unbatch(out), oracles.conv3d_loops(x[0], w, b, s, p))

        kt, st = int(rng.choice([1, 2, 3])), int(rng.choice([1, 2]))
        xt = rng.normal(size=(1, c_in, *rng.integers(1, 4, size=3)))
        wt = rng.normal(size=(c_out, c_in, kt, kt, kt))
        out, _ = ops.transposed_conv3d_forward(xt, wt, b, stride=st)
        track("transposed_conv3d", _unbatch(out), oracles.tconv3d_loops(xt[0], wt, b, st))

        xp = rng.normal(size=(1, c_in, *(2 * rng.integers(1, 4, size=3))))
        out, _ = ops.max_pool3d_forward(xp)
        track("max_pool3d", _unbatch(out), oracles.maxpool_loops(xp[0]))
        out, _ = ops.global_avg_pool_forward(xp)
        track("global_avg_pool", np.ravel(out), oracles.gap_loops(xp[0]))

        fin, fout = rng.integers(1, 8, size=2)
        xf, wf, bf = rng.normal(size=fin), rng.normal(size=(fout, fin)), rng.normal(size=fout)
        out, _ = ops.fully_connected_forward(xf, wf, bf)
        track("fully_connected", out, oracles.fc_loops(xf, wf, bf))

        shape = tuple(rng.integers(2, 5, size=3))
        t, q = rng.uniform(0.5, 2, size=shape), rng.uniform(0.5, 2, size=shape)
        track("loss_mse", loss_mse(q[None, None], t[None, None])[0], oracles.mse_loops(t, q))
        track("loss_mae", loss_mae(q[None, None], t[None, None])[0], oracles.mae_loops(t, q))
        track("ssim", compute_ssim(t, q), oracles.ssim_loops(t, q))
        track("mse", compute_mse(t, q), oracles.mse_loops(t, q))
        track("psnr", compute_psnr(t, q), oracles.psnr_loops(t, q))
        track("mae", compute_mae(t, q), oracles.mae_loops(t, q))
        track("mre", compute_mre(t, q), oracles.mre_loops(t, q))
        track("mape", compute_mape(t, q), oracles.mape_loops(t, q))
    bad = {k: v for k, v in worst.items() if not v < 1e-9}
    report(3, "oracle equivalence", not bad and len(worst) == 13,
           f"max |diff| {max(worst.values()):.1e} over {len(worst)} ops" + (f"; failing {bad}" if bad else ""))


def test_criterion_4_forward_physics():
    s = SurveyConfig(time_window=8e-9, time_samples=512)
    tx, rx = s.antenna_positions()
    rng = np.random.default_rng(4)
    v = wave_speed(4.0)
    misses = []
    for _ in range(20):
        p = rng.uniform(PLACEMENT_LO, PLACEMENT_HI)
        traces = forward_points([p], [1.0], s, soil_eps=4.0).reshape(s.time_samples, -1)
        r = np.linalg.norm(tx - p, axis=1) + np.linalg.norm(rx - p, axis=1)
        apex = int(np.argmin(r))
        misses.append(abs(int(np.argmax(np.abs(traces[:, apex]))) - (s.t0 + r[apex] / v) / s.dt))
    gamma = reflection_coefficient(4.0, 16.0)
    obj = SubsurfaceObject("sphere", (0.0, 0.0, 0.1), 4.0, radius=0.04)
    silent = not forward_model(Scene(soil_epsilon_r=4.0, objects=[obj]), SurveyConfig(time_samples=128)).any()
    ok = max(misses) <= 1 and gamma == -1 / 3 and silent
    report(4, "forward-model physics", ok,
           f"apex miss max {max(misses):.2f} samples, gamma {float(gamma)!r}, zero-contrast silent {silent}")


def test_criterion_5_receptive_field():
    rf = receptive_field([3, 3, 3], [1, 1, 1])
    report(5, "receptive-field anchor", list(rf) == [3, 5, 7], f"{list(rf)}")


def test_criterion_6_architecture_identities():
    rng = np.random.default_rng(6)
    den = Denoiser(DenoiserConfig(m=2, channels=8, reduction=4), seed=0)
    den.tail.weight.data[...] = 0
    den.tail.bias.data[...] = 0
    y = rng.normal(size=(2, 1, 8, 8, 8))
    identity = np.array_equal(den.forward(y), np.maximum(y, 0))
    shapes = []
    for d in (32, 64):
        inv = Inverter(InverterConfig(n=4, channels=2, msfa=True), seed=0)
        shapes.append(inv.forward(rng.uniform(size=(1, 1, d, d, d))).shape == (1, 1, d, d, d))
    on = count_parameters(Inverter(InverterConfig(n=4, channels=8, msfa=True)))
    off = count_parameters(Inverter(InverterConfig(n=4, channels=8, msfa=False)))
    ok = identity and all(shapes) and off < on
    report(6, "architecture identities", ok,
           f"zero-tail identity {identity}, 32^3/64^3 shapes {shapes}, params msfa on {on} > off {off}")


def test_criterion_9_determinism_and_persistence(tmp_path):
    cfg = config_from_dict({"grid": {"dims": [8, 8, 8]}, "survey": {"time_samples": 64, "time_window": 6e-9},
                            "scene": {"seed": 11}})
    a = generate_dataset(cfg, str(tmp_path / "a"), n_scenes=4, workers=1)
    b = generate_dataset(cfg, str(tmp_path / "b"), n_scenes=4, workers=4)
    same_data = all(
        np.array_equal(load_record_volume(a, ra, k), load_record_volume(b, rb, k))
        for ra, rb in zip(a["records"], b["records"]) for k in ("noisy", "clean", "permittivity"))
    noisy = [load_record_volume(a, r, "noisy") for r in a["records"]]
    clean = [load_record_volume(a, r, "clean") for r in a["records"]]
    curves = []
    for _ in range(2):
        net = Denoiser(DenoiserConfig(1, 2, 2), seed=3, dtype=np.float32)
        curves.append(fit(net, noisy[:3], clean[:3], noisy[3:], clean[3:],
                          TrainConfig(epochs=3, seed=3)).history)
    same_curves = curves[0] == curves[1]
    inv = Inverter(InverterConfig(2, 2, True), seed=1, dtype=np.float32)
    fit(inv, clean[:3], noisy[:3], clean[3:], noisy[3:], TrainConfig(epochs=1, loss="mae"))
    inv.eval()
    x = np.stack(clean)[:, None].astype(np.float32)
    before = inv.forward(x)
    after = decode_checkpoint(encode_checkpoint(from_network(inv))).build(np.float32)
    after.eval()
    same_out = np.array_equal(before, after.forward(x))
    report(9, "determinism and persistence", same_data and same_curves and same_out,
           f"datasets workers 1 vs 4 identical {same_data}, loss curves identical {same_curves}, "
           f"checkpoint forward bit-exact {same_out}")


# ------------------------------------------------------------ desk benchmark

@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    from gprinv.desk import build_datasets

    t = time.time()
    data = build_datasets(str(tmp_path_factory.mktemp("desk")))
    return {"data": data, "gen_seconds": time.time() - t, "runs": {}}


def _desk_run(desk, seed, full):
    from gprinv.desk import run_pipeline

    key = (seed, full)
    if key not in desk["runs"]:
        desk["runs"][key] = run_pipeline(desk["data"], seed=seed, use_denoiser=full, msfa=full)
    return desk["runs"][key]


@pytest.mark.slow
def test_criterion_7_desk_end_to_end(desk):
    res = _desk_run(desk, 0, True)
    s = res["summary"]
    ssim, iou = s["denoiser"]["SSIM"], s["inverter"]["IoU"]
    minutes = (desk["gen_seconds"] + res["seconds"]) / 60
    ok = ssim >= 0.90 and iou >= 0.3 and minutes <= 60
    report(7, "desk-scale end-to-end", ok,
           f"test SSIM {ssim:.4f} (>= 0.90), IoU {iou:.3f} (>= 0.3), {minutes:.1f} min (<= 60)")


@pytest.mark.slow
def test_criterion_8_ablation_ordering(desk):
    t = time.time()
    full, base = [], []
    for seed in (0, 1, 2):
        full.append(_desk_run(desk, seed, True)["summary"]["inverter"]["MAE"])
        base.append(_desk_run(desk, seed, False)["summary"]["inverter"]["MAE"])
    seconds = sum(r["seconds"] for r in desk["runs"].values())
    c7 = desk["runs"][(0, True)]["seconds"]
    ok = np.mean(full) < np.mean(base) and seconds <= 3 * 60 * 60
    report(8, "ablation ordering", ok,
           f"mean inversion MAE full {np.mean(full):.4f} vs baseline without denoiser or MSFA {np.mean(base):.4f}; "
           f"per seed full {[round(v, 4) for v in full]}, baseline {[round(v, 4) for v in base]}; "
           f"{seconds / 60:.1f} min total, {seconds / max(c7, 1e-9):.1f}x criterion 7 (t={time.time() - t:.0f} s)")
