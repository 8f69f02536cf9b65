import json
import struct

import numpy as np
import pytest

from gprinv.checkpoint import (
    Checkpoint, decode_checkpoint, encode_checkpoint, from_network, load_checkpoint, save_checkpoint,
)
from gprinv.config import RunConfig, config_from_dict, loads, parse_config
from gprinv.denoiser import Denoiser, DenoiserConfig
from gprinv.errors import (
    ArchitectureMismatchError, BadMagicError, BadVersionError, CheckpointCorruptError, ConfigError,
    DimOverflowError, TruncatedFileError,
)
from gprinv.inverter import Inverter, InverterConfig
from gprinv.volumes import decode_volume, encode_volume, read_volume, write_volume


# ---------------------------------------------------------------- volumes

@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_volume_round_trip(tmp_path, rng, dtype):
    v = rng.normal(size=(8, 8, 8)).astype(dtype)
    write_volume(tmp_path / "v.gprv", v)
    back = read_volume(tmp_path / "v.gprv")
    assert back.dtype == dtype and back.tobytes() == v.tobytes()


def test_volume_header_layout(rng):
    v = rng.normal(size=(2, 3, 4)).astype(np.float32)
    buf = encode_volume(v)
    assert buf[:4] == bytes([0x47, 0x50, 0x52, 0x56])
    assert struct.unpack_from("<HBB3I", buf, 4) == (1, 0, 3, 2, 3, 4)
    assert len(buf) == 8 + 12 + v.size * 4
    assert buf[20:] == v.astype("<f4").tobytes()


def test_volume_errors(rng):
    buf = encode_volume(rng.normal(size=(4, 4)).astype(np.float32))
    with pytest.raises(BadMagicError):
        decode_volume(b"XXXX" + buf[4:])
    with pytest.raises(BadVersionError):
        decode_volume(buf[:4] + struct.pack("<H", 2) + buf[6:])
    with pytest.raises(TruncatedFileError):
        decode_volume(buf[:-1])
    with pytest.raises(TruncatedFileError):
        decode_volume(buf[:6])
    huge = b"GPRV" + struct.pack("<HBB", 1, 0, 3) + struct.pack("<3I", 2 ** 20, 2 ** 20, 2 ** 20)
    with pytest.raises(DimOverflowError):
        decode_volume(huge)


def test_failed_write_leaves_no_file(tmp_path):
    class Boom:
        def __array__(self, *a, **k):
            raise RuntimeError("boom")

    with pytest.raises(RuntimeError):
        write_volume(tmp_path / "x.gprv", Boom())
    assert list(tmp_path.iterdir()) == []


# ---------------------------------------------------------------- checkpoints

def _trained_inverter(rng):
    net = Inverter(InverterConfig(n=1, channels=2), seed=1, dtype=np.float32)
    net.forward(rng.uniform(size=(2, 1, 4, 4, 4)).astype(np.float32))  # populate BN statistics
    return net


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    net = _trained_inverter(rng)
    ck = from_network(net, lr=0.0005, epoch=3, best_val_loss=0.25, fingerprint="abc",
                      adam_m={"head.bias": np.ones(1, np.float32)}, adam_v={"head.bias": np.ones(1, np.float32)},
                      adam_t=7)
    save_checkpoint(tmp_path / "c.gprc", ck)
    back = load_checkpoint(tmp_path / "c.gprc")
    assert (back.lr, back.epoch, back.best_val_loss, back.fingerprint, back.adam_t) == (0.0005, 3, 0.25, "abc", 7)
    x = rng.uniform(size=(1, 1, 4, 4, 4)).astype(np.float32)
    a, b = net.eval().forward(x), back.build(np.float32).eval().forward(x)
    assert a.tobytes() == b.tobytes()
    assert np.array_equal(back.adam_m["head.bias"], np.ones(1))


def test_checkpoint_layout(rng):
    net = Denoiser(DenoiserConfig(m=0, channels=2, reduction=1), dtype=np.float32)
    buf = encode_checkpoint(from_network(net))
    assert buf[:4] == b"GPRC"
    version, hlen = struct.unpack_from("<HI", buf, 4)
    header = json.loads(buf[10:10 + hlen])
    assert version == 1 and header["config"]["kind"] == "denoiser"
    (count,) = struct.unpack_from("<I", buf, 10 + hlen)
    assert count == len(list(net.named_parameters()))


def test_checkpoint_corruption(rng):
    buf = encode_checkpoint(from_network(Denoiser(DenoiserConfig(m=1, channels=2, reduction=2))))
    with pytest.raises(CheckpointCorruptError):
        decode_checkpoint(buf[:-3])
    with pytest.raises(CheckpointCorruptError):
        decode_checkpoint(buf + b"\0")
    with pytest.raises(BadMagicError):
        decode_checkpoint(b"GPRV" + buf[4:])


def test_checkpoint_architecture_mismatch(rng):
    ck = from_network(Inverter(InverterConfig(n=1, channels=2)))
    ck.config = dict(ck.config, n=2)
    with pytest.raises(ArchitectureMismatchError):
        decode_checkpoint(encode_checkpoint(ck))


# ---------------------------------------------------------------- configuration

def test_empty_config_gives_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("")
    cfg = parse_config(p)
    assert cfg.survey.center_frequency == 1e9
    assert cfg.train.lr0 == 0.001 and cfg.train.decay_factor == 0.98 and cfg.train.epochs == 100
    assert cfg.fine_tune.lr0 == 0.0006 and cfg.fine_tune.decay_factor == 0.99
    assert cfg.scene.soil_epsilon_r == 4.0 and cfg.survey.time_window == 15e-9
    assert cfg.grid.dims == [128, 128, 128]
    assert cfg.to_dict() == RunConfig().to_dict()


def test_config_errors_name_key():
    with pytest.raises(ConfigError) as e:
        loads('{"train": {"lr0": -1}}')
    assert e.value.key == "train.lr0"
    with pytest.raises(ConfigError) as e:
        loads('{"train": {"bogus": 1}}')
    assert e.value.key == "train.bogus"
    with pytest.raises(ConfigError):
        loads("{not json")
    with pytest.raises(ConfigError) as e:
        loads('{"model": {"denoiser": {"channels": 8, "reduction": 3}}}')
    assert e.value.key == "model.denoiser.reduction"


def test_config_round_trip_fixed_point():
    cfg = loads('{"scene": {"n_scenes": 7}, "survey": {"time_samples": 64}, "clutter": {"family": 1}}')
    again = loads(cfg.dumps())
    assert again.dumps() == cfg.dumps()
    assert again.fingerprint() == cfg.fingerprint()


def test_fingerprint_stable_under_key_order():
    a = config_from_dict({"train": {"epochs": 3, "lr0": 0.01}, "grid": {"dims": [8, 8, 8]}})
    b = config_from_dict({"grid": {"dims": [8, 8, 8]}, "train": {"lr0": 0.01, "epochs": 3}})
    assert a.fingerprint() == b.fingerprint()
    c = config_from_dict({"grid": {"dims": [8, 8, 8]}, "train": {"lr0": 0.01, "epochs": 4}})
    assert c.fingerprint() != a.fingerprint()
