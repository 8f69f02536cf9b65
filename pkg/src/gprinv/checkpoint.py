"""Checkpoint container and its binary file format ("GPRC").

Layout, all little-endian::

    magic        4 bytes b"GPRC"
    version      u16 = 1
    header_len   u32, then that many bytes of UTF-8 JSON
    entry_count  u32
    per entry:   name_len u16, UTF-8 name, ndim u8, dims u32 each,
                 float32 payload

The JSON header carries the architecture config, epoch, learning rate,
loss history, best validation loss, dataset fingerprint and Adam step.
Entry names are prefixed ``param/``, ``buffer/``, ``adam_m/``, ``adam_v/``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ArchitectureMismatchError, BadMagicError, BadVersionError, CheckpointCorruptError
from .volumes import atomic_write

MAGIC = b"GPRC"
VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    params: dict
    buffers: dict = field(default_factory=dict)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    adam_t: int = 0
    lr: float = 0.0
    epoch: int = 0
    best_val_loss: float | None = None
    history: list = field(default_factory=list)
    fingerprint: str = ""

    def build(self, dtype=np.float32):
        """Instantiate the network described by ``config`` with these weights."""
        net = build_network(self.config, dtype=dtype)
        net.load_state_dict(self.params, self.buffers)
        return net


def build_network(config: dict, seed=0, dtype=np.float32):
    from .denoiser import Denoiser, DenoiserConfig
    from .inverter import Inverter, InverterConfig

    cfg = dict(config)
    kind = cfg.pop("kind", None)
    if kind == "denoiser":
        return Denoiser(DenoiserConfig(**cfg), seed=seed, dtype=dtype)
    if kind == "inverter":
        return Inverter(InverterConfig(**cfg), seed=seed, dtype=dtype)
    raise ArchitectureMismatchError(f"unknown network kind {kind!r}")


def from_network(net, **fields) -> Checkpoint:
    return Checkpoint(config=net.config.to_dict(), params=net.state_dict(), buffers=net.buffer_dict(), **fields)


def check_architecture(ckpt: Checkpoint, expected: dict):
    """Raise if ``expected`` (a config dict) disagrees with the checkpoint."""
    for key, value in expected.items():
        if ckpt.config.get(key) != value:
            raise ArchitectureMismatchError(
                f"architecture mismatch on {key!r}: checkpoint has {ckpt.config.get(key)!r}, expected {value!r}"
            )


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = {
        "config": ckpt.config,
        "adam_t": ckpt.adam_t,
        "lr": ckpt.lr,
        "epoch": ckpt.epoch,
        "best_val_loss": ckpt.best_val_loss,
        "history": ckpt.history,
        "fingerprint": ckpt.fingerprint,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    entries = []
    for prefix, table in (("param/", ckpt.params), ("buffer/", ckpt.buffers),
                          ("adam_m/", ckpt.adam_m), ("adam_v/", ckpt.adam_v)):
        for name, arr in table.items():
            entries.append((prefix + name, np.asarray(arr)))
    names = [n for n, _ in entries]
    if len(set(names)) != len(names):
        raise CheckpointCorruptError("duplicate entry names")
    out = [MAGIC, struct.pack("<HI", VERSION, len(hbytes)), hbytes, struct.pack("<I", len(entries))]
    for name, arr in entries:
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointCorruptError(f"checkpoint truncated at byte {pos} (needed {n} more)")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad checkpoint magic {buf[:4]!r}")
    take(4)
    version, hlen = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise BadVersionError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"checkpoint header is not valid JSON: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    tables = {"param": {}, "buffer": {}, "adam_m": {}, "adam_v": {}}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        prefix, _, key = name.partition("/")
        if prefix not in tables:
            raise CheckpointCorruptError(f"unknown entry prefix in {name!r}")
        if key in tables[prefix]:
            raise CheckpointCorruptError(f"duplicate entry {name!r}")
        tables[prefix][key] = arr
    if pos != len(buf):
        raise CheckpointCorruptError(f"{len(buf) - pos} trailing bytes after the last entry")
    ckpt = Checkpoint(
        config=header["config"],
        params=tables["param"],
        buffers=tables["buffer"],
        adam_m=tables["adam_m"],
        adam_v=tables["adam_v"],
        adam_t=header.get("adam_t", 0),
        lr=header.get("lr", 0.0),
        epoch=header.get("epoch", 0),
        best_val_loss=header.get("best_val_loss"),
        history=header.get("history", []),
        fingerprint=header.get("fingerprint", ""),
    )
    _check_shapes(ckpt)
    return ckpt


def _check_shapes(ckpt: Checkpoint):
    """Entry shapes must match the architecture declared in the header."""
    try:
        ref = build_network(ckpt.config, dtype=np.float32)
    except (TypeError, ValueError) as exc:
        raise CheckpointCorruptError(f"header architecture is invalid: {exc}") from exc
    own = {name: p.shape for name, p in ref.named_parameters()}
    if set(own) != set(ckpt.params):
        raise ArchitectureMismatchError("checkpoint parameter names do not match the declared architecture")
    for name, shape in own.items():
        if ckpt.params[name].shape != shape:
            raise ArchitectureMismatchError(
                f"{name}: stored shape {ckpt.params[name].shape} != declared architecture shape {shape}"
            )


def save_checkpoint(path, ckpt: Checkpoint):
    atomic_write(path, encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
