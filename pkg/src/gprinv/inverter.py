"""3D U-shaped permittivity inversion network with multi-scale aggregation."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .errors import ConfigError, DivisibilityError, ShapeError
from .layers import Activation, BatchNorm3d, Conv3d, MaxPool3d, Module, Network, TransposedConv3d


def receptive_field(kernels, strides, r0=1):
    """Receptive field after each layer of a stack.

    r_f = r_{f-1} + (k_f - 1) * prod(s_1 .. s_{f-1}).
    """
    kernels, strides = list(kernels), list(strides)
    if not kernels or len(kernels) != len(strides):
        raise ValueError("kernels and strides must be non-empty and of equal length")
    if min(kernels) < 1 or min(strides) < 1 or r0 < 1:
        raise ValueError("kernel sizes, strides and r0 must be >= 1")
    out, r, jump = [], r0, 1
    for k, s in zip(kernels, strides):
        r = r + (k - 1) * jump
        jump *= s
        out.append(r)
    return out


@dataclass(frozen=True)
class InverterConfig:
    n: int = 4
    channels: int = 8
    msfa: bool = True

    def validate(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1", key="n")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1", key="channels")
        return self

    def to_dict(self):
        return {"kind": "inverter", **asdict(self)}


class MSFA(Module):
    """Three conv-BN-ReLU stages; output is their channel concat (or the last
    stage alone when aggregation is disabled)."""

    def __init__(self, c_in, width, enabled=True, rng=None, dtype=np.float64):
        super().__init__()
        self.enabled = enabled
        self.width = width
        self.stages = []
        cin = c_in
        for i in range(3):
            conv = self.add_child(f"conv{i}", Conv3d(cin, width, rng=rng, dtype=dtype))
            bn = self.add_child(f"bn{i}", BatchNorm3d(width, dtype=dtype))
            self.stages.append((conv, bn, Activation("relu")))
            cin = width

    @property
    def out_channels(self):
        return 3 * self.width if self.enabled else self.width

    def forward(self, x):
        feats = []
        for conv, bn, act in self.stages:
            x = act(bn(conv(x)))
            feats.append(x)
        if not self.enabled:
            return feats[-1]
        out, self._cat = ops.concat_channels_forward(feats)
        return out

    def backward(self, g, need_input_grad=True):
        if self.enabled:
            parts = ops.concat_channels_backward(g, self._cat)
        else:
            parts = [None, None, g]
        d = None
        for i in (2, 1, 0):
            conv, bn, act = self.stages[i]
            if parts[i] is not None:
                d = parts[i] if d is None else d + parts[i]
            d = conv.backward(bn.backward(act.backward(d)), need_input_grad=need_input_grad or i > 0)
        return d


class UpBlock(Module):
    """Transposed conv (k=2, s=2) -> BN -> ReLU."""

    def __init__(self, c_in, c_out, rng=None, dtype=np.float64):
        super().__init__()
        self.tconv = TransposedConv3d(c_in, c_out, rng=rng, dtype=dtype)
        self.bn = BatchNorm3d(c_out, dtype=dtype)
        self.act = Activation("relu")

    def forward(self, x):
        return self.act(self.bn(self.tconv(x)))

    def backward(self, g):
        return self.tconv.backward(self.bn.backward(self.act.backward(g)))


class Inverter(Network):
    """Encoder of n MSFA+pool blocks, an MSFA bridge, n decoder blocks with
    skip concatenation, and a linear single-channel 3x3x3 head."""

    kind = "inverter"

    def __init__(self, config: InverterConfig = InverterConfig(), seed=0, dtype=np.float64):
        config.validate()
        super().__init__(config)
        rng = np.random.default_rng(seed)
        n, c2, on = config.n, config.channels, config.msfa
        self.encoders, self.pools, self.ups, self.decoders = [], [], [], []
        cin = 1
        skip_ch = []
        for lvl in range(n):
            blk = self.add_child(f"enc{lvl}", MSFA(cin, c2 * 2 ** lvl, on, rng, dtype))
            self.encoders.append(blk)
            self.pools.append(MaxPool3d())
            skip_ch.append(blk.out_channels)
            cin = blk.out_channels
        self.bridge = MSFA(cin, c2 * 2 ** n, on, rng, dtype)
        cin = self.bridge.out_channels
        for lvl in reversed(range(n)):
            width = c2 * 2 ** lvl
            up = self.add_child(f"up{lvl}", UpBlock(cin, width, rng, dtype))
            dec = self.add_child(f"dec{lvl}", MSFA(width + skip_ch[lvl], width, on, rng, dtype))
            self.ups.append(up)
            self.decoders.append(dec)
            cin = dec.out_channels
        self.head = Conv3d(cin, 1, rng=rng, dtype=dtype)

    def check_input(self, shape):
        factor = 2 ** self.config.n
        for e, axis in zip(shape[-3:], ("D", "H", "W")):
            if e % factor:
                raise DivisibilityError(
                    f"axis {axis}: extent {e} is not divisible by 2^n = {factor}", axis=axis
                )

    def forward(self, x):
        """``x`` is (N, 1, D, H, W); returns (N, 1, D, H, W)."""
        self.check_input(x.shape)
        skips = []
        for enc, pool in zip(self.encoders, self.pools):
            e = enc(x)
            skips.append(e)
            x = pool(e)
        x = self.bridge(x)
        self._cats = []
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            u = up(x)
            cat, c = ops.concat_channels_forward([u, skip])
            self._cats.append(c)
            x = dec(cat)
        return self.head(x)

    def backward(self, g, need_input_grad=False):
        d = self.head.backward(g)
        d_skips = []
        for up, dec, c in zip(reversed(self.ups), reversed(self.decoders), reversed(self._cats)):
            d_u, d_skip = ops.concat_channels_backward(dec.backward(d), c)
            d_skips.append(d_skip)  # finest level first
            d = up.backward(d_u)
        d = self.bridge.backward(d)
        for lvl in reversed(range(len(self.encoders))):
            d = self.pools[lvl].backward(d) + d_skips[lvl]
            d = self.encoders[lvl].backward(d, need_input_grad=need_input_grad or lvl > 0)
        self._cats = None
        return d


def inverter_forward(net: Inverter, volume):
    """Invert one (D, H, W) C-scan to a permittivity map in inference mode."""
    vol = np.asarray(volume)
    if vol.ndim != 3:
        raise ShapeError(f"expected a (D, H, W) volume, got shape {vol.shape}")
    net.check_input(vol.shape)
    was_training = net.training
    net.eval()
    try:
        out = net.forward(vol.astype(net.dtype, copy=False)[None, None])
    finally:
        net.train(was_training)
    return out[0, 0]
