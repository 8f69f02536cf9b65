"""C-scan denoising network: residual feature learning with channel attention."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeError
from .layers import Activation, Conv3d, FullyConnected, GlobalAvgPool, Network, Module


@dataclass(frozen=True)
class DenoiserConfig:
    m: int = 2
    channels: int = 8
    reduction: int = 4

    def validate(self):
        if self.m < 0:
            raise ConfigError("m must be >= 0", key="m")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1", key="channels")
        if self.reduction < 1 or self.channels % self.reduction:
            raise ConfigError(
                f"reduction ratio {self.reduction} does not divide channel width {self.channels}",
                key="reduction",
            )
        return self

    def to_dict(self):
        return {"kind": "denoiser", **asdict(self)}


class FeatureLearningModule(Module):
    """Two residual blocks followed by squeeze-and-excitation rescaling.

    out = v * F2 + F_in, where F2 is the second residual block's output and
    v = sigmoid(W1 relu(W2 mean(F2))) is one weight per channel.
    """

    def __init__(self, channels, reduction, rng, dtype):
        super().__init__()
        c = channels
        self.conv1 = Conv3d(c, c, rng=rng, dtype=dtype)
        self.conv2 = Conv3d(c, c, rng=rng, dtype=dtype)
        self.conv3 = Conv3d(c, c, rng=rng, dtype=dtype)
        self.conv4 = Conv3d(c, c, rng=rng, dtype=dtype)
        self.act1, self.act2 = Activation("relu"), Activation("relu")
        self.act3, self.act4 = Activation("relu"), Activation("relu")
        self.gap = GlobalAvgPool()
        self.squeeze = FullyConnected(c, c // reduction, rng=rng, dtype=dtype)
        self.squeeze_act = Activation("relu")
        self.excite = FullyConnected(c // reduction, c, rng=rng, dtype=dtype)
        self.gate = Activation("sigmoid")
        self.last_attention = None

    def forward(self, f_in):
        f1 = self.act2(self.conv2(self.act1(self.conv1(f_in))) + f_in)
        f2 = self.act4(self.conv4(self.act3(self.conv3(f1))) + f1)
        z = self.gap(f2)
        v = self.gate(self.excite(self.squeeze_act(self.squeeze(z))))
        self._f2, self._v = f2, v
        self.last_attention = v
        return v[:, :, None, None, None] * f2 + f_in

    def backward(self, g):
        f2, v = self._f2, self._v
        self._f2 = self._v = None
        d_v = (g * f2).sum(axis=(2, 3, 4))
        d_z = self.squeeze.backward(self.squeeze_act.backward(self.excite.backward(self.gate.backward(d_v))))
        d_f2 = g * v[:, :, None, None, None] + self.gap.backward(d_z)
        d_s2 = self.act4.backward(d_f2)
        d_f1 = d_s2 + self.conv3.backward(self.act3.backward(self.conv4.backward(d_s2)))
        d_s1 = self.act2.backward(d_f1)
        return g + d_s1 + self.conv1.backward(self.act1.backward(self.conv2.backward(d_s1)))


class Denoiser(Network):
    """Y_D = relu(Y + K(F0 + F_Mm)) with F0 = relu(K(Y)) and m stacked modules."""

    kind = "denoiser"

    def __init__(self, config: DenoiserConfig = DenoiserConfig(), seed=0, dtype=np.float64):
        config.validate()
        super().__init__(config)
        rng = np.random.default_rng(seed)
        c = config.channels
        self.head = Conv3d(1, c, rng=rng, dtype=dtype)
        self.head_act = Activation("relu")
        self.blocks = []
        for i in range(config.m):
            blk = FeatureLearningModule(c, config.reduction, rng, dtype)
            self.add_child(f"module{i}", blk)
            self.blocks.append(blk)
        self.tail = Conv3d(c, 1, rng=rng, dtype=dtype)
        self.out_act = Activation("relu")

    def forward(self, y):
        """``y`` is (N, 1, D, H, W); returns the same shape."""
        f0 = self.head_act(self.head(y))
        f = f0
        for blk in self.blocks:
            f = blk(f)
        return self.out_act(y + self.tail(f0 + f))

    def backward(self, g, need_input_grad=False):
        d_pre = self.out_act.backward(g)
        d_sum = self.tail.backward(d_pre)
        d_f0 = d_sum.copy()
        d_f = d_sum
        for blk in reversed(self.blocks):
            d_f = blk.backward(d_f)
        d_f0 += d_f
        d_y = self.head.backward(self.head_act.backward(d_f0), need_input_grad=need_input_grad)
        if need_input_grad:
            return d_pre + d_y
        return None

    def attention_vectors(self):
        return [blk.last_attention for blk in self.blocks]

    def identity_start(self):
        """Zero the reconstruction kernel so the untrained network is relu(Y).

        Training then starts from "no correction" instead of from whatever the
        random tail adds, which matters when the step budget is small.
        """
        self.tail.weight.data[...] = 0
        self.tail.bias.data[...] = 0
        return self


def denoiser_forward(net: Denoiser, volume):
    """Denoise one (D, H, W) C-scan in inference mode."""
    vol = np.asarray(volume)
    if vol.ndim != 3:
        raise ShapeError(f"expected a (D, H, W) volume, got shape {vol.shape}")
    if not np.all(np.isfinite(vol)):
        raise NonFiniteError("input C-scan contains non-finite values")
    was_training = net.training
    net.eval()
    try:
        out = net.forward(vol.astype(net.dtype, copy=False)[None, None])
    finally:
        net.train(was_training)
    return out[0, 0]
