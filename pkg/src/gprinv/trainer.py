"""Losses, Adam, the plateau learning-rate rule and the staged training loop."""
from __future__ import annotations

import copy
import csv
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import Checkpoint, check_architecture, from_network
from .errors import ConfigError, NonFiniteError, ShapeError

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# losses

def loss_mse(pred, truth):
    """Mean squared voxel error and its gradient with respect to ``pred``."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {truth.shape}")
    diff = pred - truth
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def loss_mae(pred, truth):
    """Mean absolute voxel error; the subgradient at zero difference is 0."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {truth.shape}")
    diff = pred - truth
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


LOSSES = {"mse": loss_mse, "mae": loss_mae}


# ----------------------------------------------------------------------------
# optimiser

class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, named_params, lr):
        """Apply one bias-corrected update to every (name, Tensor) pair."""
        named_params = list(named_params)
        for name, p in named_params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in named_params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def state(self):
        return self.m, self.v, self.t

    def load(self, m, v, t):
        self.m = {k: np.array(a, copy=True) for k, a in m.items()}
        self.v = {k: np.array(a, copy=True) for k, a in v.items()}
        self.t = int(t)


def adam_step(params, grads, state: Adam | None, lr):
    """Functional form: update ``params`` (dict name -> array) in place."""
    from .tensor import Tensor

    state = state or Adam()
    tensors = []
    for name, arr in params.items():
        t = Tensor.__new__(Tensor)
        t.data = arr
        t.grad = np.asarray(grads[name], dtype=arr.dtype)
        tensors.append((name, t))
    state.step(tensors, lr)
    return params, state


def update_lr(lr, loss_history, decay_factor=0.98):
    """Decay when the latest epoch loss did not drop below the previous one."""
    if len(loss_history) < 2:
        return lr
    return lr * decay_factor if loss_history[-1] >= loss_history[-2] else lr


# ----------------------------------------------------------------------------
# configuration

@dataclass
class TrainConfig:
    lr0: float = 0.001
    decay_factor: float = 0.98
    epochs: int = 100
    batch_size: int = 2
    split: float = 0.9
    loss: str = "mse"
    seed: int = 0
    dtype: str = "float32"

    def validate(self, prefix="train"):
        if not self.lr0 > 0:
            raise ConfigError(f"{prefix}.lr0 must be > 0", key=f"{prefix}.lr0")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"{prefix}.decay_factor must lie in (0, 1]", key=f"{prefix}.decay_factor")
        if self.epochs < 0:
            raise ConfigError(f"{prefix}.epochs must be >= 0", key=f"{prefix}.epochs")
        if self.batch_size < 1:
            raise ConfigError(f"{prefix}.batch_size must be >= 1", key=f"{prefix}.batch_size")
        if not 0 < self.split < 1:
            raise ConfigError(f"{prefix}.split must lie in (0, 1)", key=f"{prefix}.split")
        if self.loss not in LOSSES:
            raise ConfigError(f"{prefix}.loss must be one of {sorted(LOSSES)}", key=f"{prefix}.loss")
        return self


@dataclass
class FineTuneConfig(TrainConfig):
    lr0: float = 0.0006
    decay_factor: float = 0.99


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best: Checkpoint | None = None
    last: Checkpoint | None = None


# ----------------------------------------------------------------------------
# training loop

def split_indices(n, split, seed):
    """Seeded train/validation partition leaving at least one sample each."""
    if n < 2:
        raise ConfigError("need at least two samples to form a train/validation split", key="train.split")
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(split * n)), 1), n - 1)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def evaluate_loss(net, inputs, targets, loss_fn, batch_size=2):
    was = net.training
    net.eval()
    total, count = 0.0, 0
    try:
        for s in range(0, len(inputs), batch_size):
            x = _stack(inputs[s:s + batch_size], net.dtype)
            t = _stack(targets[s:s + batch_size], net.dtype)
            value, _ = loss_fn(net.forward(x), t)
            total += value * len(x)
            count += len(x)
    finally:
        net.train(was)
    return total / max(count, 1)


def fit(net, train_inputs, train_targets, val_inputs, val_targets, cfg: TrainConfig,
        log_path=None, fingerprint="", optimizer: Adam | None = None, on_epoch=None):
    """Epoch loop: shuffled mini-batches, Adam, plateau LR decay on the
    training loss, best-validation retention.

    Returns a ``TrainResult`` whose ``best`` checkpoint has the lowest
    validation loss seen (the initial weights when ``epochs == 0``).
    """
    cfg.validate()
    if len(train_inputs) == 0 or len(val_inputs) == 0:
        raise ConfigError("empty training or validation split", key="train.split")
    loss_fn = LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)
    opt = optimizer or Adam()
    lr = cfg.lr0
    history = []
    train_losses = []
    net.train()
    best = from_network(net, lr=lr, epoch=0, fingerprint=fingerprint)
    best_val = None
    writer = None
    fh = None
    if log_path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "val_loss"])
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(train_inputs))
            total = 0.0
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                x = _stack([train_inputs[i] for i in idx], net.dtype)
                t = _stack([train_targets[i] for i in idx], net.dtype)
                net.zero_grad()
                value, grad = loss_fn(net.forward(x), t)
                if not np.isfinite(value):
                    raise NonFiniteError(f"non-finite training loss at epoch {epoch}, batch starting {s}")
                net.backward(grad.astype(net.dtype, copy=False))
                opt.step(net.named_parameters(), lr)
                total += value * len(idx)
            train_loss = total / len(order)
            val_loss = evaluate_loss(net, val_inputs, val_targets, loss_fn, cfg.batch_size)
            if not np.isfinite(val_loss):
                raise NonFiniteError(f"non-finite validation loss at epoch {epoch}")
            history.append({"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_loss": val_loss})
            if writer:
                writer.writerow([epoch, repr(lr), repr(train_loss), repr(val_loss)])
                fh.flush()
            log.info("epoch %d lr %.6g train %.6g val %.6g", epoch, lr, train_loss, val_loss)
            if best_val is None or val_loss < best_val:
                best_val = val_loss
                m, v, t = opt.state()
                best = from_network(
                    net, adam_m=copy.deepcopy(m), adam_v=copy.deepcopy(v), adam_t=t,
                    lr=lr, epoch=epoch, best_val_loss=val_loss, fingerprint=fingerprint,
                )
            train_losses.append(train_loss)
            lr = update_lr(lr, train_losses, cfg.decay_factor)
            if on_epoch is not None:
                on_epoch(history[-1])
    finally:
        if fh:
            fh.close()
    m, v, t = opt.state()
    last = from_network(net, adam_m=m, adam_v=v, adam_t=t, lr=lr, epoch=cfg.epochs,
                        best_val_loss=best_val, fingerprint=fingerprint)
    best.history = list(history)
    last.history = list(history)
    return TrainResult(history=history, best=best, last=last)


def _stack(arrays, dtype):
    return np.stack([np.asarray(a, dtype=dtype)[None] for a in arrays])


# ----------------------------------------------------------------------------
# stages

STAGE_PAIRS = {
    # Step 1: noisy -> clean C-scan; Step 2: clean C-scan -> permittivity
    "denoiser": ("noisy", "clean"),
    "inverter": ("clean", "permittivity"),
}


def load_stage_pairs(manifest, stage):
    from .forge.dataset import load_volume_set

    src, dst = STAGE_PAIRS[stage]
    inputs = load_volume_set(manifest, src)
    targets = load_volume_set(manifest, dst)
    return inputs, targets


def train_stage(net, manifest, cfg: TrainConfig, stage=None, val_manifest=None, log_path=None):
    """Pre-train a network on the pairs its stage prescribes.

    The denoiser learns noisy -> clean C-scans with MSE; the inverter learns
    clean C-scan -> permittivity with MAE. Without ``val_manifest`` the
    records are split by ``cfg.split``.
    """
    stage = stage or net.kind
    inputs, targets = load_stage_pairs(manifest, stage)
    if val_manifest is not None:
        v_in, v_tg = load_stage_pairs(val_manifest, stage)
        t_in, t_tg = inputs, targets
    else:
        tr, va = split_indices(len(inputs), cfg.split, cfg.seed)
        t_in, t_tg = [inputs[i] for i in tr], [targets[i] for i in tr]
        v_in, v_tg = [inputs[i] for i in va], [targets[i] for i in va]
    net.astype(np.dtype(cfg.dtype))
    return fit(net, t_in, t_tg, v_in, v_tg, cfg, log_path=log_path,
               fingerprint=manifest.get("fingerprint", ""))


def fine_tune(checkpoint: Checkpoint, manifest, cfg: FineTuneConfig | None = None,
              expected_arch: dict | None = None, val_manifest=None, log_path=None):
    """Step 3: start from pre-trained weights and continue on a new dataset
    with the gentler fine-tuning schedule. Adam moments start fresh."""
    cfg = cfg or FineTuneConfig(loss="mse" if checkpoint.config.get("kind") == "denoiser" else "mae")
    if expected_arch:
        check_architecture(checkpoint, expected_arch)
    net = checkpoint.build(dtype=np.dtype(cfg.dtype))
    return train_stage(net, manifest, cfg, stage=checkpoint.config["kind"],
                       val_manifest=val_manifest, log_path=log_path)


def config_dict(cfg):
    return asdict(cfg)
