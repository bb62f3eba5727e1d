"""Unrolled denoiser + data-consistency reconstruction with Monte Carlo dropout."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffnum as dn
from .diffnum import RngStream, Tensor
from .kspace import Acquisition, dc_layer, unsampled_projection

log = logging.getLogger(__name__)

N_CONV = 5
# hidden conv layers 2-4 (0-based indices 1..3) carry dropout
DROPOUT_LAYERS = (1, 2, 3)
LOGVAR_BOUND = 10.0


@dataclass
class DenoiserConfig:
    n_phases: int = 8
    hidden: int = 64
    dropout: float = 0.3
    residual: bool = True
    # extra 2P output channels predicting log-variance (NLL ablation)
    logvar_head: bool = False

    @property
    def channels(self) -> int:
        return 2 * self.n_phases


@dataclass
class UnrolledConfig:
    iterations: int = 5
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)


@dataclass
class ReconTrainConfig:
    epochs: int = 50
    lr: float = 0.01
    batch_size: int = 4
    clip: float = 0.01
    loss: str = "mse"  # or "nll"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr < 0 or self.clip <= 0:
            raise ValueError(f"invalid training config {self}")
        if self.loss not in ("mse", "nll"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class ReconData:
    """Paired training/inference data for the unrolled network."""

    zero_filled: np.ndarray  # (S, P, H, W) complex
    acq: Acquisition  # batched over S
    target: np.ndarray | None = None  # (S, P, H, W) complex

    def __len__(self):
        return self.zero_filled.shape[0]

    def subset(self, idx) -> "ReconData":
        tgt = None if self.target is None else self.target[idx]
        return ReconData(self.zero_filled[idx], self.acq[idx], tgt)


def to_channels(x: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Complex (B, P, H, W) -> real (B, 2P, H, W) as [real parts | imaginary parts]."""
    return np.concatenate([x.real, x.imag], axis=1).astype(dtype)


def from_channels(r: np.ndarray) -> np.ndarray:
    p = r.shape[1] // 2
    return r[:, :p] + 1j * r[:, p:]


class Denoiser:
    """Five 3x3 conv layers, ReLU after the first four, dropout on hidden layers 2-4."""

    def __init__(self, cfg: DenoiserConfig, rng: RngStream, dtype="float32"):
        self.cfg = cfg
        c, h = cfg.channels, cfg.hidden
        c_out = 2 * c if cfg.logvar_head else c
        widths = [(c, h), (h, h), (h, h), (h, h), (h, c_out)]
        self.layers: list[tuple[Tensor, Tensor]] = []
        for cin, cout in widths:
            fan_in = cin * 9
            w = dn.uniform_init((cout, cin, 3, 3), fan_in, rng, dtype)
            b = dn.uniform_init((cout,), fan_in, rng, dtype)
            self.layers.append((w, b))

    @property
    def dropout_sites(self) -> tuple[int, ...]:
        return DROPOUT_LAYERS

    def parameters(self) -> list[Tensor]:
        return [t for wb in self.layers for t in wb]

    def __call__(self, x: Tensor, rng: RngStream | None, active: bool):
        """Returns the denoised channels, plus per-phase log-variance when the head is on."""
        c = self.cfg.channels
        if x.shape[1] != c:
            raise dn.ShapeError(f"denoiser expects {c} channels, got {x.shape[1]}")
        h = x
        for i, (w, b) in enumerate(self.layers):
            h = dn.conv2d(h, w, b)
            if i < N_CONV - 1:
                h = dn.relu(h)
            if i in DROPOUT_LAYERS:
                h = dn.dropout(h, self.cfg.dropout, rng, active)
        if not self.cfg.logvar_head:
            return h + x if self.cfg.residual else h
        img = dn.channels(h, 0, c)
        img = img + x if self.cfg.residual else img
        p = self.cfg.n_phases
        # average the real/imag log-variance channels into one per phase, then
        # soft-bound to (-LOGVAR_BOUND, LOGVAR_BOUND) so exp(-s) stays finite
        raw = dn.mul(dn.channels(h, c, c + p) + dn.channels(h, c + p, 2 * c), 0.5 / LOGVAR_BOUND)
        return img, dn.mul(dn.tanh(raw), LOGVAR_BOUND)


class UnrolledNet:
    """N alternations of (denoiser, DC); one separate denoiser per iteration."""

    def __init__(self, cfg: UnrolledConfig, seed: int = 0, dtype="float32"):
        if cfg.iterations < 0:
            raise ValueError("iteration count must be non-negative")
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.denoisers: list[Denoiser] = []
        for it in range(cfg.iterations):
            dcfg = cfg.denoiser
            if dcfg.logvar_head and it != cfg.iterations - 1:
                dcfg = DenoiserConfig(dcfg.n_phases, dcfg.hidden, dcfg.dropout, dcfg.residual, False)
            self.denoisers.append(Denoiser(dcfg, RngStream(seed, "init", it), dtype))

    @property
    def has_logvar(self) -> bool:
        return self.cfg.denoiser.logvar_head and self.cfg.iterations > 0

    @property
    def dropout(self) -> float:
        return self.cfg.denoiser.dropout

    def parameters(self) -> list[Tensor]:
        return [p for d in self.denoisers for p in d.parameters()]

    def named_tensors(self):
        """Yield (iteration, layer, name, tensor) for serialization."""
        for it, d in enumerate(self.denoisers):
            for layer, (w, b) in enumerate(d.layers):
                yield it, layer, "weight", w
                yield it, layer, "bias", b

    def load_arrays(self, arrays: dict[tuple[int, int, str], np.ndarray]):
        for it, layer, name, t in self.named_tensors():
            a = arrays[(it, layer, name)]
            if a.shape != t.shape:
                raise ValueError(f"weight ({it}, {layer}, {name}) has shape {a.shape}, expected {t.shape}")
            t.data = a.astype(t.dtype)


def dc_tensor(x: Tensor, acq: Acquisition) -> Tensor:
    """Differentiable data-consistency layer on the real channel layout."""
    xc = from_channels(x.data)
    out = to_channels(dc_layer(xc, acq), x.dtype)

    def bw(g):
        gc = unsampled_projection(from_channels(g), acq.coils, acq.masks)
        return (to_channels(gc, g.dtype),)

    return dn.make_node(out, (x,), bw, "dc")


def unrolled_forward(
    x_zero_filled: np.ndarray,
    acq: Acquisition,
    net: UnrolledNet,
    rng: RngStream | None = None,
    dropout_active: bool = False,
):
    """Run the cascade on a batch. Returns the real-channel output Tensor (and log-variance Tensor)."""
    x = Tensor(to_channels(x_zero_filled, net.dtype))
    logvar = None
    for den in net.denoisers:
        out = den(x, rng, dropout_active)
        if isinstance(out, tuple):
            out, logvar = out
        x = dc_tensor(out, acq)
    if net.has_logvar:
        return x, logvar
    return x


def denoiser_forward(x: np.ndarray, den: Denoiser, rng: RngStream | None = None, dropout_active: bool = False):
    """Complex (B, P, H, W) in, complex out; convenience wrapper for a single denoiser."""
    with dn.no_grad():
        out = den(Tensor(to_channels(x)), rng, dropout_active)
    if isinstance(out, tuple):
        out = out[0]
    return from_channels(out.data)


def nll_loss(pred: Tensor, logvar: Tensor, target) -> Tensor:
    """Mean over channels of 0.5 exp(-s) (x - x_hat)^2 + 0.5 s; s is per phase (B, P, H, W)."""
    t = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    s = dn.concat([logvar, logvar], axis=1)
    r2 = dn.square(pred - t)
    per = dn.mul(dn.exp(dn.neg(s)), r2) + s
    return dn.mul(dn.mean(per), 0.5)


def train_recon(data: ReconData, net: UnrolledNet, cfg: ReconTrainConfig):
    """Supervised training with Adam, global-norm clipping and active dropout.

    Returns the per-epoch mean loss curve; ``net`` is updated in place.
    """
    if len(data) == 0 or data.target is None:
        raise ValueError("training needs a non-empty dataset with targets")
    if (cfg.loss == "nll") != net.has_logvar:
        raise ValueError("NLL loss requires a network with a log-variance head (and vice versa)")
    params = net.parameters()
    opt = dn.Adam(params, lr=cfg.lr)
    target = to_channels(data.target, net.dtype)
    n = len(data)
    curve = []
    step = 0
    for epoch in range(cfg.epochs):
        order = RngStream(cfg.seed, "shuffle", epoch).permutation(n)
        total, count = 0.0, 0
        for bi, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = np.sort(order[lo : lo + cfg.batch_size])
            rng = RngStream(cfg.seed, "dropout", step)
            out = unrolled_forward(data.zero_filled[idx], data.acq[idx], net, rng, dropout_active=True)
            if cfg.loss == "nll":
                pred, s = out
                loss = nll_loss(pred, s, target[idx])
            else:
                loss = dn.mse_loss(out, target[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value} at epoch {epoch}, batch {bi}")
            opt.zero_grad()
            dn.backward(loss)
            dn.clip_grad_norm(params, cfg.clip)
            opt.step()
            step += 1
            total += value * len(idx)
            count += len(idx)
        curve.append(total / count)
        log.debug("recon epoch %d loss %.6g", epoch, curve[-1])
    return curve


def _batches(n: int, size: int):
    for lo in range(0, n, size):
        yield slice(lo, min(lo + size, n))


def predict(net: UnrolledNet, data: ReconData, batch_size: int = 8):
    """Deterministic forward (dropout off). Returns complex images, plus log-variance if present."""
    imgs, logvars = [], []
    with dn.no_grad():
        for sl in _batches(len(data), batch_size):
            out = unrolled_forward(data.zero_filled[sl], data.acq[sl], net, None, False)
            if isinstance(out, tuple):
                out, s = out
                logvars.append(s.data)
            imgs.append(from_channels(out.data))
    mean = np.concatenate(imgs)
    if net.has_logvar:
        return mean, np.concatenate(logvars)
    return mean


def _mc_passes(net: UnrolledNet, data: ReconData, n_samples: int, seed: int, batch_size: int):
    if n_samples < 1:
        raise ValueError(f"need at least one MC sample, got {n_samples}")
    with dn.no_grad():
        for t in range(n_samples):
            rng = RngStream(seed, "mc", t)
            imgs, logvars = [], []
            for sl in _batches(len(data), batch_size):
                out = unrolled_forward(data.zero_filled[sl], data.acq[sl], net, rng, True)
                if isinstance(out, tuple):
                    out, s = out
                    logvars.append(s.data)
                imgs.append(from_channels(out.data))
            yield np.concatenate(imgs), (np.concatenate(logvars) if logvars else None)


class _Welford:
    """Running complex mean and sum of squared deviation moduli."""

    def __init__(self):
        self.n = 0
        self.mean = None
        self.m2 = None

    def push(self, x: np.ndarray):
        x = x.astype(np.complex128)
        self.n += 1
        if self.mean is None:
            self.mean = x.copy()
            self.m2 = np.zeros(x.shape)
            return
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + np.real(np.conj(delta) * (x - self.mean))

    @property
    def variance(self) -> np.ndarray:
        return np.maximum(self.m2, 0.0) / self.n


def mc_sample(net: UnrolledNet, data: ReconData, n_samples: int, seed: int = 0, batch_size: int = 8):
    """Predictive mean and per-phase standard deviation over T dropout samples.

    sigma = sqrt(mean_t |mean - f_t|^2), population convention.
    """
    acc = _Welford()
    for x, _ in _mc_passes(net, data, n_samples, seed, batch_size):
        acc.push(x)
    return acc.mean, np.sqrt(acc.variance)


def mc_sample_nll(net: UnrolledNet, data: ReconData, n_samples: int, seed: int = 0, batch_size: int = 8):
    """MC sampling of a log-variance network.

    Returns (mean, epistemic sigma, mean aleatoric variance exp(s)).
    """
    if not net.has_logvar:
        raise ValueError("network has no log-variance head")
    acc = _Welford()
    alea = None
    for x, s in _mc_passes(net, data, n_samples, seed, batch_size):
        acc.push(x)
        v = np.exp(s.astype(np.float64))
        alea = v if alea is None else alea + v
    return acc.mean, np.sqrt(acc.variance), alea / n_samples
