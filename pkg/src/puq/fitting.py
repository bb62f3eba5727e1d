"""Pixel-wise parameter estimation: least-squares oracles and the uncertainty-guided MLP."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import diffnum as dn
from .diffnum import RngStream, Tensor
from .recon import DenoiserConfig, ReconData, ReconTrainConfig, UnrolledConfig, UnrolledNet, train_recon

log = logging.getLogger(__name__)

T2_CLAMP = (1.0, 3000.0)
T1_CLAMP = (1.0, 5000.0)
PARAM_CLAMP = {"T2": T2_CLAMP, "T1": T1_CLAMP}
MOLLI_GRID = np.arange(100.0, 3001.0, 100.0)
GN_MAX_ITER = 50
GN_TOL = 1e-10
NORM_EPS = 1e-8
FOREGROUND_FRACTION = 0.05
# normalized inputs are capped so pixels with a vanishing first phase stay finite
INPUT_CAP = 100.0


def _solve2(a11, a12, a22, b1, b2):
    det = a11 * a22 - a12 * a12
    det = np.where(np.abs(det) < 1e-300, np.nan, det)
    return (a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det


def lsq_fit_t2(signals, te):
    """Least-squares fit of S = PD exp(-TE/T2).

    ``signals`` has shape (..., P). Returns (pd, t2) arrays of the leading
    shape. All-zero pixels are background and come back as (0, 1).
    """
    s = np.asarray(signals, dtype=float)
    te = np.asarray(te, dtype=float)
    if s.shape[-1] != te.size or te.size < 2:
        raise ValueError(f"need P >= 2 signals matching {te.size} echo times, got {s.shape}")
    lead = s.shape[:-1]
    s = s.reshape(-1, te.size)
    lo, hi = T2_CLAMP

    # log-linear start on the positive samples
    pos = s > 0
    n = pos.sum(1)
    logs = np.where(pos, np.log(np.where(pos, s, 1.0)), 0.0)
    sx = (pos * te).sum(1)
    sy = logs.sum(1)
    sxx = (pos * te * te).sum(1)
    sxy = (logs * te).sum(1)
    den = n * sxx - sx * sx
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(den > 0, (n * sxy - sx * sy) / den, 0.0)
        icpt = np.where(n > 0, (sy - slope * sx) / np.maximum(n, 1), 0.0)
        t2 = np.where(slope < 0, -1.0 / slope, hi)
    t2 = np.clip(t2, lo, hi)
    pd = np.where(n >= 1, np.exp(icpt), 0.0)

    def cost(pd, t2):
        r = pd[:, None] * np.exp(-te / t2[:, None]) - s
        return (r * r).sum(1)

    active = n >= 1
    c = cost(pd, t2)
    for _ in range(GN_MAX_ITER):
        if not active.any():
            break
        e = np.exp(-te / t2[:, None])
        r = pd[:, None] * e - s
        j1 = e
        j2 = pd[:, None] * e * te / (t2[:, None] ** 2)
        d_pd, d_t2 = _solve2((j1 * j1).sum(1), (j1 * j2).sum(1), (j2 * j2).sum(1), -(j1 * r).sum(1), -(j2 * r).sum(1))
        d_pd = np.nan_to_num(d_pd)
        d_t2 = np.nan_to_num(d_t2)
        step = np.ones_like(pd)
        new_pd, new_t2 = pd, t2
        undecided = active.copy()
        for _h in range(30):
            cand_pd = pd + step * d_pd
            cand_t2 = np.clip(t2 + step * d_t2, lo, hi)
            better = undecided & (cost(cand_pd, cand_t2) <= c)
            new_pd = np.where(better, cand_pd, new_pd)
            new_t2 = np.where(better, cand_t2, new_t2)
            undecided &= ~better
            if not undecided.any():
                break
            step = np.where(undecided, step * 0.5, step)
        rel = np.maximum(np.abs(new_pd - pd) / np.maximum(np.abs(pd), 1e-300), np.abs(new_t2 - t2) / t2)
        pd, t2 = new_pd, new_t2
        c = cost(pd, t2)
        active &= rel >= GN_TOL
    background = ~(s > 0).any(1)
    pd = np.where(background, 0.0, pd)
    t2 = np.where(background, lo, t2)
    return pd.reshape(lead), t2.reshape(lead)


def _molli_init(s, ti):
    """Grid over T1* with a linear (A, B) sub-solve for every sign-restoration split."""
    p = ti.size
    best_r = np.full(s.shape[0], np.inf)
    best = np.zeros((s.shape[0], 3))
    for t1s in MOLLI_GRID:
        e = np.exp(-ti / t1s)
        design = np.stack([np.ones(p), -e], axis=1)  # signed model A - B e
        pinv = np.linalg.pinv(design)  # (2, P)
        resid_op = np.eye(p) - design @ pinv
        for k in range(p + 1):
            sign = np.ones(p)
            sign[:k] = -1.0
            d = s * sign
            r = d @ resid_op.T
            rr = (r * r).sum(1)
            ab = d @ pinv.T
            take = rr < best_r
            best_r = np.where(take, rr, best_r)
            best[take, 0] = ab[take, 0]
            best[take, 1] = ab[take, 1]
            best[take, 2] = t1s
    return best


def lsq_fit_t1_molli(signals, ti):
    """Fit |A - B exp(-TI/T1*)| and return (a, b, t1) with T1 = T1* (B/A - 1).

    Degenerate pixels (all samples equal) come back as (mean, 0, 1).
    """
    s = np.asarray(signals, dtype=float)
    ti = np.asarray(ti, dtype=float)
    if s.shape[-1] != ti.size or ti.size < 3:
        raise ValueError(f"need P >= 3 signals matching {ti.size} inversion times, got {s.shape}")
    lead = s.shape[:-1]
    s = s.reshape(-1, ti.size)
    x = _molli_init(s, ti)

    def model(x):
        return x[:, 0:1] - x[:, 1:2] * np.exp(-ti / x[:, 2:3])

    def cost(x):
        r = np.abs(model(x)) - s
        return (r * r).sum(1)

    degenerate = np.ptp(s, axis=1) <= 1e-12 * np.maximum(np.abs(s).max(1), 1e-300)
    active = ~degenerate
    c = cost(x)
    for _ in range(GN_MAX_ITER):
        if not active.any():
            break
        e = np.exp(-ti / x[:, 2:3])
        m = x[:, 0:1] - x[:, 1:2] * e
        sg = np.sign(m)
        r = np.abs(m) - s
        jac = np.stack([sg, -sg * e, -sg * x[:, 1:2] * e * ti / x[:, 2:3] ** 2], axis=2)  # N, P, 3
        jtj = np.einsum("npi,npj->nij", jac, jac)
        jtr = np.einsum("npi,np->ni", jac, r)
        jtj[~active] = np.eye(3)
        jtr[~active] = 0.0
        try:
            dx = -np.linalg.solve(jtj, jtr[..., None])[..., 0]
        except np.linalg.LinAlgError:
            dx = -np.einsum("nij,nj->ni", np.linalg.pinv(jtj), jtr)
        dx = np.nan_to_num(dx)
        step = np.ones(len(x))
        new_x = x.copy()
        undecided = active.copy()
        for _h in range(30):
            cand = x + step[:, None] * dx
            cand[:, 2] = np.maximum(cand[:, 2], 1e-3)
            better = undecided & (cost(cand) <= c)
            new_x[better] = cand[better]
            undecided &= ~better
            if not undecided.any():
                break
            step = np.where(undecided, step * 0.5, step)
        rel = np.max(np.abs(new_x - x) / np.maximum(np.abs(x), 1e-300), axis=1)
        x = new_x
        c = cost(x)
        active &= rel >= GN_TOL
    a, b, t1s = x[:, 0], x[:, 1], x[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.nan_to_num(t1s * (b / a - 1.0), nan=T1_CLAMP[0], posinf=T1_CLAMP[1], neginf=T1_CLAMP[0])
    t1 = np.clip(t1, *T1_CLAMP)
    a = np.where(degenerate, s.mean(1), a)
    b = np.where(degenerate, 0.0, b)
    t1 = np.where(degenerate, T1_CLAMP[0], t1)
    return a.reshape(lead), b.reshape(lead), t1.reshape(lead)


def lsq_parameter_map(magnitudes: np.ndarray, kind: str, timings, mask=None) -> np.ndarray:
    """Classical fit of a (..., P, H, W) magnitude stack to a (..., H, W) T2 or T1 map."""
    sig = np.moveaxis(np.asarray(magnitudes, dtype=float), -3, -1)
    out = np.zeros(sig.shape[:-1])
    sel = np.ones(out.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if kind == "T2prep":
        _, val = lsq_fit_t2(sig[sel], timings)
    elif kind == "MOLLI":
        _, _, val = lsq_fit_t1_molli(sig[sel], timings)
    else:
        raise ValueError(f"unknown sequence kind {kind!r}")
    out[sel] = val
    return out


def foreground_threshold(first_phase: np.ndarray) -> float:
    return FOREGROUND_FRACTION * float(np.median(first_phase))


def normalize_pixel(signals, uncertainties, threshold: float | None = None):
    """Divide signals and uncertainties by the first-phase signal.

    Works on (..., P). Returns (signals, uncertainties, valid) where valid is
    False for pixels whose first phase is below ``threshold`` (default: 5% of
    the median first-phase value of the given pixels) or not above the guard
    epsilon.
    """
    s = np.asarray(signals, dtype=float)
    u = np.asarray(uncertainties, dtype=float)
    s0 = s[..., 0]
    if threshold is None:
        threshold = foreground_threshold(s0)
    d = np.maximum(s0, NORM_EPS)[..., None]
    valid = (s0 >= threshold) & (s0 > NORM_EPS)
    return s / d, u / d, valid


@dataclass
class FitDataset:
    inputs: np.ndarray  # (N, P) or (N, 2P)
    targets: np.ndarray  # (N,) in ms; zeros when unknown
    valid: np.ndarray  # (N,) bool
    guided: bool

    def __len__(self):
        return self.inputs.shape[0]


def _as_stack(a, ndim):
    a = np.asarray(a)
    return a[None] if a.ndim == ndim - 1 else a


def build_fit_dataset(recon_mean, sigma, gt_map, foreground_mask, guided: bool, threshold: float | None = None) -> FitDataset:
    """One sample per foreground pixel from (S, P, H, W) magnitudes and uncertainties."""
    mag = _as_stack(np.abs(recon_mean), 4)
    sig = _as_stack(sigma, 4) if sigma is not None else np.zeros(mag.shape)
    fg = _as_stack(foreground_mask, 3).astype(bool)
    if mag.shape != sig.shape or mag.shape[:1] + mag.shape[2:] != fg.shape:
        raise ValueError(f"shape mismatch: mean {mag.shape}, sigma {sig.shape}, mask {fg.shape}")
    if not fg.any():
        raise ValueError("foreground mask is empty")
    s = np.moveaxis(mag, 1, -1)[fg]
    u = np.moveaxis(sig, 1, -1)[fg]
    ns, nu, valid = normalize_pixel(s, u, threshold)
    x = np.concatenate([ns, nu], axis=1) if guided else ns
    x = np.minimum(x, INPUT_CAP)
    tgt = np.zeros(len(x)) if gt_map is None else _as_stack(gt_map, 3)[fg].astype(float)
    return FitDataset(x.astype(np.float32), tgt, valid, guided)


@dataclass
class MlpConfig:
    n_phases: int = 8
    guided: bool = True
    param: str = "T2"
    hidden: int = 64
    layers: int = 5
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 1024
    seed: int = 0
    # targets regressed in seconds
    target_scale: float = 1000.0
    # cosine decay of the step size to zero over the run; False keeps it constant
    cosine_decay: bool = True

    @property
    def in_features(self) -> int:
        return 2 * self.n_phases if self.guided else self.n_phases


class FitMlp:
    """Fully connected regressor: ``layers`` linear maps with ReLU in between."""

    def __init__(self, cfg: MlpConfig):
        if cfg.layers < 2:
            raise ValueError("need at least two layers")
        self.cfg = cfg
        widths = [cfg.in_features] + [cfg.hidden] * (cfg.layers - 1) + [1]
        self.layers = []
        for i, (din, dout) in enumerate(zip(widths[:-1], widths[1:])):
            rng = RngStream(cfg.seed, "init", 100 + i)
            self.layers.append((dn.uniform_init((dout, din), din, rng), dn.uniform_init((dout,), din, rng)))

    def parameters(self):
        return [t for wb in self.layers for t in wb]

    def named_tensors(self):
        for i, (w, b) in enumerate(self.layers):
            yield 0, i, "weight", w
            yield 0, i, "bias", b

    def load_arrays(self, arrays):
        for it, layer, name, t in self.named_tensors():
            a = arrays[(it, layer, name)]
            if a.shape != t.shape:
                raise ValueError(f"weight ({layer}, {name}) has shape {a.shape}, expected {t.shape}")
            t.data = a.astype(t.dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for i, (w, b) in enumerate(self.layers):
            h = dn.linear(h, w, b)
            if i < len(self.layers) - 1:
                h = dn.relu(h)
        return h


def train_fit_mlp(ds: FitDataset, cfg: MlpConfig):
    """Adam/MSE regression of the target parameter; returns (mlp, epoch-mean loss curve)."""
    if ds.guided != cfg.guided:
        raise ValueError("dataset and config disagree on guidance")
    x = ds.inputs[ds.valid]
    y = (ds.targets[ds.valid] / cfg.target_scale).astype(np.float32)[:, None]
    if len(x) == 0:
        raise ValueError("no valid training pixels")
    mlp = FitMlp(cfg)
    params = mlp.parameters()
    opt = dn.Adam(params, lr=cfg.lr)
    n = len(x)
    curve = []
    for epoch in range(cfg.epochs):
        opt.lr = dn.cosine_lr(cfg.lr, epoch, cfg.epochs) if cfg.cosine_decay else cfg.lr
        order = RngStream(cfg.seed, "shuffle", epoch).permutation(n)
        total = 0.0
        for bi, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            loss = dn.mse_loss(mlp(Tensor(x[idx])), y[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite fitting loss at epoch {epoch}, batch {bi}")
            opt.zero_grad()
            dn.backward(loss)
            opt.step()
            total += value * len(idx)
        curve.append(total / n)
    log.debug("fit mlp final loss %.6g", curve[-1])
    return mlp, curve


@dataclass
class ParameterMap:
    values: np.ndarray  # (..., H, W) ms, zero on background
    mask: np.ndarray  # (..., H, W) bool


def predict_fit_mlp(mlp: FitMlp, recon_mean, sigma, mask, guided: bool, threshold: float | None = None) -> ParameterMap:
    if guided != mlp.cfg.guided:
        raise ValueError(f"MLP was trained with guided={mlp.cfg.guided}, called with guided={guided}")
    fg = np.asarray(mask, dtype=bool)
    ds = build_fit_dataset(recon_mean, sigma, None, fg, guided, threshold)
    if ds.inputs.shape[1] != mlp.cfg.in_features:
        raise dn.ShapeError(f"input width {ds.inputs.shape[1]} != MLP width {mlp.cfg.in_features}")
    with dn.no_grad():
        pred = mlp(Tensor(ds.inputs)).data[:, 0].astype(float) * mlp.cfg.target_scale
    pred = np.clip(pred, *PARAM_CLAMP[mlp.cfg.param])
    fg3 = fg[None] if fg.ndim == 2 else fg
    out = np.zeros(fg3.shape)
    out[fg3] = pred
    return ParameterMap(out.reshape(fg.shape), fg)


# --- heteroscedastic (NLL) uncertainty -----------------------------------


def train_recon_nll(data: ReconData, net_cfg: UnrolledConfig, cfg: ReconTrainConfig, seed: int = 0):
    """Train an unrolled net whose last denoiser also predicts per-phase log-variance."""
    den = replace(net_cfg.denoiser, logvar_head=True)
    net = UnrolledNet(UnrolledConfig(net_cfg.iterations, den), seed=seed)
    curve = train_recon(data, net, replace(cfg, loss="nll"))
    return net, curve


def aleatoric_sigma(logvar: np.ndarray) -> np.ndarray:
    return np.exp(0.5 * np.asarray(logvar, dtype=float))


def combine_uncertainty_nll_md(samples: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """sqrt(var_t |x_t| deviation + mean_t v_t) over the leading sample axis."""
    x = np.asarray(samples)
    v = np.asarray(variances, dtype=float)
    if x.shape[0] < 1 or x.shape != v.shape:
        raise ValueError("need T >= 1 samples with matching variances")
    mu = x.mean(axis=0)
    epi = np.mean(np.abs(x - mu) ** 2, axis=0)
    return np.sqrt(epi + v.mean(axis=0))
