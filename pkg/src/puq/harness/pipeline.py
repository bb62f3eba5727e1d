"""End-to-end experiments: simulate -> reconstruct -> fit -> evaluate, plus ablations and sweeps.

Stage-1 (reconstruction) results are cached per (family, seed, dropout, T) on
an :class:`Experiment`, so variants that differ only in the fitting stage
reuse the very same reconstruction.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import re
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .. import fitting, physics, recon
from ..diffnum.rng import RngStream, derive_seed
from ..kspace import Acquisition, acquire, adjoint_op, make_masks
from . import io
from .config import PAPER_ACS, SWEEP_GRIDS, ABLATION_VARIANTS, ExperimentConfig
from .metrics import nrmse, ssim

log = logging.getLogger(__name__)

# variant -> (stage-1 family, guided fitting)
VARIANT_SPECS = {
    "PUQ": ("mcd", True),
    "w/o G": ("mcd", False),
    "w/o Dropout": ("det", False),
    "NLL w/ G": ("nll", True),
    "NLL w/o G": ("nll", False),
    "NLL+MD w/ G": ("nll_md", True),
    "NLL+MD w/o G": ("nll_md", False),
    "zero-filled+LSQ": ("zf", None),
}

METRIC_COLUMNS = ("variant", "param", "R", "seed", "nrmse", "ssim", "seconds")


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower()


@dataclass
class MetricsRecord:
    variant: str
    param: str
    R: float
    seed: int
    nrmse: float
    ssim: float
    seconds: float
    stage1_digest: str = ""

    def row(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_COLUMNS}


def write_metrics_csv(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for r in records:
            row = r.row()
            row["nrmse"] = repr(float(row["nrmse"]))
            row["ssim"] = repr(float(row["ssim"]))
            row["seconds"] = f"{row['seconds']:.3f}"
            w.writerow(row)


def read_metrics_csv(path) -> list[dict]:
    with Path(path).open() as f:
        return list(csv.DictReader(f))


# --- data ----------------------------------------------------------------


def sequence_preset(cfg: ExperimentConfig) -> physics.SequencePreset:
    if cfg.timings is None:
        return physics.SequencePreset.named(cfg.sequence)
    return physics.SequencePreset(cfg.sequence, tuple(float(t) for t in cfg.timings))


def phantom_spec(cfg: ExperimentConfig, index: int) -> physics.PhantomSpec:
    pc = cfg.phantom
    if pc.regions is not None:
        regions = tuple(
            physics.Ellipse(
                center=tuple(r["center"]),
                semi_axes=tuple(r["semi_axes"]),
                tissue=physics.Tissue(r["t1"], r["t2"], r["pd"]),
                angle=r.get("angle", 0.0),
            )
            for r in pc.regions
        )
        return physics.PhantomSpec(pc.height, pc.width, regions)
    return physics.random_phantom_spec(
        pc.height,
        pc.width,
        cfg.data_seed,
        index,
        n_regions=(pc.n_regions_min, pc.n_regions_max),
        t1_range=tuple(pc.t1_range),
        t2_range=tuple(pc.t2_range),
        pd_range=tuple(pc.pd_range),
    )


def make_phantoms(cfg: ExperimentConfig):
    """Stacked (t1, t2, pd, foreground) maps for every slice, shape (S, H, W)."""
    maps = [physics.make_phantom(phantom_spec(cfg, i)) for i in range(cfg.n_slices)]
    return tuple(np.stack(m) for m in zip(*maps))


@dataclass
class SimulatedData:
    t1: np.ndarray
    t2: np.ndarray
    pd: np.ndarray
    fg: np.ndarray
    reference: np.ndarray  # (S, P, H, W) fully sampled coil-combined image
    acq: Acquisition  # batched undersampled acquisition
    ref_map: np.ndarray  # (S, H, W) least-squares fit of |reference|
    splits: dict = field(default_factory=dict)

    @property
    def zero_filled(self) -> np.ndarray:
        return self.acq.zero_filled

    def recon_data(self, idx) -> recon.ReconData:
        idx = np.asarray(idx)
        return recon.ReconData(self.zero_filled[idx], self.acq[idx], self.reference[idx])


def make_splits(cfg: ExperimentConfig) -> dict:
    a, b = cfg.n_train, cfg.n_train + cfg.n_val
    return {"train": np.arange(a), "val": np.arange(a, b), "test": np.arange(b, cfg.n_slices)}


def simulate(cfg: ExperimentConfig, phantoms=None) -> SimulatedData:
    t1, t2, pd, fg = make_phantoms(cfg) if phantoms is None else phantoms
    preset = sequence_preset(cfg)
    s, h, w = pd.shape
    refs, ks, masks, coils = [], [], [], []
    for i in range(s):
        img = physics.simulate_phases(t1[i], t2[i], pd[i], preset, seed=derive_seed(cfg.data_seed, "phase", i))
        cmaps = physics.make_coil_maps(cfg.coils, h, w, derive_seed(cfg.data_seed, "coil", i))
        m = make_masks(h, cfg.accel, cfg.acs_frac, preset.n_phases, derive_seed(cfg.data_seed, "mask", i))
        std = 0.0 if cfg.snr is None else physics.noise_sigma(np.abs(img[0]), fg[i], cfg.snr)
        acq, full = acquire(img, cmaps, m, std, RngStream(cfg.data_seed, "noise", i))
        refs.append(adjoint_op(full, cmaps, np.ones_like(m)))
        ks.append(acq.kspace)
        masks.append(m)
        coils.append(cmaps)
    acq = Acquisition(
        np.stack(ks).astype(np.complex64), np.stack(masks), np.stack(coils).astype(np.complex64)
    )
    reference = np.stack(refs).astype(np.complex64)
    ref_map = fitting.lsq_parameter_map(np.abs(reference), cfg.sequence, preset.timings, fg)
    return SimulatedData(t1, t2, pd, fg, reference, acq, ref_map, make_splits(cfg))


def save_data(out, data: SimulatedData):
    d = Path(out) / "data"
    for name in ("t1", "t2", "pd"):
        io.save_tensor(d / f"{name}.tsr", getattr(data, name).astype(np.float64))
    io.save_tensor(d / "fg.tsr", data.fg.astype(np.float32))
    io.save_tensor(d / "reference.tsr", data.reference)
    io.save_tensor(d / "kspace.tsr", data.acq.kspace)
    io.save_tensor(d / "masks.tsr", data.acq.masks.astype(np.float32))
    io.save_tensor(d / "coils.tsr", data.acq.coils)
    io.save_tensor(d / "ref_map.tsr", data.ref_map)


def load_data(out, cfg: ExperimentConfig) -> SimulatedData:
    d = Path(out) / "data"
    ld = lambda n: io.load_tensor(d / f"{n}.tsr")  # noqa: E731
    acq = Acquisition(ld("kspace"), ld("masks") > 0.5, ld("coils"))
    return SimulatedData(
        ld("t1"), ld("t2"), ld("pd"), ld("fg") > 0.5, ld("reference"), acq, ld("ref_map"), make_splits(cfg)
    )


# --- stages --------------------------------------------------------------

FAMILIES = ("mcd", "det", "nll", "nll_md", "zf")


@dataclass
class Stage1:
    family: str
    mean: np.ndarray  # (S, P, H, W) complex64
    sigma: np.ndarray | None  # (S, P, H, W) float64
    seconds: float

    @cached_property
    def digest(self) -> str:
        arrays = [self.mean] + ([] if self.sigma is None else [self.sigma])
        return io.digest(*arrays)


def net_config(cfg: ExperimentConfig, dropout: float, logvar: bool) -> recon.UnrolledConfig:
    p = sequence_preset(cfg).n_phases
    den = recon.DenoiserConfig(p, cfg.recon.hidden, dropout, True, logvar)
    return recon.UnrolledConfig(cfg.recon.iterations, den)


def train_config(cfg: ExperimentConfig, seed: int, loss: str = "mse") -> recon.ReconTrainConfig:
    r = cfg.recon
    return recon.ReconTrainConfig(r.epochs, r.lr, r.batch_size, r.clip, loss, seed)


def family_dropout(cfg: ExperimentConfig, family: str, dropout: float | None = None) -> float:
    """Dropout rate a stage-1 family trains with (deterministic families force 0)."""
    if family not in FAMILIES:
        raise ValueError(f"unknown stage-1 family {family!r}")
    if family in ("det", "nll", "zf"):
        return 0.0
    return cfg.dropout if dropout is None else float(dropout)


def train_stage1(cfg: ExperimentConfig, family: str, seed: int, dropout: float, train: recon.ReconData):
    logvar = family in ("nll", "nll_md")
    net = recon.UnrolledNet(net_config(cfg, dropout, logvar), seed=seed)
    curve = recon.train_recon(train, net, train_config(cfg, seed, "nll" if logvar else "mse"))
    return net, curve


def reconstruct(net: recon.UnrolledNet, family: str, data: recon.ReconData, mc_samples: int, seed: int):
    """Stage-1 mean image (complex64) and per-phase sigma (float64, None if the family has none)."""
    mc_seed = derive_seed(seed, "mc")
    if family == "mcd":
        mean, sigma = recon.mc_sample(net, data, mc_samples, mc_seed)
    elif family == "det":
        mean, sigma = recon.predict(net, data), None
    elif family == "nll":
        mean, logvar = recon.predict(net, data)
        sigma = fitting.aleatoric_sigma(logvar)
    elif family == "nll_md":
        mean, epi, alea = recon.mc_sample_nll(net, data, mc_samples, mc_seed)
        sigma = np.sqrt(epi**2 + alea)
    else:
        raise ValueError(f"family {family!r} has no network")
    sigma = None if sigma is None else np.asarray(sigma, dtype=np.float64)
    return mean.astype(np.complex64), sigma


def mlp_config(cfg: ExperimentConfig, n_phases: int, guided: bool, seed: int) -> fitting.MlpConfig:
    fc = cfg.fit
    return fitting.MlpConfig(
        n_phases=n_phases,
        guided=guided,
        param=cfg.parameter,
        hidden=fc.hidden,
        layers=fc.layers,
        epochs=fc.epochs,
        lr=fc.lr,
        batch_size=fc.batch_size,
        seed=derive_seed(seed, "fit"),
    )


def _sigma_or_zero(mean, sigma):
    return np.zeros(mean.shape) if sigma is None else sigma


def train_fit(cfg: ExperimentConfig, mean, sigma, ref_map, fg, guided: bool, seed: int):
    """Train the fitting MLP on training slices; returns (mlp, threshold, loss curve).

    The normalization threshold comes from the training slices and is reused at test time.
    """
    mag = np.abs(mean)
    thr = fitting.foreground_threshold(mag[:, 0][fg])
    ds = fitting.build_fit_dataset(mag, _sigma_or_zero(mean, sigma), ref_map, fg, guided, thr)
    mlp, curve = fitting.train_fit_mlp(ds, mlp_config(cfg, mag.shape[1], guided, seed))
    return mlp, thr, curve


def predict_maps(mlp: fitting.FitMlp, mean, sigma, fg, guided: bool, threshold: float) -> np.ndarray:
    pmap = fitting.predict_fit_mlp(mlp, np.abs(mean), _sigma_or_zero(mean, sigma), fg, guided, threshold)
    return pmap.values


def lsq_maps(cfg: ExperimentConfig, mean, fg) -> np.ndarray:
    return fitting.lsq_parameter_map(np.abs(mean), cfg.sequence, sequence_preset(cfg).timings, fg)


def evaluate(maps, ref_maps, fg) -> tuple[float, float]:
    """Per-slice NRMSE and SSIM on the foreground, averaged over slices."""
    scores = [(nrmse(m, r, f), ssim(m, r, f)) for m, r, f in zip(maps, ref_maps, fg)]
    e, q = np.mean(scores, axis=0)
    return float(e), float(q)


def mlp_meta(mlp: fitting.FitMlp, threshold: float) -> dict:
    return {"config": dataclasses.asdict(mlp.cfg), "threshold": threshold}


def mlp_from_meta(meta: dict) -> tuple[fitting.FitMlp, float]:
    return fitting.FitMlp(fitting.MlpConfig(**meta["config"])), float(meta["threshold"])


class Experiment:
    """Shared data and caches for all variants/seeds of one data configuration."""

    def __init__(self, cfg: ExperimentConfig, out_dir=None, data: SimulatedData | None = None):
        self.cfg = cfg
        self.out = None if out_dir is None else Path(out_dir)
        self._data = data
        self._nets: dict = {}
        self._stage1: dict = {}

    @property
    def data(self) -> SimulatedData:
        if self._data is None:
            self._data = simulate(self.cfg)
            if self.out is not None:
                save_data(self.out, self._data)
        return self._data

    @property
    def param(self) -> str:
        return self.cfg.parameter

    def network(self, family: str, seed: int, dropout: float):
        key = (family, seed, dropout)
        if key not in self._nets:
            data = self.data
            t0 = time.perf_counter()
            net, curve = train_stage1(self.cfg, family, seed, dropout, data.recon_data(data.splits["train"]))
            secs = time.perf_counter() - t0
            log.info("trained %s net (seed %d, p=%.2f) in %.1fs, loss %.4g -> %.4g", family, seed, dropout, secs, curve[0], curve[-1])
            if self.out is not None:
                meta = {"family": family, "seed": seed, "config": net_meta(net.cfg), "loss_curve": curve}
                io.save_weights(self.out / "stage1" / f"{family}_p{dropout:g}_seed{seed}" / "weights", net, meta)
            self._nets[key] = (net, curve, secs)
        return self._nets[key]

    def stage1(self, family: str, seed: int, dropout: float | None = None, mc_samples: int | None = None) -> Stage1:
        dropout = family_dropout(self.cfg, family, dropout)
        t = 0 if family in ("det", "nll", "zf") else (mc_samples or self.cfg.mc_samples)
        key = (family, seed, dropout, t)
        if key in self._stage1:
            return self._stage1[key]
        data = self.data
        t0 = time.perf_counter()
        if family == "zf":
            res = Stage1(family, data.zero_filled.astype(np.complex64), None, 0.0)
            res.seconds = time.perf_counter() - t0
        else:
            net, _, train_secs = self.network(family, seed, dropout)
            t0 = time.perf_counter()
            mean, sigma = reconstruct(net, family, data.recon_data(np.arange(len(data.reference))), t, seed)
            res = Stage1(family, mean, sigma, train_secs + time.perf_counter() - t0)
        if self.out is not None:
            d = self.out / "stage1" / f"{family}_p{dropout:g}_T{t}_seed{seed}"
            io.save_tensor(d / "mean.tsr", res.mean)
            if res.sigma is not None:
                io.save_tensor(d / "sigma.tsr", res.sigma)
            (d / "digest.txt").write_text(res.digest + "\n")
        self._stage1[key] = res
        return res

    def run_variant(self, variant: str, seed: int, dropout: float | None = None, mc_samples: int | None = None) -> MetricsRecord:
        """One (variant, seed) cell: stage 1 (cached), fitting on train slices, metrics on test slices."""
        family, guided = VARIANT_SPECS[variant]
        cfg, data = self.cfg, self.data
        st = self.stage1(family, seed, dropout, mc_samples)
        t0 = time.perf_counter()
        tr, te = data.splits["train"], data.splits["test"]
        sig = st.sigma
        mlp = None
        if family == "zf":
            maps = lsq_maps(cfg, st.mean[te], data.fg[te])
        else:
            mlp, thr, _ = train_fit(
                cfg, st.mean[tr], None if sig is None else sig[tr], data.ref_map[tr], data.fg[tr], guided, seed
            )
            maps = predict_maps(mlp, st.mean[te], None if sig is None else sig[te], data.fg[te], guided, thr)
        secs = st.seconds + time.perf_counter() - t0
        e, q = evaluate(maps, data.ref_map[te], data.fg[te])
        rec = MetricsRecord(variant, self.param, float(cfg.accel), seed, e, q, secs, st.digest)
        if self.out is not None:
            d = self.out / "variants" / slug(variant) / f"seed_{seed}"
            io.save_tensor(d / "param_map.tsr", maps)
            (d / "stage1_digest.txt").write_text(st.digest + "\n")
            if mlp is not None:
                io.save_weights(d / "mlp", mlp, mlp_meta(mlp, thr))
        log.info("%s seed %d: NRMSE %.4f SSIM %.4f (%.1fs)", variant, seed, e, q, secs)
        return rec


def net_meta(ucfg: recon.UnrolledConfig) -> dict:
    return {"iterations": ucfg.iterations, **dataclasses.asdict(ucfg.denoiser)}


def net_from_meta(meta: dict) -> recon.UnrolledNet:
    c = dict(meta["config"])
    iterations = c.pop("iterations")
    return recon.UnrolledNet(recon.UnrolledConfig(iterations, recon.DenoiserConfig(**c)))


def run_pipeline(cfg: ExperimentConfig, out_dir=None, experiment: Experiment | None = None) -> list[MetricsRecord]:
    """Run ``cfg.variant`` once per repeat seed; writes metrics.csv when ``out_dir`` is set."""
    exp = experiment or Experiment(cfg, out_dir)
    records = []
    for seed in cfg.repeat_seeds:
        try:
            records.append(exp.run_variant(cfg.variant, seed))
        except Exception as err:
            raise RuntimeError(f"pipeline failed for variant {cfg.variant!r}, seed {seed}: {err}") from err
    if out_dir is not None:
        cfg.dump(Path(out_dir) / "config.json")
        write_metrics_csv(records, Path(out_dir) / "metrics.csv")
    return records


# --- ablation & sweeps ---------------------------------------------------


@dataclass
class AblationResult:
    records: list
    table: list  # one dict per variant

    def format(self) -> str:
        params = sorted({k.split("_")[0] for row in self.table for k in row if k != "variant"}, reverse=True)
        head = f"{'Methods':<16}" + "".join(f"{p + ' NRMSE':>22}{p + ' SSIM':>22}" for p in params)
        lines = [head]
        for row in self.table:
            cells = ""
            for p in params:
                for m in ("nrmse", "ssim"):
                    cells += f"{row[f'{p}_{m}_mean']:>12.5f} ± {row[f'{p}_{m}_std']:<7.4f}"
            lines.append(f"{row['variant']:<16}" + cells)
        return "\n".join(lines)


def summarize(records, variants) -> list[dict]:
    table = []
    for v in variants:
        row = {"variant": v}
        for p in sorted({r.param for r in records}, reverse=True):
            sel = [r for r in records if r.variant == v and r.param == p]
            if not sel:
                continue
            for m in ("nrmse", "ssim"):
                vals = np.array([getattr(r, m) for r in sel])
                row[f"{p}_{m}_mean"] = float(vals.mean())
                row[f"{p}_{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        table.append(row)
    return table


def run_ablation(cfg: ExperimentConfig, out_dir=None, sequences=None, include_baseline: bool = False) -> AblationResult:
    """Every ablation variant over all repeat seeds; mean and sample std per variant."""
    if cfg.repeats < 2:
        raise ValueError("ablation needs at least two repeats")
    variants = list(ABLATION_VARIANTS) + (["zero-filled+LSQ"] if include_baseline else [])
    records = []
    for seq in sequences or [cfg.sequence]:
        c = cfg.replace(sequence=seq, timings=cfg.timings if seq == cfg.sequence else None)
        sub = None if out_dir is None else Path(out_dir) / seq
        exp = Experiment(c, sub)
        for seed in c.repeat_seeds:
            for v in variants:
                records.append(exp.run_variant(v, seed))
    result = AblationResult(records, summarize(records, variants))
    if out_dir is not None:
        out = Path(out_dir)
        cfg.dump(out / "config.json")
        write_metrics_csv(records, out / "metrics.csv")
        _write_rows(result.table, out / "ablation.csv")
        (out / "ablation.txt").write_text(result.format() + "\n")
    return result


SWEEP_AXES = {"mc_samples": "mc_samples", "dropout": "dropout", "accel": "accel"}


def run_sweep(cfg: ExperimentConfig, axis: str, out_dir=None, grid=None) -> list[dict]:
    """Guided vs unguided curves along one hyper-parameter axis (plot-ready rows)."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    grid = list(grid if grid is not None else SWEEP_GRIDS[cfg.preset][axis])
    rows = []
    shared = Experiment(cfg, None if out_dir is None else Path(out_dir) / "base")
    for value in grid:
        if axis == "accel":
            acs = PAPER_ACS.get(int(value), cfg.acs_frac) if cfg.preset == "paper" else cfg.acs_frac
            c = cfg.replace(accel=float(value), acs_frac=acs)
            exp = Experiment(c, None if out_dir is None else Path(out_dir) / f"accel_{value:g}")
            kw = {}
        else:
            exp = shared
            kw = {"mc_samples": int(value)} if axis == "mc_samples" else {"dropout": float(value)}
        for seed in cfg.repeat_seeds:
            for variant, label in (("PUQ", "w/ G"), ("w/o G", "w/o G")):
                rec = exp.run_variant(variant, seed, **kw)
                rows.append({"axis": axis, "value": value, "variant": label, "seed": seed, "nrmse": rec.nrmse, "ssim": rec.ssim})
    if out_dir is not None:
        _write_rows(rows, Path(out_dir) / f"sweep_{axis}.csv")
    return rows


def _write_rows(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    fields = list(rows[0])
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
