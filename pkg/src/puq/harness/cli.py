"""Command-line entry point: ``puq <subcommand> [--config F] [--preset P] [--seed S] [--out DIR]``.

Single-run subcommands share one run directory::

    DIR/config.json           resolved configuration
    DIR/phantom/*.tsr         parameter maps (phantom)
    DIR/data/*.tsr            simulated acquisition and reference (simulate)
    DIR/recon_weights/        unrolled network (train-recon)
    DIR/recon/{mean,sigma}    stage-1 outputs (reconstruct)
    DIR/fit_weights/          fitting MLP (train-fit)
    DIR/maps/                 test-slice parameter maps, .tsr plus pgm16/csv (fit)
    DIR/metrics.csv           (eval)

Each stage regenerates missing upstream inputs deterministically from the config.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, pipeline
from .config import ConfigError, ExperimentConfig, preset_config

log = logging.getLogger("puq")


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else preset_config(args.preset or "desk")
    if args.config and args.preset and args.preset != cfg.preset:
        raise ConfigError(f"--preset {args.preset} conflicts with preset {cfg.preset!r} in {args.config}")
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed, seeds=None)
    if getattr(args, "variant", None):
        cfg = cfg.replace(variant=args.variant)
    if getattr(args, "repeats", None):
        cfg = cfg.replace(repeats=args.repeats, seeds=None)
    return cfg


def _seed(cfg: ExperimentConfig) -> int:
    return cfg.repeat_seeds[0]


def _family(cfg: ExperimentConfig) -> tuple[str, bool | None]:
    return pipeline.VARIANT_SPECS[cfg.variant]


def _data(cfg, out: Path) -> pipeline.SimulatedData:
    if (out / "data" / "kspace.tsr").exists():
        return pipeline.load_data(out, cfg)
    return cmd_simulate(cfg, out)


# --- subcommands -----------------------------------------------------------


def cmd_phantom(cfg, out: Path):
    t1, t2, pd, fg = pipeline.make_phantoms(cfg)
    d = out / "phantom"
    for name, a in (("t1", t1), ("t2", t2), ("pd", pd)):
        io.save_tensor(d / f"{name}.tsr", a.astype(np.float64))
        io.export_map(a[0], d / f"{name}_slice0.pgm")
    io.save_tensor(d / "fg.tsr", fg.astype(np.float32))
    print(f"wrote {len(pd)} phantoms of {pd.shape[1]}x{pd.shape[2]} to {d}")
    return t1, t2, pd, fg


def cmd_simulate(cfg, out: Path):
    d = out / "phantom"
    phantoms = None
    if (d / "pd.tsr").exists():
        phantoms = tuple(io.load_tensor(d / f"{n}.tsr") for n in ("t1", "t2", "pd")) + (io.load_tensor(d / "fg.tsr") > 0.5,)
    data = pipeline.simulate(cfg, phantoms)
    pipeline.save_data(out, data)
    print(f"simulated {len(data.reference)} slices, R={cfg.accel:g}, {cfg.coils} coils -> {out / 'data'}")
    return data


def cmd_train_recon(cfg, out: Path):
    family, _ = _family(cfg)
    if family == "zf":
        print("zero-filled+LSQ has no reconstruction network; nothing to train")
        return None
    data = _data(cfg, out)
    seed = _seed(cfg)
    dropout = pipeline.family_dropout(cfg, family)
    net, curve = pipeline.train_stage1(cfg, family, seed, dropout, data.recon_data(data.splits["train"]))
    meta = {"family": family, "seed": seed, "config": pipeline.net_meta(net.cfg), "loss_curve": curve}
    io.save_weights(out / "recon_weights", net, meta)
    print(f"trained {family} network: loss {curve[0]:.4g} -> {curve[-1]:.4g}")
    return net


def _stale(path: Path, family: str) -> bool:
    # artifacts left behind by a different variant are regenerated rather than reused
    return not path.exists() or path.read_text().strip() != family


def _load_net(cfg, out: Path):
    d = out / "recon_weights"
    if not (d / "manifest.json").exists() or io.load_weights(d)[0]["family"] != _family(cfg)[0]:
        cmd_train_recon(cfg, out)
    meta, arrays = io.load_weights(d)
    net = pipeline.net_from_meta(meta)
    net.load_arrays(arrays)
    return net, meta


def cmd_reconstruct(cfg, out: Path):
    family, _ = _family(cfg)
    data = _data(cfg, out)
    if family == "zf":
        mean, sigma = data.zero_filled.astype(np.complex64), None
    else:
        net, meta = _load_net(cfg, out)
        everything = data.recon_data(np.arange(len(data.reference)))
        mean, sigma = pipeline.reconstruct(net, meta["family"], everything, cfg.mc_samples, _seed(cfg))
    d = out / "recon"
    io.save_tensor(d / "mean.tsr", mean)
    if sigma is not None:
        io.save_tensor(d / "sigma.tsr", sigma)
    elif (d / "sigma.tsr").exists():
        (d / "sigma.tsr").unlink()
    (d / "family.txt").write_text(family + "\n")
    print(f"stage-1 outputs ({family}) -> {d}")
    return mean, sigma


def _load_recon(cfg, out: Path):
    d = out / "recon"
    if not (d / "mean.tsr").exists() or _stale(d / "family.txt", _family(cfg)[0]):
        return cmd_reconstruct(cfg, out)
    sigma = io.load_tensor(d / "sigma.tsr") if (d / "sigma.tsr").exists() else None
    return io.load_tensor(d / "mean.tsr"), sigma


def cmd_train_fit(cfg, out: Path):
    family, guided = _family(cfg)
    if family == "zf":
        print("zero-filled+LSQ fits by least squares; nothing to train")
        return None
    data = _data(cfg, out)
    mean, sigma = _load_recon(cfg, out)
    tr = data.splits["train"]
    mlp, thr, curve = pipeline.train_fit(
        cfg, mean[tr], None if sigma is None else sigma[tr], data.ref_map[tr], data.fg[tr], guided, _seed(cfg)
    )
    io.save_weights(out / "fit_weights", mlp, {**pipeline.mlp_meta(mlp, thr), "family": family})
    print(f"trained fitting MLP ({'guided' if guided else 'unguided'}): loss {curve[0]:.4g} -> {curve[-1]:.4g}")
    return mlp


def _fit_stale(meta: dict, family: str, guided: bool) -> bool:
    return meta.get("family") != family or meta["config"]["guided"] != guided


def cmd_fit(cfg, out: Path, fmt: str = "pgm16"):
    family, guided = _family(cfg)
    data = _data(cfg, out)
    mean, sigma = _load_recon(cfg, out)
    te = data.splits["test"]
    if family == "zf":
        maps = pipeline.lsq_maps(cfg, mean[te], data.fg[te])
    else:
        d = out / "fit_weights"
        if not (d / "manifest.json").exists() or _fit_stale(io.load_weights(d)[0], family, guided):
            cmd_train_fit(cfg, out)
        meta, arrays = io.load_weights(d)
        mlp, thr = pipeline.mlp_from_meta(meta)
        mlp.load_arrays(arrays)
        maps = pipeline.predict_maps(mlp, mean[te], None if sigma is None else sigma[te], data.fg[te], guided, thr)
    d = out / "maps"
    io.save_tensor(d / "param_map.tsr", maps)
    ext = "pgm" if fmt == "pgm16" else "csv"
    for i, s in enumerate(te):
        io.export_map(maps[i], d / f"{cfg.parameter}_slice{s}.{ext}", fmt)
        io.export_map(np.abs(maps[i] - data.ref_map[s]), d / f"{cfg.parameter}_error_slice{s}.{ext}", fmt)
    print(f"{cfg.parameter} maps for {len(te)} test slices -> {d}")
    return maps


def cmd_eval(cfg, out: Path):
    data = _data(cfg, out)
    path = out / "maps" / "param_map.tsr"
    maps = io.load_tensor(path) if path.exists() else cmd_fit(cfg, out)
    te = data.splits["test"]
    e, q = pipeline.evaluate(maps, data.ref_map[te], data.fg[te])
    rec = pipeline.MetricsRecord(cfg.variant, cfg.parameter, float(cfg.accel), _seed(cfg), e, q, 0.0)
    pipeline.write_metrics_csv([rec], out / "metrics.csv")
    print(f"{cfg.variant} {cfg.parameter}: NRMSE {e:.4f} SSIM {q:.4f}")
    return rec


def cmd_ablate(cfg, out: Path, sequences=None, baseline=False):
    res = pipeline.run_ablation(cfg, out, sequences=sequences, include_baseline=baseline)
    print(res.format())
    return res


def cmd_sweep(cfg, out: Path, axis: str):
    rows = pipeline.run_sweep(cfg, axis, out)
    for r in rows:
        print(f"{axis}={r['value']:<6} {r['variant']:<6} seed={r['seed']} NRMSE={r['nrmse']:.4f} SSIM={r['ssim']:.4f}")
    return rows


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment configuration (JSON)")
    common.add_argument("--preset", choices=("desk", "paper"), help="built-in configuration when no --config is given")
    common.add_argument("--seed", type=int, help="model seed (overrides the config)")
    common.add_argument("--out", type=Path, default=Path("runs/default"), help="run directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="puq", description="Uncertainty-guided quantitative MRI on synthetic phantoms.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", parents=[common], help="generate phantom parameter maps")
    sub.add_parser("simulate", parents=[common], help="simulate undersampled multi-coil acquisitions")
    for name, text in (("train-recon", "train the unrolled reconstruction network"),
                       ("reconstruct", "stage-1 mean image and per-phase sigma"),
                       ("train-fit", "train the pixel-wise fitting MLP"),
                       ("eval", "score test-slice maps against the reference")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--variant", help="override the config variant")
    p = sub.add_parser("fit", parents=[common], help="predict test-slice parameter maps")
    p.add_argument("--variant", help="override the config variant")
    p.add_argument("--format", choices=("pgm16", "csv"), default="pgm16")
    p = sub.add_parser("ablate", parents=[common], help="all ablation variants, mean and std over repeats")
    p.add_argument("--repeats", type=int)
    p.add_argument("--sequences", nargs="+", choices=("T2prep", "MOLLI"))
    p.add_argument("--baseline", action="store_true", help="also score zero-filled+LSQ")
    p = sub.add_parser("sweep", parents=[common], help="guided vs unguided along one axis")
    p.add_argument("--axis", required=True, choices=sorted(pipeline.SWEEP_AXES))
    p.add_argument("--repeats", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    cmd = args.command
    if cmd == "phantom":
        cmd_phantom(cfg, out)
    elif cmd == "simulate":
        cmd_simulate(cfg, out)
    elif cmd == "train-recon":
        cmd_train_recon(cfg, out)
    elif cmd == "reconstruct":
        cmd_reconstruct(cfg, out)
    elif cmd == "train-fit":
        cmd_train_fit(cfg, out)
    elif cmd == "fit":
        cmd_fit(cfg, out, args.format)
    elif cmd == "eval":
        cmd_eval(cfg, out)
    elif cmd == "ablate":
        cmd_ablate(cfg, out, args.sequences, args.baseline)
    elif cmd == "sweep":
        cmd_sweep(cfg, out, args.axis)
    return 0


if __name__ == "__main__":
    sys.exit(main())
