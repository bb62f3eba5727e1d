import csv

import numpy as np
import pytest

from puq.harness import io
from puq.harness.config import ABLATION_VARIANTS, FitSection, PhantomConfig, ReconSection, desk_config
from puq.harness.pipeline import (
    Experiment,
    read_metrics_csv,
    run_ablation,
    run_pipeline,
    run_sweep,
    simulate,
)


def tiny(**changes):
    base = dict(
        phantom=PhantomConfig(height=16, width=16),
        coils=2,
        n_train=4,
        n_val=1,
        n_test=2,
        mc_samples=3,
        recon=ReconSection(iterations=2, hidden=4, epochs=2, batch_size=2),
        fit=FitSection(hidden=8, epochs=5, batch_size=64),
    )
    base.update(changes)
    return desk_config(**base)


def test_zero_filled_full_sampling_noiseless_recovers_reference():
    cfg = tiny(accel=1.0, snr=None, variant="zero-filled+LSQ")
    (rec,) = run_pipeline(cfg)
    assert rec.nrmse < 1e-4


def test_simulation_shapes_and_splits():
    cfg = tiny()
    d = simulate(cfg)
    assert d.reference.shape == (7, 8, 16, 16)
    assert sorted(np.concatenate(list(d.splits.values()))) == list(range(7))
    assert len(d.splits["train"]) == 4 and len(d.splits["test"]) == 2
    assert np.all(d.ref_map[~d.fg] == 0)


def test_guided_and_unguided_share_stage1():
    exp = Experiment(tiny())
    a = exp.run_variant("PUQ", 0)
    b = exp.run_variant("w/o G", 0)
    assert a.stage1_digest == b.stage1_digest
    # a fresh experiment reproduces the same stage-1 artifact
    assert Experiment(tiny()).stage1("mcd", 0).digest == a.stage1_digest


def test_every_variant_runs():
    exp = Experiment(tiny())
    for v in ABLATION_VARIANTS + ("zero-filled+LSQ",):
        rec = exp.run_variant(v, 0)
        assert np.isfinite(rec.nrmse) and -1 <= rec.ssim <= 1


def test_repeats_use_distinct_seeds(tmp_path):
    recs = run_pipeline(tiny(repeats=2, variant="w/o Dropout"), tmp_path)
    assert [r.seed for r in recs] == [0, 1]
    assert recs[0].nrmse != recs[1].nrmse
    rows = read_metrics_csv(tmp_path / "metrics.csv")
    assert [r["variant"] for r in rows] == ["w/o Dropout"] * 2
    with open(tmp_path / "metrics.csv") as f:
        assert next(csv.reader(f)) == ["variant", "param", "R", "seed", "nrmse", "ssim", "seconds"]


def test_pipeline_persists_artifacts(tmp_path):
    run_pipeline(tiny(), tmp_path)
    assert (tmp_path / "config.json").exists()
    m = io.load_tensor(tmp_path / "variants" / "puq" / "seed_0" / "param_map.tsr")
    assert m.shape == (2, 16, 16)
    assert list((tmp_path / "stage1").glob("mcd_*_T3_seed0/sigma.tsr"))


def test_pipeline_error_names_variant_and_seed(monkeypatch):
    exp = Experiment(tiny())

    def boom(*a, **k):
        raise FloatingPointError("nan")

    monkeypatch.setattr(exp, "stage1", boom)
    with pytest.raises(RuntimeError, match="'PUQ', seed 0"):
        run_pipeline(tiny(), experiment=exp)


def test_ablation_table(tmp_path):
    res = run_ablation(tiny(repeats=2), tmp_path)
    assert [r["variant"] for r in res.table] == list(ABLATION_VARIANTS)
    assert len(res.records) == 14
    for row in res.table:
        assert row["T2_nrmse_std"] >= 0 and np.isfinite(row["T2_nrmse_mean"])
    text = (tmp_path / "ablation.txt").read_text()
    assert all(v in text for v in ABLATION_VARIANTS) and "±" in text
    with pytest.raises(ValueError):
        run_ablation(tiny(repeats=1))


def test_sweep_rows(tmp_path):
    rows = run_sweep(tiny(), "mc_samples", tmp_path, grid=[2, 3])
    assert len(rows) == 4
    assert {r["variant"] for r in rows} == {"w/ G", "w/o G"}
    assert (tmp_path / "sweep_mc_samples.csv").exists()
    rows = run_sweep(tiny(), "accel", grid=[2, 4])
    assert [r["value"] for r in rows] == [2, 2, 4, 4]
    with pytest.raises(ValueError):
        run_sweep(tiny(), "epochs")
