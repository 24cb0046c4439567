import json
import logging
import math
import statistics

import numpy as np
import pytest

from recbench import models
from recbench.config import DatasetSpec, ExperimentConfig, OptimizerSettings
from recbench.data import bundled_path
from recbench.errors import RecBenchError, UnknownParam
from recbench.models import state as ckpt
from recbench.runner import (LOG_NAME, CheckpointStore, export_trace, read_log, report_from_log,
                             run_experiment, trace_csv, train_with_cache)

TIMING = ("wall_seconds", "elapsed_seconds")


def make_cfg(model="bprmf", algorithm="random", trials=3, rounds=1, **kw):
    opt = OptimizerSettings(algorithm=algorithm, trials=trials)
    kw.setdefault("pool_size", 100)
    return ExperimentConfig(dataset=DatasetSpec(bundled_path(), name="synthetic50"), model=model,
                            optimizer=opt, rounds=rounds, **kw)


def _strip_timing(path):
    out = []
    for rec in read_log(path):
        out.append({k: v for k, v in rec.items() if k not in TIMING})
    return out


def test_structural_count_and_outputs(tmp_path):
    run_experiment(make_cfg(), tmp_path)
    recs = read_log(tmp_path / LOG_NAME)
    assert [r["type"] for r in recs] == ["trial"] * 3 + ["final"]
    for name in ("config.json", "report.csv", "report.txt", "metrics.csv"):
        assert (tmp_path / name).is_file()
    for name in ("split.json", "train.tsv", "valid.tsv", "test.tsv"):
        assert (tmp_path / "round_0" / "split" / name).is_file()
    assert not (tmp_path / "checkpoints").exists()  # purged unless kept
    final = recs[-1]
    assert set(final["test_metrics"]) == {"hr@5", "hr@10", "ndcg@5", "ndcg@10"}
    assert final["best_trial_id"] == min(recs[:3], key=lambda r: (r["objective"], r["trial_id"]))["trial_id"]
    for r in recs[:3]:
        assert r["status"] == "completed" and r["budget_epochs"] == 30
        assert r["objective"] == pytest.approx(1 - r["valid_ndcg10"], abs=1e-15)
        assert {"trial_id", "round", "model", "optimizer", "dataset", "config", "budget_epochs",
                "objective", "valid_ndcg10", "wall_seconds", "status"} <= set(r)


@pytest.mark.parametrize("model,algorithm", [("bprmf", "tpe"), ("itemknn", "hyperband"),
                                             ("fm", "bohb")])
def test_rerun_byte_identical_with_logical_clock(tmp_path, model, algorithm):
    cfg = make_cfg(model, algorithm, trials=2, clock="logical")
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    assert (tmp_path / "a" / LOG_NAME).read_bytes() == (tmp_path / "b" / LOG_NAME).read_bytes()
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()


def test_rerun_wall_clock_differs_only_in_timing(tmp_path):
    cfg = make_cfg("puresvd", "anneal", trials=3)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    assert _strip_timing(tmp_path / "a" / LOG_NAME) == _strip_timing(tmp_path / "b" / LOG_NAME)


def test_report_matches_independent_reducer(tmp_path):
    rep = run_experiment(make_cfg("itemknn", "random", trials=2, rounds=3), tmp_path)
    finals = [json.loads(line) for line in (tmp_path / LOG_NAME).read_text().splitlines()
              if json.loads(line)["type"] == "final"]
    assert len(finals) == 3
    for key in ("hr@5", "hr@10", "ndcg@5", "ndcg@10"):
        vals = [f["test_metrics"][key] for f in finals]
        mean, std = rep.metrics[key]
        assert abs(mean - statistics.fmean(vals)) <= 1e-12
        assert abs(std - statistics.stdev(vals)) <= 1e-12
    replay = report_from_log(read_log(tmp_path / LOG_NAME))
    assert replay[0].metrics == rep.metrics
    rows = (tmp_path / "report.csv").read_text().splitlines()
    assert rows[0] == "dataset,model,optimizer,metric,cutoff,mean,std,rounds"
    assert len(rows) == 5


def test_rounds_use_distinct_seeds(tmp_path):
    run_experiment(make_cfg("itemknn", trials=1, rounds=2), tmp_path)
    a = (tmp_path / "round_0" / "split" / "test.tsv").read_text()
    b = (tmp_path / "round_1" / "split" / "test.tsv").read_text()
    assert a != b


def test_hyperband_epoch_ledger(tmp_path):
    run_experiment(make_cfg("bprmf", "hyperband", trials=2, clock="logical"), tmp_path)
    trials = [r for r in read_log(tmp_path / LOG_NAME) if r["type"] == "trial"]
    # two full-budget trials' worth is 60 epochs; one schedule (110 epochs) covers it
    assert sum(r["epochs_trained"] for r in trials) == 110
    assert [(r["budget_epochs"], r["status"]) for r in trials] == \
        [(10, "pruned")] * 3 + [(30, "completed")] * 3
    assert trials[3]["epochs_trained"] == 20
    assert trials[3]["config"] == min(trials[:3], key=lambda r: (r["objective"], r["trial_id"]))["config"]


def test_failed_round_is_logged_and_others_continue(tmp_path, monkeypatch):
    real = models.train
    calls = {"n": 0}

    def flaky(state, view, to_epoch):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("boom")
        return real(state, view, to_epoch)

    monkeypatch.setattr(models, "train", flaky)
    rep = run_experiment(make_cfg("itemknn", trials=1, rounds=2), tmp_path)
    types = [r["type"] for r in read_log(tmp_path / LOG_NAME)]
    assert types == ["round_failed", "trial", "final"]
    assert rep.failed_rounds == [0] and list(rep.per_round) == [1]


def test_every_round_failing_raises(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(models, "train", broken)
    with pytest.raises(RecBenchError):
        run_experiment(make_cfg("itemknn", trials=1, rounds=2), tmp_path)


def test_diverged_trial_marked_failed(tmp_path):
    from recbench.searchspace import ParamSpec, SearchSpace
    space = SearchSpace((ParamSpec.categorical("num_ng", [1]), ParamSpec.categorical("factors", [8]),
                         ParamSpec.categorical("lr", [1e6]), ParamSpec.categorical("reg_2", [1.0])))
    cfg = make_cfg("bprmf", trials=1, space=space)
    with pytest.raises(RecBenchError):
        run_experiment(cfg, tmp_path)
    rec = read_log(tmp_path / LOG_NAME)
    assert rec[0]["status"] == "failed" and rec[0]["objective"] == 1.0
    assert rec[1]["type"] == "round_failed"


# train_with_cache ---------------------------------------------------------------

CFG = {"num_ng": 1, "factors": 4, "lr": 0.05, "reg_2": 1e-3}


def test_promotion_resumes_and_matches_straight_training(tmp_path, small_view):
    store = CheckpointStore(tmp_path)
    s10, n10 = train_with_cache(store, "bprmf", "d", CFG, 3, 10, small_view)
    s30, n30 = train_with_cache(store, "bprmf", "d", CFG, 3, 30, small_view)
    assert (n10, n30) == (10, 20)
    assert [p.name for p in tmp_path.iterdir()] == [f"{ckpt.checkpoint_key('bprmf', 'd', CFG, 3)}.e30.ckpt"]
    straight = models.train(models.init_state("bprmf", CFG, small_view.n_users, small_view.n_items, 3),
                            small_view, 30)
    for name in straight.params:
        assert straight.params[name].tobytes() == s30.params[name].tobytes()


def test_cache_disabled_always_trains_from_scratch(tmp_path, small_view):
    store = CheckpointStore(tmp_path, enabled=False)
    train_with_cache(store, "bprmf", "d", CFG, 0, 10, small_view)
    _, n = train_with_cache(store, "bprmf", "d", CFG, 0, 30, small_view)
    assert n == 30
    assert not tmp_path.exists() or not any(tmp_path.iterdir())


def test_corrupt_checkpoint_discarded(tmp_path, small_view, caplog):
    store = CheckpointStore(tmp_path)
    train_with_cache(store, "fm", "d", CFG, 0, 10, small_view)
    (path,) = tmp_path.iterdir()
    path.write_bytes(b"RBCKPT\x00\x00")
    with caplog.at_level(logging.WARNING):
        state, n = train_with_cache(store, "fm", "d", CFG, 0, 30, small_view)
    assert n == 30 and state.epochs_done == 30
    assert "corrupt" in caplog.text


def test_budget_insensitive_models_reuse_any_checkpoint(tmp_path, small_view):
    store = CheckpointStore(tmp_path)
    train_with_cache(store, "itemknn", "d", {"maxk": 5}, 0, 30, small_view)
    state, _ = train_with_cache(store, "itemknn", "d", {"maxk": 5}, 0, 10, small_view)
    assert state.epochs_done == 10 and state.params


# traces -------------------------------------------------------------------------

def test_export_trace(tmp_path):
    run_experiment(make_cfg("bprmf", "random", trials=4), tmp_path)
    recs = read_log(tmp_path / LOG_NAME)
    rows = export_trace(recs, "lr")
    trials = [r for r in recs if r["type"] == "trial"]
    assert [r["value"] for r in rows] == [t["config"]["lr"] for t in trials]
    elapsed = [r["elapsed_seconds"] for r in rows]
    assert elapsed == sorted(elapsed)
    flagged = [k for k, r in enumerate(rows) if r["is_incumbent"]]
    final = recs[-1]
    assert flagged == [final["best_trial_id"]]
    csv = trace_csv(rows).splitlines()
    assert csv[0] == "elapsed_seconds,value,objective,is_incumbent" and len(csv) == 5
    with pytest.raises(UnknownParam):
        export_trace(recs, "momentum")
