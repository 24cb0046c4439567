"""Experiment orchestration: tune on validation, retrain, test, log everything.

Per round: split, then suggest -> train (resumable) -> validate -> observe
until the optimizer's budget is spent, then retrain the incumbent from
scratch on train+valid and evaluate on the test candidates. Every trial and
every final evaluation is appended to ``trials.jsonl`` as it completes.
"""
from __future__ import annotations

import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import models
from .config import ExperimentConfig
from .dataio import (Dataset, SplitDataset, SplitSpec, TrainingView, build_eval_candidates,
                     load_dataset, split_global)
from .errors import (ConfigError, CorruptCheckpoint, DivergedTraining, RecBenchError,
                     UnknownParam)
from .hpo import COMPLETED, FAILED, PRUNED, Trial, make_optimizer
from .metrics import EvalResult, aggregate_rounds, evaluate_rankings
from .models import BUDGET_INSENSITIVE, TrainState, checkpoint_key, top_by_score
from .models import state as ckpt

log = logging.getLogger(__name__)

LOG_NAME = "trials.jsonl"
TUNING_METRIC = ("ndcg", 10)


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class TrialLog:
    """Append-only JSON Lines writer (single writer, flushed per record)."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")

    def append(self, record: dict) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(_dumps(record) + "\n")


def read_log(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointStore:
    """Checkpoints named ``<key>.e<epoch>.ckpt``; only the latest epoch per key is kept."""

    def __init__(self, root, enabled: bool = True):
        self.root = Path(root)
        self.enabled = enabled

    def _files(self, key: str) -> list[tuple[int, Path]]:
        if not self.root.is_dir():
            return []
        out = []
        for p in self.root.glob(f"{key}.e*.ckpt"):
            try:
                out.append((int(p.name[len(key) + 2:-5]), p))
            except ValueError:
                continue
        return sorted(out)

    def latest(self, key: str, max_epoch: int | None = None, any_epoch: bool = False):
        files = self._files(key)
        if not any_epoch and max_epoch is not None:
            files = [(e, p) for e, p in files if e <= max_epoch]
        return files[-1] if files else None

    def save(self, key: str, state: TrainState) -> None:
        if not self.enabled:
            return
        stale = self._files(key)
        ckpt.save(state, self.root / f"{key}.e{state.epochs_done}.ckpt")
        for e, p in stale:
            if e < state.epochs_done:
                p.unlink(missing_ok=True)

    def purge(self) -> None:
        shutil.rmtree(self.root, ignore_errors=True)


def train_with_cache(store: CheckpointStore, model: str, dataset_id: str, config: dict,
                     seed: int, to_epoch: int, view: TrainingView) -> tuple[TrainState, int]:
    """Train ``config`` to ``to_epoch`` epochs, resuming from the best checkpoint.

    Returns the state and the number of epochs actually executed. A promoted
    configuration therefore costs ``to_epoch - previous_budget`` epochs.
    """
    key = checkpoint_key(model, dataset_id, config, seed)
    state = None
    start = 0
    if store.enabled:
        hit = store.latest(key, to_epoch, any_epoch=model in BUDGET_INSENSITIVE)
        if hit is not None:
            try:
                state = ckpt.load(hit[1])
                start = min(state.epochs_done, to_epoch)
                state.epochs_done = start
            except (CorruptCheckpoint, OSError, ValueError, KeyError) as exc:
                log.warning("discarding corrupt checkpoint %s (%s)", hit[1], exc)
                hit[1].unlink(missing_ok=True)
                state, start = None, 0
    if state is None:
        state = models.init_state(model, config, view.n_users, view.n_items, seed)
    models.train(state, view, to_epoch)
    store.save(key, state)
    return state, to_epoch - start


# ---------------------------------------------------------------------------
# evaluation


def rank_candidates(state: TrainState, candidates: dict[int, np.ndarray], n: int) -> dict[int, np.ndarray]:
    out = {}
    for user, cands in candidates.items():
        out[user] = top_by_score(cands, models.score(state, user, cands), n)
    return out


def evaluate(state: TrainState, candidates: dict[int, np.ndarray], targets,
             cutoffs: Iterable[int]) -> dict[tuple[str, int], EvalResult]:
    """HR/NDCG at each cutoff; ``targets`` is a user x item CSR matrix."""
    cutoffs = tuple(cutoffs)
    rankings = rank_candidates(state, candidates, max(cutoffs))
    target_sets = {u: targets.indices[targets.indptr[u]:targets.indptr[u + 1]] for u in candidates}
    return evaluate_rankings(rankings, target_sets, cutoffs)


def metric_key(metric: str, cutoff: int) -> str:
    return f"{metric}@{cutoff}"


# ---------------------------------------------------------------------------
# reports


@dataclass
class RunReport:
    dataset: str
    model: str
    optimizer: str
    metrics: dict[str, tuple[float, float]]  # "ndcg@5" -> (mean, std)
    per_round: dict[int, dict[str, float]]
    best_configs: dict[int, dict]
    n_trials: dict[str, int]
    wall_seconds: float
    failed_rounds: list[int] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for key in sorted(self.metrics, key=_metric_sort):
            metric, cutoff = key.split("@")
            mean, std = self.metrics[key]
            out.append({"dataset": self.dataset, "model": self.model, "optimizer": self.optimizer,
                        "metric": metric, "cutoff": int(cutoff), "mean": mean, "std": std,
                        "rounds": len(self.per_round)})
        return out


def _metric_sort(key: str):
    metric, cutoff = key.split("@")
    return (0 if metric == "ndcg" else 1, int(cutoff))


def report_from_log(records: list[dict]) -> list[RunReport]:
    """Rebuild reports from log records alone, one per (dataset, model, optimizer)."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        groups.setdefault((rec["dataset"], rec["model"], rec["optimizer"]), []).append(rec)
    reports = []
    for (dataset, model, optimizer), recs in groups.items():
        finals = sorted((r for r in recs if r.get("type") == "final"), key=lambda r: r["round"])
        per_round = {r["round"]: r["test_metrics"] for r in finals}
        keys = sorted({k for m in per_round.values() for k in m}, key=_metric_sort)
        metrics = {k: aggregate_rounds([per_round[r][k] for r in per_round]) for k in keys} if finals else {}
        trials = [r for r in recs if r.get("type") == "trial"]
        counts = {s: sum(1 for t in trials if t["status"] == s) for s in (COMPLETED, PRUNED, FAILED)}
        wall = sum(r["wall_seconds"] for r in trials) + sum(r["wall_seconds"] for r in finals)
        reports.append(RunReport(
            dataset, model, optimizer, metrics, per_round,
            {r["round"]: r["best_config"] for r in finals}, counts, wall,
            sorted(r["round"] for r in recs if r.get("type") == "round_failed"),
        ))
    return reports


def report_table(reports: list[RunReport], metric: str | None = None, cutoff: int | None = None) -> str:
    rows = [row for rep in reports for row in rep.rows()
            if (metric is None or row["metric"] == metric) and (cutoff is None or row["cutoff"] == cutoff)]
    header = ["dataset", "model", "optimizer", "metric", "mean±std", "rounds"]
    body = [[r["dataset"], r["model"], r["optimizer"], metric_key(r["metric"], r["cutoff"]),
             f"{r['mean']:.4f}±{r['std']:.4f}", str(r["rounds"])] for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"


def report_csv(reports: list[RunReport]) -> str:
    lines = ["dataset,model,optimizer,metric,cutoff,mean,std,rounds"]
    for rep in reports:
        for r in rep.rows():
            lines.append(f"{r['dataset']},{r['model']},{r['optimizer']},{r['metric']},"
                         f"{r['cutoff']},{r['mean']!r},{r['std']!r},{r['rounds']}")
    return "\n".join(lines) + "\n"


def metrics_csv(records: list[dict]) -> str:
    """Long-format per-round test metrics."""
    lines = ["dataset,model,optimizer,metric,cutoff,round,value"]
    for r in records:
        if r.get("type") != "final":
            continue
        for key in sorted(r["test_metrics"], key=_metric_sort):
            metric, cutoff = key.split("@")
            lines.append(f"{r['dataset']},{r['model']},{r['optimizer']},{metric},{cutoff},"
                         f"{r['round']},{r['test_metrics'][key]!r}")
    return "\n".join(lines) + "\n"


def export_trace(records: list[dict], param: str, round: int | None = None) -> list[dict]:
    """Plot-ready search trajectory for one hyperparameter.

    One row per completed or pruned trial in completion order. The single
    row flagged ``is_incumbent`` is the final best completed trial.
    """
    trials = [r for r in records if r.get("type") == "trial"]
    if round is None and trials:
        round = min(r["round"] for r in trials)
    trials = [r for r in trials if r["round"] == round and r["status"] in (COMPLETED, PRUNED)]
    if not trials:
        raise UnknownParam(f"no trials logged for round {round}")
    if param not in trials[0]["config"]:
        raise UnknownParam(f"unknown hyperparameter {param!r}; have {sorted(trials[0]['config'])}")
    best = None
    for r in trials:
        if r["status"] == COMPLETED and (best is None or r["objective"] < best["objective"]):
            best = r
    return [{"elapsed_seconds": r["elapsed_seconds"], "value": r["config"][param],
             "objective": r["objective"], "is_incumbent": best is not None and r is best}
            for r in trials]


def trace_csv(rows: list[dict]) -> str:
    lines = ["elapsed_seconds,value,objective,is_incumbent"]
    for r in rows:
        lines.append(f"{r['elapsed_seconds']!r},{r['value']!r},{r['objective']!r},{int(r['is_incumbent'])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# the experiment loop


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(9, stream)))


class _Clock:
    def __init__(self, mode: str):
        self.mode = mode
        self.start = time.perf_counter()
        self.logical = 0.0

    def measure(self, t0: float, epochs: int) -> tuple[float, float]:
        """(duration, elapsed since loop start) for an event that began at ``t0``."""
        if self.mode == "logical":
            self.logical += epochs
            return float(epochs), self.logical
        now = time.perf_counter()
        return now - t0, now - self.start


def run_round(cfg: ExperimentConfig, dataset: Dataset, round_idx: int, out_dir: Path,
              trial_log: TrialLog) -> dict:
    seed = cfg.seed + round_idx
    ident = {"dataset": cfg.dataset.name, "model": cfg.model, "optimizer": cfg.optimizer.algorithm}
    split = split_global(dataset, SplitSpec(cfg.split_method, cfg.test_ratio, cfg.valid_ratio, seed))
    split.save(out_dir / f"round_{round_idx}" / "split")
    valid_cands = build_eval_candidates(split, cfg.pool_size, _rng(seed, 0), target="valid")
    test_cands = build_eval_candidates(split, cfg.pool_size, _rng(seed, 1), target="test")
    valid_targets = split.matrix("valid")
    view = split.training_view(final=False)
    store = CheckpointStore(out_dir / "checkpoints" / f"round_{round_idx}", enabled=cfg.cache)
    dataset_id = f"{dataset.fingerprint}:{split.spec.method}:{seed}"

    s = cfg.optimizer
    opt = make_optimizer(s.algorithm, cfg.space, s.seed if s.seed is not None else seed,
                         trials=s.trials, b_min=s.b_min, b_max=s.b_max, eta=s.eta, **s.extra)
    clock = _Clock(cfg.clock)
    trial_id = 0
    try:
        while not opt.done():
            config, budget = opt.suggest()
            t0 = time.perf_counter()
            bracket = getattr(opt, "current_bracket", None)
            try:
                state, trained = train_with_cache(store, cfg.model, dataset_id, config, seed, budget, view)
                res = evaluate(state, valid_cands, valid_targets, [TUNING_METRIC[1]])
                ndcg10 = res[TUNING_METRIC].mean
                status = COMPLETED if budget >= s.b_max else PRUNED
            except DivergedTraining as exc:
                log.warning("trial %d diverged at epoch %d", trial_id, exc.epoch)
                ndcg10, status, trained = None, FAILED, exc.epoch
            objective = 1.0 if ndcg10 is None else min(max(1.0 - ndcg10, 0.0), 1.0)
            wall, elapsed = clock.measure(t0, trained)
            trial = Trial(trial_id, config, budget, objective, wall, status)
            opt.observe(trial)
            trial_log.append({"type": "trial", "round": round_idx, **ident, **trial.to_json(),
                              "valid_ndcg10": ndcg10, "elapsed_seconds": elapsed,
                              "epochs_trained": trained, "bracket": bracket})
            trial_id += 1
        if opt.incumbent is None:
            raise RecBenchError("no completed trial to select a configuration from")
        best = opt.incumbent
        t0 = time.perf_counter()
        final_view = split.training_view(final=True)
        state = models.init_state(cfg.model, best.config, split.n_users, split.n_items, seed)
        models.train(state, final_view, cfg.epochs)
        res = evaluate(state, test_cands, split.matrix("test"), cfg.cutoffs)
        test_metrics = {metric_key(m, n): r.mean for (m, n), r in sorted(res.items())}
        wall, _ = clock.measure(t0, cfg.epochs)
        record = {"type": "final", "round": round_idx, **ident, "best_config": best.config,
                  "best_trial_id": best.trial_id, "test_metrics": test_metrics,
                  "test_users": len(test_cands), "wall_seconds": wall}
        trial_log.append(record)
        return record
    finally:
        if not cfg.keep_checkpoints:
            store.purge()


def run_experiment(cfg: ExperimentConfig, out_dir, dataset: Dataset | None = None) -> RunReport:
    """Run every round, then write ``report.csv``, ``report.txt`` and ``metrics.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = load_dataset(cfg.dataset.path, cfg.dataset.format, cfg.dataset.mode,
                               cfg.dataset.threshold)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
    trial_log = TrialLog(out_dir / LOG_NAME)
    ident = {"dataset": cfg.dataset.name, "model": cfg.model, "optimizer": cfg.optimizer.algorithm}
    completed = 0
    for r in range(cfg.rounds):
        try:
            run_round(cfg, dataset, r, out_dir, trial_log)
            completed += 1
        except ConfigError:
            raise
        except Exception as exc:  # noqa: BLE001 - a failing round must not sink the others
            log.error("round %d failed: %s", r, exc)
            trial_log.append({"type": "round_failed", "round": r, **ident,
                              "error": f"{type(exc).__name__}: {exc}"})
    if not cfg.keep_checkpoints:
        shutil.rmtree(out_dir / "checkpoints", ignore_errors=True)
    if completed == 0:
        raise RecBenchError("every round failed; see trials.jsonl")
    records = read_log(trial_log.path)
    reports = report_from_log(records)
    (out_dir / "report.csv").write_text(report_csv(reports))
    (out_dir / "report.txt").write_text(report_table(reports))
    (out_dir / "metrics.csv").write_text(metrics_csv(records))
    return reports[0]
