"""Experiment runner and attack metrics (ASR, AML, RT, classification margin)."""

import csv
import json
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import construction
from .attack import STRATEGIES, AttackConfig, classification_margin, run_attack
from .dataset import make_split
from .errors import EmptyInputError, HgAttackError, ParameterError, SamplingError, UndefinedMetricError
from .hgnn import TrainConfig, accuracies, forward, train

# report keys that hold wall-clock measurements
RT_KEYS = frozenset({"wall_time", "rt_mean", "rt_failed_mean"})


class ExperimentError(HgAttackError):
    def __init__(self, strategy, target, cause):
        super().__init__(f"{strategy} on target {target}: {cause}")
        self.strategy = strategy
        self.target = target


def asr(outcomes):
    if not outcomes:
        raise EmptyInputError("no attack outcomes")
    return sum(o.success for o in outcomes) / len(outcomes)


def _pool(outcomes, over):
    if over == "all":
        if not outcomes:
            raise EmptyInputError("no attack outcomes")
        return outcomes
    pool = [o for o in outcomes if o.success]
    if not pool:
        raise UndefinedMetricError("no successful attacks")
    return pool


def aml(outcomes, over="successful"):
    """Mean number of flips, over successful attacks unless ``over="all"``."""
    return float(np.mean([len(o.flips) for o in _pool(outcomes, over)]))


def rt(outcomes, over="successful"):
    """Mean wall time in seconds, over successful attacks unless ``over="all"``."""
    return float(np.mean([o.wall_time for o in _pool(outcomes, over)]))


def select_targets(model, d, h, split, count, seed):
    """Uniform sample (without replacement) of correctly classified test nodes, sorted."""
    if count < 1:
        raise ParameterError(f"target count must be >= 1, got {count}")
    probs = forward(model, h, d.features)
    test = np.asarray(split.test_idx, dtype=np.int64)
    # strictly positive margin, so argmax ties never count as correct
    eligible = np.array([t for t in test
                         if classification_margin(probs[t], d.labels[t]) > 0], dtype=np.int64)
    if len(eligible) < count:
        raise SamplingError(
            f"requested {count} targets but only {len(eligible)} test nodes are "
            "correctly classified", len(eligible)
        )
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(eligible, size=count, replace=False).tolist())


@dataclass
class ExperimentSpec:
    dataset: object  # a Dataset
    dataset_name: str = "dataset"
    construction: str = "knn"
    construction_params: dict = field(default_factory=dict)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    per_class_train: int = 20
    val_size: int = 500
    test_size: int = 1000
    split_seed: int = 0
    attacks: list = field(default_factory=lambda: [AttackConfig(strategy=s) for s in STRATEGIES])
    target_count: int = 100
    target_seed: int = 0
    jobs: int = 1
    average_over: str = "successful"

    def __post_init__(self):
        if self.target_count < 1:
            raise ParameterError(f"target_count must be >= 1, got {self.target_count}")
        if self.average_over not in ("successful", "all"):
            raise ParameterError(f"average_over must be 'successful' or 'all', got {self.average_over!r}")
        if not self.attacks:
            raise ParameterError("no attack strategies requested")


@dataclass
class ExperimentReport:
    meta: dict
    results: dict
    outcomes: dict

    def to_dict(self):
        return {
            "meta": self.meta,
            "results": self.results,
            "outcomes": {s: [o.to_dict() for o in outs] for s, outs in self.outcomes.items()},
        }

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n",
                              encoding="utf-8")

    def csv_rows(self):
        return [
            {
                "strategy": s,
                "construction": self.meta["construction"]["method"],
                "dataset": self.meta["dataset"]["name"],
                "asr": r["asr"],
                "aml": r["aml"],
                "rt_mean": r["rt_mean"],
            }
            for s, r in self.results.items()
        ]

    def write_csv(self, path):
        _write_csv(path, ["strategy", "construction", "dataset", "asr", "aml", "rt_mean"],
                   self.csv_rows())

    def margin_rows(self):
        return [
            {"target": o.target, "strategy": s, "margin_before": o.margin_before,
             "margin_after": o.margin_after}
            for s, outs in self.outcomes.items() for o in outs
        ]

    def write_margins(self, path):
        _write_csv(path, ["target", "strategy", "margin_before", "margin_after"], self.margin_rows())


def _write_csv(path, fields, rows):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})


def strip_timing(obj):
    """Copy of a report dict with every wall-clock field removed."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in RT_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def summarize(outcomes, over="successful"):
    def maybe(fn):
        try:
            return fn(outcomes, over)
        except UndefinedMetricError:
            return None

    failed = [o.wall_time for o in outcomes if not o.success]
    return {
        "attacks": len(outcomes),
        "successes": sum(o.success for o in outcomes),
        "asr": asr(outcomes),
        "aml": maybe(aml),
        "rt_mean": maybe(rt),
        "rt_failed_mean": float(np.mean(failed)) if failed else None,
    }


def attack_targets(model, h, x, labels, targets, configs, jobs=1):
    """Run every config on every target; returns {strategy: [outcome per target]}."""
    jobs_list = [(cfg, t) for cfg in configs for t in targets]

    def one(job):
        cfg, t = job
        try:
            return run_attack(model, h, x, t, int(labels[t]), cfg)
        except HgAttackError as exc:
            raise ExperimentError(cfg.strategy, t, exc) from exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(one, jobs_list))
    else:
        results = [one(j) for j in jobs_list]
    out = {}
    for (cfg, _), res in zip(jobs_list, results):
        out.setdefault(cfg.strategy, []).append(res)
    return out


def _environment():
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def prepare(spec):
    """Construct, split and train for ``spec``; returns a dict of the pieces."""
    d = spec.dataset
    hg, resolved = construction.build(d.features, spec.construction, **spec.construction_params)
    split = make_split(d, spec.per_class_train, spec.val_size, spec.test_size, spec.split_seed)
    model = train(d, hg, split, spec.train_config)
    return {"hypergraph": hg, "construction_params": resolved, "split": split, "model": model,
            "accuracy": accuracies(model, d, hg, split)}


def _meta(spec, prep, targets, configs):
    hg = prep["hypergraph"]
    d = spec.dataset
    return {
        "dataset": {"name": spec.dataset_name, "num_nodes": d.num_nodes,
                    "num_classes": d.num_classes, "dim": d.dim},
        "construction": {"method": spec.construction, "params": prep["construction_params"],
                         **hg.summary()},
        "split": {"per_class_train": spec.per_class_train, "val_size": spec.val_size,
                  "test_size": spec.test_size, "seed": spec.split_seed},
        "train_config": asdict(spec.train_config),
        "accuracy": prep["accuracy"],
        "attacks": [dict(asdict(c), filter_size=c.resolved_filter_size(hg.num_edges))
                    for c in configs],
        "target_count": spec.target_count,
        "target_seed": spec.target_seed,
        "targets": targets,
        "average_over": spec.average_over,
        "assumptions": {
            "targets_from": "correctly classified test nodes",
            "split": "per-class train quota, then random validation/test",
        },
        "environment": _environment(),
    }


def run_experiment(spec, prepared=None):
    """Train once, attack every target with every strategy, aggregate metrics.

    ``prepared`` (the output of :func:`prepare`) skips construction and
    training, which sweeps use to share one victim across budgets.
    """
    prep = prepared or prepare(spec)
    d, hg, model = spec.dataset, prep["hypergraph"], prep["model"]
    targets = select_targets(model, d, hg, prep["split"], spec.target_count, spec.target_seed)
    outcomes = attack_targets(model, hg, d.features, d.labels, targets, spec.attacks, spec.jobs)
    results = {s: summarize(outs, spec.average_over) for s, outs in outcomes.items()}
    return ExperimentReport(meta=_meta(spec, prep, targets, spec.attacks),
                            results=results, outcomes=outcomes)


def _sweep_rows(param, value, report):
    return [dict(param=param, value=value, **row) for row in report.csv_rows()]


def sweep_gamma(spec, values):
    """One experiment per budget, sharing a single trained victim and target set."""
    prep = prepare(spec)
    rows = []
    for g in values:
        attacks = [replace(c, budget=int(g)) for c in spec.attacks]
        report = run_experiment(replace(spec, attacks=attacks), prepared=prep)
        rows.extend(_sweep_rows("gamma", int(g), report))
    return rows


def sweep_k(spec, values):
    """One KNN experiment (fresh construction, training and targets) per ``k``."""
    rows = []
    for k in values:
        params = dict(spec.construction_params, k=int(k))
        report = run_experiment(replace(spec, construction="knn", construction_params=params))
        rows.extend(_sweep_rows("k", int(k), report))
    return rows


SWEEP_FIELDS = ["param", "value", "strategy", "construction", "dataset", "asr", "aml", "rt_mean"]


def write_sweep_csv(path, rows):
    _write_csv(path, SWEEP_FIELDS, rows)
