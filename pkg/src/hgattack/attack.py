"""Structure attacks on a single target node's incidence row.

All strategies only ever touch the target's row, work on a private copy of
it, and apply their flips one at a time, stopping as soon as the target is
misclassified.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, ParameterError, PreconditionError
from .hgnn import TargetEngine

STRATEGIES = ("RanD", "RanA", "DiceA", "FGA", "IGA", "HyperAttack")
MAX_BUDGET = 10
ADD, REMOVE = "add", "remove"


def default_filter_size(num_edges):
    return min(num_edges, max(16, math.ceil(num_edges / 12)))


@dataclass(frozen=True)
class AttackConfig:
    strategy: str = "HyperAttack"
    budget: int = 10
    filter_size: int = None  # None: max(16, ceil(|E| / 12))
    ig_steps: int = 20
    seed: int = 0
    ig_path: str = "coordinate"  # or "row"
    score: str = "signed"  # or "absolute"
    frozen_norm: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ParameterError(
                f"unknown strategy {self.strategy!r}; valid: {', '.join(STRATEGIES)}"
            )
        if not 1 <= self.budget <= MAX_BUDGET:
            raise ParameterError(f"budget must be in [1, {MAX_BUDGET}], got {self.budget}")
        if self.filter_size is not None and self.filter_size < 1:
            raise ParameterError(f"filter_size must be >= 1, got {self.filter_size}")
        if self.ig_steps < 1:
            raise ParameterError(f"ig_steps must be >= 1, got {self.ig_steps}")
        if self.ig_path not in ("coordinate", "row"):
            raise ParameterError(f"ig_path must be 'coordinate' or 'row', got {self.ig_path!r}")
        if self.score not in ("signed", "absolute"):
            raise ParameterError(f"score must be 'signed' or 'absolute', got {self.score!r}")

    def resolved_filter_size(self, num_edges):
        if self.filter_size is None:
            return default_filter_size(num_edges)
        if self.filter_size > num_edges:
            raise ParameterError(f"filter_size {self.filter_size} exceeds {num_edges} hyperedges")
        return self.filter_size


@dataclass(frozen=True)
class Flip:
    edge: int
    direction: str

    def to_list(self):
        return [self.edge, self.direction]


@dataclass
class AttackOutcome:
    target: int
    strategy: str
    label: int
    success: bool
    flips: list
    margin_before: float
    margin_after: float
    wall_time: float
    predicted_after: int = None
    notes: dict = field(default_factory=dict)

    def perturbed_row(self, row):
        row = np.array(row, dtype=np.float64)
        for f in self.flips:
            row[f.edge] = 1.0 if f.direction == ADD else 0.0
        return row

    def perturbed(self, h):
        """Copy of ``h`` with this outcome's flips applied to the target row."""
        return h.with_row(self.target, self.perturbed_row(h.row(self.target)))

    def to_dict(self):
        return {
            "target": self.target,
            "strategy": self.strategy,
            "label": self.label,
            "success": self.success,
            "flips": [f.to_list() for f in self.flips],
            "margin_before": self.margin_before,
            "margin_after": self.margin_after,
            "predicted_after": self.predicted_after,
            "wall_time": self.wall_time,
        }


def classification_margin(prob_row, true_class):
    """True-class probability minus the best competing class probability."""
    z = np.asarray(prob_row, dtype=np.float64)
    rivals = np.delete(z, true_class)
    return float(z[true_class] - rivals.max())


def _predicted(probs, label):
    """Predicted class; an exact tie with the true class counts as the true class."""
    best = int(np.argmax(probs))
    return label if probs[label] == probs[best] else best


def fast_filter(g, h_row, m_size):
    """Top-``m_size`` loss-increasing feasible flips ranked by ``|g|``.

    A flip is feasible and loss-increasing when the entry is 0 with a positive
    gradient (add) or 1 with a negative gradient (remove).
    """
    g = np.asarray(g, dtype=np.float64)
    gain = g * (1.0 - 2.0 * np.asarray(h_row, dtype=np.float64))
    feasible = np.flatnonzero(gain > 0)
    order = np.argsort(-gain[feasible], kind="stable")
    return feasible[order[:m_size]].tolist()


def _direction(value):
    return REMOVE if value != 0 else ADD


def _coordinate_path(current, steps, baseline):
    k = np.arange(1, steps + 1) / steps
    return baseline + k * (current - baseline)


def _ig_coordinate(engine, edge, steps, baseline=None):
    r0 = engine.row0
    current = r0[edge]
    if baseline is None:
        baseline = 0.0 if current != 0 else 1.0
    # unsigned displacement: both branches then estimate L(entry=1) - L(entry=0)
    factor = abs(current - baseline)
    if factor == 0:
        return 0.0
    active = np.union1d(np.flatnonzero(r0), [edge])
    local = engine.restricted(active)
    pos = int(np.searchsorted(active, edge))
    rows = np.repeat(r0[active][None], steps, axis=0)
    rows[:, pos] = _coordinate_path(current, steps, baseline)
    grads = local.loss_and_grad(rows)[1][:, pos]
    return float(factor * grads.sum() / steps)


def _ig_row(engine, edges, steps):
    """Whole-row path: every row entry moves together from the all-0 / all-1 baseline."""
    r0 = engine.row0
    k = (np.arange(1, steps + 1) / steps)[:, None]
    out = {}
    if any(r0[e] != 0 for e in edges):
        from_zero = engine.grad_batch(k * r0[None]).sum(axis=0)
        out.update({e: float(r0[e] * from_zero[e] / steps) for e in edges if r0[e] != 0})
    if any(r0[e] == 0 for e in edges):
        from_one = engine.grad_batch(1.0 - k * (1.0 - r0[None])).sum(axis=0)
        out.update({e: float((1.0 - r0[e]) * from_one[e] / steps) for e in edges if r0[e] == 0})
    return {e: out[e] for e in edges}


def ig_scores(engine, edges, steps, path="coordinate"):
    """Integrated gradient for each edge in ``edges`` (dict edge -> value)."""
    edges = [int(e) for e in edges]
    if path == "row":
        return _ig_row(engine, edges, steps)
    return {e: _ig_coordinate(engine, e, steps) for e in edges}


def integrated_gradient(model, h, x, target, y, edge, steps=20, path="coordinate",
                        baseline=None, engine=None):
    """Integrated gradient of the target loss along the target-row entry ``edge``.

    The baseline is 0 for a connected entry and 1 for an unconnected one; the
    path is approximated by the mean gradient at ``steps`` right-endpoint
    points, times the entry's displacement. ``path="row"`` moves the whole
    target row instead of the single entry.
    """
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    engine = engine or TargetEngine(model, h, x, target, y)
    if not 0 <= edge < engine.num_edges:
        raise ParameterError(f"edge {edge} out of range")
    if path == "row":
        return _ig_row(engine, [edge], steps)[edge]
    return _ig_coordinate(engine, edge, steps, baseline)


def ig_select(model, h, x, target, y, candidates, n, steps=20, path="coordinate",
              score="signed", engine=None):
    """Rank candidate flips by integrated-gradient score; keep the top ``n`` with score > 0."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    engine = engine or TargetEngine(model, h, x, target, y)
    ig = ig_scores(engine, candidates, steps, path)
    r0 = engine.row0
    scored = []
    for e, value in ig.items():
        direction = _direction(r0[e])
        if score == "absolute":
            s = abs(value)
        else:
            s = value if direction == ADD else -value
        if s > 0:
            scored.append((-s, e, direction))
    scored.sort()
    return [Flip(e, d) for _, e, d in scored[:n]]


def _start(model, h, x, target, y, cfg):
    engine = TargetEngine(model, h, x, target, y, frozen=cfg.frozen_norm)
    # checked before the margin: an isolated node is uniformly classified
    if cfg.strategy in ("RanD", "DiceA") and not np.any(engine.row0):
        raise DegenerateInputError(f"target {target} has no incident hyperedges")
    probs = engine.probs()
    margin = classification_margin(probs, engine.label)
    if not margin > 0:
        raise PreconditionError(
            f"target {target} is already misclassified (margin {margin:.4f})"
        )
    return engine, margin


def _apply(engine, flips, cfg, start, margin_before, notes=None):
    r = engine.row0.copy()
    applied = []
    margin = margin_before
    probs = None
    for f in flips[:cfg.budget]:
        r[f.edge] = 1.0 if f.direction == ADD else 0.0
        applied.append(f)
        probs = engine.probs(r)
        margin = classification_margin(probs, engine.label)
        if margin < 0:
            break
    elapsed = time.perf_counter() - start
    if probs is None:
        probs = engine.probs(r)
    return AttackOutcome(
        target=engine.target,
        strategy=cfg.strategy,
        label=engine.label,
        success=margin < 0,
        flips=applied,
        margin_before=margin_before,
        margin_after=margin,
        wall_time=elapsed,
        predicted_after=_predicted(probs, engine.label),
        notes=notes or {},
    )


def run_hyperattack(model, h, x, target, y, cfg=None):
    """Gradient filter -> integrated-gradient ranking -> incremental flips."""
    cfg = cfg or AttackConfig()
    start = time.perf_counter()
    engine, margin = _start(model, h, x, target, y, cfg)
    m_size = cfg.resolved_filter_size(engine.num_edges)
    candidates = fast_filter(engine.grad(), engine.row0, m_size)
    flips = ig_select(None, h, x, target, y, candidates, cfg.budget, cfg.ig_steps,
                      cfg.ig_path, cfg.score, engine=engine)
    return _apply(engine, flips, cfg, start, margin, {"candidates": len(candidates)})


def _rng(cfg, target):
    return np.random.default_rng([cfg.seed, int(target)])


def _random_delete(engine, cfg):
    incident = np.flatnonzero(engine.row0)
    if incident.size == 0:
        raise DegenerateInputError(f"target {engine.target} has no incident hyperedges")
    chosen = _rng(cfg, engine.target).permutation(incident)[:cfg.budget]
    return [Flip(int(e), REMOVE) for e in chosen]


def _random_modify(engine, cfg):
    chosen = _rng(cfg, engine.target).permutation(engine.num_edges)[:cfg.budget]
    return [Flip(int(e), _direction(engine.row0[e])) for e in chosen]


def _dice(engine, cfg):
    r0 = engine.row0
    incident = np.flatnonzero(r0)
    if incident.size == 0:
        raise DegenerateInputError(f"target {engine.target} has no incident hyperedges")
    rng = _rng(cfg, engine.target)
    n_remove = min(cfg.budget // 2, incident.size)
    removes = rng.permutation(incident)[:n_remove]
    adds = rng.permutation(np.flatnonzero(r0 == 0))[:cfg.budget - n_remove]
    return [Flip(int(e), REMOVE) for e in removes] + [Flip(int(e), ADD) for e in adds]


def _fga(engine, cfg, start, margin_before):
    """Greedy: recompute the gradient after every flip, take the largest feasible gain."""
    r = engine.row0.copy()
    touched = np.zeros(engine.num_edges, dtype=bool)
    flips = []
    margin = margin_before
    probs = None
    for _ in range(cfg.budget):
        g = engine.grad(r)
        gain = g * (1.0 - 2.0 * r)
        gain[touched] = -np.inf
        best = int(np.argmax(gain))
        if not gain[best] > 0:
            break
        f = Flip(best, _direction(r[best]))
        r[best] = 1.0 - r[best]
        touched[best] = True
        flips.append(f)
        probs = engine.probs(r)
        margin = classification_margin(probs, engine.label)
        if margin < 0:
            break
    elapsed = time.perf_counter() - start
    if probs is None:
        probs = engine.probs(r)
    return AttackOutcome(
        target=engine.target, strategy=cfg.strategy, label=engine.label,
        success=margin < 0, flips=flips, margin_before=margin_before,
        margin_after=margin, wall_time=elapsed, predicted_after=_predicted(probs, engine.label),
    )


def run_baseline(model, h, x, target, y, cfg):
    """RanD, RanA, DiceA, FGA or IGA according to ``cfg.strategy``."""
    start = time.perf_counter()
    engine, margin = _start(model, h, x, target, y, cfg)
    if cfg.strategy == "RanD":
        flips = _random_delete(engine, cfg)
    elif cfg.strategy == "RanA":
        flips = _random_modify(engine, cfg)
    elif cfg.strategy == "DiceA":
        flips = _dice(engine, cfg)
    elif cfg.strategy == "FGA":
        return _fga(engine, cfg, start, margin)
    elif cfg.strategy == "IGA":
        flips = ig_select(None, h, x, target, y, range(engine.num_edges), cfg.budget,
                          cfg.ig_steps, cfg.ig_path, cfg.score, engine=engine)
    else:
        raise ParameterError(f"{cfg.strategy!r} is not a baseline strategy")
    return _apply(engine, flips, cfg, start, margin)


def run_attack(model, h, x, target, y, cfg):
    if cfg.strategy == "HyperAttack":
        return run_hyperattack(model, h, x, target, y, cfg)
    return run_baseline(model, h, x, target, y, cfg)
