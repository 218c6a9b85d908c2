"""Two-layer hypergraph convolution network and target-row gradients.

Forward pass::

    Hbar = Dv^-1/2 H W De^-1 H^T Dv^-1/2
    F(H) = softmax(Hbar relu(Hbar X W0) W1)

Zero degrees follow the pseudo-inverse convention (``0^-1 := 0``) in the
forward pass and in every derivative.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import FormatError, ParameterError, ShapeError, TrainingError
from .numerics import as_matrix, log_row_softmax, relu, relu_batch, row_softmax, safe_power

PROB_FLOOR = 1e-12
# restricted sub-problems at most this many cells run on dense arrays
_DENSE_LIMIT = 200_000


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 200
    weight_decay: float = 5e-4
    seed: int = 0
    hidden_dim: int = 16

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.hidden_dim < 1:
            raise ParameterError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass(eq=False)
class HgnnModel:
    w0: np.ndarray
    w1: np.ndarray
    config: TrainConfig = None
    # per-epoch training log; not part of the checkpoint
    history: list = field(default_factory=list, repr=False)
    best_epoch: int = None

    @property
    def hidden_dim(self):
        return self.w0.shape[1]

    @property
    def num_classes(self):
        return self.w1.shape[1]

    @property
    def input_dim(self):
        return self.w0.shape[0]

    def __eq__(self, other):
        if not isinstance(other, HgnnModel):
            return NotImplemented
        return np.array_equal(self.w0, other.w0) and np.array_equal(self.w1, other.w1)


def normalized_operator(h):
    """Dense ``|V| x |V|`` propagation matrix for ``h``."""
    s = safe_power(h.node_degrees, -0.5)
    c = h.edge_weights * safe_power(h.edge_degrees, -1.0)
    left = sp.diags(s) @ h.incidence
    return np.asarray((left @ sp.diags(c) @ left.T).todense())


def propagate(h, m):
    """Apply the normalized operator to ``m`` without materialising it."""
    m = as_matrix(m)
    if m.shape[0] != h.num_nodes:
        raise ShapeError(f"hypergraph has {h.num_nodes} nodes, matrix has shape {m.shape}")
    s = safe_power(h.node_degrees, -0.5)
    c = h.edge_weights * safe_power(h.edge_degrees, -1.0)
    inner = h.incidence.T @ (s[:, None] * m)
    return s[:, None] * (h.incidence @ (c[:, None] * inner))


def _check_shapes(model, h, x):
    if x.shape[0] != h.num_nodes:
        raise ShapeError(f"features have {x.shape[0]} rows, hypergraph has {h.num_nodes} nodes")
    if x.shape[1] != model.input_dim:
        raise ShapeError(f"features have {x.shape[1]} columns, model expects {model.input_dim}")


def logits(model, h, x):
    x = as_matrix(x)
    _check_shapes(model, h, x)
    hidden = relu(propagate(h, x @ model.w0))
    return propagate(h, hidden @ model.w1)


def forward(model, h, x):
    """Class probabilities for every node, ``|V| x C``."""
    return row_softmax(logits(model, h, x))


def predict(model, h, x):
    return np.argmax(logits(model, h, x), axis=1)


def _label_index(y, num_classes):
    y_arr = np.asarray(y)
    if y_arr.ndim == 0:
        return int(y_arr)
    if y_arr.shape != (num_classes,):
        raise ShapeError(f"one-hot label of shape {y_arr.shape} for {num_classes} classes")
    return int(np.argmax(y_arr))


def target_loss(model, h, x, target, y):
    """Cross-entropy of the target's predicted row; ``y`` is a class id or one-hot vector."""
    if not 0 <= target < h.num_nodes:
        raise ParameterError(f"target {target} out of range")
    probs = forward(model, h, x)[target]
    label = _label_index(y, model.num_classes)
    return float(-math.log(max(probs[label], PROB_FLOOR)))


def _mm(m, x3):
    """``m @ x3[b]`` for every batch slice; ``m`` may be sparse."""
    if not sp.issparse(m):
        return m @ x3
    b, rows, k = x3.shape
    flat = m @ x3.transpose(1, 0, 2).reshape(rows, b * k)
    return np.asarray(flat).reshape(m.shape[0], b, k).transpose(1, 0, 2)


class _RowProblem:
    """Target loss as a function of the target row over a set of active edges.

    ``hm`` holds the incidence of the participating nodes (target row zeroed,
    target at local index ``t``) over the active edges; ``a1base`` is the
    frozen first-layer contribution of inactive edges. Rows are evaluated in
    batches: ``r`` has shape ``(B, n_active)``.
    """

    def __init__(self, hm, s, w, de0, q0, pt, a1base, t, w1, label, frozen):
        self.hm = hm
        self.hmt = hm.T.tocsr() if sp.issparse(hm) else np.ascontiguousarray(hm.T)
        self.s = s
        self.w = w
        self.de0 = de0
        self.q0 = q0
        self.pt = pt
        self.a1base = a1base
        self.t = t
        self.w1 = w1
        self.label = label
        self.frozen = frozen

    def forward(self, r):
        t, s = self.t, self.s[None, :, None]
        dv = r @ self.w
        s_t = safe_power(dv, -0.5)
        de = self.de0 + r
        c = self.w * safe_power(de, -1.0)
        q = self.q0[None] + r[:, :, None] * (s_t[:, None] * self.pt)[:, None, :]
        a = r * c
        a1 = s * _mm(self.hm, c[:, :, None] * q)
        if self.a1base is not None:
            a1 += self.a1base
        a1[:, t] = s_t[:, None] * np.einsum("ba,bah->bh", a, q)
        u = relu_batch(a1) @ self.w1
        q2 = _mm(self.hmt, s * u) + r[:, :, None] * (s_t[:, None] * u[:, t])[:, None, :]
        zsum = np.einsum("ba,bac->bc", a, q2)
        return {"r": r, "dv": dv, "s_t": s_t, "de": de, "c": c, "q": q, "a": a,
                "a1": a1, "u": u, "q2": q2, "zsum": zsum, "z": s_t[:, None] * zsum}

    def loss_and_grad(self, r):
        """Per-row losses ``(B,)`` and gradients ``(B, n_active)``."""
        f = self.forward(r)
        logp = log_row_softmax(f["z"])
        logp_y = logp[:, self.label]
        floor = math.log(PROB_FLOOR)
        loss = -np.maximum(logp_y, floor)
        grad = self.backward(f, np.exp(logp))
        grad[logp_y < floor] = 0.0
        return loss, grad

    def backward(self, f, p):
        t, s = self.t, self.s[None, :, None]
        r, s_t, a, c, q, q2 = f["r"], f["s_t"], f["a"], f["c"], f["q"], f["q2"]
        dz = p.copy()
        dz[:, self.label] -= 1.0

        # z = s_t * (a @ q2)
        ds_t = np.einsum("bc,bc->b", dz, f["zsum"])
        dzsum = s_t[:, None] * dz
        da = np.einsum("bac,bc->ba", q2, dzsum)
        dq2 = a[:, :, None] * dzsum[:, None, :]

        # q2 = Hm^T (s * u) + r (s_t u_t)
        dq2_ut = np.einsum("bac,bc->ba", dq2, f["u"][:, t])
        dr = s_t[:, None] * dq2_ut
        ds_t += np.einsum("ba,ba->b", r, dq2_ut)
        du = s * _mm(self.hm, dq2)
        du[:, t] += s_t[:, None] * np.einsum("ba,bac->bc", r, dq2)

        da1 = (du @ self.w1.T) * (f["a1"] > 0)

        # a1[i] = s_i (Hm (c*q))_i for i != t;  a1[t] = s_t (a @ q)
        dcq = _mm(self.hmt, s * da1)
        da1_t = s_t[:, None] * da1[:, t]
        ds_t += np.einsum("bh,bah,ba->b", da1[:, t], q, a)
        da += np.einsum("bah,bh->ba", q, da1_t)
        dq = c[:, :, None] * dcq + a[:, :, None] * da1_t[:, None, :]
        dc = np.einsum("bah,bah->ba", dcq, q)

        # q = q0 + r (s_t p_t)
        dq_pt = dq @ self.pt
        dr += s_t[:, None] * dq_pt
        ds_t += np.einsum("ba,ba->b", r, dq_pt)

        # a = r * c
        dr += da * c
        dc += da * r

        if not self.frozen:
            dr += -dc * self.w * safe_power(f["de"], -2.0)
            dr += (-0.5 * ds_t * safe_power(f["dv"], -1.5))[:, None] * self.w
        return dr


class TargetEngine:
    """Loss, prediction and gradient as functions of one node's incidence row.

    Everything not involving the target row is precomputed once, so each
    evaluation costs a couple of sparse products over the incidence. The row
    may be fractional. With ``frozen=True`` the gradient treats the degree
    vectors as constants.
    """

    def __init__(self, model, h, x, target, y, frozen=False):
        x = as_matrix(x)
        _check_shapes(model, h, x)
        if not 0 <= target < h.num_nodes:
            raise ParameterError(f"target {target} out of range")
        self.target = int(target)
        self.label = _label_index(y, model.num_classes)
        self.frozen = frozen
        self.num_edges = h.num_edges
        self.row0 = h.row(target)

        mask = np.ones(h.num_nodes)
        mask[target] = 0.0
        hm = (sp.diags(mask) @ h.incidence).tocsr()
        hm.eliminate_zeros()
        self._hm = hm
        self._w = h.edge_weights
        self._de0 = np.asarray(hm.sum(axis=0)).ravel()
        s = safe_power(h.node_degrees, -0.5)
        s[target] = 0.0
        self._s = s
        p = x @ model.w0
        self._pt = p[target].copy()
        self._q0 = hm.T @ (s[:, None] * p)
        self._cq0 = (self._w * safe_power(self._de0, -1.0))[:, None] * self._q0
        self._w1 = model.w1
        self._full = _RowProblem(hm, s, self._w, self._de0, self._q0, self._pt, None,
                                 self.target, model.w1, self.label, frozen)

    def restricted(self, edges):
        """Sub-problem in which only the target-row entries on ``edges`` may be non-zero.

        The returned object's ``forward``/``loss_and_grad`` take a row of
        length ``len(edges)`` ordered like ``edges``; values match the full
        engine for any full row supported on ``edges``.
        """
        edges = np.asarray(edges, dtype=np.int64)
        sub = self._hm[:, edges].tocsr()
        members = np.unique(sub.nonzero()[0])
        nodes = np.concatenate(([self.target], members[members != self.target]))
        hm_loc = sub[nodes]
        if hm_loc.shape[0] * hm_loc.shape[1] <= _DENSE_LIMIT:
            hm_loc = hm_loc.toarray()
        inactive = self._cq0.copy()
        inactive[edges] = 0.0
        s_loc = self._s[nodes]
        a1base = s_loc[:, None] * (self._hm[nodes] @ inactive)
        return _RowProblem(hm_loc, s_loc, self._w[edges], self._de0[edges], self._q0[edges],
                           self._pt, a1base, 0, self._w1, self.label, self.frozen)

    def _row(self, r):
        r = self.row0 if r is None else np.asarray(r, dtype=np.float64)
        if r.shape != (self.num_edges,):
            raise ShapeError(f"row of shape {r.shape}, expected ({self.num_edges},)")
        return r

    def logits(self, r=None):
        return self._full.forward(self._row(r)[None])["z"][0]

    def probs(self, r=None):
        return row_softmax(self.logits(r))[0]

    def loss(self, r=None):
        logp = log_row_softmax(self.logits(r))[0, self.label]
        return float(-max(logp, math.log(PROB_FLOOR)))

    def loss_and_grad(self, r=None):
        loss, grad = self._full.loss_and_grad(self._row(r)[None])
        return float(loss[0]), grad[0]

    def grad(self, r=None):
        return self.loss_and_grad(r)[1]

    def grad_batch(self, rows):
        """Gradients for a ``(B, |E|)`` stack of rows."""
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.num_edges:
            raise ShapeError(f"rows of shape {rows.shape}, expected (B, {self.num_edges})")
        return self._full.loss_and_grad(rows)[1]


def grad_target_row(model, h, x, target, y, frozen=False):
    """Gradient of :func:`target_loss` with respect to the target's incidence row."""
    return TargetEngine(model, h, x, target, y, frozen=frozen).grad()


def init_weights(input_dim, hidden_dim, num_classes, seed):
    rng = np.random.default_rng(seed)
    b0 = 1.0 / math.sqrt(input_dim)
    b1 = 1.0 / math.sqrt(hidden_dim)
    w0 = rng.uniform(-b0, b0, size=(input_dim, hidden_dim))
    w1 = rng.uniform(-b1, b1, size=(hidden_dim, num_classes))
    return w0, w1


def _accuracy(pred, labels, idx):
    if len(idx) == 0:
        return float("nan")
    return float(np.mean(pred[idx] == labels[idx]))


def train(d, h, split, cfg=None):
    """Full-batch Adam on the mean training cross-entropy.

    Returns the checkpoint with the best validation accuracy (ties: lower
    validation loss, then earlier epoch); the last epoch when there is no
    validation set.
    """
    cfg = cfg or TrainConfig()
    x = as_matrix(d.features)
    if x.shape[0] != h.num_nodes:
        raise ShapeError(f"dataset has {x.shape[0]} nodes, hypergraph has {h.num_nodes}")
    labels = d.labels
    train_idx = np.asarray(split.train_idx, dtype=np.int64)
    val_idx = np.asarray(split.val_idx, dtype=np.int64)
    if len(train_idx) == 0:
        raise ParameterError("empty training set")

    w0, w1 = init_weights(x.shape[1], cfg.hidden_dim, d.num_classes, cfg.seed)
    hx = propagate(h, x)
    onehot = np.zeros((len(train_idx), d.num_classes))
    onehot[np.arange(len(train_idx)), labels[train_idx]] = 1.0

    params = [w0, w1]
    m_state = [np.zeros_like(w) for w in params]
    v_state = [np.zeros_like(w) for w in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    history = []
    best = None
    for epoch in range(cfg.epochs + 1):
        a1 = hx @ w0
        z1 = relu(a1)
        out = propagate(h, z1 @ w1)
        logp = log_row_softmax(out)
        loss = float(-np.mean(logp[train_idx, labels[train_idx]]))
        if not math.isfinite(loss):
            raise TrainingError("training loss is not finite", epoch)
        pred = np.argmax(out, axis=1)
        val_loss = float(-np.mean(logp[val_idx, labels[val_idx]])) if len(val_idx) else float("nan")
        record = {
            "epoch": epoch,
            "loss": loss,
            "train_acc": _accuracy(pred, labels, train_idx),
            "val_acc": _accuracy(pred, labels, val_idx),
            "val_loss": val_loss,
        }
        history.append(record)
        if len(val_idx):
            key = (record["val_acc"], -val_loss)
            if best is None or key > best[0]:
                best = (key, epoch, w0.copy(), w1.copy())
        else:
            best = (None, epoch, w0.copy(), w1.copy())
        if epoch == cfg.epochs:
            break

        dout = np.zeros_like(out)
        dout[train_idx] = (np.exp(logp[train_idx]) - onehot) / len(train_idx)
        du = propagate(h, dout)
        g1 = z1.T @ du + cfg.weight_decay * w1
        da1 = (du @ w1.T) * (a1 > 0)
        g0 = hx.T @ da1 + cfg.weight_decay * w0

        step = epoch + 1
        for w, g, m, v in zip(params, (g0, g1), m_state, v_state):
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            m_hat = m / (1 - beta1 ** step)
            v_hat = v / (1 - beta2 ** step)
            w -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        if not (np.all(np.isfinite(w0)) and np.all(np.isfinite(w1))):
            raise TrainingError("weights diverged", epoch + 1)

    _, best_epoch, bw0, bw1 = best
    return HgnnModel(w0=bw0, w1=bw1, config=cfg, history=history, best_epoch=best_epoch)


def accuracies(model, d, h, split):
    pred = predict(model, h, d.features)
    return {
        "train": _accuracy(pred, d.labels, np.asarray(split.train_idx, dtype=np.int64)),
        "val": _accuracy(pred, d.labels, np.asarray(split.val_idx, dtype=np.int64)),
        "test": _accuracy(pred, d.labels, np.asarray(split.test_idx, dtype=np.int64)),
    }


def save_model(model, path, extra=None):
    data = {
        "hidden_dim": model.hidden_dim,
        "num_classes": model.num_classes,
        "w0": model.w0.tolist(),
        "w1": model.w1.tolist(),
        "train_config": asdict(model.config) if model.config else None,
        "best_epoch": model.best_epoch,
    }
    if extra:
        data["meta"] = extra
    Path(path).write_text(json.dumps(data, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path):
    """Returns ``(model, meta)``; ``meta`` is whatever extra block was saved."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        w0 = np.array(data["w0"], dtype=np.float64)
        w1 = np.array(data["w1"], dtype=np.float64)
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"{path}: not a model checkpoint ({exc})") from None
    if w0.ndim != 2 or w1.ndim != 2 or w0.shape[1] != w1.shape[0]:
        raise FormatError(f"{path}: inconsistent weight shapes {w0.shape}, {w1.shape}")
    cfg = TrainConfig(**data["train_config"]) if data.get("train_config") else None
    model = HgnnModel(w0=w0, w1=w1, config=cfg, best_epoch=data.get("best_epoch"))
    return model, data.get("meta", {})
