"""Hypergraph construction from node features.

Every strategy emits one "centroid" hyperedge per node: column ``i`` of the
incidence matrix is the hyperedge generated around node ``i`` and always
contains ``i``.
"""

import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, FormatError, ParameterError, ShapeError
from .numerics import as_matrix

# rows per block when materialising pairwise distances
_BLOCK = 1024


class Hypergraph:
    """Incidence matrix plus hyperedge weights and the derived degree vectors.

    The incidence is held as a CSR matrix; entries are 0/1 for a constructed
    hypergraph but fractional values in [0, 1] are accepted.
    """

    def __init__(self, incidence, edge_weights=None):
        inc = sp.csr_matrix(incidence, dtype=np.float64)
        inc.eliminate_zeros()
        inc.sort_indices()
        n_edges = inc.shape[1]
        if edge_weights is None:
            edge_weights = np.ones(n_edges)
        w = np.array(edge_weights, dtype=np.float64).ravel()
        if w.shape[0] != n_edges:
            raise ShapeError(f"{w.shape[0]} weights for {n_edges} hyperedges")
        if np.any(w <= 0):
            raise ParameterError("hyperedge weights must be positive")
        self.incidence = inc
        self.edge_weights = w
        self.node_degrees = np.asarray(inc @ w).ravel()
        self.edge_degrees = np.asarray(inc.sum(axis=0)).ravel()

    @classmethod
    def from_dense(cls, h, edge_weights=None):
        return cls(sp.csr_matrix(as_matrix(h)), edge_weights)

    @classmethod
    def from_edges(cls, num_nodes, hyperedges, edge_weights=None):
        rows, cols = [], []
        for e, members in enumerate(hyperedges):
            for v in members:
                if not 0 <= v < num_nodes:
                    raise FormatError(f"hyperedge {e} references node {v} outside [0, {num_nodes})")
                rows.append(v)
                cols.append(e)
        inc = sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                            shape=(num_nodes, len(hyperedges)))
        inc.sum_duplicates()
        inc.data[:] = np.minimum(inc.data, 1.0)
        return cls(inc, edge_weights)

    @property
    def num_nodes(self):
        return self.incidence.shape[0]

    @property
    def num_edges(self):
        return self.incidence.shape[1]

    def to_dense(self):
        return self.incidence.toarray()

    def row(self, v):
        return self.incidence[v].toarray().ravel()

    def members(self, e):
        return self.incidence[:, e].nonzero()[0].tolist()

    def hyperedges(self):
        csc = self.incidence.tocsc()
        csc.sort_indices()
        return [csc.indices[csc.indptr[e]:csc.indptr[e + 1]].tolist()
                for e in range(self.num_edges)]

    def is_binary(self):
        return bool(np.all(self.incidence.data == 1.0))

    def with_row(self, v, values):
        """Copy with node ``v``'s incidence row replaced."""
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.shape[0] != self.num_edges:
            raise ShapeError(f"row of length {values.shape[0]} for {self.num_edges} hyperedges")
        lil = self.incidence.tolil(copy=True)
        lil[v, :] = values
        return Hypergraph(lil.tocsr(), self.edge_weights)

    def summary(self):
        sizes = self.edge_degrees
        return {
            "num_nodes": self.num_nodes,
            "num_edges": self.num_edges,
            "mean_edge_size": float(sizes.mean()) if len(sizes) else 0.0,
        }

    def __eq__(self, other):
        if not isinstance(other, Hypergraph):
            return NotImplemented
        return (self.incidence.shape == other.incidence.shape
                and (self.incidence != other.incidence).nnz == 0
                and np.array_equal(self.edge_weights, other.edge_weights))

    def __repr__(self):
        return f"Hypergraph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def recompute_degrees(h):
    """Fresh hypergraph whose degree vectors match the current incidence and weights."""
    return Hypergraph(h.incidence.copy(), h.edge_weights.copy())


def _sq_distance_blocks(x):
    sq = np.einsum("ij,ij->i", x, x)
    for start in range(0, x.shape[0], _BLOCK):
        stop = min(start + _BLOCK, x.shape[0])
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (x[start:stop] @ x.T)
        np.maximum(d2, 0.0, out=d2)
        yield start, d2


def _nearest(d2_row, count):
    """Indices of the ``count`` smallest entries; ties go to the lower index."""
    if count >= d2_row.shape[0]:
        return np.argsort(d2_row, kind="stable")
    kth = np.partition(d2_row, count - 1)[count - 1]
    cand = np.flatnonzero(d2_row <= kth)
    order = np.argsort(d2_row[cand], kind="stable")
    return cand[order[:count]]


def build_knn(features, k, include_centroid=True):
    """Hyperedge ``i`` = node ``i`` plus its nearest neighbours by Euclidean distance.

    With ``include_centroid=True`` (default) a hyperedge holds exactly ``k``
    nodes, i.e. ``k - 1`` neighbours. ``include_centroid=False`` reads "nearest
    k nodes" as k neighbours on top of the centroid (``k + 1`` nodes).
    """
    x = as_matrix(features)
    n = x.shape[0]
    neighbours = k - 1 if include_centroid else k
    if k < 2 or neighbours + 1 > n:
        raise ParameterError(f"k={k} out of range for {n} nodes")
    rows, cols = [], []
    for start, d2 in _sq_distance_blocks(x):
        for local in range(d2.shape[0]):
            i = start + local
            d2[local, i] = -1.0  # centroid always first, even against exact duplicates
            nbrs = _nearest(d2[local], neighbours + 1)
            rows.extend(nbrs.tolist())
            cols.extend([i] * len(nbrs))
    inc = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return Hypergraph(inc)


def default_epsilon(features, percentile=5.0, max_pairs=20000, seed=0):
    """Percentile of pairwise distances (sampled above ``max_pairs`` pairs)."""
    x = as_matrix(features)
    n = x.shape[0]
    if n < 2:
        raise ParameterError("need at least two nodes to pick a default epsilon")
    if n * (n - 1) // 2 <= max_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        j = rng.integers(0, n - 1, size=max_pairs)
        j = j + (j >= i)
    dist = np.linalg.norm(x[i] - x[j], axis=1)
    eps = float(np.percentile(dist, percentile))
    if eps <= 0:
        positive = dist[dist > 0]
        eps = float(positive.min()) if positive.size else 1.0
    return eps


def build_epsilon(features, epsilon):
    """Hyperedge ``i`` = ``{i}`` plus every node within ``epsilon`` of node ``i``."""
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    x = as_matrix(features)
    n = x.shape[0]
    rows, cols = [], []
    eps2 = float(epsilon) ** 2
    for start, d2 in _sq_distance_blocks(x):
        for local in range(d2.shape[0]):
            i = start + local
            d2[local, i] = 0.0
            nbrs = np.flatnonzero(d2[local] <= eps2)
            rows.extend(nbrs.tolist())
            cols.extend([i] * len(nbrs))
    inc = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return Hypergraph(inc)


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lasso_ista(dictionary, target, lam, max_iter=500, tol=1e-8):
    """Minimise ``0.5 * ||target - dictionary @ a||^2 + lam * ||a||_1`` by ISTA.

    The step is ``1 / L`` with ``L`` the squared spectral norm of ``dictionary``.
    Raises :class:`ConvergenceError` when the largest coefficient update is
    still above ``tol`` after ``max_iter`` iterations.
    """
    a_mat = as_matrix(dictionary)
    y = np.asarray(target, dtype=np.float64).ravel()
    coef = np.zeros(a_mat.shape[1])
    lipschitz = float(np.linalg.norm(a_mat, 2)) ** 2
    if lipschitz == 0.0:
        return coef
    gram = a_mat.T @ a_mat
    corr = a_mat.T @ y
    step = 1.0 / lipschitz
    change = np.inf
    for _ in range(max_iter):
        new = soft_threshold(coef - step * (gram @ coef - corr), lam * step)
        change = float(np.max(np.abs(new - coef)))
        coef = new
        if change < tol:
            return coef
    raise ConvergenceError(f"ISTA did not converge in {max_iter} iterations", change)


def build_l1(features, lam=0.1, tau=1e-3, candidate_pool=50, max_iter=500, tol=1e-8):
    """Sparse-reconstruction hyperedges.

    Node ``i`` is reconstructed from its ``candidate_pool`` nearest other nodes
    with a lasso; hyperedge ``i`` holds ``i`` and every candidate whose
    coefficient magnitude exceeds ``tau``.
    """
    if candidate_pool < 1:
        raise ParameterError(f"candidate_pool must be >= 1, got {candidate_pool}")
    if lam < 0 or not tau > 0:
        raise ParameterError(f"need lambda >= 0 and tau > 0, got {lam}, {tau}")
    x = as_matrix(features)
    n = x.shape[0]
    pool = min(candidate_pool, n - 1)
    rows, cols = [], []
    for start, d2 in _sq_distance_blocks(x):
        for local in range(d2.shape[0]):
            i = start + local
            members = [i]
            if pool > 0:
                d2[local, i] = np.inf
                cand = _nearest(d2[local], pool)
                try:
                    coef = lasso_ista(x[cand].T, x[i], lam, max_iter=max_iter, tol=tol)
                except ConvergenceError as exc:
                    raise ConvergenceError(
                        f"lasso for node {i} did not converge in {max_iter} iterations; "
                        "near-collinear candidates (try a larger lambda or fewer candidates)",
                        exc.residual,
                    ) from None
                members.extend(sorted(cand[np.abs(coef) > tau].tolist()))
            rows.extend(members)
            cols.extend([i] * len(members))
    inc = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return Hypergraph(inc)


def build(features, method, **params):
    """Dispatch on ``method`` in {"knn", "eps", "l1"}; returns (hypergraph, resolved params)."""
    if method == "knn":
        resolved = {"k": int(params.get("k") or 10),
                    "include_centroid": params.get("include_centroid", True)}
        return build_knn(features, resolved["k"], resolved["include_centroid"]), resolved
    if method == "eps":
        eps = params.get("epsilon")
        resolved = {"epsilon": float(eps) if eps is not None else default_epsilon(features),
                    "epsilon_source": "given" if eps is not None else "5th percentile of pairwise distances"}
        return build_epsilon(features, resolved["epsilon"]), resolved
    if method == "l1":
        resolved = {
            "lambda": float(params["lam"]) if params.get("lam") is not None else 0.1,
            "tau": float(params.get("tau") or 1e-3),
            "candidate_pool": int(params.get("candidate_pool") or 50),
        }
        hg = build_l1(features, resolved["lambda"], resolved["tau"], resolved["candidate_pool"])
        return hg, resolved
    raise ParameterError(f"unknown construction method {method!r}; expected knn, eps or l1")


def hypergraph_to_dict(h):
    if not h.is_binary():
        raise FormatError("only binary incidence matrices can be serialised")
    return {
        "num_nodes": h.num_nodes,
        "hyperedges": h.hyperedges(),
        "weights": [float(w) for w in h.edge_weights],
    }


def hypergraph_from_dict(data):
    try:
        return Hypergraph.from_edges(int(data["num_nodes"]), data["hyperedges"], data["weights"])
    except KeyError as exc:
        raise FormatError(f"hypergraph file missing field {exc}") from None


def save_hypergraph(h, path, extra=None):
    data = hypergraph_to_dict(h)
    if extra:
        data["meta"] = extra
    Path(path).write_text(json.dumps(data, sort_keys=True) + "\n", encoding="utf-8")


def load_hypergraph(path, with_meta=False):
    """Read a hypergraph file; with ``with_meta`` also return its meta block (or {})."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    h = hypergraph_from_dict(data)
    return (h, data.get("meta") or {}) if with_meta else h
