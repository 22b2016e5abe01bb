"""Memory filtering: pick a representative, reliable result from recent history.

Recent tracking results (feature columns of ``X``) are scored by solving a
reliability-weighted group lasso with graph-Laplacian smoothing,

    min_S 0.5*||X - X S||_F^2 + delta*Tr(S^T L S)
          + beta * sum_i ||S_i,.||_2 / (h_i + eps),

via accelerated proximal gradient steps.  The row of ``S`` with the largest
norm marks the representative result, which feeds a FIFO template dictionary;
the long-memory template is rebuilt from that dictionary by a ridge fit on
the nearest codebook atoms, with unit-vector "trivial" atoms absorbing
localized corruption.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .features import PatchSet
from .similarity import _top_c_indices, pairwise_distances

__all__ = [
    "SelectionProblem",
    "SelectionSolution",
    "build_weight_matrix",
    "laplacian",
    "lipschitz_constant",
    "gradient_f",
    "objective",
    "prox_group_lasso",
    "solve_selection",
    "TemplateDictionary",
    "TemplatePair",
    "reconstruct_template_r",
    "maybe_update_template_e",
]


@dataclass
class SelectionProblem:
    """Data matrix (one column per historical result) plus solver knobs."""

    x: np.ndarray                 # d x n_s, columns are result features
    h: np.ndarray                 # n_s reliability scores in [0, inf)
    beta: float = 10.0
    delta: float = 5.0
    sigma2: float = 2.0
    cap_c: int = 4
    epsilon: float = 1e-6
    stop_tol: float = 1e-6
    max_iters: int = 500
    printed_momentum: bool = False

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if self.x.ndim != 2 or self.x.shape[1] < 2:
            raise ValueError("X must be d x n_s with n_s >= 2")
        if self.h.shape != (self.x.shape[1],):
            raise ValueError("h must hold one score per column of X")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.h))):
            raise ValueError("non-finite data in selection problem")
        if self.beta < 0 or self.delta < 0:
            raise ValueError("beta and delta must be non-negative")
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be positive")

    @property
    def n_s(self) -> int:
        return self.x.shape[1]


@dataclass
class SelectionSolution:
    """Solver output: selection matrix, row norms, and the chosen index."""

    s: np.ndarray
    row_norms: np.ndarray
    selected_index: int
    objective_trace: list[float]
    iterations_used: int
    converged: bool

    def top_k(self, k: int) -> np.ndarray:
        """Indices of the k largest-row-norm results, ties by lower index."""
        order = np.lexsort((np.arange(len(self.row_norms)), -self.row_norms))
        return order[:k]


def build_weight_matrix(x: np.ndarray, sigma2: float = 2.0, cap_c: int = 4) -> np.ndarray:
    """Reciprocal-neighbor weights between the columns of ``x``.

    ``W[i, j] = exp(-r*s/sigma2)`` when columns i and j are mutually within
    each other's ``cap_c`` nearest neighbors (self excluded); symmetric with
    zero diagonal by construction since the rank product commutes.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    if n < 2:
        raise ValueError("need at least two columns")
    d = pairwise_distances(x.T, x.T)
    np.fill_diagonal(d, np.inf)
    c = min(cap_c, n - 1)
    top = _top_c_indices(d, c)
    rank = np.zeros((n, n), dtype=np.intp)
    cols = np.arange(c)[None, :] + 1
    np.put_along_axis(rank, top, np.broadcast_to(cols, top.shape), axis=1)
    w = np.zeros((n, n))
    mutual = (rank > 0) & (rank.T > 0)
    w[mutual] = np.exp(-(rank[mutual] * rank.T[mutual]) / sigma2)
    return w


def laplacian(w: np.ndarray) -> np.ndarray:
    """Graph Laplacian ``L = D - W`` with ``D`` the diagonal of row sums."""
    w = np.asarray(w, dtype=float)
    return np.diag(w.sum(axis=1)) - w


def lipschitz_constant(x: np.ndarray, delta: float, lap: np.ndarray,
                       rel_tol: float = 1e-8, max_iters: int = 10_000) -> float:
    """Spectral radius of ``X^T X + delta (L + L^T)`` by power iteration."""
    x = np.asarray(x, dtype=float)
    a = x.T @ x + delta * (lap + lap.T)
    n = a.shape[0]
    v = np.ones(n) / math.sqrt(n)
    lam = 0.0
    for _ in range(max_iters):
        av = a @ v
        norm = np.linalg.norm(av)
        if norm == 0.0:
            return 0.0
        v_new = av / norm
        lam_new = float(v_new @ (a @ v_new))
        if abs(lam_new - lam) <= rel_tol * max(abs(lam_new), 1e-30):
            return lam_new
        v, lam = v_new, lam_new
    return lam


def gradient_f(s: np.ndarray, x: np.ndarray, delta: float, lap: np.ndarray) -> np.ndarray:
    """Gradient of the smooth part: ``X^T X S - X^T X + delta (L + L^T) S``."""
    xtx = x.T @ x
    return xtx @ s - xtx + delta * (lap + lap.T) @ s


def objective(s: np.ndarray, problem: SelectionProblem, lap: np.ndarray | None = None) -> float:
    """Full objective: reconstruction + Laplacian smoothing + weighted rows."""
    x = problem.x
    if lap is None:
        lap = laplacian(build_weight_matrix(x, problem.sigma2, problem.cap_c))
    resid = x - x @ s
    smooth = 0.5 * float(np.sum(resid * resid))
    smooth += problem.delta * float(np.trace(s.T @ lap @ s))
    row_norms = np.linalg.norm(s, axis=1)
    group = problem.beta * float(np.sum(row_norms / (problem.h + problem.epsilon)))
    return smooth + group


def prox_group_lasso(z: np.ndarray, h: np.ndarray, beta: float, epsilon: float,
                     p_l: float) -> np.ndarray:
    """Row-wise soft threshold: shrink each row toward zero by its weight.

    Row i survives scaled by ``max(1 - t_i/||Z_i||, 0)`` with threshold
    ``t_i = beta / (p_l * (h_i + epsilon))``; zero rows stay zero.
    """
    z = np.asarray(z, dtype=float)
    norms = np.linalg.norm(z, axis=1)
    thresholds = beta / (p_l * (np.asarray(h, dtype=float) + epsilon))
    scale = np.zeros_like(norms)
    nz = norms > 0
    scale[nz] = np.maximum(1.0 - thresholds[nz] / norms[nz], 0.0)
    return z * scale[:, None]


def solve_selection(problem: SelectionProblem) -> SelectionSolution:
    """Accelerated proximal gradient solve of the selection objective.

    Starts from ``S = 0`` with momentum sequence
    ``l <- (1 + sqrt(1 + l^2)) / 2`` and coefficient ``(l_t - 1)/l_{t+1}``
    (with ``problem.printed_momentum`` the coefficient divides by the
    iteration counter instead, skipping momentum on the first step where it
    is undefined).  Stops when the relative ``l_{1,2}`` change drops below
    ``stop_tol``; on hitting ``max_iters`` the best iterate is returned
    flagged as unconverged.
    """
    x = problem.x
    n = problem.n_s
    w = build_weight_matrix(x, problem.sigma2, problem.cap_c)
    lap = laplacian(w)
    p_l = lipschitz_constant(x, problem.delta, lap)
    p_l = max(p_l, 1e-12)
    xtx = x.T @ x
    lap_sym = problem.delta * (lap + lap.T)

    s = np.zeros((n, n))
    u1 = s.copy()
    l_t = 1.0
    trace = [objective(s, problem, lap)]
    best_s, best_obj = s, trace[0]
    converged = False
    iterations = 0

    for t in range(problem.max_iters):
        grad = xtx @ u1 - xtx + lap_sym @ u1
        z = u1 - grad / p_l
        s_new = prox_group_lasso(z, problem.h, problem.beta, problem.epsilon, p_l)
        l_next = (1.0 + math.sqrt(1.0 + l_t * l_t)) / 2.0
        if problem.printed_momentum:
            coef = (l_t - 1.0) / t if t >= 1 else 0.0
        else:
            coef = (l_t - 1.0) / l_next
        u1 = s_new + coef * (s_new - s)

        delta_norm = np.sum(np.linalg.norm(s_new - s, axis=1))
        prev_norm = np.sum(np.linalg.norm(s, axis=1))
        obj = objective(s_new, problem, lap)
        trace.append(obj)
        if obj < best_obj:
            best_s, best_obj = s_new, obj
        s, l_t = s_new, l_next
        iterations = t + 1
        if delta_norm <= problem.stop_tol * max(prev_norm, 1e-30):
            converged = True
            break

    if not converged:
        s = best_s
    row_norms = np.linalg.norm(s, axis=1)
    return SelectionSolution(
        s=s,
        row_norms=row_norms,
        selected_index=int(np.argmax(row_norms)),
        objective_trace=trace,
        iterations_used=iterations,
        converged=converged,
    )


class TemplateDictionary:
    """FIFO store of feature-vector atoms with a fixed capacity."""

    def __init__(self, capacity: int = 12):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._atoms: deque[np.ndarray] = deque()

    def __len__(self) -> int:
        return len(self._atoms)

    @property
    def atoms(self) -> list[np.ndarray]:
        return list(self._atoms)

    def add(self, atom: np.ndarray) -> None:
        """Append an atom, evicting the oldest when at capacity."""
        atom = np.asarray(atom, dtype=float).reshape(-1)
        if len(self._atoms) >= self.capacity:
            self._atoms.popleft()
        self._atoms.append(atom)


@dataclass
class TemplatePair:
    """Long-memory (dictionary-reconstructed) and short-memory templates."""

    tmpl_r: PatchSet
    tmpl_e: PatchSet

    def __post_init__(self):
        if self.tmpl_r.dim != self.tmpl_e.dim:
            raise ValueError("templates must share the patch dimension")


def reconstruct_template_r(
    result: np.ndarray,
    dictionary: TemplateDictionary,
    k: int = 5,
    trivial_count: int | None = None,
    ridge: float = 1e-6,
) -> np.ndarray:
    """Rebuild the long-memory template from the dictionary around a result.

    The codebook is the dictionary atoms plus ``trivial_count`` unit basis
    vectors (at the coordinates where the result is largest; ``None`` allows
    all coordinates).  The ``k`` codebook atoms nearest to the result are
    ridge-fit to it and the reconstruction keeps only the non-trivial
    contributions, so spike-like corruption lands on the trivial atoms and
    is discarded.  With fewer than ``k`` candidates, all are used.
    """
    result = np.asarray(result, dtype=float).reshape(-1)
    atoms = dictionary.atoms
    if not atoms:
        raise ValueError("dictionary is empty")
    d = result.size
    n_trivial = d if trivial_count is None else min(trivial_count, d)

    atom_dists = [float(np.linalg.norm(result - a)) for a in atoms]
    # distance to unit vector e_c is sqrt(|r|^2 - 2 r_c + 1): nearest trivial
    # atoms sit at the largest components, no identity matrix needed
    sq_norm = float(result @ result)
    order = np.argsort(-result, kind="stable")[:n_trivial]
    trivial_dists = np.sqrt(np.maximum(sq_norm - 2.0 * result[order] + 1.0, 0.0))

    candidates = [(atom_dists[idx], 0, idx) for idx in range(len(atoms))]
    candidates += [
        (float(trivial_dists[t]), 1, int(order[t])) for t in range(len(order))
    ]
    candidates.sort()
    chosen = candidates[: min(k, len(candidates))]

    cols = []
    non_trivial = []
    for _, kind, idx in chosen:
        if kind == 0:
            cols.append(atoms[idx])
            non_trivial.append(True)
        else:
            e = np.zeros(d)
            e[idx] = 1.0
            cols.append(e)
            non_trivial.append(False)
    b = np.stack(cols, axis=1)
    gram = b.T @ b + ridge * np.eye(b.shape[1])
    coef = np.linalg.solve(gram, b.T @ result)
    keep = np.asarray(non_trivial)
    return b[:, keep] @ coef[keep] if np.any(keep) else np.zeros(d)


def maybe_update_template_e(current: TemplatePair, result: PatchSet,
                            score: float, threshold: float = 0.5) -> TemplatePair:
    """Swap in the short-memory template iff the score strictly exceeds 0.5.

    A NaN score leaves the pair unchanged and emits a warning.
    """
    if math.isnan(score):
        warnings.warn("NaN similarity score; short-memory template left unchanged",
                      RuntimeWarning)
        return current
    if score > threshold:
        return TemplatePair(tmpl_r=current.tmpl_r, tmpl_e=result)
    return current
