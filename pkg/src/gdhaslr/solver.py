"""Sparse + low-rank regression solved by ADMM.

Problem::

    min_{x, L}  alpha * ||Mat(L)||_*  +  sum_i pi(|x_i|)    s.t.  y = A x + L

``Mat`` reshapes a length-``d`` vector to the image raster (column-major).
The L-step is singular value thresholding, the x-step a weighted lasso
solved by cyclic coordinate descent whose weights ``pi'(|x_i|)`` are
refreshed from the previous iterate at every outer step, and the
multiplier takes a plain dual ascent step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence, Tuple

import numba
import numpy as np
from scipy import special

from .imagekit import unvec

__all__ = [
    "PenaltyFunction",
    "LassoSettings",
    "SolverConfig",
    "SolverResult",
    "Dictionary",
    "SolverDivergence",
    "soft_threshold",
    "svt",
    "nuclear_norm",
    "penalty_weight",
    "penalty_value",
    "weighted_lasso",
    "admm_solve",
    "build_dictionary",
]

log = logging.getLogger(__name__)

_NORM_FLOOR = 1e-12
# below this value of gamma*sqrt(delta^2 + t^2) the NIG weight uses its
# small-argument limit
_NIG_SMALL = 1e-3


class SolverDivergence(ArithmeticError):
    """Raised when an ADMM iterate becomes non-finite."""

    def __init__(self, iteration, what):
        super().__init__(f"non-finite {what} at ADMM iteration {iteration}")
        self.iteration = iteration


# ---------------------------------------------------------------------------
# penalties


_PENALTY_PARAMS = {
    "constant": ("w0",),
    "laplace": ("b",),
    "generalized_t": ("a", "b"),
    "nig": ("delta", "gamma"),
}

_PENALTY_DEFAULTS = {
    "constant": {"w0": 20.0},
    "laplace": {"b": 1.0},
    "generalized_t": {"a": 1.0, "b": 1.0},
    "nig": {"delta": 1.0, "gamma": 1e-6},
}

_PENALTY_ALIASES = {"gent": "generalized_t", "hal": "generalized_t", "lasso": "constant"}


@dataclass(frozen=True)
class PenaltyFunction:
    """Sparsity penalty ``pi(t)`` on coefficient magnitudes.

    Parameters by kind: ``constant`` (``w0``), ``laplace`` (``b``),
    ``generalized_t`` (``a``, ``b``), ``nig`` (``delta``, ``gamma``).
    Missing parameters take their defaults.
    """

    kind: str = "nig"
    params: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        kind = _PENALTY_ALIASES.get(self.kind, self.kind)
        if kind not in _PENALTY_PARAMS:
            raise ValueError(f"unknown penalty {self.kind!r}")
        given = dict(self.params)
        unknown = set(given) - set(_PENALTY_PARAMS[kind])
        if unknown:
            raise ValueError(f"unexpected parameters for {kind}: {sorted(unknown)}")
        merged = {**_PENALTY_DEFAULTS[kind], **given}
        for name, value in merged.items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"penalty parameter {name} must be positive, got {value}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(
            self, "params", tuple((k, float(merged[k])) for k in _PENALTY_PARAMS[kind])
        )

    @classmethod
    def make(cls, kind: str = "nig", **params) -> "PenaltyFunction":
        return cls(kind, tuple(params.items()))

    def __getitem__(self, name):
        return dict(self.params)[name]

    def to_dict(self) -> dict:
        return {"kind": self.kind, **dict(self.params)}


def _nig_weight(t, delta, gamma):
    s2 = delta * delta + t * t
    s = np.sqrt(s2)
    z = gamma * s
    small = z < _NIG_SMALL
    # exact derivative of log(s) - log K1(gamma s):
    #   t/s^2 * (2 + gamma s K0(gamma s)/K1(gamma s))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = special.k0e(z) / special.k1e(z)
        exact = t / s2 * (2.0 + z * ratio)
    return np.where(small, 2.0 * t / s2, exact)


def penalty_weight(p: PenaltyFunction, t):
    """Derivative ``pi'(t)`` of the penalty, used as the lasso weight.

    ``t`` may be a scalar or an array of non-negative magnitudes.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t_arr)):
        raise ValueError("penalty_weight needs finite magnitudes")
    if np.any(t_arr < 0):
        raise ValueError("penalty_weight needs non-negative magnitudes")
    kind = p.kind
    if kind == "constant":
        out = np.full_like(t_arr, p["w0"])
    elif kind == "laplace":
        out = np.full_like(t_arr, 1.0 / p["b"])
    elif kind == "generalized_t":
        out = (p["a"] + 1.0) / (p["b"] + t_arr)
    else:
        out = _nig_weight(t_arr, p["delta"], p["gamma"])
    return float(out) if out.ndim == 0 else out


def penalty_value(p: PenaltyFunction, t):
    """Negative log prior ``pi(t)`` (up to the normalizing constants noted)."""
    t = np.asarray(t, dtype=np.float64)
    kind = p.kind
    if kind == "constant":
        out = p["w0"] * t
    elif kind == "laplace":
        out = np.log(2.0 * p["b"]) + t / p["b"]
    elif kind == "generalized_t":
        a, b = p["a"], p["b"]
        out = -np.log(a / (2.0 * b)) + (a + 1.0) * np.log1p(t / b)
    else:
        s = np.sqrt(p["delta"] ** 2 + t * t)
        z = p["gamma"] * s
        # log K1(z) = log(k1e(z)) - z
        out = np.log(s) - (np.log(special.k1e(z)) - z)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# configuration / results


@dataclass(frozen=True)
class LassoSettings:
    max_sweeps: int = 2000
    tol: float = 1e-10

    def __post_init__(self):
        if self.max_sweeps < 1 or not self.tol > 0:
            raise ValueError("lasso settings need max_sweeps >= 1 and tol > 0")


@dataclass(frozen=True)
class SolverConfig:
    """Tunables of the ADMM solve.

    ``primal_tol`` is an additional feasibility requirement for declaring
    convergence: ``||y - A x - L||_2 <= primal_tol * max(1, ||y||_2)``.
    Set it to ``inf`` to use the relative-change test alone.
    """

    image_shape: Tuple[int, int] = (42, 30)
    alpha: float = 100.0
    beta: float = 1.0
    penalty: PenaltyFunction = field(default_factory=PenaltyFunction)
    rel_tol: float = 1e-6
    max_iters: int = 500
    lasso_inner: LassoSettings = field(default_factory=LassoSettings)
    primal_tol: float = 1e-5

    def __post_init__(self):
        h, w = self.image_shape
        if h < 1 or w < 1:
            raise ValueError("image_shape must be positive")
        object.__setattr__(self, "image_shape", (int(h), int(w)))
        for name in ("alpha", "beta", "rel_tol", "primal_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    def to_dict(self) -> dict:
        return {
            "image_shape": list(self.image_shape),
            "alpha": self.alpha,
            "beta": self.beta,
            "penalty": self.penalty.to_dict(),
            "rel_tol": self.rel_tol,
            "max_iters": self.max_iters,
            "lasso_inner": {"max_sweeps": self.lasso_inner.max_sweeps, "tol": self.lasso_inner.tol},
            "primal_tol": self.primal_tol,
        }


@dataclass(frozen=True, eq=False)
class SolverResult:
    x: np.ndarray
    L: np.ndarray
    z: np.ndarray
    iterations: int
    converged: bool
    primal_residual: float
    objective_trace: Tuple[float, ...]


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Unit-norm training atoms (columns) with their class labels."""

    atoms: np.ndarray
    labels: Tuple[Hashable, ...]
    column_norms: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=np.float64)
        if atoms.ndim != 2:
            raise ValueError("atoms must be a d x n matrix")
        labels = tuple(self.labels)
        if len(labels) != atoms.shape[1]:
            raise ValueError("one label per column is required")
        norms = np.linalg.norm(atoms, axis=0)
        if not np.allclose(norms, 1.0, rtol=0, atol=1e-10):
            raise ValueError("dictionary columns must have unit norm")
        atoms.setflags(write=False)
        cn = np.array(self.column_norms, dtype=np.float64)
        cn.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "column_norms", cn)

    @property
    def d(self) -> int:
        return self.atoms.shape[0]

    @property
    def n(self) -> int:
        return self.atoms.shape[1]

    @property
    def class_ids(self) -> Tuple[Hashable, ...]:
        """Distinct labels in order of first appearance."""
        return tuple(dict.fromkeys(self.labels))

    def class_mask(self, label) -> np.ndarray:
        return np.array([lab == label for lab in self.labels], dtype=bool)

    def gram(self) -> np.ndarray:
        cached = self.__dict__.get("_gram")
        if cached is None:
            cached = self.atoms.T @ self.atoms
            cached.setflags(write=False)
            object.__setattr__(self, "_gram", cached)
        return cached


def build_dictionary(features: Sequence[Tuple[np.ndarray, Hashable]]) -> Dictionary:
    """Stack ``(vector, label)`` pairs as L2-normalized columns."""
    features = list(features)
    if not features:
        raise ValueError("cannot build a dictionary from no features")
    vecs = [np.asarray(v, dtype=np.float64).ravel() for v, _ in features]
    d = vecs[0].size
    if any(v.size != d for v in vecs):
        raise ValueError("feature vectors have ragged lengths")
    atoms = np.column_stack(vecs)
    norms = np.linalg.norm(atoms, axis=0)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        bad = int(np.flatnonzero((norms == 0) | ~np.isfinite(norms))[0])
        raise ValueError(f"feature {bad} has zero or non-finite norm")
    return Dictionary(atoms / norms, tuple(lab for _, lab in features), norms)


# ---------------------------------------------------------------------------
# proximal pieces


def soft_threshold(t, tau):
    """``sign(t) * max(|t| - tau, 0)``, elementwise."""
    if np.any(np.asarray(tau) < 0):
        raise ValueError("tau must be non-negative")
    out = np.sign(t) * np.maximum(np.abs(t) - tau, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def _svt_matrix(M: np.ndarray, tau: float):
    if not np.all(np.isfinite(M)):
        raise FloatingPointError("SVT input contains non-finite values")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    s_new = np.maximum(s - tau, 0.0)
    k = int(np.count_nonzero(s_new))
    return (U[:, :k] * s_new[:k]) @ Vt[:k], s_new


def svt(Mvec, tau: float, shape) -> np.ndarray:
    """Singular value thresholding of a vectorized matrix.

    Returns ``vec(U soft(S, tau) V^T)`` where ``U S V^T`` is the SVD of
    ``Mat(Mvec)``: the minimizer of ``tau ||X||_* + 0.5 ||X - Mat(Mvec)||_F^2``.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    M = unvec(Mvec, shape)
    if tau == 0:
        if not np.all(np.isfinite(M)):
            raise FloatingPointError("SVT input contains non-finite values")
        return np.asarray(Mvec, dtype=np.float64).copy()
    out, _ = _svt_matrix(M, tau)
    return out.ravel(order="F")


def nuclear_norm(v, shape) -> float:
    return float(np.linalg.svd(unvec(v, shape), compute_uv=False).sum())


# ---------------------------------------------------------------------------
# weighted lasso


@numba.njit(cache=True)
def _cd_gram(G, q, weights, beta, x, max_sweeps, tol):
    """Cyclic coordinate descent on ``sum w|x| + beta/2 x'Gx - beta q'x``."""
    n = x.size
    grad = q - G @ x  # = A'(b - A x)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(n):
            xj = x[j]
            gjj = G[j, j]
            thr = weights[j] / beta
            c = grad[j] + gjj * xj
            if c > thr:
                new = (c - thr) / gjj
            elif c < -thr:
                new = (c + thr) / gjj
            else:
                new = 0.0
            delta = new - xj
            if delta != 0.0:
                x[j] = new
                for i in range(n):
                    grad[i] -= G[i, j] * delta
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        if max_delta < tol:
            break
    return x, sweeps


def weighted_lasso(A, b, weights, beta: float, inner: LassoSettings = LassoSettings(), x0=None, gram=None):
    """Minimize ``sum_j weights_j |x_j| + beta/2 ||b - A x||_2^2``.

    Cyclic coordinate descent warm-started at ``x0``; stops when the largest
    coordinate change in a sweep drops below ``inner.tol``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d, n = A.shape
    if b.shape != (d,):
        raise ValueError(f"b has shape {b.shape}, expected ({d},)")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"weights have shape {w.shape}, expected ({n},)")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    if not beta > 0:
        raise ValueError("beta must be positive")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({n},)")
    G = np.ascontiguousarray(A.T @ A if gram is None else gram)
    if np.any(np.diagonal(G) <= 0):
        raise ValueError("dictionary has a zero column")
    x, _ = _cd_gram(G, A.T @ b, w, float(beta), x, inner.max_sweeps, inner.tol)
    return x


# ---------------------------------------------------------------------------
# ADMM


def _rel_change(new_norm, old_norm):
    # norms under the floor are rounding noise around zero
    if max(new_norm, old_norm) < _NORM_FLOOR:
        return 0.0
    return abs(new_norm - old_norm) / max(old_norm, _NORM_FLOOR)


def admm_solve(A: Dictionary, y, cfg: SolverConfig) -> SolverResult:
    """Solve the sparse + low-rank regression for one observation ``y``.

    Starts from ``x = 0``, ``L = 0``, ``z = 1``.  Each iteration performs the
    L-step (SVT with threshold ``alpha/beta``), the reweighted x-step and the
    multiplier update, then stops once the relative changes of ``||x||`` and
    ``||L||`` are both below ``rel_tol`` and the constraint residual is
    within ``primal_tol``.

    Raises
    ------
    SolverDivergence
        If any iterate becomes non-finite.
    """
    y = np.asarray(y, dtype=np.float64)
    atoms = A.atoms
    d, n = atoms.shape
    if y.shape != (d,):
        raise ValueError(f"observation has shape {y.shape}, expected ({d},)")
    h, w = cfg.image_shape
    if h * w != d:
        raise ValueError(f"image_shape {cfg.image_shape} does not match d={d}")
    if not np.all(np.isfinite(y)):
        raise ValueError("observation contains non-finite values")

    alpha, beta = cfg.alpha, cfg.beta
    tau = alpha / beta
    G = A.gram()
    pen = cfg.penalty
    inner = cfg.lasso_inner
    feas_tol = cfg.primal_tol * max(1.0, float(np.linalg.norm(y)))

    x = np.zeros(n)
    L = np.zeros(d)
    z = np.ones(d)
    x_norm = L_norm = 0.0
    trace = []
    converged = False
    k = 0
    for k in range(1, cfg.max_iters + 1):
        Ax = atoms @ x
        # overflow surfaces as a non-finite SVT input below
        with np.errstate(over="ignore", invalid="ignore"):
            M = unvec(y - Ax + z / beta, cfg.image_shape)
        try:
            Lmat, s_new = _svt_matrix(M, tau)
        except FloatingPointError:
            raise SolverDivergence(k, "L-step input") from None
        L_new = Lmat.ravel(order="F")

        weights = penalty_weight(pen, np.abs(x))
        rhs = y - L_new + z / beta
        x_new, _ = _cd_gram(G, atoms.T @ rhs, np.asarray(weights, dtype=np.float64), float(beta), x.copy(),
                             inner.max_sweeps, inner.tol)

        r = y - atoms @ x_new - L_new
        z = z + beta * r
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(z))):
            raise SolverDivergence(k, "x or z iterate")

        x_norm_new = float(np.linalg.norm(x_new))
        L_norm_new = float(np.linalg.norm(L_new))
        primal = float(np.linalg.norm(r))
        trace.append(alpha * float(s_new.sum()) + float(np.sum(penalty_value(pen, np.abs(x_new)))))

        done = (
            _rel_change(x_norm_new, x_norm) < cfg.rel_tol
            and _rel_change(L_norm_new, L_norm) < cfg.rel_tol
            and primal <= feas_tol
        )
        x, L = x_new, L_new
        x_norm, L_norm = x_norm_new, L_norm_new
        if done:
            converged = True
            break

    primal = float(np.linalg.norm(y - atoms @ x - L))
    if not converged:
        log.debug("ADMM stopped after %d iterations without converging (primal %.3g)", k, primal)
    for arr in (x, L, z):
        arr.setflags(write=False)
    return SolverResult(x, L, z, k, converged, primal, tuple(trace))
