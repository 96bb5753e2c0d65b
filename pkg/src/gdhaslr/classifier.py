"""Per-class nuclear-norm residues and the multi-order polling rule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from numbers import Number
from typing import Dict, Hashable, List, Sequence, Tuple

import numpy as np

from .solver import Dictionary, SolverConfig, SolverResult, admm_solve, nuclear_norm

__all__ = [
    "ResidualTable",
    "Verdict",
    "Diagnostics",
    "class_residues",
    "top_fraction",
    "poll",
    "classify",
]


def _id_key(c):
    # numbers before strings, each in natural order
    if isinstance(c, Number):
        return (0, c, "")
    return (1, 0, str(c))


@dataclass(frozen=True, eq=False)
class ResidualTable:
    class_ids: Tuple[Hashable, ...]
    residues: Tuple[np.ndarray, ...]

    def __post_init__(self):
        ids = tuple(self.class_ids)
        rows = []
        for r in self.residues:
            r = np.array(r, dtype=np.float64)
            if r.shape != (len(ids),):
                raise ValueError("every residue vector must index all class_ids")
            if not np.all(np.isfinite(r)) or np.any(r < 0):
                raise ValueError("residues must be finite and non-negative")
            r.setflags(write=False)
            rows.append(r)
        object.__setattr__(self, "class_ids", ids)
        object.__setattr__(self, "residues", tuple(rows))


@dataclass(frozen=True)
class Verdict:
    identity: Hashable
    frequencies: Dict[Hashable, int]
    average_ranks: Dict[Hashable, float]
    tie_broken: bool

    @property
    def frequency(self) -> int:
        return self.frequencies[self.identity]


@dataclass(frozen=True, eq=False)
class Diagnostics:
    results: Tuple[SolverResult, ...]
    table: ResidualTable
    top_lists: Tuple[Tuple[Hashable, ...], ...]


def class_residues(A: Dictionary, y, result: SolverResult, shape, norm: str = "nuclear") -> np.ndarray:
    """Residue of each class, in ``A.class_ids`` order.

    For class ``n`` the coefficients of every other class are zeroed and the
    nuclear norm of ``Mat(y - A delta_n(x) - L)`` is returned.  ``norm="l2"``
    gives the plain Euclidean residue ``||y - A delta_n(x)||`` instead, a
    debugging baseline that ignores ``L``.
    """
    y = np.asarray(y, dtype=np.float64)
    out = []
    for label in A.class_ids:
        xd = np.where(A.class_mask(label), result.x, 0.0)
        if norm == "nuclear":
            out.append(nuclear_norm(y - A.atoms @ xd - result.L, shape))
        elif norm == "l2":
            out.append(float(np.linalg.norm(y - A.atoms @ xd)))
        else:
            raise ValueError(f"unknown residue norm {norm!r}")
    return np.array(out)


def top_fraction(residues, m_fraction: float, class_ids: Sequence[Hashable] = None) -> List[Hashable]:
    """Classes with the smallest residues, ``max(1, ceil(m * classes))`` of them.

    Equal residues are ordered by class id.  Without ``class_ids`` the
    positions ``0..k-1`` are used as ids.
    """
    residues = np.asarray(residues, dtype=np.float64)
    if residues.ndim != 1 or residues.size == 0:
        raise ValueError("residues must be a non-empty vector")
    if not 0.0 < m_fraction <= 1.0:
        raise ValueError(f"m_fraction must lie in (0, 1], got {m_fraction}")
    ids = list(range(residues.size)) if class_ids is None else list(class_ids)
    if len(ids) != residues.size:
        raise ValueError("class_ids and residues differ in length")
    # the small epsilon keeps e.g. 0.1 * 100 from ceiling to 11
    k = max(1, math.ceil(m_fraction * residues.size - 1e-9))
    order = sorted(range(residues.size), key=lambda i: (residues[i], _id_key(ids[i])))
    return [ids[i] for i in order[:k]]


def poll(lists: Sequence[Sequence[Hashable]]) -> Verdict:
    """Vote across ranked class lists.

    The winner appears in the most lists; ties go to the least mean 1-based
    rank (over the lists containing the class), then to the least class id.
    """
    if not lists or any(len(lst) == 0 for lst in lists):
        raise ValueError("poll needs non-empty lists")
    ranks: Dict[Hashable, List[int]] = {}
    for lst in lists:
        for pos, c in enumerate(lst, start=1):
            ranks.setdefault(c, []).append(pos)
    freqs = {c: len(r) for c, r in ranks.items()}
    avg = {c: sum(r) / len(r) for c, r in ranks.items()}
    best = max(freqs.values())
    tied = [c for c in ranks if freqs[c] == best]
    winner = min(tied, key=lambda c: (avg[c], _id_key(c)))
    return Verdict(winner, freqs, avg, len(tied) > 1)


def classify(dicts: Sequence[Dictionary], feats, cfg: SolverConfig, m_fraction: float = 0.10):
    """Recognize one sample from its per-order features.

    ``feats`` holds one vector per dictionary (a ``FeatureSet`` works for the
    three gradient orders; a single intensity vector with one dictionary is
    also accepted).  Returns ``(Verdict, Diagnostics)``.
    """
    dicts = list(dicts)
    vecs = list(feats.orders) if hasattr(feats, "orders") else list(feats)
    if len(dicts) != len(vecs):
        raise ValueError(f"{len(dicts)} dictionaries but {len(vecs)} feature vectors")
    if not dicts:
        raise ValueError("classify needs at least one dictionary")
    class_ids = dicts[0].class_ids
    for D in dicts[1:]:
        if D.class_ids != class_ids or D.n != dicts[0].n:
            raise ValueError("dictionaries must share class ids and column count")

    results, rows, lists = [], [], []
    for D, y in zip(dicts, vecs):
        res = admm_solve(D, y, cfg)
        r = class_residues(D, y, res, cfg.image_shape)
        results.append(res)
        rows.append(r)
        lists.append(tuple(top_fraction(r, m_fraction, class_ids)))
    verdict = poll(lists)
    return verdict, Diagnostics(tuple(results), ResidualTable(class_ids, tuple(rows)), tuple(lists))
