"""The KDE balance criterion and related partition diagnostics.

The squared L2 distance between the KDEs of groups ``l`` and ``s`` is a
combination of Gram block sums,

    (S_ll / n_l^2 + S_ss / n_s^2 - 2 S_ls / (n_l n_s)) / |H|,

where ``S_ls`` sums ``W(i, j)`` over ``g_i = l``, ``g_j = s``. The
criterion is the largest such distance over all group pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any

import numpy as np

from .data import CovariateTable
from .errors import DataError, EmptyGroup, NotBinaryPartition
from .kernel_gram import KernelGram

log = logging.getLogger(__name__)

NEGATIVE_FLAG_TOL = 1e-8


@dataclass(frozen=True)
class Partition:
    """Assignment of N units to groups ``0 .. L-1``; every group nonempty."""

    g: np.ndarray
    L: int

    def __post_init__(self):
        g = np.array(self.g, dtype=np.int64, copy=True).ravel()
        L = int(self.L)
        if L < 2:
            raise DataError(f"need at least 2 groups, got L={L}")
        if g.size and (g.min() < 0 or g.max() >= L):
            raise DataError(f"group labels must lie in 0..{L - 1}")
        sizes = np.bincount(g, minlength=L)
        empty = np.flatnonzero(sizes == 0)
        if empty.size:
            raise EmptyGroup(f"group {int(empty[0])} has no units")
        g.setflags(write=False)
        sizes.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "_sizes", sizes)

    @property
    def group_sizes(self) -> np.ndarray:
        return self._sizes

    @property
    def n_units(self) -> int:
        return self.g.size

    def indicator(self) -> np.ndarray:
        """One-hot ``N x L`` membership matrix."""
        E = np.zeros((self.g.size, self.L))
        E[np.arange(self.g.size), self.g] = 1.0
        return E

    def relabel(self, mapping) -> "Partition":
        mapping = np.asarray(mapping)
        return Partition(mapping[self.g], self.L)

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.L == other.L and np.array_equal(self.g, other.g)

    def __hash__(self):
        return hash((self.L, self.g.tobytes()))


def block_sums(gram: KernelGram, part: Partition) -> np.ndarray:
    """``L x L`` matrix of Gram sums over pairs of groups."""
    _check_size(gram, part)
    E = part.indicator()
    return E.T @ (gram.W @ E)


def _pair_value(S, sizes, l, s, det_H):
    nl, ns = sizes[l], sizes[s]
    return (S[l, l] / nl**2 + S[s, s] / ns**2 - 2.0 * S[l, s] / (nl * ns)) / det_H


def _clamp(v: float) -> float:
    if v < 0:
        if v < -NEGATIVE_FLAG_TOL:
            log.warning("pairwise L2 distance %.3g < 0 from cancellation; clamped to 0", v)
        return 0.0
    return float(v)


def pairwise_l2(gram: KernelGram, part: Partition, l: int, s: int) -> float:
    """Squared L2 distance between the KDEs of groups ``l`` and ``s``."""
    if l == s:
        raise DataError("pairwise_l2 needs two distinct groups")
    for k in (l, s):
        if not 0 <= k < part.L:
            raise EmptyGroup(f"group {k} does not exist for L={part.L}")
    S = block_sums(gram, part)
    return _clamp(_pair_value(S, part.group_sizes, l, s, gram.det_H))


def pairwise_matrix(gram: KernelGram, part: Partition) -> np.ndarray:
    S = block_sums(gram, part)
    P = np.zeros((part.L, part.L))
    for l, s in combinations(range(part.L), 2):
        P[l, s] = P[s, l] = _clamp(_pair_value(S, part.group_sizes, l, s, gram.det_H))
    return P


def criterion_value(gram: KernelGram, part: Partition) -> float:
    """Largest pairwise squared KDE distance over all group pairs."""
    return float(pairwise_matrix(gram, part).max())


def _binary_vector(part) -> np.ndarray:
    if isinstance(part, Partition):
        if part.L != 2:
            raise NotBinaryPartition(f"quadratic objective needs L=2, got L={part.L}")
        g = part.g
    else:
        g = np.asarray(part)
        if g.size and not np.isin(g, (0, 1)).all():
            raise NotBinaryPartition("quadratic objective needs a 0/1 vector")
    return g.astype(float)


def quadratic_objective(gram: KernelGram, part) -> float:
    """``g'Wg - g'w`` for a two-group partition (or any 0/1 vector).

    Affine in the criterion when the two groups have equal size:
    ``criterion = (4 * objective + sum(W)) / (n^2 |H|)``.
    """
    g = _binary_vector(part)
    _check_size(gram, g)
    return float(g @ gram.W @ g - g @ gram.w)


def criterion_from_quadratic(gram: KernelGram, objective: float, n: int) -> float:
    return (4.0 * objective + gram.total) / (n * n * gram.det_H)


def monomial_features(cov: CovariateTable) -> tuple[list[str], np.ndarray]:
    """First moments, squares, then cross products ``z_k z_m`` (k < m)."""
    z = cov.values
    names = list(cov.columns)
    feats = [z[:, k] for k in range(z.shape[1])]
    names += [f"{c}^2" for c in cov.columns]
    feats += [z[:, k] ** 2 for k in range(z.shape[1])]
    for k, m in combinations(range(z.shape[1]), 2):
        names.append(f"{cov.columns[k]}*{cov.columns[m]}")
        feats.append(z[:, k] * z[:, m])
    return names, np.column_stack(feats)


def moment_discrepancy(cov: CovariateTable, part: Partition) -> dict[str, float]:
    """Absolute difference of group means for every monomial up to degree two."""
    if part.L != 2:
        raise NotBinaryPartition(f"moment discrepancy is defined for L=2, got L={part.L}")
    _check_size(cov, part)
    names, F = monomial_features(cov)
    m0 = F[part.g == 0].mean(axis=0)
    m1 = F[part.g == 1].mean(axis=0)
    return dict(zip(names, np.abs(m0 - m1).tolist()))


def _check_size(obj, part):
    n = obj.n_units
    m = part.n_units if isinstance(part, Partition) else len(part)
    if n != m:
        raise DataError(f"partition has {m} units but the data has {n}")


@dataclass
class BalanceReport:
    b_value: float
    pairwise: np.ndarray
    moments: dict[str, float] | None
    method: str
    group_sizes: list[int]
    seed: int | None = None
    timings: dict[str, float] | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "b_value": self.b_value,
            "pairwise": np.asarray(self.pairwise).tolist(),
            "moments": self.moments,
            "method": self.method,
            "seed": self.seed,
            "timings": self.timings,
            "group_sizes": list(self.group_sizes),
            "flags": list(self.flags),
        }


def balance_report(
    cov: CovariateTable,
    gram: KernelGram,
    part: Partition,
    method: str,
    seed: int | None = None,
    timings: dict[str, float] | None = None,
    flags=(),
) -> BalanceReport:
    flags = list(flags)
    if gram.bandwidth is not None and gram.bandwidth.ridged:
        flags.append(f"bandwidth_ridge={gram.bandwidth.ridge:.6g}")
    S = block_sums(gram, part)
    raw = [
        _pair_value(S, part.group_sizes, l, s, gram.det_H)
        for l, s in combinations(range(part.L), 2)
    ]
    if min(raw) < -NEGATIVE_FLAG_TOL:
        flags.append("negative_pairwise_clamped")
    P = pairwise_matrix(gram, part)
    return BalanceReport(
        b_value=float(P.max()),
        pairwise=P,
        moments=moment_discrepancy(cov, part) if part.L == 2 else None,
        method=method,
        group_sizes=[int(n) for n in part.group_sizes],
        seed=seed,
        timings=timings,
        flags=flags,
    )
