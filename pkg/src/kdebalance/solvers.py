"""Minimizers of the KDE balance criterion over fixed-size partitions.

Two solvers share the Gram block-sum bookkeeping:

* :func:`solve_exact` enumerates every two-group split (N <= exact_limit),
  visiting them in increasing lexicographic order of ``g`` so the first
  minimizer found is the lexicographically smallest one.
* :func:`solve_anneal` runs simulated annealing with swap moves, which keep
  every group size fixed. A swap changes the ``L x L`` block sums in O(L)
  given the per-unit group row sums ``R[i, l] = sum_{g_j = l} W(i, j)``;
  an accepted swap refreshes ``R`` in O(N L).

For two equal groups both solvers minimize the unscaled quadratic
``g'Wg - g'w``; otherwise they minimize the criterion itself.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np
from numba import njit

from .criterion import Partition, block_sums, criterion_value, quadratic_objective
from .errors import DataError, SameGroup, SizeMismatch, TooLargeForExact
from .kernel_gram import KernelGram

log = logging.getLogger(__name__)

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class AnnealConfig:
    chains: int = 4
    iters_per_chain: int | None = None  # proposals per run; None -> 50 * N
    t_initial: float | None = None  # None -> auto-scaled from random swaps
    cooling: float = 0.995
    restarts: int = 2
    polish: bool = True

    def __post_init__(self):
        if self.chains < 1:
            raise DataError("anneal.chains must be >= 1")
        if self.iters_per_chain is not None and self.iters_per_chain < 1:
            raise DataError("anneal.iters_per_chain must be >= 1")
        if not 0 < self.cooling < 1:
            raise DataError("anneal.cooling must lie in (0, 1)")
        if self.restarts < 0:
            raise DataError("anneal.restarts must be >= 0")
        if self.t_initial is not None and not self.t_initial > 0:
            raise DataError("anneal.t_initial must be positive")


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "auto"
    seed: int = 0
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    exact_limit: int = 24
    threads: int = 1

    def __post_init__(self):
        if self.mode not in ("auto", "exact", "anneal"):
            raise DataError(f"unknown solver mode {self.mode!r}")

    def with_anneal(self, **kw) -> "SolverConfig":
        return replace(self, anneal=replace(self.anneal, **kw))


def default_sizes(N: int, L: int) -> np.ndarray:
    """Floor/ceil split of ``N`` units into ``L`` groups, larger groups first."""
    if L < 2:
        raise DataError(f"need at least 2 groups, got L={L}")
    if N < L:
        raise SizeMismatch(f"cannot split {N} units into {L} nonempty groups")
    base, extra = divmod(N, L)
    return np.array([base + 1] * extra + [base] * (L - extra), dtype=np.int64)


def _check_sizes(N: int, sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.int64).ravel()
    if sizes.size < 2:
        raise SizeMismatch("need sizes for at least 2 groups")
    if (sizes < 1).any():
        raise SizeMismatch(f"every group needs at least one unit, got sizes {sizes.tolist()}")
    if sizes.sum() != N:
        raise SizeMismatch(f"group sizes {sizes.tolist()} sum to {sizes.sum()}, not N={N}")
    return sizes


def uses_quadratic(sizes) -> bool:
    sizes = np.asarray(sizes)
    return sizes.size == 2 and sizes[0] == sizes[1]


def objective(gram: KernelGram, part: Partition) -> float:
    """The quantity the solvers minimize for this partition's group sizes."""
    if uses_quadratic(part.group_sizes):
        return quadratic_objective(gram, part)
    return criterion_value(gram, part)


# ---------------------------------------------------------------------------
# block-sum kernels


@njit(cache=True, nogil=True)
def _objective_from_sums(S, sizes, det_H, quadratic):
    if quadratic:
        return -S[0, 1]
    L = S.shape[0]
    best = -np.inf
    for l in range(L):
        for s in range(l + 1, L):
            nl = sizes[l]
            ns = sizes[s]
            v = (S[l, l] / (nl * nl) + S[s, s] / (ns * ns) - 2.0 * S[l, s] / (nl * ns)) / det_H
            if v > best:
                best = v
    return best


@njit(cache=True, nogil=True)
def _move(S, r, wuu, a, b):
    # unit with group row sums r leaves group a for group b
    L = S.shape[0]
    S[a, a] -= 2.0 * r[a] - wuu
    S[b, b] += 2.0 * r[b] + wuu
    ab = S[a, b] + r[a] - wuu - r[b]
    S[a, b] = ab
    S[b, a] = ab
    for c in range(L):
        if c != a and c != b:
            S[a, c] -= r[c]
            S[c, a] = S[a, c]
            S[b, c] += r[c]
            S[c, b] = S[b, c]


@njit(cache=True, nogil=True)
def _swapped_sums(S, Ri, Rj, wii, wjj, wij, a, b, out, rj):
    for p in range(S.shape[0]):
        for q in range(S.shape[1]):
            out[p, q] = S[p, q]
    _move(out, Ri, wii, a, b)
    for c in range(rj.size):
        rj[c] = Rj[c]
    rj[a] -= wij
    rj[b] += wij
    _move(out, rj, wjj, b, a)


@njit(cache=True, nogil=True)
def _row_and_block_sums(W, g, L):
    N = W.shape[0]
    R = np.zeros((N, L))
    for i in range(N):
        for j in range(N):
            R[i, g[j]] += W[i, j]
    S = np.zeros((L, L))
    for i in range(N):
        for l in range(L):
            S[g[i], l] += R[i, l]
    return R, S


@njit(cache=True, nogil=True)
def _apply_swap(W, g, R, i, j):
    a = g[i]
    b = g[j]
    N = W.shape[0]
    for k in range(N):
        d = W[k, j] - W[k, i]
        R[k, a] += d
        R[k, b] -= d
    g[i] = b
    g[j] = a


@njit(cache=True, nogil=True)
def _polish(W, g, sizes, L, det_H, quadratic, tol):
    # first-improvement descent over all cross-group swaps
    N = W.shape[0]
    R, S = _row_and_block_sums(W, g, L)
    cur = _objective_from_sums(S, sizes, det_H, quadratic)
    T = np.empty((L, L))
    rj = np.empty(L)
    improved = True
    while improved:
        improved = False
        for i in range(N):
            for j in range(i + 1, N):
                a = g[i]
                b = g[j]
                if a == b:
                    continue
                _swapped_sums(S, R[i], R[j], W[i, i], W[j, j], W[i, j], a, b, T, rj)
                new = _objective_from_sums(T, sizes, det_H, quadratic)
                if new < cur - tol:
                    _apply_swap(W, g, R, i, j)
                    S[:, :] = T
                    cur = new
                    improved = True
    return cur


@njit(cache=True, nogil=True)
def _anneal_chain(W, sizes, det_H, quadratic, n_runs, iters, t_initial, cooling, polish, tol, seed):
    np.random.seed(seed)
    N = W.shape[0]
    L = sizes.size
    g = np.empty(N, dtype=np.int64)
    pos = 0
    for l in range(L):
        for _ in range(sizes[l]):
            g[pos] = l
            pos += 1
    np.random.shuffle(g)

    R, S = _row_and_block_sums(W, g, L)
    T = np.empty((L, L))
    rj = np.empty(L)

    t0 = t_initial
    if t0 <= 0.0:
        # scale from the spread of objective changes under 100 random swaps
        cur = _objective_from_sums(S, sizes, det_H, quadratic)
        deltas = np.empty(100)
        for k in range(100):
            i = np.random.randint(N)
            j = np.random.randint(N)
            while g[i] == g[j]:
                i = np.random.randint(N)
                j = np.random.randint(N)
            _swapped_sums(S, R[i], R[j], W[i, i], W[j, j], W[i, j], g[i], g[j], T, rj)
            deltas[k] = _objective_from_sums(T, sizes, det_H, quadratic) - cur
        t0 = deltas.std()
        if not t0 > 0.0:
            t0 = tol + 1e-300

    best_g = g.copy()
    best = _objective_from_sums(S, sizes, det_H, quadratic)
    for run in range(n_runs):
        if run > 0:
            g[:] = best_g
        R, S = _row_and_block_sums(W, g, L)
        cur = _objective_from_sums(S, sizes, det_H, quadratic)
        t = t0
        for it in range(iters):
            i = np.random.randint(N)
            j = np.random.randint(N)
            while g[i] == g[j]:
                i = np.random.randint(N)
                j = np.random.randint(N)
            _swapped_sums(S, R[i], R[j], W[i, i], W[j, j], W[i, j], g[i], g[j], T, rj)
            new = _objective_from_sums(T, sizes, det_H, quadratic)
            delta = new - cur
            if delta <= 0.0 or np.random.random() < np.exp(-delta / t):
                _apply_swap(W, g, R, i, j)
                S[:, :] = T
                cur = new
                if cur < best - tol:
                    best = cur
                    best_g[:] = g
            if (it + 1) % N == 0:
                t *= cooling
        if polish:
            g[:] = best_g
            val = _polish(W, g, sizes, L, det_H, quadratic, tol)
            if val < best - tol:
                best = val
                best_g[:] = g
    return best_g


@njit(cache=True, nogil=True)
def _exact_enumerate(W, w, total, n0, n1, fix_first, det_H, quadratic, tol):
    # g_k = 1 <-> bit (N-1-k) of mask; increasing mask == increasing lex order of g
    N = W.shape[0]
    limit = np.int64(1) << (N - 1 if fix_first else N)
    mask = (np.int64(1) << n1) - 1
    acc = np.zeros(N)
    s11 = 0.0
    s1w = 0.0
    prev = np.int64(0)
    best = np.inf
    best_mask = mask
    step = 0
    while mask < limit:
        if step % 4096 == 0:
            acc[:] = 0.0
            s11 = 0.0
            s1w = 0.0
            for k in range(N):
                if (mask >> (N - 1 - k)) & 1:
                    s1w += w[k]
                    for j in range(N):
                        acc[j] += W[j, k]
            for k in range(N):
                if (mask >> (N - 1 - k)) & 1:
                    s11 += acc[k]
        else:
            diff = mask ^ prev
            for k in range(N):
                bit = N - 1 - k
                if (diff >> bit) & 1:
                    if (mask >> bit) & 1:
                        s11 += 2.0 * acc[k] + W[k, k]
                        s1w += w[k]
                        for j in range(N):
                            acc[j] += W[j, k]
                    else:
                        s11 -= 2.0 * acc[k] - W[k, k]
                        s1w -= w[k]
                        for j in range(N):
                            acc[j] -= W[j, k]
        if quadratic:
            val = s11 - s1w
        else:
            s01 = s1w - s11
            s00 = total - 2.0 * s1w + s11
            val = (s00 / (n0 * n0) + s11 / (n1 * n1) - 2.0 * s01 / (n0 * n1)) / det_H
        if val < best - tol:
            best = val
            best_mask = mask
        prev = mask
        step += 1
        # Gosper's hack: next larger integer with the same popcount
        c = mask & -mask
        r = mask + c
        mask = (((r ^ mask) >> 2) // c) | r
    return best_mask


def _tolerance(gram: KernelGram, sizes, quadratic: bool) -> float:
    N = gram.n_units
    if quadratic:
        return TIE_RTOL * abs(gram.total)
    return TIE_RTOL * abs(gram.total) / (N * N * gram.det_H)


def solve_exact(gram: KernelGram, sizes=None, exact_limit: int = 24) -> Partition:
    """Global minimizer over all two-group splits with the given sizes.

    With equal sizes the first unit is pinned to group 0 (the criterion is
    label-symmetric). Among ties within a relative 1e-12 the
    lexicographically smallest ``g`` is returned.
    """
    N = gram.n_units
    sizes = default_sizes(N, 2) if sizes is None else _check_sizes(N, sizes)
    if sizes.size != 2:
        raise DataError(f"exact search supports L=2 only, got L={sizes.size}")
    if N > exact_limit:
        raise TooLargeForExact(f"N={N} exceeds exact_limit={exact_limit}")
    if N > 62:
        raise TooLargeForExact("exact search is limited to N <= 62")
    n0, n1 = int(sizes[0]), int(sizes[1])
    quadratic = n0 == n1
    mask = _exact_enumerate(
        np.ascontiguousarray(gram.W),
        np.ascontiguousarray(gram.w),
        gram.total,
        n0,
        n1,
        quadratic,
        gram.det_H,
        quadratic,
        _tolerance(gram, sizes, quadratic),
    )
    g = np.array([(int(mask) >> (N - 1 - k)) & 1 for k in range(N)], dtype=np.int64)
    return Partition(g, 2)


def _chain_seed(seed: int, chain: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), chain]).generate_state(1)[0])


def _lex_key(g: np.ndarray) -> tuple:
    return tuple(g.tolist())


def solve_anneal(gram: KernelGram, sizes, cfg: SolverConfig | None = None) -> Partition:
    """Best partition over independent annealing chains with swap moves.

    Each chain runs ``1 + restarts`` cooling schedules of
    ``iters_per_chain`` proposals; the first starts from a random split and
    later ones restart from the chain's best state. The temperature is
    multiplied by ``cooling`` after every N proposals. With ``polish`` each
    schedule ends with a greedy descent to a swap-local minimum. Chains are
    merged by objective, then lexicographic ``g``, so the result does not
    depend on thread scheduling.
    """
    cfg = SolverConfig() if cfg is None else cfg
    N = gram.n_units
    sizes = _check_sizes(N, sizes)
    quadratic = uses_quadratic(sizes)
    ac = cfg.anneal
    iters = ac.iters_per_chain if ac.iters_per_chain is not None else 50 * N
    tol = _tolerance(gram, sizes, quadratic)
    W = np.ascontiguousarray(gram.W)

    def run(chain):
        return _anneal_chain(
            W,
            sizes,
            gram.det_H,
            quadratic,
            1 + ac.restarts,
            int(iters),
            float(ac.t_initial or 0.0),
            float(ac.cooling),
            bool(ac.polish),
            tol,
            _chain_seed(cfg.seed, chain) % (2**32),
        )

    if cfg.threads > 1 and ac.chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run, range(ac.chains)))
    else:
        results = [run(c) for c in range(ac.chains)]

    L = sizes.size
    scored = []
    for g in results:
        part = Partition(g, L)
        scored.append((objective(gram, part), part))
    best_val = min(v for v, _ in scored)
    ties = [p for v, p in scored if v <= best_val + tol]
    return min(ties, key=lambda p: _lex_key(p.g))


def incremental_delta(gram: KernelGram, part: Partition, i: int, j: int) -> float:
    """Change in the solver objective if units ``i`` and ``j`` swap groups."""
    a, b = int(part.g[i]), int(part.g[j])
    if a == b:
        raise SameGroup(f"units {i} and {j} are both in group {a}")
    sizes = part.group_sizes
    quadratic = uses_quadratic(sizes)
    S = block_sums(gram, part)
    R = gram.W @ part.indicator()
    out = np.empty_like(S)
    _swapped_sums(S, R[i], R[j], gram.W[i, i], gram.W[j, j], gram.W[i, j], a, b, out, np.empty(part.L))
    sz = np.asarray(sizes, dtype=np.int64)
    return float(
        _objective_from_sums(out, sz, gram.det_H, quadratic)
        - _objective_from_sums(S, sz, gram.det_H, quadratic)
    )


def choose_mode(cfg: SolverConfig, N: int, L: int) -> str:
    if cfg.mode != "auto":
        return cfg.mode
    return "exact" if L == 2 and N <= cfg.exact_limit else "anneal"


def kde_partition(gram: KernelGram, sizes=None, L: int = 2, cfg: SolverConfig | None = None) -> Partition:
    """KDE-based partition using the solver picked by ``cfg.mode``."""
    cfg = SolverConfig() if cfg is None else cfg
    N = gram.n_units
    sizes = default_sizes(N, L) if sizes is None else _check_sizes(N, sizes)
    mode = choose_mode(cfg, N, sizes.size)
    log.debug("kde partition: N=%d L=%d mode=%s", N, sizes.size, mode)
    if mode == "exact":
        return solve_exact(gram, sizes, exact_limit=cfg.exact_limit)
    return solve_anneal(gram, sizes, cfg)


def n_exact_candidates(N: int, sizes) -> int:
    n0, n1 = (int(s) for s in sizes)
    return comb(N - 1, n1) if n0 == n1 else comb(N, n1)
