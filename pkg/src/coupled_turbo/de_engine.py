"""Exact BEC transfer functions and density evolution for coupled turbo chains.

The component decoder's behaviour on the BEC is captured by two scalar maps
f_p(p, q) and f_q(p, q): the probability that the extrinsic output for a
systematic (resp. parity) position stays erased when systematic inputs are
erased i.i.d. with probability p and parity inputs with probability q. Both
are computed exactly from the stationary distributions of the forward and
backward state-knowledge-set Markov chains of the trellis (all-zero codeword,
valid by linearity). Density evolution then iterates these maps over a length-
L chain of coupled blocks; the BP threshold is found by bisection on the
channel erasure rate.
"""

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._accel import NUMBA_ENABLED, njit
from .conv_trellis import Trellis, build_trellis

_CACHE_ENV = "COUPLED_TURBO_CACHE"
_GRID_FORMAT_VERSION = 2

# Observation patterns at one trellis step, all-zero codeword: flags say
# whether the systematic / parity symbol is erased. Probabilities are
# [(1-p)(1-q), (1-p)q, p(1-q), pq] in this order.
_PATTERNS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _forward_map(trellis, mask, sys_erased, par_erased):
    out = 0
    for s in range(trellis.num_states):
        if not (mask >> s) & 1:
            continue
        for u in (0, 1):
            if not sys_erased and u != 0:
                continue
            if not par_erased and trellis.parity_out[s, u] != 0:
                continue
            out |= 1 << trellis.next_state[s, u]
    return out


def _backward_map(trellis, mask, sys_erased, par_erased):
    out = 0
    for s in range(trellis.num_states):
        for u in (0, 1):
            if not sys_erased and u != 0:
                continue
            if not par_erased and trellis.parity_out[s, u] != 0:
                continue
            if (mask >> trellis.next_state[s, u]) & 1:
                out |= 1 << s
                break
    return out


def _bfs_subsets(trellis, step):
    """Subsets reachable from {state 0} under the four observation patterns.

    Returns (subsets, maps) with maps[k][i] the index of the successor of
    subsets[i] under pattern k. Every pattern acts deterministically on
    subsets, so the chain's transition matrix is a pattern-probability
    mixture of permutation-like 0/1 matrices.
    """
    start = 1
    subsets = [start]
    index = {start: 0}
    maps = [[] for _ in _PATTERNS]
    frontier = [start]
    while frontier:
        nxt = []
        for mask in frontier:
            for k, (se, pe) in enumerate(_PATTERNS):
                out = step(trellis, mask, se, pe)
                if out == 0:
                    raise AssertionError("all-zero path died: table bug")
                if out not in index:
                    index[out] = len(subsets)
                    subsets.append(out)
                    nxt.append(out)
        frontier = nxt
    for k, (se, pe) in enumerate(_PATTERNS):
        maps[k] = [index[step(trellis, mask, se, pe)] for mask in subsets]
    return subsets, np.array(maps, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SubsetChains:
    """Forward/backward knowledge-set chains plus output indicator forms."""

    trellis: Trellis
    fwd_subsets: tuple
    bwd_subsets: tuple
    fwd_maps: np.ndarray  # (4, Sf) successor indices per pattern
    bwd_maps: np.ndarray  # (4, Sb)
    # Indicator matrices over (forward subset, backward subset): the event
    # that the wrong-bit alternative survives, which is exactly when the
    # extrinsic output stays erased.
    ind_p_erased: np.ndarray = field(repr=False, default=None)
    ind_p_known: np.ndarray = field(repr=False, default=None)
    ind_q_erased: np.ndarray = field(repr=False, default=None)
    ind_q_known: np.ndarray = field(repr=False, default=None)


def build_subset_chains(trellis: Trellis) -> SubsetChains:
    fwd_subsets, fwd_maps = _bfs_subsets(trellis, _forward_map)
    bwd_subsets, bwd_maps = _bfs_subsets(trellis, _backward_map)
    nf, nb = len(fwd_subsets), len(bwd_subsets)
    ipe = np.zeros((nf, nb))
    ipk = np.zeros((nf, nb))
    iqe = np.zeros((nf, nb))
    iqk = np.zeros((nf, nb))
    for a, A in enumerate(fwd_subsets):
        states = [s for s in range(trellis.num_states) if (A >> s) & 1]
        for b, B in enumerate(bwd_subsets):
            # u = 1 survivable between A and B, parity symbol erased / known-0.
            pe = pk = False
            # parity = 1 survivable, systematic symbol erased / known-0.
            qe = qk = False
            for s in states:
                for u in (0, 1):
                    ns_in_b = (B >> trellis.next_state[s, u]) & 1
                    if not ns_in_b:
                        continue
                    v = trellis.parity_out[s, u]
                    if u == 1:
                        pe = True
                        if v == 0:
                            pk = True
                    if v == 1:
                        qe = True
                        if u == 0:
                            qk = True
            ipe[a, b] = pe
            ipk[a, b] = pk
            iqe[a, b] = qe
            iqk[a, b] = qk
    return SubsetChains(
        trellis=trellis,
        fwd_subsets=tuple(fwd_subsets),
        bwd_subsets=tuple(bwd_subsets),
        fwd_maps=fwd_maps,
        bwd_maps=bwd_maps,
        ind_p_erased=ipe,
        ind_p_known=ipk,
        ind_q_erased=iqe,
        ind_q_known=iqk,
    )


def _pattern_probs(pbar, qbar):
    pbar = np.asarray(pbar, dtype=np.float64)
    qbar = np.asarray(qbar, dtype=np.float64)
    return np.stack(
        [(1 - pbar) * (1 - qbar), (1 - pbar) * qbar, pbar * (1 - qbar), pbar * qbar],
        axis=-1,
    )


def _stationary_from_start(maps, probs, tol=1e-13, max_doublings=96):
    """Rows lim_n delta_0 M^n for a batch of pattern-probability mixtures.

    probs has shape (B, 4). Repeated squaring of the (B, S, S) stack is exact
    up to float rounding even where the chain is reducible (grid boundaries),
    because it extracts the limit of the row of the physical start subset {0}.
    Convergence is judged on that row only: other rows may cycle forever
    (boundary patterns act deterministically and have periodic subset orbits
    that the start row never enters). Rows are renormalised after every
    squaring; without that, a rowsum drift of (1 + d) compounds to
    (1 + d)^(2^k) and overflows after ~60 squarings. Requiring the previous
    squaring's delta below sqrt(tol) too rules out the near-1 plateau of an
    almost-reducible chain, where one delta can dip early: in the squaring
    regime the error literally squares each step, so the pair of thresholds
    is consistent only once the row has truly converged.
    """
    B = probs.shape[0]
    S = maps.shape[1]
    M = np.zeros((B, S, S))
    rows = np.arange(S)
    for k in range(4):
        # (rows, maps[k]) pairs are distinct for fixed k, so += is safe.
        M[:, rows, maps[k]] += probs[:, k, None]
    delta_prev = np.inf
    for _ in range(max_doublings):
        M2 = np.matmul(M, M)
        M2 /= M2.sum(axis=2, keepdims=True)
        delta = np.max(np.abs(M2[:, 0, :] - M[:, 0, :]))
        M = M2
        if delta < tol and delta_prev < np.sqrt(tol):
            return M[:, 0, :]
        delta_prev = delta
    raise RuntimeError("stationary distribution did not converge")


class TransferFunction:
    """Exact f_p / f_q of a component decoder, vectorised over inputs."""

    def __init__(self, trellis: Trellis):
        self.trellis = trellis
        self.chains = build_subset_chains(trellis)

    def pair(self, pbar, qbar):
        """(f_p, f_q) at broadcasted points; shares the chain solves."""
        pbar, qbar = np.broadcast_arrays(
            np.asarray(pbar, dtype=np.float64), np.asarray(qbar, dtype=np.float64)
        )
        shape = pbar.shape
        p = pbar.ravel()
        q = qbar.ravel()
        probs = _pattern_probs(p, q)
        c = self.chains
        pi_f = _stationary_from_start(c.fwd_maps, probs)
        pi_b = _stationary_from_start(c.bwd_maps, probs)
        val_pe = np.einsum("bi,ij,bj->b", pi_f, c.ind_p_erased, pi_b)
        val_pk = np.einsum("bi,ij,bj->b", pi_f, c.ind_p_known, pi_b)
        val_qe = np.einsum("bi,ij,bj->b", pi_f, c.ind_q_erased, pi_b)
        val_qk = np.einsum("bi,ij,bj->b", pi_f, c.ind_q_known, pi_b)
        f_p = q * val_pe + (1 - q) * val_pk
        f_q = p * val_qe + (1 - p) * val_qk
        return f_p.reshape(shape), f_q.reshape(shape)

    def f_p(self, pbar, qbar):
        return self.pair(pbar, qbar)[0]

    def f_q(self, pbar, qbar):
        return self.pair(pbar, qbar)[1]


def exact_transfer(trellis: Trellis = None) -> TransferFunction:
    return TransferFunction(trellis if trellis is not None else build_trellis())


# ---------------------------------------------------------------------------
# Memoized transfer grid


@dataclass(frozen=True, eq=False)
class GridTransfer:
    """f_p / f_q tabulated on two corner-unfolded patches + bilinear lookup.

    A single uniform grid over (pbar, qbar) cannot hit 1e-6 interpolation
    error: near (pbar, qbar) = (1, 0) and (0, 1) the functions behave like a
    rate competition r = t/(s+t) between the distances s, t to the two edges
    (for example f_p -> r^2 approaching (1, 0)), so derivatives blow up and
    no finite uniform resolution helps. In the unfolded coordinates
    sigma = s + t (anti-diagonal distance from the bad corner) and r the
    functions are smooth with O(1) curvature, and the two patches
    (q <= p unfolds (1, 0); q > p unfolds (0, 1)) tile the full square,
    meeting continuously on the diagonal because the shared edge nodes
    coincide. fp_grid/fq_grid have shape (2, n, n): patch, sigma row, r col.
    """

    fp_grid: np.ndarray
    fq_grid: np.ndarray
    n: int

    def f_p(self, pbar, qbar):
        return _corner_bilinear_np(self.fp_grid, np.asarray(pbar, dtype=float),
                                   np.asarray(qbar, dtype=float))

    def f_q(self, pbar, qbar):
        return _corner_bilinear_np(self.fq_grid, np.asarray(pbar, dtype=float),
                                   np.asarray(qbar, dtype=float))

    def pair(self, pbar, qbar):
        return self.f_p(pbar, qbar), self.f_q(pbar, qbar)


def _corner_bilinear_np(grid, p, q):
    """Vectorised patch-select + bilinear in (sigma, r) coordinates."""
    p, q = np.broadcast_arrays(p, q)
    k = (q > p).astype(np.int64)
    s = np.where(k == 0, 1.0 - p, p)
    t = np.where(k == 0, q, 1.0 - q)
    sig = s + t
    safe = sig > 0.0
    r = np.where(safe, t / np.where(safe, sig, 1.0), 0.0)
    n = grid.shape[1]
    h = 1.0 / (n - 1)
    ix = np.clip((sig / h).astype(np.int64), 0, n - 2)
    iy = np.clip((r / h).astype(np.int64), 0, n - 2)
    fx = sig / h - ix
    fy = r / h - iy
    g00 = grid[k, ix, iy]
    g01 = grid[k, ix, iy + 1]
    g10 = grid[k, ix + 1, iy]
    g11 = grid[k, ix + 1, iy + 1]
    out = (
        g00 * (1 - fx) * (1 - fy)
        + g01 * (1 - fx) * fy
        + g10 * fx * (1 - fy)
        + g11 * fx * fy
    )
    # sigma == 0 only at the exact corners (1,0) and (0,1), where f = 0.
    return np.where(safe, out, 0.0)


def _cache_dir():
    base = os.environ.get(_CACHE_ENV)
    if base:
        return Path(base)
    return Path.home() / ".cache" / "coupled_turbo"


_GRID_CACHE = {}


def memoized_transfer(trellis: Trellis = None, n: int = 2048,
                      chunk: int = 1 << 17, verbose: bool = False) -> GridTransfer:
    """Grid-tabulated transfer functions, cached in memory and on disk.

    The first build for a given trellis/grid size solves two subset chains at
    2 n^2 points (about a minute at n=2048); afterwards results load
    from ~/.cache/coupled_turbo (override with COUPLED_TURBO_CACHE).
    """
    if trellis is None:
        trellis = build_trellis()
    spec = trellis.spec
    key = (spec.feedback, spec.feedforward, spec.memory, n, _GRID_FORMAT_VERSION)
    if key in _GRID_CACHE:
        return _GRID_CACHE[key]
    name = "transfer_{:o}_{:o}_m{}_n{}_v{}.npz".format(*key)
    path = _cache_dir() / name
    if path.exists():
        data = np.load(path)
        gt = GridTransfer(fp_grid=data["fp"], fq_grid=data["fq"], n=n)
        _GRID_CACHE[key] = gt
        return gt
    tf = exact_transfer(trellis)
    axis = np.linspace(0.0, 1.0, n)
    # The sigma = 0 row holds the corner limit; evaluate it just off the
    # corner, where the exact values have converged to the limit within 1e-9.
    sig_eval = axis.copy()
    sig_eval[0] = 1e-9
    ss, rr = np.meshgrid(sig_eval, axis, indexing="ij")
    fp = np.empty((2, n * n))
    fq = np.empty((2, n * n))
    for patch in range(2):
        if patch == 0:
            pflat = (1.0 - (1.0 - rr) * ss).ravel()
            qflat = (rr * ss).ravel()
        else:
            pflat = ((1.0 - rr) * ss).ravel()
            qflat = (1.0 - rr * ss).ravel()
        for lo in range(0, n * n, chunk):
            hi = min(lo + chunk, n * n)
            fp[patch, lo:hi], fq[patch, lo:hi] = tf.pair(pflat[lo:hi],
                                                         qflat[lo:hi])
            if verbose:
                print(f"transfer grid: patch {patch} {hi}/{n * n}", flush=True)
    gt = GridTransfer(fp_grid=fp.reshape(2, n, n), fq_grid=fq.reshape(2, n, n),
                      n=n)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, fp=gt.fp_grid, fq=gt.fq_grid)
    _GRID_CACHE[key] = gt
    return gt


# ---------------------------------------------------------------------------
# Monte-Carlo cross-check of the transfer functions


@njit(cache=True)
def _mc_transfer_kernel(next_state, parity_out, fwd_step, bwd_step, reach_u,
                        reach_v, n, pbar, qbar, seed_bits, info_bits,
                        sys_mask, par_mask, sys_ext, par_ext):
    # Encode info_bits from state 0 (no termination), apply the erasure
    # masks, then run the set-propagation decoder in place.
    s = 0
    for t in range(n):
        u = info_bits[t]
        v = parity_out[s, u]
        s = next_state[s, u]
        sys_ext[t] = 2 if sys_mask[t] else u
        par_ext[t] = 2 if par_mask[t] else v
    n_states = next_state.shape[0]
    all_states = (1 << n_states) - 1
    alpha = np.empty(n + 1, dtype=np.int64)
    alpha[0] = 1
    for t in range(n):
        alpha[t + 1] = fwd_step[alpha[t], sys_ext[t] * 3 + par_ext[t]]
    beta = all_states
    for t in range(n - 1, -1, -1):
        a = alpha[t]
        obs = sys_ext[t] * 3 + par_ext[t]
        e0 = reach_u[a, par_ext[t], 0] & beta
        e1 = reach_u[a, par_ext[t], 1] & beta
        f0 = reach_v[a, sys_ext[t], 0] & beta
        f1 = reach_v[a, sys_ext[t], 1] & beta
        beta = bwd_step[beta, obs]
        sys_ext[t] = 2 if (e0 != 0 and e1 != 0) else (0 if e0 != 0 else 1)
        par_ext[t] = 2 if (f0 != 0 and f1 != 0) else (0 if f0 != 0 else 1)
    return 0


def mc_transfer(trellis: Trellis, pbar, qbar, trellis_len=10**6, seed=0,
                n_blocks=200):
    """Monte-Carlo estimate of (f_p, f_q) with block-resampled standard errors.

    Encodes random info over one long unterminated trellis, erases
    systematic symbols i.i.d. at pbar and parity at qbar, decodes, and counts
    erased extrinsics over interior positions (10*memory discarded per side).
    Standard errors come from splitting the interior into n_blocks blocks,
    which absorbs the short-range correlation along the trellis.
    """
    if trellis_len < 10**4:
        raise ValueError("trellis_len must be at least 1e4")
    rng = np.random.default_rng(seed)
    n = int(trellis_len)
    info = rng.integers(0, 2, n, dtype=np.int8)
    sys_mask = rng.random(n) < pbar
    par_mask = rng.random(n) < qbar
    sys_ext = np.empty(n, dtype=np.int8)
    par_ext = np.empty(n, dtype=np.int8)
    _mc_transfer_kernel(
        trellis.next_state, trellis.parity_out, trellis.fwd_step,
        trellis.bwd_step, trellis.reach_u, trellis.reach_v, n,
        float(pbar), float(qbar), 0, info, sys_mask, par_mask, sys_ext, par_ext,
    )
    skip = 10 * trellis.memory
    inner_p = (sys_ext[skip:n - skip] == 2).astype(np.float64)
    inner_q = (par_ext[skip:n - skip] == 2).astype(np.float64)
    usable = inner_p.size - inner_p.size % n_blocks
    bp = inner_p[:usable].reshape(n_blocks, -1).mean(axis=1)
    bq = inner_q[:usable].reshape(n_blocks, -1).mean(axis=1)
    f_p_hat = float(inner_p.mean())
    f_q_hat = float(inner_q.mean())
    se_p = float(bp.std(ddof=1) / np.sqrt(n_blocks))
    se_q = float(bq.std(ddof=1) / np.sqrt(n_blocks))
    return f_p_hat, f_q_hat, (se_p, se_q)


# ---------------------------------------------------------------------------
# Density evolution


@dataclass
class ChainConfig:
    """One coupled-chain ensemble: family, coupling, puncturing, transfer."""

    family: str  # "pic" or "ppc"
    lam: float
    m: int
    L: int
    rho: float = 1.0
    lam_split: tuple = None  # PPC (lam_u, lam_l); defaults to an even split
    schedule: str = "serial"  # "serial" (in-place sweeps) or "parallel"
    puncture_coupled_parity: bool = True  # PPC: coupled parity punctured too
    transfer: GridTransfer = None

    def __post_init__(self):
        if self.family not in ("pic", "ppc"):
            raise ValueError(f"unknown family {self.family!r}")
        lam_max = 0.5 if self.family == "pic" else 1.0
        if not 0 <= self.lam <= lam_max:
            raise ValueError(f"lam must lie in [0, {lam_max}] for {self.family}")
        if self.m < 1:
            raise ValueError("coupling memory m must be >= 1")
        if self.L < 2 * self.m:
            raise ValueError("chain length L must be at least 2m")
        if not 0 < self.rho <= 1:
            raise ValueError("surviving fraction rho must lie in (0, 1]")
        if self.schedule not in ("serial", "parallel"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.family == "ppc":
            if self.lam_split is None:
                self.lam_split = (self.lam / 2, self.lam / 2)
            lu, ll = self.lam_split
            if abs(lu + ll - self.lam) > 1e-12 or lu < 0 or ll < 0:
                raise ValueError("lam_split must be nonnegative and sum to lam")
        elif self.lam_split is not None:
            raise ValueError("lam_split only applies to ppc")

    def with_transfer(self, transfer):
        return replace(self, transfer=transfer)


def default_chain_length(m: int) -> int:
    """L = 100 covers m <= 15; longer memories need room for the wave."""
    return 100 if m <= 15 else 10 * m


def ppc_termination_fractions(L, m, lam):
    """Known-zero input fraction per block: the last m blocks are shortened."""
    tau = np.zeros(L)
    for t in range(L - m, L):
        tau[t] = min((t - (L - m) + 1) * lam / m, 1.0 - lam)
    return tau


@njit(cache=True)
def _bilinear1(grid, p, q):
    """Scalar twin of _corner_bilinear_np: patch-select + (sigma, r) lookup."""
    if q > p:
        k = 1
        s = p
        t = 1.0 - q
    else:
        k = 0
        s = 1.0 - p
        t = q
    sig = s + t
    if sig <= 0.0:
        return 0.0
    r = t / sig
    n = grid.shape[1]
    h = 1.0 / (n - 1)
    ix = int(sig / h)
    if ix > n - 2:
        ix = n - 2
    iy = int(r / h)
    if iy > n - 2:
        iy = n - 2
    fx = sig / h - ix
    fy = r / h - iy
    return (grid[k, ix, iy] * (1 - fx) * (1 - fy)
            + grid[k, ix, iy + 1] * (1 - fx) * fy
            + grid[k, ix + 1, iy] * fx * (1 - fy)
            + grid[k, ix + 1, iy + 1] * fx * fy)


@njit(cache=True)
def _de_step_pic_kernel(p_U, p_L, q_U, q_L, eps, lam, m, eps_rho,
                        fp_grid, fq_grid, parallel_schedule):
    L = p_U.shape[0]
    x = np.empty(L)
    coeff = lam / m
    base = 1.0 - 2.0 * lam
    # Upper update from the current arrays.
    for t in range(L):
        s = 0.0
        for j in range(1, m + 1):
            if t - j >= 0:
                s += p_U[t - j] * p_L[t - j]
            if t + j < L:
                s += p_U[t + j] * p_L[t + j]
        x[t] = eps * p_L[t] * (coeff * s + base)
    p_U_src = p_U.copy() if parallel_schedule else p_U
    for t in range(L):
        p_U[t] = _bilinear1(fp_grid, x[t], eps_rho)
        q_U[t] = _bilinear1(fq_grid, x[t], eps_rho)
    # Lower update; under the serial schedule p_U is already fresh.
    for t in range(L):
        s = 0.0
        for j in range(1, m + 1):
            if t - j >= 0:
                s += p_U_src[t - j] * p_L[t - j]
            if t + j < L:
                s += p_U_src[t + j] * p_L[t + j]
        x[t] = eps * p_U_src[t] * (coeff * s + base)
    for t in range(L):
        p_L[t] = _bilinear1(fp_grid, x[t], eps_rho)
        q_L[t] = _bilinear1(fq_grid, x[t], eps_rho)


@njit(cache=True)
def _de_step_ppc_kernel(p_U, p_L, q_U, q_L, eps, lam_u, lam_l, m, eps_rho,
                        eps_coupled, tau, fp_grid, fq_grid, parallel_schedule):
    L = p_U.shape[0]
    x = np.empty(L)
    qb = np.empty(L)
    cu = lam_u / m
    cl = lam_l / m
    info_frac = 1.0 - lam_u - lam_l
    # Upper update.
    for t in range(L):
        s = 0.0
        for j in range(1, m + 1):
            if t - j >= 0:
                s += cu * q_U[t - j] + cl * q_L[t - j]
        x[t] = p_L[t] * (eps_coupled * s + eps * (info_frac - tau[t]))
        fb = 0.0
        for j in range(1, m + 1):
            if t + j < L:
                fb += p_L[t + j] * p_U[t + j]
        qb[t] = eps_rho * ((1.0 - lam_u) + cu * fb)
    p_U_src = p_U.copy() if parallel_schedule else p_U
    q_U_src = q_U.copy() if parallel_schedule else q_U
    for t in range(L):
        p_U[t] = _bilinear1(fp_grid, x[t], qb[t])
        q_U[t] = _bilinear1(fq_grid, x[t], qb[t])
    # Lower update; serial schedule sees the fresh upper values.
    for t in range(L):
        s = 0.0
        for j in range(1, m + 1):
            if t - j >= 0:
                s += cu * q_U_src[t - j] + cl * q_L[t - j]
        x[t] = p_U_src[t] * (eps_coupled * s + eps * (info_frac - tau[t]))
        fb = 0.0
        for j in range(1, m + 1):
            if t + j < L:
                fb += p_U_src[t + j] * p_L[t + j]
        qb[t] = eps_rho * ((1.0 - lam_l) + cl * fb)
    for t in range(L):
        p_L[t] = _bilinear1(fp_grid, x[t], qb[t])
        q_L[t] = _bilinear1(fq_grid, x[t], qb[t])


def _shifted_pair_sum(prod, m):
    """S[t] = sum_j prod[t-j] + prod[t+j], out-of-range terms zero."""
    L = prod.shape[0]
    s = np.zeros(L)
    for j in range(1, m + 1):
        s[j:] += prod[:-j]
        s[:-j] += prod[j:]
    return s


def _de_step_pic_np(p_U, p_L, q_U, q_L, eps, lam, m, eps_rho,
                    fp_grid, fq_grid, parallel_schedule):
    """Vectorised twin of _de_step_pic_kernel (fallback / cross-check)."""
    base = 1.0 - 2.0 * lam
    coeff = lam / m
    x = eps * p_L * (coeff * _shifted_pair_sum(p_U * p_L, m) + base)
    p_U_src = p_U.copy() if parallel_schedule else p_U
    p_U[:] = _corner_bilinear_np(fp_grid, x, np.full_like(x, eps_rho))
    q_U[:] = _corner_bilinear_np(fq_grid, x, np.full_like(x, eps_rho))
    x = eps * p_U_src * (coeff * _shifted_pair_sum(p_U_src * p_L, m) + base)
    p_L[:] = _corner_bilinear_np(fp_grid, x, np.full_like(x, eps_rho))
    q_L[:] = _corner_bilinear_np(fq_grid, x, np.full_like(x, eps_rho))


def _shifted_back_sum(arr, m):
    """S[t] = sum_j arr[t-j], zero-padded."""
    L = arr.shape[0]
    s = np.zeros(L)
    for j in range(1, m + 1):
        s[j:] += arr[:-j]
    return s


def _shifted_fwd_sum(arr, m):
    """S[t] = sum_j arr[t+j], zero-padded."""
    L = arr.shape[0]
    s = np.zeros(L)
    for j in range(1, m + 1):
        s[:-j] += arr[j:]
    return s


def _de_step_ppc_np(p_U, p_L, q_U, q_L, eps, lam_u, lam_l, m, eps_rho,
                    eps_coupled, tau, fp_grid, fq_grid, parallel_schedule):
    """Vectorised twin of _de_step_ppc_kernel (fallback / cross-check)."""
    cu = lam_u / m
    cl = lam_l / m
    info = 1.0 - lam_u - lam_l - tau
    x = p_L * (eps_coupled * (cu * _shifted_back_sum(q_U, m)
                              + cl * _shifted_back_sum(q_L, m)) + eps * info)
    qb = eps_rho * ((1.0 - lam_u) + cu * _shifted_fwd_sum(p_L * p_U, m))
    p_U_src = p_U.copy() if parallel_schedule else p_U
    q_U_src = q_U.copy() if parallel_schedule else q_U
    p_U[:] = _corner_bilinear_np(fp_grid, x, qb)
    q_U[:] = _corner_bilinear_np(fq_grid, x, qb)
    x = p_U_src * (eps_coupled * (cu * _shifted_back_sum(q_U_src, m)
                                  + cl * _shifted_back_sum(q_L, m)) + eps * info)
    qb = eps_rho * ((1.0 - lam_l) + cl * _shifted_fwd_sum(p_U_src * p_L, m))
    p_L[:] = _corner_bilinear_np(fp_grid, x, qb)
    q_L[:] = _corner_bilinear_np(fq_grid, x, qb)


@dataclass
class DEChainState:
    """Per-position erasure probabilities, indexable 0..L-1."""

    p_U: np.ndarray
    p_L: np.ndarray
    q_U: np.ndarray
    q_L: np.ndarray
    iteration: int = 0

    @classmethod
    def ones(cls, L):
        return cls(np.ones(L), np.ones(L), np.ones(L), np.ones(L))


def de_step_pic(state: DEChainState, eps, lam, m, rho, transfer,
                schedule="serial"):
    """One sweep of the coupled-information recursion, in place."""
    eps_rho = 1.0 - (1.0 - eps) * rho
    fn = _de_step_pic_kernel if NUMBA_ENABLED else _de_step_pic_np
    fn(state.p_U, state.p_L, state.q_U, state.q_L, float(eps), float(lam),
       int(m), float(eps_rho), transfer.fp_grid, transfer.fq_grid,
       schedule == "parallel")
    state.iteration += 1
    return state


def de_step_ppc(state: DEChainState, eps, lam_u, lam_l, m, rho, transfer,
                tau=None, schedule="serial", puncture_coupled_parity=True):
    """One sweep of the coupled-parity recursion, in place."""
    eps_rho = 1.0 - (1.0 - eps) * rho
    eps_coupled = eps_rho if puncture_coupled_parity else eps
    L = state.p_U.shape[0]
    if tau is None:
        tau = ppc_termination_fractions(L, m, lam_u + lam_l)
    fn = _de_step_ppc_kernel if NUMBA_ENABLED else _de_step_ppc_np
    fn(state.p_U, state.p_L, state.q_U, state.q_L, float(eps), float(lam_u),
       float(lam_l), int(m), float(eps_rho), float(eps_coupled), tau,
       transfer.fp_grid, transfer.fq_grid, schedule == "parallel")
    state.iteration += 1
    return state


@dataclass
class DEResult:
    converged: bool
    state: DEChainState
    iterations: int


def de_run(cfg: ChainConfig, eps, max_iter=5000, delta_conv=1e-8,
           stall_floor=1e-12) -> DEResult:
    """Iterate density evolution at one channel erasure rate.

    Success: max_t eps * p_U[t] * p_L[t] drops below delta_conv. Failure: the
    largest per-position improvement falls below stall_floor (stuck at a
    nontrivial fixed point) or max_iter is exhausted.
    """
    state = DEChainState.ones(cfg.L)
    transfer = cfg.transfer
    if transfer is None:
        transfer = memoized_transfer()
    tau = None
    if cfg.family == "ppc":
        tau = ppc_termination_fractions(cfg.L, cfg.m, cfg.lam)
        lam_u, lam_l = cfg.lam_split
    parallel = cfg.schedule == "parallel"
    prev = eps * state.p_U * state.p_L
    for it in range(1, max_iter + 1):
        if cfg.family == "pic":
            de_step_pic(state, eps, cfg.lam, cfg.m, cfg.rho, transfer,
                        schedule=cfg.schedule)
        else:
            de_step_ppc(state, eps, lam_u, lam_l, cfg.m, cfg.rho, transfer,
                        tau=tau, schedule=cfg.schedule,
                        puncture_coupled_parity=cfg.puncture_coupled_parity)
        app = eps * state.p_U * state.p_L
        if app.max() < delta_conv:
            return DEResult(True, state, it)
        if np.max(prev - app) < stall_floor:
            return DEResult(False, state, it)
        prev = app
    return DEResult(False, state, max_iter)


def threshold_bisect(cfg: ChainConfig, tol=1e-5, max_iter=20000,
                     delta_conv=1e-8, bracket=None) -> float:
    """BP threshold by bisection on the channel erasure rate over [0, 1].

    The iteration cap here is deliberately higher than the de_run default:
    bisection probes ε arbitrarily close to threshold, where the number of
    iterations to converge blows up, and a cap of 5000 already truncates
    the λ=1/2 thresholds by a few 1e-4.

    `bracket`, when given, is a warm-start guess (lo, hi); both ends are
    verified before use, so a wrong guess costs two evaluations but never
    a wrong answer.
    """
    if tol < 1e-5:
        raise ValueError("tol below 1e-5 exceeds the DE resolution")
    lo, hi = 0.0, 1.0
    if bracket is not None:
        b_lo = min(max(float(min(bracket)), 0.0), 1.0)
        b_hi = min(max(float(max(bracket)), 0.0), 1.0)
        if b_lo < b_hi:
            if de_run(cfg, b_lo, max_iter=max_iter,
                      delta_conv=delta_conv).converged:
                lo = b_lo
                if de_run(cfg, b_hi, max_iter=max_iter,
                          delta_conv=delta_conv).converged:
                    lo = b_hi
                else:
                    hi = b_hi
            else:
                hi = b_lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if de_run(cfg, mid, max_iter=max_iter, delta_conv=delta_conv).converged:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# MAP threshold (area theorem) and the BEC -> AWGN mapping


def uncoupled_fixed_point(transfer, eps, shorten=0.0, rho=1.0, tol=1e-13,
                          max_iter=100000):
    """(p, q) fixed point of the single-block recursion from the erased state.

    `eps` may be an array; all points iterate jointly until the slowest has
    converged. `shorten` is the known-zero fraction of input positions.
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=np.float64))
    eps_rho = 1.0 - (1.0 - eps) * rho
    p = np.ones_like(eps)
    q = np.ones_like(eps)
    for _ in range(max_iter):
        x = eps * (1.0 - shorten) * p
        p_new = _corner_bilinear_np(transfer.fp_grid, x, eps_rho)
        q_new = _corner_bilinear_np(transfer.fq_grid, x, eps_rho)
        delta = np.max(np.abs(p_new - p))
        p, q = p_new, q_new
        if delta < tol:
            break
    return p, q


def map_threshold(R_target, transfer=None, rho=None, grid_step=5e-4,
                  weights="rate") -> float:
    """Area-theorem threshold of the (shortened/punctured) single turbo block.

    For R below the mother rate 1/3 the code is shortened; above, the parity
    is randomly punctured with survival rho = (1/R - 1)/2. The threshold is
    the eps at which the tail integral of the per-transmitted-bit extrinsic
    erasure, taken from eps to 1, equals R. `weights` picks the integrand:
    "rate" uses R*p + (1-R)*q (transmitted-bit average), "plain" uses
    p + (1-R)*q.
    """
    if not 0 < R_target < 1:
        raise ValueError("R_target must lie in (0, 1)")
    if transfer is None:
        transfer = memoized_transfer()
    shorten = 0.0
    if rho is None:
        if R_target <= 1 / 3:
            rho = 1.0
            shorten = (1.0 - 3.0 * R_target) / (1.0 - R_target)
        else:
            rho = (1.0 / R_target - 1.0) / 2.0
    eps_axis = np.arange(0.0, 1.0 + grid_step / 2, grid_step)
    eps_axis[-1] = 1.0
    p, q = uncoupled_fixed_point(transfer, eps_axis, shorten=shorten, rho=rho)
    p_info = p * p  # both component extrinsics about an information bit
    if weights == "rate":
        h = R_target * p_info + (1.0 - R_target) * q
    elif weights == "plain":
        h = p_info + (1.0 - R_target) * q
    else:
        raise ValueError(f"unknown weights {weights!r}")
    # Tail integral T(eps) = int_eps^1 h, by cumulative trapezoid from 1 down.
    seg = 0.5 * (h[1:] + h[:-1]) * np.diff(eps_axis)
    tail = np.concatenate([[0.0], np.cumsum(seg[::-1])])[::-1]
    over = tail >= R_target
    if not over.any() or over[-1]:
        raise RuntimeError("rate target not bracketed by the tail integral")
    k = np.max(np.nonzero(over)[0])  # tail[k] >= R > tail[k+1]
    t0, t1 = tail[k], tail[k + 1]
    frac = (t0 - R_target) / (t0 - t1) if t1 != t0 else 0.0
    return float(eps_axis[k] + frac * (eps_axis[k + 1] - eps_axis[k]))


def biawgn_capacity(sigma, tol=1e-9):
    """Capacity in bits of the binary-input AWGN channel, noise N(0, sigma^2)."""
    from scipy.integrate import quad

    def integrand(y):
        # log2(1 + e^z) via logaddexp: stable for the far-left tail where
        # z = -2y/sigma^2 is large and a bare exp overflows.
        return (np.exp(-((y - 1.0) ** 2) / (2.0 * sigma_sq))
                / np.sqrt(2.0 * np.pi * sigma_sq)
                * np.logaddexp(0.0, -2.0 * y / sigma_sq) / np.log(2.0))

    sigma_sq = float(sigma) ** 2
    val, _ = quad(integrand, -np.inf, np.inf, epsabs=tol, limit=200)
    return 1.0 - val


def awgn_sigma_from_bec(eps_star, rate):
    """Map a BEC threshold to the AWGN channel via capacity matching.

    Finds sigma* with C_biawgn(sigma*) = 1 - eps_star and returns
    (sigma*, Eb/N0 in dB) for the given code rate, Eb/N0 = 1/(2 R sigma^2).
    """
    if not 0 < eps_star < 1:
        raise ValueError("eps_star must lie in (0, 1)")
    target = 1.0 - eps_star
    lo, hi = 1e-3, 1e3  # capacity 1 -> 0 as sigma grows
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if biawgn_capacity(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-12:
            break
    sigma = np.sqrt(lo * hi)
    ebn0_db = 10.0 * np.log10(1.0 / (2.0 * rate * sigma**2))
    return float(sigma), float(ebn0_db)
