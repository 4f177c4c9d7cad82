"""Rate-1/3 parallel turbo codec on the erasure channel.

Two identical recursive systematic components share the information word,
the lower one through an interleaver. Decoding alternates exact erasure
BCJR passes and, on a channel without soft values, terminates by stall:
the set of resolved positions grows monotonically, so when one full
iteration adds nothing the decoder is at its fixed point.

Extrinsic bookkeeping matters more here than in a classic turbo chain: the
chain-level decoders feed per-position external priors in and read
per-position extrinsics back, so every returned vector must exclude the
channel and external contribution at its own position.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conv_trellis import (
    ERASED,
    GeneratorSpec,
    Trellis,
    bcjr_erasure_decode,
    build_trellis,
    combine,
    rsc_encode,
)

__all__ = [
    "TurboConfig",
    "TurboCodeword",
    "TurboExtrinsics",
    "random_interleaver",
    "turbo_encode",
    "turbo_decode",
    "erase",
]


def random_interleaver(K, rng=None):
    """Uniformly random permutation of 0..K-1 (fresh per transmission)."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return rng.permutation(K).astype(np.int64)


@dataclass(frozen=True, eq=False)
class TurboConfig:
    K: int
    interleaver: np.ndarray
    inner_iterations: Optional[int] = None  # None: iterate to stall
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)

    def __post_init__(self):
        pi = np.asarray(self.interleaver, dtype=np.int64)
        if pi.shape != (self.K,) or not np.array_equal(np.sort(pi),
                                                       np.arange(self.K)):
            raise ValueError("interleaver must be a permutation of 0..K-1")
        object.__setattr__(self, "interleaver", pi)

    @property
    def trellis(self) -> Trellis:
        return build_trellis(self.generator)

    @property
    def deinterleaver(self):
        inv = np.empty(self.K, dtype=np.int64)
        inv[self.interleaver] = np.arange(self.K)
        return inv


@dataclass(frozen=True, eq=False)
class TurboCodeword:
    """Encoded block: K systematic bits, two K-bit parity streams, tails.

    tails = (sys_upper, par_upper, sys_lower, par_lower), each `memory` long;
    both components are driven back to state zero.
    """

    systematic: np.ndarray
    parity_upper: np.ndarray
    parity_lower: np.ndarray
    tails: tuple


@dataclass(eq=False)
class TurboExtrinsics:
    """Ternary per-position vectors, all length K."""

    info: np.ndarray
    parity_upper: np.ndarray
    parity_lower: np.ndarray

    @classmethod
    def erased(cls, K):
        return cls(np.full(K, ERASED, dtype=np.int8),
                   np.full(K, ERASED, dtype=np.int8),
                   np.full(K, ERASED, dtype=np.int8))

    def known_count(self):
        return int((self.info != ERASED).sum()
                   + (self.parity_upper != ERASED).sum()
                   + (self.parity_lower != ERASED).sum())


def turbo_encode(cfg: TurboConfig, u) -> TurboCodeword:
    u = np.ascontiguousarray(u, dtype=np.int8)
    if u.shape != (cfg.K,):
        raise ValueError(f"information word must have length {cfg.K}")
    trellis = cfg.trellis
    par_u, tail_sys_u, tail_par_u, _ = rsc_encode(trellis, u)
    par_l, tail_sys_l, tail_par_l, _ = rsc_encode(trellis,
                                                  u[cfg.interleaver])
    return TurboCodeword(u, par_u, par_l,
                         (tail_sys_u, tail_par_u, tail_sys_l, tail_par_l))


def erase(bits, eps, rng):
    """Ternary channel output: each bit erased independently w.p. eps."""
    bits = np.asarray(bits, dtype=np.int8)
    out = bits.copy()
    out[rng.random(bits.shape) < eps] = ERASED
    return out


def _component_pass(trellis, sys_prior, par_prior, tail_sys, tail_par):
    """One terminated BCJR over K core + memory tail steps.

    Returns core-position extrinsics; the tail steps carry their own priors
    and the end-state constraint, which is what lets boundary positions
    resolve even on an otherwise erased block.
    """
    sys_full = np.concatenate([sys_prior, tail_sys])
    par_full = np.concatenate([par_prior, tail_par])
    sys_ext, par_ext = bcjr_erasure_decode(trellis, sys_full, par_full)
    K = sys_prior.shape[0]
    return sys_ext[:K], par_ext[:K]


def turbo_decode(cfg: TurboConfig, channel: TurboExtrinsics,
                 external: TurboExtrinsics = None, iterations=None,
                 tails_channel=None) -> TurboExtrinsics:
    """Iterative two-component erasure decoding; returns extrinsics.

    channel / external: ternary priors per position (Known entries must be
    consistent; conflicts raise TernaryConflictError). The returned vectors
    exclude, per position, that position's own channel and external symbol,
    so callers can combine them freely without double counting.

    tails_channel: optional ternary (sys_u, par_u, sys_l, par_l) tail
    observations; by default tails are unobserved but the termination
    constraint still applies.
    """
    K = cfg.K
    trellis = cfg.trellis
    nu = trellis.memory
    if external is None:
        external = TurboExtrinsics.erased(K)
    if iterations is None:
        iterations = cfg.inner_iterations
    if tails_channel is None:
        blank = np.full(nu, ERASED, dtype=np.int8)
        tails_channel = (blank, blank, blank, blank)
    tail_sys_u, tail_par_u, tail_sys_l, tail_par_l = (
        np.ascontiguousarray(t, dtype=np.int8) for t in tails_channel)

    pi = cfg.interleaver
    inv = np.empty(K, dtype=np.int64)
    inv[pi] = np.arange(K)

    info_prior = combine(channel.info, external.info)
    par_u_prior = combine(channel.parity_upper, external.parity_upper)
    par_l_prior = combine(channel.parity_lower, external.parity_lower)

    ext_u = np.full(K, ERASED, dtype=np.int8)   # upper's info extrinsic
    ext_l = np.full(K, ERASED, dtype=np.int8)   # lower's, natural order
    ext_par_u = np.full(K, ERASED, dtype=np.int8)
    ext_par_l = np.full(K, ERASED, dtype=np.int8)

    it = 0
    while True:
        it += 1
        before = ((ext_u != ERASED).sum() + (ext_l != ERASED).sum()
                  + (ext_par_u != ERASED).sum() + (ext_par_l != ERASED).sum())
        sys_in = combine(info_prior, ext_l)
        ext_u, ext_par_u = _component_pass(trellis, sys_in, par_u_prior,
                                           tail_sys_u, tail_par_u)
        sys_in = combine(info_prior, ext_u)[pi]
        ext_l_perm, ext_par_l = _component_pass(trellis, sys_in, par_l_prior,
                                                tail_sys_l, tail_par_l)
        ext_l = ext_l_perm[inv]
        after = ((ext_u != ERASED).sum() + (ext_l != ERASED).sum()
                 + (ext_par_u != ERASED).sum() + (ext_par_l != ERASED).sum())
        if after == before or (iterations is not None and it >= iterations):
            break

    return TurboExtrinsics(combine(ext_u, ext_l), ext_par_u, ext_par_l)
