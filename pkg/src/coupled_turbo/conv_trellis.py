"""Recursive systematic convolutional component code and its exact erasure decoder.

The component code is a rate-1/2 RSC code given by (feedback, feedforward)
polynomials, default (7, 5) octal with 2 memory elements (4 states). On the
erasure channel every message is a ternary symbol (known-zero / known-one /
erased), and symbolwise MAP decoding is exact set propagation: the forward and
backward passes track the set of trellis states consistent with everything
observed so far, and an output symbol is known iff all surviving branches
agree on it. State sets are bitmasks, so one decoding step is one table
lookup.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._accel import njit

# Ternary symbol values. ERASED must stay 2: observation indices are
# sys * 3 + par with sys, par in {0, 1, 2}.
KNOWN0 = 0
KNOWN1 = 1
ERASED = 2


class TernaryConflictError(RuntimeError):
    """Two Known symbols about the same bit disagree (impossible on a BEC)."""


def combine(a, b):
    """Known-wins combination of ternary arrays (LLR addition on {0, +-inf}).

    Raises TernaryConflictError if both sides are Known and disagree.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    conflict = (a != ERASED) & (b != ERASED) & (a != b)
    if conflict.any():
        raise TernaryConflictError(
            f"conflicting Known symbols at {int(np.argmax(conflict))}"
        )
    return np.where(a == ERASED, b, a).astype(np.int8)


class InconsistentTraceError(RuntimeError):
    """The decoder input is consistent with no trellis path (harness bug)."""


@dataclass(frozen=True)
class GeneratorSpec:
    """RSC generator pair, polynomials as plain integers of octal digits."""

    feedback: int = 0o7
    feedforward: int = 0o5
    memory: int = 2

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if not self.feedback & 1:
            raise ValueError("feedback polynomial needs its constant term (recursive form)")
        limit = 1 << (self.memory + 1)
        if not (0 < self.feedback < limit and 0 < self.feedforward < limit):
            raise ValueError(f"polynomials must fit in {self.memory + 1} bits")


def _parity(x):
    return bin(x).count("1") & 1


@dataclass(frozen=True, eq=False)
class Trellis:
    spec: GeneratorSpec
    num_states: int
    next_state: np.ndarray  # (S, 2) int64
    parity_out: np.ndarray  # (S, 2) int8
    tail_input: np.ndarray  # (S,) int8, input driving the feedback to 0
    # Bitmask tables for set-propagation decoding; obs = sys*3 + par.
    fwd_step: np.ndarray = field(repr=False, default=None)  # (2^S, 9) int64
    bwd_step: np.ndarray = field(repr=False, default=None)  # (2^S, 9) int64
    reach_u: np.ndarray = field(repr=False, default=None)  # (2^S, 3, 2) int64
    reach_v: np.ndarray = field(repr=False, default=None)  # (2^S, 3, 2) int64

    @property
    def memory(self):
        return self.spec.memory

    def branches(self):
        """Iterate (state, input, parity, next_state) over all branches."""
        for s in range(self.num_states):
            for u in (0, 1):
                yield s, u, int(self.parity_out[s, u]), int(self.next_state[s, u])


@lru_cache(maxsize=None)
def build_trellis(spec: GeneratorSpec = GeneratorSpec()) -> Trellis:
    """State-transition and set-propagation tables for an RSC code.

    Cached: repeated calls with the same spec return the same Trellis whose
    tables must be treated as read-only.

    State s packs the register (x_1 .. x_nu), newest bit in the top position:
    s = sum x_i 2^(nu-i). One step: w = u xor <feedback taps, x>,
    parity = ff_0 w xor <feedforward taps, x>, next = (w, x_1 .. x_{nu-1}).
    """
    nu = spec.memory
    n_states = 1 << nu
    if nu > 4:
        raise ValueError("bitmask set tables support at most 16 states (memory <= 4)")

    next_state = np.zeros((n_states, 2), dtype=np.int64)
    parity_out = np.zeros((n_states, 2), dtype=np.int8)
    tail_input = np.zeros(n_states, dtype=np.int8)

    # Tap masks over the state bits: bit i of the poly (i >= 1) taps x_i,
    # which sits at position nu - i of the packed state.
    fb_mask = 0
    ff_mask = 0
    for i in range(1, nu + 1):
        if (spec.feedback >> i) & 1:
            fb_mask |= 1 << (nu - i)
        if (spec.feedforward >> i) & 1:
            ff_mask |= 1 << (nu - i)
    ff0 = spec.feedforward & 1

    for s in range(n_states):
        fb = _parity(s & fb_mask)
        tail_input[s] = fb
        for u in (0, 1):
            w = u ^ fb
            parity_out[s, u] = (ff0 & w) ^ _parity(s & ff_mask)
            next_state[s, u] = (s >> 1) | (w << (nu - 1))

    # Set-propagation tables over state bitmasks.
    n_masks = 1 << n_states
    fwd_step = np.zeros((n_masks, 9), dtype=np.int64)
    bwd_step = np.zeros((n_masks, 9), dtype=np.int64)
    reach_u = np.zeros((n_masks, 3, 2), dtype=np.int64)
    reach_v = np.zeros((n_masks, 3, 2), dtype=np.int64)

    branches = [
        (s, u, int(parity_out[s, u]), int(next_state[s, u]))
        for s in range(n_states)
        for u in (0, 1)
    ]
    for mask in range(1, n_masks):
        for sys_o in range(3):
            for par_o in range(3):
                obs = sys_o * 3 + par_o
                f = 0
                b = 0
                for s, u, v, ns in branches:
                    if sys_o != ERASED and u != sys_o:
                        continue
                    if par_o != ERASED and v != par_o:
                        continue
                    if (mask >> s) & 1:
                        f |= 1 << ns
                    if (mask >> ns) & 1:
                        b |= 1 << s
                fwd_step[mask, obs] = f
                bwd_step[mask, obs] = b
        for s, u, v, ns in branches:
            if not (mask >> s) & 1:
                continue
            for par_o in range(3):
                if par_o == ERASED or v == par_o:
                    reach_u[mask, par_o, u] |= 1 << ns
            for sys_o in range(3):
                if sys_o == ERASED or u == sys_o:
                    reach_v[mask, sys_o, v] |= 1 << ns

    return Trellis(
        spec=spec,
        num_states=n_states,
        next_state=next_state,
        parity_out=parity_out,
        tail_input=tail_input,
        fwd_step=fwd_step,
        bwd_step=bwd_step,
        reach_u=reach_u,
        reach_v=reach_v,
    )


@njit(cache=True)
def _encode_kernel(bits, next_state, parity_out, tail_input, nu, terminate):
    n = bits.shape[0]
    par = np.empty(n, dtype=np.int8)
    tail_sys = np.zeros(nu, dtype=np.int8)
    tail_par = np.zeros(nu, dtype=np.int8)
    s = 0
    for t in range(n):
        u = bits[t]
        par[t] = parity_out[s, u]
        s = next_state[s, u]
    if terminate:
        for i in range(nu):
            u = tail_input[s]
            tail_sys[i] = u
            tail_par[i] = parity_out[s, u]
            s = next_state[s, u]
    return par, tail_sys, tail_par, s


def rsc_encode(trellis: Trellis, info, terminate=True):
    """Encode info bits; returns (parity, tail_sys, tail_par, final_state).

    With terminate=True the tail drives the register back to state 0 in
    `memory` steps; tail systematic and parity bits come back separately.
    """
    bits = np.ascontiguousarray(info, dtype=np.int8)
    par, tail_sys, tail_par, final = _encode_kernel(
        bits, trellis.next_state, trellis.parity_out, trellis.tail_input,
        trellis.memory, terminate,
    )
    if not terminate:
        tail_sys = tail_sys[:0]
        tail_par = tail_par[:0]
    return par, tail_sys, tail_par, int(final)


@njit(cache=True)
def _bcjr_kernel(sys_p, par_p, fwd_step, bwd_step, reach_u, reach_v,
                 start_mask, end_mask, sys_ext, par_ext):
    # Returns 0 on success, -(t+1) when position t kills every path.
    T = sys_p.shape[0]
    alpha = np.empty(T + 1, dtype=np.int64)
    beta = np.empty(T + 1, dtype=np.int64)
    alpha[0] = start_mask
    for t in range(T):
        a = fwd_step[alpha[t], sys_p[t] * 3 + par_p[t]]
        if a == 0:
            return -(t + 1)
        alpha[t + 1] = a
    beta[T] = end_mask
    if alpha[T] & end_mask == 0:
        return -T
    for t in range(T - 1, -1, -1):
        b = bwd_step[beta[t + 1], sys_p[t] * 3 + par_p[t]]
        if b == 0:
            return -(t + 1)
        beta[t] = b
    for t in range(T):
        a = alpha[t]
        bn = beta[t + 1]
        # Input estimate: parity observation kept, systematic excluded.
        e0 = reach_u[a, par_p[t], 0] & bn
        e1 = reach_u[a, par_p[t], 1] & bn
        if e0 != 0:
            sys_ext[t] = 2 if e1 != 0 else 0
        elif e1 != 0:
            sys_ext[t] = 1
        else:
            return -(t + 1)
        # Parity estimate: systematic observation kept, parity excluded.
        f0 = reach_v[a, sys_p[t], 0] & bn
        f1 = reach_v[a, sys_p[t], 1] & bn
        if f0 != 0:
            par_ext[t] = 2 if f1 != 0 else 0
        elif f1 != 0:
            par_ext[t] = 1
        else:
            return -(t + 1)
    return 0


def bcjr_erasure_decode(trellis: Trellis, sys_prior, par_prior,
                        start_known=True, end_known=True):
    """Exact erasure-channel BCJR; returns (sys_extrinsic, par_extrinsic).

    sys_extrinsic[t] ignores sys_prior[t] (but uses par_prior[t]) and vice
    versa, so Known outputs carry information the caller did not feed in at
    that position. Raises InconsistentTraceError if the priors contradict
    every trellis path.
    """
    sys_p = np.ascontiguousarray(sys_prior, dtype=np.int8)
    par_p = np.ascontiguousarray(par_prior, dtype=np.int8)
    if sys_p.shape != par_p.shape:
        raise ValueError("systematic and parity priors must have equal length")
    T = sys_p.shape[0]
    all_states = (1 << trellis.num_states) - 1
    sys_ext = np.empty(T, dtype=np.int8)
    par_ext = np.empty(T, dtype=np.int8)
    status = _bcjr_kernel(
        sys_p, par_p,
        trellis.fwd_step, trellis.bwd_step, trellis.reach_u, trellis.reach_v,
        1 if start_known else all_states,
        1 if end_known else all_states,
        sys_ext, par_ext,
    )
    if status != 0:
        raise InconsistentTraceError(f"no trellis path survives position {-status - 1}")
    return sys_ext, par_ext
