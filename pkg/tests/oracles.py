"""Brute-force reference implementations the fast code is tested against."""

import numpy as np

from coupled_turbo.conv_trellis import ERASED, Trellis


def enumerate_codewords(trellis: Trellis, n: int, terminate=True):
    """All 2^n (sys, par) sequences of the component code, one row per word."""
    count = 1 << n
    info = ((np.arange(count)[:, None] >> np.arange(n)) & 1).astype(np.int8)
    state = np.zeros(count, dtype=np.int64)
    sys_cols = [info[:, t] for t in range(n)]
    par_cols = []
    for t in range(n):
        u = info[:, t]
        par_cols.append(trellis.parity_out[state, u])
        state = trellis.next_state[state, u]
    if terminate:
        for _ in range(trellis.memory):
            u = trellis.tail_input[state]
            sys_cols.append(u.copy())
            par_cols.append(trellis.parity_out[state, u])
            state = trellis.next_state[state, u]
        assert not state.any()
    sys = np.stack(sys_cols, axis=1).astype(np.int8)
    par = np.stack(par_cols, axis=1).astype(np.int8)
    return sys, par


def oracle_extrinsic(trellis: Trellis, sys_prior, par_prior, terminate=True):
    """Extrinsic outputs by explicit enumeration of every codeword.

    Same contract as bcjr_erasure_decode: the systematic output at t ignores
    sys_prior[t] but keeps par_prior[t] and all other positions, and
    symmetrically for the parity output.
    """
    sys_prior = np.asarray(sys_prior)
    par_prior = np.asarray(par_prior)
    T = sys_prior.shape[0]
    n = T - trellis.memory if terminate else T
    sys, par = enumerate_codewords(trellis, n, terminate)
    sys_ok = (sys_prior[None, :] == ERASED) | (sys == sys_prior[None, :])
    par_ok = (par_prior[None, :] == ERASED) | (par == par_prior[None, :])
    sys_mis = (~sys_ok).sum(axis=1)
    par_mis = (~par_ok).sum(axis=1)
    sys_ext = np.empty(T, dtype=np.int8)
    par_ext = np.empty(T, dtype=np.int8)
    for t in range(T):
        keep = (par_mis == 0) & (sys_mis == (~sys_ok[:, t]).astype(int))
        vals = np.unique(sys[keep, t])
        assert vals.size >= 1, "no codeword survives: invalid trace"
        sys_ext[t] = vals[0] if vals.size == 1 else ERASED
        keep = (sys_mis == 0) & (par_mis == (~par_ok[:, t]).astype(int))
        vals = np.unique(par[keep, t])
        assert vals.size >= 1, "no codeword survives: invalid trace"
        par_ext[t] = vals[0] if vals.size == 1 else ERASED
    return sys_ext, par_ext


def oracle_turbo(cfg, channel, external=None, tails_channel=None):
    """Exhaustive consistency decoding of a turbo block (K <= 12 or so).

    Enumerates every information word, encodes it with cfg, and keeps the
    words whose codewords match all Known symbols in channel/external (and
    tail observations if given). Returns ternary consensus vectors
    (info, parity_upper, parity_lower): Known where all survivors agree.
    """
    from coupled_turbo.conv_trellis import ERASED, combine
    from coupled_turbo.turbo_codec import TurboExtrinsics, turbo_encode

    K = cfg.K
    if external is None:
        external = TurboExtrinsics.erased(K)
    info_p = combine(channel.info, external.info)
    par_u_p = combine(channel.parity_upper, external.parity_upper)
    par_l_p = combine(channel.parity_lower, external.parity_lower)

    words = ((np.arange(1 << K)[:, None] >> np.arange(K)[None, :]) & 1
             ).astype(np.int8)
    survivors = []
    for w in words:
        cw = turbo_encode(cfg, w)
        streams = [(w, info_p), (cw.parity_upper, par_u_p),
                   (cw.parity_lower, par_l_p)]
        if tails_channel is not None:
            streams += list(zip(cw.tails, tails_channel))
        ok = all(
            not np.any((prior != ERASED) & (bits != prior))
            for bits, prior in streams
        )
        if ok:
            survivors.append((w, cw.parity_upper, cw.parity_lower))
    assert survivors, "priors inconsistent with every information word"
    outs = []
    for k in range(3):
        mat = np.stack([s[k] for s in survivors])
        agree = (mat == mat[0]).all(axis=0)
        col = np.where(agree, mat[0], ERASED).astype(np.int8)
        outs.append(col)
    return tuple(outs)
