"""Turbo codec: encoding identities, decoder vs exhaustive oracle, stalls."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coupled_turbo.conv_trellis import (
    ERASED,
    InconsistentTraceError,
    TernaryConflictError,
)
from coupled_turbo.turbo_codec import (
    TurboConfig,
    TurboExtrinsics,
    erase,
    random_interleaver,
    turbo_decode,
    turbo_encode,
)
from oracles import oracle_turbo


def make_cfg(K, seed=0):
    return TurboConfig(K=K, interleaver=random_interleaver(K, seed))


def channel_of(cw, eps, rng):
    return TurboExtrinsics(erase(cw.systematic, eps, rng),
                           erase(cw.parity_upper, eps, rng),
                           erase(cw.parity_lower, eps, rng))


def test_all_zero_input_gives_all_zero_codeword():
    cfg = make_cfg(16)
    cw = turbo_encode(cfg, np.zeros(16, dtype=np.int8))
    assert not cw.systematic.any()
    assert not cw.parity_upper.any()
    assert not cw.parity_lower.any()
    assert not any(t.any() for t in cw.tails)


def test_identity_interleaver_equal_parities():
    cfg = TurboConfig(K=4, interleaver=np.arange(4))
    cw = turbo_encode(cfg, np.array([1, 0, 1, 1], dtype=np.int8))
    np.testing.assert_array_equal(cw.parity_upper, cw.parity_lower)


def test_unerased_roundtrip():
    rng = np.random.default_rng(1)
    cfg = make_cfg(8, seed=5)
    u = rng.integers(0, 2, 8).astype(np.int8)
    cw = turbo_encode(cfg, u)
    out = turbo_decode(cfg, TurboExtrinsics(cw.systematic.copy(),
                                            cw.parity_upper.copy(),
                                            cw.parity_lower.copy()))
    np.testing.assert_array_equal(out.info, u)
    np.testing.assert_array_equal(out.parity_upper, cw.parity_upper)
    np.testing.assert_array_equal(out.parity_lower, cw.parity_lower)


def test_all_erased_stays_erased():
    cfg = make_cfg(12, seed=2)
    out = turbo_decode(cfg, TurboExtrinsics.erased(12))
    assert np.all(out.info == ERASED)
    assert np.all(out.parity_upper == ERASED)
    assert np.all(out.parity_lower == ERASED)


def test_encode_validates_length():
    cfg = make_cfg(8)
    with pytest.raises(ValueError):
        turbo_encode(cfg, np.zeros(9, dtype=np.int8))


def test_interleaver_must_be_permutation():
    with pytest.raises(ValueError):
        TurboConfig(K=4, interleaver=np.array([0, 1, 1, 3]))


def test_decoder_never_beats_consistency_oracle():
    rng = np.random.default_rng(42)
    for trial in range(30):
        K = 8
        cfg = make_cfg(K, seed=trial)
        u = rng.integers(0, 2, K).astype(np.int8)
        cw = turbo_encode(cfg, u)
        chan = channel_of(cw, rng.choice([0.3, 0.5, 0.7]), rng)
        out = turbo_decode(cfg, chan)
        oracle = oracle_turbo(cfg, chan)
        for got, want in zip((out.info, out.parity_upper, out.parity_lower),
                             oracle):
            known = got != ERASED
            # sound: whatever the decoder resolves, the oracle agrees
            assert np.all(want[known] == got[known])


def test_known_set_monotone_in_iterations():
    rng = np.random.default_rng(9)
    cfg = make_cfg(64, seed=3)
    u = rng.integers(0, 2, 64).astype(np.int8)
    cw = turbo_encode(cfg, u)
    chan = channel_of(cw, 0.55, rng)
    counts = [turbo_decode(cfg, chan, iterations=k).known_count()
              for k in range(1, 7)]
    assert all(a <= b for a, b in zip(counts, counts[1:]))


def test_stall_is_a_fixed_point():
    rng = np.random.default_rng(13)
    cfg = make_cfg(64, seed=8)
    u = rng.integers(0, 2, 64).astype(np.int8)
    cw = turbo_encode(cfg, u)
    chan = channel_of(cw, 0.5, rng)
    at_stall = turbo_decode(cfg, chan)            # iterate to stall
    extra = turbo_decode(cfg, chan, iterations=80)
    np.testing.assert_array_equal(at_stall.info, extra.info)
    np.testing.assert_array_equal(at_stall.parity_upper, extra.parity_upper)
    np.testing.assert_array_equal(at_stall.parity_lower, extra.parity_lower)


def test_conflicting_priors_raise():
    cfg = make_cfg(8)
    chan = TurboExtrinsics.erased(8)
    ext = TurboExtrinsics.erased(8)
    chan.info[0] = 0
    ext.info[0] = 1
    with pytest.raises(TernaryConflictError):
        turbo_decode(cfg, chan, ext)


def test_corrupted_parity_raises():
    cfg = make_cfg(8, seed=4)
    u = np.zeros(8, dtype=np.int8)
    cw = turbo_encode(cfg, u)
    chan = TurboExtrinsics(cw.systematic.copy(), cw.parity_upper.copy(),
                           cw.parity_lower.copy())
    chan.parity_upper[3] = 1  # impossible given the all-zero systematic
    with pytest.raises(InconsistentTraceError):
        turbo_decode(cfg, chan)


def test_tail_observations_help():
    # an erased block with only tail parity observed can still resolve the
    # final core positions through the termination constraint
    rng = np.random.default_rng(21)
    cfg = make_cfg(16, seed=6)
    u = rng.integers(0, 2, 16).astype(np.int8)
    cw = turbo_encode(cfg, u)
    chan = TurboExtrinsics.erased(16)
    chan.info[:12] = cw.systematic[:12]
    base = turbo_decode(cfg, chan)
    with_tails = turbo_decode(cfg, chan, tails_channel=cw.tails)
    assert with_tails.known_count() >= base.known_count()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 0.9))
def test_decoder_soundness(seed, eps):
    rng = np.random.default_rng(seed)
    K = 24
    cfg = TurboConfig(K=K, interleaver=random_interleaver(K, rng))
    u = rng.integers(0, 2, K).astype(np.int8)
    cw = turbo_encode(cfg, u)
    out = turbo_decode(cfg, channel_of(cw, eps, rng),
                       tails_channel=tuple(erase(t, eps, rng)
                                           for t in cw.tails))
    for got, truth in zip((out.info, out.parity_upper, out.parity_lower),
                          (u, cw.parity_upper, cw.parity_lower)):
        known = got != ERASED
        assert np.all(got[known] == truth[known])
