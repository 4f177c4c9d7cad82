"""Monte-Carlo harness: reproducibility, early stopping, CSV output."""

import numpy as np
import pytest
from fractions import Fraction

from coupled_turbo.conv_trellis import ERASED
from coupled_turbo.coupling import CouplingConfig, chain_encode
from coupled_turbo.sim_harness import (
    CSV_FIELDS,
    BERRecord,
    ExperimentSpec,
    bec_transmit,
    run_ber,
    write_gnuplot,
)


def small_cfg(**kw):
    args = dict(family="pic", lam=Fraction(1, 2), m=1, L=6, K=80)
    args.update(kw)
    return CouplingConfig(**args)


def test_spec_validation():
    cfg = small_cfg()
    with pytest.raises(ValueError):
        ExperimentSpec(cfg, (0.5,), decoder="genie")
    with pytest.raises(ValueError):
        ExperimentSpec(cfg, (0.5,), decoder="window")   # W missing
    with pytest.raises(ValueError):
        ExperimentSpec(cfg, (0.5,), min_error_events=10)
    with pytest.raises(ValueError):
        ExperimentSpec(cfg, (1.5,))


def test_eps_zero_and_one_are_exact():
    spec = ExperimentSpec(small_cfg(), (0.0, 1.0), max_chains=2, seed=7)
    recs = run_ber(spec)
    assert recs[0].errors == 0 and recs[0].ber == 0.0
    assert recs[1].errors == recs[1].bits and recs[1].ber == 1.0


def test_reproducible_and_seed_sensitive():
    spec = ExperimentSpec(small_cfg(), (0.55, 0.9), max_chains=4, seed=3)
    a = [r.statistical_fields() for r in run_ber(spec)]
    b = [r.statistical_fields() for r in run_ber(spec)]
    assert a == b
    other = ExperimentSpec(small_cfg(), (0.55, 0.9), max_chains=4, seed=4)
    c = [r.statistical_fields() for r in run_ber(other)]
    assert a != c


def test_worker_count_does_not_change_records():
    one = ExperimentSpec(small_cfg(), (0.85,), max_chains=6, seed=11,
                         workers=1)
    two = ExperimentSpec(small_cfg(), (0.85,), max_chains=6, seed=11,
                         workers=2)
    ra = [r.statistical_fields() for r in run_ber(one)]
    rb = [r.statistical_fields() for r in run_ber(two)]
    assert ra == rb


def test_early_stop_on_error_events():
    # far above threshold every chain yields many erased bits, so the stop
    # rule should trigger on the first chain rather than run the cap out
    spec = ExperimentSpec(small_cfg(), (0.95,), max_chains=1000, seed=5)
    rec, = run_ber(spec)
    assert rec.errors >= 50
    assert rec.chains < 1000
    assert rec.ber == rec.errors / rec.bits


def test_window_decoder_dispatch():
    spec = ExperimentSpec(small_cfg(), (0.5,), decoder="window", W=3,
                          max_chains=2, seed=9)
    rec, = run_ber(spec)
    assert rec.bits > 0


def test_uncoupled_chain_runs():
    cfg = small_cfg(lam=Fraction(0), L=2)
    rec, = run_ber(ExperimentSpec(cfg, (0.4,), max_chains=2, seed=13))
    assert rec.bits == rec.chains * cfg.L * cfg.K


def test_punctured_parity_erasure_rate_composes():
    # eps=0.5 on top of rho=0.5 puncturing leaves a parity bit visible
    # only with probability (1-eps)*rho: effective erasure 0.75
    cfg = small_cfg(K=2000, L=4, lam=Fraction(1, 4), rho=Fraction(1, 2))
    info = np.random.default_rng(1).integers(0, 2, cfg.total_info())
    cw = chain_encode(cfg, info.astype(np.int8), seed=2)
    rx = bec_transmit(cw, 0.5, rng=3)
    par = np.concatenate([np.concatenate([u, l]) for u, l in
                          zip(rx.par_u_obs, rx.par_l_obs)])
    rate = (par == ERASED).mean()
    sigma = np.sqrt(0.75 * 0.25 / par.size)
    assert abs(rate - 0.75) < 3 * sigma + 1e-12


def test_csv_and_gnuplot_outputs(tmp_path):
    csv_path = tmp_path / "ber.csv"
    spec = ExperimentSpec(small_cfg(), (0.3, 0.95), max_chains=3, seed=17,
                          output=str(csv_path))
    recs = run_ber(spec)
    lines = csv_path.read_text().strip().split("\n")
    assert lines[0] == ",".join(CSV_FIELDS)
    assert len(lines) == 1 + len(recs)
    row = lines[1].split(",")
    assert row[2] == "pic" and row[3] == "1/2"
    assert int(row[9]) == recs[0].errors
    assert abs(float(row[10]) - recs[0].ber) < 1e-9
    gp = tmp_path / "ber.gp"
    write_gnuplot(csv_path, gp)
    text = gp.read_text()
    assert str(csv_path) in text and "logscale y" in text


def test_ber_record_math():
    rec = BERRecord(eps=0.5, bits=1000, errors=25, chains=2, seconds=0.1)
    assert rec.ber == 0.025
    assert BERRecord(0.5, 0, 0, 0, 0.0).ber == 0.0
