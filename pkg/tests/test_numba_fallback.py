"""The pure-numpy fallback must produce the same numbers as the jitted path."""

import json
import os
import subprocess
import sys

import numpy as np

from coupled_turbo._accel import NUMBA_ENABLED
from coupled_turbo.de_engine import ChainConfig, de_run

_PROBE = r"""
import json, sys
import numpy as np
from coupled_turbo._accel import NUMBA_ENABLED
from coupled_turbo.de_engine import ChainConfig, de_run
from coupled_turbo.coupling import CouplingConfig, chain_encode, bec_transmit, ff_fb_decode

out = {"numba": NUMBA_ENABLED}
cfg = ChainConfig("pic", 0.5, 1, 8)
res = de_run(cfg, 0.70)
out["converged"] = bool(res.converged)
out["iterations"] = int(res.iterations)
out["p_U"] = [float(x) for x in res.state.p_U]

ccfg = CouplingConfig("ppc", 0.25, 1, 4, K=64)
rng = np.random.default_rng(9)
info = rng.integers(0, 2, ccfg.total_info()).astype(np.int8)
rx = bec_transmit(chain_encode(ccfg, info, seed=2), 0.4, rng=7)
dec = ff_fb_decode(rx)
out["erased"] = int(dec.block_erasures.sum())
out["info_hash"] = int(np.dot(np.where(dec.info == 2, 0, dec.info),
                              np.arange(1, dec.info.size + 1)) % (2**31))
print(json.dumps(out))
"""


def _run_probe(no_numba):
    env = dict(os.environ)
    if no_numba:
        env["COUPLED_TURBO_NO_NUMBA"] = "1"
    else:
        env.pop("COUPLED_TURBO_NO_NUMBA", None)
    proc = subprocess.run([sys.executable, "-c", _PROBE], env=env,
                          capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr
    return json.loads(proc.stdout)


def test_fallback_matches_jitted_path():
    fast = _run_probe(no_numba=False)
    slow = _run_probe(no_numba=True)
    assert fast["numba"] is True
    assert slow["numba"] is False
    assert slow["converged"] == fast["converged"]
    assert slow["iterations"] == fast["iterations"]
    np.testing.assert_allclose(slow["p_U"], fast["p_U"], rtol=0, atol=1e-14)
    assert slow["erased"] == fast["erased"]
    assert slow["info_hash"] == fast["info_hash"]


def test_this_process_uses_numba_by_default():
    # Guards against the fallback silently becoming the only tested path.
    if os.environ.get("COUPLED_TURBO_NO_NUMBA"):
        import pytest
        pytest.skip("fallback forced by the environment")
    assert NUMBA_ENABLED
    res = de_run(ChainConfig("pic", 0.5, 1, 8), 0.70)
    assert res.converged
