"""Time the hot kernels with numba against the pure-numpy fallback.

Run `python3 benchmarks/bench_kernels.py` for the current mode, or
`--both` to re-exec with COUPLED_TURBO_NO_NUMBA=1 and print a comparison.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def bench():
    from coupled_turbo._accel import NUMBA_ENABLED
    from coupled_turbo.conv_trellis import GeneratorSpec
    from coupled_turbo.coupling import (CouplingConfig, bec_transmit,
                                        chain_encode, ff_fb_decode)
    from coupled_turbo.de_engine import ChainConfig, de_run, memoized_transfer

    results = {"numba": NUMBA_ENABLED}
    memoized_transfer()  # build/load the transfer grid outside the timers

    # density evolution sweep, coupled chain near threshold
    cfg = ChainConfig("pic", 0.5, 1, 50)
    de_run(cfg, 0.75, max_iter=50)  # warm the jit cache
    t0 = time.monotonic()
    res = de_run(cfg, 0.785, max_iter=2000)
    results["de_run_s"] = time.monotonic() - t0
    results["de_iterations"] = res.iterations

    # turbo chain decode, moderate block length
    ccfg = CouplingConfig("pic", 0.25, 1, 8, K=4096, scatter_coupled=True)
    rng = np.random.default_rng(0)
    info = rng.integers(0, 2, ccfg.total_info()).astype(np.int8)
    rx = bec_transmit(chain_encode(ccfg, info, seed=1), 0.6, rng=2)
    ff_fb_decode(rx, max_outer=1)  # warm
    t0 = time.monotonic()
    dec = ff_fb_decode(rx)
    results["chain_decode_s"] = time.monotonic() - t0
    results["chain_erased"] = int(dec.block_erasures.sum())

    # raw trellis decode, one long block
    from coupled_turbo.conv_trellis import (bcjr_erasure_decode, build_trellis,
                                            rsc_encode)
    trellis = build_trellis(GeneratorSpec())
    n = 1 << 16
    bits = np.random.default_rng(3).integers(0, 2, n).astype(np.int8)
    parity, _, _, _ = rsc_encode(trellis, bits, terminate=False)
    sys_obs = np.where(np.random.default_rng(4).random(n) < 0.6, 2,
                       bits).astype(np.int8)
    par_obs = np.where(np.random.default_rng(5).random(n) < 0.6, 2,
                       parity).astype(np.int8)
    bcjr_erasure_decode(trellis, sys_obs[:128], par_obs[:128],
                        end_known=False)  # warm
    t0 = time.monotonic()
    bcjr_erasure_decode(trellis, sys_obs, par_obs, end_known=False)
    results["trellis_decode_s"] = time.monotonic() - t0
    return results


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--both", action="store_true",
                        help="also time the numpy fallback and compare")
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args()

    mine = bench()
    rows = [mine]
    if args.both:
        env = dict(os.environ, COUPLED_TURBO_NO_NUMBA="1")
        proc = subprocess.run(
            [sys.executable, __file__, "--json"], env=env,
            capture_output=True, text=True, check=True, timeout=3600)
        rows.append(json.loads(proc.stdout))

    if args.json:
        print(json.dumps(mine))
        return

    names = [("de_run_s", "DE sweep (L=50, 2000 iters cap)"),
             ("chain_decode_s", "chain FF-FB decode (K=4096, L=8)"),
             ("trellis_decode_s", "trellis decode (n=65536)")]
    header = f"{'kernel':<36}" + "".join(
        f"{'numba' if r['numba'] else 'numpy':>12}" for r in rows)
    print(header)
    for key, label in names:
        line = f"{label:<36}" + "".join(f"{r[key]:>11.3f}s" for r in rows)
        print(line)
    if args.both and rows[0]["numba"] and not rows[1]["numba"]:
        for key, label in names:
            ratio = rows[1][key] / max(rows[0][key], 1e-9)
            print(f"{label:<36}{ratio:>10.1f}x speedup")


if __name__ == "__main__":
    main()
