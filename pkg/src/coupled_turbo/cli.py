"""Command-line front end for thresholds, optimization, and simulations.

Configuration comes from an optional plain-text file (one `key = value` per
line, `#` starts a comment) overridden by command-line flags. Unknown keys
in a config file are hard errors, and the fully resolved configuration is
echoed to stdout and into the header of every output file as `#` lines, so
an artifact always records how it was produced.

Rationals are written "a/b" (or a decimal string); they stay exact through
rate and layout arithmetic.
"""

import argparse
import os
import sys
from fractions import Fraction

import numpy as np

from .coupling import (
    CouplingConfig,
    bec_transmit,
    chain_encode,
    ff_fb_decode,
    rate_of,
    save_chain,
    window_decode,
)
from .de_engine import (
    ChainConfig,
    awgn_sigma_from_bec,
    map_threshold,
    memoized_transfer,
    threshold_bisect,
)
from .optimizer import SearchSpec, joint_search
from .sim_harness import ExperimentSpec, run_ber, write_gnuplot

__all__ = ["main"]


def _frac(s):
    try:
        return Fraction(str(s))
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a rational: {s!r}") from exc


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    if isinstance(s, (list, tuple)):
        return tuple(float(x) for x in s)
    return tuple(float(x) for x in str(s).split(","))


def _optint(s):
    if s is None or str(s).strip().lower() in ("", "none"):
        return None
    return int(s)


def read_config(path, allowed):
    """key = value lines; '#' comments; unknown keys are hard errors."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in allowed:
                raise ValueError(
                    f"{path}:{lineno}: unknown key {key!r}; valid keys: "
                    + ", ".join(sorted(allowed)))
            out[key] = value
    return out


def resolve(args, keys):
    """Merge config file and flag values; flags win; parse per key type."""
    raw = {}
    if getattr(args, "config", None):
        raw.update(read_config(args.config, set(keys)))
    for key in keys:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            raw[key] = flag
    cfg = {}
    for key, (parse, default) in keys.items():
        if key in raw:
            cfg[key] = parse(raw[key])
        elif default is not _REQUIRED:
            cfg[key] = default
        else:
            raise ValueError(f"missing required key: {key}")
    return cfg


_REQUIRED = object()


def _show(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def echo_lines(cfg):
    """Config as '# key = value' lines; values parse back as config input."""
    return [f"# {key} = {_show(cfg[key])}" for key in sorted(cfg)]


def _echo(cfg):
    for line in echo_lines(cfg):
        print(line)


def _write_csv(path, cfg, header, rows):
    with open(path, "w") as fh:
        for line in echo_lines(cfg):
            fh.write(line + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")


def _threads(args):
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("COUPLED_TURBO_THREADS", os.cpu_count() or 1))


def _coupling_config(cfg):
    return CouplingConfig(
        family=cfg["family"], lam=cfg["lambda"], m=cfg["m"], L=cfg["L"],
        K=cfg["K"], rho=cfg["rho"],
        scatter_coupled=cfg["scatter_coupled"],
        puncture_coupled_parity=cfg["puncture_coupled_parity"],
        inner_iterations=cfg["inner_iterations"],
    )


# ---------------------------------------------------------------------------
# subcommands


_THRESHOLD_KEYS = {
    "family": (str, _REQUIRED),
    "lambda": (_frac, _REQUIRED),
    "m": (int, 1),
    "L": (int, 100),
    "rho": (_frac, Fraction(1)),
    "schedule": (str, "serial"),
    "tol": (float, 1e-5),
    "output": (str, None),
}


def cmd_threshold(args):
    cfg = resolve(args, _THRESHOLD_KEYS)
    _echo(cfg)
    chain = ChainConfig(cfg["family"], float(cfg["lambda"]), cfg["m"],
                        cfg["L"], rho=float(cfg["rho"]),
                        schedule=cfg["schedule"])
    eps = threshold_bisect(chain, tol=cfg["tol"])
    print(f"eps_bp = {eps:.5f}")
    if cfg["output"]:
        _write_csv(cfg["output"], cfg,
                   ["family", "lambda", "m", "L", "rho", "eps_bp"],
                   [[cfg["family"], cfg["lambda"], cfg["m"], cfg["L"],
                     cfg["rho"], f"{eps:.6f}"]])
    return 0


_OPTIMIZE_KEYS = {
    "family": (str, _REQUIRED),
    "rate": (_frac, _REQUIRED),
    "m": (int, 1),
    "L": (int, 100),
    "lam-min": (_frac, Fraction(0)),
    "lam-max": (lambda s: None if s is None else _frac(s), None),
    "step": (_frac, Fraction(1, 100)),
    "refine-step": (_frac, Fraction(1, 500)),
    "tol": (float, 1e-5),
    "output": (str, None),
}


def cmd_optimize(args):
    cfg = resolve(args, _OPTIMIZE_KEYS)
    _echo(cfg)
    spec = SearchSpec(cfg["family"], cfg["rate"], m=cfg["m"], L=cfg["L"],
                      lam_min=cfg["lam-min"], lam_max=cfg["lam-max"],
                      step=cfg["step"], refine_step=cfg["refine-step"],
                      bisect_tol=cfg["tol"], workers=_threads(args))
    res = joint_search(spec)
    lo, hi = res.tie_interval
    print(f"lam = {res.lam} ({float(res.lam):.4f})")
    print(f"rho = {res.rho} ({float(res.rho):.4f})")
    print(f"eps_bp = {res.eps_bp:.5f}")
    print(f"tie_interval = [{float(lo):.4f}, {float(hi):.4f}]")
    if cfg["output"]:
        with open(cfg["output"], "w") as fh:
            for line in echo_lines(cfg):
                fh.write(line + "\n")
        curve_to_csv_append(cfg["output"], spec, res)
    return 0


def curve_to_csv_append(path, spec, res):
    import csv as _csv
    with open(path, "a", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["family", "rate", "m", "lam", "rho", "eps_bp", "best"])
        for lam, rho, eps in res.curve:
            w.writerow([spec.family, str(spec.target_rate), spec.m,
                        str(lam), str(rho), f"{eps:.6f}",
                        int(lam == res.lam)])


_CHAIN_KEYS = {
    "family": (str, _REQUIRED),
    "lambda": (_frac, _REQUIRED),
    "m": (int, 1),
    "L": (int, _REQUIRED),
    "K": (int, _REQUIRED),
    "rho": (_frac, Fraction(1)),
    "scatter_coupled": (_bool, False),
    "puncture_coupled_parity": (_bool, True),
    "inner_iterations": (_optint, None),
}

_BER_KEYS = dict(_CHAIN_KEYS, **{
    "eps": (_floats, _REQUIRED),
    "decoder": (str, "ff-fb"),
    "W": (_optint, None),
    "min-error-events": (int, 50),
    "max-chains": (int, 10_000),
    "max-outer": (int, 100),
    "output": (str, None),
    "gnuplot": (str, None),
})


def cmd_ber(args):
    cfg = resolve(args, _BER_KEYS)
    _echo(cfg)
    spec = ExperimentSpec(
        _coupling_config(cfg), cfg["eps"], decoder=cfg["decoder"],
        W=cfg["W"], min_error_events=cfg["min-error-events"],
        max_chains=cfg["max-chains"], seed=args.seed,
        max_outer=cfg["max-outer"], output=cfg["output"],
        workers=_threads(args),
        comment="\n".join(echo_lines(cfg)) if cfg["output"] else None)
    for rec in run_ber(spec):
        print(f"eps={rec.eps:.4f} ber={rec.ber:.3e} "
              f"({rec.errors}/{rec.bits} bits, {rec.chains} chains, "
              f"{rec.seconds:.1f}s)")
    if cfg["gnuplot"]:
        if not cfg["output"]:
            raise ValueError("gnuplot script needs a CSV output path")
        write_gnuplot(cfg["output"], cfg["gnuplot"])
    return 0


_TRANSFER_KEYS = {
    "points": (int, 9),
    "output": (str, None),
}


def cmd_transfer(args):
    cfg = resolve(args, _TRANSFER_KEYS)
    _echo(cfg)
    transfer = memoized_transfer()
    grid = np.linspace(0.0, 1.0, cfg["points"])
    rows = []
    for p in grid:
        pv = np.full(grid.shape, p)
        fp, fq = transfer.pair(pv, grid)
        for q, a, b in zip(grid, fp, fq):
            rows.append([f"{p:.6f}", f"{q:.6f}", f"{a:.8f}", f"{b:.8f}"])
    if cfg["output"]:
        _write_csv(cfg["output"], cfg, ["pbar", "qbar", "f_p", "f_q"], rows)
    else:
        print("pbar,qbar,f_p,f_q")
        for row in rows:
            print(",".join(row))
    return 0


_MAP_KEYS = {
    "rate": (_frac, _REQUIRED),
}


def cmd_map_threshold(args):
    cfg = resolve(args, _MAP_KEYS)
    _echo(cfg)
    eps = map_threshold(float(cfg["rate"]))
    print(f"eps_map = {eps:.5f}")
    return 0


_AWGN_KEYS = {
    "eps": (float, _REQUIRED),
    "rate": (_frac, _REQUIRED),
}


def cmd_awgn(args):
    cfg = resolve(args, _AWGN_KEYS)
    _echo(cfg)
    sigma, db = awgn_sigma_from_bec(cfg["eps"], float(cfg["rate"]))
    print(f"sigma = {sigma:.5f}")
    print(f"ebn0_db = {db:+.4f}")
    return 0


_ROUNDTRIP_KEYS = dict(_CHAIN_KEYS, **{
    "eps": (float, _REQUIRED),
    "decoder": (str, "ff-fb"),
    "W": (_optint, None),
    "max-outer": (int, 100),
    "save-trace": (str, None),
})


def cmd_roundtrip(args):
    cfg = resolve(args, _ROUNDTRIP_KEYS)
    _echo(cfg)
    chain_cfg = _coupling_config(cfg)
    rng = np.random.default_rng(args.seed)
    info = rng.integers(0, 2, chain_cfg.total_info()).astype(np.int8)
    cw = chain_encode(chain_cfg, info, seed=args.seed)
    rx = bec_transmit(cw, cfg["eps"], rng=rng)
    if cfg["save-trace"]:
        save_chain(cfg["save-trace"], rx)
    if cfg["decoder"] == "window":
        if cfg["W"] is None:
            raise ValueError("window decoding needs W")
        out = window_decode(rx, cfg["W"], max_outer=cfg["max-outer"])
    elif cfg["decoder"] == "ff-fb":
        out = ff_fb_decode(rx, max_outer=cfg["max-outer"])
    else:
        raise ValueError("decoder must be 'ff-fb' or 'window'")
    wrong = int(((out.info != 2) & (out.info != info)).sum())
    print(f"rate = {float(rate_of(chain_cfg)):.5f}")
    print(f"info_bits = {info.size}")
    print(f"erased = {int(out.block_erasures.sum())}")
    print(f"wrong = {wrong}")
    print(f"ber = {out.erasure_rate:.3e}")
    print(f"outer_iterations = {out.outer_iterations}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_keys(sub, keys):
    for key in keys:
        flag = "--" + key.replace("_", "-")
        sub.add_argument(flag, dest=key.replace("-", "_"), default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="coupled-turbo",
        description="thresholds, puncturing optimization, and Monte-Carlo "
                    "simulation of partially coupled turbo codes on the "
                    "binary erasure channel")
    parser.add_argument("--seed", type=int, default=0,
                        help="master seed; every command is deterministic "
                             "under it")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: "
                             "COUPLED_TURBO_THREADS or machine parallelism)")
    # The same flags are accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering a value given before it.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    subs = parser.add_subparsers(dest="command", required=True)
    for name, keys, fn in (
            ("threshold", _THRESHOLD_KEYS, cmd_threshold),
            ("optimize", _OPTIMIZE_KEYS, cmd_optimize),
            ("ber", _BER_KEYS, cmd_ber),
            ("transfer", _TRANSFER_KEYS, cmd_transfer),
            ("map-threshold", _MAP_KEYS, cmd_map_threshold),
            ("awgn", _AWGN_KEYS, cmd_awgn),
            ("roundtrip", _ROUNDTRIP_KEYS, cmd_roundtrip)):
        sub = subs.add_parser(name, parents=[common])
        sub.add_argument("--config", default=None,
                         help="key = value file; flags override it")
        _add_keys(sub, keys)
        sub.set_defaults(fn=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
