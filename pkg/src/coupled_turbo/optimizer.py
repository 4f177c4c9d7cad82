"""Joint search over (lam, rho) maximizing the BP threshold at fixed rate.

At a target rate R and coupling memory m, every coupling ratio lam pins the
parity survival ratio through the rate identity

    rho = (1/R - 1) / (1/R0 - 1) * (1 - lam)

so the search space is one-dimensional: sweep lam over a grid, compute the
exact rho for each point, and bisect the density-evolution threshold.
Thresholds within the bisection tolerance of the maximum form a tie set;
the reported optimum is the smallest tied lam with the whole tie interval
attached, since the threshold curve is typically flat near its peak.
"""

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .coupling import rho_for_rate
from .de_engine import ChainConfig, memoized_transfer, threshold_bisect

__all__ = ["SearchSpec", "SearchResult", "joint_search", "curve_to_csv"]


@dataclass(frozen=True)
class SearchSpec:
    family: str
    target_rate: Fraction
    m: int = 1
    L: int = 100
    lam_min: Fraction = Fraction(0)
    lam_max: Optional[Fraction] = None     # default: family bound
    step: Fraction = Fraction(1, 100)
    refine_step: Fraction = Fraction(1, 500)
    bisect_tol: float = 1e-5
    mother_rate: Fraction = Fraction(1, 3)
    workers: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "target_rate",
                           Fraction(self.target_rate))
        for name in ("lam_min", "step", "refine_step", "mother_rate"):
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        if self.lam_max is not None:
            object.__setattr__(self, "lam_max", Fraction(self.lam_max))
        if not 0 < self.target_rate < 1:
            raise ValueError("target rate must lie in (0, 1)")
        if self.step <= 0 or self.refine_step <= 0:
            raise ValueError("grid steps must be positive")

    @property
    def lam_bound(self):
        cap = Fraction(1, 2) if self.family == "pic" else Fraction(1)
        if self.lam_max is None:
            return cap
        return min(cap, self.lam_max)


@dataclass(frozen=True)
class SearchResult:
    lam: Fraction              # smallest lam of the tie set
    rho: Fraction
    eps_bp: float
    tie_interval: tuple        # (lam_lo, lam_hi) with thresholds within tol
    curve: tuple               # ((lam, rho, eps_bp), ...) sorted by lam


def _feasible(spec, lam):
    rho = rho_for_rate(spec.target_rate, lam, spec.mother_rate)
    if not 0 < rho <= 1:
        return None
    return rho


def _grid(spec, lo, hi, step, skip=()):
    pts = []
    k = -(-lo // step)         # ceil division on Fractions
    lam = k * step
    seen = set(skip)
    while lam <= hi:
        if lam not in seen:
            rho = _feasible(spec, lam)
            if rho is not None:
                pts.append((lam, rho))
            seen.add(lam)
        lam += step
    return pts


def _eval_point(args):
    family, lam, rho, m, L, tol, bracket = args
    cfg = ChainConfig(family, float(lam), m, L, rho=float(rho))
    return threshold_bisect(cfg, tol=tol, bracket=bracket)


def _run_grid(spec, pts, workers, tol):
    jobs = [(spec.family, lam, rho, spec.m, spec.L, tol, None)
            for lam, rho in pts]
    if workers == 1 or len(jobs) <= 1:
        # serial: consecutive grid points have nearby thresholds, so seed
        # each bisection with a bracket around the previous result
        out = []
        for job in jobs:
            bracket = ((out[-1] - 0.015, out[-1] + 0.015) if out else None)
            out.append(_eval_point(job[:-1] + (bracket,)))
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_eval_point, jobs, chunksize=1))


def joint_search(spec: SearchSpec) -> SearchResult:
    """Maximize the BP threshold over the feasible lam grid at fixed rate.

    Three passes. A cheap scan of the whole grid at millibel precision
    first; every point within twice the scan tolerance of the scan maximum
    is then re-bisected at full precision (the scan error per point is at
    most half its tolerance, so the margin cannot drop the true argmax);
    finally a refinement grid at spec.refine_step around the incumbent.
    The returned curve carries the best available estimate per point, and
    tie detection only ever compares full-precision entries.
    """
    workers = spec.workers or int(os.environ.get(
        "COUPLED_TURBO_THREADS", os.cpu_count() or 1))
    memoized_transfer()        # build/load the shared grid before forking
    pts = _grid(spec, spec.lam_min, spec.lam_bound, spec.step)
    if not pts:
        raise ValueError("no feasible lam on the search grid")

    curve = {}                 # lam -> (rho, eps)
    scan_tol = max(spec.bisect_tol, 1e-3)
    scan = _run_grid(spec, pts, workers, scan_tol)
    for (lam, rho), eps in zip(pts, scan):
        curve[lam] = (rho, eps)
    if scan_tol > spec.bisect_tol:
        cand = [p for p, e in zip(pts, scan) if e >= max(scan) - 2 * scan_tol]
    else:
        cand = pts
    fine = dict(cand)
    for (lam, rho), eps in zip(cand, _run_grid(spec, cand, workers,
                                               spec.bisect_tol)):
        curve[lam] = (rho, eps)

    best = max(fine, key=lambda lam: curve[lam][1])
    extra = _grid(spec, max(spec.lam_min, best - spec.step),
                  min(spec.lam_bound, best + spec.step),
                  spec.refine_step, skip=curve.keys())
    for (lam, rho), eps in zip(extra, _run_grid(spec, extra, workers,
                                                spec.bisect_tol)):
        curve[lam] = (rho, eps)
        fine[lam] = rho

    eps_max = max(curve[lam][1] for lam in fine)
    tied = sorted(lam for lam in fine
                  if curve[lam][1] >= eps_max - spec.bisect_tol)
    lam_best = tied[0]
    return SearchResult(
        lam=lam_best,
        rho=curve[lam_best][0],
        eps_bp=curve[lam_best][1],
        tie_interval=(tied[0], tied[-1]),
        curve=tuple((lam,) + curve[lam] for lam in sorted(curve)),
    )


def curve_to_csv(path, spec: SearchSpec, result: SearchResult):
    """Full lam -> eps_BP curve plus a summary row for the optimum."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["family", "rate", "m", "lam", "rho", "eps_bp", "best"])
        for lam, rho, eps in result.curve:
            w.writerow([spec.family, str(spec.target_rate), spec.m,
                        str(lam), str(rho), f"{eps:.6f}",
                        int(lam == result.lam)])
