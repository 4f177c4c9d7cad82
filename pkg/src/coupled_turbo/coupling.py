"""Chain-level coupling of turbo code blocks over an erasure channel.

Two families. Information coupling re-encodes a slice of each block's fresh
information inside the following blocks, so the shared bits get decoded by
several component decoders; parity coupling re-encodes a slice of each
block's parity as information of later blocks. Either way a block's input
vector is laid out as

    u_t = [slot for source t-m | ... | slot for source t-1 | fresh part]

with every coupled slot of length lam*K/m. Out-of-range slots of the first
blocks, the would-be outgoing slices of the last information-coupled blocks,
and the termination region of the last parity-coupled blocks hold structural
zeros: known to the receiver, never transmitted, excluded from the
information count. Tails of the component encoders are likewise never
transmitted (termination enters decoding as the known end state), which
keeps transmitted-bit accounting exactly equal to the rational rate formula.

All per-transmission randomness (block interleavers, puncturing masks,
scattered coupled positions) is derived from one integer seed, so a received
chain serializes as config + seed + packed ternary symbols.
"""

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .conv_trellis import ERASED, GeneratorSpec, combine
from .turbo_codec import (
    TurboConfig,
    TurboExtrinsics,
    turbo_decode,
    turbo_encode,
)

__all__ = [
    "CouplingConfig",
    "ChainCodeword",
    "ReceivedChain",
    "DecodeResult",
    "chain_encode",
    "pic_encode",
    "ppc_encode",
    "bec_transmit",
    "rate_of",
    "asymptotic_rate",
    "rho_for_rate",
    "ff_fb_decode",
    "window_decode",
    "save_chain",
    "load_chain",
]


def _as_fraction(x, what):
    try:
        return Fraction(x)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{what} must be rational, got {x!r}") from exc


@dataclass(frozen=True, eq=False)
class CouplingConfig:
    family: str
    lam: Fraction
    m: int
    L: int
    K: int
    rho: Fraction = Fraction(1)
    lam_split: Optional[tuple] = None      # (lam_upper, lam_lower), ppc only
    scatter_coupled: bool = False          # randomize coupled positions
    puncture_coupled_parity: bool = True   # ppc: coupled parity puncturable
    inner_iterations: Optional[int] = None  # per block visit; None = stall
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)

    def __post_init__(self):
        object.__setattr__(self, "lam", _as_fraction(self.lam, "lam"))
        object.__setattr__(self, "rho", _as_fraction(self.rho, "rho"))
        if self.family not in ("pic", "ppc"):
            raise ValueError("family must be 'pic' or 'ppc'")
        hi = Fraction(1, 2) if self.family == "pic" else Fraction(1)
        if not 0 <= self.lam <= hi:
            raise ValueError(f"lam out of range for {self.family}: {self.lam}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.L < 2 * self.m:
            raise ValueError("L must be >= 2m")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        seg = self.lam * self.K / self.m
        if seg.denominator != 1:
            raise ValueError("lam*K/m must be an integer number of bits")
        if self.family == "ppc":
            split = self.lam_split
            if split is None:
                split = (self.lam / 2, self.lam / 2)
            split = (_as_fraction(split[0], "lam_split"),
                     _as_fraction(split[1], "lam_split"))
            if split[0] + split[1] != self.lam:
                raise ValueError("lam_split must sum to lam")
            for part in split:
                if (part * self.K / self.m).denominator != 1:
                    raise ValueError("each split segment must be integral")
            object.__setattr__(self, "lam_split", split)
        elif self.lam_split is not None:
            raise ValueError("lam_split applies to ppc only")
        if ((1 - self.rho) * 2 * self.K).denominator != 1:
            raise ValueError("rho must give an integral punctured count")

    # -- derived sizes ------------------------------------------------------

    @property
    def D(self):
        return int(self.lam * self.K)

    @property
    def seg(self):
        return self.D // self.m

    @property
    def fresh_len(self):
        return self.K - self.D

    def seg_split(self):
        """(upper, lower) bit counts of one coupled slot (ppc)."""
        su = int(self.lam_split[0] * self.K / self.m)
        return su, self.seg - su

    def term_len(self, t):
        """Structural-zero bits inside block t's fresh part (0-indexed)."""
        if self.family == "ppc":
            if t < self.L - self.m:
                return 0
            return min((t - (self.L - self.m) + 1) * self.seg, self.fresh_len)
        return sum(self.seg for j in range(1, self.m + 1) if t + j >= self.L)

    def info_len(self, t):
        return self.fresh_len - self.term_len(t)

    def fresh_mask(self, t):
        """Bool over logical positions: True where block t carries fresh
        information. Coupled-in slots are always excluded; near the chain
        end the exclusions are the outgoing slices that would couple past
        the last block (information coupling) or the termination ramp at
        the end of the vector (parity coupling)."""
        mask = np.zeros(self.K, dtype=bool)
        mask[self.D:] = True
        if self.family == "ppc":
            n = self.term_len(t)
            if n:
                mask[self.K - n:] = False
        else:
            for j in range(1, self.m + 1):
                if t + j >= self.L:
                    a, b = _pic_source_slice(self, j)
                    mask[a:b] = False
        return mask

    def total_info(self):
        return sum(self.info_len(t) for t in range(self.L))

    def parity_survivors(self):
        return 2 * self.K - int((1 - self.rho) * 2 * self.K)


# ---------------------------------------------------------------------------
# rate accounting (exact rationals)


def rate_of(cfg: CouplingConfig) -> Fraction:
    """Exact finite-L code rate: information bits over transmitted bits.

    Transmitted bits per block are its fresh information positions plus the
    surviving parity; coupled-in copies, structural zeros, and encoder tails
    are never transmitted.
    """
    info = Fraction(cfg.total_info())
    sent = info + cfg.L * 2 * cfg.K * cfg.rho
    return info / sent


def asymptotic_rate(lam, rho=Fraction(1), mother_rate=Fraction(1, 3)):
    """Large-L rate of either family: (1-lam) / ((1/R0-1) rho + 1 - lam)."""
    lam = Fraction(lam)
    rho = Fraction(rho)
    return (1 - lam) / ((1 / mother_rate - 1) * rho + 1 - lam)


def rho_for_rate(R, lam, mother_rate=Fraction(1, 3)):
    """Parity survival ratio hitting target rate R at coupling ratio lam."""
    R = Fraction(R)
    lam = Fraction(lam)
    return (1 / R - 1) / (1 / mother_rate - 1) * (1 - lam)


# ---------------------------------------------------------------------------
# per-transmission randomness


@dataclass(frozen=True, eq=False)
class ChainRandomness:
    interleavers: list           # L permutations of 0..K-1
    puncture_masks: list         # L bool arrays over [par_u | par_l]
    scatter_maps: list           # L permutations of 0..K-1, or Nones


def draw_randomness(cfg: CouplingConfig, seed) -> ChainRandomness:
    rng = np.random.default_rng(seed)
    interleavers = [rng.permutation(cfg.K).astype(np.int64)
                    for _ in range(cfg.L)]
    masks = []
    n_keep = cfg.parity_survivors()
    for t in range(cfg.L):
        mask = np.zeros(2 * cfg.K, dtype=bool)
        if cfg.family == "ppc" and not cfg.puncture_coupled_parity:
            # coupled parity exempt: force it on, puncture the rest harder
            # so the per-block survivor count stays 2*rho*K either way
            flags = _coupled_parity_flags(cfg, t)
            always_on = np.nonzero(flags)[0]
            eligible = np.nonzero(~flags)[0]
        else:
            always_on = np.empty(0, dtype=np.int64)
            eligible = np.arange(2 * cfg.K)
        need = n_keep - always_on.size
        if need < 0:
            raise ValueError("rho too small to keep all coupled parity")
        mask[rng.choice(eligible, size=need, replace=False)] = True
        mask[always_on] = True
        masks.append(mask)
    scatters = [rng.permutation(cfg.K).astype(np.int64)
                if cfg.scatter_coupled else None for _ in range(cfg.L)]
    return ChainRandomness(interleavers, masks, scatters)


def _coupled_parity_flags(cfg, t):
    """Bool over [par_u | par_l] marking block t's coupled-out parity."""
    flags = np.zeros(2 * cfg.K, dtype=bool)
    if cfg.family != "ppc":
        return flags
    for j in range(1, cfg.m + 1):
        if t + j >= cfg.L:
            continue
        u0, u1 = _ppc_source_slice(cfg, j, upper=True)
        l0, l1 = _ppc_source_slice(cfg, j, upper=False)
        flags[u0:u1] = True
        flags[cfg.K + l0:cfg.K + l1] = True
    return flags


# -- layout helpers ---------------------------------------------------------
# Input vector of block t, logical order: positions [(m-j)*seg, (m-j+1)*seg)
# hold the slot fed by source block t-j; positions [D, K) are the fresh part.


def _slot_range(cfg, j):
    start = (cfg.m - j) * cfg.seg
    return start, start + cfg.seg


def _pic_source_slice(cfg, j):
    """Positions in the source input vector shared forward at offset j."""
    start = cfg.D + (j - 1) * cfg.seg
    return start, start + cfg.seg


def _ppc_source_slice(cfg, j, upper):
    """Tail slice of the source parity stream coupled forward at offset j."""
    su, sl = cfg.seg_split()
    width = su if upper else sl
    end = cfg.K - (j - 1) * width
    return end - width, end


# ---------------------------------------------------------------------------
# codeword containers


@dataclass(eq=False)
class BlockCodeword:
    sys: np.ndarray            # full K-bit input vector, logical order
    par_u: np.ndarray
    par_l: np.ndarray
    tails: tuple
    fresh_mask: np.ndarray     # logical positions carrying fresh information
    par_mask: np.ndarray       # bool over [par_u | par_l], True = transmitted

    @property
    def n_transmitted(self):
        return int(self.fresh_mask.sum() + self.par_mask.sum())


@dataclass(eq=False)
class ChainCodeword:
    cfg: CouplingConfig
    seed: int
    blocks: list
    info: np.ndarray           # the fresh information stream as encoded

    @property
    def n_transmitted(self):
        return sum(b.n_transmitted for b in self.blocks)


@dataclass(eq=False)
class ReceivedChain:
    """Ternary channel observations aligned to the logical block layout.

    Non-transmitted positions (coupled-in slots, structural zeros, punctured
    or erased bits) are ERASED here; the decoder reinstates structural
    knowledge itself, so a received chain stays a pure channel artifact.
    """

    cfg: CouplingConfig
    seed: int
    sys_obs: list              # L ternary arrays, length K
    par_u_obs: list
    par_l_obs: list


def chain_encode(cfg: CouplingConfig, info, seed=0) -> ChainCodeword:
    info = np.ascontiguousarray(info, dtype=np.int8)
    need = cfg.total_info()
    if info.shape != (need,):
        raise ValueError(f"info stream must have length {need}")
    rnd = draw_randomness(cfg, seed)
    blocks = []
    used = 0
    for t in range(cfg.L):
        u = np.zeros(cfg.K, dtype=np.int8)
        for j in range(1, cfg.m + 1):
            s = t - j
            if s < 0:
                continue       # structural zeros stay zero
            a, b = _slot_range(cfg, j)
            if cfg.family == "pic":
                sa, sb = _pic_source_slice(cfg, j)
                u[a:b] = blocks[s].sys[sa:sb]
            else:
                su, _ = cfg.seg_split()
                ua, ub = _ppc_source_slice(cfg, j, upper=True)
                la, lb = _ppc_source_slice(cfg, j, upper=False)
                u[a:a + su] = blocks[s].par_u[ua:ub]
                u[a + su:b] = blocks[s].par_l[la:lb]
        fresh = cfg.fresh_mask(t)
        n_info = cfg.info_len(t)
        u[fresh] = info[used:used + n_info]
        used += n_info

        pos = rnd.scatter_maps[t]
        physical = u if pos is None else _to_physical(u, pos)
        tcfg = TurboConfig(K=cfg.K, interleaver=rnd.interleavers[t],
                           generator=cfg.generator)
        cw = turbo_encode(tcfg, physical)
        blocks.append(BlockCodeword(
            sys=u, par_u=cw.parity_upper, par_l=cw.parity_lower,
            tails=cw.tails, fresh_mask=fresh,
            par_mask=rnd.puncture_masks[t].copy(),
        ))
    return ChainCodeword(cfg, seed, blocks, info)


def pic_encode(cfg: CouplingConfig, info, seed=0) -> ChainCodeword:
    if cfg.family != "pic":
        raise ValueError("pic_encode needs a pic config")
    return chain_encode(cfg, info, seed)


def ppc_encode(cfg: CouplingConfig, info, seed=0) -> ChainCodeword:
    if cfg.family != "ppc":
        raise ValueError("ppc_encode needs a ppc config")
    return chain_encode(cfg, info, seed)


def bec_transmit(codeword: ChainCodeword, eps, rng=None) -> ReceivedChain:
    """Erase every transmitted bit independently with probability eps."""
    cfg = codeword.cfg
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    sys_obs, par_u_obs, par_l_obs = [], [], []
    for b in codeword.blocks:
        sys = np.full(cfg.K, ERASED, dtype=np.int8)
        got = b.fresh_mask & (rng.random(cfg.K) >= eps)
        sys[got] = b.sys[got]
        par = np.full(2 * cfg.K, ERASED, dtype=np.int8)
        got = b.par_mask & (rng.random(2 * cfg.K) >= eps)
        stacked = np.concatenate([b.par_u, b.par_l])
        par[got] = stacked[got]
        sys_obs.append(sys)
        par_u_obs.append(par[:cfg.K])
        par_l_obs.append(par[cfg.K:])
    return ReceivedChain(cfg, codeword.seed, sys_obs, par_u_obs, par_l_obs)


# ---------------------------------------------------------------------------
# chain decoding


@dataclass(eq=False)
class DecodeResult:
    info: np.ndarray            # ternary decoded information stream
    block_erasures: np.ndarray  # residual erased info bits per block
    outer_iterations: int

    @property
    def erasure_rate(self):
        return float((self.info == ERASED).mean()) if self.info.size else 0.0


def _to_physical(vec, pos):
    out = np.empty_like(vec)
    out[pos] = vec
    return out


class _ChainDecoder:
    """Shared machinery of full-chain FF-FB and sliding-window decoding.

    Extrinsic stores of unvisited blocks stay all-ERASED, so prior assembly
    can always read every neighbour: absent messages are no-ops, and a
    window's committed blocks keep contributing their frozen extrinsics.
    """

    def __init__(self, received: ReceivedChain):
        cfg = received.cfg
        self.cfg = cfg
        self.rnd = draw_randomness(cfg, received.seed)
        self.base_sys = []     # channel + structural knowledge, logical order
        self.par_u = []
        self.par_l = []
        for t in range(cfg.L):
            sys = received.sys_obs[t].copy()
            for j in range(1, cfg.m + 1):
                if t - j < 0:
                    a, b = _slot_range(cfg, j)
                    sys[a:b] = 0
            zero = ~cfg.fresh_mask(t)
            zero[:cfg.D] = False
            sys[zero] = 0
            self.base_sys.append(sys)
            self.par_u.append(received.par_u_obs[t].copy())
            self.par_l.append(received.par_l_obs[t].copy())
        K = cfg.K
        self.ext_info = [np.full(K, ERASED, np.int8) for _ in range(cfg.L)]
        self.ext_par_u = [np.full(K, ERASED, np.int8) for _ in range(cfg.L)]
        self.ext_par_l = [np.full(K, ERASED, np.int8) for _ in range(cfg.L)]

    # -- cross-block prior assembly ------------------------------------

    def _slot_external(self, t):
        """Prior on block t's coupled-in slots: channel observations of the
        shared bits (transmitted within the source block) plus the source
        decoder's extrinsics."""
        cfg = self.cfg
        out = np.full(cfg.K, ERASED, dtype=np.int8)
        for j in range(1, cfg.m + 1):
            s = t - j
            if s < 0:
                continue
            a, b = _slot_range(cfg, j)
            if cfg.family == "pic":
                sa, sb = _pic_source_slice(cfg, j)
                got = combine(self.base_sys[s][sa:sb],
                              self.ext_info[s][sa:sb])
            else:
                su, _ = cfg.seg_split()
                ua, ub = _ppc_source_slice(cfg, j, upper=True)
                la, lb = _ppc_source_slice(cfg, j, upper=False)
                got = np.concatenate([
                    combine(self.par_u[s][ua:ub], self.ext_par_u[s][ua:ub]),
                    combine(self.par_l[s][la:lb], self.ext_par_l[s][la:lb]),
                ])
            out[a:b] = got
        return out

    def _feedback_external(self, t):
        """Priors flowing back from destinations of block t's coupled bits:
        each destination's information extrinsic at its coupled-in slot.

        For information coupling these land on info positions of block t;
        for parity coupling they land on its parity streams.
        """
        cfg = self.cfg
        info = np.full(cfg.K, ERASED, dtype=np.int8)
        par_u = np.full(cfg.K, ERASED, dtype=np.int8)
        par_l = np.full(cfg.K, ERASED, dtype=np.int8)
        for j in range(1, cfg.m + 1):
            d = t + j
            if d >= cfg.L:
                continue
            a, b = _slot_range(cfg, j)
            got = self.ext_info[d][a:b]
            if cfg.family == "pic":
                sa, sb = _pic_source_slice(cfg, j)
                info[sa:sb] = got
            else:
                su, _ = cfg.seg_split()
                ua, ub = _ppc_source_slice(cfg, j, upper=True)
                la, lb = _ppc_source_slice(cfg, j, upper=False)
                par_u[ua:ub] = got[:su]
                par_l[la:lb] = got[su:]
        return info, par_u, par_l

    # -- block visit -----------------------------------------------------

    def visit(self, t):
        cfg = self.cfg
        fb_info, fb_par_u, fb_par_l = self._feedback_external(t)
        ext_info = combine(self._slot_external(t), fb_info)
        pos = self.rnd.scatter_maps[t]
        channel = TurboExtrinsics(
            self.base_sys[t] if pos is None
            else _to_physical(self.base_sys[t], pos),
            self.par_u[t], self.par_l[t])
        external = TurboExtrinsics(
            ext_info if pos is None else _to_physical(ext_info, pos),
            fb_par_u, fb_par_l)
        tcfg = TurboConfig(K=cfg.K, interleaver=self.rnd.interleavers[t],
                           inner_iterations=cfg.inner_iterations,
                           generator=cfg.generator)
        out = turbo_decode(tcfg, channel, external)
        self.ext_info[t] = out.info if pos is None else out.info[pos]
        self.ext_par_u[t] = out.parity_upper
        self.ext_par_l[t] = out.parity_lower

    def known_count(self):
        return int(sum((e != ERASED).sum() for e in self.ext_info)
                   + sum((e != ERASED).sum() for e in self.ext_par_u)
                   + sum((e != ERASED).sum() for e in self.ext_par_l))

    def run(self, lo, hi, max_outer):
        """FF then FB sweeps over blocks [lo, hi) until stall or cap."""
        it = 0
        count = self.known_count()
        while it < max_outer:
            it += 1
            for t in range(lo, hi):
                self.visit(t)
            for t in range(hi - 1, lo - 1, -1):
                self.visit(t)
            now = self.known_count()
            if now == count:
                break
            count = now
        return it

    # -- result assembly ---------------------------------------------------

    def block_info(self, t):
        """Ternary decision on block t's fresh information positions."""
        best = combine(self.base_sys[t], self.ext_info[t])
        best = combine(best, self._feedback_external(t)[0])
        return best[self.cfg.fresh_mask(t)]

    def result(self, outer) -> DecodeResult:
        parts = [self.block_info(t) for t in range(self.cfg.L)]
        erasures = np.array([(p == ERASED).sum() for p in parts],
                            dtype=np.int64)
        info = np.concatenate(parts) if parts else np.empty(0, np.int8)
        return DecodeResult(info, erasures, outer)


def ff_fb_decode(received: ReceivedChain, max_outer=100) -> DecodeResult:
    """Feed-forward / feedback decoding of the whole chain to global stall."""
    dec = _ChainDecoder(received)
    outer = dec.run(0, received.cfg.L, max_outer)
    return dec.result(outer)


def window_decode(received: ReceivedChain, W, max_outer=100) -> DecodeResult:
    """Sliding-window decoding: decode blocks [t, t+W), commit block t.

    Needs W >= m+1 so a window always covers every destination of the block
    being committed. Committed blocks are frozen: later windows read their
    stored extrinsics but never revisit them. With W = L the single window
    is the whole chain and the result is bit-identical to ff_fb_decode.
    """
    cfg = received.cfg
    if W < cfg.m + 1:
        raise ValueError("window must span at least m+1 blocks")
    W = min(W, cfg.L)
    dec = _ChainDecoder(received)
    total = 0
    for start in range(cfg.L - W + 1):
        total += dec.run(start, start + W, max_outer)
    return dec.result(total)


# ---------------------------------------------------------------------------
# serialization: json header + packed 2-bit ternary body

_MAGIC = b"CTC1"


def _pack2(arr):
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    pad = (-arr.size) % 4
    if pad:
        arr = np.concatenate([arr, np.zeros(pad, np.uint8)])
    arr = arr.reshape(-1, 4)
    return (arr[:, 0] | (arr[:, 1] << 2) | (arr[:, 2] << 4)
            | (arr[:, 3] << 6)).astype(np.uint8).tobytes()


def _unpack2(buf, n):
    raw = np.frombuffer(buf, dtype=np.uint8)
    out = np.empty((raw.size, 4), dtype=np.int8)
    for k in range(4):
        out[:, k] = (raw >> (2 * k)) & 3
    return np.ascontiguousarray(out.reshape(-1)[:n])


def _cfg_header(cfg: CouplingConfig, seed) -> dict:
    h = {
        "family": cfg.family,
        "lam": str(cfg.lam),
        "m": cfg.m,
        "L": cfg.L,
        "K": cfg.K,
        "rho": str(cfg.rho),
        "scatter_coupled": cfg.scatter_coupled,
        "puncture_coupled_parity": cfg.puncture_coupled_parity,
        "inner_iterations": cfg.inner_iterations,
        "generator": [cfg.generator.feedback, cfg.generator.feedforward],
        "seed": int(seed),
    }
    if cfg.lam_split is not None:
        h["lam_split"] = [str(cfg.lam_split[0]), str(cfg.lam_split[1])]
    return h


def _cfg_from_header(h) -> CouplingConfig:
    split = h.get("lam_split")
    if split is not None:
        split = (Fraction(split[0]), Fraction(split[1]))
    return CouplingConfig(
        family=h["family"], lam=Fraction(h["lam"]), m=h["m"], L=h["L"],
        K=h["K"], rho=Fraction(h["rho"]), lam_split=split,
        scatter_coupled=h["scatter_coupled"],
        puncture_coupled_parity=h["puncture_coupled_parity"],
        inner_iterations=h["inner_iterations"],
        generator=GeneratorSpec(*h["generator"]),
    )


def save_chain(path, received: ReceivedChain):
    """Write a received chain: magic, header length, json header, then
    packed 2-bit ternary symbols (sys, par_u, par_l per block in order)."""
    header = json.dumps(_cfg_header(received.cfg, received.seed),
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for t in range(received.cfg.L):
            for arr in (received.sys_obs[t], received.par_u_obs[t],
                        received.par_l_obs[t]):
                fh.write(_pack2(arr))


def load_chain(path) -> ReceivedChain:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a chain trace file")
        n = int.from_bytes(fh.read(8), "little")
        head = json.loads(fh.read(n).decode())
        cfg = _cfg_from_header(head)
        nbytes = (cfg.K + 3) // 4
        sys_obs, par_u_obs, par_l_obs = [], [], []
        for _ in range(cfg.L):
            sys_obs.append(_unpack2(fh.read(nbytes), cfg.K))
            par_u_obs.append(_unpack2(fh.read(nbytes), cfg.K))
            par_l_obs.append(_unpack2(fh.read(nbytes), cfg.K))
    return ReceivedChain(cfg, head["seed"], sys_obs, par_u_obs, par_l_obs)
