"""Partially coupled turbo codes on the binary erasure channel."""

from .conv_trellis import (
    ERASED,
    KNOWN0,
    KNOWN1,
    GeneratorSpec,
    InconsistentTraceError,
    TernaryConflictError,
    Trellis,
    bcjr_erasure_decode,
    build_trellis,
    combine,
    rsc_encode,
)
from .turbo_codec import (
    TurboConfig,
    TurboCodeword,
    TurboExtrinsics,
    turbo_decode,
    turbo_encode,
)
from .coupling import (
    CouplingConfig,
    ReceivedChain,
    asymptotic_rate,
    bec_transmit,
    chain_encode,
    ff_fb_decode,
    load_chain,
    rate_of,
    rho_for_rate,
    save_chain,
    window_decode,
)
from .de_engine import (
    ChainConfig,
    awgn_sigma_from_bec,
    de_run,
    exact_transfer,
    map_threshold,
    mc_transfer,
    memoized_transfer,
    threshold_bisect,
)
from .optimizer import SearchSpec, SearchResult, joint_search
from .sim_harness import BERRecord, ExperimentSpec, run_ber

__version__ = "0.1.0"
