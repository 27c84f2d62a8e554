"""Structural redundancy testing for deep models from per-layer activations."""

__version__ = "0.1.0"

from .errors import RedTestError  # noqa: E402
from .msrs import MsrsConfig, MsrsResult, fit_polynomial, msrs, msrs_budget, scaled_tanh  # noqa: E402
from .nas import (  # noqa: E402
    CandidateRecord,
    RankingConfig,
    rank_top_fraction,
    score_candidate,
    select_best,
)
from .prune import PruneConfig, PrunePlan, adjacent_similarities, expected_reduction, prune_plan  # noqa: E402
from .similarity import SimilarityMatrix, cka, gram, hsic_biased, hsic_unbiased, similarity_matrix  # noqa: E402
from .trace_io import (  # noqa: E402
    ActivationMatrix,
    LayerSpec,
    ModelTrace,
    flatten,
    load_trace,
    read_tensor,
    synth_trace,
    write_tensor,
)
