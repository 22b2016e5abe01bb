"""buddytrack: template-matching visual tracking via reciprocal-rank patch
similarity, with memory-filtered template updating and a verification suite
for the metric's statistical properties."""

__version__ = "0.1.0"

from .features import ColorPatchProvider, PatchSet, decompose_patches, rgb_to_lab
from .geometry import (
    BoundingBox,
    SamplingParams,
    TargetState,
    crop_normalize,
    geometry_distance,
    sample_candidates,
    vor,
)
from .memory import (
    SelectionProblem,
    SelectionSolution,
    TemplateDictionary,
    TemplatePair,
    solve_selection,
)
from .metrics import OpeReport, ope_metrics
from .sequences import SequenceBundle, SynthSpec, load_sequence, synth_sequence
from .similarity import SimilarityConfig, batch_score, bbs, mbs, reciprocal_rank_pairs
from .theory import (
    GaussianSpec,
    GaussianMixtureSpec,
    TheoryReport,
    UniformSpec,
    mc_estimate,
    quadrature_expectation,
    verify_lemma3,
    verify_theorem1,
)
from .tracker import FrameResult, GridProposalProvider, Tracker, TrackerConfig

__all__ = [
    "__version__",
    "BoundingBox",
    "TargetState",
    "SamplingParams",
    "vor",
    "geometry_distance",
    "sample_candidates",
    "crop_normalize",
    "PatchSet",
    "rgb_to_lab",
    "decompose_patches",
    "ColorPatchProvider",
    "SimilarityConfig",
    "reciprocal_rank_pairs",
    "mbs",
    "bbs",
    "batch_score",
    "GaussianSpec",
    "UniformSpec",
    "GaussianMixtureSpec",
    "TheoryReport",
    "mc_estimate",
    "quadrature_expectation",
    "verify_lemma3",
    "verify_theorem1",
    "SelectionProblem",
    "SelectionSolution",
    "solve_selection",
    "TemplateDictionary",
    "TemplatePair",
    "Tracker",
    "TrackerConfig",
    "FrameResult",
    "GridProposalProvider",
    "SequenceBundle",
    "SynthSpec",
    "load_sequence",
    "synth_sequence",
    "OpeReport",
    "ope_metrics",
]
