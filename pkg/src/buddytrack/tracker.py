"""Dual-flow template-matching tracker with three-cue fusion.

Per frame, a random-sampling flow scores Gaussian candidates against the
long-memory template while a proposal flow scores objectness proposals
(pruned by a geometry distance to the sampling flow's pick) against the
short-memory template.  The three resulting cues -- sampling argmax,
proposal argmax, and geometry argmin -- are fused by a confidence that sums
each cue's template similarities with its overlaps against the other cues.
Templates update on a fixed cadence through the memory-filtering selector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .features import ColorPatchProvider, PatchSet
from .geometry import (
    BoundingBox,
    SamplingParams,
    TargetState,
    box_intersects_image,
    geometry_distance_batch,
    sample_candidates,
    state_to_box,
    vor,
)
from .memory import (
    SelectionProblem,
    TemplateDictionary,
    TemplatePair,
    maybe_update_template_e,
    reconstruct_template_r,
    solve_selection,
)
from .similarity import SimilarityConfig, batch_score, mbs

__all__ = [
    "TrackerConfig",
    "FrameResult",
    "GridProposalProvider",
    "fast_select_r",
    "fast_select_e",
    "Tracker",
]

CUE_ORDER = ("flow_r", "flow_e_mbs", "flow_e_dist")


@dataclass(frozen=True)
class TrackerConfig:
    """Pipeline parameters; defaults follow the reference configuration."""

    n_r: int = 700
    n_r_refined: int = 50
    n_e: int = 250
    n_e_refined: int = 50
    tau: float = 5.0
    sigma1: float = 0.5
    cap_c: int = 4
    sigma2: float = 2.0
    beta: float = 10.0
    delta: float = 5.0
    n_d: int = 12
    n_s: int = 10
    k_codebook: int = 5
    tmpl_e_threshold: float = 0.5
    selection_period: int = 10
    epsilon: float = 1e-6
    stop_tol: float = 1e-6
    max_iters: int = 200
    sigma_x: float | None = None
    sigma_y: float | None = None
    sigma_s: float = 0.15
    region_size: int = 36
    patch_size: int = 3
    seed: int = 0
    enable_flow_r: bool = True
    enable_flow_e: bool = True
    enable_memory_filter: bool = True
    trivial_count: int | None = None

    def __post_init__(self):
        counts = (
            self.n_r, self.n_r_refined, self.n_e, self.n_e_refined,
            self.n_d, self.n_s, self.k_codebook, self.selection_period,
            self.cap_c, self.region_size, self.patch_size,
        )
        if min(counts) < 1:
            raise ValueError("all counts must be >= 1")
        if not (0.0 <= self.tmpl_e_threshold <= 1.0):
            raise ValueError("tmpl_e_threshold must lie in [0, 1]")
        if not (self.enable_flow_r or self.enable_flow_e):
            raise ValueError("at least one candidate flow must be enabled")


@dataclass
class FrameResult:
    """Per-frame tracker output: the fused state and the cue confidences."""

    state: TargetState
    box: BoundingBox
    confidence: float
    cue_origin: str
    scores: dict[str, float] = field(default_factory=dict)
    lost: bool = False


def fast_select_r(features: np.ndarray, prev_feature: np.ndarray, n_keep: int) -> np.ndarray:
    """Indices of the ``n_keep`` candidates nearest to the previous result.

    Exact Euclidean ranking in feature space; ties break by candidate index.
    """
    diffs = np.asarray(features, dtype=float) - np.asarray(prev_feature, dtype=float)
    dists = np.linalg.norm(diffs, axis=1)
    order = np.lexsort((np.arange(len(dists)), dists))
    return order[: min(n_keep, len(dists))]


def fast_select_e(
    states: list[TargetState],
    anchor: TargetState,
    n_keep: int,
    tau: float,
    ref_box_w: float,
    ref_box_h: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Keep the proposals geometrically closest to the anchor state.

    Returns ``(indices, distances)`` sorted ascending, so ``indices[0]`` is
    the distance-argmin cue.  Ties break by proposal index.
    """
    cxs = np.array([s.cx for s in states])
    cys = np.array([s.cy for s in states])
    ss = np.array([s.scale for s in states])
    dists = geometry_distance_batch(cxs, cys, ss, anchor, ref_box_w, ref_box_h, tau)
    order = np.lexsort((np.arange(len(dists)), dists))[: min(n_keep, len(dists))]
    return order, dists[order]


class GridProposalProvider:
    """Objectness stand-in: a sliding grid scored by boundary edge density.

    Boxes around the previous state are ranked by the mean Sobel gradient
    magnitude in a thin band along the box perimeter, which peaks when the
    box aligns with an object silhouette (the criterion genuine proposal
    methods approximate).  Scales mix previous-relative and absolute anchors
    so a drifted estimate can re-lock; ties keep grid order.  The interface
    accepts a drop-in replacement with a real proposal algorithm.
    """

    def __init__(self, base_w: float, base_h: float,
                 scales: tuple[float, ...] = (0.9, 1.0, 1.1), span: int = 4,
                 band: int = 2):
        self.base_w = float(base_w)
        self.base_h = float(base_h)
        self.scales = scales
        self.span = span
        self.band = band

    def _box_sum(self, ii, x0, y0, x1, y1, h, w):
        x0 = int(np.clip(x0, 0, w))
        x1 = int(np.clip(x1, 0, w))
        y0 = int(np.clip(y0, 0, h))
        y1 = int(np.clip(y1, 0, h))
        if x1 <= x0 or y1 <= y0:
            return 0.0, 0
        total = ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]
        return float(total), (x1 - x0) * (y1 - y0)

    def propose(self, image: np.ndarray, prev_state: TargetState, n: int):
        img = np.asarray(image, dtype=float)
        gray = img.mean(axis=2) if img.ndim == 3 else img
        gx = ndimage.sobel(gray, axis=1, mode="nearest")
        gy = ndimage.sobel(gray, axis=0, mode="nearest")
        edge = np.hypot(gx, gy)
        ii = np.zeros((edge.shape[0] + 1, edge.shape[1] + 1))
        ii[1:, 1:] = edge.cumsum(axis=0).cumsum(axis=1)
        h, w = gray.shape

        # previous-relative scales adapt; absolute anchors let a drifted
        # estimate snap back to the initial object size
        scale_set: list[float] = []
        for mult in self.scales:
            for anchor in (prev_state.scale * mult, float(mult)):
                if all(abs(anchor - s) > 1e-9 for s in scale_set):
                    scale_set.append(anchor)

        states: list[TargetState] = []
        scores: list[float] = []
        offsets = range(-self.span, self.span + 1)
        band = self.band
        for scale in scale_set:
            bw = self.base_w * scale
            bh = self.base_h * scale
            for dy in offsets:
                for dx in offsets:
                    cx = prev_state.cx + dx * bw / 4.0
                    cy = prev_state.cy + dy * bh / 4.0
                    box = BoundingBox(cx - bw / 2.0, cy - bh / 2.0, bw, bh)
                    if not box_intersects_image(box, h, w):
                        continue
                    x0, y0 = np.floor(box.x), np.floor(box.y)
                    x1, y1 = np.ceil(box.x + box.w), np.ceil(box.y + box.h)
                    outer, outer_area = self._box_sum(
                        ii, x0 - band, y0 - band, x1 + band, y1 + band, h, w
                    )
                    inner, inner_area = self._box_sum(
                        ii, x0 + band, y0 + band, x1 - band, y1 - band, h, w
                    )
                    ring_area = max(outer_area - inner_area, 1)
                    states.append(TargetState(cx, cy, scale, prev_state.frame_index))
                    scores.append((outer - inner) / ring_area)
        if not states:
            return [], np.array([])
        scores_arr = np.array(scores)
        order = np.lexsort((np.arange(len(scores_arr)), -scores_arr))
        order = order[: min(n, len(order))]
        return [states[k] for k in order], scores_arr[order]


class Tracker:
    """Stateful per-sequence tracker; one instance owns one sequence.

    Initialize with the first frame and its groundtruth box (which seeds
    both templates and the dictionary), then call :meth:`track` once per
    subsequent frame.  Fully deterministic given the config seed.
    """

    def __init__(
        self,
        image: np.ndarray,
        init_box: BoundingBox,
        config: TrackerConfig | None = None,
        feature_provider=None,
        proposal_provider=None,
    ):
        self.config = config or TrackerConfig()
        cfg = self.config
        self.base_w = float(init_box.w)
        self.base_h = float(init_box.h)
        cx, cy = init_box.center
        self.state = TargetState(cx, cy, 1.0, 0)
        self.provider = feature_provider or ColorPatchProvider(
            self.base_w, self.base_h, cfg.region_size, cfg.patch_size
        )
        self.proposal_provider = proposal_provider or GridProposalProvider(
            self.base_w, self.base_h
        )
        self._sim = SimilarityConfig(cfg.sigma1, cfg.cap_c)
        sigma_x = cfg.sigma_x if cfg.sigma_x is not None else min(self.base_w / 4.0, 15.0)
        sigma_y = cfg.sigma_y if cfg.sigma_y is not None else min(self.base_h / 4.0, 15.0)
        self._params = SamplingParams(sigma_x, sigma_y, cfg.sigma_s, cfg.n_r)

        init_ps = self.provider.extract(image, [self.state])[0]
        self._set_templates(TemplatePair(tmpl_r=init_ps, tmpl_e=init_ps))
        self.dictionary = TemplateDictionary(cfg.n_d)
        self.dictionary.add(init_ps.flatten())
        self._prev_feature = init_ps.flatten()
        self._history_features: list[np.ndarray] = []
        self._history_scores: list[float] = []
        self._frame = 0

    def _set_templates(self, pair: TemplatePair) -> None:
        # raw mutual-buddy scores live on a scale set by sigma1 and the patch
        # layout (bounded near 0.16 at the defaults), so decision scores are
        # normalized by each template's self-similarity; that puts them on
        # the [0, ~1] scale the 0.5 update threshold and the overlap terms
        # of the fusion confidence expect
        self.templates = pair
        self._self_sim_r = mbs(pair.tmpl_r, pair.tmpl_r, self._sim)
        self._self_sim_e = mbs(pair.tmpl_e, pair.tmpl_e, self._sim)

    def _rel_r(self, score: float) -> float:
        return score / self._self_sim_r if self._self_sim_r > 0 else 0.0

    def _rel_e(self, score: float) -> float:
        return score / self._self_sim_e if self._self_sim_e > 0 else 0.0

    # -- candidate flows -------------------------------------------------

    def _valid_states(self, states, image_shape):
        h, w = image_shape[:2]
        return [
            s
            for s in states
            if box_intersects_image(state_to_box(s, self.base_w, self.base_h), h, w)
        ]

    def _run_flow_r(self, image):
        cfg = self.config
        drawn = sample_candidates(self.state, self._params, (cfg.seed, self._frame))
        drawn = self._valid_states(drawn, image.shape)
        if not drawn:
            return None
        patchsets = self.provider.extract(image, drawn)
        feats = np.stack([ps.flatten() for ps in patchsets])
        keep = fast_select_r(feats, self._prev_feature, cfg.n_r_refined)
        refined = [drawn[k] for k in keep]
        refined_ps = [patchsets[k] for k in keep]
        scores, best = batch_score(refined_ps, self.templates.tmpl_r, self._sim)
        return {
            "state": refined[best],
            "patchset": refined_ps[best],
            "mbs_r": self._rel_r(float(scores[best])),
        }

    def _run_flow_e(self, image, anchor):
        cfg = self.config
        proposals, objectness = self.proposal_provider.propose(
            image, self.state, cfg.n_e
        )
        # zero objectness means no edge evidence at all; an empty proposal
        # set falls back to the sampling flow alone
        proposals = [s for s, score in zip(proposals, objectness) if score > 0]
        proposals = self._valid_states(proposals, image.shape)
        if not proposals:
            return None
        ref_w = self.base_w * self.state.scale
        ref_h = self.base_h * self.state.scale
        keep, dists = fast_select_e(
            proposals, anchor, cfg.n_e_refined, cfg.tau, ref_w, ref_h
        )
        refined = [proposals[k] for k in keep]
        refined_ps = self.provider.extract(image, refined)
        # with the sampling flow disabled only the long template is live
        if cfg.enable_flow_r:
            template = self.templates.tmpl_e
            normalize = self._rel_e
        else:
            template = self.templates.tmpl_r
            normalize = self._rel_r
        scores, best = batch_score(refined_ps, template, self._sim)
        return {
            "mbs_state": refined[best],
            "mbs_patchset": refined_ps[best],
            "mbs_score": normalize(float(scores[best])),
            "dist_state": refined[0],
            "dist_patchset": refined_ps[0],
            "dist_value": float(dists[0]),
        }

    # -- fusion ----------------------------------------------------------

    def _fuse(self, cues: dict[str, dict]) -> tuple[str, float, dict[str, float]]:
        cfg = self.config
        both_templates = cfg.enable_flow_r and cfg.enable_flow_e
        boxes = {
            name: state_to_box(c["state"], self.base_w, self.base_h)
            for name, c in cues.items()
        }
        confidences: dict[str, float] = {}
        for name, cue in cues.items():
            conf = cue["mbs_r"]
            if both_templates:
                conf += cue["mbs_e"]
            for other in cues:
                if other != name:
                    conf += vor(boxes[name], boxes[other])
            confidences[name] = conf
        # ties resolve in CUE_ORDER: sampling flow first, then proposal argmax
        best = max(confidences.values())
        winner = next(n for n in CUE_ORDER if n in confidences and confidences[n] == best)
        return winner, confidences[winner], confidences

    def _cue_similarities(self, cues: dict[str, dict]):
        cfg = self.config
        both = cfg.enable_flow_r and cfg.enable_flow_e
        for cue in cues.values():
            if "mbs_r" not in cue:
                cue["mbs_r"] = self._rel_r(
                    mbs(cue["patchset"], self.templates.tmpl_r, self._sim)
                )
            if both and "mbs_e" not in cue:
                cue["mbs_e"] = self._rel_e(
                    mbs(cue["patchset"], self.templates.tmpl_e, self._sim)
                )

    # -- template / dictionary updates ------------------------------------

    def _update_templates(self, result_cue: dict):
        cfg = self.config
        t = self._frame
        feature = result_cue["patchset"].flatten()
        h_score = result_cue["mbs_r"]
        self._history_features.append(feature)
        self._history_scores.append(h_score)
        if len(self._history_features) > cfg.n_s:
            self._history_features.pop(0)
            self._history_scores.pop(0)

        if cfg.enable_flow_r and cfg.enable_flow_e:
            self._set_templates(
                maybe_update_template_e(
                    self.templates,
                    result_cue["patchset"],
                    result_cue.get("mbs_e", float("nan")),
                    cfg.tmpl_e_threshold,
                )
            )

        if cfg.enable_memory_filter:
            if t % cfg.selection_period == 0 and len(self._history_features) >= 2:
                self._run_memory_filter()
        elif h_score > cfg.tmpl_e_threshold:
            # ablation: long template refreshed like the short one
            self._set_templates(
                TemplatePair(tmpl_r=result_cue["patchset"], tmpl_e=self.templates.tmpl_e)
            )

    def _run_memory_filter(self):
        cfg = self.config
        raw = np.stack(self._history_features, axis=1)
        norms = np.linalg.norm(raw, axis=0)
        norms[norms == 0] = 1.0
        # columns scaled to norm sqrt(n_s) put the fixed beta/delta weights in
        # the regime where unreliable rows are zeroed but reliable ones survive
        scale = math.sqrt(raw.shape[1])
        problem = SelectionProblem(
            x=scale * raw / norms,
            h=np.array(self._history_scores),
            beta=cfg.beta,
            delta=cfg.delta,
            sigma2=cfg.sigma2,
            cap_c=cfg.cap_c,
            epsilon=cfg.epsilon,
            stop_tol=cfg.stop_tol,
            max_iters=cfg.max_iters,
        )
        solution = solve_selection(problem)
        representative = self._history_features[solution.selected_index]
        self.dictionary.add(representative)
        # the long template is only rebuilt once the dictionary is full; until
        # then the pristine initial template stands.  Reconstruction anchors
        # on the reliable representative, so a contaminated current frame
        # cannot leak in.
        if len(self.dictionary) >= self.dictionary.capacity:
            rebuilt = reconstruct_template_r(
                representative,
                self.dictionary,
                k=cfg.k_codebook,
                trivial_count=cfg.trivial_count,
            )
            dim = self.templates.tmpl_r.dim
            self._set_templates(
                TemplatePair(
                    tmpl_r=PatchSet.from_flat(rebuilt, dim),
                    tmpl_e=self.templates.tmpl_e,
                )
            )

    # -- main step ---------------------------------------------------------

    def track(self, image: np.ndarray) -> FrameResult:
        """Process the next frame and return the fused result."""
        self._frame += 1
        cfg = self.config
        cues: dict[str, dict] = {}

        flow_r = self._run_flow_r(image) if cfg.enable_flow_r else None
        if flow_r is not None:
            cues["flow_r"] = flow_r

        if cfg.enable_flow_e:
            anchor = flow_r["state"] if flow_r is not None else self.state
            flow_e = self._run_flow_e(image, anchor)
            if flow_e is not None:
                cues["flow_e_mbs"] = {
                    "state": flow_e["mbs_state"],
                    "patchset": flow_e["mbs_patchset"],
                }
                if cfg.enable_flow_r:
                    cues["flow_e_mbs"]["mbs_e"] = flow_e["mbs_score"]
                else:
                    cues["flow_e_mbs"]["mbs_r"] = flow_e["mbs_score"]
                cues["flow_e_dist"] = {
                    "state": flow_e["dist_state"],
                    "patchset": flow_e["dist_patchset"],
                }

        if not cues:
            return FrameResult(
                state=replace(self.state, frame_index=self._frame),
                box=state_to_box(self.state, self.base_w, self.base_h),
                confidence=0.0,
                cue_origin="lost",
                lost=True,
            )

        self._cue_similarities(cues)
        winner, confidence, confidences = self._fuse(cues)
        result_cue = cues[winner]
        result_state = replace(result_cue["state"], frame_index=self._frame)

        self._update_templates(result_cue)
        self.state = result_state
        self._prev_feature = result_cue["patchset"].flatten()

        return FrameResult(
            state=result_state,
            box=state_to_box(result_state, self.base_w, self.base_h),
            confidence=confidence,
            cue_origin=winner,
            scores=confidences,
        )

    def track_sequence(self, images) -> list[FrameResult]:
        """Track every frame after the initial one; returns one result each."""
        return [self.track(img) for img in images]
