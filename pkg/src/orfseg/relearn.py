"""Reiterative learning: grow partial labels with confident stitched beliefs.

A base model is trained on area-thresholded patches of the original labels.
Each review then re-annotates the training images with the current model,
merges confident positives into the labels, rebuilds a mix and a
sequential dataset, fine-tunes one model on each and averages them.
"""
from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_belief, check_fraction, check_mask, check_odd_kernel, check_same_shape
from .imagecore import Sample, save_mask
from .metrics import MetricsReport, evaluate
from .orf import OverlappedRegionForecaster, build_gallery, smooth, stitch
from .patching import DatasetKind, TilingConfig, build_dataset
from .postproc import HoleMode
from .predictor import (LogisticPixelModel, PatchPredictor, TrainConfig, extract_features,
                        save_model, train)
from .preprocess import BinarizeConfig, label_filter

logger = logging.getLogger(__name__)

PredictorFor = Callable[[Sample], PatchPredictor]


class EmptyDatasetError(ValueError):
    """No patch met the area threshold."""


class DegenerateReviewWarning(UserWarning):
    """A review turned more than half of the remaining negative pixels positive."""


@dataclass(frozen=True)
class RelearnConfig:
    tiling: TilingConfig = TilingConfig(256, 64, 32)
    eval_stride: int = 16
    confidence: float = 0.7
    reviews: int = 2
    area_threshold: float = 0.5
    train: TrainConfig = TrainConfig()
    window: int = 5
    smooth_kernel: int = 11
    binarize_threshold: float = 0.5
    hole_mode: HoleMode = HoleMode.FILL
    min_hole_area: int = 0
    background: Optional[BinarizeConfig] = BinarizeConfig()
    threshold_label_source: str = "enhanced"
    degeneracy_fraction: float = 0.5
    evaluate_members: bool = True
    record_timing: bool = False
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hole_mode", HoleMode(self.hole_mode))
        check_fraction(self.confidence, "confidence", 0.5, 1.0, open_low=True, open_high=True)
        check_fraction(self.area_threshold, "area_threshold")
        check_fraction(self.binarize_threshold, "binarize_threshold", open_low=True, open_high=True)
        check_odd_kernel(self.smooth_kernel, "smooth_kernel")
        if self.reviews < 0:
            raise ValueError("reviews must be nonnegative")
        if self.threshold_label_source not in ("enhanced", "original"):
            raise ValueError("threshold_label_source must be 'enhanced' or 'original'")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        self.eval_tiling  # validates divisibility

    @property
    def eval_tiling(self) -> TilingConfig:
        return self.tiling.with_stride(self.eval_stride)

    def forecaster(self, predictor=None) -> OverlappedRegionForecaster:
        return OverlappedRegionForecaster(
            predictor, patch_size=self.tiling.s_p, stride=self.eval_stride,
            smooth_kernel=self.smooth_kernel, threshold=self.binarize_threshold,
            hole_mode=self.hole_mode.value, min_hole_area=self.min_hole_area,
            threads=self.threads,
        )


class EnsemblePredictor:
    """Pixelwise mean of member beliefs."""

    def __init__(self, members: Sequence[PatchPredictor]):
        if not members:
            raise ValueError("an ensemble needs at least one member")
        self.members = list(members)

    def predict_proba(self, patch, spec=None):
        features = {}
        beliefs = []
        for m in self.members:
            if isinstance(m, LogisticPixelModel):
                # members sharing a window share one feature computation
                if m.window not in features:
                    features[m.window] = extract_features(patch, m.window)
                beliefs.append(m.predict_proba(patch, spec, features=features[m.window]))
            else:
                beliefs.append(np.asarray(m.predict_proba(patch, spec), dtype=np.float64))
        shape = beliefs[0].shape
        if any(b.shape != shape for b in beliefs):
            raise ValueError("ensemble members disagree on output shape")
        return np.clip(np.mean(beliefs, axis=0), 0.0, 1.0)


def ensemble_predict(model_a: PatchPredictor, model_b: PatchPredictor, patch, spec=None) -> np.ndarray:
    return EnsemblePredictor([model_a, model_b]).predict_proba(patch, spec)


def merge_labels(original: np.ndarray, belief: np.ndarray, confidence: float = 0.7) -> np.ndarray:
    """Union of ``original`` with pixels whose belief is at least ``confidence``."""
    original = check_mask(original, "original")
    belief = check_belief(belief)
    check_same_shape(original, belief, "label and belief")
    return ((original == 1) | (belief >= confidence)).astype(np.uint8)


def annotate_training_set(samples: Sequence[Sample], labels: Sequence[np.ndarray],
                          predictor: Optional[PatchPredictor], config: RelearnConfig,
                          predictor_for: Optional[PredictorFor] = None) -> List[np.ndarray]:
    """Stitch, smooth and merge beliefs into each sample's current label."""
    out = []
    tiling = config.eval_tiling
    for sample, label in zip(samples, labels):
        pred = predictor_for(sample) if predictor_for is not None else predictor
        gallery = build_gallery(sample.image, tiling, pred, sample.id, threads=config.threads)
        belief = smooth(stitch(gallery), config.smooth_kernel)
        out.append(merge_labels(label, belief, config.confidence))
    return out


@dataclass
class ReviewState:
    review_index: int
    enhanced_labels: List[np.ndarray]
    predictor: PatchPredictor
    base_model: LogisticPixelModel
    model_mix: Optional[LogisticPixelModel] = None
    model_seq: Optional[LogisticPixelModel] = None
    labels_added: float = 0.0

    @property
    def ensemble(self) -> PatchPredictor:
        return self.predictor


@dataclass
class ReviewRecord:
    review: int
    report: MetricsReport
    seconds_per_image: Optional[float] = None
    members: Dict[str, MetricsReport] = field(default_factory=dict)
    labels_added: float = 0.0

    def history_row(self) -> dict:
        return {
            "review": self.review,
            "mean_precision": self.report.mean_precision,
            "mean_recall": self.report.mean_recall,
            "mean_accuracy": self.report.mean_accuracy,
            "mean_iou": self.report.mean_iou,
            "seconds_per_image": self.seconds_per_image,
        }


@dataclass
class PipelineResult:
    predictor: PatchPredictor
    report: MetricsReport
    history: List[ReviewRecord]
    states: List[ReviewState]
    predictions: Dict[str, np.ndarray]


def _datasets(samples, labels, original, config: RelearnConfig):
    filt = label_filter(config.background) if config.background is not None else None
    select = original if config.threshold_label_source == "original" else labels
    mix = build_dataset(samples, config.tiling, DatasetKind.MIX, config.area_threshold,
                        labels=labels, select_labels=select, label_filter=filt)
    seq = build_dataset(samples, config.tiling, DatasetKind.SEQUENTIAL,
                        labels=labels, label_filter=filt)
    return mix, seq


def train_base(samples: Sequence[Sample], config: RelearnConfig) -> LogisticPixelModel:
    """Patch model trained on area-thresholded windows of the original labels."""
    filt = label_filter(config.background) if config.background is not None else None
    mix = build_dataset(samples, config.tiling, DatasetKind.MIX, config.area_threshold,
                        label_filter=filt)
    if not len(mix):
        raise EmptyDatasetError(
            f"no patch reaches area threshold {config.area_threshold}; labels too sparse"
        )
    logger.info("base model: %d mix patches", len(mix))
    return train(mix, config.train, window=config.window)


def initial_state(samples: Sequence[Sample], config: RelearnConfig,
                  base_model: Optional[LogisticPixelModel] = None) -> ReviewState:
    base = base_model if base_model is not None else train_base(samples, config)
    labels = [check_mask(s.label) for s in samples]
    return ReviewState(0, labels, base, base)


def run_review(state: ReviewState, samples: Sequence[Sample], config: RelearnConfig,
               annotator: Optional[PredictorFor] = None) -> ReviewState:
    """One review: re-annotate, rebuild both datasets, fine-tune, ensemble."""
    previous = state.enhanced_labels
    enhanced = annotate_training_set(samples, previous, state.predictor, config, annotator)
    for old, new in zip(previous, enhanced):
        if np.any(old > new):
            raise AssertionError("label merge removed positives")
    negatives = sum(int((old == 0).sum()) for old in previous)
    added = sum(int((new > old).sum()) for old, new in zip(previous, enhanced))
    fraction = added / negatives if negatives else 0.0
    if fraction > config.degeneracy_fraction:
        warnings.warn(
            f"review {state.review_index + 1} labelled {fraction:.1%} of the remaining "
            "negative pixels positive; the model may be degenerate",
            DegenerateReviewWarning,
            stacklevel=2,
        )
    original = [check_mask(s.label) for s in samples]
    mix, seq = _datasets(samples, enhanced, original, config)
    if not len(mix):
        raise EmptyDatasetError(
            f"review {state.review_index + 1}: no patch reaches area threshold "
            f"{config.area_threshold}"
        )
    logger.info("review %d: %d mix / %d sequential patches, %.2f%% negatives relabelled",
                state.review_index + 1, len(mix), len(seq), 100 * fraction)
    model_mix = train(mix, config.train, init=state.model_mix or state.base_model)
    model_seq = train(seq, config.train, init=state.model_seq or state.base_model)
    return ReviewState(
        review_index=state.review_index + 1,
        enhanced_labels=enhanced,
        predictor=EnsemblePredictor([model_mix, model_seq]),
        base_model=state.base_model,
        model_mix=model_mix,
        model_seq=model_seq,
        labels_added=fraction,
    )


def _evaluate(predictor, samples: Sequence[Sample], config: RelearnConfig,
              predictor_for: Optional[PredictorFor] = None):
    fc = config.forecaster(predictor)
    preds = {}
    start = time.perf_counter()
    for s in samples:
        preds[s.id] = fc.predict(s.image, predictor_for(s) if predictor_for else None)
    elapsed = time.perf_counter() - start
    truths = {s.id: s.truth for s in samples}
    report = evaluate([s.id for s in samples], truths, preds)
    return report, preds, elapsed / max(len(samples), 1)


def run_pipeline(train_samples: Sequence[Sample], eval_samples: Sequence[Sample],
                 config: RelearnConfig = RelearnConfig(), *,
                 base_model: Optional[LogisticPixelModel] = None,
                 annotator: Optional[PredictorFor] = None,
                 eval_predictor_for: Optional[PredictorFor] = None,
                 out_dir=None) -> PipelineResult:
    """Train the base model, run ``config.reviews`` reviews, score each stage.

    ``annotator`` and ``eval_predictor_for`` substitute per-sample predictors
    for label annotation and evaluation respectively (test injection).
    """
    if any(s.truth is None for s in eval_samples):
        raise ValueError("evaluation samples need ground truth")
    state = initial_state(train_samples, config, base_model)
    states = [state]

    def record(st: ReviewState) -> ReviewRecord:
        report, preds, spi = _evaluate(st.predictor, eval_samples, config, eval_predictor_for)
        members = {}
        if config.evaluate_members and st.model_mix is not None:
            members["mix"] = _evaluate(st.model_mix, eval_samples, config)[0]
            members["seq"] = _evaluate(st.model_seq, eval_samples, config)[0]
        rec = ReviewRecord(st.review_index, report,
                           spi if config.record_timing else None, members, st.labels_added)
        logger.info("review %d: mean IOU %.4f", st.review_index, report.mean_iou)
        return rec, preds

    rec, preds = record(state)
    history = [rec]
    if out_dir is not None:
        _write_review(Path(out_dir), state, train_samples, rec)
    for _ in range(config.reviews):
        state = run_review(state, train_samples, config, annotator)
        states.append(state)
        rec, preds = record(state)
        history.append(rec)
        if out_dir is not None:
            _write_review(Path(out_dir), state, train_samples, rec)
    result = PipelineResult(state.predictor, history[-1].report, history, states, preds)
    if out_dir is not None:
        write_outputs(result, Path(out_dir))
    return result


def _write_review(out: Path, state: ReviewState, samples: Sequence[Sample], rec: ReviewRecord) -> None:
    d = out / f"review_{state.review_index}"
    d.mkdir(parents=True, exist_ok=True)
    if state.review_index == 0:
        save_model(state.base_model, d / "model.lpm")
        return
    save_model(state.model_mix, d / "model_mix.lpm")
    save_model(state.model_seq, d / "model_seq.lpm")
    (d / "labels").mkdir(exist_ok=True)
    for s, lab in zip(samples, state.enhanced_labels):
        save_mask(lab, d / "labels" / f"{s.id}.png")
    if rec.members:
        members = {k: {"mean_precision": r.mean_precision, "mean_recall": r.mean_recall,
                       "mean_accuracy": r.mean_accuracy, "mean_iou": r.mean_iou}
                   for k, r in rec.members.items()}
        (d / "members.json").write_text(json.dumps(members, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")


def history_json(history: Sequence[ReviewRecord]) -> str:
    return json.dumps([h.history_row() for h in history], indent=2, sort_keys=True) + "\n"


def write_outputs(result: PipelineResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.json").write_text(history_json(result.history), encoding="utf-8")
    result.report.to_json(out / "report.json")
    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    for sid, mask in result.predictions.items():
        save_mask(mask, pred_dir / f"{sid}.png")


def split_holdout(samples: Sequence[Sample], every: int = 4):
    """Every ``every``-th sample (positions 0, every, 2*every, ...) is held out."""
    if every < 2:
        raise ValueError("every must be >= 2")
    held = [s for i, s in enumerate(samples) if i % every == 0]
    kept = [s for i, s in enumerate(samples) if i % every != 0]
    return kept, held


class ReiterativeLearner(BaseEstimator):
    """Estimator wrapper over :func:`run_pipeline`.

    ``fit`` takes training samples (image + partial label) and optional
    evaluation samples with ground truth; ``predict`` segments a whole image
    with the final ensemble.
    """

    def __init__(self, patch_size=64, stride=32, eval_stride=16, confidence=0.7, reviews=2,
                 area_threshold=0.5, smooth_kernel=11, binarize_threshold=0.5, hole_mode="fill",
                 learning_rate=0.1, epochs=20, minibatch=4096, seed=0, l2=1e-4, window=5,
                 threads=1):
        self.patch_size = patch_size
        self.stride = stride
        self.eval_stride = eval_stride
        self.confidence = confidence
        self.reviews = reviews
        self.area_threshold = area_threshold
        self.smooth_kernel = smooth_kernel
        self.binarize_threshold = binarize_threshold
        self.hole_mode = hole_mode
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.minibatch = minibatch
        self.seed = seed
        self.l2 = l2
        self.window = window
        self.threads = threads

    def make_config(self, image_size: int) -> RelearnConfig:
        return RelearnConfig(
            tiling=TilingConfig(image_size, self.patch_size, self.stride),
            eval_stride=self.eval_stride, confidence=self.confidence, reviews=self.reviews,
            area_threshold=self.area_threshold,
            train=TrainConfig(self.learning_rate, self.epochs, self.minibatch, self.seed, self.l2),
            window=self.window, smooth_kernel=self.smooth_kernel,
            binarize_threshold=self.binarize_threshold, hole_mode=self.hole_mode,
            threads=self.threads,
        )

    def fit(self, samples: Sequence[Sample], eval_samples: Optional[Sequence[Sample]] = None):
        if not samples:
            raise ValueError("no training samples")
        self.config_ = self.make_config(samples[0].image.shape[0])
        if eval_samples is None:
            eval_samples = [s for s in samples if s.truth is not None]
            config = self.config_ if eval_samples else replace(self.config_, evaluate_members=False)
        else:
            config = self.config_
        if not eval_samples:
            state = initial_state(samples, config)
            for _ in range(config.reviews):
                state = run_review(state, samples, config)
            self.predictor_, self.history_ = state.predictor, []
            return self
        result = run_pipeline(samples, eval_samples, config)
        self.predictor_ = result.predictor
        self.history_ = result.history
        return self

    def predict_proba(self, image: np.ndarray) -> np.ndarray:
        return self.config_.forecaster(self.predictor_).predict_proba(image)

    def predict(self, image: np.ndarray) -> np.ndarray:
        return self.config_.forecaster(self.predictor_).predict(image)
