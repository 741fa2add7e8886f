"""Uncertainty and clean-up metrics.

Depth error, two-way sparsification curves with the area between them,
PSNR, thresholding coverage, a seed-ensemble depth-deviation baseline, and
Spearman rank correlation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, ValidationError


def depth_error(predicted, reference, mask=None):
    """Per-pixel |predicted - reference| where mask is true, 0 elsewhere."""
    predicted = np.asarray(predicted, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if predicted.shape != reference.shape:
        raise ValidationError("depth planes must share a shape")
    err = np.abs(predicted - reference)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != predicted.shape:
            raise ValidationError("mask must match the depth planes")
        err = np.where(mask, err, 0.0)
    return err


@dataclass(eq=False)
class SparsificationResult:
    """Error-vs-removed-fraction curves and the area between them.

    Both curves are normalized by the error at fraction zero before the area
    is averaged; fractions where nothing survives contribute zero to both.
    """

    fractions: np.ndarray
    by_score: np.ndarray
    by_error: np.ndarray
    ause: float


def _removal_curve(errors, order, fractions):
    n = errors.shape[0]
    # survivor means after removing the first k elements of `order`
    removed_sums = np.concatenate([[0.0], np.cumsum(errors[order])])
    total = removed_sums[-1]
    curve = np.empty(len(fractions))
    for i, f in enumerate(fractions):
        k = int(np.floor(f * n + 0.5))
        k = min(k, n)
        curve[i] = (total - removed_sums[k]) / (n - k) if k < n else 0.0
    return curve


def sparsification(errors, scores, step=0.01) -> SparsificationResult:
    """Remove pixels by descending score and, separately, by descending error.

    At each grid fraction the mean absolute error of the survivors is
    recorded; ties are removed in ascending index order. The returned area is
    the mean normalized gap between the score-ordered and error-ordered
    curves.
    """
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if errors.size == 0:
        raise ValidationError("empty input")
    if errors.shape != scores.shape or errors.size < 2:
        raise ValidationError("errors and scores must be equal-length, size >= 2")
    if not (0.0 < step <= 0.5):
        raise DomainError("step must lie in (0, 0.5]")

    n_steps = int(np.floor(1.0 / step + 1e-9))
    fractions = np.arange(n_steps + 1) * step
    order_score = np.argsort(-scores, kind="stable")
    order_error = np.argsort(-errors, kind="stable")
    by_score = _removal_curve(errors, order_score, fractions)
    by_error = _removal_curve(errors, order_error, fractions)

    base = by_score[0]
    if base > 0.0:
        ause = float(np.mean(by_score / base - by_error / base))
    else:
        ause = 0.0
    return SparsificationResult(fractions, by_score, by_error, ause)


def psnr(image, reference):
    """Peak signal-to-noise ratio in dB for [0,1] images, capped at 99."""
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if image.shape != reference.shape:
        raise ValidationError("images must share a shape")
    for arr in (image, reference):
        if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
            raise DomainError("image values must lie in [0,1]")
    mse = float(np.mean((image - reference) ** 2))
    if mse <= 0.0:
        return 99.0
    return min(99.0, 10.0 * np.log10(1.0 / mse))


def coverage(channel_image) -> float:
    """Fraction of pixels that survived uncertainty thresholding."""
    if channel_image.coverage is None:
        raise ValidationError("channel image carries no coverage mask")
    return float(np.mean(channel_image.coverage))


@dataclass(eq=False)
class EnsembleResult:
    """Per-pixel depth spread over differently seeded retrainings."""

    depth_std: np.ndarray
    k: int
    seeds: tuple


def ensemble_uncertainty(images, cameras, init, base_config, eval_camera,
                         k=5, seeds=None, render_options=None,
                         init_noise=0.5) -> EnsembleResult:
    """Train k fields differing only in seed; return per-pixel depth std.

    Each member's seed drives both its batch sampling and a Gaussian
    perturbation of the initial raw grids (scale `init_noise`), the usual
    source of ensemble diversity. The spread is the population standard
    deviation (divide by k) of the depth renders from `eval_camera`.
    """
    from . import field_core, renderer

    if k < 2:
        raise ValidationError("an ensemble needs k >= 2")
    if seeds is None:
        seeds = tuple(base_config.seed + i for i in range(k))
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) != k:
        raise ValidationError("need exactly k seeds")
    options = render_options or renderer.RenderOptions()
    depths = []
    for seed in seeds:
        member_init = init
        if init_noise > 0.0:
            rng = np.random.default_rng(seed)
            member_init = field_core.VoxelField(
                init.bounds,
                init.raw_density + rng.normal(0, init_noise, init.raw_density.shape).astype(np.float32),
                init.raw_color + rng.normal(0, init_noise, init.raw_color.shape).astype(np.float32))
        trained = field_core.fit_field(images, cameras, member_init, replace(base_config, seed=seed))
        depths.append(renderer.render_channels(trained, eval_camera, options).depth)
    std = np.std(np.stack(depths), axis=0, ddof=0)
    return EnsembleResult(std, k, seeds)


def _average_ranks(values):
    order = np.argsort(values, kind="stable")
    pos = np.empty(values.shape[0])
    pos[order] = np.arange(1, values.shape[0] + 1, dtype=np.float64)
    _, inverse = np.unique(values, return_inverse=True)
    sums = np.bincount(inverse, weights=pos)
    counts = np.bincount(inverse)
    return (sums / counts)[inverse]


def rank_correlation(a, b):
    """Spearman rho with average-rank ties; None when either input is constant."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size < 3:
        raise ValidationError("need equal-length inputs of size >= 3")
    ra, rb = _average_ranks(a), _average_ranks(b)
    sa, sb = np.std(ra), np.std(rb)
    if sa == 0.0 or sb == 0.0:
        return None
    return float(np.mean((ra - ra.mean()) * (rb - rb.mean())) / (sa * sb))


def write_report(metrics: dict, json_path, text_path=None):
    """Emit metrics as JSON and as a flat key=value text report."""
    def _plain(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        return v

    plain = {k: _plain(v) for k, v in metrics.items()}
    with open(json_path, "w") as f:
        json.dump(plain, f, indent=2, sort_keys=True)
        f.write("\n")
    if text_path is not None:
        with open(text_path, "w") as f:
            for key in sorted(plain):
                value = plain[key]
                if isinstance(value, list):
                    value = " ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in value)
                f.write(f"{key}={value}\n")
