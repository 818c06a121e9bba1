"""Reconstruction metrics, synthetic scenes and experiment drivers."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .core import as_stack
from .distributions import RngStream
from .observation import ObservationModel, detection_probability, scale_to_target, simulate
from .sampler import SamplerConfig, run_chain

# average intensities of the synthetic sweep
SWEEP_TARGETS = (0.025, 0.05, 0.1, 0.5, 0.8, 1.0)

STREAM_SCENE = 201

PIECEWISE_LEVELS = (0.9, 0.25, 0.6, 0.1, 1.0, 0.4, 0.15, 0.75)
SMOOTH_AMPLITUDE = 0.8
SMOOTH_MAX_WAVENUMBER = 2
MOVING_VELOCITY = 1


@dataclass(frozen=True)
class FrameMetrics:
    nmse: np.ndarray
    nse_std: np.ndarray
    detection_rate: np.ndarray | None = None


def _frames(x_true, x_hat):
    x_true = as_stack(x_true)
    x_hat = as_stack(x_hat)
    if x_true.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: truth {x_true.shape} vs estimate {x_hat.shape}")
    power = np.sum(x_true**2, axis=(1, 2))
    if np.any(power == 0):
        raise ValueError("a ground-truth frame is identically zero; NMSE is undefined")
    return x_true, x_hat, power


def _pick(values, t):
    return values if t is None else float(values[t - 1])


def nmse(x_true, x_hat, t: int | None = None):
    """Per-frame squared error normalized by the true frame's energy.

    ``t`` is a 1-based frame index; ``None`` returns every frame.
    """
    x_true, x_hat, power = _frames(x_true, x_hat)
    return _pick(np.sum((x_true - x_hat) ** 2, axis=(1, 2)) / power, t)


def nse_std(x_true, x_hat, t: int | None = None):
    """Population standard deviation over pixels of the normalized squared error."""
    x_true, x_hat, power = _frames(x_true, x_hat)
    n = x_true.shape[1] * x_true.shape[2]
    nse = (x_true - x_hat) ** 2 / (power / n)[:, None, None]
    return _pick(np.std(nse, axis=(1, 2)), t)


def frame_metrics(x_true, x_hat, y=None) -> FrameMetrics:
    rate = None if y is None else as_stack(y).mean(axis=(1, 2))
    return FrameMetrics(nmse(x_true, x_hat), nse_std(x_true, x_hat), rate)


def detection_table(x, eta=None, n_reps: int = 20, seed: int = 0, targets=SWEEP_TARGETS) -> list[dict]:
    """Mean observed counts under both detector models across the sweep.

    For each target intensity the scene is rescaled, ``n_reps`` Poisson and
    Bernoulli datasets are simulated, and the average count is reported next
    to the Bernoulli expectation ``mean(1 - exp(-eta x))``.
    """
    x = as_stack(x)
    rows = []
    for ti, target in enumerate(targets):
        xs = scale_to_target(x, target)
        pois = ObservationModel("poisson", eta)
        bern = ObservationModel("bernoulli", eta)
        mp = np.mean([simulate(pois, xs, seed=_rep_seed(seed, ti, r, 0)).mean() for r in range(n_reps)])
        mb = np.mean([simulate(bern, xs, seed=_rep_seed(seed, ti, r, 1)).mean() for r in range(n_reps)])
        e = 1.0 if eta is None else np.asarray(eta)
        rows.append({
            "target": target,
            "poisson": float(mp),
            "bernoulli": float(mb),
            "bernoulli_expected": float(np.mean(detection_probability(e, xs))),
        })
    return rows


def _rep_seed(seed, *ids):
    return int(np.random.SeedSequence([seed, *ids]).generate_state(1, np.uint64)[0])


def integrate_and_threshold(y, group_size: int) -> np.ndarray:
    """Sum non-overlapping groups of frames, then keep detection/no detection.

    A trailing partial group is dropped with a warning.
    """
    if group_size < 1:
        raise ValueError("group size must be >= 1")
    y = as_stack(y)
    n = y.shape[0] // group_size
    if n == 0:
        raise ValueError(f"fewer frames ({y.shape[0]}) than the group size ({group_size})")
    if y.shape[0] % group_size:
        warnings.warn(f"dropping {y.shape[0] % group_size} trailing frames that do not fill a group")
    counts = y[: n * group_size].reshape((n, group_size) + y.shape[1:]).sum(axis=1)
    return np.minimum(counts, 1).astype(np.int64)


# -- scenes -------------------------------------------------------------------

def smooth_gradient_bound(rows: int, cols: int) -> float:
    """Upper bound on |x[i+1] - x[i]| (either axis) for the smooth scene."""
    return SMOOTH_AMPLITUDE * 2 * np.pi * SMOOTH_MAX_WAVENUMBER / min(rows, cols)


def make_scene(kind: str, rows: int, cols: int, frames: int = 1, seed: int = 0) -> np.ndarray:
    """Synthetic, strictly positive intensity fields.

    ``piecewise``: concentric rings over 8 levels. ``smooth``: mixture of four
    low-frequency cyclic cosines. ``moving``: Gaussian blob on a flat
    background shifted one column per frame (cyclic).
    """
    if min(rows, cols, frames) < 1:
        raise ValueError("scene dimensions must be positive")
    rng = RngStream(seed).generator(0, STREAM_SCENE)
    ii, jj = np.mgrid[0:rows, 0:cols].astype(float)
    if kind == "piecewise":
        ci, cj = (rows - 1) / 2 + rng.uniform(-1, 1), (cols - 1) / 2 + rng.uniform(-1, 1)
        r = np.hypot(ii - ci, jj - cj)
        width = max(min(rows, cols) / 12, 1.0)
        levels = np.asarray(PIECEWISE_LEVELS)
        img = levels[(r // width).astype(int) % len(levels)]
        return np.repeat(img[None], frames, axis=0)
    if kind == "smooth":
        img = np.zeros((rows, cols))
        total = 0.0
        for _ in range(4):
            ki, kj = 0, 0
            while ki == 0 and kj == 0:
                ki, kj = rng.integers(0, SMOOTH_MAX_WAVENUMBER + 1, size=2)
            amp = rng.uniform(0.5, 1.0)
            img += amp * np.cos(2 * np.pi * (ki * ii / rows + kj * jj / cols) + rng.uniform(0, 2 * np.pi))
            total += amp
        img = 1 + SMOOTH_AMPLITUDE * img / total
        return np.repeat(img[None], frames, axis=0)
    if kind == "moving":
        sigma = max(min(rows, cols) / 6, 1.0)
        c0 = rng.uniform(0, cols)
        dj = (jj - c0 + cols / 2) % cols - cols / 2
        img = 0.2 + np.exp(-((ii - (rows - 1) / 2) ** 2 + dj**2) / (2 * sigma**2))
        return np.stack([np.roll(img, MOVING_VELOCITY * t, axis=1) for t in range(frames)])
    raise ValueError(f"unknown scene kind {kind!r}")


# -- replicate experiments ------------------------------------------------------

def run_replicates(x_true, data_kind: str, fit_kind: str, config: SamplerConfig, n_reps: int = 20,
                   seed: int = 0, eta=None, mask=None, frames=None) -> dict:
    """Simulate ``n_reps`` datasets under ``data_kind``, denoise with ``fit_kind``.

    Returns the per-replicate NMSE (averaged over ``frames``, 1-based, or all
    frames), their mean and standard deviation, and the mean detection rate.
    """
    x_true = as_stack(x_true)
    sel = slice(None) if frames is None else np.asarray(frames) - 1
    scores, rates = [], []
    for r in range(n_reps):
        y = simulate(ObservationModel(data_kind, eta, mask), x_true, seed=_rep_seed(seed, r, 7))
        cfg = replace(config, model=fit_kind, seed=_rep_seed(seed, r, 11))
        if fit_kind == "bernoulli":
            y = np.minimum(y, 1)
        summary = run_chain(y, ObservationModel(fit_kind, eta, mask), cfg)
        valid = np.ones(x_true.shape, bool) if mask is None else np.asarray(mask, bool)
        scores.append(float(np.mean(masked_nmse(x_true, summary.x_mmse, valid)[sel])))
        rates.append(float(y[valid].mean()))
    scores = np.asarray(scores)
    return {"nmse": scores, "mean": float(scores.mean()), "std": float(scores.std()), "detection_rate": float(np.mean(rates))}


def masked_nmse(x_true, x_hat, valid) -> np.ndarray:
    """Per-frame NMSE restricted to valid pixels."""
    x_true, x_hat, _ = _frames(x_true, x_hat)
    v = as_stack(valid).astype(bool)
    num = np.sum(np.where(v, (x_true - x_hat) ** 2, 0), axis=(1, 2))
    den = np.sum(np.where(v, x_true**2, 0), axis=(1, 2))
    return num / den
