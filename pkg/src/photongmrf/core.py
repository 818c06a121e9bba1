"""Shared data model: frame stacks, masks, efficiency maps and GMRF index geometry.

Frame stacks are plain numpy arrays of shape ``(frames, rows, cols)`` in C
order, so the flat layout is row-major within a frame with frames outermost.
Grid indices exposed to users are 1-based ``(i, j, t)`` triples.

The spatial auxiliary grid nominally has ``(rows + 1) x (cols + 1)`` sites per
frame. With cyclic spatial boundaries the ghost row/column coincide with row/
column 1, so only ``rows x cols`` U sites are stored per frame.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

X_FLOOR = 1e-6
GAMMA_MIN = 1e-3


class DataValidationError(ValueError):
    """Input data violates a documented invariant (shape, binarity, sign)."""


class NumericalError(ArithmeticError):
    """A computation produced a numerically unusable result."""


@dataclass(frozen=True)
class Geometry:
    """Index geometry of the tripartite X/U/W graph."""

    rows: int
    cols: int
    frames: int = 1

    def __post_init__(self):
        for name in ("rows", "cols", "frames"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @classmethod
    def of(cls, stack: np.ndarray) -> "Geometry":
        t, r, c = np.shape(stack)
        return cls(int(r), int(c), int(t))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.frames, self.rows, self.cols)

    @property
    def size(self) -> int:
        return self.rows * self.cols * self.frames

    def check(self, idx) -> tuple[int, int, int]:
        i, j, t = (int(v) for v in idx)
        if not (1 <= i <= self.rows and 1 <= j <= self.cols and 1 <= t <= self.frames):
            raise IndexError(f"index {(i, j, t)} outside grid {self.rows}x{self.cols}x{self.frames}")
        return i, j, t

    def wrap(self, i: int, j: int) -> tuple[int, int]:
        """Cyclic spatial wrap of 1-based (possibly out-of-range) coordinates."""
        return (i - 1) % self.rows + 1, (j - 1) % self.cols + 1

    def flat(self, idx) -> int:
        i, j, t = self.check(idx)
        return ((t - 1) * self.rows + (i - 1)) * self.cols + (j - 1)

    def unflat(self, offset: int) -> tuple[int, int, int]:
        if not 0 <= offset < self.size:
            raise IndexError(f"flat offset {offset} outside [0, {self.size})")
        t, rem = divmod(int(offset), self.rows * self.cols)
        i, j = divmod(rem, self.cols)
        return i + 1, j + 1, t + 1


def neighbors_u_of_x(idx, geometry: Geometry) -> list[tuple[int, int, int]]:
    """The four U sites attached to X site ``idx``.

    Returns ``(i,j,t), (i-1,j,t), (i,j-1,t), (i-1,j-1,t)`` after cyclic
    wrapping. On degenerate grids (one row or column) entries repeat.
    """
    i, j, t = geometry.check(idx)
    out = []
    for di, dj in ((0, 0), (-1, 0), (0, -1), (-1, -1)):
        out.append((*geometry.wrap(i + di, j + dj), t))
    return out


def neighbors_w_of_x(idx, geometry: Geometry) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    """The two W sites ``(i,j,t)`` and ``(i,j,t+1)``; W frames run 1..T+1."""
    i, j, t = geometry.check(idx)
    return (i, j, t), (i, j, t + 1)


def as_stack(data, dtype=float) -> np.ndarray:
    """Coerce 2D or 3D input to a ``(frames, rows, cols)`` array."""
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise DataValidationError(f"expected a (frames, rows, cols) stack, got shape {arr.shape}")
    return arr


def first_offending_site(bad: np.ndarray) -> tuple[int, int, int]:
    t, i, j = np.argwhere(bad)[0]
    return int(i) + 1, int(j) + 1, int(t) + 1


def check_intensity(x) -> np.ndarray:
    x = as_stack(x)
    bad = ~(np.isfinite(x) & (x > 0))
    if bad.any():
        raise DataValidationError(f"intensity must be finite and > 0; first offending site {first_offending_site(bad)}")
    return x


def check_observation(y, kind: str) -> np.ndarray:
    """Validate counts for ``kind`` in {'poisson', 'bernoulli'}."""
    y = as_stack(y)
    if kind == "bernoulli":
        bad = (y != 0) & (y != 1)
        what = "binary"
    elif kind == "poisson":
        bad = ~np.isfinite(y) | (y < 0) | (y != np.round(y))
        what = "nonnegative integer"
    else:
        raise ValueError(f"unknown observation model {kind!r}")
    if bad.any():
        raise DataValidationError(f"{kind} observations must be {what}; first offending site {first_offending_site(bad)}")
    return y


def check_mask(h, shape=None) -> np.ndarray:
    """Validate a binary mask (1 = valid, 0 = faulty/missing).

    The sampler accepts any fraction of zeros but the prior is meant to bridge
    sparse faults; a warning is raised above 10% missing.
    """
    h = as_stack(h)
    bad = (h != 0) & (h != 1)
    if bad.any():
        raise DataValidationError(f"mask entries must be 0 or 1; first offending site {first_offending_site(bad)}")
    if shape is not None and h.shape != tuple(shape):
        raise DataValidationError(f"mask shape {h.shape} does not match data shape {tuple(shape)}")
    if missing_fraction(h) > 0.1:
        warnings.warn(f"{100 * missing_fraction(h):.1f}% of pixels are masked; the prior is designed for sparse faults")
    return h.astype(bool)


def missing_fraction(h) -> float:
    h = np.asarray(h)
    return float(np.mean(h == 0))


def check_eta(eta, rows: int, cols: int) -> np.ndarray:
    """Efficiency map of shape (rows, cols); ``None`` means unit efficiency.

    A stack with identical frames is accepted and collapsed.
    """
    if eta is None:
        return np.ones((rows, cols))
    eta = np.asarray(eta, dtype=float)
    if eta.ndim == 3:
        if not np.all(eta == eta[:1]):
            raise DataValidationError("efficiency map must be constant across frames")
        eta = eta[0]
    if eta.shape != (rows, cols):
        raise DataValidationError(f"efficiency map shape {eta.shape} does not match ({rows}, {cols})")
    bad = ~(np.isfinite(eta) & (eta > 0))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DataValidationError(f"efficiency must be > 0; first offending site {(int(i) + 1, int(j) + 1)}")
    return eta


def temporal_boundary_value(y, h=None) -> float:
    """Ghost intensity at t = 0 and t = T+1: mean of valid observations.

    Clamped below at ``GAMMA_MIN`` so the boundary W conditionals keep a
    positive scale when the data are all dark.
    """
    y = as_stack(y)
    valid = np.ones(y.shape, bool) if h is None else as_stack(h).astype(bool)
    if not valid.any():
        raise DataValidationError("every pixel is masked; the boundary value is undefined")
    return max(float(y[valid].mean()), GAMMA_MIN)
