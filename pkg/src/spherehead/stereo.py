"""Stereographic projection of Euclidean points onto the unit hypersphere.

A point x in R^n maps to the sphere S^n in R^(n+1) by drawing the line
through x (embedded in the equatorial plane) and the north pole
e_{n+1} = (0, ..., 0, 1); the image is where that line re-crosses the
sphere. Closed form, with z the signed height of the image:

    z       = (|x|^2 - 1) / (|x|^2 + 1)
    phi(x)  = (2 x_1 / (|x|^2 + 1), ..., 2 x_n / (|x|^2 + 1), z)

The map is a bijection onto the sphere minus the pole itself, fixes the
unit shell (|x| = 1 lands on the equator), and sends the origin to the
south pole. :func:`project_batch` is the same arithmetic on the gradient
tape so projected features can sit inside a trained model.

All functions are pure; nothing here holds state.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, PoleSingularityError, ShapeError
from .ndcore import Tensor, concat, expand_cols

__all__ = [
    "EuclideanPoint",
    "SpherePoint",
    "scale_factor",
    "project",
    "project_batch",
    "inverse_project",
    "check_ball_convexity",
    "hemisphere_map",
    "POLE_EPS",
    "UNIT_TOL",
]

# inverse_project refuses points this close to the pole; the inverse blows
# up as 1/(1 - p_last) and nothing in the pipeline ever needs it there
POLE_EPS = 1e-9

# how far |coords|^2 may drift from 1 before a vector is not a sphere point
UNIT_TOL = 1e-12


def _sqnorm(arr: np.ndarray) -> float:
    with np.errstate(over="ignore"):
        return float(arr @ arr)


def _vector(coords, name: str) -> np.ndarray:
    arr = np.asarray(coords, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ShapeError(f"{name} needs at least one coordinate")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


class EuclideanPoint:
    """A finite point in R^n, the domain of the projection."""

    __slots__ = ("coords",)

    def __init__(self, coords):
        self.coords = _vector(coords, "EuclideanPoint")

    @property
    def dim(self) -> int:
        return self.coords.size

    def __repr__(self) -> str:
        return f"EuclideanPoint({self.coords.tolist()})"


class SpherePoint:
    """A point on the unit sphere S^n in R^(n+1).

    Construction validates squared norm within ``UNIT_TOL`` of 1 and, by
    default, that the coordinates are not exactly the north pole: the
    projection image is the punctured sphere. Hemisphere lifts cover the
    whole sphere, pole included, so they construct with
    ``allow_pole=True``.
    """

    __slots__ = ("coords",)

    def __init__(self, coords, allow_pole: bool = False):
        arr = _vector(coords, "SpherePoint")
        if arr.size < 2:
            raise ShapeError("SpherePoint needs at least two coordinates")
        sq = _sqnorm(arr)
        if abs(sq - 1.0) > UNIT_TOL:
            raise DomainError(f"not on the unit sphere: |coords|^2 = {sq!r}")
        if not allow_pole and arr[-1] == 1.0 and not np.any(arr[:-1]):
            raise PoleSingularityError("the north pole is excluded from the sphere image")
        self.coords = arr

    @property
    def dim(self) -> int:
        return self.coords.size

    def __repr__(self) -> str:
        return f"SpherePoint({self.coords.tolist()})"


def _euclidean_coords(x) -> np.ndarray:
    if isinstance(x, EuclideanPoint):
        return x.coords
    return _vector(x, "EuclideanPoint")


def scale_factor(x) -> float:
    """Signed height z of the projected image of ``x``.

    z = (|x|^2 - 1)/(|x|^2 + 1), always in [-1, 1): -1 at the origin,
    0 on the unit shell, approaching 1 as |x| grows.
    """
    coords = _euclidean_coords(x)
    sq = _sqnorm(coords)
    if not np.isfinite(sq):
        raise DomainError("squared norm overflows float64")
    return (sq - 1.0) / (sq + 1.0)


def project(x) -> SpherePoint:
    """Map a Euclidean point onto the unit sphere one dimension up.

    Same arithmetic as :func:`project_batch` on a single row: squared
    norm first, then the scaled copy of x, then the appended height.
    """
    coords = _euclidean_coords(x)
    sq = _sqnorm(coords)
    if not np.isfinite(sq):
        raise DomainError("squared norm overflows float64")
    a = 2.0 * coords / (sq + 1.0)
    b = (sq - 1.0) / (sq + 1.0)
    return SpherePoint(np.concatenate([a, [b]]))


def project_batch(X: Tensor) -> Tensor:
    """Row-wise projection on the gradient tape: [B, n] -> [B, n+1].

    norm  = sum(X * X, axis=1)            squared norms, one per row
    a     = 2 X / (norm + 1)              scaled copies of the rows
    b     = (norm - 1) / (norm + 1)       the new last coordinate
    out   = concat(a, b) along columns
    """
    if not isinstance(X, Tensor):
        X = Tensor(X)
    if X.ndim != 2:
        raise ShapeError(f"project_batch needs a [B, n] tensor, got shape {X.shape}")
    if not np.all(np.isfinite(X.data)):
        raise DomainError("project_batch input has non-finite entries")
    n = X.shape[1]
    norm = (X * X).sum(axis=1, keepdims=True)  # [B, 1]
    if not np.all(np.isfinite(norm.data)):
        raise DomainError("squared norm overflows float64")
    denom = norm + 1.0
    a = (X * 2.0) / expand_cols(denom, n)
    b = (norm - 1.0) / denom
    return concat([a, b], axis=1)


def inverse_project(p) -> EuclideanPoint:
    """Undo the projection: (p_1, ..., p_n, p_last) -> p_i / (1 - p_last).

    Refuses points off the sphere (more than 1e-9 from unit norm, a
    looser gate than the SpherePoint invariant so round-tripped floats
    pass) and points within ``POLE_EPS`` of the pole, where the division
    is meaningless or explosive.
    """
    if isinstance(p, SpherePoint):
        coords = p.coords
    else:
        coords = _vector(p, "SpherePoint")
        if coords.size < 2:
            raise ShapeError("SpherePoint needs at least two coordinates")
        sq = _sqnorm(coords)
        if abs(sq - 1.0) > 1e-9:
            raise DomainError(f"not on the unit sphere: |coords|^2 = {sq!r}")
    last = coords[-1]
    if last >= 1.0 - POLE_EPS:
        raise PoleSingularityError(f"cannot invert within {POLE_EPS:g} of the north pole (last = {last!r})")
    return EuclideanPoint(coords[:-1] / (1.0 - last))


def check_ball_convexity(sampler_seed: int, trials: int, dims=(2, 3, 16)) -> dict:
    """Sample segments between points of the closed unit ball and count escapes.

    Draws x, y with norm at most 1 and a mixing weight in [0, 1], then
    checks the combination stays inside the ball. The count of cases with
    norm exceeding 1 + 1e-12 comes back in the report; the ball is convex,
    so the expected count is zero. Trials are split evenly across ``dims``.
    """
    if trials < 1:
        raise DomainError("trials must be at least 1")
    rng = np.random.default_rng(sampler_seed)
    dims = tuple(int(d) for d in dims)
    violations = 0
    worst = 0.0
    per_dim = [trials // len(dims)] * len(dims)
    per_dim[-1] += trials - sum(per_dim)
    for dim, count in zip(dims, per_dim):
        if count == 0:
            continue
        # directions from an isotropic Gaussian, radii warped to be
        # uniform over the ball's volume
        def ball(k: int) -> np.ndarray:
            raw = rng.normal(size=(k, dim))
            unit = raw / np.linalg.norm(raw, axis=1, keepdims=True)
            radii = rng.uniform(size=(k, 1)) ** (1.0 / dim)
            return unit * radii

        x, y = ball(count), ball(count)
        alpha = rng.uniform(size=(count, 1))
        mixed = alpha * x + (1.0 - alpha) * y
        norms = np.linalg.norm(mixed, axis=1)
        violations += int(np.sum(norms > 1.0 + 1e-12))
        worst = max(worst, float(np.max(norms)))
    return {"violations": violations, "trials": trials, "dims": list(dims), "max_norm": worst}


def hemisphere_map(v, sign: str) -> SpherePoint:
    """Lift a closed-ball point onto the upper or lower hemisphere.

    Appends +sqrt(1 - |v|^2) for sign "+" and the negative root for
    sign "-"; both signs agree on the shared equator |v| = 1. The radical
    is clamped at zero because |v| = 1 can put a tiny negative value
    under it.
    """
    if sign not in ("+", "-"):
        raise DomainError(f'hemisphere sign must be "+" or "-", got {sign!r}')
    coords = _euclidean_coords(v)
    sq = _sqnorm(coords)
    if sq > 1.0 + 1e-12:
        raise DomainError(f"hemisphere_map needs |v| <= 1, got |v|^2 = {sq!r}")
    height = np.sqrt(max(0.0, 1.0 - sq))
    if sign == "-":
        height = -height
    out = np.concatenate([coords, [height]])
    # a shell point with |v|^2 = 1 + 8e-13 passes the tolerance gate but
    # misses the sphere; renormalize the sliver so the result is valid
    sq_out = _sqnorm(out)
    if abs(sq_out - 1.0) > UNIT_TOL:
        out = out / np.sqrt(sq_out)
    # the upper hemisphere legitimately contains the pole (v = 0, sign +)
    return SpherePoint(out, allow_pole=True)
