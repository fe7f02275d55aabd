"""
Factorized voxel map geometry.

An object's shape arrives as 12 rank-1 factors. Each factor is a triplet of
32-vectors (x, y, z) whose triple outer product V[i, j, k] = x[i] * y[j] * z[k]
is a 32x32x32 occupancy volume. Summing the 12 factor volumes recovers the
object's voxel map.

The grounding network never decodes volumes: it consumes the factors directly
as 96-wide tokens ([x; y; z]). Decoding, binarizing and IoU exist to inspect
imported reconstructions.

Factor order is preserved everywhere but carries no meaning.
"""

from dataclasses import dataclass
from typing import Iterable

import numpy as np


FACTOR_COUNT = 12          # rank-1 parts per object
FACTOR_LENGTH = 32         # grid resolution along each axis
TOKEN_WIDTH = 3 * FACTOR_LENGTH
GRID_SHAPE = (FACTOR_LENGTH, FACTOR_LENGTH, FACTOR_LENGTH)
DEFAULT_THRESHOLD = 0.5


class FactorValidationError(ValueError):
    """Raised when factors, grids or thresholds violate their shape or value rules."""


def _as_vector(values, name: str) -> np.ndarray:
    vector = np.asarray(values, dtype=np.float64)
    if vector.shape != (FACTOR_LENGTH,):
        raise FactorValidationError(
            f"factor vector {name} must have length {FACTOR_LENGTH}, got shape {vector.shape}"
        )
    if not np.all(np.isfinite(vector)):
        raise FactorValidationError(f"factor vector {name} contains non-finite entries")
    return vector


@dataclass(frozen=True, eq=False)
class FactorTriplet:
    """One rank-1 factor: three length-32 vectors along x, y and z."""
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ('x', 'y', 'z'):
            object.__setattr__(self, name, _as_vector(getattr(self, name), name))

    def as_array(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.z])

    def __eq__(self, other) -> bool:
        if not isinstance(other, FactorTriplet):
            return NotImplemented
        return np.array_equal(self.as_array(), other.as_array())


@dataclass(frozen=True, eq=False)
class FactorSet:
    """
    Exactly 12 factor triplets, stored as one (12, 3, 32) float64 array.

    Row k of the array holds factor k as [x_k, y_k, z_k].
    """
    array: np.ndarray

    def __post_init__(self):
        array = np.array(self.array, dtype=np.float64)
        if array.ndim != 3 or array.shape[1:] != (3, FACTOR_LENGTH):
            raise FactorValidationError(
                f"factor set must have shape ({FACTOR_COUNT}, 3, {FACTOR_LENGTH}), got {array.shape}"
            )
        if array.shape[0] != FACTOR_COUNT:
            raise FactorValidationError(
                f"factor set must hold exactly {FACTOR_COUNT} factors, got {array.shape[0]}"
            )
        if not np.all(np.isfinite(array)):
            raise FactorValidationError("factor set contains non-finite entries")
        array.setflags(write=False)
        object.__setattr__(self, 'array', array)

    @classmethod
    def from_triplets(cls, triplets: Iterable[FactorTriplet]) -> 'FactorSet':
        triplets = list(triplets)
        if len(triplets) != FACTOR_COUNT:
            raise FactorValidationError(
                f"factor set must hold exactly {FACTOR_COUNT} factors, got {len(triplets)}"
            )
        return cls(np.stack([t.as_array() for t in triplets]))

    @classmethod
    def zeros(cls) -> 'FactorSet':
        return cls(np.zeros((FACTOR_COUNT, 3, FACTOR_LENGTH)))

    @property
    def factors(self) -> tuple[FactorTriplet, ...]:
        return tuple(FactorTriplet(row[0], row[1], row[2]) for row in self.array)

    def __len__(self) -> int:
        return FACTOR_COUNT

    def __eq__(self, other) -> bool:
        if not isinstance(other, FactorSet):
            return NotImplemented
        return np.array_equal(self.array, other.array)


def _check_grid(grid, name: str = 'grid') -> np.ndarray:
    grid = np.asarray(grid)
    if grid.shape != GRID_SHAPE:
        raise FactorValidationError(f"{name} must have shape {GRID_SHAPE}, got {grid.shape}")
    return grid


def factor_volume(factor: FactorTriplet) -> np.ndarray:
    """
    Decode one factor into its 32x32x32 volume.

    V[i, j, k] = x[i] * y[j] * z[k], multiplied left to right so the result is
    bit-identical to the nested-loop definition.
    """
    if not isinstance(factor, FactorTriplet):
        factor = FactorTriplet(*factor)
    return factor.x[:, None, None] * factor.y[None, :, None] * factor.z[None, None, :]


def assemble_volume(factor_set: FactorSet) -> np.ndarray:
    """
    Sum the 12 factor volumes into the object's voxel map.

    The raw sum is returned; clamping to occupancy lives in binarize().
    """
    if not isinstance(factor_set, FactorSet):
        factor_set = FactorSet(factor_set)
    volume = np.zeros(GRID_SHAPE)
    for factor in factor_set.factors:
        volume += factor_volume(factor)
    return volume


def binarize(grid: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Occupancy bits: min(1, value) >= threshold, with threshold in (0, 1)."""
    if not 0.0 < threshold < 1.0:
        raise FactorValidationError(f"threshold must lie in (0, 1), got {threshold}")
    grid = _check_grid(grid)
    return np.minimum(1.0, grid) >= threshold


def voxel_iou(a: np.ndarray, b: np.ndarray) -> float:
    """
    Intersection over union of two occupancy grids.

    Two empty grids agree perfectly and score 1.0.
    """
    a = _check_grid(a, 'a').astype(bool)
    b = _check_grid(b, 'b').astype(bool)

    union_count = int(np.logical_or(a, b).sum())
    if union_count == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union_count


def factor_tokens(factor_set: FactorSet) -> np.ndarray:
    """Pack factors into a (12, 96) token matrix; token k is [x_k; y_k; z_k]."""
    if not isinstance(factor_set, FactorSet):
        factor_set = FactorSet(factor_set)
    return factor_set.array.reshape(FACTOR_COUNT, TOKEN_WIDTH).copy()


def split_tokens(tokens: np.ndarray) -> FactorSet:
    """Inverse of factor_tokens: cut every token at offsets 32 and 64."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.shape != (FACTOR_COUNT, TOKEN_WIDTH):
        raise FactorValidationError(
            f"token sequence must have shape ({FACTOR_COUNT}, {TOKEN_WIDTH}), got {tokens.shape}"
        )
    return FactorSet(tokens.reshape(FACTOR_COUNT, 3, FACTOR_LENGTH))
