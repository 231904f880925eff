"""Complex voxel volumes and the shared grid conventions.

One convention used everywhere: a volume with dims (nx, ny, nz) over
bounds [lo, hi] has voxel centers at lo + (i + 0.5) * pitch, and the
canonical flat ordering runs x fastest (Fortran order of the 3D array).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def voxel_pitch(dims, bounds) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
    return (bounds[1] - bounds[0]) / np.asarray(dims, dtype=float)


def grid_axes(dims, bounds):
    """Per-axis voxel center coordinates."""
    bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
    pitch = voxel_pitch(dims, bounds)
    return [bounds[0][k] + (np.arange(dims[k]) + 0.5) * pitch[k]
            for k in range(3)]


def voxel_centers(dims, bounds) -> np.ndarray:
    """All voxel centers, shape (nx*ny*nz, 3), x fastest."""
    ax = grid_axes(dims, bounds)
    xx, yy, zz = np.meshgrid(ax[0], ax[1], ax[2], indexing="ij")
    return np.stack([xx.ravel(order="F"), yy.ravel(order="F"),
                     zz.ravel(order="F")], axis=1)


@dataclass
class ReconVolume:
    """Complex scatterer volume on a regular grid."""

    dims: tuple
    bounds: np.ndarray
    voxels: np.ndarray  # (nx, ny, nz) complex

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(2, 3)
        self.voxels = np.asarray(self.voxels).reshape(self.dims)
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims}")

    @property
    def pitch(self) -> np.ndarray:
        return voxel_pitch(self.dims, self.bounds)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.voxels)

    def flat(self) -> np.ndarray:
        """Voxels flattened x fastest."""
        return self.voxels.ravel(order="F")

    @staticmethod
    def from_flat(dims, bounds, flat: np.ndarray) -> "ReconVolume":
        vox = np.asarray(flat).reshape(tuple(dims), order="F")
        return ReconVolume(dims=tuple(dims), bounds=bounds, voxels=vox)

    def argmax_position(self) -> np.ndarray:
        """World position of the voxel with the largest magnitude."""
        idx = np.unravel_index(int(np.argmax(np.abs(self.voxels))), self.dims)
        ax = grid_axes(self.dims, self.bounds)
        return np.array([ax[0][idx[0]], ax[1][idx[1]], ax[2][idx[2]]])
