"""Differentiable complex scatterer fields sigma(x).

Two interchangeable representations: a voxel grid with trilinear
interpolation and a multiresolution hash-encoded coordinate network
(4-layer MLP head). Reverse-mode parameter gradients are hand-derived
layer by layer and accumulate into per-array ``grad`` buffers; the
gradient convention is grad.real = dL/dRe, grad.imag = dL/dIm.

Both models expose: bounds, query, query_with_cache, query_backward,
magnitude_gradient, parameters, grads, zero_grad.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyIsosurface
from .mesh import Mesh, make_mesh
from .volume import ReconVolume, voxel_centers, voxel_pitch

_TINY = 1e-30


# ---------------------------------------------------------------------------
# voxel grid

class VoxelSceneModel:
    """Complex voxel grid; query is a trilinear blend of 8 neighbours.

    Voxel centers sit at bounds_lo + (i + 0.5) * pitch. Queries outside
    the bounds clamp to the boundary cells (use in_bounds for the flag).
    """

    def __init__(self, dims, bounds, values: np.ndarray):
        self.dims = tuple(int(d) for d in dims)
        self.bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
        self.values = np.asarray(values, dtype=complex).reshape(self.dims)
        self.grad = np.zeros(self.dims, dtype=complex)

    @staticmethod
    def create(dims, bounds, seed=0, init_sigma: float = 1e-3) -> "VoxelSceneModel":
        rng = np.random.default_rng(seed)
        vals = init_sigma * (rng.standard_normal(tuple(dims))
                             + 1j * rng.standard_normal(tuple(dims)))
        return VoxelSceneModel(dims, bounds, vals)

    @property
    def pitch(self) -> np.ndarray:
        return voxel_pitch(self.dims, self.bounds)

    @property
    def n_params(self) -> int:
        return 2 * self.values.size

    def parameters(self):
        return [self.values]

    def grads(self):
        return [self.grad]

    def zero_grad(self):
        self.grad[...] = 0

    def in_bounds(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        return np.all((x >= self.bounds[0]) & (x <= self.bounds[1]), axis=1)

    def _coeffs(self, x: np.ndarray):
        """Corner flat indices (N,8), weights (N,8), and per-axis data."""
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        nx, ny, nz = self.dims
        u = (x - self.bounds[0]) / self.pitch - 0.5
        u = np.clip(u, 0.0, np.array(self.dims, dtype=float) - 1.0)
        i0 = np.minimum(u.astype(int), np.array(self.dims) - 2)
        i0 = np.maximum(i0, 0)
        f = np.clip(u - i0, 0.0, 1.0)
        wx = np.stack([1.0 - f[:, 0], f[:, 0]], axis=1)
        wy = np.stack([1.0 - f[:, 1], f[:, 1]], axis=1)
        wz = np.stack([1.0 - f[:, 2], f[:, 2]], axis=1)
        idx = np.empty((len(x), 8), dtype=np.int64)
        w = np.empty((len(x), 8))
        corner = 0
        for dx in range(2):
            for dy in range(2):
                for dz in range(2):
                    idx[:, corner] = ((i0[:, 0] + dx) * ny + (i0[:, 1] + dy)) * nz \
                        + (i0[:, 2] + dz)
                    w[:, corner] = wx[:, dx] * wy[:, dy] * wz[:, dz]
                    corner += 1
        return idx, w, (i0, f, wx, wy, wz)

    def query(self, x: np.ndarray) -> np.ndarray:
        idx, w, _ = self._coeffs(x)
        return (self.values.reshape(-1)[idx] * w).sum(axis=1)

    def query_with_cache(self, x: np.ndarray):
        idx, w, _ = self._coeffs(x)
        vals = (self.values.reshape(-1)[idx] * w).sum(axis=1)
        return vals, (idx, w)

    def query_backward(self, cache, grad_out: np.ndarray) -> None:
        idx, w = cache
        gflat = self.grad.reshape(-1)
        np.add.at(gflat, idx, w * grad_out[:, None])

    def spatial_gradient(self, x: np.ndarray) -> np.ndarray:
        """d query / d x, shape (N, 3), complex (exact per cell)."""
        idx, _, (i0, f, wx, wy, wz) = self._coeffs(x)
        vflat = self.values.reshape(-1)
        vals = vflat[idx]  # (N, 8) corner values
        out = np.empty((len(f), 3), dtype=complex)
        signs = np.array([(-1.0, 1.0)[d] for d in range(2)])
        # corner order is (dx, dy, dz) nested loops, dz fastest
        for axis in range(3):
            w_axis = np.empty_like(vals, dtype=float)
            corner = 0
            for dx in range(2):
                for dy in range(2):
                    for dz in range(2):
                        a = (signs[dx] if axis == 0 else wx[:, dx])
                        b = (signs[dy] if axis == 1 else wy[:, dy])
                        c = (signs[dz] if axis == 2 else wz[:, dz])
                        w_axis[:, corner] = a * b * c
                        corner += 1
            out[:, axis] = (vals * w_axis).sum(axis=1) / self.pitch[axis]
        return out

    def magnitude_gradient(self, x: np.ndarray, fd_step=None) -> np.ndarray:
        """Gradient of |query| (analytic); fd_step is accepted and ignored."""
        q = self.query(x)
        dq = self.spatial_gradient(x)
        mag = np.maximum(np.abs(q), _TINY)
        return (q.real[:, None] * dq.real + q.imag[:, None] * dq.imag) / mag[:, None]


# ---------------------------------------------------------------------------
# multiresolution hash encoding

_PRIMES = np.array([1, 2654435761, 805459861, 3674653429], dtype=np.uint64)


class HashEncoding:
    """Instant-NGP style multiresolution hash grid, any input dim <= 4.

    Each level overlays a virtual grid of the level's resolution; the
    2^dim cell corners hash into a shared feature table and the
    features blend multilinearly, so the encoding is continuous across
    cell faces at every level.
    """

    def __init__(self, dim=3, n_levels=8, base_resolution=16, growth=1.5,
                 log2_table_size=16, n_features=2, seed=0):
        self.dim = int(dim)
        self.n_levels = int(n_levels)
        self.n_features = int(n_features)
        self.base_resolution = int(base_resolution)
        self.growth = float(growth)
        self.log2_table_size = int(log2_table_size)
        self.table_size = 1 << int(log2_table_size)
        self.resolutions = np.array(
            [int(np.floor(base_resolution * growth ** l))
             for l in range(n_levels)], dtype=np.int64)
        rng = np.random.default_rng(seed)
        self.tables = rng.uniform(-1e-4, 1e-4,
                                  (self.n_levels, self.table_size, n_features))
        self.grad = np.zeros_like(self.tables)
        self._corners = np.array(
            [[(c >> k) & 1 for k in range(self.dim)]
             for c in range(1 << self.dim)], dtype=np.int64)

    @property
    def out_dim(self) -> int:
        return self.n_levels * self.n_features

    def _level_coeffs(self, u: np.ndarray, level: int):
        res = self.resolutions[level]
        pos = u * res
        c0 = np.minimum(pos.astype(np.int64), res - 1)
        c0 = np.maximum(c0, 0)
        f = np.clip(pos - c0, 0.0, 1.0)
        idx = np.empty((len(u), len(self._corners)), dtype=np.int64)
        w = np.ones((len(u), len(self._corners)))
        for j, off in enumerate(self._corners):
            coord = (c0 + off).astype(np.uint64)
            h = coord[:, 0] * _PRIMES[0]
            for k in range(1, self.dim):
                h = h ^ (coord[:, k] * _PRIMES[k])
            idx[:, j] = (h % np.uint64(self.table_size)).astype(np.int64)
            for k in range(self.dim):
                w[:, j] *= f[:, k] if off[k] else (1.0 - f[:, k])
        return idx, w

    def encode(self, u: np.ndarray):
        """u in [0,1]^dim -> features (N, n_levels*n_features) + cache."""
        u = np.asarray(u, dtype=float).reshape(-1, self.dim)
        out = np.empty((len(u), self.out_dim))
        cache = []
        for l in range(self.n_levels):
            idx, w = self._level_coeffs(u, l)
            feats = self.tables[l][idx]  # (N, corners, F)
            out[:, l * self.n_features:(l + 1) * self.n_features] = \
                (feats * w[:, :, None]).sum(axis=1)
            cache.append((idx, w))
        return out, cache

    def encode_backward(self, cache, grad_out: np.ndarray) -> None:
        for l, (idx, w) in enumerate(cache):
            g = grad_out[:, l * self.n_features:(l + 1) * self.n_features]
            for j in range(idx.shape[1]):
                np.add.at(self.grad[l], idx[:, j], w[:, j, None] * g)


class Mlp:
    """Small fully-connected net, leaky-ReLU hidden layers, linear head."""

    def __init__(self, sizes, seed=0, negative_slope=0.01, head_scale=1e-2):
        rng = np.random.default_rng(seed)
        self.slope = float(negative_slope)
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = np.sqrt(2.0 / n_in)
            if i == len(sizes) - 2:
                scale *= head_scale
            self.weights.append(rng.standard_normal((n_in, n_out)) * scale)
            self.biases.append(np.zeros(n_out))
        self.grad_w = [np.zeros_like(w) for w in self.weights]
        self.grad_b = [np.zeros_like(b) for b in self.biases]

    def forward(self, x: np.ndarray):
        acts = [x]
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            if i < n - 1:
                z = np.where(z > 0, z, self.slope * z)
            acts.append(z)
        return acts[-1], acts

    def backward(self, acts, grad_out: np.ndarray) -> np.ndarray:
        """Accumulates weight grads; returns gradient w.r.t. the input."""
        g = grad_out
        n = len(self.weights)
        for i in range(n - 1, -1, -1):
            if i < n - 1:
                z = acts[i + 1]
                g = g * np.where(z > 0, 1.0, self.slope)
            self.grad_w[i] += acts[i].T @ g
            self.grad_b[i] += g.sum(axis=0)
            g = g @ self.weights[i].T
        return g


class HashMlpSceneModel:
    """Hash-encoded coordinate network emitting a complex scatterer field.

    Encoding defaults: 8 levels from resolution 16 growing 1.5x, 2^16
    entry tables, 2 features per entry. Head: 4 fully-connected layers
    of width 64 with leaky-ReLU, two linear outputs (Re, Im). The head
    weights start small so the initial field is near zero.
    """

    def __init__(self, bounds, n_levels=8, base_resolution=16, growth=1.5,
                 log2_table_size=16, n_features=2, hidden=64, seed=0):
        self.bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
        self.encoding = HashEncoding(dim=3, n_levels=n_levels,
                                     base_resolution=base_resolution,
                                     growth=growth,
                                     log2_table_size=log2_table_size,
                                     n_features=n_features, seed=seed)
        self.mlp = Mlp([self.encoding.out_dim, hidden, hidden, hidden, 2],
                       seed=seed + 1)
        self.hidden = int(hidden)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def parameters(self):
        return [self.encoding.tables] + self.mlp.weights + self.mlp.biases

    def grads(self):
        return [self.encoding.grad] + self.mlp.grad_w + self.mlp.grad_b

    def zero_grad(self):
        self.encoding.grad[...] = 0
        for g in self.mlp.grad_w:
            g[...] = 0
        for g in self.mlp.grad_b:
            g[...] = 0

    def in_bounds(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        return np.all((x >= self.bounds[0]) & (x <= self.bounds[1]), axis=1)

    def _normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        span = np.maximum(self.bounds[1] - self.bounds[0], _TINY)
        return np.clip((x - self.bounds[0]) / span, 0.0, 1.0)

    def query(self, x: np.ndarray) -> np.ndarray:
        return self.query_with_cache(x)[0]

    def query_with_cache(self, x: np.ndarray):
        feats, enc_cache = self.encoding.encode(self._normalize(x))
        out, acts = self.mlp.forward(feats)
        return out[:, 0] + 1j * out[:, 1], (enc_cache, acts)

    def query_backward(self, cache, grad_out: np.ndarray) -> None:
        enc_cache, acts = cache
        g = np.stack([grad_out.real, grad_out.imag], axis=1)
        g_feats = self.mlp.backward(acts, g)
        self.encoding.encode_backward(enc_cache, g_feats)

    def magnitude_gradient(self, x: np.ndarray, fd_step=None) -> np.ndarray:
        """Central finite differences of |query|; step defaults to
        1/512 of the smallest bounds extent."""
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        if fd_step is None:
            fd_step = float((self.bounds[1] - self.bounds[0]).min()) / 512.0
        probes = np.tile(x, (6, 1))
        n = len(x)
        for axis in range(3):
            probes[2 * axis * n:(2 * axis + 1) * n, axis] += fd_step
            probes[(2 * axis + 1) * n:(2 * axis + 2) * n, axis] -= fd_step
        mag = np.abs(self.query(probes))
        out = np.empty((n, 3))
        for axis in range(3):
            plus = mag[2 * axis * n:(2 * axis + 1) * n]
            minus = mag[(2 * axis + 1) * n:(2 * axis + 2) * n]
            out[:, axis] = (plus - minus) / (2.0 * fd_step)
        return out


# ---------------------------------------------------------------------------
# derived quantities

def normal(model, x: np.ndarray, fd_step=None):
    """Unit normals n = grad|sigma| / ||grad|sigma|||.

    Returns (normals (N,3), defined (N,) bool); rows with gradient norm
    below 1e-8 are zero with defined=False.
    """
    g = model.magnitude_gradient(x, fd_step=fd_step)
    norm = np.linalg.norm(g, axis=1)
    defined = norm > 1e-8
    out = np.zeros_like(g)
    out[defined] = g[defined] / norm[defined][:, None]
    return out, defined


def sample_model_volume(model, dims, bounds=None) -> ReconVolume:
    """Sample a scene model's field densely onto a regular grid."""
    if bounds is None:
        bounds = model.bounds
    centers = voxel_centers(dims, bounds)
    vals = np.empty(len(centers), dtype=complex)
    chunk = 1 << 16
    for i in range(0, len(centers), chunk):
        vals[i:i + chunk] = model.query(centers[i:i + chunk])
    return ReconVolume.from_flat(dims, bounds, vals)


def extract_mesh(volume_or_model, dims=None, bounds=None,
                 threshold: float = 0.2) -> Mesh:
    """Marching-cubes isosurface of the normalized field magnitude.

    The magnitude is scaled to [0,1] by its max before thresholding, so
    the threshold is scale-free. Accepts a ReconVolume or a scene model
    (then dims, and optionally bounds, select the sampling grid).
    """
    from skimage import measure

    if isinstance(volume_or_model, ReconVolume):
        vol = volume_or_model
    else:
        vol = sample_model_volume(volume_or_model, dims, bounds)
    if not (0.0 < threshold < 1.0):
        raise EmptyIsosurface(f"threshold {threshold} outside (0, 1)")
    mag = vol.magnitude()
    peak = mag.max()
    if peak <= 0:
        raise EmptyIsosurface("field magnitude is identically zero")
    norm = mag / peak
    if not (norm.min() < threshold < norm.max()):
        raise EmptyIsosurface(f"no crossing at threshold {threshold}")
    verts, faces, _, _ = measure.marching_cubes(
        norm, level=threshold, spacing=tuple(vol.pitch))
    verts = verts + vol.bounds[0] + 0.5 * vol.pitch
    return make_mesh(verts, faces)
