"""Pixel partitions, the base interpolator and the two perturbation graphs.

Index conventions: ``m_index`` lists observed pixels and ``n_index`` missing
pixels, each in row-major order.  The base interpolator is an ``N x M``
matrix, the directed perturbation is ``M x N`` (rows are observed pixels,
columns are missing pixels) and the denoising Laplacian is ``N x N``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .linalg import DimensionError, LinearOperator, SparseMatrix, aslinearoperator

FEATURE_VERSION = "handcrafted-8ch-v1"
N_FEATURES = 8


@dataclass(frozen=True, eq=False)
class PixelPartition:
    """Observed / missing split of a ``height x width`` grid."""

    mask: np.ndarray
    m_index: np.ndarray = field(init=False, repr=False)
    n_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2 or mask.size == 0:
            raise ValueError(f"mask must be a non-empty 2-D array, got shape {mask.shape}")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        m_index = np.argwhere(mask)
        n_index = np.argwhere(~mask)
        m_index.setflags(write=False)
        n_index.setflags(write=False)
        object.__setattr__(self, "m_index", m_index)
        object.__setattr__(self, "n_index", n_index)

    @property
    def height(self):
        return self.mask.shape[0]

    @property
    def width(self):
        return self.mask.shape[1]

    @property
    def M(self):
        return len(self.m_index)

    @property
    def N(self):
        return len(self.n_index)

    @property
    def m_flat(self):
        return np.flatnonzero(self.mask)

    @property
    def n_flat(self):
        return np.flatnonzero(~self.mask)

    def position_grid(self, which):
        """``height x width`` array holding each pixel's index within its set, else -1."""
        grid = np.full(self.mask.shape, -1, dtype=np.int64)
        idx = self.m_index if which == "observed" else self.n_index
        grid[idx[:, 0], idx[:, 1]] = np.arange(len(idx))
        return grid

    def sub(self, row, col, height, width):
        """Partition of a rectangular window of this grid."""
        return PixelPartition(self.mask[row:row + height, col:col + width])

    def __eq__(self, other):
        return isinstance(other, PixelPartition) and np.array_equal(self.mask, other.mask)


def checkerboard_partition(width, height):
    """Quincunx partition: pixel ``(r, c)`` is observed iff ``r + c`` is even."""
    if width < 1 or height < 1:
        raise ValueError(f"grid must be non-empty, got {width}x{height}")
    if width < 2 or height < 2:
        raise ValueError(f"checkerboard needs at least a 2x2 grid, got {width}x{height}")
    r, c = np.indices((height, width))
    return PixelPartition((r + c) % 2 == 0)


@dataclass(frozen=True, eq=False)
class BaseInterpolator:
    """Row-stochastic ``N x M`` interpolation matrix."""

    theta: SparseMatrix
    kind: str = "bilinear-quincunx"

    def __post_init__(self):
        if self.kind not in ("bilinear-quincunx", "custom"):
            raise ValueError(f"unknown interpolator kind {self.kind!r}")
        sums = self.theta.row_sums()
        bad = np.nonzero(np.abs(sums - 1.0) > 1e-12)[0]
        if len(bad):
            raise ValueError(f"interpolator row {bad[0]} sums to {sums[bad[0]]!r}, expected 1")

    @property
    def N(self):
        return self.theta.rows

    @property
    def M(self):
        return self.theta.cols

    def apply(self, y):
        return self.theta.dot(y)

    def apply_t(self, v):
        return self.theta.rdot(v)

    def as_operator(self):
        return aslinearoperator(self.theta)


_FOUR_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def build_bilinear_theta(part):
    """Average each missing pixel over its observed 4-neighbours.

    Rows on the border renormalize over the neighbours that exist.
    """
    obs_pos = part.position_grid("observed")
    h, w = part.mask.shape
    n_rows, n_cols = part.n_index[:, 0], part.n_index[:, 1]
    rows, cols = [], []
    for dr, dc in _FOUR_NEIGHBORS:
        rr, cc = n_rows + dr, n_cols + dc
        inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        src = np.flatnonzero(inside)
        tgt = obs_pos[rr[inside], cc[inside]]
        keep = tgt >= 0
        rows.append(src[keep])
        cols.append(tgt[keep])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    counts = np.bincount(rows, minlength=part.N)
    if np.any(counts == 0):
        lonely = part.n_index[np.flatnonzero(counts == 0)[0]]
        raise ValueError(f"missing pixel {tuple(lonely)} has no observed 4-neighbour")
    values = 1.0 / counts[rows]
    theta = SparseMatrix.from_triplets((part.N, part.M), rows, cols, values)
    return BaseInterpolator(theta, "bilinear-quincunx")


def load_theta(source, part=None):
    """Read a custom interpolator.

    Format: a header line ``THETA N M`` followed by one ``row col value``
    triplet per line.  ``source`` is a path or the file text.  Rows must
    sum to one.
    """
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source) as fh:
            text = fh.read()
    else:
        text = str(source)
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError("empty THETA file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "THETA":
        raise ValueError(f"bad THETA header {lines[0]!r}")
    n, m = int(head[1]), int(head[2])
    if n < 1 or m < 1:
        raise ValueError(f"THETA dimensions must be positive, got {n}x{m}")
    rows, cols, vals = [], [], []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'row col value', got {ln!r}")
        rows.append(int(parts[0]))
        cols.append(int(parts[1]))
        vals.append(float(parts[2]))
    if part is not None and (n, m) != (part.N, part.M):
        raise DimensionError(f"THETA is {n}x{m} but the partition needs {part.N}x{part.M}")
    theta = SparseMatrix.from_triplets((n, m), rows, cols, vals)
    return BaseInterpolator(theta, "custom")


def save_theta(interp, path):
    t = interp.theta
    with open(path, "w") as fh:
        fh.write(f"THETA {t.rows} {t.cols}\n")
        for r, c, v in zip(t.row_ids(), t.indices, t.data):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Per-pixel feature vectors, one row per pixel of an index set."""

    features: np.ndarray

    def __post_init__(self):
        f = np.array(self.features, dtype=np.float64)
        if f.ndim != 2:
            raise ValueError("features must be a 2-D array (pixels x K)")
        if not np.all(np.isfinite(f)):
            raise ValueError("features must be finite")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)

    @property
    def k_dim(self):
        return self.features.shape[1]

    def __len__(self):
        return self.features.shape[0]


def _scale_unit(ch):
    peak = np.abs(ch).max()
    return ch / peak if peak > 0 else np.zeros_like(ch)


def feature_channels(img):
    """The eight normalized feature maps of a baseline image, shape ``(8, h, w)``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    mean3 = ndimage.uniform_filter(img, size=3, mode="nearest")
    grad_v, grad_h = np.gradient(img) if min(h, w) > 1 else (np.zeros_like(img),) * 2
    var3 = np.maximum(ndimage.uniform_filter(img * img, size=3, mode="nearest") - mean3**2, 0.0)
    lap = ndimage.laplace(img, mode="nearest")
    rr, cc = np.indices((h, w), dtype=np.float64)
    row = 2.0 * rr / (h - 1) - 1.0 if h > 1 else np.zeros((h, w))
    col = 2.0 * cc / (w - 1) - 1.0 if w > 1 else np.zeros((h, w))
    # flat patches leave tiny rounding residue in var / laplace
    var3[var3 < 1e-15] = 0.0
    lap[np.abs(lap) < 1e-14] = 0.0
    chans = [img, mean3, grad_h, grad_v, var3, lap]
    return np.stack([_scale_unit(c) for c in chans] + [row, col])


def extract_features(baseline_img, part, which="missing"):
    """Hand-crafted features of the pixels in one half of the partition.

    Channels: intensity, 3x3 mean, horizontal gradient, vertical gradient,
    3x3 variance, Laplacian response, row and column position.  Each is
    scaled into [-1, 1] over the whole patch before selection.
    """
    if which not in ("observed", "missing"):
        raise ValueError(f"which must be 'observed' or 'missing', got {which!r}")
    img = np.asarray(baseline_img, dtype=np.float64)
    if img.shape != part.mask.shape:
        raise DimensionError(f"image shape {img.shape} != partition shape {part.mask.shape}")
    chans = feature_channels(img)
    idx = part.m_index if which == "observed" else part.n_index
    return FeatureSet(chans[:, idx[:, 0], idx[:, 1]].T)


@dataclass(frozen=True, eq=False)
class MetricMatrix:
    """PSD metric stored as a lower-triangular factor ``L``; the metric is ``L L^T``."""

    factor: np.ndarray

    def __post_init__(self):
        f = np.array(self.factor, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise ValueError(f"metric factor must be square, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("metric factor must be finite")
        f = np.tril(f)
        if np.any(np.diag(f) < 0):
            raise ValueError("metric factor diagonal must be non-negative")
        f.setflags(write=False)
        object.__setattr__(self, "factor", f)

    @classmethod
    def identity(cls, k_dim=N_FEATURES, scale=1.0):
        return cls(scale * np.eye(k_dim))

    @property
    def k_dim(self):
        return self.factor.shape[0]

    @property
    def effective(self):
        return self.factor @ self.factor.T

    def with_diagonal(self, i, value):
        f = self.factor.copy()
        f[i, i] = value
        return MetricMatrix(f)

    def __eq__(self, other):
        return isinstance(other, MetricMatrix) and np.array_equal(self.factor, other.factor)


@dataclass(frozen=True)
class EdgeParams:
    d_star: float = 4.0
    window_radius: int = 3
    max_neighbors: int = 8

    def __post_init__(self):
        if not (np.isfinite(self.d_star) and self.d_star > 0):
            raise ValueError(f"d_star must be positive, got {self.d_star}")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.max_neighbors < 1:
            raise ValueError("max_neighbors must be >= 1")


def feature_distance(f_i, f_j, metric):
    """Bilinear form ``f_j^T M f_i`` evaluated through the factor of ``M``."""
    f_i = np.asarray(f_i, dtype=np.float64)
    f_j = np.asarray(f_j, dtype=np.float64)
    if f_i.shape[-1] != metric.k_dim or f_j.shape[-1] != metric.k_dim:
        raise DimensionError(
            f"feature length {f_i.shape[-1]}/{f_j.shape[-1]} != metric size {metric.k_dim}"
        )
    return np.sum((f_i @ metric.factor) * (f_j @ metric.factor), axis=-1)


def signed_weight(d, params):
    """``1 - 2 / (1 + exp(-(d - d*)))``, evaluated as ``-tanh((d - d*) / 2)``."""
    d_star = params.d_star if isinstance(params, EdgeParams) else float(params)
    return -np.tanh((np.asarray(d, dtype=np.float64) - d_star) / 2.0)


def unsigned_weight(d_prime):
    return np.exp(-np.asarray(d_prime, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class DirectedPerturbation:
    """Signed ``M x N`` perturbation; its effective value is ``gain * p``."""

    p: SparseMatrix
    gain: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.gain):
            raise ValueError("gain must be finite")
        if self.p.nnz and np.abs(self.p.data).max() >= 1.0:
            raise ValueError("directed weights must lie in (-1, 1)")

    def with_gain(self, gain):
        return replace(self, gain=float(gain))

    def apply(self, x):
        """``gain * P @ x`` (length M)."""
        if self.gain == 0.0:
            return np.zeros(self.p.rows)
        return self.gain * self.p.dot(x)

    def apply_t(self, v):
        if self.gain == 0.0:
            return np.zeros(self.p.cols)
        return self.gain * self.p.rdot(v)

    def to_dense(self):
        return self.gain * self.p.to_dense()


@dataclass(frozen=True, eq=False)
class DenoisingLaplacian:
    """Graph Laplacian over the missing pixels; effective value ``gain * lap``."""

    lap: SparseMatrix
    gain: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.gain) and self.gain >= 0):
            raise ValueError(f"Laplacian gain must be >= 0, got {self.gain}")
        if self.lap.rows != self.lap.cols:
            raise DimensionError(f"Laplacian must be square, got {self.lap.shape}")

    def with_gain(self, gain):
        return replace(self, gain=float(gain))

    def apply(self, x):
        if self.gain == 0.0:
            return np.zeros(self.lap.rows)
        return self.gain * self.lap.dot(x)

    def to_dense(self):
        return self.gain * self.lap.to_dense()


def _window_offsets(radius):
    r = int(radius)
    dr, dc = np.mgrid[-r:r + 1, -r:r + 1]
    dr, dc = dr.ravel(), dc.ravel()
    d2 = dr * dr + dc * dc
    keep = (d2 > 0) & (d2 <= radius * radius)
    dr, dc, d2 = dr[keep], dc[keep], d2[keep]
    order = np.lexsort((dc, dr, d2))
    return dr[order], dc[order]


def _knn_pattern(src, tgt_grid, radius, k):
    """Up to ``k`` spatially nearest targets within ``radius`` of each source.

    Ties in distance are broken by (row offset, column offset).
    """
    h, w = tgt_grid.shape
    dr, dc = _window_offsets(radius)
    rr = src[:, :1] + dr[None, :]
    cc = src[:, 1:] + dc[None, :]
    inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    tgt = np.full(rr.shape, -1, dtype=np.int64)
    tgt[inside] = tgt_grid[rr[inside], cc[inside]]
    valid = tgt >= 0
    keep = valid & (np.cumsum(valid, axis=1) <= k)
    rows = np.nonzero(keep)[0]
    return rows, tgt[keep]


def directed_pattern(part, params):
    """Sparsity pattern (observed row, missing column) of the directed graph."""
    return _knn_pattern(
        part.m_index, part.position_grid("missing"), params.window_radius, params.max_neighbors
    )


def undirected_pattern(part, params):
    """Mutual k-nearest pairs ``(i, j)`` with ``i < j`` among missing pixels."""
    n = part.N
    i, j = _knn_pattern(
        part.n_index, part.position_grid("missing"), params.window_radius, params.max_neighbors
    )
    key = i * n + j
    mutual = np.isin(key, j * n + i)
    upper = mutual & (i < j)
    return i[upper], j[upper]


def build_directed_perturbation(features_obs, features_mis, metric, params, part, pattern=None):
    """Signed directed graph from observed pixels to nearby missing pixels.

    The returned perturbation has gain 0, so it leaves the base interpolator
    unchanged until a gain is assigned.
    """
    if len(features_obs) != part.M or len(features_mis) != part.N:
        raise DimensionError("feature sets do not match the partition sizes")
    rows, cols = directed_pattern(part, params) if pattern is None else pattern
    d = feature_distance(features_obs.features[rows], features_mis.features[cols], metric)
    w = signed_weight(d, params)
    limit = np.nextafter(1.0, 0.0)
    w = np.clip(w, -limit, limit)
    return DirectedPerturbation(SparseMatrix.from_triplets((part.M, part.N), rows, cols, w), 0.0)


def laplacian_from_edges(n, i, j, w):
    """``D - W`` for an undirected graph given each edge once."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("edge weights must be non-negative")
    if np.any(i == j):
        raise ValueError("self loops are not allowed")
    deg = np.bincount(i, weights=w, minlength=n) + np.bincount(j, weights=w, minlength=n)
    diag = np.arange(n)
    return SparseMatrix.from_triplets(
        (n, n),
        np.concatenate([i, j, diag]),
        np.concatenate([j, i, diag]),
        np.concatenate([-w, -w, deg]),
    )


def build_denoising_laplacian(features_mis, metric_r, params, part, pattern=None):
    """Positive undirected graph among missing pixels, as a Laplacian with gain 0."""
    if len(features_mis) != part.N:
        raise DimensionError("feature set does not match the number of missing pixels")
    i, j = undirected_pattern(part, params) if pattern is None else pattern
    f = features_mis.features
    w = unsigned_weight(feature_distance(f[i], f[j], metric_r))
    return DenoisingLaplacian(laplacian_from_edges(part.N, i, j, w), 0.0)


def gsv_value(x, shift_op):
    """Graph shift variation ``||x - A x||^2``."""
    x = np.asarray(x, dtype=np.float64)
    op = aslinearoperator(shift_op)
    if op.in_dim != len(x) or op.out_dim != len(x):
        raise DimensionError(f"shift operator {op.shape} does not act on length {len(x)}")
    r = x - op.matvec(x)
    return float(r @ r)
