"""Per-patch and whole-image interpolation driven by an :class:`InterpModel`."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .graphmodel import (
    EdgeParams,
    MetricMatrix,
    N_FEATURES,
    PixelPartition,
    build_bilinear_theta,
    build_denoising_laplacian,
    build_directed_perturbation,
    directed_pattern,
    extract_features,
    undirected_pattern,
)
from .imaging import GrayImage, PatchGrid, fuse_patches, scatter
from .linalg import LinalgError
from .mapsolver import SolverParams, dr_run, perturbed_interpolate

log = logging.getLogger(__name__)

MODES = ("baseline", "perturbed", "dr")


@dataclass(frozen=True)
class InterpModel:
    """Every tunable quantity of the interpolation network.

    ``gain_p`` scales the directed perturbation and ``gain_l`` the denoising
    Laplacian; both start at 0 so a fresh model reproduces the base
    interpolator exactly.
    """

    solver: SolverParams = SolverParams()
    edges: EdgeParams = EdgeParams()
    metric_m: MetricMatrix = field(default_factory=lambda: MetricMatrix.identity(N_FEATURES))
    metric_r: MetricMatrix = field(default_factory=lambda: MetricMatrix.identity(N_FEATURES, 0.5))
    gain_p: float = 0.0
    gain_l: float = 0.0
    training: dict | None = None

    def __post_init__(self):
        if not -1.0 <= self.gain_p <= 1.0:
            raise ValueError(f"gain_p must lie in [-1, 1], got {self.gain_p}")
        if not 0.0 <= self.gain_l <= 1.0:
            raise ValueError(f"gain_l must lie in [0, 1], got {self.gain_l}")
        if self.metric_m.k_dim != N_FEATURES or self.metric_r.k_dim != N_FEATURES:
            raise ValueError(f"metric matrices must be {N_FEATURES}x{N_FEATURES}")


@dataclass(frozen=True, eq=False)
class PreparedPatch:
    """Everything about a patch that does not depend on the model."""

    part: PixelPartition
    y: np.ndarray
    theta: object
    features_obs: object
    features_mis: object
    p_pattern: tuple
    l_pattern: tuple
    pattern_key: tuple = (None, None)


def prepare_patch(part, y, edges=EdgeParams()):
    y = np.asarray(y, dtype=np.float64)
    theta = build_bilinear_theta(part)
    base = scatter(part, y, theta.apply(y))
    return PreparedPatch(
        part=part,
        y=y,
        theta=theta,
        features_obs=extract_features(base, part, "observed"),
        features_mis=extract_features(base, part, "missing"),
        p_pattern=directed_pattern(part, edges),
        l_pattern=undirected_pattern(part, edges),
        pattern_key=(edges.window_radius, edges.max_neighbors),
    )


def build_graphs(prep, model):
    """Directed perturbation and Laplacian with the model's gains applied."""
    if prep.pattern_key != (model.edges.window_radius, model.edges.max_neighbors):
        prep = replace(
            prep,
            p_pattern=directed_pattern(prep.part, model.edges),
            l_pattern=undirected_pattern(prep.part, model.edges),
        )
    p = build_directed_perturbation(
        prep.features_obs, prep.features_mis, model.metric_m, model.edges, prep.part,
        pattern=prep.p_pattern,
    ).with_gain(model.gain_p)
    lap = build_denoising_laplacian(
        prep.features_mis, model.metric_r, model.edges, prep.part, pattern=prep.l_pattern
    ).with_gain(model.gain_l)
    return p, lap


def interpolate_patch(prep, model, mode="dr", trace=None, timings=None):
    """Missing-pixel values ``x_N`` for one prepared patch."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "baseline":
        return prep.theta.apply(prep.y)
    t0 = time.perf_counter()
    p, lap = build_graphs(prep, model)
    t1 = time.perf_counter()
    if mode == "perturbed":
        x = perturbed_interpolate(prep.theta, p, prep.y, model.solver, trace=trace)
    else:
        x = dr_run(prep.theta, p, lap, prep.y, model.solver, trace=trace)
    if timings is not None:
        timings["graph_ms"] = timings.get("graph_ms", 0.0) + 1e3 * (t1 - t0)
        timings["solve_ms"] = timings.get("solve_ms", 0.0) + 1e3 * (time.perf_counter() - t1)
    return x


@dataclass
class PatchOutcome:
    position: tuple
    values: np.ndarray
    trace: list
    timings: dict
    error: str | None = None


def _run_patch(px, mask, pos, ph, pw, model, mode):
    r, c = pos
    part = PixelPartition(mask[r:r + ph, c:c + pw])
    window = px[r:r + ph, c:c + pw]
    y = window[part.mask]
    trace, timings = [], {}
    t0 = time.perf_counter()
    prep = prepare_patch(part, y, model.edges)
    timings["prepare_ms"] = 1e3 * (time.perf_counter() - t0)
    error = None
    try:
        x_n = interpolate_patch(prep, model, mode, trace=trace, timings=timings)
        if not np.all(np.isfinite(x_n)):
            raise LinalgError("non-finite interpolated values")
    except LinalgError as exc:
        log.error("patch at (%d, %d) failed: %s", r, c, exc)
        error = str(exc)
        x_n = prep.theta.apply(y)
    return PatchOutcome(pos, scatter(part, y, x_n), trace, timings, error)


def interpolate_image(img, mask, model=InterpModel(), mode="dr", grid=PatchGrid(), threads=1):
    """Interpolate a masked image patch by patch and fuse the results.

    ``mask`` is True at observed pixels.  Observed pixels of the output are
    copied from ``img``.  Returns ``(GrayImage, report)``; a patch whose
    solver fails is filled with the base interpolation and listed in
    ``report["failures"]``.
    """
    px = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if px.shape != mask.shape:
        raise ValueError(f"image shape {px.shape} != mask shape {mask.shape}")
    h, w = px.shape
    ph, pw = grid.extent(h), grid.extent(w)
    positions = grid.positions(h, w)
    t0 = time.perf_counter()

    def work(pos):
        return _run_patch(px, mask, pos, ph, pw, model, mode)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, positions))
    else:
        outcomes = [work(pos) for pos in positions]
    t1 = time.perf_counter()
    fused = np.array(fuse_patches([o.values for o in outcomes], positions, grid, (h, w)).pixels)
    fused[mask] = px[mask]
    out = GrayImage(fused)
    t2 = time.perf_counter()

    bicg = [t for o in outcomes for t in o.trace if t[0] == "bicg"]
    cg = [t for o in outcomes for t in o.trace if t[0] == "cg"]
    report = {
        "mode": mode,
        "patches": len(positions),
        "patch_size": [ph, pw],
        "timing_ms": {
            "prepare": sum(o.timings.get("prepare_ms", 0.0) for o in outcomes),
            "graph": sum(o.timings.get("graph_ms", 0.0) for o in outcomes),
            "solve": sum(o.timings.get("solve_ms", 0.0) for o in outcomes),
            "patches_wall": 1e3 * (t1 - t0),
            "fuse": 1e3 * (t2 - t1),
        },
        "solver": {
            "bicg_solves": len(bicg),
            "bicg_iters_total": int(sum(t[1] for t in bicg)),
            "bicg_max_residual": max((t[2] for t in bicg), default=0.0),
            "cg_solves": len(cg),
            "cg_iters_total": int(sum(t[1] for t in cg)),
            "cg_max_residual": max((t[2] for t in cg), default=0.0),
        },
        "failures": [{"row": o.position[0], "col": o.position[1], "error": o.error}
                     for o in outcomes if o.error],
    }
    return out, report


def with_gains(model, gain_p=None, gain_l=None):
    return replace(
        model,
        gain_p=model.gain_p if gain_p is None else float(gain_p),
        gain_l=model.gain_l if gain_l is None else float(gain_l),
    )
