"""Interpolation engines and their dense oracles.

Vectors over the whole grid are ordered ``[x_M; x_N]`` (observed pixels
first).  The matrix-free engines work only on ``x_N``:

* :func:`perturbed_interpolate` solves ``(I + Theta P) x = Theta y`` by BiCG.
* :func:`dr_run` unrolls Douglas-Rachford iterations alternating the
  directed-graph step (:func:`h_step`, BiCG) and the denoising step
  (:func:`g_step`, CG).

The ``dense_*`` functions build the full matrices explicitly and are meant
for checking the engines on small problems only.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graphmodel import BaseInterpolator, DenoisingLaplacian, DirectedPerturbation
from .linalg import (
    DimensionError,
    LayerSchedule,
    LinalgError,
    LinearOperator,
    aslinearoperator,
    bicg_solve,
    cg_solve,
    dense_inverse,
    lu_solve,
)

ORACLE_MAX_N = 64


@dataclass(frozen=True)
class SolverParams:
    """Prior weight, DR step and the unrolled layer counts.

    ``tol`` is the early-exit tolerance of the inner BiCG/CG solves; each
    inner solve is capped at its layer count.  A ``bicg_schedule`` replaces
    the computed BiCG coefficients and disables early exit.
    """

    mu: float = 1.0
    gamma: float = 0.1
    n_bicg_layers: int = 15
    n_dr_layers: int = 15
    n_cg_layers: int = 15
    tol: float = 1e-12
    bicg_schedule: LayerSchedule | None = None

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("n_bicg_layers", "n_dr_layers", "n_cg_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        s = self.bicg_schedule
        if s is not None:
            if len(s) != self.n_bicg_layers:
                raise ValueError(
                    f"schedule has {len(s)} BiCG layers, params say {self.n_bicg_layers}"
                )
            if s.per_dr_layer and s.alpha.shape[0] < self.n_dr_layers:
                raise ValueError("schedule has fewer DR rows than n_dr_layers")


@dataclass(frozen=True, eq=False)
class DRState:
    """Iterates carried between DR layers (all over the missing pixels)."""

    x_prev: np.ndarray
    x_curr: np.ndarray
    z: np.ndarray | None = None
    v: np.ndarray | None = None
    k: int = 0

    @classmethod
    def initial(cls, x0):
        x0 = np.asarray(x0, dtype=np.float64)
        return cls(x0.copy(), x0.copy())


class DRLayerError(LinalgError):
    def __init__(self, layer, step, cause):
        self.layer = layer
        self.step = step
        self.cause = cause
        super().__init__(f"DR layer {layer}, {step}: {cause}")


def interpolation_operator(theta, p):
    """``v -> v + Theta (P v)`` and its transpose, as a :class:`LinearOperator`."""
    n = theta.N
    if p.p.shape != (theta.M, theta.N):
        raise DimensionError(f"perturbation {p.p.shape} does not match interpolator {theta.theta.shape}")

    def forward(v):
        return v + theta.apply(p.apply(v))

    def transpose(v):
        return v + p.apply_t(theta.apply_t(v))

    return LinearOperator((n, n), forward, transpose)


def _schedule_for(params, layer):
    s = params.bicg_schedule
    return None if s is None else s.for_layer(layer)


def _solve_interp(theta, p, rhs, params, layer=0, trace=None):
    """Solve ``(I + Theta P) x = rhs``; exact passthrough when the gain is 0."""
    if p.gain == 0.0:
        x, iters, resid = rhs.copy(), 0, 0.0
    else:
        op = interpolation_operator(theta, p)
        sched = _schedule_for(params, layer)
        if sched is not None:
            res = bicg_solve(op, rhs, schedule=sched)
        else:
            res = bicg_solve(op, rhs, max_iters=params.n_bicg_layers, tol=params.tol)
        x, iters, resid = res.x, res.iters, res.residual
    if trace is not None:
        trace.append(("bicg", iters, resid))
    return x


def perturbed_interpolate(theta, p, y, params=SolverParams(), trace=None):
    """Interpolated pixels ``x_N`` with the directed perturbation applied.

    ``trace``, when given, is a list that receives ``(solver, iters, residual)``.
    """
    y = np.asarray(y, dtype=np.float64)
    if len(y) != theta.M:
        raise DimensionError(f"y has length {len(y)}, interpolator expects {theta.M}")
    return _solve_interp(theta, p, theta.apply(y), params, trace=trace)


def h_step(theta, p, y, state, params=SolverParams(), trace=None):
    """Directed-graph step: ``(I + Theta P) z = Theta (y + (x_prev - x_curr) / 2 gamma)``."""
    y = np.asarray(y, dtype=np.float64)
    if theta.M != theta.N:
        raise DimensionError(f"the DR step needs M == N, got M={theta.M}, N={theta.N}")
    corr = (state.x_prev - state.x_curr) / (2.0 * params.gamma)
    rhs = theta.apply(y + corr)
    return _solve_interp(theta, p, rhs, params, layer=state.k, trace=trace)


def g_step_operator(lap, params):
    n = lap.lap.rows
    c = 2.0 * params.mu
    inv_g = 1.0 / params.gamma

    def forward(v):
        return c * lap.apply(v) + inv_g * v

    return LinearOperator((n, n), forward, forward)


def g_step(lap, state, params=SolverParams(), trace=None):
    """Denoising step: ``(2 mu P2 + I / gamma) v = (2 z - x) / gamma``."""
    u = 2.0 * state.z - state.x_curr
    if lap.gain == 0.0:
        if trace is not None:
            trace.append(("cg", 0, 0.0))
        return u
    res = cg_solve(
        g_step_operator(lap, params), u / params.gamma, max_iters=params.n_cg_layers, tol=params.tol
    )
    if trace is not None:
        trace.append(("cg", res.iters, res.residual))
    return res.x


def dr_update(state, params=SolverParams()):
    x_next = state.x_curr + 2.0 * params.gamma * (state.v - state.z)
    return DRState(state.x_curr, x_next, state.z, state.v, state.k + 1)


def dr_run(theta, p, lap, y, params=SolverParams(), converge_tol=None, return_state=False,
           trace=None):
    """Run the unrolled DR network and return the final ``x_N``.

    Starts from ``x(0) = x(-1)`` equal to the perturbed interpolation
    (``Theta y`` when the directed gain is 0) and runs ``params.n_dr_layers``
    layers.  The lagged correction in :func:`h_step` makes the smooth modes
    grow by about ``gamma + sqrt(1 + gamma^2)`` per layer, so the layer count
    stays fixed and ``gamma`` should stay small.  ``converge_tol`` enables an
    early stop once the relative change of ``x`` falls below it.
    """
    y = np.asarray(y, dtype=np.float64)
    if len(y) != theta.M:
        raise DimensionError(f"y has length {len(y)}, interpolator expects {theta.M}")
    if lap.lap.rows != theta.N:
        raise DimensionError(f"Laplacian is {lap.lap.rows}x{lap.lap.cols}, need N={theta.N}")
    try:
        x0 = perturbed_interpolate(theta, p, y, params, trace=trace)
    except LinalgError as exc:
        raise DRLayerError(0, "initial interpolation", exc) from exc
    state = DRState.initial(x0)
    for k in range(params.n_dr_layers):
        try:
            z = h_step(theta, p, y, state, params, trace=trace)
        except LinalgError as exc:
            raise DRLayerError(k, "h-step", exc) from exc
        state = replace(state, z=z)
        try:
            v = g_step(lap, state, params, trace=trace)
        except LinalgError as exc:
            raise DRLayerError(k, "g-step", exc) from exc
        state = dr_update(replace(state, v=v), params)
        if converge_tol is not None:
            step = np.linalg.norm(state.x_curr - state.x_prev)
            if step <= converge_tol * max(np.linalg.norm(state.x_curr), 1e-300):
                break
    return state if return_state else state.x_curr


# -- dense oracles -----------------------------------------------------------


def _dense(a):
    if isinstance(a, BaseInterpolator):
        return a.theta.to_dense()
    if isinstance(a, (DirectedPerturbation, DenoisingLaplacian)):
        return a.to_dense()
    if hasattr(a, "to_dense"):
        return a.to_dense()
    return np.asarray(a, dtype=np.float64)


def _gate(n):
    if n > ORACLE_MAX_N:
        raise ValueError(f"dense oracles are limited to N <= {ORACLE_MAX_N}, got {n}")


def _count_m(part):
    return part if isinstance(part, (int, np.integer)) else part.M


def map_adjacency(theta):
    """Full adjacency with ``A_{M,N} = Theta^{-1}`` and zeros elsewhere."""
    t = _dense(theta)
    n, m = t.shape
    if n != m:
        raise DimensionError(f"Theta must be square to be inverted, got {t.shape}")
    _gate(n)
    a = np.zeros((m + n, m + n))
    a[:m, m:] = dense_inverse(t)
    return a


def map_system(adjacency, m, mu):
    """Normal-equation matrix ``C`` and right-hand-side map ``H^T`` of the GSV MAP problem."""
    size = adjacency.shape[0]
    h = np.eye(m, size)
    i_a = np.eye(size) - adjacency
    c = h.T @ h + mu * i_a.T @ h.T @ h @ i_a
    return c, h.T


def dense_map_solve(theta, y, mu):
    """Closed-form MAP estimate with the adjacency derived from ``Theta``."""
    a = map_adjacency(theta)
    y = np.asarray(y, dtype=np.float64)
    c, ht = map_system(a, len(y), mu)
    return lu_solve(c, ht @ y)


def two_prior_system(theta, p, lap, mu):
    """``(Q, H^T)`` with objective ``x^T Q x - 2 y^T H x + y^T y``."""
    t = _dense(theta)
    n, m = t.shape
    _gate(n)
    a = np.zeros((m + n, m + n))
    a[:m, m:] = dense_inverse(t) + _dense(p)
    c, ht = map_system(a, m, mu)
    g = np.eye(n, m + n, m)
    q = c + mu * g.T @ _dense(lap) @ g
    return q, ht


def dense_two_prior_solve(theta, p, lap, y, mu):
    q, ht = two_prior_system(theta, p, lap, mu)
    return lu_solve(q, ht @ np.asarray(y, dtype=np.float64))


def two_prior_gradient(x, theta, p, lap, y, mu):
    q, ht = two_prior_system(theta, p, lap, mu)
    return 2.0 * (q @ x - ht @ np.asarray(y, dtype=np.float64))


def cascade_interpolate_dense(theta, p, p2_directed, y):
    """Second directed perturbation applied on top of the first, by dense algebra."""
    t = _dense(theta)
    n = t.shape[0]
    _gate(n)
    eye = np.eye(n)
    theta_p = dense_inverse(eye + t @ _dense(p))
    theta_tilde = theta_p @ t
    y = np.asarray(y, dtype=np.float64)
    return lu_solve(eye + theta_tilde @ _dense(p2_directed), theta_tilde @ y)


def objective_value(x, y, part, shift_op, mu):
    """``||y - H x||^2 + mu ||H (x - A x)||^2`` for a full-grid shift operator."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = _count_m(part)
    if len(y) != m:
        raise DimensionError(f"y has length {len(y)}, expected M={m}")
    op = aslinearoperator(shift_op)
    fid = y - x[:m]
    prior = (x - op.matvec(x))[:m]
    return float(fid @ fid + mu * (prior @ prior))


def objective_value_two_prior(x, y, part, theta, p, lap, mu):
    """Fidelity plus the perturbed GSV prior plus the Laplacian prior on ``x_N``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = _count_m(part)
    t = _dense(theta)
    _gate(t.shape[0])
    x_m, x_n = x[:m], x[m:]
    fid = y - x_m
    prior = x_m - (lu_solve(t, x_n) + _dense(p) @ x_n)
    smooth = x_n @ (_dense(lap) @ x_n)
    return float(fid @ fid + mu * (prior @ prior) + mu * smooth)
