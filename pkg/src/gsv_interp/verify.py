"""Dense-oracle self checks.

Each check builds small random problems, runs an engine and compares it
against an explicit dense computation.  :func:`run_checks` accepts
replacement implementations so a deliberately broken engine can be shown
to fail its row.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .graphmodel import (
    BaseInterpolator,
    DenoisingLaplacian,
    DirectedPerturbation,
    EdgeParams,
    MetricMatrix,
    checkerboard_partition,
    build_bilinear_theta,
    build_denoising_laplacian,
    build_directed_perturbation,
    extract_features,
    laplacian_from_edges,
    signed_weight,
    unsigned_weight,
)
from .imaging import PatchGrid, scatter
from .linalg import SparseMatrix, lu_solve
from .mapsolver import (
    DRState,
    SolverParams,
    dense_map_solve,
    dense_two_prior_solve,
    dr_run,
    g_step,
    h_step,
    objective_value_two_prior,
    perturbed_interpolate,
    two_prior_gradient,
)
from .tuner import TrainConfig


@dataclass(frozen=True)
class RandomProblem:
    theta: BaseInterpolator
    p: DirectedPerturbation
    lap: DenoisingLaplacian
    y: np.ndarray

    @property
    def n(self):
        return self.theta.N


def random_theta(rng, n):
    """Diagonally dominant, row-stochastic and therefore invertible."""
    t = rng.random((n, n)) + n * np.eye(n) * rng.uniform(0.2, 1.0)
    t /= t.sum(axis=1, keepdims=True)
    return BaseInterpolator(SparseMatrix.from_dense(t), "custom")


def random_laplacian(rng, n, density=0.4, gain=1.0):
    i, j = np.triu_indices(n, 1)
    keep = rng.random(len(i)) < density
    return DenoisingLaplacian(laplacian_from_edges(n, i[keep], j[keep], rng.random(keep.sum())), gain)


def random_problem(rng, n, max_gain_p=0.3, max_gain_l=0.5):
    theta = random_theta(rng, n)
    pd = rng.uniform(-0.9, 0.9, (n, n)) * (rng.random((n, n)) < 0.4)
    p = DirectedPerturbation(SparseMatrix.from_dense(pd), rng.uniform(0.0, max_gain_p))
    lap = random_laplacian(rng, n, gain=rng.uniform(0.0, max_gain_l))
    return RandomProblem(theta, p, lap, rng.random(n))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    detail: str = ""


def _rel(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


DEFAULT_IMPLS = {
    "perturbed_interpolate": perturbed_interpolate,
    "h_step": h_step,
    "g_step": g_step,
    "dr_run": dr_run,
    "signed_weight": signed_weight,
    "unsigned_weight": unsigned_weight,
}


def check_defaults(impl, rng):
    want = {
        "patch_size": 64, "n_bicg_layers": 15, "n_dr_layers": 15,
        "batch_size": 8, "step_size": 1e-3, "patience": 5,
    }
    s, c = SolverParams(), TrainConfig()
    got = {
        "patch_size": PatchGrid().patch_size, "n_bicg_layers": s.n_bicg_layers,
        "n_dr_layers": s.n_dr_layers, "batch_size": c.batch_size,
        "step_size": c.step_size, "patience": c.patience,
    }
    bad = [k for k in want if got[k] != want[k]]
    return 0.0 if not bad else 1.0, 0.0, ", ".join(f"{k}={got[k]}" for k in bad)


def check_map_closed_form(impl, rng, trials=12):
    worst = 0.0
    for t in range(trials):
        n = (4, 8, 16)[t % 3]
        theta = random_theta(rng, n)
        y = rng.standard_normal(n)
        mu = rng.uniform(0.1, 10.0)
        x = dense_map_solve(theta, y, mu)
        worst = max(worst, _rel(x, np.r_[y, theta.apply(y)]))
    return worst, 1e-8, ""


def check_interp(impl, rng, trials=10):
    worst = 0.0
    for t in range(trials):
        n = (8, 16, 32, 64)[t % 4]
        pr = random_problem(rng, n)
        params = SolverParams(n_bicg_layers=2 * n)
        x = impl["perturbed_interpolate"](pr.theta, pr.p, pr.y, params)
        t_dense = pr.theta.theta.to_dense()
        ref = lu_solve(np.eye(n) + t_dense @ pr.p.to_dense(), t_dense @ pr.y)
        worst = max(worst, _rel(x, ref))
    return worst, 1e-6, ""


def check_h_step(impl, rng, trials=10):
    worst = 0.0
    for t in range(trials):
        n = (8, 16, 32)[t % 3]
        pr = random_problem(rng, n)
        params = SolverParams(gamma=rng.uniform(0.05, 0.9), n_bicg_layers=2 * n)
        state = DRState(rng.random(n), rng.random(n))
        z = impl["h_step"](pr.theta, pr.p, pr.y, state, params)
        t_dense = pr.theta.theta.to_dense()
        rhs = t_dense @ (pr.y + (state.x_prev - state.x_curr) / (2 * params.gamma))
        ref = lu_solve(np.eye(n) + t_dense @ pr.p.to_dense(), rhs)
        worst = max(worst, _rel(z, ref))
    return worst, 1e-6, ""


def check_g_step(impl, rng, trials=10):
    worst = 0.0
    for t in range(trials):
        n = (8, 16, 32)[t % 3]
        lap = random_laplacian(rng, n, gain=rng.uniform(0.1, 1.0))
        params = SolverParams(mu=rng.uniform(0.1, 5.0), gamma=rng.uniform(0.05, 0.9),
                              n_cg_layers=2 * n)
        state = DRState(rng.random(n), rng.random(n), z=rng.random(n))
        v = impl["g_step"](lap, state, params)
        a = 2 * params.mu * lap.to_dense() + np.eye(n) / params.gamma
        ref = lu_solve(a, (2 * state.z - state.x_curr) / params.gamma)
        worst = max(worst, _rel(v, ref))
    return worst, 1e-8, ""


def check_baseline(impl, rng, trials=4):
    worst = 0.0
    for t in range(trials):
        size = (4, 8, 16, 16)[t]
        part = checkerboard_partition(size, size)
        theta = build_bilinear_theta(part)
        y = rng.random(part.M)
        base = scatter(part, y, theta.apply(y))
        fo = extract_features(base, part, "observed")
        fm = extract_features(base, part, "missing")
        p = build_directed_perturbation(fo, fm, MetricMatrix.identity(), EdgeParams(), part)
        lap = build_denoising_laplacian(fm, MetricMatrix.identity(scale=0.5), EdgeParams(), part)
        x = impl["dr_run"](theta, p, lap, y, SolverParams())
        worst = max(worst, float(np.max(np.abs(x - theta.apply(y)))))
    return worst, 1e-12, "abs"


def check_objective(impl, rng, trials=8):
    """DR output must not raise the objective above the base interpolation,
    and the dense optimum must lower-bound both."""
    worst = 0.0
    failures = 0
    for _ in range(trials):
        pr = random_problem(rng, 8)
        params = SolverParams(n_bicg_layers=16, n_cg_layers=16)
        n, mu = pr.n, params.mu
        x = impl["dr_run"](pr.theta, pr.p, pr.lap, pr.y, params)
        f_dr = objective_value_two_prior(np.r_[pr.y, x], pr.y, n, pr.theta, pr.p, pr.lap, mu)
        f_base = objective_value_two_prior(
            np.r_[pr.y, pr.theta.apply(pr.y)], pr.y, n, pr.theta, pr.p, pr.lap, mu
        )
        x_opt = dense_two_prior_solve(pr.theta, pr.p, pr.lap, pr.y, mu)
        f_opt = objective_value_two_prior(x_opt, pr.y, n, pr.theta, pr.p, pr.lap, mu)
        grad = two_prior_gradient(x_opt, pr.theta, pr.p, pr.lap, pr.y, mu)
        slack = 1e-12 * max(1.0, abs(f_base))
        if f_dr > f_base + slack or f_opt > min(f_dr, f_base) + slack:
            failures += 1
        worst = max(worst, float(np.linalg.norm(grad)))
    return (worst if not failures else np.inf), 1e-8, f"{failures} ordering violations"


def check_adjoints(impl, rng, trials=6):
    worst = 0.0
    for _ in range(trials):
        pr = random_problem(rng, 12, max_gain_p=1.0)
        v, w = rng.standard_normal(12), rng.standard_normal(12)
        for fwd, adj in ((pr.theta.apply, pr.theta.apply_t), (pr.p.apply, pr.p.apply_t)):
            lhs, rhs = fwd(v) @ w, v @ adj(w)
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return worst, 1e-12, ""


def check_weights(impl, rng):
    sw, uw = impl["signed_weight"], impl["unsigned_weight"]
    d_star = rng.uniform(0.5, 10.0)
    d = np.linspace(-50.0, 50.0, 2001)
    err = float(np.max(np.abs(sw(d, d_star) + np.tanh((d - d_star) / 2.0))))
    err = max(err, abs(float(sw(d_star, d_star))), abs(float(uw(0.0)) - 1.0))
    return err, 1e-12, ""


def check_laplacian(impl, rng, trials=5):
    worst = 0.0
    for _ in range(trials):
        size = 16
        part = checkerboard_partition(size, size)
        theta = build_bilinear_theta(part)
        y = rng.random(part.M)
        fm = extract_features(scatter(part, y, theta.apply(y)), part, "missing")
        lap = build_denoising_laplacian(fm, MetricMatrix.identity(scale=0.5), EdgeParams(),
                                        part).with_gain(1.0)
        dense = lap.to_dense()
        worst = max(worst, float(np.max(np.abs(dense.sum(axis=1)))))
        if not np.array_equal(dense, dense.T):
            return np.inf, 1e-12, "asymmetric"
        xs = rng.standard_normal((20, part.N))
        quad = np.einsum("ij,jk,ik->i", xs, dense, xs)
        if quad.min() < -1e-10:
            return np.inf, 1e-12, f"negative quadratic form {quad.min():.3g}"
    return worst, 1e-12, ""


def check_backends(impl, rng):
    names = _kernels.available_backends()
    if len(names) < 2:
        return 0.0, 1e-12, "only the python backend is available"
    a = SparseMatrix.from_dense(rng.standard_normal((40, 30)) * (rng.random((40, 30)) < 0.2))
    x, w = rng.standard_normal(30), rng.standard_normal(40)
    outs = [tuple(f(a.indptr, a.indices, a.data, v, n) for f, v, n in
                  zip(_kernels.get_backend(b), (x, w), (40, 30))) for b in names]
    err = max(_rel(outs[0][k], outs[1][k]) for k in range(2))
    return err, 1e-12, "/".join(names)


CHECKS = (
    ("protocol defaults", check_defaults),
    ("MAP closed form", check_map_closed_form),
    ("perturbed interpolation vs LU", check_interp),
    ("h-step vs LU", check_h_step),
    ("g-step vs LU", check_g_step),
    ("zero-gain DR equals base", check_baseline),
    ("objective ordering", check_objective),
    ("adjoint identities", check_adjoints),
    ("edge weights", check_weights),
    ("Laplacian properties", check_laplacian),
    ("kernel backend agreement", check_backends),
)


def run_checks(impls=None, seed=0):
    """Run every check; ``impls`` overrides entries of :data:`DEFAULT_IMPLS`."""
    impl = dict(DEFAULT_IMPLS)
    impl.update(impls or {})
    out = []
    for i, (name, fn) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        try:
            err, tol, detail = fn(impl, rng)
        except Exception as exc:  # a crashing engine fails its row, not the suite
            out.append(CheckResult(name, False, float("inf"), float("nan"),
                                   f"{type(exc).__name__}: {exc}"))
            continue
        out.append(CheckResult(name, bool(err <= tol), float(err), tol, detail))
    return out


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  status  max_rel_err  tol"]
    for r in results:
        lines.append(
            f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.max_error:11.3e}  "
            f"{r.tolerance:.0e}" + (f"  {r.detail}" if r.detail else "")
        )
    return "\n".join(lines)
