"""Release gate: the ten acceptance criteria at their stated tolerances.

Each test records a single PASS/FAIL line, collected in the
"acceptance criteria" section of the pytest summary.
"""

import time

import numpy as np
import pytest

from gsv_interp.graphmodel import (
    EdgeParams,
    MetricMatrix,
    build_bilinear_theta,
    build_denoising_laplacian,
    checkerboard_partition,
    extract_features,
    signed_weight,
    unsigned_weight,
)
from gsv_interp.imaging import (
    PatchGrid,
    apply_checkerboard_mask,
    baseline_interpolate,
    extract_patches,
    psnr,
    quantize,
    scatter,
)
from gsv_interp.linalg import lu_solve
from gsv_interp.mapsolver import (
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
from gsv_interp.pipeline import InterpModel, build_graphs, interpolate_image, prepare_patch
from gsv_interp.tuner import (
    PatchDataset,
    TrainConfig,
    default_tunables,
    denoisable_patches,
    select_tunables,
    tune,
)
from gsv_interp.verify import random_laplacian, random_problem, random_theta, run_checks


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - b) / np.linalg.norm(b))


def _eight_bit(px):
    return quantize(np.clip(px, 0, 1)) / 255.0


def _texture(size, seed=0):
    rng = np.random.default_rng(seed)
    r, c = np.mgrid[0:size, 0:size] / size
    px = (0.45 + 0.2 * np.sin(9 * r + 4 * c) * np.cos(7 * c)
          + 0.15 * (((r * 6).astype(int) + (c * 6).astype(int)) % 2)
          + 0.02 * rng.standard_normal((size, size)))
    return _eight_bit(px)


def _gradient(size):
    r, c = np.mgrid[0:size, 0:size] / (size - 1)
    return _eight_bit(0.1 + 0.5 * r + 0.3 * c)


def test_criterion_01_map_closed_form(criterion):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        n = (4, 8, 16)[i % 3]
        theta = random_theta(rng, n)
        y = rng.standard_normal(n)
        x = dense_map_solve(theta, y, rng.uniform(0.1, 10.0))
        worst = max(worst, _rel(x, np.r_[y, theta.apply(y)]))
    elapsed = time.perf_counter() - t0
    criterion(1, worst <= 1e-8 and elapsed < 1.0,
              f"50 instances, max rel err {worst:.2e} (<= 1e-8), {elapsed * 1e3:.0f} ms (< 1 s)")


def test_criterion_02_matrix_free_interpolation(criterion):
    rng = np.random.default_rng(2)
    worst, slowest = 0.0, 0.0
    for i in range(100):
        n = int(rng.integers(2, 65)) if i % 4 else 64
        pr = random_problem(rng, n)
        params = SolverParams(n_bicg_layers=n)
        t0 = time.perf_counter()
        x = perturbed_interpolate(pr.theta, pr.p, pr.y, params)
        slowest = max(slowest, time.perf_counter() - t0)
        t = pr.theta.theta.to_dense()
        worst = max(worst, _rel(x, lu_solve(np.eye(n) + t @ pr.p.to_dense(), t @ pr.y)))
    criterion(2, worst <= 1e-6 and slowest < 0.05,
              f"100 instances n<=64, max rel err {worst:.2e} (<= 1e-6), "
              f"slowest solve {slowest * 1e3:.2f} ms (< 50 ms)")


def test_criterion_03_proximal_steps(criterion):
    rng = np.random.default_rng(3)
    worst_g = worst_h = 0.0
    for i in range(100):
        n = int(rng.integers(2, 49))
        params = SolverParams(mu=rng.uniform(0.1, 5.0), gamma=rng.uniform(0.02, 0.95),
                              n_bicg_layers=n, n_cg_layers=n)
        lap = random_laplacian(rng, n, density=rng.uniform(0.1, 0.9), gain=rng.uniform(0.05, 1.0))
        state = DRState(rng.random(n), rng.random(n), z=rng.random(n))
        a = 2 * params.mu * lap.to_dense() + np.eye(n) / params.gamma
        v = g_step(lap, state, params)
        worst_g = max(worst_g, _rel(v, lu_solve(a, (2 * state.z - state.x_curr) / params.gamma)))

        pr = random_problem(rng, n)
        t = pr.theta.theta.to_dense()
        rhs = t @ (pr.y + (state.x_prev - state.x_curr) / (2 * params.gamma))
        z = h_step(pr.theta, pr.p, pr.y, state, params)
        worst_h = max(worst_h, _rel(z, lu_solve(np.eye(n) + t @ pr.p.to_dense(), rhs)))
    criterion(3, worst_g <= 1e-8 and worst_h <= 1e-6,
              f"g-step max rel err {worst_g:.2e} (<= 1e-8), h-step {worst_h:.2e} (<= 1e-6)")


def test_criterion_04_zero_gain_is_base(criterion):
    worst = 0.0
    count = 0
    for img in (_texture(160, 4), _gradient(128)):
        patches, _ = extract_patches(img, PatchGrid())
        for patch in patches:
            part = checkerboard_partition(patch.shape[1], patch.shape[0])
            prep = prepare_patch(part, patch[part.mask])
            model = InterpModel()
            p, lap = build_graphs(prep, model)
            x = dr_run(prep.theta, p, lap, prep.y, model.solver)
            worst = max(worst, float(np.max(np.abs(x - prep.theta.apply(prep.y)))))
            count += 1
    criterion(4, worst <= 1e-12, f"{count} patches, max |dr - theta y| = {worst:.1e} (<= 1e-12)")


def test_criterion_05_objective_ordering(criterion):
    rng = np.random.default_rng(5)
    params = SolverParams(n_bicg_layers=16, n_cg_layers=16)
    mu = params.mu
    raised, unbounded, worst_grad = 0, 0, 0.0
    for _ in range(20):
        pr = random_problem(rng, 8)
        x = dr_run(pr.theta, pr.p, pr.lap, pr.y, params)
        args = (pr.y, 8, pr.theta, pr.p, pr.lap, mu)
        f_dr = objective_value_two_prior(np.r_[pr.y, x], *args)
        f_base = objective_value_two_prior(np.r_[pr.y, pr.theta.apply(pr.y)], *args)
        x_opt = dense_two_prior_solve(pr.theta, pr.p, pr.lap, pr.y, mu)
        f_opt = objective_value_two_prior(x_opt, *args)
        raised += f_dr > f_base
        unbounded += f_opt > min(f_dr, f_base) + 1e-12
        g = two_prior_gradient(x_opt, pr.theta, pr.p, pr.lap, pr.y, mu)
        worst_grad = max(worst_grad, float(np.linalg.norm(g)))
    criterion(5, raised == 0 and unbounded == 0 and worst_grad <= 1e-8,
              f"20 instances, objective raised {raised}x, optimum above DR/base {unbounded}x, "
              f"max stationarity grad {worst_grad:.1e} (<= 1e-8)")


def test_criterion_06_edge_weights(criterion):
    d = np.linspace(-50, 50, 20001)
    err = 0.0
    midpoint_ok = True
    for d_star in (0.5, 4.0, 17.0):
        err = max(err, float(np.max(np.abs(signed_weight(d, EdgeParams(d_star=d_star))
                                           + np.tanh((d - d_star) / 2)))))
        midpoint_ok &= signed_weight(d_star, EdgeParams(d_star=d_star)) == 0.0
    unit = unsigned_weight(0.0) == 1.0
    criterion(6, midpoint_ok and err <= 1e-12 and unit,
              f"w(d*)==0: {midpoint_ok}, max |w + tanh| {err:.1e} (<= 1e-12), w'(0)==1: {unit}")


def test_criterion_07_laplacian(criterion):
    rng = np.random.default_rng(7)
    worst_sum, min_quad, symmetric, count = 0.0, np.inf, True, 0
    for img in (_texture(96, 1), _gradient(64)):
        for patch in extract_patches(img, PatchGrid(32, 24))[0]:
            part = checkerboard_partition(patch.shape[1], patch.shape[0])
            theta = build_bilinear_theta(part)
            y = patch[part.mask]
            fm = extract_features(scatter(part, y, theta.apply(y)), part, "missing")
            metric = MetricMatrix(np.tril(rng.random((8, 8))))
            lap = build_denoising_laplacian(fm, metric, EdgeParams(), part).with_gain(1.0)
            dense = lap.to_dense()
            worst_sum = max(worst_sum, float(np.max(np.abs(dense.sum(axis=1)))))
            symmetric &= np.array_equal(dense, dense.T)
            xs = rng.standard_normal((100, part.N))
            min_quad = min(min_quad, float(np.einsum("ij,jk,ik->i", xs, dense, xs).min()))
            count += 1
    criterion(7, worst_sum <= 1e-12 and symmetric and min_quad >= -1e-10,
              f"{count} Laplacians, max |row sum| {worst_sum:.1e}, exact symmetry {symmetric}, "
              f"min x'Lx {min_quad:.3g} (>= -1e-10)")


def test_criterion_08_tuning(criterion):
    img = _texture(80, 8)
    patches = extract_patches(img, PatchGrid(16, 16))[0][:20]
    synth = PatchDataset.from_patches(patches[:16], patches[16:])
    model, hist = tune(InterpModel(), synth, TrainConfig(max_epochs=3),
                       default_tunables(InterpModel()))
    vals = [h["val_mse"] for h in hist]
    monotone = all(b <= a for a, b in zip(vals, vals[1:]))

    den = PatchDataset.from_patches(denoisable_patches(12, seed=11), denoisable_patches(8, seed=12))
    tuned, dh = tune(InterpModel(), den, TrainConfig(max_epochs=15), select_tunables(["s2", "mu"]))
    before, after = dh[0]["val_mse"], dh[-1]["val_mse"]
    drop = (before - after) / before
    criterion(8, monotone and vals[-1] <= vals[0] and tuned.gain_l > 0 and drop >= 0.01,
              f"20-patch set val MSE {vals[0]:.3e} -> {vals[-1]:.3e} (non-increasing {monotone}); "
              f"denoisable set s2={tuned.gain_l:.3g}, val MSE -{100 * drop:.1f}% (>= 1%)")


def test_criterion_09_end_to_end(criterion):
    img = _texture(512, 9)
    y, part = apply_checkerboard_mask(img)
    masked = np.where(part.mask, img, 0.0)
    strawman = np.where(part.mask, img, 0.5)
    model = InterpModel(gain_l=0.1)
    t0 = time.perf_counter()
    out, report = interpolate_image(masked, part.mask, model, "dr", threads=1)
    elapsed = time.perf_counter() - t0
    gain_db = psnr(out, img) - psnr(strawman, img)

    smooth = _gradient(256)
    ys, ps = apply_checkerboard_mask(smooth)
    base_db = psnr(baseline_interpolate(ys, ps, build_bilinear_theta(ps)), smooth)
    ok = gain_db >= 10 and base_db >= 40 and elapsed < 60 and not report["failures"]
    criterion(9, ok,
              f"dr PSNR {psnr(out, img):.2f} dB vs strawman {psnr(strawman, img):.2f} dB "
              f"(+{gain_db:.1f} >= 10); gradient baseline {base_db:.1f} dB (>= 40); "
              f"512x512 in {elapsed:.1f} s (< 60)")


def test_criterion_10_protocol_defaults(criterion):
    grid, solver, cfg = PatchGrid(), SolverParams(), TrainConfig()
    got = (grid.patch_size, solver.n_bicg_layers, solver.n_dr_layers,
           cfg.batch_size, cfg.step_size, cfg.patience)
    row = next(r for r in run_checks() if r.name == "protocol defaults")
    criterion(10, got == (64, 15, 15, 8, 1e-3, 5) and row.passed,
              f"patch {got[0]}, BiCG {got[1]}, DR {got[2]}, batch {got[3]}, step {got[4]}, "
              f"patience {got[5]}; verify row {'PASS' if row.passed else 'FAIL'}")
