"""Finite-difference coordinate descent over the scalar model parameters.

Every candidate update is checked against the validation loss and kept
only if that loss does not go up, so a tuned model is never worse on the
validation set than the model it started from.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .graphmodel import EdgeParams, N_FEATURES, checkerboard_partition
from .imaging import PatchGrid
from .linalg import DimensionError, LayerSchedule, LinalgError
from .pipeline import PreparedPatch, interpolate_patch, prepare_patch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tunable:
    """Handle on one scalar of a model.

    ``get(model)`` reads the value and ``set(model, value)`` returns a new
    model with it replaced.  Open bounds are honoured by clamping to the
    nearest representable value inside the interval.
    """

    name: str
    lo: float
    hi: float
    get: Callable = None
    set: Callable = None
    lo_open: bool = False
    hi_open: bool = False

    @property
    def lo_eff(self):
        return float(np.nextafter(self.lo, np.inf)) if self.lo_open else self.lo

    @property
    def hi_eff(self):
        return float(np.nextafter(self.hi, -np.inf)) if self.hi_open else self.hi

    def clamp(self, value):
        return min(max(float(value), self.lo_eff), self.hi_eff)

    def contains(self, value):
        return self.lo_eff <= value <= self.hi_eff


class TunableSet(tuple):
    """Ordered collection of :class:`Tunable` with unique names."""

    def __new__(cls, items=()):
        items = tuple(items)
        names = [t.name for t in items]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate tunable names in {names}")
        return super().__new__(cls, items)

    @property
    def names(self):
        return [t.name for t in self]

    def values(self, model):
        return {t.name: t.get(model) for t in self}

    def check_bounds(self, model):
        bad = [t.name for t in self if not t.contains(t.get(model))]
        if bad:
            raise ValueError(f"parameters out of bounds: {bad}")


def _solver_field(name):
    def get(model):
        return float(getattr(model.solver, name))

    def set_(model, value):
        return replace(model, solver=replace(model.solver, **{name: float(value)}))

    return get, set_


def _metric_diag(which, i):
    def get(model):
        return float(getattr(model, which).factor[i, i])

    def set_(model, value):
        return replace(model, **{which: getattr(model, which).with_diagonal(i, float(value))})

    return get, set_


def _schedule_entry(coeff, idx):
    def get(model):
        return float(getattr(model.solver.bicg_schedule, coeff)[idx])

    def set_(model, value):
        s = model.solver.bicg_schedule
        arrays = {"alpha": s.alpha.copy(), "beta": s.beta.copy()}
        arrays[coeff][idx] = value
        return replace(model, solver=replace(model.solver, bicg_schedule=LayerSchedule(**arrays)))

    return get, set_


def default_tunables(model=None, include_metric=True, include_schedule=True):
    """Gains, ``mu``, ``gamma``, ``d_star``, metric diagonals and schedule entries.

    Schedule entries are only included when ``model`` carries a schedule.
    """
    items = [
        Tunable("s", -1.0, 1.0,
                lambda m: float(m.gain_p), lambda m, v: replace(m, gain_p=float(v))),
        Tunable("s2", 0.0, 1.0,
                lambda m: float(m.gain_l), lambda m, v: replace(m, gain_l=float(v))),
        Tunable("mu", 0.0, 100.0, *_solver_field("mu"), lo_open=True),
        Tunable("gamma", 0.01, 0.99, *_solver_field("gamma"), lo_open=True, hi_open=True),
        Tunable("d_star", 0.0, 100.0,
                lambda m: float(m.edges.d_star),
                lambda m, v: replace(m, edges=replace(m.edges, d_star=float(v))),
                lo_open=True),
    ]
    if include_metric:
        for which, tag in (("metric_m", "m"), ("metric_r", "r")):
            for i in range(N_FEATURES):
                items.append(Tunable(f"metric_{tag}[{i}]", 0.0, 10.0, *_metric_diag(which, i)))
    if include_schedule and model is not None and model.solver.bicg_schedule is not None:
        s = model.solver.bicg_schedule
        for coeff in ("alpha", "beta"):
            for idx in np.ndindex(s.alpha.shape):
                label = ",".join(str(i) for i in idx)
                items.append(Tunable(f"{coeff}[{label}]", -math.inf, math.inf,
                                     *_schedule_entry(coeff, idx)))
    return TunableSet(items)


def select_tunables(names, model=None):
    """Subset of :func:`default_tunables` by name, in the given order."""
    pool = {t.name: t for t in default_tunables(model)}
    missing = [n for n in names if n not in pool]
    if missing:
        raise KeyError(f"unknown tunables {missing}; known: {sorted(pool)}")
    return TunableSet(pool[n] for n in names)


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 1e-3
    batch_size: int = 8
    patience: int = 5
    fd_epsilon: float = 1e-4
    max_epochs: int = 50
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("step_size", "fd_epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("batch_size", "patience", "max_epochs", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True, eq=False)
class TrainingPatch:
    truth: np.ndarray
    prepared: PreparedPatch

    @property
    def part(self):
        return self.prepared.part

    @property
    def y(self):
        return self.prepared.y

    @property
    def target(self):
        return self.truth[~self.part.mask]

    @classmethod
    def from_truth(cls, truth, part=None, edges=EdgeParams()):
        truth = np.asarray(truth, dtype=np.float64)
        if truth.ndim != 2:
            raise DimensionError(f"patch must be 2-D, got shape {truth.shape}")
        if part is None:
            part = checkerboard_partition(truth.shape[1], truth.shape[0])
        elif part.mask.shape != truth.shape:
            raise DimensionError(f"mask {part.mask.shape} does not match patch {truth.shape}")
        return cls(truth, prepare_patch(part, truth[part.mask], edges))


@dataclass(frozen=True, eq=False)
class PatchDataset:
    train: tuple
    val: tuple

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "val", tuple(self.val))

    def __len__(self):
        return len(self.train) + len(self.val)

    @classmethod
    def from_patches(cls, train, val, edges=EdgeParams()):
        return cls([TrainingPatch.from_truth(t, edges=edges) for t in train],
                   [TrainingPatch.from_truth(t, edges=edges) for t in val])

    @classmethod
    def from_images(cls, train_imgs, val_imgs, grid=PatchGrid(), per_image=4, seed=0,
                    edges=EdgeParams()):
        """Random ``patch_size`` crops (even offsets keep the checkerboard phase)."""
        rng = np.random.default_rng(seed)

        def crops(imgs):
            out = []
            for img in imgs:
                px = np.asarray(img, dtype=np.float64)
                ph, pw = grid.extent(px.shape[0]), grid.extent(px.shape[1])
                for _ in range(per_image):
                    r = 2 * rng.integers(0, (px.shape[0] - ph) // 2 + 1)
                    c = 2 * rng.integers(0, (px.shape[1] - pw) // 2 + 1)
                    out.append(px[r:r + ph, c:c + pw])
            return out

        return cls.from_patches(crops(train_imgs), crops(val_imgs), edges)


def loss_mse(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def batch_loss(model, batch, mode="dr", workers=1):
    """Mean per-patch MSE over missing pixels; ``inf`` if any solve fails."""
    def one(tp):
        try:
            x = interpolate_patch(tp.prepared, model, mode)
        except LinalgError as exc:
            log.debug("solver failure during tuning: %s", exc)
            return math.inf
        return loss_mse(x, tp.target) if np.all(np.isfinite(x)) else math.inf

    if not batch:
        raise ValueError("empty batch")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            losses = list(pool.map(one, batch))
    else:
        losses = [one(tp) for tp in batch]
    return float(np.mean(losses))


def fd_gradient(tunable, batch, model, eps=1e-4, loss=batch_loss):
    """Finite-difference derivative of ``loss(model, batch)`` along one parameter.

    Central difference when both ``theta +- eps`` are in bounds, one-sided
    otherwise.  Returns ``None`` when the loss is not finite at a probe point.
    """
    theta = tunable.get(model)
    up_ok = theta + eps <= tunable.hi_eff
    down_ok = theta - eps >= tunable.lo_eff
    if not (up_ok or down_ok):
        return None
    try:
        if up_ok and down_ok:
            hi = loss(tunable.set(model, theta + eps), batch)
            lo = loss(tunable.set(model, theta - eps), batch)
            g = (hi - lo) / (2.0 * eps)
        elif up_ok:
            g = (loss(tunable.set(model, theta + eps), batch) - loss(model, batch)) / eps
        else:
            g = (loss(model, batch) - loss(tunable.set(model, theta - eps), batch)) / eps
    except (LinalgError, ValueError) as exc:
        log.debug("gradient probe for %s failed: %s", tunable.name, exc)
        return None
    return g if math.isfinite(g) else None


def tune(model, dataset, cfg=TrainConfig(), tunables=None, loss=None):
    """Coordinate descent with an accept-only validation guard.

    Each epoch draws one shuffled training batch, estimates every
    coordinate's derivative on it, and tries ``theta - step * sign(g)`` one
    coordinate at a time.  A move is kept if the validation loss does not
    increase; the coordinate's step then doubles, otherwise it halves.
    Stops after ``cfg.patience`` epochs without a strict improvement.

    Returns ``(model, history)`` where ``history`` rows are
    ``{"epoch", "train_mse", "val_mse"}`` starting with epoch 0 (the input
    model).
    """
    if not dataset.train or not dataset.val:
        raise ValueError("tuning needs non-empty training and validation sets")
    if tunables is None:
        tunables = default_tunables(model)
    tunables = TunableSet(tunables)
    if loss is None:
        def loss(m, batch):
            return batch_loss(m, batch, workers=cfg.workers)

    tunables.check_bounds(model)
    rng = np.random.default_rng(cfg.seed)
    train = list(dataset.train)
    val = list(dataset.val)
    val_loss = loss(model, val)
    if not math.isfinite(val_loss):
        raise LinalgError("initial model fails on the validation set")
    baseline = val_loss
    history = [{"epoch": 0, "train_mse": loss(model, train), "val_mse": val_loss}]
    if not tunables:
        return model, history

    steps = {t.name: cfg.step_size for t in tunables}
    order = rng.permutation(len(train))
    cursor = 0
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        if cursor >= len(order):
            order = rng.permutation(len(train))
            cursor = 0
        batch = [train[i] for i in order[cursor:cursor + cfg.batch_size]]
        cursor += cfg.batch_size

        grads = {t.name: fd_gradient(t, batch, model, cfg.fd_epsilon, loss) for t in tunables}
        improved = False
        for t in tunables:
            g = grads[t.name]
            if g is None or g == 0.0:
                continue
            theta = t.get(model)
            cand = t.clamp(theta - steps[t.name] * math.copysign(1.0, g))
            if cand == theta:
                continue
            try:
                trial = t.set(model, cand)
            except ValueError:
                steps[t.name] *= 0.5
                continue
            trial_loss = loss(trial, val)
            if trial_loss <= val_loss:
                if trial_loss < val_loss:
                    improved = True
                    steps[t.name] *= 2.0
                model, val_loss = trial, trial_loss
            else:
                steps[t.name] *= 0.5
        history.append({"epoch": epoch, "train_mse": loss(model, train), "val_mse": val_loss})
        log.info("epoch %d: val_mse %.6g", epoch, val_loss)
        stale = 0 if improved else stale + 1
        if stale >= cfg.patience:
            break

    tunables.check_bounds(model)
    model = replace(model, training={
        "val_mse": val_loss,
        "baseline_val_mse": baseline,
        "epochs": history[-1]["epoch"],
    })
    return model, history


def write_history(history, path_or_file):
    """CSV with header ``epoch,train_mse,val_mse``."""
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "val_mse"])
        for row in history:
            w.writerow([row["epoch"], repr(float(row["train_mse"])), repr(float(row["val_mse"]))])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)


def denoisable_patches(count, size=16, level=0.5, noise=0.05, seed=0):
    """Flat patches with noise on the observed pixels only.

    The missing pixels of the truth are exactly ``level``, so smoothing the
    interpolated values towards their mean provably lowers the error.
    """
    rng = np.random.default_rng(seed)
    part = checkerboard_partition(size, size)
    out = []
    for _ in range(count):
        t = np.full((size, size), float(level))
        t[part.mask] += noise * rng.standard_normal(part.M)
        out.append(np.clip(t, 0.0, 1.0))
    return out
