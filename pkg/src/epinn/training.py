"""Optimizer, magnetic dataset generation and the training pipelines."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .fields import (
    XI_BOUNDS,
    CoupledSolver,
    GridField,
    InductorGeometry,
    MagneticSolver,
    SolverError,
    interpolation_matrix,
    skin_depth,
    skin_depth_harness,
)
from .geometry import PlateDomain, QuadMesh
from .losses import EnergyLossInputs, ResidualLossInputs, energy_loss, hyper_loss, residual_loss
from .neural import (
    BoxScaler,
    HyperNetwork,
    MagneticSurrogate,
    MlpSpec,
    OutputTransform,
    forward,
    init_params,
    predict_temperature,
)

logger = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    """Loss or gradient became non-finite."""


# ---------------------------------------------------------------------------
# ADAM


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(params, dtype=float), np.zeros_like(params, dtype=float), **kw)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected ADAM update; returns the new parameter vector."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        bad = int(np.sum(~np.isfinite(grads)))
        raise TrainingDivergedError(f"non-finite gradient at step {state.step + 1} ({bad} of {grads.size} entries)")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads * grads
    mhat = state.m / (1 - state.beta1**state.step)
    vhat = state.v / (1 - state.beta2**state.step)
    return params - state.lr * mhat / (np.sqrt(vhat) + state.eps)


def _check_loss(loss, epoch):
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"loss became {loss} at epoch {epoch}")


# ---------------------------------------------------------------------------
# history


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    max_err: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, epoch: int, loss: float, seconds: float, max_err: float = float("nan")):
        if self.epoch and epoch <= self.epoch[-1]:
            raise ValueError("epochs must be strictly increasing")
        self.epoch.append(int(epoch))
        self.loss.append(float(loss))
        self.seconds.append(float(seconds))
        self.max_err.append(float(max_err))

    def checkpoints(self):
        """(epoch, max_err) pairs where an error was evaluated."""
        return [(e, m) for e, m in zip(self.epoch, self.max_err) if np.isfinite(m)]

    def epochs_to(self, threshold: float):
        """First checkpoint epoch with error at or below ``threshold`` (None if never)."""
        for e, m in self.checkpoints():
            if m <= threshold:
                return e
        return None

    def mean_epoch_seconds(self) -> float:
        return float(np.mean(self.seconds)) if self.seconds else float("nan")

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "max_err", "seconds"])
            for row in zip(self.epoch, self.loss, self.max_err, self.seconds):
                w.writerow([row[0], repr(row[1]), "" if not np.isfinite(row[2]) else repr(row[2]), f"{row[3]:.6f}"])
        return path


# ---------------------------------------------------------------------------
# magnetic dataset


def factorial_designs(levels: int = 6, bounds=XI_BOUNDS, n_vars: int = 4) -> np.ndarray:
    vals = np.linspace(bounds[0], bounds[1], levels)
    return np.array(list(itertools.product(vals, repeat=n_vars)))


def random_designs(n: int, seed: int, bounds=XI_BOUNDS, n_vars: int = 4, exclude=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = []
    excl = set() if exclude is None else {tuple(np.round(e, 9)) for e in exclude}
    while len(out) < n:
        xi = rng.uniform(bounds[0], bounds[1], n_vars)
        if tuple(np.round(xi, 9)) not in excl:
            out.append(xi)
    return np.array(out)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class MagneticDataset:
    """Plate Joule-loss grids for a set of design vectors, stored as one file each."""

    root: Path
    records: list

    def split(self, name: str) -> list:
        return [r for r in self.records if r["split"] == name and r["status"] == "ok"]

    def xi(self, name: str) -> np.ndarray:
        return np.array([r["xi"] for r in self.split(name)])

    def grid(self, record) -> GridField:
        return GridField.load(self.root / record["file"])

    def samples(self, name: str, points: np.ndarray | None = None):
        """Stacked (xi, x, y) inputs and Q targets; grid nodes unless ``points`` given."""
        X, y = [], []
        interp = None
        for r in self.split(name):
            g = self.grid(r)
            if points is None:
                px, py = np.meshgrid(g.x, g.y, indexing="ij")
                pts = np.column_stack([px.ravel(), py.ravel()])
                q = g.values.ravel()
            else:
                if interp is None:
                    interp = interpolation_matrix(g.x, g.y, points)
                pts = points
                q = interp @ g.values.ravel()
            X.append(np.hstack([np.broadcast_to(r["xi"], (len(pts), len(r["xi"]))), pts]))
            y.append(q)
        return np.vstack(X), np.concatenate(y)

    @classmethod
    def load(cls, root) -> "MagneticDataset":
        root = Path(root)
        manifest = json.loads((root / "manifest.json").read_text())
        return cls(root, manifest["records"])


def check_skin_depth(solver: MagneticSolver, tol: float = 0.05) -> float:
    """Fitted decay length of the solver's discretization against the analytic skin depth."""
    mat = solver.materials
    _, _, fitted = skin_depth_harness(mat.rho_graphite, solver.omega, mat.mu_r)
    exact = skin_depth(mat.rho_graphite, solver.omega, mat.mu_r)
    if abs(fitted - exact) > tol * exact:
        raise SolverError(f"skin-depth check failed: fitted {fitted:.5g} m vs analytic {exact:.5g} m")
    return fitted


def generate_dataset(root, solver: MagneticSolver, levels: int = 6, n_test: int = 30, seed: int = 0,
                     train_designs=None, test_designs=None) -> MagneticDataset:
    """Solve the magnetic problem for a factorial training set and random test designs.

    Results go to ``root`` (one binary grid per design plus ``manifest.json``).
    Re-running skips designs whose file exists with a matching checksum.
    A failing solve is recorded in the manifest and skipped.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    check_skin_depth(solver)
    train = factorial_designs(levels) if train_designs is None else np.atleast_2d(train_designs)
    test = random_designs(n_test, seed, exclude=train) if test_designs is None else np.atleast_2d(test_designs)
    mpath = root / "manifest.json"
    previous = {}
    if mpath.exists():
        for r in json.loads(mpath.read_text())["records"]:
            previous[(r["split"], tuple(r["xi"]))] = r
    records = []
    done = 0
    for split, designs in (("train", train), ("test", test)):
        for i, xi in enumerate(designs):
            key = (split, tuple(float(v) for v in xi))
            fname = f"{split}_{i:05d}.grid"
            old = previous.get(key)
            if old and old["status"] == "ok" and (root / old["file"]).exists() and _sha256(root / old["file"]) == old["sha256"]:
                records.append(old)
                continue
            rec = {"split": split, "xi": list(key[1]), "file": fname}
            try:
                geom = InductorGeometry(key[1], solver.layout)
                Q = solver.plate_losses(solver.solve(geom))
                Q.save(root / fname)
                rec.update(status="ok", sha256=_sha256(root / fname))
            except (SolverError, ValueError) as exc:
                logger.warning("design %s failed: %s", key[1], exc)
                rec.update(status="failed", error=str(exc))
            records.append(rec)
            done += 1
            if done % 50 == 0:
                _write_manifest(mpath, solver, records)
    _write_manifest(mpath, solver, records)
    return MagneticDataset(root, records)


def _write_manifest(path: Path, solver: MagneticSolver, records):
    doc = {
        "format": "epinn-dataset/1",
        "layout": solver.layout.__dict__,
        "materials": solver.materials.__dict__,
        "grid": {"box": list(solver.grid_spec.box), "dx": solver.grid_spec.dx, "dy": solver.grid_spec.dy},
        "records": records,
    }
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(doc, indent=1))
    tmp.replace(path)


# ---------------------------------------------------------------------------
# supervised regression (mNN, sNN)


def mse_loss(params, spec: MlpSpec, X: np.ndarray, y: np.ndarray):
    r = forward(spec, params, X) - y
    return (r * r).sum() / y.size


def fit_regressor(spec: MlpSpec, X: np.ndarray, y: np.ndarray, epochs: int, batch_size: int = 1024,
                  lr: float = 1e-3, seed: int = 0, params=None, history: TrainHistory | None = None,
                  callback: Callable | None = None, lr_final: float | None = None) -> np.ndarray:
    """Minibatch ADAM on mean squared error. ``X``, ``y`` already scaled.

    With ``lr_final`` the step size decays geometrically from ``lr`` to
    ``lr_final`` over the run.
    """
    y = y.reshape(len(X), -1)
    rng = np.random.default_rng(seed)
    theta = init_params(spec, seed) if params is None else np.array(params, dtype=float)
    state = AdamState.for_params(theta, lr=lr)
    n = len(X)
    bs = min(batch_size, n)
    decay = 1.0 if lr_final is None or epochs < 2 else (lr_final / lr) ** (1.0 / (epochs - 1))
    for epoch in range(1, epochs + 1):
        state.lr = lr * decay ** (epoch - 1)
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n - bs + 1, bs):
            idx = order[s : s + bs]
            loss, g = ad.value_and_grad(mse_loss, theta, spec, X[idx], y[idx])
            _check_loss(loss, epoch)
            theta = adam_step(state, theta, g)
            total += loss
        if history is not None:
            history.append(epoch, total / max(1, n // bs), time.perf_counter() - t0)
        if callback is not None:
            callback(epoch, theta)
    return theta


def mnn_scaler(domain: PlateDomain = PlateDomain(), n_vars: int = 4) -> BoxScaler:
    lo, hi = XI_BOUNDS
    return BoxScaler((lo,) * n_vars + domain.lower, (hi,) * n_vars + domain.upper)


def surrogate_metrics(model: MagneticSurrogate, X: np.ndarray, q: np.ndarray) -> dict:
    pred = model.predict(X[:, :-2], X[:, -2:])
    err = np.abs(pred - q)
    qmax = float(np.max(np.abs(q)))
    return {
        "mae": float(err.mean()),
        "max_abs": float(err.max()),
        "mae_rel": float(err.mean() / qmax),
        "max_rel": float(err.max() / qmax),
        "q_max": qmax,
    }


def train_mnn(dataset: MagneticDataset, spec: MlpSpec = MlpSpec((6, 128, 128, 128, 1), "cubic-relu"),
              epochs: int = 200, batch_size: int = 1024, lr: float = 1e-3, seed: int = 0,
              domain: PlateDomain = PlateDomain(), lr_final: float | None = None):
    """Fit the magnetic surrogate on the training split; metrics on the test split.

    Relative errors are normalized by the largest test-set loss density.
    """
    X, q = dataset.samples("train")
    scaler = mnn_scaler(domain, X.shape[1] - 2)
    q_scale = float(np.max(np.abs(q)))
    hist = TrainHistory()
    theta = fit_regressor(spec, scaler(X), q / q_scale, epochs, batch_size, lr, seed, history=hist, lr_final=lr_final)
    model = MagneticSurrogate(spec, theta, scaler, q_scale)
    metrics = {"train": surrogate_metrics(model, X, q)}
    if dataset.split("test"):
        Xt, qt = dataset.samples("test")
        metrics["test"] = surrogate_metrics(model, Xt, qt)
    return model, metrics, hist


# ---------------------------------------------------------------------------
# thermal networks


def max_temperature_error(spec: MlpSpec, params, transform: OutputTransform, reference: GridField,
                          domain: PlateDomain) -> float:
    X, Y = np.meshgrid(reference.x, reference.y, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pred = predict_temperature(spec, params, transform, pts, BoxScaler(domain.lower, domain.upper))
    return float(np.max(np.abs(pred - reference.values.ravel())))


def train_tepinn(mesh: QuadMesh, Q: np.ndarray, loss_kind: str = "energy",
                 spec: MlpSpec = MlpSpec((2, 64, 64, 1), "tanh"), transform: OutputTransform = OutputTransform(),
                 epochs: int = 5000, reference: GridField | None = None, eta2: float | None = None,
                 seed: int = 0, lr: float = 1e-3, checkpoint_every: int = 100, stop_below: float | None = None,
                 conductivity: float = 60.0, h: float = 50.0, T0: float = 50.0, params=None):
    """Train one thermal network for a fixed heat source.

    ``Q`` is sampled at ``mesh.gauss_points``. With ``reference`` given, the
    max absolute temperature error is logged every ``checkpoint_every``
    epochs; ``stop_below`` ends training at the first checkpoint under it.
    """
    if loss_kind == "energy":
        inputs = EnergyLossInputs(mesh, Q, spec, transform, conductivity, h, T0)
        loss_fn = energy_loss
    elif loss_kind == "residual":
        if eta2 is None:
            raise ValueError("the residual loss needs the boundary weight eta2")
        inputs = ResidualLossInputs.from_mesh(mesh, Q, spec, eta2, transform=transform,
                                              conductivity=conductivity, h=h, T0=T0)
        loss_fn = residual_loss
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    theta = init_params(spec, seed) if params is None else np.array(params, dtype=float)
    state = AdamState.for_params(theta, lr=lr)
    hist = TrainHistory()
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        loss, g = ad.value_and_grad(loss_fn, theta, inputs)
        _check_loss(loss, epoch)
        theta = adam_step(state, theta, g)
        dt = time.perf_counter() - t0
        err = float("nan")
        if reference is not None and (epoch % checkpoint_every == 0 or epoch == epochs):
            err = max_temperature_error(spec, theta, transform, reference, mesh.domain)
        hist.append(epoch, loss, dt, err)
        if stop_below is not None and np.isfinite(err) and err <= stop_below:
            break
    return theta, hist


def make_hypernetwork(target: MlpSpec = MlpSpec((2, 24, 24, 1), "tanh"), hidden=(128, 128),
                      activation: str = "relu", scale: float = 0.1, seed: int = 0, n_vars: int = 4):
    """Hypernetwork description plus its initial parameters."""
    spec = MlpSpec((n_vars, *hidden, target.n_params), activation)
    base = init_params(target, seed)
    lo, hi = XI_BOUNDS
    hnn = HyperNetwork(spec, target, base, BoxScaler((lo,) * n_vars, (hi,) * n_vars), scale)
    return hnn, init_params(spec, seed + 1)


@dataclass
class HyperValidation:
    """Fixed design vectors with coupled reference temperatures on a grid."""

    xi: np.ndarray
    fields: list

    @classmethod
    def build(cls, coupled: CoupledSolver, n: int = 10, seed: int = 1234) -> "HyperValidation":
        xi = random_designs(n, seed)
        return cls(xi, [coupled.solve(x).T for x in xi])

    def errors(self, hnn: HyperNetwork, params, transform: OutputTransform, domain: PlateDomain):
        """(MAE, max abs) over all validation nodes."""
        emitted = hnn.emit(params, self.xi)
        abs_err = []
        sc = BoxScaler(domain.lower, domain.upper)
        for theta, ref in zip(emitted, self.fields):
            X, Y = np.meshgrid(ref.x, ref.y, indexing="ij")
            pred = predict_temperature(hnn.target, theta, transform, np.column_stack([X.ravel(), Y.ravel()]), sc)
            abs_err.append(np.abs(pred - ref.values.ravel()))
        e = np.concatenate(abs_err)
        return float(e.mean()), float(e.max())


def train_thnn(mnn: MagneticSurrogate, mesh: QuadMesh, target: MlpSpec = MlpSpec((2, 24, 24, 1), "tanh"),
               hidden=(128, 128), n_xi: int = 8, epochs: int = 1000, lr: float = 1e-3, seed: int = 0,
               scale: float = 0.1, transform: OutputTransform = OutputTransform(),
               validation: HyperValidation | None = None, checkpoint_every: int = 100,
               conductivity: float = 60.0, h: float = 50.0, T0: float = 50.0, lr_final: float | None = None):
    """Train the thermal hypernetwork through the frozen magnetic surrogate.

    Each epoch draws ``n_xi`` design vectors uniformly from the design box and
    takes one ADAM step on the summed energy loss of the emitted networks.
    With ``lr_final`` the step size decays geometrically from ``lr``.
    """
    hnn, theta = make_hypernetwork(target, hidden, "relu", scale, seed, len(mnn.scaler.lower) - 2)
    frozen = mnn.params.copy()
    rng = np.random.default_rng(seed + 2)
    state = AdamState.for_params(theta, lr=lr)
    hist = TrainHistory()
    lo, hi = XI_BOUNDS
    decay = 1.0 if lr_final is None or epochs < 2 else (lr_final / lr) ** (1.0 / (epochs - 1))
    for epoch in range(1, epochs + 1):
        state.lr = lr * decay ** (epoch - 1)
        t0 = time.perf_counter()
        batch = rng.uniform(lo, hi, (n_xi, hnn.spec.n_inputs))
        loss, g = ad.value_and_grad(hyper_loss, theta, batch, hnn, mnn, mesh, transform, conductivity, h, T0)
        _check_loss(loss, epoch)
        theta = adam_step(state, theta, g)
        err = float("nan")
        if validation is not None and (epoch % checkpoint_every == 0 or epoch == epochs):
            err = validation.errors(hnn, theta, transform, mesh.domain)[1]
        hist.append(epoch, loss, time.perf_counter() - t0, err)
    if not np.array_equal(frozen, mnn.params):
        raise AssertionError("magnetic surrogate parameters changed during hypernetwork training")
    return hnn, theta, hist


def train_snn(xi: np.ndarray, temps: np.ndarray, spec: MlpSpec | None = None, epochs: int = 2000,
              batch_size: int = 64, lr: float = 1e-3, seed: int = 0):
    """Supervised map from design vector to boundary temperatures (the sNN arm).

    Returns ``(spec, params, scaler, (t_mean, t_std))``.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    temps = np.atleast_2d(np.asarray(temps, dtype=float))
    if spec is None:
        spec = MlpSpec((xi.shape[1], 64, 64, temps.shape[1]), "tanh")
    lo, hi = XI_BOUNDS
    scaler = BoxScaler((lo,) * xi.shape[1], (hi,) * xi.shape[1])
    t_mean, t_std = float(temps.mean()), float(temps.std()) or 1.0
    theta = fit_regressor(spec, scaler(xi), (temps - t_mean) / t_std, epochs, batch_size, lr, seed)
    return spec, theta, scaler, (t_mean, t_std)
