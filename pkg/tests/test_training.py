import json

import numpy as np
import pytest

from epinn.fields import GridField, MagneticSolver
from epinn.geometry import PlateDomain, build_mesh
from epinn.neural import BoxScaler, MagneticSurrogate, MlpSpec, forward, init_params
from epinn.training import (
    AdamState,
    MagneticDataset,
    TrainHistory,
    TrainingDivergedError,
    adam_step,
    factorial_designs,
    fit_regressor,
    generate_dataset,
    random_designs,
    train_snn,
    train_tepinn,
    train_thnn,
)


def test_adam_first_step_is_lr_times_sign():
    p = np.array([1.0, -2.0, 3.0])
    st = AdamState.for_params(p, lr=0.01)
    out = adam_step(st, p, np.array([0.5, -3.0, 0.0]))
    np.testing.assert_allclose(out, p - 0.01 * np.array([1.0, -1.0, 0.0]), atol=1e-9)
    assert st.step == 1


def test_adam_rejects_nonfinite_and_mismatched():
    p = np.zeros(2)
    with pytest.raises(TrainingDivergedError):
        adam_step(AdamState.for_params(p), p, np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        adam_step(AdamState.for_params(p), p, np.zeros(3))


def test_adam_minimizes_quadratic():
    p = np.array([3.0, -4.0])
    st = AdamState.for_params(p, lr=0.05)
    for _ in range(2000):
        p = adam_step(st, p, 2 * p)
    assert np.abs(p).max() < 1e-3


def test_history(tmp_path):
    h = TrainHistory()
    h.append(1, 5.0, 0.1)
    h.append(2, 4.0, 0.1, max_err=3.0)
    h.append(3, 3.0, 0.3, max_err=0.8)
    assert h.checkpoints() == [(2, 3.0), (3, 0.8)]
    assert h.epochs_to(1.0) == 3 and h.epochs_to(0.1) is None
    assert h.mean_epoch_seconds() == pytest.approx(0.5 / 3)
    with pytest.raises(ValueError):
        h.append(3, 1.0, 0.1)
    assert len(h.to_csv(tmp_path / "h.csv").read_text().splitlines()) == 4


def test_designs():
    f = factorial_designs(6)
    assert f.shape == (1296, 4) and f.min() == 5 and f.max() == 15
    r = random_designs(30, 0, exclude=f)
    assert r.shape == (30, 4) and np.all((r >= 5) & (r <= 15))
    np.testing.assert_array_equal(r, random_designs(30, 0, exclude=f))


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    ds = generate_dataset(root, MagneticSolver(), train_designs=[[5, 5, 5, 5], [15, 15, 15, 15]],
                          test_designs=[[10, 10, 10, 10]])
    return root, ds


def test_dataset_manifest(small_dataset):
    root, ds = small_dataset
    man = json.loads((root / "manifest.json").read_text())
    assert man["format"] == "epinn-dataset/1"
    assert len(ds.split("train")) == 2 and len(ds.split("test")) == 1
    X, q = ds.samples("train")
    g = ds.grid(ds.split("train")[0])
    assert X.shape == (2 * g.nx * g.ny, 6) and q.shape == (2 * g.nx * g.ny,)
    assert np.all(q >= 0)
    pts = np.array([[0.05, 0.014], [0.1, 0.0]])
    Xp, qp = ds.samples("test", pts)
    assert Xp.shape == (2, 6)


def test_dataset_resume_skips_existing(small_dataset):
    root, ds = small_dataset
    f = root / ds.split("train")[0]["file"]
    stamp = f.stat().st_mtime_ns
    again = generate_dataset(root, MagneticSolver(), train_designs=[[5, 5, 5, 5], [15, 15, 15, 15]],
                             test_designs=[[10, 10, 10, 10]])
    assert f.stat().st_mtime_ns == stamp
    assert again.records == MagneticDataset.load(root).records


def test_dataset_records_failures(tmp_path):
    ds = generate_dataset(tmp_path, MagneticSolver(), train_designs=[[5, 5, 5, 5], [1, 5, 5, 5]], test_designs=[[6, 6, 6, 6]])
    status = [r["status"] for r in ds.records]
    assert status == ["ok", "failed", "ok"]


def test_fit_regressor_learns_smooth_map():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (400, 2))
    y = np.sin(X[:, 0]) * X[:, 1]
    spec = MlpSpec((2, 16, 16, 1), "tanh")
    theta = fit_regressor(spec, X, y, epochs=300, batch_size=64, lr=3e-3)
    assert np.sqrt(np.mean((forward(spec, theta, X)[:, 0] - y) ** 2)) < 0.02


def test_train_tepinn_reduces_error():
    from epinn.fields import ThermalSolver
    mesh = build_mesh(PlateDomain(), 12, 6)
    solver = ThermalSolver(nx=49, ny=15)
    q = lambda x, y: 8e6 * np.ones_like(x)
    ref = solver.solve(q)
    Q = q(*mesh.gauss_points.T)
    _, hist = train_tepinn(mesh, Q, "energy", MlpSpec((2, 8, 8, 1)), epochs=200, reference=ref, checkpoint_every=50, lr=5e-3)
    errs = [m for _, m in hist.checkpoints()]
    assert errs[-1] < errs[0]
    with pytest.raises(ValueError):
        train_tepinn(mesh, Q, "residual", epochs=1)
    with pytest.raises(ValueError):
        train_tepinn(mesh, Q, "weak", epochs=1)


def test_train_thnn_keeps_surrogate_frozen():
    mspec = MlpSpec((6, 4, 1), "cubic-relu")
    mnn = MagneticSurrogate(mspec, init_params(mspec, 0), BoxScaler((5.0,) * 4 + (0, 0), (15.0,) * 4 + (0.12, 0.014)), 1e6)
    before = mnn.params.copy()
    mesh = build_mesh(PlateDomain(), 4, 2)
    hnn, theta, hist = train_thnn(mnn, mesh, MlpSpec((2, 4, 1)), hidden=(8,), n_xi=2, epochs=3)
    np.testing.assert_array_equal(mnn.params, before)
    assert len(hist.loss) == 3
    assert hnn.emit(theta, [[10, 10, 10, 10]]).shape == (1, 17)


def test_train_snn_shapes():
    xi = np.random.default_rng(0).uniform(5, 15, (20, 4))
    temps = 1000 + xi @ np.ones((4, 5))
    spec, theta, scaler, (m, s) = train_snn(xi, temps, epochs=5)
    assert spec.layer_sizes == (4, 64, 64, 5)
    assert forward(spec, theta, scaler(xi)).shape == (20, 5)
