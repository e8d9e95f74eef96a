import numpy as np
import pytest

from epinn.fields import (
    CoupledSolver,
    GridField,
    InductorGeometry,
    InductorLayout,
    MagneticSolver,
    SingularSystemError,
    ThermalSolver,
    interpolate,
    interpolation_matrix,
    skin_depth,
    skin_depth_harness,
    solve_thermal_fd,
    total_induced_power,
    trapezoid_weights,
)
from epinn.geometry import PlateDomain

L, H, LAM, HC, T0 = 0.12, 0.014, 60.0, 50.0, 50.0


def mms_exact(x, y):
    return 400.0 + 300.0 * np.cos(np.pi * x / L) * (1 + y / H) ** 2


def mms_source(x, y):
    c = np.cos(np.pi * x / L)
    lap = -300.0 * (np.pi / L) ** 2 * c * (1 + y / H) ** 2 + 300.0 * c * 2 / H**2
    return -LAM * lap


def mms_flux(x, y, nx, ny):
    dtdx = -300.0 * np.pi / L * np.sin(np.pi * x / L) * (1 + y / H) ** 2
    dtdy = 300.0 * np.cos(np.pi * x / L) * 2 * (1 + y / H) / H
    return LAM * (dtdx * nx + dtdy * ny) + HC * (mms_exact(x, y) - T0)


def test_zero_source_gives_ambient():
    T = ThermalSolver(nx=31, ny=8).solve(np.zeros((31, 8)))
    np.testing.assert_allclose(T.values, T0, atol=1e-10)


def test_manufactured_solution_converges_at_second_order():
    errs = []
    for n in (1, 2, 4):
        s = ThermalSolver(nx=24 * n + 1, ny=6 * n + 1)
        T = s.solve(mms_source, boundary_flux=mms_flux)
        X, Y = np.meshgrid(s.x, s.y, indexing="ij")
        errs.append(np.abs(T.values - mms_exact(X, Y)).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8), (errs, rates)


def test_energy_balance():
    s = ThermalSolver(nx=61, ny=15)
    X, Y = np.meshgrid(s.x, s.y, indexing="ij")
    q = 1e7 * np.exp(-((X - 0.05) ** 2) / 1e-3) * (Y / H) ** 2
    T = s.solve(q)
    source = np.sum(q * s.area)
    lost = np.sum(HC * (T.values - T0) * s.robin_length)
    assert lost == pytest.approx(source, rel=1e-10)


def test_maximum_principle():
    rng = np.random.default_rng(3)
    s = ThermalSolver(nx=41, ny=9)
    T = s.solve(rng.uniform(0, 5e6, s.shape))
    assert T.values.min() >= T0


def test_no_exchange_with_net_heat_is_an_error():
    s = ThermalSolver(nx=11, ny=4, h=0.0)
    with pytest.raises(SingularSystemError):
        s.solve(np.ones(s.shape))


def test_no_exchange_zero_source_pins_mean():
    s = ThermalSolver(nx=11, ny=4, h=0.0)
    T = s.solve(np.zeros(s.shape))
    np.testing.assert_allclose(T.values, T0, atol=1e-8)


def test_source_shape_checked():
    with pytest.raises(ValueError):
        ThermalSolver(nx=11, ny=4).solve(np.zeros((4, 11)))


def test_fd_wrapper_matches_solver():
    s = ThermalSolver(nx=21, ny=5)
    q = GridField(s.x, s.y, np.full(s.shape, 1e6), kind="Q")
    np.testing.assert_allclose(solve_thermal_fd(q).values, s.solve(q).values)


def test_skin_depth_harness():
    delta = skin_depth(7.76e-6, 2 * np.pi * 4250)
    assert delta == pytest.approx(0.02150, abs=2e-5)
    _, mag, fitted = skin_depth_harness(7.76e-6, 2 * np.pi * 4250)
    assert fitted == pytest.approx(delta, rel=0.01)
    assert mag[0] == pytest.approx(1.0)


def test_geometry_bounds():
    with pytest.raises(ValueError):
        InductorGeometry((4.9, 10, 10, 10))
    with pytest.raises(ValueError):
        InductorGeometry((10, 10, 10))


@pytest.fixture(scope="module")
def magnetic():
    return MagneticSolver()


def test_zero_current_gives_zero_field(magnetic):
    lay = InductorLayout(current_rms=0.0)
    s = MagneticSolver(layout=lay)
    A = s.solve(InductorGeometry((10, 10, 10, 10), lay))
    assert np.abs(A.values).max() == 0.0


def test_mirror_symmetry(magnetic):
    A = magnetic.solve(InductorGeometry((6, 9, 12, 14)))
    x = magnetic.x
    np.testing.assert_allclose(x, -x[::-1], atol=1e-12)
    np.testing.assert_allclose(A.values, A.values[::-1, :], rtol=1e-8, atol=1e-12 * np.abs(A.values).max())


def test_power_identity(magnetic):
    geom = InductorGeometry((5, 13, 15, 15))
    A = magnetic.solve(geom)
    p_src = magnetic.delivered_power(A, geom)
    p_eddy = magnetic.eddy_current_power(A)
    p_half = total_induced_power(magnetic.plate_losses(A))
    assert p_src == pytest.approx(p_eddy, rel=1e-9)
    assert 2 * p_half == pytest.approx(p_eddy, rel=1e-9)


def test_power_falls_with_gap(magnetic):
    near = total_induced_power(magnetic.plate_losses(magnetic.solve(InductorGeometry((5,) * 4))))
    far = total_induced_power(magnetic.plate_losses(magnetic.solve(InductorGeometry((15,) * 4))))
    assert near > far > 0


def test_iterative_matches_direct(magnetic):
    geom = InductorGeometry((8, 8, 11, 14))
    it = MagneticSolver(method="bicgstab", tol=1e-9)
    a, b = magnetic.solve(geom).values, it.solve(geom).values
    assert np.abs(a - b).max() < 1e-6 * np.abs(a).max()


def test_coupled_reference_range():
    sol = CoupledSolver().solve((5, 13, 15, 15))
    top = sol.T.values[:, -1]
    assert 1100 < top.min() and top.max() < 1150


def test_interpolation_is_exact_for_bilinear():
    x, y = np.linspace(0, 1, 5), np.array([0, 0.1, 0.5, 1.0])
    X, Y = np.meshgrid(x, y, indexing="ij")
    f = GridField(x, y, 1 + 2 * X - Y + 3 * X * Y)
    p = np.random.default_rng(0).uniform(0, 1, (50, 2))
    np.testing.assert_allclose(interpolate(f, p), 1 + 2 * p[:, 0] - p[:, 1] + 3 * p[:, 0] * p[:, 1])
    with pytest.raises(ValueError):
        interpolation_matrix(x, y, [[1.5, 0.5]])


def test_trapezoid_weights_sum_to_area():
    x, y = np.linspace(0, 0.12, 7), np.linspace(0, 0.014, 4)
    assert trapezoid_weights(x, y).sum() == pytest.approx(0.12 * 0.014)


def test_grid_binary_round_trip(tmp_path):
    x, y = np.linspace(0, 1, 4), np.linspace(0, 2, 3)
    v = np.arange(12.0).reshape(4, 3) * (1 + 0.5j)
    f = GridField(x, y, v, kind="A")
    g = GridField.load(f.save(tmp_path / "a.grid"))
    np.testing.assert_array_equal(g.values, v)
    assert g.kind == "A" and g.extents == f.extents
    csv = f.to_csv(tmp_path / "a.csv").read_text().splitlines()
    assert len(csv) == 13


def test_grid_rejects_nonfinite():
    with pytest.raises(ValueError):
        GridField(np.arange(2.0), np.arange(2.0), np.array([[0, np.nan], [0, 0]]))


def test_grid_load_rejects_bad_magic(tmp_path):
    (tmp_path / "x.grid").write_bytes(b"nothing here")
    with pytest.raises(ValueError):
        GridField.load(tmp_path / "x.grid")
