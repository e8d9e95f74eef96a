import numpy as np
import pytest

from epinn import autodiff as ad
from epinn.neural import (
    BoxScaler,
    HyperNetwork,
    MagneticSurrogate,
    MlpSpec,
    OutputTransform,
    forward,
    forward_jet,
    init_params,
    load_hypernetwork,
    load_model,
    load_surrogate,
    param_count,
    predict_temperature,
    save_hypernetwork,
    save_model,
    save_surrogate,
)


@pytest.mark.parametrize("width,count", [(16, 337), (24, 697), (32, 1185), (64, 4417), (128, 17025)])
def test_thermal_network_sizes(width, count):
    assert param_count(MlpSpec((2, width, width, 1))) == count


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec((2,))
    with pytest.raises(ValueError):
        MlpSpec((2, 0, 1))
    with pytest.raises(ValueError):
        MlpSpec((2, 4, 1), "sigmoid")


def test_param_length_mismatch():
    spec = MlpSpec((2, 4, 1))
    with pytest.raises(ValueError):
        forward(spec, np.zeros(spec.n_params + 1), np.zeros((3, 2)))


def test_input_width_mismatch():
    spec = MlpSpec((2, 4, 1))
    with pytest.raises(ValueError):
        forward(spec, init_params(spec), np.zeros((3, 3)))


def test_init_is_seeded():
    spec = MlpSpec((2, 8, 8, 1))
    np.testing.assert_array_equal(init_params(spec, 5), init_params(spec, 5))
    assert not np.array_equal(init_params(spec, 5), init_params(spec, 6))


def test_single_vector_and_batch_agree():
    spec = MlpSpec((3, 5, 2), "cubic-relu")
    p = init_params(spec, 1)
    x = np.array([0.2, -0.4, 0.9])
    np.testing.assert_allclose(forward(spec, p, x), forward(spec, p, x[None, :])[0])


@pytest.mark.parametrize("act", ["tanh", "cubic-relu"])
def test_jet_matches_differences(act):
    spec = MlpSpec((2, 7, 6, 1), act)
    p = init_params(spec, 2)
    x = np.random.default_rng(0).uniform(-0.9, 0.9, (6, 2)) + 0.05
    v, d1, d2 = forward_jet(spec, p, x, order=2)
    np.testing.assert_allclose(v, forward(spec, p, x), rtol=1e-13)
    h = 1e-4
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fp, fm, f0 = forward(spec, p, x + e), forward(spec, p, x - e), forward(spec, p, x)
        np.testing.assert_allclose(d1[k], (fp - fm) / (2 * h), rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(d2[k], (fp - 2 * f0 + fm) / h**2, rtol=1e-4, atol=1e-6)


def test_jet_second_order_matches_forward_over_reverse():
    spec = MlpSpec((2, 6, 6, 1), "tanh")
    p = init_params(spec, 4)
    x = np.array([0.3, -0.6])
    _, _, d2 = forward_jet(spec, p, x[None, :], order=2)
    for k in range(2):
        fr = ad.second_input_derivative(lambda v: forward(spec, p, v).sum(), x, k)
        assert d2[k][0, 0] == pytest.approx(fr, rel=1e-10)


def test_relu_network_has_no_second_jet():
    spec = MlpSpec((2, 4, 1), "relu")
    with pytest.raises(ad.NonSmoothError):
        forward_jet(spec, init_params(spec), np.zeros((1, 2)), order=2)


def test_output_transform():
    tr = OutputTransform()
    assert tr(0.0) == 900.0 and tr(1.0) == 1200.0
    with pytest.raises(ValueError):
        OutputTransform(1.0, 0.0)


def test_box_scaler_round_trip():
    s = BoxScaler((0.0, 0.0), (0.12, 0.014))
    x = np.array([[0.0, 0.0], [0.12, 0.014], [0.06, 0.007]])
    np.testing.assert_allclose(s(x), [[-1, -1], [1, 1], [0, 0]], atol=1e-15)
    np.testing.assert_allclose(s.inverse(s(x)), x)
    assert s.contains(x) and not s.contains([[0.2, 0.0]])


def test_extrapolation_warns(caplog):
    spec = MlpSpec((2, 3, 1))
    with caplog.at_level("WARNING"):
        predict_temperature(spec, init_params(spec), OutputTransform(), [[0.5, 0.0]], BoxScaler((0, 0), (0.12, 0.014)))
    assert "outside" in caplog.text


def test_model_file_round_trip(tmp_path):
    spec = MlpSpec((2, 5, 1), "tanh")
    p = init_params(spec, 9)
    save_model(tmp_path / "m.json", spec, p, note="x", arr=np.arange(3))
    mf = load_model(tmp_path / "m.json")
    assert mf.spec == spec and mf.meta["note"] == "x" and mf.meta["arr"] == [0, 1, 2]
    np.testing.assert_array_equal(mf.params, p)


def test_model_file_rejects_foreign_json(tmp_path):
    (tmp_path / "x.json").write_text("{}")
    with pytest.raises(ValueError):
        load_model(tmp_path / "x.json")


def make_hnn():
    target = MlpSpec((2, 24, 24, 1), "tanh")
    spec = MlpSpec((4, 16, 697), "relu")
    hnn = HyperNetwork(spec, target, init_params(target, 0), BoxScaler((5.0,) * 4, (15.0,) * 4), 0.1)
    return hnn, init_params(spec, 1)


def test_hypernetwork_emits_697():
    hnn, p = make_hnn()
    out = hnn.emit(p, np.random.default_rng(0).uniform(5, 15, (3, 4)))
    assert out.shape == (3, 697)


def test_hypernetwork_output_width_checked():
    target = MlpSpec((2, 24, 24, 1))
    with pytest.raises(ValueError):
        HyperNetwork(MlpSpec((4, 8, 696)), target, np.zeros(697), BoxScaler((5.0,) * 4, (15.0,) * 4))


def test_hypernetwork_and_surrogate_files(tmp_path):
    hnn, p = make_hnn()
    save_hypernetwork(tmp_path / "h.json", hnn, p, OutputTransform())
    h2, p2, tr = load_hypernetwork(tmp_path / "h.json")
    xi = [[6.0, 7.0, 8.0, 9.0]]
    np.testing.assert_array_equal(h2.emit(p2, xi), hnn.emit(p, xi))
    assert tr == OutputTransform()

    spec = MlpSpec((6, 8, 1), "cubic-relu")
    m = MagneticSurrogate(spec, init_params(spec, 3), BoxScaler((5.0,) * 4 + (0, 0), (15.0,) * 4 + (0.12, 0.014)), 2e7)
    save_surrogate(tmp_path / "m.json", m)
    m2 = load_surrogate(tmp_path / "m.json")
    pts = np.array([[0.01, 0.002], [0.1, 0.01]])
    np.testing.assert_array_equal(m2.predict(xi[0], pts), m.predict(xi[0], pts))
    with pytest.raises(ValueError):
        load_surrogate(tmp_path / "h.json")
