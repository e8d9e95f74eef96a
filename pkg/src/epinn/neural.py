"""Fully-connected networks with a flat parameter layout.

Parameters live in one 1-D float64 vector. Per layer the weight matrix of
shape ``(fan_out, fan_in)`` is stored row-major, followed by its bias. The
same forward code runs on plain arrays (inference) and on tape variables
(training), so gradients come for free from :mod:`epinn.autodiff`.
"""
from __future__ import annotations

import base64
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu", "cubic-relu")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if any(n <= 0 for n in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        if self.output_activation != "identity":
            raise ValueError("only the identity output activation is supported")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return param_count(self)


def param_count(spec: MlpSpec) -> int:
    s = spec.layer_sizes
    return sum(s[i - 1] * s[i] + s[i] for i in range(1, len(s)))


def layer_slices(spec: MlpSpec):
    """(weight slice, weight shape, bias slice) for each layer."""
    out, off = [], 0
    s = spec.layer_sizes
    for i in range(1, len(s)):
        n_w = s[i] * s[i - 1]
        out.append((slice(off, off + n_w), (s[i], s[i - 1]), slice(off + n_w, off + n_w + s[i])))
        off += n_w + s[i]
    return out


def init_params(spec: MlpSpec, seed: int = 0) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(param_count(spec))
    for w_sl, (fan_out, fan_in), _ in layer_slices(spec):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        theta[w_sl] = rng.uniform(-bound, bound, size=fan_out * fan_in)
    return theta


def _unpack(spec, params):
    if np.shape(params) != (param_count(spec),):
        raise ValueError(f"expected {param_count(spec)} parameters for {spec.layer_sizes}, got shape {np.shape(params)}")
    return [(params[w].reshape(shape), params[b]) for w, shape, b in layer_slices(spec)]


def activate(name: str, z, order: int = 0):
    """Activation value and, up to ``order``, its first two derivatives."""
    if name == "tanh":
        t = np.tanh(z)
        if order == 0:
            return (t,)
        s = 1.0 - t * t
        return (t, s) if order == 1 else (t, s, -2.0 * t * s)
    if name == "relu":
        if order == 2:
            raise ad.NonSmoothError("relu has no second derivative")
        r = ad.relu(z)
        return (r,) if order == 0 else (r, ad.step(z))
    if name == "cubic-relu":
        m = ad.relu(z)
        if order == 0:
            return (ad.relu3(z),)
        m2 = m * m
        return (m2 * m, 3.0 * m2) if order == 1 else (m2 * m, 3.0 * m2, 6.0 * m)
    raise ValueError(name)


def forward(spec: MlpSpec, params, inputs):
    """Network output for a single input vector or a batch (rows)."""
    x = inputs.value if isinstance(inputs, ad.Var) else inputs
    if isinstance(x, ad.Dual):
        x = x.value
    single = np.ndim(x) == 1
    if np.shape(x)[-1] != spec.n_inputs:
        raise ValueError(f"input width {np.shape(x)[-1]} does not match network input {spec.n_inputs}")
    h = inputs.reshape((1, -1)) if single else inputs
    layers = _unpack(spec, params)
    if not any(isinstance(v, (ad.Var, ad.Dual)) for v in (inputs, params)):
        h = _forward_array(spec.activation, layers, np.asarray(h, dtype=float))
        return h.reshape((-1,)) if single else h
    for i, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if i < len(layers) - 1:
            h = activate(spec.activation, h)[0]
    return h.reshape((-1,)) if single else h


def _forward_array(name, layers, h):
    """Plain numpy forward pass with in-place activations (no tape)."""
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = h @ w.T
        h += b
        if i == last:
            break
        if name == "tanh":
            np.tanh(h, out=h)
        elif name == "relu":
            np.maximum(h, 0.0, out=h)
        else:
            np.maximum(h, 0.0, out=h)
            c = h * h
            c *= h
            h = c
    return h


def activation_derivs(name: str):
    """Callable ``(v, order) -> (f, f', f'', f''')`` for an activation."""
    if name == "tanh":

        def derivs(v, order=2):
            t = np.tanh(v)
            s = 1.0 - t * t
            f2 = t * s
            f2 *= -2.0
            return t, s, f2, (s * (4.0 * t * t - 2.0 * s) if order == 2 else None)

    elif name == "cubic-relu":

        def derivs(v, order=2):
            m = np.maximum(v, 0.0)
            m2 = m * m
            return m2 * m, 3.0 * m2, 6.0 * m, (6.0 * (v > 0) if order == 2 else None)

    elif name == "relu":

        def derivs(v, order=2):
            z = np.zeros_like(v)
            return np.maximum(v, 0.0), (v > 0).astype(float), z, z

    else:
        raise ValueError(name)
    return derivs


def forward_jet(spec: MlpSpec, params, x: np.ndarray, order: int = 1):
    """Output with input derivatives propagated in Taylor mode.

    Returns ``(value, first, second)`` where ``first[k]`` is d out/d x_k and
    ``second[k]`` is d^2 out/d x_k^2 (``None`` when ``order < 2``), each of
    shape ``(n, n_outputs)``. Works with tape variables as parameters, so
    the derivatives can themselves be differentiated with respect to them.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if order == 2 and spec.activation == "relu":
        ad.COUNTERS["nonsmooth_rejections"] += 1
        raise ad.NonSmoothError("relu has no second derivative")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, k = x.shape
    if k != spec.n_inputs:
        raise ValueError(f"input width {k} does not match network input {spec.n_inputs}")
    eye = np.eye(k)
    blocks = [x] + [np.broadcast_to(eye[j], (n, k)) for j in range(k)]
    if order == 2:
        blocks += [np.zeros((n, k))] * k
    jet = np.concatenate(blocks, axis=0)
    derivs = activation_derivs(spec.activation)
    layers = _unpack(spec, params)
    for i, (w, b) in enumerate(layers):
        z = jet @ w.T
        if i < len(layers) - 1:
            jet = ad.jet_activation(z, b, k, order, derivs)
    value = z[:n] + b
    first = [z[(1 + j) * n : (2 + j) * n] for j in range(k)]
    second = [z[(1 + k + j) * n : (2 + k + j) * n] for j in range(k)] if order == 2 else None
    return value, first, second


@dataclass(frozen=True)
class OutputTransform:
    """Affine map from network output to temperature, T = a + b * N."""

    a: float = 900.0
    b: float = 300.0

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("temperature scale b must be positive")

    def __call__(self, n):
        return self.a + self.b * n


@dataclass(frozen=True)
class BoxScaler:
    """Affine map of a box onto [-1, 1]^d."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi) or any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("scaler needs upper > lower in every dimension")

    @property
    def factor(self) -> np.ndarray:
        """d(scaled)/d(raw) per dimension."""
        return 2.0 / (np.asarray(self.upper) - np.asarray(self.lower))

    def __call__(self, x):
        lo = np.asarray(self.lower)
        return (x - lo) * self.factor - 1.0

    def inverse(self, s):
        return (np.asarray(s) + 1.0) / self.factor + np.asarray(self.lower)

    def contains(self, x, tol=1e-12) -> bool:
        x = np.atleast_2d(x)
        return bool(np.all(x >= np.asarray(self.lower) - tol) and np.all(x <= np.asarray(self.upper) + tol))


def predict_temperature(spec: MlpSpec, params, transform: OutputTransform, x, scaler: BoxScaler):
    """Temperature at physical positions ``x`` (m); one value per row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not scaler.contains(x):
        logger.warning("temperature requested outside the plate domain (extrapolating)")
    n = forward(spec, params, scaler(x))
    return transform(n[:, 0])


# ---------------------------------------------------------------------------
# model files


@dataclass
class ModelFile:
    """Network plus everything needed to evaluate it again."""

    spec: MlpSpec
    params: np.ndarray
    meta: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "format": "epinn-model/1",
            "spec": {"layer_sizes": list(self.spec.layer_sizes), "output_activation": self.spec.output_activation},
            "activation": self.spec.activation,
            "n_params": int(self.params.size),
            "dtype": "<f8",
            **self.meta,
        }


def save_model(path, spec: MlpSpec, params: np.ndarray, **meta) -> Path:
    """JSON header with the little-endian float64 weights base64-embedded."""
    path = Path(path)
    params = np.ascontiguousarray(params, dtype="<f8")
    doc = ModelFile(spec, params, _jsonable(meta)).header()
    doc["weights_b64"] = base64.b64encode(params.tobytes()).decode("ascii")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def load_model(path) -> ModelFile:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "epinn-model/1":
        raise ValueError(f"{path} is not an epinn model file")
    spec = MlpSpec(tuple(doc["spec"]["layer_sizes"]), doc["activation"], doc["spec"]["output_activation"])
    params = np.frombuffer(base64.b64decode(doc["weights_b64"]), dtype="<f8").astype(float)
    if params.size != param_count(spec):
        raise ValueError("weight payload does not match the network spec")
    reserved = {"format", "spec", "activation", "n_params", "dtype", "weights_b64"}
    meta = {k: v for k, v in doc.items() if k not in reserved}
    return ModelFile(spec, params, meta)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj


# ---------------------------------------------------------------------------
# composite models


@dataclass
class HyperNetwork:
    """Hypernetwork emitting target-network parameters around a fixed base.

    Emitted parameters are ``base + scale * N_h(scaled xi)``; with a small
    ``scale`` a freshly initialized hypernetwork yields target networks close
    to the base initialization instead of degenerate ones.
    """

    spec: MlpSpec
    target: MlpSpec
    base: np.ndarray
    xi_scaler: BoxScaler
    scale: float = 0.1

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        if self.spec.n_outputs != param_count(self.target):
            raise ValueError(
                f"hypernetwork emits {self.spec.n_outputs} values but the target network has {param_count(self.target)} parameters"
            )
        if self.base.shape != (param_count(self.target),):
            raise ValueError("base parameter vector does not match the target network")
        if self.spec.n_inputs != len(self.xi_scaler.lower):
            raise ValueError("hypernetwork input width does not match the design-vector scaler")

    def emit(self, params, xi):
        """Target parameters, one row per design vector."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = forward(self.spec, params, self.xi_scaler(xi))
        return self.base + self.scale * out


@dataclass
class MagneticSurrogate:
    """Network mapping (design vector, position) to Joule loss density.

    Inputs are scaled to [-1, 1]; the network predicts ``Q / q_scale``.
    """

    spec: MlpSpec
    params: np.ndarray
    scaler: BoxScaler
    q_scale: float

    def predict(self, xi, points) -> np.ndarray:
        """Q (W/m^3) at ``points`` for one design vector, or row-paired design vectors."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if xi.shape[0] == 1:
            xi = np.broadcast_to(xi, (pts.shape[0], xi.shape[1]))
        elif xi.shape[0] != pts.shape[0]:
            raise ValueError("need one design vector or one per point")
        z = self.scaler(np.hstack([xi, pts]))
        return self.q_scale * forward(self.spec, self.params, z)[:, 0]


def _scaler_meta(s: BoxScaler) -> dict:
    return {"lower": list(s.lower), "upper": list(s.upper)}


def save_surrogate(path, model: MagneticSurrogate, **meta) -> Path:
    return save_model(path, model.spec, model.params, kind="mnn", scaler=_scaler_meta(model.scaler),
                      q_scale=model.q_scale, **meta)


def load_surrogate(path) -> MagneticSurrogate:
    mf = load_model(path)
    if mf.meta.get("kind") != "mnn":
        raise ValueError(f"{path} does not hold a magnetic surrogate")
    return MagneticSurrogate(mf.spec, mf.params, BoxScaler(**mf.meta["scaler"]), float(mf.meta["q_scale"]))


def save_hypernetwork(path, hnn: HyperNetwork, params, transform: OutputTransform, **meta) -> Path:
    base = np.ascontiguousarray(hnn.base, dtype="<f8")
    return save_model(
        path, hnn.spec, params, kind="thnn",
        target={"layer_sizes": list(hnn.target.layer_sizes), "activation": hnn.target.activation},
        base_b64=base64.b64encode(base.tobytes()).decode("ascii"),
        xi_scaler=_scaler_meta(hnn.xi_scaler), scale=hnn.scale,
        transform={"a": transform.a, "b": transform.b}, **meta,
    )


def load_hypernetwork(path):
    """(HyperNetwork, params, OutputTransform)."""
    mf = load_model(path)
    if mf.meta.get("kind") != "thnn":
        raise ValueError(f"{path} does not hold a hypernetwork")
    m = mf.meta
    target = MlpSpec(tuple(m["target"]["layer_sizes"]), m["target"]["activation"])
    base = np.frombuffer(base64.b64decode(m["base_b64"]), dtype="<f8").astype(float)
    hnn = HyperNetwork(mf.spec, target, base, BoxScaler(**m["xi_scaler"]), float(m["scale"]))
    return hnn, mf.params, OutputTransform(**m["transform"])


def save_snn(path, spec: MlpSpec, params, scaler: BoxScaler, stats, **meta) -> Path:
    return save_model(path, spec, params, kind="snn", scaler=_scaler_meta(scaler),
                      t_mean=float(stats[0]), t_std=float(stats[1]), **meta)


def load_snn(path):
    """(spec, params, scaler, (t_mean, t_std))."""
    mf = load_model(path)
    if mf.meta.get("kind") != "snn":
        raise ValueError(f"{path} does not hold a boundary-temperature network")
    return mf.spec, mf.params, BoxScaler(**mf.meta["scaler"]), (mf.meta["t_mean"], mf.meta["t_std"])
