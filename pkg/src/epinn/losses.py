"""Training losses for the thermal network.

The energy loss is the discretized variational functional of the heat
problem; it only needs first input derivatives and has no tunable weights.
The residual loss is the classical strong-form PINN loss and requires the
boundary weight ``eta2``. Both work on plain arrays and on tape variables.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import QuadMesh
from .neural import BoxScaler, HyperNetwork, MagneticSurrogate, MlpSpec, OutputTransform, forward, forward_jet

ETA2_GRID = (1e1, 1e2, 1e3, 1e4, 1e5)


def _plate_scaler(mesh: QuadMesh) -> BoxScaler:
    return BoxScaler(mesh.domain.lower, mesh.domain.upper)


def _wsum(weights: np.ndarray, v):
    """Weighted sum of a column of point values."""
    return (v * weights[:, None]).sum()


@dataclass(frozen=True, eq=False)
class EnergyLossInputs:
    mesh: QuadMesh
    Q: np.ndarray  # at mesh.gauss_points
    spec: MlpSpec
    transform: OutputTransform = OutputTransform()
    conductivity: float = 60.0
    h: float = 50.0
    T0: float = 50.0

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        object.__setattr__(self, "Q", Q)
        if Q.shape != (len(self.mesh.gauss_points),):
            raise ValueError(f"Q has {Q.shape} samples, mesh has {len(self.mesh.gauss_points)} Gauss points")
        if not self.conductivity > 0:
            raise ValueError("conductivity must be positive")
        if self.spec.n_inputs != 2 or self.spec.n_outputs != 1:
            raise ValueError("thermal network must map 2 inputs to 1 output")


@dataclass(frozen=True, eq=False)
class ResidualLossInputs:
    points: np.ndarray  # interior collocation points
    Q: np.ndarray
    robin_points: np.ndarray
    robin_normals: np.ndarray
    eta2: float
    spec: MlpSpec
    scaler: BoxScaler
    transform: OutputTransform = OutputTransform()
    conductivity: float = 60.0
    h: float = 50.0
    T0: float = 50.0
    eta1: float = 0.0
    dirichlet_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    T_ref: float = 0.0

    def __post_init__(self):
        if self.eta1 < 0 or self.eta2 < 0:
            raise ValueError("loss weights must be non-negative")
        n = np.asarray(self.robin_normals, dtype=float)
        if n.shape != np.shape(self.robin_points) or not np.allclose(np.linalg.norm(n, axis=1), 1.0):
            raise ValueError("Robin normals must be unit vectors, one per Robin point")
        if np.shape(self.Q) != (len(self.points),):
            raise ValueError("Q must have one sample per collocation point")

    @classmethod
    def from_mesh(cls, mesh: QuadMesh, Q, spec: MlpSpec, eta2: float, **kw) -> "ResidualLossInputs":
        """Collocation on the energy-loss Gauss and Robin points (matched comparison)."""
        return cls(mesh.gauss_points, np.asarray(Q, dtype=float), mesh.robin_points, mesh.robin_normals,
                   eta2, spec, _plate_scaler(mesh), **kw)


def energy_loss(params, inputs: EnergyLossInputs):
    """Discrete energy functional of the thermal network.

    ``1/2 sum A w lambda |grad T|^2 + sum l w (h/2 T^2 - h T0 T) - sum A w Q T``
    """
    mesh, tr = inputs.mesh, inputs.transform
    scaler = _plate_scaler(mesh)
    fx, fy = scaler.factor
    n, (dn_x, dn_y), _ = forward_jet(inputs.spec, params, scaler(mesh.gauss_points), order=1)
    T = tr(n)
    gx = (tr.b * fx) * dn_x
    gy = (tr.b * fy) * dn_y
    w = mesh.gauss_weights
    stored = 0.5 * inputs.conductivity * _wsum(w, gx * gx + gy * gy)
    source = _wsum(w * inputs.Q, T)
    Tb = tr(forward(inputs.spec, params, scaler(mesh.robin_points)))
    robin = _wsum(mesh.robin_weights, (0.5 * inputs.h) * (Tb * Tb) - (inputs.h * inputs.T0) * Tb)
    return stored + robin - source


def residual_loss(params, inputs: ResidualLossInputs):
    """Mean squared strong-form residual plus weighted boundary terms."""
    tr, sc = inputs.transform, inputs.scaler
    fx, fy = sc.factor
    lam = inputs.conductivity
    _, _, (d2x, d2y) = forward_jet(inputs.spec, params, sc(inputs.points), order=2)
    lap = (tr.b * fx * fx) * d2x + (tr.b * fy * fy) * d2y
    r = -lam * lap - inputs.Q[:, None]
    loss = (r * r).sum() / len(inputs.points)

    nb, (bx, by), _ = forward_jet(inputs.spec, params, sc(inputs.robin_points), order=1)
    nrm = np.asarray(inputs.robin_normals, dtype=float)
    dTdn = (tr.b * fx) * bx * nrm[:, :1] + (tr.b * fy) * by * nrm[:, 1:]
    rb = lam * dTdn + inputs.h * tr(nb) - inputs.h * inputs.T0
    loss = loss + (inputs.eta2 / len(inputs.robin_points)) * (rb * rb).sum()

    if len(inputs.dirichlet_points) and inputs.eta1 > 0:
        td = tr(forward(inputs.spec, params, sc(inputs.dirichlet_points))) - inputs.T_ref
        loss = loss + (inputs.eta1 / len(inputs.dirichlet_points)) * (td * td).sum()
    return loss


def hyper_loss(hnn_params, batch, hnn: HyperNetwork, mnn: MagneticSurrogate, mesh: QuadMesh,
               transform: OutputTransform = OutputTransform(), conductivity: float = 60.0,
               h: float = 50.0, T0: float = 50.0, q_cache: dict | None = None):
    """Sum of energy losses of the networks emitted for each design vector in ``batch``.

    ``q_cache`` (optional) maps a design-vector tuple to precomputed Q at the
    mesh Gauss points; otherwise the frozen surrogate is evaluated.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    emitted = hnn.emit(hnn_params, batch)
    total = 0.0
    for i, xi in enumerate(batch):
        key = tuple(xi)
        if q_cache is not None and key in q_cache:
            Q = q_cache[key]
        else:
            Q = mnn.predict(xi, mesh.gauss_points)
            if q_cache is not None:
                q_cache[key] = Q
        inp = EnergyLossInputs(mesh, Q, hnn.target, transform, conductivity, h, T0)
        total = total + energy_loss(emitted[i], inp)
    return total
