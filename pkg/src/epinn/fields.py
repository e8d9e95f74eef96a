"""Reference field solvers: steady heat and time-harmonic magnetic diffusion.

Both solvers use a vertex-centred finite-volume discretization on tensor
grids (equivalent to the 5-point stencil with ghost nodes on uniform
grids). System matrices do not depend on the inductor geometry, so each
solver factorizes once and every subsequent solve is a pair of triangular
sweeps.
"""
from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import PlateDomain

logger = logging.getLogger(__name__)

MU0 = 4e-7 * np.pi
XI_BOUNDS = (5.0, 15.0)


class SolverError(RuntimeError):
    """A linear solve failed or did not reach its residual tolerance."""


class SingularSystemError(SolverError):
    pass


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class MaterialMap:
    rho_graphite: float = 7.76e-6  # Ohm m
    rho_copper: float = 2e-8
    mu_r: float = 1.0
    conductivity: float = 60.0  # thermal, W/(m K)

    @property
    def sigma_graphite(self) -> float:
        return 1.0 / self.rho_graphite


@dataclass(frozen=True)
class InductorLayout:
    """Assumed turn cross-sections; one mirrored pair of turns per design variable.

    ``centers`` are the turn centre x-positions on the positive side, ordered
    from the symmetry axis outward; the same order indexes the design vector.
    """

    centers: tuple[float, ...] = (0.030, 0.060, 0.090, 0.120)
    width: float = 0.010
    height: float = 0.010
    current_rms: float = 488.0
    frequency: float = 4250.0

    @property
    def omega(self) -> float:
        return 2.0 * np.pi * self.frequency

    @property
    def current_density(self) -> float:
        return self.current_rms / (self.width * self.height)


@dataclass(frozen=True)
class InductorGeometry:
    """Turn heights above the plate's upper surface, in mm."""

    xi: tuple[float, ...]
    layout: InductorLayout = InductorLayout()

    def __post_init__(self):
        xi = tuple(float(v) for v in np.ravel(self.xi))
        object.__setattr__(self, "xi", xi)
        if len(xi) != len(self.layout.centers):
            raise ValueError(f"expected {len(self.layout.centers)} turn heights, got {len(xi)}")
        lo, hi = XI_BOUNDS
        if any(not (lo - 1e-9 <= v <= hi + 1e-9) for v in xi):
            raise ValueError(f"turn heights must lie in [{lo}, {hi}] mm, got {xi}")

    def turns(self, plate_top: float) -> list[tuple[float, float, float, float]]:
        """All turn rectangles (x0, x1, y0, y1) in metres, both sides."""
        lay = self.layout
        out = []
        for c, h in zip(lay.centers, self.xi):
            y0 = plate_top + 1e-3 * h
            for s in (-1.0, 1.0):
                out.append((s * c - lay.width / 2, s * c + lay.width / 2, y0, y0 + lay.height))
        return out


@dataclass
class GridField:
    """Node values on a tensor grid (uniform or graded)."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    kind: str = "T"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.values = np.asarray(self.values)
        if self.values.shape != (self.x.size, self.y.size):
            raise ValueError(f"values shape {self.values.shape} does not match grid {(self.x.size, self.y.size)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid field contains non-finite values")

    @property
    def nx(self) -> int:
        return self.x.size

    @property
    def ny(self) -> int:
        return self.y.size

    @property
    def extents(self) -> tuple[float, float, float, float]:
        return (float(self.x[0]), float(self.x[-1]), float(self.y[0]), float(self.y[-1]))

    @property
    def spacing(self) -> tuple[np.ndarray, np.ndarray]:
        return np.diff(self.x), np.diff(self.y)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def to_csv(self, path) -> Path:
        path = Path(path)
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            if self.is_complex:
                w.writerow(["x", "y", "real", "imag"])
                for a, b, v in zip(X.ravel(), Y.ravel(), self.values.ravel()):
                    w.writerow([repr(a), repr(b), repr(v.real), repr(v.imag)])
            else:
                w.writerow(["x", "y", "value"])
                for a, b, v in zip(X.ravel(), Y.ravel(), self.values.ravel()):
                    w.writerow([repr(a), repr(b), repr(float(v))])
        return path

    def save(self, path) -> Path:
        """Binary grid: magic, header length, JSON header, little-endian payload."""
        path = Path(path)
        header = {
            "nx": self.nx,
            "ny": self.ny,
            "extents": list(self.extents),
            "kind": self.kind,
            "dtype": "<c16" if self.is_complex else "<f8",
            "x": self.x.tolist(),
            "y": self.y.tolist(),
        }
        hb = json.dumps(header).encode()
        payload = np.ascontiguousarray(self.values, dtype=header["dtype"]).tobytes()
        path.write_bytes(_GRID_MAGIC + struct.pack("<I", len(hb)) + hb + payload)
        return path

    @classmethod
    def load(cls, path) -> "GridField":
        raw = Path(path).read_bytes()
        if not raw.startswith(_GRID_MAGIC):
            raise ValueError(f"{path} is not a grid file")
        off = len(_GRID_MAGIC)
        (n,) = struct.unpack("<I", raw[off : off + 4])
        header = json.loads(raw[off + 4 : off + 4 + n])
        vals = np.frombuffer(raw[off + 4 + n :], dtype=header["dtype"]).reshape(header["nx"], header["ny"])
        return cls(np.array(header["x"]), np.array(header["y"]), vals.copy(), header["kind"])


_GRID_MAGIC = b"EPGRID1\n"


# ---------------------------------------------------------------------------
# interpolation and integration


def _locate(nodes: np.ndarray, q: np.ndarray, tol: float):
    if np.any(q < nodes[0] - tol) or np.any(q > nodes[-1] + tol):
        raise ValueError("point outside the grid hull")
    q = np.clip(q, nodes[0], nodes[-1])
    i = np.clip(np.searchsorted(nodes, q, side="right") - 1, 0, nodes.size - 2)
    t = (q - nodes[i]) / (nodes[i + 1] - nodes[i])
    return i, t


def interpolation_matrix(x: np.ndarray, y: np.ndarray, points) -> sp.csr_matrix:
    """Sparse bilinear interpolation operator from grid nodes to ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tol = 1e-9 * max(x[-1] - x[0], y[-1] - y[0])
    i, tx = _locate(x, pts[:, 0], tol)
    j, ty = _locate(y, pts[:, 1], tol)
    ny = y.size
    rows = np.repeat(np.arange(len(pts)), 4)
    cols = np.column_stack([i * ny + j, (i + 1) * ny + j, i * ny + j + 1, (i + 1) * ny + j + 1]).ravel()
    w = np.column_stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty]).ravel()
    return sp.csr_matrix((w, (rows, cols)), shape=(len(pts), x.size * ny))


def interpolate(field: GridField, points) -> np.ndarray:
    """Bilinear interpolation of a grid field at arbitrary points inside its hull."""
    m = interpolation_matrix(field.x, field.y, points)
    return m @ field.values.ravel()


def trapezoid_weights(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    wx = np.zeros(x.size)
    wy = np.zeros(y.size)
    dx, dy = np.diff(x), np.diff(y)
    wx[:-1] += dx / 2
    wx[1:] += dx / 2
    wy[:-1] += dy / 2
    wy[1:] += dy / 2
    return np.outer(wx, wy)


def total_induced_power(Q: GridField) -> float:
    """Trapezoidal integral of a heat-source grid over its own extent (W/m)."""
    return float(np.sum(trapezoid_weights(Q.x, Q.y) * Q.values))


# ---------------------------------------------------------------------------
# finite-volume assembly


def assemble_diffusion(x: np.ndarray, y: np.ndarray, cell_coeff=None, cell_reaction=None, face_scale=1.0):
    """Vertex-centred FV operator for ``-div(k grad u) + r u`` on a tensor grid.

    ``cell_coeff`` (k) and ``cell_reaction`` (r) are per-cell arrays of shape
    ``(nx-1, ny-1)``; r may be complex. Returns ``(K, area)`` with ``K`` the
    sparse node operator (no boundary terms: natural Neumann everywhere)
    and ``area`` the dual-cell area of each node. The operator is symmetric.
    """
    nx, ny = x.size, y.size
    hx, hy = np.diff(x), np.diff(y)
    cell_area = np.outer(hx, hy)
    k = np.ones((nx - 1, ny - 1)) if cell_coeff is None else np.asarray(cell_coeff, dtype=float)
    k = k * face_scale
    # x-direction edges (i,j)-(i+1,j): flux through the dual face split by the two cells below/above
    cx = np.zeros((nx - 1, ny))
    cx[:, :-1] += k * (hy / 2)[None, :] / hx[:, None]
    cx[:, 1:] += k * (hy / 2)[None, :] / hx[:, None]
    cy = np.zeros((nx, ny - 1))
    cy[:-1, :] += k * (hx / 2)[:, None] / hy[None, :]
    cy[1:, :] += k * (hx / 2)[:, None] / hy[None, :]

    area = np.zeros((nx, ny))
    react = np.zeros((nx, ny), dtype=complex if np.iscomplexobj(cell_reaction) else float)
    for a in (0, 1):
        for b in (0, 1):
            area[a : nx - 1 + a, b : ny - 1 + b] += cell_area / 4
            if cell_reaction is not None:
                react[a : nx - 1 + a, b : ny - 1 + b] += cell_reaction * cell_area / 4

    idx = np.arange(nx * ny).reshape(nx, ny)
    diag = react.astype(complex) if np.iscomplexobj(react) else react.copy()
    diag[:-1, :] += cx
    diag[1:, :] += cx
    diag[:, :-1] += cy
    diag[:, 1:] += cy
    rows = np.concatenate([idx[:-1, :].ravel(), idx[1:, :].ravel(), idx[:, :-1].ravel(), idx[:, 1:].ravel(), idx.ravel()])
    cols = np.concatenate([idx[1:, :].ravel(), idx[:-1, :].ravel(), idx[:, 1:].ravel(), idx[:, :-1].ravel(), idx.ravel()])
    vals = np.concatenate([-cx.ravel(), -cx.ravel(), -cy.ravel(), -cy.ravel(), diag.ravel()])
    K = sp.csr_matrix((vals, (rows, cols)), shape=(nx * ny, nx * ny))
    return K, area


def lump_to_nodes(x: np.ndarray, y: np.ndarray, cell_values: np.ndarray) -> np.ndarray:
    """Integrate a per-cell density onto nodes (quarter cell each)."""
    nx, ny = x.size, y.size
    cell_area = np.outer(np.diff(x), np.diff(y))
    out = np.zeros((nx, ny), dtype=np.result_type(cell_values, float))
    for a in (0, 1):
        for b in (0, 1):
            out[a : nx - 1 + a, b : ny - 1 + b] += cell_values * cell_area / 4
    return out


def _boundary_lengths(x, y):
    """Dual-face length of each boundary node along bottom/top (x-weights) and left/right (y-weights)."""
    wx = np.zeros(x.size)
    wy = np.zeros(y.size)
    wx[:-1] += np.diff(x) / 2
    wx[1:] += np.diff(x) / 2
    wy[:-1] += np.diff(y) / 2
    wy[1:] += np.diff(y) / 2
    return wx, wy


def _check_residual(A, u, b, tol, what):
    r = np.linalg.norm(A @ u - b)
    scale = np.linalg.norm(b)
    rel = r / scale if scale > 0 else r
    if not np.isfinite(rel) or rel > tol:
        raise SolverError(f"{what}: relative residual {rel:.3e} exceeds {tol:.1e}")
    return rel


# ---------------------------------------------------------------------------
# thermal


class ThermalSolver:
    """Steady heat conduction on the half plate.

    Solves ``-div(lambda grad T) = Q`` with ``lambda dT/dn + h (T - T0) = g``
    on the top, bottom and right edges (``g = 0`` is the physical case) and
    zero flux on the symmetry edge ``x = 0``.
    """

    def __init__(self, domain: PlateDomain = PlateDomain(), nx: int = 241, ny: int = 29,
                 conductivity: float = 60.0, h: float = 50.0, T0: float = 50.0):
        if nx < 2 or ny < 2:
            raise ValueError("thermal grid needs at least 2x2 nodes")
        if conductivity <= 0:
            raise ValueError("conductivity must be positive")
        if h < 0:
            raise ValueError("heat exchange coefficient must be non-negative")
        self.domain = domain
        self.x = np.linspace(0.0, domain.half_width, nx)
        self.y = np.linspace(0.0, domain.thickness, ny)
        self.conductivity, self.h, self.T0 = float(conductivity), float(h), float(T0)
        K, self.area = assemble_diffusion(self.x, self.y, np.full((nx - 1, ny - 1), self.conductivity))
        wx, wy = _boundary_lengths(self.x, self.y)
        self.robin_length = np.zeros((nx, ny))
        self.robin_length[:, 0] += wx
        self.robin_length[:, -1] += wx
        self.robin_length[-1, :] += wy
        self.matrix = (K + sp.diags(self.h * self.robin_length.ravel())).tocsc()
        self._lu = None if self.h == 0 else spla.splu(self.matrix)

    @property
    def shape(self):
        return (self.x.size, self.y.size)

    def nodes(self) -> np.ndarray:
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def solve(self, Q, boundary_flux=None) -> GridField:
        """``Q``: node values ``(nx, ny)``, a :class:`GridField` on this grid, or callable(x, y)."""
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        if callable(Q):
            q = np.asarray(Q(X, Y), dtype=float) * np.ones(self.shape)
        elif isinstance(Q, GridField):
            if Q.values.shape != self.shape or not (np.allclose(Q.x, self.x) and np.allclose(Q.y, self.y)):
                q = interpolate(Q, self.nodes()).reshape(self.shape)
            else:
                q = Q.values
        else:
            q = np.asarray(Q, dtype=float)
            if q.shape != self.shape:
                raise ValueError(f"source shape {q.shape} does not match thermal grid {self.shape}")
        rhs = q * self.area + self.h * self.T0 * self.robin_length
        if boundary_flux is not None:
            rhs = rhs + self._flux_term(boundary_flux)
        b = rhs.ravel()
        if self._lu is None:
            total = float(np.sum(q * self.area)) + (float(np.sum(self._flux_term(boundary_flux))) if boundary_flux else 0.0)
            if abs(total) > 1e-12 * max(1.0, float(np.sum(np.abs(q * self.area)))):
                raise SingularSystemError("no convective exchange (h = 0) with a nonzero net heat input has no steady state")
            # pure Neumann, compatible data: bordered system pinning the mean temperature to T0
            a = sp.csc_matrix(self.area.ravel()[:, None])
            A = sp.bmat([[self.matrix, a], [a.T, None]]).tocsc()
            bb = np.concatenate([b, [self.T0 * self.area.sum()]])
            T = spla.spsolve(A, bb)[:-1]
            _check_residual(self.matrix, T, b, 1e-10, "thermal solve")
        else:
            T = self._lu.solve(b)
            _check_residual(self.matrix, T, b, 1e-10, "thermal solve")
        return GridField(self.x, self.y, T.reshape(self.shape), kind="T")

    def _flux_term(self, g):
        """Boundary data for ``lambda dT/dn + h (T - T0) = g`` on the Robin edges."""
        out = np.zeros(self.shape)
        wx, wy = _boundary_lengths(self.x, self.y)
        out[:, 0] += g(self.x, np.full_like(self.x, self.y[0]), 0.0, -1.0) * wx
        out[:, -1] += g(self.x, np.full_like(self.x, self.y[-1]), 0.0, 1.0) * wx
        out[-1, :] += g(np.full_like(self.y, self.x[-1]), self.y, 1.0, 0.0) * wy
        return out


def solve_thermal_fd(Q: GridField, conductivity: float = 60.0, h: float = 50.0, T0: float = 50.0,
                     boundary_flux=None) -> GridField:
    """Solve the plate heat problem on the grid that carries ``Q``."""
    dom = PlateDomain(Q.x[-1] - Q.x[0], Q.y[-1] - Q.y[0])
    solver = ThermalSolver(dom, Q.nx, Q.ny, conductivity, h, T0)
    if not (np.allclose(Q.x, solver.x) and np.allclose(Q.y, solver.y)):
        raise ValueError("solve_thermal_fd expects a uniform grid starting at the origin")
    return solver.solve(Q.values, boundary_flux)


# ---------------------------------------------------------------------------
# magnetic


def skin_depth(rho: float, omega: float, mu_r: float = 1.0) -> float:
    return float(np.sqrt(2.0 * rho / (omega * MU0 * mu_r)))


def _graded(a: float, b: float, h0: float, growth: float) -> np.ndarray:
    """Nodes from a to b with first step h0 growing geometrically, rescaled to end at b."""
    pts = [a]
    h = h0
    while pts[-1] < b - 1e-12:
        pts.append(pts[-1] + h)
        h *= growth
    pts = np.array(pts)
    return a + (pts - a) * (b - a) / (pts[-1] - a)


@dataclass(frozen=True)
class MagneticGridSpec:
    box: tuple[float, float, float, float] = (-0.72, 0.72, -0.36, 0.72)  # x0, x1, y0, y1
    dx: float = 0.0025
    dy: float = 0.001
    fine_x: float = 0.14  # uniform spacing for |x| <= fine_x
    fine_y: tuple[float, float] = (0.0, 0.045)  # uniform spacing band (plate + turns)
    growth: float = 1.2


class MagneticSolver:
    """Planar eddy-current solver for the out-of-plane vector potential phasor.

    Solves ``-lap(A) + j omega mu sigma A = mu J`` on a mirror-symmetric
    graded grid with ``A = 0`` on the truncation box. Turns are stranded
    conductors with uniform imposed current density; only the plate conducts
    eddy currents. Phasors are RMS, so ``Q = omega^2 sigma |A|^2`` is the
    time-averaged loss density.
    """

    def __init__(self, materials: MaterialMap = MaterialMap(), layout: InductorLayout = InductorLayout(),
                 domain: PlateDomain = PlateDomain(), grid: MagneticGridSpec = MagneticGridSpec(),
                 method: str = "direct", tol: float = 1e-9):
        self.materials, self.layout, self.domain, self.grid_spec = materials, layout, domain, grid
        self.method, self.tol = method, tol
        g = grid
        L, H = domain.half_width, domain.thickness
        xp = np.concatenate([np.arange(0.0, g.fine_x + 1e-12, g.dx), _graded(g.fine_x, g.box[1], g.dx, g.growth)[1:]])
        if not np.any(np.isclose(xp, L, atol=1e-12)):
            raise ValueError("magnetic grid must place nodes on the plate edge")
        self.x = np.concatenate([-xp[:0:-1], xp])
        y_mid = np.arange(g.fine_y[0], g.fine_y[1] + 1e-12, g.dy)
        y_lo = -_graded(-g.fine_y[0], -g.box[2], g.dy, g.growth)[::-1]
        y_hi = _graded(g.fine_y[1], g.box[3], g.dy, g.growth)
        self.y = np.concatenate([y_lo[:-1], y_mid, y_hi[1:]])
        self.x[np.isclose(self.x, 0.0, atol=1e-14)] = 0.0
        self.omega = layout.omega
        mu = MU0 * materials.mu_r

        xc = 0.5 * (self.x[:-1] + self.x[1:])
        yc = 0.5 * (self.y[:-1] + self.y[1:])
        in_plate = (np.abs(xc)[:, None] < L) & (yc[None, :] > 0.0) & (yc[None, :] < H)
        self.cell_sigma = np.where(in_plate, materials.sigma_graphite, 0.0)
        K, self.area = assemble_diffusion(self.x, self.y, cell_reaction=1j * self.omega * mu * self.cell_sigma)
        self.node_sigma_lumped = lump_to_nodes(self.x, self.y, self.cell_sigma)
        nx, ny = self.x.size, self.y.size
        bnd = np.zeros((nx, ny), dtype=bool)
        bnd[0, :] = bnd[-1, :] = bnd[:, 0] = bnd[:, -1] = True
        self.free = ~bnd.ravel()
        self.matrix = K.tocsr()[self.free][:, self.free].tocsc()
        self._lu = spla.splu(self.matrix) if method == "direct" else None
        self._mu = mu

        ix0 = int(np.argmin(np.abs(self.x)))
        ix1 = int(np.argmin(np.abs(self.x - L)))
        iy0 = int(np.argmin(np.abs(self.y)))
        iy1 = int(np.argmin(np.abs(self.y - H)))
        if not (np.isclose(self.y[iy0], 0.0) and np.isclose(self.y[iy1], H)):
            raise ValueError("magnetic grid must place nodes on the plate faces")
        self.plate_slice = (slice(ix0, ix1 + 1), slice(iy0, iy1 + 1))

    @property
    def shape(self):
        return (self.x.size, self.y.size)

    def node_conductivity(self) -> np.ndarray:
        """Graphite conductivity on every node of the closed plate region, zero elsewhere."""
        L, H = self.domain.half_width, self.domain.thickness
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        tol = 1e-12
        inside = (np.abs(X) <= L + tol) & (Y >= -tol) & (Y <= H + tol)
        return np.where(inside, self.materials.sigma_graphite, 0.0)

    def source_density(self, geom: InductorGeometry) -> np.ndarray:
        """Per-cell imposed current density (A/m^2), area-weighted for partial overlap."""
        x, y = self.x, self.y
        J = np.zeros((x.size - 1, y.size - 1))
        cell_area = np.outer(np.diff(x), np.diff(y))
        jd = geom.layout.current_density
        for x0, x1, y0, y1 in geom.turns(self.domain.thickness):
            ox = np.clip(np.minimum(x[1:], x1) - np.maximum(x[:-1], x0), 0.0, None)
            oy = np.clip(np.minimum(y[1:], y1) - np.maximum(y[:-1], y0), 0.0, None)
            J += jd * np.outer(ox, oy) / cell_area
        return J

    def source_currents(self, geom: InductorGeometry) -> np.ndarray:
        """Imposed current lumped onto nodes (A)."""
        return lump_to_nodes(self.x, self.y, self.source_density(geom))

    def solve(self, geom: InductorGeometry) -> GridField:
        rhs = (self._mu * self.source_currents(geom)).ravel()[self.free].astype(complex)
        if self._lu is not None:
            a = self._lu.solve(rhs)
        else:
            a = self._bicgstab(rhs)
        _check_residual(self.matrix, a, rhs, self.tol, "magnetic solve")
        A = np.zeros(self.x.size * self.y.size, dtype=complex)
        A[self.free] = a
        return GridField(self.x, self.y, A.reshape(self.shape), kind="A")

    def _bicgstab(self, rhs):
        M = sp.diags(1.0 / self.matrix.diagonal())
        scale = np.linalg.norm(rhs)
        sol, res = None, np.inf
        # restart from the last iterate on breakdown
        for _ in range(5):
            sol, info = spla.bicgstab(self.matrix, rhs, x0=sol, M=M, rtol=self.tol * 0.1, atol=0.0, maxiter=20000)
            res = np.linalg.norm(self.matrix @ sol - rhs) / scale
            if res <= self.tol:
                return sol
        raise SolverError(f"magnetic BiCGSTAB did not converge (info={info}, relative residual {res:.3e})")

    def plate_losses(self, A: GridField) -> GridField:
        """Joule loss density on the modelled half plate ``[0, L] x [0, H]``."""
        Q = joule_losses(A, self.node_conductivity(), self.omega)
        sx, sy = self.plate_slice
        return GridField(self.x[sx], self.y[sy], Q.values[sx, sy], kind="Q")

    def delivered_power(self, A: GridField, geom: InductorGeometry) -> float:
        """Real power the imposed currents deliver, omega * Im(sum conj(A) I): full plate, W/m."""
        return float(self.omega * np.imag(np.sum(np.conj(A.values) * self.source_currents(geom))))

    def eddy_current_power(self, A: GridField) -> float:
        """Integral of rho |J_eddy|^2 over the full plate with J_eddy = -j omega sigma A."""
        sigma = self.node_conductivity()
        je = -1j * self.omega * sigma * A.values
        w = lump_to_nodes(self.x, self.y, (self.cell_sigma > 0).astype(float))
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.where(sigma > 0, np.abs(je) ** 2 / np.where(sigma > 0, sigma, 1.0), 0.0)
        return float(np.sum(dens * w))


def joule_losses(A: GridField, conductivity: np.ndarray, omega: float) -> GridField:
    """Pointwise ``Q = omega^2 sigma |A|^2`` (``sigma = 1/rho``); zero where sigma is 0."""
    sigma = np.broadcast_to(np.asarray(conductivity, dtype=float), A.values.shape)
    return GridField(A.x, A.y, omega**2 * sigma * np.abs(A.values) ** 2, kind="Q")


_SOLVERS: dict = {}


def default_magnetic_solver(materials: MaterialMap = MaterialMap(), layout: InductorLayout = InductorLayout(),
                            grid: MagneticGridSpec = MagneticGridSpec()) -> MagneticSolver:
    key = (materials, layout, grid)
    if key not in _SOLVERS:
        _SOLVERS[key] = MagneticSolver(materials, layout, grid=grid)
    return _SOLVERS[key]


def solve_magnetic(geom: InductorGeometry, materials: MaterialMap = MaterialMap(),
                   grid: MagneticGridSpec = MagneticGridSpec()) -> GridField:
    return default_magnetic_solver(materials, geom.layout, grid).solve(geom)


def skin_depth_harness(rho: float, omega: float, mu_r: float = 1.0, cells_per_depth: int = 40,
                       depths: float = 12.0) -> tuple[np.ndarray, np.ndarray, float]:
    """1-D conducting half-space driven by ``A = 1`` at ``x = 0``.

    Uses the same finite-volume operator as :class:`MagneticSolver` on a strip
    two cells tall with natural boundaries top and bottom. Returns node
    positions, ``|A|`` along the strip and the decay length fitted to
    ``log|A|`` over the first four skin depths.
    """
    delta = skin_depth(rho, omega, mu_r)
    n = int(round(cells_per_depth * depths))
    x = np.linspace(0.0, depths * delta, n + 1)
    y = np.array([0.0, delta / cells_per_depth, 2 * delta / cells_per_depth])
    sigma = np.full((n, 2), 1.0 / rho)
    K, _ = assemble_diffusion(x, y, cell_reaction=1j * omega * MU0 * mu_r * sigma)
    K = K.tocsr()
    ny = y.size
    fixed = np.zeros((x.size, ny), dtype=bool)
    fixed[0, :] = fixed[-1, :] = True
    val = np.zeros((x.size, ny), dtype=complex)
    val[0, :] = 1.0
    f = ~fixed.ravel()
    rhs = -(K[:, ~f] @ val.ravel()[~f])[f]
    u = spla.spsolve(K[f][:, f].tocsc(), rhs)
    _check_residual(K[f][:, f], u, rhs, 1e-9, "skin-depth harness")
    full = val.ravel().copy()
    full[f] = u
    mag = np.abs(full.reshape(x.size, ny)[:, 1])
    sel = x <= 4 * delta
    slope = np.polyfit(x[sel], np.log(mag[sel]), 1)[0]
    return x, mag, float(-1.0 / slope)


# ---------------------------------------------------------------------------
# coupled reference


@dataclass
class CoupledSolution:
    geometry: InductorGeometry
    A: GridField
    Q_plate: GridField
    T: GridField

    @cached_property
    def induced_power(self) -> float:
        return total_induced_power(self.Q_plate)


@dataclass
class CoupledSolver:
    """Magnetic solve, Joule losses interpolated to the thermal grid, thermal solve."""

    magnetic: MagneticSolver = field(default_factory=lambda: default_magnetic_solver())
    thermal: ThermalSolver = field(default_factory=ThermalSolver)
    calls: int = 0

    def __post_init__(self):
        sx, sy = self.magnetic.plate_slice
        self._q_to_thermal = interpolation_matrix(self.magnetic.x[sx], self.magnetic.y[sy], self.thermal.nodes())

    def heat_source(self, Q_plate: GridField) -> np.ndarray:
        return (self._q_to_thermal @ Q_plate.values.ravel()).reshape(self.thermal.shape)

    def solve(self, xi) -> CoupledSolution:
        geom = xi if isinstance(xi, InductorGeometry) else InductorGeometry(tuple(xi), self.magnetic.layout)
        self.calls += 1
        A = self.magnetic.solve(geom)
        Qp = self.magnetic.plate_losses(A)
        T = self.thermal.solve(self.heat_source(Qp))
        return CoupledSolution(geom, A, Qp, T)
