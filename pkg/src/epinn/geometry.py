"""Structured quadrature mesh of the half plate.

The plate occupies ``[0, half_width] x [0, thickness]``; ``x = 0`` is the
symmetry edge. Elements are equal rectangles carrying a 2x2 Gauss rule.
Robin (convective) edges are top, bottom and right, each split into
segments with a 2-point Gauss rule. The symmetry edge is a natural
(homogeneous Neumann) boundary and gets no quadrature points.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GAUSS_1D = np.array([-1.0, 1.0]) / np.sqrt(3.0)
GAUSS_W_1D = np.array([0.5, 0.5])  # normalized to the unit interval

EDGE_BOTTOM, EDGE_RIGHT, EDGE_TOP = 0, 1, 2


@dataclass(frozen=True)
class PlateDomain:
    half_width: float = 0.120
    thickness: float = 0.014

    def __post_init__(self):
        if not (self.half_width > 0 and self.thickness > 0):
            raise ValueError("plate extents must be positive")

    @property
    def area(self) -> float:
        return self.half_width * self.thickness

    @property
    def robin_length(self) -> float:
        return 2 * self.half_width + self.thickness

    @property
    def lower(self) -> tuple[float, float]:
        return (0.0, 0.0)

    @property
    def upper(self) -> tuple[float, float]:
        return (self.half_width, self.thickness)

    def top_points(self, n: int = 200) -> np.ndarray:
        """``n`` equally spaced points on the upper edge, corners included."""
        xs = np.linspace(0.0, self.half_width, n)
        return np.column_stack([xs, np.full(n, self.thickness)])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class QuadMesh:
    """Equal rectangular elements with Gauss points and Robin boundary segments.

    ``gauss_weights`` already include the element area (they sum to ``A_i``
    per element); likewise ``robin_weights`` include the segment length.
    """

    domain: PlateDomain
    nx: int
    ny: int
    element_corners: np.ndarray  # (N, 4): x0, y0, x1, y1
    element_area: np.ndarray  # (N,)
    gauss_points: np.ndarray  # (N*4, 2)
    gauss_weights: np.ndarray  # (N*4,)
    robin_points: np.ndarray  # (M*2, 2)
    robin_weights: np.ndarray  # (M*2,)
    robin_normals: np.ndarray  # (M*2, 2)
    robin_edge: np.ndarray  # (M*2,) EDGE_* code
    robin_segments: np.ndarray  # (M, 4): endpoints x0, y0, x1, y1
    neumann_segments: np.ndarray  # (ny, 4) on x = 0

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def points_per_element(self) -> int:
        return 4

    def to_csv(self, path) -> Path:
        """Debug dump: element id, centroid, area."""
        path = Path(path)
        c = self.element_corners
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["element", "cx", "cy", "area"])
            for i in range(self.n_elements):
                w.writerow([i, 0.5 * (c[i, 0] + c[i, 2]), 0.5 * (c[i, 1] + c[i, 3]), self.element_area[i]])
        return path


def build_mesh(domain: PlateDomain = PlateDomain(), nx: int = 100, ny: int = 100) -> QuadMesh:
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"element counts must be positive integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    L, H = domain.half_width, domain.thickness
    xe = np.linspace(0.0, L, nx + 1)
    ye = np.linspace(0.0, H, ny + 1)
    x0, y0 = np.meshgrid(xe[:-1], ye[:-1], indexing="ij")
    x1, y1 = np.meshgrid(xe[1:], ye[1:], indexing="ij")
    corners = np.column_stack([x0.ravel(), y0.ravel(), x1.ravel(), y1.ravel()])
    area = (corners[:, 2] - corners[:, 0]) * (corners[:, 3] - corners[:, 1])

    # 2x2 tensor Gauss rule mapped onto each element
    gx, gy = np.meshgrid(GAUSS_1D, GAUSS_1D, indexing="ij")
    gw = np.outer(GAUSS_W_1D, GAUSS_W_1D).ravel()
    cx = 0.5 * (corners[:, 0] + corners[:, 2])
    cy = 0.5 * (corners[:, 1] + corners[:, 3])
    hx = 0.5 * (corners[:, 2] - corners[:, 0])
    hy = 0.5 * (corners[:, 3] - corners[:, 1])
    px = cx[:, None] + hx[:, None] * gx.ravel()[None, :]
    py = cy[:, None] + hy[:, None] * gy.ravel()[None, :]
    gauss_points = np.column_stack([px.ravel(), py.ravel()])
    gauss_weights = (area[:, None] * gw[None, :]).ravel()

    segs, edge = [], []
    for a, b in zip(xe[:-1], xe[1:]):
        segs.append((a, 0.0, b, 0.0))
        edge.append(EDGE_BOTTOM)
    for a, b in zip(ye[:-1], ye[1:]):
        segs.append((L, a, L, b))
        edge.append(EDGE_RIGHT)
    for a, b in zip(xe[:-1], xe[1:]):
        segs.append((a, H, b, H))
        edge.append(EDGE_TOP)
    segs = np.array(segs)
    edge = np.array(edge)
    normals_by_edge = {EDGE_BOTTOM: (0.0, -1.0), EDGE_RIGHT: (1.0, 0.0), EDGE_TOP: (0.0, 1.0)}

    t = 0.5 * (GAUSS_1D + 1.0)  # parameter along segment
    mid = segs[:, None, :2] + (segs[:, None, 2:] - segs[:, None, :2]) * t[None, :, None]
    seg_len = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1])
    robin_points = mid.reshape(-1, 2)
    robin_weights = (seg_len[:, None] * GAUSS_W_1D[None, :]).ravel()
    robin_edge = np.repeat(edge, 2)
    robin_normals = np.array([normals_by_edge[e] for e in robin_edge])
    neumann = np.column_stack([np.zeros(ny), ye[:-1], np.zeros(ny), ye[1:]])

    return QuadMesh(
        domain=domain,
        nx=nx,
        ny=ny,
        element_corners=_frozen(corners),
        element_area=_frozen(area),
        gauss_points=_frozen(gauss_points),
        gauss_weights=_frozen(gauss_weights),
        robin_points=_frozen(robin_points),
        robin_weights=_frozen(robin_weights),
        robin_normals=_frozen(robin_normals),
        robin_edge=np.asarray(robin_edge),
        robin_segments=_frozen(segs),
        neumann_segments=_frozen(neumann),
    )


def integrate_domain(mesh: QuadMesh, samples) -> float:
    """Sum_i A_i Sum_k w_k f(x_ik) for samples given at ``mesh.gauss_points``."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (len(mesh.gauss_weights),):
        raise ValueError(f"expected {len(mesh.gauss_weights)} samples at Gauss points, got {samples.shape}")
    return float(np.dot(mesh.gauss_weights, samples))


def integrate_boundary(mesh: QuadMesh, samples) -> float:
    """Sum_i l_i Sum_k w_k f(x_ik) for samples given at ``mesh.robin_points``."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (len(mesh.robin_weights),):
        raise ValueError(f"expected {len(mesh.robin_weights)} samples at Robin points, got {samples.shape}")
    return float(np.dot(mesh.robin_weights, samples))
