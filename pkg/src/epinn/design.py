"""Inductor design: objectives, field evaluators and optimizers.

Three interchangeable evaluators supply temperatures for a design vector:
the trained hypernetwork (differentiable end to end), a supervised
boundary-temperature network, and the coupled reference solver.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .fields import XI_BOUNDS, CoupledSolver, interpolation_matrix, total_induced_power
from .geometry import PlateDomain, QuadMesh, build_mesh
from .neural import BoxScaler, HyperNetwork, MagneticSurrogate, MlpSpec, OutputTransform, forward

logger = logging.getLogger(__name__)

DEFAULT_BOUNDS = np.array([XI_BOUNDS] * 4, dtype=float)


@dataclass(frozen=True)
class ProximitySpec:
    n_points: int = 200
    T_goal: float = 1130.0
    tol: float = 10.0
    T_max: float = 1140.0


# ---------------------------------------------------------------------------
# objectives on temperature samples


def f_prox(T_top, spec: ProximitySpec = ProximitySpec()) -> int:
    """Number of boundary samples outside the tolerance band (out of ``n_points``)."""
    T = np.asarray(T_top, dtype=float)
    return int(spec.n_points - np.count_nonzero(np.abs(T - spec.T_goal) < spec.tol))


def f_diff(T_top, spec: ProximitySpec = ProximitySpec()) -> float:
    return float(np.max(np.abs(np.asarray(T_top, dtype=float) - spec.T_goal)))


def g_constraint(T_interior, spec: ProximitySpec = ProximitySpec()) -> float:
    """Largest interior temperature minus ``T_max``; feasible when <= 0."""
    return float(np.max(np.asarray(T_interior, dtype=float)) - spec.T_max)


def smooth_max(v, tau: float):
    """tau * log(sum exp(v / tau)), shifted for stability; works on tape values."""
    raw = v.value if isinstance(v, ad.Var) else np.asarray(v)
    shift = float(np.max(raw))
    return shift + tau * np.log(np.exp((v - shift) * (1.0 / tau)).sum())


def smooth_f_diff(T_top, spec: ProximitySpec = ProximitySpec(), tau: float = 0.1):
    d = T_top - spec.T_goal
    both = ad_concat([d, -d]) if isinstance(d, ad.Var) else np.concatenate([d, -d])
    return smooth_max(both, tau)


def ad_concat(parts):
    """Concatenate 1-D tape values (sum of scatters into a common vector)."""
    n = sum(p.shape[0] for p in parts)
    out, off = None, 0
    for p in parts:
        m = p.shape[0]
        basis = np.zeros((m, n))
        basis[np.arange(m), off + np.arange(m)] = 1.0
        term = p @ basis
        out = term if out is None else out + term
        off += m
    return out


# ---------------------------------------------------------------------------
# evaluators


class Evaluator:
    """Temperatures (and optionally induced power) for a design vector."""

    name = "base"
    differentiable = False

    def __init__(self):
        self.calls = 0

    def boundary_temperatures(self, xi) -> np.ndarray:
        raise NotImplementedError

    def interior_temperatures(self, xi) -> np.ndarray:
        raise NotImplementedError(f"the {self.name} evaluator has no interior temperatures")

    def induced_power(self, xi) -> float:
        raise NotImplementedError(f"the {self.name} evaluator has no induced power")


def interior_points(mesh: QuadMesh) -> np.ndarray:
    """Gauss points of ``mesh`` (none lies on the top edge)."""
    return np.asarray(mesh.gauss_points)


class HnnEvaluator(Evaluator):
    """Hypernetwork then thermal network; gradients by reverse mode."""

    name = "hnn"
    differentiable = True

    def __init__(self, hnn: HyperNetwork, params, transform: OutputTransform = OutputTransform(),
                 domain: PlateDomain = PlateDomain(), spec: ProximitySpec = ProximitySpec(),
                 mnn: MagneticSurrogate | None = None, mesh: QuadMesh | None = None):
        super().__init__()
        self.hnn, self.params, self.transform, self.domain = hnn, np.asarray(params), transform, domain
        self.mnn = mnn
        self.mesh = build_mesh(domain, 60, 14) if mesh is None else mesh
        self.scaler = BoxScaler(domain.lower, domain.upper)
        self.top = self.scaler(domain.top_points(spec.n_points))
        self.interior = self.scaler(interior_points(self.mesh))

    def _temps(self, xi, pts):
        z = forward(self.hnn.spec, self.params, self.hnn.xi_scaler(xi))
        theta = self.hnn.base + self.hnn.scale * z
        return self.transform(forward(self.hnn.target, theta, pts)[:, 0])

    def boundary_temperatures(self, xi) -> np.ndarray:
        self.calls += 1
        return self._temps(np.asarray(xi, dtype=float), self.top)

    def interior_temperatures(self, xi) -> np.ndarray:
        self.calls += 1
        return self._temps(np.asarray(xi, dtype=float), self.interior)

    def value_and_grad(self, fn: Callable, xi):
        """``fn(T_top, T_interior)`` and its gradient with respect to ``xi`` (one call)."""
        self.calls += 1

        def wrapped(x):
            return fn(self._temps(x, self.top), self._temps(x, self.interior))

        return ad.value_and_grad(wrapped, np.asarray(xi, dtype=float))

    def induced_power(self, xi) -> float:
        if self.mnn is None:
            raise NotImplementedError("induced power needs the magnetic surrogate")
        q = self.mnn.predict(np.asarray(xi, dtype=float), self.mesh.gauss_points)
        return float(np.dot(self.mesh.gauss_weights, q))


class SnnEvaluator(Evaluator):
    """Supervised network predicting the boundary temperatures directly."""

    name = "snn"

    def __init__(self, spec: MlpSpec, params, scaler: BoxScaler, stats, mnn: MagneticSurrogate | None = None,
                 mesh: QuadMesh | None = None):
        super().__init__()
        self.spec, self.params, self.scaler = spec, np.asarray(params), scaler
        self.mean, self.std = stats
        self.mnn = mnn
        self.mesh = build_mesh(PlateDomain(), 60, 14) if mesh is None else mesh

    def boundary_temperatures(self, xi) -> np.ndarray:
        self.calls += 1
        z = forward(self.spec, self.params, self.scaler(np.asarray(xi, dtype=float)))
        return self.mean + self.std * z

    def induced_power(self, xi) -> float:
        if self.mnn is None:
            raise NotImplementedError("induced power needs the magnetic surrogate")
        q = self.mnn.predict(np.asarray(xi, dtype=float), self.mesh.gauss_points)
        return float(np.dot(self.mesh.gauss_weights, q))


class FdEvaluator(Evaluator):
    """Coupled reference solver; results cached per design vector."""

    name = "fd"

    def __init__(self, coupled: CoupledSolver | None = None, spec: ProximitySpec = ProximitySpec(),
                 mesh: QuadMesh | None = None, cache_size: int = 4096):
        super().__init__()
        self.coupled = CoupledSolver() if coupled is None else coupled
        th = self.coupled.thermal
        self.mesh = build_mesh(th.domain, 60, 14) if mesh is None else mesh
        self._top = interpolation_matrix(th.x, th.y, th.domain.top_points(spec.n_points))
        self._int = interpolation_matrix(th.x, th.y, interior_points(self.mesh))
        self._cache: dict = {}
        self._cache_size = cache_size

    def solve(self, xi):
        key = tuple(np.round(np.asarray(xi, dtype=float), 12))
        hit = self._cache.get(key)
        if hit is None:
            self.calls += 1
            sol = self.coupled.solve(key)
            hit = (sol.T.values.ravel(), sol.induced_power)
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = hit
        return hit

    def boundary_temperatures(self, xi) -> np.ndarray:
        return self._top @ self.solve(xi)[0]

    def interior_temperatures(self, xi) -> np.ndarray:
        return self._int @ self.solve(xi)[0]

    def induced_power(self, xi) -> float:
        return self.solve(xi)[1]


def f_ind(xi, evaluator: Evaluator) -> float:
    """Negative total induced power in the half plate (W/m)."""
    return -evaluator.induced_power(xi)


def f_ind_from_grid(Q) -> float:
    return -total_induced_power(Q)


# ---------------------------------------------------------------------------
# differential evolution


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nfev: int
    history: list = field(default_factory=list)  # best value per iteration
    success: bool = True
    message: str = ""
    extra: dict = field(default_factory=dict)


def differential_evolution(objective: Callable, bounds=DEFAULT_BOUNDS, pop: int = 50, generations: int = 50,
                           F: float = 0.8, CR: float = 0.9, seed: int = 0) -> OptimizeResult:
    """DE/rand/1/bin; mutants are clipped to the box; a trial replaces its target when not worse."""
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = len(lo)
    if pop < 4:
        raise ValueError("DE/rand/1 needs a population of at least 4")
    rng = np.random.default_rng(seed)
    X = lo + rng.random((pop, d)) * (hi - lo)
    fit = np.array([objective(x) for x in X], dtype=float)
    nfev = pop
    history = [float(fit.min())]
    for _ in range(generations):
        for i in range(pop):
            r = rng.choice(pop - 1, 3, replace=False)
            r[r >= i] += 1
            v = np.clip(X[r[0]] + F * (X[r[1]] - X[r[2]]), lo, hi)
            mask = rng.random(d) < CR
            mask[rng.integers(d)] = True
            u = np.where(mask, v, X[i])
            fu = float(objective(u))
            nfev += 1
            if fu <= fit[i]:
                X[i], fit[i] = u, fu
        history.append(float(fit.min()))
    b = int(np.argmin(fit))
    return OptimizeResult(X[b].copy(), float(fit[b]), nfev, history)


# ---------------------------------------------------------------------------
# NSGA-II


def dominates(a, b) -> bool:
    return bool(np.all(a <= b) and np.any(a < b))


def _dominance_matrix(F: np.ndarray) -> np.ndarray:
    """D[i, j] is True when point i dominates point j."""
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    return le & lt


def nondominated_sort(F: np.ndarray) -> list[list[int]]:
    """Fronts of indices, best first (fast nondominated sorting)."""
    D = _dominance_matrix(np.atleast_2d(F))
    count = D.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while current.size:
        fronts.append(current.tolist())
        count = count - D[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


def crowding_distance(F: np.ndarray) -> np.ndarray:
    n, m = F.shape
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        span = F[order[-1], k] - F[order[0], k]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span > 0:
            dist[order[1:-1]] += (F[order[2:], k] - F[order[:-2], k]) / span
    return dist


def _sbx(p1, p2, lo, hi, eta, rng):
    c1, c2 = p1.copy(), p2.copy()
    for j in range(len(p1)):
        if rng.random() > 0.5 or abs(p1[j] - p2[j]) < 1e-14:
            continue
        y1, y2 = min(p1[j], p2[j]), max(p1[j], p2[j])
        u = rng.random()
        span = y2 - y1
        beta = 1.0 + 2.0 * (y1 - lo[j]) / span
        alpha = 2.0 - beta ** -(eta + 1)
        bq = (u * alpha) ** (1 / (eta + 1)) if u <= 1 / alpha else (1 / (2 - u * alpha)) ** (1 / (eta + 1))
        a = 0.5 * (y1 + y2 - bq * span)
        beta = 1.0 + 2.0 * (hi[j] - y2) / span
        alpha = 2.0 - beta ** -(eta + 1)
        bq = (u * alpha) ** (1 / (eta + 1)) if u <= 1 / alpha else (1 / (2 - u * alpha)) ** (1 / (eta + 1))
        b = 0.5 * (y1 + y2 + bq * span)
        a, b = np.clip(a, lo[j], hi[j]), np.clip(b, lo[j], hi[j])
        if rng.random() < 0.5:
            a, b = b, a
        c1[j], c2[j] = a, b
    return c1, c2


def _poly_mutation(x, lo, hi, eta, pm, rng):
    y = x.copy()
    for j in range(len(x)):
        if rng.random() >= pm:
            continue
        span = hi[j] - lo[j]
        d1, d2 = (y[j] - lo[j]) / span, (hi[j] - y[j]) / span
        u = rng.random()
        p = 1.0 / (eta + 1)
        if u < 0.5:
            dq = (2 * u + (1 - 2 * u) * (1 - d1) ** (eta + 1)) ** p - 1
        else:
            dq = 1 - (2 * (1 - u) + 2 * (u - 0.5) * (1 - d2) ** (eta + 1)) ** p
        y[j] = np.clip(y[j] + dq * span, lo[j], hi[j])
    return y


@dataclass
class ParetoArchive:
    """Nondominated designs with their objective vectors."""

    X: np.ndarray
    F: np.ndarray
    nfev: int = 0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))

    @classmethod
    def from_points(cls, X, F, nfev: int = 0) -> "ParetoArchive":
        X, F = np.atleast_2d(X), np.atleast_2d(F)
        keep = nondominated_mask(F)
        Fk, Xk = F[keep], X[keep]
        _, first = np.unique(np.round(Fk, 12), axis=0, return_index=True)
        first = np.sort(first)
        order = np.lexsort(Fk[first].T[::-1])
        idx = first[order]
        return cls(Xk[idx], Fk[idx], nfev)

    def is_nondominated(self) -> bool:
        return bool(np.all(nondominated_mask(self.F)))

    def to_csv(self, path, names=("f_prox", "f_ind")) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(names) + [f"xi{j + 1}" for j in range(self.X.shape[1])])
            for f, x in zip(self.F, self.X):
                w.writerow([repr(float(v)) for v in f] + [repr(float(v)) for v in x])
        return path


def nondominated_mask(F: np.ndarray) -> np.ndarray:
    F = np.atleast_2d(F)
    if F.shape[1] == 2:
        # sweep in (f1, f2) order: a point survives if its f2 beats every earlier point's
        order = np.lexsort((F[:, 1], F[:, 0]))
        keep = np.zeros(len(F), dtype=bool)
        best = np.inf
        prev = None
        for i in order:
            if F[i, 1] < best:
                keep[i] = True
                best = F[i, 1]
                prev = F[i]
            elif prev is not None and np.array_equal(F[i], prev):
                keep[i] = True
        return keep
    if len(F) > 2000:
        keep = np.ones(len(F), dtype=bool)
        for i in range(len(F)):
            keep[i] = not np.any(np.all(F <= F[i], axis=1) & np.any(F < F[i], axis=1))
        return keep
    return ~_dominance_matrix(F).any(axis=0)


def nsga2(objectives: Callable, bounds=DEFAULT_BOUNDS, pop: int = 50, generations: int = 100, seed: int = 0,
          eta_c: float = 15.0, eta_m: float = 20.0, p_cross: float = 0.9, p_mut: float | None = None,
          on_generation: Callable | None = None) -> ParetoArchive:
    """NSGA-II with binary tournaments, SBX crossover and polynomial mutation.

    ``objectives(x)`` returns a vector to minimize. The returned archive
    holds the nondominated set of everything evaluated.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = len(lo)
    pm = 1.0 / d if p_mut is None else p_mut
    rng = np.random.default_rng(seed)
    X = lo + rng.random((pop, d)) * (hi - lo)
    F = np.array([objectives(x) for x in X], dtype=float)
    nfev = pop
    archive = ParetoArchive.from_points(X, F, nfev)

    def rank_and_crowd(F):
        rank = np.empty(len(F), dtype=int)
        crowd = np.empty(len(F))
        for r, fr in enumerate(nondominated_sort(F)):
            rank[fr] = r
            crowd[fr] = crowding_distance(F[fr])
        return rank, crowd

    rank, crowd = rank_and_crowd(F)
    for gen in range(generations):
        def tournament():
            a, b = rng.integers(pop, size=2)
            if rank[a] != rank[b]:
                return a if rank[a] < rank[b] else b
            return a if crowd[a] >= crowd[b] else b

        kids = []
        while len(kids) < pop:
            p1, p2 = X[tournament()], X[tournament()]
            if rng.random() < p_cross:
                c1, c2 = _sbx(p1, p2, lo, hi, eta_c, rng)
            else:
                c1, c2 = p1.copy(), p2.copy()
            kids += [_poly_mutation(c1, lo, hi, eta_m, pm, rng), _poly_mutation(c2, lo, hi, eta_m, pm, rng)]
        Xk = np.array(kids[:pop])
        Fk = np.array([objectives(x) for x in Xk], dtype=float)
        nfev += pop
        XA, FA = np.vstack([X, Xk]), np.vstack([F, Fk])
        chosen = []
        for fr in nondominated_sort(FA):
            if len(chosen) + len(fr) <= pop:
                chosen += fr
            else:
                cd = crowding_distance(FA[fr])
                order = np.argsort(-cd, kind="stable")
                chosen += [fr[i] for i in order[: pop - len(chosen)]]
                break
        X, F = XA[chosen], FA[chosen]
        rank, crowd = rank_and_crowd(F)
        archive = ParetoArchive.from_points(np.vstack([archive.X, Xk]), np.vstack([archive.F, Fk]), nfev)
        if on_generation is not None:
            on_generation(gen, archive)
    return archive


def hypervolume_2d(F, ref) -> float:
    """Area dominated by a set of 2-objective points (minimization) up to ``ref``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    F = F[np.all(F < np.asarray(ref), axis=1)]
    if len(F) == 0:
        return 0.0
    F = F[nondominated_mask(F)]
    F = F[np.argsort(F[:, 0])]
    hv, prev_y = 0.0, ref[1]
    for x, y in F:
        if y < prev_y:
            hv += (ref[0] - x) * (prev_y - y)
            prev_y = y
    return float(hv)


def epsilon_indicator(A, B, scale=None) -> float:
    """Smallest additive eps such that every point of B is eps-dominated by some point of A.

    With ``scale`` each objective difference is divided by it first.
    """
    A, B = np.atleast_2d(A).astype(float), np.atleast_2d(B).astype(float)
    s = np.ones(A.shape[1]) if scale is None else np.asarray(scale, dtype=float)
    diff = (A[:, None, :] - B[None, :, :]) / s
    return float(np.max(np.min(np.max(diff, axis=2), axis=0)))


def random_cloud(objectives: Callable, n: int = 2500, bounds=DEFAULT_BOUNDS, seed: int = 0):
    bounds = np.asarray(bounds, dtype=float)
    rng = np.random.default_rng(seed)
    X = bounds[:, 0] + rng.random((n, len(bounds))) * (bounds[:, 1] - bounds[:, 0])
    return X, np.array([objectives(x) for x in X], dtype=float)


# ---------------------------------------------------------------------------
# gradient-based constrained solve


def _project(x, lo, hi):
    return np.minimum(np.maximum(x, lo), hi)


def projected_gradient(fun_grad: Callable, x0, bounds, max_calls: int = 200, tol: float = 1e-4,
                       counter: list | None = None, max_iter: int = 1000):
    """Spectral projected gradient with a nonmonotone Armijo search.

    ``fun_grad(x) -> (f, g)``; each call counts against ``max_calls`` (shared
    through ``counter`` when given). Stops when the projected-gradient step
    ``|P(x - g) - x|_inf`` falls below ``tol``.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    counter = [0] if counter is None else counter

    def call(x):
        counter[0] += 1
        f, g = fun_grad(x)
        return float(f), np.asarray(g, dtype=float)

    x = _project(np.asarray(x0, dtype=float), lo, hi)
    f, g = call(x)
    recent = [f]
    alpha = 1.0 / max(1e-12, np.max(np.abs(_project(x - g, lo, hi) - x)))
    alpha = min(max(alpha, 1e-6), 1e6)
    for _ in range(max_iter):
        pg = _project(x - g, lo, hi) - x
        if np.max(np.abs(pg)) < tol or counter[0] >= max_calls:
            break
        d = _project(x - alpha * g, lo, hi) - x
        fref = max(recent[-10:])
        lam = 1.0
        while True:
            xn = x + lam * d
            fn, gn = call(xn)
            if fn <= fref + 1e-4 * lam * float(g @ d) or counter[0] >= max_calls:
                break
            lam *= 0.5
            if lam < 1e-10:
                break
        s, y = xn - x, gn - g
        sy = float(s @ y)
        alpha = min(max(float(s @ s) / sy, 1e-6), 1e6) if sy > 0 else 1e6
        if fn > f and counter[0] >= max_calls:
            break
        x, f, g = xn, fn, gn
        recent.append(f)
    pg = _project(x - g, lo, hi) - x
    return x, f, g, float(np.max(np.abs(pg)))


def augmented_lagrangian(fg: Callable, x0, bounds=DEFAULT_BOUNDS, n_con: int = 1, max_calls: int = 200,
                         tol: float = 1e-4, feas_tol: float = 1e-6, rho0: float = 10.0, max_outer: int = 30):
    """Minimize f subject to c(x) <= 0 and box bounds.

    ``fg(x) -> (f, grad f, c, jac c)`` with ``c`` of length ``n_con``. The
    inner problems are solved by :func:`projected_gradient`; multipliers use
    the standard first-order update. Returns an :class:`OptimizeResult` whose
    ``extra`` holds the constraint values, multipliers and KKT residual.
    """
    bounds = np.asarray(bounds, dtype=float)
    mu = np.zeros(n_con)
    rho = rho0
    x = np.asarray(x0, dtype=float)
    counter = [0]
    history = []
    best = None
    last = {}
    recent: dict = {}

    def evaluate(xv):
        key = np.asarray(xv, dtype=float).tobytes()
        if key not in recent:
            f, gf, c, J = fg(xv)
            recent[key] = dict(x=np.array(xv, dtype=float), f=float(f), gf=np.asarray(gf, dtype=float),
                               c=np.atleast_1d(np.asarray(c, dtype=float)), J=np.atleast_2d(np.asarray(J, dtype=float)))
            if len(recent) > 8:
                recent.pop(next(iter(recent)))
        last.update(recent[key])

    def lag(xv):
        evaluate(xv)
        f, gf, c, J = last["f"], last["gf"], last["c"], last["J"]
        shifted = np.maximum(0.0, mu + rho * c)
        val = f + float(np.sum(shifted**2 - mu**2)) / (2 * rho)
        return val, np.asarray(gf, dtype=float) + J.T @ shifted

    kkt = np.inf
    viol_prev = np.inf
    for _ in range(max_outer):
        x, _, _, _ = projected_gradient(lag, x, bounds, max_calls=max_calls, tol=tol, counter=counter)
        evaluate(x)  # the accepted point was evaluated inside the inner solve
        c = last["c"]
        history.append(last["f"])
        mu = np.maximum(0.0, mu + rho * c)
        gl = last["gf"] + last["J"].T @ mu
        kkt = float(np.max(np.abs(_project(x - gl, bounds[:, 0], bounds[:, 1]) - x)))
        viol = float(np.max(np.maximum(c, 0.0)))
        comp = float(np.max(np.abs(mu * c)))
        if best is None or (viol, last["f"]) < (best[1], best[2]):
            best = (x.copy(), viol, last["f"], c.copy())
        if kkt < tol and viol < feas_tol and comp < max(tol, feas_tol) * 10:
            break
        if counter[0] >= max_calls:
            break
        if viol > feas_tol and viol > 0.25 * viol_prev:
            rho *= 10.0
        viol_prev = viol
    xb, viol, fb, cb = best if best is not None else (x, np.inf, np.nan, np.nan)
    if viol <= feas_tol and np.allclose(xb, x):
        xb, fb, cb = x, last["f"], last["c"]
    res = OptimizeResult(np.array(xb), float(fb), counter[0], history)
    res.success = bool(viol <= feas_tol and kkt < tol)
    res.message = "converged" if res.success else ("infeasible" if viol > feas_tol else "call budget exhausted")
    res.extra = {"constraint": np.asarray(cb).tolist(), "multipliers": mu.tolist(), "kkt": kkt, "feasible": bool(viol <= feas_tol)}
    return res


# ---------------------------------------------------------------------------
# design problems on an evaluator


def prox_objective(evaluator: Evaluator, spec: ProximitySpec = ProximitySpec()) -> Callable:
    return lambda xi: f_prox(evaluator.boundary_temperatures(xi), spec)


def diff_objective(evaluator: Evaluator, spec: ProximitySpec = ProximitySpec()) -> Callable:
    return lambda xi: f_diff(evaluator.boundary_temperatures(xi), spec)


def solve_diff(evaluator: HnnEvaluator, start=None, spec: ProximitySpec = ProximitySpec(), tau: float = 0.1,
               constrained: bool = False, bounds=DEFAULT_BOUNDS, max_calls: int = 200, tol: float = 1e-4):
    """Gradient-based min of the smoothed f_diff, optionally with the interior-temperature constraint."""
    if not evaluator.differentiable:
        raise ValueError(f"the {evaluator.name} evaluator provides no gradients")
    bounds = np.asarray(bounds, dtype=float)
    x0 = bounds.mean(axis=1) if start is None else np.asarray(start, dtype=float)

    def fobj(T_top, T_int):
        return smooth_f_diff(T_top, spec, tau)

    def fcon(T_top, T_int):
        return smooth_max(T_int, tau) - spec.T_max

    def fg(x):
        f, gf = evaluator.value_and_grad(fobj, x)
        if not constrained:
            return f, gf, np.array([-1.0]), np.zeros((1, len(x)))
        c, gc = evaluator.value_and_grad(fcon, x)
        return f, gf, np.array([c]), np.atleast_2d(gc)

    calls_before = evaluator.calls
    # the constrained problem costs two evaluator calls per Lagrangian evaluation
    res = augmented_lagrangian(fg, x0, bounds, 1, max_calls=max_calls // (2 if constrained else 1), tol=tol)
    res.extra["evaluator_calls"] = evaluator.calls - calls_before
    T_top = evaluator.boundary_temperatures(res.x)
    res.extra["f_diff_exact"] = f_diff(T_top, spec)
    if constrained:
        res.extra["g_exact"] = g_constraint(evaluator.interior_temperatures(res.x), spec)
    return res


# ---------------------------------------------------------------------------
# reports


def write_report(out_dir, name: str, config: dict, seed: int, result: OptimizeResult, objective_names=("objective",)):
    """JSON summary plus a CSV trace of best value per iteration."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "config": config,
        "seed": seed,
        "best_xi": [float(v) for v in result.x],
        "objectives": {objective_names[0]: result.fun},
        "evaluations": result.nfev,
        "success": result.success,
        "message": result.message,
        "extra": result.extra,
        "history": [float(v) for v in result.history],
    }
    (out / f"{name}.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    with (out / f"{name}_trace.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "best"])
        for i, v in enumerate(result.history):
            w.writerow([i, repr(float(v))])
    return out / f"{name}.json"
