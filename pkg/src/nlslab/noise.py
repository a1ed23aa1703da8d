"""Wiener fields, Brownian paths, the phase gauge and first-order coefficients.

The noise enters as W(t,x) = sum_l i phi_l(x) B_l(t) with real bounded
spatial profiles phi_l and independent Brownian motions B_l.  Since W is
purely imaginary, the gauge e^{-W} is a pointwise phase and preserves every
L^p norm exactly.  The gauged equation picks up first-order coefficients

    a1 = 2i sum_l grad(phi_l) B_l,
    a0 = -sum_j (sum_l d_j phi_l B_l)^2 + i sum_l Lap(phi_l) B_l,

which this module evaluates from analytic profile derivatives.

Path generation is deterministic per seed and single-threaded; distinct
seeds can be generated and consumed in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import ComplexField, GridSpec


class NoiseError(ValueError):
    """Invalid profile construction or path lookup."""


# ---------------------------------------------------------------------------
# spatial profiles


@dataclass(frozen=True)
class ProfileSpec:
    """Picklable recipe for a profile set (rebuilt per worker process)."""

    kind: str  # constant | schwartz | flat
    amplitude: float
    n_modes: int = 1
    flat_points: tuple = ()
    sigma: float | None = None


@dataclass
class NoiseProfileSet:
    """Real spatial profiles with analytic gradients and Laplacians."""

    kind: str
    amplitude: float
    grid: GridSpec
    phi: list  # list of arrays
    grad: list  # list of [d arrays]
    lap: list  # list of arrays
    phi_funcs: list  # callables on coordinate arrays, for derivative checks
    flat_points: tuple = ()
    flat_order: int = 5
    mu: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mu = 0.5 * sum(p**2 for p in self.phi)

    @property
    def n_modes(self) -> int:
        return len(self.phi)

    def psi(self, weights) -> np.ndarray:
        """sum_l phi_l * w_l (the real gauge phase for given mode weights)."""
        out = np.zeros(self.grid.shape)
        for p, w in zip(self.phi, weights):
            out = out + p * w
        return out

    def grad_psi(self, weights) -> list:
        out = [np.zeros(self.grid.shape) for _ in range(self.grid.d)]
        for g, w in zip(self.grad, weights):
            for j in range(self.grid.d):
                out[j] = out[j] + g[j] * w
        return out


def _constant_modes(spec: ProfileSpec, grid: GridSpec):
    shape = grid.shape
    phis, grads, laps, funcs = [], [], [], []
    for _ in range(spec.n_modes):
        phis.append(np.full(shape, spec.amplitude))
        grads.append([np.zeros(shape) for _ in range(grid.d)])
        laps.append(np.zeros(shape))
        funcs.append(lambda *coords, a=spec.amplitude: np.broadcast_arrays(*coords)[0] * 0.0 + a)
    return phis, grads, laps, funcs


def _schwartz_modes(spec: ProfileSpec, grid: GridSpec):
    sigma0 = spec.sigma if spec.sigma is not None else grid.extent / 12.0
    mesh = grid.mesh()
    d = grid.d
    phis, grads, laps, funcs = [], [], [], []
    for l in range(spec.n_modes):
        s = sigma0 / (1.0 + 0.25 * l)

        def func(*coords, a=spec.amplitude, s=s):
            r2 = sum(np.asarray(c, dtype=float) ** 2 for c in coords)
            return a * np.exp(-r2 / s**2)

        p = func(*mesh)
        grads.append([-2.0 * xj / s**2 * p for xj in mesh])
        laps.append((-2.0 * d / s**2 + 4.0 * grid.radius_squared() / s**4) * p)
        phis.append(p + np.zeros(grid.shape))
        funcs.append(func)
    return phis, grads, laps, funcs


def _flat_factor(r2: np.ndarray, s: float):
    """Radial factor r^6 exp(-r^2/s^2) with gradient prefactor and Laplacian parts.

    Returns (F, G, H) where grad F = G * (x - x_k) and, for dimension d,
    Lap F = H + (d-1+2) ... assembled by the caller from radial identities.
    """
    g = np.exp(-r2 / s**2)
    r4 = r2 * r2
    F = r4 * r2 * g
    G = g * (6.0 * r4 - 2.0 * r4 * r2 / s**2)
    # radial second derivative F'' and F'/r are both needed for the Laplacian
    Fpp = g * (30.0 * r4 - 26.0 * r4 * r2 / s**2 + 4.0 * r4 * r4 / s**4)
    return F, G, Fpp


def _flat_modes(spec: ProfileSpec, grid: GridSpec):
    if not spec.flat_points:
        raise NoiseError("flat profile kind requires at least one flat point")
    d = grid.d
    pts = []
    for pt in spec.flat_points:
        p = np.atleast_1d(np.asarray(pt, dtype=float))
        if p.size != d:
            raise NoiseError(f"flat point {pt!r} does not have {d} components")
        if np.any(np.abs(p) > 0.5 * grid.extent - 5.0):
            raise NoiseError(f"flat point {pt!r} closer than 5 units to the box edge")
        pts.append(p)
    mesh = grid.mesh()

    phis, grads, laps, funcs = [], [], [], []
    for l in range(spec.n_modes):
        s = 1.0 / (1.0 + 0.25 * l)
        # per-point factor fields
        Fs, Gs, Fpps, diffs = [], [], [], []
        for p in pts:
            diff = [xj - cj for xj, cj in zip(mesh, p)]
            r2 = sum(dj**2 for dj in diff)
            F, G, Fpp = _flat_factor(r2, s)
            Fs.append(F)
            Gs.append(G)
            Fpps.append(Fpp)
            diffs.append(diff)
        K = len(pts)

        def others(j):
            out = np.ones(grid.shape)
            for k in range(K):
                if k != j:
                    out = out * Fs[k]
            return out

        phi = spec.amplitude * np.prod(np.array([np.broadcast_to(F, grid.shape) for F in Fs]), axis=0)
        grad = [np.zeros(grid.shape) for _ in range(d)]
        lap = np.zeros(grid.shape)
        for j in range(K):
            oth = others(j)
            gj = [Gs[j] * diffs[j][ax] for ax in range(d)]
            for ax in range(d):
                grad[ax] = grad[ax] + spec.amplitude * gj[ax] * oth
            # Lap F_j = F'' + (d-1) F'/r with F'/r = G
            lap_fj = Fpps[j] + (d - 1) * Gs[j]
            lap = lap + spec.amplitude * lap_fj * oth
            for i in range(j + 1, K):
                oth_ij = np.ones(grid.shape)
                for k in range(K):
                    if k != i and k != j:
                        oth_ij = oth_ij * Fs[k]
                gi = [Gs[i] * diffs[i][ax] for ax in range(d)]
                dot = sum(gj[ax] * gi[ax] for ax in range(d))
                lap = lap + 2.0 * spec.amplitude * dot * oth_ij

        def func(*coords, a=spec.amplitude, s=s, pts=tuple(tuple(p) for p in pts)):
            coords = [np.asarray(c, dtype=float) for c in coords]
            out = None
            for p in pts:
                r2 = sum((c - cj) ** 2 for c, cj in zip(coords, p))
                F = r2**3 * np.exp(-r2 / s**2)
                out = F if out is None else out * F
            return a * out

        phis.append(phi)
        grads.append(grad)
        laps.append(lap)
        funcs.append(func)
    return phis, grads, laps, funcs


def build_profiles(spec: ProfileSpec, grid: GridSpec) -> NoiseProfileSet:
    if spec.amplitude < 0:
        raise NoiseError("amplitude must be nonnegative")
    if spec.n_modes < 1 or spec.n_modes > 8:
        raise NoiseError("number of noise modes must be between 1 and 8")
    builders = {
        "constant": _constant_modes,
        "schwartz": _schwartz_modes,
        "flat": _flat_modes,
    }
    if spec.kind not in builders:
        raise NoiseError(f"unknown profile kind {spec.kind!r}")
    phis, grads, laps, funcs = builders[spec.kind](spec, grid)
    out = NoiseProfileSet(
        kind=spec.kind,
        amplitude=spec.amplitude,
        grid=grid,
        phi=phis,
        grad=grads,
        lap=laps,
        phi_funcs=funcs,
        flat_points=tuple(tuple(np.atleast_1d(np.asarray(p, dtype=float))) for p in spec.flat_points),
    )
    _check_asymptotic_flatness(out)
    return out


def make_profiles(kind: str, amplitude: float, flat_points, grid: GridSpec, n_modes: int = 1, sigma: float | None = None) -> NoiseProfileSet:
    """Construct a profile set of the given kind on the grid."""
    spec = ProfileSpec(
        kind=kind,
        amplitude=float(amplitude),
        n_modes=int(n_modes),
        flat_points=tuple(flat_points) if flat_points else (),
        sigma=sigma,
    )
    return build_profiles(spec, grid)


def _edge_mask(grid: GridSpec) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    if grid.d == 1:
        mask[0] = mask[-1] = True
    else:
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
    return mask


def _check_asymptotic_flatness(profiles: NoiseProfileSet, tol: float = 1e-8) -> None:
    """<x>^2 |d^nu phi| must vanish at the box edge (first and second order)."""
    grid = profiles.grid
    mask = _edge_mask(grid)
    bracket = 1.0 + grid.radius_squared()
    for l in range(profiles.n_modes):
        worst = 0.0
        for g in profiles.grad[l]:
            worst = max(worst, float(np.max(bracket[mask] * np.abs(g[mask]))))
        worst = max(worst, float(np.max(bracket[mask] * np.abs(profiles.lap[l][mask]))))
        if worst > tol:
            raise NoiseError(
                f"profile mode {l} not asymptotically flat at the box edge "
                f"(<x>^2 |d phi| = {worst:.3e} > {tol:g})"
            )


def finite_difference_derivative(func: Callable, point, order: int, axis: int, d: int, h: float = 0.05) -> float:
    """Centered finite-difference pure-axis derivative of a profile callable."""
    stencils = {
        0: ([0], [1.0]),
        1: ([-1, 1], [-0.5, 0.5]),
        2: ([-1, 0, 1], [1.0, -2.0, 1.0]),
        3: ([-2, -1, 1, 2], [-0.5, 1.0, -1.0, 0.5]),
        4: ([-2, -1, 0, 1, 2], [1.0, -4.0, 6.0, -4.0, 1.0]),
        5: ([-3, -2, -1, 1, 2, 3], [-0.5, 2.0, -2.5, 2.5, -2.0, 0.5]),
    }
    offsets, coefs = stencils[order]
    point = np.atleast_1d(np.asarray(point, dtype=float))
    total = 0.0
    for off, cf in zip(offsets, coefs):
        shifted = point.copy()
        shifted[axis] += off * h
        total += cf * float(func(*shifted))
    return total / h**order


# ---------------------------------------------------------------------------
# Brownian paths


@dataclass
class BrownianPath:
    """Seeded Brownian values on a step grid; increments are value diffs.

    Refinement inserts midpoints by Brownian-bridge sampling and leaves all
    existing values bitwise unchanged, so any statistic computed from shared
    grid points is reproducible across refinement levels.
    """

    seed: int
    times: np.ndarray
    values: np.ndarray  # (n_times, n_modes)
    level: int = 0

    @property
    def n_modes(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def index_of(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        for j in (i - 1, i, i + 1):
            if 0 <= j < self.times.size and abs(self.times[j] - t) <= 1e-9 * max(
                1.0, abs(t)
            ):
                return j
        raise NoiseError(f"time {t!r} is not on the path grid")

    def value_at(self, t: float) -> np.ndarray:
        return self.values[self.index_of(t)]

    def has_time(self, t: float) -> bool:
        try:
            self.index_of(t)
            return True
        except NoiseError:
            return False

    def refine(self) -> "BrownianPath":
        """Split every interval at its midpoint by bridge sampling."""
        n = self.times.size
        rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), self.level + 1]))
        dts = np.diff(self.times)
        mids_t = self.times[:-1] + 0.5 * dts
        noise = rng.standard_normal((n - 1, self.n_modes))
        mids_v = 0.5 * (self.values[:-1] + self.values[1:]) + np.sqrt(dts / 4.0)[
            :, None
        ] * noise
        times = np.empty(2 * n - 1)
        values = np.empty((2 * n - 1, self.n_modes))
        times[0::2] = self.times
        times[1::2] = mids_t
        values[0::2] = self.values
        values[1::2] = mids_v
        return BrownianPath(seed=self.seed, times=times, values=values, level=self.level + 1)


def sample_brownian(seed: int, times, n_modes: int) -> BrownianPath:
    """Independent standard Brownian motions on a step grid, zero at times[0].

    Deterministic given the seed: increments are Gaussian draws from
    numpy's PCG64 generator scaled by sqrt(dt).
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise NoiseError("step grid needs at least two times")
    dts = np.diff(times)
    if np.any(dts <= 0):
        raise NoiseError("step grid must be strictly increasing")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    incs = rng.standard_normal((times.size - 1, n_modes)) * np.sqrt(dts)[:, None]
    values = np.vstack([np.zeros((1, n_modes)), np.cumsum(incs, axis=0)])
    return BrownianPath(seed=int(seed), times=times, values=values, level=0)


# ---------------------------------------------------------------------------
# gauge and coefficients


def gauge_transform(
    X: ComplexField, profiles: NoiseProfileSet, path: BrownianPath, t: float, direction: str = "forward"
) -> ComplexField:
    """Multiply by e^{-W} (forward, X -> v) or e^{+W} (inverse, v -> X).

    W(t,x) = i sum_l phi_l(x) B_l(t) is purely imaginary, so the modulus is
    preserved pointwise.
    """
    weights = path.value_at(t)
    psi = profiles.psi(weights)
    if direction == "forward":
        factor = np.exp(-1j * psi)
    elif direction == "inverse":
        factor = np.exp(1j * psi)
    else:
        raise NoiseError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return ComplexField(X.grid, X.values * factor)


@dataclass
class Coefficients:
    """First-order coefficient fields of the gauged equation at one time."""

    a1: list  # d complex arrays
    a0: np.ndarray  # complex array
    mu: np.ndarray  # real array
    is_zero: bool


def coefficient_fields(profiles: NoiseProfileSet, weights) -> Coefficients:
    """a1, a0, mu for mode weights (Brownian values or a smooth drive)."""
    grid = profiles.grid
    d = grid.d
    grad_psi = profiles.grad_psi(weights)
    lap_psi = np.zeros(grid.shape)
    for lp, w in zip(profiles.lap, weights):
        lap_psi = lap_psi + lp * w
    a1 = [2j * g for g in grad_psi]
    a0 = -sum(g**2 for g in grad_psi) + 1j * lap_psi
    is_zero = all(not np.any(g) for g in grad_psi) and not np.any(lap_psi)
    return Coefficients(a1=a1, a0=a0.astype(np.complex128), mu=profiles.mu, is_zero=is_zero)


def lower_order_coefficients(profiles: NoiseProfileSet, path: BrownianPath, t: float) -> Coefficients:
    return coefficient_fields(profiles, path.value_at(t))
