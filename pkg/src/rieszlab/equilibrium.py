"""Equilibrium measures of mean-field Riesz energies on a grid.

The continuous energy E(mu) = 1/2 iint g(x-y) dmu dmu + int V dmu is
discretized with exact (1-D) or corrected (2-D) cell-pair means of g and
minimized over the probability simplex by projected gradient descent.  The
simplex KKT multiplier is the Euler-Lagrange constant c_V, the effective
potential is zeta_V = g*mu_V + V - c_V, and the free-boundary behavior is
read off by log-log fits: mu_V ~ dist^(1-alpha) inside the support edge,
zeta_V ~ dist^(1+alpha) outside.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import dblquad
from scipy.signal import fftconvolve

from .errors import (BoxTooSmallError, ConvergenceError, ResolutionError,
                     UnsupportedError, ValidationError)
from .kernel import Grid1D, RieszParams, SampledFunction, g_antideriv2


@dataclass
class Potential:
    """Confining potential with an evaluator and a gradient.

    kind is "polynomial" (coefficients in increasing degree, evaluated on
    |x|), "tabulated" (samples on a grid, linearly interpolated), or
    "callable".
    """

    kind: str
    coefficients: np.ndarray | None = None
    _fn: Callable | None = None
    _grad: Callable | None = None

    @classmethod
    def polynomial(cls, coefficients) -> "Potential":
        coeffs = np.asarray(coefficients, dtype=float)
        if coeffs.ndim != 1 or len(coeffs) == 0:
            raise ValidationError("polynomial coefficients must be a 1-D list")
        return cls(kind="polynomial", coefficients=coeffs)

    @classmethod
    def quadratic(cls, strength: float = 1.0) -> "Potential":
        return cls.polynomial([0.0, 0.0, strength])

    @classmethod
    def from_callable(cls, fn, grad=None) -> "Potential":
        return cls(kind="callable", _fn=fn, _grad=grad)

    @classmethod
    def tabulated(cls, grid: Grid1D, values) -> "Potential":
        values = np.asarray(values, dtype=float)
        xs = grid.centers()
        return cls(kind="tabulated",
                   _fn=lambda x: np.interp(x, xs, values),
                   coefficients=values)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "polynomial":
            r = np.linalg.norm(x, axis=-1) if x.ndim > 1 else np.abs(x)
            return np.polyval(self.coefficients[::-1], r)
        if x.ndim > 1:
            return self._fn(x)
        return self._fn(x)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "polynomial":
            r = np.abs(x) if x.ndim <= 1 else np.linalg.norm(x, axis=-1)
            dcoef = self.coefficients[1:] * np.arange(1, len(self.coefficients))
            dr = np.polyval(dcoef[::-1], r)
            if x.ndim <= 1:
                return dr * np.sign(x)
            unit = x / np.where(r[..., None] > 0, r[..., None], 1.0)
            return dr[..., None] * unit
        if self._grad is not None:
            return self._grad(x)
        eps = 1e-6 * (1.0 + np.abs(x))
        return (self(x + eps) - self(x - eps)) / (2 * eps)


@dataclass
class Grid2D:
    """Uniform square-cell grid on a rectangle, cell-centered."""

    x0: float
    y0: float
    h: float
    nx: int
    ny: int

    def centers(self):
        xs = self.x0 + self.h * (np.arange(self.nx) + 0.5)
        ys = self.y0 + self.h * (np.arange(self.ny) + 0.5)
        return xs, ys

    @classmethod
    def over(cls, x0, x1, y0, y1, nx) -> "Grid2D":
        h = (x1 - x0) / nx
        ny = int(round((y1 - y0) / h))
        return cls(x0=x0, y0=y0, h=h, nx=nx, ny=ny)


# ---------------------------------------------------------------------------
# cell-pair interaction means


def _pair_means_1d(n: int, h: float, s: float) -> np.ndarray:
    """Mean of g over cell pairs at offsets 0..n-1, exact via the second
    antiderivative of g (the diagonal cell is integrable for s < 1)."""
    k = np.arange(n, dtype=float)
    P2 = lambda t: g_antideriv2(t, s)
    W = P2((k + 1) * h) - 2.0 * P2(k * h) + P2((k - 1) * h)
    return W / (h * h)


def _pair_means_2d(nx: int, ny: int, h: float, s: float) -> np.ndarray:
    """Mean of g over square cell pairs at offsets (0..nx-1, 0..ny-1).

    Far offsets use the midpoint value with the second-order variance
    correction (h^2/12) Laplace g; offsets within 2 cells are exact 2-D
    integrals of g against the triangular difference density.
    """
    di = np.arange(nx, dtype=float)
    dj = np.arange(ny, dtype=float)
    RX, RY = np.meshgrid(di * h, dj * h, indexing="ij")
    R = np.hypot(RX, RY)
    with np.errstate(divide="ignore", invalid="ignore"):
        if s == 0.0:
            base = -np.log(np.where(R > 0, R, 1.0))
            lap = np.zeros_like(R)  # log is harmonic in 2-D
        else:
            base = np.where(R > 0, R, 1.0) ** (-s) / s
            lap = s * np.where(R > 0, R, 1.0) ** (-s - 2.0)
    W = base + (h * h / 12.0) * lap

    def tri(t):
        return (h - abs(t)) / (h * h)

    def gval(r):
        if r <= 0:
            return 0.0
        return -np.log(r) if s == 0.0 else r ** (-s) / s

    for a in range(min(3, nx)):
        for b in range(min(3, ny)):
            if a == b == 0:
                continue  # singular cell: polar wedge below
            val, _ = dblquad(
                lambda ty, tx: gval(float(np.hypot(a * h + tx, b * h + ty)))
                * tri(tx) * tri(ty),
                -h, h, lambda _: -h, lambda _: h, epsabs=1e-10, epsrel=1e-8)
            W[a, b] = val
    W[0, 0] = _diag_mean_2d(h, s)
    return W


def _diag_mean_2d(h: float, s: float) -> float:
    """Mean of g over the difference of two coinciding square cells.

    Polar reduction over one symmetry wedge; the radial integral of
    r^(1-s) (h - r cos t)(h - r sin t) is closed-form, leaving a smooth
    single integral in the angle.
    """
    from scipy.integrate import quad

    def mono(k: float, L: float) -> float:
        # int_0^L r^k g(r) r dr  with the Jacobian folded in via k
        if s == 0.0:
            kk = k + 1
            return L ** (kk + 1) * (1.0 / (kk + 1) ** 2 - np.log(L) / (kk + 1))
        kk = k + 1 - s
        return L ** (kk + 1) / ((kk + 1) * s)

    def wedge(theta: float) -> float:
        c, t = np.cos(theta), np.sin(theta)
        L = h / c
        return (h * h * mono(0, L) - h * (c + t) * mono(1, L)
                + c * t * mono(2, L)) / h ** 4

    val, _ = quad(wedge, 0.0, np.pi / 4, epsabs=1e-12, epsrel=1e-10)
    return 8.0 * val


# ---------------------------------------------------------------------------
# solver


@dataclass
class EquilibriumResult:
    """Converged equilibrium measure with its certificate."""

    grid: object
    params: RieszParams
    potential: Potential
    masses: np.ndarray            # cell masses, sum exactly 1
    mu: object                    # SampledFunction (1-D) or ndarray density (2-D)
    h_pot: np.ndarray             # g * mu at cell centers
    c_V: float
    sigma: np.ndarray             # support mask
    zeta: object                  # SampledFunction (1-D) or ndarray (2-D)
    energy: float
    iterations: int
    gap: float
    energy_path: np.ndarray = field(repr=False, default=None)

    def zeta_values(self) -> np.ndarray:
        return self.zeta.values if isinstance(self.zeta, SampledFunction) else self.zeta


def _project_simplex(w: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} (sort-based)."""
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(w) + 1)
    rho = np.max(np.nonzero(u - css / k > 0)[0]) + 1
    theta = css[rho - 1] / rho
    return np.clip(w - theta, 0.0, None)


def _conv_same(w, kern_full):
    return fftconvolve(w, kern_full, mode="same")


def solve_equilibrium(V: Potential, grid, params: RieszParams,
                      tol: float = 1e-7, max_iter: int = 4000) -> EquilibriumResult:
    """Minimize the discretized mean-field energy over the simplex.

    Projected gradient with a Barzilai-Borwein initial step and Armijo
    backtracking.  The energy is an exact quadratic in the masses, so the
    Armijo decrement is evaluated as grad.p + p.Kp/2 (no float cancellation)
    and the energy path is non-increasing by construction.  Stops when the
    simplex duality gap w . grad - min(grad) falls below tol * max(1, |c|).
    """
    if isinstance(grid, Grid1D):
        if params.d != 1:
            raise ValidationError("1-D grid needs d = 1 parameters")
        xs = grid.centers()
        v = V(xs)
        means = _pair_means_1d(grid.n, grid.h, params.s)
        kern_full = np.concatenate([means[::-1], means[1:]])
        cell = grid.h
        shape = (grid.n,)
    elif isinstance(grid, Grid2D):
        if params.d != 2:
            raise ValidationError("2-D grid needs d = 2 parameters")
        xs1, ys1 = grid.centers()
        X, Y = np.meshgrid(xs1, ys1, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
        v = V(pts).reshape(grid.nx, grid.ny)
        means = _pair_means_2d(grid.nx, grid.ny, grid.h, params.s)
        kern_full = np.block([
            [means[::-1, ::-1], means[::-1, 1:]],
            [means[1:, ::-1], means[1:, 1:]],
        ])
        cell = grid.h * grid.h
        shape = (grid.nx, grid.ny)
    else:
        raise UnsupportedError(f"unsupported grid type {type(grid).__name__}")

    # growth sanity: the boxed confinement must beat the kernel at the edge
    vflat = v.ravel()
    if not np.all(np.isfinite(vflat)):
        raise ValidationError("potential not finite on the grid")
    if np.min(vflat) < -1e12:
        raise ValidationError("potential unbounded below on the grid")

    w = np.zeros(shape)
    if len(shape) == 1:
        q = shape[0] // 4
        w[q:3 * q] = 1.0
    else:
        qx, qy = shape[0] // 4, shape[1] // 4
        w[qx:3 * qx, qy:3 * qy] = 1.0
    w = _project_simplex(w.ravel()).reshape(shape)

    def grad_of(wa):
        return _conv_same(wa, kern_full) + v

    def energy_of(wa, ga=None):
        inter = _conv_same(wa, kern_full)
        return 0.5 * float(np.sum(wa * inter)) + float(np.sum(wa * v))

    g = grad_of(w)
    E = energy_of(w)
    energies = [E]
    step = 0.1 / (np.max(np.abs(g)) + 1e-300)
    w_prev, g_prev = None, None
    converged = False
    gap = np.inf
    it = 0
    step_last = step
    for it in range(1, max_iter + 1):
        c_now = float(np.min(g))
        gap = float(np.sum(w * (g - c_now)))
        if gap <= tol * max(1.0, abs(c_now)):
            converged = True
            break
        if w_prev is not None:
            dw = (w - w_prev).ravel()
            dg = (g - g_prev).ravel()
            denom = float(dw @ dg)
            if denom > 1e-300:
                step = float(dw @ dw) / denom
            else:
                step = 2.0 * step_last
            step = min(max(step, 1e-13), 1e4 * step_last)
        stalled = True
        for _ in range(200):
            w_new = _project_simplex((w - step * g).ravel()).reshape(shape)
            p = w_new - w
            desc = float(np.sum(p * (g - c_now)))  # centered: sum(p) = 0
            if desc >= -1e-18 * max(1.0, abs(E)):
                break  # projected step is null: first-order stationary
            dE = desc + 0.5 * float(np.sum(p * _conv_same(p, kern_full)))
            if dE <= 1e-4 * desc:
                stalled = False
                break
            step *= 0.5
        if stalled:
            break
        step_last = step
        w_prev, g_prev = w, g
        w = w_new
        E = E + dE
        g = grad_of(w)
        energies.append(E)
    if not converged:
        c_now = float(np.min(g))
        gap = float(np.sum(w * (g - c_now)))
        if gap > tol * max(1.0, abs(c_now)):
            raise ConvergenceError(
                f"equilibrium solver: duality gap {gap:.3e} after {it} iterations")
        converged = True

    h_pot = _conv_same(w, kern_full)
    mu_vals = w / cell
    mumax = float(np.max(mu_vals))
    heavy = mu_vals > 0.1 * mumax
    hv = h_pot + v
    c_V = float(np.sum(w[heavy] * hv[heavy]) / np.sum(w[heavy]))

    sigma = _largest_component(mu_vals > 1e-4 * mumax)
    _check_box(sigma, shape)

    zeta_vals = hv - c_V
    if len(shape) == 1:
        mu_obj = SampledFunction(grid, mu_vals)
        zeta_obj = SampledFunction(grid, zeta_vals)
    else:
        mu_obj, zeta_obj = mu_vals, zeta_vals

    return EquilibriumResult(
        grid=grid, params=params, potential=V, masses=w,
        mu=mu_obj, h_pot=h_pot, c_V=c_V, sigma=sigma, zeta=zeta_obj,
        energy=E, iterations=it, gap=gap, energy_path=np.asarray(energies))


def _largest_component(mask: np.ndarray) -> np.ndarray:
    if mask.ndim == 1:
        idx = np.flatnonzero(mask)
        if len(idx) == 0:
            raise ConvergenceError("empty support")
        runs = max(np.split(idx, np.where(np.diff(idx) > 1)[0] + 1), key=len)
        out = np.zeros_like(mask)
        out[runs] = True
        return out
    from scipy.ndimage import label
    lab, nlab = label(mask)
    if nlab == 0:
        raise ConvergenceError("empty support")
    sizes = [(lab == k).sum() for k in range(1, nlab + 1)]
    return lab == (1 + int(np.argmax(sizes)))


def _check_box(sigma: np.ndarray, shape) -> None:
    if sigma.ndim == 1:
        if sigma[:2].any() or sigma[-2:].any():
            raise BoxTooSmallError("support touches the box edge; enlarge the grid")
    else:
        if sigma[:2, :].any() or sigma[-2:, :].any() \
                or sigma[:, :2].any() or sigma[:, -2:].any():
            raise BoxTooSmallError("support touches the box edge; enlarge the grid")


# ---------------------------------------------------------------------------
# certificates and boundary fits


def effective_potential(result: EquilibriumResult) -> SampledFunction:
    """zeta_V = g*mu_V + V - c_V as a sampled function (1-D results)."""
    if not isinstance(result.zeta, SampledFunction):
        raise UnsupportedError("effective_potential returns 1-D functions only")
    return result.zeta


def euler_lagrange_residuals(masses: np.ndarray, V: Potential, grid,
                             params: RieszParams, c: float | None = None):
    """(below, on_support) sup-norm residuals of h^mu + V >=/= c.

    Usable on any trial masses (negative controls), not only solver output.
    """
    if isinstance(grid, Grid1D):
        xs = grid.centers()
        v = V(xs)
        means = _pair_means_1d(grid.n, grid.h, params.s)
        kern_full = np.concatenate([means[::-1], means[1:]])
    else:
        xs1, ys1 = grid.centers()
        X, Y = np.meshgrid(xs1, ys1, indexing="ij")
        v = V(np.stack([X.ravel(), Y.ravel()], axis=-1)).reshape(grid.nx, grid.ny)
        means = _pair_means_2d(grid.nx, grid.ny, grid.h, params.s)
        kern_full = np.block([
            [means[::-1, ::-1], means[::-1, 1:]],
            [means[1:, ::-1], means[1:, 1:]],
        ])
    hv = _conv_same(masses, kern_full) + v
    mumax = float(np.max(masses))
    heavy = masses > 0.1 * mumax
    if c is None:
        c = float(np.sum(masses[heavy] * hv[heavy]) / np.sum(masses[heavy]))
    support = _largest_component(masses > 1e-4 * mumax)
    below = float(np.max(np.clip(c - hv[~support], 0.0, None), initial=0.0))
    eroded = _erode(support, 2)
    on = float(np.max(np.abs(hv[eroded] - c))) if eroded.any() else 0.0
    return below, on


def _erode(mask: np.ndarray, cells: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(cells):
        if out.ndim == 1:
            shrunk = out.copy()
            shrunk[:-1] &= out[1:]
            shrunk[1:] &= out[:-1]
            out = shrunk
        else:
            shrunk = out.copy()
            shrunk[:-1, :] &= out[1:, :]
            shrunk[1:, :] &= out[:-1, :]
            shrunk[:, :-1] &= out[:, 1:]
            shrunk[:, 1:] &= out[:, :-1]
            out = shrunk
    return out


def el_residual(result: EquilibriumResult):
    """Euler-Lagrange residuals of a converged result."""
    return euler_lagrange_residuals(result.masses, result.potential,
                                    result.grid, result.params, c=result.c_V)


@dataclass
class BoundaryFit:
    """Free-boundary exponents with per-edge prefactors."""

    density_exponent: float
    liftoff_exponent: float
    prefactors: dict


def boundary_exponent_fit(result: EquilibriumResult,
                          min_cells: int = 16) -> BoundaryFit:
    """Log-log fits of mu ~ dist^(1-alpha) inside and zeta ~ dist^(1+alpha)
    outside the support edge, skipping the 2 cells nearest the edge."""
    if not isinstance(result.grid, Grid1D):
        raise UnsupportedError("boundary fits are 1-D")
    grid: Grid1D = result.grid
    xs = grid.centers()
    h = grid.h
    mu = result.mu.values
    zeta = result.zeta_values()
    idx = np.flatnonzero(result.sigma)
    ia, ib = idx[0], idx[-1]
    if ib - ia + 1 < 2 * min_cells + 8:
        raise ResolutionError("support too thin to resolve the boundary layer")

    width = ib - ia + 1
    # shallow fit window: deep enough to average out cell noise, shallow
    # enough that the profile curvature does not bias the slope
    layer = max(min_cells, min(width // 16, 32))
    dens_expo, lift_expo, prefactors = [], [], {}
    for name, xe, sgn, ie in (("left", xs[ia] - 0.5 * h, +1, ia),
                              ("right", xs[ib] + 0.5 * h, -1, ib)):
        # skip the 2 cells nearest the edge on either side of it
        inside = ie + sgn * np.arange(2, layer)
        din = np.abs(xs[inside] - xe)
        vals = mu[inside]
        if np.any(vals <= 0):
            raise ResolutionError("density not positive across the fit layer")
        slope, inter = np.polyfit(np.log(din), np.log(vals), 1)
        dens_expo.append(slope)
        prefactors[name] = float(np.exp(inter))

        out_avail = ia if name == "left" else len(xs) - 1 - ib
        lo = min(layer, out_avail - 1)
        if lo < min_cells:
            raise ResolutionError("not enough exterior cells to fit the lift-off")
        outside = ie - sgn * np.arange(3, lo + 1)
        dout = np.abs(xs[outside] - xe)
        zv = zeta[outside]
        if np.any(zv <= 0):
            raise ResolutionError("effective potential not positive outside")
        zslope, _ = np.polyfit(np.log(dout), np.log(zv), 1)
        lift_expo.append(zslope)

    return BoundaryFit(
        density_exponent=float(np.mean(dens_expo)),
        liftoff_exponent=float(np.mean(lift_expo)),
        prefactors=prefactors,
    )
