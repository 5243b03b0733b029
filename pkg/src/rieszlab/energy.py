"""Particle energies for the Riesz gas.

Hamiltonian H_N, next-order energy F_N against a background measure, the
exact splitting identity H_N = N^2 E(mu_V) + N sum zeta_V(x_i) + F_N,
truncated electric energies in the extended space (x, y) with weight
|y|^gamma, and the commutator functionals A_n that arise as derivatives of
F_N along a transport.

Conventions.  The electric identity used throughout is

    F_N = (1/(2 c_ext)) int_{R^(d+1)} |y|^gamma |grad h_{N,eta}|^2
          - (1/2) sum_i g(eta_i) - N sum_i int f_{eta_i}(x - x_i) dmu(x),

where h_N = g * (sum_i delta_i - N mu), h_{N,eta} subtracts the truncations
f_eta = (g - g(eta))_+ centered at the particles, and eta_i <= r_i with r_i
the minimal-distance radii.  The N = 1 case closes symbolically: the smeared
charge delta^(eta) has potential g - f_eta, so the field energy expands to
(1/2)g(eta) - int g dmu(. - x_1) + int f_eta dmu(. - x_1) + (1/2) iint g dmu dmu
and the correction terms cancel the smearing exactly, leaving F_1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .errors import (ResolutionError, SingularityError, UnsupportedError,
                     ValidationError)
from .kernel import (ExtensionField, ExtensionGrid, Grid1D, RieszParams,
                     SampledFunction, cs_extension, g_antideriv1, g_convolve,
                     kernel_constants, make_extension_grid, riesz_g)

_COINCIDENCE = 1e-14
DESK_SCALE_N = 64
_MAX_EXTENSION_CELLS = 4_000_000


@dataclass
class Configuration:
    """N particle positions in R^d, stored as an (N, d) array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValidationError("need an (N, d) array with N >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("positions must be finite")
        self.points = pts
        self._nn = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def x(self) -> np.ndarray:
        """Flat positions (d = 1 only)."""
        if self.d != 1:
            raise UnsupportedError("flat view needs d = 1")
        return self.points[:, 0]

    def nearest_neighbor_distances(self) -> np.ndarray:
        if self._nn is None:
            if self.n == 1:
                self._nn = np.array([np.inf])
            else:
                dist, _ = cKDTree(self.points).query(self.points, k=2)
                self._nn = dist[:, 1]
        return self._nn


def _pair_distances(X: Configuration) -> np.ndarray:
    if X.n < 2:
        return np.empty(0)
    dists = pdist(X.points)
    if dists.min() < _COINCIDENCE:
        raise SingularityError("coincident particles")
    return dists


def _potential_values(V, pts: np.ndarray) -> np.ndarray:
    arg = pts[:, 0] if pts.shape[1] == 1 else pts
    return np.atleast_1d(np.asarray(V(arg), dtype=float))


def hamiltonian(X: Configuration, V, params: RieszParams,
                deterministic: bool = False) -> float:
    """H_N = 1/2 sum_{i != j} g(x_i - x_j) + N sum_i V(x_i).

    With deterministic=True the reductions run through compensated
    fixed-order summation, so the result is bitwise stable.
    """
    dists = _pair_distances(X)
    gvals = riesz_g(dists, params) if dists.size else np.empty(0)
    vvals = _potential_values(V, X.points)
    if deterministic:
        return math.fsum(gvals.tolist()) + X.n * math.fsum(vvals.tolist())
    return float(gvals.sum()) + X.n * float(vvals.sum())


@lru_cache(maxsize=32)
def _g_pair_kernel(n: int, h: float, s: float) -> np.ndarray:
    from .equilibrium import _pair_means_1d
    means = _pair_means_1d(n, h, s)
    return np.concatenate([means[::-1], means[1:]])


def mu_self_energy(mu: SampledFunction, params: RieszParams) -> float:
    """iint g(x-y) dmu(x) dmu(y) with exact cell-pair weights."""
    if not isinstance(mu.grid, Grid1D):
        raise UnsupportedError("background integrals are 1-D")
    w = mu.values * mu.grid.h
    kern = _g_pair_kernel(mu.grid.n, mu.grid.h, params.s)
    return float(np.sum(w * fftconvolve(w, kern, mode="same")))


def next_order_energy(X: Configuration, mu: SampledFunction,
                      params: RieszParams,
                      deterministic: bool = False) -> float:
    """F_N = half the off-diagonal double integral of g against the
    fluctuation sum_i delta_i - N mu, expanded as

        sum_{i<j} g(x_i-x_j) - N sum_i (g*mu)(x_i) + (N^2/2) iint g dmu dmu.
    """
    if X.d != 1:
        raise UnsupportedError("next_order_energy is implemented for d = 1")
    dists = _pair_distances(X)
    gvals = riesz_g(dists, params) if dists.size else np.empty(0)
    h_at = g_convolve(X.x, mu, params)
    G = mu_self_energy(mu, params)
    N = X.n
    if deterministic:
        pair = math.fsum(gvals.tolist())
        hsum = math.fsum(h_at.tolist())
    else:
        pair = float(gvals.sum())
        hsum = float(h_at.sum())
    return pair - N * hsum + 0.5 * N * N * G


def splitting_residual(X: Configuration, V, equilibrium,
                       params: RieszParams) -> float:
    """|H_N - N^2 E(mu_V) - N sum zeta_V(x_i) - F_N(X, mu_V)|.

    The identity is exact in the continuum, so the residual measures only
    the quadrature mismatch between the grid energy, the interpolated zeta,
    and the particle-side convolutions.
    """
    if X.d != 1:
        raise UnsupportedError("the splitting check is implemented for d = 1")
    H = hamiltonian(X, V, params)
    F = next_order_energy(X, equilibrium.mu, params)
    zeta_at = np.asarray(equilibrium.zeta(X.x), dtype=float)
    N = X.n
    return abs(H - N * N * equilibrium.energy - N * float(zeta_at.sum()) - F)


# ---------------------------------------------------------------------------
# truncation radii


@dataclass
class TruncationVector:
    """Per-particle truncation radii eta_i."""

    eta: np.ndarray

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if np.any(~np.isfinite(eta)) or np.any(eta <= 0):
            raise ValidationError("truncation radii must be positive")
        self.eta = eta


def minimal_distances(X: Configuration, params: RieszParams) -> TruncationVector:
    """r_i = (1/4) min(nearest-neighbor distance, N^(-1/d))."""
    cap = X.n ** (-1.0 / params.d)
    r = 0.25 * np.minimum(X.nearest_neighbor_distances(), cap)
    return TruncationVector(eta=r)


def _check_eta(X: Configuration, eta: TruncationVector | None,
               params: RieszParams) -> TruncationVector:
    caps = minimal_distances(X, params)
    if eta is None:
        return caps
    if eta.eta.shape != (X.n,):
        raise ValidationError("truncation vector length differs from N")
    if np.any(eta.eta > caps.eta * (1.0 + 1e-12)):
        raise ValidationError("truncation radii exceed the minimal distances")
    return eta


def truncation_f(eta: float, x, params: RieszParams):
    """f_eta(x) = (g(x) - g(eta))_+, supported in |x| < eta."""
    if not eta > 0:
        raise ValidationError("eta must be positive")
    r = np.abs(np.asarray(x, dtype=float))
    g_eta = riesz_g(eta, params)
    vals = np.where(r < eta,
                    riesz_g(np.where(r > 0, r, 1.0), params) - g_eta,
                    0.0)
    if params.s >= 0:
        vals = np.where(r == 0.0, np.inf, vals)
    else:
        vals = np.where(r == 0.0, -g_eta, vals)
    return float(vals) if vals.ndim == 0 else vals


def _f_eta_against_mu(xi: float, ei: float, mu: SampledFunction,
                      params: RieszParams) -> float:
    """int f_eta(x - xi) dmu(x), exact in g for the cell-wise density."""
    edges = mu.grid.edges()
    a = np.maximum(edges[:-1], xi - ei)
    b = np.minimum(edges[1:], xi + ei)
    sel = b > a
    if not sel.any():
        return 0.0
    g_eta = riesz_g(ei, params)
    ints = (g_antideriv1(b[sel] - xi, params.s)
            - g_antideriv1(a[sel] - xi, params.s)
            - g_eta * (b[sel] - a[sel]))
    return float(np.sum(ints * mu.values[sel]))


# ---------------------------------------------------------------------------
# extended-space (electric) energies


@dataclass
class LocalEnergyReport:
    """Electric energy of h_{N,r} over box x [-side, side] in the extension."""

    center: float
    side: float
    value: float
    point_count: int


def _y_cell_weights(y_edges: np.ndarray, gamma: float,
                    y_max: float) -> np.ndarray:
    """Exact integral of y^gamma over each vertical cell, clipped to y_max."""
    p = gamma + 1.0
    lo = y_edges[:-1]
    hi = np.minimum(y_edges[1:], y_max)
    w = np.zeros(lo.size)
    open_rows = hi > lo
    w[open_rows] = (hi[open_rows] ** p - lo[open_rows] ** p) / p
    return w


def _slab_quadrature(egrid: ExtensionGrid, H: np.ndarray, params: RieszParams,
                     sel_x: np.ndarray, y_max: float,
                     flux: np.ndarray | None = None) -> float:
    """2 iint y^gamma |grad H|^2 over selected columns up to y_max.

    Rows are weighted by the exact cell integral of y^gamma; the sliver
    below the first grid level is handled by the boundary-flux model when a
    flux is supplied (the only source with mass on the line is the measure,
    whose weighted flux -y^gamma dH/dy has a finite one-sided limit), else
    dropped.
    """
    xs = egrid.x_centers()
    ys = egrid.y_centers()
    dHdx = np.gradient(H, xs, axis=1)
    dHdy = np.gradient(H, ys, axis=0)
    wy = _y_cell_weights(egrid.y_edges, params.gamma, y_max)
    wy[0] = 0.0
    dens = dHdx * dHdx + dHdy * dHdy
    val = float(np.sum((dens * wy[:, None])[:, sel_x])) * egrid.hx
    if flux is not None:
        y1 = egrid.y_edges[1]
        p = 1.0 - params.gamma
        val += float(np.sum(flux * flux)) * egrid.hx * y1 ** p / p
    return 2.0 * val


class ElectricField1D:
    """Truncated electric field of sum_i delta_i - N mu on an extension grid.

    The measure part of the extension is computed once per grid and shared
    across configurations (the expensive piece); atoms and truncations are
    closed form per configuration, assembled row by row.
    """

    def __init__(self, mu: SampledFunction, params: RieszParams,
                 egrid: ExtensionGrid, n_particles: int):
        if params.d != 1:
            raise UnsupportedError("electric fields are implemented for d = 1")
        if n_particles > DESK_SCALE_N:
            raise UnsupportedError(
                f"extended-space quadrature is desk scale (N <= {DESK_SCALE_N})")
        self.params = params
        self.egrid = egrid
        self.n = n_particles
        self.mu = mu
        self.mu_field = cs_extension(egrid, params, density=mu,
                                     density_weight=-float(n_particles))

    def _window(self, x_window) -> tuple[ExtensionGrid, slice]:
        if x_window is None:
            return self.egrid, slice(None)
        i0 = max(int(np.floor((x_window[0] - self.egrid.x0) / self.egrid.hx)), 0)
        i1 = min(int(np.ceil((x_window[1] - self.egrid.x0) / self.egrid.hx)),
                 self.egrid.nx)
        if i1 - i0 < 8:
            raise ValidationError("window too narrow for the extension grid")
        sub = ExtensionGrid(x0=self.egrid.x0 + i0 * self.egrid.hx,
                            hx=self.egrid.hx, nx=i1 - i0,
                            y_edges=self.egrid.y_edges)
        return sub, slice(i0, i1)

    def field_for(self, X: Configuration, eta: TruncationVector | None = None,
                  x_window=None) -> ExtensionField:
        """Truncated potential h_{N,eta} on the grid (or a column window).

        The truncated single-atom potential is g(eta_i) inside the sphere of
        radius eta_i and g(dist) outside, so atoms enter in closed form.
        """
        if X.n != self.n:
            raise ValidationError("configuration size differs from the field setup")
        eta = _check_eta(X, eta, self.params)
        sub, cols = self._window(x_window)
        H = self.mu_field.H[:, cols].copy()
        xs = sub.x_centers()
        ys = sub.y_centers()
        pts = X.x
        g_eta = riesz_g(eta.eta, self.params)
        for k, y in enumerate(ys):
            rr = np.sqrt((xs[None, :] - pts[:, None]) ** 2 + y * y)
            gvals = riesz_g(rr, self.params)
            H[k] += np.where(rr < eta.eta[:, None],
                             g_eta[:, None], gvals).sum(axis=0)
        return ExtensionField(grid=sub, H=H, params=self.params)

    def slab_energy(self, fld: ExtensionField, x_lo: float, x_hi: float,
                    y_max: float) -> float:
        """2 int_{x_lo..x_hi} int_0^{y_max} y^gamma |grad h|^2 dy dx."""
        xs = fld.grid.x_centers()
        sel_x = (xs >= x_lo) & (xs <= x_hi)
        c_ext = kernel_constants(self.params).c_ext
        flux = 0.5 * c_ext * self.n * np.asarray(self.mu(xs[sel_x]))
        return _slab_quadrature(fld.grid, fld.H, self.params, sel_x, y_max,
                                flux=flux)


def _resolution_guard(X: Configuration, eta: TruncationVector, hx: float,
                      x_lo: float, x_hi: float) -> None:
    near = (X.x + eta.eta >= x_lo) & (X.x - eta.eta <= x_hi)
    if near.any():
        r_min = float(np.min(eta.eta[near]))
        if hx > r_min / 4.0:
            raise ResolutionError(
                f"extension cells ({hx:.3g}) exceed a quarter of the smallest "
                f"truncation radius in the box ({r_min:.3g})")


def _budget_guard(egrid: ExtensionGrid) -> None:
    cells = egrid.nx * (egrid.y_edges.size - 1)
    if cells > _MAX_EXTENSION_CELLS:
        raise ResolutionError(
            f"extension grid needs {cells} cells (cap {_MAX_EXTENSION_CELLS}); "
            "the smallest truncation radius is too small for this domain, "
            "pass a coarser hx or a tighter window")


def local_electric_energy(X: Configuration, mu: SampledFunction, box,
                          params: RieszParams,
                          extended_grid: ExtensionGrid | None = None,
                          eta: TruncationVector | None = None,
                          localizer: ElectricField1D | None = None,
                          ) -> LocalEnergyReport:
    """Electric energy of h_{N,eta} over Q x [-side, side], box = (center, side).

    The extension grid must resolve the smallest truncation radius among the
    particles whose truncation sphere meets the box (cells <= r_i/4); pass a
    prebuilt localizer to reuse the measure field across configurations.
    """
    if X.n > DESK_SCALE_N:
        raise UnsupportedError(
            f"extended-space quadrature is desk scale (N <= {DESK_SCALE_N})")
    center, side = float(box[0]), float(box[1])
    if side <= 0:
        raise ValidationError("box side must be positive")
    eta = _check_eta(X, eta, params)
    x_lo, x_hi = center - 0.5 * side, center + 0.5 * side
    if localizer is None:
        if extended_grid is None:
            span = 2.0 * side
            hx = min(side / 64.0, float(np.min(eta.eta)) / 4.0)
            nx = int(np.ceil((x_hi - x_lo + 2 * span) / hx))
            extended_grid = make_extension_grid(
                x_lo - span, x_hi + span, nx, y_min=0.5 * hx, y_max=side,
                ratio=1.15)
        _budget_guard(extended_grid)
        localizer = ElectricField1D(mu, params, extended_grid, X.n)
    egrid = localizer.egrid
    if egrid.y_edges[-1] < side * (1 - 1e-9):
        raise ValidationError("extension grid does not reach height = side")
    _resolution_guard(X, eta, egrid.hx, x_lo, x_hi)
    pad = max(4.0 * egrid.hx, 0.02 * side)
    fld = localizer.field_for(X, eta, x_window=(x_lo - pad, x_hi + pad))
    value = localizer.slab_energy(fld, x_lo, x_hi, side)
    count = int(np.count_nonzero((X.x >= x_lo) & (X.x <= x_hi)))
    return LocalEnergyReport(center=center, side=side, value=value,
                             point_count=count)


def electric_next_order(X: Configuration, mu: SampledFunction,
                        params: RieszParams,
                        eta: TruncationVector | None = None,
                        pad: float = 3.0, hx: float | None = None,
                        y_ratio: float = 1.12,
                        subtract_self: bool = True) -> float:
    """F_N recovered from the global extended-space quadrature.

    Evaluates (1/(2 c_ext)) iint |y|^gamma |grad h_{N,eta}|^2 over a padded
    slab and applies the exact corrections -(1/2) sum g(eta_i) and
    -N sum_i int f_{eta_i}(. - x_i) dmu.

    With subtract_self=True the singular self-fields are removed from the
    quadrature before integrating: for each particle the two-sphere profile
    u_i = g(clip(r, eta_i, rho_i)) - g(rho_i) (compactly supported, exact
    whole-space energy c_ext (g(eta_i) - g(rho_i))) is subtracted on the
    same grid with the same difference stencils, so the unresolvable
    eta-scale energy spike enters through its closed form and the mesh only
    integrates the smooth interaction remainder.
    """
    if X.d != 1:
        raise UnsupportedError("the electric route is implemented for d = 1")
    if X.n > DESK_SCALE_N:
        raise UnsupportedError(
            f"extended-space quadrature is desk scale (N <= {DESK_SCALE_N})")
    eta = _check_eta(X, eta, params)
    lo = min(float(X.x.min()), mu.grid.x0) - pad
    hi = max(float(X.x.max()), mu.grid.x1) + pad
    if hx is None:
        hx = float(np.min(eta.eta)) / 4.0
    nx = int(np.ceil((hi - lo) / hx))
    hx = (hi - lo) / nx
    y_top = 0.5 * (hi - lo)
    egrid = make_extension_grid(lo, hi, nx, y_min=0.5 * hx, y_max=y_top,
                                ratio=y_ratio)
    _resolution_guard(X, eta, egrid.hx, lo, hi)
    _budget_guard(egrid)
    localizer = ElectricField1D(mu, params, egrid, X.n)
    fld = localizer.field_for(X, eta)
    total = localizer.slab_energy(fld, lo, hi, y_top)

    ck = kernel_constants(params)
    if subtract_self:
        xs = egrid.x_centers()
        ys = egrid.y_centers()
        all_x = np.ones(xs.size, dtype=bool)
        for xi, ei in zip(X.x, eta.eta):
            rho = min(1.0, 0.8 * (xi - lo), 0.8 * (hi - xi), 0.8 * y_top)
            if rho <= 2.0 * ei:
                continue
            rr = np.sqrt((xs[None, :] - xi) ** 2 + ys[:, None] ** 2)
            U = riesz_g(np.clip(rr, ei, rho), params) - riesz_g(rho, params)
            total -= _slab_quadrature(egrid, U, params, all_x, y_top)
            total += ck.c_ext * float(riesz_g(ei, params)
                                      - riesz_g(rho, params))

    self_term = 0.5 * float(np.sum(riesz_g(eta.eta, params)))
    cross = 0.0
    for xi, ei in zip(X.x, eta.eta):
        cross += _f_eta_against_mu(float(xi), float(ei), mu, params)
    return total / (2.0 * ck.c_ext) - self_term - X.n * cross


# ---------------------------------------------------------------------------
# commutator functionals
#
# In d = 1 the order-n kernel factorizes off the diagonal as
#     grad^n g(x-y) . (psi(x)-psi(y))^n = c_n |x-y|^(-s) q(x,y)^n
# with q the divided difference (psi(x)-psi(y))/(x-y) and c_n = g^(n)(1) in
# {-1, s+1, -(s+1)(s+2)}.  q extends smoothly across the diagonal (it tends
# to psi'), so quadrature against the measure only needs |x-y|^(-s)
# integrated exactly, which the cell antiderivatives provide.


def _cn(s: float, n: int) -> float:
    if n == 1:
        return -1.0
    if n == 2:
        return s + 1.0
    if n == 3:
        return -(s + 1.0) * (s + 2.0)
    raise ValidationError("commutator order must be 1, 2, or 3")


def _psi_ratio(psi, x0: float, ys: np.ndarray, delta: float) -> np.ndarray:
    """(psi(x0)-psi(y))/(x0-y), centered-staggered where the gap degenerates."""
    dx = x0 - ys
    out = np.empty(ys.shape)
    far = np.abs(dx) > delta
    if far.any():
        out[far] = (float(psi(x0)) - np.asarray(psi(ys[far]), float)) / dx[far]
    if (~far).any():
        yn = ys[~far]
        out[~far] = (np.asarray(psi(yn + delta), float)
                     - np.asarray(psi(yn - delta), float)) / (2.0 * delta)
    return out


def _abs_pow_cells(x0: float, edges: np.ndarray, s: float) -> np.ndarray:
    """Exact integral of |x0 - y|^(-s) over each cell [edges_k, edges_k+1]."""
    t_hi = x0 - edges[:-1]
    t_lo = x0 - edges[1:]
    p = 1.0 - s

    def antideriv(t):
        return np.sign(t) * np.abs(t) ** p / p

    return antideriv(t_hi) - antideriv(t_lo)


def _cross_integral(xi: float, psi, mu: SampledFunction, n: int,
                    params: RieszParams) -> float:
    """int |xi-y|^(-s) q(xi,y)^n dmu(y), cells nearest xi refined 16x."""
    grid = mu.grid
    h = grid.h
    yc = mu.x
    cells = _abs_pow_cells(xi, grid.edges(), params.s)
    ratio = _psi_ratio(psi, xi, yc, 0.25 * h)
    vals = cells * ratio ** n * mu.values
    near = np.abs(yc - xi) < 2.5 * h
    out = float(vals[~near].sum())
    refine = 16
    hs = h / refine
    for j in np.nonzero(near)[0]:
        esub = (yc[j] - 0.5 * h) + np.arange(refine + 1) * hs
        csub = _abs_pow_cells(xi, esub, params.s)
        rsub = _psi_ratio(psi, xi, 0.5 * (esub[:-1] + esub[1:]), 0.25 * hs)
        out += float(np.sum(csub * rsub ** n)) * mu.values[j]
    return out


def _doubled_integral(psi, mu: SampledFunction, n: int,
                      params: RieszParams) -> float:
    """iint |x-y|^(-s) q(x,y)^n dmu(x) dmu(y) with exact pair weights."""
    from .equilibrium import _pair_means_1d

    grid = mu.grid
    h, m = grid.h, grid.n
    yc = mu.x
    w = mu.values * h
    s = params.s
    rs = np.ones(m) if s == 0.0 else s * _pair_means_1d(m, h, s)
    P = np.asarray(psi(yc), dtype=float)
    # same-cell pairs: q evaluated as the centered staggered difference
    dstag = 0.25 * h
    qdiag = (np.asarray(psi(yc + dstag), float)
             - np.asarray(psi(yc - dstag), float)) / (2.0 * dstag)
    total = rs[0] * float(np.sum(w * w * qdiag ** n))
    cols = np.arange(m)
    for i0 in range(0, m, 512):
        rows = np.arange(i0, min(i0 + 512, m))
        diff = yc[rows][:, None] - yc[None, :]
        offs = np.abs(rows[:, None] - cols[None, :])
        dP = P[rows][:, None] - P[None, :]
        ratio = np.where(offs == 0, 0.0,
                         dP / np.where(diff == 0.0, 1.0, diff))
        total += float(w[rows] @ (rs[offs] * ratio ** n) @ w)
    return total


def commutator_An(X: Configuration, mu: SampledFunction, psi, n: int,
                  params: RieszParams) -> float:
    """A_n = 1/2 iint_{x != y} grad^n g(x-y) . (psi(x)-psi(y))^n d fluct^2
    with fluct = sum_i delta_i - N mu, for a 1-D vector field psi.

    Expanded into the exact particle pair sum, particle-measure cross terms,
    and the measure-measure double integral, all through the factorized
    kernel c_n |x-y|^(-s) q(x,y)^n.  psi must accept ndarray input.
    """
    if X.d != 1:
        raise UnsupportedError("commutators are implemented for d = 1")
    if not isinstance(mu.grid, Grid1D):
        raise UnsupportedError("the background measure must live on a 1-D grid")
    cn = _cn(params.s, n)
    s = params.s

    pair = 0.0
    if X.n > 1:
        _pair_distances(X)
        xi = X.x
        Px = np.asarray(psi(xi), dtype=float)
        diff = xi[:, None] - xi[None, :]
        guarded = np.where(diff == 0.0, 1.0, diff)
        ratio = np.where(diff == 0.0, 0.0,
                         (Px[:, None] - Px[None, :]) / guarded)
        vals = np.abs(guarded) ** (-s) * ratio ** n
        np.fill_diagonal(vals, 0.0)
        pair = 0.5 * float(vals.sum())

    cross = 0.0
    for x in X.x:
        cross += _cross_integral(float(x), psi, mu, n, params)
    mm = _doubled_integral(psi, mu, n, params)

    return cn * (pair - X.n * cross + 0.5 * X.n ** 2 * mm)
