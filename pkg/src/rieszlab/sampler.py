"""Metropolis sampling of the Gibbs measure and free-energy estimation.

The chain targets exp(-beta N^(-s/d) H_N) with single-particle Gaussian
random-walk proposals.  Energies are maintained incrementally through cached
per-particle interaction sums (O(N) per step) and cross-checked against a
full recomputation every CACHE_CHECK_EVERY steps.

Two systems are supported: a confined gas with an external potential V on
free space, and a periodic unit box with no potential where the pair kernel
is the minimum-image g truncated at the half box, g(r_mi) - g(1/2).  The
periodic box stands in for a Neumann-boundary box in the free-energy runs;
partition functions computed with it are labeled as proxies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CacheConsistencyError, ValidationError
from .kernel import RieszParams, g_antideriv1, riesz_g
from .energy import Configuration

_COINCIDENCE = 1e-14
CACHE_CHECK_EVERY = 1000
ADAPT_EVERY = 50          # sweeps between proposal-scale updates in burn-in
TARGET_ACCEPTANCE = 0.3


def make_stream(master_seed: int, chain_index: int) -> np.random.Generator:
    """Counter-based per-chain stream from (master seed, chain index)."""
    key = np.array([master_seed % 2 ** 64, chain_index % 2 ** 64],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def acceptance_probability(delta_h: float, beta: float, n: int,
                           params: RieszParams) -> float:
    """min(1, exp(-beta N^(-s/d) delta_H)); shared with enumeration tests."""
    arg = -beta * n ** (-params.s / params.d) * delta_h
    return 1.0 if arg >= 0 else math.exp(arg)


def _pair_g_vec(dx: np.ndarray, params: RieszParams,
                box: float | None) -> np.ndarray:
    """Pair kernel rows: free-space g, or the truncated min-image kernel."""
    if dx.ndim == 1:
        dx = dx[:, None]
    if box is None:
        r = np.sqrt(np.sum(dx * dx, axis=-1))
        return riesz_g(r, params)
    w = np.abs(dx) % box
    w = np.minimum(w, box - w)
    r = np.sqrt(np.sum(w * w, axis=-1))
    r = np.minimum(r, 0.5 * box)          # d >= 2 corners exceed the cutoff
    return riesz_g(r, params) - riesz_g(0.5 * box, params)


def box_background_constant(params: RieszParams, box: float = 1.0) -> float:
    """Mean of the truncated min-image kernel over the box (d = 1).

    c0 = 2 int_0^(box/2) (g(r) - g(box/2)) dr, the constant that converts the
    periodic pair sum into a next-order energy against the uniform density.
    """
    if params.d != 1:
        raise ValidationError("the periodic proxy is implemented for d = 1")
    half = 0.5 * box
    return 2.0 * float(g_antideriv1(half, params.s)
                       - g_antideriv1(0.0, params.s)
                       - half * riesz_g(half, params)) / box


@dataclass
class ChainState:
    """One Metropolis chain: positions, caches, stream, and statistics."""

    positions: np.ndarray          # (N, d), mutated in place
    params: RieszParams
    potential: object              # callable or None (periodic box)
    beta: float
    rng: np.random.Generator
    scale: float
    box: float | None = None
    pair_sums: np.ndarray = field(default=None, repr=False)
    pot_vals: np.ndarray = field(default=None, repr=False)
    energy: float = 0.0
    proposals: int = 0
    acceptances: int = 0
    steps: int = 0
    chain_index: int = 0
    _idx: np.ndarray = field(default=None, repr=False)

    @classmethod
    def initialize(cls, points, potential, params: RieszParams, beta: float,
                   seed: int, scale: float | None = None,
                   box: float | None = None,
                   chain_index: int = 0) -> "ChainState":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] != params.d:
            raise ValidationError("points must be (N, d) for the given d")
        if box is not None:
            if box <= 0:
                raise ValidationError("box side must be positive")
            pts = pts % box
        n = pts.shape[0]
        if scale is None:
            extent = box if box is not None else 2.0
            scale = 0.5 * extent * n ** (-1.0 / params.d)
        if scale <= 0:
            raise ValidationError("proposal scale must be positive")
        state = cls(positions=pts.copy(), params=params, potential=potential,
                    beta=float(beta), rng=make_stream(seed, chain_index),
                    scale=float(scale), box=box, chain_index=chain_index)
        state.refresh_caches()
        return state

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def config(self) -> Configuration:
        return Configuration(points=self.positions.copy())

    def _potential_vals(self, pts: np.ndarray) -> np.ndarray:
        if self.potential is None:
            return np.zeros(pts.shape[0])
        arg = pts[:, 0] if pts.shape[1] == 1 else pts
        return np.atleast_1d(np.asarray(self.potential(arg), dtype=float))

    def refresh_caches(self) -> None:
        n = self.n
        if self._idx is None or self._idx.shape[0] != n:
            self._idx = np.arange(n)
        sums = np.zeros(n)
        for i in range(n):
            dx = self.positions - self.positions[i]
            dx = np.delete(dx, i, axis=0)
            sums[i] = float(_pair_g_vec(dx, self.params, self.box).sum())
        self.pair_sums = sums
        self.pot_vals = self._potential_vals(self.positions)
        self.energy = 0.5 * float(sums.sum()) + n * float(self.pot_vals.sum())

    def recomputed_energy(self) -> float:
        n = self.n
        total = 0.0
        for i in range(n - 1):
            dx = self.positions[i + 1:] - self.positions[i]
            total += float(_pair_g_vec(dx, self.params, self.box).sum())
        return total + n * float(self._potential_vals(self.positions).sum())

    def check_cache(self) -> None:
        full = self.recomputed_energy()
        if abs(self.energy - full) > 1e-8 * max(abs(full), 1.0):
            raise CacheConsistencyError(
                f"cached H = {self.energy!r} vs recomputed {full!r} after "
                f"{self.steps} steps (N = {self.n}, scale = {self.scale})")
        self.energy = full

    @property
    def acceptance_rate(self) -> float:
        return self.acceptances / max(self.proposals, 1)


def metropolis_step(state: ChainState, params: RieszParams,
                    beta: float) -> ChainState:
    """One single-particle Gaussian random-walk update, in place."""
    n = state.n
    k = int(state.rng.integers(n))
    step = state.scale * state.rng.normal(size=params.d)
    old = state.positions[k].copy()
    new = old + step
    if state.box is not None:
        new %= state.box
    state.proposals += 1
    state.steps += 1

    if n > 1:
        others = state.positions[state._idx != k]
        dx_new = others - new
        if state.box is not None:
            w = np.abs(dx_new) % state.box
            w = np.minimum(w, state.box - w)
            min_dist = float(np.sqrt(np.sum(w * w, axis=-1)).min())
        else:
            min_dist = float(np.sqrt(np.sum(dx_new * dx_new, axis=-1)).min())
        if min_dist < _COINCIDENCE:
            if state.steps % CACHE_CHECK_EVERY == 0:
                state.check_cache()
            return state
        g_new = _pair_g_vec(dx_new, params, state.box)
        g_old = _pair_g_vec(others - old, params, state.box)
        d_pair = float(g_new.sum() - g_old.sum())
    else:
        g_new = g_old = np.empty(0)
        d_pair = 0.0
    new_pot = float(state._potential_vals(new[None, :])[0])
    d_h = d_pair + n * (new_pot - state.pot_vals[k])

    arg = -beta * n ** (-params.s / params.d) * d_h
    if arg >= 0 or np.log(state.rng.uniform()) < arg:
        state.positions[k] = new
        if n > 1:
            mask = state._idx != k
            state.pair_sums[mask] += g_new - g_old
            state.pair_sums[k] = float(g_new.sum())
        state.pot_vals[k] = new_pot
        state.energy += d_h
        state.acceptances += 1

    if state.steps % CACHE_CHECK_EVERY == 0:
        state.check_cache()
    return state


@dataclass
class Ensemble:
    """Decorrelated configurations plus run metadata."""

    samples: np.ndarray            # (count, N, d)
    energies: np.ndarray           # cached H_N at sample times
    meta: dict

    def __post_init__(self):
        if self.samples.ndim != 3:
            raise ValidationError("samples must be (count, N, d)")
        if int(self.meta.get("thinning", 1)) < 1:
            raise ValidationError("thinning must be >= 1")

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    def configurations(self):
        return [Configuration(points=p.copy()) for p in self.samples]


def run_chain(initial: ChainState, n_steps: int, burn_in: int,
              thinning: int, seed: int | None = None) -> Ensemble:
    """Run a chain for n_steps sweeps (a sweep is N single-particle moves).

    The proposal scale adapts toward 30% acceptance during burn-in only and
    is frozen afterwards, so recorded samples come from a fixed kernel.
    """
    if n_steps <= burn_in:
        raise ValidationError("n_steps must exceed burn_in")
    if thinning < 1:
        raise ValidationError("thinning must be >= 1")
    state = initial
    if seed is not None:
        state.rng = make_stream(seed, state.chain_index)
    params, beta, n = state.params, state.beta, state.n

    samples = []
    energies = []
    window_prop = window_acc = 0
    for sweep in range(1, n_steps + 1):
        p0, a0 = state.proposals, state.acceptances
        for _ in range(n):
            metropolis_step(state, params, beta)
        window_prop += state.proposals - p0
        window_acc += state.acceptances - a0
        in_burn = sweep <= burn_in
        if in_burn and sweep % ADAPT_EVERY == 0 and window_prop > 0:
            rate = window_acc / window_prop
            state.scale *= math.exp(rate - TARGET_ACCEPTANCE)
            state.scale = float(np.clip(state.scale, 1e-6, 1e3))
            window_prop = window_acc = 0
        if not in_burn and (sweep - burn_in) % thinning == 0:
            samples.append(state.positions.copy())
            energies.append(state.energy)
    meta = {
        "N": n, "d": params.d, "s": params.s, "beta": beta,
        "burn_in": burn_in, "thinning": thinning, "n_steps": n_steps,
        "proposal_scale": state.scale,
        "acceptance_rate": state.acceptance_rate,
        "box": state.box, "chain_index": state.chain_index,
        "periodic_proxy": state.box is not None,
        "potential": getattr(state.potential, "__name__",
                             repr(state.potential))
        if state.potential is not None else None,
    }
    return Ensemble(samples=np.array(samples), energies=np.array(energies),
                    meta=meta)


def gelman_rubin(chain_values: list[np.ndarray]) -> float:
    """Between/within variance ratio (split-free R-hat) on a scalar series."""
    m = len(chain_values)
    if m < 2:
        return float("nan")
    lengths = min(len(c) for c in chain_values)
    if lengths < 4:
        return float("nan")
    arr = np.stack([np.asarray(c[:lengths], dtype=float)
                    for c in chain_values])
    w = arr.var(axis=1, ddof=1).mean()
    b = lengths * arr.mean(axis=1).var(ddof=1)
    if w <= 0:
        return float("nan")
    var_hat = (lengths - 1) / lengths * w + b / lengths
    return float(np.sqrt(var_hat / w))


def sample_ensemble(params: RieszParams, V, N: int, beta: float,
                    n_samples: int, n_chains: int, seed: int,
                    burn_in: int = 500, thinning: int = 5,
                    box: float | None = None, init_points=None,
                    scale: float | None = None) -> Ensemble:
    """Independent chains with derived per-chain streams, concatenated.

    A Gelman-Rubin-style diagnostic on H_N is recorded in the metadata;
    values above 1.1 set mixing_warning without failing the run.
    """
    if n_chains < 1:
        raise ValidationError("n_chains must be >= 1")
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    per_chain = -(-n_samples // n_chains)
    n_steps = burn_in + per_chain * thinning

    chunks = []
    for c in range(n_chains):
        stream = make_stream(seed, c)
        if init_points is not None:
            pts = np.asarray(init_points, dtype=float)
        elif box is not None:
            pts = stream.uniform(0, box, size=(N, params.d))
        else:
            pts = stream.uniform(-1, 1, size=(N, params.d))
        st = ChainState.initialize(pts, V, params, beta, seed,
                                   scale=scale, box=box, chain_index=c)
        st.rng = stream
        chunks.append(run_chain(st, n_steps, burn_in, thinning))

    samples = np.concatenate([e.samples for e in chunks])[:n_samples]
    energies = np.concatenate([e.energies for e in chunks])[:n_samples]
    rhat = gelman_rubin([e.energies for e in chunks])
    meta = dict(chunks[0].meta)
    meta.update({
        "n_chains": n_chains, "seed": seed, "count": samples.shape[0],
        "per_chain": per_chain, "gelman_rubin": rhat,
        "mixing_warning": bool(np.isfinite(rhat) and rhat > 1.1),
        "acceptance_rate": float(np.mean([e.meta["acceptance_rate"]
                                          for e in chunks])),
        "chain_index": None,
    })
    return Ensemble(samples=samples, energies=energies, meta=meta)


def free_energy_curve(params: RieszParams, V, N: int, beta_grid,
                      samples_per_beta: int, seed: int = 0,
                      equilibrium=None, burn_in: int = 400,
                      thinning: int = 2):
    """Thermodynamic integration of d/dbeta log K = -N^(-s/d) E[F_N + N sum zeta].

    With V = None the system is the periodic unit box against the uniform
    density (a proxy for the Neumann box: minimum-image g truncated at the
    half box plus the constant background shift), where log K(0) = 0 exactly.
    With a potential, the observable is computed through the splitting
    identity F_N + N sum zeta = H_N - N^2 E(mu_V), so an equilibrium result
    must be supplied.

    Returns a list of (beta, dlogK/dbeta estimate, integrated logK offset)
    rows; the offset is the trapezoid cumulative from beta_grid[0], which is
    the absolute log K when the grid starts at 0.
    """
    beta_grid = np.asarray(beta_grid, dtype=float)
    if beta_grid.size < 4:
        raise ValidationError("beta_grid needs at least 4 points")
    if np.any(np.diff(beta_grid) < 0):
        raise ValidationError("beta_grid must be non-decreasing")
    if beta_grid[0] < 0:
        raise ValidationError("beta must be nonnegative")
    uniform_box = V is None
    if not uniform_box and equilibrium is None:
        raise ValidationError(
            "potential mode needs an equilibrium result for the splitting")
    if uniform_box and params.d != 1:
        raise ValidationError("the periodic proxy is implemented for d = 1")

    c0 = box_background_constant(params) if uniform_box else 0.0
    pref = N ** (-params.s / params.d)
    derivs = []
    pts = None
    for j, beta in enumerate(beta_grid):
        stream = make_stream(seed, 1000 + j)
        if pts is None:
            if uniform_box:
                pts = (np.arange(N, dtype=float)[:, None] + 0.5) / N
            else:
                pts = stream.uniform(-1, 1, size=(N, params.d))
        st = ChainState.initialize(pts, V, params, beta, seed,
                                   box=1.0 if uniform_box else None,
                                   chain_index=1000 + j)
        st.rng = stream
        bi = burn_in if j == 0 else max(burn_in // 4, 50)
        ens = run_chain(st, bi + samples_per_beta * thinning, bi, thinning)
        pts = st.positions.copy()
        if uniform_box:
            # E = (H_per) - N^2 c0 / 2: pair sum against uniform background
            obs = ens.energies - 0.5 * N * N * c0
        else:
            obs = ens.energies - N * N * equilibrium.energy
        derivs.append(-pref * float(obs.mean()))

    out = []
    logk = 0.0
    for j, beta in enumerate(beta_grid):
        if j > 0:
            logk += 0.5 * (derivs[j] + derivs[j - 1]) * (beta_grid[j]
                                                         - beta_grid[j - 1])
        out.append((float(beta), derivs[j], logk))
    return out
