"""First- and second-order interacting particle systems in mean-field scaling.

Forces carry the 1/(N-1) prefactor and are evaluated once per unordered pair,
with the partner receiving the negated value, so the total force vanishes by
construction.  Brownian increments come from one counter-based stream per
(seed, replica, particle), which makes runs bit-reproducible regardless of
evaluation order and makes relabelling particles equivalent to relabelling
their noise.

Singular kernels use a collision policy: ``clamp`` pushes near-coincident
pairs out to separation ``r_min`` (incidents are counted and reported),
``error`` raises instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as kn
from . import meanfield as mf
from .errors import CollisionError, DimensionMismatch, UnnormalizedDensity

_BS_TABLE_CELLS = 1024


@dataclass
class SimConfig:
    N: int
    d: int
    order: str  # "first" | "second"
    alpha: float = 0.0
    dt: float = 1e-3
    t_end: float = 1.0
    scheme: str = "auto"  # auto -> splitting_verlet at alpha=0 (second order), else euler_maruyama
    seed: int = 0
    collision_policy: str = "clamp"  # "clamp" | "error"
    r_min: float = 1e-8

    def __post_init__(self):
        if self.N < 2:
            raise DimensionMismatch("need at least two particles")
        if self.order not in ("first", "second"):
            raise DimensionMismatch("order must be 'first' or 'second'")
        if not (self.alpha >= 0.0 and math.isfinite(self.alpha)):
            raise DimensionMismatch("alpha must be finite and nonnegative")
        if self.dt > self.t_end:
            raise DimensionMismatch("dt exceeds t_end")

    def resolved_scheme(self) -> str:
        if self.scheme != "auto":
            return self.scheme
        if self.order == "second" and self.alpha == 0.0:
            return "splitting_verlet"
        return "euler_maruyama"


@dataclass
class ParticleState:
    order: str
    positions: np.ndarray  # (N, d)
    velocities: np.ndarray | None  # (N, d) iff order == "second"
    time: float = 0.0
    torus: bool = True
    unwrapped: np.ndarray | None = None  # free-space lift of torus positions

    def __post_init__(self):
        if (self.velocities is not None) != (self.order == "second"):
            raise DimensionMismatch("velocities present iff order == 'second'")
        if self.unwrapped is None:
            self.unwrapped = self.positions.copy()

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "ParticleState":
        return ParticleState(
            order=self.order,
            positions=self.positions.copy(),
            velocities=None if self.velocities is None else self.velocities.copy(),
            time=self.time,
            torus=self.torus,
            unwrapped=self.unwrapped.copy(),
        )


# ---------------------------------------------------------------------------
# initial sampling
# ---------------------------------------------------------------------------


def sample_initial(density: mf.DensityField, N: int, order: str, rng: np.random.Generator) -> ParticleState:
    """Draw N i.i.d. particles from a grid density (uniform within each cell)."""
    if abs(density.mass() - 1.0) > 1e-8 or np.any(density.values < 0):
        raise UnnormalizedDensity("initial density must be a probability density")
    probs = (density.values * density.grid.dz).ravel()
    probs = probs / probs.sum()
    cells = rng.choice(probs.size, size=N, p=probs)
    idx = np.unravel_index(cells, density.values.shape)
    if isinstance(density.grid, mf.PhaseGrid):
        if order != "second":
            raise DimensionMismatch("phase-space density samples a second-order state")
        g = density.grid
        x = (idx[0] + rng.uniform(size=N)) * g.dx
        v = -g.v_halfwidth + (idx[1] + rng.uniform(size=N)) * g.dv
        return ParticleState(
            order="second", positions=x[:, None], velocities=v[:, None], torus=True
        )
    if order != "first":
        raise DimensionMismatch("spatial density samples a first-order state")
    g = density.grid
    pos = np.stack(
        [(idx[a] + rng.uniform(size=N)) * g.dx for a in range(g.dim)], axis=-1
    )
    return ParticleState(order="first", positions=pos, velocities=None, torus=g.periodic)


# ---------------------------------------------------------------------------
# pairwise forces
# ---------------------------------------------------------------------------

_PAIR_CACHE: dict = {}


def _pair_index(N: int):
    key = N
    if key not in _PAIR_CACHE:
        i_idx, j_idx = np.triu_indices(N, k=1)
        P = i_idx.size
        S_plus = np.zeros((N, P))
        S_minus = np.zeros((N, P))
        S_plus[i_idx, np.arange(P)] = 1.0
        S_minus[j_idx, np.arange(P)] = 1.0
        _PAIR_CACHE[key] = (i_idx, j_idx, S_plus, S_minus)
    return _PAIR_CACHE[key]


_BS_TABLE: dict = {}


def _force_values(kernel: kn.KernelSpec, diffs: np.ndarray) -> np.ndarray:
    """Kernel values on pair offsets (nonzero, nearest-image for torus).

    Torus Biot-Savart splits into the free-space pole (evaluated exactly) plus
    the smooth periodic correction, which is bilinearly interpolated from a
    precomputed table; the correction is C^inf on the wrapped square, so the
    table error is O(h^2) uniformly, including near the singularity.
    """
    if kernel.family == "biot_savart_2d" and kernel.domain == "torus":
        if kernel not in _BS_TABLE:
            M = _BS_TABLE_CELLS
            ax = -0.5 + np.arange(M + 1) / M
            pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
            origin = np.all(pts == 0.0, axis=-1)
            safe = np.where(origin[..., None], 0.25, pts)
            corr = kn.eval_kernel(kernel, safe) - kn.eval_kernel(
                kn.biot_savart_kernel("free"), safe
            )
            corr = np.where(origin[..., None], 0.0, corr)  # the correction is 0 at 0
            _BS_TABLE[kernel] = corr
        corr = _BS_TABLE[kernel]
        M = _BS_TABLE_CELLS
        wrapped = diffs - np.round(diffs)
        u = (wrapped + 0.5) * M
        i0 = np.minimum(np.floor(u).astype(int), M - 1)
        frac = u - i0
        fx, fy = frac[..., 0], frac[..., 1]
        ix, iy = i0[..., 0], i0[..., 1]
        out = (
            corr[ix, iy] * ((1 - fx) * (1 - fy))[..., None]
            + corr[ix + 1, iy] * (fx * (1 - fy))[..., None]
            + corr[ix, iy + 1] * ((1 - fx) * fy)[..., None]
            + corr[ix + 1, iy + 1] * (fx * fy)[..., None]
        )
        return out + kn.eval_kernel(kn.biot_savart_kernel("free"), wrapped)
    return kn.eval_kernel(kernel, diffs)


def pairwise_forces(
    positions: np.ndarray,
    kernel: kn.KernelSpec,
    torus: bool = True,
    collision_policy: str = "clamp",
    r_min: float = 1e-8,
):
    """Mean-field pair forces F_i = (1/(N-1)) sum_{j != i} K(X_i - X_j).

    Returns (forces, incidents) where incidents counts clamped near-collisions.
    Each unordered pair is evaluated once; the partner gets the exact negation.
    """
    N, d = positions.shape
    if kernel.dim != d:
        raise DimensionMismatch(f"kernel dim {kernel.dim} vs positions dim {d}")
    i_idx, j_idx, S_plus, S_minus = _pair_index(N)
    diffs = positions[i_idx] - positions[j_idx]
    if torus:
        diffs = diffs - np.round(diffs)
    incidents = 0
    zero_pairs = None
    if not kernel.bounded:
        r = np.linalg.norm(diffs, axis=-1)
        close = r < r_min
        if close.any():
            if collision_policy == "error":
                raise CollisionError(f"{int(close.sum())} pairs closer than r_min")
            incidents = int(close.sum())
            zero = r == 0.0
            safe_r = np.where(r > 0, r, 1.0)
            diffs = np.where(
                (close & ~zero)[:, None], diffs * (r_min / safe_r)[:, None], diffs
            )
            if zero.any():
                # coincident points have no direction; their mutual force is zero
                diffs = np.where(zero[:, None], r_min, diffs)
                zero_pairs = zero
    elif collision_policy == "error":
        r = np.linalg.norm(diffs, axis=-1)
        if (r == 0.0).any():
            raise CollisionError("coincident particles")
    vals = _force_values(kernel, diffs)
    if zero_pairs is not None:
        vals = np.where(zero_pairs[:, None], 0.0, vals)
    forces = (
        np.einsum("np,pd->nd", S_plus, vals) - np.einsum("np,pd->nd", S_minus, vals)
    ) / (N - 1)
    return forces, incidents


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


def _advance_positions(state: ParticleState, delta: np.ndarray):
    state.unwrapped = state.unwrapped + delta
    pos = state.positions + delta
    if state.torus:
        pos = pos % 1.0
    state.positions = pos


def step_second_order(
    state: ParticleState,
    kernel: kn.KernelSpec,
    cfg: SimConfig,
    noise: np.ndarray | None = None,
    cached_force: np.ndarray | None = None,
):
    """One step of the second-order system; returns (state, force_at_end, incidents).

    Euler-Maruyama: X += V dt, V += F(X_old) dt + sqrt(2 alpha dt) xi.
    splitting_verlet (kick-drift-kick, alpha = 0): half kick, drift, half kick.
    ``cached_force`` lets kick-drift-kick reuse the closing force evaluation.
    """
    if state.order != "second":
        raise DimensionMismatch("state is not second order")
    out = state.copy()
    dt = cfg.dt
    incidents = 0
    scheme = cfg.resolved_scheme()
    if scheme == "splitting_verlet":
        if cfg.alpha != 0.0:
            raise DimensionMismatch("splitting_verlet is the alpha = 0 integrator")
        F0 = cached_force
        if F0 is None:
            F0, inc = pairwise_forces(
                out.positions, kernel, out.torus, cfg.collision_policy, cfg.r_min
            )
            incidents += inc
        out.velocities = out.velocities + 0.5 * dt * F0
        _advance_positions(out, dt * out.velocities)
        F1, inc = pairwise_forces(
            out.positions, kernel, out.torus, cfg.collision_policy, cfg.r_min
        )
        incidents += inc
        out.velocities = out.velocities + 0.5 * dt * F1
        out.time = state.time + dt
        return out, F1, incidents
    F0, inc = pairwise_forces(
        out.positions, kernel, out.torus, cfg.collision_policy, cfg.r_min
    )
    incidents += inc
    _advance_positions(out, dt * out.velocities)
    out.velocities = out.velocities + dt * F0
    if cfg.alpha > 0.0:
        if noise is None:
            raise DimensionMismatch("alpha > 0 needs Gaussian increments")
        out.velocities = out.velocities + math.sqrt(2.0 * cfg.alpha * dt) * noise
    out.time = state.time + dt
    return out, None, incidents


def step_first_order(
    state: ParticleState,
    kernel: kn.KernelSpec,
    cfg: SimConfig,
    noise: np.ndarray | None = None,
):
    """One Euler-Maruyama step of the first-order system; returns (state, incidents)."""
    if state.order != "first":
        raise DimensionMismatch("state is not first order")
    out = state.copy()
    F, incidents = pairwise_forces(
        out.positions, kernel, out.torus, cfg.collision_policy, cfg.r_min
    )
    delta = cfg.dt * F
    if cfg.alpha > 0.0:
        if noise is None:
            raise DimensionMismatch("alpha > 0 needs Gaussian increments")
        delta = delta + math.sqrt(2.0 * cfg.alpha * cfg.dt) * noise
    _advance_positions(out, delta)
    out.time = state.time + cfg.dt
    return out, incidents


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


def replica_init_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(replica, 0)))
    )


def particle_noise(seed: int, replica: int, particle_id: int, steps: int, d: int) -> np.ndarray:
    """All Gaussian increments for one particle's trajectory, in step order."""
    gen = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(replica, 1, particle_id)))
    )
    return gen.standard_normal((steps, d))


@dataclass
class EnsembleResult:
    rows: list = field(default_factory=list)  # (replica, t, name, value)
    incidents: int = 0

    def values(self, name: str, t: float) -> np.ndarray:
        return np.array(
            [v for (_, tt, nn, v) in self.rows if nn == name and abs(tt - t) < 1e-12]
        )

    def mean_stderr(self, name: str, t: float) -> tuple[float, float]:
        vals = self.values(name, t)
        m = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        return m, se


def run_ensemble(
    cfg: SimConfig,
    kernel: kn.KernelSpec,
    init_density: mf.DensityField,
    R: int,
    observers: dict,
    record_times=None,
    particle_ids=None,
    return_states: bool = False,
):
    """Evolve R independent replicas and record observer values.

    ``observers`` maps a name to a callable on ParticleState.  Same
    (cfg, seed, R, schedule) gives byte-identical results.  ``particle_ids``
    reassigns the per-particle noise streams (used to check exchangeability).
    """
    steps = round(cfg.t_end / cfg.dt)
    if record_times is None:
        record_times = [0.0, cfg.t_end]
    record_steps = sorted({min(steps, max(0, round(t / cfg.dt))) for t in record_times})
    if particle_ids is None:
        particle_ids = np.arange(cfg.N)
    result = EnsembleResult()
    final_states = []
    needs_noise = cfg.alpha > 0.0
    for r in range(R):
        state = sample_initial(
            init_density, cfg.N, cfg.order, replica_init_rng(cfg.seed, r)
        )
        if needs_noise:
            noise = np.stack(
                [
                    particle_noise(cfg.seed, r, int(pid), steps, cfg.d)
                    for pid in particle_ids
                ],
                axis=1,
            )  # (steps, N, d)
        cached = None
        if 0 in record_steps:
            for name, fn in observers.items():
                result.rows.append((r, 0.0, name, float(fn(state))))
        for s in range(steps):
            xi = noise[s] if needs_noise else None
            if cfg.order == "second":
                state, cached, inc = step_second_order(
                    state, kernel, cfg, noise=xi, cached_force=cached
                )
            else:
                state, inc = step_first_order(state, kernel, cfg, noise=xi)
            result.incidents += inc
            if (s + 1) in record_steps:
                t = (s + 1) * cfg.dt
                for name, fn in observers.items():
                    result.rows.append((r, t, name, float(fn(state))))
        if return_states:
            final_states.append(state)
    if return_states:
        return result, final_states
    return result


def total_momentum(state: ParticleState) -> np.ndarray:
    if state.order != "second":
        raise DimensionMismatch("momentum is a second-order observable")
    return state.velocities.sum(axis=0)


def center_of_mass(state: ParticleState) -> np.ndarray:
    return state.unwrapped.mean(axis=0)
