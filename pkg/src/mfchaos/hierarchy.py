"""Ladder operators, hierarchy residuals, generating functions, windows.

The correlation ladder extracted from an oracle run satisfies, up to
discretization, a coupled system: the order-n tensor is driven by orders
n-1, n, n+1, n+2 through four linear maps (raising, diagonal, lowering and
double-lowering), assembled here term by term with the exact prefactors
(N-n)/(N-1), 1/(N-1), (N-n)(N-n-1)/(N(N-1)).  Missing orders (above the
ladder cap or above N) enter as zero.

Residuals are measured in the weighted L2 norm; the acceptance story is the
refinement trend, not absolute values, except for structural identities:
the weak-form defect is orthogonal to the zero-slot-mean subspace, so its
projection vanishes under refinement while the defect itself stays finite,
and the constant ladder solves the limit hierarchy exactly.

The scalar generating function Z(t, r) = sum_n r^n ||rescaled c_n(t)||
encodes the whole ladder; the contraction windows are the greedy partition
of [0, T] into intervals where the trapezoid integral of the coupling norm
stays below 1/8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import correlations as ca
from . import kernels as kn
from . import oracle as orc
from .errors import IndexRange

# ---------------------------------------------------------------------------
# slot-level helpers on raw arrays
# ---------------------------------------------------------------------------


def _apply_matrix(mat, T, slot):
    Tm = np.moveaxis(T, slot, -1)
    out = np.einsum("ab,...b->...a", mat, Tm)
    return np.moveaxis(out, -1, slot)


def _apply_pair_tensor(G, T, slot_i, slot_j):
    """out[.. a .. c ..] = sum_b G[a, b, c] T[.. b .. c ..]."""
    Tm = np.moveaxis(T, (slot_i, slot_j), (-2, -1))
    out = np.einsum("abc,...bc->...ac", G, Tm)
    return np.moveaxis(out, (-2, -1), (slot_i, slot_j))


def _pair_grad_tensor(w, Dp, Dm):
    """Upwind slot-derivative with coefficient w[a, c] against a partner site."""
    return (
        np.maximum(w, 0.0)[:, None, :] * Dp[:, :, None]
        + np.minimum(w, 0.0)[:, None, :] * Dm[:, :, None]
    )


def _embed(values, slots, n, M):
    shape = [1] * n
    for s in slots:
        shape[s] = M
    return values.reshape(shape)


@dataclass
class LadderOperators:
    """The four coupling maps of the ladder hierarchy for one weight snapshot.

    Built from the grid's upwind stencils, the sampled kernel, its grid
    convolution against the weight, and the two-point coupling field; all
    contractions use the weight's cell quadrature, so the zero-mean structure
    of the coupling field holds exactly inside every map.
    """

    grid: orc.OneBodyGrid
    kernel: kn.KernelSpec
    alpha: float
    N: int
    weight: ca.Weight
    Kpair: np.ndarray
    conv: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        Dp, Dm, _, Lap = self.grid.coupling_diffs()
        self._G_K = _pair_grad_tensor(self.Kpair, Dp, Dm)
        gap = self.Kpair - self.conv[:, None]
        self._G_gap = _pair_grad_tensor(gap, Dp, Dm)
        self._conv_grad = orc.upwind_gradient_matrix(self.conv, Dp, Dm)
        self._left = self.alpha * Lap
        if self.grid.order == "second":
            Dpx, Dmx = self.grid.x_diffs()
            v = self.grid.site_v()
            self._left = self._left + orc.upwind_gradient_matrix(v, Dpx, Dmx)
        cell = self.weight.cell
        self._VW = self.V * cell[:, None]  # first argument carries the weight
        self._Vcc = self.V * np.outer(cell, cell)

    @property
    def M(self) -> int:
        return self.grid.M

    # -- elementary moves -------------------------------------------------

    def left_side(self, C: np.ndarray) -> np.ndarray:
        """Transport and diffusion terms that sit with the time derivative."""
        out = np.zeros_like(C)
        for i in range(C.ndim):
            out += _apply_matrix(self._left, C, i)
        return out

    def _couple_slot(self, T: np.ndarray, j_axis: int) -> np.ndarray:
        """Integrate the last axis of T against V(., z_j) w dz, diagonal in j.

        T has the partner slot at ``j_axis`` and the integrated argument last;
        the result drops the last axis.
        """
        Tm = np.moveaxis(T, j_axis, -2)
        out = np.einsum("...js,sj->...j", Tm, self._VW)
        return np.moveaxis(out, -1, j_axis)

    def _couple_pair(self, T: np.ndarray) -> np.ndarray:
        """Integrate the last two axes against V w w dz^2."""
        return np.einsum("...ab,ab->...", T, self._Vcc)

    # -- the four ladder maps ---------------------------------------------

    def raising(self, C: np.ndarray | None, n: int) -> np.ndarray:
        """Order n-1 -> n (carries an outer 1/(N-1) in the hierarchy)."""
        M = self.M
        out = np.zeros((M,) * n)
        if C is None or n < 1:
            return out
        for j in range(n):
            slots = [s for s in range(n) if s != j]
            emb = np.broadcast_to(_embed(C, slots, n, M), out.shape)
            for i in slots:
                out = out + _apply_matrix(self._conv_grad, emb, i)
                out = out - _apply_pair_tensor(self._G_K, emb, i, j)
            if n >= 2:
                # partner integrated against V(., z_j), constant in slot i;
                # contracted axes: slots minus {i, j}, then z_j
                contracted = np.tensordot(C, self._VW, axes=([C.ndim - 1], [0]))
                for i in slots:
                    rest = [s for s in range(n) if s not in (i, j)] + [j]
                    out = out - np.broadcast_to(
                        _embed(contracted, rest, n, M), out.shape
                    )
        return out

    def diagonal(self, C: np.ndarray | None, n: int) -> np.ndarray:
        """Order n -> n, including its internal (N-n)/(N-1), 1/(N-1) weights."""
        M = self.M
        out = np.zeros((M,) * n)
        if C is None or n == 0:
            return out
        N = self.N
        lead = (N - n) / (N - 1.0)
        sub = 1.0 / (N - 1.0)
        cell = self.weight.cell
        for i in range(n):
            out = out - lead * _apply_matrix(self._conv_grad, C, i)
        for j in range(n):
            # slot j handed to the integrated argument, re-coupled to z_j
            Tm = np.moveaxis(C, j, -1)
            val = np.einsum("...s,sj->...j", Tm, self._VW)
            out = out + lead * np.moveaxis(val, -1, j)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                out = out - sub * _apply_pair_tensor(self._G_K, C, i, j)
                # partner integrated, slot-i derivative against it
                Tm = np.moveaxis(C, j, -1)
                grad = _apply_pair_tensor(self._G_K, Tm, i if i < j else i - 1, n - 1)
                val = np.tensordot(grad, cell, axes=([n - 1], [0]))
                out = out + sub * np.broadcast_to(
                    _embed(val, [s for s in range(n) if s != j], n, M), out.shape
                )
                # slot i integrated, coupled to z_j
                Ti = np.moveaxis(C, i, -1)
                pos_j = j if j < i else j - 1
                val = self._couple_slot(Ti, pos_j)
                rest = [s for s in range(n) if s not in (i, j)] + [j]
                # _couple_slot leaves axes (others..., z_j) with z_j back at
                # pos_j; move it last to match the embed order
                val = np.moveaxis(val, pos_j, -1)
                out = out - sub * np.broadcast_to(_embed(val, rest, n, M), out.shape)
                # both arguments integrated, constant in slots i and j
                Tij = np.moveaxis(C, (i, j), (-2, -1))
                val = self._couple_pair(Tij)
                rest = [s for s in range(n) if s not in (i, j)]
                out = out + sub * np.broadcast_to(_embed(val, rest, n, M), out.shape)
        return out

    def lowering(self, C: np.ndarray | None, n: int) -> np.ndarray:
        """Order n+1 -> n with internal (N-n)/(N-1) weights."""
        M = self.M
        out = np.zeros((M,) * n)
        if C is None:
            return out
        N = self.N
        lead = (N - n) / (N - 1.0)
        cell = self.weight.cell
        for j in range(n):
            out = out + lead * self._couple_slot(C, j)
        for i in range(n):
            grad = _apply_pair_tensor(self._G_K, C, i, n)
            out = out - lead * np.tensordot(grad, cell, axes=([n], [0]))
        if n >= 1:
            val = self._couple_pair(C)  # slots minus {i}, same value for all i
            for i in range(n):
                rest = [s for s in range(n) if s != i]
                out = out - 2.0 * lead * np.broadcast_to(
                    _embed(val, rest, n, M), out.shape
                )
        return out

    def double_lowering(self, C: np.ndarray | None, n: int) -> np.ndarray:
        """Order n+2 -> n (carries an outer factor N in the hierarchy)."""
        if C is None:
            return np.zeros((self.M,) * n)
        N = self.N
        pref = (N - n) * (N - n - 1.0) / (N * (N - 1.0))
        return pref * self._couple_pair(C)

    def rhs(self, ladder_values: dict, n: int) -> np.ndarray:
        """Full right-hand side at order n from a dict order -> values."""
        N = self.N
        get = ladder_values.get
        return (
            self.raising(get(n - 1), n) / (N - 1.0)
            + self.diagonal(get(n), n)
            + self.lowering(get(n + 1), n)
            + N * self.double_lowering(get(n + 2), n)
        )

    # -- weak-form combination whose remainder is slot-mean orthogonal -----

    def weak_form_combination(self, ladder_values: dict, n: int) -> np.ndarray:
        """Coupling terms of the reduced hierarchy, moved to the left side.

        Added to (d_t + transport + diffusion) c_n this equals exactly the
        explicit remainder, which pairs to zero against anything with zero
        slot means; projecting it onto that subspace therefore vanishes
        under refinement while the combination itself stays finite.
        """
        M = self.M
        N = self.N
        get = ladder_values.get
        lead = (N - n) / (N - 1.0)
        sub = 1.0 / (N - 1.0)
        out = np.zeros((M,) * n)
        cell = self.weight.cell
        Cn = get(n)
        if Cn is not None and n > 0:
            for j in range(n):
                Tm = np.moveaxis(Cn, j, -1)
                val = np.einsum("...s,sj->...j", Tm, self._VW)
                out = out - lead * np.moveaxis(val, -1, j)
            for i in range(n):
                out = out + lead * _apply_matrix(self._conv_grad, Cn, i)
            for i in range(n):
                for j in range(n):
                    if i != j:
                        out = out + sub * _apply_pair_tensor(self._G_K, Cn, i, j)
        Cn2 = get(n + 2)
        if Cn2 is not None:
            pref = (N - n) * (N - n - 1.0) / (N - 1.0)
            out = out - pref * self._couple_pair(Cn2)
        Cn1 = get(n + 1)
        if Cn1 is not None:
            for i in range(n):
                grad = _apply_pair_tensor(self._G_gap, Cn1, i, n)
                out = out + lead * np.tensordot(grad, cell, axes=([n], [0]))
            for j in range(n):
                out = out - lead * self._couple_slot(Cn1, j)
        Cm1 = get(n - 1)
        if Cm1 is not None and n >= 1:
            for j in range(n):
                slots = [s for s in range(n) if s != j]
                emb = np.broadcast_to(_embed(Cm1, slots, n, M), out.shape)
                for i in slots:
                    out = out + sub * _apply_pair_tensor(self._G_K, emb, i, j)
        return out


def ladder_operators(
    grid: orc.OneBodyGrid,
    kernel: kn.KernelSpec,
    alpha: float,
    N: int,
    fvals: np.ndarray,
) -> LadderOperators:
    coup = orc.pair_coupling(grid, kernel, fvals)
    Kpair = orc.kernel_pair_matrix(grid, kernel)
    conv = Kpair @ coup.weight.cell
    return LadderOperators(
        grid=grid,
        kernel=kernel,
        alpha=alpha,
        N=N,
        weight=coup.weight,
        Kpair=Kpair,
        conv=conv,
        V=coup.V,
    )


# ---------------------------------------------------------------------------
# residual reports over an oracle run
# ---------------------------------------------------------------------------


def _time_derivatives(stack: np.ndarray, dt: float) -> np.ndarray:
    """Centered differences in time (one-sided at the ends); stack (Q, ...)."""
    out = np.empty_like(stack)
    out[1:-1] = (stack[2:] - stack[:-2]) / (2.0 * dt)
    out[0] = (stack[1] - stack[0]) / dt
    out[-1] = (stack[-1] - stack[-2]) / dt
    return out


def _project_slot_mean_free(values: np.ndarray, weight: ca.Weight) -> np.ndarray:
    out = values
    for j in range(values.ndim):
        mean = np.tensordot(out, weight.cell, axes=([j], [0]))
        out = out - np.expand_dims(mean, axis=j)
    return out


@dataclass
class ResidualReport:
    times: np.ndarray
    orders: np.ndarray
    residual: np.ndarray  # (Q, n) explicit-hierarchy residual norms
    projected: np.ndarray  # (Q, n) slot-mean-free part of the weak-form defect
    weak_form: np.ndarray  # (Q, n) unprojected weak-form defect norms
    rhs_dropped: np.ndarray = None  # (Q, n) norms with all coupling terms dropped

    def interior_max(self, n: int) -> float:
        return float(self.residual[1:-1, n].max())

    def interior_projected_max(self, n: int) -> float:
        return float(self.projected[1:-1, n].max())

    def interior_weak_form_max(self, n: int) -> float:
        return float(self.weak_form[1:-1, n].max())

    def interior_rhs_dropped_max(self, n: int) -> float:
        return float(self.rhs_dropped[1:-1, n].max())


def residuals_from_ladders(
    times,
    f_path: np.ndarray,
    ladders: list,
    grid: orc.OneBodyGrid,
    kernel: kn.KernelSpec,
    alpha: float,
    N: int,
) -> ResidualReport:
    """Residual report from persisted ladder snapshots.

    ``ladders`` is a list over snapshots of dicts mapping order -> values;
    orders missing from the dicts are zero-padded, matching the ladder's
    boundary convention (use nmax = N to avoid truncation bias).
    """
    times = np.asarray(times, dtype=float)
    nmax = max(ladders[0])
    Q = len(times)
    dt_snap = float(times[1] - times[0])
    dstacks = {
        n: _time_derivatives(np.stack([lad[n] for lad in ladders]), dt_snap)
        for n in range(nmax + 1)
    }
    residual = np.zeros((Q, nmax + 1))
    projected = np.zeros((Q, nmax + 1))
    weak = np.zeros((Q, nmax + 1))
    dropped = np.zeros((Q, nmax + 1))
    for q in range(Q):
        ops = ladder_operators(grid, kernel, alpha, N, f_path[q])
        w = ops.weight
        vals = ladders[q]
        for n in range(nmax + 1):
            lhs = dstacks[n][q] + ops.left_side(vals[n])
            res = lhs - ops.rhs(vals, n)
            residual[q, n] = ca.weighted_l2_norm(
                ca.NTensor(space=w.space, values=res), w
            )
            dropped[q, n] = ca.weighted_l2_norm(
                ca.NTensor(space=w.space, values=lhs), w
            )
            wf = lhs + ops.weak_form_combination(vals, n)
            weak[q, n] = ca.weighted_l2_norm(ca.NTensor(space=w.space, values=wf), w)
            proj = _project_slot_mean_free(wf, w)
            projected[q, n] = ca.weighted_l2_norm(
                ca.NTensor(space=w.space, values=proj), w
            )
    return ResidualReport(
        times=times,
        orders=np.arange(nmax + 1),
        residual=residual,
        projected=projected,
        weak_form=weak,
        rhs_dropped=dropped,
    )


def hierarchy_residuals(run: orc.OracleRun, nmax: int) -> ResidualReport:
    """Residuals of the explicit ladder hierarchy along an oracle run."""
    cfg = run.config
    series = orc.extract_correlation_series(run, nmax)
    ladders = [
        {n: lad.tensors[n].values for n in range(nmax + 1)} for lad in series
    ]
    return residuals_from_ladders(
        run.times, run.f_path, ladders, cfg.grid, cfg.kernel, cfg.alpha, cfg.N
    )


def _limit_residual_at(ops: LadderOperators, vals: dict, dC, n: int) -> np.ndarray:
    res = dC + ops.left_side(vals[n])
    C = vals[n]
    if n > 0:
        for i in range(n):
            res = res + _apply_matrix(ops._conv_grad, C, i)
        for j in range(n):
            Tm = np.moveaxis(C, j, -1)
            val = np.einsum("...s,sj->...j", Tm, ops._VW)
            res = res - np.moveaxis(val, -1, j)
    Cn2 = vals.get(n + 2)
    if Cn2 is not None:
        res = res - math.sqrt((n + 1) * (n + 2)) * ops._couple_pair(Cn2)
    return res


def limit_hierarchy_residuals(run: orc.OracleRun, nmax: int) -> np.ndarray:
    """Residual norms (Q, nmax+1) of the limit hierarchy on rescaled ladders.

    The dropped finite-size terms are O(n/N) plus discretization; the
    residual falls as N grows at fixed grid.
    """
    cfg = run.config
    series = [lad.rescaled() for lad in orc.extract_correlation_series(run, nmax)]
    Q = len(run.times)
    dt_snap = float(run.times[1] - run.times[0])
    dstacks = {
        n: _time_derivatives(
            np.stack([lad.tensors[n].values for lad in series]), dt_snap
        )
        for n in range(nmax + 1)
    }
    out = np.zeros((Q, nmax + 1))
    for q in range(Q):
        ops = ladder_operators(cfg.grid, cfg.kernel, cfg.alpha, cfg.N, run.f_path[q])
        w = ops.weight
        vals = {n: series[q].tensors[n].values for n in range(nmax + 1)}
        for n in range(nmax + 1):
            res = _limit_residual_at(ops, vals, dstacks[n][q], n)
            out[q, n] = ca.weighted_l2_norm(ca.NTensor(space=w.space, values=res), w)
    return out


def trivial_limit_solution_residual(
    grid: orc.OneBodyGrid,
    kernel: kn.KernelSpec,
    alpha: float,
    N: int,
    fvals: np.ndarray,
    value: float,
    nmax: int = 3,
) -> float:
    """Residual of the constant ladder (value, 0, 0, ...); exactly zero.

    The order-0 equation couples only to the vanished order-2 tensor, and
    every higher order is identically zero, so all terms drop; the zero-mean
    structure of the coupling field is what lets the constant pass through
    the slot couplings.
    """
    ops = ladder_operators(grid, kernel, alpha, N, fvals)
    M = grid.M
    vals = {0: np.zeros(()) + value}
    for n in range(1, nmax + 3):
        vals[n] = np.zeros((M,) * n)
    worst = 0.0
    for n in range(nmax + 1):
        res = _limit_residual_at(ops, vals, np.zeros((M,) * n), n)
        worst = max(worst, float(np.abs(res).max()))
    return worst


# ---------------------------------------------------------------------------
# generating function, windows, rate fits
# ---------------------------------------------------------------------------


@dataclass
class GeneratingFunction:
    times: np.ndarray
    r_grid: np.ndarray
    values: np.ndarray  # (Q, R)
    nmax: int
    tail_bound: np.ndarray  # (R,) bound on the truncated tail

    def at(self, r: float) -> np.ndarray:
        j = int(np.argmin(np.abs(self.r_grid - r)))
        if abs(self.r_grid[j] - r) > 1e-12:
            raise IndexRange(f"r = {r} not on the evaluation grid")
        return self.values[:, j]


def generating_function(
    times,
    rescaled_norms: np.ndarray,
    r_grid=(1.0 / 3.0, 0.5, 0.75),
    sup_bound: float | None = None,
) -> GeneratingFunction:
    """Z(t, r) = sum_n r^n ||rescaled c_n(t)|| on a grid of r values.

    ``rescaled_norms`` has shape (Q, nmax+1); the truncation tail is bounded
    by sup_bound * r^(nmax+1) / (1 - r) when the a priori sup bound is given.
    """
    r = np.asarray(r_grid, dtype=float)
    Q, n1 = rescaled_norms.shape
    powers = r[None, :] ** np.arange(n1)[:, None]  # (n1, R)
    vals = rescaled_norms @ powers
    if sup_bound is None:
        tail = np.full(r.shape, np.nan)
    else:
        tail = sup_bound * r**n1 / (1.0 - r)
    return GeneratingFunction(
        times=np.asarray(times), r_grid=r, values=vals, nmax=n1 - 1, tail_bound=tail
    )


def cauchy_schwarz_gap(gf: GeneratingFunction) -> float:
    """min over t of Z(1/3)^(1/2) Z(3/4)^(1/2) - Z(1/2); nonnegative always."""
    z13, z12, z34 = gf.at(1.0 / 3.0), gf.at(0.5), gf.at(0.75)
    return float((np.sqrt(z13 * z34) - z12).min())


@dataclass
class WindowReport:
    windows: list  # (t_start, t_end, integral) triples, latest first
    covers: bool
    empty_at: float | None  # time where even one grid step breaks the bound


def contraction_windows(times, coupling_norms, bound: float = 0.125) -> WindowReport:
    """Greedy partition of [0, T] into intervals with trapezoid integral < bound.

    Walks backward from the final time, extending each window while the
    running integral stays below the bound; a single step that already
    exceeds it is reported, not raised.
    """
    t = np.asarray(times, dtype=float)
    lam = np.asarray(coupling_norms, dtype=float)
    windows = []
    hi = len(t) - 1
    while hi > 0:
        acc = 0.0
        lo = hi
        while lo > 0:
            seg = 0.5 * (lam[lo] + lam[lo - 1]) * (t[lo] - t[lo - 1])
            if acc + seg >= bound:
                break
            acc += seg
            lo -= 1
        if lo == hi:
            return WindowReport(windows=windows, covers=False, empty_at=float(t[hi]))
        windows.append((float(t[lo]), float(t[hi]), acc))
        hi = lo
    return WindowReport(windows=windows, covers=True, empty_at=None)


def fit_rate_profile(N_values, errors, stderrs=None):
    """Per-time log-log slopes of errors (Q, len(N)) against N.

    Weighted least squares with weights 1/stderr(log e)^2 when standard
    errors are given.  Returns (slopes, slope_stderrs) arrays of length Q.
    """
    N_values = np.asarray(N_values, dtype=float)
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    x = np.log(N_values)
    slopes = np.empty(errors.shape[0])
    errs = np.empty(errors.shape[0])
    for q in range(errors.shape[0]):
        y = np.log(errors[q])
        if stderrs is not None:
            se = np.atleast_2d(np.asarray(stderrs, dtype=float))
            se_q = se[q] if se.shape[0] == errors.shape[0] else se[0]
            wgt = (errors[q] / np.maximum(se_q, 1e-300)) ** 2
        else:
            wgt = np.ones_like(y)
        W = np.sum(wgt)
        xb = np.sum(wgt * x) / W
        yb = np.sum(wgt * y) / W
        sxx = np.sum(wgt * (x - xb) ** 2)
        slopes[q] = np.sum(wgt * (x - xb) * (y - yb)) / sxx
        resid = y - yb - slopes[q] * (x - xb)
        dof = max(len(x) - 2, 1)
        errs[q] = math.sqrt(max(float(np.sum(wgt * resid**2)) / dof, 0.0) / sxx)
    return slopes, errs
