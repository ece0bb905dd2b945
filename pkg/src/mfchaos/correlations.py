"""Weighted marginals, slot projectors, correlation ladders, cluster expansions.

Everything here acts on dense tensors over a finite one-body site space with
M sites and uniform cell volume dz.  For a bounded symmetric observable T on
N slots and a positive unit-mass weight w, the order-n objects are

* marginal:     m_n = contraction of T with w over the last N-n slots;
* correlation:  c_n = (Id - P_1)...(Id - P_n) m_n, where P_j averages slot j
  against w; each c_n has zero w-average in every slot;
* cluster expansion: m_n = sum over subsets sigma of [n] of c_{|sigma|}(z_sigma),
  and its Moebius inverse expressing c_n as an alternating sum of marginals.

These identities are exact linear algebra, so the tests pin them near machine
precision.  Inner products accumulate in extended precision.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, IndexRange, MemoryCap, UnnormalizedDensity

#: hard cap on dense tensor entries (M**n)
MEMORY_CAP = 2**24


@dataclass(frozen=True)
class SiteSpace:
    """Finite one-body state space: M sites of uniform volume dz."""

    M: int
    dz: float

    def __post_init__(self):
        if self.M < 2:
            raise DimensionMismatch("need at least two sites")


@dataclass(frozen=True)
class Weight:
    """Strictly positive one-body density with unit mass on a SiteSpace."""

    space: SiteSpace
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.space.M,):
            raise DimensionMismatch("weight shape does not match the site space")
        if not np.all(vals > 0):
            raise UnnormalizedDensity("weight must be strictly positive")
        mass = float(np.sum(vals) * self.space.dz)
        if abs(mass - 1.0) > 1e-10:
            raise UnnormalizedDensity(f"weight mass {mass!r} is not 1")
        # renormalize to machine precision; the cancellation identities
        # downstream are only as exact as this normalization
        object.__setattr__(self, "values", vals / mass)

    @property
    def cell(self) -> np.ndarray:
        """Per-site integration weight w dz."""
        return self.values * self.space.dz


@dataclass
class NTensor:
    """Dense real function on the n-fold product of a SiteSpace."""

    space: SiteSpace
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.values.ndim
        if self.values.shape != (self.space.M,) * n:
            raise DimensionMismatch(
                f"tensor shape {self.values.shape} is not (M,)*n with M={self.space.M}"
            )
        if self.space.M**n > MEMORY_CAP:
            raise MemoryCap(f"M^n = {self.space.M**n} entries exceed the cap")

    @property
    def order(self) -> int:
        return self.values.ndim

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def check_symmetric(self, rng: np.random.Generator | None = None, trials: int = 4) -> float:
        """Largest transposition residual over a few random axis swaps."""
        n = self.order
        if n < 2:
            return 0.0
        rng = rng or np.random.default_rng(0)
        worst = 0.0
        for _ in range(trials):
            i, j = rng.choice(n, size=2, replace=False)
            worst = max(worst, float(np.abs(self.values - np.swapaxes(self.values, i, j)).max()))
        return worst


def _guard_order(space: SiteSpace, n: int):
    if space.M**n > MEMORY_CAP:
        raise MemoryCap(f"M^n = {space.M**n} entries exceed the cap")


def extended_sum(arr: np.ndarray) -> float:
    """Sum in 80-bit extended precision."""
    return float(np.sum(arr, dtype=np.longdouble))


def weighted_ip(a: np.ndarray, b: np.ndarray, weight: Weight) -> float:
    """<a, b> against the product weight, accumulated in extended precision."""
    prod = (a * b).astype(np.longdouble)
    cell = weight.cell.astype(np.longdouble)
    for _ in range(prod.ndim):
        prod = np.sum(prod * cell, axis=-1)
    return float(prod)


def weighted_l2_norm(g: NTensor, weight: Weight) -> float:
    """(sum |g|^2 w^{(x)n} dz^n)^(1/2)."""
    if g.order == 0:
        return abs(float(g.values))
    return math.sqrt(max(0.0, weighted_ip(g.values, g.values, weight)))


def mixed_sup_l2_norm(g: NTensor, weight: Weight, k: int) -> float:
    """Sup over the first k slots of the weighted L2 norm in the rest."""
    n = g.order
    if not 0 <= k <= n:
        raise IndexRange(f"sup-slot count {k} outside [0, {n}]")
    if k == 0:
        return weighted_l2_norm(g, weight)
    M = g.space.M
    flat = g.values.reshape(M**k, *((M,) * (n - k)))
    cell = weight.cell
    sq = flat.astype(np.longdouble) ** 2
    for _ in range(n - k):
        sq = np.sum(sq * cell, axis=-1)
    return float(np.sqrt(sq.max()))


# ---------------------------------------------------------------------------
# marginals and projectors
# ---------------------------------------------------------------------------


def weighted_marginal(phi: NTensor, weight: Weight, n: int) -> NTensor:
    """Integrate out the last (order - n) slots against the weight."""
    N = phi.order
    if not 0 <= n <= N:
        raise IndexRange(f"marginal order {n} outside [0, {N}]")
    vals = phi.values
    cell = weight.cell
    for _ in range(N - n):
        vals = vals @ cell
    return NTensor(space=phi.space, values=vals, symmetric=phi.symmetric)


def plain_marginal(F: NTensor, k: int) -> NTensor:
    """Integrate out the last (order - k) slots against plain cell volume."""
    N = F.order
    if not 0 <= k <= N:
        raise IndexRange(f"marginal order {k} outside [0, {N}]")
    vals = F.values
    for _ in range(N - k):
        vals = vals.sum(axis=-1) * F.space.dz
    return NTensor(space=F.space, values=vals, symmetric=F.symmetric)


def project_slot(g: NTensor, j: int, weight: Weight) -> NTensor:
    """P_j g: average slot j against the weight, held constant in that slot."""
    n = g.order
    if not 1 <= j <= n:
        raise IndexRange(f"slot {j} outside [1, {n}]")
    contracted = np.tensordot(g.values, weight.cell, axes=([j - 1], [0]))
    vals = np.broadcast_to(
        np.expand_dims(contracted, axis=j - 1), g.values.shape
    ).copy()
    return NTensor(space=g.space, values=vals, symmetric=False)


def _remove_slot_means(values: np.ndarray, weight: Weight) -> np.ndarray:
    """(Id - P_1)...(Id - P_n) applied to a raw array."""
    out = values
    for j in range(values.ndim):
        mean = np.tensordot(out, weight.cell, axes=([j], [0]))
        out = out - np.expand_dims(mean, axis=j)
    return out


# ---------------------------------------------------------------------------
# correlation ladders
# ---------------------------------------------------------------------------


@dataclass
class CorrelationLadder:
    """Correlations c_0..c_nmax of one observable, with their weight."""

    weight: Weight
    N: int
    tensors: list = field(default_factory=list)  # NTensor, orders 0..nmax
    _norms: list | None = None

    @property
    def nmax(self) -> int:
        return len(self.tensors) - 1

    def norms(self) -> np.ndarray:
        """Weighted L2 norm of each order (cached)."""
        if self._norms is None:
            self._norms = [weighted_l2_norm(c, self.weight) for c in self.tensors]
        return np.array(self._norms)

    def rescaled_norms(self) -> np.ndarray:
        """Norms of binom(N, n)^(1/2) c_n."""
        return self.norms() * np.array(
            [math.sqrt(math.comb(self.N, n)) for n in range(self.nmax + 1)]
        )

    def rescaled(self) -> "CorrelationLadder":
        tensors = [
            NTensor(
                space=c.space,
                values=c.values * math.sqrt(math.comb(self.N, n)),
                symmetric=c.symmetric,
            )
            for n, c in enumerate(self.tensors)
        ]
        return CorrelationLadder(weight=self.weight, N=self.N, tensors=tensors)

    def orthogonality_residual(self) -> float:
        """Max over n >= 1 and slots j of sup |sum_{z_j} c_n w dz|."""
        worst = 0.0
        for c in self.tensors[1:]:
            for j in range(c.order):
                m = np.tensordot(c.values, self.weight.cell, axes=([j], [0]))
                worst = max(worst, float(np.abs(m).max()) if m.size else abs(float(m)))
        return worst


def correlations_by_projection(phi: NTensor, weight: Weight, nmax: int) -> CorrelationLadder:
    """Ladder built by marginalizing and removing slot means order by order."""
    N = phi.order
    if nmax > N:
        raise IndexRange(f"nmax {nmax} exceeds observable order {N}")
    tensors = []
    for n in range(nmax + 1):
        m_n = weighted_marginal(phi, weight, n)
        vals = _remove_slot_means(m_n.values, weight)
        tensors.append(NTensor(space=phi.space, values=vals, symmetric=phi.symmetric))
    return CorrelationLadder(weight=weight, N=N, tensors=tensors)


def _embed(values: np.ndarray, slots, n: int, M: int) -> np.ndarray:
    """View an order-k tensor as an order-n broadcastable array living on ``slots``."""
    shape = [1] * n
    for s in slots:
        shape[s] = M
    return values.reshape(shape)


def correlations_by_inclusion_exclusion(
    marginals: list, weight: Weight, N: int
) -> CorrelationLadder:
    """Ladder from the alternating-sum formula over index subsets.

    ``marginals`` holds the weighted marginals of orders 0..nmax in order.
    Independent route from correlations_by_projection; the two agree exactly.
    """
    M = weight.space.M
    tensors = []
    for n, m_n in enumerate(marginals):
        if m_n.order != n:
            raise IndexRange("marginals must be ordered 0..nmax")
        vals = np.zeros((M,) * n)
        for k in range(n + 1):
            sign = (-1.0) ** (n - k)
            for sigma in itertools.combinations(range(n), k):
                vals = vals + sign * _embed(marginals[k].values, sigma, n, M)
        tensors.append(NTensor(space=weight.space, values=vals, symmetric=m_n.symmetric))
    return CorrelationLadder(weight=weight, N=N, tensors=tensors)


def marginals_from_correlations(ladder: CorrelationLadder, n: int) -> NTensor:
    """Cluster expansion: m_n = sum over subsets of [n] of c_|sigma|(z_sigma)."""
    if n > ladder.nmax:
        raise IndexRange(f"ladder only reaches order {ladder.nmax}")
    M = ladder.weight.space.M
    _guard_order(ladder.weight.space, n)
    vals = np.zeros((M,) * n)
    for k in range(n + 1):
        for sigma in itertools.combinations(range(n), k):
            vals = vals + _embed(ladder.tensors[k].values, sigma, n, M)
    return NTensor(space=ladder.weight.space, values=vals, symmetric=True)


def parseval_residual(phi: NTensor, ladder: CorrelationLadder) -> float:
    """Relative defect of |phi|^2-mass against the binomial-weighted ladder norms.

    Needs the complete ladder (nmax == N); exact by slot-mean orthogonality.
    """
    N = phi.order
    if ladder.nmax != N:
        raise IndexRange("Parseval identity needs the complete ladder")
    lhs = weighted_ip(phi.values, phi.values, ladder.weight)
    norms = ladder.norms()
    rhs = float(
        np.sum(
            np.array([math.comb(N, n) for n in range(N + 1)], dtype=np.longdouble)
            * np.array(norms, dtype=np.longdouble) ** 2
        )
    )
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


# ---------------------------------------------------------------------------
# symmetrized product observables and their closed-form ladders
# ---------------------------------------------------------------------------


def symmetrized_product_observable(psi: np.ndarray, space: SiteSpace, N: int, k: int) -> NTensor:
    """binom(N,k)^(-1) sum over k-subsets of slots of prod psi(z_i)."""
    if k > N:
        raise IndexRange(f"product order {k} exceeds slot count {N}")
    _guard_order(space, N)
    psi = np.asarray(psi, dtype=float)
    M = space.M
    vals = np.zeros((M,) * N)
    for sigma in itertools.combinations(range(N), k):
        term = np.ones((1,) * N)
        for s in sigma:
            term = term * _embed(psi, (s,), N, M)
        vals = vals + term
    vals = vals / math.comb(N, k)
    return NTensor(space=space, values=vals, symmetric=True)


def closed_form_final_correlations(
    psi: np.ndarray, weight: Weight, N: int, k: int, n: int
) -> NTensor:
    """Order-n correlation of the symmetrized k-fold product observable.

    Vanishes for n > k; otherwise an alternating sum of partial products of
    psi against powers of its weighted mean.
    """
    M = weight.space.M
    _guard_order(weight.space, n)
    if n > N:
        raise IndexRange(f"order {n} exceeds slot count {N}")
    psi = np.asarray(psi, dtype=float)
    if n > k:
        return NTensor(space=weight.space, values=np.zeros((M,) * n), symmetric=True)
    mean = float(np.sum(psi * weight.cell))
    vals = np.zeros((M,) * n)
    for l in range(n + 1):
        coeff = (-1.0) ** (n + l) * mean ** (k - l)
        for tau in itertools.combinations(range(n), l):
            term = np.ones((1,) * n) if n else np.ones(())
            for s in tau:
                term = term * _embed(psi, (s,), n, M)
            vals = vals + coeff * term
    vals = vals * (math.comb(k, n) / math.comb(N, n))
    return NTensor(space=weight.space, values=vals, symmetric=True)
