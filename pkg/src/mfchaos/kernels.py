"""Interaction force kernels: evaluation, periodization, mollification, convolution.

Every family is antisymmetric, K(-x) = -K(x).  Supported families:

* ``zero``           -- no interaction, any dimension.
* ``fourier_smooth`` -- d=1 sine series sum_m c_m sin(2 pi m x), periodic and smooth.
* ``riesz``          -- K(x) = x / |x|^(s+1), i.e. |K| = |x|^(-s); on the torus
  periodized by a truncated image sum over ``image_shells`` shells.
* ``biot_savart_2d`` -- K(x) = x_perp / (2 pi |x|^2) with x_perp = (-x2, x1);
  on the unit torus evaluated through the exponentially convergent image-row
  series -(i/2) sum_n cot(pi(z - i n)) + x2 for the complex velocity u - i v,
  whose curl carries the neutralizing -1 background vorticity.
* ``truncated``      -- base kernel evaluated at the radially pushed-out point
  max(|x|, eps) * x/|x|, so sup |K| = sup_{|y|=eps} |K_base(y)|.
* ``mollified``      -- base kernel convolved with an even, compactly supported
  C^3 bump of width delta, by a fixed tensorized 8-point Gauss-Legendre rule.

Torus convolutions are spectral: the kernel is sampled on the grid (value 0 at
the origin for singular families, antisymmetrized exactly) and multiplied in
Fourier space, which agrees with the real-space cyclic quadrature sum to
round-off.  Documented convention for the Biot-Savart multiplier:
u_hat(k) = i (k2, -k1) rho_hat(k) / (2 pi |k|^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionMismatch, NotTorus, SingularPoint, Unsupported

_SINGULAR_FAMILIES = ("riesz", "biot_savart_2d")

#: images kept on either side in the Biot-Savart row sum; tail ~ 4 exp(-2 pi n)
_BS_IMAGE_ROWS = 6


@dataclass(frozen=True)
class KernelSpec:
    """Immutable description of an interaction force kernel."""

    family: str
    dim: int
    domain: str = "torus"  # "torus" (unit period) or "free"
    coefficients: tuple = ()  # fourier_smooth sine coefficients, mode 1,2,...
    exponent: float = 1.0  # riesz singularity exponent s > 0
    base: "KernelSpec | None" = None  # truncated / mollified
    cutoff: float = 0.0  # truncated radius eps
    width: float = 0.0  # mollifier width delta
    image_shells: int = 3  # riesz torus periodization shells
    far_field: str | None = None  # advisory regularity tag, not enforced

    def __post_init__(self):
        if self.family not in (
            "zero",
            "fourier_smooth",
            "riesz",
            "biot_savart_2d",
            "truncated",
            "mollified",
        ):
            raise Unsupported(f"unknown kernel family {self.family!r}")
        if self.dim < 1:
            raise DimensionMismatch("kernel dimension must be >= 1")
        if self.family == "fourier_smooth" and self.dim != 1:
            raise Unsupported("fourier_smooth is a d=1 sine series")
        if self.family == "biot_savart_2d" and self.dim != 2:
            raise DimensionMismatch("biot_savart_2d requires d=2")
        if self.family in ("truncated", "mollified") and self.base is None:
            raise Unsupported(f"{self.family} kernel needs a base spec")
        if self.family == "truncated" and not self.cutoff > 0:
            raise Unsupported("truncated kernel needs cutoff > 0")
        if self.family == "mollified" and not self.width > 0:
            raise Unsupported("mollified kernel needs width > 0")

    @property
    def bounded(self) -> bool:
        return self.family not in _SINGULAR_FAMILIES


def zero_kernel(dim: int, domain: str = "torus") -> KernelSpec:
    return KernelSpec(family="zero", dim=dim, domain=domain)


def fourier_kernel(coefficients, domain: str = "torus") -> KernelSpec:
    return KernelSpec(
        family="fourier_smooth", dim=1, domain=domain, coefficients=tuple(coefficients)
    )


def riesz_kernel(
    exponent: float, dim: int, domain: str = "free", image_shells: int = 3
) -> KernelSpec:
    return KernelSpec(
        family="riesz", dim=dim, domain=domain, exponent=exponent, image_shells=image_shells
    )


def biot_savart_kernel(domain: str = "free") -> KernelSpec:
    return KernelSpec(family="biot_savart_2d", dim=2, domain=domain)


def truncate(spec: KernelSpec, cutoff: float) -> KernelSpec:
    return KernelSpec(
        family="truncated", dim=spec.dim, domain=spec.domain, base=spec, cutoff=cutoff
    )


def mollify(spec: KernelSpec, width: float) -> KernelSpec:
    """Replace the kernel by its convolution with an even bump of width delta."""
    if not width > 0:
        raise Unsupported("mollifier width must be positive")
    if spec.family == "zero":
        return spec
    return KernelSpec(
        family="mollified", dim=spec.dim, domain=spec.domain, base=spec, width=width
    )


@dataclass(frozen=True)
class Mollifier:
    """Tensor-product bump prod_a c (1 - u_a^2)^4 on |u|_inf < 1, width-rescaled.

    The per-axis profile is a degree-8 polynomial, so the fixed 8-point
    Gauss-Legendre rule per axis integrates it exactly and the unit-mass
    normalization holds to machine precision.  Even in every axis, hence
    mollification preserves antisymmetry.
    """

    width: float
    dim: int

    # normalization of (1 - u^2)^4 on [-1, 1]
    _C1 = 315.0 / 256.0

    def profile(self, y: np.ndarray) -> np.ndarray:
        """Bump density rho_delta(y); y has shape (..., dim)."""
        u = np.asarray(y, dtype=float) / self.width
        inside = np.clip(1.0 - u * u, 0.0, None)
        vals = np.prod(inside**4, axis=-1)
        return vals * (self._C1 / self.width) ** self.dim

    def quadrature(self):
        """Tensorized Gauss-Legendre nodes/weights over the support cube."""
        x, w = np.polynomial.legendre.leggauss(8)
        x = x * self.width
        w = w * self.width
        node_grids = np.meshgrid(*([x] * self.dim), indexing="ij")
        weight_grids = np.meshgrid(*([w] * self.dim), indexing="ij")
        nodes = np.stack([g.ravel() for g in node_grids], axis=-1)
        weights = np.ones(nodes.shape[0])
        for g in weight_grids:
            weights = weights * g.ravel()
        return nodes, weights

    def mass(self) -> float:
        nodes, weights = self.quadrature()
        return float(np.sum(weights * self.profile(nodes)))


def _wrap(x: np.ndarray) -> np.ndarray:
    """Nearest-image representative of a unit-torus offset."""
    return x - np.round(x)


def _check_points(spec: KernelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if spec.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != spec.dim:
        raise DimensionMismatch(
            f"points have trailing dimension {x.shape[-1]}, kernel dim {spec.dim}"
        )
    return x


def _biot_savart_free(x: np.ndarray) -> np.ndarray:
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    perp = np.stack([-x[..., 1], x[..., 0]], axis=-1)
    return perp / (2.0 * np.pi * r2)


def _biot_savart_torus(x: np.ndarray) -> np.ndarray:
    z = x[..., 0] + 1j * x[..., 1]
    w = np.zeros_like(z)
    for n in range(-_BS_IMAGE_ROWS, _BS_IMAGE_ROWS + 1):
        w = w + 1.0 / np.tan(np.pi * (z - 1j * n))
    w = -0.5j * w + x[..., 1]  # u - i v, with the neutralizing counter-flow
    return np.stack([w.real, -w.imag], axis=-1)


def eval_kernel(spec: KernelSpec, x) -> np.ndarray:
    """Evaluate K at points x of shape (..., d); returns the same shape.

    Torus kernels accept arbitrary coordinates and return the periodized
    value.  Raises SingularPoint when an unbounded family hits the origin.
    """
    x = _check_points(spec, x)

    if spec.family == "zero":
        return np.zeros_like(x)

    if spec.family == "fourier_smooth":
        t = x[..., 0]
        out = np.zeros_like(t)
        for m, c in enumerate(spec.coefficients, start=1):
            if c != 0.0:
                out = out + c * np.sin(2.0 * np.pi * m * t)
        return out[..., None]

    if spec.family == "truncated":
        y = _wrap(x) if spec.domain == "torus" else x
        r = np.sqrt(np.sum(y * y, axis=-1, keepdims=True))
        at_origin = r == 0.0
        safe_r = np.where(r > 0, r, 1.0)
        pushed = y * np.where(r < spec.cutoff, spec.cutoff / safe_r, 1.0)
        # exact coincidences have no direction; antisymmetry forces K(0) = 0
        pushed = np.where(at_origin, spec.cutoff, pushed)
        out = eval_kernel(spec.base, pushed)
        return np.where(at_origin, 0.0, out)

    if spec.family == "mollified":
        return _eval_mollified(spec, x)

    # singular families below
    y = _wrap(x) if spec.domain == "torus" else x
    if np.any(np.all(y == 0.0, axis=-1)):
        raise SingularPoint(f"{spec.family} kernel evaluated at the origin")

    if spec.family == "biot_savart_2d":
        if spec.domain == "torus":
            return _biot_savart_torus(x)
        return _biot_savart_free(x)

    if spec.family == "riesz":
        if spec.domain == "torus":
            out = np.zeros_like(y)
            rng = np.arange(-spec.image_shells, spec.image_shells + 1)
            grids = np.meshgrid(*([rng] * spec.dim), indexing="ij")
            shifts = np.stack([g.ravel() for g in grids], axis=-1).astype(float)
            for m in shifts:
                out = out + _riesz_free(y + m, spec.exponent)
            return out
        return _riesz_free(y, spec.exponent)

    raise Unsupported(spec.family)


def _riesz_free(x: np.ndarray, s: float) -> np.ndarray:
    r = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    return x / r ** (s + 1.0)


def _eval_mollified(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    moll = Mollifier(width=spec.width, dim=spec.dim)
    nodes, weights = moll.quadrature()
    rho = moll.profile(nodes)
    shifted = x[..., None, :] - nodes  # (..., Q, d)
    if not spec.base.bounded:
        offs = _wrap(shifted) if spec.base.domain == "torus" else shifted
        hit = np.all(offs == 0.0, axis=-1)
        if np.any(hit):
            # a node exactly on the singularity: drop it (even bump -> principal value)
            safe = np.where(hit[..., None], 0.25 * spec.width, shifted)
            vals = eval_kernel(spec.base, safe)
            vals = np.where(hit[..., None], 0.0, vals)
        else:
            vals = eval_kernel(spec.base, shifted)
    else:
        vals = eval_kernel(spec.base, shifted)
    return np.einsum("...qd,q->...d", vals, weights * rho)


def eval_divergence(spec: KernelSpec, x) -> np.ndarray:
    """Closed-form div K at points x; shape (...,).

    Only zero, fourier_smooth and biot_savart_2d carry an analytic divergence.
    """
    x = _check_points(spec, x)
    if spec.family == "zero":
        return np.zeros(x.shape[:-1])
    if spec.family == "fourier_smooth":
        t = x[..., 0]
        out = np.zeros_like(t)
        for m, c in enumerate(spec.coefficients, start=1):
            if c != 0.0:
                out = out + c * 2.0 * np.pi * m * np.cos(2.0 * np.pi * m * t)
        return out
    if spec.family == "biot_savart_2d":
        y = _wrap(x) if spec.domain == "torus" else x
        if np.any(np.all(y == 0.0, axis=-1)):
            raise SingularPoint("divergence of biot_savart_2d undefined at the origin")
        return np.zeros(x.shape[:-1])
    raise Unsupported(f"no closed-form divergence for family {spec.family!r}")


# ---------------------------------------------------------------------------
# grid sampling and spectral convolution (torus)
# ---------------------------------------------------------------------------


def _reflect(vals: np.ndarray, ndim: int) -> np.ndarray:
    """vals[(-m) mod M] along the first ndim axes."""
    out = vals
    for a in range(ndim):
        out = np.roll(np.flip(out, axis=a), 1, axis=a)
    return out


@lru_cache(maxsize=32)
def _grid_samples_cached(spec: KernelSpec, cells: int) -> np.ndarray:
    d = spec.dim
    axes = [np.arange(cells) / cells for _ in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack(grids, axis=-1)
    origin = (0,) * d
    if spec.bounded:
        vals = eval_kernel(spec, pts)
    else:
        vals = np.zeros(pts.shape)
        mask = np.ones(pts.shape[:-1], dtype=bool)
        mask[origin] = False
        vals[mask] = eval_kernel(spec, pts[mask])
    vals[origin] = 0.0
    # exact antisymmetry on the grid: K[-m] == -K[m] bitwise
    vals = 0.5 * (vals - _reflect(vals, d))
    vals.setflags(write=False)
    return vals


def grid_samples(spec: KernelSpec, cells: int) -> np.ndarray:
    """Periodized kernel sampled on the uniform grid (m/cells), origin set to 0.

    Shape (cells,)*d + (d,), read-only.  Antisymmetric on the grid exactly:
    K[(-m) mod cells] == -K[m].
    """
    if spec.domain != "torus":
        raise NotTorus("grid sampling is defined for torus kernels")
    return _grid_samples_cached(spec, int(cells))


def grid_divergence_samples(spec: KernelSpec, cells: int) -> np.ndarray:
    """Central-difference divergence of the sampled kernel, shape (cells,)*d.

    This is the discrete divergence consistent with summation by parts on the
    grid, which the first-order dual machinery requires; it agrees with
    eval_divergence to O(h^2) where the latter exists.
    """
    K = grid_samples(spec, cells)
    h = 1.0 / cells
    out = np.zeros(K.shape[:-1])
    for a in range(spec.dim):
        out = out + (
            np.roll(K[..., a], -1, axis=a) - np.roll(K[..., a], 1, axis=a)
        ) / (2.0 * h)
    return out


def convolve_grid(spec: KernelSpec, rho: np.ndarray, dx: float) -> np.ndarray:
    """Cyclic convolution (K * rho)(x_m) = sum_q K(x_m - y_q) rho(y_q) dx^d.

    rho is a (cells,)*d array of density values on the matching grid; result
    has shape rho.shape + (d,).  Spectral path; equals the direct double sum
    to round-off.
    """
    if spec.domain != "torus":
        raise NotTorus("convolution against a torus density needs a torus kernel")
    cells = rho.shape[0]
    if rho.shape != (cells,) * spec.dim:
        raise DimensionMismatch(
            f"density shape {rho.shape} does not match kernel dim {spec.dim}"
        )
    if spec.family == "zero":
        return np.zeros(rho.shape + (spec.dim,))
    K = grid_samples(spec, cells)
    rho_hat = np.fft.rfftn(rho)
    out = np.empty(rho.shape + (spec.dim,))
    for a in range(spec.dim):
        Ka_hat = np.fft.rfftn(K[..., a])
        out[..., a] = (
            np.fft.irfftn(Ka_hat * rho_hat, s=rho.shape, axes=range(rho.ndim))
            * dx**spec.dim
        )
    return out


def convolve_direct(spec: KernelSpec, rho: np.ndarray, dx: float) -> np.ndarray:
    """Real-space quadrature convolution; O(M^2d) oracle for convolve_grid."""
    cells = rho.shape[0]
    K = grid_samples(spec, cells)
    d = spec.dim
    Krev = _reflect(K, d)  # Krev[q] = K[-q]
    out = np.zeros(rho.shape + (d,))
    for m in np.ndindex(*rho.shape):
        Km = Krev
        for a, sh in enumerate(m):
            Km = np.roll(Km, sh, axis=a)  # Km[q] = K[m - q]
        for a in range(d):
            out[m + (a,)] = np.sum(Km[..., a] * rho) * dx**d
    return out
