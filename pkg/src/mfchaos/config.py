"""Experiment configuration schema: strict validation and object building.

Configurations are flat JSON documents with a ``schema_version`` and a
``kind`` selecting the experiment.  Unknown keys are rejected.  The kernel
sub-document is shared by all kinds:

    {"family": "zero" | "fourier_smooth" | "riesz" | "biot_savart_2d",
     "dim": int, "domain": "torus" | "free",
     "coefficients": [...],          # fourier_smooth
     "exponent": s, "image_shells": n,  # riesz
     "cutoff": eps,                  # wrap with a truncation
     "width": delta}                 # wrap with a mollifier

Initial densities and test functions come from small named families (see
``density_from_config`` / ``psi_on_sites``), which keeps runs reproducible
from the config document alone.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import kernels as kn
from . import meanfield as mf
from . import oracle as orc
from .errors import ConfigError

_COMMON_KEYS = {"schema_version", "kind", "seed", "comment"}

_KIND_KEYS = {
    "simulate": {
        "order", "N", "d", "alpha", "dt", "t_end", "R", "kernel", "init",
        "observables", "record_times", "collision_policy", "r_min", "scheme",
    },
    "meanfield": {
        "model", "kernel", "alpha", "dt", "t_end", "grid", "init", "snapshot_every",
    },
    "oracle": {
        "order", "N", "kernel", "alpha", "T", "dt", "snap_stride", "stepping",
        "k", "psi", "init", "nmax", "grid",
    },
    "hierarchy": {"oracle_dir", "r_grid"},
    "chaos": {
        "order", "d", "kernel", "alpha", "dt", "t_end", "N_list", "R", "k_list",
        "psi", "init", "record_times", "pde", "scheme",
    },
    "report": {"run_dir"},
}


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_config(doc)


def validate_config(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("schema_version") != 1:
        raise ConfigError("config needs schema_version = 1")
    kind = doc.get("kind")
    if kind not in _KIND_KEYS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    allowed = _COMMON_KEYS | _KIND_KEYS[kind]
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys for {kind}: {sorted(unknown)}")
    return doc


def kernel_from_config(doc: dict) -> kn.KernelSpec:
    if not isinstance(doc, dict) or "family" not in doc:
        raise ConfigError("kernel config needs a 'family'")
    doc = dict(doc)
    family = doc.pop("family")
    domain = doc.pop("domain", "torus")
    cutoff = doc.pop("cutoff", None)
    width = doc.pop("width", None)
    try:
        if family == "zero":
            spec = kn.zero_kernel(doc.pop("dim", 1), domain)
        elif family == "fourier_smooth":
            spec = kn.fourier_kernel(doc.pop("coefficients"), domain)
        elif family == "riesz":
            spec = kn.riesz_kernel(
                doc.pop("exponent"), doc.pop("dim"), domain, doc.pop("image_shells", 3)
            )
        elif family == "biot_savart_2d":
            spec = kn.biot_savart_kernel(domain)
            doc.pop("dim", None)
        else:
            raise ConfigError(f"unknown kernel family {family!r}")
    except KeyError as exc:
        raise ConfigError(f"kernel config missing {exc}") from exc
    if doc:
        raise ConfigError(f"unknown kernel keys: {sorted(doc)}")
    if cutoff is not None:
        spec = kn.truncate(spec, cutoff)
    if width is not None:
        spec = kn.mollify(spec, width)
    return spec


# ---------------------------------------------------------------------------
# named density and test-function families
# ---------------------------------------------------------------------------


def density_from_config(doc: dict, grid) -> mf.DensityField:
    """Initial density on a SpatialGrid or PhaseGrid from a named family."""
    family = doc.get("family")
    if family == "uniform":
        return mf.uniform_density(grid)
    if family == "cos" and isinstance(grid, mf.SpatialGrid):
        amp = doc.get("amp", 0.5)
        mode = doc.get("mode", 1)
        if grid.dim == 1:
            x = grid.axis_coords()
            vals = 1.0 + amp * np.cos(2 * np.pi * mode * x)
        else:
            axes = np.meshgrid(*[grid.axis_coords()] * grid.dim, indexing="ij")
            vals = 1.0 + (amp / grid.dim) * sum(
                np.cos(2 * np.pi * mode * a) for a in axes
            )
        return mf.DensityField(grid, vals / (vals.sum() * grid.dz))
    if family == "cos_maxwell" and isinstance(grid, mf.PhaseGrid):
        amp = doc.get("amp", 0.3)
        mode = doc.get("mode", 1)
        sigma = doc.get("sigma", 1.0)
        x = grid.x_coords()
        v = grid.v_coords()
        vals = np.outer(
            1.0 + amp * np.cos(2 * np.pi * mode * x),
            np.exp(-(v**2) / (2 * sigma**2)),
        )
        return mf.DensityField(grid, vals / (vals.sum() * grid.dz))
    raise ConfigError(f"unknown init family {family!r} for {type(grid).__name__}")


def _fourier_1d(doc: dict, x: np.ndarray) -> np.ndarray:
    out = np.full_like(x, float(doc.get("const", 0.0)))
    for m, c in enumerate(doc.get("cos", []), start=1):
        out = out + c * np.cos(2 * np.pi * m * x)
    for m, c in enumerate(doc.get("sin", []), start=1):
        out = out + c * np.sin(2 * np.pi * m * x)
    return out


def psi_spatial(doc: dict, positions: np.ndarray) -> np.ndarray:
    """Test function on spatial positions (N, d)."""
    family = doc.get("family")
    if family == "fourier" and positions.shape[1] == 1:
        return _fourier_1d(doc, positions[:, 0])
    if family == "fourier2d" and positions.shape[1] == 2:
        kx, ky = doc.get("kx", 1), doc.get("ky", 0)
        amp = doc.get("amp", 1.0)
        phase = doc.get("phase", 0.0)
        return amp * np.cos(
            2 * np.pi * (kx * positions[:, 0] + ky * positions[:, 1]) + phase
        )
    raise ConfigError(f"unknown psi family {family!r} for spatial positions")


def psi_phase(doc: dict, positions: np.ndarray, velocities: np.ndarray) -> np.ndarray:
    family = doc.get("family")
    if family == "fourier_gauss":
        vc = doc.get("v_center", 0.0)
        vw = doc.get("v_width", 1.0)
        fx = _fourier_1d(doc, positions[:, 0])
        return fx * np.exp(-((velocities[:, 0] - vc) ** 2) / (2 * vw**2))
    raise ConfigError(f"unknown psi family {family!r} for phase positions")


def psi_on_sites(doc: dict, grid: orc.OneBodyGrid) -> np.ndarray:
    """Test function sampled on the flattened one-body sites of a grid."""
    if grid.order == "first":
        x = (np.arange(grid.cells_x) * grid.dx)[:, None]
        return psi_spatial(doc, x)
    x = np.repeat(np.arange(grid.cells_x) * grid.dx, grid.cells_v)[:, None]
    v = grid.site_v()[:, None]
    return psi_phase(doc, x, v)


def meanfield_grid_from_config(doc: dict):
    if "cells_v" in doc:
        return mf.PhaseGrid(
            cells_x=doc["cells_x"],
            cells_v=doc["cells_v"],
            v_halfwidth=doc["v_halfwidth"],
        )
    return mf.SpatialGrid(dim=doc.get("d", 1), cells=doc["cells"])


def oracle_grid_from_config(order: str, doc: dict) -> orc.OneBodyGrid:
    if order == "second":
        return orc.OneBodyGrid(
            order="second",
            cells_x=doc["cells_x"],
            cells_v=doc["cells_v"],
            v_halfwidth=doc["v_halfwidth"],
        )
    return orc.OneBodyGrid(order="first", cells_x=doc["cells_x"])


def oracle_init_on_sites(doc: dict, grid: orc.OneBodyGrid) -> np.ndarray:
    """Initial one-body weight on flattened sites from a named family."""
    family = doc.get("family")
    if grid.order == "first":
        x = np.arange(grid.cells_x) * grid.dx
        if family == "uniform":
            vals = np.ones_like(x)
        elif family == "cos":
            vals = 1.0 + doc.get("amp", 0.5) * np.cos(
                2 * np.pi * doc.get("mode", 1) * x
            ) + doc.get("sin_amp", 0.0) * np.sin(2 * np.pi * x)
        else:
            raise ConfigError(f"unknown init family {family!r}")
        return vals / (vals.sum() * grid.dz)
    if family == "cos_maxwell":
        x = np.arange(grid.cells_x) * grid.dx
        v = -grid.v_halfwidth + np.arange(grid.cells_v) * grid.dv
        vals = np.outer(
            1.0 + doc.get("amp", 0.3) * np.cos(2 * np.pi * doc.get("mode", 1) * x),
            np.exp(-(v**2) / (2 * doc.get("sigma", 1.0) ** 2)),
        ).ravel()
        return vals / (vals.sum() * grid.dz)
    raise ConfigError(f"unknown init family {family!r}")
