"""Experiment runners behind the command-line interface.

Five experiment kinds, all driven by one validated JSON document and writing
CSV files plus a manifest into a run directory:

* ``simulate``  -- particle ensembles with named observers;
* ``meanfield`` -- kinetic or first-order solver with diagnostics;
* ``oracle``    -- joint-evolution run with the full invariant suite, ladder
  snapshots persisted for downstream consumption;
* ``hierarchy`` -- residuals, generating function and contraction windows
  computed from a persisted oracle run directory;
* ``chaos``     -- Monte Carlo convergence study against the grid reference,
  with weighted rate fits.

Estimators over replicas use the symmetrized k-fold product of a test
function, an unbiased probe of the k-particle marginal.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np

from . import config as cf
from . import correlations as ca
from . import hierarchy as hr
from . import io
from . import meanfield as mf
from . import oracle as orc
from . import particles as ps
from .errors import ConfigError

# ---------------------------------------------------------------------------
# estimators and observers
# ---------------------------------------------------------------------------


def symmetrized_moment(values, k: int) -> float:
    """Average of all k-fold distinct products of the given per-particle values."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if k > n:
        raise ConfigError(f"product order {k} exceeds particle count {n}")
    e = np.zeros(k + 1)
    e[0] = 1.0
    for v in values:
        for j in range(k, 0, -1):
            e[j] += v * e[j - 1]
    return float(e[k] / math.comb(n, k))


def moment_observer(psi_doc: dict, k: int):
    def observe(state: ps.ParticleState) -> float:
        if state.order == "second":
            vals = cf.psi_phase(psi_doc, state.positions, state.velocities)
        else:
            vals = cf.psi_spatial(psi_doc, state.positions)
        return symmetrized_moment(vals, k)

    return observe


def grid_moment(psi_doc: dict, field: mf.DensityField) -> float:
    """Reference moment of a grid density, midpoint-evaluated per cell.

    Cell-uniform sampling of the discretized density makes the cell average
    of the test function the honest reference; the midpoint value matches it
    to second order in the cell size.
    """
    grid = field.grid
    if isinstance(grid, mf.PhaseGrid):
        x = grid.x_coords() + grid.dx / 2
        v = grid.v_coords() + grid.dv / 2
        X, V = np.meshgrid(x, v, indexing="ij")
        pts = np.stack([X.ravel()], axis=-1)
        vel = np.stack([V.ravel()], axis=-1)
        psi = cf.psi_phase(psi_doc, pts, vel).reshape(grid.shape)
    else:
        axes = [grid.axis_coords() + grid.dx / 2] * grid.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        psi = cf.psi_spatial(psi_doc, pts).reshape(grid.shape)
    return float(np.sum(psi * field.values) * grid.dz)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def run_simulate(doc: dict, outdir: Path) -> dict:
    kernel = cf.kernel_from_config(doc["kernel"])
    d = doc.get("d", kernel.dim)
    cfg = ps.SimConfig(
        N=doc["N"],
        d=d,
        order=doc["order"],
        alpha=doc.get("alpha", 0.0),
        dt=doc["dt"],
        t_end=doc["t_end"],
        scheme=doc.get("scheme", "auto"),
        seed=doc.get("seed", 0),
        collision_policy=doc.get("collision_policy", "clamp"),
        r_min=doc.get("r_min", 1e-8),
    )
    grid = _sim_grid(doc, cfg)
    f0 = cf.density_from_config(doc["init"], grid)
    observers = {
        ob["name"]: moment_observer(ob["psi"], ob.get("k", 1))
        for ob in doc.get("observables", [])
    }
    record = doc.get("record_times", [0.0, cfg.t_end])
    result = ps.run_ensemble(cfg, kernel, f0, doc.get("R", 1), observers, record)
    rows = [(r, t, name, v) for (r, t, name, v) in result.rows]
    io.write_csv(outdir / "trajectories.csv", ("replica", "t", "observable_name", "value"), rows)
    return {"incidents": {"collisions": result.incidents}}


def _sim_grid(doc: dict, cfg: ps.SimConfig):
    if cfg.order == "second":
        g = doc["init"].get("grid", {"cells_x": 64, "cells_v": 64, "v_halfwidth": 4.0})
        return mf.PhaseGrid(
            cells_x=g["cells_x"], cells_v=g["cells_v"], v_halfwidth=g["v_halfwidth"]
        )
    g = doc["init"].get("grid", {"cells": 64})
    return mf.SpatialGrid(dim=cfg.d, cells=g["cells"])


# ---------------------------------------------------------------------------
# meanfield
# ---------------------------------------------------------------------------


def run_meanfield(doc: dict, outdir: Path) -> dict:
    kernel = cf.kernel_from_config(doc["kernel"])
    grid = cf.meanfield_grid_from_config(doc["grid"])
    field = cf.density_from_config(doc["init"], grid)
    alpha, dt = doc.get("alpha", 0.0), doc["dt"]
    steps = round(doc["t_end"] / dt)
    every = doc.get("snapshot_every", max(1, steps // 10))
    phase = isinstance(grid, mf.PhaseGrid)
    rows = []
    outdir = Path(outdir)

    def record(q, field):
        lam = np.nan
        if phase:
            lam = mf.coupling_norm(field, kernel)
            io.write_phase_snapshot(
                outdir / "fields" / f"f{q:04d}.bin",
                grid.cells_x, grid.cells_v, grid.v_halfwidth, field.time, field.values,
            )
        else:
            if grid.dim == 1:
                lam = mf.symmetrized_coupling_norm(field, kernel)
            io.write_spatial_snapshot(
                outdir / "fields" / f"f{q:04d}.bin", grid.dim, grid.cells, field.time, field.values
            )
        rows.append(
            (
                field.time,
                field.mass(),
                mf.fisher_information(field),
                lam,
                mf.force_gradient_sup(field, kernel),
            )
        )

    record(0, field)
    q = 1
    for s in range(steps):
        if phase:
            field = mf.vlasov_step(field, kernel, alpha, dt)
        else:
            field = mf.mckean_step(field, kernel, alpha, dt)
        if (s + 1) % every == 0 or s + 1 == steps:
            record(q, field)
            q += 1
    io.write_csv(
        outdir / "diagnostics.csv",
        ("t", "mass", "fisher", "lambda_f", "force_grad_sup"),
        rows,
    )
    notes = {}
    if phase:
        notes["boundary_mass"] = mf.velocity_boundary_mass(field)
    return {"incidents": {"clamped_cells": field.clamp_incidents}, "notes": notes}


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def run_oracle_experiment(doc: dict, outdir: Path) -> dict:
    kernel = cf.kernel_from_config(doc["kernel"])
    grid = cf.oracle_grid_from_config(doc["order"], doc["grid"])
    cfg = orc.OracleConfig(
        grid=grid,
        kernel=kernel,
        alpha=doc.get("alpha", 0.0),
        N=doc["N"],
        T=doc["T"],
        dt=doc["dt"],
        snap_stride=doc.get("snap_stride", 1),
        stepping=doc.get("stepping", "auto"),
        k=doc.get("k", 1),
    )
    f0 = cf.oracle_init_on_sites(doc["init"], grid)
    psi = cf.psi_on_sites(doc["psi"], grid)
    nmax = doc.get("nmax", min(4, cfg.N))
    run = orc.run_oracle(cfg, f0, psi)
    series = orc.extract_correlation_series(run, nmax)
    duality = orc.check_duality(run)
    bounds = orc.check_norm_bounds(series, float(np.abs(psi).max()), cfg.k, cfg.N)
    rep = orc.dual_representation_residual(run)

    outdir = Path(outdir)
    rows = []
    psi_sup = float(np.abs(psi).max())
    for q, t in enumerate(run.times):
        lad = series[q]
        norms = lad.norms()
        for n in range(nmax + 1):
            bound = psi_sup**cfg.k / math.sqrt(math.comb(cfg.N, n))
            rows.append(
                (
                    t,
                    duality["deviation"],
                    run.mass_errors[q],
                    run.sup_margins[q],
                    n,
                    norms[n],
                    bound,
                    bound - norms[n],
                )
            )
        for n in range(nmax + 1):
            io.write_tensor_snapshot(
                outdir / "ladders" / f"q{q:04d}_n{n}.bin",
                n, grid.M, grid.dz, t, lad.tensors[n].values,
            )
        io.write_tensor_snapshot(
            outdir / "weights" / f"q{q:04d}.bin", 1, grid.M, grid.dz, t, run.f_path[q]
        )
    io.write_csv(
        outdir / "oracle.csv",
        ("t", "duality_dev", "mass_err", "maxprin_margin", "n", "corr_norm", "bound", "margin"),
        rows,
    )
    suite = oracle_suite_report(run, series, rep, duality, bounds, psi)
    import json

    (outdir / "suite.json").write_text(json.dumps(suite, indent=2, sort_keys=True) + "\n")
    return {
        "incidents": {},
        "notes": {
            "nmax": nmax,
            "times": [float(t) for t in run.times],
            "stepping": cfg.resolved_stepping(),
            "suite_pass": all(c["pass"] for c in suite.values()),
        },
    }


def oracle_suite_report(run, series, rep, duality, bounds, psi) -> dict:
    """Machine-readable pass/fail with margins for every oracle invariant."""
    cfg = run.config
    expm = cfg.resolved_stepping() == "matrix_exponential"
    checks = {}

    def add(name, value, threshold, sense="<="):
        ok = value <= threshold if sense == "<=" else value >= threshold
        checks[name] = {
            "value": float(value),
            "threshold": float(threshold),
            "sense": sense,
            "pass": bool(ok),
        }

    add("mass_error", float(run.mass_errors.max()), 1e-12 if expm else 1e-9)
    add("density_min", float(run.min_density), -1e-10, sense=">=")
    add("duality_deviation", duality["deviation"], 1e-10)
    if duality["flow_error"] is not None:
        add("duality_flow_error", duality["flow_error"], 1e-10 if expm else 1.0)
    add("sup_margin", float(run.sup_margins.min()), -1e-12 if expm else -1e-9, sense=">=")
    worst_orth = max(lad.orthogonality_residual() for lad in series)
    add("ladder_orthogonality", worst_orth, 1e-12)
    add("apriori_margin", float(bounds["margins"].min()), 0.0, sense=">=")
    for ks, margins in bounds["mixed_margins"].items():
        finite = margins[np.isfinite(margins)]
        if finite.size:
            add(f"mixed_margin_k{ks}", float(finite.min()), 0.0, sense=">=")
    wT = run.weight_at(len(run.times) - 1)
    worst_final = 0.0
    for n in range(series[-1].nmax + 1):
        closed = ca.closed_form_final_correlations(psi, wT, cfg.N, cfg.k, n)
        worst_final = max(
            worst_final,
            float(np.abs(series[-1].tensors[n].values - closed.values).max()),
        )
    add("final_ladder_vs_closed_form", worst_final, 1e-12)
    add("dual_representation_residual", rep["residual"], np.inf)
    add("marginal_vs_correlation_gap", rep["marginal_vs_correlation_gap"], 1e-11)
    coup = orc.pair_coupling(cfg.grid, cfg.kernel, run.f_path[0])
    r2, r1 = coup.cancellation_residuals()
    add("coupling_zero_mean_second_arg", r2, 1e-13)
    add("coupling_zero_mean_first_arg", r1, 1e-13)
    return checks


# ---------------------------------------------------------------------------
# hierarchy (consumes an oracle run directory)
# ---------------------------------------------------------------------------


def _load_oracle_dir(oracle_dir: Path):
    manifest = io.read_manifest(oracle_dir)
    if manifest["kind"] != "oracle":
        raise ConfigError(f"{oracle_dir} does not hold an oracle run")
    doc = manifest["config"]
    grid = cf.oracle_grid_from_config(doc["order"], doc["grid"])
    kernel = cf.kernel_from_config(doc["kernel"])
    times = np.array(manifest["notes"]["times"])
    nmax = manifest["notes"]["nmax"]
    Q = len(times)
    f_path = np.stack(
        [io.read_snapshot(Path(oracle_dir) / "weights" / f"q{q:04d}.bin")[2] for q in range(Q)]
    )
    ladders = []
    for q in range(Q):
        ladders.append(
            {
                n: io.read_snapshot(Path(oracle_dir) / "ladders" / f"q{q:04d}_n{n}.bin")[2]
                for n in range(nmax + 1)
            }
        )
    return manifest, doc, grid, kernel, times, f_path, ladders


def run_hierarchy_experiment(doc: dict, outdir: Path) -> dict:
    oracle_dir = Path(doc["oracle_dir"])
    manifest, odoc, grid, kernel, times, f_path, ladders = _load_oracle_dir(oracle_dir)
    alpha, N, k = odoc.get("alpha", 0.0), odoc["N"], odoc.get("k", 1)
    psi = cf.psi_on_sites(odoc["psi"], grid)
    nmax = max(ladders[0])

    report = hr.residuals_from_ladders(times, f_path, ladders, grid, kernel, alpha, N)
    lam = np.array(
        [orc.pair_coupling(grid, kernel, f_path[q]).l2_weighted_norm() for q in range(len(times))]
    )
    scale = np.array([math.sqrt(math.comb(N, n)) for n in range(nmax + 1)])
    rnorms = np.empty((len(times), nmax + 1))
    for q in range(len(times)):
        w = orc.pair_coupling(grid, kernel, f_path[q]).weight
        for n in range(nmax + 1):
            rnorms[q, n] = scale[n] * ca.weighted_l2_norm(
                ca.NTensor(space=w.space, values=ladders[q][n]), w
            )
    sup_bound = float(np.abs(psi).max()) ** k
    gf = hr.generating_function(times, rnorms, sup_bound=sup_bound)
    windows = hr.contraction_windows(times, lam)

    rows = []
    r_cols = [f"Z_r{int(round(100 * r)):03d}" for r in gf.r_grid]
    for q, t in enumerate(times):
        for n in range(nmax + 1):
            rows.append(
                (t, n, report.residual[q, n], report.projected[q, n], lam[q])
                + tuple(gf.values[q])
            )
    io.write_csv(
        Path(outdir) / "hierarchy.csv",
        ("t", "n", "residual", "projected_residual", "lambda_f", *r_cols),
        rows,
    )
    io.write_csv(
        Path(outdir) / "windows.csv",
        ("t_start", "t_end", "integral"),
        [w for w in windows.windows],
    )
    return {
        "incidents": {},
        "notes": {
            "cauchy_schwarz_gap": hr.cauchy_schwarz_gap(gf),
            "windows_cover": windows.covers,
            "window_count": len(windows.windows),
            "tail_bound": [float(t) for t in gf.tail_bound],
            "oracle_run": str(oracle_dir),
        },
    }


# ---------------------------------------------------------------------------
# chaos
# ---------------------------------------------------------------------------


def _pde_reference(doc: dict, kernel, record_times, cells_scale=1):
    pde = doc["pde"]
    order = doc["order"]
    alpha = doc.get("alpha", 0.0)
    dt = pde["dt"] * cells_scale
    if order == "second":
        grid = mf.PhaseGrid(
            cells_x=pde["cells_x"] // cells_scale,
            cells_v=pde["cells_v"] // cells_scale,
            v_halfwidth=pde["v_halfwidth"],
        )
        step = lambda f: mf.vlasov_step(f, kernel, alpha, dt)
    else:
        grid = mf.SpatialGrid(dim=doc["d"], cells=pde["cells"] // cells_scale)
        step = lambda f: mf.mckean_step(f, kernel, alpha, dt)
    field = cf.density_from_config(doc["init"], grid)
    refs = {}
    t = 0.0
    remaining = sorted(record_times)
    if remaining and abs(remaining[0]) < 1e-12:
        refs[remaining.pop(0)] = grid_moment(doc["psi"], field)
    while remaining:
        field = step(field)
        t += dt
        if abs(t - remaining[0]) < dt / 2:
            refs[remaining.pop(0)] = grid_moment(doc["psi"], field)
    return refs, field


def run_chaos_experiment(doc: dict, outdir: Path) -> dict:
    kernel = cf.kernel_from_config(doc["kernel"])
    record = sorted(doc["record_times"])
    refs_fine, _ = _pde_reference(doc, kernel, record, cells_scale=1)
    refs_coarse, _ = _pde_reference(doc, kernel, record, cells_scale=2)
    ref_delta = max(abs(refs_fine[t] - refs_coarse[t]) for t in record)
    # the transport scheme is first order, so the two-grid extrapolation
    # removes the leading reference bias; the raw two-grid gap is reported
    refs = {t: 2.0 * refs_fine[t] - refs_coarse[t] for t in record}

    order, d = doc["order"], doc["d"]
    k_list = doc.get("k_list", [1])
    seed = doc.get("seed", 0)
    exp_id = io.run_hash(doc, seed)
    sample_grid = (
        mf.PhaseGrid(
            cells_x=doc["pde"]["cells_x"],
            cells_v=doc["pde"]["cells_v"],
            v_halfwidth=doc["pde"]["v_halfwidth"],
        )
        if order == "second"
        else mf.SpatialGrid(dim=d, cells=doc["pde"]["cells"])
    )
    f0 = cf.density_from_config(doc["init"], sample_grid)
    observers = {f"moment_k{k}": moment_observer(doc["psi"], k) for k in k_list}

    rows = []
    incidents = 0
    errors = {k: np.zeros((len(record), len(doc["N_list"]))) for k in k_list}
    stderrs = {k: np.zeros((len(record), len(doc["N_list"]))) for k in k_list}
    header = (
        "experiment", "t", "N", "k", "estimator", "mc_stderr", "reference",
        "weak_error", "notes",
    )
    try:
        for jN, N in enumerate(doc["N_list"]):
            cfg = ps.SimConfig(
                N=N,
                d=d,
                order=order,
                alpha=doc.get("alpha", 0.0),
                dt=doc["dt"],
                t_end=record[-1],
                scheme=doc.get("scheme", "auto"),
                seed=seed,
            )
            res = ps.run_ensemble(cfg, kernel, f0, doc["R"], observers, record)
            incidents += res.incidents
            for k in k_list:
                for it, t in enumerate(record):
                    est, se = res.mean_stderr(f"moment_k{k}", t)
                    ref = refs[t] ** k
                    err = abs(est - ref)
                    rows.append((exp_id, t, N, k, est, se, ref, err, ""))
                    errors[k][it, jN] = err
                    stderrs[k][it, jN] = se
    except BaseException:
        # keep whatever completed; an interrupted study is still data
        if rows:
            io.write_csv(Path(outdir) / "results.csv", header, rows)
        raise
    io.write_csv(Path(outdir) / "results.csv", header, rows)
    fit_rows = []
    for k in k_list:
        slopes, errs = hr.fit_rate_profile(doc["N_list"], errors[k], stderrs[k])
        for it, t in enumerate(record):
            fit_rows.append((t, k, slopes[it], errs[it]))
    io.write_csv(
        Path(outdir) / "ratefits.csv", ("t", "k", "slope", "slope_stderr"), fit_rows
    )
    return {
        "incidents": {"collisions": incidents},
        "notes": {"reference_refinement_delta": ref_delta, "experiment": exp_id},
    }


def fit_rate(results_csv) -> list:
    """Weighted rate fits recomputed from a persisted results file."""
    cols = io.read_csv(results_csv)
    ts = sorted(set(cols["t"]))
    ks = sorted(set(cols["k"]))
    out = []
    for k in ks:
        for t in ts:
            sel = [
                i
                for i in range(len(cols["t"]))
                if cols["t"][i] == t and cols["k"][i] == k
            ]
            Ns = np.array([cols["N"][i] for i in sel])
            err = np.array([cols["weak_error"][i] for i in sel])
            se = np.array([cols["mc_stderr"][i] for i in sel])
            order = np.argsort(Ns)
            slopes, errs = hr.fit_rate_profile(
                Ns[order], err[order][None, :], se[order][None, :]
            )
            out.append({"t": t, "k": k, "slope": float(slopes[0]), "stderr": float(errs[0])})
    return out


# ---------------------------------------------------------------------------
# report (text summary of a run directory)
# ---------------------------------------------------------------------------


def run_report(doc: dict, outdir: Path) -> dict:
    run_dir = Path(doc["run_dir"])
    manifest = io.read_manifest(run_dir)
    lines = [
        f"run kind:       {manifest['kind']}",
        f"run hash:       {manifest['run_hash']}",
        f"package:        {manifest['package_version']}",
        f"wall time:      {manifest['wall_time_s']:.2f} s",
        f"files:          {len(manifest['files'])}",
    ]
    if (run_dir / "suite.json").exists():
        import json

        suite = json.loads((run_dir / "suite.json").read_text())
        for name in sorted(suite):
            c = suite[name]
            status = "PASS" if c["pass"] else "FAIL"
            lines.append(
                f"  {status}  {name}: {c['value']:.3e} {c['sense']} {c['threshold']:.3e}"
            )
    text = "\n".join(lines) + "\n"
    (Path(outdir) / "report.txt").write_text(text)
    print(text, end="")
    return {"incidents": {}, "notes": {"source": str(run_dir)}}


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_RUNNERS = {
    "simulate": run_simulate,
    "meanfield": run_meanfield,
    "oracle": run_oracle_experiment,
    "hierarchy": run_hierarchy_experiment,
    "chaos": run_chaos_experiment,
    "report": run_report,
}


def run_experiment(doc: dict, outdir, seed=None) -> dict:
    doc = cf.validate_config(dict(doc))
    if seed is not None:
        doc["seed"] = int(seed)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    extra = _RUNNERS[doc["kind"]](doc, outdir)
    wall = time.perf_counter() - t0
    return io.write_manifest(
        outdir,
        doc["kind"],
        doc,
        doc.get("seed", 0),
        wall,
        incidents=extra.get("incidents"),
        notes=extra.get("notes"),
    )
