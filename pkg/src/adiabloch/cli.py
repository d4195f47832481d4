"""Command-line entry point: one configuration file per run.

``adiabloch CONFIG [--set section.key=value ...]`` reads the run
configuration, dispatches on ``run.subcommand`` and writes a CSV table and
a JSON summary.  Failures print a JSON error object on stderr and exit with
2 (configuration), 3 (numerical) or 4 (I/O).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .config import RunSpec, parse_config
from .dynamics import bloch_oscillation_sweep
from .errors import AdiaBlochError, GapClosedError, OutputError
from .fiber import band_structure, check_gap, make_basis
from .geometry import berry_connection, berry_curvature, fix_gauge, frame_from_bands, zak_phase
from .lattice import bz_grid, make_lattice
from .magnetic import flux_spectrum, magnetic_band_chern, validate_symbol
from .potential import potential_from_coeffs, sliding_cosine_pump, static_path
from .pump import (ksv_polarization, propagated_polarization, pump_chern, snapshot_projectors,
                   theta_field)


# --- serialisation -------------------------------------------------------------------

def fmt(x) -> str:
    """Float with 17 significant digits; integers stay integers."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}", path=path) from None


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def json_text(summary: dict) -> str:
    return json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n"


# --- pipelines -----------------------------------------------------------------------

def _lattice_and_potential(spec: RunSpec):
    lat = make_lattice(spec.basis)
    V = potential_from_coeffs(lat, spec.potential["coefficients"]) if spec.potential else None
    return lat, V


def _header(prefix, n):
    return [f"{prefix}_{i}" for i in range(n)]


def _bands(spec: RunSpec):
    lat, V = _lattice_and_potential(spec)
    num = spec.numeric
    grid = bz_grid(lat, num["grid"])
    basis = make_basis(lat, num["cutoff"])
    bd = band_structure(lat, V, grid, basis, num["n_bands"], spin_orbit=spec.potential["spin_orbit"],
                        workers=spec.run["threads"])
    d, n = lat.dim, bd.n_bands
    header = [f"k_{i + 1}" for i in range(d)] + _header("E", n)
    rows = [list(k) + list(e) for k, e in zip(grid.points, bd.energies)]
    summary = {"cutoff": num["cutoff"], "n_plane_waves": basis.size, "grid": list(grid.sizes),
               "n_bands": n, "spin_orbit": spec.potential["spin_orbit"]}
    w0, wm = num["window"]
    if w0 + wm < n:
        summary["window"] = [w0, wm]
        summary["window_gap"] = check_gap(bd, (w0, wm))
    return header, rows, summary


def _berry(spec: RunSpec):
    lat, V = _lattice_and_potential(spec)
    num = spec.numeric
    grid = bz_grid(lat, num["grid"])
    basis = make_basis(lat, num["cutoff"])
    bd = band_structure(lat, V, grid, basis, num["n_bands"], spin_orbit=spec.potential["spin_orbit"],
                        workers=spec.run["threads"])
    band = num["window"][0]
    frame = frame_from_bands(bd, (band, 1))
    zak = [zak_phase(frame, axis) for axis in range(lat.dim)]
    summary = {"band": band, "zak_phases": zak, "cutoff": num["cutoff"], "grid": list(grid.sizes)}
    if lat.dim == 2:
        bf = berry_curvature(frame)
        summary.update(chern=bf.chern, residual=bf.residual)
        F = bf.curvature.reshape(-1)
        header = ["k_1", "k_2", "F"]
        rows = [list(k) + [f] for k, f in zip(grid.points, F)]
    else:
        A = berry_connection(fix_gauge(frame))
        summary.update(chern=None, residual=None)
        header = [f"k_{i + 1}" for i in range(lat.dim)] + [f"A_{i + 1}" for i in range(lat.dim)]
        rows = [list(k) + list(a) for k, a in zip(grid.points, A.reshape(grid.n_points, -1))]
    return header, rows, summary


def _butterfly(spec: RunSpec):
    num = spec.numeric
    symbol = validate_symbol(spec.potential["coefficients"])
    sizes = tuple(num["sizes"])
    rows, cherns = [], {}
    for flux in spec.flux_list:
        fs = flux_spectrum(symbol, flux, sizes)
        rows.extend([flux.p, flux.q, flux.alpha, lo, hi] for lo, hi in fs.intervals)
        if num["chern"]:
            per_band = []
            for band in range(flux.q):
                try:
                    per_band.append(magnetic_band_chern(symbol, flux, band, sizes))
                except GapClosedError:
                    per_band.append(None)
            cherns[f"{flux.p}/{flux.q}"] = per_band
    summary = {"n_fluxes": len(spec.flux_list), "sizes": list(sizes)}
    if num["chern"]:
        summary["cherns"] = cherns
    return ["p", "q", "alpha", "interval_lo", "interval_hi"], rows, summary


def _dynamics(spec: RunSpec):
    lat, V = _lattice_and_potential(spec)
    num, dyn = spec.numeric, spec.dynamics
    res = bloch_oscillation_sweep(
        lat, V, num["epsilons"], band=dyn["band"], force=dyn["force"][0], horizon=num["horizon"],
        cells=dyn["cells"], n_y=dyn["n_y"], cutoff=num["cutoff"], width=dyn["width"], k0=dyn["k0"],
        dt_micro=dyn["dt_micro"], record_every=dyn["record_every"], sc_dt=num["dt"],
    )
    d = lat.dim
    header = (["epsilon", "s"] + [f"r_{i + 1}" for i in range(d)] + [f"k_{i + 1}" for i in range(d)]
              + [f"x_mean_{i + 1}" for i in range(d)] + [f"k_mean_{i + 1}" for i in range(d)]
              + ["norm", "energy"])
    rows = []
    for eps, obs, (t0, _) in zip(res.epsilons, res.observables, res.trajectories):
        for i, s in enumerate(obs.s):
            rows.append([eps, s, *t0.r[i], *t0.k[i], *(eps * obs.x_mean[i]), *obs.k_mean[i],
                         obs.norm[i], obs.energy[i]])
    summary = {"epsilons": list(res.epsilons), "errors": list(res.errors0),
               "errors_order1": list(res.errors1), "fitted_order": res.fitted_order,
               "band": dyn["band"]}
    return header, rows, summary


def _pump(spec: RunSpec):
    lat = make_lattice(spec.basis)
    num, p = spec.numeric, spec.pump
    if p["kind"] == "static":
        V = potential_from_coeffs(lat, spec.potential["coefficients"])
        path = static_path(V, p["period"], p["n_occupied"], n_snapshots=p["n_snapshots"] + 1)
    else:
        path = sliding_cosine_pump(lat, p["amplitude"], p["period"], p["n_snapshots"], p["n_occupied"],
                                   p["direction"], ramp=p["ramp"], interpolation=p["interpolation"])
    grid = bz_grid(lat, num["grid"])
    basis = make_basis(lat, num["cutoff"])
    pf = snapshot_projectors(path, grid, basis=basis, n_times=p["n_times"])
    tf = theta_field(pf, p["order"])
    ksv = ksv_polarization(tf)
    J_ksv = tf.current()
    chern = pump_chern(pf) if lat.dim == 1 else None
    d = lat.dim
    header = ["epsilon", "t"] + [f"J_eps_{i + 1}" for i in range(d)] + [f"J_ksv_{i + 1}" for i in range(d)]
    rows, dPs, errors = [], [], []
    for eps in num["epsilons"]:
        ev = propagated_polarization(path, eps, grid, basis=basis, dt=num["dt"])
        # node currents interpolated onto the step times (periodic in t)
        Jk = np.stack([np.interp(ev.times, tf.times, J_ksv[:, i], period=path.period) for i in range(d)],
                      axis=1)
        rows.extend([eps, t, *je, *jk] for t, je, jk in zip(ev.times, ev.current, Jk))
        dPs.append(ev.dP)
        errors.append(float(np.linalg.norm(ev.dP - ksv.raw)))
    ratios = [a / b if b > 0 else None for a, b in zip(errors, errors[1:])]
    summary = {"dP_ksv": ksv.raw, "quanta_ksv": ksv.quanta, "pump_chern": chern, "epsilons": num["epsilons"],
               "dP_eps": dPs, "fermi_gap": pf.gap,
               "convergence": {"errors": errors, "ratios": ratios}}
    return header, rows, summary


PIPELINES = {"bands": _bands, "berry": _berry, "butterfly": _butterfly, "dynamics": _dynamics, "pump": _pump}


def run(spec: RunSpec) -> dict:
    """Execute a validated run and write its CSV and JSON artifacts; returns the summary."""
    header, rows, summary = PIPELINES[spec.subcommand](spec)
    summary = {"version": __version__, "subcommand": spec.subcommand, "spec_hash": spec.digest, **summary}
    csv_path = spec.run["csv"] or f"{spec.subcommand}.csv"
    json_path = spec.run["json"] or f"{spec.subcommand}.json"
    write_atomic(csv_path, csv_text(header, rows))
    summary["csv"] = csv_path
    write_atomic(json_path, json_text(summary))
    return summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adiabloch", description=__doc__.splitlines()[0])
    ap.add_argument("config", help="run configuration file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override one configuration value (repeatable)")
    ap.add_argument("--chern", action="store_true", help="butterfly: add per-band Chern numbers")
    ap.add_argument("--check", action="store_true", help="validate the configuration and exit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def _fail(err: AdiaBlochError) -> int:
    print(json.dumps(err.to_dict(), sort_keys=True, default=str), file=sys.stderr)
    return err.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except (OSError, UnicodeDecodeError) as exc:
            raise OutputError(f"cannot read {args.config}: {exc}", path=args.config) from None
        overrides = list(args.overrides) + (["numeric.chern=True"] if args.chern else [])
        spec = parse_config(text, overrides)
        if args.check:
            print(json.dumps({"ok": True, "subcommand": spec.subcommand, "spec_hash": spec.digest}))
            return 0
        summary = run(spec)
    except AdiaBlochError as err:
        return _fail(err)
    except (ValueError, np.linalg.LinAlgError) as exc:
        return _fail(AdiaBlochError(f"numerical failure: {exc}"))
    print(json.dumps({"ok": True, "csv": summary["csv"], "spec_hash": summary["spec_hash"]}))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
