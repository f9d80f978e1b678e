"""Command-line front end.

Subcommands: ``correlation``, ``simulate``, ``steady-state``,
``drude-verify``, ``heom-benchmark``, ``blp-scan``.  Every command reads a
config file in a flat ``key = value`` format with ``[section]`` headers,
writes CSV tables plus a JSON metadata sidecar into the output directory,
and is deterministic for a fixed config and seed.  Unknown config keys are
rejected (exit code 2, naming the key).

Config grammar (informal)::

    [section]
    key = value        ; value is a float, int, bool, string,
    other = 1,2,3      ; comma list of floats,
    grid = 0.2:8:6     ; or lo:hi:n for a uniform grid

See the ``recipes/`` directory shipped with the package for complete
examples covering each command.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import bath as bath_mod
from . import expbath, heom, nonmarkov, tcl
from .dynamics import Trajectory, propagate, steady_state
from .system import (DqdParams, SpinBosonParams, bloch_from_density,
                     density_from_bloch, dqd_to_sbm, free_generator)

__all__ = ["main", "ConfigError"]


class ConfigError(Exception):
    pass


def _parse_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if ":" in raw and raw.count(":") == 2:
        lo, hi, n = raw.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    if "," in raw:
        return np.array([float(tok) for tok in raw.split(",") if tok.strip()])
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


# allowed keys per section, per command; "*" marks sections shared verbatim
_MODEL_KEYS = {"omega", "theta", "epsilon", "t_c", "lam", "beta", "temperature"}
_BATH_KEYS = {"kind", "gamma", "lambda_c", "omega_c", "omega_max", "file"}
_TCL_KEYS = {"backend", "n_matsubara", "points", "sat_tol", "asymptotic_method",
             "panel_points", "panel_ratio"}
_SCHEMAS = {
    "correlation": {"bath": _BATH_KEYS, "model": {"beta", "temperature"},
                    "correlation": {"t_max", "samples"}, "output": {"prefix"}},
    "simulate": {"model": _MODEL_KEYS, "bath": _BATH_KEYS, "tcl": _TCL_KEYS,
                 "simulate": {"t_final", "samples", "v0", "orders"},
                 "output": {"prefix"}},
    "steady-state": {"model": _MODEL_KEYS, "bath": _BATH_KEYS, "tcl": _TCL_KEYS,
                     "output": {"prefix"}},
    "drude-verify": {"model": _MODEL_KEYS, "bath": _BATH_KEYS, "tcl": _TCL_KEYS,
                     "drude-verify": {"ladder", "slope_max", "entry_tol"},
                     "output": {"prefix"}},
    "heom-benchmark": {"model": _MODEL_KEYS, "bath": _BATH_KEYS, "tcl": _TCL_KEYS,
                       "heom": {"n_matsubara", "depth", "tau", "t_final", "samples",
                                "integrator", "dt", "burn_dt", "precision", "terminator",
                                "matsubara_remainder", "check_n_matsubara",
                                "check_depth", "check_dt", "dominance_fraction"},
                       "output": {"prefix"}},
    "blp-scan": {"model": _MODEL_KEYS, "bath": _BATH_KEYS,
                 "scan": {"cutoffs", "temperatures", "strategy", "n_u", "n_v", "n",
                          "eps_ss", "n_matsubara", "cells", "cell_t_final",
                          "cell_samples"},
                 "output": {"prefix"}},
}


def load_config(path: str, command: str) -> dict:
    schema = _SCHEMAS[command]
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    cfg: dict = {}
    for section in parser.sections():
        if section not in schema:
            raise ConfigError(f"unknown section [{section}] for command {command}")
        cfg[section] = {}
        for key, raw in parser.items(section):
            if key not in schema[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            cfg[section][key] = _parse_value(raw)
    return cfg


def _build_params(cfg: dict) -> SpinBosonParams:
    m = cfg.get("model", {})
    if "beta" in m:
        beta = float(m["beta"])
    elif "temperature" in m:
        beta = 1.0 / float(m["temperature"])
    else:
        raise ConfigError("model needs beta or temperature")
    lam = float(m.get("lam", 1.0))
    if "epsilon" in m or "t_c" in m:
        if "omega" in m or "theta" in m:
            raise ConfigError("give either (omega, theta) or (epsilon, t_c), not both")
        omega, a1, a3 = dqd_to_sbm(DqdParams(float(m.get("epsilon", 0.0)),
                                             float(m.get("t_c", 0.0))))
        theta = float(np.arctan2(a1, a3))
        return SpinBosonParams(omega=omega, theta=theta, lam=lam, beta=beta)
    return SpinBosonParams(omega=float(m["omega"]), theta=float(m["theta"]),
                           lam=lam, beta=beta)


def _build_sd(cfg: dict):
    b = cfg.get("bath", {})
    kind = b.get("kind", "drude")
    gamma = float(b.get("gamma", 0.0))
    if kind == "drude":
        return bath_mod.Drude(gamma=gamma, lambda_c=float(b["lambda_c"]))
    if kind == "dqd":
        return bath_mod.DqdPhonon(gamma=gamma, omega_c=float(b["omega_c"]),
                                  omega_max=float(b["omega_max"]))
    if kind == "tabulated":
        data = np.loadtxt(str(b["file"]), delimiter=",")
        return bath_mod.Tabulated(grid=data[:, 0], values=data[:, 1])
    raise ConfigError(f"unknown bath kind '{kind}'")


def _tcl_cfg(cfg: dict) -> tcl.Tcl4Config:
    t = cfg.get("tcl", {})
    return tcl.Tcl4Config(
        points=int(t.get("points", 32)),
        sat_tol=float(t.get("sat_tol", 1e-4)),
        asymptotic_method=str(t.get("asymptotic_method", "saturation")),
        panel_points=int(t.get("panel_points", 8)),
        panel_ratio=float(t.get("panel_ratio", 2.0)),
    )


def _generators(params: SpinBosonParams, cfg: dict):
    """Asymptotic order-2 and order-4 generators via the configured backend."""
    t = cfg.get("tcl", {})
    backend = str(t.get("backend", "auto"))
    sd = _build_sd(cfg)
    use_modes = backend == "matsubara" or (
        backend == "auto" and isinstance(sd, bath_mod.Drude))
    if use_modes:
        if not isinstance(sd, bath_mod.Drude):
            raise ConfigError("matsubara backend needs a drude bath")
        n = int(t.get("n_matsubara", 512))
        eb = expbath.drude_modes(sd.gamma, sd.lambda_c, params.beta, n)
        f2 = expbath.tcl2_drude_matsubara(params, eb)
        f4 = expbath.tcl4_drude_matsubara(params, eb)
        return f2, f4
    ctx = bath_mod.BathContext(sd=sd, beta=params.beta)
    table = None
    f2 = tcl.tcl2_generator(params, ctx, table=table)
    f4 = tcl.tcl4_generator(params, ctx, cfg=_tcl_cfg(cfg), table=table)
    return f2, f4


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row) + "\n")


def _write_meta(path: Path, command: str, cfg: dict, seed: int, extra: dict | None = None) -> None:
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in sorted(obj.items())}
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.floating, np.integer)):
            return obj.item()
        return obj

    meta = {"command": command, "config": clean(cfg), "seed": seed}
    if extra:
        meta.update(clean(extra))
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_correlation(cfg: dict, out: Path, seed: int, threads: int) -> int:
    beta_src = cfg.get("model", {})
    beta = float(beta_src.get("beta", 1.0 / float(beta_src.get("temperature", 1.0))))
    sd = _build_sd(cfg)
    ctx = bath_mod.BathContext(sd=sd, beta=beta)
    c = cfg.get("correlation", {})
    t_max = float(c.get("t_max", 10.0))
    n = int(c.get("samples", 201))
    ts = np.linspace(0.0, t_max, n)
    rows = []
    for t in ts:
        e = bath_mod.eta(ctx, float(t))
        v = bath_mod.nu(ctx, float(t)) if (t > 0 or not isinstance(sd, bath_mod.Drude)
                                           or sd.gamma == 0.0) else float("nan")
        rows.append((float(t), e, v))
    prefix = cfg.get("output", {}).get("prefix", "correlation")
    _write_csv(out / f"{prefix}.csv", ["t", "eta", "nu"], rows)
    _write_meta(out / f"{prefix}.meta.json", "correlation", cfg, seed)
    return 0


def cmd_simulate(cfg: dict, out: Path, seed: int, threads: int) -> int:
    params = _build_params(cfg)
    s = cfg.get("simulate", {})
    t_final = float(s.get("t_final", 30.0))
    n = int(s.get("samples", 301))
    v0 = np.asarray(s.get("v0", np.array([1.0, 0.0, 0.0, 0.0])), dtype=float)
    if v0.shape != (4,):
        raise ConfigError("v0 must have four components")
    orders = np.atleast_1d(s.get("orders", np.array([2.0, 4.0]))).astype(int)
    f0 = free_generator(params)
    f2, f4 = _generators(params, cfg)
    times = np.linspace(0.0, t_final, n)
    prefix = cfg.get("output", {}).get("prefix", "trajectory")
    for order in orders:
        g = tcl.total_generator(params, f0, f2, f4 if order == 4 else None)
        traj = propagate(v0, g, times)
        traj.to_csv(out / f"{prefix}_tcl{order}.csv")
    _write_meta(out / f"{prefix}.meta.json", "simulate", cfg, seed,
                {"generators": {"f2": json.loads(f2.to_json()),
                                "f4": json.loads(f4.to_json())}})
    return 0


def cmd_steady_state(cfg: dict, out: Path, seed: int, threads: int) -> int:
    params = _build_params(cfg)
    f0 = free_generator(params)
    f2, f4 = _generators(params, cfg)
    rows = []
    for order in (2, 4):
        g = tcl.total_generator(params, f0, f2, f4 if order == 4 else None)
        v = steady_state(g)
        rows.append((order, v[1], v[2], v[3]))
    prefix = cfg.get("output", {}).get("prefix", "steady_state")
    _write_csv(out / f"{prefix}.csv", ["order", "v1", "v2", "v3"], rows)
    _write_meta(out / f"{prefix}.meta.json", "steady-state", cfg, seed)
    return 0


def cmd_drude_verify(cfg: dict, out: Path, seed: int, threads: int) -> int:
    params = _build_params(cfg)
    sd = _build_sd(cfg)
    if not isinstance(sd, bath_mod.Drude):
        raise ConfigError("drude-verify needs a drude bath")
    dv = cfg.get("drude-verify", {})
    ladder = np.atleast_1d(dv.get("ladder", np.array([16., 32., 64., 128., 256.]))).astype(int)
    slope_max = float(dv.get("slope_max", -0.5))
    entry_tol = float(dv.get("entry_tol", 1e-3))
    ctx = bath_mod.BathContext(sd=sd, beta=params.beta)
    tcfg = _tcl_cfg(cfg)
    fprime = tcl.tcl4_generator(params, ctx, cfg=tcfg)
    labels = [f"e{i}{j}" for i in (1, 2) for j in range(4)]
    rows = []
    erel = []
    for n in ladder:
        x = expbath.tcl4_drude_matsubara(
            params, expbath.drude_modes(sd.gamma, sd.lambda_c, params.beta, int(n))).m
        e = (fprime.m - x)[1:3].ravel() / fprime.m[1:3].ravel()
        erel.append(np.abs(e))
        rows.append((int(n), *np.abs(e)))
    erel = np.array(erel)
    slopes = [float(np.polyfit(np.log(ladder), np.log(col), 1)[0]) for col in erel.T]
    final_ok = bool(erel[-1].max() < entry_tol)
    slopes_ok = all(s < slope_max for s in slopes)
    prefix = cfg.get("output", {}).get("prefix", "drude_verify")
    _write_csv(out / f"{prefix}_erel.csv", ["n", *labels], rows)
    with open(out / f"{prefix}_f4.json", "w") as fh:
        fh.write(fprime.to_json() + "\n")
    _write_meta(out / f"{prefix}.meta.json", "drude-verify", cfg, seed,
                {"slopes": dict(zip(labels, slopes)),
                 "final_entry_rel": dict(zip(labels, erel[-1].tolist())),
                 "slopes_ok": slopes_ok, "final_ok": final_ok})
    return 0 if (slopes_ok and final_ok) else 1


def _fidelity_columns(params, g2, g4, traj_ref: Trajectory, rho0) -> np.ndarray:
    v0 = bloch_from_density(rho0)
    times = traj_ref.times
    tr2 = propagate(v0, g2, times)
    tr4 = propagate(v0, g4, times)
    out = np.empty((len(times), 3))
    out[:, 0] = times
    for i in range(len(times)):
        ref = density_from_bloch(traj_ref.states[i])
        out[i, 1] = 1.0 - heom.fidelity(density_from_bloch(tr2.states[i]), ref)
        out[i, 2] = 1.0 - heom.fidelity(density_from_bloch(tr4.states[i]), ref)
    return out


def cmd_heom_benchmark(cfg: dict, out: Path, seed: int, threads: int) -> int:
    params = _build_params(cfg)
    sd = _build_sd(cfg)
    if not isinstance(sd, bath_mod.Drude):
        raise ConfigError("heom-benchmark needs a drude bath")
    h = cfg.get("heom", {})
    tau = float(h.get("tau", 60.0))
    t_final = float(h.get("t_final", 30.0))
    n = int(h.get("samples", 301))
    frac_needed = float(h.get("dominance_fraction", 0.95))
    times = np.round(np.linspace(0.0, t_final, n), 12)
    plus = 0.5 * np.array([[1.0, 1.0], [1.0, 1.0]], dtype=complex)

    f0 = free_generator(params)
    f2, f4 = _generators(params, cfg)
    g2 = tcl.total_generator(params, f0, f2)
    g4 = tcl.total_generator(params, f0, f2, f4)

    def run(nmats, depth, dt):
        eb = expbath.drude_modes(sd.gamma, sd.lambda_c, params.beta, nmats)
        hcfg = heom.HeomConfig(
            n_matsubara=nmats, depth=depth,
            terminator=str(h.get("terminator", "truncate")),
            matsubara_remainder=bool(h.get("matsubara_remainder", False)),
            integrator=str(h.get("integrator", "auto")),
            dt=dt, burn_dt=(float(h["burn_dt"]) if "burn_dt" in h else None),
            precision=str(h.get("precision", "double")))
        traj_ref, rho0 = heom.asymptotic_shift(plus, tau, params, eb, hcfg, times)
        return _fidelity_columns(params, g2, g4, traj_ref, rho0)

    cols = run(int(h.get("n_matsubara", 32)), int(h.get("depth", 2)),
               float(h.get("dt", 0.05)))
    prefix = cfg.get("output", {}).get("prefix", "heom_benchmark")
    _write_csv(out / f"{prefix}_fidelity.csv",
               ["t", "one_minus_f_tcl2", "one_minus_f_tcl4"], cols)
    mask = cols[:, 0] > 0
    frac = float(np.mean(cols[mask, 2] < cols[mask, 1]))
    extra = {"dominance_fraction": frac}
    ok = frac >= frac_needed
    if "check_n_matsubara" in h or "check_depth" in h:
        cols_hi = run(int(h.get("check_n_matsubara", 64)), int(h.get("check_depth", 4)),
                      float(h.get("check_dt", h.get("dt", 0.05))))
        _write_csv(out / f"{prefix}_fidelity_check.csv",
                   ["t", "one_minus_f_tcl2", "one_minus_f_tcl4"], cols_hi)
        gap_shrunk = bool(cols_hi[mask, 2].max() <= cols[mask, 2].max() + 1e-6)
        extra["tcl4_gap_shrunk"] = gap_shrunk
        ok = ok and gap_shrunk
    _write_meta(out / f"{prefix}.meta.json", "heom-benchmark", cfg, seed, extra)
    return 0 if ok else 1


def cmd_blp_scan(cfg: dict, out: Path, seed: int, threads: int) -> int:
    params = _build_params(cfg)
    sd = _build_sd(cfg)
    if not isinstance(sd, bath_mod.Drude):
        raise ConfigError("blp-scan needs a drude bath")
    s = cfg.get("scan", {})
    cutoffs = np.atleast_1d(np.asarray(s.get("cutoffs", np.linspace(0.2, 8.0, 6)), dtype=float))
    temps = np.atleast_1d(np.asarray(s.get("temperatures", np.linspace(0.2, 8.0, 6)), dtype=float))
    rng = np.random.default_rng(seed)
    strategy = str(s.get("strategy", "antipodal"))
    if strategy == "antipodal":
        ens = nonmarkov.antipodal_ensemble(int(s.get("n_u", 20)), int(s.get("n_v", 20)), rng)
    elif strategy == "general":
        ens = nonmarkov.general_ensemble(int(s.get("n", 8)), rng)
    else:
        raise ConfigError(f"unknown ensemble strategy '{strategy}'")
    model = nonmarkov.ScanModel(omega=params.omega, gamma=sd.gamma, theta=params.theta,
                                lam=params.lam,
                                n_matsubara=int(s.get("n_matsubara", 512)))
    res = nonmarkov.blp_scan(model, cutoffs, temps, ens,
                             eps_ss=float(s.get("eps_ss", 0.001)), threads=threads)
    prefix = cfg.get("output", {}).get("prefix", "blp")
    rows = []
    for i, lam_c in enumerate(res.cutoffs):
        for j, temp in enumerate(res.temperatures):
            rows.append((float(lam_c), float(temp), res.n_tcl2[i, j], res.n_tcl4[i, j],
                         res.diff[i, j], res.t_max[i, j], int(res.valid[i, j])))
    _write_csv(out / f"{prefix}_map.csv",
               ["cutoff", "temperature", "n_tcl2", "n_tcl4", "diff", "t_max", "valid"],
               rows)
    cells = s.get("cells", "")
    cell_rows = []
    if cells:
        pairs = [tok for tok in str(cells).split(";") if tok.strip()]
        t_final = float(s.get("cell_t_final", 60.0))
        n_cell = int(s.get("cell_samples", 1201))
        for k, tok in enumerate(pairs):
            lam_c, temp = (float(x) for x in tok.strip("() ").split(","))
            g2, g4 = nonmarkov._cell_generators(model, lam_c, temp)
            times = np.linspace(0.0, t_final, n_cell)
            delta = np.array([1.0, 1.0, 0.0, 0.0]) - np.array([1.0, -1.0, 0.0, 0.0])
            d2 = _trace_distance_curve(g2, delta, times)
            d4 = _trace_distance_curve(g4, delta, times)
            _write_csv(out / f"{prefix}_trace_distance_{k}.csv",
                       ["t", "d_tcl2", "d_tcl4"],
                       np.column_stack([times, d2, d4]))
            cell_rows.append({"cutoff": lam_c, "temperature": temp,
                              "file": f"{prefix}_trace_distance_{k}.csv"})
    _write_meta(out / f"{prefix}.meta.json", "blp-scan", cfg, seed,
                {"ensemble": res.ensemble_spec, "errors": list(res.errors),
                 "cells": cell_rows,
                 "markovian_floor_note":
                     "cells are counted Markovian below 1e-4; the floor is a "
                     "desk-scale choice recorded here"})
    return 0


def _trace_distance_curve(g, delta4, times) -> np.ndarray:
    from scipy.linalg import expm

    block = g.m[1:, 1:]
    step = expm(block * (times[1] - times[0]))
    d = delta4[1:].copy()
    out = np.empty(len(times))
    out[0] = 0.5 * np.linalg.norm(d)
    for i in range(1, len(times)):
        d = step @ d
        out[i] = 0.5 * np.linalg.norm(d)
    return out


_COMMANDS = {
    "correlation": cmd_correlation,
    "simulate": cmd_simulate,
    "steady-state": cmd_steady_state,
    "drude-verify": cmd_drude_verify,
    "heom-benchmark": cmd_heom_benchmark,
    "blp-scan": cmd_blp_scan,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spinboson",
        description="Spin-boson TCL generators, hierarchy benchmark and "
                    "non-Markovianity scans")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="path to the run config")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--threads", type=int, default=0,
                        help="worker cap for scans (0 = all cores)")
    parser.add_argument("--seed", type=int, default=0, help="sampling seed")
    args = parser.parse_args(argv)

    import os

    threads = args.threads if args.threads > 0 else (os.cpu_count() or 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = load_config(args.config, args.command)
        return _COMMANDS[args.command](cfg, out, args.seed, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
