"""Command-line front end: one binary, subcommands per task, JSON
configs, CSV and F64GRID outputs.

Every output directory gets a manifest recording the resolved config,
the effective seed and worker count, the package version, and a digest
of every file written.  Re-running from the manifest at the same worker
count reproduces the data files byte for byte; only the manifest's own
timestamp differs, so `vlq compare` skips it.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure
(diverged iteration, aborted run, no converged root).
"""

import argparse
import datetime
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import __version__, dispersion, ensemble, qldiff, stochfield, vlasov
from .diffmat import AutocorrTensor, dql_limit, drbt_fixed_point, dtau_quadrature, dtau_sinc2
from .phasespace import (
    DistFn,
    PhaseGrid,
    VelocityFn,
    g17,
    write_f64grid,
    write_profile_csv,
)

OK = 0
USAGE = 1
NUMERICAL = 2

_DATA_SUFFIXES = (".csv", ".f64grid", ".txt")


class UsageError(Exception):
    pass


class ConfigError(Exception):
    """Malformed config: carries file and field context."""


# ---------------------------------------------------------------------------
# config plumbing


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc


def dump_config(tree):
    return json.dumps(tree, sort_keys=True, indent=2) + "\n"


def _need(cfg, key, where):
    if key not in cfg:
        raise ConfigError(f"missing config field {where}.{key}")
    return cfg[key]


def _grid_from(cfg, where="grid"):
    return PhaseGrid(
        nx=int(cfg.get("nx", 2)),
        nv=int(_need(cfg, "nv", where)),
        vmax=float(_need(cfg, "vmax", where)),
    )


def _field_spec_from(cfg, seed_override=None):
    """Field slot: spectral or bump spec, the self-consistent marker, or
    null for free flow."""
    if cfg is None:
        return None
    kind = _need(cfg, "kind", "field")
    if kind == "self_consistent":
        return vlasov.SELF_CONSISTENT
    seed = int(cfg.get("seed", 0)) if seed_override is None else int(seed_override)
    if kind == "spectral":
        return stochfield.SpectralFieldSpec(
            modes=tuple(tuple(m) for m in _need(cfg, "modes", "field")),
            tau=float(_need(cfg, "tau", "field")),
            autocorr_kind=cfg.get("autocorr_kind", "triangular"),
            rbt_diffusion=float(cfg.get("rbt_diffusion", 0.0)),
            gradient_projection=bool(cfg.get("gradient_projection", True)),
            seed=seed,
        )
    if kind == "bump":
        return stochfield.BumpFieldSpec(
            r=float(_need(cfg, "r", "field")),
            rho=float(_need(cfg, "rho", "field")),
            w_t=float(_need(cfg, "w_t", "field")),
            w_tau=float(_need(cfg, "w_tau", "field")),
            w_x=float(_need(cfg, "w_x", "field")),
            amplitude=float(_need(cfg, "amplitude", "field")),
            x_cells=int(_need(cfg, "x_cells", "field")),
            amp_dist=cfg.get("amp_dist", "rademacher"),
            gradient_potential=bool(cfg.get("gradient_potential", True)),
            seed=seed,
        )
    raise ConfigError(f"unknown field kind {kind!r}")


def _profile_from(grid, cfg, where="f0"):
    """Velocity profile kinds shared by ql-run, dispersion and the f0
    block of kinetic runs."""
    kind = _need(cfg, "kind", where)
    if kind == "maxwellian":
        return dispersion.maxwellian_profile(grid, v_th=float(cfg.get("v_th", 1.0)))
    if kind == "bump_on_tail":
        return dispersion.bump_on_tail_profile(
            grid,
            n_bump=float(_need(cfg, "n_bump", where)),
            v_bump=float(_need(cfg, "v_bump", where)),
            v_bump_th=float(_need(cfg, "v_bump_th", where)),
            core_v_th=float(cfg.get("core_v_th", 1.0)),
        )
    raise ConfigError(f"unknown profile kind {kind!r}")


def _f0_from(grid, cfg):
    prof = _profile_from(grid, _need(cfg, "profile", "f0"), where="f0.profile")
    values = np.tile(prof.f.values, (grid.nx, 1))
    mod = cfg.get("x_modulation")
    if mod is not None:
        amp = float(_need(mod, "amplitude", "f0.x_modulation"))
        mode = int(mod.get("mode", 1))
        values = values * (1.0 + amp * np.cos(mode * grid.x))[:, None]
    return DistFn(grid, values)


def _spectrum_from(cfg):
    kind = _need(cfg, "kind", "spectrum")
    if kind == "bohm_gross":
        return qldiff.bohm_gross_spectrum(
            wavenumbers=tuple(int(k) for k in _need(cfg, "wavenumbers", "spectrum")),
            energies=tuple(float(e) for e in _need(cfg, "energies", "spectrum")),
            v_th=float(cfg.get("v_th", 1.0)),
            omega_p=float(cfg.get("omega_p", 1.0)),
        )
    if kind == "explicit":
        return qldiff.WaveSpectrum(
            modes=tuple(tuple(m) for m in _need(cfg, "modes", "spectrum"))
        )
    raise ConfigError(f"unknown spectrum kind {kind!r}")


def _vlasov_config_from(cfg, field, where="vlasov"):
    grid = _grid_from(_need(cfg, "grid", where), where=f"{where}.grid")
    epsilon = float(_need(cfg, "epsilon", where))
    if "dt" in cfg and "cfl_fraction" in cfg:
        raise ConfigError(f"{where}: give dt or cfl_fraction, not both")
    if "dt" in cfg:
        dt = float(cfg["dt"])
    elif "cfl_fraction" in cfg:
        dt = float(cfg["cfl_fraction"]) * vlasov.cfl_limit(grid, epsilon)
    else:
        raise ConfigError(f"missing config field {where}.dt (or cfl_fraction)")
    return vlasov.VlasovConfig(
        epsilon=epsilon,
        grid=grid,
        dt=dt,
        t_end=float(_need(cfg, "t_end", where)),
        field=field,
        splitting=cfg.get("splitting", "strang"),
        c_cfl=float(cfg.get("c_cfl", 0.5)),
        tol_energy=float(cfg.get("tol_energy", 1e-4)),
    )


# ---------------------------------------------------------------------------
# output plumbing


def _write_csv(path, header, rows):
    """Plain CSV, floats at 17 significant digits, everything else str."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(
                ",".join(g17(c) if isinstance(c, float) else str(c) for c in row)
                + "\n"
            )


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _prepare_out_dir(args):
    out = getattr(args, "out_dir", None)
    if out is None:
        return None
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out_dir, command, config, seed=None, workers=None, extra=None):
    """Written last so it can digest every data file in the directory."""
    outputs = {}
    for name in sorted(os.listdir(out_dir)):
        if name.endswith(_DATA_SUFFIXES):
            outputs[name] = _sha256(os.path.join(out_dir, name))
    manifest = {
        "command": command,
        "version": __version__,
        "timestamp_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": seed,
        "workers": workers,
        "config": config,
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _resolve_config(args):
    """Config tree plus effective seed/workers, taking --from-manifest
    into account.  Explicit flags override manifest values."""
    if getattr(args, "from_manifest", None):
        tree = load_config(args.from_manifest)
        config = tree.get("config")
        if config is None:
            raise ConfigError(f"{args.from_manifest}: not a run manifest")
        seed = args.seed if args.seed is not None else tree.get("seed")
        workers = args.workers if args.workers is not None else tree.get("workers")
        return config, seed, workers
    if getattr(args, "config", None) is None:
        raise UsageError("either --config or --from-manifest is required")
    return load_config(args.config), args.seed, args.workers


def _resolve_workers(flag_value, config_value=None):
    if flag_value is not None:
        return int(flag_value)
    if config_value is not None:
        return int(config_value)
    env = os.environ.get("VLQ_WORKERS")
    return int(env) if env else 1


# ---------------------------------------------------------------------------
# physical-to-dimensionless scaling


class ScalingError(ValueError):
    pass


@dataclass(frozen=True)
class ScalingInput:
    """Physical regime parameters; tau_d may be math.inf."""

    omega_p: float
    v_th: float
    tau_slow: float
    tau_ac: float
    tau_d: float
    energy_ratio: float

    def __post_init__(self):
        finite = dict(
            omega_p=self.omega_p,
            v_th=self.v_th,
            tau_slow=self.tau_slow,
            tau_ac=self.tau_ac,
            energy_ratio=self.energy_ratio,
        )
        for name, val in finite.items():
            if not (math.isfinite(val) and val > 0.0):
                raise ScalingError(f"{name} must be positive and finite, got {val!r}")
        if not self.tau_d > 0.0:
            raise ScalingError(
                f"tau_d must be positive (inf allowed), got {self.tau_d!r}"
            )


def derive_scaling(inp):
    """Dimensionless parameters of the weak-turbulence scaling.

    epsilon is the energy ratio by definition; the field-slowness and
    autocorrelation relations are then consistency checks on the claimed
    regime, reported as warnings because exploring outside it is
    legitimate.  uptau = tau_d / tau_slow, infinite when the particle
    decorrelation time is the infinity sentinel (quasilinear limit).
    """
    eps = inp.energy_ratio
    eps2 = eps * eps
    warnings = []
    slowness = 1.0 / (inp.omega_p * inp.tau_slow)
    if abs(slowness - eps2) > 0.1 * eps2:
        warnings.append(
            f"regime mismatch: 1/(omega_p tau_slow) = {g17(slowness)}"
            f" != eps^2 = {g17(eps2)}"
        )
    ac_ratio = inp.tau_ac / inp.tau_slow
    if abs(ac_ratio - eps2) > 0.1 * eps2:
        warnings.append(
            f"regime mismatch: tau_ac/tau_slow = {g17(ac_ratio)}"
            f" != eps^2 = {g17(eps2)}"
        )
    return {
        "epsilon": eps,
        "uptau": inp.tau_d / inp.tau_slow,
        "lambda_debye": inp.v_th / inp.omega_p,
        "warnings": tuple(warnings),
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_scaling(args):
    inp = ScalingInput(
        omega_p=args.wp_tauL,
        v_th=args.v_th,
        tau_slow=1.0,
        tau_ac=args.tauac_over_tauL,
        tau_d=args.tauD_over_tauL,
        energy_ratio=args.ratio,
    )
    rep = derive_scaling(inp)
    print(f"epsilon = {g17(rep['epsilon'])}")
    print(f"uptau = {g17(rep['uptau'])}")
    print(f"lambda_debye = {g17(rep['lambda_debye'])}")
    for w in rep["warnings"]:
        print(f"warning: {w}")
    out = _prepare_out_dir(args)
    if out:
        _write_csv(
            os.path.join(out, "scaling.csv"),
            ("quantity", "value"),
            [
                ("epsilon", rep["epsilon"]),
                ("uptau", rep["uptau"]),
                ("lambda_debye", rep["lambda_debye"]),
            ],
        )
        _write_manifest(
            out,
            "scaling",
            {
                "ratio": args.ratio,
                "wp_tauL": args.wp_tauL,
                "tauac_over_tauL": args.tauac_over_tauL,
                "tauD_over_tauL": args.tauD_over_tauL,
                "v_th": args.v_th,
            },
            extra={"warnings": list(rep["warnings"])},
        )
    return OK


def cmd_field_sample(args):
    config, seed, _ = _resolve_config(args)
    spec = _field_spec_from(_need(config, "field", "config"), seed_override=seed)
    if spec is None or spec == vlasov.SELF_CONSISTENT:
        raise ConfigError("field-sample needs a spectral or bump field spec")
    epsilon = float(config.get("epsilon", 1.0))
    times = [float(t) for t in _need(config, "times", "config")]
    x_cfg = _need(config, "x", "config")
    if isinstance(x_cfg, dict):
        n = int(_need(x_cfg, "n", "config.x"))
        x = np.arange(n) * (2.0 * math.pi / n)
    else:
        x = np.asarray([float(v) for v in x_cfg])
    if isinstance(spec, stochfield.SpectralFieldSpec):
        real = stochfield.sample_spectral(spec)
    else:
        pad = spec.tau + 1.0
        hi = max(times) / epsilon**2 + pad
        real = stochfield.sample_bump(spec, (-pad, hi))
    out = _prepare_out_dir(args)
    rows = []
    for t in times:
        e = real.at_scaled_time(t, epsilon, x)
        rows.extend((float(t), float(xi), float(ei)) for xi, ei in zip(x, e))
    _write_csv(os.path.join(out, "field.csv"), ("t", "x", "value"), rows)
    _write_manifest(out, "field-sample", config, seed=spec.seed)
    return OK


def _matrix_rows(mat):
    nv, d, _ = mat.values.shape
    header = ["v"] + [f"d_{i}{j}" for i in range(d) for j in range(d)]
    rows = []
    for n in range(nv):
        row = [float(mat.v_grid[n])]
        row.extend(float(mat.values[n, i, j]) for i in range(d) for j in range(d))
        rows.append(tuple(row))
    return header, rows


def cmd_diffmat(args):
    config, seed, _ = _resolve_config(args)
    route = _need(config, "route", "config")
    axis = _need(config, "grid", "config")
    v = np.linspace(
        -float(_need(axis, "vmax", "config.grid")),
        float(_need(axis, "vmax", "config.grid")),
        int(_need(axis, "nv", "config.grid")),
    )
    t = float(config.get("t", 0.0))
    out = _prepare_out_dir(args)
    status = OK

    if route == "sinc2":
        spec = _field_spec_from(_need(config, "field", "config"), seed_override=seed)
        mat = dtau_sinc2(
            spec, float(config.get("tau", spec.tau)), v,
            eta=float(config.get("eta", 0.0)), t=t,
        )
    elif route == "quadrature":
        spec = _field_spec_from(_need(config, "field", "config"), seed_override=seed)
        if isinstance(spec, stochfield.SpectralFieldSpec):
            tensor = AutocorrTensor.from_spectral(spec)
        else:
            tensor = AutocorrTensor.from_bump(spec)
        mat = dtau_quadrature(tensor, t, v)
    elif route == "ql_limit":
        modes = tuple(tuple(m) for m in _need(config, "modes", "config"))
        mat = dql_limit(
            modes, v, t=t,
            regularization=config.get("regularization", "lorentzian"),
            width=config.get("width"),
            tau_reg=config.get("tau_reg"),
        )
    elif route == "rbt":
        modes = tuple(tuple(m) for m in _need(config, "modes", "config"))
        mat = drbt_fixed_point(
            modes, v, t=t,
            tol=float(config.get("tol", 1e-10)),
            max_iter=int(config.get("max_iter", 60)),
            damping=float(config.get("damping", 0.5)),
        )
        meta = mat.meta
        _write_csv(
            os.path.join(out, "rbt_report.csv"),
            ("iterations", "residual", "converged", "psd_projections", "floor_hits"),
            [
                (
                    meta["iterations"],
                    float(meta["residual"]),
                    int(meta["converged"]),
                    meta["psd_projections"],
                    meta["floor_hits"],
                )
            ],
        )
        if not meta["converged"]:
            print(
                f"rbt iteration did not converge: residual = {g17(meta['residual'])}"
                f" after {meta['iterations']} iterations",
                file=sys.stderr,
            )
            status = NUMERICAL
    else:
        raise ConfigError(f"unknown diffmat route {route!r}")

    header, rows = _matrix_rows(mat)
    _write_csv(os.path.join(out, "dmatrix.csv"), header, rows)
    _write_manifest(out, "diffmat", config, seed=seed)
    return status


def cmd_dispersion(args):
    config, seed, _ = _resolve_config(args)
    grid = _grid_from(_need(config, "grid", "config"))
    profile = _profile_from(grid, _need(config, "profile", "config"), where="profile")
    omega_p = float(config.get("omega_p", 1.0))
    wavenumbers = [int(k) for k in _need(config, "wavenumbers", "config")]
    rows = []
    n_ok = 0
    for k in wavenumbers:
        bg = math.copysign(dispersion.bohm_gross(k, profile.v_th, omega_p), k)
        try:
            est = dispersion.ql_growth_rate(profile, k, bg, omega_p)
        except dispersion.DispersionError:
            est = math.nan
        try:
            root = dispersion.solve_root(
                profile, k, omega_p=omega_p,
                tol=float(config.get("tol", 1e-10)),
                max_iter=int(config.get("max_iter", 50)),
            )
            rows.append((k, root.omega, root.gamma, root.residual, bg, est, 1))
            n_ok += 1
        except dispersion.DispersionError:
            rows.append((k, math.nan, math.nan, math.nan, bg, est, 0))
    out = _prepare_out_dir(args)
    _write_csv(
        os.path.join(out, "dispersion.csv"),
        ("k", "omega", "gamma", "residual", "bohm_gross_omega", "qlgr_gamma", "converged"),
        rows,
    )
    _write_manifest(out, "dispersion", config, seed=seed)
    if n_ok == 0:
        print("no dispersion root converged", file=sys.stderr)
        return NUMERICAL
    return OK


def cmd_vlasov_run(args):
    config, seed, _ = _resolve_config(args)
    field_cfg = config.get("field")
    spec = _field_spec_from(field_cfg, seed_override=seed)
    cfg = _vlasov_config_from(config, field=None, where="config")
    if spec == vlasov.SELF_CONSISTENT:
        cfg = replace(cfg, field=vlasov.SELF_CONSISTENT)
    elif spec is not None:
        if isinstance(spec, stochfield.SpectralFieldSpec):
            field = stochfield.sample_spectral(spec)
        else:
            pad = spec.tau + 1.0
            field = stochfield.sample_bump(
                spec, (-pad, cfg.t_end / cfg.epsilon**2 + pad)
            )
        cfg = replace(cfg, field=field)
    f0 = _f0_from(cfg.grid, _need(config, "f0", "config"))
    out = _prepare_out_dir(args)
    try:
        traj = vlasov.run(
            cfg, f0,
            diag_stride=int(config.get("diag_stride", 1)),
            snapshot_stride=config.get("snapshot_stride"),
        )
    except vlasov.VlasovError as err:
        with open(os.path.join(out, "abort.txt"), "w", encoding="ascii") as fh:
            fh.write(str(err) + "\n")
        _write_manifest(out, "vlasov-run", config, seed=seed)
        print(f"run failed: {err}", file=sys.stderr)
        return NUMERICAL

    names = list(vlasov.DIAG_COLUMNS) + ["feet_out"]
    cols = [traj.scalar(n) for n in names]
    _write_csv(
        os.path.join(out, "diag.csv"),
        names,
        [tuple(float(c[i]) for c in cols) for i in range(len(cols[0]))],
    )
    for j, snap in enumerate(traj.snapshots):
        write_f64grid(os.path.join(out, f"f_{j:05d}.f64grid"), snap)
        write_profile_csv(os.path.join(out, f"profile_{j:05d}.csv"), traj.profiles[j])
    status = OK
    extra = {"cfl_ratio": traj.cfl_ratio, "aborted": traj.aborted}
    if traj.aborted:
        with open(os.path.join(out, "abort.txt"), "w", encoding="ascii") as fh:
            fh.write(traj.abort_reason + "\n")
        print(f"run aborted: {traj.abort_reason}", file=sys.stderr)
        status = NUMERICAL
    _write_manifest(out, "vlasov-run", config, seed=seed, extra=extra)
    return status


def cmd_ql_run(args):
    config, seed, _ = _resolve_config(args)
    grid = _grid_from(_need(config, "grid", "config"))
    profile = _profile_from(grid, _need(config, "f0", "config"), where="f0")
    f0 = VelocityFn(grid, profile.f.values.copy())
    spectrum = _spectrum_from(_need(config, "spectrum", "config"))
    out = _prepare_out_dir(args)
    status = OK
    diverged_msg = None
    try:
        traj = qldiff.ql_system_run(
            f0,
            spectrum,
            dt=float(_need(config, "dt", "config")),
            t_end=float(_need(config, "t_end", "config")),
            mode=config.get("mode", "frozen_dispersion"),
            omega_p=float(config.get("omega_p", 1.0)),
            regularization=config.get("regularization", "lorentzian"),
            width=config.get("width"),
            tau_reg=config.get("tau_reg"),
            scheme=config.get("scheme", "crank_nicolson"),
            snapshot_stride=config.get("snapshot_stride"),
            energy_cap=float(config.get("energy_cap", 1e60)),
        )
    except qldiff.QlRunError as err:
        if err.trajectory is None:
            raise
        traj = err.trajectory
        diverged_msg = str(err)
        status = NUMERICAL

    _write_csv(
        os.path.join(out, "ql_diag.csv"),
        ("t", "mass", "l2", "max_slope", "momentum_particles", "momentum_waves"),
        [
            (
                float(traj.t[i]),
                float(traj.mass[i]),
                float(traj.l2[i]),
                float(traj.max_slope[i]),
                float(traj.momentum_particles[i]),
                float(traj.momentum_waves[i]),
            )
            for i in range(traj.t.size)
        ],
    )
    ks = traj.spectrum.wavenumbers
    spec_rows = []
    for i in range(traj.t.size):
        for jk, k in enumerate(ks):
            spec_rows.append(
                (
                    float(traj.t[i]),
                    int(k),
                    float(traj.energies[i][jk]),
                    float(traj.gammas[i][jk]),
                )
            )
    _write_csv(
        os.path.join(out, "spectrum.csv"), ("t", "k", "energy", "gamma"), spec_rows
    )
    for j, snap in enumerate(traj.snapshots):
        write_profile_csv(os.path.join(out, f"profile_{j:05d}.csv"), snap)
    if diverged_msg is not None:
        with open(os.path.join(out, "divergence.txt"), "w", encoding="ascii") as fh:
            fh.write(diverged_msg + "\n")
        print(f"run failed: {diverged_msg}", file=sys.stderr)
    _write_manifest(
        out, "ql-run", config, seed=seed,
        extra={
            "resonant_window": list(traj.resonant_window),
            "live_fallbacks": traj.live_fallbacks,
            "diverged": traj.diverged,
        },
    )
    return status


def cmd_ensemble(args):
    config, seed, workers_flag = _resolve_config(args)
    workers = _resolve_workers(workers_flag, config.get("workers"))
    spec = _field_spec_from(config.get("field"))
    template = _vlasov_config_from(
        _need(config, "vlasov", "config"),
        field=vlasov.SELF_CONSISTENT if spec == vlasov.SELF_CONSISTENT else None,
        where="config.vlasov",
    )
    f0 = _f0_from(template.grid, _need(config, "f0", "config"))
    master_seed = (
        int(seed) if seed is not None else int(config.get("master_seed", 0))
    )
    cfg = ensemble.EnsembleConfig(
        field_spec=None if spec == vlasov.SELF_CONSISTENT else spec,
        vlasov=template,
        f0=f0,
        n_realizations=int(_need(config, "n_realizations", "config")),
        epsilons=tuple(float(e) for e in _need(config, "epsilons", "config")),
        compare_times=tuple(float(t) for t in _need(config, "compare_times", "config")),
        master_seed=master_seed,
        workers=workers,
        randomize_f0=bool(config.get("randomize_f0", False)),
        f0_amplitude=float(config.get("f0_amplitude", 0.05)),
    )
    out = _prepare_out_dir(args)
    try:
        rep = ensemble.run_ensemble(cfg)
    except ensemble.EnsembleError as err:
        with open(os.path.join(out, "abort.txt"), "w", encoding="ascii") as fh:
            fh.write(str(err) + "\n")
        _write_manifest(out, "ensemble", config, seed=master_seed, workers=workers)
        print(f"ensemble failed: {err}", file=sys.stderr)
        return NUMERICAL

    rows = []
    for ie, eps in enumerate(rep.epsilons):
        for jt, t in enumerate(rep.times):
            rows.append((eps, t, "weak", float(rep.weak_dist[ie, jt]),
                         g17(float(rep.weak_se[ie, jt]))))
            rows.append((eps, t, "l1", float(rep.l1_dist[ie, jt]), ""))
            rows.append((eps, t, "l2", float(rep.l2_dist[ie, jt]), ""))
    _write_csv(
        os.path.join(out, "report.csv"), ("eps", "t", "metric", "value", "stderr"), rows
    )

    time_labels = [f"t{jt}" for jt in range(len(rep.times))]
    grid = rep.grid
    for ie in range(len(rep.epsilons)):
        header = ["v"]
        for lab in time_labels:
            header.extend([f"mean_{lab}", f"se_{lab}"])
        prof_rows = []
        for n in range(grid.nv):
            row = [float(grid.v[n])]
            for jt in range(len(rep.times)):
                row.extend([float(rep.mean[ie, jt, n]), float(rep.stderr[ie, jt, n])])
            prof_rows.append(tuple(row))
        _write_csv(os.path.join(out, f"mean_profile_{ie}.csv"), header, prof_rows)
    _write_csv(
        os.path.join(out, "reference.csv"),
        ["v"] + [f"ref_{lab}" for lab in time_labels],
        [
            tuple([float(grid.v[n])] + [float(rep.reference[jt, n])
                                        for jt in range(len(rep.times))])
            for n in range(grid.nv)
        ],
    )
    if len(rep.epsilons) >= 3:
        sweep = ensemble.epsilon_sweep_report(rep)
        _write_csv(
            os.path.join(out, "sweep.csv"),
            ("t", "fitted_slope", "noise_flags"),
            [
                (
                    float(sweep.times[jt]),
                    float(sweep.slopes[jt]),
                    ";".join(str(int(b)) for b in sweep.noise_limited[:, jt]),
                )
                for jt in range(len(sweep.times))
            ],
        )
    if rep.drop_log:
        with open(os.path.join(out, "drops.txt"), "w", encoding="ascii") as fh:
            fh.write("\n".join(rep.drop_log) + "\n")
    _write_manifest(
        out, "ensemble", config, seed=master_seed, workers=workers,
        extra={
            "n_kept": list(rep.n_kept),
            "n_dropped": list(rep.n_dropped),
            "dropped_flag": rep.dropped_flag,
            "wall_clock": rep.wall_clock,
        },
    )
    return OK


def cmd_compare(args):
    for d in (args.dir_a, args.dir_b):
        if not os.path.isdir(d):
            raise UsageError(f"not a directory: {d}")

    def data_files(root):
        found = {}
        for dirpath, _, names in os.walk(root):
            for name in names:
                if name.endswith(_DATA_SUFFIXES):
                    full = os.path.join(dirpath, name)
                    found[os.path.relpath(full, root)] = full
        return found

    a, b = data_files(args.dir_a), data_files(args.dir_b)
    differing = []
    for rel in sorted(set(a) | set(b)):
        if rel not in a:
            differing.append(f"only in {args.dir_b}: {rel}")
        elif rel not in b:
            differing.append(f"only in {args.dir_a}: {rel}")
        else:
            with open(a[rel], "rb") as fa, open(b[rel], "rb") as fb:
                if fa.read() != fb.read():
                    differing.append(f"differs: {rel}")
    if differing:
        for line in differing:
            print(line)
        return NUMERICAL
    print(f"identical: {len(a)} data files")
    return OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--from-manifest", help="re-run from a manifest")
    common.add_argument("--out-dir", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument(
        "--workers", type=int, default=None,
        help="worker processes (fallback: VLQ_WORKERS, then 1)",
    )

    p = _Parser(prog="vlq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("scaling", help="derive dimensionless regime parameters")
    sc.add_argument("--ratio", type=float, required=True,
                    help="electric to kinetic energy ratio (this is epsilon)")
    sc.add_argument("--wp-tauL", dest="wp_tauL", type=float, required=True,
                    help="plasma frequency times the slow field time")
    sc.add_argument("--tauac-over-tauL", dest="tauac_over_tauL", type=float,
                    required=True, help="autocorrelation over slow time")
    sc.add_argument("--tauD-over-tauL", dest="tauD_over_tauL", type=float,
                    required=True, help="decorrelation over slow time (inf allowed)")
    sc.add_argument("--v-th", dest="v_th", type=float, default=1.0)
    sc.add_argument("--out-dir", default=None)
    sc.set_defaults(func=cmd_scaling)

    for name, func, help_text in (
        ("field-sample", cmd_field_sample, "sample a field realization on a grid"),
        ("diffmat", cmd_diffmat, "build a velocity diffusion matrix"),
        ("dispersion", cmd_dispersion, "solve the kinetic dispersion relation"),
        ("vlasov-run", cmd_vlasov_run, "run the scaled kinetic solver"),
        ("ql-run", cmd_ql_run, "run the coupled quasilinear system"),
        ("ensemble", cmd_ensemble, "run a Monte-Carlo epsilon sweep"),
    ):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.set_defaults(func=func)

    cp = sub.add_parser("compare", help="byte-compare data files of two run dirs")
    cp.add_argument("dir_a")
    cp.add_argument("dir_b")
    cp.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return USAGE
    except (ConfigError, ScalingError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return USAGE
    except (ValueError, stochfield.FieldSpecError) as err:
        # invalid parameter combinations surfaced by module validators
        print(f"config error: {err}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
