"""Monte-Carlo ensembles of kinetic runs over field realizations and the
convergence study against the velocity-diffusion limit.

Each (epsilon, realization) pair owns a counter-derived RNG stream, so
ensembles are reproducible bit for bit at any worker count: realizations
execute in a process pool, but aggregation is an ordered reduction over
the realization index.  The reference solution is the x-averaged initial
state evolved under the limiting diffusion coefficient, built from the
field statistics by the closed form for spectral specs and by
autocorrelation quadrature for bump specs.  Distances are measured in
the weak sense (Hermite moments) first, with L1/L2 alongside; the weak
metric is the one the limit theorem controls.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from . import rng
from .diffmat import AutocorrTensor, dtau_quadrature, dtau_sinc2
from .phasespace import (
    DistFn,
    VelocityFn,
    hermite_test_set,
    lp_norm,
    space_average,
    velocity_moment,
)
from .qldiff import DiffusionRun, run_diffusion
from .stochfield import BumpFieldSpec, SpectralFieldSpec, sample_bump, sample_spectral
from .vlasov import SELF_CONSISTENT, VlasovError, run, weak_departure

log = logging.getLogger(__name__)

_TAG_F0 = 0x0F0


class EnsembleError(RuntimeError):
    """Ensemble produced no usable data."""


def _compare_lattice(times, max_denominator=4096):
    """Smallest uniform lattice containing every compare time.

    Returns (delta, marks) with times[i] = marks[i] * delta exactly; the
    per-epsilon step is then chosen to divide delta, so requested times
    are hit by integer step counts instead of being snapped.
    """
    t_last = times[-1]
    dens = []
    for t in times:
        frac = Fraction(t / t_last).limit_denominator(max_denominator)
        if abs(float(frac) * t_last - t) > 1e-9 * t_last:
            raise ValueError(
                f"compare time {t!r} is not commensurate with the horizon "
                f"{t_last!r} at denominator {max_denominator}"
            )
        dens.append(frac.denominator)
    m = math.lcm(*dens)
    delta = t_last / m
    return delta, tuple(int(round(t / delta)) for t in times)


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble study: a field statistics spec, a solver template (field
    slot empty; epsilon, dt and t_end are overridden per run), shared
    initial data, and the sweep schedule.

    The per-epsilon step is the template's dt scaled by (eps/eps0)^2,
    matching the fast-transport stability constraint, then rounded down
    to divide the compare-time lattice.
    """

    field_spec: object
    vlasov: object
    f0: DistFn
    n_realizations: int
    epsilons: tuple
    compare_times: tuple
    master_seed: int = 0
    workers: int = 1
    randomize_f0: bool = False
    f0_amplitude: float = 0.05

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise ValueError("need at least one epsilon")
        if any(not 0.0 < e < 1.0 for e in eps):
            raise ValueError(f"epsilons must lie in (0, 1), got {eps}")
        if list(eps) != sorted(set(eps), reverse=True):
            raise ValueError("epsilons must be distinct and sorted descending")
        object.__setattr__(self, "epsilons", eps)
        ct = tuple(float(t) for t in self.compare_times)
        if not ct or ct[-1] <= 0.0:
            raise ValueError("compare_times must end at a positive horizon")
        if list(ct) != sorted(set(ct)) or ct[0] < 0.0:
            raise ValueError("compare_times must be distinct, ascending, nonnegative")
        if ct[-1] > self.vlasov.t_end * (1.0 + 1e-12):
            raise ValueError(
                f"compare horizon {ct[-1]} exceeds the template t_end {self.vlasov.t_end}"
            )
        object.__setattr__(self, "compare_times", ct)
        _compare_lattice(ct)
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if not 0.0 <= self.f0_amplitude < 1.0:
            raise ValueError("f0_amplitude must lie in [0, 1)")
        if self.field_spec is None:
            if self.vlasov.field != SELF_CONSISTENT:
                raise ValueError(
                    "field_spec may only be omitted for self-consistent templates"
                )
        else:
            if self.vlasov.field is not None:
                raise ValueError(
                    "template field slot must be empty; realizations fill it"
                )
            if not isinstance(self.field_spec, (SpectralFieldSpec, BumpFieldSpec)):
                raise ValueError(
                    f"unsupported field spec type {type(self.field_spec).__name__}"
                )
        if self.f0.grid != self.vlasov.grid:
            raise ValueError("initial data and solver template grids differ")


def _scaled_config(cfg, epsilon):
    """Per-epsilon solver config: dt scaled like eps^2 from the template,
    rounded down so an integer number of steps spans each lattice cell."""
    delta, marks = _compare_lattice(cfg.compare_times)
    t_last = cfg.compare_times[-1]
    target = cfg.vlasov.dt * (epsilon / cfg.vlasov.epsilon) ** 2
    per_cell = max(1, math.ceil(delta / target - 1e-12))
    dt = delta / per_cell
    steps = tuple(m * per_cell for m in marks)
    solver = replace(cfg.vlasov, epsilon=epsilon, dt=dt, t_end=t_last)
    return solver, steps


def _realize(spec, seed, epsilon, t_last):
    child = replace(spec, seed=seed)
    if isinstance(spec, SpectralFieldSpec):
        return sample_spectral(child)
    pad = spec.tau + 1.0
    return sample_bump(child, (-pad, t_last / epsilon**2 + pad))


def _run_realization(task):
    """Worker body: sample the field, run the kinetic solve, return the
    x-averaged profiles at the requested steps."""
    index, seed, field_spec, solver, f0, steps, randomize, amp = task
    if randomize:
        u = rng.uniform01(seed, _TAG_F0)
        mod = 1.0 + amp * np.cos(solver.grid.x - 2.0 * math.pi * u)
        f0 = DistFn(solver.grid, f0.values * mod[:, None], time=f0.time)
    if field_spec is not None:
        field = _realize(field_spec, seed, solver.epsilon, solver.t_end)
        solver = replace(solver, field=field)
    try:
        traj = run(
            solver, f0, diag_stride=max(1, solver.n_steps()), snapshot_steps=steps
        )
    except VlasovError as err:
        # per-realization CFL violations depend on the sampled amplitude;
        # dropping keeps one hot sample from sinking the whole sweep
        return index, None, str(err), math.nan, math.nan
    if traj.aborted:
        return index, None, traj.abort_reason, math.nan, math.nan
    profs = np.stack([p.values for p in traj.profiles])
    return (
        index,
        profs,
        None,
        float(traj.scalar("mass")[-1]),
        float(traj.scalar("boundary_loss")[-1]),
    )


@dataclass(frozen=True)
class EnsembleReport:
    """Per (epsilon, compare time): ensemble mean x-averaged profile with
    per-node standard error, and distances to the diffusion reference.
    weak_se is the standard error of the winning test moment, the floor
    below which the weak distance is statistically indistinguishable
    from zero."""

    grid: object
    epsilons: tuple
    times: tuple
    mean: np.ndarray  # (n_eps, n_times, nv)
    stderr: np.ndarray
    weak_dist: np.ndarray  # (n_eps, n_times)
    weak_se: np.ndarray
    l1_dist: np.ndarray
    l2_dist: np.ndarray
    reference: np.ndarray  # (n_times, nv)
    n_kept: tuple
    n_dropped: tuple
    dropped_flag: bool
    final_mass: np.ndarray  # (n_eps,) kept-realization mean
    boundary_loss: np.ndarray
    master_seed: int
    wall_clock: float
    drop_log: tuple = ()

    def __post_init__(self):
        if not np.isfinite(self.stderr).all():
            raise ValueError("standard errors must be finite")
        for name in ("weak_dist", "l1_dist", "l2_dist"):
            if np.any(np.asarray(getattr(self, name)) < 0.0):
                raise ValueError(f"{name} must be nonnegative")


def reference_diffusion(cfg, method="auto", ref_dt=0.005):
    """Velocity-diffusion reference: the x-averaged initial state evolved
    under the limiting coefficient of the field statistics.

    method 'closed_form' uses the spectral mode sum, 'quadrature' the
    autocorrelation quadrature (works for both spec kinds and serves as
    the cross-check route); 'auto' picks closed form for spectral specs.
    Assumes a stationary spectrum.  Returns (times, profiles, D table).
    """
    grid = cfg.vlasov.grid
    spec = cfg.field_spec
    if method not in ("auto", "closed_form", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if spec is None:
        table = np.zeros(grid.nv)
    else:
        closed_ok = (
            isinstance(spec, SpectralFieldSpec) and spec.autocorr_kind == "triangular"
        )
        if method == "auto":
            method = "closed_form" if closed_ok else "quadrature"
        if method == "closed_form":
            if not closed_ok:
                raise ValueError(
                    "closed form exists for triangular-envelope spectral specs only"
                )
            if any(callable(e) for _, e, _ in spec.modes):
                raise ValueError("reference diffusion assumes a stationary spectrum")
            mat = dtau_sinc2(spec, spec.tau, grid.v)
        else:
            if isinstance(spec, SpectralFieldSpec):
                tensor = AutocorrTensor.from_spectral(spec)
            else:
                tensor = AutocorrTensor.from_bump(spec)
            mat = dtau_quadrature(tensor, 0.0, grid.v)
        table = mat.values[:, 0, 0].copy()
        floor = float(table.min())
        if floor < 0.0:
            scale = max(float(table.max()), 1e-300)
            if floor < -1e-10 * scale:
                raise ValueError(
                    f"limiting coefficient has a negative node ({floor!r}); "
                    "the field statistics are inconsistent"
                )
            table[table < 0.0] = 0.0  # quadrature roundoff only

    delta, marks = _compare_lattice(cfg.compare_times)
    per_cell = max(1, math.ceil(delta / ref_dt - 1e-12))
    prof0 = space_average(cfg.f0)
    traj = run_diffusion(
        DiffusionRun(f=prof0, D=table, dt=delta / per_cell, t_end=cfg.compare_times[-1]),
        snapshot_stride=per_cell,
    )
    profiles = tuple(traj.snapshots[m] for m in marks)
    return cfg.compare_times, profiles, table


def _test_matrix(grid, f0):
    prof = space_average(f0)
    v_th = math.sqrt(velocity_moment(prof, 2) / velocity_moment(prof))
    test_set = hermite_test_set(grid, v_th=v_th)
    return np.stack([psi.values for psi in test_set]), test_set


def run_ensemble(cfg):
    """Full sweep: for every epsilon, n_realizations independent field
    samples, each run through the kinetic solver; ordered reduction into
    means, standard errors, and distances to the diffusion reference."""
    t_start = time.perf_counter()
    grid = cfg.vlasov.grid
    _, ref_profiles, _ = reference_diffusion(cfg)
    ref = np.stack([p.values for p in ref_profiles])
    psi, _ = _test_matrix(grid, cfg.f0)
    w = grid.v_weights
    ref_moments = ref @ (w[:, None] * psi.T)  # (n_times, n_tests)

    n_eps, n_times = len(cfg.epsilons), len(cfg.compare_times)
    mean = np.empty((n_eps, n_times, grid.nv))
    stderr = np.empty_like(mean)
    weak_dist = np.empty((n_eps, n_times))
    weak_se = np.empty_like(weak_dist)
    l1_dist = np.empty_like(weak_dist)
    l2_dist = np.empty_like(weak_dist)
    n_kept, n_dropped, drop_log = [], [], []
    final_mass = np.empty(n_eps)
    boundary_loss = np.empty(n_eps)

    for ie, eps in enumerate(cfg.epsilons):
        solver, steps = _scaled_config(cfg, eps)
        tasks = [
            (
                r,
                rng.stream_seed(cfg.master_seed, ie, r),
                cfg.field_spec,
                solver,
                cfg.f0,
                steps,
                cfg.randomize_f0,
                cfg.f0_amplitude,
            )
            for r in range(cfg.n_realizations)
        ]
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_run_realization, tasks, chunksize=1))
        else:
            results = [_run_realization(t) for t in tasks]

        kept, masses, losses = [], [], []
        for index, profs, reason, m_fin, b_loss in results:
            if profs is None:
                msg = f"eps={eps:g} realization {index} dropped: {reason}"
                log.warning(msg)
                drop_log.append(msg)
                continue
            kept.append(profs)
            masses.append(m_fin)
            losses.append(b_loss)
        if not kept:
            raise EnsembleError(f"every realization aborted at eps = {eps:g}")
        stack = np.stack(kept)  # (n_kept, n_times, nv)
        n = stack.shape[0]
        n_kept.append(n)
        n_dropped.append(cfg.n_realizations - n)
        mean[ie] = stack.mean(axis=0)
        if n > 1:
            stderr[ie] = stack.std(axis=0, ddof=1) / math.sqrt(n)
        else:
            stderr[ie] = 0.0
        final_mass[ie] = float(np.mean(masses))
        boundary_loss[ie] = float(np.mean(losses))

        moments = stack @ (w[:, None] * psi.T)  # (n_kept, n_times, n_tests)
        m_mean = moments.mean(axis=0)
        m_se = (
            moments.std(axis=0, ddof=1) / math.sqrt(n)
            if n > 1
            else np.zeros_like(m_mean)
        )
        gap = np.abs(m_mean - ref_moments)
        best = gap.argmax(axis=1)
        rows = np.arange(n_times)
        weak_dist[ie] = gap[rows, best]
        weak_se[ie] = m_se[rows, best]
        diff = mean[ie] - ref
        l1_dist[ie] = np.abs(diff) @ w
        l2_dist[ie] = np.sqrt((diff**2) @ w)

    dropped_frac = max(
        d / cfg.n_realizations for d in n_dropped
    )
    return EnsembleReport(
        grid=grid,
        epsilons=cfg.epsilons,
        times=cfg.compare_times,
        mean=mean,
        stderr=stderr,
        weak_dist=weak_dist,
        weak_se=weak_se,
        l1_dist=l1_dist,
        l2_dist=l2_dist,
        reference=ref,
        n_kept=tuple(n_kept),
        n_dropped=tuple(n_dropped),
        dropped_flag=dropped_frac > 0.05,
        final_mass=final_mass,
        boundary_loss=boundary_loss,
        master_seed=cfg.master_seed,
        wall_clock=time.perf_counter() - t_start,
        drop_log=tuple(drop_log),
    )


@dataclass(frozen=True)
class SweepReport:
    """Log-log convergence fit per compare time; slope is NaN where too
    few points rise above the statistical floor."""

    times: tuple
    slopes: np.ndarray  # (n_times,) of d log(dist) / d log(eps)
    noise_limited: np.ndarray  # (n_eps, n_times) bool
    n_fit: tuple  # points entering each fit


def epsilon_sweep_report(report):
    """Least-squares slope of log(weak distance) against log(epsilon) at
    each compare time.  Entries within twice their standard error of zero
    are noise-limited and excluded; fewer than two usable points makes
    the slope indeterminate (NaN)."""
    if len(report.epsilons) < 3:
        raise ValueError("sweep fit needs at least 3 epsilon values")
    eps = np.asarray(report.epsilons)
    noise = report.weak_dist < 2.0 * report.weak_se
    n_times = len(report.times)
    slopes = np.full(n_times, math.nan)
    n_fit = []
    for j in range(n_times):
        use = (~noise[:, j]) & (report.weak_dist[:, j] > 0.0)
        n_fit.append(int(use.sum()))
        if n_fit[-1] >= 2:
            slopes[j] = np.polyfit(
                np.log(eps[use]), np.log(report.weak_dist[use, j]), 1
            )[0]
    return SweepReport(
        times=report.times,
        slopes=slopes,
        noise_limited=noise,
        n_fit=tuple(n_fit),
    )


@dataclass(frozen=True)
class HomogenizationReport:
    """Self-consistent decreasing-epsilon study: x-homogenization of f,
    the time-RMS electric field, and the drift of the x-averaged profile
    over the horizon (the trivialization proxy)."""

    epsilons: tuple
    times: tuple
    departure: np.ndarray  # (n_eps, n_times) weak distance to own x-average
    field_rms: np.ndarray  # (n_eps,)
    profile_drift: np.ndarray  # (n_eps,)


def homogenization_experiment(cfg):
    """One deterministic self-consistent run per epsilon; no ensemble
    averaging, the dynamics is not random here."""
    if cfg.vlasov.field != SELF_CONSISTENT:
        raise ValueError("homogenization experiment needs a self-consistent template")
    grid = cfg.vlasov.grid
    _, test_set = _test_matrix(grid, cfg.f0)
    n_eps, n_times = len(cfg.epsilons), len(cfg.compare_times)
    departure = np.empty((n_eps, n_times))
    field_rms = np.empty(n_eps)
    drift = np.empty(n_eps)
    prof0 = space_average(cfg.f0)
    for ie, eps in enumerate(cfg.epsilons):
        solver, steps = _scaled_config(cfg, eps)
        traj = run(solver, cfg.f0, diag_stride=1, snapshot_steps=steps)
        if traj.aborted:
            raise VlasovError(traj.abort_reason)
        for j, snap in enumerate(traj.snapshots):
            departure[ie, j] = weak_departure(snap, space_average(snap), test_set)
        field_rms[ie] = math.sqrt(float(np.mean(traj.scalar("field_l2") ** 2)))
        last = traj.profiles[-1]
        drift[ie] = lp_norm(VelocityFn(grid, last.values - prof0.values))
    return HomogenizationReport(
        epsilons=cfg.epsilons,
        times=cfg.compare_times,
        departure=departure,
        field_rms=field_rms,
        profile_drift=drift,
    )
