"""Velocity-space diffusion and the coupled wave-particle quasilinear
system.

The diffusion solver is a conservative finite-volume scheme on the
trapezoid cells of the velocity grid (half-width end cells), with
face-averaged coefficients and zero-flux boundaries, so the discrete mass
functional of phasespace is conserved by construction.  The quasilinear
driver couples it to per-mode wave-energy ODEs through the resonant
growth rate: energies update by their exact exponential each step, the
diffusion coefficient is reassembled from the updated spectrum, and the
distribution diffuses one step.  Saturation is whatever the mechanism
produces; nothing caps growth except the configured overflow guard, and
divergence is reported, not hidden.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from . import dispersion
from .diffmat import dql_limit
from .phasespace import VelocityFn, lp_norm, velocity_moment

SCHEMES = ("crank_nicolson", "implicit_euler")

MODES = ("frozen_dispersion", "live_dispersion")


class QlRunError(RuntimeError):
    """Quasilinear system left its validity domain.

    When raised for wave-energy divergence, the partial history up to the
    last finite state is attached as .trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


def _coefficient_table(D, nv):
    vals = np.asarray(getattr(D, "values", D), dtype=np.float64)
    if vals.ndim == 3:
        if vals.shape[1:] != (1, 1):
            raise ValueError(
                "matrix-valued diffusion tables are not supported in 1V; "
                f"got shape {vals.shape}"
            )
        vals = vals[:, 0, 0]
    if vals.shape != (nv,):
        raise ValueError(f"coefficient table shape {vals.shape}, expected ({nv},)")
    if not np.isfinite(vals).all():
        raise ValueError("diffusion coefficient table has non-finite entries")
    if float(vals.min()) < 0.0:
        j = int(vals.argmin())
        raise ValueError(
            f"diffusion coefficient negative at node {j} "
            f"({vals[j]!r}); PSD required"
        )
    return vals


def diffuse_step(f, D, dt, scheme="crank_nicolson"):
    """One step of d_t f = d_v (D d_v f) with zero-flux boundaries.

    D is a nodewise table (array, VelocityFn, or 1x1 matrix table).  The
    flux form telescopes, so the trapezoid mass of f is conserved to
    roundoff regardless of D and dt.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    g = f.grid
    vals = _coefficient_table(D, g.nv)
    w = g.v_weights
    face = 0.5 * (vals[1:] + vals[:-1]) / g.dv  # (nv-1,) flux coefficients
    theta = 0.5 if scheme == "crank_nicolson" else 1.0

    # rows of A = W^-1 L, L the zero-flux flux-difference operator
    up = np.zeros(g.nv)
    lo = np.zeros(g.nv)
    di = np.zeros(g.nv)
    up[:-1] = face / w[:-1]  # A[j, j+1]
    lo[1:] = face / w[1:]  # A[j, j-1]
    di[:-1] -= face / w[:-1]
    di[1:] -= face / w[1:]

    rhs = f.values.copy()
    if scheme == "crank_nicolson":
        af = di * f.values
        af[:-1] += up[:-1] * f.values[1:]
        af[1:] += lo[1:] * f.values[:-1]
        rhs += (0.5 * dt) * af

    band = np.zeros((3, g.nv))
    band[0, 1:] = -(theta * dt) * up[:-1]
    band[1] = 1.0 - (theta * dt) * di
    band[2, :-1] = -(theta * dt) * lo[1:]
    try:
        new = solve_banded((1, 1), band, rhs)
    except np.linalg.LinAlgError as exc:
        raise QlRunError(f"diffusion solve failed: {exc}") from exc
    return VelocityFn(g, new, time=f.time + dt)


def face_flux(f, D):
    """D_face (f_{j+1} - f_j)/dv at the nv-1 interior faces; the residual
    that must vanish at a zero-flux steady state wherever D > 0."""
    g = f.grid
    vals = _coefficient_table(D, g.nv)
    return 0.5 * (vals[1:] + vals[:-1]) * np.diff(f.values) / g.dv


@dataclass(frozen=True)
class DiffusionRun:
    """Plain diffusion solve: static table or coefficient closure (t, f)
    -> table, revalidated at every evaluation."""

    f: VelocityFn
    D: object
    dt: float
    t_end: float
    scheme: str = "crank_nicolson"

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.t_end < 0.0:
            raise ValueError(f"t_end must be nonnegative, got {self.t_end!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not callable(self.D):
            _coefficient_table(self.D, self.f.grid.nv)

    def coefficient(self, t, f):
        table = self.D(t, f) if callable(self.D) else self.D
        return _coefficient_table(table, self.f.grid.nv)


@dataclass(frozen=True)
class DiffusionTrajectory:
    t: np.ndarray
    mass: np.ndarray
    l2: np.ndarray
    flux_linf: np.ndarray
    snapshots: tuple


def run_diffusion(run, snapshot_stride=None):
    """March the diffusion solve to t_end, recording mass, L2 norm and the
    worst face flux after every step."""
    n = int(round(run.t_end / run.dt))
    f = run.f
    ts, masses, l2s = [f.time], [velocity_moment(f)], [lp_norm(f)]
    table0 = run.coefficient(f.time, f)
    fluxes = [float(np.max(np.abs(face_flux(f, table0))))]
    snaps = [f]
    for i in range(1, n + 1):
        table = run.coefficient(f.time, f)
        f = diffuse_step(f, table, run.dt, run.scheme)
        ts.append(f.time)
        masses.append(velocity_moment(f))
        l2s.append(lp_norm(f))
        fluxes.append(float(np.max(np.abs(face_flux(f, table)))))
        if i == n or (snapshot_stride is not None and i % snapshot_stride == 0):
            snaps.append(f)
    return DiffusionTrajectory(
        t=np.array(ts), mass=np.array(masses), l2=np.array(l2s),
        flux_linf=np.array(fluxes), snapshots=tuple(snaps),
    )


# ---------------------------------------------------------------------------
# wave spectrum


@dataclass(frozen=True)
class WaveSpectrum:
    """Per-mode wave energies with their frequency table.

    modes is a tuple of (k, energy, omega) with integer nonzero k; every
    mode needs its mirror (-k, same energy, -omega), since the underlying
    field is real.
    """

    modes: tuple

    def __post_init__(self):
        norm = []
        seen = {}
        for k, e, w in self.modes:
            ki = int(k)
            if ki != k or ki == 0:
                raise ValueError(f"mode wavenumbers must be nonzero integers, got {k!r}")
            if e < 0.0:
                raise ValueError(f"mode {ki} carries negative energy {e!r}")
            if ki in seen:
                raise ValueError(f"duplicate mode k = {ki}")
            seen[ki] = (float(e), float(w))
            norm.append((ki, float(e), float(w)))
        for ki, (e, w) in seen.items():
            if -ki not in seen:
                raise ValueError(f"mode k = {ki} lacks its -k partner")
            e2, w2 = seen[-ki]
            if e2 != e:
                raise ValueError(f"modes +-{abs(ki)} carry unequal energies")
            if w2 != -w:
                raise ValueError(f"omega must be odd in k; modes +-{abs(ki)} violate it")
        object.__setattr__(self, "modes", tuple(norm))

    @property
    def wavenumbers(self):
        return tuple(k for k, _, _ in self.modes)

    @property
    def energies(self):
        return np.array([e for _, e, _ in self.modes])

    @property
    def omegas(self):
        return np.array([w for _, _, w in self.modes])

    def total_energy(self):
        return float(self.energies.sum())

    def with_energies(self, energies):
        return WaveSpectrum(
            modes=tuple(
                (k, float(e), w)
                for (k, _, w), e in zip(self.modes, energies)
            )
        )

    def wave_momentum(self, omega_p=1.0):
        """Sum of k E_k / (omega_p^2 omega_k); the quantity whose drift
        mirrors the particles' first-moment drift under the resonant
        growth rate."""
        return float(
            sum(k * e / (omega_p**2 * w) for k, e, w in self.modes if w != 0.0)
        )


def bohm_gross_spectrum(wavenumbers, energies, v_th=1.0, omega_p=1.0):
    """Spectrum with omega(k) from the warm-plasma branch, mirrored over
    +-k.  wavenumbers lists the positive side only."""
    modes = []
    for k, e in zip(wavenumbers, energies):
        w = dispersion.bohm_gross(k, v_th, omega_p)
        modes.append((k, e, math.copysign(w, k)))
        modes.append((-k, e, -math.copysign(w, k)))
    return WaveSpectrum(modes=tuple(modes))


def assemble_ql_coefficient(
    spectrum, v_grid, regularization="lorentzian", width=None, tau_reg=None, t=0.0
):
    """Nodewise quasilinear coefficient for the current spectrum; shares
    the code path of the general resonant-matrix assembly, so the two are
    bitwise equal."""
    if not spectrum.modes:
        return np.zeros(np.asarray(v_grid).shape[0])
    mat = dql_limit(
        spectrum.modes, v_grid, t=t,
        regularization=regularization, width=width, tau_reg=tau_reg,
    )
    return mat.values[:, 0, 0]


# ---------------------------------------------------------------------------
# the coupled quasilinear system


@dataclass(frozen=True)
class QlTrajectory:
    t: np.ndarray
    energies: np.ndarray  # (n_times, n_modes)
    gammas: np.ndarray  # (n_times, n_modes); zeros in row 0
    mass: np.ndarray
    l2: np.ndarray
    momentum_particles: np.ndarray
    momentum_waves: np.ndarray
    max_slope: np.ndarray  # largest positive slope inside the resonant window
    snapshots: tuple
    spectrum: WaveSpectrum  # final state
    resonant_window: tuple
    diverged: bool = False
    diverged_step: int = 0
    live_fallbacks: int = 0


def _resonant_window(spectrum):
    vphase = [w / k for k, _, w in spectrum.modes if k > 0]
    if not vphase:
        return (0.0, 0.0)
    return (min(vphase), max(vphase))


def _window_slope(f, window):
    lo, hi = window
    v = f.grid.v
    sel = (v >= lo) & (v <= hi)
    if not sel.any():
        return 0.0
    slope = np.gradient(f.values, v)
    return max(0.0, float(slope[sel].max()))


def ql_system_run(
    f0,
    spectrum0,
    dt,
    t_end,
    mode="frozen_dispersion",
    omega_p=1.0,
    regularization="lorentzian",
    width=None,
    tau_reg=None,
    scheme="crank_nicolson",
    snapshot_stride=None,
    energy_cap=1e60,
):
    """Evolve the closed system: resonant growth rates from the current
    profile, exact exponential energy update, coefficient reassembly,
    one diffusion step.

    frozen_dispersion keeps the spectrum's frequency table; live mode
    re-solves the complex root of each growing mode every step (warm
    started from the previous root).  Damped modes keep the table
    frequency with the resonant estimate: gridded data has no analytic
    continuation below the axis, so there is no root to find there.  A
    growing-mode solve that still fails falls back the same way and is
    not retried (the estimate can misclassify a mode whose true resonance
    sits far from the table frequency; one failed hunt per mode is enough
    to establish that).  The fallback count is reported.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    g = f0.grid
    window = _resonant_window(spectrum0)
    n = int(round(t_end / dt))
    spectrum = spectrum0
    f = f0

    times = [f.time]
    e_hist = [spectrum.energies]
    g_hist = [np.zeros(len(spectrum.modes))]
    masses = [velocity_moment(f)]
    l2s = [lp_norm(f)]
    mom_p = [velocity_moment(f, order=1)]
    mom_w = [spectrum.wave_momentum(omega_p)]
    slopes = [_window_slope(f, window)]
    snaps = [f]
    diverged = False
    diverged_step = 0
    fallbacks = 0
    warm = {}  # k -> previous live root
    dead = set()  # modes whose live solve failed; not retried

    for i in range(1, n + 1):
        pv = f.values
        if -1e-10 * pv.max() < pv.min() < 0.0:
            # Crank-Nicolson can leave negative roundoff in the far tail
            # and the profile wrapper is strict; the growth-rate evaluation
            # sees a clipped copy, the evolved state is untouched
            pv = np.maximum(pv, 0.0)
        profile = dispersion.gridded_profile(VelocityFn(g, pv, time=f.time))
        # solve the k > 0 half only and mirror: gamma is even and omega odd
        # in k, and doing both sides independently can break the spectrum's
        # exact pair symmetry by roundoff
        half = {}
        for k, e, w in spectrum.modes:
            if k < 0:
                continue
            est = dispersion.ql_growth_rate(profile, k, w, omega_p)
            if mode == "live_dispersion" and est > 0.0 and k not in dead:
                try:
                    root = dispersion.solve_root(
                        profile, k, omega_p=omega_p,
                        initial=warm.get(k), tol=1e-8,
                    )
                    warm[k] = complex(root.omega, root.gamma)
                    half[k] = (root.gamma, root.omega)
                except dispersion.DispersionError:
                    fallbacks += 1
                    warm.pop(k, None)
                    dead.add(k)
                    half[k] = (est, w)
            else:
                half[k] = (est, w)
        gammas = np.empty(len(spectrum.modes))
        new_modes = []
        for j, (k, e, _) in enumerate(spectrum.modes):
            gam, w = half[abs(k)]
            gammas[j] = gam
            new_modes.append(
                (k, e * math.exp(2.0 * gam * dt), w if k > 0 else -w)
            )
        spectrum = WaveSpectrum(modes=tuple(new_modes))

        if not np.isfinite(spectrum.energies).all() or spectrum.total_energy() > energy_cap:
            diverged = True
            diverged_step = i
            if snaps[-1] is not f:
                snaps.append(f)  # last finite state
            break

        table = assemble_ql_coefficient(
            spectrum, g.v, regularization=regularization,
            width=width, tau_reg=tau_reg, t=f.time,
        )
        f = diffuse_step(f, table, dt, scheme=scheme)

        times.append(f.time)
        e_hist.append(spectrum.energies)
        g_hist.append(gammas)
        masses.append(velocity_moment(f))
        l2s.append(lp_norm(f))
        mom_p.append(velocity_moment(f, order=1))
        mom_w.append(spectrum.wave_momentum(omega_p))
        slopes.append(_window_slope(f, window))
        if i == n or (snapshot_stride is not None and i % snapshot_stride == 0):
            snaps.append(f)

    out = QlTrajectory(
        t=np.array(times),
        energies=np.array(e_hist),
        gammas=np.array(g_hist),
        mass=np.array(masses),
        l2=np.array(l2s),
        momentum_particles=np.array(mom_p),
        momentum_waves=np.array(mom_w),
        max_slope=np.array(slopes),
        snapshots=tuple(snaps),
        spectrum=spectrum,
        resonant_window=window,
        diverged=diverged,
        diverged_step=diverged_step,
        live_fallbacks=fallbacks,
    )
    if diverged:
        raise QlRunError(
            f"wave energy diverged at step {diverged_step} "
            f"(t = {diverged_step * dt:g}): total {spectrum.total_energy()!r} "
            f"exceeds the overflow guard {energy_cap:g}",
            trajectory=out,
        )
    return out
