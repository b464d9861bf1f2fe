"""Electrostatic dispersion relation: exact complex roots and the standard
approximations used to cross-check them.

The dielectric function for a spatially uniform velocity profile f is

    D(k, z) = 1 + (omega_p^2 / k^2) integral dv f'(v) / (z/k - v),

analytic in the upper half z-plane and continued through the real axis
along the Landau contour.  Profiles tagged as Maxwellian mixtures evaluate
D through the Faddeeva function, which *is* that continuation; gridded
profiles fall back to adaptive quadrature and are restricted to |Im z|
above a floor, since continuing raw grid data through the axis is
ill-posed.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.special import dawsn, wofz

from .phasespace import VelocityFn

SQRT_PI = math.sqrt(math.pi)
SQRT_2 = math.sqrt(2.0)

# gridded profiles cannot be continued below this |Im z| / omega_p
GRID_GAMMA_FLOOR = 1e-4


class DispersionError(RuntimeError):
    """Root search or kernel quadrature failed."""


@dataclass(frozen=True)
class VelocityProfile:
    """Normalized 1D velocity distribution, optionally carrying the
    analytic Maxwellian-mixture form it was built from.

    components, when present, is a tuple of (density, drift, width)
    triples summing to unit mass; value/deriv then use closed forms valid
    on all of R, and the dispersion integral has an exact continuation.
    """

    f: VelocityFn
    tag: str = None
    components: tuple = None

    def __post_init__(self):
        vals = self.f.values
        if float(vals.min()) < 0.0:
            raise ValueError("velocity profile must be nonnegative")
        mass = self.mass
        if abs(mass - 1.0) > 1e-8:
            raise ValueError(
                f"profile mass {mass!r} deviates from 1 beyond 1e-8; "
                "widen the velocity grid"
            )
        if self.components is not None:
            comp = tuple((float(n), float(u), float(a)) for n, u, a in self.components)
            if any(a <= 0 or n < 0 for n, _, a in comp):
                raise ValueError("mixture needs nonnegative densities, positive widths")
            object.__setattr__(self, "components", comp)

    @property
    def grid(self):
        return self.f.grid

    @property
    def mass(self):
        return float(self.f.values @ self.grid.v_weights)

    @property
    def v_th(self):
        """sqrt(second moment / mass), from the gridded values."""
        w = self.grid.v_weights
        second = float(self.f.values @ (w * self.grid.v**2))
        return math.sqrt(second / self.mass)

    def _spline(self):
        cached = self.__dict__.get("_spline_cache")
        if cached is None:
            cached = CubicSpline(self.grid.v, self.f.values)
            object.__setattr__(self, "_spline_cache", cached)
        return cached

    def value(self, v):
        v = np.asarray(v, dtype=float)
        if self.components is not None:
            out = np.zeros(v.shape)
            for n, u, a in self.components:
                out += n * np.exp(-((v - u) ** 2) / (2 * a * a)) / (SQRT_2 * SQRT_PI * a)
            return out
        vmax = self.grid.vmax
        inside = (v >= -vmax) & (v <= vmax)
        out = np.zeros(v.shape)
        out[inside] = self._spline()(v[inside])
        return out

    def deriv(self, v):
        v = np.asarray(v, dtype=float)
        if self.components is not None:
            out = np.zeros(v.shape)
            for n, u, a in self.components:
                g = n * np.exp(-((v - u) ** 2) / (2 * a * a)) / (SQRT_2 * SQRT_PI * a)
                out += -(v - u) / (a * a) * g
            return out
        vmax = self.grid.vmax
        inside = (v >= -vmax) & (v <= vmax)
        out = np.zeros(v.shape)
        out[inside] = self._spline_deriv()(v[inside])
        return out

    def _spline_deriv(self):
        cached = self.__dict__.get("_spline_deriv_cache")
        if cached is None:
            cached = self._spline().derivative()
            object.__setattr__(self, "_spline_deriv_cache", cached)
        return cached


def _profile_from_components(grid, components, tag):
    comp = tuple((float(n), float(u), float(a)) for n, u, a in components)
    vals = np.zeros(grid.nv)
    for n, u, a in comp:
        vals += n * np.exp(-((grid.v - u) ** 2) / (2 * a * a)) / (SQRT_2 * SQRT_PI * a)
    vf = VelocityFn(grid=grid, values=vals, time=0.0)
    return VelocityProfile(f=vf, tag=tag, components=comp)


def maxwellian_profile(grid, v_th=1.0):
    return _profile_from_components(grid, ((1.0, 0.0, v_th),), "maxwellian")


def bump_on_tail_profile(grid, n_bump, v_bump, v_bump_th, core_v_th=1.0):
    """Core Maxwellian plus a drifting bump of relative density n_bump."""
    if not 0.0 <= n_bump < 1.0:
        raise ValueError("bump density must lie in [0, 1)")
    comps = ((1.0 - n_bump, 0.0, core_v_th), (n_bump, v_bump, v_bump_th))
    return _profile_from_components(grid, comps, "bump_on_tail")


def gridded_profile(f):
    """Wrap measured or evolved velocity data with no analytic form."""
    return VelocityProfile(f=f)


# ---------------------------------------------------------------------------
# the dielectric function


def _check_k(k):
    ki = int(k)
    if ki != k or ki == 0:
        raise ValueError(f"wavenumber must be a nonzero integer, got {k!r}")
    return ki


def dispersion_value(profile, k, z, omega_p=1.0):
    """D(k, z) for complex z = omega + i gamma.

    Analytic mixtures: sum of Faddeeva-function terms, the Landau branch
    selected by the sign of k; entire in z.  Gridded profiles: adaptive
    quadrature of the spline derivative against the Cauchy kernel,
    restricted to |Im z| >= 1e-4 omega_p.
    """
    k = _check_k(k)
    z = complex(z)
    if profile.components is not None:
        total = 1.0 + 0.0j
        for n, u, a in profile.components:
            if n == 0.0:
                continue
            xi = (z / k - u) / (SQRT_2 * a)
            if k > 0:
                zeta = 1j * SQRT_PI * wofz(xi)
            else:
                zeta = -1j * SQRT_PI * wofz(-xi)
            total += (omega_p**2 / k**2) * (n / a**2) * (1.0 + xi * zeta)
        return total

    if abs(z.imag) < GRID_GAMMA_FLOOR * omega_p:
        raise DispersionError(
            f"gridded profile needs |Im z| >= {GRID_GAMMA_FLOOR:g} omega_p; "
            f"got {z.imag!r} (analytic continuation of grid data is ill-posed)"
        )
    zeta = z / k
    df = profile._spline_deriv()
    lo, hi = -profile.grid.vmax, profile.grid.vmax

    def integrand_re(v):
        d = zeta - v
        return float(df(v)) * d.real / (d.real**2 + d.imag**2)

    def integrand_im(v):
        d = zeta - v
        return -float(df(v)) * d.imag / (d.real**2 + d.imag**2)

    # subdivision hint at the Cauchy peak, snapped to the fixed velocity
    # grid: a breakpoint moving smoothly with z would make the quadrature
    # error direction-dependent and break the analyticity of the result
    pts = None
    if lo < zeta.real < hi:
        vg = profile.grid.v
        pts = [float(vg[int(np.argmin(np.abs(vg - zeta.real)))])]
    # request past the roundoff floor so quad subdivides as far as it can;
    # its "cannot reach tolerance" advisory is replaced by the explicit
    # error check below
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        re, re_err = quad(integrand_re, lo, hi, points=pts, limit=200,
                          epsabs=1e-11, epsrel=1e-11)
        im, im_err = quad(integrand_im, lo, hi, points=pts, limit=200,
                          epsabs=1e-11, epsrel=1e-11)
    scale = max(1.0, abs(complex(re, im)))
    if max(re_err, im_err) > 1e-6 * scale:
        raise DispersionError(
            f"Cauchy-kernel quadrature error {max(re_err, im_err):.2g} too "
            "large; Im z likely too close to the axis for this grid"
        )
    return 1.0 + (omega_p**2 / k**2) * complex(re, im)


def _real_axis_parts(profile, k, omega, omega_p):
    """(Re D, d Re D/d omega, Im D) at real omega for analytic mixtures.

    Im D comes out in closed form (sqrt(pi) x exp(-x^2) per component), so
    exponentially small damping rates survive with full relative accuracy
    instead of drowning in the cancellation noise of the complex route.
    """
    re = 1.0
    dre = 0.0
    im = 0.0
    sk = math.copysign(1.0, k)
    for n, u, a in profile.components:
        if n == 0.0:
            continue
        c = (omega_p**2 / k**2) * (n / a**2)
        x = (omega / k - u) / (SQRT_2 * a)
        dn = float(dawsn(x))
        re += c * (1.0 - 2.0 * x * dn)
        # d/dx [1 - 2 x Dawson] = 4 x^2 Dawson - 2 Dawson - 2 x
        dre += c * (4.0 * x * x * dn - 2.0 * dn - 2.0 * x) / (SQRT_2 * a * k)
        im += c * sk * SQRT_PI * x * math.exp(-x * x)
    return re, dre, im


@dataclass(frozen=True)
class DispersionRoot:
    k: int
    omega: float
    gamma: float
    residual: float


def bohm_gross(k, v_th, omega_p=1.0):
    """omega_p sqrt(1 + 3 k^2 lambda_D^2), lambda_D = v_th / omega_p."""
    lam = v_th / omega_p
    return omega_p * math.sqrt(1.0 + 3.0 * (k * lam) ** 2)


def ql_growth_rate(profile, k, omega, omega_p=1.0):
    """(pi/2)(omega_p^2/k^2) omega sign(k) f'(omega/k); the resonant
    1/|k| Jacobian of the delta is folded into the sign factor."""
    k = _check_k(k)
    vr = omega / k
    if profile.components is not None:
        slope = float(profile.deriv(np.array([vr]))[0])
    else:
        vg = profile.grid.v
        if not vg[0] <= vr <= vg[-1]:
            raise DispersionError(
                f"resonant velocity {vr!r} outside the profile grid"
            )
        slope = float(np.interp(vr, vg, np.gradient(profile.f.values, vg)))
    return (math.pi / 2.0) * (omega_p**2 / k**2) * omega * math.copysign(1.0, k) * slope


def solve_root(profile, k, initial=None, omega_p=1.0, tol=1e-10, max_iter=50):
    """Complex-Newton root of D(k, z) with secant fallback.

    Default start: Bohm-Gross frequency (odd in k) with the quasilinear
    growth-rate estimate as the imaginary part.  Analytic profiles whose
    root lands within 1e-6 max(|omega|, omega_p) of the real axis are
    re-solved on the axis: real Newton on Re D, then
    gamma = -Im D / (d Re D/d omega), which resolves exponentially small
    damping exactly instead of leaving it at the Newton noise floor.
    """
    k = _check_k(k)
    if initial is None:
        w0 = math.copysign(bohm_gross(k, profile.v_th, omega_p), k)
        try:
            g0 = ql_growth_rate(profile, k, w0, omega_p)
        except DispersionError:
            g0 = 0.0
        # the growth-rate estimate is a weak-damping extrapolation; taken
        # at face value far from that regime it starts the iteration deep
        # in the exponential tail of the Faddeeva terms
        cap = 0.25 * max(abs(w0), omega_p)
        if abs(g0) > cap:
            g0 = math.copysign(cap, g0)
        if profile.components is None and abs(g0) < 2.0 * GRID_GAMMA_FLOOR * omega_p:
            g0 = -2.0 * GRID_GAMMA_FLOOR * omega_p
        initial = complex(w0, g0)

    z = complex(initial)
    prev = None
    val = dispersion_value(profile, k, z, omega_p)
    converged = False
    for _ in range(max_iter):
        if abs(val) < tol:
            converged = True
            break
        h = 1e-7 * max(1.0, abs(z))
        der = (
            dispersion_value(profile, k, z + h, omega_p)
            - dispersion_value(profile, k, z - h, omega_p)
        ) / (2.0 * h)
        if prev is not None and (not np.isfinite([der.real, der.imag]).all()
                                 or abs(der) < 1e-14):
            zp, vp = prev
            der = (val - vp) / (z - zp)
        if abs(der) < 1e-300:
            raise DispersionError("dispersion derivative vanished; bad start?")
        prev = (z, val)
        step = -val / der
        # keep iterates inside the region where the Faddeeva terms stay
        # finite: clamp the step, then backtrack while |D| grows
        cap = 0.5 * max(abs(z), omega_p)
        if abs(step) > cap:
            step *= cap / abs(step)
        accepted = False
        for _ in range(25):
            try:
                cand = dispersion_value(profile, k, z + step, omega_p)
            except DispersionError:
                step *= 0.5
                continue
            if np.isfinite([cand.real, cand.imag]).all() and abs(cand) < abs(val):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise DispersionError(
                f"iteration stalled at |D| = {abs(val):.3g}: no improving "
                "step (root may lie below the gridded-profile axis floor)"
            )
        z = z + step
        val = cand
    else:
        if abs(val) >= tol:
            raise DispersionError(
                f"no root after {max_iter} iterations; |D| = {abs(val):.3g}"
            )
        converged = True

    if profile.components is not None and abs(z.imag) < 1e-6 * max(abs(z.real), omega_p):
        w = z.real
        for _ in range(60):
            re, dre, _ = _real_axis_parts(profile, k, w, omega_p)
            step = re / dre
            w -= step
            if abs(step) < 1e-16 * max(1.0, abs(w)):
                break
        _, dre, im = _real_axis_parts(profile, k, w, omega_p)
        z = complex(w, -im / dre)
        val = dispersion_value(profile, k, z, omega_p)

    if not converged:
        raise DispersionError("root iteration did not converge")
    if abs(z.imag) > omega_p:
        raise DispersionError(
            f"root drifted to |gamma| = {abs(z.imag):.3g} > omega_p: "
            "unphysical branch"
        )
    return DispersionRoot(k=k, omega=float(z.real), gamma=float(z.imag),
                          residual=float(abs(val)))


# ---------------------------------------------------------------------------
# Penrose criterion


@dataclass(frozen=True)
class PenroseReport:
    stable: bool
    minima: tuple  # ((v_star, principal_value), ...)
    note: str = ""


def _penrose_integral(profile, vstar, fstar):
    c2 = (
        float(profile.value(np.array([vstar + 1e-4]))[0])
        - 2.0 * fstar
        + float(profile.value(np.array([vstar - 1e-4]))[0])
    ) / 1e-8

    def g(v):
        d = v - vstar
        if abs(d) < 1e-6:
            return 0.5 * c2
        return (float(profile.value(np.array([v]))[0]) - fstar) / (d * d)

    lo, hi = -profile.grid.vmax, profile.grid.vmax
    total = 0.0
    for a, b in ((lo, vstar - 1.0), (vstar - 1.0, vstar + 1.0), (vstar + 1.0, hi)):
        a, b = max(a, lo), min(b, hi)
        if a >= b:
            continue
        part, _ = quad(g, a, b, limit=200)
        total += part
    if profile.components is not None:
        tail_lo, _ = quad(g, lo - 60.0, lo, limit=200)
        tail_hi, _ = quad(g, hi, hi + 60.0, limit=200)
        total += tail_lo + tail_hi
        lo, hi = lo - 60.0, hi + 60.0
    # past the quadrature range f is (numerically) zero, so the remaining
    # tails integrate in closed form; dropping them would bias P by
    # O(f*/range), well above quadrature error
    total += -fstar / (vstar - lo) - fstar / (hi - vstar)
    return total


def penrose_check(profile):
    """Instability test: at each interior minimum v* of f, evaluate
    P(v*) = pv-integral (f(v) - f(v*)) / (v - v*)^2 dv; any P > 0 means
    some wavenumber band grows.  No interior minimum: stable by default.
    """
    vals = profile.value(profile.grid.v)
    v = profile.grid.v
    minima = []
    for i in range(1, v.size - 1):
        if vals[i] < vals[i - 1] and vals[i] < vals[i + 1]:
            d_lo = float(profile.deriv(np.array([v[i - 1]]))[0])
            d_hi = float(profile.deriv(np.array([v[i + 1]]))[0])
            if d_lo < 0.0 < d_hi:
                vstar = brentq(
                    lambda x: float(profile.deriv(np.array([x]))[0]),
                    v[i - 1], v[i + 1],
                )
            else:
                vstar = float(v[i])
            fstar = float(profile.value(np.array([vstar]))[0])
            minima.append((vstar, _penrose_integral(profile, vstar, fstar)))
    if not minima:
        return PenroseReport(stable=True, minima=(),
                             note="no interior minimum; stable by default")
    unstable = any(p > 0.0 for _, p in minima)
    return PenroseReport(stable=not unstable, minima=tuple(minima))
