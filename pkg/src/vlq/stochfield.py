"""Stochastic and WKB electric-field realizations.

Three constructions share the FieldRealization interface:

* spectral: random-phase mode sums with a stationary unit-variance
  envelope per wavenumber pair, whose fast-time autocorrelation is the
  triangular kernel with support (-tau, tau);
* bump: mean-zero amplitudes on smooth compactly supported bumps placed
  on a stratified random lattice in (fast time) x (circle);
* wkb: deterministic two-scale wave packets.

Every realization is a pure function of (seed, spec): evaluation draws
nothing at call time, it hashes cell and mode labels through vlq.rng, so
lazily evaluated fields are reproducible bit for bit regardless of the
order or parallelism of evaluation.

Statistical contracts (mean zero; decorrelation beyond fast-time lag tau;
dependence on time and space lags only) hold exactly by construction for
the triangular kind, not just asymptotically.  A stationary envelope with
indicator autocorrelation does not exist (Bochner: the transform of the
indicator is signed), so the indicator kind is analytic-only and its
sampler raises.  Likewise the cubic-exponential resonance-broadening
kernel is not positive-definite and cannot be sampled.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng

TWO_PI = 2.0 * math.pi

# hash stream tags; one per purpose so streams never alias
_TAG_PHASE = 1
_TAG_OFFSET = 2
_TAG_BLOCK = 3
_TAG_BUMP_T = 4
_TAG_BUMP_X = 5
_TAG_BUMP_AMP = 6
_TAG_SAMPLE = 7

AUTOCORR_KINDS = ("triangular", "indicator", "gaussian_rbt")
SAMPLED_KINDS = ("triangular",)


class FieldSpecError(ValueError):
    pass


class WindowError(ValueError):
    """Requested evaluation point lies outside the sampled index window."""


def _energy_at(energy, t):
    return float(energy(t)) if callable(energy) else float(energy)


@dataclass(frozen=True)
class SpectralFieldSpec:
    """Random-phase mode sum specification.

    modes lists (k, energy, omega) for both members of each +-k pair;
    energy may be a constant or a function of slow time.  tau is the
    envelope autocorrelation time.  rbt_diffusion feeds the gaussian_rbt
    kernel only.  gradient_projection records whether k (x) k / |k|^2
    applies downstream; in d = 1 it is the scalar 1 either way.
    """

    modes: tuple
    tau: float
    autocorr_kind: str = "triangular"
    rbt_diffusion: float = 0.0
    gradient_projection: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise FieldSpecError(f"tau must be positive, got {self.tau}")
        if self.autocorr_kind not in AUTOCORR_KINDS:
            raise FieldSpecError(f"unknown autocorr kind {self.autocorr_kind!r}")
        if self.autocorr_kind == "gaussian_rbt" and self.rbt_diffusion <= 0:
            raise FieldSpecError("gaussian_rbt kind needs rbt_diffusion > 0")
        by_k = {}
        for k, energy, omega in self.modes:
            k = int(k)
            if k == 0:
                raise FieldSpecError("k = 0 violates the zero-mean field condition")
            if k in by_k:
                raise FieldSpecError(f"duplicate mode k = {k}")
            by_k[k] = (energy, omega)
        for k, (energy, omega) in by_k.items():
            if -k not in by_k:
                raise FieldSpecError(f"mode k = {k} lacks its -k partner")
            e_here = _energy_at(energy, 0.0)
            e_mirror = _energy_at(by_k[-k][0], 0.0)
            if e_here < 0 or e_mirror < 0:
                raise FieldSpecError(f"negative energy at k = {k}")
            if not math.isclose(e_here, e_mirror, rel_tol=1e-12, abs_tol=1e-300):
                raise FieldSpecError(f"energy not even in k at k = {k}")
            if not math.isclose(omega, -by_k[-k][1], rel_tol=1e-12, abs_tol=1e-300):
                raise FieldSpecError(f"omega not odd in k at k = {k}")

    def positive_pairs(self):
        """(k, energy, omega) for k > 0, sorted by k."""
        return tuple(sorted((m for m in self.modes if m[0] > 0), key=lambda m: m[0]))

    def pair_arrays(self, t):
        pairs = self.positive_pairs()
        ks = np.array([p[0] for p in pairs], dtype=float)
        es = np.array([_energy_at(p[1], t) for p in pairs])
        ws = np.array([p[2] for p in pairs], dtype=float)
        return ks, es, ws

    def point_variance(self, t):
        """E[E(t,tau,x)^2] = sum over all modes of the energies."""
        _, es, _ = self.pair_arrays(t)
        return 2.0 * float(es.sum())


def autocorr_kernel(spec, sigma, k=None):
    """Envelope autocorrelation A_tau(sigma, k) for the spec's kind."""
    sigma = np.asarray(sigma, dtype=float)
    if spec.autocorr_kind == "triangular":
        return np.maximum(0.0, 1.0 - np.abs(sigma) / spec.tau)
    if spec.autocorr_kind == "indicator":
        return (np.abs(sigma) < spec.tau).astype(float)
    # gaussian_rbt: k-dependent cubic-exponential broadening
    kk = 1.0 if k is None else float(k) ** 2
    return np.exp(-kk * spec.rbt_diffusion * np.abs(sigma) ** 3 / 3.0)


def spectral_autocorr(spec, t, sigma, xi):
    """Statistical autocorrelation E[E(t,tau,x) E(t,tau-sigma,x-xi)]
    = sum_k energy(t,k) A_tau(sigma,k) cos(k xi - omega(k) sigma)."""
    sigma = np.asarray(sigma, dtype=float)
    xi = np.asarray(xi, dtype=float)
    ks, es, ws = spec.pair_arrays(t)
    out = np.zeros(np.broadcast(sigma, xi).shape)
    for k, e, w in zip(ks, es, ws):
        out += 2.0 * e * autocorr_kernel(spec, sigma, k) * np.cos(k * xi - w * sigma)
    return out


def _envelope(spec, pair_index, tau_fast):
    """Stationary unit-variance envelope with exactly triangular
    autocorrelation: Rademacher amplitudes on fast-time blocks of length
    tau, with one uniform random grid offset per pair.  The offset makes
    the block-overlap probability at lag s equal max(0, 1 - |s|/tau),
    which is the whole correlation since distinct blocks are independent.
    """
    offset = spec.tau * rng.uniform01(spec.seed, _TAG_OFFSET, pair_index)
    block = np.floor((np.asarray(tau_fast, dtype=float) - offset) / spec.tau)
    return rng.rademacher(spec.seed, _TAG_BLOCK, pair_index, block.astype(np.int64))


@dataclass(frozen=True)
class FieldRealization:
    """One sampled field; eval(t, tau, x) takes scalar times and scalar
    or array x, is periodic in x with period 2pi, and is pure."""

    kind: str
    spec: object
    eval: object
    domain: tuple = None

    def at_scaled_time(self, t, epsilon, x):
        """E^eps(t, x) = E(t, t/eps^2, x)."""
        return self.eval(t, t / epsilon**2, x)


def sample_spectral(spec):
    if spec.autocorr_kind not in SAMPLED_KINDS:
        raise FieldSpecError(
            f"no exact stationary sampler exists for kind "
            f"{spec.autocorr_kind!r}; analytic routes only"
        )
    pairs = spec.positive_pairs()
    ks = np.array([p[0] for p in pairs], dtype=float)
    ws = np.array([p[2] for p in pairs], dtype=float)
    energies = tuple(p[1] for p in pairs)
    n_pairs = len(pairs)
    phases = TWO_PI * rng.uniform01(spec.seed, _TAG_PHASE, np.arange(n_pairs))

    def _eval(t, tau, x):
        x = np.asarray(x, dtype=float)
        if n_pairs == 0:
            return np.zeros(x.shape)
        amp = 2.0 * np.sqrt([max(_energy_at(e, t), 0.0) for e in energies])
        a = _envelope(spec, np.arange(n_pairs), np.full(n_pairs, float(tau)))
        carrier = np.cos(np.multiply.outer(x, ks) - ws * tau + phases)
        return carrier @ (amp * a)

    return FieldRealization(kind="spectral", spec=spec, eval=_eval)


# ---------------------------------------------------------------------------
# bump construction


def mollifier(u):
    """C-infinity bump exp(-1/(1-u^2)) on |u| < 1, zero outside."""
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui * ui))
    return out


def mollifier_deriv(u):
    """d/du of the mollifier; vanishes smoothly at |u| = 1."""
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    s = 1.0 - ui * ui
    out[inside] = np.exp(-1.0 / s) * (-2.0 * ui / (s * s))
    return out


@dataclass(frozen=True)
class BumpFieldSpec:
    """Appendix-style germ-grain field on (fast time) x (circle).

    Fast-time cells are the intervals n/r + [-1/(2r), 1/(2r)], one bump
    center per cell; spatial cells are x_cells arcs of width 2pi/x_cells.
    The decorrelation time is tau = 1/r + rho since w_tau <= rho/2 keeps
    bumps from distinct fast-time cells at separation >= tau disjoint.
    amp_dist gaussian is available but non-conforming: the construction's
    almost-sure bounds assume bounded amplitudes.
    """

    r: float = 1.0
    rho: float = 1.0
    w_t: float = math.inf
    w_tau: float = 0.5
    w_x: float = 0.5
    amplitude: float = 1.0
    x_cells: int = 6
    amp_dist: str = "rademacher"
    gradient_potential: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.r < 1.0:
            raise FieldSpecError(f"r must be >= 1, got {self.r}")
        if self.rho < 1.0 / self.r:
            raise FieldSpecError(f"rho must be >= 1/r, got {self.rho}")
        if not 0 < self.w_tau <= self.rho / 2.0:
            raise FieldSpecError(f"w_tau must lie in (0, rho/2], got {self.w_tau}")
        if not 0 < self.w_x <= math.pi:
            raise FieldSpecError(f"w_x must lie in (0, pi], got {self.w_x}")
        if not self.w_t > 0:
            raise FieldSpecError(f"w_t must be positive, got {self.w_t}")
        if self.x_cells < 1:
            raise FieldSpecError("need at least one spatial cell")
        if self.amp_dist not in ("rademacher", "gaussian", "zero"):
            raise FieldSpecError(f"unknown amplitude distribution {self.amp_dist!r}")

    @property
    def tau(self):
        return 1.0 / self.r + self.rho

    @property
    def cell_density(self):
        """Bump centers per unit (fast time) x (arc length); the exact
        prefactor of the convolution identity."""
        return self.r * self.x_cells / TWO_PI

    def slow_profile(self, t):
        if math.isinf(self.w_t):
            return 1.0
        return float(mollifier(np.asarray(t) / self.w_t))

    def x_profile(self, u):
        if self.gradient_potential:
            return -mollifier_deriv(np.asarray(u) / self.w_x) / self.w_x
        return mollifier(np.asarray(u) / self.w_x)


def _bump_amplitudes(spec, ns, ks):
    if spec.amp_dist == "zero":
        return np.zeros(np.broadcast(ns, ks).shape)
    if spec.amp_dist == "gaussian":
        return rng.standard_normal(spec.seed, _TAG_BUMP_AMP, ns, ks)
    return rng.rademacher(spec.seed, _TAG_BUMP_AMP, ns, ks)


def sample_bump(spec, domain):
    """Realization valid for fast times inside domain = (tau_lo, tau_hi).

    The window exists to make out-of-range evaluation an error instead of
    a silent truncation; draws are counter-based, so widening the window
    later gives the same bumps inside it.
    """
    tau_lo, tau_hi = float(domain[0]), float(domain[1])
    if not tau_lo < tau_hi:
        raise WindowError(f"empty fast-time window {domain}")
    ks = np.arange(spec.x_cells)
    arc = TWO_PI / spec.x_cells
    centers_x = arc * (ks + rng.uniform01(spec.seed, _TAG_BUMP_X, ks))
    half_cell = 0.5 / spec.r

    def _eval(t, tau, x):
        if not tau_lo <= tau <= tau_hi:
            raise WindowError(
                f"fast time {tau} outside sampled window [{tau_lo}, {tau_hi}]"
            )
        x = np.asarray(x, dtype=float)
        slow = spec.slow_profile(t)
        if slow == 0.0:
            return np.zeros(x.shape)
        n_lo = math.ceil(spec.r * (tau - spec.w_tau) - 0.5)
        n_hi = math.floor(spec.r * (tau + spec.w_tau) + 0.5)
        ns = np.arange(n_lo, n_hi + 1)
        if ns.size == 0:
            return np.zeros(x.shape)
        # centers and amplitudes for the (n, k) cell grid
        nn = ns[:, None]
        kk = ks[None, :]
        t_centers = nn / spec.r + (2.0 * rng.uniform01(spec.seed, _TAG_BUMP_T, nn, kk) - 1.0) * half_cell
        alpha = _bump_amplitudes(spec, nn, kk)
        tau_part = mollifier((tau - t_centers) / spec.w_tau)  # (n, k)
        # periodic displacement from each center, wrapped to [-pi, pi)
        disp = np.mod(x[..., None] - centers_x + math.pi, TWO_PI) - math.pi
        x_part = spec.x_profile(disp)  # (..., k)
        weights = (alpha * tau_part).sum(axis=0)  # (k,)
        return spec.amplitude * slow * (x_part @ weights)

    return FieldRealization(
        kind="bump", spec=spec, eval=_eval, domain=(tau_lo, tau_hi)
    )


def _line_correlation(profile, width, lags, n_quad=801):
    """C(delta) = integral profile(delta + z) profile(z) dz for a profile
    supported on |z| < width, by composite Simpson."""
    z = np.linspace(-width, width, n_quad)
    base = profile(z)
    lags = np.asarray(lags, dtype=float)
    shifted = profile(lags[..., None] + z)
    from scipy.integrate import simpson

    return simpson(shifted * base, x=z, axis=-1)


def bump_autocorr(spec, t, s, sigma, xi, n_quad=801):
    """Analytic autocorrelation E[E(t,tau,x) E(s,tau-sigma,x-xi)].

    The cell average of the bump sum gives the correlation of the
    stratified construction exactly: cell_density times the convolution
    of the bump with itself in each separable factor, the spatial one
    taken on the circle.
    """
    sigma = np.asarray(sigma, dtype=float)
    xi = np.asarray(xi, dtype=float)
    c_tau = _line_correlation(
        lambda u: mollifier(u / spec.w_tau), spec.w_tau, sigma, n_quad
    )
    # wrap the spatial lag so the circle correlation is periodic
    xi_wrapped = np.mod(xi + math.pi, TWO_PI) - math.pi
    c_x = _line_correlation(spec.x_profile, spec.w_x, xi_wrapped, n_quad)
    pref = (
        spec.cell_density
        * spec.amplitude**2
        * spec.slow_profile(t)
        * spec.slow_profile(s)
    )
    return pref * c_tau * c_x


def bump_point_variance(spec, t):
    return float(bump_autocorr(spec, t, t, 0.0, 0.0))


# ---------------------------------------------------------------------------
# WKB fields


@dataclass(frozen=True)
class WKBFieldSpec:
    """Deterministic two-scale wave packets: amplitude even in k, phase
    Omega(t,k) = omega(k) t with omega odd, oscillating at 1/eps^2."""

    modes: tuple
    epsilon: float

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise FieldSpecError(f"epsilon must lie in (0,1), got {self.epsilon}")
        by_k = {int(k): (e0, w) for k, e0, w in self.modes}
        for k, (e0, w) in by_k.items():
            if k == 0:
                raise FieldSpecError("k = 0 violates the zero-mean field condition")
            if -k not in by_k:
                raise FieldSpecError(f"mode k = {k} lacks its -k partner")
            if not math.isclose(
                _energy_at(e0, 0.0), _energy_at(by_k[-k][0], 0.0), rel_tol=1e-12
            ):
                raise FieldSpecError(f"amplitude not even in k at k = {k}")
            if not math.isclose(w, -by_k[-k][1], rel_tol=1e-12, abs_tol=1e-300):
                raise FieldSpecError(f"omega not odd in k at k = {k}")

    def positive_pairs(self):
        return tuple(sorted((m for m in self.modes if m[0] > 0), key=lambda m: m[0]))


def eval_wkb(spec, t, x):
    """E(t,x) = sum over Hermitian pairs of 2 E0(t,k) cos(kx - omega(k) t / eps^2)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    for k, e0, w in spec.positive_pairs():
        out += 2.0 * _energy_at(e0, t) * np.cos(k * x - w * t / spec.epsilon**2)
    return out


def wkb_realization(spec):
    """Degenerate (deterministic) realization: the fast-time slot carries
    the WKB phase, so eval(t, t/eps^2, x) reproduces eval_wkb."""
    pairs = spec.positive_pairs()

    def _eval(t, tau, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for k, e0, w in pairs:
            out += 2.0 * _energy_at(e0, t) * np.cos(k * x - w * tau)
        return out

    return FieldRealization(kind="wkb", spec=spec, eval=_eval)


# ---------------------------------------------------------------------------
# empirical autocorrelation


def resample(real, index):
    """Sibling realization with a child seed; realization 0 is `real` itself."""
    if index == 0:
        return real
    child = replace(real.spec, seed=rng.stream_seed(real.spec.seed, _TAG_SAMPLE, index))
    if real.kind == "spectral":
        return sample_spectral(child)
    if real.kind == "bump":
        return sample_bump(child, real.domain)
    raise ValueError(f"cannot resample kind {real.kind!r}")


def estimate_autocorr(
    real,
    n_samples,
    lags,
    t=0.0,
    base=None,
    n_stationarity=None,
    target_se=None,
):
    """Monte-Carlo estimate of E[E(t,tau,x) E(t,tau-sigma,x-xi)].

    lags is (sigma_lags, xi_lags); the estimate covers their product
    grid.  A translation check re-estimates at three base points and
    flags disagreement beyond 3 combined standard errors.  Accumulation
    order is fixed by realization index, so results do not depend on how
    the work is scheduled.
    """
    from . import diffmat

    if n_samples < 2:
        raise ValueError("need n_samples >= 2 for an error bar")
    sigma_lags = np.asarray(lags[0], dtype=float)
    xi_lags = np.asarray(lags[1], dtype=float)
    if base is None:
        tau0 = getattr(real.spec, "tau", 1.0) * 4.0
        if real.domain is not None:
            tau0 = 0.5 * (real.domain[0] + real.domain[1])
        base = (tau0, 0.0)
    bases = [base, (base[0] + 0.37 * getattr(real.spec, "tau", 1.0), base[1] + 1.1),
             (base[0] + 0.81 * getattr(real.spec, "tau", 1.0), base[1] + 2.3)]
    n_stat = n_stationarity or min(n_samples, 2000)

    def _accumulate(n, base_pt):
        tau0, x0 = base_pt
        prods = np.empty((n, sigma_lags.size, xi_lags.size))
        for i in range(n):
            r_i = resample(real, i)
            e_base = r_i.eval(t, tau0, np.array([x0]))[0]
            for j, s in enumerate(sigma_lags):
                prods[i, j, :] = e_base * r_i.eval(t, tau0 - s, x0 - xi_lags)
        mean = prods.mean(axis=0)
        se = prods.std(axis=0, ddof=1) / math.sqrt(n)
        return mean, se

    mean, se = _accumulate(n_samples, bases[0])
    if target_se is not None and float(np.max(se)) > target_se:
        raise ValueError(
            f"standard error {float(np.max(se)):.3g} above requested "
            f"{target_se:.3g}; increase n_samples"
        )
    checks = [_accumulate(n_stat, b) for b in bases[1:]]
    ref_mean, ref_se = _accumulate(n_stat, bases[0])
    stationarity_z = 0.0
    for m_b, se_b in checks:
        z = np.abs(m_b - ref_mean) / np.hypot(se_b, ref_se).clip(1e-300)
        stationarity_z = max(stationarity_z, float(z.max()))

    tau = getattr(real.spec, "tau", float(np.max(np.abs(sigma_lags))))
    return diffmat.AutocorrTensor(
        tau=tau,
        t_grid=np.array([t]),
        sigma_grid=sigma_lags,
        x_grid=xi_lags,
        values=mean[None, :, :, None, None],
        form="empirical",
        stderr=se[None, :, :, None, None],
        meta={"n_samples": n_samples, "stationarity_z": stationarity_z},
    )
