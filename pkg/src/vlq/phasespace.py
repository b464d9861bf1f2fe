"""Phase-space grids, gridded distributions, and weak comparison metrics.

The spatial domain is the periodic box [0, 2pi)^d sampled on a uniform
grid without the right endpoint; velocity space is the box [-Vmax, Vmax]^d
sampled inclusive of both endpoints.  Only d = 1 is gridded here.  All
x-integrals use the exact equal-weight periodic rule, v-integrals use the
trapezoid rule, so the mass functional matches the one conserved by the
finite-volume diffusion step exactly.

Value objects are immutable after construction: arrays are stored with the
writeable flag cleared, which catches accidental in-place mutation in the
solver loops.
"""

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

_FMT = "%.17g"


def g17(x):
    """Shortest decimal that round-trips a float64 is not stable across
    libc versions; fixed 17 significant digits is."""
    return _FMT % (x,)


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PhaseGrid:
    """Tensor grid for one spatial and one velocity dimension."""

    nx: int
    nv: int
    vmax: float
    x: np.ndarray = field(init=False, repr=False, compare=False)
    v: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.nx < 2 or self.nx % 2 != 0:
            raise ValueError(f"nx must be even and >= 2, got {self.nx}")
        if self.nv < 3 or self.nv % 2 == 0:
            # odd nv puts a node exactly at v = 0, which the resonance
            # diagnostics rely on
            raise ValueError(f"nv must be odd and >= 3, got {self.nv}")
        if not self.vmax > 0:
            raise ValueError(f"vmax must be positive, got {self.vmax}")
        object.__setattr__(self, "x", _frozen(np.arange(self.nx) * (TWO_PI / self.nx)))
        object.__setattr__(self, "v", _frozen(np.linspace(-self.vmax, self.vmax, self.nv)))

    @property
    def dx(self):
        return TWO_PI / self.nx

    @property
    def dv(self):
        return 2.0 * self.vmax / (self.nv - 1)

    @property
    def v_weights(self):
        """Trapezoid weights; also the finite-volume cell widths with
        half cells at the velocity boundary."""
        w = np.full(self.nv, self.dv)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def wavenumbers(self):
        """Integer wavenumbers matching rfft along x."""
        return np.arange(self.nx // 2 + 1)


@dataclass(frozen=True)
class DistFn:
    """Distribution values on a PhaseGrid, axis order (x, v)."""

    grid: PhaseGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.grid.nx, self.grid.nv):
            raise ValueError(
                f"values shape {vals.shape} does not match grid "
                f"({self.grid.nx}, {self.grid.nv})"
            )
        object.__setattr__(self, "values", _frozen(vals))


@dataclass(frozen=True)
class VelocityFn:
    """Values on the velocity grid alone (x-averaged profiles, test
    functions, diffusion coefficients)."""

    grid: PhaseGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.grid.nv,):
            raise ValueError(
                f"values shape {vals.shape} does not match grid ({self.grid.nv},)"
            )
        object.__setattr__(self, "values", _frozen(vals))


def maxwellian(grid, v_th=1.0, density=1.0, drift=0.0, normalize=True):
    """Maxwellian profile on the velocity grid.

    With normalize=True the discrete v-integral equals `density` exactly,
    which keeps the Poisson neutrality check at roundoff rather than at
    the O(exp(-Vmax^2/2vth^2)) truncation level.
    """
    prof = np.exp(-((grid.v - drift) ** 2) / (2.0 * v_th**2)) / (
        math.sqrt(2.0 * math.pi) * v_th
    )
    if normalize:
        mass = float(np.dot(grid.v_weights, prof))
        if mass <= 0:
            raise ValueError("profile mass vanished; vmax too small")
        prof *= density / mass
    else:
        prof *= density
    return VelocityFn(grid, prof)


def from_profile(grid, profile, modulation=None, time=0.0):
    """DistFn g(x, v) = (1 + modulation(x)) * profile(v)."""
    prof = profile.values if isinstance(profile, VelocityFn) else np.asarray(profile)
    mod = np.zeros(grid.nx) if modulation is None else modulation(grid.x)
    return DistFn(grid, (1.0 + mod)[:, None] * prof[None, :], time=time)


def space_average(f):
    """x-average, the k = 0 Fourier mode."""
    return VelocityFn(f.grid, f.values.mean(axis=0), time=f.time)


def moments(f, orders=(0, 1, 2)):
    """Velocity moments of the normalized phase-space measure
    dx dv / (2pi): order 0 is the global neutrality functional."""
    g = f.grid
    w = g.v_weights
    out = []
    for n in orders:
        out.append(float(np.mean(f.values @ (w * g.v**n))))
    return out


def velocity_moment(vf, order=0):
    w = vf.grid.v_weights
    return float(np.dot(w, vf.values * vf.grid.v**order))


def lp_norm(f, p=2.0):
    """Discrete L^p norm with the grid cell measure (exact dx in x,
    trapezoid in v); p = inf gives the sup norm."""
    if isinstance(f, VelocityFn):
        vals, w = f.values, f.grid.v_weights
    else:
        vals = f.values
        w = f.grid.dx * f.grid.v_weights[None, :]
    if math.isinf(p):
        return float(np.max(np.abs(vals)))
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    return float(np.sum(w * np.abs(vals) ** p) ** (1.0 / p))


def hermite_test_set(grid, v_th=1.0, n_funcs=9):
    """Orthonormal Hermite functions scaled to v_th.

    psi_m(v) = H_m(v/vt) exp(-v^2/(2 vt^2)) / sqrt(2^m m! sqrt(pi) vt),
    built by the stable three-term recurrence on normalized functions.
    They decay like the equilibrium itself, so truncation at Vmax is
    harmless, and low orders probe exactly the moments the diffusion
    limit controls.
    """
    if n_funcs < 1:
        raise ValueError("need at least one test function")
    u = grid.v / v_th
    norm0 = 1.0 / math.sqrt(math.sqrt(math.pi) * v_th)
    psi = np.empty((n_funcs, grid.nv))
    psi[0] = norm0 * np.exp(-0.5 * u**2)
    if n_funcs > 1:
        psi[1] = math.sqrt(2.0) * u * psi[0]
    for m in range(2, n_funcs):
        psi[m] = math.sqrt(2.0 / m) * u * psi[m - 1] - math.sqrt((m - 1) / m) * psi[m - 2]
    return [VelocityFn(grid, row) for row in psi]


def weak_distance(g, h, test_set):
    """max_m | integral (g - h) psi_m dv | over the test set.

    A pseudo-metric: zero only means agreement of the tested moments.
    """
    if g.grid != h.grid:
        raise ValueError("profiles live on different grids")
    diff = g.values - h.values
    w = g.grid.v_weights
    best = 0.0
    for psi in test_set:
        if psi.grid != g.grid:
            raise ValueError("test function grid mismatch")
        best = max(best, abs(float(np.dot(w, diff * psi.values))))
    return best


# ---------------------------------------------------------------------------
# persistence

_MAGIC = "F64GRID"


def write_f64grid(path, f):
    """One ASCII header line, then nx*nv little-endian float64 with x
    varying fastest."""
    g = f.grid
    header = (
        f"{_MAGIC} nx={g.nx} nv={g.nv} vmax={g17(g.vmax)} time={g17(f.time)}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(f.values.T, dtype="<f8").tobytes())


def read_f64grid(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        fields = header.split()
        if not fields or fields[0] != _MAGIC:
            raise ValueError(f"{path}: not an {_MAGIC} file")
        kv = dict(item.split("=", 1) for item in fields[1:])
        try:
            nx, nv = int(kv["nx"]), int(kv["nv"])
            vmax, time = float(kv["vmax"]), float(kv["time"])
        except KeyError as exc:
            raise ValueError(f"{path}: missing header field {exc}") from exc
        raw = fh.read(8 * nx * nv)
        if len(raw) != 8 * nx * nv:
            raise ValueError(f"{path}: truncated payload")
        vals = np.frombuffer(raw, dtype="<f8").reshape(nv, nx).T
    return DistFn(PhaseGrid(nx, nv, vmax), vals, time=time)


def write_profile_csv(path, vf, extra_columns=None, header_extra=""):
    """CSV columns v,value[,extras]; 17 significant digits throughout."""
    cols = [("v", vf.grid.v), ("value", vf.values)]
    for name, arr in (extra_columns or []):
        cols.append((name, np.asarray(arr)))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(name for name, _ in cols) + header_extra + "\n")
        for i in range(vf.grid.nv):
            fh.write(",".join(g17(arr[i]) for _, arr in cols) + "\n")


def write_grid_csv(path, f):
    """CSV dump of a DistFn, rows ordered v-major / x-fastest to match the
    binary layout."""
    g = f.grid
    with open(path, "w", encoding="ascii") as fh:
        fh.write("x,v,value\n")
        for j in range(g.nv):
            vj = g17(g.v[j])
            for i in range(g.nx):
                fh.write(f"{g17(g.x[i])},{vj},{g17(f.values[i, j])}\n")
