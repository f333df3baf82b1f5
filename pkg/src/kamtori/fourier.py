"""Dual grid/Fourier representation of periodic functions on the torus.

A periodic function ``f : T^ell -> R^(range_shape)`` is held simultaneously
as real values on a regular grid and as Hermitian-packed Fourier
coefficients, with either representation computed lazily from the other.
Grid sizes are powers of two per axis so every transform is a fast FFT.

Conventions
-----------
Coefficients follow ``f(theta) = sum_k c_k exp(2*pi*i k.theta)`` with
``c_{-k} = conj(c_k)``; storage is the ``numpy.fft.rfftn`` packing over the
leading ``ell`` axes (real packing on axis ``ell-1``), normalized so that
``c_0`` is the average.  Rigid rotations, partial derivatives, averages and
the constant-coefficient small-divisor solves are diagonal in this
representation; products and compositions are diagonal on the grid.
"""

from dataclasses import dataclass
from decimal import Decimal
from enum import Enum

import numpy as np

from .errors import (
    NumericCorruptionError,
    ObstructionError,
    ParameterError,
    SmallDivisorError,
)

#: Decimal expansions for named frequencies (parsed to the nearest binary
#: float64); used by the CLI so configs stay reproducible as text.
NAMED_FREQUENCIES = {
    "golden": "0.61803398874989484820458683436564",
    "sqrt2": "0.41421356237309504880168872420970",
}

DEFAULT_ZERO_AVERAGE_TOL = 1e-10
DEFAULT_DIVISOR_FLOOR = 1e-9


def named_frequency(name):
    """Return a named frequency constant as a float."""
    try:
        return float(Decimal(NAMED_FREQUENCIES[name]))
    except KeyError:
        raise ParameterError(
            f"unknown frequency name {name!r}; known: {sorted(NAMED_FREQUENCIES)}"
        ) from None


def _check_pow2(n):
    if n < 2 or (n & (n - 1)) != 0:
        raise ParameterError(f"grid size {n} is not a power of two")


# ---------------------------------------------------------------------------
# Low-level kernels on raw arrays (grid axes are the leading `ell` axes).
# ---------------------------------------------------------------------------

def grid_to_coeffs(values, ell):
    """Forward transform: real grid values -> packed coefficients."""
    if not np.all(np.isfinite(values)):
        raise NumericCorruptionError("non-finite values in grid data")
    axes = tuple(range(ell))
    n_total = int(np.prod([values.shape[a] for a in axes]))
    return np.fft.rfftn(values, axes=axes) / n_total


def coeffs_to_grid(coeffs, grid_shape):
    """Inverse transform: packed coefficients -> real grid values."""
    if not np.all(np.isfinite(coeffs)):
        raise NumericCorruptionError("non-finite values in coefficient data")
    ell = len(grid_shape)
    axes = tuple(range(ell))
    n_total = int(np.prod(grid_shape))
    return np.fft.irfftn(coeffs * n_total, s=grid_shape, axes=axes)


def _axis_wavenumbers(grid_shape):
    """Integer wavenumbers per packed axis (last axis real-packed)."""
    ell = len(grid_shape)
    ks = []
    for j, n in enumerate(grid_shape):
        if j == ell - 1:
            ks.append(np.arange(n // 2 + 1, dtype=float))
        else:
            ks.append(np.fft.fftfreq(n, 1.0 / n))
    return ks


def _broadcast_axis(arr, axis, ndim):
    shape = [1] * ndim
    shape[axis] = arr.shape[0]
    return arr.reshape(shape)


def _rotation_phase(grid_shape, omega):
    """Packed-lattice multiplier for f -> f(. + omega).

    Nyquist entries (which pack the +-N/2 pair of a real signal) get the
    grid-consistent real factor cos(2*pi*k*omega) instead of a bare complex
    exponential.
    """
    ell = len(grid_shape)
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    phase = np.ones((1,) * ell, dtype=complex)
    for j, k in enumerate(_axis_wavenumbers(grid_shape)):
        factor = np.exp(2j * np.pi * k * omega[j])
        nyq = np.abs(k) == grid_shape[j] // 2
        if np.any(nyq):
            factor = np.where(nyq, np.cos(2.0 * np.pi * k * omega[j]), factor)
        phase = phase * _broadcast_axis(factor, j, ell)
    return phase


def _pad_multiplier(mult, range_ndim):
    return mult.reshape(mult.shape + (1,) * range_ndim)


def grid_rotate(values, ell, omega):
    """Rigid rotation of grid values by omega (spectral, exact in band)."""
    grid_shape = values.shape[:ell]
    c = grid_to_coeffs(values, ell)
    phase = _pad_multiplier(_rotation_phase(grid_shape, omega), values.ndim - ell)
    return coeffs_to_grid(c * phase, grid_shape)


def grid_derivative(values, ell, axis):
    """Partial derivative along a torus axis (spectral)."""
    grid_shape = values.shape[:ell]
    c = grid_to_coeffs(values, ell)
    k = _axis_wavenumbers(grid_shape)[axis]
    mult = 2j * np.pi * k
    mult[np.abs(k) == grid_shape[axis] // 2] = 0.0  # odd operator: drop Nyquist
    c = c * _pad_multiplier(_broadcast_axis(mult, axis, ell), values.ndim - ell)
    return coeffs_to_grid(c, grid_shape)


def _k_dot_omega(grid_shape, omega):
    ell = len(grid_shape)
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    acc = np.zeros((1,) * ell)
    for j, k in enumerate(_axis_wavenumbers(grid_shape)):
        acc = acc + _broadcast_axis(k * omega[j], j, ell)
    return acc


def pad_coeffs(coeffs, grid_shape, new_grid_shape):
    """Zero-pad packed coefficients onto a finer grid (band embedding)."""
    ell = len(grid_shape)
    range_shape = coeffs.shape[ell:]
    packed_new = tuple(
        n if j < ell - 1 else n // 2 + 1 for j, n in enumerate(new_grid_shape)
    )
    out = np.zeros(packed_new + range_shape, dtype=complex)
    idx_old = []
    idx_new = []
    for j, (n_old, n_new) in enumerate(zip(grid_shape, new_grid_shape)):
        if n_new < n_old:
            raise ParameterError("pad_coeffs only refines grids")
        if j == ell - 1:
            idx_old.append([slice(0, n_old // 2 + 1)])
            idx_new.append([slice(0, n_old // 2 + 1)])
        else:
            idx_old.append([slice(0, n_old // 2), slice(n_old // 2, n_old)])
            idx_new.append([slice(0, n_old // 2), slice(n_new - n_old // 2, n_new)])
    # copy every corner block (positive/negative halves per full axis)
    from itertools import product as _product

    for combo in _product(*[range(len(s)) for s in idx_old]):
        src = tuple(idx_old[j][c] for j, c in enumerate(combo))
        dst = tuple(idx_new[j][c] for j, c in enumerate(combo))
        out[dst] = coeffs[src]
    return out


def theta_grid(grid_shape):
    """Grid of angles in [0,1)^ell, shape ``grid_shape + (ell,)``."""
    axes = [np.arange(n) / n for n in grid_shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


# ---------------------------------------------------------------------------
# Rotation vectors and Diophantine diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiophantineReport:
    """Result of an exhaustive small-divisor scan up to ``k_max``."""

    worst_ratio: float
    worst_k: tuple
    k_max: int
    nu: float
    tau: float

    @property
    def passed(self):
        return np.isfinite(self.worst_ratio) and self.worst_ratio <= self.nu


class RotationVector:
    """Frequency vector with its Diophantine budget ``(nu, tau)``.

    Parameters
    ----------
    omega : float or sequence of float
        Frequency components in [0, 1).
    nu, tau : float, optional
        Diophantine constants.  ``tau`` defaults to the torus dimension;
        ``nu`` defaults to the worst ratio observed in a scan up to
        ``calibration_k_max``, with 10% headroom.
    """

    __slots__ = ("omega", "nu", "tau")

    def __init__(self, omega, nu=None, tau=None, calibration_k_max=2048):
        omega = np.atleast_1d(np.asarray(omega, dtype=float)) % 1.0
        object.__setattr__(self, "omega", omega)
        ell = omega.shape[0]
        object.__setattr__(self, "tau", float(tau) if tau is not None else float(ell))
        if nu is None:
            report = diophantine_witness(self, calibration_k_max, nu=np.inf)
            nu = 1.1 * report.worst_ratio
        object.__setattr__(self, "nu", float(nu))
        if self.nu <= 0 or self.tau <= 0:
            raise ParameterError("nu and tau must be positive")

    def __setattr__(self, name, value):
        raise AttributeError("RotationVector is immutable")

    @property
    def ell(self):
        return self.omega.shape[0]

    @classmethod
    def named(cls, name, nu=None, tau=None):
        return cls(named_frequency(name), nu=nu, tau=tau)

    def witness(self, k_max):
        return diophantine_witness(self, k_max)

    def check_irrational(self, q_max, tol=1e-12):
        """True when no component is within tol of p/q for q <= q_max."""
        q = np.arange(1, q_max + 1, dtype=float)[:, None]
        dist = np.abs(q * self.omega[None, :] - np.round(q * self.omega[None, :]))
        return bool(np.all(dist > tol * q))

    def __repr__(self):
        return f"RotationVector({self.omega.tolist()}, nu={self.nu:.4g}, tau={self.tau:g})"


def diophantine_witness(omega, k_max, nu=None, tau=None):
    """Scan ``0 < |k| <= k_max`` for the worst ratio ``|omega.k - n|^-1 / |k|^tau``.

    Returns a :class:`DiophantineReport`; ``passed`` compares against ``nu``.
    """
    if k_max < 1:
        raise ParameterError("k_max must be >= 1")
    if isinstance(omega, RotationVector):
        vec = omega.omega
        nu = omega.nu if nu is None else nu
        tau = omega.tau if tau is None else tau
    else:
        vec = np.atleast_1d(np.asarray(omega, dtype=float))
        nu = np.inf if nu is None else nu
        tau = float(len(vec)) if tau is None else tau
    ell = vec.shape[0]
    worst = -np.inf
    worst_k = None
    if ell == 1:
        k = np.arange(1, k_max + 1, dtype=float)
        dist = np.abs(k * vec[0] - np.round(k * vec[0]))
        with np.errstate(divide="ignore"):
            ratio = 1.0 / (dist * k**tau)
        i = int(np.argmax(ratio))
        worst = float(ratio[i])
        worst_k = (int(k[i]),)
    else:
        # chunk over the first lattice axis to bound memory
        ranges = [np.arange(-k_max, k_max + 1)] * (ell - 1)
        tail = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, ell - 1)
        for k0 in range(0, k_max + 1):  # k and -k give the same distance
            ks = np.concatenate(
                [np.full((tail.shape[0], 1), k0), tail], axis=1
            ).astype(float)
            norms = np.max(np.abs(ks), axis=1)
            mask = norms > 0
            if k0 == 0:
                # avoid double counting (k, -k): keep first nonzero tail > 0
                first = np.argmax(tail != 0, axis=1)
                sign = np.take_along_axis(tail, first[:, None], axis=1)[:, 0]
                mask &= sign > 0
            ks = ks[mask]
            if ks.size == 0:
                continue
            prod = ks @ vec
            dist = np.abs(prod - np.round(prod))
            with np.errstate(divide="ignore"):
                ratio = 1.0 / (dist * np.max(np.abs(ks), axis=1) ** tau)
            i = int(np.argmax(ratio))
            if ratio[i] > worst:
                worst = float(ratio[i])
                worst_k = tuple(int(v) for v in ks[i])
    return DiophantineReport(worst, worst_k, int(k_max), float(nu), float(tau))


# ---------------------------------------------------------------------------
# The series type
# ---------------------------------------------------------------------------

class CohomologyKind(Enum):
    """Difference-equation flavor handled by the constant-coefficient solver.

    Only the map case ``phi - phi(. + omega) = eta`` is representable; the
    directional-derivative variant for flows is deliberately absent.
    """

    MAP_DIFFERENCE = "map_difference"


class FourierSeries:
    """Periodic map ``T^ell -> R^(range_shape)`` with dual representations.

    Values are immutable: every operation returns a new series.  The two
    representations are caches of one logical object; accessing the missing
    one triggers an FFT exactly once.

    Parameters
    ----------
    grid_shape : tuple of int
        Points per torus axis (powers of two).
    range_shape : tuple of int
        Trailing shape of the values: ``()`` scalar, ``(m,)`` vector,
        ``(r, c)`` matrix.
    grid, coeffs : ndarray, optional
        At least one representation, shaped ``grid_shape + range_shape``
        (grid) or packed ``rfftn`` layout (coeffs).
    """

    __slots__ = ("grid_shape", "range_shape", "_grid", "_coeffs")

    def __init__(self, grid_shape, range_shape, grid=None, coeffs=None):
        grid_shape = tuple(int(n) for n in grid_shape)
        for n in grid_shape:
            _check_pow2(n)
        range_shape = tuple(int(n) for n in range_shape)
        object.__setattr__(self, "grid_shape", grid_shape)
        object.__setattr__(self, "range_shape", range_shape)
        if grid is None and coeffs is None:
            raise ParameterError("need grid values or coefficients")
        if grid is not None:
            grid = np.asarray(grid, dtype=float)
            if grid.shape != grid_shape + range_shape:
                raise ParameterError(
                    f"grid shape {grid.shape} != {grid_shape + range_shape}"
                )
        if coeffs is not None:
            coeffs = np.asarray(coeffs, dtype=complex)
            expect = self._packed_shape() + range_shape
            if coeffs.shape != expect:
                raise ParameterError(f"coeffs shape {coeffs.shape} != {expect}")
        object.__setattr__(self, "_grid", grid)
        object.__setattr__(self, "_coeffs", coeffs)

    def __setattr__(self, name, value):
        raise AttributeError("FourierSeries is immutable")

    def _packed_shape(self):
        gs = self.grid_shape
        return gs[:-1] + (gs[-1] // 2 + 1,)

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_grid(cls, values, ell=1):
        values = np.asarray(values, dtype=float)
        return cls(values.shape[:ell], values.shape[ell:], grid=values)

    @classmethod
    def from_coeffs(cls, coeffs, grid_shape):
        coeffs = np.asarray(coeffs, dtype=complex)
        ell = len(grid_shape)
        return cls(grid_shape, coeffs.shape[ell:], coeffs=coeffs)

    @classmethod
    def zeros(cls, grid_shape, range_shape=()):
        return cls(grid_shape, range_shape,
                   grid=np.zeros(tuple(grid_shape) + tuple(range_shape)))

    @classmethod
    def constant(cls, value, grid_shape):
        value = np.asarray(value, dtype=float)
        grid = np.broadcast_to(value, tuple(grid_shape) + value.shape).copy()
        return cls(grid_shape, value.shape, grid=grid)

    # -- representation management ------------------------------------------

    @property
    def ell(self):
        return len(self.grid_shape)

    @property
    def n_total(self):
        return int(np.prod(self.grid_shape))

    @property
    def has_grid(self):
        return self._grid is not None

    @property
    def has_coeffs(self):
        return self._coeffs is not None

    @property
    def grid(self):
        if self._grid is None:
            object.__setattr__(self, "_grid",
                               coeffs_to_grid(self._coeffs, self.grid_shape))
        return self._grid

    @property
    def coeffs(self):
        if self._coeffs is None:
            object.__setattr__(self, "_coeffs", grid_to_coeffs(self._grid, self.ell))
        return self._coeffs

    def to_coeffs(self):
        """Materialize the coefficient representation (returns self)."""
        self.coeffs
        return self

    def to_grid(self):
        """Materialize the grid representation (returns self)."""
        self.grid
        return self

    def representation_defect(self):
        """Sup-norm mismatch between the two cached representations.

        Zero when only one representation is current.
        """
        if self._grid is None or self._coeffs is None:
            return 0.0
        back = coeffs_to_grid(self._coeffs, self.grid_shape)
        return float(np.max(np.abs(back - self._grid)))

    # -- diagonal operations -------------------------------------------------

    def rotate(self, omega):
        """Return ``f(. + omega)`` (composition with the rigid rotation)."""
        if isinstance(omega, RotationVector):
            omega = omega.omega
        phase = _pad_multiplier(
            _rotation_phase(self.grid_shape, omega), len(self.range_shape)
        )
        return FourierSeries(self.grid_shape, self.range_shape,
                             coeffs=self.coeffs * phase)

    def derivative(self, axis=0):
        """Partial derivative along torus axis ``axis``."""
        k = _axis_wavenumbers(self.grid_shape)[axis]
        mult = 2j * np.pi * k
        mult[np.abs(k) == self.grid_shape[axis] // 2] = 0.0
        mult = _pad_multiplier(
            _broadcast_axis(mult, axis, self.ell), len(self.range_shape)
        )
        return FourierSeries(self.grid_shape, self.range_shape,
                             coeffs=self.coeffs * mult)

    def average(self):
        """Torus average ``c_0`` (exact for band-limited data)."""
        if self._coeffs is not None:
            zero = (0,) * self.ell
            return np.real(self._coeffs[zero]).copy()
        return self._grid.mean(axis=tuple(range(self.ell)))

    def sup_norm(self):
        """Max over the grid of the pointwise Euclidean/Frobenius norm."""
        g = self.grid
        if self.range_shape == ():
            return float(np.max(np.abs(g))) if g.size else 0.0
        sq = np.sum(g * g, axis=tuple(range(self.ell, g.ndim)))
        return float(np.sqrt(np.max(sq)))

    def tail_fraction(self):
        """Energy fraction carried by top-octave modes (|k_j| > N_j/4).

        Hermitian packing weights are accounted for; the zero mode counts
        toward the total so constants report a zero tail.
        """
        c = self.coeffs
        gs = self.grid_shape
        power = np.abs(c) ** 2
        if self.range_shape:
            power = power.sum(axis=tuple(range(self.ell, c.ndim)))
        # double the real-packed interior modes of the last axis
        w_last = np.full(gs[-1] // 2 + 1, 2.0)
        w_last[0] = 1.0
        if gs[-1] % 2 == 0:
            w_last[-1] = 1.0
        power = power * _broadcast_axis(w_last, self.ell - 1, self.ell)
        mask = np.zeros(power.shape, dtype=bool)
        for j, k in enumerate(_axis_wavenumbers(gs)):
            mask |= _broadcast_axis(np.abs(k) > gs[j] / 4.0, j, self.ell)
        total = float(power.sum())
        if total == 0.0:
            return 0.0
        return float(power[mask].sum()) / total

    def pad_to(self, new_grid_shape):
        """Embed onto a finer grid by zero-padding coefficients."""
        return FourierSeries(
            tuple(new_grid_shape), self.range_shape,
            coeffs=pad_coeffs(self.coeffs, self.grid_shape, tuple(new_grid_shape)),
        )

    def evaluate(self, thetas):
        """Dense evaluation at arbitrary angles.

        ``thetas`` has shape ``(..., ell)`` (or plain floats when ``ell==1``);
        returns values of shape ``thetas_batch + range_shape``.
        """
        thetas = np.asarray(thetas, dtype=float)
        if self.ell == 1 and (thetas.ndim == 0 or thetas.shape[-1] != 1):
            thetas = thetas[..., None]
        batch = thetas.shape[:-1]
        pts = thetas.reshape(-1, self.ell)
        full = np.fft.fftn(self.grid, axes=tuple(range(self.ell))) / self.n_total
        ks = [np.fft.fftfreq(n, 1.0 / n) for n in self.grid_shape]
        mesh = np.stack(np.meshgrid(*ks, indexing="ij"), axis=-1).reshape(-1, self.ell)
        phases = np.exp(2j * np.pi * (pts @ mesh.T))  # (P, modes)
        flatc = full.reshape(self.n_total, -1)
        vals = np.real(phases @ flatc)
        return vals.reshape(batch + self.range_shape)

    # -- pointwise algebra ----------------------------------------------------

    def _like(self, grid):
        return FourierSeries(self.grid_shape, grid.shape[self.ell:], grid=grid)

    def __add__(self, other):
        if isinstance(other, FourierSeries):
            return self._like(self.grid + other.grid)
        return self._like(self.grid + np.asarray(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, FourierSeries):
            return self._like(self.grid - other.grid)
        return self._like(self.grid - np.asarray(other))

    def __rsub__(self, other):
        return self._like(np.asarray(other) - self.grid)

    def __neg__(self):
        return self._like(-self.grid)

    def __mul__(self, other):
        if isinstance(other, FourierSeries):
            return self._like(self.grid * other.grid)
        return self._like(self.grid * np.asarray(other))

    __rmul__ = __mul__

    def __repr__(self):
        return (f"FourierSeries(grid_shape={self.grid_shape}, "
                f"range_shape={self.range_shape})")


def matmul(a, b):
    """Pointwise matrix product of matrix/vector valued series."""
    ga = a.grid if isinstance(a, FourierSeries) else np.asarray(a)
    gb = b.grid if isinstance(b, FourierSeries) else np.asarray(b)
    ref = a if isinstance(a, FourierSeries) else b
    return FourierSeries.from_grid(np.matmul(ga, gb), ell=ref.ell)


def transpose(a):
    """Pointwise transpose of a matrix-valued series."""
    return FourierSeries.from_grid(np.swapaxes(a.grid, -1, -2), ell=a.ell)


# ---------------------------------------------------------------------------
# Constant-coefficient small-divisor solves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CohomologyReport:
    """Diagnostics attached to a small-divisor solve."""

    divisor_min: float
    amplification: float
    residual: float
    eta_norm: float


def _divisors(grid_shape, omega, a=1.0, b=1.0):
    kw = _k_dot_omega(grid_shape, omega)
    return a - b * np.exp(2j * np.pi * kw)


def solve_cohomology_constant(eta, omega, zero_average_tol=DEFAULT_ZERO_AVERAGE_TOL,
                              divisor_floor=DEFAULT_DIVISOR_FLOOR):
    """Solve ``phi - phi(. + omega) = eta`` with the zero-average normalization.

    Coefficients are divided mode by mode, ``phi_k = eta_k / (1 - e^{2 pi i k.omega})``
    with ``phi_0 = 0``.  The input average must vanish (up to
    ``zero_average_tol``) and every divisor must clear ``divisor_floor``.

    Returns
    -------
    (FourierSeries, CohomologyReport)
        The zero-average solution and solve diagnostics including the
        defining-equation residual.
    """
    if isinstance(omega, RotationVector):
        omega = omega.omega
    avg = np.atleast_1d(eta.average())
    if np.any(np.abs(avg) > zero_average_tol):
        raise ObstructionError(
            f"cohomology obstruction: average {avg} exceeds {zero_average_tol}",
            average=eta.average(),
        )
    div = _divisors(eta.grid_shape, omega)
    zero = (0,) * eta.ell
    mod = np.abs(div)
    mod[zero] = np.inf
    i_min = np.unravel_index(np.argmin(mod), mod.shape)
    d_min = float(mod[i_min])
    if d_min < divisor_floor:
        k_name = _packed_index_to_k(i_min, eta.grid_shape)
        raise SmallDivisorError(
            f"divisor {d_min:.3e} below floor {divisor_floor:.1e} at k={k_name}",
            mode=k_name, divisor=d_min,
        )
    div[zero] = 1.0
    c = eta.coeffs / _pad_multiplier(div, len(eta.range_shape))
    c[zero] = 0.0
    phi = FourierSeries(eta.grid_shape, eta.range_shape, coeffs=c)
    resid = (phi - phi.rotate(omega) - eta).sup_norm()
    report = CohomologyReport(d_min, 1.0 / d_min, resid, eta.sup_norm())
    return phi, report


def solve_twisted_cohomology(eta, omega, a=1.0, b=1.0,
                             divisor_floor=DEFAULT_DIVISOR_FLOOR,
                             zero_average_tol=DEFAULT_ZERO_AVERAGE_TOL):
    """Solve ``a*phi - b*phi(. + omega) = eta`` for real constants a, b.

    When ``|a - b|`` is itself below the divisor floor the zero mode is an
    obstruction: the input average must vanish and the solution is returned
    with zero average (the plain small-divisor case).  Otherwise every mode,
    including ``k = 0``, is divided directly.
    """
    if isinstance(omega, RotationVector):
        omega = omega.omega
    div = _divisors(eta.grid_shape, omega, a=a, b=b)
    zero = (0,) * eta.ell
    zero_mode_singular = abs(a - b) < divisor_floor
    mod = np.abs(div)
    if zero_mode_singular:
        avg = np.atleast_1d(eta.average())
        if np.any(np.abs(avg) > zero_average_tol):
            raise ObstructionError(
                f"twisted cohomology obstruction: average {avg}",
                average=eta.average(),
            )
        mod[zero] = np.inf
    i_min = np.unravel_index(np.argmin(mod), mod.shape)
    d_min = float(mod[i_min])
    if d_min < divisor_floor:
        k_name = _packed_index_to_k(i_min, eta.grid_shape)
        raise SmallDivisorError(
            f"divisor |{a:.6g} - {b:.6g} e^(2 pi i k.omega)| = {d_min:.3e} "
            f"below floor at k={k_name}",
            mode=k_name, divisor=d_min,
        )
    if zero_mode_singular:
        div[zero] = 1.0
    c = eta.coeffs / _pad_multiplier(div, len(eta.range_shape))
    if zero_mode_singular:
        c[zero] = 0.0
    return FourierSeries(eta.grid_shape, eta.range_shape, coeffs=c)


def _packed_index_to_k(idx, grid_shape):
    ks = _axis_wavenumbers(grid_shape)
    return tuple(int(ks[j][i]) for j, i in enumerate(idx))
