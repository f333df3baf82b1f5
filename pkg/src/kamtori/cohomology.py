"""Fast solvers for difference equations with non-constant coefficients.

The target equation is ``A(theta) Delta(theta) - Delta(theta + omega) B(theta)
= eta(theta)`` with matrix- or scalar-valued coefficients.  Two doubling
iterations cover the contractive (``||A^-1|| ||B|| < 1``) and expansive
(``||A|| ||B^-1|| < 1``) regimes, summing ``2^n`` series terms in ``n``
sweeps of grid products and spectral shifts.  A log-reduction method handles
the scalar case with a non-unit reduced multiplier.

Coefficients may be rank deficient; inverses are SVD pseudoinverses with a
configurable singular-value threshold, so the same solvers drive the
bundle-restricted equations of the splitting Newton method.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    OverflowScalingError,
    ParameterError,
    RegimeViolationError,
    SignChangeError,
    UnitMultiplierError,
)
from .fourier import (
    FourierSeries,
    RotationVector,
    grid_rotate,
    solve_cohomology_constant,
    solve_twisted_cohomology,
)

DEFAULT_N_DOUBLINGS = 7
DEFAULT_EARLY_EXIT = 1e-14
DEFAULT_PINV_TOL = 1e-10
UNIT_MULTIPLIER_TOL = 1e-6

CONTRACTIVE = "contractive"
EXPANSIVE = "expansive"
SCALAR_1D = "scalar_1d"


def _omega_of(omega):
    if isinstance(omega, RotationVector):
        return omega.omega
    return np.atleast_1d(np.asarray(omega, dtype=float))


def _raw(x):
    """FourierSeries -> grid array; numbers -> float."""
    if isinstance(x, FourierSeries):
        return x.grid
    return float(x)


def _rot(x, ell, step):
    if isinstance(x, np.ndarray):
        return grid_rotate(x, ell, step)
    return x


def _lmul(a, x, ell):
    """a acting from the left on sections x (grid arrays)."""
    if not isinstance(a, np.ndarray):
        return a * x
    extra = a.ndim - ell
    if extra == 0:  # scalar field
        return a.reshape(a.shape + (1,) * (x.ndim - a.ndim)) * x
    if x.ndim - ell == 1:  # matrix field on vector sections
        return np.matmul(a, x[..., None])[..., 0]
    return np.matmul(a, x)


def _rmul(x, b, ell):
    """b acting from the right on sections x (grid arrays)."""
    if not isinstance(b, np.ndarray):
        return x * b
    extra = b.ndim - ell
    if extra == 0:
        return x * b.reshape(b.shape + (1,) * (x.ndim - b.ndim))
    return np.matmul(x, b)


def _inv(a, ell, pinv_tol, rank=None):
    """Pointwise (pseudo)inverse; ``rank`` keeps exactly that many singular
    directions, which is how bundle-restricted generators are inverted."""
    if not isinstance(a, np.ndarray):
        return 1.0 / a
    if a.ndim - ell == 2:
        if rank is None:
            return np.linalg.pinv(a, rcond=pinv_tol)
        u, s, vt = np.linalg.svd(a)
        s_inv = np.zeros_like(s)
        s_inv[..., :rank] = 1.0 / s[..., :rank]
        return np.swapaxes(vt, -1, -2) @ (s_inv[..., :, None] * np.swapaxes(u, -1, -2))
    return 1.0 / a


def _opnorm_sup(a, ell):
    """Sup over the grid of the pointwise operator (spectral) norm."""
    if not isinstance(a, np.ndarray):
        return abs(a)
    if a.ndim - ell == 2:
        s = np.linalg.svd(a, compute_uv=False)
        return float(np.max(s[..., 0]))
    return float(np.max(np.abs(a)))


def _opnorm_pinv_sup(a, ell, pinv_tol, rank=None):
    """Sup of the pseudoinverse norm: 1 over the smallest retained sigma."""
    if isinstance(a, np.ndarray) and a.ndim - ell == 2:
        s = np.linalg.svd(a, compute_uv=False)
        if rank is None:
            cut = pinv_tol * s[..., 0:1]
            retained = np.where(s > cut, s, np.inf)
            return float(np.max(1.0 / np.min(retained, axis=-1)))
        return float(np.max(1.0 / s[..., rank - 1])) if rank else 0.0
    return 1.0 / _opnorm_sup(a, ell)


@dataclass
class TwoSidedEquation:
    """One instance of ``A Delta - (Delta o T_omega) B = eta``.

    ``A`` and ``B`` may be floats, scalar series, or square-matrix series;
    ``eta`` a scalar/vector/matrix series.  ``regime`` declares which
    contraction hypothesis the caller relies on; the solvers verify it
    numerically before iterating.
    """

    A: object
    B: object
    eta: FourierSeries
    omega: object
    regime: str = CONTRACTIVE
    pinv_rank: int = None   # rank of the coefficient that gets pseudoinverted
    inverse: object = None  # precomputed inverse of that coefficient
    # rank-deficient coefficients restricted to a known pair of subspaces
    # need the structured inverse supplied by the caller: an SVD
    # pseudoinverse lands in the row space, which is wrong for oblique
    # bundle restrictions

    @property
    def ell(self):
        return self.eta.ell

    def _inverted_coefficient(self, pinv_tol):
        if self.inverse is not None:
            return _raw(self.inverse)
        side = self.A if self.regime == CONTRACTIVE else self.B
        return _inv(_raw(side), self.ell, pinv_tol, self.pinv_rank)

    def kappa(self, pinv_tol=DEFAULT_PINV_TOL):
        """Contraction factor of the declared regime (must be < 1)."""
        a, b, ell = _raw(self.A), _raw(self.B), self.ell
        inv_norm = _opnorm_sup(self._inverted_coefficient(pinv_tol), ell)
        if self.regime == CONTRACTIVE:
            return inv_norm * _opnorm_sup(b, ell)
        if self.regime == EXPANSIVE:
            return _opnorm_sup(a, ell) * inv_norm
        if self.regime == SCALAR_1D:
            return np.nan  # the 1-d method is not a contraction iteration
        raise ParameterError(f"unknown regime {self.regime!r}")

    def residual(self, delta):
        """Sup norm of ``A delta - (delta o T) B - eta``."""
        ell = self.ell
        omega_vec = _omega_of(self.omega)
        shifted = delta.rotate(omega_vec).grid
        lhs = _lmul(_raw(self.A), delta.grid, ell) - _rmul(shifted, _raw(self.B), ell)
        return FourierSeries.from_grid(lhs - self.eta.grid, ell=ell).sup_norm()


@dataclass(frozen=True)
class DoublingReport:
    kappa: float
    sweeps: int
    terms: int
    residual: float
    eta_norm: float


def _doubling(a, b, d, ell, step0, n_doublings, early_exit):
    """Shared kernel: iterate d <- d + a (d o T_step) b, with factor order
    a_{n+1}(theta) = a_n(theta) a_n(theta + step),
    b_{n+1}(theta) = b_n(theta + step) b_n(theta), step <- 2 step."""
    step = np.atleast_1d(np.asarray(step0, dtype=float)).copy()
    sweeps = 0
    for _ in range(n_doublings):
        update = _lmul(a, _rmul(_rot(d, ell, step), b, ell), ell)
        d_new = d + update
        if not np.all(np.isfinite(d_new)):
            raise OverflowScalingError(
                "doubling products overflowed; the mirrored regime may apply")
        sweeps += 1
        rel = np.max(np.abs(update)) / max(np.max(np.abs(d_new)), 1e-300)
        d = d_new
        if rel < early_exit:
            break
        a_shift = _rot(a, ell, step)
        b_shift = _rot(b, ell, step)
        a = _lmul(a, a_shift, ell) if isinstance(a, np.ndarray) else a * a_shift
        b = _lmul(b_shift, b, ell) if isinstance(b, np.ndarray) else b_shift * b
        step = 2.0 * step
    return d, sweeps


def solve_doubling_contractive(eq, n_doublings=DEFAULT_N_DOUBLINGS,
                               early_exit=DEFAULT_EARLY_EXIT,
                               pinv_tol=DEFAULT_PINV_TOL):
    """Solve in the regime ``||A^-1|| ||B|| <= kappa < 1``.

    After ``n`` sweeps the running sum holds exactly the first ``2^n`` terms
    of the forward series, so the truncation error decays like
    ``kappa^(2^n)``.  Returns ``(Delta, DoublingReport)``.
    """
    kappa = eq.kappa(pinv_tol)
    if not kappa < 1.0:
        raise RegimeViolationError(
            f"contractive regime violated: ||A^-1||*||B|| = {kappa:.4g} >= 1")
    ell = eq.ell
    omega_vec = _omega_of(eq.omega)
    a_inv = eq._inverted_coefficient(pinv_tol)
    d0 = _lmul(a_inv, eq.eta.grid, ell)
    d, sweeps = _doubling(a_inv, _raw(eq.B), d0, ell, omega_vec,
                                  n_doublings, early_exit)
    delta = FourierSeries.from_grid(d, ell=ell)
    return delta, DoublingReport(kappa, sweeps, 2**sweeps, eq.residual(delta),
                                 eq.eta.sup_norm())


def solve_doubling_expansive(eq, n_doublings=DEFAULT_N_DOUBLINGS,
                             early_exit=DEFAULT_EARLY_EXIT,
                             pinv_tol=DEFAULT_PINV_TOL):
    """Solve in the regime ``||A|| ||B^-1|| <= kappa < 1``.

    The series runs backward: with ``theta' = theta - omega`` the equation
    reads ``Delta = A(theta') (Delta o T_-omega) B^-1(theta')
    - eta(theta') B^-1(theta')`` and the doubling kernel applies with shift
    steps of ``-omega``.  Returns ``(Delta, DoublingReport)``.
    """
    kappa = eq.kappa(pinv_tol)
    if not kappa < 1.0:
        raise RegimeViolationError(
            f"expansive regime violated: ||A||*||B^-1|| = {kappa:.4g} >= 1")
    ell = eq.ell
    omega_vec = _omega_of(eq.omega)
    b_inv = eq._inverted_coefficient(pinv_tol)
    a0 = _rot(_raw(eq.A), ell, -omega_vec)
    b0 = _rot(b_inv, ell, -omega_vec)
    d0 = -_rot(_rmul(eq.eta.grid, b_inv, ell), ell, -omega_vec)
    d, sweeps = _doubling(a0, b0, d0, ell, -omega_vec,
                                  n_doublings, early_exit)
    delta = FourierSeries.from_grid(d, ell=ell)
    return delta, DoublingReport(kappa, sweeps, 2**sweeps, eq.residual(delta),
                                 eq.eta.sup_norm())


def solve_auto(eq, **kwargs):
    """Pick the doubling regime with the smaller contraction factor."""
    eq_c = TwoSidedEquation(eq.A, eq.B, eq.eta, eq.omega, CONTRACTIVE, eq.pinv_rank)
    eq_e = TwoSidedEquation(eq.A, eq.B, eq.eta, eq.omega, EXPANSIVE, eq.pinv_rank)
    pinv_tol = kwargs.get("pinv_tol", DEFAULT_PINV_TOL)
    kc, ke = eq_c.kappa(pinv_tol), eq_e.kappa(pinv_tol)
    if kc < 1.0 and kc <= ke:
        return solve_doubling_contractive(eq_c, **kwargs)
    if ke < 1.0:
        return solve_doubling_expansive(eq_e, **kwargs)
    raise RegimeViolationError(
        f"neither regime contracts: kappas {kc:.4g}, {ke:.4g}")


def solve_1d(eq, unit_tol=UNIT_MULTIPLIER_TOL, ratio_floor=1e-12):
    """Scalar equation via the log reduction to a constant multiplier.

    Writes ``A/B = nu C / (C o T_omega)`` with ``log |nu|`` the average of
    ``log |A/B|`` (a constant sign is required and tracked), solves the
    zero-average cohomology for ``log C``, reduces to ``nu W - W o T = eta~``
    solved mode by mode, and returns ``Delta = W / C``.

    Returns ``(Delta, dict)`` with the reduced multiplier and residual.
    """
    for name, x in (("A", eq.A), ("B", eq.B)):
        if isinstance(x, FourierSeries) and x.range_shape != ():
            raise ParameterError(f"solve_1d needs scalar {name}")
    ell = eq.ell
    omega_vec = _omega_of(eq.omega)
    grid_shape = eq.eta.grid_shape
    a = eq.A.grid if isinstance(eq.A, FourierSeries) else np.full(grid_shape, float(eq.A))
    b = eq.B.grid if isinstance(eq.B, FourierSeries) else np.full(grid_shape, float(eq.B))
    ratio = a / b
    if np.min(np.abs(ratio)) < ratio_floor:
        raise ParameterError("log reduction requires |A/B| bounded away from 0")
    if np.all(ratio > 0):
        sign = 1.0
    elif np.all(ratio < 0):
        sign = -1.0
    else:
        raise SignChangeError("A/B changes sign on the grid")
    log_ratio = FourierSeries.from_grid(np.log(np.abs(ratio)), ell=ell)
    log_nu = float(log_ratio.average())
    nu = sign * float(np.exp(log_nu))
    if abs(abs(nu) - 1.0) < unit_tol:
        raise UnitMultiplierError(
            f"reduced multiplier |nu| = {abs(nu):.8f} within {unit_tol} of 1")
    log_c, _ = solve_cohomology_constant(log_ratio - log_nu, omega_vec)
    c = np.exp(log_c.grid)
    c_shift = np.exp(log_c.rotate(omega_vec).grid)
    scale = _pad_trailing(c_shift / b, eq.eta.grid)
    eta_t = FourierSeries.from_grid(scale * eq.eta.grid, ell=ell)
    w = solve_twisted_cohomology(eta_t, omega_vec, a=nu, b=1.0)
    delta = FourierSeries.from_grid(w.grid / _pad_trailing(c, eq.eta.grid), ell=ell)
    return delta, {"nu": nu, "residual": eq.residual(delta),
                   "eta_norm": eq.eta.sup_norm()}


def _pad_trailing(x, like):
    return x.reshape(x.shape + (1,) * (like.ndim - x.ndim))
