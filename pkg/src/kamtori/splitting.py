"""Invariant splittings of the linearization along a torus.

The stable/center-unstable projections are computed by a Newton iteration on
the algebraic invariance equations of the projection fields, with the two
Sylvester-type difference equations of each step solved by the doubling
algorithms.  After every step the candidate is snapped back to an exact
projection pair through a pointwise SVD with singular values forced to 0/1.
The mirrored cocycle (inverse generator, reversed rotation) yields the
unstable/center-stable pair, and the center projection is completed from the
four pieces.

Hyperbolic components of torus corrections are solved here as well, by the
same doubling machinery applied to the bundle-restricted generator.
"""

import time
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import cohomology
from .cohomology import CONTRACTIVE, EXPANSIVE, TwoSidedEquation
from .errors import (
    AmbiguousRankError,
    InsufficientHyperbolicityError,
    NoConvergenceError,
    UnreliableRatesWarning,
)
from .fourier import FourierSeries, RotationVector, grid_rotate
from .torus import SolverConfig, counterterm_direction, invariance_residual, newton_center_step

SNAP_LOW = 0.1
SNAP_HIGH = 0.9
SNAP_MAX = 1.1


@dataclass(frozen=True)
class Cocycle:
    """Quasi-periodic matrix cocycle: generator samples over the torus."""

    generator: FourierSeries  # (N..., 2d, 2d)
    omega: RotationVector

    @classmethod
    def from_torus(cls, model, K):
        z = K.embedded_grid()
        return cls(FourierSeries.from_grid(model.jac(z), ell=K.ell), K.omega)

    @property
    def dim(self):
        return self.generator.range_shape[0]

    @property
    def ell(self):
        return self.generator.ell

    def mirror(self):
        """Cocycle of the inverse dynamics: generator ``Z(theta-omega)^-1``
        over the reversed rotation."""
        shifted = self.generator.rotate(-self.omega.omega).grid
        inv = np.linalg.inv(shifted)
        return Cocycle(FourierSeries.from_grid(inv, ell=self.ell),
                       RotationVector((-self.omega.omega) % 1.0,
                                      nu=self.omega.nu, tau=self.omega.tau))

    def product(self, n):
        """Grid values of the n-step cocycle, n >= 1 (left accumulation)."""
        ell = self.ell
        omega_vec = self.omega.omega
        prod = self.generator.grid
        for j in range(1, n):
            prod = grid_rotate(self.generator.grid, ell, j * omega_vec) @ prod
        return prod

    def iterate_check(self, n=3):
        """Defect of the cocycle property M(n+1) = (Z o T_n) M(n)."""
        ell = self.ell
        omega_vec = self.omega.omega
        lhs = self.product(n + 1)
        rhs = grid_rotate(self.generator.grid, ell, n * omega_vec) @ self.product(n)
        return float(np.max(np.abs(lhs - rhs)))


@dataclass(frozen=True)
class InvariantSplitting:
    """Projection fields of the hyperbolic splitting.

    ``pi_s + pi_cu = Id`` holds exactly by construction.  When the mirrored
    pair is attached, the center projection completing the three-way
    splitting is ``Id - pi_s - pi_u`` (exact resolution of the identity);
    the product ``pi_cs pi_cu`` is kept as a consistency diagnostic.
    """

    pi_s: FourierSeries
    pi_cu: FourierSeries
    stable_rank: int
    pi_u: FourierSeries = None
    pi_cs: FourierSeries = None

    @property
    def ell(self):
        return self.pi_s.ell

    @property
    def dim(self):
        return self.pi_s.range_shape[0]

    def has_mirror(self):
        return self.pi_u is not None

    def pi_c(self):
        """Center projection from the exact resolution of the identity."""
        if not self.has_mirror():
            raise ValueError("center projection needs the mirrored pair")
        eye = np.eye(self.dim)
        return FourierSeries.from_grid(eye - self.pi_s.grid - self.pi_u.grid,
                                       ell=self.ell)

    def pi_c_product(self):
        """The product form pi_cs pi_cu (diagnostic alternative)."""
        return FourierSeries.from_grid(self.pi_cs.grid @ self.pi_cu.grid,
                                       ell=self.ell)

    def center_projection_shifted(self, omega_vec):
        """Grid values of the center projection at theta + omega."""
        return grid_rotate(self.pi_c().grid, self.ell, omega_vec)

    def idempotency_defect(self):
        g = self.pi_s.grid
        return float(np.max(np.abs(g @ g - g)))

    def rank_profile(self):
        return np.linalg.matrix_rank(self.pi_s.grid, tol=0.5)


def constant_splitting(mat, grid_shape, stable_index=None):
    """Exact rank-1 stable/center-unstable pair of a constant matrix.

    The stable eigenvalue must be simple; the projection is the Frobenius
    covariant ``prod_{j != s} (Z - lambda_j) / (lambda_s - lambda_j)``, which
    is exact even when the complementary part is defective.
    """
    mat = np.asarray(mat, dtype=float)
    dim = mat.shape[0]
    eigs = np.linalg.eigvals(mat)
    order = np.argsort(np.abs(eigs))
    s_idx = order[0] if stable_index is None else stable_index
    lam_s = eigs[s_idx]
    proj = np.eye(dim, dtype=complex)
    for j in range(dim):
        if j == s_idx:
            continue
        proj = proj @ (mat - eigs[j] * np.eye(dim)) / (lam_s - eigs[j])
    proj = np.real(proj)
    pi_s = np.broadcast_to(proj, tuple(grid_shape) + (dim, dim)).copy()
    pi_cu = np.broadcast_to(np.eye(dim) - proj, tuple(grid_shape) + (dim, dim)).copy()
    ell = len(grid_shape)
    return (FourierSeries.from_grid(pi_s, ell=ell),
            FourierSeries.from_grid(pi_cu, ell=ell))


def product_splitting(model, K):
    """Exact splitting of the uncoupled rotator-pendulum at zero coupling.

    The cocycle is constant there, so both the forward pair and the mirrored
    pair come from eigenprojections of a single matrix.
    """
    Z = Cocycle.from_torus(model, K)
    z0 = Z.generator.grid.reshape(-1, Z.dim, Z.dim)[0]
    if np.max(np.abs(Z.generator.grid - z0)) > 1e-12:
        raise ValueError("product splitting requires a constant cocycle")
    grid_shape = K.grid_shape
    pi_s, pi_cu = constant_splitting(z0, grid_shape)
    eigs = np.linalg.eigvals(z0)
    unstable_index = int(np.argmax(np.abs(eigs)))
    pi_u, pi_cs = constant_splitting(z0, grid_shape, stable_index=unstable_index)
    return InvariantSplitting(pi_s, pi_cu, stable_rank=model.d - model.ell,
                              pi_u=pi_u, pi_cs=pi_cs)


# ---------------------------------------------------------------------------
# projection Newton method
# ---------------------------------------------------------------------------

def projection_residuals(S, Z):
    """Invariance defects of the pair: ``(E_cu, E_s)`` matrix series.

    ``E_cu = (pi_cu o T) Z pi_s`` and ``E_s = (pi_s o T) Z pi_cu``.
    """
    ell = S.ell
    omega_vec = Z.omega.omega
    zg = Z.generator.grid
    pcu_shift = grid_rotate(S.pi_cu.grid, ell, omega_vec)
    ps_shift = grid_rotate(S.pi_s.grid, ell, omega_vec)
    e_cu = FourierSeries.from_grid(pcu_shift @ zg @ S.pi_s.grid, ell=ell)
    e_s = FourierSeries.from_grid(ps_shift @ zg @ S.pi_cu.grid, ell=ell)
    return e_cu, e_s


def _restricted_generators(S, Z):
    ell = S.ell
    omega_vec = Z.omega.omega
    zg = Z.generator.grid
    ps_shift = grid_rotate(S.pi_s.grid, ell, omega_vec)
    pcu_shift = grid_rotate(S.pi_cu.grid, ell, omega_vec)
    n_s = FourierSeries.from_grid(ps_shift @ zg @ S.pi_s.grid, ell=ell)
    n_cu = FourierSeries.from_grid(pcu_shift @ zg @ S.pi_cu.grid, ell=ell)
    return n_s, n_cu


@dataclass(frozen=True)
class ProjectionReport:
    residual_before: float
    residual_after: float
    kappa: float
    constraint_defect: float
    idempotency_defect: float
    seconds: float


def _idempotent_cleanup(grid, tol=1e-13, max_iter=6):
    """Drive a near-projection to an exact one: P <- 3P^2 - 2P^3.

    Quadratically contracting toward the idempotent with the same invariant
    subspaces; unlike forcing unit singular values it leaves oblique
    projections oblique.  Commutes with P <-> Id - P, so cleaning the stable
    factor keeps the complementary pair consistent.
    """
    p = grid
    for _ in range(max_iter):
        p2 = p @ p
        defect = float(np.max(np.abs(p2 - p)))
        if defect < tol:
            break
        p = 3.0 * p2 - 2.0 * (p @ p2)
    return p


def _svd_snap(grid, stable_rank):
    """Rank guard and junk removal, then exact idempotency restoration.

    Singular values must sit in [0, 0.1) or (0.9, 1.1]: the small band is
    zeroed (those directions are quadratic-in-increment junk), anything in
    between or beyond flags an ambiguous rank.  Values in the upper band are
    kept as they are (an oblique projection legitimately has sigma >= 1);
    the cubic iteration then restores ``P^2 = P`` to machine precision.
    """
    u, s, vt = np.linalg.svd(grid)
    bad = ((s > SNAP_LOW) & (s < SNAP_HIGH)) | (s > SNAP_MAX)
    if np.any(bad):
        worst = float(s[bad][np.argmin(np.abs(s[bad] - 0.5))])
        raise AmbiguousRankError(
            f"singular value {worst:.3f} of the updated projection is too far "
            f"from both 0 and 1")
    counts = (s > 0.5).sum(axis=-1)
    if np.any(counts != stable_rank):
        raise AmbiguousRankError(
            f"snapped rank varies over the grid (expected {stable_rank})")
    cleaned = np.where(s > 0.5, s, 0.0)
    return _idempotent_cleanup((u * cleaned[..., None, :]) @ vt)


def newton_projection_step(S, Z, n_doublings=cohomology.DEFAULT_N_DOUBLINGS,
                           pinv_tol=cohomology.DEFAULT_PINV_TOL):
    """One Newton correction of the (pi_s, pi_cu) pair, then SVD reprojection.

    Requires the restricted-generator contraction ``||N_s|| ||N_cu^+|| < 1``;
    the two increment equations are solved by the doubling algorithms with
    the pseudoinverse realizing the rank-deficient inversions.
    """
    t0 = time.perf_counter()
    ell = S.ell
    e_cu, e_s = projection_residuals(S, Z)
    r_before = e_cu.sup_norm() + e_s.sup_norm()
    # the linearized equations are only consistent around an exact
    # idempotent pair; restore that structure before differentiating
    ps_clean = _idempotent_cleanup(S.pi_s.grid)
    eye = np.eye(S.dim)
    S = replace(S, pi_s=FourierSeries.from_grid(ps_clean, ell=ell),
                pi_cu=FourierSeries.from_grid(eye - ps_clean, ell=ell))
    e_cu, e_s = projection_residuals(S, Z)
    n_s, n_cu = _restricted_generators(S, Z)
    cu_rank = S.dim - S.stable_rank

    kappa = cohomology._opnorm_sup(n_s.grid, ell) * \
        cohomology._opnorm_pinv_sup(n_cu.grid, ell, pinv_tol, cu_rank)
    if not kappa < 1.0:
        raise InsufficientHyperbolicityError(
            f"restricted contraction factor {kappa:.4g} >= 1", kappa=kappa)

    # stable-block increment: N_s D - (D o T) N_cu = E_s
    eq_ss = TwoSidedEquation(n_s, n_cu, e_s, Z.omega, EXPANSIVE,
                             pinv_rank=cu_rank)
    d_ss, _ = cohomology.solve_doubling_expansive(eq_ss, n_doublings,
                                                  pinv_tol=pinv_tol)
    # center-unstable-block increment: N_cu D - (D o T) N_s = -E_cu
    eq_cus = TwoSidedEquation(n_cu, n_s, -e_cu, Z.omega, CONTRACTIVE,
                              pinv_rank=cu_rank)
    d_cus, _ = cohomology.solve_doubling_contractive(eq_cus, n_doublings,
                                                     pinv_tol=pinv_tol)

    increment = d_ss.grid + d_cus.grid
    constraint_defect = float(np.max(np.abs(
        increment @ S.pi_s.grid - d_cus.grid)))

    snapped = _svd_snap(S.pi_s.grid + increment, S.stable_rank)
    S_new = replace(S,
                    pi_s=FourierSeries.from_grid(snapped, ell=ell),
                    pi_cu=FourierSeries.from_grid(eye - snapped, ell=ell))
    e_cu2, e_s2 = projection_residuals(S_new, Z)
    report = ProjectionReport(
        residual_before=r_before,
        residual_after=e_cu2.sup_norm() + e_s2.sup_norm(),
        kappa=kappa,
        constraint_defect=constraint_defect,
        idempotency_defect=S_new.idempotency_defect(),
        seconds=time.perf_counter() - t0,
    )
    return S_new, report


def newton_projection_solve(S, Z, tol=1e-12, max_iter=12, **kwargs):
    """Iterate projection Newton steps on the (pi_s, pi_cu) pair."""
    reports = []
    for _ in range(max_iter):
        e_cu, e_s = projection_residuals(S, Z)
        if e_cu.sup_norm() + e_s.sup_norm() <= tol:
            return S, reports
        S, report = newton_projection_step(S, Z, **kwargs)
        reports.append(report)
    e_cu, e_s = projection_residuals(S, Z)
    if e_cu.sup_norm() + e_s.sup_norm() <= tol:
        return S, reports
    raise NoConvergenceError("projection Newton did not reach tolerance",
                             trace=[r.residual_after for r in reports])


def _mirror_view(S):
    return InvariantSplitting(S.pi_u, S.pi_cs, stable_rank=S.stable_rank)


def refine_splitting(S, Z, tol=1e-12, max_iter=12, **kwargs):
    """Converge both the forward pair and the mirrored pair."""
    S_fwd, reports = newton_projection_solve(S, Z, tol, max_iter, **kwargs)
    if S.has_mirror():
        Zm = Z.mirror()
        Sm, reports_m = newton_projection_solve(_mirror_view(S), Zm, tol,
                                                max_iter, **kwargs)
        S_fwd = replace(S_fwd, pi_u=Sm.pi_s, pi_cs=Sm.pi_cu)
        reports = reports + reports_m
    return S_fwd, reports


# ---------------------------------------------------------------------------
# splitting a torus residual and the hyperbolic solves
# ---------------------------------------------------------------------------

def split_error(E, S, omega):
    """Project a residual onto the three bundles at the shifted base point.

    Returns ``(E_s, E_u, E_c)`` with ``E_x(theta) = Pi_x(theta + omega)
    E(theta)``; the parts sum to ``E`` exactly because the center projection
    is the complement of the other two.
    """
    if not S.has_mirror():
        raise ValueError("split_error needs the full three-way splitting")
    omega_vec = omega.omega if isinstance(omega, RotationVector) \
        else np.atleast_1d(omega)
    ell = S.ell
    ps = grid_rotate(S.pi_s.grid, ell, omega_vec)
    pu = grid_rotate(S.pi_u.grid, ell, omega_vec)
    pc = grid_rotate(S.pi_c().grid, ell, omega_vec)
    parts = []
    for p in (ps, pu, pc):
        parts.append(FourierSeries.from_grid((p @ E.grid[..., None])[..., 0],
                                             ell=ell))
    return tuple(parts)


def solve_stable(E_s, Z, S, n_doublings=cohomology.DEFAULT_N_DOUBLINGS,
                 pinv_tol=cohomology.DEFAULT_PINV_TOL):
    """Correction on the stable bundle: ``(DF o K) D - D o T = -E_s``.

    Solved with the stable-restricted generator through the backward
    doubling series, which converges because the restriction contracts.
    Returns ``(Delta, DoublingReport)``.
    """
    n_s, _ = _restricted_generators(S, Z)
    kappa = cohomology._opnorm_sup(n_s.grid, S.ell)
    if not kappa < 1.0:
        raise InsufficientHyperbolicityError(
            f"stable restriction does not contract: {kappa:.4g} >= 1",
            kappa=kappa)
    eq = TwoSidedEquation(n_s, 1.0, -E_s, Z.omega, EXPANSIVE)
    return cohomology.solve_doubling_expansive(eq, n_doublings, pinv_tol=pinv_tol)


def solve_unstable(E_u, Z, S, n_doublings=cohomology.DEFAULT_N_DOUBLINGS,
                   pinv_tol=cohomology.DEFAULT_PINV_TOL):
    """Correction on the unstable bundle: ``(DF o K) D - D o T = -E_u``.

    The unstable-restricted generator has a contracting pseudoinverse, so
    the forward doubling series applies.  Returns ``(Delta, DoublingReport)``.
    """
    ell = S.ell
    omega_vec = Z.omega.omega
    pu_shift = grid_rotate(S.pi_u.grid, ell, omega_vec)
    n_u = FourierSeries.from_grid(pu_shift @ Z.generator.grid @ S.pi_u.grid,
                                  ell=ell)
    kappa = cohomology._opnorm_pinv_sup(n_u.grid, ell, pinv_tol, S.stable_rank)
    if not kappa < 1.0:
        raise InsufficientHyperbolicityError(
            f"unstable restriction does not expand: ||N_u^+|| = {kappa:.4g} >= 1",
            kappa=kappa)
    eq = TwoSidedEquation(n_u, 1.0, -E_u, Z.omega, CONTRACTIVE,
                          pinv_rank=S.stable_rank)
    return cohomology.solve_doubling_contractive(eq, n_doublings,
                                                 pinv_tol=pinv_tol)


def hyperbolic_defining_residual(delta, E_part, Z):
    """Sup norm of ``Z delta - delta o T + E`` (the full, unrestricted check)."""
    shifted = delta.rotate(Z.omega.omega).grid
    lhs = (Z.generator.grid @ delta.grid[..., None])[..., 0] - shifted + E_part.grid
    return FourierSeries.from_grid(lhs, ell=delta.ell).sup_norm()


# ---------------------------------------------------------------------------
# growth-rate diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HyperbolicityRates:
    """Fitted contraction/expansion rates and the admissible constant."""

    mu1: float   # forward contraction on the stable bundle
    mu2: float   # backward contraction on the unstable bundle
    mu3: float   # center growth bound (>= 1)
    C: float
    fit_residual: float

    def validate(self):
        ok = (self.mu1 < 1.0 and self.mu2 < 1.0 and self.mu3 > 1.0
              and self.mu1 * self.mu3 < 1.0 and self.mu2 * self.mu3 < 1.0)
        if not ok:
            raise InsufficientHyperbolicityError(
                f"rate chain violated: mu1={self.mu1:.4g}, mu2={self.mu2:.4g}, "
                f"mu3={self.mu3:.4g}")
        return self


def _growth_norms(Z, proj_grid, n_max):
    """Sup norms of the n-step cocycle restricted to a bundle, n in powers of 2.

    The doubling multiplies the two-sided restriction ``(P o T) Z P``, whose
    n-fold products equal ``P(theta + n omega) M(n) P(theta)``: identical in
    operator norm to the restricted cocycle, but immune to float leakage
    through the complementary (possibly expanding) directions.
    """
    ell = Z.ell
    omega_vec = Z.omega.omega
    p_shift = grid_rotate(proj_grid, ell, omega_vec)
    prod = p_shift @ Z.generator.grid @ proj_grid
    ns, norms = [], []
    n = 1
    while n <= n_max:
        s = np.linalg.svd(prod, compute_uv=False)
        ns.append(n)
        norms.append(float(np.max(s[..., 0])))
        if 2 * n > n_max:
            break
        prod = grid_rotate(prod, ell, n * omega_vec) @ prod
        n *= 2
    return np.array(ns), np.array(norms)


def _fit_rate(ns, norms):
    logs = np.log(np.maximum(norms, 1e-300))
    slope, intercept = np.polyfit(ns, logs, 1)
    resid = float(np.max(np.abs(logs - (slope * ns + intercept))))
    return float(np.exp(slope)), resid


def estimate_rates(Z, S, n_max=30, fit_warn=2.0):
    """Fit the three growth rates from doubling cocycle products.

    ``mu3`` is reported as an admissible bound (at least one plus a margin);
    the raw center fit typically sits at 1 up to polynomial factors.  A poor
    log-linear fit triggers :class:`UnreliableRatesWarning`.
    """
    if not S.has_mirror():
        raise ValueError("rate estimation needs the full splitting")
    ns, st_norms = _growth_norms(Z, S.pi_s.grid, n_max)
    mu1, r1 = _fit_rate(ns, st_norms)
    Zm = Z.mirror()
    nsu, un_norms = _growth_norms(Zm, S.pi_u.grid, n_max)
    mu2, r2 = _fit_rate(nsu, un_norms)
    nsc, c_norms = _growth_norms(Z, S.pi_c().grid, n_max)
    mu3_fit, r3 = _fit_rate(nsc, c_norms)
    mu3 = max(mu3_fit, 1.0 + 1e-9)
    C = 1.0
    for n, v in zip(ns, st_norms):
        C = max(C, v / mu1**n)
    for n, v in zip(nsc, c_norms):
        C = max(C, v / mu3**n)
    fit_residual = max(r1, r2, r3)
    if fit_residual > fit_warn:
        warnings.warn(
            f"rate fit residual {fit_residual:.3g} too large to trust",
            UnreliableRatesWarning)
    return HyperbolicityRates(mu1, mu2, mu3, C, fit_residual)


# ---------------------------------------------------------------------------
# composite Newton step for whiskered tori
# ---------------------------------------------------------------------------

def whiskered_newton_step(K, model, S, cfg=SolverConfig(), proj_tol=None):
    """Full correction of a whiskered torus: splitting, center, hyperbolic.

    Refines the splitting at the current embedding, applies the center step
    through the reducibility frame, and removes the hyperbolic residual
    components with the doubling solvers; the counterterm increment found by
    the center stage also shifts the hyperbolic right-hand sides.
    """
    Z = Cocycle.from_torus(model, K)
    E = invariance_residual(K, model)
    r = E.sup_norm()
    proj_tol = proj_tol or max(1e-13, min(1e-9, r * r))
    S, _ = refine_splitting(S, Z, tol=proj_tol, max_iter=6)

    lam_before = K.lam.copy()
    K_center, report = newton_center_step(K, model, cfg, splitting=S)
    delta = K_center.lam - lam_before

    E_s, E_u, _ = split_error(E, S, K.omega)
    if np.any(delta != 0.0):
        G = counterterm_direction(K, model)
        omega_vec = K.omega.omega
        ps = grid_rotate(S.pi_s.grid, K.ell, omega_vec)
        pu = grid_rotate(S.pi_u.grid, K.ell, omega_vec)
        E_s = E_s + FourierSeries.from_grid(
            (ps @ (G @ delta)[..., None])[..., 0], ell=K.ell)
        E_u = E_u + FourierSeries.from_grid(
            (pu @ (G @ delta)[..., None])[..., 0], ell=K.ell)
    d_s, _ = solve_stable(E_s, Z, S)
    d_u, _ = solve_unstable(E_u, Z, S)

    correction = d_s.grid + d_u.grid
    new_periodic = FourierSeries.from_grid(
        K_center.periodic.grid + correction, ell=K.ell)
    K_new = replace(K_center, periodic=new_periodic).normalize()
    r_after = invariance_residual(K_new, model).sup_norm()
    report = replace(report, residual_after=r_after,
                     tail_fraction=K_new.tail_fraction())
    return K_new, S, report


def solve_whiskered_torus(K, model, S, cfg=SolverConfig()):
    """Newton-iterate a whiskered torus together with its splitting."""
    reports = []
    trace = []
    grows = 0
    for _ in range(cfg.max_iter + 1):
        r = invariance_residual(K, model).sup_norm()
        trace.append(r)
        if r <= cfg.tol:
            if cfg.use_counterterm and np.max(np.abs(K.lam)) > cfg.lambda_tol:
                raise NoConvergenceError(
                    f"|lambda| = {np.max(np.abs(K.lam)):.3e} did not vanish",
                    trace=trace)
            return K, S, reports
        if len(reports) >= cfg.max_iter:
            break
        K, S, report = whiskered_newton_step(K, model, S, cfg)
        reports.append(report)
        if report.residual_after > r:
            grows += 1
            if grows >= 3:
                raise NoConvergenceError(
                    "residual grew for three consecutive steps",
                    trace=trace + [report.residual_after])
        else:
            grows = 0
    raise NoConvergenceError(
        f"no convergence after {cfg.max_iter} whiskered steps", trace=trace)
