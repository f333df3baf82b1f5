"""Newton solver for invariant tori: frames, center steps, drivers.

The candidate embedding is stored as its periodic part plus an integer
winding matrix; the invariance residual ``F o K - K o T_omega`` is evaluated
pointwise on the grid (map evaluations, frame products) and shifted
spectrally (rotations, derivatives, small-divisor solves), so one step costs
``O(N log N)`` time and ``O(N)`` memory.

The center step conjugates the linearized operator to an upper-triangular
constant-diagonal form via the frame ``[DK | (J o K)^-1 DK N]`` built from
the embedding itself, reducing the solve to two constant-coefficient
difference equations plus finitely many averages.  An optional counterterm
absorbs the solvability averages; for exact symplectic maps it converges to
zero along with the residual.
"""

import time
from dataclasses import dataclass, replace

import numpy as np

from . import fourier, geometry
from .errors import (
    ContinuationStallError,
    DegenerateEmbeddingError,
    ModelDomainError,
    NoConvergenceError,
    ObstructionError,
    TwistDegeneracyError,
)
from .fourier import FourierSeries, RotationVector, solve_cohomology_constant
from .geometry import WindingMatrix, lifted_grid, lifted_tangent


@dataclass(frozen=True)
class SolverConfig:
    """Knobs shared by the Newton drivers."""

    tol: float = 1e-12
    max_iter: int = 20
    lambda_tol: float = 1e-10
    twist_floor: float = 1e-8
    divisor_floor: float = 1e-9
    zero_average_tol: float = 1e-10
    tail_threshold: float = 1e-9
    max_grid: int = 2**16
    frame_mode: str = "shortcut"  # or "exact"
    use_counterterm: bool = False
    min_step: float = 1e-3  # continuation only


@dataclass(frozen=True)
class TorusEmbedding:
    """Candidate invariant torus: periodic part, winding, frequency, counterterm.

    ``reference`` optionally freezes the embedding used for the counterterm
    direction; when absent the current embedding plays that role.
    """

    periodic: FourierSeries
    winding: WindingMatrix
    omega: RotationVector
    lam: np.ndarray = None
    reference: "TorusEmbedding" = None

    def __post_init__(self):
        if self.lam is None:
            object.__setattr__(self, "lam", np.zeros(self.ell))
        else:
            object.__setattr__(self, "lam",
                               np.atleast_1d(np.asarray(self.lam, dtype=float)))

    @property
    def ell(self):
        return self.periodic.ell

    @property
    def dim(self):
        return self.periodic.range_shape[0]

    @property
    def grid_shape(self):
        return self.periodic.grid_shape

    def embedded_grid(self, shift=None):
        """Grid values of the lifted embedding, optionally at theta + shift."""
        if shift is None:
            return lifted_grid(self.periodic, self.winding)
        shift = np.atleast_1d(np.asarray(shift, dtype=float))
        out = self.periodic.rotate(shift).grid.copy()
        thetas = fourier.theta_grid(self.grid_shape) + shift
        out[..., : self.ell] += thetas @ self.winding.mat.T.astype(float)
        return out

    def tangent_grid(self, shift=None):
        """Lifted derivative D(embedding), optionally rotated by shift."""
        if shift is None:
            return lifted_tangent(self.periodic, self.winding)
        raw = lifted_tangent(self.periodic, self.winding)
        return fourier.grid_rotate(raw, self.ell, np.atleast_1d(shift))

    def evaluate(self, thetas):
        return geometry.lifted_at(self.periodic, self.winding, thetas)

    def translate(self, sigma):
        """The reparameterized solution ``K o T_sigma``."""
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        shifted = self.periodic.rotate(sigma).grid.copy()
        shifted[..., : self.ell] += self.winding.mat.astype(float) @ sigma
        return replace(self, periodic=FourierSeries.from_grid(shifted, ell=self.ell))

    def normalize(self):
        """Pin the torus origin: zero angle-average over Range(winding)."""
        if self.winding.rank == 0:
            return self
        avg = self.periodic.average()[: self.ell]
        sigma = -np.linalg.pinv(self.winding.mat.astype(float)) @ avg
        return self.translate(sigma)

    def normalization_defect(self):
        avg = self.periodic.average()[: self.ell]
        mat = self.winding.mat.astype(float)
        proj = mat @ np.linalg.pinv(mat)
        return float(np.max(np.abs(proj @ avg))) if self.winding.rank else 0.0

    def refine(self, factor=2):
        new_shape = tuple(n * factor for n in self.grid_shape)
        return replace(self, periodic=self.periodic.pad_to(new_shape))

    def tail_fraction(self):
        return self.periodic.tail_fraction()


def initial_embedding(model, omega, n_grid):
    """Integrable-limit guess: angles wind once, actions sit at omega.

    Exactly invariant for both bundled models at zero coupling.
    """
    omega = omega if isinstance(omega, RotationVector) else RotationVector(omega)
    ell, d = model.ell, model.d
    values = np.zeros((n_grid,) * ell + (2 * model.d,))
    for i in range(ell):
        values[..., d + i] = omega.omega[i]
    K = FourierSeries.from_grid(values, ell=ell)
    return TorusEmbedding(K, WindingMatrix.identity(ell), omega)


def _reduce_angle_branch(raw, ell_angles, ell_grid):
    """Map angle residual components to the branch nearest zero.

    Adjacent-point jumps above one half flag an inconsistent winding.
    """
    red = raw.copy()
    ang = raw[..., :ell_angles] if ell_angles else raw[..., :0]
    if ell_angles:
        near = ang - np.round(ang)
        for axis in range(ell_grid):
            wrapped = np.concatenate([near, np.take(near, [0], axis=axis)], axis=axis)
            if np.any(np.abs(np.diff(wrapped, axis=axis)) > 0.5):
                raise ModelDomainError(
                    "angle residual jumps by more than 1/2 between grid "
                    "neighbors: winding of the candidate is inconsistent")
        red[..., :ell_angles] = near
    return red


def counterterm_direction(K, model):
    """Grid field ``((J o K0)^-1 DK0) o T_omega`` used by the modified equation."""
    K0 = K.reference or K
    omega_vec = K.omega.omega
    z_shift = K0.embedded_grid(shift=omega_vec)
    tangent_shift = K0.tangent_grid(shift=omega_vec)
    return model.structure.form_inv_at(z_shift) @ tangent_shift


def invariance_residual(K, model):
    """Residual ``F o K - K o T_omega - G lambda`` as a periodic series.

    Angle components are reduced to the branch nearest zero.
    """
    z = K.embedded_grid()
    fz = model.eval(z)
    raw = fz - K.embedded_grid(shift=K.omega.omega)
    if np.any(K.lam != 0.0):
        raw = raw - counterterm_direction(K, model) @ K.lam
    red = _reduce_angle_branch(raw, K.ell, K.ell)
    return FourierSeries.from_grid(red, ell=K.ell)


@dataclass
class ReducibilityFrame:
    """Adapted frame along the torus and its shear field.

    ``basis`` juxtaposes the tangent columns with their symplectic
    conjugates; conjugating the linearized Newton operator by it leaves an
    upper-triangular system whose only non-constant entry is ``torsion``.
    """

    tangent: np.ndarray          # DK, (N..., 2d, ell)
    gram_inv: np.ndarray         # (DK^T DK)^-1
    unit_tangent: np.ndarray     # DK (DK^T DK)^-1
    conjugate: np.ndarray        # (J o K)^-1 unit_tangent
    basis: np.ndarray            # [tangent | conjugate]
    torsion: FourierSeries       # the ell x ell shear field
    cond_basis: float            # sup over grid of 1/sigma_min(basis)
    norm_gram_inv: float

    def twist(self):
        """Smallest singular value of the averaged torsion."""
        avg = np.atleast_2d(self.torsion.average())
        return float(np.min(np.linalg.svd(avg, compute_uv=False)))


def build_frame(K, model, rank_tol=1e-10):
    """Assemble the reducibility frame for the current embedding."""
    ell = K.ell
    alpha = K.tangent_grid()
    z = K.embedded_grid()
    gram = np.swapaxes(alpha, -1, -2) @ alpha
    sv = np.linalg.svd(gram, compute_uv=False)
    if np.min(sv[..., -1]) <= rank_tol * np.max(sv[..., 0]):
        raise DegenerateEmbeddingError(
            "tangent Gram matrix numerically singular on the grid")
    gram_inv = np.linalg.inv(gram)
    beta = alpha @ gram_inv
    gamma = model.structure.form_inv_at(z) @ beta
    basis = np.concatenate([alpha, gamma], axis=-1)

    omega_vec = K.omega.omega
    beta_shift = fourier.grid_rotate(beta, ell, omega_vec)
    gamma_shift = fourier.grid_rotate(gamma, ell, omega_vec)
    df_gamma = model.jac(z) @ gamma
    if model.structure.almost_complex:
        shear = np.swapaxes(beta_shift, -1, -2) @ df_gamma
    else:
        shear = np.swapaxes(beta_shift, -1, -2) @ (df_gamma - gamma_shift)
    torsion = FourierSeries.from_grid(shear, ell=ell)

    sv_basis = np.linalg.svd(basis, compute_uv=False)
    cond_basis = float(np.max(1.0 / sv_basis[..., -1]))
    norm_gram_inv = float(np.max(np.linalg.svd(gram_inv, compute_uv=False)[..., 0]))
    return ReducibilityFrame(alpha, gram_inv, beta, gamma, basis, torsion,
                             cond_basis, norm_gram_inv)


def reducibility_defect(K, model, frame=None):
    """Sup norm of ``(DF o K) M - (M o T) [[Id, torsion], [0, Id]]``."""
    frame = frame or build_frame(K, model)
    ell = K.ell
    omega_vec = K.omega.omega
    z = K.embedded_grid()
    lhs = model.jac(z) @ frame.basis
    basis_shift = fourier.grid_rotate(frame.basis, ell, omega_vec)
    two_ell = 2 * ell
    block = np.zeros(frame.torsion.grid_shape + (two_ell, two_ell))
    block[...] = np.eye(two_ell)
    block[..., :ell, ell:] = frame.torsion.grid.reshape(
        frame.torsion.grid_shape + (ell, ell))
    rhs = basis_shift @ block
    return FourierSeries.from_grid(lhs - rhs, ell=ell).sup_norm()


@dataclass(frozen=True)
class NewtonReport:
    """Per-step diagnostics; the explicitly computable condition numbers."""

    residual_before: float
    residual_after: float
    lambda_after: float
    twist: float
    norm_gram_inv: float
    cond_basis: float
    divisor_margin: float
    obstruction: float
    tail_fraction: float
    grid_size: int
    seconds: float

    @property
    def condition_numbers(self):
        return {
            "norm_N": self.norm_gram_inv,
            "norm_M_inv": self.cond_basis,
            "twist_inv": 1.0 / self.twist if self.twist else np.inf,
            "divisor_margin": self.divisor_margin,
        }


def _symplectic_block_inverse_apply(y, ell):
    """Apply [[0, Id], [-Id, 0]]^-1 = [[0, -Id], [Id, 0]] to stacked columns."""
    top, bottom = y[..., :ell, :], y[..., ell:, :]
    return np.concatenate([-bottom, top], axis=-2)


def newton_center_step(K, model, cfg=SolverConfig(), splitting=None):
    """One Newton correction in the center directions.

    For Lagrangian tori (no ``splitting``) the center projection is the
    identity and this is a complete Newton step.  With a splitting, the
    residual and counterterm direction are first projected onto the center
    bundle at the shifted base point, and the returned correction covers the
    center component only.

    Returns ``(TorusEmbedding, NewtonReport)``.
    """
    t0 = time.perf_counter()
    ell = K.ell
    omega_vec = K.omega.omega
    use_ct = cfg.use_counterterm

    E = invariance_residual(K, model)
    r_before = E.sup_norm()

    frame = build_frame(K, model)
    twist = frame.twist()

    z_shift = K.embedded_grid(shift=omega_vec)
    J_shift = model.structure.form_at(z_shift)
    basis_shift = fourier.grid_rotate(frame.basis, ell, omega_vec)

    E_grid = E.grid
    G_grid = counterterm_direction(K, model)
    if splitting is not None:
        proj = splitting.center_projection_shifted(omega_vec)
        E_grid = (proj @ E_grid[..., None])[..., 0]
        G_grid = proj @ G_grid
    columns = np.concatenate([E_grid[..., None], G_grid], axis=-1)

    mtj = np.swapaxes(basis_shift, -1, -2) @ J_shift
    y = mtj @ columns
    if cfg.frame_mode == "shortcut":
        transformed = _symplectic_block_inverse_apply(y, ell)
    else:
        g2 = mtj @ basis_shift
        transformed = np.linalg.solve(g2, y)
    e1, e2 = transformed[..., :ell, 0], transformed[..., ell:, 0]
    b1, b2 = transformed[..., :ell, 1:], transformed[..., ell:, 1:]

    e1_s = FourierSeries.from_grid(e1, ell=ell)
    e2_s = FourierSeries.from_grid(e2, ell=ell)
    avg_e2 = np.atleast_1d(e2_s.average())

    if use_ct:
        avg_b2 = np.atleast_2d(FourierSeries.from_grid(b2, ell=ell).average())
        sv = np.linalg.svd(avg_b2, compute_uv=False)
        if np.min(sv) < cfg.twist_floor:
            raise TwistDegeneracyError(
                "averaged counterterm pairing is singular; the modified "
                "equation cannot absorb the obstruction")
        delta = np.linalg.solve(avg_b2, avg_e2)
        rhs2_grid = -e2 + b2 @ delta
        obstruction = 0.0
    else:
        delta = np.zeros(ell)
        obstruction = float(np.max(np.abs(avg_e2)))
        if r_before > 0 and obstruction > 0.25 * max(r_before, 1e-15):
            raise ObstructionError(
                f"solvability average {obstruction:.3e} is not quadratically "
                f"small against the residual {r_before:.3e}; "
                "re-run with the counterterm enabled", average=avg_e2)
        rhs2_grid = -(e2 - avg_e2)
    rhs2 = FourierSeries.from_grid(rhs2_grid, ell=ell)
    rhs2 = rhs2 - rhs2.average()
    w2_tilde, coh_report = solve_cohomology_constant(
        rhs2, omega_vec, zero_average_tol=cfg.zero_average_tol,
        divisor_floor=cfg.divisor_floor)

    if twist < cfg.twist_floor:
        raise TwistDegeneracyError(
            f"twist {twist:.3e} below floor {cfg.twist_floor:.1e}; "
            "enable the counterterm to proceed through the degeneracy")
    torsion_grid = frame.torsion.grid
    a_w2 = (torsion_grid @ w2_tilde.grid[..., None])[..., 0]
    avg_a = np.atleast_2d(frame.torsion.average())
    rhs_mean = np.atleast_1d(e1_s.average()) + \
        np.atleast_1d(FourierSeries.from_grid(a_w2, ell=ell).average())
    if use_ct:
        rhs_mean = rhs_mean - np.atleast_1d(
            FourierSeries.from_grid(b1 @ delta, ell=ell).average())
    w2_mean = -np.linalg.solve(avg_a, rhs_mean)

    w2_full = w2_tilde.grid + w2_mean
    rhs1_grid = -e1 - (torsion_grid @ w2_full[..., None])[..., 0]
    if use_ct:
        rhs1_grid = rhs1_grid + b1 @ delta
    rhs1 = FourierSeries.from_grid(rhs1_grid, ell=ell)
    rhs1 = rhs1 - rhs1.average()
    w1, _ = solve_cohomology_constant(
        rhs1, omega_vec, zero_average_tol=cfg.zero_average_tol,
        divisor_floor=cfg.divisor_floor)

    delta_k = (frame.tangent @ w1.grid[..., None])[..., 0] + \
        (frame.conjugate @ w2_full[..., None])[..., 0]
    new_periodic = FourierSeries.from_grid(K.periodic.grid + delta_k, ell=ell)
    K_new = replace(K, periodic=new_periodic, lam=K.lam + delta)
    K_new = K_new.normalize()

    r_after = invariance_residual(K_new, model).sup_norm()
    report = NewtonReport(
        residual_before=r_before,
        residual_after=r_after,
        lambda_after=float(np.max(np.abs(K_new.lam))),
        twist=twist,
        norm_gram_inv=frame.norm_gram_inv,
        cond_basis=frame.cond_basis,
        divisor_margin=coh_report.divisor_min,
        obstruction=obstruction,
        tail_fraction=K_new.tail_fraction(),
        grid_size=K.periodic.n_total,
        seconds=time.perf_counter() - t0,
    )
    return K_new, report


def quadratic_constant(residuals):
    """Single fitted constant C with r_{n+1} <= C r_n^2 along a run."""
    cs = [r1 / max(r0 * r0, 1e-300)
          for r0, r1 in zip(residuals, residuals[1:]) if r0 > 1e-14]
    return max(cs) if cs else 0.0


def newton_solve(K, model, cfg=SolverConfig(), splitting=None, step_fn=None):
    """Iterate Newton steps until the sup-norm residual clears ``cfg.tol``.

    Reports are collected per corrective step (an already-converged guess
    performs none).  Divergence (three consecutive residual increases) and
    iteration exhaustion raise :class:`NoConvergenceError` with the trace;
    with the counterterm active, a converged run must also have driven the
    counterterm below ``cfg.lambda_tol``.
    """
    step = step_fn or (lambda K_: newton_center_step(K_, model, cfg, splitting))
    reports = []
    trace = []
    grows = 0
    for _ in range(cfg.max_iter + 1):
        try:
            r = invariance_residual(K, model).sup_norm()
        except ModelDomainError as exc:
            raise NoConvergenceError(
                f"iterate left the model domain: {exc}", trace=trace) from exc
        trace.append(r)
        if r <= cfg.tol:
            if cfg.use_counterterm and np.max(np.abs(K.lam)) > cfg.lambda_tol:
                raise NoConvergenceError(
                    f"residual converged but |lambda| = "
                    f"{np.max(np.abs(K.lam)):.3e} exceeds {cfg.lambda_tol:.1e} "
                    "(exactness violated)", trace=trace)
            return K, reports
        if len(reports) >= cfg.max_iter:
            break
        try:
            K_next, report = step(K)
        except (ObstructionError, ModelDomainError, DegenerateEmbeddingError) as exc:
            raise NoConvergenceError(
                f"Newton step failed ({type(exc).__name__}): {exc}",
                trace=trace) from exc
        reports.append(report)
        if report.residual_after > r:
            grows += 1
            if grows >= 3:
                raise NoConvergenceError(
                    "residual grew for three consecutive steps",
                    trace=trace + [report.residual_after])
        else:
            grows = 0
        K = K_next
        if report.tail_fraction > cfg.tail_threshold and \
                max(K.grid_shape) * 2 <= cfg.max_grid:
            K = K.refine(2)
    raise NoConvergenceError(
        f"no convergence after {cfg.max_iter} steps (last residual "
        f"{trace[-1]:.3e})", trace=trace)


def continuation(model_factory, schedule, omega, n_grid, cfg=SolverConfig(),
                 warm_start=None, solver=None):
    """Continue a torus along a parameter schedule with step halving.

    ``model_factory`` maps a parameter value to a model; the first schedule
    value must admit the integrable guess (or supply ``warm_start``).
    Returns a list of ``(parameter, TorusEmbedding, reports)`` for every
    accepted value, including any intermediate values inserted on failure.
    Stalls below ``cfg.min_step`` raise :class:`ContinuationStallError`.
    """
    schedule = [float(s) for s in schedule]
    solve = solver or (lambda K_, m_: newton_solve(K_, m_, cfg))
    results = []
    first = schedule[0]
    K = warm_start or initial_embedding(model_factory(first), omega, n_grid)
    K, reports = solve(K, model_factory(first))
    results.append((first, K, reports))
    last_good = first
    for target in schedule[1:]:
        direction = np.sign(target - last_good)
        while direction * (target - last_good) > 0:
            attempt = target
            while True:
                try:
                    K_try, reports = solve(K, model_factory(attempt))
                    break
                except (NoConvergenceError, TwistDegeneracyError):
                    if abs(attempt - last_good) <= 2 * cfg.min_step:
                        raise ContinuationStallError(
                            f"continuation stalled at parameter {last_good:g} "
                            f"(step below {cfg.min_step:g})",
                            last_good=last_good) from None
                    attempt = last_good + 0.5 * (attempt - last_good)
            K = K_try
            last_good = attempt
            results.append((attempt, K, reports))
    return results
