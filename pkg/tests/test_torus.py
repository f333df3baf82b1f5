import numpy as np
import pytest

from kamtori.errors import ContinuationStallError, NoConvergenceError
from kamtori.fourier import FourierSeries, RotationVector, named_frequency
from kamtori.geometry import model_standard_map
from kamtori.torus import (
    SolverConfig,
    TorusEmbedding,
    build_frame,
    continuation,
    initial_embedding,
    invariance_residual,
    newton_center_step,
    newton_solve,
    quadratic_constant,
    reducibility_defect,
)

GOLDEN = RotationVector.named("golden")


def integrable_torus(n=256):
    return initial_embedding(model_standard_map(0.0), GOLDEN, n)


def shifted_action_torus(c, n=256):
    K = integrable_torus(n)
    g = K.periodic.grid.copy()
    g[..., 1] += c
    return TorusEmbedding(FourierSeries.from_grid(g), K.winding, K.omega)


# ---------------------------------------------------------------------------
# residual
# ---------------------------------------------------------------------------

def test_residual_exact_integrable_torus():
    K = integrable_torus()
    E = invariance_residual(K, model_standard_map(0.0))
    assert E.sup_norm() < 1e-15


def test_residual_constant_action_shift():
    K = shifted_action_torus(0.01)
    E = invariance_residual(K, model_standard_map(0.0))
    # shear map: the angle component picks up exactly the action offset
    assert np.max(np.abs(E.grid[:, 0] - 0.01)) < 1e-14
    assert np.max(np.abs(E.grid[:, 1])) < 1e-14


def test_residual_matches_dense_pointwise_oracle():
    model = model_standard_map(0.3)
    K = integrable_torus(512)
    E = invariance_residual(K, model)
    # oracle: evaluate F(K(theta_j)) - K(theta_j + omega) densely, with the
    # embedding reconstructed by direct trigonometric summation
    theta = np.arange(512) / 512
    fk = model.eval(K.evaluate(theta))
    k_shift = K.evaluate(theta + GOLDEN.omega[0])
    oracle = fk - k_shift
    assert np.max(np.abs(E.grid - oracle)) < 1e-13


# ---------------------------------------------------------------------------
# frame
# ---------------------------------------------------------------------------

def test_frame_closed_form_at_integrable_point():
    K = integrable_torus(64)
    frame = build_frame(K, model_standard_map(0.0))
    assert np.allclose(frame.tangent[:, 0, 0], 1.0, atol=1e-14)
    assert np.allclose(frame.tangent[:, 1, 0], 0.0, atol=1e-14)
    assert np.allclose(frame.gram_inv[:, 0, 0], 1.0, atol=1e-14)
    assert np.allclose(frame.unit_tangent[:, :, 0], [[1.0, 0.0]], atol=1e-14)
    assert np.allclose(frame.conjugate[:, :, 0], [[0.0, -1.0]], atol=1e-14)
    # the shear is the constant unit twist of the integrable map
    assert np.allclose(frame.torsion.grid, -1.0, atol=1e-14)
    assert frame.twist() == pytest.approx(1.0, abs=1e-14)


def test_frame_determinant_nonzero_on_converged_torus():
    model = model_standard_map(0.3)
    cfg = SolverConfig(tol=1e-12)
    K, _ = newton_solve(initial_embedding(model, GOLDEN, 1024), model, cfg)
    frame = build_frame(K, model)
    det = np.linalg.det(frame.basis)
    assert np.min(np.abs(det)) > 1e-3


def test_reducibility_defect_bounded_by_differentiated_residual():
    model = model_standard_map(0.3)
    K = integrable_torus(512)
    E = invariance_residual(K, model)
    de_norm = FourierSeries.from_grid(
        np.stack([E.derivative().grid[:, i] for i in range(2)], axis=-1)
    ).sup_norm()
    defect = reducibility_defect(K, model)
    # Frobenius/column-count slack on the matrix norms
    assert defect <= 2.0 * de_norm + 1e-12


# ---------------------------------------------------------------------------
# single Newton step
# ---------------------------------------------------------------------------

def test_step_exact_input_is_fixed_point():
    model = model_standard_map(0.0)
    K = integrable_torus()
    K2, report = newton_center_step(K, model)
    assert report.residual_before < 1e-15
    assert np.max(np.abs(K2.periodic.grid - K.periodic.grid)) < 1e-13
    assert np.max(np.abs(K2.lam)) == 0.0


def test_step_quadratic_on_action_offset():
    model = model_standard_map(0.0)
    K = shifted_action_torus(1e-3)
    K2, report = newton_center_step(K, model)
    assert report.residual_before == pytest.approx(1e-3, rel=1e-10)
    assert report.residual_after <= 1e-5


def test_step_quadratic_with_counterterm():
    model = model_standard_map(0.3)
    cfg = SolverConfig(use_counterterm=True)
    K = initial_embedding(model, GOLDEN, 1024)
    K2, report = newton_center_step(K, model, cfg)
    assert report.residual_after < 0.2 * report.residual_before
    assert np.isfinite(report.lambda_after)


def test_step_reports_are_finite_and_twisted():
    model = model_standard_map(0.3)
    K = initial_embedding(model, GOLDEN, 512)
    _, report = newton_center_step(K, model)
    for v in (report.residual_before, report.residual_after, report.twist,
              report.norm_gram_inv, report.cond_basis, report.divisor_margin,
              report.seconds):
        assert np.isfinite(v)
    assert report.twist > 1e-8
    assert report.condition_numbers["twist_inv"] < 1e8


# ---------------------------------------------------------------------------
# full solves
# ---------------------------------------------------------------------------

def test_solve_exact_guess_takes_zero_steps():
    model = model_standard_map(0.0)
    K, reports = newton_solve(integrable_torus(), model)
    assert reports == []


def test_solve_eps03_converges_quadratically():
    model = model_standard_map(0.3)
    cfg = SolverConfig(tol=1e-12)
    K, reports = newton_solve(initial_embedding(model, GOLDEN, 1024), model, cfg)
    assert len(reports) <= 6
    resid = [reports[0].residual_before] + [r.residual_after for r in reports]
    assert resid[-1] <= 1e-12
    assert np.isfinite(quadratic_constant(resid))
    # slope diagnostic: log r_{n+1} / (2 log r_n) approaches 1
    ratios = [np.log(r1) / (2 * np.log(r0))
              for r0, r1 in zip(resid, resid[1:]) if 1e-13 < r1 and r0 < 0.5]
    assert abs(ratios[-1] - 1.0) < 0.35


def test_solve_counterterm_vanishes_at_convergence():
    model = model_standard_map(0.3)
    cfg = SolverConfig(tol=1e-12, use_counterterm=True)
    K, reports = newton_solve(initial_embedding(model, GOLDEN, 1024), model, cfg)
    assert invariance_residual(K, model).sup_norm() <= 1e-12
    assert np.max(np.abs(K.lam)) <= 1e-10


def test_solve_beyond_breakdown_raises():
    model = model_standard_map(2.0)
    cfg = SolverConfig(tol=1e-12, max_iter=12)
    with pytest.raises(NoConvergenceError) as exc:
        newton_solve(initial_embedding(model, GOLDEN, 512), model, cfg)
    assert len(exc.value.trace) >= 1


def test_translation_family_and_normalization():
    model = model_standard_map(0.3)
    cfg = SolverConfig(tol=1e-12)
    K, _ = newton_solve(initial_embedding(model, GOLDEN, 1024), model, cfg)
    for sigma in (0.1, 0.25):
        K_shift = K.translate(sigma)
        assert invariance_residual(K_shift, model).sup_norm() <= 5e-12
        K_back = K_shift.normalize()
        assert np.max(np.abs(K_back.periodic.grid - K.periodic.grid)) < 1e-10


def test_frame_shortcut_and_exact_agree():
    model = model_standard_map(0.3)
    base = initial_embedding(model, GOLDEN, 512)
    K1, _ = newton_solve(base, model, SolverConfig(frame_mode="shortcut"))
    K2, _ = newton_solve(base, model, SolverConfig(frame_mode="exact"))
    assert np.max(np.abs(K1.periodic.grid - K2.periodic.grid)) <= 1e-10


# ---------------------------------------------------------------------------
# continuation
# ---------------------------------------------------------------------------

def test_continuation_schedule_to_half():
    cfg = SolverConfig(tol=1e-11, max_iter=12)
    schedule = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    results = continuation(model_standard_map, schedule, GOLDEN, 512, cfg)
    assert len(results) == 6
    assert [r[0] for r in results] == schedule
    for eps, K, _ in results:
        assert invariance_residual(K, model_standard_map(eps)).sup_norm() <= 1e-11


def test_continuation_single_value_schedule():
    results = continuation(model_standard_map, [0.0], GOLDEN, 256)
    assert len(results) == 1
    assert results[0][1].tail_fraction() < 1e-12


def test_continuation_stalls_before_breakdown():
    cfg = SolverConfig(tol=1e-10, max_iter=10, min_step=1e-3)
    with pytest.raises(ContinuationStallError) as exc:
        continuation(model_standard_map, [0.0, 0.3, 0.6, 0.9, 1.2], GOLDEN, 512, cfg)
    assert exc.value.last_good is not None
    assert exc.value.last_good < 1.2
