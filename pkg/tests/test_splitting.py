import numpy as np
import pytest

from kamtori.errors import AmbiguousRankError, InsufficientHyperbolicityError
from kamtori.fourier import FourierSeries, RotationVector
from kamtori.geometry import hyperbolic_multiplier, model_rotator_pendulum
from kamtori.splitting import (
    Cocycle,
    InvariantSplitting,
    constant_splitting,
    estimate_rates,
    hyperbolic_defining_residual,
    newton_projection_step,
    newton_projection_solve,
    product_splitting,
    projection_residuals,
    refine_splitting,
    solve_stable,
    solve_unstable,
    solve_whiskered_torus,
    split_error,
    whiskered_newton_step,
)
from kamtori.torus import SolverConfig, initial_embedding, invariance_residual

GOLDEN = RotationVector.named("golden")
MU1 = hyperbolic_multiplier(1.0)


def product_setup(n=128, a=1.0):
    model = model_rotator_pendulum(a, 0.0)
    K = initial_embedding(model, GOLDEN, n)
    S = product_splitting(model, K)
    Z = Cocycle.from_torus(model, K)
    return model, K, S, Z


def smooth_matrix_noise(rng, n, dim, size):
    theta = np.arange(n) / n
    out = np.zeros((n, dim, dim))
    for i in range(dim):
        for j in range(dim):
            for k in (1, 2, 3):
                out[:, i, j] += rng.normal() * np.cos(2 * np.pi * k * theta)
                out[:, i, j] += rng.normal() * np.sin(2 * np.pi * k * theta)
    return size * out / max(np.max(np.abs(out)), 1e-300)


def perturbed_splitting(S, rng, size):
    noise = smooth_matrix_noise(rng, S.pi_s.grid_shape[0], S.dim, size)
    ps = S.pi_s.grid + noise
    eye = np.eye(S.dim)
    return InvariantSplitting(
        FourierSeries.from_grid(ps), FourierSeries.from_grid(eye - ps),
        stable_rank=S.stable_rank, pi_u=S.pi_u, pi_cs=S.pi_cs)


# ---------------------------------------------------------------------------
# cocycles and residuals
# ---------------------------------------------------------------------------

def test_cocycle_iterate_rule():
    _, _, _, Z = product_setup(64)
    assert Z.iterate_check(3) < 1e-12


def test_exact_product_projections_have_zero_residual():
    _, _, S, Z = product_setup()
    e_cu, e_s = projection_residuals(S, Z)
    assert e_cu.sup_norm() < 1e-13
    assert e_s.sup_norm() < 1e-13
    assert S.idempotency_defect() < 1e-13


def test_degenerate_zero_stable_projection_is_consistent():
    _, K, _, Z = product_setup(64)
    n = K.grid_shape[0]
    eye = np.broadcast_to(np.eye(4), (n, 4, 4)).copy()
    S0 = InvariantSplitting(
        FourierSeries.from_grid(np.zeros((n, 4, 4))),
        FourierSeries.from_grid(eye), stable_rank=0)
    e_cu, e_s = projection_residuals(S0, Z)
    assert e_cu.sup_norm() == 0.0
    assert e_s.sup_norm() == 0.0
    # the rank invariant is what fails instead
    assert np.all(S0.rank_profile() == 0)


def test_perturbed_residuals_match_pointwise_oracle():
    _, K, S, Z = product_setup()
    rng = np.random.default_rng(3)
    Sp = perturbed_splitting(S, rng, 1e-3)
    e_cu, e_s = projection_residuals(Sp, Z)
    assert 1e-4 < e_cu.sup_norm() + e_s.sup_norm() < 1e-2
    # oracle: dense trigonometric evaluation of the shifted projection
    theta = np.arange(K.grid_shape[0]) / K.grid_shape[0]
    pcu_shift = Sp.pi_cu.evaluate(theta + GOLDEN.omega[0])
    oracle = pcu_shift @ Z.generator.grid @ Sp.pi_s.grid
    assert np.max(np.abs(e_cu.grid - oracle)) < 1e-13


# ---------------------------------------------------------------------------
# projection Newton
# ---------------------------------------------------------------------------

def test_projection_step_fixed_point_on_exact_input():
    _, _, S, Z = product_setup()
    S2, report = newton_projection_step(S, Z)
    assert report.residual_before < 1e-13
    assert np.max(np.abs(S2.pi_s.grid - S.pi_s.grid)) < 1e-12


def test_projection_step_quadratic_contraction():
    _, _, S, Z = product_setup()
    rng = np.random.default_rng(11)
    Sp = perturbed_splitting(S, rng, 1e-3)
    S2, report = newton_projection_step(Sp, Z)
    assert report.residual_after <= 1e-5
    assert report.idempotency_defect <= 1e-12
    assert np.max(np.abs(S2.pi_s.grid + S2.pi_cu.grid - np.eye(4))) == 0.0
    assert report.constraint_defect <= 1e-5  # O(residual^2) for the increment


def test_projection_newton_converges_and_invariants_hold():
    _, _, S, Z = product_setup()
    rng = np.random.default_rng(5)
    Sp = perturbed_splitting(S, rng, 1e-3)
    S2, reports = newton_projection_solve(Sp, Z, tol=1e-12)
    assert len(reports) <= 4
    e_cu, e_s = projection_residuals(S2, Z)
    assert e_cu.sup_norm() + e_s.sup_norm() <= 1e-12
    assert S2.idempotency_defect() <= 1e-12
    # quadratic contraction with one fitted constant
    resid = [reports[0].residual_before] + [r.residual_after for r in reports]
    cs = [r1 / r0**2 for r0, r1 in zip(resid, resid[1:]) if r0 > 1e-12]
    assert max(cs) < 1e4


def test_constant_cocycle_coordinate_projections():
    # u + c + c + s spectrum: one expanding, double unit, one contracting;
    # the grid is finer than the perturbation band so increment products
    # stay resolved
    n = 128
    mat = np.diag([2.0, 1.0, 1.0, 0.5])
    zg = np.broadcast_to(mat, (n, 4, 4)).copy()
    Z = Cocycle(FourierSeries.from_grid(zg), GOLDEN)
    pi_s, pi_cu = constant_splitting(mat, (n,))
    exact = np.diag([0.0, 0.0, 0.0, 1.0])
    assert np.max(np.abs(pi_s.grid - exact)) < 1e-13
    rng = np.random.default_rng(17)
    S = InvariantSplitting(pi_s, pi_cu, stable_rank=1)
    Sp = perturbed_splitting(S, rng, 0.1)
    S2, reports = newton_projection_solve(Sp, Z, tol=1e-13)
    assert len(reports) <= 3
    assert np.max(np.abs(S2.pi_s.grid - exact)) < 1e-12


def test_ambiguous_rank_rejected():
    _, _, S, Z = product_setup(64)
    rng = np.random.default_rng(23)
    Sp = perturbed_splitting(S, rng, 0.6)  # destroys the 0/1 gap
    with pytest.raises((AmbiguousRankError, InsufficientHyperbolicityError)):
        newton_projection_step(Sp, Z)


# ---------------------------------------------------------------------------
# splitting a residual and the hyperbolic solves
# ---------------------------------------------------------------------------

def test_split_error_parts_sum_and_project():
    _, K, S, Z = product_setup()
    rng = np.random.default_rng(7)
    n = K.grid_shape[0]
    E = FourierSeries.from_grid(
        np.stack([smooth_matrix_noise(rng, n, 2, 1.0)[:, 0, 0] for _ in range(4)],
                 axis=-1))
    e_s, e_u, e_c = split_error(E, S, GOLDEN)
    total = e_s.grid + e_u.grid + e_c.grid
    assert np.max(np.abs(total - E.grid)) < 1e-13
    # each part is idempotent under its own shifted projection
    from kamtori.fourier import grid_rotate
    for part, proj in ((e_s, S.pi_s), (e_u, S.pi_u), (e_c, S.pi_c())):
        p = grid_rotate(proj.grid, 1, GOLDEN.omega)
        again = (p @ part.grid[..., None])[..., 0]
        assert np.max(np.abs(again - part.grid)) < 1e-12


def test_split_error_pure_stable_input():
    _, K, S, Z = product_setup()
    rng = np.random.default_rng(9)
    n = K.grid_shape[0]
    raw = np.stack([np.cos(2 * np.pi * np.arange(n) / n) * (i + 1)
                    for i in range(4)], axis=-1)
    from kamtori.fourier import grid_rotate
    ps = grid_rotate(S.pi_s.grid, 1, GOLDEN.omega)
    E = FourierSeries.from_grid((ps @ raw[..., None])[..., 0])
    e_s, e_u, e_c = split_error(E, S, GOLDEN)
    assert np.max(np.abs(e_s.grid - E.grid)) < 1e-12
    assert e_u.sup_norm() < 1e-12
    assert e_c.sup_norm() < 1e-12


def test_split_error_zero_input():
    _, _, S, _ = product_setup(64)
    E = FourierSeries.zeros((64,), (4,))
    for part in split_error(E, S, GOLDEN):
        assert part.sup_norm() == 0.0


def test_solve_stable_zero_and_constant_closed_form():
    _, K, S, Z = product_setup(64)
    zero = FourierSeries.zeros((64,), (4,))
    d, _ = solve_stable(zero, Z, S)
    assert d.sup_norm() == 0.0
    # constant forcing along the stable eigenvector: lam_s d - d = -1
    lam_s = 1.0 / MU1
    zg = Z.generator.grid[0]
    w, v = np.linalg.eig(zg)
    i_s = int(np.argmin(np.abs(w)))
    e_vec = np.real(v[:, i_s])
    e_vec /= np.linalg.norm(e_vec)
    E = FourierSeries.from_grid(np.broadcast_to(e_vec, (64, 4)).copy())
    d, _ = solve_stable(E, Z, S)
    coef = d.grid @ e_vec
    assert np.max(np.abs(coef - 1.0 / (1.0 - lam_s))) < 1e-11
    assert hyperbolic_defining_residual(d, E, Z) < 1e-11


def test_solve_stable_matches_truncated_series_oracle():
    _, K, S, Z = product_setup()
    rng = np.random.default_rng(31)
    n = K.grid_shape[0]
    raw = smooth_matrix_noise(rng, n, 2, 1.0)
    E_raw = np.stack([raw[:, 0, 0], raw[:, 0, 1], raw[:, 1, 0], raw[:, 1, 1]],
                     axis=-1)
    from kamtori.fourier import grid_rotate
    ps = grid_rotate(S.pi_s.grid, 1, GOLDEN.omega)
    E = FourierSeries.from_grid((ps @ E_raw[..., None])[..., 0])
    d, _ = solve_stable(E, Z, S)
    # oracle: 60 terms of the explicit backward sum, transported term by term;
    # the (mathematically redundant) projection after each factor keeps float
    # leakage from exciting the expanding directions over long products
    zg = Z.generator.grid
    total = grid_rotate(E.grid, 1, -GOLDEN.omega)
    for k in range(1, 60):
        v = grid_rotate(E.grid, 1, -(k + 1) * GOLDEN.omega)
        for j in range(k, 0, -1):
            zj = grid_rotate(zg, 1, -j * GOLDEN.omega)
            pj = grid_rotate(S.pi_s.grid, 1, -(j - 1) * GOLDEN.omega)
            v = (pj @ (zj @ v[..., None]))[..., 0]
        total = total + v
    assert np.max(np.abs(d.grid - total)) < 1e-11
    assert hyperbolic_defining_residual(d, E, Z) <= 1e-11 * max(E.sup_norm(), 1e-300)


def test_solve_unstable_defining_equation():
    _, K, S, Z = product_setup()
    rng = np.random.default_rng(37)
    n = K.grid_shape[0]
    raw = smooth_matrix_noise(rng, n, 2, 1.0)
    E_raw = np.stack([raw[:, 0, 0], raw[:, 0, 1], raw[:, 1, 0], raw[:, 1, 1]],
                     axis=-1)
    from kamtori.fourier import grid_rotate
    pu = grid_rotate(S.pi_u.grid, 1, GOLDEN.omega)
    E = FourierSeries.from_grid((pu @ E_raw[..., None])[..., 0])
    d, _ = solve_unstable(E, Z, S)
    assert hyperbolic_defining_residual(d, E, Z) <= 1e-11 * max(E.sup_norm(), 1e-300)


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------

def test_rates_product_model():
    _, _, S, Z = product_setup(64)
    rates = estimate_rates(Z, S, n_max=30).validate()
    assert rates.mu1 == pytest.approx(1.0 / MU1, rel=1e-6)
    assert rates.mu2 == pytest.approx(1.0 / MU1, rel=1e-6)
    assert rates.mu3 < 1.3  # polynomial center growth fits near 1


def test_rates_constant_diagonal_cocycle():
    n = 32
    mat = np.diag([0.5, 2.0])
    zg = np.broadcast_to(mat, (n, 2, 2)).copy()
    Z = Cocycle(FourierSeries.from_grid(zg), GOLDEN)
    pi_s = FourierSeries.from_grid(
        np.broadcast_to(np.diag([1.0, 0.0]), (n, 2, 2)).copy())
    pi_cu = FourierSeries.from_grid(
        np.broadcast_to(np.diag([0.0, 1.0]), (n, 2, 2)).copy())
    pi_u, pi_cs = pi_cu, pi_s
    S = InvariantSplitting(pi_s, pi_cu, stable_rank=1, pi_u=pi_u, pi_cs=pi_cs)
    rates = estimate_rates(Z, S, n_max=16)
    assert rates.mu1 == pytest.approx(0.5, abs=1e-12)
    assert rates.mu2 == pytest.approx(0.5, abs=1e-12)


# ---------------------------------------------------------------------------
# whiskered torus composite Newton
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def whiskered_run():
    model = model_rotator_pendulum(1.0, 0.1)
    model0 = model_rotator_pendulum(1.0, 0.0)
    K = initial_embedding(model0, GOLDEN, 256)
    S = product_splitting(model0, K)
    cfg = SolverConfig(tol=1e-12, use_counterterm=True, max_iter=15)
    K2, S2, reports = solve_whiskered_torus(K, model, S, cfg)
    return model, K2, S2, reports


def test_whiskered_solve_converges(whiskered_run):
    model, K, S, reports = whiskered_run
    assert invariance_residual(K, model).sup_norm() <= 1e-12
    assert np.max(np.abs(K.lam)) <= 1e-10
    assert len(reports) <= 10


def test_whiskered_splitting_invariants(whiskered_run):
    model, K, S, _ = whiskered_run
    Z = Cocycle.from_torus(model, K)
    e_cu, e_s = projection_residuals(S, Z)
    assert e_cu.sup_norm() + e_s.sup_norm() < 1e-10
    assert S.idempotency_defect() < 1e-11
    rates = estimate_rates(Z, S, n_max=30).validate()
    assert rates.mu1 * rates.mu3 < 1.0


def test_whiskered_symplectic_pairing(whiskered_run):
    model, K, S, _ = whiskered_run
    J = model.structure.J_const
    rng = np.random.default_rng(41)
    v = rng.normal(size=4)
    w = rng.normal(size=4)
    idx = rng.integers(0, K.grid_shape[0], size=32)
    vs = (S.pi_s.grid[idx] @ v)
    vs2 = (S.pi_s.grid[idx] @ w)
    vc = (S.pi_c().grid[idx] @ w)
    norm = lambda x: np.maximum(np.linalg.norm(x, axis=-1), 1e-300)
    vs, vs2, vc = vs / norm(vs)[:, None], vs2 / norm(vs2)[:, None], vc / norm(vc)[:, None]
    assert np.max(np.abs(np.einsum("pi,ij,pj->p", vs, J, vs2))) < 1e-10
    assert np.max(np.abs(np.einsum("pi,ij,pj->p", vc, J, vs))) < 1e-10


def test_whiskered_hyperbolic_corrections_on_run(whiskered_run):
    model, K, S, _ = whiskered_run
    # warm start at a shifted parameter so the residual is genuinely nonzero
    model2 = model_rotator_pendulum(1.0, 0.12)
    Z = Cocycle.from_torus(model2, K)
    S2, _ = refine_splitting(S, Z, tol=1e-12)
    E = invariance_residual(K, model2)
    e_s, e_u, e_c = split_error(E, S2, GOLDEN)
    assert np.max(np.abs(e_s.grid + e_u.grid + e_c.grid - E.grid)) < 1e-13
    d_s, _ = solve_stable(e_s, Z, S2)
    d_u, _ = solve_unstable(e_u, Z, S2)
    assert hyperbolic_defining_residual(d_s, e_s, Z) <= 1e-11 * e_s.sup_norm()
    assert hyperbolic_defining_residual(d_u, e_u, Z) <= 1e-11 * e_u.sup_norm()
