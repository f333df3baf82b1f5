"""Phase-space conventions, symplectic structure, and exact symplectic models.

Phase-space points are ordered ``z = (q_1..q_d, p_1..p_d)`` and the
symplectic matrix is fixed globally to ``J = [[0, -Id], [Id, 0]]`` in those
blocks.  Angle coordinates occupy the first ``ell`` slots of the q block;
model evaluators work on the universal cover (angle outputs are not reduced
mod 1), which keeps residuals of near-invariant embeddings continuous.
"""

from dataclasses import dataclass, field

import numpy as np

from . import fourier
from .errors import ModelDomainError, ParameterError
from .fourier import FourierSeries
from .jets import Jet, cos2pi, jet_stack, sin2pi

TWO_PI = 2.0 * np.pi


def standard_symplectic_matrix(d):
    """The block matrix [[0, -Id], [Id, 0]] on R^{2d}."""
    J = np.zeros((2 * d, 2 * d))
    J[:d, d:] = -np.eye(d)
    J[d:, :d] = np.eye(d)
    return J


@dataclass(frozen=True)
class SymplecticStructure:
    """Pointwise symplectic form ``Omega_z(u, v) = <u, J(z) v>``.

    ``almost_complex`` records whether ``J(z)^2 = -Id``; ``constant`` whether
    ``J`` is independent of ``z`` (both models here use the constant standard
    form, for which both flags hold).
    """

    dim: int
    J_at: callable
    almost_complex: bool = True
    constant: bool = True
    J_const: np.ndarray = None
    J_inv_const: np.ndarray = None

    @classmethod
    def standard(cls, d):
        J = standard_symplectic_matrix(d)
        return cls(dim=2 * d, J_at=lambda z: np.broadcast_to(J, z.shape[:-1] + J.shape),
                   almost_complex=True, constant=True,
                   J_const=J, J_inv_const=-J)

    def form_at(self, z):
        """J evaluated along an array of points, shape (..., 2d, 2d)."""
        if self.constant:
            return np.broadcast_to(self.J_const, z.shape[:-1] + self.J_const.shape)
        return self.J_at(z)

    def form_inv_at(self, z):
        if self.constant:
            return np.broadcast_to(self.J_inv_const, z.shape[:-1] + self.J_inv_const.shape)
        return np.linalg.inv(self.J_at(z))

    def skew_defect(self, z):
        J = self.form_at(z)
        return float(np.max(np.abs(J + np.swapaxes(J, -1, -2))))


@dataclass(frozen=True)
class SymplecticMapModel:
    """Evaluator bundle for an exact symplectic map.

    ``map_components`` and ``jac_components`` act on tuples of coordinate
    objects (plain grid arrays or Taylor jets), which is what lets the same
    model code drive both grid evaluation and jet transport.
    """

    name: str
    params: dict
    d: int
    ell: int
    structure: SymplecticStructure
    map_components: callable = field(repr=False)
    jac_components: callable = field(repr=False)
    jac_inv_components: callable = field(repr=False)

    @property
    def dim(self):
        return 2 * self.d

    def _split(self, z):
        return tuple(z[..., i] for i in range(self.dim))

    def eval(self, z):
        """F(z), vectorized over leading axes of z."""
        z = np.asarray(z, dtype=float)
        out = self.map_components(self._split(z))
        res = np.stack(np.broadcast_arrays(*out), axis=-1)
        if not np.all(np.isfinite(res)):
            raise ModelDomainError(f"non-finite output of model {self.name}")
        return res

    def __call__(self, z):
        return self.eval(z)

    def _assemble(self, rows, base_shape):
        n = self.dim
        out = np.zeros(base_shape + (n, n))
        for i in range(n):
            for j in range(n):
                out[..., i, j] = rows[i][j]
        return out

    def jac(self, z):
        """DF(z), shape (..., 2d, 2d)."""
        z = np.asarray(z, dtype=float)
        rows = self.jac_components(self._split(z))
        return self._assemble(rows, z.shape[:-1])

    def jac_inv(self, z):
        """DF(z)^{-1} in closed form."""
        z = np.asarray(z, dtype=float)
        rows = self.jac_inv_components(self._split(z))
        return self._assemble(rows, z.shape[:-1])

    # -- jet transport ---------------------------------------------------------

    def eval_jet(self, w):
        """Jet of F(W(s)) from the jet of W; coefficients (L+1, ..., 2d)."""
        comps = tuple(w.component(i) for i in range(self.dim))
        out = self.map_components(comps)
        return jet_stack(out, w.order)

    def jac_jet(self, w):
        """Jet of DF(W(s)), coefficients (L+1, ..., 2d, 2d)."""
        comps = tuple(w.component(i) for i in range(self.dim))
        rows = self.jac_components(comps)
        order = w.order
        row_jets = [jet_stack(r, order) for r in rows]
        return Jet(np.stack([r.coef for r in row_jets], axis=-2))

    # -- diagnostics -------------------------------------------------------------

    def symplecticity_defect(self, z):
        """sup of ||DF^T J(F z) DF - J(z)|| over the supplied points."""
        DF = self.jac(z)
        Jz = self.structure.form_at(z)
        Jfz = self.structure.form_at(self.eval(z))
        lhs = np.swapaxes(DF, -1, -2) @ Jfz @ DF
        return float(np.max(np.abs(lhs - Jz)))


def model_standard_map(epsilon):
    """Chirikov standard map on T x R.

    ``F(q, p) = (q + p', p')`` with ``p' = p + (eps / 2 pi) sin(2 pi q)``;
    the angle output lives on the cover (no mod-1 reduction).
    """
    eps = float(epsilon)
    c = eps / TWO_PI

    def fmap(comps):
        q, p = comps
        p1 = p + c * sin2pi(q)
        return (q + p1, p1)

    def fjac(comps):
        q, _ = comps
        g = eps * cos2pi(q)
        return ((1.0 + g, 1.0), (g, 1.0))

    def fjac_inv(comps):
        q, _ = comps
        g = eps * cos2pi(q)
        return ((1.0, -1.0), (-g, 1.0 + g))

    return SymplecticMapModel(
        name="standard", params={"epsilon": eps}, d=1, ell=1,
        structure=SymplecticStructure.standard(1),
        map_components=fmap, jac_components=fjac, jac_inv_components=fjac_inv,
    )


def model_rotator_pendulum(a, epsilon):
    """Rotator coupled to an inverted pendulum: the whiskered test model.

    Kick map ``p' = p - grad V(q)``, ``q' = q + p'`` for the potential
    ``V(q1, q2) = (a / 4 pi^2) cos(2 pi q2) + (eps / 4 pi^2) cos(2 pi (q1 + q2))``.
    The pendulum sign is chosen so that ``(q2, p2) = (0, 0)`` is hyperbolic
    with multiplier ``mu(a) > 1`` for every ``a > 0``; at ``eps = 0`` the
    set ``(theta, 0, omega, 0)`` is an exactly invariant whiskered torus.
    """
    a = float(a)
    eps = float(epsilon)
    if a <= 0:
        raise ParameterError("pendulum strength a must be positive")
    ca = a / TWO_PI
    ce = eps / TWO_PI

    def fmap(comps):
        q1, q2, p1, p2 = comps
        kick_c = ce * sin2pi(q1 + q2)
        p1n = p1 + kick_c
        p2n = p2 + ca * sin2pi(q2) + kick_c
        return (q1 + p1n, q2 + p2n, p1n, p2n)

    def _blocks(comps):
        q1, q2, _, _ = comps
        u = eps * cos2pi(q1 + q2)
        w = a * cos2pi(q2)
        return u, w

    def fjac(comps):
        u, w = _blocks(comps)
        return (
            (1.0 + u, u, 1.0, 0.0),
            (u, 1.0 + w + u, 0.0, 1.0),
            (u, u, 1.0, 0.0),
            (u, w + u, 0.0, 1.0),
        )

    def fjac_inv(comps):
        u, w = _blocks(comps)
        return (
            (1.0, 0.0, -1.0, 0.0),
            (0.0, 1.0, 0.0, -1.0),
            (-u, -u, 1.0 + u, u),
            (-u, -(w + u), u, 1.0 + w + u),
        )

    return SymplecticMapModel(
        name="rotator_pendulum", params={"a": a, "epsilon": eps}, d=2, ell=1,
        structure=SymplecticStructure.standard(2),
        map_components=fmap, jac_components=fjac, jac_inv_components=fjac_inv,
    )


def pendulum_block(model, q2=0.0, p2=0.0):
    """2x2 Jacobian of the (q2, p2) factor of the rotator_pendulum at eps=0."""
    a = model.params["a"]
    w = a * np.cos(TWO_PI * q2)
    return np.array([[1.0 + w, 1.0], [w, 1.0]])


def hyperbolic_multiplier(a):
    """Expanding eigenvalue of the pendulum factor at its fixed point."""
    tr = 2.0 + float(a)
    return (tr + np.sqrt(tr * tr - 4.0)) / 2.0


# ---------------------------------------------------------------------------
# Winding (lift) bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindingMatrix:
    """Integer matrix recording how the embedding wraps the angle block.

    A rank deficit equals the number of contractible directions, which is
    how secondary tori enter the data model.
    """

    mat: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mat)
        if not np.issubdtype(m.dtype, np.integer):
            if not np.allclose(m, np.round(m)):
                raise ParameterError("winding entries must be integers")
            m = np.round(m).astype(np.int64)
        object.__setattr__(self, "mat", m.astype(np.int64))

    @classmethod
    def identity(cls, ell):
        return cls(np.eye(ell, dtype=np.int64))

    @classmethod
    def zero(cls, ell):
        return cls(np.zeros((ell, ell), dtype=np.int64))

    @property
    def ell(self):
        return self.mat.shape[0]

    @property
    def rank(self):
        return int(np.linalg.matrix_rank(self.mat)) if self.mat.size else 0

    @property
    def contractible_directions(self):
        return self.ell - self.rank


def lifted_grid(periodic, winding):
    """Grid values of the true embedding: periodic part plus I.theta.

    Only the periodic part is ever stored; the linear-in-theta term is
    reconstructed here on the fly.
    """
    thetas = fourier.theta_grid(periodic.grid_shape)
    out = periodic.grid.copy()
    ell = periodic.ell
    out[..., :ell] += thetas @ winding.mat.T.astype(float)
    return out


def lifted_at(periodic, winding, thetas):
    """Dense evaluation of the embedding at arbitrary angles."""
    thetas = np.asarray(thetas, dtype=float)
    if periodic.ell == 1 and (thetas.ndim == 0 or thetas.shape[-1] != 1):
        thetas = thetas[..., None]
    vals = periodic.evaluate(thetas)
    ell = periodic.ell
    vals[..., :ell] += thetas @ winding.mat.T.astype(float)
    return vals


def lifted_tangent(periodic, winding):
    """Grid values of D(embedding): spectral derivative plus the winding rows.

    Shape ``grid_shape + (2d, ell)``.
    """
    cols = [periodic.derivative(axis=j).grid for j in range(periodic.ell)]
    alpha = np.stack(cols, axis=-1)
    ell = periodic.ell
    alpha[..., :ell, :] += winding.mat.astype(float)
    return alpha


def coisotropy_defect(periodic, winding, structure):
    """sup over the grid of ``||DK^T (J o K)^{-1} DK||`` (Frobenius).

    Near zero for near-invariant tori; identically zero when ell == 1.
    """
    alpha = lifted_tangent(periodic, winding)
    z = lifted_grid(periodic, winding)
    J_inv = structure.form_inv_at(z)
    form = np.swapaxes(alpha, -1, -2) @ J_inv @ alpha
    return float(np.sqrt(np.max(np.sum(form * form, axis=(-2, -1)))))
