"""Invariant density and the divergence-free drift transformation.

Builds a strictly positive weight rho solving the zero-flux adjoint
identity

    int < A^T grad rho + rho H, grad phi > dx = 0   for every nodal phi,

normalized to rho(x1) = 1, then rewrites the problem with coefficients
(rho A, rho B, rho c, rho f) where B = H + (1/rho) A^T grad rho.  By
construction rho B is discretely divergence-free: the assembled residual
against every nodal basis gradient vanishes to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import (DiscreteFunction, FemSpace, assemble, build_space, norm,
                   q1_gradient, q1_interpolate)
from .fields import (MatrixField, ScalarField, VectorField,
                     read_nodal_csv, scaled_matrix, scaled_scalar,
                     write_nodal_csv)
from .solver import DiscreteProblem, build_problem, direct_solve


class DensityError(RuntimeError):
    """Invariant density construction failed (positivity or solvability)."""


class TransformationError(RuntimeError):
    """Discrete transformation equivalence broke down."""

    def __init__(self, message: str, gaps=None):
        super().__init__(message)
        self.gaps = list(gaps or [])


@dataclass
class InvariantDensity:
    """Strictly positive nodal weight with rho(x1) = 1.

    values cover ALL nodes (boundary included).  If `analytic` is set the
    density came from a closed form; evaluation and gradients then use the
    exact expressions instead of the multilinear interpolant.
    """

    space: FemSpace
    values: np.ndarray
    x1: int
    k1: float
    analytic: tuple | None = None     # (value_fn, gradient_fn), normalized
    residual_normalized: float = 0.0
    residual_raw: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.n_nodes,):
            raise DensityError(
                f"expected {self.space.n_nodes} nodal values, got {self.values.shape}")
        if np.min(self.values) <= 0.0:
            raise DensityError("density positivity violated")
        if abs(self.values[self.x1] - 1.0) > 1e-12:
            raise DensityError("density not normalized at x1")

    @property
    def min(self) -> float:
        return float(np.min(self.values))

    @property
    def max(self) -> float:
        return float(np.max(self.values))

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.analytic is not None:
            return np.asarray(self.analytic[0](x), dtype=float)
        return q1_interpolate(self.space, self.values, x)

    def gradient(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.analytic is not None:
            return np.asarray(self.analytic[1](x), dtype=float)
        return q1_gradient(self.space, self.values, x)

    def gradient_scale(self, x) -> np.ndarray:
        """Rounding-cancellation magnitude of the gradient evaluation."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.analytic is not None:
            return np.linalg.norm(np.asarray(self.analytic[1](x)), axis=1)
        return np.linalg.norm(
            q1_gradient(self.space, self.values, x, absolute=True), axis=1)

    def to_csv(self, path):
        """Nodal values in lexicographic node order, one per line."""
        write_nodal_csv(path, self.values)

    @classmethod
    def from_csv(cls, path, space: FemSpace, x1: int | None = None) -> "InvariantDensity":
        values = read_nodal_csv(path, 1)[:, 0]
        return cls.from_nodal(space, values, x1=x1)

    @classmethod
    def from_nodal(cls, space: FemSpace, values, x1: int | None = None) -> "InvariantDensity":
        values = np.asarray(values, dtype=float)
        i1 = space.node_nearest(0.5 * (space.grid.lows + space.grid.highs)) \
            if x1 is None else int(x1)
        if values[i1] <= 0:
            raise DensityError("density positivity violated")
        values = values / values[i1]
        dens = cls(space=space, values=values, x1=i1,
                   k1=float(np.max(values) / np.min(values)))
        return dens

    @classmethod
    def from_exact(cls, space: FemSpace, value_fn, gradient_fn,
                   x1: int | None = None) -> "InvariantDensity":
        """Exact density path: closures are normalized so rho(x1) = 1."""
        i1 = space.node_nearest(0.5 * (space.grid.lows + space.grid.highs)) \
            if x1 is None else int(x1)
        pivot = float(np.asarray(value_fn(space.node_coords[i1][None, :])).ravel()[0])
        if pivot <= 0:
            raise DensityError("density positivity violated at x1")
        nodal = np.asarray(value_fn(space.node_coords), dtype=float) / pivot
        if np.min(nodal) <= 0:
            raise DensityError("density positivity violated")
        return cls(space=space, values=nodal, x1=i1,
                   k1=float(np.max(nodal) / np.min(nodal)),
                   analytic=(lambda x: np.asarray(value_fn(x)) / pivot,
                             lambda x: np.asarray(gradient_fn(x)) / pivot))


def divergence_residual(space: FemSpace, drift_field,
                        magnitude_field=None) -> tuple[float, float]:
    """(normalized, raw) residual max_i | int <F, grad phi_i> dx |.

    Tested against every nodal basis function (boundary included).  The
    normalization divides by the quadrature sum of |M| |grad phi_i| where
    M is the pointwise magnitude of the terms entering F before any
    cancellation (default |F| itself), so an identically vanishing field
    yields zero rather than 0/0.
    """
    d = space.dim
    pts = space.quad_points().reshape(-1, d)
    fv = np.asarray(drift_field(pts), dtype=float).reshape(space.n_cells,
                                                           space.n_quad, d)
    if magnitude_field is None:
        mag = np.linalg.norm(fv, axis=2)
    else:
        mag = np.abs(np.asarray(magnitude_field(pts), dtype=float)).reshape(
            space.n_cells, space.n_quad)
    signed = np.einsum("cqa,iqa,q->ci", fv, space.dphi, space.quad_weights)
    absval = np.einsum("cq,iq,q->ci", mag,
                       np.linalg.norm(space.dphi, axis=2), space.quad_weights)
    res = np.abs(np.bincount(space.cell_nodes.ravel(), weights=signed.ravel(),
                             minlength=space.n_nodes))
    scale = np.bincount(space.cell_nodes.ravel(), weights=absval.ravel(),
                        minlength=space.n_nodes)
    raw = float(np.max(res))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(scale > 0, res / np.maximum(scale, 1e-300), 0.0)
    return float(np.max(ratio)), raw


def _matrix_residual(adjoint: sp.csr_matrix, rho: np.ndarray) -> tuple[float, float]:
    """Residual of the assembled adjoint identity, row-cancellation normalized.

    The residual entry i is the nodal combination sum_j G_ij rho_j, so the
    attainable rounding scale of row i is sum_j |G_ij| |rho_j|; dividing by
    it yields a dimensionless residual that stays meaningful when the
    drift field itself vanishes (for example rho == 1 with no drift).
    """
    res = np.abs(adjoint @ rho)
    scale = np.abs(adjoint) @ np.abs(rho)
    raw = float(np.max(res))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(scale > 0, res / np.maximum(scale, 1e-300), 0.0)
    return float(np.max(ratio)), raw


def compute_rho(A: MatrixField, H: VectorField | None, space: FemSpace,
                x1: int | None = None) -> InvariantDensity:
    """Invariant density from the zero-flux discrete adjoint problem.

    The adjoint identity tested against the full nodal basis is the
    transpose of the full-node convection-diffusion operator; one row is
    replaced by the normalization rho(x1) = 1.  Because the constant
    function spans the left kernel of the adjoint matrix, the replaced
    equation is implied by the remaining ones, so the identity holds
    against every basis function including x1's.
    """
    full_op = assemble(space, A=A, H=H, full=True).matrix
    adjoint = full_op.T.tocsr()
    if x1 is None:
        x1 = space.node_nearest(0.5 * (space.grid.lows + space.grid.highs))
    x1 = int(x1)

    pinned = adjoint.tolil()
    pinned.rows[x1] = [x1]
    pinned.data[x1] = [1.0]
    pinned = pinned.tocsc()
    rhs = np.zeros(space.n_nodes)
    rhs[x1] = 1.0
    try:
        lu = spla.splu(pinned)
        rho = lu.solve(rhs)
        for _ in range(2):        # iterative refinement against the pinning
            rho += lu.solve(rhs - pinned @ rho)
    except RuntimeError as exc:
        raise DensityError(f"singular adjoint system: {exc}") from exc
    if not np.all(np.isfinite(rho)):
        raise DensityError("adjoint solve produced non-finite density")
    if np.min(rho) <= 0.0:
        raise DensityError(
            "density positivity violated "
            f"(min nodal value {np.min(rho):.6g}); grid may be under-resolved")
    rho = rho / rho[x1]

    dens = InvariantDensity(space=space, values=rho, x1=x1,
                            k1=float(np.max(rho) / np.min(rho)))
    dens.residual_normalized, dens.residual_raw = _matrix_residual(adjoint, rho)
    return dens


def make_drift(rho: InvariantDensity, A: MatrixField,
               H: VectorField | None) -> VectorField:
    """Corrected drift B = H + (1/rho) A^T grad rho, defined at quadrature points."""
    def fn(x):
        grad = rho.gradient(x)
        at = np.einsum("nji,nj->ni", A(x), grad)
        out = at / rho.evaluate(x)[:, None]
        if H is not None:
            out = H(x) + out
        return out

    return VectorField(fn=fn, exponent=2.0, label="corrected-drift")


def rho_weighted_drift(rho: InvariantDensity, A: MatrixField,
                       H: VectorField | None) -> VectorField:
    """The transformed drift rho B = rho H + A^T grad rho (no division)."""
    def fn(x):
        out = np.einsum("nji,nj->ni", A(x), rho.gradient(x))
        if H is not None:
            out = out + rho.evaluate(x)[:, None] * H(x)
        return out

    return VectorField(fn=fn, exponent=2.0, label="rho-weighted drift")


@dataclass
class TransformedProblem:
    """Problem with coefficients (rho A, rho B, rho c, rho f)."""

    rho: InvariantDensity
    rho_A: MatrixField
    drift: VectorField                 # rho B, weakly divergence-free
    rho_c: ScalarField | None
    rho_f: ScalarField | None
    div_residual: float
    warning: str | None
    original: tuple                    # provenance (A, H, c, f)

    def build(self, space: FemSpace | None = None) -> DiscreteProblem:
        space = space or self.rho.space
        return build_problem(space, A=self.rho_A, H=self.drift,
                             c=self.rho_c, f=self.rho_f,
                             meta={"transformed": True,
                                   "div_residual": self.div_residual})


def transform(A: MatrixField, H: VectorField | None, c: ScalarField | None,
              f: ScalarField | None, rho: InvariantDensity,
              div_tol: float = 1e-8) -> TransformedProblem:
    """Divergence-free rewrite of (A, H, c, f) using the density rho.

    Solutions of the original and transformed problems coincide at the
    continuous level; discretely they agree up to consistency error.  A
    divergence residual above div_tol is recorded as a warning (the solve
    is still permitted), which happens e.g. for an imported density that
    was not produced by compute_rho on this grid.
    """
    weight = rho.evaluate
    drift = rho_weighted_drift(rho, A, H)

    def term_magnitude(x):
        out = np.linalg.norm(np.einsum("nji,nj->ni", A(x), rho.gradient(x)), axis=1)
        if H is not None:
            out = out + rho.evaluate(x) * np.linalg.norm(H(x), axis=1)
        return out

    def rounding_scale(x):
        out = A.bound * rho.gradient_scale(x)
        if H is not None:
            out = out + rho.evaluate(x) * np.linalg.norm(H(x), axis=1)
        return out

    res, raw = divergence_residual(rho.space, drift, term_magnitude)
    # measurement floor: a drift that is divergence-free in exact arithmetic
    # still leaves rounding noise on the pre-cancellation pipeline scale;
    # below that floor the residual is reported as zero
    space = rho.space
    pts = space.quad_points().reshape(-1, space.dim)
    mag = rounding_scale(pts).reshape(space.n_cells, space.n_quad)
    absval = np.einsum("cq,iq,q->ci", mag,
                       np.linalg.norm(space.dphi, axis=2), space.quad_weights)
    abs_rows = np.bincount(space.cell_nodes.ravel(), weights=absval.ravel(),
                           minlength=space.n_nodes)
    floor = 64.0 * np.finfo(float).eps * float(np.max(abs_rows))
    if raw <= floor:
        res = 0.0
    warning = None
    if res > div_tol:
        warning = (f"transformed drift is not divergence-free to {div_tol:g} "
                   f"(residual {res:.3e})")
    return TransformedProblem(
        rho=rho,
        rho_A=scaled_matrix(weight, A, lam=A.lam * rho.min,
                            bound=A.bound * rho.max, label="rho*A"),
        drift=drift,
        rho_c=None if c is None else scaled_scalar(weight, c, "rho*c"),
        rho_f=None if f is None else scaled_scalar(weight, f, "rho*f"),
        div_residual=res,
        warning=warning,
        original=(A, H, c, f))


def recover_original(t: TransformedProblem) -> tuple:
    """Invert the transformation using only the transformed fields and rho.

    Returns fields (A, H, c, f) with A = (rho A)/rho and
    H = (rho B)/rho - (1/rho) A^T grad rho; with an exact density this
    reproduces the original coefficients to rounding.
    """
    rho = t.rho
    rho_A, drift, rho_c, rho_f = t.rho_A, t.drift, t.rho_c, t.rho_f

    def a_fn(x):
        return rho_A(x) / rho.evaluate(x)[:, None, None]

    def h_fn(x):
        w = rho.evaluate(x)
        a = rho_A(x) / w[:, None, None]
        correction = np.einsum("nji,nj->ni", a, rho.gradient(x)) / w[:, None]
        return drift(x) / w[:, None] - correction

    a_field = MatrixField(fn=a_fn, lam=rho_A.lam / rho.max,
                          bound=rho_A.bound / rho.min, label="recovered A")
    h_field = VectorField(fn=h_fn, exponent=math.inf, label="recovered H")
    inv = lambda x: 1.0 / rho.evaluate(x)
    c_field = None if rho_c is None else scaled_scalar(inv, rho_c, "recovered c")
    f_field = None if rho_f is None else scaled_scalar(inv, rho_f, "recovered f")
    return a_field, h_field, c_field, f_field


def substitution_identity_gap(space: FemSpace, A, H, c, f,
                              rho: InvariantDensity,
                              u: DiscreteFunction) -> tuple[float, float]:
    """(gap, scale) of the discrete test-function substitution identity.

    For every interior basis function phi the transformed-form residual of
    u tested with phi must equal the original-form residual tested with
    rho*phi, when both sides use the same quadrature and the same values
    of rho and grad rho.  Returns the max absolute mismatch and the
    cancellation scale of the compared sums.
    """
    d = space.dim
    pts = space.quad_points().reshape(-1, d)
    w = space.quad_weights
    rho_q = rho.evaluate(pts).reshape(space.n_cells, space.n_quad)
    grad_rho = rho.gradient(pts).reshape(space.n_cells, space.n_quad, d)
    a_q = np.asarray(A(pts)).reshape(space.n_cells, space.n_quad, d, d)
    h_q = (np.asarray(H(pts)).reshape(space.n_cells, space.n_quad, d)
           if H is not None else None)
    c_q = (np.asarray(c(pts)).reshape(space.n_cells, space.n_quad)
           if c is not None else None)
    f_q = (np.asarray(f(pts)).reshape(space.n_cells, space.n_quad)
           if f is not None else None)
    u_q = u.at_quad()
    gu_q = u.grad_at_quad()

    a_gu = np.einsum("cqab,cqb->cqa", a_q, gu_q)        # A grad u
    conv = (np.einsum("cqa,cqa->cq", h_q, gu_q) if h_q is not None else 0.0)
    react = c_q * u_q if c_q is not None else 0.0
    source = f_q if f_q is not None else 0.0

    # transformed form tested with phi_i:
    #   rho <A grad u, grad phi> + <rho H + A^T grad rho, grad u> phi
    #   + rho c u phi - rho f phi
    at_gr = np.einsum("cqab,cqa->cqb", a_q, grad_rho)   # A^T grad rho
    corr = np.einsum("cqa,cqa->cq", at_gr, gu_q)
    lhs = (np.einsum("cq,cqa,iqa,q->ci", rho_q, a_gu, space.dphi, w)
           + np.einsum("cq,iq,q->ci", rho_q * conv + corr + rho_q * (react - source),
                       space.phi, w))

    # original form tested with rho*phi_i, product rule applied pointwise:
    #   <A grad u, rho grad phi + phi grad rho> + (<H, grad u> + c u - f) rho phi
    rhs = (np.einsum("cq,cqa,iqa,q->ci", rho_q, a_gu, space.dphi, w)
           + np.einsum("cqa,cqa,iq,q->ci", a_gu, grad_rho, space.phi, w)
           + np.einsum("cq,iq,q->ci", rho_q * (conv + react - source),
                       space.phi, w))

    scale_terms = (np.abs(np.einsum("cq,cqa,iqa,q->ci", rho_q, a_gu, space.dphi, w))
                   + np.abs(np.einsum("cq,iq,q->ci",
                                      rho_q * (np.abs(conv) + np.abs(react)
                                               + np.abs(source)) + np.abs(corr),
                                      space.phi, w)))
    gap_cells = np.abs(lhs - rhs)
    gap = np.bincount(space.cell_nodes.ravel(), weights=gap_cells.ravel(),
                      minlength=space.n_nodes)
    scale = np.bincount(space.cell_nodes.ravel(), weights=scale_terms.ravel(),
                        minlength=space.n_nodes)
    interior = space.interior_ids
    return float(np.max(gap[interior])), float(np.max(scale[interior]) + 1e-300)


def equivalence_gap(A, H, c, f, grids, exact_rho=None, x1=None,
                    noise_floor: float = 1e-9) -> list:
    """H1 gap between original and transformed solves per grid level.

    exact_rho, if given, is a pair (value_fn, gradient_fn) used instead of
    computing the density on each level.  The gap must decrease under
    refinement up to solver noise; a non-decreasing sequence over three or
    more levels raises TransformationError("transformation inconsistency").
    """
    gaps = []
    scale = 0.0
    for grid in grids:
        space = build_space(grid)
        u_orig = direct_solve(build_problem(space, A=A, H=H, c=c, f=f)).solution
        if exact_rho is not None:
            rho = InvariantDensity.from_exact(space, *exact_rho, x1=x1)
        else:
            rho = compute_rho(A, H, space, x1=x1)
        u_trans = direct_solve(transform(A, H, c, f, rho).build(space)).solution
        diff = DiscreteFunction(space, u_orig.values - u_trans.values)
        gaps.append(norm(diff, "H1semi"))
        scale = max(scale, norm(u_orig, "H1semi"))
    floor = noise_floor * max(scale, 1e-300)
    if len(gaps) >= 3:
        decreasing = all(b < a or b <= floor
                         for a, b in zip(gaps, gaps[1:]))
        if not decreasing:
            raise TransformationError("transformation inconsistency: "
                                      f"gaps {gaps} do not decrease", gaps=gaps)
    return gaps
