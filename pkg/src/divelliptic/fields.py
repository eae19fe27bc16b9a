"""Coefficient and data fields: Lp norms, truncation, and form constants.

Fields are plain vectorized evaluators (points of shape (n, d) in, values
out) carrying declared metadata: integrability exponent, sign constraint,
ellipticity bounds, and the location of point singularities.  Declared
bounds are spot-verified by sampling, never certified globally.

Lp norms use per-cell adaptive dyadic subdivision: a cell is accepted once
one more split changes its contribution by less than a relative tolerance;
cells containing a singular point are refined to the depth cap and the
vanishing core is excluded, with a decay test that flags non-integrable
exponents.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .mesh import FemSpace, GridSpec, gauss_rule_01, q1_interpolate


class FieldError(ValueError):
    """Inconsistent field definition or declared bounds."""


class NormDivergenceError(FieldError):
    """Adaptive quadrature detected a non-integrable exponent."""


class TailTooHeavyError(FieldError):
    """No admissible drift-splitting constant exists numerically."""


@dataclass
class ScalarField:
    fn: object                       # (n, d) -> (n,)
    exponent: float = math.inf       # declared integrability exponent
    nonneg: bool = False
    singularities: tuple = ()
    label: str = "scalar"

    def __call__(self, x):
        return self.fn(np.atleast_2d(np.asarray(x, dtype=float)))


@dataclass
class VectorField:
    fn: object                       # (n, d) -> (n, d)
    exponent: float = math.inf
    singularities: tuple = ()
    label: str = "vector"

    def __call__(self, x):
        return self.fn(np.atleast_2d(np.asarray(x, dtype=float)))

    def magnitude(self) -> "ScalarField":
        """Pointwise Euclidean norm as a scalar field."""
        return ScalarField(
            fn=lambda x: np.linalg.norm(self.fn(x), axis=1),
            exponent=self.exponent, nonneg=True,
            singularities=self.singularities, label=f"|{self.label}|")


@dataclass
class MatrixField:
    """Diffusion matrix with declared ellipticity lam and entry bound."""

    fn: object                       # (n, d) -> (n, d, d)
    lam: float = 1.0
    bound: float = 1.0
    label: str = "matrix"

    def __call__(self, x):
        return self.fn(np.atleast_2d(np.asarray(x, dtype=float)))

    def spot_check(self, grid: GridSpec, n_random_dirs: int = 8, tol: float = 1e-10):
        """Sample-verify <A xi, xi> >= lam |xi|^2 and max |a_ij| <= bound.

        Probes the grid quadrature points with the coordinate axes plus a
        fixed set of pseudo-random directions.  Raises FieldError on a
        violated declaration; this is a spot check, not a certificate.
        """
        space = FemSpace(grid)
        pts = space.quad_points().reshape(-1, grid.dim)
        a = self(pts)
        if np.max(np.abs(a)) > self.bound + tol:
            raise FieldError(
                f"declared entry bound {self.bound} violated: "
                f"max |a_ij| = {np.max(np.abs(a)):.6g}")
        rng = np.random.default_rng(0)
        dirs = np.vstack([np.eye(grid.dim),
                          rng.standard_normal((n_random_dirs, grid.dim))])
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        quad = np.einsum("nij,ki,kj->nk", a, dirs, dirs)
        if np.min(quad) < self.lam - tol:
            raise FieldError(
                f"declared ellipticity {self.lam} violated: "
                f"min <A xi, xi> = {np.min(quad):.6g}")


# ---------------------------------------------------------------------------
# built-in families
# ---------------------------------------------------------------------------

def constant_scalar(value: float, label: str | None = None) -> ScalarField:
    v = float(value)
    return ScalarField(fn=lambda x: np.full(x.shape[0], v),
                       exponent=math.inf, nonneg=v >= 0.0,
                       label=label or f"const({v})")


def constant_vector(value) -> VectorField:
    v = np.asarray(value, dtype=float)
    return VectorField(fn=lambda x: np.broadcast_to(v, (x.shape[0], v.size)).copy(),
                       exponent=math.inf, label=f"const({v.tolist()})")


def constant_matrix(value, lam: float | None = None,
                    bound: float | None = None, d: int | None = None) -> MatrixField:
    """Constant matrix field; a scalar value means value * identity."""
    if np.isscalar(value):
        if d is None:
            raise FieldError("scalar constant matrix needs the dimension d")
        mat = float(value) * np.eye(d)
    else:
        mat = np.asarray(value, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise FieldError(f"matrix value must be square, got shape {mat.shape}")
    sym_eigs = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    lam = float(sym_eigs.min()) if lam is None else float(lam)
    bound = float(np.max(np.abs(mat))) if bound is None else float(bound)
    if lam <= 0:
        raise FieldError(f"constant matrix is not strictly elliptic (lam={lam:.6g})")
    return MatrixField(fn=lambda x: np.broadcast_to(mat, (x.shape[0],) + mat.shape).copy(),
                       lam=lam, bound=bound, label="const-matrix")


def identity_matrix(d: int) -> MatrixField:
    return constant_matrix(1.0, d=d)


def isotropic_matrix(coefficient: ScalarField, lam: float, bound: float) -> MatrixField:
    """a(x) * identity for a scalar coefficient with declared bounds."""
    def fn(x):
        a = coefficient(x)
        out = np.zeros((x.shape[0], x.shape[1], x.shape[1]))
        idx = np.arange(x.shape[1])
        out[:, idx, idx] = a[:, None]
        return out
    return MatrixField(fn=fn, lam=lam, bound=bound,
                       label=f"{coefficient.label}*I")


def polynomial_scalar(terms, nonneg: bool = False) -> ScalarField:
    """Sum of monomials; terms = [(coeff, (e_1, ..., e_d)), ...]."""
    terms = [(float(c), tuple(int(e) for e in p)) for c, p in terms]

    def fn(x):
        out = np.zeros(x.shape[0])
        for coeff, powers in terms:
            mono = np.full(x.shape[0], coeff)
            for a, e in enumerate(powers):
                if e:
                    mono = mono * x[:, a] ** e
            out += mono
        return out

    return ScalarField(fn=fn, exponent=math.inf, nonneg=nonneg, label="polynomial")


def trig_scalar(extents, freqs, amplitude: float = 1.0) -> ScalarField:
    """amplitude * prod_a sin(freq_a * pi * (x_a - lo_a) / len_a)."""
    lows = np.array([lo for lo, _ in extents])
    lens = np.array([hi - lo for lo, hi in extents])
    freqs = np.asarray(freqs, dtype=float)

    def fn(x):
        out = np.full(x.shape[0], float(amplitude))
        for a in range(x.shape[1]):
            out = out * np.sin(freqs[a] * np.pi * (x[:, a] - lows[a]) / lens[a])
        return out

    return ScalarField(fn=fn, exponent=math.inf,
                       label=f"trig(freqs={freqs.tolist()}, amp={amplitude})")


def trig_gradient(extents, freqs, amplitude: float = 1.0) -> VectorField:
    """Analytic gradient of the trig_scalar potential with the same data."""
    lows = np.array([lo for lo, _ in extents])
    lens = np.array([hi - lo for lo, hi in extents])
    freqs = np.asarray(freqs, dtype=float)

    def fn(x):
        d = x.shape[1]
        s = np.stack([np.sin(freqs[a] * np.pi * (x[:, a] - lows[a]) / lens[a])
                      for a in range(d)], axis=1)
        cvals = np.stack([np.cos(freqs[a] * np.pi * (x[:, a] - lows[a]) / lens[a])
                          for a in range(d)], axis=1)
        out = np.empty((x.shape[0], d))
        for a in range(d):
            part = np.full(x.shape[0], amplitude * freqs[a] * np.pi / lens[a])
            part = part * cvals[:, a]
            for b in range(d):
                if b != a:
                    part = part * s[:, b]
            out[:, a] = part
        return out

    return VectorField(fn=fn, exponent=math.inf,
                       label=f"grad trig(freqs={freqs.tolist()})")


def polynomial_gradient(terms) -> VectorField:
    """Analytic gradient of the polynomial_scalar potential with the same terms."""
    terms = [(float(c), tuple(int(e) for e in p)) for c, p in terms]

    def fn(x):
        d = x.shape[1]
        out = np.zeros((x.shape[0], d))
        for coeff, powers in terms:
            for a in range(d):
                if powers[a] == 0:
                    continue
                part = np.full(x.shape[0], coeff * powers[a])
                for b in range(d):
                    e = powers[b] - (1 if b == a else 0)
                    if e:
                        part = part * x[:, b] ** e
                out[:, a] += part
        return out

    return VectorField(fn=fn, exponent=math.inf, label="grad polynomial")


def radial_power(center, alpha: float, scale: float = 1.0,
                 exponent: float = 1.0) -> ScalarField:
    """scale * |x - center|^(-alpha); singular at the center for alpha > 0."""
    x0 = np.asarray(center, dtype=float)

    def fn(x):
        r = np.linalg.norm(x - x0, axis=1)
        with np.errstate(divide="ignore"):
            return float(scale) * r ** (-float(alpha))

    return ScalarField(fn=fn, exponent=float(exponent), nonneg=scale >= 0,
                       singularities=(tuple(x0.tolist()),),
                       label=f"radial(alpha={alpha})")


def tabulated_scalar(space: FemSpace, nodal, exponent: float = math.inf,
                     nonneg: bool = False, label: str = "tabulated") -> ScalarField:
    nodal = np.asarray(nodal, dtype=float)
    if nodal.shape != (space.n_nodes,):
        raise FieldError(f"expected {space.n_nodes} nodal values, got {nodal.shape}")
    return ScalarField(fn=lambda x: q1_interpolate(space, nodal, x),
                       exponent=exponent, nonneg=nonneg, label=label)


def tabulated_vector(space: FemSpace, nodal, exponent: float = math.inf,
                     label: str = "tabulated") -> VectorField:
    nodal = np.asarray(nodal, dtype=float)
    if nodal.shape != (space.n_nodes, space.dim):
        raise FieldError(
            f"expected ({space.n_nodes}, {space.dim}) nodal values, got {nodal.shape}")
    comps = [nodal[:, a].copy() for a in range(space.dim)]
    return VectorField(
        fn=lambda x: np.stack([q1_interpolate(space, comp, x) for comp in comps], axis=1),
        exponent=exponent, label=label)


def tabulated_matrix(space: FemSpace, nodal, lam: float, bound: float,
                     label: str = "tabulated") -> MatrixField:
    nodal = np.asarray(nodal, dtype=float)
    d = space.dim
    if nodal.shape != (space.n_nodes, d * d):
        raise FieldError(
            f"expected ({space.n_nodes}, {d * d}) nodal values, got {nodal.shape}")
    comps = [nodal[:, k].copy() for k in range(d * d)]

    def fn(x):
        flat = np.stack([q1_interpolate(space, comp, x) for comp in comps], axis=1)
        return flat.reshape(x.shape[0], d, d)

    return MatrixField(fn=fn, lam=lam, bound=bound, label=label)


def read_nodal_csv(path, columns: int) -> np.ndarray:
    """Nodal CSV: one node per line in lexicographic order."""
    rows = []
    with open(path, newline="") as handle:
        for row in csv.reader(handle):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            rows.append([float(v) for v in row])
    out = np.asarray(rows, dtype=float)
    if out.ndim != 2 or out.shape[1] != columns:
        raise FieldError(f"CSV {path}: expected {columns} columns, got {out.shape}")
    return out


def write_nodal_csv(path, values: np.ndarray):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] == 1:
        values = values.T
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        for row in values:
            writer.writerow([f"{v:.17g}" for v in row])


# ---------------------------------------------------------------------------
# field combinators (used by the divergence-free transformation)
# ---------------------------------------------------------------------------

def scaled_scalar(weight_fn, base: ScalarField, label: str) -> ScalarField:
    return ScalarField(fn=lambda x: weight_fn(x) * base(x),
                       exponent=base.exponent, nonneg=False,
                       singularities=base.singularities, label=label)


def scaled_vector(weight_fn, base: VectorField, label: str) -> VectorField:
    return VectorField(fn=lambda x: weight_fn(x)[:, None] * base(x),
                       exponent=base.exponent,
                       singularities=base.singularities, label=label)


def scaled_matrix(weight_fn, base: MatrixField, lam: float, bound: float,
                  label: str) -> MatrixField:
    return MatrixField(fn=lambda x: weight_fn(x)[:, None, None] * base(x),
                       lam=lam, bound=bound, label=label)


# ---------------------------------------------------------------------------
# adaptive box quadrature
# ---------------------------------------------------------------------------

@dataclass
class _AdaptiveResult:
    value: float
    depth: int
    excluded_core: float
    singular_decay: list


def _box_contains(lows, highs, point) -> np.ndarray:
    p = np.asarray(point)
    return np.all((lows <= p) & (p <= highs), axis=1)


def _adaptive_box_integral(integrand, grid: GridSpec, singularities,
                           rtol: float, max_depth: int, order: int,
                           budget: int = 2_000_000) -> _AdaptiveResult:
    """Integrate integrand((n,d) points) -> (n,) over the box, adaptively.

    Starts from the grid cells, splits each box dyadically until one more
    split moves its contribution by less than rtol (relative).  Boxes whose
    closure contains a declared singular point are always split; at the
    depth cap their remaining core is excluded and the per-level decay of
    the core contribution decides integrability.

    Refinement of regular boxes stops early once their summed pending
    change is below 100*rtol of the whole integral; without this, root
    kinks along measure-zero surfaces (e.g. |sin|^p at a domain face)
    would drive the dyadic recursion to the cap at exploding box counts
    for no perceptible gain in the norm.
    """
    d = grid.dim
    q01, w01 = gauss_rule_01(order)
    ref = np.array(list(itertools.product(q01, repeat=d)))
    wts = np.prod(np.array(list(itertools.product(w01, repeat=d))), axis=1)
    halves = np.array(list(itertools.product((0, 1), repeat=d)))

    def estimates(lows, highs):
        sizes = highs - lows
        pts = (lows[:, None, :] + ref[None, :, :] * sizes[:, None, :]).reshape(-1, d)
        vals = np.asarray(integrand(pts), dtype=float).reshape(lows.shape[0], -1)
        bad = ~np.isfinite(vals)
        if bad.any():
            vals = np.where(bad, 0.0, vals)
        return (vals @ wts) * np.prod(sizes, axis=1), bad.any(axis=1)

    # base partition = grid cells
    cells = np.array(grid.cells)
    cell_multi = np.indices(cells).reshape(d, -1).T
    lows = grid.lows + cell_multi * grid.spacing
    highs = lows + grid.spacing
    est, nonfinite = estimates(lows, highs)
    singular = np.zeros(lows.shape[0], dtype=bool)
    for s in singularities:
        singular |= _box_contains(lows, highs, s)
    if np.any(nonfinite & ~singular):
        raise FieldError("non-finite integrand away from declared singularities")

    # absolute floor: a box may stop once its change is negligible for the
    # whole integral (budgeted by volume), which keeps the recursion from
    # chasing kinks of measure zero at full relative depth
    density = float(np.sum(np.abs(est))) / grid.volume

    total = 0.0
    evaluated = lows.shape[0]
    singular_decay = [float(np.sum(est[singular]))] if singular.any() else []
    depth_reached = 0

    for level in range(1, max_depth + 1):
        if lows.shape[0] == 0:
            break
        depth_reached = level
        nb = lows.shape[0]
        sizes = highs - lows
        child_lo = (lows[:, None, :] + 0.5 * halves[None, :, :] * sizes[:, None, :])
        child_lo = child_lo.reshape(-1, d)
        child_hi = child_lo + 0.5 * np.repeat(sizes, 2 ** d, axis=0)
        evaluated += child_lo.shape[0]
        if evaluated > budget:
            raise FieldError("adaptive quadrature budget exceeded")
        child_est, child_bad = estimates(child_lo, child_hi)
        refined = child_est.reshape(nb, 2 ** d).sum(axis=1)

        vols = np.prod(sizes, axis=1)
        ok = np.abs(refined - est) <= (rtol * np.abs(refined)
                                       + rtol * density * vols + 1e-300)
        accept = ok & ~singular
        pending = float(np.sum(np.abs(refined - est)[~accept & ~singular]))
        if pending <= 100.0 * rtol * (abs(total) + float(np.sum(np.abs(refined)))):
            accept = ~singular
        total += float(np.sum(refined[accept]))

        keep_parent = ~accept
        child_keep = np.repeat(keep_parent, 2 ** d)
        lows = child_lo[child_keep]
        highs = child_hi[child_keep]
        est = child_est[child_keep]
        bad = child_bad[child_keep]

        child_sing = np.zeros(lows.shape[0], dtype=bool)
        parent_sing = np.repeat(singular[keep_parent], 2 ** d)
        if parent_sing.any():
            mask = np.zeros(lows.shape[0], dtype=bool)
            for s in singularities:
                mask |= _box_contains(lows, highs, s)
            child_sing = parent_sing & mask
        if np.any(bad & ~child_sing):
            raise FieldError("non-finite integrand away from declared singularities")
        singular = child_sing
        if singular.any():
            singular_decay.append(float(np.sum(est[singular])))

    # leftovers at the cap: keep best estimates, drop singular cores
    excluded = float(np.sum(est[singular])) if lows.shape[0] else 0.0
    if lows.shape[0]:
        total += float(np.sum(est[~singular]))
    return _AdaptiveResult(value=total, depth=depth_reached,
                           excluded_core=excluded, singular_decay=singular_decay)


def _check_integrable(result: _AdaptiveResult, p: float):
    decay = result.singular_decay
    if len(decay) >= 4:
        tail = [r for r in (decay[k + 1] / decay[k]
                            for k in range(len(decay) - 4, len(decay) - 1))
                if np.isfinite(r) and r > 0]
        scale = abs(result.value) + result.excluded_core
        if tail and result.excluded_core > 1e-12 * scale:
            geo = math.exp(sum(math.log(r) for r in tail) / len(tail))
            if geo >= 0.95:
                raise NormDivergenceError(f"norm infinite at exponent p={p:g}")


def lp_norm_info(g, p: float, grid: GridSpec, rtol: float = 1e-8,
                 max_depth: int = 12, order: int | None = None):
    """(norm value, adaptive depth) for a scalar or vector field."""
    if p < 1:
        raise FieldError(f"Lp exponent must satisfy p >= 1, got {p}")
    if isinstance(g, VectorField):
        g = g.magnitude()
    order = order or max(grid.quadrature_order, 4)
    if math.isinf(p):
        return _ess_sup_estimate(g, grid, order), 0
    pw = float(p)
    result = _adaptive_box_integral(lambda x: np.abs(g(x)) ** pw, grid,
                                    g.singularities, rtol, max_depth, order)
    _check_integrable(result, p)
    return result.value ** (1.0 / pw), result.depth


def lp_norm(g, p: float, grid: GridSpec, **kwargs) -> float:
    """Quadrature Lp(U) norm; vector fields use the pointwise Euclidean norm."""
    return lp_norm_info(g, p, grid, **kwargs)[0]


def _ess_sup_estimate(g: ScalarField, grid: GridSpec, order: int,
                      refine_levels: int = 6) -> float:
    """Max of |g| over quadrature samples, refined near declared singularities."""
    space = FemSpace(grid)
    pts = space.quad_points().reshape(-1, grid.dim)
    vals = np.abs(np.asarray(g(pts), dtype=float))
    best = float(np.max(vals[np.isfinite(vals)], initial=0.0))
    q01, _ = gauss_rule_01(order)
    ref = np.array(list(itertools.product(q01, repeat=grid.dim)))
    for s in g.singularities:
        size = grid.spacing.copy()
        lo = np.asarray(s, dtype=float) - 0.5 * size
        for _ in range(refine_levels):
            size *= 0.5
            lo = np.asarray(s, dtype=float) - 0.5 * size
            local = lo[None, :] + ref * size[None, :]
            inside = np.all((local >= grid.lows) & (local <= grid.highs), axis=1)
            if not inside.any():
                continue
            lv = np.abs(np.asarray(g(local[inside]), dtype=float))
            lv = lv[np.isfinite(lv)]
            if lv.size:
                best = max(best, float(np.max(lv)))
    return best


# ---------------------------------------------------------------------------
# drift splitting, truncation, boundedness constant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitConstant:
    """Drift-splitting level N with g = N^2 / lam and its tail data."""

    n_split: float
    gamma: float
    threshold: float
    tail_value: float
    lattice_step: float

    def __post_init__(self):
        if self.n_split < 0 or self.gamma < 0:
            raise FieldError("split constant must be nonnegative")


def _tail_functional(H: VectorField, level: float, d: int, grid: GridSpec) -> float:
    """( int 1_{|H| >= level} |H|^d dx )^(2/d), by adaptive quadrature."""
    def integrand(x):
        mag = np.linalg.norm(H(x), axis=1)
        out = mag ** d
        out[mag < level] = 0.0
        return out

    result = _adaptive_box_integral(integrand, grid, H.singularities,
                                    rtol=1e-4, max_depth=8,
                                    order=max(grid.quadrature_order, 3))
    return result.value ** (2.0 / d)


def split_constant(H: VectorField | None, lam: float, grid: GridSpec,
                   lattice: int = 64) -> SplitConstant:
    """Smallest lattice level N with tail(N) <= (lam^2/16)((d-2)/(d-1))^2.

    The tail functional is nonincreasing in N, so a bisection over a
    64-step lattice on [0, ess-sup estimate] (plus one step of headroom)
    finds the lattice-minimal admissible level.
    """
    if lam <= 0:
        raise FieldError(f"ellipticity constant must be positive, got {lam}")
    d = grid.dim
    threshold = (lam ** 2 / 16.0) * ((d - 2) / (d - 1)) ** 2
    if H is None:
        return SplitConstant(0.0, 0.0, threshold, 0.0, 0.0)

    if H.singularities:
        # the tail functional only empties if |H| is d-integrable; the
        # core-excluding integrator would mask that, so check it head-on
        try:
            lp_norm(H, float(d), grid)
        except NormDivergenceError as exc:
            raise TailTooHeavyError(
                f"H tail too heavy at exponent d={d}") from exc

    tail0 = _tail_functional(H, 0.0, d, grid)
    if tail0 <= threshold:
        return SplitConstant(0.0, 0.0, threshold, tail0, 0.0)

    ess = _ess_sup_estimate(H.magnitude(), grid, max(grid.quadrature_order, 3))
    if not np.isfinite(ess) or ess <= 0:
        raise TailTooHeavyError(f"H tail too heavy at exponent d={d}")
    step = ess / lattice
    tails: dict[int, float] = {0: tail0}

    def tail_at(j: int) -> float:
        if j not in tails:
            tails[j] = _tail_functional(H, j * step, d, grid)
        return tails[j]

    hi = lattice + 1          # one step beyond the ess-sup estimate
    if tail_at(hi) > threshold:
        raise TailTooHeavyError(f"H tail too heavy at exponent d={d}")
    lo = 0
    while hi - lo > 1:        # invariant: tail(lo) > threshold >= tail(hi)
        mid = (lo + hi) // 2
        if tail_at(mid) <= threshold:
            hi = mid
        else:
            lo = mid
    n_split = hi * step
    return SplitConstant(n_split, n_split ** 2 / lam, threshold, tail_at(hi), step)


def truncate(g: ScalarField, n: float, mode: str = "upper") -> ScalarField:
    """Pointwise cap: 'upper' gives g ^ n, 'symmetric' gives (g ^ n) v (-n)."""
    if n <= 0:
        raise FieldError(f"truncation level must be positive, got {n}")
    if mode == "upper":
        fn = lambda x: np.minimum(g(x), n)
        nonneg = g.nonneg
    elif mode == "symmetric":
        fn = lambda x: np.clip(g(x), -n, n)
        nonneg = g.nonneg
    else:
        raise FieldError(f"unknown truncation mode {mode!r}")
    return ScalarField(fn=fn, exponent=math.inf, nonneg=nonneg,
                       singularities=g.singularities,
                       label=f"{g.label} cap {n:g} ({mode})")


def sobolev_factor(d: int) -> float:
    """Embedding constant 2(d-1)/(d-2) for the zero-trace gradient bound."""
    return 2.0 * (d - 1) / (d - 2)


def boundedness_constant(A: MatrixField, H: VectorField | None,
                         c: ScalarField | None, grid: GridSpec) -> float:
    """Bilinear form bound K = dM + S ||H||_d + S^2 ||c||_{d/2}, S = 2(d-1)/(d-2)."""
    d = grid.dim
    s = sobolev_factor(d)
    k = d * A.bound
    if H is not None:
        k += s * lp_norm(H, float(d), grid)
    if c is not None:
        k += s ** 2 * lp_norm(c, d / 2.0, grid)
    return float(k)
