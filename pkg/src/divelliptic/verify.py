"""Checkable estimates: exponent algebra, energy and sup-norm bounds,
operator-norm interpolation, and the discrete maximum-principle diagnostic.

Every check returns a Verdict carrying the compared sides, so each
verdict is reproducible from the stored numbers alone.  Inequalities are
tested with a small relative slack for quadrature and solver error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .mesh import DiscreteFunction, norm
from .fields import ScalarField, lp_norm, sobolev_factor


RELATIVE_SLACK = 1e-8


class CalibrationError(RuntimeError):
    """Effective constants requested before calibration."""


class ExponentError(ValueError):
    """Exponent parameters out of range or identities violated."""


@dataclass(frozen=True)
class ExponentSet:
    """Interpolation exponent family for dimension d, r in [2, d], p_hat > d.

    k = r(p_hat - 2) / (2(p_hat - r)), theta = 1 - 1/k, and the derived
    pair q_theta = 2dk/(d-2), p_theta = rd/(d+r); s is the Hoelder
    conjugate of q_theta and is the declared class of the zero-order
    coefficient.
    """

    d: int
    r: float
    p_hat: float
    k: float
    theta: float
    q_theta: float
    p_theta: float
    s: float

    @property
    def q0(self) -> float:
        return 2.0 * self.d / (self.d - 2)

    @property
    def p0(self) -> float:
        return 2.0 * self.d / (self.d + 2)

    @property
    def p1(self) -> float:
        return self.p_hat * self.d / (self.d + self.p_hat)


def exponent_set(d: int, r: float, p_hat: float, tol: float = 1e-12) -> ExponentSet:
    """Derive the exponent family and verify its identities to `tol`."""
    if d < 3:
        raise ExponentError(f"dimension must be >= 3, got {d}")
    if not 2.0 <= r <= d:
        raise ExponentError(f"r must lie in [2, d] = [2, {d}], got {r}")
    if not p_hat > d:
        raise ExponentError(f"p_hat must exceed d = {d}, got {p_hat}")
    d = int(d)
    r = float(r)
    p_hat = float(p_hat)
    k = r * (p_hat - 2.0) / (2.0 * (p_hat - r))
    theta = 1.0 - 1.0 / k
    q_theta = 2.0 * d * k / (d - 2.0)
    p_theta = r * d / (d + r)
    s = 2.0 * d * k / (2.0 * d * k - d + 2.0)
    exps = ExponentSet(d=d, r=r, p_hat=p_hat, k=k, theta=theta,
                       q_theta=q_theta, p_theta=p_theta, s=s)

    checks = {
        "1/q_theta = (1-theta)/q0":
            abs(1.0 / q_theta - (1.0 - theta) / exps.q0),
        "1/p_theta = (1-theta)/p0 + theta/p1":
            abs(1.0 / p_theta - ((1.0 - theta) / exps.p0 + theta / exps.p1)),
        "q_theta, s conjugate":
            abs(1.0 / q_theta + 1.0 / s - 1.0),
        "k >= 1, k = 1 iff r = 2":
            max(0.0, 1.0 - k) + (abs(k - 1.0) if r == 2.0 else
                                 (1.0 if k <= 1.0 + tol and r > 2.0 + tol else 0.0)),
    }
    for name, dev in checks.items():
        if dev > tol:
            raise ExponentError(f"exponent identity violated: {name} (dev {dev:.3e})")
    return exps


@dataclass
class Verdict:
    """Outcome of one inequality check: lhs <= rhs with slack."""

    name: str
    lhs: float
    rhs: float
    holds: bool
    margin: float          # lhs / rhs, <= 1 + slack when the verdict holds
    note: str = ""

    @classmethod
    def compare(cls, name: str, lhs: float, rhs: float,
                slack: float = RELATIVE_SLACK, note: str = "") -> "Verdict":
        margin = lhs / rhs if rhs > 0 else (0.0 if lhs <= 0 else math.inf)
        return cls(name=name, lhs=float(lhs), rhs=float(rhs),
                   holds=bool(lhs <= rhs * (1.0 + slack)), margin=float(margin),
                   note=note)

    def describe(self) -> str:
        status = "holds" if self.holds else "VIOLATED"
        return (f"{self.name}: {status} (lhs {self.lhs:.8g} vs rhs {self.rhs:.8g}"
                f", margin {self.margin:.6f})")


@dataclass
class EstimateReport:
    """Constants, measured norms and verdicts of one verification run."""

    name: str
    constants: dict = field(default_factory=dict)
    norms: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)

    def add_constant(self, key: str, value: float):
        self.constants[key] = float(value)

    def add_norm(self, key: str, value: float):
        self.norms[key] = float(value)

    def add(self, verdict: Verdict) -> Verdict:
        self.verdicts.append(verdict)
        return verdict

    @property
    def all_hold(self) -> bool:
        return all(v.holds for v in self.verdicts)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "constants": dict(sorted(self.constants.items())),
            "norms": dict(sorted(self.norms.items())),
            "verdicts": [asdict(v) for v in self.verdicts],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def csv_rows(self):
        """Rows (name, lhs, rhs, margin, verdict) for the flat CSV table."""
        for v in self.verdicts:
            yield (v.name, v.lhs, v.rhs, v.margin,
                   "holds" if v.holds else "violated")


def check_energy(u: DiscreteFunction, f: ScalarField, lam: float = 1.0,
                 f_norm: float | None = None,
                 slack: float = RELATIVE_SLACK) -> Verdict:
    """Gradient bound |grad u|_2 <= (2(d-1)/((d-2) lam)) |f|_{2d/(d+2)}.

    A conforming Galerkin solution with c >= 0 inherits the continuous
    bound, so this is a hard invariant for admissible configurations.
    """
    d = u.space.dim
    grid = u.space.grid
    lhs = norm(u, "H1semi")
    fn = lp_norm(f, 2.0 * d / (d + 2.0), grid) if f_norm is None else f_norm
    rhs = sobolev_factor(d) / lam * fn
    return Verdict.compare("energy bound", lhs, rhs, slack=slack,
                           note=f"constant {sobolev_factor(d) / lam:g}, "
                                f"|f|_{{{2 * d / (d + 2):g}}} = {fn:.8g}")


def linf_ratio(u: DiscreteFunction, f: ScalarField, p_hat: float,
               f_norm: float | None = None) -> float:
    """Ratio |u|_inf / |f|_{p_hat d/(d + p_hat)} for one solve.

    Vanishing data gives ratio 0 (the solution vanishes with it).
    """
    d = u.space.dim
    fn = (lp_norm(f, p_hat * d / (d + p_hat), u.space.grid)
          if f_norm is None else f_norm)
    sup = norm(u, "Linf")
    if fn == 0.0:
        return 0.0 if sup == 0.0 else math.inf
    return sup / fn


def check_linf(ratios, band: float = 0.05) -> Verdict:
    """Uniformity of sup-norm ratios across a truncation ladder.

    The bound constant does not depend on the truncation level, so the
    observed ratios must stay within `band` of their median:
    max <= (1 + band) * median.
    """
    ratios = [float(r) for r in ratios]
    if not ratios:
        raise ValueError("no ratios to check")
    med = float(np.median(ratios))
    return Verdict.compare("sup-norm ratio uniformity", max(ratios),
                           (1.0 + band) * med, slack=0.0,
                           note=f"median {med:.8g}, band {band:.0%}, "
                                f"levels {len(ratios)}")


def calibrate_effective_constants(pairs, p_hat: float) -> tuple[float, float]:
    """Measured envelope constants over a calibration suite.

    pairs: iterable of (u, f) solves with c >= 0.  Returns
    (c1_eff, c2_eff): the largest observed ratios for the zero-order
    Sobolev bound |u|_{2d/(d-2)} / |f|_{2d/(d+2)} and for the sup-norm
    bound |u|_inf / |f|_{p_hat d/(d+p_hat)}.
    """
    c1 = 0.0
    c2 = 0.0
    for u, f in pairs:
        d = u.space.dim
        grid = u.space.grid
        c1 = max(c1, norm(u, "Lq", q=2.0 * d / (d - 2.0))
                 / lp_norm(f, 2.0 * d / (d + 2.0), grid))
        c2 = max(c2, norm(u, "Linf")
                 / lp_norm(f, p_hat * d / (d + p_hat), grid))
    return c1, c2


def check_interpolation(u: DiscreteFunction, f: ScalarField, exps: ExponentSet,
                        c1_eff: float | None, c2_eff: float | None,
                        f_norm: float | None = None,
                        slack: float = RELATIVE_SLACK) -> Verdict:
    """Interpolated bound |u|_{q_theta} <= c1^(1/k) c2^(1-1/k) |f|_{p_theta}.

    c1_eff and c2_eff are measured envelope constants from the k = 1 and
    sup-norm calibration suites; requesting the check without them is an
    error ("calibrate first").
    """
    if c1_eff is None or c2_eff is None:
        raise CalibrationError("calibrate first: effective constants missing")
    lhs = norm(u, "Lq", q=exps.q_theta)
    fn = lp_norm(f, exps.p_theta, u.space.grid) if f_norm is None else f_norm
    factor = c1_eff ** (1.0 / exps.k) * c2_eff ** (1.0 - 1.0 / exps.k)
    return Verdict.compare(
        f"interpolated bound (k={exps.k:g})", lhs, factor * fn, slack=slack,
        note=f"c1_eff {c1_eff:.8g}, c2_eff {c2_eff:.8g}, "
             f"|f|_{{{exps.p_theta:g}}} = {fn:.8g}")


@dataclass
class MaxPrincipleResult:
    applicable: bool
    positive_offdiag: int
    verdict: Verdict | None = None

    def describe(self) -> str:
        if not self.applicable:
            return (f"maximum principle: not applicable "
                    f"({self.positive_offdiag} positive off-diagonal entries)")
        return self.verdict.describe()


def max_principle_diagnostic(problem, u: DiscreteFunction,
                             tol: float = 1e-8) -> MaxPrincipleResult:
    """Discrete weak maximum principle as a diagnostic, not an invariant.

    Applies only when the assembled operator has nonpositive off-diagonal
    entries (the structured-stiffness regime); then a nonpositive load
    must produce a nonpositive solution up to rounding.  Off the regime
    the result reports the positive-entry count instead of failing.
    """
    mat = problem.operator.matrix.tocoo()
    off = mat.row != mat.col
    scale = float(np.max(np.abs(mat.data))) if mat.data.size else 0.0
    positive = int(np.sum(mat.data[off] > tol * max(scale, 1e-300)))
    if positive:
        return MaxPrincipleResult(applicable=False, positive_offdiag=positive)
    sup = norm(u, "Linf")
    if np.all(problem.load <= tol * max(np.max(np.abs(problem.load)), 1e-300)):
        verdict = Verdict.compare("weak maximum principle (f <= 0 => u <= 0)",
                                  float(np.max(u.values, initial=0.0)),
                                  tol * max(sup, 1e-300), slack=0.0)
    else:
        verdict = Verdict("weak maximum principle (f <= 0 => u <= 0)",
                          0.0, 0.0, True, 0.0,
                          note="vacuous: load has positive entries")
    return MaxPrincipleResult(applicable=True, positive_offdiag=0,
                              verdict=verdict)
