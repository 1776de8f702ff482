"""Quantitative Gaussian-approximation bounds for chaos vectors.

Two bounds on the smooth distance d_3(X, Z) between a chaos vector X and
a centered Gaussian Z with covariance S':

* :func:`four_moment_bound` -- the moment form, in a detailed per-order
  variant and a compact variant.  The compact variant multiplies the
  square root of the per-order/cross-order moment-gap sum (the quantity
  the derivation actually controls; for a single-chaos X it coincides
  with E||X||^4 - (E||X||^2)^2 - 2||S||_HS^2).
* :func:`contraction_bound` -- the contraction form with the explicit
  combinatorial coefficients a, b, c and index set I.

Both constants in front of the square roots are implemented exactly as
printed, including the 2^{3N-1} (moment form) versus 2^{3N-2}
(contraction form) mismatch; see README for the flag on that
discrepancy.  All square-root arguments are clamped at zero when within
-1e-9 (rounding); anything more negative raises
:class:`NegativeRadicand`, since positivity holds analytically and a
violation signals a kernel or coefficient bug.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chaos import (ChaosVector, CovarianceMatrix, MomentProfile, coeff_a,
                    coeff_b, coeff_c, index_set_I, moment_profile)
from .kernels import contract, frobenius_inner

RADICAND_TOL = 1e-9


class NegativeRadicand(ArithmeticError):
    """A square-root argument fell below the -1e-9 clamping tolerance."""


def _sqrt_clamped(x: float, what: str) -> float:
    if x < -RADICAND_TOL:
        raise NegativeRadicand(f"{what} = {x:.3e} < -{RADICAND_TOL:.0e}")
    return math.sqrt(max(x, 0.0))


def hs_diff(S: CovarianceMatrix, Sp: CovarianceMatrix) -> float:
    """Hilbert-Schmidt (Frobenius) norm of S - S'."""
    if S.k_dim != Sp.k_dim:
        raise ValueError("covariance dimensions differ")
    return float(np.linalg.norm(S.entries - Sp.entries))


@dataclass(frozen=True)
class BoundTerm:
    """One summand of a bound, kept for diagnostics and CSV export."""
    term_kind: str
    q: int | None = None
    p: int | None = None
    r: int | None = None
    s: int | None = None
    l: int | None = None
    m: int | None = None
    value: float = 0.0
    coefficient: float | None = None

    def csv_row(self) -> list:
        def cell(v):
            return "" if v is None else v
        return [self.term_kind, cell(self.q), cell(self.p), cell(self.r),
                cell(self.s), cell(self.l), cell(self.m), repr(float(self.value))]


CSV_COLUMNS = ("term_kind", "q", "p", "r", "s", "l", "m", "value")


@dataclass(frozen=True)
class BoundReport:
    """Evaluated bound with every summand retained.

    ``covariance_term`` is (1/2) ||S - S'||_HS.  For the moment form,
    ``moment_term_detailed`` and ``moment_term_compact`` are the
    non-covariance parts of the two variants (detailed <= compact by
    construction).  For the contraction form both moment fields carry the
    prefactor * sqrt(beta) term and ``beta`` is set.
    """
    covariance_term: float
    moment_term_detailed: float
    moment_term_compact: float
    beta: float | None
    per_pair_terms: tuple[BoundTerm, ...]
    profile: MomentProfile = field(repr=False, default=None)

    @property
    def detailed_total(self) -> float:
        return self.covariance_term + self.moment_term_detailed

    @property
    def compact_total(self) -> float:
        return self.covariance_term + self.moment_term_compact

    def csv_rows(self) -> list[list]:
        return [t.csv_row() for t in self.per_pair_terms]


def four_moment_bound(X: ChaosVector, Sp: CovarianceMatrix,
                      profile: MomentProfile | None = None) -> BoundReport:
    """Moment bound on d_3(X, Z), detailed and compact forms.

    detailed = 1/2 ||S - S'|| + sum_q (2q-1)/(4q) sqrt(gap_q)
             + sum_{p != q} (p+q-1)/(4p) sqrt(cross_{pq})
             + sqrt(N E||X||^2) sqrt(sum_q 2^{3q-1}(4q-3) gap_q)

    compact = 1/2 ||S - S'||
            + (N(2N-1)/4 + sqrt(2^{3N-1} N (4N-3) E||X||^2)) sqrt(total gap)

    where gap_q = E||F_q||^4 - (E||F_q||^2)^2 - 2||S_q||_HS^2, cross_{pq}
    = E||F_p||^2||F_q||^2 - E||F_p||^2 E||F_q||^2, and the total gap is
    their sum over orders (the decomposition the derivation bounds).
    """
    prof = profile if profile is not None else moment_profile(X)
    N = X.max_order
    cov_term = 0.5 * hs_diff(prof.S, Sp)
    terms: list[BoundTerm] = []

    detailed = 0.0
    remainder_arg = 0.0
    for q in X.orders:
        gap = prof.gap_by_order[q]
        coef = (2 * q - 1) / (4 * q)
        val = coef * _sqrt_clamped(gap, f"gap at order {q}")
        detailed += val
        remainder_arg += 2.0 ** (3 * q - 1) * (4 * q - 3) * max(gap, 0.0)
        terms.append(BoundTerm("fourth_moment", q=q, p=q, value=val, coefficient=coef))
    for (q, p), cross in sorted(prof.cross_gap.items()):
        coef = (p + q - 1) / (4 * p)
        val = coef * _sqrt_clamped(cross, f"cross gap ({q},{p})")
        detailed += val
        terms.append(BoundTerm("cross_moment", q=q, p=p, value=val, coefficient=coef))
    remainder = math.sqrt(N * prof.m2) * _sqrt_clamped(remainder_arg, "remainder sum")
    detailed += remainder
    terms.append(BoundTerm("remainder", value=remainder))

    prefactor = N * (2 * N - 1) / 4.0 + math.sqrt(2.0 ** (3 * N - 1) * N * (4 * N - 3) * prof.m2)
    compact = prefactor * _sqrt_clamped(prof.split_gap, "total moment gap")
    terms.append(BoundTerm("compact", value=compact, coefficient=prefactor))

    return BoundReport(covariance_term=cov_term, moment_term_detailed=detailed,
                       moment_term_compact=compact, beta=None,
                       per_pair_terms=tuple(terms), profile=prof)


# ---------------------------------------------------------------------------
# contraction form
# ---------------------------------------------------------------------------

def required_contraction_indices(orders) -> list[tuple[int, int, int, int]]:
    """All (q, p, r, l) whose contraction norms enter beta."""
    need = set()
    orders = sorted(orders)
    for q in orders:
        for p in orders:
            qp = min(q, p)
            if q != p:
                need.add((q, p, qp, qp))
            for r in range(1, qp):
                need.add((q, p, r, r))
            for (r, s, l, m) in index_set_I(q, p):
                need.add((q, p, r, l))
                need.add((q, p, s, m))
    return sorted(need)


def contraction_norms(X: ChaosVector) -> dict[tuple[int, int, int, int], float]:
    """Norms ||f_q *_r^l f_p|| over H (x) K (x) K for every index beta needs."""
    out = {}
    for (q, p, r, l) in required_contraction_indices(X.orders):
        c = contract(X.kernels[q], X.kernels[p], r, l)
        out[(q, p, r, l)] = math.sqrt(frobenius_inner(c, c))
    return out


def assemble_beta(norms: dict[tuple[int, int, int, int], float],
                  orders) -> tuple[float, list[BoundTerm]]:
    """beta from a table of contraction norms, with per-term rows.

    beta = sum_{q != p} a_{p,q}(q^p) ||f_q *_{q^p}^{q^p} f_p||^2
         + sum_{q,p} sum_{r=1}^{q^p-1} b_{p,q}(r) ||f_q *_r^r f_p||^2
         + sum_{q,p} sum_{(r,s,l,m) in I} c_{p,q,l,m}(r,s)
               ||f_q *_r^l f_p|| ||f_q *_s^m f_p||.
    """
    orders = sorted(orders)
    beta = 0.0
    rows: list[BoundTerm] = []
    for q in orders:
        for p in orders:
            qp = min(q, p)
            if q != p:
                coef = coeff_a(p, q, qp)
                val = coef * norms[(q, p, qp, qp)] ** 2
                beta += val
                rows.append(BoundTerm("a", q=q, p=p, r=qp, l=qp, value=val,
                                      coefficient=coef))
            for r in range(1, qp):
                coef = coeff_b(p, q, r)
                val = coef * norms[(q, p, r, r)] ** 2
                beta += val
                rows.append(BoundTerm("b", q=q, p=p, r=r, l=r, value=val,
                                      coefficient=coef))
            for (r, s, l, m) in index_set_I(q, p):
                coef = coeff_c(p, q, l, m, r, s)
                val = coef * norms[(q, p, r, l)] * norms[(q, p, s, m)]
                beta += val
                rows.append(BoundTerm("c", q=q, p=p, r=r, s=s, l=l, m=m,
                                      value=val, coefficient=coef))
    return beta, rows


def contraction_prefactor(N: int, m2: float) -> float:
    return N * (2 * N - 1) / 4.0 + math.sqrt(2.0 ** (3 * N - 2) * N * (4 * N - 3) * m2)


def contraction_bound(X: ChaosVector, Sp: CovarianceMatrix,
                      norms: dict | None = None,
                      profile: MomentProfile | None = None) -> BoundReport:
    """Contraction bound on d_3(X, Z).

    d_3 <= (N(2N-1)/4 + sqrt(2^{3N-2} N (4N-3) E||X||^2)) sqrt(beta)
           + 1/2 ||S - S'||_HS.
    """
    prof = profile if profile is not None else moment_profile(X)
    table = norms if norms is not None else contraction_norms(X)
    beta, rows = assemble_beta(table, X.orders)
    N = X.max_order
    cov_term = 0.5 * hs_diff(prof.S, Sp)
    value = contraction_prefactor(N, prof.m2) * _sqrt_clamped(beta, "beta")
    rows.append(BoundTerm("contraction_total", value=value,
                          coefficient=contraction_prefactor(N, prof.m2)))
    return BoundReport(covariance_term=cov_term, moment_term_detailed=value,
                       moment_term_compact=value, beta=beta,
                       per_pair_terms=tuple(rows), profile=prof)
