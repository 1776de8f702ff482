"""Exact chaos-level algebra over an atomic Poisson space.

A :class:`ChaosVector` is a finite decomposition X = sum_q F_q where F_q
lives in the q-th Poisson chaos and is represented by a symmetric
K-valued kernel f_q (one scalar kernel f_{q,i} per K component).  On an
atomic grid the isometry and the multiplication formula for multiple
integrals hold exactly, so second and fourth moments, covariance
operators, and carre-du-champ expansions are all computable in closed
form from kernel contractions.

Two fourth-moment quantities are deliberately kept apart:

* ``pair_fourth_moment(X, q, p)`` is sum_{i,j} E[F_{q,i}^2 F_{p,j}^2],
  the fixed-order quantity that the quantitative bounds consume; it is
  evaluated by pairing symmetrized contractions of f_q against f_p.
* ``fourth_moment_expansion(X)`` is the honest E||X||^4.  For a vector
  spread over several orders this is NOT the sum of the pair quantities:
  mixed moments such as E[F_1^3 F_2] survive.  It is computed by chaos-
  expanding each component square X_i^2 (all cross-order products
  included) and applying the isometry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import (Kernel, KernelShapeError, MeasureGrid, contract,
                      frobenius_inner, inner, norm_sq, symmetrize)


# ---------------------------------------------------------------------------
# combinatorics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpansionTerm:
    """One term of the multiplication formula I_q(f) I_p(g)."""
    r: int
    l: int
    coefficient: int
    result_order: int


def product_expansion(q: int, p: int) -> list[ExpansionTerm]:
    """All (r, l) terms of I_q(f) I_p(g) with their integer coefficients.

    The coefficient of the (r, l) term is r! C(q,r) C(p,r) C(r,l) and the
    resulting integral has order q + p - r - l.
    """
    if q < 1 or p < 1:
        raise ValueError("orders must be >= 1")
    terms = []
    for r in range(min(q, p) + 1):
        base = math.factorial(r) * math.comb(q, r) * math.comb(p, r)
        for l in range(r + 1):
            terms.append(ExpansionTerm(r, l, base * math.comb(r, l), q + p - r - l))
    return terms


def _check_range(name, value, lo, hi):
    if not (lo <= value <= hi):
        raise ValueError(f"{name}={value} outside [{lo}, {hi}]")


def coeff_a(p: int, q: int, r: int) -> int:
    """a_{p,q}(r) = p! q! C(q,r) C(p,r) + r!^2 C(q,r)^2 C(p,r)^2 |p-q|!."""
    _check_range("r", r, 0, min(p, q))
    return (math.factorial(p) * math.factorial(q) * math.comb(q, r) * math.comb(p, r)
            + math.factorial(r) ** 2 * math.comb(q, r) ** 2 * math.comb(p, r) ** 2
            * math.factorial(abs(p - q)))


def coeff_b(p: int, q: int, r: int) -> int:
    """b_{p,q}(r) = p! q! C(q,r) C(p,r)."""
    _check_range("r", r, 0, min(p, q))
    return math.factorial(p) * math.factorial(q) * math.comb(q, r) * math.comb(p, r)


def coeff_c(p: int, q: int, l: int, m: int, r: int, s: int) -> int:
    """c_{p,q,l,m}(r,s) = r! s! C(q,r) C(q,s) C(p,r) C(p,s) C(r,l) C(s,m) (p+q-r-l)!."""
    _check_range("r", r, 0, min(p, q))
    _check_range("s", s, 0, min(p, q))
    _check_range("l", l, 0, r)
    _check_range("m", m, 0, s)
    return (math.factorial(r) * math.factorial(s)
            * math.comb(q, r) * math.comb(q, s) * math.comb(p, r) * math.comb(p, s)
            * math.comb(r, l) * math.comb(s, m) * math.factorial(p + q - r - l))


def index_set_I(q: int, p: int) -> list[tuple[int, int, int, int]]:
    """The index set I of the contraction bound.

    All (r, s, l, m) with 0 <= r, s <= q ^ p, 0 <= l <= r, 0 <= m <= s and
    r + l = s + m, minus the two corners (0,0,0,0) and (m,m,m,m) with
    m = q ^ p.
    """
    if q < 1 or p < 1:
        raise ValueError("orders must be >= 1")
    qp = min(q, p)
    out = []
    for r in range(qp + 1):
        for s in range(qp + 1):
            for l in range(r + 1):
                for m in range(s + 1):
                    if r + l != s + m:
                        continue
                    if (r, s, l, m) in ((0, 0, 0, 0), (qp, qp, qp, qp)):
                        continue
                    out.append((r, s, l, m))
    return out


def _pair_index_quadruples(q: int, p: int) -> list[tuple[int, int, int, int]]:
    """All (r, s, l, m) of the fourth-moment expansion, corners included."""
    qp = min(q, p)
    return [(r, s, l, m)
            for r in range(qp + 1) for s in range(qp + 1)
            for l in range(r + 1) for m in range(s + 1)
            if r + l == s + m]


# ---------------------------------------------------------------------------
# chaos vectors
# ---------------------------------------------------------------------------

class ChaosVector:
    """Finite chaos decomposition X = sum_{q} I_q(f_q), f_q symmetric.

    ``kernels`` maps the order q >= 1 to a kernel over a shared grid; all
    kernels must carry the same K truncation (k_dim >= 1) or all be
    scalar (k_dim == 0, a real-valued chaos expansion).
    """

    def __init__(self, kernels: dict[int, Kernel]):
        if not kernels:
            raise ValueError("chaos vector needs at least one kernel")
        orders = sorted(kernels)
        if orders[0] < 1:
            raise ValueError("chaos orders start at 1")
        first = kernels[orders[0]]
        for q, ker in kernels.items():
            if ker.order != q:
                raise KernelShapeError(f"kernel at order {q} has order {ker.order}")
            if ker.grid is not first.grid or ker.k_dims != first.k_dims:
                raise KernelShapeError("kernels must share grid and K truncation")
            if len(ker.k_dims) > 1:
                raise KernelShapeError("chaos kernels carry at most one K axis")
            if not ker.symmetric:
                raise ValueError(f"kernel at order {q} is not flagged symmetric")
        self.kernels = dict(sorted(kernels.items()))
        self.grid = first.grid
        self.k_dims = first.k_dims

    @property
    def k_dim(self) -> int:
        return self.k_dims[0] if self.k_dims else 0

    @property
    def max_order(self) -> int:
        return max(self.kernels)

    @property
    def orders(self) -> list[int]:
        return sorted(self.kernels)

    def component(self, q: int, i: int) -> Kernel:
        """Scalar kernel f_{q,i} of the i-th K component at order q."""
        ker = self.kernels[q]
        if not self.k_dims:
            if i != 0:
                raise IndexError("scalar chaos vector has a single component")
            return ker
        return ker.k_slice(i)

    def scale(self, c: float) -> "ChaosVector":
        return ChaosVector({q: ker.scale(c) for q, ker in self.kernels.items()})

    def __repr__(self):  # pragma: no cover
        return f"ChaosVector(orders={self.orders}, k_dim={self.k_dim}, n={self.grid.size})"


@dataclass(frozen=True)
class CovarianceMatrix:
    """Covariance operator of a chaos vector in the truncated K basis."""
    entries: np.ndarray
    psd_floor: float = 1e-10

    def __post_init__(self):
        ent = np.asarray(self.entries, dtype=float)
        if ent.ndim != 2 or ent.shape[0] != ent.shape[1]:
            raise ValueError("covariance must be a square matrix")
        if not np.allclose(ent, ent.T, atol=1e-12 * max(1.0, np.abs(ent).max())):
            raise ValueError("covariance must be symmetric")
        ent = 0.5 * (ent + ent.T)
        lo = np.linalg.eigvalsh(ent).min() if ent.size else 0.0
        if lo < -self.psd_floor * max(1.0, np.abs(ent).max()):
            raise ValueError(f"covariance not PSD (min eigenvalue {lo:.3e})")
        ent.setflags(write=False)
        object.__setattr__(self, "entries", ent)

    @property
    def k_dim(self) -> int:
        return self.entries.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.entries))

    def hs_norm_sq(self) -> float:
        return float(np.sum(self.entries ** 2))


def order_covariance(X: ChaosVector, q: int) -> CovarianceMatrix:
    """Covariance S_q of the order-q component: q! <f_{q,i}, f_{q,j}>."""
    ker = X.kernels[q]
    fac = math.factorial(q)
    if not X.k_dims:
        return CovarianceMatrix(np.array([[fac * inner(ker, ker)]]))
    return CovarianceMatrix(fac * inner(ker, ker))


def covariance(X: ChaosVector) -> CovarianceMatrix:
    """S = sum_q S_q; the isometry makes orders contribute additively."""
    k = max(X.k_dim, 1)
    acc = np.zeros((k, k))
    for q in X.orders:
        acc += order_covariance(X, q).entries
    return CovarianceMatrix(acc)


def second_moment(X: ChaosVector) -> float:
    """E||X||_K^2 = trace of the covariance operator."""
    return covariance(X).trace()


# ---------------------------------------------------------------------------
# products and fourth moments
# ---------------------------------------------------------------------------

def product_kernels(f: Kernel, g: Kernel) -> tuple[float, dict[int, Kernel]]:
    """Chaos expansion of I_q(f) I_p(g) for scalar symmetric kernels.

    Returns ``(constant, kernels)`` where the product equals
    constant + sum_m I_m(kernels[m]) with every kernel symmetrized.  The
    constant is nonzero only when q == p and equals q! <f, g>.
    """
    if f.k_dims or g.k_dims:
        raise KernelShapeError("product expansion applies to scalar kernels")
    constant = 0.0
    acc: dict[int, np.ndarray] = {}
    for term in product_expansion(f.order, g.order):
        ker = symmetrize(contract(f, g, term.r, term.l))
        if term.result_order == 0:
            constant += term.coefficient * float(ker.values)
        else:
            cur = acc.setdefault(term.result_order, np.zeros_like(ker.values))
            cur += term.coefficient * ker.values
    kernels = {m: Kernel(f.grid, m, vals, (), symmetric=True)
               for m, vals in acc.items()}
    return constant, kernels


def _square_expansion(X: ChaosVector, i: int) -> tuple[float, dict[int, Kernel]]:
    """Chaos expansion of X_i^2 including all cross-order products."""
    constant = 0.0
    acc: dict[int, np.ndarray] = {}
    comps = {q: X.component(q, i) for q in X.orders}
    for q in X.orders:
        for qq in X.orders:
            c, kers = product_kernels(comps[q], comps[qq])
            constant += c
            for m, ker in kers.items():
                cur = acc.setdefault(m, np.zeros_like(ker.values))
                cur += ker.values
    kernels = {m: Kernel(X.grid, m, vals, (), symmetric=True)
               for m, vals in acc.items()}
    return constant, kernels


def fourth_moment_expansion(X: ChaosVector) -> float:
    """Exact E||X||_K^4.

    Expands every component square X_i^2 into chaos (cross-order products
    included) and applies the isometry:
    E[X_i^2 X_j^2] = E[X_i^2] E[X_j^2] + sum_m m! <U_{i,m}, U_{j,m}>.
    """
    k = max(X.k_dim, 1)
    squares = [_square_expansion(X, i) for i in range(k)]
    total = 0.0
    for i in range(k):
        ci, ui = squares[i]
        for j in range(k):
            cj, uj = squares[j]
            total += ci * cj
            for m, ker in ui.items():
                if m in uj:
                    total += math.factorial(m) * frobenius_inner(ker, uj[m])
    return total


def pair_fourth_moment(X: ChaosVector, q: int, p: int) -> float:
    """sum_{i,j} E[F_{q,i}^2 F_{p,j}^2] for fixed chaos orders q and p.

    Evaluated through the expansion in symmetrized contractions:
    E[F_{q,i}^2 F_{p,j}^2] = sum_{r+l = s+m} c_{p,q,l,m}(r,s)
    <sym(f_{q,i} *_r^l f_{p,j}), sym(f_{q,i} *_s^m f_{p,j})>.
    Exact for kernels of fixed order; K components are summed via the
    two-K-axis contraction kernels in one pass.
    """
    fq, fp = X.kernels[q], X.kernels[p]
    sym_contr: dict[tuple[int, int], Kernel] = {}
    for r in range(min(q, p) + 1):
        for l in range(r + 1):
            sym_contr[(r, l)] = symmetrize(contract(fq, fp, r, l))
    total = 0.0
    for (r, s, l, m) in _pair_index_quadruples(q, p):
        total += (coeff_c(p, q, l, m, r, s)
                  * frobenius_inner(sym_contr[(r, l)], sym_contr[(s, m)]))
    return total


@dataclass(frozen=True)
class MomentProfile:
    """All exact moment quantities the bounds consume."""
    m2: float
    m2_by_order: dict[int, float]
    S: CovarianceMatrix
    S_by_order: dict[int, CovarianceMatrix]
    pair_m4: dict[tuple[int, int], float]
    gap_by_order: dict[int, float]      # E||F_q||^4 - (E||F_q||^2)^2 - 2||S_q||_HS^2
    cross_gap: dict[tuple[int, int], float]  # E||F_p||^2||F_q||^2 - product, p != q
    split_gap: float                    # sum of the above, the proof's quantity
    m4: float                           # honest E||X||^4

    @property
    def true_gap(self) -> float:
        return self.m4 - self.m2 ** 2 - 2.0 * self.S.hs_norm_sq()


def moment_profile(X: ChaosVector) -> MomentProfile:
    orders = X.orders
    S_by_order = {q: order_covariance(X, q) for q in orders}
    S = covariance(X)
    m2_by_order = {q: S_by_order[q].trace() for q in orders}
    m2 = S.trace()
    pair_m4 = {(q, p): pair_fourth_moment(X, q, p) for q in orders for p in orders}
    gap_by_order = {
        q: pair_m4[(q, q)] - m2_by_order[q] ** 2 - 2.0 * S_by_order[q].hs_norm_sq()
        for q in orders
    }
    cross_gap = {
        (q, p): pair_m4[(q, p)] - m2_by_order[q] * m2_by_order[p]
        for q in orders for p in orders if q != p
    }
    split_gap = sum(gap_by_order.values()) + sum(cross_gap.values())
    return MomentProfile(m2=m2, m2_by_order=m2_by_order, S=S, S_by_order=S_by_order,
                         pair_m4=pair_m4, gap_by_order=gap_by_order,
                         cross_gap=cross_gap, split_gap=split_gap,
                         m4=fourth_moment_expansion(X))


# ---------------------------------------------------------------------------
# carre du champ
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaExpansion:
    """Chaos expansion of Gamma~(I_q(f), I_p(g)).

    ``constant`` is the order-0 part (hence the expectation); ``kernels``
    maps order m >= 1 to its symmetric scalar kernel.
    """
    constant: float
    kernels: dict[int, Kernel]


def gamma_tilde(f: Kernel, g: Kernel) -> GammaExpansion:
    """Carre du champ of two multiple integrals, termwise through -L.

    Gamma~(F, G) = (L~(FG) - G L~F - F L~G) / 2 with -L~ acting as m on
    chaos order m, so the order-m product term picks up the multiplier
    (q + p - m) / 2.
    """
    q, p = f.order, g.order
    constant, kernels = product_kernels(f, g)
    out = {m: ker.scale(0.5 * (q + p - m)) for m, ker in kernels.items()
           if q + p - m != 0}
    return GammaExpansion(constant=0.5 * (q + p) * constant, kernels=out)


# ---------------------------------------------------------------------------
# non-symmetrized contraction identity (tensor oracle)
# ---------------------------------------------------------------------------

def contraction00_identity_check(f: Kernel, g: Kernel) -> tuple[float, float]:
    """Both sides of the symmetrized-outer-product norm identity.

    lhs = (q+p)! ||sym(f (x) g)||^2 ; rhs writes the same quantity in
    norms of non-symmetrized contractions:

        q! p! ||f||^2 ||g||^2
        + q!^2 <f, g>^2                                   if q == p
        + q! p! C(q, q^p) C(p, q^p) ||f *_{q^p}^{q^p} g||^2   if q != p
        + sum_{r=1}^{q^p-1} q! p! C(q,r) C(p,r) ||f *_r^r g||^2.

    Callers assert relative agreement; both sides are returned.
    """
    if f.k_dims or g.k_dims:
        raise KernelShapeError("identity check applies to scalar kernels")
    if not (f.symmetric and g.symmetric):
        raise ValueError("identity requires symmetric inputs")
    q, p = f.order, g.order
    qp = min(q, p)
    lhs = math.factorial(q + p) * norm_sq(symmetrize(contract(f, g, 0, 0)))
    fq, fp = math.factorial(q), math.factorial(p)
    rhs = fq * fp * norm_sq(f) * norm_sq(g)
    if q == p:
        rhs += fq ** 2 * inner(f, g) ** 2
    else:
        rhs += (fq * fp * math.comb(q, qp) * math.comb(p, qp)
                * norm_sq(contract(f, g, qp, qp)))
    for r in range(1, qp):
        rhs += fq * fp * math.comb(q, r) * math.comb(p, r) * norm_sq(contract(f, g, r, r))
    return lhs, rhs
