"""Atomic measure spaces and dense kernel tensors.

A :class:`MeasureGrid` holds finitely many labeled atoms with strictly
positive masses, standing in for a sigma-finite measure space.  A
:class:`Kernel` of order q is a dense real tensor with one grid axis per
argument and up to two trailing "K axes" indexing a finite orthonormal
truncation of a separable Hilbert space K (two K axes arise when two
K-valued kernels are contracted).

The primitives everything else is built on:

* ``symmetrize``  -- average over all permutations of the grid axes,
* ``contract``    -- identify r arguments of two kernels and integrate l
  of them against the atom masses,
* ``inner`` / ``norm_sq`` -- the weighted L^2 pairing over all grid axes.

Grids and kernels are immutable after construction; every operation here
is a pure function and safe to call from parallel workers.
"""
from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np

_GRID_LETTERS = "abcdefghijkl"
_K_LETTERS = "yz"


class KernelShapeError(ValueError):
    """Operands disagree on grid, order, or K axes."""


class MeasureGrid:
    """Atomic discretization of a measure space: labeled atoms plus masses.

    Parameters
    ----------
    atoms : sequence of hashable labels, unique and non-empty.
    weights : positive finite masses, one per atom.
    coords : optional (n, d) array of spatial coordinates per atom, used by
        the application modules (geometry); ignored by the algebra.
    """

    def __init__(self, atoms: Sequence, weights, coords=None):
        atoms = tuple(atoms)
        if not atoms:
            raise ValueError("grid needs at least one atom")
        if len(set(atoms)) != len(atoms):
            raise ValueError("atom labels must be unique")
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(atoms),):
            raise ValueError("need one weight per atom")
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise ValueError("weights must be strictly positive and finite")
        w = w.copy()
        w.setflags(write=False)
        self.atoms = atoms
        self.weights = w
        if coords is not None:
            coords = np.atleast_2d(np.asarray(coords, dtype=float))
            if coords.shape[0] != len(atoms):
                raise ValueError("need one coordinate row per atom")
            coords.setflags(write=False)
        self.coords = coords
        self._weight_products: dict[int, np.ndarray] = {}
        self._offdiag_masks: dict[int, np.ndarray] = {}

    @property
    def size(self) -> int:
        return len(self.atoms)

    def weight_product(self, order: int) -> np.ndarray:
        """Flattened tensor of weight products over ``order`` slots."""
        if order not in self._weight_products:
            out = np.ones(1)
            for _ in range(order):
                out = np.multiply.outer(out, self.weights).reshape(-1)
            out.setflags(write=False)
            self._weight_products[order] = out
        return self._weight_products[order]

    def offdiag_mask(self, order: int) -> np.ndarray:
        """Boolean tensor, True on index tuples with pairwise distinct atoms."""
        if order not in self._offdiag_masks:
            n = self.size
            mask = np.ones((n,) * order, dtype=bool)
            if order >= 2:
                idx = np.indices((n,) * order)
                for a, b in itertools.combinations(range(order), 2):
                    mask &= idx[a] != idx[b]
            mask.setflags(write=False)
            self._offdiag_masks[order] = mask
        return self._offdiag_masks[order]

    def __repr__(self):  # pragma: no cover
        return f"MeasureGrid(n={self.size})"


class Kernel:
    """Order-q tensor over a grid, optionally carrying K axes.

    ``values`` has shape ``(n,) * order + k_dims`` where ``k_dims`` is
    ``()`` for a scalar kernel, ``(k,)`` for a K-valued kernel, and
    ``(k, k')`` for a (K tensor K)-valued contraction output.  The
    ``symmetric`` flag asserts invariance under permutations of the grid
    axes only; it is trusted by the algebra, so set it only through
    :func:`symmetrize` or when the construction guarantees it.
    """

    def __init__(self, grid: MeasureGrid, order: int, values, k_dims=(),
                 symmetric: bool = False):
        if order < 0:
            raise ValueError("order must be >= 0")
        k_dims = tuple(int(k) for k in k_dims)
        if len(k_dims) > 2 or any(k <= 0 for k in k_dims):
            raise ValueError("k_dims must be at most two positive integers")
        vals = np.asarray(values, dtype=float)
        expect = (grid.size,) * order + k_dims
        if vals.shape != expect:
            raise KernelShapeError(f"values shape {vals.shape} != {expect}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("kernel values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        self.grid = grid
        self.order = int(order)
        self.values = vals
        self.k_dims = k_dims
        self.symmetric = bool(symmetric)

    @property
    def k_dim(self) -> int:
        """Truncation dimension of K; 0 for scalar-valued kernels."""
        if not self.k_dims:
            return 0
        if len(self.k_dims) == 1:
            return self.k_dims[0]
        raise KernelShapeError("kernel carries two K axes; use k_dims")

    def with_values(self, values, symmetric=None) -> "Kernel":
        return Kernel(self.grid, self.order, values, self.k_dims,
                      self.symmetric if symmetric is None else symmetric)

    def scale(self, c: float) -> "Kernel":
        return self.with_values(self.values * float(c))

    def k_slice(self, *index) -> "Kernel":
        """Scalar kernel obtained by fixing the K indices."""
        if len(index) != len(self.k_dims):
            raise KernelShapeError("wrong number of K indices")
        vals = self.values[(slice(None),) * self.order + tuple(index)]
        return Kernel(self.grid, self.order, vals, (), self.symmetric)

    def __repr__(self):  # pragma: no cover
        return (f"Kernel(order={self.order}, n={self.grid.size}, "
                f"k_dims={self.k_dims}, symmetric={self.symmetric})")


def zeros_like_kernel(grid: MeasureGrid, order: int, k_dims=()) -> Kernel:
    shape = (grid.size,) * order + tuple(k_dims)
    return Kernel(grid, order, np.zeros(shape), k_dims, symmetric=True)


def symmetrize(f: Kernel) -> Kernel:
    """Average of ``f`` over all permutations of its grid axes.

    Idempotent; a kernel already flagged symmetric is returned unchanged.
    K axes are left in place.
    """
    if f.symmetric or f.order <= 1:
        return f if f.symmetric else f.with_values(f.values, symmetric=True)
    acc = np.zeros_like(f.values)
    axes_k = tuple(range(f.order, f.order + len(f.k_dims)))
    for perm in itertools.permutations(range(f.order)):
        acc += np.transpose(f.values, perm + axes_k)
    acc /= math.factorial(f.order)
    return f.with_values(acc, symmetric=True)


def zero_diagonal(f: Kernel) -> Kernel:
    """Copy of ``f`` with every entry on a repeated atom tuple set to 0."""
    if f.order < 2:
        return f
    mask = f.grid.offdiag_mask(f.order)
    vals = f.values * mask.reshape(mask.shape + (1,) * len(f.k_dims))
    return f.with_values(vals)


def diagonal_mass(f: Kernel) -> float:
    """Max absolute value of ``f`` on repeated atom tuples (0 for order < 2)."""
    if f.order < 2:
        return 0.0
    mask = f.grid.offdiag_mask(f.order)
    off = ~mask
    if not off.any():
        return 0.0
    vals = np.abs(f.values.reshape(mask.shape + (-1,)))
    return float(vals[off].max()) if vals.size else 0.0


def contract(f: Kernel, g: Kernel, r: int, l: int) -> Kernel:
    """Contraction f *_r^l g: identify r arguments, integrate l of them.

    The first ``l`` identified variables are summed against the atom
    masses, the remaining ``r - l`` stay free and shared; the result has
    order ``q + p - r - l`` with slot order (shared, f-free, g-free).  For
    two K-valued inputs the output carries both K axes (f's first).  The
    identified slots are the leading ones of each operand, which is
    immaterial for symmetric kernels.  The output is NOT symmetrized.
    """
    if f.grid is not g.grid:
        raise KernelShapeError("kernels live on different grids")
    q, p = f.order, g.order
    if not (0 <= l <= r <= min(q, p)):
        raise ValueError(f"need 0 <= l <= r <= min(q, p); got r={r}, l={l}")
    if len(f.k_dims) > 1 or len(g.k_dims) > 1:
        raise KernelShapeError("contract supports at most one K axis per operand")
    total = q + p - r
    if total > len(_GRID_LETTERS):
        raise ValueError("contraction order exceeds supported range")
    x = _GRID_LETTERS[:l]
    s = _GRID_LETTERS[l:r]
    u = _GRID_LETTERS[r:q]
    v = _GRID_LETTERS[q:q + (p - r)]
    fk = _K_LETTERS[0] if f.k_dims else ""
    gk = _K_LETTERS[1] if g.k_dims else ""
    sub = (f.values, x + s + u + fk)
    ops = [f.values]
    subs = [x + s + u + fk]
    for i in range(l):
        ops.append(f.grid.weights)
        subs.append(x[i])
    ops.append(g.values)
    subs.append(x + s + v + gk)
    out_sub = s + u + v + fk + gk
    expr = ",".join(subs) + "->" + out_sub
    vals = np.einsum(expr, *ops, optimize=True)
    out_k = f.k_dims + g.k_dims
    out_order = q + p - r - l
    return Kernel(f.grid, out_order, vals.reshape((f.grid.size,) * out_order + out_k),
                  out_k, symmetric=False)


def inner(f: Kernel, g: Kernel):
    """Weighted pairing over all grid slots.

    Scalar kernels give a real number; K-valued kernels give the k x k
    matrix M[i, j] = <f_i, g_j> of pairings between K components.
    """
    if f.grid is not g.grid or f.order != g.order:
        raise KernelShapeError("inner needs equal order and grid")
    if len(f.k_dims) > 1 or len(g.k_dims) > 1:
        raise KernelShapeError("inner supports at most one K axis; see frobenius_inner")
    wq = f.grid.weight_product(f.order)
    fv = f.values.reshape(wq.size, -1)
    gv = g.values.reshape(wq.size, -1)
    if not f.k_dims and not g.k_dims:
        return float(wq @ (fv[:, 0] * gv[:, 0]))
    return fv.T @ (wq[:, None] * gv)


def frobenius_inner(f: Kernel, g: Kernel) -> float:
    """Full pairing: weighted sum over grid slots and all matching K axes.

    Realizes the H^{x m} (x) K^{x j} inner product; for two matching
    K axes this is the sum over (i, j) of the scalar-slice pairings.
    """
    if f.grid is not g.grid or f.order != g.order or f.k_dims != g.k_dims:
        raise KernelShapeError("frobenius_inner needs identical shape")
    wq = f.grid.weight_product(f.order)
    prod = (f.values * g.values).reshape(wq.size, -1).sum(axis=1)
    return float(wq @ prod)


def norm_sq(f: Kernel) -> float:
    """Squared weighted L^2 norm, summed over every K axis; >= 0."""
    return frobenius_inner(f, f)


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

def grid_to_json(grid: MeasureGrid) -> dict:
    doc = {"atoms": list(grid.atoms), "weights": grid.weights.tolist()}
    if grid.coords is not None:
        doc["coords"] = grid.coords.tolist()
    return doc


def grid_from_json(doc: dict) -> MeasureGrid:
    return MeasureGrid(doc["atoms"], doc["weights"], doc.get("coords"))


def kernel_to_json(kernel: Kernel) -> dict:
    """Serialize a kernel with at most one K axis; row-major values."""
    if len(kernel.k_dims) > 1:
        raise KernelShapeError("JSON schema covers scalar and K-valued kernels only")
    return {
        "grid": grid_to_json(kernel.grid),
        "order": kernel.order,
        "k_dim": kernel.k_dim,
        "symmetric": kernel.symmetric,
        "values": np.ravel(kernel.values, order="C").tolist(),
    }


def kernel_from_json(doc: dict, grid: MeasureGrid | None = None) -> Kernel:
    grid = grid if grid is not None else grid_from_json(doc["grid"])
    order = int(doc["order"])
    k_dim = int(doc.get("k_dim", 0))
    k_dims = (k_dim,) if k_dim else ()
    shape = (grid.size,) * order + k_dims
    vals = np.asarray(doc["values"], dtype=float).reshape(shape, order="C")
    return Kernel(grid, order, vals, k_dims, symmetric=bool(doc.get("symmetric", False)))
