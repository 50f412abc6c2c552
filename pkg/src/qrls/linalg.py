"""Givens-based QR maintenance with a tracked Moore-Penrose pseudoinverse.

The sliding-window solver keeps three coupled objects for the current
window matrix: an orthogonal factor ``q``, an upper-trapezoidal factor
``r`` with ``q @ r`` equal to the (row-weighted) window, and the
pseudoinverse ``r_pinv`` of ``r``.  Appending an observation row
re-triangularizes ``[r; z]`` with Givens rotations and patches ``r_pinv``
with a Greville-style rank-one correction; removing the oldest row
rotates its orthogonal coordinate onto the first axis and applies
generalized inverse sum formulas.  Everything is dense float64; matrices
stay short in the row dimension (the window length) while the column
dimension (the feature count) may run to tens of thousands.

Notation follows the classical row-update literature: for a factor R
with pseudoinverse R+, appending row z uses

    c = (I - R+ R) z,   h = z^T R+,
    b = c / ||c||^2               if z leaves the row space (rank up),
    b = R+ h^T / (1 + h h^T)      otherwise,

and the stacked pseudoinverse is [R+ - b h | b] before the rotation
sweep is absorbed via (G A)+ = A+ G^T.  Removal distinguishes a
rank-decreasing branch (projector formula) from a rank-preserving one
(Sherman-Morrison-type rational formula).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "TAU_RANK",
    "TAU_RANGE",
    "TAU_DENOM",
    "DenseMatrix",
    "GivensRotation",
    "QrFactors",
    "UpdateWorkspace",
    "DowndateBreakdown",
    "RangeViolation",
    "givens_from",
    "apply_rotation_left",
    "apply_rotation_right",
    "qr_decompose",
    "pinv_append_row",
    "pinv_remove_row",
    "removal_sweep_matrix",
    "batch_weighted_minnorm",
    "penrose_residuals",
]

# Rank-decision, range-membership and denominator guards, in the order a
# sliding update consults them.  All are absolute-versus-max(1, scale)
# style relative tests; see the call sites.
TAU_RANK = 1e-10
TAU_RANGE = 1e-8
TAU_DENOM = 1e-12

# Constant index and mask blocks reused across steps.  Keys are block
# sizes, which the window length pins down in steady state, so each dict
# holds one or two small entries for the life of a run.
_REMOVAL_CONST: dict[int, tuple[np.ndarray, np.ndarray]] = {}
_ARANGE: dict[int, np.ndarray] = {}


def _removal_constants(m: int) -> tuple[np.ndarray, np.ndarray]:
    got = _REMOVAL_CONST.get(m)
    if got is None:
        rows = np.arange(1, m - 1)
        keep = (np.arange(m)[None, :] >= rows[:, None]).astype(float)
        got = (keep, rows)
        _REMOVAL_CONST[m] = got
    return got


def _arange(n: int) -> np.ndarray:
    got = _ARANGE.get(n)
    if got is None:
        got = np.arange(n)
        _ARANGE[n] = got
    return got

# Dense row-major float64 storage throughout.
DenseMatrix = np.ndarray


class DowndateBreakdown(ArithmeticError):
    """Removal denominator vanished; the factorization must be rebuilt."""


class RangeViolation(ArithmeticError):
    """A removed row drifted out of the maintained row/column space."""


@dataclass
class GivensRotation:
    """Plane rotation acting on rows ``i`` and ``j``.

    The action on the stacked pair is ``[c s; -s c]``, so ``c = x/r`` and
    ``s = y/r`` send ``(x, y)`` to ``(r, 0)`` with ``r = hypot(x, y)``.
    """

    i: int
    j: int
    c: float
    s: float


@dataclass
class QrFactors:
    """Orthogonal-trapezoidal factorization with its pseudoinverse.

    q is rows x rows, r is rows x cols upper-trapezoidal, r_pinv is
    cols x rows.  ``rank`` counts singular values of r above the
    TAU_RANK cutoff and is maintained incrementally by the update and
    downdate routines (append may raise it, the projector-branch removal
    lowers it).
    """

    q: DenseMatrix
    r: DenseMatrix
    r_pinv: DenseMatrix
    rank: int


@dataclass
class UpdateWorkspace:
    """Scratch shared between an update/downdate call and its caller.

    c, h, k and gain_b mirror the vectors of the append/removal algebra.
    sweep holds the composite rotation map of the most recent call so the
    caller can apply the identical sweep to its transformed right-hand
    side; the removal sweep is already reduced (it drops the retired
    coordinate, mapping m values onto m - 1).  sweep_rows lists the
    coordinates the sweep consumes.  Contents are only meaningful
    immediately after the call that filled them.
    """

    c: np.ndarray | None = None
    h: np.ndarray | None = None
    k: np.ndarray | None = None
    gain_b: np.ndarray | None = None
    sweep: np.ndarray | None = None
    sweep_rows: np.ndarray | None = None


def givens_from(x: float, y: float, i: int = 0, j: int = 1) -> GivensRotation:
    """Rotation sending ``(x, y)`` to ``(hypot(x, y), 0)``.

    The all-zero input returns the identity rotation by convention, so
    this is a total function.
    """
    if x == 0.0 and y == 0.0:
        return GivensRotation(i, j, 1.0, 0.0)
    rad = math.hypot(x, y)
    return GivensRotation(i, j, x / rad, y / rad)


def apply_rotation_left(m: DenseMatrix, g: GivensRotation) -> DenseMatrix:
    """Rotate rows ``g.i`` and ``g.j`` of ``m`` in place and return it."""
    rows = m.shape[0]
    if not (0 <= g.i < rows and 0 <= g.j < rows):
        raise IndexError(f"rotation plane ({g.i}, {g.j}) outside {rows} rows")
    top = m[g.i].copy()
    m[g.i] = g.c * top + g.s * m[g.j]
    m[g.j] = g.c * m[g.j] - g.s * top
    return m


def apply_rotation_right(m: DenseMatrix, g: GivensRotation) -> DenseMatrix:
    """Rotate columns ``g.i``/``g.j`` of ``m`` in place (right-multiply by G^T).

    Satisfies (G A)+ = A+ G^T: rotating rows of a matrix corresponds to
    rotating columns of its pseudoinverse with the same rotation.
    """
    cols = m.shape[1]
    if not (0 <= g.i < cols and 0 <= g.j < cols):
        raise IndexError(f"rotation plane ({g.i}, {g.j}) outside {cols} columns")
    left = m[:, g.i].copy()
    m[:, g.i] = g.c * left + g.s * m[:, g.j]
    m[:, g.j] = g.c * m[:, g.j] - g.s * left
    return m


def qr_decompose(z: DenseMatrix) -> QrFactors:
    """Full QR of a window matrix plus a rank-revealing pseudoinverse of R.

    One-shot initialization (and cold restart) path; the per-step work is
    done by the incremental routines below.  The pseudoinverse comes from
    an SVD with singular values below ``TAU_RANK * max(1, s_max)``
    treated as zero, which also seeds the maintained rank counter.
    """
    z = np.array(z, dtype=float, order="C", copy=True)
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
        raise ValueError("window matrix must be 2-d and non-empty")
    if not np.isfinite(z).all():
        raise ValueError("window matrix has non-finite entries")
    q, r = scipy.linalg.qr(z, mode="full")
    u, s, vt = np.linalg.svd(r, full_matrices=False)
    if s.size and s[0] > 0.0:
        cut = TAU_RANK * max(1.0, float(s[0]))
        rank = int(np.count_nonzero(s > cut))
    else:
        rank = 0
    if rank:
        r_pinv = (vt[:rank].T / s[:rank]) @ u[:, :rank].T
    else:
        r_pinv = np.zeros((z.shape[1], z.shape[0]))
    return QrFactors(q=q, r=r, r_pinv=np.ascontiguousarray(r_pinv), rank=rank)


def pinv_append_row(
    f: QrFactors, z_new: np.ndarray, ws: UpdateWorkspace
) -> tuple[QrFactors, np.ndarray, bool]:
    """Append observation row ``z_new`` to the maintained factorization.

    Returns the grown factors, the Kalman-type gain vector b, and whether
    the new row increased the numerical rank.  The same rotation sweep
    that re-triangularizes ``[r; z]`` is applied to q (augmented by a
    unit row and column) and, via ``ws.sweep``/``ws.sweep_rows``, can be
    applied by the caller to its transformed responses.
    """
    r, q, rp = f.r, f.q, f.r_pinv
    m, d = r.shape
    z = np.asarray(z_new, dtype=float)

    # Rank-one pseudoinverse growth before any rotation is absorbed.
    rz = r @ z
    c = z - rp @ rz
    cn2 = float(c @ c)
    h = z @ rp
    hn2 = float(h @ h)
    if not (math.isfinite(cn2) and math.isfinite(hn2)):
        raise FloatingPointError("non-finite intermediate in row append")
    zn = math.sqrt(float(z @ z))
    rank_increased = math.sqrt(cn2) > TAU_RANK * max(1.0, zn)
    if rank_increased:
        b = c / cn2
    else:
        b = (rp @ h) / (1.0 + hn2)

    sp = np.empty((d, m + 1))
    np.multiply(b[:, None], h[None, :], out=sp[:, :m])
    np.subtract(rp, sp[:, :m], out=sp[:, :m])
    sp[:, m] = b

    if m == 0:
        qn = np.ones((1, 1))
        rn = z[None, :].copy()
        gamma = np.ones((1, 1))
    else:
        # Givens sweep zeroing the appended row against the leading
        # diagonal, run through the compiled factorization-update kernel.
        # The composite rotation is recovered from the grown orthogonal
        # factor (gamma = qn^T [q 0; 0 1]) so the caller can apply the
        # identical sweep to its transformed responses.
        qn, rn = scipy.linalg.qr_insert(
            q, r, z, m, which="row", check_finite=False
        )
        gamma = np.empty((m + 1, m + 1))
        np.matmul(qn[:m].T, q, out=gamma[:, :m])
        gamma[:, m] = qn[m]
    sp = sp @ gamma.T

    ws.c = c
    ws.h = h
    ws.gain_b = b
    ws.sweep = gamma
    ws.sweep_rows = _arange(m + 1)

    fn = QrFactors(q=qn, r=rn, r_pinv=sp, rank=f.rank + (1 if rank_increased else 0))
    return fn, b, rank_increased


def removal_sweep_matrix(g: np.ndarray) -> DenseMatrix:
    """Composite of adjacent-plane rotations sending g to ||g|| e1.

    Built bottom-up (plane (m-2, m-1) first), which makes the product an
    orthogonal upper-Hessenberg matrix with first row g^T/||g||.  The
    closed form below uses tail norms t_k = ||g[k:]||; when a tail
    vanishes exactly the rotation-by-rotation fallback is used instead.
    """
    g = np.asarray(g, dtype=float)
    m = g.size
    if m == 1:
        return np.array([[1.0 if g[0] >= 0.0 else -1.0]])
    t = np.sqrt(np.cumsum((g * g)[::-1])[::-1])
    # Any vanished tail means a rotation in the chain degenerates to the
    # identity; the closed form would still divide by (or take signs
    # from) the zero components, so defer to the explicit loop.
    if np.any(t[1:] <= 0.0):
        return _removal_sweep_loop(g)
    delta = np.zeros((m, m))
    delta[0] = g / t[0]
    if m > 2:
        keep, kk = _removal_constants(m)
        coef = g[: m - 2] / (t[: m - 2] * t[1 : m - 1])
        np.multiply(coef[:, None], g[None, :], out=delta[1 : m - 1])
        delta[1 : m - 1] *= keep
        delta[kk, kk - 1] = -t[kk] / t[kk - 1]
    # Last plane keeps the sign of the final component.
    delta[m - 1, m - 2] = -g[m - 1] / t[m - 2]
    delta[m - 1, m - 1] = g[m - 2] / t[m - 2]
    return delta


def _removal_sweep_loop(g: np.ndarray) -> DenseMatrix:
    """Reference rotation-by-rotation construction of the removal sweep."""
    m = g.size
    delta = np.eye(m)
    v = g.astype(float).copy()
    for k in range(m - 2, -1, -1):
        x, y = v[k], v[k + 1]
        if y == 0.0:
            continue
        rad = math.hypot(x, y)
        c = x / rad
        s = y / rad
        v[k] = rad
        v[k + 1] = 0.0
        top = delta[k].copy()
        delta[k] = c * top + s * delta[k + 1]
        delta[k + 1] = c * delta[k + 1] - s * top
    if v[0] < 0.0:
        # Flip the sign of the leading plane so the image is +||g|| e1.
        delta[0] = -delta[0]
    return delta


def pinv_remove_row(
    f: QrFactors, rotated_e1: np.ndarray, z_old: np.ndarray, ws: UpdateWorkspace
) -> QrFactors:
    """Remove the contribution of one stored row from the factorization.

    ``rotated_e1`` is the orthogonal coordinate of the departing
    observation (the corresponding row of q); ``z_old`` is the effective
    row being removed, i.e. already carrying its forgetting weight.  The
    branch is chosen by the maintained rank: when every stored row is
    independent the removal lowers the rank and the projector formula
    applies; otherwise the rank-preserving rational formula is used,
    guarded by its denominator.

    Raises RangeViolation when the departing row has drifted out of the
    maintained spaces and DowndateBreakdown when the rational denominator
    vanishes; in both cases the caller should rebuild from raw data.
    """
    r, q, rp = f.r, f.q, f.r_pinv
    m, d = r.shape
    g = np.asarray(rotated_e1, dtype=float)
    a = np.asarray(z_old, dtype=float)

    arp = a @ rp
    v = a - arp @ r
    vn2 = float(v @ v)
    an = math.sqrt(float(a @ a))
    if not math.isfinite(vn2):
        raise FloatingPointError("non-finite intermediate in row removal")
    if math.sqrt(vn2) > TAU_RANGE * max(1.0, an):
        raise RangeViolation(
            f"removed row outside the maintained row space (|v| = {math.sqrt(vn2):.3e})"
        )

    k = rp @ g
    if f.rank == m:
        # Every stored row is independent: removal drops the rank by one.
        u = g - r @ k
        un = math.sqrt(float(u @ u))
        if un > TAU_RANGE:
            raise RangeViolation(
                f"rotated basis vector outside the maintained column space (|u| = {un:.3e})"
            )
        kn2 = float(k @ k)
        hn2 = float(arp @ arp)
        if not (kn2 > 0.0 and hn2 > 0.0) or not math.isfinite(kn2 + hn2):
            raise DowndateBreakdown("degenerate projector downdate")
        krp = (k @ rp) / kn2
        rph = rp @ arp
        sc = float(k @ rph) / (kn2 * hn2)
        # Two rank-one corrections stacked as a single rank-two product.
        left = np.empty((d, 2))
        left[:, 0] = k
        left[:, 1] = rph
        right = np.empty((2, m))
        np.subtract(krp, sc * arp, out=right[0])
        np.divide(arp, hn2, out=right[1])
        cpinv = rp - left @ right
        new_rank = f.rank - 1
    else:
        gden = 1.0 - float(a @ k)
        if not math.isfinite(gden) or abs(gden) <= TAU_DENOM:
            raise DowndateBreakdown(f"removal denominator {gden:.3e} below guard")
        cpinv = rp + k[:, None] * (arp / gden)[None, :]
        new_rank = f.rank

    if m == 1:
        qn = np.empty((0, 0))
        rn = np.empty((0, d))
        red = np.empty((0, 1))
    else:
        # Compiled factorization-update kernel retires window row 0.  The
        # reduced sweep mapping the m old orthogonal coordinates onto the
        # m-1 surviving ones is recovered as red = qn^T q[1:], written as
        # one product with a zero row prepended to qn; it annihilates g,
        # has orthonormal rows, and satisfies red @ r = rn, so applying
        # it to the transformed responses performs the same downdate.
        qn, rn = scipy.linalg.qr_delete(q, r, 0, which="row", check_finite=False)
        lift = np.zeros((m, m - 1))
        lift[1:] = qn
        red = lift.T @ q
    pn = cpinv @ red.T

    ws.k = k
    ws.h = arp
    ws.sweep = red
    ws.sweep_rows = _arange(m)

    return QrFactors(q=qn, r=rn, r_pinv=pn, rank=new_rank)


def batch_weighted_minnorm(z: DenseMatrix, y: np.ndarray, lam: float) -> np.ndarray:
    """Minimum-norm weighted least squares by one-shot SVD factorization.

    Rows of ``z`` are ordered oldest first; row ages decay the squared
    residuals geometrically, so row i of n gets weight lam**((n-1-i)/2)
    on both sides.  Solves min ||W(y - z beta)|| picking the minimum
    l2-norm solution, with the same rank cutoff as the recursion.  No
    recursion is involved, which makes this the reference the sliding
    updates are tested against.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"forgetting factor {lam} outside (0, 1]")
    if not (np.isfinite(z).all() and np.isfinite(y).all()):
        raise ValueError("non-finite entries in least-squares data")
    n = z.shape[0]
    wts = lam ** (0.5 * np.arange(n - 1, -1, -1, dtype=float))
    beta, _, _, _ = scipy.linalg.lstsq(
        wts[:, None] * z, wts * y, cond=TAU_RANK, lapack_driver="gelsd"
    )
    return beta


def penrose_residuals(r: DenseMatrix, r_pinv: DenseMatrix) -> dict[str, float]:
    """Max-abs defects of the four Moore-Penrose axioms for (r, r_pinv)."""
    rpr = r @ r_pinv
    prp = r_pinv @ r
    return {
        "reconstruct": float(np.max(np.abs(rpr @ r - r))),
        "weak_inverse": float(np.max(np.abs(prp @ r_pinv - r_pinv))),
        "left_symmetry": float(np.max(np.abs(rpr - rpr.T))),
        "right_symmetry": float(np.max(np.abs(prp - prp.T))),
    }
