"""Kernels: rotations, QR, pseudoinverse append/remove, batch oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrls.linalg import (
    DowndateBreakdown,
    GivensRotation,
    QrFactors,
    RangeViolation,
    UpdateWorkspace,
    apply_rotation_left,
    apply_rotation_right,
    batch_weighted_minnorm,
    givens_from,
    penrose_residuals,
    pinv_append_row,
    pinv_remove_row,
    qr_decompose,
    removal_sweep_matrix,
    _removal_sweep_loop,
)

RNG = np.random.default_rng(20240817)


def assert_penrose(r, r_pinv, tol=1e-8):
    res = penrose_residuals(r, r_pinv)
    worst = max(res.values())
    assert worst <= tol, f"Penrose defect {worst:.3e} ({res})"


# ---------------------------------------------------------------------
# Givens rotations
# ---------------------------------------------------------------------


def test_givens_three_four_five():
    g = givens_from(3.0, 4.0)
    assert g.c == pytest.approx(0.6)
    assert g.s == pytest.approx(0.8)
    v = np.array([[3.0], [4.0]])
    apply_rotation_left(v, g)
    assert v[:, 0] == pytest.approx([5.0, 0.0])


def test_givens_already_zeroed_is_identity():
    g = givens_from(2.5, 0.0)
    assert (g.c, g.s) == (1.0, 0.0)


def test_givens_zero_zero_convention():
    g = givens_from(0.0, 0.0)
    assert (g.c, g.s) == (1.0, 0.0)


def test_rotation_left_quarter_turn():
    m = np.eye(2)
    apply_rotation_left(m, GivensRotation(0, 1, 0.0, 1.0))
    assert m == pytest.approx(np.array([[0.0, 1.0], [-1.0, 0.0]]))


def test_rotation_left_identity_noop():
    m = RNG.standard_normal((4, 3))
    before = m.copy()
    apply_rotation_left(m, GivensRotation(1, 3, 1.0, 0.0))
    assert m == pytest.approx(before)


def test_rotation_left_bad_plane_raises():
    with pytest.raises(IndexError):
        apply_rotation_left(np.eye(2), GivensRotation(0, 5, 1.0, 0.0))


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_rotation_preserves_frobenius_norm(seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((4, 3))
    i, j = rng.choice(4, size=2, replace=False)
    g = givens_from(rng.standard_normal(), rng.standard_normal(), int(i), int(j))
    norm = np.linalg.norm(m)
    apply_rotation_left(m, g)
    assert np.linalg.norm(m) == pytest.approx(norm, rel=1e-10)


def test_rotation_right_transposes_left_action():
    # (G A)^+ = A^+ G^T: rotating rows of A means rotating columns of A^+.
    a = RNG.standard_normal((4, 6))
    ap = np.linalg.pinv(a)
    g = givens_from(0.3, -1.2, 1, 3)
    ga = apply_rotation_left(a.copy(), g)
    apg = apply_rotation_right(ap.copy(), g)
    assert apg == pytest.approx(np.linalg.pinv(ga), abs=1e-10)


# ---------------------------------------------------------------------
# Batch factorization
# ---------------------------------------------------------------------


def test_qr_identity():
    f = qr_decompose(np.eye(3))
    assert abs(f.q) == pytest.approx(np.eye(3))  # column signs are free
    assert f.q @ f.r == pytest.approx(np.eye(3), abs=1e-12)
    assert f.r_pinv @ f.r == pytest.approx(np.eye(3), abs=1e-12)
    assert f.rank == 3


def test_qr_zero_matrix():
    f = qr_decompose(np.zeros((2, 2)))
    assert f.r == pytest.approx(np.zeros((2, 2)))
    assert f.r_pinv == pytest.approx(np.zeros((2, 2)))
    assert f.rank == 0


def test_qr_random_wide():
    z = RNG.standard_normal((5, 8))
    f = qr_decompose(z)
    assert f.q @ f.r == pytest.approx(z, abs=1e-8)
    assert f.q.T @ f.q == pytest.approx(np.eye(5), abs=1e-10)
    assert_penrose(f.r, f.r_pinv)
    # Upper-trapezoidal zeros below the diagonal.
    assert np.max(np.abs(np.tril(f.r, k=-1))) <= 1e-10


def test_qr_rejects_non_finite():
    bad = np.array([[1.0, np.nan], [0.0, 1.0]])
    with pytest.raises(ValueError):
        qr_decompose(bad)


# ---------------------------------------------------------------------
# Row append
# ---------------------------------------------------------------------


def test_append_dependent_zero_row():
    f = qr_decompose(np.array([[1.0]]))
    fn, gain, up = pinv_append_row(f, np.array([0.0]), UpdateWorkspace())
    assert not up
    assert gain == pytest.approx([0.0])
    assert fn.r_pinv == pytest.approx(np.linalg.pinv(fn.r), abs=1e-12)
    assert fn.q @ fn.r == pytest.approx(np.array([[1.0], [0.0]]), abs=1e-12)


def test_append_independent_orthogonal_row():
    f = qr_decompose(np.array([[1.0, 0.0]]))
    ws = UpdateWorkspace()
    fn, gain, up = pinv_append_row(f, np.array([0.0, 1.0]), ws)
    assert up
    assert ws.c == pytest.approx([0.0, 1.0])
    assert fn.q @ fn.r == pytest.approx(np.eye(2), abs=1e-12)
    assert fn.r_pinv @ fn.q.T == pytest.approx(np.eye(2), abs=1e-12)


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_append_rejects_non_finite():
    f = qr_decompose(np.eye(2))
    with pytest.raises(FloatingPointError):
        pinv_append_row(f, np.array([np.inf, 0.0]), UpdateWorkspace())


@pytest.mark.parametrize("shape", [(3, 6), (6, 6), (8, 5)])
def test_append_matches_batch_pinv(shape):
    n, d = shape
    for trial in range(25):
        rng = np.random.default_rng(1000 + 17 * trial + n * 100 + d)
        w = rng.standard_normal((n, d))
        z = rng.standard_normal(d)
        if trial % 3 == 0 and n > 1:
            z = w[0] * 1.7 - w[-1]  # force the dependent branch for d >= n
        f = qr_decompose(w)
        fn, _, _ = pinv_append_row(f, z, UpdateWorkspace())
        stacked = np.vstack([w, z])
        assert fn.q @ fn.r == pytest.approx(stacked, abs=1e-9)
        assert fn.q.T @ fn.q == pytest.approx(np.eye(n + 1), abs=1e-10)
        ref = np.linalg.pinv(fn.r, rcond=1e-12)
        scale = max(1.0, np.max(np.abs(ref)))
        assert np.max(np.abs(fn.r_pinv - ref)) / scale <= 1e-9
        assert_penrose(fn.r, fn.r_pinv)


def test_append_sweep_advances_rhs():
    # The recovered composite sweep must map [old transformed rhs; y]
    # exactly as the re-triangularizing rotations do, i.e. the rotated
    # responses always equal qn^T applied to the raw stacked targets.
    rng = np.random.default_rng(7)
    w = rng.standard_normal((5, 9))
    y = rng.standard_normal(5)
    f = qr_decompose(w)
    rhs = f.q.T @ y
    ws = UpdateWorkspace()
    z, y_new = rng.standard_normal(9), 0.37
    fn, _, _ = pinv_append_row(f, z, ws)
    rotated = ws.sweep @ np.append(rhs, y_new)
    assert rotated == pytest.approx(fn.q.T @ np.append(y, y_new), abs=1e-10)
    assert ws.sweep @ ws.sweep.T == pytest.approx(np.eye(6), abs=1e-12)


# ---------------------------------------------------------------------
# Removal sweep reference utilities
# ---------------------------------------------------------------------


@given(st.integers(0, 10_000), st.integers(1, 9))
@settings(max_examples=60, deadline=None)
def test_removal_sweep_closed_form_matches_loop(seed, m):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(m)
    if seed % 4 == 0 and m > 2:
        g[-(m // 2):] = 0.0  # exercise the vanished-tail fallback
    closed = removal_sweep_matrix(g)
    loop = _removal_sweep_loop(g)
    assert closed == pytest.approx(loop, abs=1e-12)
    assert closed @ closed.T == pytest.approx(np.eye(m), abs=1e-12)
    image = closed @ g
    assert image[0] == pytest.approx(np.linalg.norm(g), abs=1e-12)
    if m > 1:
        assert np.max(np.abs(image[1:])) <= 1e-12 * max(1.0, np.linalg.norm(g))


# ---------------------------------------------------------------------
# Row removal
# ---------------------------------------------------------------------


def test_remove_first_of_stacked_basis_rows():
    f = qr_decompose(np.eye(2))
    fn = pinv_remove_row(f, f.q[0].copy(), np.array([1.0, 0.0]), UpdateWorkspace())
    remainder = np.array([[0.0, 1.0]])
    assert fn.q @ fn.r == pytest.approx(remainder, abs=1e-12)
    assert fn.r_pinv == pytest.approx(np.linalg.pinv(fn.r), abs=1e-10)


def test_append_remove_round_trip_is_identity():
    rng = np.random.default_rng(11)
    w = rng.standard_normal((4, 10))
    f = qr_decompose(w)
    z = rng.standard_normal(10)
    grown, _, _ = pinv_append_row(f, z, UpdateWorkspace())
    back = pinv_remove_row(grown, grown.q[0].copy(), w[0], UpdateWorkspace())
    shifted = np.vstack([w[1:], z])
    assert back.q @ back.r == pytest.approx(shifted, abs=1e-8)
    ref = np.linalg.pinv(back.r, rcond=1e-12)
    assert np.max(np.abs(back.r_pinv - ref)) <= 1e-8 * max(1.0, np.max(np.abs(ref)))


def test_append_copy_of_oldest_then_remove_preserves_state():
    # Appending a duplicate of the oldest row and then retiring the
    # oldest leaves the same multiset of rows, so the Gramian and the
    # row-space/column-space projectors must return exactly; the window
    # pseudoinverse returns up to the row permutation.
    rng = np.random.default_rng(12)
    w = rng.standard_normal((5, 9))
    f = qr_decompose(w)
    gram = f.r.T @ f.r
    proj = f.r_pinv @ f.r
    grown, _, _ = pinv_append_row(f, w[0], UpdateWorkspace())
    back = pinv_remove_row(grown, grown.q[0].copy(), w[0], UpdateWorkspace())
    assert back.r.T @ back.r == pytest.approx(gram, abs=1e-8)
    assert back.r_pinv @ back.r == pytest.approx(proj, abs=1e-8)
    rolled = np.vstack([w[1:], w[0]])
    full_pinv = back.r_pinv @ back.q.T
    assert full_pinv == pytest.approx(np.linalg.pinv(rolled), abs=1e-8)


@pytest.mark.parametrize("shape", [(4, 10), (6, 6), (9, 5)])
def test_remove_matches_batch_pinv(shape):
    n, d = shape
    for trial in range(25):
        rng = np.random.default_rng(2000 + 13 * trial + n * 100 + d)
        w = rng.standard_normal((n, d))
        f = qr_decompose(w)
        fn = pinv_remove_row(f, f.q[0].copy(), w[0], UpdateWorkspace())
        assert fn.q @ fn.r == pytest.approx(w[1:], abs=1e-8)
        ref = np.linalg.pinv(fn.r, rcond=1e-12)
        scale = max(1.0, np.max(np.abs(ref)))
        assert np.max(np.abs(fn.r_pinv - ref)) / scale <= 1e-8
        assert_penrose(fn.r, fn.r_pinv)


def test_remove_sweep_advances_rhs():
    rng = np.random.default_rng(23)
    w = rng.standard_normal((5, 12))
    y = rng.standard_normal(5)
    f = qr_decompose(w)
    rhs = f.q.T @ y
    ws = UpdateWorkspace()
    fn = pinv_remove_row(f, f.q[0].copy(), w[0], ws)
    assert ws.sweep.shape == (4, 5)
    assert ws.sweep @ ws.sweep.T == pytest.approx(np.eye(4), abs=1e-12)
    assert ws.sweep @ rhs == pytest.approx(fn.q.T @ y[1:], abs=1e-10)


def test_remove_foreign_row_raises_range_violation():
    f = qr_decompose(np.eye(3, 7))
    alien = np.zeros(7)
    alien[6] = 1.0  # not in the span of the stored rows
    with pytest.raises(RangeViolation):
        pinv_remove_row(f, f.q[0].copy(), alien, UpdateWorkspace())


def test_remove_denominator_guard_trips():
    # A duplicated row keeps the rank below the row count, forcing the
    # rational branch; removing along a direction with a @ (R^+ g) = 1
    # exactly is the knife edge the guard must reject.
    w = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    f = qr_decompose(w)
    assert f.rank == 2
    with pytest.raises((DowndateBreakdown, RangeViolation)):
        # g chosen as the image of the removed row through Q so that the
        # denominator collapses to ~0 for this rank-deficient stack.
        pinv_remove_row(f, f.q[0].copy(), 2.0 * w[0], UpdateWorkspace())


# ---------------------------------------------------------------------
# Mixed long-run drift
# ---------------------------------------------------------------------


def test_orthogonality_drift_over_long_mixed_run():
    rng = np.random.default_rng(5150)
    n, d = 6, 13
    w = [rng.standard_normal(d) for _ in range(n)]
    f = qr_decompose(np.asarray(w))
    ws = UpdateWorkspace()
    for _ in range(1500):
        z = rng.standard_normal(d)
        f, _, _ = pinv_append_row(f, z, ws)
        w.append(z)
        f = pinv_remove_row(f, f.q[0].copy(), w.pop(0), ws)
    assert np.max(np.abs(f.q.T @ f.q - np.eye(n))) <= 1e-6
    assert f.q @ f.r == pytest.approx(np.asarray(w), abs=1e-6)
    assert_penrose(f.r, f.r_pinv, tol=1e-6)


# ---------------------------------------------------------------------
# Batch weighted minimum-norm oracle
# ---------------------------------------------------------------------


def test_minnorm_identity_design():
    y = np.array([3.0, -1.0, 0.5])
    assert batch_weighted_minnorm(np.eye(3), y, 1.0) == pytest.approx(y)


def test_minnorm_duplicate_columns_split_weight():
    z = np.array([[1.0, 1.0], [2.0, 2.0]])
    beta = batch_weighted_minnorm(z, np.array([2.0, 4.0]), 1.0)
    assert beta[0] == pytest.approx(beta[1])
    assert z @ beta == pytest.approx([2.0, 4.0], abs=1e-12)


def test_minnorm_interpolates_and_avoids_null_space():
    rng = np.random.default_rng(99)
    z = rng.standard_normal((20, 64))
    y = rng.standard_normal(20)
    beta = batch_weighted_minnorm(z, y, 0.9)
    wts = 0.9 ** (0.5 * np.arange(19, -1, -1))
    # Interpolation: D > N makes the weighted residual vanish.
    assert np.linalg.norm(wts * (z @ beta - y)) <= 1e-9
    # Minimum norm: beta is orthogonal to the null space of z.
    _, _, vt = np.linalg.svd(z, full_matrices=True)
    null = vt[20:]
    assert np.max(np.abs(null @ beta)) <= 1e-10


def test_minnorm_two_independent_solvers_agree():
    rng = np.random.default_rng(4242)
    for n, d in [(12, 5), (10, 10), (8, 30)]:
        z = rng.standard_normal((n, d))
        y = rng.standard_normal(n)
        for lam in (1.0, 0.9):
            beta = batch_weighted_minnorm(z, y, lam)
            wts = lam ** (0.5 * np.arange(n - 1, -1, -1))
            ref = np.linalg.pinv(wts[:, None] * z, rcond=1e-12) @ (wts * y)
            assert beta == pytest.approx(ref, abs=1e-9)


def test_minnorm_validates_inputs():
    with pytest.raises(ValueError):
        batch_weighted_minnorm(np.eye(2), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        batch_weighted_minnorm(np.full((2, 2), np.nan), np.zeros(2), 1.0)


def test_penrose_residuals_flag_corruption():
    z = RNG.standard_normal((4, 7))
    f = qr_decompose(z)
    clean = penrose_residuals(f.r, f.r_pinv)
    assert max(clean.values()) <= 1e-10
    dirty = penrose_residuals(f.r, f.r_pinv + 0.01)
    assert max(dirty.values()) > 1e-4
