"""Comparison models for the windowed QR filter.

Three baselines, each stepping through the same prequential protocol as
the main filter but maintaining different state:

``CovRlsState``
    Covariance-form RLS: maintains the Gram matrix of the weighted
    window and its (pseudo)inverse by rank-one update and downdate
    formulas (Sherman-Morrison in the full-rank regime, the Campbell &
    Meyer generalized-inverse identities when the Gram matrix is
    singular).  This is the unstable reference: in the overparameterized
    regime every window slide pairs a rank-increasing update with a
    rank-decreasing downdate whose denominator sits exactly on a zero
    knife edge, so rounding error grows multiplicatively.  The state is
    never clamped, symmetrized or restarted; symmetry drift and
    divergence events are recorded instead.

``QrdRlsState``
    Windowed linear QRD-RLS over raw lag inputs: a ridge-seeded
    triangular factor advanced by Givens rotations on append and by
    LINPACK-style hyperbolic-free downdating on removal (Golub & Van
    Loan sec. 6.5.4).  Stable, but linear in the inputs.

``KrlsState``
    Sliding-window kernel RLS with an RBF kernel: a ring dictionary of
    at most W points and a direct regularized solve of the kernel system
    each step.  Stable and nonlinear, but cubic in the window length.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .linalg import TAU_RANK, DowndateBreakdown
from .rls import StepOutput, age_weights

__all__ = ["CovRlsState", "QrdRlsState", "KrlsState", "RIDGE_DEFAULT", "rbf_kernel"]

# Diagonal loading shared by the QRD and kernel baselines.
RIDGE_DEFAULT = 1e-2

# Scale-aware thresholds for the covariance branch tests.  Looser than
# the QR filter's tau_rank on purpose: the quantities tested here are
# contaminated by the accumulated error of the maintained pseudoinverse
# itself, and a hair-trigger test would misbranch long before the
# arithmetic actually breaks down.
TAU_COV = 1e-8


def _window_condition(zmat: np.ndarray) -> float:
    """Condition number of a materialized weighted window.

    Same semantics as the filter's diagnostics: ratio of the largest
    singular value to the smallest one above the rank cutoff, with
    ``inf`` as the sentinel for a numerically rank-deficient window.
    """
    s = np.linalg.svd(zmat, compute_uv=False)
    if s[0] == 0.0:
        return math.inf
    keep = s > TAU_RANK * s[0]
    if int(keep.sum()) < min(zmat.shape):
        return math.inf
    return float(s[0] / s[keep][-1])


# ---------------------------------------------------------------------
# Covariance-form RLS
# ---------------------------------------------------------------------


@dataclass
class CovRlsState:
    """Rank-one covariance RLS; intentionally fragile, drift is data."""

    gram: np.ndarray  # A = Z^T diag(lam^age) Z over the window
    gram_pinv: np.ndarray  # maintained A^+ (or A^-1 when full rank)
    xty: np.ndarray  # accumulated weighted Z^T y
    beta: np.ndarray
    window_z: deque
    window_y: deque
    lam: float
    window_len: int
    feature_dim: int
    rank: int
    step_count: int = 0
    divergence_count: int = 0
    diverged: bool = False
    symmetry_drift: float = 0.0

    @classmethod
    def init(cls, z0: np.ndarray, y0: np.ndarray, lam: float) -> "CovRlsState":
        """Batch-build the Gram state from an initial window (oldest first)."""
        z0 = np.atleast_2d(np.asarray(z0, dtype=float))
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
        n, d = z0.shape
        wts = age_weights(n, lam) ** 2  # full lam^age row weights
        gram = (z0 * wts[:, None]).T @ z0
        xty = z0.T @ (wts * y0)
        pinv = np.linalg.pinv(gram, rcond=1e-12)
        s = np.linalg.svd(gram, compute_uv=False)
        rank = int((s > 1e-12 * max(1.0, s[0])).sum())
        return cls(
            gram=gram,
            gram_pinv=pinv,
            xty=xty,
            beta=pinv @ xty,
            window_z=deque(map(np.copy, z0)),
            window_y=deque(y0.tolist()),
            lam=float(lam),
            window_len=n,
            feature_dim=d,
            rank=rank,
        )

    def predict(self, z: np.ndarray) -> float:
        if self.diverged:
            return math.nan
        return float(np.asarray(z, dtype=float) @ self.beta)

    def _add_rank_one(self, x: np.ndarray) -> None:
        """Advance A^+ for A <- A + x x^T."""
        p = self.gram_pinv
        k = p @ x
        if self.rank < self.feature_dim:
            c = x - self.gram @ k
            cn2 = float(c @ c)
            if math.sqrt(cn2) > TAU_COV * max(1.0, float(np.linalg.norm(x))):
                # Rank-increasing pseudoinverse update (Campbell & Meyer).
                kc = np.outer(k, c) / cn2
                self.gram_pinv = (
                    p - kc - kc.T + ((1.0 + x @ k) / cn2**2) * np.outer(c, c)
                )
                self.rank += 1
                return
        # Direction already represented: plain Sherman-Morrison.
        self.gram_pinv = p - np.outer(k, k) / (1.0 + x @ k)

    def _remove_rank_one(self, x: np.ndarray) -> None:
        """Advance A^+ for A <- A - x x^T."""
        p = self.gram_pinv
        k = p @ x
        gamma = 1.0 - float(x @ k)
        if abs(gamma) > TAU_COV:
            self.gram_pinv = p + np.outer(k, k) / gamma
            return
        # gamma on the zero knife edge: the removal takes a direction out
        # of the range space entirely (rank-decreasing downdate).
        kn2 = float(k @ k)
        if kn2 > 0.0:
            proj = np.eye(self.feature_dim) - np.outer(k, k) / kn2
            self.gram_pinv = proj @ p @ proj
        self.rank -= 1

    def step(self, z: np.ndarray, y: float) -> StepOutput:
        """Predict, update, downdate; one window slide."""
        z = np.asarray(z, dtype=float)
        y = float(y)
        pred = self.predict(z)
        self.window_z.append(z.copy())
        self.window_y.append(y)
        if not self.diverged:
            if self.lam != 1.0:
                self.gram *= self.lam
                self.gram_pinv /= self.lam
                self.xty *= self.lam
            self._add_rank_one(z)
            self.gram += np.outer(z, z)
            self.xty += z * y
        if len(self.window_y) > self.window_len:
            z_old = self.window_z.popleft()
            y_old = self.window_y.popleft()
            if not self.diverged:
                wn = self.lam ** self.window_len
                x_eff = math.sqrt(wn) * z_old
                self._remove_rank_one(x_eff)
                self.gram -= np.outer(x_eff, x_eff)
                self.xty -= wn * z_old * y_old
        if not self.diverged:
            self.beta = self.gram_pinv @ self.xty
            self.symmetry_drift = float(
                np.max(np.abs(self.gram_pinv - self.gram_pinv.T))
            )
            if not (
                np.all(np.isfinite(self.beta))
                and np.isfinite(self.symmetry_drift)
            ):
                self.divergence_count += 1
                self.diverged = True
        self.step_count += 1
        if self.diverged:
            return StepOutput(pred, y - pred, math.nan, math.nan)
        zmat = np.asarray(self.window_z) * age_weights(self.window_len, self.lam)[:, None]
        train = float(np.mean(np.abs(np.asarray(self.window_y) - np.asarray(self.window_z) @ self.beta)))
        return StepOutput(pred, y - pred, train, _window_condition(zmat))


# ---------------------------------------------------------------------
# Windowed linear QRD-RLS
# ---------------------------------------------------------------------


@dataclass
class QrdRlsState:
    """Sliding-window least squares on raw lags via a triangular factor.

    The factor satisfies R^T R = delta I + X^T X over the current window
    and R^T d = X^T y, so back-substitution yields the ridge solution.
    The seeded delta I never leaves: only data rows are downdated.
    """

    r: np.ndarray  # L x L upper triangular
    rhs: np.ndarray  # rotated right-hand side, length L
    window_x: deque
    window_y: deque
    window: int
    ridge: float
    lags: int
    step_count: int = 0

    @classmethod
    def init(cls, lags: int, window: int, ridge: float = RIDGE_DEFAULT) -> "QrdRlsState":
        if lags > window:
            raise ValueError(f"need window >= lags, got window={window} lags={lags}")
        if ridge <= 0.0:
            raise ValueError("ridge must be positive (it guarantees solvability)")
        return cls(
            r=math.sqrt(ridge) * np.eye(lags),
            rhs=np.zeros(lags),
            window_x=deque(),
            window_y=deque(),
            window=int(window),
            ridge=float(ridge),
            lags=int(lags),
        )

    def coefficients(self) -> np.ndarray:
        """Current ridge solution by back-substitution."""
        return scipy.linalg.solve_triangular(self.r, self.rhs)

    def predict(self, x: np.ndarray) -> float:
        return float(np.asarray(x, dtype=float) @ self.coefficients())

    def _append(self, x: np.ndarray, y: float) -> None:
        # Rotate the new row into the factor; the rhs rides along as an
        # extra column so one sweep advances both.
        ell = self.lags
        m = np.empty((ell + 1, ell + 1))
        m[:ell, :ell] = self.r
        m[:ell, ell] = self.rhs
        m[ell, :ell] = x
        m[ell, ell] = y
        for i in range(ell):
            xi, xj = m[i, i], m[ell, i]
            h = math.hypot(xi, xj)
            if h == 0.0:
                continue
            c, s = xi / h, xj / h
            top = c * m[i] + s * m[ell]
            m[ell] = -s * m[i] + c * m[ell]
            m[i] = top
            m[ell, i] = 0.0
        self.r = m[:ell, :ell]
        self.rhs = m[:ell, ell]

    def _downdate(self, x: np.ndarray, y: float) -> None:
        # LINPACK-style removal: after solving R^T a = x the rotations
        # that map (a, alpha) to the last unit vector also map the
        # bordered factor back to the one of the shrunken window.
        ell = self.lags
        a = scipy.linalg.solve_triangular(self.r.T, x, lower=True)
        alpha_sq = 1.0 - float(a @ a)
        if alpha_sq <= 0.0:
            raise DowndateBreakdown(
                f"downdate lost positive definiteness (1 - |a|^2 = {alpha_sq:.3e}); "
                "the ridge seed should prevent this"
            )
        alpha = math.sqrt(alpha_sq)
        rho = (y - float(a @ self.rhs)) / alpha
        m = np.zeros((ell + 1, ell + 1))
        m[:ell, :ell] = self.r
        m[:ell, ell] = self.rhs
        m[ell, ell] = rho
        acc = alpha
        for k in range(ell - 1, -1, -1):
            h = math.hypot(acc, a[k])
            c, s = acc / h, -a[k] / h
            top = c * m[k] + s * m[ell]
            m[ell] = -s * m[k] + c * m[ell]
            m[k] = top
            acc = h
        self.r = m[:ell, :ell]
        self.rhs = m[:ell, ell]

    def step(self, x: np.ndarray, y: float) -> StepOutput:
        x = np.asarray(x, dtype=float)
        y = float(y)
        if x.shape != (self.lags,):
            raise ValueError(f"expected lag vector of length {self.lags}, got shape {x.shape}")
        pred = self.predict(x)
        self._append(x, y)
        self.window_x.append(x.copy())
        self.window_y.append(y)
        if len(self.window_y) > self.window:
            self._downdate(self.window_x.popleft(), self.window_y.popleft())
        beta = self.coefficients()
        xmat = np.asarray(self.window_x)
        yvec = np.asarray(self.window_y)
        train = float(np.mean(np.abs(yvec - xmat @ beta)))
        s = np.linalg.svd(self.r, compute_uv=False)
        self.step_count += 1
        return StepOutput(pred, y - pred, train, float(s[0] / s[-1]))


# ---------------------------------------------------------------------
# Sliding-window kernel RLS
# ---------------------------------------------------------------------


def rbf_kernel(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian kernel exp(-|a-b|^2 / (2 sigma^2)), rows of a vs rows of b.

    Matches the kernel the random feature map approximates, so a tuned
    bandwidth transfers between the kernel and feature-space models.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * bandwidth**2))


@dataclass
class KrlsState:
    """Dictionary kernel ridge regression over a sliding window."""

    dict_x: deque
    dict_y: deque
    kmat: np.ndarray  # kernel matrix of the current dictionary
    alpha: np.ndarray  # dual coefficients
    bandwidth: float
    ridge: float
    window: int
    step_count: int = 0

    @classmethod
    def init(cls, bandwidth: float, window: int, ridge: float = RIDGE_DEFAULT) -> "KrlsState":
        if bandwidth <= 0.0 or window < 1:
            raise ValueError("need bandwidth > 0 and window >= 1")
        return cls(
            dict_x=deque(),
            dict_y=deque(),
            kmat=np.zeros((0, 0)),
            alpha=np.zeros(0),
            bandwidth=float(bandwidth),
            ridge=float(ridge),
            window=int(window),
        )

    def predict(self, x: np.ndarray) -> float:
        if len(self.dict_y) == 0:
            return 0.0
        kvec = rbf_kernel(x, np.asarray(self.dict_x), self.bandwidth)[0]
        return float(kvec @ self.alpha)

    def step(self, x: np.ndarray, y: float) -> StepOutput:
        x = np.asarray(x, dtype=float)
        y = float(y)
        pred = self.predict(x)
        if len(self.dict_y) == self.window:
            self.dict_x.popleft()
            self.dict_y.popleft()
            self.kmat = self.kmat[1:, 1:]
        if len(self.dict_y) > 0:
            kvec = rbf_kernel(x, np.asarray(self.dict_x), self.bandwidth)[0]
        else:
            kvec = np.zeros(0)
        n = self.kmat.shape[0]
        grown = np.empty((n + 1, n + 1))
        grown[:n, :n] = self.kmat
        grown[n, :n] = kvec
        grown[:n, n] = kvec
        grown[n, n] = 1.0
        self.kmat = grown
        self.dict_x.append(x.copy())
        self.dict_y.append(y)
        yvec = np.asarray(self.dict_y)
        cf = scipy.linalg.cho_factor(
            self.kmat + self.ridge * np.eye(n + 1), lower=True
        )
        self.alpha = scipy.linalg.cho_solve(cf, yvec)
        train = float(np.mean(np.abs(yvec - self.kmat @ self.alpha)))
        self.step_count += 1
        # Condition tracking is skipped: an eigendecomposition of the
        # kernel matrix every step would dominate the runtime being
        # measured against this baseline.
        return StepOutput(pred, y - pred, train, math.nan)
