"""Target detection at the UL APs: noise models, RCS estimators and test statistics.

Array layout used throughout:

* ``x_d``: DL transmit vectors, ``(M_d, T, N)``.
* local measurement matrices: ``(M_u, T, N, M_d)``; column ``j`` of slot ``t`` at
  AP ``m`` is the echo of DL AP ``j``'s transmission, ``Rdot[m, j] @ x_d[j, t]``.
* global measurement matrices: ``(T, M_u*N, M_u*M_d)``, block diagonal in the locals.
* RCS vectors are AP-major: ``gamma.reshape(M_u, M_d)[m, j]``.

All inverses of covariance or information matrices go through a Cholesky
factorization, which doubles as the positive-definiteness check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .channel import Link
from .errors import NumericError, RankDeficiencyError

_IMAG_RTOL = 1e-9
_MLE_MAX_CONDITION = 1e12


# --------------------------------------------------------------------------- noise


def interference_floor(leak: np.ndarray, x_d: np.ndarray, noise: float) -> np.ndarray:
    """Per-AP, per-slot white-noise level ``sum_j leak[m, j] |x_j[t]|^2 + noise``.

    ``leak`` holds the residual inter-AP plus clutter gains, shape ``(M_u, M_d)``.
    Returns ``(M_u, T)``.
    """
    slot_power = np.sum(np.abs(x_d) ** 2, axis=-1)
    return leak @ slot_power + noise


def local_noise_cov(H_m: np.ndarray, ul_power: np.ndarray, leak_m: np.ndarray,
                    x_d: np.ndarray, noise: float, beta_m: np.ndarray | None = None) -> np.ndarray:
    """Sensing noise covariance seen by one UL AP, shape ``(T, N, N)``.

    ``H_m`` is ``(N, K_u)``. Passing ``beta_m`` replaces the instantaneous user
    covariance by its average over small-scale fading.
    """
    N = H_m.shape[0]
    if beta_m is None:
        users = (H_m * ul_power) @ H_m.conj().T
    else:
        users = np.sum(ul_power * beta_m) * np.eye(N)
    floor = interference_floor(leak_m[None, :], x_d, noise)[0]
    return users[None, :, :] + floor[:, None, None] * np.eye(N)[None, :, :]


def global_noise_cov(H_ul: np.ndarray, ul_power: np.ndarray, leak: np.ndarray,
                     x_d: np.ndarray, noise: float, beta: np.ndarray | None = None) -> np.ndarray:
    """Sensing noise covariance of all UL APs stacked, shape ``(T, M_u*N, M_u*N)``."""
    M_u, N, K_u = H_ul.shape
    if beta is None:
        H = H_ul.reshape(M_u * N, K_u)
        users = (H * ul_power) @ H.conj().T
    else:
        users = np.diag(np.repeat(beta @ ul_power, N)).astype(complex)
    floor = np.repeat(interference_floor(leak, x_d, noise), N, axis=0)
    T = floor.shape[1]
    cov = np.broadcast_to(users, (T, M_u * N, M_u * N)).copy()
    idx = np.arange(M_u * N)
    cov[:, idx, idx] += floor.T
    return cov


def link_noise_covs(link: Link, x_d: np.ndarray, *, statistical_csi: bool = False):
    """Local ``(M_u, T, N, N)`` and global ``(T, M_u*N, M_u*N)`` covariances of a link."""
    leak = link.zeta + link.nu
    beta = link.beta_ul if statistical_csi else None
    glob = global_noise_cov(link.H_ul, link.ul_power, leak, x_d, link.noise_power, beta)
    return local_blocks(glob, link.N), glob


def local_blocks(cov: np.ndarray, n: int) -> np.ndarray:
    """Diagonal ``n x n`` blocks of ``(T, M*n, M*n)`` matrices, as ``(M, T, n, n)``."""
    T, dim, _ = cov.shape
    M = dim // n
    blocks = cov.reshape(T, M, n, M, n)
    return np.stack([blocks[:, m, :, m, :] for m in range(M)])


def block_diagonal_part(cov: np.ndarray, n: int) -> np.ndarray:
    """Keep only the diagonal ``n x n`` blocks of ``(T, M*n, M*n)`` matrices."""
    T, dim, _ = cov.shape
    M = dim // n
    mask = np.kron(np.eye(M, dtype=bool), np.ones((n, n), dtype=bool))
    return np.where(mask, cov, 0.0)


# --------------------------------------------------------------------------- measurements


def measurement_matrices(Rdot: np.ndarray, x_d: np.ndarray) -> np.ndarray:
    """Local echo matrices ``(M_u, T, N, M_d)`` from ``Rdot (M_u, M_d, N, N)``."""
    return np.einsum("mjab,jtb->mtaj", Rdot, x_d)


def global_measurement(local: np.ndarray) -> np.ndarray:
    """Block-diagonal ``(T, M_u*N, M_u*M_d)`` stack of local echo matrices."""
    M_u, T, N, M_d = local.shape
    out = np.zeros((T, M_u * N, M_u * M_d), dtype=local.dtype)
    for m in range(M_u):
        out[:, m * N:(m + 1) * N, m * M_d:(m + 1) * M_d] = local[m]
    return out


def receive_sensing(link: Link, x_d: np.ndarray, s_u: np.ndarray, rng: np.random.Generator, *,
                    target_present: bool = True) -> np.ndarray:
    """Simulate the UL AP observations ``(M_u, T, N)``.

    Residual inter-AP leakage and clutter are drawn as white Gaussian noise with
    the per-slot power the detector assumes, independently in every slot.
    """
    M_u, N, _ = link.H_ul.shape
    T = x_d.shape[1]
    r = np.einsum("mnk,tk->mtn", link.H_ul * np.sqrt(link.ul_power), s_u)
    if target_present:
        r = r + np.einsum("mj,mjab,jtb->mta", link.gamma, link.Rdot, x_d)
    floor = interference_floor(link.zeta + link.nu, x_d, link.noise_power)
    w = rng.standard_normal((M_u, T, N)) + 1j * rng.standard_normal((M_u, T, N))
    return r + np.sqrt(floor / 2.0)[:, :, None] * w


# --------------------------------------------------------------------------- factorizations


def _cholesky(cov: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"{what} is not Hermitian positive definite") from exc


def _posdef_inverse(mat: np.ndarray, what: str) -> np.ndarray:
    mat = 0.5 * (mat + mat.conj().T)
    try:
        factor = scipy.linalg.cho_factor(mat, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"{what} is not Hermitian positive definite",
                           condition_number=float(np.linalg.cond(mat))) from exc
    inv = scipy.linalg.cho_solve(factor, np.eye(mat.shape[0]))
    return 0.5 * (inv + inv.conj().T)


def whitened_statistics(Rdd: np.ndarray, Sigma: np.ndarray, r: np.ndarray | None = None):
    """Data information ``sum_t R^H Sigma^{-1} R`` and score ``sum_t R^H Sigma^{-1} r``.

    ``Rdd`` is ``(T, n, p)``, ``Sigma`` ``(T, n, n)`` and ``r`` either ``(T, n)``
    or ``(T, n, c)`` for ``c`` observation columns sharing the same model.
    """
    L = _cholesky(Sigma, "sensing noise covariance")
    W = np.linalg.solve(L, Rdd)
    info = np.einsum("tnp,tnq->pq", W.conj(), W)
    info = 0.5 * (info + info.conj().T)
    if r is None:
        return info, None
    vector = r.ndim == 2
    rr = r[..., None] if vector else r
    z = np.linalg.solve(L, rr)
    score = np.einsum("tnp,tnc->pc", W.conj(), z)
    return info, (score[:, 0] if vector else score)


# --------------------------------------------------------------------------- estimators


@dataclass(frozen=True)
class RcsEstimate:
    """MAP estimate of the reflection coefficients with its posterior covariance."""

    gamma_hat: np.ndarray
    upsilon: np.ndarray
    score: np.ndarray
    information: np.ndarray


def _map_estimate(Rdd, Sigma, r, sigma_gamma) -> RcsEstimate:
    sigma_gamma = np.asarray(sigma_gamma, dtype=float).ravel()
    if np.any(sigma_gamma <= 0):
        raise NumericError("RCS prior variances must be positive")
    info, score = whitened_statistics(Rdd, Sigma, r)
    upsilon = _posdef_inverse(info + np.diag(1.0 / sigma_gamma), "posterior precision")
    return RcsEstimate(upsilon @ score, upsilon, score, info)


def estimate_rcs_local(Rdd_m: np.ndarray, Sigma_m: np.ndarray, r_m: np.ndarray,
                       sigma_m: np.ndarray) -> RcsEstimate:
    """Per-AP MAP estimate from ``(T, N, M_d)`` echoes and ``(T, N, N)`` covariances."""
    return _map_estimate(Rdd_m, Sigma_m, r_m, sigma_m)


def estimate_rcs_central(Rdd: np.ndarray, Sigma: np.ndarray, r: np.ndarray,
                         sigma_gamma: np.ndarray) -> RcsEstimate:
    """Joint MAP estimate from the stacked observations of all UL APs."""
    return _map_estimate(Rdd, Sigma, r, sigma_gamma)


def llr(estimate: RcsEstimate) -> np.ndarray | float:
    """Test statistic ``score^H gamma_hat``; real up to round-off."""
    value = np.sum(estimate.score.conj() * estimate.gamma_hat, axis=0)
    scale = np.maximum(np.abs(value), np.finfo(float).tiny)
    if np.any(np.abs(value.imag) > _IMAG_RTOL * scale + 1e-300):
        raise NumericError("test statistic has a non-negligible imaginary part")
    return value.real if np.ndim(value) else float(value.real)


local_llr = llr
central_llr = llr


def fuse_llrs(statistics) -> np.ndarray | float:
    """CPU fusion of per-AP statistics by summation."""
    stats = [np.asarray(s, dtype=float) for s in statistics]
    if not stats:
        raise ValueError("at least one AP statistic is required")
    total = np.sum(stats, axis=0)
    return total if np.ndim(total) else float(total)


def distributed_estimates(Rdd_local: np.ndarray, Sigma_local: np.ndarray, r: np.ndarray,
                          sigma: np.ndarray) -> list[RcsEstimate]:
    """Independent per-AP estimates; ``r`` is ``(M_u, T, N[, c])``."""
    return [estimate_rcs_local(Rdd_local[m], Sigma_local[m], r[m], sigma[m])
            for m in range(Rdd_local.shape[0])]


def stack_observations(r: np.ndarray) -> np.ndarray:
    """``(M_u, T, N[, c])`` per-AP observations to ``(T, M_u*N[, c])``."""
    moved = np.moveaxis(r, 0, 1)
    return moved.reshape(moved.shape[0], -1, *moved.shape[3:])


def mle_rcs(Rdd: np.ndarray, Sigma: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Prior-free weighted least-squares estimate.

    Raises ``RankDeficiencyError`` carrying the condition number when the echo
    matrices do not span all reflection coefficients.
    """
    info, score = whitened_statistics(Rdd, Sigma, r)
    cond = float(np.linalg.cond(info)) if info.size else 1.0
    if not np.isfinite(cond) or cond > _MLE_MAX_CONDITION:
        raise RankDeficiencyError(
            f"information matrix is rank deficient (condition number {cond:.3g}); "
            "lengthen the observation window or add receive antennas",
            condition_number=cond)
    factor = scipy.linalg.cho_factor(info, lower=True)
    return scipy.linalg.cho_solve(factor, score)


def mle_llr(Rdd: np.ndarray, Sigma: np.ndarray, r: np.ndarray):
    """GLRT statistic with the prior-free estimate plugged in."""
    info, score = whitened_statistics(Rdd, Sigma, r)
    gamma = mle_rcs(Rdd, Sigma, r)
    value = np.sum(score.conj() * gamma, axis=0)
    return value.real if np.ndim(value) else float(value.real)


# --------------------------------------------------------------------------- decomposition


@dataclass(frozen=True)
class Decomposition:
    """Centralized statistic split into the fused local statistics plus a remainder."""

    T_central: float
    T_local: np.ndarray
    delta_T: float
    T1: np.ndarray
    t2: np.ndarray
    delta1: np.ndarray
    delta2: np.ndarray

    @property
    def residual(self) -> float:
        return abs(self.T_central - (float(np.sum(self.T_local)) + self.delta_T))


def _solve(a, b, what):
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"{what} is singular",
                           condition_number=float(np.linalg.cond(a))) from exc


def decomposition_residual(Rdd_local: np.ndarray, Sigma: np.ndarray, r: np.ndarray,
                      sigma: np.ndarray) -> Decomposition:
    """Split the centralized statistic into local terms plus a cross-AP correction.

    The correction is built from the block-diagonal part ``D`` of ``Sigma`` and
    its off-diagonal remainder ``O``: ``Sigma^{-1} = D^{-1} + S`` with
    ``S = -D^{-1} O Sigma^{-1}``. Only solves against ``D`` and ``Sigma`` are
    used, so ``O`` may be singular.

    ``Rdd_local`` is ``(M_u, T, N, M_d)``, ``Sigma`` is ``(T, M_u*N, M_u*N)``,
    ``r`` is ``(T, M_u*N)`` and ``sigma`` is ``(M_u, M_d)``.
    """
    M_u, T, N, M_d = Rdd_local.shape
    Rdd = global_measurement(Rdd_local)
    diag_part = block_diagonal_part(Sigma, N)
    off_part = Sigma - diag_part
    _cholesky(diag_part, "block-diagonal noise covariance")
    _cholesky(Sigma, "sensing noise covariance")

    D_R = np.linalg.solve(diag_part, Rdd)
    D_r = np.linalg.solve(diag_part, r[..., None])[..., 0]
    S_R = -np.linalg.solve(diag_part, off_part @ np.linalg.solve(Sigma, Rdd))
    S_r = -np.linalg.solve(diag_part, (off_part @ np.linalg.solve(Sigma, r[..., None])))[..., 0]

    RH = Rdd.conj().transpose(0, 2, 1)
    prior_precision = np.diag(1.0 / np.asarray(sigma, dtype=float).ravel())
    T1 = _posdef_inverse(np.sum(RH @ D_R, axis=0) + prior_precision, "block-diagonal precision")
    t2 = np.einsum("tpn,tn->p", RH, D_r)
    X = np.sum(RH @ S_R, axis=0)
    delta2 = np.einsum("tpn,tn->p", RH, S_r)
    eye = np.eye(T1.shape[0])
    delta1 = -T1 @ X @ _solve(eye + T1 @ X, T1, "correction kernel")

    full = delta1 + T1
    delta_T = (t2.conj() @ delta1 @ t2 + t2.conj() @ full @ delta2
               + delta2.conj() @ full @ t2 + delta2.conj() @ full @ delta2)

    central = estimate_rcs_central(Rdd, Sigma, r, sigma)
    Sigma_local = local_blocks(Sigma, N)
    r_local = r.reshape(T, M_u, N).transpose(1, 0, 2)
    local = distributed_estimates(Rdd_local, Sigma_local, r_local, sigma)
    return Decomposition(
        T_central=llr(central),
        T_local=np.array([llr(e) for e in local]),
        delta_T=float(delta_T.real),
        T1=T1, t2=t2, delta1=delta1, delta2=delta2,
    )


# --------------------------------------------------------------------------- bounds


def bcrlb(Rdd: np.ndarray, Sigma: np.ndarray, sigma_gamma: np.ndarray) -> np.ndarray:
    """Bayesian information matrix; its inverse bounds the RCS error covariance."""
    sigma_gamma = np.asarray(sigma_gamma, dtype=float).ravel()
    if Rdd.shape[0] == 0:
        return np.diag(1.0 / sigma_gamma).astype(complex)
    info, _ = whitened_statistics(Rdd, Sigma)
    return info + np.diag(1.0 / sigma_gamma)


def linear_estimator_mse(gains: np.ndarray, Rdd: np.ndarray, Sigma: np.ndarray,
                         sigma_gamma: np.ndarray) -> np.ndarray:
    """Error covariance of ``gamma_hat = sum_t gains[t] r[t]`` under the Gaussian model."""
    bias = np.sum(gains @ Rdd, axis=0) - np.eye(gains.shape[1])
    prior = np.diag(np.asarray(sigma_gamma, dtype=float).ravel())
    noise = np.sum(gains @ Sigma @ gains.conj().transpose(0, 2, 1), axis=0)
    mse = bias @ prior @ bias.conj().T + noise
    return 0.5 * (mse + mse.conj().T)


def central_gains(Rdd: np.ndarray, Sigma: np.ndarray, sigma_gamma: np.ndarray) -> np.ndarray:
    """Per-slot linear maps of the centralized MAP estimator, ``(T, p, n)``."""
    est_info, _ = whitened_statistics(Rdd, Sigma)
    upsilon = _posdef_inverse(est_info + np.diag(1.0 / np.ravel(sigma_gamma)), "posterior precision")
    sigma_inv_R = np.linalg.solve(Sigma, Rdd)
    return upsilon @ sigma_inv_R.conj().transpose(0, 2, 1)


@dataclass(frozen=True)
class MseGap:
    """Error covariances of the distributed and centralized estimators.

    ``upsilon_dist`` is the block-diagonal collection of per-AP posterior
    covariances. ``mse_dist`` is the full error covariance of the concatenated
    local estimates, whose diagonal blocks equal ``upsilon_dist`` and whose
    off-diagonal blocks come from UL users heard by several APs.
    """

    upsilon_dist: np.ndarray
    mse_dist: np.ndarray
    mse_central: np.ndarray

    @property
    def delta_mse(self) -> np.ndarray:
        return self.mse_dist - self.mse_central

    @property
    def delta_blockdiag(self) -> np.ndarray:
        return self.upsilon_dist - self.mse_central

    @property
    def trace_gap(self) -> float:
        return float(np.trace(self.upsilon_dist).real - np.trace(self.mse_central).real)


def dist_mse_gap(Rdd_local: np.ndarray, Sigma: np.ndarray, sigma: np.ndarray) -> MseGap:
    """Compare the distributed estimator's error covariance with the BCRLB."""
    M_u, T, N, M_d = Rdd_local.shape
    Sigma_local = local_blocks(Sigma, N)
    p = M_u * M_d
    gains = np.zeros((T, p, M_u * N), dtype=complex)
    upsilon_dist = np.zeros((p, p), dtype=complex)
    for m in range(M_u):
        rows, cols = slice(m * M_d, (m + 1) * M_d), slice(m * N, (m + 1) * N)
        gains[:, rows, cols] = central_gains(Rdd_local[m], Sigma_local[m], sigma[m])
        info, _ = whitened_statistics(Rdd_local[m], Sigma_local[m])
        upsilon_dist[rows, rows] = _posdef_inverse(info + np.diag(1.0 / sigma[m]), "local precision")
    Rdd = global_measurement(Rdd_local)
    mse_dist = linear_estimator_mse(gains, Rdd, Sigma, sigma)
    mse_central = _posdef_inverse(bcrlb(Rdd, Sigma, sigma), "Bayesian information")
    return MseGap(upsilon_dist, mse_dist, mse_central)


# --------------------------------------------------------------------------- thresholds


@dataclass(frozen=True)
class Threshold:
    value: float
    pfa: float
    samples: int

    @property
    def undersampled(self) -> bool:
        """True when fewer than ``1/pfa`` null samples back the quantile."""
        return self.samples * self.pfa < 1.0


def calibrate_threshold(h0_statistics, pfa: float) -> Threshold:
    """Empirical ``(1 - pfa)`` quantile of statistics collected without a target."""
    stats = np.asarray(h0_statistics, dtype=float).ravel()
    if stats.size == 0:
        raise ValueError("no null-hypothesis statistics supplied")
    if not 0.0 < pfa <= 1.0:
        raise ValueError("false-alarm probability must lie in (0, 1]")
    value = float(np.quantile(stats, 1.0 - pfa, method="inverted_cdf"))
    return Threshold(value=value, pfa=pfa, samples=stats.size)


def detection_rate(h1_statistics, threshold: Threshold) -> tuple[float, float | None]:
    """Fraction of target-present statistics above the threshold and its standard error."""
    stats = np.asarray(h1_statistics, dtype=float).ravel()
    p = float(np.mean(stats > threshold.value))
    se = float(np.sqrt(p * (1.0 - p) / stats.size)) if stats.size > 1 else None
    return p, se
