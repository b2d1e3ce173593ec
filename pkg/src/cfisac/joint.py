"""Joint LMMSE estimation of UL data symbols and reflection coefficients.

The unknowns of one observation window are stacked as
``theta = [s[0], ..., s[T-1], gamma]`` and the observations slot-major as
``[r[0], ..., r[T-1]]``. In slot ``t`` the model is
``r[t] = Hbar s[t] + R[t] gamma + w[t]`` with diagonal noise covariance ``A[t]``,
unit-variance symbols and a diagonal RCS prior. A per-AP system uses one AP's
``N`` antennas; the central system stacks every UL AP, which makes ``R[t]``
block diagonal. The symbol blocks only couple through ``gamma``, so the solve
eliminates them slot by slot and never forms the full ``(T*K_u + p)`` system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import Link, constellation_points
from .detection import global_measurement, interference_floor, measurement_matrices
from .errors import NumericError


@dataclass(frozen=True)
class JointSystem:
    """Linear model of one observation window.

    ``H_bar`` is ``(n, K_u)`` with the UL powers folded in, ``Rdd`` is
    ``(T, n, p)``, ``noise_diag`` is ``(T, n)`` and ``prior_gamma`` is ``(p,)``.
    """

    H_bar: np.ndarray
    Rdd: np.ndarray
    noise_diag: np.ndarray
    prior_gamma: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """``(T, n, K_u, p)``."""
        T, n, p = self.Rdd.shape
        return T, n, self.H_bar.shape[1], p

    def omega(self) -> np.ndarray:
        """Dense ``(T*n, T*K_u + p)`` model matrix."""
        T, n, K, p = self.dims
        out = np.zeros((T * n, T * K + p), dtype=complex)
        for t in range(T):
            out[t * n:(t + 1) * n, t * K:(t + 1) * K] = self.H_bar
            out[t * n:(t + 1) * n, T * K:] = self.Rdd[t]
        return out

    def prior_cov(self) -> np.ndarray:
        T, _, K, _ = self.dims
        return np.diag(np.concatenate([np.ones(T * K), self.prior_gamma]))

    def noise_cov(self) -> np.ndarray:
        return np.diag(self.noise_diag.ravel())

    def apply(self, symbols: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """Noiseless observations ``(T, n)`` for symbols ``(T, K_u)`` and ``gamma (p,)``."""
        return symbols @ self.H_bar.T + self.Rdd @ gamma


def build_joint_system(link: Link, x_d: np.ndarray, mode="central", *,
                       prior_gamma: np.ndarray | None = None) -> JointSystem:
    """Model of the UL observations of one AP (``mode`` = AP position) or of all of them."""
    H_bar = link.H_ul * np.sqrt(link.ul_power)
    local = measurement_matrices(link.Rdot, x_d)
    floor = interference_floor(link.zeta + link.nu, x_d, link.noise_power)
    sigma = link.sigma if prior_gamma is None else np.asarray(prior_gamma).reshape(link.sigma.shape)
    N = link.N
    if mode == "central":
        M_u, _, K_u = H_bar.shape
        return JointSystem(
            H_bar=H_bar.reshape(M_u * N, K_u),
            Rdd=global_measurement(local),
            noise_diag=np.repeat(floor.T, N, axis=1),
            prior_gamma=sigma.ravel().astype(float),
        )
    m = int(mode)
    return JointSystem(
        H_bar=H_bar[m],
        Rdd=local[m],
        noise_diag=np.repeat(floor[m][:, None], N, axis=1),
        prior_gamma=sigma[m].astype(float),
    )


@dataclass(frozen=True)
class JointEstimate:
    """Soft symbols ``(T, K_u)``, RCS estimate ``(p,)`` and posterior second moments."""

    s_hat: np.ndarray
    gamma_hat: np.ndarray
    gamma_cov: np.ndarray
    symbol_var: np.ndarray
    posterior_cov: np.ndarray | None = None


def _chol(mat, what):
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"{what} is not positive definite",
                           condition_number=float(np.max(np.linalg.cond(mat)))) from exc


def _chol_solve(L, b):
    y = np.linalg.solve(L, b)
    return np.linalg.solve(np.swapaxes(L, -1, -2).conj(), y)


def joint_map_estimate(system: JointSystem, r: np.ndarray, *, method: str = "block",
                       full_cov: bool = False) -> JointEstimate:
    """Posterior mean of the symbols and reflection coefficients.

    ``method="dense"`` solves the full normal equations and exists as a
    reference for the default slot-wise elimination. Coefficients with zero
    prior variance are pinned to zero.
    """
    if method == "dense":
        return _dense_estimate(system, r)
    if method != "block":
        raise ValueError(f"unknown solve method {method!r}")
    if np.any(system.noise_diag <= 0):
        raise NumericError("noise covariance must be positive definite")
    T, n, K, p = system.dims
    active = system.prior_gamma > 0
    R = system.Rdd[:, :, active]
    q = R.shape[2]
    Hb = system.H_bar
    winv = 1.0 / system.noise_diag
    wr = winv * r

    J_ss = np.einsum("nk,tn,nl->tkl", Hb.conj(), winv, Hb) + np.eye(K)
    J_sg = np.einsum("nk,tn,tnq->tkq", Hb.conj(), winv, R)
    b_s = wr @ Hb.conj()
    L_s = _chol(J_ss, "symbol precision")
    Y = _chol_solve(L_s, np.concatenate([J_sg, b_s[:, :, None]], axis=2))
    Y_g, Y_b = Y[:, :, :q], Y[:, :, q]

    J_gg = np.einsum("tnp,tn,tnq->pq", R.conj(), winv, R) + np.diag(1.0 / system.prior_gamma[active])
    schur = J_gg - np.einsum("tkp,tkq->pq", J_sg.conj(), Y_g)
    schur = 0.5 * (schur + schur.conj().T)
    rhs = np.einsum("tnp,tn->p", R.conj(), wr) - np.einsum("tkp,tk->p", J_sg.conj(), Y_b)
    L_g = _chol(schur, "RCS Schur complement")
    cov_g = _chol_solve(L_g, np.eye(q))
    g_act = cov_g @ rhs
    s_hat = Y_b - Y_g @ g_act

    inv_ss = _chol_solve(L_s, np.broadcast_to(np.eye(K), (T, K, K)))
    YC = Y_g @ cov_g
    symbol_var = (np.einsum("tkk->tk", inv_ss) + np.einsum("tkq,tkq->tk", YC, Y_g.conj())).real

    gamma_hat = np.zeros(p, dtype=complex)
    gamma_hat[active] = g_act
    gamma_cov = np.zeros((p, p), dtype=complex)
    gamma_cov[np.ix_(active, active)] = cov_g

    posterior = None
    if full_cov:
        dim = T * K + p
        posterior = np.zeros((dim, dim), dtype=complex)
        Yf = Y_g.reshape(T * K, q)
        block_ss = Yf @ cov_g @ Yf.conj().T
        for t in range(T):
            block_ss[t * K:(t + 1) * K, t * K:(t + 1) * K] += inv_ss[t]
        g_idx = T * K + np.flatnonzero(active)
        posterior[:T * K, :T * K] = block_ss
        posterior[np.ix_(np.arange(T * K), g_idx)] = -Yf @ cov_g
        posterior[np.ix_(g_idx, np.arange(T * K))] = -(Yf @ cov_g).conj().T
        posterior[np.ix_(g_idx, g_idx)] = cov_g
    return JointEstimate(s_hat, gamma_hat, gamma_cov, symbol_var, posterior)


def _dense_estimate(system: JointSystem, r: np.ndarray) -> JointEstimate:
    T, n, K, p = system.dims
    keep = np.concatenate([np.ones(T * K, bool), system.prior_gamma > 0])
    omega = system.omega()[:, keep]
    prior = np.diag(system.prior_cov())[keep]
    noise = system.noise_diag.ravel()
    precision = omega.conj().T @ (omega / noise[:, None]) + np.diag(1.0 / prior)
    L = _chol(precision, "posterior precision")
    cov_act = _chol_solve(L, np.eye(precision.shape[0]))
    theta_act = cov_act @ (omega.conj().T @ (r.ravel() / noise))
    theta = np.zeros(T * K + p, dtype=complex)
    theta[keep] = theta_act
    cov = np.zeros((T * K + p, T * K + p), dtype=complex)
    cov[np.ix_(keep, keep)] = cov_act
    var = np.diag(cov).real[:T * K].reshape(T, K)
    return JointEstimate(theta[:T * K].reshape(T, K), theta[T * K:], cov[T * K:, T * K:], var, cov)


def detect_symbols(estimate: JointEstimate, constellation: str,
                   truth: np.ndarray | None = None) -> tuple[np.ndarray, float | None]:
    """Nearest-point decisions on bias-corrected soft symbols, plus the error rate.

    An LMMSE symbol estimate equals ``(1 - v) s`` plus noise on average, ``v``
    being its posterior variance, so it is rescaled by ``1 / (1 - v)`` before
    slicing. This matters for amplitude-modulated alphabets only.
    """
    points = constellation_points(constellation)
    if points is None:
        raise ValueError("hard decisions need a finite constellation")
    gain = np.clip(1.0 - estimate.symbol_var, 1e-12, None)
    soft = estimate.s_hat / gain
    hard = points[np.argmin(np.abs(soft[..., None] - points), axis=-1)]
    if truth is None:
        return hard, None
    errors = np.count_nonzero(~np.isclose(hard, truth))
    return hard, errors / max(truth.size, 1)
