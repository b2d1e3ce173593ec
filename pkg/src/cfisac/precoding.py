"""Downlink precoders and the per-AP transmit signal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import Link, SymbolBlock
from .errors import ConfigError, DegenerateInputError

_PHASE_TIE_RTOL = 1e-9
_NULLSPACE_RTOL = 1e-10


def fix_global_phase(v: np.ndarray) -> np.ndarray:
    """Rotate ``v`` so that its largest entry is real and positive.

    Entries within a relative ``1e-9`` of the maximum magnitude count as tied and
    the first of them is used, so vectors with equal-magnitude entries (steering
    vectors) get a reproducible reference.
    """
    mags = np.abs(v)
    if mags.size == 0 or mags.max() == 0.0:
        return v
    ref = int(np.argmax(mags >= mags.max() * (1.0 - _PHASE_TIE_RTOL)))
    return v * (np.conj(v[ref]) / mags[ref])


def rzf_precoder(H_dl: np.ndarray, epsilon: float) -> np.ndarray:
    """Unit-norm regularized zero-forcing directions, one column per DL user.

    ``H_dl`` is the ``(M_d*N, K_d)`` stacked channel. The direction of column
    ``n`` is ``(H H^H + eps I)^{-1} h_n``, evaluated through the equivalent
    ``H (H^H H + eps I)^{-1}`` form to keep the solve at size ``K_d``.
    """
    if not epsilon > 0:
        raise ValueError("RZF regularizer must be positive")
    K = H_dl.shape[1]
    if K == 0:
        return np.zeros_like(H_dl)
    gram = H_dl.conj().T @ H_dl + epsilon * np.eye(K)
    P = H_dl @ np.linalg.solve(gram, np.eye(K))
    norms = np.linalg.norm(P, axis=0)
    if np.any(norms == 0.0):
        raise DegenerateInputError("a DL user has an all-zero channel")
    return P / norms


def stacked_sensing_matrix(Rdot: np.ndarray) -> np.ndarray:
    """Arrange ``(M_u, M_d, N, N)`` blocks into one ``(M_u*N, M_d*N)`` matrix."""
    M_u, M_d, N, _ = Rdot.shape
    return Rdot.transpose(0, 2, 1, 3).reshape(M_u * N, M_d * N)


def target_centric_precoder(Rdot: np.ndarray) -> np.ndarray:
    """Dominant right singular vector of the stacked target response."""
    R = stacked_sensing_matrix(Rdot)
    if R.size == 0 or not np.any(R):
        raise DegenerateInputError("target response is identically zero")
    _, _, vh = np.linalg.svd(R, full_matrices=False)
    return fix_global_phase(vh[0].conj())


def user_centric_precoder(p_trg: np.ndarray, H_dl: np.ndarray) -> np.ndarray:
    """Project the target beam onto the orthogonal complement of the DL user channels."""
    dim, K = H_dl.shape
    if K == 0:
        return p_trg.copy()
    if dim <= K:
        raise DegenerateInputError(
            f"no nullspace: {dim} transmit dimensions for {K} DL users")
    u, s, _ = np.linalg.svd(H_dl, full_matrices=False)
    basis = u[:, s > s[0] * dim * np.finfo(float).eps]
    projected = p_trg - basis @ (basis.conj().T @ p_trg)
    norm = np.linalg.norm(projected)
    if norm <= _NULLSPACE_RTOL * np.linalg.norm(p_trg):
        raise DegenerateInputError("target beam lies inside the DL user span")
    return projected / norm


@dataclass(frozen=True)
class PrecoderBank:
    """Central DL precoders, stacked AP-major over the DL APs.

    ``P_d`` is ``(M_d*N, K_d)`` with unit-norm columns and ``p_s`` the
    ``(M_d*N,)`` sensing beam. Power fractions are shared by every DL AP.
    ``sensing`` names how the beam was built, ``"off"`` when there is none.
    """

    P_d: np.ndarray
    p_s: np.ndarray
    pi_d: np.ndarray
    pi_s: float
    epsilon: float
    sensing: str = "target_centric"

    def per_ap(self, num_antennas: int):
        """Views of ``P_d`` as ``(M_d, N, K_d)`` and ``p_s`` as ``(M_d, N)``."""
        M_d = self.p_s.size // num_antennas
        return (self.P_d.reshape(M_d, num_antennas, -1),
                self.p_s.reshape(M_d, num_antennas))


def equal_power_split(k_dl: int, pi_s: float) -> np.ndarray:
    if not 0.0 <= pi_s <= 1.0:
        raise ConfigError("sensing power fraction must be in [0, 1]")
    return np.full(k_dl, (1.0 - pi_s) / k_dl) if k_dl else np.zeros(0)


def build_precoder_bank(link: Link, *, sensing: str, pi_s: float, epsilon: float) -> PrecoderBank:
    """RZF user precoders plus a target-centric or user-centric sensing beam.

    Without UL APs there is no echo to collect, so the sensing beam is switched
    off while the users keep their share of the power. Without DL APs nobody
    transmits and every precoder is empty.
    """
    H_dl = link.stacked_dl_channels()
    P_d = rzf_precoder(H_dl, epsilon) if H_dl.shape[0] else np.zeros_like(H_dl)
    pi_d = equal_power_split(H_dl.shape[1], pi_s)
    if link.Rdot.shape[0] == 0 or link.Rdot.shape[1] == 0:
        return PrecoderBank(P_d, np.zeros(H_dl.shape[0], complex), pi_d, 0.0, epsilon, "off")
    p_s = target_centric_precoder(link.Rdot)
    if sensing == "user_centric":
        p_s = user_centric_precoder(p_s, H_dl)
    elif sensing != "target_centric":
        raise ConfigError(f"unknown sensing precoder {sensing!r}")
    return PrecoderBank(P_d, p_s, pi_d, float(pi_s), epsilon, sensing)


def assemble_dl_signal(bank: PrecoderBank, symbols: SymbolBlock, p_d: float,
                       num_antennas: int) -> np.ndarray:
    """Transmit vectors of every DL AP in every slot, shape ``(M_d, T, N)``."""
    total = float(np.sum(bank.pi_d)) + bank.pi_s
    if total > 1.0 + 1e-12:
        raise ConfigError(f"power fractions sum to {total:.6g} > 1")
    stacked = (symbols.s_d * np.sqrt(bank.pi_d)) @ bank.P_d.T
    stacked = stacked + np.sqrt(bank.pi_s) * symbols.s_s[:, None] * bank.p_s[None, :]
    stacked *= np.sqrt(p_d)
    T = stacked.shape[0]
    M_d = bank.p_s.size // num_antennas
    return stacked.reshape(T, M_d, num_antennas).transpose(1, 0, 2)
