"""Dirichlet head: sampling, log-density, entropy and the simplex-to-counts map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .autodiff import Tensor

U_CLAMP = 1e-8


@dataclass
class DesiredDistribution:
    u_tilde: np.ndarray
    u_hat: np.ndarray
    log_prob: float = 0.0
    alpha: np.ndarray | None = None


def _log_gamma_variates(alpha: np.ndarray, rng: np.random.Generator, size=None) -> np.ndarray:
    """``log Gamma(alpha, 1)`` draws, computed in log space.

    For ``alpha < 1`` the boost ``G(a) = G(a + 1) U^(1/a)`` is applied so that
    tiny concentrations do not underflow to zero.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    shape = alpha.shape if size is None else tuple(np.atleast_1d(size)) + alpha.shape
    small = alpha < 1.0
    g = rng.standard_gamma(np.where(small, alpha + 1.0, alpha), size=shape)
    logg = np.log(g)
    if small.any():
        u = rng.random(shape)
        logg = np.where(small, logg + np.log(u) / alpha, logg)
    return logg


def sample_dirichlet(alpha, rng: np.random.Generator, size=None) -> np.ndarray:
    """Dirichlet draws by normalizing Gamma variates; the last axis is the simplex."""
    logg = _log_gamma_variates(alpha, rng, size)
    logg -= logg.max(axis=-1, keepdims=True)
    w = np.exp(logg)
    return w / w.sum(axis=-1, keepdims=True)


def desired_to_counts(u_tilde, m: int) -> np.ndarray:
    """Largest-remainder rounding of ``u_tilde * m`` to integers summing to ``m``.

    Floors first, then one extra unit each to the largest fractional parts,
    ties going to the lowest station index.
    """
    u = np.clip(np.asarray(u_tilde, dtype=np.float64), 0.0, None)
    total = u.sum()
    if m <= 0 or total <= 0:
        out = np.zeros(len(u), dtype=np.int64)
        if m > 0:
            out[0] = m
        return out
    v = u / total * m
    base = np.floor(v + 1e-9).astype(np.int64)
    frac = v - base
    rem = int(m - base.sum())
    if rem > 0:
        # stable sort on -frac keeps lower indices first among ties
        order = np.argsort(-np.round(frac, 12), kind="stable")
        base[order[:rem]] += 1
    elif rem < 0:
        order = np.argsort(np.round(frac, 12), kind="stable")
        for i in order:
            if rem == 0:
                break
            if base[i] > 0:
                base[i] -= 1
                rem += 1
    return base


def clamp_simplex(u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=np.float64), U_CLAMP, 1.0 - U_CLAMP)
    return u / u.sum(axis=-1, keepdims=True)


def dirichlet_log_prob(alpha, u):
    """``sum (a_i - 1) ln u_i + ln G(sum a) - sum ln G(a_i)`` over the last axis.

    Returns a ``Tensor`` when ``alpha`` is one (gradients flow to ``alpha``
    only), otherwise a float (or an array for batched input).  ``u`` is
    clamped into the interior first.
    """
    u = clamp_simplex(u)
    if isinstance(alpha, Tensor):
        return (((alpha - 1.0) * np.log(u)).sum(axis=-1) + alpha.sum(axis=-1).gammaln()
                - alpha.gammaln().sum(axis=-1))
    a = np.asarray(alpha, dtype=np.float64)
    out = ((a - 1.0) * np.log(u)).sum(-1) + gammaln(a.sum(-1)) - gammaln(a).sum(-1)
    return float(out) if np.ndim(out) == 0 else out


def dirichlet_entropy(alpha):
    """Differential entropy of ``Dir(alpha)`` over the last axis; Tensor in, Tensor out."""
    if isinstance(alpha, Tensor):
        K = alpha.shape[-1]
        a0 = alpha.sum(axis=-1)
        log_b = alpha.gammaln().sum(axis=-1) - a0.gammaln()
        return log_b + (a0 - float(K)) * a0.digamma() - ((alpha - 1.0) * alpha.digamma()).sum(axis=-1)
    a = np.asarray(alpha, dtype=np.float64)
    a0 = a.sum(-1)
    out = (gammaln(a).sum(-1) - gammaln(a0) + (a0 - a.shape[-1]) * digamma(a0)
           - ((a - 1) * digamma(a)).sum(-1))
    return float(out) if np.ndim(out) == 0 else out


def sample_desired(alpha, m_available: int, rng: np.random.Generator) -> DesiredDistribution:
    a = np.asarray(alpha.data if isinstance(alpha, Tensor) else alpha, dtype=np.float64)
    if (a <= 0).any():
        raise ValueError("Dirichlet concentrations must be positive")
    u = sample_dirichlet(a, rng)
    u_hat = desired_to_counts(u, int(m_available))
    return DesiredDistribution(u, u_hat, dirichlet_log_prob(a, u), a)
