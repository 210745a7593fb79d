"""Gradients of the log joint posterior used by MCEM and the profile precompute."""

from __future__ import annotations

import numpy as np


def _on_mask(on: np.ndarray) -> np.ndarray:
    mask = np.asarray(on, dtype=bool).copy()
    np.fill_diagonal(mask, False)
    return mask


def lambda_gradient(
    lam: np.ndarray, pi: np.ndarray, block: np.ndarray, a: np.ndarray, on: np.ndarray,
    timespan: float, alpha: float,
) -> np.ndarray:
    """d log p / d lam_i, including the -alpha/lam_i power-law prior term.

    The in-edge sum uses the partner's activity lam_j, as the rate of edge
    (j, i) is lam_j * lam_i * pi_j' B pi_i.
    """
    mask = _on_mask(on)
    mix = pi @ block @ pi.T
    am = np.where(mask, a, 0.0)
    s_a = am.sum(axis=1) + am.sum(axis=0)
    wm = np.where(mask, mix, 0.0)
    r = timespan * (wm @ lam + wm.T @ lam)
    return (s_a - alpha) / lam - r


def block_gradient(
    block: np.ndarray, pi: np.ndarray, lam: np.ndarray, a: np.ndarray, on: np.ndarray,
    timespan: float,
) -> np.ndarray:
    """d log p / d b_mn summed over on-switch pairs."""
    mask = _on_mask(on)
    mix = pi @ block @ pi.T
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mask & (a > 0), a / mix, 0.0)
    w = np.where(mask, ratio - timespan * np.outer(lam, lam), 0.0)
    return pi.T @ w @ pi
