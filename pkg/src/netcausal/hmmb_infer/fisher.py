"""Fisher information for a node's membership vector and the implied interval bounds.

The membership of node ``i`` is parameterized by its first K-1 coordinates;
the reference coordinate is ``1 - sum(others)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..errors import ConfigurationError, NumericError
from ..netcore import HmmbParams


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    node: int
    matrix: np.ndarray
    reference: int

    @property
    def free(self) -> np.ndarray:
        """Community indices of the free coordinates, in matrix order."""
        k = self.matrix.shape[0] + 1
        return np.array([c for c in range(k) if c != self.reference])


def fisher_information(
    i: int, params: HmmbParams, switches: np.ndarray | None = None, reference: int | None = None
) -> FisherMatrix:
    """Expected information about pi_i from the on-edges touching node ``i``."""
    k = params.k
    if k < 2:
        raise ConfigurationError("Fisher information for memberships needs K >= 2")
    ref = k - 1 if reference is None else int(reference)
    free = [c for c in range(k) if c != ref]
    on = params.switches if switches is None else np.asarray(switches, dtype=bool)
    b, pi, lam, t = params.block, params.pi, params.lam, params.timespan
    out_j = np.flatnonzero(on[i])
    in_j = np.flatnonzero(on[:, i])
    out_j = out_j[out_j != i]
    in_j = in_j[in_j != i]
    info = np.zeros((k - 1, k - 1))
    if out_j.size:
        u = pi[out_j] @ b.T  # row j: B pi_j
        denom = u @ pi[i]
        _check(denom, i, out_j, outgoing=True)
        d = u[:, free] - u[:, [ref]]
        w = lam[i] * lam[out_j] / denom
        info += (d * w[:, None]).T @ d
    if in_j.size:
        v = pi[in_j] @ b  # row j: pi_j' B
        denom = v @ pi[i]
        _check(denom, i, in_j, outgoing=False)
        d = v[:, free] - v[:, [ref]]
        w = lam[i] * lam[in_j] / denom
        info += (d * w[:, None]).T @ d
    info *= t
    info = 0.5 * (info + info.T)
    return FisherMatrix(node=i, matrix=info, reference=ref)


def _check(denom: np.ndarray, i: int, js: np.ndarray, outgoing: bool) -> None:
    bad = np.flatnonzero(denom <= 0)
    if bad.size:
        j = int(js[bad[0]])
        edge = (i, j) if outgoing else (j, i)
        raise NumericError(f"zero mixing rate pi' B pi on on-edge {edge}")


def cramer_rao_width(
    f: FisherMatrix, level: float = 0.9, include_reference: bool = False
) -> tuple[np.ndarray, bool]:
    """Minimal central-interval widths 2 z sqrt((I^-1)_mm); returns (widths, singular).

    With ``include_reference`` the width of the dropped coordinate (variance
    1' I^-1 1) is appended.
    """
    z = norm.ppf(0.5 + level / 2.0)
    m = f.matrix
    size = m.shape[0] + (1 if include_reference else 0)
    try:
        if m.size == 0 or np.linalg.cond(m) > 1e14:
            raise np.linalg.LinAlgError
        inv = np.linalg.inv(m)
    except np.linalg.LinAlgError:
        return np.full(size, np.inf), True
    var = np.diag(inv)
    if include_reference:
        var = np.append(var, inv.sum())
    return 2.0 * z * np.sqrt(np.maximum(var, 0.0)), False


def bound_widths(params: HmmbParams, level: float = 0.9) -> np.ndarray:
    """(N, K) Cramer-Rao widths for every node and community; inf where singular."""
    out = np.empty((params.n, params.k))
    for i in range(params.n):
        f = fisher_information(i, params)
        w, _ = cramer_rao_width(f, level, include_reference=True)
        out[i, f.free] = w[:-1]
        out[i, f.reference] = w[-1]
    return out
