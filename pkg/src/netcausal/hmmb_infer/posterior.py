"""Posterior containers, summaries, export, and evaluation against a truth."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import DataError
from ..netcore import HmmbParams

TRACE_MAGIC = b"HMMBTRC1"


@dataclass(frozen=True, eq=False)
class HmmbPosterior:
    """Post burn-in samples of the selected chain.

    Shapes: ``lam`` (S, N), ``pi`` (S, N, K), ``block`` (S, K, K),
    ``alpha`` and ``sparsity`` (S,), ``log_joint`` (chains, iterations).
    """

    lam: np.ndarray
    pi: np.ndarray
    block: np.ndarray
    alpha: np.ndarray
    sparsity: np.ndarray
    log_joint: np.ndarray
    selected_chain: int
    acceptance: list[dict] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def samples(self) -> int:
        return int(self.lam.shape[0])

    @property
    def n(self) -> int:
        return int(self.lam.shape[1])

    @property
    def k(self) -> int:
        return int(self.block.shape[1])

    def interval(self, name: str, level: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
        x = getattr(self, name)
        q = (1.0 - level) / 2.0
        return np.quantile(x, q, axis=0), np.quantile(x, 1.0 - q, axis=0)

    def summary(self, level: float = 0.9) -> dict:
        out: dict = {
            "samples": self.samples,
            "selected_chain": self.selected_chain,
            "level": level,
            "acceptance": self.acceptance,
            "diagnostics": self.diagnostics,
        }
        for name in ("lam", "pi", "block", "alpha", "sparsity"):
            x = getattr(self, name)
            lo, hi = self.interval(name, level)
            key = "lambda" if name == "lam" else name
            out[key] = {
                "mean": np.mean(x, axis=0).tolist(),
                "sd": np.std(x, axis=0).tolist(),
                "lower": np.asarray(lo).tolist(),
                "upper": np.asarray(hi).tolist(),
            }
        out["log_joint_tail_mean"] = [
            float(np.mean(tr[-max(1, len(tr) // 10) :])) for tr in self.log_joint
        ]
        return out


def write_summary(post: HmmbPosterior, path: str | Path, level: float = 0.9) -> None:
    Path(path).write_text(json.dumps(post.summary(level), indent=1) + "\n", encoding="utf-8")


def write_trace(post: HmmbPosterior, path: str | Path) -> None:
    """Binary trace: magic, then little-endian uint32 (n, K, samples), then float64 blocks.

    Blocks in order, each row-major: lambda (S, N), pi (S, N, K), block (S, K, K),
    alpha (S,), sparsity (S,).
    """
    s, n, k = post.samples, post.n, post.k
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC)
        fh.write(struct.pack("<III", n, k, s))
        for arr in (post.lam, post.pi, post.block, post.alpha, post.sparsity):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_trace(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != TRACE_MAGIC:
        raise DataError(f"{path}: not a posterior trace file")
    n, k, s = struct.unpack("<III", raw[8:20])
    body = np.frombuffer(raw[20:], dtype="<f8")
    sizes = [("lam", (s, n)), ("pi", (s, n, k)), ("block", (s, k, k)), ("alpha", (s,)),
             ("sparsity", (s,))]
    out, off = {}, 0
    for name, shape in sizes:
        count = int(np.prod(shape))
        if off + count > body.size:
            raise DataError(f"{path}: truncated trace")
        out[name] = body[off : off + count].reshape(shape).copy()
        off += count
    return out


# Evaluation ----------------------------------------------------------------


def community_permutation(pi_est: np.ndarray, pi_true: np.ndarray) -> np.ndarray:
    """perm such that estimated community ``perm[l]`` corresponds to true community ``l``."""
    score = pi_est.T @ pi_true  # (K_est, K_true)
    rows, cols = linear_sum_assignment(-score)
    perm = np.empty(pi_true.shape[1], dtype=np.int64)
    perm[cols] = rows
    return perm


def align_communities(post: HmmbPosterior, pi_true: np.ndarray) -> HmmbPosterior:
    """Relabel communities to best match ``pi_true`` (community labels are arbitrary)."""
    perm = community_permutation(post.pi.mean(axis=0), pi_true)
    diag = post.diagnostics.get("fixed_block_diagonal")
    diagnostics = dict(post.diagnostics, community_permutation=perm.tolist())
    if diag is not None:
        diagnostics["fixed_block_diagonal"] = [diag[p] for p in perm]
    return replace(
        post,
        pi=post.pi[:, :, perm],
        block=post.block[:, perm][:, :, perm],
        diagnostics=diagnostics,
    )


def rescale_to_reference(
    post: HmmbPosterior, reference: np.ndarray, groups: list[list[int]] | None = None
) -> HmmbPosterior:
    """Resolve the B/lambda scale redundancy against a reference block diagonal.

    For each sample and community group, ``w`` minimizes the squared error
    between ``w * diag(B)`` and the reference on that group; the group's block
    rows/columns are multiplied by ``w`` and the activity of nodes whose
    dominant community lies in the group is divided by ``sqrt(w)``. With one
    group (the default) every rate lambda_ij is unchanged.
    """
    ref = np.asarray(reference, dtype=float)
    if np.any(ref <= 0):
        raise DataError("reference diagonal must be strictly positive")
    k = post.k
    groups = groups or [list(range(k))]
    lam = post.lam.copy()
    block = post.block.copy()
    skipped = 0
    for s in range(post.samples):
        dominant = np.argmax(post.pi[s], axis=1)
        for g in groups:
            d = np.diag(block[s])[g]
            if np.any(d <= 0):
                skipped += 1
                continue
            w = float(d @ ref[g] / (d @ d))
            for m in g:
                block[s, m, :] *= np.sqrt(w)
                block[s, :, m] *= np.sqrt(w)
            if len(g) == k:
                lam[s] /= np.sqrt(w)
            else:
                lam[s, np.isin(dominant, g)] /= np.sqrt(w)
    diagnostics = dict(post.diagnostics, rescale_skipped=skipped)
    return replace(post, lam=lam, block=block, diagnostics=diagnostics)


def _coverage(samples: np.ndarray, truth: np.ndarray, level: float, mask=None) -> tuple[float, float]:
    q = (1.0 - level) / 2.0
    lo = np.quantile(samples, q, axis=0)
    hi = np.quantile(samples, 1.0 - q, axis=0)
    inside = (lo <= truth) & (truth <= hi)
    width = hi - lo
    if mask is not None:
        inside, width = inside[mask], width[mask]
    return float(np.mean(inside)), float(np.mean(width))


def evaluate_run(post: HmmbPosterior, truth: HmmbParams, level: float = 0.9) -> dict:
    """Align labels, rescale each community's diagonal to the truth, then evaluate."""
    aligned = align_communities(post, truth.pi)
    groups = [[m] for m in range(truth.k)]
    return evaluate_against_truth(rescale_to_reference(aligned, np.diag(truth.block), groups),
                                  truth, level)


def evaluate_against_truth(post: HmmbPosterior, truth: HmmbParams, level: float = 0.9) -> dict:
    """Coverage and mean interval width for pi, lambda and off-diagonal B.

    ``post`` should already be aligned and rescaled to the truth. The
    ``pi_interior_coverage`` entry restricts Pi to true components in
    [0.05, 0.95], away from the simplex boundary.
    """
    k = post.k
    pi_cov, pi_w = _coverage(post.pi, truth.pi, level)
    interior = (truth.pi >= 0.05) & (truth.pi <= 0.95)
    pi_int, _ = _coverage(post.pi, truth.pi, level, mask=interior)
    lam_cov, lam_w = _coverage(post.lam, truth.lam, level)
    off = ~np.eye(k, dtype=bool)
    b_cov, b_w = _coverage(post.block, truth.block, level, mask=off) if k > 1 else (float("nan"),) * 2
    return {
        "pi_coverage": pi_cov,
        "pi_width": pi_w,
        "pi_interior_coverage": pi_int,
        "lambda_coverage": lam_cov,
        "lambda_width": lam_w,
        "block_coverage": b_cov,
        "block_width": b_w,
    }
