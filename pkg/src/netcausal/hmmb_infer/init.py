"""Chain initialization strategies.

``full``     spectral memberships, degree-based activity levels, and a block
             diagonal fixed to a profile-likelihood precompute.
``partial``  same starting point, but the whole block matrix is sampled.
``none``     random memberships, constant activity levels, identity block.
"""

from __future__ import annotations

import warnings
from types import ModuleType

import numpy as np

from ..errors import ConfigurationError
from ..netcore import HmmbParams, InfluenceNetwork
from .backend import get_kernels
from .gradients import block_gradient

OFF_DIAGONAL_INIT = 0.05


def spectral_memberships(
    net: InfluenceNetwork, k: int, rng: np.random.Generator, own: float = 0.9
) -> np.ndarray:
    """Near one-hot memberships from spectral clustering of the symmetrized count graph."""
    n = net.n
    if k == 1:
        return np.ones((n, 1))
    labels = spectral_labels(net, k, rng)
    pi = np.full((n, k), (1.0 - own) / (k - 1))
    pi[np.arange(n), labels] = own
    return pi


def spectral_labels(net: InfluenceNetwork, k: int, rng: np.random.Generator) -> np.ndarray:
    from sklearn.cluster import SpectralClustering

    n = net.n
    if n <= k:
        return np.arange(n) % k
    a = net.to_dense()
    w = a + a.T
    seed = int(rng.integers(0, 2**31 - 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = SpectralClustering(
            n_clusters=k, affinity="precomputed", random_state=seed, assign_labels="kmeans"
        )
        labels = model.fit_predict(w + 1e-9 * (1 - np.eye(n)))
    return np.asarray(labels, dtype=np.int64)


def initial_activity(
    a: np.ndarray, on: np.ndarray, timespan: float, block_level: float, floor: float
) -> np.ndarray:
    """Activity levels proportional to each node's average on-edge weight.

    The proportionality constant makes lam_i * lam_j * T * block_level match the
    mean on-edge count.
    """
    strength = a.sum(axis=1) + a.sum(axis=0)
    degree = on.sum(axis=1) + on.sum(axis=0)
    avg = np.divide(strength, degree, out=np.zeros_like(strength), where=degree > 0)
    positive = a[a > 0]
    if positive.size == 0:
        return np.full(a.shape[0], max(floor, 1e-12))
    scale = 1.0 / np.sqrt(positive.mean() * timespan * block_level)
    lam = avg * scale
    lam[degree == 0] = floor
    return np.maximum(lam, max(floor, 1e-12))


def profile_block_diagonal(
    net: InfluenceNetwork,
    k: int,
    pi0: np.ndarray,
    lam0: np.ndarray,
    timespan: float,
    config,
    rng: np.random.Generator,
    kernels: ModuleType | None = None,
    max_steps: int = 2000,
    tol: float = 1e-10,
) -> np.ndarray:
    """Block diagonal from a preliminary identity-block run plus gradient ascent.

    The preliminary chain samples activity levels and memberships with B fixed
    to the identity. The diagonal is then fitted by batch gradient ascent with
    every activity level set to the preliminary mean and off-diagonals at zero.
    """
    from .sampler import ChainState, run_chain

    on = net.to_dense() > 0
    params = HmmbParams(
        lam=lam0, pi=pi0, block=np.eye(k), switches=on, sparsity=0.5, alpha=config.alpha_init,
        pseudocounts=np.ones((k, 1)), lifestyle_probs=np.ones(1), timespan=timespan,
    )
    prelim = config.with_(
        fix_block=True, update_alpha=False, update_sparsity=False, switch_policy="map_fixed",
    )
    state = ChainState.from_params(net, params, prelim, fixed=np.ones((k, k), dtype=np.uint8))
    iters = max(config.profile_iterations, 2)
    res = run_chain(state, prelim, rng, kernels or get_kernels(config.backend),
                    iterations=iters, burn_in=iters // 2)
    pi_bar = res.pi.mean(axis=0)
    pi_bar /= pi_bar.sum(axis=1, keepdims=True)
    lam_bar = float(res.lam.mean())
    lam_uniform = np.full(net.n, lam_bar)

    a = net.to_dense()
    diag = np.ones(k)
    for _ in range(max_steps):
        b = np.diag(diag)
        grad = np.diag(block_gradient(b, pi_bar, lam_uniform, a, on, timespan))
        # Per-coordinate preconditioning: divide by the expected-count curvature.
        pp = pi_bar.T @ on.astype(float) @ pi_bar
        denom = lam_bar**2 * timespan * np.diag(pp)
        step = np.divide(diag, denom, out=np.zeros(k), where=denom > 0)
        new = np.maximum(diag + step * grad, 1e-8)
        if np.max(np.abs(new - diag) / np.maximum(diag, 1e-12)) < tol:
            diag = new
            break
        diag = new
    return diag


def random_memberships(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(np.ones(k), size=n) if k > 1 else np.ones((n, 1))


def init_chain(
    net: InfluenceNetwork,
    k: int,
    config,
    rng: np.random.Generator,
    cache: dict | None = None,
    kernels: ModuleType | None = None,
) -> tuple[HmmbParams, np.ndarray | None]:
    """Starting parameters for one chain, plus the fixed diagonal (if any).

    ``cache`` lets the chains of one run share the spectral memberships and the
    profile-likelihood diagonal, so every chain uses the same community labels.
    Randomness for those shared pieces is drawn from ``rng`` on first use.
    """
    if k < 1:
        raise ConfigurationError("K must be >= 1")
    cache = {} if cache is None else cache
    a = net.to_dense()
    n = net.n
    on = a > 0
    timespan = config.timespan
    floor = config.lambda_floor
    fixed_diag = None
    if config.init == "none":
        pi0 = random_memberships(n, k, rng)
        block = np.eye(k) + OFF_DIAGONAL_INIT * (1 - np.eye(k))
        lam0 = initial_activity(a, on, timespan, 1.0, floor)
        active = lam0[lam0 > floor]
        lam0 = np.full(n, max(float(active.mean()) if active.size else 1.0, floor))
    else:
        if "pi0" not in cache:
            cache["pi0"] = spectral_memberships(net, k, rng)
        pi0 = cache["pi0"].copy()
        if config.init == "full" and config.fix_block_diagonal:
            if config.block_diagonal is not None:
                fixed_diag = np.asarray(config.block_diagonal, dtype=float)
            else:
                if "diag" not in cache:
                    lam_id = initial_activity(a, on, timespan, 1.0, floor)
                    cache["diag"] = profile_block_diagonal(
                        net, k, pi0, lam_id, timespan, config, rng, kernels
                    )
                fixed_diag = cache["diag"].copy()
            diag = fixed_diag
        else:
            diag = np.ones(k)
        block = np.diag(diag) + OFF_DIAGONAL_INIT * (1 - np.eye(k))
        lam0 = initial_activity(a, on, timespan, float(np.mean(diag)), floor)
    lo, hi = config.alpha_support
    n_on = int(on.sum())
    pairs = n * (n - 1)
    sparsity = n_on / pairs if pairs else 0.5
    params = HmmbParams(
        lam=np.clip(lam0, max(floor, 1e-12), config.lambda_ceiling),
        pi=pi0,
        block=block,
        switches=on,
        sparsity=float(np.clip(sparsity, 1e-6, 1 - 1e-6)),
        alpha=float(np.clip(config.alpha_init, lo, hi)),
        pseudocounts=np.ones((k, 1)),
        lifestyle_probs=np.ones(1),
        timespan=timespan,
    )
    return params, fixed_diag
