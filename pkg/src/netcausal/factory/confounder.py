"""Confounder study: each confounder type with the covariate excluded or included.

Every replication draws a network, an assignment of 25 units and fresh
covariates and noise, then fits the Bayesian imputation model with and
without the confounding covariate. Network covariates default to the true
activity levels and memberships.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..analysis import EstimatorSpec, bayes_impute
from ..design import SchemeConfig, draw_assignment
from ..netcore import study_config, sample_hmmb_params, sample_network
from ..science import EstimandSpec, OutcomeModelSpec, build_science, compute_estimand, observe
from ..seeding import derive_rng

CONFOUNDER_TYPES = ("independent", "treatment_likelihood", "activity", "membership")


@dataclass(frozen=True)
class ConfounderStudyConfig:
    networks: int = 5
    assignments: int = 40
    n: int = 256
    treated: int = 25
    sample_count: int = 4000
    level: float = 0.9
    confounders: tuple[str, ...] = CONFOUNDER_TYPES
    network_overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConfounderRow:
    confounder: str
    included: bool
    tau_mean: float
    tau_sd: float
    gamma_mean: float
    gamma_sd: float
    xi_coverage: float
    delta_coverage: float
    omega_mean: float
    replications: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def run_confounder_study(config: ConfounderStudyConfig, seed: int) -> list[ConfounderRow]:
    rows = []
    for conf in config.confounders:
        stats = {inc: {"tau": [], "gamma": [], "xi": [], "delta": []} for inc in (False, True)}
        omegas = []
        for r in range(config.networks):
            gen = study_config(config.n, **config.network_overrides)
            params = sample_hmmb_params(gen, derive_rng(seed, "network", r))
            net = sample_network(params, derive_rng(seed, "edges", r))
            model = OutcomeModelSpec.confounder_study(conf, k=params.k)
            for a in range(config.assignments):
                rng = derive_rng(seed, conf, r, a)
                table = build_science(net, model, params, rng)
                weights = table.treatment_weights()
                scheme = SchemeConfig(weights=None if weights is None else tuple(weights))
                z = draw_assignment("CR", net, config.treated, scheme, rng).z
                y = observe(table, z)
                peer = EstimandSpec("fixed_peer", z=z)
                delta_true = float(compute_estimand(table, peer))
                omega = delta_true / model.gamma
                omegas.append(omega)
                covs = {
                    "activity": params.lam, "membership": params.pi,
                    "independent": table.covariates[:, 0] if conf == "independent" else None,
                    "treatment_likelihood": table.covariates[:, 0]
                    if conf == "treatment_likelihood" else None,
                }
                for inc in (False, True):
                    spec = EstimatorSpec("bayes", covariates=conf if inc else "none")
                    xi, delta = bayes_impute(
                        y, z, net, covs, spec, [EstimandSpec("primary_avg"), peer],
                        config.sample_count, rng, config.level,
                    )
                    s = stats[inc]
                    s["tau"].append(xi.point)
                    s["gamma"].append(delta.point / omega)
                    s["xi"].append(bool(xi.covers(model.tau)))
                    s["delta"].append(bool(delta.covers(delta_true)))
        for inc in (False, True):
            s = stats[inc]
            rows.append(ConfounderRow(
                confounder=conf, included=inc,
                tau_mean=float(np.mean(s["tau"])), tau_sd=float(np.std(s["tau"], ddof=1)),
                gamma_mean=float(np.mean(s["gamma"])), gamma_sd=float(np.std(s["gamma"], ddof=1)),
                xi_coverage=float(np.mean(s["xi"])), delta_coverage=float(np.mean(s["delta"])),
                omega_mean=float(np.mean(omegas)), replications=len(s["tau"]),
            ))
    return rows


__all__ = ["ConfounderStudyConfig", "ConfounderRow", "run_confounder_study", "CONFOUNDER_TYPES"]
