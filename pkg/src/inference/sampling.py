"""Bounded ensemble MCMC and convergence diagnostics."""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import emcee
import numpy as np

from src.config import ANALYSIS_RULES, INFERENCE_DEFAULTS, SCHEMA_VERSION
from src.errors import DomainError
from src.inference.likelihood import JointModel, LikelihoodSettings, ModelParams
from src.recon.binning import BinnedSpectrum

logger = logging.getLogger(__name__)

MIN_CHAINS = 4


def split_rhat(chains: np.ndarray) -> float:
    """
    Potential scale reduction of one parameter after splitting every chain in half.

    Args:
        chains: Array of shape (n_chains, n_draws).
    """
    chains = np.asarray(chains, dtype=float)
    n_draws = chains.shape[1] // 2
    if n_draws < 2:
        raise DomainError("Split R-hat needs at least four draws per chain")
    halves = np.concatenate([chains[:, :n_draws], chains[:, -n_draws:]], axis=0)
    n_chains = halves.shape[0]

    within = np.mean(np.var(halves, axis=1, ddof=1))
    means = halves.mean(axis=1)
    between = n_draws * np.var(means, ddof=1)
    if within == 0:
        return 1.0 if between == 0 else np.inf
    pooled = within * (n_draws - 1) / n_draws + between * (n_chains + 1) / (n_chains * n_draws)
    return float(np.sqrt(pooled / within))


def effective_sample_size(chains: np.ndarray) -> float:
    """Total draws divided by the integrated autocorrelation time (chains of shape (n_chains, n_draws))."""
    chains = np.asarray(chains, dtype=float)
    if np.all(chains == chains.flat[0]):
        return float(chains.size)
    tau = emcee.autocorr.integrated_time(chains.T[:, :, None], quiet=True)[0]
    return float(chains.size / max(tau, 1.0))


@dataclass
class Posterior:
    """Flattened draws with per-parameter diagnostics."""

    names: List[str]
    samples: np.ndarray
    log_prob: np.ndarray
    rhat: Dict[str, float] = field(default_factory=dict)
    ess: Dict[str, float] = field(default_factory=dict)
    acceptance_fraction: float = float("nan")
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_samples(cls, names: Sequence[str], samples: np.ndarray, **metadata) -> "Posterior":
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[1] != len(names):
            samples = samples.T
        return cls(list(names), samples, np.zeros(samples.shape[0]), metadata=dict(metadata))

    @property
    def converged(self) -> bool:
        if not self.rhat:
            return True
        rhat_ok = all(r <= ANALYSIS_RULES["rhat_max"] for r in self.rhat.values())
        ess_ok = all(e >= ANALYSIS_RULES["ess_min"] for e in self.ess.values())
        return rhat_ok and ess_ok

    def column(self, name: str) -> np.ndarray:
        try:
            return self.samples[:, self.names.index(name)]
        except ValueError:
            raise KeyError(f"No parameter named {name!r} in posterior") from None

    def diagnostics(self) -> Dict[str, Any]:
        return {
            "converged": self.converged,
            "rhat": dict(self.rhat),
            "ess": dict(self.ess),
            "acceptance_fraction": self.acceptance_fraction,
            "n_samples": int(self.samples.shape[0]),
        }

    def write_csv(self, path: Path) -> Path:
        """Columnar samples with the log-probability as the last column."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            f.write(f"# schema_version={SCHEMA_VERSION}\n")
            writer = csv.writer(f)
            writer.writerow(self.names + ["log_prob"])
            for row, lp in zip(self.samples, self.log_prob):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(lp))])
        return path


def _initial_walkers(log_prob, x0, lower, upper, n_walkers, jitter, rng, max_tries=1000):
    span = np.where(np.isfinite(upper - lower), upper - lower, 1.0)
    width = np.where(x0 != 0, jitter * np.abs(x0), jitter * span)
    walkers = np.empty((n_walkers, x0.size))
    for i in range(n_walkers):
        for _ in range(max_tries):
            candidate = x0 + width * rng.standard_normal(x0.size)
            if np.all(candidate >= lower) and np.all(candidate <= upper) and np.isfinite(log_prob(candidate)):
                walkers[i] = candidate
                break
        else:
            raise DomainError("Could not place walkers with finite log-probability around the start point")
    return walkers


def sample_posterior(
    log_prob: Callable[[np.ndarray], float],
    x0: Sequence[float],
    lower: Sequence[float],
    upper: Sequence[float],
    names: Sequence[str],
    n_steps: int = INFERENCE_DEFAULTS["mcmc_steps"],
    n_chains: int = INFERENCE_DEFAULTS["mcmc_chains"],
    seed: int = INFERENCE_DEFAULTS["mcmc_seed"],
    burn_fraction: float = INFERENCE_DEFAULTS["mcmc_burn_fraction"],
    jitter: float = INFERENCE_DEFAULTS["walker_jitter"],
) -> Posterior:
    """
    Affine-invariant ensemble sampling of a log-density inside a box.

    Proposals outside [lower, upper] are rejected. Every walker is one chain for the
    split R-hat and effective-sample-size diagnostics; a posterior that misses either
    criterion is returned with ``converged`` False.

    Raises:
        DomainError: With fewer than four chains.
    """
    x0 = np.asarray(x0, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    ndim = x0.size
    if n_chains < MIN_CHAINS:
        raise DomainError(f"At least {MIN_CHAINS} chains are required, got {n_chains}")
    if n_chains < 2 * ndim + 2:
        logger.warning(f"Raising chain count from {n_chains} to {2 * ndim + 2} for {ndim} parameters")
        n_chains = 2 * ndim + 2

    def bounded(x):
        if np.any(x < lower) or np.any(x > upper):
            return -np.inf
        return log_prob(x)

    rng = np.random.default_rng(seed)
    start = _initial_walkers(bounded, x0, lower, upper, n_chains, jitter, rng)
    sampler = emcee.EnsembleSampler(n_chains, ndim, bounded)
    sampler.random_state = np.random.RandomState(seed).get_state()
    sampler.run_mcmc(start, n_steps, progress=False)

    discard = int(burn_fraction * n_steps)
    chain = sampler.get_chain(discard=discard)
    log_probs = sampler.get_log_prob(discard=discard, flat=True)
    by_chain = np.transpose(chain, (1, 2, 0))  # (walkers, ndim, steps)

    names = list(names)
    rhat = {name: split_rhat(by_chain[:, i, :]) for i, name in enumerate(names)}
    ess = {name: effective_sample_size(by_chain[:, i, :]) for i, name in enumerate(names)}
    posterior = Posterior(
        names,
        chain.reshape(-1, ndim),
        log_probs,
        rhat,
        ess,
        float(np.mean(sampler.acceptance_fraction)),
        {"n_chains": n_chains, "n_steps": n_steps, "discard": discard, "seed": seed},
    )
    if not posterior.converged:
        worst = max(rhat, key=rhat.get)
        fewest = min(ess, key=ess.get)
        logger.warning(
            f"MCMC diagnostics failed: max R-hat {rhat[worst]:.3f} ({worst}), "
            f"min ESS {ess[fewest]:.0f} ({fewest})"
        )
    return posterior


def run_mcmc(
    spectra: Sequence[BinnedSpectrum],
    init: ModelParams,
    n_steps: int = INFERENCE_DEFAULTS["mcmc_steps"],
    n_chains: int = INFERENCE_DEFAULTS["mcmc_chains"],
    seed: int = INFERENCE_DEFAULTS["mcmc_seed"],
    settings: Optional[LikelihoodSettings] = None,
    sigma_q_centres: Optional[Sequence[float]] = None,
    burn_fraction: float = INFERENCE_DEFAULTS["mcmc_burn_fraction"],
) -> Posterior:
    """Sample the joint posterior with walkers started around ``init`` (usually the MAP point)."""
    model = JointModel(spectra, settings, sigma_q_centres, reference=init)
    posterior = sample_posterior(
        model, model.pack(init), model.lower, model.upper, model.names,
        n_steps=n_steps, n_chains=n_chains, seed=seed, burn_fraction=burn_fraction,
    )
    posterior.metadata.update({
        "gas": model.settings.gas.name,
        "dataset_ids": model.dataset_ids,
        "total_constraint": model.settings.total_constraint,
    })
    logger.info(
        f"MCMC over {model.n_datasets} datasets: {posterior.samples.shape[0]} draws, "
        f"acceptance {posterior.acceptance_fraction:.2f}, converged={posterior.converged}"
    )
    return posterior
