"""Response links, participant effects, and the weighted divergence loss.

Both slider channels share the same link shape: the latent cell value is
scaled by a per-participant factor exp(sigma0 + sigma_l), shifted by
beta0 + beta_l, and squashed through the inverse logit. The neg-raising
channel reads its latent value off the factor model; the acceptability
channel optimizes one free alpha per cell, whose inverse logit also serves
as that cell's weight on the neg-raising loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .dataset import ResponseTable
from .errors import ConsistencyError
from .factorization import FactorParams, negraising_from_probs

PROB_CLAMP = 1e-7
PREDICTION_CLAMP = 1e-15


@dataclass
class EffectsParams:
    """Fixed and per-participant link parameters for both channels.

    ``beta``/``sigma`` hold per-participant shift and log-scale offsets for
    the neg-raising channel; the ``_acc`` fields are their acceptability
    counterparts. Random-effect variances are optimized on the log scale,
    which keeps them positive by construction.
    """

    beta0: float
    sigma0: float
    beta: np.ndarray
    sigma: np.ndarray
    beta0_acc: float
    sigma0_acc: float
    beta_acc: np.ndarray
    sigma_acc: np.ndarray
    log_var_beta: float = 0.0
    log_var_sigma: float = 0.0
    log_var_beta_acc: float = 0.0
    log_var_sigma_acc: float = 0.0

    @classmethod
    def zeros(cls, n_participants: int) -> "EffectsParams":
        return cls(
            beta0=0.0,
            sigma0=0.0,
            beta=np.zeros(n_participants),
            sigma=np.zeros(n_participants),
            beta0_acc=0.0,
            sigma0_acc=0.0,
            beta_acc=np.zeros(n_participants),
            sigma_acc=np.zeros(n_participants),
        )

    @property
    def n_participants(self) -> int:
        return self.beta.shape[0]

    def random_effect_groups(self):
        """(values, log_variance) pairs in a fixed order, for the prior."""
        return (
            (self.beta, self.log_var_beta),
            (self.sigma, self.log_var_sigma),
            (self.beta_acc, self.log_var_beta_acc),
            (self.sigma_acc, self.log_var_sigma_acc),
        )


@dataclass
class AcceptabilityCells:
    """One free alpha per observed (verb, frame, subject, tense) cell."""

    alpha: np.ndarray

    def weights(self) -> np.ndarray:
        """Neg-raising loss weights: the inverse logit of each alpha."""
        return expit(self.alpha)


def predict_negraising(nu, effects: EffectsParams, participant):
    """Expected neg-raising response: logit^-1(exp(s0+s_l) nu + b0 + b_l)."""
    participant = np.asarray(participant)
    scale = np.exp(effects.sigma0 + effects.sigma[participant])
    out = expit(scale * np.asarray(nu, dtype=float) + effects.beta0 + effects.beta[participant])
    return float(out) if out.ndim == 0 else out


def predict_acceptability(alpha, effects: EffectsParams, participant):
    """Expected acceptability response, with the primed link parameters."""
    participant = np.asarray(participant)
    scale = np.exp(effects.sigma0_acc + effects.sigma_acc[participant])
    out = expit(scale * np.asarray(alpha, dtype=float) + effects.beta0_acc + effects.beta_acc[participant])
    return float(out) if out.ndim == 0 else out


def kl_loss(r, r_hat):
    """KL divergence between Bernoulli(r) and Bernoulli(r_hat).

    Zero exactly when the arguments are equal; both must lie strictly
    inside (0, 1).
    """
    r = np.asarray(r, dtype=float)
    r_hat = np.asarray(r_hat, dtype=float)
    if np.any((r <= 0.0) | (r >= 1.0) | (r_hat <= 0.0) | (r_hat >= 1.0)):
        raise ValueError("kl_loss arguments must lie strictly inside (0, 1)")
    out = r * np.log(r / r_hat) + (1.0 - r) * np.log((1.0 - r) / (1.0 - r_hat))
    return float(out) if out.ndim == 0 else out


def prior_penalty(effects: EffectsParams) -> float:
    """Gaussian negative log prior over random effects, up to constants.

    Each group contributes sum(x^2) / (2 v) plus the normalizer
    (n/2) log v, with v the group's optimized variance.
    """
    total = 0.0
    for values, log_var in effects.random_effect_groups():
        variance = np.exp(log_var)
        total += float(np.sum(values * values) / (2.0 * variance))
        total += 0.5 * values.shape[0] * log_var
    return total


def cell_link_values(table: ResponseTable, factors: FactorParams) -> np.ndarray:
    """Latent nu per observed cell: logit of the clamped forward probability."""
    cells = table.cells
    pn = negraising_from_probs(
        factors.probabilities(), cells[:, 0], cells[:, 1], cells[:, 2], cells[:, 3]
    )
    return logit(np.clip(pn, PROB_CLAMP, 1.0 - PROB_CLAMP))


def negraising_record_losses(table: ResponseTable, factors: FactorParams,
                             effects: EffectsParams, cells: AcceptabilityCells,
                             *, unit_weights: bool = False,
                             weight_override: np.ndarray | None = None) -> np.ndarray:
    """Per-record weighted divergence alpha' * D(r || r_hat)."""
    if cells.alpha.shape[0] != table.n_cells:
        raise ConsistencyError(
            f"alpha has {cells.alpha.shape[0]} cells, table has {table.n_cells}"
        )
    nu = cell_link_values(table, factors)
    r_hat = predict_negraising(nu[table.cell_idx], effects, table.part_idx)
    r_hat = np.clip(r_hat, PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP)
    if unit_weights:
        weights = 1.0
    elif weight_override is not None:
        weights = weight_override
    else:
        weights = cells.weights()[table.cell_idx]
    return weights * kl_loss(table.negraising, r_hat)


def acceptability_record_losses(table: ResponseTable, effects: EffectsParams,
                                cells: AcceptabilityCells) -> np.ndarray:
    """Per-record divergence D(a || a_hat) for the acceptability channel."""
    if cells.alpha.shape[0] != table.n_cells:
        raise ConsistencyError(
            f"alpha has {cells.alpha.shape[0]} cells, table has {table.n_cells}"
        )
    a_hat = predict_acceptability(cells.alpha[table.cell_idx], effects, table.part_idx)
    a_hat = np.clip(a_hat, PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP)
    return kl_loss(table.acceptability, a_hat)


def total_loss(table: ResponseTable, factors: FactorParams, effects: EffectsParams,
               cells: AcceptabilityCells, *, nr_mask: np.ndarray | None = None,
               include_acceptability: bool = True, unit_weights: bool = False,
               weight_override: np.ndarray | None = None) -> float:
    """Full objective: weighted neg-raising and acceptability divergences plus priors.

    The per-cell weights alpha' enter as constants here and in the gradient;
    alpha receives gradients only through the acceptability channel, so the
    optimizer cannot zero out the neg-raising loss by driving weights down.

    Args:
        nr_mask: boolean record mask restricting the neg-raising term (the
            acceptability term always covers every record).
        include_acceptability: drop the acceptability data term entirely.
        unit_weights: replace all alpha' weights by 1.
        weight_override: explicit per-record weights replacing alpha'
            (used by finite-difference checks, which must hold the blocked
            weights constant).
    """
    nr = negraising_record_losses(
        table, factors, effects, cells,
        unit_weights=unit_weights, weight_override=weight_override,
    )
    if nr_mask is not None:
        nr = nr[nr_mask]
    loss = float(np.sum(nr))
    if include_acceptability:
        loss += float(np.sum(acceptability_record_losses(table, effects, cells)))
    return loss + prior_penalty(effects)
