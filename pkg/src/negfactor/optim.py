"""Gradient computation and Adam fitting of all model parameters.

Gradients are derived by hand and fully vectorized. The factorization
chain uses two identities: the derivative of the cell probability with
respect to one pairing term zeta is the product of all other (1 - zeta)
factors, computed stably as exp(sum log1p(-zeta) - log1p(-zeta_own)); and
the derivative of a probability with respect to its logit is p (1 - p).

The per-cell weights alpha' on the neg-raising loss are deliberately
treated as constants: alpha receives gradients only through the
acceptability channel, so the optimizer cannot shrink the weighted loss
by discounting hard cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .dataset import ResponseTable, clamp_responses
from .errors import ConsistencyError, CoverageError, DimensionError, FitError
from .factorization import FactorParams, Hyperparams, negraising_from_probs
from .model import FittedModel
from .response import (
    PREDICTION_CLAMP,
    PROB_CLAMP,
    AcceptabilityCells,
    EffectsParams,
    negraising_record_losses,
)

CONVERGENCE_WINDOW = 100


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings; defaults follow the published fitting recipe."""

    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_iterations: int = 30_000
    convergence_tol: float = 1e-6
    patience: int = 2
    n_restarts: int = 3
    seed: int = 0
    init_scale: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_iterations < 0 or self.n_restarts < 1:
            raise ValueError("max_iterations must be >= 0 and n_restarts >= 1")


@dataclass
class FitResult:
    model: FittedModel
    trajectory: list[float]
    iterations_run: int
    converged: bool


@dataclass
class Gradient:
    """Objective gradient, in the same containers as the parameters.

    Frozen boundary factors are represented by None entries: they are not
    parameters, so they have no gradient components at all.
    """

    factors: FactorParams
    effects: EffectsParams
    alpha: np.ndarray
    loss: float


class ParameterPack:
    """Flat-vector view over every optimized parameter.

    Frozen boundary factor arrays are simply absent from the layout, so
    they can never receive updates.
    """

    def __init__(self, hyper: Hyperparams, n_verbs: int, n_frames: int,
                 n_participants: int, n_cells: int):
        self.hyper = hyper
        self.n_verbs = n_verbs
        self.n_frames = n_frames
        self.n_participants = n_participants
        self.n_cells = n_cells
        layout: list[tuple[str, tuple[int, ...]]] = []
        if hyper.n_structural:
            layout += [
                ("lambda", (n_verbs, hyper.n_structural)),
                ("pi", (hyper.n_structural, n_frames)),
                ("omega", (hyper.n_structural, 2, 2)),
            ]
        if hyper.n_lexical:
            layout += [
                ("psi", (n_verbs, hyper.n_lexical)),
                ("phi", (hyper.n_lexical, 2, 2)),
            ]
        layout += [
            ("beta0", ()), ("sigma0", ()),
            ("beta", (n_participants,)), ("sigma", (n_participants,)),
            ("beta0_acc", ()), ("sigma0_acc", ()),
            ("beta_acc", (n_participants,)), ("sigma_acc", (n_participants,)),
            ("log_var_beta", ()), ("log_var_sigma", ()),
            ("log_var_beta_acc", ()), ("log_var_sigma_acc", ()),
            ("alpha", (n_cells,)),
        ]
        self._slices: dict[str, tuple[slice, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in layout:
            size = int(np.prod(shape)) if shape else 1
            self._slices[name] = (slice(offset, offset + size), shape)
            offset += size
        self.size = offset

    def _values(self, factors: FactorParams, effects: EffectsParams, alpha: np.ndarray):
        return {
            "lambda": factors.lambda_logits,
            "pi": factors.pi_logits,
            "omega": factors.omega_logits,
            "psi": factors.psi_logits,
            "phi": factors.phi_logits,
            "beta0": effects.beta0,
            "sigma0": effects.sigma0,
            "beta": effects.beta,
            "sigma": effects.sigma,
            "beta0_acc": effects.beta0_acc,
            "sigma0_acc": effects.sigma0_acc,
            "beta_acc": effects.beta_acc,
            "sigma_acc": effects.sigma_acc,
            "log_var_beta": effects.log_var_beta,
            "log_var_sigma": effects.log_var_sigma,
            "log_var_beta_acc": effects.log_var_beta_acc,
            "log_var_sigma_acc": effects.log_var_sigma_acc,
            "alpha": alpha,
        }

    def pack(self, factors: FactorParams, effects: EffectsParams, alpha: np.ndarray) -> np.ndarray:
        values = self._values(factors, effects, alpha)
        x = np.empty(self.size)
        for name, (sl, shape) in self._slices.items():
            x[sl] = np.reshape(values[name], -1) if shape else float(values[name])
        return x

    def unpack(self, x: np.ndarray) -> tuple[FactorParams, EffectsParams, np.ndarray]:
        def take(name):
            sl, shape = self._slices[name]
            return x[sl].reshape(shape).copy() if shape else float(x[sl][0])

        n_t, n_i = self.hyper.n_structural, self.hyper.n_lexical
        factors = FactorParams(
            hyper=self.hyper,
            n_verbs=self.n_verbs,
            n_frames=self.n_frames,
            lambda_logits=take("lambda") if n_t else None,
            pi_logits=take("pi") if n_t else None,
            omega_logits=take("omega") if n_t else None,
            psi_logits=take("psi") if n_i else None,
            phi_logits=take("phi") if n_i else None,
        )
        effects = EffectsParams(
            beta0=take("beta0"),
            sigma0=take("sigma0"),
            beta=take("beta"),
            sigma=take("sigma"),
            beta0_acc=take("beta0_acc"),
            sigma0_acc=take("sigma0_acc"),
            beta_acc=take("beta_acc"),
            sigma_acc=take("sigma_acc"),
            log_var_beta=take("log_var_beta"),
            log_var_sigma=take("log_var_sigma"),
            log_var_beta_acc=take("log_var_beta_acc"),
            log_var_sigma_acc=take("log_var_sigma_acc"),
        )
        return factors, effects, take("alpha")

    def name_at(self, flat_index: int) -> str:
        for name, (sl, _) in self._slices.items():
            if sl.start <= flat_index < sl.stop:
                return f"{name}[{flat_index - sl.start}]"
        return f"component {flat_index}"


def channel_backward(values: np.ndarray, cell_idx: np.ndarray, part_idx: np.ndarray,
                     responses: np.ndarray, beta0: float, sigma0: float,
                     beta: np.ndarray, sigma: np.ndarray, n_cells: int,
                     weights: np.ndarray | None = None,
                     mask: np.ndarray | None = None):
    """Loss and gradients for one response channel with per-cell latents.

    Returns (loss, g_values, g_beta0, g_sigma0, g_beta, g_sigma) where
    g_values is per cell. ``weights`` are per-record constants (the
    blocked alpha' weights); ``mask`` restricts the data term.
    """
    n_participants = beta.shape[0]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        scale = np.exp(sigma0 + sigma[part_idx])
        vals_rec = values[cell_idx]
        pred = expit(scale * vals_rec + beta0 + beta[part_idx])
        pred_c = np.clip(pred, PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP)
        each = responses * np.log(responses / pred_c) \
            + (1.0 - responses) * np.log((1.0 - responses) / (1.0 - pred_c))
        if weights is not None:
            each = weights * each
        loss = float(np.sum(each[mask])) if mask is not None else float(np.sum(each))
        inside = (pred >= PREDICTION_CLAMP) & (pred <= 1.0 - PREDICTION_CLAMP)
        g_z = np.where(inside, pred - responses, 0.0)
        if weights is not None:
            g_z = weights * g_z
        if mask is not None:
            g_z = np.where(mask, g_z, 0.0)
        g_beta0 = float(np.sum(g_z))
        g_beta = np.bincount(part_idx, weights=g_z, minlength=n_participants)
        g_scaled = g_z * scale
        g_sigma0 = float(np.sum(g_scaled * vals_rec))
        g_sigma = np.bincount(part_idx, weights=g_scaled * vals_rec, minlength=n_participants)
        g_values = np.bincount(cell_idx, weights=g_scaled, minlength=n_cells)
    return loss, g_values, g_beta0, g_sigma0, g_beta, g_sigma


def _prior_backward(effects: EffectsParams):
    """Prior penalty plus gradients for random effects and log-variances.

    Uses numpy float semantics so that degenerate log-variances produce
    inf/nan values (caught by the optimizer's finiteness checks) instead of
    raising range errors mid-gradient.
    """
    penalty = 0.0
    value_grads = []
    log_var_grads = []
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for values, log_var in effects.random_effect_groups():
            variance = np.exp(np.float64(log_var))
            sum_sq = np.float64(np.sum(values * values))
            n = values.shape[0]
            penalty += float(sum_sq / (2.0 * variance) + 0.5 * n * log_var)
            value_grads.append(values / variance)
            log_var_grads.append(float(-sum_sq / (2.0 * variance) + 0.5 * n))
    return penalty, value_grads, log_var_grads


def _forward_backward(x: np.ndarray, pack: ParameterPack, table: ResponseTable,
                      nr_mask: np.ndarray | None):
    """Objective value and packed gradient at the packed point x."""
    factors, effects, alpha = pack.unpack(x)
    probs = factors.probabilities()
    cv, cf, cj, ck = (table.cells[:, i] for i in range(4))
    lam_c = probs.lambda_[cv]           # (C, eff_t)
    pi_c = probs.pi[:, cf].T
    om_c = probs.omega[:, cj, ck].T
    psi_c = probs.psi[cv]               # (C, eff_i)
    phi_c = probs.phi[:, cj, ck].T
    a = lam_c * pi_c * om_c
    b = psi_c * phi_c
    zeta = a[:, :, None] * b[:, None, :]
    with np.errstate(divide="ignore"):
        log_miss = np.log1p(-zeta)
    s = log_miss.sum(axis=(1, 2))
    pn = -np.expm1(s)
    pn_c = np.clip(pn, PROB_CLAMP, 1.0 - PROB_CLAMP)
    nu = logit(pn_c)

    weights = expit(alpha)[table.cell_idx]
    nr_loss, g_nu, g_beta0, g_sigma0, g_beta, g_sigma = channel_backward(
        nu, table.cell_idx, table.part_idx, table.negraising,
        effects.beta0, effects.sigma0, effects.beta, effects.sigma,
        table.n_cells, weights=weights, mask=nr_mask,
    )
    acc_loss, g_alpha, g_beta0_acc, g_sigma0_acc, g_beta_acc, g_sigma_acc = channel_backward(
        alpha, table.cell_idx, table.part_idx, table.acceptability,
        effects.beta0_acc, effects.sigma0_acc, effects.beta_acc, effects.sigma_acc,
        table.n_cells,
    )

    # chain g_nu back through the clamped logit and the factorization
    active = (pn >= PROB_CLAMP) & (pn <= 1.0 - PROB_CLAMP)
    g_pn = np.where(active, g_nu / (pn_c * (1.0 - pn_c)), 0.0)
    with np.errstate(invalid="ignore", over="ignore"):
        others = np.exp(s[:, None, None] - log_miss)
    g_zeta = g_pn[:, None, None] * others
    g_zeta[~active] = 0.0
    g_a = (g_zeta * b[:, None, :]).sum(axis=2)
    g_b = (g_zeta * a[:, :, None]).sum(axis=1)

    grads = {"alpha": g_alpha}
    if pack.hyper.n_structural:
        n_t = pack.hyper.n_structural
        g_lambda = np.zeros((pack.n_verbs, n_t))
        np.add.at(g_lambda, cv, g_a * pi_c * om_c)
        g_pi = np.zeros((pack.n_frames, n_t))
        np.add.at(g_pi, cf, g_a * lam_c * om_c)
        g_omega = np.zeros((4, n_t))
        np.add.at(g_omega, cj * 2 + ck, g_a * lam_c * pi_c)
        lam, pi, om = probs.lambda_, probs.pi, probs.omega
        grads["lambda"] = g_lambda * lam * (1.0 - lam)
        grads["pi"] = g_pi.T * pi * (1.0 - pi)
        grads["omega"] = g_omega.T.reshape(n_t, 2, 2) * om * (1.0 - om)
    if pack.hyper.n_lexical:
        n_i = pack.hyper.n_lexical
        g_psi = np.zeros((pack.n_verbs, n_i))
        np.add.at(g_psi, cv, g_b * phi_c)
        g_phi = np.zeros((4, n_i))
        np.add.at(g_phi, cj * 2 + ck, g_b * psi_c)
        psi, phi = probs.psi, probs.phi
        grads["psi"] = g_psi * psi * (1.0 - psi)
        grads["phi"] = g_phi.T.reshape(n_i, 2, 2) * phi * (1.0 - phi)

    penalty, value_grads, log_var_grads = _prior_backward(effects)
    grads["beta0"] = g_beta0
    grads["sigma0"] = g_sigma0
    grads["beta"] = g_beta + value_grads[0]
    grads["sigma"] = g_sigma + value_grads[1]
    grads["beta0_acc"] = g_beta0_acc
    grads["sigma0_acc"] = g_sigma0_acc
    grads["beta_acc"] = g_beta_acc + value_grads[2]
    grads["sigma_acc"] = g_sigma_acc + value_grads[3]
    grads["log_var_beta"] = log_var_grads[0]
    grads["log_var_sigma"] = log_var_grads[1]
    grads["log_var_beta_acc"] = log_var_grads[2]
    grads["log_var_sigma_acc"] = log_var_grads[3]

    g = np.empty(pack.size)
    for name, (sl, shape) in pack._slices.items():
        g[sl] = np.reshape(grads[name], -1) if shape else float(grads[name])
    return nr_loss + acc_loss + penalty, g


def gradient(table: ResponseTable, factors: FactorParams, effects: EffectsParams,
             cells: AcceptabilityCells, *, nr_mask: np.ndarray | None = None) -> Gradient:
    """Analytic gradient of the full objective at the given parameters.

    Honors the weight-blocking rule: alpha components reflect only the
    acceptability channel. Raises FitError naming the offending parameter
    if any component is non-finite.
    """
    if factors.n_verbs != table.n_verbs or factors.n_frames != table.n_frames:
        raise DimensionError("factor dimensions do not match the table")
    if cells.alpha.shape[0] != table.n_cells:
        raise ConsistencyError(
            f"alpha has {cells.alpha.shape[0]} cells, table has {table.n_cells}"
        )
    pack = ParameterPack(factors.hyper, table.n_verbs, table.n_frames,
                         table.n_participants, table.n_cells)
    x = pack.pack(factors, effects, cells.alpha)
    loss, g = _forward_backward(x, pack, table, nr_mask)
    if not np.all(np.isfinite(g)):
        bad = int(np.argmin(np.isfinite(g)))
        raise FitError(f"non-finite gradient for {pack.name_at(bad)}")
    grad_factors, grad_effects, grad_alpha = pack.unpack(g)
    return Gradient(factors=grad_factors, effects=grad_effects, alpha=grad_alpha, loss=loss)


def adam_minimize(x0: np.ndarray, fun, config: FitConfig, name_at=None):
    """Minimize fun(x) -> (loss, grad) with Adam and windowed convergence.

    Convergence: relative loss change below convergence_tol across
    consecutive CONVERGENCE_WINDOW-iteration windows, ``patience`` times in
    a row. Returns (x, trajectory, converged, update_steps); the last
    trajectory entry is the loss at the returned x.
    """
    x = np.array(x0, dtype=float, copy=True)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trajectory: list[float] = []
    streak = 0
    converged = False
    steps = 0
    one_m_b1 = 1.0 - config.adam_beta1
    one_m_b2 = 1.0 - config.adam_beta2
    for it in range(config.max_iterations):
        loss, grad = fun(x)
        if not np.isfinite(loss):
            tail = ", ".join(f"{value:.6g}" for value in trajectory[-8:])
            raise FitError(f"loss became non-finite at iteration {it}; recent losses [{tail}]")
        if not np.all(np.isfinite(grad)):
            bad = int(np.argmin(np.isfinite(grad)))
            where = name_at(bad) if name_at else f"component {bad}"
            raise FitError(f"non-finite gradient for {where} at iteration {it}")
        trajectory.append(float(loss))
        if it > 0 and it % CONVERGENCE_WINDOW == 0:
            previous = trajectory[it - CONVERGENCE_WINDOW]
            relative = abs(trajectory[it] - previous) / max(abs(previous), 1e-12)
            if relative < config.convergence_tol:
                streak += 1
                if streak >= config.patience:
                    converged = True
                    break
            else:
                streak = 0
        m = config.adam_beta1 * m + one_m_b1 * grad
        v = config.adam_beta2 * v + one_m_b2 * (grad * grad)
        steps = it + 1
        m_hat = m / (1.0 - config.adam_beta1 ** steps)
        v_hat = v / (1.0 - config.adam_beta2 ** steps)
        x -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    if not converged:
        # x moved after the last recorded loss (or never ran); record its loss
        final_loss, _ = fun(x)
        if not np.isfinite(final_loss):
            tail = ", ".join(f"{value:.6g}" for value in trajectory[-8:])
            raise FitError(f"loss became non-finite after the final step; recent losses [{tail}]")
        trajectory.append(float(final_loss))
    return x, trajectory, converged, steps


def fit(table: ResponseTable, hyper: Hyperparams, config: FitConfig | None = None,
        nr_mask: np.ndarray | None = None) -> FitResult:
    """Fit all parameters to the table by Adam with random restarts.

    Args:
        table: judgment data; the acceptability channel always uses every
            record.
        hyper: latent dimensionality of the factorization.
        config: optimizer settings (defaults: FitConfig()).
        nr_mask: boolean record mask restricting the neg-raising data term,
            used by cross-validation to hold sentences out.

    Returns the best restart by final training loss. Deterministic for a
    fixed seed: restart initializations come from spawned child streams of
    config.seed and ties keep the earliest restart.
    """
    if config is None:
        config = FitConfig()
    if table.n_records == 0:
        raise DimensionError("cannot fit an empty table")
    if nr_mask is not None:
        nr_mask = np.asarray(nr_mask, dtype=bool)
        if nr_mask.shape != (table.n_records,):
            raise DimensionError("nr_mask must have one entry per record")
    pack = ParameterPack(hyper, table.n_verbs, table.n_frames,
                         table.n_participants, table.n_cells)
    alpha0 = logit(clamp_responses(table.cell_mean_acceptability()))
    effects0 = EffectsParams.zeros(table.n_participants)

    def objective(x):
        return _forward_backward(x, pack, table, nr_mask)

    best = None
    for child in np.random.SeedSequence(config.seed).spawn(config.n_restarts):
        rng = np.random.default_rng(child)
        factors0 = FactorParams.random(hyper, table.n_verbs, table.n_frames, rng,
                                       scale=config.init_scale)
        x0 = pack.pack(factors0, effects0, alpha0)
        outcome = adam_minimize(x0, objective, config, pack.name_at)
        if best is None or outcome[1][-1] < best[1][-1]:
            best = outcome
    x, trajectory, converged, steps = best
    factors, effects, alpha = pack.unpack(x)
    cells = AcceptabilityCells(alpha)
    nr_losses = negraising_record_losses(table, factors, effects, cells)
    if nr_mask is not None:
        nr_losses = nr_losses[nr_mask]
    model = FittedModel(
        hyper=hyper,
        verbs=table.verbs,
        frames=table.frames,
        participants=table.participants,
        cells=table.cells.copy(),
        factors=factors,
        effects=effects,
        alpha=alpha,
        seed=config.seed,
        final_loss=float(trajectory[-1]),
        final_data_loss=float(np.sum(nr_losses)),
        converged=converged,
        iterations=steps,
    )
    return FitResult(model=model, trajectory=trajectory, iterations_run=steps, converged=converged)


def _translate(labels_from: tuple[str, ...], labels_to: tuple[str, ...], kind: str,
               allow_missing: bool = False) -> np.ndarray:
    index = {label: i for i, label in enumerate(labels_to)}
    out = np.empty(len(labels_from), dtype=np.int64)
    missing = []
    for i, label in enumerate(labels_from):
        if label in index:
            out[i] = index[label]
        elif allow_missing:
            out[i] = -1
        else:
            missing.append(label)
    if missing:
        raise CoverageError(f"model does not cover {kind}: {missing[:5]}")
    return out


def record_losses(model: FittedModel, table: ResponseTable) -> np.ndarray:
    """Per-record weighted neg-raising loss of a model on (possibly new) data.

    Participants unseen during fitting are scored with zero random effects
    (the prior mean). Verbs, frames, or cells outside the model raise
    CoverageError.
    """
    same_vocab = (
        model.verbs == table.verbs
        and model.frames == table.frames
        and model.participants == table.participants
        and np.array_equal(model.cells, table.cells)
    )
    if same_vocab:
        return negraising_record_losses(table, model.factors, model.effects,
                                        AcceptabilityCells(model.alpha))

    verb_map = _translate(table.verbs, model.verbs, "verbs")
    frame_map = _translate(table.frames, model.frames, "frames")
    part_map = _translate(table.participants, model.participants, "participants",
                          allow_missing=True)

    lookup = model.cell_lookup()
    cell_alpha = np.empty(table.n_cells)
    for row, (v, f, j, k) in enumerate(table.cells):
        key = (table.verbs[v], table.frames[f], int(j), int(k))
        if key not in lookup:
            raise CoverageError(f"model does not cover cell {key}")
        cell_alpha[row] = model.alpha[lookup[key]]

    probs = model.factors.probabilities()
    pn = negraising_from_probs(
        probs,
        verb_map[table.cells[:, 0]],
        frame_map[table.cells[:, 1]],
        table.cells[:, 2],
        table.cells[:, 3],
    )
    nu = logit(np.clip(pn, PROB_CLAMP, 1.0 - PROB_CLAMP))

    # unseen participants get the prior-mean effects via a padded zero slot
    beta = np.append(model.effects.beta, 0.0)
    sigma = np.append(model.effects.sigma, 0.0)
    part = part_map[table.part_idx]
    part = np.where(part >= 0, part, len(model.participants))
    scale = np.exp(model.effects.sigma0 + sigma[part])
    pred = expit(scale * nu[table.cell_idx] + model.effects.beta0 + beta[part])
    pred = np.clip(pred, PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP)
    r = table.negraising
    each = r * np.log(r / pred) + (1.0 - r) * np.log((1.0 - r) / (1.0 - pred))
    return expit(cell_alpha)[table.cell_idx] * each


def evaluate(model: FittedModel, table: ResponseTable,
             record_mask: np.ndarray | None = None) -> float:
    """Weighted neg-raising data loss (no priors) on the given records."""
    losses = record_losses(model, table)
    if record_mask is not None:
        losses = losses[record_mask]
    return float(np.sum(losses))


def evaluate_per_cell(model: FittedModel, table: ResponseTable,
                      record_mask: np.ndarray | None = None) -> np.ndarray:
    """Per-cell sums of the weighted neg-raising loss; cells with no
    selected records get 0."""
    losses = record_losses(model, table)
    if record_mask is not None:
        losses = np.where(record_mask, losses, 0.0)
    return np.bincount(table.cell_idx, weights=losses, minlength=table.n_cells)
