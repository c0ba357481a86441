"""Fitted model container with byte-stable JSON serialization.

Logits are stored, not probabilities, so that serialization is lossless:
floats are written with Python's shortest round-trip representation and
keys are sorted, which makes identical fits produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .factorization import FactorParams, Hyperparams
from .response import EffectsParams

MODEL_FORMAT = "negfactor-model"
MODEL_VERSION = 1


@dataclass
class FittedModel:
    """Everything needed to score new records and reproduce a fit."""

    hyper: Hyperparams
    verbs: tuple[str, ...]
    frames: tuple[str, ...]
    participants: tuple[str, ...]
    cells: np.ndarray
    factors: FactorParams
    effects: EffectsParams
    alpha: np.ndarray
    seed: int
    final_loss: float
    final_data_loss: float
    converged: bool
    iterations: int

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else a.tolist()

        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "hyper": {"n_lexical": self.hyper.n_lexical, "n_structural": self.hyper.n_structural},
            "verbs": list(self.verbs),
            "frames": list(self.frames),
            "participants": list(self.participants),
            "cells": self.cells.tolist(),
            "factors": {
                "lambda": arr(self.factors.lambda_logits),
                "pi": arr(self.factors.pi_logits),
                "omega": arr(self.factors.omega_logits),
                "psi": arr(self.factors.psi_logits),
                "phi": arr(self.factors.phi_logits),
            },
            "effects": {
                "beta0": self.effects.beta0,
                "sigma0": self.effects.sigma0,
                "beta": self.effects.beta.tolist(),
                "sigma": self.effects.sigma.tolist(),
                "beta0_acc": self.effects.beta0_acc,
                "sigma0_acc": self.effects.sigma0_acc,
                "beta_acc": self.effects.beta_acc.tolist(),
                "sigma_acc": self.effects.sigma_acc.tolist(),
                "log_var_beta": self.effects.log_var_beta,
                "log_var_sigma": self.effects.log_var_sigma,
                "log_var_beta_acc": self.effects.log_var_beta_acc,
                "log_var_sigma_acc": self.effects.log_var_sigma_acc,
            },
            "alpha": self.alpha.tolist(),
            "seed": self.seed,
            "final_loss": self.final_loss,
            "final_data_loss": self.final_data_loss,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_json())
            handle.write("\n")

    @classmethod
    def from_dict(cls, data: dict) -> "FittedModel":
        try:
            if data["format"] != MODEL_FORMAT:
                raise SchemaError(f"unexpected format tag {data['format']!r}")
            hyper = Hyperparams(
                n_lexical=int(data["hyper"]["n_lexical"]),
                n_structural=int(data["hyper"]["n_structural"]),
            )
            verbs = tuple(data["verbs"])
            frames = tuple(data["frames"])
            participants = tuple(data["participants"])

            def arr(value, dtype=float):
                return None if value is None else np.asarray(value, dtype=dtype)

            factors = FactorParams(
                hyper=hyper,
                n_verbs=len(verbs),
                n_frames=len(frames),
                lambda_logits=arr(data["factors"]["lambda"]),
                pi_logits=arr(data["factors"]["pi"]),
                omega_logits=arr(data["factors"]["omega"]),
                psi_logits=arr(data["factors"]["psi"]),
                phi_logits=arr(data["factors"]["phi"]),
            )
            eff = data["effects"]
            effects = EffectsParams(
                beta0=float(eff["beta0"]),
                sigma0=float(eff["sigma0"]),
                beta=np.asarray(eff["beta"], dtype=float),
                sigma=np.asarray(eff["sigma"], dtype=float),
                beta0_acc=float(eff["beta0_acc"]),
                sigma0_acc=float(eff["sigma0_acc"]),
                beta_acc=np.asarray(eff["beta_acc"], dtype=float),
                sigma_acc=np.asarray(eff["sigma_acc"], dtype=float),
                log_var_beta=float(eff["log_var_beta"]),
                log_var_sigma=float(eff["log_var_sigma"]),
                log_var_beta_acc=float(eff["log_var_beta_acc"]),
                log_var_sigma_acc=float(eff["log_var_sigma_acc"]),
            )
            return cls(
                hyper=hyper,
                verbs=verbs,
                frames=frames,
                participants=participants,
                cells=np.asarray(data["cells"], dtype=np.int64),
                factors=factors,
                effects=effects,
                alpha=np.asarray(data["alpha"], dtype=float),
                seed=int(data["seed"]),
                final_loss=float(data["final_loss"]),
                final_data_loss=float(data["final_data_loss"]),
                converged=bool(data["converged"]),
                iterations=int(data["iterations"]),
            )
        except KeyError as missing:
            raise SchemaError(f"model JSON missing key {missing}") from None

    @classmethod
    def load(cls, path) -> "FittedModel":
        with open(path, encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))

    def cell_lookup(self) -> dict[tuple[str, str, int, int], int]:
        """Map (verb, frame, subject id, tense id) to this model's cell row."""
        return {
            (self.verbs[v], self.frames[f], int(j), int(k)): idx
            for idx, (v, f, j, k) in enumerate(self.cells)
        }
