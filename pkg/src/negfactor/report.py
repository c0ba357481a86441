"""Analysis artifacts from a fitted model.

Turns stored logits into probability tables for the structure mapping
(phi), the structure gate (omega), the frame loadings (pi), and the
per-verb properties, plus the per-verb score P(psi) * P(lambda) that
summarizes how strongly a verb licenses the inference in the
one-lexical/one-structural model. Everything is emitted as CSV (tables)
and JSON (the whole bundle).
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import spearmanr

from .dataset import SUBJECT_LABELS, TENSE_LABELS
from .errors import DimensionError, SchemaError
from .factorization import Hyperparams
from .model import FittedModel

BUNDLE_FORMAT = "negfactor-analysis"
BUNDLE_VERSION = 1


@dataclass
class AnalysisBundle:
    """Probability-scale view of a fitted model's factor parameters.

    verb_scores and psi_lambda_spearman are populated only for the
    (1, 1) model, where the per-verb product is a scalar; larger models
    keep the full psi and lambda_ matrices instead.
    """

    hyper: Hyperparams
    verbs: tuple[str, ...]
    frames: tuple[str, ...]
    phi: np.ndarray
    omega: np.ndarray
    pi: np.ndarray
    lambda_: np.ndarray
    psi: np.ndarray
    verb_scores: np.ndarray | None
    psi_lambda_spearman: float | None

    def to_dict(self) -> dict:
        spearman = self.psi_lambda_spearman
        if spearman is not None and np.isnan(spearman):
            spearman = None
        return {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "n_lexical": self.hyper.n_lexical,
            "n_structural": self.hyper.n_structural,
            "verbs": list(self.verbs),
            "frames": list(self.frames),
            "subjects": list(SUBJECT_LABELS),
            "tenses": list(TENSE_LABELS),
            "phi": self.phi.tolist(),
            "omega": self.omega.tolist(),
            "pi": self.pi.tolist(),
            "lambda": self.lambda_.tolist(),
            "psi": self.psi.tolist(),
            "verb_scores": None if self.verb_scores is None else self.verb_scores.tolist(),
            "psi_lambda_spearman": spearman,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> AnalysisBundle:
        try:
            if data["format"] != BUNDLE_FORMAT:
                raise SchemaError(f"not an analysis bundle: {data['format']!r}")
            hyper = Hyperparams(int(data["n_lexical"]), int(data["n_structural"]))
            scores = data["verb_scores"]
            spearman = data["psi_lambda_spearman"]
            if spearman is None and hyper.as_tuple() == (1, 1):
                spearman = float("nan")
            return cls(
                hyper=hyper,
                verbs=tuple(data["verbs"]),
                frames=tuple(data["frames"]),
                phi=np.array(data["phi"]).reshape(hyper.n_lexical, 2, 2),
                omega=np.array(data["omega"]).reshape(hyper.n_structural, 2, 2),
                pi=np.array(data["pi"]).reshape(hyper.n_structural, len(data["frames"])),
                lambda_=np.array(data["lambda"]).reshape(len(data["verbs"]), hyper.n_structural),
                psi=np.array(data["psi"]).reshape(len(data["verbs"]), hyper.n_lexical),
                verb_scores=None if scores is None else np.array(scores, dtype=float),
                psi_lambda_spearman=spearman,
            )
        except KeyError as err:
            raise SchemaError(f"bundle is missing field {err.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> AnalysisBundle:
        with open(path, encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


def _probabilities_or_empty(logits: np.ndarray | None, empty_shape: tuple[int, ...]) -> np.ndarray:
    if logits is None:
        return np.zeros(empty_shape)
    return expit(logits)


def analyze(model: FittedModel) -> AnalysisBundle:
    """Probability tables for a fitted model.

    Boundary models yield empty arrays for the absent side. For the (1, 1)
    model the bundle adds per-verb scores P(psi_v) * P(lambda_v) and the
    rank correlation between the two columns (a diagnostic: they tend to
    be nearly interchangeable in that model).
    """
    factors = model.factors
    n_verbs = len(model.verbs)
    n_frames = len(model.frames)
    phi = _probabilities_or_empty(factors.phi_logits, (0, 2, 2))
    psi = _probabilities_or_empty(factors.psi_logits, (n_verbs, 0))
    omega = _probabilities_or_empty(factors.omega_logits, (0, 2, 2))
    pi = _probabilities_or_empty(factors.pi_logits, (0, n_frames))
    lambda_ = _probabilities_or_empty(factors.lambda_logits, (n_verbs, 0))

    verb_scores = None
    psi_lambda_spearman = None
    if model.hyper.as_tuple() == (1, 1):
        verb_scores = psi[:, 0] * lambda_[:, 0]
        if n_verbs >= 2:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                psi_lambda_spearman = float(spearmanr(psi[:, 0], lambda_[:, 0]).statistic)
        else:
            psi_lambda_spearman = float("nan")
    return AnalysisBundle(
        hyper=model.hyper,
        verbs=model.verbs,
        frames=model.frames,
        phi=phi,
        omega=omega,
        pi=pi,
        lambda_=lambda_,
        psi=psi,
        verb_scores=verb_scores,
        psi_lambda_spearman=psi_lambda_spearman,
    )


def rank_verbs(bundle: AnalysisBundle) -> list[tuple[str, float]]:
    """Verbs ordered by score, best first; ties broken alphabetically."""
    if bundle.verb_scores is None:
        raise DimensionError(
            "verb ranking needs the (1, 1) model; this bundle is "
            f"{bundle.hyper.as_tuple()}"
        )
    pairs = [(verb, float(score)) for verb, score in zip(bundle.verbs, bundle.verb_scores)]
    return sorted(pairs, key=lambda pair: (-pair[1], pair[0]))


def _write_subject_tense_csv(path, array: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["property", "subject", "tense", "probability"])
        for t in range(array.shape[0]):
            for j, subject in enumerate(SUBJECT_LABELS):
                for k, tense in enumerate(TENSE_LABELS):
                    writer.writerow([t, subject, tense, repr(float(array[t, j, k]))])


def write_analysis(bundle: AnalysisBundle, out_dir) -> dict[str, str]:
    """Write phi.csv, omega.csv, pi.csv, verb_scores.csv, bundle.json.

    verb_scores.csv is ranked and only written for (1, 1) bundles; other
    shapes keep the full matrices in bundle.json. Returns name -> path.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    paths["phi.csv"] = os.path.join(out_dir, "phi.csv")
    _write_subject_tense_csv(paths["phi.csv"], bundle.phi)
    paths["omega.csv"] = os.path.join(out_dir, "omega.csv")
    _write_subject_tense_csv(paths["omega.csv"], bundle.omega)

    paths["pi.csv"] = os.path.join(out_dir, "pi.csv")
    with open(paths["pi.csv"], "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["property", "frame", "probability"])
        for t in range(bundle.pi.shape[0]):
            for f, frame in enumerate(bundle.frames):
                writer.writerow([t, frame, repr(float(bundle.pi[t, f]))])

    if bundle.verb_scores is not None:
        paths["verb_scores.csv"] = os.path.join(out_dir, "verb_scores.csv")
        with open(paths["verb_scores.csv"], "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["verb", "score"])
            for verb, score in rank_verbs(bundle):
                writer.writerow([verb, repr(score)])

    paths["bundle.json"] = os.path.join(out_dir, "bundle.json")
    with open(paths["bundle.json"], "w", encoding="utf-8") as handle:
        handle.write(bundle.to_json())
        handle.write("\n")
    return paths
