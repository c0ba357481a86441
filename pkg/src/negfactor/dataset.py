"""Loading, validation, indexing, and synthesis of judgment tables.

The canonical file format is a long-format UTF-8 CSV with header
``verb,frame,subject,tense,participant,negraising,acceptability``; one row
per rating, both slider responses in [0, 1]. Responses exactly at 0 or 1
are clamped inward by 1e-4 at load time because the divergence loss is
undefined at the endpoints.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .errors import DimensionError, RowError, SchemaError
from .factorization import FactorParams, Hyperparams, negraising_grid

FRAME_LABELS = (
    "NP __ that S",
    "NP __ to VP[+ev]",
    "NP __ to VP[-ev]",
    "NP be __ that S",
    "NP be __ to VP[+ev]",
    "NP be __ to VP[-ev]",
)
SUBJECT_LABELS = ("first", "third")
TENSE_LABELS = ("past", "present")

CANONICAL_COLUMNS = ("verb", "frame", "subject", "tense", "participant", "negraising", "acceptability")

RESPONSE_EPS = 1e-4


def clamp_responses(values: np.ndarray) -> np.ndarray:
    return np.clip(values, RESPONSE_EPS, 1.0 - RESPONSE_EPS)


@dataclass
class ResponseTable:
    """Column-oriented judgment records with dense integer indexes.

    ``cells`` lists the distinct observed (verb, frame, subject, tense)
    combinations in lexicographic index order; ``cell_idx`` maps each
    record to its row in that list.
    """

    verbs: tuple[str, ...]
    frames: tuple[str, ...]
    participants: tuple[str, ...]
    verb_idx: np.ndarray
    frame_idx: np.ndarray
    subj_idx: np.ndarray
    tense_idx: np.ndarray
    part_idx: np.ndarray
    negraising: np.ndarray
    acceptability: np.ndarray
    cells: np.ndarray = field(repr=False)
    cell_idx: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, verbs, frames, participants, verb_idx, frame_idx, subj_idx, tense_idx,
              part_idx, negraising, acceptability) -> "ResponseTable":
        """Construct a table from raw columns, deriving the cell index."""
        verb_idx = np.asarray(verb_idx, dtype=np.int64)
        frame_idx = np.asarray(frame_idx, dtype=np.int64)
        subj_idx = np.asarray(subj_idx, dtype=np.int64)
        tense_idx = np.asarray(tense_idx, dtype=np.int64)
        part_idx = np.asarray(part_idx, dtype=np.int64)
        negraising = np.asarray(negraising, dtype=float)
        acceptability = np.asarray(acceptability, dtype=float)
        keys = np.stack([verb_idx, frame_idx, subj_idx, tense_idx], axis=1)
        cells, cell_idx = np.unique(keys, axis=0, return_inverse=True)
        return cls(
            verbs=tuple(verbs),
            frames=tuple(frames),
            participants=tuple(participants),
            verb_idx=verb_idx,
            frame_idx=frame_idx,
            subj_idx=subj_idx,
            tense_idx=tense_idx,
            part_idx=part_idx,
            negraising=negraising,
            acceptability=acceptability,
            cells=cells,
            cell_idx=np.asarray(cell_idx, dtype=np.int64).reshape(-1),
        )

    @property
    def n_records(self) -> int:
        return self.negraising.shape[0]

    @property
    def n_verbs(self) -> int:
        return len(self.verbs)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def n_participants(self) -> int:
        return len(self.participants)

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def cell_pair_ids(self) -> np.ndarray:
        """(verb, frame) pair id per cell, for coverage constraints."""
        return self.cells[:, 0] * self.n_frames + self.cells[:, 1]

    def cell_mean(self, values: np.ndarray) -> np.ndarray:
        sums = np.bincount(self.cell_idx, weights=values, minlength=self.n_cells)
        counts = np.bincount(self.cell_idx, minlength=self.n_cells)
        return sums / counts

    def cell_mean_negraising(self) -> np.ndarray:
        return self.cell_mean(self.negraising)

    def cell_mean_acceptability(self) -> np.ndarray:
        return self.cell_mean(self.acceptability)


def load_csv(path, schema: dict[str, str] | None = None, on_error: str = "fail",
             drop_participants: tuple[str, ...] = ()) -> ResponseTable:
    """Read a judgment CSV into a ResponseTable.

    Args:
        path: CSV file with the canonical header (or the names mapped by
            ``schema``).
        schema: optional map from canonical column names to the names used
            in the file, for ingesting differently labeled exports.
        on_error: "fail" raises RowError at the first bad row; "drop" skips
            bad rows and emits one summary warning.
        drop_participants: participant ids to exclude while loading.

    Raises:
        SchemaError: a required column is missing from the header.
        RowError: a row has an unparseable or out-of-range response, or an
            unknown frame/subject/tense label (only when on_error="fail").
    """
    if on_error not in ("fail", "drop"):
        raise ValueError(f'on_error must be "fail" or "drop", got {on_error!r}')
    colmap = {name: name for name in CANONICAL_COLUMNS}
    if schema:
        colmap.update(schema)
    dropped_participants = set(drop_participants)

    frame_ids = {label: i for i, label in enumerate(FRAME_LABELS)}
    subject_ids = {label: i for i, label in enumerate(SUBJECT_LABELS)}
    tense_ids = {label: i for i, label in enumerate(TENSE_LABELS)}

    verbs: dict[str, int] = {}
    participants: dict[str, int] = {}
    rows: list[tuple[int, int, int, int, int, float, float]] = []
    n_dropped = 0

    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for canonical in CANONICAL_COLUMNS:
            if colmap[canonical] not in header:
                raise SchemaError(f"missing column {colmap[canonical]!r} (for {canonical!r})")

        def parse_row(line_number: int, row: dict[str, str]):
            frame = row[colmap["frame"]]
            if frame not in frame_ids:
                raise RowError(line_number, f"unknown frame label {frame!r}")
            subject = row[colmap["subject"]]
            if subject not in subject_ids:
                raise RowError(line_number, f"unknown subject label {subject!r}")
            tense = row[colmap["tense"]]
            if tense not in tense_ids:
                raise RowError(line_number, f"unknown tense label {tense!r}")
            responses = []
            for column in ("negraising", "acceptability"):
                raw = row[colmap[column]]
                try:
                    value = float(raw)
                except (TypeError, ValueError):
                    raise RowError(line_number, f"{column} value {raw!r} is not a number") from None
                if not 0.0 <= value <= 1.0:
                    raise RowError(line_number, f"{column} value {value} outside [0, 1]")
                responses.append(value)
            verb = row[colmap["verb"]]
            participant = row[colmap["participant"]]
            verb_id = verbs.setdefault(verb, len(verbs))
            participant_id = participants.setdefault(participant, len(participants))
            return (
                verb_id,
                frame_ids[frame],
                subject_ids[subject],
                tense_ids[tense],
                participant_id,
                responses[0],
                responses[1],
            )

        for line_number, row in enumerate(reader, start=2):
            if row.get(colmap["participant"]) in dropped_participants:
                continue
            try:
                rows.append(parse_row(line_number, row))
            except RowError:
                if on_error == "fail":
                    raise
                n_dropped += 1

    if n_dropped:
        warnings.warn(f"dropped {n_dropped} malformed rows while loading {path}")
    if not rows:
        raise SchemaError(f"no usable rows in {path}")

    columns = np.array(rows, dtype=object)
    frame_used = sorted({int(r[1]) for r in rows})
    frame_remap = {old: new for new, old in enumerate(frame_used)}
    return ResponseTable.build(
        verbs=tuple(verbs),
        frames=tuple(FRAME_LABELS[i] for i in frame_used),
        participants=tuple(participants),
        verb_idx=columns[:, 0].astype(np.int64),
        frame_idx=np.array([frame_remap[int(r[1])] for r in rows], dtype=np.int64),
        subj_idx=columns[:, 2].astype(np.int64),
        tense_idx=columns[:, 3].astype(np.int64),
        part_idx=columns[:, 4].astype(np.int64),
        negraising=clamp_responses(columns[:, 5].astype(float)),
        acceptability=clamp_responses(columns[:, 6].astype(float)),
    )


def write_csv(table: ResponseTable, path) -> None:
    """Write a table in the canonical format; load_csv(write_csv(t)) == t."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CANONICAL_COLUMNS)
        for n in range(table.n_records):
            writer.writerow([
                table.verbs[table.verb_idx[n]],
                table.frames[table.frame_idx[n]],
                SUBJECT_LABELS[table.subj_idx[n]],
                TENSE_LABELS[table.tense_idx[n]],
                table.participants[table.part_idx[n]],
                repr(float(table.negraising[n])),
                repr(float(table.acceptability[n])),
            ])


def summarize(table: ResponseTable) -> dict:
    """Counts of verbs per (tense, frame) cell and records per participant."""
    verbs_per_tense_frame: dict[str, dict[str, int]] = {}
    for k, tense in enumerate(TENSE_LABELS):
        verbs_per_tense_frame[tense] = {}
        for f, frame in enumerate(table.frames):
            mask = (table.tense_idx == k) & (table.frame_idx == f)
            verbs_per_tense_frame[tense][frame] = int(np.unique(table.verb_idx[mask]).size)
    per_participant = np.bincount(table.part_idx, minlength=table.n_participants)
    return {
        "n_records": int(table.n_records),
        "n_verbs": int(table.n_verbs),
        "n_participants": int(table.n_participants),
        "n_cells": int(table.n_cells),
        "frames": list(table.frames),
        "verbs_per_tense_frame": verbs_per_tense_frame,
        "records_per_participant": {
            participant: int(per_participant[i]) for i, participant in enumerate(table.participants)
        },
        "mean_negraising": float(table.negraising.mean()),
        "mean_acceptability": float(table.acceptability.mean()),
    }


@dataclass
class PlantedFactors:
    """Probability-scale factor arrays used to generate synthetic data.

    Boolean planted structure is the special case of entries in {0, 1};
    graded entries are allowed so that recovery on ranked quantities is
    measurable.
    """

    lambda_: np.ndarray  # (n_verbs, n_structural)
    pi: np.ndarray       # (n_structural, n_frames)
    omega: np.ndarray    # (n_structural, 2, 2)
    psi: np.ndarray      # (n_verbs, n_lexical)
    phi: np.ndarray      # (n_lexical, 2, 2)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lambda_.tolist(),
            "pi": self.pi.tolist(),
            "omega": self.omega.tolist(),
            "psi": self.psi.tolist(),
            "phi": self.phi.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlantedFactors":
        return cls(
            lambda_=np.asarray(data["lambda"], dtype=float),
            pi=np.asarray(data["pi"], dtype=float),
            omega=np.asarray(data["omega"], dtype=float),
            psi=np.asarray(data["psi"], dtype=float),
            phi=np.asarray(data["phi"], dtype=float),
        )

    def as_factor_params(self, clip_eps: float = 1e-9) -> FactorParams:
        """Logit-scale view of the planted factors (entries clipped inward)."""
        n_verbs = self.lambda_.shape[0]
        n_frames = self.pi.shape[1]
        n_t = self.lambda_.shape[1]
        n_i = self.psi.shape[1]

        def to_logits(p):
            if p.size == 0:
                return None
            return logit(np.clip(p, clip_eps, 1.0 - clip_eps))

        return FactorParams(
            hyper=Hyperparams(n_lexical=n_i, n_structural=n_t),
            n_verbs=n_verbs,
            n_frames=n_frames,
            lambda_logits=to_logits(self.lambda_),
            pi_logits=to_logits(self.pi),
            omega_logits=to_logits(self.omega),
            psi_logits=to_logits(self.psi),
            phi_logits=to_logits(self.phi),
        )


@dataclass
class PlantedSpec:
    """Recipe for a synthetic dataset with known latent structure.

    When ``true_factors`` is None, factors are drawn uniformly: membership
    entries from [0.05, 0.95] and licensing entries from [0.6, 0.98], which
    keeps planted cell probabilities spread over the unit interval.
    """

    n_verbs: int
    n_frames: int = 6
    n_participants: int = 20
    n_lexical: int = 1
    n_structural: int = 1
    noise_scale: float = 0.05
    seed: int = 0
    ratings_per_cell: int = 10
    beta0: float = 0.0
    sigma0: float = 0.0
    participant_shift_sd: float = 0.0
    participant_scale_sd: float = 0.0
    acceptability: float = 0.9
    true_factors: PlantedFactors | None = None

    def __post_init__(self):
        if self.n_verbs <= 0 or self.n_participants <= 0:
            raise DimensionError("n_verbs and n_participants must be positive")
        if not 1 <= self.n_frames <= len(FRAME_LABELS):
            raise DimensionError(f"n_frames must be in 1..{len(FRAME_LABELS)}")
        if self.noise_scale < 0:
            raise DimensionError("noise_scale must be nonnegative")
        if self.true_factors is not None:
            tf = self.true_factors
            n_t = tf.lambda_.shape[1]
            n_i = tf.psi.shape[1]
            shapes = {
                "lambda": (tf.lambda_.shape, (self.n_verbs, n_t)),
                "pi": (tf.pi.shape, (n_t, self.n_frames)),
                "omega": (tf.omega.shape, (n_t, 2, 2)),
                "psi": (tf.psi.shape, (self.n_verbs, n_i)),
                "phi": (tf.phi.shape, (n_i, 2, 2)),
            }
            for name, (got, expected) in shapes.items():
                if got != expected:
                    raise DimensionError(f"true_factors.{name} has shape {got}, expected {expected}")

    def to_dict(self) -> dict:
        out = {
            "n_verbs": self.n_verbs,
            "n_frames": self.n_frames,
            "n_participants": self.n_participants,
            "n_lexical": self.n_lexical,
            "n_structural": self.n_structural,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
            "ratings_per_cell": self.ratings_per_cell,
            "beta0": self.beta0,
            "sigma0": self.sigma0,
            "participant_shift_sd": self.participant_shift_sd,
            "participant_scale_sd": self.participant_scale_sd,
            "acceptability": self.acceptability,
            "true_factors": self.true_factors.to_dict() if self.true_factors else None,
        }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PlantedSpec":
        data = dict(data)
        factors = data.get("true_factors")
        if factors is not None:
            data["true_factors"] = PlantedFactors.from_dict(factors)
        return cls(**data)

    @classmethod
    def from_json_file(cls, path) -> "PlantedSpec":
        with open(path, encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


def _draw_planted_factors(spec: PlantedSpec, rng: np.random.Generator) -> PlantedFactors:
    n_t, n_i = spec.n_structural, spec.n_lexical
    return PlantedFactors(
        lambda_=rng.uniform(0.05, 0.95, size=(spec.n_verbs, n_t)),
        pi=rng.uniform(0.05, 0.95, size=(n_t, spec.n_frames)),
        omega=rng.uniform(0.6, 0.98, size=(n_t, 2, 2)),
        psi=rng.uniform(0.05, 0.95, size=(spec.n_verbs, n_i)),
        phi=rng.uniform(0.6, 0.98, size=(n_i, 2, 2)),
    )


def sample_participant_effects(spec: PlantedSpec):
    """The participant effect draws generate_synthetic uses, reproducibly.

    Returns (shift, log_scale, shift_acc, log_scale_acc), each (n_participants,).
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(5)[1])
    shift = rng.normal(0.0, spec.participant_shift_sd, size=spec.n_participants)
    log_scale = rng.normal(0.0, spec.participant_scale_sd, size=spec.n_participants)
    shift_acc = rng.normal(0.0, spec.participant_shift_sd, size=spec.n_participants)
    log_scale_acc = rng.normal(0.0, spec.participant_scale_sd, size=spec.n_participants)
    return shift, log_scale, shift_acc, log_scale_acc


def generate_synthetic(spec: PlantedSpec) -> tuple[ResponseTable, PlantedSpec]:
    """Draw a synthetic table from planted factors through the response link.

    Every (verb, frame, subject, tense) cell receives ratings_per_cell
    ratings from distinct participants. Gaussian response noise is added on
    the probability scale and the result clamped like loaded data. Returns
    the table and a copy of the spec with ``true_factors`` resolved.

    Deterministic in spec.seed; the factor, effect, assignment, and noise
    draws use independent child streams so that supplying explicit factors
    does not shift the remaining draws.
    """
    streams = np.random.SeedSequence(spec.seed).spawn(5)
    factors = spec.true_factors
    if factors is None:
        factors = _draw_planted_factors(spec, np.random.default_rng(streams[0]))
    resolved = replace(spec, true_factors=factors)

    shift, log_scale, shift_acc, log_scale_acc = sample_participant_effects(spec)

    grid = negraising_grid(factors.as_factor_params())  # (V, F, 2, 2)
    nu_grid = logit(np.clip(grid, 1e-7, 1.0 - 1e-7))

    n_cells = spec.n_verbs * spec.n_frames * 4
    cell_v, cell_f, cell_j, cell_k = np.unravel_index(
        np.arange(n_cells), (spec.n_verbs, spec.n_frames, 2, 2)
    )
    per_cell = min(spec.ratings_per_cell, spec.n_participants)
    assign_rng = np.random.default_rng(streams[2])
    scores = assign_rng.random((n_cells, spec.n_participants))
    raters = np.sort(np.argsort(scores, axis=1)[:, :per_cell], axis=1)  # (n_cells, per_cell)

    verb_idx = np.repeat(cell_v, per_cell)
    frame_idx = np.repeat(cell_f, per_cell)
    subj_idx = np.repeat(cell_j, per_cell)
    tense_idx = np.repeat(cell_k, per_cell)
    part_idx = raters.reshape(-1)

    nu = nu_grid[verb_idx, frame_idx, subj_idx, tense_idx]
    scale = np.exp(spec.sigma0 + log_scale[part_idx])
    r_clean = expit(scale * nu + spec.beta0 + shift[part_idx])

    alpha_value = logit(np.clip(spec.acceptability, RESPONSE_EPS, 1.0 - RESPONSE_EPS))
    scale_acc = np.exp(spec.sigma0 + log_scale_acc[part_idx])
    a_clean = expit(scale_acc * alpha_value + spec.beta0 + shift_acc[part_idx])

    noise_nr = np.random.default_rng(streams[3]).normal(0.0, 1.0, size=r_clean.size)
    noise_acc = np.random.default_rng(streams[4]).normal(0.0, 1.0, size=a_clean.size)

    table = ResponseTable.build(
        verbs=tuple(f"v{i:03d}" for i in range(spec.n_verbs)),
        frames=tuple(FRAME_LABELS[: spec.n_frames]),
        participants=tuple(f"p{i:03d}" for i in range(spec.n_participants)),
        verb_idx=verb_idx,
        frame_idx=frame_idx,
        subj_idx=subj_idx,
        tense_idx=tense_idx,
        part_idx=part_idx,
        negraising=clamp_responses(r_clean + spec.noise_scale * noise_nr),
        acceptability=clamp_responses(a_clean + spec.noise_scale * noise_acc),
    )
    return table, resolved
