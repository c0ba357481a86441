"""Serialization fidelity of fitted models."""

from __future__ import annotations

import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from negfactor.errors import SchemaError
from negfactor.factorization import Hyperparams
from negfactor.model import FittedModel
from negfactor.response import EffectsParams

from conftest import random_factor_params, random_table


def make_model(seed=0, hyper=Hyperparams(2, 1)):
    rng = np.random.default_rng(seed)
    table = random_table(rng, n_verbs=3, n_frames=2, n_participants=3)
    factors = random_factor_params(rng, hyper, table.n_verbs, table.n_frames)
    effects = EffectsParams(
        beta0=rng.normal(), sigma0=rng.normal() * 0.1,
        beta=rng.normal(size=3), sigma=rng.normal(size=3) * 0.1,
        beta0_acc=rng.normal(), sigma0_acc=rng.normal() * 0.1,
        beta_acc=rng.normal(size=3), sigma_acc=rng.normal(size=3) * 0.1,
        log_var_beta=rng.normal() * 0.2, log_var_sigma=rng.normal() * 0.2,
        log_var_beta_acc=rng.normal() * 0.2, log_var_sigma_acc=rng.normal() * 0.2,
    )
    return FittedModel(
        hyper=hyper,
        verbs=table.verbs,
        frames=table.frames,
        participants=table.participants,
        cells=table.cells.copy(),
        factors=factors,
        effects=effects,
        alpha=rng.normal(size=table.n_cells),
        seed=7,
        final_loss=12.5,
        final_data_loss=9.25,
        converged=True,
        iterations=321,
    )


class TestJsonRoundTrip:
    @pytest.mark.parametrize("hyper", [
        Hyperparams(2, 1), Hyperparams(1, 1), Hyperparams(0, 2), Hyperparams(3, 0),
    ])
    def test_round_trip_is_byte_identical(self, hyper):
        model = make_model(seed=int(hyper.n_lexical * 5 + hyper.n_structural), hyper=hyper)
        text = model.to_json()
        back = FittedModel.from_dict(json.loads(text))
        assert back.to_json() == text

    def test_round_trip_preserves_values(self):
        model = make_model(seed=4)
        back = FittedModel.from_dict(json.loads(model.to_json()))
        assert back.hyper == model.hyper
        assert back.verbs == model.verbs
        assert back.frames == model.frames
        assert back.participants == model.participants
        assert_array_equal(back.cells, model.cells)
        assert_array_equal(back.alpha, model.alpha)
        assert_array_equal(back.factors.lambda_logits, model.factors.lambda_logits)
        assert_array_equal(back.factors.psi_logits, model.factors.psi_logits)
        assert_array_equal(back.effects.beta, model.effects.beta)
        assert back.effects.log_var_sigma == model.effects.log_var_sigma
        assert back.final_loss == model.final_loss
        assert back.final_data_loss == model.final_data_loss
        assert back.converged is True
        assert back.iterations == 321

    def test_boundary_model_keeps_frozen_sides_absent(self):
        model = make_model(seed=9, hyper=Hyperparams(0, 2))
        back = FittedModel.from_dict(json.loads(model.to_json()))
        assert back.factors.psi_logits is None
        assert back.factors.phi_logits is None
        assert back.factors.lambda_logits is not None

    def test_save_load(self, tmp_path):
        model = make_model(seed=2)
        path = tmp_path / "model.json"
        model.save(path)
        back = FittedModel.load(path)
        assert back.to_json() == model.to_json()
        assert path.read_text().endswith("\n")

    def test_missing_field_is_schema_error(self):
        data = json.loads(make_model().to_json())
        del data["factors"]
        with pytest.raises(SchemaError, match="factors"):
            FittedModel.from_dict(data)

    def test_wrong_format_tag(self):
        data = json.loads(make_model().to_json())
        data["format"] = "something-else"
        with pytest.raises(SchemaError, match="something-else"):
            FittedModel.from_dict(data)


class TestCellLookup:
    def test_lookup_maps_labels_to_rows(self):
        model = make_model(seed=6)
        lookup = model.cell_lookup()
        assert len(lookup) == model.cells.shape[0]
        for row, (v, f, j, k) in enumerate(model.cells):
            key = (model.verbs[v], model.frames[f], int(j), int(k))
            assert lookup[key] == row
