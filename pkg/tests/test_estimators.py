"""The sklearn-style estimator layer: params handling, fit/transform/predict."""
import numpy as np
import pytest
from sklearn.base import clone

from profpred.estimators import (
    ProfileHmmEstimator,
    ProfilePretrainer,
    SequenceTaskModel,
)
from profpred.exceptions import ProfileMismatchError
from profpred.msa import Msa
from profpred.synthgen import generate_families, make_downstream_task
from profpred.training import records_from_labels


def _records(families):
    records = []
    for fam in families:
        seqs = {fam.msa.ids[i]: fam.msa.sequence_record(i + 1).residues
                for i in range(fam.msa.k)}
        records.extend(records_from_labels(seqs, list(fam.labels)))
    return records


@pytest.fixture(scope="module")
def families():
    return generate_families(2, 10, 10, 0.3, 0.02, 0.02, seed=55)


class TestProfileHmmEstimator:
    def test_get_set_params_round_trip(self):
        est = ProfileHmmEstimator(symfrac=0.4, pseudocount=0.2)
        params = est.get_params()
        assert params["symfrac"] == 0.4
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_fit_transform(self, toy_msa):
        est = ProfileHmmEstimator(pseudocount=1.0)
        labels = est.fit_transform(toy_msa)
        assert len(labels) == 3
        assert est.profile_.match_emissions[0, 0] == pytest.approx(4 / 23)
        assert est.classes_.tags == "MIM"

    def test_transform_checks_width(self, toy_msa):
        est = ProfileHmmEstimator().fit(toy_msa)
        other = Msa(rows=("ACDE", "ACDE"), ids=("a", "b"))
        with pytest.raises(ProfileMismatchError):
            est.transform(other)

    def test_unfitted_transform_raises(self, toy_msa):
        with pytest.raises(RuntimeError):
            ProfileHmmEstimator().transform(toy_msa)


class TestProfilePretrainer:
    def test_fit_and_encode(self, families):
        est = ProfilePretrainer(objective="pp", max_steps=5, max_epochs=50,
                                num_layers=1, num_heads=2, hidden_dim=16,
                                ff_dim=32, max_positions=32, dropout_rate=0.0,
                                max_tokens_per_batch=64, warmup_steps=5,
                                seed=1)
        est.fit(_records(families))
        assert est.state_.step == 5
        residues = families[0].msa.sequence_record(1).residues
        encoded = est.encode([residues])
        assert encoded[0].shape == (len(residues), 16)
        probs = est.predict_profile(residues)
        assert probs.shape == (len(residues), 20)
        assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-6

    def test_sklearn_cloneable(self):
        est = ProfilePretrainer(objective="joint", hidden_dim=32)
        cloned = clone(est)
        assert cloned.get_params()["objective"] == "joint"
        assert cloned.get_params()["hidden_dim"] == 32


class TestSequenceTaskModel:
    def test_fit_predict_score(self, families):
        dataset = make_downstream_task(families, "seq_class", seed=0)
        est = SequenceTaskModel(task="seq_class", steps=8, seed=2,
                                max_tokens=512)
        est.fit(dataset)
        test_examples = dataset.split("test")
        preds = est.predict([ex.residues for ex in test_examples])
        assert all(isinstance(p, int) for p in preds)
        assert est.score() == est.report_.value
        assert est.score(dataset) == pytest.approx(est.report_.value)

    def test_task_mismatch_rejected(self, families):
        dataset = make_downstream_task(families, "seq_class", seed=0)
        est = SequenceTaskModel(task="token_class")
        with pytest.raises(ProfileMismatchError):
            est.fit(dataset)
