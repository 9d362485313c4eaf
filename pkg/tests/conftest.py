"""Shared fixtures: toy alignments and small model/batch builders."""
import numpy as np
import pytest

from profpred.model import Batch, ModelConfig, init_params
from profpred.msa import Msa
from profpred.seeding import derive_rng


@pytest.fixture
def toy_msa():
    """3 rows, 3 columns; middle column is insert under symfrac 0.5."""
    return Msa(rows=("A-C", "AAC", "A-C"), ids=("r1", "r2", "r3"))


@pytest.fixture
def indel_showcase_msa():
    """Alignment whose first row has 10 residues: 2 sitting in insert
    columns (residues 3 and 7) and 2 match columns deleted (columns 2, 3).

    Column roles under symfrac 0.5: M M M M I M M M I M M M (l = 10).
    """
    return Msa(
        rows=(
            "P--THSLKQLDH",
            "PAGT.SLK.LDH",
            "PAGT.SLK.LEH",
        ),
        ids=("query", "homolog1", "homolog2"),
    )


def tiny_model_config(**overrides):
    base = dict(num_layers=1, num_heads=2, hidden_dim=8, ff_dim=16,
                max_positions=8, dropout_rate=0.0, seed=1)
    base.update(overrides)
    return ModelConfig(**base)


def desk_model_config(**overrides):
    """The default architecture with a small position table for fast tests."""
    base = dict(max_positions=16, dropout_rate=0.0, seed=2)
    base.update(overrides)
    return ModelConfig(**base)


def probe_batch(seed=7, batch_size=2, length=6, with_mlm=True):
    rng = derive_rng(seed, "probe-batch")
    tokens = rng.integers(0, 20, size=(batch_size, length)).astype(np.int64)
    labels = rng.dirichlet(np.ones(20), size=(batch_size, length))
    label_mask = np.ones((batch_size, length), dtype=bool)
    kwargs = dict(tokens=tokens,
                  lengths=np.full(batch_size, length, dtype=np.int64),
                  labels=labels, label_mask=label_mask)
    if with_mlm:
        mlm_mask = np.zeros((batch_size, length), dtype=bool)
        mlm_mask[:, ::2] = True
        kwargs.update(mlm_targets=tokens.copy(), mlm_mask=mlm_mask)
    return Batch(**kwargs)


@pytest.fixture
def tiny_params():
    return init_params(tiny_model_config())
