"""Shared fixtures: a tiny dataset and a lightly pretrained frozen backbone.

Session-scoped because pretraining, while small, is the expensive part of
the suite; tests must not mutate the shared objects (tuning copies the
word table per run by design).
"""

import numpy as np
import pytest

from treeprompt.backbone import (
    BackboneConfig,
    ToyBackbone,
    make_word_table,
    pretrain_backbone,
)
from treeprompt.tree_model import Vocab
from treeprompt.world import gen_dataset

TINY_SIZES = {
    "pretrain": 700,
    "tune_train": 160,
    "tune_val": 60,
    "tune_test_simple": 60,
    "tune_test_compositional": 80,
}


@pytest.fixture(scope="session")
def tiny_dataset():
    return gen_dataset(1234, TINY_SIZES)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_dataset):
    trees = [ex.tree for split in tiny_dataset.splits.values() for ex in split]
    return Vocab.build(trees, min_freq=2)


@pytest.fixture(scope="session")
def small_backbone_config():
    return BackboneConfig(layers=2, d_model=32, heads=2, ffn=64, d_w=16)


@pytest.fixture(scope="session")
def frozen_backbone(tiny_dataset, tiny_vocab, small_backbone_config):
    rng = np.random.default_rng(7)
    backbone = ToyBackbone(small_backbone_config, tiny_vocab, rng)
    word_table = make_word_table(tiny_vocab, small_backbone_config.d_w, rng)
    pretrain_backbone(
        backbone,
        word_table,
        tiny_dataset["pretrain"],
        seed=7,
        max_epochs=10,
        target_acc=0.95,
        min_acc=0.5,
    )
    backbone.freeze()
    return backbone, word_table.data.copy()
