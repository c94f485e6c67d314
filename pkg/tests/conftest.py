"""
Fixtures partagées des tests ConDA-TTA
"""

import sys
from dataclasses import replace
from pathlib import Path

import pytest

# Ajouter le répertoire parent au PYTHONPATH
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.trainer import TrainConfig
from src.data.embeddings import DomainPartition, partition
from src.data.synthetic import SyntheticSpec, generate_synthetic


@pytest.fixture
def small_config():
    """Configuration rapide: petites largeurs, quelques époques"""
    return TrainConfig(
        batch_size=32, max_epochs=3, patience=2, learning_rate=1e-3,
        tta_batch_size=32, proj_hidden=12, proj_dim=8, cls_hidden=12, dropout=0.1,
    )


@pytest.fixture
def small_spec():
    return SyntheticSpec(n_domains=3, n_per_domain=80, dim=6, margin=3.0, shift=1.0, seed=0)


@pytest.fixture
def small_records(small_spec):
    return generate_synthetic(small_spec)


@pytest.fixture
def small_partition(small_records):
    domains = DomainPartition.from_strings('domain_0,domain_1', 'domain_2')
    return partition(small_records, domains, test_fraction=0.25, seed=0)


@pytest.fixture
def fast_config(small_config):
    return replace(small_config, max_epochs=2)
