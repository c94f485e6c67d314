"""Embedding files, domain partitions and the synthetic benchmark"""

from .embeddings import (DomainPartition, EmbeddingRecord, PartitionResult, UnlabeledRecord,
                         load_embeddings, partition, save_embeddings)
from .synthetic import SyntheticSpec, generate_synthetic

__all__ = [
    'DomainPartition',
    'EmbeddingRecord',
    'PartitionResult',
    'UnlabeledRecord',
    'load_embeddings',
    'partition',
    'save_embeddings',
    'SyntheticSpec',
    'generate_synthetic'
]
