"""
Lecture / écriture des fichiers d'embeddings et partition source / cible

Format JSON-lines: une ligne par élément avec les clés id, domain,
label (0, 1 ou null) et features (liste de réels). Les fichiers .jsonl.gz
sont lus et écrits en gzip.
"""

import gzip
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from ..core.exceptions import DataError, ParseError, SchemaError
from ..core.numeric import SeededRng


def _freeze(features) -> np.ndarray:
    arr = np.array(features, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """Un article de presse sous forme de vecteur de features"""
    id: str
    domain: str
    label: Optional[int]
    features: np.ndarray

    def __post_init__(self):
        if self.label not in (None, 0, 1):
            raise DataError(f"{self.id}: label hors de {{0, 1, null}}: {self.label!r}")
        object.__setattr__(self, 'features', _freeze(self.features))

    @property
    def dim(self) -> int:
        return self.features.size

    def unlabeled(self) -> 'UnlabeledRecord':
        return UnlabeledRecord(id=self.id, domain=self.domain, features=self.features)


@dataclass(frozen=True, eq=False)
class UnlabeledRecord:
    """Élément cible d'entraînement: aucun champ label"""
    id: str
    domain: str
    features: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'features', _freeze(self.features))

    @property
    def dim(self) -> int:
        return self.features.size


@dataclass(frozen=True)
class DomainPartition:
    """Domaines source et cible, non vides et disjoints"""
    source_domains: FrozenSet[str]
    target_domains: FrozenSet[str]

    def __post_init__(self):
        object.__setattr__(self, 'source_domains', frozenset(self.source_domains))
        object.__setattr__(self, 'target_domains', frozenset(self.target_domains))
        if not self.source_domains or not self.target_domains:
            raise DataError("les ensembles de domaines source et cible doivent être non vides")
        overlap = self.source_domains & self.target_domains
        if overlap:
            raise DataError(f"domaines à la fois source et cible: {sorted(overlap)}")

    @classmethod
    def from_strings(cls, source: str, target: str) -> 'DomainPartition':
        """Construit depuis des listes séparées par des virgules ('a,b')"""
        split = lambda s: [t.strip() for t in s.split(',') if t.strip()]
        return cls(frozenset(split(source)), frozenset(split(target)))


class PartitionResult(NamedTuple):
    source: List[EmbeddingRecord]
    target_train: List[UnlabeledRecord]
    target_test: List[EmbeddingRecord]


def _open_lines(path: Path):
    """Flux binaire ligne à ligne; le décodage UTF-8 se fait par ligne"""
    if path.name.endswith('.gz'):
        return gzip.open(path, 'rb')
    return open(path, 'rb')


def _open_writer(path: Path):
    if path.name.endswith('.gz'):
        raw = open(path, 'wb')
        gz = gzip.GzipFile(filename='', mode='wb', fileobj=raw, mtime=0)
        return _ClosingWrapper(io.TextIOWrapper(gz, encoding='utf-8', newline='\n'), raw)
    return open(path, 'w', encoding='utf-8', newline='\n')


class _ClosingWrapper:
    """Ferme le flux texte gzip puis le fichier sous-jacent"""

    def __init__(self, text, raw):
        self._text = text
        self._raw = raw

    def write(self, s):
        return self._text.write(s)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self._text.close()
        self._raw.close()


def _parse_line(raw: bytes, line_number: int) -> EmbeddingRecord:
    try:
        line = raw.decode('utf-8')
    except UnicodeDecodeError as e:
        raise ParseError(f"UTF-8 invalide (octet {e.start})", line_number)
    try:
        doc = json.loads(line)
    except ValueError as e:
        raise ParseError(f"JSON invalide ({getattr(e, 'msg', e)})", line_number)
    if not isinstance(doc, dict):
        raise ParseError("objet JSON attendu", line_number)

    for key in ('id', 'domain', 'features'):
        if key not in doc:
            raise ParseError(f"clé manquante: {key}", line_number)

    label = doc.get('label')
    if label is not None and (isinstance(label, bool) or label not in (0, 1)):
        raise ParseError(f"label invalide: {label!r}", line_number)

    features = doc['features']
    if not isinstance(features, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in features):
        raise ParseError("features doit être une liste de nombres", line_number)
    try:
        arr = np.asarray(features, dtype=np.float64)
    except (OverflowError, ValueError):
        raise ParseError("valeur hors de la plage float64", line_number)
    if not np.all(np.isfinite(arr)):
        raise ParseError("features non finies", line_number)

    return EmbeddingRecord(id=str(doc['id']), domain=str(doc['domain']),
                           label=None if label is None else int(label), features=arr)


def load_embeddings(path: Union[str, Path]) -> List[EmbeddingRecord]:
    """
    Charge un fichier JSON-lines d'embeddings

    Args:
        path: Fichier .jsonl ou .jsonl.gz

    Returns:
        Liste d'EmbeddingRecord de dimension uniforme
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Fichier d'embeddings non trouvé: {path}")

    records: List[EmbeddingRecord] = []
    seen = {}
    dim = None
    dim_line = None

    with _open_lines(path) as f:
        for line_number, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            record = _parse_line(raw, line_number)
            if dim is None:
                dim, dim_line = record.dim, line_number
            elif record.dim != dim:
                raise SchemaError(
                    f"dimension incohérente ligne {line_number}: {record.dim} "
                    f"(ligne {dim_line}: {dim})"
                )
            if record.id in seen:
                raise SchemaError(
                    f"identifiant dupliqué '{record.id}' lignes {seen[record.id]} et {line_number}"
                )
            seen[record.id] = line_number
            records.append(record)

    return records


def save_embeddings(records: Iterable[EmbeddingRecord], path: Union[str, Path]) -> Path:
    """Écrit des records au format JSON-lines (gzip si .gz)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _open_writer(path) as f:
        for record in records:
            f.write(json.dumps({
                'id': record.id,
                'domain': record.domain,
                'label': record.label,
                'features': [float(v) for v in record.features],
            }) + '\n')
    return path


def records_to_matrix(records: Sequence[Union[EmbeddingRecord, UnlabeledRecord]]) -> np.ndarray:
    """Empile les features en matrice (n x d)"""
    if not records:
        return np.zeros((0, 0))
    return np.vstack([r.features for r in records]).astype(np.float64)


def labels_of(records: Sequence[EmbeddingRecord]) -> np.ndarray:
    labels = [r.label for r in records]
    if any(label is None for label in labels):
        raise DataError("records sans label")
    return np.asarray(labels, dtype=np.int64)


def domains_of(records: Sequence[Union[EmbeddingRecord, UnlabeledRecord]]) -> List[str]:
    return [r.domain for r in records]


def partition(records: Sequence[EmbeddingRecord], domain_partition: DomainPartition,
              test_fraction: float = 0.2, seed: int = 0) -> PartitionResult:
    """
    Répartit les records entre source étiquetée, cible d'entraînement sans
    label et cible de test étiquetée

    Args:
        records: Records chargés
        domain_partition: Domaines source / cible
        test_fraction: Part des records cible réservée au test
        seed: Graine de la répartition cible

    Returns:
        (source, target_train, target_test)
    """
    if not 0.0 <= test_fraction <= 1.0:
        raise DataError(f"test_fraction hors de [0, 1]: {test_fraction}")

    source: List[EmbeddingRecord] = []
    target: List[EmbeddingRecord] = []
    for record in records:
        in_source = record.domain in domain_partition.source_domains
        in_target = record.domain in domain_partition.target_domains
        if in_source and in_target:
            raise DataError(f"{record.id}: domaine '{record.domain}' à la fois source et cible")
        if in_source:
            if record.label is None:
                raise DataError(f"{record.id}: record source sans label")
            source.append(record)
        elif in_target:
            target.append(record)
        else:
            raise DataError(f"{record.id}: domaine inconnu '{record.domain}'")

    n_test = int(round(len(target) * test_fraction))
    order = SeededRng(seed).child('partition').permutation(len(target))
    test_idx = set(int(i) for i in order[:n_test])

    target_train = [r.unlabeled() for i, r in enumerate(target) if i not in test_idx]
    target_test = [r for i, r in enumerate(target) if i in test_idx]
    if any(r.label is None for r in target_test):
        raise DataError("records cible de test sans label")

    return PartitionResult(source=source, target_train=target_train, target_test=target_test)
