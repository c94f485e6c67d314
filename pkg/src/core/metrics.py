"""
Métriques d'évaluation et diagnostics d'invariance de domaine

Accuracy et F1 binaire (classe positive = falsifié), variance des features
projetées sur une dimension, projection 2-D par composantes principales.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataError, ParameterError, StateError
from .logger import log_report
from .model import EVAL, ModelState, predict_proba, project
from ..data.embeddings import EmbeddingRecord, labels_of, records_to_matrix


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


@dataclass
class EvalReport:
    """Résultat d'évaluation sur le test cible"""
    accuracy: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    variance: Dict[str, Dict[str, float]] = field(default_factory=dict)
    seed: Optional[int] = None
    config_hash: Optional[str] = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> Dict[str, Any]:
        return {
            'accuracy': self.accuracy,
            'f1': self.f1,
            'tp': self.tp,
            'fp': self.fp,
            'tn': self.tn,
            'fn': self.fn,
            'total': self.total,
            'variance': self.variance,
            'seed': self.seed,
            'config_hash': self.config_hash,
        }


def predict(model: ModelState, features) -> np.ndarray:
    """Classe prédite par argmax; une égalité donne la classe 0"""
    probs = predict_proba(model, features)
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


def confusion_counts(y_true, y_pred) -> ConfusionCounts:
    y_true = np.asarray(y_true).reshape(-1)
    y_pred = np.asarray(y_pred).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ParameterError(f"{y_pred.size} prédictions pour {y_true.size} labels")
    return ConfusionCounts(
        tp=int(np.sum((y_pred == 1) & (y_true == 1))),
        fp=int(np.sum((y_pred == 1) & (y_true == 0))),
        tn=int(np.sum((y_pred == 0) & (y_true == 0))),
        fn=int(np.sum((y_pred == 0) & (y_true == 1))),
    )


def _principal_axes(features, n_components: int):
    """Axes principaux (lignes) et valeurs singulières, signe rendu déterministe"""
    x = np.asarray(features, dtype=np.float64)
    centered = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    vt = vt[:n_components]
    s = s[:n_components]
    # la plus grande coordonnée en valeur absolue de chaque axe est positive
    signs = np.sign(vt[np.arange(vt.shape[0]), np.argmax(np.abs(vt), axis=1)])
    signs[signs == 0] = 1.0
    return centered, vt * signs[:, None], s


def feature_variance(features) -> float:
    """
    Variance après projection sur la première composante principale et
    normalisation min-max dans [0, 1]

    Args:
        features: Matrice (n x d), n >= 2

    Returns:
        Variance (population) des coordonnées normalisées; 0 si lignes constantes
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ParameterError("feature_variance: au moins 2 lignes requises")
    centered, axes, _ = _principal_axes(x, 1)
    coords = centered @ axes[0]
    span = coords.max() - coords.min()
    if span <= 0.0:
        return 0.0
    return float(np.var((coords - coords.min()) / span))


def project_2d(features) -> np.ndarray:
    """
    Projection sur les deux premières composantes principales

    Les composantes absentes (rang < 2) sont remplies de zéros.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ParameterError("project_2d: au moins 2 lignes et 2 colonnes requises")
    centered, axes, s = _principal_axes(x, 2)
    out = np.zeros((x.shape[0], 2))
    tol = max(x.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    for k in range(axes.shape[0]):
        if s[k] > tol:
            out[:, k] = centered @ axes[k]
    return out


def domain_variances(model: ModelState, records: Sequence[EmbeddingRecord]) -> Dict[str, Dict[str, float]]:
    """Variance 1-D de x et z par domaine (domaines d'au moins 2 records)"""
    by_domain: Dict[str, list] = {}
    for record in records:
        by_domain.setdefault(record.domain, []).append(record)

    out = {}
    for domain in sorted(by_domain):
        group = by_domain[domain]
        if len(group) < 2:
            continue
        x = records_to_matrix(group)
        out[domain] = {'x': feature_variance(x), 'z': feature_variance(project(model, x))}
    return out


def evaluate(model: ModelState, test_records: Sequence[EmbeddingRecord],
             seed: Optional[int] = None, config_hash: Optional[str] = None) -> EvalReport:
    """
    Évalue le modèle sur le test cible étiqueté

    Args:
        model: Modèle en mode eval (adapté ou non)
        test_records: Records cible de test
        seed: Graine de l'exécution (métadonnée)
        config_hash: Empreinte de la configuration (métadonnée)

    Returns:
        EvalReport
    """
    if not test_records:
        raise DataError("jeu de test cible vide")
    if model.mode != EVAL:
        raise StateError("evaluate exige un modèle en mode eval")

    x = records_to_matrix(test_records)
    counts = confusion_counts(labels_of(test_records), predict(model, x))
    report = EvalReport(
        accuracy=counts.accuracy, f1=counts.f1,
        tp=counts.tp, fp=counts.fp, tn=counts.tn, fn=counts.fn,
        variance=domain_variances(model, test_records),
        seed=seed, config_hash=config_hash,
    )
    log_report(report.to_dict())
    return report


def projection_frame(model: ModelState, records: Sequence[EmbeddingRecord]) -> pd.DataFrame:
    """
    Coordonnées 2-D de x et z pour chaque record

    Colonnes: id, domain, label, space ('x' ou 'z'), pc1, pc2
    """
    if len(records) < 2:
        raise DataError("projection 2-D: au moins 2 records requis")
    x = records_to_matrix(records)
    frames = []
    for space, feats in (('x', x), ('z', project(model, x))):
        coords = project_2d(feats)
        frames.append(pd.DataFrame({
            'id': [r.id for r in records],
            'domain': [r.domain for r in records],
            'label': [getattr(r, 'label', None) for r in records],
            'space': space,
            'pc1': coords[:, 0],
            'pc2': coords[:, 1],
        }))
    return pd.concat(frames, ignore_index=True)
