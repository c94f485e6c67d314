"""
Générateur synthétique multi-domaines à graine fixe

Chaque domaine k contient deux classes gaussiennes équilibrées séparées de
`margin` le long d'une direction commune; le domaine entier est tourné de
k·θ dans un plan contenant cette direction puis translaté de k·shift.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from ..core.exceptions import ParameterError
from ..core.numeric import SeededRng
from .embeddings import EmbeddingRecord


@dataclass(frozen=True)
class SyntheticSpec:
    """Paramètres du benchmark synthétique"""
    n_domains: int = 3
    n_per_domain: int = 500
    dim: int = 32
    margin: float = 3.0
    shift: float = 1.0
    noise_std: float = 1.0
    angle_per_shift: float = 0.25  # radians par domaine et par unité de shift
    seed: int = 0

    def __post_init__(self):
        if self.n_domains < 1 or self.n_per_domain < 1 or self.dim < 1:
            raise ParameterError("n_domains, n_per_domain et dim doivent être >= 1")
        if self.shift < 0:
            raise ParameterError(f"shift doit être >= 0, reçu {self.shift}")
        if self.margin < 0 or self.noise_std < 0:
            raise ParameterError("margin et noise_std doivent être >= 0")
        if self.dim < 2 and self.rotation_angle != 0:
            raise ParameterError("une rotation demande dim >= 2")

    @property
    def rotation_angle(self) -> float:
        return self.angle_per_shift * self.shift

    def domain_name(self, k: int) -> str:
        return f"domain_{k}"


def _directions(spec: SyntheticSpec, rng: SeededRng):
    """Direction de classe u, second axe du plan de rotation w, axe de translation v"""
    n_axes = min(spec.dim, 3)
    q, _ = np.linalg.qr(rng.normal((spec.dim, n_axes)))
    u = q[:, 0]
    w = q[:, 1] if n_axes >= 2 else None
    if n_axes >= 3:
        v = q[:, 2]
    else:
        v = w if w is not None else u
    return u, w, v


def _rotate(x: np.ndarray, u: np.ndarray, w: np.ndarray, angle: float) -> np.ndarray:
    if angle == 0.0 or w is None:
        return x
    cu = x @ u
    cw = x @ w
    c, s = np.cos(angle), np.sin(angle)
    return (x
            + np.outer(cu * (c - 1.0) - cw * s, u)
            + np.outer(cu * s + cw * (c - 1.0), w))


def generate_synthetic(spec: SyntheticSpec) -> List[EmbeddingRecord]:
    """
    Génère les records de tous les domaines

    Args:
        spec: Paramètres du benchmark

    Returns:
        Records étiquetés (1 = falsifié), classes équilibrées par domaine
    """
    root = SeededRng(spec.seed)
    u, w, v = _directions(spec, root.child('directions'))
    records: List[EmbeddingRecord] = []

    for k in range(spec.n_domains):
        rng = root.child(f'domain/{k}')
        n = spec.n_per_domain
        labels = np.array([0] * (n - n // 2) + [1] * (n // 2))
        labels = labels[rng.permutation(n)]

        noise = rng.normal((n, spec.dim), 0.0, 1.0) * spec.noise_std
        # classe 1 = classe 0 déplacée de `margin` le long de u
        x = noise + np.outer((labels - 0.5) * spec.margin, u)
        x = _rotate(x, u, w, k * spec.rotation_angle)
        x = x + k * spec.shift * v

        name = spec.domain_name(k)
        for i in range(n):
            records.append(EmbeddingRecord(
                id=f"d{k}-{i:05d}", domain=name, label=int(labels[i]), features=x[i],
            ))

    return records
