"""
Noyau numérique: matrices float64, aléa reproductible, différences finies

Toutes les opérations sont en précision 64 bits et les réductions suivent un
ordre d'accumulation fixe pour des résultats stables au bit près.
"""

import zlib
from typing import Callable, Optional

import numpy as np

from .exceptions import NumericError, ParameterError, ShapeError

Matrix = np.ndarray
Vector = np.ndarray


def check_finite(value, name: str = 'valeur'):
    """Lève NumericError si la valeur contient NaN/Inf"""
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{name} contient des valeurs non finies")
    return value


def as_matrix(x, name: str = 'matrice') -> Matrix:
    """
    Convertit en matrice 2-D float64 et vérifie la finitude

    Args:
        x: Tableau ou liste de listes
        name: Nom utilisé dans les messages d'erreur

    Returns:
        Matrice (rows x cols)
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: 2 dimensions attendues, reçu {arr.ndim}")
    return check_finite(arr, name)


def identity(n: int) -> Matrix:
    return np.eye(n, dtype=np.float64)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """
    Produit matriciel à accumulation fixe gauche-droite

    Chaque coefficient de sortie est accumulé dans l'ordre k = 0, 1, ...,
    indépendamment de la bibliothèque BLAS sous-jacente.

    Args:
        a: Matrice (n x k)
        b: Matrice (k x m)

    Returns:
        Matrice (n x m)
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul attend deux matrices, reçu {a.shape} et {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: dimensions incompatibles {a.shape} x {b.shape}")

    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k:k + 1] * b[k:k + 1, :]
    return check_finite(out, 'matmul')


def pairwise_sq_dists(a: Matrix, b: Matrix) -> Matrix:
    """Distances euclidiennes au carré entre lignes, bornées à 0"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"largeurs différentes: {a.shape[1]} vs {b.shape[1]}")
    sq_a = np.sum(a * a, axis=1)[:, None]
    sq_b = np.sum(b * b, axis=1)[None, :]
    d2 = sq_a + sq_b - 2.0 * matmul(a, b.T)
    return np.maximum(d2, 0.0)


class SeededRng:
    """
    Générateur aléatoire à compteur (Philox) possédé par une exécution

    Une même graine produit la même séquence sur toutes les plateformes.
    """

    def __init__(self, seed: int, _entropy: Optional[list] = None):
        if seed < 0 or seed >= 2 ** 64:
            raise ParameterError(f"graine hors de [0, 2^64): {seed}")
        self.seed = int(seed)
        self._entropy = _entropy if _entropy is not None else [self.seed]
        self._generator = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self._entropy))
        )

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    @property
    def counter(self) -> int:
        """Position courante du compteur Philox"""
        state = self._generator.bit_generator.state
        return int(sum(int(c) << (64 * i) for i, c in enumerate(state['state']['counter'])))

    def child(self, tag: str) -> 'SeededRng':
        """Sous-flux indépendant et déterministe identifié par un tag"""
        return SeededRng(self.seed, _entropy=self._entropy + [zlib.crc32(tag.encode('utf-8'))])

    def normal(self, size, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self._generator.normal(mean, std, size)

    def uniform(self, size, low: float, high: float) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def random(self, size) -> np.ndarray:
        return self._generator.random(size)

    def integers(self, low: int, high: int, size=None):
        return self._generator.integers(low, high, size)


def gaussian_sample(rng: SeededRng, n: int, mean: float, std: float) -> Vector:
    """
    Tire n valeurs d'une loi normale

    Args:
        rng: Générateur de l'exécution
        n: Nombre de tirages
        mean: Moyenne
        std: Écart-type (>= 0)

    Returns:
        Vecteur de n valeurs, constant si std = 0
    """
    if std < 0:
        raise ParameterError(f"écart-type négatif: {std}")
    if n < 0:
        raise ParameterError(f"nombre de tirages négatif: {n}")
    if std == 0:
        return np.full(n, float(mean), dtype=np.float64)
    return rng.normal(n, mean, std)


def finite_diff_grad(f: Callable[[Vector], float], x: Vector, h: float = 1e-5) -> Vector:
    """
    Gradient par différences centrées (f(x+h·e_i) - f(x-h·e_i)) / 2h

    Args:
        f: Fonction scalaire d'un vecteur
        x: Point d'évaluation
        h: Pas (> 0)

    Returns:
        Gradient approché, même forme que x
    """
    if h <= 0:
        raise ParameterError(f"pas h doit être > 0, reçu {h}")

    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)

    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = float(f(x))
        flat[i] = original - h
        f_minus = float(f(x))
        flat[i] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"f non finie autour de la coordonnée {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)

    return grad.reshape(x.shape)
