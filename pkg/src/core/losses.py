"""
Fonctions de perte ConDA-TTA

Noyau RBF, MMD empirique, perte contrastive NT-Xent, entropie croisée et
objectif total pondéré. Les variantes *_grad renvoient aussi le gradient
exact utilisé par la rétropropagation du modèle.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .exceptions import NumericError, ParameterError, ShapeError
from .numeric import Matrix, as_matrix, matmul, pairwise_sq_dists

COSINE_EPS = 1e-12
CE_EPS = 1e-12
# crochet MMD ramené à 0 sous cette fraction des termes intra-ensemble
MMD_REL_TOL = 1e-14
REDUCTIONS = ('sum', 'mean')


@dataclass(frozen=True)
class SigmaPolicy:
    """Choix de la largeur de bande σ du noyau RBF"""
    value: Optional[float] = None  # None = heuristique de la médiane

    def __post_init__(self):
        if self.value is not None and not self.value > 0:
            raise ParameterError(f"σ fixe doit être > 0, reçu {self.value}")

    @classmethod
    def median(cls) -> 'SigmaPolicy':
        return cls(None)

    @classmethod
    def fixed(cls, value: float) -> 'SigmaPolicy':
        return cls(float(value))

    @classmethod
    def parse(cls, text: Union[str, float, 'SigmaPolicy']) -> 'SigmaPolicy':
        if isinstance(text, SigmaPolicy):
            return text
        if isinstance(text, str) and text.strip().lower() == 'median':
            return cls.median()
        try:
            return cls.fixed(float(text))
        except (TypeError, ValueError):
            raise ParameterError(f"sigma doit être 'median' ou un réel > 0, reçu {text!r}")

    @property
    def is_median(self) -> bool:
        return self.value is None

    def resolve(self, z_all: Matrix) -> float:
        """Valeur de σ pour un lot projeté"""
        if self.value is not None:
            return self.value
        return median_heuristic_sigma(z_all)

    def __str__(self) -> str:
        return 'median' if self.value is None else repr(self.value)


@dataclass(frozen=True)
class LossWeights:
    """Poids de l'objectif total et hyperparamètres des pertes"""
    lambda_ce: float = 0.5
    lambda_ctr: float = 0.5
    lambda_mmd: float = 1.0
    temperature_t: float = 0.5
    sigma: SigmaPolicy = field(default_factory=SigmaPolicy.median)
    contrastive_reduction: str = 'mean'  # par ancre, indépendant de la taille de lot

    def __post_init__(self):
        for name in ('lambda_ce', 'lambda_ctr', 'lambda_mmd'):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ParameterError(f"{name} doit être >= 0, reçu {value}")
        if not self.temperature_t > 0:
            raise ParameterError(f"température doit être > 0, reçu {self.temperature_t}")
        if self.contrastive_reduction not in REDUCTIONS:
            raise ParameterError(f"réduction contrastive inconnue: {self.contrastive_reduction}")


@dataclass(frozen=True)
class PairedBatch:
    """Lot d'ancres et de leurs augmentations, alignés ligne à ligne"""
    anchors: Matrix
    augments: Matrix

    def __post_init__(self):
        if np.shape(self.anchors) != np.shape(self.augments):
            raise ShapeError(
                f"ancres {np.shape(self.anchors)} et augmentations "
                f"{np.shape(self.augments)} de formes différentes"
            )

    @property
    def size(self) -> int:
        return int(np.shape(self.anchors)[0])


@dataclass(frozen=True)
class StepBatch:
    """Lots d'un pas d'entraînement: source étiqueté, cible sans label"""
    source: PairedBatch
    labels: np.ndarray
    target: PairedBatch

    def __post_init__(self):
        if np.size(self.labels) != self.source.size:
            raise ShapeError(f"{np.size(self.labels)} labels pour {self.source.size} ancres source")


def rbf_kernel(zi, zj, sigma: float) -> float:
    """
    Noyau gaussien exp(-||zi - zj||² / 2σ²)

    Args:
        zi: Premier vecteur
        zj: Second vecteur
        sigma: Largeur de bande (> 0)

    Returns:
        Valeur dans (0, 1]
    """
    if not sigma > 0:
        raise ParameterError(f"σ doit être > 0, reçu {sigma}")
    zi = np.asarray(zi, dtype=np.float64).reshape(-1)
    zj = np.asarray(zj, dtype=np.float64).reshape(-1)
    if zi.shape != zj.shape:
        raise ShapeError(f"longueurs différentes: {zi.size} vs {zj.size}")
    diff = zi - zj
    return float(np.exp(-np.dot(diff, diff) / (2.0 * sigma * sigma)))


def gram_matrix(a: Matrix, b: Matrix, sigma: float) -> Matrix:
    """Matrice des noyaux RBF entre les lignes de a et de b"""
    if not sigma > 0:
        raise ParameterError(f"σ doit être > 0, reçu {sigma}")
    return np.exp(-pairwise_sq_dists(a, b) / (2.0 * sigma * sigma))


def median_heuristic_sigma(z_all: Matrix) -> float:
    """
    Médiane des distances euclidiennes entre paires de lignes distinctes

    Returns:
        La médiane, ou 1.0 si elle est nulle
    """
    z_all = as_matrix(z_all, 'z_all')
    n = z_all.shape[0]
    if n < 2:
        raise ParameterError(f"heuristique de la médiane: au moins 2 lignes, reçu {n}")

    d2 = pairwise_sq_dists(z_all, z_all)
    iu = np.triu_indices(n, k=1)
    median = float(np.median(np.sqrt(d2[iu])))
    return median if median > 0 else 1.0


def _mmd_bracket(zs: Matrix, zt: Matrix, sigma: float):
    m, n = zs.shape[0], zt.shape[0]
    k_ss = gram_matrix(zs, zs, sigma)
    k_st = gram_matrix(zs, zt, sigma)
    k_tt = gram_matrix(zt, zt, sigma)
    within = k_ss.sum() / (m * m) + k_tt.sum() / (n * n)
    bracket = within - 2.0 * k_st.sum() / (m * n)
    if bracket <= MMD_REL_TOL * within:
        bracket = 0.0
    return bracket, k_ss, k_st, k_tt


def _check_mmd_inputs(zs, zt, sigma):
    zs = as_matrix(zs, 'zs')
    zt = as_matrix(zt, 'zt')
    if zs.shape[0] < 1 or zt.shape[0] < 1 or zs.size == 0 or zt.size == 0:
        raise ParameterError("MMD: ensembles vides")
    if zs.shape[1] != zt.shape[1]:
        raise ShapeError(f"MMD: largeurs différentes {zs.shape[1]} vs {zt.shape[1]}")
    if not sigma > 0:
        raise ParameterError(f"σ doit être > 0, reçu {sigma}")
    return zs, zt


def empirical_mmd(zs: Matrix, zt: Matrix, sigma: float) -> float:
    """
    MMD empirique entre deux ensembles de représentations

    Le crochet est borné à 0 avant la racine carrée.

    Args:
        zs: Représentations source (m x d)
        zt: Représentations cible (n x d)
        sigma: Largeur de bande du noyau

    Returns:
        Distance >= 0
    """
    zs, zt = _check_mmd_inputs(zs, zt, sigma)
    bracket, _, _, _ = _mmd_bracket(zs, zt, sigma)
    return float(np.sqrt(max(bracket, 0.0)))


def empirical_mmd_grad(zs: Matrix, zt: Matrix, sigma: float) -> Tuple[float, Matrix, Matrix]:
    """
    MMD empirique et gradients par rapport à zs et zt (σ constant)

    Au point où le crochet vaut 0 le sous-gradient retenu est 0.
    """
    zs, zt = _check_mmd_inputs(zs, zt, sigma)
    m, n = zs.shape[0], zt.shape[0]
    bracket, k_ss, k_st, k_tt = _mmd_bracket(zs, zt, sigma)

    if bracket <= 0:
        return 0.0, np.zeros_like(zs), np.zeros_like(zt)

    value = float(np.sqrt(bracket))
    inv_s2 = 1.0 / (sigma * sigma)

    # d k(a, b) / d a = k(a, b) (b - a) / σ²
    d_zs = (2.0 / (m * m)) * (matmul(k_ss, zs) - k_ss.sum(axis=1)[:, None] * zs) * inv_s2 \
        - (2.0 / (m * n)) * (matmul(k_st, zt) - k_st.sum(axis=1)[:, None] * zs) * inv_s2
    d_zt = (2.0 / (n * n)) * (matmul(k_tt, zt) - k_tt.sum(axis=1)[:, None] * zt) * inv_s2 \
        - (2.0 / (m * n)) * (matmul(k_st.T, zs) - k_st.sum(axis=0)[:, None] * zt) * inv_s2

    scale = 1.0 / (2.0 * value)
    return value, d_zs * scale, d_zt * scale


def _contrastive(batch: PairedBatch, temperature_t: float, symmetrize: bool, with_grad: bool,
                 reduction: str = 'sum'):
    if not temperature_t > 0:
        raise ParameterError(f"température doit être > 0, reçu {temperature_t}")
    if reduction not in REDUCTIONS:
        raise ParameterError(f"réduction inconnue: {reduction}")
    b = batch.size
    if b < 1:
        raise ParameterError("perte contrastive: lot vide")

    z = np.vstack([as_matrix(batch.anchors, 'anchors'), as_matrix(batch.augments, 'augments')])
    norms = np.sqrt(np.sum(z * z, axis=1))
    if np.any(norms == 0):
        raise NumericError("perte contrastive: ligne de norme nulle (cosinus indéfini)")

    denom = norms + COSINE_EPS
    u = z / denom[:, None]
    sim = matmul(u, u.T) / temperature_t

    rows = np.arange(2 * b) if symmetrize else np.arange(b)
    positives = np.where(rows < b, rows + b, rows - b)

    logits = sim[rows].copy()
    logits[np.arange(rows.size), rows] = -np.inf
    row_max = np.max(logits, axis=1, keepdims=True)
    exp = np.exp(logits - row_max)
    sum_exp = np.sum(exp, axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(sum_exp[:, 0])
    scale = 1.0 if reduction == 'sum' else 1.0 / rows.size
    value = float(np.sum(lse - sim[rows, positives])) * scale

    if not with_grad:
        return value, None, None

    g = np.zeros((2 * b, 2 * b), dtype=np.float64)
    g[rows] = exp / sum_exp
    g[rows, positives] -= 1.0
    g *= scale

    d_u = matmul(g + g.T, u) / temperature_t
    # u = z / (||z|| + eps)
    proj = np.sum(z * d_u, axis=1) / (norms * denom * denom)
    d_z = d_u / denom[:, None] - z * proj[:, None]
    return value, d_z[:b], d_z[b:]


def contrastive_loss(batch: PairedBatch, temperature_t: float, symmetrize: bool = False,
                     reduction: str = 'sum') -> float:
    """
    Perte contrastive NT-Xent sur un lot apparié

    Somme sur les ancres i de -log( exp(sim(z_i, z_i+)/t) / Σ_{k≠i} exp(sim(z_i, z_k)/t) )
    où les 2b éléments sont les ancres suivies des augmentations.

    Args:
        batch: Lot apparié (b x d)
        temperature_t: Température t > 0
        symmetrize: Utiliser aussi les augmentations comme ancres
        reduction: 'sum' sur les ancres, ou 'mean' (somme divisée par leur nombre)
    """
    value, _, _ = _contrastive(batch, temperature_t, symmetrize, False, reduction)
    return value


def contrastive_loss_grad(batch: PairedBatch, temperature_t: float, symmetrize: bool = False,
                          reduction: str = 'sum') -> Tuple[float, Matrix, Matrix]:
    """Perte contrastive et gradients par rapport aux ancres et augmentations"""
    return _contrastive(batch, temperature_t, symmetrize, True, reduction)


def _check_label(y) -> int:
    if y not in (0, 1):
        raise ParameterError(f"label hors de {{0, 1}}: {y!r}")
    return int(y)


def cross_entropy(y_hat: float, y: int) -> float:
    """
    Entropie croisée binaire -[y log ŷ + (1-y) log(1-ŷ)]

    ŷ est borné à [ε, 1-ε] avec ε = 1e-12.
    """
    y = _check_label(y)
    p = float(np.clip(y_hat, CE_EPS, 1.0 - CE_EPS))
    return -(y * np.log(p) + (1 - y) * np.log(1.0 - p))


def cross_entropy_batch(y_hat, y) -> float:
    """Moyenne de l'entropie croisée sur un lot"""
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if y_hat.shape != y.shape:
        raise ShapeError(f"{y_hat.size} probabilités pour {y.size} labels")
    if y.size == 0:
        raise ParameterError("entropie croisée: lot vide")
    if not np.all((y == 0) | (y == 1)):
        raise ParameterError("labels hors de {0, 1}")
    p = np.clip(y_hat, CE_EPS, 1.0 - CE_EPS)
    losses = -(y * np.log(p) + (1 - y) * np.log(1.0 - p))
    return float(np.mean(losses))


def softmax(logits: Matrix) -> Matrix:
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=1, keepdims=True)


def cross_entropy_logits_grad(logits: Matrix, labels) -> Tuple[float, Matrix]:
    """
    Entropie croisée moyenne sur des logits à deux classes et son gradient

    Le gradient d'un élément dont la probabilité est bornée par ε est nul.

    Returns:
        (valeur, dL/dlogits)
    """
    logits = as_matrix(logits, 'logits')
    labels = np.asarray(labels).reshape(-1)
    if logits.shape[1] != 2 or logits.shape[0] != labels.size:
        raise ShapeError(f"logits {logits.shape} pour {labels.size} labels")

    probs = softmax(logits)
    value = cross_entropy_batch(probs[:, 1], labels)

    b = labels.size
    onehot = np.zeros_like(probs)
    onehot[np.arange(b), labels.astype(int)] = 1.0
    grad = (probs - onehot) / b
    clamped = (probs[:, 1] < CE_EPS) | (probs[:, 1] > 1.0 - CE_EPS)
    grad[clamped] = 0.0
    return value, grad


def total_loss(ce_s: float, ce_s_aug: float, ctr_s: float, ctr_t: float,
               mmd: float, w: LossWeights) -> float:
    """
    Objectif total pondéré

    ½·λ_CE·(CE + CE+) + ½·λ_ctr·(Ctr_S + Ctr_T) + λ_MMD·MMD
    """
    components = {'ce_s': ce_s, 'ce_s_aug': ce_s_aug, 'ctr_s': ctr_s, 'ctr_t': ctr_t, 'mmd': mmd}
    for name, value in components.items():
        if not np.isfinite(value):
            raise NumericError(f"composante {name} non finie", diagnostics=components)
    return (0.5 * w.lambda_ce * (ce_s + ce_s_aug)
            + 0.5 * w.lambda_ctr * (ctr_s + ctr_t)
            + w.lambda_mmd * mmd)
