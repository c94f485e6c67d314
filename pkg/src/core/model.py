"""
Tête de projection et classifieur ConDA-TTA

Propagation avant, rétropropagation manuelle, batch normalization avec
estimations glissantes et dropout inversé. Les gradients des pertes sont
consommés via composite_objective / backward.
"""

import copy
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .exceptions import ParameterError, ShapeError, StateError
from .losses import (LossWeights, PairedBatch, StepBatch, contrastive_loss_grad,
                     cross_entropy_logits_grad, empirical_mmd_grad, softmax, total_loss)
from .numeric import Matrix, SeededRng, as_matrix, finite_diff_grad, matmul

TRAIN = 'train'
EVAL = 'eval'


@dataclass
class ModelConfig:
    """Dimensions et constantes de l'architecture"""
    input_dim: int = 768
    proj_hidden: int = 768
    proj_dim: int = 500
    cls_hidden: int = 768
    n_classes: int = 2
    dropout: float = 0.2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        for name in ('input_dim', 'proj_hidden', 'proj_dim', 'cls_hidden', 'n_classes'):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} doit être >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout doit être dans [0, 1), reçu {self.dropout}")
        if not 0.0 <= self.bn_momentum <= 1.0:
            raise ParameterError(f"momentum BN doit être dans [0, 1], reçu {self.bn_momentum}")
        if not self.bn_eps > 0:
            raise ParameterError(f"epsilon BN doit être > 0, reçu {self.bn_eps}")


@dataclass
class LinearLayer:
    """Couche linéaire y = x·Wᵀ + b"""
    weight: np.ndarray  # out x in
    bias: np.ndarray

    @classmethod
    def initialize(cls, n_in: int, n_out: int, rng: SeededRng) -> 'LinearLayer':
        """Initialisation uniforme dans ±1/√fan_in"""
        bound = 1.0 / np.sqrt(n_in)
        weight = rng.uniform((n_out, n_in), -bound, bound)
        bias = rng.uniform(n_out, -bound, bound)
        return cls(weight=weight, bias=bias)

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Matrix) -> Matrix:
        if x.shape[1] != self.n_in:
            raise ShapeError(f"largeur d'entrée {x.shape[1]}, attendu {self.n_in}")
        return matmul(x, self.weight.T) + self.bias

    def backward(self, x: Matrix, dy: Matrix):
        """Retourne (dx, dW, db)"""
        return matmul(dy, self.weight), matmul(dy.T, x), dy.sum(axis=0)


@dataclass
class BatchNormState:
    """Batch normalization avec estimations glissantes μ̂ et σ̂²"""
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = TRAIN
    num_batches_tracked: int = 0

    @classmethod
    def initialize(cls, n_features: int, momentum: float = 0.1, eps: float = 1e-5) -> 'BatchNormState':
        return cls(
            gamma=np.ones(n_features),
            beta=np.zeros(n_features),
            running_mean=np.zeros(n_features),
            running_var=np.ones(n_features),
            momentum=momentum,
            eps=eps,
        )

    @property
    def n_features(self) -> int:
        return self.gamma.size


@dataclass
class _BnCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    training: bool


def _bn_forward(bn: BatchNormState, x: Matrix):
    if x.shape[1] != bn.n_features:
        raise ShapeError(f"BN: largeur {x.shape[1]}, attendu {bn.n_features}")

    if bn.mode == TRAIN:
        if x.shape[0] < 2:
            raise ParameterError("BN en mode train: lot d'au moins 2 lignes requis")
        mu = x.mean(axis=0)
        var = ((x - mu) ** 2).mean(axis=0)
        rho = bn.momentum
        bn.running_mean = (1.0 - rho) * bn.running_mean + rho * mu
        bn.running_var = (1.0 - rho) * bn.running_var + rho * var
        bn.num_batches_tracked += 1
        training = True
    elif bn.mode == EVAL:
        if bn.num_batches_tracked == 0:
            raise StateError("BN en mode eval sans estimations glissantes initialisées")
        mu, var = bn.running_mean, bn.running_var
        training = False
    else:
        raise StateError(f"mode BN inconnu: {bn.mode}")

    inv_std = 1.0 / np.sqrt(var + bn.eps)
    x_hat = (x - mu) * inv_std
    return bn.gamma * x_hat + bn.beta, _BnCache(x_hat=x_hat, inv_std=inv_std, training=training)


def bn_forward(bn: BatchNormState, x: Matrix) -> Matrix:
    """
    Normalisation d'un lot

    En mode train: statistiques du lot (variance biaisée) puis mise à jour
    μ̂ ← (1-ρ)·μ̂ + ρ·μ et σ̂² ← (1-ρ)·σ̂² + ρ·σ². En mode eval: μ̂, σ̂² figés.
    """
    y, _ = _bn_forward(bn, as_matrix(x, 'x'))
    return y


def _bn_backward(bn: BatchNormState, cache: _BnCache, dy: Matrix):
    d_gamma = np.sum(dy * cache.x_hat, axis=0)
    d_beta = np.sum(dy, axis=0)
    dx_hat = dy * bn.gamma
    if not cache.training:
        return dx_hat * cache.inv_std, d_gamma, d_beta
    b = dy.shape[0]
    dx = (cache.inv_std / b) * (b * dx_hat - dx_hat.sum(axis=0)
                                - cache.x_hat * np.sum(dx_hat * cache.x_hat, axis=0))
    return dx, d_gamma, d_beta


@dataclass
class _ProjectionCache:
    x: np.ndarray
    hidden: np.ndarray


@dataclass
class _ClassifierCache:
    z_in: np.ndarray
    mask_in: Optional[np.ndarray]
    bn1: _BnCache
    act1: np.ndarray
    bn2: _BnCache
    act2: np.ndarray
    mask_out: Optional[np.ndarray]
    act2_dropped: np.ndarray


@dataclass
class ForwardTape:
    """
    Enregistrement des passes avant nécessaires à la rétropropagation

    Avec freeze_masks=True, les masques de dropout déjà enregistrés pour une
    clé sont rejoués au lieu d'être retirés.
    """
    freeze_masks: bool = False
    projections: Dict[str, _ProjectionCache] = field(default_factory=dict)
    classifications: Dict[str, _ClassifierCache] = field(default_factory=dict)
    masks: Dict[str, np.ndarray] = field(default_factory=dict)

    def reset(self) -> None:
        """Oublie les caches en gardant les masques"""
        self.projections.clear()
        self.classifications.clear()

    @property
    def is_empty(self) -> bool:
        return not self.projections and not self.classifications


@dataclass
class ModelState:
    """Paramètres et statistiques BN de la tête de projection et du classifieur"""
    config: ModelConfig
    proj1: LinearLayer
    proj2: LinearLayer
    cls1: LinearLayer
    cls2: LinearLayer
    cls3: LinearLayer
    bn1: BatchNormState
    bn2: BatchNormState
    rng: SeededRng
    seed: int
    mode: str = TRAIN

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> 'ModelState':
        """
        Crée un modèle aux poids tirés du flux 'init' de la graine

        Args:
            config: Dimensions de l'architecture
            seed: Graine de l'exécution

        Returns:
            Modèle en mode train
        """
        root = SeededRng(seed)
        init_rng = root.child('init')
        c = config
        return cls(
            config=c,
            proj1=LinearLayer.initialize(c.input_dim, c.proj_hidden, init_rng),
            proj2=LinearLayer.initialize(c.proj_hidden, c.proj_dim, init_rng),
            cls1=LinearLayer.initialize(c.proj_dim, c.cls_hidden, init_rng),
            cls2=LinearLayer.initialize(c.cls_hidden, c.cls_hidden, init_rng),
            cls3=LinearLayer.initialize(c.cls_hidden, c.n_classes, init_rng),
            bn1=BatchNormState.initialize(c.cls_hidden, c.bn_momentum, c.bn_eps),
            bn2=BatchNormState.initialize(c.cls_hidden, c.bn_momentum, c.bn_eps),
            rng=root.child('dropout'),
            seed=seed,
        )

    def linear_layers(self) -> 'OrderedDict[str, LinearLayer]':
        return OrderedDict([('proj1', self.proj1), ('proj2', self.proj2),
                            ('cls1', self.cls1), ('cls2', self.cls2), ('cls3', self.cls3)])

    def bn_layers(self) -> 'OrderedDict[str, BatchNormState]':
        return OrderedDict([('bn1', self.bn1), ('bn2', self.bn2)])

    def parameters(self) -> 'OrderedDict[str, np.ndarray]':
        """Paramètres entraînables (références, modifiables en place)"""
        params = OrderedDict()
        for name, layer in self.linear_layers().items():
            params[f'{name}.weight'] = layer.weight
            params[f'{name}.bias'] = layer.bias
        for name, bn in self.bn_layers().items():
            params[f'{name}.gamma'] = bn.gamma
            params[f'{name}.beta'] = bn.beta
        return params

    def statistics(self) -> 'OrderedDict[str, np.ndarray]':
        """Estimations glissantes BN (pas des paramètres)"""
        stats = OrderedDict()
        for name, bn in self.bn_layers().items():
            stats[f'{name}.running_mean'] = bn.running_mean
            stats[f'{name}.running_var'] = bn.running_var
        return stats

    def snapshot(self) -> 'ModelState':
        return copy.deepcopy(self)


def set_mode(model: ModelState, mode: str) -> ModelState:
    """Bascule dropout et BN en mode train ou eval"""
    if mode not in (TRAIN, EVAL):
        raise ParameterError(f"mode inconnu: {mode}")
    model.mode = mode
    for bn in model.bn_layers().values():
        bn.mode = mode
    return model


def project(model: ModelState, x: Matrix, tape: Optional[ForwardTape] = None,
            key: str = 'x') -> Matrix:
    """
    Tête de projection z = W₂·tanh(W₁·x + b₁) + b₂

    Args:
        model: Modèle
        x: Embeddings (b x input_dim)
        tape: Enregistrement pour la rétropropagation
        key: Nom de la passe dans l'enregistrement

    Returns:
        Représentations projetées (b x proj_dim)
    """
    x = as_matrix(x, 'x')
    if x.shape[1] != model.config.input_dim:
        raise ShapeError(f"largeur d'entrée {x.shape[1]}, attendu {model.config.input_dim}")
    hidden = np.tanh(model.proj1.forward(x))
    z = model.proj2.forward(hidden)
    if tape is not None:
        tape.projections[key] = _ProjectionCache(x=x, hidden=hidden)
    return z


def _dropout_mask(model: ModelState, shape, tape: Optional[ForwardTape], mask_key: str):
    rate = model.config.dropout
    if model.mode != TRAIN or rate == 0.0:
        return None
    if tape is not None and tape.freeze_masks and mask_key in tape.masks:
        mask = tape.masks[mask_key]
        if mask.shape != shape:
            raise ShapeError(f"masque figé {mask.shape} pour une entrée {shape}")
        return mask
    mask = (model.rng.random(shape) >= rate) / (1.0 - rate)
    if tape is not None:
        tape.masks[mask_key] = mask
    return mask


def classifier_logits(model: ModelState, z: Matrix, tape: Optional[ForwardTape] = None,
                      key: str = 'x') -> Matrix:
    """Logits du classifieur (avant softmax)"""
    z = as_matrix(z, 'z')
    if z.shape[1] != model.config.proj_dim:
        raise ShapeError(f"largeur de z {z.shape[1]}, attendu {model.config.proj_dim}")

    mask_in = _dropout_mask(model, z.shape, tape, f'{key}/in')
    z_in = z * mask_in if mask_in is not None else z

    a1, bn1_cache = _bn_forward(model.bn1, model.cls1.forward(z_in))
    act1 = np.tanh(a1)
    a2, bn2_cache = _bn_forward(model.bn2, model.cls2.forward(act1))
    act2 = np.tanh(a2)

    mask_out = _dropout_mask(model, act2.shape, tape, f'{key}/out')
    act2_dropped = act2 * mask_out if mask_out is not None else act2
    logits = model.cls3.forward(act2_dropped)

    if tape is not None:
        tape.classifications[key] = _ClassifierCache(
            z_in=z_in, mask_in=mask_in, bn1=bn1_cache, act1=act1,
            bn2=bn2_cache, act2=act2, mask_out=mask_out, act2_dropped=act2_dropped,
        )
    return logits


def classify(model: ModelState, z: Matrix, tape: Optional[ForwardTape] = None,
             key: str = 'x') -> Matrix:
    """
    Probabilités de classe (b x 2), lignes sommant à 1

    En mode eval le dropout est l'identité et BN utilise μ̂, σ̂².
    """
    return softmax(classifier_logits(model, z, tape, key))


def predict_proba(model: ModelState, x: Matrix) -> Matrix:
    """Projection puis classification, sans enregistrement"""
    return classify(model, project(model, x))


def _zero_grads(model: ModelState) -> 'OrderedDict[str, np.ndarray]':
    return OrderedDict((name, np.zeros_like(p)) for name, p in model.parameters().items())


def _classifier_backward(model: ModelState, cache: _ClassifierCache, d_logits: Matrix, grads):
    d_act2_dropped, dw, db = model.cls3.backward(cache.act2_dropped, d_logits)
    grads['cls3.weight'] += dw
    grads['cls3.bias'] += db

    d_act2 = d_act2_dropped * cache.mask_out if cache.mask_out is not None else d_act2_dropped
    d_a2 = d_act2 * (1.0 - cache.act2 ** 2)
    d_bn2_in, d_gamma, d_beta = _bn_backward(model.bn2, cache.bn2, d_a2)
    grads['bn2.gamma'] += d_gamma
    grads['bn2.beta'] += d_beta

    d_act1, dw, db = model.cls2.backward(cache.act1, d_bn2_in)
    grads['cls2.weight'] += dw
    grads['cls2.bias'] += db

    d_a1 = d_act1 * (1.0 - cache.act1 ** 2)
    d_bn1_in, d_gamma, d_beta = _bn_backward(model.bn1, cache.bn1, d_a1)
    grads['bn1.gamma'] += d_gamma
    grads['bn1.beta'] += d_beta

    d_z_in, dw, db = model.cls1.backward(cache.z_in, d_bn1_in)
    grads['cls1.weight'] += dw
    grads['cls1.bias'] += db

    return d_z_in * cache.mask_in if cache.mask_in is not None else d_z_in


def _projection_backward(model: ModelState, cache: _ProjectionCache, d_z: Matrix, grads):
    d_hidden, dw, db = model.proj2.backward(cache.hidden, d_z)
    grads['proj2.weight'] += dw
    grads['proj2.bias'] += db
    d_pre = d_hidden * (1.0 - cache.hidden ** 2)
    _, dw, db = model.proj1.backward(cache.x, d_pre)
    grads['proj1.weight'] += dw
    grads['proj1.bias'] += db


def backward(model: ModelState, tape: Optional[ForwardTape],
             d_logits: Optional[Dict[str, Matrix]] = None,
             d_z: Optional[Dict[str, Matrix]] = None) -> 'OrderedDict[str, np.ndarray]':
    """
    Rétropropagation exacte à partir des gradients amont

    Args:
        model: Modèle utilisé pour la passe avant
        tape: Enregistrement de la passe avant
        d_logits: dL/dlogits par clé de passe classifieur
        d_z: dL/dz par clé de passe de projection (hors contribution du classifieur)

    Returns:
        Gradients par nom de paramètre; les estimations BN n'en reçoivent pas
    """
    if tape is None or tape.is_empty:
        raise StateError("rétropropagation sans passe avant enregistrée")

    d_logits = d_logits or {}
    total_dz: Dict[str, Matrix] = {k: np.array(v, dtype=np.float64) for k, v in (d_z or {}).items()}
    grads = _zero_grads(model)

    for key, upstream in d_logits.items():
        cache = tape.classifications.get(key)
        if cache is None:
            raise StateError(f"aucune passe classifieur enregistrée pour '{key}'")
        dz = _classifier_backward(model, cache, np.asarray(upstream, dtype=np.float64), grads)
        total_dz[key] = total_dz[key] + dz if key in total_dz else dz

    for key, upstream in total_dz.items():
        cache = tape.projections.get(key)
        if cache is None:
            if key in tape.classifications:
                continue
            raise StateError(f"aucune passe de projection enregistrée pour '{key}'")
        _projection_backward(model, cache, upstream, grads)

    return grads


@dataclass
class ObjectiveTerms:
    """Valeurs de l'objectif total et gradients amont associés"""
    total: float
    ce_source: float
    ce_source_aug: float
    ctr_source: float
    ctr_target: float
    mmd: float
    sigma: float
    d_logits: Dict[str, Matrix]
    d_z: Dict[str, Matrix]

    def components(self) -> Dict[str, float]:
        return {
            'total': self.total,
            'ce_source': self.ce_source,
            'ce_source_aug': self.ce_source_aug,
            'ctr_source': self.ctr_source,
            'ctr_target': self.ctr_target,
            'mmd': self.mmd,
            'sigma': self.sigma,
        }


def composite_objective(model: ModelState, batch: StepBatch, weights: LossWeights,
                        tape: ForwardTape, symmetrize: bool = False,
                        sigma: Optional[float] = None) -> ObjectiveTerms:
    """
    Passe avant complète et objectif total

    CE sur ancres source et augmentations source, perte contrastive sur les
    paires source et cible dans l'espace projeté, MMD entre ancres source et
    ancres cible projetées.

    Args:
        model: Modèle (BN en mode train)
        batch: Lots source étiquetés et cible non étiquetés
        weights: Poids de l'objectif
        tape: Enregistrement rempli par la passe avant
        symmetrize: Perte contrastive symétrisée
        sigma: σ imposé; sinon résolu par la politique de weights

    Returns:
        Composantes de la perte et gradients amont par passe
    """
    zs = project(model, batch.source.anchors, tape, 'source')
    zs_aug = project(model, batch.source.augments, tape, 'source_aug')
    zt = project(model, batch.target.anchors, tape, 'target')
    zt_aug = project(model, batch.target.augments, tape, 'target_aug')

    logits_s = classifier_logits(model, zs, tape, 'source')
    logits_s_aug = classifier_logits(model, zs_aug, tape, 'source_aug')

    ce_s, d_ls = cross_entropy_logits_grad(logits_s, batch.labels)
    ce_s_aug, d_ls_aug = cross_entropy_logits_grad(logits_s_aug, batch.labels)

    t = weights.temperature_t
    reduction = weights.contrastive_reduction
    ctr_s, d_zs_c, d_zs_aug_c = contrastive_loss_grad(PairedBatch(zs, zs_aug), t, symmetrize, reduction)
    ctr_t, d_zt_c, d_zt_aug_c = contrastive_loss_grad(PairedBatch(zt, zt_aug), t, symmetrize, reduction)

    if sigma is None:
        sigma = weights.sigma.resolve(np.vstack([zs, zt]))
    mmd, d_zs_m, d_zt_m = empirical_mmd_grad(zs, zt, sigma)

    total = total_loss(ce_s, ce_s_aug, ctr_s, ctr_t, mmd, weights)

    half_ce = 0.5 * weights.lambda_ce
    half_ctr = 0.5 * weights.lambda_ctr
    lam_mmd = weights.lambda_mmd
    return ObjectiveTerms(
        total=total, ce_source=ce_s, ce_source_aug=ce_s_aug,
        ctr_source=ctr_s, ctr_target=ctr_t, mmd=mmd, sigma=float(sigma),
        d_logits={'source': half_ce * d_ls, 'source_aug': half_ce * d_ls_aug},
        d_z={
            'source': half_ctr * d_zs_c + lam_mmd * d_zs_m,
            'source_aug': half_ctr * d_zs_aug_c,
            'target': half_ctr * d_zt_c + lam_mmd * d_zt_m,
            'target_aug': half_ctr * d_zt_aug_c,
        },
    )


@dataclass
class GradCheckReport:
    """Résultat d'une vérification de gradient par différences finies"""
    max_relative_error: float
    tolerance: float
    passed: bool
    per_parameter: Dict[str, float]
    n_checked: int

    def to_dict(self) -> Dict:
        return {
            'max_relative_error': self.max_relative_error,
            'tolerance': self.tolerance,
            'passed': self.passed,
            'n_checked': self.n_checked,
            'per_parameter': dict(self.per_parameter),
        }


# sous le plancher, l'erreur est mesurée en absolu (biais annulés par BN)
def _relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(model: ModelState, batch: StepBatch, tolerance: float = 1e-3,
               weights: Optional[LossWeights] = None, h: float = 1e-5,
               symmetrize: bool = False,
               analytic_override: Optional[Dict[str, np.ndarray]] = None) -> GradCheckReport:
    """
    Compare les gradients analytiques de l'objectif total aux différences finies

    Le dropout est figé (masques rejoués) et σ est fixé une fois pour toutes.
    Le modèle fourni n'est pas modifié.

    Args:
        model: Petit modèle (<= 16 unités par couche)
        batch: Lots source / cible
        tolerance: Erreur relative maximale admise
        weights: Poids de l'objectif (défaut: poids standards)
        h: Pas des différences finies
        symmetrize: Perte contrastive symétrisée
        analytic_override: Gradients analytiques à tester à la place (injection de défaut)

    Returns:
        Rapport avec l'erreur relative maximale par paramètre
    """
    weights = weights or LossWeights()
    work = model.snapshot()
    set_mode(work, TRAIN)

    tape = ForwardTape(freeze_masks=True)
    terms = composite_objective(work, batch, weights, tape, symmetrize)
    sigma = terms.sigma
    analytic = analytic_override or backward(work, tape, terms.d_logits, terms.d_z)

    params = work.parameters()
    per_parameter: Dict[str, float] = {}
    n_checked = 0

    for name, param in params.items():
        original = param.copy()

        def f(values, _param=param):
            _param[...] = values
            tape.reset()
            return composite_objective(work, batch, weights, tape, symmetrize, sigma=sigma).total

        numeric = finite_diff_grad(f, original, h)
        param[...] = original
        errors = _relative_errors(np.asarray(analytic[name]), numeric)
        per_parameter[name] = float(errors.max()) if errors.size else 0.0
        n_checked += param.size

    max_error = max(per_parameter.values()) if per_parameter else 0.0
    return GradCheckReport(
        max_relative_error=max_error,
        tolerance=tolerance,
        passed=bool(max_error <= tolerance),
        per_parameter=per_parameter,
        n_checked=n_checked,
    )
