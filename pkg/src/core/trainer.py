"""
Boucle d'entraînement ConDA-TTA et adaptation au moment du test

Assemblage des lots source / cible, augmentation dans l'espace des
features, optimisation de l'objectif total avec early stopping sur la CE de
validation source, puis mise à jour des estimations BN sur le test cible.
"""

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .adam import AdamState, adam_step
from .exceptions import DataError, NumericError, ParameterError
from .logger import log_debug, log_epoch, log_info, log_warning
from .losses import LossWeights, PairedBatch, StepBatch, cross_entropy_batch
from .model import (EVAL, TRAIN, ForwardTape, ModelConfig, ModelState, backward,
                    classifier_logits, composite_objective, predict_proba, project, set_mode)
from .numeric import SeededRng, gaussian_sample
from ..data.embeddings import EmbeddingRecord, UnlabeledRecord, labels_of, records_to_matrix

AUGMENT_KINDS = ('gaussian', 'mask', 'swap', 'combined')


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparamètres d'une exécution"""
    batch_size: int = 256
    max_epochs: int = 20
    patience: int = 5
    learning_rate: float = 2e-4
    loss_weights: LossWeights = field(default_factory=LossWeights)
    augment_std: float = 0.05
    augment_kind: str = 'gaussian'
    seed: int = 0
    tta_batch_size: int = 256
    tta_passes: int = 1
    use_tta: bool = True
    symmetrize_contrastive: bool = False
    validation_fraction: float = 0.1
    target_test_fraction: float = 0.2
    proj_hidden: int = 768
    proj_dim: int = 500
    cls_hidden: int = 768
    dropout: float = 0.2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        for name in ('patience', 'tta_passes'):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} doit être >= 1")
        # la BN en mode train exige au moins 2 lignes par lot
        for name in ('batch_size', 'tta_batch_size'):
            if int(getattr(self, name)) < 2:
                raise ParameterError(f"{name} doit être >= 2")
        if self.max_epochs < 0:
            raise ParameterError("max_epochs doit être >= 0")
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate doit être > 0, reçu {self.learning_rate}")
        if self.augment_std < 0:
            raise ParameterError(f"augment_std doit être >= 0, reçu {self.augment_std}")
        if self.augment_kind not in AUGMENT_KINDS:
            raise ParameterError(f"augment_kind inconnu: {self.augment_kind}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ParameterError("validation_fraction doit être dans (0, 1)")

    def model_config(self, input_dim: int) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim, proj_hidden=self.proj_hidden, proj_dim=self.proj_dim,
            cls_hidden=self.cls_hidden, dropout=self.dropout,
            bn_momentum=self.bn_momentum, bn_eps=self.bn_eps,
        )

    def with_weights(self, **changes) -> 'TrainConfig':
        return replace(self, loss_weights=replace(self.loss_weights, **changes))

    def to_flat_dict(self) -> Dict[str, Any]:
        """Clés à plat, telles qu'écrites dans les fichiers key=value"""
        flat = {k: v for k, v in asdict(self).items() if k != 'loss_weights'}
        w = self.loss_weights
        flat.update({
            'lambda_ce': w.lambda_ce,
            'lambda_ctr': w.lambda_ctr,
            'lambda_mmd': w.lambda_mmd,
            'temperature': w.temperature_t,
            'sigma': str(w.sigma),
            'contrastive_reduction': w.contrastive_reduction,
        })
        return dict(sorted(flat.items()))


def source_only_config(cfg: TrainConfig) -> TrainConfig:
    """Référence sans adaptation: CE seule, sans TTA"""
    return replace(cfg.with_weights(lambda_ctr=0.0, lambda_mmd=0.0), use_tta=False)


@dataclass
class TrainTrace:
    """Suivi par époque des composantes de la perte"""
    entries: List[Dict[str, float]] = field(default_factory=list)
    early_stop_epoch: Optional[int] = None
    best_epoch: Optional[int] = None
    tta_applied: bool = False

    COLUMNS = ('epoch', 'total', 'ce_source', 'ce_source_aug', 'ctr_source',
               'ctr_target', 'mmd', 'val_ce')

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.entries, columns=list(self.COLUMNS))

    def to_csv(self, path: Union[str, Path]) -> Path:
        from ..utils.exports import write_table
        return write_table(self.to_frame(), path)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'entries': self.entries,
            'early_stop_epoch': self.early_stop_epoch,
            'best_epoch': self.best_epoch,
            'tta_applied': self.tta_applied,
        }

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path


def augment_features(x, std: float, rng: SeededRng, kind: str = 'gaussian') -> np.ndarray:
    """
    Augmentation d'un vecteur de features, label préservé

    Args:
        x: Vecteur de features
        std: Intensité (écart-type du bruit, ou fraction pour mask/swap)
        rng: Générateur de l'exécution
        kind: gaussian, mask, swap ou combined

    Returns:
        Vecteur augmenté
    """
    x = np.asarray(x, dtype=np.float64)
    return augment_matrix(x.reshape(1, -1), std, rng, kind).reshape(x.shape)


def augment_matrix(x: np.ndarray, std: float, rng: SeededRng, kind: str = 'gaussian') -> np.ndarray:
    """Augmentation ligne par ligne d'une matrice de features"""
    if std < 0:
        raise ParameterError(f"écart-type d'augmentation négatif: {std}")
    if kind not in AUGMENT_KINDS:
        raise ParameterError(f"augmentation inconnue: {kind}")
    x = np.array(x, dtype=np.float64)
    if std == 0:
        return x

    if kind in ('mask', 'combined'):
        fraction = min(std, 0.9)
        x = x * (rng.random(x.shape) >= fraction)
    if kind == 'swap':
        n_swaps = max(1, int(round(std * x.shape[1])))
        for row in x:
            for _ in range(n_swaps):
                i, j = rng.integers(0, x.shape[1], 2)
                row[i], row[j] = row[j], row[i]
    if kind in ('gaussian', 'combined'):
        x = x + gaussian_sample(rng, x.size, 0.0, std).reshape(x.shape)
    return x


class BatchAssembler:
    """
    Produit les lots appariés d'une époque

    L'époque suit le pool source; le pool cible est un flux cyclique remélangé
    à chaque épuisement pour que chaque lot cible ait la taille du lot source.
    Les labels cibles ne sont jamais lus: le pool cible est une matrice.
    """

    def __init__(self, source_x: np.ndarray, source_y: np.ndarray, target_x: np.ndarray,
                 cfg: TrainConfig, rng: SeededRng):
        if len(source_x) == 0 or len(target_x) == 0:
            raise DataError("pool source ou cible vide")
        self.source_x = source_x
        self.source_y = source_y
        self.target_x = target_x
        self.cfg = cfg
        self._shuffle_rng = rng.child('shuffle')
        self._augment_rng = rng.child('augment')
        self._target_order = np.zeros(0, dtype=np.int64)
        self._target_pos = 0
        self.target_cycles = 0

    def _next_target(self, n: int) -> np.ndarray:
        picked = []
        while n > 0:
            if self._target_pos >= self._target_order.size:
                self._target_order = self._shuffle_rng.permutation(len(self.target_x))
                self._target_pos = 0
                self.target_cycles += 1
            take = min(n, self._target_order.size - self._target_pos)
            picked.append(self._target_order[self._target_pos:self._target_pos + take])
            self._target_pos += take
            n -= take
        return np.concatenate(picked)

    def _augment(self, x: np.ndarray) -> np.ndarray:
        return augment_matrix(x, self.cfg.augment_std, self._augment_rng, self.cfg.augment_kind)

    def epoch(self) -> Iterator[StepBatch]:
        order = self._shuffle_rng.permutation(len(self.source_x))
        size = self.cfg.batch_size
        for start in range(0, order.size, size):
            idx = order[start:start + size]
            if idx.size < 2:
                # BN en mode train: un lot d'une ligne n'a pas de variance
                continue
            t_idx = self._next_target(idx.size)
            xs = self.source_x[idx]
            xt = self.target_x[t_idx]
            yield StepBatch(
                source=PairedBatch(xs, self._augment(xs)),
                labels=self.source_y[idx],
                target=PairedBatch(xt, self._augment(xt)),
            )


def assemble_step_batches(source: Sequence[EmbeddingRecord], target: Sequence[UnlabeledRecord],
                          cfg: TrainConfig, rng: SeededRng) -> List[StepBatch]:
    """
    Lots d'une époque source, avec lots cibles de même taille

    Args:
        source: Records source étiquetés
        target: Records cible d'entraînement (sans label)
        cfg: Configuration (batch_size, augmentation)
        rng: Générateur de l'exécution

    Returns:
        Liste de StepBatch
    """
    if not source or not target:
        raise DataError("pool source ou cible vide")
    assembler = BatchAssembler(records_to_matrix(source), labels_of(source),
                               records_to_matrix(target), cfg, rng)
    return list(assembler.epoch())


def train_step(model: ModelState, opt: AdamState, batch: StepBatch,
               cfg: TrainConfig) -> Dict[str, float]:
    """
    Un pas d'optimisation de l'objectif total

    Args:
        model: Modèle en mode train (modifié en place)
        opt: État Adam
        batch: Lots du pas
        cfg: Configuration

    Returns:
        Composantes de la perte avant la mise à jour
    """
    if any(bn.mode != TRAIN for bn in model.bn_layers().values()):
        raise ParameterError("train_step exige les BN en mode train")

    tape = ForwardTape()
    terms = composite_objective(model, batch, cfg.loss_weights, tape, cfg.symmetrize_contrastive)
    components = terms.components()
    if not all(np.isfinite(v) for v in components.values()):
        raise NumericError("perte non finie", diagnostics=components)

    grads = backward(model, tape, terms.d_logits, terms.d_z)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"gradient non fini pour {name}", diagnostics=components)

    adam_step(opt, model.parameters(), grads, cfg.learning_rate)
    return components


def _split_validation(n: int, cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    n_val = max(1, int(round(n * cfg.validation_fraction)))
    if n - n_val < 2:
        raise DataError(f"pool source trop petit pour une validation: {n} records")
    order = SeededRng(cfg.seed).child('validation').permutation(n)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _validation_cross_entropy(model: ModelState, x: np.ndarray, y: np.ndarray) -> float:
    set_mode(model, EVAL)
    probs = predict_proba(model, x)
    set_mode(model, TRAIN)
    return cross_entropy_batch(probs[:, 1], y)


def fit(model: ModelState, source: Sequence[EmbeddingRecord],
        target_train: Sequence[UnlabeledRecord],
        cfg: TrainConfig) -> Tuple[ModelState, TrainTrace]:
    """
    Entraîne le modèle avec early stopping sur la CE de validation source

    Args:
        model: Modèle initial (non modifié)
        source: Records source étiquetés
        target_train: Records cible sans label
        cfg: Configuration

    Returns:
        (meilleur modèle en mode eval, trace)
    """
    trace = TrainTrace()
    if cfg.max_epochs == 0:
        return model, trace
    if not source or not target_train:
        raise DataError("pool source ou cible vide")

    xs_all = records_to_matrix(source)
    ys_all = labels_of(source)
    xt = records_to_matrix(target_train)
    train_idx, val_idx = _split_validation(len(source), cfg)

    work = model.snapshot()
    set_mode(work, TRAIN)
    opt = AdamState(lr=cfg.learning_rate)
    assembler = BatchAssembler(xs_all[train_idx], ys_all[train_idx], xt, cfg,
                               SeededRng(cfg.seed).child('batches'))

    best_model: Optional[ModelState] = None
    best_val = np.inf
    waiting = 0

    log_info("Début entraînement", source=len(train_idx), validation=len(val_idx),
             target=len(xt), epochs=cfg.max_epochs, seed=cfg.seed)

    for epoch in range(1, cfg.max_epochs + 1):
        sums: Dict[str, float] = {}
        n_steps = 0
        for batch in assembler.epoch():
            try:
                components = train_step(work, opt, batch, cfg)
            except NumericError as e:
                e.diagnostics.update({'epoch': epoch, 'step': n_steps})
                raise
            for key, value in components.items():
                sums[key] = sums.get(key, 0.0) + value
            n_steps += 1

        if n_steps == 0:
            raise DataError("aucun lot d'entraînement (pool source trop petit)")

        val_ce = _validation_cross_entropy(work, xs_all[val_idx], ys_all[val_idx])
        entry = {'epoch': epoch}
        entry.update({k: sums[k] / n_steps for k in TrainTrace.COLUMNS[1:-1]})
        entry['val_ce'] = val_ce
        trace.entries.append(entry)
        log_epoch(entry)

        if val_ce < best_val:
            best_val = val_ce
            best_model = work.snapshot()
            trace.best_epoch = epoch
            waiting = 0
        else:
            waiting += 1
            if waiting > cfg.patience:
                trace.early_stop_epoch = epoch
                log_info(f"Early stopping à l'époque {epoch}", best_epoch=trace.best_epoch)
                break

    if best_model is None:
        log_warning("Aucune amélioration de validation, dernier état conservé")
        best_model = work
    set_mode(best_model, EVAL)
    return best_model, trace


def _tta_batches(n: int, size: int) -> List[np.ndarray]:
    chunks = [np.arange(start, min(start + size, n)) for start in range(0, n, size)]
    if len(chunks) > 1 and chunks[-1].size < 2:
        # un lot d'une ligne est rattaché au précédent
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def tta_adapt(model: ModelState, target_features: np.ndarray, tta_batch_size: int,
              passes: int = 1) -> ModelState:
    """
    Adaptation au moment du test des estimations BN

    BN en mode train, dropout désactivé, passage(s) dans l'ordre du jeu de
    test cible; seuls μ̂ et σ̂² changent. Le modèle fourni n'est pas modifié.

    Args:
        model: Modèle entraîné
        target_features: Features du test cible (sans label)
        tta_batch_size: Taille des lots
        passes: Nombre de passages

    Returns:
        Modèle adapté, en mode eval
    """
    target_features = np.asarray(target_features, dtype=np.float64)
    if target_features.ndim != 2 or target_features.shape[0] == 0:
        raise DataError("jeu de test cible vide")
    if tta_batch_size < 2:
        raise ParameterError("tta_batch_size doit être >= 2")
    if passes < 1:
        raise ParameterError("passes doit être >= 1")
    if target_features.shape[0] < 2:
        raise DataError("TTA: au moins 2 éléments cibles requis")

    adapted = model.snapshot()
    set_mode(adapted, EVAL)
    for bn in adapted.bn_layers().values():
        bn.mode = TRAIN

    batches = _tta_batches(target_features.shape[0], tta_batch_size)
    for _ in range(passes):
        for idx in batches:
            classifier_logits(adapted, project(adapted, target_features[idx]))

    set_mode(adapted, EVAL)
    log_debug("TTA terminée", items=int(target_features.shape[0]), batches=len(batches),
              passes=passes)
    return adapted
