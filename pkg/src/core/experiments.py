"""
Expériences: pipeline complet, ablation, sensibilité et benchmark synthétique

Chaque exécution possède son propre ModelState et ses propres générateurs;
les tables sont assemblées dans l'ordre de la grille, quel que soit le
parallélisme (joblib).
"""

from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .exceptions import DataError, ParameterError
from .logger import log_info, log_warning
from .losses import empirical_mmd, median_heuristic_sigma
from .metrics import EvalReport, evaluate, feature_variance
from .model import ModelState, project
from .numeric import SeededRng
from .trainer import TrainConfig, TrainTrace, fit, source_only_config, tta_adapt
from ..data.embeddings import (DomainPartition, EmbeddingRecord, PartitionResult, partition,
                               records_to_matrix)
from ..data.synthetic import SyntheticSpec, generate_synthetic
from ..utils.exports import config_hash

DEFAULT_GRID: Dict[str, List[float]] = OrderedDict([
    ('lambda_mmd', [0.5, 1.0, 2.0, 5.0]),
    ('lambda_ctr', [0.1, 0.5, 1.0, 2.0]),
    ('tta_batch_size', [64, 128, 256, 512]),
])

# Échantillon source maximal pour le diagnostic MMD
_MMD_SAMPLE = 400


@dataclass
class RunResult:
    """Une exécution: modèle final, trace d'entraînement et évaluation"""
    name: str
    trained: ModelState
    model: ModelState
    trace: TrainTrace
    report: EvalReport


def run_pipeline(cfg: TrainConfig, data: PartitionResult, name: str = 'full') -> RunResult:
    """
    Entraîne, adapte (si use_tta) puis évalue sur le test cible

    Args:
        cfg: Configuration de l'exécution
        data: Partition source / cible
        name: Nom de l'exécution dans les logs et les tables

    Returns:
        RunResult
    """
    if not data.source:
        raise DataError("pool source vide")
    input_dim = data.source[0].dim
    model = ModelState.initialize(cfg.model_config(input_dim), cfg.seed)
    trained, trace = fit(model, data.source, data.target_train, cfg)

    model = trained
    if cfg.use_tta:
        model = tta_adapt(trained, records_to_matrix(data.target_test), cfg.tta_batch_size,
                          cfg.tta_passes)
        trace.tta_applied = True

    report = evaluate(model, data.target_test, seed=cfg.seed,
                      config_hash=config_hash(cfg.to_flat_dict()))
    log_info(f"Exécution '{name}' terminée", accuracy=round(report.accuracy, 4),
             f1=round(report.f1, 4), tta=trace.tta_applied)
    return RunResult(name=name, trained=trained, model=model, trace=trace, report=report)


def ablation_configs(cfg: TrainConfig) -> 'OrderedDict[str, TrainConfig]':
    """Les quatre configurations de l'ablation, même graine"""
    return OrderedDict([
        ('full', cfg),
        ('w/o contrastive', cfg.with_weights(lambda_ctr=0.0)),
        ('w/o MMD', cfg.with_weights(lambda_mmd=0.0)),
        ('w/o TTA', replace(cfg, use_tta=False)),
    ])


def _run_row(cfg: TrainConfig, data: PartitionResult, name: str) -> Dict[str, object]:
    result = run_pipeline(cfg, data, name)
    return {
        'seed': cfg.seed,
        'accuracy': result.report.accuracy,
        'f1': result.report.f1,
        'tta_applied': result.trace.tta_applied,
    }


def run_ablation(cfg: TrainConfig, data: PartitionResult, seeds: Optional[Sequence[int]] = None,
                 n_jobs: int = 1) -> pd.DataFrame:
    """
    Ablation de la perte contrastive, de la MMD et de la TTA

    Args:
        cfg: Configuration complète
        data: Partition source / cible
        seeds: Graines (défaut: cfg.seed); les métriques sont moyennées
        n_jobs: Exécutions parallèles

    Returns:
        Table de 4 lignes: config, f1, accuracy, tta_applied, n_seeds
    """
    seeds = list(seeds) if seeds else [cfg.seed]
    configs = ablation_configs(cfg)
    jobs = [(name, replace(c, seed=s)) for name, c in configs.items() for s in seeds]

    rows = Parallel(n_jobs=n_jobs)(delayed(_run_row)(c, data, name) for name, c in jobs)
    detail = pd.DataFrame(rows)
    detail.insert(0, 'config', [name for name, _ in jobs])

    table = detail.groupby('config', sort=False).agg(
        f1=('f1', 'mean'), accuracy=('accuracy', 'mean'),
        tta_applied=('tta_applied', 'all'), n_seeds=('seed', 'count'),
    ).reset_index()
    return table


def run_sensitivity(cfg: TrainConfig, data: PartitionResult,
                    grid: Optional[Dict[str, Sequence[float]]] = None,
                    n_jobs: int = 1) -> pd.DataFrame:
    """
    Balayages unidimensionnels autour de la configuration de base

    Args:
        cfg: Configuration de base (graine fixe)
        data: Partition source / cible
        grid: {paramètre: valeurs} parmi lambda_mmd, lambda_ctr, tta_batch_size
        n_jobs: Exécutions parallèles

    Returns:
        Table: parameter, value, accuracy, f1 (une ligne par point)
    """
    grid = DEFAULT_GRID if grid is None else grid
    points = []
    for parameter, values in grid.items():
        for value in values:
            if parameter in ('lambda_mmd', 'lambda_ctr', 'lambda_ce'):
                point_cfg = cfg.with_weights(**{parameter: float(value)})
            elif parameter == 'tta_batch_size':
                point_cfg = replace(cfg, tta_batch_size=int(value))
            else:
                raise ParameterError(f"paramètre de balayage inconnu: {parameter}")
            points.append((parameter, value, point_cfg))

    rows = Parallel(n_jobs=n_jobs)(
        delayed(_run_row)(c, data, f"{p}={v}") for p, v, c in points
    )
    return pd.DataFrame({
        'parameter': [p for p, _, _ in points],
        'value': [float(v) for _, v, _ in points],
        'accuracy': [r['accuracy'] for r in rows],
        'f1': [r['f1'] for r in rows],
    })


def upper_bound_data(records: Sequence[EmbeddingRecord], data: PartitionResult) -> PartitionResult:
    """Source augmentée des records cible d'entraînement avec leurs labels"""
    train_ids = {r.id for r in data.target_train}
    labeled_target = [r for r in records if r.id in train_ids]
    return PartitionResult(source=list(data.source) + labeled_target,
                           target_train=data.target_train, target_test=data.target_test)


def domain_gap(model: ModelState, data: PartitionResult, seed: int) -> Dict[str, float]:
    """MMD source / cible et variance 1-D cible, avant et après projection"""
    xs = records_to_matrix(data.source)
    if len(xs) > _MMD_SAMPLE:
        xs = xs[np.sort(SeededRng(seed).child('mmd').permutation(len(xs))[:_MMD_SAMPLE])]
    xt = records_to_matrix(data.target_test)
    zs, zt = project(model, xs), project(model, xt)
    return {
        'mmd_x': empirical_mmd(xs, xt, median_heuristic_sigma(np.vstack([xs, xt]))),
        'mmd_z': empirical_mmd(zs, zt, median_heuristic_sigma(np.vstack([zs, zt]))),
        'var_x_target': feature_variance(xt),
        'var_z_target': feature_variance(zt),
    }


def _benchmark_seed(spec: SyntheticSpec, cfg: TrainConfig, domains: DomainPartition,
                    seed: int) -> Dict[str, float]:
    records = generate_synthetic(replace(spec, seed=seed))
    data = partition(records, domains, cfg.target_test_fraction, seed)
    run_cfg = replace(cfg, seed=seed)

    baseline = run_pipeline(source_only_config(run_cfg), data, 'source-only')
    full = run_pipeline(run_cfg, data, 'full')
    upper = run_pipeline(source_only_config(run_cfg), upper_bound_data(records, data), 'upper-bound')

    row = {
        'seed': seed,
        'source_only': baseline.report.accuracy,
        'full': full.report.accuracy,
        'upper_bound': upper.report.accuracy,
        'f1_full': full.report.f1,
    }
    row.update(domain_gap(full.model, data, seed))
    row['negative_transfer'] = bool(full.report.accuracy < baseline.report.accuracy)
    if row['negative_transfer']:
        log_warning("Transfert négatif", seed=seed, full=row['full'], baseline=row['source_only'])
    return row


def run_benchmark(spec: SyntheticSpec, cfg: TrainConfig, seeds: Sequence[int],
                  source_domains: Sequence[str] = ('domain_0', 'domain_1'),
                  target_domains: Sequence[str] = ('domain_2',),
                  n_jobs: int = 1) -> pd.DataFrame:
    """
    Référence source seule, ConDA-TTA complet et borne supérieure par graine

    Args:
        spec: Paramètres du générateur synthétique
        cfg: Configuration complète
        seeds: Graines (données et modèle)
        source_domains: Domaines source
        target_domains: Domaines cible
        n_jobs: Exécutions parallèles

    Returns:
        Une ligne par graine: accuracies, MMD et variances, transfert négatif
    """
    domains = DomainPartition(frozenset(source_domains), frozenset(target_domains))
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_benchmark_seed)(spec, cfg, domains, s) for s in seeds
    )
    return pd.DataFrame(rows)
