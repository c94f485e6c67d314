"""
Interface en ligne de commande ConDA-TTA

Sous-commandes: generate, train, tta, evaluate, ablate, sweep, benchmark,
gradcheck. Code de sortie 0 en cas de succès, 2 pour des arguments
invalides, 1 pour une erreur d'exécution.
"""

import argparse
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from config.settings import BENCHMARK_CONFIG_PATH, fingerprint, load_config, save_resolved_config
from src.core.checkpoint import load_checkpoint, load_checkpoint_metadata, save_checkpoint
from src.core.exceptions import CondaError, ParameterError
from src.core.experiments import (DEFAULT_GRID, run_ablation, run_benchmark, run_pipeline,
                                  run_sensitivity)
from src.core.logger import configure_logging, log_error, log_info
from src.core.losses import PairedBatch, StepBatch
from src.core.metrics import evaluate, projection_frame
from src.core.model import EVAL, ModelConfig, ModelState, grad_check, set_mode
from src.core.numeric import SeededRng
from src.core.trainer import TrainConfig, tta_adapt
from src.data.embeddings import (DomainPartition, PartitionResult, load_embeddings, partition,
                                 records_to_matrix, save_embeddings)
from src.data.synthetic import SyntheticSpec, generate_synthetic
from src.utils.exports import format_table, summarize, write_json, write_table

# option -> clé de configuration
_OVERRIDES = {
    'seed': 'seed',
    'lambda_mmd': 'lambda_mmd',
    'lambda_ctr': 'lambda_ctr',
    'lambda_ce': 'lambda_ce',
    'temperature': 'temperature',
    'tta_batch': 'tta_batch_size',
    'augment_std': 'augment_std',
    'epochs': 'max_epochs',
    'batch_size': 'batch_size',
    'lr': 'learning_rate',
}


def _csv_floats(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(',') if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"liste de nombres attendue: {text!r}")


def _csv_ints(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(',') if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"liste d'entiers attendue: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None, help='Fichier key=value')
    common.add_argument('--seed', type=int, default=None, help="Graine de l'exécution")
    common.add_argument('--out', type=str, default='outputs', help='Répertoire de sortie')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        default='INFO', help='Niveau de logging')
    common.add_argument('--log-file', type=str, default=None, help='Logs JSON-lines')

    hyper = argparse.ArgumentParser(add_help=False)
    hyper.add_argument('--lambda-mmd', type=float, default=None)
    hyper.add_argument('--lambda-ctr', type=float, default=None)
    hyper.add_argument('--lambda-ce', type=float, default=None)
    hyper.add_argument('--temperature', type=float, default=None)
    hyper.add_argument('--tta-batch', type=int, default=None)
    hyper.add_argument('--no-tta', action='store_true', help='Désactive la TTA')
    hyper.add_argument('--augment-std', type=float, default=None)
    hyper.add_argument('--epochs', type=int, default=None)
    hyper.add_argument('--batch-size', type=int, default=None)
    hyper.add_argument('--lr', type=float, default=None)
    hyper.add_argument('--jobs', type=int, default=1, help='Exécutions parallèles (joblib)')

    def data_args() -> argparse.ArgumentParser:
        p = argparse.ArgumentParser(add_help=False)
        p.add_argument('--data', type=str, required=True, help="Fichier d'embeddings JSON-lines")
        p.add_argument('--source-domains', type=str, required=True)
        p.add_argument('--target-domains', type=str, required=True)
        return p

    parser = argparse.ArgumentParser(
        prog='conda-tta',
        description="Adaptation de domaine contrastive avec TTA sur des embeddings")
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', parents=[common], help='Génère le benchmark synthétique')
    gen.add_argument('--domains', type=int, default=3)
    gen.add_argument('--per-domain', type=int, default=500)
    gen.add_argument('--dim', type=int, default=32)
    gen.add_argument('--margin', type=float, default=3.0)
    gen.add_argument('--shift', type=float, default=1.0)
    gen.add_argument('--output-file', type=str, default='embeddings.jsonl')

    sub.add_parser('train', parents=[common, hyper, data_args()], help='Entraîne puis évalue')

    tta = sub.add_parser('tta', parents=[common, hyper, data_args()],
                         help="Met à jour les estimations BN d'un checkpoint")
    tta.add_argument('--checkpoint', type=str, required=True)

    ev = sub.add_parser('evaluate', parents=[common, hyper, data_args()],
                        help='Évalue un checkpoint sur le test cible')
    ev.add_argument('--checkpoint', type=str, required=True)

    abl = sub.add_parser('ablate', parents=[common, hyper, data_args()], help='Ablation')
    abl.add_argument('--seeds', type=_csv_ints, default=None)

    sweep = sub.add_parser('sweep', parents=[common, hyper, data_args()],
                           help='Balayages de sensibilité')
    sweep.add_argument('--grid-lambda-mmd', type=_csv_floats, default=None)
    sweep.add_argument('--grid-lambda-ctr', type=_csv_floats, default=None)
    sweep.add_argument('--grid-tta-batch', type=_csv_ints, default=None)

    bench = sub.add_parser('benchmark', parents=[common, hyper],
                           help='Référence, ConDA-TTA et borne supérieure sur données synthétiques')
    bench.add_argument('--seeds', type=_csv_ints, default=[0, 1, 2, 3, 4])
    bench.add_argument('--domains', type=int, default=3)
    bench.add_argument('--per-domain', type=int, default=500)
    bench.add_argument('--dim', type=int, default=32)
    bench.add_argument('--margin', type=float, default=3.0)
    bench.add_argument('--shift', type=float, default=2.0)
    bench.set_defaults(config=str(BENCHMARK_CONFIG_PATH))

    gc = sub.add_parser('gradcheck', parents=[common], help='Vérifie les gradients analytiques')
    gc.add_argument('--tolerance', type=float, default=1e-3)

    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    values = {key: getattr(args, opt) for opt, key in _OVERRIDES.items()
              if getattr(args, opt, None) is not None}
    if getattr(args, 'no_tta', False):
        values['use_tta'] = False
    return values


def _resolve(args: argparse.Namespace) -> TrainConfig:
    cfg = load_config(args.config, overrides=_overrides(args))
    save_resolved_config(cfg, Path(args.out) / 'resolved_config.conf')
    return cfg


def _metadata(cfg: TrainConfig, command: str) -> Dict[str, Any]:
    return {
        'command': command,
        'seed': cfg.seed,
        'config_hash': fingerprint(cfg),
        'config': cfg.to_flat_dict(),
    }


def _load_partition(args: argparse.Namespace, cfg: TrainConfig) -> PartitionResult:
    records = load_embeddings(args.data)
    domains = DomainPartition.from_strings(args.source_domains, args.target_domains)
    data = partition(records, domains, cfg.target_test_fraction, cfg.seed)
    log_info("Données chargées", source=len(data.source), target_train=len(data.target_train),
             target_test=len(data.target_test))
    return data


def _write_report(out: Path, report, cfg: TrainConfig, command: str, extra=None) -> None:
    doc = report.to_dict()
    doc['metadata'] = _metadata(cfg, command)
    if extra:
        doc.update(extra)
    write_json(doc, out / 'metrics.json')


def cmd_generate(args: argparse.Namespace) -> int:
    seed = 0 if args.seed is None else args.seed
    spec = SyntheticSpec(n_domains=args.domains, n_per_domain=args.per_domain, dim=args.dim,
                         margin=args.margin, shift=args.shift, seed=seed)
    out = Path(args.out)
    path = save_embeddings(generate_synthetic(spec), out / args.output_file)
    write_json({'command': 'generate', 'seed': seed, 'spec': asdict(spec),
                'file': path.name}, out / 'generate_meta.json')
    log_info(f"Embeddings écrits: {path}", domains=spec.n_domains, per_domain=spec.n_per_domain)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    data = _load_partition(args, cfg)
    out = Path(args.out)

    result = run_pipeline(cfg, data, 'train')
    meta = _metadata(cfg, 'train')
    save_checkpoint(result.trained, out / 'checkpoint.json', meta)
    if result.trace.tta_applied:
        save_checkpoint(result.model, out / 'checkpoint_tta.json', meta)

    result.trace.to_csv(out / 'trace.csv')
    result.trace.to_json(out / 'trace.json')
    _write_report(out, result.report, cfg, 'train', {
        'best_epoch': result.trace.best_epoch,
        'early_stop_epoch': result.trace.early_stop_epoch,
        'tta_applied': result.trace.tta_applied,
    })
    write_table(projection_frame(result.model, list(data.source) + list(data.target_test)),
                out / 'projection2d.csv')
    print(format_table(summarize({'train': {'accuracy': result.report.accuracy,
                                            'f1': result.report.f1}})))
    return 0


def cmd_tta(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    data = _load_partition(args, cfg)
    model = load_checkpoint(args.checkpoint)
    adapted = tta_adapt(model, records_to_matrix(data.target_test), cfg.tta_batch_size,
                        cfg.tta_passes)
    meta = _metadata(cfg, 'tta')
    meta['source_checkpoint'] = load_checkpoint_metadata(args.checkpoint)
    path = save_checkpoint(adapted, Path(args.out) / 'checkpoint_tta.json', meta)
    log_info(f"Checkpoint adapté écrit: {path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    data = _load_partition(args, cfg)
    model = set_mode(load_checkpoint(args.checkpoint), EVAL)
    report = evaluate(model, data.target_test, seed=cfg.seed, config_hash=fingerprint(cfg))
    out = Path(args.out)
    _write_report(out, report, cfg, 'evaluate', {'checkpoint': Path(args.checkpoint).name})
    write_table(projection_frame(model, list(data.source) + list(data.target_test)),
                out / 'projection2d.csv')
    print(format_table(summarize({'evaluate': {'accuracy': report.accuracy, 'f1': report.f1}})))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    data = _load_partition(args, cfg)
    table = run_ablation(cfg, data, seeds=args.seeds, n_jobs=args.jobs)
    write_table(table, Path(args.out) / 'ablation.csv')
    write_json(_metadata(cfg, 'ablate'), Path(args.out) / 'ablation_meta.json')
    print(format_table(table))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    data = _load_partition(args, cfg)
    grid = {
        'lambda_mmd': args.grid_lambda_mmd or DEFAULT_GRID['lambda_mmd'],
        'lambda_ctr': args.grid_lambda_ctr or DEFAULT_GRID['lambda_ctr'],
        'tta_batch_size': args.grid_tta_batch or DEFAULT_GRID['tta_batch_size'],
    }
    table = run_sensitivity(cfg, data, grid, n_jobs=args.jobs)
    write_table(table, Path(args.out) / 'sweep.csv')
    write_json(_metadata(cfg, 'sweep'), Path(args.out) / 'sweep_meta.json')
    print(format_table(table))
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    spec = SyntheticSpec(n_domains=args.domains, n_per_domain=args.per_domain, dim=args.dim,
                         margin=args.margin, shift=args.shift)
    names = [spec.domain_name(k) for k in range(spec.n_domains)]
    if len(names) < 2:
        raise ParameterError("le benchmark demande au moins 2 domaines")
    table = run_benchmark(spec, cfg, args.seeds, names[:-1], names[-1:], n_jobs=args.jobs)
    write_table(table, Path(args.out) / 'benchmark.csv')
    write_json(_metadata(cfg, 'benchmark'), Path(args.out) / 'benchmark_meta.json')
    print(format_table(table))
    return 0


def gradcheck_batch(seed: int, input_dim: int = 6, batch: int = 4) -> StepBatch:
    """Petit lot aléatoire source / cible pour la vérification de gradient"""
    rng = SeededRng(seed).child('gradcheck')
    xs = rng.normal((batch, input_dim))
    xt = rng.normal((batch, input_dim)) + 0.5
    labels = np.arange(batch) % 2
    return StepBatch(
        source=PairedBatch(xs, xs + 0.1 * rng.normal((batch, input_dim))),
        labels=labels,
        target=PairedBatch(xt, xt + 0.1 * rng.normal((batch, input_dim))),
    )


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seed = 0 if args.seed is None else args.seed
    config = ModelConfig(input_dim=6, proj_hidden=8, proj_dim=5, cls_hidden=7, dropout=0.2)
    model = ModelState.initialize(config, seed)
    report = grad_check(model, gradcheck_batch(seed), tolerance=args.tolerance)

    doc = report.to_dict()
    doc['seed'] = seed
    write_json(doc, Path(args.out) / 'gradcheck.json')
    status = 'PASS' if report.passed else 'FAIL'
    log_info(f"Vérification de gradient: {status}",
             max_relative_error=report.max_relative_error, n_checked=report.n_checked)
    return 0 if report.passed else 1


COMMANDS = {
    'generate': cmd_generate,
    'train': cmd_train,
    'tta': cmd_tta,
    'evaluate': cmd_evaluate,
    'ablate': cmd_ablate,
    'sweep': cmd_sweep,
    'benchmark': cmd_benchmark,
    'gradcheck': cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Point d'entrée; retourne le code de sortie"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2

    load_dotenv()
    configure_logging(args.log_level, args.log_file)
    try:
        return COMMANDS[args.command](args)
    except (CondaError, OSError) as e:
        log_error(f"Erreur lors de '{args.command}': {e}")
        return 1
