"""Script du benchmark synthétique complet (référence, ConDA-TTA, borne supérieure)"""

import argparse
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config.settings import BENCHMARK_CONFIG_PATH, load_config
from src.core.experiments import run_benchmark
from src.core.logger import configure_logging, log_error, log_info
from src.data.synthetic import SyntheticSpec
from src.utils.exports import format_table, write_table


def main() -> int:
    parser = argparse.ArgumentParser(description="Benchmark synthétique multi-domaines")
    parser.add_argument("--config", default=str(BENCHMARK_CONFIG_PATH), help="Fichier key=value")
    parser.add_argument("--seeds", default="0,1,2,3,4", help="Graines séparées par des virgules")
    parser.add_argument("--per-domain", type=int, default=2000, help="Points par domaine")
    parser.add_argument("--shift", type=float, default=2.0, help="Amplitude du décalage")
    parser.add_argument("--jobs", type=int, default=1, help="Exécutions parallèles")
    parser.add_argument("--out", default="outputs/benchmark.csv", help="Fichier CSV de sortie")
    args = parser.parse_args()

    configure_logging('INFO')
    try:
        cfg = load_config(args.config)
        spec = SyntheticSpec(n_per_domain=args.per_domain, shift=args.shift)
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        table = run_benchmark(spec, cfg, seeds, n_jobs=args.jobs)
        write_table(table, args.out)
        print(format_table(table))

        means = table[["source_only", "full", "upper_bound"]].mean()
        log_info(f"Accuracy moyenne: source seule {means['source_only']:.4f} | "
                 f"ConDA-TTA {means['full']:.4f} | borne sup. {means['upper_bound']:.4f}")
        return 0
    except Exception as e:
        log_error(f"Erreur lors du benchmark: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
