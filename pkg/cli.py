"""
Línea de comandos del simulador.

    python cli.py run configs/toy_smoke.toml --seed 0 --out-dir runs/toy --threads 2
    python cli.py run configs/toy_smoke.toml --out-dir runs/toy --resume
    python cli.py compare runs/a/trace.csv runs/b/trace.csv --out tradeoff.csv
    python cli.py validate configs/toy_smoke.toml

Códigos de salida: 0 éxito, 1 otros errores, 2 error de configuración o esquema, 3 fallo numérico.
"""

import argparse
import math
import sys
from typing import List, Optional

from config import get_logger
from exceptions import AFedError, ConfigError, NumericalError, SchemaError
from services import experiment_service

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afed", description="Simulador de FL justo AFed")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Ejecuta un barrido λ × semilla")
    run.add_argument("config", help="Archivo TOML (o JSON) del experimento")
    run.add_argument("--seed", type=int, default=None, help="Ejecuta solo esta semilla")
    run.add_argument("--out-dir", default=None, help="Directorio de salida")
    run.add_argument("--threads", type=int, default=None, help="Celdas del barrido en paralelo")
    run.add_argument(
        "--resume", action="store_true", help="Continúa cada celda desde su último checkpoint"
    )

    compare = sub.add_parser("compare", help="Tabla de compromiso a partir de trazas")
    compare.add_argument("traces", nargs="*", help="Trazas CSV")
    compare.add_argument("--out", default=None, help="Escribe la tabla como CSV")

    validate = sub.add_parser("validate", help="Valida e imprime la forma canónica")
    validate.add_argument("config")
    return parser


def _run(args: argparse.Namespace) -> int:
    cfg = experiment_service.load_config(args.config)
    artifacts = experiment_service.run_config(
        cfg, out_dir=args.out_dir, threads=args.threads, seed=args.seed, resume=args.resume
    )
    print(f"trace: {artifacts.trace_path} ({artifacts.n_rows} filas)")
    print(f"summary: {artifacts.summary_path}")
    return EXIT_OK


def _compare(args: argparse.Namespace) -> int:
    rows = experiment_service.compare(args.traces)
    frame = experiment_service.tradeoff_frame(rows)
    print(frame.to_string(index=False))
    for method, rho in experiment_service.spearman_by_method(rows).items():
        shown = "n/a" if math.isnan(rho) else f"{rho:.3f}"
        print(f"spearman(λ, ΔDP) {method}: {shown}")
    if args.out:
        frame.to_csv(args.out, index=False)
    return EXIT_OK


def _validate(args: argparse.Namespace) -> int:
    cfg = experiment_service.load_config(args.config)
    sys.stdout.write(experiment_service.canonical_form(cfg))
    return EXIT_OK


COMMANDS = {"run": _run, "compare": _compare, "validate": _validate}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        for err in e.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SchemaError as e:
        print(f"error de esquema: {e.detail}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"fallo numérico en la ronda {e.round_index}: {e.detail}", file=sys.stderr)
        return EXIT_NUMERICAL
    except AFedError as e:
        logger.error(f"Error: {e.detail}")
        print(f"error: {e.detail}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
