"""Command-line pipeline: generate -> estimate -> factorize -> evaluate/export.

Stages talk only through files. Every output directory gets a ``run.json``
recording the command, its parameters, the tool version and SHA-256 digests
of the input files.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
from pathlib import Path

from . import __version__
from .dataset import DatasetError, load_dataset, minmax_normalize, save_dataset
from .factorizer import (
    SCOPES,
    FactorizationError,
    block_diagonalize,
    export_factorization,
    factorization_from_dict,
    frobenius_error,
    load_adjacency,
    save_adjacency,
    threshold_matrix,
    tune_threshold,
)
from .gridsim import (
    GridError,
    build_ieee14,
    gen_grid_dataset,
    load_model,
    save_model,
)
from .mi import (
    DEFAULT_K,
    DEFAULT_SHUFFLES,
    EstimatorError,
    MiMatrix,
    compute_mi_matrix,
    load_mi_matrix,
    save_mi_matrix,
)
from .synthetic import gen_synthetic_dataset, ground_truth_adjacency

ERRORS = (DatasetError, EstimatorError, FactorizationError, GridError, OSError, ValueError)


class UsageError(Exception):
    pass


def _digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_run(out: Path, command: str, params: dict, inputs=()) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "parameters": params,
        "inputs": {str(p): _digest(p) for p in inputs},
    }
    (out / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _positive(name):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}")
        if value < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {value}")
        return value
    return parse


def _unit(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"quantile must be a number, got {text!r}")
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"quantile must be in [0, 1], got {value}")
    return value


def _unit_list(text):
    return [_unit(t) for t in text.split(",") if t.strip()]


def _grid_model(spec: str):
    return build_ieee14() if spec == "ieee14" else load_model(spec)


def substation_seed(seed: int, substation: int) -> int:
    key = json.dumps([int(seed), "grid", int(substation)]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


# -- commands --------------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    out = _outdir(args.out)
    save_dataset(gen_synthetic_dataset(args.samples, args.seed, reset=args.reset),
                 out / "dataset.csv")
    save_adjacency(ground_truth_adjacency(), out / "truth.csv")
    _write_run(out, "gen-synthetic",
               {"samples": args.samples, "seed": args.seed, "reset": args.reset})
    return 0


def cmd_gen_grid(args) -> int:
    model = _grid_model(args.grid)
    qualifying = model.qualifying_substations()
    if args.substations == "all-qualifying":
        subs = qualifying
    else:
        try:
            subs = [int(s) for s in args.substations.split(",")]
        except ValueError:
            raise UsageError(f"--substations must be 'all-qualifying' or ids, got {args.substations!r}")
        bad = [s for s in subs if s not in qualifying]
        if bad:
            raise UsageError(f"substation(s) {bad} do not qualify (need more than 3 elements); "
                             f"qualifying ids: {qualifying}")
    out = _outdir(args.out)
    seeds = {}
    for s in subs:
        seeds[s] = substation_seed(args.seed, s)
        save_dataset(gen_grid_dataset(model, s, args.samples, seeds[s], noise=args.noise),
                     out / f"sub_{s}.csv")
    save_model(model, out / "grid.json")
    inputs = [] if args.grid == "ieee14" else [Path(args.grid)]
    _write_run(out, "gen-grid", {"grid": args.grid, "substations": subs, "samples": args.samples,
                                 "seed": args.seed, "noise": args.noise,
                                 "substation_seeds": {str(k): v for k, v in seeds.items()}},
               inputs)
    return 0


def cmd_dump_grid(args) -> int:
    save_model(_grid_model(args.grid), args.out)
    return 0


def _sort_key(label: str, position: int):
    match = re.fullmatch(r".*?(\d+)", label)
    return (int(match.group(1)) if match else position, position)


def cmd_estimate(args) -> int:
    paths = [Path(p) for p in args.dataset]
    columns = [c for c in args.columns.split(",") if c] if args.columns else None
    scaling = {}
    if len(paths) == 1:
        data, scaling[str(paths[0])] = minmax_normalize(load_dataset(paths[0]))
        mi = compute_mi_matrix(data, args.k, args.shuffles, args.seed, columns)
    else:
        parts = []
        for pos, path in enumerate(paths):
            data, scaling[str(path)] = minmax_normalize(load_dataset(path))
            if columns is None:
                cols = [v.name for v in data.variables("action")]
            else:
                cols = [c for c in columns if c in data.input_names]
            if len(cols) != 1:
                raise UsageError(f"{path}: expected exactly one action column to estimate, "
                                 f"found {cols}")
            parts.append((_sort_key(cols[0], pos),
                          compute_mi_matrix(data, args.k, args.shuffles, args.seed, cols)))
        parts.sort(key=lambda p: p[0])
        rows = parts[0][1].row_labels
        for _, m in parts:
            if m.row_labels != rows:
                raise UsageError("datasets disagree on next-state variables")
        import numpy as np

        mi = MiMatrix(np.hstack([m.values for _, m in parts]), rows,
                      [m.col_labels[0] for _, m in parts], parts[0][1].estimator_params)
    out = _outdir(args.out)
    save_mi_matrix(mi, out / "mi.csv")
    _write_run(out, "estimate", {"k": args.k, "shuffles": args.shuffles, "seed": args.seed,
                                 "columns": columns, "datasets": [str(p) for p in paths],
                                 "normalization": scaling},
               [p for path in paths for p in (path, path.with_name(path.stem + ".manifest.json"))])
    return 0


def cmd_factorize(args) -> int:
    mi = load_mi_matrix(args.mi)
    adj = threshold_matrix(mi, args.quantile, args.scope)
    f = block_diagonalize(adj)
    out = _outdir(args.out)
    save_adjacency(adj, out / "adjacency.csv")
    (out / "factorization.json").write_text(export_factorization(f, adj, "json"), encoding="utf-8")
    _write_run(out, "factorize", {"mi": args.mi, "quantile": args.quantile, "scope": args.scope},
               [Path(args.mi)])
    print(f"{f.n_clusters} cluster(s)")
    return 0


def cmd_tune(args) -> int:
    mi = load_mi_matrix(args.mi)
    print("q\tclusters\tlargest_fraction\tdelta_min\tdelta_max")
    for row in tune_threshold(mi, args.quantile_grid, args.scope):
        print(f"{row.q:g}\t{row.n_clusters}\t{row.largest_cluster_fraction:.4f}\t"
              f"{row.delta_min:.6g}\t{row.delta_max:.6g}")
    return 0


def cmd_evaluate(args) -> int:
    print(f"{frobenius_error(load_adjacency(args.pred), load_adjacency(args.truth)):.6f}")
    return 0


def cmd_export(args) -> int:
    fpath = Path(args.factorization)
    doc = json.loads(fpath.read_text(encoding="utf-8"))
    adj = load_adjacency(args.pred or fpath.with_name("adjacency.csv"))
    text = export_factorization(factorization_from_dict(doc), adj, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdpfactor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="synthetic two-cluster MDP dataset + ground truth")
    p.add_argument("--samples", type=_positive("--samples"), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reset", action="store_true", help="draw every state fresh (i.i.d. rows)")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("gen-grid", help="per-substation topology-action datasets")
    p.add_argument("--grid", default="ieee14", help="'ieee14' or a grid JSON file")
    p.add_argument("--substations", default="all-qualifying")
    p.add_argument("--samples", type=_positive("--samples"), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=0.02, help="relative load step noise")
    p.set_defaults(func=cmd_gen_grid)

    p = sub.add_parser("dump-grid", help="write a grid description as JSON")
    p.add_argument("--grid", default="ieee14")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_grid)

    p = sub.add_parser("estimate", help="bias-corrected MI matrix")
    p.add_argument("--dataset", nargs="+", required=True)
    p.add_argument("--k", type=_positive("--k"), default=DEFAULT_K)
    p.add_argument("--shuffles", type=_positive("--shuffles"), default=DEFAULT_SHUFFLES)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--columns", help="comma-separated input columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("factorize", help="threshold an MI matrix and extract clusters")
    p.add_argument("--mi", required=True)
    p.add_argument("--quantile", type=_unit, default=0.5)
    p.add_argument("--scope", choices=SCOPES, default="column")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("tune", help="cluster diagnostics over quantile levels")
    p.add_argument("--mi", required=True)
    p.add_argument("--quantile-grid", type=_unit_list, required=True)
    p.add_argument("--scope", choices=SCOPES, default="column")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("evaluate", help="normalized Frobenius error against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="render a factorization as json, dot, svg or csv")
    p.add_argument("--factorization", required=True)
    p.add_argument("--pred", help="adjacency CSV (default: adjacency.csv beside the factorization)")
    p.add_argument("--format", choices=("json", "dot", "svg", "csv"), required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mdpfactor: error[usage]: {exc}", file=sys.stderr)
        return 2
    except ERRORS as exc:
        print(f"mdpfactor: error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
