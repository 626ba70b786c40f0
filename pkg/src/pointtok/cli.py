"""Command-line entry point.

Subcommands: tokenize (file or directory), inspect, train, ablate.
Exit codes: 0 ok, 2 parse error, 3 I/O error, 4 invalid grammar,
5 training divergence. Standard output is key=value lines; diagnostics
go to standard error. PTK_THREADS caps directory-mode parallelism
(0 or unset = one worker per CPU).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .cloud import load_cloud
from .errors import (
    DivergenceDetected,
    EmptyCloud,
    IoError,
    ParseError,
    PointTokError,
    UnsupportedFormat,
)
from .ioutil import atomic_write
from .pipeline import tokenize_cloud
from .sequence import (
    LSEP,
    PATCH,
    RSEP,
    default_matrix_path,
    export,
    read_matrix_file,
    read_token_file,
    validate_grammar,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_IO = 3
EXIT_GRAMMAR = 4
EXIT_DIVERGED = 5

CLOUD_SUFFIXES = (".xyz", ".txt", ".ply")


def _worker_count() -> int:
    raw = os.environ.get("PTK_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _fmt_plan(plan) -> list[str]:
    ys = ",".join(str(s) for s in plan.splits_y_per_layer)
    xs = "|".join(",".join(str(s) for s in row) for row in plan.splits_x_per_row)
    return [f"splits_z={plan.splits_z}", f"splits_y={ys}", f"splits_x={xs}"]


def _tokenize_one(in_path: Path, out_path: Path, args) -> list[str]:
    cloud = load_cloud(in_path)
    tc = tokenize_cloud(
        cloud,
        args.m,
        args.k,
        args.strategy,
        not args.no_separators,
        sample_count=args.sample_count,
    )
    export(tc.sequence, out_path)
    if args.grid_out:
        atomic_write(Path(args.grid_out), tc.grid.dump().encode())
    seq = tc.sequence
    lines = [f"input={in_path}", f"points={cloud.n}", f"patches={seq.n_patches}"]
    lines += _fmt_plan(tc.grid.plan)
    lines += [
        f"layer_seps={seq.count(LSEP)}",
        f"row_seps={seq.count(RSEP)}",
        f"tokens={len(seq.tokens)}",
        f"ordering={seq.ordering}",
        f"out={out_path}",
    ]
    return lines


def cmd_tokenize(args) -> int:
    in_path = Path(args.input)
    out_path = Path(args.output)
    try:
        if in_path.is_dir():
            if args.grid_out:
                print("--grid-out only applies to single-file input", file=sys.stderr)
                return EXIT_PARSE
            files = sorted(
                p for p in in_path.iterdir() if p.suffix.lower() in CLOUD_SUFFIXES
            )
            if not files:
                print(f"no point cloud files in {in_path}", file=sys.stderr)
                return EXIT_IO
            out_path.mkdir(parents=True, exist_ok=True)
            jobs = [(f, out_path / (f.stem + ".tokens")) for f in files]
            with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
                results = list(
                    pool.map(lambda j: _tokenize_one(j[0], j[1], args), jobs)
                )
            for lines in results:
                for line in lines:
                    print(line)
        else:
            if not in_path.is_file():
                print(f"input not found: {in_path}", file=sys.stderr)
                return EXIT_IO
            for line in _tokenize_one(in_path, out_path, args):
                print(line)
        return EXIT_OK
    except (ParseError, EmptyCloud, UnsupportedFormat, ValueError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (OSError, IoError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


def cmd_inspect(args) -> int:
    token_path = Path(args.tokens)
    matrix_path = (
        Path(args.matrix) if args.matrix else default_matrix_path(token_path)
    )
    try:
        ordering, tokens = read_token_file(token_path)
        matrix = read_matrix_file(matrix_path)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (OSError, IoError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO

    violations = validate_grammar(tokens)
    n_patches = sum(1 for t in tokens if t.kind == PATCH)
    if n_patches != matrix.shape[0]:
        violations.append(
            f"{n_patches} PATCH tokens but matrix has {matrix.shape[0]} rows"
        )
    print(f"verdict={'VALID' if not violations else 'INVALID'}")
    print(f"patches={n_patches}")
    print(f"layer_seps={sum(1 for t in tokens if t.kind == LSEP)}")
    print(f"row_seps={sum(1 for t in tokens if t.kind == RSEP)}")
    print(f"ordering={ordering}")
    print(f"matrix_rows={matrix.shape[0]}")
    print(f"matrix_cols={matrix.shape[1]}")
    for v in violations:
        print(f"violation={v}")
    return EXIT_OK if not violations else EXIT_GRAMMAR


def cmd_train(args) -> int:
    # heavy imports stay out of the tokenize path
    import torch

    from .curriculum import (
        StagePlan,
        TokenizerConfig,
        metrics_lines,
        run_curriculum,
    )
    from .model import ToyLM, ToyModelConfig, save_checkpoint

    torch.set_num_threads(1)  # keep repeated runs byte-identical
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        stages = [int(s) for s in args.stages.split(",") if s]
        config = ToyModelConfig(m=args.m, seed=args.seed)
        model = ToyLM(config)
        tok = TokenizerConfig(m=args.m, k=args.k)
        plans = [
            StagePlan(
                s,
                args.steps,
                args.lr,
                args.dataset_size,
                mix_stage2=0.3 if s == 3 else 0.0,
            )
            for s in stages
        ]
        metrics = run_curriculum(model, plans, tok, seed=args.seed)
        save_checkpoint(model, out_dir / "model.ptkc")
        atomic_write(out_dir / "metrics.csv", metrics_lines(metrics).encode())
        for stage, step, name, value in metrics:
            if name != "loss":
                print(f"stage{stage}_{name}={value:.4f}")
        print(f"checkpoint={out_dir / 'model.ptkc'}")
        print(f"metrics={out_dir / 'metrics.csv'}")
        return EXIT_OK
    except DivergenceDetected as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, IoError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


def cmd_ablate(args) -> int:
    import torch

    from .curriculum import AblationBudget, TokenizerConfig, ablate_tokenization

    torch.set_num_threads(1)
    recipes = []
    for name in args.strategies.split(","):
        name = name.strip()
        if name.endswith("-nosep"):
            recipes.append(
                TokenizerConfig(
                    args.m, args.k, name[: -len("-nosep")], separators=False
                )
            )
        else:
            recipes.append(TokenizerConfig(args.m, args.k, name))
    try:
        budget = AblationBudget(
            steps_stage1=args.steps,
            steps_stage3=args.steps,
            dataset_size=args.dataset_size,
            seed=args.seed,
        )
        rows, table = ablate_tokenization(recipes, budget)
        print(table, end="")
        if args.out:
            atomic_write(Path(args.out), table.encode())
        return EXIT_OK
    except DivergenceDetected as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointtok",
        description="Point cloud patch tokenizer and toy curriculum harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_tok = sub.add_parser("tokenize", help="tokenize a cloud file or directory")
    p_tok.add_argument("input")
    p_tok.add_argument("output")
    p_tok.add_argument("--m", type=int, default=512, help="points per patch")
    p_tok.add_argument("--k", type=int, default=5, help="max splits per axis")
    p_tok.add_argument(
        "--strategy",
        choices=["zyx", "hilbert", "morton", "fps"],
        default="zyx",
    )
    p_tok.add_argument("--no-separators", action="store_true")
    p_tok.add_argument("--sample-count", type=int, default=None)
    p_tok.add_argument(
        "--grid-out", default=None, help="also write the `z y x count` grid dump"
    )
    p_tok.set_defaults(func=cmd_tokenize)

    p_ins = sub.add_parser("inspect", help="validate an exported token pair")
    p_ins.add_argument("tokens")
    p_ins.add_argument("--matrix", default=None)
    p_ins.set_defaults(func=cmd_inspect)

    p_tr = sub.add_parser("train", help="run the toy curriculum")
    p_tr.add_argument("--out", required=True)
    p_tr.add_argument("--stages", default="1,2,3")
    p_tr.add_argument("--steps", type=int, default=400, help="steps per stage")
    p_tr.add_argument("--seed", type=int, default=0)
    p_tr.add_argument("--m", type=int, default=8)
    p_tr.add_argument("--k", type=int, default=3)
    p_tr.add_argument("--lr", type=float, default=0.3)
    p_tr.add_argument("--dataset-size", type=int, default=512)
    p_tr.set_defaults(func=cmd_train)

    p_ab = sub.add_parser("ablate", help="compare tokenization strategies")
    p_ab.add_argument("--strategies", default="zyx,fps")
    p_ab.add_argument("--steps", type=int, default=300)
    p_ab.add_argument("--seed", type=int, default=0)
    p_ab.add_argument("--m", type=int, default=8)
    p_ab.add_argument("--k", type=int, default=3)
    p_ab.add_argument("--dataset-size", type=int, default=256)
    p_ab.add_argument("--out", default=None)
    p_ab.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PointTokError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
