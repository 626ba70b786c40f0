"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
verdicts. Every tolerance and runtime budget is pinned here.
"""

import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import lattice_cloud, random_cloud
from pointtok import (
    cli,
    compute_splits,
    fps,
    hilbert_rank,
    morton_rank,
    normalize,
    partition,
    standardize,
    tokenize_cloud,
    write_xyz,
)
from pointtok.model import Batch, ToyLM, ToyModelConfig, grad_check, loss
from pointtok.curriculum import (
    StagePlan,
    TokenizerConfig,
    build_dataset,
    run_curriculum,
    run_stage,
)
from pointtok.patches import flatten
from pointtok.sequence import export
from test_partition import oracle_axis_index
from test_patches import oracle_fps, pts6

torch.set_num_threads(1)

GOLDEN = Path(__file__).parent / "golden"


@contextmanager
def criterion(name: str, budget_seconds: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    elapsed = time.perf_counter() - start
    print(f"[PASS] {name} ({elapsed:.2f}s)")
    assert elapsed < budget_seconds, f"{name}: {elapsed:.1f}s over budget"


def test_appendix_c1_reproduction(tmp_path):
    with criterion("appendix-c1-reproduction", 1.0):
        tc = tokenize_cloud(lattice_cloud(2, 3, 3), 8, 3)
        seq = tc.sequence
        assert seq.n_patches == 18
        assert seq.count("LSEP") == 1
        assert seq.count("RSEP") == 4
        kinds = [t.kind for t in seq.tokens]
        assert kinds[0] == "PCSTART" and kinds[-1] == "PCEND"
        assert [i for i, k in enumerate(kinds) if k == "LSEP"] == [12]
        assert [i for i, k in enumerate(kinds) if k == "RSEP"] == [4, 8, 16, 20]
        export(seq, tmp_path / "lat.tokens")
        produced = (tmp_path / "lat.tokens").read_bytes()
        golden = (GOLDEN / "lattice_2x3x3.tokens").read_bytes()
        assert produced == golden  # zero tolerance


def test_eq1_conformance():
    with criterion("eq1-conformance", 1.0):
        rng = np.random.default_rng(0)
        triples = []
        for _ in range(7000):
            triples.append(
                (
                    int(rng.integers(1, 10**7)),
                    int(rng.integers(1, 10**5)),
                    int(rng.integers(1, 64)),
                )
            )
        for _ in range(3000):  # paper configuration M=512, K=5
            target = int(rng.choice([12800, 2560, 512]))
            triples.append((int(rng.integers(1, 10**7)), target, 5))
        for n, target, k in triples:
            assert compute_splits(n, target, k) == max(1, min(k, n // target))


def test_partition_property():
    with criterion("partition-property", 30.0):
        rng = np.random.default_rng(1)
        sizes = np.unique(
            np.exp(rng.uniform(0, np.log(50_000), 1000)).astype(int) + 1
        )
        sizes = rng.choice(sizes, size=1000)  # 1k clouds, N up to 50k
        for i, n in enumerate(sizes):
            cloud = normalize(random_cloud(rng, int(n)))
            m, k = (8, 3) if i % 2 else (32, 5)
            grid = partition(cloud, m, k)
            plan, bounds = grid.plan, grid.bounds

            # vectorized boundary-comparison oracle (searchsorted, not floor)
            def axis_oracle(vals, lo, hi, splits):
                if splits == 1 or hi == lo:
                    return np.zeros(len(vals), dtype=np.int64)
                width = (hi - lo) / splits
                edges = lo + width * np.arange(1, splits)
                idx = np.searchsorted(edges, vals, side="right")
                return np.minimum(idx, splits - 1)

            xyz = cloud.xyz
            z = axis_oracle(xyz[:, 2], bounds.min[2], bounds.max[2], plan.splits_z)
            y = np.empty(cloud.n, dtype=np.int64)
            x = np.empty(cloud.n, dtype=np.int64)
            for zi in range(plan.splits_z):
                sel = z == zi
                if not sel.any():
                    continue
                y[sel] = axis_oracle(
                    xyz[sel, 1],
                    bounds.min[1],
                    bounds.max[1],
                    plan.splits_y_per_layer[zi],
                )
            for zi in range(plan.splits_z):
                for yi in range(plan.splits_y_per_layer[zi]):
                    sel = (z == zi) & (y == yi)
                    if not sel.any():
                        continue
                    x[sel] = axis_oracle(
                        xyz[sel, 0],
                        bounds.min[0],
                        bounds.max[0],
                        plan.splits_x_per_row[zi][yi],
                    )

            seen = np.zeros(cloud.n, dtype=int)
            for (gz, gy, gx), members in grid.cells.items():
                seen[members] += 1
                assert (z[members] == gz).all()
                assert (y[members] == gy).all()
                assert (x[members] == gx).all()
            assert (seen == 1).all()  # every index in exactly one cell

        # scalar python oracle on a small subset, fully independent path
        for n in (1, 3, 50, 700):
            cloud = normalize(random_cloud(rng, n))
            grid = partition(cloud, 8, 3)
            owner = {}
            for key, members in grid.cells.items():
                for idx in members:
                    owner[int(idx)] = key
            for idx in range(n):
                p = cloud.xyz[idx]
                z = oracle_axis_index(
                    p[2], grid.bounds.min[2], grid.bounds.max[2], grid.plan.splits_z
                )
                y = oracle_axis_index(
                    p[1],
                    grid.bounds.min[1],
                    grid.bounds.max[1],
                    grid.plan.splits_y_per_layer[z],
                )
                x = oracle_axis_index(
                    p[0],
                    grid.bounds.min[0],
                    grid.bounds.max[0],
                    grid.plan.splits_x_per_row[z][y],
                )
                assert owner[idx] == (z, y, x)


def test_fps_oracle_equivalence():
    with criterion("fps-oracle-equivalence", 10.0):
        rng = np.random.default_rng(2)
        for _ in range(500):
            n = int(rng.integers(1, 65))
            coords = rng.random((n, 3))
            target = int(rng.integers(1, n + 1))
            seed = int(rng.integers(n))
            lib = fps(pts6(coords), target, seed).tolist()
            assert lib == oracle_fps(coords.tolist(), target, seed)


def test_patch_standardization():
    with criterion("patch-standardization", 5.0):
        rng = np.random.default_rng(3)
        for m in (8, 512):
            for factor in (1, 2, 3, 4):
                n = int(rng.integers(max(1, (factor - 1) * m) + 1, factor * m + 1))
                pts = pts6(rng.random((n, 3)))
                patch = standardize(pts, np.arange(n), m)
                assert patch.m == m
                assert flatten(patch).shape == (m * 6,)
        one = standardize(pts6(rng.random((700, 3))), np.arange(700), 512)
        assert flatten(one).shape == (3072,)


def test_sfc_bijections():
    with criterion("sfc-bijections", 5.0):
        for order in (1, 2, 3):
            side = 1 << order
            cells = [
                (z, y, x)
                for z in range(side)
                for y in range(side)
                for x in range(side)
            ]
            morton = sorted(morton_rank(c, order) for c in cells)
            assert morton == list(range(side**3))
            by_rank = {}
            for c in cells:
                r = hilbert_rank(c, order)
                assert r not in by_rank
                by_rank[r] = np.array(c)
            assert sorted(by_rank) == list(range(side**3))
            for r in range(side**3 - 1):
                step = np.abs(by_rank[r] - by_rank[r + 1])
                assert step.max() == 1  # Chebyshev-adjacent consecutive cells


def _grad_batch(model):
    items = build_dataset(1, 2, TokenizerConfig(), seed=0)
    return Batch([i[0] for i in items], [i[1] for i in items])


def test_gradient_check():
    with criterion("gradient-check", 60.0):
        model = ToyLM(ToyModelConfig(seed=1))
        batch = _grad_batch(model)
        report = grad_check(
            model, batch, epsilon=1e-5, n_samples=200, rel_tol=1e-4, abs_tol=1e-8
        )
        assert report.n_checked >= 200
        assert report.max_rel_err <= 1e-4
        for group in ("projector", "embeddings", "attention", "head"):
            assert group in report.per_group
            assert report.per_group[group][1] > 0


def test_causality_and_normalization():
    with criterion("causality-and-normalization", 5.0):
        model = ToyLM(ToyModelConfig(seed=2))
        items = build_dataset(3, 1, TokenizerConfig(), seed=1)
        emb = model.embed_sequence(items[0][0])
        base = model(emb).detach().numpy()
        for t in (0, emb.shape[0] // 2, emb.shape[0] - 2):
            poked = emb.clone()
            poked[t + 1 :] *= -3.7
            out = model(poked).detach().numpy()
            assert np.array_equal(
                base[: t + 1].view(np.int64), out[: t + 1].view(np.int64)
            )  # bitwise
        probs = torch.softmax(model(emb), dim=-1)
        ones = torch.ones(emb.shape[0], dtype=torch.float64)
        assert (probs.sum(dim=-1) - ones).abs().max() <= 1e-6


def test_toy_curriculum_sanity():
    with criterion("toy-curriculum-sanity", 600.0):
        tok = TokenizerConfig()

        model = ToyLM(ToyModelConfig())
        metrics = run_stage(
            model, StagePlan(1, 2000, base_lr=0.3, dataset_size=512), tok, seed=7
        )
        accuracy = [v for _, _, n, v in metrics if n == "accuracy"][-1]
        assert accuracy >= 0.90

        def stage3_em(plans):
            m = ToyLM(ToyModelConfig())
            rows = run_curriculum(m, plans, tok, seed=7)
            return [v for s, _, n, v in rows if s == 3 and n == "exact_match"][-1]

        full = stage3_em(
            [
                StagePlan(1, 800, 0.3, 512),
                StagePlan(2, 100, 0.3, 512),
                StagePlan(3, 100, 0.3, 512, mix_stage2=0.3),
            ]
        )
        skipped = stage3_em(
            [
                StagePlan(2, 100, 0.3, 512),
                StagePlan(3, 100, 0.3, 512, mix_stage2=0.3),
            ]
        )
        assert full > skipped  # curriculum direction, Figure-5b style


def test_determinism(tmp_path):
    with criterion("determinism", 120.0):
        lattice = tmp_path / "lattice.xyz"
        write_xyz(lattice_cloud(2, 3, 3), lattice)
        rng = np.random.default_rng(4)
        big = tmp_path / "big.xyz"
        write_xyz(random_cloud(rng, 2000), big)

        for src, extra in ((lattice, ["--m", "8", "--k", "3"]), (big, [])):
            outs = []
            for name in ("a", "b"):
                out = tmp_path / f"{src.stem}_{name}.tokens"
                rc = cli.main(["tokenize", str(src), str(out)] + extra)
                assert rc == 0
                outs.append(out)
            assert outs[0].read_bytes() == outs[1].read_bytes()
            mat = lambda p: Path(str(p) + ".mat")
            assert mat(outs[0]).read_bytes() == mat(outs[1]).read_bytes()

        runs = []
        for name in ("a", "b"):
            out = tmp_path / f"train_{name}"
            rc = cli.main(
                [
                    "train",
                    "--out",
                    str(out),
                    "--stages",
                    "1",
                    "--steps",
                    "30",
                    "--seed",
                    "11",
                    "--dataset-size",
                    "64",
                ]
            )
            assert rc == 0
            runs.append(out)
        assert (runs[0] / "model.ptkc").read_bytes() == (
            runs[1] / "model.ptkc"
        ).read_bytes()
        assert (runs[0] / "metrics.csv").read_bytes() == (
            runs[1] / "metrics.csv"
        ).read_bytes()
