"""Synthetic shapes, QA scenes, and the three-stage training driver.

Stage 1 teaches 8-way shape classification, stage 2 two-token captions
(class + elongation), stage 3 two-object spatial relation QA with a
configurable fraction of stage-2 samples mixed back in. All data is
generated, so every label is geometrically verifiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .cloud import PointCloud
from .model import (
    CLASS_TOKEN_BASE,
    Q_CAPTION,
    Q_CLASSIFY,
    Q_RELATION,
    RELATION_TOKEN_BASE,
    WORD_LONG,
    WORD_ROUND,
    ToyLM,
    ToyModelConfig,
    cosine_schedule,
    train,
)
from .pipeline import tokenize_points
from .sequence import TokenSequence

SHAPE_NAMES = (
    "sphere",
    "cube",
    "cylinder",
    "cone",
    "torus",
    "plane",
    "line",
    "l_bracket",
)
N_CLASSES = len(SHAPE_NAMES)

RELATION_NAMES = (
    "left-of",
    "right-of",
    "above",
    "below",
    "in-front",
    "behind",
    "nearer",
    "farther",
)
N_RELATIONS = len(RELATION_NAMES)


@dataclass(frozen=True)
class SyntheticShape:
    class_id: int
    n_points: int = 64
    jitter: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.class_id < N_CLASSES:
            raise ValueError(f"class_id must be 0..{N_CLASSES - 1}")
        if self.n_points < 8:
            raise ValueError("n_points must be >= 8")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / norms


def _surface_points(class_id: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n exact surface samples of the primitive, centered at the origin."""
    u = rng.random(n)
    v = rng.random(n)
    if class_id == 0:  # sphere, radius 0.5
        return 0.5 * _unit_rows(rng.normal(size=(n, 3)))
    if class_id == 1:  # cube surface, side 1
        pts = np.stack([u - 0.5, v - 0.5, np.zeros(n)], axis=1)
        face = rng.integers(0, 6, n)
        out = np.empty((n, 3))
        for axis in range(3):
            for sign in range(2):
                sel = face == axis * 2 + sign
                # roll the zero column onto the face axis, then pin it
                out[sel] = np.roll(pts[sel], (axis + 1) % 3, axis=1)
                out[sel, axis] = 0.5 if sign else -0.5
        return out
    if class_id == 2:  # cylinder shell, radius 0.35, height 1
        theta = 2 * np.pi * u
        return np.stack(
            [0.35 * np.cos(theta), 0.35 * np.sin(theta), v - 0.5], axis=1
        )
    if class_id == 3:  # cone, apex up, base radius 0.5
        s = np.sqrt(u)  # uniform-ish by area along the slant
        theta = 2 * np.pi * v
        return np.stack(
            [0.5 * s * np.cos(theta), 0.5 * s * np.sin(theta), 0.5 - s], axis=1
        )
    if class_id == 4:  # torus, major 0.35, minor 0.15
        theta = 2 * np.pi * u
        phi = 2 * np.pi * v
        ring = 0.35 + 0.15 * np.cos(phi)
        return np.stack(
            [ring * np.cos(theta), ring * np.sin(theta), 0.15 * np.sin(phi)], axis=1
        )
    if class_id == 5:  # plane, z = 0 square
        return np.stack([u - 0.5, v - 0.5, np.zeros(n)], axis=1)
    if class_id == 6:  # line along z
        return np.stack([np.zeros(n), np.zeros(n), u - 0.5], axis=1)
    # l_bracket: vertical plate joined to a horizontal plate
    half = n // 2
    vert = np.stack(
        [u[:half] - 0.5, np.zeros(half), 0.5 * v[:half]], axis=1
    )
    horiz = np.stack(
        [u[half:] - 0.5, 0.5 * v[half:], np.zeros(n - half)], axis=1
    )
    return np.concatenate([vert, horiz])


def gen_shape(spec: SyntheticShape) -> PointCloud:
    """Deterministic sampled surface with noise clipped at 3*jitter."""
    rng = np.random.default_rng(spec.seed)
    pts = _surface_points(spec.class_id, spec.n_points, rng)
    if spec.jitter > 0:
        noise = rng.normal(0.0, spec.jitter, size=pts.shape)
        norms = np.linalg.norm(noise, axis=1, keepdims=True)
        cap = 3.0 * spec.jitter
        scale = np.where(norms > cap, cap / np.maximum(norms, 1e-300), 1.0)
        pts = pts + noise * scale
    cloud = np.concatenate([pts, np.full((spec.n_points, 3), 0.5)], axis=1)
    return PointCloud(cloud, source_id=f"synthetic:{SHAPE_NAMES[spec.class_id]}")


# -- scenes -------------------------------------------------------------------


@dataclass(frozen=True)
class SceneSample:
    cloud: PointCloud
    shape_a: SyntheticShape
    shape_b: SyntheticShape
    relation: int  # index into RELATION_NAMES: how A sits relative to B
    question: tuple[int, ...]
    answer: tuple[int, ...]


def salient_relation(centroid_a: np.ndarray, centroid_b: np.ndarray) -> int:
    """Most salient relation of A w.r.t. B: dominant axis or radial gap.

    Families: x -> left/right, z -> above/below, y -> in-front/behind,
    |.| from the origin corner -> nearer/farther.
    """
    delta = centroid_a - centroid_b
    radial = np.linalg.norm(centroid_a) - np.linalg.norm(centroid_b)
    scores = np.array([abs(delta[0]), abs(delta[2]), abs(delta[1]), abs(radial)])
    family = int(np.argmax(scores))
    if family == 0:
        return 0 if delta[0] < 0 else 1  # left-of / right-of
    if family == 1:
        return 2 if delta[2] > 0 else 3  # above / below
    if family == 2:
        return 4 if delta[1] < 0 else 5  # in-front / behind
    return 6 if radial < 0 else 7  # nearer / farther


def _aabb(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return points.min(axis=0), points.max(axis=0)


def _disjoint(lo_a, hi_a, lo_b, hi_b) -> bool:
    return bool((hi_a < lo_b).any() or (hi_b < lo_a).any())


def gen_scene(
    rng: np.random.Generator,
    n_points: int = 96,
    jitter: float = 0.01,
) -> SceneSample:
    """Two distinct shapes at disjoint unit-cube positions plus QA tokens."""
    while True:
        class_a, class_b = rng.choice(N_CLASSES, size=2, replace=False)
        spec_a = SyntheticShape(int(class_a), n_points // 2, jitter, int(rng.integers(2**31)))
        spec_b = SyntheticShape(int(class_b), n_points - n_points // 2, jitter, int(rng.integers(2**31)))
        pts_a = gen_shape(spec_a).points.copy()
        pts_b = gen_shape(spec_b).points.copy()
        scale = 0.28
        center_a = rng.uniform(0.18, 0.82, 3)
        center_b = rng.uniform(0.18, 0.82, 3)
        pts_a[:, 0:3] = pts_a[:, 0:3] * scale + center_a
        pts_b[:, 0:3] = pts_b[:, 0:3] * scale + center_b
        lo_a, hi_a = _aabb(pts_a[:, 0:3])
        lo_b, hi_b = _aabb(pts_b[:, 0:3])
        if not _disjoint(lo_a, hi_a, lo_b, hi_b):
            continue
        cen_a = pts_a[:, 0:3].mean(axis=0)
        cen_b = pts_b[:, 0:3].mean(axis=0)
        delta = cen_a - cen_b
        radial = np.linalg.norm(cen_a) - np.linalg.norm(cen_b)
        scores = np.sort(
            [abs(delta[0]), abs(delta[2]), abs(delta[1]), abs(radial)]
        )
        # demand a clear winner so labels stay unambiguous under noise
        if scores[-1] < 0.12 or scores[-1] < 1.3 * scores[-2]:
            continue
        relation = salient_relation(cen_a, cen_b)
        cloud = PointCloud(
            np.concatenate([pts_a, pts_b]),
            source_id=f"scene:{SHAPE_NAMES[class_a]}-{SHAPE_NAMES[class_b]}",
        )
        question = (
            Q_RELATION,
            CLASS_TOKEN_BASE + int(class_a),
            CLASS_TOKEN_BASE + int(class_b),
        )
        answer = (RELATION_TOKEN_BASE + relation,)
        return SceneSample(cloud, spec_a, spec_b, relation, question, answer)


def verify_relation(sample: SceneSample) -> bool:
    """Recompute the salient relation from the stored cloud's two halves."""
    n_a = sample.shape_a.n_points
    cen_a = sample.cloud.xyz[:n_a].mean(axis=0)
    cen_b = sample.cloud.xyz[n_a:].mean(axis=0)
    return salient_relation(cen_a, cen_b) == sample.relation


# -- datasets -----------------------------------------------------------------


@dataclass(frozen=True)
class TokenizerConfig:
    m: int = 8
    k: int = 3
    strategy: str = "zyx"
    separators: bool = True
    sample_count: int | None = None

    @property
    def label(self) -> str:
        return self.strategy if self.separators else f"{self.strategy}-nosep"


DatasetItem = tuple[TokenSequence, np.ndarray]


def qa_item(
    cloud: PointCloud,
    question: tuple[int, ...],
    answer: tuple[int, ...],
    tok: TokenizerConfig,
) -> DatasetItem:
    """Tokenize a cloud and append QA text; mask supervises answer tokens."""
    tc = tokenize_points(
        cloud.points,
        tok.m,
        tok.k,
        tok.strategy,
        tok.separators,
        source_id=cloud.source_id,
        sample_count=tok.sample_count,
    )
    seq = tc.sequence.with_text(list(question) + list(answer))
    mask = np.zeros(len(seq.tokens), dtype=bool)
    n_ans = len(answer)
    mask[len(seq.tokens) - n_ans - 1 : len(seq.tokens) - 1] = True
    return seq, mask


def _stage1_item(rng: np.random.Generator, tok: TokenizerConfig) -> DatasetItem:
    class_id = int(rng.integers(N_CLASSES))
    spec = SyntheticShape(class_id, 64, 0.01, int(rng.integers(2**31)))
    cloud = gen_shape(spec)
    return qa_item(cloud, (Q_CLASSIFY,), (CLASS_TOKEN_BASE + class_id,), tok)


def _stage2_item(rng: np.random.Generator, tok: TokenizerConfig) -> DatasetItem:
    class_id = int(rng.integers(N_CLASSES))
    spec = SyntheticShape(class_id, 64, 0.01, int(rng.integers(2**31)))
    pts = gen_shape(spec).points.copy()
    long = bool(rng.integers(2))
    if long:
        pts[:, 2] *= 2.5
    cloud = PointCloud(pts, source_id=f"caption:{SHAPE_NAMES[class_id]}")
    answer = (CLASS_TOKEN_BASE + class_id, WORD_LONG if long else WORD_ROUND)
    return qa_item(cloud, (Q_CAPTION,), answer, tok)


def _stage3_item(
    rng: np.random.Generator, tok: TokenizerConfig, mix_stage2: float
) -> DatasetItem:
    if mix_stage2 > 0 and rng.random() < mix_stage2:
        return _stage2_item(rng, tok)
    scene = gen_scene(rng)
    return qa_item(scene.cloud, scene.question, scene.answer, tok)


def build_dataset(
    stage: int,
    size: int,
    tok: TokenizerConfig,
    seed: int,
    mix_stage2: float = 0.3,
) -> list[DatasetItem]:
    rng = np.random.default_rng(seed)
    if stage == 1:
        return [_stage1_item(rng, tok) for _ in range(size)]
    if stage == 2:
        return [_stage2_item(rng, tok) for _ in range(size)]
    if stage == 3:
        return [_stage3_item(rng, tok, mix_stage2) for _ in range(size)]
    raise ValueError(f"unknown stage {stage}")


# -- stage driver --------------------------------------------------------------


@dataclass(frozen=True)
class StagePlan:
    stage: int
    steps: int
    base_lr: float = 0.3
    dataset_size: int = 512
    batch_size: int = 16
    mix_stage2: float = 0.0  # stage 3 defaults to 0.3 via default_plans
    warmup_ratio: float = 0.1

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError("stage must be 1, 2 or 3")
        if self.steps < 0 or self.dataset_size < 1 or self.batch_size < 1:
            raise ValueError("steps, dataset_size and batch_size must be sane")
        if not 0.0 <= self.mix_stage2 <= 1.0:
            raise ValueError("mix fraction must lie in [0, 1]")


def default_plans(
    steps: tuple[int, int, int] = (800, 400, 400),
    base_lr: float = 0.3,
    dataset_size: int = 512,
) -> list[StagePlan]:
    return [
        StagePlan(1, steps[0], base_lr, dataset_size),
        StagePlan(2, steps[1], base_lr, dataset_size),
        StagePlan(3, steps[2], base_lr, dataset_size, mix_stage2=0.3),
    ]


MetricRow = tuple[int, int, str, float]


def exact_match(model: ToyLM, items: list[DatasetItem]) -> float:
    """Teacher-forced argmax must hit every supervised token of an item."""
    hits = 0
    with torch.no_grad():
        for seq, mask in items:
            logits = model(model.embed_sequence(seq))
            targets = model.target_ids(seq)
            pred = logits.argmax(dim=-1).numpy()
            ok = all(pred[t] == targets[t] for t in np.nonzero(mask)[0])
            hits += bool(ok)
    return hits / len(items)


def run_stage(
    model: ToyLM,
    plan: StagePlan,
    tok: TokenizerConfig,
    seed: int = 0,
    eval_size: int = 256,
) -> list[MetricRow]:
    """Train one stage in place; returns (stage, step, metric, value) rows.

    A zero-step plan leaves the model untouched and reports nothing.
    """
    if plan.steps == 0:
        return []
    data_seed = seed * 10 + plan.stage
    dataset = build_dataset(
        plan.stage, plan.dataset_size, tok, data_seed, plan.mix_stage2
    )
    schedule = cosine_schedule(plan.base_lr, plan.steps, plan.warmup_ratio)
    trace = train(
        model, dataset, plan.steps, schedule, plan.batch_size, seed=data_seed
    )
    metrics: list[MetricRow] = [
        (plan.stage, step, "loss", value) for step, value in enumerate(trace)
    ]
    metric_name = "accuracy" if plan.stage == 1 else "exact_match"
    score = exact_match(model, dataset[: min(eval_size, len(dataset))])
    metrics.append((plan.stage, plan.steps, metric_name, score))
    return metrics


def run_curriculum(
    model: ToyLM,
    plans: list[StagePlan],
    tok: TokenizerConfig,
    seed: int = 0,
) -> list[MetricRow]:
    metrics: list[MetricRow] = []
    for plan in plans:
        metrics.extend(run_stage(model, plan, tok, seed=seed))
    return metrics


def metrics_lines(metrics: list[MetricRow]) -> str:
    return "".join(
        f"{stage},{step},{name},{value:.10g}\n" for stage, step, name, value in metrics
    )


# -- ablation harness ----------------------------------------------------------


@dataclass(frozen=True)
class AblationBudget:
    steps_stage1: int = 300
    steps_stage3: int = 300
    dataset_size: int = 256
    base_lr: float = 0.3
    seed: int = 0


def ablate_tokenization(
    recipes: list[TokenizerConfig],
    budget: AblationBudget = AblationBudget(),
    config: ToyModelConfig | None = None,
) -> tuple[list[tuple[str, float]], str]:
    """Train one identical model per tokenizer recipe; compare stage-3 EM.

    Returns (rows, formatted table). At least two recipes are required.
    """
    if len(recipes) < 2:
        raise ValueError("ablation needs at least two tokenizer recipes")
    config = config or ToyModelConfig()
    rows: list[tuple[str, float]] = []
    for recipe in recipes:
        model = ToyLM(config)
        plans = [
            StagePlan(1, budget.steps_stage1, budget.base_lr, budget.dataset_size),
            StagePlan(
                3,
                budget.steps_stage3,
                budget.base_lr,
                budget.dataset_size,
                mix_stage2=0.3,
            ),
        ]
        metrics = run_curriculum(model, plans, recipe, seed=budget.seed)
        final = [v for s, _, n, v in metrics if s == 3 and n == "exact_match"]
        rows.append((recipe.label, final[-1] if final else 0.0))
    width = max(len("strategy"), max(len(r[0]) for r in rows)) + 2
    table = f"{'strategy':<{width}}stage3_exact_match\n"
    for label, score in rows:
        table += f"{label:<{width}}{score:.4f}\n"
    return rows, table
