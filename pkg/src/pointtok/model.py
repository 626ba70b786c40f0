"""Desk-scale decoder-only transformer over unified patch+text sequences.

Patch slots enter the sequence through a bias-free linear projector
from M*6 to d_model; every other token is an embedding-table lookup.
Everything runs in float64 so the finite-difference gradient oracle is
meaningful, and next-token loss is restricted to positions whose
target is a text token.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    DivergenceDetected,
    EmptyMask,
    GradMismatch,
    IoError,
    ShapeMismatch,
)
from .ioutil import atomic_write
from .sequence import LSEP, PATCH, PCEND, PCSTART, RSEP, TEXT, TokenSequence

# Reserved vocabulary ids 0-4; text ids start above them.
PCSTART_ID = 0
PCEND_ID = 1
LSEP_ID = 2
RSEP_ID = 3
PAD_ID = 4
N_SPECIAL = 5
_SPECIAL_IDS = {PCSTART: PCSTART_ID, PCEND: PCEND_ID, LSEP: LSEP_ID, RSEP: RSEP_ID}

# Toy text vocabulary, shared with the synthetic curriculum.
CLASS_TOKEN_BASE = 5  # eight shape-class words: 5..12
RELATION_TOKEN_BASE = 13  # eight spatial-relation words: 13..20
Q_CLASSIFY = 21
Q_CAPTION = 22
Q_RELATION = 23
WORD_ROUND = 24
WORD_LONG = 25
FIRST_FREE_ID = 26


@dataclass(frozen=True)
class ToyModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    vocab_size: int = 64
    max_seq: int = 64
    m: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("d_model", "n_layers", "n_heads", "vocab_size", "max_seq", "m"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.vocab_size < 6:
            raise ValueError("vocab needs the 5 special ids plus text")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def patch_dim(self) -> int:
        return self.m * 6


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.wq = nn.Linear(d_model, d_model)
        self.wk = nn.Linear(d_model, d_model)
        self.wv = nn.Linear(d_model, d_model)
        self.wo = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        q = self.wq(x).view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.wk(x).view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.wv(x).view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), 1)
        scores = scores.masked_fill(mask, float("-inf"))
        attn = F.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.wo(out)


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = CausalSelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 4 * d_model),
            nn.GELU(),
            nn.Linear(4 * d_model, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        x = x + self.mlp(self.ln2(x))
        return x


class ToyLM(nn.Module):
    """Unified-sequence decoder: projected patches and text share one stack."""

    def __init__(self, config: ToyModelConfig):
        super().__init__()
        self.config = config
        torch.manual_seed(config.seed)
        # bias-free so embedding a patch is exactly linear
        self.projector = nn.Parameter(
            torch.randn(config.patch_dim, config.d_model) * 0.02
        )
        self.tok_emb = nn.Parameter(torch.randn(config.vocab_size, config.d_model) * 0.02)
        self.pos_emb = nn.Parameter(torch.randn(config.max_seq, config.d_model) * 0.02)
        self.blocks = nn.ModuleList(
            Block(config.d_model, config.n_heads) for _ in range(config.n_layers)
        )
        self.ln_f = nn.LayerNorm(config.d_model)
        self.head = nn.Linear(config.d_model, config.vocab_size, bias=False)
        self.double()

    # -- token ids ---------------------------------------------------------

    def token_id(self, token) -> int:
        """Vocabulary id of a non-patch token."""
        if token.kind == PATCH:
            raise ValueError("patch tokens have no vocabulary id")
        if token.kind == TEXT:
            if not 0 <= token.value < self.config.vocab_size:
                raise ValueError(f"text id {token.value} outside vocabulary")
            return token.value
        return _SPECIAL_IDS[token.kind]

    def target_ids(self, seq: TokenSequence) -> np.ndarray:
        """Next-token id per position; -1 where the next token is a patch."""
        out = np.full(len(seq.tokens), -1, dtype=np.int64)
        for t in range(len(seq.tokens) - 1):
            nxt = seq.tokens[t + 1]
            if nxt.kind != PATCH:
                out[t] = self.token_id(nxt)
        return out

    # -- embedding and transformer ----------------------------------------

    def embed_sequence(self, seq: TokenSequence) -> torch.Tensor:
        """(T, d_model) rows: projector @ patch vector or embedding lookup."""
        if seq.patch_matrix.shape[1] != self.config.patch_dim:
            raise ShapeMismatch(
                f"patch vectors have {seq.patch_matrix.shape[1]} dims, "
                f"model expects {self.config.patch_dim}"
            )
        rows = []
        matrix = torch.from_numpy(seq.patch_matrix.copy())
        for token in seq.tokens:
            if token.kind == PATCH:
                rows.append(matrix[token.value] @ self.projector)
            else:
                rows.append(self.tok_emb[self.token_id(token)])
        return torch.stack(rows)

    def forward(self, embedded: torch.Tensor) -> torch.Tensor:
        """Causal logits for (T, d) or (B, T, d) embedded input."""
        single = embedded.dim() == 2
        x = embedded.unsqueeze(0) if single else embedded
        t = x.shape[1]
        if t > self.config.max_seq:
            raise ValueError(f"sequence length {t} exceeds max_seq")
        x = x + self.pos_emb[:t]
        for block in self.blocks:
            x = block(x)
        logits = self.head(self.ln_f(x))
        return logits.squeeze(0) if single else logits

    def parameter_group(self, name: str) -> str:
        if name == "projector":
            return "projector"
        if name in ("tok_emb", "pos_emb"):
            return "embeddings"
        if ".attn." in name:
            return "attention"
        if ".mlp." in name:
            return "feedforward"
        if name.startswith("head"):
            return "head"
        return "layernorm"


@dataclass
class Batch:
    """Sequences plus per-position loss masks (True = supervised position)."""

    sequences: list[TokenSequence]
    loss_mask: list[np.ndarray]

    def __post_init__(self):
        if len(self.sequences) != len(self.loss_mask):
            raise ValueError("one mask per sequence required")
        self.loss_mask = [np.asarray(m, dtype=bool) for m in self.loss_mask]
        for seq, mask in zip(self.sequences, self.loss_mask):
            if mask.shape != (len(seq.tokens),):
                raise ValueError("mask length must equal sequence length")


def masked_nll(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor):
    """Mean negative log-likelihood over masked positions."""
    if not bool(mask.any()):
        raise EmptyMask("loss mask selects no positions")
    logprobs = F.log_softmax(logits, dim=-1)
    picked = logprobs[mask].gather(1, targets[mask].unsqueeze(1))
    return -picked.mean()


def _batch_tensors(model: ToyLM, batch: Batch):
    """Pad embedded sequences, targets and masks to a common length."""
    embeds, targets, masks = [], [], []
    for seq, mask in zip(batch.sequences, batch.loss_mask):
        if not mask.any():
            raise EmptyMask("a sequence has an all-false loss mask")
        tgt = model.target_ids(seq)
        if (mask & (tgt < 0)).any():
            raise ValueError("mask selects a position whose target is a patch")
        if mask[-1]:
            raise ValueError("final position has no next token to predict")
        embeds.append(model.embed_sequence(seq))
        targets.append(tgt)
        masks.append(mask)
    t_max = max(e.shape[0] for e in embeds)
    pad_row = model.tok_emb[PAD_ID]
    x = torch.stack(
        [
            torch.cat([e, pad_row.expand(t_max - e.shape[0], -1)])
            if e.shape[0] < t_max
            else e
            for e in embeds
        ]
    )
    tgt = torch.full((len(embeds), t_max), 0, dtype=torch.long)
    msk = torch.zeros((len(embeds), t_max), dtype=torch.bool)
    for i, (t_i, m_i) in enumerate(zip(targets, masks)):
        n = len(m_i)
        tgt[i, :n] = torch.from_numpy(np.maximum(t_i, 0))
        msk[i, :n] = torch.from_numpy(m_i)
    return x, tgt, msk


def loss(model: ToyLM, batch: Batch) -> torch.Tensor:
    """Cross-entropy at supervised text positions only."""
    x, targets, mask = _batch_tensors(model, batch)
    logits = model(x)
    return masked_nll(logits, targets, mask)


# -- gradient checking -------------------------------------------------------


@dataclass
class GradReport:
    max_rel_err: float
    per_group: dict = field(default_factory=dict)  # group -> (max err, n checked)
    n_checked: int = 0


def analytic_gradients(model: ToyLM, batch: Batch) -> dict[str, torch.Tensor]:
    model.zero_grad(set_to_none=True)
    value = loss(model, batch)
    value.backward()
    grads = {
        name: (
            p.grad.detach().clone()
            if p.grad is not None
            else torch.zeros_like(p)
        )
        for name, p in model.named_parameters()
    }
    model.zero_grad(set_to_none=True)
    return grads


def grad_check(
    model: ToyLM,
    batch: Batch,
    epsilon: float = 1e-5,
    n_samples: int = 200,
    seed: int = 0,
    analytic: dict[str, torch.Tensor] | None = None,
    rel_tol: float = 1e-4,
    abs_tol: float = 1e-8,
) -> GradReport:
    """Compare analytic gradients against central finite differences.

    Samples coordinates from every parameter group (projector,
    embeddings, attention, feedforward, layernorm, head). Raises
    GradMismatch listing offending coordinates when any sampled entry
    exceeds the tolerances.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    if analytic is None:
        analytic = analytic_gradients(model, batch)

    params = dict(model.named_parameters())
    groups: dict[str, list[str]] = {}
    for name in params:
        groups.setdefault(model.parameter_group(name), []).append(name)

    rng = np.random.default_rng(seed)
    total = sum(p.numel() for p in params.values())
    picks: list[tuple[str, int]] = []
    for group, names in sorted(groups.items()):
        size = sum(params[n].numel() for n in names)
        quota = max(8, int(round(n_samples * size / total)))
        flat_sizes = np.array([params[n].numel() for n in names])
        offsets = np.cumsum(flat_sizes)
        for flat in rng.integers(0, size, quota):
            which = int(np.searchsorted(offsets, flat, side="right"))
            picks.append((names[which], int(flat - (offsets[which] - flat_sizes[which]))))

    offenders = []
    per_group: dict[str, list[float]] = {g: [] for g in groups}
    with torch.no_grad():
        for name, idx in picks:
            flat = params[name].view(-1)
            orig = flat[idx].item()
            flat[idx] = orig + epsilon
            up = loss(model, batch).item()
            flat[idx] = orig - epsilon
            down = loss(model, batch).item()
            flat[idx] = orig
            fd = (up - down) / (2.0 * epsilon)
            an = analytic[name].view(-1)[idx].item()
            diff = abs(an - fd)
            err = 0.0 if diff <= abs_tol else diff / max(abs(an), abs(fd))
            per_group[model.parameter_group(name)].append(err)
            if err > rel_tol:
                offenders.append((name, idx, an, fd, err))

    report = GradReport(
        max_rel_err=max((max(v) for v in per_group.values() if v), default=0.0),
        per_group={
            g: (max(v) if v else 0.0, len(v)) for g, v in per_group.items()
        },
        n_checked=len(picks),
    )
    if offenders:
        head = ", ".join(
            f"{n}[{i}]: analytic={a:.3e} fd={f:.3e} err={e:.2e}"
            for n, i, a, f, e in offenders[:5]
        )
        raise GradMismatch(
            f"{len(offenders)}/{len(picks)} sampled gradients mismatch: {head}",
            offenders=offenders,
        )
    return report


# -- training ----------------------------------------------------------------


def cosine_schedule(base_lr: float, total_steps: int, warmup_ratio: float = 0.0):
    """Cosine decay to zero with optional linear warmup."""
    warmup = int(total_steps * warmup_ratio)

    def lr_at(step: int) -> float:
        if warmup and step < warmup:
            return base_lr * (step + 1) / warmup
        if total_steps <= warmup:
            return base_lr
        progress = (step - warmup) / max(1, total_steps - warmup)
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))

    return lr_at


def train(
    model: ToyLM,
    dataset: list[tuple[TokenSequence, np.ndarray]],
    steps: int,
    schedule,
    batch_size: int = 16,
    seed: int = 0,
) -> list[float]:
    """Plain SGD next-token training; returns the per-step loss trace."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if not dataset and steps > 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(seed)
    trace: list[float] = []
    params = [p for p in model.parameters()]
    for step in range(steps):
        if len(dataset) <= batch_size:
            chosen = dataset
        else:
            idx = rng.choice(len(dataset), size=batch_size, replace=False)
            chosen = [dataset[i] for i in idx]
        batch = Batch([c[0] for c in chosen], [c[1] for c in chosen])
        model.zero_grad(set_to_none=True)
        value = loss(model, batch)
        step_loss = float(value.item())
        if not math.isfinite(step_loss):
            raise DivergenceDetected(f"loss {step_loss} at step {step}")
        value.backward()
        lr = schedule(step)
        with torch.no_grad():
            for p in params:
                if p.grad is not None:
                    p.add_(p.grad, alpha=-lr)
        trace.append(step_loss)
    model.zero_grad(set_to_none=True)
    return trace


# -- checkpoint format ---------------------------------------------------------

CHECKPOINT_MAGIC = b"PTKC"
_CONFIG_STRUCT = struct.Struct("<4s6IQ")


def save_checkpoint(model: ToyLM, path) -> None:
    """Binary checkpoint: magic, config block, tensors in declaration order."""
    cfg = model.config
    blob = [
        _CONFIG_STRUCT.pack(
            CHECKPOINT_MAGIC,
            cfg.d_model,
            cfg.n_layers,
            cfg.n_heads,
            cfg.vocab_size,
            cfg.max_seq,
            cfg.m,
            cfg.seed,
        )
    ]
    for _, p in model.named_parameters():
        blob.append(p.detach().numpy().astype("<f8").tobytes())
    atomic_write(path, b"".join(blob))


def load_checkpoint(path) -> ToyLM:
    raw = open(path, "rb").read()
    if len(raw) < _CONFIG_STRUCT.size:
        raise IoError("checkpoint shorter than its header")
    magic, d_model, n_layers, n_heads, vocab, max_seq, m, seed = (
        _CONFIG_STRUCT.unpack_from(raw)
    )
    if magic != CHECKPOINT_MAGIC:
        raise IoError(f"bad checkpoint magic {magic!r}")
    config = ToyModelConfig(
        d_model=d_model,
        n_layers=n_layers,
        n_heads=n_heads,
        vocab_size=vocab,
        max_seq=max_seq,
        m=m,
        seed=seed,
    )
    model = ToyLM(config)
    offset = _CONFIG_STRUCT.size
    with torch.no_grad():
        for _, p in model.named_parameters():
            n_bytes = p.numel() * 8
            if offset + n_bytes > len(raw):
                raise IoError("checkpoint truncated")
            arr = np.frombuffer(raw, dtype="<f8", count=p.numel(), offset=offset)
            p.copy_(torch.from_numpy(arr.reshape(tuple(p.shape)).copy()))
            offset += n_bytes
    if offset != len(raw):
        raise IoError("checkpoint has trailing bytes")
    return model
