import math

import numpy as np
import pytest
import torch

from pointtok import Token, TokenSequence
from pointtok.errors import (
    DivergenceDetected,
    EmptyMask,
    GradMismatch,
    IoError,
    ShapeMismatch,
)
from pointtok.model import (
    LSEP_ID,
    PCEND_ID,
    PCSTART_ID,
    Batch,
    ToyLM,
    ToyModelConfig,
    analytic_gradients,
    cosine_schedule,
    grad_check,
    load_checkpoint,
    loss,
    masked_nll,
    save_checkpoint,
    train,
)

torch.set_num_threads(1)

TINY = ToyModelConfig(
    d_model=16, n_layers=1, n_heads=2, vocab_size=32, max_seq=16, m=2, seed=0
)


def seq_with_patches(n_patches=1, m=2, text=(21, 5), value=0.3):
    tokens = [Token("PCSTART")]
    tokens += [Token("PATCH", i) for i in range(n_patches)]
    tokens.append(Token("PCEND"))
    tokens += [Token("TEXT", t) for t in text]
    matrix = np.full((n_patches, m * 6), value)
    matrix += np.arange(n_patches)[:, None] * 0.01
    return TokenSequence(tuple(tokens), matrix, "zyx")


def one_item(model, text=(21, 5)):
    seq = seq_with_patches(m=model.config.m, text=text)
    mask = np.zeros(len(seq.tokens), dtype=bool)
    mask[-2] = True  # predict the final text token
    return seq, mask


class TestConfig:
    def test_heads_must_divide(self):
        with pytest.raises(ValueError):
            ToyModelConfig(d_model=10, n_heads=3)

    def test_vocab_floor(self):
        with pytest.raises(ValueError):
            ToyModelConfig(vocab_size=5)

    def test_paper_scale_shapes(self):
        cfg = ToyModelConfig(m=512, vocab_size=64)
        model = ToyLM(cfg)
        assert model.projector.shape == (3072, 64)


class TestEmbedSequence:
    def test_special_tokens_are_table_rows(self):
        model = ToyLM(TINY)
        seq = seq_with_patches(text=())
        emb = model.embed_sequence(seq)
        assert torch.equal(emb[0], model.tok_emb[PCSTART_ID])
        assert torch.equal(emb[2], model.tok_emb[PCEND_ID])

    def test_zero_patch_projects_to_zero(self):
        model = ToyLM(TINY)
        seq = seq_with_patches(value=0.0)
        emb = model.embed_sequence(seq)
        assert torch.equal(emb[1], torch.zeros(TINY.d_model, dtype=torch.float64))

    def test_projector_homogeneity(self):
        model = ToyLM(TINY)
        seq1 = seq_with_patches(value=0.3)
        seq2 = TokenSequence(seq1.tokens, seq1.patch_matrix * 2.0, "zyx")
        e1 = model.embed_sequence(seq1)
        e2 = model.embed_sequence(seq2)
        assert torch.equal(e2[1], e1[1] * 2.0)

    def test_wrong_patch_width(self):
        model = ToyLM(TINY)
        seq = seq_with_patches(m=3)
        with pytest.raises(ShapeMismatch):
            model.embed_sequence(seq)

    def test_text_id_outside_vocab(self):
        model = ToyLM(TINY)
        seq = seq_with_patches(text=(99,))
        with pytest.raises(ValueError):
            model.embed_sequence(seq)

    def test_row_count_matches_tokens(self):
        model = ToyLM(TINY)
        seq = seq_with_patches(n_patches=3, text=(7, 8, 9))
        assert model.embed_sequence(seq).shape == (8, TINY.d_model)


class TestForward:
    def test_single_token_shape(self):
        model = ToyLM(TINY)
        emb = model.tok_emb[PCSTART_ID].unsqueeze(0)
        assert model(emb).shape == (1, TINY.vocab_size)

    def test_softmax_rows_sum_to_one(self):
        model = ToyLM(TINY)
        emb = model.embed_sequence(seq_with_patches(n_patches=3, text=(6, 7)))
        probs = torch.softmax(model(emb), dim=-1)
        assert torch.allclose(
            probs.sum(dim=-1),
            torch.ones(emb.shape[0], dtype=torch.float64),
            atol=1e-6,
        )

    def test_causality_bitwise(self):
        model = ToyLM(TINY)
        emb = model.embed_sequence(seq_with_patches(n_patches=4, text=(6, 7, 8)))
        base = model(emb)
        for t in (0, 3, 6):
            poked = emb.clone()
            poked[t + 1 :] += 17.5
            out = model(poked)
            assert np.array_equal(
                base[: t + 1].detach().numpy().view(np.int64),
                out[: t + 1].detach().numpy().view(np.int64),
            )

    def test_identical_prefixes_identical_logits(self):
        model = ToyLM(TINY)
        emb = model.embed_sequence(seq_with_patches(n_patches=4, text=(6, 7)))
        other = emb.clone()
        other[5:] = 0.123
        a, b = model(emb), model(other)
        assert torch.equal(a[:5], b[:5])

    def test_too_long_rejected(self):
        model = ToyLM(TINY)
        with pytest.raises(ValueError):
            model(torch.zeros(TINY.max_seq + 1, TINY.d_model, dtype=torch.float64))


class TestLoss:
    def test_uniform_logits_give_log_vocab(self):
        model = ToyLM(TINY)
        with torch.no_grad():
            model.head.weight.zero_()  # logits identically zero -> uniform
        seq, mask = one_item(model)
        value = loss(model, Batch([seq], [mask])).item()
        assert abs(value - math.log(TINY.vocab_size)) < 1e-9

    def test_perfect_prediction_near_zero(self):
        logits = torch.full((3, 8), -1e3, dtype=torch.float64)
        targets = torch.tensor([1, 2, 3])
        for i, t in enumerate(targets):
            logits[i, t] = 1e3
        mask = torch.ones(3, dtype=torch.bool)
        assert masked_nll(logits, targets, mask).item() < 1e-12

    def test_empty_mask_rejected(self):
        model = ToyLM(TINY)
        seq, mask = one_item(model)
        with pytest.raises(EmptyMask):
            loss(model, Batch([seq], [np.zeros_like(mask)]))

    def test_mask_on_patch_target_rejected(self):
        model = ToyLM(TINY)
        seq, mask = one_item(model)
        bad = np.zeros_like(mask)
        bad[0] = True  # next token is a patch
        with pytest.raises(ValueError):
            loss(model, Batch([seq], [bad]))

    def test_masked_positions_get_zero_logit_grads(self):
        model = ToyLM(TINY)
        seq, mask = one_item(model)
        emb = model.embed_sequence(seq)
        logits = model(emb)
        logits.retain_grad()
        targets = torch.from_numpy(np.maximum(model.target_ids(seq), 0))
        value = masked_nll(logits, targets, torch.from_numpy(mask))
        value.backward()
        grads = logits.grad.numpy()
        assert (grads[~mask] == 0).all()
        assert np.abs(grads[mask]).sum() > 0

    def test_batched_matches_padding(self):
        # a short and a long sequence batch without error and stay finite
        model = ToyLM(TINY)
        s1, m1 = one_item(model, text=(21, 5))
        s2, m2 = one_item(model, text=(21, 5, 6, 7))
        value = loss(model, Batch([s1, s2], [m1, m2])).item()
        assert math.isfinite(value)


class TestGradCheck:
    def test_projector_and_friends_match_fd(self):
        model = ToyLM(TINY)
        seq, mask = one_item(model)
        report = grad_check(model, Batch([seq], [mask]), epsilon=1e-5, n_samples=120)
        assert report.max_rel_err <= 1e-4
        assert set(report.per_group) == {
            "projector",
            "embeddings",
            "attention",
            "feedforward",
            "layernorm",
            "head",
        }
        assert report.n_checked >= 120

    def test_zero_gradient_passes_absolute_branch(self):
        model = ToyLM(TINY)
        seq, mask = one_item(model)
        grads = analytic_gradients(model, Batch([seq], [mask]))
        # unused vocabulary rows have exactly zero analytic gradient
        unused = grads["tok_emb"][31]
        assert torch.equal(unused, torch.zeros_like(unused))
        report = grad_check(model, Batch([seq], [mask]), n_samples=64)
        assert report.max_rel_err <= 1e-4

    def test_corrupted_gradient_detected(self):
        model = ToyLM(TINY)
        seq, mask = one_item(model)
        batch = Batch([seq], [mask])
        grads = analytic_gradients(model, batch)
        grads["projector"] = grads["projector"] * 1.1
        with pytest.raises(GradMismatch) as err:
            grad_check(model, batch, n_samples=200, analytic=grads)
        assert err.value.offenders

    def test_epsilon_range_enforced(self):
        model = ToyLM(TINY)
        seq, mask = one_item(model)
        with pytest.raises(ValueError):
            grad_check(model, Batch([seq], [mask]), epsilon=1e-2)


class TestTrain:
    def dataset(self, model, n=8):
        rng = np.random.default_rng(0)
        items = []
        for i in range(n):
            seq = seq_with_patches(
                m=model.config.m, text=(21, 5 + i % 4), value=rng.random()
            )
            mask = np.zeros(len(seq.tokens), dtype=bool)
            mask[-2] = True
            items.append((seq, mask))
        return items

    def test_overfits_single_batch(self):
        model = ToyLM(TINY)
        data = self.dataset(model, 4)
        trace = train(model, data, 500, cosine_schedule(0.5, 500, 0.1), 4, seed=0)
        assert trace[-1] < 0.1 * trace[0]

    def test_zero_lr_is_bitwise_noop(self):
        model = ToyLM(TINY)
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        train(model, self.dataset(model), 3, lambda step: 0.0, 4, seed=0)
        for n, p in model.named_parameters():
            assert torch.equal(before[n], p)

    def test_same_seed_same_trace(self):
        t1 = train(
            ToyLM(TINY), self.dataset(ToyLM(TINY)), 20, cosine_schedule(0.3, 20), 4, seed=9
        )
        t2 = train(
            ToyLM(TINY), self.dataset(ToyLM(TINY)), 20, cosine_schedule(0.3, 20), 4, seed=9
        )
        assert t1 == t2

    def test_divergence_detected(self):
        model = ToyLM(TINY)
        with torch.no_grad():
            model.projector[0, 0] = float("nan")
        with pytest.raises(DivergenceDetected):
            train(model, self.dataset(model), 2, lambda s: 0.1, 4, seed=0)


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        model = ToyLM(TINY)
        train(model, TestTrain().dataset(model), 5, lambda s: 0.2, 4, seed=0)
        save_checkpoint(model, tmp_path / "m.ptkc")
        back = load_checkpoint(tmp_path / "m.ptkc")
        assert back.config == model.config
        for (na, a), (nb, b) in zip(
            model.named_parameters(), back.named_parameters()
        ):
            assert na == nb and torch.equal(a, b)

    def test_magic_enforced(self, tmp_path):
        path = tmp_path / "m.ptkc"
        save_checkpoint(ToyLM(TINY), path)
        raw = bytearray(path.read_bytes())
        raw[0:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(IoError):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "m.ptkc"
        save_checkpoint(ToyLM(TINY), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(IoError):
            load_checkpoint(path)
