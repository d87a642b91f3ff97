"""Desk-scale frozen conditional language model.

A one-block encoder / one-block decoder transformer (pre-norm, GELU FFN,
sinusoidal positions on token embeddings) over a shared embedding table.
It accepts an optional continuous prompt prepended to the encoder input:
prompt rows that are exactly zero count as padding and are masked out of
attention, so an all-zero prompt reproduces the no-prompt loss.

The output projection starts at zero, so a freshly initialized model
emits exactly uniform logits.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rngmod
from . import textdata as td
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import AdamW
from .tensor import (ShapeError, Tensor, attention_core, concat_cols, concat_rows,
                     cross_entropy, embedding_lookup, gelu, layer_norm, linear,
                     slice_cols)

MASK_VALUE = -1e30


class FrozenContractError(RuntimeError):
    """Raised when an operation needs the model frozen (or not) and it isn't."""


@dataclass
class LMConfig:
    embed_dim: int = 64
    num_heads: int = 2
    ffn_dim: int = 256
    max_positions: int = 256

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by "
                             f"num_heads {self.num_heads}")


@dataclass
class PretrainConfig:
    epochs: int = 6
    batch_size: int = 10
    lr: float = 3e-3
    weight_decay: float = 0.01
    # fraction of pretraining passes that see a prefix prepended to the
    # encoder input, so the frozen model treats continuous prompts as
    # consumable context instead of corruption; of the exposed passes,
    # hint_fraction carry an embedded copy of the target and the rest
    # carry random token noise
    prompt_exposure: float = 0.6
    hint_fraction: float = 0.67
    model: LMConfig = field(default_factory=LMConfig)
    extra_vocab_texts: list[str] = field(default_factory=list)


def sinusoidal_positions(max_positions: int, dim: int) -> np.ndarray:
    pos = np.arange(max_positions)[:, None]
    i = np.arange(dim // 2)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((max_positions, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def _attn_param_names(prefix: str) -> list[str]:
    return [f"{prefix}.{n}" for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


class FrozenLM:
    """Seq2seq stand-in with a pinned zero pad-embedding row."""

    def __init__(self, vocab: td.Vocab, config: LMConfig, seed: int):
        self.vocab = vocab
        self.config = config
        self.frozen = False
        self.provenance: dict = {"init_seed": seed}
        self.pretrain_record: dict = {}
        self.positions = sinusoidal_positions(config.max_positions, config.embed_dim)
        self.params: dict[str, Tensor] = {}
        self._init_params(seed)

    # -- construction ----------------------------------------------------

    def _init_params(self, seed: int) -> None:
        gen = rngmod.stream(seed, "lm-init")
        d, f, v = self.config.embed_dim, self.config.ffn_dim, len(self.vocab)

        def mat(rows, cols):
            return Tensor(gen.normal(0.0, 1.0 / math.sqrt(rows), size=(rows, cols)),
                          requires_grad=True)

        def vec(n, value=0.0):
            return Tensor(np.full(n, value), requires_grad=True)

        emb = Tensor(gen.normal(0.0, 1.0 / math.sqrt(d), size=(v, d)), requires_grad=True)
        emb.data[td.PAD_ID, :] = 0.0
        self.params["embedding"] = emb
        for block in ("enc", "dec"):
            for ln in ("ln1", "ln2", "ln3", "lnf"):
                if block == "enc" and ln == "ln3":
                    continue
                self.params[f"{block}.{ln}.gain"] = vec(d, 1.0)
                self.params[f"{block}.{ln}.bias"] = vec(d)
            attns = ["attn"] if block == "enc" else ["self", "cross"]
            for a in attns:
                p = f"{block}.{a}"
                for w, b in (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")):
                    self.params[f"{p}.{w}"] = mat(d, d)
                    self.params[f"{p}.{b}"] = vec(d)
            self.params[f"{block}.ffn.w1"] = mat(d, f)
            self.params[f"{block}.ffn.b1"] = vec(f)
            self.params[f"{block}.ffn.w2"] = mat(f, d)
            self.params[f"{block}.ffn.b2"] = vec(d)
        # zero output projection: a fresh model scores every token equally
        self.params["out.w"] = Tensor(np.zeros((d, v)), requires_grad=True)
        self.params["out.b"] = Tensor(np.zeros(v), requires_grad=True)

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        for p in self.params.values():
            p.requires_grad = not frozen

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode("utf-8"))
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()

    # -- embedding -------------------------------------------------------

    def embed_tokens(self, ids, add_positions: bool = False) -> Tensor:
        """Embedding rows for ids; pad rows are zero before positions."""
        idx = np.asarray(ids, dtype=np.int64)
        emb = embedding_lookup(self.params["embedding"], idx)
        if add_positions:
            if idx.shape[0] > self.config.max_positions:
                raise ValueError(f"sequence length {idx.shape[0]} exceeds "
                                 f"max_positions {self.config.max_positions}")
            emb = emb + Tensor(self.positions[: idx.shape[0]])
        return emb

    # -- transformer pieces ------------------------------------------------

    def _ln(self, name: str, x: Tensor) -> Tensor:
        return layer_norm(x, self.params[f"{name}.gain"], self.params[f"{name}.bias"])

    def _mha(self, prefix: str, x_q: Tensor, x_kv: Tensor, add_mask: np.ndarray) -> Tensor:
        p = self.params
        q = linear(x_q, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
        k = linear(x_kv, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
        v = linear(x_kv, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
        d, h = self.config.embed_dim, self.config.num_heads
        dh = d // h
        scale = 1.0 / math.sqrt(dh)
        heads = []
        for i in range(h):
            qi = slice_cols(q, i * dh, (i + 1) * dh)
            ki = slice_cols(k, i * dh, (i + 1) * dh)
            vi = slice_cols(v, i * dh, (i + 1) * dh)
            heads.append(attention_core(qi, ki, vi, add_mask, scale))
        ctx = concat_cols(heads) if h > 1 else heads[0]
        return linear(ctx, p[f"{prefix}.wo"], p[f"{prefix}.bo"])

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        return linear(gelu(linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"])),
                      p[f"{prefix}.w2"], p[f"{prefix}.b2"])

    def _encoder(self, x: Tensor, valid: np.ndarray) -> Tensor:
        t = x.data.shape[0]
        mask = np.zeros((t, t))
        mask[:, ~valid] = MASK_VALUE
        a = self._ln("enc.ln1", x)
        x = x + self._mha("enc.attn", a, a, mask)
        x = x + self._ffn("enc.ffn", self._ln("enc.ln2", x))
        return self._ln("enc.lnf", x)

    def _decoder(self, y: Tensor, enc_out: Tensor, enc_valid: np.ndarray) -> Tensor:
        ty = y.data.shape[0]
        causal = np.triu(np.full((ty, ty), MASK_VALUE), k=1)
        a = self._ln("dec.ln1", y)
        y = y + self._mha("dec.self", a, a, causal)
        cross_mask = np.zeros((ty, enc_out.data.shape[0]))
        cross_mask[:, ~enc_valid] = MASK_VALUE
        y = y + self._mha("dec.cross", self._ln("dec.ln2", y), enc_out, cross_mask)
        y = y + self._ffn("dec.ffn", self._ln("dec.ln3", y))
        h = self._ln("dec.lnf", y)
        return linear(h, self.params["out.w"], self.params["out.b"])

    # -- public forward ----------------------------------------------------

    def encode(self, input_ids, prompt: Tensor | None = None) -> tuple[Tensor, np.ndarray]:
        """Encoder states over [prompt rows || token embeddings] and their
        validity mask. All-zero prompt rows and pad tokens are invalid."""
        idx = np.asarray(input_ids, dtype=np.int64)
        if idx.size == 0:
            raise ValueError("encoder input must be non-empty")
        emb = self.embed_tokens(idx, add_positions=True)
        token_valid = idx != td.PAD_ID
        if prompt is None:
            x, valid = emb, token_valid
        else:
            if prompt.data.ndim != 2 or prompt.data.shape[1] != self.config.embed_dim:
                raise ShapeError(f"prompt shape {prompt.data.shape} incompatible with "
                                 f"embed_dim {self.config.embed_dim}")
            total = prompt.data.shape[0] + idx.shape[0]
            if total > self.config.max_positions:
                raise ValueError(f"prompt+input length {total} exceeds "
                                 f"max_positions {self.config.max_positions}")
            prompt_valid = ~np.all(prompt.data == 0.0, axis=1)
            x = concat_rows([prompt, emb])
            valid = np.concatenate([prompt_valid, token_valid])
        return self._encoder(x, valid), valid

    def target_logits(self, input_ids, target_ids,
                      prompt: Tensor | None = None) -> tuple[Tensor, list[int]]:
        """Teacher-forced decoder logits and the label sequence."""
        enc_out, valid = self.encode(input_ids, prompt)
        dec_in = [td.BOS_ID] + list(target_ids)
        labels = list(target_ids) + [td.EOS_ID]
        if len(dec_in) > self.config.max_positions:
            raise ValueError(f"target length {len(dec_in)} exceeds "
                             f"max_positions {self.config.max_positions}")
        y = self.embed_tokens(dec_in, add_positions=True)
        return self._decoder(y, enc_out, valid), labels

    def loss_with_prompt(self, prompt: Tensor | None, input_ids, target_ids) -> Tensor:
        """Cross-entropy of the target given the (optionally prompted) input.

        Gradient reaches the prompt tensor but never the model parameters
        once the model is frozen.
        """
        logits, labels = self.target_logits(input_ids, target_ids, prompt)
        return cross_entropy(logits, labels, td.PAD_ID)

    def score_choices(self, prompt: Tensor | None, example: td.QAExample) -> list[float]:
        """Per-choice target losses, aligned with the example's choices."""
        input_ids = td.tokenize(td.format_input(example), self.vocab)
        losses = []
        for c in example.choices:
            target_ids = td.tokenize(f"{c.label}: {c.text}", self.vocab)
            losses.append(float(self.loss_with_prompt(prompt, input_ids, target_ids).data))
        return losses

    def predict_choice(self, prompt: Tensor | None, example: td.QAExample) -> str:
        """Label of the lowest-loss choice; ties break toward earlier labels."""
        losses = self.score_choices(prompt, example)
        best = min(range(len(losses)), key=lambda i: (losses[i], i))
        return example.choices[best].label

    # -- persistence -------------------------------------------------------

    def checkpoint_payload(self) -> tuple[dict[str, np.ndarray], dict]:
        tensors = {f"lm.{name}": t.data for name, t in self.params.items()}
        meta = {
            "kind": "promptblend",
            "lm": {
                "config": asdict(self.config),
                "vocab": self.vocab.non_reserved(),
                "frozen": self.frozen,
                "provenance": self.provenance,
                "pretrain_record": self.pretrain_record,
            },
        }
        return tensors, meta

    def save(self, path) -> None:
        tensors, meta = self.checkpoint_payload()
        save_checkpoint(path, tensors, meta)

    @classmethod
    def from_payload(cls, tensors: dict[str, np.ndarray], meta: dict) -> "FrozenLM":
        if "lm" not in meta:
            raise CheckpointError("checkpoint has no lm section")
        section = meta["lm"]
        vocab = td.Vocab(section["vocab"])
        config = LMConfig(**section["config"])
        lm = cls.__new__(cls)
        lm.vocab = vocab
        lm.config = config
        lm.provenance = section.get("provenance", {})
        lm.pretrain_record = section.get("pretrain_record", {})
        lm.positions = sinusoidal_positions(config.max_positions, config.embed_dim)
        lm.params = {}
        for name, arr in tensors.items():
            if name.startswith("lm."):
                lm.params[name[3:]] = Tensor(arr.copy())
        lm.frozen = False
        lm.set_frozen(bool(section.get("frozen", False)))
        return lm

    @classmethod
    def load(cls, path) -> "FrozenLM":
        tensors, meta = load_checkpoint(path)
        return cls.from_payload(tensors, meta)


def corpus_digest(corpus: list[tuple[str, str]]) -> str:
    return hashlib.sha256(json.dumps(corpus).encode("utf-8")).hexdigest()


def pretrain(corpus: list[tuple[str, str]], config: PretrainConfig, seed: int) -> FrozenLM:
    """Teacher-forced training for the configured epochs, then freeze.

    The pad embedding row is re-pinned to zero after every optimizer step.
    Deterministic for a given seed.
    """
    if not corpus:
        raise ValueError("pretraining corpus must be non-empty")
    texts = [s for pair in corpus for s in pair] + list(config.extra_vocab_texts)
    vocab = td.Vocab.build(texts)
    lm = FrozenLM(vocab, config.model, seed)
    encoded = [(td.tokenize(inp, vocab), td.tokenize(tgt, vocab)) for inp, tgt in corpus]

    def corpus_loss() -> float:
        total = 0.0
        for inp, tgt in encoded:
            total += float(lm.loss_with_prompt(None, inp, tgt).data)
        return total / len(encoded)

    initial_loss = corpus_loss()
    params = list(lm.params.values())
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    shuffle = rngmod.stream(seed, "pretrain-shuffle")
    exposure = rngmod.stream(seed, "pretrain-exposure")
    vocab_size = len(vocab)

    def draw_prefix(tgt: list[int]) -> Tensor | None:
        roll = exposure.random()
        if roll >= config.prompt_exposure:
            return None
        if roll < config.prompt_exposure * config.hint_fraction and tgt:
            return lm.embed_tokens(tgt)
        n = int(exposure.integers(2, 13))
        ids = exposure.integers(len(td.RESERVED_TOKENS), vocab_size, size=n)
        return lm.embed_tokens(ids)

    epoch_means = []
    for _ in range(config.epochs):
        order = shuffle.permutation(len(encoded))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [encoded[int(i)] for i in order[start:start + config.batch_size]]
            loss = None
            for inp, tgt in batch:
                one = lm.loss_with_prompt(draw_prefix(tgt), inp, tgt)
                loss = one if loss is None else loss + one
            loss = loss * (1.0 / len(batch))
            loss.backward()
            opt.step()
            opt.zero_grad()
            lm.params["embedding"].data[td.PAD_ID, :] = 0.0
            losses.append(float(loss.data))
        epoch_means.append(float(np.mean(losses)))
    final_loss = corpus_loss()
    lm.set_frozen(True)
    lm.provenance = {"pretrain_seed": seed, "corpus_hash": corpus_digest(corpus)}
    lm.pretrain_record = {"initial_loss": initial_loss, "final_loss": final_loss,
                          "epoch_means": epoch_means, "epochs": config.epochs,
                          "batch_size": config.batch_size, "lr": config.lr}
    return lm
