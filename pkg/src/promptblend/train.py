"""Experiment engine: trains the weight predictor against the frozen LM.

Each step runs question representation -> weight prediction (training
mode) -> linear combination -> prompted loss, then backpropagates into
the predictor parameters only. The LM is bit-frozen throughout; its
parameter hash is checked before and after.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rngmod
from . import textdata as td
from .composer import (PromptBasis, WeightPredictor, WeightVector, combine,
                       project_to_vocab, question_repr)
from .model import FrozenContractError, FrozenLM
from .optim import AdamW
from .tensor import Tensor


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 10
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    dropout_p: float = 0.1
    seed: int = 0
    prompt_length: int = 0  # 0 = use the basis padded length
    eval_every: int = 0  # steps between eval passes; 0 = final only

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.eval_every < 0:
            raise ValueError(f"eval_every must be non-negative, got {self.eval_every}")


@dataclass
class StepRecord:
    epoch: int
    step: int
    batch_size: int
    loss: float


@dataclass
class ExampleEval:
    id: str
    question: str
    loss: float
    weights: list[float]


@dataclass
class RunRecord:
    """Everything a report needs; losses here are the exact values seen."""

    config: dict
    basis_prompts: list[str]
    steps: list[StepRecord] = field(default_factory=list)
    epoch_means: list[float] = field(default_factory=list)
    eval_losses: list[list] = field(default_factory=list)  # [step, mean loss]
    control_eval_loss: float = 0.0
    prompted_eval_loss: float = 0.0
    examples: list[ExampleEval] = field(default_factory=list)
    projection: list[list] | None = None  # [token, cosine] per prompt row
    lm_param_hash: str = ""
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        rec = cls(config=d["config"], basis_prompts=d["basis_prompts"])
        rec.steps = [StepRecord(**s) for s in d["steps"]]
        rec.epoch_means = list(d["epoch_means"])
        rec.eval_losses = [list(e) for e in d["eval_losses"]]
        rec.control_eval_loss = d["control_eval_loss"]
        rec.prompted_eval_loss = d["prompted_eval_loss"]
        rec.examples = [ExampleEval(**e) for e in d["examples"]]
        rec.projection = d.get("projection")
        rec.lm_param_hash = d["lm_param_hash"]
        rec.wall_clock_seconds = d["wall_clock_seconds"]
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls.from_dict(json.loads(text))


@dataclass
class PromptedEvalResult:
    mean_loss: float
    weights: list[WeightVector]
    losses: list[float]


class _ExampleCache:
    """Tokenized inputs/targets and question representations, keyed by id."""

    def __init__(self, lm: FrozenLM):
        self.lm = lm
        self.inputs: dict[str, list[int]] = {}
        self.targets: dict[str, list[int]] = {}
        self.reprs: dict[str, np.ndarray] = {}

    def get(self, ex: td.QAExample) -> tuple[list[int], list[int], np.ndarray]:
        if ex.id not in self.inputs:
            self.inputs[ex.id] = td.tokenize(td.format_input(ex), self.lm.vocab)
            self.targets[ex.id] = td.tokenize(td.format_target(ex), self.lm.vocab)
            self.reprs[ex.id] = question_repr(self.lm, self.inputs[ex.id])
        return self.inputs[ex.id], self.targets[ex.id], self.reprs[ex.id]


def control_eval(lm: FrozenLM, eval_set: list[td.QAExample]) -> float:
    """Mean no-prompt loss over the eval set; order-independent (fsum)."""
    if not eval_set:
        raise ValueError("eval set must be non-empty")
    losses = []
    for ex in eval_set:
        ids = td.tokenize(td.format_input(ex), lm.vocab)
        tgt = td.tokenize(td.format_target(ex), lm.vocab)
        losses.append(float(lm.loss_with_prompt(None, ids, tgt).data))
    return math.fsum(losses) / len(losses)


def prompted_eval(lm: FrozenLM, predictor: WeightPredictor, basis: PromptBasis,
                  eval_set: list[td.QAExample],
                  cache: _ExampleCache | None = None) -> PromptedEvalResult:
    """Eval-mode prompted losses plus the per-example weight vectors."""
    if not eval_set:
        raise ValueError("eval set must be non-empty")
    cache = cache or _ExampleCache(lm)
    losses: list[float] = []
    weights: list[WeightVector] = []
    for ex in eval_set:
        ids, tgt, q = cache.get(ex)
        w_out = predictor.forward(Tensor(q.reshape(1, -1)), training=False, rng=None)
        wv = WeightVector(w_out.data[0].copy())
        prompt = combine(basis, wv)
        losses.append(float(lm.loss_with_prompt(prompt.tensor, ids, tgt).data))
        weights.append(wv)
    return PromptedEvalResult(mean_loss=math.fsum(losses) / len(losses), weights=weights,
                              losses=losses)


def train(lm: FrozenLM, predictor: WeightPredictor, basis: PromptBasis,
          train_set: list[td.QAExample], eval_set: list[td.QAExample],
          config: TrainConfig) -> RunRecord:
    """Run the full protocol and return the loss-curve record.

    Only predictor parameters receive updates; a non-finite batch loss
    aborts with the offending step index.
    """
    if not lm.frozen:
        raise FrozenContractError("train() requires a frozen language model")
    if not train_set or not eval_set:
        raise ValueError("train and eval sets must be non-empty")
    t_start = time.perf_counter()
    hash_before = lm.param_hash()
    cache = _ExampleCache(lm)
    opt = AdamW(predictor.parameters(), lr=config.lr, beta1=config.beta1,
                beta2=config.beta2, eps=config.eps, weight_decay=config.weight_decay)
    shuffle = rngmod.stream(config.seed, "train-shuffle")
    drop_rng = rngmod.stream(config.seed, "train-dropout")
    record = RunRecord(config=asdict(config), basis_prompts=list(basis.prompts))
    step_index = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(len(train_set))
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[int(i)] for i in order[start:start + config.batch_size]]
            step_index += 1
            loss_sum = None
            for ex in batch:
                ids, tgt, q = cache.get(ex)
                w_out = predictor.forward(Tensor(q.reshape(1, -1)), training=True,
                                          rng=drop_rng)
                prompt = combine(basis, w_out)
                loss = lm.loss_with_prompt(prompt.tensor, ids, tgt)
                loss_sum = loss if loss_sum is None else loss_sum + loss
            batch_loss = loss_sum * (1.0 / len(batch))
            value = float(batch_loss.data)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at step {step_index} "
                                      f"(epoch {epoch})")
            batch_loss.backward()
            opt.step()
            opt.zero_grad()
            record.steps.append(StepRecord(epoch=epoch, step=step_index,
                                           batch_size=len(batch), loss=value))
            epoch_losses.append(value)
            if config.eval_every and step_index % config.eval_every == 0:
                result = prompted_eval(lm, predictor, basis, eval_set, cache)
                record.eval_losses.append([step_index, result.mean_loss])
        record.epoch_means.append(float(np.mean(epoch_losses)))
    final = prompted_eval(lm, predictor, basis, eval_set, cache)
    record.eval_losses.append([step_index, final.mean_loss])
    record.prompted_eval_loss = final.mean_loss
    record.control_eval_loss = control_eval(lm, eval_set)
    record.examples = [
        ExampleEval(id=ex.id, question=td.format_input(ex), loss=loss,
                    weights=[float(x) for x in wv.values])
        for ex, loss, wv in zip(eval_set, final.losses, final.weights)
    ]
    mean_w = np.mean([wv.values for wv in final.weights], axis=0)
    record.projection = [[tok, cos] for tok, cos in
                         project_to_vocab(combine(basis, mean_w), lm)]
    hash_after = lm.param_hash()
    if hash_after != hash_before:
        raise FrozenContractError("frozen LM parameters changed during training")
    record.lm_param_hash = hash_after
    record.wall_clock_seconds = time.perf_counter() - t_start
    return record


def stability_metric(record: RunRecord) -> float:
    """Volatility of the per-epoch mean loss curve: std of its first differences."""
    if len(record.epoch_means) < 2:
        raise ValueError("stability metric needs at least 2 recorded epochs")
    return float(np.std(np.diff(np.asarray(record.epoch_means))))
