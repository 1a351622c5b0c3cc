"""Minibatch training with Adam, per-epoch validation and checkpointing."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt_io
from . import numkernel as nk
from .data import Corpus, DocumentRecord, LabelIndex, split
from .encoder import DEFAULT_DIM, DEFAULT_MIN_COUNT, build_vocab
from .errors import CompatibilityError, NumericalError
from .evalx import METRIC_NAMES, MetricsReport, compute_metrics
from .model import DEFAULT_HIDDEN, MODEL_KINDS, LswModel, ModelConfig

log = logging.getLogger(__name__)

# epochs per model kind, optimizer Adam and minibatch 32 throughout
EPOCHS_ARXIV = {"lsw": 10, "baseline1": 10, "baseline2": 10, "baseline3": 10}
EPOCHS_ELSEVIER = {"lsw": 5, "baseline1": 10, "baseline2": 5, "baseline3": 4}
EPOCH_PROFILES = {"arxiv": EPOCHS_ARXIV, "elsevier": EPOCHS_ELSEVIER}
LEARNING_RATE = 1e-5
LITERAL_EXP_LEARNING_RATE = math.exp(-5)
BATCH_SIZE = 32


@dataclass
class TrainConfig:
    model: str = "lsw"
    lr: float = LEARNING_RATE
    epochs: int | None = None
    batch_size: int = BATCH_SIZE
    seed: int = 0
    d: int = DEFAULT_DIM
    p: int = DEFAULT_HIDDEN
    output: str = "sigmoid"
    mask_empty_sections: bool = False
    weight_head_relu: bool = True
    checkpoint: str | None = None
    profile: str = "arxiv"
    validation_fraction: float = 0.10
    min_count: int = DEFAULT_MIN_COUNT
    threshold: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    sections: str | None = None

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}; expected one of {MODEL_KINDS}")
        if self.profile not in EPOCH_PROFILES:
            raise ValueError(f"unknown epoch profile {self.profile!r}; expected one of {tuple(EPOCH_PROFILES)}")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs is not None and self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    @property
    def resolved_epochs(self) -> int:
        return self.epochs if self.epochs is not None else EPOCH_PROFILES[self.profile][self.model]

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "TrainConfig":
        kinds = {f.name: f for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            out[key] = _coerce(kinds[key].type, raw)
        return cls(**out)

    def to_lines(self) -> str:
        return "".join(f"{k}={'' if v is None else v}\n" for k, v in asdict(self).items())


def _coerce(type_name, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    t = str(type_name)
    if "None" in t and raw in ("", "none", "None"):
        return None
    if t.startswith("bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if t.startswith("int"):
        return int(raw)
    if t.startswith("float"):
        return float(raw)
    return raw


def read_config_file(path) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    metrics: MetricsReport
    seconds: float
    encoder_checksum: str = ""


@dataclass
class TrainResult:
    model: LswModel
    labels: LabelIndex
    adam: nk.AdamState
    logs: list[EpochLog]
    epoch: int
    best_epoch: int | None
    best_micro_f1: float
    initial_encoder_checksum: str
    train_docs: list[DocumentRecord] = field(repr=False, default_factory=list)
    val_docs: list[DocumentRecord] = field(repr=False, default_factory=list)
    meta: dict = field(default_factory=dict)

    def checkpoint(self) -> ckpt_io.Checkpoint:
        training = dict(self.meta, epoch=self.epoch, best_epoch=self.best_epoch, best_micro_f1=self.best_micro_f1)
        return ckpt_io.Checkpoint(self.model, self.labels, self.adam, training)


def last_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".last" + path.suffix)


def write_epoch_csv(logs: Sequence[EpochLog], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("epoch", "train_loss", "val_loss") + METRIC_NAMES + ("seconds",))
        for e in logs:
            m = e.metrics.as_dict()
            w.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.val_loss:.6f}"] + [f"{m[k]:.4f}" for k in METRIC_NAMES] + [f"{e.seconds:.3f}"])


def _section_names(config: TrainConfig, corpus: Corpus) -> tuple[str, ...]:
    if not config.sections:
        return corpus.section_names
    if config.sections.isdigit():
        k = int(config.sections)
        if not 1 <= k <= len(corpus.section_names):
            raise ValueError(f"corpus declares {len(corpus.section_names)} sections, cannot use {k}")
        return corpus.section_names[:k]
    names = tuple(s.strip() for s in config.sections.split(",") if s.strip())
    unknown = [s for s in names if s not in corpus.section_names]
    if unknown:
        raise ValueError(f"sections {unknown} not declared by the corpus {corpus.section_names}")
    return names


def build_model(config: TrainConfig, corpus: Corpus, train_docs: Sequence[DocumentRecord]) -> LswModel:
    names = _section_names(config, corpus)
    vocab = build_vocab((r.sections.get(s, "") for r in train_docs for s in names), config.min_count)
    mcfg = ModelConfig(
        kind=config.model,
        section_names=names,
        n_classes=len(corpus.labels),
        d=config.d,
        p=config.p,
        output=config.output,
        weight_head_relu=config.weight_head_relu,
        mask_empty_sections=config.mask_empty_sections,
    )
    return LswModel(mcfg, vocab, seed=config.seed)


def param_norms(model: LswModel) -> dict[str, float]:
    return {name: float(np.linalg.norm(arr)) for name, arr in model.arrays().items()}


def train_step(model: LswModel, adam: nk.AdamState, docs, targets) -> float:
    """Forward, backward and one Adam update on a single minibatch."""
    groups = model.trainable_groups()
    nk.zero_grad(groups)
    trace = model.forward(docs, targets)
    loss = float(trace.loss.value)
    if not math.isfinite(loss):
        raise NumericalError(
            f"non-finite training loss {loss}",
            batch_ids=[d.id for d in docs],
            param_norms=param_norms(model),
        )
    nk.backward(trace.loss)
    nk.adam_step(groups, adam)
    return loss


def fit_batch(model: LswModel, docs, targets, adam: nk.AdamState, steps: int) -> list[float]:
    """Repeatedly step on one fixed batch; returns the loss before each step."""
    prepared = model.prepare(docs)
    return [train_step(model, adam, prepared, targets) for _ in range(steps)]


def evaluate(model: LswModel, docs, labels: LabelIndex, threshold: float = 0.5) -> tuple[float, MetricsReport]:
    gold = labels.encode_many(docs)
    probs = model.predict_proba(docs)
    loss = model.mean_loss(docs, gold) if len(docs) else 0.0
    return loss, compute_metrics(probs, gold, threshold, labels=labels.names)


def _run_epochs(result: TrainResult, config: TrainConfig, n_epochs: int, seed: int, batch_size: int, threshold: float):
    model, labels = result.model, result.labels
    prepared = model.prepare(result.train_docs)
    targets = labels.encode_many(result.train_docs)
    eval_docs = model.prepare(result.val_docs or result.train_docs)
    eval_source = result.val_docs or result.train_docs
    for _ in range(n_epochs):
        epoch = result.epoch
        t0 = time.perf_counter()
        order = np.random.default_rng([seed, epoch]).permutation(len(prepared))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            total += train_step(model, result.adam, [prepared[i] for i in idx], targets[idx]) * len(idx)
        train_loss = total / len(prepared)
        val_loss = model.mean_loss(eval_docs, labels.encode_many(eval_source))
        metrics = compute_metrics(model.predict_proba(eval_docs), labels.encode_many(eval_source), threshold, labels=labels.names)
        result.epoch += 1
        entry = EpochLog(result.epoch, train_loss, val_loss, metrics, time.perf_counter() - t0, model.encoder.checksum())
        result.logs.append(entry)
        log.info(
            "epoch %d train_loss=%.5f val_loss=%.5f micro_f1=%.4f macro_f1=%.4f",
            entry.epoch, train_loss, val_loss, metrics.micro_f1, metrics.macro_f1,
        )
        improved = metrics.micro_f1 > result.best_micro_f1
        if improved:
            result.best_micro_f1 = metrics.micro_f1
            result.best_epoch = result.epoch
        if config.checkpoint:
            if improved:
                ckpt_io.save(result.checkpoint(), config.checkpoint)
            ckpt_io.save(result.checkpoint(), last_path(config.checkpoint))


def train(config: TrainConfig, corpus: Corpus) -> TrainResult:
    """Split ``corpus``, build a fresh model and train it for the configured epochs."""
    train_docs, val_docs = split(corpus.records, config.validation_fraction, config.seed)
    model = build_model(config, corpus, train_docs)
    adam = nk.AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    meta = {
        "seed": config.seed,
        "validation_fraction": config.validation_fraction,
        "batch_size": config.batch_size,
        "min_count": config.min_count,
        "threshold": config.threshold,
    }
    result = TrainResult(
        model, corpus.labels, adam, [], 0, None, -1.0, model.encoder.checksum(), train_docs, val_docs, meta
    )
    _run_epochs(result, config, config.resolved_epochs, config.seed, config.batch_size, config.threshold)
    return result


def check_compatible(stored: ckpt_io.Checkpoint, config: TrainConfig, corpus: Corpus) -> None:
    cfg = stored.model.config
    wanted = {
        "model kind": (cfg.kind, config.model),
        "d": (cfg.d, config.d),
        "p": (cfg.p, config.p),
        "m": (cfg.n_classes, len(corpus.labels)),
        "K": (cfg.n_sections, len(_section_names(config, corpus))),
    }
    for name, (have, want) in wanted.items():
        if have != want:
            raise CompatibilityError(f"checkpoint {name} is {have}, run requests {want}")
    if tuple(stored.labels.names) != tuple(corpus.labels.names):
        raise CompatibilityError("checkpoint label space differs from the corpus label space")


def resume(checkpoint, corpus: Corpus, config: TrainConfig) -> TrainResult:
    """Continue training from a checkpoint for ``config.resolved_epochs`` more epochs.

    Split seed, batch size and threshold come from the checkpoint so the
    continued run replays the original schedule.
    """
    stored = checkpoint if isinstance(checkpoint, ckpt_io.Checkpoint) else ckpt_io.load(checkpoint)
    check_compatible(stored, config, corpus)
    if stored.adam is None:
        raise CompatibilityError("checkpoint carries no optimizer state")
    meta = {k: v for k, v in stored.training.items() if k not in ("epoch", "best_epoch", "best_micro_f1")}
    seed = meta.get("seed", config.seed)
    train_docs, val_docs = split(corpus.records, meta.get("validation_fraction", config.validation_fraction), seed)
    result = TrainResult(
        stored.model,
        stored.labels,
        stored.adam,
        [],
        int(stored.training.get("epoch", 0)),
        stored.training.get("best_epoch"),
        float(stored.training.get("best_micro_f1", -1.0)),
        stored.model.encoder.checksum(),
        train_docs,
        val_docs,
        meta,
    )
    if config.checkpoint and config.resolved_epochs == 0:
        ckpt_io.save(result.checkpoint(), last_path(config.checkpoint))
    _run_epochs(
        result,
        config,
        config.resolved_epochs,
        seed,
        int(meta.get("batch_size", config.batch_size)),
        float(meta.get("threshold", config.threshold)),
    )
    return result
