"""Section-weighted classifier and the three comparison models.

All four kinds share the encoder and a two-layer classifier ``d -> p -> m``:

``lsw``
    w = softmax_k(relu(g(relu(f(cls_k))))), y = sum_k w_k cls_k
``baseline1``
    y = mean_k cls_k (no weight head)
``baseline2``
    y = concat_k cls_k, so the classifier input is ``K*d``
``baseline3``
    baseline1 with the encoder frozen
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import numkernel as nk
from .data import DocumentRecord
from .encoder import DEFAULT_DIM, Encoder, SectionVector, Vocab, param_rng
from .errors import NoSectionWeightsError, ShapeError

MODEL_KINDS = ("lsw", "baseline1", "baseline2", "baseline3")
OUTPUTS = ("sigmoid", "softmax")
DEFAULT_HIDDEN = 32
REFERENCE_HIDDEN = 256


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    section_names: tuple[str, ...]
    n_classes: int
    d: int = DEFAULT_DIM
    p: int = DEFAULT_HIDDEN
    output: str = "sigmoid"
    weight_head_relu: bool = True
    mask_empty_sections: bool = False

    def __post_init__(self):
        object.__setattr__(self, "section_names", tuple(self.section_names))
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output activation {self.output!r}; expected one of {OUTPUTS}")
        if len(self.section_names) < 1:
            raise ValueError("a model needs at least one section")
        if len(set(self.section_names)) != len(self.section_names):
            raise ValueError(f"duplicate section names in {self.section_names}")
        if self.n_classes < 1 or self.d < 1 or self.p < 1:
            raise ValueError("n_classes, d and p must be positive")

    @property
    def n_sections(self) -> int:
        return len(self.section_names)

    @property
    def classifier_input_dim(self) -> int:
        return self.n_sections * self.d if self.kind == "baseline2" else self.d

    @property
    def has_section_weights(self) -> bool:
        return self.kind == "lsw"


@dataclass
class PreparedDoc:
    id: str
    section_ids: tuple[np.ndarray, ...]


@dataclass
class ForwardTrace:
    """Arrays from one forward pass; leading axis is the document batch."""

    cls: np.ndarray
    fused: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray
    weight_logits: np.ndarray | None = None
    weights: np.ndarray | None = None
    loss: nk.Node | None = None

    def single(self) -> "ForwardTrace":
        pick = lambda a: None if a is None else a[0]  # noqa: E731
        return ForwardTrace(
            pick(self.cls),
            pick(self.fused),
            pick(self.logits),
            pick(self.probabilities),
            pick(self.weight_logits),
            pick(self.weights),
            self.loss,
        )


class LswModel:
    def __init__(self, config: ModelConfig, vocab: Vocab, seed: int = 0):
        self.config = config
        self.seed = seed
        d, p = config.d, config.p
        self.encoder = Encoder(vocab, d=d, seed=seed, frozen=config.kind == "baseline3")
        self.f_theta = self.g_eta = None
        if config.has_section_weights:
            self.f_theta = _layer(seed, "weight_head.f_theta", d, p)
            self.g_eta = _layer(seed, "weight_head.g_eta", p, 1)
        self.hidden = _layer(seed, "classifier.hidden", config.classifier_input_dim, p)
        self.output = _layer(seed, "classifier.output", p, config.n_classes)

    @property
    def vocab(self) -> Vocab:
        return self.encoder.vocab

    def param_groups(self) -> list[nk.ParamGroup]:
        groups = self.encoder.param_groups()
        if self.f_theta is not None:
            groups += [self.f_theta, self.g_eta]
        return groups + [self.hidden, self.output]

    def trainable_groups(self) -> list[nk.ParamGroup]:
        return [g for g in self.param_groups() if not g.frozen]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for g in self.param_groups():
            out.update(g.arrays())
        return out

    # -- inputs ------------------------------------------------------------

    def prepare(self, docs: Sequence[DocumentRecord | PreparedDoc]) -> list[PreparedDoc]:
        out = []
        for doc in docs:
            if isinstance(doc, PreparedDoc):
                if len(doc.section_ids) != self.config.n_sections:
                    raise ShapeError(f"document {doc.id} has {len(doc.section_ids)} sections, model expects {self.config.n_sections}")
                out.append(doc)
                continue
            missing = [s for s in self.config.section_names if s not in doc.sections]
            if missing:
                raise ShapeError(f"document {doc.id} lacks declared sections {missing}")
            ids = tuple(self.encoder.token_ids(doc.sections[s]) for s in self.config.section_names)
            out.append(PreparedDoc(doc.id, ids))
        return out

    # -- pieces ------------------------------------------------------------

    def encode(self, prepared: Sequence[PreparedDoc]) -> nk.Node:
        K = self.config.n_sections
        flat = self.encoder.encode_ids([ids for doc in prepared for ids in doc.section_ids])
        return nk.reshape(flat, (len(prepared), K, self.config.d))

    def weight_head(self, cls: nk.Node, mask=None) -> tuple[nk.Node, nk.Node]:
        """Section scores and softmax weights for ``cls`` of shape ``(..., K, d)``."""
        if self.f_theta is None:
            raise NoSectionWeightsError()
        if cls.value.shape[-2] == 0:
            raise ShapeError("section weights need at least one section")
        h = nk.relu(nk.dense_forward(self.f_theta, cls))
        s = nk.dense_forward(self.g_eta, h)
        if self.config.weight_head_relu:
            s = nk.relu(s)
        scores = nk.reshape(s, s.value.shape[:-1])
        return scores, nk.softmax(scores, mask=mask)

    def classifier_logits(self, y) -> nk.Node:
        return nk.dense_forward(self.output, nk.relu(nk.dense_forward(self.hidden, y)))

    def activate(self, logits: nk.Node) -> nk.Node:
        return nk.sigmoid(logits) if self.config.output == "sigmoid" else nk.softmax(logits)

    # -- full passes -------------------------------------------------------

    def forward(self, docs, targets=None, kind: str | None = None) -> ForwardTrace:
        """Run ``docs`` through the network.

        ``kind`` overrides the configured pooling (e.g. evaluating an LSW
        model with the mean pooling of baseline 1). With ``targets`` the
        trace carries a scalar BCE loss node ready for :func:`nk.backward`.
        """
        kind = kind or self.config.kind
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        prepared = self.prepare(docs)
        if not prepared:
            raise ShapeError("forward needs at least one document")
        cls = self.encode(prepared)
        scores = weights = None
        if kind == "lsw":
            mask = None
            if self.config.mask_empty_sections:
                mask = np.array([[len(ids) > 0 for ids in d.section_ids] for d in prepared])
            scores, weights = self.weight_head(cls, mask)
            fused = nk.weighted_sum(weights, cls)
        elif kind == "baseline2":
            fused = nk.reshape(cls, (len(prepared), self.config.n_sections * self.config.d))
        else:
            fused = nk.mean(cls, axis=1)
        logits = self.classifier_logits(fused)
        probs = self.activate(logits)
        loss = None
        if targets is not None:
            targets = np.asarray(targets, dtype=float).reshape(logits.value.shape)
            if self.config.output == "sigmoid":
                loss = nk.sigmoid_bce(logits, targets)
            else:
                loss = nk.probability_bce(probs, targets)
        return ForwardTrace(
            cls=cls.value,
            fused=fused.value,
            logits=logits.value,
            probabilities=probs.value,
            weight_logits=None if scores is None else scores.value,
            weights=None if weights is None else weights.value,
            loss=loss,
        )

    def predict_proba(self, docs, batch_size: int = 256) -> np.ndarray:
        prepared = self.prepare(docs)
        out = [self.forward(prepared[i : i + batch_size]).probabilities for i in range(0, len(prepared), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.config.n_classes))

    def section_weights_of(self, docs, batch_size: int = 256) -> np.ndarray:
        if not self.config.has_section_weights:
            raise NoSectionWeightsError()
        prepared = self.prepare(docs)
        out = [self.forward(prepared[i : i + batch_size]).weights for i in range(0, len(prepared), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.config.n_sections))

    def mean_loss(self, docs, targets, batch_size: int = 256) -> float:
        prepared = self.prepare(docs)
        targets = np.asarray(targets, dtype=float)
        total = 0.0
        for i in range(0, len(prepared), batch_size):
            chunk = prepared[i : i + batch_size]
            total += float(self.forward(chunk, targets[i : i + batch_size]).loss.value) * len(chunk)
        return total / max(len(prepared), 1)


def _layer(seed: int, name: str, fan_in: int, fan_out: int) -> nk.ParamGroup:
    return nk.ParamGroup(name, nk.glorot_uniform(param_rng(seed, name), fan_out, fan_in), np.zeros(fan_out))


def _stack(cls) -> np.ndarray:
    rows = [c.values if isinstance(c, SectionVector) else np.asarray(c, dtype=float) for c in cls]
    if not rows:
        raise ShapeError("need at least one section vector")
    lengths = {r.shape for r in rows}
    if len(lengths) != 1:
        raise ShapeError(f"section vectors have differing shapes {sorted(lengths)}")
    return np.stack(rows)


def section_weights(cls, model: LswModel) -> np.ndarray:
    """Softmax section weights for one document's K section vectors."""
    stacked = _stack(cls)
    if stacked.shape[1] != model.config.d:
        raise ShapeError(f"section vectors have length {stacked.shape[1]}, model expects d={model.config.d}")
    return model.weight_head(nk.constant(stacked))[1].value


def fuse(cls, weights) -> np.ndarray:
    stacked = _stack(cls)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (stacked.shape[0],):
        raise ShapeError(f"{weights.shape[0] if weights.ndim else 0} weights for {stacked.shape[0]} sections")
    return nk.weighted_sum(weights, stacked).value


def classify(y, model: LswModel) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (model.config.classifier_input_dim,):
        raise ShapeError(f"classifier input has shape {y.shape}, expected ({model.config.classifier_input_dim},)")
    return model.activate(model.classifier_logits(y)).value


def forward_lsw(doc: DocumentRecord, model: LswModel) -> ForwardTrace:
    return model.forward([doc], kind="lsw").single()


def forward_baseline1(doc: DocumentRecord, model: LswModel) -> np.ndarray:
    return model.forward([doc], kind="baseline1").probabilities[0]


def forward_baseline2(doc: DocumentRecord, model: LswModel) -> np.ndarray:
    return model.forward([doc], kind="baseline2").probabilities[0]


def forward_baseline3(doc: DocumentRecord, model: LswModel) -> np.ndarray:
    # same computation as baseline 1; the frozen encoder only matters when training
    return forward_baseline1(doc, model)


def with_kind(config: ModelConfig, kind: str) -> ModelConfig:
    return replace(config, kind=kind)
