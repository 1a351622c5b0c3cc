"""Finite-difference and brute-force oracles shared by the test modules."""

import numpy as np

from lsw.data import DocumentRecord, LabelIndex
from lsw.encoder import build_vocab
from lsw.model import LswModel, ModelConfig

FD_STEP = 1e-5
REL_FLOOR = 1e-6


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def central_difference(f, arr, h=FD_STEP):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        up = f()
        arr[i] = orig - h
        down = f()
        arr[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def model_gradcheck(model, docs, targets, h=FD_STEP):
    """Max relative error per parameter array between backward() and central differences."""
    from lsw import numkernel as nk

    groups = model.param_groups()
    nk.zero_grad(groups)
    trace = model.forward(docs, targets)
    nk.backward(trace.loss)
    analytic = {}
    for g in groups:
        analytic[f"{g.name}.weight"] = g.grad_weight.copy()
        if g.bias is not None:
            analytic[f"{g.name}.bias"] = g.grad_bias.copy()

    loss = lambda: float(model.forward(docs, targets).loss.value)  # noqa: E731
    errors = {}
    for name, arr in model.arrays().items():
        numeric = central_difference(loss, arr, h)
        errors[name] = (float(relative_error(analytic[name], numeric).max()), analytic[name], numeric)
    return errors


def tiny_corpus(n_docs=6, vocab_tokens=48, sections=("abstract", "title", "keywords"), n_classes=5, seed=0, length=6):
    rng = np.random.default_rng(seed)
    words = [f"t{i}" for i in range(vocab_tokens)]
    labels = [f"l{j}" for j in range(n_classes)]
    docs = []
    for i in range(n_docs):
        secs = {s: " ".join(rng.choice(words, size=length)) for s in sections}
        labs = tuple(sorted(rng.choice(labels, size=int(rng.integers(1, 3)), replace=False)))
        docs.append(DocumentRecord(f"d{i}", secs, labs))
    return docs, words, LabelIndex(labels)


def tiny_model(kind="lsw", d=8, p=4, n_classes=5, sections=("abstract", "title", "keywords"), seed=0, vocab_tokens=48, **kw):
    vocab = build_vocab([" ".join(f"t{i}" for i in range(vocab_tokens))], min_count=1)
    cfg = ModelConfig(kind=kind, section_names=sections, n_classes=n_classes, d=d, p=p, **kw)
    return LswModel(cfg, vocab, seed=seed)


def brute_force_metrics(pred, gold):
    """Confusion counts by nested loops, then the six metrics with 0/0 -> 0."""
    n, m = len(gold), len(gold[0]) if len(gold) else 0
    tp = [0] * m
    fp = [0] * m
    fn = [0] * m
    for i in range(n):
        for j in range(m):
            if pred[i][j] and gold[i][j]:
                tp[j] += 1
            elif pred[i][j] and not gold[i][j]:
                fp[j] += 1
            elif not pred[i][j] and gold[i][j]:
                fn[j] += 1

    def div(a, b):
        return a / b if b else 0.0

    def f1(p, r):
        return 2.0 * p * r / (p + r) if p + r else 0.0

    TP, FP, FN = sum(tp), sum(fp), sum(fn)
    micro_p, micro_r = div(TP, TP + FP), div(TP, TP + FN)
    ps = [div(tp[j], tp[j] + fp[j]) for j in range(m)]
    rs = [div(tp[j], tp[j] + fn[j]) for j in range(m)]
    fs = [f1(ps[j], rs[j]) for j in range(m)]
    return {
        "macro_f1": sum(fs) / m,
        "macro_precision": sum(ps) / m,
        "macro_recall": sum(rs) / m,
        "micro_f1": f1(micro_p, micro_r),
        "micro_precision": micro_p,
        "micro_recall": micro_r,
        "tp": tp,
        "fp": fp,
        "fn": fn,
    }
