"""Optimization loop: Noam-scheduled Adam updates, the four training regimes
(base, pretrain, auxiliary, auxiliary+pretrain), evaluation, and versioned
binary checkpoints with bit-exact resume."""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field, asdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import heads, tensor as T
from .errors import CheckpointError, ConfigError, ContractError, NumericError
from .metrics import MetricsReport, full_report
from .model import Model, ModelConfig, encode_note
from .tensor import Tape, Tensor
from .tokenizer import BpeModel, Preprocessor, tokenizer_hash


@dataclass
class NoamSchedule:
    d_model: int
    warmup_steps: int = 8000
    scale: float = 1.0

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ConfigError(f"warmup_steps must be >= 1, got {self.warmup_steps}")


def noam_lr(schedule: NoamSchedule, step: int) -> float:
    """scale * d^-1/2 * min(step^-1/2, step * warmup^-3/2); peak at warmup."""
    if step < 1:
        raise ContractError(f"step must be >= 1, got {step}")
    return (
        schedule.scale
        * schedule.d_model ** -0.5
        * min(step ** -0.5, step * schedule.warmup_steps ** -1.5)
    )


@dataclass
class TrainConfig:
    epochs: int = 10
    dropout: float = 0.1
    batch_size: int = 5
    regime: str = "base"  # base | pretrain | auxiliary | auxiliary+pretrain
    lam: float = 0.5
    seed: int = 0
    warmup_steps: int = 8000
    lr_scale: float = 1.0
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.regime not in ("base", "pretrain", "auxiliary", "auxiliary+pretrain"):
            raise ConfigError(f"unknown regime '{self.regime}'")


REGIMES = ("base", "pretrain", "auxiliary", "auxiliary+pretrain")


# ---------------------------------------------------------------------------
# Adam with bias correction (beta1=0.9, beta2=0.98, eps=1e-9)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Dict[str, Tensor],
    state: AdamState,
    lr: float,
    clip_norm: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> None:
    """In-place update of every parameter that received a gradient."""
    names = [n for n, p in params.items() if p.grad is not None]
    for n in names:
        if not np.isfinite(params[n].grad).all():
            raise NumericError(f"non-finite gradient for parameter '{n}'")
    if clip_norm > 0.0 and names:
        total = math.sqrt(sum(float((params[n].grad ** 2).sum()) for n in names))
        if total > clip_norm:
            factor = clip_norm / total
            for n in names:
                params[n].grad *= factor
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for n in names:
        g = params[n].grad
        if n not in state.m:
            state.m[n] = np.zeros_like(g)
            state.v[n] = np.zeros_like(g)
        state.m[n] = beta1 * state.m[n] + (1.0 - beta1) * g
        state.v[n] = beta2 * state.v[n] + (1.0 - beta2) * g * g
        m_hat = state.m[n] / bc1
        v_hat = state.v[n] / bc2
        params[n].data -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# checkpoint container and binary format (magic SQC1, little-endian)

_MAGIC = b"SQC1"
_VERSION = 1
_DTYPES = {0: np.float64, 1: np.float32}
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


@dataclass
class Checkpoint:
    config: ModelConfig
    tokenizer_hash: str
    labels: List[str]
    step: int
    params: Dict[str, np.ndarray]
    opt_m: Dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: Dict[str, np.ndarray] = field(default_factory=dict)
    opt_t: int = 0
    rng_state: Optional[dict] = None


def snapshot(model: Model, tok_hash: str, labels: Sequence[str], step: int,
             opt: Optional[AdamState] = None,
             rng: Optional[np.random.Generator] = None) -> Checkpoint:
    return Checkpoint(
        config=model.config,
        tokenizer_hash=tok_hash,
        labels=list(labels),
        step=step,
        params={n: p.data.copy() for n, p in model.params.items()},
        opt_m={n: a.copy() for n, a in (opt.m if opt else {}).items()},
        opt_v={n: a.copy() for n, a in (opt.v if opt else {}).items()},
        opt_t=opt.t if opt else 0,
        rng_state=rng.bit_generator.state if rng is not None else None,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    params = {n: Tensor(a.copy(), requires_grad=True) for n, a in ckpt.params.items()}
    return Model(ckpt.config, params)


def _write_array(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    buf.write(struct.pack("<H", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<I", dim))
    raw = np.ascontiguousarray(arr).astype(arr.dtype, copy=False).tobytes()
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)


def _read_array(fh) -> Tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<H", fh.read(2))
    name = fh.read(nlen).decode("utf-8")
    code, ndim = struct.unpack("<BB", fh.read(2))
    if code not in _DTYPES:
        raise CheckpointError(f"parameter table: unknown dtype code {code} for '{name}'")
    shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
    (nbytes,) = struct.unpack("<Q", fh.read(8))
    raw = fh.read(nbytes)
    arr = np.frombuffer(raw, dtype=_DTYPES[code]).reshape(shape).copy()
    return name, arr


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = {
        "model_config": json.loads(ckpt.config.to_json()),
        "tokenizer_hash": ckpt.tokenizer_hash,
        "labels": ckpt.labels,
        "step": ckpt.step,
        "opt_t": ckpt.opt_t,
        "rng_state": ckpt.rng_state,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    buf.write(struct.pack("<I", len(hb)))
    buf.write(hb)
    entries = list(ckpt.params.items())
    entries += [("opt.m." + n, a) for n, a in ckpt.opt_m.items()]
    entries += [("opt.v." + n, a) for n, a in ckpt.opt_v.items()]
    buf.write(struct.pack("<I", len(entries)))
    for name, arr in entries:
        _write_array(buf, name, arr)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise CheckpointError(f"{path}: unsupported version {version} (expected {_VERSION})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt header ({e})") from None
        (n_entries,) = struct.unpack("<I", fh.read(4))
        params: Dict[str, np.ndarray] = {}
        opt_m: Dict[str, np.ndarray] = {}
        opt_v: Dict[str, np.ndarray] = {}
        for _ in range(n_entries):
            name, arr = _read_array(fh)
            if name.startswith("opt.m."):
                opt_m[name[6:]] = arr
            elif name.startswith("opt.v."):
                opt_v[name[6:]] = arr
            else:
                params[name] = arr
    config = ModelConfig(**header["model_config"])
    return Checkpoint(
        config=config,
        tokenizer_hash=header["tokenizer_hash"],
        labels=header["labels"],
        step=header["step"],
        params=params,
        opt_m=opt_m,
        opt_v=opt_v,
        opt_t=header["opt_t"],
        rng_state=header["rng_state"],
    )


def load_pretrained_encoder(model: Model, ckpt: Checkpoint) -> None:
    """Copy encoder weights and embedding table (plus LM head) from a
    pretraining checkpoint; classifier head parameters stay fresh."""
    for name, arr in ckpt.params.items():
        if name.startswith(("pool", "cls_")):
            continue
        if name in model.params:
            if model.params[name].data.shape != arr.shape:
                raise CheckpointError(f"pretrained parameter '{name}' has shape {arr.shape}, "
                                      f"model expects {model.params[name].data.shape}")
            model.params[name].data = arr.copy()


# ---------------------------------------------------------------------------
# training loops


def _batches(n_items: int, batch_size: int, seed: int, epoch: int):
    """Deterministic per-epoch shuffling; a pure function of (seed, epoch)."""
    order = np.random.default_rng([seed, epoch]).permutation(n_items)
    for start in range(0, n_items, batch_size):
        yield order[start : start + batch_size]


def corpus_perplexity(model: Model, framed: Sequence[Sequence[int]]) -> float:
    """exp of the corpus-level mean per-token NLL."""
    total_nll = 0.0
    total_tokens = 0
    for ids in framed:
        if len(ids) < 2:
            continue
        with Tape():
            nll = model.lm_nll(ids)
        n = len(ids) - 1
        total_nll += float(nll.data) * n
        total_tokens += n
    if total_tokens == 0:
        raise ContractError("no scorable tokens in corpus")
    return math.exp(total_nll / total_tokens)


LogFn = Callable[[dict], None]


def pretrain_lm(
    model: Model,
    bpe: BpeModel,
    framed_train: Sequence[Sequence[int]],
    framed_heldout: Sequence[Sequence[int]],
    cfg: TrainConfig,
    labels: Sequence[str] = (),
    log: Optional[LogFn] = None,
) -> Checkpoint:
    """Minimize the LM NLL over shuffled mini-batches; logs held-out
    perplexity per epoch; aborts with the last good checkpoint on NaN loss."""
    tok_hash = tokenizer_hash(bpe)
    schedule = NoamSchedule(model.config.d, cfg.warmup_steps, cfg.lr_scale)
    opt = AdamState()
    rng = np.random.default_rng(cfg.seed)
    items = [ids for ids in framed_train if len(ids) >= 2]
    if not items:
        raise ContractError("pretraining corpus has no scorable sequences")
    step = 0
    good = snapshot(model, tok_hash, labels, step, opt, rng)
    for epoch in range(cfg.epochs):
        for batch in _batches(len(items), cfg.batch_size, cfg.seed, epoch):
            with Tape() as tape:
                losses = [
                    model.lm_nll(items[i], rng=rng, training=True) for i in batch
                ]
                loss = T.scale(_sum(losses), 1.0 / len(batch))
                if not np.isfinite(loss.data):
                    return good
                step += 1
                tape.backward(loss)
            lr = noam_lr(schedule, step)
            adam_step(model.params, opt, lr, cfg.clip_norm)
            model.zero_grads()
            if log:
                log({"step": step, "epoch": epoch, "lr": lr, "loss": float(loss.data)})
        if framed_heldout:
            ppl = corpus_perplexity(model, framed_heldout)
            if log:
                log({"step": step, "epoch": epoch, "heldout_ppl": ppl})
        good = snapshot(model, tok_hash, labels, step, opt, rng)
    return good


def _sum(tensors: List[Tensor]) -> Tensor:
    out = tensors[0]
    for t in tensors[1:]:
        out = T.add(out, t)
    return out


def train_classifier(
    model: Model,
    bpe: BpeModel,
    framed_train: Sequence[Tuple[Sequence[int], np.ndarray]],
    framed_valid: Sequence[Tuple[Sequence[int], np.ndarray]],
    labels: Sequence[str],
    cfg: TrainConfig,
    pretrain_ckpt: Optional[Checkpoint] = None,
    log: Optional[LogFn] = None,
    resume: Optional[Checkpoint] = None,
) -> Checkpoint:
    """Supervised training under one of the four regimes. Items are
    (framed ids, binary label vector) pairs. Returns the checkpoint with the
    best validation micro-F1 (final checkpoint if no validation set)."""
    if not framed_train:
        raise ContractError("labeled corpus is empty")
    if cfg.regime in ("pretrain", "auxiliary+pretrain") and pretrain_ckpt is not None:
        load_pretrained_encoder(model, pretrain_ckpt)
    auxiliary = cfg.regime in ("auxiliary", "auxiliary+pretrain")
    tok_hash = tokenizer_hash(bpe)
    schedule = NoamSchedule(model.config.d, cfg.warmup_steps, cfg.lr_scale)
    opt = AdamState()
    rng = np.random.default_rng(cfg.seed)
    step = 0
    start_epoch = 0
    if resume is not None:
        for n, a in resume.params.items():
            model.params[n].data = a.copy()
        opt.m = {n: a.copy() for n, a in resume.opt_m.items()}
        opt.v = {n: a.copy() for n, a in resume.opt_v.items()}
        opt.t = resume.opt_t
        step = resume.step
        if resume.rng_state is not None:
            rng.bit_generator.state = resume.rng_state
        steps_per_epoch = math.ceil(len(framed_train) / cfg.batch_size)
        start_epoch = step // steps_per_epoch
    best: Optional[Checkpoint] = None
    best_f1 = -1.0
    last = snapshot(model, tok_hash, labels, step, opt, rng)
    for epoch in range(start_epoch, cfg.epochs):
        for batch in _batches(len(framed_train), cfg.batch_size, cfg.seed, epoch):
            with Tape() as tape:
                losses = []
                for i in batch:
                    ids, y = framed_train[i]
                    h = model.encode(ids, rng=rng, training=True)
                    c = heads.attention_pool(model.params, h, None, model.config.n_pool)
                    p = heads.label_probs(model.params, c)
                    loss_i = heads.bce_loss(p, y.reshape(1, -1))
                    if auxiliary and len(ids) >= 2:
                        nll = heads.lm_loss(model.params, h, ids)
                        loss_i = T.add(loss_i, T.scale(nll, cfg.lam))
                    losses.append(loss_i)
                loss = T.scale(_sum(losses), 1.0 / len(batch))
                if not np.isfinite(loss.data):
                    return best if best is not None else last
                step += 1
                tape.backward(loss)
            lr = noam_lr(schedule, step)
            adam_step(model.params, opt, lr, cfg.clip_norm)
            model.zero_grads()
            if log:
                log({"step": step, "epoch": epoch, "lr": lr, "loss": float(loss.data)})
        last = snapshot(model, tok_hash, labels, step, opt, rng)
        if framed_valid:
            report = evaluate_framed(model, framed_valid, labels)
            if log:
                log({"step": step, "epoch": epoch, "valid_micro_f1": report.micro_f1,
                     "valid_em": report.em})
            if report.micro_f1 > best_f1:
                best_f1 = report.micro_f1
                best = last
    return best if best is not None else last


def evaluate_framed(
    model: Model,
    framed: Sequence[Tuple[Sequence[int], np.ndarray]],
    labels: Sequence[str],
    top_k: int = 0,
) -> MetricsReport:
    preds = []
    golds = []
    for ids, y in framed:
        with Tape():
            probs = model.classify(ids).data[0]
        preds.append({labels[j] for j in np.flatnonzero(probs >= model.config.threshold)})
        golds.append({labels[j] for j in np.flatnonzero(y > 0)})
    return full_report(preds, golds, labels, top_k=top_k)


def evaluate(
    ckpt: Checkpoint,
    bpe: BpeModel,
    pre: Preprocessor,
    records,
    top_k: int = 0,
) -> MetricsReport:
    """Deterministic evaluation of a checkpoint on labeled records."""
    if tokenizer_hash(bpe) != ckpt.tokenizer_hash:
        raise CheckpointError("tokenizer hash does not match checkpoint")
    model = model_from_checkpoint(ckpt)
    labels = ckpt.labels
    framed = [(encode_note(r.text, bpe, pre), _label_vector(r.labels, labels)) for r in records]
    return evaluate_framed(model, framed, labels, top_k=top_k)


def _label_vector(note_labels, labels: Sequence[str]) -> np.ndarray:
    from .errors import DataError

    y = np.zeros(len(labels))
    for lab in note_labels:
        if lab not in labels:
            raise DataError(f"label '{lab}' not in the model's label map")
        y[labels.index(lab)] = 1.0
    return y


def frame_labeled(records, bpe: BpeModel, pre: Preprocessor, labels: Sequence[str]):
    return [(encode_note(r.text, bpe, pre), _label_vector(r.labels, labels)) for r in records]


def frame_unlabeled(records, bpe: BpeModel, pre: Preprocessor):
    return [encode_note(r.text, bpe, pre) for r in records]
