"""Skip-gram with negative sampling, trained from scratch.

The inner loop is a numba kernel released from the GIL. Single-worker training
with a fixed seed is bit-reproducible. With several workers, threads update the
shared matrices without locking (Hogwild style), so results are only
statistically reproducible.

:func:`sgns_loss` and :func:`sgns_grad` give the per-pair objective in float64
NumPy. The kernel's :func:`_sgns_update` applies one gradient step on the same
objective.
"""
from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numba
import numpy as np

from .errors import (
    CorruptModel,
    DegenerateVocabulary,
    EmptyCorpus,
    UnknownTerm,
    ValidationError,
    VersionMismatch,
    ZeroVector,
)

log = logging.getLogger(__name__)

MAGIC = b"OPLXSGNS"
FORMAT_VERSION = 1
NOISE_EXPONENT = 0.75


@dataclass(frozen=True)
class EmbeddingParams:
    min_term_count: int = 5
    vector_size: int = 256
    context_window: int = 5
    negative_samples: int = 10
    epochs: int = 200
    initial_learning_rate: float = 0.025
    subsample_threshold: float = 1e-3
    rng_seed: int = 1

    def __post_init__(self):
        if self.vector_size < 1:
            raise ValidationError("vector_size must be >= 1")
        if self.negative_samples < 1:
            raise ValidationError("negative_samples must be >= 1")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.context_window < 1:
            raise ValidationError("context_window must be >= 1")
        if self.min_term_count < 1:
            raise ValidationError("min_term_count must be >= 1")
        if not self.initial_learning_rate > 0:
            raise ValidationError("initial_learning_rate must be positive")
        if self.subsample_threshold < 0:
            raise ValidationError("subsample_threshold must be >= 0")


@dataclass
class EmbeddingModel:
    vocabulary: dict
    counts: np.ndarray
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    params: EmbeddingParams
    loss_history: list = field(default_factory=list)

    @property
    def terms(self) -> list:
        return sorted(self.vocabulary, key=self.vocabulary.__getitem__)

    def __len__(self):
        return len(self.vocabulary)

    def vector(self, term: str) -> np.ndarray:
        try:
            return self.input_vectors[self.vocabulary[term]]
        except KeyError:
            raise UnknownTerm(f"{term!r} not in model vocabulary") from None


# -- reference objective ---------------------------------------------------


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sgns_loss(center: np.ndarray, context: np.ndarray, noise: np.ndarray) -> float:
    """Negative log-likelihood of one (center, context) pair with noise terms.

    ``center`` is the center term's input vector, ``context`` the context
    term's output vector and ``noise`` a (k, d) stack of noise output vectors.
    """
    return float(-_log_sigmoid(context @ center) - _log_sigmoid(-(noise @ center)).sum())


def sgns_grad(center, context, noise):
    """Gradients of :func:`sgns_loss` w.r.t. center, context and noise vectors."""
    s_pos = _sigmoid(context @ center)
    s_neg = _sigmoid(noise @ center)
    g_center = -(1.0 - s_pos) * context + s_neg @ noise
    g_context = -(1.0 - s_pos) * center
    g_noise = s_neg[:, None] * center[None, :]
    return g_center, g_context, g_noise


# -- numba kernel ----------------------------------------------------------


@numba.njit(nogil=True, cache=True)
def _lcg(state):
    return state * numba.uint64(25214903917) + numba.uint64(11)


@numba.njit(nogil=True, cache=True)
def _uniform(state):
    return float(state >> numba.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(nogil=True, cache=True)
def _softplus(x):
    # log(1 + exp(x)), stable
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@numba.njit(nogil=True, cache=True)
def _sgns_update(win, wout, center, targets, n_targets, lr, grad_buf):
    """One SGD step for a center term; targets[0] is the positive context.

    Returns the pair loss before the step.
    """
    d = win.shape[1]
    for k in range(d):
        grad_buf[k] = 0.0
    loss = 0.0
    for t in range(n_targets):
        tgt = targets[t]
        f = 0.0
        for k in range(d):
            f += win[center, k] * wout[tgt, k]
        if t == 0:
            label = 1.0
            loss += _softplus(-f)
        else:
            label = 0.0
            loss += _softplus(f)
        g = (label - 1.0 / (1.0 + math.exp(-f))) * lr
        for k in range(d):
            grad_buf[k] += g * wout[tgt, k]
            wout[tgt, k] += g * win[center, k]
    for k in range(d):
        win[center, k] += grad_buf[k]
    return loss


@numba.njit(nogil=True, cache=True)
def _train_chunk(
    tokens, offsets, s_lo, s_hi, win, wout, noise_cdf, keep_prob,
    window, negative, lr0, words_done, total_words, state,
):
    d = win.shape[1]
    grad_buf = np.zeros(d, dtype=win.dtype)
    max_len = 0
    for s in range(s_lo, s_hi):
        n = offsets[s + 1] - offsets[s]
        if n > max_len:
            max_len = n
    buf = np.empty(max_len, dtype=np.int32)
    targets = np.empty(negative + 1, dtype=np.int32)
    n_vocab = noise_cdf.shape[0]
    loss = 0.0
    pairs = 0
    min_lr = lr0 * 1e-4  # linear decay floor
    for s in range(s_lo, s_hi):
        m = 0
        for k in range(offsets[s], offsets[s + 1]):
            w = tokens[k]
            words_done += 1
            if keep_prob[w] < 1.0:
                state = _lcg(state)
                if keep_prob[w] < _uniform(state):
                    continue
            buf[m] = w
            m += 1
        lr = lr0 * (1.0 - words_done / (total_words + 1.0))
        if lr < min_lr:
            lr = min_lr
        for i in range(m):
            state = _lcg(state)
            eff = window - int(state % numba.uint64(window))
            center = buf[i]
            lo = i - eff if i >= eff else 0
            hi = i + eff + 1 if i + eff + 1 < m else m
            for j in range(lo, hi):
                if j == i:
                    continue
                ctx = buf[j]
                targets[0] = ctx
                n_t = 1
                for _ in range(negative):
                    state = _lcg(state)
                    r = _uniform(state)
                    tgt = np.searchsorted(noise_cdf, r, side="right")
                    if tgt >= n_vocab:
                        tgt = n_vocab - 1
                    if tgt == ctx:
                        continue
                    targets[n_t] = tgt
                    n_t += 1
                loss += _sgns_update(win, wout, center, targets, n_t, lr, grad_buf)
                pairs += 1
    return loss, pairs, state


# -- training driver -------------------------------------------------------


def _sentences(corpus) -> Iterable[Sequence[str]]:
    """Accept NormalizedPost objects or plain lists of token lists."""
    for item in corpus:
        sents = getattr(item, "sentences", None)
        if sents is None:
            yield item
        else:
            yield from sents


def _keep_probabilities(counts: np.ndarray, threshold: float) -> np.ndarray:
    if threshold <= 0:
        return np.ones(len(counts))
    total = counts.sum()
    ts = threshold * total
    keep = (np.sqrt(counts / ts) + 1.0) * ts / counts
    return np.minimum(keep, 1.0)


def _noise_cdf(counts: np.ndarray) -> np.ndarray:
    w = counts.astype(np.float64) ** NOISE_EXPONENT
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    return cdf


def _seed_state(*parts: int) -> np.uint64:
    h = 1469598103934665603
    for p in parts:
        h = ((h ^ (p & 0xFFFFFFFFFFFFFFFF)) * 1099511628211) & 0xFFFFFFFFFFFFFFFF
    return np.uint64(h)


def train_embeddings(
    corpus,
    params: EmbeddingParams = EmbeddingParams(),
    workers: int = 1,
    on_epoch: Optional[Callable[[int, EmbeddingModel], None]] = None,
) -> EmbeddingModel:
    """Train SGNS vectors on a normalized corpus.

    ``corpus`` yields NormalizedPost objects or token lists; context windows
    never cross sentence boundaries. ``on_epoch(epoch, model)`` is called after
    each epoch with the model in its current state.
    """
    sentences = [list(s) for s in _sentences(corpus)]
    if not any(sentences):
        raise EmptyCorpus("no tokens to train on")
    counter = Counter(t for s in sentences for t in s)
    vocab_terms = sorted(
        (t for t, n in counter.items() if n >= params.min_term_count), key=lambda t: (-counter[t], t)
    )
    if len(vocab_terms) < 2:
        raise DegenerateVocabulary(
            f"{len(vocab_terms)} terms reach min_term_count={params.min_term_count}; need at least 2"
        )
    vocabulary = {t: i for i, t in enumerate(vocab_terms)}
    counts = np.array([counter[t] for t in vocab_terms], dtype=np.int64)

    encoded = []
    for s in sentences:
        ids = [vocabulary[t] for t in s if t in vocabulary]
        if len(ids) >= 2:
            encoded.append(ids)
    if not encoded:
        raise EmptyCorpus("no sentence has two in-vocabulary terms")
    offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(s) for s in encoded])
    tokens = np.fromiter((i for s in encoded for i in s), dtype=np.int32, count=int(offsets[-1]))
    total_words = int(offsets[-1])

    d = params.vector_size
    rng = np.random.default_rng(params.rng_seed)
    win = ((rng.random((len(vocab_terms), d)) - 0.5) / d).astype(np.float32)
    wout = np.zeros((len(vocab_terms), d), dtype=np.float32)
    model = EmbeddingModel(vocabulary, counts, win, wout, params)

    keep = _keep_probabilities(counts.astype(np.float64), params.subsample_threshold)
    cdf = _noise_cdf(counts)
    grand_total = total_words * params.epochs

    workers = max(1, min(workers, len(encoded)))
    bounds = np.linspace(0, len(encoded), workers + 1).astype(np.int64)
    state = _seed_state(params.rng_seed)

    for epoch in range(params.epochs):
        done = epoch * total_words
        if workers == 1:
            loss, pairs, state = _train_chunk(
                tokens, offsets, 0, len(encoded), win, wout, cdf, keep,
                params.context_window, params.negative_samples, params.initial_learning_rate,
                done, grand_total, state,
            )
            state = np.uint64(state)
        else:
            with ThreadPoolExecutor(workers) as pool:
                futs = [
                    pool.submit(
                        _train_chunk, tokens, offsets, int(bounds[k]), int(bounds[k + 1]), win, wout,
                        cdf, keep, params.context_window, params.negative_samples,
                        params.initial_learning_rate, done + int(offsets[bounds[k]]), grand_total,
                        _seed_state(params.rng_seed, epoch, k),
                    )
                    for k in range(workers)
                ]
                res = [f.result() for f in futs]
            loss = sum(r[0] for r in res)
            pairs = sum(r[1] for r in res)
        mean = loss / pairs if pairs else float("nan")
        model.loss_history.append(mean)
        log.debug("epoch %d: %d pairs, mean loss %.6f", epoch + 1, pairs, mean)
        if on_epoch is not None:
            on_epoch(epoch, model)
    return model


# -- queries ---------------------------------------------------------------


def cosine(model: EmbeddingModel, w1: str, w2: str) -> float:
    a = model.vector(w1).astype(np.float64)
    b = model.vector(w2).astype(np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector(f"zero vector for {w1 if na == 0 else w2!r}")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _unit_rows(m: np.ndarray) -> np.ndarray:
    m = m.astype(np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norms > 0, m / norms, 0.0)


def neighbours(model: EmbeddingModel, w: str, n: int = 20) -> list[tuple[str, float]]:
    """The ``n`` terms closest to ``w`` by cosine, best first, ties by term."""
    v = model.vector(w).astype(np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ZeroVector(f"zero vector for {w!r}")
    if n <= 0:
        return []
    sims = np.clip(_unit_rows(model.input_vectors) @ (v / norm), -1.0, 1.0)
    terms = model.terms
    idx = model.vocabulary[w]
    order = sorted((i for i in range(len(terms)) if i != idx), key=lambda i: (-sims[i], terms[i]))
    return [(terms[i], float(sims[i])) for i in order[:n]]


# -- persistence -----------------------------------------------------------


def _params_block(model: EmbeddingModel) -> bytes:
    meta = {"params": asdict(model.params), "loss_history": model.loss_history}
    return json.dumps(meta, sort_keys=True).encode("utf-8")


def save_model(model: EmbeddingModel, path) -> None:
    """Binary model file: magic, version, params JSON, vocabulary, two float32 matrices, CRC32."""
    terms = model.terms
    n, d = model.input_vectors.shape
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    block = _params_block(model)
    parts += [struct.pack("<I", len(block)), block, struct.pack("<II", n, d)]
    for t, c in zip(terms, model.counts):
        raw = t.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<Q", int(c))]
    parts.append(np.ascontiguousarray(model.input_vectors, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(model.output_vectors, dtype="<f4").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptModel("model file truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path) -> EmbeddingModel:
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CorruptModel(f"{path}: not a model file")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(buf) < 4 or zlib.crc32(buf[:-4]) != struct.unpack("<I", buf[-4:])[0]:
        raise CorruptModel(f"{path}: checksum mismatch (truncated or damaged)")
    (plen,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(plen).decode("utf-8"))
        params = EmbeddingParams(**meta["params"])
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptModel(f"{path}: bad params block ({e})") from None
    n, d = r.unpack("<II")
    vocabulary = {}
    counts = np.empty(n, dtype=np.int64)
    for i in range(n):
        (ln,) = r.unpack("<H")
        vocabulary[r.take(ln).decode("utf-8")] = i
        (counts[i],) = r.unpack("<Q")
    size = n * d * 4
    win = np.frombuffer(r.take(size), dtype="<f4").reshape(n, d).astype(np.float32)
    wout = np.frombuffer(r.take(size), dtype="<f4").reshape(n, d).astype(np.float32)
    if r.pos != len(buf) - 4:
        raise CorruptModel(f"{path}: trailing bytes")
    return EmbeddingModel(vocabulary, counts, win, wout, params, list(meta.get("loss_history", [])))


def export_text(model: EmbeddingModel, path) -> None:
    """word2vec-style text vectors: a "count dim" header, then "term v1 v2 ..."."""
    n, d = model.input_vectors.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{n} {d}\n")
        for t in model.terms:
            vec = model.input_vectors[model.vocabulary[t]]
            fh.write(t + " " + " ".join(str(x) for x in vec) + "\n")
