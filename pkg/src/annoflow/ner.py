"""Sequence tagger: character CNN features, two-direction LSTM, BIO decoding.

All model math is hand-written float64 numpy.  Gradients are derived by hand
and checked against central finite differences (see :func:`gradient_check`);
there is no autograd anywhere.  Word vectors are inputs, never parameters:
they stay frozen during training.

Shapes, with T tokens, word vectors of size D, character embeddings of size
``dc``, conv width ``w`` and ``f`` filters, hidden size ``h``, L labels:

* char_emb  (C, dc)      row 0 is the unknown-character row
* conv_w    (f, w*dc)    linear convolution, no activation, then max-pool
* fw_W/bw_W (4h, D+f)    input weights, gate order i, f, o, g
* fw_U/bw_U (4h, h)      recurrent weights
* fw_b/bw_b (4h,)        biases; forget-gate slice starts at 1.0
* out_w     (L, 2h)      projection over [forward ; backward] states
* out_b     (L,)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, NamedTuple

import numpy as np

from .core import (
    Annotation,
    AnnotationKind,
    DocumentRecord,
    FittedStage,
    Frame,
    MissingInput,
    StageSpec,
    StageType,
    pack_vector,
    register_stage_type,
)
from .evaluation import chunk_extract, label_inventory

PARAM_ORDER = (
    "char_emb",
    "conv_w",
    "conv_b",
    "fw_W",
    "fw_U",
    "fw_b",
    "bw_W",
    "bw_U",
    "bw_b",
    "out_w",
    "out_b",
)


class NerError(Exception):
    pass


class NerDataError(NerError):
    pass


class NerDimensionError(NerError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"word vectors have dimension {got}, model expects {expected}")


class NerTrainingError(NerError):
    def __init__(self, epoch: int, batch: int, detail: str):
        super().__init__(
            f"training aborted at epoch {epoch}, batch {batch}: {detail}"
        )
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class NerConfig:
    char_dim: int = 16
    conv_width: int = 3
    conv_filters: int = 16
    hidden: int = 32
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 8
    clip_norm: float = 5.0
    max_word_len: int = 30
    optimizer: str = "sgd"  # "sgd" or "adam"
    dropout: float = 0.0  # reserved; only 0.0 is implemented
    seed: int = 42

    def validate(self) -> None:
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer '{self.optimizer}'")
        if self.dropout != 0.0:
            raise ValueError("dropout is reserved and must stay 0.0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("char_dim", "conv_width", "conv_filters", "hidden",
                     "batch_size", "max_word_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


class NerExample(NamedTuple):
    tokens: list[str]
    vectors: np.ndarray  # (T, D)
    labels: list[str]


@dataclass
class NerModel:
    labels: tuple[str, ...]  # inventory order; "O" is index 0
    char_vocab: dict[str, int]  # char -> row, rows start at 1; 0 is UNK
    word_dim: int
    conv_width: int
    max_word_len: int
    params: dict[str, np.ndarray]

    @property
    def hidden(self) -> int:
        return self.params["fw_U"].shape[1]

    @property
    def n_filters(self) -> int:
        return self.params["conv_w"].shape[0]

    @property
    def char_dim(self) -> int:
        return self.params["char_emb"].shape[1]


def init_model(
    labels: list[str],
    char_vocab: dict[str, int],
    word_dim: int,
    config: NerConfig,
    rng: np.random.Generator,
) -> NerModel:
    """Glorot-uniform weights drawn in PARAM_ORDER so a seed pins every bit.

    r = sqrt(6 / (fan_in + fan_out)) per matrix; biases start at zero except
    the forget-gate slice, which starts at 1.0 to keep early memory open.
    """
    if labels[0] != "O":
        raise NerDataError("label inventory must put 'O' first")
    dc = config.char_dim
    w = config.conv_width
    f = config.conv_filters
    h = config.hidden
    din = word_dim + f
    L = len(labels)
    C = max(char_vocab.values(), default=0) + 1

    def glorot(rows: int, cols: int) -> np.ndarray:
        r = math.sqrt(6.0 / (rows + cols))
        return rng.uniform(-r, r, size=(rows, cols))

    params: dict[str, np.ndarray] = {}
    params["char_emb"] = glorot(C, dc)
    params["conv_w"] = glorot(f, w * dc)
    params["conv_b"] = np.zeros(f)
    for d in ("fw", "bw"):
        params[f"{d}_W"] = glorot(4 * h, din)
        params[f"{d}_U"] = glorot(4 * h, h)
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        params[f"{d}_b"] = b
    params["out_w"] = glorot(L, 2 * h)
    params["out_b"] = np.zeros(L)
    return NerModel(
        labels=tuple(labels),
        char_vocab=dict(char_vocab),
        word_dim=word_dim,
        conv_width=config.conv_width,
        max_word_len=config.max_word_len,
        params=params,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class _CharCache(NamedTuple):
    idx: list[int]
    windows: np.ndarray  # (P, w*dc)
    amax: np.ndarray  # (f,) winning window per filter


def _char_features(model: NerModel, token: str) -> tuple[np.ndarray, _CharCache]:
    emb = model.params["char_emb"]
    dc = emb.shape[1]
    w = model.conv_width
    idx = [model.char_vocab.get(ch, 0) for ch in token[: model.max_word_len]]
    n = len(idx)
    padded = max(n, w)
    E = np.zeros((padded, dc))
    if n:
        E[:n] = emb[idx]
    P = padded - w + 1
    # Windows as strided rows, flattened to match conv_w's layout.
    windows = np.empty((P, w * dc))
    for p in range(P):
        windows[p] = E[p : p + w].reshape(-1)
    act = windows @ model.params["conv_w"].T + model.params["conv_b"]
    amax = act.argmax(axis=0)  # ties resolve to the first window
    feat = act[amax, np.arange(act.shape[1])]
    return feat, _CharCache(idx, windows, amax)


class _DirCache(NamedTuple):
    X: np.ndarray  # inputs in the direction's own time order
    gates: list[tuple[np.ndarray, ...]]  # per step: i, f, o, g, c, tanh_c, h_prev, c_prev


def _run_direction(model: NerModel, X: np.ndarray, prefix: str) -> tuple[np.ndarray, _DirCache]:
    W = model.params[f"{prefix}_W"]
    U = model.params[f"{prefix}_U"]
    b = model.params[f"{prefix}_b"]
    h = model.hidden
    T = X.shape[0]
    H = np.zeros((T, h))
    h_t = np.zeros(h)
    c_t = np.zeros(h)
    gates = []
    for t in range(T):
        a = W @ X[t] + U @ h_t + b
        i_g = _sigmoid(a[:h])
        f_g = _sigmoid(a[h : 2 * h])
        o_g = _sigmoid(a[2 * h : 3 * h])
        g_g = np.tanh(a[3 * h :])
        c_new = f_g * c_t + i_g * g_g
        tanh_c = np.tanh(c_new)
        h_new = o_g * tanh_c
        gates.append((i_g, f_g, o_g, g_g, c_new, tanh_c, h_t, c_t))
        h_t, c_t = h_new, c_new
        H[t] = h_new
    return H, _DirCache(X, gates)


class _ForwardCache(NamedTuple):
    X: np.ndarray
    chars: list[_CharCache]
    fw: _DirCache
    bw: _DirCache
    H2: np.ndarray


def _forward(model: NerModel, tokens: list[str], vectors: np.ndarray) -> tuple[np.ndarray, _ForwardCache]:
    T = len(tokens)
    if vectors.shape != (T, model.word_dim):
        if vectors.ndim == 2 and vectors.shape[1] != model.word_dim:
            raise NerDimensionError(model.word_dim, vectors.shape[1])
        raise NerDataError(f"{T} tokens but vector block of shape {vectors.shape}")
    f = model.n_filters
    X = np.empty((T, model.word_dim + f))
    chars = []
    for t, tok in enumerate(tokens):
        feat, cache = _char_features(model, tok)
        X[t, : model.word_dim] = vectors[t]
        X[t, model.word_dim :] = feat
        chars.append(cache)
    H_fw, fw_cache = _run_direction(model, X, "fw")
    H_bw_rev, bw_cache = _run_direction(model, X[::-1], "bw")
    H_bw = H_bw_rev[::-1]
    H2 = np.concatenate([H_fw, H_bw], axis=1)
    scores = H2 @ model.params["out_w"].T + model.params["out_b"]
    return scores, _ForwardCache(X, chars, fw_cache, bw_cache, H2)


def forward(model: NerModel, tokens: list[str], vectors: np.ndarray) -> np.ndarray:
    """Per-token label scores, shape (T, len(labels))."""
    if len(tokens) == 0:
        return np.zeros((0, len(model.labels)))
    scores, _ = _forward(model, tokens, np.asarray(vectors, dtype=np.float64))
    return scores


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grads(
    model: NerModel,
    batch: list[NerExample],
    targets: list[np.ndarray] | None = None,
) -> tuple[float, dict[str, np.ndarray], int]:
    """Mean per-token cross entropy over the batch plus gradients.

    ``targets`` overrides the one-hot targets derived from example labels
    with explicit per-token distributions (rows sum to 1); training never
    uses this, but it lets the gradient check probe degenerate cases such as
    targets equal to the model's own softmax, where every gradient is zero.
    """
    label_index = {lab: k for k, lab in enumerate(model.labels)}
    grads = {name: np.zeros_like(arr) for name, arr in model.params.items()}
    total_tokens = sum(len(ex.tokens) for ex in batch)
    if total_tokens == 0:
        return 0.0, grads, 0
    loss = 0.0
    h = model.hidden
    D = model.word_dim
    w = model.conv_width
    dc = model.char_dim

    for bi, ex in enumerate(batch):
        T = len(ex.tokens)
        if T == 0:
            continue
        scores, cache = _forward(model, ex.tokens, ex.vectors)
        logp = _log_softmax(scores)
        p = np.exp(logp)
        if targets is None:
            q = np.zeros_like(p)
            for t, lab in enumerate(ex.labels):
                try:
                    q[t, label_index[lab]] = 1.0
                except KeyError:
                    raise NerDataError(f"label '{lab}' not in model inventory") from None
        else:
            q = targets[bi]
        loss += -(q * logp).sum()
        dS = (p - q) / total_tokens  # (T, L)

        grads["out_w"] += dS.T @ cache.H2
        grads["out_b"] += dS.sum(axis=0)
        dH2 = dS @ model.params["out_w"]  # (T, 2h)
        dX = np.zeros_like(cache.X)
        _backward_direction(model, grads, "fw", cache.fw, dH2[:, :h], dX, reverse=False)
        _backward_direction(model, grads, "bw", cache.bw, dH2[:, h:], dX, reverse=True)

        # Char path: only the filter slice of dX flows back; word vectors
        # are frozen inputs so their slice is dropped here.
        conv_w = model.params["conv_w"]
        for t, cc in enumerate(cache.chars):
            dfeat = dX[t, D:]
            dact = np.zeros((cc.windows.shape[0], conv_w.shape[0]))
            dact[cc.amax, np.arange(conv_w.shape[0])] = dfeat
            grads["conv_w"] += dact.T @ cc.windows
            grads["conv_b"] += dact.sum(axis=0)
            if not cc.idx:
                continue
            dwin = (dact @ conv_w).reshape(-1, w, dc)
            dE = np.zeros((cc.windows.shape[0] + w - 1, dc))
            for pos in range(dwin.shape[0]):
                dE[pos : pos + w] += dwin[pos]
            np.add.at(grads["char_emb"], cc.idx, dE[: len(cc.idx)])

    return loss / total_tokens, grads, total_tokens


def _backward_direction(
    model: NerModel,
    grads: dict[str, np.ndarray],
    prefix: str,
    cache: _DirCache,
    dH: np.ndarray,
    dX: np.ndarray,
    reverse: bool,
) -> None:
    """Backprop through one LSTM direction; accumulates into grads and dX.

    ``dH`` rows are in document order; for the backward direction the cache
    ran over reversed inputs, so document position t maps to step T-1-t.
    """
    W = model.params[f"{prefix}_W"]
    U = model.params[f"{prefix}_U"]
    h = model.hidden
    T = dH.shape[0]
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    dW = grads[f"{prefix}_W"]
    dU = grads[f"{prefix}_U"]
    db = grads[f"{prefix}_b"]
    for step in range(T - 1, -1, -1):
        doc_t = (T - 1 - step) if reverse else step
        i_g, f_g, o_g, g_g, c_new, tanh_c, h_prev, c_prev = cache.gates[step]
        dh = dH[doc_t] + dh_next
        dc = dc_next + dh * o_g * (1.0 - tanh_c * tanh_c)
        do = dh * tanh_c
        di = dc * g_g
        dg = dc * i_g
        df = dc * c_prev
        dc_next = dc * f_g
        da = np.concatenate(
            [
                di * i_g * (1.0 - i_g),
                df * f_g * (1.0 - f_g),
                do * o_g * (1.0 - o_g),
                dg * (1.0 - g_g * g_g),
            ]
        )
        x_t = cache.X[step]
        dW += np.outer(da, x_t)
        dU += np.outer(da, h_prev)
        db += da
        dh_next = U.T @ da
        dX[doc_t] += W.T @ da


def flatten_params(params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([params[name].reshape(-1) for name in PARAM_ORDER if name in params])


def unflatten_params(model: NerModel, theta: np.ndarray) -> None:
    pos = 0
    for name in PARAM_ORDER:
        arr = model.params[name]
        n = arr.size
        arr[...] = theta[pos : pos + n].reshape(arr.shape)
        pos += n
    if pos != theta.size:
        raise ValueError("theta size does not match model parameters")


def numeric_gradients(
    model: NerModel,
    batch: list[NerExample],
    epsilon: float = 1e-4,
    targets: list[np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Central finite differences over every parameter coordinate."""
    grads = {}
    for name in PARAM_ORDER:
        arr = model.params[name]
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for k in range(flat.size):
            keep = flat[k]
            flat[k] = keep + epsilon
            lp, _, _ = loss_and_grads(model, batch, targets)
            flat[k] = keep - epsilon
            lm, _, _ = loss_and_grads(model, batch, targets)
            flat[k] = keep
            gf[k] = (lp - lm) / (2.0 * epsilon)
        grads[name] = g
    return grads


def gradient_check(
    model: NerModel,
    batch: list[NerExample],
    epsilon: float = 1e-4,
    targets: list[np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic and numeric gradients:
    |ga - gn| / max(|ga|, |gn|, 1e-8), across all coordinates."""
    _, analytic, _ = loss_and_grads(model, batch, targets)
    numeric = numeric_gradients(model, batch, epsilon, targets)
    worst = 0.0
    for name in PARAM_ORDER:
        ga = analytic[name].reshape(-1)
        gn = numeric[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-8)
        rel = np.abs(ga - gn) / denom
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for arr in grads.values():
        total += float((arr * arr).sum())
    return math.sqrt(total)


def train_ner(
    dataset: list[NerExample],
    config: NerConfig,
    labels: list[str] | None = None,
) -> tuple[NerModel, list[float]]:
    """Mini-batch training; returns the model and the per-epoch loss trace.

    Deterministic for a fixed seed: shuffling uses the model's own PCG64
    generator and all math is float64, so two runs agree bit for bit.
    Aborts with diagnostics the moment loss or gradient norm goes non-finite.
    """
    config.validate()
    if not dataset:
        raise NerDataError("training dataset is empty")
    for n, ex in enumerate(dataset):
        if len(ex.tokens) != len(ex.labels):
            raise NerDataError(f"example {n}: {len(ex.tokens)} tokens vs {len(ex.labels)} labels")
        if len(ex.tokens) != ex.vectors.shape[0]:
            raise NerDataError(f"example {n}: vector rows do not match tokens")
        try:
            chunk_extract(ex.labels, repair=False)
        except ValueError as exc:
            raise NerDataError(f"example {n}: {exc}") from None

    if labels is None:
        seen: set[str] = set()
        for ex in dataset:
            seen.update(ex.labels)
        seen.add("O")
        labels = label_inventory(seen)
    chars = sorted({ch for ex in dataset for tok in ex.tokens for ch in tok})
    char_vocab = {ch: i + 1 for i, ch in enumerate(chars)}
    word_dim = int(dataset[0].vectors.shape[1])

    prepared = [
        NerExample(ex.tokens, np.asarray(ex.vectors, dtype=np.float64), ex.labels)
        for ex in dataset
    ]
    rng = np.random.Generator(np.random.PCG64(config.seed))
    model = init_model(labels, char_vocab, word_dim, config, rng)

    adam_m = adam_v = None
    adam_t = 0
    if config.optimizer == "adam":
        adam_m = {k: np.zeros_like(v) for k, v in model.params.items()}
        adam_v = {k: np.zeros_like(v) for k, v in model.params.items()}

    trace: list[float] = []
    n = len(prepared)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_tokens = 0
        for b0 in range(0, n, config.batch_size):
            batch_no = b0 // config.batch_size
            batch = [prepared[i] for i in order[b0 : b0 + config.batch_size]]
            loss, grads, ntok = loss_and_grads(model, batch)
            if not math.isfinite(loss):
                raise NerTrainingError(epoch, batch_no, f"loss became {loss}")
            gnorm = _global_norm(grads)
            if not math.isfinite(gnorm):
                raise NerTrainingError(epoch, batch_no, f"gradient norm became {gnorm}")
            if gnorm > config.clip_norm > 0:
                scale = config.clip_norm / gnorm
                for arr in grads.values():
                    arr *= scale
            if config.optimizer == "sgd":
                for name, arr in model.params.items():
                    arr -= config.learning_rate * grads[name]
            else:
                adam_t += 1
                b1, b2, eps = 0.9, 0.999, 1e-8
                for name, arr in model.params.items():
                    adam_m[name] = b1 * adam_m[name] + (1 - b1) * grads[name]
                    adam_v[name] = b2 * adam_v[name] + (1 - b2) * grads[name] ** 2
                    mhat = adam_m[name] / (1 - b1**adam_t)
                    vhat = adam_v[name] / (1 - b2**adam_t)
                    arr -= config.learning_rate * mhat / (np.sqrt(vhat) + eps)
            epoch_loss += loss * ntok
            epoch_tokens += ntok
        trace.append(epoch_loss / max(epoch_tokens, 1))
    return model, trace


def decode_bio(scores: np.ndarray, labels: tuple[str, ...] | list[str]) -> list[str]:
    """Viterbi over per-token scores under BIO constraints.

    A sequence may start only with O or B-X; I-X may follow only B-X or I-X.
    Disallowed cells take -inf.  Ties break toward the earlier label in
    inventory order (argmax picks the first maximum), so an all-equal score
    matrix decodes to all O when O is the first label.
    """
    L = len(labels)
    T = scores.shape[0]
    if T == 0:
        return []
    if scores.shape[1] != L:
        raise NerDataError(f"scores have {scores.shape[1]} columns for {L} labels")
    start_bad = np.array([lab.startswith("I-") for lab in labels])
    trans_pen = np.zeros((L, L))
    for j, to in enumerate(labels):
        if not to.startswith("I-"):
            continue
        ent = to[2:]
        for i, frm in enumerate(labels):
            if frm != "B-" + ent and frm != "I-" + ent:
                trans_pen[i, j] = -np.inf
    dp = scores[0].copy()
    dp[start_bad] = -np.inf
    back = np.zeros((T, L), dtype=np.intp)
    cols = np.arange(L)
    for t in range(1, T):
        cand = dp[:, None] + trans_pen
        best = cand.argmax(axis=0)
        back[t] = best
        dp = cand[best, cols] + scores[t]
    path = [int(dp.argmax())]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return [labels[k] for k in path]


# --- pipeline stages -------------------------------------------------------


def sentence_groups(
    record: DocumentRecord, sent_col: str, cols: list[str]
) -> list[tuple[Annotation, list[list[Annotation]]]]:
    """Group the annotations of ``cols`` by containing sentence.

    Relies on document order: sentences are disjoint and sorted, and each
    token-aligned column is sorted the same way, so one pointer per column
    suffices.  Raises NerDataError if token-aligned columns disagree.
    """
    sents = record.columns[sent_col]
    streams = [record.columns[c] for c in cols]
    out = []
    pos = [0] * len(streams)
    for sent in sents:
        grouped: list[list[Annotation]] = []
        for k, stream in enumerate(streams):
            acc = []
            while pos[k] < len(stream) and stream[pos[k]].begin <= sent.end:
                if stream[pos[k]].begin >= sent.begin:
                    acc.append(stream[pos[k]])
                pos[k] += 1
            grouped.append(acc)
        first = grouped[0]
        for other, name in zip(grouped[1:], cols[1:]):
            if len(other) != len(first) or any(
                a.begin != b.begin or a.end != b.end for a, b in zip(first, other)
            ):
                raise NerDataError(
                    f"columns '{cols[0]}' and '{name}' are not aligned in record '{record.id}'"
                )
        out.append((sent, grouped))
    return out


def _vectors_from_annotations(anns: list[Annotation], dim: int) -> np.ndarray:
    if not anns:
        return np.zeros((0, dim))
    buf = b"".join(a.vector or b"" for a in anns)
    if len(buf) != 4 * dim * len(anns):
        raise NerDataError("embedding annotations are missing vectors")
    return np.frombuffer(buf, dtype="<f4").reshape(len(anns), dim).astype(np.float64)


class NerModelStage(FittedStage):
    store_type = "ner_model"

    def __init__(self, model: NerModel):
        self.model = model

    def apply(self, record: DocumentRecord, spec: StageSpec) -> list[Annotation]:
        sent_col, tok_col, emb_col = spec.inputs
        kind = AnnotationKind.NAMED_ENTITY.value
        out = []
        for _, (tokens, embs) in sentence_groups(record, sent_col, [tok_col, emb_col]):
            if not tokens:
                continue
            vectors = _vectors_from_annotations(embs, self.model.word_dim)
            scores = forward(self.model, [t.result for t in tokens], vectors)
            for tok, lab in zip(tokens, decode_bio(scores, self.model.labels)):
                out.append(Annotation(kind=kind, begin=tok.begin, end=tok.end, result=lab))
        return out

    def store_params(self) -> dict[str, Any]:
        return {
            "labels": list(self.model.labels),
            "char_vocab": self.model.char_vocab,
            "word_dim": self.model.word_dim,
            "conv_width": self.model.conv_width,
            "max_word_len": self.model.max_word_len,
        }

    def store_blob(self) -> bytes | None:
        from .store import pack_arrays

        return pack_arrays({name: self.model.params[name] for name in PARAM_ORDER})


def _restore_ner_model(spec: StageSpec, blob: bytes | None) -> FittedStage:
    from .store import StoreFormatError, unpack_arrays

    p = spec.params
    if blob is None:
        raise StoreFormatError("ner_model stage has no parameter blob")
    arrays = unpack_arrays(blob)
    model = NerModel(
        labels=tuple(str(l) for l in p["labels"]),
        char_vocab={str(k): int(v) for k, v in p["char_vocab"].items()},
        word_dim=int(p["word_dim"]),
        conv_width=int(p["conv_width"]),
        max_word_len=int(p["max_word_len"]),
        params={name: arrays[name] for name in PARAM_ORDER},
    )
    return NerModelStage(model)


def dataset_from_frame(
    frame: Frame,
    sent_col: str,
    tok_col: str,
    emb_col: str,
    label_col: str,
    stage_id: str = "ner_tagger",
) -> list[NerExample]:
    examples = []
    for record in frame.records:
        if record.error is not None:
            continue
        if label_col not in record.columns:
            raise MissingInput(stage_id, label_col)
        for _sent, (tokens, embs, golds) in sentence_groups(
            record, sent_col, [tok_col, emb_col, label_col]
        ):
            if not tokens:
                continue
            dim = len(embs[0].vector or b"") // 4
            examples.append(
                NerExample(
                    tokens=[t.result for t in tokens],
                    vectors=_vectors_from_annotations(embs, dim),
                    labels=[g.result for g in golds],
                )
            )
    return examples


def _config_from_params(p: dict[str, Any]) -> NerConfig:
    cfg = NerConfig()
    fields = {k: v for k, v in p.items() if k in NerConfig.__dataclass_fields__}
    return replace(cfg, **fields)


def _fit_ner(spec: StageSpec, frame: Frame) -> FittedStage:
    sent_col, tok_col, emb_col = spec.inputs
    label_col = str(spec.params.get("label_column", "label"))
    dataset = dataset_from_frame(
        frame, sent_col, tok_col, emb_col, label_col, spec.stage_id
    )
    config = _config_from_params(spec.params)
    model, _ = train_ner(dataset, config)
    return NerModelStage(model)


register_stage_type(
    StageType(
        name="ner_model",
        input_kinds=(
            AnnotationKind.SENTENCE,
            AnnotationKind.TOKEN,
            AnnotationKind.WORD_EMBEDDING,
        ),
        output_kind=AnnotationKind.NAMED_ENTITY,
        build=None,
        fit=None,
        restore=_restore_ner_model,
    )
)
register_stage_type(
    StageType(
        name="ner_tagger",
        input_kinds=(
            AnnotationKind.SENTENCE,
            AnnotationKind.TOKEN,
            AnnotationKind.WORD_EMBEDDING,
        ),
        output_kind=AnnotationKind.NAMED_ENTITY,
        fit=_fit_ner,
    )
)
