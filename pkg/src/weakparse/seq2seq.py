"""Attention encoder-decoder: parameters, losses, gradients, RMSProp, decoding.

The encoder is a stack of bidirectional LSTM layers; each layer reads the
concatenated forward/backward output of the layer below, and the top layer's
concatenation forms the annotations.  An affine bridge maps the final
forward/backward states to every decoder layer's initial ``(h, c)``.  At each
decoder step the previous top-layer state queries the annotations through a
one-hidden-layer tanh scorer; the resulting context is concatenated with the
previous token's embedding as input to the first decoder layer.

Training-time work goes through the compiled kernels in
:mod:`weakparse.kernels`.  :func:`encode`, :func:`attend` and
:func:`decode_step` are plain numpy versions of the same computation, kept for
inspection and used by the tests to cross-check the kernels.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .arith import END, EOS, GO, MAX_SOURCE_LEN, MAX_TARGET_LEN, PAD, SOURCE_TOKENS, TARGET_TOKENS

CHECKPOINT_MAGIC = b"WPCKPT"
CHECKPOINT_VERSION = 1

PARAM_ORDER = (
    "emb_src", "emb_tgt",
    "enc_W1", "enc_b1", "enc_W", "enc_b",
    "dec_W1", "dec_b1", "dec_W", "dec_b",
    "att_Ws", "att_Wh", "att_b", "att_v",
    "bridge_W", "bridge_b",
    "out_W", "out_b",
)


class AllMasked(ValueError):
    pass


class EmptyCandidates(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class Vocab:
    def __init__(self, tokens):
        self.tokens = tuple(tokens)
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")
        if self.ids.get(PAD) != 0:
            raise ValueError("PAD must have id 0")

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens, length=None) -> np.ndarray:
        ids = [self.ids[t] for t in tokens]
        if length is not None:
            if len(ids) > length:
                raise ValueError(f"sequence longer than {length}")
            ids += [0] * (length - len(ids))
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids) -> tuple:
        return tuple(self.tokens[int(i)] for i in ids)

    def digest(self) -> str:
        return hashlib.sha256("\x1f".join(self.tokens).encode()).hexdigest()[:16]


SOURCE_VOCAB = Vocab(SOURCE_TOKENS)
TARGET_VOCAB = Vocab(TARGET_TOKENS)
GO_ID = TARGET_VOCAB.ids[GO]
END_ID = TARGET_VOCAB.ids[END]
EOS_ID = SOURCE_VOCAB.ids[EOS]


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 20
    embed: int = 20
    attention: int = 20
    layers: int = 3
    dropout: float = 0.3
    init_scale: float = 0.3
    source_vocab: int = len(SOURCE_TOKENS)
    target_vocab: int = len(TARGET_TOKENS)

    def shapes(self) -> dict:
        H, E, A, L = self.hidden, self.embed, self.attention, self.layers
        return {
            "emb_src": (self.source_vocab, E),
            "emb_tgt": (self.target_vocab, E),
            "enc_W1": (2, 4 * H, E + H),
            "enc_b1": (2, 4 * H),
            "enc_W": (L - 1, 2, 4 * H, 3 * H),
            "enc_b": (L - 1, 2, 4 * H),
            "dec_W1": (4 * H, E + 3 * H),
            "dec_b1": (4 * H,),
            "dec_W": (L - 1, 4 * H, 2 * H),
            "dec_b": (L - 1, 4 * H),
            "att_Ws": (A, H),
            "att_Wh": (A, 2 * H),
            "att_b": (A,),
            "att_v": (A,),
            "bridge_W": (2 * L * H, 2 * H),
            "bridge_b": (2 * L * H,),
            "out_W": (self.target_vocab, H),
            "out_b": (self.target_vocab,),
        }

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())


class Params:
    """Named tensors backed by one flat float64 buffer, in ``PARAM_ORDER``."""

    def __init__(self, config: ModelConfig, flat: np.ndarray | None = None):
        self.config = config
        n = config.param_count()
        if flat is None:
            flat = np.zeros(n)
        if flat.shape != (n,) or flat.dtype != np.float64:
            raise ValueError(f"flat buffer must be float64 of length {n}")
        self.flat = flat
        self.tensors = {}
        offset = 0
        for name in PARAM_ORDER:
            shape = config.shapes()[name]
            size = int(np.prod(shape))
            self.tensors[name] = flat[offset:offset + size].reshape(shape)
            offset += size
        self.as_tuple = tuple(self.tensors[name] for name in PARAM_ORDER)

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "Params":
        s = config.init_scale
        return cls(config, rng.uniform(-s, s, size=config.param_count()))

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "Params":
        return Params(self.config, self.flat.copy())

    def zeros_like(self) -> "Params":
        return Params(self.config)


@dataclass
class ForwardTrace:
    source: np.ndarray
    target: np.ndarray
    src_len: int
    steps: int
    enc_masks: np.ndarray
    dec_masks: np.ndarray
    out_masks: np.ndarray
    loss: float
    arrays: tuple = field(repr=False)

    @property
    def alpha(self) -> np.ndarray:
        return self.arrays[12]

    @property
    def probs(self) -> np.ndarray:
        return self.arrays[19]

    @property
    def annotations(self) -> np.ndarray:
        return self.arrays[6]

    @property
    def encoder_gates(self) -> np.ndarray:
        return self.arrays[3]

    @property
    def decoder_gates(self) -> np.ndarray:
        return self.arrays[15]


def source_length(source) -> int:
    """Positions up to and including ``<eos>``; everything after is padding."""
    src = np.asarray(source)
    hits = np.flatnonzero(src == EOS_ID)
    if hits.size:
        return int(hits[0]) + 1
    pads = np.flatnonzero(src == 0)
    return int(pads[0]) if pads.size else int(src.size)


def target_steps(target) -> int:
    tgt = np.asarray(target)
    hits = np.flatnonzero(tgt == END_ID)
    n = int(hits[0]) + 1 if hits.size else int(np.count_nonzero(tgt))
    return max(n - 1, 0)


def dropout_masks(config: ModelConfig, T: int, S: int, rng=None):
    """Inverted-dropout masks; all ones when ``rng`` is None."""
    H, L, p = config.hidden, config.layers, config.dropout
    shapes = ((L - 1, T, 2 * H), (L - 1, S, H), (S, H))
    if rng is None or p == 0.0:
        return tuple(np.ones(s) for s in shapes)
    keep = 1.0 - p
    return tuple((rng.random(s) < keep) / keep for s in shapes)


def _as_ids(seq, vocab, length):
    if isinstance(seq, np.ndarray) and seq.dtype.kind == "i":
        return seq.astype(np.int64, copy=False)
    tokens = seq.split() if isinstance(seq, str) else tuple(seq)
    if tokens and isinstance(tokens[0], (int, np.integer)):
        return np.asarray(tokens, dtype=np.int64)
    return vocab.encode(tokens, length)


# ---------------------------------------------------------------------------
# numpy reference path


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_cell(W, b, x, h, c):
    H = h.shape[0]
    z = W @ np.concatenate([x, h]) + b
    i, f, o = _sigmoid(z[:H]), _sigmoid(z[H:2 * H]), _sigmoid(z[2 * H:3 * H])
    g = np.tanh(z[3 * H:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


@dataclass
class Encoding:
    annotations: np.ndarray  # (len(source), 2H); zero at padding
    mask: np.ndarray  # True where a real token sits
    initial_state: tuple  # decoder (h, c), each (layers, hidden)


def encode(source, params: Params, dropout: bool = False, rng=None) -> Encoding:
    cfg = params.config
    src = _as_ids(source, SOURCE_VOCAB, MAX_SOURCE_LEN)
    T = source_length(src)
    H, L = cfg.hidden, cfg.layers
    enc_masks = dropout_masks(cfg, T, 0, rng if dropout else None)[0]
    layer_in = [params["emb_src"][i] for i in src[:T]]
    for l in range(L):
        outs = np.zeros((T, 2 * H))
        for d in range(2):
            W = params["enc_W1"][d] if l == 0 else params["enc_W"][l - 1, d]
            b = params["enc_b1"][d] if l == 0 else params["enc_b"][l - 1, d]
            h, c = np.zeros(H), np.zeros(H)
            order = range(T) if d == 0 else range(T - 1, -1, -1)
            for t in order:
                h, c = _lstm_cell(W, b, layer_in[t], h, c)
                outs[t, d * H:(d + 1) * H] = h
        if l < L - 1:
            layer_in = list(outs * enc_masks[l])
        else:
            layer_in = list(outs)
    ann = np.zeros((src.size, 2 * H))
    ann[:T] = np.asarray(layer_in).reshape(T, 2 * H)
    fin = np.concatenate([ann[T - 1, :H], ann[0, H:]]) if T else np.zeros(2 * H)
    z = params["bridge_W"] @ fin + params["bridge_b"]
    z = z.reshape(L, 2, H)
    mask = np.zeros(src.size, dtype=bool)
    mask[:T] = True
    return Encoding(ann, mask, (z[:, 0].copy(), z[:, 1].copy()))


def attend(s_prev, annotations, mask, params: Params):
    """Context vector and weights for one decoder step."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise AllMasked("every source position is padding")
    u = np.tanh(annotations[mask] @ params["att_Wh"].T + params["att_Ws"] @ s_prev + params["att_b"])
    e = u @ params["att_v"]
    w = np.exp(e - e.max())
    w /= w.sum()
    alpha = np.zeros(mask.shape[0])
    alpha[mask] = w
    return alpha @ annotations, alpha


def decode_step(y_prev, state, context, params: Params, dropout: bool = False, rng=None):
    """One decoder step.  Returns ``(logits, (h, c))`` with the new state."""
    cfg = params.config
    h, c = state
    h_new, c_new = np.zeros_like(h), np.zeros_like(c)
    keep = 1.0 - cfg.dropout
    x = np.concatenate([params["emb_tgt"][int(y_prev)], context])
    for l in range(cfg.layers):
        W = params["dec_W1"] if l == 0 else params["dec_W"][l - 1]
        b = params["dec_b1"] if l == 0 else params["dec_b"][l - 1]
        h_new[l], c_new[l] = _lstm_cell(W, b, x, h[l], c[l])
        x = h_new[l]
        if dropout and rng is not None:
            x = x * ((rng.random(x.shape) < keep) / keep)
    return params["out_W"] @ x + params["out_b"], (h_new, c_new)


def softmax(logits):
    z = np.exp(logits - logits.max())
    return z / z.sum()


# ---------------------------------------------------------------------------
# compiled path


def nll(source, target, params: Params, dropout: bool = False, rng=None):
    """Summed teacher-forced negative log-likelihood of ``target`` given ``source``."""
    src = _as_ids(source, SOURCE_VOCAB, MAX_SOURCE_LEN)
    tgt = _as_ids(target, TARGET_VOCAB, MAX_TARGET_LEN)
    T, S = source_length(src), target_steps(tgt)
    masks = dropout_masks(params.config, T, S, rng if dropout else None)
    return nll_with_masks(src, tgt, params, masks)


def nll_with_masks(src, tgt, params: Params, masks):
    T, S = source_length(src), target_steps(tgt)
    arrays = kernels.forward(params.as_tuple, src, T, tgt, S, *masks)
    trace = ForwardTrace(src, tgt, T, S, masks[0], masks[1], masks[2], float(arrays[0]), arrays)
    return trace.loss, trace


def backprop(trace: ForwardTrace, params: Params, out: Params | None = None) -> Params:
    """Exact gradients of ``trace.loss``; accumulates into ``out`` if given."""
    grads = params.zeros_like() if out is None else out
    kernels.backward(params.as_tuple, grads.as_tuple, trace.source, trace.src_len, trace.target,
                     trace.steps, trace.enc_masks, trace.dec_masks, trace.out_masks, trace.arrays)
    return grads


@dataclass
class RMSProp:
    lr: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    cache: np.ndarray | None = None

    def step(self, params: Params, grads: Params) -> None:
        rmsprop_step(params, grads, self)


def rmsprop_step(params: Params, grads: Params, state: RMSProp) -> Params:
    """In-place RMSProp update of ``params``; also returns it."""
    g = grads.flat
    if state.cache is None:
        state.cache = np.zeros_like(params.flat)
    kernels.rmsprop(params.flat, g, state.cache, state.lr, state.rho, state.eps)
    return params


def greedy_decode(source, params: Params, max_len: int = MAX_TARGET_LEN) -> tuple:
    src = _as_ids(source, SOURCE_VOCAB, MAX_SOURCE_LEN)
    T = source_length(src)
    enc_masks = np.ones((params.config.layers - 1, T, 2 * params.config.hidden))
    ids = kernels.greedy(params.as_tuple, src, T, GO_ID, END_ID, max_len, enc_masks)
    return TARGET_VOCAB.decode(ids)


def candidate_losses(source, candidates, params: Params) -> np.ndarray:
    src = _as_ids(source, SOURCE_VOCAB, MAX_SOURCE_LEN)
    rows = [_as_ids(c, TARGET_VOCAB, None) for c in candidates]
    if not rows:
        return np.zeros(0)
    width = max(len(r) for r in rows)
    tgts = np.zeros((len(rows), width), dtype=np.int64)
    lengths = np.zeros(len(rows), dtype=np.int64)
    for n, r in enumerate(rows):
        tgts[n, :len(r)] = r
        lengths[n] = target_steps(r) + 1
    T = source_length(src)
    masks = dropout_masks(params.config, T, width, None)
    return kernels.score_many(params.as_tuple, src, T, tgts, lengths, *masks)


def score_candidates(source, candidates, params: Params) -> int:
    """Index of the candidate with the smallest loss; earliest wins ties."""
    if len(candidates) == 0:
        raise EmptyCandidates("no candidates to score")
    return int(np.argmin(candidate_losses(source, candidates, params)))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: Params, seed: int | None = None, extra: dict | None = None) -> None:
    cfg = params.config
    header = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.__dict__,
        "source_vocab": SOURCE_VOCAB.digest(),
        "target_vocab": TARGET_VOCAB.digest(),
        "seed": seed,
        "tensors": [[name, list(cfg.shapes()[name])] for name in PARAM_ORDER],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Returns ``(params, header)``.  Rejects vocabulary or dimension mismatches."""
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size))
        body = fh.read()
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    if header["source_vocab"] != SOURCE_VOCAB.digest() or header["target_vocab"] != TARGET_VOCAB.digest():
        raise CheckpointError(f"{path}: vocabulary mismatch")
    cfg = ModelConfig(**header["config"])
    if expect is not None and cfg.shapes() != expect.shapes():
        raise CheckpointError(f"{path}: dimensions {cfg} do not match {expect}")
    declared = [[n, list(s)] for n, s in cfg.shapes().items()]
    if sorted(map(str, header["tensors"])) != sorted(map(str, declared)):
        raise CheckpointError(f"{path}: tensor table does not match configuration")
    flat = np.frombuffer(body, dtype="<f8")
    if flat.size != cfg.param_count():
        raise CheckpointError(f"{path}: expected {cfg.param_count()} values, found {flat.size}")
    return Params(cfg, flat.astype(np.float64)), header
