"""Temporal convolutional window classifier with hand-written backpropagation.

The forward pass is embed -> 1D convolution (tanh) -> global max pool ->
dropout -> sigmoid hidden layer -> softmax. Weights live in float64 during
training and are stored as 32-bit little-endian reals in the model container.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import BinaryIO

import numpy as np

from clinevent.errors import ModelFormatError, ShapeError, TrainingError
from clinevent.features import (
    CHANNELS,
    PAD_INDEX,
    EmbeddingTable,
    FeatureKind,
    Vocabulary,
    VocabularySet,
    WindowInstance,
    embed_rows,
    init_embeddings,
    load_pretrained,
)
from clinevent.textproc import TaggerModel

MAGIC = b"CLNX"
FORMAT_VERSION = 1

EMBEDDING_PARAMS = ("emb.token", "emb.pos", "emb.shape")
NORM_TARGETS = {"conv": "conv.W", "mlp": "mlp.W", "softmax": "out.W"}


class Mode(StrEnum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class ConvLayer:
    filters: np.ndarray  # (F, h*d)
    bias: np.ndarray  # (F,)
    width: int


@dataclass
class MlpLayer:
    weights: np.ndarray  # (H, F)
    bias: np.ndarray  # (H,)


@dataclass
class SoftmaxLayer:
    weights: np.ndarray  # (C, H)
    bias: np.ndarray  # (C,)


@dataclass
class Hyperparameters:
    task: str
    labels: tuple[str, ...]
    window: int
    kernel_width: int
    keep_prob: float = 0.5
    max_norm: float = 3.0
    norm_targets: tuple[str, ...] = ("mlp", "softmax")
    anchor: str = "first"

    @property
    def sequence_length(self) -> int:
        return 2 * self.window + 1


@dataclass
class ModelBundle:
    """Everything needed to classify a window: vocabularies, tables, layers, tagger."""

    vocabularies: VocabularySet
    tables: list[EmbeddingTable]
    conv: ConvLayer
    mlp: MlpLayer
    softmax: SoftmaxLayer
    hyper: Hyperparameters
    tagger: TaggerModel | None = None
    format_version: int = FORMAT_VERSION

    @property
    def labels(self) -> tuple[str, ...]:
        return self.hyper.labels

    @property
    def input_dim(self) -> int:
        return sum(table.dim for table in self.tables)

    def parameters(self) -> dict[str, np.ndarray]:
        """Live trainable arrays keyed by parameter name."""
        params = {name: table.matrix for name, table in zip(EMBEDDING_PARAMS, self.tables, strict=True)}
        params.update(
            {
                "conv.W": self.conv.filters,
                "conv.b": self.conv.bias,
                "mlp.W": self.mlp.weights,
                "mlp.b": self.mlp.bias,
                "out.W": self.softmax.weights,
                "out.b": self.softmax.bias,
            }
        )
        return params

    def regularized(self) -> dict[str, np.ndarray]:
        """Parameters covered by the L2 term; the frozen PAD rows are excluded."""
        return {name: value[1:] if name in EMBEDDING_PARAMS else value for name, value in self.parameters().items()}

    def check(self) -> None:
        """Raise ShapeError unless all layer shapes agree."""
        for vocab, table in zip(self.vocabularies, self.tables, strict=True):
            if table.size != len(vocab):
                msg = f"{table.kind} table has {table.size} rows for {len(vocab)} entries"
                raise ShapeError(msg)
        filters, width = self.conv.filters.shape[0], self.conv.width
        if self.conv.filters.shape[1] != width * self.input_dim or self.conv.bias.shape != (filters,):
            msg = f"conv filters {self.conv.filters.shape} do not match width {width} x dim {self.input_dim}"
            raise ShapeError(msg)
        hidden = self.mlp.weights.shape[0]
        if self.mlp.weights.shape[1] != filters or self.mlp.bias.shape != (hidden,):
            msg = f"mlp weights {self.mlp.weights.shape} do not match {filters} filters"
            raise ShapeError(msg)
        classes = len(self.labels)
        if self.softmax.weights.shape != (classes, hidden) or self.softmax.bias.shape != (classes,):
            msg = f"softmax weights {self.softmax.weights.shape} do not match {classes} labels x {hidden} hidden"
            raise ShapeError(msg)
        if self.hyper.kernel_width != width or self.hyper.sequence_length < width:
            msg = f"kernel width {width} does not fit sequence length {self.hyper.sequence_length}"
            raise ShapeError(msg)

    def copy(self) -> ModelBundle:
        return copy.deepcopy(self)

    def quantize(self) -> None:
        """Round every weight to its 32-bit value, in place."""
        for value in self.parameters().values():
            value[...] = value.astype(np.float32)


def init_model(
    vocabularies: VocabularySet,
    labels: tuple[str, ...],
    task: str,
    *,
    window: int = 4,
    kernel_width: int = 2,
    filters: int = 300,
    hidden: int = 50,
    dims: tuple[int, int, int] = (300, 32, 16),
    keep_prob: float = 0.5,
    max_norm: float = 3.0,
    norm_targets: tuple[str, ...] = ("mlp", "softmax"),
    anchor: str = "first",
    init_scale: float = 0.05,
    seed: int = 13,
    tagger: TaggerModel | None = None,
    pretrained: list[str] | None = None,
) -> ModelBundle:
    """Uniformly initialized model, optionally seeding token rows from GloVe lines."""
    rng = np.random.default_rng(seed)
    tables = [init_embeddings(vocab, dim, rng, init_scale) for vocab, dim in zip(vocabularies, dims, strict=True)]
    if pretrained is not None:
        tables[0] = load_pretrained(pretrained, vocabularies.token, dims[0], table=tables[0])
    input_dim = sum(dims)

    def uniform(*shape: int) -> np.ndarray:
        return rng.uniform(-init_scale, init_scale, size=shape)

    model = ModelBundle(
        vocabularies=vocabularies,
        tables=tables,
        conv=ConvLayer(filters=uniform(filters, kernel_width * input_dim), bias=uniform(filters), width=kernel_width),
        mlp=MlpLayer(weights=uniform(hidden, filters), bias=uniform(hidden)),
        softmax=SoftmaxLayer(weights=uniform(len(labels), hidden), bias=uniform(len(labels))),
        hyper=Hyperparameters(
            task=task,
            labels=tuple(labels),
            window=window,
            kernel_width=kernel_width,
            keep_prob=keep_prob,
            max_norm=max_norm,
            norm_targets=tuple(norm_targets),
            anchor=anchor,
        ),
        tagger=tagger,
    )
    model.check()
    return model


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, stable for large negative inputs."""
    return np.exp(-np.logaddexp(0.0, -x))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis."""
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def unfold(inputs: np.ndarray, width: int) -> np.ndarray:
    """Row i is the concatenation of input rows i .. i+width-1."""
    positions = inputs.shape[-2] - width + 1
    return np.concatenate([inputs[..., j : j + positions, :] for j in range(width)], axis=-1)


def _convolve(inputs: np.ndarray, conv: ConvLayer) -> tuple[np.ndarray, np.ndarray]:
    n, d = inputs.shape[-2:]
    if n < conv.width:
        msg = f"sequence of {n} rows is shorter than kernel width {conv.width}"
        raise ShapeError(msg)
    if conv.filters.shape[1] != conv.width * d:
        msg = f"filters expect {conv.filters.shape[1]} inputs, window gives {conv.width} x {d}"
        raise ShapeError(msg)
    unfolded = unfold(inputs, conv.width)
    maps = np.tanh(np.swapaxes(unfolded @ conv.filters.T, -1, -2) + conv.bias[:, None])
    return unfolded, maps


def conv_forward(inputs: np.ndarray, conv: ConvLayer) -> np.ndarray:
    """Feature maps of shape (F, n-h+1): tanh(filter . x[i:i+h] + b)."""
    return _convolve(inputs, conv)[1]


def max_pool(feature_maps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max over the last axis, with the (lowest) argmax position of each row."""
    if feature_maps.ndim < 2 or feature_maps.shape[-1] == 0:
        msg = f"cannot pool feature maps of shape {feature_maps.shape}"
        raise ShapeError(msg)
    argmax = feature_maps.argmax(axis=-1)
    return np.take_along_axis(feature_maps, argmax[..., None], axis=-1)[..., 0], argmax


def sample_mask(rng: np.random.Generator, size: int | tuple[int, ...], keep_prob: float) -> np.ndarray:
    """Bernoulli(keep_prob) keep indicators."""
    return (rng.random(size) < keep_prob).astype(np.float64)


@dataclass
class ForwardCache:
    """Intermediates of a forward pass; every array has a leading batch axis."""

    mode: Mode
    rows: np.ndarray
    unfolded: np.ndarray
    maps: np.ndarray
    pooled: np.ndarray
    argmax: np.ndarray
    mask: np.ndarray | None
    z: np.ndarray
    hidden: np.ndarray
    probs: np.ndarray


def forward_batch(
    model: ModelBundle,
    rows: np.ndarray,
    mode: Mode = Mode.TEST,
    masks: np.ndarray | None = None,
) -> ForwardCache:
    """Class probabilities for a (B, 2w+1, 3) stack of window index rows.

    TRAIN multiplies the pooled vectors by ``masks``; TEST scales the hidden
    layer weights by the keep probability instead, leaving stored weights as is.
    """
    if rows.ndim != 3 or rows.shape[1:] != (model.hyper.sequence_length, len(CHANNELS)):
        msg = f"window rows {rows.shape} do not match sequence length {model.hyper.sequence_length}"
        raise ShapeError(msg)
    unfolded, maps = _convolve(embed_rows(rows, model.tables), model.conv)
    pooled, argmax = max_pool(maps)
    if mode is Mode.TRAIN:
        if masks is None or masks.shape != pooled.shape:
            msg = f"TRAIN mode needs dropout masks of shape {pooled.shape}"
            raise ShapeError(msg)
        z = pooled * masks
        pre_hidden = z @ model.mlp.weights.T + model.mlp.bias
    else:
        masks = None
        z = pooled
        pre_hidden = z @ (model.hyper.keep_prob * model.mlp.weights).T + model.mlp.bias
    hidden = sigmoid(pre_hidden)
    probs = softmax(hidden @ model.softmax.weights.T + model.softmax.bias)
    return ForwardCache(
        mode=mode,
        rows=rows,
        unfolded=unfolded,
        maps=maps,
        pooled=pooled,
        argmax=argmax,
        mask=masks,
        z=z,
        hidden=hidden,
        probs=probs,
    )


def forward(
    model: ModelBundle,
    window: WindowInstance,
    mode: Mode = Mode.TEST,
    mask: np.ndarray | None = None,
) -> ForwardCache:
    """Forward pass of a single window (a batch of one)."""
    return forward_batch(model, window.rows[None], mode, None if mask is None else mask[None])


@dataclass
class Gradients:
    """Dense layer gradients plus sparse (row index, row gradient) embedding updates."""

    dense: dict[str, np.ndarray]
    rows: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def add_to(self, totals: dict[str, np.ndarray], weight: float = 1.0) -> None:
        """Accumulate into dense totals, scaled by ``weight``."""
        for name, grad in self.dense.items():
            totals[name] += weight * grad
        for name, (indices, grads) in self.rows.items():
            np.add.at(totals[name], indices, weight * grads)

    def to_dense(self, model: ModelBundle) -> dict[str, np.ndarray]:
        """Gradients as arrays shaped like the model's parameters."""
        totals = {name: np.zeros_like(value) for name, value in model.parameters().items()}
        self.add_to(totals)
        return totals


def backward(
    model: ModelBundle,
    cache: ForwardCache | None,
    gold: int | np.ndarray,
    weights: np.ndarray | None = None,
) -> Gradients:
    """Exact gradients of sum_k weights[k] * -log p_k(gold[k]) for a TRAIN-mode pass."""
    if cache is None or cache.mode is not Mode.TRAIN:
        msg = "backward needs the cache of a TRAIN-mode forward pass"
        raise TrainingError(msg)
    batch = cache.probs.shape[0]
    gold = np.atleast_1d(np.asarray(gold))
    if gold.shape != (batch,):
        msg = f"{gold.shape[0]} gold labels for a batch of {batch}"
        raise ShapeError(msg)

    d_logits = cache.probs.copy()
    d_logits[np.arange(batch), gold] -= 1.0
    if weights is not None:
        d_logits *= np.asarray(weights, dtype=np.float64)[:, None]

    d_hidden = d_logits @ model.softmax.weights
    d_pre_hidden = d_hidden * cache.hidden * (1.0 - cache.hidden)
    d_pooled = (d_pre_hidden @ model.mlp.weights) * cache.mask

    d_maps = np.zeros_like(cache.maps)
    np.put_along_axis(d_maps, cache.argmax[..., None], d_pooled[..., None], axis=-1)
    d_pre_conv = d_maps * (1.0 - cache.maps**2)
    d_unfolded = np.swapaxes(d_pre_conv, 1, 2) @ model.conv.filters

    width = model.conv.width
    dim = model.input_dim
    positions = cache.maps.shape[-1]
    d_inputs = np.zeros((batch, positions + width - 1, dim))
    for j in range(width):
        d_inputs[:, j : j + positions] += d_unfolded[:, :, j * dim : (j + 1) * dim]

    rows = {}
    offset = 0
    for k, (name, table) in enumerate(zip(EMBEDDING_PARAMS, model.tables, strict=True)):
        indices = cache.rows[..., k].ravel()
        grads = d_inputs[..., offset : offset + table.dim].reshape(-1, table.dim)
        keep = indices != PAD_INDEX
        rows[name] = (indices[keep], grads[keep])
        offset += table.dim

    return Gradients(
        dense={
            "conv.W": np.tensordot(d_pre_conv, cache.unfolded, axes=([0, 2], [0, 1])),
            "conv.b": d_pre_conv.sum(axis=(0, 2)),
            "mlp.W": d_pre_hidden.T @ cache.z,
            "mlp.b": d_pre_hidden.sum(axis=0),
            "out.W": d_logits.T @ cache.hidden,
            "out.b": d_logits.sum(axis=0),
        },
        rows=rows,
    )


def instance_loss(model: ModelBundle, window: WindowInstance, gold: int, mask: np.ndarray) -> float:
    """Negative log-likelihood of ``gold`` for one window under a fixed dropout mask."""
    probs = forward(model, window, Mode.TRAIN, mask).probs[0]
    return float(-np.log(max(probs[gold], 1e-12)))


def renorm(weights: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale to L2 norm ``max_norm`` when the norm exceeds it."""
    if max_norm <= 0:
        msg = f"max_norm must be positive, got {max_norm}"
        raise ValueError(msg)
    norm = float(np.linalg.norm(weights))
    if norm > max_norm:
        return weights * (max_norm / norm)
    return weights


def apply_max_norm(matrix: np.ndarray, max_norm: float) -> None:
    """Row-wise ``renorm`` of a weight matrix, in place."""
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    scale = np.divide(max_norm, norms, out=np.ones_like(norms), where=norms > max_norm)
    matrix *= scale


def constrain(model: ModelBundle) -> None:
    """Apply the max-norm cap to every constrained weight matrix, in place."""
    if model.hyper.max_norm <= 0:
        return
    params = model.parameters()
    for target in model.hyper.norm_targets:
        apply_max_norm(params[NORM_TARGETS[target]], model.hyper.max_norm)


# --- model container -------------------------------------------------------


def _pack_str(value: str) -> bytes:
    data = value.encode("utf-8")
    return struct.pack("<I", len(data)) + data


def _pack_strings(values: list[str] | tuple[str, ...]) -> bytes:
    return struct.pack("<I", len(values)) + b"".join(_pack_str(value) for value in values)


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<I", len(payload)) + payload


def _tensor_section(name: str, value: np.ndarray) -> bytes:
    header = _pack_str(name) + struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape)
    return _section(b"TENS", header + np.ascontiguousarray(value, dtype="<f4").tobytes())


def _tagger_section(tagger: TaggerModel) -> bytes:
    tag_index = {tag: i for i, tag in enumerate(tagger.tags)}
    entries = [
        (feature, tag, weight)
        for feature in sorted(tagger.weights)
        for tag, weight in sorted(tagger.weights[feature].items())
    ]
    body = [_pack_strings(tagger.tags), struct.pack("<BI", tagger.averaged, len(entries))]
    body.extend(_pack_str(feature) + struct.pack("<Hf", tag_index[tag], weight) for feature, tag, weight in entries)
    return _section(b"TAGR", b"".join(body))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            msg = "truncated model container"
            raise ModelFormatError(msg)
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (size,) = self.unpack("<I")
        try:
            return self.take(size).decode("utf-8")
        except UnicodeDecodeError as e:
            msg = "corrupt string in model container"
            raise ModelFormatError(msg) from e

    def strings(self) -> list[str]:
        (count,) = self.unpack("<I")
        return [self.string() for _ in range(count)]

    def done(self) -> bool:
        return self.pos >= len(self.data)


def _read_sections(data: bytes) -> list[tuple[bytes, _Reader]]:
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        msg = "not a model container (bad magic bytes); version unknown"
        raise ModelFormatError(msg)
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        msg = f"unsupported model format version {version} (expected {FORMAT_VERSION})"
        raise ModelFormatError(msg)
    sections = []
    while not reader.done():
        tag = reader.take(4)
        (size,) = reader.unpack("<I")
        sections.append((tag, _Reader(reader.take(size))))
    return sections


def _read_tagger(reader: _Reader) -> TaggerModel:
    tags = tuple(reader.strings())
    averaged, count = reader.unpack("<BI")
    weights: dict[str, dict[str, float]] = {}
    for _ in range(count):
        feature = reader.string()
        tag_index, weight = reader.unpack("<Hf")
        if tag_index >= len(tags):
            msg = f"tagger weight refers to tag {tag_index} of {len(tags)}"
            raise ModelFormatError(msg)
        weights.setdefault(feature, {})[tags[tag_index]] = weight
    return TaggerModel(weights=weights, tags=tags, averaged=bool(averaged))


def _read_source(source: str | Path | BinaryIO | bytes) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def _write_sink(data: bytes, sink: str | Path | BinaryIO) -> None:
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)


def dump_model(model: ModelBundle) -> bytes:
    """Serialize a model bundle to container bytes."""
    model.check()
    hyper = {key: list(value) if isinstance(value, tuple) else value for key, value in asdict(model.hyper).items()}
    pairs = [item for key in sorted(hyper) for item in (key, json.dumps(hyper[key]))]
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<H", FORMAT_VERSION))
    out.write(_section(b"HYPR", struct.pack("<I", len(hyper)) + b"".join(_pack_str(item) for item in pairs)))
    for vocab in model.vocabularies:
        out.write(_section(b"VOCB", _pack_str(vocab.kind.value) + _pack_strings(vocab.entries)))
    for name, value in model.parameters().items():
        out.write(_tensor_section(name, value))
    if model.tagger is not None:
        out.write(_tagger_section(model.tagger))
    return out.getvalue()


def save_model(model: ModelBundle, sink: str | Path | BinaryIO) -> None:
    """Write a model container to a path or binary stream."""
    _write_sink(dump_model(model), sink)


def load_model(source: str | Path | BinaryIO | bytes) -> ModelBundle:
    """Read a model container from bytes, a path or a binary stream."""
    hyper: dict = {}
    vocabs: dict[FeatureKind, Vocabulary] = {}
    tensors: dict[str, np.ndarray] = {}
    tagger = None
    for tag, reader in _read_sections(_read_source(source)):
        if tag == b"HYPR":
            (count,) = reader.unpack("<I")
            for _ in range(count):
                key = reader.string()
                try:
                    hyper[key] = json.loads(reader.string())
                except json.JSONDecodeError as e:
                    msg = f"corrupt hyperparameter {key!r}"
                    raise ModelFormatError(msg) from e
        elif tag == b"VOCB":
            kind = reader.string()
            try:
                vocabs[FeatureKind(kind)] = Vocabulary(FeatureKind(kind), reader.strings())
            except ValueError as e:
                msg = f"corrupt {kind} vocabulary: {e}"
                raise ModelFormatError(msg) from e
        elif tag == b"TENS":
            name = reader.string()
            (ndim,) = reader.unpack("<B")
            shape = reader.unpack(f"<{ndim}I")
            data = reader.take(4 * int(np.prod(shape)))
            tensors[name] = np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(shape)
        elif tag == b"TAGR":
            tagger = _read_tagger(reader)
        else:
            msg = f"unknown section {tag!r}"
            raise ModelFormatError(msg)

    missing = [name for name in (*EMBEDDING_PARAMS, *NORM_TARGETS.values()) if name not in tensors]
    if missing or len(vocabs) != len(CHANNELS) or not hyper:
        msg = f"incomplete model container (missing {', '.join(missing) or 'vocabularies or hyperparameters'})"
        raise ModelFormatError(msg)
    try:
        hyper["labels"] = tuple(hyper["labels"])
        hyper["norm_targets"] = tuple(hyper["norm_targets"])
        model = ModelBundle(
            vocabularies=VocabularySet(*(vocabs[kind] for kind in CHANNELS)),
            tables=[EmbeddingTable(kind, tensors[name]) for kind, name in zip(CHANNELS, EMBEDDING_PARAMS, strict=True)],
            conv=ConvLayer(tensors["conv.W"], tensors["conv.b"], width=int(hyper["kernel_width"])),
            mlp=MlpLayer(tensors["mlp.W"], tensors["mlp.b"]),
            softmax=SoftmaxLayer(tensors["out.W"], tensors["out.b"]),
            hyper=Hyperparameters(**hyper),
            tagger=tagger,
        )
        model.check()
    except (KeyError, TypeError, ShapeError) as e:
        msg = f"inconsistent model container: {e}"
        raise ModelFormatError(msg) from e
    return model


def save_tagger(tagger: TaggerModel, sink: str | Path | BinaryIO) -> None:
    """Write a tagger-only container."""
    _write_sink(MAGIC + struct.pack("<H", FORMAT_VERSION) + _tagger_section(tagger), sink)


def load_tagger(source: str | Path | BinaryIO | bytes) -> TaggerModel:
    """Read the tagger section of a container."""
    for tag, reader in _read_sections(_read_source(source)):
        if tag == b"TAGR":
            return _read_tagger(reader)
    msg = "container holds no tagger"
    raise ModelFormatError(msg)


def model_digest(model: ModelBundle) -> str:
    """SHA-256 hex digest of the serialized model."""
    return hashlib.sha256(dump_model(model)).hexdigest()
