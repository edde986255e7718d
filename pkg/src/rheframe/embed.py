"""Paragraph-vector embedding training plus external embedding ingestion.

Four training variants are supported: bag-of-words or context-window input
(DBOW / DM) crossed with hierarchical-softmax or negative-sampling output
(HS / NEG). Training is single-threaded and fully deterministic given
(units, config, seed). Precomputed word/unit embedding files can be loaded
as an alternative feature source.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from rheframe import _pv_kernels as K
from rheframe._serialize import read_blob, write_blob
from rheframe.errors import ConfigError, InputError, ModelError
from rheframe.textprep import Vocabulary, build_vocab

EMBED_MAGIC = "RFD-EMB"
EMBED_VERSION = (1, 0)

VARIANTS = ("dbow-hs", "dbow-neg", "dm-hs", "dm-neg")
NOISE_POWER = 0.75


@dataclass(frozen=True)
class EmbedConfig:
    variant: str = "dbow-hs"
    dim: int = 300
    window: int = 5
    negative: int = 5
    epochs: int = 20
    alpha: float = 0.025
    min_alpha: float = 0.0001
    min_count: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.dim <= 0:
            raise ConfigError("dim must be > 0")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.uses_negative_sampling and self.negative < 1:
            raise ConfigError("negative must be >= 1 for negative sampling")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    @property
    def uses_dm(self) -> bool:
        return self.variant.startswith("dm")

    @property
    def uses_negative_sampling(self) -> bool:
        return self.variant.endswith("neg")


class HuffmanTree:
    """Minimal prefix code over token frequencies with deterministic ties.

    Per token: ``codes[i]`` is the branch-bit string and ``points[i]`` the
    internal-node ids along the root-to-leaf path. Tie-breaking is by
    (frequency, leaf-before-internal, id), so rebuilds are reproducible.
    """

    def __init__(self, codes: list[np.ndarray], points: list[np.ndarray], n_internal: int):
        self.codes = codes
        self.points = points
        self.n_internal = n_internal
        self.codes_flat = (
            np.concatenate(codes) if codes else np.zeros(0, dtype=np.uint8)
        ).astype(np.uint8)
        self.points_flat = (
            np.concatenate(points) if points else np.zeros(0, dtype=np.int64)
        ).astype(np.int64)
        offs = np.zeros(len(codes) + 1, dtype=np.int64)
        for i, c in enumerate(codes):
            offs[i + 1] = offs[i] + len(c)
        self.offsets = offs

    def code_lengths(self) -> list[int]:
        return [len(c) for c in self.codes]

    def weighted_length(self, freqs: Sequence[int]) -> int:
        return int(sum(f * len(c) for f, c in zip(freqs, self.codes)))


def build_huffman_tree(vocab: Vocabulary) -> HuffmanTree:
    """Build the optimal binary prefix code over vocabulary frequencies."""
    freqs = vocab.frequencies
    n = len(freqs)
    if n < 2:
        raise InputError(f"need at least 2 vocabulary tokens, got {n}")
    # heap entries: (freq, kind, id, node); kind 0 for leaves keeps them
    # ahead of equal-frequency internal nodes
    heap: list[tuple[int, int, int, dict]] = []
    for tok_id, f in enumerate(freqs):
        heapq.heappush(heap, (f, 0, tok_id, {"leaf": tok_id}))
    next_internal = 0
    root = None
    while len(heap) > 1:
        f1, _, _, left = heapq.heappop(heap)
        f2, _, _, right = heapq.heappop(heap)
        node = {"id": next_internal, "left": left, "right": right}
        heapq.heappush(heap, (f1 + f2, 1, next_internal, node))
        next_internal += 1
        root = node
    codes: list[np.ndarray] = [np.zeros(0, dtype=np.uint8)] * n
    points: list[np.ndarray] = [np.zeros(0, dtype=np.int64)] * n
    stack = [(root, [], [])]
    while stack:
        node, bits, path = stack.pop()
        if "leaf" in node:
            codes[node["leaf"]] = np.array(bits, dtype=np.uint8)
            points[node["leaf"]] = np.array(path, dtype=np.int64)
            continue
        stack.append((node["left"], bits + [0], path + [node["id"]]))
        stack.append((node["right"], bits + [1], path + [node["id"]]))
    return HuffmanTree(codes, points, n_internal=next_internal)


def build_noise_table(freqs: Sequence[int], power: float = NOISE_POWER) -> np.ndarray:
    """Cumulative noise distribution from unigram counts raised to ``power``."""
    probs = np.asarray(freqs, dtype=np.float64) ** power
    total = probs.sum()
    if total <= 0:
        raise InputError("noise table needs positive frequencies")
    return np.cumsum(probs / total)


def negative_sample(cum_table: np.ndarray, k: int, rng_state: int, exclude: int = -1):
    """Draw ``k`` ids from the noise table, excluding ``exclude`` by redraw.

    Returns (ids array, advanced rng state); entries are -1 if redrawing
    could not avoid ``exclude`` (single-token tables).
    """
    out = np.empty(k, dtype=np.int64)
    state = K.draw_negatives(cum_table, k, exclude, rng_state, out)
    return out, int(state)


class EmbeddingModel:
    """Trained paragraph-vector parameters plus vocabulary and output structure."""

    def __init__(
        self,
        config: EmbedConfig,
        vocab: Vocabulary,
        word_vectors: np.ndarray,
        unit_vectors: np.ndarray,
        output_vectors: np.ndarray,
        epoch_losses: list[float] | None = None,
    ):
        self.config = config
        self.vocab = vocab
        self.word_vectors = word_vectors
        self.unit_vectors = unit_vectors
        self.output_vectors = output_vectors
        self.epoch_losses = epoch_losses or []
        if config.uses_negative_sampling:
            self.huffman = None
            self.noise_table = build_noise_table(vocab.frequencies)
        else:
            self.huffman = build_huffman_tree(vocab)
            self.noise_table = np.zeros(0, dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def n_units(self) -> int:
        return self.unit_vectors.shape[0]

    def _kernel_tables(self):
        if self.config.uses_negative_sampling:
            empty_c = np.zeros(0, dtype=np.uint8)
            empty_p = np.zeros(0, dtype=np.int64)
            empty_o = np.zeros(1, dtype=np.int64)
            return empty_c, empty_o, empty_p, self.noise_table
        hf = self.huffman
        return hf.codes_flat, hf.offsets, hf.points_flat, np.zeros(0, dtype=np.float64)

    def save(self, path) -> None:
        header = {
            "config": asdict(self.config),
            "epoch_losses": self.epoch_losses,
            "tokens": self.vocab.tokens,
        }
        arrays = {
            "freqs": np.asarray(self.vocab.frequencies, dtype=np.int64),
            "W": self.word_vectors.astype(np.float32),
            "D": self.unit_vectors.astype(np.float32),
            "OUT": self.output_vectors.astype(np.float32),
        }
        write_blob(path, EMBED_MAGIC, EMBED_VERSION, header, arrays)

    def to_bytes(self) -> bytes:
        from rheframe._serialize import dump_blob

        header = {
            "config": asdict(self.config),
            "epoch_losses": self.epoch_losses,
            "tokens": self.vocab.tokens,
        }
        arrays = {
            "freqs": np.asarray(self.vocab.frequencies, dtype=np.int64),
            "W": self.word_vectors.astype(np.float32),
            "D": self.unit_vectors.astype(np.float32),
            "OUT": self.output_vectors.astype(np.float32),
        }
        return dump_blob(EMBED_MAGIC, EMBED_VERSION, header, arrays)

    @classmethod
    def _from_parts(cls, header, arrays) -> "EmbeddingModel":
        config = EmbedConfig(**header["config"])
        vocab = Vocabulary(
            dict(zip(header["tokens"], arrays["freqs"].tolist())), min_count=1
        )
        return cls(
            config=config,
            vocab=vocab,
            word_vectors=arrays["W"],
            unit_vectors=arrays["D"],
            output_vectors=arrays["OUT"],
            epoch_losses=list(header.get("epoch_losses", [])),
        )

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        _, header, arrays = read_blob(path, EMBED_MAGIC, EMBED_VERSION[0])
        return cls._from_parts(header, arrays)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EmbeddingModel":
        from rheframe._serialize import parse_blob

        _, header, arrays = parse_blob(data, EMBED_MAGIC, EMBED_VERSION[0])
        return cls._from_parts(header, arrays)


def _units_to_csr(units: Sequence[Sequence[str]], vocab: Vocabulary):
    ids = []
    offsets = np.zeros(len(units) + 1, dtype=np.int64)
    for i, unit in enumerate(units):
        kept = [vocab.id_of(t) for t in unit if t in vocab]
        ids.extend(kept)
        offsets[i + 1] = len(ids)
    return np.asarray(ids, dtype=np.int64), offsets


def _init_matrix(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    return ((rng.random((rows, dim)) - 0.5) / dim).astype(np.float32)


def train_paragraph_vectors(
    units: Sequence[Sequence[str]],
    config: EmbedConfig = EmbedConfig(),
) -> EmbeddingModel:
    """Train unit vectors over tokenized units with SGD and linear LR decay.

    Single-threaded by contract so that identical (units, config, seed)
    yield byte-identical models.
    """
    if not units:
        raise InputError("cannot train on an empty unit list")
    vocab = build_vocab(units, min_count=config.min_count)
    if len(vocab) < 2:
        raise InputError(
            f"vocabulary has {len(vocab)} tokens after min_count={config.min_count}; need >= 2"
        )
    data, offsets = _units_to_csr(units, vocab)
    rng = np.random.default_rng(config.seed)
    unit_vectors = _init_matrix(rng, len(units), config.dim)
    word_vectors = _init_matrix(rng, len(vocab), config.dim)
    if config.uses_negative_sampling:
        output_vectors = np.zeros((len(vocab), config.dim), dtype=np.float32)
    else:
        output_vectors = np.zeros((max(len(vocab) - 1, 1), config.dim), dtype=np.float32)
    model = EmbeddingModel(config, vocab, word_vectors, unit_vectors, output_vectors)

    codes_flat, code_offsets, points_flat, cum_table = model._kernel_tables()
    unit_rows = np.arange(len(units), dtype=np.int64)
    total_positions = config.epochs * int(offsets[-1])
    done = 0
    state = K.lcg_seed(config.seed)
    for _ in range(config.epochs):
        loss_sum, n_pos, done, state = K.pv_epoch(
            unit_vectors,
            word_vectors,
            output_vectors,
            data,
            offsets,
            unit_rows,
            codes_flat,
            code_offsets,
            points_flat,
            cum_table,
            config.window,
            config.negative,
            not config.uses_negative_sampling,
            config.uses_dm,
            config.uses_dm,  # word vectors update only in context-window mode
            True,
            config.alpha,
            config.min_alpha,
            done,
            total_positions,
            state,
        )
        model.epoch_losses.append(loss_sum / max(n_pos, 1))
    return model


def infer_vector(
    tokens: Sequence[str],
    model: EmbeddingModel,
    infer_epochs: int = 50,
    seed: int = 0,
) -> tuple[np.ndarray, bool]:
    """Embed an unseen unit with word/output parameters frozen.

    Returns (vector, all_oov): if every token is out of vocabulary the
    vector is zero and the flag is set.
    """
    ids = [model.vocab.id_of(t) for t in tokens if t in model.vocab]
    if not ids:
        return np.zeros(model.dim, dtype=np.float32), True
    config = model.config
    rng = np.random.default_rng(seed)
    vec = _init_matrix(rng, 1, config.dim)
    data = np.asarray(ids, dtype=np.int64)
    offsets = np.array([0, len(ids)], dtype=np.int64)
    unit_rows = np.zeros(1, dtype=np.int64)
    codes_flat, code_offsets, points_flat, cum_table = model._kernel_tables()
    total = infer_epochs * len(ids)
    done = 0
    state = K.lcg_seed(seed)
    for _ in range(infer_epochs):
        _, _, done, state = K.pv_epoch(
            vec,
            model.word_vectors,
            model.output_vectors,
            data,
            offsets,
            unit_rows,
            codes_flat,
            code_offsets,
            points_flat,
            cum_table,
            config.window,
            config.negative,
            not config.uses_negative_sampling,
            config.uses_dm,
            False,
            False,
            config.alpha,
            config.min_alpha,
            done,
            total,
            state,
        )
    return vec[0], False


# Reference objective used by gradient checks and kernel-equivalence tests.


def position_loss_and_grads(
    unit_vec: np.ndarray,
    context_vecs: Sequence[np.ndarray],
    output_matrix: np.ndarray,
    rows: Sequence[int],
    labels: Sequence[float],
):
    """Loss and analytic gradients for one training position (float64).

    The input vector is the mean of the unit vector and any context word
    vectors; each (row, label) pair contributes -log sigma(+-x) with
    x = input . output_row. Returns (loss, d_unit, d_contexts, d_out_rows).
    """
    u = np.asarray(unit_vec, dtype=np.float64)
    ctx = [np.asarray(c, dtype=np.float64) for c in context_vecs]
    m = 1 + len(ctx)
    combined = (u + sum(ctx)) / m if ctx else u.copy()
    loss = 0.0
    d_combined = np.zeros_like(combined)
    d_rows = []
    for row, label in zip(rows, labels):
        out = np.asarray(output_matrix[row], dtype=np.float64)
        x = float(np.dot(combined, out))
        f = 1.0 / (1.0 + np.exp(-np.clip(x, -30.0, 30.0)))
        s = x if label == 1.0 else -x
        loss += np.log1p(np.exp(-s)) if s > 0 else -s + np.log1p(np.exp(s))
        d_combined += (f - label) * out
        d_rows.append((f - label) * combined)
    d_unit = d_combined / m
    d_ctx = [d_combined / m for _ in ctx]
    return loss, d_unit, d_ctx, d_rows


class ExternalEmbeddingTable:
    """Fixed-dimension vectors keyed by token or unit id."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self.vectors = vectors
        self.dim = dim

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def get(self, key: str) -> np.ndarray | None:
        return self.vectors.get(key)

    def require(self, key: str) -> np.ndarray:
        vec = self.vectors.get(key)
        if vec is None:
            raise ModelError(f"no embedding for unit id {key!r}")
        return vec

    def matrix_for(self, keys: Sequence[str], oov_zero: bool = True) -> np.ndarray:
        """Stack vectors for ``keys``; unknown keys become zero rows if allowed."""
        out = np.zeros((len(keys), self.dim), dtype=np.float32)
        for i, key in enumerate(keys):
            vec = self.vectors.get(key)
            if vec is not None:
                out[i] = vec
            elif not oov_zero:
                raise ModelError(f"no embedding for unit id {key!r}")
        return out


def _parse_text_embedding_line(line: str, lineno: int, path) -> tuple[str, np.ndarray]:
    parts = line.rstrip("\n").split()
    if len(parts) < 2:
        raise InputError(f"{path}:{lineno}: expected 'key floats...'")
    try:
        vec = np.array([float(v) for v in parts[1:]], dtype=np.float32)
    except ValueError as exc:
        raise InputError(f"{path}:{lineno}: unparsable float") from exc
    return parts[0], vec


def load_word_embeddings(path) -> ExternalEmbeddingTable:
    """Stream a whitespace-delimited 'token v1 ... vd' embedding file."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read embeddings {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            key, vec = _parse_text_embedding_line(line, lineno, path)
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise InputError(
                    f"{path}:{lineno}: dimension {len(vec)} != {dim} seen earlier"
                )
            if key in vectors:
                raise InputError(f"{path}:{lineno}: duplicate token {key!r}")
            vectors[key] = vec
    return ExternalEmbeddingTable(vectors, dim or 0)


def load_unit_embeddings(path) -> ExternalEmbeddingTable:
    """Load id-keyed unit embeddings from JSONL {"id","vector"} or text format."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read embeddings {path}: {exc}") from exc
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            if line.lstrip().startswith("{"):
                try:
                    rec = json.loads(line)
                    key = str(rec["id"])
                    vec = np.asarray(rec["vector"], dtype=np.float32)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise InputError(f"{path}:{lineno}: bad record: {exc}") from exc
            else:
                key, vec = _parse_text_embedding_line(line, lineno, path)
            if vec.ndim != 1:
                raise InputError(f"{path}:{lineno}: vector must be 1-dimensional")
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise InputError(
                    f"{path}:{lineno}: dimension {len(vec)} != {dim} seen earlier"
                )
            if key in vectors:
                raise InputError(f"{path}:{lineno}: duplicate id {key!r}")
            vectors[key] = vec
    return ExternalEmbeddingTable(vectors, dim or 0)
