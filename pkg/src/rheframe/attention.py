"""BiLSTM self-attention paragraph classifier with span-guided training.

The classifier scores each token position with a learned projection,
softmax-normalizes the scores into an attention distribution over non-pad
positions, and pools hidden states under that distribution. Guided training
adds a KL-divergence term pulling attention toward the normalized gold span
encoding, so the model both classifies paragraphs and localizes frames.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from rheframe._lstm_kernels import lstm_backward, lstm_forward
from rheframe._serialize import dump_blob, parse_blob, read_blob, write_blob
from rheframe.classify import ClassWeights, compute_class_weights
from rheframe.corpus import SpanAnnotation
from rheframe.embed import ExternalEmbeddingTable
from rheframe.errors import ConfigError, InputError, ModelError
from rheframe.evaluation import prf

logger = logging.getLogger(__name__)

ATTN_MAGIC = "RFD-ATT"
ATTN_VERSION = (1, 0)

KL_GOLD_TO_ATTENTION = "gold_to_attention"
KL_ATTENTION_TO_GOLD = "attention_to_gold"

_NEG_INF = -1e30


@dataclass(frozen=True)
class AttnConfig:
    hidden_size: int = 128
    attention_size: int = 64
    hops: int = 1
    guidance_weight: float = 1.0
    kl_epsilon: float = 1e-8
    kl_direction: str = KL_GOLD_TO_ATTENTION
    dropout: float = 0.0
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    patience: int = 3
    val_fraction: float = 0.1
    max_tokens: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.hops != 1:
            raise ConfigError("a single attention hop is required for span guidance")
        if self.guidance_weight < 0:
            raise ConfigError("guidance_weight must be >= 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.kl_direction not in (KL_GOLD_TO_ATTENTION, KL_ATTENTION_TO_GOLD):
            raise ConfigError(f"unknown kl_direction {self.kl_direction!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass(frozen=True)
class SpanDistribution:
    """Per-token probability mass of the gold span encoding."""

    probs: np.ndarray
    is_empty: bool


def span_binary(n_tokens: int, spans: Sequence[SpanAnnotation]) -> np.ndarray:
    """0-1 encoding of annotated token positions."""
    enc = np.zeros(n_tokens, dtype=np.float64)
    for span in spans:
        enc[span.start_token : span.end_token] = 1.0
    return enc


def normalize_span_encoding(binary: Sequence[float]) -> SpanDistribution:
    """Turn a 0-1 span encoding into a probability distribution.

    An all-zero encoding yields an empty-flagged distribution; no KL term
    applies to such paragraphs.
    """
    arr = np.asarray(binary, dtype=np.float64)
    total = arr.sum()
    if total <= 0:
        return SpanDistribution(probs=np.zeros_like(arr), is_empty=True)
    return SpanDistribution(probs=arr / total, is_empty=False)


def kl_divergence(g: np.ndarray, a: np.ndarray, eps: float = 1e-8) -> float:
    """KL(g || a) summed over the support of g."""
    g = np.asarray(g, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if g.shape != a.shape:
        raise InputError(f"length mismatch: {g.shape} vs {a.shape}")
    support = g > 0
    return float(np.sum(g[support] * np.log(g[support] / (a[support] + eps))))


def guided_loss(
    class_probs: np.ndarray,
    gold_label: bool,
    attention: np.ndarray,
    span_dist: SpanDistribution,
    weights: ClassWeights,
    guidance_weight: float,
    eps: float = 1e-8,
    kl_direction: str = KL_GOLD_TO_ATTENTION,
) -> float:
    """Per-example objective: weighted cross-entropy plus the guidance term.

    With ``guidance_weight`` 0 this is exactly the unguided self-attention
    objective. The KL term is skipped for empty span distributions.
    """
    w = weights.positive if gold_label else weights.negative
    p = float(class_probs[1] if gold_label else class_probs[0])
    loss = -w * np.log(max(p, 1e-12))
    if guidance_weight > 0 and not span_dist.is_empty:
        if len(span_dist.probs) != len(attention):
            raise InputError(
                f"span/attention length mismatch: {len(span_dist.probs)} vs {len(attention)}"
            )
        if kl_direction == KL_GOLD_TO_ATTENTION:
            loss += guidance_weight * kl_divergence(span_dist.probs, attention, eps)
        else:
            loss += guidance_weight * kl_divergence(attention, span_dist.probs, eps)
    return float(loss)


_PARAM_KEYS = ("Wx_f", "Wh_f", "b_f", "Wx_b", "Wh_b", "b_b", "Wa", "u", "Wo", "bo")


def _init_params(emb_dim: int, config: AttnConfig, rng: np.random.Generator) -> dict:
    h = config.hidden_size
    d_a = config.attention_size

    def glorot(fan_in, fan_out, shape):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    params = {}
    for direction in ("f", "b"):
        params[f"Wx_{direction}"] = glorot(emb_dim, 4 * h, (emb_dim, 4 * h))
        params[f"Wh_{direction}"] = glorot(h, 4 * h, (h, 4 * h))
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0  # forget-gate bias
        params[f"b_{direction}"] = bias
    params["Wa"] = glorot(2 * h, d_a, (2 * h, d_a))
    params["u"] = glorot(d_a, 1, (d_a,))
    params["Wo"] = glorot(2 * h, 2, (2 * h, 2))
    params["bo"] = np.zeros(2)
    return params


def _reverse_padded(X: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    out = np.zeros_like(X)
    for b, length in enumerate(lengths):
        out[:length, b] = X[:length, b][::-1]
    return out


class AttentionModel:
    """Frozen word embeddings plus trained BiLSTM/attention/output weights."""

    def __init__(
        self,
        config: AttnConfig,
        emb_tokens: list[str],
        emb_matrix: np.ndarray,
        params: dict[str, np.ndarray],
        class_weights: ClassWeights | None = None,
    ):
        self.config = config
        self.emb_tokens = emb_tokens
        self.emb_matrix = emb_matrix  # (V+1, E); last row is the OOV zero vector
        self.token_ids = {t: i for i, t in enumerate(emb_tokens)}
        self.params = params
        self.class_weights = class_weights or ClassWeights(1.0, 1.0)

    @property
    def emb_dim(self) -> int:
        return self.emb_matrix.shape[1]

    def ids_for(self, tokens: Sequence[str]) -> np.ndarray:
        oov = len(self.emb_tokens)
        return np.asarray(
            [self.token_ids.get(t, oov) for t in tokens[: self.config.max_tokens]],
            dtype=np.int64,
        )

    # --- batched forward/backward ---

    def _forward(self, id_lists: Sequence[np.ndarray], train_rng=None):
        B = len(id_lists)
        lengths = np.asarray([len(ids) for ids in id_lists], dtype=np.int64)
        if np.any(lengths == 0):
            raise InputError("cannot run attention over an empty token list")
        L = int(lengths.max())
        E = self.emb_dim
        X = np.zeros((L, B, E))
        mask = np.zeros((L, B))
        for b, ids in enumerate(id_lists):
            X[: len(ids), b] = self.emb_matrix[ids]
            mask[: len(ids), b] = 1.0
        p = self.params
        Hf, Cf, Gf = lstm_forward(X, p["Wx_f"], p["Wh_f"], p["b_f"])
        Xr = _reverse_padded(X, lengths)
        Hbr, Cbr, Gbr = lstm_forward(Xr, p["Wx_b"], p["Wh_b"], p["b_b"])
        Hb = _reverse_padded(Hbr, lengths)
        Hcat = np.concatenate([Hf, Hb], axis=2)  # (L, B, 2H)
        P = np.tanh(np.einsum("lbh,hd->lbd", Hcat, p["Wa"]))
        s = P @ p["u"]  # (L, B)
        s = np.where(mask > 0, s, _NEG_INF)
        s_shift = s - s.max(axis=0, keepdims=True)
        e = np.exp(s_shift) * mask
        a = e / e.sum(axis=0, keepdims=True)
        m = np.einsum("lb,lbh->bh", a, Hcat)
        drop_mask = None
        if train_rng is not None and self.config.dropout > 0.0:
            keep = 1.0 - self.config.dropout
            drop_mask = (train_rng.random(m.shape) < keep) / keep
            m = m * drop_mask
        logits = m @ p["Wo"] + p["bo"]
        logits = logits - logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        probs = expl / expl.sum(axis=1, keepdims=True)
        cache = {
            "X": X, "mask": mask, "lengths": lengths,
            "Hf": Hf, "Cf": Cf, "Gf": Gf,
            "Xr": Xr, "Hbr": Hbr, "Cbr": Cbr, "Gbr": Gbr,
            "Hcat": Hcat, "P": P, "a": a, "m": m,
            "probs": probs, "drop_mask": drop_mask,
        }
        return probs, a, cache

    def _loss_and_grads(
        self,
        cache: dict,
        labels: np.ndarray,
        g: np.ndarray,
        has_guidance: np.ndarray,
        sample_weights: np.ndarray,
    ):
        """Batch loss (mean) plus gradients for every parameter group."""
        cfg = self.config
        p = self.params
        probs, a, mask = cache["probs"], cache["a"], cache["mask"]
        Hcat, P = cache["Hcat"], cache["P"]
        B = probs.shape[0]
        t_idx = labels.astype(np.int64)
        ce = -np.log(probs[np.arange(B), t_idx] + 1e-12)
        loss = float(np.sum(sample_weights * ce) / B)
        lam = cfg.guidance_weight
        eps = cfg.kl_epsilon
        guided_cols = np.nonzero(has_guidance)[0] if lam > 0 else np.array([], dtype=int)
        for bcol in guided_cols:
            if cfg.kl_direction == KL_GOLD_TO_ATTENTION:
                loss += lam * kl_divergence(g[:, bcol], a[:, bcol], eps) / B
            else:
                valid = mask[:, bcol] > 0
                loss += lam * kl_divergence(
                    a[valid, bcol], g[valid, bcol], eps
                ) / B

        dlogits = probs.copy()
        dlogits[np.arange(B), t_idx] -= 1.0
        dlogits *= (sample_weights / B)[:, None]
        m = cache["m"]
        dWo = m.T @ dlogits
        dbo = dlogits.sum(axis=0)
        dm = dlogits @ p["Wo"].T
        if cache["drop_mask"] is not None:
            dm = dm * cache["drop_mask"]
        da = np.einsum("bh,lbh->lb", dm, Hcat)
        dHcat = a[:, :, None] * dm[None, :, :]
        for bcol in guided_cols:
            if cfg.kl_direction == KL_GOLD_TO_ATTENTION:
                support = g[:, bcol] > 0
                da[support, bcol] -= (lam / B) * g[support, bcol] / (a[support, bcol] + eps)
            else:
                valid = mask[:, bcol] > 0
                acol = a[valid, bcol]
                gcol = g[valid, bcol]
                da[valid, bcol] += (lam / B) * (
                    np.log((acol + 1e-300) / (gcol + eps)) + 1.0
                )
        inner = np.sum(a * da, axis=0, keepdims=True)
        ds = a * (da - inner)
        du = np.einsum("lbd,lb->d", P, ds)
        dP = ds[:, :, None] * p["u"][None, None, :]
        dPre = dP * (1.0 - P * P)
        dWa = np.einsum("lbh,lbd->hd", Hcat, dPre)
        dHcat += np.einsum("lbd,hd->lbh", dPre, p["Wa"])

        h = cfg.hidden_size
        dHf = np.ascontiguousarray(dHcat[:, :, :h])
        dHb = np.ascontiguousarray(dHcat[:, :, h:])
        lengths = cache["lengths"]
        dHbr = _reverse_padded(dHb, lengths)
        XT = np.ascontiguousarray(cache["X"].transpose(0, 2, 1))
        HfT = np.ascontiguousarray(cache["Hf"].transpose(0, 2, 1))
        dWx_f, dWh_f, db_f = lstm_backward(
            XT, HfT, cache["Cf"], cache["Gf"], dHf,
            np.ascontiguousarray(p["Wh_f"].T),
        )
        XrT = np.ascontiguousarray(cache["Xr"].transpose(0, 2, 1))
        HbrT = np.ascontiguousarray(cache["Hbr"].transpose(0, 2, 1))
        dWx_b, dWh_b, db_b = lstm_backward(
            XrT, HbrT, cache["Cbr"], cache["Gbr"], dHbr,
            np.ascontiguousarray(p["Wh_b"].T),
        )
        grads = {
            "Wx_f": dWx_f, "Wh_f": dWh_f, "b_f": db_f,
            "Wx_b": dWx_b, "Wh_b": dWh_b, "b_b": db_b,
            "Wa": dWa, "u": du, "Wo": dWo, "bo": dbo,
        }
        return loss, grads

    def predict(self, paragraphs: Sequence[Sequence[str]], batch_size: int = 64):
        """Class probabilities and attention weights for each paragraph."""
        probs_out = np.zeros((len(paragraphs), 2))
        attn_out: list[np.ndarray] = [np.zeros(0)] * len(paragraphs)
        for start in range(0, len(paragraphs), batch_size):
            chunk = list(range(start, min(start + batch_size, len(paragraphs))))
            id_lists = [self.ids_for(paragraphs[i]) for i in chunk]
            probs, a, cache = self._forward(id_lists)
            for ci, i in enumerate(chunk):
                probs_out[i] = probs[ci]
                attn_out[i] = a[: cache["lengths"][ci], ci].copy()
        return probs_out, attn_out

    # --- persistence ---

    def _header(self) -> dict:
        return {
            "config": asdict(self.config),
            "tokens": self.emb_tokens,
            "class_weights": [self.class_weights.negative, self.class_weights.positive],
        }

    def _arrays(self) -> dict[str, np.ndarray]:
        arrays = {"emb": self.emb_matrix.astype(np.float32)}
        arrays.update({k: self.params[k] for k in _PARAM_KEYS})
        return arrays

    def save(self, path) -> None:
        write_blob(path, ATTN_MAGIC, ATTN_VERSION, self._header(), self._arrays())

    def to_bytes(self) -> bytes:
        return dump_blob(ATTN_MAGIC, ATTN_VERSION, self._header(), self._arrays())

    @classmethod
    def _from_parts(cls, header, arrays) -> "AttentionModel":
        config = AttnConfig(**header["config"])
        params = {k: arrays[k] for k in _PARAM_KEYS}
        return cls(
            config=config,
            emb_tokens=list(header["tokens"]),
            emb_matrix=arrays["emb"].astype(np.float64),
            params=params,
            class_weights=ClassWeights(*header["class_weights"]),
        )

    @classmethod
    def load(cls, path) -> "AttentionModel":
        _, header, arrays = read_blob(path, ATTN_MAGIC, ATTN_VERSION[0])
        return cls._from_parts(header, arrays)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttentionModel":
        _, header, arrays = parse_blob(data, ATTN_MAGIC, ATTN_VERSION[0])
        return cls._from_parts(header, arrays)


def attention_forward(
    tokens: Sequence[str],
    model: AttentionModel,
) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and attention weights for one paragraph."""
    if len(tokens) == 0:
        raise InputError("cannot classify an empty paragraph")
    probs, attn = model.predict([list(tokens)])
    return probs[0], attn[0]


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for key, grad in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * grad * grad
            self.params[key] -= self.lr * (self.m[key] / b1c) / (
                np.sqrt(self.v[key] / b2c) + self.eps
            )


def _prepare_guidance(
    paragraphs: Sequence[Sequence[str]],
    span_encodings: Sequence[np.ndarray | None],
    max_tokens: int,
) -> list[SpanDistribution]:
    dists = []
    n_dropped = 0
    for tokens, enc in zip(paragraphs, span_encodings):
        if enc is None:
            dists.append(SpanDistribution(np.zeros(min(len(tokens), max_tokens)), True))
            continue
        enc = np.asarray(enc, dtype=np.float64)
        if len(tokens) > max_tokens and enc[max_tokens:].any():
            # annotated tokens fall beyond the cap: no usable guidance
            dists.append(SpanDistribution(np.zeros(max_tokens), True))
            n_dropped += 1
            continue
        dists.append(normalize_span_encoding(enc[:max_tokens]))
    if n_dropped:
        logger.warning(
            "%d paragraphs lost span guidance to the %d-token cap", n_dropped, max_tokens
        )
    return dists


def _stratified_val_split(labels: np.ndarray, frac: float, rng: np.random.Generator):
    train_idx, val_idx = [], []
    for cls in (False, True):
        idx = np.nonzero(labels == cls)[0]
        idx = rng.permutation(idx)
        n_val = int(round(frac * len(idx)))
        if len(idx) >= 2:
            n_val = min(max(n_val, 1), len(idx) - 1)
        else:
            n_val = 0
        val_idx.extend(idx[:n_val].tolist())
        train_idx.extend(idx[n_val:].tolist())
    return np.asarray(sorted(train_idx)), np.asarray(sorted(val_idx))


def train_attention_model(
    paragraphs: Sequence[Sequence[str]],
    labels: Sequence[bool],
    span_encodings: Sequence[np.ndarray | None],
    config: AttnConfig,
    word_embeddings: ExternalEmbeddingTable,
) -> tuple[AttentionModel, list[dict]]:
    """Train on tokenized paragraphs with early stopping.

    ``span_encodings`` holds the per-paragraph 0-1 gold encodings (None for
    negatives). A stratified slice of the training set is held out; training
    stops once its class-weighted cross-entropy has not improved for
    ``patience`` epochs, restoring the best epoch's weights. Returns the
    model plus per-epoch log records.
    """
    y = np.asarray(labels, dtype=bool)
    if len(paragraphs) != len(y) or len(span_encodings) != len(y):
        raise InputError("paragraphs, labels, and span encodings must align")
    if y.all() or not y.any():
        raise InputError("training requires both classes present")
    keep = [i for i, toks in enumerate(paragraphs) if len(toks) > 0]
    if len(keep) < len(paragraphs):
        logger.warning("dropping %d empty paragraphs", len(paragraphs) - len(keep))
    paragraphs = [list(paragraphs[i])[: config.max_tokens] for i in keep]
    y = y[keep]
    span_encodings = [span_encodings[i] for i in keep]

    emb_tokens = sorted(word_embeddings.vectors)
    emb_dim = word_embeddings.dim
    emb_matrix = np.zeros((len(emb_tokens) + 1, emb_dim))
    for i, tok in enumerate(emb_tokens):
        emb_matrix[i] = word_embeddings.vectors[tok]

    rng = np.random.default_rng(config.seed)
    params = _init_params(emb_dim, config, rng)
    weights = compute_class_weights(y)
    model = AttentionModel(config, emb_tokens, emb_matrix, params, weights)

    dists = _prepare_guidance(paragraphs, span_encodings, config.max_tokens)
    id_lists = [model.ids_for(toks) for toks in paragraphs]
    train_idx, val_idx = _stratified_val_split(y, config.val_fraction, rng)
    optimizer = _Adam(params, config.learning_rate)
    sample_w = weights.per_sample(y)

    def batch_arrays(indices):
        ids = [id_lists[i] for i in indices]
        L = max(len(x) for x in ids)
        g = np.zeros((L, len(indices)))
        has_g = np.zeros(len(indices), dtype=bool)
        for col, i in enumerate(indices):
            if not dists[i].is_empty:
                g[: len(dists[i].probs), col] = dists[i].probs
                has_g[col] = True
        return ids, g, has_g

    def validation_metrics():
        if len(val_idx) == 0:
            return None, None
        ce_total = 0.0
        preds = np.zeros(len(val_idx), dtype=bool)
        for start in range(0, len(val_idx), config.batch_size):
            chunk = val_idx[start : start + config.batch_size]
            ids = [id_lists[i] for i in chunk]
            probs, _, _ = model._forward(ids)
            t_idx = y[chunk].astype(np.int64)
            ce = -np.log(probs[np.arange(len(chunk)), t_idx] + 1e-12)
            ce_total += float(np.sum(sample_w[chunk] * ce))
            preds[start : start + len(chunk)] = probs[:, 1] >= 0.5
        macro = prf(y[val_idx], preds).macro_f1 if len(set(y[val_idx])) > 0 else 0.0
        return ce_total / len(val_idx), macro

    log: list[dict] = []
    best_val = np.inf
    best_params = None
    best_epoch = -1
    stall = 0
    for epoch in range(config.epochs):
        order = rng.permutation(train_idx)
        total_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            ids, g, has_g = batch_arrays(chunk)
            _, _, cache = model._forward(ids, train_rng=rng if config.dropout > 0 else None)
            loss, grads = model._loss_and_grads(cache, y[chunk], g, has_g, sample_w[chunk])
            optimizer.step(grads)
            total_loss += loss * len(chunk)
        train_loss = total_loss / max(len(order), 1)
        val_loss, val_f1 = validation_metrics()
        monitored = train_loss if val_loss is None else val_loss
        log.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": monitored,
                "val_macro_f1": val_f1 if val_f1 is not None else float("nan"),
            }
        )
        if monitored < best_val - 1e-9:
            best_val = monitored
            best_params = copy.deepcopy(params)
            best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break
    if best_params is not None:
        for key in params:
            params[key] = best_params[key]
        model.params = params
    model.best_epoch = best_epoch
    logger.info("restored weights from epoch %d (val loss %.6f)", best_epoch, best_val)
    return model, log


def save_training_log(log: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def extract_frame_spans(
    attention: np.ndarray,
    threshold_factor: float = 2.0,
    tokens: Sequence[str] | None = None,
) -> list[SpanAnnotation]:
    """Decode spans as maximal runs of tokens holding at least
    ``threshold_factor`` times the uniform attention mass."""
    a = np.asarray(attention, dtype=np.float64)
    if a.size == 0:
        raise InputError("cannot extract spans from empty attention weights")
    threshold = threshold_factor / len(a)
    selected = a >= threshold
    spans: list[SpanAnnotation] = []
    start = None
    for i, sel in enumerate(selected.tolist() + [False]):
        if sel and start is None:
            start = i
        elif not sel and start is not None:
            surface = " ".join(tokens[start:i]) if tokens is not None else ""
            spans.append(SpanAnnotation(start, i, surface))
            start = None
    return spans


def gold_span_mass(attention: np.ndarray, binary: np.ndarray) -> float:
    """Total attention mass on annotated tokens (localization metric)."""
    a = np.asarray(attention, dtype=np.float64)
    b = np.asarray(binary, dtype=np.float64)[: len(a)]
    return float(np.sum(a[: len(b)] * (b > 0)))


def attention_gradient_check(
    model: AttentionModel,
    paragraphs: Sequence[Sequence[str]],
    labels: Sequence[bool],
    span_encodings: Sequence[np.ndarray | None],
    h: float = 1e-5,
) -> float:
    """Max relative error of analytic vs central-difference gradients."""
    y = np.asarray(labels, dtype=bool)
    dists = _prepare_guidance(paragraphs, span_encodings, model.config.max_tokens)
    id_lists = [model.ids_for(toks) for toks in paragraphs]
    sample_w = model.class_weights.per_sample(y)
    L = max(len(x) for x in id_lists)
    g = np.zeros((L, len(id_lists)))
    has_g = np.zeros(len(id_lists), dtype=bool)
    for col, dist in enumerate(dists):
        if not dist.is_empty:
            g[: len(dist.probs), col] = dist.probs
            has_g[col] = True

    def total_loss() -> float:
        _, _, cache = model._forward(id_lists)
        loss, _ = model._loss_and_grads(cache, y, g, has_g, sample_w)
        return loss

    _, _, cache = model._forward(id_lists)
    _, grads = model._loss_and_grads(cache, y, g, has_g, sample_w)
    worst = 0.0
    for key in _PARAM_KEYS:
        flat = model.params[key].reshape(-1)
        gflat = grads[key].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = total_loss()
            flat[i] = orig - h
            down = total_loss()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst
