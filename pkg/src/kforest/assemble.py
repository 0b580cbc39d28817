"""Fragment assembly: match knowledge fragments to facet label texts.

Texts are encoded as three fixed n-gram representation matrices (unigram,
bigram, trigram): embedded tokens pass through seeded random convolution
filters, a rectifier, and segment max-pooling down to ``pooled_rows`` rows.
A fragment and a facet label text (FaLT) then form three row-wise cosine
similarity matrices, which a small trainable head (3x3 convolution, 8 maps,
rectifier, 2x2 max-pool, fully connected logit, sigmoid) scores as a binary
match. Representation filters stay frozen; only the head trains.

Everything is float64 and deterministic: seeded filter initialization,
seeded shuffles, no other randomness.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyFacetTree,
    EmptyTrainingSet,
    NonFiniteLoss,
    ShapeMismatch,
    UntrainedModel,
)
from .ingest import EmbeddingTable, FaLTRepository, lookup
from .model import FacetPath, FacetTree, KnowledgeFragment
from .text import tokenize

WINDOW_SIZES = (1, 2, 3)
CHECKPOINT_FORMAT = "kforest-assembler/1"


@dataclass(frozen=True)
class RepresentationParams:
    max_tokens: int = 128
    feature_maps: int = 64
    pooled_rows: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_tokens < 3:
            raise ValueError(f"max_tokens must be >= 3, got {self.max_tokens}")
        if self.feature_maps < 1:
            raise ValueError(f"feature_maps must be >= 1, got {self.feature_maps}")
        if self.pooled_rows < 1:
            raise ValueError(f"pooled_rows must be >= 1, got {self.pooled_rows}")


@dataclass(frozen=True)
class TrainingParams:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0


@dataclass(frozen=True)
class FragmentRep:
    """Three pooled_rows x feature_maps matrices, one per n-gram size."""

    channels: tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class SimilarityChannels:
    """Three pooled_rows x pooled_rows cosine matrices, one per n-gram size."""

    channels: tuple[np.ndarray, np.ndarray, np.ndarray]

    def stacked(self) -> np.ndarray:
        return np.stack(self.channels)


_FILTER_CACHE: dict[tuple[int, int, int], tuple[np.ndarray, ...]] = {}


def representation_filters(params: RepresentationParams, dim: int) -> tuple[np.ndarray, ...]:
    """Seeded random projection filters, one (feature_maps, n, dim) array per
    window size. Fixed for the lifetime of a model; never trained."""
    key = (params.feature_maps, dim, params.seed)
    cached = _FILTER_CACHE.get(key)
    if cached is None:
        rng = np.random.default_rng(params.seed)
        cached = tuple(
            rng.standard_normal((params.feature_maps, n, dim)) / math.sqrt(n * dim)
            for n in WINDOW_SIZES
        )
        _FILTER_CACHE[key] = cached
    return cached


def represent(text: str, table: EmbeddingTable, params: RepresentationParams) -> FragmentRep:
    """Encode a text as three n-gram representation matrices."""
    return represent_with_filters(text, table, params, representation_filters(params, table.dimension))


def represent_with_filters(
    text: str,
    table: EmbeddingTable,
    params: RepresentationParams,
    filters: Sequence[np.ndarray],
) -> FragmentRep:
    ell = params.max_tokens
    tokens = tokenize(text)[:ell]
    matrix = np.zeros((ell, table.dimension))
    for i, tok in enumerate(tokens):
        matrix[i] = lookup(table, tok)
    channels = []
    for n, filt in zip(WINDOW_SIZES, filters):
        rows = ell - n + 1
        windows = np.lib.stride_tricks.sliding_window_view(matrix, (n, table.dimension))
        windows = windows.reshape(rows, n, table.dimension)
        conv = np.einsum("tnc,knc->tk", windows, filt)
        np.maximum(conv, 0.0, out=conv)
        channels.append(_segment_max_pool(conv, params.pooled_rows))
    return FragmentRep(channels=(channels[0], channels[1], channels[2]))


def _segment_max_pool(activations: np.ndarray, r: int) -> np.ndarray:
    """Max over r contiguous row segments (ceiling division); short inputs
    leave trailing segments at zero."""
    rows, maps = activations.shape
    seg = max(1, math.ceil(rows / r))
    padded = np.zeros((seg * r, maps))
    padded[:rows] = activations
    return padded.reshape(r, seg, maps).max(axis=1)


def similarity_channels(frag: FragmentRep, falt: FragmentRep) -> SimilarityChannels:
    """Row-wise cosine similarity per channel; zero-norm rows score 0."""
    out = []
    for a, b in zip(frag.channels, falt.channels):
        if a.shape != b.shape:
            raise ShapeMismatch(f"fragment rows {a.shape} vs FaLT rows {b.shape}")
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        denom = np.outer(na, nb)
        sim = np.zeros((a.shape[0], b.shape[0]))
        nonzero = denom > 0.0
        raw = a @ b.T
        sim[nonzero] = raw[nonzero] / denom[nonzero]
        np.clip(sim, -1.0, 1.0, out=sim)
        out.append(sim)
    return SimilarityChannels(channels=(out[0], out[1], out[2]))


@dataclass
class AssemblerModel:
    """Frozen representation filters plus the trainable similarity head."""

    rep_params: RepresentationParams
    embedding_dim: int
    rep_filters: tuple[np.ndarray, ...]
    conv_w: np.ndarray  # (head_maps, 3, 3, 3)
    conv_b: np.ndarray  # (head_maps,)
    fc_w: np.ndarray  # (head_maps * q * q,)
    fc_b: float
    head_maps: int = 8
    trained: bool = False

    def pooled_side(self) -> int:
        return (self.rep_params.pooled_rows - 2) // 2

    def head_parameters(self) -> dict[str, np.ndarray]:
        return {"conv_w": self.conv_w, "conv_b": self.conv_b, "fc_w": self.fc_w,
                "fc_b": np.array([self.fc_b])}

    def copy(self) -> "AssemblerModel":
        return replace(
            self,
            conv_w=self.conv_w.copy(),
            conv_b=self.conv_b.copy(),
            fc_w=self.fc_w.copy(),
        )


def new_model(
    rep_params: RepresentationParams, embedding_dim: int, head_maps: int = 8
) -> AssemblerModel:
    """Seeded fresh model. Head convolution biases start slightly positive so
    the rectifier passes gradient on degenerate all-zero inputs."""
    r = rep_params.pooled_rows
    if r < 4:
        raise ValueError(f"pooled_rows must be >= 4 for the 3x3 head, got {r}")
    q = (r - 2) // 2
    rng = np.random.default_rng(rep_params.seed)
    # Consume the representation-filter draws first so the head sees a
    # model-specific but reproducible stream.
    filters = tuple(
        rng.standard_normal((rep_params.feature_maps, n, embedding_dim)) / math.sqrt(n * embedding_dim)
        for n in WINDOW_SIZES
    )
    conv_w = rng.standard_normal((head_maps, 3, 3, 3)) / math.sqrt(27.0)
    fc_w = rng.standard_normal(head_maps * q * q) / math.sqrt(head_maps * q * q)
    return AssemblerModel(
        rep_params=rep_params,
        embedding_dim=embedding_dim,
        rep_filters=filters,
        conv_w=conv_w,
        conv_b=np.full(head_maps, 0.01),
        fc_w=fc_w,
        fc_b=0.0,
        head_maps=head_maps,
    )


def _model_filters(model: AssemblerModel) -> tuple[np.ndarray, ...]:
    return model.rep_filters


def represent_for_model(model: AssemblerModel, text: str, table: EmbeddingTable) -> FragmentRep:
    if table.dimension != model.embedding_dim:
        raise ShapeMismatch(
            f"table dimension {table.dimension} vs model dimension {model.embedding_dim}"
        )
    return represent_with_filters(text, table, model.rep_params, _model_filters(model))


# --- head forward / backward ---

def _head_forward(model: AssemblerModel, x: np.ndarray):
    """x: (batch, 3, r, r) similarity channels. Returns probabilities and the
    intermediates needed for the backward pass."""
    q = model.pooled_side()
    windows = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(2, 3))
    z1 = np.einsum("bcijuv,kcuv->bkij", windows, model.conv_w) + model.conv_b[None, :, None, None]
    a1 = np.maximum(z1, 0.0)
    cropped = a1[:, :, : 2 * q, : 2 * q]
    blocks = (
        cropped.reshape(x.shape[0], model.head_maps, q, 2, q, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(x.shape[0], model.head_maps, q, q, 4)
    )
    arg = np.argmax(blocks, axis=-1)
    pooled = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    flat = pooled.reshape(x.shape[0], -1)
    z2 = flat @ model.fc_w + model.fc_b
    prob = _sigmoid(z2)
    return prob, (windows, z1, arg, flat, z2)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _head_backward(model: AssemblerModel, x: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy over the batch and its gradients."""
    batch = x.shape[0]
    q = model.pooled_side()
    prob, (windows, z1, arg, flat, z2) = _head_forward(model, x)
    loss = _bce_from_logits(z2, y)
    dz2 = (prob - y) / batch
    grad_fc_w = flat.T @ dz2
    grad_fc_b = float(dz2.sum())
    dflat = np.outer(dz2, model.fc_w)
    dpooled = dflat.reshape(batch, model.head_maps, q, q)
    dblocks = np.zeros((batch, model.head_maps, q, q, 4))
    np.put_along_axis(dblocks, arg[..., None], dpooled[..., None], axis=-1)
    dcropped = (
        dblocks.reshape(batch, model.head_maps, q, q, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, model.head_maps, 2 * q, 2 * q)
    )
    da1 = np.zeros_like(z1)
    da1[:, :, : 2 * q, : 2 * q] = dcropped
    dz1 = da1 * (z1 > 0.0)
    grad_conv_w = np.einsum("bcijuv,bkij->kcuv", windows, dz1)
    grad_conv_b = dz1.sum(axis=(0, 2, 3))
    grads = {
        "conv_w": grad_conv_w,
        "conv_b": grad_conv_b,
        "fc_w": grad_fc_w,
        "fc_b": np.array([grad_fc_b]),
    }
    return loss, grads


def forward(model: AssemblerModel, channels: SimilarityChannels) -> float:
    """Match probability for one similarity stack; pure and deterministic."""
    x = channels.stacked()
    r = model.rep_params.pooled_rows
    if x.shape != (3, r, r):
        raise ShapeMismatch(f"expected channels of shape (3, {r}, {r}), got {x.shape}")
    prob, _ = _head_forward(model, x[None])
    return float(prob[0])


TrainingTriple = tuple[KnowledgeFragment, "str | FacetPath", int]


def train(
    model: AssemblerModel,
    triples: Sequence[TrainingTriple],
    falt_repo: FaLTRepository,
    table: EmbeddingTable,
    params: TrainingParams = TrainingParams(),
) -> tuple[AssemblerModel, list[float]]:
    """Train the head on labeled (fragment, facet, 0/1) triples.

    Representations are computed once up front (the filters are frozen), so
    training touches only the head. Returns a new trained model and the
    per-epoch mean loss trace.
    """
    if not triples:
        raise EmptyTrainingSet("no training triples")
    rep_cache: dict[str, FragmentRep] = {}

    def rep_of(text: str) -> FragmentRep:
        rep = rep_cache.get(text)
        if rep is None:
            rep = represent_for_model(model, text, table)
            rep_cache[text] = rep
        return rep

    stacks = []
    labels = []
    for fragment, facet, label in triples:
        name = facet[-1] if isinstance(facet, tuple) else facet
        falt_text = falt_repo.lookup(name, topic=fragment.topic)
        channels = similarity_channels(rep_of(fragment.text), rep_of(falt_text))
        stacks.append(channels.stacked())
        labels.append(float(label))
    x_all = np.stack(stacks)
    y_all = np.array(labels)

    out = model.copy()
    velocity = {name: np.zeros_like(arr) for name, arr in out.head_parameters().items()}
    rng = np.random.default_rng(params.seed)
    trace: list[float] = []
    n = x_all.shape[0]
    for _ in range(params.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, params.batch_size):
            batch = order[start : start + params.batch_size]
            loss, grads = _head_backward(out, x_all[batch], y_all[batch])
            if not math.isfinite(loss):
                raise NonFiniteLoss(
                    f"loss diverged at epoch {len(trace) + 1}, batch offset {start}"
                )
            total += loss * batch.size
            for name in velocity:
                velocity[name] = params.momentum * velocity[name] - params.learning_rate * grads[name]
            out.conv_w += velocity["conv_w"]
            out.conv_b += velocity["conv_b"]
            out.fc_w += velocity["fc_w"]
            out.fc_b += float(velocity["fc_b"][0])
        trace.append(total / n)
    out.trained = True
    return out, trace


def grad_check(model: AssemblerModel, sample: tuple[SimilarityChannels, int], step: float = 1e-4) -> float:
    """Compare analytic head gradients against central finite differences.

    Returns the max relative error over every head parameter, falling back
    to absolute error where both magnitudes are below 1e-8.
    """
    x = sample[0].stacked()[None]
    y = np.array([float(sample[1])])
    _, grads = _head_backward(model, x, y)
    work = model.copy()
    arrays = {
        "conv_w": work.conv_w,
        "conv_b": work.conv_b,
        "fc_w": work.fc_w,
    }

    def loss_now() -> float:
        _, (_, _, _, _, z2) = _head_forward(work, x)
        return _bce_from_logits(z2, y)

    worst = 0.0

    def accumulate(analytic: float, numeric: float) -> None:
        nonlocal worst
        denom = max(abs(analytic), abs(numeric))
        err = abs(analytic - numeric) if denom < 1e-8 else abs(analytic - numeric) / denom
        worst = max(worst, err)

    for name, arr in arrays.items():
        grad = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss_now()
            arr[idx] = orig - step
            down = loss_now()
            arr[idx] = orig
            accumulate(float(grad[idx]), (up - down) / (2 * step))
            it.iternext()

    orig_b = work.fc_b
    work.fc_b = orig_b + step
    up = loss_now()
    work.fc_b = orig_b - step
    down = loss_now()
    work.fc_b = orig_b
    accumulate(float(grads["fc_b"][0]), (up - down) / (2 * step))
    return worst


def assign_facets(
    model: AssemblerModel,
    fragment: KnowledgeFragment,
    tree: FacetTree,
    falt_repo: FaLTRepository,
    table: EmbeddingTable,
    min_one: bool = False,
) -> set[FacetPath]:
    """Facet paths of the fragment's topic tree scoring probability >= 0.5.

    With ``min_one`` set, an all-below-threshold fragment still receives the
    single best facet (ties broken by lexicographic path).
    """
    if not model.trained:
        raise UntrainedModel("assign_facets requires a trained model")
    if not tree.paths:
        raise EmptyFacetTree(tree.topic)
    frag_rep = represent_for_model(model, fragment.text, table)
    falt_reps: dict[str, FragmentRep] = {}
    selected: set[FacetPath] = set()
    best_path: Optional[FacetPath] = None
    best_score = -1.0
    for path in tree.sorted_paths():
        falt_text = falt_repo.lookup(path[-1], topic=tree.topic)
        rep = falt_reps.get(falt_text)
        if rep is None:
            rep = represent_for_model(model, falt_text, table)
            falt_reps[falt_text] = rep
        score = forward(model, similarity_channels(frag_rep, rep))
        if score >= 0.5:
            selected.add(path)
        if score > best_score:
            best_score = score
            best_path = path
    if not selected and min_one and best_path is not None:
        selected.add(best_path)
    return selected


# --- checkpointing ---

def _encode_array(arr: np.ndarray) -> dict:
    contiguous = np.ascontiguousarray(arr, dtype=np.float64)
    return {
        "shape": list(contiguous.shape),
        "data": base64.b64encode(contiguous.tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    data = base64.b64decode(obj["data"])
    return np.frombuffer(data, dtype=np.float64).reshape(obj["shape"]).copy()


def save_model(model: AssemblerModel, path: str | Path) -> None:
    """Structured-text checkpoint; loading restores bit-identical behavior."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "rep_params": {
            "max_tokens": model.rep_params.max_tokens,
            "feature_maps": model.rep_params.feature_maps,
            "pooled_rows": model.rep_params.pooled_rows,
            "seed": model.rep_params.seed,
        },
        "embedding_dim": model.embedding_dim,
        "head_maps": model.head_maps,
        "trained": model.trained,
        "fc_b": model.fc_b,
        "arrays": {
            "rep_filter_1": _encode_array(model.rep_filters[0]),
            "rep_filter_2": _encode_array(model.rep_filters[1]),
            "rep_filter_3": _encode_array(model.rep_filters[2]),
            "conv_w": _encode_array(model.conv_w),
            "conv_b": _encode_array(model.conv_b),
            "fc_w": _encode_array(model.fc_w),
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> AssemblerModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {payload.get('format')!r}")
    arrays = payload["arrays"]
    rp = payload["rep_params"]
    return AssemblerModel(
        rep_params=RepresentationParams(
            max_tokens=rp["max_tokens"],
            feature_maps=rp["feature_maps"],
            pooled_rows=rp["pooled_rows"],
            seed=rp["seed"],
        ),
        embedding_dim=payload["embedding_dim"],
        rep_filters=(
            _decode_array(arrays["rep_filter_1"]),
            _decode_array(arrays["rep_filter_2"]),
            _decode_array(arrays["rep_filter_3"]),
        ),
        conv_w=_decode_array(arrays["conv_w"]),
        conv_b=_decode_array(arrays["conv_b"]),
        fc_w=_decode_array(arrays["fc_w"]),
        fc_b=payload["fc_b"],
        head_maps=payload["head_maps"],
        trained=payload["trained"],
    )
