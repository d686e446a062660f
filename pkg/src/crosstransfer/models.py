"""Parametric components: the conversion model used for both the target and
source sides, the adapter that re-expresses the target sequence
representation, the entropy-aware fusion gate, and the domain discriminator.

Each component exposes a graph-building `forward` (used when the component is
being trained) and a plain-numpy `forward_values` twin that performs the same
arithmetic without constructing any differentiation graph.  The source model
only ever runs through the value path, which is what guarantees that no
gradient for it can even be materialized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .datagen import PAD, TARGET, PhiFeatures

CHECKPOINT_VERSION = "crosstransfer-checkpoint-v1"


@dataclass(frozen=True)
class ModelDims:
    n_users: int
    n_items: int
    embed_dim: int = 16
    seq_len: int = 10
    numeric_dim: int = 4
    tower: tuple = (64, 32)
    adapter_hidden: int = 32
    disc_hidden: int = 16
    phi_dim: int = 6


class Batch:
    """Dense arrays for one batch of records, ready for either forward path."""

    def __init__(self, records):
        if not records:
            raise ValueError("empty batch")
        self.records = list(records)
        self.user_ids = np.array([r.user_id for r in records], dtype=np.int64)
        self.item_ids = np.array([r.item_id for r in records], dtype=np.int64)
        seq = np.array([r.behavior_seq for r in records], dtype=np.int64)
        self.seq_mask = seq != PAD
        self.seq_ids = np.where(self.seq_mask, seq, 0)  # pads masked out downstream
        self.all_pad = ~self.seq_mask.any(axis=1)
        self.numeric = np.array([r.numeric_features for r in records], dtype=np.float64)
        self.labels = np.array([[float(r.label)] for r in records])
        self.is_target = np.array([r.domain == TARGET for r in records])
        self.windows = np.array([r.window for r in records], dtype=np.int64)

    def __len__(self):
        return len(self.user_ids)


def _init_linear(rng, fan_in, fan_out, scale=None):
    scale = (1.0 / np.sqrt(fan_in)) if scale is None else scale
    return rng.normal(0.0, scale, size=(fan_in, fan_out))


class CvrModel:
    """Embeddings, target attention over the click sequence, and an MLP tower.

    Attention weights are softmax over non-pad positions of
    candidate . seq_emb / sqrt(embed_dim); an all-pad sequence falls back to a
    learned default vector so downstream cosine terms stay well-defined.
    """

    def __init__(self, dims: ModelDims, rng, prefix: str = "model"):
        self.dims = dims
        d = dims.embed_dim
        p = prefix
        self.user_emb = ad.parameter(rng.normal(0.0, 0.1, (dims.n_users, d)), f"{p}.user_emb")
        self.item_emb = ad.parameter(rng.normal(0.0, 0.1, (dims.n_items, d)), f"{p}.item_emb")
        self.seq_pad_bias = ad.parameter(rng.normal(0.0, 0.1, (1, d)), f"{p}.seq_pad_bias")
        self.tower: list = []
        fan_in = 3 * d + dims.numeric_dim
        for li, width in enumerate(dims.tower):
            w = ad.parameter(_init_linear(rng, fan_in, width), f"{p}.tower{li}.w")
            b = ad.parameter(np.zeros(width), f"{p}.tower{li}.b")
            self.tower.append((w, b))
            fan_in = width
        self.logit_w = ad.parameter(_init_linear(rng, fan_in, 1), f"{p}.logit.w")
        self.logit_b = ad.parameter(np.zeros(1), f"{p}.logit.b")

    def param_items(self):
        items = [
            ("user_emb", self.user_emb),
            ("item_emb", self.item_emb),
            ("seq_pad_bias", self.seq_pad_bias),
        ]
        for li, (w, b) in enumerate(self.tower):
            items += [(f"tower{li}.w", w), (f"tower{li}.b", b)]
        items += [("logit.w", self.logit_w), ("logit.b", self.logit_b)]
        return items

    def parameters(self):
        return [node for _, node in self.param_items()]

    def shape_signature(self):
        return tuple((name, node.value.shape) for name, node in self.param_items())

    def copy_values_from(self, other: "CvrModel"):
        if self.shape_signature() != other.shape_signature():
            raise ValueError("shape signature mismatch between models")
        for (_, dst), (_, src) in zip(self.param_items(), other.param_items()):
            dst.value = src.value.copy()

    def values_hash(self) -> int:
        import zlib
        h = 0
        for _, node in self.param_items():
            h = zlib.crc32(node.value.tobytes(), h)
        return h

    # --- graph path ---

    def encode_sequence(self, batch: Batch, return_weights: bool = False):
        d = self.dims.embed_dim
        cand = ad.gather_rows(self.item_emb, batch.item_ids)
        seq = ad.gather_rows(self.item_emb, batch.seq_ids)
        logits = ad.mul(ad.batched_dot(seq, cand), 1.0 / np.sqrt(d))
        weights = ad.masked_softmax(logits, batch.seq_mask)
        pooled = ad.weighted_sum(weights, seq)
        fallback = ad.mul(self.seq_pad_bias, batch.all_pad[:, None].astype(float))
        e_seq = ad.add(pooled, fallback)
        if return_weights:
            return e_seq, weights
        return e_seq

    def forward(self, batch: Batch, seq_override: ad.Node | None = None,
                e_seq: ad.Node | None = None):
        """Probability node [B, 1] plus the native sequence representation.

        `seq_override` swaps the fused representation into the tower while the
        native one is still returned for gate and distillation consumers;
        `e_seq` reuses an already-encoded native representation.
        """
        if e_seq is None:
            e_seq = self.encode_sequence(batch)
        seq_term = e_seq if seq_override is None else seq_override
        user_e = ad.gather_rows(self.user_emb, batch.user_ids)
        item_e = ad.gather_rows(self.item_emb, batch.item_ids)
        x = ad.concat([user_e, item_e, seq_term, ad.wrap(batch.numeric)])
        for w, b in self.tower:
            x = ad.relu(ad.add(ad.matmul(x, w), b))
        logit = ad.add(ad.matmul(x, self.logit_w), self.logit_b)
        return ad.sigmoid(logit), e_seq

    # --- value path (no graph; used for the source model and evaluation) ---

    def encode_sequence_values(self, batch: Batch) -> np.ndarray:
        d = self.dims.embed_dim
        if batch.item_ids.max(initial=0) >= self.dims.n_items or batch.seq_ids.max(initial=0) >= self.dims.n_items:
            raise IndexError("item id outside vocabulary")
        cand = self.item_emb.value[batch.item_ids]
        seq = self.item_emb.value[batch.seq_ids]
        logits = np.einsum("bld,bd->bl", seq, cand) * (1.0 / np.sqrt(d))
        rowmax = np.max(np.where(batch.seq_mask, logits, -np.inf), axis=-1, keepdims=True)
        rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
        e = np.where(batch.seq_mask, np.exp(logits - rowmax), 0.0)
        denom = e.sum(axis=-1, keepdims=True)
        weights = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
        pooled = np.einsum("bl,bld->bd", weights, seq)
        return pooled + self.seq_pad_bias.value * batch.all_pad[:, None].astype(float)

    def forward_values(self, batch: Batch, seq_override: np.ndarray | None = None):
        if batch.user_ids.max(initial=0) >= self.dims.n_users:
            raise IndexError("user id outside vocabulary")
        e_seq = self.encode_sequence_values(batch)
        seq_term = e_seq if seq_override is None else seq_override
        x = np.concatenate(
            [self.user_emb.value[batch.user_ids], self.item_emb.value[batch.item_ids],
             seq_term, batch.numeric],
            axis=1,
        )
        for w, b in self.tower:
            x = np.maximum(x @ w.value + b.value, 0.0)
        logit = x @ self.logit_w.value + self.logit_b.value
        return expit(logit), e_seq


def entropy_of_model(model: CvrModel, batch: Batch) -> np.ndarray:
    """Prediction entropy of the fusion-free forward pass, [B, 1], no graph."""
    probs, _ = model.forward_values(batch)
    return ad.binary_entropy(probs)


ADAPTER_GAIN = 0.5  # keeps the tanh hidden units in their near-linear range


class Adapter:
    """Two-layer map of the target sequence representation toward the source
    one.  The input is always gradient-stopped: every loss through the output
    trains the adapter alone, never the backbone that produced the input.

    Initialized near the identity so the adapted representation starts
    well-scaled and readable by the downstream tower; the distillation loss
    then bends its direction toward the source representation.
    """

    def __init__(self, dims: ModelDims, rng, prefix: str = "adapter"):
        d, h = dims.embed_dim, dims.adapter_hidden
        if h < d:
            raise ValueError(f"adapter_hidden must be >= embed_dim, got {h} < {d}")
        w1 = rng.normal(0.0, 0.02, size=(d, h))
        w1[:, :d] += ADAPTER_GAIN * np.eye(d)
        w2 = rng.normal(0.0, 0.02, size=(h, d))
        w2[:d, :] += np.eye(d) / ADAPTER_GAIN
        self.w1 = ad.parameter(w1, f"{prefix}.w1")
        self.b1 = ad.parameter(np.zeros(h), f"{prefix}.b1")
        self.w2 = ad.parameter(w2, f"{prefix}.w2")
        self.b2 = ad.parameter(np.zeros(d), f"{prefix}.b2")

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, e_seq_t: ad.Node) -> ad.Node:
        x = ad.stop_gradient(e_seq_t)
        hidden = ad.tanh(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(hidden, self.w2), self.b2)

    def forward_values(self, e_seq_t: np.ndarray) -> np.ndarray:
        hidden = np.tanh(e_seq_t @ self.w1.value + self.b1.value)
        return hidden @ self.w2.value + self.b2.value


GATE_BIAS_INIT = -4.0     # confident samples start with the gate nearly closed
GATE_ENTROPY_INIT = 4.0   # uncertain samples start with it partially open


class FusionGate:
    """Scalar gate from (adapted rep, native rep, prediction entropy).

    Gate inputs are gradient-stopped so the only path from the task loss into
    the backbone is the (1 - g) * native term of the fusion itself.

    The entropy channel is seeded positive at init: fusion weight rises with
    prediction uncertainty from the very first step (up to sigmoid(-4 + 4 ln 2)
    at maximum entropy), and supervision refines the policy from there.
    """

    def __init__(self, dims: ModelDims, rng, prefix: str = "gate"):
        d = dims.embed_dim
        w = _init_linear(rng, 2 * d + 1, 1, scale=0.1 / np.sqrt(2 * d + 1))
        w[-1, 0] = GATE_ENTROPY_INIT
        self.w = ad.parameter(w, f"{prefix}.w")
        self.b = ad.parameter(np.full(1, GATE_BIAS_INIT), f"{prefix}.b")

    def parameters(self):
        return [self.w, self.b]

    def forward(self, adapted: ad.Node, native: ad.Node, entropy: np.ndarray) -> ad.Node:
        x = ad.concat([ad.stop_gradient(adapted), ad.stop_gradient(native), ad.wrap(entropy)])
        return ad.sigmoid(ad.add(ad.matmul(x, self.w), self.b))

    def forward_values(self, adapted: np.ndarray, native: np.ndarray, entropy: np.ndarray) -> np.ndarray:
        x = np.concatenate([adapted, native, entropy], axis=1)
        return expit(x @ self.w.value + self.b.value)


def fuse(gate_out, adapted, native):
    """Convex combination g * adapted + (1 - g) * native; works on Nodes or arrays."""
    if isinstance(gate_out, ad.Node):
        one_minus = ad.add(ad.neg(gate_out), 1.0)
        return ad.add(ad.mul(gate_out, adapted), ad.mul(one_minus, native))
    return gate_out * adapted + (1.0 - gate_out) * native


def distill_intensity(adapted_values: np.ndarray, source_values: np.ndarray) -> np.ndarray:
    """Per-sample weight (1 - cos)/2 in [0, 1]: misaligned pairs distill harder.

    Plain arrays in, plain array out; never part of any gradient path.
    """
    nu = np.linalg.norm(adapted_values, axis=1)
    nv = np.linalg.norm(source_values, axis=1)
    if np.any(nu == 0.0) or np.any(nv == 0.0):
        row = int(np.argmax((nu == 0.0) | (nv == 0.0)))
        raise ValueError(f"distill_intensity: zero-norm representation at row {row}")
    cos = np.einsum("bd,bd->b", adapted_values, source_values) / (nu * nv)
    return (1.0 - cos) / 2.0


class DomainDiscriminator:
    """MLP over domain-independent features predicting target-domain membership."""

    def __init__(self, dims: ModelDims, rng, prefix: str = "disc"):
        self.w1 = ad.parameter(_init_linear(rng, dims.phi_dim, dims.disc_hidden), f"{prefix}.w1")
        self.b1 = ad.parameter(np.zeros(dims.disc_hidden), f"{prefix}.b1")
        self.w2 = ad.parameter(_init_linear(rng, dims.disc_hidden, 1), f"{prefix}.w2")
        self.b2 = ad.parameter(np.zeros(1), f"{prefix}.b2")

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, phi: PhiFeatures) -> ad.Node:
        if not isinstance(phi, PhiFeatures):
            raise TypeError("discriminator input must be PhiFeatures")
        x = ad.wrap(phi.array)
        hidden = ad.relu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.sigmoid(ad.add(ad.matmul(hidden, self.w2), self.b2))

    def forward_values(self, phi: PhiFeatures) -> np.ndarray:
        if not isinstance(phi, PhiFeatures):
            raise TypeError("discriminator input must be PhiFeatures")
        hidden = np.maximum(phi.array @ self.w1.value + self.b1.value, 0.0)
        return expit(hidden @ self.w2.value + self.b2.value)


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then raw little-endian float64 blocks


def save_checkpoint(path, param_items, seed: int, window: int) -> None:
    blocks = [(name, list(node.value.shape)) for name, node in param_items]
    header = {
        "version": CHECKPOINT_VERSION,
        "seed": int(seed),
        "window": int(window),
        "blocks": blocks,
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for _, node in param_items:
            fh.write(np.ascontiguousarray(node.value, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        values = {}
        for name, shape in header["blocks"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"checkpoint truncated inside block {name!r}")
            values[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header, values


def restore_checkpoint(path, param_items) -> dict:
    """Load a checkpoint into existing parameters; shape signature must match."""
    header, values = load_checkpoint(path)
    expected = [[name, list(node.value.shape)] for name, node in param_items]
    if header["blocks"] != expected:
        raise ValueError("checkpoint shape signature does not match the model")
    for name, node in param_items:
        node.value = values[name]
    return header
