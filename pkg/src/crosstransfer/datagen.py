"""Deterministic synthetic generator of a large source domain and a sparse
target sub-channel with temporal drift.

World mechanics
---------------
Every user and item carries two independent latent vectors: an *aligned*
vector that drives discount-channel behavior and an *alternative* vector for
behavior far from it.  Per-item alignment q_i (the item's discount level)
blends the item side once per world; the user-side blend is decided per
record by browsing context (see below):

    i~ = q_i * i + (1 - q_i) * i_alt                      (drifts by R_w)
    u~ = q * u + (1 - q) * u_alt
    P(purchase | click) = sigmoid(scale * u~ . R_w i~ + bias_domain
                                  + seq_gain * session)

where `session` is the mean latent dot between the clicked history and the
drifted candidate: the signal a sequence encoder is supposed to extract.

Traffic comes in per-user streaks.  Users interact repeatedly inside small
preferred item pools (which keeps pair statistics learnable and the
interaction graph sparse).  Target users alternate between a discount-hunting
context, where clicks land in the mini-app on their in-channel pool and taste
is expressed at full strength (q = affinity), and a general-browsing context,
where clicks land in the source domain and taste expression shrinks toward
the alternative latent unless the recent history is discount-heavy.  A target
user's general-context records are therefore genuinely conflicting evidence
for the mini-app task, and the only observable trace is the recent-history
discount level, which is exactly what the domain discriminator gets to see.

R_w rotates item latents inside one fixed random 2-D plane by
window * drift_angle, so conditionals shift over time while marginals stay
put; in the session term only the candidate side rotates, so the
co-preference geometry itself keeps moving.

Item ids are assigned in descending popularity order (id 0 is the most
popular item), which makes an item's normalized popularity rank id/n_items a
pure function of the id.

Everything is a pure function of (config, seed): each window draws from its
own named stream, so windows can be produced independently and in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .rng import stream

PAD = -1

SOURCE = "source"
TARGET = "target"

NUMERIC_DIM = 4
PHI_DIM = NUMERIC_DIM + 2  # numeric features + (seq length, mean popularity rank)


@dataclass(frozen=True)
class DataConfig:
    n_users: int = 2000
    n_items: int = 1000
    latent_dim: int = 8
    seq_len: int = 10
    target_user_frac: float = 0.15
    target_item_frac: float = 0.10
    target_window_records: int = 10_000
    source_target_ratio: float = 100.0
    drift_angle: float = 0.15
    bias_target: float = -1.4
    bias_source: float = -1.8
    logit_scale: float = 1.6
    # weight of the session term: affinity of the candidate with the user's
    # recent clicks, the signal a sequence encoder is supposed to extract
    seq_gain: float = 2.5
    numeric_noise: float = 0.08
    # how strongly a user's pool tilts toward items matching their affinity
    affinity_item_tilt: float = 4.0
    target_activity_boost: float = 1.5
    # users interact repeatedly within a small preferred pool; repeat visits
    # are what make pair-level statistics learnable at desk scale
    source_pool_size: int = 14
    target_pool_size: int = 8
    pool_zipf: float = 0.8
    # target users alternate between a discount-hunting context (mini-app
    # traffic) and general browsing (source traffic) in sticky streaks
    context_stay: float = 0.75
    # in general context, taste expression shrinks toward the alternative
    # latent unless the recent history is discount-heavy
    context_floor: float = 0.3

    def validate(self):
        if min(self.n_users, self.n_items, self.latent_dim, self.seq_len) <= 0:
            raise ValueError("n_users, n_items, latent_dim, seq_len must be positive")
        for name in ("target_user_frac", "target_item_frac"):
            f = getattr(self, name)
            if not 0.0 < f < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {f}")
        if self.target_window_records <= 0 or self.source_target_ratio <= 0:
            raise ValueError("window volumes must be positive")
        if self.target_pool_size > self.source_pool_size:
            raise ValueError("target_pool_size cannot exceed source_pool_size")
        if self.source_pool_size > self.n_items:
            raise ValueError("source_pool_size cannot exceed n_items")
        n_ti = int(round(self.target_item_frac * self.n_items))
        if self.target_pool_size > n_ti:
            raise ValueError("target_pool_size cannot exceed the target item count")


@dataclass(frozen=True)
class World:
    config: DataConfig
    global_seed: int
    user_latents: np.ndarray       # [n_users, d], aligned channel
    user_alt_latents: np.ndarray   # [n_users, d]
    item_latents: np.ndarray       # [n_items, d]
    item_alt_latents: np.ndarray   # [n_items, d]
    user_affinity: np.ndarray      # [n_users] in [0, 1]
    item_alignment: np.ndarray     # [n_items] in [0, 1], tracks discount level
    user_activity: np.ndarray      # [n_users] sampling weights
    target_user_ids: np.ndarray    # sorted subset of user ids
    target_item_ids: np.ndarray    # sorted subset of item ids
    drift_plane: np.ndarray        # [d, 2] orthonormal
    source_pool: np.ndarray        # [n_users, source_pool_size] preferred items
    target_pool: np.ndarray        # [n_users, target_pool_size]; -1 off-channel


@dataclass(frozen=True)
class SampleRecord:
    user_id: int
    item_id: int
    behavior_seq: tuple        # last seq_len clicked item ids, PAD at the tail
    numeric_features: tuple
    label: int
    domain: str
    window: int


@dataclass(frozen=True)
class InteractionEvent:
    user_id: int
    item_id: int
    kind: str                  # click | pay
    domain: str
    window: int


@dataclass(frozen=True)
class WindowData:
    window: int
    source_records: list
    target_records: list
    all_records: list = field(repr=False, default_factory=list)  # stream order
    source_events: list = field(repr=False, default_factory=list)
    target_events: list = field(repr=False, default_factory=list)


class PhiFeatures:
    """Domain-independent feature matrix, the only admissible discriminator input."""

    __slots__ = ("array",)

    def __init__(self, array: np.ndarray):
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 2 or array.shape[1] != PHI_DIM:
            raise ValueError(f"phi matrix must be [n, {PHI_DIM}], got {array.shape}")
        self.array = array


def generate_world(config: DataConfig, seed: int) -> World:
    config.validate()
    rng = stream(seed, "world")
    d = config.latent_dim
    scale = d ** -0.25  # unit-variance latent dot products

    user_latents = rng.normal(size=(config.n_users, d)) * scale
    user_alt = rng.normal(size=(config.n_users, d)) * scale
    item_latents = rng.normal(size=(config.n_items, d)) * scale
    item_alt = rng.normal(size=(config.n_items, d)) * scale

    n_tu = int(round(config.target_user_frac * config.n_users))
    n_ti = int(round(config.target_item_frac * config.n_items))
    target_users = np.sort(rng.choice(config.n_users, size=n_tu, replace=False))
    target_items = np.sort(rng.choice(config.n_items, size=n_ti, replace=False))

    is_tu = np.zeros(config.n_users, dtype=bool)
    is_tu[target_users] = True
    is_ti = np.zeros(config.n_items, dtype=bool)
    is_ti[target_items] = True

    user_affinity = np.where(
        is_tu, rng.uniform(0.70, 0.95, config.n_users), rng.uniform(0.05, 0.45, config.n_users)
    )
    item_alignment = np.where(
        is_ti, rng.uniform(0.75, 0.95, config.n_items), rng.uniform(0.05, 0.55, config.n_items)
    )

    activity = rng.lognormal(0.0, 0.6, config.n_users)
    activity[target_users] *= config.target_activity_boost

    plane, _ = np.linalg.qr(rng.normal(size=(d, 2)))

    # popularity weights follow the id order (id 0 most popular)
    log_pop = -0.7 * np.log(np.arange(config.n_items) + 10.0)
    tilt = config.affinity_item_tilt * user_affinity[:, None] * item_alignment[None, :]
    source_pool = _gumbel_top_k(rng, log_pop[None, :] + tilt, config.source_pool_size)

    target_pool = np.full((config.n_users, config.target_pool_size), -1, dtype=np.int64)
    t_logw = np.tile(log_pop[target_items] + item_alignment[target_items], (n_tu, 1))
    picks = _gumbel_top_k(rng, t_logw, config.target_pool_size)
    target_pool[target_users] = target_items[picks]

    # a target user's entire-space browsing mixes their discounted favorites
    # with ordinary popular goods (general browsing, no discount tilt)
    general = _gumbel_top_k(rng, np.tile(log_pop, (n_tu, 1)), config.source_pool_size)
    for pos, u in enumerate(target_users):
        merged = list(dict.fromkeys(list(target_pool[u]) + list(general[pos])))
        source_pool[u] = merged[: config.source_pool_size]

    return World(
        config=config,
        global_seed=int(seed),
        user_latents=user_latents,
        user_alt_latents=user_alt,
        item_latents=item_latents,
        item_alt_latents=item_alt,
        user_affinity=user_affinity,
        item_alignment=item_alignment,
        user_activity=activity,
        target_user_ids=target_users,
        target_item_ids=target_items,
        drift_plane=plane,
        source_pool=source_pool,
        target_pool=target_pool,
    )


def _gumbel_top_k(rng, log_weights: np.ndarray, k: int) -> np.ndarray:
    """Per-row weighted sampling of k distinct columns (Gumbel top-k)."""
    scores = log_weights + rng.gumbel(size=log_weights.shape)
    idx = np.argpartition(-scores, k - 1, axis=1)[:, :k]
    row_scores = np.take_along_axis(scores, idx, axis=1)
    order = np.argsort(-row_scores, axis=1)
    return np.take_along_axis(idx, order, axis=1)


def drift_rotation(world: World, window: int) -> np.ndarray:
    """Rotation of the latent space by window * drift_angle inside the drift plane."""
    theta = window * world.config.drift_angle
    e1, e2 = world.drift_plane[:, 0], world.drift_plane[:, 1]
    eye = np.eye(world.config.latent_dim)
    return (
        eye
        + (np.cos(theta) - 1.0) * (np.outer(e1, e1) + np.outer(e2, e2))
        + np.sin(theta) * (np.outer(e2, e1) - np.outer(e1, e2))
    )


def blended_latents(world: World):
    """Affinity/alignment-blended latents before any drift rotation."""
    a = world.user_affinity[:, None]
    q = world.item_alignment[:, None]
    users = a * world.user_latents + (1.0 - a) * world.user_alt_latents
    items = q * world.item_latents + (1.0 - q) * world.item_alt_latents
    return users, items


def effective_latents(world: World, window: int):
    """Blended user latents and drifted blended item latents for one window."""
    users, items = blended_latents(world)
    return users, items @ drift_rotation(world, window).T


def pair_logits(world: World, user_ids, item_ids, window: int, domain: str) -> np.ndarray:
    users, items = effective_latents(world, window)
    bias = world.config.bias_target if domain == TARGET else world.config.bias_source
    dots = np.einsum("nd,nd->n", users[user_ids], items[item_ids])
    return world.config.logit_scale * dots + bias


def _zipf_weights(k: int, exponent: float) -> np.ndarray:
    w = (np.arange(k) + 2.0) ** -exponent
    return w / w.sum()


def sample_window(
    world: World,
    window_idx: int,
    n_target: int | None = None,
    ratio: float | None = None,
    stream_index: int | None = None,
) -> WindowData:
    """Generate one window of interleaved source and target traffic.

    `stream_index` overrides which per-window random stream is used (the
    drift still follows `window_idx`); it exists so zero-drift windows can be
    reproduced exactly across window indices.
    """
    if window_idx < 0:
        raise ValueError(f"window_idx must be >= 0, got {window_idx}")
    cfg = world.config
    n_target = cfg.target_window_records if n_target is None else n_target
    ratio = cfg.source_target_ratio if ratio is None else ratio
    rng = stream(world.global_seed, "window", window_idx if stream_index is None else stream_index)

    # target users produce 2x the target volume; with a symmetric context
    # chain half of it lands in the mini-app, the rest browses the source
    n_tu_events = 2 * n_target
    n_far = int(rng.poisson(max(ratio - 1.0, 0.0) * n_target))

    t_act = world.user_activity[world.target_user_ids]
    tu_users = rng.choice(world.target_user_ids, size=n_tu_events, p=t_act / t_act.sum())
    far_ids = np.setdiff1d(np.arange(cfg.n_users), world.target_user_ids)
    f_act = world.user_activity[far_ids]
    far_users = rng.choice(far_ids, size=n_far, p=f_act / f_act.sum())

    users = np.concatenate([tu_users, far_users])
    order = rng.permutation(len(users))
    users = users[order]
    n_all = len(users)

    is_target_user = np.zeros(cfg.n_users, dtype=bool)
    is_target_user[world.target_user_ids] = True
    switch_draws = rng.random(n_all)
    init_draws = rng.random(n_all)
    slot_t = rng.choice(cfg.target_pool_size, size=n_all,
                        p=_zipf_weights(cfg.target_pool_size, cfg.pool_zipf))
    slot_s = rng.choice(cfg.source_pool_size, size=n_all,
                        p=_zipf_weights(cfg.source_pool_size, cfg.pool_zipf))

    # chronological pass: context streaks decide the channel, and each record
    # sees the user's clicks so far
    histories: dict[int, list] = {}
    states: dict[int, bool] = {}
    items = np.zeros(n_all, dtype=np.int64)
    is_target = np.zeros(n_all, dtype=bool)
    seqs = np.full((n_all, cfg.seq_len), PAD, dtype=np.int64)
    for pos in range(n_all):
        u = int(users[pos])
        if is_target_user[u]:
            if u not in states:
                states[u] = init_draws[pos] < 0.5
            elif switch_draws[pos] > cfg.context_stay:
                states[u] = not states[u]
            on = states[u]
        else:
            on = False
        is_target[pos] = on
        items[pos] = (world.target_pool[u, slot_t[pos]] if on
                      else world.source_pool[u, slot_s[pos]])
        hist = histories.setdefault(u, [])
        tail = hist[-cfg.seq_len:]
        if tail:
            seqs[pos, : len(tail)] = tail
        hist.append(int(items[pos]))

    logits = window_logits(world, users, items, seqs, window_idx, is_target)
    labels = (rng.random(n_all) < expit(logits)).astype(np.int64)

    noise = cfg.numeric_noise
    numeric = np.stack(
        [
            (1.0 - world.item_alignment[items]) + noise * rng.normal(size=n_all),
            world.user_affinity[users] + noise * rng.normal(size=n_all),
            items / cfg.n_items + noise * rng.normal(size=n_all),
            history_context(world, seqs) + noise * rng.normal(size=n_all),
        ],
        axis=1,
    )

    src_records, tgt_records, all_records = [], [], []
    for pos in range(n_all):
        record = SampleRecord(
            user_id=int(users[pos]),
            item_id=int(items[pos]),
            behavior_seq=tuple(int(x) for x in seqs[pos]),
            numeric_features=tuple(numeric[pos]),
            label=int(labels[pos]),
            domain=TARGET if is_target[pos] else SOURCE,
            window=window_idx,
        )
        (tgt_records if is_target[pos] else src_records).append(record)
        all_records.append(record)

    return WindowData(
        window=window_idx,
        source_records=src_records,
        target_records=tgt_records,
        all_records=all_records,
        source_events=derive_events(src_records),
        target_events=derive_events(tgt_records),
    )


def session_affinity(world: World, items, seqs, window: int) -> np.ndarray:
    """Mean latent dot between the non-pad history and the drifted candidate.

    Only the candidate side rotates: which items go together is itself what
    drifts, so a model must keep re-learning the current co-preference
    geometry rather than a drift-invariant one.
    """
    _, base_items = blended_latents(world)
    mask = seqs != PAD
    seq_latents = base_items[np.where(mask, seqs, 0)] * mask[:, :, None]
    counts = np.maximum(mask.sum(axis=1), 1)
    mean_hist = seq_latents.sum(axis=1) / counts[:, None]
    drifted_cand = base_items[items] @ drift_rotation(world, window).T
    return np.einsum("nd,nd->n", mean_hist, drifted_cand)


def history_context(world: World, seqs) -> np.ndarray:
    """Mean discount alignment of the non-pad history, 0.5 when empty."""
    mask = seqs != PAD
    align = world.item_alignment[np.where(mask, seqs, 0)] * mask
    counts = mask.sum(axis=1)
    return np.where(counts > 0, align.sum(axis=1) / np.maximum(counts, 1), 0.5)


def window_logits(world: World, users, items, seqs, window: int, is_target) -> np.ndarray:
    """Full label logit: context-blended static pair term, session term, bias.

    In the mini-app the discount-hunting taste (aligned latent) is expressed
    at full strength; in general browsing its expression shrinks toward the
    alternative latent unless the recent history is discount-heavy.  That
    makes a user's general-context records genuinely conflicting evidence for
    the mini-app task, detectable only through the recent-history context.
    """
    cfg = world.config
    ctx = history_context(world, seqs)
    aff = world.user_affinity[users]
    q = np.where(is_target, aff, aff * (cfg.context_floor + (1.0 - cfg.context_floor) * ctx))
    u_eff = q[:, None] * world.user_latents[users] + (1.0 - q)[:, None] * world.user_alt_latents[users]
    _, base_items = blended_latents(world)
    drifted = base_items @ drift_rotation(world, window).T
    static = cfg.logit_scale * np.einsum("nd,nd->n", u_eff, drifted[items])
    bias = np.where(is_target, cfg.bias_target, cfg.bias_source)
    return static + bias + cfg.seq_gain * session_affinity(world, items, seqs, window)


def derive_events(records) -> list:
    """Every record is a click; positive labels add a pay on the same pair."""
    events = []
    for r in records:
        events.append(InteractionEvent(r.user_id, r.item_id, "click", r.domain, r.window))
        if r.label == 1:
            events.append(InteractionEvent(r.user_id, r.item_id, "pay", r.domain, r.window))
    return events


def phi_features(record: SampleRecord, n_items: int) -> np.ndarray:
    """Domain-independent feature vector: numeric features plus two
    order-insensitive behavior summaries (non-pad length, mean popularity
    rank of the clicked items).  Never touches the domain tag or raw ids."""
    seq = np.asarray(record.behavior_seq)
    valid = seq != PAD
    count = int(valid.sum())
    if count:
        mean_rank = float(seq[valid].mean()) / n_items
    else:
        mean_rank = 0.5
    length = count / len(seq)
    return np.concatenate([np.asarray(record.numeric_features, float), [length, mean_rank]])


def phi_matrix(records, n_items: int) -> PhiFeatures:
    return PhiFeatures(np.stack([phi_features(r, n_items) for r in records]))


# ---------------------------------------------------------------------------
# dataset files: one record per line, versioned header


FILE_VERSION = "crosstransfer-records-v1"
_COLUMNS = "user_id\titem_id\tlabel\tdomain\twindow\tbehavior_seq\tnumeric_features"


def write_records(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#{FILE_VERSION}\n")
        fh.write(_COLUMNS + "\n")
        for r in records:
            seq = "|".join(str(i) for i in r.behavior_seq)
            num = "|".join(format(x, ".17g") for x in r.numeric_features)
            fh.write(f"{r.user_id}\t{r.item_id}\t{r.label}\t{r.domain}\t{r.window}\t{seq}\t{num}\n")


def read_records(path) -> list:
    with open(path, encoding="utf-8") as fh:
        version = fh.readline().strip().lstrip("#")
        if version != FILE_VERSION:
            raise ValueError(f"unsupported records file version {version!r}")
        header = fh.readline().strip()
        if header != _COLUMNS.strip():
            raise ValueError("records file header does not match the documented layout")
        records = []
        for line in fh:
            uid, iid, label, domain, window, seq, num = line.rstrip("\n").split("\t")
            records.append(
                SampleRecord(
                    user_id=int(uid),
                    item_id=int(iid),
                    behavior_seq=tuple(int(x) for x in seq.split("|")),
                    numeric_features=tuple(float(x) for x in num.split("|")),
                    label=int(label),
                    domain=domain,
                    window=int(window),
                )
            )
    return records


def with_overrides(config: DataConfig, **kwargs) -> DataConfig:
    return replace(config, **kwargs)
