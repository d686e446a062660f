"""Windowed continual training of the source and target models.

Per-step order is fixed: source forward (values only), entropy pass, adapter
and gate forward, main forward with the fused sequence representation, loss
composition, one backward, then the three optimizer updates (target side,
adapter+gate, discriminator).  The entropy pass has to precede fusion because
the gate consumes the fusion-free prediction entropy.

The source model is trained only inside `train_source_window`; during every
target step it runs through the value path, so its parameters never appear in
any differentiation graph and its snapshot hash is invariant across a window.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .datagen import (NUMERIC_DIM, PHI_DIM, DataConfig, WindowData,
                      generate_world, phi_matrix, sample_window)
from .graph import GstConfig, build_graph, gst_select, seed_nodes
from .losses import LossWeights, admission_weights, combined_loss
from .metrics import MetricsRow, auc
from .models import (Adapter, Batch, CvrModel, DomainDiscriminator, FusionGate,
                     ModelDims, distill_intensity, entropy_of_model, fuse,
                     save_checkpoint)
from .optim import Adagrad
from .rng import stream

TRANSFER_MODES = ("one_time", "continual")
SAMPLE_MODES = ("only_target", "merge_all", "gst_only", "gst_and_da")
FUSION_MODES = ("gated", "fixed_mix", "off")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    accumulator_decay: float = 0.9999
    batch_size: int = 256
    window_count: int = 4
    delta_t_windows: int = 2
    transfer_mode: str = "continual"
    sample_mode: str = "gst_and_da"
    disable_gate: bool = False        # ablation: fixed 0.5 fusion, gate untrained
    disable_fusion: bool = False      # adapted representation never enters the model
    disable_intensity: bool = False   # distillation weight 1 for every sample
    alpha: float = 0.5
    beta: float = 1.0
    source_pretrain_epochs: int = 3   # first fit of the source model
    source_epochs: int = 1            # each later refresh
    embed_dim: int = 16
    tower: tuple = (64, 32)
    adapter_hidden: int = 32
    disc_hidden: int = 16
    gst_fanout_cap: int = 500
    gst_max_nodes: int = 200_000
    gst_two_hop: bool = True
    eval_windows: tuple | None = None  # training-window indices; default: last only
    checkpoint_dir: str | None = None

    @property
    def fusion_mode(self) -> str:
        if self.disable_fusion:
            return "off"
        return "fixed_mix" if self.disable_gate else "gated"

    def validate(self):
        if self.transfer_mode not in TRANSFER_MODES:
            raise ValueError(f"unknown transfer_mode {self.transfer_mode!r}")
        if self.sample_mode not in SAMPLE_MODES:
            raise ValueError(f"unknown sample_mode {self.sample_mode!r}")
        if self.window_count < 1:
            raise ValueError("window_count must be >= 1")
        if self.delta_t_windows < 1:
            raise ValueError("delta_t_windows must be >= 1")
        if self.sample_mode == "gst_and_da" and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when domain adaptation is active")
        if self.eval_windows is not None:
            if any(w < 0 or w >= self.window_count for w in self.eval_windows):
                raise ValueError("eval_windows must lie inside [0, window_count)")
        LossWeights(self.alpha, self.beta).validate()

    def eval_window_list(self) -> tuple:
        if self.eval_windows is not None:
            return tuple(self.eval_windows)
        return (self.window_count - 1,)


def checkpoint_label(eval_windows, window, delta_t) -> str:
    k = (window - eval_windows[0]) // delta_t if len(eval_windows) > 1 else 0
    if k == 0:
        return "t"
    if k == 1:
        return "t+dt"
    return f"t+{k}dt"


@dataclass
class TrainState:
    t_model: CvrModel
    s_model: CvrModel
    adapter: Adapter
    gate: FusionGate
    disc: DomainDiscriminator
    opt_target: Adagrad
    opt_aux: Adagrad
    opt_disc: Adagrad
    opt_source: Adagrad
    window: int = 0
    step_breakdowns: list = field(default_factory=list)


class Trainer:
    def __init__(self, data_cfg: DataConfig, train_cfg: TrainConfig, seed: int,
                 name: str = "experiment"):
        train_cfg.validate()
        data_cfg.validate()
        self.data_cfg = data_cfg
        self.cfg = train_cfg
        self.seed = int(seed)
        self.name = name
        self.world = generate_world(data_cfg, seed)
        self.state = self._init_state()
        self.gst_cfg = GstConfig(
            enable_two_hop=train_cfg.gst_two_hop,
            max_expanded_nodes=train_cfg.gst_max_nodes,
            fanout_cap=train_cfg.gst_fanout_cap,
        )
        self._warmed_up = False

    # --- setup -----------------------------------------------------------

    def _dims(self) -> ModelDims:
        return ModelDims(
            n_users=self.data_cfg.n_users,
            n_items=self.data_cfg.n_items,
            embed_dim=self.cfg.embed_dim,
            seq_len=self.data_cfg.seq_len,
            numeric_dim=NUMERIC_DIM,
            tower=tuple(self.cfg.tower),
            adapter_hidden=self.cfg.adapter_hidden,
            disc_hidden=self.cfg.disc_hidden,
            phi_dim=PHI_DIM,
        )

    def _init_state(self) -> TrainState:
        dims = self._dims()
        cfg = self.cfg
        s_model = CvrModel(dims, stream(self.seed, "init", "source"), prefix="S")
        t_model = CvrModel(dims, stream(self.seed, "init", "target"), prefix="T")
        adapter = Adapter(dims, stream(self.seed, "init", "adapter"))
        gate = FusionGate(dims, stream(self.seed, "init", "gate"))
        disc = DomainDiscriminator(dims, stream(self.seed, "init", "disc"))
        mk = lambda params: Adagrad(params, cfg.learning_rate, cfg.accumulator_decay)
        return TrainState(
            t_model=t_model,
            s_model=s_model,
            adapter=adapter,
            gate=gate,
            disc=disc,
            opt_target=mk(t_model.parameters()),
            opt_aux=mk(adapter.parameters() + gate.parameters()),
            opt_disc=mk(disc.parameters()),
            opt_source=mk(s_model.parameters()),
        )

    def warm_up_from_source(self):
        """Copy every source parameter block into the target model, bitwise.
        Adapter, gate, and discriminator keep their fresh seeded values."""
        self.state.t_model.copy_values_from(self.state.s_model)
        self._warmed_up = True

    # --- source side -----------------------------------------------------

    def train_source_window(self, records, window: int, epochs: int | None = None):
        """Plain supervised training of the source model on one window."""
        st = self.state
        if epochs is None:
            epochs = self.cfg.source_epochs
        for epoch in range(epochs):
            rng = stream(self.seed, "source-shuffle", window, epoch)
            for batch in _batches(records, self.cfg.batch_size, rng):
                probs, _ = st.s_model.forward(batch)
                loss = ad.mean_all(ad.binary_cross_entropy(probs, batch.labels))
                ad.backward(loss)
                st.opt_source.step()
                st.opt_source.zero_grad()

    # --- target side -----------------------------------------------------

    def build_training_stream(self, win: WindowData) -> list:
        """Batches for one window under the configured sample mode."""
        mode = self.cfg.sample_mode
        if mode == "only_target":
            records = list(win.target_records)
        elif mode == "merge_all":
            records = list(win.target_records) + list(win.source_records)
        else:
            graph = build_graph(win.source_events)
            seeds = seed_nodes(graph, self.world.target_user_ids, self.world.target_item_ids)
            selected = gst_select(graph, seeds, self.gst_cfg, win.source_records)
            records = list(win.target_records) + selected
        if not records:
            raise ValueError(f"empty training stream for window {win.window}")
        rng = stream(self.seed, "shuffle", win.window)
        return _batches(records, self.cfg.batch_size, rng)

    def train_step(self, batch: Batch):
        """One optimization step; returns the loss breakdown."""
        st, cfg = self.state, self.cfg
        fusion = cfg.fusion_mode
        distill_on = cfg.alpha > 0
        adapter_on = distill_on or fusion != "off"

        # 1. source forward, value path only
        e_s = None
        if distill_on:
            _, e_s = st.s_model.forward_values(batch)

        # 2. fusion-free entropy of the target model
        entropy = entropy_of_model(st.t_model, batch) if fusion == "gated" else None

        # 3. adapter and gate
        adapted = None
        fused = None
        e_t = st.t_model.encode_sequence(batch)
        if adapter_on:
            adapted = st.adapter.forward(e_t)
        if fusion == "gated":
            gate_out = st.gate.forward(adapted, e_t, entropy)
            fused = fuse(gate_out, adapted, e_t)
        elif fusion == "fixed_mix":
            fused = fuse(ad.wrap(np.full((len(batch), 1), 0.5)), adapted, e_t)

        # 4. main forward with the fused representation
        probs, _ = st.t_model.forward(batch, seq_override=fused, e_seq=e_t)

        # 5. weights and losses
        da_on = cfg.sample_mode == "gst_and_da" and cfg.beta > 0
        domain_probs = None
        domain_labels = None
        if da_on:
            phi = phi_matrix(batch.records, self.data_cfg.n_items)
            domain_probs = st.disc.forward(phi)
            domain_labels = batch.is_target.astype(float).reshape(-1, 1)
            w_da = admission_weights(domain_probs.value, batch.is_target)
        else:
            w_da = np.ones(len(batch))

        w_pow = None
        if distill_on:
            w_pow = (np.ones(len(batch)) if cfg.disable_intensity
                     else distill_intensity(adapted.value, e_s))

        breakdown = combined_loss(
            probs, batch.labels, w_da, LossWeights(cfg.alpha, cfg.beta),
            adapted=adapted if distill_on else None,
            source_reps=e_s,
            w_pow=w_pow,
            domain_probs=domain_probs,
            domain_labels=domain_labels,
        )

        # 6. backward and the three updates
        ad.backward(breakdown.total_node)
        st.opt_target.step()
        st.opt_aux.step()
        st.opt_disc.step()
        st.opt_target.zero_grad()
        st.opt_aux.zero_grad()
        st.opt_disc.zero_grad()
        st.step_breakdowns.append(breakdown)
        return breakdown

    # --- evaluation ------------------------------------------------------

    def predict_values(self, batch: Batch) -> np.ndarray:
        """Deployment-path scores: fused representation, no source model."""
        st = self.state
        fusion = self.cfg.fusion_mode
        if fusion == "off":
            probs, _ = st.t_model.forward_values(batch)
            return probs
        e_t = st.t_model.encode_sequence_values(batch)
        adapted = st.adapter.forward_values(e_t)
        if fusion == "gated":
            entropy = entropy_of_model(st.t_model, batch)
            g = st.gate.forward_values(adapted, e_t, entropy)
        else:
            g = np.full((len(batch), 1), 0.5)
        probs, _ = st.t_model.forward_values(batch, seq_override=fuse(g, adapted, e_t))
        return probs

    def evaluate(self, records) -> float:
        scores = []
        labels = []
        for batch in _batches(records, max(self.cfg.batch_size, 512), rng=None):
            scores.append(self.predict_values(batch).reshape(-1))
            labels.append(batch.labels.reshape(-1))
        return auc(np.concatenate(scores), np.concatenate(labels))

    # --- full experiment ---------------------------------------------------

    def run(self) -> list:
        cfg = self.cfg
        started = time.perf_counter()
        eval_windows = cfg.eval_window_list()
        rows = []

        window0 = sample_window(self.world, 0)
        self.train_source_window(window0.source_records, window=0,
                                 epochs=cfg.source_pretrain_epochs)
        self.warm_up_from_source()

        current = window0
        for w in range(cfg.window_count):
            if w > 0:
                current = sample_window(self.world, w)
                refresh = cfg.transfer_mode == "continual" and w % cfg.delta_t_windows == 0
                if refresh:
                    self.train_source_window(current.source_records, window=w)
            self.state.window = w
            window_breakdowns_start = len(self.state.step_breakdowns)
            for batch in self.build_training_stream(current):
                self.train_step(batch)
            if cfg.checkpoint_dir:
                self._save_checkpoints(w)
            if w in eval_windows:
                nxt = sample_window(self.world, w + 1)
                steps = self.state.step_breakdowns[window_breakdowns_start:]
                rows.append(
                    MetricsRow(
                        experiment=self.name,
                        seed=self.seed,
                        checkpoint=checkpoint_label(eval_windows, w, cfg.delta_t_windows),
                        sample_mode=cfg.sample_mode,
                        transfer_mode=cfg.transfer_mode,
                        fusion_mode=cfg.fusion_mode,
                        disable_intensity=cfg.disable_intensity,
                        auc=self.evaluate(nxt.target_records),
                        l_y=float(np.mean([b.l_y for b in steps])),
                        l_di=float(np.mean([b.l_di for b in steps])),
                        l_da=float(np.mean([b.l_da for b in steps])),
                        seconds=time.perf_counter() - started,
                    )
                )
        return rows

    def _save_checkpoints(self, window: int):
        out = Path(self.cfg.checkpoint_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / f"target_w{window}.ckpt",
                        self.state.t_model.param_items(), self.seed, window)
        save_checkpoint(out / f"source_w{window}.ckpt",
                        self.state.s_model.param_items(), self.seed, window)


def _batches(records, batch_size: int, rng) -> list:
    records = list(records)
    if rng is not None:
        order = rng.permutation(len(records))
        records = [records[i] for i in order]
    return [Batch(records[i:i + batch_size]) for i in range(0, len(records), batch_size)]


def run_experiment(data_cfg: DataConfig, train_cfg: TrainConfig, seed: int,
                   name: str = "experiment") -> list:
    """Train through all windows and return one MetricsRow per checkpoint."""
    return Trainer(data_cfg, train_cfg, seed, name).run()
