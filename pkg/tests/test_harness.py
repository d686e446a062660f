import numpy as np
import pytest

from crosstransfer import harness as hn
from crosstransfer import metrics as mt
from crosstransfer.datagen import DataConfig
from crosstransfer.trainer import TrainConfig
from oracles import pairwise_auc


def tiny_data():
    return DataConfig(
        n_users=120, n_items=80, latent_dim=5, seq_len=4,
        target_user_frac=0.25, target_item_frac=0.25,
        target_window_records=150, source_target_ratio=2.0, drift_angle=0.2,
    )


def tiny_train(**kw):
    base = dict(batch_size=64, window_count=2, delta_t_windows=1,
                embed_dim=5, tower=(8, 6), adapter_hidden=6, disc_hidden=5)
    base.update(kw)
    return TrainConfig(**base)


def row(experiment="e", seed=0, checkpoint="t", auc=0.7):
    return mt.MetricsRow(experiment, seed, checkpoint, "gst_and_da", "continual",
                         "gated", False, auc, 0.5, 0.1, 0.6, 1.23)


class TestAuc:
    def test_perfect_separation(self):
        assert mt.auc([0.1, 0.2, 0.9, 0.8], [0, 0, 1, 1]) == 1.0

    def test_all_ties_half(self):
        assert mt.auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_matches_pairwise_oracle_with_ties(self):
        rng = np.random.default_rng(0)
        scores = np.round(rng.random(200), 2)  # heavy ties
        labels = (rng.random(200) < 0.4).astype(int)
        assert abs(mt.auc(scores, labels) - pairwise_auc(scores, labels)) < 1e-12

    def test_single_class_error_names_counts(self):
        with pytest.raises(ValueError, match="5 positive / 0 negative"):
            mt.auc(np.arange(5), np.ones(5))

    def test_oracle_equivalence_random_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(2, 120))
            scores = np.round(rng.random(n), 1)
            labels = (rng.random(n) < 0.5).astype(int)
            if labels.sum() in (0, n):
                continue
            assert abs(mt.auc(scores, labels) - pairwise_auc(scores, labels)) < 1e-12


class TestAggregation:
    def test_mean_is_arithmetic_mean(self):
        rows = [row(seed=s, auc=a) for s, a in enumerate([0.6, 0.7, 0.8])]
        aggs = hn.aggregate(rows)
        assert len(aggs) == 1
        assert aggs[0].mean_auc == pytest.approx(0.7)
        assert aggs[0].n_seeds == 3

    def test_stderr(self):
        vals = [0.6, 0.7, 0.8]
        aggs = hn.aggregate([row(seed=s, auc=a) for s, a in enumerate(vals)])
        expect = np.std(vals, ddof=1) / np.sqrt(3)
        assert aggs[0].stderr_auc == pytest.approx(expect)

    def test_groups_by_experiment_and_checkpoint(self):
        rows = [row("a", 0, "t"), row("a", 0, "t+dt"), row("b", 0, "t")]
        aggs = hn.aggregate(rows)
        assert [(a.experiment, a.checkpoint) for a in aggs] == [
            ("a", "t"), ("a", "t+dt"), ("b", "t")]


class TestSuites:
    def test_spec_shapes(self):
        data, train = tiny_data(), tiny_train()
        assert [s.name for s in hn.suite_specs("sample_transfer", data, train)] == [
            "only_target", "merge_all", "gst_only", "gst_and_da"]
        assert [s.name for s in hn.suite_specs("adaptive_ablation", data, train)] == [
            "full", "no_gate", "no_intensity"]
        transfer = hn.suite_specs("transfer_setting", data, train)
        assert [s.name for s in transfer] == ["one_time", "continual"]
        assert transfer[0].train.eval_windows == (0, 1, 2)

    def test_unknown_suite(self):
        with pytest.raises(ValueError, match="unknown suite"):
            hn.suite_specs("everything", tiny_data(), tiny_train())

    def test_adaptive_ablation_row_counts(self):
        rows, aggs = hn.run_suite("adaptive_ablation", tiny_data(), tiny_train(),
                                  seeds=(0, 1, 2))
        assert len(rows) == 9
        assert len(aggs) == 3
        for agg in aggs:
            per_seed = [r.auc for r in rows if r.experiment == agg.experiment]
            assert agg.mean_auc == pytest.approx(np.mean(per_seed))

    def test_transfer_setting_table_shape(self):
        rows, aggs = hn.run_suite("transfer_setting", tiny_data(), tiny_train(),
                                  seeds=(0, 1))
        # 2 settings x 3 checkpoints x 2 seeds rows; 2 x 3 aggregate cells
        assert len(rows) == 12
        assert len(aggs) == 6
        labels = {(a.experiment, a.checkpoint) for a in aggs}
        assert labels == {(m, c) for m in ("one_time", "continual")
                          for c in ("t", "t+dt", "t+2dt")}

    def test_empty_seed_list_rejected(self):
        with pytest.raises(ValueError, match="seed list"):
            hn.run_suite("adaptive_ablation", tiny_data(), tiny_train(), seeds=())


class TestEmit:
    def test_single_row_csv_is_header_plus_row(self, tmp_path):
        path = tmp_path / "m.csv"
        mt.emit([row()], path, "csv")
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("version,experiment,")

    def test_round_trip_csv_and_json(self, tmp_path):
        rows = [row(seed=s, auc=0.61234567890123456 + s * 1e-9) for s in range(3)]
        for fmt in ("csv", "json"):
            path = tmp_path / f"m.{fmt}"
            mt.emit(rows, path, fmt)
            back = mt.read_metrics(path)
            assert len(back) == 3
            for a, b in zip(rows, back):
                assert mt.rows_equal_on_metrics(a, b)

    def test_csv_json_identical_digits(self, tmp_path):
        rows = [row(auc=1.0 / 3.0)]
        mt.emit(rows, tmp_path / "m.csv", "csv")
        mt.emit(rows, tmp_path / "m.json", "json")
        csv_auc = (tmp_path / "m.csv").read_text().splitlines()[1].split(",")[8]
        import json
        json_auc = json.loads((tmp_path / "m.json").read_text())["rows"][0]["auc"]
        assert csv_auc == json_auc == format(1.0 / 3.0, ".17g")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError, match="unknown format"):
            mt.emit([row()], tmp_path / "m.xml", "xml")

    def test_empty_rows_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="no rows"):
            mt.emit([], tmp_path / "m.csv", "csv")

    def test_version_guard(self, tmp_path):
        path = tmp_path / "m.csv"
        mt.emit([row()], path, "csv")
        text = path.read_text().replace(mt.METRICS_FILE_VERSION, "other-v0")
        path.write_text(text)
        with pytest.raises(ValueError, match="version"):
            mt.read_metrics(path)


class TestConfigFiles:
    def write(self, tmp_path, text):
        p = tmp_path / "c.yaml"
        p.write_text(text)
        return p

    def test_load_defaults_and_sections(self, tmp_path):
        p = self.write(tmp_path, "data: {n_users: 50, n_items: 40}\ntrain: {alpha: 0.25}\n")
        data, train, exp = hn.load_config(p)
        assert data.n_users == 50 and train.alpha == 0.25
        assert exp["seeds"] == list(hn.DEFAULT_SEEDS)

    def test_overrides(self, tmp_path):
        p = self.write(tmp_path, "train: {alpha: 0.25}\n")
        _, train, exp = hn.load_config(p, overrides=["train.alpha=0.75",
                                                     "experiment.seeds=[7, 8]"])
        assert train.alpha == 0.75
        assert exp["seeds"] == [7, 8]

    def test_tuple_coercion(self, tmp_path):
        p = self.write(tmp_path, "train: {tower: [10, 5], eval_windows: [1]}\n")
        _, train, _ = hn.load_config(p, overrides=["train.window_count=2"])
        assert train.tower == (10, 5) and train.eval_windows == (1,)

    def test_unknown_field_rejected(self, tmp_path):
        p = self.write(tmp_path, "train: {velocity: 9}\n")
        with pytest.raises(ValueError, match="velocity"):
            hn.load_config(p)

    def test_unknown_section_rejected(self, tmp_path):
        p = self.write(tmp_path, "universe: {}\n")
        with pytest.raises(ValueError, match="universe"):
            hn.load_config(p)

    def test_bad_override_shape(self, tmp_path):
        p = self.write(tmp_path, "train: {}\n")
        with pytest.raises(ValueError, match="override"):
            hn.load_config(p, overrides=["alpha:0.5"])

    def test_reference_covers_every_field(self):
        import dataclasses
        ref = hn.config_reference()
        for f in dataclasses.fields(TrainConfig):
            assert f"train.{f.name}" in ref
        for f in dataclasses.fields(DataConfig):
            assert f"data.{f.name}" in ref


class TestRenderers:
    def test_tables_align(self):
        rows = [row(), row(seed=1, auc=0.71)]
        text = hn.render_rows(rows)
        assert "experiment" in text and "0.7100" in text
        aggs = hn.aggregate(rows)
        agg_text = hn.render_aggregates(aggs)
        assert "mean_auc" in agg_text and "stderr" in agg_text
