"""Training loop wiring, probes, records, and run suites on tiny configs."""

import gzip
import struct
from dataclasses import replace

import numpy as np
import pytest

from alda.harness import (
    METHODS,
    RunConfig,
    TrainingDiverged,
    _build_models,
    _corrected_rows,
    _train_step,
    ablation_csv_text,
    ablation_suite,
    accepted_fraction,
    evaluate,
    export_features,
    make_datasets,
    mmd_rbf,
    train,
)
from alda.data import batch_iter, gen_two_moons
from alda.losses import corrected_label_vector, one_hot
from alda.nn import ScheduleParams, lambda_schedule, lr_schedule, make_optimizer


def tiny_cfg(**kw) -> RunConfig:
    base = dict(
        method="alda",
        n_per_domain=200,
        total_steps=30,
        batch=32,
        probe_every=10,
        mmd_probe_n=64,
    )
    base.update(kw)
    return RunConfig(**base)


class TestMmd:
    def test_null_distribution_is_small(self):
        rng = np.random.default_rng(0)
        f_s = rng.normal(size=(500, 8))
        f_t = rng.normal(size=(500, 8))
        assert abs(mmd_rbf(f_s, f_t)) < 0.01

    def test_far_clusters_near_two(self):
        rng = np.random.default_rng(1)
        f_s = rng.normal(scale=0.05, size=(60, 4))
        f_t = rng.normal(scale=0.05, size=(60, 4)) + 100.0
        val = mmd_rbf(f_s, f_t, bandwidth=1.0)
        assert val > 0.5
        assert val == pytest.approx(2.0, abs=0.05)

    def test_permutation_symmetry(self):
        rng = np.random.default_rng(2)
        f_s = rng.normal(size=(40, 3))
        f_t = rng.normal(size=(30, 3)) + 0.3
        assert abs(mmd_rbf(f_s, f_t) - mmd_rbf(f_t, f_s)) < 1e-12

    def test_needs_two_samples_per_side(self):
        with pytest.raises(ValueError):
            mmd_rbf(np.ones((1, 2)), np.ones((5, 2)))

    def test_bandwidth_validation(self):
        with pytest.raises(ValueError):
            mmd_rbf(np.ones((3, 2)), np.ones((3, 2)), bandwidth=0.0)


class TestEvaluate:
    def _models(self, cfg=None):
        cfg = cfg or tiny_cfg()
        gen, clf, _, _ = _build_models(cfg, 2, 2)
        return gen, clf

    def test_perfect_predictor_scores_one(self):
        gen, clf = self._models()
        data = gen_two_moons(100, 0.1, seed=0)
        from alda.harness import _probs

        relabeled = replace(data, labels=_probs(gen, clf, data.features).argmax(axis=1))
        assert evaluate(gen, clf, relabeled) == 1.0

    def test_constant_predictor_scores_one_over_k(self):
        gen, clf = self._models()
        clf.layers[0].weight.data[:] = 0.0
        clf.layers[0].bias.data[:] = [[10.0, 0.0]]
        data = gen_two_moons(100, 0.1, seed=1)  # balanced classes
        assert evaluate(gen, clf, data) == pytest.approx(0.5)

    def test_sample_order_invariance(self):
        gen, clf = self._models()
        data = gen_two_moons(100, 0.1, seed=2)
        perm = np.random.default_rng(0).permutation(100)
        shuffled = replace(data, features=data.features[perm], labels=data.labels[perm])
        assert evaluate(gen, clf, data) == evaluate(gen, clf, shuffled)

    def test_empty_set_rejected(self):
        gen, clf = self._models()
        empty = replace(gen_two_moons(10, 0.0, seed=0), features=np.zeros((0, 2)), labels=np.zeros(0, dtype=int))
        with pytest.raises(ValueError):
            evaluate(gen, clf, empty)


class TestTrainBasics:
    def test_source_only_transfers_on_shift_free_moons(self):
        cfg = tiny_cfg(
            method="source_only",
            n_per_domain=400,
            total_steps=500,
            shift_rotation_deg=0.0,
            shift_tx=0.0,
            shift_ty=0.0,
            shift_noise=0.0,
        )
        _, record = train(cfg)
        assert record.final().tgt_acc >= 0.95

    def test_lambda_zero_matches_source_only_parameters(self):
        runs = {}
        for method, force in (("source_only", -1.0), ("alda", 0.0)):
            cfg = tiny_cfg(method=method, total_steps=120, force_lambda=force)
            models, record = train(cfg)
            runs[method] = (models, record)
        for name in ("generator", "classifier"):
            for a, b in zip(
                runs["source_only"][0][name].params(), runs["alda"][0][name].params()
            ):
                np.testing.assert_allclose(a.data, b.data, atol=1e-9)
        assert runs["source_only"][1].final().tgt_acc == pytest.approx(
            runs["alda"][1].final().tgt_acc, abs=1e-12
        )

    def test_every_method_runs(self):
        for method in METHODS:
            _, record = train(tiny_cfg(method=method, total_steps=8, probe_every=4))
            assert record.rows[-1].step == 7

    def test_rows_strictly_increasing_and_final_emitted(self):
        _, record = train(tiny_cfg(total_steps=25, probe_every=10))
        steps = [r.step for r in record.rows]
        assert steps == sorted(set(steps))
        assert steps[0] == 0 and steps[-1] == 24

    def test_divergence_raises_with_record(self):
        cfg = tiny_cfg(method="source_only", eta0=1e9, total_steps=50, probe_every=1)
        with pytest.raises(TrainingDiverged) as info:
            train(cfg)
        assert isinstance(info.value.record.rows, list)

    def test_record_csv_is_deterministic(self):
        cfg = tiny_cfg(total_steps=20)
        _, a = train(cfg)
        _, b = train(cfg)
        assert a.to_csv_text() == b.to_csv_text()

    def test_schedule_traces_match_closed_forms(self):
        cfg = tiny_cfg(total_steps=40, probe_every=7)
        _, record = train(cfg)
        text = record.to_csv_text().splitlines()
        sp = ScheduleParams(eta0=cfg.eta0, alpha=cfg.sched_alpha, beta=cfg.sched_beta)
        for line in text[1:]:
            cells = line.split(",")
            step, q, lam, lr = int(cells[0]), float(cells[1]), float(cells[2]), float(cells[3])
            assert abs(q - step / cfg.total_steps) < 1e-15
            assert abs(lam - lambda_schedule(q)) < 1e-12
            assert abs(lr - lr_schedule(q, sp)) < 1e-12


class _FrozenOpt:
    def step(self, lr):
        pass


def _snapshot(mlp):
    return [p.data.copy() for p in mlp.params()]


def _changed(mlp, before):
    return any(not np.array_equal(p.data, b) for p, b in zip(mlp.params(), before))


class TestUpdateIsolation:
    def _setup(self):
        cfg = tiny_cfg(total_steps=1)
        source, target = make_datasets(cfg)
        gen, clf, disc, drng = _build_models(cfg, 2, source.n_classes)
        batch = next(batch_iter(source, target, cfg.batch, seed=0))
        return cfg, batch, gen, clf, disc, drng, source.n_classes

    def test_discriminator_step_touches_only_d(self):
        cfg, batch, gen, clf, disc, drng, k = self._setup()
        g0, c0, d0 = _snapshot(gen), _snapshot(clf), _snapshot(disc)
        opt_d = make_optimizer("sgd", disc.params())
        _train_step(
            cfg, batch, gen, clf, disc, _FrozenOpt(), _FrozenOpt(), opt_d, drng,
            lam=0.5, base_lr=0.01, disc_kind="noise", use_reg=True,
            target_loss="corrected_unhinged", n_classes=k,
        )
        assert _changed(disc, d0)
        assert not _changed(gen, g0) and not _changed(clf, c0)

    def test_classifier_generator_step_never_touches_d(self):
        cfg, batch, gen, clf, disc, drng, k = self._setup()
        g0, c0, d0 = _snapshot(gen), _snapshot(clf), _snapshot(disc)
        opt_g = make_optimizer("sgd", gen.params())
        opt_c = make_optimizer("sgd", clf.params())
        _train_step(
            cfg, batch, gen, clf, disc, opt_g, opt_c, _FrozenOpt(), drng,
            lam=0.5, base_lr=0.01, disc_kind="noise", use_reg=True,
            target_loss="corrected_unhinged", n_classes=k,
        )
        assert _changed(gen, g0) and _changed(clf, c0)
        assert not _changed(disc, d0)


class TestCorrectedRowsVectorization:
    def test_matches_per_sample_oracle(self):
        rng = np.random.default_rng(0)
        n, k = 8, 5
        xi = rng.uniform(0.01, 0.99, size=(n, k))
        for p_hat in (one_hot(rng.integers(0, k, size=n), k), rng.dirichlet(np.ones(k), size=n)):
            got = _corrected_rows(xi, p_hat)
            want = np.stack([corrected_label_vector(x, p) for x, p in zip(xi, p_hat)])
            np.testing.assert_allclose(got, want, atol=1e-12)


class TestAcceptedFraction:
    def test_threshold_extremes(self):
        cfg = tiny_cfg()
        source, target = make_datasets(cfg)
        gen, clf, _, _ = _build_models(cfg, 2, 2)
        assert accepted_fraction(gen, clf, target, 0.0) == 1.0
        assert accepted_fraction(gen, clf, target, 1.0) == 0.0


class TestAblationSuite:
    def test_single_cell_equals_run_accuracy(self):
        cfg = tiny_cfg(total_steps=12)
        rows = ablation_suite(cfg, ["source_only"], [3])
        direct_cfg = replace(cfg, method="source_only", seed_init=3, seed_data=3 + 9973)
        _, record = train(direct_cfg)
        assert rows[0]["mean_acc"] == pytest.approx(record.final().tgt_acc)
        assert rows[0]["std_acc"] == 0.0

    def test_method_order_preserved(self):
        cfg = tiny_cfg(total_steps=6, probe_every=3)
        rows = ablation_suite(cfg, ["st", "source_only"], [1])
        assert [r["method"] for r in rows] == ["st", "source_only"]

    def test_std_uses_sample_denominator(self):
        cfg = tiny_cfg(total_steps=10)
        rows = ablation_suite(cfg, ["source_only"], [1, 2, 3])
        accs = np.array(rows[0]["accs"])
        direct = np.sqrt(((accs - accs.mean()) ** 2).sum() / (len(accs) - 1))
        assert rows[0]["std_acc"] == pytest.approx(direct, abs=1e-15)

    def test_csv_schema(self):
        cfg = tiny_cfg(total_steps=6, probe_every=3)
        text = ablation_csv_text(ablation_suite(cfg, ["source_only"], [1, 2]))
        lines = text.splitlines()
        assert lines[0] == "method,mean_acc,std_acc,seeds"
        assert lines[1].startswith("source_only,") and lines[1].endswith(",1;2")

    def test_empty_lists_rejected(self):
        with pytest.raises(ValueError):
            ablation_suite(tiny_cfg(), [], [1])


class TestExportFeatures:
    def test_rows_header_and_reexport_identical(self, tmp_path):
        cfg = tiny_cfg(total_steps=5, probe_every=5)
        models, _ = train(cfg)
        source, _ = make_datasets(cfg)
        path_a, path_b = tmp_path / "a.csv", tmp_path / "b.csv"
        export_features(models["generator"], source, path_a)
        export_features(models["generator"], source, path_b)
        text = path_a.read_text()
        lines = text.splitlines()
        assert lines[0] == ",".join([f"f{i}" for i in range(cfg.feature_dim)] + ["label", "domain"])
        assert len(lines) == len(source) + 1
        assert text == path_b.read_text()


def _write_idx(path_prefix, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    ip = f"{path_prefix}-images-idx3-ubyte.gz"
    lp = f"{path_prefix}-labels-idx1-ubyte.gz"
    with gzip.open(ip, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w) + images.tobytes())
    with gzip.open(lp, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n) + labels.tobytes())
    return ip, lp


class TestIdxPipeline:
    def test_idx_micro_run_end_to_end(self, tmp_path):
        rng = np.random.default_rng(0)
        n, k = 80, 3
        labels = rng.integers(0, k, size=n)
        # blob-like digit surrogates: class mean intensity patterns, 16x16
        means = rng.uniform(40, 200, size=(k, 16, 16))
        src_imgs = np.clip(means[labels] + rng.normal(0, 10, size=(n, 16, 16)), 0, 255)
        tgt_imgs = np.clip(means[labels] * 0.8 + rng.normal(0, 10, size=(n, 16, 16)), 0, 255)
        si, sl = _write_idx(tmp_path / "src", src_imgs, labels)
        ti, tl = _write_idx(tmp_path / "tgt", tgt_imgs, labels)
        cfg = tiny_cfg(
            dataset="idx",
            source_images=si,
            source_labels=sl,
            target_images=ti,
            target_labels=tl,
            batch=16,
            total_steps=10,
            probe_every=5,
            mmd_probe_n=32,
        )
        source, target = make_datasets(cfg)
        assert source.features.shape == (n, 784)
        assert source.n_classes == target.n_classes == k
        _, record = train(cfg)
        assert record.rows[-1].step == 9

    def test_missing_paths_rejected(self):
        with pytest.raises(ValueError, match="paths"):
            tiny_cfg(dataset="idx").validate()
