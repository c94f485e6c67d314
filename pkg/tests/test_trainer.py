"""
Tests de la boucle d'entraînement, de l'augmentation et de la TTA
"""

from dataclasses import replace

import numpy as np
import pytest

from src.core.adam import AdamState, adam_step
from src.core.exceptions import DataError, NumericError, ParameterError
from src.core.losses import PairedBatch, StepBatch, cross_entropy_logits_grad
from src.core.model import (EVAL, TRAIN, ForwardTape, ModelConfig, ModelState, backward,
                            classifier_logits, project, set_mode)
from src.core.numeric import SeededRng
from src.core.trainer import (BatchAssembler, TrainConfig, TrainTrace, assemble_step_batches,
                              augment_features, augment_matrix, fit, source_only_config,
                              train_step, tta_adapt)
from src.data.embeddings import EmbeddingRecord, records_to_matrix


def make_model(cfg, input_dim=6, seed=0):
    return ModelState.initialize(cfg.model_config(input_dim), seed)


class TestAugmentation:

    def test_zero_std_is_identity(self):
        x = SeededRng(0).normal(8)
        np.testing.assert_array_equal(augment_features(x, 0.0, SeededRng(1)), x)

    def test_deterministic(self):
        x = np.ones(10)
        a = augment_features(x, 0.3, SeededRng(4))
        b = augment_features(x, 0.3, SeededRng(4))
        np.testing.assert_array_equal(a, b)

    def test_perturbation_energy(self):
        """Test E‖x̃ - x‖² ≈ d·std²"""
        x = np.zeros((5000, 10))
        out = augment_matrix(x, 0.5, SeededRng(5))
        energy = np.mean(np.sum((out - x) ** 2, axis=1))
        assert energy == pytest.approx(10 * 0.25, rel=0.03)

    def test_negative_std(self):
        with pytest.raises(ParameterError):
            augment_features(np.ones(3), -0.1, SeededRng(0))

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            augment_matrix(np.ones((2, 3)), 0.1, SeededRng(0), kind='blur')

    def test_mask_zeroes_coordinates(self):
        out = augment_matrix(np.ones((200, 50)), 0.3, SeededRng(6), kind='mask')
        assert set(np.unique(out)) <= {0.0, 1.0}
        assert abs(np.mean(out == 0.0) - 0.3) < 0.02

    def test_swap_preserves_values(self):
        x = np.arange(12.0).reshape(2, 6)
        out = augment_matrix(x, 0.5, SeededRng(7), kind='swap')
        np.testing.assert_array_equal(np.sort(out, axis=1), x)

    def test_input_not_modified(self):
        x = np.ones((3, 4))
        augment_matrix(x, 0.5, SeededRng(8), kind='combined')
        np.testing.assert_array_equal(x, np.ones((3, 4)))


class TestTrainConfig:

    @pytest.mark.parametrize('name', ['batch_size', 'tta_batch_size'])
    def test_single_row_batches_rejected(self, name):
        with pytest.raises(ParameterError):
            TrainConfig(**{name: 1})

    def test_two_row_batches_accepted(self):
        cfg = TrainConfig(batch_size=2, tta_batch_size=2)
        assert cfg.batch_size == cfg.tta_batch_size == 2

    def test_zero_passes(self):
        with pytest.raises(ParameterError):
            TrainConfig(tta_passes=0)


class TestBatchAssembly:

    def test_target_pool_cycles(self):
        cfg = TrainConfig(batch_size=256)
        rng = SeededRng(0)
        assembler = BatchAssembler(rng.normal((512, 3)), np.arange(512) % 2,
                                   rng.normal((256, 3)), cfg, SeededRng(1))
        batches = list(assembler.epoch())
        assert len(batches) == 2
        assert assembler.target_cycles == 2
        for batch in batches:
            assert batch.source.anchors.shape == (256, 3)
            assert batch.target.anchors.shape == batch.source.anchors.shape
            assert batch.target.augments.shape == (256, 3)
            assert batch.labels.shape == (256,)

    def test_last_partial_batch(self, small_partition):
        cfg = TrainConfig(batch_size=50)
        batches = assemble_step_batches(small_partition.source, small_partition.target_train,
                                        cfg, SeededRng(0))
        sizes = [b.source.anchors.shape[0] for b in batches]
        assert sizes == [50, 50, 50, 10]
        assert all(b.target.anchors.shape[0] == s for b, s in zip(batches, sizes))

    def test_empty_pool(self, small_partition):
        with pytest.raises(DataError):
            assemble_step_batches(small_partition.source, [], TrainConfig(), SeededRng(0))

    def test_same_seed_same_batches(self, small_partition):
        cfg = TrainConfig(batch_size=64)
        a = assemble_step_batches(small_partition.source, small_partition.target_train, cfg, SeededRng(3))
        b = assemble_step_batches(small_partition.source, small_partition.target_train, cfg, SeededRng(3))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.source.augments, y.source.augments)
            np.testing.assert_array_equal(x.target.anchors, y.target.anchors)


class TestTrainStep:

    def test_requires_train_mode(self, small_config):
        model = make_model(small_config, input_dim=3)
        set_mode(model, EVAL)
        rng = SeededRng(0)
        x = rng.normal((4, 3))
        batch = StepBatch(PairedBatch(x, x), np.array([0, 1, 0, 1]), PairedBatch(x, x))
        with pytest.raises(ParameterError):
            train_step(model, AdamState(), batch, small_config)

    def test_updates_parameters(self, small_config):
        model = make_model(small_config, input_dim=3)
        before = {k: v.copy() for k, v in model.parameters().items()}
        rng = SeededRng(1)
        x, xt = rng.normal((6, 3)), rng.normal((6, 3)) + 1.0
        batch = StepBatch(PairedBatch(x, x + 0.05), np.array([0, 1] * 3), PairedBatch(xt, xt + 0.05))
        components = train_step(model, AdamState(lr=1e-3), batch, small_config)
        assert set(components) >= {'total', 'ce_source', 'mmd'}
        assert any(not np.array_equal(before[k], v) for k, v in model.parameters().items())

    def test_without_adaptation_terms_matches_plain_cross_entropy(self, small_config):
        """Test λ_ctr = λ_MMD = 0: mêmes pas qu'un entraînement CE seul sur la source"""
        cfg = small_config.with_weights(lambda_ctr=0.0, lambda_mmd=0.0)
        model, reference = make_model(cfg, input_dim=3), make_model(cfg, input_dim=3)
        opt, ref_opt = AdamState(lr=cfg.learning_rate), AdamState(lr=cfg.learning_rate)
        half_ce = 0.5 * cfg.loss_weights.lambda_ce

        for step in range(3):
            rng = SeededRng(30 + step)
            xs, xt = rng.normal((8, 3)), rng.normal((8, 3)) + 2.0
            labels = np.array([0, 1] * 4)
            xs_aug = xs + 0.1 * rng.normal((8, 3))
            batch = StepBatch(PairedBatch(xs, xs_aug), labels, PairedBatch(xt, xt + 0.1))
            train_step(model, opt, batch, cfg)

            tape = ForwardTape()
            logits = classifier_logits(reference, project(reference, xs, tape, 'source'), tape, 'source')
            logits_aug = classifier_logits(reference, project(reference, xs_aug, tape, 'source_aug'),
                                           tape, 'source_aug')
            _, d_src = cross_entropy_logits_grad(logits, labels)
            _, d_aug = cross_entropy_logits_grad(logits_aug, labels)
            grads = backward(reference, tape, {'source': half_ce * d_src, 'source_aug': half_ce * d_aug})
            adam_step(ref_opt, reference.parameters(), grads, cfg.learning_rate)

        for name, param in model.parameters().items():
            np.testing.assert_array_equal(param, reference.parameters()[name])

    def test_without_adaptation_terms_ignores_target(self, small_config):
        cfg = small_config.with_weights(lambda_ctr=0.0, lambda_mmd=0.0)
        a, b = make_model(cfg, input_dim=3), make_model(cfg, input_dim=3)
        rng = SeededRng(40)
        xs = rng.normal((6, 3))
        labels = np.array([0, 1] * 3)
        for model, shift in ((a, 0.0), (b, 5.0)):
            xt = SeededRng(41).normal((6, 3)) * (1.0 + shift) + shift
            batch = StepBatch(PairedBatch(xs, xs + 0.05), labels, PairedBatch(xt, xt + 0.05))
            train_step(model, AdamState(lr=cfg.learning_rate), batch, cfg)
        for name, param in a.parameters().items():
            np.testing.assert_array_equal(param, b.parameters()[name])

    def test_non_finite_loss_reports_diagnostics(self, small_config, mocker):
        model = make_model(small_config, input_dim=3)
        terms = mocker.MagicMock()
        terms.components.return_value = {'total': float('nan'), 'mmd': 0.0}
        mocker.patch('src.core.trainer.composite_objective', return_value=terms)
        x = np.ones((2, 3))
        batch = StepBatch(PairedBatch(x, x), np.array([0, 1]), PairedBatch(x, x))
        with pytest.raises(NumericError) as excinfo:
            train_step(model, AdamState(), batch, small_config)
        assert 'total' in excinfo.value.diagnostics


class TestFit:

    def test_zero_epochs(self, small_config, small_partition):
        cfg = replace(small_config, max_epochs=0)
        model = make_model(cfg)
        trained, trace = fit(model, small_partition.source, small_partition.target_train, cfg)
        assert trained is model
        assert trace.entries == []

    def test_trace_and_mode(self, fast_config, small_partition):
        model = make_model(fast_config)
        trained, trace = fit(model, small_partition.source, small_partition.target_train, fast_config)
        assert trained.mode == EVAL
        assert len(trace.entries) == 2
        assert list(trace.to_frame().columns) == list(TrainTrace.COLUMNS)
        assert trace.best_epoch in (1, 2)
        assert all(np.isfinite(e['total']) for e in trace.entries)

    def test_initial_model_untouched(self, fast_config, small_partition):
        model = make_model(fast_config)
        before = {k: v.copy() for k, v in model.parameters().items()}
        fit(model, small_partition.source, small_partition.target_train, fast_config)
        for name, param in model.parameters().items():
            np.testing.assert_array_equal(param, before[name])

    def test_deterministic(self, fast_config, small_partition):
        runs = [fit(make_model(fast_config), small_partition.source, small_partition.target_train,
                    fast_config)[0] for _ in range(2)]
        for name, param in runs[0].parameters().items():
            assert param.tobytes() == runs[1].parameters()[name].tobytes()

    def test_target_labels_never_used(self, fast_config, small_records, small_partition):
        """Test des labels cibles empoisonnés ne changent rien"""
        poisoned = [EmbeddingRecord(id=r.id, domain=r.domain, label=1 - r.label, features=r.features)
                    for r in small_records if r.domain == 'domain_2']
        kept = {r.id for r in small_partition.target_train}
        poisoned = [r for r in poisoned if r.id in kept]
        clean_model, _ = fit(make_model(fast_config), small_partition.source,
                             small_partition.target_train, fast_config)
        dirty_model, _ = fit(make_model(fast_config), small_partition.source, poisoned, fast_config)
        for name, param in clean_model.parameters().items():
            assert param.tobytes() == dirty_model.parameters()[name].tobytes()

    def test_early_stopping(self, small_config, small_partition, mocker):
        cfg = replace(small_config, max_epochs=10, patience=1)
        mocker.patch('src.core.trainer._validation_cross_entropy',
                     side_effect=[1.0, 2.0, 3.0, 4.0, 5.0])
        _, trace = fit(make_model(cfg), small_partition.source, small_partition.target_train, cfg)
        assert trace.early_stop_epoch == 3
        assert trace.best_epoch == 1
        assert len(trace.entries) == 3

    def test_numeric_failure_carries_step(self, fast_config, small_partition, mocker):
        mocker.patch('src.core.trainer.train_step',
                     side_effect=NumericError('perte non finie', diagnostics={'total': float('nan')}))
        with pytest.raises(NumericError) as excinfo:
            fit(make_model(fast_config), small_partition.source, small_partition.target_train,
                fast_config)
        assert excinfo.value.diagnostics['epoch'] == 1
        assert excinfo.value.diagnostics['step'] == 0

    def test_empty_target(self, fast_config, small_partition):
        with pytest.raises(DataError):
            fit(make_model(fast_config), small_partition.source, [], fast_config)

    def test_source_only_config(self, small_config):
        cfg = source_only_config(small_config)
        assert cfg.loss_weights.lambda_ctr == 0.0
        assert cfg.loss_weights.lambda_mmd == 0.0
        assert cfg.use_tta is False


class TestTta:

    @pytest.fixture
    def model(self):
        config = ModelConfig(input_dim=3, proj_hidden=5, proj_dim=4, cls_hidden=5, dropout=0.3)
        return set_mode(ModelState.initialize(config, seed=2), EVAL)

    def test_parameters_frozen(self, model):
        adapted = tta_adapt(model, SeededRng(0).normal((40, 3)) + 2.0, tta_batch_size=8)
        for name, param in model.parameters().items():
            assert adapted.parameters()[name].tobytes() == param.tobytes()
        assert adapted.mode == EVAL
        assert all(bn.mode == EVAL for bn in adapted.bn_layers().values())

    def test_estimates_move_geometrically(self, model):
        """Test μ̂ₙ - μ = 0.9ⁿ·(μ̂₀ - μ) pour des lots identiques"""
        block = SeededRng(1).normal((4, 3)) + 1.5
        mu = model.cls1.forward(project(model, block)).mean(axis=0)
        r0 = model.bn1.running_mean.copy()

        gaps = []
        for n in (1, 3, 6, 10):
            adapted = tta_adapt(model, np.tile(block, (n, 1)), tta_batch_size=4)
            expected = 0.9 ** n * (r0 - mu) + mu
            np.testing.assert_allclose(adapted.bn1.running_mean, expected, atol=1e-10)
            gaps.append(np.linalg.norm(adapted.bn1.running_mean - mu))

        slope = np.polyfit([1, 3, 6, 10], np.log(gaps), 1)[0]
        assert slope == pytest.approx(np.log(0.9), rel=0.05)

    def test_input_model_untouched(self, model):
        before = model.bn1.running_mean.copy()
        tta_adapt(model, SeededRng(2).normal((10, 3)), tta_batch_size=4)
        np.testing.assert_array_equal(model.bn1.running_mean, before)

    def test_trailing_singleton_folded(self, model):
        adapted = tta_adapt(model, SeededRng(3).normal((9, 3)), tta_batch_size=4)
        assert adapted.bn1.num_batches_tracked == model.bn1.num_batches_tracked + 2

    def test_empty_target_set(self, model):
        with pytest.raises(DataError):
            tta_adapt(model, np.zeros((0, 3)), tta_batch_size=4)

    def test_single_item(self, model):
        with pytest.raises(DataError):
            tta_adapt(model, np.ones((1, 3)), tta_batch_size=4)

    def test_single_row_batches(self, model):
        with pytest.raises(ParameterError):
            tta_adapt(model, SeededRng(4).normal((10, 3)), tta_batch_size=1)

    def test_zero_passes(self, model):
        with pytest.raises(ParameterError):
            tta_adapt(model, SeededRng(4).normal((10, 3)), tta_batch_size=4, passes=0)

    def test_tta_on_partition(self, model, small_partition):
        x = records_to_matrix(small_partition.target_train)[:, :3]
        adapted = tta_adapt(model, x, tta_batch_size=16, passes=2)
        assert adapted.mode == EVAL
        assert model.mode == EVAL
        assert set_mode(adapted, TRAIN).mode == TRAIN


@pytest.mark.slow
def test_total_loss_decreases_on_benchmark():
    """5 époques: perte totale décroissante pour au moins 4 graines sur 5"""
    from config.settings import BENCHMARK_CONFIG_PATH, load_config
    from src.data.embeddings import DomainPartition, partition
    from src.data.synthetic import SyntheticSpec, generate_synthetic

    base = replace(load_config(BENCHMARK_CONFIG_PATH, environ={}), max_epochs=5, patience=5)
    decreasing = 0
    for seed in range(5):
        records = generate_synthetic(SyntheticSpec(n_per_domain=2000, dim=32, shift=2.0, seed=seed))
        data = partition(records, DomainPartition.from_strings('domain_0,domain_1', 'domain_2'),
                         base.target_test_fraction, seed)
        cfg = replace(base, seed=seed)
        _, trace = fit(make_model(cfg, input_dim=32, seed=seed), data.source, data.target_train, cfg)
        totals = [e['total'] for e in trace.entries]
        decreasing += all(b < a for a, b in zip(totals, totals[1:]))
    assert decreasing >= 4


@pytest.mark.slow
def test_tta_without_shift_keeps_predictions():
    """Sans décalage de domaine, la TTA change moins de 2 % des prédictions"""
    from config.settings import BENCHMARK_CONFIG_PATH, load_config
    from src.core.model import predict_proba
    from src.data.embeddings import DomainPartition, partition
    from src.data.synthetic import SyntheticSpec, generate_synthetic

    base = load_config(BENCHMARK_CONFIG_PATH, environ={})
    changed = []
    for seed in range(5):
        records = generate_synthetic(SyntheticSpec(n_domains=2, n_per_domain=1000, dim=8,
                                                   margin=4.0, shift=0.0, seed=seed))
        data = partition(records, DomainPartition.from_strings('domain_0', 'domain_1'), 0.5, seed)
        cfg = replace(base, seed=seed)
        trained, _ = fit(make_model(cfg, input_dim=8, seed=seed), data.source, data.target_train, cfg)
        x = records_to_matrix(data.target_test)
        adapted = tta_adapt(trained, x, cfg.tta_batch_size, cfg.tta_passes)
        before = np.argmax(predict_proba(trained, x), axis=1)
        after = np.argmax(predict_proba(adapted, x), axis=1)
        changed.append(np.mean(before != after))
    assert np.mean(changed) < 0.02
