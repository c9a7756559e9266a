"""Tests for evaluation.py."""
import numpy as np
import pytest

from binning import fit_binning
from dataset import assign_splits, fit_standardizer, from_arrays, standardize
from evaluation import (
    DegenerateLabelsError,
    GridCell,
    ProbeConfig,
    RunReport,
    bin_count_dependency,
    bin_prediction_probe,
    expand_grid,
    finetune,
    grid_search,
    linear_probe,
    normalize_sweep,
    pca_project,
    rank_aggregate,
    select_best,
    supervised_baseline,
)
from network import MlpNetwork, MlpSpec, init_params


def _identity_encoder(d: int) -> MlpNetwork:
    return MlpNetwork(MlpSpec(d, (), d), [np.eye(d)], [np.zeros(d)])


def _report(val: float, test: float = 0.5, metric: str = "accuracy") -> RunReport:
    return RunReport(metric=metric, per_seed=[test], val_per_seed=[val])


class TestLinearProbe:
    def test_separable_classes(self, separable_binclass):
        report = linear_probe(_identity_encoder(1), separable_binclass,
                              ProbeConfig(lr=0.1, epochs=100, n_seeds=3))
        assert report.metric == "accuracy"
        assert report.per_seed == [1.0, 1.0, 1.0]
        assert report.std == 0.0

    def test_one_entry_per_seed(self, small_binclass):
        report = linear_probe(init_params(MlpSpec(4, (6,), 5), 0), small_binclass,
                              ProbeConfig(epochs=1, n_seeds=10))
        assert len(report.per_seed) == 10
        assert len(report.val_per_seed) == 10

    def test_threads_do_not_change_results(self, small_binclass):
        encoder = init_params(MlpSpec(4, (6,), 5), 1)
        probe = ProbeConfig(epochs=3, n_seeds=4)
        serial = linear_probe(encoder, small_binclass, probe, threads=1)
        parallel = linear_probe(encoder, small_binclass, probe, threads=4)
        assert serial.per_seed == parallel.per_seed
        assert serial.val_per_seed == parallel.val_per_seed

    def test_encoder_is_frozen(self, small_binclass):
        encoder = init_params(MlpSpec(4, (6,), 5), 2)
        before = encoder.checksum()
        linear_probe(encoder, small_binclass, ProbeConfig(epochs=2, n_seeds=2))
        assert encoder.checksum() == before

    def test_single_class_train_split(self, rng):
        data = from_arrays(rng.normal(size=(20, 2)), np.zeros(20), "binclass")
        data = assign_splits(data, index_sets=[np.arange(16), np.arange(16, 18), np.arange(18, 20)])
        with pytest.raises(DegenerateLabelsError):
            linear_probe(_identity_encoder(2), data, ProbeConfig(epochs=1, n_seeds=1))

    def test_independent_labels_near_chance(self):
        gen = np.random.default_rng(42)
        data = from_arrays(gen.normal(size=(2000, 3)), gen.integers(0, 2, size=2000), "binclass")
        data = assign_splits(data, fractions=(0.8, 0.1, 0.1), seed=1)
        report = linear_probe(_identity_encoder(3), data, ProbeConfig(epochs=5, n_seeds=3))
        assert abs(report.mean - 0.5) < 0.1

    def test_regression_reports_original_units(self, small_regression):
        st = fit_standardizer(small_regression)
        data = standardize(small_regression, st)
        report = linear_probe(_identity_encoder(4), data, ProbeConfig(epochs=2, n_seeds=2), standardizer=st)
        assert report.metric == "rmse"
        np.testing.assert_allclose(report.per_seed_original, np.array(report.per_seed) * st.label_std,
                                   rtol=1e-9)


class TestFinetune:
    def test_zero_lr_matches_probe(self, small_binclass):
        encoder = init_params(MlpSpec(4, (6,), 5), 3)
        probe = linear_probe(encoder, small_binclass, ProbeConfig(lr=0.0, epochs=2, n_seeds=2))
        tuned = finetune(encoder, small_binclass, epochs=2, lr=0.0, n_seeds=2)
        np.testing.assert_allclose(tuned.per_seed, probe.per_seed)
        np.testing.assert_allclose(tuned.val_per_seed, probe.val_per_seed)

    def test_pretrained_encoder_untouched(self, small_binclass):
        encoder = init_params(MlpSpec(4, (6,), 5), 4)
        before = encoder.checksum()
        finetune(encoder, small_binclass, epochs=2, lr=1e-2, n_seeds=2)
        assert encoder.checksum() == before

    def test_supervised_baseline_runs(self, small_regression):
        report = supervised_baseline(MlpSpec(4, (6,), 5), small_regression, epochs=2, n_seeds=2)
        assert report.metric == "rmse"
        assert len(report.per_seed) == 2
        assert all(np.isfinite(report.per_seed))


class TestRunReport:
    def test_population_std_and_round_trip(self):
        report = RunReport(metric="rmse", per_seed=[1.0, 3.0], val_per_seed=[2.0, 2.0],
                           per_seed_original=[10.0, 30.0], provenance={"config": "abc"})
        assert report.mean == 2.0
        assert report.std == 1.0
        assert report.direction == "min"
        again = RunReport.from_dict(report.to_dict())
        assert again.to_dict() == report.to_dict()


class TestGrid:
    def test_expand_grid_deduplicates(self):
        cells = expand_grid(["ValueRecon", "BinRecon"], ["none", "random"], [0.1, 0.3], [2, 10])
        assert len(cells) == 9
        assert len(set(cells)) == 9
        assert GridCell("ValueRecon") in cells
        assert all(c.mask_prob == 0.0 for c in cells if c.corruption_mode == "none")
        assert all(c.n_bins is None for c in cells if c.objective == "ValueRecon")

    def test_cell_names(self):
        assert GridCell("BinRecon", "random", 0.3, 10).name == "BinRecon_random_pm0.3_T10"
        assert GridCell("MaskXent", "constant", 0.1).name == "MaskXent_constant_pm0.1_T-"

    def test_singleton_grid(self):
        cell = GridCell("BinRecon", n_bins=10)
        report = grid_search([cell], lambda c: _report(0.7))
        assert report.best.cell == cell
        assert len(report.rows()) == 1

    def test_tie_prefers_fewer_bins(self):
        cells = [GridCell("BinRecon", n_bins=20), GridCell("BinRecon", n_bins=5), GridCell("BinRecon", n_bins=10)]
        report = grid_search(cells, lambda c: _report(0.8))
        assert report.best.cell.n_bins == 5

    def test_min_direction(self):
        scores = {2: 0.9, 5: 0.4, 10: 0.6}
        cells = [GridCell("BinRecon", n_bins=t) for t in scores]
        report = grid_search(cells, lambda c: _report(scores[c.n_bins], metric="rmse"))
        assert report.best.cell.n_bins == 5

    def test_failed_cell_is_recorded(self):
        def evaluate(cell):
            if cell.n_bins == 5:
                raise RuntimeError("diverged")
            return _report(0.6)

        cells = [GridCell("BinRecon", n_bins=t) for t in (2, 5, 10)]
        report = grid_search(cells, evaluate)
        assert len(report.failures) == 1
        rows = {r["cell"]: r for r in report.rows()}
        assert rows["BinRecon_none_pm0_T5"]["status"] == "failed"
        assert rows["BinRecon_none_pm0_T5"]["error"] == "diverged"
        assert report.best.cell.n_bins == 2

    def test_threaded_grid(self):
        cells = [GridCell("BinRecon", n_bins=t) for t in (2, 5, 10, 20)]
        report = grid_search(cells, lambda c: _report(c.n_bins / 100.0), threads=3)
        assert [r.cell for r in report.results] == cells
        assert report.best.cell.n_bins == 20

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            grid_search([], lambda c: _report(0.5))

    def test_select_best_without_results(self):
        assert select_best([]) is None


class TestRanks:
    def test_ties_share_mean_rank(self):
        table = rank_aggregate(np.array([[0.9], [0.8], [0.9]]), ["max"])
        np.testing.assert_array_equal(table.ranks[:, 0], [1.5, 3.0, 1.5])

    def test_min_direction(self):
        table = rank_aggregate(np.array([[0.3, 0.9], [0.1, 0.8]]), ["min", "max"], ["a", "b"], ["rmse", "acc"])
        np.testing.assert_array_equal(table.ranks, [[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_array_equal(table.average_ranks, [1.5, 1.5])
        assert table.rows()[0]["method"] == "a"
        assert table.rows()[0]["acc_rank"] == 1.0

    def test_rank_sums(self, rng):
        table = rank_aggregate(rng.normal(size=(11, 8)), ["max"] * 4 + ["min"] * 4)
        np.testing.assert_allclose(table.ranks.sum(axis=0), 66.0)
        assert table.average_ranks.mean() == pytest.approx(6.0)

    def test_missing_metric(self):
        with pytest.raises(ValueError, match="method 1"):
            rank_aggregate(np.array([[0.5], [np.nan]]), ["max"])

    def test_bad_direction(self):
        with pytest.raises(ValueError):
            rank_aggregate(np.array([[0.5]]), ["up"])


class TestBinPredictionProbe:
    def test_reference_against_itself(self, small_regression):
        encoder = init_params(MlpSpec(4, (6,), 5), 0)
        spec = fit_binning(small_regression.rows("train")[0], 4)
        targets = spec.targets(small_regression.features)
        result = bin_prediction_probe(encoder, small_regression, targets, reference=encoder)
        assert result.mse >= 0.0
        assert result.relative_increase == 0.0

    def test_identity_encoder_beats_constant_encoder(self, small_regression):
        spec = fit_binning(small_regression.rows("train")[0], 4)
        targets = spec.targets(small_regression.features)
        constant = MlpNetwork(MlpSpec(4, (), 4), [np.zeros((4, 4))], [np.zeros(4)])
        result = bin_prediction_probe(constant, small_regression, targets, reference=_identity_encoder(4))
        assert result.relative_increase > 0.0


class TestPca:
    def test_single_axis(self, rng):
        t = rng.normal(size=50)
        data = np.outer(t, [0.6, 0.8]) + 3.0
        result = pca_project(data)
        np.testing.assert_allclose(result.components[0], [0.6, 0.8], atol=1e-12)
        np.testing.assert_array_equal(result.components[1], [0.0, 0.0])
        np.testing.assert_allclose(result.explained_variance_ratio[0], 1.0)
        np.testing.assert_allclose(result.coordinates[:, 0], t - t.mean(), atol=1e-10)

    def test_rotation_invariant_variance(self, rng):
        data = rng.normal(size=(100, 3)) * [3.0, 1.0, 0.5]
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        a, b = pca_project(data), pca_project(data @ q)
        np.testing.assert_allclose(a.explained_variance, b.explained_variance, rtol=1e-10)
        np.testing.assert_allclose(np.abs(a.coordinates), np.abs(b.coordinates), atol=1e-10)

    def test_matches_covariance_spectrum(self, rng):
        data = rng.normal(size=(80, 4)) @ rng.normal(size=(4, 4))
        result = pca_project(data, components=4)
        eigenvalues = np.sort(np.linalg.eigvalsh(np.cov(data, rowvar=False)))[::-1]
        np.testing.assert_allclose(result.explained_variance, eigenvalues, rtol=1e-9)
        assert result.total_variance == pytest.approx(eigenvalues.sum())

    def test_sign_convention(self, rng):
        result = pca_project(rng.normal(size=(30, 5)))
        for axis in result.components:
            assert axis[np.argmax(np.abs(axis))] > 0

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            pca_project(np.zeros((1, 3)))


class TestSweeps:
    def test_normalize(self):
        np.testing.assert_allclose(normalize_sweep([0.8, 0.9, 0.85], "max"), [0.0, 1.0, 0.5])
        np.testing.assert_allclose(normalize_sweep([0.8, 0.9, 0.85], "min"), [1.0, 0.0, 0.5])
        np.testing.assert_array_equal(normalize_sweep([0.3, 0.3], "max"), [1.0, 1.0])

    def test_monotone_dependency(self):
        result = bin_count_dependency([2, 5, 10, 20], [0.70, 0.75, 0.80, 0.85], "max")
        assert result["kendall_tau"] == pytest.approx(1.0)
        assert result["pearson_r2"] > 0.8

    def test_flat_sweep_has_no_statistics(self):
        result = bin_count_dependency([2, 5, 10], [0.5, 0.5, 0.5], "max")
        assert result["pearson_r2"] is None
        assert result["kendall_tau"] is None
        assert result["normalized"] == [1.0, 1.0, 1.0]
