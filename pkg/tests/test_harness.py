import numpy as np
import pytest

from m3e2lab.datagen import GwasConfig, gen_gwas
from m3e2lab.errors import ParameterError
from m3e2lab.harness import (
    ESTIMATORS,
    Estimator,
    RunRecord,
    Setting,
    TrainConfig,
    aggregate,
    default_grid,
    fit_single_treatment,
    mae,
    make_dataset,
    read_results_csv,
    run_replications,
    train,
    write_aggregate_csv,
    write_results_csv,
)
from m3e2lab.model import M3E2Config, init_params
from m3e2lab.stats import SeededRng

TINY = Setting("t-n120", "gwas", 120, 12, 2)
FAST_TRAIN = TrainConfig(epochs=2, batch_size=50)
SMALL_MODEL = {"hidden1": 8, "hidden2": 4}


def tiny_params(ds, seed=1, **cfg_kw):
    cfg = M3E2Config(n_treat=ds.n_treat, hidden1=8, hidden2=4, **cfg_kw)
    return init_params(cfg, ds.x_low.shape[1], ds.x_high.shape[1], SeededRng(seed))


class TestMae:
    def test_identical(self):
        assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_arithmetic(self):
        assert mae([0.0, 2.0], [1.0, 1.0]) == 1.0

    def test_single_treatment_reduces_to_abs(self):
        assert mae([1.5], [-0.5]) == 2.0

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            mae([1.0], [1.0, 2.0])


class TestTrain:
    def test_zero_epochs_leaves_params_unchanged(self):
        ds = make_dataset(TINY, 1)
        params = tiny_params(ds)
        before = {n: t.data.copy() for n, t in params.named().items()}
        params, history = train(params, ds, TrainConfig(epochs=0))
        assert history == []
        for name, tensor in params.named().items():
            assert np.array_equal(tensor.data, before[name])

    def test_fixed_seeds_bit_identical(self):
        ds = make_dataset(TINY, 1)
        results = []
        for _ in range(2):
            params, _ = train(tiny_params(ds, seed=3), ds, TrainConfig(epochs=3, batch_size=40, model_seed=3))
            results.append({n: t.data.copy() for n, t in params.named().items()})
        for name in results[0]:
            assert np.array_equal(results[0][name], results[1][name])

    def test_loss_decreases_on_gwas(self):
        ds = gen_gwas(GwasConfig(n=2000, n_cov=30, n_treat=3, seed=1))
        params = tiny_params(ds, seed=1)
        _, history = train(params, ds, TrainConfig(epochs=10, model_seed=1))
        assert history[-1]["loss"] < history[0]["loss"]
        assert set(history[0]) == {"epoch", "loss", "loss_y", "loss_t", "loss_a", "loss_reg", "val_loss"}

    def test_loss_decreases_default_config_full_setting(self):
        # the n=2000 sample-size variant at full covariate scale, default config
        ds = make_dataset(next(s for s in default_grid() if s.id == "a-n2000"), 1)
        cfg = M3E2Config(n_treat=ds.n_treat, treatment_kind=ds.treatment_kind, outcome_kind=ds.outcome_kind)
        params = init_params(cfg, ds.x_low.shape[1], ds.x_high.shape[1], SeededRng(1))
        _, history = train(params, ds, TrainConfig(model_seed=1))
        assert history[-1]["loss"] < history[0]["loss"]


class TestRunReplications:
    def test_record_count_is_seeds_by_reps_by_estimators(self):
        # the full protocol (4 seeds, B=20, 2 estimators) gives 160 by the same count
        records = run_replications(
            TINY, ("m3e2", "ols"), n_data_seeds=2, reps=2, model_opts=SMALL_MODEL, train_cfg=FAST_TRAIN
        )
        assert len(records) == 2 * 2 * 2

    def test_ols_identical_across_repetitions(self):
        records = run_replications(TINY, ("ols",), n_data_seeds=1, reps=3, train_cfg=FAST_TRAIN)
        taus = {rec.tau_hat for rec in records}
        assert len(taus) == 1

    def test_mean_mae_matches_definition(self):
        records = run_replications(
            TINY, ("ols",), n_data_seeds=2, reps=2, train_cfg=FAST_TRAIN
        )
        direct = [np.mean(np.abs(np.array(r.tau_true) - np.array(r.tau_hat))) for r in records]
        assert abs(np.mean([r.mae for r in records]) - np.mean(direct)) < 1e-12

    def test_parallel_matches_serial(self):
        kwargs = dict(estimators=("ols",), n_data_seeds=3, reps=1, train_cfg=FAST_TRAIN)
        serial = run_replications(TINY, workers=1, **kwargs)
        parallel = run_replications(TINY, workers=3, **kwargs)
        strip = lambda r: (r.dataset, r.setting, r.data_seed, r.model_seed, r.estimator, r.tau_true, r.tau_hat, r.mae)
        assert [strip(r) for r in serial] == [strip(r) for r in parallel]

    def test_unknown_estimator(self):
        with pytest.raises(ParameterError, match="unknown estimator"):
            run_replications(TINY, ("nope",), n_data_seeds=1, reps=1)

    def test_record_invariant_enforced(self):
        with pytest.raises(ParameterError):
            RunRecord(
                dataset="d", setting="s", data_seed=1, model_seed=1, estimator="ols",
                tau_true=(1.0,), tau_hat=(0.0,), mae=0.5, runtime_s=0.0,
            )

    def test_single_treatment_assembly(self):
        # a stub single-treatment estimator exercises the per-treatment loop
        ds = make_dataset(TINY, 1)
        calls = []

        def fit_stub(view, model_seed, model_opts=None, train_cfg=None):
            assert view.n_treat == 1
            calls.append(view.x_low.shape[1])
            return np.array([float(view.tau_true[0])])

        stub = Estimator("stub", fit_stub, single_treatment=True)
        tau = fit_single_treatment(stub, ds, 1)
        assert np.array_equal(tau, ds.tau_true)
        # each view absorbed the other treatment column into x_low
        assert calls == [ds.x_low.shape[1] + 1] * ds.n_treat


class TestAggregate:
    def _record(self, setting, estimator, mae_value, seed=1, rep=1, runtime=1.0):
        return RunRecord(
            dataset="gwas_x", setting=setting, data_seed=seed, model_seed=rep, estimator=estimator,
            tau_true=(mae_value,), tau_hat=(0.0,), mae=mae_value, runtime_s=runtime,
        )

    def test_identical_values_zero_ci(self):
        records = [self._record("a", "ols", 0.5, rep=i) for i in range(1, 4)]
        rows = aggregate(records)
        assert rows[0].ci95 == 0.0 and rows[0].mean_mae == 0.5

    def test_disjoint_groups_independent(self):
        records = [self._record("a", "ols", 0.2, rep=i) for i in (1, 2)]
        records += [self._record("b", "m3e2", 0.8, rep=i) for i in (1, 2)]
        rows = aggregate(records)
        assert [(r.setting, r.estimator) for r in rows] == [("a", "ols"), ("b", "m3e2")]
        assert rows[0].mean_mae == 0.2 and rows[1].mean_mae == 0.8

    def test_hand_computed_five_records(self):
        values = [0.1, 0.2, 0.3, 0.4, 0.5]
        records = [self._record("a", "ols", v, rep=i + 1) for i, v in enumerate(values)]
        rows = aggregate(records)
        mean = sum(values) / 5  # 0.3
        sd = (sum((v - mean) ** 2 for v in values) / 4) ** 0.5
        assert abs(rows[0].mean_mae - 0.3) < 1e-15
        assert abs(rows[0].ci95 - 1.96 * sd / 5**0.5) < 1e-12
        assert rows[0].n_runs == 5

    def test_single_record_group_has_absent_ci(self):
        rows = aggregate([self._record("a", "ols", 0.4)])
        assert rows[0].ci95 is None


class TestCsvRoundTrip:
    def test_results_header_and_round_trip(self, tmp_path):
        records = run_replications(TINY, ("ols",), n_data_seeds=2, reps=1, train_cfg=FAST_TRAIN)
        path = write_results_csv(records, tmp_path / "results.csv")
        text = path.read_text().splitlines()
        assert text[0] == "dataset,setting,data_seed,model_seed,estimator,k,tau_true,tau_hat,mae,runtime_s"
        # one row per treatment per run
        assert len(text) == 1 + sum(len(r.tau_true) for r in records)
        loaded = read_results_csv(path)
        assert [r.tau_hat for r in loaded] == [r.tau_hat for r in records]
        assert [r.mae for r in loaded] == [r.mae for r in records]

    def test_zero_runtime_makes_output_deterministic(self, tmp_path):
        records = run_replications(TINY, ("ols",), n_data_seeds=1, reps=2, train_cfg=FAST_TRAIN)
        a = write_results_csv(records, tmp_path / "a.csv", zero_runtime=True)
        again = run_replications(TINY, ("ols",), n_data_seeds=1, reps=2, train_cfg=FAST_TRAIN)
        b = write_results_csv(again, tmp_path / "b.csv", zero_runtime=True)
        assert a.read_bytes() == b.read_bytes()

    def test_aggregate_csv(self, tmp_path):
        records = run_replications(TINY, ("ols",), n_data_seeds=2, reps=2, train_cfg=FAST_TRAIN)
        path = write_aggregate_csv(aggregate(records), tmp_path / "agg.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "dataset,setting,estimator,mean_mae,ci95,mean_runtime_s,n_runs"
        assert len(lines) == 2


class TestGrid:
    def test_ids_unique_and_letters_cover_a_to_e(self):
        grid = default_grid()
        ids = [s.id for s in grid]
        assert len(ids) == len(set(ids))
        assert {i.split("-")[0] for i in ids} == {"a", "b", "c", "d", "e"}

    def test_gwas_covariate_bookkeeping(self):
        # setting b-v100: 100 covariates after removing the 5 treatment columns
        setting = next(s for s in default_grid() if s.id == "b-v100")
        ds = make_dataset(setting, 1)
        assert ds.x_high.shape[1] == 100
        assert ds.n_treat == 5

    def test_known_estimators(self):
        assert set(ESTIMATORS) == {"m3e2", "ols"}
