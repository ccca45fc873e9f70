import math

import numpy as np
import pytest

from cyclefusion import errors, hpo
from cyclefusion.audit import AccessLog, audit_lines
from cyclefusion.hpo import (DESK_SPACE, FULL_SPACE, HyperParamSpace, SearchResult, TrialCache,
                             TrialResult, TuningReport, random_search, repeat_tuning, run_trial,
                             sample_hp, trial_seed)
from cyclefusion.nets import HyperParams, NetBuilder, TrainConfig, make_inputs
from cyclefusion.preprocess import split_random

TINY = HyperParamSpace(initial_lr=(1e-3, 1e-3), n_filters_12=(2, 4), kernel_12=(10, 10),
                       stride_1=(10, 10), dropout_rate=(0.3, 0.5), fc_neurons=(4, 8))


@pytest.fixture(scope="module")
def setup(separable):
    split = split_random(separable.n_cycles, 0)
    inputs = make_inputs(separable, [["PS1"]], 100, split.train)
    return inputs, separable.targets, split, NetBuilder("tcocnn", ((1, 100),)), TrainConfig(epochs=2)


class TestSampling:
    def test_within_bounds(self):
        gen = np.random.default_rng(0)
        for space in (FULL_SPACE, DESK_SPACE):
            for _ in range(500):
                assert space.contains(sample_hp(space, gen))

    def test_log_uniform_rate(self):
        gen = np.random.default_rng(1)
        logs = np.log10([sample_hp(FULL_SPACE, gen).initial_lr for _ in range(4000)])
        # uniform on [-7, -4]: mean -5.5, each decade about a third of the draws
        assert abs(logs.mean() + 5.5) < 0.05
        counts = np.histogram(logs, bins=[-7, -6, -5, -4])[0] / len(logs)
        np.testing.assert_allclose(counts, 1 / 3, atol=0.03)

    def test_integers_inclusive(self):
        gen = np.random.default_rng(2)
        space = HyperParamSpace(n_filters_12=(10, 12))
        seen = {sample_hp(space, gen).n_filters_12 for _ in range(300)}
        assert seen == {10, 11, 12}

    def test_degenerate_space(self):
        space = HyperParamSpace((1e-4, 1e-4), (7, 7), (20, 20), (10, 10), (0.4, 0.4), (50, 50))
        h = sample_hp(space, np.random.default_rng(3))
        assert h == HyperParams(1e-4, 7, 20, 10, 0.4, 50)

    def test_trial_seeds_distinct(self):
        seeds = {trial_seed(0, r, t) for r in range(5) for t in range(50)}
        assert len(seeds) == 250
        assert trial_seed(0, 1, 2) == trial_seed(0, 1, 2)

    def test_json_round_trip(self):
        t = TrialResult(3, 99, HyperParams(1e-5, 10, 100, 100, 0.3, 500), 0.5, 0.25, status="ok", epochs=4)
        assert TrialResult.from_json(t.to_json()) == t


class TestSearch:
    def test_selects_min_validation_loss(self, setup):
        inputs, y, split, build, tc = setup
        log = AccessLog()
        result = random_search(TINY, 4, build, inputs, y, split, tc, master_seed=5, log=log, run="s")
        losses = [t.validation_loss for t in result.trials]
        assert result.selected == int(np.argmin(losses))
        chosen = result.trials[result.selected]
        assert chosen.test_error == result.test_error
        assert all(t.test_error is None for t in result.trials if t is not chosen)
        assert audit_lines(log.lines) == []
        final = log.lines.index("FINALIZE run=s")
        tests = [i for i, l in enumerate(log.lines) if "subset=test" in l]
        assert len(tests) == 1 and tests[0] > final

    def test_order_independent(self, setup):
        inputs, y, split, build, tc = setup
        result = random_search(TINY, 3, build, inputs, y, split, tc, master_seed=8)
        for t in reversed(range(3)):
            alone, _ = run_trial(build, TINY, inputs, y, split, tc, 8, 0, t)
            assert alone.hp == result.trials[t].hp
            assert alone.validation_loss == result.trials[t].validation_loss

    def test_parallel_matches_serial(self, setup):
        inputs, y, split, build, tc = setup
        serial = random_search(TINY, 2, build, inputs, y, split, tc, master_seed=3)
        parallel = random_search(TINY, 2, build, inputs, y, split, tc, master_seed=3, jobs=2)
        assert [t.validation_loss for t in serial.trials] == [t.validation_loss for t in parallel.trials]
        assert serial.test_error == parallel.test_error

    def test_cache(self, setup, tmp_path, monkeypatch):
        inputs, y, split, build, tc = setup
        cache = TrialCache(tmp_path)
        first = random_search(TINY, 2, build, inputs, y, split, tc, master_seed=4, cache=cache, cache_tag="x")

        def boom(*args):
            raise AssertionError("trial re-run despite cache")
        monkeypatch.setattr(hpo, "run_trial", boom)
        second = random_search(TINY, 2, build, inputs, y, split, tc, master_seed=4, cache=cache, cache_tag="x")
        assert second.test_error == first.test_error
        assert [t.hp for t in second.trials] == [t.hp for t in first.trials]

    def test_all_diverged(self, setup, monkeypatch):
        inputs, y, split, build, tc = setup

        def diverged(build_fn, space, inputs, targets, split, tc, master_seed, repeat, index):
            return TrialResult(index, 0, sample_hp(space, np.random.default_rng(index)), status="diverged"), None
        monkeypatch.setattr(hpo, "run_trial", diverged)
        with pytest.raises(errors.NoViableTrial):
            random_search(TINY, 2, build, inputs, y, split, tc, master_seed=0)

    def test_invalid(self, setup):
        inputs, y, split, build, tc = setup
        with pytest.raises(errors.UsageError):
            random_search(TINY, 0, build, inputs, y, split, tc, master_seed=0)
        with pytest.raises(errors.UsageError):
            repeat_tuning(0, TINY, 1, build, inputs, y, split, tc, master_seed=0)


class TestReport:
    def test_single_repeat_std_undefined(self, setup):
        inputs, y, split, build, tc = setup
        report = repeat_tuning(1, TINY, 1, build, inputs, y, split, tc, master_seed=1)
        assert report.std is None
        assert report.mean == report.test_errors[0]

    def test_identical_errors_std_zero(self):
        h = HyperParams(1e-4, 10, 100, 100, 0.3, 500)
        searches = [SearchResult(r, [TrialResult(0, r, h, 0.1, 0.0, 0.25)], 0, 0.25) for r in range(3)]
        report = TuningReport(searches)
        assert report.std == 0.0 and report.mean == 0.25

    def test_std_sample_formula(self):
        h = HyperParams(1e-4, 10, 100, 100, 0.3, 500)
        errs = [0.1, 0.2, 0.4]
        report = TuningReport([SearchResult(r, [TrialResult(0, r, h)], 0, e) for r, e in enumerate(errs)])
        m = sum(errs) / 3
        assert report.std == pytest.approx(math.sqrt(sum((e - m) ** 2 for e in errs) / 2))

    def test_repeats_draw_fresh(self, setup):
        inputs, y, split, build, tc = setup
        log = AccessLog()
        report = repeat_tuning(2, TINY, 2, build, inputs, y, split, tc, master_seed=6, log=log, run="t")
        assert report.searches[0].trials[0].seed != report.searches[1].trials[0].seed
        csv = report.trials_csv().splitlines()
        assert len(csv) == 1 + 4
        assert sum(line.endswith(",1") for line in csv[1:]) == 2
        assert audit_lines(log.lines) == []
