import numpy as np
import pytest

from cyclefusion import errors
from cyclefusion.ingest import (SENSORS, AccumulatorClass, DataSet, Provenance, SyntheticSpec,
                                accumulator_setpoints, generate_synthetic, label_class,
                                load_dataset, noise_channel, save_dataset)
from cyclefusion.fesc import build_feature_matrix, pearson_scores


class TestManifest:
    def test_seventeen_sensors(self):
        assert len(SENSORS) == 17
        assert len({s.name for s in SENSORS}) == 17

    def test_rates_and_lengths(self):
        for s in SENSORS:
            assert s.rate_hz in (1, 10, 100)
            assert s.length == s.rate_hz * 60
            assert s.length in (60, 600, 6000)


class TestLabels:
    setpoints = (130, 115, 100, 90)

    def test_highest_is_optimal(self):
        assert label_class(130, self.setpoints) is AccumulatorClass.OPTIMAL

    def test_lowest_is_close_to_failure(self):
        assert label_class(90, self.setpoints) is AccumulatorClass.CLOSE_TO_FAILURE

    def test_order_reversing(self):
        codes = [label_class(v, self.setpoints) for v in sorted(self.setpoints)]
        assert codes == [3, 2, 1, 0]

    def test_unknown(self):
        with pytest.raises(errors.UnknownSetpoint):
            label_class(120, self.setpoints)

    def test_setpoints_from_profile_ranked(self):
        assert accumulator_setpoints([90, 130, 100, 115, 130]) == (130, 115, 100, 90)
        assert accumulator_setpoints([80, 70, 60, 50]) == (80, 70, 60, 50)

    def test_setpoints_partial_profile_uses_documented_levels(self):
        assert accumulator_setpoints([130, 90]) == (130, 115, 100, 90)
        with pytest.raises(errors.UnknownSetpoint):
            accumulator_setpoints([131, 90])


class TestLoad:
    def test_round_trip(self, small_synthetic, tmp_path):
        save_dataset(small_synthetic, tmp_path)
        loaded = load_dataset(tmp_path)
        assert loaded.n_cycles == 12
        for name in small_synthetic.sensors:
            np.testing.assert_array_equal(loaded.series[name], small_synthetic.series[name])
        np.testing.assert_array_equal(loaded.targets, small_synthetic.targets)
        save_dataset(loaded, tmp_path / "again")
        assert load_dataset(tmp_path / "again") == loaded

    def test_cycle_count_and_lengths(self, small_synthetic, tmp_path):
        save_dataset(small_synthetic, tmp_path)
        ds = load_dataset(tmp_path)
        assert ds.provenance is Provenance.REAL
        for name, rate, length in ds.manifest:
            assert ds.series[name].shape == (12, length)
        assert ds.class_counts().sum() == ds.n_cycles
        rec = ds.record(3)
        assert rec.index == 3 and set(rec.series) == set(ds.sensors)
        assert rec.target == label_class(rec.profile.accumulator_bar, ds.setpoints)

    def test_ten_rows(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(cycles=10, sensors=17, seed=1))
        save_dataset(ds, tmp_path)
        assert load_dataset(tmp_path).n_cycles == 10

    def test_missing_file(self, small_synthetic, tmp_path):
        save_dataset(small_synthetic, tmp_path)
        (tmp_path / "PS3.txt").unlink()
        with pytest.raises(errors.MissingSensorFile) as exc:
            load_dataset(tmp_path)
        assert exc.value.sensor == "PS3"

    def test_inconsistent_rows(self, small_synthetic, tmp_path):
        save_dataset(small_synthetic, tmp_path)
        lines = (tmp_path / "TS1.txt").read_text().splitlines()
        (tmp_path / "TS1.txt").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(errors.InconsistentCycleCount):
            load_dataset(tmp_path)

    def test_parse_error_location(self, small_synthetic, tmp_path):
        save_dataset(small_synthetic, tmp_path)
        lines = (tmp_path / "VS1.txt").read_text().splitlines()
        tokens = lines[2].split("\t")
        tokens[5] = "abc"
        lines[2] = "\t".join(tokens)
        (tmp_path / "VS1.txt").write_text("\n".join(lines) + "\n")
        with pytest.raises(errors.ParseError) as exc:
            load_dataset(tmp_path)
        assert (exc.value.file, exc.value.row, exc.value.col) == ("VS1.txt", 2, 5)

    def test_wrong_column_count(self, small_synthetic, tmp_path):
        save_dataset(small_synthetic, tmp_path)
        arr = small_synthetic.series["CE"][:, :50]
        np.savetxt(tmp_path / "CE.txt", arr, fmt="%.17g", delimiter="\t")
        with pytest.raises(errors.LengthMismatch) as exc:
            load_dataset(tmp_path)
        assert (exc.value.sensor, exc.value.expected, exc.value.got) == ("CE", 60, 50)

    def test_immutable(self, small_synthetic):
        with pytest.raises(ValueError):
            small_synthetic.series["PS1"][0, 0] = 1.0


class TestSynthetic:
    def test_deterministic(self):
        spec = SyntheticSpec(cycles=20, sensors=3, seed=5)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        assert a == b
        assert a.digest() == b.digest()
        assert generate_synthetic(spec, seed=6) != a

    def test_invalid(self):
        with pytest.raises(errors.InvalidSpec):
            SyntheticSpec(cycles=0)
        with pytest.raises(errors.InvalidSpec):
            SyntheticSpec(classes=0)

    def test_informative_mean_separation(self):
        spec = SyntheticSpec(cycles=400, sensors=2, informative_sensors=1, amplitude=0.5,
                             noise_sigma=1.0, seed=2)
        ds = generate_synthetic(spec)
        means = ds.series["PS1"].mean(axis=1)
        class_means = [means[ds.targets == c].mean() for c in range(4)]
        # adjacent classes differ by the amplitude in expectation
        np.testing.assert_allclose(np.diff(class_means), 0.5, atol=0.01)
        noise_means = ds.series["PS2"].mean(axis=1)
        assert abs(noise_means.mean()) < 0.01

    def test_balanced(self):
        ds = generate_synthetic(SyntheticSpec(cycles=400, sensors=1, seed=0))
        assert list(ds.class_counts()) == [100, 100, 100, 100]

    def test_null_pearson_scores_small(self):
        # no informative channel: every moment is unrelated to the class code
        ds = generate_synthetic(SyntheticSpec(cycles=400, sensors=17, informative_sensors=0, seed=9))
        scores = pearson_scores(build_feature_matrix(ds, ds.sensors))
        assert scores.max() < 0.3

    def test_spec_file(self, tmp_path):
        path = tmp_path / "synth.cfg"
        path.write_text("# demo\ncycles=40\nsensors = 3\ninformative_sensors=1\n"
                        "amplitude=0.5\nnoise_sigma=2\nseed=4\n")
        spec = SyntheticSpec.from_file(path)
        assert spec == SyntheticSpec(cycles=40, sensors=3, informative_sensors=1, amplitude=0.5,
                                     noise_sigma=2.0, seed=4)
        path.write_text(spec.to_text())
        assert SyntheticSpec.from_file(path) == spec
        path.write_text("cycles=4\nbogus=1\n")
        with pytest.raises(errors.InvalidSpec):
            SyntheticSpec.from_file(path)


class TestNoiseChannel:
    def test_support_and_determinism(self):
        a = noise_channel(50, 600, seed=3)
        assert a.shape == (50, 600)
        assert a.min() >= 0.0 and a.max() < 1.0
        np.testing.assert_array_equal(a, noise_channel(50, 600, seed=3))

    def test_mean(self):
        assert abs(noise_channel(1000, 1000, seed=8).mean() - 0.5) <= 0.01

    def test_invalid(self):
        with pytest.raises(errors.InvalidSpec):
            noise_channel(0, 10, seed=1)


def test_dataset_validates_lengths():
    with pytest.raises(errors.LengthMismatch):
        DataSet({"PS1": np.zeros((2, 10))}, np.zeros((2, 5), dtype=np.int64), np.zeros(2, dtype=np.int64))
