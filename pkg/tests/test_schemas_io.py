"""
Tests for file schemas and atomic I/O.

Tests verify:
- Canonical JSON for datasets and result bundles
- JSON-path locations in validation errors
- Atomic writes leave no partial or temporary files
- CSV formatting
"""
import json
from unittest.mock import patch

import numpy as np
import pytest

from impedans.config import apply_overrides
from impedans.errors import SchemaError
from impedans.io import (
    SPECTRUM_HEADER,
    atomic_write_text,
    dump_model,
    read_model,
    read_reference_spectrum,
    write_convergence_csv,
    write_csv,
    write_json_model,
    write_spectrum_csv,
)
from impedans.oracle import add_complex_noise
from impedans.schemas import DatasetFile, ReferenceSpectrumFile, ResultBundle, from_pairs, predict_field, to_pairs
from impedans.trainer import predict_pressure, train


@pytest.fixture
def trained(tiny_problem):
    """A one-epoch result on the tiny problem."""
    dataset, domain, config = tiny_problem
    return dataset, train(dataset, domain, apply_overrides(config, {"budget.epochs": 1}), dataset.reference_zeta)


class TestPairs:
    """Test suite for the [re, im] encoding."""

    def test_nested_shape(self):
        values = np.array([[1 + 2j, 3 - 4j]])
        assert to_pairs(values) == [[[1.0, 2.0], [3.0, -4.0]]]
        np.testing.assert_array_equal(from_pairs(to_pairs(values)), values)


class TestDatasetFile:
    """Test suite for dataset files."""

    def test_write_read_is_byte_identical(self, tiny_problem, tmp_path):
        dataset, _, _ = tiny_problem
        path = write_json_model(tmp_path / "dataset.json", DatasetFile.from_dataset(dataset))
        loaded = read_model(path, DatasetFile)
        assert dump_model(DatasetFile.from_dataset(loaded.to_dataset())) == path.read_text()

    def test_restores_arrays(self, tiny_problem):
        dataset, _, _ = tiny_problem
        restored = DatasetFile.from_dataset(dataset).to_dataset()
        np.testing.assert_array_equal(restored.pressure, dataset.pressure)
        np.testing.assert_array_equal(restored.reference_zeta, dataset.reference_zeta)
        assert restored.geometry == dataset.geometry

    def test_geometry_normal_alias(self, tiny_problem):
        dataset, _, _ = tiny_problem
        data = json.loads(dump_model(DatasetFile.from_dataset(dataset)))
        assert data["geometry"]["normal"] == [0.0, 0.0, -1.0]
        assert data["schema_version"] == "1.0"

    def test_noise_metadata(self, tiny_problem):
        dataset, _, _ = tiny_problem
        noisy = add_complex_noise(dataset, 20.0, seed=3)
        restored = DatasetFile.from_dataset(noisy).to_dataset()
        assert restored.noise_meta.snr_db == 20.0
        assert restored.noise_meta.seed == 3

    def test_row_length_checked(self, tiny_problem):
        dataset, _, _ = tiny_problem
        data = DatasetFile.from_dataset(dataset).model_dump(mode="json", by_alias=True)
        data["pressure"][0] = data["pressure"][0][:-1]
        with pytest.raises(ValueError):
            DatasetFile.model_validate(data)


class TestReadModel:
    """Test suite for validated reads."""

    def test_json_path_location(self, tmp_path):
        path = tmp_path / "reference.json"
        path.write_text(json.dumps({"schema_version": "1.0", "frequencies_hz": [500.0], "zeta": [[1.0, "x"]]}))
        with pytest.raises(SchemaError) as exc_info:
            read_model(path, ReferenceSpectrumFile)
        assert exc_info.value.locations == ["$.zeta[0][1]"]
        assert exc_info.value.exit_code == 1

    def test_unknown_schema_version(self, tmp_path):
        path = tmp_path / "reference.json"
        path.write_text(json.dumps({"schema_version": "2.0", "frequencies_hz": [500.0], "zeta": [[1.0, 0.0]]}))
        with pytest.raises(SchemaError) as exc_info:
            read_model(path, ReferenceSpectrumFile)
        assert "$.schema_version" in exc_info.value.locations

    def test_not_json(self, tmp_path):
        path = tmp_path / "garbage.json"
        path.write_text("{not json")
        with pytest.raises(SchemaError):
            read_model(path, ReferenceSpectrumFile)

    def test_reference_from_dataset(self, tiny_problem, tmp_path):
        dataset, _, _ = tiny_problem
        path = write_json_model(tmp_path / "dataset.json", DatasetFile.from_dataset(dataset))
        frequencies, zeta = read_reference_spectrum(path)
        np.testing.assert_array_equal(frequencies, dataset.frequencies)
        np.testing.assert_array_equal(zeta, dataset.reference_zeta)

    def test_reference_from_spectrum_file(self, tmp_path):
        model = ReferenceSpectrumFile(frequencies_hz=[500.0, 600.0], zeta=[(2.0, -1.0), (2.0, -1.0)])
        path = write_json_model(tmp_path / "reference.json", model)
        _, zeta = read_reference_spectrum(path)
        np.testing.assert_array_equal(zeta, [2 - 1j, 2 - 1j])

    def test_dataset_without_reference(self, tiny_problem, tmp_path):
        dataset, _, _ = tiny_problem
        data = DatasetFile.from_dataset(dataset).model_copy(update={"reference_zeta": None})
        path = write_json_model(tmp_path / "dataset.json", data)
        with pytest.raises(SchemaError) as exc_info:
            read_reference_spectrum(path)
        assert exc_info.value.locations == ["$.reference_zeta"]


class TestAtomicWrite:
    """Test suite for atomic_write_text."""

    def test_creates_parents(self, tmp_path):
        path = atomic_write_text(tmp_path / "a" / "b" / "out.txt", "hello\n")
        assert path.read_text() == "hello\n"

    def test_no_temporary_files_remain(self, tmp_path):
        atomic_write_text(tmp_path / "out.txt", "one")
        atomic_write_text(tmp_path / "out.txt", "two")
        assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]
        assert (tmp_path / "out.txt").read_text() == "two"

    def test_failed_replace_keeps_original(self, tmp_path):
        """Test that a failure before the rename leaves the old file intact."""
        target = tmp_path / "out.txt"
        target.write_text("original")
        with patch("impedans.io.os.replace", side_effect=OSError("disk full")):
            with pytest.raises(OSError):
                atomic_write_text(target, "new")
        assert target.read_text() == "original"
        assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


class TestCsv:
    """Test suite for CSV writers."""

    def test_none_and_float_formatting(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["a [-]", "b [-]", "n"], [[0.1, None, 3]])
        assert path.read_text() == "a [-],b [-],n\n0.1,,3\n"

    def test_spectrum_csv(self, trained, tmp_path):
        _, result = trained
        bundle = ResultBundle.from_result(result)
        lines = write_spectrum_csv(tmp_path / "spectrum.csv", bundle).read_text().splitlines()
        assert lines[0] == ",".join(SPECTRUM_HEADER)
        assert len(lines) == 1 + len(bundle.frequencies_hz)

    def test_convergence_csv_omits_timing(self, trained, tmp_path):
        _, result = trained
        bundle = ResultBundle.from_result(result)
        lines = write_convergence_csv(tmp_path / "convergence.csv", bundle).read_text().splitlines()
        assert lines[0].startswith("epoch,")
        assert "elapsed_s" not in lines[0]
        assert "zeta_re@500Hz [-]" in lines[0]
        assert len(lines) == 1 + len(bundle.convergence)


class TestResultBundle:
    """Test suite for result bundles."""

    def test_round_trip_text(self, trained, tmp_path):
        dataset, result = trained
        bundle = ResultBundle.from_result(result, dataset.provenance)
        path = write_json_model(tmp_path / "result.json", bundle)
        assert dump_model(read_model(path, ResultBundle)) == path.read_text()

    def test_reloaded_network_predicts_identically(self, trained, tmp_path):
        """Test that a saved bundle reproduces the trained network's pressures."""
        dataset, result = trained
        path = write_json_model(tmp_path / "result.json", ResultBundle.from_result(result))
        bundle = read_model(path, ResultBundle)
        expected = predict_pressure(result.bank, result.preprocess, dataset.sensors)
        np.testing.assert_array_equal(predict_field(bundle, dataset.sensors), expected)

    def test_spectrum_matches(self, trained):
        _, result = trained
        bundle = ResultBundle.from_result(result)
        np.testing.assert_array_equal(bundle.spectrum().zeta, result.zeta)
        assert bundle.epochs == 1
        assert bundle.config == result.config
        assert bundle.network.dtype == "float64"
