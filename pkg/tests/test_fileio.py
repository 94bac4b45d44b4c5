import json

import numpy as np
import pytest

from tlspose import model
from tlspose.errors import ScanFileError
from tlspose.fileio import SCHEMA_VERSION, ScanFile, dumps, load_scan, parse_scan, scan_to_dict, scenario_path, write_json


def _scenario_dict():
    return scan_to_dict(ScanFile(model.scenario_instance(), model.scenario_truth()))


def test_bundled_scenario_matches_constants():
    scan = load_scan(scenario_path())
    inst = model.scenario_instance()
    np.testing.assert_array_equal(scan.instance.r_tilde, inst.r_tilde)
    np.testing.assert_array_equal(scan.instance.b_tilde, inst.b_tilde)
    for a, b in zip(scan.instance.noises, inst.noises):
        np.testing.assert_array_equal(a.matrix, b.matrix)
    np.testing.assert_array_equal(scan.truth.attitude, np.eye(3))
    np.testing.assert_array_equal(scan.truth.translation, [0.3, -0.4, 0.5])


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    from tlspose.montecarlo import random_instance

    inst, truth = random_instance(rng, 5, scale=1e-6)
    path = tmp_path / "x.json"
    write_json(path, scan_to_dict(ScanFile(inst, truth)))
    back = load_scan(path)
    np.testing.assert_array_equal(back.instance.r_tilde, inst.r_tilde)
    np.testing.assert_array_equal(back.instance.b_tilde, inst.b_tilde)
    np.testing.assert_array_equal(back.instance.R_rb, inst.R_rb)
    np.testing.assert_array_equal(back.truth.attitude, truth.attitude)


def test_dumps_formatting():
    text = dumps({"a": [1.0, 2, 0.1], "b": {"m": [[1.0, 0.0], [0.0, 1.0]]}, "c": float("nan"), "d": True})
    data = json.loads(text)
    assert data["a"] == [1.0, 2, 0.1]
    assert data["c"] is None and data["d"] is True
    assert "[1.0, 2, 0.10000000000000001]" in text
    rng = np.random.default_rng(1)
    for x in rng.normal(size=100) * 10.0 ** rng.integers(-300, 300, 100):
        assert float(dumps(np.float64(x))) == x


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda d: d["observations"][1].update(b_tild=d["observations"][1].pop("b_tilde")), "observations[1].b_tild"),
        (lambda d: d["observations"][0].pop("R"), "observations[0].R"),
        (lambda d: d["observations"][2]["R"][4].pop(), "observations[2].R[4]"),
        (lambda d: d["observations"][0]["r_tilde"].__setitem__(1, "x"), "observations[0].r_tilde[1]"),
        (lambda d: d.update(schema_version=2), "schema_version"),
        (lambda d: d.pop("schema_version"), "schema_version"),
        (lambda d: d.update(extra=1), "extra"),
        (lambda d: d["truth"].update(attitude=[[1, 0, 0], [0, 1, 0], [0, 0, -1]]), "truth.attitude"),
        (lambda d: d.update(observations={}), "observations"),
    ],
)
def test_parse_errors_name_the_path(mutate, path):
    d = json.loads(dumps(_scenario_dict()))
    mutate(d)
    with pytest.raises(ScanFileError) as info:
        parse_scan(d, "in.json")
    assert info.value.path == f"in.json:{path}"
    assert path in str(info.value)


def test_load_errors(tmp_path):
    with pytest.raises(ScanFileError, match="cannot read"):
        load_scan(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    with pytest.raises(ScanFileError, match="invalid JSON"):
        load_scan(bad)


def test_optional_sigmas():
    d = json.loads(dumps(_scenario_dict()))
    assert parse_scan(d).sigmas_r is None
    for ob in d["observations"]:
        ob["sigma_r"] = 1e-3
        ob["sigma_b"] = 2e-3
    scan = parse_scan(d)
    assert scan.sigmas_r == [1e-3] * 3 and scan.sigmas_b == [2e-3] * 3
    assert json.loads(dumps(scan_to_dict(scan)))["observations"][0]["sigma_b"] == 2e-3


def test_schema_version_constant():
    assert json.loads(open(scenario_path()).read())["schema_version"] == SCHEMA_VERSION
