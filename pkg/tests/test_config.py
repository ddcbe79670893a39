import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rdsmanifold.config import (COROLLARY_DATASETS, PRESETS, ConfigError, build_scenario, corollary_data,
                                load_config, make_driving, make_function, merge, parse_override, resolve)
from rdsmanifold.driving import TimeDomain


W = np.array([0.7, -1.2])


def test_parse_override_types():
    assert parse_override("grids.k_max=12") == (["grids", "k_max"], 12)
    assert parse_override("tolerances.solver=1e-9") == (["tolerances", "solver"], 1e-9)
    assert parse_override("a.b=true") == (["a", "b"], True)
    assert parse_override("perturbation.kind=zero") == (["perturbation", "kind"], "zero")
    assert parse_override('x="quoted"') == (["x"], "quoted")
    assert parse_override("v=[1, 2]") == (["v"], [1, 2])
    # everything after the first '=' belongs to the value
    assert parse_override("s=a=b") == (["s"], "a=b")


@pytest.mark.parametrize("text", ["novalue", "=3", " . =3"])
def test_parse_override_rejects(text):
    with pytest.raises(ConfigError):
        parse_override(text)


def test_merge_is_deep_but_kind_tables_replace():
    base = {"g": {"a": 1, "b": 2}, "f": {"kind": "exp", "rate": 1.0, "scale": 2.0}}
    out = merge(base, {"g": {"b": 3}, "f": {"kind": "const", "value": 4.0}})
    assert out == {"g": {"a": 1, "b": 3}, "f": {"kind": "const", "value": 4.0}}
    assert base["g"]["b"] == 2


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")


def test_unparseable_file(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("grids = [\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(p)


def test_unknown_preset_and_keys():
    with pytest.raises(ConfigError, match="unknown preset"):
        resolve({}, "nonexistent")
    with pytest.raises(ConfigError, match="unknown top-level"):
        resolve({"grid": {}})


def test_toml_file_over_preset(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('preset = "toy-pseudo-hyperbolic"\n\n[grids]\nk_max = 12\n\n[tolerances]\nsolver = 1e-6\n')
    cfg = load_config(p, ["grids.horizon=15"])
    assert cfg["grids"]["k_max"] == 12 and cfg["grids"]["horizon"] == 15
    assert cfg["grids"]["xi_points"] == 41
    assert cfg["tolerances"]["solver"] == 1e-6
    assert cfg["preset"] == "toy-pseudo-hyperbolic"


def test_explicit_preset_wins_over_file(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('preset = "tempered-exp"\n')
    assert load_config(p, preset="toy-pseudo-hyperbolic")["preset"] == "toy-pseudo-hyperbolic"


def test_presets_build():
    for name in PRESETS:
        sc = build_scenario(load_config(None, preset=name))
        assert sc.discrete == (name != "example2-poly")
        assert sc.time_step == (1.0 if sc.discrete else 0.1)


def test_zero_override_replaces_perturbation():
    cfg = load_config(None, ["perturbation.kind=zero"], preset="toy-pseudo-hyperbolic")
    sc = build_scenario(cfg)
    x = np.array([0.3, 0.4])
    assert sc.perturbation.f(np.array([0.0]), x).tolist() == [0.0, 0.0]


# --- function specs


def test_number_spec():
    assert make_function(2.5)(W) == 2.5
    assert make_function(3)(W) == 3.0


@pytest.mark.parametrize("spec, expect", [
    ({"kind": "const", "value": 1.5}, 1.5),
    ({"kind": "exp", "rate": 0.5}, math.exp(0.35)),
    ({"kind": "exp", "rate": 0.5, "scale": 2.0, "coord": 1}, 2.0 * math.exp(-0.6)),
    ({"kind": "exp-abs", "rate": -1.0, "coord": 1}, math.exp(-1.2)),
    ({"kind": "exp-wobble", "rate": 0.5, "wobble": 0.1}, math.exp(0.35 + 0.1 * math.sin(0.7))),
    ({"kind": "poly", "power": 0.25}, (1 + 0.49) ** (0.25 * (1 + 1.44))),
    ({"kind": "sin2", "base": 1.0, "amp": 0.5}, 1.0 + 0.5 * math.sin(0.7) ** 2),
    ({"kind": "min", "args": [2.0, {"kind": "exp", "rate": 1.0}]}, 2.0),
    ({"kind": "product", "factors": [2.0, 3.0]}, 6.0),
    ({"kind": "exp", "rate": 1.0, "power": 2.0}, math.exp(1.4)),
])
def test_function_kinds(spec, expect):
    assert make_function(spec)(W) == pytest.approx(expect, rel=1e-15)


def test_missing_coordinate_reads_zero():
    assert make_function({"kind": "exp", "rate": 1.0, "coord": 3})(W) == 1.0


@pytest.mark.parametrize("spec", [True, "exp", {"rate": 1.0}, {"kind": "exp"}, {"kind": "exp", "rate": "x"},
                                  {"kind": "min", "args": []}, {"kind": "cosh", "rate": 1.0}])
def test_bad_function_specs(spec):
    with pytest.raises(ConfigError):
        make_function(spec)


@given(r=st.floats(-3, 3), x=st.floats(-5, 5))
def test_exp_abs_is_even(r, x):
    f = make_function({"kind": "exp-abs", "rate": r})
    assert f(np.array([x])) == f(np.array([-x]))


# --- scenario errors


def _toy():
    return load_config(None, preset="toy-pseudo-hyperbolic")


@pytest.mark.parametrize("override", [
    "cocycle.kind=spiral",
    "bounds.kind=example2",
    "bounds.kind=wobbly",
    "perturbation.kind=cubic",
    "driving.kind=torus",
    "threads=0",
])
def test_scenario_errors(override):
    with pytest.raises(ConfigError):
        build_scenario(load_config(None, [override], preset="toy-pseudo-hyperbolic"))


def test_missing_sections():
    cfg = _toy()
    del cfg["grids"]
    with pytest.raises(ConfigError):
        build_scenario(cfg)
    with pytest.raises(ConfigError):
        build_scenario({})


def test_continuous_needs_time_step():
    cfg = load_config(None, preset="example2-poly")
    del cfg["grids"]["time_step"]
    with pytest.raises(ConfigError, match="time_step"):
        build_scenario(cfg)


def test_circle_rotation_needs_angle():
    with pytest.raises(ConfigError):
        make_driving({"kind": "circle-rotation"})
    assert make_driving("planar-shift").time_domain is TimeDomain.CONTINUOUS


def test_corollary_datasets():
    for kind in COROLLARY_DATASETS:
        data, samples, horizon = corollary_data(kind)
        assert data.delta == 0.2 and samples and horizon > 0
    data, _, _ = corollary_data("c42", {"delta": 0.1})
    assert data.delta == 0.1
    with pytest.raises(ConfigError):
        corollary_data("c99")
