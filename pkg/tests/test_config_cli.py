import json

import numpy as np
import pytest

from majorant.cli import main
from majorant.config import (
    REQUIRED,
    apply_schema,
    load_config,
    parse_bool,
    parse_grid,
    parse_int,
    parse_int_list,
    parse_number,
)
from majorant.errors import ConfigError


# ---------------------------------------------------------------------------
# config grammar

def test_parse_number_plain_and_power():
    assert parse_number("0.25") == 0.25
    assert parse_number("2^-12") == 2.0**-12
    assert parse_number("10^2") == 100.0
    with pytest.raises(ConfigError):
        parse_number("two")


def test_parse_int_rejects_fractions():
    assert parse_int("2^4") == 16
    with pytest.raises(ConfigError):
        parse_int("2.5")


def test_parse_grid_comma_list():
    assert parse_grid("1, 2, 4.5") == [1.0, 2.0, 4.5]


def test_parse_grid_ladder_is_factor_two():
    grid = parse_grid("2^-12 .. 2^0")
    assert len(grid) == 13
    assert grid[0] == 2.0**-12
    assert grid[-1] == 1.0
    ratios = np.diff(np.log2(grid))
    np.testing.assert_allclose(ratios, 1.0, atol=1e-12)


def test_parse_grid_ladder_must_land_on_endpoint():
    with pytest.raises(ConfigError):
        parse_grid("1 .. 3")


def test_parse_bool_and_int_list():
    assert parse_bool("true") is True
    assert parse_bool("no") is False
    assert parse_int_list("1, 2, 3") == [1, 2, 3]
    with pytest.raises(ConfigError):
        parse_bool("maybe")


def test_load_config_sections(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[bounds]\nm_train = 50\n\n[nngp-check]\nwidth = 2^7\n")
    sections = load_config(cfg)
    assert sections["bounds"]["m_train"] == "50"
    assert sections["nngp-check"]["width"] == "2^7"


def test_apply_schema_defaults_required_and_unknown():
    schema = {"a": (parse_int, 3), "b": (parse_number, REQUIRED)}
    out = apply_schema("s", {"b": "2^-1"}, schema)
    assert out == {"a": 3, "b": 0.5}
    with pytest.raises(ConfigError):
        apply_schema("s", {}, schema)
    with pytest.raises(ConfigError):
        apply_schema("s", {"b": "1", "zz": "1"}, schema)


# ---------------------------------------------------------------------------
# command line

def test_cli_selftest_passes():
    assert main(["selftest"]) == 0


def test_cli_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert main([]) == 1


def test_cli_missing_config_file_is_usage_error(tmp_path):
    assert main(["bounds", "--config", str(tmp_path / "none.cfg")]) == 1


def test_cli_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[bounds]\nwat = 1\n")
    assert main(["bounds", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_cli_nngp_check_writes_outputs(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "[nngp-check]\nwidth = 32\ndepth = 2\nn_samples = 500\nm_inputs = 3\nd0 = 6\n"
    )
    out = tmp_path / "out"
    assert main(["nngp-check", "--config", str(cfg), "--seed", "1",
                 "--out", str(out)]) == 0
    assert (out / "nngp-check.csv").exists()
    assert (out / "nngp-check.png").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "nngp-check"
    assert manifest["seed"] == 1
    assert "config_hash" in manifest
    assert manifest["failures"] == []


def test_cli_bounds_json_layout(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "[bounds]\nm_train = 16\nd0 = 6\northant_samples = 10^4\n"
        "kernel_depth = 2\nlog_shatter = 5\n"
    )
    out = tmp_path / "out"
    assert main(["bounds", "--config", str(cfg), "--out", str(out)]) == 0
    blob = json.loads((out / "bounds.json").read_text())
    for name in ("gibbs-orthant", "gibbs-complexity", "gibbs-spherised",
                 "bpm-orthant", "bpm-complexity", "bpm-spherised", "vc"):
        assert name in blob
        assert set(blob[name]) == {"value", "inputs", "vacuous_flag"}


def test_cli_partial_cell_failure_exits_two(tmp_path):
    # a nonpositive margin target fails the finite-path cells while the
    # others proceed; that is a partial failure
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "[margin-sweep]\nd0 = 6\nm_train = 20\nm_test = 10\n"
        "nngp_gammas = 1\nfinite_gammas = -1\nensemble_sizes = 1\n"
        "net_width = 8\nnet_depth = 2\nsteps = 5\nkernel_depth = 2\n"
    )
    out = tmp_path / "out"
    assert main(["margin-sweep", "--config", str(cfg), "--out", str(out)]) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["failures"]) == 1
    # the healthy cells still produced rows
    text = (out / "margin-sweep.csv").read_text()
    assert "nngp" in text


def test_cli_seed_changes_outputs(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[nngp-check]\nwidth = 16\nn_samples = 500\nm_inputs = 3\nd0 = 6\n")
    out1, out2, out3 = (tmp_path / n for n in ("a", "b", "c"))
    main(["nngp-check", "--config", str(cfg), "--seed", "1", "--out", str(out1)])
    main(["nngp-check", "--config", str(cfg), "--seed", "1", "--out", str(out2)])
    main(["nngp-check", "--config", str(cfg), "--seed", "2", "--out", str(out3)])
    a = (out1 / "nngp-check.csv").read_bytes()
    b = (out2 / "nngp-check.csv").read_bytes()
    c = (out3 / "nngp-check.csv").read_bytes()
    assert a == b
    assert a != c
