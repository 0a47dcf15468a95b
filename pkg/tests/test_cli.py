import csv
import json
import math

import pytest

from fdwpt import cli
from fdwpt.cli import ConfigError, load_scenario, main, parse_scenario

REFERENCE_DEFAULTS = {
    "n_total": 6, "n_tx": [2, 3, 4, 5], "power_dbm": [0, 10], "eta": 0.5,
    "distance_m": 10, "pathloss_exp": 3, "li_bs_dbm": 30, "li_ms_dbm": 30,
    "noise_bs_dbm": -70, "noise_ms_dbm": -70,
}

SMALL = {"n_tx": 2, "realizations": 2, "rb_grid_points": 5, "alpha_step": 0.01,
         "mc_samples": 2000, "rho_grid": [1.0, 0.2], "beta_grid_points": 16,
         "partial_alpha_step": 0.05}


def write_config(tmp_path, data, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_reference_default_file_parses(tmp_path):
    scen = load_scenario(write_config(tmp_path, REFERENCE_DEFAULTS))
    assert scen.n_tx == (2, 3, 4, 5) and scen.power_dbm == (0.0, 10.0)
    assert len(scen.cases()) == 8
    params = scen.params(2, 10.0)
    assert params.n_rx == 4
    assert params.p_bs == pytest.approx(0.01)
    assert params.sigma2_b == pytest.approx(1e-10)
    assert params.sigma2_li_bs == pytest.approx(1.0)


def test_power_string_with_unit():
    scen = parse_scenario({"power_dbm": "0 dBm"})
    assert scen.params(4, scen.power_dbm[0]).p_bs == pytest.approx(0.001)


@pytest.mark.parametrize("raw,key", [
    ({"n_tx": 6, "n_total": 6}, "n_tx"),
    ({"n_tx": 0}, "n_tx"),
    ({"eta": 1.5}, "eta"),
    ({"rho_grid": [0.5, 0.0]}, "rho_grid"),
    ({"realizations": 0}, "realizations"),
    ({"power_dbm": "ten"}, "power_dbm"),
    ({"mc_samples": 10}, "mc_samples"),
    ({"gamma_b": 3}, "gamma_b"),
])
def test_invalid_values_name_the_key(raw, key):
    with pytest.raises(ConfigError, match=key):
        parse_scenario(raw)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_scenario(bad)
    with pytest.raises(ConfigError):
        parse_scenario([1, 2])


def test_exit_codes_for_config_errors(tmp_path, capsys):
    assert main(["rate-region", "--config", str(tmp_path / "none.json")]) == cli.EXIT_CONFIG
    path = write_config(tmp_path, {"realisations": 3})
    assert main(["validate", "--config", path]) == cli.EXIT_CONFIG
    assert "realisations" in capsys.readouterr().err


def test_rate_region_output(tmp_path):
    path = write_config(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main(["rate-region", "--config", path, "--out-dir", str(out)]) == 0
    rows = read_csv(out / "rate_region.csv")
    assert tuple(rows[0]) == ("realization_id", "r_b_target_bpcu", "method", "alpha",
                              "ms_rate_bpcu", "feasible")
    assert len(rows) - 1 == 2 * 5 * 4
    avg = read_csv(out / "rate_region_avg.csv")
    assert len(avg) - 1 == 5 * 4
    curve = {(r[1], r[0]): r for r in avg[1:]}
    for idx in range(5):
        opt, zf = curve[("optimum", str(idx))], curve[("zf", str(idx))]
        if opt[3] != "nan" and zf[3] != "nan" and opt[4] == zf[4] == "1":
            assert float(opt[3]) >= float(zf[3]) - 1e-9


def test_rate_region_is_deterministic(tmp_path):
    path = write_config(tmp_path, SMALL)
    for d in ("a", "b"):
        assert main(["rate-region", "--config", path, "--out-dir", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "rate_region.csv").read_bytes() == \
        (tmp_path / "b" / "rate_region.csv").read_bytes()
    assert main(["rate-region", "--config", path, "--out-dir", str(tmp_path / "c"),
                 "--seed", "5"]) == 0
    assert (tmp_path / "a" / "rate_region.csv").read_bytes() != \
        (tmp_path / "c" / "rate_region.csv").read_bytes()


def test_rate_region_parallel_matches_serial(tmp_path):
    path = write_config(tmp_path, SMALL)
    assert main(["rate-region", "--config", path, "--out-dir", str(tmp_path / "s")]) == 0
    assert main(["rate-region", "--config", path, "--out-dir", str(tmp_path / "p"),
                 "--threads", "2"]) == 0
    assert (tmp_path / "s" / "rate_region.csv").read_bytes() == \
        (tmp_path / "p" / "rate_region.csv").read_bytes()


def test_multiple_cases_go_to_subdirectories(tmp_path):
    path = write_config(tmp_path, dict(SMALL, n_tx=[2, 3], realizations=1, rb_grid_points=2))
    assert main(["rate-region", "--config", path, "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "nt2_p0dBm" / "rate_region.csv").exists()
    assert (tmp_path / "nt3_p0dBm" / "rate_region.csv").exists()


def test_partial_csi_output(tmp_path):
    path = write_config(tmp_path, dict(SMALL, power_dbm=10))
    out = tmp_path / "out"
    assert main(["partial-csi", "--config", path, "--out-dir", str(out)]) == 0
    rows = read_csv(out / "partial_csi.csv")
    assert tuple(rows[0]) == ("rho", "alpha_opt", "beta_opt", "ergodic_rate_bpcu",
                              "outage_bound", "outage_exact", "outage_mc")
    assert [float(r[0]) for r in rows[1:]] == [1.0, 0.2]
    runs = read_csv(out / "partial_csi_runs.csv")
    assert runs[0][0] == "realization_id" and len(runs) - 1 == 4
    for r in runs[1:]:
        rho, bound, exact = float(r[1]), float(r[5]), float(r[6])
        if not math.isnan(exact):
            assert exact <= bound <= rho * (1 + 1e-9)


def test_validate_default_config_passes(tmp_path):
    path = write_config(tmp_path, {})
    assert main(["validate", "--config", path, "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "validation.csv")
    assert tuple(rows[0]) == ("quantity", "sweep_value", "analytic", "mc", "stderr",
                              "allowed", "passed")
    assert len(rows) - 1 == 12
    assert all(r[6] == "1" for r in rows[1:])


def test_validate_zero_tolerance_fails(tmp_path):
    path = write_config(tmp_path, {"tolerance_scale": 0, "mc_samples": 10_000})
    assert main(["validate", "--config", path, "--out-dir", str(tmp_path)]) == cli.EXIT_VALIDATION


def test_number_formatting():
    assert cli._fmt(1 / 3) == "0.333333333333"
    assert cli._fmt(True) == "1" and cli._fmt(False) == "0"
    assert cli._fmt(math.nan) == "nan"
