import re

import pytest

from mfsde.cli import PRESETS, SCENARIOS, main, parse_config, run_scenario
from mfsde.errors import ConfigError


MINIMAL_ITO = """
scenario = ito_residual
coeff.id = brownian
coeff.s = 1
V.outer = x_norm_sq
N = 10
T = 1
dt = 0.25
"""

SUMMARY_LINE = re.compile(r"^\S+ \S+ [a-z_]+=[-+0-9.einf]+ (PASS|FAIL)$")


# ---------------------------------------------------------------------------
# parsing


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL_ITO)
    assert cfg.scenario == "ito_residual"
    assert cfg.seed == 0
    assert cfg.get("M") == 1
    assert cfg.get("s") == 0.0
    assert cfg.dt_levels == (0.25,)


def test_comments_and_blank_lines_ignored():
    cfg = parse_config(MINIMAL_ITO + "\n# trailing comment\n\nseed = 5  # inline\n")
    assert cfg.seed == 5


def test_dt_ladder_levels():
    cfg = parse_config(
        MINIMAL_ITO.replace("scenario = ito_residual", "scenario = path_independence")
        .replace("dt = 0.25", "dt_ladder = 1e-2, 5e-3, 2.5e-3")
    )
    assert cfg.dt_levels == (1e-2, 5e-3, 2.5e-3)


def test_dt_must_divide_horizon():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL_ITO.replace("dt = 0.25", "dt = 0.3"))
    assert any("'dt'" in v and "horizon" in v for v in exc.value.violations)


def test_all_violations_collected():
    bad = """
scenario = nope
coeff.id = mystery
N = lots
dt = 0.3
T = 1
unknown_key = 1
"""
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    text = "\n".join(exc.value.violations)
    assert "'scenario'" in text
    assert "'coeff.id'" in text
    assert "'N'" in text
    assert "unknown_key" in text
    assert len(exc.value.violations) >= 4


def test_duplicate_key_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL_ITO + "N = 20\n")
    assert any("duplicate key 'N'" in v and "line" in v for v in exc.value.violations)


def test_missing_required_keys_named():
    with pytest.raises(ConfigError) as exc:
        parse_config("scenario = girsanov\n")
    text = "\n".join(exc.value.violations)
    # M is defaulted during parsing and so is never reported missing
    for key in ("coeff.id", "g.kind", "g.value", "T", "dt"):
        assert f"'{key}'" in text


def test_times_must_be_increasing_and_aligned():
    base = """
scenario = flow_property
coeff.id = ou
N = 10
dt = 0.25
"""
    with pytest.raises(ConfigError):
        parse_config(base + "times = 0, 1, 0.5\n")
    with pytest.raises(ConfigError):
        parse_config(base + "times = 0, 0.3, 1\n")
    cfg = parse_config(base + "times = 0, 0.5, 1\n")
    assert cfg.floats("times") == (0.0, 0.5, 1.0)


# ---------------------------------------------------------------------------
# presets


def test_every_preset_parses():
    for name, text in PRESETS.items():
        cfg = parse_config(text)
        assert cfg.scenario in SCENARIOS, name


def test_presets_cover_every_scenario():
    covered = {parse_config(text).scenario for text in PRESETS.values()}
    assert covered == set(SCENARIOS)


# ---------------------------------------------------------------------------
# running


def test_run_scenario_writes_summary_and_passes(tmp_path):
    cfg = parse_config(PRESETS["w2-selftest"])
    status = run_scenario(cfg, str(tmp_path))
    assert status == 0
    lines = (tmp_path / "summary.txt").read_text().splitlines()
    assert lines
    for line in lines:
        assert SUMMARY_LINE.match(line), line
        assert line.endswith("PASS")


def test_falsified_preset_exits_nonzero(tmp_path):
    cfg = parse_config(PRESETS["path-independence-falsified"])
    status = run_scenario(cfg, str(tmp_path))
    assert status == 1
    summary = (tmp_path / "summary.txt").read_text()
    assert "FAIL" in summary


def test_csv_byte_identical_across_reruns(tmp_path):
    cfg = parse_config(PRESETS["w2-selftest"])
    a, b = tmp_path / "a", tmp_path / "b"
    run_scenario(cfg, str(a))
    run_scenario(cfg, str(b))
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_changes_output(tmp_path):
    cfg_a = parse_config(PRESETS["w2-selftest"])
    cfg_b = parse_config(PRESETS["w2-selftest"].replace("seed = 31", "seed = 77"))
    a, b = tmp_path / "a", tmp_path / "b"
    run_scenario(cfg_a, str(a))
    run_scenario(cfg_b, str(b))
    names = sorted(p.name for p in a.glob("*.csv"))
    assert any((a / n).read_bytes() != (b / n).read_bytes() for n in names)


# ---------------------------------------------------------------------------
# entry point


def test_main_list_presets(capsys):
    assert main(["--list-presets"]) == 0
    out = capsys.readouterr().out
    for name in PRESETS:
        assert name in out


def test_main_requires_exactly_one_source():
    with pytest.raises(SystemExit):
        main([])


def test_main_rejects_unknown_preset():
    with pytest.raises(SystemExit):
        main(["--preset", "no-such-preset"])


def test_main_config_file_and_seed_override(tmp_path, capsys):
    cfg_path = tmp_path / "w2.cfg"
    cfg_path.write_text(PRESETS["w2-selftest"])
    status = main(["--config", str(cfg_path), "--seed", "99", "--out", str(tmp_path / "out")])
    assert status == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert all(SUMMARY_LINE.match(line) for line in out)


def test_main_reports_config_errors(tmp_path, capsys):
    cfg_path = tmp_path / "bad.cfg"
    cfg_path.write_text("scenario = ito_residual\ndt = 0.3\nT = 1\n")
    status = main(["--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert status == 2
    err = capsys.readouterr().err
    assert "config error" in err
