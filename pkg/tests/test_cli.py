"""Command-line surface: config files, reports, exit codes, outputs."""

import csv
import json
import os
import re

import pytest

from cascadelab.cli import (
    ConfigError,
    child_seed,
    config_hash,
    parse_config_text,
    resolve_config,
    run,
    serialize_config,
)

ENVELOPE_KEYS = {
    "schema_version",
    "command",
    "config",
    "config_hash",
    "seed",
    "version",
    "generated_at",
    "result",
    "records",
    "pass",
}


def _strip_timestamp(text: str) -> str:
    return re.sub(r'"generated_at": "[^"]*"', '"generated_at": ""', text)


def test_config_round_trip():
    text = 'mixture = [[2, 1.0], [4, 0.5]]\nm = [0.4, 0.8]\nq = [0.3, 0.6]\nseed = 7\n'
    values = parse_config_text(text)
    cfg = resolve_config("cascade", values, {})
    serialized = serialize_config(cfg.values_dict())
    assert parse_config_text(serialized) == cfg.values_dict()
    assert config_hash(cfg.values_dict()) == config_hash(cfg.values_dict())
    assert len(config_hash(cfg.values_dict())) == 16


def test_config_parse_errors():
    with pytest.raises(ConfigError, match="line 1.*nonsense"):
        parse_config_text("nonsense = ???\n")
    with pytest.raises(ConfigError, match="unknown config key 'foo'"):
        parse_config_text("foo = 1\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("seed = 1\nbroken\n")


def test_config_validation_errors():
    with pytest.raises(ConfigError, match="mixture"):
        resolve_config("pd", {"mixture": [[2]]}, {})
    with pytest.raises(ConfigError, match="replicas"):
        resolve_config("pd", {}, {"replicas": -5})
    with pytest.raises(ConfigError, match="scan_q1"):
        resolve_config("bound", {"scan_q1": [0.5, 0.2, 10]}, {})


def test_flags_override_file():
    cfg = resolve_config("pd", {"seed": 5, "replicas": 300}, {"seed": 9})
    assert cfg.seed == 9
    assert cfg.replicas == 300
    assert "seed" in cfg.explicit


def test_child_seed_stable_and_distinct():
    a = child_seed(1729, 0)
    assert a == child_seed(1729, 0)
    assert a != child_seed(1729, 1)
    assert child_seed(1729, 0) != child_seed(1730, 0)
    assert 0 <= a < 2**64


def test_pd_run_writes_report(tmp_path, capsys):
    out = tmp_path / "pd.json"
    rc = run(
        [
            "pd",
            "--m",
            "[0.5]",
            "--replicas",
            "150",
            "--n_max",
            "3000",
            "--seed",
            "7",
            "--json-out",
            str(out),
        ]
    )
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == ENVELOPE_KEYS
    assert report["command"] == "pd"
    assert report["pass"] is True
    assert report["seed"] == 7
    names = [rec["name"] for rec in report["records"]]
    assert "pd_pair_sum_m0.5" in names
    assert json.loads(out.read_text()) == report


def test_pd_tiny_tolerance_fails(capsys):
    rc = run(
        ["pd", "--m", "[0.5]", "--replicas", "150", "--n_max", "3000",
         "--tolerance", "1e-06", "--seed", "7"]
    )
    assert rc == 1
    report = json.loads(capsys.readouterr().out)
    assert report["pass"] is False


def test_cascade_csv_series(tmp_path, capsys):
    out = tmp_path / "mass.csv"
    rc = run(
        ["cascade", "--m", "[0.4, 0.8]", "--q", "[0.3, 0.6]", "--b", "60",
         "--replicas", "150", "--seed", "3", "--csv-out", str(out)]
    )
    assert rc == 0
    capsys.readouterr()
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["r", "expected", "estimate", "std_error", "allowance"]
    assert len(rows) == 4  # header + k + 1 levels
    expected = [float(row[1]) for row in rows[1:]]
    assert expected == pytest.approx([0.4, 0.4, 0.2])


def test_worker_count_does_not_change_output(tmp_path, capsys):
    args = ["pd", "--m", "[0.5]", "--replicas", "300", "--n_max", "2000",
            "--seed", "11"]
    saved = os.environ.get("CASCADELAB_WORKERS")
    try:
        os.environ["CASCADELAB_WORKERS"] = "1"
        assert run(args) == 0
        serial = _strip_timestamp(capsys.readouterr().out)
        os.environ["CASCADELAB_WORKERS"] = "3"
        assert run(args) == 0
        parallel = _strip_timestamp(capsys.readouterr().out)
    finally:
        if saved is None:
            os.environ.pop("CASCADELAB_WORKERS", None)
        else:
            os.environ["CASCADELAB_WORKERS"] = saved
    assert serial == parallel


def test_bad_config_file_exits_two(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("foo = 1\n")
    rc = run(["pd", "--config", str(cfg)])
    assert rc == 2
    err = capsys.readouterr().err
    assert "error:" in err and "foo" in err and "line 1" in err


def test_bad_ladder_exits_two(capsys):
    rc = run(["cascade", "--m", "[0.8, 0.4]", "--q", "[0.3, 0.6]"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "error:" in err and "not strictly increasing" in err
    assert capsys.readouterr().out == ""  # no partial report on stdout


def test_scan_without_csv_exits_two(capsys):
    rc = run(["bound", "--scan-q1", "--mixture", "[[2, 0.4]]"])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_argparse_failures_exit_two(capsys):
    assert run(["pd", "--mark-family", "bogus"]) == 2
    assert run(["no-such-command"]) == 2
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert "verification runs" in capsys.readouterr().out


def test_optimize_requires_k(capsys):
    rc = run(["optimize", "--mixture", "[[2, 0.4]]"])
    assert rc == 2
    assert "k" in capsys.readouterr().err
