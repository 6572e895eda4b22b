import csv
import json

import pytest

from ige import cli

SMALL = ["--set", "topology.layout=\"line\"", "--set", "topology.n=4"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_overhead_output(tmp_path, capsys):
    assert cli.main(["overhead", "--out", str(tmp_path)]) == cli.EXIT_OK
    assert capsys.readouterr().out.strip() == "O_our=486 O_other=252 T_our=0 T_other=10"
    rows = read_csv(tmp_path / "overhead.csv")
    assert rows == [{"scheme": "ours", "report_bits": "486", "report_slots": "0"},
                    {"scheme": "other", "report_bits": "252", "report_slots": "10"}]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "overhead"
    assert "overhead.csv" in manifest["outputs"]


def test_set_overrides(tmp_path, capsys):
    code = cli.main(["overhead", "--out", str(tmp_path), "--set", "overhead.hop_sizes=[2]",
                     "--set", "overhead.n_s=4", "--set", "overhead.n_r=2", "--set", "overhead.b=8"])
    assert code == 0
    assert capsys.readouterr().out.strip() == "O_our=20 O_other=6 T_our=0 T_other=3"


def test_resolve_config():
    cfg = cli.resolve_config({"flood": {"rounds": 5}}, ["topology.seed=3"], trials=7, subcommand="flood")
    assert cfg["flood"]["rounds"] == 7 and cfg["topology"]["seed"] == 3
    assert cli.DEFAULTS["flood"]["rounds"] == 1000
    with pytest.raises(cli.ConfigError):
        cli.resolve_config({"nope": 1})
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(None, ["flood.rounds"])
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(None, trials=0, subcommand="flood")


def test_exit_codes(tmp_path):
    with pytest.raises(SystemExit) as e:
        cli.main(["bogus"])
    assert e.value.code == cli.EXIT_USAGE
    assert cli.main(["overhead", "--out", str(tmp_path), "--set", "nope.x=1"]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["overhead", "--out", str(tmp_path), "--scenario", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["overhead", "--out", str(tmp_path), "--set", "overhead.b=0"]) == cli.EXIT_CONFIG
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["overhead", "--out", str(blocker / "sub")]) == cli.EXIT_OUTPUT
    assert cli.main(["flood", "--out", str(tmp_path), *SMALL, "--trials", "1",
                     "--set", "flood.schemes=[\"nope\"]"]) == cli.EXIT_CONFIG


def test_flood_perfect_line(tmp_path):
    # neighbours at -90 dB, two hops at -108 dB: a strict relay chain
    chain = ["--set", "topology.path_loss_exponent=6", "--set", "topology.spacing=10",
             "--set", "topology.shadowing_sigma_db=0"]
    args = ["flood", "--out", str(tmp_path), *SMALL, *chain, "--trials", "1",
            "--set", "flood.schemes=[\"fixed\"]", "--set", "network.rss_model=\"additive\""]
    assert cli.main(args) == 0
    rows = read_csv(tmp_path / "flood_summary.csv")
    assert rows[0]["scheme"] == "fixed" and float(rows[0]["e2e_per"]) == 0.0
    assert float(rows[0]["mean_latency_slots"]) == 3.0


def test_replay_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["flood", "--out", str(a), "--trials", "60", "--seed", "5"]) == 0
    assert cli.main(["replay", str(a / "manifest.json"), "--out", str(b)]) == 0
    for name in ("flood_summary.csv", "flood_coverage.csv", "flood_rounds.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert cli.main(["replay", str(a / "flood_summary.csv"), "--out", str(b)]) == cli.EXIT_CONFIG
