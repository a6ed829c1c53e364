import csv
import json

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from homoglab.cli import DEFAULTS, _parse_eps, apply_override, content_hash, load_config, main
from homoglab.errors import ConfigError

SMALL = ["grid.n_cell=8", "grid.L=6"]

keys = st.lists(st.text("abcdefgh_", min_size=1, max_size=6), min_size=1, max_size=3)
values = st.one_of(st.integers(-10 ** 6, 10 ** 6), st.booleans(),
                   st.floats(-1e6, 1e6, allow_nan=False).filter(lambda x: x == 0 or abs(x) > 1e-6),
                   st.lists(st.integers(-100, 100), max_size=4),
                   st.text("abcdefghij", min_size=1, max_size=8).filter(
                       lambda s: s not in ("null", "true", "false", "yes", "no", "on", "off",
                                           "y", "n")))


@settings(max_examples=60, deadline=None)
@given(keys, values)
def test_override_round_trip(path, value):
    cfg = {}
    apply_override(cfg, "%s=%s" % (".".join(path), yaml.safe_dump(value, default_flow_style=True)
                                   .strip().removesuffix("\n...").strip()))
    node = cfg
    for p in path[:-1]:
        node = node[p]
    got = node[path[-1]]
    if isinstance(value, float):
        assert got == pytest.approx(value)
    else:
        assert got == value


def test_override_errors():
    for bad in ("noequals", "=3", "a=[1,"):
        with pytest.raises(ConfigError):
            apply_override({}, bad)
    with pytest.raises(ConfigError):
        apply_override({"a": 3}, "a.b=1")


def test_config_layers(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("grid:\n  n_cell: 32\nfamily:\n  name: laminate\n")
    cfg = load_config(str(path), ["grid.n_cell=8"])
    assert cfg["grid"]["n_cell"] == 8
    assert cfg["family"]["name"] == "laminate"
    assert cfg["grid"]["L"] == DEFAULTS["grid"]["L"]
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))
    (tmp_path / "list.yaml").write_text("- 1\n")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "list.yaml"))


def test_eps_list_parsing():
    assert _parse_eps("1/8, 1/16,0.03125") == [0.125, 0.0625, 0.03125]
    with pytest.raises(ConfigError):
        _parse_eps("1/0")
    with pytest.raises(ConfigError):
        _parse_eps(",")


def test_content_hash_ignores_key_order():
    assert content_hash({"a": 1, "b": [1, 2]}) == content_hash({"b": [1, 2], "a": 1})


@pytest.fixture
def cache(tmp_path, monkeypatch):
    monkeypatch.setenv("HOMOGLAB_CACHE_DIR", str(tmp_path / "cache"))
    return tmp_path / "cache"


def test_usage_error_exits_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["cell", "--bogus"])
    assert info.value.code == 1


def test_config_error_exits_1(tmp_path, cache):
    assert main(["green", "green.d=2", "-o", str(tmp_path / "o")]) == 1
    assert main(["cell", "family.name=nope", "-o", str(tmp_path / "o")]) == 1
    assert main(["rates", "--eps-list", "0.3", "-o", str(tmp_path / "o")]) == 1


def test_short_cylinder_exits_2(tmp_path, cache, capsys):
    assert main(["interface", "grid.L=2", "-o", str(tmp_path / "o")]) == 2
    assert "increase L" in capsys.readouterr().err


def test_centering_defect_exits_2(tmp_path, cache, capsys):
    assert main(["cell", "family.name=constant_drift", "cell.n_cell=8",
                 "-o", str(tmp_path / "o")]) == 2
    assert "CenteringDefect" in capsys.readouterr().err


def test_cell_outputs_and_manifest(tmp_path, cache):
    out = tmp_path / "o"
    assert main(["cell", "--set", "family.name=laminate", "cell.n_cell=16", "-o", str(out)]) == 0
    rep = json.loads((out / "cell.json").read_text())
    assert list(rep)[:2] == ["family", "n_cell"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "pass"
    assert "cell.json" in man["files"]
    assert man["config_hash"]


def test_interface_cache_and_byte_identical_reports(tmp_path, cache):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["interface", *SMALL, "-o", str(a)]) == 0
    assert list(cache.glob("interface-*.pkl"))
    assert main(["interface", *SMALL, "-o", str(b)]) == 0
    assert (a / "interface.json").read_bytes() == (b / "interface.json").read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["cache"]["interface"]["hit"] is False
    assert mb["cache"]["interface"]["hit"] is True
    assert ma["files"] == mb["files"]


def test_rates_outputs(tmp_path, cache):
    out = tmp_path / "r"
    code = main(["rates", *SMALL, "--eps-list", "1/8,1/16,1/32", "--refine", "8",
                 "rates.richardson=false", "--interior-only", "-o", str(out)])
    assert code in (0, 2)
    with open(out / "rates.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epsilon", "l2_err", "linf_err", "h1_w_err", "interior_l2_err"]
    assert len(rows) == 4
    pts = (out / "plot_l2_err.dat").read_text().split("\n")
    assert len(pts[0].split()) == 2
    summary = json.loads((out / "rates.json").read_text())
    assert summary["spec"]["interior_only"] is True
    assert summary["slopes"]["l2_err"]["slope"] > 0.5
