import csv
import io
import json
import math

import jsonschema
import pytest

from cwgap import bounds, cli


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


CS_BOUNDS = {"command": "bounds", "target": {"kind": "cs", "N": 4, "s": 2, "zeta": 0.5}}
PAIR = {"kind": "explicit", "mu": [0.0, 0.0], "Q": [[4 / 3, -2 / 3], [-2 / 3, 4 / 3]], "blocks": [1, 1]}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_schema_is_valid():
    jsonschema.Draft202012Validator.check_schema(cli.load_schema())


def test_minimal_config_parses(tmp_path):
    assert cli.parse_config(write(tmp_path, CS_BOUNDS))["target"]["zeta"] == 0.5


def test_range_error_names_field(tmp_path, capsys):
    cfg = json.loads(json.dumps(CS_BOUNDS))
    cfg["target"]["zeta"] = 1.2
    assert cli.main(["bounds", "--config", write(tmp_path, cfg)]) == 2
    assert "target.zeta" in capsys.readouterr().err


def test_unknown_key_suggestion_and_all_errors(tmp_path):
    cfg = {"command": "bounds", "target": {"kind": "cs", "N": 4, "s": 2, "zeta_": 0.5}, "n_step": 10,
           "seed": -1}
    errs = cli.validate_config(cfg)
    assert any("'zeta_'" in e and "did you mean 'zeta'" in e for e in errs)
    assert any("did you mean 'n_steps'" in e for e in errs)
    assert any(e.startswith("seed") for e in errs)
    assert len(errs) >= 3


def test_bounds_sweep_rows(tmp_path):
    cfg = dict(CS_BOUNDS, kernel={"kind": "mala", "step_sizes": "recommended"},
               sweep={"parameter": "target.zeta", "values": [k / 10 for k in range(10)]})
    assert cli.main(["sweep", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    keys = [(r["point"], r["formula_id"], r["inputs"]) for r in rows]
    assert len(keys) == len(set(keys))
    per_point = {}
    for r in rows:
        per_point.setdefault(r["point"], set()).add(r["formula_id"])
    assert len(per_point) == 10
    assert all("cs_structured" in v and "gaussian_rsg_gap" in v for v in per_point.values())
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["root_seed"] == cli.DEFAULT_SEED and len(manifest["config_hash"]) == 64


def test_oracle_slacks_nonnegative(tmp_path):
    cfg = {"command": "oracle", "target": PAIR, "kernel": {"kind": "mala", "step_sizes": [0.3, 0.3]},
           "oracle": {"L": 6.0, "n": 101}}
    assert cli.main(["oracle", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "oracle.csv")
    names = {r["quantity"] for r in rows}
    assert {"dcw_gap_from_rcw", "rcw_gap_sandwich_lower", "rcw_gap_sandwich_upper", "rsg_gap_match"} <= names
    assert all(float(r["slack"]) >= -1e-9 for r in rows)


def test_oracle_variance_rows_on_small_grid(tmp_path):
    cfg = {"command": "oracle", "target": PAIR, "kernel": {"kind": "gibbs"},
           "oracle": {"L": 6.0, "n": 31, "variance_functionals": ["x0", "x0*x1"]}}
    assert cli.main(["oracle", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "oracle.csv")
    var = [r for r in rows if r["quantity"].startswith("variance_gap:")]
    assert len(var) == 2 and all(float(r["slack"]) >= -1e-9 for r in var)


def test_chain_output_and_determinism(tmp_path):
    cfg = {"command": "chain", "target": PAIR, "kernel": {"kind": "gibbs"},
           "scan": {"kind": "random", "weights": [0.5, 0.5], "updates_per_step": 2},
           "n_steps": 2000, "replicas": 3, "functionals": ["x0", "x1^2"], "seed": 5}
    path = write(tmp_path, cfg)
    outs = []
    for k, extra in enumerate([[], ["--workers", "3"], ["--seed", "6"]]):
        assert cli.main(["chain", "--config", path, "--out", str(tmp_path / f"o{k}")] + extra) == 0
        outs.append((tmp_path / f"o{k}" / "chain.csv").read_bytes())
    assert outs[0] == outs[1] != outs[2]
    rows = list(csv.DictReader(io.StringIO(outs[0].decode())))
    assert len(rows) == 6
    assert set(["functional_id", "n", "sigma2_hat", "se", "ess", "gap_fit", "flags"]) <= set(rows[0])
    assert b"\r" not in outs[0]
    m = json.loads((tmp_path / "o0" / "manifest.json").read_text())
    assert m["stream_ids"] == [0, 1, 2]


def test_json_format(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["bounds", "--config", write(tmp_path, CS_BOUNDS), "--out", str(out), "--format", "json"]) == 0
    data = json.loads((out / "bounds.json").read_text())
    assert {"formula_id", "value", "applicable"} <= set(data[0])


def test_strict_mode_exit_code(tmp_path):
    cfg = dict(CS_BOUNDS, kernel={"kind": "mala", "step_sizes": [0.9, 0.9]})
    path = write(tmp_path, cfg)
    assert cli.main(["bounds", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["bounds", "--config", path, "--strict", "--out", str(tmp_path / "b")]) == 3


def test_non_finite_output_exit_code(tmp_path, monkeypatch):
    def fake(cfg, seed, stream_base=0):
        return ["quantity", "value"], [{"quantity": "q", "value": math.nan}], ["quantity"], {}
    monkeypatch.setitem(cli.COMMANDS, "bounds", fake)
    assert cli.main(["bounds", "--config", write(tmp_path, CS_BOUNDS)]) == 4


def test_config_hash_ignores_key_order():
    a = {"command": "bounds", "target": {"kind": "cs", "N": 4, "s": 2, "zeta": 0.5}}
    b = {"target": {"zeta": 0.5, "s": 2, "N": 4, "kind": "cs"}, "command": "bounds"}
    assert cli.config_hash(a) == cli.config_hash(b)


def test_csv_format_rules():
    text = cli.render_csv(["a", "b", "c"], [{"a": 0.1, "b": None, "c": True}])
    assert text == "a,b,c\n0.10000000000000001,,true\n"


def test_selfcheck_passes(capsys):
    assert cli.main(["selfcheck"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == len(cli.SELFCHECKS) and all(line.startswith("PASS ") for line in out)


def test_selfcheck_detects_perturbed_c0(monkeypatch, capsys):
    monkeypatch.setattr(bounds, "C0", bounds.C0 * (1 + 1e-9))
    assert cli.main(["selfcheck"]) == 1
    out = capsys.readouterr().out
    assert "FAIL c0_derivation" in out
    assert out.count("PASS ") == len(cli.SELFCHECKS) - 1


def test_missing_config_is_config_error(capsys):
    assert cli.main(["bounds"]) == 2
    assert cli.main(["bounds", "--config", "/nonexistent.json"]) == 2
