"""End-to-end runs of the command-line tool on a tiny configuration."""

import json

import numpy as np
import pytest

from nnmid.cli import EXIT_CONFIG, EXIT_OK, main
from nnmid.io import read_json, read_table_csv

TINY = """\
excitation:
  samples_per_period: 12000
  periods: 6
simulation:
  noise_level: 0.0
identification:
  discard_periods: 3
  max_order: 10
continuation:
  max_amplitude: 3.0e-4
  orbit_amplitudes: [1.0e-4, 3.0e-4]
phase_resonance:
  f_start: 30.0
  f_end: 30.4
  df: 0.2
  settle_periods: 20
  measure_periods: 4
  threshold: 0.0
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(TINY)
    c = ["--config", str(cfg)]
    codes = {
        "simulate": main(["simulate", *c, "--out", str(root / "ds")]),
        "identify": main(["identify", str(root / "ds"), *c, "--out", str(root / "id"),
                          "--truth", str(root / "ds" / "truth.json")]),
        "continue": main(["continue", str(root / "id" / "modal_model.json"), *c,
                          "--out", str(root / "cont"),
                          "--truth", str(root / "ds" / "truth.json")]),
        "phase-resonance": main(["phase-resonance", *c, "--out", str(root / "pr")]),
    }
    codes["compare"] = main(["compare", *c, "--branch", str(root / "cont" / "backbone_mode1.csv"),
                             "--ridge", str(root / "pr" / "ridge.csv"),
                             "--out", str(root / "cmp")])
    return root, codes


def test_all_subcommands_succeed(run):
    _, codes = run
    assert codes == {k: EXIT_OK for k in codes}


@pytest.mark.parametrize("rel", [
    "ds/force.csv", "ds/response.csv", "ds/response.json", "ds/metadata.json",
    "ds/truth.json", "id/model.json", "id/modal_model.json", "id/stabilization.csv",
    "id/stabilization.svg", "id/coefficients.csv", "id/coefficients.svg", "id/report.json",
    "cont/backbone_mode1.csv", "cont/backbone_mode1.json", "cont/orbits_mode1.csv",
    "cont/orbits_mode1.svg", "cont/backbones.svg", "cont/fep.svg", "cont/report.json",
    "pr/appropriation.csv", "pr/appropriation.svg", "pr/decay.csv", "pr/ridge.csv",
    "pr/report.json", "cmp/comparison.json", "cmp/comparison_mode1.csv",
    "cmp/comparison_mode1.svg",
])
def test_output_files_exist(run, rel):
    root, _ = run
    assert (root / rel).stat().st_size > 0


def test_seeds_recorded_everywhere(run):
    root, _ = run
    for rel in ("ds/metadata.json", "id/report.json", "cont/report.json", "pr/report.json"):
        doc = read_json(root / rel)
        assert doc["excitation_seed"] == 1 and doc["noise_seed"] == 0
        assert len(doc["config_hash"]) == 64
    _, meta = read_table_csv(root / "ds" / "response.csv")
    assert meta["excitation_seed"] == "1"


def test_dataset_layout(run):
    root, _ = run
    cols, meta = read_table_csv(root / "ds" / "response.csv")
    assert list(cols)[:2] == ["time_s", "force_N"]
    assert [k for k in cols if k.startswith("node")] == [f"node{i}" for i in range(1, 15)]
    assert float(meta["fs"]) == 3000.0 and int(meta["samples_per_period"]) == 600
    assert cols["time_s"].size == 6 * 600


def test_reports_are_strict_json(run):
    root, _ = run
    for p in root.rglob("*.json"):
        json.loads(p.read_text(), parse_constant=lambda c: pytest.fail(f"{p}: {c}"))


def test_simulate_and_identify_are_byte_identical(run, tmp_path):
    root, _ = run
    c = ["--config", str(root / "tiny.yaml")]
    assert main(["simulate", *c, "--out", str(tmp_path / "ds")]) == EXIT_OK
    assert main(["identify", str(tmp_path / "ds"), *c, "--out", str(tmp_path / "id")]) == EXIT_OK
    for sub in ("ds", "id"):
        for p in sorted((root / sub).iterdir()):
            other = tmp_path / sub / p.name
            if sub == "id" and p.name == "report.json":
                # The reference run compared against a truth file.
                continue
            assert p.read_bytes() == other.read_bytes(), p.name


def test_seed_flag_changes_data(run, tmp_path):
    root, _ = run
    c = ["--config", str(root / "tiny.yaml")]
    assert main(["simulate", *c, "--seed", "7", "--out", str(tmp_path / "ds")]) == EXIT_OK
    a, _ = read_table_csv(root / "ds" / "force.csv")
    b, meta = read_table_csv(tmp_path / "ds" / "force.csv")
    assert not np.allclose(a["force_N"], b["force_N"])
    assert meta["excitation_seed"] == "7"


def test_missing_dataset_exit_code(tmp_path, capsys):
    assert main(["identify", str(tmp_path / "nothing")]) == EXIT_CONFIG
    assert "does not exist" in capsys.readouterr().err


def test_unknown_config_field_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("excitation:\n  colour: 1\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "excitation.colour" in capsys.readouterr().err


def test_mode_mismatch_exit_code(run, tmp_path):
    root, _ = run
    ridge = (root / "pr" / "ridge.csv").read_text().replace("# mode=0", "# mode=1")
    (tmp_path / "ridge.csv").write_text(ridge)
    code = main(["compare", "--branch", str(root / "cont" / "backbone_mode1.csv"),
                 "--ridge", str(tmp_path / "ridge.csv"), "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG


def test_unpaired_files_exit_code(run, tmp_path):
    root, _ = run
    b = str(root / "cont" / "backbone_mode1.csv")
    assert main(["compare", "--branch", b, b, "--ridge", str(root / "pr" / "ridge.csv"),
                 "--out", str(tmp_path)]) == EXIT_CONFIG


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("simulate", "identify", "continue", "phase-resonance", "compare"):
        assert name in out
