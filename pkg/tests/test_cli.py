import yaml
import pytest

from gazemask.cli import EXIT_CONFIG, EXIT_OK, LOCK_NAME, load_manifest, main
from gazemask.errors import ConfigError

SYNTH = {"n_participants_per_class": 2, "session_len_samples": 1200, "seed": 3}


def write_manifest(tmp_path, **kw):
    data = {
        "dataset": {"synth": SYNTH},
        "variants": ["Full"],
        "traits": "all",
        "folds": 2,
        "out": "out",
        "train": {"max_epochs": 1, "batch_size": 32},
        "forest": {"n_trees": 3},
        "model": {"hidden_size": 4, "num_layers": 1},
    }
    data.update(kw)
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_synth_writes_files(tmp_path):
    spec = tmp_path / "spec.yaml"
    spec.write_text(yaml.safe_dump(SYNTH))
    assert main(["synth", str(spec), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["synth", str(spec), "--out", str(tmp_path / "b")]) == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "a" / "recordings").iterdir())
    assert len(files) == 6
    for name in files:
        a = (tmp_path / "a" / "recordings" / name).read_bytes()
        assert a == (tmp_path / "b" / "recordings" / name).read_bytes()
    assert (tmp_path / "a" / "labels.csv").read_bytes() == (tmp_path / "b" / "labels.csv").read_bytes()


def test_bad_synth_spec_exit_code(tmp_path):
    spec = tmp_path / "spec.yaml"
    spec.write_text(yaml.safe_dump({**SYNTH, "signal_mode": "weird"}))
    assert main(["synth", str(spec), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_bad_yaml_exit_code(tmp_path, capsys):
    path = tmp_path / "exp.yaml"
    path.write_text("dataset: {synth: [\n")
    assert main(["run", str(path)]) == EXIT_CONFIG
    assert "line" in capsys.readouterr().err


@pytest.mark.parametrize(
    "bad",
    [
        {"colour": "red"},
        {"folds": 1},
        {"variants": ["Nope"]},
        {"traits": ["Q"]},
        {"model": {"width": 3}},
        {"dataset": {"directory": "missing", "synth": {}}},
    ],
)
def test_manifest_validation(tmp_path, bad):
    with pytest.raises(ConfigError):
        load_manifest(write_manifest(tmp_path, **bad))


def test_run_and_rerun_from_lock(tmp_path):
    path = write_manifest(tmp_path)
    assert main(["run", str(path)]) == EXIT_OK
    out = tmp_path / "out"
    summary = (out / "summary.csv").read_text()
    assert len(summary.strip().splitlines()) == 1 + 5  # header + one row per trait
    assert (out / "summary.md").exists()
    assert sorted(p.name for p in (out / "folds").iterdir()) == [
        f"SegmentStratified5Fold_{t}.csv" for t in "ACENO"
    ]
    lock = out / LOCK_NAME
    assert yaml.safe_load(lock.read_text())["input_hashes"]
    again = tmp_path / "again"
    assert main(["run", str(lock), "--out", str(again)]) == EXIT_OK
    assert (again / "summary.csv").read_text() == summary


def test_lock_detects_changed_inputs(tmp_path):
    path = write_manifest(tmp_path, traits=["N"])
    assert main(["run", str(path)]) == EXIT_OK
    lock = tmp_path / "out" / LOCK_NAME
    data = yaml.safe_load(lock.read_text())
    data["dataset"]["synth"]["seed"] = 99
    lock.write_text(yaml.safe_dump(data))
    assert main(["run", str(lock), "--out", str(tmp_path / "o2")]) != EXIT_OK


def test_variant_all_override(tmp_path):
    path = write_manifest(tmp_path, traits=["N"])
    assert main(["run", str(path), "--variant", "all", "--out", str(tmp_path / "all")]) == EXIT_OK
    rows = (tmp_path / "all" / "summary.csv").read_text().strip().splitlines()[1:]
    assert len(rows) == 4


def test_ablate_writes_delta_table(tmp_path):
    path = write_manifest(tmp_path, traits=["N"])
    assert main(["ablate", str(path), "--out", str(tmp_path / "ab")]) == EXIT_OK
    text = (tmp_path / "ab" / "ablation.md").read_text()
    assert "TS Only" in text and "Statistical" in text
