"""Command line: ``gazemask synth | run | ablate``.

Experiments are described by a YAML manifest; the flags ``--seed``,
``--folds``, ``--variant``, ``--protocol``, ``--trait`` and ``--out`` only
override manifest fields. Exit codes: 0 ok, 1 runtime failure, 2
configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .baseline import ForestConfig
from .core import TRAITS, RecordingConfig
from .errors import ConfigError, GazemaskError, InvalidSpec
from .evaluation import FoldResult, delta_table, emit_report
from .featurize import FeatureVariant
from .pipeline import Dataset, GridConfig, load_dataset, run_grid
from .split import FoldPlan, Protocol, WindowingConfig
from .synth import SynthSpec, generate
from .train import TrainConfig

log = logging.getLogger("gazemask")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
LOCK_NAME = "manifest.lock"

_TOP_KEYS = {
    "dataset", "variants", "protocols", "traits", "folds", "seed", "out", "workers",
    "recording", "windowing", "train", "forest", "model", "input_hashes", "fold_plans",
}


@dataclasses.dataclass(frozen=True)
class ExperimentManifest:
    """A fully resolved experiment: data source, grid, every config block, seed and output."""

    dataset_dir: Path | None
    synth: SynthSpec | None
    variants: tuple[FeatureVariant, ...]
    protocols: tuple[Protocol, ...]
    traits: tuple[str, ...]
    n_folds: int
    seed: int
    out: Path
    recording: RecordingConfig
    windowing: WindowingConfig
    train: TrainConfig
    forest: ForestConfig
    hidden_size: int = 64
    num_layers: int = 2
    dropout: float = 0.3
    workers: int = 1
    input_hashes: Mapping[str, str] | None = None
    fold_plans: Mapping[str, str] | None = None

    def grid(self) -> GridConfig:
        return GridConfig(
            variants=self.variants, protocols=self.protocols, traits=self.traits, n_folds=self.n_folds,
            seed=self.seed, windowing=self.windowing, train=self.train, forest=self.forest,
            hidden_size=self.hidden_size, num_layers=self.num_layers, dropout=self.dropout,
        )

    def to_mapping(self) -> dict[str, Any]:
        if self.synth is not None:
            dataset: dict[str, Any] = {"synth": self.synth.to_mapping()}
        else:
            dataset = {"directory": str(self.dataset_dir)}
        rec = dataclasses.asdict(self.recording)
        rec.pop("sampling_period_s")
        return {
            "dataset": dataset,
            "variants": [v.value for v in self.variants],
            "protocols": [p.value for p in self.protocols],
            "traits": list(self.traits),
            "folds": self.n_folds,
            "seed": self.seed,
            "out": str(self.out),
            "workers": self.workers,
            "recording": rec,
            "windowing": dataclasses.asdict(self.windowing),
            "train": dataclasses.asdict(self.train),
            "forest": dataclasses.asdict(self.forest),
            "model": {"hidden_size": self.hidden_size, "num_layers": self.num_layers, "dropout": self.dropout},
        }


def _listify(value, parse, everything, field: str) -> tuple:
    if value is None:
        raise ConfigError(f"{field}: missing")
    items = [value] if isinstance(value, str) else list(value)
    if len(items) == 1 and str(items[0]).lower() == "all":
        return tuple(everything)
    out = []
    for item in items:
        for part in str(item).split(","):
            try:
                out.append(parse(part.strip()))
            except ValueError as exc:
                raise ConfigError(f"{field}: {exc}") from exc
    if not out:
        raise ConfigError(f"{field}: at least one entry required")
    return tuple(dict.fromkeys(out))


def _parse_trait(text: str) -> str:
    t = text.upper()[:1]
    if t not in TRAITS:
        raise ValueError(f"unknown trait {text!r}")
    return t


def _block(cls, data, field: str, drop=()):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)} - set(drop)
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{field}: unknown key(s) {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{field}: {exc}") from exc


def parse_manifest(data: Mapping[str, Any], base_dir: Path = Path(".")) -> ExperimentManifest:
    """Validate a parsed manifest mapping; relative paths resolve against ``base_dir``."""
    if not isinstance(data, Mapping):
        raise ConfigError("manifest must be a mapping")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown manifest key(s): {sorted(unknown)}")
    ds = data.get("dataset")
    if not isinstance(ds, Mapping) or len(ds) != 1 or next(iter(ds)) not in ("directory", "synth", "synth_file"):
        raise ConfigError("dataset: exactly one of 'directory', 'synth' or 'synth_file' is required")
    dataset_dir = synth = None
    if "directory" in ds:
        dataset_dir = (base_dir / str(ds["directory"])).resolve()
        if not dataset_dir.is_dir():
            raise ConfigError(f"dataset.directory: {dataset_dir} is not a directory")
    else:
        spec_data = ds.get("synth")
        if "synth_file" in ds:
            spec_path = base_dir / str(ds["synth_file"])
            spec_data = _read_yaml(spec_path)
        try:
            synth = SynthSpec.from_mapping(spec_data or {})
        except InvalidSpec as exc:
            raise ConfigError(f"dataset.synth: {exc}") from exc

    model = dict(data.get("model") or {})
    bad = set(model) - {"hidden_size", "num_layers", "dropout"}
    if bad:
        raise ConfigError(f"model: unknown key(s) {sorted(bad)}")
    folds = data.get("folds", 5)
    seed = data.get("seed", 0)
    workers = data.get("workers", 1)
    for name, v, low in (("folds", folds, 2), ("seed", seed, 0), ("workers", workers, 1)):
        if not isinstance(v, int) or isinstance(v, bool) or v < low:
            raise ConfigError(f"{name}: expected an integer >= {low}, got {v!r}")
    recording = _block(RecordingConfig, data.get("recording"), "recording", drop=("sampling_period_s",))
    if synth is not None and recording != synth.config:
        if data.get("recording"):
            raise ConfigError("recording: must match the synth spec's config")
        recording = synth.config
    hidden = model.get("hidden_size", 64)
    layers = model.get("num_layers", 2)
    dropout = model.get("dropout", 0.3)
    if not (isinstance(hidden, int) and hidden > 0 and isinstance(layers, int) and layers > 0):
        raise ConfigError("model: hidden_size and num_layers must be positive integers")
    if not (isinstance(dropout, (int, float)) and 0 <= dropout < 1):
        raise ConfigError("model: dropout must lie in [0, 1)")
    out = data.get("out", "results")
    return ExperimentManifest(
        dataset_dir=dataset_dir,
        synth=synth,
        variants=_listify(data.get("variants", ["Full"]), FeatureVariant.parse, FeatureVariant, "variants"),
        protocols=_listify(data.get("protocols", ["SegmentStratified5Fold"]), Protocol.parse, Protocol, "protocols"),
        traits=_listify(data.get("traits", "all"), _parse_trait, TRAITS, "traits"),
        n_folds=folds,
        seed=seed,
        out=(base_dir / str(out)).resolve(),
        recording=recording,
        windowing=_block(WindowingConfig, data.get("windowing"), "windowing"),
        train=_block(TrainConfig, data.get("train"), "train"),
        forest=_block(ForestConfig, data.get("forest"), "forest"),
        hidden_size=hidden,
        num_layers=layers,
        dropout=float(dropout),
        workers=workers,
        input_hashes=data.get("input_hashes"),
        fold_plans=data.get("fold_plans"),
    )


def _read_yaml(path: Path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"{path}: YAML syntax error{where}") from exc


def load_manifest(path: str | Path, overrides: argparse.Namespace | None = None) -> ExperimentManifest:
    path = Path(path)
    data = _read_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: manifest must be a mapping")
    if overrides is not None:
        for flag, key in (("seed", "seed"), ("folds", "folds"), ("variant", "variants"), ("protocol", "protocols"), ("trait", "traits")):
            v = getattr(overrides, flag, None)
            if v is not None:
                data[key] = v
        if getattr(overrides, "out", None):
            data["out"] = str(Path(overrides.out).resolve())
        if any(getattr(overrides, f, None) is not None for f in ("seed", "folds", "variant", "protocol", "trait")):
            data.pop("fold_plans", None)  # the grid changed, recorded plans no longer apply
    return parse_manifest(data, path.parent)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_hashes(directory: Path) -> dict[str, str]:
    files = sorted(p for p in directory.rglob("*.csv") if p.is_file())
    return {str(p.relative_to(directory)): _sha256(p) for p in files}


def synth_hashes(spec: SynthSpec, dataset: Dataset) -> dict[str, str]:
    spec_hash = hashlib.sha256(json.dumps(spec.to_mapping(), sort_keys=True).encode()).hexdigest()
    h = hashlib.sha256()
    for s in dataset.sessions:
        h.update(s.participant_id.encode())
        for arr in (s.timestamps, s.gaze_x, s.gaze_y, s.pupil):
            h.update(np.ascontiguousarray(arr).tobytes())
    return {"synth_spec": spec_hash, "synth_data": h.hexdigest()}


def _verify(expected: Mapping[str, str] | None, actual: Mapping[str, str], what: str) -> None:
    if not expected:
        return
    if dict(expected) != dict(actual):
        diff = sorted(k for k in set(expected) | set(actual) if expected.get(k) != actual.get(k))
        raise ConfigError(f"{what} do not match the lock file: {diff[:5]}")


def _write_lock(manifest: ExperimentManifest, hashes, plans) -> Path:
    data = manifest.to_mapping()
    data["input_hashes"] = dict(sorted(hashes.items()))
    if plans:
        data["fold_plans"] = dict(sorted(plans.items()))
    path = manifest.out / LOCK_NAME
    path.write_text(yaml.safe_dump(data, sort_keys=False, allow_unicode=True))
    return path


def _flush_cell(out: Path, res: FoldResult) -> None:
    d = out / "reports" / res.protocol / res.variant / res.trait
    d.mkdir(parents=True, exist_ok=True)
    (d / f"confusion_fold{res.fold}.csv").write_text(res.confusion.to_csv())


def execute(manifest: ExperimentManifest, ablate: bool = False) -> Path:
    """Run the grid, write reports, ``summary.csv`` / ``summary.md`` and the lock file."""
    if manifest.synth is not None:
        sd = generate(manifest.synth)
        dataset = Dataset(sd.sessions, sd.labels)
        hashes = synth_hashes(manifest.synth, dataset)
    else:
        hashes = dataset_hashes(manifest.dataset_dir)
        _verify(manifest.input_hashes, hashes, "input hashes")
        dataset = load_dataset(manifest.dataset_dir, manifest.recording)
    if manifest.synth is not None:
        _verify(manifest.input_hashes, hashes, "input hashes")
    out = manifest.out
    out.mkdir(parents=True, exist_ok=True)
    plans: dict[str, str] = {}
    _write_lock(manifest, hashes, None)

    def on_plan(protocol: Protocol, trait: str, plan: FoldPlan):
        name = f"{protocol.value}_{trait}"
        (out / "folds").mkdir(exist_ok=True)
        plans[name] = plan.write_csv(out / "folds" / f"{name}.csv")

    results = run_grid(
        dataset, manifest.grid(), on_result=lambda r: _flush_cell(out, r), on_plan=on_plan, workers=manifest.workers
    )
    _verify(manifest.fold_plans, plans, "fold plans")
    _write_lock(manifest, hashes, plans)
    if not results:
        raise GazemaskError("the grid produced no results")
    emit_report(results, out)
    if ablate:
        text = "# Ablation: Full minus each variant\n\n" + delta_table(results, "accuracy") + "\n" + delta_table(results, "macro_f1")
        (out / "ablation.md").write_text(text)
    return out


def cmd_synth(args) -> int:
    data = _read_yaml(Path(args.spec)) if args.spec else {}
    try:
        spec = SynthSpec.from_mapping(data or {})
    except InvalidSpec as exc:
        raise ConfigError(f"{args.spec}: {exc}") from exc
    out = generate(spec).write(args.out)
    print(out)
    return EXIT_OK


def cmd_run(args, ablate: bool = False) -> int:
    manifest = load_manifest(args.manifest, args)
    if ablate:
        manifest = dataclasses.replace(manifest, variants=tuple(FeatureVariant))
    out = execute(manifest, ablate=ablate)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazemask", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("spec", nargs="?", help="YAML synth spec (defaults when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    for name, helptext in (("run", "run an experiment manifest"), ("ablate", "run all four variants and a delta table")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("manifest", help="YAML manifest or a manifest.lock")
        p.add_argument("--seed", type=int)
        p.add_argument("--folds", type=int)
        p.add_argument("--variant", help="comma list or 'all'")
        p.add_argument("--protocol", help="comma list or 'all'")
        p.add_argument("--trait", help="comma list of O,C,E,A,N or 'all'")
        p.add_argument("--out", help="output directory")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.command == "synth":
            return cmd_synth(args)
        return cmd_run(args, ablate=args.command == "ablate")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GazemaskError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
