"""The train×infer hyperparameter grid: enumeration, execution, reports.

A sweep cell pairs one training transcription configuration with one
inference configuration. Models are trained once per distinct train
config and shared across the row; transcriptions are shared through the
content-addressed cache. Completed cells persist as JSON under the state
directory, so a killed sweep resumes exactly where it stopped and
re-running a finished sweep touches no backend at all.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .backends import BackendClient
from .cache import TranscriptionCache
from .corpus import Recording
from .dataset import Split, SplitPlan, emit_dataset, tag_windows
from .errors import ArgumentError, IoError, RaddetError
from .evaluation import EvalReport, combine_reports
from .pipeline import BlockView, evaluate_block, transcribe_recording
from .protocol import ClassifierTrainingConfig, ModelSize
from .windowing import Segmentation, build_grid

DEFAULT_WINDOW_LENGTHS = (10, 20, 40)


@dataclass(frozen=True)
class TranscriptionConfig:
    segmentation: Segmentation
    window_len_s: int
    model_size: ModelSize

    @property
    def key(self) -> str:
        return f"{self.segmentation.value}-{self.window_len_s}-{self.model_size.value}"

    @classmethod
    def from_key(cls, key: str) -> "TranscriptionConfig":
        seg, window, size = key.rsplit("-", 2)
        return cls(Segmentation.from_wire(seg), int(window), ModelSize.from_wire(size))


@dataclass(frozen=True)
class RunConfig:
    train: TranscriptionConfig
    infer: TranscriptionConfig
    seed: int = 0

    @property
    def cell_key(self) -> str:
        return f"{self.train.key}__{self.infer.key}"


@dataclass(frozen=True)
class GridAxes:
    segmentations: tuple[Segmentation, ...] = (Segmentation.EXACT, Segmentation.NON_EXACT)
    window_lengths: tuple[int, ...] = DEFAULT_WINDOW_LENGTHS
    model_sizes: tuple[ModelSize, ...] = (ModelSize.SMALL, ModelSize.MEDIUM, ModelSize.LARGE)

    def configs(self) -> list[TranscriptionConfig]:
        """Lexicographic enumeration in the declared axis order."""
        if not (self.segmentations and self.window_lengths and self.model_sizes):
            raise ArgumentError("every grid axis needs at least one value")
        return [
            TranscriptionConfig(seg, window, size)
            for seg in self.segmentations
            for window in self.window_lengths
            for size in self.model_sizes
        ]


def enumerate_runs(
    train_axes: GridAxes, infer_axes: GridAxes | None = None, seed: int = 0
) -> list[RunConfig]:
    """Full train×infer cross product in deterministic order.

    The default two-sided grid is 18×18 = 324 runs over 18 trained
    models; train and infer configurations vary independently.
    """
    train_configs = train_axes.configs()
    infer_configs = (infer_axes or train_axes).configs()
    return [
        RunConfig(train=t, infer=i, seed=seed)
        for t in train_configs
        for i in infer_configs
    ]


@dataclass
class SweepEnvironment:
    """Everything a sweep needs besides the run list.

    The factories return clients owned by the caller (typically a
    ``ClientPool``), so the same backend process serves many cells; the
    sweep never closes them.
    """

    corpus: list[Recording]
    plan: SplitPlan
    cache: TranscriptionCache
    state_dir: Path
    make_transcriber: Callable[[TranscriptionConfig], BackendClient]
    make_classifier: Callable[[TranscriptionConfig], BackendClient]
    training_config: ClassifierTrainingConfig = ClassifierTrainingConfig()
    resolution_ms: int = 100
    batch_size: int = 32

    def recordings_with(self, split: Split) -> list[Recording]:
        out = []
        for recording in self.corpus:
            ranges = self.plan.ranges.get(recording.recording_id, [])
            if any(r.split is split for r in ranges):
                out.append(recording)
        return out


def _model_state_path(env: SweepEnvironment, train: TranscriptionConfig) -> Path:
    return env.state_dir / "models" / f"{train.key}.json"


def _cell_state_path(env: SweepEnvironment, run: RunConfig) -> Path:
    return env.state_dir / "cells" / f"{run.cell_key}.json"


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    tmp.replace(path)


def ensure_model(env: SweepEnvironment, train: TranscriptionConfig) -> dict:
    """Train (or load) the one model for a train configuration.

    Emits the train/validation datasets under the state directory the
    first time; both emission and training are skipped on any later call,
    which is what makes model reuse across the row literal.
    """
    state_path = _model_state_path(env, train)
    if state_path.exists():
        return json.loads(state_path.read_text(encoding="utf-8"))

    dataset_dir = env.state_dir / "datasets" / train.key
    samples = []
    transcriber = env.make_transcriber(train)
    for recording in env.corpus:
        ranges = env.plan.ranges.get(recording.recording_id, [])
        if not any(r.split in (Split.TRAIN, Split.VALIDATION) for r in ranges):
            continue
        result = transcribe_recording(
            recording, train.segmentation, train.window_len_s, transcriber, env.cache
        )
        samples.extend(
            tag_windows(recording.timeline, result.grid, result.texts, ranges)
        )
    train_samples = [s for s in samples if s.split is Split.TRAIN]
    val_samples = [s for s in samples if s.split is Split.VALIDATION]
    if not train_samples:
        raise ArgumentError("split plan yields no training samples")
    train_path = dataset_dir / "train.jsonl"
    val_path = dataset_dir / "validation.jsonl"
    emit_dataset(train_samples, train_path)
    emit_dataset(val_samples or train_samples[:1], val_path)

    classifier = env.make_classifier(train)
    outcome = classifier.train(str(train_path), str(val_path), env.training_config)
    state = {
        "train_config": train.key,
        "model_ref": outcome.model_ref,
        "epoch_val_f1": list(outcome.epoch_val_f1),
        "best_epoch": outcome.best_epoch,
        "train_path": str(train_path),
        "val_path": str(val_path),
    }
    _write_json(state_path, state)
    return state


def run_cell(env: SweepEnvironment, run: RunConfig, model_state: dict) -> dict:
    """Evaluate one (train, infer) cell over every test block."""
    cell_path = _cell_state_path(env, run)
    if cell_path.exists():
        return json.loads(cell_path.read_text(encoding="utf-8"))

    reports: list[EvalReport] = []
    per_block = []
    transcriber = env.make_transcriber(run.infer)
    classifier = env.make_classifier(run.infer)
    for recording in env.recordings_with(Split.TEST):
        result = transcribe_recording(
            recording,
            run.infer.segmentation,
            run.infer.window_len_s,
            transcriber,
            env.cache,
        )
        for block in env.plan.blocks:
            if block.recording_id != recording.recording_id:
                continue
            view = BlockView.over(recording, block.block_start_ms, block.block_end_ms)
            report = evaluate_block(
                view,
                result,
                classifier,
                model_state["model_ref"],
                run.infer.window_len_s,
                resolution_ms=env.resolution_ms,
                batch_size=env.batch_size,
            )
            reports.append(report)
            per_block.append(
                {
                    "recording_id": recording.recording_id,
                    "block_start_ms": block.block_start_ms,
                    "f1_macro": report.f1_macro,
                    "ceiling_f1_macro": report.ceiling_f1_macro,
                }
            )
    combined = combine_reports(reports)
    state = {
        "run": {
            "train": run.train.key,
            "infer": run.infer.key,
            "seed": run.seed,
        },
        "model_ref": model_state["model_ref"],
        "report": combined.to_json_dict(),
        "blocks": per_block,
    }
    _write_json(cell_path, state)
    return state


def execute_sweep(runs: Sequence[RunConfig], env: SweepEnvironment) -> dict:
    """Run every cell, training each distinct train config exactly once.

    Backend failures mark the cell FAILED (with the error) and the sweep
    moves on; completed cells are skipped on re-entry, so interrupt and
    resume converge to the same state.
    """
    env.state_dir.mkdir(parents=True, exist_ok=True)
    models: dict[str, dict] = {}
    cells: dict[str, dict] = {}
    for run in runs:
        train_key = run.train.key
        if train_key not in models:
            try:
                models[train_key] = ensure_model(env, run.train)
            except RaddetError as exc:
                models[train_key] = {"failed": True, "error": str(exc)}
        model_state = models[train_key]
        cell_path = _cell_state_path(env, run)
        if model_state.get("failed"):
            state = {
                "run": {"train": run.train.key, "infer": run.infer.key, "seed": run.seed},
                "failed": True,
                "error": f"training failed: {model_state['error']}",
            }
            if not cell_path.exists():
                _write_json(cell_path, state)
            cells[run.cell_key] = json.loads(cell_path.read_text(encoding="utf-8"))
            continue
        try:
            cells[run.cell_key] = run_cell(env, run, model_state)
        except RaddetError as exc:
            state = {
                "run": {"train": run.train.key, "infer": run.infer.key, "seed": run.seed},
                "failed": True,
                "error": str(exc),
            }
            _write_json(cell_path, state)
            cells[run.cell_key] = state
    summary = {"models": models, "cells": cells}
    _write_json(env.state_dir / "sweep_report.json", summary)
    return summary


def load_sweep_state(state_dir: Path) -> dict:
    path = state_dir / "sweep_report.json"
    if not path.exists():
        raise IoError(f"no sweep report under {state_dir}")
    return json.loads(path.read_text(encoding="utf-8"))


# --- report emission ---------------------------------------------------------


def _cell_f1(cell: dict) -> float | None:
    if cell.get("failed"):
        return None
    return cell["report"]["f1_macro"]


def emit_reports(summary: dict, destination: str | Path) -> list[Path]:
    """Result files: heatmap, three grouping tables, the timing table.

    Scores render with two decimals (the machine-readable sweep state
    keeps full precision); FAILED cells leave the heatmap value empty and
    are listed in the failure sidecar.
    """
    destination = Path(destination)
    destination.mkdir(parents=True, exist_ok=True)
    cells = summary["cells"]
    if not any(not c.get("failed") for c in cells.values()):
        raise ArgumentError("no completed cells to report")

    train_keys = sorted({c["run"]["train"] for c in cells.values()})
    infer_keys = sorted({c["run"]["infer"] for c in cells.values()})
    by_pair = {(c["run"]["train"], c["run"]["infer"]): c for c in cells.values()}
    written = []

    heatmap = destination / "heatmap.csv"
    with open(heatmap, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["train\\infer"] + infer_keys)
        for train_key in train_keys:
            row: list[str] = [train_key]
            for infer_key in infer_keys:
                cell = by_pair.get((train_key, infer_key))
                value = _cell_f1(cell) if cell else None
                row.append("" if value is None else f"{value:.2f}")
            writer.writerow(row)
    written.append(heatmap)

    def grouping(name: str, group_of) -> Path:
        path = destination / name
        rows = []
        for cell in cells.values():
            value = _cell_f1(cell)
            if value is None:
                continue
            rows.append((group_of(cell["run"]), f"{value:.2f}"))
        rows.sort()
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["group", "f1_macro"])
            writer.writerows(rows)
        return path

    written.append(
        grouping(
            "boxplot_by_train_window.csv",
            lambda run: f"train-{TranscriptionConfig.from_key(run['train']).window_len_s}s",
        )
    )
    written.append(
        grouping(
            "boxplot_by_infer_window.csv",
            lambda run: f"infer-{TranscriptionConfig.from_key(run['infer']).window_len_s}s",
        )
    )
    written.append(
        grouping(
            "boxplot_by_segmentation_pair.csv",
            lambda run: (
                f"{TranscriptionConfig.from_key(run['train']).segmentation.value}"
                f"->{TranscriptionConfig.from_key(run['infer']).segmentation.value}"
            ),
        )
    )

    timing = destination / "timing.csv"
    with open(timing, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "segmentation",
                "model_size",
                "window_s",
                "ceiling_f1_macro",
                "transcribe_s_per_audio_h",
            ]
        )
        for infer_key in infer_keys:
            config = TranscriptionConfig.from_key(infer_key)
            column = [
                c
                for c in cells.values()
                if c["run"]["infer"] == infer_key and not c.get("failed")
            ]
            if not column:
                continue
            report = column[0]["report"]
            ceiling = report["ceiling_f1_macro"]
            transcribe = report["timing"]["transcribe_s_per_audio_h"]
            writer.writerow(
                [
                    config.segmentation.value,
                    config.model_size.value,
                    config.window_len_s,
                    f"{ceiling:.2f}",
                    "" if transcribe is None else f"{transcribe:.2f}",
                ]
            )
    written.append(timing)

    failures = {
        key: cell["error"] for key, cell in cells.items() if cell.get("failed")
    }
    if failures:
        sidecar = destination / "failures.json"
        sidecar.write_text(
            json.dumps(failures, indent=2, sort_keys=True), encoding="utf-8"
        )
        written.append(sidecar)
    return written
