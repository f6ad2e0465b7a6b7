"""Command surface: validate, transcribe, dataset, train, predict,
evaluate, sweep, report, llm-eval, synth.

Exit status: 0 on success, 1 on a domain error (timeline, policy,
backend), 2 on usage errors. Commands are idempotent with respect to
cached state: rerunning with unchanged inputs performs no new backend
calls (``--force`` recomputes).
"""

from __future__ import annotations

import functools
import json
import shlex
import sys
from pathlib import Path

import click

from . import __version__
from .backends import BackendClient
from .config import ClientPool, ProjectConfig, load_config
from .cache import TranscriptionCache
from .corpus import Recording, load_corpus
from .dataset import Split, SplitPlan, build_splits, emit_dataset, tag_windows
from .errors import RaddetError
from .evaluation import (
    ad_duration_histogram,
    combine_reports,
    coverage_bins,
    evaluate_predictions,
    oracle_window_labels,
    write_coverage_csv,
    write_histogram_csv,
)
from .pipeline import BlockView, evaluate_block, restrict_to_block, transcribe_recording
from .protocol import (
    BackendDescriptor,
    BackendKind,
    ModelSize,
    Prediction,
    PredictionFlag,
    Transport,
)
from .sweep import (
    GridAxes,
    RunConfig,
    SweepEnvironment,
    TranscriptionConfig,
    emit_reports,
    enumerate_runs,
    ensure_model,
    execute_sweep,
    load_sweep_state,
)
from .timeline import Label, labelstudio_to_document, load_annotation_file, parse_annotations
from .windowing import Segmentation


def domain_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except RaddetError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(1)

    return wrapper


def config_option(f):
    return click.option(
        "--config",
        "-c",
        "config_path",
        required=True,
        type=click.Path(exists=True, dir_okay=False),
        help="Project config YAML.",
    )(f)


def transcription_options(prefix: str = ""):
    names = (f"--{prefix}segmentation", f"--{prefix}window", f"--{prefix}size")

    def wrap(f):
        f = click.option(
            names[0], f"{prefix.replace('-', '_')}segmentation",
            type=click.Choice(["exact", "non_exact"]), required=True,
        )(f)
        f = click.option(
            names[1], f"{prefix.replace('-', '_')}window", type=int, required=True
        )(f)
        f = click.option(
            names[2], f"{prefix.replace('-', '_')}size",
            type=click.Choice([m.value for m in ModelSize]), required=True,
        )(f)
        return f

    return wrap


def make_tc(segmentation: str, window: int, size: str) -> TranscriptionConfig:
    return TranscriptionConfig(
        Segmentation.from_wire(segmentation), window, ModelSize.from_wire(size)
    )


class Project:
    """Loaded config plus lazily-created corpus, plan, and clients."""

    def __init__(self, config_path: str):
        self.cfg: ProjectConfig = load_config(config_path)
        self.pool = ClientPool()
        self._corpus: list[Recording] | None = None
        self._plan: SplitPlan | None = None

    @property
    def corpus(self) -> list[Recording]:
        if self._corpus is None:
            self._corpus = load_corpus(self.cfg.corpus_root)
        return self._corpus

    @property
    def cache(self) -> TranscriptionCache:
        return TranscriptionCache(self.cfg.cache_root)

    @property
    def plan_path(self) -> Path:
        return self.cfg.state_root / "split_plan.json"

    def plan(self) -> SplitPlan:
        if self._plan is None:
            if self.plan_path.exists():
                self._plan = SplitPlan.from_json_dict(
                    json.loads(self.plan_path.read_text(encoding="utf-8"))
                )
            else:
                self._plan = build_splits(
                    [r.timeline for r in self.corpus], self.cfg.split_policy
                )
                self.plan_path.parent.mkdir(parents=True, exist_ok=True)
                self.plan_path.write_text(
                    json.dumps(self._plan.to_json_dict(), indent=2), encoding="utf-8"
                )
        return self._plan

    def transcriber(self, tc: TranscriptionConfig) -> BackendClient:
        return self.pool.get(self.cfg.descriptor(BackendKind.TRANSCRIBER, tc))

    def classifier(self, tc: TranscriptionConfig, oracle: bool = False) -> BackendClient:
        if oracle:
            return self.pool.get(self.oracle_descriptor(tc))
        return self.pool.get(self.cfg.descriptor(BackendKind.CLASSIFIER, tc))

    def oracle_descriptor(self, tc: TranscriptionConfig) -> BackendDescriptor:
        command = (
            f"{shlex.quote(sys.executable)} -m raddet.mock_backend classifier "
            f"--mode oracle --corpus {shlex.quote(str(self.cfg.corpus_root))} "
            f"--segmentation {tc.segmentation.value} --window {tc.window_len_s} "
            f"--size {tc.model_size.value} --cache {shlex.quote(str(self.cfg.cache_root))}"
        )
        return BackendDescriptor(
            kind=BackendKind.CLASSIFIER,
            transport=Transport.SUBPROCESS_STDIO,
            endpoint_or_command=command,
        )

    def sweep_env(self) -> SweepEnvironment:
        return SweepEnvironment(
            corpus=self.corpus,
            plan=self.plan(),
            cache=self.cache,
            state_dir=self.cfg.state_root,
            make_transcriber=self.transcriber,
            make_classifier=lambda tc: self.classifier(tc),
            resolution_ms=self.cfg.resolution_ms,
            batch_size=self.cfg.batch_size,
        )

    def close(self) -> None:
        self.pool.close()


@click.group()
@click.version_option(__version__, prog_name="raddet")
def main():
    """Radio ad detection over windowed transcription + text classification."""


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--format", "fmt", type=click.Choice(["canonical", "labelstudio"]), default="canonical"
)
@domain_errors
def validate(paths, fmt):
    """Check annotation documents against the timeline invariants."""
    failures = 0
    for path in paths:
        try:
            if fmt == "labelstudio":
                tasks = json.loads(Path(path).read_text(encoding="utf-8"))
                if isinstance(tasks, dict):
                    tasks = [tasks]
                for task in tasks:
                    parse_annotations(labelstudio_to_document(task))
            else:
                load_annotation_file(path)
            click.echo(f"OK {path}")
        except (RaddetError, json.JSONDecodeError) as exc:
            failures += 1
            click.echo(f"FAIL {path}: {type(exc).__name__}: {exc}")
    if failures:
        click.echo(f"error: {failures} of {len(paths)} documents invalid", err=True)
        sys.exit(1)


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--profile", type=click.Choice(["mini", "splits", "sweep"]), default="mini")
@click.option("--seed", type=int, default=0)
@domain_errors
def synth(out, profile, seed):
    """Generate a synthetic corpus (annotations + utterance scripts)."""
    from .synth import generate_corpus

    manifest = generate_corpus(out, profile, seed)
    total_h = sum(r["duration_ms"] for r in manifest["recordings"]) / 3_600_000
    ad_ms = sum(r["ad_ms"] for r in manifest["recordings"])
    total_ms = sum(r["duration_ms"] for r in manifest["recordings"])
    click.echo(
        f"wrote {len(manifest['recordings'])} recordings "
        f"({total_h:.1f} h, {100 * ad_ms / total_ms:.2f}% ad) to {out}"
    )


@main.command()
@config_option
@transcription_options()
@domain_errors
def transcribe(config_path, segmentation, window, size):
    """Populate the transcription cache for one configuration."""
    project = Project(config_path)
    tc = make_tc(segmentation, window, size)
    try:
        client = project.transcriber(tc)
        for recording in project.corpus:
            result = transcribe_recording(
                recording, tc.segmentation, tc.window_len_s, client, project.cache
            )
            origin = "cache" if result.from_cache else "fresh"
            click.echo(
                f"{recording.recording_id}: {origin}, "
                f"{result.seconds_per_audio_hour:.2f} s per audio hour"
            )
    finally:
        project.close()


@main.command()
@config_option
@transcription_options()
@domain_errors
def dataset(config_path, segmentation, window, size):
    """Build the split plan and emit train/validation/test datasets."""
    project = Project(config_path)
    tc = make_tc(segmentation, window, size)
    try:
        plan = project.plan()
        client = project.transcriber(tc)
        samples = []
        for recording in project.corpus:
            result = transcribe_recording(
                recording, tc.segmentation, tc.window_len_s, client, project.cache
            )
            samples.extend(
                tag_windows(
                    recording.timeline,
                    result.grid,
                    result.texts,
                    plan.ranges.get(recording.recording_id),
                )
            )
        out_dir = project.cfg.state_root / "datasets" / tc.key
        for split in Split:
            subset = [s for s in samples if s.split is split]
            if not subset:
                click.echo(f"{split.value}: no samples")
                continue
            manifest = emit_dataset(subset, out_dir / f"{split.value}.jsonl")
            click.echo(
                f"{split.value}: {manifest['samples']} samples -> {manifest['path']}"
            )
        click.echo(f"split plan: {project.plan_path}")
    finally:
        project.close()


@main.command()
@config_option
@transcription_options()
@domain_errors
def train(config_path, segmentation, window, size):
    """Train (once) the classifier for one transcription configuration."""
    project = Project(config_path)
    tc = make_tc(segmentation, window, size)
    try:
        state = ensure_model(project.sweep_env(), tc)
        click.echo(
            f"model_ref: {state['model_ref']} "
            f"(best epoch {state['best_epoch']}, "
            f"val F1 {state['epoch_val_f1'][state['best_epoch'] - 1]:.2f})"
        )
    finally:
        project.close()


def _eval_views(project: Project, scope: str) -> list[BlockView]:
    if scope == "full":
        return [BlockView.full(r) for r in project.corpus]
    plan = project.plan()
    by_id = {r.recording_id: r for r in project.corpus}
    return [
        BlockView.over(by_id[b.recording_id], b.block_start_ms, b.block_end_ms)
        for b in plan.blocks
    ]


@main.command()
@config_option
@transcription_options("train-")
@transcription_options("infer-")
@click.option("--oracle", is_flag=True, help="Use the ground-truth oracle classifier.")
@click.option("--scope", type=click.Choice(["test", "full"]), default="test")
@click.option("--force", is_flag=True)
@domain_errors
def predict(
    config_path,
    train_segmentation,
    train_window,
    train_size,
    infer_segmentation,
    infer_window,
    infer_size,
    oracle,
    scope,
    force,
):
    """Write per-window predictions for one train×infer pairing."""
    project = Project(config_path)
    train_tc = make_tc(train_segmentation, train_window, train_size)
    infer_tc = make_tc(infer_segmentation, infer_window, infer_size)
    try:
        out = (
            project.cfg.report_root
            / "predictions"
            / f"{train_tc.key}__{infer_tc.key}-{scope}.jsonl"
        )
        if out.exists() and not force:
            click.echo(f"predictions already at {out}")
            return
        model_ref = "oracle" if oracle else ensure_model(project.sweep_env(), train_tc)[
            "model_ref"
        ]
        classifier = project.classifier(infer_tc, oracle=oracle)
        transcriber = project.transcriber(infer_tc)
        out.parent.mkdir(parents=True, exist_ok=True)
        rows = 0
        with open(out, "w", encoding="utf-8") as handle:
            for view in _eval_views(project, scope):
                result = transcribe_recording(
                    view.recording,
                    infer_tc.segmentation,
                    infer_tc.window_len_s,
                    transcriber,
                    project.cache,
                )
                grid, texts, offset = restrict_to_block(
                    view, result, infer_tc.window_len_s
                )
                ordered = [texts.get(w.index, "") for w in grid.windows]
                predictions = classifier.classify(
                    model_ref,
                    ordered,
                    first_index=offset,
                    recording_id=view.recording.recording_id,
                    batch_size=project.cfg.batch_size,
                )
                for prediction in predictions:
                    handle.write(
                        json.dumps(
                            {
                                "recording_id": view.recording.recording_id,
                                "window_index": prediction.window_index,
                                "label": prediction.label.value,
                                "score": prediction.score,
                                "flags": sorted(f.value for f in prediction.flags),
                            }
                        )
                        + "\n"
                    )
                    rows += 1
        click.echo(f"wrote {rows} predictions to {out}")
    finally:
        project.close()


@main.command()
@config_option
@transcription_options("train-")
@transcription_options("infer-")
@click.option("--oracle", is_flag=True, help="Use the ground-truth oracle classifier.")
@click.option("--ceiling", is_flag=True, help="Print the theoretical ceiling only.")
@click.option("--scope", type=click.Choice(["test", "full"]), default="test")
@click.option("--force", is_flag=True)
@domain_errors
def evaluate(
    config_path,
    train_segmentation,
    train_window,
    train_size,
    infer_segmentation,
    infer_window,
    infer_size,
    oracle,
    ceiling,
    scope,
    force,
):
    """Score one train×infer pairing; also emits the corpus analytics CSVs."""
    project = Project(config_path)
    train_tc = make_tc(train_segmentation, train_window, train_size)
    infer_tc = make_tc(infer_segmentation, infer_window, infer_size)
    try:
        if ceiling:
            # Pure quantization bound: transcription (for non-exact
            # assignment) plus the majority oracle, no classifier.
            transcriber = project.transcriber(infer_tc)
            reports = []
            for view in _eval_views(project, scope):
                result = transcribe_recording(
                    view.recording,
                    infer_tc.segmentation,
                    infer_tc.window_len_s,
                    transcriber,
                    project.cache,
                )
                grid, _, offset = restrict_to_block(view, result, infer_tc.window_len_s)
                labels = oracle_window_labels(
                    view.recording.timeline, result.grid, result.segments
                )
                predictions = [
                    Prediction(w.index, labels[offset + w.index]) for w in grid.windows
                ]
                reports.append(
                    evaluate_predictions(
                        view.truth,
                        grid,
                        predictions,
                        resolution_ms=project.cfg.resolution_ms,
                        ceiling_labels=[labels[offset + w.index] for w in grid.windows],
                    )
                )
            combined = combine_reports(reports)
            click.echo(f"{combined.ceiling_f1_macro:.10f}")
            return

        kind = "oracle" if oracle else "model"
        out = (
            project.cfg.state_root
            / "eval"
            / f"{train_tc.key}__{infer_tc.key}-{scope}-{kind}.json"
        )
        if out.exists() and not force:
            stored = json.loads(out.read_text(encoding="utf-8"))
            click.echo(
                f"f1_macro: {stored['report']['f1_macro_display']} "
                f"ceiling: {stored['report']['ceiling_f1_macro_display']} (cached)"
            )
            return

        model_ref = "oracle" if oracle else ensure_model(
            project.sweep_env(), train_tc
        )["model_ref"]
        classifier = project.classifier(infer_tc, oracle=oracle)
        transcriber = project.transcriber(infer_tc)
        reports = []
        for view in _eval_views(project, scope):
            result = transcribe_recording(
                view.recording,
                infer_tc.segmentation,
                infer_tc.window_len_s,
                transcriber,
                project.cache,
            )
            reports.append(
                evaluate_block(
                    view,
                    result,
                    classifier,
                    model_ref,
                    infer_tc.window_len_s,
                    resolution_ms=project.cfg.resolution_ms,
                    batch_size=project.cfg.batch_size,
                )
            )
        combined = combine_reports(reports)

        analytics_dir = project.cfg.report_root / "analytics"
        analytics_dir.mkdir(parents=True, exist_ok=True)
        timelines = [r.timeline for r in project.corpus]
        write_histogram_csv(
            ad_duration_histogram(timelines, bin_width_s=10),
            analytics_dir / "ad_duration_histogram.csv",
        )
        write_coverage_csv(
            coverage_bins(timelines), analytics_dir / "coverage_bins.csv"
        )

        out.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "train": train_tc.key,
            "infer": infer_tc.key,
            "scope": scope,
            "classifier": kind,
            "report": combined.to_json_dict(),
        }
        out.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        click.echo(
            f"f1_macro: {combined.f1_macro:.2f} ceiling: {combined.ceiling_f1_macro:.2f}"
        )
        click.echo(f"report: {out}")
    finally:
        project.close()


@main.command()
@config_option
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@domain_errors
def sweep(config_path, seed):
    """Run the full train×infer grid and emit the result files."""
    project = Project(config_path)
    try:
        run_seed = project.cfg.seed if seed is None else seed
        runs = enumerate_runs(project.cfg.grid, seed=run_seed)
        click.echo(f"{len(runs)} runs over {len(project.cfg.grid.configs())} models")
        summary = execute_sweep(runs, project.sweep_env())
        failed = sum(1 for c in summary["cells"].values() if c.get("failed"))
        click.echo(f"completed {len(summary['cells']) - failed} cells, {failed} failed")
        for path in emit_reports(summary, project.cfg.report_root / "sweep"):
            click.echo(f"wrote {path}")
    finally:
        project.close()


@main.command()
@config_option
@domain_errors
def report(config_path):
    """Re-emit sweep result files from stored state."""
    project = Project(config_path)
    try:
        summary = load_sweep_state(project.cfg.state_root)
        for path in emit_reports(summary, project.cfg.report_root / "sweep"):
            click.echo(f"wrote {path}")
    finally:
        project.close()


@main.command("llm-eval")
@config_option
@transcription_options()
@click.option("--scope", type=click.Choice(["test", "full"]), default="test")
@click.option("--force", is_flag=True)
@domain_errors
def llm_eval(config_path, segmentation, window, size, scope, force):
    """Judge every window with the LLM baseline and score it."""
    project = Project(config_path)
    tc = make_tc(segmentation, window, size)
    try:
        out = project.cfg.state_root / "eval" / f"llm-{tc.key}-{scope}.json"
        if out.exists() and not force:
            stored = json.loads(out.read_text(encoding="utf-8"))
            click.echo(
                f"f1_macro: {stored['report']['f1_macro_display']} "
                f"flags: {stored['report']['flag_counts']} (cached)"
            )
            return
        judge = project.pool.get(project.cfg.descriptor(BackendKind.LLM_JUDGE))
        transcriber = project.transcriber(tc)
        reports = []
        for view in _eval_views(project, scope):
            result = transcribe_recording(
                view.recording, tc.segmentation, tc.window_len_s, transcriber, project.cache
            )
            grid, texts, offset = restrict_to_block(view, result, tc.window_len_s)
            labels = oracle_window_labels(
                view.recording.timeline, result.grid, result.segments
            )
            predictions = []
            for w in grid.windows:
                text = texts.get(w.index, "")
                if not text.strip():
                    # Nothing to judge; fall back without spending a call.
                    predictions.append(
                        Prediction(
                            w.index,
                            Label.NO_AD,
                            flags=frozenset({PredictionFlag.FALLBACK}),
                        )
                    )
                else:
                    judged = judge.llm_classify(text, window_index=w.index)
                    predictions.append(judged)
            reports.append(
                evaluate_predictions(
                    view.truth,
                    grid,
                    predictions,
                    resolution_ms=project.cfg.resolution_ms,
                    ceiling_labels=[labels[offset + w.index] for w in grid.windows],
                )
            )
        combined = combine_reports(reports)
        out.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "transcription": tc.key,
            "scope": scope,
            "decoding": project.cfg.llm_decoding,
            "report": combined.to_json_dict(),
        }
        out.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        click.echo(
            f"f1_macro: {combined.f1_macro:.2f} flags: {combined.flag_counts}"
        )
        click.echo(f"report: {out}")
    finally:
        project.close()


if __name__ == "__main__":
    main()
