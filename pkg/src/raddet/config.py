"""Project configuration: one YAML file plus environment overrides.

Relative paths resolve against the config file's directory, so a project
folder can be moved or mounted anywhere. Backend commands are templates:
``{size}``, ``{seed}``, ``{segmentation}``, ``{window}``, ``{corpus}``,
``{cache}`` and ``{models}`` are substituted per transcription
configuration when a client is opened. ``RADIA_BACKEND_<KIND>``
environment variables override the configured endpoint or command, which
is how CI and local runs share one config.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .backends import BackendClient
from .dataset import SplitPolicy
from .errors import SchemaError
from .protocol import BackendDescriptor, BackendKind, ModelSize, Transport
from .sweep import GridAxes, TranscriptionConfig
from .windowing import Segmentation

ENV_PREFIX = "RADIA_BACKEND_"

_TOP_KEYS = {
    "corpus_root",
    "cache_root",
    "report_root",
    "state_root",
    "seed",
    "evaluation",
    "grid",
    "split_policy",
    "backends",
    "llm_decoding",
    "slice_command",
}
_EVAL_KEYS = {"resolution_ms", "batch_size"}
_GRID_KEYS = {"segmentations", "window_lengths", "model_sizes"}
_POLICY_KEYS = {
    "big_day_hours",
    "blocks_big_day",
    "blocks_small_day",
    "target_ratio",
    "ratio_min",
    "ratio_max",
    "test_ad_target",
    "test_ad_tolerance",
    "spread_low",
    "spread_high",
    "val_fraction",
    "train_only_ids",
    "allow_empty_train",
}
_BACKEND_KEYS = {"transport", "endpoint_or_command"}


@dataclass(frozen=True)
class BackendTemplate:
    transport: Transport
    endpoint_or_command: str


@dataclass
class ProjectConfig:
    corpus_root: Path
    cache_root: Path
    report_root: Path
    state_root: Path
    seed: int = 0
    resolution_ms: int = 100
    batch_size: int = 32
    grid: GridAxes = field(default_factory=GridAxes)
    split_policy: SplitPolicy = field(default_factory=SplitPolicy)
    backends: dict[BackendKind, BackendTemplate] = field(default_factory=dict)
    llm_decoding: dict = field(default_factory=dict)
    slice_command: str | None = None

    def descriptor(
        self, kind: BackendKind, config: TranscriptionConfig | None = None
    ) -> BackendDescriptor:
        """Concrete descriptor for one backend, template substituted."""
        template = self.backends.get(kind)
        if template is None:
            raise SchemaError(f"no {kind.value} backend configured")
        target = template.endpoint_or_command
        substitutions = {
            "{corpus}": str(self.corpus_root),
            "{cache}": str(self.cache_root),
            "{models}": str(self.state_root / "backend-models"),
            "{seed}": str(self.seed),
        }
        if config is not None:
            substitutions.update(
                {
                    "{size}": config.model_size.value,
                    "{segmentation}": config.segmentation.value,
                    "{window}": str(config.window_len_s),
                }
            )
        for token, value in substitutions.items():
            target = target.replace(token, value)
        return BackendDescriptor(
            kind=kind,
            transport=template.transport,
            endpoint_or_command=target,
            model_size=(
                config.model_size
                if kind is BackendKind.TRANSCRIBER and config is not None
                else None
            ),
        )


def _reject_unknown(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise SchemaError(f"unknown {where} keys: {sorted(unknown)}")


def _parse_backend(raw: dict, where: str) -> BackendTemplate:
    if not isinstance(raw, dict):
        raise SchemaError(f"{where} must be a mapping")
    _reject_unknown(raw, _BACKEND_KEYS, where)
    transport_raw = raw.get("transport", "subprocess_stdio")
    try:
        transport = Transport(transport_raw)
    except ValueError as exc:
        raise SchemaError(f"{where}: unknown transport {transport_raw!r}") from exc
    command = raw.get("endpoint_or_command")
    if not command or not isinstance(command, str):
        raise SchemaError(f"{where}: endpoint_or_command must be a nonempty string")
    return BackendTemplate(transport=transport, endpoint_or_command=command)


def _apply_env_overrides(backends: dict[BackendKind, BackendTemplate]) -> None:
    for kind in BackendKind:
        value = os.environ.get(f"{ENV_PREFIX}{kind.name}")
        if not value:
            continue
        transport = (
            Transport.HTTP
            if value.startswith(("http://", "https://"))
            else Transport.SUBPROCESS_STDIO
        )
        backends[kind] = BackendTemplate(transport=transport, endpoint_or_command=value)


def load_config(path: str | Path) -> ProjectConfig:
    """Parse and validate a project config; unknown keys are rejected."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise SchemaError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise SchemaError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("config must be a YAML mapping")
    _reject_unknown(raw, _TOP_KEYS, "config")

    base = path.parent.resolve()

    def resolve(key: str, default: str) -> Path:
        value = raw.get(key, default)
        p = Path(str(value))
        return p if p.is_absolute() else base / p

    evaluation = raw.get("evaluation", {}) or {}
    if not isinstance(evaluation, dict):
        raise SchemaError("evaluation must be a mapping")
    _reject_unknown(evaluation, _EVAL_KEYS, "evaluation")

    grid_raw = raw.get("grid", {}) or {}
    if not isinstance(grid_raw, dict):
        raise SchemaError("grid must be a mapping")
    _reject_unknown(grid_raw, _GRID_KEYS, "grid")
    grid = GridAxes(
        segmentations=tuple(
            Segmentation.from_wire(s)
            for s in grid_raw.get("segmentations", ["exact", "non_exact"])
        ),
        window_lengths=tuple(
            int(w) for w in grid_raw.get("window_lengths", [10, 20, 40])
        ),
        model_sizes=tuple(
            ModelSize.from_wire(s)
            for s in grid_raw.get("model_sizes", ["small", "medium", "large"])
        ),
    )

    policy_raw = raw.get("split_policy", {}) or {}
    if not isinstance(policy_raw, dict):
        raise SchemaError("split_policy must be a mapping")
    _reject_unknown(policy_raw, _POLICY_KEYS, "split_policy")
    policy_kwargs = dict(policy_raw)
    if "train_only_ids" in policy_kwargs:
        policy_kwargs["train_only_ids"] = frozenset(policy_kwargs["train_only_ids"])
    seed = int(raw.get("seed", 0))
    policy = SplitPolicy(seed=seed, **policy_kwargs)

    backends_raw = raw.get("backends", {}) or {}
    if not isinstance(backends_raw, dict):
        raise SchemaError("backends must be a mapping")
    _reject_unknown(
        backends_raw, {k.value for k in BackendKind}, "backends"
    )
    backends = {
        BackendKind(name): _parse_backend(value, f"backends.{name}")
        for name, value in backends_raw.items()
    }
    _apply_env_overrides(backends)

    slice_command = raw.get("slice_command")
    if slice_command is not None and not isinstance(slice_command, str):
        raise SchemaError("slice_command must be a string or null")

    return ProjectConfig(
        corpus_root=resolve("corpus_root", "corpus"),
        cache_root=resolve("cache_root", "cache"),
        report_root=resolve("report_root", "reports"),
        state_root=resolve("state_root", "state"),
        seed=seed,
        resolution_ms=int(evaluation.get("resolution_ms", 100)),
        batch_size=int(evaluation.get("batch_size", 32)),
        grid=grid,
        split_policy=policy,
        backends=backends,
        llm_decoding=dict(raw.get("llm_decoding", {}) or {}),
        slice_command=slice_command,
    )


class ClientPool:
    """Shares one client (one backend process) per distinct descriptor."""

    def __init__(self):
        self._clients: dict[BackendDescriptor, BackendClient] = {}

    def get(self, descriptor: BackendDescriptor) -> BackendClient:
        client = self._clients.get(descriptor)
        if client is None:
            client = BackendClient(descriptor)
            self._clients[descriptor] = client
        return client

    def close(self) -> None:
        for client in self._clients.values():
            client.close()
        self._clients.clear()

    def __enter__(self) -> "ClientPool":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
