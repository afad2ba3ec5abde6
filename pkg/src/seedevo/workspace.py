"""Run isolation, archive store, and checkpoint persistence.

Every run gets a fresh workspace directory seeded with curated copies
of its parent archives under "Previous Experiments/parent_i".  Verified
runs are archived into an immutable per-run directory; archives are
what later generations inherit.  All state lives under one output
root:

    output_root/
        run_config.json     effective config for audit and resume
        events.jsonl        append-only event log
        checkpoint.json     atomic per-iteration snapshot
        archive_index.json  id -> archive metadata
        archives/<id>/      manifest.json, experiments/, solution/, logs/
        workspaces/iter_NNNN/slot_NN/
"""

from __future__ import annotations

import json
import os
import shutil
import threading
from dataclasses import dataclass, field
from fnmatch import fnmatch
from pathlib import Path
from typing import TYPE_CHECKING

from .errors import ArchiveError, CorruptStateError, MaterializationError

if TYPE_CHECKING:
    from .executors import RunOutcome

SCHEMA_VERSION = 1

#: Directory names never copied into a curated parent, regardless of
#: caller-supplied rules.  Keeps inherited archives from nesting their
#: own inherited archives.
MANDATORY_EXCLUDED_DIRS = ("Previous Experiments",)

PARENT_DIR_NAME = "Previous Experiments"


@dataclass(frozen=True)
class ArchiveRef:
    """Resolvable pointer to an archived run."""

    id: str
    path: Path
    score: float
    operator: str
    iteration: int
    slot: int
    parent_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "path": str(self.path),
            "score": self.score,
            "operator": self.operator,
            "iteration": self.iteration,
            "slot": self.slot,
            "parent_ids": list(self.parent_ids),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ArchiveRef":
        return cls(
            id=raw["id"],
            path=Path(raw["path"]),
            score=raw["score"],
            operator=raw["operator"],
            iteration=raw["iteration"],
            slot=raw["slot"],
            parent_ids=tuple(raw.get("parent_ids", ())),
        )


@dataclass(frozen=True)
class CurationRules:
    """What a curated parent copy leaves out."""

    excluded_dir_names: tuple[str, ...] = ()
    excluded_globs: tuple[str, ...] = ()
    max_file_bytes: int = 64 * 1024 * 1024

    def all_excluded_dirs(self) -> frozenset[str]:
        return frozenset(self.excluded_dir_names) | frozenset(MANDATORY_EXCLUDED_DIRS)


@dataclass(frozen=True)
class CopyPlan:
    """Deterministic list of relative paths to copy, plus warnings for
    entries that could not be inspected."""

    entries: tuple[str, ...]
    warnings: tuple[str, ...] = ()


def curate_parent_archive(source: Path, rules: CurationRules) -> CopyPlan:
    """Plan a curated copy of one archive.

    Walks the source tree, dropping excluded directory names at any
    depth, glob-matched relative paths, and files over the byte cap.
    Pure: nothing is copied here.  Entries come back sorted so copies
    are reproducible.
    """
    source = Path(source)
    if not source.is_dir():
        raise ArchiveError(f"parent archive not found: {source}")
    excluded_dirs = rules.all_excluded_dirs()
    entries: list[str] = []
    warnings: list[str] = []

    def walk(rel: Path) -> None:
        node = source / rel
        try:
            children = sorted(os.listdir(node))
        except OSError as exc:
            warnings.append(f"unreadable directory {rel.as_posix() or '.'}: {exc}")
            return
        for name in children:
            child_rel = rel / name
            child = source / child_rel
            if child.is_dir() and not child.is_symlink():
                if name in excluded_dirs:
                    continue
                walk(child_rel)
                continue
            rel_posix = child_rel.as_posix()
            if any(fnmatch(rel_posix, pat) for pat in rules.excluded_globs):
                continue
            try:
                size = child.stat().st_size
            except OSError as exc:
                warnings.append(f"unreadable entry {rel_posix}: {exc}")
                continue
            if size > rules.max_file_bytes:
                continue
            entries.append(rel_posix)

    walk(Path())
    return CopyPlan(entries=tuple(sorted(entries)), warnings=tuple(warnings))


def _execute_plan(source: Path, dest: Path, plan: CopyPlan) -> None:
    for rel in plan.entries:
        target = dest / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(source / rel, target)


def materialize_seed(
    seed,
    workspace: Path,
    data_source: Path | None = None,
    provisioning: str = "link",
    rules: CurationRules | None = None,
) -> Path:
    """Prepare a fresh workspace for one run.

    Creates the directory (collision is an error, never reuse), wires
    in task data by copy or symlink, lays curated parent copies under
    "Previous Experiments/parent_i" in parent order, and writes the
    seed manifest the run reads its task from.
    """
    workspace = Path(workspace)
    if workspace.exists():
        raise MaterializationError(f"workspace already exists: {workspace}")
    rules = rules or CurationRules()
    workspace.mkdir(parents=True)

    if data_source is not None:
        data_source = Path(data_source)
        if not data_source.exists():
            raise MaterializationError(f"data source missing: {data_source}")
        dest = workspace / "data"
        if provisioning == "copy":
            shutil.copytree(data_source, dest)
        elif provisioning == "link":
            dest.symlink_to(data_source.resolve(), target_is_directory=data_source.is_dir())
        else:
            raise MaterializationError(f"unknown data provisioning mode {provisioning!r}")

    warnings: list[str] = []
    for i, parent in enumerate(seed.parents):
        plan = curate_parent_archive(parent.path, rules)
        dest = workspace / PARENT_DIR_NAME / f"parent_{i}"
        dest.mkdir(parents=True)
        _execute_plan(parent.path, dest, plan)
        warnings.extend(plan.warnings)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "operator": seed.operator.value,
        "slot": seed.slot,
        "context_params": dict(seed.context_params),
        "parents": [
            {"id": p.id, "score": p.score, "path": f"{PARENT_DIR_NAME}/parent_{i}"}
            for i, p in enumerate(seed.parents)
        ],
        "curation_warnings": warnings,
    }
    _atomic_write_json(workspace / "seed_manifest.json", manifest)
    return workspace


def archive_run(
    workspace: Path,
    outcome: "RunOutcome",
    archive_dir: Path,
    archive_id: str,
    seed_info: dict,
    iteration: int,
    slot: int,
) -> ArchiveRef:
    """Freeze one verified run into an immutable archive directory.

    Captures the per-experiment records, the workspace's solution/ and
    logs/ trees when present, and a manifest tying scores to lineage.
    Unverifiable outcomes are rejected; a workspace can be archived at
    most once.
    """
    workspace = Path(workspace)
    if not outcome.verified:
        raise ArchiveError("refusing to archive an unverified outcome")
    if not outcome.experiments:
        raise ArchiveError("verified outcome carries no experiment records")
    marker = workspace / ".archived"
    if marker.exists():
        raise ArchiveError(f"workspace already archived: {workspace}")
    archive_dir = Path(archive_dir)
    if archive_dir.exists():
        raise ArchiveError(f"archive collision: {archive_dir}")

    exp_dir = archive_dir / "experiments"
    exp_dir.mkdir(parents=True)
    names = set()
    for record in outcome.experiments:
        if record.run_name in names:
            raise ArchiveError(f"duplicate experiment run name {record.run_name!r}")
        names.add(record.run_name)
        _atomic_write_json(exp_dir / f"{record.run_name}.json", record.to_dict())

    for sub in ("solution", "logs"):
        src = workspace / sub
        dest = archive_dir / sub
        if src.is_dir():
            shutil.copytree(src, dest)
        else:
            dest.mkdir()

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "id": archive_id,
        "iteration": iteration,
        "slot": slot,
        "score": outcome.score,
        "operator": seed_info.get("operator"),
        "parent_ids": [p["id"] for p in seed_info.get("parents", [])],
        "experiments": [r.run_name for r in outcome.experiments],
        "diagnostics": dict(outcome.diagnostics),
    }
    _atomic_write_json(archive_dir / "manifest.json", manifest)
    marker.write_text(archive_id, encoding="utf-8")
    return ArchiveRef(
        id=archive_id,
        path=archive_dir,
        score=outcome.score,
        operator=seed_info.get("operator", ""),
        iteration=iteration,
        slot=slot,
        parent_ids=tuple(manifest["parent_ids"]),
    )


# -- checkpointing ----------------------------------------------------


@dataclass(frozen=True)
class Checkpoint:
    """Everything needed to continue a run after the last finished
    iteration."""

    iteration: int
    pool: dict
    hedge: dict
    stopping: dict
    rng: dict
    event_log_offset: int
    stopped: bool = False
    schema_version: int = SCHEMA_VERSION

    REQUIRED = ("iteration", "pool", "hedge", "stopping", "rng", "event_log_offset", "stopped")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "iteration": self.iteration,
            "pool": self.pool,
            "hedge": self.hedge,
            "stopping": self.stopping,
            "rng": self.rng,
            "event_log_offset": self.event_log_offset,
            "stopped": self.stopped,
        }


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> None:
    """Write atomically: a crash mid-save leaves the previous file intact."""
    _atomic_write_json(Path(path), checkpoint.to_dict())


def load_checkpoint(path: Path) -> Checkpoint | None:
    """None when nothing was ever saved; CorruptStateError when a file
    exists but cannot be trusted, naming the failing field."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptStateError(f"checkpoint unreadable: {exc}") from exc
    if not isinstance(raw, dict):
        raise CorruptStateError("checkpoint: top level must be an object")
    for key in Checkpoint.REQUIRED:
        if key not in raw:
            raise CorruptStateError(f"checkpoint field missing: {key}")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise CorruptStateError(f"checkpoint schema_version: {raw.get('schema_version')!r}")
    if not isinstance(raw["iteration"], int) or raw["iteration"] < 0:
        raise CorruptStateError(f"checkpoint field iteration: {raw['iteration']!r}")
    if not isinstance(raw["event_log_offset"], int) or raw["event_log_offset"] < 0:
        raise CorruptStateError(f"checkpoint field event_log_offset: {raw['event_log_offset']!r}")
    return Checkpoint(
        iteration=raw["iteration"],
        pool=raw["pool"],
        hedge=raw["hedge"],
        stopping=raw["stopping"],
        rng=raw["rng"],
        event_log_offset=raw["event_log_offset"],
        stopped=bool(raw["stopped"]),
    )


def _atomic_write_json(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


# -- run store --------------------------------------------------------


class RunStore:
    """Filesystem layout and archive registry for one output root."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    # paths
    @property
    def config_path(self) -> Path:
        return self.root / "run_config.json"

    @property
    def events_path(self) -> Path:
        return self.root / "events.jsonl"

    @property
    def checkpoint_path(self) -> Path:
        return self.root / "checkpoint.json"

    @property
    def index_path(self) -> Path:
        return self.root / "archive_index.json"

    @property
    def archives_dir(self) -> Path:
        return self.root / "archives"

    @property
    def workspaces_dir(self) -> Path:
        return self.root / "workspaces"

    @classmethod
    def create(cls, root: Path) -> "RunStore":
        store = cls(root)
        if store.config_path.exists():
            raise MaterializationError(f"output root already holds a run: {root}")
        store.root.mkdir(parents=True, exist_ok=True)
        store.archives_dir.mkdir(exist_ok=True)
        store.workspaces_dir.mkdir(exist_ok=True)
        store._write_index({})
        return store

    @classmethod
    def open(cls, root: Path) -> "RunStore":
        store = cls(root)
        if not store.config_path.exists():
            raise CorruptStateError(f"not a run directory (no run_config.json): {root}")
        return store

    def write_config(self, config: dict) -> None:
        _atomic_write_json(self.config_path, config)

    def read_config(self) -> dict:
        try:
            return json.loads(self.config_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptStateError(f"run_config.json unreadable: {exc}") from exc

    def workspace_path(self, iteration: int, slot: int) -> Path:
        return self.workspaces_dir / f"iter_{iteration:04d}" / f"slot_{slot:02d}"

    @staticmethod
    def archive_id(iteration: int, slot: int) -> str:
        # deterministic ids double as resume bookkeeping: the iteration
        # is recoverable from the id when pruning replayed work
        return f"it{iteration:04d}_slot{slot:02d}"

    def archive_run(
        self,
        workspace: Path,
        outcome: "RunOutcome",
        seed_info: dict,
        iteration: int,
        slot: int,
    ) -> ArchiveRef:
        archive_id = self.archive_id(iteration, slot)
        ref = archive_run(
            workspace=workspace,
            outcome=outcome,
            archive_dir=self.archives_dir / archive_id,
            archive_id=archive_id,
            seed_info=seed_info,
            iteration=iteration,
            slot=slot,
        )
        with self._lock:
            index = self._read_index()
            index[archive_id] = ref.to_dict()
            self._write_index(index)
        return ref

    def resolve_archive(self, archive_id: str) -> ArchiveRef:
        index = self._read_index()
        if archive_id not in index:
            raise CorruptStateError(f"archive id not in registry: {archive_id}")
        ref = ArchiveRef.from_dict(index[archive_id])
        if not ref.path.is_dir():
            raise CorruptStateError(f"archive directory missing: {ref.path}")
        return ref

    def prune_after_iteration(self, iteration: int) -> None:
        """Remove workspaces, archives, and registry rows produced after
        the given iteration.  Resume replays that work; stale
        directories would collide with the deterministic names."""
        if self.workspaces_dir.is_dir():
            for entry in sorted(self.workspaces_dir.iterdir()):
                if entry.name.startswith("iter_") and int(entry.name[5:]) > iteration:
                    shutil.rmtree(entry)
        with self._lock:
            index = self._read_index()
            keep = {}
            for archive_id, raw in index.items():
                if raw.get("iteration", 0) > iteration:
                    target = self.archives_dir / archive_id
                    if target.is_dir():
                        shutil.rmtree(target)
                else:
                    keep[archive_id] = raw
            self._write_index(keep)

    def _read_index(self) -> dict:
        if not self.index_path.exists():
            return {}
        try:
            raw = json.loads(self.index_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptStateError(f"archive_index.json unreadable: {exc}") from exc
        return raw.get("archives", {})

    def _write_index(self, archives: dict) -> None:
        _atomic_write_json(
            self.index_path, {"schema_version": SCHEMA_VERSION, "archives": archives}
        )
