"""Iteration loop: plan seeds, dispatch runs, settle tournaments.

Each iteration snapshots the elite pool, plans one seed per slot
(operator sampled from the allocator, parents selected from the
snapshot), dispatches all slots in parallel, then settles results at a
barrier: verified children are archived, each child meets the previous
elite of its own slot in a 1:1 tournament, and only a strictly better
child replaces the incumbent.  Observed improvements feed the
allocator; the best pool score feeds the stopping rule; a checkpoint is
written after every iteration.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Callable

from . import hedge as hedgemod
from .config import RunConfig
from .errors import ConfigurationError, CorruptStateError, EvaluationError
from .events import EventLog
from .hedge import HedgeState, ObservedGain
from .operators import Operator
from .rng import derive_rng
from .workspace import (
    ArchiveRef,
    Checkpoint,
    CurationRules,
    RunStore,
    load_checkpoint,
    materialize_seed,
    save_checkpoint,
)

if TYPE_CHECKING:
    import random

    from .executors import RunOutcome

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricDirection:
    """Which way the evaluation metric improves."""

    higher_is_better: bool = True

    def to_dict(self) -> dict:
        return {"higher_is_better": self.higher_is_better}

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricDirection":
        return cls(higher_is_better=bool(raw["higher_is_better"]))


def _check_finite(value: float, what: str) -> None:
    if not isinstance(value, (int, float)) or not math.isfinite(value):
        raise EvaluationError(f"{what} must be finite, got {value!r}")


def better(a: float, b: float, direction: MetricDirection) -> bool:
    """True when score a strictly beats score b. Ties are not better."""
    _check_finite(a, "score a")
    _check_finite(b, "score b")
    return a > b if direction.higher_is_better else a < b


def improvement(child: float, parent: float, direction: MetricDirection) -> float:
    """Signed gain of child over parent; positive always means better."""
    _check_finite(child, "child score")
    _check_finite(parent, "parent score")
    return child - parent if direction.higher_is_better else parent - child


@dataclass(frozen=True)
class EliteEntry:
    """Best known result for one population slot.

    score None marks the empty sentinel left behind when a slot's very
    first run fails: it occupies the slot, loses every future
    tournament, and carries no archive.
    """

    slot: int
    score: float | None
    archive: ArchiveRef | None
    origin_iteration: int
    origin_operator: Operator
    parent_ids: tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        return self.score is not None

    def to_dict(self) -> dict:
        return {
            "slot": self.slot,
            "score": self.score,
            "archive_id": self.archive.id if self.archive else None,
            "origin_iteration": self.origin_iteration,
            "origin_operator": self.origin_operator.value,
            "parent_ids": list(self.parent_ids),
        }

    @classmethod
    def from_dict(cls, raw: dict, resolve: Callable[[str], ArchiveRef]) -> "EliteEntry":
        archive = resolve(raw["archive_id"]) if raw.get("archive_id") else None
        return cls(
            slot=raw["slot"],
            score=raw["score"],
            archive=archive,
            origin_iteration=raw["origin_iteration"],
            origin_operator=Operator(raw["origin_operator"]),
            parent_ids=tuple(raw.get("parent_ids", ())),
        )


class ElitePool:
    """One entry per slot; entries are None until iteration 1 fills them."""

    def __init__(self, size: int, direction: MetricDirection):
        if size < 1:
            raise ConfigurationError("population_size", f"must be >= 1, got {size}")
        self.size = size
        self.direction = direction
        self.entries: list[EliteEntry | None] = [None] * size

    def snapshot(self) -> list[EliteEntry | None]:
        return list(self.entries)

    @property
    def complete(self) -> bool:
        return all(e is not None for e in self.entries)

    def best(self) -> EliteEntry | None:
        """Best valid entry under the pool direction; earliest slot wins ties."""
        top: EliteEntry | None = None
        for entry in self.entries:
            if entry is None or not entry.valid:
                continue
            if top is None or better(entry.score, top.score, self.direction):
                top = entry
        return top

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "direction": self.direction.to_dict(),
            "entries": [e.to_dict() if e else None for e in self.entries],
        }

    @classmethod
    def from_dict(cls, raw: dict, resolve: Callable[[str], ArchiveRef]) -> "ElitePool":
        pool = cls(raw["size"], MetricDirection.from_dict(raw["direction"]))
        pool.entries = [
            EliteEntry.from_dict(e, resolve) if e is not None else None for e in raw["entries"]
        ]
        return pool


@dataclass(frozen=True)
class AgentSeed:
    """Everything one run starts from: a task operator, the parent
    archives it may build on, and task-template parameters."""

    operator: Operator
    slot: int
    parents: tuple[ArchiveRef, ...]
    context_params: dict

    def __post_init__(self):
        if self.operator is Operator.INITIAL and self.parents:
            raise ConfigurationError("parents", "initial seeds take no parents")
        if self.operator is Operator.MERGE and len(self.parents) != 2:
            raise ConfigurationError("parents", f"merge needs 2 parents, got {len(self.parents)}")
        if self.operator not in (Operator.INITIAL, Operator.MERGE) and len(self.parents) < 1:
            raise ConfigurationError("parents", f"{self.operator} needs at least one parent")

    def to_dict(self) -> dict:
        return {
            "operator": self.operator.value,
            "slot": self.slot,
            "parents": [p.to_dict() for p in self.parents],
            "context_params": dict(self.context_params),
        }


@dataclass(frozen=True)
class TournamentRecord:
    """Outcome of one slot's 1:1 contest against its previous elite."""

    iteration: int
    slot: int
    operator: Operator
    parent_score: float | None
    child_score: float | None
    delta: float | None
    child_won: bool
    child_valid: bool
    child_id: str | None = None
    parent_ids: tuple[str, ...] = ()

    def to_event(self) -> dict:
        return {
            "type": "tournament",
            "iteration": self.iteration,
            "slot": self.slot,
            "operator": self.operator.value,
            "parent_score": self.parent_score,
            "child_score": self.child_score,
            "delta": self.delta,
            "child_won": self.child_won,
            "child_valid": self.child_valid,
            "child_id": self.child_id,
            "parent_ids": list(self.parent_ids),
        }


@dataclass(frozen=True)
class StoppingState:
    """Best-so-far tracker with a stagnation budget."""

    threshold: float
    patience: int
    max_iterations: int
    best_so_far: float | None = None
    stagnation_count: int = 0

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "patience": self.patience,
            "max_iterations": self.max_iterations,
            "best_so_far": self.best_so_far,
            "stagnation_count": self.stagnation_count,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "StoppingState":
        return cls(**raw)


def update_stopping(
    state: StoppingState,
    iteration_best: float | None,
    iteration: int,
    direction: MetricDirection,
) -> tuple[StoppingState, bool]:
    """Advance the stopping tracker after one iteration.

    The best-so-far only moves on a strict improvement above the
    threshold; anything else counts one stagnation.  Returns the new
    state and whether to stop (stagnation reached patience, or the
    iteration budget is spent).
    """
    if iteration_best is None:
        new = replace(state, stagnation_count=state.stagnation_count + 1)
    elif state.best_so_far is None:
        new = replace(state, best_so_far=iteration_best, stagnation_count=0)
    else:
        gain = improvement(iteration_best, state.best_so_far, direction)
        if gain > state.threshold:
            new = replace(state, best_so_far=iteration_best, stagnation_count=0)
        else:
            new = replace(state, stagnation_count=state.stagnation_count + 1)
    stop = new.stagnation_count >= state.patience or iteration >= state.max_iterations
    return new, stop


def select_parents(
    operator: Operator,
    pool_entries: list[EliteEntry | None],
    slot: int,
    rng: "random.Random",
    continue_max_parents: int = 1,
) -> list[EliteEntry]:
    """Pick parent elites for one seed.

    The slot's own elite always comes first.  Merge adds one distinct
    elite drawn uniformly from the other slots; continue adds
    (max_parents - 1) distinct random elites, capped by availability.
    """
    if operator is Operator.INITIAL:
        return []
    own = pool_entries[slot]
    if own is None or not own.valid:
        raise ConfigurationError("pool", f"slot {slot} has no valid elite to build on")
    parents = [own]
    others = [e for e in pool_entries if e is not None and e.valid and e.slot != slot]
    if operator is Operator.MERGE:
        if len(pool_entries) < 2:
            raise ConfigurationError(
                "population_size", "merge needs a distinct second parent; population is 1"
            )
        if not others:
            raise ConfigurationError("pool", "merge found no valid elite in any other slot")
        parents.append(others[rng.randrange(len(others))])
    elif operator is Operator.CONTINUE:
        extra = min(continue_max_parents - 1, len(others))
        if extra > 0:
            parents.extend(rng.sample(others, extra))
    return parents


def plan_iteration(
    pool_entries: list[EliteEntry | None],
    hedge_state: HedgeState,
    iteration: int,
    config: RunConfig,
) -> list[AgentSeed]:
    """Build one seed per slot for the coming iteration.

    Iteration 1 seeds every slot with a fresh initial task.  Later
    iterations sample an operator per slot from the allocator, using a
    random stream derived from (master seed, iteration, slot) so the
    plan is independent of scheduling and resume points.  A slot whose
    elite is the empty sentinel replans as initial, as does a merge
    that cannot find a valid partner slot.
    """
    context = {"num_training_runs": config.num_training_runs, "iteration": iteration}
    if iteration == 1:
        return [
            AgentSeed(Operator.INITIAL, slot, (), dict(context))
            for slot in range(config.population_size)
        ]
    seeds = []
    for slot in range(config.population_size):
        rng = derive_rng(config.master_seed, "plan", iteration, slot)
        op = hedgemod.sample_task(hedge_state, rng)
        own = pool_entries[slot]
        if op is not Operator.INITIAL:
            if own is None or not own.valid:
                op = Operator.INITIAL
            elif op is Operator.MERGE and not any(
                e is not None and e.valid and e.slot != slot for e in pool_entries
            ):
                op = Operator.INITIAL
        entries = select_parents(op, pool_entries, slot, rng, config.continue_parents_max)
        seeds.append(
            AgentSeed(op, slot, tuple(e.archive for e in entries), dict(context))
        )
    return seeds


def resolve_tournament(
    candidate: EliteEntry | None,
    incumbent: EliteEntry | None,
    direction: MetricDirection,
    *,
    iteration: int,
    operator: Operator,
    parent_ids: tuple[str, ...] = (),
    slot: int,
) -> tuple[EliteEntry, TournamentRecord]:
    """Settle one slot: candidate child vs the previous elite.

    candidate None means the child run produced nothing verifiable; it
    cannot win.  With no incumbent (iteration 1) the child installs
    unconditionally, an invalid child leaving the empty sentinel.  A
    sentinel incumbent is beaten by any valid child.  Otherwise the
    child must be strictly better; ties keep the incumbent.
    """
    child_valid = candidate is not None
    child_score = candidate.score if child_valid else None
    parent_score = incumbent.score if incumbent is not None else None

    if incumbent is None:
        winner = candidate if child_valid else EliteEntry(slot, None, None, iteration, operator)
        won = child_valid
        delta = None
    elif parent_score is None:
        winner = candidate if child_valid else incumbent
        won = child_valid
        delta = None
    else:
        delta = improvement(child_score, parent_score, direction) if child_valid else None
        won = child_valid and better(child_score, parent_score, direction)
        winner = candidate if won else incumbent

    record = TournamentRecord(
        iteration=iteration,
        slot=slot,
        operator=operator,
        parent_score=parent_score,
        child_score=child_score,
        delta=delta,
        child_won=won,
        child_valid=child_valid,
        child_id=candidate.archive.id if child_valid and candidate.archive else None,
        parent_ids=parent_ids,
    )
    return winner, record


class EvolutionEngine:
    """Drives a run end to end over a persistent store.

    Construct through start() for a fresh output root or resume() to
    continue from the last checkpoint.  step() executes one iteration
    and persists; run() loops until the stopping rule fires.
    """

    def __init__(
        self,
        config: RunConfig,
        executor,
        store: RunStore,
        event_log: EventLog,
        pool: ElitePool,
        hedge_state: HedgeState,
        stopping: StoppingState,
        iteration: int,
        stopped: bool = False,
    ):
        self.config = config
        self.executor = executor
        self.store = store
        self.events = event_log
        self.pool = pool
        self.hedge_state = hedge_state
        self.stopping = stopping
        self.iteration = iteration  # last completed iteration
        self.stopped = stopped

    @classmethod
    def start(cls, config: RunConfig, executor, output_root: Path) -> "EvolutionEngine":
        config.validate()
        store = RunStore.create(Path(output_root))
        store.write_config(config.to_dict())
        direction = MetricDirection(config.higher_is_better)
        return cls(
            config=config,
            executor=executor,
            store=store,
            event_log=EventLog(store.events_path),
            pool=ElitePool(config.population_size, direction),
            hedge_state=hedgemod.new_state(config.hedge_config()),
            stopping=StoppingState(
                threshold=config.improvement_threshold,
                patience=config.patience,
                max_iterations=config.max_iterations,
            ),
            iteration=0,
        )

    @classmethod
    def resume(cls, output_root: Path, executor=None) -> "EvolutionEngine":
        store = RunStore.open(Path(output_root))
        config = RunConfig.from_dict(store.read_config())
        ckpt = load_checkpoint(store.checkpoint_path)
        if ckpt is None:
            raise CorruptStateError("no checkpoint found; nothing to resume")
        store.prune_after_iteration(ckpt.iteration)
        event_log = EventLog(store.events_path)
        event_log.truncate_to(ckpt.event_log_offset)
        if executor is None:
            from .executors import build_executor

            executor = build_executor(config)
        try:
            pool = ElitePool.from_dict(ckpt.pool, store.resolve_archive)
            hedge_state = HedgeState.from_dict(ckpt.hedge)
            stopping = StoppingState.from_dict(ckpt.stopping)
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptStateError(f"checkpoint state unreadable: {exc}") from exc
        return cls(
            config=config,
            executor=executor,
            store=store,
            event_log=event_log,
            pool=pool,
            hedge_state=hedge_state,
            stopping=stopping,
            iteration=ckpt.iteration,
            stopped=ckpt.stopped,
        )

    # -- one iteration ------------------------------------------------

    def step(self) -> bool:
        """Run one iteration; returns True when the run should stop."""
        if self.stopped:
            return True
        t = self.iteration + 1
        previous = self.pool.snapshot()
        seeds = plan_iteration(previous, self.hedge_state, t, self.config)
        outcomes = self._dispatch(seeds, t)

        records: list[TournamentRecord] = []
        gains: list[ObservedGain] = []
        direction = self.pool.direction
        for seed, outcome in zip(seeds, outcomes):
            candidate = self._admit(seed, outcome, t)
            incumbent = previous[seed.slot]
            winner, record = resolve_tournament(
                candidate,
                incumbent,
                direction,
                iteration=t,
                operator=seed.operator,
                parent_ids=tuple(p.id for p in seed.parents),
                slot=seed.slot,
            )
            self.pool.entries[seed.slot] = winner
            records.append(record)
            if record.delta is not None:
                gains.append(ObservedGain(seed.operator, record.delta))

        if t > 1:
            self.hedge_state = hedgemod.apply_update(self.hedge_state, gains)

        best = self.pool.best()
        iteration_best = best.score if best else None
        self.stopping, stop = update_stopping(self.stopping, iteration_best, t, direction)

        for record in records:
            self.events.append(record.to_event())
        probs = hedgemod.sampling_probabilities(self.hedge_state)
        self.events.append(
            {
                "type": "hedge",
                "iteration": t,
                "probabilities": {op.value: p for op, p in probs.items()},
            }
        )
        self.events.append(
            {
                "type": "stopping",
                "iteration": t,
                "iteration_best": iteration_best,
                "best_so_far": self.stopping.best_so_far,
                "stagnation": self.stopping.stagnation_count,
                "stop": stop,
            }
        )

        self.iteration = t
        self.stopped = stop
        self._checkpoint()
        return stop

    def run(self, stop_after_iteration: int | None = None) -> EliteEntry | None:
        """Loop step() to completion; optionally halt early without
        marking the run stopped (test hook for interrupt scenarios)."""
        while not self.stopped:
            self.step()
            if stop_after_iteration is not None and self.iteration >= stop_after_iteration:
                break
        return self.pool.best()

    # -- internals ----------------------------------------------------

    def _dispatch(self, seeds: list[AgentSeed], iteration: int):
        """Materialize and execute every slot, workers in parallel.

        Results come back in slot order.  Executor failures of any kind
        are contained to their slot as an invalid child.
        """
        rules = CurationRules(
            max_file_bytes=self.config.max_file_bytes,
            excluded_globs=tuple(self.config.excluded_globs),
        )
        data_source = Path(self.config.data_path) if self.config.data_path else None

        def run_slot(seed: AgentSeed):
            workspace = self.store.workspace_path(iteration, seed.slot)
            materialize_seed(
                seed,
                workspace,
                data_source=data_source,
                provisioning=self.config.data_provisioning,
                rules=rules,
            )
            try:
                return workspace, self.executor.execute(seed, workspace)
            except Exception as exc:  # transport failure: invalid child, not a crash
                logger.warning("slot %d executor failure: %s", seed.slot, exc)
                return workspace, None

        with ThreadPoolExecutor(max_workers=self.config.workers) as tpe:
            return list(tpe.map(run_slot, seeds))

    def _admit(self, seed: AgentSeed, dispatched, iteration: int) -> EliteEntry | None:
        """Archive a verified outcome and shape it into a candidate entry."""
        workspace, outcome = dispatched
        if outcome is None or not outcome.verified or outcome.score is None:
            return None
        if not math.isfinite(outcome.score):
            return None
        archive = self.store.archive_run(
            workspace=workspace,
            outcome=outcome,
            seed_info=seed.to_dict(),
            iteration=iteration,
            slot=seed.slot,
        )
        return EliteEntry(
            slot=seed.slot,
            score=outcome.score,
            archive=archive,
            origin_iteration=iteration,
            origin_operator=seed.operator,
            parent_ids=tuple(p.id for p in seed.parents),
        )

    def _checkpoint(self) -> None:
        ckpt = Checkpoint(
            iteration=self.iteration,
            pool=self.pool.to_dict(),
            hedge=self.hedge_state.to_dict(),
            stopping=self.stopping.to_dict(),
            rng={"master_seed": self.config.master_seed, "next_iteration": self.iteration + 1},
            event_log_offset=self.events.size(),
            stopped=self.stopped,
        )
        save_checkpoint(self.store.checkpoint_path, ckpt)


def run_evolution(config: RunConfig, executor, output_root: Path) -> EliteEntry | None:
    """Convenience wrapper: fresh engine, run to completion, return best."""
    engine = EvolutionEngine.start(config, executor, output_root)
    return engine.run()
