"""Two-stage context compression for long agent transcripts.

Stage one summarizes pending messages into a compressed cache (short
messages are copied through; a summary is only kept when it is
actually shorter).  Stage two picks a rendering status per message
group to fit a token target: a sliding window drops the oldest groups
outright, the newest groups are pinned to their original text, and the
rest degrade oldest-first through original -> compressed -> truncated
-> dropped until the reconstructed context fits.

Token counting is pluggable.  The default segments on whitespace and
punctuation, which is deterministic and dependency-free; any callable
str -> int (for example a real BPE tokenizer) can be swapped in.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Callable, Iterable

TokenCounter = Callable[[str], int]
Summarizer = Callable[[str], str]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

#: Rendering of a truncated message: this many leading tokens survive.
TRUNCATE_HEAD_TOKENS = 64
TRUNCATE_MARKER = " [truncated]"

ROLES = ("system", "human", "ai", "tool")


def count_tokens(text: str) -> int:
    """Deterministic whitespace-and-punctuation token count."""
    return len(_TOKEN_RE.findall(text))


def truncate_text(text: str, head_tokens: int = TRUNCATE_HEAD_TOKENS) -> str:
    """Keep the first head_tokens tokens and mark the elision."""
    spans = list(_TOKEN_RE.finditer(text))
    if len(spans) <= head_tokens:
        return text
    cut = spans[head_tokens - 1].end() if head_tokens > 0 else 0
    return text[:cut] + TRUNCATE_MARKER


class SelectionStatus(str, Enum):
    ORIGINAL = "original"
    COMPRESSED = "compressed"
    TRUNCATE = "truncate"
    DROP = "drop"


class CompressionStatus(IntEnum):
    PENDING = 0
    COMPRESSED = 1


@dataclass(frozen=True)
class Message:
    """One transcript entry. token_count always reflects the configured
    counter applied to the text plus any tool-call arguments."""

    id: int
    role: str
    text: str
    tool_call_args: dict[str, str] | None
    token_count: int

    @classmethod
    def create(
        cls,
        id: int,
        role: str,
        text: str,
        tool_call_args: dict[str, str] | None = None,
        counter: TokenCounter = count_tokens,
    ) -> "Message":
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        return cls(
            id=id,
            role=role,
            text=text,
            tool_call_args=dict(tool_call_args) if tool_call_args else None,
            token_count=_payload_tokens(text, tool_call_args, counter),
        )

    @property
    def is_tool_call(self) -> bool:
        return self.role == "ai" and self.tool_call_args is not None


def _payload_tokens(
    text: str, tool_call_args: dict[str, str] | None, counter: TokenCounter
) -> int:
    total = counter(text)
    for key, value in (tool_call_args or {}).items():
        total += counter(key) + counter(value)
    return total


@dataclass(frozen=True)
class CompressedForm:
    """Cached compact rendering of one message; never longer than the
    original."""

    text: str
    tool_call_args: dict[str, str] | None
    token_count: int


@dataclass(frozen=True)
class MessageGroup:
    """Atomic selection unit: either a single message, or an AI
    tool-call message fused with its tool responses."""

    index: int
    member_ids: tuple[int, ...]


@dataclass(frozen=True)
class BudgetConfig:
    trigger_tokens: int = 100_000
    target_tokens: int = 20_000
    recent_groups_protected: int = 5
    window_groups: int = 50
    min_compress_tokens: int = 50
    periodic_interval_steps: int = 100
    batch_size: int = 2
    truncate_head_tokens: int = TRUNCATE_HEAD_TOKENS

    def __post_init__(self):
        if self.target_tokens >= self.trigger_tokens:
            raise ValueError("target_tokens must be below trigger_tokens")
        if self.recent_groups_protected > self.window_groups:
            raise ValueError("recent_groups_protected cannot exceed window_groups")
        for name in (
            "trigger_tokens",
            "target_tokens",
            "window_groups",
            "batch_size",
            "periodic_interval_steps",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


class MessageHistory:
    """Ordered transcript plus per-message compression state."""

    def __init__(self, counter: TokenCounter = count_tokens):
        self.counter = counter
        self.messages: list[Message] = []
        self.compression_status: dict[int, CompressionStatus] = {}
        self.cache: dict[int, CompressedForm] = {}
        self.diagnostics: list[str] = []

    def add(
        self,
        role: str,
        text: str,
        tool_call_args: dict[str, str] | None = None,
        id: int | None = None,
    ) -> Message:
        msg_id = id if id is not None else len(self.messages)
        if any(m.id == msg_id for m in self.messages):
            raise ValueError(f"duplicate message id {msg_id!r}")
        msg = Message.create(msg_id, role, text, tool_call_args, self.counter)
        self.messages.append(msg)
        self.compression_status[msg.id] = CompressionStatus.PENDING
        return msg

    def get(self, msg_id: int) -> Message:
        for m in self.messages:
            if m.id == msg_id:
                return m
        raise KeyError(msg_id)

    def total_tokens(self) -> int:
        return sum(m.token_count for m in self.messages)

    def pending_ids(self) -> list[int]:
        return [
            m.id
            for m in self.messages
            if self.compression_status[m.id] is CompressionStatus.PENDING
        ]


def group_messages(history: MessageHistory) -> list[MessageGroup]:
    """Partition the transcript into atomic groups, in order.

    An AI message carrying tool-call args absorbs the run of tool
    messages that follows it.  A tool message with no such predecessor
    is malformed input; it becomes its own group with a diagnostic.
    """
    groups: list[MessageGroup] = []
    members: list[int] = []
    absorbing = False

    def flush():
        nonlocal members, absorbing
        if members:
            groups.append(MessageGroup(index=len(groups), member_ids=tuple(members)))
        members = []
        absorbing = False

    for msg in history.messages:
        if msg.role == "tool":
            if absorbing:
                members.append(msg.id)
            else:
                history.diagnostics.append(f"orphan tool message {msg.id}")
                flush()
                members = [msg.id]
                flush()
            continue
        flush()
        members = [msg.id]
        absorbing = msg.is_tool_call
        if not absorbing:
            flush()
    flush()
    return groups


def compress_pending(
    history: MessageHistory,
    summarizer: Summarizer,
    budget: BudgetConfig,
    pacer: Callable[[], None] | None = None,
) -> list[str]:
    """Stage one: fill the compressed cache for every pending message.

    Messages under min_compress_tokens are copied through verbatim.
    Longer ones get a summary, kept only if strictly shorter; long
    tool-call argument values are summarized per key under the same
    rule.  Work proceeds in batches of batch_size with an optional
    pacing hook between batches (rate limiting lives there).  A
    summarizer failure leaves its message pending and is reported, not
    raised.
    """
    diagnostics: list[str] = []
    pending = history.pending_ids()
    for start in range(0, len(pending), budget.batch_size):
        if start > 0 and pacer is not None:
            pacer()
        for msg_id in pending[start : start + budget.batch_size]:
            msg = history.get(msg_id)
            try:
                form = _compress_one(msg, summarizer, budget, history.counter)
            except Exception as exc:
                diagnostics.append(f"summarizer failed on {msg_id}: {exc}")
                continue
            history.cache[msg_id] = form
            history.compression_status[msg_id] = CompressionStatus.COMPRESSED
    history.diagnostics.extend(diagnostics)
    return diagnostics


def _compress_one(
    msg: Message, summarizer: Summarizer, budget: BudgetConfig, counter: TokenCounter
) -> CompressedForm:
    if msg.token_count < budget.min_compress_tokens:
        return CompressedForm(msg.text, msg.tool_call_args, msg.token_count)
    text = msg.text
    candidate = summarizer(msg.text)
    if counter(candidate) < counter(text):
        text = candidate
    args = None
    if msg.tool_call_args is not None:
        args = {}
        for key, value in msg.tool_call_args.items():
            if counter(value) >= budget.min_compress_tokens:
                shorter = summarizer(value)
                args[key] = shorter if counter(shorter) < counter(value) else value
            else:
                args[key] = value
    return CompressedForm(text, args, _payload_tokens(text, args, counter))


# -- stage two: selection --------------------------------------------


@dataclass(frozen=True)
class SelectionResult:
    statuses: tuple[SelectionStatus, ...]
    total_tokens: int
    over_budget: bool


def message_status_tokens(
    history: MessageHistory, msg: Message, status: SelectionStatus, budget: BudgetConfig
) -> int:
    """Token cost of one message under a rendering status; exactly what
    reconstruct_context will emit."""
    if status is SelectionStatus.DROP:
        return 0
    if status is SelectionStatus.ORIGINAL:
        return msg.token_count
    if status is SelectionStatus.COMPRESSED:
        form = history.cache.get(msg.id)
        return form.token_count if form is not None else msg.token_count
    return history.counter(truncate_text(msg.text, budget.truncate_head_tokens))


def group_status_tokens(
    history: MessageHistory, group: MessageGroup, status: SelectionStatus, budget: BudgetConfig
) -> int:
    return sum(
        message_status_tokens(history, history.get(mid), status, budget)
        for mid in group.member_ids
    )


def _group_pending(history: MessageHistory, group: MessageGroup) -> bool:
    return any(
        history.compression_status[mid] is CompressionStatus.PENDING for mid in group.member_ids
    )


def select_statuses(
    history: MessageHistory, groups: list[MessageGroup], budget: BudgetConfig
) -> SelectionResult:
    """Stage two: pick a status per group to fit the token target.

    In order: groups older than the newest window_groups are dropped;
    the newest recent_groups_protected groups are pinned original; the
    oldest surviving group is pinned non-drop (it may still compress or
    truncate).  The rest degrade oldest-first in stage passes
    (compressed, then truncate, then drop), one group at a time,
    re-checking the budget after each move.  A stage move is applied
    only when it strictly shrinks that group's render: truncating a
    group of short messages saves nothing, so the walk skips it and
    reaches the drop stage instead.  Groups still holding pending
    messages skip the compressed stage, since their cache does not
    exist yet.  If even maximal degradation stays over target, the
    result is flagged over budget.
    """
    n = len(groups)
    statuses = [SelectionStatus.ORIGINAL] * n
    for i in range(max(0, n - budget.window_groups)):
        statuses[i] = SelectionStatus.DROP
    survivors = list(range(max(0, n - budget.window_groups), n))
    if not survivors:
        return SelectionResult(tuple(statuses), 0, False)
    first_kept = survivors[0]
    # guard the n=0 slice: [-0:] would pin everything
    n_protected = budget.recent_groups_protected
    protected = set(survivors[-n_protected:]) if n_protected > 0 else set()
    degradable = [i for i in survivors if i not in protected]

    def tokens(i: int, status: SelectionStatus) -> int:
        return group_status_tokens(history, groups[i], status, budget)

    def total() -> int:
        return sum(tokens(i, statuses[i]) for i in survivors)

    if total() <= budget.target_tokens:
        return SelectionResult(tuple(statuses), total(), False)

    for stage in (SelectionStatus.COMPRESSED, SelectionStatus.TRUNCATE, SelectionStatus.DROP):
        for i in degradable:
            if stage is SelectionStatus.COMPRESSED and _group_pending(history, groups[i]):
                continue
            if stage is SelectionStatus.DROP and i == first_kept:
                continue
            if tokens(i, stage) >= tokens(i, statuses[i]):
                continue
            statuses[i] = stage
            if total() <= budget.target_tokens:
                return SelectionResult(tuple(statuses), total(), False)

    final = total()
    return SelectionResult(tuple(statuses), final, final > budget.target_tokens)


@dataclass(frozen=True)
class RenderedMessage:
    id: int
    role: str
    text: str
    tool_call_args: dict[str, str] | None
    status: SelectionStatus


def reconstruct_context(
    history: MessageHistory,
    groups: list[MessageGroup],
    statuses: Iterable[SelectionStatus],
    budget: BudgetConfig,
) -> list[RenderedMessage]:
    """Emit the working context in transcript order.

    Dropped groups vanish; truncated messages keep their head plus a
    marker and shed their tool args.  The summed token count of the
    result is exactly what select_statuses optimized.
    """
    rendered: list[RenderedMessage] = []
    for group, status in zip(groups, statuses):
        if status is SelectionStatus.DROP:
            continue
        for mid in group.member_ids:
            msg = history.get(mid)
            if status is SelectionStatus.ORIGINAL:
                rendered.append(
                    RenderedMessage(msg.id, msg.role, msg.text, msg.tool_call_args, status)
                )
            elif status is SelectionStatus.COMPRESSED:
                form = history.cache.get(mid)
                text = form.text if form is not None else msg.text
                args = form.tool_call_args if form is not None else msg.tool_call_args
                rendered.append(RenderedMessage(msg.id, msg.role, text, args, status))
            else:
                rendered.append(
                    RenderedMessage(
                        msg.id,
                        msg.role,
                        truncate_text(msg.text, budget.truncate_head_tokens),
                        None,
                        status,
                    )
                )
    return rendered


def rendered_token_total(
    history: MessageHistory, rendered: list[RenderedMessage]
) -> int:
    return sum(_payload_tokens(r.text, r.tool_call_args, history.counter) for r in rendered)


def maybe_trigger(
    active_tokens: int, steps_since_compression: int, budget: BudgetConfig
) -> bool:
    """Compression fires past the token trigger or on the periodic
    step schedule, whichever comes first."""
    return (
        active_tokens > budget.trigger_tokens
        or steps_since_compression >= budget.periodic_interval_steps
    )


def head_fraction_summarizer(fraction: float = 0.1) -> Summarizer:
    """Built-in deterministic summarizer: keep the leading fraction of
    the text.  Stands in where no language model is wired up."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")

    def summarize(text: str) -> str:
        keep = max(1, int(len(text) * fraction))
        return text[:keep]

    return summarize


# -- transcript files -------------------------------------------------


def load_transcript(path: Path, counter: TokenCounter = count_tokens) -> MessageHistory:
    """Read a JSONL transcript: one object per line with role, text,
    optional tool_call_args and id."""
    history = MessageHistory(counter)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(raw, dict) or "role" not in raw or "text" not in raw:
                raise ValueError(f"{path}:{lineno}: need role and text fields")
            args = raw.get("tool_call_args")
            if args is not None:
                args = {str(k): str(v) for k, v in args.items()}
            msg_id = raw.get("id")
            if msg_id is not None and not isinstance(msg_id, int):
                raise ValueError(f"{path}:{lineno}: id must be an integer")
            history.add(raw["role"], raw["text"], args, id=msg_id)
    return history


def write_selection_sidecar(
    path: Path, groups: list[MessageGroup], result: SelectionResult
) -> None:
    payload = {
        "schema_version": 1,
        "over_budget": result.over_budget,
        "total_tokens": result.total_tokens,
        "groups": [
            {"index": g.index, "member_ids": list(g.member_ids), "status": s.value}
            for g, s in zip(groups, result.statuses)
        ],
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_rendered_context(path: Path, rendered: list[RenderedMessage]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rendered:
            row = {"id": r.id, "role": r.role, "text": r.text, "status": r.status.value}
            if r.tool_call_args is not None:
                row["tool_call_args"] = r.tool_call_args
            fh.write(json.dumps(row, sort_keys=True) + "\n")
