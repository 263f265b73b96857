"""Experiment lifecycle: create, open a batch, record its rewards, repeat.

The state machine is ``(OPEN -> BATCH_PENDING -> OPEN)* -> CLOSED``. All
operations are functional: they validate first, then return a new
``ExperimentState`` and never touch the one passed in, so a failed call
leaves nothing half-applied.

Posteriors are frozen while a batch is pending. When the batch is closed,
its clicks and non-clicks are folded into the posterior, counting only the
allocation sources the policy lets TS see.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .allocation import AllocationPolicy, AllocationSource, assign_batch
from .errors import InvalidTransition, SnapshotError, ValidationError
from .posterior import BetaParams, batch_fold, check_reward, init_prior

SNAPSHOT_FORMAT = "batchbandit.experiment"
SNAPSHOT_VERSION = 1
SOURCES = (AllocationSource.UNIFORM, AllocationSource.TS)


class Status(str, enum.Enum):
    OPEN = "open"
    BATCH_PENDING = "batch-pending"
    CLOSED = "closed"


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    arm_labels: tuple[str, ...]
    prior: tuple[float, float] = (1.0, 1.0)
    policy: AllocationPolicy = field(default_factory=AllocationPolicy.thompson)
    batches_planned: int = 4

    def __post_init__(self) -> None:
        labels = tuple(str(a) for a in self.arm_labels)
        object.__setattr__(self, "arm_labels", labels)
        object.__setattr__(self, "prior", (float(self.prior[0]), float(self.prior[1])))
        if not self.id or not isinstance(self.id, str):
            raise ValidationError("experiment id must be a non-empty string")
        if len(labels) < 2:
            raise ValidationError(f"need at least 2 arms, got {len(labels)}")
        if len(set(labels)) != len(labels):
            raise ValidationError(f"arm labels must be unique: {labels}")
        if int(self.batches_planned) != self.batches_planned or self.batches_planned < 1:
            raise ValidationError(f"batches_planned must be >= 1, got {self.batches_planned}")
        BetaParams(*self.prior)

    @property
    def n_arms(self) -> int:
        return len(self.arm_labels)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "arm_labels": list(self.arm_labels),
            "prior": list(self.prior),
            "policy": self.policy.to_dict(),
            "batches_planned": self.batches_planned,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> ExperimentConfig:
        return cls(
            id=doc["id"],
            arm_labels=tuple(doc["arm_labels"]),
            prior=tuple(doc.get("prior", (1.0, 1.0))),
            policy=AllocationPolicy.from_dict(doc["policy"]),
            batches_planned=int(doc.get("batches_planned", 4)),
        )


@dataclass(frozen=True)
class AssignmentRecord:
    participant_id: str
    batch: int  # 1-based batch number
    arm: int  # 0-based arm index
    source: AllocationSource
    reward: int | None = None

    def to_dict(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "batch": self.batch,
            "arm": self.arm,
            "source": self.source.value,
            "reward": self.reward,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> AssignmentRecord:
        reward = doc["reward"]
        return cls(
            participant_id=str(doc["participant_id"]),
            batch=int(doc["batch"]),
            arm=int(doc["arm"]),
            source=AllocationSource(doc["source"]),
            reward=None if reward is None else check_reward(reward),
        )


@dataclass
class ExperimentState:
    config: ExperimentConfig
    seed: int
    rng_state: dict
    posteriors: list[BetaParams]
    # counts[source][arm] == [assigned, clicked]
    counts: dict[AllocationSource, list[list[int]]]
    batch_index: int = 0  # number of closed batches
    status: Status = Status.OPEN
    records: list[AssignmentRecord] = field(default_factory=list)

    @property
    def pending(self) -> list[AssignmentRecord]:
        if self.status is not Status.BATCH_PENDING:
            return []
        return [r for r in self.records if r.batch == self.batch_index + 1]

    def assigned_per_arm(self) -> list[int]:
        return [sum(self.counts[s][k][0] for s in SOURCES) for k in range(self.config.n_arms)]

    def rng(self) -> np.random.Generator:
        return seeding.load_state(self.rng_state)


def create_experiment(config: ExperimentConfig, seed: int | None = None) -> ExperimentState:
    if seed is None:
        seed = seeding.fresh_seed()
    seed = int(seed)
    if seed < 0:
        raise ValidationError("seed must be non-negative")
    k = config.n_arms
    return ExperimentState(
        config=config,
        seed=seed,
        rng_state=seeding.dump_state(seeding.stream(seed, seeding.ASSIGNMENT)),
        posteriors=init_prior(k, *config.prior),
        counts={s: [[0, 0] for _ in range(k)] for s in SOURCES},
    )


def open_batch(
    state: ExperimentState, participants: Iterable[str], rng: np.random.Generator | None = None
) -> tuple[ExperimentState, list[AssignmentRecord]]:
    """Assign every participant in the next batch against the current posterior.

    Without ``rng`` the experiment's own stream is used and advanced, which
    is what makes a stored experiment replayable.
    """
    if state.status is Status.BATCH_PENDING:
        raise InvalidTransition(f"batch {state.batch_index + 1} is already open")
    if state.status is Status.CLOSED or state.batch_index >= state.config.batches_planned:
        raise InvalidTransition(f"all {state.config.batches_planned} planned batches are done")
    ids = [str(p) for p in participants]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate participant ids in batch")
    seen = {r.participant_id for r in state.records}
    clash = [p for p in ids if p in seen]
    if clash:
        raise ValidationError(f"participants already assigned in this experiment: {clash[:5]}")

    own_stream = rng is None
    if own_stream:
        rng = state.rng()
    picks = assign_batch(state.posteriors, state.config.policy, len(ids), rng)
    batch = state.batch_index + 1
    assignments = [AssignmentRecord(pid, batch, arm, src) for pid, (arm, src) in zip(ids, picks)]

    counts = _copy_counts(state.counts)
    for rec in assignments:
        counts[rec.source][rec.arm][0] += 1
    new = dataclasses.replace(
        state,
        rng_state=seeding.dump_state(rng) if own_stream else dict(state.rng_state),
        posteriors=list(state.posteriors),
        counts=counts,
        status=Status.BATCH_PENDING,
        records=state.records + assignments,
    )
    return new, assignments


def _copy_counts(counts):
    return {s: [list(cell) for cell in counts[s]] for s in SOURCES}


def _reward_items(rewards) -> list[tuple[str, int]]:
    items = list(rewards.items()) if isinstance(rewards, Mapping) else list(rewards)
    out = []
    seen = set()
    for pid, value in items:
        pid = str(pid)
        if pid in seen:
            raise ValidationError(f"duplicate reward for participant {pid!r}")
        seen.add(pid)
        out.append((pid, check_reward(value)))
    return out


def record_rewards(state: ExperimentState, rewards: Mapping[str, int] | Iterable[tuple[str, int]]) -> ExperimentState:
    """Close the pending batch.

    Participants missing from ``rewards`` count as 0 (no click).
    """
    if state.status is not Status.BATCH_PENDING:
        raise InvalidTransition("no batch is pending")
    items = _reward_items(rewards)
    batch = state.batch_index + 1
    pending_ids = {r.participant_id for r in state.pending}
    unknown = [pid for pid, _ in items if pid not in pending_ids]
    if unknown:
        raise ValidationError(f"participants not in the pending batch: {unknown[:5]}")
    given = dict(items)

    k = state.config.n_arms
    delta = {s: [[0, 0] for _ in range(k)] for s in SOURCES}
    records = []
    for rec in state.records:
        if rec.batch == batch:
            rec = dataclasses.replace(rec, reward=given.get(rec.participant_id, 0))
            delta[rec.source][rec.arm][0] += 1
            delta[rec.source][rec.arm][1] += rec.reward
        records.append(rec)
    counts = _copy_counts(state.counts)
    for s in SOURCES:
        for arm in range(k):
            counts[s][arm][1] += delta[s][arm][1]

    visible = state.config.policy.visible_sources()
    posteriors = list(state.posteriors)
    for arm in range(k):
        n = sum(delta[s][arm][0] for s in visible)
        c = sum(delta[s][arm][1] for s in visible)
        posteriors[arm] = batch_fold(posteriors[arm], c, n - c)

    return dataclasses.replace(
        state,
        rng_state=dict(state.rng_state),
        posteriors=posteriors,
        counts=counts,
        batch_index=batch,
        status=Status.CLOSED if batch >= state.config.batches_planned else Status.OPEN,
        records=records,
    )


def visible_posteriors(
    config: ExperimentConfig, records: Iterable[AssignmentRecord], through_batch: int
) -> list[BetaParams]:
    """Posterior after ``through_batch`` closed batches, rebuilt from records."""
    visible = config.policy.visible_sources()
    k = config.n_arms
    n = [0] * k
    c = [0] * k
    for r in records:
        if r.batch <= through_batch and r.source in visible and r.reward is not None:
            n[r.arm] += 1
            c[r.arm] += r.reward
    prior = BetaParams(*config.prior)
    return [batch_fold(prior, c[i], n[i] - c[i]) for i in range(k)]


def check_invariants(state: ExperimentState) -> None:
    """Raise ``SnapshotError`` if the state's bookkeeping is inconsistent."""
    cfg = state.config
    k = cfg.n_arms
    if len(state.posteriors) != k or any(len(state.counts[s]) != k for s in SOURCES):
        raise SnapshotError("arm count mismatch")
    if not 0 <= state.batch_index <= cfg.batches_planned:
        raise SnapshotError("batch index out of range")
    closed = state.batch_index >= cfg.batches_planned
    if (state.status is Status.CLOSED) != closed:
        raise SnapshotError(f"status {state.status.value} inconsistent with batch index")
    tally = {s: [[0, 0] for _ in range(k)] for s in SOURCES}
    ids = set()
    for r in state.records:
        if r.participant_id in ids:
            raise SnapshotError(f"participant {r.participant_id!r} recorded twice")
        ids.add(r.participant_id)
        if not 0 <= r.arm < k:
            raise SnapshotError("record arm out of range")
        is_pending = state.status is Status.BATCH_PENDING and r.batch == state.batch_index + 1
        if not 1 <= r.batch <= state.batch_index + is_pending:
            raise SnapshotError("record batch out of range")
        if (r.reward is None) != is_pending:
            raise SnapshotError("reward presence does not match batch status")
        tally[r.source][r.arm][0] += 1
        tally[r.source][r.arm][1] += r.reward or 0
    if tally != state.counts:
        raise SnapshotError("counts do not match assignment records")
    for s in SOURCES:
        for assigned, clicked in state.counts[s]:
            if not 0 <= clicked <= assigned:
                raise SnapshotError("clicked exceeds assigned")
    expected = visible_posteriors(cfg, state.records, state.batch_index)
    if expected != state.posteriors:
        raise SnapshotError("posteriors do not match counts")


def snapshot(state: ExperimentState) -> dict:
    """Self-describing, versioned document for ``state``."""
    return {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "config": state.config.to_dict(),
        "seed": state.seed,
        "rng": dict(state.rng_state),
        "batch_index": state.batch_index,
        "status": state.status.value,
        "posteriors": [[p.alpha, p.beta] for p in state.posteriors],
        "counts": {s.value: [list(cell) for cell in state.counts[s]] for s in SOURCES},
        "records": [r.to_dict() for r in state.records],
    }


def restore(doc: Mapping | str | bytes) -> ExperimentState:
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SnapshotError(f"snapshot is not valid JSON: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise SnapshotError("snapshot must be a JSON object")
    if doc.get("format") != SNAPSHOT_FORMAT:
        raise SnapshotError(f"not an experiment snapshot (format={doc.get('format')!r})")
    if doc.get("version") != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {doc.get('version')!r}")
    try:
        state = ExperimentState(
            config=ExperimentConfig.from_dict(doc["config"]),
            seed=int(doc["seed"]),
            rng_state=dict(doc["rng"]),
            posteriors=[BetaParams(a, b) for a, b in doc["posteriors"]],
            counts={s: [[int(a), int(c)] for a, c in doc["counts"][s.value]] for s in SOURCES},
            batch_index=int(doc["batch_index"]),
            status=Status(doc["status"]),
            records=[AssignmentRecord.from_dict(r) for r in doc["records"]],
        )
        seeding.load_state(state.rng_state)
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"malformed snapshot: {exc!r}") from exc
    check_invariants(state)
    return state


def dumps(state: ExperimentState) -> str:
    """Canonical JSON text: equal states give byte-identical output."""
    return json.dumps(snapshot(state), sort_keys=True, indent=1) + "\n"


def loads(text: str | bytes) -> ExperimentState:
    return restore(text)
