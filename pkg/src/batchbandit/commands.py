"""Operations shared by the CLI and the HTTP service.

Both front ends parse their input into plain Python values and call the
functions here, so a scripted session gives the same result through
either one.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Mapping, Sequence

from . import engine, seeding
from .allocation import DEFAULT_DRAWS, AllocationPolicy, prob_optimal
from .engine import AssignmentRecord, ExperimentConfig, ExperimentState
from .errors import (
    BanditError,
    ConcurrentModification,
    DuplicateExperiment,
    InvalidTransition,
    ValidationError,
)
from .posterior import BetaParams, check_reward
from .store import MemoryStore

OK = "ok"
CLIENT_ERROR = "client-error"
CONFLICT = "conflict"
SERVER_ERROR = "server-error"


def error_status(exc: BaseException) -> str:
    if isinstance(exc, (InvalidTransition, ConcurrentModification, DuplicateExperiment)):
        return CONFLICT
    if isinstance(exc, (BanditError, FileNotFoundError)):
        return CLIENT_ERROR
    return SERVER_ERROR


def error_doc(exc: BaseException) -> dict:
    code = exc.code if isinstance(exc, BanditError) else "internal"
    return {"status": error_status(exc), "error": {"code": code, "message": str(exc)}}


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {value!r}")


def make_policy(kind: str, epsilon: float | None = None, share_uniform_data=None) -> AllocationPolicy:
    kind = {"thompson": "ts"}.get(kind, kind)
    if kind == "hybrid":
        return AllocationPolicy.hybrid(
            0.5 if epsilon is None else float(epsilon),
            True if share_uniform_data is None else parse_bool(share_uniform_data),
        )
    try:
        return AllocationPolicy(kind)
    except ValueError as exc:
        raise ValidationError(f"unknown policy {kind!r}") from exc


def config_from_doc(doc: Mapping) -> ExperimentConfig:
    """Validate a create request: ``id``, ``arm_labels``, ``prior``, ``policy``, ``batches_planned``."""
    if not isinstance(doc, Mapping):
        raise ValidationError("request body must be an object")
    try:
        policy = doc.get("policy", {"kind": "ts"})
        if isinstance(policy, str):
            policy = {"kind": policy}
        return ExperimentConfig(
            id=doc["id"],
            arm_labels=tuple(doc["arm_labels"]),
            prior=tuple(doc.get("prior", (1.0, 1.0))),
            policy=make_policy(policy.get("kind", "ts"), policy.get("epsilon"), policy.get("share_uniform_data")),
            batches_planned=int(doc.get("batches_planned", 4)),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bad experiment config: {exc!r}") from exc


def state_doc(state: ExperimentState) -> dict:
    cfg = state.config
    return {
        "experiment": cfg.id,
        "status": state.status.value,
        "batch_index": state.batch_index,
        "batches_planned": cfg.batches_planned,
        "policy": cfg.policy.to_dict(),
        "arm_labels": list(cfg.arm_labels),
        "posteriors": [[p.alpha, p.beta] for p in state.posteriors],
        "counts": {s.value: [list(c) for c in state.counts[s]] for s in engine.SOURCES},
        "seed": state.seed,
        "pending": len(state.pending),
    }


def assignments_doc(state: ExperimentState, assignments: Sequence[AssignmentRecord]) -> dict:
    labels = state.config.arm_labels
    return {
        "experiment": state.config.id,
        "batch": state.batch_index + 1,
        "assignments": [
            {"participant_id": a.participant_id, "arm": a.arm + 1, "label": labels[a.arm], "source": a.source.value}
            for a in assignments
        ],
    }


def create(store: MemoryStore, config: ExperimentConfig, seed: int | None) -> dict:
    state = engine.create_experiment(config, seed)
    store.create(state)
    return state_doc(state)


def assign(store: MemoryStore, exp_id: str, participants: Sequence[str]) -> dict:
    if isinstance(participants, (str, bytes)) or not isinstance(participants, Sequence):
        raise ValidationError("participants must be a list of ids")

    def step(state):
        new, assignments = engine.open_batch(state, participants)
        return new, assignments_doc(state, assignments)

    return store.update(exp_id, step)


def rewards(store: MemoryStore, exp_id: str, reward_map) -> dict:
    if not isinstance(reward_map, (Mapping, list)):
        raise ValidationError("rewards must be a mapping of participant id to 0/1")

    def step(state):
        new = engine.record_rewards(state, reward_map)
        return new, state_doc(new)

    return store.update(exp_id, step)


def status(store: MemoryStore, exp_id: str) -> dict:
    return state_doc(store.load(exp_id))


def prob_optimal_doc(posteriors: Sequence[BetaParams], draws: int | None, seed: int | None) -> dict:
    draws = DEFAULT_DRAWS if draws is None else int(draws)
    if seed is None:
        seed = seeding.fresh_seed()
    probs = prob_optimal(posteriors, draws, seeding.stream(int(seed), seeding.PROB_OPTIMAL))
    return {
        "posteriors": [[p.alpha, p.beta] for p in posteriors],
        "draws": draws,
        "seed": int(seed),
        "prob_optimal": [float(x) for x in probs],
    }


def experiment_prob_optimal(store: MemoryStore, exp_id: str, draws: int | None, seed: int | None) -> dict:
    state = store.load(exp_id)
    doc = prob_optimal_doc(state.posteriors, draws, seed)
    doc["experiment"] = exp_id
    return doc


def parse_posteriors(text: str) -> list[BetaParams]:
    """``"2,1;1,2"`` -> [Beta(2, 1), Beta(1, 2)]."""
    try:
        return [BetaParams(*(float(x) for x in part.split(","))) for part in text.split(";") if part.strip()]
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad posterior list {text!r}") from exc


def read_rewards_csv(text: str) -> list[tuple[str, int]]:
    """Header-bearing CSV with ``participant_id`` and ``clicked`` columns."""
    reader = csv.DictReader(io.StringIO(text))
    if not reader.fieldnames or not {"participant_id", "clicked"} <= set(reader.fieldnames):
        raise ValidationError("rewards file needs a header with participant_id and clicked")
    out = []
    for line in reader:
        try:
            value = int(line["clicked"])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"clicked must be 0/1, got {line['clicked']!r}") from exc
        out.append((line["participant_id"], check_reward(value)))
    return out


def read_participants(text: str) -> list[str]:
    """One id per line, or a CSV whose header includes ``participant_id``."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if lines and ("," in lines[0] or lines[0] == "participant_id"):
        reader = csv.DictReader(io.StringIO(text))
        if "participant_id" not in (reader.fieldnames or []):
            raise ValidationError("participants CSV needs a participant_id column")
        return [row["participant_id"] for row in reader]
    return lines

