"""Synthetic Bernoulli environments, single runs and replication campaigns.

A run drives the real engine: each batch is opened, every assigned
participant clicks with the true probability of their arm, and the batch is
closed. Rewards come from a uniform draw per participant slot
(``click = u < p[arm]``), so policies run under the same seed see common
random numbers.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import seeding
from .allocation import AllocationPolicy, AllocationSource, prob_optimal
from .engine import (
    ExperimentConfig,
    ExperimentState,
    create_experiment,
    open_batch,
    record_rewards,
    visible_posteriors,
)
from .errors import ValidationError

CAMPAIGN_PA_DRAWS = 10_000
FAVOR_THRESHOLD = 0.5


@dataclass(frozen=True)
class Environment:
    true_probs: tuple[float, ...]

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.true_probs)
        if len(probs) < 2:
            raise ValidationError("environment needs at least 2 arms")
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValidationError(f"true probabilities must lie in [0, 1]: {probs}")
        object.__setattr__(self, "true_probs", probs)

    @property
    def n_arms(self) -> int:
        return len(self.true_probs)

    @property
    def gaps(self) -> np.ndarray:
        p = np.asarray(self.true_probs)
        return p.max() - p


@dataclass
class Trajectory:
    """Per-batch, per-arm outcome table of one experiment.

    ``pa[b]`` is the probability of assignment computed from the posterior
    after ``b`` closed batches, i.e. ``pa[b - 1]`` governed batch ``b`` and
    ``pa[b]`` is the "next batch" value reported alongside batch ``b``.
    """

    arm_labels: tuple[str, ...]
    assigned: np.ndarray  # (batches, arms)
    clicked: np.ndarray  # (batches, arms)
    source_assigned: np.ndarray  # (batches, 2): uniform-branch, TS-branch
    pa: np.ndarray  # (batches + 1, arms)

    @property
    def n_batches(self) -> int:
        return self.assigned.shape[0]

    @property
    def n_arms(self) -> int:
        return self.assigned.shape[1]

    def ccr(self) -> list[list[float | None]]:
        """Cumulative click rate; ``None`` where an arm has had no assignments yet."""
        n = np.cumsum(self.assigned, axis=0)
        c = np.cumsum(self.clicked, axis=0)
        return [[float(c[b, k] / n[b, k]) if n[b, k] else None for k in range(self.n_arms)] for b in range(self.n_batches)]

    @property
    def total_reward(self) -> int:
        return int(self.clicked.sum())

    @property
    def favored_arm(self) -> int:
        return int(np.argmax(self.pa[-1]))

    def rows(self) -> list[dict]:
        cum_n = np.cumsum(self.assigned, axis=0)
        cum_c = np.cumsum(self.clicked, axis=0)
        ccr = self.ccr()
        out = []
        for b in range(self.n_batches):
            for k in range(self.n_arms):
                out.append(
                    {
                        "batch": b + 1,
                        "arm": k + 1,
                        "label": self.arm_labels[k],
                        "assigned": int(self.assigned[b, k]),
                        "clicked": int(self.clicked[b, k]),
                        "cum_assigned": int(cum_n[b, k]),
                        "cum_clicked": int(cum_c[b, k]),
                        "ccr": ccr[b][k],
                        "pa_batch": float(self.pa[b, k]),
                        "pa_next": float(self.pa[b + 1, k]),
                        "uniform_assigned_batch": int(self.source_assigned[b, 0]),
                        "ts_assigned_batch": int(self.source_assigned[b, 1]),
                    }
                )
        return out

    def to_csv(self, path: str | os.PathLike) -> None:
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["batch"], lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: ("" if v is None else _fmt(v)) for k, v in row.items()})

    def to_fixture(self, name: str = "simulated") -> dict:
        """Table-shaped fixture for :func:`replay_table`."""
        ccr = self.ccr()
        return {
            "arms": list(self.arm_labels),
            "blocks": [
                {
                    "name": name,
                    "rows": [
                        {"batch": b + 1, "ccr": ccr[b], "pa": [float(x) for x in self.pa[b + 1]]}
                        for b in range(self.n_batches)
                    ],
                }
            ],
        }


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def trajectory_from_state(
    state: ExperimentState, pa_draws: int = 1_000_000, pa_seed: int | None = None
) -> Trajectory:
    """Rebuild the trajectory of the closed batches of ``state``.

    PA for each posterior uses its own stream derived from ``pa_seed``
    (default: the experiment seed), so it never disturbs assignment and is
    reproducible from a snapshot.
    """
    cfg = state.config
    k = cfg.n_arms
    nb = state.batch_index
    assigned = np.zeros((nb, k), dtype=np.int64)
    clicked = np.zeros((nb, k), dtype=np.int64)
    by_source = np.zeros((nb, 2), dtype=np.int64)
    for r in state.records:
        if r.reward is None or r.batch > nb:
            continue
        assigned[r.batch - 1, r.arm] += 1
        clicked[r.batch - 1, r.arm] += r.reward
        by_source[r.batch - 1, 0 if r.source is AllocationSource.UNIFORM else 1] += 1
    seed = state.seed if pa_seed is None else pa_seed
    pa = np.vstack(
        [
            prob_optimal(
                visible_posteriors(cfg, state.records, b), pa_draws, seeding.stream(seed, seeding.PROB_OPTIMAL, b)
            )
            for b in range(nb + 1)
        ]
    )
    return Trajectory(cfg.arm_labels, assigned, clicked, by_source, pa)


def _as_config(config: ExperimentConfig | AllocationPolicy, n_batches: int, n_arms: int) -> ExperimentConfig:
    if isinstance(config, ExperimentConfig):
        return config
    return ExperimentConfig(
        id=f"sim-{config.name}",
        arm_labels=tuple(f"arm{k + 1}" for k in range(n_arms)),
        policy=config,
        batches_planned=n_batches,
    )


def simulate_run(
    env: Environment,
    config: ExperimentConfig | AllocationPolicy,
    batch_sizes: Sequence[int],
    seed: int,
    pa_draws: int = 1_000_000,
) -> Trajectory:
    config = _as_config(config, len(batch_sizes), env.n_arms)
    if len(batch_sizes) != config.batches_planned:
        raise ValidationError(f"{len(batch_sizes)} batch sizes for {config.batches_planned} planned batches")
    if config.n_arms != env.n_arms:
        raise ValidationError(f"config has {config.n_arms} arms, environment has {env.n_arms}")
    p = np.asarray(env.true_probs)
    state = create_experiment(config, seed=seed)
    reward_rng = seeding.stream(seed, seeding.REWARDS)
    for b, n in enumerate(batch_sizes, start=1):
        state, assignments = open_batch(state, [f"b{b}-p{i}" for i in range(n)])
        u = reward_rng.random(n)
        state = record_rewards(state, {a.participant_id: int(u[i] < p[a.arm]) for i, a in enumerate(assignments)})
    return trajectory_from_state(state, pa_draws)


def cumulative_regret(trajectory: Trajectory, env: Environment) -> float:
    """Sum over assignments of (best true rate - true rate of the assigned arm)."""
    if trajectory.n_arms != env.n_arms:
        raise ValidationError("trajectory and environment disagree on arm count")
    return float((trajectory.assigned.sum(axis=0) * env.gaps).sum())


@dataclass(frozen=True)
class PolicySummary:
    policy: str
    mean_reward: float
    se_reward: float | None
    mean_regret: float
    se_regret: float | None
    favored_histogram: tuple[int, ...]
    threshold: float
    frac_max_pa_above: float
    arm_assigned: tuple[int, ...]
    rewards: tuple[int, ...]
    regrets: tuple[float, ...]
    mean_assigned: tuple[tuple[float, ...], ...]
    mean_clicked: tuple[tuple[float, ...], ...]
    mean_pa: tuple[tuple[float, ...], ...]

    def to_dict(self, include_replications: bool = False) -> dict:
        doc = {
            "policy": self.policy,
            "mean_reward": self.mean_reward,
            "se_reward": self.se_reward,
            "mean_regret": self.mean_regret,
            "se_regret": self.se_regret,
            "favored_histogram": list(self.favored_histogram),
            "threshold": self.threshold,
            "frac_max_pa_above": self.frac_max_pa_above,
            "arm_assigned": list(self.arm_assigned),
        }
        if include_replications:
            doc["rewards"] = list(self.rewards)
            doc["regrets"] = list(self.regrets)
        return doc


@dataclass(frozen=True)
class CampaignSummary:
    replications: int
    seed: int
    true_probs: tuple[float, ...]
    batch_sizes: tuple[int, ...]
    policies: tuple[PolicySummary, ...]

    def __getitem__(self, name: str) -> PolicySummary:
        for p in self.policies:
            if p.policy == name:
                return p
        raise KeyError(name)

    def to_dict(self, include_replications: bool = False) -> dict:
        return {
            "replications": self.replications,
            "seed": self.seed,
            "true_probs": list(self.true_probs),
            "batch_sizes": list(self.batch_sizes),
            "policies": [p.to_dict(include_replications) for p in self.policies],
        }


def _mean_se(values: np.ndarray) -> tuple[float, float | None]:
    mean = float(values.mean())
    if len(values) < 2:
        return mean, None
    return mean, float(values.std(ddof=1) / math.sqrt(len(values)))


def run_campaign(
    env: Environment,
    configs: Sequence[ExperimentConfig | AllocationPolicy],
    batch_sizes: Sequence[int],
    replications: int,
    seed: int,
    pa_draws: int = CAMPAIGN_PA_DRAWS,
    threshold: float = FAVOR_THRESHOLD,
) -> CampaignSummary:
    """Replicate every policy ``replications`` times.

    Replication ``r`` uses the same derived seed for every policy, so the
    reward stream is shared across policies. Runs are serial and reduced in
    replication order, which keeps the summary identical for a given seed.
    """
    if replications < 1:
        raise ValidationError("replications must be >= 1")
    cfgs = [_as_config(c, len(batch_sizes), env.n_arms) for c in configs]
    names = [c.policy.name for c in cfgs]
    if len(set(names)) != len(names):
        raise ValidationError(f"policies must be distinct: {names}")
    rep_seeds = [seeding.derive_seed(seed, seeding.REPLICATION, r) for r in range(replications)]
    k = env.n_arms
    summaries = []
    for cfg in cfgs:
        rewards = np.zeros(replications, dtype=np.int64)
        regrets = np.zeros(replications)
        favored = np.zeros(replications, dtype=np.int64)
        max_pa = np.zeros(replications)
        assigned = np.zeros((len(batch_sizes), k))
        clicked = np.zeros((len(batch_sizes), k))
        pa = np.zeros((len(batch_sizes) + 1, k))
        for r, rep_seed in enumerate(rep_seeds):
            traj = simulate_run(env, cfg, batch_sizes, rep_seed, pa_draws)
            rewards[r] = traj.total_reward
            regrets[r] = cumulative_regret(traj, env)
            favored[r] = traj.favored_arm
            max_pa[r] = traj.pa[-1].max()
            assigned += traj.assigned
            clicked += traj.clicked
            pa += traj.pa
        mr, ser = _mean_se(rewards.astype(float))
        mg, seg = _mean_se(regrets)
        summaries.append(
            PolicySummary(
                policy=cfg.policy.name,
                mean_reward=mr,
                se_reward=ser,
                mean_regret=mg,
                se_regret=seg,
                favored_histogram=tuple(int(x) for x in np.bincount(favored, minlength=k)),
                threshold=threshold,
                frac_max_pa_above=float((max_pa > threshold).mean()),
                arm_assigned=tuple(int(x) for x in assigned.sum(axis=0)),
                rewards=tuple(int(x) for x in rewards),
                regrets=tuple(float(x) for x in regrets),
                mean_assigned=tuple(tuple(float(x) for x in row / replications) for row in assigned),
                mean_clicked=tuple(tuple(float(x) for x in row / replications) for row in clicked),
                mean_pa=tuple(tuple(float(x) for x in row / replications) for row in pa),
            )
        )
    return CampaignSummary(
        replications=replications,
        seed=seed,
        true_probs=env.true_probs,
        batch_sizes=tuple(int(n) for n in batch_sizes),
        policies=tuple(summaries),
    )


def export_campaign(summary: CampaignSummary, out_dir: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``batches.csv`` (one row per policy x batch x arm) and ``summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    batches_path = out / "batches.csv"
    summary_path = out / "summary.csv"
    with open(batches_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "batch", "arm", "mean_assigned", "mean_clicked", "mean_pa_batch", "mean_pa_next"])
        for p in summary.policies:
            for b, (n_row, c_row) in enumerate(zip(p.mean_assigned, p.mean_clicked)):
                for k in range(len(n_row)):
                    w.writerow([p.policy, b + 1, k + 1, repr(n_row[k]), repr(c_row[k]), repr(p.mean_pa[b][k]), repr(p.mean_pa[b + 1][k])])
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["policy", "replications", "mean_reward", "se_reward", "mean_regret", "se_regret", "threshold", "frac_max_pa_above", "favored_histogram"]
        )
        for p in summary.policies:
            w.writerow(
                [
                    p.policy,
                    summary.replications,
                    repr(p.mean_reward),
                    "" if p.se_reward is None else repr(p.se_reward),
                    repr(p.mean_regret),
                    "" if p.se_regret is None else repr(p.se_regret),
                    p.threshold,
                    repr(p.frac_max_pa_above),
                    " ".join(str(x) for x in p.favored_histogram),
                ]
            )
    return batches_path, summary_path


@dataclass(frozen=True)
class RenderedTable:
    text: str
    # (block name, batch, highlighted 0-based arm)
    highlighted: tuple[tuple[str, int, int], ...]


def _check_fixture(fixture: Mapping) -> tuple[list[str], list]:
    try:
        arms = [str(a) for a in fixture["arms"]]
        blocks = list(fixture["blocks"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"fixture needs 'arms' and 'blocks': {exc!r}") from exc
    if len(arms) < 2:
        raise ValidationError("fixture needs at least 2 arms")
    for block in blocks:
        if "name" not in block or not block.get("rows"):
            raise ValidationError("every block needs a name and at least one row")
        for row in block["rows"]:
            for key in ("batch", "ccr", "pa"):
                if key not in row:
                    raise ValidationError(f"row missing {key!r} in block {block['name']!r}")
            if len(row["ccr"]) != len(arms) or len(row["pa"]) != len(arms):
                raise ValidationError(f"row length mismatch in block {block['name']!r}")
            for v in row["pa"]:
                if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                    raise ValidationError(f"PA value {v!r} outside [0, 1]")
            for v in row["ccr"]:
                if v is not None and (not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0):
                    raise ValidationError(f"CCR value {v!r} outside [0, 1]")
    return arms, blocks


def replay_table(fixture: Mapping) -> RenderedTable:
    """Render CCR/PA rows as a Markdown table, bolding each row's largest PA.

    Equal PA values highlight the lowest arm.
    """
    arms, blocks = _check_fixture(fixture)
    header = ["", "batch"] + [f"{a} {col}" for a in arms for col in ("CCR", "PA")]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    marks = []
    for block in blocks:
        for i, row in enumerate(block["rows"]):
            pa = list(row["pa"])
            best = max(range(len(pa)), key=lambda j: (pa[j], -j))
            marks.append((block["name"], int(row["batch"]), best))
            cells = [block["name"] if i == 0 else "", f"Batch {row['batch']}"]
            for k, (c, p) in enumerate(zip(row["ccr"], pa)):
                cells.append("-" if c is None else f"{c:.3f}")
                cells.append(f"**{p:.3f}**" if k == best else f"{p:.3f}")
            lines.append("| " + " | ".join(cells) + " |")
    return RenderedTable("\n".join(lines) + "\n", tuple(marks))


def published_table() -> dict:
    """CCR/PA values published for the three email-reminder weeks."""
    import json
    from importlib import resources

    return json.loads(resources.files("batchbandit").joinpath("data/table1.json").read_text())
