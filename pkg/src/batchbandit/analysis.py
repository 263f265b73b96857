"""Click-rate summaries and fixed-effects panel regression.

The regression is a linear probability model: ``clicked`` on arm
indicators (arm 1 is the reference), optionally week indicators, and
optionally participant fixed effects absorbed by demeaning within
participant. Standard errors are classical (homoskedastic) and tests are
two-sided z-tests.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .allocation import AllocationSource
from .engine import AssignmentRecord
from .errors import SingularDesignError, ValidationError
from .posterior import check_reward

_SQRT2 = math.sqrt(2.0)


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / _SQRT2)


def z_test(estimate: float, standard_error: float) -> tuple[float, float]:
    """Return ``(z, two-sided p)`` for a normal test of ``estimate == 0``."""
    if not standard_error > 0:
        raise ValidationError(f"standard error must be positive, got {standard_error}")
    z = estimate / standard_error
    # 2 * (1 - Phi(|z|)) without the cancellation in the tail
    return z, math.erfc(abs(z) / _SQRT2)


def cumulative_click_rate(records: Iterable[AssignmentRecord], n_arms: int) -> dict[int, list[float | None]]:
    """CCR per batch and arm, accumulated through each batch.

    Arms with no assignments so far get ``None``.
    """
    records = list(records)
    if any(r.reward is None for r in records):
        raise ValidationError("records with unresolved rewards")
    if not records:
        return {}
    last = max(r.batch for r in records)
    n = np.zeros((last, n_arms), dtype=np.int64)
    c = np.zeros((last, n_arms), dtype=np.int64)
    for r in records:
        n[r.batch - 1, r.arm] += 1
        c[r.batch - 1, r.arm] += r.reward
    n = n.cumsum(axis=0)
    c = c.cumsum(axis=0)
    return {b + 1: [float(c[b, k] / n[b, k]) if n[b, k] else None for k in range(n_arms)] for b in range(last)}


@dataclass(frozen=True, order=True)
class PanelRow:
    participant: str
    week: str
    arm: int  # 0-based
    clicked: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "clicked", check_reward(self.clicked))
        object.__setattr__(self, "participant", str(self.participant))
        object.__setattr__(self, "week", str(self.week))


def panel_rows(
    records: Iterable[AssignmentRecord], week: str, all_sources: bool = False
) -> list[PanelRow]:
    """Regression rows from one week's records; uniform-branch rows only by default."""
    out = []
    for r in records:
        if r.reward is None:
            raise ValidationError("records with unresolved rewards")
        if all_sources or r.source is AllocationSource.UNIFORM:
            out.append(PanelRow(r.participant_id, week, r.arm, r.reward))
    return out


@dataclass(frozen=True)
class RegressionResult:
    names: tuple[str, ...]
    estimates: tuple[float, ...]
    standard_errors: tuple[float, ...]
    z_stats: tuple[float, ...]
    p_values: tuple[float, ...]
    n_observations: int
    df_resid: int
    week_effects: bool
    participant_effects: bool
    n_groups: int = 0

    def __getitem__(self, name: str) -> dict:
        i = self.names.index(name)
        return {
            "estimate": self.estimates[i],
            "standard_error": self.standard_errors[i],
            "z": self.z_stats[i],
            "p_value": self.p_values[i],
        }

    @property
    def arm_names(self) -> list[str]:
        return [n for n in self.names if n.startswith("arm_")]

    def to_dict(self) -> dict:
        return {
            "model": "linear probability, OLS",
            "week_effects": self.week_effects,
            "participant_effects": self.participant_effects,
            "n_observations": self.n_observations,
            "n_participant_groups": self.n_groups,
            "df_resid": self.df_resid,
            "coefficients": {name: self[name] for name in self.names},
        }

    def report(self) -> str:
        width = max([len(n) for n in self.names] + [9])
        lines = [
            f"{'term':<{width}}  {'estimate':>10}  {'std.err':>10}  {'z':>8}  {'p':>8}",
            "-" * (width + 44),
        ]
        for i, name in enumerate(self.names):
            p = self.p_values[i]
            stars = "**" if p < 0.01 else "*" if p < 0.05 else ""
            lines.append(
                f"{name:<{width}}  {self.estimates[i]:>10.4f}  {self.standard_errors[i]:>10.4f}  "
                f"{self.z_stats[i]:>8.3f}  {p:>8.4f} {stars}".rstrip()
            )
        lines.append("-" * (width + 44))
        lines.append(f"week effects: {'yes' if self.week_effects else 'no'}")
        lines.append(f"participant effects: {'yes' if self.participant_effects else 'no'}")
        lines.append(f"observations: {self.n_observations}")
        return "\n".join(lines) + "\n"


def _group_demean(a: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    sizes = np.bincount(groups, minlength=n_groups).astype(float)
    if a.ndim == 1:
        means = np.bincount(groups, weights=a, minlength=n_groups) / sizes
        return a - means[groups]
    out = np.empty_like(a)
    for j in range(a.shape[1]):
        means = np.bincount(groups, weights=a[:, j], minlength=n_groups) / sizes
        out[:, j] = a[:, j] - means[groups]
    return out


def design(rows: Sequence[PanelRow], week_effects: bool, participant_effects: bool):
    """Design matrix, outcome, column names and participant groups.

    Rows are put in a canonical order first so the fit does not depend on
    input order.
    """
    rows = sorted(rows)
    arms = sorted({r.arm for r in rows})
    weeks = sorted({r.week for r in rows})
    cols: list[np.ndarray] = []
    names: list[str] = []
    if not participant_effects:
        cols.append(np.ones(len(rows)))
        names.append("intercept")
    arm_of = np.array([r.arm for r in rows])
    for a in arms[1:]:
        cols.append((arm_of == a).astype(float))
        names.append(f"arm_{a + 1}")
    if week_effects:
        week_of = np.array([r.week for r in rows], dtype=object)
        for w in weeks[1:]:
            cols.append((week_of == w).astype(float))
            names.append(f"week_{w}")
    X = np.column_stack(cols) if cols else np.zeros((len(rows), 0))
    y = np.array([r.clicked for r in rows], dtype=float)
    pid_index: dict[str, int] = {}
    groups = np.array([pid_index.setdefault(r.participant, len(pid_index)) for r in rows], dtype=np.int64)
    return X, y, names, groups, len(pid_index)


def fit_panel_ols(
    rows: Iterable[PanelRow], week_effects: bool = True, participant_effects: bool = False
) -> RegressionResult:
    rows = list(rows)
    if not rows:
        raise ValidationError("no rows to fit")
    X, y, names, groups, n_groups = design(rows, week_effects, participant_effects)
    if participant_effects:
        if np.bincount(groups).max() < 2:
            raise ValidationError("participant effects need at least one participant with 2+ rows")
        X = _group_demean(X, groups, n_groups)
        y = _group_demean(y, groups, n_groups)
    n, p = X.shape
    if p == 0:
        raise ValidationError("no estimable coefficients")

    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    col_norm = np.linalg.norm(X, axis=0)
    bad = [names[j] for j in range(p) if col_norm[j] == 0 or diag[j] <= 1e-9 * col_norm[j]]
    if bad:
        raise SingularDesignError(bad)

    df = n - p - (n_groups if participant_effects else 0)
    if df <= 0:
        raise ValidationError(f"no residual degrees of freedom (n={n}, k={p})")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / df
    r_inv = np.linalg.solve(r, np.eye(p))
    se = np.sqrt(sigma2 * np.einsum("ij,ij->i", r_inv, r_inv))

    z_stats, p_values = [], []
    for b, s in zip(beta, se):
        if s > 0:
            z, pv = z_test(float(b), float(s))
        else:
            # perfect fit
            z, pv = (0.0, 1.0) if b == 0 else (math.copysign(math.inf, b), 0.0)
        z_stats.append(z)
        p_values.append(pv)
    return RegressionResult(
        names=tuple(names),
        estimates=tuple(float(b) for b in beta),
        standard_errors=tuple(float(s) for s in se),
        z_stats=tuple(z_stats),
        p_values=tuple(p_values),
        n_observations=n,
        df_resid=df,
        week_effects=week_effects,
        participant_effects=participant_effects,
        n_groups=n_groups if participant_effects else 0,
    )


RECORD_FIELDS = ["participant_id", "week", "batch", "arm", "source", "clicked"]


def write_records_csv(records: Iterable[AssignmentRecord], path: str | os.PathLike, week: str) -> None:
    """Export resolved records; ``arm`` is written 1-based."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.participant_id, week, r.batch, r.arm + 1, r.source.value, "" if r.reward is None else r.reward])


def read_panel_csv(path: str | os.PathLike, all_sources: bool = False) -> list[PanelRow]:
    """Read a records export back as regression rows."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"participant_id", "week", "arm", "clicked"} - set(reader.fieldnames or [])
        if missing:
            raise ValidationError(f"records file lacks columns: {sorted(missing)}")
        for line in reader:
            if line["clicked"] == "":
                raise ValidationError(f"unresolved reward for {line['participant_id']!r}")
            if not all_sources and line.get("source", "uniform") != AllocationSource.UNIFORM.value:
                continue
            try:
                rows.append(PanelRow(line["participant_id"], line["week"], int(line["arm"]) - 1, int(line["clicked"])))
            except ValueError as exc:
                raise ValidationError(f"bad records line {line}: {exc}") from exc
    return rows


def report_json(result: RegressionResult) -> str:
    return json.dumps(result.to_dict(), indent=2, sort_keys=True)
