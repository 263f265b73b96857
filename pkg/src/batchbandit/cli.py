"""Command-line front end.

Every verb prints one JSON document on stdout (``replay-table`` and
``analyze --format text`` print plain text). Usage errors exit with 2,
domain errors with 1 and a JSON error document.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import analysis, commands, engine, seeding, simulator
from .allocation import DEFAULT_DRAWS
from .errors import ValidationError
from .store import DirectoryStore

logger = logging.getLogger("batchbandit")

DEFAULT_STORE = os.environ.get("BATCHBANDIT_STORE", "experiments")


def _bool(text: str) -> bool:
    try:
        return commands.parse_bool(text)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batchbandit", description="Batched adaptive experiments.")
    parser.add_argument("--store", default=DEFAULT_STORE, help="experiment snapshot directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def experiment(p, required=True):
        p.add_argument("--experiment", required=required, help="experiment id")

    def policy(p):
        p.add_argument("--policy", choices=["uniform", "ts", "hybrid"], default="ts")
        p.add_argument("--epsilon", type=float, default=0.5)
        p.add_argument("--share-uniform-data", type=_bool, default=True)
        p.add_argument("--batches", type=int, default=4)

    def seed(p):
        p.add_argument("--seed", type=_u64, default=None)

    p = sub.add_parser("create", help="create an experiment")
    experiment(p)
    policy(p)
    seed(p)
    arms = p.add_mutually_exclusive_group()
    arms.add_argument("--arms", help="comma-separated arm labels")
    arms.add_argument("--n-arms", type=int, default=4)
    p.add_argument("--prior", type=_float_list, default=[1.0, 1.0], help="alpha0,beta0")

    p = sub.add_parser("open-batch", help="assign a batch of participants")
    experiment(p)
    ids = p.add_mutually_exclusive_group(required=True)
    ids.add_argument("--participants", help="file with one id per line or a participant_id CSV column")
    ids.add_argument("--ids", help="comma-separated participant ids")
    p.add_argument("--out", help="also write assignments as CSV")

    p = sub.add_parser("record", help="record rewards and close the pending batch")
    experiment(p)
    p.add_argument("--rewards", required=True, help="CSV with participant_id,clicked header")

    p = sub.add_parser("status", help="show experiment state")
    experiment(p)

    p = sub.add_parser("prob-optimal", help="Monte-Carlo probability each arm is best")
    experiment(p, required=False)
    p.add_argument("--posteriors", help="ad hoc posteriors, e.g. '2,1;1,2'")
    p.add_argument("--draws", type=int, default=DEFAULT_DRAWS)
    seed(p)

    p = sub.add_parser("simulate", help="simulate one experiment in a Bernoulli environment")
    p.add_argument("--probs", type=_float_list, required=True, help="true click probability per arm")
    policy(p)
    p.add_argument("--batch-sizes", type=_int_list, help="participants per batch (default 80 each)")
    p.add_argument("--draws", type=int, default=DEFAULT_DRAWS)
    p.add_argument("--out", help="trajectory CSV path")
    seed(p)

    p = sub.add_parser("campaign", help="replicate several policies")
    p.add_argument("--probs", type=_float_list, required=True)
    p.add_argument("--policies", default="ts,uniform", help="comma-separated subset of uniform,ts,hybrid")
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--share-uniform-data", type=_bool, default=True)
    p.add_argument("--batches", type=int, default=4)
    p.add_argument("--batch-sizes", type=_int_list)
    p.add_argument("--replications", type=int, default=1000)
    p.add_argument("--draws", type=int, default=simulator.CAMPAIGN_PA_DRAWS, help="PA draws per posterior")
    p.add_argument("--threshold", type=float, default=simulator.FAVOR_THRESHOLD)
    p.add_argument("--out", help="directory for batches.csv and summary.csv")
    seed(p)

    p = sub.add_parser("analyze", help="panel regression over experiment records")
    p.add_argument("--experiment", action="append", default=[], help="experiment id (one week each); repeatable")
    p.add_argument("--records", action="append", default=[], help="records CSV; repeatable")
    p.add_argument("--week-effects", type=_bool, default=True)
    p.add_argument("--participant-effects", type=_bool, default=False)
    p.add_argument("--all-sources", action="store_true", help="include TS-branch rows, not only uniform ones")
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--out", help="write the JSON report here as well")

    p = sub.add_parser("replay-table", help="render a CCR/PA table with the max PA in bold")
    p.add_argument("--fixture", help="fixture JSON (default: the published email-reminder table)")
    p.add_argument("--experiment", help="render a stored experiment instead")
    p.add_argument("--draws", type=int, default=DEFAULT_DRAWS)

    p = sub.add_parser("export", help="export a stored experiment")
    experiment(p)
    p.add_argument("--what", choices=["trajectory", "records", "snapshot"], default="trajectory")
    p.add_argument("--draws", type=int, default=DEFAULT_DRAWS)
    p.add_argument("--week", help="week label for records export (default: experiment id)")
    p.add_argument("--out", required=True)
    seed(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _policy(args) -> object:
    return commands.make_policy(args.policy, args.epsilon, args.share_uniform_data)


def _seed(args) -> int:
    return seeding.fresh_seed() if args.seed is None else args.seed


def run(args) -> dict | str:
    store = DirectoryStore(args.store)
    verb = args.verb

    if verb == "create":
        labels = args.arms.split(",") if args.arms else [f"arm{k + 1}" for k in range(args.n_arms)]
        if len(args.prior) != 2:
            raise ValidationError("--prior takes alpha0,beta0")
        config = engine.ExperimentConfig(
            id=args.experiment,
            arm_labels=tuple(labels),
            prior=tuple(args.prior),
            policy=_policy(args),
            batches_planned=args.batches,
        )
        return commands.create(store, config, args.seed)

    if verb == "open-batch":
        ids = commands.read_participants(Path(args.participants).read_text()) if args.participants else args.ids.split(",")
        doc = commands.assign(store, args.experiment, ids)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write("participant_id,arm,label,source\n")
                for a in doc["assignments"]:
                    fh.write(f"{a['participant_id']},{a['arm']},{a['label']},{a['source']}\n")
        return doc

    if verb == "record":
        return commands.rewards(store, args.experiment, commands.read_rewards_csv(Path(args.rewards).read_text()))

    if verb == "status":
        return commands.status(store, args.experiment)

    if verb == "prob-optimal":
        if args.posteriors:
            return commands.prob_optimal_doc(commands.parse_posteriors(args.posteriors), args.draws, _seed(args))
        if not args.experiment:
            raise ValidationError("prob-optimal needs --experiment or --posteriors")
        return commands.experiment_prob_optimal(store, args.experiment, args.draws, _seed(args))

    if verb == "simulate":
        seed = _seed(args)
        env = simulator.Environment(tuple(args.probs))
        sizes = args.batch_sizes or [80] * args.batches
        traj = simulator.simulate_run(env, _policy(args), sizes, seed, args.draws)
        if args.out:
            traj.to_csv(args.out)
        return {
            "seed": seed,
            "true_probs": list(env.true_probs),
            "batch_sizes": sizes,
            "total_reward": traj.total_reward,
            "cumulative_regret": simulator.cumulative_regret(traj, env),
            "favored_arm": traj.favored_arm + 1,
            "ccr": traj.ccr(),
            "pa": traj.pa.tolist(),
            "table": simulator.replay_table(traj.to_fixture()).text,
        }

    if verb == "campaign":
        seed = _seed(args)
        env = simulator.Environment(tuple(args.probs))
        sizes = args.batch_sizes or [80] * args.batches
        policies = [commands.make_policy(k.strip(), args.epsilon, args.share_uniform_data) for k in args.policies.split(",")]
        summary = simulator.run_campaign(env, policies, sizes, args.replications, seed, args.draws, args.threshold)
        if args.out:
            simulator.export_campaign(summary, args.out)
        return summary.to_dict()

    if verb == "analyze":
        rows = []
        for exp_id in args.experiment:
            state = store.load(exp_id)
            resolved = [r for r in state.records if r.reward is not None]
            rows += analysis.panel_rows(resolved, exp_id, args.all_sources)
        for path in args.records:
            rows += analysis.read_panel_csv(path, args.all_sources)
        if not rows:
            raise ValidationError("analyze needs --experiment or --records with at least one usable row")
        result = analysis.fit_panel_ols(rows, args.week_effects, args.participant_effects)
        if args.out:
            Path(args.out).write_text(analysis.report_json(result) + "\n")
        return result.report() if args.format == "text" else result.to_dict()

    if verb == "replay-table":
        if args.experiment:
            state = store.load(args.experiment)
            fixture = simulator.trajectory_from_state(state, args.draws).to_fixture(args.experiment)
        elif args.fixture:
            try:
                fixture = json.loads(Path(args.fixture).read_text())
            except json.JSONDecodeError as exc:
                raise ValidationError(f"fixture is not valid JSON: {exc}") from exc
        else:
            fixture = simulator.published_table()
        return simulator.replay_table(fixture).text

    if verb == "export":
        state = store.load(args.experiment)
        if args.what == "snapshot":
            Path(args.out).write_text(engine.dumps(state))
        elif args.what == "records":
            analysis.write_records_csv(state.records, args.out, args.week or args.experiment)
        else:
            simulator.trajectory_from_state(state, args.draws, args.seed).to_csv(args.out)
        return {"experiment": args.experiment, "what": args.what, "out": args.out}

    if verb == "serve":
        from .service import serve

        serve(args.store, args.host, args.port)
        return {"status": "stopped"}

    raise ValidationError(f"unknown verb {verb!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        out = run(args)
    except Exception as exc:  # noqa: BLE001
        doc = commands.error_doc(exc)
        if doc["status"] == commands.SERVER_ERROR:
            logger.exception("unexpected failure")
        print(json.dumps(doc, indent=2, sort_keys=True))
        return 1
    if isinstance(out, str):
        sys.stdout.write(out)
    else:
        print(json.dumps({"status": commands.OK, "body": out}, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
