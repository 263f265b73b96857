import json
import threading

import pytest
from fastapi.testclient import TestClient

from batchbandit import commands, engine
from batchbandit.allocation import AllocationPolicy
from batchbandit.service import IdempotencyCache, create_app
from batchbandit.store import DirectoryStore, MemoryStore

from .sessions import ARMS, BATCH_SIZE, BATCHES, SEED, batch_ids, cli_session, clicks_for, run_cli, service_session


@pytest.fixture
def store(tmp_path):
    return str(tmp_path / "store")


def create(store, exp_id="e1", *extra):
    code, doc = run_cli("--store", store, "create", "--experiment", exp_id, "--seed", 7, *extra)
    assert code == 0, doc
    return doc


class TestCli:
    def test_fresh_status(self, store):
        create(store, "e1", "--policy", "hybrid")
        code, doc = run_cli("--store", store, "status", "--experiment", "e1")
        assert code == 0
        body = doc["body"]
        assert body["batch_index"] == 0 and body["status"] == "open"
        assert body["posteriors"] == [[1.0, 1.0]] * 4
        assert body["policy"] == {"kind": "hybrid", "epsilon": 0.5, "share_uniform_data": True}

    def test_prob_optimal_adhoc(self, store, five_sixths):
        code, doc = run_cli("--store", store, "prob-optimal", "--posteriors", "2,1;1,2", "--draws", 1_000_000, "--seed", 5)
        assert code == 0
        assert doc["body"]["prob_optimal"][0] == pytest.approx(five_sixths, abs=0.003)

    def test_prob_optimal_stored(self, store, tmp_path, five_sixths):
        # find a seed whose two uniform assignments land on different arms
        for seed in range(50):
            exp_id = f"u{seed}"
            run_cli("--store", store, "create", "--experiment", exp_id, "--policy", "uniform", "--n-arms", 2, "--seed", seed)
            _, doc = run_cli("--store", store, "open-batch", "--experiment", exp_id, "--ids", "a,b")
            arms = {a["participant_id"]: a["arm"] for a in doc["body"]["assignments"]}
            if set(arms.values()) == {1, 2}:
                break
        clicked = next(p for p, arm in arms.items() if arm == 1)
        path = tmp_path / "r.csv"
        path.write_text(f"participant_id,clicked\n{clicked},1\n")
        code, doc = run_cli("--store", store, "record", "--experiment", exp_id, "--rewards", path)
        assert doc["body"]["posteriors"] == [[2.0, 1.0], [1.0, 2.0]]
        code, doc = run_cli("--store", store, "prob-optimal", "--experiment", exp_id, "--draws", 1_000_000, "--seed", 1)
        assert doc["body"]["prob_optimal"][0] == pytest.approx(five_sixths, abs=0.003)

    def test_open_while_pending_conflicts(self, store):
        create(store)
        run_cli("--store", store, "open-batch", "--experiment", "e1", "--ids", "a,b,c")
        before = DirectoryStore(store).snapshot_text("e1")
        code, doc = run_cli("--store", store, "open-batch", "--experiment", "e1", "--ids", "d")
        assert code == 1
        assert doc["status"] == "conflict" and doc["error"]["code"] == "invalid-transition"
        assert DirectoryStore(store).snapshot_text("e1") == before

    def test_unknown_experiment(self, store):
        code, doc = run_cli("--store", store, "status", "--experiment", "nope")
        assert code == 1 and doc["status"] == "client-error"

    def test_duplicate_create(self, store):
        create(store)
        code, doc = run_cli("--store", store, "create", "--experiment", "e1")
        assert code == 1 and doc["status"] == "conflict"

    def test_usage_error(self, store, capsys):
        with pytest.raises(SystemExit) as err:
            run_cli("--store", store, "create")
        assert err.value.code == 2

    def test_bad_rewards_file(self, store, tmp_path):
        create(store)
        run_cli("--store", store, "open-batch", "--experiment", "e1", "--ids", "a")
        path = tmp_path / "r.csv"
        path.write_text("who,clicked\na,1\n")
        code, doc = run_cli("--store", store, "record", "--experiment", "e1", "--rewards", path)
        assert code == 1 and doc["status"] == "client-error"
        path.write_text("participant_id,clicked\na,7\n")
        code, doc = run_cli("--store", store, "record", "--experiment", "e1", "--rewards", path)
        assert code == 1 and doc["status"] == "client-error"

    def test_participants_file_and_out(self, store, tmp_path):
        create(store)
        ids = tmp_path / "ids.txt"
        ids.write_text("a\nb\n\nc\n")
        out = tmp_path / "asg.csv"
        code, doc = run_cli("--store", store, "open-batch", "--experiment", "e1", "--participants", ids, "--out", out)
        assert code == 0 and len(doc["body"]["assignments"]) == 3
        assert out.read_text().splitlines()[0] == "participant_id,arm,label,source"

    def test_replay_table_default(self, store):
        code, text = run_cli("--store", store, "replay-table")
        assert code == 0
        assert "**0.659**" in text and "**0.926**" in text

    def test_simulate(self, store, tmp_path):
        out = tmp_path / "t.csv"
        code, doc = run_cli("simulate", "--probs", "0.1,0.1,0.1,0.3", "--batch-sizes", "50,50", "--draws", 10_000, "--seed", 3, "--out", out)
        assert code == 0
        assert sum(doc["body"]["batch_sizes"]) == 100 and out.exists()
        assert doc["body"]["seed"] == 3

    def test_campaign(self, tmp_path):
        code, doc = run_cli(
            "campaign", "--probs", "0.1,0.3", "--policies", "ts,uniform", "--batch-sizes", "20,20",
            "--replications", 10, "--draws", 1000, "--seed", 4, "--out", tmp_path / "c",
        )
        assert code == 0
        assert [p["policy"] for p in doc["body"]["policies"]] == ["ts", "uniform"]
        assert (tmp_path / "c" / "summary.csv").exists()

    def test_analyze_and_export(self, store, tmp_path):
        cli_session(store, "wk", tmp_path)
        code, doc = run_cli("--store", store, "analyze", "--experiment", "wk", "--all-sources")
        assert code == 0 and doc["body"]["n_observations"] == 80
        records = tmp_path / "rec.csv"
        run_cli("--store", store, "export", "--experiment", "wk", "--what", "records", "--out", records)
        code, doc2 = run_cli("--store", store, "analyze", "--records", records, "--all-sources")
        assert doc2["body"] == doc["body"]
        code, text = run_cli("--store", store, "analyze", "--experiment", "wk", "--format", "text", "--all-sources")
        assert "arm_2" in text


@pytest.fixture
def client():
    return TestClient(create_app())


def _create(client, exp_id="s1", **extra):
    body = {"id": exp_id, "arm_labels": ["A", "B", "C", "D"], "policy": "hybrid", "seed": 3, **extra}
    return client.post("/create", json=body)


class TestService:
    def test_create_and_state(self, client):
        r = _create(client)
        assert r.status_code == 200 and r.json()["status"] == "ok"
        r = client.get("/state", params={"experiment": "s1"})
        body = r.json()["body"]
        assert body["batch_index"] == 0
        assert engine.restore(body["snapshot"]).config.id == "s1"

    def test_unknown_experiment(self, client):
        r = client.get("/state", params={"experiment": "ghost"})
        assert r.status_code == 404
        assert r.json()["status"] == "client-error" and r.json()["error"]["code"] == "unknown-experiment"

    @pytest.mark.parametrize(
        "body",
        [
            {"arm_labels": ["a", "b"]},
            {"id": "x", "arm_labels": ["a"]},
            {"id": "x", "arm_labels": ["a", "b"], "policy": "greedy"},
            {"id": "x", "arm_labels": ["a", "b"], "seed": "12"},
            {"id": "bad id!", "arm_labels": ["a", "b"]},
        ],
    )
    def test_create_validation(self, client, body):
        r = client.post("/create", json=body)
        assert r.status_code == 400 and r.json()["status"] == "client-error"

    def test_non_json_body(self, client):
        r = client.post("/assign", content=b"not json", headers={"content-type": "application/json"})
        assert r.status_code == 400

    def test_reward_validation(self, client):
        _create(client)
        client.post("/assign", json={"experiment": "s1", "participants": ["a", "b"]})
        r = client.post("/rewards", json={"experiment": "s1", "rewards": {"a": 3}})
        assert r.status_code == 400
        r = client.post("/rewards", json={"experiment": "s1", "rewards": {"zz": 1}})
        assert r.status_code == 400
        assert client.get("/state", params={"experiment": "s1"}).json()["body"]["pending"] == 2

    def test_idempotent_rewards(self, client):
        _create(client)
        client.post("/assign", json={"experiment": "s1", "participants": ["a", "b"]})
        headers = {"Idempotency-Key": "k1"}
        first = client.post("/rewards", json={"experiment": "s1", "rewards": {"a": 1}}, headers=headers)
        state1 = client.get("/state", params={"experiment": "s1"}).json()
        again = client.post("/rewards", json={"experiment": "s1", "rewards": {"a": 1}}, headers=headers)
        assert first.json() == again.json() and again.status_code == 200
        assert client.get("/state", params={"experiment": "s1"}).json() == state1
        # without the key the repeat is a real second call and conflicts
        r = client.post("/rewards", json={"experiment": "s1", "rewards": {"a": 1}})
        assert r.status_code == 409

    def test_idempotent_assign(self, client):
        _create(client)
        headers = {"Idempotency-Key": "open-1"}
        a = client.post("/assign", json={"experiment": "s1", "participants": ["a"]}, headers=headers)
        b = client.post("/assign", json={"experiment": "s1", "participants": ["a"]}, headers=headers)
        assert a.json() == b.json() and b.status_code == 200

    def test_concurrent_mutation_conflicts(self):
        store = MemoryStore()
        client = TestClient(create_app(store))
        _create(client)
        with store.locked("s1"):
            r = client.post("/assign", json={"experiment": "s1", "participants": ["a"]})
        assert r.status_code == 409 and r.json()["error"]["code"] == "concurrent-modification"
        assert client.get("/state", params={"experiment": "s1"}).json()["body"]["pending"] == 0

    def test_racing_assigns_apply_once(self):
        store = MemoryStore()
        client = TestClient(create_app(store))
        _create(client)
        codes = []

        def go(i):
            r = client.post("/assign", json={"experiment": "s1", "participants": [f"p{i}"]})
            codes.append(r.status_code)

        threads = [threading.Thread(target=go, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert codes.count(200) == 1 and set(codes) <= {200, 409}
        assert len(store.load("s1").records) == 1

    def test_prob_optimal(self, client):
        _create(client)
        r = client.get("/prob-optimal", params={"experiment": "s1", "draws": 100_000, "seed": 2})
        probs = r.json()["body"]["prob_optimal"]
        assert sum(probs) == pytest.approx(1)
        assert all(abs(p - 0.25) < 0.01 for p in probs)

    def test_session_matches_offline_engine(self, client):
        body = service_session(client, "wk")
        assert body["status"] == "closed"
        cfg = engine.ExperimentConfig("wk", tuple(ARMS), (1.0, 1.0), AllocationPolicy.hybrid(0.5, True), BATCHES)
        s = engine.create_experiment(cfg, SEED)
        for b in range(BATCHES):
            pending, asg = engine.open_batch(s, batch_ids(b))
            s = engine.record_rewards(pending, clicks_for(commands.assignments_doc(s, asg)["assignments"]))
        served = client.get("/state", params={"experiment": "wk"}).json()["body"]["snapshot"]
        assert engine.dumps(engine.restore(served)) == engine.dumps(s)
        assert len(s.records) == BATCHES * BATCH_SIZE


class TestIdempotencyCache:
    def test_server_errors_not_cached(self):
        cache = IdempotencyCache()
        calls = []

        def fn():
            calls.append(1)
            return 500, {}

        cache.run("x", "k", fn)
        cache.run("x", "k", fn)
        assert len(calls) == 2

    def test_keys_scoped_by_endpoint(self):
        cache = IdempotencyCache()
        assert cache.run("a", "k", lambda: (200, {"v": 1})) == (200, {"v": 1})
        assert cache.run("b", "k", lambda: (200, {"v": 2})) == (200, {"v": 2})
        assert cache.run("a", "k", lambda: (200, {"v": 3})) == (200, {"v": 1})


class TestFrontEndsAgree:
    def test_cli_and_service_snapshots_identical(self, tmp_path):
        cli_store = tmp_path / "cli"
        svc_store = tmp_path / "svc"
        cli_session(str(cli_store), "wk", tmp_path)
        service_session(TestClient(create_app(DirectoryStore(svc_store))), "wk")
        assert (cli_store / "wk.json").read_bytes() == (svc_store / "wk.json").read_bytes()
        json.loads((cli_store / "wk.json").read_text())
