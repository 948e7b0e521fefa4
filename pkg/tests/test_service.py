import json

import numpy as np
import pytest
from conftest import real_schema
from fastapi.testclient import TestClient

from treebagging.service import Service, create_app

ARMS = ["a", "b", "c"]


def body(**over):
    b = {
        "schema": real_schema(2).to_dict(),
        "arms": ARMS,
        "T": 120,
        "batch_size": 30,
        "learning_fraction": 0.5,
        "seed": 7,
        "bandit": {"S": 3, "tree_depth": 1},
        "pipeline": {"k": 2, "depths": [1]},
    }
    b.update(over)
    return b


def subjects(batch, n=30, seed=0):
    rng = np.random.default_rng([seed, batch])
    X = rng.uniform(-2, 2, (n, 2))
    return [{"id": f"s{batch}-{i}", "context": {"x0": float(x[0]), "x1": float(x[1])}} for i, x in enumerate(X)]


def outcomes_for(assignments):
    pay = {"a": 1.0, "b": 0.0, "c": 2.0}
    return {r["subject"]: pay[r["arm"]] for r in assignments}


@pytest.fixture
def client(tmp_path):
    return TestClient(create_app(tmp_path))


def test_lifecycle(client):
    exp_id = client.post("/experiments", json=body()).json()["id"]
    st = client.get(f"/experiments/{exp_id}").json()
    assert st["phase"] == "learning" and st["rows"] == 0 and st["t_learn"] == 60
    assert client.get(f"/experiments/{exp_id}/policy").status_code == 409

    first = client.post(f"/experiments/{exp_id}/batches", json={"subjects": subjects(1)}).json()
    assert first["phase"] == "learning"
    for r in first["assignments"]:
        assert r["propensities"] == pytest.approx({a: 1 / 3 for a in ARMS})
    assert client.post(f"/experiments/{exp_id}/batches", json={"subjects": subjects(9)}).status_code == 409
    client.post(f"/experiments/{exp_id}/batches/1/outcomes", json={"outcomes": outcomes_for(first["assignments"])})

    second = client.post(f"/experiments/{exp_id}/batches", json={"subjects": subjects(2)}).json()
    probs = np.array([list(r["propensities"].values()) for r in second["assignments"]])
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-9)
    assert np.all(probs >= second["floor"] - 1e-12)
    done = client.post(f"/experiments/{exp_id}/batches/2/outcomes",
                       json={"outcomes": outcomes_for(second["assignments"])}).json()
    assert done == {"batch": 2, "closed": True, "phase": "evaluation"}

    policy = client.get(f"/experiments/{exp_id}/policy").json()
    assert len(policy["selected_arms"]) == 2
    ev = client.post(f"/experiments/{exp_id}/batches", json={"subjects": subjects(3)}).json()
    assert ev["phase"] == "evaluation"
    probs = np.array([list(r["propensities"].values()) for r in ev["assignments"]])
    assert np.all(probs >= 0.3 / 3 - 1e-12)


def test_idempotent_create(client):
    a = client.post("/experiments", json=body(), headers={"Idempotency-Key": "k1"}).json()["id"]
    b = client.post("/experiments", json=body(), headers={"Idempotency-Key": "k1"}).json()["id"]
    c = client.post("/experiments", json=body()).json()["id"]
    assert a == b != c


def test_error_mapping(client):
    r = client.post("/experiments", content=b"{not json", headers={"content-type": "application/json"})
    assert r.status_code == 400
    assert client.post("/experiments", json=body(T=7)).status_code == 400
    assert client.post("/experiments", json=body(pipeline={"k": 5})).status_code == 400
    assert client.get("/experiments/nope").status_code == 404

    exp_id = client.post("/experiments", json=body()).json()["id"]
    bad = [{"id": "x", "context": {"x0": 1.0, "zz": 2.0}}]
    r = client.post(f"/experiments/{exp_id}/batches", json={"subjects": bad})
    assert r.status_code == 422 and "zz" in r.json()["detail"]
    assert client.post(f"/experiments/{exp_id}/batches", json={"subjects": []}).status_code == 422

    out = client.post(f"/experiments/{exp_id}/batches", json={"subjects": subjects(1)}).json()
    url = f"/experiments/{exp_id}/batches/1/outcomes"
    assert client.post(url, json={"outcomes": {"ghost": 1.0}}).status_code == 404
    assert client.post(url, json={"outcomes": {"s1-0": "many"}}).status_code == 422
    assert client.post(url, json={"outcomes": {"s1-0": 1e6}}).status_code == 422
    assert client.post(url, json={"outcomes": {"s1-0": 1.0}}).status_code == 200
    assert client.post(url, json={"outcomes": {"s1-0": 1.0}}).status_code == 409
    client.post(url, json={"outcomes": {k: v for k, v in outcomes_for(out["assignments"]).items() if k != "s1-0"}})
    assert client.post(url, json={"outcomes": {"s1-1": 1.0}}).status_code == 409


def test_event_log_is_ndjson(tmp_path):
    svc = Service(tmp_path)
    exp_id = svc.create(body())
    svc.open_batch(exp_id, subjects(1, n=4))
    lines = (tmp_path / f"{exp_id}.ndjson").read_text().splitlines()
    kinds = [json.loads(line)["type"] for line in lines]
    assert kinds == ["created", "batch-opened"] + ["assignment"] * 4


def test_restart_replays_state(tmp_path):
    def first_steps(svc):
        exp_id = svc.create(body(), idempotency_key="once")
        first = svc.open_batch(exp_id, subjects(1))
        svc.submit_outcomes(exp_id, 1, outcomes_for(first["assignments"]))
        second = svc.open_batch(exp_id, subjects(2))
        answers = list(outcomes_for(second["assignments"]).items())
        svc.submit_outcomes(exp_id, 2, dict(answers[:15]))
        return exp_id, dict(answers[15:])

    steady = Service(tmp_path / "steady")
    steady_id, steady_rest = first_steps(steady)
    crashed = Service(tmp_path / "crashed")
    exp_id, rest = first_steps(crashed)
    del crashed  # half of batch two answered, then the process dies

    reborn = Service(tmp_path / "crashed")
    assert reborn.get(exp_id).status() == {**steady.get(steady_id).status(), "id": exp_id}
    assert reborn.create(body(), idempotency_key="once") == exp_id
    assert rest == steady_rest
    reborn.submit_outcomes(exp_id, 2, rest)
    steady.submit_outcomes(steady_id, 2, steady_rest)
    assert reborn.policy(exp_id) == steady.policy(steady_id)
    assert reborn.open_batch(exp_id, subjects(3)) == steady.open_batch(steady_id, subjects(3))


def test_restart_gives_identical_next_learning_batch(tmp_path):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    live = Service(a_dir)
    exp_id = live.create(body(T=240))
    first = live.open_batch(exp_id, subjects(1))
    live.submit_outcomes(exp_id, 1, outcomes_for(first["assignments"]))
    b_dir.mkdir()
    (b_dir / f"{exp_id}.ndjson").write_bytes((a_dir / f"{exp_id}.ndjson").read_bytes())
    restarted = Service(b_dir)
    assert restarted.open_batch(exp_id, subjects(2)) == live.open_batch(exp_id, subjects(2))
