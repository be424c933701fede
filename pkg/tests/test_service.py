import json
import threading

import pytest
from fastapi.testclient import TestClient

from vidcur import service as service_mod
from vidcur.service import StudyStore, create_app


def study_body(study_id="s1", competitors=("modelA", "modelB"), prompts=2, votes=1, media_dir=None):
    prompts_list = [f"prompt {i}" for i in range(prompts)]
    media = [
        {"competitor": c, "prompt_index": i, "path": f"{c}_{i}.bin"}
        for c in competitors
        for i in range(prompts)
    ]
    return {
        "study_id": study_id,
        "competitors": list(competitors),
        "prompts": prompts_list,
        "axes": ["quality", "prompt_following"],
        "votes_per_task": votes,
        "seed": 5,
        "n_boot": 50,
        "media": media,
    }


@pytest.fixture()
def env(tmp_path):
    data_dir = tmp_path / "studies"
    media_root = tmp_path / "media"
    media_root.mkdir()
    for c in ("modelA", "modelB"):
        for i in range(4):
            (media_root / f"{c}_{i}.bin").write_bytes(f"video {c} {i}".encode())
    app = create_app(data_dir, media_root)
    return TestClient(app), data_dir, media_root


def hdr(annotator):
    return {"X-Annotator-Id": annotator}


class TestHealthAndCreate:
    def test_healthz(self, env):
        client, _, _ = env
        resp = client.get("/healthz")
        assert resp.status_code == 200
        assert resp.text == "ok"

    def test_create_valid(self, env):
        client, _, _ = env
        resp = client.post("/studies", json=study_body())
        assert resp.status_code == 201
        body = resp.json()
        assert body["study_id"] == "s1"
        # C(2,2)=1 pair x 2 prompts x 2 axes x 1 vote = 4 regular, no checks yet
        assert body["task_count"] == 4

    def test_task_count_with_checks(self, env):
        client, _, _ = env
        body = study_body(study_id="big", prompts=4, votes=3)
        resp = client.post("/studies", json=body)
        # 1 * 4 * 2 * 3 = 24 regular + 24 // 20 = 1 check
        assert resp.json()["task_count"] == 25

    def test_single_competitor_rejected(self, env):
        client, _, _ = env
        body = study_body(competitors=("only",), prompts=1)
        resp = client.post("/studies", json=body)
        assert resp.status_code == 422

    def test_duplicate_conflict(self, env):
        client, _, _ = env
        assert client.post("/studies", json=study_body()).status_code == 201
        assert client.post("/studies", json=study_body()).status_code == 409

    def test_missing_media_rejected(self, env):
        client, _, _ = env
        body = study_body()
        body["media"] = body["media"][:-1]
        resp = client.post("/studies", json=body)
        assert resp.status_code == 422


class TestNextTask:
    def test_payload_shape_and_blinding(self, env):
        client, _, _ = env
        client.post("/studies", json=study_body())
        resp = client.get("/studies/s1/tasks/next", headers=hdr("ann1"))
        assert resp.status_code == 200
        task = resp.json()
        assert set(task) == {"task_id", "prompt", "axis", "question", "left_media", "right_media"}
        assert task["left_media"] != task["right_media"]
        assert task["left_media"].startswith("/media/s1/")
        # No competitor names or attention-check fields on the wire.
        raw = json.dumps(task)
        assert "modelA" not in raw and "modelB" not in raw
        assert "attention" not in raw and "expected" not in raw

    def test_unknown_study_404(self, env):
        client, _, _ = env
        assert client.get("/studies/nope/tasks/next", headers=hdr("a")).status_code == 404

    def test_exhaustion_204(self, env):
        client, _, _ = env
        client.post("/studies", json=study_body(prompts=1))  # 2 tasks
        for _ in range(2):
            task = client.get("/studies/s1/tasks/next", headers=hdr("a")).json()
            vote = {"task_id": task["task_id"], "choice": "left", "latency_ms": 50}
            assert client.post("/studies/s1/votes", json=vote, headers=hdr("a")).status_code == 200
        assert client.get("/studies/s1/tasks/next", headers=hdr("a")).status_code == 204

    def test_concurrent_annotators_get_disjoint_leases(self, env):
        client, _, _ = env
        client.post("/studies", json=study_body(prompts=4))
        seen: dict[str, str] = {}
        errors = []

        def poll(name):
            try:
                resp = client.get("/studies/s1/tasks/next", headers=hdr(name))
                seen[name] = resp.json()["task_id"]
            except Exception as e:  # pragma: no cover
                errors.append(e)

        threads = [threading.Thread(target=poll, args=(f"ann{i}",)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        assert len(set(seen.values())) == len(seen)

    def test_repolling_same_annotator_reoffers_lease(self, env):
        client, _, _ = env
        client.post("/studies", json=study_body(prompts=4))
        t1 = client.get("/studies/s1/tasks/next", headers=hdr("a")).json()["task_id"]
        t2 = client.get("/studies/s1/tasks/next", headers=hdr("a")).json()["task_id"]
        assert t1 == t2

    def test_release_moves_annotator_on_but_frees_task(self, env):
        client, _, _ = env
        client.post("/studies", json=study_body(prompts=4))
        t1 = client.get("/studies/s1/tasks/next", headers=hdr("a")).json()["task_id"]
        resp = client.post(f"/studies/s1/leases/{t1}/release", headers=hdr("a"))
        assert resp.status_code == 200 and resp.json()["released"] is True
        t2 = client.get("/studies/s1/tasks/next", headers=hdr("a")).json()["task_id"]
        assert t2 != t1  # skipper is never re-offered the released task
        other = client.get("/studies/s1/tasks/next", headers=hdr("b")).json()["task_id"]
        assert other == t1  # but it is immediately available to others

    def test_release_unknown_task(self, env):
        client, _, _ = env
        client.post("/studies", json=study_body())
        assert client.post("/studies/s1/leases/bogus/release", headers=hdr("a")).status_code == 404


class TestVotes:
    def create(self, client, **kw):
        client.post("/studies", json=study_body(**kw))

    def next_task(self, client, ann):
        return client.get("/studies/s1/tasks/next", headers=hdr(ann)).json()

    def ledger_lines(self, data_dir):
        path = data_dir / "s1" / "votes.jsonl"
        return [l for l in path.read_text().splitlines() if l.strip()]

    def test_vote_appends_one_line(self, env):
        client, data_dir, _ = env
        self.create(client)
        task = self.next_task(client, "a")
        resp = client.post(
            "/studies/s1/votes",
            json={"task_id": task["task_id"], "choice": "left", "latency_ms": 123},
            headers=hdr("a"),
        )
        assert resp.status_code == 200
        assert resp.json() == {"accepted": True, "duplicate": False}
        lines = self.ledger_lines(data_dir)
        assert len(lines) == 1
        row = json.loads(lines[0])
        assert row["task_id"] == task["task_id"]
        assert row["annotator_id"] == "a"
        assert row["latency_ms"] == 123

    def test_duplicate_vote_idempotent(self, env):
        client, data_dir, _ = env
        self.create(client)
        task = self.next_task(client, "a")
        vote = {"task_id": task["task_id"], "choice": "left"}
        assert client.post("/studies/s1/votes", json=vote, headers=hdr("a")).json()["duplicate"] is False
        second = client.post("/studies/s1/votes", json=vote, headers=hdr("a"))
        assert second.status_code == 200
        assert second.json()["duplicate"] is True
        assert len(self.ledger_lines(data_dir)) == 1

    def test_unknown_task_404(self, env):
        client, _, _ = env
        self.create(client)
        resp = client.post(
            "/studies/s1/votes", json={"task_id": "bogus", "choice": "left"}, headers=hdr("a")
        )
        assert resp.status_code == 404

    def test_bad_choice_422(self, env):
        client, _, _ = env
        self.create(client)
        task = self.next_task(client, "a")
        resp = client.post(
            "/studies/s1/votes", json={"task_id": task["task_id"], "choice": "both"}, headers=hdr("a")
        )
        assert resp.status_code == 422

    def test_active_lease_blocks_other_annotator(self, env):
        client, _, _ = env
        self.create(client)
        task = self.next_task(client, "holder")
        resp = client.post(
            "/studies/s1/votes", json={"task_id": task["task_id"], "choice": "left"}, headers=hdr("thief")
        )
        assert resp.status_code == 409

    def test_vote_after_lease_expiry_accepted(self, env, monkeypatch):
        client, _, _ = env
        self.create(client)
        monkeypatch.setattr(service_mod, "LEASE_SECONDS", -1.0)  # leases expire instantly
        task = self.next_task(client, "holder")
        resp = client.post(
            "/studies/s1/votes", json={"task_id": task["task_id"], "choice": "right"}, headers=hdr("late")
        )
        assert resp.status_code == 200


class TestRankingAndDurability:
    def seed_votes(self, client, winner="left", n=None):
        client.post("/studies", json=study_body(prompts=4, votes=1))
        cast = 0
        while True:
            resp = client.get("/studies/s1/tasks/next", headers=hdr("a"))
            if resp.status_code == 204 or (n is not None and cast >= n):
                break
            task = resp.json()
            client.post(
                "/studies/s1/votes",
                json={"task_id": task["task_id"], "choice": winner},
                headers=hdr("a"),
            )
            cast += 1
        return cast

    def test_no_votes_initial_ratings(self, env):
        client, _, _ = env
        client.post("/studies", json=study_body())
        table = client.get("/studies/s1/ranking").json()
        assert all(r["mean"] == 1000.0 for r in table["ratings"])
        assert table["vote_count"] == 0

    def test_ranking_stable_between_calls(self, env):
        client, _, _ = env
        self.seed_votes(client)
        r1 = client.get("/studies/s1/ranking").json()
        r2 = client.get("/studies/s1/ranking").json()
        assert r1 == r2

    def test_replay_reconstructs_identical_state(self, env):
        client, data_dir, media_root = env
        self.seed_votes(client)
        before = client.get("/studies/s1/ranking").json()
        # Crash: throw the app away, rebuild everything from disk.
        reborn = TestClient(create_app(data_dir, media_root))
        after = reborn.get("/studies/s1/ranking").json()
        assert after == before

    def test_rank_excludes_flagged_annotators_listed(self, env):
        client, _, _ = env
        client.post("/studies", json=study_body(prompts=4, votes=1))
        table = client.get("/studies/s1/ranking").json()
        assert table["flagged_annotators"] == []


class TestMedia:
    def test_serves_bytes(self, env):
        client, _, _ = env
        client.post("/studies", json=study_body())
        task = client.get("/studies/s1/tasks/next", headers=hdr("a")).json()
        resp = client.get(task["left_media"])
        assert resp.status_code == 200
        assert resp.content.startswith(b"video model")

    def test_degraded_side_falls_back_to_clean_media(self, env, tmp_path):
        client, data_dir, media_root = env
        client.post("/studies", json=study_body(study_id="s2", prompts=4, votes=3))
        store: StudyStore = client.app.state.store
        state = store.get("s2")
        check = next(t for t in state.tasks if t.is_attention_check)
        for side in ("left", "right"):
            resp = client.get(f"/media/s2/{check.task_id}/{side}")
            assert resp.status_code == 200

    def test_unknown_task_media_404(self, env):
        client, _, _ = env
        client.post("/studies", json=study_body())
        assert client.get("/media/s1/deadbeef/left").status_code == 404

    def test_traversal_blocked(self, env, tmp_path):
        client, data_dir, media_root = env
        body = study_body(study_id="evil", prompts=1)
        body["media"] = [
            {"competitor": c, "prompt_index": 0, "path": "../../etc/passwd"}
            for c in ("modelA", "modelB")
        ]
        client.post("/studies", json=body)
        task = client.get("/studies/evil/tasks/next", headers=hdr("a")).json()
        assert client.get(task["left_media"]).status_code == 404
