import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

import cttriage as ct
from cttriage.errors import NotScored, UnknownStudy
from cttriage.service import Store, StudyRecord, TriageService, create_app
from cttriage.service.overlay import render_overlay
from cttriage.service.store import now
from cttriage.triage import grade_ct, rank_studies
from cttriage.volume import save_volume


@pytest.fixture()
def cohort_dir(tmp_path, desk_setup):
    d = tmp_path / "cohort"
    d.mkdir()
    for s in desk_setup.heldout_phantoms[:6] + desk_setup.heldout_phantoms[10:14]:
        save_volume(s.volume, d / f"{s.volume.study_id}.raw")
    return d


def make_service(tmp_path, models, workers=2):
    store = Store(tmp_path / "store")
    return TriageService(store, models, workers=workers)


def _toy_result(sid, prob=0.5, sev=0.2, ts=None):
    from cttriage.triage import TriageResult

    return TriageResult(study_id=sid, covid_probability=prob, severity=sev,
                        ct_grade=grade_ct(sev), per_lung_fractions=(sev, 0.0),
                        ingested_at=ts)


# --- store ---

def test_store_roundtrip_and_restart(tmp_path):
    store = Store(tmp_path / "s")
    rec = StudyRecord(study_id="a", ingested_at=now())
    store.put(rec)
    store.mark_processing("a")
    store.mark_scored("a", _toy_result("a", ts=rec.ingested_at), "studies/a/lesion.raw")
    store.mark_read("a", note="reviewed")

    reopened = Store(tmp_path / "s")
    got = reopened.get("a")
    assert got.status == "SCORED"
    assert got.read is True
    assert got.note == "reviewed"
    assert got.result.severity == 0.2


def test_store_interrupted_processing_fails_on_restart(tmp_path):
    store = Store(tmp_path / "s")
    store.put(StudyRecord(study_id="a", ingested_at=now()))
    store.mark_processing("a")
    reopened = Store(tmp_path / "s")
    assert reopened.get("a").status == "FAILED"


def test_store_errors(tmp_path):
    store = Store(tmp_path / "s")
    with pytest.raises(UnknownStudy):
        store.get("nope")
    store.put(StudyRecord(study_id="q", ingested_at=now()))
    with pytest.raises(NotScored):
        store.mark_read("q")


def test_record_invariants():
    with pytest.raises(ValueError):
        StudyRecord(study_id="a", ingested_at=0.0, status="SCORED")  # no result
    with pytest.raises(ValueError):
        StudyRecord(study_id="a", ingested_at=0.0, status="QUEUED", read=True)


def test_store_compaction(tmp_path):
    store = Store(tmp_path / "s")
    for i in range(5):
        store.put(StudyRecord(study_id=f"s{i}", ingested_at=now()))
        store.mark_failed(f"s{i}", "boom")
    assert len(store.log_path.read_text().splitlines()) == 10
    reopened = Store(tmp_path / "s")
    assert len(reopened.log_path.read_text().splitlines()) == 5
    assert len(reopened.snapshot()) == 5


# --- service lifecycle ---

def test_ingest_score_lifecycle(tmp_path, desk_setup, cohort_dir):
    service = make_service(tmp_path, desk_setup.models)
    paths = sorted(cohort_dir.glob("*.raw"))
    ids = [service.ingest(p) for p in paths]
    service.drain()
    for sid in ids:
        rec = service.store.get(sid)
        assert rec.status == "SCORED"
        assert rec.result is not None
        assert rec.result.ingested_at == rec.ingested_at


def test_ingest_idempotent(tmp_path, desk_setup, cohort_dir):
    service = make_service(tmp_path, desk_setup.models)
    path = sorted(cohort_dir.glob("*.raw"))[0]
    a = service.ingest(path)
    b = service.ingest(path)
    service.drain()
    assert a == b
    assert len(service.store.snapshot()) == 1


def test_ingest_corrupt_file_failed_record(tmp_path, desk_setup):
    bad = tmp_path / "corrupt.raw"
    bad.write_bytes(b"not a volume")
    service = make_service(tmp_path, desk_setup.models)
    sid = service.ingest(bad)
    rec = service.store.get(sid)
    assert rec.status == "FAILED"
    assert rec.error


def test_worklist_order_matches_rank_oracle(tmp_path, desk_setup, cohort_dir):
    service = make_service(tmp_path, desk_setup.models)
    for p in sorted(cohort_dir.glob("*.raw")):
        service.ingest(p)
    service.drain()
    for mode in ("identification", "severity"):
        view = service.worklist(mode)
        got = [item["study_id"] for item in view["items"]]
        snapshot = [r.result for r in service.store.snapshot()
                    if r.status == "SCORED" and not r.read]
        expected = [r.study_id for r in rank_studies(snapshot, mode)]
        assert got == expected
        assert [item["rank"] for item in view["items"]] == list(range(1, len(got) + 1))


def test_mark_read_requeues_next(tmp_path, desk_setup, cohort_dir):
    service = make_service(tmp_path, desk_setup.models)
    for p in sorted(cohort_dir.glob("*.raw")):
        service.ingest(p)
    service.drain()
    before = service.worklist("identification")["items"]
    unread_before = [i for i in before if not i["read"]]
    top = unread_before[0]["study_id"]
    service.mark_read(top, note="done")
    after = service.worklist("identification")["items"]
    unread_after = [i for i in after if not i["read"]]
    assert len(unread_after) == len(unread_before) - 1
    assert unread_after[0]["study_id"] == unread_before[1]["study_id"]
    assert unread_after[0]["rank"] == 1
    # read study listed after unread
    read_ids = [i["study_id"] for i in after if i["read"]]
    assert top in read_ids
    # idempotent
    service.mark_read(top)


def test_state_survives_restart(tmp_path, desk_setup, cohort_dir):
    service = make_service(tmp_path, desk_setup.models)
    for p in sorted(cohort_dir.glob("*.raw")):
        service.ingest(p)
    service.drain()
    view = service.worklist("severity")

    store2 = Store(tmp_path / "store")
    service2 = TriageService(store2, desk_setup.models)
    view2 = service2.worklist("severity")
    assert [i["study_id"] for i in view["items"]] == \
        [i["study_id"] for i in view2["items"]]
    assert [i["rank"] for i in view2["items"]] == list(range(1, len(view2["items"]) + 1))


def test_no_lost_updates_under_concurrent_reads(tmp_path):
    # every view must be internally consistent: a record never appears in
    # the unread section while itself carrying read=true
    import threading

    store = Store(tmp_path / "s")
    t0 = now()
    for i in range(30):
        store.put(StudyRecord(study_id=f"s{i:02d}", ingested_at=t0 + i))
        store.mark_scored(f"s{i:02d}", _toy_result(f"s{i:02d}", prob=i / 30,
                                                   ts=t0 + i), None)

    from cttriage.triage import rank_studies

    violations = []

    def reader():
        for _ in range(200):
            snapshot = store.snapshot()
            scored = {r.study_id: r for r in snapshot if r.status == "SCORED"}
            unread = [r.result for r in scored.values() if not r.read]
            for result in rank_studies(unread, "identification"):
                if scored[result.study_id].read:
                    violations.append(result.study_id)

    def writer():
        for i in range(30):
            store.mark_read(f"s{i:02d}")

    threads = [threading.Thread(target=reader) for _ in range(4)]
    threads.append(threading.Thread(target=writer))
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not violations
    assert all(store.get(f"s{i:02d}").read for i in range(30))


# --- overlay ---

def test_overlay_tint_exactly_on_support():
    rng = np.random.default_rng(0)
    vol = rng.uniform(-1000, 300, size=(3, 16, 16)).astype(np.float32)
    lesion = np.zeros((3, 16, 16), dtype=np.uint8)
    lesion[1, 4:8, 4:8] = 1
    img = render_overlay(vol, lesion, 1, tint_value=0.5)
    tinted = (img[:, :, 0] != img[:, :, 2]) | (img[:, :, 1] != img[:, :, 2])
    np.testing.assert_array_equal(tinted, lesion[1] != 0)
    # slice without lesion stays grayscale
    img0 = render_overlay(vol, lesion, 0, tint_value=0.5)
    assert (img0[:, :, 0] == img0[:, :, 1]).all()
    assert (img0[:, :, 1] == img0[:, :, 2]).all()


def test_overlay_hue_monotone_in_severity():
    vol = np.zeros((1, 8, 8), dtype=np.float32)
    lesion = np.ones((1, 8, 8), dtype=np.uint8)
    reds = []
    for sev in (0.1, 0.6):
        img = render_overlay(vol, lesion, 0, tint_value=sev)
        r = img[:, :, 0].astype(float).mean()
        g = img[:, :, 1].astype(float).mean()
        reds.append(r / (r + g))
    assert reds[1] > reds[0]


def test_overlay_deterministic_and_bounded():
    rng = np.random.default_rng(1)
    vol = rng.uniform(-1200, 500, size=(2, 8, 8)).astype(np.float32)
    lesion = (rng.random((2, 8, 8)) > 0.5).astype(np.uint8)
    a = render_overlay(vol, lesion, 0, 0.3)
    b = render_overlay(vol, lesion, 0, 0.3)
    np.testing.assert_array_equal(a, b)
    from cttriage.errors import SliceOutOfRange

    with pytest.raises(SliceOutOfRange):
        render_overlay(vol, lesion, 2, 0.3)


# --- HTTP API ---

@pytest.fixture()
def client(tmp_path, desk_setup, cohort_dir):
    service = make_service(tmp_path, desk_setup.models)
    app = create_app(service)
    with TestClient(app) as c:
        c.service = service
        c.cohort_dir = cohort_dir
        yield c


def _upload(client, path):
    hdr = path.with_suffix(".hdr")
    files = [("files", (path.name, io.BytesIO(path.read_bytes()))),
             ("files", (hdr.name, io.BytesIO(hdr.read_bytes())))]
    response = client.post("/studies", files=files)
    assert response.status_code == 200
    return response.json()["study_id"]


def test_api_lifecycle(client):
    paths = sorted(client.cohort_dir.glob("*.raw"))[:4]
    ids = [_upload(client, p) for p in paths]
    client.service.drain()

    view = client.get("/worklist", params={"mode": "identification"}).json()
    assert {i["study_id"] for i in view["items"]} == set(ids)
    assert view["pending"] == []

    study = client.get(f"/studies/{ids[0]}").json()
    assert study["status"] == "SCORED"
    assert 0.0 <= study["result"]["covid_probability"] <= 1.0
    assert study["result"]["ct_grade"] == grade_ct(study["result"]["severity"])

    top = view["items"][0]["study_id"]
    marked = client.post(f"/studies/{top}/read", json={"note": "ok"}).json()
    assert marked["read"] is True and marked["note"] == "ok"
    view2 = client.get("/worklist", params={"mode": "identification"}).json()
    unread = [i for i in view2["items"] if not i["read"]]
    assert top not in [i["study_id"] for i in unread]

    # overlay
    S = 8
    r = client.get(f"/studies/{top}/slices/{S // 2}/overlay")
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

    health = client.get("/healthz").json()
    assert health["status"] == "ok"
    assert health["models"]["lungs"] and health["models"]["multitask"]


def test_api_errors(client):
    assert client.get("/studies/missing").status_code == 404
    assert client.post("/studies/missing/read").status_code == 404
    assert client.get("/worklist", params={"mode": "bogus"}).status_code == 422

    path = sorted(client.cohort_dir.glob("*.raw"))[0]
    sid = _upload(client, path)
    client.service.drain()
    assert client.get(f"/studies/{sid}/slices/999/overlay").status_code == 400

    # marking an unscored study: ingest a file that will fail processing
    bad = client.cohort_dir / "garbage.raw"
    bad.write_bytes(b"junk")
    r = client.post("/studies", files=[("files", (bad.name, io.BytesIO(bad.read_bytes())))])
    bad_id = r.json()["study_id"]
    assert client.post(f"/studies/{bad_id}/read").status_code == 409


def test_api_upload_rejects_missing_volume(client):
    r = client.post("/studies", files=[("files", ("notes.txt", io.BytesIO(b"hi")))])
    assert r.status_code == 400
