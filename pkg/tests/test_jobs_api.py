"""Job specs, persistence, worker lifecycle, and the HTTP API."""

import time
from pathlib import Path

import numpy as np
import pytest
import requests

from inpaint_lab.errors import ValidationError
from inpaint_lab.jobs import JobSpec, JobStore, Worker, run_job_spec
from inpaint_lab.masks import Box, BoxTrajectory
from inpaint_lab.model import InpaintUNet, ModelConfig, save_checkpoint
from inpaint_lab.nd.vten import save_vten
from inpaint_lab.service import ApiServer
from inpaint_lab.synth import SceneConfig, make_scene


@pytest.fixture(scope="module")
def assets(tmp_path_factory):
    """Checkpoint, source video, trajectory, and mask files for job specs."""
    root = tmp_path_factory.mktemp("assets")
    model = InpaintUNet(ModelConfig(base_channels=8, head_dim=4, init_seed=5))
    ckpt = root / "model.ckpt"
    save_checkpoint(ckpt, model, step=0)
    scene = make_scene(3, SceneConfig(frames=6, height=16, width=16, n_objects=1))
    video = root / "video.vten"
    save_vten(video, scene.video)
    frame = root / "frame.vten"
    save_vten(frame, scene.video[0])
    traj = BoxTrajectory(keys={1: Box(0.1, 0.1, 0.4, 0.4), 6: Box(0.5, 0.5, 0.8, 0.8)},
                         length=6)
    traj_path = root / "traj.json"
    traj_path.write_text(traj.to_json())
    mask = root / "mask.vten"
    save_vten(mask, scene.object_mask.data)
    return {"root": root, "ckpt": ckpt, "video": video, "frame": frame,
            "traj": traj_path, "mask": mask}


def base_spec(assets, **over):
    obj = {
        "task": "insert",
        "mode": "t2v",
        "video": str(assets["video"]),
        "checkpoint": str(assets["ckpt"]),
        "prompt": ["red", "circle"],
        "trajectory": str(assets["traj"]),
        "sampler": {"steps": 2},
        "seed": 1,
    }
    obj.update(over)
    return obj


class TestJobSpecValidation:
    def test_valid_insert(self, assets):
        spec = JobSpec.from_dict(base_spec(assets))
        assert spec.task == "insert"

    def test_missing_video_named(self, assets):
        with pytest.raises(ValidationError) as exc:
            JobSpec.from_dict(base_spec(assets, video="/nope/missing.vten"))
        assert "video" in exc.value.field_errors

    def test_unknown_task(self, assets):
        with pytest.raises(ValidationError) as exc:
            JobSpec.from_dict(base_spec(assets, task="paint"))
        assert "task" in exc.value.field_errors

    def test_edit_requires_mask(self, assets):
        with pytest.raises(ValidationError) as exc:
            JobSpec.from_dict(base_spec(assets, task="edit", mask=None))
        assert "mask" in exc.value.field_errors

    def test_remove_forbids_object_prompt(self, assets):
        with pytest.raises(ValidationError) as exc:
            JobSpec.from_dict(base_spec(assets, task="remove",
                                        prompt=["red", "circle"]))
        assert "prompt" in exc.value.field_errors

    def test_remove_background_ok(self, assets):
        spec = JobSpec.from_dict(base_spec(assets, task="remove", prompt=["background"],
                                           mask=str(assets["mask"]), trajectory=None))
        assert spec.prompt == ["background"]

    def test_i2v_requires_first_frame(self, assets):
        with pytest.raises(ValidationError) as exc:
            JobSpec.from_dict(base_spec(assets, mode="i2v"))
        assert "first_frame" in exc.value.field_errors

    def test_camera_range(self, assets):
        with pytest.raises(ValidationError) as exc:
            JobSpec.from_dict(base_spec(assets, camera=[2.0, 0.0, 1.0]))
        assert "camera" in exc.value.field_errors

    def test_unknown_field(self, assets):
        with pytest.raises(ValidationError) as exc:
            JobSpec.from_dict(base_spec(assets, bogus=1))
        assert "bogus" in exc.value.field_errors

    def test_distinct_ids_for_identical_specs(self, assets, tmp_path):
        store = JobStore(tmp_path)
        spec = JobSpec.from_dict(base_spec(assets))
        a = store.submit(spec)
        b = store.submit(spec)
        assert a.id != b.id
        assert a.id.split("-")[0] == b.id.split("-")[0]  # same content hash


class TestRunJobSpec:
    def test_insert_job_runs(self, assets, tmp_path):
        spec = JobSpec.from_dict(base_spec(assets))
        out, report, frames = run_job_spec(spec, tmp_path / "job")
        assert out.shape == (6, 3, 16, 16)
        assert len(frames) == 6
        assert (tmp_path / "job" / "output.vten").exists()
        assert (tmp_path / "job" / "metrics.json").exists()

    def test_outside_mask_is_source(self, assets, tmp_path):
        from inpaint_lab.nd.vten import load_vten

        spec = JobSpec.from_dict(base_spec(assets))
        out, _, _ = run_job_spec(spec, tmp_path / "job2")
        video = load_vten(assets["video"])
        from inpaint_lab.masks import interpolate_boxes, rasterize

        traj = BoxTrajectory.from_json(Path(assets["traj"]).read_text())
        region = rasterize(interpolate_boxes(traj, 6), 16, 16)
        outside = np.broadcast_to(region.data == 0, out.shape)
        assert np.array_equal(out[outside], video[outside])

    def test_brush_repeats_still_frame(self, assets, tmp_path):
        spec = JobSpec.from_dict(base_spec(assets, task="brush",
                                           video=str(assets["frame"]), frames=4))
        out, _, frames = run_job_spec(spec, tmp_path / "job3")
        assert out.shape[0] == 4

    def test_i2v_first_frame_file_interface(self, assets, tmp_path):
        """An externally inpainted first frame is pinned into the output."""
        from inpaint_lab.nd.vten import load_vten

        first = load_vten(assets["frame"]) * 0.5  # a recognizably different frame
        first_path = tmp_path / "inpainted0.vten"
        from inpaint_lab.nd.vten import save_vten

        save_vten(first_path, first.astype(np.float32))
        spec = JobSpec.from_dict(base_spec(assets, mode="i2v",
                                           first_frame=str(first_path)))
        out, _, _ = run_job_spec(spec, tmp_path / "job4")
        assert np.array_equal(out[0], first.astype(np.float32))

    def test_deterministic_rerun(self, assets, tmp_path):
        from inpaint_lab.nd.vten import load_vten

        spec = JobSpec.from_dict(base_spec(assets))
        run_job_spec(spec, tmp_path / "r1")
        run_job_spec(spec, tmp_path / "r2")
        a = load_vten(tmp_path / "r1" / "output.vten")
        b = load_vten(tmp_path / "r2" / "output.vten")
        assert np.array_equal(a, b)


class TestPersistence:
    def test_atomic_status_and_recover(self, assets, tmp_path):
        store = JobStore(tmp_path)
        spec = JobSpec.from_dict(base_spec(assets))
        rec = store.submit(spec)
        rec.status = "running"
        store.write_record(rec)
        # a crashed process left the job "running"; recovery re-queues it
        worker = Worker(store)
        worker.recover()
        assert store.read_record(rec.id).status == "queued"
        assert worker.queue.qsize() == 1

    def test_record_roundtrip(self, assets, tmp_path):
        store = JobStore(tmp_path)
        spec = JobSpec.from_dict(base_spec(assets))
        rec = store.submit(spec)
        loaded = store.read_record(rec.id)
        assert loaded.id == rec.id
        assert loaded.status == "queued"
        spec2 = store.read_spec(rec.id)
        assert spec2.to_dict() == spec.to_dict()


@pytest.fixture(scope="module")
def api(assets, tmp_path_factory):
    home = tmp_path_factory.mktemp("home")
    server = ApiServer(home)
    host, port = server.start(port=0)
    yield f"http://{host}:{port}", server
    server.stop()


def wait_status(base, job_id, want, timeout=120):
    deadline = time.time() + timeout
    while time.time() < deadline:
        rec = requests.get(f"{base}/api/jobs/{job_id}").json()
        if rec["status"] in (want, "failed"):
            return rec
        time.sleep(0.2)
    raise TimeoutError(f"job {job_id} never reached {want}")


class TestHttpApi:
    def test_vocab(self, api):
        base, _ = api
        body = requests.get(f"{base}/api/vocab").json()
        assert body["tokens"][0] == "<sos>"
        assert set(body["colors"]) == {"red", "green", "blue", "yellow"}

    def test_job_lifecycle(self, api, assets):
        base, _ = api
        resp = requests.post(f"{base}/api/jobs", json=base_spec(assets))
        assert resp.status_code == 202
        job_id = resp.json()["id"]
        listing = requests.get(f"{base}/api/jobs").json()
        assert any(r["id"] == job_id for r in listing)
        # frames 404 until done
        assert requests.get(f"{base}/api/jobs/{job_id}/frames/0.png").status_code == 404
        rec = wait_status(base, job_id, "done")
        assert rec["status"] == "done", rec.get("error")
        assert rec["artifacts"]["frames"] == 6
        img = requests.get(f"{base}/api/jobs/{job_id}/frames/0.png")
        assert img.status_code == 200
        assert img.headers["Content-Type"] == "image/png"
        assert img.content[:8] == b"\x89PNG\r\n\x1a\n"
        from PIL import Image
        import io

        pic = Image.open(io.BytesIO(img.content))
        assert pic.size == (16, 16)

    def test_malformed_spec_400_names_field(self, api, assets):
        base, _ = api
        resp = requests.post(f"{base}/api/jobs",
                             json=base_spec(assets, video="/missing.vten"))
        assert resp.status_code == 400
        assert "video" in resp.json()["errors"]

    def test_unknown_job_404(self, api):
        base, _ = api
        assert requests.get(f"{base}/api/jobs/nope-1").status_code == 404

    def test_delete_semantics(self, api, assets):
        base, server = api
        # completed jobs cannot be deleted
        done = [r for r in requests.get(f"{base}/api/jobs").json()
                if r["status"] == "done"]
        if done:
            assert requests.delete(f"{base}/api/jobs/{done[0]['id']}").status_code == 409
        assert requests.delete(f"{base}/api/jobs/ghost-9").status_code == 404

    def test_status_reads_do_not_block(self, api, assets):
        base, _ = api
        spec = base_spec(assets, sampler={"steps": 8}, seed=9)
        job_id = requests.post(f"{base}/api/jobs", json=spec).json()["id"]
        t0 = time.time()
        for _ in range(5):
            requests.get(f"{base}/api/jobs/{job_id}")
        assert time.time() - t0 < 2.0
        wait_status(base, job_id, "done")

    def test_api_and_cli_outputs_identical(self, api, assets, tmp_path):
        from inpaint_lab.nd.vten import load_vten

        base, server = api
        spec = base_spec(assets, seed=31)
        job_id = requests.post(f"{base}/api/jobs", json=spec).json()["id"]
        rec = wait_status(base, job_id, "done")
        assert rec["status"] == "done"
        run_job_spec(JobSpec.from_dict(spec), tmp_path / "cli")
        via_api = load_vten(server.store.job_dir(job_id) / "output.vten")
        via_cli = load_vten(tmp_path / "cli" / "output.vten")
        assert np.array_equal(via_api, via_cli)
