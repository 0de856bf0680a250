"""Job specs, on-disk persistence, FIFO worker, and the inference runner."""

from __future__ import annotations

import hashlib
import json
import os
import queue
import tempfile
import threading
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .masks import BoxTrajectory, MaskSequence, frame_mask, interpolate_boxes, rasterize
from .metrics import assemble_report, temp_cons
from .model import BranchKind, CamParams, load_checkpoint
from .modulate import ModulationConfig, ObjectBinding, attach_to_sampler
from .diffusion import ConditionBundle, DiffusionSchedule, SamplerConfig, ddim_sample
from .longvideo import LongVideoConfig, LongVideoJob, NoiseInitConfig, run_strategy
from .masks import FrameMaskMode, compose_condition
from .nd.vten import load_vten, save_vten
from .synth import Vocabulary

TASKS = ("insert", "complete", "edit", "remove", "brush")
MODES = ("t2v", "i2v", "k2v", "long")

HOME_ENV = "INPAINT_LAB_HOME"


def default_home():
    return Path(os.environ.get(HOME_ENV, Path.cwd() / "inpaint_lab_home"))


@dataclass
class JobSpec:
    task: str
    mode: str
    video: str
    checkpoint: str
    prompt: list = field(default_factory=list)
    trajectory: str | dict | None = None
    mask: str | None = None
    first_frame: str | None = None
    camera: list | None = None
    modulation: dict | None = None
    sampler: dict | None = None
    long: dict | None = None
    frames: int = 8          # brush: length of the repeated still
    seed: int = 0

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise ValidationError({"spec": "body must be a JSON object"})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError({k: "unknown field" for k in sorted(unknown)})
        try:
            spec = cls(**obj)
        except TypeError as exc:
            raise ValidationError({"spec": str(exc)}) from exc
        spec.validate()
        return spec

    def to_dict(self):
        return {
            "task": self.task, "mode": self.mode, "video": self.video,
            "checkpoint": self.checkpoint, "prompt": list(self.prompt),
            "trajectory": self.trajectory, "mask": self.mask,
            "first_frame": self.first_frame, "camera": self.camera,
            "modulation": self.modulation, "sampler": self.sampler,
            "long": self.long, "frames": self.frames, "seed": self.seed,
        }

    def validate(self):
        errors = {}
        if self.task not in TASKS:
            errors["task"] = f"must be one of {TASKS}"
        if self.mode not in MODES:
            errors["mode"] = f"must be one of {MODES}"
        if not isinstance(self.prompt, list) or any(
                not isinstance(p, str) for p in self.prompt):
            errors["prompt"] = "must be a list of token strings"
        else:
            bad = [p for p in self.prompt if p not in Vocabulary.TOKENS]
            if bad:
                errors["prompt"] = f"unknown tokens {bad}"
        for name in ("video", "checkpoint"):
            path = getattr(self, name)
            if not path or not Path(path).exists():
                errors[name] = "file not found"
        for name in ("mask", "first_frame"):
            path = getattr(self, name)
            if path and not Path(path).exists():
                errors[name] = "file not found"
        if isinstance(self.trajectory, str) and not Path(self.trajectory).exists():
            errors["trajectory"] = "file not found"
        if self.task in ("insert", "brush") and self.trajectory is None and self.mask is None:
            errors["trajectory"] = "insert/brush needs a trajectory or mask"
        if self.task == "edit" and not self.mask:
            errors["mask"] = "edit requires a precise object mask file"
        if self.task == "remove":
            extra = [p for p in self.prompt if p != "background"]
            if extra:
                errors["prompt"] = "remove allows only the 'background' token"
        if self.task == "brush" and self.frames < 4:
            errors["frames"] = "brush needs frames >= 4"
        if self.mode == "i2v" and not self.first_frame and self.task != "brush":
            errors["first_frame"] = "i2v mode needs an inpainted first frame"
        if self.camera is not None:
            try:
                CamParams(*[float(v) for v in self.camera])
            except Exception:
                errors["camera"] = "must be [cx, cy, cz] within ranges [-1,1]^2 x [0.5,2]"
        if self.task in ("insert", "edit", "brush") and not errors.get("prompt"):
            words = [p for p in self.prompt
                     if p in Vocabulary.COLORS or p in Vocabulary.SHAPES]
            if not words:
                errors["prompt"] = "insertion-style tasks need object words"
        if errors:
            raise ValidationError(errors)

    def content_hash(self):
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:10]


@dataclass
class JobRecord:
    id: str
    status: str = "queued"        # queued -> running -> done | failed
    created_at: float = 0.0
    started_at: float | None = None
    finished_at: float | None = None
    progress: dict = field(default_factory=lambda: {"step": 0, "total": 0})
    error: str | None = None
    artifacts: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "id": self.id, "status": self.status,
            "created_at": self.created_at, "started_at": self.started_at,
            "finished_at": self.finished_at, "progress": self.progress,
            "error": self.error, "artifacts": self.artifacts,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


class JobStore:
    """Directory-backed job records; one mutating worker, many readers."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "jobs").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._counter = self._scan_counter()

    def _scan_counter(self):
        best = 0
        for d in (self.root / "jobs").iterdir():
            tail = d.name.rsplit("-", 1)[-1]
            if tail.isdigit():
                best = max(best, int(tail))
        return best

    def job_dir(self, job_id):
        return self.root / "jobs" / job_id

    def submit(self, spec: JobSpec) -> JobRecord:
        with self._lock:
            self._counter += 1
            job_id = f"{spec.content_hash()}-{self._counter}"
        jdir = self.job_dir(job_id)
        jdir.mkdir(parents=True)
        (jdir / "frames").mkdir()
        (jdir / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
        record = JobRecord(id=job_id, created_at=time.time())
        self.write_record(record)
        return record

    def write_record(self, record: JobRecord):
        _atomic_write(self.job_dir(record.id) / "status.json",
                      json.dumps(record.to_dict(), indent=2))

    def read_record(self, job_id) -> JobRecord | None:
        path = self.job_dir(job_id) / "status.json"
        if not path.exists():
            return None
        return JobRecord.from_dict(json.loads(path.read_text()))

    def read_spec(self, job_id) -> JobSpec | None:
        path = self.job_dir(job_id) / "spec.json"
        if not path.exists():
            return None
        return JobSpec.from_dict(json.loads(path.read_text()))

    def list_records(self):
        records = []
        for d in sorted((self.root / "jobs").iterdir()):
            rec = self.read_record(d.name)
            if rec:
                records.append(rec)
        records.sort(key=lambda r: r.created_at)
        return records

    def delete(self, job_id):
        import shutil

        shutil.rmtree(self.job_dir(job_id))


# -- runner --------------------------------------------------------------

_MODEL_CACHE = {}
_MODEL_CACHE_LOCK = threading.Lock()


def _load_model(path):
    key = (str(path), os.path.getmtime(path))
    with _MODEL_CACHE_LOCK:
        if key not in _MODEL_CACHE:
            _MODEL_CACHE.clear()
            _MODEL_CACHE[key] = load_checkpoint(path)
        return _MODEL_CACHE[key]


def _prompt_ids(words):
    return [Vocabulary.SOS, *[Vocabulary.id(w) for w in words], Vocabulary.EOS]


def _object_spans(words):
    """Spans of color+shape word runs inside the wrapped prompt."""
    spans = []
    i = 0
    while i < len(words):
        if words[i] in Vocabulary.COLORS or words[i] in Vocabulary.SHAPES:
            j = i
            while j < len(words) and (words[j] in Vocabulary.COLORS or words[j] in Vocabulary.SHAPES):
                j += 1
            spans.append((i + 1, j + 1))  # +1 for <sos>
            i = j
        else:
            i += 1
    return spans


def prepare_inputs(spec: JobSpec):
    """Resolve the spec into arrays: video, masks, prompt, bindings, branch, mode."""
    video = load_vten(spec.video).astype(np.float32)
    if video.ndim == 3:
        video = video[None]
    if spec.task == "brush":
        video = np.repeat(video[:1], spec.frames, axis=0)
    n, _, h, w = video.shape

    boxes = None
    if spec.trajectory is not None:
        obj = (json.loads(Path(spec.trajectory).read_text())
               if isinstance(spec.trajectory, str) else spec.trajectory)
        traj = BoxTrajectory.from_json(obj)
        boxes = interpolate_boxes(traj, n)
        region = rasterize(boxes, h, w)
    else:
        arr = load_vten(spec.mask)
        if arr.ndim == 3:
            arr = arr[:, None]
        region = MaskSequence((np.asarray(arr) > 0.5).astype(np.uint8))
        if region.frames == 1 and n > 1:
            region = MaskSequence(np.repeat(region.data, n, axis=0))

    if spec.first_frame:
        first = load_vten(spec.first_frame).astype(np.float32)
        if first.ndim == 4:
            first = first[0]
        video = video.copy()
        video[0] = first

    branch = BranchKind.INSERTION if spec.task in ("insert", "edit", "brush") \
        else BranchKind.COMPLETION
    words = list(spec.prompt)
    if branch is BranchKind.COMPLETION and not words:
        words = ["background"]
    tokens = _prompt_ids(words)

    bindings = []
    if boxes is not None and branch is BranchKind.INSERTION:
        for span in _object_spans(words):
            bindings.append(ObjectBinding(span=span, boxes=boxes))
    return video, region, tokens, bindings, branch


def run_job_spec(spec: JobSpec, out_dir, progress_cb=None):
    """Execute a validated spec; writes frames, output.vten, metrics.json."""
    model, header = _load_model(spec.checkpoint)
    schedule = DiffusionSchedule(model.config.t_scale)
    video, region, tokens, bindings, branch = prepare_inputs(spec)
    n = video.shape[0]
    sampler_kwargs = dict(spec.sampler or {})
    sampler = SamplerConfig(seed=spec.seed, **sampler_kwargs)
    cam = CamParams(*[float(v) for v in spec.camera]) if spec.camera else None

    hook = None
    if spec.modulation is not None and bindings:
        mod_cfg = ModulationConfig.from_json(spec.modulation, bindings=bindings)
        hook = attach_to_sampler(mod_cfg, tokens, schedule.t_train)

    mode_map = {"t2v": FrameMaskMode.T2V, "i2v": FrameMaskMode.I2V, "k2v": FrameMaskMode.K2V}
    if spec.task == "brush" and spec.first_frame:
        base_mode = FrameMaskMode.I2V
    else:
        base_mode = mode_map.get(spec.mode, FrameMaskMode.T2V)

    if spec.mode == "long":
        long_cfg = dict(spec.long or {})
        noise_init = long_cfg.pop("noise_init", {})
        cfg = LongVideoConfig(
            window=int(long_cfg.get("window", model.config.window)),
            strategy=long_cfg.get("strategy", "keyframe_inbetween"),
            overlap=long_cfg.get("overlap"),
            noise_init=NoiseInitConfig(
                enabled=bool(noise_init.get("enabled", True)),
                tau_frac=float(noise_init.get("tau_frac", 0.9)),
                sigma_frac=float(noise_init.get("sigma", 0.25)),
            ),
        )
        job = LongVideoJob(video=video, region_mask=region, tokens=tokens, branch=branch,
                           base_mode=base_mode, cam=cam,
                           attn_hook_factory=(hook.for_frames if hook else None))
        out = run_strategy(model, job, cfg, sampler, schedule)
    else:
        flags = frame_mask(base_mode, n)
        m, x_m = compose_condition(video, region, flags)
        cond = ConditionBundle(m=m, x_m=x_m, tokens=tokens, branch=branch, cam=cam,
                               attn_hook=hook, known_flags=flags)
        out = ddim_sample(model, cond, sampler, schedule, progress=progress_cb)
        mask_f = region.data.astype(np.float32)
        for f, known in enumerate(flags):
            if known:
                continue
            out[f] = mask_f[f] * out[f] + (1.0 - mask_f[f]) * video[f]

    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    save_vten(out_dir / "output.vten", out)
    frame_paths = write_frames_png(out, out_dir / "frames")
    scalars = {"proxy-temp-cons": temp_cons(out, reference="previous"),
               "proxy-temp-cons-f1": temp_cons(out, reference="first")}
    report = assemble_report(job_id=out_dir.name, scalars=scalars,
                             checkpoint=spec.checkpoint, seeds=[spec.seed],
                             out_dir=out_dir)
    return out, report, frame_paths


def write_frames_png(video, out_dir):
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    arr = (np.clip(np.asarray(video), -1, 1) * 127.5 + 127.5).astype(np.uint8)
    for i in range(arr.shape[0]):
        img = Image.fromarray(arr[i].transpose(1, 2, 0), mode="RGB")
        path = out_dir / f"{i}.png"
        img.save(path)
        paths.append(path)
    return paths


def write_frames_ppm(video, out_dir):
    """P6 export for zero-dependency debugging."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arr = (np.clip(np.asarray(video), -1, 1) * 127.5 + 127.5).astype(np.uint8)
    paths = []
    for i in range(arr.shape[0]):
        rgb = arr[i].transpose(1, 2, 0)
        path = out_dir / f"{i}.ppm"
        with open(path, "wb") as fh:
            fh.write(f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode())
            fh.write(rgb.tobytes())
        paths.append(path)
    return paths


class Worker:
    """Single-threaded FIFO executor over a JobStore."""

    def __init__(self, store: JobStore):
        self.store = store
        self.queue = queue.Queue()
        self._thread = None
        self._stop = threading.Event()

    def recover(self):
        """Re-queue jobs that were queued or mid-run when the process died."""
        for rec in self.store.list_records():
            if rec.status in ("queued", "running"):
                rec.status = "queued"
                rec.progress = {"step": 0, "total": 0}
                self.store.write_record(rec)
                self.queue.put(rec.id)

    def submit(self, spec: JobSpec) -> JobRecord:
        record = self.store.submit(spec)
        self.queue.put(record.id)
        return record

    def start(self):
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        self.queue.put(None)
        if self._thread:
            self._thread.join(timeout=5)

    def _run(self):
        while not self._stop.is_set():
            job_id = self.queue.get()
            if job_id is None:
                break
            self._execute(job_id)

    def _execute(self, job_id):
        record = self.store.read_record(job_id)
        if record is None or record.status not in ("queued",):
            return
        spec = self.store.read_spec(job_id)
        record.status = "running"
        record.started_at = time.time()
        self.store.write_record(record)
        jdir = self.store.job_dir(job_id)
        log_path = jdir / "log.txt"
        try:
            def progress(step, total):
                record.progress = {"step": step, "total": total}
                self.store.write_record(record)

            with open(log_path, "a") as log:
                log.write(f"start {time.strftime('%Y-%m-%d %H:%M:%S')}\n")
            out, report, frame_paths = run_job_spec(spec, jdir, progress_cb=progress)
            record.artifacts = {
                "frames": len(frame_paths),
                "output": "output.vten",
                "metrics": "metrics.json",
            }
            record.status = "done"
        except Exception as exc:  # job failures land in the record, not the server
            record.status = "failed"
            record.error = f"{type(exc).__name__}: {exc}"
            with open(log_path, "a") as log:
                log.write(traceback.format_exc())
        record.finished_at = time.time()
        self.store.write_record(record)
