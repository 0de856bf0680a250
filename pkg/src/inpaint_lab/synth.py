"""Procedural toy videos: colored shapes moving over textured backgrounds.

Videos are (N, 3, H, W) float32 in [-1, 1]. Backgrounds are desaturated
(equal channels) so the color-threshold detector only fires on objects.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import GenerationInfeasible, ParameterError
from .masks import Box, BoxTrajectory, MaskSequence, dilate_to_box
from .nd.vten import load_vten, save_vten


class Vocabulary:
    """Fixed token inventory shared by prompts, training, and the API."""

    SOS = 0
    EOS = 1
    NULL = 2
    BACKGROUND = 3

    TOKENS = ("<sos>", "<eos>", "<null>", "background",
              "red", "green", "blue", "yellow",
              "circle", "square", "triangle")
    COLORS = ("red", "green", "blue", "yellow")
    SHAPES = ("circle", "square", "triangle")

    # [-1, 1] palette; strongly saturated so detection margins stay wide
    PALETTE = {
        "red": (1.0, -0.6, -0.6),
        "green": (-0.6, 1.0, -0.6),
        "blue": (-0.6, -0.6, 1.0),
        "yellow": (1.0, 1.0, -0.6),
    }

    @classmethod
    def id(cls, token: str) -> int:
        return cls.TOKENS.index(token)

    @classmethod
    def token(cls, token_id: int) -> str:
        return cls.TOKENS[token_id]

    @classmethod
    def size(cls) -> int:
        return len(cls.TOKENS)

    @classmethod
    def null_prompt(cls) -> list[int]:
        return [cls.SOS, cls.NULL, cls.EOS]

    @classmethod
    def background_prompt(cls) -> list[int]:
        return [cls.SOS, cls.BACKGROUND, cls.EOS]


@dataclass
class SceneConfig:
    frames: int = 8
    height: int = 16
    width: int = 16
    n_objects: int = 1
    motion: str = "linear"          # none | linear | bend
    background: str = "gradient"    # gradient | plain
    radius_range: tuple = (0.16, 0.22)
    speckle: float = 0.15
    force_color: str | None = None
    force_shape: str | None = None

    def __post_init__(self):
        if self.frames < 4:
            raise ParameterError("scenes need N >= 4")
        for n in (self.height, self.width):
            if n & (n - 1):
                raise ParameterError("H and W must be powers of two")
        if self.n_objects not in (0, 1, 2):
            raise ParameterError("n_objects must be 0, 1, or 2")


@dataclass
class SceneObject:
    color: str
    shape: str
    centers: list[tuple[float, float]]     # normalized, per frame
    radius: float                          # normalized half-extent
    boxes: list[Box] = dc_field(default_factory=list)
    span: tuple[int, int] = (0, 0)         # [start, end) token indices in prompt


@dataclass
class SyntheticSample:
    video: np.ndarray
    object_mask: MaskSequence
    objects: list[SceneObject]
    prompt: list[int]
    trajectory: BoxTrajectory | None
    seed: int
    config: SceneConfig


def _shape_mask(shape, cx, cy, r, height, width):
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    if shape == "circle":
        return (gx - cx) ** 2 + (gy - cy) ** 2 <= r * r
    if shape == "square":
        return (np.abs(gx - cx) <= r) & (np.abs(gy - cy) <= r)
    if shape == "triangle":
        inside_y = (gy >= cy - r) & (gy <= cy + r)
        halfwidth = np.clip((gy - (cy - r)) / 2.0, 0.0, r)
        return inside_y & (np.abs(gx - cx) <= halfwidth)
    raise ParameterError(f"unknown shape {shape!r}")


def _background(rng, cfg: SceneConfig):
    h, w = cfg.height, cfg.width
    ys = np.linspace(0, 1, h)[:, None]
    xs = np.linspace(0, 1, w)[None, :]
    if cfg.background == "gradient":
        base = rng.uniform(-0.3, 0.1)
        gx = rng.uniform(-0.5, 0.5)
        gy = rng.uniform(-0.5, 0.5)
        frame = base + gx * xs + gy * ys
    elif cfg.background == "plain":
        frame = np.full((h, w), rng.uniform(-0.2, 0.0))
    else:
        raise ParameterError(f"unknown background {cfg.background!r}")
    speckle = rng.uniform(-cfg.speckle, cfg.speckle, size=(h, w))
    gray = np.clip(frame + speckle, -0.95, 0.6)
    return np.repeat(gray[None], 3, axis=0).astype(np.float32)


def _sample_path(rng, cfg: SceneConfig, radius, min_travel=0.25):
    margin = radius + 1.5 / min(cfg.height, cfg.width)
    if margin >= 0.5:
        raise GenerationInfeasible("object too large for the frame")
    lo, hi = margin, 1.0 - margin

    def pt():
        return (rng.uniform(lo, hi), rng.uniform(lo, hi))

    if cfg.motion == "none":
        p = pt()
        return [p, p]
    for _ in range(50):
        a, b = pt(), pt()
        if math.dist(a, b) >= min_travel:
            break
    else:
        raise GenerationInfeasible("no feasible motion path")
    if cfg.motion == "linear":
        return [a, b]
    if cfg.motion == "bend":
        mid = ((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0)
        off = rng.uniform(0.1, 0.2) * rng.choice([-1.0, 1.0])
        bent = (min(max(mid[0] + off, lo), hi), min(max(mid[1] - off, lo), hi))
        return [a, bent, b]
    raise ParameterError(f"unknown motion {cfg.motion!r}")


def _positions_along(path, frames):
    pts = np.asarray(path, dtype=np.float64)
    seg = np.sqrt(((pts[1:] - pts[:-1]) ** 2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    out = []
    for i in range(frames):
        frac = i / (frames - 1)
        if total <= 0:
            out.append(tuple(pts[0]))
            continue
        target = frac * total
        j = min(int(np.searchsorted(cum, target, side="right")) - 1, len(pts) - 2)
        t = (target - cum[j]) / (cum[j + 1] - cum[j]) if cum[j + 1] > cum[j] else 0.0
        p = pts[j] * (1 - t) + pts[j + 1] * t
        out.append((float(p[0]), float(p[1])))
    return out


def make_scene(seed, config: SceneConfig | None = None) -> SyntheticSample:
    """Render one deterministic labeled clip."""
    cfg = config or SceneConfig()
    rng = np.random.default_rng(seed)
    n, h, w = cfg.frames, cfg.height, cfg.width
    bg = _background(rng, cfg)
    video = np.repeat(bg[None], n, axis=0).copy()
    union = np.zeros((n, 1, h, w), dtype=np.uint8)

    objects = []
    prompt = [Vocabulary.SOS]
    if cfg.n_objects == 0:
        prompt.append(Vocabulary.BACKGROUND)
    colors = list(Vocabulary.COLORS)
    shapes = list(Vocabulary.SHAPES)
    used_colors = set()
    for k in range(cfg.n_objects):
        if k == 0 and cfg.force_color:
            color = cfg.force_color
        else:
            # distinct colors keep the per-color detector unambiguous
            color = colors[rng.integers(len(colors))]
            while color in used_colors:
                color = colors[rng.integers(len(colors))]
        used_colors.add(color)
        shape = cfg.force_shape if (k == 0 and cfg.force_shape) else shapes[rng.integers(len(shapes))]
        radius = rng.uniform(*cfg.radius_range)
        min_travel = 0.25
        if cfg.n_objects == 2:
            # two movers only fit disjointly with smaller bodies and shorter paths
            radius *= 0.65
            min_travel = 0.15
        min_gap = 1.0 / min(h, w)
        for attempt in range(60):
            path = _sample_path(rng, cfg, radius, min_travel)
            centers = _positions_along(path, n)
            # keep objects disjoint on every frame (colliding boxes unsupported)
            clear = all(
                math.dist(c, o.centers[f]) >= radius + o.radius + min_gap
                for o in objects for f, c in enumerate(centers)
            )
            if clear:
                break
        else:
            raise GenerationInfeasible("could not place objects without overlap")
        span = (len(prompt), len(prompt) + 2)
        prompt.extend([Vocabulary.id(color), Vocabulary.id(shape)])
        obj = SceneObject(color=color, shape=shape, centers=centers, radius=radius, span=span)
        rgb = Vocabulary.PALETTE[color]
        for f, (cx, cy) in enumerate(centers):
            mask = _shape_mask(shape, cx, cy, radius, h, w)
            if not mask.any():
                raise GenerationInfeasible("object rasterized empty")
            for c in range(3):
                video[f, c][mask] = rgb[c]
            union[f, 0] |= mask.astype(np.uint8)
            obj.boxes.append(dilate_to_box(mask.astype(np.uint8), margin=0))
        objects.append(obj)
    prompt.append(Vocabulary.EOS)

    trajectory = None
    if objects:
        first = objects[0]
        trajectory = BoxTrajectory(
            keys={1: first.boxes[0], n: first.boxes[-1]},
            length=n,
            path=[first.boxes[0].center, *[b.center for b in first.boxes[1:-1]],
                  first.boxes[-1].center],
        )
    return SyntheticSample(
        video=video,
        object_mask=MaskSequence(union),
        objects=objects,
        prompt=prompt,
        trajectory=trajectory,
        seed=int(seed),
        config=cfg,
    )


def _label_dict(sample: SyntheticSample):
    return {
        "seed": sample.seed,
        "prompt": sample.prompt,
        "prompt_tokens": [Vocabulary.token(t) for t in sample.prompt],
        "objects": [
            {
                "color": o.color,
                "shape": o.shape,
                "span": list(o.span),
                "radius": o.radius,
                "centers": [[float(x), float(y)] for x, y in o.centers],
                "boxes": [b.as_list() for b in o.boxes],
            }
            for o in sample.objects
        ],
        "trajectory": json.loads(sample.trajectory.to_json()) if sample.trajectory else None,
        "config": {
            "frames": sample.config.frames,
            "height": sample.config.height,
            "width": sample.config.width,
            "n_objects": sample.config.n_objects,
            "motion": sample.config.motion,
            "background": sample.config.background,
        },
    }


def make_corpus(seed, count, out_dir, config: SceneConfig | None = None):
    """Write `count` samples plus corpus.json; eval split is every 5th seed."""
    if count < 1:
        raise ParameterError("corpus count must be >= 1")
    base = config or SceneConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    combos = [(c, s) for c in Vocabulary.COLORS for s in Vocabulary.SHAPES]
    entries = []
    for i in range(count):
        sample_seed = int(seed) + i
        cfg = SceneConfig(**{**base.__dict__})
        if cfg.n_objects >= 1:
            color, shape = combos[i % len(combos)]
            cfg.force_color, cfg.force_shape = color, shape
        cfg.motion = ("linear", "bend", "none")[i % 3] if cfg.n_objects else cfg.motion
        sample = None
        for retry in range(20):
            try:
                sample = make_scene(sample_seed + 100000 * retry, cfg)
                break
            except GenerationInfeasible:
                continue
        if sample is None:
            raise GenerationInfeasible(f"sample {i}: no feasible scene")
        name = f"sample_{i:04d}"
        sdir = out / name
        sdir.mkdir(exist_ok=True)
        save_vten(sdir / "video.vten", sample.video)
        save_vten(sdir / "mask.vten", sample.object_mask.data)
        label = _label_dict(sample)
        (sdir / "label.json").write_text(json.dumps(label, indent=2, sort_keys=True))
        entries.append({
            "name": name,
            "seed": sample.seed,
            "split": "eval" if i % 5 == 4 else "train",
            "video": f"{name}/video.vten",
            "mask": f"{name}/mask.vten",
            "label": f"{name}/label.json",
        })
    manifest = {
        "seed": int(seed),
        "count": count,
        "config": {
            "frames": base.frames, "height": base.height, "width": base.width,
            "n_objects": base.n_objects, "motion": base.motion,
            "background": base.background, "radius_range": list(base.radius_range),
            "speckle": base.speckle,
        },
        "samples": entries,
    }
    (out / "corpus.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def regenerate_from_manifest(manifest_or_path, out_dir):
    """Re-render a corpus byte-for-byte from its manifest."""
    if isinstance(manifest_or_path, (str, Path)):
        manifest = json.loads(Path(manifest_or_path).read_text())
    else:
        manifest = manifest_or_path
    cfg_d = dict(manifest["config"])
    cfg_d["radius_range"] = tuple(cfg_d["radius_range"])
    cfg = SceneConfig(**cfg_d)
    return make_corpus(manifest["seed"], manifest["count"], out_dir, cfg)


class Corpus:
    """Read-side view of a corpus directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest = json.loads((self.root / "corpus.json").read_text())

    def entries(self, split=None):
        rows = self.manifest["samples"]
        if split:
            rows = [r for r in rows if r["split"] == split]
        return rows

    def load(self, entry):
        video = load_vten(self.root / entry["video"])
        mask = MaskSequence(load_vten(self.root / entry["mask"]))
        label = json.loads((self.root / entry["label"]).read_text())
        return video, mask, label
