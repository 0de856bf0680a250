"""Shared fixtures: toy corpora, the cached smoke-trained checkpoint, and a
terminal summary that prints one pass/fail line per acceptance criterion."""

import os
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parent.parent
CACHE = REPO / ".cache"

_ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance" in report.nodeid and name.startswith("test_c"):
        _ACCEPTANCE_RESULTS[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        outcome = _ACCEPTANCE_RESULTS[name]
        mark = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome)
        tr.write_line(f"[{mark}] {name}")


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Small mixed corpus for unit tests (not the smoke-training corpus)."""
    from inpaint_lab.synth import SceneConfig, make_corpus

    root = tmp_path_factory.mktemp("corpus")
    make_corpus(0, 8, root, SceneConfig(frames=8, height=16, width=16, n_objects=1))
    return root


@pytest.fixture(scope="session")
def tiny_model():
    """Small but full-featured model for fast structural tests."""
    from inpaint_lab.model import InpaintUNet, ModelConfig

    return InpaintUNet(ModelConfig(base_channels=8, head_dim=4, window=4, init_seed=3))


SMOKE_SEED = 11
SMOKE_STEPS = int(os.environ.get("SMOKE_STEPS", "2000"))
SMOKE_CORPUS_COUNT = 48


def smoke_paths():
    return {
        "corpus": CACHE / "smoke" / "corpus",
        "run": CACHE / "smoke" / "run",
        "ckpt": CACHE / "smoke" / "run" / "checkpoints" / f"step_{SMOKE_STEPS}.ckpt",
        "cam_corpus": CACHE / "smoke" / "cam_corpus",
        "cam_run": CACHE / "smoke" / "cam_run",
        "meta": CACHE / "smoke" / "meta.json",
    }


def ensure_smoke_corpus():
    from inpaint_lab.synth import SceneConfig, make_corpus

    paths = smoke_paths()
    if not (paths["corpus"] / "corpus.json").exists():
        paths["corpus"].mkdir(parents=True, exist_ok=True)
        cfg = SceneConfig(frames=8, height=16, width=16, n_objects=1)
        make_corpus(SMOKE_SEED, SMOKE_CORPUS_COUNT, paths["corpus"], cfg)
    return paths["corpus"]


def ensure_smoke_checkpoint():
    """Train the 16x16x8 smoke model once; later runs reuse the cached file."""
    from inpaint_lab.diffusion import TrainConfig, train_loop
    from inpaint_lab.model import InpaintUNet, ModelConfig
    from inpaint_lab.synth import Corpus

    paths = smoke_paths()
    if paths["ckpt"].exists():
        return paths["ckpt"]
    corpus_dir = ensure_smoke_corpus()
    model = InpaintUNet(ModelConfig(init_seed=SMOKE_SEED))
    cfg = TrainConfig(steps=SMOKE_STEPS, batch_size=2, seed=SMOKE_SEED,
                      checkpoint_every=0, eval_every=250)
    train_loop(model, Corpus(corpus_dir), cfg, paths["run"], log=lambda m: None)
    return paths["ckpt"]


@pytest.fixture(scope="session")
def smoke_checkpoint():
    return ensure_smoke_checkpoint()


@pytest.fixture(scope="session")
def smoke_corpus():
    return ensure_smoke_corpus()


def ensure_camera_checkpoint():
    """Camera fine-tune on top of the smoke checkpoint (cached)."""
    from inpaint_lab.diffusion import TrainConfig, train_loop
    from inpaint_lab.model import load_checkpoint
    from inpaint_lab.synth import Corpus, SceneConfig, make_corpus

    paths = smoke_paths()
    final = paths["cam_run"] / "checkpoints" / "step_800.ckpt"
    if final.exists():
        return final
    base = ensure_smoke_checkpoint()
    if not (paths["cam_corpus"] / "corpus.json").exists():
        paths["cam_corpus"].mkdir(parents=True, exist_ok=True)
        cfg = SceneConfig(frames=8, height=64, width=64, n_objects=0)
        make_corpus(SMOKE_SEED + 1, 16, paths["cam_corpus"], cfg)
    model, _ = load_checkpoint(base)
    cfg = TrainConfig(steps=800, batch_size=1, seed=SMOKE_SEED, t_range=(400, 1001),
                      learning_rate=2e-3, checkpoint_every=0, eval_every=0)
    train_loop(model, Corpus(paths["cam_corpus"]), cfg, paths["cam_run"],
               camera_phase=True, camera_corpus_cfg={"height": 16, "width": 16, "frames": 8},
               log=lambda m: None)
    return final


@pytest.fixture(scope="session")
def camera_checkpoint():
    return ensure_camera_checkpoint()
