"""Command-line entry points: dataset-gen | train | infer | longvideo |
augment | eval | ablate | serve. Exit codes: 0 ok, 2 validation, 1 runtime."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from .errors import InpaintLabError, ValidationError


def _fail_validation(message):
    click.echo(f"validation error: {message}", err=True)
    sys.exit(2)


def _runtime_guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ValidationError as exc:
        _fail_validation(exc)
    except InpaintLabError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@click.group()
def main():
    """Desk-scale controllable video inpainting lab."""


@main.command("dataset-gen")
@click.option("--out", required=True, type=click.Path())
@click.option("--count", default=24, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--frames", default=8, show_default=True)
@click.option("--size", default=16, show_default=True, help="height = width")
@click.option("--objects", default=1, show_default=True, type=click.IntRange(0, 2))
def dataset_gen(out, count, seed, frames, size, objects):
    """Generate a labeled toy corpus."""
    from .synth import SceneConfig, make_corpus

    if size & (size - 1):
        _fail_validation("--size must be a power of two")
    cfg = SceneConfig(frames=frames, height=size, width=size, n_objects=objects)
    manifest = _runtime_guard(make_corpus, seed, count, out, cfg)
    click.echo(f"wrote {len(manifest['samples'])} samples to {out}")


@main.command()
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=2000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--batch", default=1, show_default=True)
@click.option("--lr", default=2e-3, show_default=True)
@click.option("--base-channels", default=32, show_default=True)
@click.option("--head-dim", default=None, type=int,
              help="attention head dim (default: min(16, base-channels))")
@click.option("--single-branch", is_flag=True, help="ablation: share one spatial branch")
@click.option("--joint-cam-embed", is_flag=True, help="ablation: one shared camera MLP")
@click.option("--camera", is_flag=True, help="fine-tune camera modules only")
@click.option("--init", "init_ckpt", type=click.Path(exists=True), help="starting checkpoint")
def train(corpus, out, steps, seed, batch, lr, base_channels, head_dim, single_branch,
          joint_cam_embed, camera, init_ckpt):
    """Train (or camera-fine-tune) the denoiser on a corpus."""
    from .diffusion import TrainConfig, train_loop
    from .model import InpaintUNet, ModelConfig, load_checkpoint, save_checkpoint
    from .synth import Corpus

    if camera and not init_ckpt:
        _fail_validation("--camera fine-tuning needs --init checkpoint")
    if init_ckpt:
        model, _ = load_checkpoint(init_ckpt)
    else:
        model = InpaintUNet(ModelConfig(base_channels=base_channels,
                                        head_dim=head_dim or min(16, base_channels),
                                        dual_branch=not single_branch,
                                        separate_cam_embed=not joint_cam_embed,
                                        init_seed=seed))
    out_dir = Path(out)
    if steps == 0:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "checkpoints" / "step_0.ckpt"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, model, step=0)
        click.echo(f"wrote initial checkpoint {path}")
        return
    cfg = TrainConfig(steps=steps, batch_size=batch, learning_rate=lr, seed=seed,
                      t_range=(400, 1001) if camera else None)
    corp = Corpus(corpus)
    final = _runtime_guard(train_loop, model, corp, cfg, out_dir, camera_phase=camera,
                           log=lambda msg: click.echo(msg))
    click.echo(f"final checkpoint: {final}")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def infer(spec_path, out):
    """Run one inference job spec (same schema the API accepts)."""
    from .jobs import JobSpec, run_job_spec

    try:
        spec = JobSpec.from_dict(json.loads(Path(spec_path).read_text()))
    except ValidationError as exc:
        _fail_validation(exc)
    _runtime_guard(run_job_spec, spec, out)
    click.echo(f"job artifacts in {out}")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--strategy", default=None,
              type=click.Choice(["direct", "multi", "recur_i2v", "keyframe_inbetween"]))
def longvideo(spec_path, out, strategy):
    """Run a long-video job (mode forced to 'long')."""
    from .jobs import JobSpec, run_job_spec

    obj = json.loads(Path(spec_path).read_text())
    obj["mode"] = "long"
    if strategy:
        obj.setdefault("long", {})["strategy"] = strategy
    try:
        spec = JobSpec.from_dict(obj)
    except ValidationError as exc:
        _fail_validation(exc)
    _runtime_guard(run_job_spec, spec, out)
    click.echo(f"long-video artifacts in {out}")


@main.command()
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--height", default=16, show_default=True)
@click.option("--width", default=16, show_default=True)
@click.option("--frames", default=8, show_default=True)
def augment(corpus, out, seed, height, width, frames):
    """Camera-augment a corpus; writes cam.json (params + GT transforms) per clip."""
    from .camera import aug_with_cam_motion, gt_transforms, sample_cam_params
    from .nd.vten import load_vten, save_vten
    from .synth import Corpus

    corp = Corpus(corpus)
    rng = np.random.default_rng(seed)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for entry in corp.entries():
        video = load_vten(corp.root / entry["video"])[:frames]
        cam = sample_cam_params(rng)
        clip = _runtime_guard(aug_with_cam_motion, video, cam, height, width)
        sdir = out_dir / entry["name"]
        sdir.mkdir(exist_ok=True)
        save_vten(sdir / "video.vten", clip)
        gts = gt_transforms(cam, clip.shape[0], height, width)
        (sdir / "cam.json").write_text(json.dumps({
            "cam": cam.as_list(),
            "transforms": [{"scale": g.scale, "dx": g.dx, "dy": g.dy} for g in gts],
        }, indent=2))
        rows.append({"name": entry["name"], "split": entry["split"],
                     "video": f"{entry['name']}/video.vten",
                     "cam": f"{entry['name']}/cam.json"})
    (out_dir / "corpus.json").write_text(json.dumps(
        {"seed": seed, "count": len(rows), "samples": rows}, indent=2))
    click.echo(f"augmented {len(rows)} clips into {out}")


@main.command("eval")
@click.option("--video", "video_path", required=True, type=click.Path(exists=True))
@click.option("--reference", type=click.Path(exists=True))
@click.option("--mask", type=click.Path(exists=True))
@click.option("--out", type=click.Path())
def eval_cmd(video_path, reference, mask, out):
    """Compute proxy metrics for a video (optionally vs a reference)."""
    from .masks import MaskSequence
    from .metrics import assemble_report, psnr, temp_cons
    from .nd.vten import load_vten

    video = load_vten(video_path)
    scalars = {"proxy-temp-cons": temp_cons(video, reference="previous"),
               "proxy-temp-cons-f1": temp_cons(video, reference="first")}
    if reference:
        scalars["psnr"] = psnr(video, load_vten(reference))
    if mask:
        arr = load_vten(mask)
        if arr.ndim == 3:
            arr = arr[:, None]
        region = MaskSequence((arr > 0.5).astype(np.uint8))
        scalars["proxy-temp-cons-region"] = temp_cons(video, regions=region,
                                                      reference="previous")
    report = assemble_report(job_id=Path(video_path).stem, scalars=scalars,
                             out_dir=out)
    click.echo(report.to_csv())


@main.group()
def ablate():
    """Directional reproductions of the reference ablations."""


def _write_rows(path, rows, fieldnames):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


@ablate.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seeds", default=20, show_default=True)
@click.option("--frames", default=24, show_default=True)
@click.option("--window", default=8, show_default=True)
@click.option("--steps", default=30, show_default=True, help="DDIM steps")
def strategy(checkpoint, corpus, out, seeds, frames, window, steps):
    """Long-video strategy comparison (first-frame consistency proxy)."""
    from .ablations import strategy_ablation

    rows, aggregates = _runtime_guard(strategy_ablation, checkpoint, corpus,
                                      seeds=seeds, frames=frames, window=window,
                                      sampler_steps=steps)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["strategy", "seed", "proxy-temp-cons-f1", "proxy-clip-t"]
    _write_rows(out_path, rows + aggregates, fields)
    click.echo(f"wrote {len(rows)} rows + {len(aggregates)} aggregates to {out}")


@ablate.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--prompts", default=20, show_default=True)
@click.option("--steps", default=30, show_default=True)
@click.option("--lambdas", default="25", show_default=True, help="comma list")
@click.option("--taus", default="0.95", show_default=True, help="comma list")
def modulation(checkpoint, corpus, out, prompts, steps, lambdas, taus):
    """Amplification/suppression grid: (lambda, tau) -> mIoU / color proxy."""
    from .ablations import modulation_sweep

    lam_list = [float(v) for v in lambdas.split(",")]
    tau_list = [float(v) for v in taus.split(",")]
    rows = _runtime_guard(modulation_sweep, checkpoint, corpus, lam_list, tau_list,
                          n_prompts=prompts, sampler_steps=steps)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(out_path, rows, ["lambda", "tau_frac", "miou", "ap50", "proxy-clip-t"])
    click.echo(f"wrote {len(rows)} rows to {out}")


@ablate.command("noise-init")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seeds", default=20, show_default=True)
@click.option("--taus", default="0.8,0.9,1.0", show_default=True)
@click.option("--steps", default=30, show_default=True)
def noise_init(checkpoint, corpus, out, seeds, taus, steps):
    """K2V prior-noise tau sweep vs random init (interval consistency proxy)."""
    from .ablations import noise_init_sweep

    tau_list = [float(v) for v in taus.split(",")]
    rows = _runtime_guard(noise_init_sweep, checkpoint, corpus, tau_list,
                          seeds=seeds, sampler_steps=steps)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(out_path, rows, ["init", "tau_frac", "seed", "interval-consistency"])
    click.echo(f"wrote {len(rows)} rows to {out}")


@ablate.command()
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=800, show_default=True, help="train steps per arm")
@click.option("--eval-samples", default=8, show_default=True)
@click.option("--sampler-steps", default=30, show_default=True)
@click.option("--seed", default=0, show_default=True)
def branch(corpus, out, steps, eval_samples, sampler_steps, seed):
    """Dual- vs single-branch completion PSNR (identical budgets)."""
    from .ablations import branch_ablation

    rows = _runtime_guard(branch_ablation, corpus, train_steps=steps,
                          eval_samples=eval_samples, sampler_steps=sampler_steps,
                          seed=seed)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(out_path, rows, ["arm", "psnr", "proxy-temp-cons"])
    click.echo(f"wrote {len(rows)} rows to {out}")


@ablate.command("camera-embed")
@click.option("--corpus", required=True, type=click.Path(exists=True), help="static source corpus")
@click.option("--init", "init_ckpt", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=600, show_default=True)
@click.option("--eval-seeds", default=6, show_default=True)
@click.option("--sampler-steps", default=30, show_default=True)
def camera_embed(corpus, init_ckpt, out, steps, eval_seeds, sampler_steps):
    """Separate vs joint camera embedding (flow error on pan prompts)."""
    from .ablations import camera_embed_ablation

    rows = _runtime_guard(camera_embed_ablation, corpus, init_ckpt,
                          train_steps=steps, eval_seeds=eval_seeds,
                          sampler_steps=sampler_steps)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(out_path, rows, ["arm", "flow_error"])
    click.echo(f"wrote {len(rows)} rows to {out}")


@ablate.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--prompts", default=10, show_default=True)
@click.option("--steps", default=30, show_default=True)
def layers(checkpoint, corpus, out, prompts, steps):
    """Layer-zone targeting for amplification (E / M / D combinations)."""
    from .ablations import layer_targeting_ablation

    rows = _runtime_guard(layer_targeting_ablation, checkpoint, corpus,
                          n_prompts=prompts, sampler_steps=steps)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(out_path, rows, ["targets", "miou", "ap50"])
    click.echo(f"wrote {len(rows)} rows to {out}")


@main.command()
@click.option("--addr", default="127.0.0.1:8787", show_default=True)
@click.option("--home", type=click.Path(), default=None,
              help="job root (defaults to $INPAINT_LAB_HOME)")
@click.option("--static", "static_dir", type=click.Path(exists=True), default=None,
              help="UI bundle directory to serve at /")
def serve(addr, home, static_dir):
    """Run the HTTP JSON API (and optionally the UI bundle)."""
    from .jobs import default_home
    from .service import serve as run_server

    host, _, port = addr.partition(":")
    run_server(home or default_home(), host=host or "127.0.0.1",
               port=int(port or 8787), static_dir=static_dir)


if __name__ == "__main__":
    main()
