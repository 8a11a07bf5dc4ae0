"""Command-line entry points: dataset synthesis, staged training,
animation, motion interpolation, evaluation, and motion outpainting."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np
import torch

from .config import (
    ModelConfig,
    default_stage_configs,
    load_config,
)
from .data import (
    ClipDataset,
    FaceBox,
    RTSTriplet,
    compute_f_rts,
    generate_dataset,
    load_clip,
    load_image,
    save_image,
)
from .models import ModelBundle
from .sampler import (
    AnimationRequest,
    SamplerConfig,
    animate,
    interpolate_motion,
    mask_features,
    motion_crop,
    motion_tokens_for,
    render_motion,
)
from .trainer import (
    Trainer,
    TrainState,
    load_checkpoint,
    save_checkpoint,
    to_signed,
    to_tensor,
)


@click.group()
def main():
    """Diffusion-based portrait animation toolkit."""


# --- helpers -----------------------------------------------------------------


def _frame_box(path: Path) -> FaceBox:
    """Face box of a frame, from the clip manifest when available."""
    path = Path(path)
    manifest = path.parent / "manifest.json"
    if manifest.exists():
        data = json.loads(manifest.read_text())
        stem = path.stem
        if stem.startswith("frame_"):
            idx = int(stem.split("_")[1])
            return FaceBox(**data["boxes"][idx])
    return FaceBox(0.5, 0.5, 0.55)


def _load_bundle(ckpt: Path) -> tuple[ModelBundle, TrainState]:
    from .checkpoint import load_arrays

    _, meta = load_arrays(ckpt)
    cfg = ModelConfig(**meta.get("model_config", {})) if "model_config" in meta else ModelConfig()
    bundle = ModelBundle(cfg)
    state = load_checkpoint(ckpt, bundle)
    bundle.eval()
    return bundle, state


def _write_frames(out_dir: Path, frames: list[np.ndarray]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        save_image(out_dir / f"frame_{i:04d}.png", f)


def _write_manifest(out_dir: Path, payload: dict) -> None:
    (out_dir / "run_manifest.json").write_text(json.dumps(payload, indent=1))


# --- commands ------------------------------------------------------------------


@main.command("synth-data")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--clips", default=40, show_default=True)
@click.option("--frames", default=32, show_default=True)
@click.option("--size", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
def synth_data(out, clips, frames, size, seed):
    """Render a synthetic controllable-face clip dataset."""
    generate_dataset(out, num_clips=clips, clip_length=frames, image_size=size, seed=seed)
    click.echo(f"wrote {clips} clips x {frames} frames at {size}px to {out}")


@main.command()
@click.option("--stage", type=click.IntRange(1, 3), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--resume", type=click.Path(exists=True, path_type=Path))
@click.option("--init", "init_path", type=click.Path(exists=True, path_type=Path),
              help="Checkpoint from the previous stage to start from.")
@click.option("--data", "data_dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", default=0, show_default=True)
def train(stage, config_path, resume, init_path, data_dir, out, seed):
    """Run one training stage, checkpointing to --out."""
    if config_path:
        model_cfg, stage_cfgs = load_config(config_path)
    else:
        model_cfg, stage_cfgs = ModelConfig(), default_stage_configs()
    cfg = stage_cfgs[stage]

    bundle = ModelBundle(model_cfg, seed=seed)
    state = None
    source = resume or init_path
    if source:
        state = load_checkpoint(source, bundle)
    elif stage != 1:
        raise click.UsageError(f"stage {stage} needs --resume or --init")

    dataset = ClipDataset(data_dir)
    trainer = Trainer(bundle, dataset, state=state, seed=seed)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / f"stage{stage}.ckpt"

    def log(record):
        step = record["step"]
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            parts = " ".join(f"{k}={v:.4f}" for k, v in record.items() if k.startswith("l_"))
            click.echo(f"stage {stage} step {step}/{cfg.steps} {parts}")
        if (step + 1) % max(cfg.log_every * 4, 1) == 0:
            trainer.save_checkpoint(ckpt_path)

    trainer.train_stage(cfg, callback=log)
    trainer.save_checkpoint(ckpt_path)
    (out / f"stage{stage}_losses.json").write_text(
        json.dumps(trainer.state.loss_history)
    )
    click.echo(f"saved {ckpt_path}")


@main.command()
@click.option("--ref", "ref_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--driving", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--ckpt", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--cfg-scale", default=3.5, show_default=True)
@click.option("--steps", default=25, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--max-frames", default=0, show_default=True, help="0 = all driving frames.")
def animate_cmd(ref_path, driving, ckpt, out, cfg_scale, steps, seed, max_frames):
    """Animate a reference image with a driving clip."""
    bundle, _ = _load_bundle(ckpt)
    clip = load_clip(driving)
    n = len(clip) if max_frames == 0 else min(max_frames, len(clip))
    request = AnimationRequest(
        reference=load_image(ref_path),
        ref_box=_frame_box(ref_path),
        driving=[clip.frame(i) for i in range(n)],
        driving_boxes=clip.boxes[:n],
        seed=seed,
    )
    cfg = SamplerConfig(ddim_steps=steps, cfg_scale=cfg_scale)
    frames = animate(bundle, request, cfg)
    out = Path(out)
    _write_frames(out, frames)
    _write_manifest(out, {
        "command": "animate", "ref": str(ref_path), "driving": str(driving),
        "ckpt": str(ckpt), "seed": seed, "sampler": asdict(cfg),
    })
    click.echo(f"wrote {len(frames)} frames to {out}")


@main.command()
@click.option("--ref", "ref_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--key-a", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--key-b", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--frames", "n_frames", default=8, show_default=True)
@click.option("--ckpt", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--cfg-scale", default=3.5, show_default=True)
@click.option("--steps", default=25, show_default=True)
@click.option("--seed", default=0, show_default=True)
def interpolate(ref_path, key_a, key_b, n_frames, ckpt, out, cfg_scale, steps, seed):
    """Render frames along the line between two motion latents."""
    bundle, _ = _load_bundle(ckpt)
    reference = load_image(ref_path)
    ref_box = _frame_box(ref_path)

    def fused_latent(path):
        img = load_image(path)
        box = _frame_box(path)
        crop = to_signed(to_tensor(motion_crop(img, box))[None])
        f_mot = bundle.motion_enc(crop)
        rts = torch.from_numpy(compute_f_rts(ref_box, box).as_vector())[None]
        return bundle.rts_fusion(f_mot, rts)

    with torch.no_grad():
        f_a, f_b = fused_latent(key_a), fused_latent(key_b)
        alphas = list(np.linspace(0.0, 1.0, n_frames))
        latents = interpolate_motion(f_a, f_b, alphas)
        tokens = torch.cat([bundle.token_adapter(f) for f in latents])

        ref_t = to_signed(to_tensor(reference)[None])
        cond_feats = bundle.refnet(ref_t)
        neg_feats = mask_features(cond_feats, 1.0, bundle.refnet.mask_embeddings, seed=0)
        neg_tokens = motion_tokens_for(bundle, reference, ref_box, RTSTriplet.identity())
        cfg = SamplerConfig(ddim_steps=steps, cfg_scale=cfg_scale)
        frames = render_motion(bundle, cond_feats, neg_feats, neg_tokens, tokens, cfg, seed)

    out = Path(out)
    _write_frames(out, frames)
    _write_manifest(out, {
        "command": "interpolate", "ref": str(ref_path), "key_a": str(key_a),
        "key_b": str(key_b), "alphas": [float(a) for a in alphas],
        "ckpt": str(ckpt), "seed": seed, "sampler": asdict(cfg),
    })
    click.echo(f"wrote {len(frames)} frames to {out}")


@main.command("eval")
@click.option("--mode", type=click.Choice(["self", "cross"]), required=True)
@click.option("--gen", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--drv", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--ref", "ref_path", type=click.Path(exists=True, path_type=Path))
@click.option("--providers", default="sprite", show_default=True,
              help="'sprite' for renderer-inverse providers, 'none' for bare metrics.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
def eval_cmd(mode, gen, drv, ref_path, providers, out):
    """Score generated frames against driving ground truth."""
    from .metrics import (
        RandomFeatureLPIPS,
        SpriteAttributeProvider,
        SpriteIdentityProvider,
        run_eval,
        write_report,
    )

    def frames_in(d):
        return [load_image(p) for p in sorted(Path(d).glob("frame_*.png"))]

    provider_map = {}
    if providers == "sprite":
        provider_map = {
            "pose": SpriteAttributeProvider(),
            "emotion": SpriteAttributeProvider(),
            "identity": SpriteIdentityProvider(),
            "lpips": RandomFeatureLPIPS(),
        }
    report = run_eval(
        mode,
        frames_in(gen),
        frames_in(drv),
        ref_frame=load_image(ref_path) if ref_path else None,
        providers=provider_map,
    )
    write_report(report, out)
    click.echo(report.table())


@main.command()
@click.option("--ref", "ref_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--driving", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--horizon", default=16, show_default=True, help="Frames to extend by (multiple of 4).")
@click.option("--ckpt", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--fit-steps", default=300, show_default=True)
@click.option("--cfg-scale", default=3.5, show_default=True)
@click.option("--steps", default=25, show_default=True)
@click.option("--seed", default=0, show_default=True)
def outpaint(ref_path, driving, horizon, ckpt, out, fit_steps, cfg_scale, steps, seed):
    """Extend a driving clip's motion with discrete tokens, then render."""
    from .tokens import MotionGPT, MotionTokenizer, VQConfig, extend_sequence, fit_gpt, fit_tokenizer

    if horizon % 4 != 0:
        raise click.UsageError("horizon must be a multiple of 4")
    bundle, _ = _load_bundle(ckpt)
    clip = load_clip(driving)
    reference = load_image(ref_path)
    ref_box = _frame_box(ref_path)

    usable = (len(clip) // 4) * 4
    with torch.no_grad():
        crops = torch.stack([
            to_signed(to_tensor(motion_crop(clip.frame(i), clip.boxes[i])))
            for i in range(usable)
        ])
        rts = torch.stack([
            torch.from_numpy(compute_f_rts(ref_box, clip.boxes[i]).as_vector())
            for i in range(usable)
        ])
        fused = bundle.rts_fusion(bundle.motion_enc(crops), rts)  # (T, d_mot)

    vq_cfg = VQConfig(d_mot=bundle.cfg.d_mot, n_codes=256, hidden=32)
    tokenizer = MotionTokenizer(vq_cfg, seed=seed)
    fit_tokenizer(tokenizer, [fused], steps=fit_steps, seed=seed)
    codes = tokenizer.vq_encode(fused)

    gpt = MotionGPT(vq_cfg.n_codes, d_model=64, n_layers=2, seed=seed)
    fit_gpt(gpt, [codes], steps=fit_steps, seed=seed)
    extended = extend_sequence(codes, gpt, horizon // 4)

    with torch.no_grad():
        fused_ext = tokenizer.vq_decode(extended)
        tokens = bundle.token_adapter(fused_ext)
        ref_t = to_signed(to_tensor(reference)[None])
        cond_feats = bundle.refnet(ref_t)
        neg_feats = mask_features(cond_feats, 1.0, bundle.refnet.mask_embeddings, seed=0)
        neg_tokens = motion_tokens_for(bundle, reference, ref_box, RTSTriplet.identity())
        cfg = SamplerConfig(ddim_steps=steps, cfg_scale=cfg_scale)
        frames = render_motion(bundle, cond_feats, neg_feats, neg_tokens, tokens, cfg, seed)

    out = Path(out)
    _write_frames(out, frames)
    _write_manifest(out, {
        "command": "outpaint", "ref": str(ref_path), "driving": str(driving),
        "horizon": horizon, "prefix_frames": usable, "ckpt": str(ckpt),
        "seed": seed, "sampler": asdict(cfg),
    })
    click.echo(f"wrote {len(frames)} frames ({usable} prefix + {horizon} extended) to {out}")


main.add_command(animate_cmd, "animate")

if __name__ == "__main__":
    main()
