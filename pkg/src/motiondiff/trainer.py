"""Three-stage training orchestration with deterministic, resumable state.

All randomness flows through named torch generators (data, t, eps, mask,
aug), whose states are checkpointed, so a resumed run replays the exact
loss sequence of an unbroken one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import augment_driving, sample_augmentation
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .config import ModelConfig, StageConfig, config_hash
from .data import ClipDataset, compute_f_rts, sample_pair_indices
from .denoiser import diffusion_loss
from .gan import GanLossWeights, loss_adv_and_fm, loss_gan_total, loss_perceptual, loss_recon
from .models import ModelBundle
from .reference import mask_features

STREAM_NAMES = ("data", "t", "eps", "mask", "aug")


def make_streams(seed: int) -> dict[str, torch.Generator]:
    streams = {}
    for i, name in enumerate(STREAM_NAMES):
        g = torch.Generator()
        g.manual_seed(seed * 1000 + i)
        streams[name] = g
    return streams


@dataclass
class TrainState:
    stage: int = 0
    step: int = 0
    seed: int = 0
    loss_history: list[dict] = field(default_factory=list)
    streams: dict[str, torch.Generator] = field(default_factory=dict)
    opt_arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def fresh(seed: int) -> "TrainState":
        return TrainState(stage=0, step=0, seed=seed, streams=make_streams(seed))


MOTION_PATH_PREFIXES = ("motion_enc.", "rts_fusion.", "token_adapter.")


def is_motion_path_param(name: str) -> bool:
    """Parameters feeding motion into the denoiser (boosted lr in stage 2)."""
    return name.startswith(MOTION_PATH_PREFIXES) or ".motion_attn." in name


class NamedAdamW:
    """AdamW whose per-parameter state is addressable by parameter name."""

    def __init__(self, params: dict[str, torch.nn.Parameter], cfg: StageConfig):
        self.names = sorted(params)
        self.params = [params[n] for n in self.names]
        base = [p for n, p in zip(self.names, self.params) if not is_motion_path_param(n)]
        fast = [p for n, p in zip(self.names, self.params) if is_motion_path_param(n)]
        groups = [{"params": base, "lr": cfg.lr}]
        if fast:
            groups.append({"params": fast, "lr": cfg.lr * cfg.motion_lr_scale})
        self.opt = torch.optim.AdamW(
            groups, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay
        )

    def zero_grad(self):
        self.opt.zero_grad(set_to_none=True)

    def step(self):
        self.opt.step()

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name, p in zip(self.names, self.params):
            st = self.opt.state.get(p)
            if not st:
                continue
            out[f"{prefix}/{name}/step"] = np.asarray(float(st["step"]), dtype=np.float64)
            out[f"{prefix}/{name}/exp_avg"] = st["exp_avg"].numpy()
            out[f"{prefix}/{name}/exp_avg_sq"] = st["exp_avg_sq"].numpy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        for name, p in zip(self.names, self.params):
            key = f"{prefix}/{name}/step"
            if key not in arrays:
                continue
            self.opt.state[p] = {
                "step": torch.tensor(float(arrays[key])),
                "exp_avg": torch.from_numpy(arrays[f"{prefix}/{name}/exp_avg"].copy()),
                "exp_avg_sq": torch.from_numpy(
                    arrays[f"{prefix}/{name}/exp_avg_sq"].copy()
                ),
            }


def to_tensor(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).float()


def to_signed(img: torch.Tensor) -> torch.Tensor:
    return img * 2.0 - 1.0


class PreloadedDataset:
    """Clips held in memory as float arrays for single-core throughput."""

    def __init__(self, dataset: ClipDataset):
        self.clips = []
        for clip in dataset.clips:
            self.clips.append((clip.frames(), clip.boxes))

    def __len__(self):
        return len(self.clips)


class Trainer:
    def __init__(
        self,
        bundle: ModelBundle,
        dataset: ClipDataset | PreloadedDataset,
        state: TrainState | None = None,
        seed: int = 0,
    ):
        self.bundle = bundle
        self.data = (
            dataset if isinstance(dataset, PreloadedDataset) else PreloadedDataset(dataset)
        )
        self.state = state if state is not None else TrainState.fresh(seed)
        self.gan_weights = GanLossWeights()

    # ---- sampling ---------------------------------------------------------

    def _randint(self, stream: str, high: int, n: int = 1) -> list[int]:
        g = self.state.streams[stream]
        return torch.randint(high, (n,), generator=g).tolist()

    def _sample_pair(self):
        (ci,) = self._randint("data", len(self.data))
        frames, boxes = self.data.clips[ci]
        np_rng = np.random.default_rng(self._randint("data", 2**31)[0])
        i, j = sample_pair_indices(len(frames), np_rng)
        aug_rng = np.random.default_rng(self._randint("aug", 2**31)[0])
        params = sample_augmentation(boxes[j], frames[j].shape[0], aug_rng)
        aug = augment_driving(frames[j], boxes[j], params)
        rts = compute_f_rts(boxes[i], boxes[j])
        return frames[i], frames[j], aug, rts

    def _batch(self, batch_size: int):
        refs, targets, augs, rts = [], [], [], []
        for _ in range(batch_size):
            r, d, a, triplet = self._sample_pair()
            refs.append(to_tensor(r))
            targets.append(to_tensor(d))
            augs.append(to_tensor(a))
            rts.append(torch.from_numpy(triplet.as_vector()))
        return (
            torch.stack(refs),
            torch.stack(targets),
            torch.stack(augs),
            torch.stack(rts),
        )

    def _draw_t_eps(self, shape, cfg: StageConfig | None = None):
        g = self.state.streams["t"]
        n = shape[0]
        t = torch.randint(self.bundle.cfg.t_steps, (n,), generator=g)
        if cfg is not None and cfg.t_band_frac > 0.0:
            lo, hi = cfg.t_band
            t_band = torch.randint(lo, hi, (n,), generator=g)
            pick = torch.rand(n, generator=g) < cfg.t_band_frac
            t = torch.where(pick, t_band, t)
        eps = torch.randn(shape, generator=self.state.streams["eps"])
        return t, eps

    # ---- steps ------------------------------------------------------------

    def training_step_stage1(self, cfg: StageConfig) -> dict:
        b = self.bundle
        refs, targets, _augs, _rts = self._batch(cfg.batch_size)
        z0 = to_signed(targets)
        t, eps = self._draw_t_eps(z0.shape, cfg)
        ref_feats = b.refnet(to_signed(refs))
        loss = diffusion_loss(b.denoiser, z0, t, eps, ref_feats=ref_feats)
        return {"l_ldm": loss}

    def training_step_stage2(self, cfg: StageConfig) -> dict:
        b = self.bundle
        refs, targets, augs, rts = self._batch(cfg.batch_size)
        z0 = to_signed(targets)
        t, eps = self._draw_t_eps(z0.shape, cfg)

        ref_feats = b.refnet(to_signed(refs))
        ref_feats = mask_features(
            ref_feats, cfg.mask_ratio, b.refnet.mask_embeddings,
            generator=self.state.streams["mask"],
        )
        f_mot = b.motion_enc(to_signed(augs))
        fused = b.rts_fusion(f_mot, rts)
        tokens = b.token_adapter(fused)
        losses = {"l_ldm": diffusion_loss(b.denoiser, z0, t, eps, ref_feats=ref_feats, motion=tokens)}

        if cfg.gan:
            f_app = b.app_enc(to_signed(refs))
            gen = b.generator(f_app, fused)
            g_adv, d_loss, fm = loss_adv_and_fm(gen, targets, b.disc)
            recon = loss_recon(gen, targets)
            vgg = loss_perceptual(gen, targets, b.vgg_proxy)
            vggf = loss_perceptual(gen, targets, b.vggface_proxy)
            losses.update(
                l_gan=loss_gan_total(g_adv, recon, vgg, vggf, fm, self.gan_weights),
                l_recon=recon,
                l_adv=g_adv,
                l_fm=fm,
                l_d=d_loss,
            )
        return losses

    def training_step_stage3(self, cfg: StageConfig) -> dict:
        b = self.bundle
        (ci,) = self._randint("data", len(self.data))
        frames, boxes = self.data.clips[ci]
        length = min(cfg.seq_len, len(frames))
        (start,) = self._randint("data", len(frames) - length + 1)
        (ref_i,) = self._randint("data", len(frames))

        aug_rng = np.random.default_rng(self._randint("aug", 2**31)[0])
        params = sample_augmentation(boxes[ref_i], frames[0].shape[0], aug_rng)

        window = [frames[start + k] for k in range(length)]
        z0 = torch.stack([to_signed(to_tensor(f)) for f in window])
        (t_single,) = self._randint("t", b.cfg.t_steps)
        t = torch.full((length,), t_single, dtype=torch.long)
        eps = torch.randn(z0.shape, generator=self.state.streams["eps"])

        ref_feats = b.refnet(to_signed(to_tensor(frames[ref_i])[None]))
        ref_feats = mask_features(
            ref_feats, cfg.mask_ratio, b.refnet.mask_embeddings,
            generator=self.state.streams["mask"],
        )
        augs, rts = [], []
        for k in range(length):
            augs.append(to_tensor(augment_driving(window[k], boxes[start + k], params)))
            rts.append(torch.from_numpy(compute_f_rts(boxes[ref_i], boxes[start + k]).as_vector()))
        tokens = b.motion_tokens(to_signed(torch.stack(augs)), torch.stack(rts))
        loss = diffusion_loss(
            b.denoiser, z0, t, eps, ref_feats=ref_feats, motion=tokens, frames=length
        )
        return {"l_ldm": loss}

    # ---- stage loop ---------------------------------------------------------

    def train_stage(self, cfg: StageConfig, callback=None) -> TrainState:
        state = self.state
        resuming = state.stage == cfg.stage
        if not resuming:
            if state.stage != cfg.stage - 1:
                raise CheckpointError(
                    f"stage {cfg.stage} requires a stage-{cfg.stage - 1} state, "
                    f"got stage {state.stage}"
                )
            state.stage = cfg.stage
            state.step = 0

        opt = NamedAdamW(self.bundle.trainable_parameters(cfg.stage), cfg)
        opt_d = NamedAdamW(self.bundle.discriminator_parameters(), cfg) if cfg.gan else None
        if state.opt_arrays:
            opt.load_state_arrays(state.opt_arrays, "opt_g")
            if opt_d is not None:
                opt_d.load_state_arrays(state.opt_arrays, "opt_d")
            state.opt_arrays = {}
        self._opt, self._opt_d = opt, opt_d

        step_fn = {
            1: self.training_step_stage1,
            2: self.training_step_stage2,
            3: self.training_step_stage3,
        }[cfg.stage]

        while state.step < cfg.steps:
            opt.zero_grad()
            if opt_d is not None:
                opt_d.zero_grad()
            losses = step_fn(cfg)
            total = losses["l_ldm"]
            if "l_gan" in losses:
                total = total + cfg.gan_weight * losses["l_gan"]
            if not torch.isfinite(total):
                raise RuntimeError(
                    f"non-finite loss at stage {cfg.stage} step {state.step}: "
                    + ", ".join(f"{k}={float(v):.4g}" for k, v in losses.items())
                )
            total.backward()
            opt.step()
            if opt_d is not None:
                opt_d.zero_grad()  # discard gradients leaked by the G objective
                losses["l_d"].backward()
                opt_d.step()

            record = {"stage": cfg.stage, "step": state.step}
            record.update({k: float(v.detach()) for k, v in losses.items()})
            state.loss_history.append(record)
            state.step += 1
            if callback is not None:
                callback(record)
        return state

    # ---- checkpointing -------------------------------------------------------

    def save_checkpoint(self, path: Path) -> None:
        save_checkpoint(path, self.bundle, self.state, self._opt, self._opt_d)


def save_checkpoint(
    path: Path,
    bundle: ModelBundle,
    state: TrainState,
    opt: NamedAdamW | None = None,
    opt_d: NamedAdamW | None = None,
) -> None:
    arrays = {
        f"model/{k}": v.detach().numpy() for k, v in bundle.state_dict().items()
    }
    for name, g in state.streams.items():
        arrays[f"rng/{name}"] = g.get_state().numpy()
    if opt is not None:
        arrays.update(opt.state_arrays("opt_g"))
    if opt_d is not None:
        arrays.update(opt_d.state_arrays("opt_d"))
    meta = {
        "config_hash": config_hash(bundle.cfg),
        "model_config": asdict(bundle.cfg),
        "stage": state.stage,
        "step": state.step,
        "seed": state.seed,
        "loss_history": state.loss_history,
    }
    save_arrays(path, arrays, meta)


def load_checkpoint(path: Path, bundle: ModelBundle) -> TrainState:
    arrays, meta = load_arrays(path)
    if meta["config_hash"] != config_hash(bundle.cfg):
        raise CheckpointError(
            "checkpoint config hash does not match the model configuration"
        )
    sd = {}
    for key, arr in arrays.items():
        if key.startswith("model/"):
            sd[key[len("model/"):]] = torch.from_numpy(arr.copy())
    bundle.load_state_dict(sd)

    streams = {}
    for name in STREAM_NAMES:
        g = torch.Generator()
        key = f"rng/{name}"
        if key in arrays:
            g.set_state(torch.from_numpy(arrays[key].copy()))
        streams[name] = g

    opt_arrays = {
        k: v for k, v in arrays.items() if k.startswith(("opt_g/", "opt_d/"))
    }
    return TrainState(
        stage=meta["stage"],
        step=meta["step"],
        seed=meta["seed"],
        loss_history=list(meta["loss_history"]),
        streams=streams,
        opt_arrays=opt_arrays,
    )
