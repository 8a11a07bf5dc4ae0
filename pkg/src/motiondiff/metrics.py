"""Evaluation harness: image metrics, motion/emotion correlation metrics,
pluggable embedding providers, and report emission.

External pretrained evaluators are out of scope; each metric that needs
one takes a provider object and reports an explicit unavailable status
when none is configured, never a substituted number.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage.metrics import structural_similarity
from skimage.transform import resize

from .sprites import ROLL_RANGE, extract_attributes, extract_identity_tone


class UndefinedMetricError(ValueError):
    pass


class ProviderUnavailable(RuntimeError):
    pass


# --- scalar kernels ----------------------------------------------------------


def metric_l1(gen: np.ndarray, gt: np.ndarray) -> float:
    return float(np.abs(gen.astype(np.float64) - gt.astype(np.float64)).mean())


def metric_ssim(gen: np.ndarray, gt: np.ndarray) -> float:
    """SSIM with the standard 11x11 Gaussian window, K1=0.01, K2=0.03."""
    return float(
        structural_similarity(
            gen,
            gt,
            channel_axis=2,
            data_range=1.0,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            K1=0.01,
            K2=0.03,
        )
    )


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        raise UndefinedMetricError("zero-variance sequence in correlation")
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def ccc(x: np.ndarray, y: np.ndarray) -> float:
    """Concordance correlation: 2*rho*sx*sy / (sx^2 + sy^2 + (mx - my)^2)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        raise UndefinedMetricError("zero-variance sequence in CCC")
    rho = pearson(x, y)
    return float(2.0 * rho * sx * sy / (sx**2 + sy**2 + (x.mean() - y.mean()) ** 2))


# --- provider-backed metrics ---------------------------------------------------


def metric_lpips(gen: np.ndarray, gt: np.ndarray, provider) -> float:
    if provider is None:
        raise ProviderUnavailable("no perceptual provider configured")
    return float(provider.distance(gen, gt))


def metric_pose_expr(gen_seq, drv_seq, provider) -> tuple[float, float]:
    """(AED, APD): mean |blendshape diff| and mean |pose angle diff| degrees."""
    if provider is None:
        raise ProviderUnavailable("no blendshape/pose provider configured")
    aeds, apds = [], []
    for g, d in zip(gen_seq, drv_seq):
        bg, pg = provider.analyze(g)
        bd, pd_ = provider.analyze(d)
        aeds.append(np.abs(np.asarray(bg) - np.asarray(bd)).mean())
        apds.append(np.abs(np.asarray(pg) - np.asarray(pd_)).mean())
    return float(np.mean(aeds)), float(np.mean(apds))


def metric_emo_sim(gen_seq, drv_seq, provider) -> float:
    """Mean of valence/arousal CCC and Pearson coefficients."""
    if provider is None:
        raise ProviderUnavailable("no emotion provider configured")
    va_g = np.array([provider.valence_arousal(f) for f in gen_seq])
    va_d = np.array([provider.valence_arousal(f) for f in drv_seq])
    vals = [
        ccc(va_g[:, 0], va_d[:, 0]),
        ccc(va_g[:, 1], va_d[:, 1]),
        pearson(va_g[:, 0], va_d[:, 0]),
        pearson(va_g[:, 1], va_d[:, 1]),
    ]
    return float(np.mean(vals))


def metric_id_sim(gen_seq, ref: np.ndarray, provider) -> float:
    if provider is None:
        raise ProviderUnavailable("no identity provider configured")
    e_ref = np.asarray(provider.embed(ref), float)
    sims = []
    for g in gen_seq:
        e = np.asarray(provider.embed(g), float)
        sims.append(e @ e_ref / (np.linalg.norm(e) * np.linalg.norm(e_ref) + 1e-12))
    return float(np.mean(sims))


# --- sprite-backed providers ----------------------------------------------------


class SpriteAttributeProvider:
    """Renderer-inverse provider covering the blendshape/pose/emotion roles."""

    name = "sprite-inverse"

    def __init__(self, center=(0.5, 0.5), zoom: float = 1.0):
        self.center = center
        self.zoom = zoom

    def analyze(self, img):
        a = extract_attributes(img, self.center, self.zoom)
        blendshapes = [a.eye_openness, a.mouth_openness, a.brow_raise]
        pose_deg = [a.yaw * 15.0, 0.0, np.degrees(a.roll * ROLL_RANGE)]
        return blendshapes, pose_deg

    def valence_arousal(self, img):
        a = extract_attributes(img, self.center, self.zoom)
        return 2.0 * a.brow_raise - 1.0, 2.0 * a.mouth_openness - 1.0


class SpriteIdentityProvider:
    name = "sprite-tone"
    dim = 2

    def __init__(self, center=(0.5, 0.5), zoom: float = 1.0):
        self.center = center
        self.zoom = zoom

    def embed(self, img):
        tone = extract_identity_tone(img, self.center, self.zoom)
        angle = tone * np.pi / 2.0
        return np.array([np.cos(angle), np.sin(angle)])


class RandomFeatureLPIPS:
    """Frozen random conv features as a perceptual-distance stand-in."""

    name = "random-conv-lpips"

    def __init__(self, seed: int = 7):
        from .config import ModelConfig
        from .gan import RandomConvPyramid

        self.pyramid = RandomConvPyramid(ModelConfig(), seed=seed)

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        import torch

        ta = torch.from_numpy(np.ascontiguousarray(a)).permute(2, 0, 1)[None].float()
        tb = torch.from_numpy(np.ascontiguousarray(b)).permute(2, 0, 1)[None].float()
        total = 0.0
        with torch.no_grad():
            for fa, fb in zip(self.pyramid(ta), self.pyramid(tb)):
                total += float((fa - fb).abs().mean())
        return total


# --- report ---------------------------------------------------------------------


@dataclass
class MetricReport:
    mode: str
    metric_resolution: int
    providers: dict[str, str] = field(default_factory=dict)
    per_pair: dict[str, list[float]] = field(default_factory=dict)
    aggregates: dict[str, float] = field(default_factory=dict)
    unavailable: dict[str, str] = field(default_factory=dict)

    def finalize(self) -> None:
        self.aggregates = {
            k: float(np.mean(v)) for k, v in self.per_pair.items() if v
        }

    def to_json(self) -> str:
        return json.dumps(
            {
                "mode": self.mode,
                "metric_resolution": self.metric_resolution,
                "providers": self.providers,
                "aggregates": self.aggregates,
                "per_pair": self.per_pair,
                "unavailable": self.unavailable,
            },
            indent=1,
        )

    def table(self) -> str:
        lines = [f"{'metric':<12} {'value':>10}"]
        for k, v in sorted(self.aggregates.items()):
            lines.append(f"{k:<12} {v:>10.4f}")
        for k, reason in sorted(self.unavailable.items()):
            lines.append(f"{k:<12} {'n/a':>10}  ({reason})")
        return "\n".join(lines)


def _prep(img: np.ndarray, res: int) -> np.ndarray:
    if img.shape[0] != res:
        img = resize(img, (res, res, 3), anti_aliasing=True).astype(np.float32)
    return img


def run_eval(
    mode: str,
    gen_frames: list[np.ndarray],
    drv_frames: list[np.ndarray],
    ref_frame: np.ndarray | None = None,
    providers: dict | None = None,
    metric_resolution: int = 64,
) -> MetricReport:
    """Compute the metric suite over aligned frame sequences.

    ``self`` mode compares generated frames against ground truth pixels;
    ``cross`` mode scores identity/motion/emotion consistency.
    """
    if mode not in ("self", "cross"):
        raise ValueError("mode must be 'self' or 'cross'")
    providers = providers or {}
    report = MetricReport(
        mode=mode,
        metric_resolution=metric_resolution,
        providers={k: getattr(v, "name", str(v)) for k, v in providers.items()},
    )
    gen = [_prep(f, metric_resolution) for f in gen_frames]
    drv = [_prep(f, metric_resolution) for f in drv_frames]

    if mode == "self":
        report.per_pair["l1"] = [metric_l1(g, d) for g, d in zip(gen, drv)]
        report.per_pair["ssim"] = [metric_ssim(g, d) for g, d in zip(gen, drv)]
        try:
            lp = providers.get("lpips")
            report.per_pair["lpips"] = [metric_lpips(g, d, lp) for g, d in zip(gen, drv)]
        except ProviderUnavailable as e:
            report.unavailable["lpips"] = str(e)
    else:
        try:
            aed, apd = metric_pose_expr(gen, drv, providers.get("pose"))
            report.per_pair["aed"] = [aed]
            report.per_pair["apd"] = [apd]
        except ProviderUnavailable as e:
            report.unavailable["aed"] = str(e)
            report.unavailable["apd"] = str(e)
        try:
            report.per_pair["emo_sim"] = [metric_emo_sim(gen, drv, providers.get("emotion"))]
        except ProviderUnavailable as e:
            report.unavailable["emo_sim"] = str(e)
        if ref_frame is not None:
            try:
                report.per_pair["id_sim"] = [
                    metric_id_sim(gen, _prep(ref_frame, metric_resolution), providers.get("identity"))
                ]
            except ProviderUnavailable as e:
                report.unavailable["id_sim"] = str(e)

    report.finalize()
    return report


def write_report(report: MetricReport, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.txt").write_text(report.table() + "\n")
