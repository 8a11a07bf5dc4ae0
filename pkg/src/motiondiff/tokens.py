"""Discrete motion tokens: VQ tokenizer over motion-latent sequences and a
small autoregressive transformer for motion outpainting.

A T-frame motion sequence becomes T/4 codebook indices (two stride-2
temporal convolutions). The codebook learns by EMA with dead-code
reseeding; the encoder trains through the straight-through estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import InvalidInputError


@dataclass
class VQConfig:
    d_mot: int = 512
    n_codes: int = 4096
    code_dim: int = 8
    hidden: int = 64
    commitment: float = 0.25
    ema_decay: float = 0.99
    downsample: int = 4  # fixed by the two stride-2 stages


def quantize(
    vec: torch.Tensor, codebook: torch.Tensor
) -> tuple[int, torch.Tensor, float]:
    """Nearest codebook row by L2; ties break to the lowest index."""
    if not torch.isfinite(vec).all():
        raise InvalidInputError("non-finite code vector")
    d2 = ((codebook - vec[None, :]) ** 2).sum(dim=1)
    idx = int(torch.argmin(d2))  # argmin returns the first minimum
    return idx, codebook[idx].clone(), float(d2[idx])


class MotionTokenizer(nn.Module):
    def __init__(self, cfg: VQConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden
        self.encoder = nn.Sequential(
            nn.Conv1d(cfg.d_mot, h, 3, padding=1),
            nn.SiLU(),
            nn.Conv1d(h, h, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv1d(h, h, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv1d(h, cfg.code_dim, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv1d(cfg.code_dim, h, 3, padding=1),
            nn.SiLU(),
            nn.ConvTranspose1d(h, h, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.ConvTranspose1d(h, h, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv1d(h, cfg.d_mot, 3, padding=1),
        )
        gen = torch.Generator().manual_seed(seed)
        codebook = torch.randn(cfg.n_codes, cfg.code_dim, generator=gen) * 0.5
        self.register_buffer("codebook", codebook)
        # counts start at one so embed_avg / cluster_size equals the codebook
        self.register_buffer("cluster_size", torch.ones(cfg.n_codes))
        self.register_buffer("embed_avg", codebook.clone())

    def _check_length(self, t: int) -> None:
        if t % self.cfg.downsample != 0:
            raise InvalidInputError(
                f"sequence length {t} not divisible by {self.cfg.downsample}"
            )

    def encode_codes(self, motion_seq: torch.Tensor) -> torch.Tensor:
        """(T, d_mot) -> (T/4, code_dim) continuous pre-quantization codes."""
        self._check_length(motion_seq.shape[0])
        x = motion_seq.t()[None]  # (1, d_mot, T)
        return self.encoder(x)[0].t()

    def lookup(self, codes: torch.Tensor) -> torch.Tensor:
        d2 = torch.cdist(codes, self.codebook) ** 2
        return torch.argmin(d2, dim=1)

    def vq_encode(self, motion_seq: torch.Tensor) -> torch.Tensor:
        """(T, d_mot) -> T/4 codebook indices."""
        with torch.no_grad():
            return self.lookup(self.encode_codes(motion_seq))

    def vq_decode(self, tokens: torch.Tensor) -> torch.Tensor:
        """Token indices -> (4 * len(tokens), d_mot) motion sequence."""
        codes = self.codebook[tokens]
        return self.decoder(codes.t()[None])[0].t()

    def forward(self, motion_seq: torch.Tensor):
        """Straight-through reconstruction; returns (recon, indices, losses)."""
        z_e = self.encode_codes(motion_seq)
        indices = self.lookup(z_e)
        z_q = self.codebook[indices]
        commit = F.mse_loss(z_e, z_q.detach())
        z_st = z_e + (z_q - z_e).detach()
        recon = self.decoder(z_st.t()[None])[0].t()
        return recon, indices, commit

    @torch.no_grad()
    def ema_update(self, z_e: torch.Tensor, indices: torch.Tensor, rng: torch.Generator):
        cfg = self.cfg
        onehot = F.one_hot(indices, cfg.n_codes).float()
        counts = onehot.sum(dim=0)
        sums = onehot.t() @ z_e
        self.cluster_size.mul_(cfg.ema_decay).add_(counts, alpha=1 - cfg.ema_decay)
        self.embed_avg.mul_(cfg.ema_decay).add_(sums, alpha=1 - cfg.ema_decay)
        n = self.cluster_size.sum()
        smoothed = (self.cluster_size + 1e-5) / (n + cfg.n_codes * 1e-5) * n
        self.codebook.copy_(self.embed_avg / smoothed[:, None])
        # reseed dead codes from current batch encodings
        dead = self.cluster_size < 1e-3
        if dead.any() and z_e.shape[0] > 0:
            pick = torch.randint(z_e.shape[0], (int(dead.sum()),), generator=rng)
            self.codebook[dead] = z_e[pick]
            self.embed_avg[dead] = z_e[pick]
            self.cluster_size[dead] = 1.0


def fit_tokenizer(
    tokenizer: MotionTokenizer,
    sequences: list[torch.Tensor],
    steps: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """Train encoder/decoder with EMA codebook updates; returns loss curve."""
    opt = torch.optim.Adam(
        list(tokenizer.encoder.parameters()) + list(tokenizer.decoder.parameters()),
        lr=lr,
    )
    gen = torch.Generator().manual_seed(seed)
    history = []
    for step in range(steps):
        seq = sequences[int(torch.randint(len(sequences), (1,), generator=gen))]
        recon, indices, commit = tokenizer(seq)
        loss = F.mse_loss(recon, seq) + tokenizer.cfg.commitment * commit
        opt.zero_grad()
        loss.backward()
        opt.step()
        with torch.no_grad():
            z_e = tokenizer.encode_codes(seq)
        tokenizer.ema_update(z_e, indices, gen)
        history.append(float(loss.detach()))
    return history


# --- autoregressive extender -------------------------------------------------


class MotionGPT(nn.Module):
    """Small decoder-only transformer over the motion-token vocabulary.

    Token 'vocab_size' is the start token; an optional condition-token hook
    (``cond_tokens``) reserves space for future conditioned generation.
    """

    def __init__(
        self,
        vocab_size: int,
        d_model: int = 128,
        n_layers: int = 4,
        n_heads: int = 4,
        max_len: int = 256,
        seed: int = 0,
    ):
        super().__init__()
        torch.manual_seed(seed)
        self.vocab_size = vocab_size
        self.start_token = vocab_size
        self.max_len = max_len
        self.tok_emb = nn.Embedding(vocab_size + 1, d_model)
        self.pos_emb = nn.Parameter(torch.zeros(max_len, d_model))
        layer = nn.TransformerEncoderLayer(
            d_model, n_heads, dim_feedforward=4 * d_model,
            batch_first=True, norm_first=True, dropout=0.0,
        )
        self.blocks = nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)
        self.head = nn.Linear(d_model, vocab_size)

    def logits(self, tokens: torch.Tensor) -> torch.Tensor:
        n = tokens.shape[1]
        x = self.tok_emb(tokens) + self.pos_emb[:n]
        mask = nn.Transformer.generate_square_subsequent_mask(n)
        h = self.blocks(x, mask=mask, is_causal=True)
        return self.head(h)


def extend_sequence(
    prefix_tokens: torch.Tensor,
    model: MotionGPT,
    horizon: int,
    rng: torch.Generator | None = None,
    temperature: float = 0.0,
    top_k: int = 0,
    cond_tokens: torch.Tensor | None = None,
) -> torch.Tensor:
    """Autoregressively extend a token sequence by ``horizon`` tokens.

    The prefix is preserved verbatim. temperature 0 decodes greedily.
    """
    if horizon < 0:
        raise InvalidInputError("horizon must be >= 0")
    prefix_tokens = prefix_tokens.long()
    seq = torch.cat([torch.tensor([model.start_token]), prefix_tokens])
    if cond_tokens is not None:
        seq = torch.cat([torch.tensor([model.start_token]), cond_tokens.long(), prefix_tokens])
    with torch.no_grad():
        for _ in range(horizon):
            logits = model.logits(seq[None, -model.max_len :])[0, -1]
            if temperature <= 0.0:
                nxt = int(torch.argmax(logits))
            else:
                logits = logits / temperature
                if top_k > 0:
                    cutoff = torch.topk(logits, min(top_k, logits.shape[0])).values[-1]
                    logits = logits.masked_fill(logits < cutoff, float("-inf"))
                probs = torch.softmax(logits, dim=-1)
                nxt = int(torch.multinomial(probs, 1, generator=rng))
            seq = torch.cat([seq, torch.tensor([nxt])])
    out = seq[1:]
    if cond_tokens is not None:
        out = seq[1 + len(cond_tokens) :]
    return out


def fit_gpt(
    model: MotionGPT,
    token_seqs: list[torch.Tensor],
    steps: int = 300,
    lr: float = 3e-4,
    seed: int = 0,
) -> list[float]:
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    history = []
    for _ in range(steps):
        seq = token_seqs[int(torch.randint(len(token_seqs), (1,), generator=gen))].long()
        inp = torch.cat([torch.tensor([model.start_token]), seq[:-1]])[None]
        logits = model.logits(inp)
        loss = F.cross_entropy(logits[0], seq)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss.detach()))
    return history
