"""Two-stage training orchestration.

Stage 1 fits the four autoencoder pairs and both codebooks, each pair
independently on its own domain. Stage 2 freezes all of that and fits
only the two attention stacks plus their feature discriminators; a
parameter hash taken before and after stage 2 asserts that the frozen
parts never moved.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from quantart.autoencoder import AutoencoderPair, pair_loss
from quantart.checkpoint import (
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from quantart.data import sample_batch
from quantart.nn import FeatureDiscriminator
from quantart.quantize import quantize, reseed_dead_entries, usage_stats
from quantart.sga import (
    SGAStack,
    sga_hat_loss,
    sga_losses,
    sga_quantized_forward,
    style_statistics_loss,
)
from quantart.tensor import Tensor, no_grad


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int = 4
    steps: int | None = None      # overrides epochs*batches when set
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    image_size: int = 32
    num_entries: int = 128
    latent_dim: int = 64
    sga_depth: int = 2
    channels: tuple = (16, 32, 32, 64)
    recon_weight: float = 1.0
    codebook_weight: float = 1.0
    content_weight: float = 1.0
    style_weight: float = 10.0
    adv_weight: float = 0.8
    commitment_weight: float = 0.25
    adv_warmup: bool = True       # ramp adv weight over the first 20% of steps
    augment: bool = True
    reseed_interval: int = 50     # steps between dead-entry reseeds; 0 = off
    attn_scale: bool = False
    sga_mode: str = "cross"
    # ablation switches
    shared_encoders: bool = False
    shared_autoencoders: bool = False
    no_sga_quantization: bool = False
    no_quantization: bool = False
    no_self_attn: bool = False
    no_resblock: bool = False

    def __post_init__(self):
        for name in ("recon_weight", "codebook_weight", "content_weight",
                     "style_weight", "adv_weight", "commitment_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.image_size % (2 ** len(self.channels)) != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by "
                f"2^{len(self.channels)} levels")
        self.channels = tuple(self.channels)

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def code_size(self) -> int:
        return self.image_size // (2 ** self.levels)

    @classmethod
    def paper_config(cls, **overrides):
        """Full-scale hyperparameters; impractical without accelerators."""
        base = dict(epochs=50, batch_size=32, learning_rate=4.5e-6,
                    image_size=256, num_entries=1024, latent_dim=256,
                    sga_depth=6, channels=(128, 128, 256, 512))
        base.update(overrides)
        return cls(**base)

    @classmethod
    def toy(cls, **overrides):
        """Small enough for a complete two-stage run in minutes on a CPU.

        The adversarial weight is dialed far down: on toy-sized datasets
        the discriminators memorize quickly and a full-strength GAN term
        destabilizes reconstruction.
        """
        base = dict(epochs=1, steps=200, batch_size=8, image_size=32,
                    num_entries=64, latent_dim=8, sga_depth=2,
                    channels=(16, 32), augment=False, learning_rate=1e-3,
                    adv_weight=0.1, reseed_interval=25)
        base.update(overrides)
        return cls(**base)

    def with_code_size(self, code_size: int):
        """Adjust depth so latents are code_size x code_size."""
        ratio = self.image_size // code_size
        levels = int(np.log2(ratio))
        if 2 ** levels != ratio or levels < 1:
            raise ValueError(
                f"code size {code_size} unreachable from {self.image_size}")
        chans = tuple(self.channels[min(i, len(self.channels) - 1)]
                      for i in range(levels))
        return replace(self, channels=chans)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        if "channels" in kwargs:
            kwargs["channels"] = tuple(kwargs["channels"])
        return cls(**kwargs)


class Adam:
    """Standard bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, grads: dict | None = None):
        """Apply one update from ``grads`` (or the tensors' .grad)."""
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name) if grads is not None else p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} != parameter shape "
                    f"{p.data.shape} for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr * (m / b1t)
                      / (np.sqrt(v / b2t) + self.eps))
            p.data = p.data - update.astype(p.data.dtype)


def adam_step(params: dict, grads: dict, state: Adam | None = None,
              lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> Adam:
    """One-shot functional wrapper; returns the optimizer for reuse."""
    opt = state if state is not None else Adam(params, lr, beta1, beta2, eps)
    opt.step(grads)
    return opt


def effective_adv_weight(cfg: TrainConfig, step: int, total_steps: int
                         ) -> float:
    """0 -> adv_weight linearly over the first 20% of steps, then flat."""
    if not cfg.adv_warmup:
        return cfg.adv_weight
    ramp = max(1, int(0.2 * total_steps))
    return cfg.adv_weight * min(1.0, step / ramp)


PAIR_NAMES = ("photo_cont", "photo_quant", "art_cont", "art_quant")


class ModelBundle:
    """Every trainable component plus config and stage provenance."""

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stage = 0
        self.stage1_hashes: dict | None = None

        def pair(domain, quantized):
            return AutoencoderPair(
                in_channels=3, latent_dim=cfg.latent_dim,
                channels=cfg.channels, num_entries=cfg.num_entries,
                rng=rng, domain=domain, quantized=quantized)

        self.photo_cont = pair("photo", False)
        self.art_cont = pair("art", False)
        if cfg.no_quantization:
            self.photo_quant = None
            self.art_quant = None
        else:
            self.photo_quant = pair("photo", True)
            self.art_quant = pair("art", True)
            if cfg.shared_encoders or cfg.shared_autoencoders:
                self.photo_quant.encoder = self.photo_cont.encoder
                self.art_quant.encoder = self.art_cont.encoder
            if cfg.shared_autoencoders:
                self.photo_quant.decoder = self.photo_cont.decoder
                self.art_quant.decoder = self.art_cont.decoder

        def stack():
            return SGAStack(cfg.latent_dim, cfg.sga_depth, rng,
                            mode=cfg.sga_mode, scale_logits=cfg.attn_scale,
                            use_self_attn=not cfg.no_self_attn,
                            use_resblock=not cfg.no_resblock)

        self.sga = stack()
        self.sga_hat = None if cfg.no_quantization else stack()
        self.feat_disc = FeatureDiscriminator(cfg.latent_dim, rng)
        self.feat_disc_hat = (None if cfg.no_quantization
                              else FeatureDiscriminator(cfg.latent_dim, rng))
        # inference reads this to honor the re-quantization ablation
        self.requantize_sga = not cfg.no_sga_quantization

    # -- component walks ------------------------------------------------

    def components(self) -> dict:
        out = {}
        for name in PAIR_NAMES + ("sga", "sga_hat", "feat_disc",
                                  "feat_disc_hat"):
            comp = getattr(self, name)
            if comp is not None:
                out[name] = comp
        return out

    def named_arrays(self) -> dict:
        arrays = {}
        for comp_name, comp in self.components().items():
            for p_name, p in comp.named_parameters():
                arrays[f"{comp_name}.{p_name}"] = p.data
        return arrays

    def stage1_components(self) -> dict:
        return {n: c for n, c in self.components().items()
                if n in PAIR_NAMES}

    def stage1_parameter_hashes(self) -> dict:
        out = {}
        for comp_name, comp in self.stage1_components().items():
            h = hashlib.sha256()
            for p_name, p in comp.named_parameters():
                h.update(p_name.encode())
                h.update(str(p.data.shape).encode())
                h.update(np.ascontiguousarray(p.data).tobytes())
            out[comp_name] = h.hexdigest()
        return out

    def model_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.named_arrays()):
            arr = self.named_arrays()[name]
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    # -- persistence ----------------------------------------------------

    def save(self, path) -> None:
        config = {"train": self.cfg.to_dict(),
                  "stage1_hashes": self.stage1_hashes}
        save_checkpoint(path, self.stage, config, self.named_arrays())

    @classmethod
    def load(cls, path):
        stage, config, arrays = load_checkpoint(path)
        cfg = TrainConfig.from_dict(config["train"])
        bundle = cls(cfg, np.random.default_rng(cfg.seed))
        bundle.stage = stage
        bundle.stage1_hashes = config.get("stage1_hashes")
        own = bundle.named_arrays()
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise CheckpointError(
                f"parameter set mismatch; missing {missing[:5]}, "
                f"unexpected {extra[:5]}")
        for comp_name, comp in bundle.components().items():
            for p_name, p in comp.named_parameters():
                arr = arrays[f"{comp_name}.{p_name}"]
                if arr.shape != p.data.shape:
                    raise CheckpointError(
                        f"shape mismatch for {comp_name}.{p_name}: "
                        f"{arr.shape} vs {p.data.shape}")
                p.data = arr.astype(p.data.dtype)
        return bundle


def _model_hash_arrays(arrays: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name]).tobytes())
    return h.hexdigest()


# -- stage 1 ------------------------------------------------------------


def _gen_params(pair: AutoencoderPair) -> dict:
    params = {}
    for prefix, comp in (("encoder", pair.encoder),
                         ("decoder", pair.decoder)):
        for n, p in comp.named_parameters():
            params[f"{prefix}.{n}"] = p
    if pair.codebook is not None:
        params["codebook.entries"] = pair.codebook.entries
    return params


def _total_steps(cfg: TrainConfig, n_images: int) -> int:
    if cfg.steps is not None:
        return cfg.steps
    batches = max(1, n_images // cfg.batch_size)
    return cfg.epochs * batches


def train_stage1(cfg: TrainConfig, photos: np.ndarray, arts: np.ndarray,
                 bundle: ModelBundle | None = None):
    """Fit the four pairs; returns (bundle, history).

    history is a list (one entry per step) of {pair: loss parts} dicts.
    """
    if len(photos) == 0 or len(arts) == 0:
        raise ValueError("stage 1 needs non-empty photo and art datasets")
    rng = np.random.default_rng(cfg.seed)
    if bundle is None:
        bundle = ModelBundle(cfg, rng)
    datasets = {"photo": photos, "art": arts}
    pairs = {n: getattr(bundle, n) for n in PAIR_NAMES
             if getattr(bundle, n) is not None}
    gen_opts = {n: Adam(_gen_params(p), cfg.learning_rate)
                for n, p in pairs.items()}
    disc_opts = {n: Adam(dict(p.discriminator.named_parameters()),
                         cfg.learning_rate)
                 for n, p in pairs.items()}
    usage = {n: np.zeros(cfg.num_entries, dtype=np.int64)
             for n, p in pairs.items() if p.codebook is not None}

    total = _total_steps(cfg, min(len(photos), len(arts)))
    history = []
    for step in range(total):
        w_adv = effective_adv_weight(cfg, step, total)
        record = {}
        for name, pair in pairs.items():
            domain = pair.domain
            x = sample_batch(datasets[domain], cfg.batch_size, rng,
                             augment=cfg.augment)
            pair.zero_grad()
            x_rec, report = pair_loss(pair, x, adv_weight=w_adv)
            if not np.isfinite(report.total.data):
                raise FloatingPointError(
                    f"stage 1 diverged: non-finite loss for {name} "
                    f"at step {step}")
            report.total.backward()
            gen_opts[name].step()
            pair.discriminator.zero_grad()
            report.disc_total.backward()
            disc_opts[name].step()
            record[name] = report.parts() | {"adv_weight": w_adv}
            if pair.codebook is not None:
                with no_grad():
                    latent = pair.encode(x)
                    q = quantize(latent, pair.codebook)
                hist, perp = usage_stats(q.indices, cfg.num_entries)
                usage[name] += hist
                record[name]["perplexity"] = perp
                if (cfg.reseed_interval
                        and (step + 1) % cfg.reseed_interval == 0):
                    # entries untouched across the whole window get
                    # reseeded; the used set doubles as the index list
                    used = np.flatnonzero(usage[name] > 0)
                    if used.size < cfg.num_entries:
                        reseed_dead_entries(pair.codebook, latent, used, rng)
                    usage[name][:] = 0
        history.append(record)
    bundle.stage = max(bundle.stage, 1)
    return bundle, history


# -- stage 2 ------------------------------------------------------------


def _stack_params(bundle: ModelBundle) -> dict:
    params = {f"sga.{n}": p for n, p in bundle.sga.named_parameters()}
    if bundle.sga_hat is not None:
        params.update({f"sga_hat.{n}": p
                       for n, p in bundle.sga_hat.named_parameters()})
    return params


def _feat_disc_params(bundle: ModelBundle) -> dict:
    params = {f"feat_disc.{n}": p
              for n, p in bundle.feat_disc.named_parameters()}
    if bundle.feat_disc_hat is not None:
        params.update({f"feat_disc_hat.{n}": p
                       for n, p in bundle.feat_disc_hat.named_parameters()})
    return params


def _zero_params(params: dict) -> None:
    for p in params.values():
        p.grad = None


def encode_stage2_features(bundle: ModelBundle, content: Tensor,
                           style: Tensor):
    """Frozen-path encodings used by stage 2 and inference."""
    with no_grad():
        z_c = bundle.photo_cont.encode(content)
        z_s = bundle.art_cont.encode(style)
        if bundle.photo_quant is None:
            return z_c, z_s, None, None
        z_c_hat = quantize(bundle.photo_quant.encode(content),
                           bundle.photo_quant.codebook).quantized
        z_s_hat = quantize(bundle.art_quant.encode(style),
                           bundle.art_quant.codebook).quantized
    return z_c, z_s, z_c_hat, z_s_hat


def train_stage2(cfg: TrainConfig, bundle: ModelBundle, photos: np.ndarray,
                 arts: np.ndarray):
    """Fit the attention stacks over a frozen stage-1 bundle.

    Asserts before returning that no frozen parameter changed.
    """
    if bundle.stage < 1:
        raise ValueError(
            f"stage 2 requires a completed stage-1 bundle, got stage "
            f"{bundle.stage}")
    if len(photos) == 0 or len(arts) == 0:
        raise ValueError("stage 2 needs non-empty photo and art datasets")
    rng = np.random.default_rng(cfg.seed + 1)
    frozen_hashes = bundle.stage1_parameter_hashes()
    for comp in bundle.stage1_components().values():
        comp.freeze()

    stack_params = _stack_params(bundle)
    disc_params = _feat_disc_params(bundle)
    gen_opt = Adam(stack_params, cfg.learning_rate)
    disc_opt = Adam(disc_params, cfg.learning_rate)

    total = _total_steps(cfg, min(len(photos), len(arts)))
    history = []
    for step in range(total):
        w_adv = effective_adv_weight(cfg, step, total)
        content = sample_batch(photos, cfg.batch_size, rng,
                               augment=cfg.augment)
        style = sample_batch(arts, cfg.batch_size, rng, augment=cfg.augment)
        z_c, z_s, z_c_hat, z_s_hat = encode_stage2_features(
            bundle, content, style)

        _zero_params(stack_params)
        _zero_params(disc_params)
        z_y = bundle.sga(z_c, z_s)
        report = sga_losses(z_y, z_c, z_s, bundle.feat_disc,
                            adv_weight=w_adv)
        total_loss = report.total
        disc_loss = report.disc_total
        record = {"cont": report.parts() | {"adv_weight": w_adv}}
        if bundle.sga_hat is not None:
            if bundle.requantize_sga:
                q, pre = sga_quantized_forward(
                    bundle.sga_hat, z_c_hat, z_s_hat,
                    bundle.art_quant.codebook)
                report_hat = sga_hat_loss(q, pre, z_c_hat, z_s_hat,
                                          bundle.feat_disc_hat,
                                          adv_weight=w_adv)
            else:
                pre = bundle.sga_hat(z_c_hat, z_s_hat)
                report_hat = sga_losses(pre, z_c_hat, z_s_hat,
                                        bundle.feat_disc_hat,
                                        adv_weight=w_adv)
            total_loss = total_loss + report_hat.total
            disc_loss = disc_loss + report_hat.disc_total
            record["quant"] = report_hat.parts() | {"adv_weight": w_adv}
        if not np.isfinite(total_loss.data):
            raise FloatingPointError(
                f"stage 2 diverged: non-finite loss at step {step}")
        total_loss.backward()
        gen_opt.step()
        _zero_params(disc_params)
        disc_loss.backward()
        disc_opt.step()
        history.append(record)

    after = bundle.stage1_parameter_hashes()
    changed = [n for n in frozen_hashes if frozen_hashes[n] != after[n]]
    if changed:
        raise AssertionError(
            f"frozen stage-1 parameters changed during stage 2: {changed}")
    for comp in bundle.stage1_components().values():
        comp.unfreeze()
    bundle.stage = 2
    bundle.stage1_hashes = frozen_hashes
    return bundle, history


def evaluate_style_loss(bundle: ModelBundle, photos: np.ndarray,
                        arts: np.ndarray) -> float:
    """Mean style-statistics distance of stack outputs against their
    style features over a fixed content/style pairing."""
    n = min(len(photos), len(arts))
    content = Tensor(photos[:n])
    style = Tensor(arts[:n])
    with no_grad():
        z_c = bundle.photo_cont.encode(content)
        z_s = bundle.art_cont.encode(style)
        z_y = bundle.sga(z_c, z_s)
        loss = style_statistics_loss(z_y, z_s).item()
        if bundle.sga_hat is not None:
            z_c_hat = quantize(bundle.photo_quant.encode(content),
                               bundle.photo_quant.codebook).quantized
            z_s_hat = quantize(bundle.art_quant.encode(style),
                               bundle.art_quant.codebook).quantized
            out = bundle.sga_hat(z_c_hat, z_s_hat)
            loss = 0.5 * (loss + style_statistics_loss(out, z_s_hat).item())
    return loss


def evaluate_recon_loss(pair: AutoencoderPair, images: np.ndarray) -> float:
    """Mean absolute reconstruction error over a dataset."""
    from quantart.autoencoder import reconstruct

    x = Tensor(images)
    with no_grad():
        x_rec, _, _ = reconstruct(pair, x)
        return float(np.abs(x_rec.data - x.data).mean())
