"""Network building blocks: conv layers, ResBlocks, encoder/decoder
stacks, and patch discriminators.

Blocks are plain objects holding parameter Tensors; ``Module`` gives
them recursive parameter enumeration (stable, insertion-ordered names)
plus state-dict save/load. Forward passes are pure functions of the
parameters, so frozen modules are safe to share between threads.
"""

from __future__ import annotations

import hashlib

import numpy as np

from quantart.tensor import Tensor, conv2d, upsample_nearest2x


def silu(x):
    return x.silu()


def relu(x):
    return (x + x.abs()) * 0.5


ACTIVATIONS = {"silu": silu, "relu": relu}


class Module:
    """Base for parameterized blocks.

    Parameters are Tensor attributes (or Tensors inside sub-Modules /
    lists of sub-Modules); enumeration follows attribute insertion
    order, which makes checkpoint layouts and init sequences
    reproducible.
    """

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ValueError(f"state dict mismatch: missing={missing} extra={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for '{name}': {arr.shape} vs {p.data.shape}"
                )
            p.data = arr
            p.grad = None

    def params_hash(self) -> str:
        """SHA-256 over (name, shape, bytes) of all parameters."""
        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(str(p.data.shape).encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _conv_init(rng, cout, cin, k, dtype):
    fan_in = cin * k * k
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal((cout, cin, k, k)) * std).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=0, dtype=np.float32):
        self.stride = stride
        self.pad = pad
        self.weight = Tensor(_conv_init(rng, cout, cin, k, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class GroupNorm(Module):
    """Group normalization; group count is the largest divisor of C up to 8,
    so it works at any desk-scale channel width and never depends on batch
    statistics."""

    def __init__(self, channels, eps=1e-6, dtype=np.float32):
        self.channels = channels
        self.groups = max(g for g in range(1, 9) if channels % g == 0)
        self.eps = eps
        self.gamma = Tensor(np.ones((1, channels, 1, 1), dtype=dtype),
                            requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1, 1), dtype=dtype),
                           requires_grad=True)

    def forward(self, x):
        b, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        g = self.groups
        xg = x.reshape(b, g, (c // g) * h * w)
        mu = xg.mean(axis=2, keepdims=True)
        centered = xg - mu
        var = (centered * centered).mean(axis=2, keepdims=True)
        normed = centered / (var + self.eps).sqrt()
        return normed.reshape(b, c, h, w) * self.gamma + self.beta


class ResBlock(Module):
    """Pre-activation residual block: norm-act-conv twice plus identity.

    A 1x1 projection joins the shortcut when channel counts differ. With
    all conv weights zero and matching channels, forward(x) == x.
    """

    def __init__(self, cin, cout, rng, act="silu", dtype=np.float32):
        self.cin = cin
        self.cout = cout
        self.act = act
        self.norm1 = GroupNorm(cin, dtype=dtype)
        self.conv1 = Conv2d(cin, cout, 3, rng, pad=1, dtype=dtype)
        self.norm2 = GroupNorm(cout, dtype=dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng, pad=1, dtype=dtype)
        if cin != cout:
            self.shortcut = Conv2d(cin, cout, 1, rng, dtype=dtype)
        else:
            self.shortcut = None

    def forward(self, x):
        if x.shape[1] != self.cin:
            raise ValueError(f"expected {self.cin} channels, got {x.shape[1]}")
        act = ACTIVATIONS[self.act]
        h = self.conv1(act(self.norm1(x)))
        h = self.conv2(act(self.norm2(h)))
        skip = self.shortcut(x) if self.shortcut is not None else x
        return h + skip


class Downsample(Module):
    """Strided conv halving the spatial size; input dims must be even."""

    def __init__(self, cin, cout, rng, dtype=np.float32):
        self.conv = Conv2d(cin, cout, 3, rng, stride=2, pad=1, dtype=dtype)

    def forward(self, x):
        _, _, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"downsample needs even spatial dims, got {h}x{w}")
        return self.conv(x)


class Upsample(Module):
    """Nearest-neighbor 2x upsample followed by a 3x3 conv."""

    def __init__(self, cin, cout, rng, dtype=np.float32):
        self.conv = Conv2d(cin, cout, 3, rng, pad=1, dtype=dtype)

    def forward(self, x):
        return self.conv(upsample_nearest2x(x))


class Encoder(Module):
    """Image to latent map: stem conv, then per level two ResBlocks and a
    downsample, then a 1x1 projection to the latent dim. Spatial size
    shrinks by 2^levels."""

    def __init__(self, in_channels, channels, latent_dim, rng, act="silu",
                 dtype=np.float32):
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.latent_dim = latent_dim
        self.stem = Conv2d(in_channels, channels[0], 3, rng, pad=1, dtype=dtype)
        blocks = []
        for i, c in enumerate(channels):
            c_next = channels[i + 1] if i + 1 < len(channels) else c
            blocks.append(_EncoderLevel(c, c_next, rng, act, dtype))
        self.blocks = blocks
        self.out_norm = GroupNorm(self.channels[-1], dtype=dtype)
        self.act = act
        self.proj = Conv2d(self.channels[-1], latent_dim, 1, rng, dtype=dtype)

    def forward(self, x):
        h = self.stem(x)
        for block in self.blocks:
            h = block(h)
        return self.proj(ACTIVATIONS[self.act](self.out_norm(h)))

    def forward_taps(self, x):
        """Latent plus the feature map after each level (metric taps)."""
        taps = []
        h = self.stem(x)
        for block in self.blocks:
            h = block(h)
            taps.append(h)
        latent = self.proj(ACTIVATIONS[self.act](self.out_norm(h)))
        return latent, taps


class _EncoderLevel(Module):
    def __init__(self, c, c_next, rng, act, dtype):
        self.res1 = ResBlock(c, c, rng, act, dtype)
        self.res2 = ResBlock(c, c, rng, act, dtype)
        self.down = Downsample(c, c_next, rng, dtype)

    def forward(self, x):
        return self.down(self.res2(self.res1(x)))


class Decoder(Module):
    """Latent to image map mirroring ``Encoder``; ends in tanh so outputs
    live in [-1, 1]."""

    def __init__(self, out_channels, channels, latent_dim, rng, act="silu",
                 dtype=np.float32):
        self.channels = tuple(channels)
        rev = tuple(reversed(channels))
        self.proj = Conv2d(latent_dim, rev[0], 1, rng, dtype=dtype)
        blocks = []
        for i, c in enumerate(rev):
            c_next = rev[i + 1] if i + 1 < len(rev) else c
            blocks.append(_DecoderLevel(c, c_next, rng, act, dtype))
        self.blocks = blocks
        self.out_norm = GroupNorm(rev[-1], dtype=dtype)
        self.act = act
        self.out_conv = Conv2d(rev[-1], out_channels, 3, rng, pad=1, dtype=dtype)

    def forward(self, z):
        h = self.proj(z)
        for block in self.blocks:
            h = block(h)
        return self.out_conv(ACTIVATIONS[self.act](self.out_norm(h))).tanh()


class _DecoderLevel(Module):
    def __init__(self, c, c_next, rng, act, dtype):
        self.res1 = ResBlock(c, c, rng, act, dtype)
        self.res2 = ResBlock(c, c, rng, act, dtype)
        self.up = Upsample(c, c_next, rng, dtype)

    def forward(self, x):
        return self.up(self.res2(self.res1(x)))


class PatchDiscriminator(Module):
    """Three strided conv layers mapping an image to a grid of logits,
    one per receptive-field patch. Probabilities are taken with sigmoid
    at the loss site."""

    def __init__(self, in_channels, base, rng, act="silu", dtype=np.float32):
        self.in_channels = in_channels
        self.act = act
        self.conv1 = Conv2d(in_channels, base, 3, rng, stride=2, pad=1, dtype=dtype)
        self.conv2 = Conv2d(base, base * 2, 3, rng, stride=2, pad=1, dtype=dtype)
        self.norm = GroupNorm(base * 2, dtype=dtype)
        self.conv3 = Conv2d(base * 2, 1, 3, rng, pad=1, dtype=dtype)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"discriminator expects {self.in_channels} channels, got {x.shape[1]}"
            )
        act = ACTIVATIONS[self.act]
        h = act(self.conv1(x))
        h = act(self.norm(self.conv2(h)))
        return self.conv3(h)


class FeatureDiscriminator(Module):
    """Lightweight patch discriminator over latent feature maps: a 1x1
    mixing conv followed by a 3x3 logit conv."""

    def __init__(self, dim, rng, act="silu", dtype=np.float32):
        self.in_channels = dim
        self.act = act
        self.conv1 = Conv2d(dim, dim, 1, rng, dtype=dtype)
        self.conv2 = Conv2d(dim, 1, 3, rng, pad=1, dtype=dtype)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"discriminator expects {self.in_channels} channels, got {x.shape[1]}"
            )
        return self.conv2(ACTIVATIONS[self.act](self.conv1(x)))


# -- adversarial objectives ----------------------------------------------
#
# The discriminator maximizes  log D(real) + log(1 - D(fake))  (reported
# by ``adversarial_value``); its training loss is the negation. The
# generator uses the non-saturating form -log D(fake), which shares the
# same fixed point but keeps gradients alive early in training.

def discriminator_loss(real_logits, fake_logits):
    return -(real_logits.log_sigmoid().mean()
             + (-fake_logits).log_sigmoid().mean())


def generator_loss(fake_logits):
    return -fake_logits.log_sigmoid().mean()


def adversarial_value(real_logits, fake_logits):
    """log D(real) + log(1 - D(fake)), the quantity the discriminator
    maximizes; -2*ln 2 when both probabilities sit at 0.5."""
    return (real_logits.log_sigmoid().mean()
            + (-fake_logits).log_sigmoid().mean())
