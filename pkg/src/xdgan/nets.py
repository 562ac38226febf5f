"""Weight-shared encoder/generator/discriminator stacks.

One generator trunk and one discriminator trunk serve both image domains;
only the thin domain branches differ.  The shared sub-networks hold their
parameters exactly once, so the source path and the target path literally
read the same storage.

Reference configuration (28x28x1 images):

    generator   trunk: concat(z, one-hot label) -> fc -> [128,7,7]
                       -> tconv 4x4/2 -> [64,14,14]
                branch: tconv 4x4/2 -> [32,28,28] -> conv 3x3/1 -> tanh
    discrimin.  branch: conv 4x4/2 -> [32,14,14]
                trunk:  conv 4x4/2 -> [64,7,7] -> flatten (shared features)
                        -> realness head (fc -> sigmoid), class head (fc -> K)
    encoder     branch: mirror of the discriminator branch
                trunk:  conv 4x4/2 -> flatten -> fc -> (mu, logvar)

Hidden activations are leaky rectifiers (slope 0.2); the generator ends in
tanh so pixels stay in (-1, 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
LEAK = 0.2

CHECKPOINT_VERSION = 1


class Domain(Enum):
    SOURCE = "S"
    TARGET = "T"

    def other(self):
        return Domain.TARGET if self is Domain.SOURCE else Domain.SOURCE


class ModeError(ValueError):
    """Encoder operation requested on a model built without one."""


@dataclass
class ImageBatch:
    """[N,1,H,W] pixels in [-1,1] with a domain tag and optional labels."""

    pixels: np.ndarray
    domain: Domain
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 4:
            raise ValueError(f"image batch must be [N,C,H,W], got {self.pixels.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.pixels):
                raise ValueError("labels and pixels disagree on batch size")

    def __len__(self):
        return self.pixels.shape[0]

    def subset(self, idx):
        labels = None if self.labels is None else self.labels[idx]
        return ImageBatch(self.pixels[idx], self.domain, labels)


@dataclass
class GaussianPosterior:
    """Diagonal Gaussian over latent codes; logvar pre-clamped to [-10, 10]."""

    mu: Tensor
    logvar: Tensor


def one_hot(labels, k, dtype=np.float32):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"attribute index out of range [0, {k}): {labels}")
    out = np.zeros((len(labels), k), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Dense:
    def __init__(self, rng, n_in, n_out, dtype):
        self.w = Tensor(_glorot(rng, (n_in, n_out), n_in, n_out, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.bias_add(T.matmul(x, self.w), self.b)

    def params(self):
        return {"w": self.w, "b": self.b}


class Conv:
    def __init__(self, rng, c_in, c_out, k, stride, pad, dtype):
        fan = k * k
        self.w = Tensor(_glorot(rng, (c_out, c_in, k, k), c_in * fan, c_out * fan, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.stride, self.pad = stride, pad

    def __call__(self, x, weights=None):
        w, b = (self.w, self.b) if weights is None else weights
        return T.bias_add(T.conv2d(x, w, stride=self.stride, pad=self.pad), b)

    def params(self):
        return {"w": self.w, "b": self.b}


class ConvT:
    def __init__(self, rng, c_in, c_out, k, stride, pad, dtype):
        fan = k * k
        self.w = Tensor(_glorot(rng, (c_in, c_out, k, k), c_in * fan, c_out * fan, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.stride, self.pad = stride, pad

    def __call__(self, x):
        return T.bias_add(T.conv_transpose2d(x, self.w, stride=self.stride, pad=self.pad), self.b)

    def params(self):
        return {"w": self.w, "b": self.b}


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class ModelConfig:
    mode: str = "cdrd"          # "cdrd" | "ecdrd"
    d_z: int = 64
    k: int = 10
    image_hw: int = 28
    gen_trunk_ch: int = 128
    gen_mid_ch: int = 64
    gen_low_ch: int = 32
    disc_low_ch: int = 32
    disc_high_ch: int = 64

    def __post_init__(self):
        if self.mode not in ("cdrd", "ecdrd"):
            raise ValueError(f"mode must be 'cdrd' or 'ecdrd', got {self.mode!r}")
        if self.image_hw % 4 != 0:
            raise ValueError("image side must be divisible by 4 (two stride-2 stages)")

    @property
    def trunk_hw(self):
        return self.image_hw // 4

    @property
    def feat_dim(self):
        return self.disc_high_ch * self.trunk_hw * self.trunk_hw


class Model:
    """The full weight-shared stack for both domains.

    Tensor-level methods (gen_trunk/gen_decode/disc/enc) participate in a
    recording context and are what training differentiates through; the
    batch-level operations (generate/encode/discriminate/reconstruct/
    translate) are the value-semantics surface used for inference and
    evaluation.
    """

    def __init__(self, cfg: ModelConfig, seed=0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
        c = cfg
        thw = c.trunk_hw

        # generator: shared trunk + per-domain branches
        self.g_fc = Dense(rng, c.d_z + c.k, c.gen_trunk_ch * thw * thw, dtype)
        self.g_tconv = ConvT(rng, c.gen_trunk_ch, c.gen_mid_ch, 4, 2, 1, dtype)
        self.g_branch = {
            Domain.SOURCE: (ConvT(rng, c.gen_mid_ch, c.gen_low_ch, 4, 2, 1, dtype),
                            Conv(rng, c.gen_low_ch, 1, 3, 1, 1, dtype)),
            Domain.TARGET: (ConvT(rng, c.gen_mid_ch, c.gen_low_ch, 4, 2, 1, dtype),
                            Conv(rng, c.gen_low_ch, 1, 3, 1, 1, dtype)),
        }

        # discriminator: per-domain front ends + shared trunk and heads
        self.d_front = {
            Domain.SOURCE: Conv(rng, 1, c.disc_low_ch, 4, 2, 1, dtype),
            Domain.TARGET: Conv(rng, 1, c.disc_low_ch, 4, 2, 1, dtype),
        }
        self.d_conv = Conv(rng, c.disc_low_ch, c.disc_high_ch, 4, 2, 1, dtype)
        self.d_real = Dense(rng, c.feat_dim, 1, dtype)
        self.d_cls = Dense(rng, c.feat_dim, c.k, dtype)

        # encoder (ecdrd only): mirrors the discriminator geometry
        if c.mode == "ecdrd":
            self.e_front = {
                Domain.SOURCE: Conv(rng, 1, c.disc_low_ch, 4, 2, 1, dtype),
                Domain.TARGET: Conv(rng, 1, c.disc_low_ch, 4, 2, 1, dtype),
            }
            self.e_conv = Conv(rng, c.disc_low_ch, c.disc_high_ch, 4, 2, 1, dtype)
            self.e_fc = Dense(rng, c.feat_dim, 2 * c.d_z, dtype)
        else:
            self.e_front = None
            self.e_conv = None
            self.e_fc = None

    @property
    def has_encoder(self):
        return self.e_fc is not None

    # -- parameter bookkeeping ---------------------------------------------

    def named_params(self):
        """Every parameter exactly once (shared sub-networks not duplicated)."""
        out = {}

        def put(prefix, layer):
            for k, v in layer.params().items():
                out[f"{prefix}.{k}"] = v

        put("g_c.fc", self.g_fc)
        put("g_c.tconv", self.g_tconv)
        for dom, tag in ((Domain.SOURCE, "g_s"), (Domain.TARGET, "g_t")):
            put(f"{tag}.tconv", self.g_branch[dom][0])
            put(f"{tag}.conv", self.g_branch[dom][1])
        put("d_s.conv", self.d_front[Domain.SOURCE])
        put("d_t.conv", self.d_front[Domain.TARGET])
        put("d_c.conv", self.d_conv)
        put("d_c.real", self.d_real)
        put("d_c.cls", self.d_cls)
        if self.has_encoder:
            put("e_s.conv", self.e_front[Domain.SOURCE])
            put("e_t.conv", self.e_front[Domain.TARGET])
            put("e_c.conv", self.e_conv)
            put("e_c.fc", self.e_fc)
        return out

    def player_params(self, player):
        """Parameter subset a training player owns (trunks belong to their player)."""
        prefixes = {"G": ("g_c.", "g_s.", "g_t."),
                    "D": ("d_s.", "d_t.", "d_c."),
                    "E": ("e_s.", "e_t.", "e_c.")}[player]
        sub = {k: v for k, v in self.named_params().items() if k.startswith(prefixes)}
        if player == "E" and not sub:
            raise ModeError("model has no encoder parameters (cdrd mode)")
        return sub

    def path_params(self, component, domain):
        """Parameters traversed by one domain's path, shared storage included."""
        tag = "s" if domain is Domain.SOURCE else "t"
        key = {"G": (f"g_{tag}.", "g_c."), "D": (f"d_{tag}.", "d_c."),
               "E": (f"e_{tag}.", "e_c.")}[component]
        return {k: v for k, v in self.named_params().items() if k.startswith(key)}

    # -- tensor-level forward paths ------------------------------------------

    def gen_trunk(self, z, labels):
        """Shared generator trunk: (z batch, label batch) -> [N, mid, 14, 14]."""
        c = self.cfg
        z = T.as_tensor(z, dtype=self.dtype)
        oh = Tensor(one_hot(labels, c.k, dtype=self.dtype))
        h = T.concat([z, oh], axis=1)
        h = T.leaky_relu(self.g_fc(h), LEAK)
        h = T.reshape(h, (-1, c.gen_trunk_ch, c.trunk_hw, c.trunk_hw))
        return T.leaky_relu(self.g_tconv(h), LEAK)

    def gen_decode(self, h, domain):
        tconv, conv = self.g_branch[domain]
        return T.tanh(conv(T.leaky_relu(tconv(h), LEAK)))

    def disc(self, x, domain, heads=True, frozen=False):
        """Discriminator path; returns (realness, class_logits, shared_features).

        With frozen=True the borrowed weights are detached so no gradient
        reaches discriminator parameters (feature-extractor use).
        """
        x = T.as_tensor(x, dtype=self.dtype)
        front, trunk = self.d_front[domain], self.d_conv
        if frozen:
            fw = (front.w.detached(), front.b.detached())
            tw = (trunk.w.detached(), trunk.b.detached())
        else:
            fw = tw = None
        h = T.leaky_relu(front(x, weights=fw), LEAK)
        h = T.leaky_relu(trunk(h, weights=tw), LEAK)
        feats = T.reshape(h, (-1, self.cfg.feat_dim))
        if not heads:
            return None, None, feats
        realness = T.sigmoid(self.d_real(feats))
        logits = self.d_cls(feats)
        return realness, logits, feats

    def enc(self, x, domain):
        """Encoder path to a clamped diagonal-Gaussian posterior."""
        if not self.has_encoder:
            raise ModeError("encode requires ecdrd-mode parameters")
        x = T.as_tensor(x, dtype=self.dtype)
        h = T.leaky_relu(self.e_front[domain](x), LEAK)
        h = T.leaky_relu(self.e_conv(h), LEAK)
        h = self.e_fc(T.reshape(h, (-1, self.cfg.feat_dim)))
        mu = T.narrow(h, 1, 0, self.cfg.d_z)
        logvar = T.clamp(T.narrow(h, 1, self.cfg.d_z, self.cfg.d_z), LOGVAR_MIN, LOGVAR_MAX)
        return GaussianPosterior(mu, logvar)

    def sample_z(self, post: GaussianPosterior, noise):
        """Reparameterized draw z = mu + exp(logvar/2) * eps."""
        eps = Tensor(np.asarray(noise, dtype=self.dtype))
        if eps.shape != post.mu.shape:
            raise ValueError(f"noise shape {eps.shape} != posterior shape {post.mu.shape}")
        return T.add(post.mu, T.mul(T.exp(T.mul(post.logvar, 0.5)), eps))

    # -- batch-level operations ----------------------------------------------

    def generate(self, z, labels, domain) -> ImageBatch:
        """Synthesize images for (z, label) through the requested domain branch."""
        z = np.asarray(z, dtype=self.dtype)
        labels = np.asarray(labels)
        if len(z) != len(labels):
            raise ValueError("z and label batches disagree on size")
        out = self.gen_decode(self.gen_trunk(z, labels), domain)
        return ImageBatch(out.data, domain, labels)

    def encode(self, batch: ImageBatch, sample=True, noise=None):
        """Posterior and latent codes for a batch; noise is a Generator,
        an explicit eps array, or None (sample=False only)."""
        post = self.enc(batch.pixels, batch.domain)
        if not sample:
            return post, post.mu.data.copy()
        if noise is None:
            raise ValueError("sampling requires a noise source")
        if isinstance(noise, np.random.Generator):
            noise = noise.standard_normal(post.mu.shape, dtype=np.float32)
        z = self.sample_z(post, np.asarray(noise, dtype=self.dtype))
        return post, z.data

    def discriminate(self, batch: ImageBatch):
        """Realness in (0,1), unnormalized class logits, shared features."""
        realness, logits, feats = self.disc(batch.pixels, batch.domain)
        return realness.data.reshape(-1), logits.data, feats.data

    def reconstruct(self, batch: ImageBatch, labels, noise=None) -> ImageBatch:
        """Encode with sampling, decode in the same domain under `labels`."""
        return self.translate(batch, labels, batch.domain, noise=noise)

    def translate(self, batch: ImageBatch, labels, to: Domain, noise=None) -> ImageBatch:
        """Encode in the batch's domain, decode through the `to` branch."""
        if noise is None:
            _, z = self.encode(batch, sample=False)
        else:
            _, z = self.encode(batch, sample=True, noise=noise)
        out = self.gen_decode(self.gen_trunk(z, labels), to)
        return ImageBatch(out.data, to, np.asarray(labels))

    # -- checkpointing ---------------------------------------------------------

    def save(self, path):
        meta = {"version": CHECKPOINT_VERSION, "config": asdict(self.cfg)}
        arrays = {f"param/{k}": v.data for k, v in self.named_params().items()}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                     **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(z["__meta__"].tobytes().decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
            model = cls(ModelConfig(**meta["config"]))
            params = model.named_params()
            stored = {k[len("param/"):] for k in z.files if k.startswith("param/")}
            if stored != set(params):
                raise ValueError("checkpoint parameter set does not match model config")
            for k, p in params.items():
                arr = z[f"param/{k}"]
                if arr.shape != p.data.shape:
                    raise ValueError(f"checkpoint blob {k} has shape {arr.shape}, "
                                     f"expected {p.data.shape}")
                p.data = arr.astype(p.data.dtype, copy=True)
        return model

    def param_count(self):
        return sum(p.size for p in self.named_params().values())
