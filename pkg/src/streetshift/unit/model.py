"""Coupled VAE-GAN with a shared latent space.

Two encoders map images of domain A and B into one latent space; two
generators decode from it, one per domain. The deepest encoder stage and
the first generator stage are single Parameter objects referenced by both
sides, which is what ties the two VAEs to a common code space.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..numeric import Graph, Parameter

SIZES = (16, 32, 64, 128)
DEFAULT_LAMBDAS = (50.0, 0.1, 100.0, 0.1, 100.0)
LOSS_TERMS = ("gan_a", "gan_b", "kl_a", "kl_b", "rec_a", "rec_b", "cc_kl_a", "cc_kl_b", "cc_rec_a", "cc_rec_b")


@dataclass
class UnitConfig:
    image_size: int = 32
    base_width: int = 16
    dis_width: int = 4
    latent_channels: int = 32
    n_res: int = 1
    lambdas: tuple = DEFAULT_LAMBDAS
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    init_std: float = 0.02

    def __post_init__(self):
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if self.image_size not in SIZES:
            raise ValueError(f"image_size must be one of {SIZES}, got {self.image_size}")
        if self.latent_channels < 1 or self.base_width < 1 or self.dis_width < 1:
            raise ValueError("latent_channels, base_width and dis_width must be >= 1")
        if len(self.lambdas) != 5 or any(v < 0 for v in self.lambdas):
            raise ValueError(f"lambdas must be five non-negative reals, got {self.lambdas}")
        if self.batch_size < 1 or self.n_res < 0:
            raise ValueError("batch_size must be >= 1 and n_res >= 0")

    def to_dict(self):
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def latent_size(self) -> int:
        return self.image_size // 8


@dataclass
class LossBreakdown:
    gan_a: float = 0.0
    gan_b: float = 0.0
    kl_a: float = 0.0
    kl_b: float = 0.0
    rec_a: float = 0.0
    rec_b: float = 0.0
    cc_kl_a: float = 0.0
    cc_kl_b: float = 0.0
    cc_rec_a: float = 0.0
    cc_rec_b: float = 0.0
    total: float = 0.0

    @classmethod
    def from_outputs(cls, out):
        return cls(**{k: float(out[k]) for k in LOSS_TERMS + ("total",)})

    def weighted(self, lambdas):
        l0, l1, l2, l3, l4 = lambdas
        return (l0 * (self.gan_a + self.gan_b) + l1 * (self.kl_a + self.kl_b) + l2 * (self.rec_a + self.rec_b)
                + l3 * (self.cc_kl_a + self.cc_kl_b) + l4 * (self.cc_rec_a + self.cc_rec_b))


@dataclass
class TrainState:
    """Optimizer and sampling state carried by a model between train calls."""

    step: int
    rng: np.random.Generator
    gen_opt: object
    dis_opt: object


@dataclass
class UnitModel:
    config: UnitConfig
    params: dict[str, Parameter]
    train_state: TrainState | None = None
    _graphs: dict = field(default_factory=dict, repr=False)

    @property
    def lambdas(self):
        return self.config.lambdas

    @property
    def image_size(self):
        return self.config.image_size

    def group(self, prefix: str) -> dict[str, Parameter]:
        return {k: p for k, p in self.params.items() if k.startswith(prefix)}

    def encoder_params(self, side):
        side = side.lower()
        return {**self.group(f"enc_{side}."), **self.group("enc_shared.")}

    def generator_params(self, side):
        side = side.lower()
        return {**self.group("gen_shared."), **self.group(f"gen_{side}.")}

    def discriminator_params(self, side):
        return self.group(f"dis_{side.lower()}.")

    @property
    def shared_enc(self):
        return self.group("enc_shared.")

    @property
    def shared_gen(self):
        return self.group("gen_shared.")

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def graph(self, key, builder):
        g = self._graphs.get(key)
        if g is None:
            g = self._graphs[key] = builder()
        return g

    def invalidate(self):
        self._graphs.clear()


# --------------------------------------------------------------------------
# construction


def _layout(cfg: UnitConfig):
    """Ordered (name, shape) list; parameter order is part of the determinism contract."""
    w, lat = cfg.base_width, cfg.latent_channels
    out = []

    def conv(name, o, i, k):
        out.append((f"{name}.w", (o, i, k, k)))
        out.append((f"{name}.b", (o,)))

    def convt(name, i, o, k):
        out.append((f"{name}.w", (i, o, k, k)))
        out.append((f"{name}.b", (o,)))

    def res(name):
        conv(f"{name}.c1", lat, lat, 3)
        conv(f"{name}.c2", lat, lat, 3)

    for side in ("a", "b"):
        conv(f"enc_{side}.down1", w, 3, 4)
        conv(f"enc_{side}.down2", 2 * w, w, 4)
        conv(f"enc_{side}.down3", lat, 2 * w, 4)
        for r in range(cfg.n_res):
            res(f"enc_{side}.res{r}")
    res("enc_shared.res")
    res("gen_shared.res")
    for side in ("a", "b"):
        for r in range(cfg.n_res):
            res(f"gen_{side}.res{r}")
        convt(f"gen_{side}.up1", lat, 2 * w, 4)
        convt(f"gen_{side}.up2", 2 * w, w, 4)
        convt(f"gen_{side}.up3", w, 3, 4)
    w = cfg.dis_width
    for side in ("a", "b"):
        conv(f"dis_{side}.c1", w, 3, 4)
        conv(f"dis_{side}.c2", 2 * w, w, 4)
        conv(f"dis_{side}.c3", 4 * w, 2 * w, 4)
        conv(f"dis_{side}.c4", 1, 4 * w, 4)
    return out


def build_model(config: UnitConfig | None = None, **overrides) -> UnitModel:
    cfg = config if config is not None else UnitConfig(**overrides)
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in _layout(cfg):
        if name.endswith(".b"):
            data = np.zeros(shape, np.float32)
        else:
            data = (rng.standard_normal(shape) * cfg.init_std).astype(np.float32)
        params[name] = Parameter(name, data)
    return UnitModel(cfg, params)


# --------------------------------------------------------------------------
# network pieces on a Graph


def _res_block(g: Graph, m: UnitModel, x, name):
    p = m.params
    h = g.conv2d(x, p[f"{name}.c1.w"], p[f"{name}.c1.b"], stride=1, pad=1)
    h = g.leaky_relu(g.instance_norm(h))
    h = g.conv2d(h, p[f"{name}.c2.w"], p[f"{name}.c2.b"], stride=1, pad=1)
    h = g.instance_norm(h)
    return g.add(x, h)


def encoder(g: Graph, m: UnitModel, x, side):
    p = m.params
    s = side.lower()
    h = x
    for layer in ("down1", "down2", "down3"):
        h = g.conv2d(h, p[f"enc_{s}.{layer}.w"], p[f"enc_{s}.{layer}.b"], stride=2, pad=1)
        h = g.leaky_relu(h)
    for r in range(m.config.n_res):
        h = _res_block(g, m, h, f"enc_{s}.res{r}")
    return _res_block(g, m, h, "enc_shared.res")


def generator(g: Graph, m: UnitModel, z, side):
    p = m.params
    s = side.lower()
    h = _res_block(g, m, z, "gen_shared.res")
    for r in range(m.config.n_res):
        h = _res_block(g, m, h, f"gen_{s}.res{r}")
    for layer in ("up1", "up2"):
        h = g.conv_transpose2d(h, p[f"gen_{s}.{layer}.w"], p[f"gen_{s}.{layer}.b"], stride=2, pad=1)
        h = g.leaky_relu(h)
    h = g.conv_transpose2d(h, p[f"gen_{s}.up3.w"], p[f"gen_{s}.up3.b"], stride=2, pad=1)
    return g.tanh(h)


def discriminator(g: Graph, m: UnitModel, x, side):
    p = m.params
    s = side.lower()
    h = x
    for layer in ("c1", "c2", "c3"):
        h = g.leaky_relu(g.conv2d(h, p[f"dis_{s}.{layer}.w"], p[f"dis_{s}.{layer}.b"], stride=2, pad=1))
    return g.conv2d(h, p[f"dis_{s}.c4.w"], p[f"dis_{s}.c4.b"], stride=2, pad=1)


def _ls(g: Graph, score, target):
    """Least-squares adversarial term mean((score - target)^2)."""
    d = g.scale(score, 1.0, -target) if target else score
    return g.mean(g.square(d))


def image_shape(m: UnitModel, n):
    s = m.config.image_size
    return (n, 3, s, s)


def latent_shape(m: UnitModel, n):
    s = m.config.latent_size
    return (n, m.config.latent_channels, s, s)


def build_loss_graph(m: UnitModel, n=1, dtype=np.float32) -> Graph:
    """Encoder/generator objective; inputs are images in [-1, 1] plus noise."""
    g = Graph(dtype)
    xa = g.input("xa", image_shape(m, n))
    xb = g.input("xb", image_shape(m, n))
    noise = {k: g.input(k, latent_shape(m, n)) for k in ("eps_a", "eps_b", "eps_aba", "eps_bab")}

    mu_a = encoder(g, m, xa, "a")
    mu_b = encoder(g, m, xb, "b")
    z_a = g.add(mu_a, noise["eps_a"])
    z_b = g.add(mu_b, noise["eps_b"])
    rec_a = generator(g, m, z_a, "a")
    rec_b = generator(g, m, z_b, "b")
    ab = generator(g, m, z_a, "b")
    ba = generator(g, m, z_b, "a")
    # full cycle: A -> Z -> B -> Z -> A and B -> Z -> A -> Z -> B
    mu_aba = encoder(g, m, ab, "b")
    mu_bab = encoder(g, m, ba, "a")
    cyc_a = generator(g, m, g.add(mu_aba, noise["eps_aba"]), "a")
    cyc_b = generator(g, m, g.add(mu_bab, noise["eps_bab"]), "b")

    terms = {
        "gan_a": _ls(g, discriminator(g, m, ba, "a"), 1.0),
        "gan_b": _ls(g, discriminator(g, m, ab, "b"), 1.0),
        "kl_a": g.mean(g.square(mu_a)),
        "kl_b": g.mean(g.square(mu_b)),
        "rec_a": g.mean(g.abs(g.sub(rec_a, xa))),
        "rec_b": g.mean(g.abs(g.sub(rec_b, xb))),
        "cc_kl_a": g.mean(g.square(mu_aba)),
        "cc_kl_b": g.mean(g.square(mu_bab)),
        "cc_rec_a": g.mean(g.abs(g.sub(cyc_a, xa))),
        "cc_rec_b": g.mean(g.abs(g.sub(cyc_b, xb))),
    }
    for k, nid in terms.items():
        g.output(k, nid)
    l0, l1, l2, l3, l4 = m.config.lambdas
    weights = {"gan": l0, "kl": l1, "rec": l2, "cc_kl": l3, "cc_rec": l4}
    total = None
    for key, lam in weights.items():
        pair = g.add(terms[f"{key}_a"], terms[f"{key}_b"])
        part = g.scale(pair, lam)
        total = part if total is None else g.add(total, part)
    g.output("total", total)
    for k, nid in (("ab", ab), ("ba", ba), ("rec_a_img", rec_a), ("rec_b_img", rec_b)):
        g.output(k, nid)
    return g


def build_fakes_graph(m: UnitModel, n=1, dtype=np.float32) -> Graph:
    """The two cross-domain translations of the loss graph, on their own."""
    g = Graph(dtype)
    xa = g.input("xa", image_shape(m, n))
    xb = g.input("xb", image_shape(m, n))
    eps_a = g.input("eps_a", latent_shape(m, n))
    eps_b = g.input("eps_b", latent_shape(m, n))
    g.output("ab", generator(g, m, g.add(encoder(g, m, xa, "a"), eps_a), "b"))
    g.output("ba", generator(g, m, g.add(encoder(g, m, xb, "b"), eps_b), "a"))
    return g


def build_dis_graph(m: UnitModel, n=1, dtype=np.float32) -> Graph:
    """Discriminator objective: real images toward 1, translations toward 0."""
    g = Graph(dtype)
    xa = g.input("xa", image_shape(m, n))
    xb = g.input("xb", image_shape(m, n))
    fa = g.input("fake_a", image_shape(m, n))
    fb = g.input("fake_b", image_shape(m, n))
    real_a = _ls(g, discriminator(g, m, xa, "a"), 1.0)
    fake_a = _ls(g, discriminator(g, m, fa, "a"), 0.0)
    real_b = _ls(g, discriminator(g, m, xb, "b"), 1.0)
    fake_b = _ls(g, discriminator(g, m, fb, "b"), 0.0)
    g.output("dis_a", g.add(real_a, fake_a))
    g.output("dis_b", g.add(real_b, fake_b))
    g.output("loss", g.add(g.add(real_a, fake_a), g.add(real_b, fake_b)))
    return g


def build_translate_graph(m: UnitModel, source, target, n=1, dtype=np.float32) -> Graph:
    """x -> mu -> z = mu + eps -> generator(target)."""
    g = Graph(dtype)
    x = g.input("x", image_shape(m, n))
    eps = g.input("eps", latent_shape(m, n))
    mu = encoder(g, m, x, source)
    g.output("mu", mu)
    z = g.add(mu, eps)
    g.output("z", z)
    g.output("image", generator(g, m, z, target))
    return g


def build_encoder_graph(m: UnitModel, side, n=1, dtype=np.float32) -> Graph:
    g = Graph(dtype)
    x = g.input("x", image_shape(m, n))
    g.output("mu", encoder(g, m, x, side))
    return g


def build_generator_graph(m: UnitModel, side, n=1, dtype=np.float32) -> Graph:
    g = Graph(dtype)
    z = g.input("z", latent_shape(m, n))
    g.output("image", generator(g, m, z, side))
    return g
