"""Auto-encoder objective: reconstruction, KL, perceptual proxy and adversarial terms.

The perceptual term and the discriminator are small stand-ins, not VGG-LPIPS
or StyleGAN: a frozen, seeded random feature pyramid and a 3-layer strided
patch discriminator. Metric names that depend on them carry a ``proxy`` tag.
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field

import numpy as np

from .model.vitok import LatentCode, ParamStore
from .numerics import F, Tensor, get_dtype, no_grad

FEATURE_WIDTHS = (16, 16, 32)
DISC_WIDTHS = (32, 64)


@dataclass(frozen=True)
class LossWeights:
    beta: float = 1e-3
    eta: float = 1.0
    lam: float = 0.0
    rec_kind: str = "L2"

    def __post_init__(self):
        if min(self.beta, self.eta, self.lam) < 0:
            raise ValueError(f"loss weights must be >= 0, got {self}")
        if self.rec_kind not in ("L1", "L2"):
            raise ValueError(f"rec_kind must be L1 or L2, got {self.rec_kind!r}")


STAGE1_WEIGHTS = LossWeights(beta=1e-3, eta=1.0, lam=0.0)
STAGE2_WEIGHTS = LossWeights(beta=1e-3, eta=1.0, lam=1.0)


@dataclass
class LossBreakdown:
    rec: float
    kl: float
    perceptual: float
    gan_g: float
    total: float
    objective: Tensor | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict[str, float]:
        d = asdict(self)
        d.pop("objective")
        return d


def frames(X) -> Tensor:
    """(B, T, H, W, 3) -> (B*T, H, W, 3); 4-d input passes through."""
    X = X if isinstance(X, Tensor) else Tensor(X)
    if X.ndim == 5:
        B, T, H, W, C = X.shape
        return X.reshape(B * T, H, W, C)
    if X.ndim != 4:
        raise ValueError(f"expected image or video batch, got shape {X.shape}")
    return X


def space_to_depth(x: Tensor) -> Tensor:
    N, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"spatial dims {H}x{W} must be even")
    x = x.reshape(N, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(N, H // 2, W // 2, 4 * C)


def reconstruction_loss(X_hat, X, kind: str = "L2") -> Tensor:
    if kind == "L2":
        return F.mean(F.square_error(X_hat, X))
    if kind == "L1":
        return F.mean(F.abs_error(X_hat, X))
    raise ValueError(f"unknown reconstruction loss {kind!r}")


def kl_divergence(mean, logvar) -> Tensor:
    """KL(N(mean, exp(logvar)) || N(0, I)), summed over code dims, averaged over batch."""
    mean = mean if isinstance(mean, Tensor) else Tensor(mean)
    logvar = logvar if isinstance(logvar, Tensor) else Tensor(logvar)
    if mean.shape != logvar.shape:
        raise ValueError(f"mean {mean.shape} and logvar {logvar.shape} differ")
    if not (np.isfinite(mean.data).all() and np.isfinite(logvar.data).all()):
        raise FloatingPointError("non-finite latent statistics")
    # expm1 keeps exp(lv) - 1 - lv >= 0 for |lv| near zero
    per = F.square(mean) + (F.expm1(logvar) - logvar)
    return F.sum(per) * (0.5 / mean.shape[0])


# ------------------------------------------------------- feature pyramid


class FeatureNet:
    """Frozen random 3-level pyramid: 2x2 space-to-depth, linear, SiLU."""

    def __init__(self, seed: int = 0, widths=FEATURE_WIDTHS):
        rng = np.random.default_rng(seed)
        self.layers = []
        c_in = 3
        for w in widths:
            fan_in = 4 * c_in
            weight = rng.standard_normal((fan_in, w)) * np.sqrt(2.0 / fan_in)
            bias = rng.standard_normal(w) * 0.1
            self.layers.append((Tensor(weight), Tensor(bias)))
            c_in = w
        self.dim = sum(widths)
        self._ones = [Tensor(np.ones(w)) for w in widths]

    def __call__(self, x) -> list[Tensor]:
        h = frames(x)
        out = []
        for weight, bias in self.layers:
            h = F.silu(space_to_depth(h) @ weight + bias)
            out.append(h)
        return out

    def pooled(self, x) -> np.ndarray:
        """Spatially averaged activations of every level, concatenated: (N, dim)."""
        with no_grad():
            feats = self(x)
        return np.concatenate([f.data.mean(axis=(1, 2)) for f in feats], axis=1)


@functools.lru_cache(maxsize=8)
def _feature_net(seed: int, dtype_name: str) -> FeatureNet:
    return FeatureNet(seed)


def feature_net(seed: int = 0) -> FeatureNet:
    return _feature_net(seed, np.dtype(get_dtype()).name)


def perceptual_proxy_loss(X_hat, X, feature_net_seed: int = 0) -> Tensor:
    """Mean squared distance of channel-normalised pyramid activations, averaged over levels."""
    net = feature_net(feature_net_seed)
    fa, fb = net(X_hat), net(X)
    terms = []
    for a, b, ones in zip(fa, fb, net._ones):
        terms.append(F.mean(F.square_error(F.rms_norm(a, ones), F.rms_norm(b, ones))))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


# --------------------------------------------------------- discriminator


class Discriminator:
    """3-layer strided patch discriminator; per-patch logits averaged to one per frame."""

    def __init__(self, seed: int = 0, widths=DISC_WIDTHS, slope: float = 0.2):
        rng = np.random.default_rng(seed)
        self.slope = slope
        self.params = ParamStore()
        c_in = 3
        for i, w in enumerate(widths):
            fan_in = 4 * c_in
            self.params[f"disc.l{i}.weight"] = Tensor(rng.standard_normal((fan_in, w)) / np.sqrt(fan_in), requires_grad=True)
            self.params[f"disc.l{i}.bias"] = Tensor(np.zeros(w), requires_grad=True)
            c_in = w
        self.params["disc.head.weight"] = Tensor(rng.standard_normal((c_in, 1)) / np.sqrt(c_in), requires_grad=True)
        self.params["disc.head.bias"] = Tensor(np.zeros(1), requires_grad=True)
        self.n_layers = len(widths)

    def __call__(self, x) -> Tensor:
        h = frames(x)
        for i in range(self.n_layers):
            h = space_to_depth(h) @ self.params[f"disc.l{i}.weight"] + self.params[f"disc.l{i}.bias"]
            h = F.leaky_relu(h, self.slope)
        logits = h @ self.params["disc.head.weight"] + self.params["disc.head.bias"]
        return F.mean(logits, axis=(1, 2, 3))


def gan_losses(discriminator, X_hat, X) -> tuple[Tensor, Tensor]:
    """Non-saturating logistic losses: (generator loss, discriminator loss)."""
    X_hat = X_hat if isinstance(X_hat, Tensor) else Tensor(X_hat)
    X = frames(X)
    d_real = discriminator(X)
    d_fake = discriminator(frames(X_hat.detach()))
    d_loss = F.mean(F.softplus(-d_real)) + F.mean(F.softplus(d_fake))
    g_loss = F.mean(F.softplus(-discriminator(frames(X_hat))))
    return g_loss, d_loss


def generator_loss(discriminator, X_hat) -> Tensor:
    return F.mean(F.softplus(-discriminator(frames(X_hat))))


# ------------------------------------------------------------ objective


def total_loss(
    X_hat,
    X,
    code: LatentCode,
    weights: LossWeights,
    stage: int,
    discriminator=None,
    feature_net_seed: int = 0,
    gan_active: bool = True,
) -> LossBreakdown:
    """Weighted sum rec + beta*kl + eta*perceptual + lambda*gan_g.

    ``gan_active=False`` holds the adversarial weight at zero (used while the
    discriminator is warming up); the generator loss is still reported.
    """
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    if stage == 1 and weights.lam != 0:
        raise ValueError("stage 1 trains without the adversarial term; set lam=0")
    if stage == 2 and weights.lam > 0 and discriminator is None:
        raise ValueError("stage 2 with lam > 0 needs a discriminator")
    X = X if isinstance(X, Tensor) else Tensor(X)

    rec = reconstruction_loss(X_hat, X, weights.rec_kind)
    kl = kl_divergence(code.mean, code.logvar)
    objective = rec + kl * weights.beta

    if weights.eta > 0:
        perc = perceptual_proxy_loss(X_hat, X, feature_net_seed)
        objective = objective + perc * weights.eta
    else:
        with no_grad():
            perc = perceptual_proxy_loss(X_hat, X, feature_net_seed)

    lam = weights.lam if gan_active else 0.0
    gan_g = Tensor(0.0)
    if discriminator is not None:
        if lam > 0:
            gan_g = generator_loss(discriminator, X_hat)
            objective = objective + gan_g * lam
        else:
            with no_grad():
                gan_g = generator_loss(discriminator, X_hat)

    return LossBreakdown(
        rec=float(rec.data),
        kl=float(kl.data),
        perceptual=float(perc.data),
        gan_g=float(gan_g.data),
        total=float(objective.data),
        objective=objective,
    )
