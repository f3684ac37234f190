"""The five parametric transforms: analysis, synthesis, hyper-analysis,
hyper-synthesis, and the classifier, at desk scale.

Layout notes:
  * images are (B, H, W, 3) channel-last, pixel range [0, 255] at the
    API boundary and [0, 1] inside the networks,
  * the analysis/synthesis pair downsamples spatially by 4, the hyper
    pair by another 4, so H and W must be divisible by 16,
  * one Gaussian scale is predicted per feature element, so the
    hyper-synthesis output shape equals the feature shape.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Parameter, Tensor
from .entropy import FactorizedDensity

GDN_BETA_MIN = 1e-6


class ConfigError(ValueError):
    pass


@dataclass
class CodecConfig:
    height: int = 32
    width: int = 32
    y_channels: int = 48
    z_channels: int = 32
    downsample_factor: int = 4
    hyper_downsample_factor: int = 4
    num_classes: int = 10
    sigma_floor: float = 0.05
    n_filters: int = 32
    classifier_filters: int = 16
    init_seed: int = 0

    def __post_init__(self):
        total = self.downsample_factor * self.hyper_downsample_factor
        if self.height % total or self.width % total:
            raise ConfigError(
                f"image dims {self.height}x{self.width} must be divisible by {total}")
        if self.downsample_factor != 4 or self.hyper_downsample_factor != 4:
            raise ConfigError("this architecture realizes spatial factor 4 in each stage")
        if self.y_channels < 1 or self.z_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.sigma_floor <= 0:
            raise ConfigError("sigma_floor must be positive")

    @property
    def feature_shape(self):
        return (self.height // 4, self.width // 4, self.y_channels)

    @property
    def hyper_shape(self):
        return (self.height // 16, self.width // 16, self.z_channels)

    @property
    def source_dim(self):
        return self.height * self.width * 3

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------------------
# layers


class Conv(Module):
    def __init__(self, cin, cout, kernel, stride, rng, relu=False):
        fan_in = kernel * kernel * cin
        scale = 1.0 / np.sqrt(fan_in)
        self.weight = Parameter(rng.uniform(-scale, scale,
                                            (kernel, kernel, cin, cout)).astype(np.float32))
        self.bias = Parameter(np.zeros(cout, dtype=np.float32))
        self.stride = stride
        self.padding = kernel // 2
        self.use_relu = relu

    def forward(self, x):
        out = ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
        return ad.relu(out) if self.use_relu else out


class ConvTranspose(Module):
    def __init__(self, cin, cout, kernel, stride, rng):
        fan_in = kernel * kernel * cin
        scale = 1.0 / np.sqrt(fan_in)
        self.weight = Parameter(rng.uniform(-scale, scale,
                                            (kernel, kernel, cout, cin)).astype(np.float32))
        self.bias = Parameter(np.zeros(cout, dtype=np.float32))
        self.stride = stride
        self.padding = kernel // 2
        self.output_padding = stride - 1

    def forward(self, x):
        return ad.conv_transpose2d(x, self.weight, self.bias, stride=self.stride,
                                   padding=self.padding, output_padding=self.output_padding)


class Dense(Module):
    def __init__(self, n_in, n_out, rng):
        scale = 1.0 / np.sqrt(n_in)
        self.weight = Parameter(rng.uniform(-scale, scale, (n_in, n_out)).astype(np.float32))
        self.bias = Parameter(np.zeros(n_out, dtype=np.float32))

    def forward(self, x):
        return ad.matmul(x, self.weight) + self.bias


class GDNLayer(Module):
    """GDN / IGDN with beta = beta_min + u^2 and gamma = v^2.

    Off-diagonal v starts at 1e-3 rather than 0 to keep the gamma
    gradient alive (d gamma / d v vanishes at v = 0).
    """

    def __init__(self, channels, inverse=False):
        beta_init = np.full(channels, np.sqrt(1.0 - GDN_BETA_MIN), dtype=np.float32)
        gamma_init = np.full((channels, channels), 1e-3, dtype=np.float32)
        np.fill_diagonal(gamma_init, np.sqrt(0.1))
        self.beta_raw = Parameter(beta_init)
        self.gamma_raw = Parameter(gamma_init)
        self.inverse = inverse

    def constrained(self):
        beta = ad.square(self.beta_raw) + GDN_BETA_MIN
        gamma = ad.square(self.gamma_raw)
        return beta, gamma

    def forward(self, x):
        beta, gamma = self.constrained()
        return ad.igdn(x, beta, gamma) if self.inverse else ad.gdn(x, beta, gamma)


# ---------------------------------------------------------------------------
# transforms


class AnalysisTransform(Module):
    """9x9 stride-2 front end, then 5x5 stages down to the feature tensor."""

    def __init__(self, cfg, rng):
        n = cfg.n_filters
        self.conv1 = Conv(3, n, 9, 2, rng)
        self.gdn1 = GDNLayer(n)
        self.conv2 = Conv(n, n, 5, 2, rng)
        self.gdn2 = GDNLayer(n)
        self.conv3 = Conv(n, n, 5, 1, rng)
        self.gdn3 = GDNLayer(n)
        self.conv4 = Conv(n, cfg.y_channels, 5, 1, rng)

    def forward(self, x):
        x = self.gdn1(self.conv1(x))
        x = self.gdn2(self.conv2(x))
        x = self.gdn3(self.conv3(x))
        return self.conv4(x)


class SynthesisTransform(Module):
    """Mirror of the analysis path; final 3x3 conv + relu keeps the
    reconstruction nonnegative before denormalization."""

    def __init__(self, cfg, rng):
        n = cfg.n_filters
        self.tconv1 = ConvTranspose(cfg.y_channels, n, 5, 1, rng)
        self.igdn1 = GDNLayer(n, inverse=True)
        self.tconv2 = ConvTranspose(n, n, 5, 1, rng)
        self.igdn2 = GDNLayer(n, inverse=True)
        self.tconv3 = ConvTranspose(n, n, 5, 2, rng)
        self.igdn3 = GDNLayer(n, inverse=True)
        self.tconv4 = ConvTranspose(n, 3, 9, 2, rng)
        self.conv_out = Conv(3, 3, 3, 1, rng, relu=True)

    def forward(self, y):
        x = self.igdn1(self.tconv1(y))
        x = self.igdn2(self.tconv2(x))
        x = self.igdn3(self.tconv3(x))
        x = self.tconv4(x)
        return self.conv_out(x)


class HyperAnalysis(Module):
    def __init__(self, cfg, rng):
        self.conv1 = Conv(cfg.y_channels, cfg.z_channels, 5, 2, rng)
        self.gdn1 = GDNLayer(cfg.z_channels)
        self.conv2 = Conv(cfg.z_channels, cfg.z_channels, 5, 2, rng)

    def forward(self, y):
        return self.conv2(self.gdn1(self.conv1(y)))


class HyperSynthesis(Module):
    """Predicts one strictly positive Gaussian scale per feature element."""

    def __init__(self, cfg, rng):
        self.tconv1 = ConvTranspose(cfg.z_channels, cfg.z_channels, 5, 2, rng)
        self.igdn1 = GDNLayer(cfg.z_channels, inverse=True)
        self.tconv2 = ConvTranspose(cfg.z_channels, cfg.y_channels, 5, 2, rng)
        self.sigma_floor = cfg.sigma_floor

    def forward(self, z):
        h = self.igdn1(self.tconv1(z))
        return ad.lower_bound(ad.softplus(self.tconv2(h)), self.sigma_floor)


class Classifier(Module):
    """Small CNN posterior over class labels (stands in for a deep net)."""

    def __init__(self, cfg, rng):
        f = cfg.classifier_filters
        self.conv1 = Conv(3, f, 3, 1, rng, relu=True)
        self.conv2 = Conv(f, f, 3, 2, rng, relu=True)
        self.conv3 = Conv(f, 2 * f, 3, 2, rng, relu=True)
        self.conv4 = Conv(2 * f, 2 * f, 3, 2, rng, relu=True)
        flat = (cfg.height // 8) * (cfg.width // 8) * 2 * f
        self.head = Dense(flat, cfg.num_classes, rng)

    def forward(self, x):
        h = self.conv4(self.conv3(self.conv2(self.conv1(x))))
        h = ad.reshape(h, (h.shape[0], -1))
        return self.head(h)


# ---------------------------------------------------------------------------
# the assembled model


class CodecModel(Module):
    """The five transforms plus the factorized side-information density,
    sharing one named-parameter table."""

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence(config.init_seed))
        self.analysis = AnalysisTransform(config, rng)
        self.synthesis = SynthesisTransform(config, rng)
        self.hyper_analysis = HyperAnalysis(config, rng)
        self.hyper_synthesis = HyperSynthesis(config, rng)
        self.classifier = Classifier(config, rng)
        self.density = FactorizedDensity(config.z_channels)

    # -- training-path forwards (Tensors in, Tensors out) ------------------

    def _check_image(self, x):
        cfg = self.config
        if x.shape[1:] != (cfg.height, cfg.width, 3):
            raise ConfigError(f"image batch shape {x.shape} does not match "
                              f"configured {cfg.height}x{cfg.width}x3")

    def analyze_norm(self, x_norm):
        self._check_image(x_norm)
        return self.analysis(x_norm)

    def synthesize_norm(self, y_tilde):
        if y_tilde.shape[1:] != self.config.feature_shape:
            raise ConfigError(f"feature shape {y_tilde.shape} does not match "
                              f"configured {self.config.feature_shape}")
        return self.synthesis(y_tilde)

    def hyper_analyze_t(self, y):
        return self.hyper_analysis(y)

    def hyper_synthesize_t(self, z_tilde):
        if z_tilde.shape[1:] != self.config.hyper_shape:
            raise ConfigError(f"hyper shape {z_tilde.shape} does not match "
                              f"configured {self.config.hyper_shape}")
        return self.hyper_synthesis(z_tilde)

    def classifier_logits(self, x_norm):
        return self.classifier(x_norm)

    # -- deployment API (numpy in, numpy out; [0, 255] images) -------------

    def _as_batch(self, image):
        arr = np.asarray(image, dtype=np.float32)
        single = arr.ndim == 3
        if single:
            arr = arr[None]
        return arr, single

    def analyze(self, image):
        """[0,255] image(s) -> feature tensor(s), normalized internally."""
        arr, single = self._as_batch(image)
        y = self.analyze_norm(Tensor(arr / 255.0)).data
        return y[0] if single else y

    def synthesize(self, y_tilde):
        """Feature tensor(s) -> [0,255] clamped reconstruction(s)."""
        arr, single = self._as_batch(y_tilde)
        xn = self.synthesize_norm(Tensor(arr)).data
        x = np.clip(xn * 255.0, 0.0, 255.0)
        return x[0] if single else x

    def hyper_analyze(self, y):
        arr, single = self._as_batch(y)
        z = self.hyper_analysis(Tensor(arr)).data
        return z[0] if single else z

    def hyper_synthesize(self, z_tilde):
        arr, single = self._as_batch(z_tilde)
        sigma = self.hyper_synthesize_t(Tensor(arr)).data
        return sigma[0] if single else sigma

    def classify(self, image):
        """[0,255] reconstruction(s) -> class probability vector(s)."""
        arr, single = self._as_batch(image)
        self._check_image(arr)
        logits = self.classifier(Tensor(arr / 255.0)).data
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        return probs[0] if single else probs

    # -- parameter groups ---------------------------------------------------

    def codec_parameters(self):
        """phi, psi1, psi2, theta, omega: everything but the classifier."""
        for name, p in self.named_parameters():
            if not name.startswith("classifier."):
                yield name, p

    def classifier_parameters(self):
        for name, p in self.named_parameters():
            if name.startswith("classifier."):
                yield name, p
