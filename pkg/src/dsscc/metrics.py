"""Image quality metrics and MAP label readout."""

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP_DB = 100.0
_MSSSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])


class MetricError(ValueError):
    pass


def psnr(x, x_hat):
    """10 log10(255^2 / MSE); exact reconstructions cap at 100 dB."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    mse = np.mean((x - x_hat) ** 2)
    if mse <= 0:
        return PSNR_CAP_DB
    return min(float(10.0 * np.log10(255.0 ** 2 / mse)), PSNR_CAP_DB)


def _gauss_kernel(size, sigma=1.5):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def _ssim_cs(a, b, win):
    """(mean ssim, mean contrast-structure) over valid windows, one channel."""
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    k = np.outer(win, win)

    def filt(img):
        return convolve2d(img, k, mode="valid")

    mu_a = filt(a)
    mu_b = filt(b)
    va = filt(a * a) - mu_a ** 2
    vb = filt(b * b) - mu_b ** 2
    vab = filt(a * b) - mu_a * mu_b
    cs = (2 * vab + c2) / (va + vb + c2)
    ssim = ((2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)) * cs
    return float(np.mean(ssim)), float(np.mean(cs))


def _downsample2(img):
    h, w = img.shape[:2]
    img = img[:h - h % 2, :w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def ms_ssim_scales(height, width):
    """Scale count: 5 for >= 176 px, adapted down to 3 for 32 px."""
    side = min(height, width)
    if side < 32:
        raise MetricError("ms_ssim needs at least 32x32 images")
    if side >= 176:
        return 5
    return min(5, int(np.log2(side / 8.0)) + 1)


def ms_ssim(x, x_hat):
    """Multi-scale SSIM on [0,255] images, 11x11 Gaussian window sigma=1.5.

    The scale count adapts to image size and the standard five weights
    are renormalized over the scales actually used; window size shrinks
    at coarse scales so it never exceeds the image.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    if x.ndim == 2:
        x = x[..., None]
        x_hat = x_hat[..., None]
    scales = ms_ssim_scales(x.shape[0], x.shape[1])
    weights = _MSSSIM_WEIGHTS[:scales]
    weights = weights / weights.sum()

    score = 1.0
    a, b = x, x_hat
    for s in range(scales):
        side = min(a.shape[0], a.shape[1])
        wsize = min(11, side if side % 2 else side - 1)
        win = _gauss_kernel(wsize)
        ssims, css = zip(*[_ssim_cs(a[..., c], b[..., c], win) for c in range(a.shape[2])])
        ssim_v = max(float(np.mean(ssims)), 0.0)
        cs_v = max(float(np.mean(css)), 0.0)
        score *= (ssim_v if s == scales - 1 else cs_v) ** weights[s]
        if s < scales - 1:
            a = np.stack([_downsample2(a[..., c]) for c in range(a.shape[2])], axis=-1)
            b = np.stack([_downsample2(b[..., c]) for c in range(b.shape[2])], axis=-1)
    return float(np.clip(score, 0.0, 1.0))


def map_classify(probs, k=5):
    """(label, top-k tuple) from a probability vector; ties take the
    lowest class index."""
    probs = np.asarray(probs)
    label = int(np.argmax(probs))
    order = np.lexsort((np.arange(len(probs)), -probs))
    return label, tuple(int(i) for i in order[:k])
