"""Probability models for the quantized latents and CDF-table construction.

Two models drive both the training rate terms and the range coder:

  * a conditional zero-mean Gaussian over the feature symbols, with one
    scale per element predicted from the transmitted side information,
  * a learned non-parametric factorized density over the side-information
    symbols, one univariate monotone CDF per channel.

Both evaluate bin-integral probabilities p(k) = C(k + 0.5) - C(k - 0.5).
All probability math runs in float64 so the differentiable training path
and the plain numpy path agree to well below 1e-9.
"""

import numpy as np
from scipy import special

from . import autodiff as ad
from .autodiff import Module, Parameter, Tensor

PRECISION = 16
CDF_TOTAL = 1 << PRECISION
TAIL_MASS = 1e-6
ESCAPE_RANGE = 1 << 14  # uniform fallback covers [-2^14, 2^14]
MAX_TABLE_WIDTH = 1 << 15
_PMF_FLOOR = 1e-300
_INV_SQRT2 = 1.0 / np.sqrt(2.0)


class EntropyModelError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# conditional Gaussian


def gaussian_pmf(k, sigma, sigma_floor=0.05):
    """P(quantized symbol == k) for a zero-mean Gaussian of scale sigma.

    Evaluated as a difference of upper-tail erfc terms on |k| so the two
    CDF values never cancel catastrophically when |k| >> sigma.
    """
    k = np.asarray(k, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < sigma_floor - 1e-12):
        raise EntropyModelError("sigma below configured floor")
    a = np.abs(k)
    upper = 0.5 * special.erfc((a - 0.5) / sigma * _INV_SQRT2)
    lower = 0.5 * special.erfc((a + 0.5) / sigma * _INV_SQRT2)
    return np.maximum(upper - lower, _PMF_FLOOR)


def gaussian_pmf_graph(values, sigma):
    """Differentiable twin of `gaussian_pmf` (same op order, float64)."""
    v = ad.cast(values, np.float64) if values.dtype != np.float64 else values
    s = ad.cast(sigma, np.float64) if sigma.dtype != np.float64 else sigma
    a = ad.abs_(v)
    upper = 0.5 * ad.erfc((a - 0.5) / s * _INV_SQRT2)
    lower = 0.5 * ad.erfc((a + 0.5) / s * _INV_SQRT2)
    return ad.lower_bound(upper - lower, _PMF_FLOOR)


# ---------------------------------------------------------------------------
# factorized density model


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


class FactorizedDensity(Module):
    """Per-channel monotone cumulative model (the omega parameters).

    Each channel owns a tiny monotone network c(z) built from layers
    x -> softplus(H) x + b followed by x + tanh(a) * tanh(x) gates and a
    final sigmoid; softplus keeps the matrices nonnegative and |tanh(a)|
    < 1 keeps every layer strictly increasing.
    """

    def __init__(self, channels, hidden=3, layers=4, init_scale=10.0):
        self.channels = int(channels)
        widths = [1] + [hidden] * (layers - 1) + [1]
        self.widths = widths
        scale = init_scale ** (1.0 / layers)
        self.matrices = []
        self.biases = []
        self.gates = []
        rng = np.random.default_rng(0xD5CC)
        for i in range(layers):
            init = np.log(np.expm1(1.0 / scale / widths[i + 1]))
            h = np.full((channels, widths[i + 1], widths[i]), init, dtype=np.float32)
            b = rng.uniform(-0.5, 0.5, size=(channels, widths[i + 1], 1)).astype(np.float32)
            self.matrices.append(Parameter(h))
            self.biases.append(Parameter(b))
            if i < layers - 1:
                self.gates.append(Parameter(np.zeros((channels, widths[i + 1], 1), dtype=np.float32)))

    # -- plain numpy evaluation (encoding/metrics path) --------------------

    def logits(self, values):
        """Pre-sigmoid CDF logits; `values` is (channels, n) float64."""
        x = np.asarray(values, dtype=np.float64)[:, None, :]
        n_layers = len(self.matrices)
        for i in range(n_layers):
            h = _softplus(self.matrices[i].data.astype(np.float64))
            x = h @ x + self.biases[i].data.astype(np.float64)
            if i < n_layers - 1:
                x = x + np.tanh(self.gates[i].data.astype(np.float64)) * np.tanh(x)
        return x[:, 0, :]

    def pmf(self, k):
        """P(symbol == k) per channel; `k` is (channels, n) integers."""
        k = np.asarray(k, dtype=np.float64)
        lo = self.logits(k - 0.5)
        up = self.logits(k + 0.5)
        sign = -np.sign(lo + up)
        sign[sign == 0] = 1.0
        p = np.abs(_sigmoid(sign * up) - _sigmoid(sign * lo))
        return np.maximum(p, _PMF_FLOOR)

    def cdf(self, values):
        return _sigmoid(self.logits(values))

    # -- differentiable evaluation (training path) -------------------------

    def _logits_graph(self, x):
        n_layers = len(self.matrices)
        for i in range(n_layers):
            h = ad.softplus(ad.cast(self.matrices[i], np.float64))
            x = ad.matmul(h, x) + ad.cast(self.biases[i], np.float64)
            if i < n_layers - 1:
                x = x + ad.tanh(ad.cast(self.gates[i], np.float64)) * ad.tanh(x)
        return x

    def pmf_graph(self, values):
        """Differentiable twin of `pmf`; `values` is a (channels, n) Tensor."""
        v = ad.cast(values, np.float64) if values.dtype != np.float64 else values
        c, n = v.shape
        v = ad.reshape(v, (c, 1, n))
        lo = ad.reshape(self._logits_graph(v - 0.5), (c, n))
        up = ad.reshape(self._logits_graph(v + 0.5), (c, n))
        sign_data = -np.sign(lo.data + up.data)
        sign_data[sign_data == 0] = 1.0
        sign = Tensor(sign_data, dtype=np.float64)
        p = ad.abs_(ad.sigmoid(sign * up) - ad.sigmoid(sign * lo))
        return ad.lower_bound(p, _PMF_FLOOR)

    def monotone_on_grid(self, lo=-64.0, hi=64.0, n=2049):
        """True when every channel's CDF strictly increases on a dense grid."""
        grid = np.linspace(lo, hi, n)
        vals = self.cdf(np.broadcast_to(grid, (self.channels, n)).copy())
        return bool(np.all(np.diff(vals, axis=1) > 0))


# ---------------------------------------------------------------------------
# rate computation


def rate_bits(y_sym, z_sym, sigma, fmodel, sigma_floor=0.05):
    """(bits_y, bits_z): ideal code lengths of the two symbol tensors.

    y_sym/sigma are (H, W, C); per-pixel contributions are reduced
    channel-first so the total partitions exactly into the per-pixel
    bit-allocation map.
    """
    y_sym = np.asarray(y_sym)
    sigma = np.asarray(sigma)
    if y_sym.shape != sigma.shape:
        raise EntropyModelError(f"shape mismatch: y {y_sym.shape} vs sigma {sigma.shape}")
    nll = -np.log2(gaussian_pmf(y_sym, sigma, sigma_floor=sigma_floor))
    bits_y = float(nll.sum(axis=-1, dtype=np.float64).sum(dtype=np.float64))

    z_ch = np.asarray(z_sym, dtype=np.float64)
    z_ch = np.moveaxis(z_ch, -1, 0).reshape(fmodel.channels, -1)
    bits_z = float(np.sum(-np.log2(fmodel.pmf(z_ch)), dtype=np.float64))
    return bits_y, bits_z


def bit_allocation_map(y_sym, sigma, sigma_floor=0.05):
    """Per-pixel bits: sum over channels of -log2 P(y | sigma)."""
    nll = -np.log2(gaussian_pmf(y_sym, sigma, sigma_floor=sigma_floor))
    return nll.sum(axis=-1, dtype=np.float64)


# ---------------------------------------------------------------------------
# CDF tables for the range coder


class CdfTable:
    """Quantized cumulative counts over [min_sym, max_sym] plus an
    optional trailing escape slot; total mass is exactly 2**16."""

    __slots__ = ("min_sym", "max_sym", "cum", "has_escape")

    def __init__(self, min_sym, max_sym, cum, has_escape=True):
        self.min_sym = int(min_sym)
        self.max_sym = int(max_sym)
        self.cum = np.asarray(cum, dtype=np.uint32)
        self.has_escape = bool(has_escape)
        n_slots = self.max_sym - self.min_sym + 1 + (1 if has_escape else 0)
        if len(self.cum) != n_slots + 1:
            raise EntropyModelError("cdf table length mismatch")
        if self.cum[0] != 0 or self.cum[-1] != CDF_TOTAL:
            raise EntropyModelError("cdf table must span [0, 2^16]")
        if np.any(np.diff(self.cum.astype(np.int64)) < 1):
            raise EntropyModelError("cdf counts must be strictly increasing")

    @property
    def n_slots(self):
        return len(self.cum) - 1

    @property
    def escape_slot(self):
        return self.n_slots - 1 if self.has_escape else None

    def slot_of(self, symbol):
        if self.min_sym <= symbol <= self.max_sym:
            return int(symbol - self.min_sym)
        if self.has_escape:
            return self.escape_slot
        raise EntropyModelError(f"symbol {symbol} outside table range")

    def bounds(self, slot):
        return int(self.cum[slot]), int(self.cum[slot + 1])

    def find(self, value):
        """Slot whose [cum, cum+freq) contains `value`."""
        return int(np.searchsorted(self.cum, value, side="right") - 1)

    def probabilities(self):
        return np.diff(self.cum.astype(np.float64)) / CDF_TOTAL


def _quantize_pmf_rows(pmf):
    """Largest-remainder quantization of pmf rows to integer counts
    summing to 2**16 with every count >= 1.

    Each count lands within 2 of the exact scaled probability: at most 1
    from rounding plus at most 1 borrowed when clamping empty slots.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    scaled = pmf * CDF_TOTAL
    base = np.floor(scaled).astype(np.int64)
    rem = scaled - base
    deficit = CDF_TOTAL - base.sum(axis=1)
    order = np.argsort(-rem, axis=1, kind="stable")
    take = np.arange(pmf.shape[1])[None, :] < deficit[:, None]
    bump = np.zeros_like(base)
    np.put_along_axis(bump, order, take.astype(np.int64), axis=1)
    counts = base + bump

    zero_fix = (counts == 0)
    counts[zero_fix] = 1
    surplus = counts.sum(axis=1) - CDF_TOTAL
    if np.any(surplus > 0):
        rich = np.argsort(-counts, axis=1, kind="stable")
        take = np.arange(pmf.shape[1])[None, :] < surplus[:, None]
        cut = np.zeros_like(counts)
        np.put_along_axis(cut, rich, take.astype(np.int64), axis=1)
        counts = counts - cut
    if np.any(counts < 1):
        raise EntropyModelError("cdf quantization failed to keep all slots >= 1")
    return counts


def _tables_from_pmf_rows(pmf_rows, min_syms):
    counts = _quantize_pmf_rows(pmf_rows)
    cums = np.zeros((counts.shape[0], counts.shape[1] + 1), dtype=np.uint32)
    cums[:, 1:] = np.cumsum(counts, axis=1)
    n_syms = counts.shape[1] - 1  # last slot is the escape
    return [CdfTable(m, m + n_syms - 1, c, has_escape=True)
            for m, c in zip(min_syms, cums)]


def gaussian_tables(sigma, sigma_floor=0.05):
    """One CdfTable per element of `sigma` (flattened, row-major).

    The symbol range [-R, R] uses R ~ 6 sigma, which keeps the uncovered
    tail below 1e-6 per side; everything outside is escape coded. Near
    the scale floor the range collapses to the single central bin: once
    p(0) >= 1 - 2^-15 the neighbouring bins cannot hold a count without
    pushing the central slot outside the table-quantization tolerance,
    and the sub-1e-5 tail is escape coded instead. Tables are a
    deterministic function of sigma, so transmitter and receiver rebuild
    identical tables from the decoded side info.
    """
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    radii = np.maximum(1, np.floor(6.0 * sigma + 0.5).astype(np.int64))
    radii[sigma <= 0.1213] = 0  # p(0) >= 1 - 2^-15: single-bin table
    if np.any(2 * radii + 2 > MAX_TABLE_WIDTH):
        raise EntropyModelError("sigma too large: symbol range exceeds 2^15")
    tables = [None] * len(sigma)
    for r in np.unique(radii):
        idx = np.nonzero(radii == r)[0]
        symbols = np.arange(-r, r + 1, dtype=np.float64)
        pmf = gaussian_pmf(symbols[None, :], sigma[idx][:, None], sigma_floor=sigma_floor)
        esc = np.maximum(1.0 - pmf.sum(axis=1, keepdims=True), 0.0)
        rows = np.concatenate([pmf, esc], axis=1)
        rows /= rows.sum(axis=1, keepdims=True)
        for t, table in zip(idx, _tables_from_pmf_rows(rows, [-r] * len(idx))):
            tables[t] = table
    return tables


def factorized_tables(fmodel):
    """One CdfTable per channel of the factorized model.

    Each channel gets the smallest symmetric range whose uncovered tail
    is <= 1e-6 per side (oversized ranges would fill the table with
    forced one-count slots).
    """
    radius = 2
    while True:
        edges = np.array([-radius - 0.5, radius + 0.5])
        cdf = fmodel.cdf(np.broadcast_to(edges, (fmodel.channels, 2)).copy())
        if np.all(cdf[:, 0] <= TAIL_MASS) and np.all(1.0 - cdf[:, 1] <= TAIL_MASS):
            break
        radius *= 2
        if 2 * radius + 2 > MAX_TABLE_WIDTH:
            raise EntropyModelError("factorized model too spread: range exceeds 2^15")
    edges = np.arange(-radius - 0.5, radius + 1.5)
    cdf = fmodel.cdf(np.broadcast_to(edges, (fmodel.channels, len(edges))).copy())
    lo_ok = cdf <= TAIL_MASS          # mass below edge small enough
    hi_ok = (1.0 - cdf) <= TAIL_MASS  # mass above edge small enough
    radii = np.empty(fmodel.channels, dtype=np.int64)
    for c in range(fmodel.channels):
        lo_edge = int(np.nonzero(lo_ok[c])[0].max())      # last edge with tiny lower tail
        hi_edge = int(np.nonzero(hi_ok[c])[0].min())      # first edge with tiny upper tail
        radii[c] = max(radius - lo_edge, hi_edge - radius, 1)

    tables = [None] * fmodel.channels
    for r in np.unique(radii):
        idx = np.nonzero(radii == r)[0]
        symbols = np.arange(-r, r + 1, dtype=np.float64)
        # pmf() evaluates all channels at once; keep the rows we need
        pmf = fmodel.pmf(np.tile(symbols, (fmodel.channels, 1)))[idx]
        esc = np.maximum(1.0 - pmf.sum(axis=1, keepdims=True), 0.0)
        rows = np.concatenate([pmf, esc], axis=1)
        rows /= rows.sum(axis=1, keepdims=True)
        for t, table in zip(idx, _tables_from_pmf_rows(rows, [-r] * len(idx))):
            tables[t] = table
    return tables


_ESCAPE_TABLE = None


def escape_table():
    """Shared near-uniform fallback table over [-2^14, 2^14]."""
    global _ESCAPE_TABLE
    if _ESCAPE_TABLE is None:
        n = 2 * ESCAPE_RANGE + 1
        pmf = np.full((1, n), 1.0 / n)
        counts = _quantize_pmf_rows(pmf)[0]
        cum = np.zeros(n + 1, dtype=np.uint32)
        np.cumsum(counts, out=cum[1:])
        _ESCAPE_TABLE = CdfTable(-ESCAPE_RANGE, ESCAPE_RANGE, cum, has_escape=False)
    return _ESCAPE_TABLE
