"""Physical layer: AWGN channel, the ideal capacity gate, and the
practical LDPC + 16QAM chain.

LLR convention throughout: positive means bit 0 is more likely, so hard
decisions are `bit = (llr < 0)`.
"""

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .range_coder import FormatError, FrameCorrupt, unpack_container

DEFAULT_ALIST = "wlan_2of3_1944.alist"
_LLR_CLIP = 25.0


class ChannelError(RuntimeError):
    pass


class FrameRejected(ChannelError):
    """Ideal mode: payload exceeds the capacity gate."""


# ---------------------------------------------------------------------------
# parity matrix handling


def load_alist(path):
    """Parse an alist sparse-matrix file into a dense 0/1 uint8 matrix."""
    with open(path) as f:
        tokens = f.read().split()
    it = iter(tokens)

    def nxt():
        return int(next(it))

    n, m = nxt(), nxt()
    nxt(), nxt()  # max degrees, unused
    col_deg = [nxt() for _ in range(n)]
    [nxt() for _ in range(m)]  # row degrees
    H = np.zeros((m, n), dtype=np.uint8)
    for c in range(n):
        # fixed-width rows padded with zeros; alist indices are 1-based
        seen = 0
        while seen < col_deg[c]:
            r = nxt()
            if r > 0:
                H[r - 1, c] = 1
                seen += 1
    return H


def default_alist_path():
    return str(importlib.resources.files("dsscc").joinpath("data", DEFAULT_ALIST))


def _gf2_inverse(a):
    m = a.shape[0]
    aug = np.concatenate([a.copy(), np.eye(m, dtype=np.uint8)], axis=1)
    for col in range(m):
        piv = col + int(np.argmax(aug[col:, col]))
        if not aug[piv, col]:
            raise ChannelError("parity submatrix is singular; cannot encode")
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        mask = aug[:, col].astype(bool).copy()
        mask[col] = False
        aug[mask] ^= aug[col]
    return aug[:, m:]


class LdpcCode:
    """Dense-H LDPC code with precomputed encoder and BP edge layout.

    Encoding treats H as [H_info | H_parity] with systematic codewords
    c = [u | p], p solved from H_parity p = H_info u over GF(2).
    """

    def __init__(self, H):
        H = np.asarray(H, dtype=np.uint8)
        self.H = H
        self.m, self.n = H.shape
        self.k = self.n - self.m
        if self.k <= 0:
            raise ChannelError("parity matrix leaves no information bits")
        hp_inv = _gf2_inverse(H[:, self.k:])
        self._hi = H[:, :self.k].astype(np.float32)
        self._hp_inv = hp_inv.astype(np.float32)

        check_idx, var_idx = np.nonzero(H)
        order = np.lexsort((var_idx, check_idx))
        self.edge_check = check_idx[order]
        self.edge_var = var_idx[order]
        self.n_edges = len(self.edge_check)
        counts = np.bincount(self.edge_check, minlength=self.m)
        self.check_ptr = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.perm_var = np.argsort(self.edge_var, kind="stable")
        vcounts = np.bincount(self.edge_var[self.perm_var], minlength=self.n)
        self.var_ptr = np.concatenate([[0], np.cumsum(vcounts)[:-1]])

    @classmethod
    def from_alist(cls, path=None):
        return cls(load_alist(path or default_alist_path()))

    def encode(self, info_bits):
        """(..., k) info bits -> (..., n) codewords satisfying H c = 0."""
        u = np.asarray(info_bits, dtype=np.float32)
        single = u.ndim == 1
        if single:
            u = u[None]
        if u.shape[1] != self.k:
            raise ChannelError(f"expected {self.k} info bits, got {u.shape[1]}")
        syndrome = (u @ self._hi.T) % 2.0
        parity = (syndrome @ self._hp_inv.T) % 2.0
        out = np.concatenate([u, parity], axis=1).astype(np.uint8)
        return out[0] if single else out

    def decode(self, llrs, max_iters=50):
        """Sum-product BP; returns (info_bits, converged) per codeword."""
        llrs = np.asarray(llrs, dtype=np.float64)
        single = llrs.ndim == 1
        if single:
            llrs = llrs[None]
        if llrs.shape[1] != self.n:
            raise ChannelError(f"expected {self.n} LLRs, got {llrs.shape[1]}")
        bits, ok = self._decode_batch(llrs, max_iters)
        info = bits[:, :self.k]
        return (info[0], bool(ok[0])) if single else (info, ok)

    def _parity_ok(self, bits):
        edge_bits = bits[:, self.edge_var].astype(np.int64)
        sums = np.add.reduceat(edge_bits, self.check_ptr, axis=1)
        return ~np.any(sums & 1, axis=1)

    def _decode_batch(self, llrs, max_iters):
        b = llrs.shape[0]
        llrs = np.clip(llrs, -_LLR_CLIP, _LLR_CLIP)
        out_bits = (llrs < 0).astype(np.uint8)
        done = self._parity_ok(out_bits)
        if np.all(done):
            return out_bits, done

        msg = llrs[:, self.edge_var]
        for _ in range(max_iters):
            t = np.tanh(0.5 * np.clip(msg, -_LLR_CLIP, _LLR_CLIP))
            logmag = np.log(np.abs(t) + 1e-300)
            neg = (t < 0).astype(np.int64)
            sum_log = np.add.reduceat(logmag, self.check_ptr, axis=1)
            sum_neg = np.add.reduceat(neg, self.check_ptr, axis=1)
            excl_log = sum_log[:, self.edge_check] - logmag
            excl_neg = sum_neg[:, self.edge_check] - neg
            prod = np.exp(excl_log) * (1 - 2 * (excl_neg & 1))
            check_msg = 2.0 * np.arctanh(np.clip(prod, -1 + 1e-15, 1 - 1e-15))

            var_sums = np.add.reduceat(check_msg[:, self.perm_var], self.var_ptr, axis=1)
            total = llrs + var_sums
            msg = total[:, self.edge_var] - check_msg

            bits = (total < 0).astype(np.uint8)
            ok = self._parity_ok(bits)
            newly = ok & ~done
            if np.any(newly):
                out_bits[newly] = bits[newly]
                done |= ok
                if np.all(done):
                    return out_bits, done
        out_bits[~done] = bits[~done]
        return out_bits, done


_default_code = None


def default_code():
    global _default_code
    if _default_code is None:
        _default_code = LdpcCode.from_alist()
    return _default_code


def _as_code(H):
    if isinstance(H, LdpcCode):
        return H
    if H is None:
        return default_code()
    return LdpcCode(H)


def ldpc_encode(info_bits, H=None):
    return _as_code(H).encode(info_bits)


def ldpc_decode(llrs, H=None, max_iters=50):
    return _as_code(H).decode(llrs, max_iters=max_iters)


# ---------------------------------------------------------------------------
# 16QAM with Gray mapping

_GRAY_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)
# bit pair -> level: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
_PAIR_TO_LEVEL = np.array([-3.0, -1.0, 3.0, 1.0]) / np.sqrt(10.0)
_LEVEL_BIT0 = np.array([0, 0, 1, 1])  # first bit of the pair at each level
_LEVEL_BIT1 = np.array([0, 1, 1, 0])


def qam16_modulate(bits):
    """Gray-mapped square 16QAM at unit average power.

    Bit count must be a multiple of 4: (b0, b1) select the I level and
    (b2, b3) the Q level.
    """
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    if len(bits) % 4:
        raise ChannelError("bit count must be a multiple of 4 (pad upstream)")
    quads = bits.reshape(-1, 4)
    i_level = _PAIR_TO_LEVEL[2 * quads[:, 0] + quads[:, 1]]
    q_level = _PAIR_TO_LEVEL[2 * quads[:, 2] + quads[:, 3]]
    return i_level + 1j * q_level


def _pam_llrs(y, noise_var_dim, bit_map):
    # exact log-likelihood ratio over the four PAM levels per dimension
    d2 = (y[:, None] - _GRAY_LEVELS[None, :]) ** 2 / noise_var_dim
    num = logsumexp(-d2[:, bit_map == 0], axis=1)
    den = logsumexp(-d2[:, bit_map == 1], axis=1)
    return num - den


def qam16_demodulate(received, noise_var, h=1.0 + 0j):
    """Per-bit exact LLRs (positive favours bit 0) after equalizing by h."""
    received = np.asarray(received, dtype=np.complex128).reshape(-1)
    h = complex(h)
    if h == 0:
        raise ChannelError("cannot equalize a zero channel coefficient")
    y = received / h
    nv_dim = max(float(noise_var) / (abs(h) ** 2), 1e-12) / 2.0
    llrs = np.empty((len(y), 4))
    llrs[:, 0] = _pam_llrs(y.real, nv_dim, _LEVEL_BIT0)
    llrs[:, 1] = _pam_llrs(y.real, nv_dim, _LEVEL_BIT1)
    llrs[:, 2] = _pam_llrs(y.imag, nv_dim, _LEVEL_BIT0)
    llrs[:, 3] = _pam_llrs(y.imag, nv_dim, _LEVEL_BIT1)
    return llrs.reshape(-1)


# ---------------------------------------------------------------------------
# capacity gate and channel configuration


def capacity_bits_per_use(snr_db, h=1.0 + 0j):
    rho = 10.0 ** (float(snr_db) / 10.0)
    return float(np.log2(1.0 + (abs(complex(h)) ** 2) * rho))


def capacity_gate(total_bits, channel_uses, snr_db, h=1.0 + 0j):
    """True iff total_bits <= L * log2(1 + |h|^2 rho): error-free by assumption."""
    if channel_uses <= 0:
        raise ChannelError("channel uses must be positive")
    return total_bits <= channel_uses * capacity_bits_per_use(snr_db, h)


@dataclass
class ChannelConfig:
    mode: str = "ideal_capacity"  # or "ldpc_16qam"
    snr_db: float = 10.0
    h: complex = 1.0 + 0.0j
    seed: int = 0
    max_iters: int = 50
    channel_uses: int | None = None  # ideal mode: explicit L (derived when None)
    alist_path: str | None = None

    def __post_init__(self):
        if self.mode not in ("ideal_capacity", "ldpc_16qam"):
            raise ChannelError(f"unknown channel mode {self.mode!r}")
        if not np.isfinite(self.snr_db):
            raise ChannelError("snr_db must be finite")
        self.h = complex(self.h)
        if self.mode == "ldpc_16qam" and self.h == 0:
            raise ChannelError("ldpc mode needs a nonzero channel coefficient")

    def code(self):
        if self.alist_path:
            return LdpcCode.from_alist(self.alist_path)
        return default_code()

    def to_dict(self):
        return {"mode": self.mode, "snr_db": self.snr_db,
                "h_real": self.h.real, "h_imag": self.h.imag,
                "seed": self.seed, "max_iters": self.max_iters,
                "channel_uses": self.channel_uses, "alist_path": self.alist_path}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        h = complex(d.pop("h_real", 1.0), d.pop("h_imag", 0.0))
        return cls(h=h, **d)


@dataclass
class TransmitResult:
    payload: bytes
    status: str             # "ok" | "rejected" | "corrupt"
    channel_uses: int
    bit_errors: int = 0


def awgn(symbols, snr_db, h, rng):
    """h * g + n with CSCG noise at variance 1/rho (unit-power symbols)."""
    rho = 10.0 ** (float(snr_db) / 10.0)
    nv = 1.0 / rho
    noise = np.sqrt(nv / 2.0) * (rng.standard_normal(len(symbols))
                                 + 1j * rng.standard_normal(len(symbols)))
    return complex(h) * symbols + noise, nv


def _bytes_to_frame_bits(data, block_bits):
    """payload bits + zero pad + 16-bit pad count, a multiple of block_bits."""
    payload_bits = np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))
    n = len(payload_bits) + 16
    pad = (-n) % block_bits
    trailer = np.unpackbits(np.array([pad >> 8, pad & 0xFF], dtype=np.uint8))
    return np.concatenate([payload_bits, np.zeros(pad, dtype=np.uint8), trailer])


def _frame_bits_to_bytes(bits):
    trailer = np.packbits(bits[-16:])
    pad = (int(trailer[0]) << 8) | int(trailer[1])
    payload_bits = len(bits) - 16 - pad
    if payload_bits < 0 or payload_bits % 8:
        raise FrameCorrupt("corrupted frame trailer")
    return np.packbits(bits[:payload_bits]).tobytes()


def transmit(data, config):
    """Push container bytes through the configured channel.

    Ideal mode: the capacity gate decides; a pass returns the bytes
    unchanged. LDPC mode: LDPC-encode, 16QAM-modulate, add AWGN at the
    configured SNR, demodulate to LLRs, BP-decode, and reassemble; the
    container CRC is the delivery gate.
    """
    data = bytes(data)
    total_bits = 8 * len(data)
    if config.mode == "ideal_capacity":
        per_use = capacity_bits_per_use(config.snr_db, config.h)
        if config.channel_uses is not None:
            uses = int(config.channel_uses)
        else:
            uses = int(np.ceil(total_bits / per_use)) if per_use > 0 else 0
        if uses > 0 and capacity_gate(total_bits, uses, config.snr_db, config.h):
            return TransmitResult(data, "ok", uses)
        return TransmitResult(b"", "rejected", uses)

    code = config.code()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
    frame = _bytes_to_frame_bits(data, code.k)
    info = frame.reshape(-1, code.k)
    codewords = code.encode(info)
    tx_bits = codewords.reshape(-1)
    symbols = qam16_modulate(tx_bits)  # codeword length is a nibble multiple
    received, nv = awgn(symbols, config.snr_db, config.h, rng)
    llrs = qam16_demodulate(received, nv, config.h)
    decoded, _ = code.decode(llrs.reshape(-1, code.n), max_iters=config.max_iters)
    bit_errors = int(np.sum(decoded != info))
    try:
        out = _frame_bits_to_bytes(decoded.reshape(-1))
        unpack_container(out)
        status = "ok"
    except (FrameCorrupt, FormatError):
        # residual bit errors anywhere in the frame, including the header
        out = b""
        status = "corrupt"
    return TransmitResult(out if status == "ok" else bytes(data[:0]),
                          status, len(symbols), bit_errors)


def ber_sweep(snr_dbs, min_bits=1_000_000, seed=0, h=1.0 + 0j, max_iters=50,
              batch=64, code=None):
    """Post-decoding info-bit error rate per SNR point (Monte Carlo)."""
    code = code or default_code()
    rows = []
    for i, snr in enumerate(snr_dbs):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i])))
        n_bits = 0
        n_err = 0
        while n_bits < min_bits:
            info = rng.integers(0, 2, (batch, code.k)).astype(np.uint8)
            tx = code.encode(info).reshape(-1)
            rx, nv = awgn(qam16_modulate(tx), snr, h, rng)
            llrs = qam16_demodulate(rx, nv, h).reshape(-1, code.n)
            decoded, _ = code.decode(llrs, max_iters=max_iters)
            n_err += int(np.sum(decoded != info))
            n_bits += info.size
        rows.append({"snr_db": float(snr), "bits": n_bits, "errors": n_err,
                     "ber": n_err / n_bits})
    return rows
