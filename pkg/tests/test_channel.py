"""Channel stack: LDPC code, 16QAM, capacity gate, transmit framing."""

import numpy as np
import pytest

from dsscc.channel import (ChannelConfig, ChannelError, LdpcCode, awgn,
                           capacity_bits_per_use, capacity_gate, default_code,
                           load_alist, default_alist_path, qam16_demodulate,
                           qam16_modulate, transmit)
from dsscc.range_coder import pack_container


@pytest.fixture(scope="module")
def code():
    return default_code()


def test_alist_loads_expected_geometry(code):
    assert (code.n, code.k, code.m) == (1944, 1296, 648)
    H = load_alist(default_alist_path())
    assert H.shape == (648, 1944)
    assert np.array_equal(H, code.H)


def test_all_zero_info_gives_all_zero_codeword(code):
    cw = code.encode(np.zeros(1296, dtype=np.uint8))
    assert not cw.any()
    assert not ((code.H.astype(np.int64) @ cw.astype(np.int64)) % 2).any()


def test_encoded_words_always_satisfy_parity(code):
    rng = np.random.default_rng(0)
    info = rng.integers(0, 2, (8, code.k)).astype(np.uint8)
    words = code.encode(info)
    checks = (words.astype(np.int64) @ code.H.T.astype(np.int64)) % 2
    assert not checks.any()


def test_noiseless_hard_llr_decode(code):
    rng = np.random.default_rng(1)
    u = rng.integers(0, 2, code.k).astype(np.uint8)
    cw = code.encode(u)
    llr = np.where(cw == 0, 20.0, -20.0)
    info, ok = code.decode(llr)
    assert ok and np.array_equal(info, u)


def test_five_random_flips_corrected(code):
    """Strong-LLR channel with 5 flipped positions: >= 99/100 successes."""
    rng = np.random.default_rng(2)
    good = 0
    for _ in range(100):
        u = rng.integers(0, 2, code.k).astype(np.uint8)
        cw = code.encode(u)
        llr = np.where(cw == 0, 20.0, -20.0)
        flip = rng.choice(code.n, 5, replace=False)
        llr[flip] = -llr[flip]
        info, ok = code.decode(llr)
        good += int(ok and np.array_equal(info, u))
    assert good >= 99


def test_wrong_llr_length_rejected(code):
    with pytest.raises(ChannelError):
        code.decode(np.zeros(100))
    with pytest.raises(ChannelError):
        code.encode(np.zeros(10, dtype=np.uint8))


# ---------------------------------------------------------------------------
# 16QAM


def test_gray_map_anchor_symbol():
    sym = qam16_modulate(np.array([0, 0, 0, 0]))
    np.testing.assert_allclose(sym, [(-3 - 3j) / np.sqrt(10)])


def test_all_sixteen_nibbles_round_trip():
    nib = np.arange(16)
    bits = np.stack([(nib >> 3) & 1, (nib >> 2) & 1, (nib >> 1) & 1, nib & 1],
                    axis=1).reshape(-1)
    syms = qam16_modulate(bits)
    assert len(np.unique(np.round(syms * np.sqrt(10)))) == 16
    hard = (qam16_demodulate(syms, 1e-9) < 0).astype(int)
    assert np.array_equal(hard, bits)


def test_unit_average_power():
    rng = np.random.default_rng(3)
    syms = qam16_modulate(rng.integers(0, 2, 400_000))
    assert abs(np.mean(np.abs(syms) ** 2) - 1.0) < 1e-2


def test_bit_count_must_be_nibble_multiple():
    with pytest.raises(ChannelError):
        qam16_modulate(np.array([1, 0, 1]))


def test_complex_h_equalization():
    rng = np.random.default_rng(4)
    bits = rng.integers(0, 2, 4000)
    h = 0.7 - 1.1j
    rx, nv = awgn(qam16_modulate(bits), 25.0, h, np.random.default_rng(5))
    hard = (qam16_demodulate(rx, nv, h) < 0).astype(int)
    assert np.array_equal(hard, bits)


def test_llr_sign_tracks_posterior():
    # a symbol deep inside the 0000 decision region: all four LLRs positive
    llrs = qam16_demodulate(np.array([(-3 - 3j) / np.sqrt(10)]), 0.1)
    assert np.all(llrs > 0)


# ---------------------------------------------------------------------------
# capacity gate


def test_capacity_gate_exact_threshold():
    assert capacity_gate(3459, 1000, 10.0, 1.0)
    assert not capacity_gate(3460, 1000, 10.0, 1.0)
    assert abs(capacity_bits_per_use(10.0, 1.0) - np.log2(11)) < 1e-12


def test_capacity_vanishes_at_low_snr():
    assert not capacity_gate(1, 1000, -300.0, 1.0)
    assert capacity_gate(0, 1000, -300.0, 1.0)


def test_zero_channel_coefficient_has_zero_capacity():
    assert capacity_bits_per_use(10.0, 0.0) == 0.0
    assert not capacity_gate(1, 10, 10.0, 0.0)


# ---------------------------------------------------------------------------
# transmit


def _container(seed=0, z_len=30, y_len=200):
    rng = np.random.default_rng(seed)
    return pack_container(rng.integers(0, 256, z_len, dtype=np.uint8).tobytes(),
                          rng.integers(0, 256, y_len, dtype=np.uint8).tobytes(),
                          (8, 8, 32), (2, 2, 16))


def test_ideal_mode_error_free_under_capacity():
    blob = _container()
    result = transmit(blob, ChannelConfig(mode="ideal_capacity", snr_db=10.0))
    assert result.status == "ok"
    assert result.payload == blob


def test_ideal_mode_rejects_over_budget():
    blob = _container()
    cfg = ChannelConfig(mode="ideal_capacity", snr_db=10.0, channel_uses=10)
    result = transmit(blob, cfg)
    assert result.status == "rejected"
    assert result.payload == b""


def test_ldpc_high_snr_delivers_exactly():
    blob = _container(1)
    result = transmit(blob, ChannelConfig(mode="ldpc_16qam", snr_db=20.0, seed=3))
    assert result.status == "ok"
    assert result.payload == blob
    assert result.bit_errors == 0


def test_ldpc_low_snr_flags_corruption():
    blob = _container(2)
    result = transmit(blob, ChannelConfig(mode="ldpc_16qam", snr_db=0.0, seed=3))
    assert result.status == "corrupt"
    assert result.bit_errors > 0


def test_transmit_deterministic_given_seed():
    blob = _container(3)
    cfg = ChannelConfig(mode="ldpc_16qam", snr_db=7.0, seed=11)
    r1 = transmit(blob, cfg)
    r2 = transmit(blob, cfg)
    assert (r1.status, r1.bit_errors, r1.payload) == (r2.status, r2.bit_errors, r2.payload)


def test_noise_variance_matches_snr_definition():
    rng = np.random.default_rng(6)
    g = qam16_modulate(rng.integers(0, 2, 400_000))
    for snr in (0.0, 8.0):
        rx, _ = awgn(g, snr, 1.0, np.random.default_rng(7))
        ratio = np.mean(np.abs(rx - g) ** 2) / np.mean(np.abs(g) ** 2)
        assert abs(ratio - 10 ** (-snr / 10)) / 10 ** (-snr / 10) < 0.02


def test_invalid_configs_rejected():
    with pytest.raises(ChannelError):
        ChannelConfig(mode="carrier_pigeon")
    with pytest.raises(ChannelError):
        ChannelConfig(mode="ldpc_16qam", h=0.0)
    with pytest.raises(ChannelError):
        ChannelConfig(snr_db=float("nan"))
