import itertools

import numpy as np
import pytest

from lrsystolic.detection import (
    QamConstellation,
    back_substitute,
    complex_normal,
    extended_channel,
    extended_received,
    lr_linear_detect,
    lr_sic_detect,
    ml_detect,
    ml_detect_batch,
    mmse_detect,
    mmse_equalize_batch,
    mmse_filter,
    sample_channel,
    sic_layers,
    sigma2_from_ebn0,
    transmit,
    zf_detect,
)
from lrsystolic.errors import SearchSpaceTooLarge
from lrsystolic.reduction import Algorithm, ReductionParams

QPSK = QamConstellation(4)
QAM16 = QamConstellation(16)
PARAMS = [ReductionParams(a, 0.99) for a in (Algorithm.CLLL, Algorithm.FSR_LLL, Algorithm.ASLR)]


def random_symbols(rng, const, m):
    return const.points[rng.integers(0, const.order, m)]


@pytest.mark.parametrize("order", [4, 16, 64])
def test_constellation_energy_and_gray_roundtrip(order):
    const = QamConstellation(order)
    assert np.mean(np.abs(const.points) ** 2) == pytest.approx(1.0)
    bits = np.array(list(itertools.product([0, 1], repeat=const.bits_per_symbol)))
    x = const.modulate(bits)
    np.testing.assert_array_equal(const.demodulate(x), bits)
    assert len(set(np.round(x, 12))) == order


def test_gray_neighbours_differ_in_one_bit():
    const = QAM16
    pts = const.points
    bits = const.demodulate(pts)
    for a in range(16):
        for b in range(16):
            if abs(abs(pts[a] - pts[b]) - const.step) < 1e-12:
                assert np.sum(bits[a] != bits[b]) == 1


def test_sigma2_convention():
    assert sigma2_from_ebn0(0.0, 4, 4) == pytest.approx(2.0)
    assert sigma2_from_ebn0(10.0, 4, 16) == pytest.approx(0.1)


def test_noiseless_transmit_is_exact():
    rng = np.random.default_rng(0)
    ch = sample_channel(rng, 4, 4)
    x = random_symbols(rng, QPSK, 4)
    np.testing.assert_array_equal(transmit(rng, ch.h, x, 0.0), ch.h @ x)


def test_noise_second_moment():
    rng = np.random.default_rng(1)
    n, sigma2, trials = 4, 0.3, 100_000
    x = random_symbols(rng, QPSK, n)
    y = transmit(rng, np.eye(n), np.tile(x, (trials, 1)), sigma2)
    assert np.mean(np.sum(np.abs(y - x) ** 2, axis=-1)) == pytest.approx(n * sigma2, rel=0.05)


def test_complex_normal_unit_variance():
    z = complex_normal(np.random.default_rng(2), (200_000,))
    assert np.mean(np.abs(z) ** 2) == pytest.approx(1.0, rel=0.02)


@pytest.mark.parametrize("const", [QPSK, QAM16])
def test_zf_noiseless_and_scaling(const):
    rng = np.random.default_rng(3)
    h = complex_normal(rng, (4, 4))
    x = random_symbols(rng, const, 4)
    np.testing.assert_allclose(zf_detect(h, h @ x, const), x)
    np.testing.assert_allclose(zf_detect(2 * np.eye(4), 2 * x, const), x)


def test_zf_matches_normal_equations():
    rng = np.random.default_rng(4)
    h = complex_normal(rng, (4, 4))
    x = random_symbols(rng, QPSK, 4)
    y = transmit(rng, h, x, sigma2_from_ebn0(20, 4, 4))
    ls = np.linalg.solve(h.conj().T @ h, h.conj().T @ y)
    np.testing.assert_allclose(zf_detect(h, y, QPSK), QPSK.quantize(ls))


def test_mmse_zero_noise_equals_zf():
    rng = np.random.default_rng(5)
    h = complex_normal(rng, (4, 4))
    y = h @ random_symbols(rng, QAM16, 4) + 0.2 * complex_normal(rng, (4,))
    np.testing.assert_allclose(mmse_detect(h, y, 0.0, QAM16), zf_detect(h, y, QAM16))


def test_extended_model_matches_closed_form_filter():
    rng = np.random.default_rng(6)
    h = complex_normal(rng, (4, 4))
    y = complex_normal(rng, (4,))
    direct = mmse_filter(h, 0.1) @ y
    ext = mmse_equalize_batch(h[None], y[None], 0.1)[0]
    np.testing.assert_allclose(ext, direct, atol=1e-9)
    explicit = np.linalg.inv(h.conj().T @ h + 0.1 * np.eye(4)) @ h.conj().T @ y
    np.testing.assert_allclose(direct, explicit, atol=1e-9)


def test_scalar_mmse_halves_identity_channel():
    y = np.array([1 + 1j, -0.4, 2j, 0.3 - 0.1j])
    np.testing.assert_allclose(mmse_equalize_batch(np.eye(4)[None], y[None], 1.0)[0], y / 2)


def test_extended_shapes():
    h = np.ones((4, 4))
    assert extended_channel(h, 0.25).shape == (8, 4)
    np.testing.assert_allclose(extended_channel(h, 0.25)[4:], 0.5 * np.eye(4))
    np.testing.assert_array_equal(extended_received(np.ones(4), 4)[4:], 0)


def test_back_substitution_against_inverse():
    rng = np.random.default_rng(7)
    r = np.triu(complex_normal(rng, (5, 5))) + 3 * np.eye(5)
    v = complex_normal(rng, (5,))
    np.testing.assert_allclose(back_substitute(r, v), np.linalg.solve(r, v), atol=1e-12)


def test_sic_single_layer_is_rounding():
    z = sic_layers(np.array([[2.0 + 0j]]), np.array([5.2 - 2.9j]))
    assert z[0] == 3 - 1j


@pytest.mark.parametrize("params", PARAMS, ids=lambda p: p.algorithm.value)
@pytest.mark.parametrize("detect", [lr_linear_detect, lr_sic_detect], ids=["linear", "sic"])
def test_lr_noiseless_exhaustive_recovery(params, detect):
    rng = np.random.default_rng(8)
    h = complex_normal(rng, (2, 2))
    for x in itertools.product(QAM16.points, repeat=2):
        x = np.array(x)
        np.testing.assert_allclose(detect(h, h @ x, params, QAM16), x, atol=1e-12)


@pytest.mark.parametrize("detect", [lr_linear_detect, lr_sic_detect])
def test_lr_noiseless_random_channels(detect):
    rng = np.random.default_rng(9)
    for _ in range(50):
        h = complex_normal(rng, (4, 4))
        x = random_symbols(rng, QPSK, 4)
        np.testing.assert_allclose(detect(h, h @ x, PARAMS[1], QPSK), x, atol=1e-12)
        # with the extended model at tiny noise the answer is unchanged
        np.testing.assert_allclose(detect(h, h @ x, PARAMS[2], QPSK, sigma2=1e-6), x, atol=1e-12)


def test_ml_noiseless_and_optimality():
    rng = np.random.default_rng(10)
    h = complex_normal(rng, (4, 4))
    x = random_symbols(rng, QPSK, 4)
    np.testing.assert_allclose(ml_detect(h, h @ x, QPSK), x)
    y = transmit(rng, h, np.tile(x, (200, 1)), 0.5)
    xml = ml_detect_batch(np.broadcast_to(h, (200, 4, 4)), y, QPSK)
    xzf = np.array([zf_detect(h, yy, QPSK) for yy in y])
    d_ml = np.sum(np.abs(y - xml @ h.T) ** 2, axis=-1)
    d_zf = np.sum(np.abs(y - xzf @ h.T) ** 2, axis=-1)
    assert np.all(d_ml <= d_zf + 1e-12)


def test_ml_tie_picks_lowest_index():
    # y = 0 is equidistant from all four QPSK points
    assert ml_detect(np.eye(1), np.zeros(1), QPSK)[0] == QPSK.points[0]


def test_ml_search_space_guard():
    with pytest.raises(SearchSpaceTooLarge):
        ml_detect(np.eye(6), np.zeros(6), QamConstellation(64))
