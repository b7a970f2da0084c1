import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from fbq.core import FbqError
from fbq.rates import (
    BudgetTooLargeError,
    ChannelProfile,
    DomainError,
    MisoModel,
    SisoModel,
    SuperCodebook,
    UserModel,
    beta1,
    beta2,
    build_rate_table,
    check_monotone,
    check_submodular,
    codebook_gains,
    codebook_rate,
    complex_gaussian,
    db_to_linear,
    generate_supercodebook,
    miso_rvq_rate,
    miso_table,
    siso_incremental_gain,
    siso_rate,
    siso_unquantized_rate,
    write_rate_table_csv,
)
from fbq.solvers import beta_ratio_check


def truncated_exp(rng, sigma, n):
    u = rng.uniform(size=n)
    return -np.log1p(-u * -math.expm1(-sigma))


# --- SISO quantizer -------------------------------------------------------


def test_siso_zero_bits_is_zero():
    for sigma in (1.0, 20.0):
        assert siso_rate(SisoModel(1.0, sigma), 0) == 0.0


def test_siso_one_bit_hand_expansion():
    c = 1.0 / (1.0 - math.exp(-20.0))
    expected = c * (1.0 - math.exp(-10.0)) * math.log2(11.0) * math.exp(-10.0)
    assert siso_rate(SisoModel(1.0, 20.0), 1) == pytest.approx(expected, rel=1e-13)


def test_siso_one_bit_monte_carlo():
    rng = np.random.default_rng(11)
    x = truncated_exp(rng, 20.0, 10**6)
    q = np.floor(x / 10.0) * 10.0
    samples = np.log2(1.0 + q)
    tol = 3 * samples.std() / math.sqrt(samples.size)
    assert abs(samples.mean() - siso_rate(SisoModel(1.0, 20.0), 1)) < tol


@pytest.mark.parametrize("sigma,b", [(5.0, 4), (20.0, 6)])
def test_siso_rate_monte_carlo(sigma, b):
    rng = np.random.default_rng(b)
    step = sigma / 2**b
    samples = np.log2(1.0 + np.floor(truncated_exp(rng, sigma, 10**6) / step) * step)
    tol = 3 * samples.std() / math.sqrt(samples.size)
    assert abs(samples.mean() - siso_rate(SisoModel(1.0, sigma), b)) < tol


def test_siso_fine_quantizer_approaches_unquantized():
    m = SisoModel(1.0, 20.0)
    val, _ = integrate.quad(lambda x: math.log2(1 + x) * math.exp(-x), 0, 20, epsabs=1e-13, limit=200)
    unq = val / (1 - math.exp(-20))
    assert siso_unquantized_rate(m) == pytest.approx(unq, rel=1e-12)
    assert abs(siso_rate(m, 25) - unq) < 1e-3


@pytest.mark.parametrize("alpha", [0.25, 0.5, 2.0, 9.0])
@pytest.mark.parametrize("b", [1, 3, 5])
def test_siso_general_alpha_against_quadrature(alpha, b):
    sigma = 20.0
    n, step = 2**b, sigma / 2**b
    root = math.sqrt(alpha)

    def integrand(x):
        cell = min(math.floor(root * x / step), n - 1)
        return math.log2(1 + cell * step) * math.exp(-x)

    edges = [i * step / root for i in range(1, n) if i * step / root < sigma]
    val, _ = integrate.quad(integrand, 0, sigma, points=edges or None, limit=500, epsabs=1e-13)
    oracle = val / (1 - math.exp(-sigma))
    assert siso_rate(SisoModel(alpha, sigma), b) == pytest.approx(oracle, rel=1e-9, abs=1e-12)


def test_siso_alpha_one_paths_agree():
    # a hair off 1 takes the cell-probability path
    m1, m2 = SisoModel(1.0, 20.0), SisoModel(1.0 + 1e-12, 20.0)
    for b in range(8):
        assert siso_rate(m2, b) == pytest.approx(siso_rate(m1, b), abs=1e-10)


@pytest.mark.parametrize("sigma", [5.0, 20.0, 50.0])
def test_incremental_gain_matches_differences(sigma):
    m = SisoModel(1.0, sigma)
    r = [siso_rate(m, b) for b in range(22)]
    for b in range(21):
        assert siso_incremental_gain(m, b) == pytest.approx((r[b + 1] - r[b]) / m.normalization, abs=1e-10)


def test_gain_shrinks_from_three_bits_at_sigma_20():
    m = SisoModel(1.0, 20.0)
    g = [siso_incremental_gain(m, b) for b in range(1, 26)]
    # the two coarsest quantizers leave almost all mass in cell zero
    assert g[0] < g[1] < g[2]
    assert all(y <= x for x, y in zip(g[2:], g[3:]))


@pytest.mark.parametrize("sigma", [1.0, 3.0, 5.0])
def test_gain_shrinks_from_one_bit_at_small_sigma(sigma):
    m = SisoModel(1.0, sigma)
    g = [siso_incremental_gain(m, b) for b in range(1, 26)]
    assert all(y <= x for x, y in zip(g, g[1:]))


def test_siso_domain_errors():
    with pytest.raises(DomainError):
        SisoModel(-1.0, 1.0)
    with pytest.raises(DomainError):
        SisoModel(1.0, 0.0)
    with pytest.raises(BudgetTooLargeError):
        siso_rate(SisoModel(), 31)
    with pytest.raises(DomainError):
        siso_incremental_gain(SisoModel(2.0, 20.0), 1)


# --- MISO-RVQ model -------------------------------------------------------


def beta_closed_forms(snr):
    x = 1.0 / snr
    e1 = special.exp1(x) * math.exp(x)
    return e1 / math.log(2), (1 + (1 - x) * e1) / math.log(2)


@pytest.mark.parametrize("snr_db", [-15.0, -10.0, -3.0, 0.0, 4.0, 10.0, 15.0])
def test_betas_against_exponential_integral(snr_db):
    snr = db_to_linear(snr_db)
    b1, b2 = beta_closed_forms(snr)
    assert beta1(snr) == pytest.approx(b1, rel=1e-9)
    assert beta2(snr) == pytest.approx(b2, rel=1e-9)


def test_betas_monte_carlo():
    rng = np.random.default_rng(5)
    snr = db_to_linear(3.0)
    h = complex_gaussian(rng, (10**6, 2))
    one = np.log2(1 + snr * np.abs(h[:, 0]) ** 2)
    two = np.log2(1 + snr * (np.abs(h) ** 2).sum(axis=1))
    for s, ref in ((one, beta1(snr)), (two, beta2(snr))):
        assert abs(s.mean() - ref) < 3 * s.std() / math.sqrt(s.size)


def test_beta_ratio_at_most_two():
    ratios = beta_ratio_check(np.arange(-15.0, 15.01, 0.5))
    assert ratios.max() <= 2.0
    assert np.all(np.diff(ratios) < 0)


def test_beta_rejects_non_positive_snr():
    with pytest.raises(DomainError):
        beta1(0.0)


def test_miso_rate_endpoints():
    m = MisoModel.from_db(0.0)
    assert miso_rvq_rate(m, 0) == pytest.approx(m.beta1)
    assert miso_rvq_rate(m, 60) == pytest.approx(m.beta2)
    assert miso_rvq_rate(m, 1) == pytest.approx(0.5 * (m.beta1 + m.beta2))


@settings(max_examples=40, deadline=None)
@given(st.floats(-20.0, 20.0), st.integers(1, 16))
def test_miso_rows_monotone_and_submodular(snr_db, B):
    t = miso_table([db_to_linear(snr_db)], B)
    assert t.monotone and t.submodular
    assert check_monotone(t) and check_submodular(t)


# --- codebooks ------------------------------------------------------------


def test_codebook_rate_examples():
    e1 = np.array([[1.0, 0.0]])
    assert codebook_rate(e1, 1.0, [1.0, 0.0]) == pytest.approx(1.0)
    assert codebook_rate(e1, 3.0, [0.0, 1.0]) == 0.0
    both = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert codebook_rate(both, 1.0, [0.0, 1j]) == pytest.approx(1.0)


def test_codebook_gains_chunking_is_transparent(rng):
    cb = np.linalg.qr(complex_gaussian(rng, (2, 2)))[0]
    h = complex_gaussian(rng, (5000, 2))
    direct = np.max(np.abs(h @ cb.conj().T) ** 2, axis=1)
    np.testing.assert_allclose(codebook_gains(cb, h), direct, rtol=1e-13)


def test_empty_codebook_rejected():
    with pytest.raises(FbqError):
        codebook_gains(np.zeros((0, 2), dtype=complex), np.ones((1, 2)))


def test_supercodebook_shape_and_norms(small_codebook):
    assert small_codebook.max_bits == 6
    np.testing.assert_array_equal(small_codebook[0], [[1.0, 0.0]])
    for b in range(7):
        cb = small_codebook[b]
        assert cb.shape == (2**b, 2)
        np.testing.assert_allclose(np.linalg.norm(cb, axis=1), 1.0, atol=1e-12)
    with pytest.raises(FbqError):
        small_codebook[7]


def test_supercodebook_reproducible_and_serializable(small_codebook):
    again = generate_supercodebook(6, 8, 200, seed=3)
    for b in range(7):
        np.testing.assert_array_equal(again[b], small_codebook[b])
    other = generate_supercodebook(6, 8, 200, seed=4)
    assert not np.array_equal(other[3], small_codebook[3])
    back = SuperCodebook.from_json(json.loads(json.dumps(small_codebook.to_json())))
    for b in range(7):
        np.testing.assert_array_equal(back[b], small_codebook[b])


def test_supercodebook_prefix_independent_of_budget():
    a, b = generate_supercodebook(3, 4, 100, seed=9), generate_supercodebook(5, 4, 100, seed=9)
    for k in range(4):
        np.testing.assert_array_equal(a[k], b[k])


# --- tables and checkers --------------------------------------------------


def test_checkers_on_small_rows():
    assert check_monotone([[0.0, 1.0, 3.0]])
    assert not check_submodular([[0.0, 1.0, 3.0]])
    assert check_submodular([[0.0, 2.0, 3.0]])
    assert not check_monotone([[0.0, 2.0, 1.0]])


def test_sigma_20_siso_table_is_not_submodular_over_all_bits():
    m = SisoModel(1.0, 20.0)
    row = np.array([[siso_rate(m, b) for b in range(1, 27)]])
    assert check_monotone(row)
    assert not check_submodular(row)
    assert check_submodular(row[:, 2:])


def test_profile_json_round_trip_and_table():
    prof = ChannelProfile(
        (UserModel("miso-rvq", snr=db_to_linear(-3.0)), UserModel("siso", alpha=1.0, sigma=5.0),
         UserModel("table", rates=(0.0, 0.5, 0.75)))
    )
    back = ChannelProfile.from_json(json.loads(json.dumps(prof.to_json())))
    assert back.users[0].snr == pytest.approx(prof.users[0].snr)
    t = build_rate_table(back, 2)
    assert t.entries.shape == (3, 3)
    np.testing.assert_array_equal(t.entries[2], [0.0, 0.5, 0.75])
    with pytest.raises(FbqError):
        build_rate_table(back, 3)
    with pytest.raises(FbqError):
        UserModel.from_json({"kind": "mimo"})


def test_profile_replicates_bands():
    prof = ChannelProfile.miso_db([-10.0, 10.0], bands_per_user=2)
    assert [round(10 * math.log10(u.snr), 9) for u in prof.users] == [-10.0, -10.0, 10.0, 10.0]


def test_rate_table_csv(tmp_path):
    t = miso_table([1.0, 10.0], 3)
    write_rate_table_csv(t, tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["user", "b0", "b1", "b2", "b3"]
    assert len(rows) == 3
    assert float(rows[2][4]) == t.entries[1, 3]


def test_empty_profile_gives_empty_table():
    t = build_rate_table(ChannelProfile(()), 4)
    assert t.entries.shape == (0, 5)
