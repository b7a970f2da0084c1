import csv
import math

import numpy as np
import pytest

from fbq.sim import (
    ChannelDraws,
    ConfigurationError,
    SimConfig,
    equal_static_allocation,
    find_knee,
    knee_grid,
    overhead_estimate,
    perfect_feedback_capacity,
    run,
    stability_sweep,
)

SMALL = dict(budget=6, horizon=400, period=10)


def per_user(config, bits):
    out, i = [], 0
    for nk in config.bands:
        out.append(int(bits[i : i + len(nk)].sum()))
        i += len(nk)
    return out


def test_equal_static_default_layout():
    c = SimConfig()
    assert equal_static_allocation(c).tolist() == [2, 1] * 4


@pytest.mark.parametrize(
    "K,B,snr,expected", [(3, 12, (0.0,) * 3, [4, 4, 4]), (4, 10, (0.0,) * 4, [3, 3, 2, 2]), (4, 0, (0.0,) * 4, [0] * 4)]
)
def test_equal_static_per_user(K, B, snr, expected):
    c = SimConfig(num_users=K, budget=B, snr_db=snr)
    assert per_user(c, equal_static_allocation(c)) == expected


def test_overhead_conventions():
    c = SimConfig()
    assert overhead_estimate(c) == pytest.approx(math.log2(math.comb(19, 7)) / 10)
    assert overhead_estimate(c) == pytest.approx(1.562, abs=1e-3)
    assert overhead_estimate(c, per_physical_user=True) == pytest.approx(0.883, abs=1e-3)


@pytest.mark.parametrize(
    "kwargs",
    [dict(policy="round-robin"), dict(horizon=105), dict(snr_db=(0.0, 0.0)), dict(arrival_rate=-0.1),
     dict(budget=-1), dict(bands=((0, 1), (1, 2), (4,), (5,)))],
)
def test_config_errors(kwargs):
    with pytest.raises(Exception) as exc:
        SimConfig(**kwargs)
    assert isinstance(exc.value, (ConfigurationError, ValueError))


def test_config_json_round_trip_and_unknown_field():
    c = SimConfig(arrival_rate=(0.1, 0.2, 0.3, 0.4), initial_queues=(1, 2, 3, 4))
    assert SimConfig.from_json(c.to_json()) == c
    with pytest.raises(ConfigurationError, match="colour"):
        SimConfig.from_json({"colour": 1})


def test_zero_arrivals_keep_queues_empty(small_codebook):
    c = SimConfig(arrival_rate=0.0, **SMALL)
    res = run(c, small_codebook)
    assert np.all(res.queues == 0)
    assert res.mean_queue == 0.0
    assert res.is_stable()


def test_perfect_feedback_dominates_pathwise(small_codebook):
    c = SimConfig(arrival_rate=0.6, **SMALL)
    ch = ChannelDraws(c.horizon, c.num_bands, c.seed, small_codebook)
    perfect = run(c.with_(policy="perfect-feedback"), small_codebook, ch)
    for p in ("maxweight-greedy", "equal-static", "maxweight-dp", "maxweight-relaxation"):
        other = run(c.with_(policy=p), small_codebook, ch)
        assert np.all(perfect.service >= other.service - 1e-12)
        assert np.all(perfect.queues <= other.queues + 1e-9)
        assert np.all(other.queues >= 0)
        assert np.all(other.allocations.sum(axis=1) <= c.budget)


def test_maxweight_scale_invariance(small_codebook):
    q0 = (3.0, 1.0, 2.0, 0.5)
    a = run(SimConfig(initial_queues=q0, horizon=10, budget=6), small_codebook)
    b = run(SimConfig(initial_queues=tuple(2 * x for x in q0), horizon=10, budget=6), small_codebook)
    np.testing.assert_array_equal(a.allocations[0], b.allocations[0])


def test_dp_and_greedy_agree_on_miso_rows(small_codebook):
    c = SimConfig(arrival_rate=0.5, **SMALL)
    ch = ChannelDraws(c.horizon, c.num_bands, c.seed, small_codebook)
    dp = run(c.with_(policy="maxweight-dp"), small_codebook, ch)
    gr = run(c.with_(policy="maxweight-greedy"), small_codebook, ch)
    # greedy is exact on monotone concave rows up to ties
    np.testing.assert_allclose(dp.mean_service.sum(), gr.mean_service.sum(), rtol=0.05)


def test_run_is_deterministic(small_codebook):
    c = SimConfig(arrival_rate=0.4, seed=7, **SMALL)
    a, b = run(c, small_codebook), run(c, small_codebook)
    np.testing.assert_array_equal(a.queues, b.queues)
    np.testing.assert_array_equal(a.allocations, b.allocations)
    assert not np.array_equal(a.queues, run(c.with_(seed=8), small_codebook).queues)


def test_csv_rows(tmp_path, small_codebook):
    c = SimConfig(arrival_rate=0.4, **SMALL)
    res = run(c, small_codebook)
    res.write_csv(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["slot", "q1", "q2", "q3", "q4", "s1", "s2", "s3", "s4"]
    assert len(rows) == c.horizon // c.period + 1
    assert int(rows[-1][0]) == c.horizon


def test_zero_horizon(small_codebook):
    res = run(SimConfig(horizon=0, budget=6), small_codebook)
    assert res.queues.shape == (0, 4)
    assert res.is_stable()


def test_missing_codebook_is_reported():
    c = SimConfig(**SMALL)
    ch = ChannelDraws(c.horizon, c.num_bands, c.seed, None)
    with pytest.raises(ConfigurationError, match="codebook"):
        run(c, channels=ch)
    # perfect feedback needs no codebook
    run(c.with_(policy="perfect-feedback"), channels=ch)


def test_budget_beyond_codebook(small_codebook):
    with pytest.raises(ConfigurationError):
        run(SimConfig(budget=12, horizon=20, policy="equal-static"), small_codebook)


def test_slopes_detect_growth(small_codebook):
    c = SimConfig(**SMALL)
    ch = ChannelDraws(c.horizon, c.num_bands, c.seed, small_codebook)
    cap = perfect_feedback_capacity(c, ch)
    over = run(c.with_(arrival_rate=1.5 * cap, policy="perfect-feedback"), channels=ch)
    under = run(c.with_(arrival_rate=0.3 * cap, policy="perfect-feedback"), channels=ch)
    assert not over.is_stable()
    assert over.queue_slopes().max() >= 0.4 * cap
    assert under.is_stable()


def test_find_knee():
    assert find_knee([1, 2, 3, 4], [True, True, False, True]) == 2.0
    assert find_knee([1, 2], [False, True]) is None
    assert find_knee([1, 2], [True, True]) == 2.0


def test_sweep_shape(small_codebook):
    c = SimConfig(**SMALL)
    ch = ChannelDraws(c.horizon, c.num_bands, c.seed, small_codebook)
    grid = knee_grid(c, ch, 0.5, 1.2, 0.35)
    assert len(grid) == 3
    out = stability_sweep(c, grid, ["perfect-feedback", "equal-static"], small_codebook, ch, workers=2)
    assert set(out["knees"]) == {"perfect-feedback", "equal-static"}
    assert len(out["policies"]["equal-static"]["points"]) == 3
    serial = stability_sweep(c, grid, ["perfect-feedback", "equal-static"], small_codebook, ch, workers=1)
    assert serial == out
    with pytest.raises(ConfigurationError):
        stability_sweep(c, [0.2, 0.1], ["perfect-feedback"], small_codebook, ch)
