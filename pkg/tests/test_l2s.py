"""Latency-model numerics: stage distributions, joint completion, rates."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shardsim.l2s import (
    DecayingMean,
    EmptyProofSet,
    LatencyScorer,
    NegativeTime,
    NonPositiveRate,
    RateModel,
    ShardRates,
    ShardTelemetry,
    all_proofs_cdf,
    all_proofs_pdf,
    estimate_rates,
    expected_latency,
    expected_max_proof_time,
    proof_time_cdf,
    proof_time_pdf,
)

R12 = ShardRates(lambda_c=1.0, lambda_v=2.0)
R11 = ShardRates(lambda_c=1.0, lambda_v=1.0)


def mc_samples(rates, n, rng):
    return rng.exponential(1.0 / rates.lambda_c, n) + rng.exponential(
        1.0 / rates.lambda_v, n
    )


def test_pdf_vanishes_at_zero():
    assert proof_time_pdf(R12, 0.0) == 0.0


def test_pdf_formula_value():
    expected = 1.0 * 2.0 / (2.0 - 1.0) * (math.exp(-1.0) - math.exp(-2.0))
    assert proof_time_pdf(R12, 1.0) == pytest.approx(expected, abs=1e-12)


def test_pdf_equal_rates_erlang():
    assert proof_time_pdf(R11, 1.0) == pytest.approx(math.exp(-1.0), abs=1e-12)


def test_negative_time_rejected():
    with pytest.raises(NegativeTime):
        proof_time_pdf(R12, -0.1)
    with pytest.raises(NegativeTime):
        proof_time_cdf(R12, -1.0)


def test_cdf_endpoints():
    assert proof_time_cdf(R12, 0.0) == 0.0
    assert proof_time_cdf(R12, 200.0) == pytest.approx(1.0, abs=1e-12)


def test_cdf_formula_value_and_quadrature_crosscheck():
    expected = 2.0 * (1.0 - math.exp(-1.0)) - (1.0 - math.exp(-2.0))
    got = proof_time_cdf(R12, 1.0)
    assert got == pytest.approx(expected, abs=1e-12)
    # independent check: integrate the density numerically
    ts = np.linspace(0.0, 1.0, 20001)
    integral = np.trapezoid(proof_time_pdf(R12, ts), ts)
    assert got == pytest.approx(float(integral), abs=1e-6)


def test_rate_order_symmetry():
    swapped = ShardRates(lambda_c=2.0, lambda_v=1.0)
    ts = np.linspace(0.0, 10.0, 101)
    assert np.allclose(proof_time_pdf(R12, ts), proof_time_pdf(swapped, ts))
    assert np.allclose(proof_time_cdf(R12, ts), proof_time_cdf(swapped, ts))


def test_continuity_at_equal_rates():
    near = ShardRates(lambda_c=1.0, lambda_v=1.0 + 1e-6)
    for t in (0.1, 0.5, 1.0, 3.0):
        assert abs(proof_time_pdf(near, t) - proof_time_pdf(R11, t)) < 1e-6
        assert abs(proof_time_cdf(near, t) - proof_time_cdf(R11, t)) < 1e-6


def test_all_proofs_singleton_is_stage_pdf():
    ts = np.linspace(0.0, 10.0, 101)
    assert np.allclose(all_proofs_pdf([R12], ts), proof_time_pdf(R12, ts))


def test_all_proofs_pdf_normalizes():
    ts = np.linspace(0.0, 60.0, 8193)
    dens = all_proofs_pdf([R12, R12], ts)
    assert float(np.trapezoid(dens, ts)) == pytest.approx(1.0, abs=1e-4)


def test_all_proofs_mean_matches_monte_carlo():
    rng = np.random.default_rng(7)
    n = 1_000_000
    sim = np.maximum(mc_samples(R12, n, rng), mc_samples(R12, n, rng))
    mc = float(sim.mean())
    quad = expected_max_proof_time([R12, R12])
    assert abs(quad - mc) / mc < 0.02


def test_empty_proof_set_rejected():
    with pytest.raises(EmptyProofSet):
        all_proofs_pdf([], 1.0)
    with pytest.raises(EmptyProofSet):
        expected_latency([], R12)


def test_expected_latency_same_shard_unit_rates():
    # one proof stage plus one confirm stage, each with mean 2
    assert expected_latency([R11], R11) == pytest.approx(4.0, abs=1e-6)


def test_expected_latency_two_shards_vs_monte_carlo():
    rng = np.random.default_rng(11)
    n = 1_000_000
    proofs = np.maximum(mc_samples(R12, n, rng), mc_samples(R12, n, rng))
    mc = float(proofs.mean()) + 1.5
    got = expected_latency([R12, R12], R12)
    assert abs(got - mc) / mc < 0.02


def test_expected_latency_rate_scaling():
    fast = ShardRates(lambda_c=10.0, lambda_v=20.0)
    base = expected_latency([R12], R12)
    scaled = expected_latency([fast, ], fast)
    assert scaled == pytest.approx(base / 10.0, rel=1e-9)


def test_expected_latency_monotone_in_proof_set():
    extra = ShardRates(lambda_c=0.7, lambda_v=3.0)
    small = expected_latency([R12], R12)
    large = expected_latency([R12, extra], R12)
    assert large >= small


def test_literal_self_convolution_doubles_proof_mean():
    # integral of t * (f conv f) equals twice the mean of f
    e_max = expected_max_proof_time([R12, R12], tmax=expected_tmax())
    literal = expected_latency([R12, R12], R12, literal_self_convolution=True)
    assert literal == pytest.approx(2.0 * e_max, rel=1e-3)


def expected_tmax():
    # mirror of the internal budget: 20x the sum of stage means involved
    return 20.0 * (1.5 + 1.5 + 1.5)


def test_nonpositive_rates_rejected():
    with pytest.raises(NonPositiveRate):
        ShardRates(lambda_c=0.0, lambda_v=1.0)
    with pytest.raises(NonPositiveRate):
        ShardRates(lambda_c=1.0, lambda_v=-2.0)
    with pytest.raises(NonPositiveRate):
        ShardRates(lambda_c=float("nan"), lambda_v=1.0)


def test_estimate_rates_defaults_on_empty_telemetry():
    defaults = ShardRates(lambda_c=5.0, lambda_v=1.0)
    model = estimate_rates([ShardTelemetry.fresh() for _ in range(3)], defaults, 2000)
    for s in model.shards:
        assert s.lambda_c == defaults.lambda_c
        assert s.lambda_v == defaults.lambda_v


def test_estimate_rates_constant_rtt():
    defaults = ShardRates(lambda_c=5.0, lambda_v=1.0)
    tele = ShardTelemetry.fresh()
    for t in range(5):
        tele.rtt.update(float(t), 0.2)
    model = estimate_rates([tele], defaults, 2000)
    assert model[0].lambda_c == pytest.approx(5.0)


def test_estimate_rates_queue_inflation():
    defaults = ShardRates(lambda_c=5.0, lambda_v=2.0)
    tele = ShardTelemetry.fresh()
    tele.block_interval.update(10.0, 1.0)
    tele.queue_length = 4000
    model = estimate_rates([tele], defaults, 2000)
    # verification expectation 1s * (1 + 4000/2000) = 3s
    assert model[0].lambda_v == pytest.approx(1.0 / 3.0)


def test_decaying_mean_halflife():
    m = DecayingMean(halflife=10.0)
    m.update(0.0, 4.0)
    assert m.mean() == pytest.approx(4.0)
    m.update(10.0, 1.0)  # old sample decays to half weight
    assert m.mean() == pytest.approx((0.5 * 4.0 + 1.0) / 1.5)


def test_rate_model_json_roundtrip(tmp_path):
    model = RateModel([R12, ShardRates(3.0, 4.0)])
    path = str(tmp_path / "rates.json")
    model.to_json(path)
    loaded = RateModel.from_json(path)
    assert loaded.shards == model.shards


def test_latency_scorer_caches_and_handles_coinbase():
    scorer = LatencyScorer(RateModel.uniform(4, 1.0, 1.0))
    e = scorer.expected(frozenset({0, 1}), 2)
    assert e == scorer.expected(frozenset({0, 1}), 2)
    coinbase = scorer.expected(frozenset(), 2)
    assert coinbase == pytest.approx(2.0, abs=1e-6)  # confirm stage only


rates_st = st.floats(min_value=0.05, max_value=50.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(rates_st, rates_st)
def test_cdf_monotone_in_unit_interval(lc, lv):
    r = ShardRates(lc, lv)
    ts = np.linspace(0.0, 40.0 / min(lc, lv), 200)
    vals = np.atleast_1d(proof_time_cdf(r, ts))
    assert np.all(vals >= -1e-12) and np.all(vals <= 1.0 + 1e-9)
    assert np.all(np.diff(vals) >= -1e-9)
    assert np.all(np.atleast_1d(proof_time_pdf(r, ts)) >= -1e-12)
