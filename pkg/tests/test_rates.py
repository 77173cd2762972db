import math

import numpy as np
import pytest

from hetnetopt.rates import (
    RateModelError,
    ServingCapacityRule,
    band_for,
    bf_gain,
    build_rate_table,
    canon_cluster,
    capacity,
    enumerate_candidate_clusters,
    long_term_rate,
    rate_lzfbf,
    rate_mrt,
)
from hetnetopt.topology import Tier, GridLayoutConfig, generate_grid_layout

from conftest import isolated_bs_layout


def test_capacity_rule_paper_values():
    rule = ServingCapacityRule(rho=1.0)
    assert rule.capacity(Tier.MACRO, 4) == 40
    assert rule.capacity(Tier.SMALL, 1) == 4
    assert ServingCapacityRule(rho=0.37).capacity(Tier.SMALL, 1) == 4
    assert ServingCapacityRule(rho=0.25).capacity(Tier.MACRO, 4) == 10


def test_capacity_bracket_holds():
    # Defn-1 bracket: S_j <= S_j(L) <= L * S_j
    for rho in (0.0, 0.1, 0.25, 0.5, 0.77, 1.0):
        rule = ServingCapacityRule(rho=rho)
        for tier, base in ((Tier.MACRO, 10), (Tier.SMALL, 4)):
            for L in range(1, 6):
                s = rule.capacity(tier, L)
                assert base <= s <= L * base


def test_bf_gain_values_and_bounds():
    assert bf_gain(100, 10) == pytest.approx(9.1)
    assert bf_gain(1, 1) == pytest.approx(1.0)
    assert bf_gain(40, 16) == pytest.approx(25 / 16)
    with pytest.raises(RateModelError):
        bf_gain(10, 11)


def test_candidate_cluster_counts():
    layout = generate_grid_layout(GridLayoutConfig(), seed=1)
    from hetnetopt.topology import compute_link_gains

    gains = compute_link_gains(layout)
    bands = [band_for(layout, 1, 4), band_for(layout, 3, 4)]
    cands = enumerate_candidate_clusters(0, gains, layout.powers_w(), bands, top_n=8)
    # all 8 strongest active in band 1: sum_{l=1..4} C(8,l) = 162
    assert len(cands[1]) == 162
    # band 3 draws only from the small BSs among the top 8
    smalls = {b.id for b in layout.smalls}
    assert all(set(c) <= smalls for c in cands[3])
    n_small = len({j for c in cands[3] for j in c})
    expected = sum(math.comb(n_small, l) for l in range(1, min(4, n_small) + 1))
    assert len(cands[3]) == expected


def test_candidate_clusters_degenerate_topn():
    layout = generate_grid_layout(GridLayoutConfig(), seed=1)
    from hetnetopt.topology import compute_link_gains

    gains = compute_link_gains(layout)
    bands = [band_for(layout, 1, 1)]
    cands = enumerate_candidate_clusters(5, gains, layout.powers_w(), bands, top_n=1)
    rx = layout.powers_w() * gains.beta[5]
    strongest = int(np.argmax(rx))
    assert cands[1] == [(strongest,)]


def test_candidate_clusters_deterministic(desk_layout, desk_gains):
    bands = [band_for(desk_layout, 1, 4)]
    a = enumerate_candidate_clusters(3, desk_gains, desk_layout.powers_w(), bands)
    b = enumerate_candidate_clusters(3, desk_gains, desk_layout.powers_w(), bands)
    assert a == b


def test_lzfbf_single_bs_closed_form():
    layout, gains = isolated_bs_layout(antennas=100, n_users=10, snr=1.0)
    band = band_for(layout, 2, 1)  # single macro, macro-only band
    rule = ServingCapacityRule(rho=1.0, base_macro=10)
    r = rate_lzfbf(0, (0,), band, layout, gains, rule)
    assert r == pytest.approx(math.log2(1 + 9.1), rel=1e-12)
    assert r == pytest.approx(3.3363, abs=5e-5)


def test_rate_zero_outside_band():
    layout = generate_grid_layout(GridLayoutConfig(), seed=1)
    from hetnetopt.topology import compute_link_gains

    gains = compute_link_gains(layout)
    band3 = band_for(layout, 3, 4)
    rule = ServingCapacityRule()
    macro = layout.macros[0].id
    small = layout.smalls[0].id
    assert rate_lzfbf(0, (macro, small), band3, layout, gains, rule) == 0.0
    assert rate_mrt(0, (macro, small), band3, layout, gains, rule) == 0.0


def test_two_bs_symmetric_cluster_quadruples_numerator():
    # equal P, beta, b: the coherent double sum is (2 amp)^2 = 4x the single-BS
    # numerator, so with a fixed interference floor the rate strictly grows
    from hetnetopt.topology import BaseStation, GainMatrix, Layout, User

    noise = 1e-13
    power_dbm = 40.0
    p = 10 ** ((power_dbm - 30) / 10)
    beta = noise / p  # P*beta = noise
    bs = [
        BaseStation(0, Tier.SMALL, (0.0, 0.0), power_dbm, 40),
        BaseStation(1, Tier.SMALL, (0.1, 0.0), power_dbm, 40),
    ]
    layout = Layout(bs, [User(0, (0.05, 0.0))], (1.0, 1.0), False, 0)
    gains = GainMatrix(np.array([[beta, beta]]), noise)
    rule = ServingCapacityRule(rho=1.0, base_small=4)
    band = band_for(layout, 3, 2)
    r_pair = rate_lzfbf(0, (0, 1), band, layout, gains, rule)
    # single-BS with the same (empty) interference floor: compute by hand
    b1 = bf_gain(40, rule.capacity(Tier.SMALL, 1))
    r_single = math.log2(1 + p * beta * b1 / noise)
    b2 = bf_gain(40, rule.capacity(Tier.SMALL, 2))
    expected_pair = math.log2(1 + 4 * p * beta * b2 / noise)
    assert r_pair == pytest.approx(expected_pair, rel=1e-12)
    assert r_pair > r_single or b2 * 4 < b1  # strictly larger unless capacity eats the gain


def test_mrt_single_bs_values():
    layout, gains = isolated_bs_layout(antennas=100, n_users=10, snr=1.0)
    band = band_for(layout, 2, 1)
    # S=10: I = (9/10) P beta -> rate = log2(1 + 10/(1+0.9))
    rule = ServingCapacityRule(rho=1.0, base_macro=10)
    r = rate_mrt(0, (0,), band, layout, gains, rule)
    assert r == pytest.approx(math.log2(1 + 10 / 1.9), rel=1e-12)
    assert r == pytest.approx(2.6469, abs=2e-4)

    # S=1 removes the intra-cluster floor entirely
    layout1, gains1 = isolated_bs_layout(antennas=100, n_users=1, snr=1.0)
    rule1 = ServingCapacityRule(rho=1.0, base_macro=1)
    r1 = rate_mrt(0, (0,), band_for(layout1, 2, 1), layout1, gains1, rule1)
    assert r1 == pytest.approx(math.log2(1 + 100.0), rel=1e-12)


def test_mrt_below_lzfbf_on_isolated_bs():
    for m, s in ((100, 10), (40, 4), (64, 8)):
        layout, gains = isolated_bs_layout(antennas=m, n_users=s, snr=1.0)
        rule = ServingCapacityRule(rho=1.0, base_macro=s)
        band = band_for(layout, 2, 1)
        assert rate_mrt(0, (0,), band, layout, gains, rule) <= rate_lzfbf(
            0, (0,), band, layout, gains, rule
        )


def test_lzfbf_monotone_in_antennas_and_interference(desk_layout, desk_gains):
    band = band_for(desk_layout, 1, 4)
    rule = ServingCapacityRule(rho=1.0)
    cluster = (desk_layout.smalls[0].id,)
    base = rate_lzfbf(0, cluster, band, desk_layout, desk_gains, rule)

    # more antennas at the serving BS -> rate does not decrease
    from dataclasses import replace

    bigger = [
        replace(b, antennas=b.antennas * 2) if b.id == cluster[0] else b
        for b in desk_layout.base_stations
    ]
    layout_big = replace(desk_layout, base_stations=bigger)
    assert rate_lzfbf(0, cluster, band, layout_big, desk_gains, rule) >= base

    # stronger interferer -> rate does not increase
    other = desk_layout.macros[0].id
    louder = [
        replace(b, power_dbm=b.power_dbm + 6) if b.id == other else b
        for b in desk_layout.base_stations
    ]
    layout_loud = replace(desk_layout, base_stations=louder)
    assert rate_lzfbf(0, cluster, band, layout_loud, desk_gains, rule) <= base


def test_rate_table_and_long_term_rate(desk_layout, desk_gains, tmp_path):
    bands = [band_for(desk_layout, 1, 2)]
    rule = ServingCapacityRule()
    cands = {
        k: enumerate_candidate_clusters(k, desk_gains, desk_layout.powers_w(), bands, top_n=4)
        for k in range(4)
    }
    table = build_rate_table(desk_layout, desk_gains, bands, cands, rule)
    c0 = cands[0][1][0]
    r0 = table.get(0, c0, 1)
    assert r0 > 0
    assert table.get(0, (999,), 1) == 0.0

    assert long_term_rate(0, {(c0, 1): 1.0}, table) == pytest.approx(r0)
    assert long_term_rate(0, {}, table) == 0.0
    c1 = cands[0][1][1]
    r1 = table.get(0, c1, 1)
    mixed = long_term_rate(0, {(c0, 1): 0.5, (c1, 1): 0.25}, table)
    assert mixed == pytest.approx(0.5 * r0 + 0.25 * r1)
    with pytest.raises(RateModelError):
        long_term_rate(0, {(c0, 1): -0.1}, table)

    path = tmp_path / "rates.csv"
    table.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "user,cluster,band,rate_bps_hz"


def test_canon_cluster():
    assert canon_cluster([3, 1, 2]) == (1, 2, 3)
    with pytest.raises(RateModelError):
        canon_cluster([1, 1])
    with pytest.raises(RateModelError):
        canon_cluster([])
