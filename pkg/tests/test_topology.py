import math

import numpy as np
import pytest

from hetnetopt.topology import (
    ChannelConfig,
    GridLayoutConfig,
    HexLayoutConfig,
    LayoutError,
    Tier,
    compute_link_gains,
    distance,
    gains_from_json,
    gains_to_json,
    generate_grid_layout,
    generate_hex_layout,
    layout_from_json,
    layout_to_json,
    path_loss_db,
)


def test_grid_layout_paper_defaults_counts():
    layout = generate_grid_layout(GridLayoutConfig(), seed=1)
    assert len(layout.macros) == 4
    assert len(layout.smalls) == 32
    # 8 white squares x 15 users + 8 hotspot squares x 90 users
    assert len(layout.users) == 840


def test_grid_layout_degenerate_single_square():
    cfg = GridLayoutConfig(
        rows=1, cols=1, hotspots=(), macro_rows=1, macro_cols=1, users_per_white=1
    )
    layout = generate_grid_layout(cfg, seed=3)
    assert len(layout.macros) == 1
    assert len(layout.smalls) == 1
    assert len(layout.users) == 1


def test_grid_layout_deterministic():
    cfg = GridLayoutConfig()
    a = generate_grid_layout(cfg, seed=11)
    b = generate_grid_layout(cfg, seed=11)
    assert a == b
    c = generate_grid_layout(cfg, seed=12)
    assert c != a


def test_grid_layout_rejects_bad_config():
    with pytest.raises(LayoutError):
        generate_grid_layout(GridLayoutConfig(rows=0), seed=1)
    with pytest.raises(LayoutError):
        generate_grid_layout(GridLayoutConfig(square_side_km=-1.0), seed=1)
    with pytest.raises(LayoutError):
        generate_grid_layout(GridLayoutConfig(hotspots=((9, 9),)), seed=1)


def test_macro_power_exceeds_small_power_at_defaults():
    layout = generate_grid_layout(GridLayoutConfig(), seed=1)
    assert min(b.power_w for b in layout.macros) > max(b.power_w for b in layout.smalls)


def test_hex_layout_paper_defaults_counts():
    layout = generate_hex_layout(HexLayoutConfig(), seed=2)
    assert len(layout.macros) == 7
    assert len(layout.smalls) == 7 * 3 * 4
    assert len(layout.users) == 7 * (3 * 120 + 60)


def test_hex_layout_degenerate():
    cfg = HexLayoutConfig(cells=1, hotspots_per_cell=0, users_per_hotspot=0, users_per_cell=60)
    layout = generate_hex_layout(cfg, seed=2)
    assert len(layout.macros) == 1
    assert len(layout.smalls) == 0
    assert len(layout.users) == 60


def test_hex_layout_deterministic():
    cfg = HexLayoutConfig()
    assert generate_hex_layout(cfg, seed=5) == generate_hex_layout(cfg, seed=5)


def test_distance_identity_and_plain():
    layout = generate_grid_layout(GridLayoutConfig(wraparound=False), seed=1)
    assert distance((0.2, 0.2), (0.2, 0.2), layout) == 0.0
    assert distance((0.0, 0.0), (0.1, 0.0), layout) == pytest.approx(0.1)


def test_wraparound_distance_uses_nearest_image():
    # 1 km x 1 km torus: points at x=0.05 and x=0.95 are 0.1 km apart
    cfg = GridLayoutConfig(rows=2, cols=2, square_side_km=0.5, users_per_hotspot=1,
                           users_per_white=1)
    layout = generate_grid_layout(cfg, seed=1)
    d = distance((0.05, 0.0), (0.95, 0.0), layout)
    # oracle: enumerate the nine images by hand
    brute = min(
        math.hypot(0.05 - (0.95 + ix), 0.0 - iy)
        for ix in (-1.0, 0.0, 1.0)
        for iy in (-1.0, 0.0, 1.0)
    )
    assert d == pytest.approx(brute) == pytest.approx(0.1)


def test_wraparound_never_exceeds_plain_distance():
    cfg = GridLayoutConfig()
    wrapped = generate_grid_layout(cfg, seed=4)
    rng = np.random.default_rng(0)
    w, h = wrapped.extent
    for _ in range(200):
        p1 = (rng.uniform(0, w), rng.uniform(0, h))
        p2 = (rng.uniform(0, w), rng.uniform(0, h))
        assert distance(p1, p2, wrapped) <= math.hypot(p1[0] - p2[0], p1[1] - p2[1]) + 1e-12


def test_path_loss_spot_values():
    assert path_loss_db(1.0, Tier.MACRO) == pytest.approx(128.1)
    assert path_loss_db(0.1, Tier.SMALL) == pytest.approx(140.7 - 36.7)


def test_link_gain_spot_values():
    cfg = GridLayoutConfig(rows=1, cols=1, hotspots=(), macro_rows=1, macro_cols=1,
                           users_per_white=1, square_side_km=2.5, wraparound=False)
    layout = generate_grid_layout(cfg, seed=1)
    gains = compute_link_gains(layout, ChannelConfig())
    macro = layout.macros[0]
    user = layout.users[0]
    d = distance(user.position, macro.position, layout)
    expected = 10 ** (-(128.1 + 37.6 * math.log10(d)) / 10)
    assert gains.beta[0, 0] == pytest.approx(expected, rel=1e-12)


def test_noise_power_from_bandwidth():
    # -174 dBm/Hz over 10 MHz -> -104 dBm
    sigma = ChannelConfig(bandwidth_hz=10e6).noise_power_w()
    assert 10 * math.log10(sigma) + 30 == pytest.approx(-104.0)


def test_gain_monotone_in_distance():
    ds = np.linspace(0.02, 10.0, 50)
    for tier in (Tier.MACRO, Tier.SMALL):
        pl = [path_loss_db(d, tier) for d in ds]
        assert np.all(np.diff(pl) > 0)


def test_macro_loss_below_small_loss_up_to_10km():
    for d in np.linspace(0.01, 10.0, 40):
        assert path_loss_db(d, Tier.MACRO) < path_loss_db(d, Tier.SMALL)


def test_min_distance_floor_clamps():
    cfg = GridLayoutConfig(rows=1, cols=1, hotspots=(), macro_rows=1, macro_cols=1,
                           users_per_white=1, square_side_km=0.001)
    layout = generate_grid_layout(cfg, seed=1)
    gains = compute_link_gains(layout, ChannelConfig(min_distance_km=0.01))
    floor_beta = 10 ** (-path_loss_db(0.01, Tier.MACRO) / 10)
    assert gains.beta[0, 0] <= floor_beta * (1 + 1e-12)


def test_layout_json_roundtrip():
    layout = generate_grid_layout(GridLayoutConfig(), seed=9)
    again = layout_from_json(layout_to_json(layout))
    assert again == layout
    # serialization is byte-stable
    assert layout_to_json(again) == layout_to_json(layout)


def test_gains_json_roundtrip(desk_layout, desk_gains):
    again = gains_from_json(gains_to_json(desk_gains))
    assert np.allclose(again.beta, desk_gains.beta, rtol=1e-12)
    assert again.noise_power == pytest.approx(desk_gains.noise_power, rel=1e-12)
