import math

import numpy as np
import pytest

from hetnetopt.topology import (
    BaseStation,
    ChannelConfig,
    GainMatrix,
    GridLayoutConfig,
    Layout,
    Tier,
    User,
    compute_link_gains,
    generate_grid_layout,
)


@pytest.fixture(scope="session")
def desk_layout():
    """Small 2-macro / 8-small / 120-user drop used across solver tests."""
    cfg = GridLayoutConfig(
        rows=2,
        cols=2,
        hotspots=((0, 1), (1, 0)),
        macro_rows=1,
        macro_cols=2,
        users_per_white=15,
        users_per_hotspot=45,
    )
    return generate_grid_layout(cfg, seed=7)


@pytest.fixture(scope="session")
def desk_gains(desk_layout):
    return compute_link_gains(desk_layout, ChannelConfig())


def isolated_bs_layout(antennas: int, n_users: int, snr: float = 1.0,
                       tier: Tier = Tier.MACRO) -> tuple[Layout, GainMatrix]:
    """Single BS with `n_users` co-located users at per-BS SNR P*beta/sigma^2
    equal to `snr`; used by the rate-model validation tests."""
    power_dbm = 40.0
    noise = 1e-13
    beta = snr * noise / (10 ** ((power_dbm - 30) / 10))
    bs = BaseStation(0, tier, (0.0, 0.0), power_dbm, antennas)
    users = [User(k, (0.0, 0.0)) for k in range(n_users)]
    layout = Layout([bs], users, (1.0, 1.0), False, seed=0)
    gains = GainMatrix(np.full((n_users, 1), beta), noise)
    return layout, gains
