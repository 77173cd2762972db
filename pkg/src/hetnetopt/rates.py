"""Operation bands, candidate BS clusters and closed-form cluster rates.

Bands partition resource blocks by which tier may transmit: band 1 is shared
(all BSs), band 2 is macro-only, band 3 mutes the macros (blanking). A cluster
is a set of BSs jointly transmitting the same stream to a user with local
precoding; its instantaneous rate hardens to a closed form in the massive-MIMO
regime, so rates can be tabulated once and reused by the allocator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .topology import GainMatrix, Layout, Tier

SHARED, MACRO_ONLY, BLANKING = 1, 2, 3

Cluster = tuple[int, ...]  # canonical: sorted BS ids, used as map key


class RateModelError(ValueError):
    """Violated precondition of the rate model (e.g. scheduling set > antennas)."""


def canon_cluster(members) -> Cluster:
    c = tuple(sorted(int(j) for j in members))
    if not c or len(set(c)) != len(c):
        raise RateModelError("cluster must be a nonempty set of distinct BS ids")
    return c


@dataclass(frozen=True)
class BandSpec:
    band_id: int  # 1 shared, 2 macro-only, 3 blanking
    active_bs: frozenset[int]
    l_max: int
    mu_fixed: float | None = None  # None: band fraction is optimized

    def __post_init__(self) -> None:
        if self.band_id not in (SHARED, MACRO_ONLY, BLANKING):
            raise RateModelError(f"unknown band id {self.band_id}")
        if self.l_max < 1:
            raise RateModelError("l_max must be >= 1")
        if self.mu_fixed is not None and not (0.0 <= self.mu_fixed <= 1.0):
            raise RateModelError("fixed band fraction must lie in [0, 1]")


def band_for(layout: Layout, band_id: int, l_max: int, mu_fixed: float | None = None) -> BandSpec:
    """Band with the tier-correct active set for this layout."""
    if band_id == SHARED:
        active = frozenset(b.id for b in layout.base_stations)
    elif band_id == MACRO_ONLY:
        active = frozenset(b.id for b in layout.macros)
    else:
        active = frozenset(b.id for b in layout.smalls)
    if not active:
        raise RateModelError(f"band {band_id} has no active BSs in this layout")
    return BandSpec(band_id, active, l_max, mu_fixed)


@dataclass(frozen=True)
class ServingCapacityRule:
    """Per-BS scheduling-set sizes S_j(L) = max{floor(S_j * rho * L), S_j}."""

    rho: float = 1.0
    base_macro: int = 10
    base_small: int = 4

    def __post_init__(self) -> None:
        if not (0.0 <= self.rho <= 1.0):
            raise RateModelError("rho must lie in [0, 1]")
        if self.base_macro < 1 or self.base_small < 1:
            raise RateModelError("base scheduling-set sizes must be >= 1")

    def base(self, tier: Tier) -> int:
        return self.base_macro if tier is Tier.MACRO else self.base_small

    def capacity(self, tier: Tier, cluster_size: int) -> int:
        if cluster_size < 1:
            raise RateModelError("cluster size must be >= 1")
        s = self.base(tier)
        return max(int(math.floor(s * self.rho * cluster_size + 1e-9)), s)


def capacity(bs, cluster_size: int, rule: ServingCapacityRule) -> int:
    """Scheduling-set size of `bs` when it operates in size-L clusters.
    Always satisfies S_j <= S_j(L) <= L * S_j."""
    return rule.capacity(bs.tier, cluster_size)


def bf_gain(antennas: int, scheduled: int) -> float:
    """Beamforming coefficient (M - S + 1) / S of the zero-forcing rate model."""
    if scheduled < 1:
        raise RateModelError("scheduled count must be >= 1")
    if scheduled > antennas:
        raise RateModelError(
            f"scheduling set ({scheduled}) exceeds antennas ({antennas}): "
            "outside the massive-MIMO regime"
        )
    return (antennas - scheduled + 1) / scheduled


def enumerate_candidate_clusters(
    user: int,
    gains: GainMatrix,
    powers_w: np.ndarray,
    bands: list[BandSpec],
    top_n: int = 8,
) -> dict[int, list[Cluster]]:
    """Per band, all subsets (size <= l_max) of the user's top_n BSs by received
    power, restricted to the band's active set. Ties broken by ascending BS id."""
    if top_n < 1:
        raise RateModelError("top_n must be >= 1")
    rx = powers_w * gains.beta[user]
    order = sorted(range(len(rx)), key=lambda j: (-rx[j], j))
    top = order[:top_n]
    out: dict[int, list[Cluster]] = {}
    for band in bands:
        members = sorted(j for j in top if j in band.active_bs)
        clusters: list[Cluster] = []
        for size in range(1, min(band.l_max, len(members)) + 1):
            clusters.extend(tuple(c) for c in combinations(members, size))
        out[band.band_id] = clusters
    return out


def _bs_views(layout: Layout) -> tuple[np.ndarray, np.ndarray, list[Tier]]:
    return layout.powers_w(), layout.antennas(), [b.tier for b in layout.base_stations]


def rate_lzfbf(
    user: int,
    cluster,
    band: BandSpec,
    layout: Layout,
    gains: GainMatrix,
    rule: ServingCapacityRule,
) -> float:
    """Closed-form instantaneous rate (bit/s/Hz) under zero-forcing with local
    precoding; 0 when the cluster is not inside the band's active set."""
    c = canon_cluster(cluster)
    if not set(c) <= band.active_bs:
        return 0.0
    powers, antennas, tiers = _bs_views(layout)
    beta = gains.beta[user]
    L = len(c)
    amp = 0.0
    for j in c:
        s_j = rule.capacity(tiers[j], L)
        amp += math.sqrt(powers[j] * beta[j] * bf_gain(int(antennas[j]), s_j))
    inter = sum(powers[l] * beta[l] for l in band.active_bs if l not in c)
    return math.log2(1.0 + amp * amp / (gains.noise_power + inter))


def rate_mrt(
    user: int,
    cluster,
    band: BandSpec,
    layout: Layout,
    gains: GainMatrix,
    rule: ServingCapacityRule,
) -> float:
    """Closed-form instantaneous rate (bit/s/Hz) under maximum ratio transmission,
    including the residual intra-cluster interference floor."""
    c = canon_cluster(cluster)
    if not set(c) <= band.active_bs:
        return 0.0
    powers, antennas, tiers = _bs_views(layout)
    beta = gains.beta[user]
    L = len(c)
    amp = 0.0
    intra = 0.0
    for j in c:
        s_j = rule.capacity(tiers[j], L)
        if s_j > antennas[j]:
            raise RateModelError(
                f"scheduling set ({s_j}) exceeds antennas ({antennas[j]}) at BS {j}"
            )
        amp += math.sqrt(powers[j] * antennas[j] * beta[j] / s_j)
        intra += (s_j - 1) / s_j * powers[j] * beta[j]
    inter = sum(powers[l] * beta[l] for l in band.active_bs if l not in c)
    return math.log2(1.0 + amp * amp / (gains.noise_power + intra + inter))


RATE_FUNCTIONS = {"lzfbf": rate_lzfbf, "mrt": rate_mrt}


@dataclass
class RateTable:
    """Memoized rates keyed by (user, canonical cluster, band id)."""

    entries: dict[tuple[int, Cluster, int], float]
    precoder: str = "lzfbf"

    def get(self, user: int, cluster, band_id: int) -> float:
        return self.entries.get((user, canon_cluster(cluster), band_id), 0.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "cluster", "band", "rate_bps_hz"])
            for (k, c, a), r in sorted(self.entries.items()):
                w.writerow([k, "-".join(str(j) for j in c), a, repr(r)])


def build_rate_table(
    layout: Layout,
    gains: GainMatrix,
    bands: list[BandSpec],
    candidates: dict[int, dict[int, list[Cluster]]],
    rule: ServingCapacityRule,
    precoder: str = "lzfbf",
) -> RateTable:
    """Tabulate the closed-form rate of every candidate (user, cluster, band)."""
    if precoder not in RATE_FUNCTIONS:
        raise RateModelError(f"unknown precoder {precoder!r}")
    fn = RATE_FUNCTIONS[precoder]
    band_by_id = {b.band_id: b for b in bands}
    entries: dict[tuple[int, Cluster, int], float] = {}
    for user, per_band in candidates.items():
        for band_id, clusters in per_band.items():
            band = band_by_id[band_id]
            for c in clusters:
                entries[(user, c, band_id)] = fn(user, c, band, layout, gains, rule)
    return RateTable(entries, precoder)


def long_term_rate(user: int, fractions: dict[tuple[Cluster, int], float], table: RateTable
                   ) -> float:
    """R_k = sum over (cluster, band) of activity fraction times tabulated rate."""
    total = 0.0
    for (cluster, band_id), x in fractions.items():
        if x < 0:
            raise RateModelError("activity fractions must be nonnegative")
        total += x * table.get(user, cluster, band_id)
    return total
