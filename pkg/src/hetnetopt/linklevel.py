"""Finite-antenna Monte Carlo validation of the closed-form cluster rates.

Draws i.i.d. Rayleigh channels, builds per-BS zero-forcing or MRT beams the
way an actual scheduler slot would (every BS precodes locally for the full
scheduling set it serves), and averages the resulting instantaneous rate. In
the massive-MIMO regime this empirical mean converges to the closed forms in
`rates`, which is what the acceptance suite checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rates import BandSpec, ServingCapacityRule, canon_cluster
from .topology import GainMatrix, Layout


class OracleError(ValueError):
    """The co-scheduled sets cannot be built (not enough users, bad precoder)."""


def build_serving_sets(
    user: int,
    cluster,
    band: BandSpec,
    gains: GainMatrix,
    layout: Layout,
    rule: ServingCapacityRule,
) -> dict[int, tuple[int, ...]]:
    """Fill every active BS's scheduling set to exactly S_j(|C|) users: the
    target user plus its nearest (largest-gain) neighbors at cluster BSs, the
    nearest non-target users at interfering BSs."""
    c = canon_cluster(cluster)
    if not set(c) <= band.active_bs:
        raise OracleError("cluster not inside the band's active set")
    L = len(c)
    tiers = {b.id: b.tier for b in layout.base_stations}
    n_users = gains.beta.shape[0]
    sets: dict[int, tuple[int, ...]] = {}
    for j in sorted(band.active_bs):
        s_j = rule.capacity(tiers[j], L)
        others = sorted(
            (u for u in range(n_users) if u != user),
            key=lambda u: (-gains.beta[u, j], u),
        )
        if j in c:
            need = s_j - 1
            if len(others) < need:
                raise OracleError(
                    f"BS {j} needs {need} co-scheduled users but only {len(others)} exist"
                )
            sets[j] = tuple([user] + others[:need])
        else:
            if len(others) < s_j:
                raise OracleError(
                    f"interfering BS {j} needs {s_j} users but only {len(others)} exist"
                )
            sets[j] = tuple(others[:s_j])
    return sets


@dataclass
class MonteCarloChannel:
    """One fading draw: per-BS channel matrices, target-user links and beams."""

    serving_sets: dict[int, tuple[int, ...]]
    channels: dict[int, np.ndarray]  # BS -> G_j, (M_j, S_j)
    target_links: dict[int, np.ndarray]  # BS -> g_kj, (M_j,)
    precoders: dict[int, np.ndarray]  # BS -> F_j, (M_j, S_j), unit-norm beams


def _rayleigh(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    return (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / math.sqrt(2.0)


def zf_precoder(g: np.ndarray) -> np.ndarray:
    """F = G (G^H G)^-1 A^(1/2); the diagonal normalizer A makes every beam
    unit-norm while keeping G^H F diagonal."""
    gram = g.conj().T @ g
    inv = np.linalg.inv(gram)
    a = 1.0 / np.real(np.diag(inv))
    return g @ inv @ np.diag(np.sqrt(a))


def mrt_precoder(g: np.ndarray) -> np.ndarray:
    return g / np.linalg.norm(g, axis=0, keepdims=True)


_PRECODERS = {"lzfbf": zf_precoder, "mrt": mrt_precoder}


def draw_channel(
    user: int,
    serving_sets: dict[int, tuple[int, ...]],
    layout: Layout,
    gains: GainMatrix,
    precoder: str,
    rng: np.random.Generator,
    max_redraws: int = 100,
) -> MonteCarloChannel:
    if precoder not in _PRECODERS:
        raise OracleError(f"unknown precoder {precoder!r}")
    make_beams = _PRECODERS[precoder]
    antennas = {b.id: b.antennas for b in layout.base_stations}
    channels: dict[int, np.ndarray] = {}
    targets: dict[int, np.ndarray] = {}
    beams: dict[int, np.ndarray] = {}
    for j, served in serving_sets.items():
        m = antennas[j]
        for _ in range(max_redraws):
            h = _rayleigh(rng, m, len(served))
            g = h * np.sqrt(gains.beta[list(served), j])[None, :]
            try:
                f = make_beams(g)
            except np.linalg.LinAlgError:
                continue  # singular Gram matrix: probability-zero event, redraw
            if np.all(np.isfinite(f)):
                break
        else:
            raise OracleError(f"could not draw a nonsingular channel at BS {j}")
        channels[j] = g
        beams[j] = f
        if user in served:
            targets[j] = g[:, served.index(user)]
        else:
            targets[j] = _rayleigh(rng, m, 1)[:, 0] * math.sqrt(gains.beta[user, j])
    return MonteCarloChannel(dict(serving_sets), channels, targets, beams)


def instant_rate(
    chan: MonteCarloChannel,
    user: int,
    cluster,
    layout: Layout,
    gains: GainMatrix,
    rule: ServingCapacityRule,
) -> tuple[float, float, float]:
    """(rate, signal power, intra-cluster interference power) of one draw, with
    equal per-user power P_j / S_j(|C|) and symbols grouped per co-scheduled
    user so joint transmissions add coherently."""
    c = canon_cluster(cluster)
    powers = {b.id: b.power_w for b in layout.base_stations}
    tiers = {b.id: b.tier for b in layout.base_stations}
    L = len(c)
    amp: dict[int, complex] = {}
    amp_from_cluster: dict[int, complex] = {}
    for j, served in chan.serving_sets.items():
        scale = math.sqrt(powers[j] / rule.capacity(tiers[j], L))
        coeffs = scale * (chan.target_links[j].conj() @ chan.precoders[j])
        for idx, u in enumerate(served):
            amp[u] = amp.get(u, 0.0) + coeffs[idx]
            if j in c:
                amp_from_cluster[u] = amp_from_cluster.get(u, 0.0) + coeffs[idx]
    signal = abs(amp.get(user, 0.0)) ** 2
    interference = sum(abs(a) ** 2 for u, a in amp.items() if u != user)
    intra = sum(abs(a) ** 2 for u, a in amp_from_cluster.items() if u != user)
    sinr = signal / (gains.noise_power + interference)
    return math.log2(1.0 + sinr), signal, intra


def monte_carlo_rate_oracle(
    user: int,
    cluster,
    band: BandSpec,
    layout: Layout,
    gains: GainMatrix,
    rule: ServingCapacityRule,
    precoder: str = "lzfbf",
    trials: int = 2000,
    seed: int = 0,
) -> float:
    """Empirical mean rate of `trials` i.i.d. Rayleigh draws."""
    if trials < 1:
        raise OracleError("trials must be >= 1")
    sets = build_serving_sets(user, cluster, band, gains, layout, rule)
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(trials):
        chan = draw_channel(user, sets, layout, gains, precoder, rng)
        rate, _, _ = instant_rate(chan, user, cluster, layout, gains, rule)
        total += rate
    return total / trials
