"""Network geometry: layout generation, distances and slow-fading link gains.

Two layout families are supported: a square-grid deployment with hotspot
squares (wrap-around torus) and a 7-cell hexagonal deployment with hotspot
discs. All randomness is drawn from named, per-entity-class RNG streams so a
(config, seed) pair regenerates a bit-identical layout.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

MACRO_PATHLOSS_DB = (128.1, 37.6)  # a + b*log10(d_km)
SMALL_PATHLOSS_DB = (140.7, 36.7)


class Tier(str, Enum):
    MACRO = "macro"
    SMALL = "small"


class LayoutError(ValueError):
    """Invalid layout configuration or malformed layout data."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


def named_rng(seed: int, label: str) -> np.random.Generator:
    """Independent, reproducible stream for one entity class ("smalls", ...)."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(label.encode())]))


@dataclass(frozen=True)
class BaseStation:
    id: int
    tier: Tier
    position: tuple[float, float]  # km
    power_dbm: float
    antennas: int

    @property
    def power_w(self) -> float:
        return dbm_to_watts(self.power_dbm)


@dataclass(frozen=True)
class User:
    id: int
    position: tuple[float, float]  # km


@dataclass
class Layout:
    base_stations: list[BaseStation]
    users: list[User]
    extent: tuple[float, float]  # width, height in km
    wraparound: bool
    seed: int

    def __post_init__(self) -> None:
        bs_ids = [b.id for b in self.base_stations]
        if len(set(bs_ids)) != len(bs_ids):
            raise LayoutError("duplicate base-station ids")
        ue_ids = [u.id for u in self.users]
        if len(set(ue_ids)) != len(ue_ids):
            raise LayoutError("duplicate user ids")
        for b in self.base_stations:
            if b.antennas < 1:
                raise LayoutError(f"BS {b.id} has antennas < 1")
        w, h = self.extent
        for u in self.users:
            if not (-1e-9 <= u.position[0] <= w + 1e-9 and -1e-9 <= u.position[1] <= h + 1e-9):
                raise LayoutError(f"user {u.id} outside extent")

    @property
    def macros(self) -> list[BaseStation]:
        return [b for b in self.base_stations if b.tier is Tier.MACRO]

    @property
    def smalls(self) -> list[BaseStation]:
        return [b for b in self.base_stations if b.tier is Tier.SMALL]

    def powers_w(self) -> np.ndarray:
        return np.array([b.power_w for b in self.base_stations])

    def antennas(self) -> np.ndarray:
        return np.array([b.antennas for b in self.base_stations])


@dataclass
class GainMatrix:
    beta: np.ndarray  # (K, J) linear power gains
    noise_power: float  # watts

    def __post_init__(self) -> None:
        self.beta = np.asarray(self.beta, dtype=float)
        if not np.all(np.isfinite(self.beta)) or np.any(self.beta <= 0):
            raise LayoutError("every link gain must be finite and > 0")
        if not (self.noise_power > 0 and math.isfinite(self.noise_power)):
            raise LayoutError("noise power must be finite and > 0")


def _default_hotspots(rows: int, cols: int) -> tuple[tuple[int, int], ...]:
    # checkerboard pattern: half the squares are hotspots
    return tuple((r, c) for r in range(rows) for c in range(cols) if (r + c) % 2 == 1)


@dataclass(frozen=True)
class GridLayoutConfig:
    """Square-grid deployment. Defaults give 4 macros / 32 smalls / 840 users."""

    rows: int = 4
    cols: int = 4
    square_side_km: float = 0.1  # non-paper default
    hotspots: tuple[tuple[int, int], ...] | None = None  # None -> checkerboard
    macro_rows: int = 2
    macro_cols: int = 2
    smalls_per_hotspot: int = 3
    users_per_white: int = 15
    users_per_hotspot: int = 90
    macro_power_dbm: float = 46.0
    small_power_dbm: float = 35.0
    macro_antennas: int = 100
    small_antennas: int = 40
    wraparound: bool = True

    def hotspot_squares(self) -> tuple[tuple[int, int], ...]:
        if self.hotspots is None:
            return _default_hotspots(self.rows, self.cols)
        return self.hotspots

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise LayoutError("grid must have at least one square")
        if self.square_side_km <= 0:
            raise LayoutError("square side must be positive")
        if self.macro_rows < 1 or self.macro_cols < 1:
            raise LayoutError("macro grid must be at least 1x1")
        if self.smalls_per_hotspot < 1:
            raise LayoutError("hotspots need at least one small cell")
        if self.users_per_white < 0 or self.users_per_hotspot < 0:
            raise LayoutError("user counts must be nonnegative")
        if self.macro_antennas < 1 or self.small_antennas < 1:
            raise LayoutError("antenna counts must be >= 1")
        for r, c in self.hotspot_squares():
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise LayoutError(f"hotspot square {(r, c)} outside grid")


def generate_grid_layout(cfg: GridLayoutConfig, seed: int) -> Layout:
    """One small BS centered in each white square, 3 uniform per hotspot square;
    users dropped uniformly per square. Deterministic given (cfg, seed)."""
    cfg.validate()
    side = cfg.square_side_km
    extent = (cfg.cols * side, cfg.rows * side)
    hotspots = set(cfg.hotspot_squares())

    rng_smalls = named_rng(seed, "grid.smalls")
    rng_users = named_rng(seed, "grid.users")

    stations: list[BaseStation] = []
    bs_id = 0
    macro_w = extent[0] / cfg.macro_cols
    macro_h = extent[1] / cfg.macro_rows
    for mr in range(cfg.macro_rows):
        for mc in range(cfg.macro_cols):
            pos = ((mc + 0.5) * macro_w, (mr + 0.5) * macro_h)
            stations.append(
                BaseStation(bs_id, Tier.MACRO, pos, cfg.macro_power_dbm, cfg.macro_antennas)
            )
            bs_id += 1

    def square_origin(r: int, c: int) -> tuple[float, float]:
        return (c * side, r * side)

    for r in range(cfg.rows):
        for c in range(cfg.cols):
            x0, y0 = square_origin(r, c)
            if (r, c) in hotspots:
                for _ in range(cfg.smalls_per_hotspot):
                    pos = (x0 + rng_smalls.uniform(0, side), y0 + rng_smalls.uniform(0, side))
                    stations.append(
                        BaseStation(bs_id, Tier.SMALL, pos, cfg.small_power_dbm, cfg.small_antennas)
                    )
                    bs_id += 1
            else:
                pos = (x0 + side / 2, y0 + side / 2)
                stations.append(
                    BaseStation(bs_id, Tier.SMALL, pos, cfg.small_power_dbm, cfg.small_antennas)
                )
                bs_id += 1

    users: list[User] = []
    ue_id = 0
    for r in range(cfg.rows):
        for c in range(cfg.cols):
            x0, y0 = square_origin(r, c)
            count = cfg.users_per_hotspot if (r, c) in hotspots else cfg.users_per_white
            for _ in range(count):
                pos = (x0 + rng_users.uniform(0, side), y0 + rng_users.uniform(0, side))
                users.append(User(ue_id, pos))
                ue_id += 1

    return Layout(stations, users, extent, cfg.wraparound, seed)


@dataclass(frozen=True)
class HexLayoutConfig:
    """7-cell hexagonal deployment with hotspot discs (3GPP-style conventions)."""

    cells: int = 7
    hotspots_per_cell: int = 3
    smalls_per_hotspot: int = 4
    users_per_hotspot: int = 120
    users_per_cell: int = 60
    isd_km: float = 0.5  # non-paper default
    hotspot_radius_km: float = 0.04  # non-paper default
    macro_power_dbm: float = 46.0
    small_power_dbm: float = 35.0
    macro_antennas: int = 100
    small_antennas: int = 40

    def validate(self) -> None:
        if self.cells < 1 or self.cells > 7:
            raise LayoutError("cells must be in 1..7 (center plus first ring)")
        if self.hotspots_per_cell < 0 or self.smalls_per_hotspot < 1:
            raise LayoutError("invalid hotspot configuration")
        if self.users_per_hotspot < 0 or self.users_per_cell < 0:
            raise LayoutError("user counts must be nonnegative")
        if self.isd_km <= 0 or self.hotspot_radius_km <= 0:
            raise LayoutError("distances must be positive")
        if 2 * self.hotspot_radius_km >= self.isd_km / 2:
            raise LayoutError("hotspot radius too large for the inter-site distance")


def _uniform_in_disc(rng: np.random.Generator, center: tuple[float, float], radius: float
                     ) -> tuple[float, float]:
    r = radius * math.sqrt(rng.uniform())
    phi = rng.uniform(0, 2 * math.pi)
    return (center[0] + r * math.cos(phi), center[1] + r * math.sin(phi))


def _point_in_hex(p: tuple[float, float], center: tuple[float, float], circumradius: float) -> bool:
    # flat-top hexagon with vertices at distance R: |y| <= sqrt(3)/2 R and
    # sqrt(3)|x| + |y| <= sqrt(3) R
    dx = abs(p[0] - center[0])
    dy = abs(p[1] - center[1])
    r = circumradius
    return dy <= math.sqrt(3) / 2 * r and math.sqrt(3) * dx + dy <= math.sqrt(3) * r


def _uniform_in_hex(rng: np.random.Generator, center: tuple[float, float], circumradius: float
                    ) -> tuple[float, float]:
    while True:
        x = rng.uniform(-circumradius, circumradius)
        y = rng.uniform(-circumradius, circumradius)
        if _point_in_hex((center[0] + x, center[1] + y), center, circumradius):
            return (center[0] + x, center[1] + y)


def generate_hex_layout(cfg: HexLayoutConfig, seed: int) -> Layout:
    """Center cell plus first ring; hotspot discs uniform in each cell.
    Deterministic given (cfg, seed)."""
    cfg.validate()
    isd = cfg.isd_km
    circumradius = isd / math.sqrt(3)
    centers = [(0.0, 0.0)]
    for k in range(6):
        ang = math.pi / 6 + k * math.pi / 3
        centers.append((isd * math.cos(ang), isd * math.sin(ang)))
    centers = centers[: cfg.cells]

    rng_hot = named_rng(seed, "hex.hotspots")
    rng_smalls = named_rng(seed, "hex.smalls")
    rng_users = named_rng(seed, "hex.users")

    stations: list[BaseStation] = []
    bs_id = 0
    for c in centers:
        stations.append(BaseStation(bs_id, Tier.MACRO, c, cfg.macro_power_dbm, cfg.macro_antennas))
        bs_id += 1

    hotspot_centers: list[tuple[float, float]] = []
    for c in centers:
        for _ in range(cfg.hotspots_per_cell):
            hc = _uniform_in_disc(rng_hot, c, isd / 2 - cfg.hotspot_radius_km)
            hotspot_centers.append(hc)
            for _ in range(cfg.smalls_per_hotspot):
                pos = _uniform_in_disc(rng_smalls, hc, cfg.hotspot_radius_km)
                stations.append(
                    BaseStation(bs_id, Tier.SMALL, pos, cfg.small_power_dbm, cfg.small_antennas)
                )
                bs_id += 1

    users: list[User] = []
    ue_id = 0
    hi = 0
    for c in centers:
        for _ in range(cfg.hotspots_per_cell):
            hc = hotspot_centers[hi]
            hi += 1
            for _ in range(cfg.users_per_hotspot):
                users.append(User(ue_id, _uniform_in_disc(rng_users, hc, cfg.hotspot_radius_km)))
                ue_id += 1
        for _ in range(cfg.users_per_cell):
            users.append(User(ue_id, _uniform_in_hex(rng_users, c, circumradius)))
            ue_id += 1

    xs = [p[0] for p in [b.position for b in stations] + [u.position for u in users]]
    ys = [p[1] for p in [b.position for b in stations] + [u.position for u in users]]
    margin = 1e-6
    shift = (min(xs) - margin, min(ys) - margin)
    extent = (max(xs) - shift[0] + margin, max(ys) - shift[1] + margin)

    def shifted(p: tuple[float, float]) -> tuple[float, float]:
        return (p[0] - shift[0], p[1] - shift[1])

    stations = [replace(b, position=shifted(b.position)) for b in stations]
    users = [replace(u, position=shifted(u.position)) for u in users]
    return Layout(stations, users, extent, False, seed)


def distance(p1: tuple[float, float], p2: tuple[float, float], layout: Layout) -> float:
    """Euclidean distance in km; under wrap-around, the minimum over the nine
    translated images of p2."""
    dx = p1[0] - p2[0]
    dy = p1[1] - p2[1]
    if not layout.wraparound:
        return math.hypot(dx, dy)
    w, h = layout.extent
    best = math.inf
    for ix in (-1, 0, 1):
        for iy in (-1, 0, 1):
            best = min(best, math.hypot(dx + ix * w, dy + iy * h))
    return best


def path_loss_db(d_km: float, tier: Tier) -> float:
    a, b = MACRO_PATHLOSS_DB if tier is Tier.MACRO else SMALL_PATHLOSS_DB
    return a + b * math.log10(d_km)


@dataclass(frozen=True)
class ChannelConfig:
    bandwidth_hz: float = 10e6  # non-paper default; rates are in bit/s/Hz
    noise_psd_dbm_hz: float = -174.0
    min_distance_km: float = 0.01  # floor to avoid singular path loss
    shadowing_sigma_db: float = 0.0  # log-normal hook, off by default

    def noise_power_w(self) -> float:
        return dbm_to_watts(self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz))


def compute_link_gains(layout: Layout, cfg: ChannelConfig = ChannelConfig()) -> GainMatrix:
    """beta_kj = 10^(-PL/10) with the per-tier path-loss models; distances below
    the floor are clamped, never an error."""
    K, J = len(layout.users), len(layout.base_stations)
    beta = np.empty((K, J))
    shadow = None
    if cfg.shadowing_sigma_db > 0:
        shadow = named_rng(layout.seed, "channel.shadowing").normal(
            0.0, cfg.shadowing_sigma_db, size=(K, J)
        )
    for k, u in enumerate(layout.users):
        for j, b in enumerate(layout.base_stations):
            d = max(distance(u.position, b.position, layout), cfg.min_distance_km)
            pl = path_loss_db(d, b.tier)
            if shadow is not None:
                pl += shadow[k, j]
            beta[k, j] = 10.0 ** (-pl / 10.0)
    return GainMatrix(beta, cfg.noise_power_w())


# ---------------------------------------------------------------------------
# JSON round-trip (ids, positions in km, powers in dBm, beta in dB)

def layout_to_json(layout: Layout) -> str:
    doc = {
        "base_stations": [
            {
                "id": b.id,
                "tier": b.tier.value,
                "position_km": list(b.position),
                "power_dbm": b.power_dbm,
                "antennas": b.antennas,
            }
            for b in layout.base_stations
        ],
        "users": [{"id": u.id, "position_km": list(u.position)} for u in layout.users],
        "extent_km": list(layout.extent),
        "wraparound": layout.wraparound,
        "seed": layout.seed,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def layout_from_json(text: str) -> Layout:
    doc = json.loads(text)
    stations = [
        BaseStation(
            b["id"], Tier(b["tier"]), tuple(b["position_km"]), b["power_dbm"], b["antennas"]
        )
        for b in doc["base_stations"]
    ]
    users = [User(u["id"], tuple(u["position_km"])) for u in doc["users"]]
    return Layout(stations, users, tuple(doc["extent_km"]), doc["wraparound"], doc["seed"])


def gains_to_json(gains: GainMatrix) -> str:
    doc = {
        "beta_db": (10.0 * np.log10(gains.beta)).tolist(),
        "noise_power_dbm": watts_to_dbm(gains.noise_power),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def gains_from_json(text: str) -> GainMatrix:
    doc = json.loads(text)
    beta = 10.0 ** (np.asarray(doc["beta_db"]) / 10.0)
    return GainMatrix(beta, dbm_to_watts(doc["noise_power_dbm"]))
