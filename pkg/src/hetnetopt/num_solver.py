"""Network-utility-maximization solver for cluster activity fractions.

The allocation problem maximizes sum-log long-term rates over per-user
activity fractions x, per-subband RB shares lambda and per-band shares mu,
subject to per-BS scheduling capacity, per-user service, and band-budget
constraints. It is solved by a projected dual subgradient method (the per-user
activity update has a closed form, the band allocation step is a trivial LP)
followed by a reduced LP that recovers an exact-feasibility primal point from
the near-optimal duals.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import lp
from .rates import (
    BandSpec,
    Cluster,
    RateTable,
    ServingCapacityRule,
    band_for,
    build_rate_table,
    canon_cluster,
    enumerate_candidate_clusters,
)
from .topology import GainMatrix, Layout


class SolverError(RuntimeError):
    """Base class for allocation-solver failures."""


class ProblemError(ValueError):
    """Ill-posed problem instance (scenario mismatch, unreachable user, ...)."""


class ConvergenceError(SolverError):
    """Duals too far from optimal to read rates off the KKT conditions."""


class PrimalRecoveryError(SolverError):
    """The reduced recovery LP could not produce a consistent primal point."""


SCENARIOS = {
    "shared": (1,),
    "orthogonal": (2, 3),
    "blanking": (1, 3),
}
DEFAULT_L_MAX = {1: 4, 2: 1, 3: 4}
DEFAULT_MU_FIXED = {"orthogonal": {2: 0.2, 3: 0.8}}


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 2000
    step_a: float = 1.0  # stepsize delta(n) = a / (n + b)
    step_b: float = 10.0
    move_tol: float = 1e-5  # stop when the dual iterate stops moving
    support_eps: float = 1e-4  # relative tolerance for near-maximizing clusters
    seed: int = 0  # tie-breaking stream for the band allocation step
    polish: bool = True  # refine the duals on the identified support
    polish_width: float = 0.1  # initial support: within 10% of the best ratio
    polish_cap: int = 4  # at most this many seeds per user; pricing adds the rest
    polish_price_tol: float = 1e-6  # relative pricing slack before a column enters

    def __post_init__(self) -> None:
        if self.step_a <= 0 or self.step_b < 0:
            raise ProblemError("stepsize requires a > 0 and b >= 0")
        if self.max_iterations < 1:
            raise ProblemError("need at least one iteration")


@dataclass
class NumProblem:
    n_users: int
    bands: list[BandSpec]
    candidates: dict[int, dict[int, list[Cluster]]]  # user -> band -> clusters
    rates: RateTable
    capacities: dict[tuple[int, int], int]  # (bs, cluster size) -> S_j(L)
    n_bs: int

    def __post_init__(self) -> None:
        self._prep = None

    def subbands(self) -> list[tuple[int, int]]:
        out = []
        for band in sorted(self.bands, key=lambda b: b.band_id):
            out.extend((band.band_id, L) for L in range(1, band.l_max + 1))
        return out

    def band(self, band_id: int) -> BandSpec:
        for b in self.bands:
            if b.band_id == band_id:
                return b
        raise ProblemError(f"no band {band_id} in this problem")

    def capacity(self, bs: int, size: int) -> int:
        return self.capacities[(bs, size)]

    def prepared(self) -> "_Prepared":
        if self._prep is None:
            self._prep = _Prepared(self)
        return self._prep


class _Prepared:
    """Flat candidate arrays for the vectorized dual iteration.

    Candidates are sorted by (user, -rate, cluster, band) so that every
    per-user argmax resolves ties toward the larger rate, then the
    lexicographically first cluster.
    """

    def __init__(self, problem: NumProblem):
        self.problem = problem
        self.sb_list = problem.subbands()
        self.sb_index = {sb: i for i, sb in enumerate(self.sb_list)}
        self.n_sb = len(self.sb_list)
        self.n_bs = problem.n_bs
        self.n_users = problem.n_users

        rows = []
        for user in range(problem.n_users):
            per_band = problem.candidates.get(user, {})
            for band_id, clusters in per_band.items():
                for c in clusters:
                    r = problem.rates.get(user, c, band_id)
                    rows.append((user, -r, c, band_id))
        if not rows:
            raise ProblemError("problem has no candidate clusters")
        rows.sort()

        self.n_cand = len(rows)
        self.cand_user = np.array([r[0] for r in rows], dtype=np.int64)
        self.cand_rate = np.array([-r[1] for r in rows])
        self.cand_members = [r[2] for r in rows]
        self.cand_sb = np.array(
            [self.sb_index[(r[3], len(r[2]))] for r in rows], dtype=np.int64
        )

        present = np.unique(self.cand_user)
        if present.size != problem.n_users:
            missing = sorted(set(range(problem.n_users)) - set(present.tolist()))
            raise ProblemError(f"users {missing[:5]} have no candidate clusters")
        pos_rate = np.zeros(problem.n_users, dtype=bool)
        np.logical_or.at(pos_rate, self.cand_user, self.cand_rate > 0)
        if not np.all(pos_rate):
            bad = np.flatnonzero(~pos_rate)[:5].tolist()
            raise ProblemError(f"users {bad} have no positive-rate candidate")

        self.seg_starts = np.searchsorted(self.cand_user, np.arange(problem.n_users))

        mem_cand, mem_slot, mem_w = [], [], []
        for i, (user, _, members, band_id) in enumerate(rows):
            sb = self.cand_sb[i]
            L = len(members)
            for j in members:
                mem_cand.append(i)
                mem_slot.append(sb * self.n_bs + j)
                mem_w.append(1.0 / problem.capacity(j, L))
        self.mem_cand = np.array(mem_cand, dtype=np.int64)
        self.mem_slot = np.array(mem_slot, dtype=np.int64)
        self.mem_w = np.array(mem_w)

        self.nu_mask = np.zeros((self.n_sb, self.n_bs), dtype=bool)
        self.nu_mask.ravel()[np.unique(self.mem_slot)] = True
        self.th_mask = np.zeros((self.n_sb, problem.n_users), dtype=bool)
        self.th_mask[self.cand_sb, self.cand_user] = True

        self.sb_band = np.array([sb[0] for sb in self.sb_list], dtype=np.int64)
        self.band_ids = sorted(b.band_id for b in problem.bands)
        self.mu_fixed = {
            b.band_id: b.mu_fixed for b in problem.bands if b.mu_fixed is not None
        }
        self.free_mass = max(0.0, 1.0 - sum(self.mu_fixed.values()))

        self.clusters_per_sb = {}
        for i in range(self.n_cand):
            self.clusters_per_sb.setdefault(int(self.cand_sb[i]), set()).add(
                self.cand_members[i]
            )
        self.n_clusters_sb = {
            sb: len(cs) for sb, cs in self.clusters_per_sb.items()
        }

    def denominators(self, duals: "DualState") -> np.ndarray:
        d = np.bincount(
            self.mem_cand,
            weights=duals.nu.ravel()[self.mem_slot] * self.mem_w,
            minlength=self.n_cand,
        )
        return d + duals.theta[self.cand_sb, self.cand_user]

    def segment_max(self, values: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(values, self.seg_starts)

    def segment_min(self, values: np.ndarray) -> np.ndarray:
        return np.minimum.reduceat(values, self.seg_starts)

    def segment_argmax(self, values: np.ndarray) -> np.ndarray:
        top = self.segment_max(values)
        attain = values == top[self.cand_user]
        idx = np.where(attain, np.arange(self.n_cand), self.n_cand)
        return np.minimum.reduceat(idx, self.seg_starts)


@dataclass
class DualState:
    """Multipliers of the per-BS capacity rows (nu) and the per-user service
    rows (theta); both are projected onto the nonnegative orthant, the dual
    domain of the inequality-constrained problem."""

    nu: np.ndarray  # (n_subbands, n_bs)
    theta: np.ndarray  # (n_subbands, n_users)
    n: int
    step_a: float
    step_b: float

    def delta(self, n: int | None = None) -> float:
        k = self.n if n is None else n
        return self.step_a / (k + self.step_b)


def initial_duals(problem: NumProblem, cfg: SolverConfig) -> DualState:
    prep = problem.prepared()
    return DualState(
        np.zeros((prep.n_sb, prep.n_bs)),
        np.zeros((prep.n_sb, prep.n_users)),
        1,
        cfg.step_a,
        cfg.step_b,
    )


def build_num_problem(
    layout: Layout,
    gains: GainMatrix,
    scenario: str,
    rule: ServingCapacityRule,
    precoder: str = "lzfbf",
    l_max: int | dict[int, int] | None = None,
    mu_fixed: dict[int, float] | None = None,
    top_n: int = 8,
) -> NumProblem:
    """Candidate clusters and tabulated rates for one of the three resource
    sharing scenarios; the cellular baseline is `shared` with l_max=1."""
    if scenario not in SCENARIOS:
        raise ProblemError(f"unknown scenario {scenario!r}")
    band_ids = SCENARIOS[scenario]
    if isinstance(l_max, int):
        l_map = {a: (1 if a == 2 else l_max) for a in band_ids}
    else:
        l_map = dict(DEFAULT_L_MAX)
        for a, L in (l_max or {}).items():
            if a not in band_ids:
                raise ProblemError(f"band {a} is not part of scenario {scenario!r}")
            l_map[a] = L
    mu_map = dict(DEFAULT_MU_FIXED.get(scenario, {}))
    if mu_fixed is not None:
        for a in mu_fixed:
            if a not in band_ids:
                raise ProblemError(f"band {a} is not part of scenario {scenario!r}")
        mu_map.update(mu_fixed)
    if mu_map and sum(mu_map.values()) > 1.0 + 1e-12:
        raise ProblemError("fixed band fractions exceed the RB budget")

    bands = [band_for(layout, a, l_map[a], mu_map.get(a)) for a in band_ids]
    powers = layout.powers_w()
    candidates = {
        k: enumerate_candidate_clusters(k, gains, powers, bands, top_n)
        for k in range(len(layout.users))
    }
    table = build_rate_table(layout, gains, bands, candidates, rule, precoder)
    capacities = {
        (b.id, L): rule.capacity(b.tier, L)
        for b in layout.base_stations
        for L in range(1, max(l_map.values()) + 1)
    }
    problem = NumProblem(
        n_users=len(layout.users),
        bands=bands,
        candidates=candidates,
        rates=table,
        capacities=capacities,
        n_bs=len(layout.base_stations),
    )
    problem.prepared()  # validate candidates eagerly
    return problem


# ---------------------------------------------------------------------------
# Dual subgradient steps


def _activity_step(prep: _Prepared, duals: DualState):
    """Closed-form per-user activity update with the [0, 1] projection:
    select the candidate maximizing rate / denominator, set x = clip(1/den)."""
    denom = prep.denominators(duals)
    with np.errstate(divide="ignore", over="ignore"):
        scores = np.where(denom > 0.0, prep.cand_rate / denom, np.inf)
    scores = np.where(prep.cand_rate > 0.0, scores, -np.inf)
    choice = prep.segment_argmax(scores)
    d = denom[choice]
    with np.errstate(divide="ignore", over="ignore"):
        x = np.where(d > 0.0, np.minimum(1.0, 1.0 / d), 1.0)
    return choice, x, denom


def _band_scores(prep: _Prepared, duals: DualState) -> np.ndarray:
    return np.where(prep.nu_mask, duals.nu, 0.0).sum(axis=1) + np.where(
        prep.th_mask, duals.theta, 0.0
    ).sum(axis=1)


def _band_step(prep: _Prepared, duals: DualState, rng: np.random.Generator):
    """Mass-on-argmax solution of the band/subband allocation LP; fixed-mu
    bands allocate their own fraction to their best cluster size."""
    scores = _band_scores(prep, duals)
    lam = np.zeros(prep.n_sb)
    mu = {a: 0.0 for a in prep.band_ids}
    free_sbs = []
    for a in prep.band_ids:
        sbs = [i for i in range(prep.n_sb) if prep.sb_band[i] == a]
        if a in prep.mu_fixed:
            best = scores[sbs].max()
            winners = [i for i in sbs if scores[i] == best]
            pick = winners[rng.integers(len(winners))] if len(winners) > 1 else winners[0]
            lam[pick] = prep.mu_fixed[a]
            mu[a] = prep.mu_fixed[a]
        else:
            free_sbs.extend(sbs)
    if free_sbs:
        best = scores[free_sbs].max()
        winners = [i for i in free_sbs if scores[i] == best]
        pick = winners[rng.integers(len(winners))] if len(winners) > 1 else winners[0]
        lam[pick] = prep.free_mass
        mu[int(prep.sb_band[pick])] = prep.free_mass
    return lam, mu


def _loads(prep: _Prepared, choice: np.ndarray, x: np.ndarray):
    """Per-(subband, BS) capacity loads sum_x/S and per-(subband, user) sums."""
    x_cand = np.zeros(prep.n_cand)
    x_cand[choice] = x
    bs_load = np.bincount(
        prep.mem_slot, weights=x_cand[prep.mem_cand] * prep.mem_w,
        minlength=prep.n_sb * prep.n_bs,
    ).reshape(prep.n_sb, prep.n_bs)
    user_load = np.zeros((prep.n_sb, prep.n_users))
    np.add.at(user_load, (prep.cand_sb[choice], prep.cand_user[choice]), x)
    return bs_load, user_load


def _multiplier_step(
    prep: _Prepared,
    duals: DualState,
    lam: np.ndarray,
    bs_load: np.ndarray,
    user_load: np.ndarray,
) -> DualState:
    delta = duals.delta()
    nu = np.where(
        prep.nu_mask,
        np.maximum(0.0, duals.nu - delta * (lam[:, None] - bs_load)),
        0.0,
    )
    # theta multiplies an inequality row, so the dual domain is theta >= 0;
    # the projection also keeps every activity denominator nonnegative.
    theta = np.where(
        prep.th_mask,
        np.maximum(0.0, duals.theta - delta * (lam[:, None] - user_load)),
        0.0,
    )
    return DualState(nu, theta, duals.n + 1, duals.step_a, duals.step_b)


def _dual_objective(prep: _Prepared, duals: DualState, denom: np.ndarray) -> float:
    """Value of the dual function at the iterate: +inf outside its domain
    (some positive-rate candidate sees a nonpositive denominator)."""
    if np.any((denom <= 0.0) & (prep.cand_rate > 0.0)):
        return math.inf
    with np.errstate(divide="ignore"):
        ratios = np.where(prep.cand_rate > 0.0, prep.cand_rate / denom, 0.0)
    best = prep.segment_max(ratios)
    users_part = float(np.sum(np.log(best))) - prep.n_users
    scores = _band_scores(prep, duals)
    g = 0.0
    free_best = -math.inf
    for a in prep.band_ids:
        sbs = [i for i in range(prep.n_sb) if prep.sb_band[i] == a]
        if a in prep.mu_fixed:
            g += prep.mu_fixed[a] * max(0.0, scores[sbs].max())
        else:
            free_best = max(free_best, scores[sbs].max())
    if free_best > -math.inf:
        g += prep.free_mass * max(0.0, free_best)
    return users_part + g


# ---------------------------------------------------------------------------
# Public operations (spec surface); the run loop composes the same internals.


def dual_activity_update(problem: NumProblem, duals: DualState
                         ) -> dict[int, tuple[Cluster, int, float]]:
    """Per user, the single (cluster, band, x) entry of the activity update."""
    prep = problem.prepared()
    choice, x, _ = _activity_step(prep, duals)
    return {
        int(prep.cand_user[c]): (
            prep.cand_members[c],
            prep.sb_list[prep.cand_sb[c]][0],
            float(x[k]),
        )
        for k, c in enumerate(choice)
    }


def dual_band_allocation(
    problem: NumProblem, duals: DualState, rng: np.random.Generator | None = None
) -> tuple[dict[tuple[int, int], float], dict[int, float]]:
    prep = problem.prepared()
    if rng is None:
        rng = np.random.default_rng(0)
    lam, mu = _band_step(prep, duals, rng)
    return {prep.sb_list[i]: float(lam[i]) for i in range(prep.n_sb)}, mu


def dual_multiplier_step(
    problem: NumProblem,
    duals: DualState,
    x: dict[int, tuple[Cluster, int, float]],
    lam: dict[tuple[int, int], float],
    n: int | None = None,
) -> DualState:
    prep = problem.prepared()
    cand_pos = {
        (int(prep.cand_user[i]), prep.cand_members[i], prep.sb_list[prep.cand_sb[i]][0]): i
        for i in range(prep.n_cand)
    }
    choice, xv = [], []
    for user, (cluster, band_id, value) in x.items():
        choice.append(cand_pos[(user, canon_cluster(cluster), band_id)])
        xv.append(value)
    choice = np.array(choice, dtype=np.int64)
    xv = np.array(xv)
    lam_arr = np.zeros(prep.n_sb)
    for sb, v in lam.items():
        lam_arr[prep.sb_index[sb]] = v
    bs_load, user_load = _loads(prep, choice, xv)
    at = duals if n is None else DualState(duals.nu, duals.theta, n, duals.step_a, duals.step_b)
    return _multiplier_step(prep, at, lam_arr, bs_load, user_load)


def run_dual_subgradient(
    problem: NumProblem, cfg: SolverConfig = SolverConfig()
) -> tuple[DualState, list[tuple[int, float, float]]]:
    """Iterate activity update -> band allocation -> multiplier step until the
    dual iterate stops moving or the iteration budget runs out. The trace rows
    are (iteration, dual objective, max primal constraint violation)."""
    prep = problem.prepared()
    rng = np.random.default_rng(cfg.seed)
    duals = initial_duals(problem, cfg)
    trace: list[tuple[int, float, float]] = []
    for n in range(1, cfg.max_iterations + 1):
        choice, x, denom = _activity_step(prep, duals)
        lam, _ = _band_step(prep, duals, rng)
        bs_load, user_load = _loads(prep, choice, x)
        violation = max(
            float(np.max(bs_load - lam[:, None], initial=0.0)),
            float(np.max(np.where(prep.th_mask, user_load - lam[:, None], 0.0), initial=0.0)),
        )
        trace.append((n, _dual_objective(prep, duals, denom), max(0.0, violation)))
        new = _multiplier_step(prep, duals, lam, bs_load, user_load)
        movement = max(
            float(np.max(np.abs(new.nu - duals.nu), initial=0.0)),
            float(np.max(np.abs(new.theta - duals.theta), initial=0.0)),
        )
        duals = new
        if movement < cfg.move_tol:
            break
    return duals, trace


def trace_to_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "dual_objective", "max_violation"])
        for n, obj, viol in trace:
            w.writerow([n, repr(obj), repr(viol)])


def optimal_rates_from_duals(problem: NumProblem, duals: DualState) -> np.ndarray:
    """R*_k = max over candidates of rate / (sum nu/S + theta); the KKT read-off
    of the unique optimal rates."""
    prep = problem.prepared()
    denom = prep.denominators(duals)
    if np.any((denom <= 0.0) & (prep.cand_rate > 0.0)):
        raise ConvergenceError(
            "nonpositive activity denominator at a usable candidate: "
            "duals are not converged"
        )
    ratios = np.where(prep.cand_rate > 0.0, prep.cand_rate / denom, 0.0)
    return prep.segment_max(ratios)


@dataclass
class PrimalSolution:
    x: dict[tuple[int, Cluster, int], float]  # (user, cluster, band) -> fraction
    lam: dict[tuple[int, int], float]  # (band, size) -> RB fraction
    mu: dict[int, float]
    rates: np.ndarray
    utility: float
    eta: float

    def to_json(self) -> str:
        doc = {
            "x": [
                {"user": k, "cluster": list(c), "band": a, "value": v}
                for (k, c, a), v in sorted(self.x.items())
            ],
            "lambda": [
                {"band": a, "size": L, "value": v} for (a, L), v in sorted(self.lam.items())
            ],
            "mu": {str(a): v for a, v in sorted(self.mu.items())},
            "rates": list(map(float, self.rates)),
            "utility": self.utility,
            "eta": self.eta,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PrimalSolution":
        doc = json.loads(text)
        x = {
            (e["user"], tuple(e["cluster"]), e["band"]): e["value"] for e in doc["x"]
        }
        lam = {(e["band"], e["size"]): e["value"] for e in doc["lambda"]}
        mu = {int(a): v for a, v in doc["mu"].items()}
        return cls(x, lam, mu, np.asarray(doc["rates"]), doc["utility"], doc["eta"])


class _SupportSystem:
    """Constraint rows of the problem restricted to a candidate support set.

    Variables are ordered [x over support | lambda over touched subbands |
    mu over free bands]; every constraint is an inequality G z <= h. Shared by
    the recovery LP and the dual-polishing stage.
    """

    def __init__(self, problem: NumProblem, support: np.ndarray):
        prep = problem.prepared()
        self.prep = prep
        self.support = support
        self.sb_touched = sorted({int(prep.cand_sb[i]) for i in support})
        self.sb_col = {sb: i for i, sb in enumerate(self.sb_touched)}
        self.free_bands = [a for a in prep.band_ids if a not in prep.mu_fixed]
        self.mu_col = {a: i for i, a in enumerate(self.free_bands)}
        self.n_x = support.size
        self.n_lam = len(self.sb_touched)
        self.n_mu = len(self.free_bands)
        self.n_vars = self.n_x + self.n_lam + self.n_mu

        rows: list[np.ndarray] = []
        rhs: list[float] = []
        meta: list[tuple] = []

        cap_rows: dict[tuple[int, int], np.ndarray] = {}
        ue_rows: dict[tuple[int, int], np.ndarray] = {}
        for col, i in enumerate(support):
            sb = int(prep.cand_sb[i])
            size = prep.sb_list[sb][1]
            k = int(prep.cand_user[i])
            for j in prep.cand_members[i]:
                row = cap_rows.get((sb, j))
                if row is None:
                    row = np.zeros(self.n_vars)
                    row[self.n_x + self.sb_col[sb]] = -1.0
                    cap_rows[(sb, j)] = row
                row[col] += 1.0 / problem.capacity(j, size)
            row = ue_rows.get((sb, k))
            if row is None:
                row = np.zeros(self.n_vars)
                row[self.n_x + self.sb_col[sb]] = -1.0
                ue_rows[(sb, k)] = row
            row[col] += 1.0
        for key in sorted(cap_rows):
            rows.append(cap_rows[key])
            rhs.append(0.0)
            meta.append(("bs",) + key)
        for key in sorted(ue_rows):
            rows.append(ue_rows[key])
            rhs.append(0.0)
            meta.append(("ue",) + key)

        for a in prep.band_ids:
            row = np.zeros(self.n_vars)
            touched = False
            for sb in self.sb_touched:
                if prep.sb_list[sb][0] == a:
                    row[self.n_x + self.sb_col[sb]] = 1.0
                    touched = True
            if not touched:
                continue
            if a in prep.mu_fixed:
                rows.append(row)
                rhs.append(prep.mu_fixed[a])
            else:
                row[self.n_x + self.n_lam + self.mu_col[a]] = -1.0
                rows.append(row)
                rhs.append(0.0)
            meta.append(("band", a))
        if self.free_bands:
            row = np.zeros(self.n_vars)
            for a in self.free_bands:
                row[self.n_x + self.n_lam + self.mu_col[a]] = 1.0
            rows.append(row)
            rhs.append(prep.free_mass)
            meta.append(("total",))

        self.g = np.array(rows)
        self.h = np.array(rhs)
        self.meta = meta

        self.rate_map = np.zeros((prep.n_users, self.n_vars))
        for col, i in enumerate(support):
            self.rate_map[int(prep.cand_user[i]), col] = prep.cand_rate[i]

    def extract(self, z: np.ndarray):
        prep = self.prep
        x_out: dict[tuple[int, Cluster, int], float] = {}
        for col, i in enumerate(self.support):
            v = float(z[col])
            if v > 0.0:
                key = (
                    int(prep.cand_user[i]),
                    prep.cand_members[i],
                    prep.sb_list[int(prep.cand_sb[i])][0],
                )
                x_out[key] = x_out.get(key, 0.0) + v
        lam_out = {
            prep.sb_list[sb]: float(z[self.n_x + self.sb_col[sb]])
            for sb in self.sb_touched
        }
        mu_out = {a: prep.mu_fixed[a] for a in prep.mu_fixed}
        for a in self.free_bands:
            mu_out[a] = float(z[self.n_x + self.n_lam + self.mu_col[a]])
        return x_out, lam_out, mu_out

    def duals_to_arrays(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Row duals back onto full (nu, theta) grids; absent rows get 0."""
        prep = self.prep
        nu = np.zeros((prep.n_sb, prep.n_bs))
        theta = np.zeros((prep.n_sb, prep.n_users))
        for val, m in zip(y, self.meta):
            if m[0] == "bs":
                nu[m[1], m[2]] = max(0.0, val)
            elif m[0] == "ue":
                theta[m[1], m[2]] = max(0.0, val)
        return nu, theta


def _ratio_support(prep: _Prepared, duals: DualState, width: float, cap: int) -> np.ndarray:
    """Per user: candidates within `width` relative of its best KKT ratio,
    capped at the `cap` largest; positive-rate candidates only."""
    denom = prep.denominators(duals)
    with np.errstate(divide="ignore", over="ignore"):
        ratios = np.where(
            (denom > 0.0) & (prep.cand_rate > 0.0), prep.cand_rate / denom, 0.0
        )
        ratios = np.where((denom <= 0.0) & (prep.cand_rate > 0.0), np.inf, ratios)
    keep: list[int] = []
    for k in range(prep.n_users):
        s = prep.seg_starts[k]
        e = prep.seg_starts[k + 1] if k + 1 < prep.n_users else prep.n_cand
        seg = ratios[s:e]
        best = seg.max()
        if not np.isfinite(best):
            idx = np.flatnonzero(np.isinf(seg))
        else:
            idx = np.flatnonzero(seg >= (1.0 - width) * best)
        if idx.size > cap:
            idx = idx[np.argsort(-seg[idx], kind="stable")[:cap]]
        keep.extend((s + idx).tolist())
    return np.array(sorted(keep), dtype=np.int64)


def recover_primal(
    problem: NumProblem, duals: DualState, support_eps: float = 1e-4
) -> PrimalSolution:
    """Reduced LP over the near-maximizing candidates: maximize the worst
    normalized rate eta = min_k R_k / R*_k subject to the full constraint set.
    eta near 1 certifies consistency with the dual solution."""
    prep = problem.prepared()
    r_star = optimal_rates_from_duals(problem, duals)
    denom = prep.denominators(duals)
    ratios = np.where(prep.cand_rate > 0.0, prep.cand_rate / denom, 0.0)
    support = np.flatnonzero(
        (ratios >= (1.0 - support_eps) * r_star[prep.cand_user]) & (prep.cand_rate > 0.0)
    )
    if support.size == 0:
        raise PrimalRecoveryError("empty support")

    sys = _SupportSystem(problem, support)
    n_vars = 1 + sys.n_vars  # [eta | z]
    rows_a = [np.concatenate(([0.0], row)) for row in sys.g]
    rows_b = list(sys.h)
    for k in range(prep.n_users):
        row = np.concatenate(([1.0], -sys.rate_map[k] / r_star[k]))
        scale = np.max(np.abs(row))  # unit row scale keeps the pivots honest
        rows_a.append(row / scale)
        rows_b.append(0.0)

    c = np.zeros(n_vars)
    c[0] = 1.0
    sol = lp.solve_lp(
        lp.LinearProgram(c, a_ub=np.array(rows_a), b_ub=np.array(rows_b))
    )
    if sol.status != lp.OPTIMAL:
        raise PrimalRecoveryError(
            f"recovery LP ended {sol.status}: support tolerance too small or "
            "duals too far from optimal"
        )

    x_out, lam_out, mu_out = sys.extract(sol.x[1:])
    rates = rates_of(problem, x_out)
    if np.any(rates <= 0.0):
        raise PrimalRecoveryError("recovered solution leaves a user with zero rate")
    utility = float(np.sum(np.log(rates)))
    return PrimalSolution(x_out, lam_out, mu_out, rates, utility, float(sol.x[0]))


def _interior_start(sys: _SupportSystem) -> np.ndarray:
    """Strictly interior point: half budgets down the budget chain, tiny x."""
    prep = sys.prep
    z = np.zeros(sys.n_vars)
    n_free = len(sys.free_bands)
    mu0 = {a: prep.mu_fixed.get(a, prep.free_mass / (n_free + 1)) for a in prep.band_ids}
    for a in sys.free_bands:
        z[sys.n_x + sys.n_lam + sys.mu_col[a]] = mu0[a]
    per_band = {a: 0 for a in prep.band_ids}
    for sb in sys.sb_touched:
        per_band[prep.sb_list[sb][0]] += 1
    for sb in sys.sb_touched:
        a = prep.sb_list[sb][0]
        z[sys.n_x + sys.sb_col[sb]] = 0.5 * mu0[a] / max(1, per_band[a])
    lam_min = float(z[sys.n_x : sys.n_x + sys.n_lam].min()) if sys.n_lam else 1.0
    max_len = (
        max(int(np.count_nonzero(row[: sys.n_x])) for row in sys.g) if len(sys.g) else 1
    )
    z[: sys.n_x] = 0.25 * lam_min / max(1, max_len)
    return z


def _barrier_solve(
    sys: _SupportSystem,
    gap_tol: float = 1e-7,
    z0: np.ndarray | None = None,
    t_start: float | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Log-barrier Newton solve of the support-restricted utility problem
    (max sum log(M z) s.t. G z <= h, z >= 0). Returns the point, the row duals
    and the final barrier parameter; the duals feed the KKT rate read-off."""
    g_mat, h_vec, m_mat = sys.g, sys.h, sys.rate_map
    prep = sys.prep
    n = sys.n_vars

    for a in prep.mu_fixed:
        if prep.mu_fixed[a] <= 0.0 and any(
            prep.sb_list[sb][0] == a for sb in sys.sb_touched
        ):
            raise PrimalRecoveryError(f"band {a} has zero fixed share but active users")

    z = _interior_start(sys) if z0 is None else z0.copy()

    def value(zv: np.ndarray, t: float) -> float:
        r = m_mat @ zv
        s = h_vec - g_mat @ zv
        if np.any(r <= 0) or np.any(s <= 0) or np.any(zv <= 0):
            return math.inf
        return float(-t * np.sum(np.log(r)) - np.sum(np.log(s)) - np.sum(np.log(zv)))

    m_total = g_mat.shape[0] + n
    t = max(1.0, float(prep.n_users)) if t_start is None else max(t_start, 1.0)
    while True:
        for _ in range(60):
            r = m_mat @ z
            s = h_vec - g_mat @ z
            inv_r = 1.0 / r
            inv_s = 1.0 / s
            grad = -t * (m_mat.T @ inv_r) + g_mat.T @ inv_s - 1.0 / z
            hess = (
                t * (m_mat.T * inv_r**2) @ m_mat
                + (g_mat.T * inv_s**2) @ g_mat
            )
            hess[np.diag_indices_from(hess)] += 1.0 / z**2
            try:
                step = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                hess[np.diag_indices_from(hess)] += 1e-10 * np.max(np.diag(hess))
                step = -np.linalg.solve(hess, grad)
            decrement = float(-grad @ step)
            if decrement / 2.0 < 1e-11:
                break
            base = value(z, t)
            alpha = 1.0
            while alpha > 1e-13 and value(z + alpha * step, t) > base - 1e-4 * alpha * decrement:
                alpha *= 0.5
            if alpha <= 1e-13:
                break
            z = z + alpha * step
        y = (1.0 / (h_vec - g_mat @ z)) / t
        if m_total / t < gap_tol * max(1.0, prep.n_users):
            return z, y, t
        t *= 20.0


def _extend_interior(
    sys_new: _SupportSystem,
    support_new: np.ndarray,
    support_old: np.ndarray,
    z_old: np.ndarray,
    sys_old: _SupportSystem,
) -> np.ndarray | None:
    """Carry the previous barrier point onto an enlarged support, giving the
    fresh columns just enough mass to stay strictly interior."""
    z = _interior_start(sys_new)
    pos_old = {int(c): i for i, c in enumerate(support_old)}
    for i, c in enumerate(support_new):
        j = pos_old.get(int(c))
        if j is not None:
            z[i] = z_old[j]
    for sb in sys_new.sb_touched:
        if sb in sys_old.sb_col:
            z[sys_new.n_x + sys_new.sb_col[sb]] = z_old[sys_old.n_x + sys_old.sb_col[sb]]
    for a in sys_new.free_bands:
        z[sys_new.n_x + sys_new.n_lam + sys_new.mu_col[a]] = z_old[
            sys_old.n_x + sys_old.n_lam + sys_old.mu_col[a]
        ]
    new_cols = np.array(
        [i for i, c in enumerate(support_new) if int(c) not in pos_old], dtype=np.int64
    )
    if new_cols.size:
        z[new_cols] = 0.0
        slack = sys_new.h - sys_new.g @ z
        if np.any(slack <= 0.0):
            return None
        worst = max(
            float((np.abs(sys_new.g[r, new_cols]).sum()) / slack[r])
            for r in range(len(slack))
        )
        z[new_cols] = 0.25 / worst if worst > 0 else 1e-6
    if np.any(sys_new.h - sys_new.g @ z <= 0.0) or np.any(z <= 0.0):
        return None
    return z


def polish_duals(
    problem: NumProblem,
    duals: DualState,
    support_width: float = 0.1,
    support_cap: int = 4,
    max_rounds: int = 30,
    price_tol: float = 1e-6,
) -> DualState:
    """Refine rough subgradient duals into near-exact ones: solve the
    support-restricted problem with a barrier method, price the remaining
    candidates through the KKT ratio test, and grow the support until no
    candidate prices out (column generation). Rounds warm-start each other."""
    prep = problem.prepared()
    support = _ratio_support(prep, duals, support_width, support_cap)
    polished = duals
    prev: tuple[np.ndarray, np.ndarray, _SupportSystem, float] | None = None
    for _ in range(max_rounds):
        sys = _SupportSystem(problem, support)
        z0, t0 = None, None
        if prev is not None:
            z0 = _extend_interior(sys, support, prev[0], prev[1], prev[2])
            if z0 is not None:
                t0 = prev[3] / 400.0  # re-center a couple of stages back
        z, y, t_end = _barrier_solve(sys, z0=z0, t_start=t0)
        prev = (support, z, sys, t_end)
        nu, theta = sys.duals_to_arrays(y)
        polished = DualState(nu, theta, duals.n, duals.step_a, duals.step_b)
        reduced_rates = sys.rate_map @ z
        denom = prep.denominators(polished)
        with np.errstate(divide="ignore", over="ignore"):
            ratios = np.where(
                (prep.cand_rate > 0.0) & (denom > 0.0), prep.cand_rate / denom, 0.0
            )
            ratios = np.where(
                (prep.cand_rate > 0.0) & (denom <= 0.0), np.inf, ratios
            )
        slack = ratios - reduced_rates[prep.cand_user] * (1.0 + price_tol)
        violating = np.flatnonzero(slack > 0.0)
        if violating.size == 0:
            return polished
        in_support = np.zeros(prep.n_cand, dtype=bool)
        in_support[support] = True
        extra: list[int] = []
        order = violating[np.argsort(-slack[violating], kind="stable")]
        per_user: dict[int, int] = {}
        for i in order:
            if in_support[i]:
                continue
            k = int(prep.cand_user[i])
            if per_user.get(k, 0) >= 8:
                continue
            per_user[k] = per_user.get(k, 0) + 1
            extra.append(int(i))
        if not extra:
            return polished
        support = np.array(sorted(set(support.tolist()) | set(extra)), dtype=np.int64)
    return polished


def rates_of(problem: NumProblem, x: dict[tuple[int, Cluster, int], float]) -> np.ndarray:
    rates = np.zeros(problem.n_users)
    for (k, c, a), v in x.items():
        rates[k] += v * problem.rates.get(k, c, a)
    return rates


def constraint_residuals(
    problem: NumProblem,
    x: dict[tuple[int, Cluster, int], float],
    lam: dict[tuple[int, int], float],
    mu: dict[int, float],
) -> dict[str, float]:
    """Worst-case violation of each constraint family (positive = violated)."""
    prep = problem.prepared()
    bs_load: dict[tuple[tuple[int, int], int], float] = {}
    ue_load: dict[tuple[tuple[int, int], int], float] = {}
    for (k, c, a), v in x.items():
        sb = (a, len(c))
        for j in c:
            bs_load[(sb, j)] = bs_load.get((sb, j), 0.0) + v / problem.capacity(j, len(c))
        ue_load[(sb, k)] = ue_load.get((sb, k), 0.0) + v
    r_bs = max(
        (load - lam.get(sb, 0.0) for (sb, _), load in bs_load.items()), default=0.0
    )
    r_ue = max(
        (load - lam.get(sb, 0.0) for (sb, _), load in ue_load.items()), default=0.0
    )
    band_sum: dict[int, float] = {}
    for (a, _), v in lam.items():
        band_sum[a] = band_sum.get(a, 0.0) + v
    r_band = max(
        (s - mu.get(a, 0.0) for a, s in band_sum.items()), default=0.0
    )
    r_total = sum(mu.values()) - 1.0
    r_nonneg = -min(
        [0.0]
        + list(x.values())
        + list(lam.values())
        + list(mu.values())
    )
    return {
        "bs_capacity": max(0.0, r_bs),
        "user_service": max(0.0, r_ue),
        "band_budget": max(0.0, r_band),
        "total_budget": max(0.0, r_total),
        "nonnegativity": max(0.0, r_nonneg),
    }


def max_residual(problem, x, lam, mu) -> float:
    return max(constraint_residuals(problem, x, lam, mu).values())


def count_fractional_users(
    solution: PrimalSolution, threshold: float = 1e-6
) -> dict[tuple[int, int], int]:
    """Per subband, the number of users with two or more positive fractions."""
    per: dict[tuple[int, int], dict[int, int]] = {}
    for (k, c, a), v in solution.x.items():
        if v > threshold:
            sb = (a, len(c))
            per.setdefault(sb, {})[k] = per.get(sb, {}).get(k, 0) + 1
    return {
        sb: sum(1 for n in users.values() if n >= 2) for sb, users in per.items()
    }


def user_constraints_inactive(
    problem: NumProblem,
    solution: PrimalSolution,
    subband: tuple[int, int],
    tol: float = 1e-9,
) -> bool:
    """True when every user's service constraint in this subband is strictly
    slack (the precondition of the fractional-user bound)."""
    lam = solution.lam.get(subband, 0.0)
    load = np.zeros(problem.n_users)
    for (k, c, a), v in solution.x.items():
        if (a, len(c)) == subband:
            load[k] += v
    return bool(np.all(load < lam - tol))


@dataclass
class SolveResult:
    solution: PrimalSolution
    duals: DualState
    trace: list[tuple[int, float, float]]


def solve_num(problem: NumProblem, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Full pipeline: subgradient phase (identifies the near-optimal support),
    dual polish on that support, then exact-feasibility primal recovery."""
    duals, trace = run_dual_subgradient(problem, cfg)
    if cfg.polish:
        duals = polish_duals(
            problem,
            duals,
            cfg.polish_width,
            cfg.polish_cap,
            price_tol=cfg.polish_price_tol,
        )
    solution = recover_primal(problem, duals, cfg.support_eps)
    return SolveResult(solution, duals, trace)
