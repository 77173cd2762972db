"""Independent reference solver for the allocation problem (test-tree only).

Solves the exact convex program over the same candidate set with cvxpy and a
conic interior-point backend. This is a completely separate solution path from
the dual subgradient + recovery-LP pipeline under test: different algorithm
family, different numerical machinery.
"""

import collections

import cvxpy as cp
import numpy as np

from hetnetopt.num_solver import NumProblem


def reference_num_solve(problem: NumProblem) -> tuple[float, np.ndarray]:
    """(optimal utility, optimal per-user rates)."""
    prep = problem.prepared()
    x = cp.Variable(prep.n_cand, nonneg=True)
    lam = cp.Variable(prep.n_sb, nonneg=True)
    mu = cp.Variable(len(prep.band_ids), nonneg=True)
    band_idx = {a: i for i, a in enumerate(prep.band_ids)}

    rates = []
    for k in range(prep.n_users):
        s = prep.seg_starts[k]
        e = prep.seg_starts[k + 1] if k + 1 < prep.n_users else prep.n_cand
        rates.append(cp.sum(cp.multiply(prep.cand_rate[s:e], x[s:e])))

    cons = []
    bs_rows = collections.defaultdict(list)
    for i in range(prep.n_cand):
        sb = int(prep.cand_sb[i])
        size = prep.sb_list[sb][1]
        for j in prep.cand_members[i]:
            bs_rows[(sb, j)].append((i, 1.0 / problem.capacity(j, size)))
    for (sb, _), entries in sorted(bs_rows.items()):
        idx = [i for i, _ in entries]
        w = np.array([c for _, c in entries])
        cons.append(cp.sum(cp.multiply(w, x[idx])) <= lam[sb])

    ue_rows = collections.defaultdict(list)
    for i in range(prep.n_cand):
        ue_rows[(int(prep.cand_sb[i]), int(prep.cand_user[i]))].append(i)
    for (sb, _), idx in sorted(ue_rows.items()):
        cons.append(cp.sum(x[idx]) <= lam[sb])

    for a in prep.band_ids:
        sbs = [i for i in range(prep.n_sb) if prep.sb_list[i][0] == a]
        if a in prep.mu_fixed:
            cons.append(cp.sum(lam[sbs]) <= prep.mu_fixed[a])
            cons.append(mu[band_idx[a]] == prep.mu_fixed[a])
        else:
            cons.append(cp.sum(lam[sbs]) <= mu[band_idx[a]])
    free = [band_idx[a] for a in prep.band_ids if a not in prep.mu_fixed]
    if free:
        cons.append(cp.sum(mu[free]) <= max(0.0, 1.0 - sum(prep.mu_fixed.values())))

    objective = cp.Maximize(cp.sum(cp.hstack([cp.log(r) for r in rates])))
    prog = cp.Problem(objective, cons)
    prog.solve(solver=cp.CLARABEL)
    if prog.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        prog.solve(solver=cp.SCS, eps=1e-9)
    assert prog.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE), prog.status

    r_opt = np.zeros(prep.n_users)
    for k in range(prep.n_users):
        s = prep.seg_starts[k]
        e = prep.seg_starts[k + 1] if k + 1 < prep.n_users else prep.n_cand
        r_opt[k] = float(prep.cand_rate[s:e] @ x.value[s:e])
    return float(prog.value), r_opt
