"""Recompute consensus updates from a logged trajectory, independently of the coordinator."""

import numpy as np


def adapt_rule(rho, r, s):
    if r > 10 * s:
        return rho * 2.0
    if s > 10 * r:
        return rho * 0.5
    return rho


def identity_errors(traj):
    """Largest relative mismatch per logged quantity."""
    worst = {"z": 0.0, "lambda": 0.0, "r": 0.0, "s": 0.0, "rho": 0.0, "price": 0.0, "prox": 0.0}
    dims = traj.records[0].z.dims
    m = len(traj.records[0].proposals)
    lam0 = traj.config.lam_init.values if traj.config.lam_init is not None else np.zeros(dims.size)
    lam_prev = [lam0] * m

    def bump(key, got, want):
        err = np.max(np.abs(np.asarray(got) - np.asarray(want)) / (1.0 + np.abs(np.asarray(want))), initial=0.0)
        worst[key] = max(worst[key], float(err))

    for k, rec in enumerate(traj.records):
        X = np.array([p.values for p in rec.proposals])
        z_prev = traj.z_before(k).values
        rho = rec.rho.values
        z = X.mean(axis=0)
        bump("z", rec.z.values, z)
        for i in range(m):
            bump("lambda", rec.lams[i].values, lam_prev[i] + rho * (z - X[i]))
            d = rec.decomps[i]
            if d is not None:
                bump("price", d.price, lam_prev[i] @ X[i])
                bump("prox", d.prox, 0.5 * np.sum(rho * (X[i] - z_prev) ** 2))
        bump("r", rec.r, np.sqrt(np.sum((X - z) ** 2)))
        bump("s", rec.s, np.sqrt(m) * np.linalg.norm(rho * (z - z_prev)))
        if k + 1 < len(traj.records) and traj.config.adapt:
            bump("rho", traj.records[k + 1].rho.values, adapt_rule(rho, rec.r, rec.s))
        lam_prev = [x.values for x in rec.lams]
    return worst
