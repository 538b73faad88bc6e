"""Independent reference implementations used as test oracles."""

import numpy as np


def energy_minima_by_gradient_descent(others, mask, target, lam, steps=10_000):
    """Minimize the per-neuron energy over (w, b) by gradient descent, many problems at once.

    ``others`` is ``P x n`` (rows padded, ``mask`` marks real entries), ``target``
    and ``lam`` are length ``P``. The energy is
    ``mean_i (-1 - (w x_i + b))^2 + (1 - (w t + b))^2 + lam w^2``.
    """
    others, mask = np.asarray(others, float), np.asarray(mask, float)
    t, lam = np.asarray(target, float), np.asarray(lam, float)
    cnt = mask.sum(axis=1)

    def avg(a):
        return (a * mask).sum(axis=1) / cnt

    m1, m2 = avg(others), avg(others**2)
    h11, h12, h22 = 2 * (m2 + t * t + lam), 2 * (m1 + t), 4.0
    tr, det = h11 + h22, h11 * h22 - h12**2
    big = tr / 2 + np.sqrt(tr**2 / 4 - det)
    small = det / big
    # heavy-ball momentum with the optimal quadratic step: a single other neuron and a
    # tiny lam make the problem too ill-conditioned for plain descent
    step = 4.0 / (np.sqrt(big) + np.sqrt(small)) ** 2
    beta = ((np.sqrt(big) - np.sqrt(small)) / (np.sqrt(big) + np.sqrt(small))) ** 2
    w, b = np.zeros_like(t), np.zeros_like(t)
    vw, vb = np.zeros_like(t), np.zeros_like(t)
    for _ in range(steps):
        r = w[:, None] * others + b[:, None] + 1.0
        q = w * t + b - 1.0
        gw = 2 * avg(r * others) + 2 * q * t + 2 * lam * w
        gb = 2 * avg(r) + 2 * q
        vw, vb = beta * vw - step * gw, beta * vb - step * gb
        w, b = w + vw, b + vb
    return avg((-1.0 - (w[:, None] * others + b[:, None])) ** 2) + (1.0 - (w * t + b)) ** 2 + lam * w * w


def energy_by_gradient_descent(values, lam, steps=10_000):
    """GD minimum of the energy for every neuron of one channel (others = all remaining neurons)."""
    values = np.asarray(values, float).reshape(-1)
    M = values.size
    others = np.array([np.delete(values, i) for i in range(M)])
    return energy_minima_by_gradient_descent(others, np.ones_like(others), values, np.full(M, lam), steps)


def _rates_at(bona, spoof, tau):
    """Integer-count FRR (bona fide below tau) and FAR (spoof at or above tau)."""
    rejected = sum(1 for b in bona if b < tau)
    accepted = sum(1 for s in spoof if s >= tau)
    return rejected / len(bona), accepted / len(spoof)


def eer_by_sweep(bona, spoof):
    """Walk every distinct score (plus +inf) and interpolate at the first FRR >= FAR point."""
    taus = sorted(set(bona) | set(spoof)) + [float("inf")]
    prev = None
    for tau in taus:
        frr, far = _rates_at(bona, spoof, tau)
        if frr - far >= 0:
            p_tau, p_frr, p_far = prev
            d0, d1 = p_frr - p_far, frr - far
            alpha = -d0 / (d1 - d0)
            eer = p_frr + alpha * (frr - p_frr)
            thr = p_tau if tau == float("inf") else p_tau + alpha * (tau - p_tau)
            return eer, thr
        prev = (tau, frr, far)
    raise AssertionError("sweep never crossed")


def min_tdcf_by_sweep(bona, spoof, p_spoof, p_tar, p_non, c_miss_cm, c_fa_cm, c_miss_asv, c_fa_asv,
                      p_miss_asv, p_fa_asv, p_miss_spoof_asv):
    """Tandem cost at every threshold, normalized by the cheaper trivial countermeasure."""
    c1 = p_tar * (c_miss_cm - c_miss_asv * p_miss_asv) - p_non * c_fa_asv * p_fa_asv
    c2 = c_fa_cm * p_spoof * (1 - p_miss_spoof_asv)
    best = None
    for tau in sorted(set(bona) | set(spoof)) + [float("inf")]:
        p_miss, p_fa = _rates_at(bona, spoof, tau)
        cost = (c1 * p_miss + c2 * p_fa) / min(c1, c2)
        if best is None or cost < best[0]:
            best = (cost, tau)
    return best
