"""Frequency-selective interference channel with per-user power budgets.

Users split a power budget across N parallel subchannels; each treats
interference as noise, so user i's instantaneous rate is

    r_i(p, h) = sum_n log(1 + |h_ii,n|^2 p_i,n / MUI_i,n),
    MUI_i,n   = sigma2_i,n + sum_{j != i} |h_ij,n|^2 p_j,n.

All public functions work in the maximize orientation (sum rate); the
driver adapter keeps that orientation end to end, since the generic
loop only averages gradients and feeds them back to the best response.

The best response linearizes the other users' rates through a pricing
vector and solves a budgeted waterfilling problem in closed form per
subchannel, with one scalar multiplier found by bisection plus a
Newton polish.
"""

from dataclasses import dataclass

import numpy as np

from .core import StrategyProfile
from .errors import ContractError, SolverError

BUDGET_SLACK = 1e-12
COMPLEMENTARITY_TOL = 1e-8


@dataclass(frozen=True)
class SisoChannelSample:
    """One channel realization: h[i, j, n] couples transmitter j to
    receiver i on subchannel n; sigma2[i, n] is the noise power."""

    h: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        s2 = np.asarray(self.sigma2, dtype=float)
        if h.ndim != 3 or h.shape[0] != h.shape[1]:
            raise ContractError(f"channel tensor must be (I, I, N), got "
                                f"{h.shape}")
        if s2.shape != (h.shape[0], h.shape[2]):
            raise ContractError(f"noise array must be (I, N) = "
                                f"{(h.shape[0], h.shape[2])}, got {s2.shape}")
        if s2.min() <= 0:
            raise ContractError("noise variances must be positive")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "sigma2", s2)

    @property
    def num_users(self):
        return self.h.shape[0]

    @property
    def num_subchannels(self):
        return self.h.shape[2]


def _powers(p):
    return np.stack([np.asarray(b, dtype=float) for b in p.blocks])


def _mui(pw, h):
    """Noise-plus-interference per receiver and subchannel, shape (I, N)."""
    g = np.abs(h.h) ** 2
    total = np.einsum("ijn,jn->in", g, pw)
    own = np.einsum("iin,in->in", g, pw)
    return h.sigma2 + total - own


def rate_user(p, h, i):
    """Instantaneous rate of user i in nats, interference as noise."""
    pw = _powers(p)
    mui = _mui(pw, h)
    g_ii = np.abs(h.h[i, i, :]) ** 2
    return float(np.log1p(g_ii * pw[i] / mui[i]).sum())


def sum_rate(p, h):
    return float(sum(rate_user(p, h, i) for i in range(h.num_users)))


def _sinr_all(pw, h):
    mui = _mui(pw, h)
    g_diag = np.abs(np.einsum("iin->in", h.h)) ** 2
    return g_diag * pw / mui, mui


def pricing(p, h, i):
    """Marginal effect of user i's powers on everyone else's rates.

    pi_i,n = -sum_{j != i} |h_ji,n|^2 SINR_j,n / ((1 + SINR_j,n) MUI_j,n),
    evaluated at the current profile; componentwise nonpositive.
    """
    pw = _powers(p)
    sinr, mui = _sinr_all(pw, h)
    g_to = np.abs(h.h[:, i, :]) ** 2
    w = sinr / ((1.0 + sinr) * mui)
    total = np.einsum("jn,jn->n", g_to, w)
    return -(total - g_to[i] * w[i])


def own_rate_grad(p, h, i):
    """Gradient of r_i w.r.t. p_i; the ratio |h_ii|^2/MUI_i is SINR/p
    extended through p = 0 by its analytic limit."""
    pw = _powers(p)
    mui = _mui(pw, h)
    b = np.abs(h.h[i, i, :]) ** 2 / mui[i]
    return b / (1.0 + b * pw[i])


def sample_sum_grad(p, h):
    """Full per-user gradients of the sampled sum rate: pi_i + grad r_i."""
    pw = _powers(p)
    sinr, mui = _sinr_all(pw, h)
    w = sinr / ((1.0 + sinr) * mui)
    g = np.abs(h.h) ** 2
    out = []
    for i in range(h.num_users):
        g_to = g[:, i, :]
        price = -(np.einsum("jn,jn->n", g_to, w) - g_to[i] * w[i])
        b = g[i, i, :] / mui[i]
        out.append(price + b / (1.0 + b * pw[i]))
    return out


def _wf_vec(a, b, c, d):
    """Vectorized per-subchannel maximizer of a*log(1+b*p) + d*p - c/2 p^2
    over p >= 0; c > 0.  Entries with b = 0 lose the log term.

    Uses the cancellation-free root of b*c*p^2 + (c-b*d)*p - (a*b+d)."""
    b = np.asarray(b, dtype=float)
    d = np.asarray(d, dtype=float)
    out = np.empty_like(d)
    flat = b <= 0
    if flat.any():
        out[flat] = np.maximum(d[flat] / c, 0.0)
    if (~flat).any():
        bb, dd = b[~flat], d[~flat]
        lin = c - bb * dd
        sq = np.sqrt((c + bb * dd) ** 2 + 4.0 * a * bb * bb * c)
        p = np.where(lin <= 0,
                     (-lin + sq) / (2.0 * bb * c),
                     2.0 * (a * bb + dd) / np.where(lin > 0, lin + sq, 1.0))
        out[~flat] = np.maximum(p, 0.0)
    return out


def waterfill_budget(rho, b, tau, d, P):
    """Maximize sum_n [rho*log(1+b_n p_n) + d_n p_n - tau/2 p_n^2] over
    the simplex-capped set {p >= 0, sum p <= P}.

    Returns (p, mu) with 0 <= mu complementary to the budget constraint.
    The multiplier is bracketed analytically, bisected, then polished
    with safeguarded Newton steps on the budget residual.
    """
    b = np.asarray(b, dtype=float)
    d = np.asarray(d, dtype=float)
    if P <= 0:
        raise ContractError("budget must be positive")
    if tau < 0:
        raise ContractError("tau must be nonnegative")
    if tau == 0 and (b <= 0).any():
        raise ContractError("tau = 0 requires strictly concave rate terms")

    if tau > 0:
        def p_of(mu):
            return _wf_vec(rho, b, tau, d - mu)

        def dp_dmu(p):
            act = p > 0
            out = np.zeros_like(p)
            out[act] = -1.0 / (rho * b[act] ** 2 / (1.0 + b[act] * p[act]) ** 2
                               + tau)
            return out
    else:
        def p_of(mu):
            gap = mu - d
            if (gap <= 0).any():
                return np.full_like(d, np.inf)
            return np.maximum(rho / gap - 1.0 / b, 0.0)

        def dp_dmu(p):
            act = p > 0
            out = np.zeros_like(p)
            gap = rho / (p[act] + 1.0 / b[act])
            out[act] = -rho / gap ** 2
            return out

    p0 = p_of(0.0)
    s0 = p0.sum()
    if np.isfinite(s0) and s0 <= P * (1.0 + BUDGET_SLACK):
        if s0 > P:
            p0 = p0 * (P / s0)
        return p0, 0.0

    hi = max(float(d.max()), 0.0) + rho * max(float(b.max()), 0.0) + tau * P
    if p_of(hi).sum() > P:
        raise SolverError("budget multiplier bracket failed",
                          hi=hi, sum_hi=float(p_of(hi).sum()), budget=P)
    lo = 0.0
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if p_of(mid).sum() > P:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    mu = 0.5 * (lo + hi)
    best = (np.inf, mu)
    for _ in range(8):
        p = p_of(mu)
        res = p.sum() - P
        if abs(res) < best[0]:
            best = (abs(res), mu)
        slope = dp_dmu(p).sum()
        if slope == 0.0 or not np.isfinite(res):
            break
        step = mu - res / slope
        if not lo < step < hi:
            break
        mu = step
    mu = best[1]
    p = p_of(mu)
    if abs(p.sum() - P) > COMPLEMENTARITY_TOL * P:
        raise SolverError("budget multiplier did not converge",
                          residual=float(p.sum() - P), budget=P, mu=mu)
    s = p.sum()
    if s > P:
        p = p * (P / s)
    return p, mu


def best_response(p_t, h, f_prev, rho, tau, i):
    """Pricing best response of user i: keep own rate, linearize the
    rest, add the averaged-gradient term and the proximal anchor, then
    waterfill against the power budget."""
    if not 0.0 < rho <= 1.0:
        raise ContractError(f"rho must lie in (0, 1], got {rho}")
    if tau < 0:
        raise ContractError("tau must be nonnegative")
    pw = _powers(p_t)
    mui = _mui(pw, h)
    b = np.abs(h.h[i, i, :]) ** 2 / mui[i]
    d = rho * pricing(p_t, h, i) + (1.0 - rho) * np.asarray(f_prev) \
        + tau * pw[i]
    p_hat, _ = waterfill_budget(rho, b, tau, d, p_t.budgets[i])
    return p_hat


class SisoProblem:
    """Driver adapter; maximize orientation throughout.

    draw_fn(seed, t) must return a SisoChannelSample with matching
    dimensions; tau is a scalar or per-user sequence of proximal
    weights.
    """

    def __init__(self, num_users, num_subchannels, budgets, draw_fn, tau):
        self.num_users = num_users
        self.num_subchannels = num_subchannels
        self.budgets = [float(P) for P in budgets]
        if len(self.budgets) != num_users:
            raise ContractError("one budget per user required")
        self.draw_fn = draw_fn
        taus = np.broadcast_to(np.atleast_1d(np.asarray(tau, dtype=float)),
                               (num_users,))
        if taus.min() < 0:
            raise ContractError("tau must be nonnegative")
        self.tau = taus.copy()

    def initial_profile(self):
        blocks = [np.full(self.num_subchannels, P / self.num_subchannels)
                  for P in self.budgets]
        return StrategyProfile(blocks, list(self.budgets))

    def draw_sample(self, seed, t):
        s = self.draw_fn(seed, t)
        if s.num_users != self.num_users or \
                s.num_subchannels != self.num_subchannels:
            raise ContractError("channel draw has wrong dimensions")
        return s

    def objective_sample(self, p, h):
        return sum_rate(p, h)

    def sample_grad(self, p, h, i):
        return sample_sum_grad(p, h)[i]

    def best_response(self, p, h, f_prev, rho, i, policy=None):
        return best_response(p, h, f_prev, rho, self.tau[i], i)
