"""Generic driver for parallel stochastic best-response decomposition.

The framework minimizes E[sum_j f_j(x, xi)] over block-separable convex
constraint sets, one block per user.  Each iteration draws one sample
xi^t, lets every user minimize a strongly convex surrogate built from
that sample plus a running average of past sample gradients, then moves
by a convex combination:

    x_i^{t+1} = x_i^t + gamma^{t+1} (xhat_i - x_i^t).

Problems plug in through a small duck-typed protocol:

    num_users                     -> int
    initial_profile()             -> StrategyProfile
    draw_sample(seed, t)          -> problem-defined sample object
    objective_sample(x, s)        -> float, the sampled social objective
                                     (minimize orientation)
    sample_grad(x, s, i)          -> block gradient of objective_sample
                                     w.r.t. user i (conjugate convention
                                     for complex blocks)
    best_response(x, s, f_prev_i, rho, i, policy) -> new block for user i
    surrogate_parts(x, s, i, kind)                -> SurrogateParts
                                     (optional; needed for policies whose
                                     kept set is problem-specific)

Everything the driver records is pure per-user work between barriers, so
the per-iteration best-responses may run in a thread pool without
changing results.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, InvariantError, SolverError

POWER_ENTRY_TOL = 1e-12
BUDGET_TOL = 1e-9
MATRIX_HERM_TOL = 1e-12
MATRIX_EIG_TOL = 1e-9


def real_inner(a, b):
    """<a, b> = Re(a^H b); reduces to Re tr(A^H B) for matrix blocks."""
    return float(np.real(np.vdot(a, b)))


@dataclass
class StrategyProfile:
    """Per-user decision blocks plus their power budgets.

    A block is either a nonnegative real power vector or a Hermitian PSD
    matrix; the budget caps its sum or trace respectively.
    """

    blocks: list
    budgets: list

    def __post_init__(self):
        if len(self.blocks) != len(self.budgets):
            raise ContractError("one budget per block required")
        self.blocks = [np.asarray(b) for b in self.blocks]
        self.budgets = [float(P) for P in self.budgets]
        for P in self.budgets:
            if P <= 0:
                raise ContractError("budgets must be positive")

    @property
    def num_users(self):
        return len(self.blocks)

    def copy(self):
        return StrategyProfile([b.copy() for b in self.blocks],
                               list(self.budgets))

    def validate(self):
        """Raise InvariantError unless every block is feasible."""
        for i, (b, P) in enumerate(zip(self.blocks, self.budgets)):
            if b.ndim == 1:
                if np.iscomplexobj(b):
                    raise InvariantError(f"user {i}: power vector must be real")
                if b.min(initial=0.0) < -POWER_ENTRY_TOL:
                    raise InvariantError(
                        f"user {i}: negative power entry {b.min():.3e}")
                if b.sum() > P + BUDGET_TOL:
                    raise InvariantError(
                        f"user {i}: power sum {b.sum():.6f} exceeds budget {P}")
            elif b.ndim == 2 and b.shape[0] == b.shape[1]:
                if np.abs(b - b.conj().T).max() > MATRIX_HERM_TOL:
                    raise InvariantError(f"user {i}: block is not Hermitian")
                w = np.linalg.eigvalsh(0.5 * (b + b.conj().T))
                if w.min() < -MATRIX_EIG_TOL:
                    raise InvariantError(
                        f"user {i}: negative eigenvalue {w.min():.3e}")
                if np.trace(b).real > P + BUDGET_TOL:
                    raise InvariantError(
                        f"user {i}: trace {np.trace(b).real:.6f} exceeds "
                        f"budget {P}")
            else:
                raise InvariantError(
                    f"user {i}: block must be a vector or square matrix")
        return self


@dataclass
class GradientAccumulator:
    """Running average of sample gradients, one block per user."""

    blocks: list
    t_last: int = -1

    @classmethod
    def zeros_like(cls, profile):
        blocks = []
        for b in profile.blocks:
            dt = complex if b.ndim == 2 else float
            blocks.append(np.zeros(b.shape, dtype=dt))
        return cls(blocks, t_last=-1)

    def updated(self, sample_grads, rho, t):
        blocks = [accumulate_gradient(f, g, rho)
                  for f, g in zip(self.blocks, sample_grads)]
        return GradientAccumulator(blocks, t_last=t)


def accumulate_gradient(f_prev, sample_grad, rho):
    """One recursion step (1 - rho) * f_prev + rho * sample_grad.

    With rho = 1 at the first step the initial content is wiped, so the
    recursion never depends on the accumulator's starting value.
    """
    f_prev = np.asarray(f_prev)
    sample_grad = np.asarray(sample_grad)
    if f_prev.shape != sample_grad.shape:
        raise ContractError(
            f"accumulator shape {f_prev.shape} != gradient shape "
            f"{sample_grad.shape}")
    if not 0.0 < rho <= 1.0:
        raise ContractError(f"rho must lie in (0, 1], got {rho}")
    return (1.0 - rho) * f_prev + rho * sample_grad


@dataclass(frozen=True)
class StepSchedule:
    """Step sequences gamma(t) for t >= 1 and rho(t) for t >= 0.

    Values always lie in (0, 1]; rho(0) = 1 so the gradient accumulator
    starts from the first sample alone.  The power-law family records
    (alpha, beta, scale) so validity can be decided analytically.
    """

    gamma_fn: Callable
    rho_fn: Callable
    family: str = "custom"
    alpha: Optional[float] = None
    beta: Optional[float] = None
    scale: Optional[float] = None

    def gamma(self, t):
        if t < 1:
            raise ContractError("gamma is defined for t >= 1")
        g = float(self.gamma_fn(t))
        if not 0.0 < g <= 1.0:
            raise InvariantError(f"gamma({t}) = {g} outside (0, 1]")
        return g

    def rho(self, t):
        if t < 0:
            raise ContractError("rho is defined for t >= 0")
        r = 1.0 if t == 0 else float(self.rho_fn(t))
        if not 0.0 < r <= 1.0:
            raise InvariantError(f"rho({t}) = {r} outside (0, 1]")
        return r


def make_schedule_power(alpha, beta, scale=1.0):
    """Power-law schedule gamma^t = scale/(t+2)^alpha, rho^t = scale/(t+2)^beta.

    Both are clamped at 1, and the first steps are pinned to
    gamma(1) = rho(0) = rho(1) = 1; the formulas take over from t = 2.
    """
    if alpha <= 0 or beta <= 0 or scale <= 0:
        raise ConfigError(
            f"schedule parameters must be positive, got alpha={alpha}, "
            f"beta={beta}, scale={scale}")

    def gamma_fn(t):
        return 1.0 if t == 1 else min(scale / (t + 2.0) ** alpha, 1.0)

    def rho_fn(t):
        return 1.0 if t <= 1 else min(scale / (t + 2.0) ** beta, 1.0)

    return StepSchedule(gamma_fn, rho_fn, family="power",
                        alpha=float(alpha), beta=float(beta),
                        scale=float(scale))


@dataclass(frozen=True)
class ConditionReport:
    name: str
    status: str   # holds | fails | heuristic-holds | heuristic-fails | not checkable
    detail: str

    @property
    def ok(self):
        return self.status in ("holds", "heuristic-holds")


@dataclass(frozen=True)
class ScheduleReport:
    valid: bool
    analytic: bool
    conditions: tuple

    def condition(self, name):
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_schedule(sched, horizon=10000):
    """Check the stepsize conditions needed for convergence.

    Power-law schedules are decided analytically: (i) the gamma exponent
    must satisfy 0.5 < alpha <= 1 (summable squares, divergent sum),
    (ii) likewise 0.5 < beta <= 1 for rho, and (iii) beta < alpha so
    gamma/rho -> 0.  For arbitrary sequences the same three are scored
    by numerical proxies over `horizon` terms and flagged heuristic.
    The remaining condition couples the stepsizes to sample-path
    Lipschitz constants the library cannot compute; it is reported as
    not checkable (see README on schedule validity).
    """
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    if sched.family == "power":
        a, b = sched.alpha, sched.beta
        conds = [
            ConditionReport(
                "i", "holds" if 0.5 < a <= 1.0 else "fails",
                f"gamma exponent alpha={a}: need 0.5 < alpha <= 1"),
            ConditionReport(
                "ii", "holds" if 0.5 < b <= 1.0 else "fails",
                f"rho exponent beta={b}: need 0.5 < beta <= 1"),
            ConditionReport(
                "iii", "holds" if b < a else "fails",
                f"need beta < alpha so gamma/rho -> 0; got alpha={a}, "
                f"beta={b}"),
        ]
        analytic = True
    else:
        # tail decay exponents via log-log fit; exact thresholds are
        # undecidable at a finite horizon, so everything is heuristic
        tfull = np.arange(1, horizon + 1)
        gfull = np.array([sched.gamma(int(t)) for t in tfull])
        rfull = np.array([sched.rho(int(t)) for t in tfull])

        def tail_slope(vals):
            lo = max(2, horizon // 10)
            ts = np.unique(np.geomspace(lo, horizon, num=48).astype(int))
            if len(ts) < 3:
                ts = tfull
            if len(ts) < 2:
                return np.nan
            y = np.log(np.maximum(vals[ts - 1], 1e-300))
            return -np.polyfit(np.log(ts), y, 1)[0]

        ghat, rhat = tail_slope(gfull), tail_slope(rfull)
        s1, s2 = gfull.sum(), (gfull ** 2).sum()
        p1, p2 = rfull.sum(), (rfull ** 2).sum()
        gone = gfull[-1] <= 0.25 * gfull[:10].max()
        rone = rfull[-1] <= 0.5 * rfull[:10].max()
        cond_i = bool(gone and 0.5 < ghat <= 1.02)
        cond_ii = bool(rone and 0.5 < rhat <= 1.02)
        ratio = gfull / np.maximum(rfull, 1e-300)
        cond_iii = bool(ratio[-1] <= 0.9 * ratio[max(0, horizon // 10 - 1)])
        conds = [
            ConditionReport(
                "i", "heuristic-holds" if cond_i else "heuristic-fails",
                f"gamma tail exponent estimate {ghat:.3f} (need in "
                f"(0.5, 1]); partial sums over {horizon} terms: sum "
                f"{s1:.3f}, square sum {s2:.3f}"),
            ConditionReport(
                "ii", "heuristic-holds" if cond_ii else "heuristic-fails",
                f"rho tail exponent estimate {rhat:.3f} (need in "
                f"(0.5, 1]); partial sums over {horizon} terms: sum "
                f"{p1:.3f}, square sum {p2:.3f}"),
            ConditionReport(
                "iii", "heuristic-holds" if cond_iii else "heuristic-fails",
                f"gamma/rho moved from {ratio[max(0, horizon // 10 - 1)]:.4f} "
                f"to {ratio[-1]:.4f} over the last decade of {horizon} "
                f"terms"),
        ]
        analytic = False
    conds.append(ConditionReport(
        "iv", "not checkable",
        "requires Lipschitz constants of the sampled gradients along the "
        "trajectory, which are unavailable to the library; see README, "
        "section on schedule validity"))
    valid = all(c.ok for c in conds[:3])
    return ScheduleReport(valid=valid, analytic=analytic,
                          conditions=tuple(conds))


class SurrogateKind(Enum):
    CONDITIONAL_GRADIENT = "conditional-gradient"
    SINGLE_CONVEX = "single-convex"
    PRICING = "pricing"
    DC = "dc"


@dataclass(frozen=True)
class SurrogatePolicy:
    """Surrogate family selector plus per-user proximal weights."""

    kind: SurrogateKind
    tau: Sequence = (0.0,)

    def __post_init__(self):
        taus = np.atleast_1d(np.asarray(self.tau, dtype=float))
        if taus.min() < 0:
            raise ConfigError("proximal weights must be nonnegative")
        object.__setattr__(self, "tau", tuple(float(t) for t in taus))

    def tau_for(self, i):
        if len(self.tau) == 1:
            return self.tau[0]
        return self.tau[i]

    @property
    def tau_min(self):
        return min(self.tau)


@dataclass(frozen=True)
class SurrogateParts:
    """Problem-supplied ingredients of one user's surrogate.

    kept(x_i) evaluates the retained convex sum at (x_i, x_{-i}^t) for
    the current sample; kept_grad is its block gradient; price is the
    gradient sum of the linearized terms at x^t.  kept may be None when
    nothing is retained.
    """

    kept: Optional[Callable]
    kept_grad: Optional[Callable]
    price: np.ndarray


@dataclass
class Surrogate:
    """Strongly convex per-user subproblem, minimize orientation.

    value(x) = rho*kept(x) + <x - anchor, linear> + tau*||x - anchor||^2
    with linear = rho*price + (1 - rho)*f_prev.
    """

    user: int
    anchor: np.ndarray
    linear: np.ndarray
    tau: float
    rho: float
    kept: Optional[Callable] = None
    kept_grad: Optional[Callable] = None

    def value(self, x):
        d = x - self.anchor
        v = real_inner(d, self.linear) + self.tau * real_inner(d, d)
        if self.kept is not None:
            v += self.rho * self.kept(x)
        return v

    def grad(self, x):
        g = self.linear + 2.0 * self.tau * (x - self.anchor)
        if self.kept_grad is not None:
            g = g + self.rho * np.asarray(self.kept_grad(x))
        return g


def build_surrogate(problem, policy, x_t, sample, f_prev, rho, user):
    """Assemble user `user`'s convex subproblem for one sample.

    The conditional-gradient policy keeps nothing and linearizes the
    whole sampled objective, so it works for every problem; the other
    policies need the problem to expose surrogate_parts.
    """
    if not 0.0 < rho <= 1.0:
        raise ContractError(f"rho must lie in (0, 1], got {rho}")
    tau = policy.tau_for(user)
    anchor = x_t.blocks[user]
    f_block = np.asarray(f_prev.blocks[user] if isinstance(
        f_prev, GradientAccumulator) else f_prev)
    if policy.kind is SurrogateKind.CONDITIONAL_GRADIENT:
        price = np.asarray(problem.sample_grad(x_t, sample, user))
        kept = kept_grad = None
    else:
        getter = getattr(problem, "surrogate_parts", None)
        if getter is None:
            raise ConfigError(
                f"problem {type(problem).__name__} does not expose "
                f"surrogate parts for policy {policy.kind.value}")
        parts = getter(x_t, sample, user, policy.kind)
        kept, kept_grad, price = parts.kept, parts.kept_grad, parts.price
    linear = rho * np.asarray(price) + (1.0 - rho) * f_block
    return Surrogate(user=user, anchor=anchor.copy(), linear=linear,
                     tau=tau, rho=rho, kept=kept, kept_grad=kept_grad)


def stationarity_gap(x_t, x_hat):
    """Max over users of the Euclidean norm of the block difference."""
    if x_t.num_users != x_hat.num_users:
        raise ContractError("profiles have different user counts")
    gap = 0.0
    for a, b in zip(x_t.blocks, x_hat.blocks):
        if a.shape != b.shape:
            raise ContractError("mismatched block shapes")
        gap = max(gap, float(np.linalg.norm(a - b)))
    return gap


def update_iterate(x_t, x_hat, gamma):
    """Convex-combination step x_t + gamma*(x_hat - x_t), blockwise."""
    if not 0.0 < gamma <= 1.0:
        raise ContractError(f"gamma must lie in (0, 1], got {gamma}")
    x_t.validate()
    x_hat.validate()
    blocks = []
    for a, b in zip(x_t.blocks, x_hat.blocks):
        nb = a + gamma * (b - a)
        if nb.ndim == 2:
            nb = 0.5 * (nb + nb.conj().T)
        blocks.append(nb)
    return StrategyProfile(blocks, list(x_t.budgets))


@dataclass
class RunTrajectory:
    """Recorded history of one driver execution."""

    seed: int
    schedule: StepSchedule
    policy: SurrogatePolicy
    ts: list = field(default_factory=list)
    profiles: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    objective_samples: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    final_profile: Optional[StrategyProfile] = None
    final_accumulator: Optional[GradientAccumulator] = None

    def record(self, t, profile, gap, obj, wall):
        self.ts.append(t)
        self.profiles.append(profile)
        self.gaps.append(gap)
        self.objective_samples.append(obj)
        self.wall_clock.append(wall)


def run(problem, sched, policy, seed, T, threads=None, gap_tol=None,
        validate_every=1):
    """Execute the decomposition for T iterations.

    Per iteration: draw the sample, compute every user's best response
    (in parallel when threads > 1; the solves are pure so results do not
    depend on scheduling), record the pre-update snapshot, refresh the
    gradient accumulator at the pre-update point, then take the convex-
    combination step.  Deterministic for fixed (seed, config).
    """
    if T < 0:
        raise ContractError("T must be >= 0")
    x = problem.initial_profile()
    x.validate()
    f_acc = GradientAccumulator.zeros_like(x)
    traj = RunTrajectory(seed=seed, schedule=sched, policy=policy)
    t_start = time.perf_counter()
    users = range(problem.num_users)
    pool = ThreadPoolExecutor(max_workers=threads) if threads and threads > 1 \
        else None
    try:
        for t in range(T):
            sample = problem.draw_sample(seed, t)
            rho_t = sched.rho(t)

            def respond(i):
                try:
                    return problem.best_response(x, sample, f_acc.blocks[i],
                                                 rho_t, i, policy)
                except ConfigError:
                    raise
                except Exception as exc:
                    raise SolverError(
                        f"best response failed at iteration {t} for user "
                        f"{i}: {exc}", iteration=t, user=i) from exc

            if pool is not None:
                hat_blocks = list(pool.map(respond, users))
            else:
                hat_blocks = [respond(i) for i in users]
            x_hat = StrategyProfile(hat_blocks, list(x.budgets))
            gap = stationarity_gap(x, x_hat)
            traj.record(t, x.copy(), gap,
                        float(problem.objective_sample(x, sample)),
                        time.perf_counter() - t_start)
            grads = [problem.sample_grad(x, sample, i) for i in users]
            f_acc = f_acc.updated(grads, rho_t, t)
            x = update_iterate(x, x_hat, sched.gamma(t + 1))
            if validate_every and t % validate_every == 0:
                x.validate()
            if gap_tol is not None and gap <= gap_tol:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    traj.record(len(traj.ts), x.copy(), np.nan, np.nan,
                time.perf_counter() - t_start)
    traj.final_profile = x
    traj.final_accumulator = f_acc
    return traj
