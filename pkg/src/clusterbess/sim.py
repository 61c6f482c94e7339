"""Closed-loop receding-horizon simulation of a clustered battery pack.

Each control step measures the plant, re-clusters on schedule, aggregates the
clusters, solves the horizon dispatch program, splits the first-step cluster
powers to cells, and advances every cell by one forward-Euler step.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .aggregate import ClusterSet, aggregate_all, singleton_set, squared_voltage_bound
from .cell import CellParams, quadratic_current
from .clustering import (
    ClusterAssignment,
    FeatureScaler,
    kmeans,
    max_deviation,
    select_k_gap,
    select_k_tolerance,
)
from .conic import DEFAULT_TOL, solve
from .dispatch import HorizonInput, build_inter_cluster, slack_sums
from .pack import Pack, PackState, advance, table2_population, uniform_currents
from .split import IntraBounds, power_to_current, split_equal, split_optimal_all, split_resistance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    n_cells: int = 400
    seed: int = 0
    soc_range: tuple[float, float] = (0.70, 0.75)
    temp_range: tuple[float, float] = (301.0, 305.0)
    resistance_range: tuple[float, float] = (31.3e-3, 41.3e-3)
    cell: CellParams = field(default_factory=CellParams)
    dt: float = 1.0
    horizon: int = 10
    duration: float = 2400.0
    t_env: float = 298.0
    scheme: str = "optimal"
    # cell-level balancing bounds (flags and intra-cluster program)
    dq: float = 0.005
    dT: float = 0.5
    # cluster-level balancing bounds (originals for the adaptive update)
    dq_bar: float = 0.003
    dT_bar: float = 0.5
    bound_floor: float = 0.2
    slack_tol: float = 1e-6
    relax_bounds: bool = True
    # penalties per cell and per unit slack
    lambda_E: float = 20.0
    lambda_T: float = 2.0
    lambda_E_cell: float = 20.0
    lambda_T_cell: float = 2.0
    # intra-cluster balancing bounds used by the optimal split
    dq_intra: float = 0.0015
    dT_intra: float = 0.25
    # clustering
    recluster_period: int = 1
    k_max: int = 20
    k_method: str = "tolerance"  # tolerance | gap | fixed
    k_fixed: int | None = None
    tol_q: float = 0.004
    tol_T: float = 0.8
    gap_refs: int = 10
    cell_level: bool = False
    # numerics and options
    solver_tol: float = DEFAULT_TOL
    exact_current: bool = False
    resistance_with_converter: bool = False
    snapshot_every: int = 0

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError("n_cells must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        steps = self.duration / self.dt
        if self.duration <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ValueError("duration must be a positive multiple of dt")
        if not 0 < self.bound_floor <= 1:
            raise ValueError("bound_floor must lie in (0, 1]")
        if self.scheme not in ("equal", "resistance", "optimal"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.k_method not in ("tolerance", "gap", "fixed"):
            raise ValueError(f"unknown k_method {self.k_method!r}")
        if self.recluster_period < 1 or self.k_max < 1:
            raise ValueError("recluster_period and k_max must be at least 1")
        for name in ("dq", "dT", "dq_bar", "dT_bar", "dq_intra", "dT_intra", "lambda_E", "lambda_T", "lambda_E_cell", "lambda_T_cell"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    def population(self) -> tuple[Pack, PackState]:
        return table2_population(
            self.n_cells,
            self.seed,
            soc_range=self.soc_range,
            temp_range=self.temp_range,
            resistance_range=self.resistance_range,
            base=self.cell,
        )


@dataclass
class AdaptiveBounds:
    dq_orig: float
    dT_orig: float
    dq: float
    dT: float
    floor: float = 0.2

    @classmethod
    def start(cls, dq: float, dT: float, floor: float) -> AdaptiveBounds:
        return cls(dq, dT, dq, dT, floor)


def update_bounds(
    bounds: AdaptiveBounds,
    slack_E: float,
    slack_T: float,
    max_dev_q: float,
    max_dev_T: float,
    threshold: float = 1e-9,
    margin_q: float | None = None,
    margin_T: float | None = None,
) -> AdaptiveBounds:
    """Tighten the cluster bounds by half the largest in-cluster deviation.

    Applies only while the matching slack sum is at most ``threshold`` and
    never leaves [floor * original, original].  A positive cell-level margin
    (distance of the worst cell from its own bound) relaxes the bound back
    toward the original by that amount.
    """
    if max_dev_q < 0 or max_dev_T < 0:
        raise ValueError("deviations must be non-negative")

    def tighten(orig, cur, slack, dev, margin):
        new = cur
        if slack <= threshold:
            new = min(max(orig - 0.5 * dev, bounds.floor * orig), orig)
        if margin is not None and margin > 0:
            new = min(orig, new + margin)
        return new

    return replace(
        bounds,
        dq=tighten(bounds.dq_orig, bounds.dq, slack_E, max_dev_q, margin_q),
        dT=tighten(bounds.dT_orig, bounds.dT, slack_T, max_dev_T, margin_T),
    )


@dataclass(frozen=True)
class StepMetrics:
    time: float
    loss: float
    cumulative_loss: float
    demand: float
    delivered: float
    model_delivered: float
    predicted_loss: float
    k: int
    slack_E: float
    slack_T: float
    soc_min: float
    soc_max: float
    soc_mean: float
    temp_min: float
    temp_max: float
    temp_mean: float
    soc_balanced: bool
    temp_balanced: bool
    dq_bar: float
    dT_bar: float
    status: str
    fallback: bool
    clamped: int
    solver_time: float


METRIC_FIELDS = tuple(f.name for f in fields(StepMetrics))


@dataclass
class SimTrace:
    steps: list[StepMetrics] = field(default_factory=list)
    snapshots: list[tuple[float, np.ndarray, np.ndarray]] = field(default_factory=list)
    label: str = ""

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.steps])

    @property
    def final_loss(self) -> float:
        return self.steps[-1].cumulative_loss if self.steps else 0.0

    def first_time(self, flag: str) -> float | None:
        """Time at the end of the first step whose flag is true."""
        for m in self.steps:
            if getattr(m, flag):
                return m.time
        return None

    @property
    def fallback_fraction(self) -> float:
        return float(np.mean(self.column("fallback"))) if self.steps else 0.0

    def optimizer_time(self) -> float:
        return float(self.column("solver_time").sum()) if self.steps else 0.0

    def summary(self) -> dict:
        if not self.steps:
            return {}
        return {
            "cumulative_loss_J": self.final_loss,
            "soc_balance_time_s": self.first_time("soc_balanced"),
            "temp_balance_time_s": self.first_time("temp_balanced"),
            "mean_solver_time_s": float(self.column("solver_time").mean()),
            "max_solver_time_s": float(self.column("solver_time").max()),
            "mean_k": float(self.column("k").mean()),
            "fallback_fraction": self.fallback_fraction,
        }


class Profile:
    """Minimal demand-series protocol used by the simulator."""

    def __init__(self, power, dt: float = 1.0):
        self.power = np.asarray(power, dtype=float)
        self.dt = dt

    def window(self, start: int, length: int) -> np.ndarray:
        idx = np.minimum(np.arange(start, start + length), len(self.power) - 1)
        return self.power[idx]


def _as_profile(profile, dt) -> Profile:
    if hasattr(profile, "window"):
        return profile
    return Profile(profile, dt)


def _check_profile(config: SimConfig, profile):
    if len(profile.power) < config.steps:
        raise ValueError(f"profile has {len(profile.power)} samples, run needs {config.steps}")


def _metrics(config, t, step, pack, state_before, res, currents, demand, cum, k, slacks, bounds, status, fallback, clamped, solver_time, model_delivered, predicted_loss):
    loss = float(res.loss.sum())
    q, T = res.state.soc, res.state.temperature
    return StepMetrics(
        time=t,
        loss=loss,
        cumulative_loss=cum,
        demand=float(demand),
        delivered=float(res.output.sum()),
        model_delivered=float(model_delivered),
        predicted_loss=float(predicted_loss),
        k=int(k),
        slack_E=float(slacks[0]),
        slack_T=float(slacks[1]),
        soc_min=float(q.min()),
        soc_max=float(q.max()),
        soc_mean=float(q.mean()),
        temp_min=float(T.min()),
        temp_max=float(T.max()),
        temp_mean=float(T.mean()),
        soc_balanced=bool(np.max(np.abs(q - q.mean())) <= config.dq),
        temp_balanced=bool(np.max(np.abs(T - T.mean())) <= config.dT),
        dq_bar=float(bounds.dq) if bounds else 0.0,
        dT_bar=float(bounds.dT) if bounds else 0.0,
        status=status,
        fallback=bool(fallback),
        clamped=int(clamped),
        solver_time=float(solver_time),
    )


class _Clusterer:
    """Keeps labels and raw-space centroids between control steps."""

    def __init__(self, config: SimConfig, pack: Pack):
        self.config = config
        self.pack = pack
        self.assignment: ClusterAssignment | None = None
        self.raw_centroids: np.ndarray | None = None

    def update(self, state: PackState, step: int) -> ClusterAssignment:
        cfg = self.config
        raw = np.column_stack([state.soc, state.temperature, self.pack.resistance])
        scaler = FeatureScaler.fit(raw)
        X = scaler.transform(raw)
        warm = None if self.raw_centroids is None else scaler.transform(self.raw_centroids)
        seed = [cfg.seed, step]
        k_max = min(cfg.k_max, self.pack.n)
        if cfg.k_method == "fixed":
            k = min(cfg.k_fixed or k_max, self.pack.n)
            a = kmeans(X, k, seed=seed + [k], init=warm if warm is not None and len(warm) == k else None)
        elif cfg.k_method == "gap":
            k = select_k_gap(X, k_max=k_max, B=cfg.gap_refs, seed=cfg.seed * 100003 + step)
            a = kmeans(X, k, seed=seed + [k], init=warm if warm is not None and len(warm) == k else None)
        else:
            prev = None if self.assignment is None else self.assignment.k
            a = select_k_tolerance(X, state.soc, state.temperature, k_max, cfg.tol_q, cfg.tol_T, seed=seed, warm=warm, start=prev)
        a = _relabel(a)
        max_deviation(a, state.soc, state.temperature)
        self.assignment = a
        self.raw_centroids = scaler.inverse(a.centroids)
        return a


def _relabel(a: ClusterAssignment) -> ClusterAssignment:
    """Drop empty clusters so labels are 0..k-1 with every cluster non-empty."""
    used = np.unique(a.labels)
    if len(used) == a.k:
        return a
    remap = np.full(a.k, -1)
    remap[used] = np.arange(len(used))
    return replace(a, labels=remap[a.labels], centroids=a.centroids[used], k=len(used))


def _fallback_plan(cs: ClusterSet, demand: float, prev_cell_plan, labels):
    """Shifted previous plan mapped onto the current clusters, else a Q-proportional split."""
    k = cs.k
    if prev_cell_plan is not None:
        ps = np.bincount(labels, weights=prev_cell_plan[0], minlength=k)
        pl = np.bincount(labels, weights=prev_cell_plan[1], minlength=k)
        return ps, pl
    share = cs.capacity / cs.capacity.sum() * demand
    i = quadratic_current(cs.u, cs.resistance, share)
    return cs.u * i, cs.resistance * i * i


def run(config: SimConfig, profile, pack: Pack | None = None, state: PackState | None = None, label: str = "") -> SimTrace:
    """Closed-loop simulation under the configured split scheme."""
    profile = _as_profile(profile, config.dt)
    _check_profile(config, profile)
    if pack is None or state is None:
        pack, state = config.population()
    state = state.copy()
    cfg = config
    clusterer = _Clusterer(cfg, pack)
    bounds = AdaptiveBounds.start(cfg.dq_bar, cfg.dT_bar, cfg.bound_floor)
    intra = IntraBounds(cfg.dq_intra, cfg.dT_intra, cfg.lambda_E_cell, cfg.lambda_T_cell)
    trace = SimTrace(label=label or cfg.scheme)
    cum = 0.0
    prev_plan = None  # per-cell (P_S, P_l) share of the previous solve's t = 1 slice
    assignment = None

    for step in range(cfg.steps):
        t = step * cfg.dt
        if cfg.cell_level:
            labels, k = np.arange(pack.n), pack.n
        else:
            if assignment is None or step % cfg.recluster_period == 0:
                assignment = clusterer.update(state, step)
            labels, k = assignment.labels, assignment.k

        tick = time.perf_counter()
        cs = singleton_set(pack, state) if cfg.cell_level else aggregate_all(pack, state, labels, k)
        demand = profile.window(step, cfg.horizon)
        inp = HorizonInput(
            cs,
            demand,
            dt=cfg.dt,
            t_env=cfg.t_env,
            dq_bar=bounds.dq,
            dT_bar=bounds.dT,
            lambda_E=cfg.lambda_E,
            lambda_T=cfg.lambda_T,
            exact_current=cfg.exact_current,
        )
        problem = build_inter_cluster(inp)
        sol = solve(problem, tol=cfg.solver_tol)
        solver_time = time.perf_counter() - tick
        lay = problem.layout
        if sol.optimal:
            ps, pl = sol.x[lay.P_S[:, 0]], sol.x[lay.P_l[:, 0]]
            slacks = slack_sums(sol, lay, 0)
            nxt = min(1, cfg.horizon - 1)
            weight = pack.capacity / cs.capacity[labels]
            prev_plan = (sol.x[lay.P_S[:, nxt]][labels] * weight, sol.x[lay.P_l[:, nxt]][labels] * weight)
            fallback = False
        else:
            log.warning("step %d: dispatch solve %s; using fallback plan", step, sol.status)
            ps, pl = _fallback_plan(cs, demand[0], prev_plan, labels)
            slacks = (np.inf, np.inf)
            prev_plan = None
            fallback = True

        if not cfg.cell_level and sol.optimal:
            a = assignment
            margin_q = margin_T = None
            if cfg.relax_bounds:
                margin_q = cfg.dq - float(np.max(np.abs(state.soc - state.soc.mean())))
                margin_T = cfg.dT - float(np.max(np.abs(state.temperature - state.temperature.mean())))
            bounds = update_bounds(
                bounds, slacks[0], slacks[1], float(a.max_dev_q.max()), float(a.max_dev_T.max()), cfg.slack_tol, margin_q, margin_T
            )

        split_fallback = False
        split_time = 0.0
        if cfg.cell_level:
            power = ps.copy()
        elif cfg.scheme == "optimal":
            tick = time.perf_counter()
            power, fb = split_optimal_all(
                pack, state, labels, ps, pl, intra, cfg.dt, cfg.t_env, cfg.solver_tol, cfg.resistance_with_converter
            )
            split_time = time.perf_counter() - tick
            split_fallback = bool(fb.any())
        else:
            power = np.empty(pack.n)
            for j in range(k):
                idx = np.flatnonzero(labels == j)
                if len(idx) == 1:
                    power[idx] = ps[j]
                elif cfg.scheme == "equal":
                    power[idx] = split_equal(ps[j], len(idx))
                else:
                    r = pack.r_total[idx] if cfg.resistance_with_converter else pack.resistance[idx]
                    power[idx] = split_resistance(ps[j], r)

        u = pack.ocv(state.soc)
        currents, clamped = power_to_current(u, power, pack.current_limits)
        res = advance(pack, state, currents, cfg.t_env, cfg.dt)
        cum += float(res.loss.sum()) * cfg.dt
        trace.steps.append(
            _metrics(
                cfg, t + cfg.dt, step, pack, state, res, currents, demand[0], cum, k, slacks, bounds,
                sol.status if not split_fallback else f"{sol.status}+split-fallback",
                fallback, int(clamped.sum()), solver_time + split_time,
                float(np.sum(ps - pl)), float(np.sum(pl)),
            )
        )
        state = res.state
        if cfg.snapshot_every and (step + 1) % cfg.snapshot_every == 0:
            trace.snapshots.append((t + cfg.dt, state.soc.copy(), state.temperature.copy()))
    return trace


def baseline_uniform(config: SimConfig, profile, pack: Pack | None = None, state: PackState | None = None) -> SimTrace:
    """No cell-level control: every module delivers P_out / n."""
    profile = _as_profile(profile, config.dt)
    _check_profile(config, profile)
    if pack is None or state is None:
        pack, state = config.population()
    state = state.copy()
    trace = SimTrace(label="uniform")
    cum = 0.0
    for step in range(config.steps):
        demand = float(profile.window(step, 1)[0])
        lo, hi = pack.current_limits
        raw = uniform_currents(pack, state, demand)
        clamped = (raw < lo) | (raw > hi)
        currents = np.clip(raw, lo, hi)
        res = advance(pack, state, currents, config.t_env, config.dt)
        cum += float(res.loss.sum()) * config.dt
        trace.steps.append(
            _metrics(config, (step + 1) * config.dt, step, pack, state, res, currents, demand, cum, 0, (0.0, 0.0), None, "none", False, int(clamped.sum()), 0.0, demand, float(res.loss.sum()))
        )
        state = res.state
        if config.snapshot_every and (step + 1) % config.snapshot_every == 0:
            trace.snapshots.append(((step + 1) * config.dt, state.soc.copy(), state.temperature.copy()))
    return trace


def baseline_cell_level(config: SimConfig, profile, pack: Pack | None = None, state: PackState | None = None) -> SimTrace:
    """The dispatch program with every cell its own cluster."""
    return run(replace(config, cell_level=True), profile, pack, state, label="cell-level")


@dataclass(frozen=True)
class OracleResult:
    objective: float | None
    currents: np.ndarray | None
    feasible_points: int


def oracle_objective(pack: Pack, state: PackState, currents: np.ndarray, config: SimConfig, dq_bar=None, dT_bar=None) -> tuple[np.ndarray, np.ndarray]:
    """One-step dispatch objective and feasibility for rows of candidate currents.

    ``currents`` has shape (m, n).  Loss is exact, (R + R_C) i^2, and every
    constraint of the one-step program is evaluated directly on the plant
    quantities.  Returns (objective, feasible).
    """
    cs = singleton_set(pack, state)
    dq_bar = config.dq_bar if dq_bar is None else dq_bar
    dT_bar = config.dT_bar if dT_bar is None else dT_bar
    I = np.atleast_2d(currents)
    dt = config.dt
    ps = cs.u * I
    pl = cs.resistance * I * I
    lo, hi = pack.current_limits
    ok = np.all((I >= lo - 1e-12) & (I <= hi + 1e-12), axis=1)
    e1 = -ps * dt
    e_lo = 0.5 * cs.capacitance * cs.u_qmin**2 - cs.e0
    e_hi = 0.5 * cs.capacitance * cs.u_qmax**2 - cs.e0
    ok &= np.all((e1 >= e_lo) & (e1 <= e_hi), axis=1)
    tc = cs.thermal_capacitance
    t1 = (1 - dt / (tc * cs.r_conv)) * cs.temperature + dt / tc * pl + dt * config.t_env / (tc * cs.r_conv)
    ok &= np.all((t1 >= pack.temp_limits[0]) & (t1 <= pack.temp_limits[1]), axis=1)
    eps = 2.0 / cs.capacitance * (e1 + cs.e0)
    dE = squared_voltage_bound(cs.alpha, cs.beta, np.full(cs.k, dq_bar))
    xi_e = np.maximum(np.abs(eps - eps.mean(axis=1, keepdims=True)) - dE, 0.0)
    xi_t = np.maximum(np.abs(t1 - t1.mean(axis=1, keepdims=True)) - dT_bar, 0.0)
    obj = pl.sum(axis=1) + config.lambda_E * xi_e.sum(axis=1) + config.lambda_T * xi_t.sum(axis=1)
    return obj, ok


def brute_force_oracle(pack: Pack, state: PackState, demand: float, config: SimConfig, resolution: int = 201) -> OracleResult:
    """Exhaustive one-step search over a current grid for n <= 4 cells.

    The first n-1 currents range over a uniform grid on the current limits;
    the last is pinned by the supply-demand row (low-current root of its
    quadratic), so every candidate meets the demand exactly.
    """
    n = pack.n
    if not 1 <= n <= 4:
        raise ValueError("oracle handles 1 to 4 cells")
    if resolution < 51:
        raise ValueError("grid resolution must be at least 51 points")
    u = pack.ocv(state.soc)
    r = pack.r_total
    axis = np.linspace(*pack.current_limits, resolution)
    if n == 1:
        free = np.zeros((1, 0))
    else:
        free = np.stack(np.meshgrid(*([axis] * (n - 1)), indexing="ij"), axis=-1).reshape(-1, n - 1)
    rest = demand - (u[:-1] * free - r[:-1] * free * free).sum(axis=1)
    disc = u[-1] ** 2 - 4 * r[-1] * rest
    real = disc >= 0
    last = np.where(real, 2 * rest / (u[-1] + np.sqrt(np.maximum(disc, 0.0))), np.nan)
    I = np.column_stack([free, last])[real]
    if I.shape[0] == 0:
        return OracleResult(None, None, 0)
    obj, ok = oracle_objective(pack, state, I, config)
    if not ok.any():
        return OracleResult(None, None, 0)
    best = np.flatnonzero(ok)[np.argmin(obj[ok])]
    return OracleResult(float(obj[best]), I[best].copy(), int(ok.sum()))


def conic_one_step(pack: Pack, state: PackState, demand: float, config: SimConfig):
    """The conic counterpart of the oracle: singleton clusters, H = 1."""
    inp = HorizonInput(
        singleton_set(pack, state),
        [demand],
        dt=config.dt,
        t_env=config.t_env,
        dq_bar=config.dq_bar,
        dT_bar=config.dT_bar,
        lambda_E=config.lambda_E,
        lambda_T=config.lambda_T,
    )
    problem = build_inter_cluster(inp)
    return problem, solve(problem, tol=config.solver_tol)


@dataclass(frozen=True)
class OracleCheck:
    n: int
    demand: float
    oracle: float
    conic: float
    status: str

    @property
    def relative_error(self) -> float:
        return abs(self.conic - self.oracle) / max(abs(self.oracle), 1e-12)


def oracle_instances(n: int, count: int, seed: int = 0, config: SimConfig | None = None, resolution: int = 201) -> list[OracleCheck]:
    """Seeded heterogeneous one-step instances solved by both the oracle and the conic program."""
    config = config or SimConfig(n_cells=n, horizon=1)
    rng = np.random.default_rng([seed, n])
    out = []
    for _ in range(count):
        pack, state = table2_population(
            n,
            rng,
            soc_range=config.soc_range,
            temp_range=config.temp_range,
            resistance_range=config.resistance_range,
            base=config.cell,
        )
        u = pack.ocv(state.soc)
        demand = float(rng.uniform(-0.6, 0.8) * np.sum(u) * pack.current_limits[1])
        oracle = brute_force_oracle(pack, state, demand, config, resolution)
        _, sol = conic_one_step(pack, state, demand, config)
        if oracle.objective is None:
            continue
        out.append(OracleCheck(n, demand, oracle.objective, sol.objective, sol.status))
    return out
