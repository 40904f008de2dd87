"""Block coordinate descent over the four variable blocks.

Small-scale loop: transmit beamforming then reflection. Large-scale loop:
association (with rounding) then deployment. The outer loop alternates the two
until the exact objective stabilises. After every block the exact objective is
audited; association changes are logged as events and exempt from the
monotonicity audit.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .association import optimize_association
from .channel import ChannelModel, ChannelSet
from .deployment import make_deployment_problem, optimize_deployment
from .rates import DecisionState, RateReport, effective_rows, evaluate, is_feasible
from .reflection import aligned_phases, cascade_vectors, group_score, optimize_aris, reflection_loop
from .scenario import ScenarioConfig, Topology, clip_to_region, group_centers, rng_stream, sample_topology
from .transmit import LinkContext, initialize_beamformers, repair_power, tx_beamforming_loop

PROPOSED = "proposed"
FIXED_DEPLOYMENT = "fixed-deployment"
WITHOUT_RIS = "without-ris"
SCHEMES = (PROPOSED, FIXED_DEPLOYMENT, WITHOUT_RIS)

AUDIT_TOL = 1e-4


@dataclass
class AuditEntry:
    outer: int
    block: str
    objective: float
    event: bool = False
    iterations: int = 0
    time: float = 0.0


@dataclass
class BcdTrace:
    objective: list = field(default_factory=list)        # exact objective after each outer iteration
    audit: list = field(default_factory=list)            # AuditEntry after every block
    iterations: dict = field(default_factory=lambda: dict(tx=0, reflection=0, association=0,
                                                          deployment=0, small=0, large=0, outer=0))
    residuals: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    caps_hit: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    events: list = field(default_factory=list)           # (outer, description, delta)

    def audit_violations(self, tol: float = AUDIT_TOL) -> list:
        out = []
        for prev, cur in zip(self.audit, self.audit[1:]):
            if not cur.event and cur.objective < prev.objective - tol:
                out.append((cur.outer, cur.block, prev.objective - cur.objective))
        return out

    @property
    def converged(self) -> bool:
        return "outer-cap" not in self.caps_hit

    def hit(self, name: str):
        self.caps_hit[name] = self.caps_hit.get(name, 0) + 1


@dataclass
class BcdResult:
    state: DecisionState
    report: RateReport
    trace: BcdTrace
    channels: ChannelSet
    topology: Topology
    scheme: str = PROPOSED
    status: str = "ok"


class _Run:
    """Mutable working set of one BCD run."""

    def __init__(self, cfg: ScenarioConfig, topo: Topology, model: ChannelModel, channels: ChannelSet,
                 state: DecisionState, scheme: str, rng: np.random.Generator):
        self.cfg, self.topo, self.model = cfg, topo, model
        self.channels, self.state, self.scheme, self.rng = channels, state, scheme, rng
        self.trace = BcdTrace()
        self.outer = 0
        self.best = None

    def ctx(self) -> LinkContext:
        rows = effective_rows(self.channels, self.state.theta, self.state.chi, self.topo.user_group)
        return LinkContext(rows, self.topo.user_group, self.topo.user_is_eve, self.topo.noise,
                           self.cfg.upsilon, self.cfg.P_T, self.cfg.K)

    def report(self) -> RateReport:
        return evaluate(self.state, self.channels, self.topo, self.cfg)

    def record(self, block: str, event: bool = False, iterations: int = 0, t0: float = 0.0) -> float:
        rep = self.report()
        self.trace.audit.append(AuditEntry(self.outer, block, rep.objective, event, iterations,
                                           time.perf_counter() - t0 if t0 else 0.0))
        if is_feasible(rep.residuals) and (self.best is None or rep.objective > self.best[0] + 1e-12):
            self.best = (rep.objective, self.state.copy(), self.channels)
        return rep.objective


def _stacked_small(state: DecisionState, P_T: float, with_reflection: bool = True) -> np.ndarray:
    W = np.einsum("ki,kj->kij", state.w, state.w.conj()) / P_T
    if not with_reflection:
        return W.ravel()
    return np.concatenate([W.ravel(), np.exp(1j * state.theta).ravel()])


def _stacked_large(state: DecisionState, H: float) -> np.ndarray:
    return np.concatenate([state.chi.ravel(), state.q.ravel() / H])


def _rel_change(new, old) -> float:
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-12))


def run_small_scale(run: _Run, with_reflection: bool = True) -> None:
    cfg = run.cfg
    for s in range(1, cfg.max_small_iters + 1):
        prev = _stacked_small(run.state, cfg.P_T, with_reflection)
        t0 = time.perf_counter()
        tx = tx_beamforming_loop(run.state.w, run.ctx(), cfg.eps_t, cfg.max_tx_iters, cfg.n_rand_tx, run.rng)
        run.state.w, run.state.W = tx.w, None
        run.trace.iterations["tx"] += tx.iterations
        if tx.iterations >= cfg.max_tx_iters:
            run.trace.hit("tx-cap")
        if tx.status != conic.OPTIMAL:
            run.trace.flags.append(f"tx-{tx.status}")
        run.record("tx", iterations=tx.iterations, t0=t0)
        if with_reflection and cfg.J > 0 and run.state.chi.size and run.state.chi.max() > 0.5:
            t0 = time.perf_counter()
            res = reflection_loop(run.state, run.channels, run.topo, cfg, run.rng)
            n = sum(r.iterations for r in res if r is not None)
            run.trace.iterations["reflection"] += n
            if any(r is not None and r.iterations >= cfg.max_ris_iters for r in res):
                run.trace.hit("reflection-cap")
            run.record("reflection", iterations=n, t0=t0)
        run.trace.iterations["small"] += 1
        if _rel_change(_stacked_small(run.state, cfg.P_T, with_reflection), prev) <= cfg.eps_s:
            return
    run.trace.hit("small-cap")


def _group_objective(run: _Run, k: int, channels: ChannelSet, j: int, theta_j) -> tuple[float, float]:
    users = run.topo.group_users(k)
    c = cascade_vectors(channels.h[users], channels.G[j], channels.g[j, users], run.state.w)
    own = np.full(len(users), k)
    return group_score(c, theta_j, own, run.topo.user_is_eve[users], run.topo.noise[users],
                       run.cfg.upsilon[own])


def _association_block(run: _Run, tau: float, relocate: bool) -> int:
    cfg = run.cfg
    t0 = time.perf_counter()
    before = run.report().objective
    res = optimize_association(run.state, run.model, run.channels, tau, relocate)
    run.trace.iterations["association"] += res.iterations
    if res.iterations >= cfg.max_assoc_iters:
        run.trace.hit("association-cap")
    if res.status != conic.OPTIMAL:
        run.trace.flags.append(f"association-{res.status}")
    if not res.changed:
        run.record("association", iterations=res.iterations, t0=t0)
        return res.iterations
    old = np.argmax(run.state.chi, axis=1)
    new = np.argmax(res.chi, axis=1)
    run.state.chi = res.chi
    for j in range(cfg.J):
        if old[j] != new[j] and (j, int(new[j])) in res.prospective:
            q, theta = res.prospective[(j, int(new[j]))]
            run.state.q[j] = q
            run.state.theta[j] = theta
            run.channels = run.model.move(run.channels, j, q)
    run.state.w = repair_power(run.state.w, run.ctx())
    after = run.record("association", event=True, iterations=res.iterations, t0=t0)
    run.trace.events.append((run.outer, f"association {old.tolist()} -> {new.tolist()}", after - before))
    return res.iterations


def _deployment_block(run: _Run) -> int:
    cfg, topo = run.cfg, run.topo
    t0 = time.perf_counter()
    total_iters = 0
    for j in range(cfg.J):
        if run.state.chi[j].max() < 0.5:
            continue
        k = int(np.argmax(run.state.chi[j]))
        users = topo.group_users(k)
        own = np.full(len(users), k)
        ch = run.channels
        dp = make_deployment_problem(ch.h[users], ch.G[j], ch.g_hat[j, users], run.state.theta[j],
                                     run.state.w, topo.user_xy[users], topo.noise[users], own,
                                     topo.user_is_eve[users], cfg.upsilon[own],
                                     cfg.path_loss_exponent, topo.aris_altitude, cfg.region)
        res = optimize_deployment(dp, run.state.q[j], cfg.eps_d, cfg.max_deploy_iters)
        total_iters += res.iterations
        if res.iterations >= cfg.max_deploy_iters:
            run.trace.hit("deployment-cap")
        if np.linalg.norm(res.q - run.state.q[j]) <= 1e-9:
            continue
        q_new = clip_to_region(cfg, res.q)
        moved = run.model.move(ch, j, q_new)
        old_obj, _ = _group_objective(run, k, ch, j, run.state.theta[j])
        # the fading phases change with position: re-optimise this ARIS's phases there
        c = cascade_vectors(moved.h[users], moved.G[j], moved.g[j, users], run.state.w)
        starts = [run.state.theta[j]]
        intended = np.flatnonzero(~topo.user_is_eve[users])
        obj_now = [group_score(c, th, own, topo.user_is_eve[users], topo.noise[users], cfg.upsilon[own])
                   for th in starts]
        weakest = intended[np.argmin([_single_rate(c, starts[0], u, k, topo.noise[users]) for u in intended])]
        starts.append(aligned_phases(c[weakest, k]))
        obj_now.append(group_score(c, starts[-1], own, topo.user_is_eve[users], topo.noise[users], cfg.upsilon[own]))
        feas = [i for i, (o, e) in enumerate(obj_now) if e <= 1e-9]
        if not feas:
            continue
        start = starts[max(feas, key=lambda i: obj_now[i][0])]
        ris = optimize_aris(start, c, own, topo.user_is_eve[users], topo.noise[users], cfg.upsilon[own],
                            cfg.eps_r, cfg.max_ris_iters, cfg.n_rand_ris, run.rng)
        run.trace.iterations["reflection"] += ris.iterations
        new_obj, excess = group_score(c, ris.theta, own, topo.user_is_eve[users], topo.noise[users],
                                      cfg.upsilon[own])
        if excess <= 1e-9 and new_obj >= old_obj:
            run.state.q[j] = q_new
            run.state.theta[j] = ris.theta
            run.channels = moved
    run.trace.iterations["deployment"] += total_iters
    run.record("deployment", iterations=total_iters, t0=t0)
    return total_iters


def _single_rate(c, theta, u, k, noise) -> float:
    amp = c[u, :, 0] + c[u, :, 1:] @ np.exp(1j * np.asarray(theta))
    p = np.abs(amp) ** 2
    return float(np.log2(1 + p[k] / (p.sum() - p[k] + noise[u])))


def run_large_scale(run: _Run, tau: float, relocate: bool = True, deploy: bool = True) -> None:
    cfg = run.cfg
    if cfg.J == 0 or run.scheme == WITHOUT_RIS:
        return
    H = run.topo.aris_altitude
    for n in range(1, cfg.max_large_iters + 1):
        prev = _stacked_large(run.state, H)
        _association_block(run, tau, relocate)
        if deploy:
            _deployment_block(run)
        run.trace.iterations["large"] += 1
        if _rel_change(_stacked_large(run.state, H), prev) <= cfg.eps_l:
            return
    run.trace.hit("large-cap")


def initial_state(cfg: ScenarioConfig, topo: Topology, channels: ChannelSet, scheme: str,
                  q0=None) -> DecisionState:
    J, K = cfg.J, cfg.K
    chi = np.zeros((J, K))
    if scheme != WITHOUT_RIS:
        chi[np.arange(J), np.arange(J)] = 1.0
    if q0 is None:
        q0 = fixed_positions(cfg) if scheme == FIXED_DEPLOYMENT else topo.aris_initial
    state = DecisionState(np.zeros((K, cfg.L), dtype=complex), np.zeros((J, cfg.N)), chi, q0)
    rows = effective_rows(channels, state.theta, state.chi, topo.user_group)
    ctx = LinkContext(rows, topo.user_group, topo.user_is_eve, topo.noise, cfg.upsilon, cfg.P_T, K)
    state.w = initialize_beamformers(ctx)
    return state


def fixed_positions(cfg: ScenarioConfig) -> np.ndarray:
    """Default positions of the fixed-deployment baseline: the first J group centers."""
    return group_centers(cfg)[: cfg.J].copy()


def run_bcd(cfg: ScenarioConfig, seed: int, scheme: str = PROPOSED, q0=None,
            topo: Topology | None = None) -> BcdResult:
    """Full optimisation for one (scenario, seed). Deterministic given its inputs.

    Schemes: 'proposed' (all blocks), 'fixed-deployment' (no deployment block, ARISs
    stay where placed) and 'without-ris' (transmit beamforming only, no reflection).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    t_start = time.perf_counter()
    topo = topo if topo is not None else sample_topology(cfg, seed)
    model = ChannelModel(cfg, topo, seed)
    if q0 is None:
        q0 = fixed_positions(cfg) if scheme == FIXED_DEPLOYMENT else topo.aris_initial
    q0 = np.asarray(q0, dtype=float).reshape(cfg.J, 2)
    channels = model.build(q0)
    state = initial_state(cfg, topo, channels, scheme, q0)
    # with no ARIS every scheme is the transmit-only pipeline; share its random stream
    stream = WITHOUT_RIS if cfg.J == 0 else scheme
    run = _Run(cfg, topo, model, channels, state, scheme, rng_stream(seed, "bcd", stream))
    init_obj = run.record("init")
    if not is_feasible(run.report().residuals):
        rep = run.report()
        run.trace.flags.append("infeasible-start")
        return BcdResult(state, rep, run.trace, channels, topo, scheme, "infeasible-start")
    prev = init_obj
    with_ris = scheme != WITHOUT_RIS
    for t in range(1, cfg.max_outer_iters + 1):
        run.outer = t
        t0 = time.perf_counter()
        run_small_scale(run, with_reflection=with_ris)
        if with_ris:
            tau = min(cfg.penalty * 2 ** (t - 1), 1e3) if cfg.penalty_escalation else cfg.penalty
            run_large_scale(run, tau, relocate=scheme == PROPOSED, deploy=scheme == PROPOSED)
        rep = run.report()
        run.trace.objective.append(rep.objective)
        run.trace.residuals.append(rep.residuals)
        run.trace.wall_time.append(time.perf_counter() - t0)
        run.trace.iterations["outer"] += 1
        if abs(rep.objective - prev) <= cfg.eps * max(1.0, abs(prev)):
            break
        prev = rep.objective
    else:
        run.trace.hit("outer-cap")
    best_obj, best_state, best_channels = run.best
    report = evaluate(best_state, best_channels, topo, cfg)
    run.trace.wall_time.append(time.perf_counter() - t_start)
    violations = run.trace.audit_violations()
    if violations:
        run.trace.flags.append(f"audit-violations:{len(violations)}")
    return BcdResult(best_state, report, run.trace, best_channels, topo, scheme)


def run_fixed_association(cfg: ScenarioConfig, seed: int, chi, q0=None) -> BcdResult:
    """Small-scale optimisation only, with the association held at ``chi`` and the
    ARISs at ``q0`` (default: the fixed-deployment positions)."""
    topo = sample_topology(cfg, seed)
    model = ChannelModel(cfg, topo, seed)
    q0 = fixed_positions(cfg) if q0 is None else np.asarray(q0, dtype=float).reshape(cfg.J, 2)
    channels = model.build(q0)
    state = initial_state(cfg, topo, channels, FIXED_DEPLOYMENT, q0)
    state.chi = np.asarray(chi, dtype=float).copy()
    state.w = initialize_beamformers(LinkContext(
        effective_rows(channels, state.theta, state.chi, topo.user_group), topo.user_group,
        topo.user_is_eve, topo.noise, cfg.upsilon, cfg.P_T, cfg.K))
    run = _Run(cfg, topo, model, channels, state, FIXED_DEPLOYMENT,
               rng_stream(seed, "bcd", "fixed-association"))
    prev = run.record("init")
    if not is_feasible(run.report().residuals):
        return BcdResult(state, run.report(), run.trace, channels, topo, FIXED_DEPLOYMENT,
                         "infeasible-start")
    for t in range(1, cfg.max_outer_iters + 1):
        run.outer = t
        run_small_scale(run)
        obj = run.report().objective
        run.trace.objective.append(obj)
        if abs(obj - prev) <= cfg.eps * max(1.0, abs(prev)):
            break
        prev = obj
    best_obj, best_state, best_channels = run.best
    return BcdResult(best_state, evaluate(best_state, best_channels, topo, cfg), run.trace,
                     best_channels, topo, FIXED_DEPLOYMENT)
