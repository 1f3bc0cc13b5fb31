"""Episode orchestration, the whole-body baseline, the evaluation grid,
and CSV exporters.

One RL action decodes into an NMPC setting that is held for ``t_action``
seconds while control steps execute; transitions are reported per action.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .action_codec import (
    CodecConfig,
    DecodedAction,
    DiscreteTemplate,
    TargetType,
    build_discrete_table,
    decode_discrete,
)
from .env_sim import Environment, Outcome, RewardParams, WorldConfig, step_reward
from .robot_models import (
    KinematicChain,
    ModelIndex,
    base_pose,
    extract_model_state,
    map_whole_body_control,
)
from .slq_nmpc import (
    MpcController,
    NmpcProblem,
    RbfParams,
    SlqSettings,
    SolverDivergedError,
    constraint_groups,
)

METRICS_HEADER = ["method", "success_pct", "rollover_pct", "collision_pct",
                  "boundary_pct", "maxstep_pct",
                  "calls_base", "mean_dtp_base_ms", "std_dtp_base_ms",
                  "calls_arm", "mean_dtp_arm_ms", "std_dtp_arm_ms",
                  "calls_wb", "mean_dtp_wb_ms", "std_dtp_wb_ms"]
TRAJECTORY_HEADER = ["episode", "step", "t", "x_b", "y_b", "model_index",
                     "target_type", "outcome"]

GRID_BASE_X = 3
GRID_BASE_Y = 3
GRID_GOAL_X = 3
GRID_YAW = 4
GRID_RUNS = 5


@dataclass(frozen=True)
class PipelineConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    rewards: RewardParams = field(default_factory=RewardParams)
    slq: SlqSettings = field(default_factory=SlqSettings)
    rbf: RbfParams = field(default_factory=RbfParams)
    codec: CodecConfig = field(default_factory=CodecConfig)
    t_action: float = 1.0
    dt_ctrl: float = 0.05
    timing_mode: str = "synchronous"    # or "realtime"

    def __post_init__(self):
        if self.t_action < self.dt_ctrl:
            raise ValueError("t_action must be >= dt_ctrl")
        if self.timing_mode not in ("synchronous", "realtime"):
            raise ValueError("timing_mode must be synchronous or realtime")


@dataclass
class TraceRow:
    rl_step: int
    control_step: int
    t: float
    x_b: float
    y_b: float
    model_index: int
    target_type: str


@dataclass
class EpisodeResult:
    outcome: Outcome
    rl_steps: int
    cumulative_reward: float
    solve_times: dict[int, list[float]]   # model index -> wall-clock seconds
    trace: list[TraceRow]

    def solve_count(self, m: int) -> int:
        return len(self.solve_times.get(m, []))


@dataclass
class MetricsTable:
    method: str
    episodes: int
    success_pct: float
    rollover_pct: float
    collision_pct: float
    boundary_pct: float
    maxstep_pct: float
    calls: dict[int, int]
    mean_dtp_ms: dict[int, float]
    std_dtp_ms: dict[int, float]


# ---------------------------------------------------------------------------
# Policies (picklable, so grid workers can fan out)
# ---------------------------------------------------------------------------

class BaselinePolicy:
    """Always the whole-body model with the goal as target."""

    def __call__(self, obs: np.ndarray, table: tuple[DiscreteTemplate, ...],
                 rng: np.random.Generator) -> int:
        return wb_goal_index(table)


@dataclass
class CyclingPolicy:
    """Rotates through a fixed set of action indices; timing benchmarks only."""

    indices: tuple[int, ...]
    _pos: int = 0

    def __call__(self, obs, table, rng) -> int:
        idx = self.indices[self._pos % len(self.indices)]
        self._pos += 1
        return idx


@dataclass
class CheckpointPolicy:
    """Greedy rollout of a saved DQN checkpoint."""

    path: str

    def __post_init__(self):
        self._agent = None

    def __call__(self, obs, table, rng) -> int:
        if self._agent is None:
            from .drl import load_checkpoint
            self._agent = load_checkpoint(self.path)
        return self._agent.act(obs, rng, greedy=True)

    def __getstate__(self):
        return {"path": self.path}

    def __setstate__(self, state):
        self.path = state["path"]
        self._agent = None


def wb_goal_index(table: tuple[DiscreteTemplate, ...]) -> int:
    for i, tpl in enumerate(table):
        if tpl.m == ModelIndex.WHOLE_BODY and tpl.target_type == TargetType.GOAL:
            return i
    raise ValueError("table has no whole-body/goal entry")


# ---------------------------------------------------------------------------
# Episode loops
# ---------------------------------------------------------------------------

def _problem_for(decoded: DecodedAction, wb_state: np.ndarray,
                 chain: KinematicChain, cfg: PipelineConfig) -> NmpcProblem:
    groups = constraint_groups(chain)
    active = tuple(replace(groups[kind], active=True)
                   for kind in decoded.active_constraints)
    return NmpcProblem(
        m=decoded.m, chain=chain, costs=decoded.costs, constraints=active,
        x0=extract_model_state(decoded.m, wb_state), target=decoded.target,
        settings=cfg.slq, rbf_params=cfg.rbf,
        frozen_base=wb_state[:3].copy() if decoded.m == ModelIndex.ARM else None,
        frozen_arm=wb_state[3:].copy() if decoded.m == ModelIndex.BASE else None)


def run_episode(policy, env: Environment, table: tuple[DiscreteTemplate, ...],
                cfg: PipelineConfig, seed: int | None = None,
                base_pose_init=None, goal_position=None,
                on_transition=None) -> EpisodeResult:
    """Run one episode: select, decode, solve, execute, reward, repeat."""
    chain = env.chain
    obs = env.reset(seed=seed, base_pose_init=base_pose_init,
                    goal_position=goal_position)
    rng = np.random.default_rng(None if seed is None else seed + 1)
    solve_times: dict[int, list[float]] = {0: [], 1: [], 2: []}
    trace: list[TraceRow] = []
    cumulative = 0.0
    rl_step = 0
    control_step = 0
    outcome = Outcome.RUNNING

    while not env.done:
        idx = policy(obs, table, rng)
        wb = env.state.wb
        decoded = decode_discrete(table, idx, chain, cfg.codec,
                                  base_pose(wb[:3]), env.state.goal, wb[3:])
        env.begin_action()
        prev = env.state.snapshot()
        prev_obs = obs
        controller = MpcController(_problem_for(decoded, wb, chain, cfg))
        t_p = 0.0
        while t_p < cfg.t_action - 1e-12 and not env.done:
            x_m = extract_model_state(decoded.m, env.state.wb)
            try:
                u_m, dt_p, _ = controller.step(x_m)
                solve_times[int(decoded.m)].append(dt_p)
            except SolverDivergedError:
                u_m = np.zeros(len(controller.problem.costs.r_u))
                dt_p = 0.0
            u_wb = map_whole_body_control(decoded.m, u_m, chain)
            obs, done, outcome = env.step(u_wb, cfg.dt_ctrl)
            trace.append(TraceRow(rl_step, control_step, env.state.t,
                                  float(env.state.wb[0]), float(env.state.wb[1]),
                                  int(decoded.m), decoded.target_type.value))
            control_step += 1
            t_p += cfg.dt_ctrl if cfg.timing_mode == "synchronous" else max(dt_p, 1e-9)
        outcome, r_term = env.end_action()
        breakdown = step_reward(prev, env.state, decoded.m, env.rewards, chain,
                                terminal_reward=r_term, outcome=outcome,
                                com_threshold=env.world.com_threshold)
        cumulative += breakdown.total
        rl_step += 1
        if on_transition is not None:
            on_transition(prev_obs, idx, breakdown.total, obs, env.done)

    return EpisodeResult(outcome, rl_step, cumulative, solve_times, trace)


def run_episode_baseline(env: Environment, table, cfg: PipelineConfig,
                         seed=None, base_pose_init=None,
                         goal_position=None) -> EpisodeResult:
    """Whole-body NMPC toward the goal at every step, no policy."""
    return run_episode(BaselinePolicy(), env, table, cfg, seed=seed,
                       base_pose_init=base_pose_init, goal_position=goal_position)


# ---------------------------------------------------------------------------
# Evaluation grid
# ---------------------------------------------------------------------------

def grid_configurations(world: WorldConfig) -> list[tuple[tuple[float, float, float], np.ndarray]]:
    """108 (base pose, goal position) pairs: 3 base-x x 3 base-y x 3 goal-x
    x 4 equidistant yaw values over [-pi, pi)."""
    def _lin(lo, hi, n):
        return np.linspace(lo, hi, n)

    xs = _lin(*world.spawn_x_range, GRID_BASE_X)
    ys = _lin(*world.spawn_y_range, GRID_BASE_Y)
    gxs = _lin(*world.goal_x_range, GRID_GOAL_X)
    yaws = -np.pi + 2.0 * np.pi * np.arange(GRID_YAW) / GRID_YAW
    configs = []
    for x in xs:
        for y in ys:
            for gx in gxs:
                for yaw in yaws:
                    configs.append(((float(x), float(y), float(yaw)),
                                    np.array([gx, world.goal_y, world.goal_z])))
    return configs


def _grid_worker(args):
    policy, cfg, chain, config_idx, run_idx, master_seed, base_init, goal_pos = args
    env = Environment(cfg.world, cfg.rewards, chain)
    table = build_discrete_table(chain, cfg.codec)
    seed = int(np.random.SeedSequence(
        [master_seed, config_idx, run_idx]).generate_state(1)[0] % (2 ** 31))
    result = run_episode(policy, env, table, cfg, seed=seed,
                         base_pose_init=base_init, goal_position=goal_pos)
    return config_idx, run_idx, result


def eval_grid(policy, cfg: PipelineConfig, chain: KinematicChain,
              master_seed: int = 0, workers: int = 1,
              method_name: str = "policy") -> tuple[MetricsTable, list[EpisodeResult]]:
    """Run the full 108-configuration x 5-run protocol and aggregate."""
    configs = grid_configurations(cfg.world)
    jobs = [(policy, cfg, chain, ci, ri, master_seed, base_init, goal_pos)
            for ci, (base_init, goal_pos) in enumerate(configs)
            for ri in range(GRID_RUNS)]
    if workers > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(workers) as pool:
            outputs = pool.map(_grid_worker, jobs)
    else:
        outputs = [_grid_worker(job) for job in jobs]
    outputs.sort(key=lambda o: (o[0], o[1]))
    results = [o[2] for o in outputs]
    return aggregate_metrics(results, method_name), results


def aggregate_metrics(results: list[EpisodeResult], method: str) -> MetricsTable:
    n = len(results)
    counts = {o: sum(1 for r in results if r.outcome == o) for o in Outcome}

    def pct(o: Outcome) -> float:
        return 100.0 * counts[o] / n if n else 0.0

    calls, means, stds = {}, {}, {}
    for m in (0, 1, 2):
        times = [t for r in results for t in r.solve_times.get(m, [])]
        calls[m] = len(times)
        means[m] = 1e3 * float(np.mean(times)) if times else 0.0
        stds[m] = 1e3 * float(np.std(times)) if times else 0.0
    return MetricsTable(method, n, pct(Outcome.SUCCESS), pct(Outcome.ROLLOVER),
                        pct(Outcome.COLLISION), pct(Outcome.BOUNDARY),
                        pct(Outcome.MAX_STEP), calls, means, stds)


# ---------------------------------------------------------------------------
# Exporters
# ---------------------------------------------------------------------------

def export_metrics(tables: list[MetricsTable], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for t in tables:
            writer.writerow([t.method, t.success_pct, t.rollover_pct,
                             t.collision_pct, t.boundary_pct, t.maxstep_pct,
                             t.calls[0], t.mean_dtp_ms[0], t.std_dtp_ms[0],
                             t.calls[1], t.mean_dtp_ms[1], t.std_dtp_ms[1],
                             t.calls[2], t.mean_dtp_ms[2], t.std_dtp_ms[2]])


def export_trajectories(results: list[EpisodeResult], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRAJECTORY_HEADER)
        for ep, r in enumerate(results):
            for row in r.trace:
                writer.writerow([ep, row.control_step, row.t, row.x_b, row.y_b,
                                 row.model_index, row.target_type,
                                 r.outcome.value])


def render_trajectory_map(trajectory_csv: str, out_svg: str) -> None:
    """Optional 2D trajectory map colored by model, rendered from the CSV."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    episodes: dict[int, list[tuple[float, float, int]]] = {}
    with open(trajectory_csv, newline="") as f:
        for row in csv.DictReader(f):
            episodes.setdefault(int(row["episode"]), []).append(
                (float(row["x_b"]), float(row["y_b"]), int(row["model_index"])))
    colors = {0: "green", 1: "blue", 2: "magenta"}
    fig, ax = plt.subplots(figsize=(6, 6))
    for rows in episodes.values():
        xs = [r[0] for r in rows]
        ys = [r[1] for r in rows]
        cs = [colors[r[2]] for r in rows]
        ax.scatter(xs, ys, c=cs, s=4)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    fig.savefig(out_svg)
    plt.close(fig)
