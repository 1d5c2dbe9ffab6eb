"""Experiment driver: collect/train cycles, evaluation, ablations, reports.

A run directory is self-describing: manifest.json holds the exact config
and seed, logs/ holds one CSV per episode plus planner diagnostics,
checkpoints/ holds one model per update, buffer.traj the full replay
buffer, and returns.csv the per-episode summary. Re-running learn with the
manifest's config and seed reproduces the run bit-for-bit in simulated-time
mode.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .cem import CEMConfig, PlannerTask, correlated_noise
from .config import ConfigError, ExperimentConfig
from .model import (DynamicsModel, init_model, load_model, rollout, save_model, train)
from .replay import ReplayBuffer
from .rewards import RewardSpec
from .runtime import EpisodeResult, run_episode, run_policy_episode
from .seeds import substream, substream_seed
from .state import (ACTION_DIM, LEG_NAMES, MOTOR_START, PHASE_START, STATE_DIM,
                    VEL_X, YAW)
from .tg import default_action

log = logging.getLogger(__name__)

RUN_LOG_VERSION = "gaitmpc-run-log v1"
TABLE_VERSION = "gaitmpc-table v1"

STATE_COLUMNS = (
    ["vx", "vy", "vz", "roll", "pitch", "yaw"]
    + [f"{kind}_{leg}" for leg in LEG_NAMES for kind in ("swing", "ext")]
    + [f"phase_{leg}" for leg in LEG_NAMES]
)
ACTION_COLUMNS = (
    [f"a_{kind}_{leg}" for leg in LEG_NAMES for kind in ("swing", "ext")]
    + [f"a_omega_{leg}" for leg in LEG_NAMES]
)


@dataclass
class RunPaths:
    root: Path

    @property
    def logs(self) -> Path:
        return self.root / "logs"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def returns_csv(self) -> Path:
        return self.root / "returns.csv"

    @property
    def buffer(self) -> Path:
        return self.root / "buffer.traj"

    @property
    def final_model(self) -> Path:
        return self.root / "model.ckpt"

    def create(self) -> "RunPaths":
        self.logs.mkdir(parents=True, exist_ok=True)
        self.checkpoints.mkdir(parents=True, exist_ok=True)
        return self


def write_manifest(paths: RunPaths, config: ExperimentConfig, command: str):
    manifest = {
        "command": command,
        "master_seed": config.master_seed,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "package_version": __version__,
        "kernel_backend": kernels.backend(),
    }
    paths.manifest.write_text(json.dumps(manifest, indent=2) + "\n")


def tracking_error(result: EpisodeResult, spec: RewardSpec, dt: float) -> float:
    """Mean |vx - target| over the episode (target at each step's own time)."""
    states = result.log.states
    times = np.arange(len(states)) * dt
    targets = spec.speed_targets(times)
    return float(np.mean(np.abs(states[:, VEL_X] - targets)))


def yaw_rate_error(result: EpisodeResult, spec: RewardSpec, dt: float) -> float:
    states = result.log.state_with_final()
    rates = np.diff(states[:, YAW]) / dt
    return float(np.mean(np.abs(rates - spec.turn_rate)))


def write_episode_log(path: Path, result: EpisodeResult):
    with open(path, "w", newline="") as f:
        f.write(f"# {RUN_LOG_VERSION}\n")
        w = csv.writer(f)
        w.writerow(["step"] + STATE_COLUMNS + ACTION_COLUMNS
                   + ["reward", "plan_seq", "replan"])
        lg = result.log
        for k in range(lg.length):
            w.writerow([int(lg.indices[k])]
                       + [repr(float(v)) for v in lg.states[k]]
                       + [repr(float(v)) for v in lg.actions[k]]
                       + [repr(float(lg.rewards[k])), int(result.plan_seq[k]),
                          int(result.replan_flags[k])])


def read_episode_log(path: Path) -> dict:
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"{path} is missing its version line")
        rows = list(csv.DictReader(f))
    states = np.array([[float(r[c]) for c in STATE_COLUMNS] for r in rows])
    actions = np.array([[float(r[c]) for c in ACTION_COLUMNS] for r in rows])
    rewards = np.array([float(r["reward"]) for r in rows])
    return {"states": states, "actions": actions, "rewards": rewards,
            "steps": np.array([int(r["step"]) for r in rows])}


def write_planner_log(path: Path, result: EpisodeResult):
    with open(path, "w", newline="") as f:
        f.write(f"# {TABLE_VERSION} planner-diagnostics\n")
        w = csv.writer(f)
        w.writerow(["step", "seq", "iteration", "best_return", "elite_mean_return",
                    "mean_sigma", "bad_samples", "degenerate"])
        for entry in result.planner_diag:
            for it in entry["iterations"]:
                w.writerow([entry["step"], entry["seq"], it["iteration"],
                            repr(it["best_return"]), repr(it["elite_mean_return"]),
                            repr(it["mean_sigma"]), it["bad"], int(it["degenerate"])])


def warmup_policy(config: ExperimentConfig, steps: int, rng: np.random.Generator):
    """Smooth random exploration: correlated residual noise around the TG."""
    tg = config.make_tg()
    base = default_action(tg)
    w = config.warmup
    sigma = np.empty(ACTION_DIM)
    sigma[0:8:2] = w.swing_sigma
    sigma[1:8:2] = w.extension_sigma
    sigma[8:12] = w.omega_sigma
    base = base.copy()
    base[8:12] += rng.uniform(-w.omega_bias, w.omega_bias, 4)
    noise = correlated_noise(steps, w.gamma, rng, dim=ACTION_DIM)
    lower, upper = tg.limits.action_lower(), tg.limits.action_upper()
    seq = np.clip(base + sigma * noise, lower, upper)

    def policy(k: int, obs: np.ndarray) -> np.ndarray:
        return seq[min(k, steps - 1)]

    return policy


def _train_seed(config: ExperimentConfig, update_index: int) -> int:
    return int(substream_seed(config.master_seed, "train", update_index).generate_state(1)[0])


def run_learn(config: ExperimentConfig, out_dir: str | Path,
              command: str = "learn") -> Path:
    """Alternate collecting episodes with retraining the dynamics model."""
    paths = RunPaths(Path(out_dir)).create()
    write_manifest(paths, config, command)
    cfg_hash = config.config_hash()

    plant = config.make_plant()
    tg = config.make_tg()
    buffer = ReplayBuffer()
    steps = config.episode_steps
    sched = config.schedule
    phases0 = np.array(config.initial_phases)

    model = init_model(substream(config.master_seed, "init"))
    model_version = 0
    rows: list[dict] = []
    curves: list[dict] = []

    def record(e: int, kind: str, result: EpisodeResult):
        err = tracking_error(result, config.reward, config.dt)
        rows.append({
            "episode": e, "kind": kind, "steps": result.log.length,
            "return": result.episode_return, "tracking_error": err,
            "fell": int(result.fell), "model_version": model_version,
        })
        write_episode_log(paths.logs / f"episode_{e:03d}.csv", result)
        if result.planner_diag:
            write_planner_log(paths.logs / f"planner_{e:03d}.csv", result)
        log.info("episode %d (%s): return %.3f, tracking error %.3f%s",
                 e, kind, result.episode_return, err, " [fell]" if result.fell else "")

    def retrain():
        nonlocal model, model_version
        tc = config.training
        tc = type(tc)(**{**tc.__dict__, "seed": _train_seed(config, model_version)})
        model, curve = train(model, buffer, tc)
        model_version += 1
        save_model(model, paths.checkpoints / f"model_{model_version:03d}.ckpt")
        curves.append({"version": model_version, "curve": curve})

    episode = 0
    for _ in range(min(sched.warmup_episodes, sched.episodes)):
        policy = warmup_policy(config, steps, substream(config.master_seed, "warmup", episode))
        res = run_policy_episode(
            plant, tg, policy, config.reward, config.clock, steps,
            rng_obs=substream(config.master_seed, "plant", episode),
            initial_phases=phases0, seed=config.master_seed, config_hash=cfg_hash)
        buffer.append_episode(res.log)
        record(episode, "warmup", res)
        episode += 1

    if len(buffer) > 0:
        retrain()

    planned = max(0, sched.episodes - sched.warmup_episodes)
    for i in range(planned):
        task = PlannerTask(model=model, tg=tg, reward=config.reward, dt=config.dt)
        res = run_episode(
            plant, task, config.cem, config.clock, steps,
            rng_planner=substream(config.master_seed, "cem", episode),
            rng_obs=substream(config.master_seed, "plant", episode),
            async_mode=config.async_mode, initial_phases=phases0,
            seed=config.master_seed, config_hash=cfg_hash)
        buffer.append_episode(res.log)
        record(episode, "mpc", res)
        episode += 1
        if (i + 1) % sched.episodes_per_update == 0:
            retrain()

    buffer.save(paths.buffer)
    save_model(model, paths.final_model)
    with open(paths.returns_csv, "w", newline="") as f:
        f.write(f"# {TABLE_VERSION} per-episode returns\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["episode", "kind", "steps", "return", "tracking_error",
                    "fell", "model_version"])
        for r in rows:
            w.writerow([r["episode"], r["kind"], r["steps"], repr(r["return"]),
                        repr(r["tracking_error"]), r["fell"], r["model_version"]])
    (paths.root / "training_curves.json").write_text(json.dumps(curves) + "\n")
    return paths.root


def _mpc_episodes(config: ExperimentConfig, model: DynamicsModel, n_episodes: int,
                  seed_tag: tuple, cem: CEMConfig | None = None,
                  reward: RewardSpec | None = None,
                  async_mode: bool | None = None) -> list[EpisodeResult]:
    plant = config.make_plant()
    tg = config.make_tg()
    reward = reward or config.reward
    cem = cem or config.cem
    task = PlannerTask(model=model, tg=tg, reward=reward, dt=config.dt)
    phases0 = np.array(config.initial_phases)
    out = []
    for e in range(n_episodes):
        res = run_episode(
            plant, task, cem, config.clock, config.episode_steps,
            rng_planner=substream(config.master_seed, *seed_tag, "cem", e),
            rng_obs=substream(config.master_seed, *seed_tag, "plant", e),
            async_mode=config.async_mode if async_mode is None else async_mode,
            initial_phases=phases0, seed=config.master_seed,
            config_hash=config.config_hash())
        out.append(res)
    return out


def run_eval(run_dir: str | Path, kind: str, episodes: int = 3,
             turn_rate: float = 0.0, seed: int | None = None,
             checkpoint: str | Path | None = None) -> dict:
    """Evaluate a frozen model under a (possibly unseen) reward."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    config = ExperimentConfig.from_dict(manifest["config"])
    if seed is not None:
        config = config.replaced(master_seed=seed)
    ckpt = Path(checkpoint) if checkpoint else run_dir / "model.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    model = load_model(ckpt)

    reward = RewardSpec(kind=kind, profile=config.reward.profile,
                        turn_rate=turn_rate, weights=config.reward.weights)
    results = _mpc_episodes(config, model, episodes, ("eval", kind), reward=reward)

    per_episode = []
    for e, res in enumerate(results):
        states = res.log.state_with_final()
        mean_vx = float(np.mean(res.log.states[:, VEL_X]))
        mean_yaw_rate = float(np.mean(np.diff(states[:, YAW]) / config.dt))
        per_episode.append({
            "episode": e,
            "return": res.episode_return,
            "tracking_error": tracking_error(res, reward, config.dt),
            "yaw_rate_error": yaw_rate_error(res, reward, config.dt),
            "mean_vx": mean_vx,
            "mean_yaw_rate": mean_yaw_rate,
            "fell": res.fell,
        })
    report = {
        "kind": kind,
        "turn_rate": turn_rate,
        "episodes": per_episode,
        "mean_return": float(np.mean([r["return"] for r in per_episode])),
        "mean_tracking_error": float(np.mean([r["tracking_error"] for r in per_episode])),
        "mean_yaw_rate_error": float(np.mean([r["yaw_rate_error"] for r in per_episode])),
    }
    out = run_dir / f"eval_{kind}.json"
    out.write_text(json.dumps(report, indent=2) + "\n")
    return report


ABLATION_AXES = {
    "multistep_n": [1, 5, 10, 20],
    "iterations": [1, 3, 5, 10],
    "gamma": [0.0, 0.3, 0.5, 0.9],
    "horizon_ms": [150, 300, 450, 600],
    "async": ["on", "off"],
    "tg": ["on", "off"],
}


def open_loop_velocity_error(model: DynamicsModel, episode_log, horizon: int,
                             stride: int = 25) -> float:
    """Mean |predicted vx - logged vx| over `horizon`-step open-loop rollouts."""
    states = episode_log.states
    actions = episode_log.actions
    errs = []
    for start in range(0, len(states) - horizon, stride):
        hist = np.array([states[max(0, start - j)] for j in range(3, -1, -1)])
        pred = rollout(model, hist, actions[start:start + horizon])
        truth = states[start + 1:start + horizon + 1]
        errs.append(np.mean(np.abs(pred[:, VEL_X] - truth[:, VEL_X])))
    return float(np.mean(errs))


def run_ablate(config: ExperimentConfig, axis: str, out_dir: str | Path,
               source_run: str | Path | None = None,
               episodes_per_cell: int = 5) -> Path:
    """Sweep one axis, all other parameters fixed; emit a comparison table.

    CEM axes and the async axis share one dynamics model and replay buffer
    (from source_run, or from a fresh learn run executed here). The
    multistep_n axis retrains per cell on the shared buffer; the tg axis
    runs a full learn cycle per cell since it changes the data collection.
    """
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; "
                          f"choose from {sorted(ABLATION_AXES)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    values = ABLATION_AXES[axis]
    table_path = out_dir / f"ablate_{axis}.csv"
    rows: list[dict] = []

    if axis == "tg":
        for value in values:
            cell_cfg = config.replaced(tg={"enabled": value == "on"})
            run_path = run_learn(cell_cfg, out_dir / f"tg_{value}",
                                 command=f"ablate tg={value}")
            with open(Path(run_path) / "returns.csv") as f:
                f.readline()
                cell_rows = [r for r in csv.DictReader(f) if r["kind"] == "mpc"]
            tail = cell_rows[-3:]
            rows.append({
                "value": value,
                "return_mean": float(np.mean([float(r["return"]) for r in tail])),
                "return_std": float(np.std([float(r["return"]) for r in tail])),
                "tracking_error": float(np.mean([float(r["tracking_error"]) for r in tail])),
                "episodes": len(tail),
            })
        _write_table(table_path, axis, rows)
        return table_path

    if source_run is None:
        prep_dir = out_dir / "prep"
        source_run = run_learn(config, prep_dir, command=f"ablate prep {axis}")
    source_run = Path(source_run)
    model = load_model(source_run / "model.ckpt")
    buffer = ReplayBuffer.load(source_run / "buffer.traj")

    if axis == "multistep_n":
        heldout = _mpc_episodes(config, model, 1, ("ablate", axis, "heldout"))[0]
        for value in values:
            tc = config.training
            tc = type(tc)(**{**tc.__dict__, "n": value,
                             "seed": _train_seed(config, 9000 + value)})
            cell_model, _ = train(init_model(substream(config.master_seed, "init")),
                                  buffer, tc)
            pred_err = open_loop_velocity_error(cell_model, heldout.log, horizon=75)
            # cells share episode substreams so they differ only in the axis
            results = _mpc_episodes(config, cell_model, episodes_per_cell,
                                    ("ablate", axis))
            rets = [r.episode_return for r in results]
            rows.append({
                "value": value,
                "return_mean": float(np.mean(rets)),
                "return_std": float(np.std(rets)),
                "open_loop_vx_error_75": pred_err,
                "episodes": len(rets),
            })
    else:
        for value in values:
            cem = config.cem
            async_mode = None
            if axis == "iterations":
                cem = CEMConfig(**{**cem.__dict__, "iterations": value})
            elif axis == "gamma":
                cem = CEMConfig(**{**cem.__dict__, "gamma": value})
            elif axis == "horizon_ms":
                steps = int(round(value / 1000.0 / config.dt))
                cem = CEMConfig(**{**cem.__dict__, "horizon": steps})
            elif axis == "async":
                async_mode = value == "on"
            results = _mpc_episodes(config, model, episodes_per_cell,
                                    ("ablate", axis), cem=cem,
                                    async_mode=async_mode)
            rets = [r.episode_return for r in results]
            errs = [tracking_error(r, config.reward, config.dt) for r in results]
            rows.append({
                "value": value,
                "return_mean": float(np.mean(rets)),
                "return_std": float(np.std(rets)),
                "tracking_error": float(np.mean(errs)),
                "episodes": len(rets),
            })

    _write_table(table_path, axis, rows)
    return table_path


def _write_table(path: Path, axis: str, rows: list[dict]):
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        f.write(f"# {TABLE_VERSION} ablation axis={axis}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])


def run_report(run_dir: str | Path) -> list[Path]:
    """Emit plot-ready CSVs from a finished run directory."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    episode_logs = sorted((run_dir / "logs").glob("episode_*.csv")) \
        if (run_dir / "logs").exists() else []
    missing = []
    if not manifest_path.exists():
        missing.append(str(manifest_path))
    if not episode_logs:
        missing.append(str(run_dir / "logs" / "episode_*.csv"))
    if missing:
        raise FileNotFoundError(
            "run directory is missing required files: " + ", ".join(missing))

    manifest = json.loads(manifest_path.read_text())
    config = ExperimentConfig.from_dict(manifest["config"])
    written: list[Path] = []

    # speed-tracking profile for every episode
    speed_path = run_dir / "report_speed_tracking.csv"
    with open(speed_path, "w", newline="") as f:
        f.write(f"# {TABLE_VERSION} speed-tracking\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["episode", "step", "t", "vx", "v_target"])
        for path in episode_logs:
            e = int(path.stem.split("_")[1])
            data = read_episode_log(path)
            for k in range(len(data["states"])):
                t = data["steps"][k] * config.dt
                w.writerow([e, data["steps"][k], repr(float(t)),
                            repr(float(data["states"][k, VEL_X])),
                            repr(float(config.reward.speed_at(t)))])
    written.append(speed_path)

    # gait pattern of the final episode: swing, phase, stance flag per leg
    gait_path = run_dir / "report_gait.csv"
    data = read_episode_log(episode_logs[-1])
    stance_boundary = config.tg_params.stance_phase
    with open(gait_path, "w", newline="") as f:
        f.write(f"# {TABLE_VERSION} gait-pattern (stance: phase < boundary)\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "t"]
                   + [f"swing_{leg}" for leg in LEG_NAMES]
                   + [f"phase_{leg}" for leg in LEG_NAMES]
                   + [f"stance_{leg}" for leg in LEG_NAMES])
        for k in range(len(data["states"])):
            s = data["states"][k]
            swings = [s[MOTOR_START + 2 * i] for i in range(4)]
            phases = [s[PHASE_START + i] for i in range(4)]
            stance = [int(p < stance_boundary) for p in phases]
            w.writerow([data["steps"][k], repr(float(data["steps"][k] * config.dt))]
                       + [repr(float(v)) for v in swings]
                       + [repr(float(v)) for v in phases] + stance)
    written.append(gait_path)

    # open-loop velocity prediction error vs horizon, per checkpoint
    ckpts = sorted((run_dir / "checkpoints").glob("model_*.ckpt")) \
        if (run_dir / "checkpoints").exists() else []
    if ckpts:
        from .replay import TrajectoryLog
        last = read_episode_log(episode_logs[-1])
        L = len(last["states"])
        traj = TrajectoryLog(states=last["states"], actions=last["actions"],
                             rewards=last["rewards"], final_state=last["states"][-1])
        pred_path = run_dir / "report_prediction_error.csv"
        horizon = min(75, L - 1)
        with open(pred_path, "w", newline="") as f:
            f.write(f"# {TABLE_VERSION} open-loop |vx| error vs horizon\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["model", "horizon", "vx_error"])
            for ck in ckpts:
                m = load_model(ck)
                errs = _error_vs_horizon(m, traj, horizon)
                for h, err in enumerate(errs, start=1):
                    w.writerow([ck.stem, h, repr(float(err))])
        written.append(pred_path)
    return written


def _error_vs_horizon(model: DynamicsModel, traj, horizon: int,
                      stride: int = 50) -> np.ndarray:
    states, actions = traj.states, traj.actions
    acc = np.zeros(horizon)
    count = 0
    for start in range(0, len(states) - horizon, stride):
        hist = np.array([states[max(0, start - j)] for j in range(3, -1, -1)])
        pred = rollout(model, hist, actions[start:start + horizon])
        truth = states[start + 1:start + horizon + 1]
        acc += np.abs(pred[:, VEL_X] - truth[:, VEL_X])
        count += 1
    return acc / max(count, 1)
