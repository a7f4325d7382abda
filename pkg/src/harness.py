"""
Experiment runner: builds environments and agents from a config, runs seeded jobs,
persists traces, and aggregates summaries and plot data.

Output layout under the experiment directory:

    config.resolved.json            every default materialized
    traces/<agent>/seed-<n>.csv     per-step trace (deterministic)
    traces/<agent>/seed-<n>.meta.json
    checkpoints/<agent>/seed-<n>.json   final tree-agent state
    checkpoints/<agent>/seed-<n>.partial.json   in-progress job state, removed on completion
    summary.json, timings.json      aggregates (include wall-clock seconds)
    plotdata.csv                    step, agent, mean, sd
"""

import json
import logging
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

import config as config_module
from baselines import LinearAgent, OracleAgent, RandomAgent, TreeBootstrapAgent, UCB1NormalAgent
from datasets import DatasetSchema, load_classification_dataset
from environments import ClassificationBanditEnv, ClassificationDataset, LinearEncoder, RegretTrace
from experiment_config import AgentSpec, ExperimentConfig, config_hash
from policies import BanditAgent, Timings, TreeEnsembleAgent
from road_network import EDGE_CONTEXT_SCHEMA, NavigationEnv, RoadNetwork, generate_grid_network
from tree_core import FeatureMatrix, FeatureSchema, FeatureVector
from utils.path_utils import resolve_data_file
from utils.rng import derive_seed

logger = logging.getLogger(__name__)

# Random rounds before the first fit for combinatorial agents; 10 per base arm outruns any horizon.
NAVIGATION_INITIAL_ROUNDS = 10


class RunSummary(BaseModel):
    """Final cumulative regret across seeds for one agent."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    agent: str
    seeds: list[int]
    final_regrets: list[float]
    mean: float
    sd: float = Field(..., description="Sample standard deviation across seeds; 0 for a single seed.")
    wall_clock_seconds: float | None = None
    config_hash: str


@dataclass(frozen=True)
class AgentVariant:
    label: str
    spec: AgentSpec
    batch_size: int


@dataclass
class Resources:
    """Data shared read-only by every job of an experiment."""

    dataset: ClassificationDataset | None = None
    network: RoadNetwork | None = None


@dataclass
class JobResult:
    label: str
    seed: int
    final_regret: float
    timings: dict[str, float] = field(default_factory=dict)
    resumed: bool = False


def slugify(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=\-]+", "_", label)


def _format_value(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def _apply_sweep(variant: AgentVariant, parameter: str, value: float) -> AgentVariant:
    label = f"{variant.label}[{parameter}={_format_value(value)}]"
    if parameter == "feedback_batch_size":
        if not float(value).is_integer() or value < 1:
            raise ValueError(f"feedback_batch_size sweep values must be positive integers, got {value}")
        return AgentVariant(label, variant.spec, int(value))
    block, key = parameter.split(".", 1)
    data = variant.spec.model_dump()
    if key in ("max_depth", "n_trees"):
        if not float(value).is_integer():
            raise ValueError(f"{parameter} sweep values must be integers, got {value}")
        value = int(value)
    data[block] = {**data[block], key: value}
    return AgentVariant(label, AgentSpec.model_validate(data), variant.batch_size)


def expand_sweeps(config: ExperimentConfig) -> list[AgentVariant]:
    """One variant per agent and combination of swept values, labelled ``agent[param=value]``."""
    variants = [AgentVariant(a.label, a, a.feedback_batch_size or config.feedback_batch_size) for a in config.agents]
    for sweep in config.sweeps:
        variants = [_apply_sweep(v, sweep.parameter, value) for v in variants for value in sweep.values]
    slugs = [slugify(v.label) for v in variants]
    if len(set(slugs)) != len(slugs):
        raise ValueError(f"agent labels collide after sweep expansion: {slugs}")
    return variants


def _search_dirs(base_dir: Path | None) -> list[Path]:
    dirs = []
    if base_dir is not None:
        dirs.append(base_dir)
    if config_module.settings.data_dir is not None:
        dirs.append(config_module.settings.data_dir)
    dirs.append(Path.cwd())
    return dirs


def _require_file(file_path: str, base_dir: Path | None, what: str) -> Path:
    resolved = resolve_data_file(file_path, _search_dirs(base_dir))
    if resolved is None:
        raise FileNotFoundError(f"{what} not found: {file_path}")
    return resolved


def load_resources(config: ExperimentConfig, base_dir: Path | None = None) -> Resources:
    """Load the dataset or network once, checking the horizon against the data."""
    env = config.environment
    if env.kind == "classification":
        schema = DatasetSchema.load(_require_file(env.dataset_schema, base_dir, "dataset schema"))
        dataset = load_classification_dataset(_require_file(env.dataset, base_dir, "dataset"), schema)
        if config.horizon > len(dataset):
            raise ValueError(f"horizon exceeds dataset: {config.horizon} > {len(dataset)} rows in {schema.name}")
        return Resources(dataset=dataset)
    if env.network is not None:
        network = RoadNetwork.load(_require_file(env.network, base_dir, "road network"))
    else:
        grid = env.grid
        network = generate_grid_network(grid.rows, grid.cols, grid.spacing, grid.seed)
    network.instance(env.instance)
    return Resources(network=network)


def validate_experiment(config: ExperimentConfig, base_dir: Path | None = None) -> Resources:
    """Everything run_experiment checks before the first round; returns the loaded resources."""
    expand_sweeps(config)
    return load_resources(config, base_dir)


def _navigation_encoder(network: RoadNetwork) -> LinearEncoder:
    hours = np.arange(24, dtype=np.float64)
    mats = [network.context_matrix(h) for h in hours]
    stacked = FeatureMatrix(
        np.vstack([m.numeric for m in mats]), np.vstack([m.categorical for m in mats]), EDGE_CONTEXT_SCHEMA
    )
    return LinearEncoder.fit(stacked)


def build_agent(
    spec: AgentSpec,
    label: str,
    schema: FeatureSchema,
    n_arms: int,
    seed: int,
    expected_rewards: Callable[[Sequence[FeatureVector]], np.ndarray],
    linear_encoder: LinearEncoder | None = None,
    combinatorial: bool = False,
) -> BanditAgent:
    """Instantiate the agent named by spec.kind over contexts following ``schema``.

    Combinatorial agents see one context per base arm and share one model across them.
    """
    if spec.kind in ("teucb", "tets"):
        policy = spec.policy
        if combinatorial and policy.initial_rounds is None:
            policy = policy.model_copy(update={"initial_rounds": NAVIGATION_INITIAL_ROUNDS})
        return TreeEnsembleAgent(schema, spec.ensemble, policy, n_arms, seed, name=label)
    if spec.kind in ("linucb", "lints"):
        encoder = linear_encoder or LinearEncoder(schema)
        return LinearAgent(
            "ucb" if spec.kind == "linucb" else "ts",
            dim=encoder.dim,
            n_arms=n_arms,
            seed=seed,
            alpha=spec.alpha,
            scale=spec.lints_scale,
            ridge=spec.ridge,
            encode=encoder.transform,
            name=label,
        )
    if spec.kind == "ucb1_normal":
        return UCB1NormalAgent(n_arms, seed, name=label)
    if spec.kind == "treebootstrap":
        return TreeBootstrapAgent(
            schema, spec.ensemble, spec.bootstrap_backend, n_arms, seed, spec.refit_stride, shared=combinatorial, name=label
        )
    if spec.kind == "random":
        return RandomAgent(n_arms, seed, name=label)
    return OracleAgent(expected_rewards, n_arms, seed, name=label)


JOB_CHECKPOINT_FORMAT = "tebandit-job/1"


class JobProgress:
    """In-progress checkpoint of one job, taken right after a feedback delivery.

    Holds the agent checkpoint, the environment position and rng state, the trace
    prefix and accumulated timings, so an interrupted job continues where it stopped
    and produces the same trace as an uninterrupted run.
    """

    def __init__(self, path: Path, cfg_hash: str, every: int, state: dict | None = None) -> None:
        self.path = path
        self.cfg_hash = cfg_hash
        self.every = every
        self.state = state
        self.last_step = 0 if state is None else int(state["step"])
        self.elapsed = 0.0 if state is None else float(state["wall_clock_seconds"])
        self._started = time.perf_counter()

    @classmethod
    def open(cls, path: Path, cfg_hash: str, every: int, resume: bool) -> "JobProgress":
        state = None
        if resume and path.is_file():
            saved = json.loads(path.read_text(encoding="utf-8"))
            if saved.get("format") == JOB_CHECKPOINT_FORMAT and saved.get("config_hash") == cfg_hash:
                state = saved
            else:
                logger.warning("Ignoring stale job checkpoint (config changed): path=%s", path)
        return cls(path, cfg_hash, every, state)

    @property
    def wall_clock_seconds(self) -> float:
        return self.elapsed + time.perf_counter() - self._started

    def restore(self, agent: BanditAgent, env: ClassificationBanditEnv | NavigationEnv, trace: RegretTrace) -> int:
        """Load the saved state into freshly built objects; returns the rounds already played."""
        if self.state is None:
            return 0
        trace.load_steps(self.state["trace"])
        if len(trace) != self.last_step:
            raise ValueError(f"corrupt job checkpoint {self.path}: {len(trace)} trace rows for step {self.last_step}")
        agent.restore(self.state["agent"])
        env.restore(self.state["environment"])
        agent.timings = Timings(**self.state["timings"])
        logger.info("Resuming job from checkpoint: agent=%s seed=%s step=%s", trace.agent, trace.seed, self.last_step)
        return self.last_step

    def save(
        self, step: int, horizon: int, agent: BanditAgent, env: ClassificationBanditEnv | NavigationEnv, trace: RegretTrace
    ) -> None:
        if self.every == 0 or step >= horizon or step - self.last_step < self.every:
            return
        payload = {
            "format": JOB_CHECKPOINT_FORMAT,
            "config_hash": self.cfg_hash,
            "step": step,
            "agent": agent.checkpoint(),
            "environment": env.state(),
            "trace": trace.steps(),
            "timings": agent.timings.as_dict(),
            "wall_clock_seconds": self.wall_clock_seconds,
        }
        tmp = self.path.with_suffix(".tmp")
        _write_json(tmp, payload)
        tmp.replace(self.path)
        self.last_step = step
        logger.debug("Saved job checkpoint: agent=%s seed=%s step=%s", trace.agent, trace.seed, step)

    def clear(self) -> None:
        self.path.unlink(missing_ok=True)


def _run_classification(
    variant: AgentVariant,
    dataset: ClassificationDataset,
    horizon: int,
    env_seed: int,
    agent_seed: int,
    trace: RegretTrace,
    progress: JobProgress,
) -> BanditAgent:
    env = ClassificationBanditEnv(dataset, seed=env_seed, horizon=horizon)
    encoding = variant.spec.resolved_encoding
    if variant.spec.encoding is not None and variant.spec.encoding != variant.spec.natural_encoding:
        logger.warning("Encoding override: agent=%s encoding=%s", variant.label, encoding)
    schema = env.context_schema(encoding)
    # Disjoint contexts are already standardized; other pairings are one-hot encoded as-is.
    linear_encoder = LinearEncoder(schema)
    agent = build_agent(
        variant.spec, variant.label, schema, env.n_arms, agent_seed, lambda _: env.expected_rewards(), linear_encoder
    )
    done = progress.restore(agent, env, trace)
    pending = []
    for step in range(done + 1, horizon + 1):
        start = time.perf_counter()
        contexts = env.contexts(encoding)
        agent.timings.environment_seconds += time.perf_counter() - start
        arm = agent.select(contexts)
        start = time.perf_counter()
        reward, regret = env.step(arm)
        agent.timings.environment_seconds += time.perf_counter() - start
        trace.record(arm, reward, regret)
        pending.append((arm, contexts[arm], reward))
        if len(pending) >= variant.batch_size:
            agent.observe_batch(pending)
            pending = []
            progress.save(step, horizon, agent, env, trace)
    if pending:
        agent.observe_batch(pending)
    return agent


def _run_navigation(
    variant: AgentVariant,
    network: RoadNetwork,
    instance: str,
    horizon: int,
    env_seed: int,
    agent_seed: int,
    trace: RegretTrace,
    progress: JobProgress,
) -> BanditAgent:
    env = NavigationEnv(network, instance, env_seed)
    agent = build_agent(
        variant.spec,
        variant.label,
        EDGE_CONTEXT_SCHEMA,
        env.n_arms,
        agent_seed,
        env.expected_rewards,
        _navigation_encoder(network),
        combinatorial=True,
    )
    done = progress.restore(agent, env, trace)
    pending = []
    rounds_pending = 0
    for step in range(done + 1, horizon + 1):
        start = time.perf_counter()
        contexts = env.begin_round()
        agent.timings.environment_seconds += time.perf_counter() - start
        path = agent.select_super_arm(contexts, env.oracle)
        start = time.perf_counter()
        feedback = env.step(path)
        agent.timings.environment_seconds += time.perf_counter() - start
        trace.record(path, -sum(seconds for _, seconds in feedback.travel_times), feedback.regret)
        pending.extend((edge, contexts[edge], -seconds) for edge, seconds in feedback.travel_times)
        rounds_pending += 1
        if rounds_pending >= variant.batch_size:
            agent.observe_batch(pending)
            pending, rounds_pending = [], 0
            progress.save(step, horizon, agent, env, trace)
    if pending:
        agent.observe_batch(pending)
    return agent


def _job_paths(out_dir: Path, label: str, seed: int) -> tuple[Path, Path, Path, Path]:
    slug = slugify(label)
    trace_dir = out_dir / "traces" / slug
    checkpoint_dir = out_dir / "checkpoints" / slug
    return (
        trace_dir / f"seed-{seed}.csv",
        trace_dir / f"seed-{seed}.meta.json",
        checkpoint_dir / f"seed-{seed}.json",
        checkpoint_dir / f"seed-{seed}.partial.json",
    )


def _write_json(path: Path, payload: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_job(
    config: ExperimentConfig,
    cfg_hash: str,
    variant: AgentVariant,
    seed: int,
    resources: Resources,
    out_dir: Path,
) -> JobResult:
    """One (agent, seed) run of ``config.horizon`` rounds; writes its trace, metadata and checkpoint.

    With ``config.resume``, a finished job with a matching config hash is skipped and an
    interrupted one continues from its last in-progress checkpoint.
    """
    trace_path, meta_path, checkpoint_path, partial_path = _job_paths(out_dir, variant.label, seed)
    if config.resume and meta_path.is_file() and trace_path.is_file():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("config_hash") == cfg_hash and meta.get("complete"):
            logger.info("Resuming: skipping finished job agent=%s seed=%s", variant.label, seed)
            return JobResult(variant.label, seed, float(meta["final_regret"]), resumed=True)
        logger.warning("Stale trace for agent=%s seed=%s (config changed); rerunning", variant.label, seed)

    env_seed = derive_seed(seed, "environment")
    agent_seed = derive_seed(seed, f"agent:{variant.label}")
    trace = RegretTrace(agent=variant.label, seed=seed, config_hash=cfg_hash)
    progress = JobProgress.open(partial_path, cfg_hash, config.checkpoint_every, config.resume)
    if config.environment.kind == "classification":
        agent = _run_classification(variant, resources.dataset, config.horizon, env_seed, agent_seed, trace, progress)
    else:
        agent = _run_navigation(
            variant, resources.network, config.environment.instance, config.horizon, env_seed, agent_seed, trace, progress
        )
    wall = progress.wall_clock_seconds

    trace_path.parent.mkdir(parents=True, exist_ok=True)
    trace.to_csv(trace_path)
    meta = {
        "agent": variant.label,
        "kind": variant.spec.kind,
        "seed": seed,
        "env_seed": env_seed,
        "agent_seed": agent_seed,
        "config_hash": cfg_hash,
        "horizon": config.horizon,
        "feedback_batch_size": variant.batch_size,
        "final_regret": trace.final_regret,
        "model_refreshes": agent.model_refreshes,
        "rebuilds": getattr(agent, "rebuilds", None),
        "refit_stride": variant.spec.refit_stride if variant.spec.kind == "treebootstrap" else None,
        "complete": True,
    }
    _write_json(meta_path, meta)
    progress.clear()
    if isinstance(agent, TreeEnsembleAgent):
        _write_json(checkpoint_path, agent.checkpoint())
    timings = {**agent.timings.as_dict(), "wall_clock_seconds": wall}
    logger.info(
        "Finished job: agent=%s seed=%s final_regret=%.4f fit=%.2fs scoring=%.2fs env=%.2fs",
        variant.label,
        seed,
        trace.final_regret,
        timings["fit_seconds"],
        timings["scoring_seconds"],
        timings["environment_seconds"],
    )
    return JobResult(variant.label, seed, trace.final_regret, timings)


def _sd(values: Sequence[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def resolve_output_dir(config: ExperimentConfig, output_dir: Path | None = None) -> Path:
    if output_dir is not None:
        return Path(output_dir)
    root = config_module.settings.output_root
    if config.output_dir is None:
        return root / config.name
    path = Path(config.output_dir)
    return path if path.is_absolute() else root / path


def run_experiment(
    config: ExperimentConfig, base_dir: Path | None = None, output_dir: Path | None = None
) -> list[RunSummary]:
    """Run every (agent variant, seed) job and write traces, summaries and plot data."""
    out_dir = resolve_output_dir(config, output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_hash = config_hash(config)
    _write_json(out_dir / "config.resolved.json", config.model_dump(mode="json"))
    variants = expand_sweeps(config)
    resources = load_resources(config, base_dir)
    workers = config.workers or config_module.settings.workers
    jobs = [(v, seed) for v in variants for seed in config.seeds]
    logger.info(
        "Starting experiment: name=%s hash=%s agents=%s seeds=%s horizon=%s workers=%s",
        config.name,
        cfg_hash,
        len(variants),
        len(config.seeds),
        config.horizon,
        workers,
    )
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_job, config, cfg_hash, v, seed, resources, out_dir) for v, seed in jobs]
            results = [f.result() for f in futures]
    else:
        results = [run_job(config, cfg_hash, v, seed, resources, out_dir) for v, seed in jobs]

    timings_path = out_dir / "timings.json"
    timings: dict[str, dict[str, dict[str, float]]] = {}
    if timings_path.is_file():
        timings = json.loads(timings_path.read_text(encoding="utf-8"))
    for r in results:
        if r.timings:
            timings.setdefault(r.label, {})[str(r.seed)] = r.timings
    _write_json(timings_path, timings)

    summaries = summarize(out_dir)
    plot = emit_plot_data(load_traces(out_dir))
    plot.to_csv(out_dir / "plotdata.csv", index=False, lineterminator="\n")
    logger.info("Finished experiment: name=%s output=%s", config.name, out_dir)
    return summaries


def load_traces(out_dir: Path) -> list[RegretTrace]:
    """Every trace under ``<out_dir>/traces`` in agent/seed order."""
    traces = []
    for meta_path in sorted((Path(out_dir) / "traces").glob("*/seed-*.meta.json")):
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        csv_path = meta_path.with_name(meta_path.name.replace(".meta.json", ".csv"))
        if not csv_path.is_file():
            raise ValueError(f"trace file missing for {meta_path}")
        traces.append(RegretTrace.read_csv(csv_path, meta["agent"], int(meta["seed"]), meta.get("config_hash", "")))
    if not traces:
        raise ValueError(f"no traces found under {out_dir}")
    return sorted(traces, key=lambda tr: (tr.agent, tr.seed))


def summarize(out_dir: Path) -> list[RunSummary]:
    """Per-agent final-regret mean and SD; writes ``summary.json``."""
    out_dir = Path(out_dir)
    traces = load_traces(out_dir)
    timings_path = out_dir / "timings.json"
    timings = json.loads(timings_path.read_text(encoding="utf-8")) if timings_path.is_file() else {}
    by_agent: dict[str, list[RegretTrace]] = {}
    for tr in traces:
        by_agent.setdefault(tr.agent, []).append(tr)
    summaries = []
    for agent, group in by_agent.items():
        finals = [tr.final_regret for tr in group]
        agent_timings = timings.get(agent, {})
        wall = sum(t.get("wall_clock_seconds", 0.0) for t in agent_timings.values()) if agent_timings else None
        hashes = {tr.config_hash for tr in group}
        if len(hashes) > 1:
            logger.warning("Traces of agent=%s come from different configs: %s", agent, sorted(hashes))
        summaries.append(
            RunSummary(
                agent=agent,
                seeds=[tr.seed for tr in group],
                final_regrets=finals,
                mean=float(np.mean(finals)),
                sd=_sd(finals),
                wall_clock_seconds=wall,
                config_hash=sorted(hashes)[0],
            )
        )
    _write_json(out_dir / "summary.json", {"agents": [s.model_dump(mode="json") for s in summaries]})
    return summaries


def emit_plot_data(traces: Sequence[RegretTrace]) -> pd.DataFrame:
    """Long-format mean cumulative-regret curve per agent with a per-step SD band."""
    if not traces:
        raise ValueError("emit_plot_data needs at least one trace")
    by_agent: dict[str, list[RegretTrace]] = {}
    for tr in traces:
        by_agent.setdefault(tr.agent, []).append(tr)
    frames = []
    for agent in sorted(by_agent):
        group = by_agent[agent]
        lengths = {len(tr) for tr in group}
        if len(lengths) != 1:
            raise ValueError(f"mismatched horizons for agent {agent!r}: {sorted(lengths)}")
        curves = np.asarray([tr.cumulative for tr in group], dtype=np.float64)
        sd = curves.std(axis=0, ddof=1) if len(group) > 1 else np.zeros(curves.shape[1])
        frames.append(
            pd.DataFrame(
                {"step": np.arange(1, curves.shape[1] + 1), "agent": agent, "mean": curves.mean(axis=0), "sd": sd}
            )
        )
    return pd.concat(frames, ignore_index=True)


def regret_is_consistent(trace: RegretTrace, tol: float = 1e-9) -> bool:
    """Σ instantaneous regret equals the final cumulative value."""
    return math.isclose(math.fsum(trace.regrets), trace.final_regret, rel_tol=0.0, abs_tol=tol * max(1.0, len(trace)))
