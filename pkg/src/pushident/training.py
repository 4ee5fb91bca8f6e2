"""Alternating predictor/policy training, dataset collection and evaluation.

Pipeline: train the predictor on uniform-random pushes, then repeatedly
freeze it, train the push policy against its error signal, collect a fresh
dataset under the policy, and fine-tune the predictor on that data.  The
final meta-iteration collects with the deterministic (mean-action) policy.

Episode seeds are structured (run seed, region, index, attempt), with
disjoint regions for train/validation/test data, so splits can never share
an episode and any worker count reproduces the same dataset.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .chain import sample_chain
from .errors import CollectionStalled, ConfigMismatch, EpisodeFailure
from .estimator import (
    MassPredictor,
    PredictionDataset,
    TrainingSchedule,
    final_step_l1,
    per_step_l1_curve,
    train_predictor,
)
from .explorer import (
    PPOConfig,
    PolicyActionSource,
    PushEnv,
    PushPolicy,
    train_policy,
)
from .interaction import (
    UniformRandomSource,
    load_episodes,
    rollout_episode,
    save_episodes,
)
from .nn import load_params, save_params
from .runio import RunDirectory, canonical_json, config_hash, write_metrics_csv

REGION_TRAIN = 0
REGION_VAL = 1
REGION_TEST = 2
_REGION_NAMES = {REGION_TRAIN: "train", REGION_VAL: "validation", REGION_TEST: "test"}
MAX_EPISODE_ATTEMPTS = 10


@dataclass
class ExperimentConfig:
    """Every knob of a desk-scale experiment; serialized to config.json."""

    n_links: int = 2
    mass_range: tuple = (0.1, 1.0)
    mu_range: tuple = (0.5, 1.0)
    length_range: tuple = (0.1, 0.15)
    joint_limit: float = 2.6
    noise_std: float = 0.01
    pushes: int = 5
    stage0_episodes: int = 2000
    episodes_per_meta: int = 2000
    meta_iterations: int = 2
    val_episodes: int = 200
    test_episodes: int = 500
    predictor_steps: int = 50_000
    predictor_batch: int = 16
    predictor_lr0: float = 0.1
    predictor_halving: int = 16_600
    predictor_eval_interval: int = 1_000
    enc_width: int = 32
    lstm_width: int = 64
    head_width: int = 32
    policy_hidden: int = 64
    policy_lstm: int = 64
    ppo_env_steps: int = 20_000
    ppo_clip: float = 0.2
    ppo_entropy_coef: float = 0.01
    ppo_value_coef: float = 0.5
    ppo_epochs: int = 4
    ppo_minibatches: int = 8
    ppo_lr: float = 3e-4
    ppo_gamma: float = 0.99
    ppo_lam: float = 0.95
    ppo_max_grad_norm: float = 0.5
    steps_per_worker: int = 25
    workers: int = 16
    beta: float = 1.0
    deterministic_final_collection: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("mass_range", "mu_range", "length_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must satisfy lo < hi")
            setattr(self, name, (float(lo), float(hi)))

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("mass_range", "mu_range", "length_range"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        import json

        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(canonical_json(self.to_dict()) + "\n")

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def schedule(self) -> TrainingSchedule:
        return TrainingSchedule(
            total_steps=self.predictor_steps,
            batch_size=self.predictor_batch,
            lr0=self.predictor_lr0,
            halving_period=self.predictor_halving,
            eval_interval=self.predictor_eval_interval,
        )

    def ppo(self) -> PPOConfig:
        return PPOConfig(
            clip=self.ppo_clip,
            entropy_coef=self.ppo_entropy_coef,
            value_coef=self.ppo_value_coef,
            epochs=self.ppo_epochs,
            minibatches=self.ppo_minibatches,
            learning_rate=self.ppo_lr,
            gamma=self.ppo_gamma,
            lam=self.ppo_lam,
            max_grad_norm=self.ppo_max_grad_norm,
        )

    def build_predictor(self, init_seed=0) -> MassPredictor:
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, 101, init_seed)))
        return MassPredictor(
            self.n_links, rng, enc_width=self.enc_width,
            lstm_width=self.lstm_width, head_width=self.head_width,
        )

    def build_policy(self, init_seed=0) -> PushPolicy:
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, 202, init_seed)))
        return PushPolicy(
            self.n_links, rng, hidden=self.policy_hidden, lstm_width=self.policy_lstm
        )


def _make_source(spec: dict, config: ExperimentConfig):
    if spec["kind"] == "uniform":
        return UniformRandomSource()
    if spec["kind"] == "policy":
        policy = config.build_policy()
        policy.store.load_blocks(spec["blocks"])
        return PolicyActionSource(policy, deterministic=spec.get("deterministic", False))
    raise ValueError(f"unknown action source kind {spec['kind']!r}")


def policy_source_spec(policy: PushPolicy, deterministic: bool) -> dict:
    return {
        "kind": "policy",
        "blocks": policy.store.copy_blocks(),
        "deterministic": deterministic,
    }


UNIFORM_SOURCE = {"kind": "uniform"}


def _generate_episode(config: ExperimentConfig, source, region: int, index: int):
    """One episode with deterministic retry seeding; returns (episode, failures)."""
    failures = 0
    for attempt in range(MAX_EPISODE_ATTEMPTS):
        rng = np.random.default_rng(
            np.random.SeedSequence((config.seed, region, index, attempt))
        )
        model = sample_chain(
            rng, config.n_links, config.mass_range, config.mu_range,
            config.length_range, joint_limit=config.joint_limit,
        )
        try:
            ep = rollout_episode(
                model, source, config.pushes, config.noise_std, rng,
                seed=region * 10**9 + index,
            )
            return ep, failures
        except EpisodeFailure:
            failures += 1
    raise CollectionStalled(
        f"episode {index} in region {region} failed {MAX_EPISODE_ATTEMPTS} times"
    )


def _collect_chunk(config_dict: dict, source_spec: dict, region: int, indices):
    config = ExperimentConfig.from_dict(config_dict)
    source = _make_source(source_spec, config)
    episodes = []
    failures = 0
    for idx in indices:
        ep, f = _generate_episode(config, source, region, idx)
        episodes.append(ep)
        failures += f
    return [ep.to_record() for ep in episodes], failures


def collect_dataset(
    config: ExperimentConfig,
    source_spec: dict,
    count: int,
    region: int = REGION_TRAIN,
    index_offset: int = 0,
    workers: int = 1,
    provenance: str = "uniform",
) -> PredictionDataset:
    """Roll out ``count`` fresh episodes; identical output for any worker count."""
    if count < 1:
        raise ValueError("count must be at least 1")
    indices = list(range(index_offset, index_offset + count))
    failures = 0
    from .interaction import EpisodeTrajectory

    if workers <= 1 or count < 8:
        records, failures = _collect_chunk(config.to_dict(), source_spec, region, indices)
    else:
        chunks = np.array_split(indices, min(workers * 4, count))
        records = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_collect_chunk, config.to_dict(), source_spec, region,
                            [int(i) for i in chunk])
                for chunk in chunks if len(chunk)
            ]
            for fut in futures:
                recs, f = fut.result()
                records.extend(recs)
                failures += f
        records.sort(key=lambda r: r["seed"])
    if failures > 0.2 * (failures + count) and failures + count >= 50:
        raise CollectionStalled(
            f"{failures} failures for {count} episodes; check sampling ranges"
        )
    episodes = [EpisodeTrajectory.from_record(r) for r in records]
    return PredictionDataset(
        episodes, split=_REGION_NAMES[region], provenance=provenance,
        failures=failures,
    )


def _checkpoint_meta(run: RunDirectory, rel: str, config: ExperimentConfig,
                     provenance: str) -> None:
    meta = {"config_hash": config.hash(), "provenance": provenance,
            "config": config.to_dict()}
    run.path(rel + ".meta.json").write_text(canonical_json(meta) + "\n")


def _load_or_collect(run: RunDirectory, stage: str, rel: str, config, source_spec,
                     count, region, offset, workers, provenance):
    done = run.manifest.completed_stages()
    if stage in done:
        return PredictionDataset(
            load_episodes(run.path(rel)), split=_REGION_NAMES[region],
            provenance=provenance,
        )
    ds = collect_dataset(config, source_spec, count, region, offset, workers, provenance)
    save_episodes(run.path(rel), ds.episodes)
    _checkpoint_meta(run, rel, config, provenance)
    run.manifest.stage_complete(stage, {"dataset": rel}, config.hash())
    return ds


def _train_and_checkpoint(run: RunDirectory, stage: str, config, predictor,
                          train_eps, val_eps, metrics_rel, ckpt_rel, provenance,
                          train_seed):
    done = run.manifest.completed_stages()
    if stage in done:
        predictor.store.load_blocks(load_params(run.path(ckpt_rel)))
        from .runio import read_metrics_csv

        return read_metrics_csv(run.path(metrics_rel))
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 303, train_seed)))
    history = train_predictor(predictor, train_eps, val_eps, config.schedule(), rng)
    save_params(run.path(ckpt_rel), predictor.store)
    _checkpoint_meta(run, ckpt_rel, config, provenance)
    write_metrics_csv(run.path(metrics_rel), history)
    run.manifest.stage_complete(
        stage, {"checkpoint": ckpt_rel, "metrics": metrics_rel}, config.hash()
    )
    return history


def _val_dataset(run: RunDirectory, config: ExperimentConfig, workers: int):
    return _load_or_collect(
        run, "dataset-val", "datasets/val.jsonl", config, UNIFORM_SOURCE,
        config.val_episodes, REGION_VAL, 0, workers, "uniform",
    )


def run_rp(run: RunDirectory, config: ExperimentConfig, workers: int = 1,
           episodes: int | None = None, tag: str = "stage0") -> dict:
    """Random-policy predictor stage; ``episodes`` overrides the dataset size."""
    run.write_config(config.to_dict())
    count = config.stage0_episodes if episodes is None else episodes
    ds = _load_or_collect(
        run, f"dataset-train-{tag}", f"datasets/train-{tag}.jsonl", config,
        UNIFORM_SOURCE, count, REGION_TRAIN, 0, workers, "uniform",
    )
    val = _val_dataset(run, config, workers)
    predictor = config.build_predictor()
    history = _train_and_checkpoint(
        run, f"predictor-{tag}", config, predictor, ds.episodes, val.episodes,
        f"metrics/predictor-{tag}.csv", f"checkpoints/predictor-{tag}.ckpt",
        "uniform", 0,
    )
    val_err = final_step_l1(predictor, val.episodes)
    rows = [{"meta_iteration": 0, "val_l1": val_err, "episodes_total": count,
             "provenance": "uniform"}]
    write_metrics_csv(run.path(f"metrics/history-{tag}.csv"), rows)
    return {"predictor": predictor, "val_l1": val_err, "history": history,
            "dataset": ds, "validation": val}


def run_rp_plus(run: RunDirectory, config: ExperimentConfig, workers: int = 1) -> dict:
    """Random-policy baseline at the same total episode budget as TP."""
    total = config.stage0_episodes + config.episodes_per_meta
    return run_rp(run, config, workers, episodes=total, tag="rpplus")


def run_alternate(run: RunDirectory, config: ExperimentConfig, workers: int = 1) -> dict:
    """Full alternating procedure; returns predictor, policy and history."""
    run.write_config(config.to_dict())
    stage0 = run_rp(run, config, workers)
    predictor = stage0["predictor"]
    val = stage0["validation"]
    history = [
        {"meta_iteration": 0, "val_l1": stage0["val_l1"],
         "episodes_total": config.stage0_episodes, "provenance": "uniform"}
    ]
    policy = config.build_policy()
    offset = config.stage0_episodes
    done = run.manifest.completed_stages()
    for m in range(1, config.meta_iterations + 1):
        policy_stage = f"policy-meta{m}"
        ckpt_rel = f"checkpoints/policy-meta{m}.ckpt"
        metrics_rel = f"metrics/ppo-meta{m}.csv"
        if policy_stage in done:
            policy.store.load_blocks(load_params(run.path(ckpt_rel)))
            from .runio import read_metrics_csv

            ppo_history = read_metrics_csv(run.path(metrics_rel))
        else:
            def env_factory():
                return PushEnv(
                    config.n_links, config.mass_range, config.mu_range,
                    config.length_range, config.pushes, config.noise_std,
                    predictor, beta=config.beta, joint_limit=config.joint_limit,
                )

            ppo_history = train_policy(
                predictor, policy, env_factory, config.ppo_env_steps,
                config.workers, config.steps_per_worker, config.ppo(),
                base_seed=(config.seed, 404, m),
            )
            save_params(run.path(ckpt_rel), policy.store)
            _checkpoint_meta(run, ckpt_rel, config, f"ppo-meta{m}")
            write_metrics_csv(run.path(metrics_rel), ppo_history)
            run.manifest.stage_complete(
                policy_stage, {"checkpoint": ckpt_rel, "metrics": metrics_rel},
                config.hash(),
            )
        deterministic = (
            m == config.meta_iterations and config.deterministic_final_collection
        )
        source = policy_source_spec(policy, deterministic)
        provenance = f"policy-meta{m}{'-det' if deterministic else ''}"
        ds = _load_or_collect(
            run, f"dataset-train-meta{m}", f"datasets/train-meta{m}.jsonl", config,
            source, config.episodes_per_meta, REGION_TRAIN, offset, workers,
            provenance,
        )
        offset += config.episodes_per_meta
        # validation under the same interaction distribution as this stage's
        # training data, so best-val selection matches what is being learned
        stage_val = _load_or_collect(
            run, f"dataset-val-meta{m}", f"datasets/val-meta{m}.jsonl", config,
            source, config.val_episodes, REGION_VAL, m * config.val_episodes,
            workers, provenance,
        )
        _train_and_checkpoint(
            run, f"predictor-meta{m}", config, predictor, ds.episodes,
            stage_val.episodes, f"metrics/predictor-meta{m}.csv",
            f"checkpoints/predictor-meta{m}.ckpt", provenance, m,
        )
        val_err = final_step_l1(predictor, stage_val.episodes)
        history.append(
            {"meta_iteration": m, "val_l1": val_err, "episodes_total": offset,
             "provenance": provenance}
        )
    write_metrics_csv(run.path("metrics/history.csv"), history)
    run.manifest.append({"event": "run_complete", "stages": len(history)})
    return {"predictor": predictor, "policy": policy, "history": history,
            "validation": val}


class UniformGuessPredictor:
    """Dummy baseline that always answers the uniform distribution."""

    def __init__(self, n_links: int):
        self.n_links = n_links

    def predict_sequence(self, episode):
        return np.full((episode.pushes, self.n_links), 1.0 / self.n_links)


@dataclass
class EvaluationReport:
    """Per-model test errors on an identical held-out seed range."""

    rows: list
    test_episodes: int
    seed_start: int
    seed_stop: int
    config_hash: str

    def to_text(self) -> str:
        width = max((len(r["model"]) for r in self.rows), default=5)
        lines = [
            f"test episodes {self.test_episodes} "
            f"(seed range {self.seed_start}:{self.seed_stop}), "
            f"config {self.config_hash}",
            f"{'model'.ljust(width)}  {'%err':>8}  {'failures':>8}  per-step L1",
        ]
        for r in self.rows:
            curve = " ".join(f"{v:.3f}" for v in r["per_step_l1"])
            lines.append(
                f"{r['model'].ljust(width)}  {r['percent_final_l1']:8.3f}  "
                f"{r['failures']:8d}  {curve}"
            )
        return "\n".join(lines) + "\n"

    def csv_rows(self) -> list[dict]:
        out = []
        for r in self.rows:
            row = {
                "model": r["model"],
                "percent_final_l1": r["percent_final_l1"],
                "failures": r["failures"],
                "test_episodes": self.test_episodes,
                "seed_start": self.seed_start,
                "seed_stop": self.seed_stop,
                "config_hash": self.config_hash,
            }
            for i, v in enumerate(r["per_step_l1"]):
                row[f"step{i}_l1"] = v
            out.append(row)
        return out


def evaluate(
    models: list,
    config: ExperimentConfig,
    seed_range: tuple = None,
    workers: int = 1,
    include_uniform_guess: bool = True,
) -> EvaluationReport:
    """Score each (name, predictor, source_spec) on held-out test episodes.

    Every model is measured on the same test seed range; episodes are
    generated with the model's paired action source.
    """
    if seed_range is None:
        seed_range = (0, config.test_episodes)
    start, stop = seed_range
    count = stop - start
    rows = []
    cache: dict[str, PredictionDataset] = {}

    def test_set(source_spec, provenance):
        key = canonical_json(
            {k: v for k, v in source_spec.items() if k != "blocks"}
        ) + provenance
        if key not in cache:
            cache[key] = collect_dataset(
                config, source_spec, count, REGION_TEST, start, workers, provenance
            )
        return cache[key]

    if include_uniform_guess:
        models = list(models) + [
            ("uniform-guess", UniformGuessPredictor(config.n_links), UNIFORM_SOURCE)
        ]
    for name, predictor, source_spec in models:
        provenance = name if source_spec["kind"] == "policy" else "uniform"
        ds = test_set(source_spec, provenance)
        curve = per_step_l1_curve(predictor, ds.episodes)
        rows.append(
            {
                "model": name,
                "percent_final_l1": 100.0 * float(curve[-1]),
                "per_step_l1": [float(v) for v in curve],
                "failures": ds.failures,
            }
        )
    return EvaluationReport(
        rows=rows,
        test_episodes=count,
        seed_start=start,
        seed_stop=stop,
        config_hash=config.hash(),
    )
