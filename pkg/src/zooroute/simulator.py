"""Synthetic workloads, trace replay, and full experiment runs.

Workloads are drawn from a seeded Gaussian-mixture feature process with
per-model satisfaction ground truth, either an input-independent rate or a
logistic response in the features (the default, so the online predictor's
hypothesis class can realize it). A scenario's seed alone determines the zoo
ground truth and the whole request stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from scipy.special import expit

from .baselines import GuessingPolicy, calibrate_guessing, route_oracle, route_threshold
from .core import (
    ModelId,
    ModelProfile,
    RequestEvent,
    RoutingDecision,
    SlaParams,
    VirtualQueue,
    ZooConfig,
    queue_update,
)
from .metrics import MetricStream, time_to_sla
from .predictor import FeatureExtractor, PredictorState, predict, sgd_step
from .router import Router, TraceLabelSource

TRACE_SCHEMA = "zooroute-trace/1"

# Table-style canonical zoo: three tiers with the average cost and
# satisfaction profile used throughout the acceptance suite.
CANONICAL_NAMES = ("small", "medium", "large")
CANONICAL_COSTS_MJ = (0.12, 0.54, 2.91)
CANONICAL_RATES = (0.5828, 0.6820, 0.7370)

_CLUSTER_SPREAD = 2.0
_CALIBRATION_SAMPLES = 4096


@dataclass(frozen=True)
class GroundTruthModel:
    """Satisfaction behavior of one synthetic model.

    ``fixed_rate`` ignores the request; ``logistic`` responds to the feature
    vector through sigmoid(weights . [x; 1]). ``rate`` always records the
    marginal satisfaction rate (exact for fixed_rate, the calibration target
    for logistic).
    """

    kind: str
    rate: float
    weights: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.kind not in ("fixed_rate", "logistic"):
            raise ValueError(f"unknown ground truth kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")
        if self.kind == "logistic" and self.weights is None:
            raise ValueError("logistic ground truth needs weights")

    def prob(self, x: np.ndarray) -> float:
        if self.kind == "fixed_rate":
            return self.rate
        w = np.asarray(self.weights)
        return float(expit(np.dot(w[:-1], x) + w[-1]))

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> int:
        return int(rng.random() < self.prob(x))


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to rebuild one synthetic experiment from its seed."""

    sla: SlaParams
    t_horizon: int
    d: int = 8
    cluster_count: int = 4
    seed: int = 42
    label_noise: float = 0.0
    mean_tokens: float = 0.0
    model_names: tuple[str, ...] = CANONICAL_NAMES
    base_costs_j: tuple[float, ...] = tuple(c * 1e6 for c in CANONICAL_COSTS_MJ)
    costs_per_token_j: tuple[float, ...] = (0.0, 0.0, 0.0)
    truth_kind: str = "logistic"
    target_rates: tuple[float, ...] = CANONICAL_RATES
    sharpness: float = 4.0
    monotone: bool = False

    def __post_init__(self) -> None:
        if self.t_horizon < 1:
            raise ValueError("t_horizon must be at least 1")
        if self.d < 1 or self.cluster_count < 1:
            raise ValueError("d and cluster_count must be positive")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must lie in [0, 0.5)")
        sizes = {
            len(self.model_names),
            len(self.base_costs_j),
            len(self.costs_per_token_j),
            len(self.target_rates),
        }
        if len(sizes) != 1:
            raise ValueError("zoo parameter lists must have equal length")
        if self.truth_kind not in ("fixed_rate", "logistic"):
            raise ValueError(f"unknown truth kind {self.truth_kind!r}")

    @property
    def m(self) -> int:
        return len(self.model_names)


def canonical_scenario(
    seed: int = 42,
    t_horizon: int = 20_000,
    alpha: float = 0.66,
    v: float = 0.001,
    c: float = 0.1,
    **overrides,
) -> ScenarioConfig:
    """The default three-tier scenario used by the acceptance suite."""
    return ScenarioConfig(
        sla=SlaParams(alpha=alpha, v=v, c=c),
        t_horizon=t_horizon,
        seed=seed,
        **overrides,
    )


def _structure_rngs(config: ScenarioConfig) -> tuple[np.random.Generator, np.random.Generator]:
    children = np.random.SeedSequence(config.seed).spawn(2)
    return np.random.default_rng(children[0]), np.random.default_rng(children[1])


def _cluster_means(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, _CLUSTER_SPREAD, size=(config.cluster_count, config.d))


def _sample_features(
    rng: np.random.Generator, means: np.ndarray, n: int
) -> np.ndarray:
    clusters = rng.integers(len(means), size=n)
    return means[clusters] + rng.normal(0.0, 1.0, size=(n, means.shape[1]))


def _calibrate_bias(
    weights: np.ndarray, sample: np.ndarray, target: float
) -> float:
    """Bias making the mean response over the sample hit the target rate."""
    lo, hi = -30.0, 30.0
    logits = sample @ weights
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(expit(logits + mid).mean()) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def build_zoo(config: ScenarioConfig) -> ZooConfig:
    """Construct the scenario's zoo, deterministic in the scenario seed."""
    rng, _ = _structure_rngs(config)
    means = _cluster_means(config, rng)

    truths: list[GroundTruthModel] = []
    if config.truth_kind == "fixed_rate":
        for rate in config.target_rates:
            truths.append(GroundTruthModel(kind="fixed_rate", rate=rate))
    else:
        directions = []
        for _ in range(config.m):
            w = rng.normal(0.0, 1.0, size=config.d)
            directions.append(w / np.linalg.norm(w))
        if config.monotone:
            directions = [directions[0]] * config.m
        sample = _sample_features(rng, means, _CALIBRATION_SAMPLES)
        for direction, rate in zip(directions, config.target_rates):
            w = config.sharpness * direction
            bias = _calibrate_bias(w, sample, rate)
            truths.append(
                GroundTruthModel(
                    kind="logistic",
                    rate=rate,
                    weights=tuple(w) + (bias,),
                )
            )

    models = tuple(
        ModelProfile(
            id=ModelId(index=i, display_name=config.model_names[i]),
            base_cost=config.base_costs_j[i],
            cost_per_token=config.costs_per_token_j[i],
            truth=truths[i],
        )
        for i in range(config.m)
    )
    largest = int(np.argmax(config.base_costs_j))
    return ZooConfig(models=models, largest_index=largest)


def feasible_alpha(zoo: ZooConfig) -> float:
    """Best marginal satisfaction rate any single model offers."""
    rates = [p.truth.rate for p in zoo.models if p.truth is not None]
    if not rates:
        raise ValueError("zoo carries no ground truth")
    return max(rates)


@dataclass
class TraceRecord:
    """One replayable request: features, per-model labels, per-model costs."""

    t: int
    token_count: int
    features: np.ndarray
    labels: np.ndarray
    costs: np.ndarray

    def event(self) -> RequestEvent:
        return RequestEvent(
            t=self.t,
            token_count=self.token_count,
            features=self.features,
            labels=self.labels,
        )


class ExperimentTrace:
    """An ordered, file-backed request stream with a zoo fingerprint header."""

    def __init__(self, m: int, d: int, zoo_hash: str, records: list[TraceRecord]):
        self.m = m
        self.d = d
        self.zoo_hash = zoo_hash
        self.records = records
        for i, record in enumerate(records):
            if record.t != i + 1:
                raise ValueError(f"trace records must be gapless: line {i} has t={record.t}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def header(self) -> dict:
        return {"schema": TRACE_SCHEMA, "m": self.m, "d": self.d, "zoo_hash": self.zoo_hash}

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.header()) + "\n")
            for r in self.records:
                fh.write(
                    json.dumps(
                        {
                            "t": r.t,
                            "token_count": r.token_count,
                            "features": r.features.tolist(),
                            "labels": r.labels.tolist(),
                            "costs": r.costs.tolist(),
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentTrace":
        with open(path, "r", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("schema") != TRACE_SCHEMA:
                raise ValueError(f"unsupported trace schema: {header.get('schema')}")
            records = []
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                records.append(
                    TraceRecord(
                        t=obj["t"],
                        token_count=obj["token_count"],
                        features=np.asarray(obj["features"], dtype=float),
                        labels=np.asarray(obj["labels"], dtype=int),
                        costs=np.asarray(obj["costs"], dtype=float),
                    )
                )
        return cls(m=header["m"], d=header["d"], zoo_hash=header["zoo_hash"], records=records)

    def label_means(self) -> np.ndarray:
        return np.mean([r.labels for r in self.records], axis=0)


def generate_trace(config: ScenarioConfig, zoo: Optional[ZooConfig] = None) -> ExperimentTrace:
    """Draw a full request stream from the scenario's seeded process."""
    if zoo is None:
        zoo = build_zoo(config)
    struct_rng, stream_rng = _structure_rngs(config)
    means = _cluster_means(config, struct_rng)  # same draw order as build_zoo

    records: list[TraceRecord] = []
    for t in range(1, config.t_horizon + 1):
        cluster = int(stream_rng.integers(config.cluster_count))
        x = means[cluster] + stream_rng.normal(0.0, 1.0, size=config.d)
        tokens = int(stream_rng.poisson(config.mean_tokens)) if config.mean_tokens > 0 else 0
        labels = np.empty(config.m, dtype=int)
        for i, profile in enumerate(zoo.models):
            bit = profile.truth.sample(x, stream_rng)
            if config.label_noise > 0 and stream_rng.random() < config.label_noise:
                bit = 1 - bit
            labels[i] = bit
        event = RequestEvent(t=t, token_count=tokens, features=x, labels=labels)
        records.append(
            TraceRecord(
                t=t,
                token_count=tokens,
                features=x,
                labels=labels,
                costs=zoo.costs(event),
            )
        )
    return ExperimentTrace(m=config.m, d=config.d, zoo_hash=zoo.profile_hash(), records=records)


def _one_hot_decision(
    t: int,
    chosen: int,
    m: int,
    cost: float,
    sat: int,
    queue_before: float,
    queue_after: float,
    s_hat: Optional[np.ndarray] = None,
) -> RoutingDecision:
    return RoutingDecision(
        t=t,
        explored=False,
        chosen=chosen,
        y=tuple(1 if i == chosen else 0 for i in range(m)),
        s_hat=s_hat,
        realized_satisfaction=sat,
        cost_incurred=cost,
        queue_before=queue_before,
        queue_after=queue_after,
    )


def parse_policy(spec: str) -> tuple[str, dict]:
    """Split a policy spec like ``single:2`` or ``threshold:0.4`` into kind + params."""
    kind, _, arg = spec.partition(":")
    if kind == "single":
        if not arg:
            raise ValueError("single policy needs a model index, e.g. single:0")
        return "single", {"model": int(arg)}
    if kind == "threshold":
        return "threshold", {"threshold": float(arg) if arg else 0.5}
    if kind in ("adaptive", "guessing", "oracle"):
        if arg:
            raise ValueError(f"policy {kind!r} takes no argument")
        return kind, {}
    raise ValueError(f"unknown policy {spec!r}")


def run_experiment(
    trace: ExperimentTrace,
    policy: str,
    sla: SlaParams,
    seed: int,
    zoo: ZooConfig,
    *,
    mu: float = 0.0,
    schedule=None,
) -> MetricStream:
    """Drive one policy over a trace and collect its metric stream.

    ``policy`` is a spec string: ``adaptive``, ``single:<i>``, ``guessing``,
    ``threshold[:tau]``, or ``oracle``. The same trace and seed always yield
    the same stream, bit for bit.
    """
    if trace.zoo_hash != zoo.profile_hash():
        raise ValueError("trace was generated for a different zoo")
    if trace.m != zoo.m:
        raise ValueError("trace and zoo disagree on the number of models")

    kind, params = parse_policy(policy)
    if kind == "single" and not 0 <= params["model"] < zoo.m:
        raise ValueError(f"single-model policy index {params['model']} out of range")
    stream = MetricStream(n_models=zoo.m)

    if kind == "adaptive":
        router = Router(
            zoo,
            sla,
            FeatureExtractor(dim=trace.d, kind="passthrough"),
            mu=mu,
            schedule=schedule,
            seed=seed,
        )
        labels = TraceLabelSource()
        for record in trace:
            stream.update(router.step(record.event(), labels))
        return stream

    # Baselines observe the same shortfall queue for reporting purposes.
    rng = np.random.default_rng(seed)
    vq = VirtualQueue()
    guessing: Optional[GuessingPolicy] = None
    if kind == "guessing":
        guessing = calibrate_guessing(trace.label_means(), sla.alpha)
    pred: Optional[PredictorState] = None
    extractor: Optional[FeatureExtractor] = None
    if kind == "threshold":
        pred = PredictorState.initial(zoo.m, trace.d)
        extractor = FeatureExtractor(dim=trace.d, kind="passthrough")
    small = zoo.cheapest_index

    for record in trace:
        s_hat = None
        if kind == "single":
            chosen = params["model"]
        elif kind == "guessing":
            chosen = guessing.sample(rng)
        elif kind == "oracle":
            chosen = route_oracle(record.labels, record.costs)
        else:  # threshold
            x = extractor.featurize(record.event())
            s_hat = predict(pred, x)
            chosen = route_threshold(
                float(s_hat[small]), params["threshold"], small, zoo.largest_index
            )
            pred = sgd_step(pred, x, record.labels)
        sat = int(record.labels[chosen])
        q_before = vq.q
        vq = queue_update(vq, sla.alpha, sat)
        stream.update(
            _one_hot_decision(
                t=record.t,
                chosen=chosen,
                m=zoo.m,
                cost=float(record.costs[chosen]),
                sat=sat,
                queue_before=q_before,
                queue_after=vq.q,
                s_hat=s_hat,
            )
        )
    return stream


def _sweep_cell(args) -> dict:
    config, alpha, v, c, seed = args
    cell = replace(
        config,
        sla=SlaParams(alpha=alpha, v=v, c=c),
        seed=seed,
    )
    zoo = build_zoo(cell)
    trace = generate_trace(cell, zoo)
    stream = run_experiment(trace, "adaptive", cell.sla, seed, zoo)
    summary = stream.summary()
    return {
        "alpha": alpha,
        "v": v,
        "c": c,
        "seed": seed,
        "mean_cost_mj": summary["mean_cost_mj"],
        "mean_satisfaction": summary["mean_satisfaction"],
        "time_to_sla": time_to_sla(stream.run_sat_series(), alpha),
        "exploration_count": summary["exploration_count"],
        "exploration_energy_share": summary["exploration_energy_share"],
        "queue_over_t": summary["queue_over_t"],
        "max_queue": summary["max_queue"],
    }


def sweep(
    config: ScenarioConfig,
    alphas: list[float],
    vs: list[float],
    cs: list[float],
    seeds: list[int],
    jobs: int = 1,
) -> list[dict]:
    """Cross-product of runs over the parameter grids, one row per cell."""
    if not (alphas and vs and cs and seeds):
        raise ValueError("sweep grids must be nonempty")
    cells = [
        (config, alpha, v, c, seed)
        for seed in seeds
        for alpha in alphas
        for v in vs
        for c in cs
    ]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_cell, cells))
    return [_sweep_cell(cell) for cell in cells]
