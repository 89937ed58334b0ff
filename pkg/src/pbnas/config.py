"""Experiment configuration: a strict YAML schema.

Unknown keys are errors (a silent typo in a sampler constant would
invalidate a comparison), and every validation message carries the
field path it refers to.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .predictor import PredictorConfig, TrainHyper
from .samplers import EvoSettings, MlSettings, SamplerConfig
from .space import SpaceSpec

__all__ = ["ConfigError", "VariantSpec", "ExperimentConfig", "load_config"]


class ConfigError(ValueError):
    pass


def _need(mapping, key, path, kind):
    if key not in mapping:
        raise ConfigError(f"{path}.{key}: required key missing")
    return _typed(mapping[key], f"{path}.{key}", kind)


def _typed(value, path, kind):
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{path}: expected int, got bool")
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _opt(mapping, key, path, kind, default):
    if key not in mapping:
        return default
    return _typed(mapping[key], f"{path}.{key}", kind)


def _no_extras(mapping, allowed, path):
    extras = set(mapping) - set(allowed)
    if extras:
        raise ConfigError(f"{path}: unknown keys {sorted(extras)}")


def _parse_space(node, path) -> SpaceSpec:
    _typed(node, path, dict)
    _no_extras(node, ("num_layers", "num_op_types", "max_edges", "single_source_sink"), path)
    try:
        return SpaceSpec(
            num_layers=_need(node, "num_layers", path, int),
            num_op_types=_need(node, "num_op_types", path, int),
            max_edges=_opt(node, "max_edges", path, int, 0),
            single_source_sink=_opt(node, "single_source_sink", path, bool, True),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_sampler(node, path) -> SamplerConfig:
    _typed(node, path, dict)
    _no_extras(
        node,
        ("kind", "nprime", "steps", "step_size", "temperature", "identity_ste",
         "parents", "alpha", "p_mutate"),
        path,
    )
    kind = _need(node, "kind", path, str)
    if kind == "random":
        extras = set(node) - {"kind"}
        if extras:
            raise ConfigError(f"{path}: random sampler takes no keys {sorted(extras)}")
        return SamplerConfig(kind="uniform", n_prime=1)  # placeholder, unused
    nprime = node.get("nprime", "full" if kind == "uniform" else None)
    if nprime == "full":
        n_prime = None
    else:
        n_prime = _typed(nprime, f"{path}.nprime", int) if nprime is not None else None
    try:
        if kind == "ml":
            ml = MlSettings(
                steps=_opt(node, "steps", path, int, 100),
                step_size=_opt(node, "step_size", path, float, 0.1),
                temperature=_opt(node, "temperature", path, float, 1.0),
                identity_ste=_opt(node, "identity_ste", path, bool, False),
            )
            return SamplerConfig(kind="ml", n_prime=n_prime, ml=ml)
        if kind == "evolutionary":
            evo = EvoSettings(
                parents=_opt(node, "parents", path, int, 16),
                alpha=_opt(node, "alpha", path, float, 0.5),
                p_mutate=_opt(node, "p_mutate", path, float, 0.05),
            )
            return SamplerConfig(kind="evolutionary", n_prime=n_prime, evo=evo)
        if kind == "uniform":
            _no_extras(node, ("kind", "nprime"), path)
            return SamplerConfig(kind="uniform", n_prime=n_prime)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}.kind: unknown sampler kind {kind!r}")


@dataclass(frozen=True)
class VariantSpec:
    name: str
    kind: str  # random | uniform | ml | evolutionary
    sampler: SamplerConfig

    @property
    def is_random(self) -> bool:
        return self.kind == "random"

    @property
    def is_full_space(self) -> bool:
        return self.kind == "uniform" and self.sampler.n_prime is None


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark_kind: str  # synthetic | tabular
    benchmark_path: str | None
    space: SpaceSpec | None
    benchmark_seed: int | None
    k: int
    iterations: int
    init_size: int
    predictor_layers: int
    predictor_width: int
    train_hyper: TrainHyper
    variants: tuple[VariantSpec, ...]
    repeats: int
    master_seed: int
    output_dir: str
    hist_bins: int
    gain_grid_points: int
    gain_space_sample: int
    config_hash: str

    def variant(self, name: str) -> VariantSpec:
        for v in self.variants:
            if v.name == name:
                return v
        raise KeyError(f"no variant named {name!r}")


def _hash_config(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def parse_config(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a parsed YAML document; `overrides` may replace
    master_seed / output_dir (the CLI flags)."""
    _typed(raw, "config", dict)
    _no_extras(
        raw,
        ("benchmark", "search", "predictor", "training", "variants", "repeats",
         "master_seed", "output_dir", "hist_bins", "gain"),
        "config",
    )
    bench_node = _need(raw, "benchmark", "config", dict)
    _no_extras(bench_node, ("kind", "path", "space", "seed"), "config.benchmark")
    bench_kind = _need(bench_node, "kind", "config.benchmark", str)
    path = None
    space = None
    bench_seed = None
    if bench_kind == "tabular":
        path = _need(bench_node, "path", "config.benchmark", str)
        if "space" in bench_node or "seed" in bench_node:
            raise ConfigError(
                "config.benchmark: tabular benchmarks take only 'path' "
                "(the space comes from the file header)"
            )
    elif bench_kind == "synthetic":
        space = _parse_space(_need(bench_node, "space", "config.benchmark", dict),
                             "config.benchmark.space")
        bench_seed = _need(bench_node, "seed", "config.benchmark", int)
        if "path" in bench_node:
            raise ConfigError("config.benchmark: synthetic benchmarks take no 'path'")
    else:
        raise ConfigError(
            f"config.benchmark.kind: expected synthetic or tabular, got {bench_kind!r}"
        )

    search_node = _need(raw, "search", "config", dict)
    _no_extras(search_node, ("candidates_per_iter", "iterations", "init_size"),
               "config.search")
    k = _need(search_node, "candidates_per_iter", "config.search", int)
    iterations = _need(search_node, "iterations", "config.search", int)
    init_size = _need(search_node, "init_size", "config.search", int)
    if k < 1 or iterations < 1 or init_size < 2:
        raise ConfigError(
            "config.search: need candidates_per_iter >= 1, iterations >= 1, "
            "init_size >= 2"
        )

    pred_node = _need(raw, "predictor", "config", dict)
    _no_extras(pred_node, ("gcn_layers", "hidden_width"), "config.predictor")
    layers = _opt(pred_node, "gcn_layers", "config.predictor", int, 3)
    width = _opt(pred_node, "hidden_width", "config.predictor", int, 256)

    train_node = _need(raw, "training", "config", dict)
    _no_extras(train_node, ("epochs", "lr", "momentum", "pairs_per_epoch",
                            "batch_pairs"), "config.training")
    try:
        hyper = TrainHyper(
            epochs=_opt(train_node, "epochs", "config.training", int, 2000),
            lr=_opt(train_node, "lr", "config.training", float, 0.01),
            momentum=_opt(train_node, "momentum", "config.training", float, 0.9),
            pairs_per_epoch=_opt(train_node, "pairs_per_epoch", "config.training",
                                 int, 512),
            batch_pairs=_opt(train_node, "batch_pairs", "config.training", int, 64),
        )
    except ValueError as exc:
        raise ConfigError(f"config.training: {exc}") from exc

    variants_node = _need(raw, "variants", "config", list)
    variants = []
    names = set()
    for i, vnode in enumerate(variants_node):
        path_v = f"config.variants[{i}]"
        _typed(vnode, path_v, dict)
        _no_extras(vnode, ("name", "sampler"), path_v)
        name = _need(vnode, "name", path_v, str)
        if name in names:
            raise ConfigError(f"{path_v}.name: duplicate variant name {name!r}")
        names.add(name)
        sampler_node = _need(vnode, "sampler", path_v, dict)
        kind = _need(sampler_node, "kind", f"{path_v}.sampler", str)
        sampler = _parse_sampler(sampler_node, f"{path_v}.sampler")
        variants.append(VariantSpec(
            name=name, kind=kind if kind == "random" else sampler.kind,
            sampler=sampler,
        ))
    if not variants:
        raise ConfigError("config.variants: need at least one variant")

    repeats = _need(raw, "repeats", "config", int)
    if repeats < 1:
        raise ConfigError("config.repeats: must be >= 1")
    master_seed = _need(raw, "master_seed", "config", int)
    output_dir = _opt(raw, "output_dir", "config", str, "out")
    hist_bins = _opt(raw, "hist_bins", "config", int, 50)
    gain_node = _opt(raw, "gain", "config", dict, {})
    _no_extras(gain_node, ("grid_points", "space_sample"), "config.gain")
    grid_points = _opt(gain_node, "grid_points", "config.gain", int, 100)
    space_sample = _opt(gain_node, "space_sample", "config.gain", int, 100_000)

    overrides = overrides or {}
    if "master_seed" in overrides and overrides["master_seed"] is not None:
        master_seed = overrides["master_seed"]
    if "output_dir" in overrides and overrides["output_dir"] is not None:
        output_dir = overrides["output_dir"]

    effective = dict(raw)
    effective["master_seed"] = master_seed
    effective["output_dir"] = output_dir
    return ExperimentConfig(
        benchmark_kind=bench_kind,
        benchmark_path=path,
        space=space,
        benchmark_seed=bench_seed,
        k=k,
        iterations=iterations,
        init_size=init_size,
        predictor_layers=layers,
        predictor_width=width,
        train_hyper=hyper,
        variants=tuple(variants),
        repeats=repeats,
        master_seed=master_seed,
        output_dir=output_dir,
        hist_bins=hist_bins,
        gain_grid_points=grid_points,
        gain_space_sample=space_sample,
        config_hash=_hash_config(effective),
    )


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    return parse_config(raw, overrides)
