"""Construction of the reduced candidate pool S' scored by the predictor.

Three strategies: uniform draws from the space, gradient ascent on the
predictor from random starting points (with a straight-through
estimator through the binarization), and evolutionary sampling around
the best architectures evaluated so far.

Every sampler returns exactly n_prime valid, pairwise-distinct
architectures disjoint from the `exclude` key set, falling back to
uniform draws when its own mechanism stalls. A sampler's `space` is
either an EnumeratedSpace (membership is then enforced, so partial
tabular benchmarks stay closed) or a bare SpaceSpec (generator mode).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .predictor import (
    PredictorConfig,
    PredictorParams,
    batched_backward_inputs,
    batched_forward,
    _normalize_batch,
)
from . import space as space_mod
from .space import (
    Architecture,
    EnumeratedSpace,
    SpaceSpec,
    arch_key,
    random_architecture,
    validate,
)

__all__ = [
    "SamplerConfig",
    "MlSettings",
    "EvoSettings",
    "SamplerError",
    "SpaceExhaustedError",
    "uniform_sample",
    "ml_sample",
    "evolutionary_sample",
]


class SamplerError(Exception):
    pass


class SpaceExhaustedError(SamplerError):
    """Not enough unexcluded architectures left to fill S'."""


@dataclass(frozen=True)
class MlSettings:
    steps: int = 100
    step_size: float = 0.1
    temperature: float = 1.0
    identity_ste: bool = False  # raw identity STE instead of softmax-Jacobian

    def __post_init__(self):
        if self.steps < 0 or self.step_size <= 0 or self.temperature <= 0:
            raise ValueError(f"bad ML sampler settings: {self}")


@dataclass(frozen=True)
class EvoSettings:
    parents: int = 16
    alpha: float = 0.5
    p_mutate: float = 0.05

    def __post_init__(self):
        if self.parents < 1:
            raise ValueError(f"parents must be >= 1, got {self.parents}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not (0.0 < self.p_mutate < 1.0):
            raise ValueError(f"p_mutate must be in (0, 1), got {self.p_mutate}")


@dataclass(frozen=True)
class SamplerConfig:
    """Which S' strategy to run and its constants.

    kind: "uniform", "ml" or "evolutionary" ("random" at the experiment
    level bypasses the predictor entirely). n_prime=None means the full
    space (uniform only).
    """

    kind: str
    n_prime: int | None = None
    ml: MlSettings = field(default_factory=MlSettings)
    evo: EvoSettings = field(default_factory=EvoSettings)

    def __post_init__(self):
        if self.kind not in ("uniform", "ml", "evolutionary"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.n_prime is not None and self.n_prime < 1:
            raise ValueError(f"n_prime must be >= 1 or None, got {self.n_prime}")
        if self.n_prime is None and self.kind != "uniform":
            raise ValueError(f"n_prime=None (full space) requires kind=uniform")


def _spec_of(space) -> SpaceSpec:
    return space.spec if isinstance(space, EnumeratedSpace) else space


def _in_space(space, key: bytes) -> bool:
    return key in space if isinstance(space, EnumeratedSpace) else True


def _uniform_draws(space, count, banned, rng, max_draws_per_item=1000):
    """`count` distinct uniform draws with keys outside `banned`.

    Mutates `banned` by adding the chosen keys.
    """
    out = []
    if isinstance(space, EnumeratedSpace):
        avail = space.available_indices(banned)
        if count > len(avail):
            raise SpaceExhaustedError(
                f"requested {count} architectures but only {len(avail)} remain"
            )
        for i in rng.choice(len(avail), size=count, replace=False):
            arch = space.archs[avail[i]]
            banned.add(space.keys[avail[i]])
            out.append(arch)
        return out
    draws = 0
    budget = max_draws_per_item * count
    while len(out) < count:
        if draws >= budget:
            raise SpaceExhaustedError(
                f"could not draw {count} distinct architectures in {budget} attempts"
            )
        arch = random_architecture(space, rng)
        draws += 1
        key = arch_key(arch)
        if key in banned:
            continue
        banned.add(key)
        out.append(arch)
    return out


def uniform_sample(space, n_prime: int, exclude, rng) -> list[Architecture]:
    """N' distinct uniform draws, none with a key in `exclude`.

    Enumerable spaces get exact sampling without replacement; a bare
    SpaceSpec is sampled by rejection through random_architecture.
    """
    return _uniform_draws(space, n_prime, set(exclude), rng)


def _softmax_rows(z: np.ndarray, temperature: float) -> np.ndarray:
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _binarize(shadow_a, shadow_x, iu):
    """Hard decisions from shadows: threshold edges, argmax op rows."""
    b, l, d = shadow_x.shape
    a = np.zeros((b, l, l))
    a[:, iu[0], iu[1]] = (shadow_a[:, iu[0], iu[1]] > 0.0).astype(np.float64)
    x = np.zeros((b, l, d))
    np.put_along_axis(x, shadow_x.argmax(axis=2)[:, :, None], 1.0, axis=2)
    return a, x


def _ascend(params, shadow_a, shadow_x, iu, ml: MlSettings):
    """STE gradient ascent of the predictor score on the shadow matrices."""
    b = shadow_a.shape[0]
    ones = np.ones(b)
    for _ in range(ml.steps):
        a_bin, x_hard = _binarize(shadow_a, shadow_x, iu)
        ahat, atilde, deg = _normalize_batch(a_bin)
        _, hs, _ = batched_forward(params, ahat, x_hard, keep_hidden=True)
        g_a, g_x = batched_backward_inputs(params, ahat, atilde, deg, hs, ones)
        # adjacency: identity STE through the threshold (upper triangle only)
        step_a = np.zeros_like(shadow_a)
        step_a[:, iu[0], iu[1]] = g_a[:, iu[0], iu[1]]
        shadow_a += ml.step_size * step_a
        if ml.identity_ste:
            shadow_x += ml.step_size * g_x
        else:
            s = _softmax_rows(shadow_x, ml.temperature)
            jac_g = (s * g_x - s * (s * g_x).sum(axis=2, keepdims=True))
            shadow_x += ml.step_size * (jac_g / ml.temperature)
    return _binarize(shadow_a, shadow_x, iu)


def ml_sample(
    params: PredictorParams,
    config: PredictorConfig,
    space,
    sampler_cfg: SamplerConfig,
    exclude,
    rng,
) -> list[Architecture]:
    """Gradient-ascent sampling: N' ascents of f from random shadow inits.

    Each ascent evaluates the predictor at the binarized point and pushes
    the continuous shadow matrices uphill via a straight-through
    estimator (identity for edge bits, softmax-Jacobian for op rows).
    Invalid or duplicate results retry from fresh inits up to 10 times;
    any remaining slots are filled with uniform draws.
    """
    spec = _spec_of(space)
    n_prime = sampler_cfg.n_prime
    il, d = spec.num_layers, spec.num_op_types
    iu = np.triu_indices(il, k=1)
    banned = set(exclude)
    accepted: list[Architecture] = []
    for _ in range(11):  # first pass + up to 10 retries
        need = n_prime - len(accepted)
        if need == 0:
            break
        shadow_a = np.zeros((need, il, il))
        shadow_a[:, iu[0], iu[1]] = rng.uniform(-1.0, 1.0, size=(need, len(iu[0])))
        shadow_x = rng.uniform(-1.0, 1.0, size=(need, il, d))
        a_bin, x_hard = _ascend(params, shadow_a, shadow_x, iu, sampler_cfg.ml)
        for i in range(need):
            arch = Architecture(
                adjacency=a_bin[i].astype(np.uint8),
                features=x_hard[i].astype(np.uint8),
            )
            key = arch_key(arch)
            if key in banned or not _in_space(space, key):
                continue
            if not validate(arch, spec).ok:
                continue
            banned.add(key)
            accepted.append(arch)
    if len(accepted) < n_prime:
        accepted.extend(
            _uniform_draws(space, n_prime - len(accepted), banned, rng)
        )
    return accepted


def _evolutionary_sample_stats(population, sampler_cfg, space, exclude, rng):
    spec = _spec_of(space)
    n_prime = sampler_cfg.n_prime
    evo = sampler_cfg.evo
    ranked = sorted(population, key=lambda pair: (pair[1], arch_key(pair[0])))
    parents = [arch for arch, _ in ranked[: evo.parents]]
    if not parents:
        raise SamplerError("evolutionary sampling needs a non-empty population")
    # encoding vectors of the parents: the operators run on these (rng
    # stream identical to the Architecture-level mutate/crossover)
    iu = space_mod._triu(spec.num_layers)
    p_bits = [a.adjacency[iu] for a in parents]
    p_ops = [a.op_indices for a in parents]
    pow2 = space_mod._POW2[: spec.num_bits]

    banned = set(exclude)
    out: list[Architecture] = []
    n_mut = n_cross = n_fallback = 0
    consecutive_rejects = 0
    while len(out) < n_prime:
        if consecutive_rejects >= 1000:
            fill = _uniform_draws(space, n_prime - len(out), banned, rng)
            n_fallback += len(fill)
            out.extend(fill)
            break
        i1 = int(rng.integers(0, len(parents)))
        i2 = int(rng.integers(0, len(parents)))
        branch_is_mut = len(out) < evo.alpha * n_prime
        # repaired operator: re-run on invalid offspring, fall back to a
        # fresh uniform draw after 100 attempts (same policy as
        # space.mutate / space.crossover)
        child_vec = None
        for _ in range(100):
            if branch_is_mut:
                bits, ops = space_mod._mutate_vec(
                    p_bits[i1], p_ops[i1], evo.p_mutate, spec, rng
                )
            else:
                bits, ops = space_mod._crossover_vec(
                    p_bits[i1], p_ops[i1], p_bits[i2], p_ops[i2], spec, rng
                )
            if not space_mod._graph_violations(int(bits @ pow2), spec):
                child_vec = (bits, ops)
                break
        if child_vec is None:
            child = random_architecture(spec, rng)
            key = arch_key(child)
        else:
            key = space_mod._key_from_vec(
                spec.num_layers, spec.num_op_types, *child_vec
            )
            child = None
        if key in banned or not _in_space(space, key):
            consecutive_rejects += 1
            continue
        if child is None:
            child = space_mod._make_arch(
                spec.num_layers, spec.num_op_types, *child_vec
            )
        banned.add(key)
        out.append(child)
        consecutive_rejects = 0
        if branch_is_mut:
            n_mut += 1
        else:
            n_cross += 1
    return out, n_mut, n_cross, n_fallback


def evolutionary_sample(
    population, sampler_cfg: SamplerConfig, space, exclude, rng
) -> list[Architecture]:
    """Mutation/crossover sampling around the best evaluated architectures.

    population is a list of (Architecture, mean val error). The parents
    are the `parents` lowest-error members (ties broken by key); while
    fewer than alpha*N' elements exist the child is a mutant of one
    random parent, afterwards a crossover of two. Children must be
    valid, in-space and new; after 1000 consecutive rejections the
    remainder is filled with uniform draws.
    """
    out, _, _, _ = _evolutionary_sample_stats(
        population, sampler_cfg, space, exclude, rng
    )
    return out
