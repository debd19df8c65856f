"""Construction of the descriptor sets compared in the evaluation.

Three generators: plain class-name prompts, a shared randomized global
descriptor pool prefixed per class, and randomized-token descriptors.
Everything random flows through :class:`SplitMix64`, a fixed, portable
64-bit generator, so a seed reproduces byte-identical sets on any platform
or implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import ConfigError, DescriptorFormatError
from .store import DescriptorSet

WAFFLE_TOKEN_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789!#^@%&*"

CLASS_NAME_TEMPLATE = "An image of a {name}"


class SplitMix64:
    """SplitMix64: state advances by 0x9E3779B97F4A7C15 per draw; output is
    the state passed through two xor-shift-multiply rounds
    (0xBF58476D1CE4E5B9, 0x94D049BB133111EB) and a final 31-bit xor-shift.

    Bounded draws use rejection sampling on the low ``n * floor(2^64 / n)``
    range, so there is no modulo bias and the stream is reproducible from
    the seed alone.
    """

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)

    def randbelow(self, n: int) -> int:
        if n < 1:
            raise ConfigError(f"randbelow needs n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> None:
        # Fisher-Yates, descending index
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]


@dataclass
class GeneratorConfig:
    seed: int
    pool_size: int | None = None  # descriptors sampled from the global pool
    tokens_per_class: int = 3
    token_length: int = 4
    concept_list: Sequence[str] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.pool_size is not None and self.pool_size < 1:
            raise ConfigError(f"pool_size must be >= 1, got {self.pool_size}")
        if self.tokens_per_class < 1:
            raise ConfigError(f"tokens_per_class must be >= 1, got {self.tokens_per_class}")
        if self.token_length < 1:
            raise ConfigError(f"token_length must be >= 1, got {self.token_length}")

    def meta(self, generator: str) -> dict:
        out = {"generator": generator, "seed": self.seed}
        if generator == "dclip":
            out["pool_size"] = self.pool_size
        if generator == "waffle":
            out.update(
                tokens_per_class=self.tokens_per_class,
                token_length=self.token_length,
                concepts=list(self.concept_list),
            )
        return out


def _check_classes(class_names: Sequence[str]) -> list[str]:
    names = [n for n in class_names]
    if not names:
        raise DescriptorFormatError("class list is empty")
    if len(set(names)) != len(names):
        dupe = next(n for n in names if names.count(n) > 1)
        raise DescriptorFormatError(f"duplicate class name {dupe!r}")
    return names


def class_name_prompts(class_names: Sequence[str]) -> DescriptorSet:
    """One prompt per class: "An image of a {class name}"."""
    names = _check_classes(class_names)
    return DescriptorSet(
        names,
        {n: [CLASS_NAME_TEMPLATE.format(name=n)] for n in names},
        source_label="classname",
    )


def dclip_randomized(
    class_names: Sequence[str],
    global_pool: Sequence[str],
    cfg: GeneratorConfig,
) -> DescriptorSet:
    """Sample a fixed pool of N global descriptors; every class gets the
    same N, each formatted "{class name}, {descriptor}"."""
    names = _check_classes(class_names)
    if cfg.pool_size is None:
        raise ConfigError("dclip generation requires pool_size")
    pool = list(global_pool)
    if cfg.pool_size > len(pool):
        raise ConfigError(f"pool_size {cfg.pool_size} exceeds pool of {len(pool)} descriptors")
    rng = SplitMix64(cfg.seed)
    rng.shuffle(pool)
    sampled = pool[: cfg.pool_size]
    return DescriptorSet(
        names,
        {n: [f"{n}, {d}" for d in sampled] for n in names},
        source_label="dclip",
    )


def waffle_randomized(class_names: Sequence[str], cfg: GeneratorConfig) -> DescriptorSet:
    """Randomized-token descriptors, e.g.
    "An image of a {concept}: {class name}, which has !32d, #tjl, ^fs0."

    Without concepts the "{concept}: " part is omitted and each class gets
    one descriptor; with concepts, one per concept, each with fresh tokens.
    Tokens are ``token_length`` characters from ``WAFFLE_TOKEN_CHARS``.
    """
    names = _check_classes(class_names)
    rng = SplitMix64(cfg.seed)

    def token() -> str:
        return "".join(WAFFLE_TOKEN_CHARS[rng.randbelow(len(WAFFLE_TOKEN_CHARS))] for _ in range(cfg.token_length))

    by_class: dict[str, list[str]] = {}
    concepts = list(cfg.concept_list) or [None]
    for name in names:
        descs = []
        for concept in concepts:
            tokens = ", ".join(token() for _ in range(cfg.tokens_per_class))
            if concept is None:
                descs.append(f"An image of a {name}, which has {tokens}.")
            else:
                descs.append(f"An image of a {concept}: {name}, which has {tokens}.")
        by_class[name] = descs
    return DescriptorSet(names, by_class, source_label="waffle")
