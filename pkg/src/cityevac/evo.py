"""Population-based evolutionary kernel shared by the routing and covering solvers.

Genomes are tuples of ints.  Problems plug in through an operator set that
knows how to cross, mutate and repair their encoding; fitness returns a
tuple compared lexicographically (smaller is better).
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

Genome = tuple
Fitness = tuple


class EvoError(ValueError):
    pass


@dataclass(frozen=True)
class EvoConfig:
    population_size: int = 64
    generations: int = 500
    crossover_rate: float = 0.9
    mutation_rate: float = 0.2
    elitism: int = 2
    seed: int = 0
    tournament: int = 2

    def __post_init__(self) -> None:
        if self.population_size < 2:
            raise EvoError("population_size must be at least 2")
        if self.generations < 1:
            raise EvoError("generations must be at least 1")
        if not (0 <= self.crossover_rate <= 1 and 0 <= self.mutation_rate <= 1):
            raise EvoError("rates must lie in [0, 1]")
        if not 1 <= self.elitism < self.population_size:
            raise EvoError("elitism must be in [1, population_size)")
        if not 0 <= self.seed < 2**64:
            raise EvoError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "EvoConfig":
        return cls(**(doc or {}))


class Operators(Protocol):
    def crossover(self, a: Genome, b: Genome, rng: random.Random) -> Genome: ...

    def mutate(self, g: Genome, rng: random.Random) -> Genome: ...

    def repair(self, g: Genome) -> Genome: ...


class PermutationOps:
    """Order crossover (OX) with swap / insert mutation."""

    def crossover(self, a, b, rng):
        n = len(a)
        if n < 2:
            return tuple(a)
        i, j = sorted(rng.sample(range(n), 2))
        middle = a[i : j + 1]
        taken = set(middle)
        rest = [x for x in b if x not in taken]
        return tuple(rest[:i]) + tuple(middle) + tuple(rest[i:])

    def mutate(self, g, rng):
        n = len(g)
        if n < 2:
            return tuple(g)
        out = list(g)
        i, j = rng.sample(range(n), 2)
        if rng.random() < 0.5:
            out[i], out[j] = out[j], out[i]
        else:
            out.insert(j, out.pop(i))
        return tuple(out)

    def repair(self, g):
        return tuple(g)


@dataclass
class IntVectorOps:
    """Uniform crossover and point resets for vectors with per-gene ranges.

    ``bounds[k]`` is the inclusive ``(low, high)`` range of gene ``k``.  An
    optional ``fixer`` maps any in-range vector to a feasible one.
    """

    bounds: Sequence[tuple[int, int]]
    fixer: Callable[[Genome], Genome] | None = None

    def crossover(self, a, b, rng):
        return tuple(x if rng.random() < 0.5 else y for x, y in zip(a, b))

    def mutate(self, g, rng):
        if not g:
            return tuple(g)
        out = list(g)
        k = rng.randrange(len(out))
        lo, hi = self.bounds[k]
        out[k] = rng.randint(lo, hi)
        return tuple(out)

    def repair(self, g):
        g = tuple(min(max(x, lo), hi) for x, (lo, hi) in zip(g, self.bounds))
        return self.fixer(g) if self.fixer else g


@dataclass
class EvoResult:
    best: Genome
    fitness: Fitness
    history: list[Fitness] = field(default_factory=list)
    evaluations: int = 0

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            width = len(self.fitness)
            w.writerow(["generation"] + [f"best_{k}" for k in range(width)])
            for gen, fit in enumerate(self.history):
                w.writerow([gen, *fit])


def evolve(
    config: EvoConfig,
    seeds: Sequence[Genome],
    fitness: Callable[[Genome], Fitness],
    operators: Operators,
) -> EvoResult:
    """Run the generational loop and return the best genome ever seen.

    Selection is by binary tournament; the ``elitism`` best survive
    unchanged, so the per-generation best never gets worse.  Ranking ties
    are broken on the genome itself, which makes the run a pure function of
    ``(config, seeds, fitness)``.
    """
    if not seeds:
        raise EvoError("evolve needs at least one seed candidate")
    rng = random.Random(config.seed)
    cache: dict[Genome, Fitness] = {}

    def score(g: Genome) -> Fitness:
        f = cache.get(g)
        if f is None:
            f = cache[g] = tuple(fitness(g))
        return f

    def rank(pop):
        return sorted(pop, key=lambda g: (score(g), g))

    population = [operators.repair(tuple(s)) for s in seeds][: config.population_size]
    k = 0
    while len(population) < config.population_size:
        base = population[k % len(seeds)]
        if config.mutation_rate > 0:
            base = operators.repair(operators.mutate(base, rng))
        population.append(base)
        k += 1
    population = rank(population)
    best = population[0]
    history = []

    for _ in range(config.generations):
        nxt = population[: config.elitism]
        while len(nxt) < config.population_size:
            a = _tournament(population, rng, config.tournament, score)
            child = a
            if rng.random() < config.crossover_rate:
                b = _tournament(population, rng, config.tournament, score)
                child = operators.crossover(a, b, rng)
            if rng.random() < config.mutation_rate:
                child = operators.mutate(child, rng)
            nxt.append(operators.repair(child))
        population = rank(nxt)
        if (score(population[0]), population[0]) < (score(best), best):
            best = population[0]
        history.append(score(best))

    return EvoResult(best, score(best), history, len(cache))


def _tournament(pop, rng, size, score):
    picks = [pop[rng.randrange(len(pop))] for _ in range(size)]
    return min(picks, key=lambda g: (score(g), g))
