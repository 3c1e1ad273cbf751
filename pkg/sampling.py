import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Sequence, Tuple, TypeVar

import numpy as np
from tqdm import tqdm

from mpfa import ParameterPoint, ParameterRanges

log = logging.getLogger(__name__)

DEFAULT_SEED = 20240917

T = TypeVar("T")
R = TypeVar("R")


def _streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    train, test = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(train)), np.random.Generator(np.random.PCG64(test))


def _log_uniform(rng: np.random.Generator, ranges: ParameterRanges, size: int) -> List[ParameterPoint]:
    if size < 0:
        raise ValueError("Tamanho de amostragem negativo")
    lo, hi = np.log10(ranges.bounds).T
    draws = 10.0 ** (lo + (hi - lo) * rng.random((size, 2)))
    return [ParameterPoint(float(k1), float(k2)) for k1, k2 in draws]


def training_set(ranges: ParameterRanges, size: int, seed: int = DEFAULT_SEED) -> List[ParameterPoint]:
    """Amostragem log-uniforme de treinamento (fluxo PCG64 próprio)."""
    return _log_uniform(_streams(seed)[0], ranges, size)


def test_set(ranges: ParameterRanges, size: int, seed: int = DEFAULT_SEED) -> List[ParameterPoint]:
    """Amostragem de teste, independente da de treinamento para a mesma semente."""
    return _log_uniform(_streams(seed)[1], ranges, size)


# pytest coleta funções test_* importadas nos módulos de teste
test_set.__test__ = False  # type: ignore[attr-defined]


def parameter_grid(ranges: ParameterRanges, n1: int, n2: int) -> List[ParameterPoint]:
    """Grade tensorial log-espaçada, κ2 varrendo mais rápido."""
    (a1, b1), (a2, b2) = ranges.bounds
    k1 = np.logspace(np.log10(a1), np.log10(b1), n1)
    k2 = np.logspace(np.log10(a2), np.log10(b2), n2)
    return [ParameterPoint(float(x), float(y)) for x in k1 for y in k2]


def log_coordinates(points: Sequence[ParameterPoint]) -> np.ndarray:
    if len(points) == 0:
        return np.empty((0, 2))
    return np.array([p.log10() for p in points])


def nearest(points: Sequence[ParameterPoint], target: ParameterPoint, k: int = 1) -> np.ndarray:
    """Índices dos ``k`` pontos mais próximos de ``target`` em (log10 κ1, log10 κ2).

    Empates são resolvidos pelo menor índice.
    """

    coords = log_coordinates(points)
    if coords.shape[0] == 0 or k <= 0:
        return np.empty(0, dtype=np.int64)
    dist = np.linalg.norm(coords - target.log10(), axis=1)
    return np.argsort(dist, kind="stable")[:k]


def parallel_map(
    func: Callable[[T], R],
    items: Sequence[T],
    workers: int = 1,
    desc: str = "",
    quiet: bool = True,
) -> List[R]:
    """Aplica ``func`` a cada item, em paralelo, devolvendo na ordem de entrada."""

    items = list(items)
    results: List[R] = [None] * len(items)  # type: ignore[list-item]
    bar = tqdm(total=len(items), desc=desc, disable=quiet, leave=False)
    if workers <= 1 or len(items) <= 1:
        for i, item in enumerate(items):
            results[i] = func(item)
            bar.update()
        bar.close()
        return results
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
        futures = {ex.submit(func, item): i for i, item in enumerate(items)}
        for fut in as_completed(futures):
            results[futures[fut]] = fut.result()
            bar.update()
    bar.close()
    return results


__all__ = [
    "DEFAULT_SEED",
    "training_set",
    "test_set",
    "parameter_grid",
    "log_coordinates",
    "nearest",
    "parallel_map",
]
