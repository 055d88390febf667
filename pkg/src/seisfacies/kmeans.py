"""Out-of-core Lloyd K-means over a chunked feature matrix.

Each iteration maps :func:`assign_chunk` over the chunks (optionally on a
worker pool) and folds the partial results in chunk-index order with
:func:`reduce_partials`. Features are ingested as float32, distances and the
objective are accumulated in float64, and per-cluster coordinate sums are kept
*exactly* (integer mantissa sums binned by binary exponent), so the centroid
update is correctly rounded and bitwise independent of chunking, worker count
and row order.

Iteration t records E_t, the sum of squared distances of every row to the
centroid it was assigned to at the start of that iteration. The loop stops
when the relative change of E drops to ``tol``, when an update leaves every
centroid unchanged (a Lloyd fixed point), or after ``max_iters`` iterations.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from ._parallel import ordered_map
from .errors import DataIOError, DimensionMismatch, InvalidConfig, TooFewDistinctRows
from .store import FeatureMatrix, as_matrix

INIT_METHODS = ("kmeanspp", "random")
INIT_SAMPLE_CAP = 262_144
OBJECTIVE_EPS = 1e-300
MODEL_FORMAT = "seisfacies-kmeans"
MODEL_VERSION = 1

# float32 frexp exponents span [-148, 128]; mantissa * 2**24 is an exact integer.
_EXP_MIN = -148
_N_BINS = 128 - _EXP_MIN + 1
_MANT_BITS = 24
_SCALE_SHIFT = _MANT_BITS - _EXP_MIN


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iters: int = 300
    tol: float = 1e-4
    seed: int = 0
    init_method: str = "kmeanspp"

    def __post_init__(self):
        if self.k < 1:
            raise InvalidConfig(f"k must be >= 1, got {self.k}")
        if self.max_iters < 1:
            raise InvalidConfig(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol >= 0:
            raise InvalidConfig(f"tol must be >= 0, got {self.tol}")
        if self.init_method not in INIT_METHODS:
            raise InvalidConfig(f"init_method must be one of {INIT_METHODS}, got {self.init_method!r}")


def squared_distance(x, m) -> float:
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if x.shape != m.shape:
        raise DimensionMismatch(f"vectors have shapes {x.shape} and {m.shape}")
    d = x - m
    return float(np.dot(d, d))


def _as_f32(chunk) -> np.ndarray:
    return np.ascontiguousarray(chunk, dtype=np.float32)


# --- exact sums -----------------------------------------------------------


def _binned_sums(x32: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Per (cluster, column, exponent) integer sums of float32 mantissas.

    Every bin total is below 2**53 for chunks of up to 2**29 rows, so the
    float64 bincount is exact.
    """
    rows, d = x32.shape
    mant, expo = np.frexp(x32)
    mant = mant.astype(np.float64) * float(1 << _MANT_BITS)
    key = (labels[:, None].astype(np.int64) * d + np.arange(d)) * _N_BINS + (expo.astype(np.int64) - _EXP_MIN)
    sums = np.bincount(key.ravel(), weights=mant.ravel(), minlength=k * d * _N_BINS)
    return sums.astype(np.int64).reshape(k, d, _N_BINS)


def _exact_means(bins: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Correctly rounded float64 means from binned mantissa sums."""
    k, d, _ = bins.shape
    out = np.zeros((k, d))
    for i in range(k):
        n = int(counts[i])
        if n == 0:
            continue
        for j in range(d):
            nz = np.flatnonzero(bins[i, j])
            total = sum(int(bins[i, j, b]) << int(b) for b in nz)
            out[i, j] = total / (n << _SCALE_SHIFT)
    return out


def _exact_totals(bins: np.ndarray) -> np.ndarray:
    k, d, _ = bins.shape
    out = np.zeros((k, d))
    for i in range(k):
        for j in range(d):
            nz = np.flatnonzero(bins[i, j])
            out[i, j] = sum(int(bins[i, j, b]) << int(b) for b in nz) / (1 << _SCALE_SHIFT)
    return out


# --- map step -------------------------------------------------------------


@dataclass(eq=False)
class ChunkPartial:
    """Sufficient statistics of one chunk under fixed centroids."""

    counts: np.ndarray
    objective: float
    labels: Optional[np.ndarray]
    bins: np.ndarray = field(repr=False)
    row_start: int = 0
    # Rows farthest from their centroid, kept for empty-cluster repair.
    far_dist: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    far_rows: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)), repr=False)
    far_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)

    @property
    def sums(self) -> np.ndarray:
        return _exact_totals(self.bins)


def nearest(x32: np.ndarray, centroids: np.ndarray, block_rows: int = 65536):
    """Labels and squared distances to the nearest centroid; ties go to the lowest index."""
    rows, d = x32.shape
    labels = np.empty(rows, dtype=np.int64)
    best = np.empty(rows)
    for a in range(0, rows, block_rows):
        x = x32[a:a + block_rows].astype(np.float64)
        dist = np.empty((x.shape[0], centroids.shape[0]))
        for i, m in enumerate(centroids):
            acc = (x[:, 0] - m[0]) ** 2
            for j in range(1, d):
                acc += (x[:, j] - m[j]) ** 2
            dist[:, i] = acc
        lab = np.argmin(dist, axis=1)
        labels[a:a + block_rows] = lab
        best[a:a + block_rows] = dist[np.arange(x.shape[0]), lab]
    return labels, best


def assign_chunk(chunk, centroids, row_start: int = 0, keep_labels: bool = True) -> ChunkPartial:
    centroids = np.asarray(centroids, dtype=np.float64)
    x32 = _as_f32(chunk)
    if x32.ndim != 2 or x32.shape[1] != centroids.shape[1]:
        raise DimensionMismatch(f"chunk has shape {x32.shape}, centroids have {centroids.shape[1]} columns")
    k = centroids.shape[0]
    labels, dist = nearest(x32, centroids)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    n_far = min(k, len(dist))
    order = np.argsort(-dist, kind="stable")[:n_far]
    return ChunkPartial(
        counts=counts,
        objective=math.fsum(dist),
        labels=labels if keep_labels else None,
        bins=_binned_sums(x32, labels, k),
        row_start=row_start,
        far_dist=dist[order],
        far_rows=x32[order].astype(np.float64),
        far_ids=order.astype(np.int64) + row_start,
    )


# --- reduce step ----------------------------------------------------------


@dataclass(eq=False)
class Reduction:
    centroids: np.ndarray
    objective: float
    counts: np.ndarray
    repaired: list


def reduce_partials(partials: Iterable[ChunkPartial], previous: Optional[np.ndarray] = None) -> Reduction:
    """Fold chunk partials in order into new centroids, E and cluster sizes.

    A cluster that received no rows is moved onto the row farthest from its
    own centroid; with several empty clusters the candidates' distances are
    refreshed against each relocated centroid before the next pick.
    """
    bins = counts = None
    objectives, far_dist, far_rows, far_ids = [], [], [], []
    for p in partials:
        if bins is None:
            bins, counts = p.bins.copy(), p.counts.copy()
        else:
            bins += p.bins
            counts += p.counts
        objectives.append(p.objective)
        far_dist.append(p.far_dist)
        far_rows.append(p.far_rows)
        far_ids.append(p.far_ids)
    if bins is None:
        raise ValueError("no partials to reduce")
    objective = math.fsum(objectives)
    centroids = _exact_means(bins, counts)

    repaired = []
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        dist = np.concatenate(far_dist)
        rows = np.concatenate(far_rows)
        ids = np.concatenate(far_ids)
        order = np.lexsort((ids, -dist))
        dist, rows, ids = dist[order].copy(), rows[order], ids[order]
        used = np.zeros(len(dist), dtype=bool)
        for i in empty:
            live = np.flatnonzero(~used)
            if len(live) == 0:
                if previous is not None:
                    centroids[i] = previous[i]
                continue
            pick = live[np.argmax(dist[live])]
            used[pick] = True
            centroids[i] = rows[pick]
            moved = ((rows - rows[pick]) ** 2).sum(axis=1)
            dist = np.minimum(dist, moved)
            repaired.append(int(i))
    return Reduction(centroids, objective, counts, repaired)


# --- initialisation -------------------------------------------------------


def _gather_rows(matrix: FeatureMatrix, row_ids: np.ndarray) -> np.ndarray:
    out = np.empty((len(row_ids), matrix.n_cols), dtype=np.float32)
    chunk_of = row_ids // matrix.chunk_rows
    for c in np.unique(chunk_of):
        sel = np.flatnonzero(chunk_of == c)
        block = _as_f32(matrix.read_chunk(int(c)))
        out[sel] = block[row_ids[sel] - int(c) * matrix.chunk_rows]
    return out


def init_sample(matrix: FeatureMatrix, rng: np.random.Generator, cap: int = INIT_SAMPLE_CAP) -> np.ndarray:
    """All rows when the matrix is small, otherwise a seeded uniform subsample."""
    if matrix.n_rows <= cap:
        return np.concatenate([_as_f32(c) for c in matrix.iter_chunks()], axis=0)
    ids = np.sort(rng.choice(matrix.n_rows, size=cap, replace=False))
    return _gather_rows(matrix, ids)


def init_centroids(store, config: KMeansConfig) -> np.ndarray:
    matrix = as_matrix(store)
    rng = np.random.default_rng(config.seed)
    sample = init_sample(matrix, rng)
    distinct = np.unique(sample, axis=0).shape[0]
    if distinct < config.k:
        raise TooFewDistinctRows(f"k={config.k} but the initialisation sample has only {distinct} distinct rows")
    x = sample.astype(np.float64)
    if config.init_method == "random":
        return _init_random(x, config.k, rng)
    return _init_kmeanspp(x, config.k, rng)


def _init_random(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    chosen = []
    seen = set()
    for idx in rng.permutation(len(x)):
        key = x[idx].tobytes()
        if key not in seen:
            seen.add(key)
            chosen.append(idx)
            if len(chosen) == k:
                break
    return x[chosen].copy()


def _init_kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(len(x))]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        cdf = np.cumsum(d2)
        idx = int(np.searchsorted(cdf, rng.random() * total, side="right"))
        idx = min(idx, len(x) - 1)
        centers[c] = x[idx]
        d2 = np.minimum(d2, ((x - centers[c]) ** 2).sum(axis=1))
    return centers


# --- fit / predict --------------------------------------------------------


@dataclass(eq=False)
class KMeansModel:
    centroids: np.ndarray
    objective_history: list
    iterations_run: int
    converged: bool
    config: KMeansConfig
    distance_evals: int = 0
    n_rows: int = 0
    empty_repairs: int = 0
    centroid_history: Optional[list] = field(default=None, repr=False)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def inertia(self) -> float:
        return self.objective_history[-1]

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "format_version": MODEL_VERSION,
            "config": asdict(self.config),
            "n_rows": self.n_rows,
            "n_features": int(self.centroids.shape[1]),
            "iterations_run": self.iterations_run,
            "converged": self.converged,
            "distance_evals": self.distance_evals,
            "empty_repairs": self.empty_repairs,
            "objective_history": [float(e) for e in self.objective_history],
            "centroids": [[float(v) for v in row] for row in self.centroids],
        }

    @classmethod
    def from_dict(cls, d) -> "KMeansModel":
        if d.get("format") != MODEL_FORMAT or d.get("format_version") != MODEL_VERSION:
            raise DataIOError("not a seisfacies K-means model file (or unsupported version)")
        return cls(
            centroids=np.array(d["centroids"], dtype=np.float64),
            objective_history=list(d["objective_history"]),
            iterations_run=int(d["iterations_run"]),
            converged=bool(d["converged"]),
            config=KMeansConfig(**d["config"]),
            distance_evals=int(d["distance_evals"]),
            n_rows=int(d["n_rows"]),
            empty_repairs=int(d["empty_repairs"]),
        )


def save_model(model: KMeansModel, path) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(model.to_dict(), fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise DataIOError(f"cannot write model file {path}: {exc.strerror or exc}") from exc


def load_model(path) -> KMeansModel:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise DataIOError(f"cannot read model file {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataIOError(f"model file {path} is not valid JSON: {exc}") from exc
    return KMeansModel.from_dict(d)


def _relative_change(prev: float, cur: float) -> float:
    return abs(prev - cur) / max(prev, OBJECTIVE_EPS)


def fit(store, config: KMeansConfig, workers: int = 1, initial_centroids=None, record_centroids: bool = False) -> KMeansModel:
    """Lloyd iterations over every chunk of ``store``.

    ``initial_centroids`` bypasses :func:`init_centroids`. With
    ``record_centroids`` the model keeps the centroids in effect at the start
    of every iteration plus the final ones.
    """
    matrix = as_matrix(store)
    if initial_centroids is None:
        centroids = init_centroids(matrix, config)
    else:
        centroids = np.array(initial_centroids, dtype=np.float64)
        if centroids.shape != (config.k, matrix.n_cols):
            raise DimensionMismatch(f"initial centroids have shape {centroids.shape}, expected {(config.k, matrix.n_cols)}")

    def work(index):
        start, _ = matrix.chunk_bounds(index)
        return assign_chunk(matrix.read_chunk(index), current, row_start=start, keep_labels=False)

    history = []
    trail = [centroids.copy()] if record_centroids else None
    evals = 0
    repairs = 0
    converged = False
    t = 0
    for t in range(1, config.max_iters + 1):
        current = centroids
        red = reduce_partials(ordered_map(work, range(matrix.chunk_count), workers), previous=current)
        evals += matrix.n_rows * config.k
        repairs += len(red.repaired)
        history.append(red.objective)
        centroids = red.centroids
        if trail is not None:
            trail.append(centroids.copy())
        if np.array_equal(centroids, current):
            converged = True
            break
        if t > 1 and _relative_change(history[-2], history[-1]) <= config.tol:
            converged = True
            break
    return KMeansModel(
        centroids=centroids,
        objective_history=history,
        iterations_run=t,
        converged=converged,
        config=config,
        distance_evals=evals,
        n_rows=matrix.n_rows,
        empty_repairs=repairs,
        centroid_history=trail,
    )


def predict(store, centroids, workers: int = 1) -> Iterator[np.ndarray]:
    """Yield per-chunk label arrays in row order."""
    matrix = as_matrix(store)
    centroids = np.asarray(getattr(centroids, "centroids", centroids), dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[1] != matrix.n_cols:
        raise DimensionMismatch(f"centroids have shape {centroids.shape}, store has {matrix.n_cols} columns")

    def work(index):
        return nearest(_as_f32(matrix.read_chunk(index)), centroids)[0]

    yield from ordered_map(work, range(matrix.chunk_count), workers)
