"""Leader/follower selection of the mode count K and bandwidth penalty alpha.

For every candidate ``K`` the follower picks ``alpha*(K) = argmin MIC(K, alpha)``
with a randomized log-grid scan followed by golden-section refinement.  The
leader then picks ``K* = argmin FIC(K, alpha*(K))``, only ever scoring FIC at
the follower's response.  Independent restarts shift the grid randomly; the
final pair is chosen by a validation callback or by vote.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import criteria
from .errors import ConfigError, EmptyCandidateSet, KTooSmall, VmdNetError
from .seeding import substream
from .signal import as_array
from .vmd import VmdConfig, decompose_batch

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0  # 0.618...
STRATEGIES = ("stackelberg", "fixed_pair")


@dataclass(frozen=True)
class SearchSpace:
    k_min: int = 2
    k_max: int = 15
    alpha_min: float = 500.0
    alpha_max: float = 10000.0

    def __post_init__(self):
        if not 2 <= self.k_min <= self.k_max:
            raise ConfigError(f"need 2 <= k_min <= k_max, got k_min={self.k_min}, k_max={self.k_max}")
        if not 0 < self.alpha_min < self.alpha_max:
            raise ConfigError(f"need 0 < alpha_min < alpha_max, got [{self.alpha_min}, {self.alpha_max}]")

    def ks(self):
        return range(self.k_min, self.k_max + 1)

    def alpha_range(self, K: int) -> tuple:
        """Admissible alpha interval for ``K`` (currently the same for every K)."""
        return self.alpha_min, self.alpha_max

    def contains(self, K, alpha) -> bool:
        lo, hi = self.alpha_range(K)
        return self.k_min <= K <= self.k_max and lo <= alpha <= hi


@dataclass(frozen=True)
class SearchConfig:
    n_restarts: int = 20
    inner_grid_points: int = 5
    inner_refine_iters: int = 3
    ar_order: int = criteria.DEFAULT_AR_ORDER
    mi_bins: int = criteria.DEFAULT_BINS
    rng_seed: int = 0
    vmd: VmdConfig = field(default_factory=VmdConfig)

    def __post_init__(self):
        if self.n_restarts < 1:
            raise ConfigError("n_restarts must be >= 1")
        if self.inner_grid_points < 3:
            raise ConfigError(f"inner_grid_points must be >= 3, got {self.inner_grid_points}")
        if self.inner_refine_iters < 0:
            raise ConfigError("inner_refine_iters must be >= 0")
        if self.ar_order < 1 or self.mi_bins < 2:
            raise ConfigError("ar_order must be >= 1 and mi_bins >= 2")

    def decompose_budget(self, space: SearchSpace) -> int:
        """Upper bound on decompositions per restart."""
        n_k = space.k_max - space.k_min + 1
        return n_k * (self.inner_grid_points + 2 * self.inner_refine_iters + 1)


@dataclass
class KRow:
    K: int
    alpha: float
    mic: float
    fic: float


@dataclass
class SearchResult:
    chosen_k: int
    chosen_alpha: float
    per_k_tables: list = field(default_factory=list)  # one list of KRow per restart
    restart_traces: list = field(default_factory=list)  # (K*, alpha*) per restart
    validation_scores: Optional[dict] = None
    strategy: str = "stackelberg"
    failed_restarts: int = 0

    @property
    def per_k_table(self):
        """Table of the first restart that produced the chosen pair."""
        for table, pair in zip(self.per_k_tables, self.restart_traces):
            if pair == (self.chosen_k, self.chosen_alpha):
                return table
        return self.per_k_tables[0] if self.per_k_tables else []

    def to_dict(self) -> dict:
        d = {
            "chosen_k": self.chosen_k,
            "chosen_alpha": self.chosen_alpha,
            "strategy": self.strategy,
            "failed_restarts": self.failed_restarts,
            "restart_traces": [list(p) for p in self.restart_traces],
            "per_k_tables": [[_row_dict(r) for r in t] for t in self.per_k_tables],
        }
        if self.validation_scores is not None:
            d["validation_scores"] = [[k, a, v] for (k, a), v in self.validation_scores.items()]
        return d

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def read(cls, path) -> "SearchResult":
        d = json.loads(Path(path).read_text())
        tables = [[KRow(**r) for r in t] for t in d.get("per_k_tables", [])]
        scores = d.get("validation_scores")
        if scores is not None:
            scores = {(int(k), float(a)): float(v) for k, a, v in scores}
        return cls(chosen_k=int(d["chosen_k"]), chosen_alpha=float(d["chosen_alpha"]),
                   per_k_tables=tables,
                   restart_traces=[(int(k), float(a)) for k, a in d.get("restart_traces", [])],
                   validation_scores=scores, strategy=d.get("strategy", "stackelberg"),
                   failed_restarts=int(d.get("failed_restarts", 0)))


def _row_dict(r: KRow) -> dict:
    return {"K": r.K, "alpha": r.alpha, "mic": _finite_or_str(r.mic), "fic": _finite_or_str(r.fic)}


def _finite_or_str(v):
    return v if math.isfinite(v) else str(v)


class CriteriaEvaluator:
    """Decomposes the training series and scores MIC / FIC, recording every call.

    Decompositions are memoized per ``(K, alpha)`` within one evaluator, so
    FIC at ``alpha*(K)`` reuses the follower's decomposition.
    """

    def __init__(self, series, cfg: SearchConfig, restart: int = 0, trace: Optional[list] = None):
        self.x = as_array(series)
        self.cfg = cfg
        self.restart = restart
        self.trace = trace if trace is not None else []
        self.decompose_calls = 0
        self._modes = {}

    def _decompose(self, K, alphas):
        todo = [a for a in alphas if (K, a) not in self._modes]
        if todo:
            vcfg = replace(self.cfg.vmd, num_modes=K)
            self.decompose_calls += len(todo)
            try:
                res = decompose_batch(np.tile(self.x, (len(todo), 1)), vcfg, alphas=np.array(todo))
                for i, a in enumerate(todo):
                    self._modes[(K, a)] = res.modes[i]
            except VmdNetError as exc:
                logger.warning("decomposition failed for K=%d: %s", K, exc)
                for a in todo:
                    self._modes[(K, a)] = None
        return [self._modes[(K, a)] for a in alphas]

    def mic(self, K: int, alphas) -> list:
        """Follower scores; a failed decomposition scores +inf."""
        if K < 2:
            raise KTooSmall("MIC is undefined for K < 2")
        out = []
        for a, modes in zip(alphas, self._decompose(K, list(alphas))):
            if modes is None:
                value = math.inf
            else:
                try:
                    value = criteria.mic(modes, self.cfg.mi_bins)
                except VmdNetError:
                    value = math.inf
            self.trace.append({"restart": self.restart, "K": K, "alpha": float(a),
                               "role": "follower", "mic": value, "fic": None})
            out.append(value)
        return out

    def fic(self, K: int, alpha: float) -> float:
        """Leader score at the follower's response."""
        (modes,) = self._decompose(K, [alpha])
        value = math.inf if modes is None else criteria.fic(modes, self.cfg.ar_order)
        self.trace.append({"restart": self.restart, "K": K, "alpha": float(alpha),
                           "role": "leader", "mic": None, "fic": value})
        return value


def restart_grid(space: SearchSpace, K: int, n_points: int, rng) -> np.ndarray:
    """Stratified log-uniform grid with one random offset shared by all strata."""
    lo, hi = np.log(space.alpha_range(K))
    step = (hi - lo) / n_points
    offset = rng.uniform(0.0, 1.0)
    return np.exp(lo + (np.arange(n_points) + offset) * step)


def golden_section(fn, lo: float, hi: float, iters: int, seen: Optional[list] = None):
    """Minimize ``fn`` on ``[lo, hi]`` with ``iters`` shrink steps.

    Uses ``iters + 1`` evaluations when ``iters >= 1``.  Returns
    ``(x_best, f_best, (a, b))`` where ``(a, b)`` is the final bracket.
    """
    seen = seen if seen is not None else []
    if iters <= 0:
        return None, math.inf, (lo, hi)
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    seen += [(c, fc), (d, fd)]
    for _ in range(iters - 1):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fn(c)
            seen.append((c, fc))
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fn(d)
            seen.append((d, fd))
    if fc <= fd:
        b = d
    else:
        a = c
    x, f = min(seen, key=lambda p: (p[1], p[0]))
    return x, f, (a, b)


def inner_alpha_search(K: int, series, space: SearchSpace, cfg: SearchConfig,
                       restart_index: int = 0, evaluator: Optional[CriteriaEvaluator] = None,
                       mic_fn: Optional[Callable[[int, float], float]] = None):
    """Follower response ``alpha*(K)``; returns ``(alpha_star, mic_value)``.

    ``mic_fn(K, alpha)`` replaces the VMD-based MIC (used to test the
    optimizer on a known landscape).  Golden-section refinement runs in
    ``log(alpha)`` inside the grid cells around the best grid point.
    """
    if K < 2:
        raise KTooSmall("the follower needs K >= 2 (MIC is undefined at K=1)")
    rng = substream(cfg.rng_seed, "search", restart_index, K)
    grid = restart_grid(space, K, cfg.inner_grid_points, rng)
    if mic_fn is not None:
        score_many = lambda alphas: [mic_fn(K, a) for a in alphas]
    else:
        if evaluator is None:
            evaluator = CriteriaEvaluator(series, cfg, restart_index)
        score_many = lambda alphas: evaluator.mic(K, alphas)
    scores = score_many(list(grid))
    best = int(np.argmin(scores))
    candidates = list(zip(grid.tolist(), scores))
    if cfg.inner_refine_iters > 0 and math.isfinite(scores[best]):
        a_lo, a_hi = space.alpha_range(K)
        lo = np.log(grid[best - 1]) if best > 0 else np.log(a_lo)
        hi = np.log(grid[best + 1]) if best < len(grid) - 1 else np.log(a_hi)
        refine = lambda la: score_many([float(np.exp(la))])[0]
        seen = []
        golden_section(refine, lo, hi, cfg.inner_refine_iters, seen)
        candidates += [(float(np.exp(la)), s) for la, s in seen]
    alpha_star, value = min(candidates, key=lambda p: (p[1], p[0]))
    lo, hi = space.alpha_range(K)
    alpha_star = float(min(max(alpha_star, lo), hi))
    return alpha_star, float(value)


def outer_k_search(series, space: SearchSpace, cfg: SearchConfig, restart_index: int = 0,
                   trace: Optional[list] = None):
    """Leader step over every K in the space.

    Returns ``(table, k_star, alpha_star, evaluator)`` where ``table`` lists
    ``KRow(K, alpha*(K), MIC, FIC)`` for every K that produced at least one
    valid decomposition.  Ties in FIC go to the smaller K.
    """
    evaluator = CriteriaEvaluator(series, cfg, restart_index, trace)
    table = []
    for K in space.ks():
        alpha, mic_value = inner_alpha_search(K, series, space, cfg, restart_index, evaluator)
        if not math.isfinite(mic_value):
            logger.warning("restart %d: every alpha failed for K=%d; K excluded", restart_index, K)
            continue
        table.append(KRow(K=K, alpha=alpha, mic=mic_value, fic=evaluator.fic(K, alpha)))
    if not table:
        return table, None, None, evaluator
    best = min(table, key=lambda r: (r.fic, r.K))
    return table, best.K, best.alpha, evaluator


def _vote(pairs):
    """Most frequent K; within it the lower-median alpha (ties to smaller K)."""
    counts = Counter(k for k, _ in pairs)
    top = max(counts.values())
    k = min(kk for kk, c in counts.items() if c == top)
    alphas = sorted(a for kk, a in pairs if kk == k)
    return k, alphas[(len(alphas) - 1) // 2]


def stackelberg_search(train_series, val_evaluator: Optional[Callable] = None,
                       space: SearchSpace = SearchSpace(), cfg: SearchConfig = SearchConfig(),
                       strategy: str = "stackelberg", fixed_pair=None,
                       trace_path=None) -> SearchResult:
    """Run ``cfg.n_restarts`` independent leader/follower searches and pick one pair.

    With ``val_evaluator((K, alpha)) -> loss`` the distinct restart winners
    are scored and the lowest loss wins (ties: smaller K, then smaller
    alpha).  Without it the most frequent K wins, with the lower-median
    alpha among the restarts that chose it.

    ``strategy='fixed_pair'`` skips the search and returns ``fixed_pair``,
    the hook for plugging in an externally chosen pair.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if strategy == "fixed_pair":
        if fixed_pair is None:
            raise ConfigError("strategy 'fixed_pair' needs fixed_pair=(K, alpha)")
        k, a = int(fixed_pair[0]), float(fixed_pair[1])
        return SearchResult(chosen_k=k, chosen_alpha=a, restart_traces=[(k, a)], strategy=strategy)

    tables, pairs, failed = [], [], 0
    trace_file = None
    if trace_path is not None:
        Path(trace_path).parent.mkdir(parents=True, exist_ok=True)
        trace_file = open(trace_path, "a")
    try:
        for r in range(cfg.n_restarts):
            trace = []
            table, k, a, ev = outer_k_search(train_series, space, cfg, r, trace)
            if trace_file is not None:
                for rec in trace:
                    trace_file.write(json.dumps({key: _finite_or_str(v) if isinstance(v, float) else v
                                                 for key, v in rec.items()}) + "\n")
                trace_file.flush()
            if k is None:
                failed += 1
                continue
            tables.append(table)
            pairs.append((k, a))
            logger.info("restart %d: K*=%d alpha*=%.1f (%d decompositions)", r, k, a, ev.decompose_calls)
    finally:
        if trace_file is not None:
            trace_file.close()
    if not pairs:
        raise EmptyCandidateSet("every restart failed to produce a candidate pair")

    scores = None
    if val_evaluator is not None:
        scores = {}
        for pair in sorted(set(pairs)):
            scores[pair] = float(val_evaluator(pair))
        chosen = min(scores, key=lambda p: (scores[p], p[0], p[1]))
    else:
        chosen = _vote(pairs)
    return SearchResult(chosen_k=chosen[0], chosen_alpha=chosen[1], per_k_tables=tables,
                        restart_traces=pairs, validation_scores=scores, failed_restarts=failed)
