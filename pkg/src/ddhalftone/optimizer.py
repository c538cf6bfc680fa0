"""Two-stage parameter optimization for the diffusion engine.

Stage 1 tunes, tone by tone, the (alpha, beta, gamma) triple of every
processing-order column against a spectral distance to a binary-search
ground-truth pattern; stage 2 repeats the sweep against the perceptual
HMSE.  The outer loop is coordinate descent over columns: each round runs
an independent bounded downhill-simplex search per column with the rest
of the table frozen, commits the single best column if it strictly beats
the best cost so far, and stops otherwise.

Everything is deterministic: the spectrum estimator seed is frozen per
run, searches are pure functions of their start point, and per-column
searches are independent, so worker-pool execution cannot change results.
Finished column searches are cached on disk keyed by the frozen row
state.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classtiling import ClassTiling
from .dbs import DbsConfig, MaskStack, groundtruth_pattern
from .dotdiffusion import ParameterTable, _run_engine, _schedule_for, _tile_map
from .hvs_metrics import gaussian_lowpass, hmse
from .imagecore import BinaryImage, constant_patch
from .spectrum import SpectrumCostKind, randomized_apsd, spectrum_cost

#: search box: alpha, beta >= 0; gamma within the gray range.
BOUNDS = ((0.0, None), (0.0, None), (0.0, 255.0))


@dataclass(frozen=True)
class SimplexOptions:
    """Downhill-simplex hyperparameters (bounded Nelder-Mead)."""

    steps: tuple[float, float, float] = (0.25, 0.25, 8.0)
    reflect: float = 1.0
    expand: float = 2.0
    contract: float = 0.5
    shrink: float = 0.5
    tol: float = 1e-3
    max_evals: int = 200


@dataclass
class OptimizerConfig:
    tones: tuple[int, ...]
    ct: ClassTiling
    prototype: MaskStack
    dbs: DbsConfig = field(default_factory=DbsConfig)
    patch_size: int = 512
    apsd_window: int = 128
    apsd_k: int = 50
    apsd_seed: int = 0
    simplex: SimplexOptions = field(default_factory=SimplexOptions)
    outer_max_iters: int = 64
    stage2_kernel_size: int = 15
    cache_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if any(not 0 <= g <= 127 for g in self.tones):
            raise ValueError("tones must lie in [0, 127]")
        if self.patch_size < self.apsd_window:
            raise ValueError("patch_size must cover the spectrum window")
        if self.simplex.tol <= 0:
            raise ValueError("simplex tolerance must be positive")

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        h.update(
            repr(
                (
                    self.patch_size,
                    self.apsd_window,
                    self.apsd_k,
                    self.apsd_seed,
                    self.stage2_kernel_size,
                    dataclasses.astuple(self.simplex),
                    self.dbs.seed,
                )
            ).encode()
        )
        h.update(self.ct.orders.tobytes())
        h.update(self.prototype.first_black_level.tobytes())
        return h.hexdigest()


@dataclass
class TraceStep:
    stage: int
    g: int
    k: int
    f_star: int
    cost: float
    companion_cost: float | None = None


@dataclass
class OptimizationTrace:
    steps: list[TraceStep] = field(default_factory=list)

    def for_tone(self, stage: int, g: int) -> list[TraceStep]:
        return [s for s in self.steps if s.stage == stage and s.g == g]

    def costs(self, stage: int, g: int) -> list[float]:
        return [s.cost for s in self.for_tone(stage, g)]

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for s in self.steps:
                rec = {"stage": s.stage, "g": s.g, "k": s.k, "f_star": s.f_star,
                       "cost": s.cost}
                if s.companion_cost is not None:
                    rec["companion_cost"] = s.companion_cost
                fh.write(json.dumps(rec) + "\n")


def init_table() -> ParameterTable:
    """Ordered-dithering start: no diffusion, threshold = processing order."""
    alpha = np.zeros((128, 256))
    beta = np.zeros((128, 256))
    gamma = np.tile(np.arange(256, dtype=np.float64), (128, 1))
    return ParameterTable(alpha, beta, gamma)


class ExpandedTable:
    """Full-range lookup for g in [0, 255] from the half table.

    Tones above 127 read row 255 - g; gamma is reused verbatim unless
    ``mirror_gamma`` asks for 255 - gamma on the upper half.
    """

    def __init__(self, table: ParameterTable, mirror_gamma: bool = False):
        rows = np.concatenate([np.arange(128), 255 - np.arange(128, 256)])
        self.alpha = table.alpha[rows]
        self.beta = table.beta[rows]
        self.gamma = table.gamma[rows].copy()
        if mirror_gamma:
            self.gamma[128:] = 255.0 - self.gamma[128:]
        self.mirror_gamma = mirror_gamma

    def triple(self, g: int, f: int) -> tuple[float, float, float]:
        if not 0 <= g <= 255 or not 0 <= f <= 255:
            raise ValueError("lookup out of range")
        return (
            float(self.alpha[g, f]),
            float(self.beta[g, f]),
            float(self.gamma[g, f]),
        )


def expand_symmetric(table: ParameterTable, mirror_gamma: bool = False) -> ExpandedTable:
    return ExpandedTable(table, mirror_gamma)


# ---------------------------------------------------------------------------
# Bounded downhill simplex
# ---------------------------------------------------------------------------

def _project(point: np.ndarray, bounds) -> np.ndarray:
    out = point.copy()
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None and out[i] < lo:
            out[i] = lo
        if hi is not None and out[i] > hi:
            out[i] = hi
    return out


def downhill_search(cost, start, bounds=BOUNDS, options: SimplexOptions | None = None):
    """Nelder-Mead descent with projection onto the bound box.

    Returns (best point, best cost); the result never exceeds the start
    cost.  A converged simplex is probed with small per-coordinate
    perturbations and restarted (with reduced steps) when one improves,
    which also recovers from simplices flattened against a bound face.
    Terminates when the probes fail or the evaluation budget runs out.
    """
    opts = options or SimplexOptions()
    start = _project(np.asarray(start, dtype=np.float64), bounds)
    ndim = start.size
    evals = 0

    def feval(p):
        nonlocal evals
        evals += 1
        val = float(cost(p))
        if not np.isfinite(val):
            raise ValueError(f"cost evaluated to a non-finite value at {p!r}")
        return val

    def build_simplex(origin, steps):
        simplex = [origin]
        for i in range(ndim):
            vertex = origin.copy()
            vertex[i] += steps[i]
            vertex = _project(vertex, bounds)
            if np.array_equal(vertex, origin):
                vertex = origin.copy()
                vertex[i] -= steps[i]
                vertex = _project(vertex, bounds)
            simplex.append(vertex)
        return simplex

    steps = np.asarray(opts.steps, dtype=np.float64)
    simplex = build_simplex(start, steps)
    values = [feval(p) for p in simplex]
    best_point, best_value = start.copy(), values[0]

    while evals < opts.max_evals:
        order = np.argsort(values, kind="stable")
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        if values[0] < best_value:
            best_point, best_value = simplex[0].copy(), values[0]
        if values[-1] - values[0] <= opts.tol:
            # converged (possibly onto a bound face): probe each coordinate
            improved = None
            for i in range(ndim):
                for sign in (1.0, -1.0):
                    probe = best_point.copy()
                    probe[i] += sign * steps[i] * 0.5
                    probe = _project(probe, bounds)
                    if np.array_equal(probe, best_point) or evals >= opts.max_evals:
                        continue
                    f_p = feval(probe)
                    if f_p < best_value - opts.tol:
                        improved = (probe, f_p)
                        break
                if improved:
                    break
            if improved is None:
                break
            best_point, best_value = improved[0].copy(), improved[1]
            steps = steps * 0.5
            simplex = build_simplex(best_point, steps)
            values = [improved[1]] + [feval(p) for p in simplex[1:]]
            continue
        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        reflected = _project(centroid + opts.reflect * (centroid - worst), bounds)
        f_r = feval(reflected)
        if f_r < values[0]:
            if evals < opts.max_evals:
                expanded = _project(centroid + opts.expand * (centroid - worst), bounds)
                f_e = feval(expanded)
                if f_e < f_r:
                    simplex[-1], values[-1] = expanded, f_e
                    continue
            simplex[-1], values[-1] = reflected, f_r
            continue
        if f_r < values[-2]:
            simplex[-1], values[-1] = reflected, f_r
            continue
        contracted = _project(centroid + opts.contract * (worst - centroid), bounds)
        if evals < opts.max_evals:
            f_c = feval(contracted)
            if f_c < values[-1]:
                simplex[-1], values[-1] = contracted, f_c
                continue
        best = simplex[0]
        for i in range(1, ndim + 1):
            simplex[i] = _project(best + opts.shrink * (simplex[i] - best), bounds)
            if evals >= opts.max_evals:
                break
            values[i] = feval(simplex[i])

    i_best = int(np.argmin(values))
    if values[i_best] < best_value:
        best_point, best_value = simplex[i_best].copy(), values[i_best]
    return best_point, best_value


# ---------------------------------------------------------------------------
# Candidate evaluation
# ---------------------------------------------------------------------------

class _EvalState:
    """Precomputed per-config machinery shared by every evaluation."""

    def __init__(self, cfg: OptimizerConfig):
        dims = (cfg.patch_size, cfg.patch_size)
        self.cfg = cfg
        self.dims = dims
        self.sched = _schedule_for(cfg.ct, dims)
        self.f_map = _tile_map(
            cfg.prototype.first_black_level.astype(np.int64), *dims
        ).reshape(-1)
        self.kernel_lp = gaussian_lowpass(cfg.stage2_kernel_size)
        self.gt_bins: dict[int, np.ndarray] = {}

    def gt_apsd_bins(self, g: int) -> np.ndarray:
        bins = self.gt_bins.get(g)
        if bins is None:
            pattern = groundtruth_pattern(
                g, self.cfg.patch_size, self.cfg.dbs, self.cfg.cache_dir
            )
            bins = randomized_apsd(
                pattern, self.cfg.apsd_window, self.cfg.apsd_k, seed=self.cfg.apsd_seed
            ).bins
            self.gt_bins[g] = bins
        return bins

    def render_rows(self, g: int, row_alpha, row_beta, row_gamma) -> np.ndarray:
        """Halftone of the constant-g patch under one table row."""
        alpha = row_alpha[self.f_map]
        beta = row_beta[self.f_map]
        gamma = row_gamma[self.f_map]
        x_flat = np.full(self.f_map.size, float(g))
        out, _, _ = _run_engine(x_flat, self.sched, alpha, beta, gamma, 1)
        return out.reshape(self.dims)

    def cost_rows(self, g: int, stage: int, row_alpha, row_beta, row_gamma) -> float:
        out = self.render_rows(g, row_alpha, row_beta, row_gamma)
        if stage == 1:
            apsd = randomized_apsd(
                BinaryImage(out),
                self.cfg.apsd_window,
                self.cfg.apsd_k,
                seed=self.cfg.apsd_seed,
            )
            ref = apsd.__class__(
                bins=self.gt_apsd_bins(g),
                window_rows=apsd.window_rows,
                window_cols=apsd.window_cols,
                segments_k=apsd.segments_k,
                estimator=apsd.estimator,
                seed=apsd.seed,
            )
            return spectrum_cost(apsd, ref, SpectrumCostKind.SYMMETRIC_NORMALIZED)
        if stage == 2:
            patch = constant_patch(g, *self.dims)
            return hmse(patch, BinaryImage(out), self.kernel_lp)
        raise ValueError(f"unknown stage {stage!r}")


def _eval_state(cfg: OptimizerConfig) -> _EvalState:
    state = getattr(cfg, "_eval_state", None)
    if state is None:
        state = _EvalState(cfg)
        cfg._eval_state = state
    return state


def evaluate_candidate(table: ParameterTable, g: int, stage: int, cfg: OptimizerConfig) -> float:
    """Cost of the table at tone g: stage 1 is the symmetric-normalized
    spectral distance to the ground-truth pattern (shared estimator seed);
    stage 2 is the HMSE of the rendered constant patch."""
    if not 0 <= g <= 127:
        raise ValueError("tones must lie in [0, 127]")
    state = _eval_state(cfg)
    return state.cost_rows(g, stage, table.alpha[g], table.beta[g], table.gamma[g])


# ---------------------------------------------------------------------------
# Column search (serial and worker-pool)
# ---------------------------------------------------------------------------

_POOL_STATE: dict = {}


def _fork_init():
    # Workers inherit the parent state through fork; nothing to do.
    pass


def _search_column(args):
    (g, stage, f, row_alpha, row_beta, row_gamma) = args
    state: _EvalState = _POOL_STATE["state"]
    opts: SimplexOptions = _POOL_STATE["simplex"]
    row_a = row_alpha.copy()
    row_b = row_beta.copy()
    row_g = row_gamma.copy()

    def cost(triple):
        row_a[f], row_b[f], row_g[f] = triple
        return state.cost_rows(g, stage, row_a, row_b, row_g)

    start = np.array([row_alpha[f], row_beta[f], row_gamma[f]])
    best, best_cost = downhill_search(cost, start, BOUNDS, opts)
    return f, (float(best[0]), float(best[1]), float(best[2])), float(best_cost)


class _SearchCache:
    """Disk-persisted map from (stage, tone, column, frozen-row state) to a
    finished column search."""

    def __init__(self, cfg: OptimizerConfig):
        self.path = None
        self.data = {}
        if cfg.cache_dir is not None:
            os.makedirs(cfg.cache_dir, exist_ok=True)
            self.path = os.path.join(cfg.cache_dir, "search_cache.json")
            if os.path.exists(self.path):
                try:
                    with open(self.path, encoding="ascii") as fh:
                        self.data = json.load(fh)
                except (OSError, ValueError):
                    self.data = {}
        self.fingerprint = cfg.fingerprint()

    def key(self, stage, g, f, row_digest) -> str:
        return hashlib.sha1(
            f"{self.fingerprint}|{stage}|{g}|{f}|{row_digest}".encode()
        ).hexdigest()

    def save(self) -> None:
        if self.path is not None:
            with open(self.path, "w", encoding="ascii") as fh:
                json.dump(self.data, fh)


def optimize_stage(
    table: ParameterTable,
    stage: int,
    cfg: OptimizerConfig,
    evaluate=None,
):
    """One full stage of the coordinate-descent sweep over cfg.tones.

    Per tone: run an independent bounded simplex search for every column f
    (the rest of the table frozen), pick the best column, commit it only
    if it strictly improves on the best cost seen so far, and repeat until
    no commit happens or the iteration budget runs out.  Returns the new
    table and the commit trace (strictly decreasing per tone by
    construction).
    """
    if stage not in (1, 2):
        raise ValueError("stage must be 1 or 2")
    result = table.copy()
    trace = OptimizationTrace()
    custom_eval = evaluate is not None
    cache = _SearchCache(cfg) if not custom_eval else None
    state = _eval_state(cfg) if not custom_eval else None

    pool = None
    if not custom_eval and cfg.workers > 1:
        if multiprocessing.get_start_method(allow_none=False) != "fork":
            pool = None  # worker state relies on fork inheritance
        else:
            _POOL_STATE["state"] = state
            _POOL_STATE["simplex"] = cfg.simplex
            if state is not None:
                for g in cfg.tones:
                    state.gt_apsd_bins(g)  # materialize before forking
            pool = ProcessPoolExecutor(cfg.workers, initializer=_fork_init)
    if not custom_eval and pool is None:
        _POOL_STATE["state"] = state
        _POOL_STATE["simplex"] = cfg.simplex

    def search_all(g: int) -> list:
        row_digest = result.row_digest(g)
        rows = (result.alpha[g].copy(), result.beta[g].copy(), result.gamma[g].copy())
        if custom_eval:
            found = []
            for f in range(256):
                scratch = result.copy()

                def cost(triple, _f=f, _scratch=scratch):
                    _scratch.alpha[g, _f], _scratch.beta[g, _f], _scratch.gamma[g, _f] = triple
                    return evaluate(_scratch, g, stage, cfg)

                start = np.array([result.alpha[g, f], result.beta[g, f], result.gamma[g, f]])
                best, best_cost = downhill_search(cost, start, BOUNDS, cfg.simplex)
                found.append((f, tuple(float(v) for v in best), float(best_cost)))
            return found
        tasks, found = [], []
        for f in range(256):
            key = cache.key(stage, g, f, row_digest)
            hit = cache.data.get(key)
            if hit is not None:
                found.append((f, tuple(hit[0]), float(hit[1])))
            else:
                tasks.append((g, stage, f, *rows))
        if tasks:
            runner = pool.map(_search_column, tasks, chunksize=8) if pool else map(
                _search_column, tasks
            )
            for f, triple, cost_val in runner:
                cache.data[cache.key(stage, g, f, row_digest)] = [list(triple), cost_val]
                found.append((f, triple, cost_val))
        found.sort(key=lambda item: item[0])
        return found

    try:
        for g in cfg.tones:
            if custom_eval:
                e_opt = float(evaluate(result, g, stage, cfg))
            else:
                e_opt = state.cost_rows(
                    g, stage, result.alpha[g], result.beta[g], result.gamma[g]
                )
            for k in range(cfg.outer_max_iters):
                found = search_all(g)
                costs = np.array([c for (_, _, c) in found])
                f_star = int(np.argmin(costs))  # ties resolve to the smallest f
                best_cost = float(costs[f_star])
                if not best_cost < e_opt:
                    break
                triple = found[f_star][1]
                result.set_triple(g, f_star, *triple)
                companion = None
                if not custom_eval:
                    other = 2 if stage == 1 else 1
                    companion = state.cost_rows(
                        g, other, result.alpha[g], result.beta[g], result.gamma[g]
                    )
                trace.steps.append(
                    TraceStep(stage, g, k, f_star, best_cost, companion)
                )
                e_opt = best_cost
    finally:
        if pool is not None:
            pool.shutdown()
        if cache is not None:
            cache.save()
    return result, trace
