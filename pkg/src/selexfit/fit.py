"""Likelihood over all SELEX rounds and its multi-start simplex maximization."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from . import _kernels
from .energy import EnergyMatrix, best_site_energies, canonical_orientation, normalize_ddg
from .seqcore import Sequence, canonical_type, encode_many, substream
from .thermo import (
    DEFAULT_MC_SAMPLE_SIZE,
    DenominatorEstimate,
    MCSample,
    SelexModel,
    enumerate_types,
    fast_log_denominators,
    log_round_probs,
    log_selection_weights,
)

log = logging.getLogger(__name__)

# substream tag for restart initializations
RESTART_STREAM = 0xF17


class FitError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RoundCounts:
    """Observed read counts per round, keyed by canonical double-stranded type.

    ``rounds`` maps a 1-based round index to ``{sequence: count}``. Rounds
    may be missing (no reads taken) but every present round has at least
    one type with count >= 1.
    """

    rounds: dict
    k: int

    def __post_init__(self):
        if not self.rounds:
            raise ValueError("no rounds")
        clean = {}
        for r, table in sorted(self.rounds.items()):
            if int(r) != r or r < 1:
                raise ValueError(f"round index must be a positive integer, got {r!r}")
            merged: dict[str, int] = {}
            for s, c in table.items():
                s = canonical_type(s)
                if len(s) != self.k:
                    raise ValueError(f"sequence {s} has length {len(s)}, expected {self.k}")
                if int(c) != c or c < 1:
                    raise ValueError(f"count for {s} in round {r} must be a positive integer, got {c!r}")
                merged[s] = merged.get(s, 0) + int(c)
            if not merged:
                raise ValueError(f"round {r} has no reads")
            clean[int(r)] = dict(sorted(merged.items()))
        object.__setattr__(self, "rounds", clean)

    @classmethod
    def from_records(cls, records, k: int | None = None) -> "RoundCounts":
        """Build from ``(sequence, count, round)`` triples, merging reverse complements."""
        rounds: dict[int, dict[str, int]] = {}
        for seq, count, r in records:
            seq = Sequence(seq)
            if k is None:
                k = len(seq)
            table = rounds.setdefault(int(r), {})
            key = canonical_type(seq)
            if len(key) != k:
                raise ValueError(f"sequence {seq} has length {len(seq)}, expected {k}")
            if int(count) != count or count < 1:
                raise ValueError(f"count must be a positive integer, got {count!r}")
            table[key] = table.get(key, 0) + int(count)
        if k is None:
            raise ValueError("no records")
        return cls(rounds, k)

    @property
    def R(self) -> int:
        return max(self.rounds)

    def total(self, r: int) -> int:
        return sum(self.rounds.get(r, {}).values())

    def types(self) -> list[str]:
        return sorted({s for table in self.rounds.values() for s in table})

    def records(self):
        for r, table in self.rounds.items():
            for s, c in table.items():
                yield s, c, r

    def __eq__(self, other):
        if not isinstance(other, RoundCounts):
            return NotImplemented
        return self.k == other.k and self.rounds == other.rounds


@dataclass(frozen=True)
class FitConfig:
    l: int = 10
    restarts: int = 50
    fit_log_tf: bool = True
    log_tf: tuple | None = None
    fit_junk: bool = False
    c_junk: float = 0.0
    ftol: float = 1e-8
    xtol: float = 1e-6
    max_iter: int = 50_000
    initial_step: float = 1.0
    adaptive: bool = True
    # fresh simplices started from the winning restart; 0 disables
    polish_rounds: int = 0
    polish_iter: int = 20_000
    mc_sample_size: int = DEFAULT_MC_SAMPLE_SIZE
    denominator: str = "mc"
    seed: int = 0
    n_jobs: int = 1
    init_energy_range: tuple = (-5.0, 0.0)
    init_log_tf_range: tuple = (-3.0, 0.0)
    init_c_junk: float = 0.01
    # optional l x 4 boolean mask of free cells, others held at ``fixed_matrix``
    free_cells: tuple | None = None
    fixed_matrix: tuple | None = None

    def __post_init__(self):
        if self.l < 1:
            raise ValueError("l must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not (self.ftol > 0 and self.xtol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1 or self.polish_iter < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.polish_rounds < 0:
            raise ValueError("polish_rounds must be >= 0")
        if self.denominator not in ("mc", "exact"):
            raise ValueError("denominator must be 'mc' or 'exact'")
        if not self.fit_log_tf and self.log_tf is None:
            raise ValueError("log_tf values are required when fit_log_tf is off")
        if self.mc_sample_size < 1:
            raise ValueError("mc_sample_size must be >= 1")
        if not 0.0 <= self.c_junk <= 1.0:
            raise ValueError("c_junk must lie in [0, 1]")
        if (self.free_cells is None) != (self.fixed_matrix is None):
            raise ValueError("free_cells and fixed_matrix go together")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RestartTrace:
    index: int
    start: list
    final_value: float
    iterations: int
    evaluations: int
    converged: bool


@dataclass
class FitResult:
    model: SelexModel | None
    log_likelihood: float
    traces: list = field(default_factory=list)
    config: FitConfig | None = None
    consensus_energy: float = 0.0
    success: bool = True

    @property
    def matrix(self) -> EnergyMatrix:
        return self.model.matrix

    @property
    def log_tf(self) -> tuple:
        return self.model.log_tf

    @property
    def c_junk(self) -> float:
        return self.model.c_junk


# -- likelihood ---------------------------------------------------------------------


def log_likelihood(model: SelexModel, data: RoundCounts, denominators) -> float:
    """Sum over rounds and types of ``count * log P_r(S_i)``.

    ``denominators`` holds one :class:`DenominatorEstimate` (or positive
    float) per round prefix ``1..R``. Non-finite results are logged and
    reported as ``-inf``.
    """
    if model.rounds < data.R:
        raise ValueError(f"model has {model.rounds} rounds, data needs {data.R}")
    values = [d.value if isinstance(d, DenominatorEstimate) else float(d) for d in denominators]
    total = 0.0
    for r, table in data.rounds.items():
        seqs = list(table)
        counts = np.array([table[s] for s in seqs], dtype=np.float64)
        energies = best_site_energies(model.matrix, seqs)
        log_w = log_selection_weights(model, energies)[:, r - 1]
        total += float(np.dot(counts, log_w - np.log(values[r - 1])))
    if not math.isfinite(total):
        log.debug("non-finite log-likelihood for model %r", model)
        return -math.inf
    return total


class SelexLikelihood:
    """Log-likelihood as a fast deterministic function of a :class:`SelexModel`.

    Window indices for the observed types and the normalizing sample are
    built once; every call only rebuilds the small chunk tables.
    """

    def __init__(self, data: RoundCounts, l: int, denominator: str = "mc",
                 mc_sample_size: int = DEFAULT_MC_SAMPLE_SIZE, seed: int = 0,
                 sample: MCSample | None = None):
        if l > data.k:
            raise ValueError(f"site length {l} exceeds read length {data.k}")
        self.data = data
        self.l = l
        self.R = data.R
        types = data.types()
        self.n_obs = len(types)
        pos = {s: i for i, s in enumerate(types)}
        counts = np.zeros((self.n_obs, self.R))
        for r, table in data.rounds.items():
            for s, c in table.items():
                counts[pos[s], r - 1] = c
        # reads in round r contribute log t_{r'} for every r' <= r
        self.tail_counts = np.cumsum(counts[:, ::-1], axis=1)[:, ::-1].copy()
        self.round_totals = counts.sum(axis=0)

        if denominator == "exact":
            ref_codes = enumerate_types(data.k)
            self.ref_log_weights = np.zeros(ref_codes.shape[0])
            self.sample = None
        else:
            self.sample = sample if sample is not None else MCSample.draw(mc_sample_size, data.k, seed)
            if self.sample.k != data.k:
                raise ValueError("Monte Carlo sample length does not match the reads")
            ref_codes = self.sample.codes
            self.ref_log_weights = self.sample.log_weights
        self.denominator = denominator
        codes = np.concatenate([encode_many(types), ref_codes])
        self.index = _kernels.window_index(codes, l)

    def energies(self, matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        e = _kernels.best_from_index(self.index, _kernels.chunk_tables(matrix))
        return e[: self.n_obs], e[self.n_obs:]

    def log_denominators(self, model: SelexModel) -> np.ndarray:
        _, e_ref = self.energies(model.matrix.values)
        return fast_log_denominators(model, e_ref, self.ref_log_weights)

    def __call__(self, model: SelexModel) -> float:
        if model.rounds < self.R:
            raise ValueError(f"model has {model.rounds} rounds, data needs {self.R}")
        e_obs, e_ref = self.energies(model.matrix.values)
        R = self.R
        log_tf = model.log_tf[:R]
        log_t = log_round_probs(log_tf, model.c_junk, e_obs)
        data_term = float(np.sum(self.tail_counts * log_t))
        sub = SelexModel(model.matrix, log_tf, model.c_junk) if model.rounds != R else model
        log_d = fast_log_denominators(sub, e_ref, self.ref_log_weights)
        value = data_term - float(np.dot(self.round_totals, log_d))
        if not math.isfinite(value):
            log.debug("non-finite objective at log_tf=%s c_junk=%s", log_tf, model.c_junk)
            return -math.inf
        return value


# -- simplex -------------------------------------------------------------------------


@dataclass
class SimplexResult:
    x: np.ndarray
    value: float
    iterations: int
    evaluations: int
    converged: bool


def nelder_mead(objective, start, ftol: float = 1e-8, xtol: float = 1e-6,
                max_iter: int = 50_000, initial_step: float = 1.0,
                adaptive: bool = False) -> SimplexResult:
    """Maximize ``objective`` with the downhill simplex method.

    Standard coefficients: reflection 1, expansion 2, contraction 0.5,
    shrink 0.5. ``adaptive=True`` scales expansion, contraction and shrink
    with the dimension ``n`` (1 + 2/n, 0.75 - 1/(2n), 1 - 1/n), which keeps
    the simplex from collapsing in a few dozen dimensions.

    Converged means both the spread of function values is at most
    ``ftol * max(1, |f|)`` and every vertex lies within ``xtol`` (max norm)
    of the best one; otherwise the run stops after ``max_iter`` iterations.
    ``-inf`` objective values are treated as infeasible points.
    """
    x0 = np.atleast_1d(np.asarray(start, dtype=np.float64))
    n = x0.size
    if adaptive:
        rho, chi, psi, sigma = 1.0, 1.0 + 2.0 / n, 0.75 - 0.5 / n, 1.0 - 1.0 / n
    else:
        rho, chi, psi, sigma = 1.0, 2.0, 0.5, 0.5
    evaluations = 0

    def f(x):
        nonlocal evaluations
        evaluations += 1
        v = objective(x)
        # minimize the negation; nan counts as the worst possible value
        return math.inf if v is None or not v > -math.inf else -float(v)

    sim = np.empty((n + 1, n))
    sim[0] = x0
    for i in range(n):
        sim[i + 1] = x0
        sim[i + 1, i] += initial_step
    fs = np.array([f(x) for x in sim])

    it = 0
    converged = False
    while it < max_iter:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        fspread = fs[-1] - fs[0]
        f_ok = math.isfinite(fspread) and fspread <= ftol * max(1.0, abs(fs[0]))
        if f_ok and np.max(np.abs(sim[1:] - sim[0])) <= xtol:
            converged = True
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        worst = sim[-1]
        xr = centroid + rho * (centroid - worst)
        fr = f(xr)
        if fr < fs[0]:
            xe = centroid + chi * (centroid - worst)
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + psi * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + psi * (worst - centroid)
            fc = f(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        # shrink toward the best vertex
        sim[1:] = sim[0] + sigma * (sim[1:] - sim[0])
        fs[1:] = [f(x) for x in sim[1:]]

    best = int(np.argmin(fs))
    value = -fs[best] if math.isfinite(fs[best]) else -math.inf
    return SimplexResult(sim[best].copy(), value, it, evaluations, converged)


# -- parameterization ------------------------------------------------------------------


class ParamLayout:
    """Map between a flat parameter vector and a :class:`SelexModel`.

    Free matrix cells come first (row-major), then per-round ``log_tf`` when
    fitted, then ``logit(c_junk)`` when fitted.
    """

    def __init__(self, base: np.ndarray, free: np.ndarray, R: int, config: FitConfig):
        self.base = np.array(base, dtype=np.float64)
        self.free = np.array(free, dtype=bool)
        self.R = R
        self.config = config
        self.n_cells = int(self.free.sum())
        self.size = self.n_cells + (R if config.fit_log_tf else 0) + (1 if config.fit_junk else 0)

    def model(self, theta) -> SelexModel:
        theta = np.asarray(theta, dtype=np.float64)
        m = self.base.copy()
        m[self.free] = theta[: self.n_cells]
        i = self.n_cells
        if self.config.fit_log_tf:
            log_tf = theta[i:i + self.R]
            i += self.R
        else:
            log_tf = np.asarray(self.config.log_tf, dtype=np.float64)
        c_junk = float(expit(theta[i])) if self.config.fit_junk else self.config.c_junk
        return SelexModel(EnergyMatrix(m), tuple(log_tf), c_junk)

    def vector(self, model: SelexModel) -> np.ndarray:
        parts = [model.matrix.values[self.free]]
        if self.config.fit_log_tf:
            parts.append(np.asarray(model.log_tf[: self.R]))
        if self.config.fit_junk:
            parts.append([logit(min(max(model.c_junk, 1e-12), 1 - 1e-12))])
        return np.concatenate(parts)


def initial_layout(config: FitConfig, R: int, rng: np.random.Generator) -> tuple[ParamLayout, np.ndarray]:
    """Random start and the matching free-cell layout for one restart."""
    lo, hi = config.init_energy_range
    l = config.l
    if config.free_cells is not None:
        free = np.asarray(config.free_cells, dtype=bool)
        base = np.asarray(config.fixed_matrix, dtype=np.float64)
        if free.shape != (l, 4) or base.shape != (l, 4):
            raise ValueError("free_cells and fixed_matrix must have shape (l, 4)")
        start_m = base.copy()
        start_m[free] = rng.uniform(lo, hi, size=int(free.sum()))
    else:
        raw = rng.uniform(lo, hi, size=(l, 4))
        pinned = np.argmax(raw, axis=1)
        free = np.ones((l, 4), dtype=bool)
        free[np.arange(l), pinned] = False
        start_m = raw - raw.max(axis=1, keepdims=True)
        if not config.fit_log_tf:
            # log_tf held fixed: the overall energy level is then identifiable,
            # carried by leaving row 0 completely free
            free[0] = True
            start_m[0] = raw[0]
        base = np.zeros((l, 4))
    if config.fit_log_tf:
        lt_lo, lt_hi = config.init_log_tf_range
        log_tf = rng.uniform(lt_lo, lt_hi, size=R)
    else:
        log_tf = np.asarray(config.log_tf, dtype=np.float64)
    c_junk = config.init_c_junk if config.fit_junk else config.c_junk
    layout = ParamLayout(base, free, R, config)
    start = layout.vector(SelexModel(EnergyMatrix(start_m), tuple(log_tf), c_junk))
    return layout, start


def apply_identifiability(model: SelexModel, return_shift: bool = False):
    """Project onto the reported gauge without changing any binding probability.

    Every row maximum is moved to 0 and the removed total is added to each
    round's ``log_tf``; then the strand orientation whose consensus is
    alphabetically first is chosen.
    """
    matrix, shift = normalize_ddg(model.matrix, return_shift=True)
    matrix, _ = canonical_orientation(matrix)
    out = SelexModel(matrix, tuple(x + shift for x in model.log_tf), model.c_junk)
    if return_shift:
        return out, shift
    return out


# -- multi-start driver ---------------------------------------------------------------


class _Objective:
    def __init__(self, likelihood: SelexLikelihood, layout: ParamLayout):
        self.likelihood = likelihood
        self.layout = layout

    def __call__(self, theta):
        if not np.all(np.isfinite(theta)):
            return -math.inf
        try:
            model = self.layout.model(theta)
        except ValueError:
            return -math.inf
        return self.likelihood(model)


def _run_restart(likelihood: SelexLikelihood, config: FitConfig, index: int):
    rng = substream(config.seed, RESTART_STREAM, index)
    layout, start = initial_layout(config, likelihood.R, rng)
    res = nelder_mead(_Objective(likelihood, layout), start, ftol=config.ftol, xtol=config.xtol,
                      max_iter=config.max_iter, initial_step=config.initial_step,
                      adaptive=config.adaptive)
    model = layout.model(res.x) if math.isfinite(res.value) else None
    trace = RestartTrace(index, start.tolist(), res.value, res.iterations, res.evaluations, res.converged)
    return trace, model


def _layout_at(model: SelexModel, config: FitConfig, R: int):
    """Layout pinning each row's current maximum, with ``model`` moved into that gauge."""
    if config.free_cells is not None:
        free = np.asarray(config.free_cells, dtype=bool)
        return ParamLayout(np.asarray(config.fixed_matrix, dtype=np.float64), free, R, config), model
    m = model.matrix.values.copy()
    shift = m.max(axis=1)
    free = np.ones(m.shape, dtype=bool)
    free[np.arange(model.l), np.argmax(m, axis=1)] = False
    log_tf = np.asarray(model.log_tf)
    if config.fit_log_tf:
        m -= shift[:, None]
        log_tf = log_tf + shift.sum()
    else:
        # fixed log_tf: row 0 stays free and absorbs the other rows' shifts
        m[1:] -= shift[1:, None]
        m[0] += shift[1:].sum()
        free[0] = True
    moved = SelexModel(EnergyMatrix(m), tuple(log_tf), model.c_junk)
    return ParamLayout(np.zeros(m.shape), free, R, config), moved


def _polish(likelihood: SelexLikelihood, config: FitConfig, model: SelexModel):
    """Restart the simplex at ``model`` until a round no longer improves it."""
    layout, model = _layout_at(model, config, likelihood.R)
    x = layout.vector(model)
    objective = _Objective(likelihood, layout)
    value = objective(x)
    for _ in range(config.polish_rounds):
        res = nelder_mead(objective, x, ftol=config.ftol, xtol=config.xtol,
                          max_iter=config.polish_iter, initial_step=config.initial_step,
                          adaptive=config.adaptive)
        gain = res.value - value
        if gain > 0:
            x, value = res.x, res.value
        if gain <= config.ftol * max(1.0, abs(value)):
            break
    return layout.model(x), value


def multi_start_fit(data: RoundCounts, config: FitConfig, sample: MCSample | None = None) -> FitResult:
    """Run ``config.restarts`` independent simplex ascents and keep the best.

    Restart ``i`` draws its start from substream ``(seed, i)``; the winner is
    the highest final value with ties going to the lower restart index, so
    the result does not depend on ``n_jobs``.
    """
    if config.log_tf is not None and not config.fit_log_tf and len(config.log_tf) < data.R:
        raise ValueError(f"log_tf has {len(config.log_tf)} entries, data has {data.R} rounds")
    likelihood = SelexLikelihood(data, config.l, config.denominator, config.mc_sample_size,
                                 config.seed, sample=sample)
    indices = range(config.restarts)
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            outcomes = list(pool.map(_run_restart, [likelihood] * config.restarts,
                                     [config] * config.restarts, indices))
    else:
        outcomes = [_run_restart(likelihood, config, i) for i in indices]

    traces = [t for t, _ in outcomes]
    finite = [i for i, (t, m) in enumerate(outcomes) if m is not None and math.isfinite(t.final_value)]
    if not finite:
        return FitResult(None, -math.inf, traces, config, success=False)
    best = max(finite, key=lambda i: (outcomes[i][0].final_value, -i))
    model = outcomes[best][1]
    if config.polish_rounds:
        model, polished = _polish(likelihood, config, model)
        log.info("polished restart %d: %.6f -> %.6f", best, outcomes[best][0].final_value, polished)
    model, shift = apply_identifiability(model, return_shift=True)
    value = likelihood(model)
    log.info("best restart %d: log-likelihood %.6f", best, value)
    return FitResult(model, value, traces, config, consensus_energy=shift)


def grid_search(objective, lo: float, hi: float, n: int = 2001, refine: int = 3):
    """Exhaustive 1-d grid maximization with successive local refinement."""
    grid = np.linspace(lo, hi, n)
    for _ in range(refine + 1):
        values = np.array([objective(np.array([g])) for g in grid])
        i = int(np.argmax(values))
        step = grid[1] - grid[0]
        best_x, best_v = grid[i], values[i]
        grid = np.linspace(best_x - step, best_x + step, n)
    return float(best_x), float(best_v)


def with_seed(config: FitConfig, seed: int) -> FitConfig:
    return replace(config, seed=seed)
