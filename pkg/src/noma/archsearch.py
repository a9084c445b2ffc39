"""Two-objective genetic search over field architectures and training hyperparameters.

Objectives, both minimized: scaled training time per inner iteration and the
mean Chamfer distance on held-out tasks after adaptation from the
meta-learned initialization.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, NamedTuple

import numpy as np

from . import field as nf
from . import meshmetrics as mm
from . import priorgrid as pg
from .metalearn import MetaConfig, meta_train
from .training import TrainConfig, field_to_canonical, fit_task

log = logging.getLogger(__name__)

PENALTY_CD = 1e6
TIME_SCALE = 10.0  # seconds per iteration -> plotted "scaled" time
COST_NS_PER_FLOP = 1.0  # calibration of the deterministic cost model


@dataclass(frozen=True)
class Gene:
    name: str
    kind: str  # "int", "real" or "cat"
    lo: float = 0.0
    hi: float = 0.0
    choices: tuple = ()

    def contains(self, v) -> bool:
        if self.kind == "cat":
            return v in self.choices
        if self.kind == "int" and int(v) != v:
            return False
        return self.lo <= v <= self.hi

    def draw(self, rng: np.random.Generator):
        if self.kind == "cat":
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.kind == "int":
            return int(rng.integers(int(self.lo), int(self.hi) + 1))
        return float(rng.uniform(self.lo, self.hi))

    def clip(self, v):
        if self.kind == "cat":
            return v
        v = min(max(v, self.lo), self.hi)
        return int(round(v)) if self.kind == "int" else float(v)


DEFAULT_DOMAINS = (
    Gene("hash_levels", "int", 1, 10),
    Gene("log2_table_size", "int", 8, 16),
    Gene("features_per_level", "int", 1, 4),
    Gene("hidden_width", "int", 1, 64),
    Gene("hidden_layers", "int", 1, 3),
    Gene("N", "int", 10, 300),
    Gene("q", "int", 5, 60),
    Gene("eta", "real", 1e-3, 3e-2),
    Gene("beta", "real", 0.05, 1.0),
    Gene("per_level_scale", "real", 1.2, 2.0),
    Gene("lambda_d", "real", 1.0, 30.0),
    Gene("lambda_sigma", "real", 1e-4, 1e-2),
    Gene("density_activation", "cat", choices=nf.DENSITY_ACTIVATIONS),
)
GENE_NAMES = tuple(g.name for g in DEFAULT_DOMAINS)


@dataclass(frozen=True)
class Genome:
    hash_levels: int = 8
    log2_table_size: int = 14
    features_per_level: int = 2
    hidden_width: int = 64
    hidden_layers: int = 2
    N: int = 300
    q: int = 40
    eta: float = 1e-2
    beta: float = 0.1
    per_level_scale: float = 1.5
    lambda_d: float = 10.0
    lambda_sigma: float = 1e-3
    density_activation: str = "exp_clamped"

    def genes(self) -> tuple:
        return tuple(getattr(self, n) for n in GENE_NAMES)

    def arch(self) -> nf.FieldArch:
        return nf.FieldArch(hash_levels=self.hash_levels, features_per_level=self.features_per_level,
                            log2_table_size=self.log2_table_size,
                            per_level_scale=self.per_level_scale, hidden_width=self.hidden_width,
                            hidden_layers=self.hidden_layers,
                            density_activation=self.density_activation)

    def meta_config(self, seed: int = 0) -> MetaConfig:
        return MetaConfig(N=self.N, q=self.q, eta=self.eta, beta=self.beta, seed=seed)

    def train_config(self, base: TrainConfig | None = None) -> TrainConfig:
        return (base or TrainConfig()).with_(lr=self.eta, lambda_d=self.lambda_d,
                                             lambda_sigma=self.lambda_sigma)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Genome":
        kw = {}
        for f in fields(cls):
            if f.name in d:
                default = getattr(cls, f.name)
                kw[f.name] = d[f.name] if isinstance(default, str) else type(default)(d[f.name])
        return cls(**kw)

    @classmethod
    def from_genes(cls, genes) -> "Genome":
        return cls(**dict(zip(GENE_NAMES, genes)))


def in_domain(g: Genome, domains=DEFAULT_DOMAINS) -> bool:
    return all(d.contains(getattr(g, d.name)) for d in domains)


def random_genome(rng: np.random.Generator, domains=DEFAULT_DOMAINS) -> Genome:
    return Genome(**{d.name: d.draw(rng) for d in domains})


class Evaluation(NamedTuple):
    time_per_iter: float
    cd: float


def cost_model_time(arch: nf.FieldArch, n_points: int) -> float:
    """Deterministic stand-in for wall time: a flop estimate of one training iteration."""
    L, F = arch.hash_levels, arch.features_per_level
    mlp = sum(a * b for a, b in arch.layer_shapes())
    per_point = L * 8 * (3 * F + 12) + 6 * mlp + 20 * (arch.hidden_layers + 1) * arch.hidden_width
    flops = n_points * per_point + 12 * arch.param_count
    return flops * COST_NS_PER_FLOP * 1e-9


@dataclass(frozen=True)
class SearchConfig:
    adapt_iters: int = 100  # fixed adaptation budget per test task
    time_mode: str = "wall"  # "wall" or "cost"
    grid_res: int = pg.DEFAULT_RESOLUTION
    cd_points: int = 4000
    mutation_rate: float | None = None  # None -> 1/|genes|
    blend_alpha: float = 0.5
    domains: tuple = DEFAULT_DOMAINS
    default: Genome = field(default_factory=Genome)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.time_mode not in ("wall", "cost"):
            raise ValueError(f"time_mode must be 'wall' or 'cost', got {self.time_mode!r}")
        for d in self.domains:
            v = getattr(self.default, d.name)
            if not d.contains(v):
                raise ValueError(f"default genome value {d.name}={v} lies outside its domain")


def _adapted_cd(arch, theta, task, iters, tcfg, seed, cfg: SearchConfig, times: list) -> float:
    res = fit_task(arch, theta, task, iters, tcfg, np.random.default_rng(seed), timed=True)
    times.extend(res.iter_times)
    _, mesh = pg.bake_prior(res.params, arch, cfg.grid_res)
    if mesh.is_empty:
        return PENALTY_CD
    mesh = mesh.transformed(lambda v: field_to_canonical(v, task.gt_size))
    return mm.mesh_scores(mesh, task.gt_mesh, n_points=cfg.cd_points, seed=seed, n_emd=0).cd


def evaluate_genome(g: Genome, train_tasks, test_tasks, eval_seed: int,
                    cfg: SearchConfig | None = None, keep: dict | None = None) -> Evaluation:
    """Meta-train ``g`` on ``train_tasks`` and score adaptation on ``test_tasks``.

    Divergence and empty reconstructions get the finite penalty CD. The
    meta-learned parameters are stored in ``keep['theta']`` when given.
    """
    if not train_tasks or not test_tasks:
        raise ValueError("evaluation needs non-empty train and test task sets")
    cfg = cfg or SearchConfig()
    arch = g.arch()
    tcfg = g.train_config(cfg.train)
    times: list[float] = []
    try:
        theta = meta_train(train_tasks, arch, g.meta_config(eval_seed), tcfg, step_times=times)
        cds = [_adapted_cd(arch, theta, t, cfg.adapt_iters, tcfg, eval_seed + 7919 * (i + 1), cfg, times)
               for i, t in enumerate(test_tasks)]
        cd = float(np.mean(cds))
    except FloatingPointError as exc:
        log.info("genome %s diverged: %s", g.genes(), exc)
        theta, cd = None, PENALTY_CD
    if not np.isfinite(cd):
        cd = PENALTY_CD
    if keep is not None:
        keep["theta"] = theta
    n_points = cfg.train.n_rays * cfg.train.n_samples
    if cfg.time_mode == "cost" or not times:
        t = cost_model_time(arch, n_points)
    else:
        t = float(np.median(times))
    return Evaluation(t * TIME_SCALE, cd)


# --------------------------------------------------------------------------
# NSGA-II machinery


def _dominates(a, b) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def non_dominated_sort(points) -> list[list[int]]:
    """Fronts of index lists for two-objective minimization."""
    pts = [tuple(p) for p in points]
    n = len(pts)
    dominated_by = [[] for _ in range(n)]
    count = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if _dominates(pts[i], pts[j]):
                dominated_by[i].append(j)
                count[j] += 1
            elif _dominates(pts[j], pts[i]):
                dominated_by[j].append(i)
                count[i] += 1
    fronts = []
    current = [i for i in range(n) if count[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                count[j] -= 1
                if count[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
    return fronts


def crowding_distance(objs) -> np.ndarray:
    objs = np.asarray(objs, dtype=float).reshape(len(objs), -1)
    n, k = objs.shape
    if n == 0:
        raise ValueError("crowding distance of an empty front")
    dist = np.zeros(n)
    for m in range(k):
        order = np.argsort(objs[:, m], kind="stable")
        span = objs[order[-1], m] - objs[order[0], m]
        if span == 0:
            span = 1.0
        dist[order[0]] = dist[order[-1]] = np.inf
        for a in range(1, n - 1):
            dist[order[a]] += (objs[order[a + 1], m] - objs[order[a - 1], m]) / span
    return dist


def rank_and_crowding(evals) -> tuple[np.ndarray, np.ndarray]:
    n = len(evals)
    rank = np.zeros(n, int)
    crowd = np.zeros(n)
    for r, front in enumerate(non_dominated_sort(evals)):
        rank[front] = r
        crowd[front] = crowding_distance([evals[i] for i in front])
    return rank, crowd


def tournament(rank, crowd, rng: np.random.Generator) -> int:
    a, b = rng.integers(len(rank), size=2)
    if rank[a] != rank[b]:
        return int(a if rank[a] < rank[b] else b)
    if crowd[a] != crowd[b]:
        return int(a if crowd[a] > crowd[b] else b)
    return int(min(a, b))


def crossover(p1: Genome, p2: Genome, rng: np.random.Generator, domains=DEFAULT_DOMAINS,
              alpha: float = 0.5) -> Genome:
    kw = {}
    for d in domains:
        a, b = getattr(p1, d.name), getattr(p2, d.name)
        if d.kind == "real":
            u = rng.uniform(-alpha, 1.0 + alpha)
            kw[d.name] = d.clip(a + u * (b - a))
        else:
            kw[d.name] = a if rng.random() < 0.5 else b
    return replace(p1, **kw)


def mutate(g: Genome, rng: np.random.Generator, rate: float, domains=DEFAULT_DOMAINS) -> Genome:
    kw = {d.name: d.draw(rng) for d in domains if rng.random() < rate}
    return replace(g, **kw) if kw else g


def environmental_select(evals, size: int) -> list[int]:
    """Indices of the ``size`` survivors: whole fronts first, then by crowding.

    Within the split front, ties in crowding go to the smaller CD, so the best-CD
    member of front 0 always survives.
    """
    chosen: list[int] = []
    for front in non_dominated_sort(evals):
        if len(chosen) + len(front) <= size:
            chosen.extend(front)
            continue
        crowd = crowding_distance([evals[i] for i in front])
        order = sorted(range(len(front)), key=lambda k: (-crowd[k], evals[front[k]][1], front[k]))
        chosen.extend(front[k] for k in order[:size - len(chosen)])
        break
    return chosen


def make_offspring(pop: list[Genome], evals, rng: np.random.Generator, domains=DEFAULT_DOMAINS,
                   mutation_rate: float | None = None, alpha: float = 0.5) -> list[Genome]:
    if len(pop) != len(evals):
        raise ValueError("population and evaluation counts differ")
    rate = 1.0 / len(domains) if mutation_rate is None else mutation_rate
    rank, crowd = rank_and_crowding(evals)
    kids = []
    while len(kids) < len(pop):
        p1 = pop[tournament(rank, crowd, rng)]
        p2 = pop[tournament(rank, crowd, rng)]
        kids.append(mutate(crossover(p1, p2, rng, domains, alpha), rng, rate, domains))
    return kids


def evolve(pop: list[Genome], evals, rng: np.random.Generator,
           evaluate: Callable[[Genome], Evaluation], domains=DEFAULT_DOMAINS,
           mutation_rate: float | None = None, alpha: float = 0.5):
    """One generation: offspring by tournament, crossover and mutation, then elitist survival.

    Returns the next population and its evaluations, both of the input size.
    """
    kids = make_offspring(pop, evals, rng, domains, mutation_rate, alpha)
    kid_evals = [evaluate(k) for k in kids]
    union = list(pop) + kids
    union_evals = list(evals) + kid_evals
    keep = environmental_select(union_evals, len(pop))
    return [union[i] for i in keep], [union_evals[i] for i in keep]


def knee_select(front) -> Genome:
    """Front member farthest from the chord joining the two normalized extremes."""
    return front[knee_index([e for _, e in front])][0]


def knee_candidates(front) -> list:
    """Front members eligible for the knee: penalized runs only when nothing else is left.

    A penalty CD marks a failed run. It keeps its place in the population, but as a
    chord end it would flatten every real CD to zero after normalization.
    """
    valid = [(g, e) for g, e in front if e[1] < PENALTY_CD]
    return valid or list(front)


def knee_index(evals) -> int:
    if len(evals) == 0:
        raise ValueError("knee of an empty front")
    pts = np.asarray(evals, dtype=float).reshape(-1, 2)
    lo, hi = pts.min(0), pts.max(0)
    span = np.where(hi > lo, hi - lo, 1.0)
    z = (pts - lo) / span
    a = min(range(len(z)), key=lambda i: (z[i, 0], z[i, 1]))
    b = min(range(len(z)), key=lambda i: (z[i, 1], z[i, 0]))
    chord = z[b] - z[a]
    length = float(np.hypot(*chord))
    if length == 0.0:
        dist = np.zeros(len(z))
    else:
        rel = z - z[a]
        dist = np.abs(chord[0] * rel[:, 1] - chord[1] * rel[:, 0]) / length
    best = dist.max()
    ties = [i for i in range(len(z)) if dist[i] >= best - 1e-12]
    return min(ties, key=lambda i: (pts[i, 1], i))


# --------------------------------------------------------------------------


@dataclass
class SearchResult:
    front: list  # (Genome, Evaluation) pairs of the final first front
    chosen: Genome
    theta: np.ndarray | None
    history: list = field(default_factory=list)  # (population, evaluations) per generation


def _log_line(gen: int, idx: int, g: Genome, e: Evaluation) -> str:
    return ",".join([str(gen), str(idx)] + [repr(v) if isinstance(v, float) else str(v)
                                            for v in g.genes()] + [repr(e.time_per_iter), repr(e.cd)])


def run_search(train_tasks, test_tasks, P: int, M: int, seed: int,
               cfg: SearchConfig | None = None, evaluate: Callable | None = None,
               log_path=None) -> SearchResult:
    """Full search loop; the default genome seeds the initial population."""
    if P < 2 or M < 1:
        raise ValueError("search needs P >= 2 and M >= 1")
    cfg = cfg or SearchConfig()
    rng = np.random.default_rng(seed)
    cache: dict[tuple, tuple[Evaluation, np.ndarray | None]] = {}

    def _eval(g: Genome) -> Evaluation:
        key = g.genes()
        if key not in cache:
            keep: dict = {}
            if evaluate is None:
                e = evaluate_genome(g, train_tasks, test_tasks, seed, cfg, keep)
            else:
                e = Evaluation(*evaluate(g))
            cache[key] = (e, keep.get("theta"))
        return cache[key][0]

    out = None
    if log_path is not None:
        out = open(log_path, "a")
        out.write("# gen,idx," + ",".join(GENE_NAMES) + ",time,cd\n")
    try:
        pop = [cfg.default] + [random_genome(rng, cfg.domains) for _ in range(P - 1)]
        evals = [_eval(g) for g in pop]
        history = [(pop, evals)]
        if out is not None:
            out.writelines(_log_line(0, i, g, e) + "\n" for i, (g, e) in enumerate(zip(pop, evals)))
        for gen in range(1, M + 1):
            t0 = time.perf_counter()
            pop, evals = evolve(pop, evals, rng, _eval, cfg.domains, cfg.mutation_rate,
                                cfg.blend_alpha)
            history.append((pop, evals))
            if out is not None:
                out.writelines(_log_line(gen, i, g, e) + "\n" for i, (g, e) in enumerate(zip(pop, evals)))
                out.flush()
            log.info("generation %d/%d done in %.1fs", gen, M, time.perf_counter() - t0)
    finally:
        if out is not None:
            out.close()
    front = [(pop[i], evals[i]) for i in non_dominated_sort(evals)[0]]
    chosen = knee_select(knee_candidates(front))
    theta = cache[chosen.genes()][1]
    return SearchResult(front, chosen, theta, history)
