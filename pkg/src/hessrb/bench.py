"""Experiment driver: problems, training sets, reduced models and error decay.

A configuration is a plain-text file of ``key = value`` lines (``#`` starts a
comment). Problem keys::

    problem = uniform            # or lognormal
    n_per_side = 33
    K = 64                       # uniform only
    kappa0 = 1.7420508075688772  # uniform only
    beta = 1                     # uniform only
    gamma = 0.5                  # lognormal only
    delta = 1
    alpha = 2

Shared keys: ``N_t``, ``N_max``, ``epsilon``, ``norm`` (V or l2), ``tol``
(greedy stopping value), ``test_size``, ``test_seed``, ``seed``, ``sweep``
(``1:100``, ``1:100:5`` or ``1,2,5``) and ``out``. Each ``scheme`` line adds
one construction, written ``<rom> <sampler> [key=value ...]``::

    scheme = pod random
    scheme = greedy random
    scheme = pod hessian-local L=12 c=10
    scheme = pod hessian-averaged M=5 L=12 c=10
    scheme = pod hessian-combined M=5 per_sample_L=12 L=12 c=10

All schemes of one experiment share the test set, which is drawn from the
full distribution with ``test_seed``. Training parameters of every scheme are
drawn from the same ``seed`` stream, so Hessian-based sets are projections of
the very samples the random scheme uses.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .affine_pde import (
    UNIFORM_HALF_WIDTH,
    ParametricProblem,
    make_lognormal_problem,
    make_uniform_piecewise_problem,
)
from .eigensolvers import GeneralizedEigenPairs
from .rom import ReducedModel, collect_snapshots, greedy_construct, pod_construct
from .sampling import (
    SubspaceSampler,
    build_averaged_subspace,
    build_combined_subspace,
    build_local_subspace,
    draw_random_set,
    local_eigenpairs,
)
from .textio import write_vectors

log = logging.getLogger(__name__)

CSV_HEADER = "N,err_u,err_s,scheme,L,seed"
QOI_ZERO_TOL = 1e-14
SAMPLERS = ("random", "hessian-local", "hessian-averaged", "hessian-combined")
ROMS = ("pod", "greedy")


class ConfigError(ValueError):
    """Inconsistent or malformed experiment configuration."""


# --------------------------------------------------------------------- config
@dataclass
class SchemeSpec:
    rom: str
    sampler: str
    L: int = 0
    c: int = 10
    M: int = 1
    per_sample_L: int = 0

    @property
    def label(self) -> str:
        return f"{self.rom}-{self.sampler}"

    def describe(self) -> str:
        extra = "" if self.sampler == "random" else f" L={self.L} c={self.c}"
        if self.sampler in ("hessian-averaged", "hessian-combined"):
            extra += f" M={self.M}"
        if self.sampler == "hessian-combined":
            extra += f" per_sample_L={self.per_sample_L}"
        return f"{self.rom} {self.sampler}{extra}"

    @classmethod
    def parse(cls, text: str) -> "SchemeSpec":
        tokens = text.split()
        if len(tokens) < 2:
            raise ConfigError(f"scheme needs '<rom> <sampler>', got {text!r}")
        spec = cls(tokens[0], tokens[1])
        for tok in tokens[2:]:
            key, sep, val = tok.partition("=")
            if not sep or key not in ("L", "c", "M", "per_sample_L"):
                raise ConfigError(f"bad scheme option {tok!r}")
            setattr(spec, key, int(val))
        if spec.sampler == "hessian-combined" and spec.per_sample_L == 0:
            spec.per_sample_L = spec.L
        return spec


@dataclass
class ExperimentConfig:
    problem: str = "uniform"
    n_per_side: int = 33
    K: int = 64
    kappa0: float = UNIFORM_HALF_WIDTH + 0.01
    beta: float = 1.0
    gamma: float = 0.5
    delta: float = 1.0
    alpha: int = 2
    schemes: list = field(default_factory=list)
    N_t: int = 300
    N_max: int = 100
    epsilon: float = 1e-14
    norm: str = "V"
    tol: float = 0.0
    test_size: int = 10
    test_seed: int = 20190101
    seed: int = 0
    sweep: Optional[list] = None
    out: str = "results"

    _INT = ("n_per_side", "K", "alpha", "N_t", "N_max", "test_size", "test_seed", "seed")
    _FLOAT = ("kappa0", "beta", "gamma", "delta", "epsilon", "tol")

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            try:
                if key == "scheme":
                    cfg.schemes.append(SchemeSpec.parse(val))
                elif key == "sweep":
                    cfg.sweep = parse_sweep(val)
                elif key in cls._INT:
                    setattr(cfg, key, int(val))
                elif key in cls._FLOAT:
                    setattr(cfg, key, float(val))
                elif key in ("problem", "norm", "out"):
                    setattr(cfg, key, val)
                else:
                    raise ConfigError(f"unknown key {key!r}")
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from exc
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        keys = ["problem", "n_per_side"]
        keys += ["K", "kappa0", "beta"] if self.problem == "uniform" else ["gamma", "delta", "alpha"]
        keys += ["N_t", "N_max", "epsilon", "norm", "tol", "test_size", "test_seed", "seed", "out"]
        lines = [f"{k} = {getattr(self, k)!r}".replace("'", "") for k in keys]
        if self.sweep is not None:
            lines.append("sweep = " + ",".join(str(n) for n in self.sweep))
        lines += [f"scheme = {s.describe()}" for s in self.schemes]
        return "\n".join(lines) + "\n"

    def validate(self) -> None:
        """Raise :class:`ConfigError` before any high-fidelity work is done."""
        if self.problem not in ("uniform", "lognormal"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.n_per_side < 2:
            raise ConfigError("n_per_side must be at least 2")
        if self.problem == "uniform":
            side = math.isqrt(self.K)
            if side * side != self.K:
                raise ConfigError(f"K={self.K} is not a perfect square")
            if (self.n_per_side - 1) % side:
                raise ConfigError("sqrt(K) must divide the number of cells per side")
            if not self.kappa0 > UNIFORM_HALF_WIDTH:
                raise ConfigError("kappa0 must exceed sqrt(3) to keep the coefficient positive")
        elif self.alpha != 2:
            raise ConfigError("only alpha = 2 is supported")
        if not self.schemes:
            raise ConfigError("no scheme configured")
        if self.N_t < 1 or self.N_max < 1 or self.test_size < 1:
            raise ConfigError("N_t, N_max and test_size must be positive")
        if self.norm not in ("V", "l2"):
            raise ConfigError(f"unknown norm {self.norm!r}")
        dim = self.parameter_dimension
        for s in self.schemes:
            if s.rom not in ROMS:
                raise ConfigError(f"unknown rom {s.rom!r}")
            if s.sampler not in SAMPLERS:
                raise ConfigError(f"unknown sampler {s.sampler!r}")
            if s.rom == "greedy" and self.problem != "uniform":
                raise ConfigError("greedy construction requires an affine problem")
            if s.sampler != "random":
                if s.L < 1 or s.c < 0 or s.L + s.c > dim:
                    raise ConfigError(f"invalid L={s.L}, c={s.c} for dimension {dim}")
                if s.sampler != "hessian-local" and s.M < 1:
                    raise ConfigError("M must be at least 1")
        if self.sweep is not None and min(self.sweep) < 0:
            raise ConfigError("sweep values must be nonnegative")

    @property
    def parameter_dimension(self) -> int:
        return self.K if self.problem == "uniform" else self.n_per_side**2

    def build_problem(self) -> ParametricProblem:
        if self.problem == "uniform":
            return make_uniform_piecewise_problem(self.n_per_side, self.K, self.kappa0, self.beta)
        return make_lognormal_problem(self.n_per_side, self.gamma, self.delta, self.alpha)


def parse_sweep(text: str) -> list:
    text = text.strip()
    if ":" in text:
        parts = [int(t) for t in text.split(":")]
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        return list(range(start, stop + 1, step))
    return sorted({int(t) for t in text.split(",") if t.strip()})


def desk_config(problem: str, paper_scale: bool = False) -> ExperimentConfig:
    """Default experiment of the uniform or log-normal study."""
    if problem == "uniform":
        cfg = ExperimentConfig(problem="uniform", n_per_side=33, K=64, N_t=300, N_max=100)
        Ls = (5, 10, 20)
        cfg.schemes = [SchemeSpec("pod", "random"), SchemeSpec("greedy", "random")]
        if paper_scale:
            cfg.n_per_side, cfg.K, cfg.N_t, cfg.N_max = 65, 256, 1000, 200
    elif problem == "lognormal":
        cfg = ExperimentConfig(problem="lognormal", n_per_side=33, N_t=300, N_max=100)
        Ls = (1, 3, 7, 15)
        cfg.schemes = [SchemeSpec("pod", "random")]
        if paper_scale:
            cfg.n_per_side, cfg.N_t, cfg.N_max = 129, 1000, 200
    else:
        raise ConfigError(f"unknown problem {problem!r}")
    cfg.schemes += [SchemeSpec("pod", "hessian-local", L=L, c=10) for L in Ls]
    cfg.out = f"results-{problem}"
    return cfg


# --------------------------------------------------------------------- seeds
def seed_stream(seed: int, name: str) -> int:
    """Integer seed of a named stream derived from the experiment seed."""
    tag = [ord(ch) for ch in name]
    return int(np.random.SeedSequence([int(seed)] + tag).generate_state(1)[0])


# -------------------------------------------------------------------- errors
@dataclass
class Reference:
    """High-fidelity solutions and QoIs on the test set, with their V-norms."""

    parameters: np.ndarray
    states: np.ndarray
    qois: np.ndarray
    norms: np.ndarray

    @classmethod
    def compute(cls, problem: ParametricProblem, test) -> "Reference":
        test = np.atleast_2d(np.asarray(test, dtype=float))
        X = problem.energy_matrix
        states = np.column_stack([problem.solve_state(p) for p in test])
        qois = problem.qoi_vector @ states
        norms = np.sqrt(np.einsum("ij,ij->j", states, X @ states))
        return cls(test, states, qois, norms)


def _errors(problem, model: ReducedModel, ref: Reference, N: int):
    if N > model.N:
        raise ValueError(f"N={N} exceeds the model rank {model.N}")
    sub = model.truncated(N)
    X = problem.energy_matrix
    eu, es, flagged = [], [], []
    for i, p in enumerate(ref.parameters):
        u_N = sub.solve(p)
        diff = ref.states[:, i] - sub.reconstruct(u_N)
        eu.append(math.sqrt(max(diff @ (X @ diff), 0.0)) / ref.norms[i])
        ds = abs(ref.qois[i] - sub.qoi(u_N))
        if abs(ref.qois[i]) <= QOI_ZERO_TOL:
            flagged.append(i)
            es.append(ds)
        else:
            es.append(ds / abs(ref.qois[i]))
    return float(np.mean(eu)), float(np.mean(es)), flagged


def compute_errors(problem: ParametricProblem, model: ReducedModel, test, N: int, reference=None):
    """Mean relative V-norm error of ``u_N`` and mean relative QoI error over ``test``.

    Test points with ``|s_h| <= QOI_ZERO_TOL`` contribute their absolute QoI
    error instead, with a warning.
    """
    ref = reference if reference is not None else Reference.compute(problem, test)
    eu, es, flagged = _errors(problem, model, ref, N)
    if flagged:
        warnings.warn(
            f"QoI vanishes at test points {flagged}; absolute error used there", stacklevel=2
        )
    return eu, es


@dataclass
class ErrorRow:
    N: int
    err_u: float
    err_s: float
    scheme: str
    L: int
    seed: int

    def csv(self) -> str:
        return f"{self.N},{self.err_u:.17g},{self.err_s:.17g},{self.scheme},{self.L},{self.seed}"


@dataclass
class ErrorReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def sort(self) -> None:
        order = {s: i for i, s in enumerate(dict.fromkeys((r.scheme, r.L) for r in self.rows))}
        self.rows.sort(key=lambda r: (r.N, order[(r.scheme, r.L)]))

    def series(self, scheme: str, L: int = 0):
        """``(N, err_u, err_s)`` arrays for one scheme."""
        rows = [r for r in self.rows if r.scheme == scheme and r.L == L]
        return (
            np.array([r.N for r in rows]),
            np.array([r.err_u for r in rows]),
            np.array([r.err_s for r in rows]),
        )

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv() for r in self.rows]) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "ErrorReport":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != CSV_HEADER:
            raise ValueError(f"{path}: not an error-decay CSV")
        rows = []
        for ln in lines[1:]:
            N, eu, es, scheme, L, seed = ln.split(",")
            rows.append(ErrorRow(int(N), float(eu), float(es), scheme, int(L), int(seed)))
        return cls(rows)

    def write_metadata(self, path) -> None:
        lines = []
        for key, val in self.metadata.items():
            if isinstance(val, dict):
                lines += [f"{key}.{k} = {v}" for k, v in val.items()]
            else:
                lines.append(f"{key} = {val}")
        Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- pipelines
def build_sampler(problem: ParametricProblem, scheme: SchemeSpec, seed: int) -> Optional[SubspaceSampler]:
    """Hessian subspace sampler of a scheme (``None`` for random sampling)."""
    eig_seed = seed_stream(seed, "eigensolver")
    if scheme.sampler == "random":
        return None
    if scheme.sampler == "hessian-local":
        return build_local_subspace(problem, scheme.L, scheme.c, seed=eig_seed)
    anchors = draw_random_set(problem.distribution, scheme.M, seed_stream(seed, "anchors"))
    if scheme.sampler == "hessian-averaged":
        return build_averaged_subspace(
            problem, scheme.M, scheme.L, scheme.c, seed=eig_seed, samples=anchors
        )
    return build_combined_subspace(
        problem, scheme.M, scheme.per_sample_L, scheme.L, scheme.c, seed=eig_seed, samples=anchors
    )


def draw_training(problem, sampler: Optional[SubspaceSampler], N_t: int, seed: int) -> np.ndarray:
    train_seed = seed_stream(seed, "training")
    if sampler is None:
        return draw_random_set(problem.distribution, N_t, train_seed)
    return sampler.draw(N_t, train_seed)


def build_model(problem, cfg: ExperimentConfig, scheme: SchemeSpec, training) -> ReducedModel:
    if scheme.rom == "greedy":
        return greedy_construct(problem, training, cfg.N_max, cfg.tol)
    with warnings.catch_warnings():
        # projected uniform samples may leave the box; positivity is still checked
        warnings.filterwarnings("ignore", "parameter lies outside")
        snaps = collect_snapshots(problem, training)
    return pod_construct(snaps, cfg.epsilon, cfg.N_max, cfg.norm)


def _phase(problem, metadata: dict, name: str, t0: float) -> None:
    counts = problem.counter.as_dict()
    metadata[f"solves[{name}]"] = " ".join(f"{k}={v}" for k, v in counts.items() if v) or "none"
    metadata.setdefault("timings", {})[name] = f"{time.perf_counter() - t0:.3f}s"
    problem.counter.reset()


def run_experiment(
    config: ExperimentConfig,
    test=None,
    write: bool = True,
    models: Optional[dict] = None,
) -> ErrorReport:
    """Build every configured scheme and tabulate the error decay.

    ``test`` overrides the random test set. ``models`` (when a dict) receives
    the reduced models keyed by ``(label, L)``.
    """
    config.validate()
    problem = config.build_problem()
    report = ErrorReport()
    meta = report.metadata
    meta.update(problem=config.problem, seed=config.seed, test_seed=config.test_seed)
    meta["seed_streams"] = {
        name: seed_stream(config.seed, name) for name in ("training", "eigensolver", "anchors")
    }

    t0 = time.perf_counter()
    if test is None:
        test = draw_random_set(problem.distribution, config.test_size, config.test_seed)
    ref = Reference.compute(problem, test)
    _phase(problem, meta, "test-set", t0)

    for scheme in config.schemes:
        tag = f"{scheme.label}/L={scheme.L}"
        t0 = time.perf_counter()
        sampler = build_sampler(problem, scheme, config.seed)
        _phase(problem, meta, f"{tag}/subspace", t0)
        t0 = time.perf_counter()
        training = draw_training(problem, sampler, config.N_t, config.seed)
        model = build_model(problem, config, scheme, training)
        _phase(problem, meta, f"{tag}/offline", t0)
        meta[f"rank[{tag}]"] = model.N
        if models is not None:
            models[(scheme.label, scheme.L)] = model

        t0 = time.perf_counter()
        sweep = config.sweep if config.sweep is not None else range(1, config.N_max + 1)
        for N in sweep:
            if N > model.N:
                continue
            eu, es, flagged = _errors(problem, model, ref, N)
            if flagged:
                meta.setdefault("qoi_absolute_fallback", {})[tag] = flagged
            report.rows.append(ErrorRow(N, eu, es, scheme.label, scheme.L, config.seed))
        _phase(problem, meta, f"{tag}/online", t0)
        log.info("%s: rank %d", tag, model.N)

    report.sort()
    if write:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "errors.csv")
        report.write_metadata(out / "report.txt")
        (out / "config.txt").write_text(config.to_text())
    return report


def spectrum_report(problem: ParametricProblem, L: int, c: int = 10, seed=None, method="randomized") -> str:
    """CSV ``index,lambda,sign`` of the dominant generalized eigenvalues at the mean."""
    pairs = local_eigenpairs(problem, L, c, seed, method)
    return spectrum_csv(pairs)


def spectrum_csv(pairs: GeneralizedEigenPairs) -> str:
    lines = ["index,lambda,sign"]
    for i, lam in enumerate(pairs.eigenvalues, 1):
        lines.append(f"{i},{lam:.17g},{'+' if lam >= 0 else '-'}")
    return "\n".join(lines) + "\n"


def write_training_set(path, parameters: Sequence[np.ndarray]) -> None:
    write_vectors(path, np.atleast_2d(np.asarray(parameters, dtype=float)))
