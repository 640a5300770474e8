"""Monte Carlo harness for the benchmark models.

Every replicate draws from its own counter-based stream keyed by
``(seed, replicate)``, so a report depends only on the spec and never on how
replicates are scheduled across workers.  Gaussian draws are produced by
inverting uniform draws with :func:`qsdr.bandwidth.normal_inv_cdf`.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bandwidth import normal_inv_cdf, parse_bandwidth_rule
from .errors import ConfigError, QsdrError
from .linalg import subspace_error

log = logging.getLogger(__name__)

MODELS = ("A", "B", "C", "linear_heteroscedastic", "custom")
ERROR_DISTS = ("normal", "t3_scaled", "chisq1")
ESTIMATORS = ("qopg", "qmave", "sir")
METRICS = ("entry", "spectral")


class Stream:
    """Seeded source of uniforms and standard normals for one replicate."""

    def __init__(self, seed: int, replicate: int = 0):
        ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replicate)])
        self._bits = np.random.Philox(ss)

    def uniform(self, size) -> np.ndarray:
        """Uniforms on the open interval (0, 1) with 53 random bits each."""
        raw = self._bits.random_raw(int(np.prod(size)))
        return (((raw >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0**53).reshape(size)

    def normal(self, size) -> np.ndarray:
        return np.asarray(normal_inv_cdf(self.uniform(size)), dtype=float)


def _as_stream(seed) -> Stream:
    return seed if isinstance(seed, Stream) else Stream(int(seed))


def ar1_covariance(p: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(np.subtract.outer(idx, idx))


def generate_covariates(n: int, p: int, seed) -> np.ndarray:
    """``n`` draws from ``N(0, S)`` with ``S_ij = 0.5^|i-j|``.

    ``seed`` is an integer or a :class:`Stream`.
    """
    if n < 1 or p < 1:
        raise ConfigError("n and p must be positive")
    L = np.linalg.cholesky(ar1_covariance(p))
    return _as_stream(seed).normal((n, p)) @ L.T


def sample_error(dist: str, n: int, seed) -> np.ndarray:
    """Errors of the named law: ``normal``, ``t3_scaled`` (t(3)/sqrt(3)) or ``chisq1``."""
    rs = _as_stream(seed)
    if dist == "normal":
        return rs.normal(n)
    if dist == "t3_scaled":
        z = rs.normal(n)
        chi3 = (rs.normal((n, 3)) ** 2).sum(axis=1)
        return z / np.sqrt(chi3 / 3.0) / np.sqrt(3.0)
    if dist == "chisq1":
        return rs.normal(n) ** 2
    raise ConfigError(f"unknown error distribution {dist!r}; choose from {ERROR_DISTS}")


@dataclass
class SimSpec:
    """One simulation experiment.

    ``estimators`` maps each estimator name to its options; the ``bandwidth``
    option takes the command-line forms ``rot``, ``cv``, ``modified-cv`` or
    ``fixed:<h>``.  For ``custom`` models supply ``link(X, eps) -> Y`` and
    ``B0``; for ``linear_heteroscedastic`` the directions default to e1, e2.
    """

    model: str = "A"
    n: int = 200
    p: int = 10
    error_dist: str = "normal"
    n_replicates: int = 100
    seed: int = 20240101
    estimators: Dict[str, dict] = field(default_factory=lambda: {"qopg": {}})
    select_dimension: bool = False
    q_candidates: Tuple[int, ...] = (1, 2, 3)
    beta1: Optional[Sequence[float]] = None
    beta2: Optional[Sequence[float]] = None
    link: Optional[Callable] = None
    B0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.error_dist not in ERROR_DISTS:
            raise ConfigError(f"unknown error distribution {self.error_dist!r}")
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be at least 1")
        if self.n < 2 or self.p < 1:
            raise ConfigError("need n >= 2 and p >= 1")
        if self.model in ("A", "B", "C") and self.p < 2:
            raise ConfigError("models A, B and C need p >= 2")
        if isinstance(self.estimators, (list, tuple)):
            self.estimators = {name: {} for name in self.estimators}
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
        if self.model == "custom" and (self.link is None or self.B0 is None):
            raise ConfigError("custom model needs link and B0")
        self.q_candidates = tuple(int(q) for q in self.q_candidates)

    @property
    def true_basis(self) -> np.ndarray:
        p = self.p
        if self.model in ("A", "B", "C"):
            return np.eye(p)[:, :2]
        if self.model == "linear_heteroscedastic":
            return np.column_stack(self._betas())
        return np.asarray(self.B0, dtype=float).reshape(p, -1)

    @property
    def q_true(self) -> int:
        return self.true_basis.shape[1]

    def _betas(self):
        e = np.eye(self.p)
        b1 = e[0] if self.beta1 is None else np.asarray(self.beta1, dtype=float)
        b2 = e[min(1, self.p - 1)] if self.beta2 is None else np.asarray(self.beta2, dtype=float)
        return b1, b2

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("link")
        d["B0"] = None if self.B0 is None else np.asarray(self.B0).tolist()
        d["q_candidates"] = list(self.q_candidates)
        return d


def generate_model(spec: SimSpec, replicate: int):
    """``(X, Y, B0)`` for one replicate; the same pair always yields the same data."""
    rs = Stream(spec.seed, replicate)
    X = generate_covariates(spec.n, spec.p, rs)
    eps = sample_error(spec.error_dist, spec.n, rs)
    x1, x2 = (X[:, 0], X[:, 1]) if spec.p >= 2 else (X[:, 0], None)
    if spec.model == "A":
        Y = x1 * (x1 + x2 + 1.0) + 0.5 * eps
    elif spec.model == "B":
        Y = x1 / (0.5 + (x2 + 1.5) ** 2) + 0.5 * eps
    elif spec.model == "C":
        Y = x1 + np.exp(x2) * eps
    elif spec.model == "linear_heteroscedastic":
        b1, b2 = spec._betas()
        Y = X @ b1 + (X @ b2) * eps
    else:
        Y = np.asarray(spec.link(X, eps), dtype=float)
    return X, Y, spec.true_basis


def _run_estimator(name: str, opts: dict, X, Y, q: int):
    from .opg import QopgConfig, qopg_fit
    from .qmave import QmaveConfig, qmave_fit
    from .sir import SirConfig, sir_fit

    opts = dict(opts)
    if name == "sir":
        return sir_fit(X, Y, SirConfig(q=q, n_slices=opts.get("n_slices")))
    bw = opts.pop("bandwidth", None)
    if bw is not None:
        rule, h = parse_bandwidth_rule(bw)
        opts["bandwidth"] = rule
        if h is not None and rule == "fixed":
            opts["h"] = h
    if name == "qopg":
        return qopg_fit(X, Y, q, QopgConfig(**opts))
    return qmave_fit(X, Y, q, QmaveConfig(**opts))


@dataclass
class ReplicateResult:
    replicate: int
    errors: Dict[str, float]
    errors_spectral: Dict[str, float]
    seconds: Dict[str, float]
    failures: Dict[str, str]
    q_hat: Optional[int] = None


def run_replicate(spec: SimSpec, replicate: int) -> ReplicateResult:
    X, Y, B0 = generate_model(spec, replicate)
    q = B0.shape[1]
    res = ReplicateResult(replicate, {}, {}, {}, {})
    for name, opts in spec.estimators.items():
        t0 = time.perf_counter()
        try:
            est = _run_estimator(name, opts, X, Y, q)
            res.errors[name] = subspace_error(est.basis, B0)
            res.errors_spectral[name] = subspace_error(est.basis, B0, metric="spectral")
        except (QsdrError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("replicate %d: %s failed (%s)", replicate, name, exc)
            res.failures[name] = f"{type(exc).__name__}: {exc}"
        res.seconds[name] = time.perf_counter() - t0
    if spec.select_dimension:
        from .dimension import DimensionConfig, select_dimension_cv
        from .opg import QopgConfig

        t0 = time.perf_counter()
        try:
            opts = dict(spec.estimators.get("qopg", {}))
            opts.pop("bandwidth", None)
            res.q_hat, _ = select_dimension_cv(X, Y, spec.q_candidates,
                                               DimensionConfig(opg=QopgConfig(**opts)))
        except QsdrError as exc:
            log.warning("replicate %d: dimension selection failed (%s)", replicate, exc)
            res.failures["dimension"] = f"{type(exc).__name__}: {exc}"
        res.seconds["dimension"] = time.perf_counter() - t0
    return res


@dataclass
class EstimatorSummary:
    mean: float
    sd: float
    mean_spectral: float
    sd_spectral: float
    errors: List[float]
    errors_spectral: List[float]
    replicates: List[int]
    failures: int
    seconds_per_replicate: float


@dataclass
class SimReport:
    spec: dict
    estimators: Dict[str, EstimatorSummary]
    dimension_frequency: Optional[float]
    q_hats: List[Optional[int]]
    failures: Dict[int, Dict[str, str]]
    wall_seconds: float

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_lines(self) -> List[str]:
        out = []
        for name, s in self.estimators.items():
            out.append(
                f"{name}: entry {s.mean:.3f} ({s.sd:.3f})  spectral {s.mean_spectral:.3f} "
                f"({s.sd_spectral:.3f})  failures {s.failures}"
            )
        if self.dimension_frequency is not None:
            out.append(f"dimension: correct {100 * self.dimension_frequency:.0f}%")
        return out


def _sd(x) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def _job(args):
    spec, r = args
    return run_replicate(spec, r)


def run_replicates(spec: SimSpec, workers: int = 1) -> SimReport:
    """Run every replicate of ``spec`` and aggregate in replicate order.

    ``workers > 1`` spreads replicates over processes; the report is the same
    for any worker count.
    """
    if spec.n_replicates < 1:
        raise ConfigError("n_replicates must be at least 1")
    t0 = time.perf_counter()
    jobs = [(spec, r) for r in range(spec.n_replicates)]
    if workers > 1 and spec.link is None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    results.sort(key=lambda r: r.replicate)

    summaries = {}
    for name in spec.estimators:
        ok = [r for r in results if name in r.errors]
        e = [r.errors[name] for r in ok]
        es = [r.errors_spectral[name] for r in ok]
        secs = [r.seconds[name] for r in results]
        summaries[name] = EstimatorSummary(
            mean=float(np.mean(e)) if e else float("nan"),
            sd=_sd(e),
            mean_spectral=float(np.mean(es)) if es else float("nan"),
            sd_spectral=_sd(es),
            errors=e,
            errors_spectral=es,
            replicates=[r.replicate for r in ok],
            failures=len(results) - len(ok),
            seconds_per_replicate=float(np.mean(secs)),
        )
    q_hats = [r.q_hat for r in results]
    freq = None
    if spec.select_dimension:
        done = [q for q in q_hats if q is not None]
        freq = float(np.mean([q == spec.q_true for q in done])) if done else float("nan")
    failures = {r.replicate: r.failures for r in results if r.failures}
    return SimReport(
        spec=spec.to_dict(),
        estimators=summaries,
        dimension_frequency=freq,
        q_hats=q_hats,
        failures=failures,
        wall_seconds=time.perf_counter() - t0,
    )
