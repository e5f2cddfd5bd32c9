"""Black-box ownership audits.

SWAP audits query a suspicious model on verification samples with the
verification classes appended to the task classes, rank the verification
probabilities, and test whether the mean rank distance to the registered
ordering lies significantly below a threshold. BWAP audits test whether the
target-class probability rises on triggered samples.
"""

from __future__ import annotations

import itertools
import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import stats


class SuspiciousOracle(Protocol):
    """Query-only access to a deployed model."""

    def query(self, x: np.ndarray, classes: Sequence[str]) -> np.ndarray:
        """Return probabilities of shape (batch, len(classes)) for samples ``x``."""
        ...


class ProtocolError(RuntimeError):
    """Raised when an oracle answer is not a valid probability vector."""


@dataclass(frozen=True)
class PermutationRecord:
    """Rank of each verification class, 1 = smallest probability."""

    ranks: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.ranks) != list(range(1, len(self.ranks) + 1)):
            raise ValueError(f"ranks {self.ranks} are not a permutation of 1..n")

    @property
    def n(self) -> int:
        return len(self.ranks)

    @classmethod
    def identity(cls, n: int) -> "PermutationRecord":
        return cls(tuple(range(1, n + 1)))


@dataclass
class AuditReport:
    kind: str
    distances: list[float]
    mean_distance: float
    std: float
    t_statistic: float
    p_value: float
    underflow: bool
    verdict: bool
    params: dict = field(default_factory=dict)
    repeat_p_values: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("t_statistic", "mean_distance", "std"):
            if not math.isfinite(d[key]):
                d[key] = str(d[key])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "AuditReport":
        d = dict(d)
        for key in ("t_statistic", "mean_distance", "std"):
            d[key] = float(d[key])
        return cls(**d)


def _check_probs(p: np.ndarray, batch: int, width: int) -> None:
    if p.shape != (batch, width):
        raise ProtocolError(f"oracle returned shape {p.shape}, expected {(batch, width)}")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ProtocolError("oracle returned values outside [0, 1]")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ProtocolError("oracle probabilities do not sum to 1")


def extract_sequence(oracle: SuspiciousOracle, samples, verification: Sequence[str],
                     task_classes: Sequence[str]) -> np.ndarray:
    """Probabilities of the verification classes, sliced from a joint query.

    The oracle always sees ``task_classes + verification``; the returned slice
    is not renormalised. Accepts one sample or a batch.
    """
    x = np.asarray(samples, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    overlap = set(verification) & set(task_classes)
    if overlap:
        raise ValueError(f"verification classes overlap task classes: {sorted(overlap)}")
    classes = list(task_classes) + list(verification)
    p = np.asarray(oracle.query(x, classes), dtype=np.float64)
    _check_probs(p, x.shape[0], len(classes))
    out = p[:, len(task_classes):]
    return out[0] if single else out


def rank_permutation(seq) -> PermutationRecord:
    """Ascending ranks; ties go to the smaller index first."""
    s = np.asarray(seq, dtype=np.float64)
    if s.ndim != 1 or not np.all(np.isfinite(s)):
        raise ValueError("sequence must be a finite 1-D array")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.int64)
    ranks[order] = np.arange(1, s.size + 1)
    return PermutationRecord(tuple(int(r) for r in ranks))


def rank_matrix(seqs: np.ndarray) -> np.ndarray:
    """Row-wise version of :func:`rank_permutation` returning an int array."""
    s = np.asarray(seqs, dtype=np.float64)
    order = np.argsort(s, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(s.shape[0])[:, None]
    ranks[rows, order] = np.arange(1, s.shape[1] + 1)
    return ranks


def rank_distance(extracted: PermutationRecord, reference: PermutationRecord) -> int:
    """Sum of absolute rank differences (Spearman's footrule)."""
    if extracted.n != reference.n:
        raise ValueError(f"length mismatch: {extracted.n} vs {reference.n}")
    return int(sum(abs(a - b) for a, b in zip(extracted.ranks, reference.ranks)))


def max_rank_distance(n: int) -> int:
    return n * n // 2


def sample_distances(oracle, samples, verification, task_classes,
                     reference: PermutationRecord | None = None) -> np.ndarray:
    if len(verification) < 2:
        raise ValueError("an ordering needs at least two verification classes")
    probs = np.atleast_2d(extract_sequence(oracle, samples, verification, task_classes))
    ref = np.asarray((reference or PermutationRecord.identity(len(verification))).ranks)
    if ref.size != probs.shape[1]:
        raise ValueError("reference length does not match verification classes")
    return np.abs(rank_matrix(probs) - ref).sum(axis=1)


def swap_verify(oracle, samples, verification, task_classes, reference=None,
                tau_thr: float = 0.5, alpha: float = 0.01) -> AuditReport:
    """Single SWAP audit: lower-tail t-test of mean rank distance vs ``tau_thr``."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if x.shape[0] < 2:
        raise ValueError("swap_verify needs m >= 2 samples")
    d = sample_distances(oracle, x, verification, task_classes, reference)
    res = stats.one_sample_ttest(d, tau_thr, alternative="less")
    return AuditReport(
        kind="swap",
        distances=[float(v) for v in d],
        mean_distance=res.mean,
        std=res.std,
        t_statistic=res.t_statistic,
        p_value=res.p_value,
        underflow=res.underflow,
        verdict=res.p_value <= alpha,
        params=dict(m=int(x.shape[0]), n=len(verification), tau_thr=tau_thr, alpha=alpha,
                    verification=list(verification)),
    )


def repeated_swap_audit(oracle, pool, verification, task_classes, m: int = 100,
                        repeats: int = 3, seed: int = 0, reference=None,
                        tau_thr: float = 0.5, alpha: float = 0.01) -> AuditReport:
    """Run ``repeats`` audits on m-sample draws from ``pool``; average the p-values.

    The verdict compares the arithmetic mean p-value to ``alpha``. The returned
    distances are those of the first repeat.
    """
    pool = np.atleast_2d(np.asarray(pool, dtype=np.float64))
    if m > pool.shape[0]:
        raise ValueError(f"pool has {pool.shape[0]} samples, need m={m}")
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(repeats):
        idx = np.sort(rng.choice(pool.shape[0], size=m, replace=False))
        reports.append(swap_verify(oracle, pool[idx], verification, task_classes,
                                   reference, tau_thr, alpha))
    ps = [r.p_value for r in reports]
    first = reports[0]
    mean_p = float(np.mean(ps))
    first.p_value = mean_p
    first.underflow = all(r.underflow for r in reports)
    first.verdict = mean_p <= alpha
    first.repeat_p_values = ps
    first.params.update(repeats=repeats, seed=seed)
    return first


def wsr(oracle, samples, verification, task_classes, reference=None) -> float:
    """Fraction of samples whose extracted ordering matches the reference exactly."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("wsr needs at least one sample")
    d = sample_distances(oracle, x, verification, task_classes, reference)
    return float(np.mean(d == 0))


def bwap_verify(oracle, benign, triggered, target: str, task_classes,
                tau_thr: float = 0.2, alpha: float = 0.01) -> AuditReport:
    """Paired upper-tail t-test that P(target | triggered) exceeds P(target | benign) by tau."""
    b = np.atleast_2d(np.asarray(benign, dtype=np.float64))
    w = np.atleast_2d(np.asarray(triggered, dtype=np.float64))
    if b.shape != w.shape:
        raise ValueError(f"benign/triggered shape mismatch: {b.shape} vs {w.shape}")
    classes = list(task_classes) + [target]
    pb = np.asarray(oracle.query(b, classes), dtype=np.float64)
    pw = np.asarray(oracle.query(w, classes), dtype=np.float64)
    _check_probs(pb, b.shape[0], len(classes))
    _check_probs(pw, w.shape[0], len(classes))
    delta = pw[:, -1] - pb[:, -1]
    res = stats.one_sample_ttest(delta, tau_thr, alternative="greater")
    return AuditReport(
        kind="bwap",
        distances=[float(v) for v in delta],
        mean_distance=res.mean,
        std=res.std,
        t_statistic=res.t_statistic,
        p_value=res.p_value,
        underflow=res.underflow,
        verdict=res.p_value <= alpha,
        params=dict(m=int(b.shape[0]), tau_thr=tau_thr, alpha=alpha, target=target),
    )


# ---------------------------------------------------------------------------
# reference oracles


class RandomPermutationOracle:
    """Deterministic oracle whose verification slice is a per-sample random ordering.

    The ordering is derived from a hash of the sample bytes, so repeated
    queries agree. Task-class probabilities are uniform filler.
    """

    def __init__(self, n_verification: int, seed: int = 0):
        self.n = n_verification
        self.seed = seed

    def query(self, x, classes):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.empty((x.shape[0], len(classes)))
        k = len(classes) - self.n
        for i, row in enumerate(x):
            rng = np.random.default_rng([self.seed, zlib.crc32(row.tobytes())])
            w = np.concatenate([np.ones(k), 0.5 + rng.permutation(self.n)])
            out[i] = w / w.sum()
        return out


class FixedOrderOracle:
    """Oracle that always ranks the verification slice in the given ascending order."""

    def __init__(self, ranks: Sequence[int]):
        self.ranks = np.asarray(ranks, dtype=np.float64)

    def query(self, x, classes):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        k = len(classes) - self.ranks.size
        w = np.concatenate([np.ones(k), self.ranks])
        return np.tile(w / w.sum(), (x.shape[0], 1))


# ---------------------------------------------------------------------------
# rejection bound


@dataclass(frozen=True)
class TheoremBoundInputs:
    m: int
    n: int
    tau_thr: float
    alpha: float

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.tau_thr < self.a:
            raise ValueError(f"tau_thr must lie in (0, a={self.a})")

    @property
    def a(self) -> int:
        """Largest mismatch distance under the uniform-even model, 2*floor(n^2/4)."""
        return 2 * (self.n * self.n // 4)


@dataclass(frozen=True)
class BoundResult:
    d_star: float
    t_alpha: float
    a: int
    delta: float

    def quadratic(self, inputs: TheoremBoundInputs, d: float) -> float:
        return bound_quadratic(inputs, d, self.t_alpha)


def bound_quadratic(inputs: TheoremBoundInputs, d: float, t_alpha: float) -> float:
    """f(d) = [(m-1)+t^2] d^2 - [2(m-1)tau + a t^2] d + (m-1) tau^2."""
    m1, t2, tau, a = inputs.m - 1, t_alpha * t_alpha, inputs.tau_thr, inputs.a
    return (m1 + t2) * d * d - (2 * m1 * tau + a * t2) * d + m1 * tau * tau


def theorem_bound(inputs: TheoremBoundInputs) -> BoundResult:
    """Critical mean distance d*: any audit with mean distance below it rejects H0.

    With distances confined to [0, a], the sample variance is at most
    m (a d - d^2) / (m - 1); substituting this into the lower-tail t-test
    gives the quadratic f(d) > 0, whose smaller root is d*. The root is
    evaluated as 2C / (B + sqrt(Delta)) to avoid cancellation.
    """
    t = abs(stats.t_quantile(inputs.alpha, inputs.m - 1)) if inputs.alpha < 0.5 else 0.0
    m1, tau, a = inputs.m - 1, inputs.tau_thr, inputs.a
    t2 = t * t
    delta = a * a * t2 * t2 + 4 * m1 * t2 * tau * (a - tau)
    b = 2 * m1 * tau + a * t2
    c = m1 * tau * tau
    d_star = 2 * c / (b + math.sqrt(delta))
    return BoundResult(d_star=d_star, t_alpha=t, a=a, delta=delta)


# ---------------------------------------------------------------------------
# Monte Carlo validation of the distance model

DISTANCE_MODELS = ("quasi-bernoulli", "permutation", "fixed", "extremal")


def _mismatch_distances(n: int) -> np.ndarray:
    """Distances of every non-identity permutation of n items to the identity."""
    ident = np.arange(n)
    return np.array([np.abs(np.array(p) - ident).sum()
                     for p in itertools.permutations(range(n)) if p != tuple(ident)], dtype=np.float64)


def simulate_distances(p_success: float, m: int, n: int, trials: int, rng: np.random.Generator,
                       model: str = "quasi-bernoulli", value: float | None = None) -> np.ndarray:
    """Draw a (trials, m) array of audit distances.

    ``quasi-bernoulli``: 0 with probability p, else uniform on {2, 4, ..., 2J}, J = floor(n^2/4).
    ``permutation``: 0 with probability p, else the distance of a uniformly random
    non-identity permutation. ``fixed``: every distance equals ``value``.
    ``extremal``: floor(m * value / a) distances equal a, the rest 0, so the mean
    never exceeds ``value`` and the sample variance is the largest the bound allows.
    """
    if model == "fixed":
        if value is None:
            raise ValueError("fixed model needs a value")
        return np.full((trials, m), float(value))
    a = 2 * (n * n // 4)
    if model == "extremal":
        if value is None or not 0 <= value <= a:
            raise ValueError(f"extremal model needs a mean distance in [0, {a}]")
        k = int(math.floor(m * value / a + 1e-12))
        row = np.zeros(m)
        row[:k] = a
        return np.tile(row, (trials, 1))
    hit = rng.random((trials, m)) < p_success
    if model == "quasi-bernoulli":
        miss = 2.0 * rng.integers(1, n * n // 4 + 1, size=(trials, m))
    elif model == "permutation":
        pool = _mismatch_distances(n)
        miss = pool[rng.integers(0, pool.size, size=(trials, m))]
    else:
        raise ValueError(f"unknown distance model {model!r}; choose from {DISTANCE_MODELS}")
    return np.where(hit, 0.0, miss)


def monte_carlo_validate(p_success: float, m: int, n: int, tau_thr: float = 0.5, alpha: float = 0.01,
                         trials: int = 10_000, seed: int = 0, model: str = "quasi-bernoulli",
                         value: float | None = None) -> float:
    """Empirical rejection rate of the SWAP t-test under a simulated distance model."""
    if not 0.0 <= p_success <= 1.0:
        raise ValueError("p_success must lie in [0, 1]")
    if trials < 1000:
        raise ValueError("trials must be >= 1000")
    if m < 2:
        raise ValueError("m must be >= 2")
    d = simulate_distances(p_success, m, n, trials, np.random.default_rng(seed), model, value)
    p = stats.batch_lower_ttest_pvalues(d, tau_thr)
    return float(np.mean(p <= alpha))
