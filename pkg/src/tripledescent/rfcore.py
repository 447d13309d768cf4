"""Random-feature ridge regression.

Model:  f(x) = sum_i a_i sigma(<Theta_i, x> / sqrt(D)),  teacher f*(x) = <beta, x> / sqrt(D).
Training labels y = f*(X) + eps with eps ~ N(0, 1/SNR).  The second layer
minimises

    (1/N) ||y - Z a||^2 + (P gamma / D) ||a||^2,

so a = (1/N) (Sigma + (P gamma / D) I)^-1 Z^T y with Sigma = Z^T Z / N.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .activation import ActivationSpec, get_activation

_TEST_CHUNK = 4096


class RFError(RuntimeError):
    pass


class FeatureEvaluationError(RFError):
    pass


class RidgeInputError(RFError, ValueError):
    pass


# ---------------------------------------------------------------------------
# seeds


def _key(value) -> int:
    if isinstance(value, str):
        return zlib.crc32(value.encode())
    value = int(value)
    if value < 0:
        raise ValueError("seed keys must be non-negative")
    return value


def derive_seed(master: int, *path) -> int:
    """A 64-bit seed that depends only on ``master`` and the key path."""
    ss = np.random.SeedSequence(_key(master), spawn_key=tuple(_key(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class RFSeeds:
    theta: int
    beta: int
    data: int
    noise: int

    def as_tuple(self):
        return (self.theta, self.beta, self.data, self.noise)

    def __str__(self):
        return "/".join(f"{s:x}" for s in self.as_tuple())


@dataclass(frozen=True)
class SeedSchedule:
    """Seed streams for a sweep.

    Theta depends on (p_index, replicate, member) and beta on replicate only,
    so a sample-wise profile keeps the same features and teacher along N.
    Data and noise depend on (p_index, n_index, replicate).
    """

    master: int = 0
    experiment: str = "rf"

    def seeds(self, replicate: int, n_index: int = 0, p_index: int = 0, member: int = 0) -> RFSeeds:
        m, e = self.master, self.experiment
        return RFSeeds(
            theta=derive_seed(m, e, "theta", p_index, replicate, member),
            beta=derive_seed(m, e, "beta", replicate),
            data=derive_seed(m, e, "data", p_index, n_index, replicate),
            noise=derive_seed(m, e, "noise", p_index, n_index, replicate),
        )

    def test_seed(self, replicate: int) -> int:
        return derive_seed(self.master, self.experiment, "test", replicate)

    @property
    def schedule_id(self) -> str:
        return f"{self.experiment}@{self.master}"


# ---------------------------------------------------------------------------
# problem instances


@dataclass(frozen=True, eq=False)
class ExternalData:
    """Pool of input rows (already standardized); N and test points are
    drawn from it without replacement."""

    X: np.ndarray = field(repr=False)
    name: str = "external"

    @property
    def D(self) -> int:
        return self.X.shape[1]

    def draw(self, n: int, seed: int) -> np.ndarray:
        if n > self.X.shape[0]:
            raise RFError(f"{self.name}: requested {n} rows, pool has {self.X.shape[0]}")
        idx = np.random.default_rng(seed).choice(self.X.shape[0], n, replace=False)
        return self.X[np.sort(idx)]


@dataclass(frozen=True)
class RFInstance:
    X: np.ndarray
    Theta: np.ndarray
    beta: np.ndarray
    noise: np.ndarray
    y: np.ndarray


@dataclass(frozen=True, eq=False)
class RFProblem:
    D: int
    N: int
    P: int
    activation: ActivationSpec
    snr: float = math.inf
    gamma: float = 0.0
    seeds: RFSeeds = RFSeeds(0, 1, 2, 3)
    data_source: Optional[ExternalData] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if isinstance(self.activation, str):
            object.__setattr__(self, "activation", get_activation(self.activation))
        for name in ("D", "N", "P"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
            object.__setattr__(self, name, int(getattr(self, name)))
        if not (self.snr > 0):
            raise ValueError("snr must be positive (math.inf for no noise)")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValueError("gamma must be finite and >= 0")
        if self.data_source is not None and self.data_source.D != self.D:
            raise ValueError(f"data_source has D={self.data_source.D}, problem has D={self.D}")

    def with_(self, **changes) -> "RFProblem":
        """Copy with changed fields and a fresh sample cache."""
        changes.setdefault("_cache", {})
        return replace(self, **changes)

    def sample_theta(self) -> np.ndarray:
        return np.random.default_rng(self.seeds.theta).standard_normal((self.P, self.D))

    def sample_beta(self) -> np.ndarray:
        return np.random.default_rng(self.seeds.beta).standard_normal(self.D)

    def sample_inputs(self, n: int, seed: int) -> np.ndarray:
        if self.data_source is not None:
            return self.data_source.draw(n, seed)
        return np.random.default_rng(seed).standard_normal((n, self.D))

    def sample_noise(self, n: int, seed: int) -> np.ndarray:
        if math.isinf(self.snr):
            return np.zeros(n)
        return np.random.default_rng(seed).standard_normal(n) / math.sqrt(self.snr)

    def target(self, X, beta=None) -> np.ndarray:
        beta = self.instance().beta if beta is None else beta
        return X @ beta / math.sqrt(self.D)

    def instance(self) -> RFInstance:
        inst = self._cache.get("instance")
        if inst is None:
            X = self.sample_inputs(self.N, self.seeds.data)
            beta = self.sample_beta()
            noise = self.sample_noise(self.N, self.seeds.noise)
            inst = RFInstance(X, self.sample_theta(), beta, noise, self.target(X, beta) + noise)
            self._cache["instance"] = inst
        return inst


def features(activation: ActivationSpec, X: np.ndarray, Theta: np.ndarray) -> np.ndarray:
    D = X.shape[1]
    with np.errstate(all="ignore"):
        Z = activation(X @ Theta.T / math.sqrt(D))
    if not np.all(np.isfinite(Z)):
        raise FeatureEvaluationError(f"{activation.name}: non-finite feature values")
    return Z


def build_features(problem: RFProblem) -> np.ndarray:
    inst = problem.instance()
    return features(problem.activation, inst.X, inst.Theta)


# ---------------------------------------------------------------------------
# ridge


@dataclass(frozen=True)
class RidgeSolution:
    a: np.ndarray
    norm_a: float
    b: np.ndarray
    norm_b: float
    overlap: float
    train_loss: float
    gamma: float = 0.0


class RidgeFactor:
    """Spectral factorization of Z, reusable for any number of label vectors.

    Ridge (gamma > 0) uses the eigendecomposition of the smaller Gram matrix,
    which is several times cheaper than an SVD of a tall Z; the filter never
    divides by a singular value so squaring the condition number is harmless.
    The minimum-norm solution (gamma = 0) falls back to a thin SVD.
    """

    def __init__(self, Z: np.ndarray):
        self.Z = Z
        self.N, self.P = Z.shape
        self._eig = None
        self._svd = None

    def _gram(self):
        if self._eig is None:
            Z = self.Z
            G = Z.T @ Z if self.N >= self.P else Z @ Z.T
            try:
                lam, vec = np.linalg.eigh(G)
            except np.linalg.LinAlgError as exc:
                raise RFError(f"eigendecomposition failed: {exc}") from exc
            self._eig = (np.clip(lam, 0.0, None), vec)
        return self._eig

    def _thin_svd(self):
        if self._svd is None:
            try:
                self._svd = np.linalg.svd(self.Z, full_matrices=False)
            except np.linalg.LinAlgError as exc:
                raise RFError(f"SVD failed: {exc}") from exc
        return self._svd

    @property
    def s(self) -> np.ndarray:
        """Singular values of Z, descending."""
        if self._svd is None and self._eig is not None:
            return np.sqrt(self._eig[0][::-1])
        return self._thin_svd()[1]

    def filter(self, gamma: float, D: int) -> np.ndarray:
        """Spectral filter applied to U^T y along each singular direction."""
        s = self.s
        if gamma > 0:
            return (s / self.N) / (s * s / self.N + self.P * gamma / D)
        cut = max(self.N, self.P) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        out = np.zeros_like(s)
        keep = s > cut
        out[keep] = 1.0 / s[keep]
        return out

    def weights(self, Y: np.ndarray, gamma: float, D: int) -> np.ndarray:
        """Ridge weights for label vector(s) Y (shape N or N x k)."""
        Y = np.asarray(Y, dtype=float)
        if not np.all(np.isfinite(Y)):
            raise RidgeInputError("labels contain non-finite values")
        if gamma > 0:
            lam, vec = self._gram()
            g = (1.0 / self.N) / (lam / self.N + self.P * gamma / D)
            if Y.ndim == 2:
                g = g[:, None]
            if self.N >= self.P:
                return vec @ (g * (vec.T @ (self.Z.T @ Y)))
            return self.Z.T @ (vec @ (g * (vec.T @ Y)))
        U, _, Vt = self._thin_svd()
        f = self.filter(gamma, D)
        coef = U.T @ Y
        coef = coef * (f[:, None] if coef.ndim == 2 else f)
        return Vt.T @ coef


def ridge_objective(a, Z, y, gamma, D) -> float:
    N, P = Z.shape
    r = y - Z @ a
    return float(r @ r / N + P * gamma / D * (a @ a))


def ridge_solve(problem: RFProblem, Z: Optional[np.ndarray] = None,
                factor: Optional[RidgeFactor] = None) -> RidgeSolution:
    inst = problem.instance()
    if Z is None:
        Z = build_features(problem)
    factor = factor or RidgeFactor(Z)
    a = factor.weights(inst.y, problem.gamma, problem.D)
    return _diagnostics(a, Z, inst, problem)


def _diagnostics(a, Z, inst: RFInstance, problem: RFProblem) -> RidgeSolution:
    b = inst.Theta.T @ a
    resid = inst.y - Z @ a
    return RidgeSolution(
        a=a, norm_a=float(np.linalg.norm(a)), b=b, norm_b=float(np.linalg.norm(b)),
        overlap=float(b @ inst.beta / problem.D), train_loss=float(resid @ resid / len(resid)),
        gamma=problem.gamma)


# ---------------------------------------------------------------------------
# test loss


@dataclass(frozen=True)
class TestSet:
    """Fresh inputs with their noiseless targets and features for one
    (Theta, beta) pair; reusable across every N of a profile."""

    X: np.ndarray
    target: np.ndarray
    Z: np.ndarray

    @classmethod
    def build(cls, problem: RFProblem, m_test: int, seed: int) -> "TestSet":
        if m_test < 2:
            raise ValueError("m_test must be at least 2")
        inst = problem.instance()
        X = problem.sample_inputs(m_test, seed)
        Z = np.empty((m_test, problem.P))
        for lo in range(0, m_test, _TEST_CHUNK):
            Z[lo:lo + _TEST_CHUNK] = features(problem.activation, X[lo:lo + _TEST_CHUNK], inst.Theta)
        return cls(X, problem.target(X, inst.beta), Z)

    def loss(self, a) -> tuple[float, float]:
        err = (self.Z @ a - self.target) ** 2
        return float(err.mean()), float(err.std(ddof=1) / math.sqrt(err.size))


def test_loss_mc(problem: RFProblem, solution: RidgeSolution, m_test: int = 10_000,
                 test_seed: int = 12345) -> tuple[float, float]:
    """MC estimate of E_x[(f(x) - f*(x))^2] with its standard error."""
    if m_test < 2:
        raise ValueError("m_test must be at least 2")
    inst = problem.instance()
    X = problem.sample_inputs(m_test, test_seed)
    errs = np.empty(m_test)
    for lo in range(0, m_test, _TEST_CHUNK):
        xb = X[lo:lo + _TEST_CHUNK]
        f = features(problem.activation, xb, inst.Theta) @ solution.a
        errs[lo:lo + _TEST_CHUNK] = (f - problem.target(xb, inst.beta)) ** 2
    return float(errs.mean()), float(errs.std(ddof=1) / math.sqrt(m_test))


test_loss_mc.__test__ = False
TestSet.__test__ = False


@dataclass(frozen=True)
class GELoss:
    loss: float
    rho: float
    M: float
    Q: float

    def __iter__(self):
        return iter((self.loss, self.rho, self.M, self.Q))


def gaussian_equivalent_loss(problem: RFProblem, solution: RidgeSolution) -> GELoss:
    """L = rho + Q - 2M under Gaussian equivalence.

    With f = sum_i a_i sigma(.) the nonlinear part contributes
    (eta - zeta - mu0^2) ||a||^2 and a non-zero mean mu0 = E[sigma] adds
    mu0^2 (sum a)^2; for centred activations this is the usual
    Q = zeta ||b||^2 / D + (eta - zeta) ||a||^2.
    """
    act = problem.activation
    beta = problem.instance().beta
    D = problem.D
    eta, zeta, mu0 = act.eta, act.zeta, act.mean
    rho = float(beta @ beta / D)
    M = math.sqrt(zeta) * float(solution.b @ beta) / D
    a = solution.a
    Q = (zeta * solution.norm_b ** 2 / D + (eta - zeta - mu0 * mu0) * float(a @ a)
         + mu0 * mu0 * float(a.sum()) ** 2)
    return GELoss(rho + Q - 2.0 * M, rho, M, Q)


# ---------------------------------------------------------------------------
# profiles

PROFILE_METRICS = ("loss", "loss_ge", "norm_a", "norm_b", "overlap", "train_loss")


@dataclass
class Profile:
    n_values: np.ndarray
    D: int
    P: int
    mean: dict
    stderr: dict
    raw: dict = field(default_factory=dict, repr=False)

    def metric(self, name):
        return self.mean[name], self.stderr[name]


def _stderr(x, axis=0):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    if n < 2:
        return np.zeros(np.delete(x.shape, axis))
    return x.std(axis=axis, ddof=1) / math.sqrt(n)


def solve_cell(template: RFProblem, N: int, seeds: RFSeeds, test: Optional[TestSet] = None,
               m_test: int = 10_000, test_seed: int = 12345) -> dict:
    """All profile metrics for one (N, seeds) cell."""
    prob = template.with_(N=int(N), seeds=seeds)
    sol = ridge_solve(prob)
    if test is not None:
        loss, _ = test.loss(sol.a)
    else:
        loss, _ = test_loss_mc(prob, sol, m_test, test_seed)
    return {
        "loss": loss, "loss_ge": gaussian_equivalent_loss(prob, sol).loss,
        "norm_a": sol.norm_a, "norm_b": sol.norm_b, "overlap": sol.overlap,
        "train_loss": sol.train_loss,
    }


def sample_profile(template: RFProblem, n_grid: Sequence[int], replicates: int = 10,
                   m_test: int = 10_000, schedule: SeedSchedule = SeedSchedule(),
                   p_index: int = 0) -> Profile:
    """Per-N mean and stderr of loss and norm diagnostics over replicates."""
    n_grid = np.asarray([int(n) for n in n_grid])
    if replicates < 1 or np.any(n_grid < 1):
        raise ValueError("need replicates >= 1 and all N >= 1")
    raw = {k: np.empty((replicates, len(n_grid))) for k in PROFILE_METRICS}
    for rep in range(replicates):
        base = template.with_(seeds=schedule.seeds(rep, 0, p_index))
        test = TestSet.build(base, m_test, schedule.test_seed(rep))
        for j, N in enumerate(n_grid):
            cell = solve_cell(template, N, schedule.seeds(rep, j, p_index), test)
            for k in PROFILE_METRICS:
                raw[k][rep, j] = cell[k]
    return Profile(n_grid, template.D, template.P,
                   {k: v.mean(0) for k, v in raw.items()},
                   {k: _stderr(v) for k, v in raw.items()}, raw)
