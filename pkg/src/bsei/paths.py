"""Path-space machinery: Brownian ensembles on a uniform grid, adapted
process storage, the left-endpoint stochastic integral, discrete
L^p(Omega; L^2) norms, least-squares conditional expectations, and the
martingale representation with a strictly lower-triangular kernel.

Randomness comes from numpy's Philox counter-based generator keyed by
(seed, step index), so the draws for a given step never depend on the
number of paths or steps requested elsewhere.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import AdaptednessError, RegressionError

_RIDGE_SCALE = 1e-10
_MIN_PATHS_PER_BASIS = 10


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k T / N on [0, T]."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (self.horizon > 0.0 and np.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if self.n_steps < 1:
            raise ValueError("need at least one step")
        nodes = np.linspace(0.0, self.horizon, self.n_steps + 1)
        nodes.setflags(write=False)
        object.__setattr__(self, "_nodes", nodes)

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def node_index(self, t: float) -> int:
        k = t / self.dt
        k_round = int(round(k))
        if abs(k - k_round) > 1e-9 * max(1.0, abs(k)):
            raise ValueError(f"time {t} is not on the grid")
        if not 0 <= k_round <= self.n_steps:
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        return k_round


def _philox_normals(seed: int, step: int, n: int) -> np.ndarray:
    key = np.array([seed % (1 << 64), step], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(n)


@dataclass(frozen=True)
class BrownianEnsemble:
    """Seeded Gaussian increments dW[k][m] ~ N(0, dt), one stream per step."""

    grid: TimeGrid
    n_paths: int
    seed: int
    increments: np.ndarray  # (N, M)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape != (self.grid.n_steps, self.n_paths):
            raise ValueError("increments must have shape (n_steps, n_paths)")
        inc = inc.copy()
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        levels = np.zeros((self.grid.n_steps + 1, self.n_paths))
        np.cumsum(inc, axis=0, out=levels[1:])
        levels.setflags(write=False)
        object.__setattr__(self, "_levels", levels)

    @property
    def levels(self) -> np.ndarray:
        """Brownian values W[k][m] at the grid nodes, W[0] = 0."""
        return self._levels

    def resampled_after(self, k_from: int, fresh_seed: int) -> "BrownianEnsemble":
        """Copy with increments at steps >= k_from redrawn under a new seed.

        Used to exercise adaptedness: anything measurable at node k must be
        unchanged when only later increments move.
        """
        sq = np.sqrt(self.grid.dt)
        inc = np.array(self.increments)
        for k in range(max(k_from, 0), self.grid.n_steps):
            inc[k] = sq * _philox_normals(fresh_seed, k, self.n_paths)
        return BrownianEnsemble(self.grid, self.n_paths, fresh_seed, inc)


def simulate_brownian(grid: TimeGrid, n_paths: int, seed: int) -> BrownianEnsemble:
    """Draw a reproducible Brownian increment ensemble on the grid."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    sq = np.sqrt(grid.dt)
    inc = np.empty((grid.n_steps, n_paths))
    for k in range(grid.n_steps):
        inc[k] = sq * _philox_normals(seed, k, n_paths)
    return BrownianEnsemble(grid, n_paths, seed, inc)


@dataclass(frozen=True)
class ProcessEnsemble:
    """Vector-valued process samples X[k][m] on consecutive grid nodes.

    ``start_index`` is the global grid index of X[0].  ``adapted`` declares
    the left-endpoint adaptedness contract: X[k] may depend on increments
    strictly before global node start_index + k only.
    """

    grid: TimeGrid
    values: np.ndarray  # (n_nodes, M, d)
    start_index: int = 0
    adapted: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError("values must be a (n_nodes, n_paths, dim) array")
        if not np.all(np.isfinite(v)):
            raise ValueError("process values must be finite")
        if self.start_index < 0 or self.start_index + v.shape[0] - 1 > self.grid.n_steps:
            raise ValueError("node range falls outside the grid")
        object.__setattr__(self, "values", v)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_paths(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes[self.start_index:self.start_index + self.n_nodes]


def from_function(grid: TimeGrid, bm: BrownianEnsemble, fn, dim: int) -> ProcessEnsemble:
    """Adapted ensemble X[k] = fn(k, W_{t_k}); fn returns an (M, dim) array."""
    out = np.empty((grid.n_steps + 1, bm.n_paths, dim))
    for k in range(grid.n_steps + 1):
        out[k] = np.asarray(fn(k, bm.levels[k]), dtype=float).reshape(bm.n_paths, dim)
    return ProcessEnsemble(grid, out)


def ito_integral(step_values: ProcessEnsemble, bm: BrownianEnsemble,
                 upto: float) -> np.ndarray:
    """Per-path integral sum_{k: t_{k+1} <= upto} X[k] dW[k] (left endpoints)."""
    if not step_values.adapted:
        raise AdaptednessError("integrand does not declare adaptedness")
    if step_values.grid != bm.grid or step_values.n_paths != bm.n_paths:
        raise ValueError("integrand and Brownian ensemble live on different grids")
    k_up = bm.grid.node_index(upto)
    lo = step_values.start_index
    if k_up > lo + step_values.n_nodes - 1:
        raise ValueError("integrand does not cover the integration window")
    if k_up <= lo:
        return np.zeros((bm.n_paths, step_values.dim))
    x = step_values.values[:k_up - lo]
    dw = bm.increments[lo:k_up]
    return np.einsum("kmd,km->md", x, dw)


def lp_l2_norm(x: ProcessEnsemble, p: float) -> float:
    """Sample norm ((1/M) sum_m (sum_k dt ||X[k][m]||^2)^{p/2})^{1/p}.

    Left-endpoint convention: the last stored node carries no quadrature mass.
    """
    if p <= 1.0:
        raise ValueError("p must exceed 1")
    return _lp_l2(x.values, x.grid.dt, p)


def _lp_l2(values: np.ndarray, dt: float, p: float) -> float:
    if values.shape[0] < 2:
        return 0.0
    q = dt * np.sum(values[:-1] ** 2, axis=(0, 2))  # (M,)
    return float(np.mean(q ** (p / 2.0)) ** (1.0 / p))


def _monomial_design(features: np.ndarray, degree: int) -> np.ndarray:
    """All monomials of total degree <= degree in the feature columns.

    Near-constant columns are dropped first so a deterministic feature
    (e.g. W at time zero) degrades gracefully to an intercept-only basis.
    """
    f = np.asarray(features, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    m = f.shape[0]
    sd = f.std(axis=0)
    keep = sd > 1e-12 * (1.0 + np.abs(f.mean(axis=0)))
    f = f[:, keep]
    cols = [np.ones(m)]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(f.shape[1]), deg):
            cols.append(np.prod(f[:, combo], axis=1))
    return np.column_stack(cols)


@dataclass
class RegressionFit:
    """Fitted values plus diagnostics for one regression solve."""

    values: np.ndarray        # (M, k) predictions
    coefficients: np.ndarray  # (p, k)
    ridge_used: bool
    residual_rms: np.ndarray  # (k,) per-target residual standard deviation
    coef_se: np.ndarray       # (p, k) OLS standard errors; NaN under ridge


class PolynomialRegression:
    """Least-squares projection onto a polynomial basis of path features.

    The design factorization is computed once, so repeated fits against the
    same conditioning variables (the common case in backward recursions) are
    cheap.  A rank-deficient design falls back to ridge with
    lambda = 1e-10 trace(X'X)/dim and raises the ``ridge_used`` flag.
    """

    def __init__(self, features, degree: int):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        x = _monomial_design(features, degree)
        m, p = x.shape
        if m < _MIN_PATHS_PER_BASIS * p:
            raise ValueError(
                f"need at least {_MIN_PATHS_PER_BASIS} paths per basis function "
                f"({p} functions, {m} paths)")
        self.design = x
        u, s, vt = np.linalg.svd(x, full_matrices=False)
        rcond = max(m, p) * np.finfo(float).eps * s[0]
        self.rank = int(np.sum(s > rcond))
        self.ridge_used = self.rank < p
        if self.ridge_used:
            xtx = x.T @ x
            lam = _RIDGE_SCALE * np.trace(xtx) / p
            self._solver = np.linalg.inv(xtx + lam * np.eye(p)) @ x.T
            self._xtx_inv_diag = None
        else:
            self._u, self._s, self._vt = u, s, vt
            self._xtx_inv_diag = np.sum((vt.T / s) ** 2, axis=1)

    @property
    def basis_dim(self) -> int:
        return self.design.shape[1]

    def fit(self, targets) -> RegressionFit:
        y = np.asarray(targets, dtype=float)
        squeeze = y.ndim == 1
        if squeeze:
            y = y[:, None]
        m, p = self.design.shape
        if y.shape[0] != m:
            raise ValueError("targets and design have different path counts")
        if self.ridge_used:
            coef = self._solver @ y
        else:
            coef = self._vt.T @ ((self._u.T @ y) / self._s[:, None])
        fitted = self.design @ coef
        resid = y - fitted
        dof = max(m - self.rank, 1)
        sigma = np.sqrt(np.sum(resid**2, axis=0) / dof)
        if self.ridge_used:
            se = np.full_like(coef, np.nan)
        else:
            se = np.sqrt(np.outer(self._xtx_inv_diag, sigma**2))
        return RegressionFit(
            values=fitted[:, 0] if squeeze else fitted,
            coefficients=coef[:, 0] if squeeze else coef,
            ridge_used=self.ridge_used,
            residual_rms=sigma[0] if squeeze else sigma,
            coef_se=se[:, 0] if squeeze else se,
        )


class KernelRegression:
    """Joint projection onto the polynomial basis and its increment multiples.

    For a basis phi_j of the conditioning features and a Brownian increment
    dW, the design [phi, phi * dW] is fitted jointly and the increment block
    evaluated; in population this recovers the basis projection of
    (1/dt) E[target dW | features], and it avoids the O(1/dt) variance of
    regressing target * dW / dt directly.
    """

    def __init__(self, base: PolynomialRegression, dw: np.ndarray, dt: float):
        b = base.design
        if dw.shape != (b.shape[0],):
            raise ValueError("increment vector must have one entry per path")
        x = np.hstack([b, b * dw[:, None]])
        m, p2 = x.shape
        self._basis = b
        self._p = b.shape[1]
        self._dt = dt
        u, s, vt = np.linalg.svd(x, full_matrices=False)
        rcond = max(m, p2) * np.finfo(float).eps * s[0]
        self.rank = int(np.sum(s > rcond))
        self.ridge_used = self.rank < p2
        if self.ridge_used:
            xtx = x.T @ x
            lam = _RIDGE_SCALE * np.trace(xtx) / p2
            self._solver = np.linalg.inv(xtx + lam * np.eye(p2)) @ x.T
        else:
            self._u, self._s, self._vt = u, s, vt

    def kernel(self, targets) -> np.ndarray:
        """Fitted values of the increment-block coefficient function."""
        y = np.asarray(targets, dtype=float)
        squeeze = y.ndim == 1
        if squeeze:
            y = y[:, None]
        if self.ridge_used:
            coef = self._solver @ y
        else:
            coef = self._vt.T @ ((self._u.T @ y) / self._s[:, None])
        out = self._basis @ coef[self._p:]
        return out[:, 0] if squeeze else out


def regress(targets, state_features, basis_degree: int) -> RegressionFit:
    return PolynomialRegression(state_features, basis_degree).fit(targets)


def conditional_expectation(targets, state_features, basis_degree: int) -> np.ndarray:
    """L^2(Omega)-orthogonal projection of per-path targets onto the span of
    polynomials in the conditioning features.

    Exact (up to conditioning) whenever the targets already are such a
    polynomial of the features.
    """
    return regress(targets, state_features, basis_degree).values


@dataclass(frozen=True)
class KernelEnsemble:
    """Two-time kernel samples tau[u][s][m], stored only for s < u.

    Entries on or above the diagonal do not exist, which makes the support
    condition of the representation kernel structural.
    """

    grid: TimeGrid
    start_index: int
    taus: tuple  # taus[u]: (u, M, d) array

    def tau(self, u: int, s: int) -> np.ndarray:
        if not 0 <= u < len(self.taus):
            raise ValueError(f"node index {u} out of range")
        if not 0 <= s < u:
            raise ValueError("kernel is strictly lower-triangular: need s < u")
        return self.taus[u][s]


@dataclass(frozen=True)
class MartingaleRepresentation:
    mean_part: np.ndarray     # (n_nodes, d) ensemble means
    kernel: KernelEnsemble
    residuals: np.ndarray     # (n_nodes,) L^2(Omega) reconstruction residuals


def martingale_representation(g: ProcessEnsemble, bm: BrownianEnsemble,
                              basis_degree: int) -> MartingaleRepresentation:
    """Decompose g_u = E(g_u) + sum_{k<u} tau[u][k] dW_k on the grid.

    tau[u][k] estimates (1/dt) E[g_u dW_k | F_{t_k}].  The estimate runs
    through the tower chain m_k = E[m_{k+1} | F_{t_k}] (fitted backwards
    from m_u = g_u, so the per-step targets never see the accumulated
    future noise of g_u) and reads each kernel from the increment block of
    the joint basis regression.
    """
    if not g.adapted:
        raise AdaptednessError("martingale representation needs an adapted process")
    if g.grid != bm.grid or g.n_paths != bm.n_paths:
        raise ValueError("process and Brownian ensemble live on different grids")
    n, m, d = g.values.shape
    lo = g.start_index
    dt = g.grid.dt
    regs = [PolynomialRegression(bm.levels[lo + k], basis_degree)
            for k in range(n - 1)]
    kerns = [KernelRegression(regs[k], bm.increments[lo + k], dt)
             for k in range(n - 1)]
    mean_part = g.values.mean(axis=1)
    taus = []
    residuals = np.empty(n)
    for u in range(n):
        gu = g.values[u]
        tau_u = np.empty((u, m, d))
        cond = gu
        for k in range(u - 1, -1, -1):
            try:
                tau_u[k] = kerns[k].kernel(cond)
                cond = regs[k].fit(cond).values
            except np.linalg.LinAlgError as exc:
                raise RegressionError(str(exc), time_index=lo + k) from exc
        recon = np.tile(mean_part[u], (m, 1))
        for k in range(u):
            recon += tau_u[k] * bm.increments[lo + k][:, None]
        taus.append(tau_u)
        residuals[u] = np.sqrt(np.mean(np.sum((gu - recon) ** 2, axis=1)))
    kernel = KernelEnsemble(g.grid, lo, tuple(taus))
    return MartingaleRepresentation(mean_part, kernel, residuals)
