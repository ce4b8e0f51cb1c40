"""Batch tri-clustering solver.

Factorizes a feature-tweet-user bundle into non-negative cluster factors by
block multiplicative updates.  The minimized objective is

    ||X_p - S_p H_p S_f^T||_F^2 + ||X_u - S_u H_u S_f^T||_F^2
    + ||X_r - S_u S_p^T||_F^2 + alpha ||S_f - S_f0||_F^2
    + beta tr(S_u^T L_u S_u)

over non-negative S_f (l x k), S_p (n x k), S_u (m x k) and k x k association
matrices H_p, H_u.  One sweep updates S_p, H_p, S_u, H_u, S_f in that order,
each block consuming the freshest values of the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    frob_residual_sq,
    gram,
    hadamard_sqrt_update,
    laplacian_parts,
    spmm,
    spmm_t,
    split_pos_neg,
    trace_quadratic,
)

INIT_LOW = 0.01  # strictly positive floor: a zero entry is absorbing under multiplicative updates


class SolverError(RuntimeError):
    """Raised when a solve aborts on a numeric failure."""


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the batch solver; published defaults alpha=0.05, beta=0.8."""

    alpha: float = 0.05
    beta: float = 0.8
    k: int = 3
    max_iters: int = 200
    tol: float = 1e-6
    eps: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1], got %r" % self.alpha)
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1], got %r" % self.beta)
        if self.k < 1:
            raise ValueError("k must be positive, got %d" % self.k)
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1, got %d" % self.max_iters)
        if self.tol <= 0.0:
            raise ValueError("tol must be > 0, got %r" % self.tol)
        if self.eps <= 0.0:
            raise ValueError("eps must be > 0, got %r" % self.eps)


class DataBundle:
    """One self-consistent snapshot of the input matrices plus the lexicon prior.

    X_p : tweet-feature counts, n x l
    X_u : user-feature counts, m x l
    X_r : user-tweet links, m x n
    G_u : user-user graph, m x m (symmetric, zero diagonal)
    S_f0: per-feature class prior in [0, 1], l x k; all-zero rows mark
          features absent from the lexicon
    """

    def __init__(self, X_p, X_u, X_r, G_u, S_f0):
        S_f0 = np.asarray(S_f0, dtype=np.float64)
        n, l = X_p.shape
        m = X_u.rows
        if X_u.cols != l:
            raise ValueError(
                "X_u is %dx%d but X_p has %d features" % (X_u.rows, X_u.cols, l)
            )
        if X_r.shape != (m, n):
            raise ValueError(
                "X_r is %dx%d, expected %dx%d (users x tweets)" % (*X_r.shape, m, n)
            )
        if G_u.shape != (m, m):
            raise ValueError("G_u is %dx%d, expected %dx%d" % (*G_u.shape, m, m))
        if S_f0.ndim != 2 or S_f0.shape[0] != l:
            raise ValueError(
                "S_f0 has shape %s, expected %d rows (one per feature)" % (S_f0.shape, l)
            )
        if S_f0.min(initial=0.0) < 0.0 or S_f0.max(initial=0.0) > 1.0:
            raise ValueError("S_f0 entries must lie in [0, 1]")
        self.X_p = X_p
        self.X_u = X_u
        self.X_r = X_r
        self.G_u = G_u
        self.S_f0 = S_f0
        self.n, self.m, self.l = n, m, l
        self.k = S_f0.shape[1]
        # degree/adjacency of the (symmetrized) user graph, shared by every sweep
        self.user_degree, self.user_adjacency = laplacian_parts(G_u)


@dataclass
class FactorState:
    """The five non-negative factors; every entry stays >= 0 and finite."""

    S_f: np.ndarray
    S_p: np.ndarray
    S_u: np.ndarray
    H_p: np.ndarray
    H_u: np.ndarray

    def copy(self):
        return FactorState(
            self.S_f.copy(), self.S_p.copy(), self.S_u.copy(),
            self.H_p.copy(), self.H_u.copy(),
        )


@dataclass
class ObjectiveTrace:
    """Objective value before the first sweep and after each full sweep."""

    values: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def init_factors(bundle, config):
    """Seeded strictly-positive start; S_f rows blend the lexicon prior.

    All factors draw uniform from (0.01, 1.0).  Rows of S_f whose prior row is
    nonzero are replaced by 0.5 * prior + 0.5 * draw, so a lexicon feature
    starts biased toward its class.  Draw order: S_f, S_p, S_u, H_p, H_u.
    """
    k = config.k
    if k < 2:
        raise ValueError("need at least 2 clusters, got k=%d" % k)
    if bundle.k != k:
        raise ValueError(
            "bundle prior has %d classes but config asks for k=%d" % (bundle.k, k)
        )
    rng = np.random.default_rng(config.seed)
    S_f = rng.uniform(INIT_LOW, 1.0, size=(bundle.l, k))
    S_p = rng.uniform(INIT_LOW, 1.0, size=(bundle.n, k))
    S_u = rng.uniform(INIT_LOW, 1.0, size=(bundle.m, k))
    H_p = rng.uniform(INIT_LOW, 1.0, size=(k, k))
    H_u = rng.uniform(INIT_LOW, 1.0, size=(k, k))
    prior_rows = np.any(bundle.S_f0 > 0.0, axis=1)
    S_f[prior_rows] = 0.5 * bundle.S_f0[prior_rows] + 0.5 * S_f[prior_rows]
    return FactorState(S_f, S_p, S_u, H_p, H_u)


def objective(state, bundle, config):
    """Full objective value for the current factors."""
    val = frob_residual_sq(bundle.X_p, state.S_p, state.H_p, state.S_f)
    val += frob_residual_sq(bundle.X_u, state.S_u, state.H_u, state.S_f)
    val += frob_residual_sq(bundle.X_r, state.S_u, None, state.S_p)
    if config.alpha:
        diff = state.S_f - bundle.S_f0
        val += config.alpha * float(np.sum(diff * diff))
    if config.beta:
        val += config.beta * trace_quadratic(
            state.S_u, bundle.user_degree, bundle.user_adjacency
        )
    return val


def update_Sf(state, bundle, config, prior=None):
    """Multiplicative step for the feature factor.

    `prior` defaults to the bundle's lexicon matrix; the streaming solver
    passes the decayed window aggregate instead.
    """
    S_f, S_p, S_u = state.S_f, state.S_p, state.S_u
    H_p, H_u = state.H_p, state.H_u
    if prior is None:
        prior = bundle.S_f0
    alpha = config.alpha
    xut_su_hu = spmm_t(bundle.X_u, S_u) @ H_u
    xpt_sp_hp = spmm_t(bundle.X_p, S_p) @ H_p
    a_u = H_u.T @ gram(S_u) @ H_u
    a_p = H_p.T @ gram(S_p) @ H_p
    delta = S_f.T @ xut_su_hu - a_u + S_f.T @ xpt_sp_hp - a_p
    delta -= alpha * (S_f.T @ (S_f - prior))
    d_pos, d_neg = split_pos_neg(delta)
    numer = xut_su_hu + xpt_sp_hp + alpha * prior + S_f @ d_neg
    denom = S_f @ a_u + S_f @ a_p + alpha * S_f + S_f @ d_pos
    return hadamard_sqrt_update(S_f, numer, denom, config.eps)


def update_Sp(state, bundle, config):
    """Multiplicative step for the tweet factor."""
    S_f, S_p, S_u, H_p = state.S_f, state.S_p, state.S_u, state.H_p
    xp_sf_hp = spmm(bundle.X_p, S_f) @ H_p.T
    xrt_su = spmm_t(bundle.X_r, S_u)
    b_p = H_p @ gram(S_f) @ H_p.T
    g_u = gram(S_u)
    delta = S_p.T @ xp_sf_hp - b_p + S_p.T @ xrt_su - g_u
    d_pos, d_neg = split_pos_neg(delta)
    numer = xp_sf_hp + xrt_su + S_p @ d_neg
    denom = S_p @ b_p + S_p @ g_u + S_p @ d_pos
    return hadamard_sqrt_update(S_p, numer, denom, config.eps)


def update_Su(state, bundle, config):
    """Multiplicative step for the user factor, including the graph penalty."""
    S_f, S_p, S_u, H_u = state.S_f, state.S_p, state.S_u, state.H_u
    beta = config.beta
    xu_sf_hu = spmm(bundle.X_u, S_f) @ H_u.T
    xr_sp = spmm(bundle.X_r, S_p)
    b_u = H_u @ gram(S_f) @ H_u.T
    g_p = gram(S_p)
    gu_su = spmm(bundle.user_adjacency, S_u)
    du_su = bundle.user_degree[:, None] * S_u
    delta = S_u.T @ xu_sf_hu + S_u.T @ xr_sp - b_u - g_p
    delta -= beta * (S_u.T @ (du_su - gu_su))
    d_pos, d_neg = split_pos_neg(delta)
    numer = xu_sf_hu + xr_sp + beta * gu_su + S_u @ d_neg
    denom = S_u @ b_u + S_u @ g_p + beta * du_su + S_u @ d_pos
    return hadamard_sqrt_update(S_u, numer, denom, config.eps)


def update_Hp(state, bundle, config):
    """Multiplicative step for the tweet-feature association matrix."""
    S_f, S_p, H_p = state.S_f, state.S_p, state.H_p
    numer = S_p.T @ spmm(bundle.X_p, S_f)
    denom = gram(S_p) @ H_p @ gram(S_f)
    return hadamard_sqrt_update(H_p, numer, denom, config.eps)


def update_Hu(state, bundle, config):
    """Multiplicative step for the user-feature association matrix."""
    S_f, S_u, H_u = state.S_f, state.S_u, state.H_u
    numer = S_u.T @ spmm(bundle.X_u, S_f)
    denom = gram(S_u) @ H_u @ gram(S_f)
    return hadamard_sqrt_update(H_u, numer, denom, config.eps)


def sweep(state, bundle, config):
    """One full block sweep, in place: S_p, H_p, S_u, H_u, S_f."""
    state.S_p = update_Sp(state, bundle, config)
    state.H_p = update_Hp(state, bundle, config)
    state.S_u = update_Su(state, bundle, config)
    state.H_u = update_Hu(state, bundle, config)
    state.S_f = update_Sf(state, bundle, config)
    return state


def relative_change(prev, cur):
    return abs(cur - prev) / (1.0 + prev)


def fit_offline(bundle, config, state=None):
    """Run sweeps until the relative objective change drops below tol.

    Returns the final factors and the per-sweep objective trace (the first
    trace entry is the objective of the initial factors).  Deterministic:
    (bundle, config) fully determine the output.
    """
    if state is None:
        state = init_factors(bundle, config)
    trace = ObjectiveTrace()
    prev = objective(state, bundle, config)
    trace.values.append(prev)
    for it in range(1, config.max_iters + 1):
        sweep(state, bundle, config)
        cur = objective(state, bundle, config)
        if not np.isfinite(cur):
            raise SolverError("non-finite objective at sweep %d" % it)
        trace.values.append(cur)
        trace.iterations = it
        if relative_change(prev, cur) < config.tol:
            trace.converged = True
            break
        prev = cur
    return state, trace


def kkt_residual(state, bundle, config):
    """Stationarity diagnostic: mean |gradient * factor| over all entries.

    The gradient is that of the unpenalized objective (no orthogonality
    terms), so the value is exactly 0 at a zero-residual state with
    alpha = beta = 0 and shrinks as sweeps approach a stationary point.
    """
    S_f, S_p, S_u = state.S_f, state.S_p, state.S_u
    H_p, H_u = state.H_p, state.H_u
    g_f = gram(S_f)
    grad_Sf = (
        -spmm_t(bundle.X_p, S_p) @ H_p
        + S_f @ (H_p.T @ gram(S_p) @ H_p)
        - spmm_t(bundle.X_u, S_u) @ H_u
        + S_f @ (H_u.T @ gram(S_u) @ H_u)
        + config.alpha * (S_f - bundle.S_f0)
    )
    grad_Sp = (
        -spmm(bundle.X_p, S_f) @ H_p.T
        + S_p @ (H_p @ g_f @ H_p.T)
        - spmm_t(bundle.X_r, S_u)
        + S_p @ gram(S_u)
    )
    lap_su = bundle.user_degree[:, None] * S_u - spmm(bundle.user_adjacency, S_u)
    grad_Su = (
        -spmm(bundle.X_u, S_f) @ H_u.T
        + S_u @ (H_u @ g_f @ H_u.T)
        - spmm(bundle.X_r, S_p)
        + S_u @ gram(S_p)
        + config.beta * lap_su
    )
    grad_Hp = -S_p.T @ spmm(bundle.X_p, S_f) + gram(S_p) @ H_p @ g_f
    grad_Hu = -S_u.T @ spmm(bundle.X_u, S_f) + gram(S_u) @ H_u @ g_f
    total = 0.0
    count = 0
    for grad, M in (
        (grad_Sf, S_f), (grad_Sp, S_p), (grad_Su, S_u), (grad_Hp, H_p), (grad_Hu, H_u),
    ):
        total += float(np.sum(np.abs(2.0 * grad * M)))
        count += M.size
    return total / count
