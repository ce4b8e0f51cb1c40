"""Streaming tri-clustering: per-timestamp solves with temporal regularization.

Each timestamp brings a fresh batch (tweets, the users active in it, their
graph).  The solver warm-starts from a time-decayed window of past feature
factors and the previous user rows, partitions users into disappeared /
evolving / new, and minimizes the batch objective plus

    alpha ||S_f(t) - S_fw(t)||_F^2   (feature smoothness, prior = window aggregate)
    gamma ||S_u(t) - S_uw(t)||_F^2   (user smoothness, evolving users)

Disappeared users carry no data at time t; their registry rows are set to
the decayed aggregate exactly, which is the closed-form minimizer of the one
objective term still touching them.  On the first timestamp the window is
empty and the step reduces to the offline solve (lexicon prior, no user
smoothness term).

Baselines for comparison: ``mini-batch`` solves every batch independently
with the offline algorithm, ``full-batch`` re-solves the concatenation of
everything seen so far at every timestamp.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import SparseMatrix, frob_residual_sq, gram, hadamard_sqrt_update, spmm, split_pos_neg, trace_quadratic
from .offline import (
    INIT_LOW,
    DataBundle,
    FactorState,
    ObjectiveTrace,
    SolverConfig,
    SolverError,
    fit_offline,
    relative_change,
    update_Hp,
    update_Hu,
    update_Sf,
    update_Sp,
)

MODES = ("online", "mini-batch", "full-batch")


@dataclass(frozen=True)
class StreamConfig:
    """Streaming knobs; published defaults alpha=0.9, tau=0.9, gamma=0.2, w=2."""

    alpha: float = 0.9
    beta: float = 0.8
    gamma: float = 0.2
    tau: float = 0.9
    window: int = 2
    k: int = 3
    max_iters: int = 200
    tol: float = 1e-6
    eps: float = 1e-12
    seed: int = 0
    mode: str = "online"

    def __post_init__(self):
        if self.gamma < 0.0:
            raise ValueError("gamma must be >= 0, got %r" % self.gamma)
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1], got %r" % self.tau)
        if self.window < 2:
            raise ValueError("window must be >= 2, got %d" % self.window)
        if self.mode not in MODES:
            raise ValueError("mode must be one of %s, got %r" % (", ".join(MODES), self.mode))
        self.solver()  # validates the shared fields

    def solver(self):
        """The equivalent batch-solver configuration (used per step / baseline)."""
        return SolverConfig(
            alpha=self.alpha, beta=self.beta, k=self.k,
            max_iters=self.max_iters, tol=self.tol, eps=self.eps, seed=self.seed,
        )


@dataclass
class BatchData:
    """One timestamp's bundle plus the row -> global-id maps."""

    timestamp: int
    bundle: DataBundle
    tweet_ids: list
    user_ids: list

    def __post_init__(self):
        if len(self.tweet_ids) != self.bundle.n:
            raise ValueError(
                "batch %r has %d tweet ids for %d tweets"
                % (self.timestamp, len(self.tweet_ids), self.bundle.n)
            )
        if len(self.user_ids) != self.bundle.m:
            raise ValueError(
                "batch %r has %d user ids for %d users"
                % (self.timestamp, len(self.user_ids), self.bundle.m)
            )
        if len(set(self.user_ids)) != len(self.user_ids):
            raise ValueError("batch %r has duplicate user ids" % self.timestamp)
        if len(set(self.tweet_ids)) != len(self.tweet_ids):
            raise ValueError("batch %r has duplicate tweet ids" % self.timestamp)


@dataclass
class TemporalState:
    """Decayed history carried between timestamps.

    past_Sf holds the up-to-(window-1) most recent feature factors;
    prev_users maps every user ever seen to their latest row (decayed by tau
    for each timestamp they sat out).  Memory stays O(window * l * k + m * k).
    """

    tau: float = 0.9
    window: int = 2
    past_Sf: list = field(default_factory=list)
    prev_users: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1], got %r" % self.tau)
        if self.window < 2:
            raise ValueError("window must be >= 2, got %d" % self.window)

    def advance(self, batch, state):
        """Fold a finished step into the window; disappeared rows decay by tau."""
        self.past_Sf.append((batch.timestamp, state.S_f.copy()))
        del self.past_Sf[: -(self.window - 1)]
        current = set(batch.user_ids)
        for gid in self.prev_users:
            if gid not in current:
                self.prev_users[gid] = self.tau * self.prev_users[gid]
        for row, gid in enumerate(batch.user_ids):
            self.prev_users[gid] = state.S_u[row].copy()


@dataclass
class UserPartition:
    """Per-timestamp user split; previous rows live in TemporalState.prev_users.

    evolving/new hold (global-id, current-row-index) pairs covering exactly
    the batch; disappeared plus the evolving ids cover exactly the previous
    registry.
    """

    disappeared: frozenset
    evolving: list
    new: list


def partition_users(prev_registry, batch):
    """Split the batch's users against the previous registry by set difference."""
    if len(set(batch.user_ids)) != len(batch.user_ids):
        raise ValueError("batch %r has duplicate user ids" % batch.timestamp)
    prev_registry = set(prev_registry)
    evolving, new = [], []
    for row, gid in enumerate(batch.user_ids):
        (evolving if gid in prev_registry else new).append((gid, row))
    disappeared = frozenset(prev_registry - set(batch.user_ids))
    return UserPartition(disappeared, evolving, new)


def aggregate_window(temporal):
    """Time-decayed window aggregates (S_fw, S_uw).

    S_fw = sum_{i=1..w-1} tau^i * S_f(t-i) over the buffered snapshots
    (i = 1 is the most recent).  S_uw maps each registered user to
    tau * (their previous row).  Returns (None, None) when the window is
    empty (first timestamp).
    """
    if not temporal.past_Sf:
        return None, None
    S_fw = None
    for i, (_, snap) in enumerate(reversed(temporal.past_Sf), start=1):
        term = (temporal.tau ** i) * snap
        S_fw = term if S_fw is None else S_fw + term
    S_uw = {gid: temporal.tau * row for gid, row in temporal.prev_users.items()}
    return S_fw, S_uw


class _StepWork:
    """Precomputed row alignment and aggregates for one warm timestamp."""

    def __init__(self, batch, temporal):
        self.S_fw, uw = aggregate_window(temporal)
        self.partition = partition_users(set(temporal.prev_users), batch)
        k = batch.bundle.k
        ev = self.partition.evolving
        self.evolving_rows = np.asarray([r for _, r in ev], dtype=np.intp)
        self.new_rows = np.asarray([r for _, r in self.partition.new], dtype=np.intp)
        if ev:
            self.S_uw = np.asarray([uw[g] for g, _ in ev])
            self.prev_rows = np.asarray([temporal.prev_users[g] for g, _ in ev])
        else:
            self.S_uw = np.zeros((0, k))
            self.prev_rows = np.zeros((0, k))


def _su_products(state, bundle, config):
    """The shared pieces of the user-factor rule on the current state."""
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
    numer = xu_sf_hu + xr_sp + beta * gu_su
    denom = S_u @ b_u + S_u @ g_p + beta * du_su
    return numer, denom, delta


def online_update_Su_new(state, batch, config, rows):
    """User rule without the smoothness term, applied to the given rows only."""
    bundle = batch.bundle
    S_u = state.S_u
    numer, denom, delta = _su_products(state, bundle, config)
    d_pos, d_neg = split_pos_neg(delta)
    out = S_u.copy()
    out[rows] = hadamard_sqrt_update(
        S_u[rows],
        numer[rows] + S_u[rows] @ d_neg,
        denom[rows] + S_u[rows] @ d_pos,
        config.eps,
    )
    return out


def online_update_Su_evolving(state, batch, config, rows, uw_rows, prev_rows):
    """User rule with gamma-smoothing toward the decayed previous rows.

    Adds gamma * S_uw to the numerator and gamma * S_u to the denominator on
    the evolving rows; the constraint multiplier picks up the printed
    -gamma * S_u^T (S_u - S_u(t-1)) term, evaluated over the evolving rows
    (the smoothness penalty's support).
    """
    bundle = batch.bundle
    S_u = state.S_u
    gamma = config.gamma
    numer, denom, delta = _su_products(state, bundle, config)
    delta = delta - gamma * (S_u[rows].T @ (S_u[rows] - prev_rows))
    d_pos, d_neg = split_pos_neg(delta)
    out = S_u.copy()
    out[rows] = hadamard_sqrt_update(
        S_u[rows],
        numer[rows] + gamma * uw_rows + S_u[rows] @ d_neg,
        denom[rows] + gamma * S_u[rows] + S_u[rows] @ d_pos,
        config.eps,
    )
    return out


def online_update_Sf(state, batch, temporal, config):
    """Feature rule with the window aggregate standing in for the lexicon prior."""
    S_fw, _ = aggregate_window(temporal)
    prior = batch.bundle.S_f0 if S_fw is None else S_fw
    return update_Sf(state, batch.bundle, config, prior=prior)


def online_update_Sp(state, batch, config):
    """Tweet rule on the time-t matrices (identical to the batch rule)."""
    return update_Sp(state, batch.bundle, config)


def online_sweep_Hp(state, batch, config):
    return update_Hp(state, batch.bundle, config)


def online_sweep_Hu(state, batch, config):
    return update_Hu(state, batch.bundle, config)


def _objective_with_work(state, batch, work, config):
    bundle = batch.bundle
    val = frob_residual_sq(bundle.X_p, state.S_p, state.H_p, state.S_f)
    val += frob_residual_sq(bundle.X_u, state.S_u, state.H_u, state.S_f)
    val += frob_residual_sq(bundle.X_r, state.S_u, None, state.S_p)
    prior = bundle.S_f0 if work.S_fw is None else work.S_fw
    if config.alpha:
        diff = state.S_f - prior
        val += config.alpha * float(np.sum(diff * diff))
    if config.beta:
        val += config.beta * trace_quadratic(
            state.S_u, bundle.user_degree, bundle.user_adjacency
        )
    # disappeared rows sit exactly at their aggregate, contributing zero
    if config.gamma and work.S_fw is not None and work.evolving_rows.size:
        diff = state.S_u[work.evolving_rows] - work.S_uw
        val += config.gamma * float(np.sum(diff * diff))
    return val


def online_objective(state, batch, temporal, config):
    """Streaming objective at one timestamp (cold start drops the window terms)."""
    return _objective_with_work(state, batch, _StepWork(batch, temporal), config)


def fit_online_step(batch, temporal, config):
    """Solve one timestamp and fold the result into the temporal state.

    Warm start: S_f(t) from the window aggregate, evolving rows from the
    decayed previous rows, the rest random (seeded).  Sweep order: S_f, S_p,
    H_p, H_u, new-user rows, evolving rows.  With an empty window this is
    exactly the offline solve of the batch.
    """
    bundle = batch.bundle
    if not temporal.past_Sf:
        state, trace = fit_offline(bundle, config.solver())
        temporal.advance(batch, state)
        return state, trace

    work = _StepWork(batch, temporal)
    k, n, m = bundle.k, bundle.n, bundle.m
    rng = np.random.default_rng(config.seed)
    S_p = rng.uniform(INIT_LOW, 1.0, size=(n, k))
    H_p = rng.uniform(INIT_LOW, 1.0, size=(k, k))
    H_u = rng.uniform(INIT_LOW, 1.0, size=(k, k))
    S_u = np.zeros((m, k))
    if work.evolving_rows.size:
        S_u[work.evolving_rows] = work.S_uw
    if work.new_rows.size:
        S_u[work.new_rows] = rng.uniform(INIT_LOW, 1.0, size=(work.new_rows.size, k))
    state = FactorState(work.S_fw.copy(), S_p, S_u, H_p, H_u)

    trace = ObjectiveTrace()
    prev = _objective_with_work(state, batch, work, config)
    trace.values.append(prev)
    for it in range(1, config.max_iters + 1):
        state.S_f = update_Sf(state, bundle, config, prior=work.S_fw)
        state.S_p = update_Sp(state, bundle, config)
        state.H_p = update_Hp(state, bundle, config)
        state.H_u = update_Hu(state, bundle, config)
        if work.new_rows.size:
            state.S_u = online_update_Su_new(state, batch, config, work.new_rows)
        if work.evolving_rows.size:
            state.S_u = online_update_Su_evolving(
                state, batch, config, work.evolving_rows, work.S_uw, work.prev_rows
            )
        cur = _objective_with_work(state, batch, work, config)
        if not np.isfinite(cur):
            raise SolverError(
                "non-finite objective at sweep %d of timestamp %r" % (it, batch.timestamp)
            )
        trace.values.append(cur)
        trace.iterations = it
        if relative_change(prev, cur) < config.tol:
            trace.converged = True
            break
        prev = cur
    temporal.advance(batch, state)
    return state, trace


@dataclass
class StepResult:
    """Output of one processed timestamp; ids are aligned with the state rows."""

    timestamp: int
    state: FactorState
    trace: ObjectiveTrace
    wall_ms: float
    tweet_ids: list
    user_ids: list


def _check_stream(batches):
    if not batches:
        raise ValueError("empty stream")
    l = batches[0].bundle.l
    last_t = None
    for b in batches:
        if b.bundle.l != l:
            raise ValueError(
                "inconsistent feature dimension: batch %r has %d features, expected %d"
                % (b.timestamp, b.bundle.l, l)
            )
        if last_t is not None and b.timestamp <= last_t:
            raise ValueError(
                "timestamps must be strictly increasing, got %r after %r"
                % (b.timestamp, last_t)
            )
        last_t = b.timestamp


def concat_batches(batches):
    """Cumulative batch: stacked tweets, union of users with summed entries."""
    _check_stream(batches)
    l = batches[0].bundle.l
    S_f0 = batches[0].bundle.S_f0
    for b in batches[1:]:
        if not np.array_equal(b.bundle.S_f0, S_f0):
            raise ValueError("lexicon prior differs across batches")
    tweet_ids = []
    user_ids = []
    user_row = {}
    for b in batches:
        for gid in b.user_ids:
            if gid not in user_row:
                user_row[gid] = len(user_ids)
                user_ids.append(gid)
        tweet_ids.extend(b.tweet_ids)
    if len(set(tweet_ids)) != len(tweet_ids):
        raise ValueError("tweet ids repeat across batches")
    n, m = len(tweet_ids), len(user_ids)

    parts = {name: ([], [], []) for name in ("X_p", "X_u", "X_r", "G_u")}

    def collect(name, rows, cols, vals):
        ii, jj, vv = parts[name]
        ii.append(rows)
        jj.append(cols)
        vv.append(vals)

    offset = 0
    for b in batches:
        rows = np.asarray([user_row[g] for g in b.user_ids], dtype=np.int64)
        c = b.bundle.X_p.csr.tocoo()
        collect("X_p", c.row + offset, c.col, c.data)
        c = b.bundle.X_u.csr.tocoo()
        collect("X_u", rows[c.row], c.col, c.data)
        c = b.bundle.X_r.csr.tocoo()
        collect("X_r", rows[c.row], c.col + offset, c.data)
        c = b.bundle.G_u.csr.tocoo()
        collect("G_u", rows[c.row], rows[c.col], c.data)
        offset += b.bundle.n

    def build(name, shape):
        ii, jj, vv = parts[name]
        return SparseMatrix.from_arrays(
            shape[0], shape[1],
            np.concatenate(ii), np.concatenate(jj), np.concatenate(vv),
        )

    bundle = DataBundle(
        build("X_p", (n, l)),
        build("X_u", (m, l)),
        build("X_r", (m, n)),
        build("G_u", (m, m)),
        S_f0,
    )
    return BatchData(batches[-1].timestamp, bundle, tweet_ids, user_ids)


def run_stream(batches, config):
    """Process a stream in the configured mode; wall time covers solves only."""
    _check_stream(batches)
    results = []
    solver = config.solver() if config.mode != "online" else None
    temporal = TemporalState(tau=config.tau, window=config.window)
    for i, batch in enumerate(batches):
        start = time.perf_counter()
        if config.mode == "online":
            state, trace = fit_online_step(batch, temporal, config)
            ids = (batch.tweet_ids, batch.user_ids)
        elif config.mode == "mini-batch":
            state, trace = fit_offline(batch.bundle, solver)
            ids = (batch.tweet_ids, batch.user_ids)
        else:  # full-batch
            cumulative = concat_batches(batches[: i + 1])
            state, trace = fit_offline(cumulative.bundle, solver)
            ids = (cumulative.tweet_ids, cumulative.user_ids)
        wall_ms = (time.perf_counter() - start) * 1000.0
        results.append(
            StepResult(batch.timestamp, state, trace, wall_ms, ids[0], ids[1])
        )
    return results
