"""Iteration kernels and the replica-vectorized Monte-Carlo runner.

The deviation-tracking iteration (shared or per-agent stepsizes), with
optional additive state disturbance:

    x(k+1) = x(k) [+ zeta(k)] - D_alpha y(k) - D_beta (I - W(k)) grad f(x(k))
    y(k+1) = W(k) y(k) + x(k+1) - x(k),          y(0) = x(0) - d

and the weighted-gradient baseline (no tracker, conserves 1'x):

    x(k+1) = x(k) [+ zeta(k)] - alpha_w (I - W(k)) grad f(x(k))

Randomness discipline (frozen; determinism and paired comparisons depend on
it): SeedSequence(seed).spawn(replicas) gives one child per replica, and
child.spawn(2) yields the (link-activation, disturbance) generator pair.
Per step, activations are `rng.random(E) < theta` and disturbance draws are
one (n, u) block from the second stream; draws are buffered in chunks, which
leaves the per-stream sequences unchanged.  Runs with the same seed therefore
see identical link failures and disturbances regardless of algorithm — the
DTA/WGA comparison is variance-paired for free.

(I - W(k)) v is applied edge-wise (gather the per-edge differences, scale by
the active negotiated weights, scatter back with opposite signs), which is
the matrix-free form of the per-agent message-passing update.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics as _metrics
from .costs import kkt_solve

DIVERGENCE_LIMIT = 1e12


@dataclass
class DisturbanceSpec:
    """Additive state disturbance with a geometric envelope.

    Per-coordinate scale at step k is (m_zeta / sqrt(n u)) * q_zeta^k, so the
    mean-square norm of zeta(k) is exactly m_zeta * q_zeta^k.  kinds:
    gaussian | laplace (std matched to gaussian) | impulse (fixed magnitude,
    random sign, zero from `cutoff` on) | none.
    """

    kind: str = "none"
    m_zeta: float = 0.0
    q_zeta: float = 0.999
    cutoff: int | None = None

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "laplace", "impulse"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind != "none":
            if not (0.0 < self.q_zeta < 1.0):
                raise ValueError("q_zeta must lie in (0, 1)")
            if self.m_zeta < 0:
                raise ValueError("m_zeta must be >= 0")

    @property
    def active(self):
        return self.kind != "none" and self.m_zeta > 0

    def scales(self, iterations, n, u):
        """Per-step per-coordinate scale, shape (iterations,)."""
        s = (self.m_zeta / np.sqrt(n * u)) * self.q_zeta ** np.arange(iterations)
        if self.kind == "impulse" and self.cutoff is not None:
            s[self.cutoff:] = 0.0
        return s


@dataclass
class IterateState:
    x: np.ndarray
    y: np.ndarray | None
    k: int = 0


def init_state(problem, x0=None):
    """y(0) = x(0) - d; agents only ever see their own demand here."""
    if x0 is None:
        x0 = np.zeros((problem.n, problem.u))
    x0 = np.asarray(x0, float)
    if x0.shape != (problem.n, problem.u):
        raise ValueError(f"x0 shape {x0.shape}, expected {(problem.n, problem.u)}")
    return IterateState(x=x0.copy(), y=x0 - problem.demand, k=0)


def _col(v, n):
    """Stepsize as a scalar or an (n, 1) column for per-agent plans."""
    a = np.asarray(v, float)
    if a.ndim == 0:
        return float(a)
    return np.broadcast_to(a, (n,)).reshape(n, 1)


def dta_step(state, costs, W, alpha, beta, zeta=None):
    """One deviation-tracking step with a dense mixing matrix.

    Shared and per-agent stepsizes use the same kernel (scalars broadcast).
    Raises on a non-finite incoming state.
    """
    x, y = state.x, state.y
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        from .errors import DivergenceError
        raise DivergenceError(f"non-finite state at k={state.k}", iteration=state.k)
    n = x.shape[0]
    al, be = _col(alpha, n), _col(beta, n)
    g = costs.gradient(x)
    mix = g - W @ g
    if zeta is not None:
        xn = x + zeta - al * y - be * mix
    else:
        xn = x - al * y - be * mix
    yn = W @ y + xn - x
    return IterateState(x=xn, y=yn, k=state.k + 1)


def wga_step(state, costs, W, alpha, zeta=None):
    """One weighted-gradient step; double stochasticity keeps 1'x constant
    up to the injected disturbance."""
    x = state.x
    if not np.all(np.isfinite(x)):
        from .errors import DivergenceError
        raise DivergenceError(f"non-finite state at k={state.k}", iteration=state.k)
    g = costs.gradient(x)
    mix = g - W @ g
    if zeta is not None:
        xn = x + zeta - alpha * mix
    else:
        xn = x - alpha * mix
    return IterateState(x=xn, y=None, k=state.k + 1)


@dataclass
class RunResult:
    """Per-replica residual traces plus run-level diagnostics."""

    traces: dict                      # name -> (R, T+1)
    algorithm: str
    iterations: int
    replicas: int
    seed: int
    x_star: np.ndarray = field(repr=False)
    final_x: np.ndarray = field(repr=False)
    final_y: np.ndarray | None = field(repr=False, default=None)
    diverged: bool = False
    diverged_replica: int | None = None
    diverged_at: int | None = None
    max_conservation_drift: float = float("nan")
    max_mean_recursion_err: float = float("nan")
    max_double_stochastic_err: float = float("nan")
    zeta_total: np.ndarray | None = field(repr=False, default=None)  # (R, u)
    wga_drift_err: float = float("nan")
    states_x: np.ndarray | None = field(repr=False, default=None)
    states_y: np.ndarray | None = field(repr=False, default=None)

    def aggregate_traces(self):
        return {k: _metrics.aggregate(v) for k, v in self.traces.items()}


def run(problem, model, *, algorithm="dta", alpha=None, beta=None,
        iterations, replicas=1, seed=0, x0=None, y0=None, disturbance=None,
        chunk=2048, check_samples=False, record_states=False):
    """Run `replicas` independent chains for `iterations` steps.

    algorithm: "dta" (alpha, beta scalars or per-agent vectors) or
    "wga" (alpha only).  y0 overrides the canonical tracker start x0 - d
    (useful for probing fixed points).  Divergence (non-finite state or
    residual beyond 1e12) stops the run; remaining trace entries stay NaN
    and the replica and iteration are reported on the result instead of
    raising, so sweeps can cross the stability boundary on purpose.
    """
    if algorithm not in ("dta", "wga"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if alpha is None or (algorithm == "dta" and beta is None):
        raise ValueError("stepsizes must be resolved before running")
    n, u = problem.n, problem.u
    costs = problem.costs
    kkt = kkt_solve(problem)
    xs = kkt.x_star
    dsum = problem.demand.sum(axis=0)
    dist = disturbance if disturbance is not None else DisturbanceSpec()
    need_z = dist.active
    scales = dist.scales(iterations, n, u) if need_z else None

    ei = model.edges[:, 0]
    ej = model.edges[:, 1]
    E = model.n_edges
    weights = model.weights
    theta = model.theta
    R = int(replicas)
    T = int(iterations)

    al = _col(alpha, n)
    be = _col(beta, n) if beta is not None else None
    shared_alpha = np.ndim(alpha) == 0
    is_dta = algorithm == "dta"

    # frozen stream protocol: one child per replica, (W, zeta) pair per child
    children = np.random.SeedSequence(seed).spawn(R)
    wstreams, zstreams = [], []
    for child in children:
        sw, sz = child.spawn(2)
        wstreams.append(np.random.default_rng(sw))
        zstreams.append(np.random.default_rng(sz))

    st0 = init_state(problem, x0)
    if y0 is not None:
        st0.y = np.broadcast_to(np.asarray(y0, float), (n, u)).copy()
    x = np.broadcast_to(st0.x, (R, n, u)).copy()
    y = np.broadcast_to(st0.y, (R, n, u)).copy() if is_dta else None

    traces = {name: np.full((R, T + 1), np.nan) for name in _metrics.TRACE_COLUMNS}
    states_x = states_y = None
    if record_states:
        states_x = np.empty((T + 1, R, n, u))
        states_y = np.empty((T + 1, R, n, u)) if is_dta else None

    rows = np.arange(R)[:, None]
    ei_b, ej_b = ei[None, :], ej[None, :]
    av = costs.a if hasattr(costs, "a") else None

    def grad(v):
        if av is not None:
            return 2.0 * av[:, None] * v + costs.b
        return costs.gradient(v)

    def mix_apply(w3, v):
        t = w3 * (v[:, ei, :] - v[:, ej, :])
        out = np.zeros_like(v)
        np.add.at(out, (rows, ei_b), t)
        np.add.at(out, (rows, ej_b), -t)
        return out

    def record(idx):
        dx = x - xs
        opt = np.sqrt((dx * dx).sum(axis=(1, 2)))
        fe = x.sum(axis=1) - dsum
        traces["optimality_distance"][:, idx] = opt
        traces["feasibility_gap"][:, idx] = np.sqrt((fe * fe).sum(axis=-1))
        if is_dta:
            traces["tracking_norm"][:, idx] = np.sqrt((y * y).sum(axis=(1, 2)))
        else:
            traces["tracking_norm"][:, idx] = 0.0
        g = grad(x)
        gd = g - g.mean(axis=1, keepdims=True)
        traces["gradient_dispersion"][:, idx] = np.sqrt((gd * gd).sum(axis=(1, 2)))
        if record_states:
            states_x[idx] = x
            if is_dta:
                states_y[idx] = y
        return opt

    record(0)
    cons_drift = 0.0
    mean_rec_err = 0.0
    ds_err = 0.0
    track_mean_rec = is_dta and shared_alpha and not need_z
    ybar_prev = y.mean(axis=1) if track_mean_rec else None  # (R, u)
    zeta_total = np.zeros((R, u)) if need_z else None

    diverged = False
    div_replica = div_at = None

    with np.errstate(over="ignore", invalid="ignore"):
        done = 0
        while done < T and not diverged:
            L = min(chunk, T - done)
            acts = np.empty((R, L, E), dtype=bool)
            for r in range(R):
                acts[r] = wstreams[r].random((L, E)) < theta
            zbuf = None
            if need_z:
                zbuf = np.empty((R, L, n, u))
                for r in range(R):
                    if dist.kind == "gaussian":
                        zbuf[r] = zstreams[r].standard_normal((L, n, u))
                    elif dist.kind == "laplace":
                        # unit variance to match the gaussian envelope
                        zbuf[r] = zstreams[r].laplace(0.0, 1.0 / np.sqrt(2.0), (L, n, u))
                    else:  # impulse: fixed magnitude, random sign
                        zbuf[r] = np.where(zstreams[r].random((L, n, u)) < 0.5, 1.0, -1.0)
                zbuf *= scales[done:done + L][None, :, None, None]

            for t in range(L):
                k = done + t
                w3 = (weights * acts[:, t, :])[:, :, None]  # (R, E, 1)
                g = grad(x)
                mixg = mix_apply(w3, g)
                z = zbuf[:, t] if need_z else None
                if is_dta:
                    if z is not None:
                        xn = x + z - al * y - be * mixg
                    else:
                        xn = x - al * y - be * mixg
                    mixy = mix_apply(w3, y)
                    y = (y - mixy) + (xn - x)
                    x = xn
                else:
                    if z is not None:
                        x = x + z - alpha * mixg
                    else:
                        x = x - alpha * mixg
                if need_z:
                    zeta_total += z.sum(axis=1)

                opt = record(k + 1)
                bad = ~np.isfinite(opt) | (opt > DIVERGENCE_LIMIT)
                if is_dta:
                    tr = traces["tracking_norm"][:, k + 1]
                    bad |= ~np.isfinite(tr) | (tr > DIVERGENCE_LIMIT)
                if bad.any():
                    diverged = True
                    div_replica = int(np.flatnonzero(bad)[0])
                    div_at = k + 1
                    break

                if is_dta:
                    c = y.sum(axis=1) - (x.sum(axis=1) - dsum)
                    cons_drift = max(cons_drift, float(np.abs(c).max()))
                    if track_mean_rec:
                        ybar = y.mean(axis=1)
                        err = np.abs(ybar - (1.0 - float(alpha)) * ybar_prev)
                        mean_rec_err = max(mean_rec_err, float(err.max()))
                        ybar_prev = ybar
                if check_samples:
                    Wd = np.broadcast_to(np.eye(n), (R, n, n)).copy()
                    wv = weights * acts[:, t, :]
                    np.add.at(Wd, (rows, ei_b, ej_b), wv)
                    np.add.at(Wd, (rows, ej_b, ei_b), wv)
                    np.add.at(Wd, (rows, ei_b, ei_b), -wv)
                    np.add.at(Wd, (rows, ej_b, ej_b), -wv)
                    rs = np.abs(Wd.sum(axis=2) - 1.0).max()
                    cs = np.abs(Wd.sum(axis=1) - 1.0).max()
                    sym = np.abs(Wd - Wd.transpose(0, 2, 1)).max()
                    ds_err = max(ds_err, float(rs), float(cs), float(sym))
                    if Wd.diagonal(axis1=1, axis2=2).min() <= 0:
                        raise ValueError(f"non-positive self-weight in a sample at k={k}")
            done += L

    wga_drift = float("nan")
    if algorithm == "wga" and need_z and not diverged:
        gap = x.sum(axis=1) - dsum       # (R, u)
        wga_drift = float(np.abs(gap - zeta_total).max())

    return RunResult(
        traces=traces,
        algorithm=algorithm,
        iterations=T,
        replicas=R,
        seed=seed,
        x_star=xs,
        final_x=x,
        final_y=y,
        diverged=diverged,
        diverged_replica=div_replica,
        diverged_at=div_at,
        max_conservation_drift=cons_drift if is_dta else float("nan"),
        max_mean_recursion_err=mean_rec_err if track_mean_rec else float("nan"),
        max_double_stochastic_err=ds_err if check_samples else float("nan"),
        zeta_total=zeta_total,
        wga_drift_err=wga_drift,
        states_x=states_x,
        states_y=states_y,
    )
