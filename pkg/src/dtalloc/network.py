"""Random doubly stochastic mixing matrices from link failures + min-weight negotiation.

Each undirected link (i,j) carries two directed weight proposals w_i^j, w_j^i
and an activation probability theta_ij.  Per round, every link is up
independently with its theta; an active link uses the negotiated weight
min(w_i^j, w_j^i) on both sides, a failed link contributes nothing, and the
diagonal absorbs the leftover mass.  Every realization is symmetric and
doubly stochastic by construction.

Writing B_e = (e_i - e_j)(e_i - e_j)' for edge e (note B_e^2 = 2 B_e),

    W(k) = I - sum_e xi_e(k) m_e B_e,     xi_e ~ Bernoulli(theta_e) indep.

which gives the two closed forms used throughout:

    E{W}   = I - sum_e theta_e m_e B_e
    E{W^2} = E{W}^2 + sum_e 2 theta_e (1-theta_e) m_e^2 B_e
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError

# exact enumeration of E{W^2} walks 2^|E| link patterns
EXACT_ENUM_MAX_EDGES = 20


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """n agents, undirected edges (E,2) with negotiated weights (E,) and
    activation probabilities theta (E,)."""

    n: int
    edges: np.ndarray   # (E, 2) int, i < j
    weights: np.ndarray  # (E,) negotiated min-proposals, > 0
    theta: np.ndarray   # (E,) activation probabilities

    @property
    def n_edges(self):
        return self.edges.shape[0]

    def degree(self):
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def row_load(self):
        """Per-agent sum of incident negotiated weights (all links up)."""
        load = np.zeros(self.n)
        np.add.at(load, self.edges[:, 0], self.weights)
        np.add.at(load, self.edges[:, 1], self.weights)
        return load


@dataclass(frozen=True, eq=False)
class WeightSample:
    """One realized mixing matrix plus the links that were up this round."""

    matrix: np.ndarray        # (n, n)
    active_edges: np.ndarray  # (E,) bool


def _validate(model, allow_zero_theta=False):
    e = model.edges
    if e.ndim != 2 or e.shape[1] != 2:
        raise ValueError("edges must be an (E, 2) array")
    if e.shape[0] == 0 and model.n > 1:
        raise ValueError("a multi-agent model needs at least one edge")
    if np.any(e[:, 0] >= e[:, 1]) or np.any(e < 0) or np.any(e >= model.n):
        raise ValueError("edges must satisfy 0 <= i < j < n")
    pairs = set(map(tuple, e.tolist()))
    if len(pairs) != e.shape[0]:
        raise ValueError("duplicate edges")
    if np.any(model.weights <= 0) or not np.all(np.isfinite(model.weights)):
        raise ValueError("negotiated weights must be finite and > 0")
    lo = 0.0 if allow_zero_theta else np.nextafter(0.0, 1.0)
    if np.any(model.theta < lo) or np.any(model.theta > 1.0):
        raise ValueError("theta must lie in (0, 1] (0 allowed only in sweeps)")
    load = model.row_load()
    if np.any(load >= 1.0):
        bad = int(np.argmax(load))
        raise ValueError(
            f"agent {bad}: incident weights sum to {load[bad]:.6f} >= 1; "
            "self-weight would not stay positive in an all-links-up round"
        )


def build_model(n, edges, weights, theta, allow_zero_theta=False):
    """Assemble and validate a NetworkModel from per-edge data."""
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    # normalize orientation to i < j
    edges = np.sort(edges, axis=1)
    weights = np.broadcast_to(np.asarray(weights, float), (edges.shape[0],)).copy()
    theta = np.broadcast_to(np.asarray(theta, float), (edges.shape[0],)).copy()
    model = NetworkModel(n=int(n), edges=edges, weights=weights, theta=theta)
    _validate(model, allow_zero_theta=allow_zero_theta)
    return model


def from_proposals(proposals, theta, allow_zero_theta=False):
    """Negotiate a model from a directed proposal matrix.

    proposals: (n, n) nonnegative, proposals[i, j] = w_i^j.  An undirected
    edge exists where both directions propose > 0; its weight is the min of
    the two proposals.  theta: scalar or (n, n) symmetric.
    """
    P = np.asarray(proposals, float)
    n = P.shape[0]
    th = np.asarray(theta, float)
    edges, w, t = [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            m = min(P[i, j], P[j, i])
            if m > 0:
                edges.append((i, j))
                w.append(m)
                t.append(float(th[i, j]) if th.ndim == 2 else float(th))
    return build_model(n, edges, w, t, allow_zero_theta=allow_zero_theta)


def metropolis_weights(n, edges):
    """Default proposal rule: w_i^j = 1/(max(deg_i, deg_j) + 1).

    Symmetric, so negotiation is a no-op; guarantees positive self-weights
    on any graph.
    """
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    deg = np.zeros(n, dtype=int)
    np.add.at(deg, edges[:, 0], 1)
    np.add.at(deg, edges[:, 1], 1)
    return 1.0 / (np.maximum(deg[edges[:, 0]], deg[edges[:, 1]]) + 1.0)


def complete_edges(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def ring_edges(n):
    if n == 2:
        return [(0, 1)]
    return [(i, (i + 1) % n) for i in range(n)]


def complete_graph(n, weight=None, theta=1.0):
    edges = complete_edges(n)
    w = metropolis_weights(n, edges) if weight is None else weight
    return build_model(n, edges, w, theta)


def ring_graph(n, weight=None, theta=1.0):
    edges = ring_edges(n)
    w = metropolis_weights(n, edges) if weight is None else weight
    return build_model(n, edges, w, theta)


def _assemble(n, edges, w):
    """Dense symmetric matrix I - sum_e w_e B_e."""
    W = np.eye(n)
    ei, ej = edges[:, 0], edges[:, 1]
    W[ei, ej] += w
    W[ej, ei] += w
    np.add.at(W, (ei, ei), -w)
    np.add.at(W, (ej, ej), -w)
    return W


def negotiate_weights(model, active):
    """Realized WeightSample for a given set of active links."""
    active = np.asarray(active, bool)
    w = np.where(active, model.weights, 0.0)
    return WeightSample(matrix=_assemble(model.n, model.edges, w), active_edges=active)


def sample(model, rng):
    """Draw one W(k): each link up independently with its theta."""
    active = rng.random(model.n_edges) < model.theta
    return negotiate_weights(model, active)


def sample_batch(model, rng, size):
    """Vectorized draws: (size, n, n) matrices + (size, E) activation mask."""
    acts = rng.random((size, model.n_edges)) < model.theta
    w = np.where(acts, model.weights, 0.0)  # (size, E)
    n = model.n
    ei, ej = model.edges[:, 0], model.edges[:, 1]
    W = np.broadcast_to(np.eye(n), (size, n, n)).copy()
    rows = np.arange(size)[:, None]
    np.add.at(W, (rows, ei[None, :], ej[None, :]), w)
    np.add.at(W, (rows, ej[None, :], ei[None, :]), w)
    np.add.at(W, (rows, ei[None, :], ei[None, :]), -w)
    np.add.at(W, (rows, ej[None, :], ej[None, :]), -w)
    return W, acts


def expected_weight_matrix(model):
    return _assemble(model.n, model.edges, model.theta * model.weights)


def expected_square_matrix(model, mode="closed", rng=None, samples=100_000):
    """E{W(k)^2} under independent link activations.

    mode="closed": algebraic identity E{W}^2 + sum_e 2 theta(1-theta) m^2 B_e
                   (exact for independent links, any edge count).
    mode="exact":  brute-force enumeration of all 2^|E| activation patterns;
                   refuses beyond EXACT_ENUM_MAX_EDGES edges.
    mode="monte-carlo": average W^2 over `samples` draws from `rng`.
    """
    n = model.n
    if mode == "closed":
        EW = expected_weight_matrix(model)
        EW2 = EW @ EW
        ei, ej = model.edges[:, 0], model.edges[:, 1]
        corr = 2.0 * model.theta * (1.0 - model.theta) * model.weights**2
        EW2[ei, ej] -= corr
        EW2[ej, ei] -= corr
        np.add.at(EW2, (ei, ei), corr)
        np.add.at(EW2, (ej, ej), corr)
        return EW2
    if mode == "exact":
        E = model.n_edges
        if E > EXACT_ENUM_MAX_EDGES:
            raise CapacityError(
                f"exact enumeration over 2^{E} activation patterns exceeds the "
                f"{EXACT_ENUM_MAX_EDGES}-edge limit; use mode='monte-carlo'"
            )
        out = np.zeros((n, n))
        for pattern in itertools.product((False, True), repeat=E):
            up = np.array(pattern, bool)
            p = np.prod(np.where(up, model.theta, 1.0 - model.theta))
            if p == 0.0:
                continue
            W = _assemble(n, model.edges, np.where(up, model.weights, 0.0))
            out += p * (W @ W)
        return out
    if mode == "monte-carlo":
        if rng is None:
            raise ValueError("monte-carlo mode needs an rng")
        out = np.zeros((n, n))
        done = 0
        while done < samples:
            batch = min(20_000, samples - done)
            W, _ = sample_batch(model, rng, batch)
            out += np.einsum("sij,sjk->ik", W, W)
            done += batch
        return out / samples
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class SpectralReport:
    """Eigen-summary of E{W} and E{W^2} plus the certified realization floor.

    lambda2_mean / lambdan_mean: second-largest / smallest eigenvalue of E{W}.
    lambda2_sq: second-largest eigenvalue of E{W^2}.
    lambdan_floor: Gershgorin lower bound on the smallest eigenvalue of any
        realization (all links up is the worst case), 1 - 2 max_i sum_j m_ij.
    rho_mean_gap / rho_sq_gap: spectral radius of E{W} - J and E{W^2} - J
        where J = 11'/n; connected in mean iff rho_mean_gap < 1.
    """

    n: int
    lambda2_mean: float
    lambdan_mean: float
    lambda2_sq: float
    lambdan_floor: float
    rho_mean_gap: float
    rho_sq_gap: float

    @property
    def connected_in_mean(self):
        return self.rho_mean_gap < 1.0 - 1e-12


def spectral_report(model):
    n = model.n
    if n == 1:
        # single agent: no second eigenvalue; gaps are trivially closed
        return SpectralReport(1, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    EW = expected_weight_matrix(model)
    EW2 = expected_square_matrix(model, mode="closed")
    lam = np.sort(np.linalg.eigvalsh(EW))[::-1]
    lam_sq = np.sort(np.linalg.eigvalsh(EW2))[::-1]
    lam2e, lamne = float(lam[1]), float(lam[-1])
    lam2s = float(lam_sq[1])
    floor = max(1.0 - 2.0 * float(model.row_load().max()), -1.0 + 1e-12)
    rho_mean = max(abs(lam2e), abs(lamne))
    rho_sq = max(abs(lam2s), abs(float(lam_sq[-1])))  # E{W^2} is PSD; |.| for safety
    return SpectralReport(
        n=n,
        lambda2_mean=lam2e,
        lambdan_mean=lamne,
        lambda2_sq=lam2s,
        lambdan_floor=floor,
        rho_mean_gap=rho_mean,
        rho_sq_gap=rho_sq,
    )
