"""Classic association engines: gated global-nearest-neighbour and JPDA.

The global assignment solver treats a miss as a per-track dummy column with
a configurable cost, so the one-to-one constraints always have a feasible
solution: tracks may go unassigned (missed detection) and measurements may
stay free (clutter).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np

from ._lap import solve_lap
from .domain import (
    Assignment,
    AssocProbabilities,
    ComplexityError,
    ContractViolation,
    CostMatrix,
    NumericalError,
    Scan,
    Track,
)
from .kalman import FilterParams, innovation_covariance, predicted_measurement

#: Joint-event enumeration guard per scan.
MAX_JOINT_EVENTS = 1_000_000


@dataclass(frozen=True)
class GateParams:
    """Ellipsoidal validation gate threshold (chi-square, 2 dof).

    The default 9.21 keeps ~99% of true detections inside the gate.
    """

    gamma: float = 9.21

    def __post_init__(self):
        if not self.gamma > 0:
            raise ContractViolation(f"gamma must be > 0, got {self.gamma}")


def cost_matrix(tracks: Sequence[Track], scan: Scan) -> CostMatrix:
    """Euclidean distances between predicted measurements and measurements."""
    preds = np.array([predicted_measurement(t) for t in tracks]).reshape(len(tracks), 2)
    diff = preds[:, None, :] - scan.measurements[None, :, :]
    return CostMatrix(np.linalg.norm(diff, axis=2))


def hungarian(cost: CostMatrix, miss_cost: float) -> Assignment:
    """Globally optimal assignment with explicit miss handling.

    Leaving a track unassigned costs ``miss_cost``; leaving a measurement
    unassigned costs nothing (clutter). Solved as the square problem of
    augmented size (tracks + measurements): one dummy miss column per track
    plus one zero-cost clutter row per measurement, the textbook O(n^3)
    construction. Ties break toward the lowest measurement index. ``+inf``
    entries are treated as forbidden pairs.
    """
    if not miss_cost > 0:
        raise ContractViolation(f"miss_cost must be > 0, got {miss_cost}")
    v = cost.values
    n, m = v.shape
    if n == 0:
        return Assignment({}, frozenset(), frozenset(range(m)))
    finite = v[np.isfinite(v)]
    top = max(float(finite.max()) if finite.size else 0.0, miss_cost)
    big = (top + 1.0) * (n + 1)
    aug = np.full((n + m, m + n), big)
    aug[:n, :m] = np.where(np.isfinite(v), v, big)
    for j in range(n):
        aug[j, m + j] = miss_cost
    for i in range(m):
        aug[n + i, i] = 0.0
    aug[n:, m:] = 0.0  # leftover clutter rows pair freely with leftover dummies
    # Infinitesimal column bias so exact ties resolve toward the lowest
    # measurement index; far below any meaningful cost difference.
    tie = (top + 1.0) * 1e-12 / (m + n + 1)
    aug[:n, : m + n] += tie * np.arange(m + n)
    cols = solve_lap(aug.tolist())
    pairs: Dict[int, int] = {}
    missed = set()
    for j in range(n):
        c = cols[j]
        if c < m and aug[j, c] < big:
            pairs[j] = c
        else:
            missed.add(j)
    free = frozenset(range(m)) - frozenset(pairs.values())
    return Assignment(pairs, frozenset(missed), free)


def gate(track: Track, scan: Scan, params: FilterParams, gp: GateParams) -> Set[int]:
    """Indices of measurements inside the track's ellipsoidal gate."""
    if scan.num_measurements == 0:
        return set()
    s = innovation_covariance(track, params)
    det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
    if not np.isfinite(det) or abs(det) < 1e-12:
        raise NumericalError(f"track {track.id}: singular innovation covariance")
    nus = scan.measurements - predicted_measurement(track)
    sol = np.linalg.solve(s, nus.T)  # (2, M)
    stats = np.einsum("mi,im->m", nus, sol)
    return set(np.flatnonzero(stats <= gp.gamma).tolist())


def default_miss_cost(tracks: Sequence[Track], params: FilterParams, gp: GateParams) -> float:
    """Distance cost of leaving a track unassigned, coupled to the gate scale.

    sqrt(gamma) times the mean innovation standard deviation over all tracks
    and axes, so the miss penalty tracks the gate radius.
    """
    sigmas = [np.sqrt(np.diag(innovation_covariance(t, params))) for t in tracks]
    return float(np.sqrt(gp.gamma) * np.mean(np.concatenate(sigmas)))


def _gaussian_likelihoods(
    tracks: Sequence[Track], scan: Scan, params: FilterParams
) -> np.ndarray:
    """N(z_i - Hx_j; 0, S_j) for every track j and measurement i."""
    m = scan.num_measurements
    out = np.zeros((len(tracks), m))
    for j, t in enumerate(tracks):
        s = innovation_covariance(t, params)
        det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
        if not np.isfinite(det) or det <= 1e-12:
            raise NumericalError(f"track {t.id}: singular innovation covariance")
        nus = scan.measurements - predicted_measurement(t)
        sol = np.linalg.solve(s, nus.T)
        d2 = np.einsum("mi,im->m", nus, sol)
        out[j] = np.exp(-0.5 * d2) / (2.0 * math.pi * math.sqrt(det))
    return out


def _clusters(gates: Sequence[Set[int]]) -> List[Tuple[List[int], List[int]]]:
    """Connected components of the track-measurement gating graph."""
    meas_to_tracks: Dict[int, List[int]] = {}
    for j, g in enumerate(gates):
        for i in g:
            meas_to_tracks.setdefault(i, []).append(j)
    seen_tracks: Set[int] = set()
    out: List[Tuple[List[int], List[int]]] = []
    for j0 in range(len(gates)):
        if j0 in seen_tracks:
            continue
        tracks_c, meas_c = {j0}, set()
        frontier = [j0]
        while frontier:
            j = frontier.pop()
            for i in gates[j]:
                if i in meas_c:
                    continue
                meas_c.add(i)
                for j2 in meas_to_tracks[i]:
                    if j2 not in tracks_c:
                        tracks_c.add(j2)
                        frontier.append(j2)
        seen_tracks |= tracks_c
        out.append((sorted(tracks_c), sorted(meas_c)))
    return out


def jpda_from_gates(
    likelihood: np.ndarray,
    gates: Sequence[Set[int]],
    p_d: float,
    clutter_density: float,
    max_events: int = MAX_JOINT_EVENTS,
) -> AssocProbabilities:
    """Joint association probabilities for an explicit gating structure.

    ``likelihood[j, i]`` is the measurement likelihood N(nu_ij; 0, S_j).
    Enumerates every joint event consistent with the one-to-one constraints
    over the gated pairs; an event assigning a set A of (track, measurement)
    pairs weighs prod_{A} p_d * likelihood x (1 - p_d) per missed track x
    clutter_density per unassigned measurement. Factors common to all events
    cancel in the normalization, so each assignment contributes
    p_d * likelihood / clutter_density relative to a clutter explanation.

    Raises :class:`ComplexityError` when more than ``max_events`` joint
    events would be enumerated; split the scan into smaller clusters first.
    """
    n, m = likelihood.shape
    if len(gates) != n:
        raise ContractViolation(f"{len(gates)} gate sets for {n} tracks")
    if not (0.0 < p_d <= 1.0):
        raise ContractViolation(f"p_d must be in (0, 1], got {p_d}")
    if not clutter_density > 0:
        raise ContractViolation(f"clutter_density must be > 0, got {clutter_density}")

    rows = np.zeros((n, m + 1))
    rows[:, m] = 1.0  # tracks with empty gates keep all mass on the miss
    miss_w = 1.0 - p_d

    for tracks_c, meas_c in _clusters(gates):
        # Relative weight of assigning measurement i to track j, versus
        # explaining i as clutter.
        ratio = {
            j: [(i, p_d * likelihood[j, i] / clutter_density) for i in sorted(gates[j])]
            for j in tracks_c
        }
        t_count = len(tracks_c)
        assign_mass = np.zeros((t_count, m))
        miss_mass = np.zeros(t_count)
        used: Set[int] = set()
        chosen: List[int] = [-1] * t_count
        counter = [0]

        def enumerate_events(idx: int, weight: float) -> None:
            if idx == t_count:
                counter[0] += 1
                if counter[0] > max_events:
                    raise ComplexityError(
                        f"more than {max_events} joint events in a cluster of "
                        f"{t_count} tracks and {len(meas_c)} measurements; "
                        "split the cluster before enumerating"
                    )
                for t_idx in range(t_count):
                    c = chosen[t_idx]
                    if c >= 0:
                        assign_mass[t_idx, c] += weight
                    else:
                        miss_mass[t_idx] += weight
                return
            j = tracks_c[idx]
            chosen[idx] = -1
            enumerate_events(idx + 1, weight * miss_w)
            for i, w in ratio[j]:
                if i in used:
                    continue
                used.add(i)
                chosen[idx] = i
                enumerate_events(idx + 1, weight * w)
                used.remove(i)
            chosen[idx] = -1

        enumerate_events(0, 1.0)
        total = miss_mass.sum() + assign_mass.sum()
        if total <= 0 or not np.isfinite(total):
            raise NumericalError("joint event weights degenerate (all zero or non-finite)")
        # Row-wise totals are identical by construction; normalize per track.
        for t_idx, j in enumerate(tracks_c):
            row_total = miss_mass[t_idx] + assign_mass[t_idx].sum()
            rows[j, :m] = assign_mass[t_idx] / row_total
            rows[j, m] = miss_mass[t_idx] / row_total
    return AssocProbabilities(rows)


def jpda(
    tracks: Sequence[Track],
    scan: Scan,
    params: FilterParams,
    gp: GateParams,
    p_d: float,
    clutter_density: float,
    max_events: int = MAX_JOINT_EVENTS,
    max_candidates: int = 8,
) -> AssocProbabilities:
    """Joint probabilistic data association over the gated measurements.

    A track whose gate holds more than ``max_candidates`` measurements keeps
    only the nearest ones (by likelihood) for the joint enumeration; this
    bounds the event count near (max_candidates + 1)^num_tracks even when a
    diverged track's gate swallows dozens of clutter points.
    """
    likelihood = _gaussian_likelihoods(tracks, scan, params)
    gates = [gate(t, scan, params, gp) for t in tracks]
    if max_candidates is not None:
        for j, g in enumerate(gates):
            if len(g) > max_candidates:
                best = sorted(g, key=lambda i: -likelihood[j, i])[:max_candidates]
                gates[j] = set(best)
    return jpda_from_gates(likelihood, gates, p_d, clutter_density, max_events)
