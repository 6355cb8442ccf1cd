"""Tracking performance metrics: OSPA distance, identity switches, timing."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from .assoc import hungarian
from .domain import CLUTTER, Assignment, ContractViolation, CostMatrix, Scan

T = TypeVar("T")


@dataclass(frozen=True)
class OspaParams:
    """Cutoff distance c (m) and order p of the OSPA metric."""

    c: float
    p: float

    def __post_init__(self):
        if not self.c > 0:
            raise ContractViolation(f"c must be > 0, got {self.c}")
        if not self.p >= 1:
            raise ContractViolation(f"p must be >= 1, got {self.p}")


def ospa(
    truth_positions: Sequence[Sequence[float]],
    est_positions: Sequence[Sequence[float]],
    params: OspaParams,
) -> float:
    """Optimal sub-pattern assignment distance between two 2-D point sets.

    With m <= n points: [(1/n)(min over injections of sum d_c^p + (n-m)c^p)]^(1/p)
    where d_c = min(c, euclidean distance); arguments swap when m > n. The
    inner minimization is solved exactly with the assignment solver.
    """
    a = np.asarray(truth_positions, dtype=float).reshape(-1, 2)
    b = np.asarray(est_positions, dtype=float).reshape(-1, 2)
    if a.shape[0] > b.shape[0]:
        a, b = b, a
    m, n = a.shape[0], b.shape[0]
    if n == 0:
        return 0.0
    c_p = params.c**params.p
    if m == 0:
        return params.c
    dists = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    d = np.minimum(dists, params.c) ** params.p
    # All entries are <= c^p < miss cost, so every row gets assigned.
    assignment = hungarian(CostMatrix(d), miss_cost=c_p + 1.0)
    match_cost = sum(d[j, i] for j, i in assignment.pairs.items())
    return float(((match_cost + (n - m) * c_p) / n) ** (1.0 / params.p))


def _claimed_track_ids(
    assignment_history: Sequence[Assignment], scans: Sequence[Scan]
) -> Dict[int, List[Optional[int]]]:
    """Per ground-truth target, the track id claiming it at each scan.

    None where the target was undetected or its measurement unassigned.
    """
    if len(assignment_history) != len(scans):
        raise ContractViolation(
            f"{len(assignment_history)} assignments for {len(scans)} scans"
        )
    targets: set = set()
    for scan in scans:
        if scan.origins is None:
            raise ContractViolation(f"scan {scan.k} carries no origin labels")
        targets.update(o for o in scan.origins if o != CLUTTER)

    claimed: Dict[int, List[Optional[int]]] = {g: [] for g in sorted(targets)}
    for assignment, scan in zip(assignment_history, scans):
        meas_to_track = {i: j for j, i in assignment.pairs.items()}
        origin_to_meas = {o: i for i, o in enumerate(scan.origins) if o != CLUTTER}
        for g in claimed:
            i = origin_to_meas.get(g)
            claimed[g].append(meas_to_track.get(i) if i is not None else None)
    return claimed


def stti(assignment_history: Sequence[Assignment], scans: Sequence[Scan]) -> int:
    """Switch count of claimed track identities over an episode.

    For each ground-truth target, a switch is counted whenever the claiming
    track id differs between the two nearest scans where one is defined;
    scans where the target is undetected or unassigned are skipped. The
    total over all targets is returned.
    """
    switches = 0
    for seq in _claimed_track_ids(assignment_history, scans).values():
        defined = [t for t in seq if t is not None]
        switches += sum(1 for prev, cur in zip(defined, defined[1:]) if prev != cur)
    return switches


def timed(op: Callable[[], T]) -> Tuple[T, float]:
    """Run ``op`` and return its result with wall-clock seconds elapsed."""
    start = time.perf_counter()
    result = op()
    return result, time.perf_counter() - start
