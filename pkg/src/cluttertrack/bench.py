"""Monte Carlo benchmark harness comparing association engines.

Every method runs the same scenarios through the same Kalman filter; only
the association step differs. Episode seeds are derived from the grid seed
with explicit spawn keys, so serial and parallel execution produce
byte-identical reports and all methods see identical measurement draws.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import __version__ as _toolkit_version
from .assoc import GateParams, hungarian, jpda
from .deepda import LstmModel, forward_scan, load_model
from .domain import (
    Assignment,
    AssocProbabilities,
    ConfigError,
    CostMatrix,
    NumericalError,
    ScenarioConfig,
    ToolkitError,
    Track,
    hard_assignment_from_probs,
)
from .kalman import (
    DEFAULT_INITIAL_COVARIANCE,
    FilterParams,
    predict,
    update_hard,
    update_weighted,
)
from .metrics import OspaParams, ospa, stti, timed
from .scenario import Seed, generate_scans, generate_truth

METHODS = ("ha", "jpda", "deepda")

#: Minimum clutter density handed to JPDA so clutter-free scenarios stay
#: well-defined (assignments then dominate clutter explanations).
MIN_CLUTTER_DENSITY = 1e-12

STTI_RULE = (
    "per ground-truth target, count changes of the claiming track id between "
    "consecutive scans where one is defined; total over targets"
)
GATE_POLICY = (
    "the same ellipsoidal gate is applied to both classic engines (ha cost "
    "exclusion, jpda event enumeration); the learned engine sees all "
    "measurements, as it models gating implicitly"
)


class HaEngine:
    """Gated global-nearest-neighbour assignment with hard updates."""

    name = "ha"
    mode = "hard"

    def __init__(self, params: FilterParams, gp: GateParams):
        self.params = params
        self.gp = gp

    def associate(self, tracks: Sequence[Track], scan) -> Assignment:
        # Batched equivalent of gate() per track: one Mahalanobis statistic
        # matrix over all (track, measurement) pairs via the closed-form
        # 2x2 inverse.
        preds = np.array([t.state[[0, 2]] for t in tracks])
        s = np.array(
            [t.covariance[np.ix_([0, 2], [0, 2])] for t in tracks]
        ) + self.params.r_matrix
        det = s[:, 0, 0] * s[:, 1, 1] - s[:, 0, 1] * s[:, 1, 0]
        if np.any(~np.isfinite(det)) or np.any(np.abs(det) < 1e-12):
            raise NumericalError("singular innovation covariance in gating")
        nu = preds[:, None, :] - scan.measurements[None, :, :]  # (T, M, 2)
        d2 = (
            s[:, 1, 1, None] * nu[:, :, 0] ** 2
            - 2.0 * s[:, 0, 1, None] * nu[:, :, 0] * nu[:, :, 1]
            + s[:, 0, 0, None] * nu[:, :, 1] ** 2
        ) / det[:, None]
        cost = np.sqrt(nu[:, :, 0] ** 2 + nu[:, :, 1] ** 2)
        cost[d2 > self.gp.gamma] = np.inf
        miss = float(
            np.sqrt(self.gp.gamma)
            * np.mean(np.sqrt(np.stack([s[:, 0, 0], s[:, 1, 1]])))
        )
        return hungarian(CostMatrix(cost), miss)


class JpdaEngine:
    """Joint probabilistic data association over gated measurements."""

    name = "jpda"
    mode = "weighted"

    def __init__(self, params: FilterParams, gp: GateParams, p_d: float, clutter_density: float):
        self.params = params
        self.gp = gp
        self.p_d = p_d
        self.clutter_density = max(clutter_density, MIN_CLUTTER_DENSITY)

    def associate(self, tracks: Sequence[Track], scan) -> AssocProbabilities:
        return jpda(tracks, scan, self.params, self.gp, self.p_d, self.clutter_density)


class DeepdaEngine:
    """Learned LSTM association; constant work per scan regardless of clutter."""

    name = "deepda"
    mode = "weighted"

    def __init__(self, model: LstmModel):
        self.model = model

    def associate(self, tracks: Sequence[Track], scan) -> AssocProbabilities:
        return forward_scan(self.model, tracks, scan)[0]


def make_engine(
    method: str,
    config: ScenarioConfig,
    params: FilterParams,
    gp: GateParams,
    model: Optional[LstmModel] = None,
):
    method = method.lower()
    if method == "ha":
        return HaEngine(params, gp)
    if method == "jpda":
        return JpdaEngine(params, gp, config.p_d, config.e_lambda / config.region.area)
    if method == "deepda":
        if model is None:
            raise ConfigError("method deepda requires a model")
        return DeepdaEngine(model)
    raise ConfigError(f"unknown method {method!r}, expected one of {METHODS}")


@dataclass(frozen=True)
class EpisodeResult:
    """Scan-averaged OSPA, identity switch count, and mean association time."""

    ospa_mean: float
    stti: Optional[int]  # None when the scans carry no origin labels
    time_mean_s: float
    scan_ospa: Tuple[float, ...]
    scan_times: Tuple[float, ...]


@dataclass(frozen=True)
class TrackingRun:
    """Episode metrics plus the filtered track states after each scan."""

    result: EpisodeResult
    states: np.ndarray  # (num_scans - 1, num_targets, 4), aligned to scans[1:]


def track_scans(
    initial_states: np.ndarray,
    scans,
    truth_positions: np.ndarray,
    engine,
    params: FilterParams,
    ospa_params: OspaParams,
) -> TrackingRun:
    """Filter a scan list with one engine, scoring against true positions.

    Tracks start from ``initial_states`` at the first scan; every later scan
    is predicted, associated (timed), and updated. Hard engines update
    assigned tracks and let missed ones coast on their prediction; weighted
    engines update every track with its probability row. Identity switches
    come from the hard assignment (probability rows are hardened first).
    """
    initial = np.asarray(initial_states, dtype=float)
    tracks = [Track(j, initial[j], DEFAULT_INITIAL_COVARIANCE) for j in range(len(initial))]

    history: List[Assignment] = []
    scan_ospa: List[float] = []
    scan_times: List[float] = []
    states: List[np.ndarray] = []
    for idx in range(1, len(scans)):
        scan = scans[idx]
        predicted = [predict(t, params) for t in tracks]
        try:
            out, seconds = timed(lambda: engine.associate(predicted, scan))
        except ToolkitError as e:
            raise type(e)(f"scan {scan.k}: {e}") from None
        if engine.mode == "hard":
            assignment: Assignment = out
            tracks = [
                update_hard(t, scan.measurements[assignment.pairs[t.id]], params)
                if t.id in assignment.pairs
                else t
                for t in predicted
            ]
        else:
            probs: AssocProbabilities = out
            tracks = [
                update_weighted(t, scan, probs.rows[i], params)
                for i, t in enumerate(predicted)
            ]
            assignment = hard_assignment_from_probs(probs)
        history.append(assignment)
        scan_times.append(seconds)
        scan_ospa.append(
            ospa(truth_positions[idx], [t.position for t in tracks], ospa_params)
        )
        states.append(np.array([t.state for t in tracks]))

    labeled = all(s.origins is not None for s in scans[1:])
    switches = stti(history, scans[1:]) if labeled else None
    result = EpisodeResult(
        ospa_mean=float(np.mean(scan_ospa)),
        stti=switches,
        time_mean_s=float(np.mean(scan_times)),
        scan_ospa=tuple(scan_ospa),
        scan_times=tuple(scan_times),
    )
    return TrackingRun(result, np.array(states))


def run_episode(
    config: ScenarioConfig,
    method: str,
    model: Optional[LstmModel] = None,
    seed: Optional[Seed] = None,
    filter_params: Optional[FilterParams] = None,
    gate_params: Optional[GateParams] = None,
    ospa_params: Optional[OspaParams] = None,
    engine=None,
) -> EpisodeResult:
    """Simulate one episode and track it with the chosen association engine."""
    if seed is None:
        seed = config.seed
    params = filter_params or FilterParams(dt=config.dt)
    gp = gate_params or GateParams()
    op = ospa_params or OspaParams(c=10.0, p=2.0)
    if engine is None:
        engine = make_engine(method, config, params, gp, model)

    truth = generate_truth(config)
    scans = generate_scans(truth, seed)
    truth_positions = truth.states[:, :, [0, 2]]
    return track_scans(truth.states[0], scans, truth_positions, engine, params, op).result


# ---------------------------------------------------------------------------
# Grid execution
# ---------------------------------------------------------------------------

_BENCH_FIELDS = (
    "base",
    "pd_values",
    "elambda_values",
    "n_runs",
    "methods",
    "model_path",
    "ospa",
    "seed",
)


@dataclass(frozen=True)
class BenchSpec:
    """A sweep over detection probability and clutter rate for some methods."""

    base: ScenarioConfig
    pd_values: Tuple[float, ...]
    elambda_values: Tuple[float, ...]
    n_runs: int = 100
    methods: Tuple[str, ...] = METHODS
    model_path: Optional[str] = None
    ospa: OspaParams = OspaParams(c=10.0, p=2.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pd_values", tuple(float(v) for v in self.pd_values))
        object.__setattr__(self, "elambda_values", tuple(float(v) for v in self.elambda_values))
        methods = tuple(m.lower() for m in self.methods)
        object.__setattr__(self, "methods", methods)
        if self.n_runs < 1:
            raise ConfigError(f"n_runs must be >= 1, got {self.n_runs}")
        if not self.pd_values or not self.elambda_values:
            raise ConfigError("pd_values and elambda_values must be non-empty")
        for m in methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}, expected subset of {METHODS}")
        if "deepda" in methods and not self.model_path:
            raise ConfigError("method deepda requires model_path")

    @staticmethod
    def from_dict(d: Mapping) -> "BenchSpec":
        unknown = set(d) - set(_BENCH_FIELDS)
        if unknown:
            raise ConfigError(f"unknown bench fields: {sorted(unknown)}")
        if "base" not in d:
            raise ConfigError("missing bench field: base")
        ospa_d = d.get("ospa", {"c": 10.0, "p": 2.0})
        extra = set(ospa_d) - {"c", "p"}
        if extra:
            raise ConfigError(f"ospa: unknown fields {sorted(extra)}")
        return BenchSpec(
            base=ScenarioConfig.from_dict(d["base"]),
            pd_values=tuple(d.get("pd_values", [d["base"]["p_d"]])),
            elambda_values=tuple(d.get("elambda_values", [d["base"]["e_lambda"]])),
            n_runs=int(d.get("n_runs", 100)),
            methods=tuple(d.get("methods", METHODS)),
            model_path=d.get("model_path"),
            ospa=OspaParams(float(ospa_d["c"]), float(ospa_d["p"])),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class BenchRow:
    method: str
    p_d: float
    e_lambda: float
    ospa_mean: float
    ospa_std: float
    stti_mean: float
    stti_std: float
    time_mean_s: float


@dataclass(frozen=True)
class RawEpisodeRow:
    method: str
    p_d: float
    e_lambda: float
    run: int
    ospa: float
    stti: int
    time_s: float


@dataclass(frozen=True)
class BenchReport:
    rows: Tuple[BenchRow, ...]
    meta: Dict = field(default_factory=dict)


def _episode_job(payload) -> Tuple[float, int, float]:
    config, method, model, seed, ospa_params = payload
    result = run_episode(config, method, model=model, seed=seed, ospa_params=ospa_params)
    return result.ospa_mean, result.stti, result.time_mean_s


def _report_meta(spec: BenchSpec) -> Dict:
    params = FilterParams(dt=spec.base.dt)
    return {
        "toolkit_version": _toolkit_version,
        "seed": spec.seed,
        "n_runs": spec.n_runs,
        "ospa": {"c": spec.ospa.c, "p": spec.ospa.p},
        "operating_point": {
            "pd_values": list(spec.pd_values),
            "elambda_values": list(spec.elambda_values),
        },
        "toolkit_choices": {
            "kalman_q": params.q,
            "kalman_r_diag": list(params.r_diag),
            "initial_covariance_diag": list(np.diag(DEFAULT_INITIAL_COVARIANCE)),
            "gate_gamma": GateParams().gamma,
            "gate_policy": GATE_POLICY,
            "miss_cost_rule": "sqrt(gamma) * mean innovation std over tracks and axes",
            "stti_rule": STTI_RULE,
            "jpda_clutter_density": "e_lambda / region area",
        },
        "errors": [],
    }


def run_grid(spec: BenchSpec, jobs: int = 1, raw_log=None) -> BenchReport:
    """Run every (method, p_d, e_lambda) cell for n_runs episodes.

    Episode seeds depend only on the grid seed, the (p_d, e_lambda) cell and
    the run index, so all methods see identical measurement draws and
    parallel execution reproduces serial output exactly. A failing episode
    marks its whole cell failed (NaN row) and is recorded in the metadata.
    """
    model = load_model(spec.model_path) if "deepda" in spec.methods else None
    cells = [
        (method, pi, ei)
        for method in spec.methods
        for pi in range(len(spec.pd_values))
        for ei in range(len(spec.elambda_values))
    ]
    payloads = []
    for method, pi, ei in cells:
        config = replace(
            spec.base, p_d=spec.pd_values[pi], e_lambda=spec.elambda_values[ei]
        )
        for run in range(spec.n_runs):
            payloads.append(
                (config, method, model if method == "deepda" else None,
                 (spec.seed, pi, ei, run), spec.ospa)
            )

    meta = _report_meta(spec)
    outcomes: List = []
    if jobs <= 1:
        for payload in payloads:
            try:
                outcomes.append(_episode_job(payload))
            except Exception as e:
                outcomes.append(e)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_episode_job, p) for p in payloads]
            for fut in futures:
                exc = fut.exception()
                outcomes.append(exc if exc is not None else fut.result())

    rows: List[BenchRow] = []
    raw_rows: List[RawEpisodeRow] = []
    for idx, (method, pi, ei) in enumerate(cells):
        p_d, e_lambda = spec.pd_values[pi], spec.elambda_values[ei]
        cell = outcomes[idx * spec.n_runs : (idx + 1) * spec.n_runs]
        failures = [o for o in cell if isinstance(o, Exception)]
        if failures:
            meta["errors"].append(
                {"method": method, "p_d": p_d, "e_lambda": e_lambda, "error": str(failures[0])}
            )
            rows.append(
                BenchRow(method, p_d, e_lambda, *(float("nan"),) * 5)
            )
            continue
        ospas = np.array([o[0] for o in cell])
        sttis = np.array([o[1] for o in cell], dtype=float)
        times = np.array([o[2] for o in cell])
        for run, o in enumerate(cell):
            raw_rows.append(RawEpisodeRow(method, p_d, e_lambda, run, o[0], int(o[1]), o[2]))
        rows.append(
            BenchRow(
                method,
                p_d,
                e_lambda,
                float(ospas.mean()),
                float(ospas.std()),
                float(sttis.mean()),
                float(sttis.std()),
                float(times.mean()),
            )
        )

    if raw_log is not None:
        write_raw_log(raw_rows, raw_log)
    return BenchReport(tuple(rows), meta)


# ---------------------------------------------------------------------------
# Report emission. Floats are written with repr so identical reports are
# byte-identical and parse back exactly.
# ---------------------------------------------------------------------------

REPORT_COLUMNS = (
    "method",
    "p_d",
    "e_lambda",
    "ospa_mean",
    "ospa_std",
    "stti_mean",
    "stti_std",
    "time_mean_s",
)

RAW_LOG_COLUMNS = ("method", "p_d", "e_lambda", "run", "ospa", "stti", "time_s")


def write_raw_log(rows: Sequence[RawEpisodeRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RAW_LOG_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.method, repr(r.p_d), repr(r.e_lambda), r.run, repr(r.ospa), r.stti, repr(r.time_s)]
            )


def emit_report(report: BenchReport, out_dir, formats: Sequence[str] = ("csv", "json")) -> Dict[str, str]:
    """Write report.csv / report.json plus per-figure plot-data CSVs."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths: Dict[str, str] = {}
    if "csv" in formats:
        path = os.path.join(out_dir, "report.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for r in report.rows:
                writer.writerow(
                    [
                        r.method,
                        repr(r.p_d),
                        repr(r.e_lambda),
                        repr(r.ospa_mean),
                        repr(r.ospa_std),
                        repr(r.stti_mean),
                        repr(r.stti_std),
                        repr(r.time_mean_s),
                    ]
                )
        paths["csv"] = path

        for name, key in (("ospa_vs_elambda.csv", "e_lambda"), ("ospa_vs_pd.csv", "p_d")):
            path = os.path.join(out_dir, name)
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["method", "p_d", "e_lambda", "ospa_mean", "ospa_std"])
                ordered = sorted(
                    report.rows, key=lambda r: (r.method, getattr(r, key))
                )
                for r in ordered:
                    writer.writerow(
                        [r.method, repr(r.p_d), repr(r.e_lambda), repr(r.ospa_mean), repr(r.ospa_std)]
                    )
            paths[name] = path

    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        doc = {
            "meta": report.meta,
            "rows": [
                {col: getattr(r, col) for col in REPORT_COLUMNS} for r in report.rows
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
        paths["json"] = path
    return paths


def parse_report_csv(path) -> BenchReport:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(REPORT_COLUMNS):
            raise ConfigError(f"unexpected report.csv header: {header}")
        for row in reader:
            rows.append(
                BenchRow(
                    row[0],
                    float(row[1]),
                    float(row[2]),
                    float(row[3]),
                    float(row[4]),
                    float(row[5]),
                    float(row[6]),
                    float(row[7]),
                )
            )
    return BenchReport(tuple(rows), {})
