"""Model construction, data simulation and replicated runs."""

from __future__ import annotations

import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import streams
from ..errors import DegenerateWeightsError
from ..fixed_window import FwConfig, run_online
from ..models import (
    FiniteHMM,
    LevySVParams,
    LinearGaussianParams,
    levy_simulate,
    levy_sv_model,
    lg_model,
    lg_simulate,
)
from .config import RunConfig
from .io import read_records, read_reference, read_series, write_records, write_series, write_summary

DEFAULT_BLOCKS = {"lg": ((0,), (1,)), "levy": ((0, 1), (2,), (3,)), "finite": ((0,),)}
EXIT_DEGENERATE = 3


def build_model(rc: RunConfig):
    if rc.model == "lg":
        return lg_model(tau0=rc.params.get("tau0", 1.0))
    if rc.model == "levy":
        return levy_sv_model()
    return FiniteHMM()


def true_parameters(rc: RunConfig):
    """Natural-scale parameter vector used for simulation."""
    p = rc.params
    if rc.model == "lg":
        return LinearGaussianParams(tau0=p.get("tau0", 1.0), tau=p.get("tau", 1.0), lam=p.get("lam", 1.0))
    if rc.model == "levy":
        defaults = LevySVParams()
        return LevySVParams(**{k: p.get(k, getattr(defaults, k)) for k in ("kappa", "delta", "gamma", "lam")})
    return p.get("rate", 1.0)


def simulate(rc: RunConfig):
    """``(y, hidden states)`` for ``rc.steps`` observations drawn with ``rc.seed``."""
    rng = np.random.default_rng(rc.seed)
    params = true_parameters(rc)
    if rc.model == "lg":
        x, y = lg_simulate(params, rc.steps, rng)
        return y, x[1:]
    if rc.model == "levy":
        states, y = levy_simulate(params, rc.steps, rng)
        return y, states[1:]
    x, y = FiniteHMM().simulate(params, rc.steps, rng)
    return y, x[1:]


def observations(rc: RunConfig) -> np.ndarray:
    if rc.data is not None:
        return read_series(rc.data)
    return simulate(rc)[0]


def fw_config(rc: RunConfig) -> FwConfig:
    return FwConfig(
        window=rc.window,
        n_theta=rc.n_theta,
        n_x=rc.n_x,
        bandwidth=rc.bandwidth,
        bandwidth_rule=rc.bandwidth_rule_a3,
        ess_threshold=rc.ess_threshold,
        pmmh_sweeps=rc.pmmh_sweeps,
        blocks=DEFAULT_BLOCKS[rc.model],
        bridge_mode=rc.bridge_mode,
        chunk_size=rc.chunk_size,
        predict_samples=rc.predict_samples,
    )


def run_algorithm(rc: RunConfig, model, ys, seed: int, sink=None):
    cfg = fw_config(rc)
    if rc.algo == "smc2fw":
        return run_online(model, ys, cfg, seed, sink)
    return run_online(model, ys, cfg, seed, sink, windowed=False, exact=rc.algo == "kalman-ibis")


@dataclass
class ReplicateResult:
    index: int
    seed: int
    records: list
    error: str | None = None
    seconds: float = 0.0


def replicate_path(out, r: int) -> Path:
    return Path(out) / f"replicate_{r:03d}.csv"


def _run_replicate(rc: RunConfig, model, ys, r: int) -> ReplicateResult:
    seed = rc.seed + r
    records: list = []
    start = _time.perf_counter()
    error = None
    try:
        run_algorithm(rc, model, ys, seed, records.append)
    except DegenerateWeightsError as exc:
        error = f"replicate {r} (seed {seed}) stopped after {len(records)} steps: {exc}"
    result = ReplicateResult(r, seed, records, error, _time.perf_counter() - start)
    write_records(replicate_path(rc.out, r), records, model.param_names)
    return result


def summarize(results, names, reference: dict | None = None) -> list[dict]:
    """Across-replicate mean, sd and (with a reference) bias and MSE of the final estimates."""
    finals = [r.records[-1] for r in results if r.records]
    rows = []
    columns = [(n, [f.theta_mean[k] for f in finals]) for k, n in enumerate(names)]
    columns.append(("state", [f.state_mean for f in finals]))
    for name, values in columns:
        values = np.asarray(values, dtype=float)
        row = {
            "name": name,
            "replicates": int(values.size),
            "mean": float(values.mean()) if values.size else math.nan,
            "sd": float(values.std(ddof=1)) if values.size > 1 else math.nan,
        }
        ref = None if reference is None else reference.get(name)
        row["reference"] = math.nan if ref is None else ref
        row["bias"] = row["mean"] - ref if ref is not None else math.nan
        row["mse"] = float(np.mean((values - ref) ** 2)) if ref is not None and values.size else math.nan
        rows.append(row)
    return rows


def run_experiment(rc: RunConfig, workers: int | None = None) -> int:
    """Run every replicate, write record files and ``summary.csv``; returns an exit code."""
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(rc)
    ys = observations(rc)
    workers = streams.worker_count() if workers is None else workers
    if workers > 1 and rc.replicates > 1:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="replicate") as pool:
            results = list(pool.map(lambda r: _run_replicate(rc, model, ys, r), range(rc.replicates)))
    else:
        results = [_run_replicate(rc, model, ys, r) for r in range(rc.replicates)]
    reference = read_reference(rc.reference) if rc.reference else None
    write_summary(out / "summary.csv", summarize(results, model.param_names, reference))
    errors = [r.error for r in results if r.error]
    if errors:
        (out / "diagnostic.txt").write_text("\n".join(errors) + "\n", encoding="utf-8")
        return EXIT_DEGENERATE
    return 0


def report(out, reference=None) -> list[dict]:
    """Recompute the summary from the replicate files already in ``out``."""
    files = sorted(p for p in Path(out).glob("replicate_*.csv") if not p.stem.endswith("_timing"))
    results, names = [], []
    for i, path in enumerate(files):
        records, names = read_records(path)
        results.append(ReplicateResult(i, i, records))
    ref = read_reference(reference) if reference else None
    return summarize(results, names, ref)


def write_simulation(rc: RunConfig, path) -> None:
    y, states = simulate(rc)
    write_series(path, y, states)
