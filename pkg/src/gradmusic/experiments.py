"""Error-scaling experiment: noise growth exponents versus aperture.

For each aperture m and noise growth exponent r, a fixed well-separated
configuration is observed under σ(x) = σ0 (1 + |x|)^r Gaussian noise over
independent trials; the requested percentile of the matching error per cell
and the log-log slope of each r-series operationalize the expected rates
(m^{-5/2}, m^{-2}, m^{-3/2} for r = -1/2, 0, 1/2 in d = 2).
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
import numpy as np

from . import __version__
from .geometry import Domain
from .kernels import KernelGeometry, default_tau
from .recovery import PipelineOptions, run_gradient_music
from .signal import (NoiseModel, SampleSet, cube_sample_sites,
                     random_separated_config, sample_noise, synthesize)


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    d: int = 2
    m_list: tuple = (8, 16, 32, 64)
    s: int = 16
    delta_min: float = 0.125
    amp_law: str = "pm1"
    sigma0: float = 0.05
    r_list: tuple = (-0.5, 0.0, 0.5)
    trials: int = 10
    percentile: float = 90.0
    base_seed: int = 2024
    real_valued_noise: bool = False
    resample_per_cell: bool = False
    mesh_kappa: float = 2.0
    noise_scale_hint: float = 1e-6
    svd_tol: float = 1e-7
    svd_loose_tol: float = 1e-3
    order_ratio_threshold: float = 0.1
    threads: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ExperimentError("trials must be >= 1")
        if not (0 < self.percentile <= 100):
            raise ExperimentError("percentile must lie in (0, 100]")
        self.m_list = tuple(int(m) for m in self.m_list)
        self.r_list = tuple(float(r) for r in self.r_list)

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(obj: dict) -> "ExperimentSpec":
        known = {f for f in ExperimentSpec.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ExperimentError(f"unknown experiment fields: {sorted(unknown)}")
        return ExperimentSpec(**obj)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ResultTable:
    spec: ExperimentSpec
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    slopes: list = field(default_factory=list)
    configs: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def metadata(self) -> dict:
        return {
            "version": __version__,
            "seed": self.spec.base_seed,
            "config_hash": self.spec.config_hash(),
        }

    def raw_csv(self) -> str:
        # wall times stay in report.json so the CSV is byte-reproducible
        buf = io.StringIO()
        _write_metadata(buf, self.metadata())
        buf.write("m,r,trial,seed,error,matvec_calls,matvec_work,flags\n")
        for row in self.rows:
            flags = ";".join(row["flags"]).replace(",", ";")
            buf.write(f"{row['m']},{row['r']!r},{row['trial']},{row['seed']},"
                      f"{row['error']!r},"
                      f"{row['matvec_calls']},{row['matvec_work']},{flags}\n")
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        _write_metadata(buf, self.metadata())
        buf.write("kind,m,r,percentile,value,n_ok,n_failed\n")
        for cell in self.summary:
            buf.write(f"cell,{cell['m']},{cell['r']!r},{self.spec.percentile!r},"
                      f"{cell['percentile_error']!r},{cell['n_ok']},"
                      f"{cell['n_failed']}\n")
        for sl in self.slopes:
            value = "" if sl["slope"] is None else repr(sl["slope"])
            buf.write(f"slope,,{sl['r']!r},,{value},,\n")
        return buf.getvalue()

    def report_json(self) -> dict:
        return {
            "metadata": self.metadata(),
            "spec": self.spec.to_json(),
            "summary": self.summary,
            "slopes": self.slopes,
            "rows": self.rows,
            "wall_time": self.wall_time,
        }


def _write_metadata(buf, meta: dict):
    for key in sorted(meta):
        buf.write(f"# {key}={meta[key]}\n")


def _fit_slope(ms, errors):
    logm = np.log(np.asarray(ms, dtype=float))
    loge = np.log(np.asarray(errors, dtype=float))
    slope, intercept = np.polyfit(logm, loge, 1)
    return float(slope), float(intercept)


def run_experiment(spec: ExperimentSpec, progress: bool = False) -> ResultTable:
    """Run every (m, r) cell of the spec; deterministic given the base seed."""
    t_start = time.perf_counter()
    domain = Domain("torus", spec.d)
    table = ResultTable(spec=spec)
    base_config = None
    if not spec.resample_per_cell:
        base_config = random_separated_config(
            spec.s, spec.delta_min, spec.amp_law, domain, seed=spec.base_seed)
        table.configs["shared"] = base_config.to_json()

    for r in spec.r_list:
        for m in spec.m_list:
            cell_t0 = time.perf_counter()
            if spec.resample_per_cell:
                config = random_separated_config(
                    spec.s, spec.delta_min, spec.amp_law, domain,
                    seed=spec.base_seed + 7919 * spec.m_list.index(m))
                table.configs[f"m={m},r={r}"] = config.to_json()
            else:
                config = base_config
            geom = KernelGeometry("cube", m, spec.d)
            sites = cube_sample_sites(geom)
            clean = synthesize(config, sites)
            noise_model = NoiseModel(kind="gaussian", sigma0=spec.sigma0, r=r,
                                     real_valued=spec.real_valued_noise)
            options = PipelineOptions(
                s_hint=spec.s,
                order_ratio_threshold=spec.order_ratio_threshold,
                svd_tol=spec.svd_tol,
                svd_loose_tol=spec.svd_loose_tol,
                mesh_kappa=spec.mesh_kappa,
                noise_scale_hint=spec.noise_scale_hint,
            )
            def one_trial(trial):
                seed = spec.base_seed + trial
                t0 = time.perf_counter()
                row = {"m": m, "r": r, "trial": trial, "seed": seed,
                       "error": math.nan, "seconds": 0.0,
                       "matvec_calls": 0, "matvec_work": 0, "flags": []}
                try:
                    eta = sample_noise(noise_model, sites, seed)
                    samples = SampleSet(geometry=geom, values=clean + eta)
                    report = run_gradient_music(samples, options, truth=config)
                    if report.matching_error is None:
                        raise ExperimentError(
                            f"no matching error: flags={report.flags}")
                    row["error"] = report.matching_error
                    row["matvec_calls"] = report.matvec_calls
                    row["matvec_work"] = report.matvec_work
                    row["flags"] = list(report.flags)
                except Exception as exc:
                    row["flags"] = [f"FAILED: {exc}"]
                row["seconds"] = time.perf_counter() - t0
                return row

            if spec.threads > 1:
                from concurrent.futures import ThreadPoolExecutor
                with ThreadPoolExecutor(max_workers=spec.threads) as pool:
                    rows = list(pool.map(one_trial, range(spec.trials)))
            else:
                rows = [one_trial(t) for t in range(spec.trials)]
            errors = [row["error"] for row in rows
                      if not any(f.startswith("FAILED") for f in row["flags"])]
            n_failed = spec.trials - len(errors)
            table.rows.extend(rows)
            cell = {
                "m": m, "r": r,
                "percentile_error": (float(np.percentile(errors, spec.percentile))
                                     if errors else math.nan),
                "n_ok": len(errors),
                "n_failed": n_failed,
                "complete": n_failed == 0,
                "seconds": time.perf_counter() - cell_t0,
            }
            table.summary.append(cell)
            if progress:
                print(f"cell m={m} r={r}: "
                      f"{spec.percentile:g}th pct error = "
                      f"{cell['percentile_error']:.3e} "
                      f"({cell['seconds']:.1f}s)", flush=True)

    for r in spec.r_list:
        cells = [c for c in table.summary
                 if c["r"] == r and c["complete"] and c["n_ok"] > 0]
        cells.sort(key=lambda c: c["m"])
        note = ""
        excluded = []
        if cells and all(c["percentile_error"] < 1e-10 for c in cells):
            table.slopes.append({"r": r, "slope": None, "intercept": None,
                                 "excluded_m": [],
                                 "note": "degenerate (noiseless-level errors)"})
            continue
        if cells:
            smallest = cells[0]
            geom = KernelGeometry("cube", smallest["m"], spec.d)
            if smallest["percentile_error"] > default_tau(geom):
                excluded.append(smallest["m"])
                cells = cells[1:]
                note = "smallest m excluded: error above basin radius"
        if len(cells) < 2:
            table.slopes.append({"r": r, "slope": None, "intercept": None,
                                 "excluded_m": excluded,
                                 "note": note or "not enough cells for a fit"})
            continue
        slope, intercept = _fit_slope([c["m"] for c in cells],
                                      [c["percentile_error"] for c in cells])
        table.slopes.append({"r": r, "slope": slope, "intercept": intercept,
                             "excluded_m": excluded, "note": note})
    table.wall_time = time.perf_counter() - t_start
    return table
