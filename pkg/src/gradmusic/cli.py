"""Command-line front end.

Subcommands: synth (write samples), estimate (run the pipeline on a sample
file), landscape (dump grid values and diagnostics), verify (run the audit
suites), experiment (run an error-scaling spec), minimax (emit an adversarial
pair).  All outputs are CSV/JSON with a metadata header carrying the package
version, seed and config hash.  Exit codes: 0 success, 2 malformed
config/usage, 3 numeric audit failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import ExperimentSpec, run_experiment
from .geometry import Domain, make_uniform_grid
from .hankel import (build_hankel, detect_model_order, exact_basis,
                     noise_norm_bound, subspace_distance, truncated_svd,
                     wedin_audit)
from .kernels import (KernelGeometry, config_quantities, default_tau,
                      kernel_bound_audit, kernel_quantities)
from .landscape import (DEFAULT_DELTAS, MusicEvaluator, check_admissibility,
                        grid_evaluate)
from .minimax import adversarial_pair, estimator_stress
from .recovery import PipelineOptions, run_gradient_music
from .signal import (NoiseModel, ParameterConfig, SampleSet, observe,
                     random_separated_config)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_AUDIT = 3


class ConfigError(ValueError):
    pass


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _hash_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _metadata(seed, config_obj) -> dict:
    return {"version": __version__, "seed": seed, "config_hash": _hash_obj(config_obj)}


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv_header(meta: dict) -> str:
    return "".join(f"# {k}={meta[k]}\n" for k in sorted(meta))


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _truth_from_config(obj, domain: Domain, seed: int) -> ParameterConfig:
    if "random" in obj:
        spec = obj["random"]
        return random_separated_config(
            int(spec["s"]), float(spec["delta_min"]),
            spec.get("amp_law", "unit"), domain,
            seed=int(spec.get("seed", seed)))
    return ParameterConfig.from_json({**obj, "domain": domain.to_json()})


# ---------------------------------------------------------------------------
# subcommands

def _cmd_synth(args):
    args.seed = 0 if args.seed is None else args.seed
    cfg = _load_json(args.config)
    geom = KernelGeometry.from_json(cfg["geometry"])
    if geom.kind != "cube":
        raise ConfigError("synth writes lattice samples; geometry must be cube")
    domain = geom.default_domain()
    truth = _truth_from_config(cfg["truth"], domain, args.seed)
    noise = NoiseModel.from_json(cfg.get("noise", {"kind": "none"}))
    samples = observe(truth, geom, noise, seed=args.seed)
    meta = _metadata(args.seed, cfg)
    out = _outdir(args)
    _write_json(out / "samples.json", {
        "metadata": meta,
        "geometry": geom.to_json(),
        "values_re": samples.values.real.tolist(),
        "values_im": samples.values.imag.tolist(),
        "truth": truth.to_json(),
        "noise": noise.to_json(),
    })
    lines = [_csv_header(meta)]
    lines.append(",".join(f"x{j+1}" for j in range(geom.d)) + ",re,im\n")
    for site, val in zip(samples.sites, samples.values):
        coords = ",".join(repr(float(c)) for c in site)
        lines.append(f"{coords},{val.real!r},{val.imag!r}\n")
    (out / "samples.csv").write_text("".join(lines))
    print(f"wrote {out / 'samples.json'} ({samples.values.size} samples)")
    return EXIT_OK


def _load_samples(path):
    obj = _load_json(path)
    geom = KernelGeometry.from_json(obj["geometry"])
    values = np.asarray(obj["values_re"], dtype=float) \
        + 1j * np.asarray(obj["values_im"], dtype=float)
    truth = None
    if obj.get("truth"):
        truth = ParameterConfig.from_json(obj["truth"])
    return SampleSet(geometry=geom, values=values), truth, obj


def _pipeline_options(cfg: dict, seed: int) -> PipelineOptions:
    known = set(PipelineOptions.__dataclass_fields__)
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown pipeline options: {sorted(unknown)}")
    options = PipelineOptions(**cfg)
    options.svd_seed = seed
    return options


def _cmd_estimate(args):
    args.seed = 0 if args.seed is None else args.seed
    samples, truth, raw = _load_samples(args.samples)
    cfg = _load_json(args.config) if args.config else {}
    options = _pipeline_options(cfg, args.seed)
    options.record_trajectories = args.dump_trajectories
    report = run_gradient_music(samples, options, truth=truth)
    meta = _metadata(args.seed, {"samples": raw.get("metadata", {}), "options": cfg})
    out = _outdir(args)
    _write_json(out / "report.json", {"metadata": meta, **report.to_json()})
    lines = [_csv_header(meta)]
    d = samples.geometry.d
    lines.append(",".join(f"theta{j+1}" for j in range(d)) + ",amp_re,amp_im\n")
    amps = report.amplitudes
    for i, est in enumerate(report.estimates):
        coords = ",".join(repr(float(c)) for c in est)
        a = amps[i] if amps is not None and i < len(amps) else complex("nan")
        lines.append(f"{coords},{a.real!r},{a.imag!r}\n")
    (out / "estimates.csv").write_text("".join(lines))
    if args.dump_trajectories and report.trajectories:
        lines = [_csv_header(meta), "cluster,step," +
                 ",".join(f"theta{j+1}" for j in range(d)) + ",value\n"]
        for ci, (traj, vals) in enumerate(zip(report.trajectories,
                                              report.descent_values)):
            for si, (pt, val) in enumerate(zip(traj, vals)):
                coords = ",".join(repr(float(c)) for c in pt)
                lines.append(f"{ci},{si},{coords},{val!r}\n")
        (out / "trajectories.csv").write_text("".join(lines))
    err = report.matching_error
    print(f"detected order {report.detected_order}; "
          + (f"matching error {err:.3e}" if err is not None else "no truth"))
    return EXIT_OK


def _cmd_landscape(args):
    args.seed = 0 if args.seed is None else args.seed
    samples, truth, raw = _load_samples(args.samples)
    cfg = _load_json(args.config) if args.config else {}
    options = _pipeline_options(cfg, args.seed)
    geom = samples.geometry
    op = build_hankel(samples)
    s_exp = options.s_hint if options.s_hint else 8
    k = min(2 * s_exp + 4, op.n)
    if options.s_hint:
        strict_kwargs = {"n_strict": min(k, options.s_hint)}
    else:
        strict_kwargs = {"strict_above_ratio": options.order_ratio_threshold}
    spectrum = truncated_svd(op, k, tol=options.svd_tol, seed=options.svd_seed,
                             loose_tol=options.svd_loose_tol,
                             block_size=min(s_exp + 4, op.n), **strict_kwargs)
    dim = options.s_hint or detect_model_order(spectrum,
                                               options.order_ratio_threshold)
    ev = MusicEvaluator.from_basis(spectrum.left_block(dim))
    grid = make_uniform_grid(geom.default_domain(),
                             options.mesh_kappa * default_tau(geom))
    values = grid_evaluate(ev, grid)
    meta = _metadata(args.seed, {"samples": raw.get("metadata", {}), "options": cfg})
    out = _outdir(args)
    diagnostics = {
        "metadata": meta,
        "kernel": kernel_quantities(geom).to_json(),
        "grid": grid.to_json(),
        "subspace_dim": dim,
        "singular_values": spectrum.values.tolist(),
    }
    if truth is not None:
        cfg_q = config_quantities(truth.theta, geom)
        proj = subspace_distance(exact_basis(truth.theta, geom),
                                 spectrum.left_block(dim))
        d1, d2 = DEFAULT_DELTAS[geom.kind]
        cert = check_admissibility(kernel_quantities(geom), cfg_q, proj, d1, d2)
        diagnostics["config"] = cfg_q.to_json()
        diagnostics["projection_distance"] = proj
        diagnostics["certificate"] = cert.to_json()
    _write_json(out / "landscape.json", diagnostics)
    lines = [_csv_header(meta)]
    d = geom.d
    lines.append(",".join(f"omega{j+1}" for j in range(d)) + ",q\n")
    for pt, val in zip(grid.points, values):
        coords = ",".join(repr(float(c)) for c in pt)
        lines.append(f"{coords},{val!r}\n")
    (out / "contour.csv").write_text("".join(lines))
    print(f"wrote landscape grid ({grid.size} nodes) and diagnostics")
    return EXIT_OK


def _cmd_verify(args):
    args.seed = 0 if args.seed is None else args.seed
    checks = []
    rng = np.random.default_rng(args.seed)
    for kind, m, d in [("cube", 4, 1), ("cube", 5, 2), ("cube", 2, 3),
                       ("ball", 4.0, 1), ("ball", 5.0, 2), ("ball", 2.0, 3)]:
        geom = KernelGeometry(kind, m, d)
        audit = kernel_bound_audit(geom, default_tau(geom), seed=args.seed)
        checks.append({"name": f"kernel_bounds[{kind},m={m},d={d}]",
                       "pass": audit["pass"], "detail": audit})
        tail = kernel_quantities(geom).tail_sup
        checks.append({"name": f"tail_sup<1[{kind},m={m},d={d}]",
                       "pass": bool(tail < 1.0), "detail": {"tail_sup": tail}})
    # eigenvalue bounds for well-separated cube configs
    for trial in range(5):
        d = 2
        beta = 32 * math.pi * math.sqrt(d)
        delta = 0.25 + 0.2 * rng.uniform()
        m = int(math.ceil(beta / delta))
        geom = KernelGeometry("cube", m, d)
        config = random_separated_config(3, delta, "unit", Domain("torus", d),
                                         seed=args.seed + trial)
        from .kernels import kernel_matrix as kmat
        eigs = np.linalg.eigvalsh(kmat(config.theta, geom))
        beta_eff = geom.m * config.separation()
        margin = d ** 1.5 / beta_eff
        ok = bool(1 - margin <= eigs[0] and eigs[-1] <= 1 + margin)
        checks.append({"name": f"eigen_bounds[trial={trial}]", "pass": ok,
                       "detail": {"lambda_min": float(eigs[0]),
                                  "lambda_max": float(eigs[-1]),
                                  "margin": margin}})
    # Wedin and noise-norm audits on a small noisy instance
    geom = KernelGeometry("cube", 3, 2)
    domain = Domain("torus", 2)
    config = random_separated_config(2, 0.3, "unit", domain, seed=args.seed)
    clean = observe(config, geom, NoiseModel(), seed=0)
    noise = observe(config, geom, NoiseModel(kind="gaussian", sigma0=0.05),
                    seed=args.seed)
    eta = SampleSet(geometry=geom, values=noise.values - clean.values)
    wa = wedin_audit(clean, eta, s=2)
    ok = (not wa.get("skipped", True)) and wa["matrix_bound_holds"] \
        and wa["wedin_bound_holds"]
    checks.append({"name": "wedin_audit", "pass": bool(ok), "detail": wa})
    for p in (1, 2, math.inf):
        nb = noise_norm_bound(eta, p)
        checks.append({"name": f"noise_norm_bound[p={p}]", "pass": nb["holds"],
                       "detail": {k: v for k, v in nb.items() if k != "p"}})
    all_pass = all(c["pass"] for c in checks)
    meta = _metadata(args.seed, {"verify": True})
    out = _outdir(args)
    _write_json(out / "verify.json",
                {"metadata": meta, "pass": all_pass, "checks": checks})
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}")
    return EXIT_OK if all_pass else EXIT_AUDIT


def _cmd_experiment(args):
    cfg = _load_json(args.config)
    spec = ExperimentSpec.from_json(cfg)
    if args.seed is not None:
        spec.base_seed = args.seed
    if args.threads and args.threads > 1:
        spec.threads = args.threads
    table = run_experiment(spec, progress=True)
    out = _outdir(args)
    (out / "raw.csv").write_text(table.raw_csv())
    (out / "summary.csv").write_text(table.summary_csv())
    _write_json(out / "report.json", table.report_json())
    for sl in table.slopes:
        print(f"r={sl['r']}: slope="
              + (f"{sl['slope']:.3f}" if sl["slope"] is not None else "n/a")
              + (f"  ({sl['note']})" if sl["note"] else ""))
    return EXIT_OK


def _cmd_minimax(args):
    args.seed = 0 if args.seed is None else args.seed
    cfg = _load_json(args.config)
    pair = adversarial_pair(
        s=int(cfg["s"]), beta=float(cfg.get("beta", 1.0)), m=int(cfg["m"]),
        d=int(cfg["d"]), p=(math.inf if cfg.get("p") in ("inf", None)
                            else float(cfg["p"])),
        epsilon=float(cfg["epsilon"]), c_d=cfg.get("c_d"),
        geometry=cfg.get("geometry", "cube"))
    meta = _metadata(args.seed, cfg)
    out = _outdir(args)
    _write_json(out / "pair.json", {"metadata": meta, **pair.to_json()})
    lines = [_csv_header(meta)]
    d = pair.geometry.d
    lines.append(",".join(f"x{j+1}" for j in range(d)) + ",eta_re,eta_im\n")
    for site, val in zip(pair.sites, pair.eta):
        coords = ",".join(repr(float(c)) for c in site)
        lines.append(f"{coords},{val.real!r},{val.imag!r}\n")
    (out / "noise.csv").write_text("".join(lines))
    result = {"metadata": meta, "pair": pair.to_json()}
    if pair.geometry.kind == "cube" and not args.no_stress:
        options = PipelineOptions(s_hint=pair.config.s)

        def pipeline(samples):
            return run_gradient_music(samples, options).estimates

        result["stress"] = estimator_stress(pair, pipeline)
        print(f"stress: max error {result['stress']['max_error']:.3e} "
              f">= half gap {result['stress']['half_gap']:.3e}: "
              f"{result['stress']['bound_holds']}")
    _write_json(out / "stress.json", result)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradmusic",
        description="Gradient-MUSIC frequency recovery toolbox")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=False, needs_samples=False):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config path")
        else:
            p.add_argument("--config", default=None, help="JSON config path")
        if needs_samples:
            p.add_argument("--samples", required=True, help="samples.json path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--dump-grid", action="store_true")
        p.add_argument("--dump-trajectories", action="store_true")

    common(sub.add_parser("synth", help="synthesize samples"), needs_config=True)
    common(sub.add_parser("estimate", help="run the recovery pipeline"),
           needs_samples=True)
    common(sub.add_parser("landscape", help="dump landscape grid and diagnostics"),
           needs_samples=True)
    common(sub.add_parser("verify", help="run the numeric audit suites"))
    common(sub.add_parser("experiment", help="run an error-scaling experiment"),
           needs_config=True)
    mm = sub.add_parser("minimax", help="emit an adversarial pair")
    common(mm, needs_config=True)
    mm.add_argument("--no-stress", action="store_true",
                    help="skip running the pipeline on the pair")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "estimate": _cmd_estimate,
        "landscape": _cmd_landscape,
        "verify": _cmd_verify,
        "experiment": _cmd_experiment,
        "minimax": _cmd_minimax,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
