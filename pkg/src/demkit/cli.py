"""Command-line entry point.

Every subcommand is a thin wrapper around one library call.  Analysis
outputs are tab-separated tables; each run also writes a JSON manifest
holding the resolved configuration, input digests and package version.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure (pole, rank deficiency, non-convergence).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .errors import (
    ConvergenceError,
    DemkitError,
    DemParseError,
    DimensionError,
    DomainError,
    MissingCoordsError,
    PoleError,
    RankDeficientError,
    SyndromeFormatError,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "DEMKIT_THREADS"
DEFAULT_MANIFEST = "demkit-manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ----------------------------------------------------------------- helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_tsv(path, header, rows):
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(r[h]) for h in header])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (tuple, list)):
        return " ".join(str(_cell(x)) for x in v)
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    if isinstance(v, np.integer):
        return int(v)
    return v


def _edge_str(e) -> str:
    return " ".join(f"D{d}" for d in e)


def _parse_edges(text: str):
    """``"0,1;2,3"`` -> ``[(0, 1), (2, 3)]``."""
    out = []
    for part in text.split(";"):
        part = part.strip()
        if part:
            try:
                out.append(tuple(sorted(int(x) for x in part.split(","))))
            except ValueError:
                raise UsageError(f"bad edge list {text!r}; expected e.g. '0,1;2,3'") from None
    return out


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return int(args.threads)
    env = os.environ.get(THREADS_ENV)
    return int(env) if env else (os.cpu_count() or 1)


def _load_dem(path):
    from .demio import read_dem

    return read_dem(path)


def _load_syndromes(args, n, dpr=None):
    from .demio import read_syndromes

    return read_syndromes(args.syndromes, args.format, n, detectors_per_round=dpr)


def _detector_count(args, dem=None) -> int:
    if dem is not None:
        return dem.n
    if getattr(args, "num_detectors", None) is None:
        raise UsageError("the detector count is unknown: pass --num-detectors or --dem")
    return int(args.num_detectors)


def _dpr(args, dem=None):
    if getattr(args, "detectors_per_round", None):
        return int(args.detectors_per_round)
    if dem is not None and dem.coords is not None:
        return dem.coords.detectors_per_round()
    return None


def _report_rows(report):
    for e, t, s in zip(report.edges, report.theta, report.sigma):
        yield {"edge": _edge_str(e), "order": len(e), "theta": t, "sigma": s}


# ------------------------------------------------------------ subcommands


def cmd_sample(args, ctx):
    from .demio import write_syndromes
    from .demmodel import sample

    dem = _load_dem(args.dem)
    batch = sample(dem, args.shots, seed=args.seed, detectors_per_round=_dpr(args, dem))
    write_syndromes(batch, args.out, args.format)
    ctx["outputs"].append(args.out)
    ctx["results"] = {"num_shots": batch.num_shots, "num_detectors": batch.num_detectors}
    return EXIT_OK


def cmd_estimate(args, ctx):
    from .demio import save_dem
    from .demmodel import floor_negative_rates, time_average
    from .estmoment import estimate_from_moments
    from .estparity import estimate_from_parities, estimate_lsqr, suggest_queries

    dem = _load_dem(args.dem)
    batch = _load_syndromes(args, dem.n, _dpr(args, dem))
    status = EXIT_OK
    if args.method == "moments":
        report = estimate_from_moments(batch, dem, args.w)
        if not report.meta["converged"]:
            status = EXIT_NUMERIC
            print(f"warning: root finder did not converge ({report.meta['message']})", file=sys.stderr)
    elif args.method == "parities":
        report = estimate_from_parities(batch, dem)
    else:
        psi_bar = args.psi_bar
        if psi_bar is None:
            rates = np.asarray(dem.rates)
            psi_bar = float(np.mean(-np.log1p(-2 * rates))) if np.any(rates > 0) else 0.01
        report = estimate_lsqr(batch, dem, suggest_queries(dem, psi_bar, dem.n))
    if args.floor_negative:
        report = floor_negative_rates(report)
    out_dem = time_average(dem, report) if args.time_average else report.to_dem(dem.coords)
    save_dem(out_dem, args.out)
    ctx["outputs"].append(args.out)
    if args.table:
        _write_tsv(args.table, ["edge", "order", "theta", "sigma"], _report_rows(report))
        ctx["outputs"].append(args.table)
    ctx["results"] = {"algorithm": report.algorithm, "num_edges": len(report),
                      "physical": report.physical, "num_shots": report.num_shots}
    return status


def cmd_learn(args, ctx):
    from .demio import save_dem
    from .estmoment import learn_from_moments
    from .estparity import learn_from_parities

    dem = _load_dem(args.dem) if args.dem else None
    n = _detector_count(args, dem)
    batch = _load_syndromes(args, n, _dpr(args, dem))
    seeds = _parse_edges(args.seed_edges) if args.seed_edges else None
    if args.method == "moments":
        edges, report = learn_from_moments(batch, args.k_max, args.w_search, args.w_fit, seeds=seeds)
    else:
        edges, report = learn_from_parities(batch, args.k_max, seeds=seeds)
    save_dem(report.to_dem(dem.coords if dem is not None else None), args.out)
    ctx["outputs"].append(args.out)
    if args.table:
        _write_tsv(args.table, ["edge", "order", "theta", "sigma"], _report_rows(report))
        ctx["outputs"].append(args.table)
    ctx["results"] = {"num_edges": len(edges), "levels": report.meta.get("levels"),
                      "prune_threshold": report.meta.get("prune_threshold")}
    return EXIT_OK


def cmd_likelihood(args, ctx):
    from .bitcore import indices_of
    from .score import exact_likelihood

    dem = _load_dem(args.dem)
    p = exact_likelihood(dem).values
    if args.syndromes:
        batch = _load_syndromes(args, dem.n)
        keys, counts = np.unique(batch.syndrome_integers(), return_counts=True)
        with np.errstate(divide="ignore"):
            rows = [{"syndrome": int(k), "detectors": _edge_str(indices_of(int(k))), "count": int(c),
                     "probability": float(p[k]), "log_probability": float(np.log(p[k]))}
                    for k, c in zip(keys, counts)]
        header = ["syndrome", "detectors", "count", "probability", "log_probability"]
    else:
        idx = np.flatnonzero(p > args.min_prob)
        rows = [{"syndrome": int(k), "detectors": _edge_str(indices_of(int(k))), "probability": float(p[k])}
                for k in idx]
        header = ["syndrome", "detectors", "probability"]
    _write_tsv(args.out, header, rows)
    if args.out not in (None, "-"):
        ctx["outputs"].append(args.out)
    ctx["results"] = {"rows": len(rows), "total_probability": float(p.sum())}
    return EXIT_OK


def _named(items, what):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"{what} must look like name=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = v
    return out


def cmd_score(args, ctx):
    from .demio import read_syndromes
    from .score import compare_models

    models = _named(args.model, "--model")
    if not models:
        raise UsageError("give at least one --model name=path")
    fits = _named(args.fit, "--fit")
    unknown = set(fits) - set(models)
    if unknown:
        raise UsageError(f"--fit names unknown models: {sorted(unknown)}")
    dems = {k: _load_dem(v) for k, v in models.items()}
    n = next(iter(dems.values())).n
    batch_eval = read_syndromes(args.syndromes, args.format, n)
    batch_train = read_syndromes(args.train, args.format, n) if args.train else None
    table = compare_models(batch_train, batch_eval, dems, fits, k_max=args.k_max)
    header = ["model", "E", "kl", "cross_entropy", "entropy", "stderr", "aic", "delta_aic", "impossible"]
    rows = [{"model": m.name, "E": m.score.E, "kl": m.score.kl, "cross_entropy": m.score.cross_entropy,
             "entropy": m.score.entropy, "stderr": m.score.stderr, "aic": m.score.aic,
             "delta_aic": m.delta_aic, "impossible": _edge_str(m.score.impossible) if m.score.impossible else ""}
            for m in table]
    _write_tsv(args.out, header, rows)
    if args.out not in (None, "-"):
        ctx["outputs"].append(args.out)
    ctx["results"] = {r["model"]: {"kl": r["kl"], "aic": r["aic"]} for r in rows}
    for m in table:
        if not m.score.finite:
            print(f"warning: model {m.name!r} gives probability zero to observed syndrome "
                  f"{_edge_str(m.score.impossible) or '(empty)'}", file=sys.stderr)
    return EXIT_OK


def cmd_track(args, ctx):
    from .diagnostics import track_windows

    dem = _load_dem(args.dem)
    batch = _load_syndromes(args, dem.n)
    trace = track_windows(batch, dem, args.window_shots)
    header = ["window", "shot_start", "shot_stop", "weighted_attenuation", "half_weighted_attenuation",
              "mean_hamming", "negative_psi"]
    _write_tsv(args.out, header, trace.rows())
    if args.out not in (None, "-"):
        ctx["outputs"].append(args.out)
    if args.edges_out:
        var = trace.edge_variance() if len(trace) > 1 else np.full(len(trace.edges), np.nan)
        rank = np.empty(len(trace.edges), dtype=np.int64)
        if len(trace) > 1:
            rank[trace.ranking()] = np.arange(len(trace.edges))
        else:
            rank[:] = -1
        rows = [{"edge": _edge_str(e), "mean_theta": float(trace.theta[:, k].mean()) if len(trace) else np.nan,
                 "variance": var[k], "instability_rank": int(rank[k])}
                for k, e in enumerate(trace.edges)]
        _write_tsv(args.edges_out, ["edge", "mean_theta", "variance", "instability_rank"], rows)
        ctx["outputs"].append(args.edges_out)
    ctx["results"] = {"windows": len(trace)}
    return EXIT_OK


def cmd_pairs(args, ctx):
    from .diagnostics import long_range_pairs

    dem = _load_dem(args.dem)
    if dem.coords is None:
        raise MissingCoordsError(f"{args.dem}: pair screening needs detector coordinates")
    batch = _load_syndromes(args, dem.n)
    g = long_range_pairs(batch, dem.coords, args.min_l1, args.same_round)
    L = dem.coords.l1_matrix()
    rows = [{"i": i, "j": j, "theta": v[0], "sigma": v[1], "z": v[2], "l1": float(L[i, j])}
            for (i, j), v in sorted(g.pairs.items())]
    _write_tsv(args.out, ["i", "j", "theta", "sigma", "z", "l1"], rows)
    if args.out not in (None, "-"):
        ctx["outputs"].append(args.out)
    ctx["results"] = {"pairs": len(rows), "threshold": g.threshold}
    return EXIT_OK


def cmd_motif(args, ctx):
    from .diagnostics import motif_scan

    dem = _load_dem(args.dem)
    if dem.coords is None:
        raise MissingCoordsError(f"{args.dem}: motif scans need detector coordinates")
    batch = _load_syndromes(args, dem.n)
    scan = motif_scan(batch, dem.coords, args.motif, args.threshold)
    _write_tsv(args.out, ["a", "b", "theta", "sigma", "l1"], scan.rows())
    if args.out not in (None, "-"):
        ctx["outputs"].append(args.out)
    ctx["results"] = {"retained": len(scan.pairs), "tested": scan.num_tested, "threshold": scan.threshold}
    return EXIT_OK


def cmd_anomalies(args, ctx):
    from .diagnostics import AnomalyEvent, detect_high_energy, detect_tls

    dem = _load_dem(args.dem)
    dpr = _dpr(args, dem)
    if dpr is None:
        raise UsageError("round framing is unknown: pass --detectors-per-round")
    batch = _load_syndromes(args, dem.n, dpr)
    if args.kind == "he":
        events = detect_high_energy(batch, args.sample_shots, min_r2=args.min_r2,
                                    tau_range=(args.tau_min, args.tau_max))
        ctx["results"] = {"events": len(events)}
    else:
        events, summary = detect_tls(batch, dem.coords, template_length=args.template_length,
                                     trigger_fraction=args.trigger_fraction)
        ctx["results"] = {"events": len(events), "exp_mean_gap": summary.exp_mean,
                          "raw_mean_gap": summary.raw_mean}
    header = list(AnomalyEvent.__dataclass_fields__)
    _write_tsv(args.out, header, (e.row() for e in events))
    if args.out not in (None, "-"):
        ctx["outputs"].append(args.out)
    return EXIT_OK


def cmd_pool(args, ctx):
    from .demio import FrameSpec, pool_frames, read_syndromes, write_syndromes

    n = _detector_count(args)
    batches = [read_syndromes(p, args.format, n) for p in args.syndromes]
    spec = FrameSpec(args.rounds, args.detectors_per_round, args.discard_head, args.discard_tail)
    pooled = pool_frames(batches, spec)
    write_syndromes(pooled, args.out, args.format)
    ctx["outputs"].append(args.out)
    ctx["results"] = {"frames": pooled.num_shots, "detectors_per_frame": pooled.num_detectors}
    return EXIT_OK


def cmd_identities(args, ctx):
    from .bitcore import check_identities

    devs = check_identities(args.n, atol=args.atol)
    worst = max(devs.values()) if devs else 0.0
    for name, d in devs.items():
        print(f"{name}\t{d:.3e}\t{'ok' if d <= args.atol else 'FAIL'}")
    ctx["results"] = {k: float(v) for k, v in devs.items()}
    if worst > args.atol:
        print(f"identity check failed: max deviation {worst:.3e} > {args.atol:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="demkit", description="Estimate detector error models from syndrome data.")
    p.add_argument("--version", action="version", version=f"demkit {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(sp, syndromes=True, out_required=False):
        sp.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
        sp.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or all cores)")
        if syndromes:
            sp.add_argument("--syndromes", required=True, help="syndrome file")
            sp.add_argument("--format", choices=["b8", "01"], default="b8")
        sp.add_argument("--out", required=out_required, default=None if out_required else "-",
                        help="output path" + ("" if out_required else " ('-' for stdout)"))

    s = sub.add_parser("sample", help="draw syndromes from a DEM")
    s.add_argument("--dem", required=True)
    s.add_argument("--shots", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=["b8", "01"], default="b8")
    s.add_argument("--detectors-per-round", type=int)
    common(s, syndromes=False, out_required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("estimate", help="rates for a fixed structure")
    s.add_argument("--dem", required=True, help="DEM giving the structure (rates ignored)")
    s.add_argument("--method", choices=["moments", "parities", "lsqr"], default="parities")
    s.add_argument("--w", type=int, default=3, help="free-excitation weight for moments")
    s.add_argument("--psi-bar", type=float, help="typical attenuation used to design lsqr queries")
    s.add_argument("--time-average", action="store_true")
    s.add_argument("--floor-negative", action="store_true")
    s.add_argument("--detectors-per-round", type=int)
    s.add_argument("--table", help="also write a TSV of theta and sigma per edge")
    common(s, out_required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("learn", help="discover structure and rates")
    s.add_argument("--method", choices=["moments", "parities"], default="parities")
    s.add_argument("--dem", help="DEM supplying detector count and coordinates")
    s.add_argument("--num-detectors", type=int)
    s.add_argument("--k-max", type=int, default=4)
    s.add_argument("--w-search", type=int, default=2)
    s.add_argument("--w-fit", type=int, default=3)
    s.add_argument("--seed-edges", help="seed hyperedges, e.g. '0,1;2,3'")
    s.add_argument("--detectors-per-round", type=int)
    s.add_argument("--table", help="also write a TSV of theta and sigma per edge")
    common(s, out_required=True)
    s.set_defaults(func=cmd_learn)

    s = sub.add_parser("likelihood", help="exact syndrome probabilities of a DEM")
    s.add_argument("--dem", required=True)
    s.add_argument("--syndromes", help="score only the syndromes observed in this file")
    s.add_argument("--format", choices=["b8", "01"], default="b8")
    s.add_argument("--min-prob", type=float, default=0.0)
    common(s, syndromes=False)
    s.set_defaults(func=cmd_likelihood)

    s = sub.add_parser("score", help="KL divergence and AIC of models on evaluation data")
    s.add_argument("--model", action="append", help="name=path.dem (repeatable)")
    s.add_argument("--fit", action="append",
                   help="name=parities|moments|learn-parities|learn-moments (default fixed)")
    s.add_argument("--train", help="training syndromes for fitted models")
    s.add_argument("--k-max", type=int, default=4)
    common(s)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("track", help="rates and total attenuation per shot window")
    s.add_argument("--dem", required=True)
    s.add_argument("--window-shots", type=int, required=True)
    s.add_argument("--edges-out", help="per-edge stability table")
    common(s)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("pairs", help="significant long-range detector pairs")
    s.add_argument("--dem", required=True, help="DEM supplying coordinates")
    s.add_argument("--min-l1", type=float, default=8.0)
    s.add_argument("--same-round", action="store_true")
    common(s)
    s.set_defaults(func=cmd_pairs)

    s = sub.add_parser("motif", help="correlated-measurement motif scan")
    s.add_argument("--dem", required=True, help="DEM supplying coordinates")
    s.add_argument("--motif", default="corr-meas", choices=["corr-meas"])
    s.add_argument("--threshold", type=float)
    common(s)
    s.set_defaults(func=cmd_motif)

    s = sub.add_parser("anomalies", help="high-energy and TLS-like event detection")
    s.add_argument("--dem", required=True, help="DEM supplying coordinates and round framing")
    s.add_argument("--kind", choices=["he", "tls"], required=True)
    s.add_argument("--detectors-per-round", type=int)
    s.add_argument("--sample-shots", type=int)
    s.add_argument("--min-r2", type=float, default=0.8)
    s.add_argument("--tau-min", type=float, default=5.0)
    s.add_argument("--tau-max", type=float, default=500.0)
    s.add_argument("--template-length", type=int, default=16)
    s.add_argument("--trigger-fraction", type=float, default=0.75)
    common(s)
    s.set_defaults(func=cmd_anomalies)

    s = sub.add_parser("pool", help="cut shots into frames and stack them")
    s.add_argument("--syndromes", nargs="+", required=True)
    s.add_argument("--format", choices=["b8", "01"], default="b8")
    s.add_argument("--num-detectors", type=int, required=True)
    s.add_argument("--detectors-per-round", type=int, required=True)
    s.add_argument("--rounds", type=int, required=True, help="rounds per frame")
    s.add_argument("--discard-head", type=int, default=1)
    s.add_argument("--discard-tail", type=int, default=1)
    common(s, syndromes=False, out_required=True)
    s.set_defaults(func=cmd_pool)

    s = sub.add_parser("identities", help="self-test the subset-transform identities")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--atol", type=float, default=1e-10)
    common(s, syndromes=False)
    s.set_defaults(func=cmd_identities)
    return p


def _inputs(args) -> dict:
    out = {}
    for key in ("dem", "syndromes", "train"):
        v = getattr(args, key, None)
        for path in v if isinstance(v, list) else [v]:
            if path and os.path.isfile(path):
                out[path] = _sha256(path)
    for item in getattr(args, "model", None) or []:
        path = item.split("=", 1)[-1]
        if os.path.isfile(path):
            out[path] = _sha256(path)
    return out


def _manifest_path(args):
    if getattr(args, "manifest", None):
        return args.manifest
    out = getattr(args, "out", None)
    if out not in (None, "-"):
        return f"{out}.manifest.json"
    return DEFAULT_MANIFEST


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    ctx = {"outputs": [], "results": {}}
    config = {k: v for k, v in vars(args).items() if k != "func"}
    config["threads"] = _threads(args)
    try:
        code = args.func(args, ctx)
    except UsageError as exc:
        print(f"demkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PoleError, RankDeficientError, ConvergenceError) as exc:
        print(f"demkit {args.command}: numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except (DemParseError, SyndromeFormatError, MissingCoordsError, DimensionError, DomainError,
            OSError) as exc:
        print(f"demkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DemkitError as exc:
        print(f"demkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"demkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest = {
        "tool": "demkit",
        "version": __version__,
        "command": args.command,
        "argv": argv,
        "config": config,
        "inputs": _inputs(args),
        "outputs": ctx["outputs"],
        "results": ctx["results"],
        "exit_code": code,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    with open(_manifest_path(args), "w", encoding="utf-8") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
