"""Command-line entry point.

Subcommands ``simulate``, ``anchors``, ``sample``, ``analyze`` and
``pipeline``. Configuration resolves in order: built-in defaults, a named
``--preset``, a ``--config`` JSON file, then explicit flags. Exit status
is 0 on success, 1 on a usage error and 2 when a stage fails at runtime.

Every output directory receives ``run.json`` with the resolved
configuration. Output paths are kept out of it, so repeated runs with the
same seed produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .anchors import AnchorSet, build_anchor_set
from .data import RunConfig, load_csv, paper_configs, simulate_hypersphere
from .errors import BnnLatentError
from .model import AnchoredPosterior, Layout, ModelSpec
from .sampler import ChainTrace, run_chains
from .utils import derive_seed

log = logging.getLogger("bnnlatent")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# flag dest -> RunConfig field ("sampler." prefix for NutsConfig fields)
OVERRIDES = {
    "data": "data",
    "label_column": "label_column",
    "standardize": "standardize",
    "n": "n",
    "noise_sd": "noise_sd",
    "truth_metric": "truth",
    "q": "q",
    "h": "h",
    "n_ref": "n_ref",
    "constrain": "constrain",
    "lle_scope": "lle_scope",
    "n_neighbors": "n_neighbors",
    "ridge": "ridge",
    "latent_prior": "latent_prior",
    "clusters": "n_clusters",
    "thin": "thin",
    "pairs": "n_pairs",
    "seed": "seed",
    "chains": "sampler.chains",
    "warmup": "sampler.warmup_iters",
    "iters": "sampler.sample_iters",
    "target_accept": "sampler.target_accept",
    "max_tree_depth": "sampler.max_tree_depth",
    "jobs": "sampler.n_jobs",
}


def resolve_config(args, base=None) -> RunConfig:
    """Defaults (or ``base``) < preset < JSON config < explicit flags."""
    base = json.loads(json.dumps(base)) if base is not None else RunConfig().to_dict()
    if getattr(args, "preset", None):
        presets = paper_configs()
        if args.preset not in presets:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(presets)}")
        base = presets[args.preset].to_dict()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"config file is not valid JSON: {e}") from None
        sampler = dict(base["sampler"])
        sampler.update(user.pop("sampler", {}))
        base.update(user)
        base["sampler"] = sampler
    for dest, target in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if target.startswith("sampler."):
            base["sampler"][target.split(".", 1)[1]] = value
        else:
            base[target] = value
    if base.get("n_ref") == 0:
        base["n_ref"] = None
    # one top-level seed drives every stage
    base["sampler"]["seed"] = base["seed"]
    try:
        return RunConfig.from_dict(base)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def load_dataset(cfg: RunConfig):
    """Return ``(dataset, truth_points or None)`` and align ``cfg.p`` with the data."""
    if cfg.data == "sphere":
        ds, P, _ = simulate_hypersphere(cfg.n, cfg.noise_sd, cfg.seed, cfg.truth)
        return ds, P
    path = Path(cfg.data)
    if not path.is_file():
        raise UsageError(f"data file not found: {path}")
    ds = load_csv(path, cfg.label_column, cfg.standardize)
    if cfg.expected_n is not None and ds.n != cfg.expected_n:
        log.warning("%s has %d rows, preset expects %d", path, ds.n, cfg.expected_n)
    return ds, None


def _spec_for(cfg: RunConfig, ds) -> ModelSpec:
    if not 1 <= cfg.q < ds.p:
        raise UsageError(f"need 1 <= q < p, got q={cfg.q} for data with p={ds.p}")
    return ModelSpec(ds.p, cfg.q, cfg.h, ds.n)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_run(out: Path, cfg: RunConfig, stage: str, extra=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    record = {"stage": stage, "config": cfg.to_dict()}
    if extra:
        record.update(extra)
    _write_json(out / "run.json", record)


def _fmt(v) -> str:
    return repr(float(v))


def _write_matrix_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in rows:
            w.writerow(row)


# -- stages ------------------------------------------------------------------


def stage_simulate(cfg: RunConfig, out: Path) -> None:
    ds, P, _ = simulate_hypersphere(cfg.n, cfg.noise_sd, cfg.seed, cfg.truth)
    out.mkdir(parents=True, exist_ok=True)
    ds.to_csv(out / "data.csv")
    _write_matrix_csv(out / "truth.csv", ["x", "y", "z"], ([_fmt(v) for v in row] for row in P))
    _write_run(out, cfg, "simulate", {"provenance": ds.provenance, "truth_metric": cfg.truth})


def stage_anchors(cfg: RunConfig, out: Path, ds=None) -> AnchorSet:
    if ds is None:
        ds, _ = load_dataset(cfg)
    if not cfg.anchors:
        raise UsageError("anchors stage needs --n-ref > 0")
    spec = _spec_for(cfg, ds)
    if not 0 < cfg.n_ref < ds.n:
        raise UsageError(f"need 0 < n_ref < N, got n_ref={cfg.n_ref}, N={ds.n}")
    aset = build_anchor_set(
        ds.Y, cfg.n_ref, cfg.lle_config(), spec, seed=cfg.seed, lle_scope=cfg.lle_scope, rescale=cfg.constrain
    )
    out.mkdir(parents=True, exist_ok=True)
    aset.to_json(out / "anchors.json")
    _write_run(out, cfg, "anchors", {"provenance": ds.provenance})
    return aset


def make_posterior(cfg: RunConfig, ds, aset) -> AnchoredPosterior:
    spec = _spec_for(cfg, ds)
    idx = aset.indices if aset is not None else None
    vals = aset.values if aset is not None else None
    return AnchoredPosterior(ds.Y, spec, idx, vals, constrain=cfg.constrain, latent_prior=cfg.latent_prior)


def stage_sample(cfg: RunConfig, out: Path, ds=None, aset=None) -> list:
    if ds is None:
        ds, _ = load_dataset(cfg)
    post = make_posterior(cfg, ds, aset)
    names = post.layout.names()
    log.info("sampling %d chains, dim=%d", cfg.sampler.chains, post.dim)
    traces = run_chains(post, post.dim, cfg.sampler, names=names)
    out.mkdir(parents=True, exist_ok=True)
    for tr in traces:
        tr.write(out)
    if aset is not None:
        aset.to_json(out / "anchors.json")
    _write_run(
        out,
        cfg,
        "sample",
        {
            "provenance": ds.provenance,
            "n_anchors": 0 if aset is None else aset.n_ref,
            "dim": post.dim,
            "chains": [tr.summary() for tr in traces],
        },
    )
    return traces


def _read_traces(trace_dir: Path, n_chains: int) -> list:
    traces = []
    for c in range(n_chains):
        if not (trace_dir / f"chain{c}.csv").is_file():
            raise UsageError(f"missing trace file chain{c}.csv in {trace_dir}")
        traces.append(ChainTrace.read(trace_dir, c))
    return traces


def _latent_stacks(cfg: RunConfig, N: int, p: int, traces, aset) -> list:
    anchored = np.zeros(N, dtype=bool)
    X_fixed = np.zeros((N, cfg.q))
    if aset is not None:
        anchored[aset.indices] = True
        X_fixed[aset.indices] = aset.values
    free = np.flatnonzero(~anchored)
    layout = Layout(ModelSpec(p, cfg.q, cfg.h, N), free)
    stacks = []
    for tr in traces:
        if tr.draws.shape[1] != layout.size:
            raise BnnLatentError(f"trace width {tr.draws.shape[1]} does not match layout size {layout.size}")
        L = np.broadcast_to(X_fixed, (tr.n_draws, N, cfg.q)).copy()
        L[:, free] = layout.block(tr.draws, "X")
        stacks.append(L)
    return stacks, free, layout


def stage_analyze(cfg: RunConfig, trace_dir: Path, out: Path, truth_points=None, ds=None, traces=None) -> dict:
    if ds is None:
        ds, _ = load_dataset(cfg)
    aset = None
    if (trace_dir / "anchors.json").is_file():
        aset = AnchorSet.from_json(trace_dir / "anchors.json")
    if traces is None:
        traces = _read_traces(trace_dir, cfg.sampler.chains)
    stacks, free, layout = _latent_stacks(cfg, ds.n, ds.p, traces, aset)
    out.mkdir(parents=True, exist_ok=True)

    pairs = analysis.random_pairs(ds.n, cfg.n_pairs, derive_seed(cfg.seed, "pairs"), candidates=free)
    series = analysis.distance_trace(stacks, pairs)  # (chains, K, pairs)
    labels = [f"d.{i}.{j}" for i, j in pairs]
    for c in range(series.shape[0]):
        _write_matrix_csv(
            out / f"distances_chain{c}.csv",
            ["draw"] + labels,
            ([str(k)] + [_fmt(v) for v in series[c, k]] for k in range(series.shape[1])),
        )

    diag = {"pairs": pairs.tolist(), "n_chains": len(traces), "n_draws": int(series.shape[1])}
    if len(traces) >= 2 and series.shape[1] >= 4:
        rh = [analysis.split_rhat(series[:, :, m]) for m in range(len(pairs))]
        es = [analysis.ess(series[:, :, m]) for m in range(len(pairs))]
        var_block = np.stack([tr.draws[:, -2:] for tr in traces])
        diag.update(
            split_rhat=rh,
            ess=es,
            median_split_rhat=float(np.median(rh)),
            log_tau_sq_split_rhat=analysis.split_rhat(var_block[:, :, 0]),
            log_sigma_sq_split_rhat=analysis.split_rhat(var_block[:, :, 1]),
        )
    diag["divergences"] = [int(np.sum(tr.divergent)) for tr in traces]
    _write_json(out / "rhat.json", diag)

    result = {"diagnostics": diag}
    if truth_points is not None:
        D = (
            analysis.pairwise_distances(truth_points)
            if cfg.truth == "chordal"
            else np.arccos(np.clip(truth_points @ truth_points.T, -1.0, 1.0))
        )
        if D.shape[0] != ds.n:
            raise UsageError(f"truth has {D.shape[0]} points, data has {ds.n}")
        np.fill_diagonal(D, 0.0)
        err = np.stack([analysis.distance_error_series(L, D) for L in stacks], axis=1)  # (K, chains)
        _write_matrix_csv(
            out / "error.csv",
            [f"chain{c}" for c in range(err.shape[1])],
            ([_fmt(v) for v in row] for row in err),
        )
        result["error"] = err

    k = cfg.n_clusters
    if k is None and ds.labels is not None:
        k = ds.n_classes
    if k is not None:
        partitions, origin = [], []
        for c, L in enumerate(stacks):
            for d in range(0, L.shape[0], cfg.thin):
                seed = derive_seed(cfg.seed, "cluster", c, d)
                partitions.append(analysis.spectral_cluster(analysis.pairwise_distances(L[d]), k, seed))
                origin.append((c, d))
        P = analysis.coclustering_mean(partitions)
        best, obj = analysis.dahl_from_labels(partitions, P)
        _write_matrix_csv(out / "cocluster.csv", None, ([_fmt(v) for v in row] for row in P))
        _write_json(
            out / "dahl.json",
            {
                "index": best,
                "chain": origin[best][0],
                "draw": origin[best][1],
                "objective": float(obj[best]),
                "n_clusters": int(k),
                "labels": [int(v) for v in partitions[best]],
            },
        )
        key = ds.labels if ds.labels is not None else partitions[best]
        order = analysis.class_order(key)
        _write_matrix_csv(
            out / "order.csv", ["position", "index", "label"], ([str(r), str(i), str(key[i])] for r, i in enumerate(order))
        )
        result.update(cocluster=P, dahl=best, partitions=partitions)
    _write_run(out, cfg, "analyze", {"provenance": ds.provenance})
    return result


def _load_truth(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"truth file not found: {path}")
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


# -- argument parsing -----------------------------------------------------------


def _add_common(p, data=True):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--preset", help=f"named preset: {', '.join(sorted(paper_configs()))}")
    p.add_argument("--seed", type=int)
    if data:
        p.add_argument("--data", help="CSV path, or 'sphere' for the simulated hypersphere")
        p.add_argument("--label-column")
        p.add_argument("--standardize", dest="standardize", action="store_const", const=True)
        p.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)
        p.add_argument("--n", type=int, help="simulated sample size")
        p.add_argument("--noise-sd", type=float)


def _add_model(p):
    p.add_argument("--q", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--n-ref", type=int, help="number of anchors; 0 disables anchoring")
    p.add_argument("--lle-scope", choices=["anchors", "full"])
    p.add_argument("--n-neighbors", type=int)
    p.add_argument("--ridge", type=float)
    p.add_argument(
        "--no-constraint", dest="constrain", action="store_const", const=False, help="skip column normalisation"
    )
    p.add_argument("--latent-prior", choices=["normal", "flat"])


def _add_sampler(p):
    p.add_argument("--chains", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--target-accept", type=float)
    p.add_argument("--max-tree-depth", type=int)
    p.add_argument("--jobs", type=int, help="worker processes for chains")


def _add_analysis(p):
    p.add_argument("--pairs", type=int, help="number of random distance pairs to trace")
    p.add_argument("--clusters", type=int, help="spectral clusters per draw")
    p.add_argument("--thin", type=int, help="cluster every n-th draw")
    p.add_argument("--truth-metric", choices=["chordal", "geodesic"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bnnlatent", description="Bayesian latent decoder with anchor points")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="noisy points on the unit sphere")
    _add_common(p, data=False)
    p.add_argument("--n", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--truth-metric", choices=["chordal", "geodesic"])
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("anchors", help="construct anchor points")
    _add_common(p)
    _add_model(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sample", help="run NUTS chains on the anchored posterior")
    _add_common(p)
    _add_model(p)
    _add_sampler(p)
    p.add_argument("--anchors", help="anchors.json from the anchors stage")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("analyze", help="posterior summaries of sampled traces")
    _add_common(p)
    _add_analysis(p)
    p.add_argument("--traces", required=True, help="directory written by 'sample'")
    p.add_argument("--truth", help="truth.csv with noiseless points")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("pipeline", help="data -> anchors -> sample -> analyze")
    _add_common(p)
    _add_model(p)
    _add_sampler(p)
    _add_analysis(p)
    p.add_argument("--out-dir", required=True)
    return parser


def _run(args) -> None:
    if args.command is None:
        raise UsageError("a subcommand is required")
    cmd = args.command
    if cmd == "simulate":
        # anchors play no part here, so a small --n must not clash with the default n_ref
        args.n_ref = 0
        cfg = resolve_config(args)
        stage_simulate(cfg, Path(args.out))
        return

    if cmd == "analyze":
        trace_dir = Path(args.traces)
        if not (trace_dir / "run.json").is_file():
            raise UsageError(f"{trace_dir} has no run.json; pass the directory written by 'sample'")
        # start from the sampling run's configuration; flags still override
        sampled = json.loads((trace_dir / "run.json").read_text())["config"]
        cfg = resolve_config(args, base=sampled)
        truth = _load_truth(args.truth) if args.truth else None
        stage_analyze(cfg, trace_dir, Path(args.out_dir), truth)
        return

    cfg = resolve_config(args)
    if cfg.data != "sphere" and not Path(cfg.data).is_file():
        raise UsageError(f"data file not found: {cfg.data}")

    if cmd == "anchors":
        stage_anchors(cfg, Path(args.out))
    elif cmd == "sample":
        aset = None
        if args.anchors:
            if not Path(args.anchors).is_file():
                raise UsageError(f"anchors file not found: {args.anchors}")
            aset = AnchorSet.from_json(args.anchors)
        stage_sample(cfg, Path(args.out_dir), aset=aset)
    elif cmd == "pipeline":
        run_pipeline(cfg, Path(args.out_dir))


def run_pipeline(cfg: RunConfig, out: Path) -> dict:
    """All stages into one directory; returns the analysis result."""
    out.mkdir(parents=True, exist_ok=True)
    ds, truth = load_dataset(cfg)
    if cfg.data == "sphere":
        stage_simulate(cfg, out)
    aset = stage_anchors(cfg, out, ds) if cfg.anchors else None
    traces = stage_sample(cfg, out, ds, aset)
    result = stage_analyze(cfg, out, out, truth, ds, traces)
    _write_run(out, cfg, "pipeline", {"provenance": ds.provenance})
    return result


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
        )
        _run(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (BnnLatentError, ValueError, ArithmeticError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
