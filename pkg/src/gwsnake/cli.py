"""Command-line entry point: sample / encode / verify / mc / report.

Exit codes: 0 success, 1 usage error, 2 model or validation error,
3 verification failure (some identity failed), 4 rejection budget
exceeded.  Every artifact embeds its format version and the effective
configuration; wall-clock timing lives in a metadata field that
determinism comparisons exclude.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MODEL = 2
EXIT_VERIFY = 3
EXIT_BUDGET = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting with its own codes."""

    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="gwsnake",
                description="Branching random walks on size-conditioned "
                            "Galton-Watson trees: sampling, encodings, "
                            "exact verification, and Monte Carlo checks.")
    sub = p.add_subparsers(dest="command", metavar="command",
                          parser_class=_Parser)

    sp = sub.add_parser("sample",
                        help="draw one conditioned tree into tree.json")
    sp.add_argument("--model", required=True, help="model JSON file")
    sp.add_argument("--edges", required=True, type=int,
                    help="number of edges of the conditioned tree")
    sp.add_argument("--seed", type=int, default=0, help="master seed")
    sp.add_argument("--stream", type=int, default=0, help="stream index")
    sp.add_argument("--max-attempts", type=int, default=10 ** 6,
                    help="rejection budget for the count vector")
    sp.add_argument("--out", required=True, help="output tree.json path")

    ep = sub.add_parser("encode",
                        help="write CSV path data for a stored tree")
    ep.add_argument("--tree", required=True, help="tree.json file")
    ep.add_argument("--model", help="model JSON (for labels or the "
                                    "lineage field)")
    ep.add_argument("--labels-seed", type=int,
                    help="assign labels with this master seed")
    ep.add_argument("--paths", default="height,contour",
                    help="comma list from: tree,height,contour,labels,"
                         "contour-labels,lineage")
    ep.add_argument("--out", required=True, help="output directory")

    vp = sub.add_parser("verify",
                        help="run the exact identity suite into report.json")
    vp.add_argument("--model", required=True, help="model JSON file "
                    "(probabilities must be rational strings)")
    vp.add_argument("--max-edges", type=int, default=7)
    vp.add_argument("--kappa", type=int, default=3,
                    help="largest marked-subset size")
    vp.add_argument("--cap", type=int, default=10 ** 6,
                    help="enumeration tree-count cap")
    vp.add_argument("--out", help="output report.json path")

    mp = sub.add_parser("mc",
                        help="replicated Monte Carlo run into run.json")
    mp.add_argument("--model", required=True)
    mp.add_argument("--edges", required=True, type=int)
    mp.add_argument("--replicas", required=True, type=int)
    mp.add_argument("--grid", default="0.2,0.5,0.8",
                    help="comma list of points in (0,1)")
    mp.add_argument("--stats", default="cov",
                    help="comma list from: cov,ks,indep,diag")
    mp.add_argument("--threads", type=int, default=1, help="worker count")
    mp.add_argument("--seed", type=int, default=0, help="master seed")
    mp.add_argument("--out", required=True, help="output run.json path")
    mp.add_argument("--dump-paths", help="directory for per-replica CSVs")

    rp = sub.add_parser("report",
                        help="render run.json / report.json as a table")
    rp.add_argument("--in", dest="infile", required=True)
    rp.add_argument("--out", help="write the rendering here instead of "
                                  "stdout")
    return p


def _load_model(path: str, require_exact: bool = False):
    from .distributions import ModelValidationError, load_model
    model = load_model(path)
    if require_exact and not model.exact:
        raise ModelValidationError(
            "this command needs exact probabilities: use rational strings "
            "like \"1/2\" in the model file")
    return model


def _cmd_sample(args) -> int:
    from .sampler import derive_stream, sample_conditioned_tree
    model = _load_model(args.model)
    tree = sample_conditioned_tree(model.mu, args.edges,
                                   derive_stream(args.seed, args.stream),
                                   max_attempts=args.max_attempts)
    artifact = {"format_version": 1, "kind": "tree",
                "config": {"model": model.to_dict(), "edges": args.edges,
                           "seed": args.seed, "stream": args.stream},
                **tree.to_dict()}
    Path(args.out).write_text(json.dumps(artifact, indent=1), "utf-8")
    print(f"wrote {args.out} ({tree.n_edges} edges)")
    return EXIT_OK


def _cmd_encode(args) -> int:
    from .processes import lineage_field, normalized_processes, height_paths
    from .sampler import assign_labels, derive_stream
    from .trees import PlanarTree

    doc = json.loads(Path(args.tree).read_text("utf-8"))
    tree = PlanarTree.from_dict(doc)
    wanted = [w.strip() for w in args.paths.split(",") if w.strip()]
    known = {"tree", "height", "contour", "labels", "contour-labels",
             "lineage"}
    bad = set(wanted) - known
    if bad:
        raise UsageError(f"unknown paths {sorted(bad)}; choose from "
                         f"{sorted(known)}")

    model = _load_model(args.model) if args.model else None
    need_labels = {"labels", "contour-labels"} & set(wanted)
    lt = None
    if need_labels:
        if model is None or model.nu is None:
            raise UsageError(
                "label paths need --model with displacement laws and "
                "--labels-seed")
        if args.labels_seed is None:
            raise UsageError("label paths need --labels-seed")
        lt = assign_labels(tree, model.nu, derive_stream(args.labels_seed, 0))
    if "lineage" in wanted and model is None:
        raise UsageError("the lineage field needs --model")

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    meta = {"format_version": 1, "kind": "encodings",
            "config": {"tree": args.tree, "paths": wanted,
                       "model": model.to_dict() if model else None,
                       "labels_seed": args.labels_seed},
            "files": {}}

    def emit(name, text):
        (outdir / f"{name}.csv").write_text(text, "utf-8")
        meta["files"][name] = f"{name}.csv"

    if "tree" in wanted:
        emit("tree", tree.to_csv(lt.labels if lt is not None else None))
    if {"height", "contour"} & set(wanted):
        h, c = height_paths(tree)
        if "height" in wanted:
            emit("height", h.to_csv("h"))
        if "contour" in wanted:
            emit("contour", c.to_csv("h_contour"))
    if lt is not None:
        paths = normalized_processes(lt)
        if "labels" in wanted:
            emit("labels", paths.labels.to_csv("r"))
        if "contour-labels" in wanted:
            emit("contour_labels", paths.contour_labels.to_csv("r_contour"))
    if "lineage" in wanted:
        emit("lineage_field", lineage_field(tree, model.mu).to_csv())
    (outdir / "encodings_meta.json").write_text(json.dumps(meta, indent=1),
                                                "utf-8")
    print(f"wrote {len(meta['files'])} path file(s) under {outdir}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .oracle import verify_identities
    model = _load_model(args.model, require_exact=True)
    report = verify_identities(model.mu, n_max=args.max_edges,
                               kappa_max=args.kappa, cap=args.cap)
    doc = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1), "utf-8")
    for r in report.results:
        status = "pass" if r.passed else "FAIL"
        print(f"{status}  {r.name}: {r.instances} instances, "
              f"{r.failures} failures")
    print("verification " + ("passed" if report.passed else "FAILED"))
    return EXIT_OK if report.passed else EXIT_VERIFY


def _cmd_mc(args) -> int:
    from .harness import ExperimentConfig, run_ensemble
    model = _load_model(args.model)
    grid = tuple(float(x) for x in args.grid.split(",") if x.strip())
    stats = tuple(x.strip() for x in args.stats.split(",") if x.strip())
    try:
        cfg = ExperimentConfig(model=model, n_edges=args.edges,
                               replicas=args.replicas, grid=grid,
                               stats=stats, master_seed=args.seed,
                               workers=args.threads,
                               dump_paths=args.dump_paths)
    except ValueError as e:
        raise UsageError(str(e)) from e
    manifest = run_ensemble(cfg)
    manifest.write(args.out)
    print(f"wrote {args.out} ({cfg.replicas} replicas, "
          f"{manifest.wall_clock_s:.1f}s)")
    return EXIT_OK


def _render_report(doc: dict) -> str:
    lines = []
    kind = doc.get("kind")
    version = doc.get("format_version")
    if version is None or version > 1:
        raise UsageError(f"unsupported artifact version {version!r}")
    if kind == "verification_report":
        lines.append(f"verification report (model {doc['model'].get('name') or doc['model']['mu']['probs']})")
        lines.append(f"overall: {'pass' if doc['passed'] else 'FAIL'}")
        lines.append(f"{'identity':34} {'instances':>9} {'failures':>8}")
        for r in doc["identities"]:
            lines.append(f"{r['identity']:34} {r['instances']:>9} "
                         f"{r['failures']:>8}")
        for note in doc.get("notes", []):
            lines.append(f"note: {note}")
    elif kind == "mc_run":
        c = doc["config"]
        lines.append(f"mc run: n={c['n_edges']} replicas={c['replicas']} "
                     f"grid={c['grid']} seed={c['master_seed']}")
        est = doc["estimates"]
        if "covariance" in est:
            lines.append(f"{'pair':44} {'s':>4} {'t':>4} {'ratio':>9} "
                         f"{'se':>8} {'target':>8}")
            for e in est["covariance"]:
                pa = e["process_a"] + (str(e["index_a"]) if e["index_a"] else "")
                pb = e["process_b"] + (str(e["index_b"]) if e["index_b"] else "")
                lines.append(f"{pa + ' x ' + pb:44} {e['s']:>4} {e['t']:>4} "
                             f"{e['ratio']:>9.4f} {e['se']:>8.4f} "
                             f"{e['target']:>8.4f}")
        for e in est.get("ks", []):
            lines.append(f"ks s={e['s']}: stat={e['ks_stat']:.4f} "
                         f"z_mean={e['z_mean']:+.4f} z_var={e['z_var']:.4f} "
                         f"excluded={e['excluded']}"
                         + (" FLAGGED" if e["flagged"] else ""))
        for e in est.get("independence", []):
            if e.get("degenerate"):
                lines.append(f"indep s={e['s']} t={e['t']}: degenerate")
            else:
                lines.append(f"indep s={e['s']} t={e['t']}: "
                             f"corr={e['correlation']:+.4f} se={e['se']:.4f}")
        if "identity_residuals" in est:
            lines.append(f"identity residuals: {est['identity_residuals']}")
        if "diagnostics" in est:
            for k, v in est["diagnostics"].items():
                lines.append(f"diag {k} = {v:.5f}")
    else:
        raise UsageError(f"cannot render artifact of kind {kind!r}")
    return "\n".join(lines) + "\n"


def _cmd_report(args) -> int:
    doc = json.loads(Path(args.infile).read_text("utf-8"))
    text = _render_report(doc)
    if args.out:
        Path(args.out).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def dispatch(argv) -> int:
    """Run one subcommand; returns the exit status."""
    from .distributions import ModelValidationError
    from .sampler import BudgetExceededError
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        handler = {"sample": _cmd_sample, "encode": _cmd_encode,
                   "verify": _cmd_verify, "mc": _cmd_mc,
                   "report": _cmd_report}[args.command]
        return handler(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExceededError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except ModelValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
