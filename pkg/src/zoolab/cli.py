"""Command line entry point: ``zoolab generate|analyze|lineage|average|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import metrics
from .averaging import (
    epoch_average,
    epoch_average_sweep,
    interpolation_curve,
    is_converged,
    load_trajectory,
    make_soups,
    rebasin_merge,
    uniform_average,
)
from .averaging.average import SOUP_KEYS, soup_groups
from .data import make_dataset
from .errors import ZooLabError
from .grid import config_dump, load_zoo_config, with_seed
from .lineage import VARIATIONS, build_experiment, evaluate_tree, recover_model_tree, run_experiment, zoo_truth
from .lineage.experiments import DEFAULT_CHILDREN, load_nodes, result_row
from .store import scan_layout
from .zoo import generate_zoo

log = logging.getLogger("zoolab")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _k_value(text: str):
    if text == "auto":
        return "auto"
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer or 'auto'") from None
    if k < 1:
        raise argparse.ArgumentTypeError("k must be positive")
    return k


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="zoolab", description="Generate and analyse toy model zoos.")
    p.add_argument("--log", help="log file (default: zoolab.log in the zoo directory)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="train a zoo")
    g.add_argument("--config", default="demo", help="zoo config JSON, or 'demo'")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, help="override the config's global seed")
    g.add_argument("--workers", type=int, help="parallel workers (default: ZOOLAB_WORKERS or CPU count)")

    a = sub.add_parser("analyze", help="per-model metrics and diversity tables")
    a.add_argument("--zoo", required=True)
    a.add_argument("--out", help="output directory (default: <zoo>/analysis)")
    a.add_argument("--threshold", type=float, help="keep fine-tuned models with test accuracy above this")
    a.add_argument("--kurtosis-convention", choices=metrics.KURTOSIS_CONVENTIONS, default="excess")

    ln = sub.add_parser("lineage", help="recover the model tree")
    ln.add_argument("--zoo", required=True)
    ln.add_argument("--lambda", dest="lam", type=float, default=1.0)
    ln.add_argument("--k", type=_k_value, help="cluster count or 'auto' (default: number of pretrained models)")
    ln.add_argument("--out", default=None, help="tree JSON (default: <zoo>/tree.json)")
    ln.add_argument("--flip-kurtosis-penalty", action="store_true")
    ln.add_argument("--experiment", choices=sorted(VARIATIONS), help="run one lineage experiment instead")
    ln.add_argument("--children", type=int, default=DEFAULT_CHILDREN)
    ln.add_argument("--seed", type=int, default=0)

    av = sub.add_parser("average", help="weight-averaging experiments")
    av.add_argument("--zoo", required=True)
    av.add_argument("--mode", choices=("epochs", "sweep", "soup", "rebasin"), required=True)
    av.add_argument("--window", type=int, default=5)
    av.add_argument("--vary", choices=sorted(SOUP_KEYS), default="head_seed")
    av.add_argument("--out", default=None, help="results CSV (default: <zoo>/average_<mode>.csv)")
    av.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report", help="diversity, cluster-distance and lineage tables")
    r.add_argument("--zoo", required=True)
    r.add_argument("--out", help="output directory (default: <zoo>/report)")
    r.add_argument("--threshold", type=float, default=None)
    r.add_argument("--lambda", dest="lam", type=float, default=1.0)
    r.add_argument("--children", type=int, default=DEFAULT_CHILDREN)
    r.add_argument("--seed", type=int, default=0)
    return p


def _setup_log(path: Path) -> logging.Handler:
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return handler


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config_dump(obj))


# -- subcommands --------------------------------------------------------------------


def cmd_generate(args) -> None:
    cfg = load_zoo_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    log.info("resolved config: %s", json.dumps(cfg, sort_keys=True))
    log.info("global seed: %s", cfg.get("x_global_seed", 0))
    manifest = generate_zoo(cfg, args.out, workers=args.workers)
    failed = [e.id for e in manifest.entries if e.status != "ok"]
    log.info("zoo has %d pretrained and %d fine-tuned models", len(manifest.pretrained), len(manifest.finetuned))
    if failed:
        log.warning("diverged models: %s", ", ".join(failed))
    print(f"{len(manifest.pretrained)} pretrained, {len(manifest.finetuned)} fine-tuned models in {args.out}")


def cluster_rows(manifest, evaluator=None) -> list[dict]:
    rows = []
    for task, cs in metrics.cluster_distances(manifest, evaluator=evaluator).items():
        rows.append(
            {
                "task": task,
                "within_mean": cs.within_mean,
                "within_std": cs.within_std,
                "between_mean": cs.between_mean,
                "between_std": cs.between_std,
                "n_within": cs.n_within,
                "n_between": cs.n_between,
                "skipped": ";".join(cs.skipped),
            }
        )
    return rows


def cmd_analyze(args) -> None:
    manifest = scan_layout(args.zoo)
    out = Path(args.out) if args.out else Path(args.zoo) / "analysis"
    ev = metrics.ZooEvaluator(manifest, args.kurtosis_convention)
    metrics.write_csv(metrics.records_table(ev.records()), out / "metrics.csv")
    metrics.write_csv(metrics.pretrained_report(manifest, ev), out / "pretrained.csv")
    metrics.write_csv(metrics.diversity_report(manifest, args.threshold, ev), out / "diversity.csv")
    metrics.write_csv(cluster_rows(manifest, ev), out / "cluster_distances.csv")
    print(f"wrote metrics.csv, pretrained.csv, diversity.csv, cluster_distances.csv to {out}")


def cmd_lineage(args) -> None:
    manifest = scan_layout(args.zoo)
    out = Path(args.out) if args.out else Path(args.zoo) / "tree.json"
    flip = args.flip_kurtosis_penalty
    if args.experiment:
        res = run_experiment(manifest, args.experiment, args.children, args.lam, args.seed, flip, k=args.k)
        doc = {
            "experiment": result_row(res),
            "nodes": [[mid, ep] for mid, ep in res.experiment.nodes],
            "tree": res.tree.to_json(),
            "truth": res.experiment.truth.to_json(),
        }
    else:
        ids, truth = zoo_truth(manifest)
        k = len(truth.roots) if args.k is None else args.k
        tree = recover_model_tree([manifest.load(i) for i in ids], k, lam=args.lam, seed=args.seed, flip=flip)
        rep = evaluate_tree(tree, truth)
        doc = {
            "model_ids": ids,
            "lambda": args.lam,
            "k": k,
            "seed": args.seed,
            "flip_kurtosis_penalty": flip,
            "tree": tree.to_json(),
            "evaluation": vars(rep),
        }
    _write_json(doc, out)
    print(f"wrote {out}")


def _join(values) -> str:
    return ";".join(repr(v) if isinstance(v, float) else str(v) for v in values)


def _member_row(group_id, ids, accs, merged_acc, **extra) -> dict:
    row = {
        "group_id": group_id,
        "member_ids": _join(ids),
        "member_accuracies": _join(accs),
        "merged_accuracy": merged_acc,
        "delta_vs_max_member": merged_acc - max(accs),
    }
    row.update(extra)
    return row


def average_rows(manifest, mode: str, window: int = 5, vary: str = "head_seed", seed: int = 0) -> list[dict]:
    datasets = {}

    def ds_of(entry):
        spec = entry.factors.dataset
        if spec not in datasets:
            datasets[spec] = make_dataset(spec)
        return datasets[spec]

    rows = []
    ok = [e for e in manifest.finetuned if e.status == "ok"]
    if mode == "epochs":
        for e in ok:
            traj = load_trajectory(manifest, e)
            last = traj.checkpoints[-window:]
            ds = ds_of(e)
            accs = [metrics.evaluate(c, ds)["accuracy"] for c in last]
            merged = metrics.evaluate(epoch_average(traj, window), ds)["accuracy"]
            rows.append(
                _member_row(e.id, [c.epoch for c in last], accs, merged, converged=is_converged(e, window))
            )
    elif mode == "sweep":
        for e in ok:
            for r in epoch_average_sweep(load_trajectory(manifest, e), window, ds_of(e)):
                rows.append({"model_id": e.id, **r})
    elif mode == "soup":
        for s in make_soups(manifest, vary, datasets):
            rows.append(_member_row(s.group_id, s.member_ids, s.member_accs, s.merged_acc, vary_key=vary))
    elif mode == "rebasin":
        rows = rebasin_rows(manifest, ds_of, seed)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return rows


def rebasin_rows(manifest, ds_of, seed: int = 0) -> list[dict]:
    """Aligned merges of sibling pairs (cells that differ only in head seed)
    and of the same cell fine-tuned from consecutive pretrained models."""
    pairs = [("sibling", *entries[:2]) for _, entries in soup_groups(manifest, "head_seed")]
    by_cell = {(e.parent_id, e.factors.fine.name): e for e in manifest.finetuned if e.status == "ok"}
    pres = [p.id for p in manifest.pretrained]
    for a, b in zip(pres, pres[1:]):
        for (pid, name), e in by_cell.items():
            if pid == a and (b, name) in by_cell:
                pairs.append(("cross", e, by_cell[(b, name)]))
    rows = []
    for kind, a, b in pairs:
        ds = ds_of(a)
        ma, mb = manifest.load(a), manifest.load(b)
        accs = [metrics.evaluate(ma, ds)["accuracy"], metrics.evaluate(mb, ds)["accuracy"]]
        merged = metrics.evaluate(rebasin_merge([ma, mb], 0, seed), ds)["accuracy"]
        naive = metrics.evaluate(uniform_average([ma, mb]), ds)["accuracy"]
        curve = interpolation_curve(ma, mb, ds, seed=seed)
        extra = {"pair_kind": kind, "unaligned_accuracy": naive}
        extra.update({f"interp_{c['alpha']:g}": c["accuracy"] for c in curve})
        rows.append(_member_row(f"{a.id}+{b.id}", [a.id, b.id], accs, merged, **extra))
    return rows


def cmd_average(args) -> None:
    manifest = scan_layout(args.zoo)
    out = Path(args.out) if args.out else Path(args.zoo) / f"average_{args.mode}.csv"
    rows = average_rows(manifest, args.mode, args.window, args.vary, args.seed)
    metrics.write_csv(rows, out)
    print(f"wrote {len(rows)} rows to {out}")


def lineage_eval_rows(manifest, lam=1.0, children=DEFAULT_CHILDREN, seed=0) -> list[dict]:
    rows = []
    cache = {}
    for variation in VARIATIONS:
        for flip in (False, True):
            if variation not in cache:
                cache[variation] = load_nodes(manifest, build_experiment(manifest, variation, children).nodes)
            res = run_experiment(manifest, variation, children, lam, seed, flip, models=cache[variation])
            rows.append(result_row(res))
    return rows


def cmd_report(args) -> None:
    manifest = scan_layout(args.zoo)
    out = Path(args.out) if args.out else Path(args.zoo) / "report"
    ev = metrics.ZooEvaluator(manifest)
    metrics.write_csv(metrics.diversity_report(manifest, args.threshold, ev), out / "diversity.csv")
    metrics.write_csv(cluster_rows(manifest, ev), out / "cluster_distances.csv")
    metrics.write_csv(lineage_eval_rows(manifest, args.lam, args.children, args.seed), out / "lineage_eval.csv")
    print(f"wrote diversity.csv, cluster_distances.csv, lineage_eval.csv to {out}")


COMMANDS = {
    "generate": cmd_generate,
    "analyze": cmd_analyze,
    "lineage": cmd_lineage,
    "average": cmd_average,
    "report": cmd_report,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if args.command != "generate" and not Path(args.zoo).is_dir():
        print(f"zoolab: error: zoo directory {args.zoo} not found", file=sys.stderr)
        return EXIT_DATA
    base = Path(args.out if args.command == "generate" else args.zoo)
    handler = _setup_log(Path(args.log) if args.log else base / "zoolab.log")
    try:
        log.info("command %s with arguments %s", args.command, json.dumps(vars(args), sort_keys=True, default=str))
        COMMANDS[args.command](args)
    except (ZooLabError, OSError, ValueError, KeyError) as exc:
        log.error("%s failed: %s", args.command, exc)
        print(f"zoolab: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
