"""Command-line pipeline: synth -> construct -> train -> attack, plus sweeps.

Exit codes: 0 success, 1 user error, 2 internal error. Any flag can also be
set through an environment variable ``HGATTACK_<FLAG>`` (dashes become
underscores), e.g. ``HGATTACK_SEED=3``.
"""

import argparse
import json
import os
import sys
import traceback

from . import construction
from .attack import STRATEGIES, AttackConfig
from .dataset import gen_synthetic, load_content_file, make_split, write_content_file
from .errors import HgAttackError, ParameterError, ShapeError
from .evaluation import (ExperimentReport, ExperimentSpec, _meta, attack_targets,
                         select_targets, summarize, sweep_gamma, sweep_k, write_sweep_csv)
from .hgnn import TrainConfig, accuracies, load_model, save_model, train

ENV_PREFIX = "HGATTACK_"


class UsageError(HgAttackError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _echo(args):
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("config: " + json.dumps(resolved, sort_keys=True))


def _load_data(path, normalize):
    d = load_content_file(path)
    return d.row_normalized() if normalize else d


def _test_size(value):
    return None if value in ("rest", "all") else int(value)


def cmd_synth(args):
    d = gen_synthetic(args.nodes, args.classes, args.dim, args.spread, args.seed)
    write_content_file(d, args.out)
    print(f"wrote {d.num_nodes} nodes, {d.num_classes} classes, dim {d.dim} to {args.out}")


def cmd_construct(args):
    d = _load_data(args.data, args.normalize)
    hg, resolved = construction.build(
        d.features, args.method, k=args.k, epsilon=args.epsilon, lam=args.lam, tau=args.tau,
        candidate_pool=args.pool, include_centroid=not args.exclude_centroid,
    )
    print("resolved: " + json.dumps(resolved, sort_keys=True))
    construction.save_hypergraph(hg, args.out, extra={"method": args.method, "params": resolved})
    summary = hg.summary()
    print(f"|V|={summary['num_nodes']} |E|={summary['num_edges']} "
          f"mean edge size={summary['mean_edge_size']:.3f}")


def _check_compatible(d, hg, data_path, hg_path):
    if d.num_nodes != hg.num_nodes:
        raise ShapeError(
            f"{data_path} has {d.num_nodes} nodes but {hg_path} has {hg.num_nodes}"
        )


def cmd_train(args):
    d = _load_data(args.data, args.normalize)
    hg = construction.load_hypergraph(args.hypergraph)
    _check_compatible(d, hg, args.data, args.hypergraph)
    split_seed = args.seed if args.split_seed is None else args.split_seed
    split = make_split(d, args.per_class, args.val_size, _test_size(args.test_size), split_seed)
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, weight_decay=args.weight_decay,
                      seed=args.seed, hidden_dim=args.hidden)
    model = train(d, hg, split, cfg)
    acc = accuracies(model, d, hg, split)
    meta = {
        "split": {"per_class_train": args.per_class, "val_size": args.val_size,
                  "test_size": args.test_size, "seed": split_seed},
        "num_nodes": d.num_nodes,
        "normalize": args.normalize,
        "accuracy": acc,
    }
    save_model(model, args.out, extra=meta)
    print(f"best epoch {model.best_epoch}: train acc {acc['train']:.4f} "
          f"val acc {acc['val']:.4f} test acc {acc['test']:.4f}")


def _strategies(value):
    if value == "all":
        return list(STRATEGIES)
    names = [s.strip() for s in value.split(",") if s.strip()]
    bad = [s for s in names if s not in STRATEGIES]
    if bad or not names:
        raise ParameterError(
            f"unknown strategy {', '.join(bad) or value!r}; valid: {', '.join(STRATEGIES)}, all"
        )
    return names


def _attack_configs(args):
    return [
        AttackConfig(strategy=s, budget=args.gamma, filter_size=args.filter_size,
                     ig_steps=args.ig_steps, seed=args.seed, ig_path=args.ig_path,
                     score=args.score, frozen_norm=args.frozen_norm)
        for s in _strategies(args.strategy)
    ]


def cmd_attack(args):
    configs = _attack_configs(args)
    model, meta = load_model(args.model)
    normalize = meta.get("normalize", False)
    d = _load_data(args.data, normalize)
    hg, hg_meta = construction.load_hypergraph(args.hypergraph, with_meta=True)
    _check_compatible(d, hg, args.data, args.hypergraph)
    if d.dim != model.input_dim or d.num_classes != model.num_classes:
        raise ShapeError(
            f"{args.model} expects dim {model.input_dim} and {model.num_classes} classes; "
            f"{args.data} has dim {d.dim} and {d.num_classes} classes"
        )
    sm = meta.get("split")
    if not sm:
        raise ParameterError(f"{args.model} carries no split information")
    split = make_split(d, sm["per_class_train"], sm["val_size"], _test_size(sm["test_size"]),
                       sm["seed"])
    targets = select_targets(model, d, hg, split, args.targets, args.seed)
    outcomes = attack_targets(model, hg, d.features, d.labels, targets, configs, args.jobs)
    results = {s: summarize(outs, args.average_over) for s, outs in outcomes.items()}

    spec = ExperimentSpec(
        dataset=d, dataset_name=os.path.basename(args.data),
        construction=hg_meta.get("method", "file"),
        train_config=model.config or TrainConfig(),
        per_class_train=sm["per_class_train"], val_size=sm["val_size"],
        test_size=_test_size(sm["test_size"]), split_seed=sm["seed"],
        attacks=configs, target_count=args.targets, target_seed=args.seed,
        jobs=args.jobs, average_over=args.average_over,
    )
    params = dict(hg_meta.get("params") or {}, file=os.path.basename(args.hypergraph))
    prep = {"hypergraph": hg, "construction_params": params,
            "accuracy": accuracies(model, d, hg, split)}
    meta_out = _meta(spec, prep, targets, configs)
    meta_out["resolved_flags"] = {k: v for k, v in sorted(vars(args).items())
                                  if k not in ("func", "jobs", "out", "csv", "margins")}
    report = ExperimentReport(meta=meta_out, results=results, outcomes=outcomes)
    report.write_json(args.out)
    if args.csv:
        report.write_csv(args.csv)
    if args.margins:
        report.write_margins(args.margins)
    for s, r in results.items():
        aml = "n/a" if r["aml"] is None else f"{r['aml']:.2f}"
        rt = "n/a" if r["rt_mean"] is None else f"{r['rt_mean']:.4f}s"
        print(f"{s:12s} ASR {r['asr'] * 100:6.2f}%  AML {aml:>5s}  RT {rt}  "
              f"({r['successes']}/{r['attacks']})")


def _parse_values(text, kind):
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if kind == "int" and ".." in part:
            lo, hi = part.split("..")
            values.extend(range(int(lo), int(hi) + 1))
        else:
            try:
                values.append(int(part))
            except ValueError:
                raise ParameterError(f"sweep value {part!r} is not an integer") from None
    if not values:
        raise ParameterError("empty sweep value list")
    unique = list(dict.fromkeys(values))
    if len(unique) != len(values):
        print(f"warning: duplicate sweep values removed, using {unique}", file=sys.stderr)
    return unique


def cmd_sweep(args):
    values = _parse_values(args.values, "int")
    d = _load_data(args.data, args.normalize)
    configs = _attack_configs(args)
    spec = ExperimentSpec(
        dataset=d, dataset_name=os.path.basename(args.data),
        construction="knn" if args.param == "k" else args.method,
        construction_params={"k": args.k, "epsilon": args.epsilon, "lam": args.lam},
        train_config=TrainConfig(seed=args.seed, epochs=args.epochs, hidden_dim=args.hidden),
        per_class_train=args.per_class, val_size=args.val_size,
        test_size=_test_size(args.test_size), split_seed=args.seed,
        attacks=configs, target_count=args.targets, target_seed=args.seed, jobs=args.jobs,
    )
    rows = sweep_gamma(spec, values) if args.param == "gamma" else sweep_k(spec, values)
    write_sweep_csv(args.out, rows)
    for row in rows:
        print(f"{row['param']}={row['value']:<3d} {row['strategy']:12s} ASR {row['asr'] * 100:6.2f}%")


def _add_attack_flags(p):
    p.add_argument("--strategy", default="all", help="strategy name, comma list, or 'all'")
    p.add_argument("--targets", type=int, default=100)
    p.add_argument("--gamma", type=int, default=10, help="flip budget (1..10)")
    p.add_argument("--filter-size", type=int, default=None,
                   help="gradient filter size M (default max(16, ceil(|E|/12)))")
    p.add_argument("--ig-steps", type=int, default=20)
    p.add_argument("--ig-path", choices=["coordinate", "row"], default="coordinate")
    p.add_argument("--score", choices=["signed", "absolute"], default="signed")
    p.add_argument("--frozen-norm", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)


def _add_split_flags(p):
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--val-size", type=int, default=500)
    p.add_argument("--test-size", default="1000", help="integer or 'rest'")


def build_parser():
    parser = _Parser(prog="hgattack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic Gaussian-cluster content file")
    p.add_argument("--nodes", type=int, default=200)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--spread", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("construct", help="build a hypergraph file from a content file")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["knn", "eps", "l1"], default="knn")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--exclude-centroid", action="store_true",
                   help="KNN: add k neighbours on top of the centroid")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--pool", type=int, default=None)
    p.add_argument("--normalize", action="store_true", help="row-normalize features")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("train", help="train the HGNN victim")
    p.add_argument("--data", required=True)
    p.add_argument("--hypergraph", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--normalize", action="store_true", help="row-normalize features")
    _add_split_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="attack sampled targets and write a report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--hypergraph", required=True)
    _add_attack_flags(p)
    p.add_argument("--average-over", choices=["successful", "all"], default="successful")
    p.add_argument("--csv", default=None, help="also write the flat results CSV")
    p.add_argument("--margins", default=None, help="also write the margin CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="ASR as a function of the budget or of KNN k")
    p.add_argument("--param", choices=["gamma", "k"], required=True)
    p.add_argument("--values", required=True, help="comma list, ranges like 1..10 allowed")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["knn", "eps", "l1"], default="knn")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--normalize", action="store_true")
    _add_split_flags(p)
    _add_attack_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    for subparser in sub.choices.values():
        _apply_env(subparser)
    return parser


def _apply_env(parser):
    for action in parser._actions:
        if not action.option_strings or action.dest == "help":
            continue
        key = ENV_PREFIX + action.dest.upper()
        if key not in os.environ:
            continue
        raw = os.environ[key]
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            value = action.type(raw) if action.type else raw
        parser.set_defaults(**{action.dest: value})
        action.required = False


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        _echo(args)
        args.func(args)
    except (HgAttackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
