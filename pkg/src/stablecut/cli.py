"""Command-line entry point.

Exit codes: 0 success, 2 parse/usage error, 3 infeasible,
4 not min-cut representable, 5 enumeration budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction

from .flow_solver import merge_parallel_arcs
from .formats import Document, ParseError, fmt_rat, format_matching, parse, serialize
from .matching_core import LimitExceeded
from .mincut_framework import (
    GammaTooSmall,
    NotRepresentable,
    ObjectiveSpec,
    SublatticeSpec,
    build_cut_digraph,
    check_representability,
    differentials,
    meta_rotations,
    minimize,
)
from .rotation_lattice import rotation_order
from .siblings_apps import (
    ActivityError,
    SiblingInstance,
    activity_stable,
    co_located,
    separated_count,
    solve_msdp_bruteforce,
    solve_msss,
    solve_mssp,
)
from .two_stage import DepartureSampler, sample_budget, solve_exp_2sto, solve_saa

EXIT_OK, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_NOT_REPR, EXIT_LIMIT = 0, 2, 3, 4, 5


class UsageError(ValueError):
    pass


def enum_limit() -> int:
    return int(os.environ.get("STABLECUT_ENUM_LIMIT", "100000"))


def _load(path: str) -> Document:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise UsageError(str(e)) from None
    try:
        return parse(text)
    except ParseError as e:
        raise UsageError(f"{path}:{e.line}: {e.msg}") from None


def _rat(s: str) -> Fraction:
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational: {s!r}") from None


def _emit(args, payload: dict, text: str):
    if args.json:
        print(json.dumps(payload, indent=2, default=str))
    else:
        print(text)


def _mdict(m) -> dict:
    return dict(m.items())


def cmd_solve_mwsm(args) -> int:
    doc = _load(args.file)
    order = rotation_order(doc.inst)
    m, v = minimize(order, SublatticeSpec.all(), ObjectiveSpec.linear(doc.weights))
    _emit(args, {"matching": _mdict(m), "value": fmt_rat(v)}, f"matching {format_matching(m)}\nvalue {fmt_rat(v)}")
    return EXIT_OK


def _family(doc: Document, name: str) -> SublatticeSpec:
    if name == "all":
        return SublatticeSpec.all()
    if name == "activity-stable":
        acts = doc.activity_structure()
        return SublatticeSpec.structured(lambda m: activity_stable(m, acts, doc.pairs))
    if name == "co-located":
        return SublatticeSpec.structured(lambda m: all(co_located(m, a, b) for a, b in doc.pairs))
    raise UsageError(f"unknown family {name}")


def _objective(doc: Document, name: str) -> ObjectiveSpec:
    if name == "weights":
        return ObjectiveSpec.linear(doc.weights)
    if name == "separated":
        return ObjectiveSpec.oracle(lambda m: separated_count(m, doc.pairs))
    if name == "activity-mismatch":
        acts = doc.activity_structure()
        return ObjectiveSpec.oracle(
            lambda m: sum(not activity_stable(m, acts, [p]) for p in doc.pairs)
        )
    raise UsageError(f"unknown objective {name}")


def cmd_certify(args) -> int:
    doc = _load(args.file)
    order = rotation_order(doc.inst)
    v = check_representability(
        order, _family(doc, args.family), _objective(doc, args.objective),
        mode=args.mode, samples=args.samples, seed=args.seed, limit=enum_limit(),
    )
    rec = v.record()
    lines = [f"status {v.status}"]
    if v.condition:
        lines.append(f"condition {v.condition}")
    if v.witness is not None:
        lines.append(f"witness {rec['witness']}")
    if v.downgraded:
        lines.append("note: family too large for exact checking; sampled verdict only")
    _emit(args, rec, "\n".join(lines))
    return EXIT_NOT_REPR if v.status == "NOT_REPRESENTABLE" else EXIT_OK


def cmd_solve_msss(args) -> int:
    doc = _load(args.file)
    m, count = solve_msss(SiblingInstance(doc.inst, doc.pairs))
    _emit(args, {"matching": _mdict(m), "separated": count},
          f"matching {format_matching(m)}\nseparated {count}")
    return EXIT_OK


def cmd_solve_mssp(args) -> int:
    doc = _load(args.file)
    m = solve_mssp(doc.inst, doc.activity_structure(), doc.pairs)
    if m is None:
        _emit(args, {"matching": None}, "no activity-stable matching")
        return EXIT_INFEASIBLE
    _emit(args, {"matching": _mdict(m)}, f"matching {format_matching(m)}")
    return EXIT_OK


def cmd_solve_msdp_bf(args) -> int:
    doc = _load(args.file)
    acts = doc.activity_structure()
    acts.validate(doc.inst)
    m = solve_msdp_bruteforce(doc.inst, acts, doc.pairs, limit=enum_limit())
    if m is None:
        _emit(args, {"matching": None}, "no activity-stable matching")
        return EXIT_INFEASIBLE
    _emit(args, {"matching": _mdict(m)}, f"matching {format_matching(m)}")
    return EXIT_OK


def _sampler_arg(s: str) -> Fraction:
    key, _, val = s.partition("=")
    if key != "depart-prob" or not val:
        raise argparse.ArgumentTypeError("expected depart-prob=P")
    return _rat(val)


def cmd_solve_2sto(args) -> int:
    doc = _load(args.file)
    if args.scenarios:
        try:
            with open(args.scenarios) as fh:
                frag = parse(fh.read(), aggregate=doc.inst)
        except OSError as e:
            raise UsageError(str(e)) from None
        except ParseError as e:
            raise UsageError(f"{args.scenarios}:{e.line}: {e.msg}") from None
        doc.scenarios = frag.scenarios
        if frag.first is not None:
            doc.first = frag.first
    ts = doc.two_stage()
    if args.lam is not None:
        ts.lam = args.lam
    sampling = args.sampler is not None or (not doc.scenarios and doc.depart is not None)
    if sampling:
        if args.eps is None or args.alpha is None:
            raise UsageError("sampler mode needs --eps and --alpha")
        p = args.sampler if args.sampler is not None else doc.depart[0]
        ts.sampler = DepartureSampler(p)
        seed = args.seed if args.seed is not None else (doc.depart[1] if doc.depart else 0)
        res = solve_saa(ts, args.eps, args.alpha, seed)
        payload = {
            "first": _mdict(res.first), "value_estimate": fmt_rat(res.value),
            "samples": res.samples, "capped": res.capped,
        }
        text = f"first {format_matching(res.first)}\nvalue_estimate {fmt_rat(res.value)}\nsamples {res.samples}"
        if res.capped:
            text += f"\nwarning: sample count capped at {sample_budget()}; the SAA guarantee is void"
        _emit(args, payload, text)
        return EXIT_OK
    if not doc.scenarios:
        raise UsageError("no scenarios: use scenario blocks, --scenarios or --sampler")
    res = solve_exp_2sto(ts)
    lines = [f"first {format_matching(res.first)}"]
    for s, m in zip(ts.scenarios, res.second):
        lines.append(f"scenario {s.name} {format_matching(m)}")
    lines.append(f"value {fmt_rat(res.value)}")
    payload = {
        "first": _mdict(res.first),
        "second": {s.name: _mdict(m) for s, m in zip(ts.scenarios, res.second)},
        "value": fmt_rat(res.value),
    }
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_generate(args) -> int:
    from .experiment import generate_random

    inst = generate_random(args.n, args.seed, args.quota_mode)
    text = serialize(inst)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiment import ExperimentConfig, rows_to_csv, run_experiment, summarize

    lams = [_rat(x) for x in args.lambdas.split(",")] if args.lambdas else None
    kw = dict(n=args.n, p=args.p, trials=args.trials, samples=args.samples, seed=args.seed,
              quota_mode=args.quota_mode)
    if lams:
        kw["lambdas"] = lams
    try:
        cfg = ExperimentConfig(**kw)
    except ValueError as e:
        raise UsageError(str(e)) from None
    rows = run_experiment(cfg, progress=lambda i, n: print(f"trial {i}/{n}", file=sys.stderr))
    text = rows_to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    stats = summarize(rows)
    print(" ".join(f"{k}={v}" for k, v in stats.items()), file=sys.stderr)
    return EXIT_OK if stats.get("all_ok", True) else 1


def cmd_dump_rotations(args) -> int:
    doc = _load(args.file)
    order = rotation_order(doc.inst)
    recs = []
    lines = [f"m0 {format_matching(order.m0)}", f"mz {format_matching(order.mz)}"]
    for r in order.rotations:
        plus = sorted(f"{a}:{b}" for a, b in r.plus)
        minus = sorted(f"{a}:{b}" for a, b in r.minus)
        recs.append({"id": r.id, "plus": plus, "minus": minus})
        lines.append(f"rotation {r.id} plus {' '.join(plus)} minus {' '.join(minus)}")
    for u, v in order.hasse:
        lines.append(f"cover {u} {v}")
    _emit(args, {"m0": _mdict(order.m0), "mz": _mdict(order.mz), "rotations": recs,
                 "covers": order.hasse}, "\n".join(lines))
    return EXIT_OK


def cmd_dump_digraph(args) -> int:
    doc = _load(args.file)
    order = rotation_order(doc.inst)
    part = meta_rotations(order, _family(doc, args.family), enum_limit())
    tables = differentials(order, part, _objective(doc, args.objective))
    bundle = build_cut_digraph(order, part, tables, args.gamma)
    net = merge_parallel_arcs(bundle.network, prune_zero=True)
    arcs = [(str(u), str(v), str(c) if not isinstance(c, Fraction) else fmt_rat(c)) for u, v, c in net.arcs]
    lines = [f"arc {u} {v} {c}" for u, v, c in arcs]
    lines += [f"gamma {fmt_rat(bundle.gamma)}", f"constant {fmt_rat(bundle.constant)}"]
    _emit(args, {"arcs": arcs, "gamma": fmt_rat(bundle.gamma), "constant": fmt_rat(bundle.constant)},
          "\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stablecut", description="Optimization over stable matchings via minimum cuts.")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    sub = p.add_subparsers(dest="cmd", required=True)

    def with_file(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("file")
        sp.set_defaults(fn=fn)
        return sp

    with_file("solve-mwsm", cmd_solve_mwsm, "minimum weight stable matching (weight lines)")
    sp = with_file("certify", cmd_certify, "check min-cut representability")
    sp.add_argument("--family", choices=["all", "activity-stable", "co-located"], default="all")
    sp.add_argument("--objective", choices=["weights", "separated", "activity-mismatch"], default="weights")
    sp.add_argument("--mode", choices=["exact", "sampled"], default="exact")
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    with_file("solve-msss", cmd_solve_msss, "fewest separated sibling pairs")
    with_file("solve-mssp", cmd_solve_mssp, "siblings in the same activity (shared activity order)")
    with_file("solve-msdp-bf", cmd_solve_msdp_bf, "siblings in the same activity, exhaustive search")
    sp = with_file("solve-2sto", cmd_solve_2sto, "two-stage stochastic stable matching")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--scenarios", metavar="FILE")
    src.add_argument("--sampler", type=_sampler_arg, metavar="depart-prob=P")
    sp.add_argument("--eps", type=_rat)
    sp.add_argument("--alpha", type=_rat)
    sp.add_argument("--lambda", dest="lam", type=_rat)
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("generate", help="uniform random market")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--quota-mode", choices=["unit", "random"], default="unit")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("experiment", help="first-stage comparison sweep (CSV)")
    sp.add_argument("--n", type=int, default=50)
    sp.add_argument("--p", type=_rat, default=Fraction(1, 4))
    sp.add_argument("--lambdas", help="comma-separated rationals (default 1/10..2 step 1/10)")
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--samples", type=int, default=20, help="training scenarios per trial")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--quota-mode", choices=["unit", "random"], default="unit")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_experiment)

    with_file("dump-rotations", cmd_dump_rotations, "rotations and their cover relation")
    sp = with_file("dump-digraph", cmd_dump_digraph, "cut digraph of an objective")
    sp.add_argument("--family", choices=["all", "activity-stable", "co-located"], default="all")
    sp.add_argument("--objective", choices=["weights", "separated", "activity-mismatch"], default="weights")
    sp.add_argument("--gamma", type=_rat)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except ActivityError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except NotRepresentable as e:
        print(f"not representable (condition {e.condition}): {e}", file=sys.stderr)
        return EXIT_NOT_REPR
    except GammaTooSmall as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except LimitExceeded as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_LIMIT
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
