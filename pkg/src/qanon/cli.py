"""Command-line entry point. Every invocation prints exactly one JSON document on stdout.

Exit codes: 0 = checks pass, 1 = violation found, 2 = inconclusive or usage/input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import core
from .core import ProcessorLayout, basis_from_name, is_anonymous, state_to_dict
from .errors import QanonError, InvalidParameter
from .netsim import (
    BROADCAST,
    DEFAULT_MAX_ROUNDS,
    DEFAULT_NODE_BUDGET,
    DIRECTED_RING,
    NetworkConfig,
    run_full_tree,
    sample_run,
)
from .protocols import CONSENSUS, LEADER_ELECTION, PROTOCOL_NAMES, build_protocol, outcome_spec
from .symmetry import COEFF_TOL, DEFAULT_GRID, DEFAULT_SEED, DEFAULT_TRIALS
from .verify import (
    EXIT_CODES,
    FAMILY_TOL,
    check_entanglement_required,
    check_fairness,
    check_total_correctness,
    classify_state,
    default_protocol,
    impossibility_report,
    leaf_violation,
)

log = logging.getLogger("qanon")

TOPOLOGY_ALIASES = {"broadcast": BROADCAST, "ring": DIRECTED_RING, "directed_ring": DIRECTED_RING}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- state sources


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _complexes(text: str) -> list[complex]:
    return [complex(x.replace(" ", "")) for x in text.split(",") if x.strip()]


def make_builtin(name: str, args) -> core.StateVector:
    m = args.m or 1
    if name == "w":
        return core.make_w(_need(args.n, "--n"))
    if name == "ghz":
        return core.make_ghz(_need(args.n, "--n"))
    if name == "perm":
        pattern = _need(args.pattern, "--pattern")
        if len(pattern) % m:
            raise InvalidParameter(f"pattern length {len(pattern)} is not a multiple of m={m}")
        return core.make_perm_closure(pattern, ProcessorLayout(len(pattern) // m, m))
    basis = basis_from_name(args.basis, m)
    if name == "gen_w":
        return core.make_generalized_w(_need(args.leader, "--leader"), _ints(_need(args.followers, "--followers")), basis)
    if name == "gen_ghz":
        return core.make_generalized_ghz(_complexes(_need(args.coefficients, "--coefficients")), basis, _need(args.n, "--n"))
    raise InvalidParameter(f"unknown builtin state {name!r}")


def _need(value, flag):
    if value is None:
        raise UsageError(f"missing {flag}")
    return value


def parse_state(source: str, m: int | None = None) -> tuple[core.StateVector, float]:
    """``name:params`` shorthand (``w:3``, ``ghz:4``, ``perm:0011``) or a path to a state JSON file."""
    if os.path.exists(source) or source.endswith(".json"):
        with open(source, encoding="utf-8") as fh:
            return core.state_from_dict(json.load(fh))
    name, _, rest = source.partition(":")
    m = m or 1
    if name == "w":
        return core.make_w(int(rest)), 1.0
    if name == "ghz":
        return core.make_ghz(int(rest)), 1.0
    if name == "perm":
        if len(rest) % m:
            raise InvalidParameter(f"pattern length {len(rest)} is not a multiple of m={m}")
        return core.make_perm_closure(rest, ProcessorLayout(len(rest) // m, m)), 1.0
    if name == "gen_w":
        # gen_w:<leader>:<f2,f3,...>[:<basis>]
        parts = rest.split(":")
        basis = basis_from_name(parts[2] if len(parts) > 2 else "computational", m)
        return core.make_generalized_w(int(parts[0]), _ints(parts[1]), basis), 1.0
    if name == "gen_ghz":
        # gen_ghz:<a0,a1,...>:<n>[:<basis>]
        parts = rest.split(":")
        basis = basis_from_name(parts[2] if len(parts) > 2 else "computational", m)
        return core.make_generalized_ghz(_complexes(parts[0]), basis, int(parts[1])), 1.0
    raise InvalidParameter(f"cannot interpret state source {source!r}")


# ---------------------------------------------------------------- helpers


def _state_info(state, factor) -> dict:
    return {"n": state.n, "m": state.m, "normalization_factor": factor}


def _defaults(args) -> dict:
    return {
        "max_rounds": getattr(args, "max_rounds", None),
        "node_budget": DEFAULT_NODE_BUDGET,
        "trials": getattr(args, "trials", None),
        "grid": getattr(args, "grid", None),
        "seed": getattr(args, "seed", None),
        "coefficient_tol": COEFF_TOL,
        "family_tol": FAMILY_TOL,
        "prune_threshold": core.PRUNE_TOL,
        "normalization_tol": core.NORM_TOL,
    }


def _protocol(args, state):
    if args.protocol_json:
        with open(args.protocol_json, encoding="utf-8") as fh:
            spec = json.load(fh)
        name, params = spec["protocol"], dict(spec.get("params", {}))
    else:
        name = _need(args.protocol, "--protocol")
        params = json.loads(args.params) if args.params else {}
    params.setdefault("n", state.n)
    if name in ("qle_gen", "qdc_gen"):
        params.setdefault("m", state.m)
    if name == "candidate_voter":
        params.setdefault("topology", _topology(args))
    return build_protocol(name, params)


def _topology(args) -> str:
    try:
        return TOPOLOGY_ALIASES[args.topology]
    except KeyError:
        raise InvalidParameter(f"unknown topology {args.topology!r}") from None


def _network(args, state) -> NetworkConfig:
    byz = frozenset(_ints(args.byzantine)) if args.byzantine else frozenset()
    return NetworkConfig(
        state.layout,
        topology=_topology(args),
        max_rounds=args.max_rounds,
        byzantine=byz,
        strategy=args.strategy,
        require_anonymous=not args.waive_anonymity,
    )


# ---------------------------------------------------------------- commands


def cmd_make_state(args):
    state = make_builtin(args.builtin, args)
    check = is_anonymous(state)
    doc = state_to_dict(state) | {"normalization_factor": 1.0, "anonymous": check.anonymous}
    print(f"normalization factor 1.0, anonymous={check.anonymous}", file=sys.stderr)
    return doc, 0


def cmd_run(args):
    state, factor = parse_state(args.state, args.m)
    protocol = _protocol(args, state)
    net = _network(args, state)
    result = sample_run(protocol, state, net, args.seed)
    reason = None
    if result.terminal:
        reason = leaf_violation(result.leaf.classical, net.honest(), outcome_spec(protocol))
    else:
        reason = "cutoff"
    doc = {
        "command": "run",
        "protocol": protocol.name,
        "state": _state_info(state, factor),
        "config": net.to_json(),
        "seed": args.seed,
        "transcript": result.transcript,
        "terminal": result.terminal,
        "statuses": result.leaf.statuses(),
        "violation": reason,
        "defaults": _defaults(args),
    }
    return doc, 0 if reason is None else 1


def _tree_docs(args):
    state, factor = parse_state(args.state, args.m)
    protocol = _protocol(args, state)
    net = _network(args, state)
    tree = run_full_tree(protocol, state, net)
    report = check_total_correctness(tree)
    fairness = None
    if protocol.task == LEADER_ELECTION and not tree.truncated:
        fairness = check_fairness(tree).to_json()
    return state, factor, protocol, net, tree, report, fairness


def cmd_tree(args):
    state, factor, protocol, net, tree, report, fairness = _tree_docs(args)
    doc = {
        "command": "tree",
        "protocol": protocol.name,
        "state": _state_info(state, factor),
        "correctness": report.to_json(),
        "fairness": fairness,
        "tree": tree.to_json(),
        "defaults": _defaults(args),
    }
    return doc, EXIT_CODES[report.verdict]


def cmd_verify(args):
    state, factor, protocol, net, tree, report, fairness = _tree_docs(args)
    doc = {
        "command": "verify",
        "protocol": protocol.name,
        "state": _state_info(state, factor),
        "correctness": report.to_json(),
        "fairness": fairness,
        "entanglement": check_entanglement_required(state).to_json(),
        "defaults": _defaults(args),
    }
    return doc, EXIT_CODES[report.verdict]


def cmd_classify(args):
    state, factor = parse_state(args.state, args.m)
    result = classify_state(state, trials=args.trials, seed=args.seed, grid_resolution=args.grid)
    doc = {"command": "classify", **result.to_json(), "state": _state_info(state, factor), "defaults": _defaults(args)}
    return doc, 0


def cmd_witness(args):
    state, factor = parse_state(args.state, args.m)
    protocol = None
    if args.protocol or args.protocol_json:
        protocol = _protocol(args, state)
    elif state.m == 1:
        protocol = default_protocol(args.task, state.n)
    report = impossibility_report(
        state,
        args.task,
        protocol=protocol,
        trials=args.trials,
        seed=args.seed,
        grid_resolution=args.grid,
        max_rounds=args.max_rounds,
    )
    doc = {"command": "witness", **report.to_json(), "state": _state_info(state, factor), "defaults": _defaults(args)}
    return doc, 1 if report.found else 0


# ---------------------------------------------------------------- parser


def _add_common(p, *, network=False, search=False):
    p.add_argument("--state", required=True, help="w:3, ghz:4, perm:0011, gen_w:..., gen_ghz:... or a JSON file")
    p.add_argument("--m", type=int, default=None, help="qubits per processor for pattern shorthands")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", default=None, help="also write the JSON document to this path")
    p.add_argument("--max-rounds", type=int, default=DEFAULT_MAX_ROUNDS)
    p.add_argument("--protocol", choices=PROTOCOL_NAMES, default=None)
    p.add_argument("--params", default=None, help="protocol parameters as a JSON object")
    p.add_argument("--protocol-json", default=None, help='file holding {"protocol": ..., "params": {...}}')
    p.add_argument("--topology", default="broadcast", choices=sorted(TOPOLOGY_ALIASES))
    if network:
        p.add_argument("--byzantine", default=None, help="comma-separated processor indices")
        p.add_argument("--strategy", default="silent", help="silent | flip | constant(v)")
        p.add_argument("--waive-anonymity", action="store_true")
    if search:
        p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
        p.add_argument("--grid", type=int, default=DEFAULT_GRID)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qanon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-state", help="build a state and print its JSON")
    p.add_argument("builtin", choices=["w", "ghz", "perm", "gen_w", "gen_ghz"])
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--pattern")
    p.add_argument("--leader", type=int)
    p.add_argument("--followers", help="comma-separated follower labels")
    p.add_argument("--coefficients", help="comma-separated complex coefficients, e.g. 1,1j")
    p.add_argument("--basis", default="computational", choices=["computational", "hadamard", "fourier"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_make_state)

    for name, func, help_ in (
        ("run", cmd_run, "sample one seeded execution"),
        ("tree", cmd_tree, "full execution tree with correctness and fairness"),
        ("verify", cmd_verify, "correctness, fairness and entanglement checks"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p, network=True)
        p.set_defaults(func=func)

    p = sub.add_parser("classify", help="W-family / GHZ-family / other")
    _add_common(p, search=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("witness", help="forbidden symmetric-move witness for a task")
    _add_common(p, search=True)
    p.add_argument("--task", required=True, choices=[LEADER_ELECTION, CONSENSUS])
    p.set_defaults(func=cmd_witness)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        doc, code = args.func(args)
    except (QanonError, UsageError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps({"error": str(exc)}))
        return 2
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
