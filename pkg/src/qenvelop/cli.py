"""Command-line interface.

Exit status: 0 on success, 1 on a domain or validation failure, 2 on usage,
I/O or parse errors. Results go to stdout (or ``--out``) as ``key=value``
lines or CSV, headed by ``#`` comment lines holding the configuration and the
SHA-256 of every input file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .discrimination import helstrom_binary, pretty_good_measurement
from .envelopment import EnvelopmentMap, check_envelopment, envelop_with_leakage
from .exceptions import ParseError, QEnvelopError
from .fileformats import file_hash, load_map, load_model, save_map, save_model, table_to_csv
from .model import probability_table, validate_model
from .protocols import (
    AttackSpec,
    ProtocolSpec,
    build_model,
    exact_qber,
    protocol_schedule,
    sift_and_estimate_qber,
)
from .trials import (
    fit_model,
    greedy_discrimination_policy,
    load_log,
    outcome_counts,
    run_trials,
    save_log,
    stream_generator,
)

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _provenance(args) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "input_flags")}
    inputs = {k: file_hash(getattr(args, k)) for k in args.input_flags if getattr(args, k, None)}
    return {"tool": f"qenvelop {__version__}", "config": config, "inputs": inputs}


def _comment_header(args) -> list:
    prov = _provenance(args)
    return [
        f"tool: {prov['tool']}",
        "config: " + json.dumps(prov["config"], sort_keys=True),
        "inputs: " + json.dumps(prov["inputs"], sort_keys=True),
    ]


def _emit(args, body: str):
    text = "".join(f"# {line}\n" for line in _comment_header(args)) + body
    if getattr(args, "out", None):
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _kv(**items) -> str:
    out = []
    for k, v in items.items():
        out.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(out) + "\n"


def _pair(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2 or not all(parts):
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    return tuple(parts)


def _float_pair(text):
    a, b = _pair(text)
    try:
        return float(a), float(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two numbers, got {text!r}") from None


# -- subcommands ----------------------------------------------------------------
def cmd_validate(args):
    report = validate_model(load_model(args.model))
    _emit(args, _kv(valid=str(report.ok).lower(), violations=len(report.violations)) + "".join(f"violation: {v}\n" for v in report.violations))
    return 0 if report.ok else 1


def cmd_table(args):
    model = load_model(args.model)
    _emit(args, table_to_csv(probability_table(model)))
    return 0


def cmd_envelop(args):
    alpha = load_model(args.model)
    beta, f = envelop_with_leakage(alpha, args.r, args.policy, args.pair)
    prov = _provenance(args)
    save_model(beta, args.out, prov)
    save_map(f, args.map, prov)
    sys.stdout.write(_kv(beta=args.out, map=args.map, beta_dim=beta.dim, r=float(args.r), beta_id=beta.model_id))
    return 0


def cmd_check(args):
    alpha = load_model(args.model)
    beta = load_model(args.beta) if args.beta else alpha
    f = load_map(args.map) if args.map else EnvelopmentMap.identity(alpha)
    res = check_envelopment(alpha, beta, f, args.tol)
    b, j = res.witness if res.witness else (("",) * 3, "")
    _emit(
        args,
        _kv(
            holds=str(res.holds).lower(),
            max_deviation=float(res.max_deviation),
            tol=float(args.tol),
            witness_command=",".join(b),
            witness_outcome=j,
        ),
    )
    return 0 if res.holds else 1


def _read_schedule(path):
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError("schedule lines must hold b_A<TAB>b_B<TAB>b_E", lineno)
        rows.append(tuple(parts))
    return rows


def cmd_simulate(args):
    model = load_model(args.model)
    if args.schedule:
        schedule = _read_schedule(args.schedule)
    elif args.policy == "greedy":
        schedule = greedy_discrimination_policy(model, alice=args.alice)
    else:
        public = model.public_commands()
        if args.policy == "cycle":
            schedule = public
        else:
            u = stream_generator(args.seed, stream=1).random(args.trials)
            schedule = [public[i] for i in np.minimum((u * len(public)).astype(int), len(public) - 1).tolist()]
    log = run_trials(model, schedule, args.trials, args.seed)
    prov = _provenance(args)
    log = log.with_extra(config=json.dumps(prov["config"], sort_keys=True), inputs=json.dumps(prov["inputs"], sort_keys=True))
    save_log(log, args.out)
    sys.stdout.write(_kv(log=args.out, trials=len(log), seed=args.seed, model_id=log.model_id))
    return 0


def _spec_from_args(args):
    protocol = ProtocolSpec(args.protocol, args.theta)
    attack = AttackSpec(args.attack, args.fraction, args.basis, args.r if args.attack == "leakage" else 0.0)
    return protocol, attack


def cmd_qber(args):
    protocol, attack = _spec_from_args(args)
    model = build_model(protocol, attack)
    exact = exact_qber(model, protocol, attack)
    schedule = protocol_schedule(model, protocol, attack, args.trials, args.seed)
    log = run_trials(model, schedule, args.trials, args.seed)
    est = sift_and_estimate_qber(log, protocol, args.sample_fraction)
    body = _kv(
        protocol=protocol.kind,
        attack=attack.kind,
        trials=args.trials,
        seed=args.seed,
        exact_qber=float(exact),
        estimated_qber=float(est.qber),
        halfwidth_3sigma=float(est.confidence_halfwidth),
        n_sifted=est.n_sifted,
        n_compared=est.n_compared,
        within_halfwidth=str(est.covers(exact)).lower(),
    )
    if args.counts:
        buf = io.StringIO()
        for line in _comment_header(args):
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["b_A", "b_B", "b_E", "outcome", "count"])
        for cmd, counter in sorted(outcome_counts(log).items()):
            for o, n in sorted(counter.items()):
                w.writerow([*cmd, o, n])
        Path(args.counts).write_text(buf.getvalue())
    _emit(args, body)
    return 0


def _povm_lines(povm):
    lines = []
    for outcome, m in povm.items():
        flat = ";".join(f"{z.real!r},{z.imag!r}" for z in np.asarray(m).ravel())
        lines.append(f"povm[{outcome}]={flat}\n")
    return "".join(lines)


def cmd_discriminate(args):
    model = load_model(args.model)
    labels = model.commands.alice
    if args.pgm:
        res = pretty_good_measurement([model.state(a) for a in labels], None, labels)
        body = _kv(method="pretty_good", commands=",".join(labels), error_probability=float(res.error_probability))
    else:
        a0, a1 = args.pair or labels[:2]
        res = helstrom_binary(model.state(a0), model.state(a1), args.priors, labels=(a0, a1))
        overlap = abs(np.vdot(model.state(a0), model.state(a1)))
        body = _kv(
            method="helstrom",
            pair=f"{a0},{a1}",
            priors=f"{args.priors[0]!r},{args.priors[1]!r}",
            overlap=float(overlap),
            error_probability=float(res.error_probability),
        )
    _emit(args, body + _povm_lines(res.povm))
    return 0


def cmd_fit(args):
    model = load_model(args.model)
    log = load_log(args.log)
    rep = fit_model(model, log)
    buf = io.StringIO()
    buf.write(_kv(max_tv=float(rep.max_tv), n_min=rep.n_min, bound=float(rep.bound), rows=len(rep.per_command)))
    for w in rep.warnings:
        buf.write(f"warning: {w}\n")
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["b_A", "b_B", "b_E", "outcome", "count", "predicted", "tv"])
    for cmd, row in rep.per_command.items():
        for o, p in row.predicted.items():
            out.writerow([*cmd, o, row.counts.get(o, 0), repr(float(p)), repr(float(row.tv))])
    _emit(args, buf.getvalue())
    return 0


# -- parser ---------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qenvelop", description="Quantum-model envelopment workbench and QKD attack simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", help="check a model file's invariants")
    s.add_argument("--model", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_validate, input_flags=("model",))

    s = sub.add_parser("table", help="probability table as CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_table, input_flags=("model",))

    s = sub.add_parser("envelop", help="leakage envelopment of a model")
    s.add_argument("--model", required=True)
    s.add_argument("--r", type=float, required=True)
    s.add_argument("--policy", choices=("helstrom", "pgm"), default="helstrom")
    s.add_argument("--pair", type=_pair)
    s.add_argument("--out", required=True, help="path of the enveloping model")
    s.add_argument("--map", required=True, help="path of the envelopment map")
    s.set_defaults(func=cmd_envelop, input_flags=("model",))

    s = sub.add_parser("check", help="verify that --beta envelops --model via --map")
    s.add_argument("--model", required=True)
    s.add_argument("--beta")
    s.add_argument("--map")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--out")
    s.set_defaults(func=cmd_check, input_flags=("model", "beta", "map"))

    s = sub.add_parser("simulate", help="run trials and write a run log")
    s.add_argument("--model", required=True)
    s.add_argument("--schedule", help="file of tab-separated commands, cycled")
    s.add_argument("--policy", choices=("uniform", "cycle", "greedy"), default="uniform")
    s.add_argument("--alice", help="Alice's fixed command for the greedy policy")
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate, input_flags=("model", "schedule"))

    s = sub.add_parser("qber", help="exact and sampled QBER of a protocol under attack")
    s.add_argument("--protocol", choices=("bb84", "b92"), default="bb84")
    s.add_argument("--theta", type=float, default=math.pi / 8)
    s.add_argument("--attack", choices=("none", "intercept", "leakage"), default="none")
    s.add_argument("--fraction", type=float, default=1.0)
    s.add_argument("--basis", choices=("uniform", "Z", "X"), default="uniform")
    s.add_argument("--r", type=float, default=0.0)
    s.add_argument("--trials", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sample-fraction", type=float, default=1.0)
    s.add_argument("--counts", help="write per-setup outcome counts as CSV")
    s.add_argument("--out")
    s.set_defaults(func=cmd_qber, input_flags=())

    s = sub.add_parser("discriminate", help="optimal binary or pretty-good discrimination of Alice's states")
    s.add_argument("--model", required=True)
    s.add_argument("--pair", type=_pair)
    s.add_argument("--priors", type=_float_pair, default=(0.5, 0.5))
    s.add_argument("--pgm", action="store_true", help="square-root measurement over all Alice commands")
    s.add_argument("--out")
    s.set_defaults(func=cmd_discriminate, input_flags=("model",))

    s = sub.add_parser("fit", help="compare a model with a run log")
    s.add_argument("--model", required=True)
    s.add_argument("--log", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit, input_flags=("model", "log"))
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ParseError, OSError, UnicodeDecodeError) as exc:
        print(f"qenvelop {args.subcommand}: {exc}", file=sys.stderr)
        return 2
    except (QEnvelopError, ValueError) as exc:
        print(f"qenvelop {args.subcommand}: {exc}", file=sys.stderr)
        return 1


def main():
    raise SystemExit(run_cli())
