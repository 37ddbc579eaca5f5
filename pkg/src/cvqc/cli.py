"""Command-line entry point: ``cvqc params|measure|qpip|verify-lemmas|replay``."""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, CVQCError, InputError
from .hamiltonian import (
    DEFAULT_KPRIME,
    ground_energy,
    load_hamiltonian,
    max_energy,
    qpip_experiment,
    shipped_hamiltonian,
)
from .harness import lemma_suite, load_tolerances, summary_table, write_reports
from .lattice import Params, find_params, load_params_file, load_preset, primes_below
from .protocol import (
    HADAMARD,
    RANDOM,
    TEST,
    input_state,
    prover_from_name,
    read_transcripts,
    replay,
    run_session,
    write_transcripts,
)
from .quantum import bitstring


def header(params_hash: str, seed) -> dict:
    return {"version": __version__, "params_hash": params_hash, "seed": seed}


def print_header(params_hash: str, seed) -> None:
    print(f"# cvqc {__version__} params={params_hash} seed={seed}")


def resolve_params(spec: str) -> Params:
    """A preset name or a path to a params JSON file."""
    if Path(spec).suffix == ".json" or Path(spec).exists():
        return load_params_file(spec)
    return load_preset(spec)


def _write_json(path, payload) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Commands


def cmd_params(args) -> int:
    if args.action == "validate":
        if args.target is None:
            raise InputError("params validate needs a preset name or file")
        p = resolve_params(args.target)
        p.check()
        print_header(p.digest(), 0)
        print(f"{args.target}: valid ({p.to_json()})")
        return 0
    q_max = args.q_max
    if args.m is None:
        p = find_params(primes_below(q_max), args.n, None, args.ratio, args.ct, l=args.l)
    else:
        p = find_params(primes_below(q_max), args.n, args.m, args.ratio, 1.0 if args.ct is None else args.ct, l=args.l)
    p = Params.from_dict({**p.to_dict(), "name": args.name})
    print_header(p.digest(), 0)
    if args.out:
        _write_json(args.out, {**p.to_dict(), "header": header(p.digest(), 0)})
        print(f"wrote {args.out}")
    else:
        print(json.dumps(p.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_measure(args) -> int:
    params = resolve_params(args.params)
    spec = prover_from_name(args.prover)
    if args.h is None:
        raise InputError("measure needs --h")
    if args.trials < 1:
        raise InputError("--trials must be >= 1")
    print_header(params.digest(), args.seed)
    root = np.random.SeedSequence(args.seed)
    transcripts = [
        run_session(spec, args.h, args.round, params, ss, args.zero_error, args.gset)
        for ss in root.spawn(args.trials)
    ]
    write_transcripts(args.out, transcripts, {**header(params.digest(), args.seed), "command": "measure"})
    for rnd in (TEST, HADAMARD):
        trs = [t for t in transcripts if t.round == rnd]
        if trs:
            acc = sum(t.accepted for t in trs)
            print(f"{rnd:<9} rounds {len(trs):>6}  accepted {acc:>6}  rate {acc / len(trs):.4f}")
    hist = Counter(bitstring(t.m) for t in transcripts if t.round == HADAMARD and t.m is not None)
    if hist:
        tot = sum(hist.values())
        print("decoded m histogram (Hadamard rounds):")
        for k in sorted(hist):
            print(f"  m={k}  {hist[k]:>6}  {hist[k] / tot:.4f}")
    print(f"transcripts: {args.out}")
    return 0


def _qpip_state(name: str, H) -> np.ndarray:
    if name == "ground":
        return ground_energy(H)[1]
    if name == "max":
        return max_energy(H)[1]
    v = input_state(name)
    if v.size != 2**H.n_qubits:
        raise InputError(f"state {name!r} has the wrong number of qubits for the Hamiltonian")
    return v


def cmd_qpip(args) -> int:
    H = shipped_hamiltonian("zz") if args.hamiltonian is None else load_hamiltonian(args.hamiltonian)
    params = resolve_params(args.params)
    state = _qpip_state(args.prover, H)
    print_header(params.digest(), args.seed)
    rep = qpip_experiment(H, state, args.kprime, args.trials, params, args.seed, args.round, args.zero_error)
    rep["prover"] = args.prover
    for k in ("trials", "kprime", "test_rounds", "test_accepted", "hadamard_rounds", "hadamard_accepted"):
        print(f"{k:<24} {rep[k]}")
    for k in ("hadamard_rate", "expected_hadamard_rate", "sigma", "p_acc", "p_acc_protocol", "energy"):
        print(f"{k:<24} {rep[k]:.6f}")
    print(f"{'within_3sigma':<24} {rep['within_3sigma']}")
    if args.out:
        _write_json(args.out, {"header": header(params.digest(), args.seed), "report": rep})
        print(f"report: {args.out}")
    return 0


def cmd_verify_lemmas(args) -> int:
    tol = load_tolerances(args.tolerances)
    reports = lemma_suite(args.seed, tol, negative_controls=args.negative_controls)
    print_header("none", args.seed)
    print(summary_table(reports))
    write_reports(reports, args.results_dir, header("none", args.seed))
    ok = all(r.passed for r in reports)
    n_neg = sum(not c.expect_pass for r in reports for c in r.checks)
    print(f"{sum(r.passed for r in reports)}/{len(reports)} reports pass"
          + (f" ({n_neg} negative controls failed as expected)" if n_neg else ""))
    return 0 if ok else 1


def cmd_replay(args) -> int:
    head, transcripts = read_transcripts(args.file)
    print_header(head.get("params_hash", "unknown"), head.get("seed", "unknown"))
    bad = 0
    for i, tr in enumerate(transcripts):
        r = replay(tr)
        if not r["ok"]:
            bad += 1
            print(f"session {i}: MISMATCH {r}")
    print(f"replayed {len(transcripts)} sessions, {len(transcripts) - bad} identical")
    return 0 if bad == 0 else 1


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cvqc", description="Classical verification of quantum computation, at toy scale.")
    ap.add_argument("--version", action="version", version=f"cvqc {__version__}")
    ap.add_argument("--config", help="JSON config file (flags override it)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="find or validate parameter sets")
    p.add_argument("action", choices=["find", "validate"])
    p.add_argument("target", nargs="?", help="preset name or params file (validate)")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--m", type=int, default=None, help="omit for the smallest gadget-compatible m")
    p.add_argument("--ratio", type=float, default=2.0)
    p.add_argument("--ct", type=float, default=None, help="trapdoor constant (default: certified, or 1 with --m)")
    p.add_argument("--l", type=int, default=1)
    p.add_argument("--q-max", type=int, default=5000)
    p.add_argument("--name", default="toy")
    p.add_argument("--out")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("measure", help="run measurement-protocol sessions")
    p.add_argument("--params", default="toy")
    p.add_argument("--h", help="basis choice bitstring, e.g. 01 (required)")
    p.add_argument("--prover", default="honest:zero")
    p.add_argument("--round", choices=[TEST, HADAMARD, RANDOM], default=RANDOM)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zero-error", action="store_true", help="use e = 0 in claw-free keys")
    p.add_argument("--gset", default="all")
    p.add_argument("--out", default="results/transcripts.jsonl")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("qpip", help="end-to-end energy verification runs")
    p.add_argument("--hamiltonian", help="Hamiltonian JSON (default: shipped ZZ)")
    p.add_argument("--params", default="toy")
    p.add_argument("--prover", default="ground", help="ground | max | input state name")
    p.add_argument("--kprime", type=int, default=DEFAULT_KPRIME)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--round", choices=[TEST, HADAMARD, RANDOM], default=RANDOM)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zero-error", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_qpip)

    p = sub.add_parser("verify-lemmas", help="run the lemma check suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--negative-controls", action="store_true")
    p.add_argument("--tolerances", help="JSON object overriding check tolerances")
    p.add_argument("--results-dir", default="results")
    p.set_defaults(func=cmd_verify_lemmas)

    p = sub.add_parser("replay", help="re-verify recorded transcripts")
    p.add_argument("file")
    p.set_defaults(func=cmd_replay)
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv) -> None:
    """Install config-file values as subcommand defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    subs = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction)).choices
    cmd = next((a for a in rest if a in subs), None)
    if cmd is None:
        return
    values = cfg.get(cmd, {}) if isinstance(cfg.get(cmd), dict) else {
        k: v for k, v in cfg.items() if not isinstance(v, dict)
    }
    dests = {a.dest for a in subs[cmd]._actions}
    unknown = set(k.replace("-", "_") for k in values) - dests
    if unknown:
        raise ConfigError(f"unknown config keys for {cmd}: {sorted(unknown)}")
    subs[cmd].set_defaults(**{k.replace("-", "_"): v for k, v in values.items()})


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        _apply_config(ap, argv)
        args = ap.parse_args(argv)
        return args.func(args)
    except CVQCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
