"""Experiment drivers: lemma checks, completeness, hybrid equalities and distinguisher calibration."""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError
from .lattice import Params, hellinger2_shift, load_preset, zq_norm
from .protocol import (
    TEST,
    construct_underlying_state,
    distribution_of_state,
    estimate_distribution,
    exact_distribution,
    models_for,
    parse_h,
    prover_from_name,
    run_session,
    twirled,
    x_trivialized,
)
from .quantum import (
    DensityOp,
    exact_measurement_distribution,
    hellinger2,
    random_cptp,
    trace_distance,
    tv_distance,
    z_twirl_check,
)
from .trapdoor_functions import embed_dhat, gen_f, j_map, wraps_around

DEFAULT_TOLERANCES = {
    "twirl": 1e-9,
    "hellinger_trace": 1e-9,
    "projection": 1e-12,
    "exact_equality": 1e-9,
    "completeness_tv": 1e-6,
}


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    relation: str = "<="  # "<=" or ">="
    expect_pass: bool = True

    @property
    def holds(self) -> bool:
        if self.relation == "<=":
            return self.value <= self.tolerance
        return self.value >= self.tolerance

    @property
    def passed(self) -> bool:
        """A negative control passes when its check fails."""
        return self.holds == self.expect_pass


@dataclass
class ExperimentReport:
    name: str
    params: dict
    seed: int
    metrics: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name, value, tol, relation="<=", expect_pass=True) -> Check:
        c = Check(name, float(value), float(tol), relation, expect_pass)
        self.checks.append(c)
        return c

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checks"] = [{**asdict(c), "holds": c.holds, "passed": c.passed} for c in self.checks]
        d["passed"] = self.passed
        d["version"] = __version__
        return d


class _timer:
    def __init__(self, report: ExperimentReport):
        self.report = report

    def __enter__(self):
        self.t = time.perf_counter()
        return self.report

    def __exit__(self, *exc):
        self.report.wall_time = time.perf_counter() - self.t


def load_tolerances(path=None) -> dict:
    tol = dict(DEFAULT_TOLERANCES)
    if path is None:
        return tol
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read tolerance config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("tolerance config must be a JSON object")
    for k, v in cfg.items():
        if k not in DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown tolerance {k!r}")
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigError(f"tolerance {k!r} must be a positive number")
        tol[k] = float(v)
    return tol


# ---------------------------------------------------------------------------
# Lemma checks


def twirl_report(seed=0, maps=100, trials=5, tol=1e-9, negative=False) -> ExperimentReport:
    rep = ExperimentReport("z_twirl" + ("_negative" if negative else ""), {}, seed)
    with _timer(rep):
        rng = np.random.default_rng(seed)
        worst = {"map": 0.0, "measured": 0.0, "decomposition": 0.0}
        for i in range(maps):
            ch = random_cptp(1 + i % 3, 4, rng)
            r = z_twirl_check(ch, trials, rng, flip_sign=negative)
            for k in worst:
                worst[k] = max(worst[k], r[k])
        rep.metrics.update(worst)
        if negative:
            rep.check("twirl deviation (sign-flipped right side)", max(worst["map"], worst["measured"]), tol,
                      expect_pass=False)
        else:
            rep.check("twirl deviation", worst["map"], tol)
            rep.check("measured twirl deviation", worst["measured"], tol)
            rep.check("Pauli decomposition error", worst["decomposition"], 1e-12)
    return rep


def hellinger_trace_report(seed=0, cases=100, tol=1e-9, negative=False) -> ExperimentReport:
    """T(|ψ1⟩,|ψ2⟩) = √(1 − (1 − H²)²) with |ψ_i⟩ = Σ √f_i(x)|x⟩."""
    rep = ExperimentReport("hellinger_to_trace" + ("_negative" if negative else ""), {}, seed)
    with _timer(rep):
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(cases):
            f1, f2 = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
            p1, p2 = np.sqrt(f1), np.sqrt(f2)
            T = trace_distance(np.outer(p1, p1), np.outer(p2, p2))
            h2 = hellinger2(f1, f2)
            pred = math.sqrt(1 - (1 - h2) ** 2) if not negative else math.sqrt(h2)
            worst = max(worst, abs(T - pred))
        rep.metrics["max_deviation"] = worst
        rep.check("trace vs Hellinger identity", worst, tol, expect_pass=not negative)
    return rep


def distribution_distance_report(seed=0, cases=100, q=101, m=3, B=10.0, negative=False) -> ExperimentReport:
    """H²(D, D+e) ≤ 1 − exp(−2π√m‖e‖/B) for shifts with ‖e‖ ≤ B/2."""
    rep = ExperimentReport("shifted_gaussian" + ("_negative" if negative else ""), {"q": q, "m": m, "B": B}, seed)
    with _timer(rep):
        rng = np.random.default_rng(seed)
        worst_margin = math.inf
        for _ in range(cases):
            while True:
                e = rng.integers(-int(B // 2), int(B // 2) + 1, size=m)
                if np.linalg.norm(e) <= B / 2:
                    break
            h2 = hellinger2_shift(e, B, q)
            norm = float(np.linalg.norm(e))
            bound = 1 - math.exp(-2 * math.pi * math.sqrt(m) * norm / B)
            if negative:
                bound = 1 - math.exp(-norm / (50 * B))
            worst_margin = min(worst_margin, bound - h2)
        rep.metrics["min_margin"] = worst_margin
        rep.check("bound minus H²", worst_margin, 0.0, ">=", expect_pass=not negative)
    return rep


def projection_report(seed=0, cases=100, tol=1e-12, negative=False) -> ExperimentReport:
    """|P0(X′) − P1(X′)| ≤ TV(P0, P1)."""
    rep = ExperimentReport("projection" + ("_negative" if negative else ""), {}, seed)
    with _timer(rep):
        rng = np.random.default_rng(seed)
        worst = -math.inf
        for _ in range(cases):
            N = int(rng.integers(2, 20))
            p0, p1 = rng.dirichlet(np.ones(N)), rng.dirichlet(np.ones(N))
            sub = rng.random(N) < 0.5
            # the maximizing subset {x : p0 > p1} attains TV exactly
            if rng.random() < 0.3:
                sub = p0 > p1
            gap = abs(p0[sub].sum() - p1[sub].sum())
            tv = tv_distance(p0, p1) / (4 if negative else 1)
            worst = max(worst, gap - tv)
        rep.metrics["max_excess"] = worst
        rep.check("|P0(X′)−P1(X′)| − TV", worst, tol, expect_pass=not negative)
    return rep


def secret_dependence_report(qs=(5, 17), ns=(1, 2), include_wrap=False) -> ExperimentReport:
    """J(embed(d̂))·(J(x) ⊕ J(x − (−1)^b s)) = d̂·s mod 2, exhaustively."""
    name = "secret_dependence" + ("_with_wraparound" if include_wrap else "")
    rep = ExperimentReport(name, {"q": list(qs), "n": list(ns)}, 0)
    with _timer(rep):
        checked = failures = wraps = 0
        for q, n in itertools.product(qs, ns):
            xs = list(itertools.product(range(q), repeat=n))
            jx = {x: j_map(np.array(x), q) for x in xs}
            for s in itertools.product((0, 1), repeat=n):
                s = np.array(s)
                for b in (0, 1):
                    for x in xs:
                        wrap = wraps_around(x, s, b, q)
                        wraps += wrap
                        if wrap and not include_wrap:
                            continue
                        xp = tuple(int(v) for v in np.mod(np.array(x) - (-1) ** b * s, q))
                        diff = jx[x] ^ jx[xp]
                        for dhat in itertools.product((0, 1), repeat=n):
                            lhs = int(embed_dhat(np.array(dhat), q) @ diff) % 2
                            rhs = int(np.dot(dhat, s)) % 2
                            checked += 1
                            failures += lhs != rhs
        rep.metrics.update({"checked": checked, "failures": failures, "wraparound_inputs": wraps})
        rep.check("identity failures", failures, 0, expect_pass=not include_wrap)
    return rep


def lemma_suite(seed=0, tolerances=None, negative_controls=True) -> list[ExperimentReport]:
    tol = tolerances or DEFAULT_TOLERANCES
    reps = [
        twirl_report(seed, tol=tol["twirl"]),
        hellinger_trace_report(seed, tol=tol["hellinger_trace"]),
        distribution_distance_report(seed),
        projection_report(seed, tol=tol["projection"]),
        secret_dependence_report(),
    ]
    if negative_controls:
        reps += [
            twirl_report(seed, maps=10, tol=tol["twirl"], negative=True),
            hellinger_trace_report(seed, tol=tol["hellinger_trace"], negative=True),
            distribution_distance_report(seed, negative=True),
            projection_report(seed, tol=tol["projection"], negative=True),
            secret_dependence_report(qs=(5,), ns=(1,), include_wrap=True),
        ]
    return reps


# ---------------------------------------------------------------------------
# Protocol experiments


def completeness_experiment(
    rho: str, h, trials: int = 1000, params: Params | None = None, seed=0, tol: float = 1e-6
) -> ExperimentReport:
    params = params or load_preset("toy")
    h = parse_h(h)
    spec = prover_from_name(f"honest:{rho}")
    rep = ExperimentReport(f"completeness[{rho},{''.join(map(str, h))}]", params.to_dict(), seed)
    with _timer(rep):
        streams = np.random.SeedSequence(seed).spawn(2)
        test_acc = sum(
            run_session(spec, h, TEST, params, ss).accepted for ss in streams[0].spawn(trials)
        )
        _, info = estimate_distribution(spec, h, trials, params, streams[1])
        target = distribution_of_state(
            construct_underlying_state(spec, params, h, "rho", zero_error=True), h
        )
        state_dist = _input_distribution(spec, h)
        exact0 = exact_distribution(spec, h, models_for(h, params, zero_error=True))
        exact = exact_distribution(spec, h, models_for(h, params))
        rep.metrics.update({
            "test_accepted": test_acc,
            "hadamard_accepted": info["accepted"],
            "trials": trials,
            "tv_exact_e0": tv_distance(exact0, state_dist),
            "tv_extracted_e0": tv_distance(target, state_dist),
            "tv_exact_noisy": tv_distance(exact, state_dist),
        })
        rep.check("test-round acceptance rate", test_acc / trials, 1.0, ">=")
        rep.check("hadamard-round acceptance rate", info["accepted"] / trials, 1.0, ">=")
        rep.check("TV(exact D^C, D_rho) at e=0", rep.metrics["tv_exact_e0"], tol)
    return rep


def _input_distribution(spec, h) -> dict[str, float]:

    v = spec.blocks[0].vector
    rho = DensityOp.pure(v, [f"c{q}" for q in range(spec.n_qubits)])
    return exact_measurement_distribution(rho, rho.names, list(h))


def soundness_hybrid_experiment(
    attack: str, h, params: Params | None = None, seed=0, input_name: str | None = None,
    tol: float = 1e-9, zero_error: bool = False,
) -> ExperimentReport:
    """Exact hybrid steps for a library attack, with keys averaged over generation."""
    params = params or load_preset("toy")
    h = parse_h(h)
    n = len(h)
    inp = input_name or ("plus" if n == 1 else "bell")
    P = prover_from_name(f"attack:{attack}:{inp}")
    Ptriv = x_trivialized(P)
    rep = ExperimentReport(f"hybrids[{attack},{''.join(map(str, h))}]", params.to_dict(), seed)
    with _timer(rep):
        models = models_for(h, params, zero_error)
        D_P = exact_distribution(P, h, models)
        D_T = exact_distribution(Ptriv, h, models)
        rho = construct_underlying_state(Ptriv, params, h, "rho", zero_error)
        rho1 = construct_underlying_state(Ptriv, params, h, "rho1", zero_error)
        rho2 = construct_underlying_state(Ptriv, params, h, "rho2", zero_error)
        D_rho, D_rho1, D_rho2 = (distribution_of_state(r, h) for r in (rho, rho1, rho2))
        rep.check("D_rho = D_rho1", tv_distance(D_rho, D_rho1), tol)
        rep.check("D_rho2 = D_P (trivial prover)", tv_distance(D_rho2, D_T), tol)
        for j in range(n):
            if h[j] == 0:
                Pj = x_trivialized(P, [j])
                rep.check(f"D_P = D_P{j} (standard position {j})", tv_distance(D_P, exact_distribution(Pj, h, models)), tol)
            else:
                Pj = x_trivialized(P, [j])
                Ptw = twirled(P, j)
                rep.check(
                    f"twirled = X-trivialized on {j} (Hadamard position)",
                    tv_distance(exact_distribution(Ptw, h, models), exact_distribution(Pj, h, models)), tol,
                )
        rep.metrics.update({
            "tv_P_rho": tv_distance(D_P, D_rho),
            "tv_trivial_rho": tv_distance(D_T, D_rho),
            "tv_rho_rho2_key_swap": tv_distance(D_rho, D_rho2),
        })
        if attack == "I" and zero_error:
            rep.check("TV(D_P, D_rho) for the identity attack", rep.metrics["tv_P_rho"], 1e-6)
    return rep


# ---------------------------------------------------------------------------
# Hardcore-bit distinguishers

Distinguisher = Callable[[np.ndarray, np.ndarray, np.ndarray, int, object], int]


def trivial_distinguisher(A, v, dhat, bit, ctx) -> int:
    return int(ctx["rng"].integers(0, 2))


def trapdoor_distinguisher(A, v, dhat, bit, ctx) -> int:
    """Guesses 'random' exactly when the candidate disagrees with d̂·s."""
    return int(bit != int(np.dot(dhat, ctx["trapdoor"].s)) % 2)


def brute_force_distinguisher(A, v, dhat, bit, ctx) -> int:
    """Recovers a binary s by minimizing ‖v − A·s‖ (feasible because parameters are tiny)."""
    q = ctx["params"].q
    n = A.shape[1]
    best = min(itertools.product((0, 1), repeat=n), key=lambda s: zq_norm(v - A @ np.array(s), q))
    return int(bit != int(np.dot(dhat, best)) % 2)


DISTINGUISHERS = {
    "trivial": trivial_distinguisher,
    "trapdoor": trapdoor_distinguisher,
    "brute-force": brute_force_distinguisher,
}
DISTINGUISHERS["cheating"] = trapdoor_distinguisher


def hardcore_experiment(
    distinguisher: str | Distinguisher, trials: int = 10_000, params: Params | None = None, seed=0
) -> ExperimentReport:
    """Advantage |P[guess=1 | random bit] − P[guess=1 | d̂·s]| over fresh claw-free keys."""
    params = params or load_preset("toy")
    name = distinguisher if isinstance(distinguisher, str) else getattr(distinguisher, "__name__", "custom")
    fn = DISTINGUISHERS[distinguisher] if isinstance(distinguisher, str) else distinguisher
    rep = ExperimentReport(f"hardcore[{name}]", params.to_dict(), seed)
    with _timer(rep):
        rng = np.random.default_rng(seed)
        guess1 = [0, 0]
        count = [0, 0]
        for _ in range(trials):
            pk, td = gen_f(params, rng)
            dhat = rng.integers(0, 2, size=params.n)
            world = int(rng.integers(0, 2))
            bit = int(np.dot(dhat, td.s)) % 2 if world == 0 else int(rng.integers(0, 2))
            g = fn(pk.A, pk.v, dhat, bit, {"rng": rng, "trapdoor": td, "params": params})
            count[world] += 1
            guess1[world] += int(g)
        p0, p1 = guess1[0] / count[0], guess1[1] / count[1]
        adv = abs(p1 - p0)
        sigma = math.sqrt(p0 * (1 - p0) / count[0] + p1 * (1 - p1) / count[1]) or 1 / math.sqrt(trials)
        rep.metrics.update({"advantage": adv, "sigma": sigma, "n_real": count[0], "n_random": count[1]})
        if name == "trivial":
            rep.check("advantage within 3 sigma of 0", adv, 3 * max(sigma, 0.5 / math.sqrt(min(count))))
        elif name in ("trapdoor", "cheating"):
            rep.check("advantage", adv, 0.45, ">=")
    return rep


# ---------------------------------------------------------------------------
# Output


def write_reports(reports: Sequence[ExperimentReport], results_dir, header: dict | None = None) -> list[Path]:
    out = Path(results_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for r in sorted(reports, key=lambda r: r.name):
        p = out / f"{_slug(r.name)}.json"
        payload = {"header": header or {"version": __version__, "seed": r.seed}, "report": r.to_dict()}
        p.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
        paths.append(p)
    return paths


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _slug(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in s).strip("_")


def summary_table(reports: Sequence[ExperimentReport]) -> str:
    rows = [("experiment", "check", "value", "tol", "expect", "result")]
    for r in sorted(reports, key=lambda r: r.name):
        for c in r.checks:
            rows.append((
                r.name, c.name, f"{c.value:.3g}", f"{c.relation} {c.tolerance:.3g}",
                "pass" if c.expect_pass else "fail", "ok" if c.passed else "FAILED",
            ))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows)
