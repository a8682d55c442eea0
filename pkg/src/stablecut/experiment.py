"""Random markets and the first-stage comparison harness.

For each trial a uniform random market is drawn. K training scenarios and
one realized scenario come from the independent-departure sampler. For
each lambda the harness compares four first-stage matchings:

    M*    optimal against the training scenarios (empirical weights)
    M0    student-optimal
    Mz    student-pessimal
    Moff  optimal against the realized scenario alone

Each is scored on the training objective ("exp") and on the realized
scenario ("real"). Values are exact rationals; a decimal column is added
for convenience.
"""

from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass, field
from fractions import Fraction

from .matching_core import OUTSIDE, Instance
from .two_stage import (
    DepartureSampler,
    Scenario,
    TwoStageInstance,
    draw_samples,
    egalitarian_costs,
    empirical,
    evaluate_first_stage,
    solve_exp_2sto,
)

KINDS = ("star", "m0", "mz", "off")
COLUMNS = ["trial", "seed", "lambda"] + [
    f"{obj}_{k}{suffix}" for obj in ("exp", "real") for k in KINDS for suffix in ("", "_dec")
] + ["ok"]


def generate_random(n: int, seed: int, quota_mode: str = "unit", m: int | None = None) -> Instance:
    """n students, m (default n) schools, uniform full orders with OUTSIDE last."""
    if n < 1:
        raise ValueError("n must be at least 1")
    m = n if m is None else m
    rng = random.Random(seed)
    students = [f"a{i}" for i in range(1, n + 1)]
    schools = [f"b{j}" for j in range(1, m + 1)]
    if quota_mode == "unit":
        quota = {b: 1 for b in schools}
    elif quota_mode == "random":
        quota = {b: rng.randint(1, max(1, min(3, n))) for b in schools}
    else:
        raise ValueError(f"unknown quota mode {quota_mode!r}")
    sp = {a: rng.sample(schools, m) + [OUTSIDE] for a in students}
    bp = {b: rng.sample(students, n) + [OUTSIDE] for b in schools}
    return Instance(students, schools, quota, sp, bp)


@dataclass
class ExperimentConfig:
    n: int = 50
    p: Fraction = Fraction(1, 4)
    lambdas: list = field(default_factory=lambda: [Fraction(k, 10) for k in range(1, 21)])
    trials: int = 20
    samples: int = 20
    seed: int = 0
    quota_mode: str = "unit"

    def __post_init__(self):
        self.p = Fraction(self.p)
        self.lambdas = [Fraction(x) for x in self.lambdas]
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if not self.lambdas or any(x < 0 for x in self.lambdas):
            raise ValueError("lambda grid must be non-empty and non-negative")
        if self.trials < 1 or self.samples < 1 or self.n < 1:
            raise ValueError("n, trials and samples must be positive")


def _dec(x: Fraction) -> str:
    return f"{float(x):.6f}"


def _trial(cfg: ExperimentConfig, t: int) -> list:
    seed = cfg.seed * 1_000_003 + t
    inst = generate_random(cfg.n, seed, cfg.quota_mode)
    cost = egalitarian_costs(inst)
    base = TwoStageInstance(inst, sampler=DepartureSampler(cfg.p), c1=cost, c2=cost)
    train = empirical(draw_samples(base, cfg.samples, seed))
    realized = [Scenario("R", draw_samples(base, 1, seed + 7_919)[0], Fraction(1))]
    i_inst, i_order = base.order_of(base.first)
    rows = []
    for lam in cfg.lambdas:
        ts = TwoStageInstance(inst, c1=cost, c2=cost, lam=lam)
        ts._orders = base._orders
        exp_ts, real_ts = ts.with_scenarios(train), ts.with_scenarios(realized)
        firsts = {
            "star": solve_exp_2sto(exp_ts).first,
            "m0": i_order.m0,
            "mz": i_order.mz,
            "off": solve_exp_2sto(real_ts).first,
        }
        row = {"trial": t, "seed": seed, "lambda": lam}
        for obj, tsx in (("exp", exp_ts), ("real", real_ts)):
            for k, m in firsts.items():
                row[f"{obj}_{k}"] = evaluate_first_stage(tsx, m)
        row["ok"] = int(
            row["real_off"] <= row["real_star"]
            and row["exp_star"] <= min(row["exp_m0"], row["exp_mz"])
        )
        rows.append(row)
    return rows


def run_experiment(cfg: ExperimentConfig, progress=None) -> list:
    rows = []
    for t in range(cfg.trials):
        rows.extend(_trial(cfg, t))
        if progress is not None:
            progress(t + 1, cfg.trials)
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        out = []
        for c in COLUMNS:
            if c.endswith("_dec"):
                out.append(_dec(r[c[:-4]]))
            elif isinstance(r[c], Fraction):
                x = r[c]
                out.append(str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}")
            else:
                out.append(str(r[c]))
        w.writerow(out)
    return buf.getvalue()


def summarize(rows) -> dict:
    """Non-gating statistics: dominance rates of M* over the one-sided matchings."""
    n = len(rows)
    if not n:
        return {"rows": 0}
    beats = sum(r["exp_star"] < min(r["exp_m0"], r["exp_mz"]) for r in rows)
    gap_monotone = 0
    by_trial = {}
    for r in rows:
        by_trial.setdefault(r["trial"], []).append(r)
    for rs in by_trial.values():
        rs = sorted(rs, key=lambda r: r["lambda"])
        gaps = [r["exp_m0"] - r["exp_star"] for r in rs]
        gap_monotone += all(x <= y for x, y in zip(gaps, gaps[1:]))
    return {
        "rows": n,
        "all_ok": all(r["ok"] for r in rows),
        "strictly_better_than_both": Fraction(beats, n),
        "trials_with_monotone_m0_gap": f"{gap_monotone}/{len(by_trial)}",
    }
