"""Command-line front end.

Usage::

    entropic-pricer COMMAND SCENARIO [--tol T] [--gamma-grid G1,G2,..]
                    [--eps-grid E1,E2,..] [--format json|csv] [--jobs N]
                    [--seed S] [--timing] [-o PATH]

Commands: ``price``, ``agree``, ``equilibrium``, ``expand``, ``hedge`` and
``basisrisk``.  A report is written to standard output (or ``-o``).  Exit
status is 0 on success, 2 for invalid input and 3 when a solver fails.

JSON reports have the keys ``command``, ``digest`` (sha256 of the scenario
bytes), ``tolerances``, ``result``, ``diagnostics`` and, with ``--timing``,
``wall_time``.  CSV reports are the rows of the command's main table with
a fixed header per command (see ``CSV_COLUMNS``).

Set ``ENTROPIC_PRICER_LOG`` to a logging level name (e.g. DEBUG) for
diagnostics on standard error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels
from .agreement import agreement_report
from .asymptotics import expansion, remainder_slope, small_trade_direction
from .basisrisk import (QUAD_TOL, BasisRiskModel, PayoffFn, agreement_check, closed_form_price,
                        conditional_buyer_price, conditional_price, gamma_profile, q0_law)
from .equilibrium import solve_pepq
from .errors import SchemaViolation, SolverError, ValidationError
from .hedging import residual_risk
from .market import REPLICATION_TOL, load_scenario
from .measures import induce

log = logging.getLogger("entropic_pricer")

COMMANDS = ("price", "agree", "equilibrium", "expand", "hedge", "basisrisk")

CSV_COLUMNS = {
    "price": ["claim", "endowment", "gamma", "writer", "buyer", "lower_bound", "upper_bound"],
    "agree": ["claim", "writer", "buyer", "classification", "sigma", "bstar_replicable"],
    "equilibrium": ["index", "a_hat", "p_hat"],
    "expand": ["eps", "exact", "approx", "error"],
    "hedge": ["leaf", "claim", "gains", "residual"],
    "basisrisk": ["gamma", "writer", "buyer"],
}


class UsageError(ValidationError):
    pass


# ---------------------------------------------------------------------------
# formatting


def _num(x):
    """Float text with 17 significant digits (round-trips exactly)."""
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return "%.17g" % x


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _dump(obj, indent=0):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(k)}: {_dump(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_dump(v) for v in obj) + "]"
        items = [pad + "  " + _dump(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _num(obj)
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(obj)


def to_json(report) -> str:
    return _dump(_clean(report)) + "\n"


def to_csv(report) -> str:
    cols = CSV_COLUMNS[report["command"]]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in report["table"]:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def emit(report, fmt="json", path=None):
    text = to_json({k: v for k, v in report.items() if k != "table"}) if fmt == "json" else to_csv(report)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# helpers


def _floats(text, name):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"--{name}: {exc}") from exc
    if not vals:
        raise UsageError(f"--{name}: empty list")
    return vals


def _claim_names(sc, key="claims"):
    names = sc.task.get(key)
    if names is None and key == "claims":
        names = sc.task.get("claim")
    if names is None:
        endow = {a.name for a in sc.agents}
        names = [n for n in sc.claims if n not in endow]
    if isinstance(names, str):
        names = [names]
    if not names:
        raise SchemaViolation("no claim to work on: set task.claim or declare a claim")
    return [str(n) for n in names]


def _need_agents(sc, n):
    if len(sc.agents) < n:
        raise SchemaViolation(f"this command needs {n} agent(s), the scenario has {len(sc.agents)}")
    return sc.agents[:n]


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands


def cmd_price(sc, args):
    tree = sc.tree
    agent = _need_agents(sc, 1)[0]
    gammas = args.gamma_grid or [agent.gamma]
    names = _claim_names(sc)
    from .measures import price_bounds
    from .pricing import dual_optimizer, writer_price

    def one(job):
        name, gamma = job
        b = sc.claims[name]
        q = writer_price(tree, gamma, agent.endowment, b, claim_name=name,
                         endowment_name=agent.name, with_bounds=True)
        resid = dual_optimizer(tree, gamma, agent.endowment, b).martingale_residual()
        return q, resid

    jobs = [(n, g) for n in names for g in gammas]
    for n in names:
        price_bounds(tree, sc.claims[n])  # warm the cache outside the pool
    out = _map(one, jobs, args.jobs)
    quotes = [q.as_dict() for q, _ in out]
    table = [[q.claim, q.endowment, q.gamma, q.writer, q.buyer, q.bounds[0], q.bounds[1]]
             for q, _ in out]
    diag = {"max_martingale_residual": max(r for _, r in out)}
    return {"quotes": quotes}, table, diag


def cmd_agree(sc, args):
    a1, a2 = _need_agents(sc, 2)
    rows, table = [], []
    for name in _claim_names(sc):
        rep = agreement_report(sc.tree, a1, a2, sc.claims[name])
        d = rep.as_dict()
        d["claim"] = name
        d["classification"] = rep.classification
        d["small_trade"] = small_trade_direction(sc.tree, a1, a2, sc.claims[name])
        d["bstar"] = list(map(float, rep.bstar))
        rows.append(d)
        table.append([name, rep.writer, rep.buyer, rep.classification, rep.sigma,
                      str(rep.bstar_replicable).lower()])
    return {"agreements": rows}, table, {}


def cmd_equilibrium(sc, args):
    a1, a2 = _need_agents(sc, 2)
    names = _claim_names(sc)
    B = np.array([sc.claims[n] for n in names])
    start = sc.task.get("start")
    if start is None and args.seed is not None:
        start = np.random.default_rng(args.seed).uniform(-1, 1, len(names))
    res = solve_pepq(sc.tree, a1, a2, B, tol=args.eq_tol, start=start)
    d = res.as_dict()
    d["claims"] = names
    table = [[i, float(a), float(p)] for i, (a, p) in enumerate(zip(res.a_hat, res.p_hat))]
    diag = {"newton_iterations": res.iters, "clearing_residual": res.clearing_residual}
    return d, table, diag


def cmd_expand(sc, args):
    agent = _need_agents(sc, 1)[0]
    names = _claim_names(sc)
    B = np.array([sc.claims[n] for n in names])
    a = np.asarray(sc.task.get("a", [1.0] * len(names)), dtype=float)
    if a.shape != (len(names),):
        raise SchemaViolation(f"task.a needs {len(names)} entries")
    eps = args.eps_grid or [0.1, 0.05, 0.025, 0.0125]
    ex = expansion(sc.tree, agent.gamma, agent.endowment, B, a, eps)
    d = ex.as_dict()
    d["claims"] = names
    d["remainder_slope"] = remainder_slope(ex.eps_table) if len(eps) > 1 else None
    return d, [list(r) for r in ex.eps_table], {}


def cmd_hedge(sc, args):
    agent = _need_agents(sc, 1)[0]
    name = _claim_names(sc)[0]
    side = sc.task.get("side", "writer")
    if side not in ("writer", "buyer"):
        raise SchemaViolation("task.side must be 'writer' or 'buyer'")
    tree = sc.tree
    dec = residual_risk(tree, agent.gamma, agent.endowment, sc.claims[name], side=side)
    d = dec.as_dict(tree)
    d["claim"] = name
    gains = dec.claim - dec.price - dec.residual
    table = [[str(lid), float(c), float(g), float(r)]
             for lid, c, g, r in zip(tree.leaf_ids, dec.claim, gains, dec.residual)]
    diag = {"decomposition_error": float(np.abs(dec.claim - dec.price - gains - dec.residual).max())}
    return d, table, diag


def _payoff(spec, what):
    try:
        return PayoffFn.from_spec(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"basisrisk.{what}: bad payoff specification ({exc})") from exc


def cmd_basisrisk(sc, args):
    br = sc.basisrisk
    if not br:
        raise SchemaViolation("scenario has no 'basisrisk' section")
    unknown = set(br) - {"model", "gamma", "claim", "endowment", "agents", "profile"}
    if unknown:
        raise SchemaViolation(f"basisrisk: unknown keys {sorted(unknown)}")
    out, table = {}, []
    if "model" in br:
        try:
            model = BasisRiskModel(**br["model"])
        except TypeError as exc:
            raise SchemaViolation(f"basisrisk.model: {exc}") from exc
        claim = _payoff(br.get("claim", {"linear": [1.0, 0.0]}), "claim")
        endow = _payoff(br.get("endowment", 0.0), "endowment")
        gammas = args.gamma_grid or [float(br.get("gamma", 1.0))]
        for g in gammas:
            w = conditional_price(model, g, endow, claim)
            b = conditional_buyer_price(model, g, endow, claim)
            table.append([g, w, b])
        mean, var = q0_law(model)
        out["q0_law"] = {"mean": mean, "variance": var}
        out["prices"] = [{"gamma": g, "writer": w, "buyer": b} for g, w, b in table]
        out["unconditional_writer"] = [closed_form_price(model, g, claim) for g in gammas]
        if "agents" in br:
            ags = br["agents"]
            if not isinstance(ags, list) or len(ags) != 2:
                raise SchemaViolation("basisrisk.agents must list two agents")
            pair = [(float(a["gamma"]), _payoff(a.get("endowment", 0.0), "agents.endowment"))
                    for a in ags]
            out["agreement"] = agreement_check(model, pair[0], pair[1], claim)
    if "profile" in br:
        p = br["profile"]
        x1, x2 = _payoff(p["x1"], "profile.x1"), _payoff(p["x2"], "profile.x2")
        gammas = p.get("gammas") or list(np.logspace(-3, 3, 61))
        prof = gamma_profile(x1, x2, gammas, law=tuple(p.get("law", (0.0, 1.0))),
                             log_values=bool(p.get("log_values", False)))
        out["profile"] = {
            "f0": prof.f0, "slope0": prof.slope0, "finf": prof.finf,
            "sign_changes": prof.sign_changes(), "rows": [list(r) for r in prof.rows()],
        }
        if not table:
            table = [[g, v, ""] for g, v in prof.rows()]
    if not out:
        raise SchemaViolation("basisrisk needs a 'model' or a 'profile' entry")
    return out, table, {}


HANDLERS = {
    "price": cmd_price, "agree": cmd_agree, "equilibrium": cmd_equilibrium,
    "expand": cmd_expand, "hedge": cmd_hedge, "basisrisk": cmd_basisrisk,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="entropic-pricer",
                                description="Exponential-utility indifference pricing on event trees.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("scenario", help="YAML or JSON scenario file ('-' for stdin)")
    p.add_argument("--tol", type=float, default=None, help="Newton tolerance (default from scenario)")
    p.add_argument("--gamma-grid", default=None, help="comma-separated risk aversions")
    p.add_argument("--eps-grid", default=None, help="comma-separated quantities for 'expand'")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--jobs", type=int, default=1, help="threads for independent claims")
    p.add_argument("--seed", type=int, default=None, help="seed for randomized starting points")
    p.add_argument("--timing", action="store_true", help="include wall time (breaks byte-stability)")
    p.add_argument("-o", "--output", default=None, help="write the report here instead of stdout")
    return p


def run(argv=None) -> int:
    level = os.environ.get("ENTROPIC_PRICER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    t0 = time.perf_counter()
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        args.gamma_grid = _floats(args.gamma_grid, "gamma-grid") if args.gamma_grid else None
        args.eps_grid = _floats(args.eps_grid, "eps-grid") if args.eps_grid else None
        if args.scenario == "-":
            raw = sys.stdin.buffer.read()
        else:
            try:
                with open(args.scenario, "rb") as fh:
                    raw = fh.read()
            except OSError as exc:
                raise UsageError(f"cannot read scenario: {exc}") from exc
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise UsageError(f"scenario is not UTF-8: {exc}") from exc
        sc = load_scenario(text)
        if sc.tree is None and args.command != "basisrisk":
            raise SchemaViolation(f"command {args.command!r} needs a 'tree' section")
        solver = dict(sc.solver)
        if args.tol is not None:
            if not args.tol > 0:
                raise UsageError("--tol must be positive")
            solver["tol"] = args.tol
        args.eq_tol = max(solver["tol"], 1e-10) if args.tol is None else args.tol
        with kernels.solver_settings(solver["tol"], solver["max_iter"]):
            if sc.tree is not None and args.command != "basisrisk":
                induce(sc.tree, np.zeros(sc.tree.n_leaves))  # arbitrage check up front
            result, table, diag = HANDLERS[args.command](sc, args)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3

    report = {
        "command": args.command,
        "digest": hashlib.sha256(raw).hexdigest(),
        "tolerances": {
            "newton_tol": solver["tol"],
            "max_iter": solver["max_iter"],
            "replication_tol": REPLICATION_TOL,
            **({"equilibrium_tol": args.eq_tol} if args.command == "equilibrium" else {}),
            **({"quadrature_tol": QUAD_TOL} if args.command == "basisrisk" else {}),
        },
        "result": result,
        "diagnostics": {"backend": kernels.BACKEND, **diag},
        "table": table,
    }
    if args.timing:
        report["wall_time"] = time.perf_counter() - t0
    try:
        emit(report, args.format, args.output)
    except OSError as exc:
        print(f"error: cannot write report: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None):
    sys.exit(run(argv))


__all__ = ["CSV_COLUMNS", "COMMANDS", "emit", "main", "run", "to_csv", "to_json"]
