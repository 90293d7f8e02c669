"""Command-line entry point: ``pdisc {gen,solve,analyze,capacity,schedule,ogp,sweep}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, analytics, capacity, ogp, schedules
from .core import generate_instance, load_instance, save_instance
from .errors import (DegenerateStateError, HorizonError, InfeasibleError, PdiscError, RegimeError,
                     RetryExhaustedError, ScheduleError, SizeError)
from .pipeline import REGIMES, SUMMARY_COLUMNS, RegimeConfig, run_pipeline

EXIT_OK, EXIT_INTERNAL, EXIT_USER = 0, 1, 2
USER_ERRORS = (InfeasibleError, ScheduleError, RetryExhaustedError, RegimeError, DegenerateStateError,
               HorizonError, SizeError)

# value type and default of every option that can also come from --config
OPTIONS = {
    "alpha": (str, None), "kappa": (str, None), "kappa0": (float, None), "n": (int, None),
    "m": (int, None), "seed": (int, 0), "direction_seed": (int, None), "walk_seed": (int, None),
    "delta": (float, None), "gamma": (float, None), "regime": (str, None), "rounds": (int, None),
    "retries": (int, None), "out": (str, None), "workers": (int, 1),
    # command-specific extras
    "instance": (str, None), "seeds": (int, 10), "m_tuple": (str, "1"), "beta": (str, "0.5"),
    "eta": (str, "0.1"), "iota": (str, "0"), "no_lower": (bool, False),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text) -> list:
    if text is None:
        return []
    if isinstance(text, (int, float)):
        return [float(text)]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pdisc", description="LP + edge-walk binary perceptron solver and analytics")
    p.add_argument("--version", action="version", version=f"pdisc {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, *names, aliases=None):
        aliases = aliases or {}
        for name in names:
            flags = ["--" + name.replace("_", "-")] + aliases.get(name, [])
            typ = OPTIONS[name][0]
            if typ is bool:
                sp.add_argument(*flags, dest=name, action="store_true", default=None)
            else:
                sp.add_argument(*flags, dest=name, type=typ, default=None)
        sp.add_argument("--config", default=None, help="JSON file of option values; flags win")

    common(sub.add_parser("gen", help="generate an instance file"), "alpha", "kappa", "n", "m", "seed", "out")
    common(sub.add_parser("solve", help="run the full pipeline on one instance"),
           "alpha", "kappa", "kappa0", "n", "m", "seed", "direction_seed", "walk_seed", "delta", "gamma",
           "regime", "rounds", "retries", "out", "instance")
    common(sub.add_parser("analyze", help="LP order parameters and margin law"), "alpha", "kappa", "out")
    common(sub.add_parser("capacity", help="capacity bounds over a kappa grid"), "kappa", "out", "no_lower",
           aliases={"kappa": ["--kappa-grid"]})
    common(sub.add_parser("schedule", help="verify a slack schedule"),
           "regime", "alpha", "kappa", "kappa0", "n", "rounds", "out")
    common(sub.add_parser("ogp", help="overlap-gap exponent grid"),
           "kappa", "alpha", "m_tuple", "beta", "eta", "iota", "out")
    common(sub.add_parser("sweep", help="solve over seeds and alphas"),
           "alpha", "kappa", "kappa0", "n", "m", "seed", "seeds", "delta", "gamma", "regime", "rounds",
           "retries", "out", "workers")
    return p


def resolve_config(ns: argparse.Namespace) -> dict:
    """Effective options: config-file values overridden by explicit flags."""
    cfg = {}
    if ns.config:
        try:
            cfg = json.loads(Path(ns.config).read_text())
        except OSError as exc:
            raise
        except json.JSONDecodeError as exc:
            raise UsageError(f"malformed config {ns.config}: {exc.msg} at line {exc.lineno}") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"config {ns.config} must hold a JSON object")
        unknown = set(cfg) - set(OPTIONS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for name in vars(ns):
        if name in ("command", "config"):
            continue
        val = getattr(ns, name)
        if val is None:
            val = cfg.get(name, OPTIONS.get(name, (None, None))[1])
        out[name] = val
    return out


def _csv_text(columns, rows, config: dict, seed) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in columns})
    buf.write(f"# config={json.dumps(config, sort_keys=True)}\n")
    buf.write(f"# pdisc-version={__version__} seed={seed}\n")
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def _emit(text: str, out, suffix: str = ".csv"):
    if out:
        path = Path(out)
        if path.suffix == "":
            path = path.with_suffix(suffix)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    else:
        sys.stdout.write(text)


def _require(cfg, *names):
    missing = [n for n in names if cfg.get(n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _one(cfg, name) -> float:
    vals = _floats(cfg[name])
    if len(vals) != 1:
        raise UsageError(f"--{name} takes a single value here")
    return vals[0]


def _sizes(cfg, alpha=None):
    n = cfg["n"]
    m = cfg.get("m")
    if m is None:
        if alpha is None:
            raise UsageError("give --m or --alpha")
        m = round(alpha * n)
    return int(m), int(n)


# -------------------------------------------------------------- subcommands

def cmd_gen(cfg):
    _require(cfg, "kappa", "n", "out")
    alpha = _one(cfg, "alpha") if cfg.get("alpha") is not None else None
    M, N = _sizes(cfg, alpha)
    inst = generate_instance(M, N, _one(cfg, "kappa"), cfg["seed"])
    save_instance(inst, cfg["out"])
    return EXIT_OK


def _regime(cfg) -> RegimeConfig:
    name = cfg.get("regime") or "zero005"
    if name not in REGIMES:
        raise UsageError(f"--regime must be one of {', '.join(REGIMES)}")
    return RegimeConfig(name, kappa0=cfg.get("kappa0"), gamma=cfg.get("gamma"), delta=cfg.get("delta"),
                        retries=cfg.get("retries"), max_rounds=cfg.get("rounds"))


def solve_one(cfg: dict, seed: int, alpha: float | None = None):
    """Run one pipeline; returns (summary row, trace json or None, error text or None)."""
    if cfg.get("instance"):
        inst = load_instance(cfg["instance"])
        kappa = _one(cfg, "kappa") if cfg.get("kappa") is not None else inst.kappa
    else:
        _require(cfg, "kappa", "n")
        if alpha is None and cfg.get("alpha") is not None:
            alpha = _one(cfg, "alpha")
        M, N = _sizes(cfg, alpha)
        kappa = _one(cfg, "kappa")
        inst = generate_instance(M, N, kappa, seed)
    dseed = cfg.get("direction_seed")
    wseed = cfg.get("walk_seed")
    dseed = seed if dseed is None else dseed
    wseed = seed if wseed is None else wseed
    regime = _regime(cfg)
    base = {"kappa": kappa, "alpha": inst.alpha, "N": inst.N, "seed": inst.seed}
    try:
        trace = run_pipeline(inst, kappa, regime, direction_seed=dseed, walk_seed=wseed)
    except USER_ERRORS as exc:
        row = {**base, "feasible": False, "min_margin": None, "rounds_used": None, "wall_ms": None,
               "error": f"{type(exc).__name__}: {exc}"}
        return row, None, row["error"]
    d = json.loads(trace.to_json())
    d["config"] = cfg
    return trace.summary_row(), json.dumps(d, sort_keys=True), None


def cmd_solve(cfg):
    row, trace_json, err = solve_one(cfg, cfg["seed"])
    if err:
        print(f"EPDISC: {err}", file=sys.stderr)
        return EXIT_USER
    if cfg.get("out"):
        base = Path(cfg["out"])
        base.parent.mkdir(parents=True, exist_ok=True)
        base.with_suffix(".json").write_text(trace_json + "\n")
        base.with_suffix(".csv").write_text(_csv_text(SUMMARY_COLUMNS, [row], cfg, cfg["seed"]))
    else:
        sys.stdout.write(trace_json + "\n")
        sys.stdout.write(_csv_text(SUMMARY_COLUMNS, [row], cfg, cfg["seed"]))
    return EXIT_OK


ANALYZE_COLUMNS = ("alpha", "kappa", "feasible", "threshold", "rho", "t", "gamma", "tight_prediction",
                   "atom_mass", "alpha0", "r0")


def cmd_analyze(cfg):
    _require(cfg, "alpha", "kappa")
    rows = []
    for alpha in _floats(cfg["alpha"]):
        for kappa in _floats(cfg["kappa"]):
            op = analytics.solve_order_params(alpha, kappa)
            row = {"alpha": alpha, "kappa": kappa, "feasible": op.feasible,
                   "threshold": analytics.feasibility_threshold(kappa)}
            if op.feasible:
                st = schedules.effective_stage2(alpha, kappa)
                row.update(rho=op.rho, t=op.t, gamma=op.gamma, tight_prediction=op.tight_prediction,
                           atom_mass=analytics.MarginLaw.from_order_params(op).atom_mass,
                           alpha0=st["alpha0"], r0=st["r0"])
            rows.append(row)
    _emit(_csv_text(ANALYZE_COLUMNS, rows, cfg, cfg["seed"] if "seed" in cfg else 0), cfg.get("out"))
    return EXIT_OK


def cmd_capacity(cfg):
    _require(cfg, "kappa")
    rows = [capacity.capacity_report(k, with_lower=not cfg.get("no_lower")).row() for k in _floats(cfg["kappa"])]
    _emit(_csv_text(("kappa", "alpha_up", "alpha_low", "c_star", "alpha_low_source"), rows, cfg, 0), cfg.get("out"))
    return EXIT_OK


def cmd_schedule(cfg):
    name = cfg.get("regime") or "zero005"
    tables = schedules.margin_zero_tables()
    if name in tables:
        tab = tables[name]
        rows = []
        for rec in tab.round_inequalities():
            rows.append({"k": rec["k"], "c": tab.c_scalar(rec["k"]), "lhs": rec["lhs"], "rhs": rec["rhs"],
                         "holds": rec["holds"], "applies": rec["applies"]})
        if tab.uses_ode:
            for rec, chk in zip(rows, tab.ode_check()):
                rec.update({k: chk.get(k) for k in ("table_fraction", "p1", "table_p0", "p0", "T1", "T2")})
        summary = {"k": "drift", "c": "", "lhs": tab.drift_bound(), "rhs": "", "holds": "", "applies": ""}
        cols = ("k", "c", "lhs", "rhs", "holds", "applies", "table_fraction", "p1", "table_p0", "p0", "T1", "T2")
        _emit(_csv_text(cols, rows + [summary], cfg, 0), cfg.get("out"))
        return EXIT_OK
    if name in ("neg", "proportional"):
        _require(cfg, "alpha", "kappa")
        alpha, kappa = _one(cfg, "alpha"), _one(cfg, "kappa")
        kappa0 = cfg.get("kappa0")
        if kappa0 is None:
            if kappa >= 0:
                raise UsageError("--kappa0 is required unless kappa < 0")
            kappa0 = kappa + RegimeConfig("neg").c0 / abs(kappa)
        K = cfg.get("rounds") or schedules.round_count(cfg.get("n") or 1000)
        rep = schedules.verify_proportional_conditions(alpha, kappa, kappa0, schedules.neg_betas(K),
                                                       schedules.default_kp(kappa), K)
        text = json.dumps({"schedule": json.loads(schedules.proportional_schedule(kappa, kappa0, K).to_json()),
                           "verification": rep.to_dict(), "config": cfg},
                          sort_keys=True, default=_json_default)
        _emit(text + "\n", cfg.get("out"), ".json")
        return EXIT_OK if rep.ok else EXIT_USER
    raise UsageError(f"no static schedule for regime {name!r}; it is computed during solve")


def _json_default(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    try:
        return x.item()
    except AttributeError:
        raise TypeError(type(x)) from None


def cmd_ogp(cfg):
    _require(cfg, "kappa", "alpha")
    rows = ogp.ogp_grid(_floats(cfg["kappa"]), _floats(cfg["alpha"]),
                        [int(x) for x in _floats(cfg["m_tuple"])], _floats(cfg["beta"]),
                        _floats(cfg["eta"]), _floats(cfg["iota"]))
    _emit(_csv_text(ogp.OGP_CSV_COLUMNS, rows, cfg, 0), cfg.get("out"))
    return EXIT_OK


def _sweep_task(args):
    cfg, seed, alpha = args
    row, _, err = solve_one(cfg, seed, alpha)
    row = dict(row)
    row["alpha_target"] = alpha
    return row


SWEEP_COLUMNS = SUMMARY_COLUMNS + ("alpha_target", "runs", "error")


def cmd_sweep(cfg):
    _require(cfg, "alpha", "kappa", "n")
    alphas = _floats(cfg["alpha"])
    seeds = range(cfg["seed"], cfg["seed"] + cfg["seeds"])
    tasks = [(cfg, s, a) for a in alphas for s in seeds]
    workers = max(1, int(cfg.get("workers") or 1))
    if workers == 1:
        rows = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    rows.sort(key=lambda r: (r["alpha_target"], r["seed"]))
    agg = []
    for a in alphas:
        sub = [r for r in rows if r["alpha_target"] == a]
        agg.append({"seed": "total", "alpha_target": a, "feasible": sum(bool(r["feasible"]) for r in sub),
                    "runs": len(sub)})
    _emit(_csv_text(SWEEP_COLUMNS, rows + agg, cfg, cfg["seed"]), cfg.get("out"))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "analyze": cmd_analyze, "capacity": cmd_capacity,
            "schedule": cmd_schedule, "ogp": cmd_ogp, "sweep": cmd_sweep}


_NUMBER_LIST = re.compile(r"^-[\d.]+(e-?\d+)?(,[-+\d.e]*)*$")

_BOOL_FLAGS = {"--" + k.replace("_", "-") for k, (typ, _) in OPTIONS.items() if typ is bool}


def _glue_negative_lists(argv):
    # argparse reads "-3,-4" as an option; attach such values to the preceding flag
    out = []
    for tok in argv:
        prev = out[-1] if out else ""
        if prev.startswith("--") and "=" not in prev and prev not in _BOOL_FLAGS and _NUMBER_LIST.match(tok):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        ns = build_parser().parse_args(_glue_negative_lists(argv))
        if not ns.command:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        cfg = resolve_config(ns)
        return COMMANDS[ns.command](cfg)
    except UsageError as exc:
        print(f"EPDISC: usage: {exc}", file=sys.stderr)
        return EXIT_USER
    except USER_ERRORS as exc:
        print(f"EPDISC: {type(exc).__name__}: {str(exc).splitlines()[0]}", file=sys.stderr)
        return EXIT_USER
    except OSError as exc:
        print(f"EPDISC: io: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (PdiscError, ValueError) as exc:
        print(f"EPDISC: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
        return EXIT_USER if isinstance(exc, ValueError) else EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort guard for the exit-code contract
        print(f"EPDISC: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
