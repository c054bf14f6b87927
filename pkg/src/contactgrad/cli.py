"""Command-line front end.

Subcommands: ``simulate``, ``sweep``, ``penetration``, ``gradcheck`` and
``optimize``. Every CSV starts with the full configuration as ``# key = value``
comment lines, which :func:`contactgrad.config.parse_config_lines` (with
``header=True``) reads back into the identical config.

Exit codes: 0 success (including a diverged optimisation, which is an expected
experimental outcome), 1 usage or configuration error, 2 numerical failure.

Set ``CONTACTGRAD_WORKERS`` to run sweep points in that many processes.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import smoothing as sm
from . import trajopt as to
from .config import MODELS, ConfigError, SimConfig, parse_config
from .dynamics import rollout
from .scenarios import get_scenario, scenario_from_config
from .svg import emit_svg

logger = logging.getLogger("contactgrad")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

PENETRATION_SCENARIO = "hopper-2d"
PENETRATION_DT = 0.002


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with config errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _on_off(text: str) -> bool:
    low = text.lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError("expected on or off")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    p.add_argument("--seed", type=int, help="root random seed")
    p.add_argument("--model", choices=MODELS, help="contact model override")
    p.add_argument("--kappa", type=float, help="sigmoid stiffness override")
    p.add_argument("--toi", type=_on_off, help="time-of-impact correction on|off")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contactgrad", description="Differentiable contact simulation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="roll out one scenario and write its trajectory")
    _common(p)

    p = sub.add_parser("sweep", help="final state and gradient estimates over an initial-height grid")
    _common(p)

    p = sub.add_parser("penetration", help="mean penetration depth per contact model")
    _common(p)
    p.add_argument("--scenario", help=f"scenario (default: {PENETRATION_SCENARIO})")
    p.add_argument("--dt", type=float, help=f"time step (default: {PENETRATION_DT})")
    p.add_argument(
        "--variants",
        help="comma list such as soft,smoothed:100,smoothed:1000,hard,hard+toi (the default)",
    )

    p = sub.add_parser("gradcheck", help="taped gradients against finite differences")
    _common(p)
    p.add_argument("--points", type=int, default=5, help="random decision points per scenario (default: 5)")
    p.add_argument("--models", default="smoothed,hard", help="comma list of models (default: smoothed,hard)")

    p = sub.add_parser("optimize", help="gradient descent on a trajectory task")
    _common(p)
    p.add_argument("--task", choices=sorted(to.TASKS), help="task override")
    p.add_argument("--epochs", type=int, help="epoch override")
    p.add_argument("--lr", type=float, help="learning-rate override")
    return parser


def load_config(args) -> SimConfig:
    cfg = parse_config(args.config) if args.config else SimConfig()
    changes = {}
    for key in ("seed", "model", "kappa", "toi"):
        val = getattr(args, key, None)
        if val is not None:
            changes[key] = val
    for key in ("task", "epochs", "lr"):
        val = getattr(args, key, None)
        if val is not None:
            changes[key] = val
    return cfg.with_(**changes) if changes else cfg


# ---------------------------------------------------------------------------
# output helpers


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))


def write_csv(path: Path, cfg: SimConfig, header: list[str], rows, notes: list[str] = ()) -> Path:
    """CSV with the config echoed as ``# key = value`` lines, then ``# note`` lines."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in cfg.to_lines():
            fh.write(f"# {line}\n")
        for note in notes:
            fh.write(f"# {note}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _num(c) for c in row])
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: SimConfig, out: Path) -> int:
    scenario = scenario_from_config(cfg)
    actions = ex.stored_actions_for(scenario, cfg)
    traj = rollout(scenario, cfg, actions=actions)
    sys_ = scenario.system
    n = sys_.n_dof
    first = {c.tag: c for c in sys_.contact_candidates(list(scenario.initial_state.q))}
    tags = list(sys_.contact_tags)
    header = ["step", "time"] + [f"q{i}" for i in range(n)] + [f"u{i}" for i in range(n)]
    width = {}
    for tag in tags:
        width[tag] = 1 + len(first[tag].tangents)
        header.append(f"d_{tag}")
        header.append(f"p_{tag}_n")
        header.extend(f"p_{tag}_t{a}" for a in range(width[tag] - 1))
    rows = []
    for k, (q, u) in enumerate(zip(traj.q_values(), traj.u_values())):
        gaps = {c.tag: float(c.d) for c in sys_.contact_candidates(q)}
        row = [k, k * cfg.dt, *q, *u]
        for tag in tags:
            row.append(gaps[tag])
            if k == 0:
                row.extend([None] * width[tag])
            else:
                imp = traj.infos[k - 1].impulses.get(tag, [0.0] * width[tag])
                row.extend(imp)
        rows.append(row)
    notes = [f"status: {'failed ' + traj.error if traj.failed else 'ok'}"]
    path = write_csv(out / "trajectory.csv", cfg, header, rows, notes)
    print(f"wrote {path} ({traj.n_steps} steps)")
    if traj.failed:
        print(f"rollout failed: {traj.error}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


SWEEP_COLUMNS = ["h0", "final_h", "final_v", "grad_analytic", "grad_bundled", "grad_zog", "zog_std", "fog_std", "status"]


def cmd_sweep(cfg: SimConfig, out: Path) -> int:
    scenario = scenario_from_config(cfg)
    result = sm.sweep_final_state(scenario, cfg)
    rows = []
    for p in result.points:
        a = p.estimates.get("analytic_fog")
        b = p.estimates.get("bundled_fog")
        z = p.estimates.get("zog")
        rows.append(
            [
                p.h0,
                p.final_h,
                p.final_v,
                a.scalar if a else math.nan,
                b.scalar if b else math.nan,
                z.scalar if z else math.nan,
                float(np.sqrt(z.variance[0])) if z else math.nan,
                float(np.sqrt(b.variance[0])) if b else math.nan,
                p.error or "ok",
            ]
        )
    notes = [f"gradients: d {cfg.sweep_target} / d h0"]
    path = write_csv(out / "sweep.csv", cfg, SWEEP_COLUMNS, rows, notes)
    h0 = result.column("h0")
    emit_svg(
        [(h0, result.column("final_h")), (h0, result.column("final_v"))],
        ["final height (m)", "final velocity (m/s)"],
        out / "sweep_state.svg",
        title=f"{scenario.name}, {cfg.model}",
        xlabel="initial height h0 (m)",
        ylabel="final state",
    )
    emit_svg(
        [(h0, result.column(k)) for k in ("analytic_fog", "bundled_fog", "zog")],
        ["analytic FoG", "bundled FoG", "ZoG"],
        out / "sweep_gradients.svg",
        title=f"d {cfg.sweep_target} / d h0",
        xlabel="initial height h0 (m)",
        ylabel="gradient",
    )
    failed = sum(1 for p in result.points if p.error)
    print(f"wrote {path} ({len(rows)} points, {failed} annotated failures)")
    return EXIT_OK


def cmd_penetration(cfg: SimConfig, out: Path, scenario_name=None, dt=None, variants=None) -> int:
    base = cfg.with_(scenario=scenario_name or PENETRATION_SCENARIO, dt=dt or PENETRATION_DT)
    scenario = scenario_from_config(base)
    if variants:
        try:
            configs = [ex.parse_variant(v.strip(), base) for v in variants.split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --variants entry: {exc}") from None
        if len(configs) < 2:
            raise UsageError("--variants needs at least two model configs")
    else:
        configs = ex.default_penetration_variants(base)
    actions = ex.stored_actions_for(scenario, base)
    report = ex.penetration_report(scenario, configs, actions)
    order = report.ordering()
    rank = {label: i + 1 for i, label in enumerate(order)}
    rows = [
        [r.label, r.model, r.kappa, r.toi, r.mean_depth, r.max_depth, r.contact_steps, rank[r.label]]
        for r in report.rows
    ]
    header = ["label", "model", "kappa", "toi", "mean_penetration", "max_penetration", "contact_steps", "rank"]
    path = write_csv(out / "penetration.csv", base, header, rows)
    n_steps = len(report.rows[0].series)
    series_rows = [
        [k + 1, (k + 1) * base.dt, *(r.series[k] if k < len(r.series) else None for r in report.rows)]
        for k in range(n_steps)
    ]
    write_csv(out / "penetration_series.csv", base, ["step", "time"] + [r.label for r in report.rows], series_rows)
    t = [(k + 1) * base.dt for k in range(n_steps)]
    emit_svg(
        [(t, [math.nan if v is None else v for v in r.series]) for r in report.rows],
        [r.label for r in report.rows],
        out / "penetration.svg",
        title=f"penetration depth, {scenario.name}",
        xlabel="time (s)",
        ylabel="depth (m)",
    )
    print(f"{'rank':<5} {'model':<26} {'mean depth (m)':>16} {'contact steps':>14}")
    for label in order:
        r = report.by_label()[label]
        print(f"{rank[label]:<5} {label:<26} {r.mean_depth:>16.6g} {r.contact_steps:>14d}")
    print(f"wrote {path}")
    return EXIT_NUMERICAL if any(r.failed for r in report.rows) else EXIT_OK


def cmd_gradcheck(cfg: SimConfig, out: Path, points: int = 5, models: str = "smoothed,hard") -> int:
    model_list = tuple(m.strip() for m in models.split(",") if m.strip())
    for m in model_list:
        if m not in MODELS:
            raise UsageError(f"unknown model {m!r}")
    results = ex.run_gradcheck(cfg, models=model_list, n_points=points)
    for r in results:
        err = "-" if math.isnan(r.max_rel_err) else f"{r.max_rel_err:.3e}"
        extra = f"  ({r.detail})" if r.detail else ""
        print(f"{r.status.upper():<8} {r.name:<52} max_rel_err={err}{extra}")
    rows = [[r.name, r.status, r.max_rel_err, r.detail] for r in results]
    path = write_csv(out / "gradcheck.csv", cfg, ["check", "status", "max_rel_err", "detail"], rows)
    n_fail = sum(1 for r in results if r.status == "fail")
    n_excl = sum(1 for r in results if r.status == "excluded")
    print(f"{len(results) - n_fail - n_excl} passed, {n_fail} failed, {n_excl} excluded by design; wrote {path}")
    return EXIT_NUMERICAL if n_fail else EXIT_OK


def cmd_optimize(cfg: SimConfig, out: Path) -> int:
    prob = to.make_task(cfg.task, cfg)
    schedule = to.KappaSchedule.from_config(cfg)
    trace = to.gd_optimize(prob, schedule, lr=cfg.lr, epochs=cfg.epochs, seed=cfg.seed, adaptive=cfg.adaptive)
    rows = [[r.epoch, r.loss, r.grad_norm, r.kappa if cfg.model == "smoothed" else None] for r in trace.records]
    notes = [f"status: {trace.status}" + (f" ({trace.message})" if trace.message else "")]
    path = write_csv(out / "trace.csv", cfg, ["epoch", "loss", "grad_norm", "kappa"], rows, notes)
    if trace.records:
        emit_svg(
            [([r.epoch for r in trace.records], [r.loss for r in trace.records])],
            [f"{cfg.task} loss"],
            out / "trace.svg",
            title=f"{cfg.task}, {ex.variant_label(cfg)}",
            xlabel="epoch",
            ylabel="loss",
        )
    print(f"{cfg.task}: {trace.status} after {len(trace.records)} epochs, final loss {trace.final_loss:.6g}")
    if trace.diverged:
        print(f"divergence early stop: {trace.message}")
    elif cfg.eval_model != cfg.model:
        final_cfg = cfg.with_(kappa=schedule.kappa(max(cfg.epochs - 1, 0)))
        rep = to.transfer_evaluate(prob, trace.theta, final_cfg, cfg.eval_model)
        write_csv(
            out / "transfer.csv",
            cfg,
            ["train_model", "eval_model", "train_loss", "eval_loss", "gap", "ratio"],
            [[rep.train_model, rep.eval_model, rep.train_loss, rep.eval_loss, rep.gap, rep.ratio]],
        )
        print(f"transfer to {rep.eval_model}: train loss {rep.train_loss:.6g}, eval loss {rep.eval_loss:.6g}, gap {rep.gap:.6g}")
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out)
        if args.command == "penetration":
            return cmd_penetration(cfg, out, args.scenario, args.dt, args.variants)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, out, args.points, args.models)
        return cmd_optimize(cfg, out)
    except (ConfigError, UsageError, KeyError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"contactgrad: error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, sm.EstimatorError) as exc:
        print(f"contactgrad: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
