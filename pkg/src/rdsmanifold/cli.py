"""Command line front end.

Exit codes: 0 all checks passed, 1 a check failed, 2 usage or configuration
error, 3 internal consistency failure (e.g. a contraction ratio above q).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cocycle import BirkhoffExp, CocycleError, RatioForm, TemperedExp, check_decay_condition, verify_dichotomy, \
    verify_splitting
from .config import PRESETS, ConfigError, Scenario, build_scenario, corollary_data, load_config
from .corollaries import check_corollary
from .driving import check_flow_property
from .lp_solver import ContractionViolation, InadmissibleError, build_problem, iterate_T, solve_MN
from .perturbation import Perturbation, sigma_tau
from .rds import (InvarianceBudget, check_growth_bound, check_invariance, evaluate_psi_continuous, psi_evaluator,
                  sample_pairs, sample_points)
from .report import write_report, write_text

OK, FAILED, USAGE, INTERNAL = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# pipelines; each returns (exit code, report dict)


def run_verify(sc: Scenario) -> tuple[int, dict]:
    g, t = sc.grids, sc.tolerances
    times, points = g["sample_times"], g["sample_points"]
    flow = check_flow_property(sc.driving, times, points, tol=1e-12)
    split = verify_splitting(sc.cocycle, times, points, float(t["splitting"]))
    dich = verify_dichotomy(sc.cocycle, sc.bounds, times, points, float(t["dichotomy"]))
    decay = [check_decay_condition(sc.cocycle, sc.bounds, w, g["decay_horizon"], float(t["decay"]))
             for w in points]
    passed = flow.passed and split.passed and dich.passed and all(d.passed for d in decay)
    rep = {"command": "verify", "passed": passed, "flow": flow.to_dict(), "splitting": split.to_dict(),
           "dichotomy": dich.to_dict(), "decay": [d.to_dict() for d in decay]}
    return (OK if passed else FAILED), rep


def run_sigma_tau(sc: Scenario) -> tuple[int, dict]:
    steps = int(sc.grids["k_max"]) + int(sc.grids["horizon"])
    st = sigma_tau(sc.bounds, sc.perturbation, sc.anchor, steps * sc.time_step,
                   quadrature=None if sc.discrete else sc.time_step,
                   tail_rate_hint=sc.tolerances.get("tail_rate_hint"))
    rep = {"command": "sigma-tau", **st.to_dict()}
    if st.admissible:
        rep["constants"] = solve_MN(st.sigma, st.tau_total).to_dict()
        return OK, rep
    rep["constants"] = None
    return FAILED, rep


def _one_step_psi(sc: Scenario):
    if sc.discrete:
        return psi_evaluator(sc.cocycle, sc.perturbation)
    h = float(sc.tolerances.get("psi_step", sc.time_step / 8))
    return lambda t, w, x: evaluate_psi_continuous(sc.cocycle, sc.perturbation, t, w, x, h)


def _stepper_allowance(sc: Scenario, graph, samples) -> float:
    """Twice the largest change of the continuous Psi when its step is halved."""
    if sc.discrete:
        return 0.0
    h = float(sc.tolerances.get("psi_step", sc.time_step / 8))
    worst = 0.0
    for j, n, coords in samples:
        xi = coords @ graph.E_bases[j].T
        x0 = xi + graph.at_coords(j, coords)[0]
        a = evaluate_psi_continuous(sc.cocycle, sc.perturbation, n * sc.time_step, graph.fibers[j], x0, h)
        b = evaluate_psi_continuous(sc.cocycle, sc.perturbation, n * sc.time_step, graph.fibers[j], x0, h / 2)
        nx = np.abs(xi).max(axis=1)
        d = np.abs(a - b).max(axis=1)
        worst = max(worst, float(np.max(np.where(nx > 0, d / np.where(nx > 0, nx, 1.0), 0.0))))
    return 2.0 * worst


def _check_fibers(k_max: int, horizon: int) -> tuple[list, list]:
    fibers = sorted({0, k_max // 4, k_max // 2, k_max})
    steps = sorted({s for s in (1, 2, 5, 10, 20, horizon // 2, horizon) if 1 <= s <= horizon})
    return fibers, steps


def run_solve(sc: Scenario, out: Path | None, stem: str = "") -> tuple[int, dict]:
    g, t = sc.grids, sc.tolerances
    rep: dict = {"command": "solve"}
    pb = build_problem(sc.cocycle, sc.bounds, sc.perturbation, sc.anchor, g["xi_extent"], g["xi_points"],
                       g["k_max"], g["horizon"], g.get("time_step"), sc.threads)
    try:
        res = iterate_T(pb, float(t["solver"]), int(t["max_iters"]), t.get("tail_rate_hint"))
    except InadmissibleError as exc:
        rep.update(passed=False, error=str(exc))
        return FAILED, rep
    except ContractionViolation as exc:
        rep.update(passed=False, error=str(exc), solve=exc.result.to_dict())
        return INTERNAL, rep
    rep["solve"] = res.to_dict()
    if out is not None:
        write_text(out / f"phi{stem}.csv", res.graph.to_csv())
        write_text(out / f"ratios{stem}.csv", res.ratio_trace_csv())
    fibers, steps = _check_fibers(pb.k_max, pb.horizon)
    samples = sample_points(res.graph, fibers, steps, int(sc.output.get("invariance_stride", 1)))
    budget = InvarianceBudget(solver_tol=res.tol, l_tail=res.l_tail_bound,
                              grid_allowance=res.constants.N * pb.grid.spacing,
                              stepper_allowance=_stepper_allowance(sc, res.graph, samples))
    psi = _one_step_psi(sc)
    inv = check_invariance(psi, res.graph, sc.cocycle, samples, budget, step=pb.step)
    pairs = sample_pairs(res.graph, int(sc.output["growth_pairs"]), fibers, steps, seed=int(sc.output["seed"]))
    growth = check_growth_bound(psi, res.graph, res.constants.C, sc.bounds, pairs, sc.cocycle,
                                tol=float(t["growth"]), step=pb.step)
    rep["invariance"] = inv.to_dict()
    rep["growth"] = growth.to_dict()
    passed = res.converged and inv.passed and growth.passed
    rep["passed"] = passed
    return (OK if passed else FAILED), rep


def _implied_sigma_tau(kind: str, data, samples, horizon) -> list:
    """sigma, tau of the dichotomy family a discrete corollary refers to, at each sample."""
    cls = {"c42": TemperedExp, "c43": BirkhoffExp, "c44": RatioForm}.get(kind)
    if cls is None:
        return []
    bounds = cls(data.driving, data.K, data.a, data.b)
    pert = Perturbation(f_fn=lambda w, x: np.zeros_like(x), lip_fn=data.lip, tag="lip-only")
    out = []
    for w in samples:
        st = sigma_tau(bounds, pert, w, int(horizon))
        out.append({"omega": w.tolist(), "sigma": st.sigma, "tau": st.tau, "tau_tail_bound": st.tau_tail_bound})
    return out


def run_check(cfg: dict, cid: str) -> tuple[int, dict]:
    data, samples, horizon = corollary_data(cid, cfg.get("corollary"))
    try:
        rep = check_corollary(cid, data, samples, horizon)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = {"command": "check", **rep.to_dict(), "delta": data.delta}
    if rep.passed:
        out["implied"] = _implied_sigma_tau(rep.kind, data, samples, horizon)
    return (OK if rep.passed else FAILED), out


def run_reproduce(cfg: dict, out: Path | None, name: str = "custom") -> tuple[int, dict]:
    sc = build_scenario(cfg)
    codes, rep = [], {"command": "reproduce", "preset": name, "config": cfg}
    for step, fn in (("verify", lambda: run_verify(sc)), ("sigma_tau", lambda: run_sigma_tau(sc)),
                     ("solve", lambda: run_solve(sc, out, f"-{name}"))):
        code, r = fn()
        codes.append(code)
        rep[step] = r
    cor = cfg.get("corollary")
    if isinstance(cor, dict) and "kind" in cor:
        code, r = run_check(cfg, cor["kind"])
        codes.append(code)
        rep["check"] = r
    code = max(codes)
    rep["exit_code"] = code
    return code, rep


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rdsmanifold", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="TOML run configuration")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario used as defaults")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. perturbation.scale.scale=0.5")
    common.add_argument("-o", "--out", default="rdsmanifold-out", help="output directory")
    common.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="check flow, splitting, dichotomy and decay")
    sub.add_parser("sigma-tau", parents=[common], help="sigma, tau and the constants M, N, C, q")
    sub.add_parser("solve", parents=[common], help="compute the invariant graph and verify it")
    chk = sub.add_parser("check", parents=[common], help="check the hypotheses of a corollary")
    chk.add_argument("corollary", help="one of c32, c33, c34, c42, c43, c44")
    rep = sub.add_parser("reproduce", parents=[common], help="run a built-in scenario end to end")
    rep.add_argument("name", choices=sorted(PRESETS))
    return ap


def _summary(rep: dict) -> str:
    cmd = rep.get("command")
    lines = [f"{cmd}: {'PASS' if rep.get('passed', rep.get('exit_code') == 0) else 'FAIL'}"]
    if cmd == "sigma-tau":
        lines.append(f"  sigma={rep['sigma']!r} tau={rep['tau']!r} tail={rep['tau_tail_bound']!r} "
                     f"admissible={rep['admissible']}")
        if rep.get("constants"):
            k = rep["constants"]
            lines.append(f"  M={k['M']!r} N={k['N']!r} C={k['C']!r} q={k['q']!r}")
    elif cmd == "solve" and "solve" in rep:
        s = rep["solve"]
        lines.append(f"  status={s['status']} iterations={s['iterations']} max_ratio={s['max_ratio']!r} q={s['q']!r}")
        if "invariance" in rep:
            lines.append(f"  invariance residual={rep['invariance']['max_residual']!r} "
                         f"budget={rep['invariance']['budget']['total']!r}")
            lines.append(f"  growth ratio={rep['growth']['max_ratio']!r} C={rep['growth']['C']!r}")
    elif cmd == "check":
        for c in rep["checks"]:
            lines.append(f"  {'ok  ' if c['passed'] else 'FAIL'} {c['name']} margin={c['margin']!r}")
    if "error" in rep:
        lines.append(f"  error: {rep['error']}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.command == "reproduce":
            cfg = load_config(args.config, args.set, preset=args.name)
            code, rep = run_reproduce(cfg, out, args.name)
            name = f"reproduce-{args.name}.json"
        else:
            cfg = load_config(args.config, args.set, preset=args.preset)
            if args.command == "check":
                code, rep = run_check(cfg, args.corollary)
                name = f"check-{args.corollary.lower()}.json"
            else:
                sc = build_scenario(cfg)
                fn = {"verify": lambda: run_verify(sc), "sigma-tau": lambda: run_sigma_tau(sc),
                      "solve": lambda: run_solve(sc, out)}[args.command]
                code, rep = fn()
                rep["config"] = cfg
                name = f"{args.command}.json"
    except (ConfigError, CocycleError) as exc:
        print(f"rdsmanifold: configuration error: {exc}", file=sys.stderr)
        return USAGE
    except (ArithmeticError, ContractionViolation) as exc:
        print(f"rdsmanifold: internal consistency failure: {exc}", file=sys.stderr)
        return INTERNAL
    rep.setdefault("exit_code", code)
    write_report(out / name, rep)
    if not args.quiet:
        print(_summary(rep))
        print(f"report: {out / name}")
    return code


if __name__ == "__main__":
    sys.exit(main())
