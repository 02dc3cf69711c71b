"""Command-line front end: ``mvstab run|validate|schema|examples``.

Exit codes: 0 ok, 1 usage or schema error, 2 numerical failure,
3 inconclusive or failed validation.
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import DEFAULTS, SCHEMA, Scenario, ScenarioError, load_scenario, resolve_path, shipped_scenarios
from .dynamics import AlphaProfile
from .expr import ExprError
from .invariant import check_dissipativity, find_fixed_points, solve_fixed_point, write_fixed_points_csv
from .kernels import estimate_theta, fit_decay, resolvent, write_kernel_csv
from .metrics import write_rate_csv
from .plot import svg_line_plot
from .spectral import default_window, find_roots, laplace, weak_interaction_bound, write_roots_csv
from .torus import (
    fourier_coefficients,
    stability_criterion,
    validate_diagonal_vs_volterra,
    write_criterion_csv,
    write_order_csv,
)
from .validation import validate_rate, validate_torus

__all__ = ["main", "run_scenario", "EXIT_OK", "EXIT_USAGE", "EXIT_NUMERIC", "EXIT_INCONCLUSIVE"]

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 1, 2, 3


class AnalysisError(RuntimeError):
    def __init__(self, analysis: str, err: Exception):
        self.analysis = analysis
        super().__init__(f"{analysis} failed: {type(err).__name__}: {err}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, Path):
        return str(obj)
    return obj


class _Run:
    def __init__(self, scen: Scenario, out: Path, echo):
        self.scen = scen
        self.cfg = scen.config
        self.out = out
        self.echo = echo
        self.results: dict = {}
        self.files: list = []
        self.verdicts: list = []
        self.status = EXIT_OK

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(name)
        return p

    def say(self, analysis: str, text: str):
        line = f"{analysis}: {text}"
        self.verdicts.append(line)
        self.echo(line)

    # --- analyses ----------------------------------------------------------

    def invariant(self):
        spec = self.scen.spec()
        mc, grid, sol = self.cfg["mc"], self.cfg["grid"], self.cfg["solver"]
        diss = check_dissipativity(spec, seed=mc["seed"])
        a0 = sol["a0"] if sol["a0"] is not None else [0.0] * spec.p
        rep = solve_fixed_point(spec, a0, sol["damping"], sol["tol"], sol["max_iter"], mc["M"], mc["seed"],
                                dt=grid["dt"], kappa_hat=grid["kappa_hat"], method=sol["method"])
        reports = [rep]
        if sol["multistart"]:
            reports += find_fixed_points(spec, tol=sol["tol"], mc_budget=mc["M"], seed=mc["seed"], dt=grid["dt"],
                                         kappa_hat=grid["kappa_hat"])
        write_fixed_points_csv(reports, self.path("fixed_points.csv"))
        self.results["invariant"] = {
            "a": rep.a, "converged": rep.converged, "residual": rep.residual, "iterations": rep.iterations,
            "mc_se": rep.mc_se, "dissipativity": {"beta": diss.beta, "R": diss.R},
            "all_fixed_points": [r.a for r in reports[1:]],
        }
        self._spec, self._fp = spec, rep
        coeffs = ", ".join(f"{v:.6g}" for v in rep.a)
        state = "converged" if rep.converged else "NOT converged"
        self.say("invariant", f"{state}, a* = [{coeffs}] (residual {rep.residual:.2g}, MC se "
                              f"{float(np.max(rep.mc_se)) if rep.mc_se.size else 0.0:.2g})")

    def kernel(self):
        mc, grid = self.cfg["mc"], self.cfg["grid"]
        theta = estimate_theta(self._spec, AlphaProfile(self._spec, self._fp.a), grid["step"], grid["T"], mc["M"],
                               mc["seed"], dt=min(grid["dt"], grid["step"]), kappa_hat=grid["kappa_hat"])
        write_kernel_csv(theta, self.path("theta.csv"))
        self._theta = theta
        wb = weak_interaction_bound(theta)
        self.results["kernel"] = {"integral_norm": wb.integral, "weak_interaction_certified": wb.certified,
                                  "fd_check": theta.diagnostics.get("fd_check", [])}
        self.say("kernel", f"int |Theta| dt = {wb.integral:.4g}"
                           + (" < 1, stability certified by weak interaction" if wb.certified else ""))

    def spectrum(self):
        sp = self.cfg["spectral"]
        lk = laplace(self._theta)
        rect = list(default_window(lk, sp["im_max"]))
        if sp["re_min"] is not None:
            rect[0] = sp["re_min"]
        if sp["re_max"] is not None:
            rect[1] = sp["re_max"]
        rep = find_roots(lk, tuple(rect), sp["refine_tol"], omega_tol=sp["omega_tol"])
        write_roots_csv(rep, self.path("roots.csv"))
        self._roots = rep
        self.results["spectrum"] = {
            "rectangle": rep.rectangle, "lambda_prime": rep.lambda_prime, "kappa_tail": lk.kappa_tail,
            "roots": [{"z": r.z, "multiplicity": r.multiplicity, "class": r.kind} for r in rep.roots],
            "det0": complex(lk.det(0.0)), "verdict": rep.verdict(),
        }
        self.say("spectrum", rep.verdict())

    def resolvent(self):
        om = resolvent(self._theta)
        write_kernel_csv(om, self.path("omega.csv"))
        try:
            fit = fit_decay(om, 0.5)
            info = {"rate": fit.rate, "prefactor": fit.prefactor, "window": fit.window, "r2": fit.r2}
            text = f"|Omega_t| decay rate {fit.rate:.4g} (R^2 = {fit.r2:.4f})"
        except ValueError as err:
            info = {"error": str(err)}
            text = f"no decay fit: {err}"
        self.results["resolvent"] = info
        self.say("resolvent", text)

    def torus(self):
        tor = self.cfg["torus"]
        tk = fourier_coefficients(self.scen.torus_potential(), tor["n_max"], tor["q"])
        crit = stability_criterion(tk, tor["beta"])
        write_criterion_csv(crit, self.path("torus_criterion.csv"))
        gap = validate_diagonal_vs_volterra(tk, tor["beta"], 1e-2, 5.0)
        self._tk, self._crit = tk, crit
        self.results["torus"] = {
            "lambda_prime": crit.lambda_prime, "n_star": crit.n_star, "exclusion_bound": crit.exclusion_bound,
            "conclusive": crit.conclusive, "hermitian_error": tk.hermitian_error(),
            "assumption_sum": tk.assumption_sum(), "tail_sum": tk.tail_sum,
            "diagonal_vs_volterra_rel_err": gap, "verdict": crit.verdict(),
        }
        self.say("torus", crit.verdict())
        if not crit.conclusive:
            self.status = max(self.status, EXIT_INCONCLUSIVE)

    def validate(self):
        v, mc, grid = self.cfg["validate"], self.cfg["mc"], self.cfg["grid"]
        if "torus" in self.scen.analyses:
            tor = self.cfg["torus"]
            rep = validate_torus(self._tk, tor["beta"], N=mc["N"], dt=v["dt"], T=v["T"], eps=v["eps"],
                                 seed=mc["seed"], record_dt=v["record_dt"])
            write_order_csv(rep.order, self.path("order_parameter.csv"))
            svg_line_plot(self.path("order_parameter.svg"), rep.order.t, [rep.order.r, rep.order.w1],
                          labels=["|r(t)|", "W1 to uniform"], title=self.scen.name, logy=True)
        else:
            root = self._roots.rightmost
            predicted = -root.z.real if root is not None else grid["kappa_hat"]
            rep = validate_rate(self._spec, self._fp.a, predicted, N=v["N"], dt=v["dt"], T=v["T"],
                                shift=v["shift"], seed=mc["seed"], record_dt=v["record_dt"],
                                transient=v["transient"], kappa_hat=grid["kappa_hat"])
            write_rate_csv(rep.series, self.path("validation.csv"))
            svg_line_plot(self.path("validation.svg"), rep.series.t, rep.series.w1, labels=["W1"],
                          title=self.scen.name, logy=True)
        self.results["validate"] = {"status": rep.status, "measured_rate": rep.measured_rate,
                                    "predicted_rate": rep.predicted_rate, "ratio": rep.ratio,
                                    "message": rep.message, "details": rep.details}
        self.say("validate", rep.line())
        if not rep.passed:
            self.status = max(self.status, EXIT_INCONCLUSIVE)


def run_scenario(scen: Scenario, out: Path, echo=print) -> int:
    """Run every requested analysis in dependency order and write artifacts."""
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(scen, out, echo)
    failure = None
    for name in scen.analyses:
        try:
            getattr(run, name)()
        except (ScenarioError, ExprError):
            raise
        except Exception as err:  # any numerical failure is reported with the analysis name
            failure = AnalysisError(name, err)
            break
    manifest = {
        "scenario": scen.name,
        "source": scen.source.name,
        "sha256": scen.sha256,
        "analyses": list(scen.analyses),
        "resolved_config": scen.config,
        "defaults": DEFAULTS,
        "seeds": {"mc": scen.config["mc"]["seed"]},
        "versions": {"mvstab": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "results": run.results,
        "verdicts": run.verdicts,
        "outputs": sorted(set(run.files)),
        "error": str(failure) if failure else None,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    if failure is not None:
        print(f"error: {failure}", file=sys.stderr)
        return EXIT_NUMERIC
    return run.status


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mvstab", description="Local stability analysis of mean-field diffusions.")
    p.add_argument("--version", action="version", version=f"mvstab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("run", "run the analyses requested by a scenario"),
                        ("validate", "run a scenario plus the simulation check of its verdict")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("scenario", help="scenario TOML file, or the name of a shipped scenario")
        s.add_argument("-o", "--out", help="output directory (default: the scenario's 'output' or ./mvstab-out/<name>)")
    sub.add_parser("schema", help="print the scenario JSON schema")
    sub.add_parser("examples", help="list shipped scenarios")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(SCHEMA, indent=2))
        return EXIT_OK
    if args.command == "examples":
        for name, path in shipped_scenarios().items():
            first = next((ln[1:].strip() for ln in path.read_text().splitlines() if ln.startswith("#")), "")
            print(f"{name:20s} {first}")
        return EXIT_OK
    try:
        path = resolve_path(args.scenario)
        extra = ("validate",) if args.command == "validate" else ()
        scen = load_scenario(path, extra=extra, auto_requires=args.command == "validate")
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, ExprError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or scen.config.get("output") or Path("mvstab-out") / scen.name)
    try:
        return run_scenario(scen, out)
    except (ScenarioError, ExprError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
