"""Command-line interface: ``rdlab analyze|simulate|mc|plot``.

Every subcommand accepts ``--config FILE`` holding a JSON object with the same
keys as the long flags (dashes or underscores). Flags given on the command
line win over the file. Fatal errors print a JSON error document on stdout
and exit with 2 (configuration) or 3 (data/estimation).
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
from typing import Sequence

from .data import ColumnMapping, RdDesign, load_dataset
from .errors import ConfigError, RdError
from .plots import binned_scatter, to_svg
from .report import PipelineConfig, dumps, run_pipeline
from .simulation import ANALYSES, FAMILIES, PRESETS, DgpSpec, generate, monte_carlo


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_config(p):
    p.add_argument("--config", help="JSON file with default settings")


def _add_data_flags(p):
    p.add_argument("--data", help="input CSV")
    p.add_argument("--running", help="running-variable column (default x)")
    p.add_argument("--outcome", help="outcome column (default y)")
    p.add_argument("--treatment", help="treatment column (0/1)")
    p.add_argument("--covariates", help="comma-separated covariate columns")
    p.add_argument("--cutoff", type=float)
    p.add_argument("--treated-side", choices=("above", "below"))
    p.add_argument("--kernel", choices=("triangular", "uniform", "epanechnikov"))
    p.add_argument("--order", type=int)
    p.add_argument("--bandwidth", help="'cv' or a positive number")


def _add_dgp_flags(p):
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--true-tau", type=float)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--compliance-jump", type=float)
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="family parameter override; VALUE is parsed as JSON when possible")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rdlab", description="Regression discontinuity analysis toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    a = sub.add_parser("analyze", help="run the full analysis pipeline on a CSV")
    _add_config(a)
    _add_data_flags(a)
    a.add_argument("--design", choices=("sharp", "fuzzy", "kink"))
    a.add_argument("--donut", type=float, help="extra donut radius for the sensitivity sweep")
    a.add_argument("--placebos", help="comma-separated placebo cutoffs")
    a.add_argument("--covariate-adjust", action="store_const", const=True)
    a.add_argument("--correction", choices=("bonferroni", "benjamini_hochberg", "none"))
    a.add_argument("--lr-window", type=float, help="half-width of the local-randomization window")
    a.add_argument("--max-permutations", type=int)
    a.add_argument("--bins", help="fixed:K or auto")
    a.add_argument("--seed", type=int)
    a.add_argument("--out", help="write the report here instead of stdout")
    a.add_argument("--format", choices=("json",))

    s = sub.add_parser("simulate", help="generate a dataset from a DGP family or preset")
    _add_config(s)
    _add_dgp_flags(s)
    s.add_argument("--out", help="output CSV (stdout when omitted)")

    m = sub.add_parser("mc", help="Monte Carlo summary of an analysis on a DGP")
    _add_config(m)
    _add_dgp_flags(m)
    m.add_argument("--reps", type=int)
    m.add_argument("--analysis", choices=ANALYSES)
    m.add_argument("--design-args", help="comma-separated KEY=VALUE design settings, e.g. bandwidth=1.0,kernel=uniform")
    m.add_argument("--placebos", help="comma-separated placebo cutoffs")
    m.add_argument("--grid", help="comma-separated scan points")
    m.add_argument("--workers", type=int)
    m.add_argument("--out")

    p = sub.add_parser("plot", help="binned-scatter plot data")
    _add_config(p)
    _add_data_flags(p)
    p.add_argument("--variable", help="outcome, treatment, or a covariate name")
    p.add_argument("--bins", help="fixed:K or auto")
    p.add_argument("--svg", help="also write a minimal SVG chart here")
    p.add_argument("--out")
    return parser


def _merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Namespace values with gaps filled from ``--config``; returns a plain dict."""
    values = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if not args.config:
        return values
    try:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {args.config}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    base = os.path.dirname(os.path.abspath(args.config))
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in values:
            raise ConfigError(f"unknown configuration key {key!r} for {args.command}")
        if values[dest] is None:
            if dest in ("data", "out", "svg") and isinstance(value, str) and not os.path.isabs(value):
                value = os.path.join(base, value)
            values[dest] = value
    return values


def _kv_pairs(items, what: str) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"{what} entries must look like KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def _floats(value, name: str) -> list[float] | None:
    if value is None:
        return None
    items = value.split(",") if isinstance(value, str) else value
    try:
        return [float(v) for v in items if str(v).strip()]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numbers") from None


def _write(text: str, path: str | None, stdout) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)


def _dgp(v: dict) -> DgpSpec:
    params = v.get("param") or {}
    if isinstance(params, list):
        params = _kv_pairs(params, "--param")
    kw = {k: v[k] for k in ("true_tau", "noise_sd", "compliance_jump") if v.get(k) is not None}
    n = v.get("n") or 2000
    if v.get("preset"):
        if v.get("family"):
            raise ConfigError("give either --family or --preset, not both")
        return DgpSpec.preset(v["preset"], n=n, parameters=params, **kw)
    if not v.get("family"):
        raise ConfigError("--family or --preset is required")
    return DgpSpec(v["family"], n=n, parameters=params, **kw)


def _bandwidth(value):
    if value is None or value == "cv":
        return "cv"
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bandwidth must be 'cv' or a number, got {value!r}") from None


def cmd_analyze(v: dict, stdout) -> int:
    v = dict(v)
    if v.get("bandwidth") not in (None, "cv"):
        v["bandwidth"] = _bandwidth(v["bandwidth"])
    report = run_pipeline(PipelineConfig.from_mapping(v))
    _write(report.to_json(), v.get("out"), stdout)
    return 0


def cmd_simulate(v: dict, stdout) -> int:
    data = generate(_dgp(v), v.get("seed") or 0)
    buf = io.StringIO()
    data.to_csv(buf)
    _write(buf.getvalue(), v.get("out"), stdout)
    return 0


def cmd_mc(v: dict, stdout) -> int:
    spec = _dgp(v)
    dargs = v.get("design_args") or {}
    if isinstance(dargs, str):
        dargs = _kv_pairs([s for s in dargs.split(",") if s.strip()], "--design-args")
    if "bandwidth" in dargs:
        dargs["bandwidth"] = _bandwidth(dargs["bandwidth"])
    try:
        design = spec.design(**dargs)
    except TypeError as exc:
        raise ConfigError(f"bad design argument: {exc}") from None
    analysis = v.get("analysis") or design.kind
    reps = v.get("reps") or 100
    summary = monte_carlo(
        spec, design, analysis, reps, v.get("seed") or 0,
        placebos=_floats(v.get("placebos"), "placebos"),
        grid=_floats(v.get("grid"), "grid"),
        workers=v.get("workers") or 1,
    )
    doc = {"spec": spec.to_dict(), "design": design.to_dict(), "seed": v.get("seed") or 0, "summary": summary.to_dict()}
    _write(dumps(doc), v.get("out"), stdout)
    return 0


def cmd_plot(v: dict, stdout) -> int:
    if not v.get("data") or v.get("cutoff") is None:
        raise ConfigError("plot needs --data and --cutoff")
    covs = v.get("covariates") or ()
    if isinstance(covs, str):
        covs = tuple(c.strip() for c in covs.split(",") if c.strip())
    mapping = ColumnMapping(v.get("running") or "x", v.get("outcome") or "y", v.get("treatment"), tuple(covs))
    data = load_dataset(v["data"], mapping)
    design = RdDesign(
        cutoff=float(v["cutoff"]),
        treated_side=v.get("treated_side") or "above",
        kernel=v.get("kernel") or "triangular",
        order=1 if v.get("order") is None else v["order"],
        bandwidth=_bandwidth(v.get("bandwidth")),
    )
    try:
        plot = binned_scatter(data, design, v.get("variable") or "outcome", v.get("bins") or "auto")
    except ValueError as exc:
        if isinstance(exc, RdError):
            raise
        raise ConfigError(str(exc)) from None
    if v.get("svg"):
        with open(v["svg"], "w", encoding="utf-8") as fh:
            fh.write(to_svg(plot))
    _write(dumps(plot), v.get("out"), stdout)
    return 0


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "mc": cmd_mc, "plot": cmd_plot}


def main(argv: Sequence[str] | None = None, stdout=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        values = _merge_config(args, parser)
        return COMMANDS[args.command](values, stdout)
    except RdError as exc:
        stdout.write(dumps({"error": exc.to_dict()}))
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
