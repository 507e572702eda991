"""Command-line front end: run configured analyses, emit deterministic reports.

Reports carry no timestamps and all corpora/meshes/initial vectors are
seeded, so re-running a config reproduces the report byte for byte.  Each
analysis is executed independently in dependency order; a failure becomes a
structured error object and everything downstream of it gets a skip marker,
while unrelated analyses still run.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy
import sympy as sp
import yaml

from . import __version__
from .distribution import Distribution, LocalPresentation, fiber_dims
from .foliated_forms import d_squared_check
from .isometry import (Diffeo, check_distribution_preserved, check_isometry,
                       check_laplacian_commutation)
from .laplacian import (LaplacianResult, horizontal_laplacian,
                        ims_localization_check, principal_symbol)
from .liehull import hull_generate
from .numerics import (Grid, discretize, low_spectrum, smoothing_probe,
                       to_triplets, weighted_symmetry_check)
from .registry import (ANALYSES, DEPENDS, ConfigParse, JobConfig,
                       UnknownAnalysis, UnknownLabel, _chart_from,
                       _fields_from, _parse_expr, registry_get, registry_list,
                       registry_mapping)
from .symexpr import Chart, GrammarError, canonicalize, parse, to_wire
from .vectorcalc import Density, DiffOperator, VectorField


def _fmt(x: float) -> str:
    return f"{float(x):.6g}"


def _jsonable(obj):
    """Plain JSON types only: numpy scalars to python, tuples to lists,
    non-finite floats to strings (strict JSON has no Infinity/NaN)."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    return obj


# ---------------------------------------------------------------------------
# string renderings of operators (for summaries and goldens)

def _mono_string(chart: Chart, alpha) -> str:
    parts = []
    for name, k in zip(chart.coords, alpha):
        if k == 1:
            parts.append(f"d{name}")
        elif k > 1:
            parts.append(f"d{name}^{k}")
    return "*".join(parts) if parts else "1"


def _join_signed(parts) -> str:
    out = parts[0]
    for p in parts[1:]:
        if p.startswith("-"):
            out += " - " + p[1:]
        else:
            out += " + " + p
    return out


def operator_string(op: DiffOperator) -> str:
    """Deterministic rendering, highest order first: '(-x^2 - y^2)*dx^2 + ...'."""
    if not op.terms:
        return "0"
    parts = []
    for alpha in sorted(op.terms, key=lambda a: (-sum(a), tuple(-k for k in a))):
        c = canonicalize(op.terms[alpha])
        mono = _mono_string(op.chart, alpha)
        w = to_wire(c)
        if mono == "1":
            parts.append(f"({w})" if c.is_Add else w)
        elif w == "1":
            parts.append(mono)
        elif w == "-1":
            parts.append(f"-{mono}")
        elif c.is_Add:
            parts.append(f"({w})*{mono}")
        else:
            parts.append(f"{w}*{mono}")
    return _join_signed(parts)


def field_string(X: VectorField) -> str:
    """First-order-operator rendering of a vector field: 'dx - 1/2*y*dz'."""
    parts = []
    for name, c in zip(X.chart.coords, X.coeffs):
        c = canonicalize(c)
        if c == 0:
            continue
        w = to_wire(c)
        if w == "1":
            parts.append(f"d{name}")
        elif w == "-1":
            parts.append(f"-d{name}")
        elif c.is_Add:
            parts.append(f"({w})*d{name}")
        else:
            parts.append(f"{w}*d{name}")
    return _join_signed(parts) if parts else "0"


def sum_of_squares_string(lres: LaplacianResult):
    """'-(dx - 1/2*y*dz)^2 - (dy + 1/2*x*dz)^2' when every factored frame
    field satisfies Xt^* = -Xt (mu-divergence-free); None otherwise."""
    pieces = []
    for adj, Xf in lres.factors:
        if not (adj + DiffOperator.from_vector_field(Xf)).is_zero():
            return None
        pieces.append(f"({field_string(Xf)})^2")
    return "-" + " - ".join(pieces)


def _matrix_wires(M: sp.Matrix):
    return [[to_wire(canonicalize(M[i, j])) for j in range(M.cols)]
            for i in range(M.rows)]


# ---------------------------------------------------------------------------
# the analyses

def _an_fibers(cfg: JobConfig, products: dict) -> dict:
    opts = cfg.options["fibers"]
    points = [tuple(p) for p in opts.get("points", [[0.0] * cfg.chart.dim])]
    rows = []
    for p in points:
        rep = fiber_dims(cfg.distribution, p, jet_order=cfg.jet_order)
        rows.append(rep.to_payload())
    return {"jet_order": cfg.jet_order, "points": rows}


def _an_metric(cfg: JobConfig, products: dict) -> dict:
    from .metric import cometric
    G = cometric(cfg.presentation)
    products["cometric"] = G
    payload = {"cometric": _matrix_wires(G),
               "det_cometric": to_wire(canonicalize(G.det()))}
    det = canonicalize(G.det())
    if det != 0:
        payload["metric"] = _matrix_wires(G.inv().applyfunc(sp.cancel))
        payload["metric_note"] = ("inverse of the cometric; valid off the "
                                  "vanishing locus of det_cometric")
    return payload


def _an_laplacian(cfg: JobConfig, products: dict) -> dict:
    lres = horizontal_laplacian(cfg.presentation, cfg.density)
    products["laplacian"] = lres
    payload = lres.to_payload()
    payload["density"] = to_wire(canonicalize(cfg.density.weight))
    payload["operator_string"] = operator_string(lres.operator)
    payload["factor_fields"] = [field_string(Xf) for _, Xf in lres.factors]
    sos = sum_of_squares_string(lres)
    if sos is not None:
        payload["sum_of_squares"] = sos
    if cfg.pou is not None:
        rep = ims_localization_check(lres, cfg.pou)
        payload["ims"] = {
            "exact": bool(rep.exact),
            "remainder_orders": list(rep.remainder_orders),
            "residual_terms": {str(k): to_wire(canonicalize(v))
                               for k, v in sorted(rep.residual_terms.items())},
        }
    return payload


def _an_symbol(cfg: JobConfig, products: dict) -> dict:
    sym = principal_symbol(products["laplacian"])
    return {"flavor": sym.flavor,
            "expr": to_wire(sp.expand(sym.expr)),
            "matrix": _matrix_wires(sym.coefficient_matrix())}


def _an_hull(cfg: JobConfig, products: dict) -> dict:
    opts = cfg.options["hull"]
    rep = hull_generate(cfg.distribution,
                        max_depth=int(opts.get("max_depth", 3)),
                        grid_n=int(opts.get("grid_n", 5)),
                        tol=cfg.tolerances.get("membership", 1e-9),
                        seed=cfg.seed)
    payload = rep.to_payload()
    payload["new_field_strings"] = {
        str(d): [field_string(f) for f in fs]
        for d, fs in sorted(rep.new_fields_per_depth.items()) if d > 1}
    products["hull"] = rep
    return payload


def _an_derham(cfg: JobConfig, products: dict) -> dict:
    opts = cfg.options["derham"]
    rep = d_squared_check(cfg.presentation,
                          k_max=int(opts.get("max_degree", 2)),
                          count=int(opts.get("count", 4)),
                          seed=cfg.seed)
    return rep.to_payload()


def _an_isometry(cfg: JobConfig, products: dict) -> dict:
    blk = cfg.options["isometry"]
    chart = cfg.chart
    target = blk.get("target")
    if target is not None:
        dst_chart = _chart_from(target)
        dst_fields = _fields_from(dst_chart, target["generators"], "isometry target")
        dst_pres = LocalPresentation(dst_chart, dst_fields, dst_chart.region)
        dst_mu = Density(dst_chart,
                         _parse_expr(dst_chart, target.get("density", "1"),
                                     "isometry target density"))
    else:
        dst_chart, dst_pres, dst_mu = chart, cfg.presentation, cfg.density
    fwd = tuple(_parse_expr(chart, e, "isometry forward") for e in blk["forward"])
    inv = tuple(_parse_expr(dst_chart, e, "isometry inverse") for e in blk["inverse"])
    f = Diffeo(chart, dst_chart, fwd, inv)

    preservation = check_distribution_preserved(
        f, cfg.presentation, dst_pres,
        tol=cfg.tolerances.get("membership", 1e-9), seed=cfg.seed)
    payload = {"map": f.to_payload(), "preservation": preservation.to_payload()}

    iso = check_isometry(f, cfg.presentation, dst_pres, preservation=preservation,
                         fiber_pairs=int(blk.get("fiber_pairs", 16)), seed=cfg.seed)
    payload["isometry"] = iso.to_payload()

    if preservation.status == "preserved" and blk.get("commutation", True):
        lap_src = products.get("laplacian")
        if lap_src is None:
            lap_src = horizontal_laplacian(cfg.presentation, cfg.density)
        lap_dst = (lap_src if dst_pres is cfg.presentation
                   else horizontal_laplacian(dst_pres, dst_mu))
        rep = check_laplacian_commutation(f, lap_src, lap_dst,
                                          count=int(blk.get("corpus", 12)),
                                          seed=cfg.seed)
        payload["commutation"] = rep.to_payload()
        payload["commutation"]["exact"] = bool(rep)
    else:
        payload["commutation"] = {"status": "skipped",
                                  "reason": "distribution not preserved"
                                  if preservation.status != "preserved"
                                  else "disabled in config"}
    return payload


def _grid_from(cfg: JobConfig) -> Grid:
    blk = cfg.options["discretize"]
    box = [tuple(iv) for iv in blk.get("box", cfg.chart.region)]
    shape = blk.get("shape", [16] * cfg.chart.dim)
    bnd = blk.get("boundary", "dirichlet")
    if isinstance(bnd, str):
        bnd = [bnd] * len(box)
    return Grid(tuple(box), tuple(shape), tuple(bnd))


def _an_discretize(cfg: JobConfig, products: dict) -> dict:
    op = discretize(products["laplacian"], _grid_from(cfg))
    products["discretize"] = op
    payload = op.to_payload()
    payload["weighted_symmetry"] = float(weighted_symmetry_check(op))
    return payload


def _an_spectrum(cfg: JobConfig, products: dict) -> dict:
    opts = cfg.options["spectrum"]
    op = products["discretize"]
    vals = low_spectrum(op, int(opts.get("count", 6)),
                        tol=cfg.tolerances.get("spectrum_residual", 1e-8))
    return {"count": len(vals), "eigenvalues": [float(v) for v in vals]}


def _an_probe(cfg: JobConfig, products: dict) -> dict:
    opts = cfg.options["probe"]
    op = products["discretize"]
    curve = smoothing_probe(op,
                            times=tuple(opts.get("times", (0.01, 0.05, 0.1))),
                            u0=str(opts.get("u0", "delta")),
                            point=opts.get("point"))
    payload = curve.to_payload()
    payload["tail_fraction"] = {str(a): [float(v) for v in curve.tail_fraction(a)]
                                for a in sorted(curve.tail_energy)}
    # collapse of the high-frequency band relative to its t=0 content: the
    # qualitative smoothing indicator
    payload["tail_collapse"] = {
        str(a): [float(e / es[0]) if es[0] > 0 else 0.0 for e in es]
        for a, es in sorted(curve.tail_energy.items())}
    return payload


_RUNNERS = {
    "fibers": _an_fibers,
    "metric": _an_metric,
    "laplacian": _an_laplacian,
    "symbol": _an_symbol,
    "hull": _an_hull,
    "derham": _an_derham,
    "isometry": _an_isometry,
    "discretize": _an_discretize,
    "spectrum": _an_spectrum,
    "probe": _an_probe,
}


# ---------------------------------------------------------------------------
# report assembly

@dataclass(frozen=True)
class Report:
    label: str
    provenance: dict
    analyses: dict
    summary: str

    def body(self) -> dict:
        return {"label": self.label, "provenance": self.provenance,
                "analyses": self.analyses, "summary": self.summary}

    def body_bytes(self) -> bytes:
        return (json.dumps(self.body(), indent=2, sort_keys=True) + "\n").encode()

    def has_errors(self) -> bool:
        return any(a.get("status") == "error" for a in self.analyses.values())


def _closure(names) -> tuple:
    want = set(names)
    changed = True
    while changed:
        changed = False
        for n in tuple(want):
            for dep in DEPENDS.get(n, ()):
                if dep not in want:
                    want.add(dep)
                    changed = True
    return tuple(a for a in ANALYSES if a in want)


def _summary_line(name: str, entry: dict) -> str:
    if entry["status"] == "error":
        err = entry["error"]
        return f"{name}: ERROR {err['type']}: {err['message']}"
    if entry["status"] == "skipped":
        return f"{name}: skipped ({entry['reason']})"
    r = entry["result"]
    if name == "fibers":
        cells = ["({}) -> ({}, {}, {})".format(
            ", ".join(_fmt(v) for v in row["point"]),
            row["dim_fiber"], row["dim_Dx"], row["dim_kernel"])
            for row in r["points"]]
        return f"fibers (dim_fiber, dim_Dx, dim_kernel): " + "; ".join(cells)
    if name == "metric":
        return f"metric: cometric = {r['cometric']}"
    if name == "laplacian":
        shown = r.get("sum_of_squares", r["operator_string"])
        return f"laplacian: Delta = {shown}   [density {r['density']}]"
    if name == "symbol":
        return f"symbol: sigma(x, xi) = {r['expr']}"
    if name == "hull":
        news = [s for ss in r["new_field_strings"].values() for s in ss]
        fl = r["flags"]
        return (f"hull: depth {r['depth']}, new fields [{', '.join(news)}], "
                f"bracket_generating={fl['bracket_generating']}, "
                f"suspicious_growth={fl['suspicious_growth']}")
    if name == "derham":
        return (f"derham: d_squared_zero={r['d_squared_zero']}, "
                f"generic_rank={r['generic_rank']}")
    if name == "isometry":
        comm = r["commutation"]
        commtxt = comm.get("reason") if "reason" in comm else f"exact={comm['exact']}"
        return (f"isometry: preservation={r['preservation']['status']}, "
                f"isometric={r['isometry']['isometric']}, commutation {commtxt}")
    if name == "discretize":
        g = r["grid"]
        shape = "x".join(str(n) for n in g["shape"])
        return (f"discretize: {shape} {'/'.join(g['boundary'])} grid, "
                f"nnz={r['nnz']}, weighted symmetry {_fmt(r['weighted_symmetry'])}")
    if name == "spectrum":
        vals = ", ".join(_fmt(v) for v in r["eigenvalues"])
        return f"spectrum: lambda = [{vals}]"
    if name == "probe":
        t_final = r["times"][-1]
        cells = [f"axis {a}: {_fmt(fr[-1])}"
                 for a, fr in sorted(r["tail_collapse"].items())]
        return (f"probe: tail energy at t={_fmt(t_final)} over initial: "
                + "; ".join(cells))
    return f"{name}: ok"


def run_config(cfg: JobConfig) -> Report:
    """Execute the config's analyses (plus implied upstream ones) and build
    the deterministic report."""
    plan = _closure(cfg.analyses)
    analyses, status = {}, {}
    products: dict = {}
    for name in plan:
        missing = [d for d in DEPENDS.get(name, ()) if status.get(d) != "ok"]
        if missing:
            analyses[name] = {"status": "skipped",
                              "reason": f"upstream {missing[0]!r} unavailable"}
            status[name] = "skipped"
            continue
        try:
            payload = _RUNNERS[name](cfg, products)
        except Exception as exc:                      # noqa: BLE001 - reported
            analyses[name] = {"status": "error",
                              "error": {"type": type(exc).__name__,
                                        "message": str(exc)}}
            status[name] = "error"
            continue
        analyses[name] = {"status": "ok", "result": _jsonable(payload)}
        status[name] = "ok"

    lines = [f"singfol report: {cfg.label or '(unlabeled)'}"]
    if not plan:
        lines.append("no analyses requested")
    lines += ["  " + _summary_line(n, analyses[n]) for n in plan]
    provenance = {
        "config_hash": cfg.config_hash(),
        "package": f"singfol {__version__}",
        "versions": {"python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "sympy": sp.__version__, "pyyaml": yaml.__version__},
        "seed": cfg.seed,
        "jet_order": cfg.jet_order,
        "tolerances": dict(sorted(cfg.tolerances.items())),
    }
    return Report(cfg.label, provenance, analyses, "\n".join(lines))


def run(config_path: str) -> Report:
    return run_config(JobConfig.from_path(config_path))


# ---------------------------------------------------------------------------
# golden files

def golden_path(label: str) -> Path:
    return Path(__file__).parent / "golden" / f"{label}.json"


def _tol_for(path: str, tolerances: dict) -> float:
    best, best_len = float(tolerances.get("default", 1e-9)), -1
    for key, val in tolerances.items():
        if key != "default" and path.startswith(key) and len(key) > best_len:
            best, best_len = float(val), len(key)
    return best


def _try_parse(charts, text: str):
    for chart in charts:
        try:
            return parse(chart, text)
        except GrammarError:
            continue
    return None


def _golden_walk(expected, got, path, charts, tolerances, diffs):
    if isinstance(expected, dict):
        if not isinstance(got, dict):
            diffs.append(f"{path}: expected a mapping, got {type(got).__name__}")
            return
        for key in sorted(expected):
            if key not in got:
                diffs.append(f"{path}.{key}: missing from report")
                continue
            _golden_walk(expected[key], got[key], f"{path}.{key}",
                         charts, tolerances, diffs)
        return
    if isinstance(expected, list):
        if not isinstance(got, list):
            diffs.append(f"{path}: expected a list, got {type(got).__name__}")
            return
        if len(expected) != len(got):
            diffs.append(f"{path}: length {len(got)} != expected {len(expected)}")
            return
        for i, (e, g) in enumerate(zip(expected, got)):
            _golden_walk(e, g, f"{path}.{i}", charts, tolerances, diffs)
        return
    if isinstance(expected, bool):
        if expected is not got:
            diffs.append(f"{path}: {got!r} != expected {expected!r}")
        return
    if isinstance(expected, (int, float)):
        if not isinstance(got, (int, float)) or isinstance(got, bool):
            diffs.append(f"{path}: {got!r} is not numeric")
            return
        tol = _tol_for(path, tolerances)
        if abs(float(expected) - float(got)) > tol * (1.0 + max(abs(float(expected)),
                                                                abs(float(got)))):
            diffs.append(f"{path}: {got!r} != expected {expected!r} (tol {tol:g})")
        return
    if isinstance(expected, str):
        if not isinstance(got, str):
            diffs.append(f"{path}: {got!r} is not a string")
            return
        if got == expected:
            return
        ee, ge = _try_parse(charts, expected), _try_parse(charts, got)
        if ee is not None and ge is not None and canonicalize(ee - ge) == 0:
            return
        diffs.append(f"{path}: {got!r} != expected {expected!r}")
        return
    if expected is None:
        if got is not None:
            diffs.append(f"{path}: {got!r} != expected None")
        return
    diffs.append(f"{path}: unsupported golden value {expected!r}")


def golden_compare(report: Report, path) -> list:
    """Diff the report against a golden file.

    Expression strings compare by canonical form (parsed on the golden's
    chart, with covector names xi_<coord> available); numbers compare with
    the per-field tolerances of the golden header, |a - b| <= tol * (1 +
    max|.|); everything the golden does not mention is ignored.  Returns a
    list of human-readable differences, empty when the report matches.
    """
    try:
        with open(path) as fh:
            golden = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        return [f"golden file {path!s} unreadable: {exc}"]
    coords = tuple(golden.get("coords", ()))
    box = tuple(tuple(iv) for iv in golden.get("box", ()))
    charts = []
    if coords:
        charts.append(Chart(coords, box))
        charts.append(Chart(coords + tuple(f"xi_{c}" for c in coords),
                            box + tuple((-1.0, 1.0) for _ in coords)))
    tolerances = golden.get("tolerances", {})
    diffs: list = []
    _golden_walk(golden.get("body", {}), report.body(), "body", charts,
                 tolerances, diffs)
    return diffs


_GOLDEN_TOLS = {"default": 1e-9,
                "body.analyses.spectrum": 1e-6,
                "body.analyses.probe": 1e-6,
                "body.analyses.discretize.result.weighted_symmetry": 1e-10}


def freeze_golden(label: str, out_path=None) -> Path:
    """Run a registry config and freeze its analyses section as the golden.

    Development helper: values are frozen only after they have been verified
    against their independent oracles in the test suite.
    """
    report = run_config(registry_get(label))
    if report.has_errors():
        raise RuntimeError(f"refusing to freeze a report with errors:\n{report.summary}")
    mapping = registry_mapping(label)
    golden = {
        "label": label,
        "coords": mapping["chart"]["coords"],
        "box": mapping["chart"]["box"],
        "tolerances": _GOLDEN_TOLS,
        "body": {"analyses": report.analyses},
    }
    path = Path(out_path) if out_path else golden_path(label)
    path.write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# command surface

def _report_csv(report: Report) -> str:
    rows = []

    def walk(obj, path):
        if isinstance(obj, dict):
            for k in sorted(obj):
                walk(obj[k], f"{path}.{k}" if path else str(k))
        elif isinstance(obj, list):
            for i, v in enumerate(obj):
                walk(v, f"{path}.{i}")
        else:
            rows.append((path.split(".", 1)[0], path.split(".", 1)[-1], obj))

    walk(report.analyses, "")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["analysis", "field", "value"])
    for analysis, field, value in rows:
        w.writerow([analysis, field, "" if value is None else value])
    return buf.getvalue()


def _emit(report: Report, fmt: str, out_dir) -> None:
    if fmt == "json":
        sys.stdout.write(report.body_bytes().decode())
    elif fmt == "csv":
        sys.stdout.write(_report_csv(report))
    else:
        print(report.summary)
    if out_dir:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_bytes(report.body_bytes())
        (d / "summary.txt").write_text(report.summary + "\n")


def _write_matrix(cfg: JobConfig, out_dir) -> None:
    """Re-assemble the grid operator and dump 1-based 'i j value' triplets."""
    lres = horizontal_laplacian(cfg.presentation, cfg.density)
    op = discretize(lres, _grid_from(cfg))
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "operator_ijv.txt").write_text(to_triplets(op))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a YAML job config")
    p.add_argument("--example", help="registry label to use as the config")
    p.add_argument("--out", help="directory for report.json and friends")
    p.add_argument("--tol-override", action="append", default=[],
                   metavar="k=v", help="override a named tolerance")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jet-order", type=int, help="override the config jet order")
    p.add_argument("--format", choices=("json", "text", "csv"), default="json")


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="singfol",
        description="analyses of generalized smooth distributions on charts")
    sub = top.add_subparsers(dest="command", required=True)
    for name in ("run",) + ANALYSES:
        p = sub.add_parser(name, help=f"run {'the configured analyses' if name == 'run' else 'the ' + name + ' analysis'}")
        _add_common(p)
    p = sub.add_parser("registry", help="list bundled examples or show one")
    p.add_argument("label", nargs="?", help="registry label to show")
    p.add_argument("--format", choices=("json", "text", "csv"), default="text")
    p = sub.add_parser("golden", help="run a config and diff against its golden")
    p.add_argument("golden_file", nargs="?", help="golden path (default: bundled)")
    _add_common(p)
    return top


def _config_from_args(args, forced_analyses=None) -> JobConfig:
    if args.config and args.example:
        raise ConfigParse("--config and --example are mutually exclusive")
    if args.config:
        try:
            with open(args.config) as fh:
                mapping = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigParse(f"cannot read config {args.config!r}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigParse(f"cannot parse config {args.config!r}: {exc}") from None
        if not isinstance(mapping, dict):
            raise ConfigParse("config root must be a mapping")
    elif args.example:
        mapping = registry_mapping(args.example)
    else:
        raise ConfigParse("need --config PATH or --example LABEL")
    if forced_analyses is not None:
        mapping["analyses"] = list(forced_analyses)
    if args.seed is not None:
        mapping["seed"] = args.seed
    if args.jet_order is not None:
        mapping["jet_order"] = args.jet_order
    if args.out is not None:
        mapping["out"] = args.out
    tols = dict(mapping.get("tolerances", {}))
    for item in args.tol_override:
        if "=" not in item:
            raise ConfigParse(f"bad --tol-override {item!r}, expected k=v")
        k, v = item.split("=", 1)
        try:
            tols[k.strip()] = float(v)
        except ValueError:
            raise ConfigParse(f"bad --tol-override value {v!r}") from None
    if tols:
        mapping["tolerances"] = tols
    return JobConfig.from_mapping(mapping)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "registry":
            if args.label is None:
                labels = registry_list()
                if args.format == "json":
                    print(json.dumps(list(labels), indent=2))
                else:
                    print("\n".join(labels))
                return 0
            mapping = registry_mapping(args.label)
            if args.format == "json":
                print(json.dumps(mapping, indent=2, sort_keys=True))
            else:
                sys.stdout.write(yaml.safe_dump(mapping, sort_keys=True))
            return 0

        forced = None if args.command in ("run", "golden") else (args.command,)
        cfg = _config_from_args(args, forced_analyses=forced)
        report = run_config(cfg)
        out_dir = cfg.out
        _emit(report, args.format, out_dir)
        if out_dir and report.analyses.get("discretize", {}).get("status") == "ok":
            _write_matrix(cfg, out_dir)

        if args.command == "golden":
            gpath = args.golden_file or golden_path(cfg.label)
            diffs = golden_compare(report, gpath)
            for d in diffs:
                print(d, file=sys.stderr)
            if diffs:
                return 4
        return 3 if report.has_errors() else 0
    except (ConfigParse, UnknownLabel) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
