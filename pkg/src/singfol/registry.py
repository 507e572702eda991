"""Job configurations and the built-in example registry.

A job is one chart, one distribution, one density, and a list of analyses
to run on them.  Configs are human-edited YAML with all expressions written
in the wire grammar (see symexpr); the registry bundles the worked examples
as ready-made configs together with frozen golden outputs (golden/*.json).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .distribution import Distribution, LocalPresentation
from .laplacian import PartitionOfUnity
from .symexpr import Chart, GrammarError, parse
from .vectorcalc import Density, VectorField


class ConfigParse(ValueError):
    """The config mapping is malformed or an expression fails to parse."""


class UnknownAnalysis(ConfigParse):
    """An entry of the analyses list is not a known analysis name."""


class UnknownLabel(KeyError):
    """Label not present in the registry."""


#: every analysis the runner knows, in dependency order
ANALYSES = ("fibers", "metric", "laplacian", "symbol", "hull", "derham",
            "isometry", "discretize", "spectrum", "probe")

#: upstream products each analysis reads (used for skip markers)
DEPENDS = {
    "symbol": ("laplacian",),
    "discretize": ("laplacian",),
    "spectrum": ("discretize",),
    "probe": ("discretize",),
}


def _need(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigParse(f"missing {key!r} in {where}")
    return mapping[key]


def _parse_expr(chart: Chart, text, where: str):
    try:
        return parse(chart, str(text))
    except GrammarError as exc:
        raise ConfigParse(f"bad expression {text!r} in {where}: {exc}") from None


def _chart_from(block: dict) -> Chart:
    coords = tuple(str(c) for c in _need(block, "coords", "chart block"))
    box = tuple(tuple(iv) for iv in _need(block, "box", "chart block"))
    try:
        return Chart(coords, box)
    except ValueError as exc:
        raise ConfigParse(f"bad chart block: {exc}") from None


def _fields_from(chart: Chart, rows, where: str) -> tuple:
    fields = []
    for row in rows:
        if len(row) != chart.dim:
            raise ConfigParse(f"generator {row!r} in {where} has "
                              f"{len(row)} components on a {chart.dim}-dim chart")
        fields.append(VectorField(chart, tuple(_parse_expr(chart, c, where)
                                               for c in row)))
    return tuple(fields)


@dataclass(frozen=True)
class JobConfig:
    """Validated job: parsing happened, labels resolved, exactly one density."""

    label: str
    chart: Chart
    distribution: Distribution
    density: Density
    presentation: LocalPresentation
    pou: PartitionOfUnity | None
    analyses: tuple
    options: dict               # per-analysis option blocks (fibers, hull, ...)
    tolerances: dict
    seed: int
    jet_order: int
    out: str | None
    raw: dict = field(repr=False)

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return "sha256:" + hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_mapping(cls, mapping: dict, label: str = "") -> "JobConfig":
        if not isinstance(mapping, dict):
            raise ConfigParse("config root must be a mapping")
        raw = copy.deepcopy(mapping)
        chart = _chart_from(_need(mapping, "chart", "config"))

        dist_block = _need(mapping, "distribution", "config")
        gens = _fields_from(chart, _need(dist_block, "generators", "distribution block"),
                            "distribution block")
        label = str(mapping.get("label", label))
        dist = Distribution(chart, gens, label)

        density = mapping.get("density", "1")
        if isinstance(density, (list, tuple)):
            raise ConfigParse("exactly one density per job")
        try:
            mu = Density(chart, _parse_expr(chart, density, "density"))
        except ValueError as exc:
            raise ConfigParse(str(exc)) from None

        pres_block = mapping.get("presentation")
        if pres_block is None:
            pres = LocalPresentation(chart, gens, chart.region)
        else:
            pfields = _fields_from(chart, _need(pres_block, "fields", "presentation block"),
                                   "presentation block")
            base = tuple(tuple(iv) for iv in pres_block.get("base_region", chart.region))
            G = pres_block.get("frame_metric")
            if G is not None:
                G = [[_parse_expr(chart, e, "frame_metric") for e in row] for row in G]
            try:
                pres = LocalPresentation(chart, pfields, base, G)
            except ValueError as exc:
                raise ConfigParse(f"bad presentation block: {exc}") from None

        pou_block = mapping.get("partition_of_unity")
        pou = None
        if pou_block is not None:
            pieces = []
            for piece in _need(pou_block, "pieces", "partition_of_unity block"):
                box = tuple(tuple(iv) for iv in piece.get("box", chart.region))
                phi = _parse_expr(chart, _need(piece, "phi", "partition piece"), "partition piece")
                pieces.append((box, phi))
            try:
                pou = PartitionOfUnity(chart, tuple(pieces))
            except ValueError as exc:
                raise ConfigParse(f"bad partition of unity: {exc}") from None

        analyses = tuple(str(a) for a in mapping.get("analyses", ()))
        for a in analyses:
            if a not in ANALYSES:
                raise UnknownAnalysis(f"unknown analysis {a!r}; known: {', '.join(ANALYSES)}")

        options = {name: dict(mapping.get(name, {})) for name in ANALYSES}
        # expression-bearing option blocks are parse-checked up front
        iso = options["isometry"]
        if iso:
            for key in ("forward", "inverse"):
                rows = _need(iso, key, "isometry block")
                for e in rows:
                    _parse_expr(chart, e, f"isometry {key}")
            if "target" in iso:
                tchart = _chart_from(iso["target"])
                _fields_from(tchart, _need(iso["target"], "generators", "isometry target"),
                             "isometry target")
        if "isometry" in analyses and not iso:
            raise ConfigParse("analysis 'isometry' needs an isometry block "
                              "(forward/inverse expression lists)")

        tolerances = {str(k): float(v) for k, v in mapping.get("tolerances", {}).items()}
        seed = int(mapping.get("seed", 0))
        jet_order = int(mapping.get("jet_order", 3))
        out = mapping.get("out")
        return cls(label, chart, dist, mu, pres, pou, analyses, options,
                   tolerances, seed, jet_order, out, raw)

    @classmethod
    def from_path(cls, path: str) -> "JobConfig":
        try:
            with open(path) as fh:
                mapping = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigParse(f"cannot read config {path!r}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigParse(f"cannot parse config {path!r}: {exc}") from None
        return cls.from_mapping(mapping)


# ---------------------------------------------------------------------------
# built-in examples

_BOX2 = [[-2, 2], [-2, 2]]
_BOX3 = [[-2, 2], [-2, 2], [-2, 2]]

_ENTRIES = {
    "gl2_vanishing_origin": {
        "label": "gl2_vanishing_origin",
        "notes": "module of all vector fields on the plane vanishing at the "
                 "origin; generated by the linear fields x dx, y dx, x dy, y dy",
        "chart": {"coords": ["x", "y"], "box": _BOX2},
        "distribution": {"generators": [["x", "0"], ["y", "0"],
                                        ["0", "x"], ["0", "y"]]},
        "density": "1",
        "analyses": ["fibers", "metric", "laplacian", "symbol", "derham"],
        "fibers": {"points": [[0, 0], [1, 0]]},
        "discretize": {"box": [[-1, 1], [-1, 1]], "shape": [32, 32],
                       "boundary": "dirichlet"},
        "seed": 0,
    },
    "pathological_flat": {
        "label": "pathological_flat",
        "notes": "generators dx and flatplus(x) dy; the Lie hull adjoins "
                 "x^-n flatplus(x) dy with unbounded pole order, so the hull "
                 "is not finitely generated.  The bracket [dx, flatplus(x) dy] "
                 "computes to x^-2 flatplus(x) dy, a multiple of the flat "
                 "generator (not of dx).",
        "chart": {"coords": ["x", "y"], "box": _BOX2},
        "distribution": {"generators": [["1", "0"], ["0", "flatplus(x)"]]},
        "density": "1",
        "analyses": ["fibers", "laplacian", "hull"],
        "fibers": {"points": [[-1, 0], [1, 0], [0, 0]]},
        "hull": {"max_depth": 3},
        "discretize": {"box": [[-1, 1], [-1, 1]], "shape": [32, 32],
                       "boundary": "dirichlet"},
        "seed": 0,
    },
    "heisenberg": {
        "label": "heisenberg",
        "notes": "left-invariant frame X = dx - y/2 dz, Y = dy + x/2 dz of "
                 "the Heisenberg group; [X, Y] = dz, bracket generating at "
                 "step 2",
        "chart": {"coords": ["x", "y", "z"], "box": _BOX3},
        "distribution": {"generators": [["1", "0", "-1/2*y"],
                                        ["0", "1", "1/2*x"]]},
        "density": "1",
        "analyses": ["laplacian", "hull", "symbol"],
        "hull": {"max_depth": 2, "grid_n": 9},
        "discretize": {"box": [[-1, 1], [-1, 1], [-1, 1]], "shape": [12, 12, 12],
                       "boundary": "dirichlet"},
        "seed": 0,
    },
    "grushin": {
        "label": "grushin",
        "notes": "generators dx and x dy; rank drops to 1 on the line x = 0",
        "chart": {"coords": ["x", "y"], "box": _BOX2},
        "distribution": {"generators": [["1", "0"], ["0", "x"]]},
        "density": "1",
        "analyses": ["fibers", "metric", "laplacian", "symbol", "hull",
                     "discretize", "spectrum", "probe"],
        "fibers": {"points": [[0, 0], [1, 1]]},
        "hull": {"max_depth": 3},
        "discretize": {"box": [[-1, 1], [-1, 1]], "shape": [32, 32],
                       "boundary": "dirichlet"},
        "spectrum": {"count": 6},
        "probe": {"times": [0.01, 0.05, 0.1], "u0": "delta", "point": [0, 0]},
        "seed": 0,
    },
    "martinet": {
        "label": "martinet",
        "notes": "generators dx and dy + x^2/2 dz; pointwise rank 2 "
                 "everywhere, bracket generating at step 3",
        "chart": {"coords": ["x", "y", "z"], "box": _BOX3},
        "distribution": {"generators": [["1", "0", "0"],
                                        ["0", "1", "1/2*x^2"]]},
        "density": "1",
        "analyses": ["fibers", "laplacian", "hull"],
        "fibers": {"points": [[0, 0, 0], [1, 0, 0]]},
        "hull": {"max_depth": 3},
        "discretize": {"box": [[-1, 1], [-1, 1], [-1, 1]], "shape": [12, 12, 12],
                       "boundary": "dirichlet"},
        "seed": 0,
    },
    "exs_distr_i": {
        "label": "exs_distr_i",
        "notes": "generators dx, dy + x dz + x^2/2 dw, flatplus(x) dw on a "
                 "4-dim chart; the flat generator degenerates on x <= 0",
        "chart": {"coords": ["x", "y", "z", "w"],
                  "box": [[-2, 2], [-2, 2], [-2, 2], [-2, 2]]},
        "distribution": {"generators": [["1", "0", "0", "0"],
                                        ["0", "1", "x", "1/2*x^2"],
                                        ["0", "0", "0", "flatplus(x)"]]},
        "density": "1",
        "analyses": ["fibers", "hull"],
        "fibers": {"points": [[1, 0, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 0]]},
        "hull": {"max_depth": 3, "grid_n": 3},
        "seed": 0,
    },
    "bump_line": {
        "label": "bump_line",
        "notes": "single generator flatplus(1 - x^2) dx on the line: a bump "
                 "field supported on [-1, 1].  The fiber is R for |x| <= 1 "
                 "and 0 for |x| > 1, and the pointwise inner product of the "
                 "generator with itself is discontinuous at x = 1 even "
                 "though the metric is smooth in the presentation sense.",
        "chart": {"coords": ["x"], "box": [[-2, 2]]},
        "distribution": {"generators": [["flatplus(1 - x^2)"]]},
        "density": "1",
        "analyses": ["fibers", "laplacian"],
        "fibers": {"points": [[0], [1], [3/2]]},
        "discretize": {"box": [[-2, 2]], "shape": [64], "boundary": "dirichlet"},
        "seed": 0,
    },
}


def registry_list() -> tuple:
    """Sorted labels of the bundled examples."""
    return tuple(sorted(_ENTRIES))


def registry_mapping(label: str) -> dict:
    """Deep copy of the raw config mapping for ``label``."""
    if label not in _ENTRIES:
        raise UnknownLabel(f"unknown example {label!r}; "
                           f"known: {', '.join(registry_list())}")
    return copy.deepcopy(_ENTRIES[label])


def registry_get(label: str) -> JobConfig:
    """Validated JobConfig for a bundled example."""
    return JobConfig.from_mapping(registry_mapping(label), label=label)
