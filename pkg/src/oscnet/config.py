"""Experiment configuration: a single JSON document, fully validated.

Schema sketch (defaults in parentheses):

    {
      "seed": 12345,
      "model": {
        "dimension": 1,
        "topology": {"fixture": "fig2_chain11"}
                    | {"vertices": [...], "edges": [[u, v], ...], "baths": [...]},
        "bath_defaults": {"gamma": 1.0, "temperature": 1.0},
        "bath_overrides": {"<vertex>": {"gamma": g, "temperature": T}, ...},
        "pinning": {"default": <potential>, "per_vertex": {"<vertex>": <potential>}},
        "interaction": {"default": <potential>, "per_edge": [{"edge": [u, v], "potential": <potential>}]}
      },
      "integrator": {"h0": 1e-3, "energy_adaptive": true, "record_every": 10},
      "experiment": {"kind": "check" | "simulate" | "equilibrium-test" |
                              "lyapunov-scan" | "dissipation-scan" |
                              "decay-fit" | "counterexample-c4", ...},
      "output": {"directory": "out", "formats": ["json", "csv"]}
    }

Potentials: {"family": "soft_power", "degree": r} |
            {"family": "even_power", "degree": r} |
            {"family": "quadratic", "stiffness": scalar or n x n rows} |
            {"family": "local_piece", "terms": [[coeff, [exponents]], ...], "offset": 0}.

Validation walks the whole document and reports every problem (with a
config path string) before giving up; ``parse_config`` either returns a
fully-built configuration or raises :class:`ConfigError` with the list.
The canonical echo of a parsed config re-parses to the same echo.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from .errors import ConfigError
from .model import BathSpec, Model
from .potentials import EvenPower, LocalPiece, Quadratic, SoftPower
from .topology import Edge, NetworkTopology, builtin_fixture, fixture_table

__all__ = ["ExperimentConfig", "parse_config", "EXPERIMENT_KINDS"]

EXPERIMENT_KINDS = (
    "check",
    "simulate",
    "equilibrium-test",
    "lyapunov-scan",
    "dissipation-scan",
    "decay-fit",
    "counterexample-c4",
)


class _Errors:
    def __init__(self):
        self.messages: list[str] = []

    def add(self, path: str, msg: str) -> None:
        self.messages.append(f"{path}: {msg}")

    def raise_if_any(self) -> None:
        if self.messages:
            raise ConfigError(self.messages)


def _expect_mapping(doc, path, errors) -> dict:
    if not isinstance(doc, dict):
        errors.add(path, f"expected an object, got {type(doc).__name__}")
        return {}
    return doc


def _get_number(doc, key, path, errors, default=None, required=False,
                minimum=None, strict_min=None, integer=False):
    if key not in doc:
        if required:
            errors.add(f"{path}.{key}", "is required")
        return default
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        errors.add(f"{path}.{key}", f"expected a number, got {val!r}")
        return default
    if integer and int(val) != val:
        errors.add(f"{path}.{key}", f"expected an integer, got {val!r}")
        return default
    if minimum is not None and val < minimum:
        errors.add(f"{path}.{key}", f"must be >= {minimum}, got {val!r}")
        return default
    if strict_min is not None and val <= strict_min:
        errors.add(f"{path}.{key}", f"must be > {strict_min}, got {val!r}")
        return default
    return int(val) if integer else float(val)


def _parse_potential(doc, path, dim, errors):
    doc = _expect_mapping(doc, path, errors)
    family = doc.get("family")
    try:
        if family == "soft_power":
            degree = _get_number(doc, "degree", path, errors, required=True, minimum=2)
            if degree is None:
                return None
            return SoftPower(degree=float(degree), dim=dim)
        if family == "even_power":
            degree = _get_number(doc, "degree", path, errors, required=True, minimum=2, integer=True)
            if degree is None:
                return None
            return EvenPower(degree=int(degree), dim=dim)
        if family == "quadratic":
            K = doc.get("stiffness")
            if isinstance(K, (int, float)) and not isinstance(K, bool):
                return Quadratic.isotropic(float(K), dim)
            if isinstance(K, list):
                return Quadratic(stiffness=tuple(tuple(float(v) for v in row) for row in K), dim=dim)
            errors.add(f"{path}.stiffness", "expected a scalar or a matrix (list of rows)")
            return None
        if family == "local_piece":
            raw = doc.get("terms")
            if not isinstance(raw, list) or not raw:
                errors.add(f"{path}.terms", "expected a non-empty list of [coeff, [exponents]] pairs")
                return None
            terms = tuple((float(c), tuple(int(e) for e in exps)) for c, exps in raw)
            offset = _get_number(doc, "offset", path, errors, default=0.0)
            return LocalPiece(terms=terms, dim=dim, offset=float(offset))
    except (TypeError, ValueError) as exc:
        errors.add(path, str(exc))
        return None
    errors.add(f"{path}.family", f"unknown family {family!r}; expected soft_power, "
                                 "even_power, quadratic or local_piece")
    return None


def _canonical_potential(spec) -> dict:
    if isinstance(spec, SoftPower):
        return {"family": "soft_power", "degree": spec.degree}
    if isinstance(spec, EvenPower):
        return {"family": "even_power", "degree": spec.degree}
    if isinstance(spec, Quadratic):
        return {"family": "quadratic", "stiffness": [list(row) for row in spec.stiffness]}
    if isinstance(spec, LocalPiece):
        return {
            "family": "local_piece",
            "terms": [[c, list(e)] for c, e in spec.terms],
            "offset": spec.offset,
        }
    raise TypeError(f"unknown potential {spec!r}")


@dataclass
class ExperimentConfig:
    """Validated configuration plus the built model (when one is defined)."""

    seed: int
    experiment: dict
    integrator: dict
    output: dict
    model: Model | None
    vertex_names: tuple[str, ...] | None
    echo_doc: dict

    @property
    def kind(self) -> str:
        return self.experiment["kind"]

    def echo(self) -> str:
        return json.dumps(self.echo_doc, sort_keys=True, indent=2) + "\n"

    def vertex_id(self, name: str) -> int:
        if self.vertex_names is None:
            raise ValueError("no model section in this config")
        return self.vertex_names.index(name)


def _parse_topology(doc, path, errors):
    doc = _expect_mapping(doc, path, errors)
    if "fixture" in doc:
        name = doc["fixture"]
        try:
            topo = builtin_fixture(name)
        except ValueError as exc:
            errors.add(f"{path}.fixture", str(exc))
            return None, None, None
        names, edge_names, bath_names = fixture_table(name)
        return topo, names, {"fixture": name}
    vertices = doc.get("vertices")
    if not isinstance(vertices, list) or not vertices or not all(isinstance(v, str) for v in vertices):
        errors.add(f"{path}.vertices", "expected a non-empty list of vertex names")
        return None, None, None
    if len(set(vertices)) != len(vertices):
        errors.add(f"{path}.vertices", "vertex names must be unique")
        return None, None, None
    start = len(errors.messages)
    index = {v: i for i, v in enumerate(vertices)}
    edges = set()
    raw_edges = doc.get("edges", [])
    if not isinstance(raw_edges, list):
        errors.add(f"{path}.edges", "expected a list of [u, v] pairs")
        raw_edges = []
    for k, pair in enumerate(raw_edges):
        if not (isinstance(pair, list) and len(pair) == 2):
            errors.add(f"{path}.edges[{k}]", f"expected a [u, v] pair, got {pair!r}")
            continue
        u, v = pair
        missing = [x for x in (u, v) if x not in index]
        if missing:
            errors.add(f"{path}.edges[{k}]", f"unknown vertex name(s) {missing} in edge {pair!r}")
            continue
        if u == v:
            errors.add(f"{path}.edges[{k}]", f"loop edge {pair!r} is not allowed")
            continue
        edges.add(Edge(index[u], index[v]))
    raw_baths = doc.get("baths", [])
    baths = set()
    if not isinstance(raw_baths, list):
        errors.add(f"{path}.baths", "expected a list of vertex names")
        raw_baths = []
    for k, b in enumerate(raw_baths):
        if b not in index:
            errors.add(f"{path}.baths[{k}]", f"unknown vertex name {b!r}")
            continue
        baths.add(index[b])
    if len(errors.messages) > start:
        # Names are still usable for validating the rest of the model.
        return None, tuple(vertices), None
    topo = NetworkTopology(vertex_count=len(vertices), edges=frozenset(edges), baths=frozenset(baths))
    canon = {
        "vertices": list(vertices),
        "edges": sorted([sorted(pair) for pair in ([vertices[e.a], vertices[e.b]] for e in sorted(edges))]),
        "baths": sorted(vertices[b] for b in baths),
    }
    return topo, tuple(vertices), canon


def _parse_model(doc, errors):
    path = "model"
    doc = _expect_mapping(doc, path, errors)
    dim = _get_number(doc, "dimension", path, errors, default=1, minimum=1, integer=True) or 1
    topo, names, topo_canon = _parse_topology(doc.get("topology", {}), f"{path}.topology", errors)
    if names is None:
        return None, None, None
    bath_ids = sorted(topo.baths) if topo is not None else []

    defaults = _expect_mapping(doc.get("bath_defaults", {}), f"{path}.bath_defaults", errors)
    g0 = _get_number(defaults, "gamma", f"{path}.bath_defaults", errors, default=1.0, strict_min=0)
    t0 = _get_number(defaults, "temperature", f"{path}.bath_defaults", errors, default=1.0, minimum=0)
    overrides = _expect_mapping(doc.get("bath_overrides", {}), f"{path}.bath_overrides", errors)
    baths = {}
    for b in bath_ids:
        g, T = g0, t0
        name = names[b]
        if name in overrides:
            od = _expect_mapping(overrides[name], f"{path}.bath_overrides.{name}", errors)
            g = _get_number(od, "gamma", f"{path}.bath_overrides.{name}", errors, default=g0, strict_min=0)
            T = _get_number(od, "temperature", f"{path}.bath_overrides.{name}", errors, default=t0, minimum=0)
        if g is not None and T is not None:
            try:
                baths[b] = BathSpec(gamma=g, temperature=T)
            except ValueError as exc:
                errors.add(f"{path}.bath_overrides.{name}", str(exc))
    for name in overrides:
        if name not in names:
            errors.add(f"{path}.bath_overrides.{name}", "unknown vertex name")
        elif topo is not None and names.index(name) not in topo.baths:
            errors.add(f"{path}.bath_overrides.{name}", "vertex is not a bath")

    pin_doc = _expect_mapping(doc.get("pinning", {}), f"{path}.pinning", errors)
    pin_default = _parse_potential(
        pin_doc.get("default", {"family": "quadratic", "stiffness": 1.0}),
        f"{path}.pinning.default", dim, errors,
    )
    per_vertex = _expect_mapping(pin_doc.get("per_vertex", {}), f"{path}.pinning.per_vertex", errors)
    pinning = {v: pin_default for v in range(len(names))}
    for name, pot in per_vertex.items():
        if name not in names:
            errors.add(f"{path}.pinning.per_vertex.{name}", "unknown vertex name")
            continue
        pinning[names.index(name)] = _parse_potential(pot, f"{path}.pinning.per_vertex.{name}", dim, errors)

    int_doc = _expect_mapping(doc.get("interaction", {}), f"{path}.interaction", errors)
    int_default = _parse_potential(
        int_doc.get("default", {"family": "quadratic", "stiffness": 1.0}),
        f"{path}.interaction.default", dim, errors,
    )
    interaction = {e: int_default for e in (topo.edges if topo is not None else ())}
    per_edge = int_doc.get("per_edge", [])
    if not isinstance(per_edge, list):
        errors.add(f"{path}.interaction.per_edge", "expected a list")
        per_edge = []
    for k, entry in enumerate(per_edge):
        entry = _expect_mapping(entry, f"{path}.interaction.per_edge[{k}]", errors)
        pair = entry.get("edge")
        if not (isinstance(pair, list) and len(pair) == 2 and all(x in names for x in pair)):
            errors.add(f"{path}.interaction.per_edge[{k}].edge",
                       f"expected a [u, v] pair of known vertex names, got {pair!r}")
            continue
        e = Edge(names.index(pair[0]), names.index(pair[1]))
        if topo is not None and e not in topo.edges:
            errors.add(f"{path}.interaction.per_edge[{k}].edge", f"{pair!r} is not an edge of the topology")
            continue
        pot = _parse_potential(entry.get("potential", {}),
                               f"{path}.interaction.per_edge[{k}].potential", dim, errors)
        if topo is not None:
            interaction[e] = pot

    if topo is None or errors.messages:
        return None, None, None
    if any(p is None for p in pinning.values()) or any(p is None for p in interaction.values()):
        return None, None, None
    try:
        model = Model(topology=topo, dim=dim, pinning=pinning, interaction=interaction, baths=baths)
    except ValueError as exc:
        errors.add(path, str(exc))
        return None, None, None

    canon = {
        "dimension": dim,
        "topology": topo_canon,
        "bath_defaults": {"gamma": g0, "temperature": t0},
        "bath_overrides": {
            names[b]: {"gamma": baths[b].gamma, "temperature": baths[b].temperature}
            for b in sorted(topo.baths)
        },
        "pinning": {
            "default": _canonical_potential(pin_default),
            "per_vertex": {
                names[v]: _canonical_potential(pinning[v])
                for v in topo.vertices
                if pinning[v] != pin_default
            },
        },
        "interaction": {
            "default": _canonical_potential(int_default),
            "per_edge": [
                {"edge": [names[e.a], names[e.b]], "potential": _canonical_potential(interaction[e])}
                for e in sorted(topo.edges)
                if interaction[e] != int_default
            ],
        },
    }
    return model, names, canon


_EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "check": {"sphere_samples": 256, "nondegeneracy_samples": 20},
    "simulate": {"t_end": 10.0, "record_every": 10, "record_states": False,
                 "initial": {"kind": "zero"}},
    "equilibrium-test": {"observables": ["H"], "n_samples": 4000, "t_check": 10.0,
                         "h": 0.005, "sample_temperature": None},
    "lyapunov-scan": {"theta": 0.25, "t_star": 1.0, "ensemble": 2000,
                      "energy_grid": [25.0, 50.0, 100.0, 200.0], "lambda": 0.5,
                      "placement": "interaction"},
    "dissipation-scan": {"epsilon": 1e-3, "ensemble": 400,
                         "energy_grid": [100.0, 1000.0, 10000.0], "lambda": 0.5,
                         "placement": "interaction"},
    "decay-fit": {"observable": "p2:0", "horizon": 30.0, "ensemble": 6000,
                  "h": 0.01, "grid_points": 120, "stationary_samples": 16000,
                  "initial": {"kind": "slow-mode", "scale": 30.0}},
    "counterexample-c4": {"h": 1e-4, "x_stop": 3.5},
}


def _parse_experiment(doc, errors) -> dict:
    path = "experiment"
    doc = _expect_mapping(doc, path, errors)
    kind = doc.get("kind")
    if kind not in EXPERIMENT_KINDS:
        errors.add(f"{path}.kind", f"expected one of {', '.join(EXPERIMENT_KINDS)}; got {kind!r}")
        return {"kind": kind}
    out = {"kind": kind}
    defaults = _EXPERIMENT_DEFAULTS[kind]
    for key, dflt in defaults.items():
        out[key] = doc.get(key, dflt)
    unknown = set(doc) - set(defaults) - {"kind", "h"}
    for key in sorted(unknown):
        errors.add(f"{path}.{key}", f"unknown parameter for kind {kind!r}")
    if "h" in doc:
        out["h"] = doc["h"]

    def num(key, **kw):
        if key in out and out[key] is not None:
            out[key] = _get_number(out, key, path, errors, **kw)

    if kind == "simulate":
        num("t_end", strict_min=0)
        num("record_every", minimum=1, integer=True)
        if "h" in out:
            num("h", strict_min=0)
    elif kind == "equilibrium-test":
        num("n_samples", minimum=100, integer=True)
        num("t_check", strict_min=0)
        num("h", strict_min=0)
        if out.get("sample_temperature") is not None:
            num("sample_temperature", strict_min=0)
        obs = out.get("observables")
        if not isinstance(obs, list) or not all(isinstance(o, str) for o in obs) or not obs:
            errors.add(f"{path}.observables", "expected a non-empty list of observable names")
    elif kind in ("lyapunov-scan", "dissipation-scan"):
        if kind == "lyapunov-scan":
            num("theta", strict_min=0)
            num("t_star", strict_min=0)
        else:
            num("epsilon", strict_min=0)
        num("ensemble", minimum=100, integer=True)
        num("lambda", strict_min=0)
        grid = out.get("energy_grid")
        if (not isinstance(grid, list) or len(grid) < 1
                or not all(isinstance(g, (int, float)) and g > 0 for g in grid)
                or sorted(grid) != grid):
            errors.add(f"{path}.energy_grid", "expected an increasing list of positive energies")
        else:
            out["energy_grid"] = [float(g) for g in grid]
        if out.get("placement") not in ("interaction", "pinning"):
            errors.add(f"{path}.placement", "expected 'interaction' or 'pinning'")
    elif kind == "decay-fit":
        num("horizon", strict_min=0)
        num("ensemble", minimum=100, integer=True)
        num("h", strict_min=0)
        num("grid_points", minimum=10, integer=True)
        num("stationary_samples", minimum=100, integer=True)
    elif kind == "counterexample-c4":
        num("h", strict_min=0)
        num("x_stop", strict_min=0)
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration document.

    Raises :class:`ConfigError` carrying every validation problem found,
    not just the first; JSON syntax errors include line and column.
    """
    errors = _Errors()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    doc = _expect_mapping(doc, "<root>", errors)
    errors.raise_if_any()

    seed = _get_number(doc, "seed", "<root>", errors, default=0, integer=True)
    experiment = _parse_experiment(doc.get("experiment", {}), errors)

    integrator = _expect_mapping(doc.get("integrator", {}), "integrator", errors)
    h0 = _get_number(integrator, "h0", "integrator", errors, default=1e-3, strict_min=0)
    record_every = _get_number(integrator, "record_every", "integrator", errors, default=10,
                               minimum=1, integer=True)
    energy_adaptive = integrator.get("energy_adaptive", True)
    if not isinstance(energy_adaptive, bool):
        errors.add("integrator.energy_adaptive", "expected a boolean")
        energy_adaptive = True

    output = _expect_mapping(doc.get("output", {}), "output", errors)
    directory = output.get("directory", "out")
    if not isinstance(directory, str) or not directory:
        errors.add("output.directory", "expected a non-empty string")
        directory = "out"
    formats = output.get("formats", ["json", "csv"])
    if (not isinstance(formats, list) or not formats
            or not all(f in ("json", "csv") for f in formats)):
        errors.add("output.formats", "expected a non-empty list drawn from ['json', 'csv']")
        formats = ["json", "csv"]

    model = None
    names = None
    model_canon = None
    needs_model = experiment.get("kind") != "counterexample-c4"
    if "model" in doc or needs_model:
        if "model" not in doc and needs_model:
            errors.add("model", f"a model section is required for kind {experiment.get('kind')!r}")
        else:
            model, names, model_canon = _parse_model(doc["model"], errors)

    # Cross-section constraints mirroring library preconditions.
    if model is not None and experiment.get("kind") == "lyapunov-scan":
        theta = experiment.get("theta")
        tmax = model.t_max
        if isinstance(theta, float) and tmax > 0 and theta * tmax >= 1:
            errors.add("experiment.theta", f"theta*T_max must be < 1 (theta={theta}, T_max={tmax})")
    if model is not None and experiment.get("kind") in ("lyapunov-scan", "dissipation-scan"):
        degrees = model.common_degrees()
        if degrees is None:
            errors.add("experiment", "energy scans need common interaction and pinning degrees")
        else:
            li, lp = degrees
            lam = experiment.get("lambda")
            t_star = experiment.get("t_star", 1.0)
            if isinstance(lam, float) and lp == 2 and isinstance(t_star, float) and lam > t_star / 2:
                errors.add("experiment.lambda", "when the pinning degree is 2, lambda must be <= t_star/2")

    errors.raise_if_any()

    echo_doc: dict[str, Any] = {
        "seed": seed,
        "experiment": experiment,
        "integrator": {"h0": h0, "record_every": record_every, "energy_adaptive": energy_adaptive},
        "output": {"directory": directory, "formats": sorted(formats)},
    }
    if model_canon is not None:
        echo_doc["model"] = model_canon
    return ExperimentConfig(
        seed=seed,
        experiment=experiment,
        integrator=echo_doc["integrator"],
        output=echo_doc["output"],
        model=model,
        vertex_names=names,
        echo_doc=echo_doc,
    )
