"""Built-in benchmark geometries and scenario file round-tripping.

Scenario files carry SI units; the in-memory Scenario is non-dimensional.
"""

from __future__ import annotations

import configparser

from .physics import Scenario, face_names


class ScenarioFileError(ValueError):
    """A scenario file failed to parse or validate."""


DEFAULT_L_C = 1.0e-4   # m
DEFAULT_T_C = 10.0     # s

BUILTIN_NAMES = ("2d-2pit", "2d-3pit", "3d-1pit", "3d-2pit")


def builtin_scenario(name: str) -> Scenario:
    """Benchmark boxes with pits on one face, non-dimensional units.

    2D pits sit on the bottom edge, 3D pits on the top face; the face
    opposite the pits stays solid and lateral faces are flux-free.
    """
    if name == "2d-2pit":
        return Scenario(
            space_lo=(-0.5, 0.0), space_hi=(0.5, 0.5), dim=2, t_end=1.0,
            pits=(((-0.15, 0.0), 0.05), ((0.15, 0.0), 0.05)),
            solid_boundary_faces=frozenset({"ymin", "ymax"}),
            liquid_boundary_faces=frozenset(),
            flux_free_faces=frozenset({"xmin", "xmax"}),
            name=name)
    if name == "2d-3pit":
        return Scenario(
            space_lo=(-0.5, 0.0), space_hi=(0.5, 0.5), dim=2, t_end=1.0,
            pits=(((-0.15, 0.0), 0.05), ((0.15, 0.0), 0.05),
                  ((0.0, 0.5), 0.05)),
            solid_boundary_faces=frozenset({"ymin", "ymax"}),
            liquid_boundary_faces=frozenset(),
            flux_free_faces=frozenset({"xmin", "xmax"}),
            name=name)
    if name == "3d-1pit":
        return Scenario(
            space_lo=(-0.4, -0.4, 0.0), space_hi=(0.4, 0.4, 0.4), dim=3,
            t_end=1.0,
            pits=(((0.0, 0.0, 0.4), 0.1),),
            solid_boundary_faces=frozenset({"zmin", "zmax"}),
            liquid_boundary_faces=frozenset(),
            flux_free_faces=frozenset({"xmin", "xmax", "ymin", "ymax"}),
            name=name)
    if name == "3d-2pit":
        return Scenario(
            space_lo=(-0.8, -0.8, 0.0), space_hi=(0.8, 0.8, 0.4), dim=3,
            t_end=1.0,
            pits=(((-0.2, 0.0, 0.4), 0.1), ((0.2, 0.0, 0.4), 0.1)),
            solid_boundary_faces=frozenset({"zmin", "zmax"}),
            liquid_boundary_faces=frozenset(),
            flux_free_faces=frozenset({"xmin", "xmax", "ymin", "ymax"}),
            name=name)
    raise ScenarioFileError(f"unknown builtin scenario {name!r}; "
                            f"choose from {', '.join(BUILTIN_NAMES)}")


def scenario_to_file(scenario: Scenario, path,
                     l_c: float = DEFAULT_L_C, t_c: float = DEFAULT_T_C) -> None:
    """Write a scenario as an SI-unit key-value file."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["meta"] = {"schema_version": "1", "name": scenario.name,
                  "dim": str(scenario.dim)}
    cp["scales"] = {"l_c": f"{l_c:.17g}", "t_c": f"{t_c:.17g}"}
    cp["domain"] = {}
    for j in range(scenario.dim):
        cp["domain"]["xyz"[j]] = (f"{scenario.space_lo[j] * l_c:.17g} "
                                  f"{scenario.space_hi[j] * l_c:.17g}")
    cp["domain"]["t_end"] = f"{scenario.t_end * t_c:.17g}"
    cp["pits"] = {}
    for i, (center, radius) in enumerate(scenario.pits):
        vals = [f"{x * l_c:.17g}" for x in center] + [f"{radius * l_c:.17g}"]
        cp["pits"][f"pit{i}"] = " ".join(vals)
    cp["faces"] = {
        "solid": " ".join(sorted(scenario.solid_boundary_faces)),
        "liquid": " ".join(sorted(scenario.liquid_boundary_faces)),
        "flux": " ".join(sorted(scenario.flux_free_faces)),
    }
    with open(path, "w") as fh:
        cp.write(fh)


def scenario_from_file(path):
    """Read an SI scenario file; returns (scenario, l_c, t_c)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ScenarioFileError(f"{path}: {exc}") from None
    except configparser.Error as exc:
        # configparser reports the offending line number in its message
        raise ScenarioFileError(f"{path}: {exc}") from None
    try:
        version = cp["meta"]["schema_version"]
        if version.strip() != "1":
            raise ScenarioFileError(f"{path}: unsupported schema_version "
                                    f"{version!r}")
        name = cp["meta"].get("name", "custom")
        dim = int(cp["meta"]["dim"])
        l_c = float(cp["scales"]["l_c"])
        t_c = float(cp["scales"]["t_c"])
        lo, hi = [], []
        for j in range(dim):
            a, b = cp["domain"]["xyz"[j]].split()
            lo.append(float(a) / l_c)
            hi.append(float(b) / l_c)
        t_end = float(cp["domain"]["t_end"]) / t_c
        pits = []
        for key in sorted(cp["pits"]):
            vals = [float(v) for v in cp["pits"][key].split()]
            if len(vals) != dim + 1:
                raise ScenarioFileError(
                    f"{path}: pit {key!r} needs {dim} center values "
                    f"and a radius")
            pits.append((tuple(v / l_c for v in vals[:dim]),
                         vals[dim] / l_c))
        known = set(face_names(dim))
        sets = {}
        for kind in ("solid", "liquid", "flux"):
            entries = cp["faces"][kind].split()
            bad = set(entries) - known
            if bad:
                raise ScenarioFileError(f"{path}: unknown faces {sorted(bad)}")
            sets[kind] = frozenset(entries)
        scenario = Scenario(space_lo=tuple(lo), space_hi=tuple(hi),
                            dim=dim, t_end=t_end, pits=tuple(pits),
                            solid_boundary_faces=sets["solid"],
                            liquid_boundary_faces=sets["liquid"],
                            flux_free_faces=sets["flux"], name=name)
    except ScenarioFileError:
        raise
    except (KeyError, ValueError, configparser.Error) as exc:
        raise ScenarioFileError(f"{path}: {exc}") from None
    return scenario, l_c, t_c
