"""Run configuration: versioned JSON schema, validation, deterministic echo."""

from __future__ import annotations

import hashlib
import json

from perihom.errors import ConfigError
from perihom.geometry import CellSpec
from perihom.micro import InitialSpec, KineticsSpec
from perihom.transform import QSpec, TransformSpec

SCHEMA_VERSION = 1

_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "geometry": {
        "hole_radius": 0.25,
        "hole_center": [0.5, 0.5],
        "refine_level": 1,
        "domain": [0.0, 4.0, 0.0, 4.0],
    },
    "transform": {
        "omega_max": 0.05,
        "amplitude": "linear",
        "modulation": "sine",
        "cutoff_radii": None,
    },
    "kinetics": {
        "f": {"id": "monod", "rate": 1.0, "saturation": 1.0},
        "g": {"id": "monod", "rate": -0.5, "saturation": 1.0},
    },
    "q": {"id": "zero", "vector": [0.0, 0.0], "magnitude": 0.0},
    "initial": {"id": "sine", "base": 1.0, "amplitude": 0.5, "kx": 0.25, "ky": 0.25,
                "value": 1.0, "slope_x": 0.0, "slope_y": 0.0},
    "discretization": {
        "tau": 1.0 / 64.0,
        "t_end": 0.5,
        "solver_tol": 1e-12,
        "max_iter": 20000,
        "fp_sweeps": 2,
        "fp_tol": 1e-10,
    },
    "sweep": {
        "eps": [0.5, 0.25, 0.125],
        "shifts": [[1, 0], [0, 1], [1, 1], [2, 0]],
        "h": 0.5,
    },
    "output_dir": "out",
    "threads": 1,
}


def _merge_with_defaults(data: dict, defaults: dict, path: str, violations: list) -> dict:
    """Fill defaults recursively; unknown keys are errors, not warnings."""
    out = {}
    for key, default in defaults.items():
        if key in data:
            val = data[key]
            if isinstance(default, dict) and isinstance(val, dict):
                out[key] = _merge_with_defaults(val, default, f"{path}{key}.", violations)
            else:
                out[key] = val
        else:
            out[key] = default
    for key in data:
        if key not in defaults:
            violations.append(f"unknown key {path}{key}")
    return out


class RunConfig:
    """Validated scenario description; builds the domain objects on demand."""

    def __init__(self, data: dict | None = None):
        violations: list[str] = []
        self.raw = _merge_with_defaults(data or {}, _DEFAULTS, "", violations)
        violations.extend(self._check(self.raw))
        if violations:
            raise ConfigError(violations)

    @staticmethod
    def _check(raw: dict) -> list:
        v = []
        if raw["schema_version"] != SCHEMA_VERSION:
            v.append(f"unsupported schema_version {raw['schema_version']}")
        geo = raw["geometry"]
        if not (0.0 < geo["hole_radius"] < 0.5):
            v.append(f"geometry.hole_radius out of (0, 0.5): {geo['hole_radius']}")
        if geo["refine_level"] < 0:
            v.append("geometry.refine_level must be >= 0")
        dom = geo["domain"]
        if len(dom) != 4 or dom[1] <= dom[0] or dom[3] <= dom[2]:
            v.append(f"geometry.domain must be [x0, x1, y0, y1] with positive extents: {dom}")

        disc = raw["discretization"]
        if disc["tau"] <= 0.0 or disc["t_end"] <= 0.0:
            v.append("discretization.tau and t_end must be positive")
        else:
            steps = disc["t_end"] / disc["tau"]
            if abs(steps - round(steps)) > 1e-9:
                v.append(f"t_end / tau must be an integer step count, got {steps}")
        if disc["fp_sweeps"] < 1:
            v.append("discretization.fp_sweeps must be >= 1")

        for name in ("f", "g"):
            entry = raw["kinetics"][name]
            if entry["id"] not in ("zero", "linear", "monod", "constant"):
                v.append(f"kinetics.{name}.id unknown: {entry['id']}")
            elif entry["id"] == "monod" and entry.get("saturation", 1.0) <= 0.0:
                v.append(f"kinetics.{name}.saturation must be positive")
        if raw["q"]["id"] not in ("zero", "constant", "periodic"):
            v.append(f"q.id unknown: {raw['q']['id']}")
        if raw["initial"]["id"] not in ("constant", "affine", "sine", "cosine"):
            v.append(f"initial.id unknown: {raw['initial']['id']}")
        if raw["transform"]["modulation"] not in ("uniform", "sine"):
            v.append(f"transform.modulation unknown: {raw['transform']['modulation']}")
        if raw["transform"]["amplitude"] != "linear":
            v.append(f"transform.amplitude unknown: {raw['transform']['amplitude']}")

        for eps in raw["sweep"]["eps"]:
            if eps <= 0.0 or abs(1.0 / eps - round(1.0 / eps)) > 1e-9:
                v.append(f"sweep.eps entry {eps}: 1/eps must be a positive integer")
        if raw["sweep"]["h"] <= 0.0:
            v.append("sweep.h must be positive")
        if raw["threads"] < 1:
            v.append("threads must be >= 1")

        # tau * Lip(f, g) < 1 keeps the semi-implicit fixed point a contraction
        if not v:
            lip = max(RunConfig._kinetics_from(raw, "f").lipschitz,
                      RunConfig._kinetics_from(raw, "g").lipschitz)
            if disc["tau"] * lip >= 1.0:
                v.append(f"tau * Lip(f,g) = {disc['tau'] * lip:.3g} >= 1; reduce tau")
        return v

    # -- constructors for the domain objects --------------------------------

    def cell_spec(self) -> CellSpec:
        g = self.raw["geometry"]
        return CellSpec(hole_radius=g["hole_radius"], hole_center=tuple(g["hole_center"]),
                        refine_level=g["refine_level"])

    def domain(self) -> tuple:
        return tuple(self.raw["geometry"]["domain"])

    def transform_spec(self) -> TransformSpec:
        tr = self.raw["transform"]
        g = self.raw["geometry"]
        cut = tr["cutoff_radii"]
        kwargs = {}
        if cut is not None:
            from perihom.transform import Cutoff
            kwargs["cutoff"] = Cutoff(*cut)
        return TransformSpec(hole_radius=g["hole_radius"], hole_center=tuple(g["hole_center"]),
                             omega_max=tr["omega_max"], t_end=self.raw["discretization"]["t_end"],
                             amplitude=tr["amplitude"], modulation=tr["modulation"], **kwargs)

    @staticmethod
    def _kinetics_from(raw: dict, name: str) -> KineticsSpec:
        entry = raw["kinetics"][name]
        return KineticsSpec(kind=entry["id"], rate=entry.get("rate", 0.0),
                            saturation=entry.get("saturation", 1.0))

    def kinetics(self, name: str) -> KineticsSpec:
        return self._kinetics_from(self.raw, name)

    def q_spec(self) -> QSpec:
        q = self.raw["q"]
        return QSpec(kind=q["id"], vector=tuple(q["vector"]), magnitude=q["magnitude"])

    def initial_spec(self) -> InitialSpec:
        ini = self.raw["initial"]
        if ini["id"] == "constant":
            return InitialSpec(kind="constant", params=(ini.get("value", 1.0),))
        if ini["id"] == "affine":
            return InitialSpec(kind="affine",
                               params=(ini.get("base", 1.0), ini.get("slope_x", 0.0),
                                       ini.get("slope_y", 0.0)))
        return InitialSpec(kind=ini["id"],
                           params=(ini["base"], ini["amplitude"], ini["kx"], ini["ky"]))

    # -- scalar accessors ----------------------------------------------------

    @property
    def tau(self) -> float:
        return self.raw["discretization"]["tau"]

    @property
    def t_end(self) -> float:
        return self.raw["discretization"]["t_end"]

    @property
    def num_steps(self) -> int:
        return int(round(self.t_end / self.tau))

    @property
    def solver_tol(self) -> float:
        return self.raw["discretization"]["solver_tol"]

    @property
    def max_iter(self) -> int:
        return self.raw["discretization"]["max_iter"]

    @property
    def fp_sweeps(self) -> int:
        return self.raw["discretization"]["fp_sweeps"]

    @property
    def fp_tol(self) -> float:
        return self.raw["discretization"]["fp_tol"]

    @property
    def eps_list(self) -> list:
        return list(self.raw["sweep"]["eps"])

    @property
    def shifts(self) -> list:
        return [tuple(s) for s in self.raw["sweep"]["shifts"]]

    @property
    def shift_h(self) -> float:
        return self.raw["sweep"]["h"]

    @property
    def threads(self) -> int:
        return self.raw["threads"]

    @property
    def output_dir(self) -> str:
        return self.raw["output_dir"]

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"

    def fingerprint(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def copy_with(self, **section_updates) -> "RunConfig":
        """New config with whole subsections replaced (deep merge per section)."""
        data = json.loads(json.dumps(self.raw))
        for key, val in section_updates.items():
            if isinstance(val, dict) and isinstance(data.get(key), dict):
                data[key].update(val)
            else:
                data[key] = val
        return RunConfig(data)


def parse_config(path) -> RunConfig:
    """Load and validate a JSON config file; raises ConfigError with all violations."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from exc
    return RunConfig(data)


def dump_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(cfg.to_json())
