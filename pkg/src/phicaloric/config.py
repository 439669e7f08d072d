"""Experiment configs: schema validation, defaults, hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .presets import PRESETS

SOLVER_DEFAULTS = {"eps0": 1e-2, "eps_min": 1e-8, "stride": 1}


def schema() -> dict:
    return json.loads(resources.files("phicaloric").joinpath("data/config.schema.json").read_text())


def bundled(name: str = "acceptance.json") -> dict:
    return json.loads(resources.files("phicaloric").joinpath("data", name).read_text())


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    return hashlib.sha256(canonical(obj).encode()).hexdigest()


def code_version() -> str:
    """Package version plus a digest of the modules that determine solver output."""
    from . import __version__

    h = hashlib.sha256()
    pkg = resources.files("phicaloric")
    for mod in ("errors.py", "orlicz.py", "presets.py", "solver.py", "tensor_maps.py"):
        h.update(pkg.joinpath(mod).read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def load_config(source) -> dict:
    """Validate a config given as a path or a dict and fill in defaults.

    Raises ConfigError with a JSON pointer to the offending entry.
    """
    if isinstance(source, (str, Path)):
        try:
            cfg = json.loads(Path(source).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {source}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {source}: {exc}") from None
    else:
        cfg = copy.deepcopy(source)
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"{_pointer(e.absolute_path)}: {e.message}")

    cfg.setdefault("name", "experiment")
    cfg.setdefault("seed", 0)
    cfg["solver"] = {**SOLVER_DEFAULTS, **cfg.get("solver", {})}
    cfg.setdefault("cylinder_sets", {})
    cfg.setdefault("output", {})

    ids = set()
    for i, run in enumerate(cfg["runs"]):
        if run["id"] in ids:
            raise ConfigError(f"/runs/{i}/id: duplicate run id {run['id']!r}")
        ids.add(run["id"])
        if run["preset"] not in PRESETS:
            raise ConfigError(f"/runs/{i}/preset: unknown preset {run['preset']!r}")
        if "cylinders" in run and run["cylinders"] not in cfg["cylinder_sets"]:
            raise ConfigError(f"/runs/{i}/cylinders: unknown cylinder set {run['cylinders']!r}")
        run.setdefault("mode", "parabolic")
        run.setdefault("params", {})
        if run["mode"] == "parabolic" and "dt" not in run["grid"]:
            raise ConfigError(f"/runs/{i}/grid: parabolic runs need dt")
    cids = set()
    for i, chk in enumerate(cfg["checks"]):
        if chk["id"] in cids:
            raise ConfigError(f"/checks/{i}/id: duplicate check id {chk['id']!r}")
        cids.add(chk["id"])
        refs = list(chk.get("runs", []))
        if "baseline_run" in chk.get("options", {}):
            refs.append(chk["options"]["baseline_run"])
        for g in chk.get("groups", {}).values():
            refs += g
        for r in refs:
            if r not in ids:
                raise ConfigError(f"/checks/{i}: unknown run {r!r}")
        chk.setdefault("options", {})
        chk.setdefault("envelope", {})
    return cfg


def run_key(cfg: dict, run: dict) -> dict:
    """Everything that determines a run's solver output."""
    return {"phi": run.get("phi", cfg["phi"]), "preset": run["preset"], "params": run["params"],
            "amplitude": run.get("amplitude"), "seed": run.get("seed", cfg["seed"]),
            "mode": run["mode"], "grid": run["grid"], "solver": cfg["solver"]}
