"""Batch command line: ``skspec run --config file``.

A run reads one JSON or TOML document, validates it completely before any
computation, executes the named experiment and writes CSV tables, JSON check
records and ``manifest.json`` into the output directory.

Exit status: 0 all checks pass, 2 a scientific check failed, 3 a blow-up was
recorded, 1 crash or invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("skspec")

EXPERIMENTS = ("symbols", "wick", "cov", "sk-poly", "sk-sine", "oracle")
EXIT_OK, EXIT_CRASH, EXIT_FAIL, EXIT_BLOWUP = 0, 1, 2, 3

# per experiment: defaults for every accepted key
DEFAULTS = {
    "symbols": {"eps": [0.1, 0.05, 0.025], "modes": [[1, 0], [2, 1], [4, 4]], "times": [0.1, 0.5, 1.0],
                "theta": 0.1, "heat_mode": [1, 0], "heat_time": 0.5},
    "wick": {"eps": [0.0, 0.1], "N": [8, 16, 32, 64], "t": 1.0, "ell": 2, "beta": None, "seeds": 32,
             "log_law_N": 256},
    "cov": {"eps": [0.0, 0.1, 0.3], "N": [16, 64], "times": [0.01, 0.1, 1.0], "levels": 6, "delta": 0.1},
    "sk-poly": {"eps": [0.2, 0.1, 0.05, 0.0], "N": 32, "M": 256, "T": 0.25, "K": None, "k": 3, "seeds": 16,
                "dump_paths": False, "dump_fields": False},
    "sk-sine": {"eps": [0.2, 0.1, 0.05, 0.0], "N": 32, "M": 256, "T": 0.25, "K": None, "beta": math.sqrt(math.pi),
                "seeds": 16, "dump_paths": False, "dump_fields": False},
    "oracle": {"eps": [0.0, 0.1], "N": 8, "k": 3, "T": 0.05, "K": 256, "K_list": [32, 64, 128], "K_ref": 512,
               "seed": 3},
}
TOLERANCES = {
    "symbols": {"ratio_low": 2.5, "ratio_high": 6.0},
    "wick": {},
    "cov": {"width": 3.0},
    "sk-poly": {"fraction": 0.8, "ratio": 0.5},
    "sk-sine": {"fraction": 0.8, "ratio": 0.5},
    "oracle": {"difference": 1e-3, "slope_low": 0.8, "slope_high": 1.3},
}
COMMON = {"experiment", "out", "tolerances"}


class ConfigInvalid(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict
    tolerances: dict
    out: str | None = None
    seeds: list = field(default_factory=list)

    def document(self) -> dict:
        """A config document that validates back to this config (seed offset already applied)."""
        doc = {"experiment": self.experiment, **self.params, "tolerances": self.tolerances}
        if "seeds" in DEFAULTS[self.experiment]:
            doc["seeds"] = self.seeds
        return doc

    def canonical(self) -> dict:
        return {"experiment": self.experiment, "params": self.params, "tolerances": self.tolerances,
                "seeds": self.seeds}

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# loading and validation ------------------------------------------------------

def load_document(path: str | Path) -> dict:
    """Parse JSON or TOML; the format is detected from the content, not the suffix."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return json.loads(text)
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            raise ConfigInvalid([f"config: neither JSON nor TOML ({exc})"]) from None


def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _seed_list(v, problems) -> list:
    if isinstance(v, int) and not isinstance(v, bool):
        if v < 1:
            problems.append(f"seeds: count must be >= 1, got {v}")
            return []
        return list(range(1, v + 1))
    if isinstance(v, list) and v and all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in v):
        if len(set(v)) != len(v):
            problems.append("seeds: duplicate seeds")
        return sorted(v)
    problems.append(f"seeds: expected a positive count or a list of non-negative integers, got {v!r}")
    return []


def _check_types(name: str, p: dict, problems: list):
    """Shape checks driven by each key's default; scalar where a list is expected is wrapped."""
    for key, default in DEFAULTS[name].items():
        val = p.get(key)
        if key in ("seeds", "seed") or val is None:
            continue
        if isinstance(default, bool):
            if not isinstance(val, bool):
                problems.append(f"{key}: expected true/false, got {val!r}")
        elif key in ("modes", "heat_mode"):
            pairs = val if key == "modes" else [val]
            if not (isinstance(pairs, list) and pairs and all(
                    isinstance(m, list) and len(m) == 2 and all(isinstance(c, int) for c in m) for m in pairs)):
                problems.append(f"{key}: expected integer pairs [n1, n2]")
        elif isinstance(default, list):
            if _number(val):
                p[key] = val = [val]
            if not (isinstance(val, list) and val and all(_number(x) for x in val)):
                problems.append(f"{key}: expected a non-empty list of numbers, got {val!r}")
        elif not _number(val):
            problems.append(f"{key}: expected a number, got {val!r}")


def validate_config(raw: dict, seed_offset: int = 0) -> ExperimentConfig:
    """Full validation with every problem itemized; raises ConfigInvalid."""
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigInvalid(["config: top level must be a table/object"])
    name = raw.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigInvalid([f"experiment: must be one of {', '.join(EXPERIMENTS)}, got {name!r}"])
    allowed = set(DEFAULTS[name]) | COMMON
    for key in sorted(set(raw) - allowed):
        problems.append(f"{key}: unknown key for experiment {name!r}")
    p = {k: raw.get(k, v) for k, v in DEFAULTS[name].items()}
    tol = dict(TOLERANCES[name])
    extra = raw.get("tolerances", {})
    if not isinstance(extra, dict):
        problems.append("tolerances: expected a table/object")
        extra = {}
    for key, val in extra.items():
        if key not in tol:
            problems.append(f"tolerances.{key}: unknown tolerance for {name!r}")
        elif not _number(val) or val <= 0:
            problems.append(f"tolerances.{key}: must be a positive number")
        else:
            tol[key] = float(val)
    typed: list[str] = []
    _check_types(name, p, typed)
    problems.extend(typed)

    seeds = []
    if "seeds" in p:
        seeds = [s + seed_offset for s in _seed_list(p.pop("seeds"), problems)]
    if "seed" in p:
        if not isinstance(p["seed"], int) or p["seed"] < 0:
            problems.append("seed: must be a non-negative integer")
        else:
            p["seed"] += seed_offset
    if not typed:
        problems.extend(_semantic_problems(name, p))
    if problems:
        raise ConfigInvalid(problems)
    out = raw.get("out")
    return ExperimentConfig(name, p, tol, out if isinstance(out, str) else None, seeds)


def _semantic_problems(name: str, p: dict) -> list[str]:
    from .dynamics import ModelConfig
    from .experiments import default_steps

    out = []
    eps = p.get("eps", [])
    if any(e < 0 for e in eps):
        out.append("eps: values must be >= 0")
    if name == "symbols":
        if any(e <= 0 for e in eps):
            out.append("eps: symbol tables need eps > 0 (eps = 0 is added automatically)")
        if any(t < 0 for t in p["times"]) or p["heat_time"] <= 0:
            out.append("times: must be non-negative, heat_time positive")
        if not 0 < p["theta"] < 1:
            out.append(f"theta: must lie in (0, 1), got {p['theta']}")
    elif name == "wick":
        if any(N <= 0 for N in p["N"]):
            out.append("N: cutoffs must be positive")
        if p["t"] <= 0:
            out.append(f"t: must be positive, got {p['t']}")
        if not isinstance(p["ell"], int) or p["ell"] < 1:
            out.append("ell: must be a positive integer")
        if p["beta"] is not None and (not _number(p["beta"]) or not 0 < p["beta"] ** 2 < 4 * math.pi):
            out.append(f"beta: beta^2 must lie in (0, 4 pi), got {p['beta']!r}")
    elif name == "cov":
        if any(N <= 0 for N in p["N"]):
            out.append("N: cutoffs must be positive")
        if any(t <= 0 for t in p["times"]):
            out.append("times: must be positive")
        if not isinstance(p["levels"], int) or p["levels"] < 1:
            out.append("levels: must be a positive integer")
    elif name in ("sk-poly", "sk-sine"):
        if 0.0 not in eps:
            out.append("eps: must contain 0 (the limiting equation)")
        K = p["K"]
        if K is not None and (not isinstance(K, int) or K < 1):
            out.append(f"K: must be a positive integer, got {K!r}")
        if not isinstance(p["M"], int):
            out.append("M: must be an integer")
        if not out:
            model = "polynomial" if name == "sk-poly" else "sine-gordon"
            cfg = ModelConfig(model=model, k=int(p.get("k", 3)), beta=float(p.get("beta", math.sqrt(math.pi))),
                              eps_list=tuple(eps), N=p["N"], M=p["M"], T=p["T"],
                              K=K if K is not None else (default_steps(p["T"], eps) if p["T"] > 0 else 1))
            out.extend(cfg.problems())
    elif name == "oracle":
        for key in ("K", "K_ref"):
            if not isinstance(p[key], int) or p[key] < 1:
                out.append(f"{key}: must be a positive integer")
        if not (isinstance(p["K_list"], list) and len(p["K_list"]) >= 3
                and all(isinstance(k, int) and k > 0 and isinstance(p["K_ref"], int) and p["K_ref"] % k == 0
                        for k in p["K_list"])):
            out.append("K_list: needs >= 3 positive integers dividing K_ref")
        if p["T"] <= 0:
            out.append(f"T: must be positive, got {p['T']}")
        if not isinstance(p["k"], int) or p["k"] < 2:
            out.append("k: must be an integer >= 2")
    return out


# execution -----------------------------------------------------------------

def _mapper(jobs: int):
    if jobs <= 1:
        return map, None
    pool = ProcessPoolExecutor(max_workers=jobs)
    return pool.map, pool


def execute(cfg: ExperimentConfig, jobs: int = 1):
    from . import experiments as ex

    p, tol = cfg.params, cfg.tolerances
    mapper, pool = _mapper(jobs)
    try:
        if cfg.experiment == "symbols":
            return ex.symbols_experiment(p["eps"], [tuple(m) for m in p["modes"]], p["times"], p["theta"],
                                         tuple(p["heat_mode"]), p["heat_time"],
                                         (tol["ratio_low"], tol["ratio_high"]))
        if cfg.experiment == "wick":
            return ex.wick_experiment(cfg.seeds, p["eps"], p["N"], p["t"], p["ell"], p["beta"], p["log_law_N"],
                                      mapper=mapper)
        if cfg.experiment == "cov":
            return ex.cov_experiment(p["eps"], p["N"], tol["width"], p["levels"], p["times"], p["delta"])
        if cfg.experiment == "oracle":
            return ex.oracle_experiment(p["eps"], p["N"], p["k"], p["T"], p["K"], p["K_list"], p["K_ref"],
                                        p["seed"], tol["difference"], (tol["slope_low"], tol["slope_high"]))
        model = "polynomial" if cfg.experiment == "sk-poly" else "sine-gordon"
        return ex.sk_experiment(cfg.seeds, model, p["eps"], p["N"], p["M"], p["T"], p["K"], p.get("k", 3),
                                p.get("beta", math.sqrt(math.pi)), tol["fraction"], tol["ratio"], mapper=mapper)
    finally:
        if pool is not None:
            pool.shutdown()


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "%.17g" % v
    if isinstance(v, complex):
        return "%.17g%+.17gj" % (v.real, v.imag)
    return str(v)


def csv_bytes(columns, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue().encode("utf-8")


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "item"):
        return _jsonable(v.item())
    return v


def _dump_extras(cfg: ExperimentConfig, out: Path) -> list[str]:
    """Optional noise-path CSVs and field dumps for the SK experiments."""
    from .experiments import default_steps, sk_seed
    from .noise import NoisePath, write_path_csv
    from .spectral import lattice

    p, written = cfg.params, []
    K = p["K"] if p["K"] is not None else default_steps(p["T"], p["eps"])
    for seed in cfg.seeds:
        if p.get("dump_paths"):
            name = f"noise_path_seed{seed}.csv"
            write_path_csv(NoisePath(seed, p["T"], K), lattice(p["M"]), 2.0 * p["N"], out / name)
            written.append(name)
        if p.get("dump_fields"):
            model = "polynomial" if cfg.experiment == "sk-poly" else "sine-gordon"
            res = sk_seed(seed, model, p["eps"], p["N"], p["M"], p["T"], K, p.get("k", 3),
                          p.get("beta", math.sqrt(math.pi)), keep_fields=True)
            for tr in res["trajectories"]:
                name = f"fields_seed{seed}_eps{tr.eps:g}.bin"
                with open(out / name, "wb") as fh:
                    for u in tr.u:
                        blob = u.to_bytes()
                        fh.write(len(blob).to_bytes(8, "little") + blob)
                written.append(name)
    return written


def write_outputs(cfg: ExperimentConfig, result, out: Path, wall: float) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, (cols, rows) in result.tables.items():
        (out / f"{name}.csv").write_bytes(csv_bytes(cols, rows))
        files.append(f"{name}.csv")
    checks = [_jsonable(c.to_dict()) for c in result.checks]
    (out / "checks.json").write_text(json.dumps({"checks": checks, "records": _jsonable(result.records)},
                                                indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files.append("checks.json")
    (out / "config.json").write_text(json.dumps(_jsonable(cfg.document()), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    files.append("config.json")
    if cfg.experiment in ("sk-poly", "sk-sine"):
        files.extend(_dump_extras(cfg, out))
    inventory = []
    for name in sorted(files):
        data = (out / name).read_bytes()
        inventory.append({"file": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
    manifest = {
        "experiment": cfg.experiment,
        "config": _jsonable(cfg.canonical()),
        "config_hash": cfg.config_hash,
        "version": __version__,
        "checks": {c["check"]: c["pass"] for c in checks},
        "blowups": [dict(zip(("seed", "eps", "t", "step"), b)) for b in result.blowups],
        "wall_clock_s": round(wall, 3),
        "files": inventory,
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2) + "\n", encoding="utf-8")
    return manifest


def run(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> tuple[dict, int]:
    t0 = time.perf_counter()
    result = execute(cfg, jobs)
    manifest = write_outputs(cfg, result, out, time.perf_counter() - t0)
    if result.blowups:
        return manifest, EXIT_BLOWUP
    return manifest, EXIT_OK if result.passed else EXIT_FAIL


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skspec", description="Damped-wave to heat limit experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment described by a config document")
    r.add_argument("--config", required=True, help="JSON or TOML config")
    r.add_argument("--jobs", type=int, default=1, help="worker processes for per-seed work")
    r.add_argument("--out", default=None, help="output directory (SKSPEC_OUT overrides)")
    r.add_argument("--seed-offset", type=int, default=0, help="added to every seed")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = validate_config(load_document(args.config), args.seed_offset)
    except ConfigInvalid as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CRASH
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CRASH
    out = Path(os.environ.get("SKSPEC_OUT") or args.out or cfg.out or f"skspec-{cfg.experiment}")
    log.info("running %s into %s (config %s)", cfg.experiment, out, cfg.config_hash[:12])
    try:
        manifest, code = run(cfg, out, max(1, args.jobs))
    except Exception:
        traceback.print_exc()
        return EXIT_CRASH
    for name, ok in manifest["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if manifest["blowups"]:
        print(f"blow-up recorded in {len(manifest['blowups'])} trajectories")
    return code


if __name__ == "__main__":
    sys.exit(main())
