"""
FusionConfig - every tunable coefficient of the fusion pipeline.

Featurizer constants follow the Coulomb-matrix convention (atomic units,
0.5·Z^2.4 diagonal). Optimizer and cross-validation defaults are the values
the pipeline ships with; a run overrides them through an INI config file
(``load_run_config``), environment variables (``.env``) or CLI flags.
"""

from __future__ import annotations

import configparser
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)


@dataclass
class FusionConfig:
    # ── Featurization ──────────────────────────────────────
    bohr_per_angstrom: float = 1.8897259886
    coulomb_diag_exponent: float = 2.4  # C_ii = 0.5·Z^2.4

    # ── PCA reduction ──────────────────────────────────────
    rank_tol: float = 1e-12        # eigenvalue < rank_tol·λ_max → rank deficient
    default_components: int = 10   # P; inferred from 30 = 10·3 fused dimensions
    whiten: bool = True

    # ── IVA-L optimizer ────────────────────────────────────
    iva_step_size: float = 0.1
    iva_tol: float = 1e-6
    iva_max_iters: int = 2048
    iva_score_eps: float = 1e-12   # guard on SCV radius
    iva_step_growth: float = 1.05  # η ← min(1.05·η, η0) on accepted step
    iva_perturbation: float = 0.01  # uniform(−0.01, 0.01) for seeded init
    iva_restarts: int = 1
    singular_tol: float = 1e-12

    # ── Nested cross-validation ────────────────────────────
    outer_folds: int = 5
    repeats: int = 30
    train_fraction: float = 0.8
    validation_fraction: float = 0.1
    test_fraction: float = 0.1
    sigma_exponents: list = field(default_factory=lambda: list(range(-4, 5)))  # σ = 2^i·median distance
    lambda_exponents: list = field(default_factory=lambda: list(range(1, 10)))  # λ = 10^−i
    median_distance_sample: int = 1000  # columns used to estimate the median pairwise distance

    # ── Synthetic benchmark ────────────────────────────────
    bench_cond_bound: float = 10.0
    bench_max_attempts: int = 100

    def sigma_multipliers(self) -> list[float]:
        return [2.0 ** i for i in self.sigma_exponents]

    def lambda_grid(self) -> list[float]:
        return [10.0 ** (-i) for i in self.lambda_exponents]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


DEFAULTS = FusionConfig()


# ──────────────────────────────────────────────────────────────
# Environment defaults (CLI > env > config default)
# ──────────────────────────────────────────────────────────────

def env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"environment variable {name}={raw!r} is not an integer")


def env_str(name: str, default: str) -> str:
    return os.getenv(name) or default


# ──────────────────────────────────────────────────────────────
# INI run configuration
# ──────────────────────────────────────────────────────────────

def _split_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.replace("\n", ",").split(",") if item.strip()]


def parse_k(raw: str) -> list[int]:
    """'2' → [2]; '1-7' → [1..7]; '2, 3' → [2, 3]."""
    out: list[int] = []
    for item in _split_list(raw):
        if "-" in item:
            lo, hi = item.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(item))
    return out


def _resolve(base: Path, raw: str) -> Path:
    p = Path(raw.strip()).expanduser()
    return p if p.is_absolute() else (base / p)


def load_run_config(path: str | Path | None, overrides: dict | None = None):
    """
    Read an INI file into a validated ``RunConfig``.

    ``overrides`` holds flat CLI values (seed, out_dir, mode, jobs) applied
    after the file. ``path`` may be None for commands that only need
    overrides (e.g. ``bench`` with defaults).
    """
    from pydantic import ValidationError
    from models import RunConfig

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep dataset-name case
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser.read(path, encoding="utf-8")
        base = path.resolve().parent

    raw: dict = {}
    try:
        if parser.has_section("inputs"):
            raw["inputs"] = {name: _resolve(base, v) for name, v in parser.items("inputs")}

        if parser.has_section("featurize"):
            sec = parser["featurize"]
            if sec.get("smiles"):
                raw["smiles"] = _resolve(base, sec["smiles"])
            if sec.get("xyz"):
                raw["xyz"] = _resolve(base, sec["xyz"])
            if sec.get("featurizations"):
                raw["featurizations"] = [f.upper() for f in _split_list(sec["featurizations"])]
            if sec.get("dmax"):
                raw["dmax"] = sec.getint("dmax")

        if parser.has_section("labels"):
            sec = parser["labels"]
            if sec.get("path"):
                raw["labels_path"] = _resolve(base, sec["path"])
            raw["property"] = sec.get("property", "")
            raw["units"] = sec.get("units", "")

        fusion: dict = {}
        if parser.has_section("fusion"):
            sec = parser["fusion"]
            if sec.get("mode"):
                fusion["mode"] = sec["mode"].strip()
            if sec.get("components"):
                fusion["components"] = sec.getint("components")
            if sec.get("whiten"):
                fusion["whiten"] = sec.getboolean("whiten")
        if parser.has_section("iva"):
            sec = parser["iva"]
            iva: dict = {}
            for key, conv in (
                ("step_size", sec.getfloat),
                ("tol", sec.getfloat),
                ("max_iters", sec.getint),
                ("seed", sec.getint),
                ("restarts", sec.getint),
            ):
                if sec.get(key):
                    iva[key] = conv(key)
            if sec.get("init"):
                iva["init"] = sec["init"].strip()
            fusion["iva"] = iva
        raw["fusion"] = fusion

        if parser.has_section("cv"):
            sec = parser["cv"]
            cv: dict = {}
            for key, conv in (
                ("outer_folds", sec.getint),
                ("repeats", sec.getint),
                ("train_fraction", sec.getfloat),
                ("validation_fraction", sec.getfloat),
                ("test_fraction", sec.getfloat),
                ("seed", sec.getint),
            ):
                if sec.get(key):
                    cv[key] = conv(key)
            raw["cv"] = cv

        if parser.has_section("curve"):
            sec = parser["curve"]
            if sec.get("sizes"):
                raw["curve_sizes"] = [int(s) for s in _split_list(sec["sizes"])]
            if sec.get("modes"):
                raw["curve_modes"] = _split_list(sec["modes"])

        if parser.has_section("sweep") and parser["sweep"].get("k"):
            raw["sweep_k"] = parse_k(parser["sweep"]["k"])

        if parser.has_section("bench"):
            sec = parser["bench"]
            bench: dict = {}
            for key, conv in (
                ("K", sec.getint),
                ("P", sec.getint),
                ("N", sec.getint),
                ("rho", sec.getfloat),
                ("cond_bound", sec.getfloat),
                ("seeds", sec.getint),
                ("seed", sec.getint),
            ):
                if sec.get(key):
                    bench[key] = conv(key)
            if sec.get("modes"):
                bench["modes"] = _split_list(sec["modes"])
            raw["bench"] = bench

        if parser.has_section("output") and parser["output"].get("dir"):
            raw["out_dir"] = _resolve(base, parser["output"]["dir"])
        if parser.has_section("run"):
            sec = parser["run"]
            if sec.get("seed"):
                raw["seed"] = sec.getint("seed")
            if sec.get("jobs"):
                raw["jobs"] = sec.getint("jobs")
    except ValueError as e:
        raise ConfigError(f"{path}: {e}")

    raw.setdefault("seed", env_int("IVAFUSE_SEED", 0))
    raw.setdefault("jobs", env_int("IVAFUSE_JOBS", 1))

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "mode":
            raw.setdefault("fusion", {})["mode"] = value
        elif key == "seed":
            # a CLI seed replaces every section seed
            raw["seed"] = value
            raw.get("cv", {}).pop("seed", None)
            raw.get("bench", {}).pop("seed", None)
            raw.get("fusion", {}).get("iva", {}).pop("seed", None)
        else:
            raw[key] = value

    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}")
    logger.info(f"Loaded run config (mode={cfg.fusion.mode_string()}, seed={cfg.seed})")
    return cfg
