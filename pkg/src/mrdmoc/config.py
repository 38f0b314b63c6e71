"""Run configuration: INI-style sectioned key-value files.

Keys carry their units (dt_s, theta_tf_deg, beam_height_in); values convert
to the internal slug-ft-s-lb / radian system at ingestion and nowhere else.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .spacecraft import SpacecraftParams, rectangular_rigidity

STUDY_KINDS = (
    "free_response",
    "maneuver",
    "convergence_integrator",
    "convergence_ocp",
    "tradeoff",
)


@dataclass
class RunConfig:
    """Validated configuration for one CLI run."""

    spacecraft: SpacecraftParams
    split_index: int
    dt: float
    micro_count: int
    tf: float
    study_kind: str
    maneuver_theta_deg: float | None = None
    free_eta0: np.ndarray | None = None
    free_theta0_rad: float = 0.0
    dt_list: list = field(default_factory=list)
    p_list: list = field(default_factory=list)
    r_list: list = field(default_factory=list)
    refinement: int = 8
    repetitions: int = 5
    compare_rk4: bool = False
    output_dir: str = "out"
    formats: tuple = ("csv", "svg")
    config_hash: str = ""
    source_text: str = ""


def _get(parser, section, key, conv, required=True, default=None):
    if not parser.has_option(section, key):
        if required:
            raise ConfigError(f"[{section}] {key}: missing required key")
        return default
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def _float_list(raw: str):
    return [float(tok) for tok in raw.replace(",", " ").split()]


def _int_list(raw: str):
    return [int(tok) for tok in raw.replace(",", " ").split()]


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _spacecraft(parser) -> SpacecraftParams:
    sec = "spacecraft"
    if not parser.has_section(sec):
        raise ConfigError("missing [spacecraft] section")
    if parser.has_option(sec, "flexural_rigidity_lbft2"):
        rigidity = _get(parser, sec, "flexural_rigidity_lbft2", float)
    else:
        modulus = _get(parser, sec, "elastic_modulus_lb_per_ft2", float)
        height_ft = _get(parser, sec, "beam_height_in", float) / 12.0
        thickness_ft = _get(parser, sec, "beam_thickness_in", float) / 12.0
        rigidity = rectangular_rigidity(modulus, height_ft, thickness_ft)
    try:
        return SpacecraftParams(
            hub_radius=_get(parser, sec, "hub_radius_ft", float),
            hub_inertia=_get(parser, sec, "hub_inertia_slugft2", float),
            tip_mass=_get(parser, sec, "tip_mass_slug", float),
            tip_inertia=_get(parser, sec, "tip_inertia_slugft2", float),
            beam_length=_get(parser, sec, "beam_length_ft", float),
            beam_linear_density=_get(parser, sec, "beam_linear_density_slug_per_ft", float),
            flexural_rigidity=rigidity,
            num_modes=_get(parser, sec, "num_modes", int),
        )
    except ValueError as exc:
        raise ConfigError(f"[spacecraft] {exc}") from exc


def load_config(path) -> RunConfig:
    """Parse and validate a config file; raises ConfigError with the
    offending section/key on any problem."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    craft = _spacecraft(parser)
    n_coords = craft.num_modes + 1

    if not parser.has_section("grid"):
        raise ConfigError("missing [grid] section")
    dt = _get(parser, "grid", "dt_s", float)
    p = _get(parser, "grid", "p", int)
    tf = _get(parser, "grid", "tf_s", float)
    if dt <= 0 or tf <= 0:
        raise ConfigError("[grid] dt_s and tf_s must be positive")
    if p < 1:
        raise ConfigError("[grid] p must be >= 1")

    r = _get(parser, "split", "r", int) if parser.has_section("split") else 1
    if not 1 <= r <= n_coords:
        raise ConfigError(f"[split] r must lie in 1..{n_coords}")

    has_maneuver = parser.has_section("maneuver")
    has_free = parser.has_section("free_response")
    if has_maneuver == has_free:
        raise ConfigError("exactly one of [maneuver] or [free_response] must be present")

    theta_deg = None
    eta0 = None
    theta0 = 0.0
    if has_maneuver:
        theta_deg = _get(parser, "maneuver", "theta_tf_deg", float)
    else:
        eta0 = np.array(_get(parser, "free_response", "eta0", _float_list))
        if eta0.size != craft.num_modes:
            raise ConfigError(
                f"[free_response] eta0 needs {craft.num_modes} entries, got {eta0.size}"
            )
        theta0 = _get(parser, "free_response", "theta0_rad", float, required=False, default=0.0)

    if not parser.has_section("study"):
        raise ConfigError("missing [study] section")
    kind = _get(parser, "study", "kind", str).strip()
    if not kind:
        raise ConfigError("no study requested")
    if kind not in STUDY_KINDS:
        raise ConfigError(f"[study] kind must be one of {', '.join(STUDY_KINDS)}")
    if kind in ("maneuver", "convergence_ocp", "tradeoff") and not has_maneuver:
        raise ConfigError(f"study '{kind}' needs a [maneuver] section")
    if kind in ("free_response", "convergence_integrator") and not has_free:
        raise ConfigError(f"study '{kind}' needs a [free_response] section")

    dt_list = _get(parser, "study", "dt_list_s", _float_list, required=False, default=[])
    p_list = _get(parser, "study", "p_list", _int_list, required=False, default=[])
    r_list = _get(parser, "study", "r_list", _int_list, required=False, default=[])
    refinement = _get(parser, "study", "refinement", int, required=False, default=8)
    repetitions = _get(parser, "study", "repetitions", int, required=False, default=5)
    compare_rk4 = _get(parser, "study", "compare_rk4", _bool, required=False, default=False)

    if kind.startswith("convergence"):
        if not dt_list:
            raise ConfigError(f"[study] dt_list_s: sweep list required for '{kind}'")
        if not p_list:
            raise ConfigError(f"[study] p_list: sweep list required for '{kind}'")
    if kind == "tradeoff":
        if not p_list:
            raise ConfigError("[study] p_list: sweep list required for 'tradeoff'")
        if repetitions < 1:
            raise ConfigError("[study] repetitions must be >= 1")
    if any(x <= 0 for x in dt_list) or any(x < 1 for x in p_list) or any(x < 1 for x in r_list):
        raise ConfigError("[study] sweep entries must be positive")
    if any(x > n_coords for x in r_list):
        raise ConfigError(f"[study] r_list entries must be <= {n_coords}")

    out_dir = "out"
    formats = ("csv", "svg")
    if parser.has_section("output"):
        out_dir = _get(parser, "output", "dir", str, required=False, default="out")
        fmt = _get(parser, "output", "formats", str, required=False, default="csv, svg")
        formats = tuple(tok.strip() for tok in fmt.split(",") if tok.strip())

    # Non-sweep runs must hit tf with whole macro steps.
    if kind in ("free_response", "maneuver"):
        n_micro = tf / dt
        if abs(n_micro - round(n_micro)) > 1e-9 * max(1.0, n_micro):
            raise ConfigError("[grid] tf_s/dt_s must be an integer")
        if round(n_micro) % p != 0:
            raise ConfigError("[grid] tf_s/dt_s must be divisible by p")

    return RunConfig(
        spacecraft=craft,
        split_index=r,
        dt=dt,
        micro_count=p,
        tf=tf,
        study_kind=kind,
        maneuver_theta_deg=theta_deg,
        free_eta0=eta0,
        free_theta0_rad=theta0,
        dt_list=dt_list,
        p_list=p_list,
        r_list=r_list,
        refinement=refinement,
        repetitions=repetitions,
        compare_rk4=compare_rk4,
        output_dir=out_dir,
        formats=formats,
        config_hash=hashlib.sha256(text.encode()).hexdigest(),
        source_text=text,
    )
