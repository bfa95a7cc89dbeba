"""Scenario files: parsing, defaults, case transforms and sweep scaling.

Format: one ``key = value`` pair per line.  Values are Python-style
literals (numbers, bracketed vectors ``[0.5, 0.5]`` and matrices
``[[-2, 2], [0, -2]]``, booleans) or bare words; ``#`` starts a comment.
Dotted keys (``sweep.variable``, ``sim.horizon``, ``opt.weights``) group the
experiment settings.  See the README for the complete grammar and the key
reference.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .generator import RateScales
from .stochastic import (
    ModelParams,
    ValidationError,
    arrival_intensities,
    exponential_ph,
    exponential_retrial_ph,
    ph_fundamental_rate,
    poisson_map,
    retrial_absorption_split,
    validate_map,
    validate_ph,
)

MODEL_KEYS = {
    "S", "G", "lambda_f", "mu_r",
    "C0", "C_H", "C_N",
    "delta_N", "L_N", "delta_H", "L_H",
    "gamma", "Gamma", "Gamma0_leave", "Gamma0_retry",
}
SOLVER_KEYS = {"epsilon", "backend", "strict_paper_blocks", "strict_paper_sums",
               "dimension_cap", "m_cap", "row_sum_tol"}
SECTIONS = {"sweep", "sim", "opt"}

CASES = ("I", "II", "III", "IV", "V")

SWEEP_VARIABLES = ("lambda_H", "mu_N", "mu_H", "theta", "lambda_f", "mu_r")


class ScenarioError(ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        ctx = f"{path or '<scenario>'}" + (f":{line}" if line else "")
        super().__init__(f"{ctx}: {message}")


@dataclass
class Scenario:
    """Resolved scenario: model keys plus solver/experiment settings."""

    data: dict
    path: str | None = None

    # -- accessors -----------------------------------------------------------

    def get(self, key: str, default=None):
        return self.data.get(key, default)

    @property
    def epsilon(self) -> float:
        return float(self.data.get("epsilon", 1e-5))

    @property
    def backend(self) -> str:
        return str(self.data.get("backend", "auto"))

    @property
    def strict_blocks(self) -> bool:
        return bool(self.data.get("strict_paper_blocks", False))

    @property
    def strict_sums(self) -> bool:
        return bool(self.data.get("strict_paper_sums", False))

    def section(self, name: str) -> dict:
        return dict(self.data.get(name, {}))

    def build_model(self) -> ModelParams:
        d = self.data
        missing = [k for k in ("S", "G", "C0", "C_H", "C_N", "delta_N", "L_N",
                               "delta_H", "L_H", "gamma", "Gamma",
                               "Gamma0_leave", "Gamma0_retry", "lambda_f", "mu_r")
                   if k not in d]
        if missing:
            raise ScenarioError(f"missing model keys: {', '.join(missing)}", self.path)
        try:
            arrivals = validate_map(d["C0"], d["C_H"], d["C_N"],
                                    row_sum_tol=float(d.get("row_sum_tol", 1e-3)))
            service_new = validate_ph(d["delta_N"], d["L_N"], name="L_N")
            service_handoff = validate_ph(d["delta_H"], d["L_H"], name="L_H")
            retrial = validate_ph(d["gamma"], d["Gamma"], exit1=d["Gamma0_leave"],
                                  exit2=d["Gamma0_retry"], name="Gamma")
            return ModelParams(
                arrivals=arrivals,
                service_new=service_new,
                service_handoff=service_handoff,
                retrial=retrial,
                servers=int(d["S"]),
                guard=int(d["G"]),
                failure_rate=float(d["lambda_f"]),
                repair_rate=float(d["mu_r"]),
            )
        except ValidationError as exc:
            raise ScenarioError(str(exc), self.path) from exc

    def resolved_text(self) -> str:
        """Canonical re-serialization (after defaults) for replayable reports."""
        lines = []
        flat = {k: v for k, v in self.data.items() if k not in SECTIONS}
        flat.setdefault("epsilon", self.epsilon)
        flat.setdefault("backend", self.backend)
        flat.setdefault("strict_paper_blocks", self.strict_blocks)
        flat.setdefault("strict_paper_sums", self.strict_sums)
        for k in sorted(flat):
            lines.append(f"{k} = {_format_value(flat[k])}")
        for sec in sorted(SECTIONS & self.data.keys()):
            for k in sorted(self.data[sec]):
                lines.append(f"{sec}.{k} = {_format_value(self.data[sec][k])}")
        return "\n".join(lines) + "\n"


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple, np.ndarray)):
        arr = np.asarray(v)
        if arr.ndim == 1:
            return "[" + ", ".join(f"{x:.12g}" for x in arr) + "]"
        rows = ("[" + ", ".join(f"{x:.12g}" for x in row) + "]" for row in arr)
        return "[" + ", ".join(rows) + "]"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _parse_value(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_scenario_text(text: str, path: str | None = None) -> Scenario:
    data: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"expected 'key = value', got {raw!r}", path, lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        parsed = _parse_value(value)
        if "." in key:
            section, sub = key.split(".", 1)
            if section not in SECTIONS:
                raise ScenarioError(f"unknown section {section!r}", path, lineno)
            data.setdefault(section, {})[sub] = parsed
        else:
            if key not in MODEL_KEYS | SOLVER_KEYS:
                raise ScenarioError(f"unknown key {key!r}", path, lineno)
            data[key] = parsed
    return Scenario(data=data, path=path)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario_text(path.read_text(encoding="utf-8"), str(path))


def load_builtin(name: str = "baseline") -> Scenario:
    text = resources.files("retrialq.scenarios").joinpath(f"{name}.scenario").read_text("utf-8")
    return parse_scenario_text(text, f"builtin:{name}")


# ---------------------------------------------------------------------------
# Case transforms
# ---------------------------------------------------------------------------


def build_case(model: ModelParams, case: str) -> ModelParams:
    """Reduce the full model to one of the named comparison cases.

    I keeps everything; II swaps the retrial PH for a rate-matched
    exponential with the same abandonment/attempt split; III additionally
    swaps both service PHs for rate-matched exponentials; IV swaps the MAP
    for a rate-matched two-stream Poisson and the services for exponentials
    but keeps the PH retrials; V is Poisson with everything exponential.
    """
    case = case.upper()
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; expected one of {CASES}")
    if case == "I":
        return model
    theta = ph_fundamental_rate(model.retrial)
    leave_frac, _ = retrial_absorption_split(model.retrial)
    exp_retrial = exponential_retrial_ph(theta, leave_frac)
    exp_new = exponential_ph(ph_fundamental_rate(model.service_new))
    exp_handoff = exponential_ph(ph_fundamental_rate(model.service_handoff))
    lam_h, lam_n, _ = arrival_intensities(model.arrivals)
    poisson = poisson_map(lam_h, lam_n)
    if case == "II":
        return model.with_(retrial=exp_retrial)
    if case == "III":
        return model.with_(retrial=exp_retrial, service_new=exp_new,
                           service_handoff=exp_handoff)
    if case == "IV":
        return model.with_(arrivals=poisson, service_new=exp_new,
                           service_handoff=exp_handoff)
    return model.with_(arrivals=poisson, retrial=exp_retrial, service_new=exp_new,
                       service_handoff=exp_handoff)


# ---------------------------------------------------------------------------
# Sweep scaling
# ---------------------------------------------------------------------------


def sweep_scales(model: ModelParams, variable: str, value: float) -> RateScales:
    """RateScales moving the named intensity of ``model`` to ``value``.

    Arrival sweeps rescale the corresponding MAP block proportionally (the
    freed mass moves to the no-arrival diagonal); service/retrial sweeps
    rescale the PH time axis; failure/repair sweeps set the intensity.
    """
    if variable == "lambda_H":
        lam_h, _, _ = arrival_intensities(model.arrivals)
        return RateScales(arr_h=value / lam_h)
    if variable == "mu_N":
        return RateScales(svc_n=value / ph_fundamental_rate(model.service_new))
    if variable == "mu_H":
        return RateScales(svc_h=value / ph_fundamental_rate(model.service_handoff))
    if variable == "theta":
        return RateScales(retrial=value / ph_fundamental_rate(model.retrial))
    if variable == "lambda_f":
        return RateScales(failure_rate=value)
    if variable == "mu_r":
        return RateScales(repair_rate=value)
    raise ValueError(f"unknown sweep variable {variable!r}; expected one of {SWEEP_VARIABLES}")
