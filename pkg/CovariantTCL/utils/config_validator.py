"""
Configuration Validator
Checks a run configuration document and turns it into a RunConfig.
Every rejection carries the dotted field path and the line it sits on.
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml
from dotenv import load_dotenv

from ..solver.foliation import QUADRATURE_RULES, RELABELINGS, Foliation, flat_foliation, reparametrize
from ..solver.models import MODEL_BUILDERS, PAULI, PICTURES, ModelSpec, bloch_state, build_model
from .config import Tolerances, default_tolerances, load_config
from .exceptions import ConfigError, GridError
from .logger import setup_logger

logger = setup_logger(__name__)

TOP_LEVEL_KEYS = ("model", "foliation", "run", "tolerances")
MODEL_KEYS = ("name", "params", "picture", "rho0")
FOLIATION_KEYS = ("t0", "t1", "n", "quadrature", "relabel")


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated run configuration"""
    path: Path
    model: ModelSpec
    foliation: Foliation
    run: Dict[str, Any]
    tolerances: Tolerances
    lines: Dict[str, int] = field(default_factory=dict)

    def line_of(self, path: str) -> Optional[int]:
        return self.lines.get(path)

    # -- typed access to the free-form run section ---------------------------

    def _value(self, path: str, default: Any) -> Any:
        node = self.run
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def number(self, path: str, default: float) -> float:
        return _Checker(self.lines).number(self._value(path, default), f"run.{path}")

    def integer(self, path: str, default: int) -> int:
        return _Checker(self.lines).integer(self._value(path, default), f"run.{path}")

    def flag(self, path: str, default: bool) -> bool:
        value = self._value(path, default)
        if not isinstance(value, bool):
            _Checker(self.lines).fail(f"run.{path}", f"expected true or false, got {value!r}")
        return value

    def numbers(self, path: str, default: List[float]) -> List[float]:
        checker = _Checker(self.lines)
        values = self._value(path, default)
        if not isinstance(values, list) or not values:
            checker.fail(f"run.{path}", f"expected a non-empty list of numbers, got {values!r}")
        return [checker.number(v, f"run.{path}[{i}]") for i, v in enumerate(values)]

    def operator(self, path: str, default: str) -> np.ndarray:
        """A named Pauli operator or an explicit matrix"""
        checker = _Checker(self.lines)
        value = self._value(path, default)
        if isinstance(value, str):
            checker.choice(value, f"run.{path}", PAULI)
            return PAULI[value]
        return parse_matrix(value, f"run.{path}", checker)


def _index_lines(node, prefix: str = "", lines: Optional[Dict[str, int]] = None) -> Dict[str, int]:
    """Dotted key path -> 1-based line, from the composed YAML node tree"""
    lines = {} if lines is None else lines
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            lines[path] = key_node.start_mark.line + 1
            _index_lines(value_node, path, lines)
    elif isinstance(node, yaml.SequenceNode):
        for index, item in enumerate(node.value):
            path = f"{prefix}[{index}]"
            lines[path] = item.start_mark.line + 1
            _index_lines(item, path, lines)
    return lines


class _Checker:
    """Type checks against one parsed document, reporting field and line"""

    def __init__(self, lines: Dict[str, int]):
        self.lines = lines

    def fail(self, path: str, message: str):
        line = self.lines.get(path)
        while line is None and "." in path:
            path = path.rsplit(".", 1)[0]
            line = self.lines.get(path)
        raise ConfigError(message, field=path or None, line=line)

    def mapping(self, value: Any, path: str, allowed=None) -> Dict[str, Any]:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(path, f"expected an object, got {type(value).__name__}")
        if allowed is not None:
            for key in value:
                if key not in allowed:
                    self.fail(f"{path}.{key}" if path else str(key),
                              f"unknown key '{key}', expected one of {list(allowed)}")
        return value

    def number(self, value: Any, path: str) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
            self.fail(path, f"expected a finite number, got {value!r}")
        return float(value)

    def integer(self, value: Any, path: str) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
        return int(value)

    def choice(self, value: Any, path: str, options) -> str:
        if value not in options:
            self.fail(path, f"expected one of {list(options)}, got {value!r}")
        return value


def parse_matrix(value: Any, path: str, checker: _Checker) -> np.ndarray:
    """{"re": [[...]], "im": [[...]]}, a plain real nested list, or {"bloch": [x, y, z]}"""
    if isinstance(value, dict) and "bloch" in value:
        vector = value["bloch"]
        if not isinstance(vector, list) or len(vector) != 3:
            checker.fail(f"{path}.bloch", "expected a 3-component Bloch vector")
        return bloch_state(*[checker.number(x, f"{path}.bloch[{i}]") for i, x in enumerate(vector)])
    try:
        if isinstance(value, dict):
            checker.mapping(value, path, ("re", "im"))
            real = np.array(value.get("re", 0.0), dtype=float)
            imag = np.array(value.get("im", np.zeros_like(real)), dtype=float)
            matrix = real + 1j * imag
        else:
            matrix = np.array(value, dtype=complex)
    except (TypeError, ValueError) as exc:
        checker.fail(path, f"not a numeric matrix: {exc}")
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        checker.fail(path, f"expected a square matrix, got shape {matrix.shape}")
    return matrix


def _build_foliation(section: Dict[str, Any], checker: _Checker) -> Foliation:
    if "t1" not in section:
        checker.fail("foliation", "missing required key 't1'")
    if "n" not in section:
        checker.fail("foliation", "missing required key 'n'")
    t0 = checker.number(section.get("t0", 0.0), "foliation.t0")
    t1 = checker.number(section["t1"], "foliation.t1")
    n = checker.integer(section["n"], "foliation.n")
    quadrature = checker.choice(section.get("quadrature", "trapezoid"), "foliation.quadrature", QUADRATURE_RULES)
    try:
        f = flat_foliation(t0, t1, n, quadrature)
        relabel = section.get("relabel")
        if relabel is not None:
            checker.choice(relabel, "foliation.relabel", RELABELINGS)
            f = reparametrize(f, RELABELINGS[relabel])
    except GridError as exc:
        line = checker.lines.get("foliation.n") if n < 1 else checker.lines.get("foliation")
        location = f"[line {line}, field 'foliation'] " if line else ""
        raise GridError(f"{location}{exc}") from exc
    return f


def _build_model(section: Dict[str, Any], checker: _Checker) -> ModelSpec:
    if "name" not in section:
        checker.fail("model", "missing required key 'name'")
    name = checker.choice(section["name"], "model.name", MODEL_BUILDERS)
    params = dict(checker.mapping(section.get("params"), "model.params"))
    for key, value in params.items():
        if key == "n_trunc":
            params[key] = checker.integer(value, f"model.params.{key}")
        elif key == "beta" and value in ("inf", "infinity"):
            params[key] = float("inf")
        else:
            params[key] = checker.number(value, f"model.params.{key}")
    if "picture" in section:
        params["picture"] = checker.choice(section["picture"], "model.picture", PICTURES)
    if "rho0" in section:
        params["rho0"] = parse_matrix(section["rho0"], "model.rho0", checker)
    return build_model(name, params)


def validate_run_config(config_path) -> RunConfig:
    """
    Parse and validate a run configuration. Values come from the JSON parser;
    the YAML composer supplies node positions for diagnostics.
    """
    path = Path(config_path)
    logger.info(f"Validating run configuration {path}")
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc.msg}", line=exc.lineno) from exc
    try:
        lines = _index_lines(yaml.compose(text))
    except yaml.YAMLError as exc:
        logger.warning(f"No line information for {path}: {exc}")
        lines = {}

    checker = _Checker(lines)
    document = checker.mapping(document, "", TOP_LEVEL_KEYS)
    for key in ("model", "foliation"):
        if key not in document:
            checker.fail("", f"missing required section '{key}'")

    model = _build_model(checker.mapping(document["model"], "model", MODEL_KEYS), checker)
    foliation = _build_foliation(checker.mapping(document["foliation"], "foliation", FOLIATION_KEYS), checker)
    run = dict(checker.mapping(document.get("run"), "run"))

    overrides = checker.mapping(document.get("tolerances"), "tolerances", Tolerances.names())
    for key, value in overrides.items():
        checker.number(value, f"tolerances.{key}")
    tolerances = default_tolerances().merged(overrides)

    logger.info(f"Configuration valid: model={model.name}, n={foliation.n}, span={foliation.span:.6g}")
    return RunConfig(path, model, foliation, run, tolerances, lines)


def worker_count() -> int:
    """Worker pool size: TCL_NUM_THREADS from the environment (.env honoured), else hardware parallelism"""
    load_dotenv()
    default = (load_config().get("workers") or {}).get("default") or os.cpu_count() or 1
    raw = os.getenv("TCL_NUM_THREADS")
    if not raw:
        return int(default)
    try:
        value = int(raw)
        if value < 1:
            raise ValueError(raw)
        return value
    except ValueError:
        logger.warning(f"Ignoring invalid TCL_NUM_THREADS={raw!r}; using {default} workers")
        return int(default)
