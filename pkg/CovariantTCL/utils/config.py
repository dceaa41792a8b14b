"""
Configuration management utilities
"""

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

import yaml


def load_config():
    """Load package defaults from config.yaml"""
    config_path = Path(__file__).parent.parent / "config.yaml"

    if not config_path.exists():
        # Try the parent directory
        config_path = Path(__file__).parent.parent.parent / "config.yaml"

    if config_path.exists():
        with open(config_path, 'r', encoding='utf-8') as f:
            return yaml.safe_load(f) or {}
    else:
        # Return default config if file doesn't exist
        return {
            'tolerances': {},
            'workers': {},
            'output': {},
        }


@dataclass(frozen=True)
class Tolerances:
    """Numerical acceptance thresholds shared by solver, oracle and CLI"""
    hermiticity: float = 1e-12
    state: float = 1e-10
    projector: float = 1e-12
    inverse_pairing: float = 1e-10
    composition: float = 1e-10
    trace: float = 1e-8
    row_trace_flag: float = 1e-6
    condition_max: float = 1e12
    positivity: float = 1e-3
    choi_min: float = -1e-6
    leakage: float = 1e-6
    oracle_agreement: float = 1e-4
    channel_consistency: float = 1e-10

    @classmethod
    def names(cls):
        return [f.name for f in fields(cls)]

    def merged(self, overrides: Optional[Dict[str, Any]]) -> "Tolerances":
        if not overrides:
            return self
        return replace(self, **{key: float(value) for key, value in overrides.items()})


def default_tolerances() -> Tolerances:
    """Tolerances from the packaged config.yaml, falling back to the dataclass defaults"""
    configured = load_config().get('tolerances') or {}
    known = {key: value for key, value in configured.items() if key in Tolerances.names()}
    return Tolerances().merged(known)


def float_format() -> str:
    return (load_config().get('output') or {}).get('float_format', '.16e')
