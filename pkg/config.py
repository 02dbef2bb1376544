"""
Configuration settings for MACE matting
Typical parameter values, environment overrides and key = value config files
"""

import os
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import load_dotenv

from errors import ConfigError

# Load environment variables from .env file
load_dotenv()

# Logging configuration
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
LOG_FILE = os.getenv('LOG_FILE', 'mace.log')

# Output locations
OUTPUT_DIR = os.getenv('MACE_OUTPUT_DIR', 'output')
DEBUG_DIR = os.getenv('MACE_DEBUG_DIR') or None

# Execution
WORKERS = int(os.getenv('MACE_WORKERS', '1'))
PARALLEL_AGENTS = os.getenv('MACE_PARALLEL_AGENTS', 'NO') == 'YES'
TV_STRICT = os.getenv('MACE_TV_STRICT', 'YES') == 'YES'

# Agent 1: dual-layer closed-form matting
LAMBDA1 = float(os.getenv('MACE_LAMBDA1', '0.01'))
KAPPA = float(os.getenv('MACE_KAPPA', '30'))
THETA = float(os.getenv('MACE_THETA', '0.8'))
ETA = float(os.getenv('MACE_ETA', '0.1'))
EPS = float(os.getenv('MACE_EPS', '1e-7'))
CG_TOL = float(os.getenv('MACE_CG_TOL', '1e-6'))
CG_MAX_ITER = int(os.getenv('MACE_CG_MAX_ITER', '2000'))

# Agent 2: background estimator
LAMBDA2 = float(os.getenv('MACE_LAMBDA2', '2'))
GAMMA = float(os.getenv('MACE_GAMMA', '0.05'))
TAU_A = float(os.getenv('MACE_TAU_A', '0.01'))
TAU_THETA = float(os.getenv('MACE_TAU_THETA', '0.02'))
SIGMA_DELTA = float(os.getenv('MACE_SIGMA_DELTA', '10'))
HS = float(os.getenv('MACE_HS', '5'))
HR = float(os.getenv('MACE_HR', '5'))
BILATERAL_RADIUS = int(os.getenv('MACE_BILATERAL_RADIUS', '2'))
INTENSITY_SCALE = float(os.getenv('MACE_INTENSITY_SCALE', '255'))
FLOOD_TOL = float(os.getenv('MACE_FLOOD_TOL', '0.05'))
PLATE_SHIFT = int(os.getenv('MACE_PLATE_SHIFT', '1'))

# Agent 3: total variation denoiser
LAMBDA3 = float(os.getenv('MACE_LAMBDA3', '4'))
TV_INNER_TOL = float(os.getenv('MACE_TV_INNER_TOL', '1e-3'))
TV_INNER_MAX = int(os.getenv('MACE_TV_INNER_MAX', '2000'))
TEMPORAL_WINDOW = int(os.getenv('MACE_TEMPORAL_WINDOW', '5'))

# Consensus engine
TOL = float(os.getenv('MACE_TOL', '1e-4'))
MAX_ITER = int(os.getenv('MACE_MAX_ITER', '30'))
MANN_WEIGHT = float(os.getenv('MACE_MANN_WEIGHT', '1.0'))

# Evaluation
CONTOUR_TOL = int(os.getenv('MACE_CONTOUR_TOL', '2'))

AGENT_NAMES = ('matting', 'background', 'tv')


@dataclass(frozen=True)
class PipelineConfig:
    """All tunables of one matting run; field names are the config-file keys"""
    lambda1: float = LAMBDA1
    lambda2: float = LAMBDA2
    lambda3: float = LAMBDA3
    gamma: float = GAMMA
    tauA: float = TAU_A
    tauTheta: float = TAU_THETA
    sigma_delta: float = SIGMA_DELTA
    kappa: float = KAPPA
    theta: float = THETA
    hs: float = HS
    hr: float = HR
    bilateral_radius: int = BILATERAL_RADIUS
    intensity_scale: float = INTENSITY_SCALE
    flood_tol: float = FLOOD_TOL
    plate_shift: int = PLATE_SHIFT
    eta: float = ETA
    eps: float = EPS
    cg_tol: float = CG_TOL
    cg_max_iter: int = CG_MAX_ITER
    beta_spatial: Tuple[float, float, float] = (1.0, 1.0, 0.0)
    beta_temporal: Tuple[float, float, float] = (1.0, 1.0, 0.25)
    tv_inner_tol: float = TV_INNER_TOL
    tv_inner_max: int = TV_INNER_MAX
    tv_strict: bool = TV_STRICT
    temporal_window: int = TEMPORAL_WINDOW
    tol: float = TOL
    max_iter: int = MAX_ITER
    mann_weight: float = MANN_WEIGHT
    contour_tol: int = CONTOUR_TOL
    agents: Tuple[str, ...] = AGENT_NAMES
    downsample: int = 1
    workers: int = WORKERS
    parallel_agents: bool = PARALLEL_AGENTS
    debug_dir: Optional[str] = DEBUG_DIR

    def validate(self) -> 'PipelineConfig':
        """Check every range constraint; returns self so calls can chain"""
        positive = ('lambda1', 'lambda3', 'tauA', 'tauTheta', 'sigma_delta', 'kappa',
                    'hs', 'hr', 'intensity_scale', 'eta', 'eps', 'cg_tol',
                    'tv_inner_tol', 'tol')
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}", key=key)

        at_least_one = ('cg_max_iter', 'tv_inner_max', 'temporal_window', 'max_iter',
                        'downsample', 'workers')
        for key in at_least_one:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be at least 1, got {getattr(self, key)}", key=key)

        for key in ('lambda2', 'flood_tol', 'bilateral_radius', 'plate_shift', 'contour_tol'):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be nonnegative, got {getattr(self, key)}", key=key)

        if not 0 < self.theta < 1:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}", key='theta')
        if self.gamma >= 1 + self.lambda2:
            raise ConfigError(
                f"gamma must be below 1 + lambda2 = {1 + self.lambda2}, got {self.gamma}", key='gamma')
        if not 0 < self.mann_weight <= 1:
            raise ConfigError(f"mann_weight must lie in (0, 1], got {self.mann_weight}", key='mann_weight')

        for key in ('beta_spatial', 'beta_temporal'):
            beta = getattr(self, key)
            if len(beta) != 3 or any(b < 0 for b in beta):
                raise ConfigError(f"{key} needs three nonnegative weights, got {beta}", key=key)

        unknown = [a for a in self.agents if a not in AGENT_NAMES]
        if unknown:
            raise ConfigError(f"unknown agents {unknown}; choose from {list(AGENT_NAMES)}", key='agents')
        if not self.agents:
            raise ConfigError("at least one agent must stay enabled", key='agents')
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ('yes', 'true', '1', 'on'):
        return True
    if lowered in ('no', 'false', '0', 'off'):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key: str, text: str) -> Any:
    """Convert one textual value to the type of the matching PipelineConfig field"""
    defaults = {f.name: f.default for f in fields(PipelineConfig)}
    if key not in defaults:
        raise ConfigError(f"unknown configuration key '{key}'", key=key)

    default = defaults[key]
    text = text.strip()
    try:
        if key == 'agents':
            return tuple(part.strip() for part in text.split(',') if part.strip())
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(part) for part in text.split(','))
        return text or None
    except ValueError as e:
        raise ConfigError(f"bad value for '{key}': {e}", key=key) from e


def load_config_file(path: str, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Read a key = value file on top of base (defaults when omitted)"""
    overrides: Dict[str, Any] = {}
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e

    for number, raw in enumerate(lines, start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=number)
        key, value = (part.strip() for part in line.split('=', 1))
        try:
            overrides[key] = parse_value(key, value)
        except ConfigError as e:
            raise ConfigError(str(e), key=key, line=number) from e

    return merge_overrides(base or PipelineConfig(), overrides)


def merge_overrides(cfg: PipelineConfig, overrides: Mapping[str, Any]) -> PipelineConfig:
    """Apply overrides whose value is not None, then validate"""
    known = {f.name for f in fields(PipelineConfig)}
    changes = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown configuration key '{key}'", key=key)
        changes[key] = value
    return replace(cfg, **changes).validate()
