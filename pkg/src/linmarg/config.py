import logging
import os
from dataclasses import dataclass

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

# Frequency domain and grid for the sinusoid scan
DEFAULT_OMEGA_MIN = 0.1
DEFAULT_OMEGA_MAX = 100.0
DEFAULT_GRID_SIZE = 16384
SCAN_CHUNK_SIZE = 1024

# Rejection sampler
ENVELOPE_MARGIN_NATS = 0.1
MAX_PROPOSALS = 10**9
PROPOSAL_BATCH = 65536

# Default sample counts
DEFAULT_POSTERIOR_SAMPLES = 4096
DEFAULT_JOINT_SAMPLES = 512
PLOTTED_CURVES = 64
DEFAULT_CURVE_POINTS = 256
CREDIBLE_QUANTILES = (16.0, 84.0)

# Tensors whose relative asymmetry exceeds this are rejected, below it they are averaged
SYMMETRY_RTOL = 1e-8

DEFAULT_VERIFY_CASES = 200

_TRUE_VALUES = ('1', 'true', 'yes', 'on')


@dataclass(frozen=True)
class Settings:
    threads: int
    log_level: str
    seed: int


def resolve_threads(raw: int) -> int:
    """0 означает «автоматически»: число логических ядер."""
    if raw > 0:
        return raw
    try:
        import psutil  # type: ignore

        count = psutil.cpu_count(logical=True)
    except Exception:
        count = None
    return int(count or os.cpu_count() or 1)


def _int_from_env(name: str, default: int) -> int:
    raw = (os.getenv(name) or '').strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Настройки: {name}={raw!r} не является целым числом, используется {default}")
        return default
    if value < 0:
        logger.warning(f"Настройки: {name}={value} отрицательно, используется {default}")
        return default
    return value


def env_flag(name: str) -> bool:
    return (os.getenv(name) or '').strip().lower() in _TRUE_VALUES


def get_settings() -> Settings:
    load_dotenv(override=False)
    threads = resolve_threads(_int_from_env('LINMARG_THREADS', 0))
    level = (os.getenv('LINMARG_LOG_LEVEL') or 'INFO').strip().upper()
    if level not in logging.getLevelNamesMapping():
        logger.warning(f"Настройки: неизвестный уровень логирования {level!r}, используется INFO")
        level = 'INFO'
    if env_flag('LINMARG_DEBUG'):
        level = 'DEBUG'
    return Settings(threads=threads, log_level=level, seed=_int_from_env('LINMARG_SEED', 0))
