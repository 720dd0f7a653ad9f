# ------------------------
# Experiment configuration
# ------------------------
"""
Settings come from CLI options layered over environment variables, which
``load_dotenv()`` may populate from a ``.env`` file.
"""
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from dotenv import load_dotenv

from .errors import PreconditionError

# ------------------------
# Load environment variables from .env
# ------------------------
load_dotenv()

DEFAULT_SEED = 0
DEFAULT_MAX_DENSE = 4_000_000
ECHO_FILE = "config.echo"


def _env_int(name, default):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise PreconditionError(f"{name}={raw!r} is not an integer") from exc


def default_seed():
    return _env_int("LORA_DP_SEED", DEFAULT_SEED)


def default_threads():
    """LORA_DP_THREADS, else the available parallelism."""
    threads = _env_int("LORA_DP_THREADS", None)
    if threads is None:
        threads = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    return max(int(threads or 1), 1)


def default_max_dense():
    return _env_int("LORA_DP_MAX_DENSE", DEFAULT_MAX_DENSE)


def default_log_level():
    return os.getenv("LORA_DP_LOG_LEVEL", "INFO").upper()


@dataclass(frozen=True)
class ExperimentConfig:
    """Full parameter set of one CLI run; ``echo()`` reproduces it."""

    command: str
    out: Path
    seed: int = DEFAULT_SEED
    threads: int = 1
    max_dense: int = DEFAULT_MAX_DENSE
    inputs: tuple = ()
    k_list: tuple = ()
    gamma: float | None = None
    sigma: float | None = None
    eps: float | None = None
    kappa: float | None = None
    trials: int | None = None
    options: dict = field(default_factory=dict)  # command-specific extras

    def items(self):
        values = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "options"}
        values.update({f"option.{key}": value for key, value in self.options.items()})
        return values

    def echo(self):
        """key=value lines sorted by key."""
        values = self.items()
        lines = []
        for key in sorted(values):
            value = values[key]
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key}={'' if value is None else value}")
        return "\n".join(lines) + "\n"

    def write_echo(self):
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / ECHO_FILE
        path.write_text(self.echo(), encoding="utf-8")
        return path
