import hashlib
import json
import logging
import math
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_VERSIONED_PACKAGES = ("linmarg", "numpy", "scipy")


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def package_versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in _VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def to_jsonable(value: Any) -> Any:
    """numpy-значения в обычные типы JSON; нечисловые float записываются строкой."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    if isinstance(value, Path):
        return str(value)
    return value


@dataclass
class RunReport:
    """
    Самодостаточный JSON-отчёт одного запуска: входы (хэши файлов, параметры),
    результаты, версии пакетов и seed. Хэш отчёта не зависит от времени создания.
    """

    command: str
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seed: int | None = None
    versions: dict = field(default_factory=package_versions)
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def add_input_file(self, key: str, path: str | Path, label: str | None = None) -> None:
        self.inputs[key] = {"path": label or str(path), "sha256": file_sha256(path)}

    def body(self) -> dict:
        return to_jsonable({
            "schema": SCHEMA_VERSION,
            "command": self.command,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "versions": self.versions,
        })

    def stable_hash(self) -> str:
        payload = json.dumps(self.body(), sort_keys=True, ensure_ascii=False, allow_nan=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        document = self.body()
        document["report_hash"] = self.stable_hash()
        document["created_at"] = self.created_at
        return json.dumps(document, indent=2, ensure_ascii=False, allow_nan=False)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        logger.info(f"Отчёт: записан {path}")
        return path
