import csv
import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.typing import NDArray

from linmarg.errors import ParseError, ValidationError
from linmarg.modules.refactor import NoiseSpec

logger = logging.getLogger(__name__)

HEADER = ("x", "y", "sigma_y")
FIXTURE_PREFIX = "fixture:"
FIXTURES = ("exercise1", "exercise2")


@dataclass(frozen=True, eq=False)
class Dataset:
    x: NDArray
    y: NDArray
    sigma_y: NDArray
    source: str = ""

    def __post_init__(self):
        arrays = [np.array(v, dtype=float) for v in (self.x, self.y, self.sigma_y)]
        if any(a.ndim != 1 for a in arrays) or len({a.shape[0] for a in arrays}) != 1:
            raise ValidationError("x, y и sigma_y должны быть векторами одинаковой длины")
        if arrays[0].shape[0] == 0:
            raise ValidationError("набор данных пуст")
        for name, arr in zip(HEADER, arrays):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name}: содержит нечисловые значения")
            arr.flags.writeable = False
        if np.any(arrays[2] <= 0.0):
            raise ValidationError("sigma_y: все значения должны быть положительными")
        for name, arr in zip(HEADER, arrays):
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.x.shape[0]

    def noise(self) -> NoiseSpec:
        return NoiseSpec.from_sigmas(self.sigma_y)


def fixture_path(name: str) -> Path:
    """Путь к встроенному набору данных (exercise1, exercise2)."""
    if name not in FIXTURES:
        raise ValidationError(f"неизвестный встроенный набор {name!r}, доступны: {', '.join(FIXTURES)}")
    return Path(str(resources.files("linmarg.data_manager") / "fixtures" / f"{name}.csv"))


def resolve_data_path(path: str | Path) -> Path:
    raw = str(path)
    if raw.startswith(FIXTURE_PREFIX):
        return fixture_path(raw[len(FIXTURE_PREFIX):])
    return Path(raw)


def _parse_number(raw: str, line: int, column: int) -> float:
    try:
        return float(raw.strip())
    except ValueError:
        raise ParseError(f"не удалось прочитать число {raw!r}", line=line, column=column) from None


def load_dataset(path: str | Path) -> Dataset:
    """
    Читает CSV с заголовком x,y,sigma_y (UTF-8, разделитель строк LF или CRLF).
    Порядок строк сохраняется; пустые строки пропускаются.
    """
    file_path = resolve_data_path(path)
    if not file_path.is_file():
        raise ValidationError(f"файл данных не найден: {file_path}")

    xs, ys, sigmas = [], [], []
    with open(file_path, newline="", encoding="utf-8-sig") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ParseError("пустой файл, ожидался заголовок x,y,sigma_y", line=1)
        if tuple(h.strip() for h in header) != HEADER:
            raise ParseError(f"заголовок {','.join(header)!r}, ожидался x,y,sigma_y", line=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(HEADER):
                raise ParseError(f"ожидалось 3 значения, получено {len(row)}", line=line,
                                 column=min(len(row), len(HEADER)) + 1)
            x, y, s = (_parse_number(cell, line, col) for col, cell in enumerate(row, start=1))
            if not all(math.isfinite(v) for v in (x, y, s)):
                raise ValidationError(f"строка {line}: нечисловое значение")
            if s <= 0.0:
                raise ValidationError(f"строка {line}: sigma_y должна быть > 0, получено {s}")
            xs.append(x)
            ys.append(y)
            sigmas.append(s)

    if not xs:
        raise ValidationError(f"{file_path}: нет строк с данными")
    logger.info(f"Данные: {len(xs)} точек из {file_path.name}")
    return Dataset(np.array(xs), np.array(ys), np.array(sigmas), source=str(path))


def format_float(value: float) -> str:
    # 17 significant digits reproduce any double exactly
    return format(float(value), ".17g")


def write_table(path: str | Path, columns: dict[str, Iterable]) -> Path:
    """Пишет столбцы одинаковой длины в CSV с заголовком. Числа с 17 значащими цифрами."""
    path = Path(path)
    names = list(columns)
    values = [list(v) for v in columns.values()]
    lengths = {len(v) for v in values}
    if len(lengths) > 1:
        raise ValidationError(f"{path.name}: столбцы разной длины {sorted(lengths)}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*values):
            writer.writerow(
                [v if isinstance(v, (str, int, np.integer)) else format_float(v) for v in row]
            )
    logger.debug(f"Данные: записан {path} ({lengths.pop() if lengths else 0} строк)")
    return path


def write_dataset(path: str | Path, dataset: Dataset) -> Path:
    return write_table(path, {"x": dataset.x, "y": dataset.y, "sigma_y": dataset.sigma_y})
