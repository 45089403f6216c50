import logging
import sys
try:
    # Helps show ANSI colors on Windows terminals and some TTY-less streams
    import colorama  # type: ignore
    colorama_available = True
except Exception:
    colorama_available = False

from linmarg.cli.handlers import run
from linmarg.config import get_settings


class ColoredFormatter(logging.Formatter):
    COLORS = {
        'DEBUG': '\x1b[36m',    # Cyan
        'INFO': '\x1b[32m',     # Green
        'WARNING': '\x1b[33m',  # Yellow
        'ERROR': '\x1b[31m',    # Red
        'CRITICAL': '\x1b[41m', # Red background
    }
    RESET = '\x1b[0m'

    def __init__(self, use_color: bool = True):
        super().__init__(fmt="%(asctime)s [%(levelname)s] %(message)s", datefmt="%H:%M:%S")
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        msg = super().format(record)
        color = self.COLORS.get(record.levelname, '') if self.use_color else ''
        if color:
            # Color only the [LEVEL] part
            msg = msg.replace(f"[{record.levelname}]", f"{color}[{record.levelname}]{self.RESET}", 1)
        return msg


def setup_logging(level: str) -> None:
    if colorama_available:
        try:
            colorama.just_fix_windows_console()
        except Exception:
            pass
    root = logging.getLogger()
    root.setLevel(level)
    # Clean existing handlers to avoid duplicate logs
    for h in list(root.handlers):
        root.removeHandler(h)
    ch = logging.StreamHandler(sys.stderr)
    ch.setFormatter(ColoredFormatter(use_color=sys.stderr.isatty()))
    root.addHandler(ch)

    # Executor callback noise from the scan pool
    logging.getLogger('concurrent.futures').setLevel(logging.WARNING)


def main(argv: list[str] | None = None) -> int:
    settings = get_settings()
    setup_logging(settings.log_level)
    return run(argv, settings)


if __name__ == "__main__":
    sys.exit(main())
