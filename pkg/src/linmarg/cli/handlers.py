import argparse
import logging
from functools import wraps
from pathlib import Path

import numpy as np

from linmarg import __version__
from linmarg.config import (
    CREDIBLE_QUANTILES,
    DEFAULT_CURVE_POINTS,
    DEFAULT_GRID_SIZE,
    DEFAULT_JOINT_SAMPLES,
    DEFAULT_OMEGA_MAX,
    DEFAULT_OMEGA_MIN,
    DEFAULT_POSTERIOR_SAMPLES,
    DEFAULT_VERIFY_CASES,
    PLOTTED_CURVES,
    Settings,
    get_settings,
)
from linmarg.data_manager.dataset import Dataset, load_dataset, resolve_data_path, write_table
from linmarg.data_manager.report import RunReport
from linmarg.errors import LinmargError, ValidationError, VerificationFailure
from linmarg.modules.gaussian_core import SpdFactor, sample
from linmarg.modules.models import DesignSpec, model_curve
from linmarg.modules.refactor import LinearGaussianModel, refactor
from linmarg.modules.sampling import (
    frequency_scan,
    joint_posterior_samples,
    rejection_sample_omega,
    scan_summary,
)

logger = logging.getLogger(__name__)


# --- argument helpers ---
def parse_float_list(text: str, name: str) -> np.ndarray:
    try:
        values = [float(part) for part in text.replace(";", ",").split(",") if part.strip()]
    except ValueError:
        raise ValidationError(f"{name}: ожидался список чисел через запятую, получено {text!r}") from None
    if not values or not all(np.isfinite(values)):
        raise ValidationError(f"{name}: ожидался непустой список конечных чисел, получено {text!r}")
    return np.array(values)


def parse_prior_precision(text: str, k: int) -> np.ndarray:
    """
    --prior-var: список K дисперсий (диагональная Lambda) или путь к CSV
    с полной K x K матрицей ковариации. Возвращает Lambda^-1.
    """
    path = Path(text)
    if path.suffix.lower() == ".csv" or path.is_file():
        if not path.is_file():
            raise ValidationError(f"--prior-var: файл не найден: {path}")
        try:
            cov = np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
        except ValueError as e:
            raise ValidationError(f"--prior-var: не удалось прочитать матрицу из {path}: {e}") from None
        if cov.shape != (k, k):
            raise ValidationError(f"--prior-var: ожидалась матрица {k}x{k}, получена {cov.shape}")
        return SpdFactor(cov, "prior covariance").inverse()
    variances = parse_float_list(text, "--prior-var")
    if variances.shape[0] != k:
        raise ValidationError(f"--prior-var: ожидалось {k} дисперсий, получено {variances.shape[0]}")
    if np.any(variances <= 0.0):
        raise ValidationError("--prior-var: все дисперсии должны быть положительными")
    return np.diag(1.0 / variances)


def parse_prior(args: argparse.Namespace, k: int) -> tuple[np.ndarray, np.ndarray]:
    mu = parse_float_list(args.prior_mean, "--prior-mean")
    if mu.shape[0] != k:
        raise ValidationError(f"--prior-mean: ожидалось {k} значений, получено {mu.shape[0]}")
    if getattr(args, "improper_prior", False):
        return mu, np.zeros((k, k))
    if not args.prior_var:
        raise ValidationError("нужен --prior-var (или --improper-prior)")
    return mu, parse_prior_precision(args.prior_var, k)


def dense_x_grid(x: np.ndarray, points: int) -> np.ndarray:
    if points < 2:
        raise ValidationError(f"--curve-points должно быть >= 2, получено {points}")
    lo, hi = float(np.min(x)), float(np.max(x))
    pad = 0.1 * (hi - lo) if hi > lo else 1.0
    return np.linspace(lo - pad, hi + pad, points)


def _output_dir(raw: str) -> Path:
    out = Path(raw)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ValidationError(f"--out: не удалось создать каталог {out}: {e}") from None
    return out


def _base_report(command: str, args: argparse.Namespace, data: Dataset, seed: int | None) -> RunReport:
    report = RunReport(command=command, seed=seed)
    report.add_input_file("data", resolve_data_path(args.data), label=args.data)
    config = {k: v for k, v in vars(args).items() if k not in ("handler", "data", "out", "verbose")}
    report.inputs["config"] = config
    report.inputs["n_data"] = len(data)
    return report


# --- error boundary ---
def cli_command(f):
    """Переводит типизированные ошибки в код возврата и одну строку в stderr."""

    @wraps(f)
    def decorated(args: argparse.Namespace, settings: Settings) -> int:
        try:
            return f(args, settings)
        except LinmargError as e:
            numerical = e.exit_code == 3
            logger.error(f"{args.command}: {type(e).__name__}: {e}", exc_info=numerical)
            return e.exit_code

    return decorated


# --- commands ---
@cli_command
def cmd_fit_linear(args: argparse.Namespace, settings: Settings) -> int:
    seed = settings.seed if args.seed is None else args.seed
    data = load_dataset(args.data)
    if args.model == "polynomial":
        spec = DesignSpec.polynomial(args.degree)
    else:
        if args.omega is None:
            raise ValidationError("--model sinusoid требует --omega")
        spec = DesignSpec.sinusoid(args.omega)
    mu, prior_precision = parse_prior(args, spec.n_params)
    model = LinearGaussianModel(spec.build(data.x), data.noise(), mu, prior_precision)
    result = refactor(model, data.y, method=args.method)
    posterior = result.posterior()
    out = _output_dir(args.out)

    x_grid = dense_x_grid(data.x, args.curve_points)
    grid_design = spec.build(x_grid)
    curve = {"x": x_grid, "map": model_curve(grid_design, posterior.mean)}
    files = []
    if args.samples > 0:
        draws = sample(posterior, args.samples, seed)
        files.append(write_table(out / "samples.csv", dict(zip(spec.column_names, draws.T))))
        band = np.percentile(model_curve(grid_design, draws), CREDIBLE_QUANTILES, axis=0)
        curve["lo68"], curve["hi68"] = band[0], band[1]
    files.append(write_table(out / "fit_curve.csv", curve))

    report = _base_report("fit-linear", args, data, seed)
    report.outputs = {
        "columns": list(spec.column_names),
        "posterior_mean": posterior.mean,
        "posterior_cov": posterior.cov,
        "log_marginal": result.marginal.to_json(),
        "evaluation_path": result.method,
        "files": [p.name for p in files],
    }
    report.write(out / "posterior.json")
    means = ", ".join(f"{name}={value:.4f}" for name, value in zip(spec.column_names, posterior.mean))
    logger.info(f"Подгонка: MAP {means}; маргинал {'определён' if result.marginal.defined else 'не определён'}")
    return 0


def _scan_from_args(args: argparse.Namespace, settings: Settings):
    data = load_dataset(args.data)
    spec = DesignSpec.sinusoid(1.0)
    mu, prior_precision = parse_prior(args, spec.n_params)
    threads = args.threads or settings.threads
    scan = frequency_scan(
        data, mu, prior_precision, lo=args.omega_min, hi=args.omega_max, n_grid=args.grid, threads=threads
    )
    return data, mu, prior_precision, scan


def _rescaled(values: np.ndarray) -> np.ndarray:
    # exp(v - max v); the maximum becomes exactly 1.0
    return np.exp(values - np.max(values))


@cli_command
def cmd_scan_frequency(args: argparse.Namespace, settings: Settings) -> int:
    data, _, _, scan = _scan_from_args(args, settings)
    out = _output_dir(args.out)
    path = write_table(out / "scan.csv", {
        "omega": scan.omegas,
        "log_marginal": scan.log_marginal,
        "log_prior": scan.log_prior,
        "log_post_unnorm": scan.log_post_unnorm,
        "marginal_rescaled": _rescaled(scan.log_marginal),
        "post_rescaled": _rescaled(scan.log_post_unnorm),
    })
    summary = scan_summary(scan)
    report = _base_report("scan-frequency", args, data, seed=None)
    report.outputs = {"summary": summary, "files": [path.name]}
    report.write(out / "scan.json")
    logger.info(f"Скан: максимум апостериорной плотности при omega={summary['omega_map']:.6g}")
    return 0


@cli_command
def cmd_sample(args: argparse.Namespace, settings: Settings) -> int:
    seed = settings.seed if args.seed is None else args.seed
    omega_seed, theta_seed, subset_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(3))
    data, mu, prior_precision, scan = _scan_from_args(args, settings)
    draws = rejection_sample_omega(scan, args.samples, omega_seed)
    joint = joint_posterior_samples(
        data, mu, prior_precision, draws, theta_seed, lo=args.omega_min, hi=args.omega_max
    )
    out = _output_dir(args.out)
    files = [write_table(out / "joint_samples.csv", dict(zip(joint.columns, joint.rows.T)))]
    files.append(write_table(out / "projection.csv", {"alpha": joint.theta[:, 0], "ln_omega": np.log(joint.omegas)}))

    n_curves = min(PLOTTED_CURVES, len(joint))
    subset = np.sort(np.random.default_rng(subset_seed).choice(len(joint), size=n_curves, replace=False))
    x_grid = dense_x_grid(data.x, args.curve_points)
    ids, xs, ys = [], [], []
    for curve_id, row in enumerate(subset):
        design = DesignSpec.sinusoid(joint.omegas[row]).build(x_grid)
        ids.extend([curve_id] * x_grid.shape[0])
        xs.extend(x_grid)
        ys.extend(model_curve(design, joint.theta[row]))
    files.append(write_table(out / "curves.csv", {"curve_id": ids, "x": xs, "y": ys}))

    report = _base_report("sample", args, data, seed)
    report.outputs = {
        "scan_summary": scan_summary(scan),
        "accepted": joint.accepted,
        "proposals": joint.proposals,
        "acceptance_rate": draws.acceptance_rate,
        "curve_rows": subset,
        "files": [p.name for p in files],
    }
    report.write(out / "sample.json")
    return 0


@cli_command
def cmd_verify(args: argparse.Namespace, settings: Settings) -> int:
    from linmarg.cli.verify_suite import format_results, run_verify

    seed = settings.seed if args.seed is None else args.seed
    target = parse_float_list(args.exercise1_target, "--exercise1-target") if args.exercise1_target else None
    if target is not None and target.shape[0] != 3:
        raise ValidationError("--exercise1-target: ожидалось 3 значения")
    results = run_verify(seed=seed, cases=args.cases, exercise1_target=target)
    print(format_results(results))
    failed = [r for r in results if not r.passed]
    if failed:
        first = failed[0]
        raise VerificationFailure(f"свойство {first.name!r} ({first.criterion}) не выполнено: {first.detail}; "
                                  f"входные данные: {first.dump()}")
    logger.info(f"Проверка: все {len(results)} свойств выполнены")
    return 0


# --- parser ---
def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV с заголовком x,y,sigma_y или fixture:exercise1|exercise2")
    p.add_argument("--prior-mean", required=True, help="список через запятую")
    p.add_argument("--prior-var", help="список дисперсий через запятую или CSV с матрицей ковариации")
    p.add_argument("--out", required=True, help="каталог для результатов")
    p.add_argument("--curve-points", type=int, default=DEFAULT_CURVE_POINTS)


def _add_scan_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=["sinusoid"], default="sinusoid")
    p.add_argument("--omega-min", type=float, default=DEFAULT_OMEGA_MIN)
    p.add_argument("--omega-max", type=float, default=DEFAULT_OMEGA_MAX)
    p.add_argument("--grid", type=int, default=DEFAULT_GRID_SIZE)
    p.add_argument("--threads", type=int, default=0, help="0 = из LINMARG_THREADS")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linmarg", description="Маргинализация линейных параметров гауссовых моделей")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="подробный лог (DEBUG)")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit-linear", help="апостериорное распределение линейной модели")
    _add_data_args(fit)
    fit.add_argument("--model", choices=["polynomial", "sinusoid"], default="polynomial")
    fit.add_argument("--degree", type=int, default=2)
    fit.add_argument("--omega", type=float)
    fit.add_argument("--improper-prior", action="store_true", help="Lambda^-1 = 0")
    fit.add_argument("--method", choices=["auto", "woodbury", "dense"], default="auto")
    fit.add_argument("--samples", type=int, default=DEFAULT_POSTERIOR_SAMPLES)
    fit.add_argument("--seed", type=int)
    fit.set_defaults(handler=cmd_fit_linear)

    scan = sub.add_parser("scan-frequency", help="ln p(y|omega) на логарифмической сетке частот")
    _add_data_args(scan)
    _add_scan_args(scan)
    scan.set_defaults(handler=cmd_scan_frequency)

    smp = sub.add_parser("sample", help="совместные выборки (alpha, beta, gamma, omega)")
    _add_data_args(smp)
    _add_scan_args(smp)
    smp.add_argument("--samples", type=int, default=DEFAULT_JOINT_SAMPLES)
    smp.add_argument("--seed", type=int)
    smp.set_defaults(handler=cmd_sample)

    ver = sub.add_parser("verify", help="проверка свойств на случайных задачах и встроенных данных")
    ver.add_argument("--seed", type=int)
    ver.add_argument("--cases", type=int, default=DEFAULT_VERIFY_CASES)
    ver.add_argument("--exercise1-target", help="ожидаемый MAP для exercise1, три числа через запятую")
    ver.set_defaults(handler=cmd_verify)
    return parser


def run(argv: list[str] | None = None, settings: Settings | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = settings or get_settings()
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    if getattr(args, "samples", 1) < 0 or getattr(args, "cases", 0) < 0:
        parser.error("--samples и --cases не могут быть отрицательными")
    logger.debug(f"Команда {args.command}, потоков {settings.threads}, seed по умолчанию {settings.seed}")
    return args.handler(args, settings)
