"""Batch front-end: configs in, CSV (and optional static plots) out.

Grid points are independent work items; sweeps along the sample-complexity
axis warm-start sequentially inside a work group, and groups run in parallel.
Output rows are sorted on a fixed key so worker counts never change the file.
"""

import argparse
import concurrent.futures
import math
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from itertools import product

import numpy as np

from . import bayes_optimal as bo
from . import rates as rates_mod
from . import simulation as sim
from . import state_evolution as se
from .config import (
    GRID_AXES,
    ExperimentConfig,
    contamination_of,
    parse_config,
    point_laws,
    point_loss,
    problem_spec,
)
from .errors import ConfigError, HdRobustError, NotConverged, RootNotBracketed

__all__ = ["main", "run", "optimize_hyperparams", "OptimizeResult"]

CSV_COLUMNS = (
    "mode,alpha,lambda,delta,eps_c,eps_n,m,q,v,eps_est,eps_gen,eps_train,angle,"
    "eps_bo,converged,iters,seed,source"
)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# hyperparameter optimisation


@dataclass(frozen=True)
class OptimizeResult:
    lambda_star: float
    delta_star: float
    eps_star: float
    local_minima: tuple  # ((lambda, delta, eps), ...) every refined local minimum
    landscape_axes: dict  # free parameter name -> grid values
    landscape: np.ndarray  # eps_est over the coarse grid (nan where skipped)
    skipped: tuple  # grid points whose solve did not converge


def _spec_at(base: se.ProblemSpec, lam=None, delta=None) -> se.ProblemSpec:
    loss = base.loss
    if lam is not None:
        loss = replace(loss, ridge=float(lam))
    if delta is not None:
        loss = replace(loss, delta=float(delta))
    return replace(base, loss=loss)


def _eps_of(spec: se.ProblemSpec, cfg: se.SolverConfig, warm: dict) -> float:
    if spec.loss.square_like and spec.n_clusters == 1 and spec.centered:
        try:
            return se.stieltjes_form_solve(spec, cfg).eps_est
        except RootNotBracketed:
            return math.nan
    try:
        sol = se.solve(spec, replace(cfg, raise_on_fail=True), init=warm.get("params"))
    except NotConverged:
        warm.pop("params", None)
        return math.nan
    warm["params"] = sol.params
    return sol.eps_est


def _golden_min(fun, lo: float, hi: float, iters: int = 60) -> tuple[float, float]:
    """Golden-section minimisation of fun on the log-axis [lo, hi]."""
    a, b = math.log(lo), math.log(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(math.exp(c)), fun(math.exp(d))
    for _ in range(iters):
        if b - a < 1e-7:
            break
        if not math.isnan(fd) and (math.isnan(fc) or fc > fd):
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(math.exp(d))
        else:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(math.exp(c))
    candidates = [(fc, math.exp(c)), (fd, math.exp(d))]
    candidates = [(f, x) for f, x in candidates if not math.isnan(f)]
    if not candidates:
        return math.nan, math.exp(0.5 * (a + b))
    f, x = min(candidates)
    return f, x


def optimize_hyperparams(
    base: se.ProblemSpec,
    free: tuple[str, ...],
    bounds: dict,
    grid_points: int = 25,
    solver_cfg: se.SolverConfig | None = None,
) -> OptimizeResult:
    """Coarse log-grid scan followed by golden-section refinement around every
    local minimum of eps_est; ties break toward smaller delta, then smaller lambda."""
    cfg = solver_cfg or se.SolverConfig()
    for p in free:
        if p not in ("lambda", "delta"):
            raise ValueError(f"free parameters are lambda/delta, got {p!r}")
        if p not in bounds:
            raise ValueError(f"missing bounds for {p!r}")
    if "delta" in free and base.loss.kind != "huber":
        raise ValueError("delta is only free for the huber loss")
    axes = {p: np.geomspace(bounds[p][0], bounds[p][1], grid_points) for p in free}
    warm: dict = {}
    skipped = []

    def eval_point(lam=None, delta=None) -> float:
        eps = _eps_of(_spec_at(base, lam, delta), cfg, warm)
        if math.isnan(eps):
            skipped.append({"lambda": lam, "delta": delta})
        return eps

    if len(free) == 1:
        p = free[0]
        grid = axes[p]
        key = "lam" if p == "lambda" else "delta"
        eps = np.array([eval_point(**{key: g}) for g in grid])
        minima_idx = _local_minima_1d(eps)
        refined = []
        for i in minima_idx:
            lo = grid[max(i - 1, 0)]
            hi = grid[min(i + 1, len(grid) - 1)]
            if lo == hi:
                refined.append((eps[i], grid[i]))
                continue
            f, x = _golden_min(lambda u: eval_point(**{("lam" if p == "lambda" else "delta"): u}), lo, hi)
            refined.append(min((f, x), (eps[i], grid[i])))
        minima = []
        for f, x in refined:
            lam = x if p == "lambda" else base.loss.ridge
            dlt = x if p == "delta" else base.loss.delta
            minima.append((lam, dlt, f))
        landscape = eps
    else:
        lam_grid, dlt_grid = axes["lambda"], axes["delta"]
        eps = np.full((len(lam_grid), len(dlt_grid)), math.nan)
        for i, lam in enumerate(lam_grid):
            for j, dlt in enumerate(dlt_grid):
                eps[i, j] = eval_point(lam=lam, delta=dlt)
        minima = []
        for i, j in _local_minima_2d(eps):
            lam, dlt, val = lam_grid[i], dlt_grid[j], eps[i, j]
            for _ in range(3):  # coordinate golden-section passes
                lo = lam_grid[max(i - 1, 0)]
                hi = lam_grid[min(i + 1, len(lam_grid) - 1)]
                if lo < hi:
                    f, lam_new = _golden_min(lambda u: eval_point(lam=u, delta=dlt), lo, hi)
                    if not math.isnan(f) and f <= val:
                        val, lam = f, lam_new
                lo = dlt_grid[max(j - 1, 0)]
                hi = dlt_grid[min(j + 1, len(dlt_grid) - 1)]
                if lo < hi:
                    f, dlt_new = _golden_min(lambda u: eval_point(lam=lam, delta=u), lo, hi)
                    if not math.isnan(f) and f <= val:
                        val, dlt = f, dlt_new
            minima.append((lam, dlt, val))
        landscape = eps
    minima = [m for m in minima if not math.isnan(m[2])]
    if not minima:
        raise NotConverged("no grid point of the hyperparameter scan converged", solution=None)
    best = min(minima, key=lambda t: (t[2], t[1], t[0]))
    return OptimizeResult(
        lambda_star=best[0],
        delta_star=best[1],
        eps_star=best[2],
        local_minima=tuple(sorted(minima, key=lambda t: (t[1], t[0]))),
        landscape_axes={p: axes[p] for p in free},
        landscape=landscape,
        skipped=tuple(skipped),
    )


def _local_minima_1d(eps: np.ndarray) -> list[int]:
    idx = []
    n = len(eps)
    for i in range(n):
        if math.isnan(eps[i]):
            continue
        left = eps[i - 1] if i > 0 else math.inf
        right = eps[i + 1] if i < n - 1 else math.inf
        left = math.inf if math.isnan(left) else left
        right = math.inf if math.isnan(right) else right
        if eps[i] <= left and eps[i] < right or (eps[i] < left and eps[i] <= right):
            idx.append(i)
    return idx


def _local_minima_2d(eps: np.ndarray) -> list[tuple[int, int]]:
    out = []
    n, m = eps.shape
    for i in range(n):
        for j in range(m):
            if math.isnan(eps[i, j]):
                continue
            neigh = []
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if 0 <= a < n and 0 <= b < m and not math.isnan(eps[a, b]):
                    neigh.append(eps[a, b])
            if all(eps[i, j] <= v for v in neigh) and any(eps[i, j] < v for v in neigh) or not neigh:
                out.append((i, j))
    return out


# ---------------------------------------------------------------------------
# grid assembly and per-point execution


def _grid_points(config: ExperimentConfig) -> list[dict]:
    axes, values = [], []
    for axis in GRID_AXES:
        if axis in config.grids:
            axes.append(axis)
            values.append(config.grids[axis])
    if not axes:
        return [{}]
    return [dict(zip(axes, combo)) for combo in product(*values)]


def _point_meta(config: ExperimentConfig, point: dict, spec: se.ProblemSpec) -> dict:
    return {
        "mode": config.mode,
        "alpha": spec.alpha,
        "lambda": spec.loss.ridge,
        "delta": spec.loss.delta if spec.loss.kind == "huber" else math.nan,
        "eps_c": point.get("eps_c", contamination_of(spec.clusters[0].scale_law)),
        "eps_n": point.get("eps_n", contamination_of(spec.noise)),
    }


def _blank_row(meta: dict) -> dict:
    row = dict(meta)
    row.update(
        m=math.nan, q=math.nan, v=math.nan, eps_est=math.nan, eps_gen=math.nan,
        eps_train=math.nan, angle=math.nan, eps_bo=math.nan, converged=False,
        iters=0, seed=-1, source="theory",
    )
    return row


def _theory_row(config, point, warm, solver_cfg=None) -> dict:
    spec = problem_spec(config, point)
    meta = _point_meta(config, point, spec)
    row = _blank_row(meta)
    cfg = solver_cfg or se.SolverConfig(raise_on_fail=False)
    try:
        if spec.loss.square_like and spec.centered and spec.n_clusters == 1:
            try:
                sol = se.stieltjes_form_solve(spec, cfg)
            except RootNotBracketed:
                sol = se.solve(spec, cfg)
        else:
            sol = se.solve(spec, cfg, init=warm.get("params"))
            if sol.converged:
                warm["params"] = sol.params
    except HdRobustError:
        return row
    row.update(
        m=sol.params.m, q=sol.params.q, v=sol.params.v,
        eps_est=sol.eps_est, eps_gen=sol.eps_gen, eps_train=sol.eps_train,
        angle=sol.angle, converged=sol.converged, iters=sol.iterations,
    )
    return row


def _bayes_row(config, point) -> dict:
    cov_law, noise = point_laws(config, point)
    alpha = point.get("alpha", config.alpha)
    loss = point_loss(config, point)
    meta = {
        "mode": config.mode,
        "alpha": alpha,
        "lambda": loss.ridge,
        "delta": loss.delta if loss.kind == "huber" else math.nan,
        "eps_c": point.get("eps_c", contamination_of(cov_law)),
        "eps_n": point.get("eps_n", contamination_of(noise)),
    }
    row = _blank_row(meta)
    row["source"] = "bayes"
    try:
        sol = bo.solve_bo(alpha, config.beta_star_sq, cov_law, noise, raise_on_fail=False)
    except HdRobustError:
        return row
    row.update(m=sol.q, q=sol.q, eps_bo=sol.eps_bo, converged=sol.converged, iters=sol.iterations)
    return row


def _simulation_rows(config, point) -> list[dict]:
    spec = problem_spec(config, point)
    meta = _point_meta(config, point, spec)
    d = config.sim_d
    n = max(1, round(spec.alpha * d))
    rows = []
    for k in range(config.sim_seeds):
        ds_spec = sim.DatasetSpec.single(
            n=n, d=d, scale_law=spec.clusters[0].scale_law, noise=spec.noise,
            seed=sim.replica_seed(config.seed, k), beta_star_sq=config.beta_star_sq,
        )
        dataset = sim.generate(ds_spec)
        row = _blank_row(meta)
        row.update(source="simulation", seed=k)
        try:
            if config.loss_kind == "square":
                res = sim.ridge_solve(dataset, spec.loss.ridge)
            elif config.loss_kind == "lad":
                res = sim.lad_solve(dataset, spec.loss.ridge)
            else:
                res = sim.huber_solve(dataset, spec.loss.ridge, spec.loss.delta)
        except (NotConverged, HdRobustError):
            rows.append(row)
            continue
        row.update(
            m=float(np.dot(res.coef, dataset.teacher)) / d,
            q=float(np.dot(res.coef, res.coef)) / d,
            eps_est=res.eps_est, eps_train=res.train_loss, angle=res.angle,
            converged=res.converged, iters=res.iterations,
        )
        rows.append(row)
    return rows


def _optimize_rows(config, point) -> list[dict]:
    spec = problem_spec(config, point)
    bounds = dict(config.opt_bounds)
    result = optimize_hyperparams(spec, config.opt_params, bounds, config.opt_grid_points)
    rows = []
    if len(config.opt_params) == 1:
        p = config.opt_params[0]
        for value, eps in zip(result.landscape_axes[p], result.landscape):
            sub = dict(point)
            sub[p if p != "lambda" else "lambda"] = float(value)
            rows.append(_theory_row(config, sub, {}))
    else:
        for i, lam in enumerate(result.landscape_axes["lambda"]):
            for j, dlt in enumerate(result.landscape_axes["delta"]):
                sub = dict(point, **{"lambda": float(lam), "delta": float(dlt)})
                rows.append(_theory_row(config, sub, {}))
    best = dict(point)
    best["lambda"] = result.lambda_star
    if "delta" in config.opt_params:
        best["delta"] = result.delta_star
    rows.append(_theory_row(config, best, {}))
    return rows


def _run_group(args) -> list[dict]:
    config, points = args
    rows: list[dict] = []
    warm: dict = {}
    for point in points:
        if config.mode in ("solve", "sweep", "rates"):
            rows.append(_theory_row(config, point, warm))
        elif config.mode == "bayes":
            rows.append(_bayes_row(config, point))
        elif config.mode == "simulate":
            rows.extend(_simulation_rows(config, point))
        elif config.mode == "compare":
            rows.append(_theory_row(config, point, warm))
            rows.extend(_simulation_rows(config, point))
        elif config.mode == "optimize":
            rows.extend(_optimize_rows(config, point))
    return rows


# ---------------------------------------------------------------------------
# CSV emission


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".12g")
    return str(value)


def _sort_key(row):
    def k(x):
        return math.inf if isinstance(x, float) and math.isnan(x) else x

    return (row["mode"], k(row["alpha"]), k(row["lambda"]), k(row["delta"]), row["seed"], row["source"])


def _write_csv(path, rows, deterministic: bool) -> None:
    lines = []
    if not deterministic:
        lines.append(f"# generated {datetime.now(timezone.utc).isoformat()}")
    lines.append(CSV_COLUMNS)
    names = CSV_COLUMNS.split(",")
    for row in sorted(rows, key=_sort_key):
        lines.append(",".join(_fmt(row[name]) for name in names))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _emit_plots(path, rows) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        by_source = {}
        for row in rows:
            if math.isfinite(row["alpha"]) and (math.isfinite(row["eps_est"]) or math.isfinite(row["eps_bo"])):
                by_source.setdefault(row["source"], []).append(row)
        fig, ax = plt.subplots()
        for source, rws in sorted(by_source.items()):
            xs = [r["alpha"] for r in rws]
            ys = [r["eps_bo"] if source == "bayes" else r["eps_est"] for r in rws]
            ax.loglog(xs, ys, "o" if source == "simulation" else "-", label=source, alpha=0.7)
        ax.set_xlabel("alpha")
        ax.set_ylabel("eps_est")
        ax.legend()
        fig.savefig(f"{path}.eps_vs_alpha.png", dpi=120)
        plt.close(fig)
        deltas = sorted({r["delta"] for r in rows if math.isfinite(r["delta"])})
        if len(deltas) > 3:
            fig, ax = plt.subplots()
            pts = [(r["delta"], r["eps_est"]) for r in rows if math.isfinite(r["delta"]) and math.isfinite(r["eps_est"])]
            ax.loglog([p[0] for p in pts], [p[1] for p in pts], ".")
            ax.set_xlabel("delta")
            ax.set_ylabel("eps_est")
            fig.savefig(f"{path}.eps_vs_delta.png", dpi=120)
            plt.close(fig)
    except Exception as exc:  # plotting must never fail the run
        print(f"plotting skipped: {exc}", file=sys.stderr)


def _warm_groups(config, points) -> list[list[dict]]:
    groups: dict[tuple, list[dict]] = {}
    for point in points:
        key = tuple((k, v) for k, v in sorted(point.items()) if k != "alpha")
        groups.setdefault(key, []).append(point)
    ordered = []
    for key in sorted(groups):
        ordered.append(sorted(groups[key], key=lambda p: p.get("alpha", 0.0)))
    return ordered


def run(
    config: ExperimentConfig,
    strict: bool = False,
    deterministic: bool = False,
    plot: bool = False,
    workers: int | None = None,
    out: str | None = None,
) -> int:
    """Execute the experiment; returns the process exit status."""
    out_path = out or config.out
    workers = workers if workers is not None else config.workers
    groups = _warm_groups(config, _grid_points(config))
    rows: list[dict] = []
    if workers > 1 and len(groups) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_run_group, [(config, g) for g in groups]):
                rows.extend(chunk)
    else:
        for group in groups:
            rows.extend(_run_group((config, group)))
    _write_csv(out_path, rows, deterministic)
    if config.mode == "rates":
        _print_rate_summary(config, rows)
    if plot:
        _emit_plots(out_path, rows)
    bad = [r for r in rows if not r["converged"]]
    if bad:
        print(f"{len(bad)} grid points did not converge", file=sys.stderr)
        if strict:
            return 3
    return 0


def _print_rate_summary(config: ExperimentConfig, rows) -> None:
    theory = [r for r in rows if r["source"] == "theory" and math.isfinite(r["eps_est"])]
    if len(theory) < 5:
        print("rates: not enough converged points to fit", file=sys.stderr)
        return
    alphas = np.array([r["alpha"] for r in theory])
    eps = np.array([r["eps_est"] for r in theory])
    order = np.argsort(alphas)
    fit = rates_mod.fit_rate(alphas[order], eps[order])
    noise_power = config.noise.second_moment()
    line = f"rates: fitted slope {fit.slope:+.4f} over {fit.n_points} points"
    if math.isfinite(noise_power):
        pred = rates_mod.predict_rate(config.covariates, noise_power)
        line += f"; predicted {pred.exponent:+.4f}" + (" (log-corrected)" if pred.log_correction else "")
    print(line)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hdrobust", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment config")
    run_p.add_argument("config", help="path to the experiment config file")
    run_p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. --set problem.alpha=4")
    run_p.add_argument("--plot", action="store_true")
    run_p.add_argument("--strict", action="store_true")
    run_p.add_argument("--deterministic", action="store_true")
    run_p.add_argument("--workers", type=int, default=None)
    run_p.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            text = fh.read()
        overrides = []
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, value = item.split("=", 1)
            overrides.append((key.strip(), value.strip()))
        config = parse_config(text, overrides)
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(
        config,
        strict=args.strict,
        deterministic=args.deterministic,
        plot=args.plot,
        workers=args.workers,
        out=args.out,
    )


if __name__ == "__main__":
    sys.exit(main())
