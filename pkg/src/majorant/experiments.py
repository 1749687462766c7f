"""Experiment orchestration: sweep grids, result CSVs, manifests.

Each experiment is a pure function of (config, seed): grid cells get
stream ids derived from their coordinates, cells run concurrently under
a thread pool, and rows are assembled in sorted order, so the emitted
CSV is byte-identical for a fixed (config, seed) whatever the worker
count. Failures inside a cell are recorded and the sweep continues; the
caller maps "some cells failed" to exit code 2.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bounds import (
    BoundInputs,
    BoundReport,
    gp_pac_bayes_bounds,
    kernel_bpm_bounds,
    orthant_prob,
    stability_bound,
    vc_bound,
)
from .config import (
    REQUIRED,
    apply_schema,
    parse_bool,
    parse_grid,
    parse_int,
    parse_int_list,
    parse_number,
    parse_str,
)
from .data import SynthSpec, load_idx, preprocess, synth_teacher_data
from .errors import ConfigError, MajorantError
from .kernels import (
    ArccosKernel,
    GaussianKernel,
    concentration_sample,
    gram_bundle,
    margin_posterior,
    nngp_empirical_kernel,
)
from .mlp import (
    init_rms_one,
    loss_eval,
    mlp_outputs,
    train_architecture_aware,
    train_margin_projected,
)
from .numerics import RngStream, sign_pm1
from .strategies import (
    PosteriorSampler,
    inequality_report,
    strategy_errors,
    write_predictions_csv,
)
from . import plots

__all__ = ["run_experiment", "EXPERIMENTS", "selftest", "summarise_lr_transfer"]


# ---------------------------------------------------------------------------
# shared plumbing

_DATA_SCHEMA = {
    "data": (parse_str, "synthetic"),
    "d0": (parse_int, 16),
    "teacher_depth": (parse_int, 2),
    "teacher_width": (parse_int, 32),
    "images": (parse_str, ""),
    "labels": (parse_str, ""),
    "digit_a": (parse_int, 0),
    "digit_b": (parse_int, 1),
}


def _build_dataset(cfg, m_train, m_test, rng: RngStream):
    if cfg["data"] == "synthetic":
        spec = SynthSpec(
            d0=cfg["d0"],
            m_train=m_train,
            m_test=m_test,
            teacher_depth=cfg["teacher_depth"],
            teacher_width=cfg["teacher_width"],
        )
        train, test, _ = synth_teacher_data(spec, rng)
        return train, test
    if cfg["data"] == "idx":
        if not cfg["images"] or not cfg["labels"]:
            raise ConfigError("idx data needs 'images' and 'labels' paths")
        dataset = load_idx(cfg["images"], cfg["labels"])
        return preprocess(
            dataset, (cfg["digit_a"], cfg["digit_b"]), m_train, m_test, rng
        )
    raise ConfigError(f"unknown data source {cfg['data']!r}")


def _run_cells(cells, fn, workers: int):
    """Evaluate fn over cells (possibly in parallel); results keyed by cell.

    Returns (results, failures) with failures as (cell, error string).
    Keying by cell keeps output assembly independent of scheduling.
    """

    def guarded(cell):
        try:
            return cell, fn(cell), None
        except Exception as exc:  # cell failures must not sink the sweep
            return cell, None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(guarded, cells))
    else:
        outcomes = [guarded(cell) for cell in cells]
    results, failures = {}, []
    for cell, value, err in outcomes:
        if err is None:
            results[cell] = value
        else:
            failures.append((cell, err))
    return results, failures


def _write_csv(path, fieldnames, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _fmt(value) -> str:
    """Stable scalar formatting for CSV cells."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _config_hash(parsed: dict) -> str:
    blob = json.dumps(parsed, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_manifest(out_dir: Path, experiment, parsed_cfg, seed, workers,
                    outputs, failures, budgets) -> None:
    manifest = {
        "experiment": experiment,
        "config": parsed_cfg,
        "config_hash": _config_hash(parsed_cfg),
        "seed": seed,
        "workers": workers,
        "budgets": budgets,
        "outputs": sorted(outputs),
        "failures": [
            {"cell": [str(c) for c in cell], "error": err} for cell, err in failures
        ],
        "versions": {
            "package": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# ---------------------------------------------------------------------------
# lr-transfer

_LR_SCHEMA = {
    **_DATA_SCHEMA,
    # mini-batch regime where the tuning curves keep a sharp minimum:
    # the gradient noise floor rises with the rate, so fully converged
    # cells no longer tie at interpolation level
    "d0": (parse_int, 512),
    "teacher_width": (parse_int, 16),
    "widths": (parse_int_list, [32, 128, 512]),
    "depths": (parse_int_list, [2, 4, 6]),
    "eta_grid": (parse_grid, parse_grid("2^-11 .. 2^-3")),
    "seeds": (parse_int_list, [0, 1, 2]),
    "steps": (parse_int, 720),
    "batch_size": (parse_int, 32),
    "m_train": (parse_int, 384),
    "m_test": (parse_int, 64),
}


def run_lr_transfer(section, seed, out_dir, workers):
    cfg = apply_schema("lr-transfer", section, _LR_SCHEMA)
    base = RngStream(seed)
    train, _ = _build_dataset(cfg, cfg["m_train"], cfg["m_test"],
                              base.substream("lr-transfer", "data"))

    cells = [
        (variant, width, depth, eta, s)
        for variant in ("depth-scaled", "unscaled")
        for width in cfg["widths"]
        for depth in cfg["depths"]
        for eta in cfg["eta_grid"]
        for s in cfg["seeds"]
    ]

    def run_cell(cell):
        variant, width, depth, eta, s = cell
        widths = [cfg["d0"]] + [width] * (depth - 1) + [1]
        net = init_rms_one(
            widths, base.substream("lr-transfer", "init", width, depth, s)
        )
        batch = cfg["batch_size"] or None
        result = train_architecture_aware(
            net,
            train.X,
            train.Y,
            steps=cfg["steps"],
            flavour="conditioned",
            eta=eta,
            depth_scale=(variant == "depth-scaled"),
            batch_size=batch,
            rng=base.substream("lr-transfer", "batch", *cell),
        )
        if result.diverged:
            return float("inf")
        return loss_eval(result.net, train.X, train.Y, "square")

    results, failures = _run_cells(cells, run_cell, workers)

    rows = []
    for cell in sorted(results):
        variant, width, depth, eta, s = cell
        rows.append(
            {
                "variant": variant,
                "width": width,
                "depth": depth,
                "eta": _fmt(float(eta)),
                "seed": s,
                "final_loss": _fmt(float(results[cell])),
            }
        )
    csv_path = out_dir / "lr-transfer.csv"
    _write_csv(csv_path, ["variant", "width", "depth", "eta", "seed", "final_loss"], rows)

    mean_loss = {}
    for r in rows:
        key = (r["variant"], r["width"], r["depth"], float(r["eta"]))
        total, count = mean_loss.get(key, (0.0, 0))
        mean_loss[key] = (total + float(r["final_loss"]), count + 1)
    plot_rows = [
        {
            "variant": variant,
            "width": width,
            "depth": depth,
            "eta": eta,
            "final_loss": total / count,
        }
        for (variant, width, depth, eta), (total, count) in mean_loss.items()
    ]
    png_path = out_dir / "lr-transfer.png"
    plots.plot_lr_transfer(plot_rows, png_path)

    _write_manifest(
        out_dir, "lr-transfer", cfg, seed, workers,
        [csv_path.name, png_path.name], failures,
        {"cells": len(cells), "steps": cfg["steps"]},
    )
    return failures


def summarise_lr_transfer(rows):
    """Best eta per (variant, width, depth): lowest geometric-mean final
    loss over seeds.

    The geometric mean (= mean of logs) scores tuning curves on the log
    scale losses actually live on: once several rates all drive the
    loss to interpolation level, the arithmetic mean calls a 1e-6 and a
    1e-4 run a tie and the argmin degenerates to seed noise, while the
    log scale still credits the rate that descends fastest. Divergent
    cells carry loss = inf and never win.
    """
    sums = {}
    floor = 1e-300  # exact zeros would send the log to -inf
    for r in rows:
        key = (r["variant"], int(r["width"]), int(r["depth"]), float(r["eta"]))
        loss = float(r["final_loss"])
        total, count = sums.get(key, (0.0, 0))
        sums[key] = (total + math.log(max(loss, floor)), count + 1)
    best = {}
    for (variant, width, depth, eta), (total, count) in sums.items():
        mean = total / count
        key = (variant, width, depth)
        if key not in best or mean < best[key][1]:
            best[key] = (eta, mean)
    return {key: eta for key, (eta, _) in best.items()}


# ---------------------------------------------------------------------------
# margin-sweep

_MARGIN_SCHEMA = {
    **_DATA_SCHEMA,
    "nngp_gammas": (parse_grid, [1.0, 10.0, 100.0, 1000.0]),
    "finite_gammas": (parse_grid, [0.25, 0.5, 1.0, 2.0]),
    "ensemble_sizes": (parse_int_list, [1, 9, 81]),
    "kernel_depth": (parse_int, 3),
    "net_width": (parse_int, 64),
    "net_depth": (parse_int, 3),
    "steps": (parse_int, 150),
    "tau": (parse_number, 1.0),
    "m_train": (parse_int, 100),
    "m_test": (parse_int, 200),
}


def run_margin_sweep(section, seed, out_dir, workers):
    cfg = apply_schema("margin-sweep", section, _MARGIN_SCHEMA)
    base = RngStream(seed)
    train, test = _build_dataset(cfg, cfg["m_train"], cfg["m_test"],
                                 base.substream("margin-sweep", "data"))
    gram = gram_bundle(ArccosKernel(cfg["kernel_depth"]), train.X)

    cells = [("nngp", g, s) for g in cfg["nngp_gammas"]
             for s in cfg["ensemble_sizes"]]
    cells += [("finite", g, s) for g in cfg["finite_gammas"]
              for s in cfg["ensemble_sizes"]]

    def run_cell(cell):
        path, gamma, size = cell
        if path == "nngp":
            post = margin_posterior(gram, train.Y, gamma=gamma, tau2=cfg["tau"] ** 2)
            draws = concentration_sample(
                post, test.X, size,
                base.substream("margin-sweep", "nngp", gamma, size),
            )
            avg = draws.mean(axis=0)
            acc = float(np.mean(sign_pm1(avg) == test.Y))
            return {"test_accuracy": acc, "fit_rate": 1.0}
        widths = [cfg["d0"]] + [cfg["net_width"]] * (cfg["net_depth"] - 1) + [1]
        outputs = np.zeros(test.m)
        fitted = 0
        for member in range(size):
            net = init_rms_one(
                widths,
                base.substream("margin-sweep", "finite", gamma, size, member),
            )
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                result = train_margin_projected(
                    net, train.X, train.Y, gamma, steps=cfg["steps"]
                )
            outputs += mlp_outputs(result.net, test.X)[:, 0]
            fitted += int(bool(result.fitted))
        acc = float(np.mean(sign_pm1(outputs / size) == test.Y))
        return {"test_accuracy": acc, "fit_rate": fitted / size}

    results, failures = _run_cells(cells, run_cell, workers)

    rows = []
    for cell in sorted(results):
        path, gamma, size = cell
        rows.append(
            {
                "path": path,
                "ensemble_size": size,
                "gamma": _fmt(float(gamma)),
                "test_accuracy": _fmt(results[cell]["test_accuracy"]),
                "fit_rate": _fmt(results[cell]["fit_rate"]),
            }
        )
    csv_path = out_dir / "margin-sweep.csv"
    _write_csv(
        csv_path, ["path", "ensemble_size", "gamma", "test_accuracy", "fit_rate"], rows
    )
    plot_rows = [
        {
            "path": r["path"],
            "ensemble_size": int(r["ensemble_size"]),
            "gamma": float(r["gamma"]),
            "test_accuracy": float(r["test_accuracy"]),
        }
        for r in rows
    ]
    png_path = out_dir / "margin-sweep.png"
    plots.plot_margin_sweep(plot_rows, png_path)
    _write_manifest(
        out_dir, "margin-sweep", cfg, seed, workers,
        [csv_path.name, png_path.name], failures,
        {"cells": len(cells), "steps": cfg["steps"]},
    )
    return failures


# ---------------------------------------------------------------------------
# strategy-compare

_STRATEGY_SCHEMA = {
    **_DATA_SCHEMA,
    "m_grid": (parse_int_list, [25, 50, 100, 200]),
    "m_test": (parse_int, 200),
    "kernel": (parse_str, "arccos"),
    "kernel_depth": (parse_int, 3),
    "sigma": (parse_number, 1.0),
    "posterior": (parse_str, "spherised"),
    "n_votes": (parse_int, 501),
    "orthant_samples": (parse_int, 10**6),
    "delta": (parse_number, 0.05),
}

_BOUND_COLUMNS = [
    "bound_gibbs_orthant",
    "bound_gibbs_complexity",
    "bound_gibbs_spherised",
    "bound_bpm_orthant",
    "bound_bpm_complexity",
    "bound_bpm_spherised",
]


def _make_kernel(cfg):
    if cfg["kernel"] == "arccos":
        return ArccosKernel(cfg["kernel_depth"])
    if cfg["kernel"] == "gaussian":
        return GaussianKernel(cfg["sigma"])
    raise ConfigError(f"unknown kernel {cfg['kernel']!r}")


def run_strategy_compare(section, seed, out_dir, workers):
    cfg = apply_schema("strategy-compare", section, _STRATEGY_SCHEMA)
    if cfg["posterior"] not in ("spherised", "exact-orthant"):
        raise ConfigError(f"unknown posterior {cfg['posterior']!r}")
    base = RngStream(seed)
    m_max = max(cfg["m_grid"])
    train, test = _build_dataset(cfg, m_max, cfg["m_test"],
                                 base.substream("strategy-compare", "data"))
    kernel = _make_kernel(cfg)

    def run_cell(m):
        X, Y = train.X[:m], train.Y[:m]
        gram = gram_bundle(kernel, X)
        sampler = PosteriorSampler(cfg["posterior"], gram, Y)
        errors = strategy_errors(
            sampler, test.X, test.Y, n=cfg["n_votes"],
            rng=base.substream("strategy-compare", "errors", m),
        )
        orthant = orthant_prob(
            gram, Y, cfg["orthant_samples"],
            base.substream("strategy-compare", "orthant", m),
            workers=1,
        )
        gibbs = gp_pac_bayes_bounds(gram, Y, orthant, m, cfg["delta"])
        bpm = kernel_bpm_bounds(gram, Y, orthant, m, cfg["delta"])
        return errors, gibbs, bpm

    results, failures = _run_cells(list(cfg["m_grid"]), run_cell, workers)

    rows, ineq_rows, outputs = [], [], []
    for m in sorted(results):
        errors, gibbs, bpm = results[m]
        bound_cells = {
            "bound_gibbs_orthant": gibbs.value("gibbs-orthant"),
            "bound_gibbs_complexity": gibbs.value("gibbs-complexity"),
            "bound_gibbs_spherised": gibbs.value("gibbs-spherised"),
            "bound_bpm_orthant": bpm.value("bpm-orthant"),
            "bound_bpm_complexity": bpm.value("bpm-complexity"),
            "bound_bpm_spherised": bpm.value("bpm-spherised"),
        }
        for strategy, err, se in (
            ("gibbs", errors.eps_gibbs, errors.se_gibbs),
            ("bayes", errors.eps_bayes, errors.se_bayes),
            ("bpm", errors.eps_bpm, errors.se_bpm),
        ):
            rows.append(
                {
                    "strategy": strategy,
                    "m": m,
                    "test_error": _fmt(err),
                    "std_err": _fmt(se),
                    **{k: _fmt(v) for k, v in bound_cells.items()},
                }
            )
        for check in inequality_report(errors):
            ineq_rows.append(
                {
                    "m": m,
                    "name": check.name,
                    "lhs": _fmt(check.lhs),
                    "rhs": _fmt(check.rhs),
                    "slack": _fmt(check.slack),
                    "passed": check.passed,
                    "conditional": check.conditional,
                    "skipped": check.skipped,
                }
            )
        pred_path = out_dir / f"predictions-m{m}.csv"
        write_predictions_csv(
            pred_path, list(range(test.m)), test.Y, errors.predictions
        )
        outputs.append(pred_path.name)

    csv_path = out_dir / "strategy-compare.csv"
    _write_csv(
        csv_path,
        ["strategy", "m", "test_error", "std_err", *_BOUND_COLUMNS],
        rows,
    )
    ineq_path = out_dir / "inequalities.csv"
    _write_csv(
        ineq_path,
        ["m", "name", "lhs", "rhs", "slack", "passed", "conditional", "skipped"],
        ineq_rows,
    )
    plot_rows = [
        {
            "strategy": r["strategy"],
            "m": int(r["m"]),
            "test_error": float(r["test_error"]),
            "bound_bpm_spherised": float(r["bound_bpm_spherised"]),
        }
        for r in rows
    ]
    png_path = out_dir / "strategy-compare.png"
    plots.plot_strategy_compare(plot_rows, png_path)
    _write_manifest(
        out_dir, "strategy-compare", cfg, seed, workers,
        [csv_path.name, ineq_path.name, png_path.name, *outputs], failures,
        {"n_votes": cfg["n_votes"], "orthant_samples": cfg["orthant_samples"]},
    )
    return failures


# ---------------------------------------------------------------------------
# nngp-check

_NNGP_SCHEMA = {
    "width": (parse_int, 256),
    "depth": (parse_int, 3),
    "n_samples": (parse_int, 10**4),
    "m_inputs": (parse_int, 8),
    "d0": (parse_int, 16),
    "method": (parse_str, "propagate"),
}


def run_nngp_check(section, seed, out_dir, workers):
    cfg = apply_schema("nngp-check", section, _NNGP_SCHEMA)
    base = RngStream(seed)
    gen = base.substream("nngp-check", "inputs").generator
    g = gen.standard_normal((cfg["m_inputs"], cfg["d0"]))
    X = g * (np.sqrt(cfg["d0"]) / np.linalg.norm(g, axis=1))[:, None]

    empirical = nngp_empirical_kernel(
        cfg["width"], cfg["depth"], cfg["n_samples"], X,
        base.substream("nngp-check", "draws"), method=cfg["method"],
    )
    closed = ArccosKernel(cfg["depth"]).cross(X, X)

    rows = []
    for i in range(cfg["m_inputs"]):
        for j in range(i, cfg["m_inputs"]):
            rows.append(
                {
                    "i": i,
                    "j": j,
                    "empirical": _fmt(float(empirical[i, j])),
                    "closed_form": _fmt(float(closed[i, j])),
                    "abs_diff": _fmt(float(abs(empirical[i, j] - closed[i, j]))),
                }
            )
    csv_path = out_dir / "nngp-check.csv"
    _write_csv(csv_path, ["i", "j", "empirical", "closed_form", "abs_diff"], rows)
    plot_rows = [
        {"empirical": float(r["empirical"]), "closed_form": float(r["closed_form"])}
        for r in rows
    ]
    png_path = out_dir / "nngp-check.png"
    plots.plot_nngp_check(plot_rows, png_path)
    max_diff = max(float(r["abs_diff"]) for r in rows)
    _write_manifest(
        out_dir, "nngp-check", cfg, seed, workers,
        [csv_path.name, png_path.name], [],
        {"n_samples": cfg["n_samples"], "max_abs_diff": max_diff},
    )
    return []


# ---------------------------------------------------------------------------
# bounds

_BOUNDS_SCHEMA = {
    **_DATA_SCHEMA,
    "m_train": (parse_int, 100),
    "m_test": (parse_int, 50),
    "kernel": (parse_str, "arccos"),
    "kernel_depth": (parse_int, 3),
    "sigma": (parse_number, 1.0),
    "delta": (parse_number, 0.05),
    "orthant_samples": (parse_int, 10**6),
    "train_error": (parse_number, float("nan")),
    "log_shatter": (parse_number, float("nan")),
    "beta": (parse_number, float("nan")),
}


def run_bounds(section, seed, out_dir, workers):
    cfg = apply_schema("bounds", section, _BOUNDS_SCHEMA)
    base = RngStream(seed)
    train, _ = _build_dataset(cfg, cfg["m_train"], cfg["m_test"],
                              base.substream("bounds", "data"))
    gram = gram_bundle(_make_kernel(cfg), train.X)
    orthant = orthant_prob(
        gram, train.Y, cfg["orthant_samples"],
        base.substream("bounds", "orthant"), workers=workers,
    )
    m = train.m
    report = BoundReport()
    for name, entry in gp_pac_bayes_bounds(
        gram, train.Y, orthant, m, cfg["delta"]
    ).entries.items():
        report.entries[name] = entry
    for name, entry in kernel_bpm_bounds(
        gram, train.Y, orthant, m, cfg["delta"]
    ).entries.items():
        report.entries[name] = entry

    if not math.isnan(cfg["log_shatter"]):
        train_error = 0.0 if math.isnan(cfg["train_error"]) else cfg["train_error"]
        inputs = BoundInputs(
            m=m, delta=cfg["delta"], train_error=train_error,
            log_shatter=cfg["log_shatter"],
        )
        report.add("vc", vc_bound(inputs),
                   {"m": m, "delta": cfg["delta"], "train_error": train_error,
                    "log_shatter": cfg["log_shatter"]})
    if not math.isnan(cfg["beta"]):
        train_error = 0.0 if math.isnan(cfg["train_error"]) else cfg["train_error"]
        inputs = BoundInputs(
            m=m, delta=cfg["delta"], train_error=train_error, beta=cfg["beta"]
        )
        report.add("stability", stability_bound(inputs),
                   {"m": m, "delta": cfg["delta"], "train_error": train_error,
                    "beta": cfg["beta"]})

    json_path = out_dir / "bounds.json"
    with open(json_path, "w") as fh:
        fh.write(report.dumps())
        fh.write("\n")
    rows = [
        {"name": name, "value": _fmt(entry["value"]),
         "vacuous": entry["vacuous_flag"]}
        for name, entry in sorted(report.entries.items())
    ]
    csv_path = out_dir / "bounds.csv"
    _write_csv(csv_path, ["name", "value", "vacuous"], rows)
    png_path = out_dir / "bounds.png"
    plots.plot_bounds(report.entries, png_path)
    _write_manifest(
        out_dir, "bounds", cfg, seed, workers,
        [json_path.name, csv_path.name, png_path.name], [],
        {"orthant_samples": cfg["orthant_samples"],
         "orthant_method": orthant.method},
    )
    return []


# ---------------------------------------------------------------------------
# selftest

def _selftest_checks():
    from . import deeplinear, mlp, optim
    from .kernels import gp_condition, min_norm_interpolate

    def numerics_spectral():
        gen = RngStream(7).generator
        A = gen.standard_normal((9, 5))
        from .numerics import spectral_norm

        mine = spectral_norm(A, tol=1e-10, max_iter=2000)
        ref = float(np.linalg.svd(A, compute_uv=False)[0])
        assert abs(mine - ref) <= 1e-6 * ref

    def optim_cubic():
        g = np.array([0.3, -1.2])
        H = np.array([[2.0, 0.4], [0.4, -1.0]])
        s = optim.solve_cubic_subproblem(g, H, lam=3.0)
        val = g @ s + 0.5 * s @ H @ s + 0.5 * np.linalg.norm(s) ** 3
        gen = RngStream(11).generator
        probes = s[None, :] + 0.05 * gen.standard_normal((200, 2))
        vals = [
            g @ p + 0.5 * p @ H @ p + 0.5 * np.linalg.norm(p) ** 3 for p in probes
        ]
        assert val <= min(vals) + 1e-9

    def dln_bound():
        gen = RngStream(3).generator
        ws = [gen.standard_normal((4, 6)), gen.standard_normal((2, 4))]
        net = deeplinear.DeepLinearNet([w.copy() for w in ws])
        delta = [0.01 * gen.standard_normal(w.shape) for w in ws]
        from .numerics import project_hypersphere

        X = project_hypersphere(gen.standard_normal((5, 6)))
        rep = deeplinear.perturbation_bounds(net, delta, X)
        assert rep.measured_first <= rep.first_order * (1 + 1e-9)

    def mlp_backprop():
        gen = RngStream(5)
        net = mlp.init_rms_one([6, 8, 1], gen)
        X = np.sqrt(6) * np.eye(6)[:4]
        Y = np.array([1.0, -1.0, 1.0, -1.0])
        grads = mlp.mlp_gradient(net, X, Y, "square")
        eps = 1e-5
        w = net.weights[0]
        w[2, 3] += eps
        up = mlp.loss_eval(net, X, Y, "square")
        w[2, 3] -= 2 * eps
        down = mlp.loss_eval(net, X, Y, "square")
        w[2, 3] += eps
        fd = (up - down) / (2 * eps)
        assert abs(fd - grads[0][2, 3]) <= 1e-6 * max(1.0, abs(fd))

    def gp_identity():
        gen = RngStream(13).generator
        X = gen.standard_normal((6, 3))
        gram = gram_bundle(GaussianKernel(1.5), X)
        Y = sign_pm1(gen.standard_normal(6))
        predictor, _ = min_norm_interpolate(gram, Y)
        post = margin_posterior(gram, Y)
        Xq = gen.standard_normal((4, 3))
        mean, _ = gp_condition(post, Xq)
        assert np.allclose(mean, predictor(Xq), atol=1e-8)

    def bound_closed_forms():
        from .bounds import kl_inverse_bound

        assert abs(kl_inverse_bound(0.0, 0.25) - (1 - math.exp(-0.25))) <= 1e-9
        gram = gram_bundle(GaussianKernel(1.0), 10.0 * np.eye(4))
        est = orthant_prob(gram, np.ones(4))
        assert est.method == "exact-diagonal" or abs(
            est.log_prob + 4 * math.log(2)
        ) < 1e-9

    def spherised_signs():
        gen = RngStream(17).generator
        X = gen.standard_normal((5, 3))
        gram = gram_bundle(GaussianKernel(2.0), X)
        Y = sign_pm1(gen.standard_normal(5))
        sampler = PosteriorSampler("spherised", gram, Y)
        from .strategies import sample_spherised

        draws = sample_spherised(sampler, 64, RngStream(19))
        assert np.all(sign_pm1(draws) == Y[None, :])

    return [
        ("numerics-spectral-norm", numerics_spectral),
        ("cubic-subproblem", optim_cubic),
        ("dln-perturbation-bound", dln_bound),
        ("mlp-backprop", mlp_backprop),
        ("gp-mean-identity", gp_identity),
        ("bound-closed-forms", bound_closed_forms),
        ("spherised-sign-constraint", spherised_signs),
    ]


def selftest(stream=None) -> int:
    """Run the quick internal checks; returns the number of failures."""
    stream = stream or sys.stdout
    failures = 0
    for name, check in _selftest_checks():
        try:
            check()
        except Exception as exc:
            failures += 1
            print(f"FAIL {name}: {type(exc).__name__}: {exc}", file=stream)
        else:
            print(f"ok   {name}", file=stream)
    return failures


# ---------------------------------------------------------------------------
# dispatch

EXPERIMENTS = {
    "lr-transfer": run_lr_transfer,
    "margin-sweep": run_margin_sweep,
    "strategy-compare": run_strategy_compare,
    "nngp-check": run_nngp_check,
    "bounds": run_bounds,
}


def run_experiment(name, sections, seed, out_dir, workers):
    """Run one experiment; returns the failure list. ConfigError and
    friends propagate to the CLI, which maps them to exit code 1."""
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    section = sections.get(name) if sections else None
    return EXPERIMENTS[name](section, seed, out_dir, workers)
