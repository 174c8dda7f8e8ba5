"""End-to-end runs: generate data from a config, track, optionally smooth,
and write error series and summaries as CSV."""

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datagen as D
from .metrics import (RunReport, detection_report, rel_frobenius, samples_to_threshold,
                      steady_ms_per_frame, subspace_error_series)
from .robust import NorstMissRobust
from .tracker import NorstMiss, check_budget, smooth


@dataclass
class Dataset:
    truth: D.GroundTruth
    stream: D.ObservationStream
    noise_std: float


def generate(cfg):
    """Ground truth and observed stream for ``cfg.generation``."""
    g = cfg.generation
    ch = g.changes()
    truth = D.gen_truth(g.n, g.d, g.r, g.f, J=len(ch), change_times=ch, gamma=g.gamma,
                        seed=g.seed, time_varying=g.time_varying, noise_std_ratio=g.noise_ratio)
    if g.support == "bernoulli":
        missing = D.gen_bernoulli_supports(g.n, g.d, g.rho, g.seed)
    else:
        missing = D.gen_moving_object_supports(g.n, g.d, g.mo_s, g.mo_b0, g.seed)
    outliers = None
    if g.outlier_s > 0:
        spec = D.OutlierSpec(g.outlier_s, g.outlier_b0, g.x_min, g.x_max)
        outliers = D.gen_outliers(g.n, g.d, spec, missing, g.seed)
    lam_minus = D.CoefficientSpec(g.r, g.f, g.time_varying).lambda_minus
    noise_std = g.noise_ratio * np.sqrt(lam_minus)
    stream = D.assemble_stream(truth, missing, outliers, noise_std=noise_std, seed=g.seed)
    return Dataset(truth, stream, noise_std)


def make_tracker(cfg, n, support=None):
    a = cfg.algorithm
    params, variant = cfg.tracker_params(), cfg.variant_params()
    if a.robust:
        return NorstMissRobust(n, params, cfg.robust_params(), variant=variant,
                               oracle_support=support if a.oracle_support else None)
    return NorstMiss(n, params, variant=variant)


@dataclass
class ExperimentResult:
    config: object
    data: Dataset
    run: object
    series: object
    report: RunReport
    L_hat: np.ndarray
    seconds: float


def run_experiment(cfg, out=None):
    """Generate, track and evaluate one configuration.

    Writes ``series.csv``, ``report.csv``, ``events.csv``, ``config.ini``
    and ``timing.csv`` into `out` when given.  All files except
    ``timing.csv`` depend only on the config (including its seed).
    """
    cfg.validate()
    data = generate(cfg)
    st, truth = data.stream, data.truth
    tracker = make_tracker(cfg, truth.n, st.outlier_mask)
    tic = time.perf_counter()
    res = tracker.run(st.Y, st.missing)
    tracker.finalize()
    L_hat = res.L_hat
    if cfg.algorithm.smoothing:
        L_hat = smooth(st.Y, res.effective_mask, tracker.cycle_bases(), tracker.params)
    seconds = time.perf_counter() - tic

    series = subspace_error_series(tracker.history, truth, L_hat=res.L_hat,
                                   events=tracker.state.events)
    alpha = tracker.params.alpha
    # robust training frames are handled in one batch and carry no per-frame time
    skip = cfg.algorithm.t_train if cfg.algorithm.robust else 0
    report = RunReport(
        rel_frobenius=rel_frobenius(L_hat, truth.clean) if cfg.algorithm.smoothing else None,
        rel_frobenius_online=rel_frobenius(res.L_hat, truth.clean),
        samples={thr: samples_to_threshold(series, thr, alpha) for thr in cfg.report.thresholds},
        detection=detection_report(res.detections, truth.change_times, alpha),
        ms_per_frame=steady_ms_per_frame(res.frame_seconds[skip:], alpha),
        final_sin_theta=float(series.sin_theta[-1]),
    )
    if cfg.algorithm.robust and st.outlier_mask is not None:
        m = cfg.algorithm.t_train
        E = res.effective_mask
        ok = np.all(E | ~st.outlier_mask, axis=0)[m:]
        report.extra["support_superset_frac"] = float(ok.mean())
    result = ExperimentResult(cfg, data, res, series, report, L_hat, seconds)
    if out is not None:
        write_outputs(result, out)
    return result


def write_outputs(result, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result.series.to_csv(out / "series.csv")
    result.report.to_csv(out / "report.csv")
    with open(out / "events.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "kind", "j", "k", "statistic"))
        for e in result.run.events:
            w.writerow((e.t, e.kind, e.j, e.k, "%.17g" % e.statistic))
    (out / "config.ini").write_text(result.config.to_ini())
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("metric", "value"))
        w.writerow(("total_seconds", "%.6g" % result.seconds))
        w.writerow(("ms_per_frame_median", "%.6g" % result.report.ms_per_frame))


def write_dataset(data, out):
    """Observed stream (NaN for missing) plus the truth needed to score it."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    st = data.stream
    D.write_dense_csv(out / "observed.csv", st.Y, st.missing)
    D.write_matrix_csv(out / "clean.csv", data.truth.clean)
    D.save_truth(out / "truth", data.truth)
    if st.outlier_mask is not None:
        D.write_matrix_csv(out / "outlier_support.csv", st.outlier_mask.astype(float))


def complete_file(input_path, out, params, *, mask_path=None, truth_path=None, variant=None,
                  override_budget=False):
    """Complete a matrix stored one frame per line.

    `input_path` is either a dense file with NaN for missing entries or, with
    `mask_path`, a values file plus a 0/1 missing-indicator file.  Writes
    ``completed.csv`` and ``report.csv`` into `out` and returns the completed
    matrix and the report.
    """
    if mask_path is None:
        Y, missing = D.read_dense_csv(input_path)
    else:
        Y, missing = D.read_pair_csv(input_path, mask_path)
    check_budget(missing, params.r, override=override_budget)
    tracker = NorstMiss(Y.shape[0], params, variant=variant)
    res = tracker.run(Y, missing)
    tracker.finalize()
    L_hat = smooth(Y, missing, tracker.cycle_bases(), params)
    report = RunReport(extra={"frames": Y.shape[1], "missing_frac": float(missing.mean()),
                              "detections": len(res.detections)})
    if truth_path is not None:
        L = D.read_matrix_csv(truth_path)
        report.rel_frobenius = rel_frobenius(L_hat, L)
        report.rel_frobenius_online = rel_frobenius(res.L_hat, L)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    D.write_matrix_csv(out / "completed.csv", L_hat)
    report.to_csv(out / "report.csv")
    return L_hat, report


BENCH_HEADER = ("config", "variant", "repeats", "median_final_sin_theta",
                "median_rel_frobenius", "threshold", "median_samples", "never_count",
                "median_ms_per_frame")


def bench(configs, variants=None, repeats=1, out=None):
    """Compare variants across seeds.

    Runs every config in `configs` with each variant label in `variants`
    (default: the config's own) over seeds ``seed .. seed + repeats - 1``.
    Returns rows keyed like :data:`BENCH_HEADER`; samples use the first
    report threshold and runs that never reach it count as ``never``.
    """
    rows = []
    for cfg in configs:
        labels = variants or [cfg.algorithm.variant]
        thr = cfg.report.thresholds[0]
        for label in labels:
            errs, rels, samples, ms = [], [], [], []
            for i in range(repeats):
                c = cfg.with_variant(label).with_seed(cfg.generation.seed + i)
                res = run_experiment(c)
                errs.append(res.report.final_sin_theta)
                rels.append(res.report.rel_frobenius
                            if res.report.rel_frobenius is not None
                            else res.report.rel_frobenius_online)
                samples.append(res.report.samples[thr])
                ms.append(res.report.ms_per_frame)
            hit = [s for s in samples if s is not None]
            rows.append({
                "config": cfg.name, "variant": label, "repeats": repeats,
                "median_final_sin_theta": float(np.median(errs)),
                "median_rel_frobenius": float(np.median(rels)),
                "threshold": thr,
                # a run that never reaches the threshold ranks above any count
                "median_samples": _median_with_never(samples),
                "never_count": len(samples) - len(hit),
                "median_ms_per_frame": float(np.median(ms)),
            })
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=BENCH_HEADER)
            w.writeheader()
            for row in rows:
                w.writerow({k: ("never" if v is None else v) for k, v in row.items()})
    return rows


def _median_with_never(samples):
    """Median where None counts as larger than every number; None if the
    median itself is ``never``."""
    vals = sorted(samples, key=lambda s: (s is None, s if s is not None else 0))
    m = len(vals)
    lo, hi = vals[(m - 1) // 2], vals[m // 2]
    if lo is None or hi is None:
        return None
    return (lo + hi) / 2


__all__ = ["Dataset", "ExperimentResult", "generate", "run_experiment", "write_outputs",
           "write_dataset", "complete_file", "bench", "make_tracker", "BENCH_HEADER"]
