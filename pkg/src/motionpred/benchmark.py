"""Out-of-distribution benchmark: train on the ID action, evaluate every
action per horizon, aggregate over seeds, emit result tables.

Long horizons beyond the model's native future length are produced by
recursive prediction: the model's own output is appended to the history and
fed back in until enough future frames exist.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import OodSplit, WindowConfig, window_samples
from .dct import dct_forward, dct_inverse, pad_replicate
from .losses import horizon_errors, horizon_frame
from .model import ModelConfig, build_model
from .training import TrainConfig, TrainingDiverged, train


@dataclass
class BenchmarkResult:
    model: str
    action: str
    horizon_ms: int
    value: float
    seed: int
    representation: str = "exp-map-angle"


@dataclass
class AggregateRow:
    model: str
    action: str
    horizons_ms: tuple
    means: tuple
    stds: tuple
    n_seeds: int
    single_seed: bool


@dataclass
class BenchmarkConfig:
    window: WindowConfig
    horizons_ms: tuple = (80, 160, 320, 400)
    fps: float = 25.0
    train_stride: int = 1
    eval_stride: int | None = None     # defaults to the native future length
    metric: str = "angle"
    hidden: int = 32
    blocks: int = 4
    recognition_blocks: int | None = None
    decoder_blocks: int | None = None

    def __post_init__(self):
        if self.eval_stride is None:
            self.eval_stride = self.window.n_future

    @property
    def eval_future(self):
        """Future frames needed to cover the largest horizon."""
        return max(horizon_frame(ms, self.fps) for ms in self.horizons_ms)


OOD_AVERAGE_ACTION = "ood_average"


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def predict_window(model, observed, wc: WindowConfig):
    """Single eval-mode prediction: pad the history, transform, forward,
    invert. Returns the full K x (N+T) time-domain window."""
    padded = pad_replicate(observed, wc.n_future)
    coeffs = dct_forward(padded, wc.n_coeffs)
    out = model.forward(ad.Tensor(coeffs[None]), training=False, run_vae=False)
    return dct_inverse(out.dct_out.value[0], wc.seq_len)


def recursive_predict(model, history, total_future, wc: WindowConfig):
    """Predict total_future frames by repeatedly forecasting the model's
    native T frames and sliding the history window over its own output."""
    if total_future < 1:
        raise ValueError("total_future must be >= 1")
    history = np.asarray(history, dtype=np.float64)
    chunks = []
    produced = 0
    while produced < total_future:
        window = predict_window(model, history[:, -wc.n_observed:], wc)
        future = window[:, wc.n_observed:]
        chunks.append(future)
        produced += future.shape[1]
        history = np.concatenate([history, future], axis=1)
    return np.concatenate(chunks, axis=1)[:, :total_future]


def evaluate_action(model, sequences, bench: BenchmarkConfig):
    """Mean per-horizon error over evaluation windows of the given action's
    sequences. Evaluation windows carry enough true future to cover the
    largest horizon and are drawn with the configured stride."""
    wc = bench.window
    eval_future = bench.eval_future
    per_horizon = {ms: [] for ms in bench.horizons_ms}
    for seq in sequences:
        for w in window_samples(seq, wc.n_observed, eval_future, bench.eval_stride):
            pred = recursive_predict(model, w.observed, eval_future, wc)
            for ms, err in horizon_errors(pred, w.future, bench.horizons_ms,
                                          bench.fps, metric=bench.metric):
                per_horizon[ms].append(err)
    if any(not v for v in per_horizon.values()):
        raise ValueError("no evaluation windows; sequences too short for the horizon grid")
    return {ms: float(np.mean(v)) for ms, v in per_horizon.items()}


# ---------------------------------------------------------------------------
# the benchmark protocol
# ---------------------------------------------------------------------------

def _model_config(bench: BenchmarkConfig, nodes, train_cfg: TrainConfig) -> ModelConfig:
    return ModelConfig(
        nodes=nodes, input_width=bench.window.n_coeffs,
        seq_len=bench.window.seq_len, hidden=bench.hidden, blocks=bench.blocks,
        p_drop=train_cfg.p_drop, with_vae=train_cfg.vlb_weight > 0,
        latent_width=train_cfg.latent_width,
        recognition_blocks=bench.recognition_blocks,
        decoder_blocks=bench.decoder_blocks)


def run_seed(split: OodSplit, bench: BenchmarkConfig, train_cfg: TrainConfig,
             seed, model_tag, log_path=None, representation="exp-map-angle"):
    """Train one model on the ID action and evaluate every action."""
    wc = bench.window
    cfg = TrainConfig(**{**train_cfg.__dict__, "seed": seed})
    nodes = split.train[0].n_params
    model = build_model(_model_config(bench, nodes, cfg), seed)
    train_windows = [w for seq in split.train
                     for w in window_samples(seq, wc.n_observed, wc.n_future,
                                             bench.train_stride)]
    val_windows = [w for seq in split.val
                   for w in window_samples(seq, wc.n_observed, wc.n_future,
                                           bench.train_stride)] or None
    train(model, train_windows, wc, cfg, val_windows=val_windows, log_path=log_path)

    rows = []
    actions = [(split.train[0].action, split.test_id)] + sorted(split.test_ood.items())
    for action, sequences in actions:
        for ms, err in sorted(evaluate_action(model, sequences, bench).items()):
            rows.append(BenchmarkResult(model=model_tag, action=action,
                                        horizon_ms=ms, value=err, seed=seed,
                                        representation=representation))
    return rows, model


def run_benchmark(split: OodSplit, bench: BenchmarkConfig, train_cfg: TrainConfig,
                  seeds, model_tag="model", log_dir=None,
                  representation="exp-map-angle"):
    """Run every seed independently; a diverging seed is reported without
    aborting the rest. Returns (results, failures: seed -> message)."""
    if not seeds:
        raise ValueError("need at least one seed")
    results, failures = [], {}
    for seed in seeds:
        log_path = (Path(log_dir) / f"loss_{model_tag}_seed{seed}.csv"
                    if log_dir is not None else None)
        try:
            rows, _ = run_seed(split, bench, train_cfg, seed, model_tag,
                               log_path=log_path, representation=representation)
            results.extend(rows)
        except TrainingDiverged as err:
            failures[seed] = str(err)
    return results, failures


def ood_average_rows(results, ood_actions, label=OOD_AVERAGE_ACTION):
    """Per (model, seed, horizon) unweighted mean over the OoD actions,
    appended as a pseudo-action row."""
    ood = set(ood_actions)
    cells = {}
    for r in results:
        if r.action in ood:
            cells.setdefault((r.model, r.seed, r.horizon_ms, r.representation),
                             []).append(r.value)
    rows = []
    for (model_tag, seed, ms, rep), values in sorted(cells.items()):
        if len(values) != len(ood):
            raise ValueError(f"missing OoD cells for model={model_tag} seed={seed} ms={ms}")
        rows.append(BenchmarkResult(model=model_tag, action=label, horizon_ms=ms,
                                    value=float(np.mean(values)), seed=seed,
                                    representation=rep))
    return rows


def aggregate_seeds(results):
    """Mean and (n-1)-denominator std per (model, action, horizon); a single
    seed reports std 0 and is flagged."""
    grouped = {}
    for r in results:
        grouped.setdefault((r.model, r.action), {}).setdefault(r.horizon_ms, []).append(r.value)
    rows = []
    for (model_tag, action), horizons in sorted(grouped.items()):
        ms_sorted = tuple(sorted(horizons))
        means, stds, counts = [], [], []
        for ms in ms_sorted:
            vals = np.asarray(horizons[ms], dtype=np.float64)
            means.append(float(vals.mean()))
            stds.append(float(vals.std(ddof=1)) if len(vals) > 1 else 0.0)
            counts.append(len(vals))
        n_seeds = counts[0]
        if any(c != n_seeds for c in counts):
            raise ValueError(f"uneven seed counts for {model_tag}/{action}")
        rows.append(AggregateRow(model=model_tag, action=action, horizons_ms=ms_sorted,
                                 means=tuple(means), stds=tuple(stds),
                                 n_seeds=n_seeds, single_seed=n_seeds == 1))
    return rows


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def write_raw_csv(results, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "action", "horizon_ms", "value", "seed", "representation"])
        for r in results:
            w.writerow([r.model, r.action, r.horizon_ms, repr(r.value), r.seed,
                        r.representation])


def read_raw_csv(path):
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(BenchmarkResult(model=rec["model"], action=rec["action"],
                                        horizon_ms=int(rec["horizon_ms"]),
                                        value=float(rec["value"]),
                                        seed=int(rec["seed"]),
                                        representation=rec["representation"]))
    return rows


def write_aggregate_csv(agg_rows, path):
    if not agg_rows:
        raise ValueError("nothing to emit")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "action", "horizon_ms", "mean", "std", "n_seeds"])
        for row in agg_rows:
            for ms, mean, std in zip(row.horizons_ms, row.means, row.stds):
                w.writerow([row.model, row.action, ms, repr(mean), repr(std),
                            row.n_seeds])


def read_aggregate_csv(path):
    records = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            records.append((rec["model"], rec["action"], int(rec["horizon_ms"]),
                            float(rec["mean"]), float(rec["std"]), int(rec["n_seeds"])))
    return records


def format_text_table(agg_rows):
    """Aligned text: one block per model, actions across the columns, one
    row per horizon."""
    lines = []
    by_model = {}
    for row in agg_rows:
        by_model.setdefault(row.model, []).append(row)
    for model_tag, rows in sorted(by_model.items()):
        actions = [r.action for r in rows]
        horizons = rows[0].horizons_ms
        cells = {(r.action, ms): f"{m:.4f}±{s:.4f}"
                 for r in rows for ms, m, s in zip(r.horizons_ms, r.means, r.stds)}
        width = max(12, *(len(a) for a in actions)) + 2
        lines.append(f"model: {model_tag} (mean±std over {rows[0].n_seeds} seeds)")
        lines.append("ms".ljust(8) + "".join(a.rjust(width) for a in actions))
        for ms in horizons:
            line = str(ms).ljust(8)
            line += "".join(cells.get((a, ms), "-").rjust(width) for a in actions)
            lines.append(line)
        lines.append("")
    return "\n".join(lines)


def write_text_table(agg_rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_text_table(agg_rows) + "\n")


# ---------------------------------------------------------------------------
# the two-variant comparison harness
# ---------------------------------------------------------------------------

DEFAULT_VARIANTS = {
    "gcn": {"vlb_weight": 0.0, "p_drop": 0.5},
    "hybrid": {"vlb_weight": 0.003, "p_drop": 0.3},
}


@dataclass
class ComparisonReport:
    results: list
    aggregates: list
    failures: dict
    trend: str


def run_comparison(split: OodSplit, bench: BenchmarkConfig,
                   base_train_cfg: TrainConfig, seeds, out_dir=None,
                   variants=None, representation="exp-map-angle"):
    """Train every variant under identical seeds so differences isolate the
    generative branch; emit raw and aggregated CSVs plus the text table."""
    variants = variants or DEFAULT_VARIANTS
    all_results, failures = [], {}
    for tag, overrides in variants.items():
        cfg = TrainConfig(**{**base_train_cfg.__dict__, **overrides})
        rows, fails = run_benchmark(split, bench, cfg, seeds, model_tag=tag,
                                    log_dir=out_dir, representation=representation)
        all_results.extend(rows)
        failures.update({f"{tag}/seed{s}": msg for s, msg in fails.items()})
    ood_actions = [a for a in {r.action for r in all_results}
                   if a != split.train[0].action]
    with_avg = all_results + ood_average_rows(all_results, ood_actions)
    aggregates = aggregate_seeds(with_avg)
    trend = _trend_summary(aggregates)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_raw_csv(with_avg, out_dir / "results_raw.csv")
        write_aggregate_csv(aggregates, out_dir / "results.csv")
        write_text_table(aggregates, out_dir / "results_table.txt")
    return ComparisonReport(results=with_avg, aggregates=aggregates,
                            failures=failures, trend=trend)


def _trend_summary(aggregates):
    """Report (not gate) how the hybrid compares with the plain model on the
    OoD average at the longest horizon."""
    cells = {}
    for row in aggregates:
        if row.action == OOD_AVERAGE_ACTION:
            ms = row.horizons_ms[-1]
            cells[row.model] = (ms, row.means[-1])
    if set(cells) < {"gcn", "hybrid"}:
        return "trend: n/a (needs both the gcn and hybrid variants)"
    ms, gcn_val = cells["gcn"]
    _, hyb_val = cells["hybrid"]
    verdict = "<=" if hyb_val <= gcn_val else ">"
    return (f"trend: OoD average at {ms} ms, hybrid {hyb_val:.4f} {verdict} "
            f"gcn {gcn_val:.4f}")
