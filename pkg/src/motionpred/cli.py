"""Command-line entry point.

Subcommands: train, benchmark, classify, latents, grad-check. Every option
may also come from a plain-text ``key = value`` config file with section
headers (INI); explicit flags override file values, file values override
preset defaults, and preset defaults override the built-ins. Each run
writes its fully resolved configuration next to its outputs so the exact
run can be reproduced from that file alone.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .benchmark import BenchmarkConfig, run_comparison
from .classifier import (ClassifierConfig, confusion_matrix, precision_recall,
                         train_classifier, window_features, write_confusion_csv)
from .data import (WindowConfig, cmu_basketball_split, default_synthetic_specs,
                   h36m_walking_split, load_dataset, make_ood_split,
                   synthesize_dataset, synthetic_split, window_samples)
from .latent import export_latents_csv, export_projection_csv, extract_latents, project_pca_2d
from .model import ModelConfig, build_model
from .training import (TrainConfig, load_checkpoint, make_loss_builder,
                       prepare_arrays, save_checkpoint, train)

PRESETS = ("synthetic", "h36m-walking", "cmu-basketball")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# option registry: (section, name, type, default, help)
# ---------------------------------------------------------------------------

def _int_list(text):
    return tuple(int(v) for v in str(text).split(",") if v != "")


_COMMON = [
    ("run", "preset", str, "synthetic", "data preset: " + "/".join(PRESETS)),
    ("run", "data_root", str, None, "dataset root for the h36m/cmu presets"),
    ("run", "seed", int, 0, "master RNG seed"),
    ("data", "representation", str, "exp-map-angle", "exp-map-angle or cartesian-3d"),
    ("data", "n_observed", int, 10, "observed frames per window (N)"),
    ("data", "n_future", int, 10, "future frames predicted per pass (T)"),
    ("data", "n_coeffs", int, None, "retained coefficients (M); default N+T"),
    ("data", "fps", float, 25.0, "frame rate used for horizon indexing"),
    ("data", "synth_classes", int, 4, "synthetic preset: number of classes"),
    ("data", "synth_joints", int, 6, "synthetic preset: joints per pose"),
    ("data", "synth_sequences", int, 8, "synthetic preset: sequences per class per subject"),
    ("data", "synth_length", int, 75, "synthetic preset: frames per sequence"),
    ("data", "synth_noise", float, 0.05, "synthetic preset: noise std"),
    ("data", "synth_seed", int, 1234, "synthetic preset: generator seed"),
    ("model", "hidden", int, 64, "hidden width of every graph layer"),
    ("model", "blocks", int, 4, "residual block count of the trunk"),
    ("model", "recognition_blocks", int, None, "trunk depth shared with the recognizer"),
    ("model", "decoder_blocks", int, None, "decoder block count"),
    ("model", "latent_width", int, 8, "latent dimensions per joint (n_z)"),
]

_TRAIN = [
    ("train", "learning_rate", float, 5e-4, "Adam learning rate (constant)"),
    ("train", "batch_size", int, 16, "training batch size"),
    ("train", "epochs", int, 50, "training epochs"),
    ("train", "clip_norm", float, 1.0, "max global gradient L2 norm"),
    ("train", "lambda", float, 0.003, "weight of the variational bound"),
    ("train", "p_drop", float, 0.3, "dropout probability"),
    ("train", "early_stop_patience", int, 10, "epochs without improvement before stopping"),
    ("train", "train_stride", int, 3, "stride of training window extraction"),
]

_BENCH = [
    ("bench", "seeds", _int_list, (0, 1, 2), "comma-separated seed list"),
    ("bench", "horizons", _int_list, (80, 160, 320, 400), "horizon grid in ms"),
    ("bench", "eval_stride", int, None, "stride of evaluation windows; default T"),
]

_CLASSIFY = [
    ("classifier", "cls_epochs", int, 30, "classifier training epochs"),
    ("classifier", "cls_batch", int, 256, "classifier batch size"),
    ("classifier", "cls_learning_rate", float, 1e-3, "classifier learning rate"),
    ("classifier", "cls_p_drop", float, 0.5, "classifier dropout"),
    ("classifier", "eval_subject", str, None, "subject evaluated; default the test subject"),
]

_GRADCHECK = [
    ("gradcheck", "gc_nodes", int, 6, "joints of the check instance"),
    ("gradcheck", "gc_coeffs", int, 8, "input width of the check instance"),
    ("gradcheck", "gc_hidden", int, 16, "hidden width of the check instance"),
    ("gradcheck", "gc_blocks", int, 2, "trunk blocks of the check instance"),
    ("gradcheck", "gc_latent", int, 4, "latent width of the check instance"),
    ("gradcheck", "gc_step", float, 1e-5, "finite-difference step"),
    ("gradcheck", "gc_tol", float, 1e-4, "max relative error tolerated"),
    ("gradcheck", "lambdas", str, "0,0.003,1", "comma-separated weights to sweep"),
]

PRESET_DEFAULTS = {
    "synthetic": {},
    "h36m-walking": {"hidden": 256, "blocks": 12, "n_coeffs": 20},
    "cmu-basketball": {"hidden": 256, "blocks": 12, "n_coeffs": 35,
                       "n_observed": 10, "n_future": 25},
}

_OPTION_SETS = {
    "train": _COMMON + _TRAIN,
    "benchmark": _COMMON + _TRAIN + _BENCH,
    "classify": _COMMON + _CLASSIFY,
    "latents": _COMMON,
    "grad-check": _GRADCHECK,
}


def _add_options(parser, options, need_out=True):
    parser.add_argument("--config", type=str, default=None,
                        help="INI config file supplying defaults")
    if need_out:
        parser.add_argument("--out", type=str, default=None, help="output directory")
    for _, name, typ, _, help_text in options:
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, type=str, default=None, help=help_text, dest=name)


def _resolve(args, options, subcommand):
    """flag > config file > preset default > built-in default."""
    file_values = {}
    if args.config:
        cp = configparser.ConfigParser()
        read = cp.read(args.config)
        if not read:
            raise UsageError(f"config file {args.config} not found")
        for section in cp.sections():
            for key, value in cp[section].items():
                file_values[key] = value
    preset = getattr(args, "preset", None) or file_values.get("preset") \
        or next(d for s, n, t, d, h in _COMMON if n == "preset")
    if preset not in PRESETS and subcommand != "grad-check":
        raise UsageError(f"unknown preset {preset!r}; choose from {PRESETS}")
    preset_defaults = PRESET_DEFAULTS.get(preset, {})

    resolved = {}
    for section, name, typ, default, _ in options:
        raw = getattr(args, name, None)
        if raw is None:
            raw = file_values.get(name)
        if raw is None and name in preset_defaults:
            resolved[name] = preset_defaults[name]
            continue
        if raw is None or str(raw).lower() == "none":
            resolved[name] = default
            continue
        try:
            resolved[name] = typ(raw)
        except (TypeError, ValueError):
            raise UsageError(f"bad value for --{name.replace('_', '-')}: {raw!r}")
    out = getattr(args, "out", None) or file_values.get("out")
    resolved["out"] = out
    resolved["subcommand"] = subcommand
    return resolved


def _write_resolved(resolved, options, path):
    cp = configparser.ConfigParser()
    cp["run"] = {}
    cp["run"]["subcommand"] = str(resolved["subcommand"])
    if resolved.get("out") is not None:
        cp["run"]["out"] = str(resolved["out"])
    for section, name, _, _, _ in options:
        if section not in cp:
            cp[section] = {}
        value = resolved.get(name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        cp[section][name] = "none" if value is None else str(value)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        cp.write(fh)


def _require_out(resolved):
    if not resolved.get("out"):
        raise UsageError("--out is required")
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

def _window_config(r):
    return WindowConfig(n_observed=r["n_observed"], n_future=r["n_future"],
                        n_coeffs=r["n_coeffs"])


def _load_preset(r):
    """Returns (sequences, split_spec)."""
    preset = r["preset"]
    if preset == "synthetic":
        wc = _window_config(r)
        specs = default_synthetic_specs(
            n_classes=r["synth_classes"], n_joints=r["synth_joints"], fps=r["fps"],
            window_len=wc.seq_len, noise_std=r["synth_noise"],
            base_seed=r["synth_seed"])
        sequences = synthesize_dataset(specs, r["synth_sequences"],
                                       r["synth_length"], r["fps"])
        return sequences, synthetic_split(specs)
    if not r["data_root"]:
        raise UsageError(f"preset {preset!r} needs --data-root")
    root = Path(r["data_root"])
    if not root.is_dir():
        raise UsageError(f"dataset root {root} does not exist")
    sequences = load_dataset(root, r["representation"])
    spec = h36m_walking_split() if preset == "h36m-walking" else cmu_basketball_split()
    return sequences, spec


def _model_config(r, nodes, vlb_weight, p_drop, wc):
    return ModelConfig(nodes=nodes, input_width=wc.n_coeffs, seq_len=wc.seq_len,
                       hidden=r["hidden"], blocks=r["blocks"], p_drop=p_drop,
                       with_vae=vlb_weight > 0, latent_width=r["latent_width"],
                       recognition_blocks=r["recognition_blocks"],
                       decoder_blocks=r["decoder_blocks"])


def _train_config(r, vlb_weight=None, p_drop=None):
    return TrainConfig(learning_rate=r["learning_rate"], batch_size=r["batch_size"],
                       epochs=r["epochs"], clip_norm=r["clip_norm"],
                       vlb_weight=r["lambda"] if vlb_weight is None else vlb_weight,
                       p_drop=r["p_drop"] if p_drop is None else p_drop,
                       latent_width=r["latent_width"], seed=r["seed"],
                       early_stop_patience=r["early_stop_patience"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(resolved):
    out = _require_out(resolved)
    if resolved["lambda"] < 0:
        raise UsageError("--lambda must be >= 0")
    sequences, spec = _load_preset(resolved)
    split = make_ood_split(sequences, spec)
    wc = _window_config(resolved)
    cfg = _train_config(resolved)
    nodes = split.train[0].n_params
    model = build_model(_model_config(resolved, nodes, cfg.vlb_weight,
                                      cfg.p_drop, wc), cfg.seed)
    stride = resolved["train_stride"]
    train_windows = [w for seq in split.train
                     for w in window_samples(seq, wc.n_observed, wc.n_future, stride)]
    val_windows = [w for seq in split.val
                   for w in window_samples(seq, wc.n_observed, wc.n_future, stride)] or None
    result = train(model, train_windows, wc, cfg, val_windows=val_windows,
                   log_path=out / "loss_log.csv")
    save_checkpoint(model, out / "checkpoint.bin",
                    extra={"best_epoch": result.best_epoch, "seed": cfg.seed})
    _write_resolved(resolved, _OPTION_SETS["train"], out / "run_config.ini")
    print(f"trained {result.steps} steps; best epoch {result.best_epoch} "
          f"(val {result.best_val:.6f})")
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    return 0


def cmd_benchmark(resolved):
    out = _require_out(resolved)
    sequences, spec = _load_preset(resolved)
    split = make_ood_split(sequences, spec)
    wc = _window_config(resolved)
    bench = BenchmarkConfig(window=wc, horizons_ms=tuple(resolved["horizons"]),
                            fps=resolved["fps"], train_stride=resolved["train_stride"],
                            eval_stride=resolved["eval_stride"], hidden=resolved["hidden"],
                            blocks=resolved["blocks"],
                            recognition_blocks=resolved["recognition_blocks"],
                            decoder_blocks=resolved["decoder_blocks"])
    base_cfg = _train_config(resolved)
    report = run_comparison(split, bench, base_cfg, tuple(resolved["seeds"]),
                            out_dir=out, representation=resolved["representation"])
    _write_resolved(resolved, _OPTION_SETS["benchmark"], out / "run_config.ini")
    for key, msg in report.failures.items():
        print(f"seed failure {key}: {msg}", file=sys.stderr)
    print(report.trend)
    print(f"results: {out / 'results.csv'}")
    n_variants = len({r.model for r in report.results})
    if n_variants == 0:
        print("all seeds failed", file=sys.stderr)
        return 2
    return 0


def cmd_classify(resolved):
    out = _require_out(resolved)
    sequences, spec = _load_preset(resolved)
    wc = _window_config(resolved)
    actions = sorted({s.action for s in sequences})
    eval_subject = resolved["eval_subject"] or spec.test_subject
    train_feats, train_labels, eval_feats, eval_labels = [], [], [], []
    for seq in sequences:
        if seq.subject in spec.train_subjects:
            dest_f, dest_l = train_feats, train_labels
        elif seq.subject == eval_subject:
            dest_f, dest_l = eval_feats, eval_labels
        else:
            continue
        windows = window_samples(seq, wc.n_observed, wc.n_future, resolved.get("train_stride", 3))
        dest_f.append(window_features(windows, wc))
        dest_l.extend([actions.index(seq.action)] * len(windows))
    if not train_feats or not eval_feats:
        raise UsageError(f"no classifier data for subjects "
                         f"{spec.train_subjects} / {eval_subject}")
    x_train = np.concatenate(train_feats)
    x_eval = np.concatenate(eval_feats)
    cfg = ClassifierConfig(input_dim=x_train.shape[1], classes=len(actions),
                           p_drop=resolved["cls_p_drop"],
                           batch_size=resolved["cls_batch"],
                           learning_rate=resolved["cls_learning_rate"],
                           epochs=resolved["cls_epochs"], seed=resolved["seed"])
    clf, _ = train_classifier(x_train, np.array(train_labels), cfg)
    matrix = confusion_matrix(clf, x_eval, np.array(eval_labels))
    precision, recall = precision_recall(matrix)
    write_confusion_csv(matrix, actions, out / "confusion.csv")
    _write_resolved(resolved, _OPTION_SETS["classify"], out / "run_config.ini")
    id_idx = actions.index(spec.id_action)
    for i, action in enumerate(actions):
        mark = " (ID)" if i == id_idx else ""
        print(f"{action}{mark}: precision {precision[i]:.3f}  recall {recall[i]:.3f}")
    print(f"confusion matrix: {out / 'confusion.csv'}")
    return 0


def cmd_latents(resolved, checkpoint):
    out = _require_out(resolved)
    if not checkpoint:
        raise UsageError("--checkpoint is required")
    if not Path(checkpoint).is_file():
        raise UsageError(f"checkpoint {checkpoint} does not exist")
    model = load_checkpoint(checkpoint, with_vae=True)
    if model.vae is None:
        print("error: checkpoint has no variational branch (trained with lambda=0?)",
              file=sys.stderr)
        return 2
    sequences, _ = _load_preset(resolved)
    wc = _window_config(resolved)
    labeled = []
    for seq in sequences:
        for w in window_samples(seq, wc.n_observed, wc.n_future, wc.n_future):
            labeled.append((seq.action, w))
    records = extract_latents(model, labeled, wc)
    export_latents_csv(records, out / "latents.csv")
    export_projection_csv(project_pca_2d(records), out / "projection.csv")
    _write_resolved(resolved, _OPTION_SETS["latents"], out / "run_config.ini")
    print(f"{len(records)} latent vectors of dim {records[0].vector.size}")
    print(f"latents: {out / 'latents.csv'}; projection: {out / 'projection.csv'}")
    return 0


def cmd_grad_check(resolved):
    from .autodiff import grad_check
    from .data import TrajectoryWindow

    k = resolved["gc_nodes"]
    m = resolved["gc_coeffs"]
    wc = WindowConfig(n_observed=4, n_future=4, n_coeffs=m)
    rng = np.random.default_rng(7)
    windows = [TrajectoryWindow(rng.uniform(-1, 1, size=(k, wc.seq_len)), wc.n_observed)
               for _ in range(2)]
    arrays = prepare_arrays(windows, wc)
    lambdas = [float(v) for v in str(resolved["lambdas"]).split(",")]
    all_ok = True
    for lam in lambdas:
        cfg = ModelConfig(nodes=k, input_width=m, seq_len=wc.seq_len,
                          hidden=resolved["gc_hidden"], blocks=resolved["gc_blocks"],
                          p_drop=0.0, with_vae=True,
                          latent_width=resolved["gc_latent"],
                          recognition_blocks=resolved["gc_blocks"],
                          decoder_blocks=resolved["gc_blocks"])
        model = build_model(cfg, 11)
        eps = np.random.default_rng(3).standard_normal((2, k, cfg.latent_width))
        build = make_loss_builder(model, arrays, wc, lam, eps=eps)
        report = grad_check(build, model.parameters(), step=resolved["gc_step"],
                            tol=resolved["gc_tol"])
        worst = max(report.per_leaf.values())
        status = "ok" if report.ok else f"FAIL ({len(report.failed)} leaves)"
        print(f"lambda={lam:g}: {status}, worst rel err {worst:.3e}")
        all_ok &= report.ok
    return 0 if all_ok else 2


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser():
    parser = _Parser(prog="motionpred",
                     description="joint-trajectory prediction with an "
                                 "out-of-distribution benchmark")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, options in _OPTION_SETS.items():
        p = sub.add_parser(name, parents=[], add_help=True)
        _add_options(p, options, need_out=(name != "grad-check"))
        if name == "latents":
            p.add_argument("--checkpoint", type=str, default=None,
                           help="checkpoint with a variational branch")
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        resolved = _resolve(args, _OPTION_SETS[args.subcommand], args.subcommand)
        if args.subcommand == "train":
            return cmd_train(resolved)
        if args.subcommand == "benchmark":
            return cmd_benchmark(resolved)
        if args.subcommand == "classify":
            return cmd_classify(resolved)
        if args.subcommand == "latents":
            return cmd_latents(resolved, args.checkpoint)
        if args.subcommand == "grad-check":
            return cmd_grad_check(resolved)
        raise UsageError(f"unknown subcommand {args.subcommand!r}")
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError, ad.NonFiniteError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
