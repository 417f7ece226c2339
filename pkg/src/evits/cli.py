"""Operator surface: data generation, training, evaluation, discrepancy
measurement, gradient checking and lambda3 selection.

Every command with --seed is end-to-end deterministic, and every report
file embeds the resolved run configuration plus the toolkit version.
Exit codes: 0 success, 1 check failure, 2 usage/config error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from . import alignment, checks, data as da, metrics as me, model as mo
from . import multiscale as ms
from . import trainer as tr
from .errors import ConfigError, NumericalAbort, ToolkitError

OUTPUT_DIR_ENV = "EVITS_OUTDIR"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _default_outdir():
    return os.environ.get(OUTPUT_DIR_ENV, ".")


def _read_config_file(path):
    """Flat key=value lines; '#' starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


class _Resolver:
    """Flag value if given, else config-file value, else the default."""

    def __init__(self, args):
        self.args = args
        self.file_values = (_read_config_file(args.config)
                            if getattr(args, "config", None) else {})
        self.echo = {}

    def get(self, key, default, convert=str):
        flag = getattr(self.args, key, None)
        if flag is not None:
            value = flag
        elif key in self.file_values:
            value = convert(self.file_values[key])
        else:
            value = default
        if key != "out_dir":  # destination paths stay out of report echoes
            self.echo[key] = value
        return value


def _echo_lines(echo):
    lines = [f"# evits_version={__version__}"]
    for key in sorted(echo):
        lines.append(f"# config.{key}={echo[key]!r}")
    return lines


def _write_report(path, echo, body_lines):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(_echo_lines(echo) + body_lines) + "\n")


def _parse_int_tuple(text):
    return tuple(int(tok) for tok in str(text).split(",") if tok.strip())


def _parse_float_list(text):
    return [float(tok) for tok in str(text).split(",") if tok.strip()]


def _parse_shift(text):
    fields = {"amp": 1.0, "freq": 0.0, "noise": 0.0}
    if text:
        for chunk in str(text).split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            if "=" not in chunk:
                raise ConfigError(f"bad --shift entry {chunk!r}; use key=value")
            key, value = chunk.split("=", 1)
            key = key.strip()
            if key not in fields:
                raise ConfigError(f"unknown shift field {key!r}")
            fields[key] = float(value)
    return fields


# -- gen-data ----------------------------------------------------------------


def cmd_gen_data(args):
    resolver = _Resolver(args)
    classes = resolver.get("classes", 4, int)
    channels = resolver.get("channels", 2, int)
    length = resolver.get("length", 128, int)
    n_per_class = resolver.get("n_per_class", 50, int)
    noise = resolver.get("noise", 0.3, float)
    seed = resolver.get("seed", 0, int)
    shift = _parse_shift(resolver.get("shift", "", str))
    resolver.echo["shift"] = f"amp={shift['amp']},freq={shift['freq']},noise={shift['noise']}"
    freqs = resolver.get("class_freqs", "", str)
    amps = resolver.get("class_amps", "", str)
    out_dir = resolver.get("out_dir", _default_outdir(), str)

    spec_kwargs = dict(num_classes=classes, channels=channels, length=length,
                       n_per_class=n_per_class, noise_sigma=noise, seed=seed,
                       amp_scale=shift["amp"], freq_offset=shift["freq"],
                       extra_noise=shift["noise"])
    if freqs:
        spec_kwargs["class_freqs"] = _parse_float_list(freqs)
    if amps:
        spec_kwargs["class_amps"] = _parse_float_list(amps)
    spec = da.SynthSpec(**spec_kwargs)

    os.makedirs(out_dir, exist_ok=True)
    for domain in ("source", "target"):
        batch = da.synth_generate(spec, domain)
        path = os.path.join(out_dir, f"{domain}.evts")
        da.write_evts(batch, path)
        counts = np.bincount(batch.labels, minlength=classes)
        print(f"{path}: " + " ".join(
            f"class{c}={counts[c]}" for c in range(classes)))
    return EXIT_OK


# -- train ---------------------------------------------------------------------


def _model_config_from(resolver, source):
    n, c, t = source.values.shape
    variant = resolver.get("multiscale", "none", str)
    if variant == "none":
        num_scales, variant_tag = 0, None
    else:
        if variant not in ms.VARIANTS:
            raise ConfigError(f"--multiscale must be none or one of {ms.VARIANTS}")
        num_scales = resolver.get("scales", 2, int)
        variant_tag = variant
    widths = _parse_int_tuple(resolver.get("widths", "64,64,64", str))
    kernels = _parse_int_tuple(resolver.get("kernels", "8,5,3", str))
    seed = resolver.get("seed", 0, int)
    return mo.ModelConfig(
        channels=c, length=t, num_classes=source.num_classes,
        num_scales=num_scales, variant=variant_tag, conv_widths=widths,
        kernel_sizes=kernels, seed=seed)


def _train_config_from(resolver):
    method = resolver.get("method", "noadapt", str)
    if method not in alignment.METHODS:
        raise ConfigError(f"--method must be one of {alignment.METHODS}")
    evidential = resolver.get("evidential", "ce", str)
    if evidential not in tr.EVIDENTIAL_KINDS:
        raise ConfigError(
            f"--evidential must be one of {tr.EVIDENTIAL_KINDS}")
    lambda1 = resolver.get("lambda1", 1.0, float)
    lambda2 = resolver.get("lambda2", tr.METHOD_LAMBDA2[method], float)
    lambda3 = resolver.get("lambda3", 0.0 if evidential == "none" else 1.0,
                           float)
    if evidential == "none":
        lambda3 = 0.0
    weights = tr.LossWeights(lambda1=lambda1, lambda2=lambda2, lambda3=lambda3)
    return tr.TrainConfig(
        epochs=resolver.get("epochs", 40, int),
        batch_size=resolver.get("batch_size", 32, int),
        learning_rate=resolver.get("learning_rate", 1e-3, float),
        weight_decay=resolver.get("weight_decay", 0.0, float),
        evidential=evidential,
        method=method,
        weights=weights,
        anneal_horizon=resolver.get("anneal_horizon", 10, int),
        seed=resolver.get("seed", 0, int))


def cmd_train(args):
    resolver = _Resolver(args)
    source = da.read_evts(args.source)
    if not source.labeled:
        raise ConfigError("the source file carries no labels")
    target = da.read_evts(args.target) if args.target else None
    model_config = _model_config_from(resolver, source)
    train_config = _train_config_from(resolver)
    if train_config.method != "noadapt" and target is None:
        raise ConfigError(f"method {train_config.method!r} needs --target")

    params, log = tr.train(model_config, train_config, source, target)

    out_dir = resolver.get("out_dir", _default_outdir(), str)
    os.makedirs(out_dir, exist_ok=True)
    model_path = args.model_out or os.path.join(out_dir, "model.evtm")
    log_path = args.log_out or os.path.join(out_dir, "train_log.txt")
    mo.save(params, model_path)
    log.save(log_path)
    print(f"model written to {model_path}")
    print(f"log written to {log_path}")
    print(f"final source_val_f1={log.records[-1].source_val_f1!r}")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------


def _per_class_uncertainty_spearman(pred_f1, class_uncertainty):
    if len(pred_f1) < 3:
        return None
    return me.spearman(pred_f1, class_uncertainty)


def cmd_eval(args):
    resolver = _Resolver(args)
    params = mo.load(args.model)
    batch = da.read_evts(args.data)
    if not batch.labeled:
        raise ConfigError("evaluation needs a labeled EVTS file")
    k = params.config.num_classes
    if batch.num_classes != k:
        raise ConfigError(
            f"model expects {k} classes but the file declares {batch.num_classes}")
    bins = resolver.get("bins", me.DEFAULT_ECE_BINS, int)
    out_dir = resolver.get("out_dir", _default_outdir(), str)
    os.makedirs(out_dir, exist_ok=True)
    resolver.echo.update({"model": args.model, "data": args.data,
                          "primary_head": params.train_meta.get(
                              "primary_head", "evidential")})

    pred_e, probs_e, u = mo.predict(params, batch.values, head="evidential")
    pred_s, probs_s, _ = mo.predict(params, batch.values, head="softmax")
    primary_head = params.train_meta.get("primary_head", "evidential")
    pred_p, probs_p = ((pred_e, probs_e) if primary_head == "evidential"
                       else (pred_s, probs_s))

    truth = batch.labels
    f1_e = me.macro_f1(pred_e, truth, k)
    f1_s = me.macro_f1(pred_s, truth, k)
    ece_e, bins_e = me.ece(probs_e, truth, bins)
    ece_s, bins_s = me.ece(probs_s, truth, bins)
    confusion = me.confusion_matrix(pred_p, truth, k)
    u_stats = me.uncertainty_stats(u, domain="eval")

    per_class_f1 = []
    per_class_u = []
    for c in range(k):
        mask = truth == c
        if mask.any():
            per_class_f1.append(me.macro_f1(pred_p[mask] == c,
                                            np.ones(mask.sum(), int), 2))
            per_class_u.append(float(u[mask].mean()))
    rho = _per_class_uncertainty_spearman(per_class_f1, per_class_u)

    body = [
        f"primary_head={primary_head}",
        f"macro_f1={me.macro_f1(pred_p, truth, k)!r}",
        f"macro_f1_evidential={f1_e!r}",
        f"macro_f1_softmax={f1_s!r}",
        f"ece_evidential={ece_e!r}",
        f"ece_softmax={ece_s!r}",
        f"uncertainty_mean={u_stats.mean!r}",
        f"spearman_f1_uncertainty_per_class="
        f"{'n/a' if rho is None else repr(rho)}",
        f"samples={len(batch)}",
    ]
    _write_report(os.path.join(out_dir, "report.txt"), resolver.echo, body)

    rows = ["truth\\pred," + ",".join(str(c) for c in range(k))]
    for i in range(k):
        rows.append(str(i) + "," + ",".join(str(v) for v in confusion[i]))
    _write_report(os.path.join(out_dir, "confusion.csv"), resolver.echo, rows)

    rows = ["head,bin,count,mean_confidence,accuracy"]
    for head, table in (("evidential", bins_e), ("softmax", bins_s)):
        for b, entry in enumerate(table):
            rows.append(f"{head},{b},{entry.count},{entry.mean_confidence!r},"
                        f"{entry.accuracy!r}")
    _write_report(os.path.join(out_dir, "reliability.csv"), resolver.echo, rows)

    rows = ["bin,mass"]
    rows += [f"{b},{float(mass)!r}" for b, mass in enumerate(u_stats.histogram)]
    _write_report(os.path.join(out_dir, "uncertainty_hist.csv"),
                  resolver.echo, rows)

    confidence = probs_p.max(axis=1)
    rows = ["prediction,confidence,uncertainty"]
    rows += [f"{int(pred_p[i])},{float(confidence[i])!r},{float(u[i])!r}"
             for i in range(len(batch))]
    _write_report(os.path.join(out_dir, "per_sample.csv"), resolver.echo, rows)

    print(f"macro_f1={me.macro_f1(pred_p, truth, k)!r} "
          f"ece_evidential={ece_e!r} ece_softmax={ece_s!r}")
    print(f"reports written to {out_dir}")
    return EXIT_OK


# -- discrepancy ------------------------------------------------------------------


def cmd_discrepancy(args):
    resolver = _Resolver(args)
    params = mo.load(args.model)
    source = da.read_evts(args.source)
    target = da.read_evts(args.target)
    seed = resolver.get("seed", 0, int)
    n_proj = resolver.get("n_proj", alignment.DEFAULT_NUM_PROJECTIONS, int)
    out_dir = resolver.get("out_dir", _default_outdir(), str)
    os.makedirs(out_dir, exist_ok=True)
    resolver.echo.update({"model": args.model, "source": args.source,
                          "target": args.target})

    feats_src = mo.forward(params, source.values, mode="eval").mixed.data
    feats_tgt = mo.forward(params, target.values, mode="eval").mixed.data
    bandwidths = [float(b) for b in
                  alignment.median_heuristic_bandwidths(feats_src, feats_tgt)]
    mmd_value = float(alignment.mmd_rbf(feats_src, feats_tgt, bandwidths))
    wd_value = float(alignment.sliced_wd(feats_src, feats_tgt, n_proj,
                                         np.random.default_rng(seed)))
    body = [
        "measurement_layer=mixed (concatenated per-scale features)",
        f"mmd_rbf={mmd_value!r}",
        f"sliced_wd={wd_value!r}",
        "bandwidths=" + ",".join(repr(b) for b in bandwidths),
        f"n_projections={n_proj}",
    ]
    _write_report(os.path.join(out_dir, "discrepancy.txt"),
                  resolver.echo, body)
    print(f"mmd_rbf={mmd_value!r} sliced_wd={wd_value!r}")
    return EXIT_OK


# -- gradcheck ----------------------------------------------------------------------


def cmd_gradcheck(args):
    resolver = _Resolver(args)
    seed = resolver.get("seed", 0, int)
    points = resolver.get("points", 100, int)
    suite = resolver.get("suite", "all", str)
    names = checks.SUITES if suite == "all" else (suite,)
    failed = False
    for name in names:
        worst, tolerance = checks.run_suite(name, points=points, seed=seed)
        status = "PASS" if worst <= tolerance else "FAIL"
        failed = failed or status == "FAIL"
        print(f"suite={name} worst_rel_error={worst:.6e} "
              f"tolerance={tolerance:g} {status}")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


# -- select-lambda3 ----------------------------------------------------------------


def cmd_select_lambda3(args):
    resolver = _Resolver(args)
    source = da.read_evts(args.source)
    if not source.labeled:
        raise ConfigError("the source file carries no labels")
    target = da.read_evts(args.target)
    target_val = da.read_evts(args.target_val) if args.target_val else target
    if not target_val.labeled:
        raise ConfigError("lambda3 selection needs a labeled target subset")
    grid = _parse_float_list(resolver.get("grid", "0.01,0.1,0.5,1.0", str))
    model_config = _model_config_from(resolver, source)
    train_config = _train_config_from(resolver)
    out_dir = resolver.get("out_dir", _default_outdir(), str)
    os.makedirs(out_dir, exist_ok=True)

    best, rows = tr.select_lambda3(grid, model_config, train_config, source,
                                   target, target_val)
    lines = ["lambda3,target_f1,status"]
    for row in rows:
        f1 = "" if row["target_f1"] is None else repr(row["target_f1"])
        lines.append(f"{row['lambda3']!r},{f1},{row['status']}")
    _write_report(os.path.join(out_dir, "lambda3_risk.csv"),
                  resolver.echo, lines)
    print(f"best lambda3={best!r}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="key=value config file; flags win")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out-dir", dest="out_dir")


def _add_train_flags(sub):
    sub.add_argument("--method", choices=alignment.METHODS)
    sub.add_argument("--evidential", choices=tr.EVIDENTIAL_KINDS)
    sub.add_argument("--multiscale", choices=("none",) + ms.VARIANTS)
    sub.add_argument("--scales", type=int)
    sub.add_argument("--widths")
    sub.add_argument("--kernels")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--learning-rate", dest="learning_rate", type=float)
    sub.add_argument("--weight-decay", dest="weight_decay", type=float)
    sub.add_argument("--lambda1", type=float)
    sub.add_argument("--lambda2", type=float)
    sub.add_argument("--lambda3", type=float)
    sub.add_argument("--anneal-horizon", dest="anneal_horizon", type=int)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="evits",
        description="Uncertainty-aware domain adaptation for time series")
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="write synthetic EVTS files")
    _add_common(gen)
    gen.add_argument("--classes", type=int)
    gen.add_argument("--channels", type=int)
    gen.add_argument("--length", type=int)
    gen.add_argument("--n-per-class", dest="n_per_class", type=int)
    gen.add_argument("--noise", type=float)
    gen.add_argument("--shift", help="amp=..,freq=..,noise=..")
    gen.add_argument("--class-freqs", dest="class_freqs")
    gen.add_argument("--class-amps", dest="class_amps")
    gen.set_defaults(handler=cmd_gen_data)

    train = commands.add_parser("train", help="train a model")
    _add_common(train)
    _add_train_flags(train)
    train.add_argument("--source", required=True)
    train.add_argument("--target")
    train.add_argument("--model-out", dest="model_out")
    train.add_argument("--log-out", dest="log_out")
    train.set_defaults(handler=cmd_train)

    ev = commands.add_parser("eval", help="evaluate a model on labeled data")
    _add_common(ev)
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--bins", type=int)
    ev.set_defaults(handler=cmd_eval)

    disc = commands.add_parser("discrepancy",
                               help="feature-space MMD and sliced WD")
    _add_common(disc)
    disc.add_argument("--model", required=True)
    disc.add_argument("--source", required=True)
    disc.add_argument("--target", required=True)
    disc.add_argument("--n-proj", dest="n_proj", type=int)
    disc.set_defaults(handler=cmd_discrepancy)

    grad = commands.add_parser("gradcheck",
                               help="finite-difference gradient suites")
    _add_common(grad)
    grad.add_argument("--suite", choices=("all",) + checks.SUITES)
    grad.add_argument("--points", type=int)
    grad.set_defaults(handler=cmd_gradcheck)

    sel = commands.add_parser("select-lambda3",
                              help="grid-search lambda3 by target risk")
    _add_common(sel)
    _add_train_flags(sel)
    sel.add_argument("--source", required=True)
    sel.add_argument("--target", required=True)
    sel.add_argument("--target-val", dest="target_val")
    sel.add_argument("--grid")
    sel.set_defaults(handler=cmd_select_lambda3)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except NumericalAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
