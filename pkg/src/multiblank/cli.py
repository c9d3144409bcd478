"""Command line entry point: ``multiblank {verify,train,decode,bench,emissions}``.

Every command writes a JSON report (and CSV tables where useful) into
``--out``. Options may also come from ``--config file.json`` whose keys are
the long option names with dashes turned into underscores; explicit flags win
over the file, the file wins over built-in defaults.

Exit codes: 0 ok, 1 tolerance or assertion failure, 2 usage or configuration
error, 3 I/O error.
"""

import argparse
import csv
import datetime
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .data import DatasetFormatError, SynthConfig, load_dataset, synth_generate
from .decode import (
    batched_greedy_decode,
    emission_histogram,
    greedy_decode,
    speedup_report,
    token_error_rate,
)
from .loss import BlankSet, LossConfig, loss_and_grad
from .oracle import (
    OracleLimitError,
    brute_force_loss,
    finite_diff_grad,
    path_length_range,
    standard_transducer_loss,
)
from .toymodel import (
    CheckpointError,
    ModelDims,
    TrainConfig,
    load_checkpoint,
    make_scorer,
    save_checkpoint,
    train,
)

logger = logging.getLogger("multiblank")

REPORT_FORMAT = "multiblank-report/1"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3

DEFAULTS = {
    "seed": 0,
    "sigma": 0.05,
    "blanks": "1",
    "batch_size": 1,
    "max_symbols": 10,
    "out": ".",
    # verify
    "trials": 1000,
    "grad_trials": 100,
    "max_T": 6,
    "max_U": 4,
    "max_V": 5,
    "grad_max_T": 4,
    "grad_max_U": 2,
    "grad_max_V": 3,
    "loss_tol": 1e-9,
    "grad_tol": 1e-4,
    "fd_step": 1e-5,
    # data / train
    "data": None,
    "test_data": None,
    "synth_count": 2000,
    "synth_test_count": 200,
    "synth_seed": 1,
    "vocab": 8,
    "feat_dim": 8,
    "repeat_factor": 6,
    "repeat_jitter": 1,
    "noise_std": 0.3,
    "min_labels": 2,
    "max_labels": 6,
    "steps": 1500,
    "learning_rate": 0.01,
    "momentum": 0.9,
    "train_batch_size": 8,
    "hidden": 32,
    "enc_dim": 32,
    "embed_dim": 16,
    "joint_dim": 32,
    "context": 3,
    # decode / bench
    "checkpoint": None,
    "baseline": None,
    "candidate": None,
}


class UsageError(Exception):
    pass


class ToleranceFailure(Exception):
    pass


def _add_common(p):
    p.add_argument("--config", help="JSON file of option values")
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float, help="under-normalization strength (default 0.05)")
    p.add_argument("--blanks", help="comma separated blank durations, must include 1")
    p.add_argument("--batch-size", type=int, help="decoding batch size (default 1 = exact)")
    p.add_argument("--max-symbols", type=int, help="labels allowed per frame (default 10)")
    p.add_argument("--out", help="output directory")


def _add_data(p, train_side=False):
    p.add_argument("--data", help="JSON-lines corpus; synthesized when omitted")
    if train_side:
        p.add_argument("--test-data", help="held-out JSON-lines corpus")
        p.add_argument("--synth-count", type=int)
    p.add_argument("--synth-test-count", type=int)
    p.add_argument("--synth-seed", type=int)
    p.add_argument("--vocab", type=int)
    p.add_argument("--feat-dim", type=int)
    p.add_argument("--repeat-factor", type=int)
    p.add_argument("--repeat-jitter", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--min-labels", type=int)
    p.add_argument("--max-labels", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="multiblank", argument_default=argparse.SUPPRESS)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", argument_default=argparse.SUPPRESS,
                       help="check the DP loss against the brute-force oracle")
    _add_common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--grad-trials", type=int)
    for name in ("max-T", "max-U", "max-V", "grad-max-T", "grad-max-U", "grad-max-V"):
        p.add_argument(f"--{name}", type=int, dest=name.replace("-", "_"))
    p.add_argument("--loss-tol", type=float)
    p.add_argument("--grad-tol", type=float)
    p.add_argument("--fd-step", type=float)

    p = sub.add_parser("train", argument_default=argparse.SUPPRESS, help="train the toy model")
    _add_common(p)
    _add_data(p, train_side=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--train-batch-size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--enc-dim", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--joint-dim", type=int)
    p.add_argument("--context", type=int)

    p = sub.add_parser("decode", argument_default=argparse.SUPPRESS, help="greedy decoding")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint")

    p = sub.add_parser("bench", argument_default=argparse.SUPPRESS,
                       help="decoding-step speedup of a candidate over a baseline")
    _add_common(p)
    _add_data(p)
    p.add_argument("--baseline")
    p.add_argument("--candidate")

    p = sub.add_parser("emissions", argument_default=argparse.SUPPRESS,
                       help="emission counts per symbol kind")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint")
    return parser


def resolve_options(ns):
    """Merge defaults < config file < explicit flags into one dict."""
    explicit = dict(vars(ns))
    command = explicit.pop("command")
    opts = dict(DEFAULTS)
    path = explicit.pop("config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                from_file = json.load(f)
        except OSError:
            raise
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise UsageError(f"config {path}: expected a JSON object")
        unknown = set(from_file) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"config {path}: unknown keys {sorted(unknown)}")
        opts.update(from_file)
    opts.update(explicit)
    opts["command"] = command
    try:
        opts["blank_set"] = BlankSet.parse(opts["blanks"])
    except ValueError as exc:
        raise UsageError(f"--blanks: {exc}") from exc
    if opts["sigma"] < 0:
        raise UsageError(f"--sigma must be >= 0, got {opts['sigma']}")
    if opts["batch_size"] < 1:
        raise UsageError(f"--batch-size must be >= 1, got {opts['batch_size']}")
    if opts["max_symbols"] < 1:
        raise UsageError(f"--max-symbols must be >= 1, got {opts['max_symbols']}")
    return opts


def _config_echo(opts, keys):
    echo = {k: opts[k] for k in keys}
    echo["blank_set"] = list(opts["blank_set"].durations)
    echo["sigma"] = opts["sigma"]
    echo["seed"] = opts["seed"]
    return echo


def make_report(command, config, metrics, artifacts=None, timing=None):
    for key, value in _walk_numbers(metrics):
        if not np.isfinite(value):
            raise ValueError(f"metric {key} is not finite: {value}")
    return {
        "format": REPORT_FORMAT,
        "version": __version__,
        "command": command,
        "config": config,
        "metrics": metrics,
        "artifacts": artifacts or {},
        # the two fields below vary run to run and are left out of comparisons
        "timing": timing or {},
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _walk_numbers(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _walk_numbers(v, f"{prefix}{k}.")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from _walk_numbers(v, f"{prefix}{i}.")
    elif isinstance(obj, (float, int)) and not isinstance(obj, bool):
        yield prefix.rstrip("."), obj


def write_json(path, record):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _out_dir(opts):
    os.makedirs(opts["out"], exist_ok=True)
    return opts["out"]


# ---------------------------------------------------------------- verify


def _random_instance(rng, max_T, max_U, max_V):
    T = int(rng.integers(1, max_T + 1))
    U = int(rng.integers(0, max_U + 1))
    V = int(rng.integers(1, max_V + 1))
    extra = [m for m in (2, 3, 4) if rng.random() < 0.5]
    blank_set = BlankSet(tuple([1] + extra))
    z = rng.normal(0.0, 2.0, size=(T, U + 1, V + len(blank_set)))
    labels = rng.integers(0, V, size=U).tolist()
    sigma = float(rng.choice([0.0, 0.05, 0.2]))
    return z, labels, LossConfig(sigma, blank_set)


def relative_error(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def cmd_verify(opts):
    for key, cap in (("max_T", 12), ("max_U", 6), ("grad_max_T", 12), ("grad_max_U", 6)):
        if opts[key] > cap:
            raise UsageError(f"--{key.replace('_', '-')}={opts[key]} exceeds oracle cap {cap}")
    if opts["trials"] < 0 or opts["grad_trials"] < 0:
        raise UsageError("trial counts must be >= 0")
    rng = np.random.default_rng(opts["seed"])
    max_loss_dev = max_fb_gap = max_std_dev = 0.0
    bound_violations = 0
    start = time.perf_counter()
    for _ in range(opts["trials"]):
        z, labels, cfg = _random_instance(rng, opts["max_T"], opts["max_U"], opts["max_V"])
        result = loss_and_grad(z, labels, cfg)
        ref = brute_force_loss(z, labels, cfg)
        max_loss_dev = max(max_loss_dev, abs(result.loss - ref))
        T, U = z.shape[0], len(labels)
        max_fb_gap = max(max_fb_gap, abs(result.lattices.alpha[T, U] - result.lattices.beta[0, 0]))
        base = brute_force_loss(z, labels, LossConfig(0.0, cfg.blank_set))
        lo, hi = path_length_range(T, U, cfg.blank_set)
        gap = result.loss - base
        slack = opts["loss_tol"]
        if not (cfg.sigma * lo - slack <= gap <= cfg.sigma * hi + slack):
            bound_violations += 1
        z1 = z[:, :, : z.shape[2] - len(cfg.blank_set) + 1]
        std_cfg = LossConfig(0.0, BlankSet((1,)))
        max_std_dev = max(
            max_std_dev,
            abs(loss_and_grad(z1, labels, std_cfg).loss - standard_transducer_loss(z1, labels)),
        )
    loss_seconds = time.perf_counter() - start
    max_grad_err = 0.0
    start = time.perf_counter()
    for _ in range(opts["grad_trials"]):
        z, labels, cfg = _random_instance(
            rng, opts["grad_max_T"], opts["grad_max_U"], opts["grad_max_V"]
        )
        analytic = loss_and_grad(z, labels, cfg).grad
        numeric = finite_diff_grad(z, labels, cfg, h=opts["fd_step"])
        max_grad_err = max(max_grad_err, float(relative_error(analytic, numeric).max()))
    grad_seconds = time.perf_counter() - start

    passed = (
        max_loss_dev <= opts["loss_tol"]
        and max_fb_gap <= opts["loss_tol"]
        and max_std_dev <= opts["loss_tol"]
        and bound_violations == 0
        and max_grad_err <= opts["grad_tol"]
    )
    metrics = {
        "trials": opts["trials"],
        "grad_trials": opts["grad_trials"],
        "max_loss_deviation": max_loss_dev,
        "max_forward_backward_gap": max_fb_gap,
        "max_standard_recursion_deviation": max_std_dev,
        "sigma_bound_violations": bound_violations,
        "max_grad_relative_error": max_grad_err,
        "passed": passed,
    }
    keys = ["trials", "grad_trials", "max_T", "max_U", "max_V", "grad_max_T", "grad_max_U",
            "grad_max_V", "loss_tol", "grad_tol", "fd_step"]
    config = {k: opts[k] for k in keys}
    config["seed"] = opts["seed"]
    out = _out_dir(opts)
    path = os.path.join(out, "verify_report.json")
    report = make_report("verify", config, metrics, {"report": path},
                         {"loss_seconds": loss_seconds, "grad_seconds": grad_seconds})
    write_json(path, report)
    if not passed:
        raise ToleranceFailure(
            f"verify failed: loss dev {max_loss_dev:.3g}, fb gap {max_fb_gap:.3g}, "
            f"standard dev {max_std_dev:.3g}, bound violations {bound_violations}, "
            f"grad rel err {max_grad_err:.3g}"
        )
    return report


# ---------------------------------------------------------------- data helpers


def _synth_config(opts, count, seed):
    return SynthConfig(
        V=opts["vocab"], F=opts["feat_dim"], repeat_factor=opts["repeat_factor"],
        repeat_jitter=opts["repeat_jitter"], noise_std=opts["noise_std"],
        min_labels=opts["min_labels"], max_labels=opts["max_labels"],
        count=count, seed=seed,
    )


def _synth_echo(opts):
    keys = ["synth_seed", "vocab", "feat_dim", "repeat_factor", "repeat_jitter",
            "noise_std", "min_labels", "max_labels"]
    return {k: opts[k] for k in keys}


def _load_eval_data(opts):
    """Corpus given by --data, else the synthetic held-out set of the train command."""
    if opts["data"]:
        return load_dataset(opts["data"])
    return synth_generate(_synth_config(opts, opts["synth_test_count"], opts["synth_seed"] + 1))


def _check_compatible(params, corpus):
    for i, utt in enumerate(corpus):
        if utt.frames.shape[1] != params.dims.F:
            raise UsageError(
                f"utterance {i} has {utt.frames.shape[1]} features, checkpoint expects {params.dims.F}"
            )
        if any(y >= params.dims.V for y in utt.labels):
            raise UsageError(f"utterance {i} has labels outside the checkpoint vocabulary {params.dims.V}")


def decode_corpus(params, corpus, batch_size=1, max_symbols=10):
    if batch_size == 1:
        return [
            greedy_decode(make_scorer(params, u.frames), u.num_frames, params.blank_set,
                          params.dims.V, max_symbols)
            for u in corpus
        ]
    results = []
    for i in range(0, len(corpus), batch_size):
        chunk = corpus[i:i + batch_size]
        results.extend(batched_greedy_decode(
            [make_scorer(params, u.frames) for u in chunk],
            [u.num_frames for u in chunk],
            params.blank_set, params.dims.V, max_symbols,
        ))
    return results


def _load_model(path):
    if not path:
        raise UsageError("a checkpoint path is required")
    try:
        return load_checkpoint(path)
    except (CheckpointError, json.JSONDecodeError) as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------- train


def cmd_train(opts):
    if opts["data"]:
        corpus = load_dataset(opts["data"])
    else:
        corpus = synth_generate(_synth_config(opts, opts["synth_count"], opts["synth_seed"]))
    heldout = load_dataset(opts["test_data"]) if opts["test_data"] else _load_eval_data(opts)
    F = corpus[0].frames.shape[1] if corpus else opts["feat_dim"]
    V = opts["vocab"]
    if corpus and max(max(u.labels, default=0) for u in corpus) >= V:
        raise UsageError(f"corpus labels exceed --vocab {V}")
    try:
        dims = ModelDims(V=V, F=F, H=opts["hidden"], E=opts["enc_dim"], D=opts["embed_dim"],
                         J=opts["joint_dim"], context=opts["context"])
        config = TrainConfig(
            sigma=opts["sigma"], blank_set=opts["blank_set"],
            learning_rate=opts["learning_rate"], momentum=opts["momentum"],
            batch_size=opts["train_batch_size"], steps=opts["steps"], seed=opts["seed"],
            dims=dims,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    start = time.perf_counter()
    params, history = train(corpus, config)
    train_seconds = time.perf_counter() - start
    results = decode_corpus(params, heldout, 1, opts["max_symbols"])
    ter = token_error_rate([u.labels for u in heldout], [r.tokens for r in results])

    out = _out_dir(opts)
    ckpt = os.path.join(out, "checkpoint.json")
    save_checkpoint(params, ckpt, sigma=opts["sigma"])
    curve = os.path.join(out, "loss_curve.csv")
    write_csv(curve, ["step", "loss"], [(i + 1, repr(v)) for i, v in enumerate(history)])
    tail = history[-50:]
    metrics = {
        "loss_curve": history,
        "initial_loss": history[0],
        "final_loss": float(np.mean(tail)),
        "heldout_token_error_rate": ter,
        "heldout_steps": sum(r.steps for r in results),
        "heldout_utterances": len(heldout),
        "train_utterances": len(corpus),
    }
    echo = config.as_dict()
    echo["dims"] = dict(echo["dims"])
    echo.update(data=opts["data"], test_data=opts["test_data"], synth=_synth_echo(opts))
    path = os.path.join(out, "train_report.json")
    report = make_report("train", echo, metrics,
                         {"checkpoint": ckpt, "loss_curve": curve, "report": path},
                         {"train_seconds": train_seconds})
    write_json(path, report)
    return report


# ---------------------------------------------------------------- decode


def cmd_decode(opts):
    params, sigma = _load_model(opts["checkpoint"])
    corpus = _load_eval_data(opts)
    _check_compatible(params, corpus)
    results = decode_corpus(params, corpus, opts["batch_size"], opts["max_symbols"])
    refs = [u.labels for u in corpus]
    ter = token_error_rate(refs, [r.tokens for r in results])
    out = _out_dir(opts)
    table = os.path.join(out, "decode.csv")
    write_csv(table, ["utterance", "frames", "steps", "reference", "hypothesis"], [
        (i, r.frames, r.steps, " ".join(map(str, ref)), " ".join(map(str, r.tokens)))
        for i, (r, ref) in enumerate(zip(results, refs))
    ])
    metrics = {
        "token_error_rate": ter,
        "total_steps": sum(r.steps for r in results),
        "mean_steps": float(np.mean([r.steps for r in results])) if results else 0.0,
        "utterances": len(results),
        "emission_histogram": emission_histogram(results, params.blank_set).counts,
    }
    config = {
        "checkpoint": opts["checkpoint"], "data": opts["data"],
        "batch_size": opts["batch_size"], "max_symbols": opts["max_symbols"],
        "blank_set": list(params.blank_set.durations), "sigma": sigma, "seed": opts["seed"],
        "synth": _synth_echo(opts),
    }
    path = os.path.join(out, "decode_report.json")
    report = make_report("decode", config, metrics, {"table": table, "report": path},
                         {"decode_seconds": sum(r.seconds for r in results)})
    write_json(path, report)
    return report


# ---------------------------------------------------------------- bench


def cmd_bench(opts):
    base_params, base_sigma = _load_model(opts["baseline"])
    cand_params, cand_sigma = _load_model(opts["candidate"])
    if base_params.dims.V != cand_params.dims.V or base_params.dims.F != cand_params.dims.F:
        raise UsageError(
            f"baseline (V={base_params.dims.V}, F={base_params.dims.F}) and candidate "
            f"(V={cand_params.dims.V}, F={cand_params.dims.F}) disagree on vocabulary or features"
        )
    corpus = _load_eval_data(opts)
    _check_compatible(base_params, corpus)
    refs = [u.labels for u in corpus]
    base = decode_corpus(base_params, corpus, opts["batch_size"], opts["max_symbols"])
    cand = decode_corpus(cand_params, corpus, opts["batch_size"], opts["max_symbols"])
    rep = speedup_report(base, cand).as_dict()
    timing = {k: rep.pop(k) for k in ("baseline_seconds", "candidate_seconds", "wallclock_speedup_pct")}
    rep["baseline_token_error_rate"] = token_error_rate(refs, [r.tokens for r in base])
    rep["candidate_token_error_rate"] = token_error_rate(refs, [r.tokens for r in cand])
    out = _out_dir(opts)
    table = os.path.join(out, "bench.csv")
    write_csv(table, ["metric", "baseline", "candidate"], [
        ("total_steps", rep["baseline_steps"], rep["candidate_steps"]),
        ("mean_steps", repr(rep["baseline_mean_steps"]), repr(rep["candidate_mean_steps"])),
        ("token_error_rate", repr(rep["baseline_token_error_rate"]),
         repr(rep["candidate_token_error_rate"])),
        ("step_speedup_pct", "", repr(rep["step_speedup_pct"])),
        ("step_reduction_pct", "", repr(rep["step_reduction_pct"])),
    ])
    config = {
        "baseline": opts["baseline"], "candidate": opts["candidate"], "data": opts["data"],
        "batch_size": opts["batch_size"], "max_symbols": opts["max_symbols"],
        "baseline_blank_set": list(base_params.blank_set.durations), "baseline_sigma": base_sigma,
        "candidate_blank_set": list(cand_params.blank_set.durations), "candidate_sigma": cand_sigma,
        "seed": opts["seed"], "synth": _synth_echo(opts),
    }
    path = os.path.join(out, "bench_report.json")
    report = make_report("bench", config, rep, {"table": table, "report": path}, timing)
    write_json(path, report)
    return report


# ---------------------------------------------------------------- emissions


def cmd_emissions(opts):
    params, sigma = _load_model(opts["checkpoint"])
    corpus = _load_eval_data(opts)
    _check_compatible(params, corpus)
    results = decode_corpus(params, corpus, opts["batch_size"], opts["max_symbols"])
    hist = emission_histogram(results, params.blank_set)
    out = _out_dir(opts)
    table = os.path.join(out, "emissions.csv")
    write_csv(table, ["kind", "count"], hist.rows())
    metrics = {
        "counts": hist.counts,
        "total": hist.total,
        "total_steps": sum(r.steps for r in results),
        "utterances": len(results),
    }
    config = {
        "checkpoint": opts["checkpoint"], "data": opts["data"],
        "batch_size": opts["batch_size"], "max_symbols": opts["max_symbols"],
        "blank_set": list(params.blank_set.durations), "sigma": sigma, "seed": opts["seed"],
        "synth": _synth_echo(opts),
    }
    path = os.path.join(out, "emissions_report.json")
    report = make_report("emissions", config, metrics, {"table": table, "report": path},
                         {"decode_seconds": sum(r.seconds for r in results)})
    write_json(path, report)
    return report


COMMANDS = {
    "verify": cmd_verify,
    "train": cmd_train,
    "decode": cmd_decode,
    "bench": cmd_bench,
    "emissions": cmd_emissions,
}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        opts = resolve_options(ns)
        report = COMMANDS[opts["command"]](opts)
    except ToleranceFailure as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE
    except (UsageError, OracleLimitError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except (OSError, DatasetFormatError) as exc:
        logger.error("%s", exc)
        return EXIT_IO
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    logger.info("%s done: %s", opts["command"], report["artifacts"].get("report"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
