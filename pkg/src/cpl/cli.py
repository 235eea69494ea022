"""Command line entry point: ``cpl gen-synth | train | eval | gradcheck``.

Settings come from built-in defaults, then an optional flat ``key=value``
config file (``--config``), then command-line flags. Keys use the flag
names with dashes replaced by underscores.

Exit codes: 0 success, 1 verification/evaluation failure, 2 usage or
config error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import dataio, gradcheck
from .core import ConfigError, CPLError, DatasetError, FormatError, HyperParams, ShapeError, normalize_attributes
from .dataio import FLAG_NORMALIZED_ATTRIBUTES, Manifest, SyntheticSpec
from .evaluation import evaluate_generalized, evaluate_standard, evaluate_with_prototypes
from .sampler import SAMPLE_LEVEL, TASK_LEVEL
from .trainer import TrainConfig, resume, train

log = logging.getLogger("cpl")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(CPLError):
    pass


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int_list(v):
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).split(",") if x.strip())


def _mode(v):
    return {"task": TASK_LEVEL, "sample": SAMPLE_LEVEL, TASK_LEVEL: TASK_LEVEL, SAMPLE_LEVEL: SAMPLE_LEVEL}[v]


# key -> (type, default) per command; None default means "required or derived"
_SHARED = {"seed": (int, 0)}
_OPTIONS = {
    "gen-synth": {
        **_SHARED,
        "K": (int, 27), "L": (int, 10), "train_per_class": (int, 50), "test_per_class": (int, 30),
        "d_attr": (int, 16), "d_feat": (int, 64), "noise_sigma": (float, 0.1),
    },
    "train": {
        **_SHARED,
        "manifest": (str, None), "resume": (str, None),
        "epochs": (int, 40), "lr": (float, 2e-4), "lambda": (float, 0.1), "gamma": (float, 0.9),
        "c": (int, None), "s": (int, 10), "hidden_size": (int, 1024), "weight_decay": (float, 1e-4),
        "mode": (_mode, TASK_LEVEL), "cep_only": (_bool, False), "aggregation": (str, "mean"),
        "normalize_attributes": (_bool, False), "schedule": (str, "uniform"),
        "validation_classes": (_int_list, ()), "log_every": (int, 0),
    },
    "eval": {
        **_SHARED,
        "manifest": (str, None), "checkpoint": (str, None), "setting": (str, "zsl"),
    },
    "gradcheck": {
        **_SHARED,
        "trials": (int, 100), "tol": (float, 1e-5), "h": (float, 1e-6),
    },
}


def build_parser():
    p = argparse.ArgumentParser(prog="cpl", description="Episodic prototype learning for zero-shot recognition.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required):
        sp.add_argument("--config", help="flat key=value file; flags override it")
        sp.add_argument("--out", required=out_required, default=None if out_required else ".",
                        help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("gen-synth", help="write a synthetic dataset and manifest")
    common(g, True)
    g.add_argument("--K", type=int, help="number of seen classes")
    g.add_argument("--L", type=int, help="number of unseen classes")
    g.add_argument("--train-per-class", type=int)
    g.add_argument("--test-per-class", type=int)
    g.add_argument("--d-attr", type=int)
    g.add_argument("--d-feat", type=int)
    g.add_argument("--noise-sigma", type=float)

    t = sub.add_parser("train", help="train the attribute embedder")
    common(t, True)
    t.add_argument("--manifest")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda", type=float, dest="lambda")
    t.add_argument("--gamma", type=float)
    t.add_argument("--c", type=int, help="classes per episode (default: number of unseen classes)")
    t.add_argument("--s", type=int, help="support samples per class")
    t.add_argument("--hidden-size", type=int)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--mode", choices=["task", "sample"])
    t.add_argument("--cep-only", action="store_const", const=True, default=None)
    t.add_argument("--aggregation", choices=["mean", "sum"])
    t.add_argument("--normalize-attributes", action="store_const", const=True, default=None)
    t.add_argument("--schedule", choices=["uniform", "coverage"])
    t.add_argument("--validation-classes", help="comma-separated seen class ids held out for model selection")
    t.add_argument("--log-every", type=int)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e, False)
    e.add_argument("--manifest")
    e.add_argument("--checkpoint")
    e.add_argument("--setting", choices=["zsl", "gzsl"])

    gc = sub.add_parser("gradcheck", help="finite-difference gradient self-check")
    common(gc, False)
    gc.add_argument("--trials", type=int)
    gc.add_argument("--tol", type=float)
    gc.add_argument("--h", type=float)
    return p


def resolve_settings(command, args):
    """Merge defaults, config file and flags; reject unknown config keys."""
    spec = _OPTIONS[command]
    values = {k: d for k, (_, d) in spec.items()}
    if args.config:
        path = Path(args.config)
        kv = dataio.parse_key_values(path.read_text(), path)
        unknown = sorted(set(kv) - set(spec))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {unknown}")
        for k, v in kv.items():
            try:
                values[k] = spec[k][0](v)
            except (ValueError, KeyError):
                raise UsageError(f"bad value for {k}: {v!r}") from None
    for k, (conv, _) in spec.items():
        v = getattr(args, k, None)
        if v is not None:
            try:
                values[k] = conv(v)
            except (ValueError, KeyError):
                raise UsageError(f"bad value for --{k.replace('_', '-')}: {v!r}") from None
    return values


def write_echo(out_dir, command, values):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"command={command}"]
    for k in sorted(values):
        v = values[k]
        if isinstance(v, tuple):
            v = ",".join(map(str, v))
        elif v is None:
            v = ""
        lines.append(f"{k}={v}")
    (out_dir / "config.echo").write_text("\n".join(lines) + "\n")
    for line in lines:
        log.info("effective %s", line)


def _require(values, *keys):
    missing = [k for k in keys if values.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required settings: " + ", ".join("--" + k.replace("_", "-") for k in missing))


def cmd_gen_synth(values, out):
    spec = SyntheticSpec(K=values["K"], L=values["L"], S_per_class_train=values["train_per_class"],
                         n_test_per_class=values["test_per_class"], d_attr=values["d_attr"],
                         d_feat=values["d_feat"], noise_sigma=values["noise_sigma"], seed=values["seed"])
    data = dataio.make_synthetic(spec)
    ds = data.dataset
    out = Path(out)
    manifest = Manifest.for_dataset(out, ds)
    dataio.save_dataset(ds, manifest, out / "manifest.txt")
    dataio.load_dataset(out / "manifest.txt")
    oracle = evaluate_with_prototypes(ds, [(c, data.class_means[c]) for c in ds.unseen_classes])
    (out / "oracle.txt").write_text(f"oracle_unseen_accuracy={100 * oracle.acc_unseen:.1f}\n")
    print(f"wrote {ds.n_samples} samples, {ds.n_classes} classes to {out}")
    print(f"oracle (nearest true mean) unseen accuracy: {100 * oracle.acc_unseen:.1f}")
    return EXIT_OK


def train_config(values, ds, out):
    C = values["c"] if values["c"] is not None else len(ds.unseen_classes)
    hyper = HyperParams(C=C, S=values["s"], lam=values["lambda"], gamma=values["gamma"],
                        epochs=values["epochs"], learning_rate=values["lr"],
                        weight_decay=values["weight_decay"], hidden_size=values["hidden_size"],
                        seed=values["seed"])
    if values["schedule"] not in ("uniform", "coverage"):
        raise UsageError(f"unknown schedule {values['schedule']!r}")
    return TrainConfig(hyper=hyper, mode=values["mode"], reduction=values["aggregation"],
                       normalize_attributes=values["normalize_attributes"], cep_only=values["cep_only"],
                       schedule=values["schedule"], checkpoint_path=Path(out) / "checkpoint.cplm",
                       log_path=Path(out) / "train_log.csv", log_every=values["log_every"],
                       validation_classes=values["validation_classes"])


def cmd_train(values, out):
    _require(values, "manifest")
    ds = dataio.load_dataset(values["manifest"])
    cfg = train_config(values, ds, out)
    values = dict(values, c=cfg.hyper.C)
    write_echo(out, "train", values)
    if values["resume"]:
        emb, records = resume(ds, cfg, values["resume"])
    else:
        emb, records = train(ds, cfg)
    label = "CPL-S (sample-level)" if cfg.mode == SAMPLE_LEVEL else "CPL (task-level)"
    print(f"{label}: {len(records)} episodes, C={cfg.hyper.C}, S={cfg.hyper.S}")
    if records:
        last = records[-1]
        print(f"final episode: cep={last.cep:.5f} pec={last.pec:.5f} combined={last.combined:.5f}")
    print(f"checkpoint: {cfg.checkpoint_path}")
    return EXIT_OK


def cmd_eval(values, out):
    _require(values, "manifest", "checkpoint")
    if values["setting"] not in ("zsl", "gzsl"):
        raise UsageError(f"unknown setting {values['setting']!r}")
    ds = dataio.load_dataset(values["manifest"])
    ck = dataio.load_checkpoint(values["checkpoint"])
    p = ck.params
    if (p.d_attr, p.d_feat) != (ds.d_attr, ds.d_feat):
        raise ShapeError(f"checkpoint maps d_attr={p.d_attr} -> d_feat={p.d_feat}, "
                         f"dataset has d_attr={ds.d_attr}, d_feat={ds.d_feat}")
    if ck.flags & FLAG_NORMALIZED_ATTRIBUTES:
        ds = normalize_attributes(ds)
    write_echo(out, "eval", values)
    if values["setting"] == "zsl":
        report = evaluate_standard(ds, p)
    else:
        report = evaluate_generalized(ds, p)
    print(report.table(ds.class_names))
    (Path(out) / "report.csv").write_text(report.to_csv())
    return EXIT_OK


def cmd_gradcheck(values, out):
    write_echo(out, "gradcheck", values)
    res = gradcheck.check_gradients(values["trials"], values["seed"], values["tol"], values["h"])
    print(f"checked {res.n_checked} gradient entries over {res.trials} trials")
    print(f"max relative error: {res.max_rel_error:.3e} (max abs error {res.max_abs_error:.3e})")
    print(f"worst entry: {res.worst}")
    if not res.passed:
        print(f"FAIL: {res.n_failed} entries exceed tolerance {res.tol:g}")
        return EXIT_FAIL
    print(f"PASS (tolerance {res.tol:g})")
    return EXIT_OK


_COMMANDS = {"gen-synth": cmd_gen_synth, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = resolve_settings(args.command, args)
        if args.command == "gen-synth":
            write_echo(args.out, args.command, values)
        return _COMMANDS[args.command](values, args.out)
    except (UsageError, ConfigError, DatasetError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CPLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
