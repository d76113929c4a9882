"""Command-line driver: ``lmmvae {gen-data,train,eval,sweep-basis,mcc-study}``.

Every verb reads a JSON config (``--config``), applies ``--override key=value``
edits, validates the result against the packaged schema and writes into
``--out``. Per-seed artifacts go to ``<out>/seed_<s>/``. The exit code is 0
only when every requested artifact was written.
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
import torch

from . import __version__
from . import data as dmod
from . import experiments as ex
from .config import ConfigError, load_config, validate_results
from .models import TrainingError, load_snapshot, save_snapshot

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ArtifactError(RuntimeError):
    pass


def _environment() -> dict:
    return {"package": f"lmmvae {__version__}", "python": platform.python_version(),
            "numpy": np.__version__, "torch": torch.__version__, "scipy": scipy.__version__}


def _seed_dir(out: Path, seed: int) -> Path:
    d = out / f"seed_{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])


def _summary_rows(summary: dict, M: int | None = None) -> list[dict]:
    rows = []
    for model, reps in summary.items():
        for metric, rep in reps.items():
            row = {"model": model, "metric": metric, "mean": rep.mean, "std": rep.std, "n": len(rep.values)}
            if M is not None:
                row["M"] = M
            rows.append(row)
    return rows


def _bundle(command: str, cfg: dict, seeds, runs, summary_rows, notices=(), trend=None) -> dict:
    out = {"format": "lmmvae-results", "version": 1, "command": command, "config": cfg,
           "seeds": list(seeds), "runs": runs, "summary": summary_rows,
           "notices": list(notices), "environment": _environment()}
    if trend is not None:
        out["trend"] = trend
    return validate_results(out)


def _write_results(out: Path, bundle: dict) -> None:
    _write_json(out / "results.json", bundle)
    rows = []
    for r in bundle["runs"]:
        for k, v in sorted(r["metrics"].items()):
            rows.append([r["model"], r.get("M", ""), r["seed"], k, v])
    _write_csv(out / "metrics.csv", ["model", "M", "seed", "metric", "value"], rows)


def _write_history(out: Path, histories) -> None:
    rows = []
    for model, seed, hist, M in histories:
        rows += [[model, "" if M is None else M, seed, h["epoch"], h["train_loss"], h["val_loss"]] for h in hist]
    _write_csv(out / "history.csv", ["model", "M", "seed", "epoch", "train_loss", "val_loss"], rows)


def _strip_run(r: dict, M: int | None = None) -> dict:
    out = {"model": r["model"], "seed": r["seed"], "metrics": r["metrics"], "best_epoch": r["best_epoch"]}
    if M is not None:
        out["M"] = M
    return out


def _logger(stream):
    def log(epoch, train_loss, val_loss):
        print(f"epoch {epoch:5d}  train {train_loss:.6f}  val {val_loss:.6f}", file=stream, flush=True)
    return log


# -- verbs ------------------------------------------------------------------------------

def cmd_gen_data(cfg: dict, out: Path, seeds) -> list[Path]:
    if "generator" not in cfg["data"]:
        raise ConfigError("gen-data needs a data.generator section")
    written = []
    for seed in seeds:
        ds = ex.make_dataset(cfg, seed)
        d = _seed_dir(out, seed)
        manifest = dmod.save_csv(ds, d / "data.csv")
        _write_json(d / "manifest.json", manifest.to_dict())
        truth = {"Y_full": ds.Y_full}
        for key in ("Z_true", "A_true", "X_true"):
            if getattr(ds, key) is not None:
                truth[key] = getattr(ds, key)
        if "noise_free" in ds.meta:
            truth["noise_free"] = ds.meta["noise_free"]
        np.savez(d / "truth.npz", **truth)
        written += [d / "data.csv", d / "manifest.json", d / "truth.npz"]
    return written


def cmd_train(cfg: dict, out: Path, seeds, log_stream=sys.stderr) -> list[Path]:
    runs, histories, written = [], [], []
    for seed in seeds:
        prep = ex.prepare(cfg, seed)
        d = _seed_dir(out, seed)
        with open(d / "train.log", "w", encoding="utf-8") as logf:
            for entry in cfg["models"]:
                name = entry["name"]
                print(f"[seed {seed}] training {name}", file=log_stream, flush=True)
                print(f"# model {name}", file=logf)
                file_log = _logger(logf)
                fitted = ex.fit(cfg, entry, prep, seed, log=file_log)
                path = d / f"{name}.npz"
                save_snapshot(fitted, path)
                written.append(path)
                runs.append({"model": name, "seed": seed, "best_epoch": fitted.best_epoch,
                             "metrics": {"best_val_loss": min(h["val_loss"] for h in fitted.history)},
                             "snapshot": str(path.relative_to(out))})
                histories.append((name, seed, fitted.history, None))
        written.append(d / "train.log")
    _write_history(out, histories)
    _write_results(out, _bundle("train", cfg, seeds, runs, []))
    return written + [out / "history.csv", out / "results.json", out / "metrics.csv"]


def _check_compatible(fitted, cfg: dict, entry: dict, prep: ex.Prepared, path: Path) -> None:
    want = ex.model_config(cfg, entry, fitted.config.seed).to_dict()
    got = fitted.config.to_dict()
    if want != got:
        diff = sorted(k for k in want if want[k] != got.get(k))
        raise ArtifactError(f"{path}: snapshot config differs from the experiment config in {diff}")
    m = fitted.model
    if m.obs_dim != prep.dataset.D or m.cov_dim != prep.design.X.shape[0]:
        raise ArtifactError(f"{path}: snapshot dimensions (D={m.obs_dim}, Q={m.cov_dim}) do not match "
                            f"the data (D={prep.dataset.D}, Q={prep.design.X.shape[0]})")


def cmd_eval(cfg: dict, out: Path, seeds, snapshots: Path | None = None) -> list[Path]:
    snapshots = snapshots or out
    metrics = cfg.get("eval", {}).get("metrics", ["imputation_mse", "test_mse", "nll", "mcc"])
    rule = cfg.get("eval", {}).get("lmm_imputation", "posterior")
    runs, notices = [], []
    summary: dict = {}
    for seed in seeds:
        prep = ex.prepare(cfg, seed)
        for entry in cfg["models"]:
            path = snapshots / f"seed_{seed}" / f"{entry['name']}.npz"
            if not path.is_file():
                raise ArtifactError(f"missing snapshot {path}; run `lmmvae train` first")
            fitted = load_snapshot(path)
            if fitted.config.seed != seed:
                raise ArtifactError(f"{path}: snapshot was trained with seed {fitted.config.seed}, not {seed}")
            _check_compatible(fitted, cfg, entry, prep, path)
            vals = ex.evaluate_run(fitted, prep, metrics, rule, notices)
            runs.append({"model": entry["name"], "seed": seed, "metrics": vals, "best_epoch": fitted.best_epoch,
                         "snapshot": str(path)})
            rep = summary.setdefault(entry["name"], {})
            for k, v in vals.items():
                rep.setdefault(k, ex.MetricReport(k)).values.append(v)
    for n in dict.fromkeys(notices):
        print(f"notice: {n}", file=sys.stderr)
    _write_results(out, _bundle("eval", cfg, seeds, runs, _summary_rows(summary), dict.fromkeys(notices)))
    return [out / "results.json", out / "metrics.csv"]


def cmd_sweep_basis(cfg: dict, out: Path, seeds, M_values=None) -> list[Path]:
    sweep = cfg.get("sweep", {})
    M_values = sorted(set(M_values or sweep.get("M") or [1, 2, 4, 8]))
    metric = sweep.get("metric", "test_mse")
    covariate = sweep.get("covariate")
    runs, summary_rows, histories, notices = [], [], [], []
    table = []
    for M in M_values:
        res = ex.run(ex.with_basis_size(cfg, M, covariate), seeds)
        runs += [_strip_run(r, M) for r in res["runs"]]
        histories += [(r["model"], r["seed"], r["history"], M) for r in res["runs"]]
        summary_rows += _summary_rows(res["summary"], M)
        notices += res["notices"]
        for model, reps in res["summary"].items():
            if metric in reps:
                table.append((model, M, reps[metric]))
    _write_csv(out / "sweep.csv", ["model", "M", f"{metric}_mean", f"{metric}_std", "n"],
               [[m, M, r.mean, r.std, len(r.values)] for m, M, r in table])
    trend = None
    if table:
        first = table[0][0]
        means = [r.mean for m, _, r in table if m == first]
        v = ex.monotone_violations(means)
        trend = {"model": first, "metric": metric, "M": M_values, "means": means, "violations": v,
                 "monotone_within_one": v <= 1}
    _write_history(out, histories)
    _write_results(out, _bundle("sweep-basis", cfg, seeds, runs, summary_rows, dict.fromkeys(notices), trend))
    return [out / "sweep.csv", out / "history.csv", out / "results.json", out / "metrics.csv"]


def cmd_mcc_study(cfg: dict, out: Path, seeds) -> list[Path]:
    cfg = dict(cfg)
    ev = dict(cfg.get("eval", {}))
    ev["metrics"] = sorted(set(ev.get("metrics", ["test_mse"])) | {"mcc"})
    cfg["eval"] = ev
    res = ex.run(cfg, seeds)
    if not any("mcc" in r["metrics"] for r in res["runs"]):
        raise ArtifactError("mcc-study: no model produced an MCC (does the dataset carry Z_true?)")
    paired = "test_mse" if "test_mse" in ev["metrics"] else None
    rows = []
    for model, reps in res["summary"].items():
        m = reps.get("mcc")
        p = reps.get(paired) if paired else None
        rows.append([model, m.mean if m else None, m.std if m else None,
                     p.mean if p else None, p.std if p else None, len(m.values) if m else 0])
    _write_csv(out / "mcc_table.csv", ["model", "mcc_mean", "mcc_std", f"{paired or 'metric'}_mean",
                                       f"{paired or 'metric'}_std", "n"], rows)
    _write_history(out, [(r["model"], r["seed"], r["history"], None) for r in res["runs"]])
    _write_results(out, _bundle("mcc-study", cfg, seeds, [_strip_run(r) for r in res["runs"]],
                                _summary_rows(res["summary"]), res["notices"]))
    for r in rows:
        fmt = lambda v: "n/a" if v is None else f"{v:.3f}"
        print(f"{r[0]:>12s}  MCC {fmt(r[1])} ± {fmt(r[2])}   {paired or ''} {fmt(r[3])} ± {fmt(r[4])}")
    return [out / "mcc_table.csv", out / "history.csv", out / "results.json", out / "metrics.csv"]


# -- entry point ------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lmmvae", description="LMM-prior VAE experiments")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("gen-data", "train", "eval", "sweep-basis", "mcc-study"):
        s = sub.add_parser(verb)
        s.add_argument("--config", required=True, help="experiment config (JSON)")
        s.add_argument("--out", help="output directory (default: config 'out' or ./runs)")
        s.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default: config 'seeds')")
        s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path config edit, repeatable")
        if verb == "eval":
            s.add_argument("--snapshots", help="directory holding seed_<s>/<model>.npz (default: --out)")
        if verb == "sweep-basis":
            s.add_argument("--M", type=_int_list, help="numbers of frequencies, e.g. 1,2,4,8")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override)
        out = Path(args.out or cfg.get("out", "runs"))
        out.mkdir(parents=True, exist_ok=True)
        seeds = args.seeds or cfg.get("seeds", [0])
        if args.verb == "gen-data":
            written = cmd_gen_data(cfg, out, seeds)
        elif args.verb == "train":
            written = cmd_train(cfg, out, seeds)
        elif args.verb == "eval":
            written = cmd_eval(cfg, out, seeds, Path(args.snapshots) if args.snapshots else None)
        elif args.verb == "sweep-basis":
            written = cmd_sweep_basis(cfg, out, seeds, args.M)
        else:
            written = cmd_mcc_study(cfg, out, seeds)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArtifactError, TrainingError, OSError, ValueError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL
    missing = [str(p) for p in written if not Path(p).exists()]
    if missing:
        print(f"error: artifacts not written: {missing}", file=sys.stderr)
        return EXIT_FAIL
    for p in written:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
