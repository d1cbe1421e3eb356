"""Command-line entry point: ``dlfd simulate | train | eval | compare``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical divergence. Human-readable messages go to stderr; results are
files under ``--out`` (resolved against ``$DLFD_OUT_ROOT`` when relative).
Every run appends one JSON line to ``<out>/manifests.jsonl``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import pipeline as pl
from .baselines import OptimConfig
from .dataset import dataset_digest, load_dataset, save_dataset
from .ekf import EkfConfig
from .errors import DlfdError, InputError, ParseError, UsageError
from .metrics import export_report, format_table, load_report, write_trajectory
from .tasksim import DATASET_NOISE, SimConfig, simulate_demo

log = logging.getLogger("dlfd")

MANIFEST_NAME = "manifests.jsonl"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out_dir(arg) -> Path:
    p = Path(arg)
    root = os.environ.get("DLFD_OUT_ROOT")
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def _workers(arg) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("DLFD_WORKERS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"DLFD_WORKERS must be an integer, got {env!r}") from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(out: Path, command: str, config: dict, seeds: dict, inputs: list, outputs: list, t0: float):
    rec = {
        "command": command,
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": [str(p) for p in inputs],
        "outputs": {str(Path(p).relative_to(out)): _sha256(Path(p)) for p in sorted(outputs)},
        "duration_s": round(time.time() - t0, 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with open(out / MANIFEST_NAME, "a") as f:
        f.write(json.dumps(rec, sort_keys=True) + "\n")


# ------------------------------------------------------------------ simulate

def _sim_one(args):
    cfg, demo_id = args
    return simulate_demo(cfg, demo_id)


def cmd_simulate(a) -> int:
    t0 = time.time()
    if a.demos < 1:
        raise UsageError("--demos must be >= 1")
    base = SimConfig(
        grid=(a.rows, a.cols), steps=a.steps, expert_gain=a.gain, noise_std=a.noise, markers=a.markers,
        cameras=a.cameras, dt=a.dt,
    )
    out = _out_dir(a.out)
    jobs = [(replace(base, seed=a.seed * 1000 + i), f"demo_{i:04d}") for i in range(a.demos)]
    workers = _workers(a.workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            demos = list(ex.map(_sim_one, jobs, chunksize=4))
    else:
        demos = [_sim_one(j) for j in jobs]
    paths = save_dataset(demos, out)
    log.info("wrote %d demonstrations to %s", len(demos), out)
    cfg = dataclasses.asdict(base)
    cfg.pop("seed")
    _manifest(out, "simulate", cfg, {"seed": a.seed, "demo_seeds": "seed*1000+i"}, [], paths, t0)
    return 0


# ------------------------------------------------------------------ train

def _spec_from_args(a) -> pl.TrainSpec:
    e, o = pl.DEFAULT_EKF, pl.DEFAULT_OPTIM
    ekf_cfg = EkfConfig(
        epsilon=a.epsilon if a.epsilon is not None else e.epsilon,
        eta=a.eta if a.eta is not None else e.eta,
        q=a.q if a.q is not None else e.q,
        epochs=a.epochs if a.epochs is not None else e.epochs,
    )
    optim = OptimConfig(
        learning_rate=a.lr if a.lr is not None else o.learning_rate,
        l1_lambda=a.l1 if a.l1 is not None else o.l1_lambda,
        epochs=a.epochs if a.epochs is not None else o.epochs,
        batch_size=a.batch_size if a.batch_size is not None else o.batch_size,
    )
    return pl.TrainSpec(
        model=a.model, N=a.N, hidden=a.hidden, bptt_depth=a.bptt_depth, ekf=ekf_cfg, optim=optim,
        ensemble=a.ensemble, split_seed=a.split_seed, seed=a.seed,
    )


def cmd_train(a) -> int:
    t0 = time.time()
    if a.model not in pl.MODEL_NAMES:
        raise UsageError(f"unknown model {a.model!r}; valid names: {', '.join(pl.MODEL_NAMES)}")
    spec = _spec_from_args(a)
    data = Path(a.data)
    if not data.is_dir():
        raise InputError(f"dataset directory {data} does not exist")
    demos = load_dataset(data)
    out = _out_dir(a.out)
    model = pl.train(demos, spec, workers=_workers(a.workers), data_digest=dataset_digest(data))
    paths = pl.save_trained(model, out)
    log.info("trained %s (%d member%s) -> %s", spec.model, spec.ensemble, "s" if spec.ensemble > 1 else "", out)
    _manifest(out, "train", spec.to_dict(), {"seed": spec.seed, "split_seed": spec.split_seed,
                                             "member_seeds": list(model.ensemble.member_seeds)},
              [data], paths, t0)
    return 0


# ------------------------------------------------------------------ eval

def cmd_eval(a) -> int:
    t0 = time.time()
    mdir = Path(a.model)
    if not (mdir / "model.json").is_file() and not mdir.is_file():
        raise InputError(f"no model found at {mdir}")
    model = pl.load_trained(mdir)
    stored = model.spec.split_seed
    if a.split_seed is not None and a.split_seed != stored:
        raise UsageError(f"--split-seed {a.split_seed} does not match the model's split seed {stored}; "
                         "refusing to evaluate on a different partition")
    if a.partition in ("fit", "val") and not a.allow_train:
        raise UsageError(f"partition {a.partition!r} was used for training; pass --allow-train to evaluate on it")
    data = Path(a.data)
    if not data.is_dir():
        raise InputError(f"dataset directory {data} does not exist")
    digest = dataset_digest(data)
    if model.data_digest and digest != model.data_digest:
        log.warning("dataset digest differs from the one the model was trained on")
    parts = pl.prepare(load_dataset(data), model.spec.N, stored)
    windows = parts.windows[a.partition]
    name = a.name or model.spec.model + (f"-ensemble{model.spec.ensemble}" if model.is_ensemble else "")
    rep, (truth, mean, lo, hi, ids, ts) = pl.evaluate(model, windows, name, a.threshold)
    rep.extra = {"partition": a.partition, "split_seed": stored}
    out = _out_dir(a.out)
    rp = export_report([rep], out / "report.json")
    tp = write_trajectory(out / "trajectory.tsv", ids, ts, truth, mean, lo, hi)
    sys.stderr.write(format_table([rep]))
    _manifest(out, "eval", {"partition": a.partition, "threshold": a.threshold, "name": name},
              {"split_seed": stored}, [mdir, data], [rp, tp], t0)
    return 0


# ------------------------------------------------------------------ compare

def cmd_compare(a) -> int:
    t0 = time.time()
    if len(a.reports) < 2:
        raise UsageError("compare needs at least two report files")
    reps = []
    for p in a.reports:
        if not Path(p).is_file():
            raise InputError(f"report {p} does not exist")
        reps.extend(load_report(p))
    seen = {}
    for r in reps:
        n = seen.get(r.model_name, 0) + 1
        seen[r.model_name] = n
        if n > 1:
            r.model_name = f"{r.model_name}#{n}"
    reps.sort(key=lambda r: (r.loss, r.model_name))
    out = _out_dir(a.out)
    table = format_table(reps)
    tp = out / "comparison.txt"
    tp.write_text(table)
    jp = export_report(reps, out / "comparison.json")
    sys.stdout.write(table)
    _manifest(out, "compare", {}, {}, list(a.reports), [tp, jp], t0)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dlfd", description="Learning control policies from demonstrations.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic needle-insertion dataset")
    s.add_argument("--demos", type=int, default=60)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=SimConfig.steps)
    s.add_argument("--rows", type=int, default=SimConfig.grid[0])
    s.add_argument("--cols", type=int, default=SimConfig.grid[1])
    s.add_argument("--gain", type=float, default=SimConfig.expert_gain)
    s.add_argument("--noise", type=float, default=DATASET_NOISE)
    s.add_argument("--markers", type=int, default=SimConfig.markers)
    s.add_argument("--cameras", type=int, default=SimConfig.cameras)
    s.add_argument("--dt", type=float, default=SimConfig.dt)
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a policy on a dataset directory")
    t.add_argument("--model", required=True, help=f"one of {', '.join(pl.MODEL_NAMES)}")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--N", type=int, default=3)
    t.add_argument("--hidden", type=int, default=pl.DEFAULT_HIDDEN)
    t.add_argument("--bptt-depth", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--ensemble", type=int, default=1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--split-seed", type=int, default=0)
    t.add_argument("--epsilon", type=float, default=None)
    t.add_argument("--eta", type=float, default=None)
    t.add_argument("--q", type=float, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--l1", type=float, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--workers", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a trained model on a dataset partition")
    e.add_argument("--model", required=True, help="model directory written by train")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split-seed", type=int, default=None)
    e.add_argument("--partition", choices=("test", "val", "fit"), default="test")
    e.add_argument("--allow-train", action="store_true")
    e.add_argument("--threshold", type=float, default=0.01)
    e.add_argument("--name", default=None)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="merge report files into one table sorted by Loss")
    c.add_argument("reports", nargs="*")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    try:
        parser = build_parser()
        a = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                            format="dlfd: %(message)s", stream=sys.stderr)
        if not getattr(a, "command", None):
            raise UsageError("a command is required: simulate, train, eval or compare")
        return a.func(a)
    except DlfdError as e:
        sys.stderr.write(f"dlfd: error: {e}\n")
        return e.exit_code
    except OSError as e:
        sys.stderr.write(f"dlfd: error: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
