"""``tacvit`` command line: generate, pretrain, experiment, report.

Exit codes: 0 ok, 2 I/O, 3 configuration/usage, 4 numeric failure, 5 empty input.
"""

from __future__ import annotations

import argparse
import logging
import os
import shlex
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import Settings, apply_overrides, keys_help, load_settings, parse_kv, profile, to_text
from .errors import ConfigError, StorageError, TacvitError
from .models import FAMILIES

log = logging.getLogger("tacvit")

SEED_ENV = "TACVIT_SEED"
RUN_MANIFEST = "run_manifest.txt"

EPILOG = "configuration keys (set with --set key=value or a key=value config file):\n" + keys_help()


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors (exit 3)
        self.print_usage(sys.stderr)
        raise ConfigError(message)


# -- settings ---------------------------------------------------------------

def resolve_settings(args) -> Settings:
    """desk/full profile < config file < --set overrides < TACVIT_SEED < --seed."""
    s = profile(args.profile)
    if getattr(args, "config", None):
        s = load_settings(args.config, s)
    if getattr(args, "set", None):
        pairs = {}
        for item in args.set:
            pairs.update(parse_kv(item, "--set"))
        apply_overrides(s, pairs)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            s.train.seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if getattr(args, "seed", None) is not None:
        s.train.seed = args.seed
    return s.validate()


def base_seed(args, default: int = 0) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return default
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None


# -- generate ---------------------------------------------------------------

def cmd_generate(args) -> int:
    from .sim import default_profiles, generate_dataset, generate_randomized

    if args.sensors < 1:
        raise ConfigError(f"--sensors must be >= 1, got {args.sensors}")
    if args.per_sensor < 1:
        raise ConfigError(f"--per-sensor must be >= 1, got {args.per_sensor}")
    if args.image_size < 8:
        raise ConfigError(f"--image-size must be >= 8, got {args.image_size}")
    seed = base_seed(args)
    out = Path(args.out)
    if args.randomize_profiles:
        n = args.sensors * args.per_sensor
        generate_randomized(n, seed, out, args.image_size)
        print(f"wrote {n} randomized-profile images to {out}")
        return 0
    for k, prof in enumerate(default_profiles(args.sensors)):
        s = int(np.random.SeedSequence([seed & 0xFFFFFFFF, k]).generate_state(1)[0])
        generate_dataset(prof, args.per_sensor, s, out / prof.sensor_id, args.image_size)
        print(f"wrote {args.per_sensor} images for {prof.sensor_id} to {out / prof.sensor_id}")
    return 0


# -- pretrain ---------------------------------------------------------------

def cmd_pretrain(args) -> int:
    from .sim import discover, load_dataset
    from .training import pretrain, save_model

    settings = resolve_settings(args)
    dirs = discover(args.data)
    if len(dirs) != 1:
        raise ConfigError(f"{args.data}: expected one pretraining corpus, found {len(dirs)} datasets")
    corpus = load_dataset(dirs[0])
    with threadpool_limits(1):
        result = pretrain(settings, corpus, settings.train.seed)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    save_model(out, result.params, "tacvit", settings)
    last = result.history[result.best_epoch - 1]
    print(f"pretrained {result.params.num_params()} parameters for {len(result.history)} epochs; "
          f"best epoch {result.best_epoch} (val z MAE {last['val_mae_z']:.4f} mm) -> {out}")
    return 0


# -- experiment -------------------------------------------------------------

_WORKER: dict = {}


def _worker_init(data_root: str, settings_text: str, base_path: str | None):
    from .config import from_text
    from .sim import load_root
    from .training import SampleCache, load_model

    settings = from_text(settings_text)
    data = load_root(data_root)
    _WORKER.clear()
    _WORKER["settings"] = settings
    _WORKER["data"] = data
    _WORKER["caches"] = {}
    _WORKER["base"] = load_model(base_path)[0] if base_path else None
    _WORKER["SampleCache"] = SampleCache


def _cache_for(family: str):
    from .models import ModelSpec

    caches = _WORKER["caches"]
    if family not in caches:
        s = _WORKER["settings"]
        m = ModelSpec.from_settings(family, s)
        caches[family] = _WORKER["SampleCache"](_WORKER["data"], m.image_size, m.channels,
                                                s.data.resize_mode, s.data.pixel_norm)
    return caches[family]


def _run_one(spec, out_root: str, seed: int):
    """Execute one run; returns (run_id, mae or None, error text, exit code)."""
    from .experiments import run_experiment

    with threadpool_limits(1):
        try:
            base = _WORKER["base"] if spec.family == "tacvit" else None
            row = run_experiment(spec, _cache_for(spec.family), _WORKER["settings"], out_root, base, seed)
            return spec.run_id, [float(v) for v in row.mae], "", 0
        except TacvitError as exc:
            return spec.run_id, None, f"{type(exc).__name__}: {exc}", exc.exit_code
        except Exception as exc:  # recorded per run; the command still exits nonzero
            return spec.run_id, None, f"{type(exc).__name__}: {exc}", 1


def _append_manifest(out: Path, lines: list[str]) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / RUN_MANIFEST, "a") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write {out / RUN_MANIFEST}: {exc}") from exc


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_experiment(args) -> int:
    from .experiments import PROTOCOLS, is_done, normalize_protocol, plan_runs
    from .sim import discover

    settings = resolve_settings(args)
    seed = settings.train.seed
    protocols = PROTOCOLS if args.protocol == "all" else (normalize_protocol(args.protocol),)
    families = FAMILIES if args.family == "all" else (args.family,)
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    base_path = args.base
    if base_path and "tacvit" not in families:
        print("warning: --base ignored for --family cnn (the CNN trains from scratch)", file=sys.stderr)
        base_path = None
    if "tacvit" in families and not settings.train.scratch_vit:
        if not base_path:
            raise ConfigError("tacvit LoRA fine-tuning needs --base CKPT (or set train.scratch_vit=true)")
        if not Path(base_path).is_file():
            raise StorageError(f"base checkpoint {base_path} not found")
    elif "tacvit" in families and base_path:
        base_path = None

    dirs = discover(args.data)
    sensors = [load_dataset_id(d) for d in dirs]
    specs = [sp for p in protocols for sp in plan_runs(p, sensors, families)]
    out = Path(args.out)
    _append_manifest(out, [
        "[invocation]",
        f"command={shlex.join(['tacvit', *sys.argv[1:]])}",
        f"started={_now()}",
        f"version={__version__}",
        f"seed={seed}",
        f"data={Path(args.data).resolve()}",
        f"base={Path(base_path).resolve() if base_path else ''}",
        f"runs={len(specs)}",
        *(f"config.{line}" for line in to_text(settings).splitlines()),
    ])
    todo = [sp for sp in specs if not (args.resume and is_done(sp, out))]
    skipped = len(specs) - len(todo)
    if skipped:
        print(f"resume: skipping {skipped} completed runs")

    t0 = time.perf_counter()
    init = (str(args.data), to_text(settings), base_path)
    results = []
    if args.jobs == 1 or len(todo) <= 1:
        if todo:
            _worker_init(*init)
        for sp in todo:
            res = _run_one(sp, str(out), seed)
            _report_run(res)
            results.append(res)
    else:
        with ProcessPoolExecutor(max_workers=args.jobs, initializer=_worker_init, initargs=init) as pool:
            for res in pool.map(_run_one, todo, [str(out)] * len(todo), [seed] * len(todo)):
                _report_run(res)
                results.append(res)
    failed = [r for r in results if r[3] != 0]
    for run_id, _, err, _ in failed:
        try:
            (out / run_id / "error.txt").write_text(err + "\n")
        except OSError:
            pass
    elapsed = time.perf_counter() - t0
    _append_manifest(out, [f"finished={_now()}", f"elapsed_s={elapsed:.1f}",
                           f"completed={len(results) - len(failed)}", f"failed={len(failed)}",
                           f"skipped={skipped}", ""])
    print(f"{len(results) - len(failed)} runs completed, {len(failed)} failed, {skipped} skipped "
          f"in {elapsed:.0f}s")
    if failed:
        return failed[0][3] or 1
    return 0


def load_dataset_id(path: Path) -> str:
    from .sim.dataset import MANIFEST, DatasetManifest

    try:
        return DatasetManifest.from_text((path / MANIFEST).read_text()).sensor_id
    except OSError as exc:
        raise StorageError(f"cannot read {path / MANIFEST}: {exc}") from exc


def _report_run(res) -> None:
    run_id, mae, err, _ = res
    if mae is None:
        print(f"FAILED {run_id}: {err}", file=sys.stderr)
    else:
        print(f"done {run_id}: z={mae[0]:.4f} Rx={mae[1]:.3f} Ry={mae[2]:.3f} "
              f"Fx={mae[3]:.3f} Fy={mae[4]:.3f} Fz={mae[5]:.3f}", flush=True)


# -- report -----------------------------------------------------------------

def cmd_report(args) -> int:
    from .experiments import write_report
    from .experiments.report import summary_text

    rep = write_report(args.results, args.out)
    sys.stdout.write(summary_text(rep))
    return 0


# -- parser -----------------------------------------------------------------

def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--profile", choices=("desk", "full"), default="desk",
                       help="built-in defaults: desk (laptop scale) or full (reference table sizes)")
        p.add_argument("--config", metavar="FILE", help="key=value settings file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
    p.add_argument("--seed", type=int, help=f"base seed (overrides the config and ${SEED_ENV})")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="tacvit", description="Tactile pose regression: synthetic data, training and "
                     "cross-sensor evaluation.", epilog=EPILOG, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"tacvit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render labelled synthetic sensor datasets", epilog=EPILOG, formatter_class=fmt)
    g.add_argument("--sensors", type=int, default=5, help="number of sensors (default 5)")
    g.add_argument("--per-sensor", type=int, default=500, help="images per sensor (default 500)")
    g.add_argument("--image-size", type=int, default=128, help="stored image edge in pixels (default 128)")
    g.add_argument("--randomize-profiles", action="store_true",
                   help="write one pretraining corpus of sensors*per-sensor images, each from a random profile")
    g.add_argument("--out", required=True, help="output directory")
    _common(g, config=False)
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", help="pretrain the TacViT encoder on a randomized-profile corpus",
                       epilog=EPILOG, formatter_class=fmt)
    p.add_argument("--data", required=True, help="corpus directory written by generate --randomize-profiles")
    p.add_argument("--out", required=True, help="output checkpoint path (.tvt1)")
    _common(p)
    p.set_defaults(func=cmd_pretrain)

    e = sub.add_parser("experiment", help="train and evaluate every run of a protocol", epilog=EPILOG,
                       formatter_class=fmt)
    e.add_argument("--protocol", required=True, choices=("tr1te1", "tr5te1", "tr4teu", "all"))
    e.add_argument("--family", default="all", choices=(*FAMILIES, "all"))
    e.add_argument("--data", required=True, help="directory of sensor datasets")
    e.add_argument("--base", help="pretrained TacViT checkpoint for LoRA fine-tuning")
    e.add_argument("--out", required=True, help="results directory")
    e.add_argument("--resume", action="store_true", help="skip runs that already have a done sentinel")
    e.add_argument("--jobs", type=int, default=1, help="parallel runs (each single-threaded)")
    _common(e)
    e.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="aggregate completed runs into tables and a summary", epilog=EPILOG,
                       formatter_class=fmt)
    r.add_argument("--results", required=True, help="results directory")
    r.add_argument("--out", help="where to write the tables (default: the results directory)")
    r.add_argument("-v", "--verbose", action="store_true", help=argparse.SUPPRESS)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except TacvitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
