"""Command-line entry point: synth, train, eval, pour and gradcheck."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import acoustics, control, evaluation, model, training, wavio
from .config import ConfigError, load_config_file, load_container_library, merge, write_meta

log = logging.getLogger("pouringnet")

COMMON = {"seed": 0, "threads": os.cpu_count() or 1, "out": None, "containers_file": None}

SYNTH = {"pours": 300, "containers": ",".join(acoustics.TRAIN_CONTAINERS),
         "sample_rate": acoustics.DEFAULT_SAMPLE_RATE, "prefix": "pour"}

_TRAIN_FIELDS = {f.name: f.default for f in dataclasses.fields(training.TrainConfig)
                 if f.name not in ("seed", "spec_mean", "spec_std")}
TRAIN = dict(_TRAIN_FIELDS, data=None, count_per_second=0.67)

EVAL = {"data": None, "models": None, "count_per_second": 0.67}

POUR = {"model": None, "container": "glass", "target_mm": [40.0, 50.0, 60.0, 70.0, 80.0],
        "repeats": 5, "actuator_delay": control.ACTUATOR_DELAY, "warmup": control.WARMUP,
        "descent_rate": 6.0, "start_air": 115.0, "oracle": False}

GRADCHECK = {"hidden": 8, "frames": [3], "seeds": 1, "input_size": 257, "kinds": "lstm,gru,fc",
             "head": 16, "tol": 1e-4}


class CommandError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# argument parsing


def _flag(parser, name, default, help, type=None, nargs=None, boolean=False, shown=None):
    """Add ``--name`` with a None default so unset flags never mask the config file."""
    if shown is None:
        shown = ",".join(map(str, default)) if isinstance(default, list) else default
    kwargs = {"default": None, "help": f"{help} (default: {shown})"}
    if boolean:
        kwargs["action"] = argparse.BooleanOptionalAction
    else:
        kwargs["type"] = type or (type_of(default))
        if nargs:
            kwargs["nargs"] = nargs
    parser.add_argument("--" + name.replace("_", "-"), dest=name, **kwargs)


def type_of(default):
    if isinstance(default, bool) or default is None:
        return str
    return type(default)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat TOML file of option values (default: none)")
    _flag(common, "out", None, "output directory", shown="runs/<command>")
    _flag(common, "seed", 0, "random seed", type=int)
    _flag(common, "threads", COMMON["threads"], "BLAS threads; 1 gives bit-reproducible runs",
          type=int)
    _flag(common, "containers_file", None, "TOML container library extending the built-ins")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress (default: off)")

    parser = argparse.ArgumentParser(prog="pouringnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesize pours to WAV + trace CSV")
    _flag(p, "pours", SYNTH["pours"], "number of pours")
    _flag(p, "containers", SYNTH["containers"], "comma-separated container names, cycled")
    _flag(p, "sample_rate", SYNTH["sample_rate"], "synthesis rate in Hz")
    _flag(p, "prefix", SYNTH["prefix"], "trace id prefix")

    p = sub.add_parser("train", parents=[common], help="train a model on a synth directory")
    _flag(p, "data", None, "synth output directory")
    _flag(p, "count_per_second", TRAIN["count_per_second"], "clips drawn per second of audio")
    for name, default in _TRAIN_FIELDS.items():
        if isinstance(default, bool):
            _flag(p, name, default, name.replace("_", " "), boolean=True)
        else:
            _flag(p, name, default, name.replace("_", " "))

    p = sub.add_parser("eval", parents=[common], help="score checkpoints on a synth directory")
    _flag(p, "data", None, "synth output directory with held-out pours")
    _flag(p, "models", None, "checkpoints as NAME=PATH (or PATH)", nargs="+")
    _flag(p, "count_per_second", EVAL["count_per_second"], "clips drawn per second of audio")

    p = sub.add_parser("pour", parents=[common], help="closed-loop pouring episodes")
    _flag(p, "model", None, "checkpoint path")
    _flag(p, "container", POUR["container"], "container name")
    _flag(p, "target_mm", POUR["target_mm"], "target air columns in mm", type=float, nargs="+")
    _flag(p, "repeats", POUR["repeats"], "episodes per target")
    _flag(p, "actuator_delay", POUR["actuator_delay"], "seconds between decision and stop")
    _flag(p, "warmup", POUR["warmup"], "seconds without decisions")
    _flag(p, "descent_rate", POUR["descent_rate"], "air-column descent in mm/s")
    _flag(p, "start_air", POUR["start_air"], "initial air column in mm (capped at height)")
    _flag(p, "oracle", False, "feed ground truth instead of the network", boolean=True)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    _flag(p, "hidden", GRADCHECK["hidden"], "hidden size")
    _flag(p, "head", GRADCHECK["head"], "head width")
    _flag(p, "frames", GRADCHECK["frames"], "sequence lengths", type=int, nargs="+")
    _flag(p, "seeds", GRADCHECK["seeds"], "seeds per configuration")
    _flag(p, "input_size", GRADCHECK["input_size"], "input width")
    _flag(p, "kinds", GRADCHECK["kinds"], "comma-separated encoder kinds")
    _flag(p, "tol", GRADCHECK["tol"], "relative error tolerance")
    return parser


_DEFAULTS = {"synth": SYNTH, "train": TRAIN, "eval": EVAL, "pour": POUR, "gradcheck": GRADCHECK}


def resolve(args: argparse.Namespace) -> dict:
    defaults = dict(COMMON, **_DEFAULTS[args.command])
    file_values = load_config_file(args.config) if args.config else {}
    # one config file may serve several subcommands; keep only what applies here
    file_values = {k: v for k, v in file_values.items() if k in defaults}
    cfg = merge(defaults, file_values, vars(args))
    if cfg["out"] is None:
        cfg["out"] = f"runs/{args.command}"
    return cfg


def _containers(cfg) -> dict:
    library = dict(acoustics.CONTAINERS)
    if cfg.get("containers_file"):
        library.update(load_container_library(cfg["containers_file"]))
    return library


# ----------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: dict) -> int:
    out = Path(cfg["out"])
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    library = _containers(cfg)
    names = [n.strip() for n in str(cfg["containers"]).split(",") if n.strip()]
    missing = [n for n in names if n not in library]
    if missing or not names:
        raise CommandError(f"unknown containers: {missing or names}")
    records, failures = [], 0
    for i in range(int(cfg["pours"])):
        spec = library[names[i % len(names)]]
        trace_id = f"{cfg['prefix']}{i:05d}"
        seed = training.pour_seed(int(cfg["seed"]), i)
        try:
            profile = acoustics.random_profile(spec, np.random.default_rng(seed))
            waveform, trace = acoustics.simulate_pour(spec, profile, int(cfg["sample_rate"]), seed)
            wav_path = Path("wav") / f"{trace_id}.wav"
            trace_path = Path("traces") / f"{trace_id}.csv"
            wavio.write_wav(out / wav_path, waveform, int(cfg["sample_rate"]))
            acoustics.write_trace(out / trace_path, trace)
            records.append({"trace_id": trace_id, "wav_path": str(wav_path),
                            "trace_path": str(trace_path), "container_name": spec.name,
                            "seed": seed, "sample_rate": int(cfg["sample_rate"])})
        except (acoustics.OverfillError, ValueError, OSError) as e:
            failures += 1
            print(f"{trace_id}: {e}", file=sys.stderr)
            records.append({"trace_id": trace_id, "container_name": spec.name, "seed": seed,
                            "error": str(e)})
        log.info("synth %s", trace_id)
    write_meta(out, "synth", cfg, {"failed": failures})
    # the manifest is the completion marker, so it goes last and atomically
    tmp = out / "manifest.jsonl.tmp"
    with open(tmp, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    os.replace(tmp, out / "manifest.jsonl")
    if records and failures == len(records):
        print("all pours failed", file=sys.stderr)
        return 1
    return 0


def read_manifest(data_dir) -> list[dict]:
    path = Path(data_dir) / "manifest.jsonl"
    if not path.exists():
        raise CommandError(f"no manifest.jsonl in {data_dir}; run synth first")
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def load_pours(data_dir, library):
    """Lazily yield pours listed in a synth manifest, skipping failed entries."""
    for rec in read_manifest(data_dir):
        if "error" in rec:
            continue
        waveform, rate = wavio.read_wav(Path(data_dir) / rec["wav_path"])
        spec = library[rec["container_name"]]
        trace = acoustics.read_trace(Path(data_dir) / rec["trace_path"], rate, spec)
        yield training.PourRecord(rec["trace_id"], spec.name, waveform, trace, rec.get("seed", 0))


def _load_clips(cfg):
    if not cfg["data"]:
        raise CommandError("--data is required")
    clips = training.clips_from_pours(load_pours(cfg["data"], _containers(cfg)),
                                      float(cfg["count_per_second"]), int(cfg["seed"]))
    if not clips:
        raise CommandError(f"{cfg['data']} holds no usable pours")
    return clips


def cmd_train(cfg: dict) -> int:
    clips = _load_clips(cfg)
    fields = {k: cfg[k] for k in _TRAIN_FIELDS}
    config = training.TrainConfig(seed=int(cfg["seed"]), **fields)
    result = training.train(clips, config)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    model.save_checkpoint(result.params, out / "model.pnck")
    training.write_log(out / "train_log.csv", result.log)
    write_meta(out, "train", cfg, {"best_epoch": result.best_epoch, "clips": len(clips),
                                   "train_ids": result.train_ids, "val_ids": result.val_ids,
                                   "normalization": result.params.normalization})
    return 0


def cmd_eval(cfg: dict) -> int:
    if not cfg["models"]:
        raise CommandError("--models is required")
    checkpoints = {}
    for item in cfg["models"]:
        name, _, path = item.rpartition("=")
        name = name or Path(path).parent.name or Path(path).stem
        if not Path(path).is_file():
            raise CommandError(f"checkpoint not found: {path}")
        checkpoints[name] = model.load_checkpoint(path)
    clips = _load_clips(cfg)
    report = evaluation.compare_variants(
        checkpoints, clips, metadata={"checkpoints": list(cfg["models"]), "dataset": cfg["data"],
                                      "seed": cfg["seed"], "clips": len(clips)})
    report.write(cfg["out"])
    write_meta(cfg["out"], "eval", cfg)
    return 0


def cmd_pour(cfg: dict) -> int:
    library = _containers(cfg)
    if cfg["container"] not in library:
        raise CommandError(f"unknown container {cfg['container']!r}")
    container = library[cfg["container"]]
    params = None
    if not cfg["oracle"]:
        if not cfg["model"] or not Path(cfg["model"]).is_file():
            raise CommandError(f"checkpoint not found: {cfg['model']}")
        params = model.load_checkpoint(cfg["model"])
    profile = control.closed_loop_profile(container, cfg["start_air"], cfg["descent_rate"])
    targets = cfg["target_mm"] if isinstance(cfg["target_mm"], list) else [cfg["target_mm"]]
    results = []
    for target in targets:
        for r in range(int(cfg["repeats"])):
            seed = training.pour_seed(int(cfg["seed"]), r)
            est = control.OracleEstimator(container, profile, seed) if cfg["oracle"] else None
            res = control.run_closed_loop(params, container, profile, float(target), seed,
                                          estimator=est, actuator_delay=cfg["actuator_delay"],
                                          warmup=cfg["warmup"])
            results.append(res)
            log.info("target %.1f repeat %d achieved %.2f", target, r, res.achieved_air_column)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    control.write_episodes(out / "episodes.jsonl", results, timing=False)
    errors = [abs(r.overshoot) for r in results]
    summary = {"episodes": len(results), "mean_abs_error_mm": float(np.mean(errors)),
               "timeouts": sum(r.timeout for r in results)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    # wall-clock measurements live apart from the reproducible outputs
    latencies = [x for r in results for x in r.loop_latencies]
    spec_lat = [x for r in results for x in r.spectrogram_latencies]
    if latencies:
        lat = control.measure_loop_latency(latencies, spec_lat)
        (out / "latency.json").write_text(json.dumps(dataclasses.asdict(lat), indent=2) + "\n")
        print(f"loop latency mean {lat.mean_ms:.2f} ms, p95 {lat.p95_ms:.2f} ms, "
              f"spectrogram share {lat.spectrogram_share:.0%}")
    print(f"mean |achieved - target| {summary['mean_abs_error_mm']:.3f} mm over "
          f"{len(results)} episodes, {summary['timeouts']} timeouts")
    write_meta(out, "pour", cfg)
    return 0


def cmd_gradcheck(cfg: dict) -> int:
    kinds = [k.strip() for k in str(cfg["kinds"]).split(",") if k.strip()]
    frames = cfg["frames"] if isinstance(cfg["frames"], list) else [cfg["frames"]]
    started = time.perf_counter()
    rows, worst = [], ("", "", 0.0)
    for kind in kinds:
        for T in frames:
            for seed in range(int(cfg["seeds"])):
                res = model.gradient_check(kind, int(cfg["hidden"]), int(T),
                                           seed=int(cfg["seed"]) + seed,
                                           head_size=int(cfg["head"]),
                                           input_size=int(cfg["input_size"]))
                name, err = res.worst
                rows.append({"kind": kind, "frames": int(T), "seed": res.seed,
                             "worst_tensor": name, "rel_error": err,
                             "kinks_skipped": res.kinks_skipped})
                if err > worst[2]:
                    worst = (kind, name, err)
    ok = worst[2] <= float(cfg["tol"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "gradcheck.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    write_meta(out, "gradcheck", cfg, {"passed": ok})
    verdict = "PASS" if ok else "FAIL"
    print(f"gradcheck {verdict}: worst relative error {worst[2]:.3e} in {worst[0]} {worst[1]} "
          f"({len(rows)} checks, {time.perf_counter() - started:.1f} s)")
    if not ok:
        print(f"gradient mismatch in {worst[0]} tensor {worst[1]}", file=sys.stderr)
    return 0 if ok else 1


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "pour": cmd_pour,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        with threadpool_limits(limits=int(cfg["threads"])):
            return COMMANDS[args.command](cfg)
    except (CommandError, ConfigError, training.TrainingError, model.StateError,
            evaluation.NormalizationMismatch, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
