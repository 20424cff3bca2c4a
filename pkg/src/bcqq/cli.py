"""Command-line entry point: ``bcqq <command> ...``.

Every command exits 0 on success. Failures print a single JSON object
``{"error": ..., "message": ...}`` on stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .ansatz import QModel, build_template, q_values
from .bcq import TrainingDiverged, globality_test, policy_action, run_episodes, train
from .checkpoint import CheckpointError, export_json, load_checkpoint, save_checkpoint
from .config import ConfigError, build_config, canonical_text, parse_config, spec_hash
from .data import (
    BufferFormatError,
    bounds_mismatch,
    collect_noisy_expert,
    collect_random,
    export_csv,
    load_buffer,
    save_buffer,
)
from .env import DEFAULT_BOUNDS
from .mlp import mlp_sizes
from .rng import derive_seeds, make_rng

LAYOUT_VERSION = 1
DEFAULT_SHOTS = "32,64,128,256,1024"


class CliError(Exception):
    def __init__(self, kind: str, message: str, **extra):
        super().__init__(message)
        self.kind = kind
        self.extra = extra


class Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as JSON instead of free text."""

    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _on_off(text: str) -> str:
    if text.lower() not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text.lower()


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# ----------------------------------------------------------------------------
# commands


def cmd_collect(args) -> None:
    bounds = tuple(args.bounds)
    if args.policy == "random":
        buf = collect_random(args.n, args.seed, bounds)
    else:
        if not args.expert:
            raise CliError("argument", "noisy-expert collection needs --expert CHECKPOINT")
        ck = load_checkpoint(args.expert)
        tau = float(ck["meta"].get("tau", 0.3))
        buf = collect_noisy_expert(
            args.n, lambda s: policy_action(ck["q"], ck["gen"], s, tau), args.eps, args.seed, bounds
        )
        buf.meta["expert"] = _file_digest(args.expert)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_buffer(buf, out)
    if args.csv:
        export_csv(buf, out.with_suffix(".csv"))
    _emit({"buffer": str(out), "size": len(buf), "episodes": len(buf.episode_lengths()), "meta": buf.meta})


TRAIN_FLAGS = {
    "agent": "agent",
    "encoding": "encoding",
    "grad": "grad",
    "optimizer": "optimizer",
    "lr": "lr",
    "max_updates": "max_updates",
    "early_stop": "early_stop",
    "layers": "layers",
    "hidden": "hidden",
    "tau": "tau",
    "gamma": "gamma",
    "batch_size": "batch_size",
    "eval_every": "eval_every",
    "target_period": "target_period",
    "spsa_c": "spsa_c",
}


def _resolve_config(args, seed: int):
    values: dict[str, str] = {}
    if args.config:
        values.update(parse_config(Path(args.config).read_text(encoding="utf-8")))
    for flag, key in TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = str(v)
    values["seed"] = str(seed)
    return build_config(values)


def cmd_train(args) -> None:
    buffer = load_buffer(args.buffer)
    seeds = args.seeds or [args.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    buffer_digest = _file_digest(args.buffer)
    runs = []
    for seed in seeds:
        config = _resolve_config(args, seed)
        problems = bounds_mismatch(buffer, config.bounds)
        if problems:
            raise CliError("bounds_mismatch", problems[0], buffer=args.buffer)
        digest = spec_hash(config, buffer_digest)
        result = train(config, buffer)
        run_dir = out / f"seed_{seed}"
        run_dir.mkdir(exist_ok=True)
        result.record.notes["spec_hash"] = digest
        result.record.to_csv(run_dir / "record.csv")
        result.record.to_json(run_dir / "summary.json", include_timing=not args.no_timing)
        (run_dir / "config.txt").write_text(canonical_text(config), encoding="utf-8")
        meta = {"spec_hash": digest, "tau": config.tau, "seed": seed, "updates": result.record.updates}
        save_checkpoint(run_dir / "final.ckpt", result.q, result.gen, meta)
        save_checkpoint(run_dir / "best.ckpt", result.best_q, result.best_gen, meta)
        runs.append(
            {
                "seed": seed,
                "spec_hash": digest,
                "best_mean_reward": result.record.best_reward,
                "final_mean_reward": result.record.final_reward,
                "updates": result.record.updates,
                "early_stopped": result.record.early_stopped,
            }
        )
    manifest = {
        "layout_version": LAYOUT_VERSION,
        "command": "train",
        "buffer": str(args.buffer),
        "buffer_digest": buffer_digest,
        "runs": runs,
    }
    _write_json(out / "manifest.json", manifest)
    _emit(manifest)


def _seed_for(args, ck: dict) -> int:
    """Explicit --seed, else the training seed stored in the checkpoint."""
    return args.seed if args.seed is not None else int(ck["meta"].get("seed", 0))


def cmd_eval(args) -> None:
    ck = load_checkpoint(args.checkpoint)
    tau = args.tau if args.tau is not None else float(ck["meta"].get("tau", 0.3))
    seed = _seed_for(args, ck)
    seeds = derive_seeds(seed, "eval", args.episodes)
    rng = make_rng(seed, "sampling") if args.shots else None
    stats = run_episodes(ck["q"], ck["gen"], tau, seeds, shots=args.shots, rng=rng)
    _emit(
        {
            "checkpoint": str(args.checkpoint),
            "shots": args.shots or "exact",
            "rewards": stats.rewards.tolist(),
            "mean_reward": float(stats.rewards.mean()),
            "constraint_violations": stats.violations,
        }
    )


def cmd_globality(args) -> None:
    ck = load_checkpoint(args.checkpoint)
    tau = float(ck["meta"].get("tau", 0.3))
    seeds = derive_seeds(_seed_for(args, ck), "eval", args.episodes)
    steps = globality_test(ck["q"], ck["gen"], tau, seeds, cap=args.cap)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode_seed", "steps"])
            writer.writerows([s, int(n)] for s, n in zip(seeds, steps))
    _emit({"steps": steps.tolist(), "median": float(np.median(steps)), "cap": args.cap})


def shots_study(ck: dict, shots: list[int], episodes: int, seed: int) -> list[tuple[str, float]]:
    """Mean reward per shot count; the first row uses exact expectations."""
    tau = float(ck["meta"].get("tau", 0.3))
    seeds = derive_seeds(seed, "eval", episodes)
    rows = [("exact", float(run_episodes(ck["q"], ck["gen"], tau, seeds).rewards.mean()))]
    for n in shots:
        rng = make_rng(seed, f"sampling/{n}")
        stats = run_episodes(ck["q"], ck["gen"], tau, seeds, shots=n, rng=rng)
        rows.append((str(n), float(stats.rewards.mean())))
    return rows


def cmd_shots_study(args) -> None:
    ck = load_checkpoint(args.checkpoint)
    rows = shots_study(ck, args.shots, args.episodes, _seed_for(args, ck))
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["shots", "mean_reward"])
            writer.writerows([s, repr(r)] for s, r in rows)
    _emit({"rows": [{"shots": s, "mean_reward": r} for s, r in rows]})


ANALYZE_MODELS = ("baseline", "dru", "cyclic", "mlp4", "mlp5", "mlp18")


def cmd_analyze(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    states = analysis.sample_states(args.states, args.seed)
    report = {}
    for name in args.models:
        rng = make_rng(args.seed, f"fim/{name}")
        if name.startswith("mlp"):
            fims = analysis.classical_fims(mlp_sizes(int(name[3:])), states, args.thetas, rng)
        else:
            fims = analysis.quantum_fims(name, states, args.thetas, rng, args.layers)
        edges, density = analysis.eigen_spectrum(analysis.normalize_fims(fims), args.bins)
        analysis.write_histogram_csv(out / f"eigen_{name}.csv", edges, density)
        d_eff = analysis.effective_dimension(fims, args.ns)
        analysis.write_deff_csv(out / f"deff_{name}.csv", args.ns, d_eff)
        report[name] = {"d": int(fims[0].shape[0]), "d_eff": dict(zip(map(str, args.ns), d_eff.tolist()))}
        if not name.startswith("mlp"):
            template = build_template(name, args.layers, 4)
            model = QModel(template, rng.uniform(-np.pi, np.pi, template.n_params), np.ones(2))
            spectra = [
                analysis.fourier_spectrum(lambda x: q_values(model, x)[:, 0], f, args.fourier_grid, states[0])
                for f in range(4)
            ]
            analysis.write_fourier_csv(out / f"fourier_{name}.csv", spectra)
            report[name]["fourier_cutoff"] = [s.cutoff(1e-8) for s in spectra]
    _write_json(
        out / "manifest.json",
        {
            "layout_version": LAYOUT_VERSION,
            "command": "analyze",
            "states": args.states,
            "thetas": args.thetas,
            "seed": args.seed,
            "report": report,
        },
    )
    _emit(report)


def cmd_export(args) -> None:
    export_json(args.checkpoint, args.out)
    _emit({"checkpoint": str(args.checkpoint), "json": str(args.out)})


# ----------------------------------------------------------------------------
# parser


def build_parser() -> Parser:
    p = Parser(prog="bcqq", description="Batch-constrained quantum Q-learning experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    c = sub.add_parser("collect", help="collect an offline buffer")
    c.add_argument("policy", choices=["random", "noisy-expert"])
    c.add_argument("n", type=int, help="number of transitions")
    c.add_argument("--eps", type=float, default=0.1, help="random-action probability (noisy-expert)")
    c.add_argument("--expert", help="checkpoint of the expert agent (noisy-expert)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--bounds", type=_float_list, default=list(DEFAULT_BOUNDS),
                   help="normalization bounds x,x_dot,theta,theta_dot")
    c.add_argument("--out", required=True, help="output buffer file")
    c.add_argument("--csv", action="store_true", help="also write a CSV export next to the buffer")
    c.set_defaults(func=cmd_collect)

    t = sub.add_parser("train", help="train an agent on a buffer")
    t.add_argument("--config", help="key=value config file; flags below override it")
    t.add_argument("--buffer", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--agent", choices=["quantum", "classical"])
    t.add_argument("--encoding", choices=["baseline", "dru", "cyclic"])
    t.add_argument("--grad", choices=["spsa", "paramshift", "backprop"])
    t.add_argument("--optimizer", choices=["adam", "amsgrad"])
    t.add_argument("--lr", type=float)
    t.add_argument("--max-updates", dest="max_updates", type=int)
    t.add_argument("--early-stop", dest="early_stop", type=_on_off, help="on or off")
    t.add_argument("--layers", type=int, help="variational layers (quantum)")
    t.add_argument("--hidden", type=int, help="hidden width (classical)")
    t.add_argument("--tau", type=float, help="batch-constraint threshold")
    t.add_argument("--gamma", type=float, help="discount factor")
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--eval-every", dest="eval_every", type=int, help="updates between evaluations")
    t.add_argument("--target-period", dest="target_period", type=int, help="updates between target syncs")
    t.add_argument("--spsa-c", dest="spsa_c", type=float, help="SPSA perturbation scale")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--seeds", type=_int_list, help="comma-separated seed list (overrides --seed)")
    t.add_argument("--no-timing", action="store_true", help="omit wall-clock times from summary.json")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on seeded episodes")
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, help="episode seed (default: the checkpoint's training seed)")
    e.add_argument("--shots", type=int, help="estimate expectations from this many shots")
    e.add_argument("--tau", type=float)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("globality", help="run episodes without the 500-step limit")
    g.add_argument("checkpoint")
    g.add_argument("--episodes", type=int, default=10)
    g.add_argument("--cap", type=int, default=100_000)
    g.add_argument("--seed", type=int, help="episode seed (default: the checkpoint's training seed)")
    g.add_argument("--out", help="CSV output")
    g.set_defaults(func=cmd_globality)

    s = sub.add_parser("shots-study", help="mean reward versus shot count")
    s.add_argument("checkpoint")
    s.add_argument("--shots", type=_int_list, default=_int_list(DEFAULT_SHOTS))
    s.add_argument("--episodes", type=int, default=10)
    s.add_argument("--seed", type=int, help="episode seed (default: the checkpoint's training seed)")
    s.add_argument("--out", help="CSV output")
    s.set_defaults(func=cmd_shots_study)

    a = sub.add_parser("analyze", help="Fisher spectra, effective dimension and Fourier reports")
    a.add_argument("--out", required=True)
    a.add_argument("--models", type=lambda v: v.split(","), default=["baseline", "dru", "cyclic", "mlp5"],
                   help=f"comma-separated subset of {','.join(ANALYZE_MODELS)}")
    a.add_argument("--states", type=int, default=500)
    a.add_argument("--thetas", type=int, default=100)
    a.add_argument("--layers", type=int, default=5)
    a.add_argument("--ns", type=_float_list, default=[1e3, 1e4, 1e5, 1e6])
    a.add_argument("--bins", type=int, default=30)
    a.add_argument("--fourier-grid", dest="fourier_grid", type=int, default=64)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_analyze)

    x = sub.add_parser("export", help="dump a checkpoint as JSON")
    x.add_argument("checkpoint")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "analyze":
            bad = [m for m in args.models if m not in ANALYZE_MODELS]
            if bad:
                raise CliError("usage", f"unknown models {bad}; choose from {list(ANALYZE_MODELS)}")
        args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), **exc.extra)
    except TrainingDiverged as exc:
        return _fail("diverged", str(exc), diagnostic=exc.diagnostic)
    except (BufferFormatError, CheckpointError) as exc:
        return _fail("format", str(exc), offset=exc.offset, field=exc.field)
    except ConfigError as exc:
        return _fail("config", str(exc), line=exc.line)
    except (OSError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc))
    return 0


def _fail(kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
