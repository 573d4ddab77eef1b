"""Experiment orchestration: named presets for the five experiments,
deterministic multi-seed execution, artifact and metrics export."""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from . import __version__
from .agent import EvalContext, TrainingConfig, train_agent, write_training_log
from .evaluation import (
    evaluate_generation,
    grammar_candidates,
    mean_rows,
    metrics_row,
    read_metrics_csv,
    unique_trajectories,
    write_metrics_csv,
)
from .evolution import TransmissionConfig, run_chain
from .grammar import (
    Corpus,
    LANGUAGE_KINDS,
    LanguageSpec,
    build_corpus,
    classify_utterance,
    enumerate_trajectories,
    segment,
)
from .neuralnet import AgentModel, load_model, save_model

SMOKE_I_MAX = 3

# the five experiment families; ells with several entries fan out into one
# experiment per pressure level
PRESETS = {
    "fix-marker-pressure": dict(kind="fix_marker", i_max=5, generations=10, ells=(1, 3, 5, 8), bottleneck_ratio=1.0),
    "mix": dict(kind="mix", i_max=5, generations=20, ells=(1,), bottleneck_ratio=1.0),
    "mix-pressure": dict(kind="mix", i_max=5, generations=20, ells=(3,), bottleneck_ratio=1.0),
    "mix-drop": dict(kind="mix_drop", i_max=4, generations=20, ells=(1,), bottleneck_ratio=1.0),
    "mix-bottleneck": dict(kind="mix", i_max=5, generations=20, ells=(1,), bottleneck_ratio=0.5),
}

CONFIG_FIELDS = (
    "kind", "i_max", "drop_probability", "utterances_per_trajectory",
    "generations", "samples_per_trajectory", "ells", "bottleneck_ratio",
    "batch_size", "max_epochs", "patience", "learning_rate", "beta2", "seeds",
)


def log(msg):
    print(msg, file=sys.stderr, flush=True)


def _resolve_settings(args):
    settings = dict(
        kind=None, i_max=None, drop_probability=0.10, utterances_per_trajectory=None,
        generations=None, samples_per_trajectory=None, ells=(1,), bottleneck_ratio=1.0,
        batch_size=16, max_epochs=100, patience=5, learning_rate=TrainingConfig().learning_rate,
        beta2=TrainingConfig().beta2, seeds=(1, 2, 3),
    )
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise ValueError(f"unknown preset {args.preset!r} (have: {', '.join(PRESETS)})")
        settings.update(PRESETS[args.preset])
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as f:
            loaded = json.load(f)
        unknown = set(loaded) - set(CONFIG_FIELDS)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "ells" in loaded and not isinstance(loaded["ells"], list):
            loaded["ells"] = [loaded["ells"]]
        settings.update(loaded)
    if getattr(args, "ell", None) is not None:
        settings["ells"] = (args.ell,)
    if getattr(args, "generations", None) is not None:
        settings["generations"] = args.generations
    if getattr(args, "bottleneck", None) is not None:
        settings["bottleneck_ratio"] = args.bottleneck
    if getattr(args, "seeds", None):
        settings["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if getattr(args, "smoke", False):
        settings["i_max"] = SMOKE_I_MAX
    if settings["kind"] is None:
        raise ValueError("no language kind selected; use --preset or a config file")
    if settings["generations"] is None:
        settings["generations"] = 10 if settings["kind"] == "fix_marker" else 20
    for ell in settings["ells"]:
        if int(ell) != ell or ell < 1:
            raise ValueError(f"selection strength must be an integer >= 1, got {ell}")
    return settings


def _lang_spec(settings, seed):
    return LanguageSpec(
        kind=settings["kind"],
        i_max=settings["i_max"],
        drop_probability=settings["drop_probability"],
        utterances_per_trajectory=settings["utterances_per_trajectory"],
        rng_seed=seed,
    )


def _chain_job(job):
    """Run one (experiment, seed) chain in a worker process."""
    experiment, seed, settings, out_dir, ell = job
    spec = _lang_spec(settings, seed)
    tcfg = TransmissionConfig(
        generations=settings["generations"],
        samples_per_trajectory=settings["samples_per_trajectory"],
        selection_strength=ell,
        bottleneck_ratio=settings["bottleneck_ratio"],
        rng_seed=seed,
    )
    train_cfg = TrainingConfig(
        batch_size=settings["batch_size"],
        max_epochs=settings["max_epochs"],
        patience=settings["patience"],
        learning_rate=settings["learning_rate"],
        beta2=settings["beta2"],
    )

    def progress(record):
        m = record.metrics
        log(
            f"[{experiment} seed {seed}] gen {record.index}: "
            f"speak={m.speak_acc:.3f} listen={m.listen_acc:.3f} len={m.avg_len:.2f} "
            f"modal={m.modal_type()}"
        )

    records = run_chain(spec, tcfg, train_cfg, out_dir=out_dir, experiment=experiment, progress=progress)
    return [metrics_row(r.index, seed, experiment, r.metrics) for r in records]


def cmd_run(args):
    settings = _resolve_settings(args)
    out_root = args.out
    os.makedirs(out_root, exist_ok=True)
    multi_ell = len(settings["ells"]) > 1
    jobs = []
    for ell in settings["ells"]:
        experiment = args.preset or settings["kind"]
        if multi_ell or (args.preset == "fix-marker-pressure"):
            experiment = f"{experiment}-ell{ell}"
        for seed in settings["seeds"]:
            out_dir = os.path.join(out_root, experiment, str(seed))
            jobs.append((experiment, seed, settings, out_dir, ell))

    manifest = dict(settings)
    manifest.update(
        version=__version__,
        preset=args.preset,
        smoke=bool(getattr(args, "smoke", False)),
        experiments=sorted({j[0] for j in jobs}),
    )
    ell_of = {j[0]: j[4] for j in jobs}
    for experiment in manifest["experiments"]:
        exp_dir = os.path.join(out_root, experiment)
        os.makedirs(exp_dir, exist_ok=True)
        exp_manifest = dict(manifest, ell=ell_of[experiment])
        with open(os.path.join(exp_dir, "manifest.json"), "w", encoding="utf-8") as f:
            json.dump(exp_manifest, f, indent=2, sort_keys=True)

    workers = len(jobs)
    cap = os.environ.get("ITERLEARN_THREADS")
    if cap:
        workers = min(workers, max(1, int(cap)))
    if args.workers is not None:
        workers = min(workers, max(1, args.workers))
    log(f"running {len(jobs)} chains with {workers} worker(s)")
    all_rows = []
    if workers == 1:
        for job in jobs:
            all_rows.extend(_chain_job(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rows in pool.map(_chain_job, jobs):
                all_rows.extend(rows)

    for experiment in manifest["experiments"]:
        exp_rows = [r for r in all_rows if r["experiment"] == experiment]
        exp_rows.sort(key=lambda r: (r["seed"], r["generation"]))
        exp_dir = os.path.join(out_root, experiment)
        write_metrics_csv(os.path.join(exp_dir, "metrics_all.csv"), exp_rows)
        write_metrics_csv(os.path.join(exp_dir, "metrics_mean.csv"), mean_rows(exp_rows))
        log(f"wrote {exp_dir}/metrics_all.csv and metrics_mean.csv")
    return 0


def cmd_gen_corpus(args):
    settings = _resolve_settings(args)
    spec = _lang_spec(settings, settings["seeds"][0])
    trajectories = enumerate_trajectories(spec.i_max)
    corpus = build_corpus(spec, trajectories)
    corpus.to_tsv(args.out)
    log(f"wrote {len(corpus.pairs)} pairs over {len(trajectories)} trajectories to {args.out}")
    return 0


def cmd_train(args):
    settings = _resolve_settings(args)
    spec = _lang_spec(settings, settings["seeds"][0])
    corpus = Corpus.from_tsv(args.corpus, i_max=spec.i_max)
    model = AgentModel.initialize(seed=settings["seeds"][0])
    dev = corpus.split("dev")
    cands = grammar_candidates(unique_trajectories(dev), spec.kind, spec.i_max)
    ctx = EvalContext.build(model.vocab, dev, {t: c.utterances for t, c in cands.items()}, spec.i_max)
    cfg = TrainingConfig(
        batch_size=settings["batch_size"], max_epochs=settings["max_epochs"],
        patience=settings["patience"], learning_rate=settings["learning_rate"],
        beta2=settings["beta2"], rng_seed=settings["seeds"][0],
    )
    result = train_agent(model, corpus, ctx, cfg)
    os.makedirs(args.out, exist_ok=True)
    save_model(result.model, os.path.join(args.out, "model.ckpt"))
    write_training_log(os.path.join(args.out, "training_log.csv"), result.log)
    last = result.log[-1]
    log(
        f"trained {len(result.log)} epochs (best {result.best_epoch}); "
        f"dev speak={last.dev_speak_acc:.3f} listen={last.dev_listen_acc:.3f}"
    )
    return 0


def cmd_eval(args):
    settings = _resolve_settings(args)
    spec = _lang_spec(settings, settings["seeds"][0])
    model = load_model(args.model)
    corpus = Corpus.from_tsv(args.corpus, i_max=spec.i_max)
    test_pairs = corpus.split("test") or corpus.pairs
    cands = grammar_candidates(unique_trajectories(test_pairs), spec.kind, spec.i_max)
    n = settings["samples_per_trajectory"] or LanguageSpec(spec.kind, spec.i_max).utterances_per_trajectory
    metrics = evaluate_generation(
        model, test_pairs, cands, n, spec.i_max, np.random.default_rng(settings["seeds"][0])
    )
    row = metrics_row(args.generation, settings["seeds"][0], args.experiment, metrics)
    write_metrics_csv(args.out, [row])
    log(
        f"speak={metrics.speak_acc:.4f} listen={metrics.listen_acc:.4f} "
        f"avg_len={metrics.avg_len:.3f} modal={metrics.modal_type()}"
    )
    return 0


def cmd_sample_utterances(args):
    ckpt = os.path.join(args.run_dir, f"gen{args.generation}", "model.ckpt")
    if not os.path.exists(ckpt):
        raise FileNotFoundError(f"no checkpoint at {ckpt}")
    model = load_model(ckpt)
    i_max = args.i_max
    t = segment(args.trajectory.split(), i_max)
    if t is None:
        raise ValueError(f"action sequence {args.trajectory!r} is not a valid trajectory")
    from .agent import speak

    rng = np.random.default_rng(args.seed)
    samples = speak(model, t, "sample", n=args.samples, i_max=i_max, rng=rng)
    seen = []
    for u in samples:
        if u not in seen:
            seen.append(u)
    for u in seen:
        print(f"{' '.join(u) or '<empty>'}\t{classify_utterance(t, u)}")
    return 0


def _collect_run_rows(run_dir):
    rows = []
    for seed_name in sorted(os.listdir(run_dir)):
        seed_dir = os.path.join(run_dir, seed_name)
        if not os.path.isdir(seed_dir):
            continue
        for gen_name in sorted(os.listdir(seed_dir)):
            path = os.path.join(seed_dir, gen_name, "metrics.csv")
            if gen_name.startswith("gen") and os.path.exists(path):
                rows.extend(read_metrics_csv(path))
    rows.sort(key=lambda r: (str(r["seed"]), r["generation"]))
    return rows


def cmd_export_plots_data(args):
    rows = _collect_run_rows(args.run_dir)
    if not rows:
        raise ValueError(f"no per-generation metrics found under {args.run_dir}")
    write_metrics_csv(os.path.join(args.run_dir, "metrics_all.csv"), rows)
    write_metrics_csv(os.path.join(args.run_dir, "metrics_mean.csv"), mean_rows(rows))
    log(f"aggregated {len(rows)} rows from {args.run_dir}")
    return 0


def _add_common(p, out_required=True):
    p.add_argument("--preset", help=f"one of: {', '.join(sorted(PRESETS))}")
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--seeds", help="comma-separated seed list (default 1,2,3)")
    p.add_argument("--ell", type=int, help="selection strength override")
    p.add_argument("--generations", type=int)
    p.add_argument("--bottleneck", type=float, help="bottleneck_ratio override")
    p.add_argument("--smoke", action="store_true", help=f"reduced scale (i_max={SMOKE_I_MAX})")


def build_parser():
    parser = argparse.ArgumentParser(prog="iterlearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="materialize a grammar corpus to TSV")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a generation-0 agent on a corpus TSV")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    for name in ("evolve", "run"):
        p = sub.add_parser(name, help="run iterated-learning chains for every seed")
        _add_common(p)
        p.add_argument("--out", required=True, help="run directory root")
        p.add_argument("--workers", type=int, help="worker pool size (default: one per chain)")
        p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a corpus TSV")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--generation", type=int, default=0)
    p.add_argument("--experiment", default="eval")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample-utterances", help="sample speaker utterances for one trajectory")
    p.add_argument("--run-dir", required=True, help="run/<experiment>/<seed> directory")
    p.add_argument("--generation", type=int, required=True)
    p.add_argument("--trajectory", required=True, help="space-separated action tokens")
    p.add_argument("--samples", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--i-max", type=int, default=5)
    p.set_defaults(func=cmd_sample_utterances)

    p = sub.add_parser("export-plots-data", help="aggregate per-generation metrics into CSVs")
    p.add_argument("--run-dir", required=True, help="run/<experiment> directory")
    p.set_defaults(func=cmd_export_plots_data)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, OSError) as e:
        log(f"error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
