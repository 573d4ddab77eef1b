"""Iterated learning: a trained adult relabels the corpus skeleton for a
freshly initialized child, optionally under shorter-sentence selection and a
train-split learning bottleneck."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .agent import EvalContext, TrainingConfig, max_decode_len, speak_input_ids, train_agent
from .evaluation import (
    evaluate_generation,
    grammar_candidates,
    metrics_row,
    parent_candidates,
    unique_trajectories,
    write_metrics_csv,
)
from .agent import write_training_log
from .grammar import Corpus, CorpusPair, LanguageSpec, build_corpus, enumerate_trajectories
from .neuralnet import AgentModel, decode_batch, save_model


def derive_seed(*entropy) -> int:
    """Stable integer sub-seed for a (seed, purpose, generation, ...) path."""
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, np.uint32)[0])


# purpose codes for derive_seed
_CORPUS, _INIT, _TRAIN, _TRANSMIT, _CANDS, _TYPES, _BOTTLENECK, _SPLIT = range(8)


@dataclass
class TransmissionConfig:
    generations: int
    samples_per_trajectory: int | None = None  # None: match the seed corpus
    selection_strength: int = 1
    bottleneck_ratio: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if int(self.selection_strength) != self.selection_strength or self.selection_strength < 1:
            raise ValueError("selection_strength must be an integer >= 1")
        if not 0.0 < self.bottleneck_ratio <= 1.0:
            raise ValueError("bottleneck_ratio must be in (0, 1]")


def select_shortest(draws):
    """Scan the draws in order and keep the shortest, later draws winning
    ties (<=, not <)."""
    best = draws[0]
    for u in draws[1:]:
        if len(u) <= len(best):
            best = u
    return best


def resplit(pairs, rng):
    """Fresh 80/10/10 pair-level split (floor/floor/remainder)."""
    n = len(pairs)
    order = rng.permutation(n)
    n_train = int(0.8 * n)
    n_dev = int(0.1 * n)
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[int(idx)] = "train" if rank < n_train else ("dev" if rank < n_train + n_dev else "test")
    return [CorpusPair(p.trajectory, p.utterance, split_of[k]) for k, p in enumerate(pairs)]


def transmit(parent_model, slots, cfg: TransmissionConfig, i_max, rng,
             bottleneck_rng=None, split_rng=None, draw_log=None) -> Corpus:
    """Relabel every (trajectory, split) slot with a parent sample; with
    selection_strength > 1, keep the shortest of that many samples per slot.
    Given a split_rng, the relabeled pairs are re-split 80/10/10 so every
    generation draws a fresh holdout, as when a corpus is built from the
    grammar. A bottleneck_ratio < 1 then uniformly subsamples the train
    pairs."""
    ell = cfg.selection_strength
    vocab = parent_model.vocab
    inputs = []
    for t, _ in slots:
        inputs.extend([speak_input_ids(vocab, t)] * ell)
    outs = decode_batch(parent_model, inputs, "sample", max_decode_len(i_max), rng)
    pairs = []
    for idx, (t, split) in enumerate(slots):
        if ell == 1:
            chosen = vocab.decode(outs[idx])
        else:
            draws = [vocab.decode(ids) for ids in outs[idx * ell:(idx + 1) * ell]]
            chosen = select_shortest(draws)
            if draw_log is not None:
                draw_log.append((t, draws, chosen))
        pairs.append(CorpusPair(t, chosen, split))

    if split_rng is not None:
        pairs = resplit(pairs, split_rng)

    if cfg.bottleneck_ratio < 1.0:
        if bottleneck_rng is None:
            raise ValueError("bottleneck_ratio < 1 requires a bottleneck rng")
        train_idx = [k for k, p in enumerate(pairs) if p.split == "train"]
        keep_n = int(cfg.bottleneck_ratio * len(train_idx))
        chosen_idx = bottleneck_rng.choice(len(train_idx), size=keep_n, replace=False)
        keep = {train_idx[int(k)] for k in chosen_idx}
        pairs = [p for k, p in enumerate(pairs) if p.split != "train" or k in keep]
    return Corpus(pairs)


@dataclass
class GenerationRecord:
    index: int
    corpus: Corpus
    model: AgentModel
    metrics: object
    train_log: list


def run_chain(lang_spec: LanguageSpec, tcfg: TransmissionConfig, train_cfg: TrainingConfig,
              out_dir=None, experiment="exp", progress=None) -> list:
    """Generation 0 learns the grammar corpus; every later child learns the
    corpus its parent transmitted. Each transmitted corpus is re-split
    80/10/10 so children draw fresh holdouts, exactly as the grammar corpus
    did. Returns one record per generation, 0..generations inclusive."""
    seed = tcfg.rng_seed
    i_max = lang_spec.i_max
    k_candidates = math.factorial(i_max)
    trajectories = enumerate_trajectories(i_max)
    corpus0 = build_corpus(lang_spec, trajectories)
    seed_slots = corpus0.slots()
    n_samples = (
        tcfg.samples_per_trajectory
        if tcfg.samples_per_trajectory is not None
        else lang_spec.utterances_per_trajectory
    )

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    records = []
    parent = None
    corpus = corpus0
    for g in range(tcfg.generations + 1):
        if g > 0:
            corpus = transmit(
                parent,
                seed_slots,
                tcfg,
                i_max,
                np.random.default_rng(derive_seed(seed, _TRANSMIT, g)),
                bottleneck_rng=np.random.default_rng(derive_seed(seed, _BOTTLENECK, g)),
                split_rng=np.random.default_rng(derive_seed(seed, _SPLIT, g)),
            )
        child = AgentModel.initialize(seed=derive_seed(seed, _INIT, g))
        dev_pairs = corpus.split("dev")
        dev_trajs = unique_trajectories(dev_pairs)
        test_pairs = corpus.split("test")
        test_trajs = unique_trajectories(test_pairs)
        if g == 0:
            dev_cands = grammar_candidates(dev_trajs, lang_spec.kind, i_max)
            test_cands = grammar_candidates(test_trajs, lang_spec.kind, i_max)
        else:
            dev_cands = parent_candidates(
                parent, dev_trajs, k_candidates, i_max,
                np.random.default_rng(derive_seed(seed, _CANDS, g, 0)),
            )
            test_cands = parent_candidates(
                parent, test_trajs, k_candidates, i_max,
                np.random.default_rng(derive_seed(seed, _CANDS, g, 1)),
            )
        eval_ctx = EvalContext.build(
            child.vocab, dev_pairs, {t: c.utterances for t, c in dev_cands.items()}, i_max
        )
        gen_train_cfg = replace(train_cfg, rng_seed=derive_seed(seed, _TRAIN, g))
        try:
            result = train_agent(child, corpus, eval_ctx, gen_train_cfg)
        except Exception as e:
            raise RuntimeError(f"training failed at generation {g}") from e
        metrics = evaluate_generation(
            result.model, test_pairs, test_cands, n_samples, i_max,
            np.random.default_rng(derive_seed(seed, _TYPES, g)),
        )
        record = GenerationRecord(g, corpus, result.model, metrics, result.log)
        records.append(record)
        if out_dir is not None:
            _persist_generation(out_dir, experiment, seed, record)
        if progress is not None:
            progress(record)
        parent = result.model
    return records


def _persist_generation(out_dir, experiment, seed, record):
    gen_dir = os.path.join(out_dir, f"gen{record.index}")
    os.makedirs(gen_dir, exist_ok=True)
    record.corpus.to_tsv(os.path.join(gen_dir, "corpus.tsv"))
    save_model(record.model, os.path.join(gen_dir, "model.ckpt"))
    write_training_log(os.path.join(gen_dir, "training_log.csv"), record.train_log)
    write_metrics_csv(
        os.path.join(gen_dir, "metrics.csv"),
        [metrics_row(record.index, seed, experiment, record.metrics)],
    )
