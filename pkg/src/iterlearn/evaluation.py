"""Reported quantities: speaking/listening accuracy, average utterance
length and the utterance-type distribution, plus the metrics.csv schema."""
from __future__ import annotations

import csv
from dataclasses import dataclass

from .agent import listen_input_ids, max_decode_len, speak_input_ids
from .grammar import TYPE_LABELS, classify_utterance, enumerate_valid_utterances, flatten
from .neuralnet import decode_batch

METRICS_COLUMNS = (
    "generation", "seed", "experiment",
    "speak_acc", "listen_acc", "avg_len",
    "fix", "fix_marker", "free", "free_marker", "fix_drop", "free_drop", "other",
)


@dataclass
class CandidateSet:
    """Acceptable target utterances for one trajectory."""

    trajectory: object
    utterances: frozenset
    provenance: str  # "grammar" | "parent-samples"
    k: int | None = None


def grammar_candidates(trajectories, kind, i_max=None):
    """Gen-0 candidates: everything the grammar accepts."""
    return {
        t: CandidateSet(t, frozenset(enumerate_valid_utterances(t, kind, i_max)), "grammar")
        for t in trajectories
    }


def parent_candidates(parent_model, trajectories, k, i_max, rng):
    """Candidates for later generations: k utterances sampled from the
    parent's speaking network, deduplicated."""
    vocab = parent_model.vocab
    inputs = []
    for t in trajectories:
        inputs.extend([speak_input_ids(vocab, t)] * k)
    outs = decode_batch(parent_model, inputs, "sample", max_decode_len(i_max), rng)
    result = {}
    for idx, t in enumerate(trajectories):
        samples = {vocab.decode(ids) for ids in outs[idx * k:(idx + 1) * k]}
        result[t] = CandidateSet(t, frozenset(samples), "parent-samples", k)
    return result


def speaking_accuracy(model, trajectories, candidates, i_max):
    """Fraction of trajectories whose greedy utterance exactly matches any
    candidate."""
    vocab = model.vocab
    inputs = [speak_input_ids(vocab, t) for t in trajectories]
    outs = decode_batch(model, inputs, "greedy", max_decode_len(i_max))
    hits = 0
    for t, ids in zip(trajectories, outs):
        cs = candidates[t]
        if not cs.utterances:
            raise ValueError("empty candidate set")
        if vocab.decode(ids) in cs.utterances:
            hits += 1
    return hits / len(trajectories)


def listening_accuracy(model, pairs, i_max):
    """Fraction of pairs whose greedy action decode equals the flattened
    trajectory exactly."""
    vocab = model.vocab
    inputs = [listen_input_ids(vocab, p.utterance) for p in pairs]
    outs = decode_batch(model, inputs, "greedy", max_decode_len(i_max))
    hits = sum(
        1 for p, ids in zip(pairs, outs) if vocab.decode(ids) == flatten(p.trajectory)
    )
    return hits / len(pairs)


def type_distribution(model, trajectories, samples_per_trajectory, i_max, rng):
    """Classify sampled utterances; each trajectory contributes one unit of
    mass split across its samples' labels, so values sum to the number of
    trajectories."""
    if samples_per_trajectory < 1:
        raise ValueError("samples_per_trajectory must be >= 1")
    vocab = model.vocab
    n = samples_per_trajectory
    inputs = []
    for t in trajectories:
        inputs.extend([speak_input_ids(vocab, t)] * n)
    outs = decode_batch(model, inputs, "sample", max_decode_len(i_max), rng)
    hist = {label: 0.0 for label in TYPE_LABELS}
    for idx, t in enumerate(trajectories):
        for ids in outs[idx * n:(idx + 1) * n]:
            hist[classify_utterance(t, vocab.decode(ids))] += 1.0 / n
    return hist


def average_length(model, trajectories, i_max):
    """Mean greedy-utterance token count (control tokens excluded)."""
    vocab = model.vocab
    inputs = [speak_input_ids(vocab, t) for t in trajectories]
    outs = decode_batch(model, inputs, "greedy", max_decode_len(i_max))
    return sum(len(ids) for ids in outs) / len(outs)


@dataclass
class GenerationMetrics:
    speak_acc: float
    listen_acc: float
    avg_len: float
    type_histogram: dict

    def type_shares(self):
        total = sum(self.type_histogram.values())
        return {k: v / total for k, v in self.type_histogram.items()}

    def modal_type(self):
        return max(self.type_histogram, key=self.type_histogram.get)


def unique_trajectories(pairs):
    seen = set()
    out = []
    for p in pairs:
        if p.trajectory not in seen:
            seen.add(p.trajectory)
            out.append(p.trajectory)
    return out


def evaluate_generation(model, test_pairs, candidates, samples_per_trajectory, i_max, rng):
    """All four metrics over the test partition."""
    trajs = unique_trajectories(test_pairs)
    return GenerationMetrics(
        speak_acc=speaking_accuracy(model, trajs, candidates, i_max),
        listen_acc=listening_accuracy(model, test_pairs, i_max),
        avg_len=average_length(model, trajs, i_max),
        type_histogram=type_distribution(model, trajs, samples_per_trajectory, i_max, rng),
    )


def metrics_row(generation, seed, experiment, metrics: GenerationMetrics) -> dict:
    row = {
        "generation": generation,
        "seed": seed,
        "experiment": experiment,
        "speak_acc": metrics.speak_acc,
        "listen_acc": metrics.listen_acc,
        "avg_len": metrics.avg_len,
    }
    row.update({label: metrics.type_histogram[label] for label in TYPE_LABELS})
    return row


def write_metrics_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_metrics_csv(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        for raw in csv.DictReader(f):
            row = dict(raw)
            row["generation"] = int(raw["generation"])
            for col in METRICS_COLUMNS[3:]:
                row[col] = float(raw[col])
            rows.append(row)
    return rows


def mean_rows(rows):
    """Per-(experiment, generation) arithmetic means across seeds; the seed
    column is set to 'mean'."""
    groups = {}
    for row in rows:
        groups.setdefault((row["experiment"], row["generation"]), []).append(row)
    out = []
    for (experiment, generation), grp in sorted(groups.items()):
        mean = {"generation": generation, "seed": "mean", "experiment": experiment}
        for col in METRICS_COLUMNS[3:]:
            mean[col] = sum(r[col] for r in grp) / len(grp)
        out.append(mean)
    return out
