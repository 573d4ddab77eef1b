"""One model, two directions: speaking (trajectory -> utterance) and
listening (utterance -> trajectory), trained jointly by teacher forcing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grammar import DEFAULT_I_MAX, Trajectory, flatten
from .neuralnet import EOS, AgentModel, batch_loss_and_gradients, decode_batch
from .optimizer import AmsGrad


def max_decode_len(i_max: int) -> int:
    # utterances top out at 3 tokens per phrase, action strings at 3 steps
    # per phrase; +2 leaves headroom for the control tokens
    return 3 * i_max + 2


def speak_input_ids(vocab, t: Trajectory):
    return vocab.encode(flatten(t)) + [EOS]


def listen_input_ids(vocab, utterance):
    return vocab.encode(utterance) + [EOS]


@dataclass
class TrainingConfig:
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 5
    rng_seed: int = 0
    # large enough that sentence-level dev accuracy lifts off before the
    # patience window closes, even on small trajectory spaces
    learning_rate: float = 3e-2
    # a short second-moment horizon keeps AMSGrad steps useful late in
    # training, so the decoder distribution sharpens before patience fires;
    # sampling-based transmission depends on that sharpness
    beta2: float = 0.98

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.beta2 < 1.0:
            raise ValueError("beta2 must be in (0, 1)")


class EvalContext:
    """Frozen dev-set targets used for early stopping: per-trajectory
    speaking candidate sets plus exact listening targets."""

    def __init__(self, vocab, speak_inputs, speak_candidates, listen_inputs, listen_targets, i_max):
        if any(len(c) == 0 for c in speak_candidates):
            raise ValueError("every evaluated trajectory needs a non-empty candidate set")
        self.vocab = vocab
        self.speak_inputs = speak_inputs
        self.speak_candidates = speak_candidates
        self.listen_inputs = listen_inputs
        self.listen_targets = listen_targets
        self.max_len = max_decode_len(i_max)

    @classmethod
    def build(cls, vocab, pairs, candidates_by_traj, i_max):
        """candidates_by_traj maps each distinct trajectory in `pairs` to its
        set of acceptable utterances."""
        trajs = []
        seen = set()
        for p in pairs:
            if p.trajectory not in seen:
                seen.add(p.trajectory)
                trajs.append(p.trajectory)
        return cls(
            vocab,
            [speak_input_ids(vocab, t) for t in trajs],
            [frozenset(candidates_by_traj[t]) for t in trajs],
            [listen_input_ids(vocab, p.utterance) for p in pairs],
            [flatten(p.trajectory) for p in pairs],
            i_max,
        )

    def evaluate(self, model):
        """(speaking accuracy, listening accuracy) under greedy decoding."""
        outs = decode_batch(model, self.speak_inputs, "greedy", self.max_len)
        hits = sum(
            1
            for ids, cands in zip(outs, self.speak_candidates)
            if model.vocab.decode(ids) in cands
        )
        speak_acc = hits / len(outs)
        outs = decode_batch(model, self.listen_inputs, "greedy", self.max_len)
        hits = sum(
            1
            for ids, target in zip(outs, self.listen_targets)
            if model.vocab.decode(ids) == target
        )
        listen_acc = hits / len(outs)
        return speak_acc, listen_acc


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_speak_acc: float
    dev_listen_acc: float
    stopped: bool


@dataclass
class TrainResult:
    model: AgentModel
    log: list
    best_epoch: int
    stopped_early: bool


def write_training_log(path, log):
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,train_loss,dev_speak_acc,dev_listen_acc,stopped_flag\n")
        for row in log:
            f.write(
                f"{row.epoch},{row.train_loss:.6f},{row.dev_speak_acc:.6f},"
                f"{row.dev_listen_acc:.6f},{int(row.stopped)}\n"
            )


def train_agent(model, corpus, eval_ctx, cfg: TrainingConfig) -> TrainResult:
    """Mini-batch teacher forcing over both directions of every training
    pair; stops when neither dev accuracy has improved for `patience`
    consecutive epochs, and returns the checkpoint with the best dev
    accuracy sum."""
    train_pairs = corpus.split("train")
    if not train_pairs:
        raise ValueError("corpus has an empty train split")
    vocab = model.vocab
    examples = []
    for p in train_pairs:
        utt_ids = vocab.encode(p.utterance)
        act_ids = vocab.encode(flatten(p.trajectory))
        examples.append((act_ids + [EOS], utt_ids))  # speaking
        examples.append((utt_ids + [EOS], act_ids))  # listening

    rng = np.random.default_rng(cfg.rng_seed)
    opt = AmsGrad.for_model(model, lr=cfg.learning_rate, beta2=cfg.beta2)
    best_speak = best_listen = best_sum = -np.inf
    best_params = model.copy_params()
    best_epoch = 0
    stall = 0
    log = []
    stopped_early = False
    n = len(examples)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total_ce = 0.0
        total_tok = 0
        for lo in range(0, n, cfg.batch_size):
            batch = [examples[k] for k in order[lo:lo + cfg.batch_size]]
            loss, grads, n_tok = batch_loss_and_gradients(
                model, [b[0] for b in batch], [b[1] for b in batch]
            )
            opt.step(model.params, grads)
            total_ce += loss * n_tok
            total_tok += n_tok
        speak_acc, listen_acc = eval_ctx.evaluate(model)
        improved = speak_acc > best_speak or listen_acc > best_listen
        best_speak = max(best_speak, speak_acc)
        best_listen = max(best_listen, listen_acc)
        # ties go to the later epoch: at equal dev accuracy the extra epochs
        # sharpen the decoder distribution, which the sampling paths rely on
        if speak_acc + listen_acc >= best_sum:
            best_sum = speak_acc + listen_acc
            best_params = model.copy_params()
            best_epoch = epoch
        stall = 0 if improved else stall + 1
        stopped_early = stall >= cfg.patience
        log.append(EpochLog(epoch, total_ce / total_tok, speak_acc, listen_acc, stopped_early))
        if stopped_early:
            break
    model.params = best_params
    return TrainResult(model, log, best_epoch, stopped_early)


def speak(model, t: Trajectory, mode="greedy", n=1, i_max=DEFAULT_I_MAX, rng=None):
    """Describe a trajectory with n utterances (token tuples)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    src = speak_input_ids(model.vocab, t)
    if mode == "greedy":
        outs = decode_batch(model, [src] * n, "greedy", max_decode_len(i_max))
    else:
        outs = decode_batch(model, [src] * n, "sample", max_decode_len(i_max), rng)
    return [model.vocab.decode(ids) for ids in outs]


def listen(model, utterance, i_max=DEFAULT_I_MAX):
    """Greedy action-token decode; may be unsegmentable, callers treat a
    mismatch as failure."""
    src = listen_input_ids(model.vocab, utterance)
    out = decode_batch(model, [src], "greedy", max_decode_len(i_max))[0]
    return model.vocab.decode(out)
