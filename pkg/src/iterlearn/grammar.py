"""Meaning space and miniature languages over gridworld trajectories.

A meaning is a trajectory: a sequence of phrases, each one command repeated
1..3 times. A signal is an utterance: command/quantifier words, optionally
preceded by temporal markers m1..m5. Five corpus regimes are supported:
fix_marker, fix, free_marker, mix and mix_drop.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

COMMANDS = ("left", "right", "up", "down")
COMMAND_INDEX = {c: i for i, c in enumerate(COMMANDS)}
QUANTIFIER_TOKENS = ("1", "2", "3")
MARKER_TOKENS = ("m1", "m2", "m3", "m4", "m5")

DEFAULT_MAX_STEPS = 3
DEFAULT_I_MAX = 5
MIX_DROP_I_MAX = 4

LANGUAGE_KINDS = ("fix_marker", "fix", "free_marker", "mix", "mix_drop")

# utterance type labels, in the order used by the metrics CSV
FIX = "fix"
FIX_MARKER = "fix_marker"
FREE = "free"
FREE_MARKER = "free_marker"
FIX_DROP = "fix_drop"
FREE_DROP = "free_drop"
OTHER = "other"
TYPE_LABELS = (FIX, FIX_MARKER, FREE, FREE_MARKER, FIX_DROP, FREE_DROP, OTHER)

SPLITS = ("train", "dev", "test")

Utterance = tuple  # tuple[str, ...]


@dataclass(frozen=True)
class Phrase:
    command: str
    quantifier: int


@dataclass(frozen=True)
class Trajectory:
    phrases: tuple

    def __len__(self):
        return len(self.phrases)

    def __iter__(self):
        return iter(self.phrases)


def is_valid_trajectory(t: Trajectory, i_max: int, max_steps: int = DEFAULT_MAX_STEPS) -> bool:
    if not 1 <= len(t) <= i_max:
        return False
    prev = None
    for p in t:
        if p.command not in COMMAND_INDEX or not 1 <= p.quantifier <= max_steps:
            return False
        if p.command == prev:
            return False
        prev = p.command
    return True


def enumerate_trajectories(i_max: int, max_steps: int = DEFAULT_MAX_STEPS) -> list:
    """All trajectories with 1..i_max phrases, adjacent phrases on distinct
    commands, in canonical order (length, then command index, then quantifier)."""
    if i_max < 1 or max_steps < 1:
        raise ValueError("i_max and max_steps must be >= 1")
    out = []
    quantifiers = range(1, max_steps + 1)

    def grow(prefix, remaining):
        if remaining == 0:
            out.append(Trajectory(tuple(prefix)))
            return
        last = prefix[-1].command if prefix else None
        for c in COMMANDS:
            if c == last:
                continue
            for q in quantifiers:
                prefix.append(Phrase(c, q))
                grow(prefix, remaining - 1)
                prefix.pop()

    for length in range(1, i_max + 1):
        grow([], length)
    return out


def flatten(t: Trajectory) -> tuple:
    """Action token sequence: each phrase (c, q) contributes q copies of c."""
    actions = []
    for p in t:
        actions.extend([p.command] * p.quantifier)
    return tuple(actions)


def segment(actions, i_max: int, max_steps: int = DEFAULT_MAX_STEPS):
    """Inverse of flatten. Returns None when the action sequence does not
    correspond to a valid trajectory (over-long run, too many runs, unknown
    token)."""
    if not actions:
        return None
    phrases = []
    run_cmd, run_len = None, 0
    for a in actions:
        if a not in COMMAND_INDEX:
            return None
        if a == run_cmd:
            run_len += 1
            if run_len > max_steps:
                return None
        else:
            if run_cmd is not None:
                phrases.append(Phrase(run_cmd, run_len))
            run_cmd, run_len = a, 1
    phrases.append(Phrase(run_cmd, run_len))
    if len(phrases) > i_max:
        return None
    return Trajectory(tuple(phrases))


def render(t: Trajectory, order, markers) -> Utterance:
    """Emit phrases in `order` (1-based temporal indices); a phrase with
    temporal index j is rendered as [m_j] c q, the marker appearing iff j is
    in the marker mask. `markers` may be a bool (all/none) or a collection
    of temporal indices."""
    i = len(t)
    if sorted(order) != list(range(1, i + 1)):
        raise ValueError(f"order {order!r} is not a permutation of 1..{i}")
    if markers is True:
        mask = set(range(1, i + 1))
    elif markers is False:
        mask = set()
    else:
        mask = set(markers)
    tokens = []
    for j in order:
        p = t.phrases[j - 1]
        if j in mask:
            tokens.append(MARKER_TOKENS[j - 1])
        tokens.append(p.command)
        tokens.append(str(p.quantifier))
    return tuple(tokens)


def chunk_utterance(u):
    """Split an utterance into (marker_index_or_None, command, quantifier)
    triples; None if the utterance does not chunk cleanly."""
    chunks = []
    k = 0
    n = len(u)
    while k < n:
        marker = None
        tok = u[k]
        if tok in MARKER_TOKENS:
            marker = MARKER_TOKENS.index(tok) + 1
            k += 1
            if k >= n:
                return None
            tok = u[k]
        if tok not in COMMAND_INDEX:
            return None
        command = tok
        k += 1
        if k >= n or u[k] not in QUANTIFIER_TOKENS:
            return None
        chunks.append((marker, command, int(u[k])))
        k += 1
    return chunks


def _partial_assignments(chunks, phrases):
    """Index sequences assigning each chunk a distinct temporal index such
    that chunk content matches the phrase at that index; marked chunks are
    pinned to their named index."""
    i = len(phrases)
    pinned = {}
    free_positions = []
    for pos, (marker, c, q) in enumerate(chunks):
        if marker is not None:
            if marker > i or marker in pinned.values():
                return []
            p = phrases[marker - 1]
            if (p.command, p.quantifier) != (c, q):
                return []
            pinned[pos] = marker
        else:
            free_positions.append(pos)
    remaining = [j for j in range(1, i + 1) if j not in pinned.values()]
    assignments = []
    for perm in permutations(remaining):
        ok = True
        for pos, j in zip(free_positions, perm):
            _, c, q = chunks[pos]
            p = phrases[j - 1]
            if (p.command, p.quantifier) != (c, q):
                ok = False
                break
        if ok:
            seq = [0] * len(chunks)
            for pos, j in pinned.items():
                seq[pos] = j
            for pos, j in zip(free_positions, perm):
                seq[pos] = j
            assignments.append(tuple(seq))
    return assignments


def classify_utterance(t: Trajectory, u) -> str:
    """Deterministic utterance-type label for (t, u); malformed or
    inconsistent utterances map to `other`."""
    chunks = chunk_utterance(tuple(u))
    i = len(t)
    if chunks is None or len(chunks) != i:
        return OTHER
    phrases = t.phrases
    contents = [(c, q) for _, c, q in chunks]
    markers = [m for m, _, _ in chunks]

    if all(m is not None for m in markers):
        if sorted(markers) != list(range(1, i + 1)):
            return OTHER
        for m, c, q in chunks:
            p = phrases[m - 1]
            if (p.command, p.quantifier) != (c, q):
                return OTHER
        return FIX_MARKER if markers == sorted(markers) else FREE_MARKER

    if all(m is None for m in markers):
        temporal = [(p.command, p.quantifier) for p in phrases]
        if contents == temporal:
            return FIX
        if sorted(contents) == sorted(temporal):
            return FREE
        return OTHER

    assignments = _partial_assignments(chunks, phrases)
    if not assignments:
        return OTHER
    if any(list(a) == sorted(a) for a in assignments):
        return FIX_DROP
    return FREE_DROP


def consistent_readings(u, i_max: int, max_steps: int = DEFAULT_MAX_STEPS) -> list:
    """All valid trajectories an utterance could describe: marked chunks pin
    their temporal index, unmarked chunks fill the remaining indices."""
    chunks = chunk_utterance(tuple(u))
    if chunks is None or not 1 <= len(chunks) <= i_max:
        return []
    i = len(chunks)
    pinned = {}
    free_positions = []
    for pos, (marker, _, _) in enumerate(chunks):
        if marker is not None:
            if marker > i or marker in pinned:
                return []
            pinned[marker] = pos
        else:
            free_positions.append(pos)
    remaining = [j for j in range(1, i + 1) if j not in pinned]
    readings = set()
    for perm in permutations(free_positions):
        slot_of = dict(pinned)
        for j, pos in zip(remaining, perm):
            slot_of[j] = pos
        phrases = tuple(
            Phrase(chunks[slot_of[j]][1], chunks[slot_of[j]][2]) for j in range(1, i + 1)
        )
        t = Trajectory(phrases)
        if is_valid_trajectory(t, i_max, max_steps):
            readings.add(t)
    return sorted(readings, key=lambda t: [(COMMAND_INDEX[p.command], p.quantifier) for p in t])


def enumerate_valid_utterances(t: Trajectory, kind: str, i_max: int | None = None) -> set:
    """Complete set of grammar-acceptable utterances for t under a regime."""
    if kind not in LANGUAGE_KINDS:
        raise ValueError(f"unknown language kind {kind!r}")
    i = len(t)
    identity = tuple(range(1, i + 1))
    if kind == "fix":
        return {render(t, identity, False)}
    if kind == "fix_marker":
        return {render(t, identity, True)}
    if kind == "free_marker":
        return {render(t, order, True) for order in permutations(identity)}
    if kind == "mix":
        out = {render(t, identity, False), render(t, identity, True)}
        out.update(render(t, order, True) for order in permutations(identity))
        return out
    # mix_drop: any permutation and marker mask that leaves exactly one
    # consistent trajectory reading
    bound = i_max if i_max is not None else max(i, MIX_DROP_I_MAX)
    out = set()
    indices = list(range(1, i + 1))
    for order in permutations(identity):
        for bits in range(1 << i):
            mask = {indices[k] for k in range(i) if bits >> k & 1}
            u = render(t, order, mask)
            if u in out:
                continue
            if len(consistent_readings(u, bound)) == 1:
                out.add(u)
    return out


@dataclass
class LanguageSpec:
    """Which regime generates a corpus, plus its parameters."""

    kind: str
    i_max: int | None = None
    drop_probability: float = 0.10
    utterances_per_trajectory: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in LANGUAGE_KINDS:
            raise ValueError(f"unknown language kind {self.kind!r}")
        if self.i_max is None:
            self.i_max = MIX_DROP_I_MAX if self.kind == "mix_drop" else DEFAULT_I_MAX
        if self.utterances_per_trajectory is None:
            self.utterances_per_trajectory = 1 if self.kind in ("fix", "fix_marker") else 6
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")
        if self.utterances_per_trajectory < 1:
            raise ValueError("utterances_per_trajectory must be >= 1")
        if self.i_max < 1:
            raise ValueError("i_max must be >= 1")


@dataclass(frozen=True)
class CorpusPair:
    trajectory: Trajectory
    utterance: Utterance
    split: str


@dataclass
class Corpus:
    pairs: list

    def split(self, name: str) -> list:
        return [p for p in self.pairs if p.split == name]

    def slots(self) -> list:
        """(trajectory, split) skeleton reused when a parent relabels the corpus."""
        return [(p.trajectory, p.split) for p in self.pairs]

    def to_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for p in self.pairs:
                f.write(
                    " ".join(flatten(p.trajectory))
                    + "\t"
                    + " ".join(p.utterance)
                    + "\t"
                    + p.split
                    + "\n"
                )

    @classmethod
    def from_tsv(cls, path, i_max: int = DEFAULT_I_MAX) -> "Corpus":
        pairs = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
                actions, utterance, split = fields
                t = segment(actions.split(), i_max)
                if t is None:
                    raise ValueError(f"{path}:{lineno}: unsegmentable action sequence")
                if split not in SPLITS:
                    raise ValueError(f"{path}:{lineno}: unknown split {split!r}")
                u = tuple(utterance.split()) if utterance else ()
                pairs.append(CorpusPair(t, u, split))
        return cls(pairs)


def _sample_permutation(rng, i):
    return tuple(int(x) + 1 for x in rng.permutation(i))


def _utterances_for(spec: LanguageSpec, t: Trajectory, rng) -> list:
    i = len(t)
    identity = tuple(range(1, i + 1))
    kind = spec.kind
    if kind == "fix":
        return [render(t, identity, False)] * spec.utterances_per_trajectory
    if kind == "fix_marker":
        return [render(t, identity, True)] * spec.utterances_per_trajectory
    if kind == "free_marker":
        return [
            render(t, _sample_permutation(rng, i), True)
            for _ in range(spec.utterances_per_trajectory)
        ]
    if kind == "mix":
        # two utterances per basic type; free-order permutations sampled
        # with replacement
        out = [render(t, identity, True)] * 2
        out += [render(t, identity, False)] * 2
        out += [render(t, _sample_permutation(rng, i), True) for _ in range(2)]
        return out
    # mix_drop: half fixed-order, half free-order; every marker kept
    # independently with probability 1 - drop_probability
    n = spec.utterances_per_trajectory
    n_fixed = n // 2 + n % 2
    out = []
    for j in range(n):
        order = identity if j < n_fixed else _sample_permutation(rng, i)
        mask = {k for k in range(1, i + 1) if rng.random() >= spec.drop_probability}
        out.append(render(t, order, mask))
    return out


def build_corpus(spec: LanguageSpec, trajectories) -> Corpus:
    """Generate all trajectory-utterance pairs for a regime and split them
    80/10/10 at the pair level (floor for train and dev, remainder test)."""
    rng = np.random.default_rng(spec.rng_seed)
    flat = []
    for t in trajectories:
        for u in _utterances_for(spec, t, rng):
            flat.append((t, u))
    n = len(flat)
    order = rng.permutation(n)
    n_train = int(0.8 * n)
    n_dev = int(0.1 * n)
    split_of = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            split_of[idx] = "train"
        elif rank < n_train + n_dev:
            split_of[idx] = "dev"
        else:
            split_of[idx] = "test"
    pairs = [CorpusPair(t, u, split_of[k]) for k, (t, u) in enumerate(flat)]
    return Corpus(pairs)
