"""Trial engine: schedule commands, sample outcomes, keep an append-only log.

Randomness comes from numpy's Philox4x64 counter-based generator keyed by
``(seed, stream)``. Stream 0 drives outcome sampling, one double per trial, so
``stream_position`` of trial ``k`` is the number of doubles drawn before it.
Stream 1 is used for random schedules and stream 2 for QBER sample
selection. Outcomes are drawn by inverse CDF over the lexicographically
sorted outcome labels of the command's POVM.

Run-log file format (UTF-8, tab separated, every line newline-terminated)::

    #qenvelop-runlog<TAB>version=1<TAB>model_id=<sha256><TAB>seed=<int><TAB>rng=philox4x64
    <index><TAB><b_A><TAB><b_B><TAB><b_E><TAB><outcome><TAB><stream_position>
    ...

The header does not depend on the number of trials, so the file of the first
``n`` trials is a byte prefix of the file of ``n + 1`` trials.
"""

from __future__ import annotations

import copy
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .discrimination import bayes_posterior, check_prior, entropy
from .exceptions import InsufficientDataError, ParseError, PolicyError, UnknownLabelError
from .model import QMModel, born_probability

RNG_NAME = "philox4x64"
LOG_MAGIC = "#qenvelop-runlog"
LOG_VERSION = 1


def stream_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for one named stream of a run."""
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), stream]))


class TrialRecord(NamedTuple):
    index: int
    command: tuple
    outcome: str
    stream_position: int


class RunLog:
    """Immutable, column-stored sequence of trial records."""

    def __init__(self, model_id: str, seed: int, records: Sequence[TrialRecord] = (), rng: str = RNG_NAME, extra=None):
        self.model_id = model_id
        self.seed = int(seed)
        self.rng = rng
        self.extra = dict(extra or {})
        cmds = sorted({tuple(r.command) for r in records})
        outs = sorted({r.outcome for r in records})
        cpos = {c: i for i, c in enumerate(cmds)}
        opos = {o: i for i, o in enumerate(outs)}
        index = np.array([r.index for r in records], dtype=np.int64)
        if index.size > 1 and not np.all(np.diff(index) > 0):
            raise ValueError("trial indices must be strictly increasing")
        self._set(
            tuple(cmds),
            tuple(outs),
            index,
            np.array([cpos[tuple(r.command)] for r in records], dtype=np.int64),
            np.array([opos[r.outcome] for r in records], dtype=np.int64),
            np.array([r.stream_position for r in records], dtype=np.int64),
        )

    def _set(self, cmds, outs, index, ci, oi, pos):
        self.command_labels = cmds
        self.outcome_labels = outs
        for arr in (index, ci, oi, pos):
            arr.setflags(write=False)
        self.index, self.command_index, self.outcome_index, self.stream_position = index, ci, oi, pos

    @classmethod
    def _from_columns(cls, model_id, seed, cmds, outs, ci, oi, pos, rng=RNG_NAME):
        # relabel so the label tables are sorted, as in __init__
        used_c = np.unique(ci)
        used_o = np.unique(oi)
        c_sorted = sorted((cmds[i], i) for i in used_c)
        o_sorted = sorted((outs[i], i) for i in used_o)
        c_map = np.zeros(len(cmds), dtype=np.int64)
        o_map = np.zeros(len(outs), dtype=np.int64)
        for new, (_, old) in enumerate(c_sorted):
            c_map[old] = new
        for new, (_, old) in enumerate(o_sorted):
            o_map[old] = new
        log = cls.__new__(cls)
        log.model_id, log.seed, log.rng, log.extra = model_id, int(seed), rng, {}
        log._set(
            tuple(c for c, _ in c_sorted),
            tuple(o for o, _ in o_sorted),
            np.arange(len(ci), dtype=np.int64),
            c_map[ci],
            o_map[oi],
            np.asarray(pos, dtype=np.int64),
        )
        return log

    def __len__(self):
        return int(self.index.size)

    def __getitem__(self, k) -> TrialRecord:
        return TrialRecord(
            int(self.index[k]),
            self.command_labels[self.command_index[k]],
            self.outcome_labels[self.outcome_index[k]],
            int(self.stream_position[k]),
        )

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    @property
    def records(self) -> list:
        return list(self)

    def commands(self) -> list:
        return [self.command_labels[i] for i in self.command_index.tolist()]

    def __eq__(self, other):
        if not isinstance(other, RunLog):
            return NotImplemented
        return self.header() == other.header() and self.records == other.records

    def header(self) -> str:
        head = f"{LOG_MAGIC}\tversion={LOG_VERSION}\tmodel_id={self.model_id}\tseed={self.seed}\trng={self.rng}"
        for key, value in self.extra.items():
            head += f"\t{key}={value}"
        return head

    def with_extra(self, **fields) -> "RunLog":
        """Copy with additional ``key=value`` header fields (e.g. provenance)."""
        log = copy.copy(self)
        log.extra = {**self.extra, **{k: str(v) for k, v in fields.items()}}
        return log

    def to_text(self) -> str:
        cmds = ["\t".join(c) for c in self.command_labels]
        outs = self.outcome_labels
        lines = [self.header()]
        for k, c, o, p in zip(
            self.index.tolist(), self.command_index.tolist(), self.outcome_index.tolist(), self.stream_position.tolist()
        ):
            lines.append(f"{k}\t{cmds[c]}\t{outs[o]}\t{p}")
        return "\n".join(lines) + "\n"

    def __repr__(self):
        return f"RunLog(n={len(self)}, seed={self.seed}, model_id={self.model_id[:12]}...)"


def save_log(log: RunLog, path) -> None:
    Path(path).write_text(log.to_text())


def parse_log(text: str) -> RunLog:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    else:
        # last line lacks its newline terminator: the file was cut short
        raise ParseError("truncated record (missing line terminator)", len(lines))
    if not lines:
        raise ParseError("empty run log", 1)
    head = lines[0].split("\t")
    if head[0] != LOG_MAGIC:
        raise ParseError(f"not a run log (expected {LOG_MAGIC!r} header)", 1)
    try:
        fields = dict(item.split("=", 1) for item in head[1:])
        version = int(fields["version"])
        model_id, seed, rng = fields["model_id"], int(fields["seed"]), fields["rng"]
    except (KeyError, ValueError) as exc:
        raise ParseError(f"malformed header ({exc})", 1) from None
    if version != LOG_VERSION:
        raise ParseError(f"unsupported run-log version {version}", 1)
    records = []
    last = -1
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 6:
            raise ParseError(f"expected 6 tab-separated fields, got {len(parts)}", lineno)
        try:
            idx, pos = int(parts[0]), int(parts[5])
        except ValueError:
            raise ParseError("index and stream position must be integers", lineno) from None
        if idx <= last:
            raise ParseError(f"trial index {idx} does not increase", lineno)
        if not all(parts[1:5]):
            raise ParseError("empty label", lineno)
        last = idx
        records.append(TrialRecord(idx, tuple(parts[1:4]), parts[4], pos))
    extra = {k: v for k, v in fields.items() if k not in ("version", "model_id", "seed", "rng")}
    return RunLog(model_id, seed, records, rng, extra)


def load_log(path) -> RunLog:
    return parse_log(Path(path).read_text())


# -- sampling -------------------------------------------------------------------
class _Sampler:
    """Cached inverse-CDF tables per command."""

    def __init__(self, model: QMModel):
        self.model = model
        self._cache = {}

    def table(self, command):
        command = tuple(command)
        hit = self._cache.get(command)
        if hit is None:
            labels = sorted(self.model.outcomes(command))
            probs = np.array([born_probability(self.model, command, o) for o in labels])
            probs = probs / probs.sum()
            cdf = np.cumsum(probs)
            last = int(np.flatnonzero(probs > 0)[-1])
            hit = self._cache[command] = (labels, cdf, last)
        return hit

    def draw(self, command, u):
        labels, cdf, last = self.table(command)
        k = np.minimum(np.searchsorted(cdf, u, side="right"), last)
        return labels, k


@dataclass(frozen=True)
class FeedbackPolicy:
    """Chooses trial ``k + 1``'s command from the records of trials ``0..k``."""

    name: str
    next_command: Callable
    posterior: Callable | None = None  # history -> posterior, for policies that keep one


def _invalid(model, command):
    try:
        return tuple(command) not in model.commands
    except TypeError:
        return True


def run_trials(model: QMModel, schedule, n: int, seed: int) -> RunLog:
    """Run ``n`` trials of ``model``.

    ``schedule`` is either a sequence of commands, cycled if shorter than
    ``n``, or a :class:`FeedbackPolicy`. Identical arguments give identical
    logs.
    """
    n = int(n)
    if n < 1:
        raise ValueError("need at least one trial")
    gen = stream_generator(seed, 0)
    sampler = _Sampler(model)
    if isinstance(schedule, FeedbackPolicy):
        return _run_policy(model, schedule, n, seed, gen, sampler)

    schedule = list(schedule)
    if not schedule:
        raise PolicyError("empty schedule")
    cmds = sorted({tuple(c) for c in schedule})
    for c in cmds:
        if _invalid(model, c):
            k = next(i for i, s in enumerate(schedule) if tuple(s) == c)
            raise PolicyError(f"trial {k}: command {c} is not a command of the model")
    cpos = {c: i for i, c in enumerate(cmds)}
    reps = -(-n // len(schedule))
    ci = np.array([cpos[tuple(c)] for c in schedule] * reps, dtype=np.int64)[:n]
    u = gen.random(n)

    outs = sorted({o for c in cmds for o in model.outcomes(c)})
    opos = {o: i for i, o in enumerate(outs)}
    oi = np.empty(n, dtype=np.int64)
    for i, c in enumerate(cmds):
        mask = ci == i
        labels, k = sampler.draw(c, u[mask])
        oi[mask] = np.array([opos[x] for x in labels])[k]
    return RunLog._from_columns(model.model_id, seed, cmds, outs, ci, oi, np.arange(n))


def _run_policy(model, policy, n, seed, gen, sampler):
    records = []
    for k in range(n):
        try:
            command = policy.next_command(list(records), model.commands)
        except PolicyError:
            raise
        except Exception as exc:  # noqa: BLE001 - report which trial broke the policy
            raise PolicyError(f"trial {k}: policy {policy.name!r} failed: {exc}") from exc
        if _invalid(model, command):
            raise PolicyError(f"trial {k}: policy {policy.name!r} returned {command!r}, not a command of the model")
        command = tuple(command)
        labels, j = sampler.draw(command, gen.random())
        records.append(TrialRecord(k, command, labels[int(j)], k))
    return RunLog(model.model_id, seed, records)


# -- frequencies and fits -----------------------------------------------------------
def outcome_counts(log: RunLog) -> dict:
    """Command -> Counter of outcomes."""
    if len(log) == 0:
        raise InsufficientDataError("empty run log")
    pairs = log.command_index * len(log.outcome_labels) + log.outcome_index
    values, counts = np.unique(pairs, return_counts=True)
    out = {}
    for v, cnt in zip(values.tolist(), counts.tolist()):
        c, o = divmod(v, len(log.outcome_labels))
        out.setdefault(log.command_labels[c], Counter())[log.outcome_labels[o]] = cnt
    return out


def empirical_frequencies(log: RunLog) -> dict:
    """Command -> {outcome: relative frequency}."""
    freqs = {}
    for cmd, counter in outcome_counts(log).items():
        total = sum(counter.values())
        freqs[cmd] = {o: cnt / total for o, cnt in sorted(counter.items())}
    return freqs


def tv_bound(n_rows: int, n_min: int, delta: float = 0.01) -> float:
    """Distribution-free threshold ``3 sqrt(ln(2 n_rows / delta) / (2 n_min))`` for max TV."""
    return 3.0 * math.sqrt(math.log(2 * n_rows / delta) / (2 * n_min))


@dataclass(frozen=True)
class CommandFit:
    counts: Mapping
    predicted: Mapping
    tv: float

    @property
    def n(self) -> int:
        return sum(self.counts.values())


@dataclass
class FitReport:
    per_command: dict
    max_tv: float
    n_min: int
    bound: float
    warnings: list = field(default_factory=list)


def fit_model(model: QMModel, log: RunLog) -> FitReport:
    """Total-variation distance between predicted and observed outcome frequencies.

    No verdict is drawn; ``bound`` is a reference threshold the caller may use.
    """
    counts = outcome_counts(log)
    per = {}
    for cmd in sorted(counts):
        if cmd not in model.commands:
            raise UnknownLabelError(f"log command {cmd} is not a command of the model")
        povm = model.povm(cmd)
        stray = [o for o in counts[cmd] if o not in povm]
        if stray:
            raise UnknownLabelError(f"log outcome(s) {stray} are not outcomes of command {cmd}")
        predicted = {o: born_probability(model, cmd, o) for o in povm.outcomes}
        total = sum(counts[cmd].values())
        tv = 0.5 * math.fsum(abs(p - counts[cmd].get(o, 0) / total) for o, p in predicted.items())
        per[cmd] = CommandFit(dict(counts[cmd]), predicted, tv)
    n_min = min(f.n for f in per.values())
    warnings = []
    if log.model_id != model.model_id:
        warnings.append(f"model_id mismatch: log was generated by {log.model_id[:12]}..., fitted model is {model.model_id[:12]}...")
    return FitReport(per, max(f.tv for f in per.values()), n_min, tv_bound(len(per), n_min), warnings)


# -- policies -------------------------------------------------------------------
def uniform_random_policy(model: QMModel, alice: str, seed: int, controls=None) -> FeedbackPolicy:
    """Picks ``(b_B, b_E)`` uniformly at random; Alice's command stays fixed."""
    controls = sorted(controls) if controls is not None else list(model.commands.rests())
    gen = stream_generator(seed, stream=3)

    def next_command(history, commands):
        b, e = controls[int(gen.integers(len(controls)))]
        return (alice, b, e)

    return FeedbackPolicy("uniform-random", next_command)


def greedy_discrimination_policy(model: QMModel, prior: Mapping | None = None, alice: str | None = None, controls=None) -> FeedbackPolicy:
    """One-step lookahead policy that learns Alice's command from outcomes.

    Alice repeats a fixed command (``alice``, default the first label) that
    the policy does not see. The policy keeps a Bayes posterior over Alice's
    commands from the recorded outcomes and picks the ``(b_B, b_E)`` control
    with the smallest expected posterior entropy, breaking ties by
    lexicographic order.
    """
    labels = model.commands.alice
    prior = check_prior(prior if prior is not None else {a: 1 / len(labels) for a in labels}, labels)
    alice = labels[0] if alice is None else alice
    if alice not in labels:
        raise UnknownLabelError(f"unknown alice command {alice!r}")
    controls = sorted(controls) if controls is not None else list(model.commands.rests())
    likelihood = {
        rest: {
            o: {a: born_probability(model, (a,) + tuple(rest), o) for a in labels}
            for o in model.povm(rest).outcomes
        }
        for rest in controls
    }
    state = {"n": 0, "post": dict(prior)}

    def posterior(history):
        if len(history) < state["n"]:
            state["n"], state["post"] = 0, dict(prior)
        post = state["post"]
        for rec in history[state["n"]:]:
            post = bayes_posterior(model, post, rec.command[1:], rec.outcome)
        state["n"], state["post"] = len(history), post
        return post

    def expected_entropy(post, rest):
        total = []
        for lik in likelihood[rest].values():
            joint = {a: post[a] * lik[a] for a in labels}
            pj = math.fsum(joint.values())
            if pj > 0:
                total.append(pj * entropy({a: v / pj for a, v in joint.items()}))
        return math.fsum(total)

    def next_command(history, commands):
        post = posterior(history)
        best, best_h = None, math.inf
        for rest in controls:
            h = expected_entropy(post, rest)
            if h < best_h - 1e-12:
                best, best_h = rest, h
        return (alice,) + tuple(best)

    return FeedbackPolicy("greedy-entropy", next_command, posterior)
