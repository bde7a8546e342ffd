"""Envelopment of one quantum model by another.

A map ``f`` from (command, outcome) pairs of a model ``beta`` to those of a
model ``alpha`` envelops ``alpha`` when, for every command ``b`` and outcome
``j`` of ``alpha``, ``Pr_alpha(j | b)`` equals the sum of ``Pr_beta`` over the
preimage of ``(b, j)``. Data that fit ``alpha`` then fit ``beta`` equally
well, whatever ``beta``'s states look like.

The leakage construction builds such a ``beta`` for any ``alpha``: Alice's
states gain a tensor factor ``|w(b_A)>`` whose mutual overlaps are at most
``r``, so every overlap shrinks by that factor while the statistics of Eve's
original measurements stay the same.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .config import TOL
from .discrimination import helstrom_binary, pretty_good_measurement
from .exceptions import CompositionError, DomainError, ParameterError, ValidationError
from .model import CommandSet, Povm, QMModel, born_probability, overlap_matrix, validate_model

EXTRA_MARKER = "@leak/"


class EnvelopmentMap:
    """Partial map ``(command_beta, outcome_beta) -> (command_alpha, outcome_alpha)``.

    Parameters
    ----------
    mapping : mapping
        Explicit pair table; its keys are the domain.
    factored : (g, h), optional
        Command map ``g`` and outcome map ``h`` with ``mapping[(b, j)] == (g[b], h[j])``.
    """

    def __init__(self, mapping: Mapping, factored=None):
        self._map = {(tuple(b), j): (tuple(b2), j2) for (b, j), (b2, j2) in mapping.items()}
        self.factored = None
        if factored is not None:
            g, h = factored
            g = {tuple(k): tuple(v) for k, v in g.items()}
            h = dict(h)
            for (b, j), (b2, j2) in self._map.items():
                if g.get(b) != b2 or h.get(j) != j2:
                    raise ValueError(f"factored form disagrees with the pair table at {(b, j)}")
            self.factored = (g, h)

    @classmethod
    def from_factored(cls, g: Mapping, h: Mapping, domain) -> "EnvelopmentMap":
        g = {tuple(k): tuple(v) for k, v in g.items()}
        mapping = {}
        for b, j in domain:
            b = tuple(b)
            if b not in g or j not in h:
                raise DomainError(f"factored map is undefined at {(b, j)}")
            mapping[(b, j)] = (g[b], h[j])
        return cls(mapping, (g, h))

    @classmethod
    def identity(cls, model: QMModel) -> "EnvelopmentMap":
        domain = [(c, j) for c in model.commands for j in model.outcomes(c)]
        g = {c: c for c in model.commands}
        h = {j: j for j in model.outcome_set}
        return cls.from_factored(g, h, domain)

    def __call__(self, command, outcome):
        return self._map[(tuple(command), outcome)]

    def __len__(self):
        return len(self._map)

    def __eq__(self, other):
        return isinstance(other, EnvelopmentMap) and self._map == other._map

    def items(self):
        return sorted(self._map.items())

    @property
    def domain(self) -> set:
        return set(self._map)

    @property
    def image(self) -> set:
        return set(self._map.values())

    def preimages(self) -> dict:
        pre = defaultdict(list)
        for src, dst in sorted(self._map.items()):
            pre[dst].append(src)
        return dict(pre)

    def __repr__(self):
        kind = "factored" if self.factored is not None else "explicit"
        return f"EnvelopmentMap({len(self)} pairs, {kind})"


def map_from_alice_relabeling(alpha: QMModel, beta: QMModel, g_alice: Mapping) -> EnvelopmentMap:
    """Factored map that relabels Alice's command by ``g_alice`` and keeps everything else.

    Its domain is every beta command whose image is an alpha command, paired
    with the outcomes the two POVMs share.
    """
    g, h, domain = {}, {}, []
    for cmd in beta.commands:
        a, b, e = cmd
        if a not in g_alice:
            raise DomainError(f"Alice relabeling undefined for {a!r}")
        target = (g_alice[a], b, e)
        if target not in alpha.commands:
            continue
        g[cmd] = target
        shared = set(alpha.outcomes(target))
        for j in beta.outcomes(cmd):
            if j in shared:
                h[j] = j
                domain.append((cmd, j))
    return EnvelopmentMap.from_factored(g, h, domain)


# -- checking -----------------------------------------------------------------
@dataclass(frozen=True)
class EnvelopmentCheck:
    holds: bool
    max_deviation: float
    witness: tuple  # (alpha command, alpha outcome) with the largest deviation


def check_envelopment(alpha: QMModel, beta: QMModel, f: EnvelopmentMap, tol: float = TOL.envelopment) -> EnvelopmentCheck:
    """Compare ``Pr_alpha`` with preimage sums of ``Pr_beta``.

    Every outcome of every alpha command hit by ``f`` is checked, so an
    outcome with an empty preimage counts as predicted probability 0.
    """
    for (b, j), (b2, j2) in f.items():
        if b not in beta.commands or j not in beta.povm(b):
            raise DomainError(f"map domain element {(b, j)} is not a (command, outcome) pair of beta")
        if b2 not in alpha.commands or j2 not in alpha.povm(b2):
            raise DomainError(f"map image element {(b2, j2)} is not a (command, outcome) pair of alpha")

    pre = f.preimages()
    commands = sorted({b for b, _ in pre})
    worst, witness = -1.0, None
    for b in commands:
        for j in alpha.outcomes(b):
            p_alpha = born_probability(alpha, b, j)
            p_beta = math.fsum(born_probability(beta, b2, j2) for b2, j2 in pre.get((b, j), ()))
            dev = abs(p_alpha - p_beta)
            if dev > worst:
                worst, witness = dev, (b, j)
    if witness is None:
        return EnvelopmentCheck(False, math.inf, ())
    return EnvelopmentCheck(worst <= tol, worst, witness)


@dataclass(frozen=True)
class OverlapCheck:
    holds: bool
    worst_pair: tuple
    worst_excess: float  # max of S_beta - r * S_alpha over distinct pairs


def verify_overlap_reduction(alpha: QMModel, beta: QMModel, g: Mapping, r: float, tol: float = TOL.overlap) -> OverlapCheck:
    """Check ``S_beta(b, b') <= r * S_alpha(g(b), g(b'))`` for all distinct pairs."""
    labels_b = beta.commands.alice
    missing = [a for a in labels_b if a not in g]
    if missing:
        raise DomainError(f"command map undefined for beta Alice command(s) {missing}")
    bad = [a for a in labels_b if g[a] not in alpha.commands.alice]
    if bad:
        raise DomainError(f"command map sends {bad} outside alpha's Alice commands")
    unreached = set(alpha.commands.alice) - {g[a] for a in labels_b}
    if unreached:
        raise DomainError(f"command map is not onto alpha's Alice commands: {sorted(unreached)} unreached")

    s_beta = overlap_matrix(beta)
    s_alpha = overlap_matrix(alpha)
    idx_a = {a: i for i, a in enumerate(alpha.commands.alice)}
    worst, pair = -math.inf, ()
    for i, x in enumerate(labels_b):
        for k in range(i + 1, len(labels_b)):
            y = labels_b[k]
            excess = s_beta[i, k] - r * s_alpha[idx_a[g[x]], idx_a[g[y]]]
            if excess > worst:
                worst, pair = excess, (x, y)
    if not pair:
        return OverlapCheck(True, (), 0.0)
    return OverlapCheck(worst <= tol, pair, float(worst))


# -- construction -------------------------------------------------------------
def _check_r(r):
    r = float(r)
    if not (0.0 <= r < 1.0):
        raise ParameterError(f"leakage bound r must satisfy 0 <= r < 1, got {r!r}")
    return r


def build_leakage_vectors(n: int, r: float) -> list:
    """``n`` unit vectors in dimension ``n`` with every pairwise inner product equal to ``r``.

    Rows of the Cholesky factor of ``(1 - r) I + r J``, which is positive
    definite for ``0 <= r < 1``.
    """
    r = _check_r(r)
    if int(n) != n or n < 1:
        raise ParameterError(f"need at least one vector, got n={n!r}")
    n = int(n)
    gram = (1.0 - r) * np.eye(n) + r * np.ones((n, n))
    chol = np.linalg.cholesky(gram)
    return [row.astype(np.complex128) for row in chol]


@dataclass(frozen=True)
class LeakageSpec:
    r: float
    leakage_dim: int
    w_vectors: Mapping
    extra_commands: tuple
    extra_povm_policy: object


def _extra_label(policy_name, taken):
    label = f"{EXTRA_MARKER}{policy_name}"
    k = 1
    while label in taken:
        label = f"{EXTRA_MARKER}{policy_name}~{k}"
        k += 1
    return label


def _guess_label(a):
    return f"{a}:-"


def _extra_povm(policy, states, pair):
    """POVM on the enlarged space for an extra Eve command."""
    labels = list(states)
    if callable(policy):
        p = policy(states)
        return p if isinstance(p, Povm) else Povm(p)
    if policy == "helstrom":
        a0, a1 = pair
        res = helstrom_binary(states[a0], states[a1], labels=(a0, a1))
    elif policy == "pgm":
        res = pretty_good_measurement([states[a] for a in labels], labels=labels)
    else:
        raise ParameterError(f"unknown extra POVM policy {policy!r}; use 'helstrom', 'pgm' or a callable")
    return res.povm.relabel(_guess_label)


def leakage_spec(alpha: QMModel, r: float, extra_povm_policy="helstrom") -> LeakageSpec:
    r = _check_r(r)
    labels = alpha.commands.alice
    vecs = build_leakage_vectors(len(labels), r)
    name = extra_povm_policy if isinstance(extra_povm_policy, str) else getattr(extra_povm_policy, "__name__", "custom")
    extra = (_extra_label(name, set(alpha.commands.eve)),)
    return LeakageSpec(r, len(labels), dict(zip(labels, vecs)), extra, extra_povm_policy)


def envelop_with_leakage(alpha: QMModel, r: float, extra_povm_policy="helstrom", pair=None):
    """Enveloping model with leakage overlaps ``r`` and the map onto ``alpha``.

    States become ``|w(b_A)> (x) |v(b_A)>``; Eve's original detection
    operators become ``1 (x) M``; one extra, Eve-private command measures the
    enlarged states according to ``extra_povm_policy`` (``"helstrom"`` on
    ``pair``, default the first two Alice commands; ``"pgm"`` over all of
    them; or a callable taking the state mapping and returning a POVM).

    Returns
    -------
    beta : QMModel
    f : EnvelopmentMap
        Identity on alpha's commands and outcomes.
    """
    r = _check_r(r)
    report = validate_model(alpha)
    if not report.ok:
        raise ValidationError("alpha is not a valid model: " + "; ".join(report.lines()), report)
    spec = leakage_spec(alpha, r, extra_povm_policy)
    labels = alpha.commands.alice
    if pair is None:
        pair = labels[:2] if len(labels) >= 2 else (labels[0], labels[0])
    for a in pair:
        if a not in labels:
            raise DomainError(f"pair member {a!r} is not an Alice command")

    leak_eye = np.eye(spec.leakage_dim)
    states = {a: np.kron(spec.w_vectors[a], alpha.states[a]) for a in labels}

    povms = {rest: Povm([(o, np.kron(leak_eye, m)) for o, m in p.items()]) for rest, p in alpha.povms.items()}
    extra = _extra_povm(spec.extra_povm_policy, states, pair)
    for b in alpha.commands.bob:
        for e in spec.extra_commands:
            povms[(b, e)] = extra
    unitaries = {c: np.kron(leak_eye, u) for c, u in alpha.unitaries.items()}

    commands = CommandSet(labels, alpha.commands.bob, alpha.commands.eve + spec.extra_commands)
    meta = dict(alpha.meta)
    meta["leakage_r"] = repr(r)
    beta = QMModel(
        commands,
        states,
        povms,
        unitaries,
        eve_private=set(alpha.eve_private) | set(spec.extra_commands),
        meta=meta,
    )
    f = EnvelopmentMap.identity(alpha)
    return beta, f


def compose_envelopments(f2: EnvelopmentMap, f1: EnvelopmentMap) -> EnvelopmentMap:
    """Map gamma -> alpha from ``f2`` (gamma -> beta) and ``f1`` (beta -> alpha).

    The composition is defined on the elements of ``f2``'s domain that land
    in ``f1``'s domain. Every element of ``f1``'s domain must be reached by
    ``f2``; otherwise probabilities summed over preimages could not match.
    """
    dom1 = f1.domain
    unreached = dom1 - f2.image
    if unreached:
        raise CompositionError(f"{len(unreached)} domain element(s) of the inner map are not reached, e.g. {sorted(unreached)[0]}")
    mapping = {x: f1(*y) for x, y in f2.items() if y in dom1}
    factored = None
    if f1.factored is not None and f2.factored is not None:
        (g1, h1), (g2, h2) = f1.factored, f2.factored
        g = {b: g1[c] for b, c in g2.items() if c in g1}
        h = {j: h1[k] for j, k in h2.items() if k in h1}
        factored = (g, h)
    return EnvelopmentMap(mapping, factored)
