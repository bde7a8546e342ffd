"""Inferring Alice's command from outcomes.

Bayes posteriors over Alice's commands, the optimal (Helstrom) measurement for
two pure states, and the square-root ("pretty good") measurement as a
sub-optimal heuristic for more than two states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .config import TOL
from .exceptions import (
    ConditioningError,
    ParameterError,
    PreconditionError,
    ShapeError,
    UnknownLabelError,
)
from .model import Povm, QMModel, born_probability


@dataclass(frozen=True)
class DiscriminationResult:
    povm: Povm
    error_probability: float
    decision_rule: Mapping  # outcome label -> hypothesis label


def uniform_prior(labels) -> dict:
    labels = list(labels)
    return {a: 1.0 / len(labels) for a in labels}


def check_prior(prior: Mapping, labels) -> dict:
    """Validate ``prior`` against Alice's labels; missing labels get weight 0."""
    labels = tuple(labels)
    unknown = [k for k in prior if k not in labels]
    if unknown:
        raise UnknownLabelError(f"prior mentions unknown Alice command(s) {unknown}")
    weights = {a: float(prior.get(a, 0.0)) for a in labels}
    if any(w < 0 or not math.isfinite(w) for w in weights.values()):
        raise ParameterError("prior weights must be finite and non-negative")
    total = math.fsum(weights.values())
    if abs(total - 1.0) > TOL.prior_sum:
        raise ParameterError(f"prior weights sum to {total!r}, not 1")
    return weights


def bayes_posterior(model: QMModel, prior: Mapping, command_rest, outcome) -> dict:
    """Posterior over Alice's commands after observing ``outcome``.

    ``command_rest`` is the ``(b_B, b_E)`` part of the command.
    """
    weights = check_prior(prior, model.commands.alice)
    b, e = command_rest
    joint = {a: w * born_probability(model, (a, b, e), outcome) if w > 0 else 0.0 for a, w in weights.items()}
    total = math.fsum(joint.values())
    if total <= 0.0:
        raise ConditioningError(f"outcome {outcome!r} has zero likelihood for {tuple(command_rest)} under the prior")
    return {a: v / total for a, v in joint.items()}


def entropy(dist: Mapping) -> float:
    """Shannon entropy in bits."""
    return -math.fsum(p * math.log2(p) for p in dist.values() if p > 0)


def helstrom_error(overlap: float, p0: float = 0.5, p1: float = 0.5) -> float:
    """Minimum error for two pure states with ``|<s0|s1>| = overlap``."""
    return 0.5 * (1.0 - math.sqrt(max(0.0, 1.0 - 4.0 * p0 * p1 * overlap**2)))


def error_from_povm(states: Sequence, prior: Sequence[float], povm: Povm, decision_rule: Mapping, labels) -> float:
    """``1 - sum_b prior(b) Pr(decide b | b)`` computed from the POVM."""
    index = {lab: i for i, lab in enumerate(labels)}
    correct = []
    for outcome, m in povm.items():
        i = index[decision_rule[outcome]]
        psi = np.asarray(states[i])
        correct.append(prior[i] * float(np.real(np.vdot(psi, m @ psi))))
    return min(max(1.0 - math.fsum(correct), 0.0), 1.0)


def _unit_states(states):
    vecs = [np.asarray(s, dtype=np.complex128) for s in states]
    dims = {v.shape for v in vecs}
    if len(dims) != 1 or vecs[0].ndim != 1:
        raise ShapeError(f"states must be vectors of a common dimension, got shapes {sorted(dims)}")
    for v in vecs:
        if abs(np.linalg.norm(v) - 1.0) > TOL.state_norm:
            raise ParameterError("states must have unit norm")
    return vecs


def _prior_pair(prior):
    p0, p1 = (float(x) for x in prior)
    if p0 < 0 or p1 < 0 or abs(p0 + p1 - 1.0) > TOL.prior_sum:
        raise ParameterError(f"prior {prior} is not a probability pair")
    return p0, p1


def helstrom_binary(state0, state1, prior=(0.5, 0.5), labels=("0", "1")) -> DiscriminationResult:
    """Optimal projective measurement deciding between two pure states.

    Projects onto the positive part of ``p0 |s0><s0| - p1 |s1><s1|`` to decide
    for ``labels[0]`` and onto its complement for ``labels[1]``.
    """
    s0, s1 = _unit_states([state0, state1])
    p0, p1 = _prior_pair(prior)
    gamma = p0 * np.outer(s0, s0.conj()) - p1 * np.outer(s1, s1.conj())
    w, v = np.linalg.eigh(gamma)
    pos = v[:, w > 0]
    neg = v[:, w <= 0]
    povm = Povm([(labels[0], pos @ pos.conj().T), (labels[1], neg @ neg.conj().T)])
    rule = {labels[0]: labels[0], labels[1]: labels[1]}
    err = error_from_povm([s0, s1], (p0, p1), povm, rule, labels)
    return DiscriminationResult(povm, err, rule)


def pretty_good_measurement(states, prior=None, labels=None) -> DiscriminationResult:
    """Square-root measurement for any number of pure states.

    Not optimal in general. Outside the support of the average state the
    identity is completed onto the first outcome, which no state populates.
    """
    vecs = _unit_states(states)
    n = len(vecs)
    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    prior = [1.0 / n] * n if prior is None else [float(p) for p in prior]
    if len(prior) != n or len(labels) != n:
        raise ShapeError("states, prior and labels must have equal length")
    if any(p < 0 for p in prior) or abs(math.fsum(prior) - 1.0) > TOL.prior_sum:
        raise ParameterError("prior must be a probability vector")

    dim = vecs[0].shape[0]
    weighted = [p * np.outer(v, v.conj()) for p, v in zip(prior, vecs)]
    rho = np.sum(weighted, axis=0)
    lam, u = np.linalg.eigh(rho)
    keep = lam > 1e-12 * max(lam.max(), 1.0)
    ui = u[:, keep]
    root_inv = ui @ np.diag(lam[keep] ** -0.5) @ ui.conj().T
    support = ui @ ui.conj().T

    # duplicate states share a hypothesis slot: merge onto the first label
    elements = []
    for k, rk in enumerate(weighted):
        e = root_inv @ rk @ root_inv
        elements.append((e + e.conj().T) / 2)
    elements[0] = elements[0] + (np.eye(dim) - support)
    povm = Povm(list(zip(labels, elements)))
    rule = {lab: lab for lab in labels}
    err = error_from_povm(vecs, prior, povm, rule, labels)
    return DiscriminationResult(povm, err, rule)


@dataclass(frozen=True)
class EveAdvantage:
    err_alpha: float
    err_beta: float


def eve_advantage(alpha: QMModel, beta: QMModel, g: Mapping, pair, prior=(0.5, 0.5), f=None) -> EveAdvantage:
    """Helstrom errors for one pair of Alice commands under two models.

    ``g`` maps beta's Alice commands to alpha's. Unless an explicit map ``f``
    is given, the envelopment checked first is the one that applies ``g`` to
    Alice's label and leaves Bob's, Eve's and the outcome labels unchanged.
    """
    from .envelopment import check_envelopment, map_from_alice_relabeling

    if f is None:
        f = map_from_alice_relabeling(alpha, beta, g)
    check = check_envelopment(alpha, beta, f, TOL.envelopment)
    if not check.holds:
        raise PreconditionError(
            f"beta does not envelop alpha (max deviation {check.max_deviation:.3g} at {check.witness})"
        )
    a0, a1 = pair
    err_a = helstrom_binary(alpha.state(g[a0]), alpha.state(g[a1]), prior).error_probability
    err_b = helstrom_binary(beta.state(a0), beta.state(a1), prior).error_probability
    return EveAdvantage(err_a, err_b)


def sequential_posterior(model: QMModel, prior: Mapping, observations) -> dict:
    """Posterior after a sequence of ``((b_B, b_E), outcome)`` observations."""
    post = check_prior(prior, model.commands.alice)
    for rest, outcome in observations:
        post = bayes_posterior(model, post, rest, outcome)
    return post
