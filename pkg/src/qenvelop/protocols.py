"""BB84 and B92 models, attacks, and quantum bit error rates.

Outcome labels are joint ``"<eve>:<bob>"`` strings. ``"-"`` marks a party that
records nothing: ``"-:1"`` is Bob reading 1 with Eve passive, ``"X0:-"`` is an
Eve-only guess from the leakage readout.

BB84 labels: Alice ``Z0 Z1 X0 X1`` (basis, bit); Bob ``Z X``; Eve ``pass`` plus
``iZ``/``iX`` for intercept-resend in that basis.

B92 labels: Alice ``send0 send1`` preparing ``cos t|0> +- sin t|1>``; Bob
``m0``/``m1`` measure in the basis of ``send0``/``send1`` and its orthogonal
complement, reading a conclusive ``1``/``0`` on the complement and ``?``
otherwise; Eve ``pass`` plus ``iH`` for a Helstrom intercept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import TOL
from .discrimination import helstrom_binary
from .envelopment import envelop_with_leakage
from .exceptions import InsufficientDataError, ParameterError, UnsupportedModelError
from .model import CommandSet, Povm, QMModel, born_probability

PASS = "pass"
INCONCLUSIVE = "?"

_SQ = 1.0 / math.sqrt(2.0)
BB84_BASES = {
    "Z": (np.array([1.0, 0.0], dtype=complex), np.array([0.0, 1.0], dtype=complex)),
    "X": (np.array([_SQ, _SQ], dtype=complex), np.array([_SQ, -_SQ], dtype=complex)),
}


@dataclass(frozen=True)
class ProtocolSpec:
    kind: str = "bb84"
    theta: float = math.pi / 8

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in ("bb84", "b92"):
            raise ParameterError(f"unknown protocol {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "b92" and not (0.0 < self.theta <= math.pi / 4):
            raise ParameterError(f"B92 angle must satisfy 0 < theta <= pi/4, got {self.theta!r}")

    @property
    def basis_angles(self) -> dict:
        if self.kind == "bb84":
            return {"Z": 0.0, "X": math.pi / 4}
        return {"send0": self.theta, "send1": -self.theta}


@dataclass(frozen=True)
class AttackSpec:
    """Eve's behaviour.

    ``kind`` is ``none``, ``intercept_resend`` or ``leakage_readout``.
    ``fraction`` of the trials are attacked (intercept-resend); ``basis_policy``
    is ``uniform``, ``Z`` or ``X`` for BB84 and ignored by B92; ``r`` is the
    leakage bound.
    """

    kind: str = "none"
    fraction: float = 1.0
    basis_policy: str = "uniform"
    r: float = 0.0

    def __post_init__(self):
        aliases = {"intercept": "intercept_resend", "leakage": "leakage_readout"}
        kind = aliases.get(self.kind, self.kind)
        if kind not in ("none", "intercept_resend", "leakage_readout"):
            raise ParameterError(f"unknown attack kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not (0.0 <= self.fraction <= 1.0):
            raise ParameterError(f"attack fraction must lie in [0, 1], got {self.fraction!r}")
        if self.basis_policy not in ("uniform", "Z", "X"):
            raise ParameterError(f"unknown basis policy {self.basis_policy!r}")
        if kind == "leakage_readout" and not (0.0 <= self.r < 1.0):
            raise ParameterError(f"leakage bound r must satisfy 0 <= r < 1, got {self.r!r}")


def split_outcome(label: str) -> tuple:
    eve, _, bob = label.rpartition(":")
    return eve, bob


def _proj(v):
    return np.outer(v, v.conj())


def _intercept_povm(eve_basis, resend, bob_povm):
    """Eve measures projectively, resends ``resend[j_E]``, Bob applies ``bob_povm``.

    Element ``(j_E, j_B)`` is ``P_{j_E} <resend_{j_E}| M_{j_B} |resend_{j_E}>``.
    """
    elements = []
    for je, (ev, rv) in enumerate(zip(eve_basis, resend)):
        for jb, m in bob_povm.items():
            weight = float(np.real(np.vdot(rv, m @ rv)))
            elements.append((f"{je}:{jb}", _proj(ev) * weight))
    return Povm(elements)


def _passive(bob_povm):
    return bob_povm.relabel(lambda jb: f"-:{jb}")


def _eve_intercept_labels(protocol_kind, attack):
    if attack.kind != "intercept_resend":
        return ()
    if protocol_kind == "b92":
        return ("iH",)
    if attack.basis_policy == "uniform":
        return ("iX", "iZ")
    return (f"i{attack.basis_policy}",)


def bb84_model(attack: AttackSpec = AttackSpec()) -> QMModel:
    """BB84 with an optional attack; leakage attacks wrap the passive model."""
    states = {f"{basis}{bit}": BB84_BASES[basis][bit] for basis in ("Z", "X") for bit in (0, 1)}
    bob = {basis: Povm([(str(k), _proj(v)) for k, v in enumerate(BB84_BASES[basis])]) for basis in ("Z", "X")}
    eve = (PASS,) + _eve_intercept_labels("bb84", attack)
    povms = {}
    for b, m in bob.items():
        povms[(b, PASS)] = _passive(m)
        for e in eve[1:]:
            basis = BB84_BASES[e[1]]
            povms[(b, e)] = _intercept_povm(basis, basis, m)
    model = QMModel(
        CommandSet(tuple(states), tuple(bob), eve),
        states,
        povms,
        meta={"protocol": "bb84", "attack": attack.kind},
    )
    if attack.kind == "leakage_readout":
        model, _ = leakage_attack_model(model, attack.r)
    return model


def b92_states(theta: float) -> dict:
    c, s = math.cos(theta), math.sin(theta)
    return {"send0": np.array([c, s], dtype=complex), "send1": np.array([c, -s], dtype=complex)}


def b92_model(theta: float, attack: AttackSpec = AttackSpec()) -> QMModel:
    ProtocolSpec("b92", theta)
    states = b92_states(theta)
    c, s = math.cos(theta), math.sin(theta)
    perp = {"send0": np.array([-s, c], dtype=complex), "send1": np.array([s, c], dtype=complex)}
    bob = {
        "m0": Povm([("1", _proj(perp["send0"])), (INCONCLUSIVE, _proj(states["send0"]))]),
        "m1": Povm([("0", _proj(perp["send1"])), (INCONCLUSIVE, _proj(states["send1"]))]),
    }
    eve = (PASS,) + _eve_intercept_labels("b92", attack)
    povms = {}
    if len(eve) > 1:
        hel = helstrom_binary(states["send0"], states["send1"])
        eve_basis = [hel.povm["0"], hel.povm["1"]]
        # rank-one projectors: recover the basis vectors
        vecs = [np.linalg.eigh(p)[1][:, -1] for p in eve_basis]
    for b, m in bob.items():
        povms[(b, PASS)] = _passive(m)
        if len(eve) > 1:
            povms[(b, "iH")] = _intercept_povm(vecs, [states["send0"], states["send1"]], m)
    model = QMModel(
        CommandSet(tuple(states), tuple(bob), eve),
        states,
        povms,
        meta={"protocol": "b92", "theta": repr(float(theta)), "attack": attack.kind},
    )
    if attack.kind == "leakage_readout":
        model, _ = leakage_attack_model(model, attack.r)
    return model


def build_model(protocol: ProtocolSpec, attack: AttackSpec = AttackSpec()) -> QMModel:
    if protocol.kind == "bb84":
        return bb84_model(attack)
    return b92_model(protocol.theta, attack)


def leakage_attack_model(protocol_model: QMModel, r: float, pair=None):
    """Leakage envelopment of a protocol model; the extra readout is Eve-private."""
    beta, f = envelop_with_leakage(protocol_model, r, "helstrom", pair)
    meta = dict(beta.meta)
    meta["attack"] = "leakage_readout"
    beta = QMModel(beta.commands, beta.states, beta.povms, beta.unitaries, eve_private=beta.eve_private, meta=meta)
    return beta, f


# -- sifting and error rates --------------------------------------------------
def alice_bit(kind: str, alice: str) -> str:
    return alice[-1]


def sift(kind: str, command, outcome: str):
    """``(kept, error)`` for one trial after the public basis comparison."""
    a, b, _ = command
    _, jb = split_outcome(outcome)
    if jb == "-":
        return False, False
    if kind == "bb84":
        kept = a[0] == b
    else:
        kept = jb != INCONCLUSIVE
    return kept, kept and jb != alice_bit(kind, a)


def _check_protocol_model(model, protocol):
    kind = model.meta.get("protocol")
    if kind is None:
        raise UnsupportedModelError("model was not built by the protocol builders (no 'protocol' metadata)")
    if kind != protocol.kind:
        raise UnsupportedModelError(f"model is a {kind} model, requested protocol is {protocol.kind}")


def eve_weights(model: QMModel, protocol: ProtocolSpec, attack: AttackSpec) -> dict:
    """Probability of each Eve command in a Bob-facing trial."""
    labels = _eve_intercept_labels(protocol.kind, attack)
    missing = [e for e in labels if e not in model.commands.eve]
    if missing:
        raise UnsupportedModelError(f"model lacks Eve command(s) {missing} required by the attack")
    if not labels:
        return {PASS: 1.0}
    p = attack.fraction
    weights = {e: p / len(labels) for e in labels}
    if p < 1.0:
        weights[PASS] = 1.0 - p
    return weights


def exact_qber(model: QMModel, protocol: ProtocolSpec, attack: AttackSpec) -> float:
    """Sifted error rate from the probability table, uniform Alice and Bob choices."""
    _check_protocol_model(model, protocol)
    eve = eve_weights(model, protocol, attack)
    kept_terms, err_terms = [], []
    wa = 1.0 / len(model.commands.alice)
    wb = 1.0 / len(model.commands.bob)
    for a in model.commands.alice:
        for b in model.commands.bob:
            for e, we in eve.items():
                cmd = (a, b, e)
                for j in model.outcomes(cmd):
                    kept, err = sift(protocol.kind, cmd, j)
                    if not kept:
                        continue
                    p = wa * wb * we * born_probability(model, cmd, j)
                    kept_terms.append(p)
                    if err:
                        err_terms.append(p)
    kept_total = math.fsum(kept_terms)
    if kept_total <= 0:
        raise InsufficientDataError("no trial survives sifting")
    return math.fsum(err_terms) / kept_total


@dataclass(frozen=True)
class QberEstimate:
    qber: float
    n_compared: int
    confidence_halfwidth: float
    n_sifted: int = 0
    n_trials: int = 0

    def covers(self, value: float) -> bool:
        return abs(value - self.qber) <= self.confidence_halfwidth


def sift_and_estimate_qber(run_log, protocol: ProtocolSpec, sample_fraction: float = 1.0) -> QberEstimate:
    """Estimate the QBER from a run log by publicly comparing sifted bits.

    A seeded random subset of ``ceil(sample_fraction * n_sifted)`` sifted
    trials is revealed; the seed is the log's own seed.
    """
    if not (0.0 < sample_fraction <= 1.0):
        raise ParameterError(f"sample_fraction must lie in (0, 1], got {sample_fraction!r}")
    if len(run_log) == 0:
        raise InsufficientDataError("empty run log")
    cmds = run_log.command_labels
    outs = run_log.outcome_labels
    kept_lut = np.zeros((len(cmds), len(outs)), dtype=bool)
    err_lut = np.zeros_like(kept_lut)
    for i, c in enumerate(cmds):
        for k, o in enumerate(outs):
            kept_lut[i, k], err_lut[i, k] = sift(protocol.kind, c, o)
    ci, oi = run_log.command_index, run_log.outcome_index
    kept = kept_lut[ci, oi]
    errors = err_lut[ci, oi][kept]
    n_sifted = int(kept.sum())
    if n_sifted == 0:
        raise InsufficientDataError("no trial survives sifting")
    n_cmp = math.ceil(sample_fraction * n_sifted)
    if n_cmp < n_sifted:
        from .trials import stream_generator

        pick = np.sort(stream_generator(run_log.seed, stream=2).permutation(n_sifted)[:n_cmp])
        errors = errors[pick]
    q = int(errors.sum()) / n_cmp
    half = 3.0 * math.sqrt(q * (1.0 - q) / n_cmp)
    return QberEstimate(q, n_cmp, half, n_sifted, len(run_log))


def protocol_schedule(model: QMModel, protocol: ProtocolSpec, attack: AttackSpec, n: int, seed: int) -> list:
    """Random Bob-facing commands: uniform Alice and Bob choices, Eve per the attack."""
    from .trials import stream_generator

    _check_protocol_model(model, protocol)
    eve = eve_weights(model, protocol, attack)
    gen = stream_generator(seed, stream=1)
    u = gen.random((n, 3))
    alice, bob = model.commands.alice, model.commands.bob
    eve_labels = sorted(eve)
    cdf = np.cumsum([eve[e] for e in eve_labels])
    ia = np.minimum((u[:, 0] * len(alice)).astype(int), len(alice) - 1)
    ib = np.minimum((u[:, 1] * len(bob)).astype(int), len(bob) - 1)
    ie = np.minimum(np.searchsorted(cdf, u[:, 2] * cdf[-1], side="right"), len(eve_labels) - 1)
    return [(alice[x], bob[y], eve_labels[z]) for x, y, z in zip(ia.tolist(), ib.tolist(), ie.tolist())]
