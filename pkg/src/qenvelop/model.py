"""Command-indexed quantum models and Born-rule probabilities.

A model attaches quantum objects to the classical commands that configure an
experiment. A command is the concatenation ``(b_A, b_B, b_E)`` of the labels
sent by Alice's, Bob's and Eve's controllers:

* the prepared state depends on Alice's label only,
* the detection operators (a POVM) depend on ``(b_B, b_E)``,
* an optional unitary depends on the full triple and defaults to the identity.

The probability of ``outcome`` given ``command`` is

    <state| U M_outcome U^dagger |state>

evaluated with compensated summation so that models differing only by exact
zero padding (tensor products with basis vectors) give bit-identical values.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence, Tuple

import numpy as np

from .config import TOL
from .exceptions import (
    DomainError,
    ModelInvariantError,
    ShapeError,
    UnknownLabelError,
)

Command = Tuple[str, str, str]

_FORBIDDEN = set("\t\n\r")


def _check_label(label, role):
    if not isinstance(label, str):
        raise TypeError(f"{role} label must be str, got {type(label).__name__}")
    if not label or label != label.strip() or _FORBIDDEN & set(label):
        raise ValueError(f"invalid {role} label {label!r}")
    return label


def _frozen_array(values, ndim, dim=None, *, what="array"):
    arr = np.array(values, dtype=np.complex128)
    if arr.ndim != ndim:
        raise ShapeError(f"{what} must be {ndim}-dimensional, got shape {arr.shape}")
    if ndim == 2 and arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"{what} must be square, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ShapeError(f"{what} has dimension {arr.shape[0]}, expected {dim}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CommandSet:
    """Finite label sets of Alice, Bob and Eve; commands are their product.

    Labels are stored sorted, so iteration order is lexicographic.
    """

    alice: tuple
    bob: tuple = ("-",)
    eve: tuple = ("-",)

    def __post_init__(self):
        for role in ("alice", "bob", "eve"):
            labels = getattr(self, role)
            if isinstance(labels, str):
                labels = (labels,)
            labels = tuple(sorted({_check_label(x, role) for x in labels}))
            if not labels:
                raise DomainError(f"{role} command set must be non-empty")
            object.__setattr__(self, role, labels)

    def __iter__(self) -> Iterator[Command]:
        return iter(itertools.product(self.alice, self.bob, self.eve))

    def __len__(self):
        return len(self.alice) * len(self.bob) * len(self.eve)

    def __contains__(self, command):
        try:
            a, b, e = command
        except (TypeError, ValueError):
            return False
        return a in self.alice and b in self.bob and e in self.eve

    def stray_labels(self, other: "CommandSet") -> list:
        """Labels of ``self`` that are missing from ``other``, as ``(role, label)``."""
        stray = []
        for role in ("alice", "bob", "eve"):
            known = set(getattr(other, role))
            stray.extend((role, x) for x in getattr(self, role) if x not in known)
        return stray

    def issubset(self, other: "CommandSet") -> bool:
        return not self.stray_labels(other)

    def rests(self) -> Iterator[tuple]:
        """Iterate over the ``(b_B, b_E)`` pairs."""
        return iter(itertools.product(self.bob, self.eve))


class Povm:
    """Detection operators indexed by outcome label, in declaration order."""

    def __init__(self, elements: Mapping[str, object] | Iterable[tuple]):
        items = list(elements.items() if isinstance(elements, Mapping) else elements)
        if not items:
            raise ValueError("a POVM needs at least one outcome")
        outcomes = []
        mats = []
        for label, mat in items:
            _check_label(label, "outcome")
            if label in outcomes:
                raise ValueError(f"duplicate outcome label {label!r}")
            dim = mats[0].shape[0] if mats else None
            mats.append(_frozen_array(mat, 2, dim, what=f"detection operator {label!r}"))
            outcomes.append(label)
        self._outcomes = tuple(outcomes)
        self._elements = tuple(mats)
        self._index = {o: i for i, o in enumerate(outcomes)}

    @property
    def outcomes(self) -> tuple:
        return self._outcomes

    @property
    def elements(self) -> tuple:
        return self._elements

    @property
    def dim(self) -> int:
        return self._elements[0].shape[0]

    def __getitem__(self, outcome) -> np.ndarray:
        try:
            return self._elements[self._index[outcome]]
        except KeyError:
            raise UnknownLabelError(
                f"unknown outcome {outcome!r}; POVM outcomes are {list(self._outcomes)}"
            ) from None

    def __contains__(self, outcome):
        return outcome in self._index

    def __len__(self):
        return len(self._outcomes)

    def items(self):
        return zip(self._outcomes, self._elements)

    def total(self) -> np.ndarray:
        return np.sum(self._elements, axis=0)

    def relabel(self, mapping) -> "Povm":
        return Povm([(mapping(o), m) for o, m in self.items()])

    def __repr__(self):
        return f"Povm(outcomes={list(self._outcomes)}, dim={self.dim})"


class QMModel:
    """A quantum model of command-driven trials.

    Parameters
    ----------
    commands : CommandSet
    states : mapping
        Alice label -> state vector.
    povms : mapping
        ``(b_B, b_E)`` -> :class:`Povm` (or a mapping accepted by ``Povm``).
    unitaries : mapping, optional
        ``(b_A, b_B, b_E)`` -> unitary. Missing commands evolve by the identity.
    eve_private : iterable of str, optional
        Eve labels that are only ever scheduled in Eve's own runs.
    meta : mapping, optional
        Free-form string metadata (builders record the protocol here).
    """

    def __init__(self, commands, states, povms, unitaries=None, *, eve_private=(), meta=None):
        if not isinstance(commands, CommandSet):
            raise TypeError("commands must be a CommandSet")
        self._commands = commands

        missing = [a for a in commands.alice if a not in states]
        if missing:
            raise UnknownLabelError(f"no state for Alice command(s) {missing}")
        extra = [a for a in states if a not in commands.alice]
        if extra:
            raise DomainError(f"state given for unknown Alice command(s) {extra}")
        first = commands.alice[0]
        dim = np.asarray(states[first]).shape[0] if np.ndim(states[first]) == 1 else None
        if dim is None or dim < 1:
            raise ShapeError("state vectors must be non-empty 1-dimensional arrays")
        self._dim = int(dim)
        self._states = MappingProxyType(
            {a: _frozen_array(states[a], 1, self._dim, what=f"state {a!r}") for a in commands.alice}
        )

        table = {}
        for rest in commands.rests():
            if rest not in povms:
                raise UnknownLabelError(f"no POVM for (b_B, b_E) = {rest}")
            p = povms[rest]
            p = p if isinstance(p, Povm) else Povm(p)
            if p.dim != self._dim:
                raise ShapeError(f"POVM {rest} has dimension {p.dim}, expected {self._dim}")
            table[rest] = p
        stray = [k for k in povms if tuple(k) not in table]
        if stray:
            raise DomainError(f"POVM given for unknown (b_B, b_E) pair(s) {stray}")
        self._povms = MappingProxyType(table)

        units = {}
        for cmd, u in (unitaries or {}).items():
            cmd = tuple(cmd)
            if cmd not in commands:
                raise DomainError(f"unitary given for unknown command {cmd}")
            arr = _frozen_array(u, 2, self._dim, what=f"unitary {cmd}")
            if not np.array_equal(arr, np.eye(self._dim)):
                units[cmd] = arr
        self._unitaries = MappingProxyType(units)

        private = frozenset(eve_private)
        unknown = private - set(commands.eve)
        if unknown:
            raise DomainError(f"eve_private label(s) {sorted(unknown)} are not Eve commands")
        self._eve_private = private
        self._meta = MappingProxyType(dict(meta or {}))
        self._id = None

    # -- accessors -----------------------------------------------------------
    @property
    def dim(self) -> int:
        return self._dim

    @property
    def commands(self) -> CommandSet:
        return self._commands

    @property
    def states(self) -> Mapping:
        return self._states

    @property
    def povms(self) -> Mapping:
        return self._povms

    @property
    def unitaries(self) -> Mapping:
        """Explicitly stored (non-identity) unitaries."""
        return self._unitaries

    @property
    def eve_private(self) -> frozenset:
        return self._eve_private

    @property
    def meta(self) -> Mapping:
        return self._meta

    @property
    def model_id(self) -> str:
        """SHA-256 of the canonical serialization."""
        if self._id is None:
            from .fileformats import model_hash

            self._id = model_hash(self)
        return self._id

    def _check_command(self, command):
        try:
            a, b, e = command
        except (TypeError, ValueError):
            raise UnknownLabelError(f"command must be a (b_A, b_B, b_E) triple, got {command!r}") from None
        for role, label in (("alice", a), ("bob", b), ("eve", e)):
            if label not in getattr(self._commands, role):
                raise UnknownLabelError(f"unknown {role} command {label!r}")
        return a, b, e

    def state(self, alice) -> np.ndarray:
        try:
            return self._states[alice]
        except KeyError:
            raise UnknownLabelError(f"unknown alice command {alice!r}") from None

    def povm(self, command) -> Povm:
        """POVM for a full command triple or a ``(b_B, b_E)`` pair."""
        if len(command) == 3:
            _, b, e = self._check_command(command)
        else:
            b, e = command
            self._check_command((self._commands.alice[0], b, e))
        return self._povms[(b, e)]

    def unitary(self, command):
        """Unitary for ``command``, or ``None`` when it is the identity."""
        return self._unitaries.get(tuple(self._check_command(command)))

    def outcomes(self, command) -> tuple:
        return self.povm(command).outcomes

    @property
    def outcome_set(self) -> tuple:
        return tuple(sorted({o for p in self._povms.values() for o in p.outcomes}))

    def public_commands(self) -> list:
        """Commands whose Eve label is not Eve-private, in lexicographic order."""
        return [c for c in self._commands if c[2] not in self._eve_private]

    def __repr__(self):
        c = self._commands
        return (
            f"QMModel(dim={self._dim}, |A|={len(c.alice)}, |B|={len(c.bob)}, "
            f"|E|={len(c.eve)}, meta={dict(self._meta)})"
        )


# -- probabilities ------------------------------------------------------------
def _detection_operator(model, command, outcome):
    element = model.povm(command)[outcome]
    u = model.unitary(command)
    if u is None:
        return element
    return u @ element @ u.conj().T


def _quadratic_form(psi, op):
    terms = psi.conj()[:, None] * op * psi[None, :]
    return math.fsum(terms.real.ravel()), math.fsum(terms.imag.ravel())


def born_probability(model: QMModel, command, outcome) -> float:
    """Probability of ``outcome`` for ``command``.

    Raises
    ------
    UnknownLabelError
        If the command or outcome is not part of the model.
    ModelInvariantError
        If the quadratic form has an imaginary part above tolerance, which
        means the detection operator is not Hermitian.
    """
    a, _, _ = model._check_command(command)
    re, im = _quadratic_form(model.state(a), _detection_operator(model, command, outcome))
    if abs(im) > TOL.imaginary_residue:
        raise ModelInvariantError(
            f"imaginary residue {abs(im):.3g} for command {tuple(command)}, outcome {outcome!r}"
        )
    return min(max(re, 0.0), 1.0)


def outcome_distribution(model: QMModel, command) -> dict:
    """Outcome label -> probability, in POVM order."""
    return {o: born_probability(model, command, o) for o in model.outcomes(command)}


def probability_table(model: QMModel, commands: Iterable | None = None) -> dict:
    """Outcome distributions for every command, in lexicographic command order."""
    if commands is None:
        commands = model.commands
    else:
        commands = sorted(tuple(c) for c in commands)
    return {tuple(c): outcome_distribution(model, c) for c in commands}


def restrict(model: QMModel, subset: CommandSet) -> QMModel:
    """The same model with its command set cut down to ``subset``.

    The retained states, POVMs and unitaries are shared with ``model`` so
    probabilities agree bit for bit.
    """
    stray = subset.stray_labels(model.commands)
    if stray:
        role, label = stray[0]
        raise DomainError(f"restriction is not a subset: {role} command {label!r} is not in the model")
    return QMModel(
        subset,
        {a: model.states[a] for a in subset.alice},
        {rest: model.povms[rest] for rest in subset.rests()},
        {c: u for c, u in model.unitaries.items() if c in subset},
        eve_private=model.eve_private & set(subset.eve),
        meta=model.meta,
    )


def overlap_matrix(model: QMModel) -> np.ndarray:
    """Magnitudes of inner products between Alice's states.

    Rows and columns follow ``model.commands.alice``.
    """
    labels = model.commands.alice
    vecs = [model.states[a] for a in labels]
    n = len(vecs)
    out = np.empty((n, n))
    for i in range(n):
        out[i, i] = abs(np.vdot(vecs[i], vecs[i]))
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = abs(np.vdot(vecs[i], vecs[j]))
    return np.clip(out, 0.0, 1.0)


# -- validation ---------------------------------------------------------------
@dataclass(frozen=True)
class Violation:
    invariant: str
    location: str
    deviation: float
    detail: str = ""

    def __str__(self):
        s = f"{self.invariant} at {self.location}: deviation {self.deviation:.6g}"
        return f"{s} ({self.detail})" if self.detail else s


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def lines(self) -> list:
        if self.ok:
            return ["valid"]
        return [str(v) for v in self.violations]


def _entry(idx):
    return "entry ({},{})".format(*(int(i) + 1 for i in idx))


def validate_model(model: QMModel, tol=TOL) -> ValidationReport:
    """Check every numeric invariant of ``model`` and report all violations.

    Never raises for numeric problems; entry positions are reported 1-based.
    """
    report = ValidationReport()
    add = report.violations.append
    eye = np.eye(model.dim)

    for a, psi in model.states.items():
        dev = abs(np.linalg.norm(psi) - 1.0)
        if dev > tol.state_norm:
            add(Violation("state norm", f"state {a!r}", dev))

    for cmd, u in model.unitaries.items():
        diff = np.abs(u @ u.conj().T - eye)
        if diff.max() > tol.unitary:
            add(Violation("unitarity", f"command {cmd} {_entry(np.unravel_index(diff.argmax(), diff.shape))}", float(diff.max())))

    for rest, povm in model.povms.items():
        for outcome, m in povm.items():
            herm = np.abs(m - m.conj().T)
            if herm.max() > tol.hermitian:
                add(Violation("hermiticity", f"POVM {rest} outcome {outcome!r}", float(herm.max())))
            lam = float(np.linalg.eigvalsh((m + m.conj().T) / 2).min())
            if lam < -tol.psd:
                add(Violation("positivity", f"POVM {rest} outcome {outcome!r}", -lam, "smallest eigenvalue"))
        diff = np.abs(povm.total() - eye)
        if diff.max() > tol.completeness:
            idx = np.unravel_index(diff.argmax(), diff.shape)
            add(Violation("completeness", f"POVM {rest} {_entry(idx)}", float(diff.max())))

    for cmd in model.commands:
        total = 0.0
        for outcome in model.outcomes(cmd):
            re, im = _quadratic_form(model.state(cmd[0]), _detection_operator(model, cmd, outcome))
            if abs(im) > tol.imaginary_residue:
                add(Violation("imaginary residue", f"command {cmd} outcome {outcome!r}", abs(im)))
            total += re
        if abs(total - 1.0) > tol.probability_sum:
            add(Violation("probability sum", f"command {cmd}", abs(total - 1.0)))
    return report


def projective_povm(basis: Sequence, labels: Sequence[str] | None = None) -> Povm:
    """POVM of rank-one projectors onto the given orthonormal vectors."""
    vecs = [np.asarray(v, dtype=np.complex128) for v in basis]
    labels = labels if labels is not None else [str(i) for i in range(len(vecs))]
    return Povm([(lab, np.outer(v, v.conj())) for lab, v in zip(labels, vecs)])
