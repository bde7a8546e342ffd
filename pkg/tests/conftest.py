import itertools
import math

import numpy as np
import pytest

from qenvelop import CommandSet, Povm, QMModel
from qenvelop.protocols import b92_model

ACCEPTANCE_LINES = []


def record_acceptance(number, name, passed, detail=""):
    line = f"ACCEPTANCE {number} [{'PASS' if passed else 'FAIL'}] {name}"
    if detail:
        line += f" -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def random_state(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_unitary(rng, dim):
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_projective_povm(rng, dim, labels=None):
    u = random_unitary(rng, dim)
    labels = labels or [str(k) for k in range(dim)]
    return Povm([(lab, np.outer(u[:, k], u[:, k].conj())) for k, lab in enumerate(labels)])


def random_model(rng, dim=None, n_alice=None, n_eve=None, with_unitaries=False):
    """Random valid model: pure states, rank-one projective POVMs, singleton Bob."""
    dim = dim or int(rng.integers(2, 5))
    n_alice = n_alice or int(rng.integers(2, 5))
    n_eve = n_eve or int(rng.integers(1, 4))
    alice = tuple(f"a{k}" for k in range(n_alice))
    eve = tuple(f"e{k}" for k in range(n_eve))
    commands = CommandSet(alice, ("b",), eve)
    states = {a: random_state(rng, dim) for a in alice}
    povms = {("b", e): random_projective_povm(rng, dim) for e in eve}
    unitaries = {}
    if with_unitaries:
        for c in commands:
            if rng.random() < 0.5:
                unitaries[c] = random_unitary(rng, dim)
    return QMModel(commands, states, povms, unitaries)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def b92():
    return b92_model(math.pi / 8)


def qubit_model(states, povm_elements, unitary=None):
    """One-command-per-state model on a qubit with a single POVM."""
    alice = tuple(states)
    commands = CommandSet(alice, ("b",), ("e",))
    units = {(a, "b", "e"): unitary for a in alice} if unitary is not None else None
    return QMModel(commands, states, {("b", "e"): Povm(povm_elements)}, units)


def enumerate_intercept_resend_qber():
    """BB84 sifted error rate under full intercept-resend, from first principles."""
    s = 1 / math.sqrt(2)
    basis = {"Z": [np.array([1.0, 0.0]), np.array([0.0, 1.0])], "X": [np.array([s, s]), np.array([s, -s])]}
    err = kept = 0.0
    for a_basis, a_bit in itertools.product("ZX", (0, 1)):
        psi = basis[a_basis][a_bit]
        for e_basis in "ZX":
            for e_bit in (0, 1):
                p_eve = np.dot(basis[e_basis][e_bit], psi) ** 2
                resent = basis[e_basis][e_bit]
                # sifting keeps Bob's basis == Alice's basis
                for b_bit in (0, 1):
                    p_bob = np.dot(basis[a_basis][b_bit], resent) ** 2
                    w = 0.25 * 0.5 * p_eve * p_bob
                    kept += w
                    if b_bit != a_bit:
                        err += w
    return err / kept


def grid_search_error(overlap, p0=0.5, p1=0.5, points=10_000):
    """Best projective measurement in the real plane of two real states, by brute force."""
    s0 = np.array([1.0, 0.0])
    s1 = np.array([overlap, math.sqrt(1 - overlap**2)])
    phi = np.linspace(0.0, math.pi, points, endpoint=False)
    # decide "0" on |phi>, "1" on its orthogonal complement
    c0 = np.cos(phi) * s0[0] + np.sin(phi) * s0[1]
    c1 = np.cos(phi) * s1[0] + np.sin(phi) * s1[1]
    err = p0 * (1 - c0**2) + p1 * c1**2
    return float(err.min())
