"""Acceptance criteria. Each test prints one ``ACCEPTANCE n [PASS|FAIL]`` line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also repeated in the terminal summary.
"""

import math
import subprocess
import sys
import time

import numpy as np

from conftest import enumerate_intercept_resend_qber, grid_search_error, random_model, record_acceptance
from qenvelop import (
    AttackSpec,
    ProtocolSpec,
    bb84_model,
    build_leakage_vectors,
    check_envelopment,
    envelop_with_leakage,
    exact_qber,
    fit_model,
    helstrom_binary,
    helstrom_error,
    overlap_matrix,
    probability_table,
    restrict,
    run_trials,
    sift_and_estimate_qber,
    verify_overlap_reduction,
)
from qenvelop.exceptions import ParameterError
from qenvelop.fileformats import save_model
from qenvelop.protocols import b92_model, protocol_schedule
from qenvelop.trials import save_log

R_VALUES = (0.0, 0.25, 0.5, 0.9)


def sweep_models(count=200, seed=20240611):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield random_model(rng, dim=int(rng.integers(2, 5)), n_alice=int(rng.integers(2, 5)))


def identity_on_alice(model):
    return {a: a for a in model.commands.alice}


def test_criterion_1_envelopment_and_overlap_reduction():
    start = time.perf_counter()
    worst_dev = worst_excess = 0.0
    for alpha in sweep_models():
        for r in R_VALUES:
            beta, f = envelop_with_leakage(alpha, r)
            env = check_envelopment(alpha, beta, f, 1e-10)
            ov = verify_overlap_reduction(alpha, beta, identity_on_alice(alpha), r, 1e-10)
            worst_dev = max(worst_dev, env.max_deviation)
            worst_excess = max(worst_excess, ov.worst_excess)
    elapsed = time.perf_counter() - start
    ok = worst_dev <= 1e-10 and worst_excess <= 1e-10 and elapsed < 30
    detail = f"max deviation {worst_dev:.2e}, worst overlap excess {worst_excess:.2e}, {elapsed:.1f}s"
    assert record_acceptance(1, "envelopment and overlap reduction over 200 models x 4 r", ok, detail)


def test_criterion_2_overlap_factorization():
    worst = 0.0
    pairs = 0
    for alpha in sweep_models():
        s_alpha = overlap_matrix(alpha)
        labels = alpha.commands.alice
        for r in R_VALUES:
            beta, _ = envelop_with_leakage(alpha, r)
            s_beta = overlap_matrix(beta)
            w = build_leakage_vectors(len(labels), r)
            for i in range(len(labels)):
                for k in range(i + 1, len(labels)):
                    if s_alpha[i, k] > 1e-6:
                        pairs += 1
                        worst = max(worst, abs(s_beta[i, k] / s_alpha[i, k] - abs(np.vdot(w[i], w[k]))))
    ok = worst <= 1e-9 and pairs > 0
    assert record_acceptance(2, "overlap ratio equals leakage inner product", ok, f"{pairs} pairs, worst {worst:.2e}")


def test_criterion_3_undetectability():
    theta = math.pi / 8
    alpha = b92_model(theta)
    beta, _ = envelop_with_leakage(alpha, 0.0)
    t_alpha = probability_table(alpha)
    t_beta = probability_table(restrict(beta, alpha.commands))
    table_dev = max(abs(t_alpha[c][o] - t_beta[c][o]) for c in t_alpha for o in t_alpha[c])

    s_alpha = abs(np.vdot(alpha.state("send0"), alpha.state("send1")))
    err_alpha = helstrom_binary(alpha.state("send0"), alpha.state("send1")).error_probability
    err_beta = helstrom_binary(beta.state("send0"), beta.state("send1")).error_probability
    closed = (1 - math.sqrt(1 - s_alpha**2)) / 2
    grid = grid_search_error(s_alpha)

    # same statement across the random sweep: tables agree, beta pair separable
    sweep_dev = sweep_beta_err = sweep_alpha_gap = 0.0
    for m in sweep_models(50, seed=7):
        b, _ = envelop_with_leakage(m, 0.0)
        ta, tb = probability_table(m), probability_table(restrict(b, m.commands))
        sweep_dev = max(sweep_dev, max(abs(ta[c][o] - tb[c][o]) for c in ta for o in ta[c]))
        a0, a1 = m.commands.alice[:2]
        sweep_beta_err = max(sweep_beta_err, helstrom_binary(b.state(a0), b.state(a1)).error_probability)
        s = abs(np.vdot(m.state(a0), m.state(a1)))
        e = helstrom_binary(m.state(a0), m.state(a1)).error_probability
        sweep_alpha_gap = max(sweep_alpha_gap, abs(e - (1 - math.sqrt(1 - s * s)) / 2))

    ok = (
        table_dev <= 1e-10
        and sweep_dev <= 1e-10
        and abs(err_beta) <= 1e-10
        and sweep_beta_err <= 1e-10
        and abs(err_alpha - closed) <= 1e-9
        and sweep_alpha_gap <= 1e-9
        and abs(err_alpha - 0.14645) <= 1e-5
        and abs(err_alpha - grid) <= 1e-5
    )
    detail = (
        f"table dev {max(table_dev, sweep_dev):.1e}, beta error {max(err_beta, sweep_beta_err):.1e}, "
        f"alpha error {err_alpha:.6f} (closed form {closed:.6f}, grid {grid:.6f})"
    )
    assert record_acceptance(3, "statistics unchanged while leakage makes Eve's pair separable", ok, detail)


def test_criterion_4_bb84_intercept_resend():
    protocol, attack = ProtocolSpec("bb84"), AttackSpec("intercept_resend")
    model = bb84_model(attack)
    exact = exact_qber(model, protocol, attack)
    oracle = enumerate_intercept_resend_qber()
    start = time.perf_counter()
    covered = 0
    for seed in range(100):
        schedule = protocol_schedule(model, protocol, attack, 100_000, seed)
        est = sift_and_estimate_qber(run_trials(model, schedule, 100_000, seed), protocol, 1.0)
        covered += est.covers(exact)
    elapsed = time.perf_counter() - start
    ok = abs(exact - 0.25) <= 1e-12 and abs(oracle - 0.25) <= 1e-12 and covered >= 99 and elapsed < 60
    detail = f"exact {exact!r}, {covered}/100 seeds within 3 sigma, {elapsed:.1f}s"
    assert record_acceptance(4, "BB84 intercept-resend QBER", ok, detail)


def test_criterion_5_helstrom_against_grid():
    worst = 0.0
    for s in (0.0, 0.25, 0.5, 0.7071, 0.9):
        s0 = np.array([1.0, 0.0])
        s1 = np.array([s, math.sqrt(1 - s * s)])
        err = helstrom_binary(s0, s1).error_probability
        worst = max(worst, abs(err - grid_search_error(s)), abs(err - helstrom_error(s)))
    assert record_acceptance(5, "Helstrom error against 10^4-point grid search", worst <= 1e-5, f"worst gap {worst:.2e}")


def test_criterion_6_fit_equivalence():
    alpha = b92_model(math.pi / 8)
    beta, _ = envelop_with_leakage(alpha, 0.0)
    sub = restrict(beta, alpha.commands)
    log = run_trials(sub, list(alpha.commands), 100_000, 2024)
    rep_alpha, rep_beta = fit_model(alpha, log), fit_model(sub, log)
    rows_equal = all(rep_alpha.per_command[c].predicted == rep_beta.per_command[c].predicted for c in rep_alpha.per_command)
    ok = rows_equal and rep_alpha.max_tv == rep_beta.max_tv
    detail = f"max_tv {rep_alpha.max_tv!r} vs {rep_beta.max_tv!r}, predicted rows identical: {rows_equal}"
    assert record_acceptance(6, "alpha and restricted beta fit the same log identically", ok, detail)


def test_criterion_7_determinism(tmp_path):
    model = bb84_model(AttackSpec("intercept_resend"))
    schedule = list(model.commands)
    save_log(run_trials(model, schedule, 20_000, 99), tmp_path / "a.tsv")
    save_log(run_trials(model, schedule, 20_000, 99), tmp_path / "b.tsv")
    in_process = (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()

    save_model(model, tmp_path / "m.json")
    # the output path is part of the echoed configuration, so both runs write to the same place
    cmd = [sys.executable, "-m", "qenvelop", "simulate", "--model", str(tmp_path / "m.json")]
    cmd += ["--policy", "cycle", "--trials", "20000", "--seed", "99", "--out", str(tmp_path / "c.tsv")]
    outputs = []
    for _ in range(2):
        subprocess.run(cmd, check=True, capture_output=True)
        outputs.append((tmp_path / "c.tsv").read_bytes())
        (tmp_path / "c.tsv").unlink()
    across_processes = outputs[0] == outputs[1]
    ok = in_process and across_processes
    detail = f"in-process identical: {in_process}, separate processes identical: {across_processes}"
    assert record_acceptance(7, "byte-identical run logs", ok, detail)


def test_criterion_8_gram_construction():
    worst = 0.0
    for n in (2, 3, 4, 8):
        for r in (0.0, 0.5, 0.99):
            w = np.array(build_leakage_vectors(n, r))
            gram = w.conj() @ w.T
            worst = max(worst, float(np.abs(gram - ((1 - r) * np.eye(n) + r * np.ones((n, n)))).max()))
    try:
        build_leakage_vectors(3, 1.0)
        rejected = False
    except ParameterError:
        rejected = True
    ok = worst <= 1e-10 and rejected
    assert record_acceptance(8, "leakage Gram matrix", ok, f"worst entry error {worst:.2e}, r=1 rejected: {rejected}")
