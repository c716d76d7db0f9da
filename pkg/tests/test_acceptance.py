"""End-to-end acceptance checks.

Each test records one ``CRITERION n: PASS|FAIL`` line before asserting;
the lines are repeated in the terminal summary.  The two
100-Garnet batches are shared across criteria through session fixtures.
"""
import csv

import numpy as np
import pytest

from movilab.experiments import config_from_dict, load_records, run_experiment
from movilab.garnet import GarnetSpec, generate
from movilab.mdp import greedy, optimal_q, sup_norm
from movilab.schemes import (
    ExactModel,
    GenerativeModel,
    InjectedNoiseModel,
    avi_step,
    dpp_step,
    init_psi_state,
    init_state,
    movi_step,
    psi_movi_step,
    psi_sql_step,
    sql_step,
)
from movilab.seeding import derive_seed

from conftest import ACCEPTANCE_LINES, one_state_mdp

MASTER_SEED = 20240601
STANDARD_GARNET = dict(n_states=30, n_actions=4, branching=4)


def verdict(n, ok, detail=""):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, f"criterion {n} failed: {detail}"


def aggregate_table(out_dir):
    """``{(iteration, scheme): mean_error}`` from an aggregate CSV."""
    with open(out_dir / "aggregate.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        return {(int(r["iteration"]), r["scheme"]): float(r["mean_error"]) for r in reader}


def garnets(n, seed, **shape):
    shape = shape or dict(n_states=10, n_actions=2, branching=2)
    return [generate(GarnetSpec(seed=derive_seed(seed, i, 0), **shape), 0.9) for i in range(n)]


# --------------------------------------------------------------------------
# shared batches


@pytest.fixture(scope="session")
def bounds_batch(tmp_path_factory):
    out = tmp_path_factory.mktemp("bounds")
    cfg = config_from_dict(dict(
        kind="bounds", garnet=dict(n_states=10, n_actions=2, branching=2), master_seed=MASTER_SEED,
        n_mdps=20, iterations=500, checkpoints=[10, 100, 499], concentrability="exact", delta=0.05,
    ))
    run_experiment(cfg, output_dir=out)
    _, records = load_records(out)
    return [dict(zip(rec.columns, row)) for rec in records for row in rec.rows]


CONVERGENCE = dict(kind="convergence", garnet=STANDARD_GARNET, master_seed=MASTER_SEED, n_mdps=100, iterations=10_000)


@pytest.fixture(scope="session")
def convergence_batch(tmp_path_factory):
    out = tmp_path_factory.mktemp("convergence")
    run_experiment(config_from_dict(CONVERGENCE), output_dir=out)
    return out


@pytest.fixture(scope="session")
def compare_batch(tmp_path_factory):
    out = tmp_path_factory.mktemp("compare")
    cfg = dict(CONVERGENCE, kind="compare", schemes=["avi", "movi", "sql", "dpp"])
    run_experiment(config_from_dict(cfg), output_dir=out)
    return out


# --------------------------------------------------------------------------


@pytest.mark.slow
def test_c1_theorem1_domination(bounds_batch):
    bad = [r for r in bounds_batch if not r["holds_componentwise"]]
    worst = min(r["slack_min"] for r in bounds_batch)
    verdict(1, not bad and len(bounds_batch) == 60, f"{len(bad)} violations, min slack {worst:.3g}")


@pytest.mark.slow
def test_c2_norm_bounds(bounds_batch):
    sup_gap = min(r["rhs_sup"] - r["loss_sup"] for r in bounds_batch)
    l1_gap = min(r["rhs_l1mu"] - r["loss_l1mu"] for r in bounds_batch)
    exact_c = all(r["concentrability"] >= 1.0 for r in bounds_batch)
    ok = sup_gap >= -1e-8 and l1_gap >= -1e-8 and exact_c
    verdict(2, ok, f"sup slack {sup_gap:.3g}, l1 slack {l1_gap:.3g}")


@pytest.mark.slow
def test_c3_psi_h_equivalence():
    worst = 0.0
    for i, mdp in enumerate(garnets(20, MASTER_SEED + 3, **STANDARD_GARNET)):
        noise = InjectedNoiseModel(mdp, seed=derive_seed(MASTER_SEED, i, 99), scale=0.1)
        h_state, psi_state = init_state("movi", mdp), init_psi_state("movi", mdp)
        for k in range(1, 201):
            h_state = movi_step(noise, h_state)
            psi_state = psi_movi_step(mdp, psi_state, h_state.epsilon)
            dev = sup_norm(psi_state.psi - (k + 1) * h_state.h) / ((k + 1) * mdp.q_max)
            worst = max(worst, dev)
    verdict(3, worst <= 1e-9, f"max relative deviation {worst:.3g}")


@pytest.mark.slow
def test_c4_sql_dual_form():
    mismatches = 0
    for i, mdp in enumerate(garnets(20, MASTER_SEED + 4, **STANDARD_GARNET)):
        seed = derive_seed(MASTER_SEED, i, 98)
        qm, pm = GenerativeModel(mdp, seed), GenerativeModel(mdp, seed)
        q_state, psi_state = init_state("sql", mdp), init_psi_state("sql", mdp)
        for _ in range(200):
            q_state, psi_state = sql_step(qm, q_state), psi_sql_step(pm, psi_state)
            mismatches += int(not np.array_equal(q_state.policy, psi_state.policy))
    verdict(4, mismatches == 0, f"{mismatches} mismatching iterations")


def test_c5_exact_vi_rate():
    violations = 0
    for mdp in garnets(20, MASTER_SEED + 5):
        q_star = optimal_q(mdp, 1e-12)
        state = init_state("avi", mdp)
        for k in range(1, 201):
            state = avi_step(ExactModel(mdp), state)
            violations += int(sup_norm(state.q - q_star) > 2 * mdp.gamma**k * mdp.q_max)
    verdict(5, violations == 0, f"{violations} violations")


@pytest.mark.slow
def test_c6_figure1(convergence_batch):
    t = aggregate_table(convergence_batch)
    a = t[(10_000, "movi")] < t[(10_000, "avi")]
    b = t[(10_000, "movi")] < 0.5 * t[(100, "movi")]
    c = t[(10_000, "avi")] > 0.9 * t[(1000, "avi")]
    detail = (
        f"avi@1e3={t[(1000, 'avi')]:.4g} avi@1e4={t[(10_000, 'avi')]:.4g} "
        f"movi@1e2={t[(100, 'movi')]:.4g} movi@1e4={t[(10_000, 'movi')]:.4g}"
    )
    verdict(6, a and b and c, detail)


@pytest.mark.slow
def test_c7_figure3(compare_batch):
    t = aggregate_table(compare_batch)
    final = {s: t[(10_000, s)] for s in ("avi", "movi", "sql", "dpp")}
    below = all(final[s] < final["avi"] for s in ("movi", "sql", "dpp"))
    momentum = [final[s] for s in ("movi", "sql", "dpp")]
    close = max(momentum) <= 2 * min(momentum)
    verdict(7, below and close, " ".join(f"{s}={v:.4g}" for s, v in final.items()))


@pytest.mark.slow
def test_c8_figure2(tmp_path):
    cfg = config_from_dict(dict(
        kind="assumption", garnet=STANDARD_GARNET, master_seed=MASTER_SEED, n_mdps=20,
        assumption=dict(j=50, l_values=[0, 1, 2, 5], n_max=200),
    ))
    run_experiment(cfg, output_dir=tmp_path)
    with open(tmp_path / "aggregate.csv", newline="") as fh:
        mean = {(int(r["l"]), int(r["N"])): float(r["mean_epsbar"]) for r in csv.DictReader(fh)}
    shrinks = all(mean[(l, 200)] < mean[(l, 2)] for l in (0, 1, 2, 5))
    lower = all(mean[(l, 200)] <= 1.1 * mean[(0, 200)] for l in (1, 2, 5))
    detail = " ".join(f"l={l}:{mean[(l, 2)]:.3g}->{mean[(l, 200)]:.3g}" for l in (0, 1, 2, 5))
    verdict(8, shrinks and lower, detail)


def test_c9_dpp_divergence():
    mdp = one_state_mdp([1.0, 2.0], 0.5)
    state = init_state("dpp", mdp)
    half = None
    for k in range(1, 2001):
        state = dpp_step(ExactModel(mdp), state)
        if k == 1000:
            half = state.psi[0, 0]
    pi_star = greedy(optimal_q(mdp, 1e-12))
    ok = state.psi[0, 0] < half - 1 and np.array_equal(greedy(state.psi), pi_star)
    verdict(9, ok, f"psi_1000(a0)={half:.1f} psi_2000(a0)={state.psi[0, 0]:.1f}")


@pytest.mark.slow
def test_c10_prop1_envelope(bounds_batch):
    # rhs_prop1 uses k + 1 (the loss belongs to pi_{k+1}); it is tighter than prop1_rhs(k).
    bad = [r for r in bounds_batch if not r["holds_prop1"]]
    ratio = max(r["loss_sup"] / r["rhs_prop1"] for r in bounds_batch)
    verdict(10, not bad, f"{len(bad)} violations, max loss/rhs {ratio:.3g}")


@pytest.mark.slow
def test_c11_determinism(convergence_batch, tmp_path):
    run_experiment(config_from_dict(CONVERGENCE), output_dir=tmp_path)
    same = all(
        (tmp_path / name).read_bytes() == (convergence_batch / name).read_bytes()
        for name in ("aggregate.csv", "fig1.csv", "summary.json")
    )
    verdict(11, same, "aggregate, fig1 and summary compared byte for byte")
