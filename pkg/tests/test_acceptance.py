"""End-to-end statistical acceptance suite.

Each test prints a single PASS/FAIL line with the measured quantity so the
suite doubles as a benchmark report.  The heavyweight learner runs are
shared through session-scoped fixtures.
"""

import itertools
import json
import math
import os
import time

import numpy as np
import pytest

from lrcssp.cli import main as cli_main
from lrcssp.estimation import (
    SaStatistics,
    capped_simplex_projection,
    dynamics_radius,
    loss_radius,
    project_to_stochastic,
)
from lrcssp.harness import (
    baseline_context_blind,
    compute_regret,
    hpe_diagnostics,
    oracle_values,
    slope_statistic,
)
from lrcssp.learner import LearnerConfig, auto_epsilon, run
from lrcssp.linear_model import (
    GeneratorSpec,
    LinearCsspModel,
    context_sequence,
    generate_instance,
)
from lrcssp.ssp import SspInstance, value_iteration

from test_estimation import capped_simplex_oracle, full_grid_oracle
from test_ssp import exact_policy_values


REF_SPEC = GeneratorSpec(d=2, n_states=5, n_actions=3, gamma_goal=0.1,
                         l_min_target=0.1, seed=7)
REF_CFG = LearnerConfig(delta=0.1, l_min=0.1)
N_SEEDS = 10


def report(name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# 1. planning oracle equivalence


def test_planner_matches_policy_enumeration():
    rng = np.random.default_rng(2024)
    t0 = time.time()
    worst = 0.0
    for _ in range(50):
        loss = rng.uniform(0, 1, size=(3, 2))
        raw = rng.dirichlet(np.ones(4), size=(3, 2))
        trans = 0.9 * raw[..., :3]  # goal mass >= 0.1 everywhere
        ssp = SspInstance(loss, trans)
        v, pi = value_iteration(ssp, tol=1e-10)
        v_star = np.min([exact_policy_values(ssp, np.array(p))
                         for p in itertools.product(range(2), repeat=3)],
                        axis=0)
        worst = max(worst, float(np.abs(v - v_star).max()),
                    float(np.abs(exact_policy_values(ssp, pi) - v_star).max()))
    elapsed = time.time() - t0
    report("planner equivalence",
           worst <= 1e-6 and elapsed < 5.0,
           f"max sup-norm gap {worst:.2e} over 50 instances, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. projection correctness


def test_projection_against_independent_oracles():
    rng = np.random.default_rng(2025)
    t0 = time.time()
    # (a) identity-weight case reduces to per-column capped-simplex
    worst_a = 0.0
    for _ in range(100):
        p_raw = rng.normal(0, 1.5, size=(4, 3))
        got = project_to_stochastic(p_raw, 2.0 * np.eye(3))
        want = np.stack([capped_simplex_oracle(p_raw[:, j]) for j in range(3)],
                        axis=1)
        worst_a = max(worst_a, float(np.abs(got - want).max()))
    # (b) grid refinement on 2x2 problems with general weights
    worst_b = 0.0
    for _ in range(10):
        a = rng.normal(0, 1, size=(2, 2))
        v = a @ a.T + 0.5 * np.eye(2)
        p_raw = rng.normal(0.5, 0.8, size=(2, 2))
        got = project_to_stochastic(p_raw, v)
        want = full_grid_oracle(p_raw, v)

        def obj(p):
            diff = p - p_raw
            return float(np.einsum("ij,jk,ik->", diff, v, diff))

        worst_b = max(worst_b, obj(got) - obj(want))
    # non-expansiveness toward 100 random feasible points
    worst_c = 0.0
    for _ in range(20):
        a = rng.normal(0, 1, size=(2, 2))
        v = a @ a.T + 0.3 * np.eye(2)
        p_raw = rng.normal(0.5, 1.0, size=(3, 2))
        p = project_to_stochastic(p_raw, v)
        for _ in range(100):
            q = rng.dirichlet(np.ones(4), size=2).T[:3]
            d_p = np.einsum("ij,jk,ik->", p - q, v, p - q)
            d_raw = np.einsum("ij,jk,ik->", p_raw - q, v, p_raw - q)
            worst_c = max(worst_c, float(d_p - d_raw))
    elapsed = time.time() - t0
    ok = worst_a <= 1e-6 and worst_b <= 1e-5 and worst_c <= 1e-6 \
        and elapsed < 10.0
    report("projection correctness", ok,
           f"capped-simplex gap {worst_a:.2e}, grid objective gap "
           f"{worst_b:.2e}, expansiveness excess {worst_c:.2e}, "
           f"{elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 3. confidence-set coverage


def test_confidence_coverage_frequency():
    t0 = time.time()
    delta, lam = 0.2, 1.0
    n_states, n_actions = 3, 2
    checkpoints = (10, 30, 100, 300)
    rates = {}
    for d in (1, 2, 3):
        covered = 0
        for stream in range(200):
            rng = np.random.default_rng(
                np.random.SeedSequence([77, d, stream]))
            l_true = rng.uniform(0, 1, size=d)
            p_true = 0.9 * rng.dirichlet(
                np.ones(n_states + 1), size=d).T[:n_states]  # (S, d)
            stats = SaStatistics(d, n_states, lam=lam)
            ok = True
            cdf = np.cumsum(np.vstack(
                [p_true, 1 - p_true.sum(axis=0)]), axis=0)
            for tau in range(1, max(checkpoints) + 1):
                c = rng.dirichlet(np.ones(d))
                nxt = int(np.searchsorted(cdf @ c, rng.random(),
                                          side="right"))
                nxt = -1 if nxt >= n_states else nxt
                loss = float(rng.random() < l_true @ c)
                stats.record_visit(c, nxt, loss)
                if tau in checkpoints:
                    l_hat = stats.v_bar_inv @ stats.xty_loss
                    p_hat = project_to_stochastic(
                        stats.xty_trans @ stats.v_bar_inv, stats.v_bar)
                    b_l = loss_radius(tau, d, n_states, n_actions, lam, delta)
                    b_p = dynamics_radius(tau, d, n_states, n_actions, lam,
                                          delta)
                    dl = l_true - l_hat
                    dp = p_true - p_hat
                    if math.sqrt(dl @ stats.v_bar @ dl) > b_l or \
                            math.sqrt(np.einsum("ij,jk,ik->", dp,
                                                stats.v_bar, dp)) > b_p:
                        ok = False
                        break
            covered += ok
        rates[d] = covered / 200
    elapsed = time.time() - t0
    ok = all(r >= 0.75 for r in rates.values()) and elapsed < 60.0
    report("confidence coverage", ok,
           f"all-checkpoint coverage rates {rates} at delta={delta}, "
           f"{elapsed:.2f}s")


# ---------------------------------------------------------------------------
# shared heavyweight runs


@pytest.fixture(scope="session")
def ref_model():
    return generate_instance(REF_SPEC)


@pytest.fixture(scope="session")
def optimism_runs(ref_model):
    out = []
    for seed in range(N_SEEDS):
        contexts = context_sequence(
            "uniform", 500, ref_model.d,
            rng=np.random.default_rng(np.random.SeedSequence([500, seed])))
        log = run(REF_CFG, ref_model, contexts, seed=seed,
                  diagnostics_model=ref_model)
        oracle = oracle_values(ref_model, contexts)
        out.append((log, oracle))
    return out


@pytest.fixture(scope="session")
def regret_runs(ref_model):
    out = []
    for seed in range(N_SEEDS):
        contexts = context_sequence(
            "uniform", 2000, ref_model.d,
            rng=np.random.default_rng(np.random.SeedSequence([2000, seed])))
        log = run(REF_CFG, ref_model, contexts, seed=seed)
        oracle = oracle_values(ref_model, contexts)
        out.append((log, oracle))
    return out


@pytest.fixture(scope="session")
def baseline_runs(ref_model):
    contexts = context_sequence("cyclic_vertices", 2000, ref_model.d)
    oracle = oracle_values(ref_model, contexts)
    out = []
    for seed in range(N_SEEDS):
        informed = run(REF_CFG, ref_model, contexts, seed=seed)
        blind = baseline_context_blind(REF_CFG, ref_model, contexts,
                                       seed=seed)
        out.append((informed, blind, oracle))
    return out


@pytest.fixture(scope="session")
def perturbation_runs():
    spec = GeneratorSpec(d=2, n_states=3, n_actions=2, gamma_goal=0.15,
                         l_min_target=0.0, seed=11)
    base = generate_instance(spec)
    loss_embed = base.loss_embed.copy()
    loss_embed[0, 0, :] = 0.0  # a genuine zero-mean-loss pair
    model = LinearCsspModel(loss_embed, base.trans_embed)
    cfg = LearnerConfig(delta=0.1, l_min=0.0)
    out = []
    for seed in range(N_SEEDS):
        contexts = context_sequence(
            "uniform", 2000, model.d,
            rng=np.random.default_rng(np.random.SeedSequence([66, seed])))
        log = run(cfg, model, contexts, seed=seed)
        oracle = oracle_values(model, contexts)
        out.append((log, oracle))
    return model, out


# ---------------------------------------------------------------------------
# 4. optimism under verified coverage


def test_optimistic_values_lower_bound_truth(optimism_runs):
    checked = held = 0
    for log, oracle in optimism_runs:
        for rec in log.interval_records:
            if not rec.coverage_ok:
                continue
            checked += 1
            held += rec.v_tilde_init <= oracle.v_star[rec.episode] + 1e-3
    frac = held / max(1, checked)
    report("optimism under coverage", frac >= 0.99,
           f"{held}/{checked} covered intervals optimistic ({frac:.4f})")


# ---------------------------------------------------------------------------
# 5. learning behavior at scale


def test_no_truncation_after_warmup(regret_runs):
    worst_last = -1
    for log, _ in regret_runs:
        warmup = int(0.05 * len(log.episodes))
        late = [e.episode for e in log.episodes
                if e.truncated and e.episode >= warmup]
        if late:
            worst_last = max(worst_last, max(late))
    report("no late truncation", worst_last == -1,
           f"latest truncated episode past warm-up: "
           f"{'none' if worst_last == -1 else worst_last} across "
           f"{N_SEEDS} seeds")


def test_regret_slope_decreases(regret_runs):
    heads, tails = [], []
    for log, oracle in regret_runs:
        curve = compute_regret(log, oracle)
        h, t, _ = slope_statistic(curve)
        heads.append(h)
        tails.append(t)
    ratio = float(np.mean(tails) / np.mean(heads))
    report("regret slope", ratio <= 0.6,
           f"tail/head per-episode regret ratio {ratio:.3f} "
           f"(head {np.mean(heads):.3f}, tail {np.mean(tails):.3f})")


def test_beats_context_blind_baseline(baseline_runs):
    wins = 0
    margins = []
    for informed, blind, oracle in baseline_runs:
        ci = compute_regret(informed, oracle).cum_regret[-1]
        cb = compute_regret(blind, oracle).cum_regret[-1]
        wins += ci < cb
        margins.append(cb - ci)
    report("beats context-blind baseline", wins >= 8,
           f"{wins}/{N_SEEDS} seeds, median margin "
           f"{float(np.median(margins)):.1f}")


# ---------------------------------------------------------------------------
# 6. perturbation mode on zero-loss models


def test_perturbation_mode_learns(perturbation_runs):
    model, runs_ = perturbation_runs
    eps_expect = auto_epsilon(model.n_states, model.d, model.n_actions, 2000)
    eps_ok = all(log.epsilon == eps_expect for log, _ in runs_)
    warmup_trunc = 0
    for log, _ in runs_:
        warmup = int(0.05 * len(log.episodes))
        warmup_trunc += sum(e.truncated and e.episode >= warmup
                            for e in log.episodes)
    heads, tails = [], []
    for log, oracle in runs_:
        h, t, _ = slope_statistic(compute_regret(log, oracle))
        heads.append(h)
        tails.append(t)
    ratio = float(np.mean(tails) / np.mean(heads))
    ok = eps_ok and warmup_trunc == 0 and ratio <= 0.75
    report("perturbation mode", ok,
           f"epsilon exact: {eps_ok}, post-warm-up truncations "
           f"{warmup_trunc}, slope ratio {ratio:.3f} "
           f"(epsilon {eps_expect:.3f})")


# ---------------------------------------------------------------------------
# 7. accounting identities on every run


def _check_identities(log):
    k = len(log.episodes)
    n_pairs = log.unknown_counts.size
    max_unknown = int(log.unknown_counts.max())
    assert log.total_intervals <= k + n_pairs * max_unknown
    assert log.total_steps == sum(e.steps for e in log.episodes)
    assert log.total_steps == len(log.step_trace)
    # triggers replay from the per-step known evaluations
    expected = []
    by_episode = {}
    for t in log.step_trace:
        by_episode.setdefault(t[0], []).append(t)
    for ep in range(k):
        expected.append("start" if ep == 0 else "goal")
        steps = by_episode[ep]
        truncated = log.episodes[ep].truncated
        for i, (_, _, _, goal_reached, known) in enumerate(steps):
            last = i == len(steps) - 1
            if goal_reached:
                assert last
                break
            if not known and not (last and truncated):
                expected.append("unknown")
    got = [rec.trigger for rec in log.interval_records]
    assert got == expected


def test_accounting_identities_hold_on_all_runs(optimism_runs, regret_runs,
                                                baseline_runs,
                                                perturbation_runs):
    logs = [log for log, _ in optimism_runs]
    logs += [log for log, _ in regret_runs]
    for informed, blind, _ in baseline_runs:
        logs += [informed, blind]
    logs += [log for log, _ in perturbation_runs[1]]
    for log in logs:
        _check_identities(log)
    report("accounting identities", True,
           f"interval bound, step totals, and trigger replay verified on "
           f"{len(logs)} runs")


def test_interval_loss_diagnostics(regret_runs):
    # statistical sanity companion to the identities: interval losses should
    # essentially never exceed the diagnostic bound
    fracs = []
    for log, oracle in regret_runs:
        diag = hpe_diagnostics(log, oracle, REF_CFG.delta)
        assert diag["interval_count_bound_ok"]
        fracs.append(diag["violation_fraction"])
    worst = max(fracs)
    report("interval loss diagnostics", worst <= 0.01,
           f"worst interval-loss violation fraction {worst:.4f}")


# ---------------------------------------------------------------------------
# 8. byte-level determinism


def test_artifacts_byte_identical_across_executions(tmp_path):
    raw = {
        "generator": {"d": 2, "n_states": 5, "n_actions": 3,
                      "gamma_goal": 0.1, "l_min_target": 0.1, "seed": 7},
        "contexts": {"kind": "uniform", "K": 40},
        "learner": {"delta": 0.1, "l_min": 0.1},
        "seeds": [0, 1],
        "out_dir": str(tmp_path / "out"),
        "baseline_context_blind": True,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(raw))
    assert cli_main(["gen", "--config", str(cfg_path)]) == 0
    assert cli_main(["run", "--config", str(cfg_path)]) == 0

    def snapshot():
        blobs = {}
        for variant in ("lrcssp", "context_blind"):
            for seed in (0, 1):
                for name in ("regret.csv", "events.jsonl", "summary.txt"):
                    p = tmp_path / "out" / variant / f"seed_{seed}" / name
                    blobs[str(p)] = p.read_bytes()
        return blobs

    first = snapshot()
    assert cli_main(["run", "--config", str(cfg_path)]) == 0
    second = snapshot()
    identical = first == second
    report("byte-identical artifacts", identical,
           f"{len(first)} artifact files compared across two executions")
