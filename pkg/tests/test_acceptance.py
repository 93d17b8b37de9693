"""Acceptance gate: ten numbered end-to-end criteria.

Each criterion is one test that prints a single ``ACCEPTANCE NN name:
PASS|FAIL (detail)`` line (run with ``-s`` to see the lines for passing
tests) and then asserts the stated bound.  Training artifacts are
expensive, so datasets, dynamics models, and trained agents are module
fixtures shared across criteria; every criterion with a runtime cap is
timed against the wall time of the work it owns (training and
evaluation it requires), not against shared-fixture construction it
merely reuses.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest

from scaslab import DynamicsModel, ScasAgent, evaluate_policy, nn
from scaslab.cli import main as cli_main
from scaslab.envs import PointNavConfig, ScriptedBehavior, collect_dataset
from scaslab.tabular import verify_propositions

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2, 3, 4)
ENV = PointNavConfig()
N_TRANSITIONS = 50_000
# Default dataset: single-noise scripted behavior, the package default.
DEFAULT_NOISE = (0.05,)
# Mixed-quality dataset: the same controller at two noise levels.
MIXED_NOISE = (0.0, 0.3)

OOD_EPISODES = 200
PERTURB_LEVELS = (0, 10, 25, 50)
PERTURB_EPISODES = 400
FINAL_RETURN_EPISODES = 100

BAND_EXIT_DEADLINE = 50_000


def _report(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line, flush=True)
    assert ok, line


def _collect(noise: tuple[float, ...], seed: int):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return collect_dataset(
        ENV, ScriptedBehavior(noise_levels=noise), N_TRANSITIONS, True, rng, seed=seed
    )


def _fit_timed(agent: ScasAgent, data, dynamics):
    t0 = time.monotonic()
    agent.fit(data, dynamics=dynamics)
    return agent, time.monotonic() - t0


# --------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def det_report():
    t0 = time.monotonic()
    rep = verify_propositions(
        100, 6, 4, grid=50, alphas=(0.0, 1.0, 5.0), stochastic=False, seed=1
    )
    return rep, time.monotonic() - t0


@pytest.fixture(scope="module")
def stoch_report():
    t0 = time.monotonic()
    rep = verify_propositions(
        100, 6, 4, grid=50, alphas=(0.0, 1.0, 5.0), stochastic=True, seed=2
    )
    return rep, time.monotonic() - t0


@pytest.fixture(scope="module")
def default_data():
    return {seed: _collect(DEFAULT_NOISE, seed) for seed in SEEDS}


@pytest.fixture(scope="module")
def default_dynamics(default_data):
    return {
        seed: DynamicsModel(random_state=seed).fit(default_data[seed])
        for seed in SEEDS
    }


@pytest.fixture(scope="module")
def scas_runs(default_data, default_dynamics):
    """Full-length SCAS defaults (lambda=0.25, alpha=5), one per seed."""
    return {
        seed: _fit_timed(
            ScasAgent(random_state=seed),
            default_data[seed],
            default_dynamics[seed],
        )
        for seed in SEEDS
    }


@pytest.fixture(scope="module")
def lam0_runs(default_data, default_dynamics):
    """Pure normalized-Q ascent; stops once mean Q leaves the bounded band."""
    return {
        seed: _fit_timed(
            ScasAgent(random_state=seed, lam=0.0, stop_on_q_divergence=True),
            default_data[seed],
            default_dynamics[seed],
        )
        for seed in SEEDS
    }


@pytest.fixture(scope="module")
def bc_runs(default_data):
    """Behavior cloning: actor regressed onto dataset actions."""
    return {
        seed: _fit_timed(
            ScasAgent(random_state=seed, bc_mode=True, lam=1.0, alpha=0.0, sigma=0.0),
            default_data[seed],
            None,
        )
        for seed in SEEDS
    }


@pytest.fixture(scope="module")
def mixed_data():
    return {seed: _collect(MIXED_NOISE, seed) for seed in SEEDS}


@pytest.fixture(scope="module")
def mixed_dynamics(mixed_data):
    return {
        seed: DynamicsModel(random_state=seed).fit(mixed_data[seed]) for seed in SEEDS
    }


@pytest.fixture(scope="module")
def alpha5_mixed_runs(mixed_data, mixed_dynamics):
    return {
        seed: _fit_timed(
            ScasAgent(random_state=seed),
            mixed_data[seed],
            mixed_dynamics[seed],
        )
        for seed in SEEDS
    }


@pytest.fixture(scope="module")
def alpha0_mixed_runs(mixed_data, mixed_dynamics):
    return {
        seed: _fit_timed(
            ScasAgent(random_state=seed, alpha=0.0),
            mixed_data[seed],
            mixed_dynamics[seed],
        )
        for seed in SEEDS
    }


@pytest.fixture(scope="module")
def ood_reports(scas_runs, bc_runs):
    """Per-seed OOD-hole evaluations of the SCAS and BC policies."""
    t0 = time.monotonic()
    out = {}
    for seed in SEEDS:
        out[seed] = tuple(
            evaluate_policy(
                runs[seed][0].policy_snapshot(),
                ENV,
                mode="OOD_HOLE",
                episodes=OOD_EPISODES,
                seeds=(9000 + seed,),
            ).aggregates()
            for runs in (scas_runs, bc_runs)
        )
    return out, time.monotonic() - t0


@pytest.fixture(scope="module")
def perturb_returns(scas_runs, bc_runs):
    """Mean return per (policy, seed, perturb level) for the robustness sweep."""
    out = {}
    for name, runs in (("scas", scas_runs), ("bc", bc_runs)):
        for seed in SEEDS:
            pol = runs[seed][0].policy_snapshot()
            for level in PERTURB_LEVELS:
                rep = evaluate_policy(
                    pol,
                    ENV,
                    mode="IN_DIST",
                    episodes=PERTURB_EPISODES,
                    seeds=(8000 + 10 * seed + PERTURB_LEVELS.index(level),),
                    perturb_steps=level,
                )
                out[name, seed, level] = rep.aggregates()["return_mean"]
    return out


# --------------------------------------------------------------- criteria


def test_criterion_01_proposition1_oracle(det_report):
    rep, secs = det_report
    gap_tol = 2.0 / 50.0
    ok = (
        rep.instances == 100
        and rep.max_argmax_gap <= gap_tol
        and rep.max_alignment_kl <= 1e-10
        and secs <= 300.0
    )
    _report(
        1,
        "prop1-deterministic-oracle",
        ok,
        f"argmax_gap={rep.max_argmax_gap:.3g}<={gap_tol}, "
        f"kl={rep.max_alignment_kl:.3g}<=1e-10, {secs:.0f}s<=300s",
    )


def test_criterion_02_proposition2_support(stoch_report):
    rep, secs = stoch_report
    ok = (
        rep.instances == 100
        and rep.max_support_violation <= 1e-6
        and secs <= 600.0
    )
    _report(
        2,
        "prop2-support-containment",
        ok,
        f"support_violation={rep.max_support_violation:.3g}<=1e-6, {secs:.0f}s<=600s",
    )


def test_criterion_03_alpha_zero_degenerate(det_report, stoch_report):
    gap = max(det_report[0].max_alpha_zero_gap, stoch_report[0].max_alpha_zero_gap)
    ok = gap <= 1e-14
    _report(3, "alpha0-degenerates-to-N", ok, f"max|N*-N|={gap:.3g}<=1e-14")


def _fd_param_grad(spec, params, x, up, h):
    out = np.zeros_like(params.flat)
    for i in range(params.flat.size):
        orig = params.flat[i]
        params.flat[i] = orig + h
        hi = float(np.dot(up, nn.forward(spec, params, x)))
        params.flat[i] = orig - h
        lo = float(np.dot(up, nn.forward(spec, params, x)))
        params.flat[i] = orig
        out[i] = (hi - lo) / (2.0 * h)
    return out


def _fd_input_grad(spec, params, x, up, h):
    out = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        hi = float(np.dot(up, nn.forward(spec, params, xp)))
        xp[i] -= 2.0 * h
        lo = float(np.dot(up, nn.forward(spec, params, xp)))
        out[i] = (hi - lo) / (2.0 * h)
    return out


def test_criterion_04_gradient_correctness():
    # Relative error uses a 1e-3 magnitude floor so coordinates whose true
    # gradient is numerically zero are held to |a - f| <= 1e-7 instead of 0/0.
    h = 1e-5
    rng = np.random.default_rng(np.random.SeedSequence(41))
    t0 = time.monotonic()
    worst = 0.0
    for _ in range(100):
        depth = int(rng.integers(2, 5))
        widths = tuple(int(rng.integers(1, 9)) for _ in range(depth))
        if rng.random() < 0.5:
            scale = tuple(float(s) for s in rng.uniform(0.2, 3.0, size=widths[-1]))
            spec = nn.MlpSpec(widths, "tanh_scaled", scale)
        else:
            spec = nn.MlpSpec(widths)
        params = nn.init_params(spec, rng, dtype=np.float64)
        x = rng.normal(size=widths[0])
        up = rng.normal(size=widths[-1])
        pg, ig = nn.grad(spec, params, x, up)
        for analytic, fd in (
            (pg.flat, _fd_param_grad(spec, params, x, up, h)),
            (ig, _fd_input_grad(spec, params, x, up, h)),
        ):
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-3)
            worst = max(worst, float((np.abs(analytic - fd) / denom).max()))
    secs = time.monotonic() - t0
    ok = worst < 1e-4 and secs <= 60.0
    _report(
        4,
        "gradient-finite-difference",
        ok,
        f"worst_rel_err={worst:.3g}<1e-4 over 100 configs, {secs:.1f}s<=60s",
    )


def test_criterion_05_value_divergence_ablation(scas_runs, lam0_runs):
    secs = sum(t for _, t in scas_runs.values()) + sum(t for _, t in lam0_runs.values())
    band = next(iter(scas_runs.values()))[0].q_band_
    bounded = all(
        agent.band_exit_step_ is None
        and agent.trained_steps_ == agent.gradient_steps
        and max(abs(row["mean_q"]) for row in agent.metrics_) <= band
        for agent, _ in scas_runs.values()
    )
    exits = [agent.band_exit_step_ for agent, _ in lam0_runs.values()]
    diverged = all(e is not None and e < BAND_EXIT_DEADLINE for e in exits)
    ok = bounded and diverged and secs <= 1800.0
    _report(
        5,
        "value-divergence-ablation",
        ok,
        f"lam=.25 in band |q|<={band:.0f} on {sum(a.band_exit_step_ is None for a, _ in scas_runs.values())}/5, "
        f"lam=0 exits at {exits} (<{BAND_EXIT_DEADLINE}), {secs:.0f}s<=1800s",
    )


def test_criterion_06_ood_state_correction(scas_runs, bc_runs, ood_reports):
    reports, eval_secs = ood_reports
    secs = (
        sum(t for _, t in scas_runs.values())
        + sum(t for _, t in bc_runs.values())
        + eval_secs
    )
    wins = 0
    rows = []
    for seed in SEEDS:
        s_agg, b_agg = reports[seed]
        better = (
            s_agg["steps_out_of_ood_mean"] < b_agg["steps_out_of_ood_mean"]
            and s_agg["return_mean"] > b_agg["return_mean"]
        )
        wins += better
        rows.append(
            f"seed{seed}: steps {s_agg['steps_out_of_ood_mean']:.2f}/"
            f"{b_agg['steps_out_of_ood_mean']:.2f} "
            f"ret {s_agg['return_mean']:.2f}/{b_agg['return_mean']:.2f}"
        )
    ok = wins >= 4 and secs <= 2700.0
    _report(
        6,
        "ood-state-correction-vs-bc",
        ok,
        f"scas/bc wins={wins}/5, {secs:.0f}s<=2700s; " + "; ".join(rows),
    )


def test_criterion_07_value_awareness(alpha5_mixed_runs, alpha0_mixed_runs):
    wins = 0
    rows = []
    for seed in SEEDS:
        finals = [
            evaluate_policy(
                runs[seed][0].policy_snapshot(),
                ENV,
                mode="IN_DIST",
                episodes=FINAL_RETURN_EPISODES,
                seeds=(7000 + seed,),
            ).aggregates()["return_mean"]
            for runs in (alpha5_mixed_runs, alpha0_mixed_runs)
        ]
        wins += finals[0] >= finals[1]
        rows.append(f"seed{seed}: {finals[0]:.2f}/{finals[1]:.2f}")
    ok = wins >= 4
    _report(7, "value-awareness-alpha", ok, f"alpha5>=alpha0 wins={wins}/5; " + "; ".join(rows))


def test_criterion_08_perturbation_robustness(perturb_returns):
    wins = 0
    rows = []
    for seed in SEEDS:
        scas = {k: perturb_returns["scas", seed, k] for k in PERTURB_LEVELS}
        bc = {k: perturb_returns["bc", seed, k] for k in PERTURB_LEVELS}
        degradation_smaller = (scas[0] - scas[50]) < (bc[0] - bc[50])
        dominates = all(scas[k] > bc[k] for k in PERTURB_LEVELS)
        wins += degradation_smaller and dominates
        rows.append(
            f"seed{seed}: deg {scas[0] - scas[50]:.2f}/{bc[0] - bc[50]:.2f} "
            f"dom={'y' if dominates else 'n'}"
        )
    ok = wins >= 4
    _report(8, "perturbation-robustness", ok, f"wins={wins}/5; " + "; ".join(rows))


def test_criterion_09_weight_clip_conformance(
    scas_runs, bc_runs, alpha5_mixed_runs, alpha0_mixed_runs
):
    all_weights = []
    saturated = []
    unit = []
    for runs, bucket in (
        (scas_runs, saturated),
        (alpha5_mixed_runs, saturated),
        (bc_runs, unit),
        (alpha0_mixed_runs, unit),
    ):
        for agent, _ in runs.values():
            logged = [row["max_weight"] for row in agent.metrics_ if "max_weight" in row]
            assert logged, "weighted runs must log max_weight"
            all_weights.extend(logged)
            bucket.append(max(logged))
    clip = next(iter(scas_runs.values()))[0].weight_clip
    ok = (
        max(all_weights) <= clip
        and all(m == clip for m in saturated)
        and all(m == 1.0 for m in unit)
    )
    _report(
        9,
        "weight-clip-conformance",
        ok,
        f"max logged={max(all_weights)}<= {clip}, alpha5 runs saturate at {set(saturated)}, "
        f"alpha0 runs stay at {set(unit)}",
    )


def test_criterion_10_reproducibility(tmp_path):
    config = {
        "dataset": {
            "n_transitions": 2000,
            "behavior": {"kind": "scripted", "noise_levels": list(DEFAULT_NOISE)},
        },
        "dynamics": {"gradient_steps": 1500},
        "agent": {"gradient_steps": 1000, "log_every": 200},
        "eval": {"every": 500, "episodes": 2},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(config))
    data_path = tmp_path / "data.jsonl"
    assert (
        cli_main(
            ["gen-data", "--config", str(cfg_path), "--seed", "3", "--out", str(data_path)]
        )
        == 0
    )
    bundles = []
    for name in ("a", "b"):
        out_dir = tmp_path / name
        rc = cli_main(
            [
                "train",
                "--config",
                str(cfg_path),
                "--seed",
                "3",
                "--data",
                str(data_path),
                "--out",
                str(out_dir),
            ]
        )
        assert rc == 0
        bundles.append(out_dir)
    a, b = bundles
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    identical = files_a == files_b and all(
        (a / f).read_bytes() == (b / f).read_bytes() for f in files_a
    )
    _report(
        10,
        "train-reproducibility",
        identical,
        f"{len(files_a)} bundle files bit-identical across reruns",
    )
