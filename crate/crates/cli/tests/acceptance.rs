//! Acceptance gate: one integration test per numbered criterion, each
//! printing a single verdict line. Verdicts from passing tests are shown by
//! `cargo test --test acceptance -- --nocapture`; a failing criterion's line
//! appears in the captured output cargo prints on failure.

use std::fmt::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nashq::eval::{
    check_learning_rate_properties, loglog_slope, matrix_game_value_by_supports,
    reference_closeness, regret_curve, sandwich_check, RunMetrics,
};
use nashq::game::{generate_random, nash_gap, nash_values, Dims, MarkovGame};
use nashq::learner::{
    extract_marginals, run_episode, select_output_episode, LearnerConfig, LearnerState, Mode,
};
use nashq::linprog::{
    cce_deviation_residual, cce_multi_deviation_residual, compute_cce, compute_cce_multi,
    matrix_game_value,
};
use nashq::multi::{
    cce_gap, extract_correlated, generate_random_multi, run_episode_multi, MultiDims,
    MultiLearnerState,
};
use nashq::rng::SplitMix64;
use nashq_cli::config::{default_checkpoints, ExperimentConfig, GameSource};
use nashq_cli::runner::{resume_run, run_experiment};

/// Prints the verdict line before asserting so the line exists even when
/// the criterion fails.
fn verdict(number: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "pass" } else { "FAIL" };
    println!("criterion {number:02} {name}: {status} ({detail})");
    assert!(pass, "criterion {number:02} {name}: {detail}");
}

fn suite_dims() -> Dims {
    Dims::new(2, 2, 2, 3).expect("fixed dims are valid")
}

fn desk_config(c_b: f64, delta: f64, k: u64, mode: Mode) -> LearnerConfig {
    LearnerConfig { c_b, delta, total_episodes: k, mode }
}

#[test]
fn criterion_01_matrix_values_match_support_enumeration() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(0xace0_0001);
    let mut worst = 0.0f64;
    let mut games = 0usize;
    for _ in 0..500 {
        let entries: Vec<f64> = (0..9).map(|_| 10.0 * rng.next_f64() - 5.0).collect();
        let sol = matrix_game_value(&entries, 3, 3).expect("3x3 game solves");
        let oracle = matrix_game_value_by_supports(&entries, 3, 3).expect("oracle solves");
        worst = worst.max((sol.value - oracle).abs());
        games += 1;
    }
    // Every 2x2 matrix with entries in {-1, 0, 1}, all 81 sign patterns.
    for code in 0..81u32 {
        let mut entries = [0.0f64; 4];
        let mut rest = code;
        for slot in entries.iter_mut() {
            *slot = (rest % 3) as f64 - 1.0;
            rest /= 3;
        }
        let sol = matrix_game_value(&entries, 2, 2).expect("2x2 game solves");
        let oracle = matrix_game_value_by_supports(&entries, 2, 2).expect("oracle solves");
        worst = worst.max((sol.value - oracle).abs());
        games += 1;
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-8 && elapsed < Duration::from_secs(10);
    verdict(
        1,
        "lp matrix game values match support enumeration",
        pass,
        &format!("{games} games, worst difference {worst:.2e}, {:.1}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_cce_distributions_are_feasible() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(0xace0_0002);
    let mut failures = 0usize;
    let mut worst_residual = 0.0f64;
    let mut worst_mass = 0.0f64;
    for _ in 0..1000 {
        let rows = 1 + (rng.next_u64() % 6) as usize;
        let cols = 1 + (rng.next_u64() % 6) as usize;
        let mut q_upper = Vec::with_capacity(rows * cols);
        let mut q_lower = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let a = 10.0 * rng.next_f64();
            let b = 10.0 * rng.next_f64();
            q_upper.push(a.max(b));
            q_lower.push(a.min(b));
        }
        let dist = match compute_cce(&q_upper, &q_lower, rows, cols) {
            Ok(d) => d,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let mass: f64 = dist.probs.iter().sum();
        let residual = cce_deviation_residual(&q_upper, &q_lower, rows, cols, &dist.probs);
        worst_mass = worst_mass.max((mass - 1.0).abs());
        worst_residual = worst_residual.max(residual);
        if residual > 1e-9 || (mass - 1.0).abs() > 1e-10 || dist.probs.iter().any(|&p| p < 0.0) {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = failures == 0 && elapsed < Duration::from_secs(10);
    verdict(
        2,
        "two player cce programs return feasible distributions",
        pass,
        &format!(
            "1000 programs, {failures} failures, worst deviation {worst_residual:.2e}, worst mass error {worst_mass:.2e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_03_multi_player_cce_distributions_are_feasible() {
    let mut rng = SplitMix64::new(0xace0_0003);
    let mut failures = 0usize;
    let mut worst_residual = 0.0f64;
    for _ in 0..200 {
        let counts: Vec<usize> = (0..3).map(|_| 1 + (rng.next_u64() % 3) as usize).collect();
        let joint: usize = counts.iter().product();
        let mut uppers = Vec::with_capacity(3);
        let mut lowers = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut up = Vec::with_capacity(joint);
            let mut lo = Vec::with_capacity(joint);
            for _ in 0..joint {
                let a = 10.0 * rng.next_f64();
                let b = 10.0 * rng.next_f64();
                up.push(a.max(b));
                lo.push(a.min(b));
            }
            uppers.push(up);
            lowers.push(lo);
        }
        let upper_refs: Vec<&[f64]> = uppers.iter().map(Vec::as_slice).collect();
        let lower_refs: Vec<&[f64]> = lowers.iter().map(Vec::as_slice).collect();
        match compute_cce_multi(&counts, &upper_refs, &lower_refs) {
            Ok(probs) => {
                let mass: f64 = probs.iter().sum();
                let residual = cce_multi_deviation_residual(&counts, &upper_refs, &probs);
                worst_residual = worst_residual.max(residual);
                if residual > 1e-9 || (mass - 1.0).abs() > 1e-10 || probs.iter().any(|&p| p < 0.0)
                {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let pass = failures == 0;
    verdict(
        3,
        "three player cce programs return feasible distributions",
        pass,
        &format!("200 games, {failures} failures, worst deviation {worst_residual:.2e}"),
    );
}

#[test]
fn criterion_04_learning_rate_bounds_hold() {
    let report = check_learning_rate_properties(&[1, 2, 5, 10, 32], 2000).expect("sweep runs");
    let tightest = report.tightest.iter().map(|m| m.margin).fold(f64::INFINITY, f64::min);
    let pass = report.is_ok() && report.max_sum_deviation <= 1e-12;
    verdict(
        4,
        "learning rate weight bounds hold on the horizon grid",
        pass,
        &format!(
            "H in {{1, 2, 5, 10, 32}}, N up to 2000, {} violations, tightest margin {tightest:.2e}, weight sum deviation {:.2e}",
            report.violations.len(),
            report.max_sum_deviation
        ),
    );
}

struct MonotoneProbe {
    runs: usize,
    order_violations: usize,
    ref_order_violations: usize,
    frozen_ref_changes: usize,
    settled_regressions: usize,
    entry_count_mismatches: usize,
    elapsed: Duration,
}

/// Twenty seeded games with every table compared entrywise against its
/// previous-episode snapshot for all 5000 episodes.
fn monotone_probe() -> &'static MonotoneProbe {
    static PROBE: OnceLock<MonotoneProbe> = OnceLock::new();
    PROBE.get_or_init(|| {
        let start = Instant::now();
        let mut probe = MonotoneProbe {
            runs: 0,
            order_violations: 0,
            ref_order_violations: 0,
            frozen_ref_changes: 0,
            settled_regressions: 0,
            entry_count_mismatches: 0,
            elapsed: Duration::ZERO,
        };
        let mut shape = SplitMix64::new(0xace0_0005);
        for g in 0..20u64 {
            let dims = Dims::new(
                1 + (shape.next_u64() % 4) as usize,
                1 + (shape.next_u64() % 3) as usize,
                1 + (shape.next_u64() % 3) as usize,
                1 + (shape.next_u64() % 4) as usize,
            )
            .expect("drawn dims fit the table budget");
            let game = generate_random(500 + g, dims, 1.0).expect("generator succeeds");
            let config = desk_config(2.0, 0.01, 5_000, Mode::Full);
            let mut state = LearnerState::init(dims, config.clone()).expect("init succeeds");

            let mut prev_q_upper = state.q_upper.clone();
            let mut prev_q_lower = state.q_lower.clone();
            let mut prev_v_upper = state.v_upper.clone();
            let mut prev_v_lower = state.v_lower.clone();
            let mut prev_vr_upper = state.v_upper_ref.clone();
            let mut prev_vr_lower = state.v_lower_ref.clone();
            let mut prev_u_r = state.u_r.clone();
            let mut prev_settled = state.settled_fraction();
            let mut entries_at_first = 0usize;

            for k in 1..=config.total_episodes {
                let mut rng = SplitMix64::for_episode(g + 1, k);
                run_episode(&mut state, &game, &mut rng).expect("episode runs");
                if k == 1 {
                    entries_at_first = state.scalar_entry_count();
                }
                for i in 0..state.q_upper.len() {
                    if state.q_upper[i] > prev_q_upper[i] || state.q_lower[i] < prev_q_lower[i] {
                        probe.order_violations += 1;
                    }
                    if state.q_upper_ref[i] < state.q_upper[i]
                        || state.q_lower_ref[i] > state.q_lower[i]
                    {
                        probe.ref_order_violations += 1;
                    }
                }
                for i in 0..state.v_upper.len() {
                    if state.v_upper[i] > prev_v_upper[i] || state.v_lower[i] < prev_v_lower[i] {
                        probe.order_violations += 1;
                    }
                }
                for h in 0..dims.horizon {
                    for s in 0..dims.num_states {
                        let f = dims.vidx(h, s);
                        if prev_u_r[f] {
                            continue;
                        }
                        if state.u_r[f] {
                            probe.settled_regressions += 1;
                        }
                        if state.v_upper_ref[f] != prev_vr_upper[f]
                            || state.v_lower_ref[f] != prev_vr_lower[f]
                        {
                            probe.frozen_ref_changes += 1;
                        }
                    }
                }
                let settled = state.settled_fraction();
                if settled < prev_settled {
                    probe.settled_regressions += 1;
                }
                prev_settled = settled;
                prev_q_upper.copy_from_slice(&state.q_upper);
                prev_q_lower.copy_from_slice(&state.q_lower);
                prev_v_upper.copy_from_slice(&state.v_upper);
                prev_v_lower.copy_from_slice(&state.v_lower);
                prev_vr_upper.copy_from_slice(&state.v_upper_ref);
                prev_vr_lower.copy_from_slice(&state.v_lower_ref);
                prev_u_r.copy_from_slice(&state.u_r);
            }
            if state.scalar_entry_count() != entries_at_first {
                probe.entry_count_mismatches += 1;
            }
            probe.runs += 1;
        }
        probe.elapsed = start.elapsed();
        probe
    })
}

#[test]
fn criterion_05_tables_are_monotone_and_reference_dominated() {
    let probe = monotone_probe();
    let pass = probe.order_violations == 0
        && probe.ref_order_violations == 0
        && probe.elapsed < Duration::from_secs(60);
    verdict(
        5,
        "q and v tables stay monotone with dominating references",
        pass,
        &format!(
            "{} runs of 5000 episodes, {} order violations, {} reference order violations, {:.1}s",
            probe.runs,
            probe.order_violations,
            probe.ref_order_violations,
            probe.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_06_references_freeze_at_settlement() {
    let probe = monotone_probe();
    let pass = probe.frozen_ref_changes == 0 && probe.settled_regressions == 0;
    verdict(
        6,
        "settled reference values stay frozen",
        pass,
        &format!(
            "{} runs, {} post-settlement reference changes, {} settled fraction regressions",
            probe.runs, probe.frozen_ref_changes, probe.settled_regressions
        ),
    );
}

struct SuiteProbe {
    runs: usize,
    sandwich_bad_runs: usize,
    closeness_bad_runs: usize,
    worst_q_excess: f64,
    worst_v_excess: f64,
    worst_closeness: f64,
    elapsed: Duration,
}

/// Three fixed games, fifty seeds each, inspected against the exact oracle
/// at power-of-two episode checkpoints.
fn suite_probe() -> &'static SuiteProbe {
    static PROBE: OnceLock<SuiteProbe> = OnceLock::new();
    PROBE.get_or_init(|| {
        let start = Instant::now();
        let mut probe = SuiteProbe {
            runs: 0,
            sandwich_bad_runs: 0,
            closeness_bad_runs: 0,
            worst_q_excess: 0.0,
            worst_v_excess: 0.0,
            worst_closeness: 0.0,
            elapsed: Duration::ZERO,
        };
        let k = 10_000u64;
        let checkpoints = default_checkpoints(k);
        for g in 1..=3u64 {
            let game = generate_random(g, suite_dims(), 1.0).expect("generator succeeds");
            let oracle = nash_values(&game).expect("exact solve succeeds");
            for seed in 1..=50u64 {
                let config = desk_config(4.0, 0.05, k, Mode::Full);
                let mut state = LearnerState::init(game.dims, config).expect("init succeeds");
                let mut sandwich_bad = false;
                let mut closeness_bad = false;
                let mut next = 0usize;
                for episode in 1..=k {
                    let mut rng = SplitMix64::for_episode(seed, episode);
                    run_episode(&mut state, &game, &mut rng).expect("episode runs");
                    if checkpoints.get(next) != Some(&episode) {
                        continue;
                    }
                    next += 1;
                    let report = sandwich_check(&state, &oracle).expect("dims match");
                    probe.worst_q_excess = probe.worst_q_excess.max(report.worst_q);
                    probe.worst_v_excess = probe.worst_v_excess.max(report.worst_v);
                    if report.total_violations() > 0 {
                        sandwich_bad = true;
                    }
                    let close = reference_closeness(&state);
                    probe.worst_closeness =
                        probe.worst_closeness.max(close.upper.max(close.lower));
                    if close.upper > 2.0 || close.lower > 2.0 {
                        closeness_bad = true;
                    }
                }
                probe.runs += 1;
                if sandwich_bad {
                    probe.sandwich_bad_runs += 1;
                }
                if closeness_bad {
                    probe.closeness_bad_runs += 1;
                }
            }
        }
        probe.elapsed = start.elapsed();
        probe
    })
}

#[test]
fn criterion_07_exact_values_stay_inside_the_sandwich() {
    let probe = suite_probe();
    let fraction = probe.sandwich_bad_runs as f64 / probe.runs as f64;
    let pass = fraction <= 0.10;
    verdict(
        7,
        "exact values stay between the pessimistic and optimistic tables",
        pass,
        &format!(
            "{}/{} runs with a checkpoint violation ({:.1}%), worst q excess {:.2e}, worst v excess {:.2e}, {:.1}s",
            probe.sandwich_bad_runs,
            probe.runs,
            100.0 * fraction,
            probe.worst_q_excess,
            probe.worst_v_excess,
            probe.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_08_references_track_the_running_values() {
    let probe = suite_probe();
    let clean = probe.runs - probe.closeness_bad_runs;
    let pass = clean as f64 >= 0.9 * probe.runs as f64;
    verdict(
        8,
        "reference values stay within 2 of the running values",
        pass,
        &format!(
            "{clean}/{} runs clean at every checkpoint, worst distance {:.3}",
            probe.runs, probe.worst_closeness
        ),
    );
}

struct ConvergenceProbe {
    _dir: tempfile::TempDir,
    horizon: usize,
    kstar: u64,
    kstar_nash_gap: f64,
    metrics: RunMetrics,
    checkpoint_sizes: (u64, u64),
    entry_counts: (usize, usize),
    elapsed: Duration,
}

/// One 200000-episode run on a fixed generated game, driven through the
/// experiment runner so metrics and checkpoints land on disk.
fn convergence_probe() -> &'static ConvergenceProbe {
    static PROBE: OnceLock<ConvergenceProbe> = OnceLock::new();
    PROBE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir creates");
        let k = 200_000u64;
        let config = ExperimentConfig {
            game: GameSource::Generated { seed: 8, dims: suite_dims(), concentration: 1.0 },
            learner: desk_config(2.0, 0.01, k, Mode::Full),
            checkpoints: None,
            slope_window: (1_000, 100_000),
            seeds: vec![101],
            out_dir: None,
            parallelism: 1,
        };
        let start = Instant::now();
        let output = run_experiment(&config, dir.path()).expect("experiment runs");
        let elapsed = start.elapsed();
        let outcome = &output.outcomes[0];
        let report = outcome.result.as_ref().expect("seed run succeeds").clone();
        let metrics_text =
            std::fs::read_to_string(outcome.dir.join("metrics.csv")).expect("metrics exist");
        let metrics = RunMetrics::from_csv(&metrics_text).expect("metrics parse");
        let first =
            std::fs::read_to_string(outcome.dir.join("state_1.txt")).expect("first checkpoint");
        let last = std::fs::read_to_string(outcome.dir.join(format!("state_{k}.txt")))
            .expect("final checkpoint");
        let entries_first =
            LearnerState::from_text(&first).expect("checkpoint parses").scalar_entry_count();
        let entries_last =
            LearnerState::from_text(&last).expect("checkpoint parses").scalar_entry_count();
        ConvergenceProbe {
            horizon: suite_dims().horizon,
            kstar: report.kstar,
            kstar_nash_gap: report.kstar_nash_gap,
            metrics,
            checkpoint_sizes: (first.len() as u64, last.len() as u64),
            entry_counts: (entries_first, entries_last),
            elapsed,
            _dir: dir,
        }
    })
}

#[test]
fn criterion_09_output_policy_reaches_a_small_nash_gap() {
    let probe = convergence_probe();
    let threshold = 0.05 * probe.horizon as f64;
    let pass = probe.kstar_nash_gap <= threshold && probe.elapsed <= Duration::from_secs(180);
    verdict(
        9,
        "selected output policy has a small nash gap",
        pass,
        &format!(
            "episode {} of 200000 selected, nash gap {:.4} vs {threshold:.2} allowed, {:.1}s",
            probe.kstar,
            probe.kstar_nash_gap,
            probe.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_10_cumulative_gap_grows_sublinearly() {
    let probe = convergence_probe();
    let curve = regret_curve(&probe.metrics).expect("metrics nonempty");
    let slope = loglog_slope(&curve, 1_000, 100_000).expect("window is covered");
    let pass = slope <= 0.8;
    verdict(
        10,
        "log-log slope of the cumulative value gap is sublinear",
        pass,
        &format!("slope {slope:.4} over episodes [1000, 100000], 0.8 allowed"),
    );
}

/// Runs one seed to completion, then replays the prefix up to the selected
/// output episode and scores its marginal policy pair.
fn kstar_marginal_gap(game: &MarkovGame, config: &LearnerConfig, seed: u64) -> f64 {
    let mut state = LearnerState::init(game.dims, config.clone()).expect("init succeeds");
    let mut history = Vec::with_capacity(config.total_episodes as usize);
    for k in 1..=config.total_episodes {
        let mut rng = SplitMix64::for_episode(seed, k);
        let record = run_episode(&mut state, game, &mut rng).expect("episode runs");
        history.push(record.value_gap_s1);
    }
    let kstar = select_output_episode(&history).expect("history nonempty");
    let mut replay = LearnerState::init(game.dims, config.clone()).expect("init succeeds");
    for k in 1..=kstar {
        let mut rng = SplitMix64::for_episode(seed, k);
        run_episode(&mut replay, game, &mut rng).expect("episode replays");
    }
    let pair = extract_marginals(&replay);
    nash_gap(game, &pair.mu, &pair.nu).expect("gap computes")
}

#[test]
fn criterion_11_reference_mode_is_not_worse_than_the_ablation() {
    let k = 10_000u64;
    let mut detail = String::new();
    let mut wins = 0usize;
    for g in 1..=3u64 {
        let game = generate_random(g, suite_dims(), 1.0).expect("generator succeeds");
        let mut means = [0.0f64; 2];
        for (slot, mode) in [Mode::Full, Mode::UcbOnly].into_iter().enumerate() {
            let config = desk_config(4.0, 0.05, k, mode);
            let total: f64 =
                (1..=5u64).map(|seed| kstar_marginal_gap(&game, &config, seed)).sum();
            means[slot] = total / 5.0;
        }
        if means[0] <= 1.2 * means[1] + 1e-12 {
            wins += 1;
        }
        let _ = write!(detail, "game {g} full {:.4} vs ucb {:.4}, ", means[0], means[1]);
    }
    let pass = wins >= 2;
    verdict(
        11,
        "full mode is non-inferior to the ucb-only ablation",
        pass,
        &format!("{detail}{wins}/3 games within 1.2x"),
    );
}

#[test]
fn criterion_12_multi_player_learner_converges() {
    let dims = MultiDims::new(vec![2, 2, 2], 2, 2).expect("dims are valid");
    let game = generate_random_multi(3, dims.clone(), 1.0).expect("generator succeeds");
    let k = 300_000u64;
    let config = desk_config(2.0, 0.01, k, Mode::Full);
    let mut state = MultiLearnerState::init(dims, config).expect("init succeeds");
    let start = Instant::now();
    for episode in 1..=k {
        let mut rng = SplitMix64::for_episode(101, episode);
        run_episode_multi(&mut state, &game, &mut rng).expect("episode runs");
    }
    let elapsed = start.elapsed();
    let policy = extract_correlated(&state);
    let gap = cce_gap(&game, &policy).expect("gap computes");
    let threshold = 0.1 * game.dims.horizon as f64;
    let pass = gap <= threshold && elapsed <= Duration::from_secs(300);
    verdict(
        12,
        "three player correlated policy converges",
        pass,
        &format!(
            "cce gap {gap:.4} vs {threshold:.2} allowed after {k} episodes, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_13_learner_memory_is_flat_in_k() {
    let probe = convergence_probe();
    let monotone = monotone_probe();
    let (first, last) = probe.checkpoint_sizes;
    let growth = (last as f64 - first as f64).abs() / first as f64;
    let pass = probe.entry_counts.0 == probe.entry_counts.1
        && monotone.entry_count_mismatches == 0
        && growth < 0.01;
    verdict(
        13,
        "state size is constant from k=1 to k=K",
        pass,
        &format!(
            "{} scalar entries at both ends, checkpoint bytes {first} vs {last} ({:.3}% drift), {} mismatches across {} monitored runs",
            probe.entry_counts.0,
            100.0 * growth,
            monotone.entry_count_mismatches,
            monotone.runs
        ),
    );
}

#[test]
fn criterion_14_runs_are_deterministic_and_resumable() {
    let k = 512u64;
    let config = ExperimentConfig {
        game: GameSource::Generated { seed: 8, dims: suite_dims(), concentration: 1.0 },
        learner: desk_config(2.0, 0.01, k, Mode::Full),
        checkpoints: None,
        slope_window: (1, k),
        seeds: vec![1, 2],
        out_dir: None,
        parallelism: 2,
    };
    let dir_a = tempfile::tempdir().expect("tempdir creates");
    let dir_b = tempfile::tempdir().expect("tempdir creates");
    let out_a = run_experiment(&config, dir_a.path()).expect("first run succeeds");
    let out_b = run_experiment(&config, dir_b.path()).expect("second run succeeds");
    assert!(out_a.all_ok() && out_b.all_ok(), "both runs must succeed");

    let mut rerun_identical = true;
    for name in ["seed_1/metrics.csv", "seed_2/metrics.csv", "summary.csv"] {
        let a = std::fs::read(dir_a.path().join(name)).expect("artifact exists");
        let b = std::fs::read(dir_b.path().join(name)).expect("artifact exists");
        rerun_identical &= a == b;
    }

    let resumed = resume_run(&dir_b.path().join("seed_1").join("state_64.txt"))
        .expect("resume succeeds");
    assert!(resumed.all_ok(), "resumed run must succeed");
    let mut resume_identical = true;
    let final_state = format!("state_{k}.txt");
    for name in ["metrics.csv", final_state.as_str()] {
        let a = std::fs::read(dir_a.path().join("seed_1").join(name)).expect("artifact exists");
        let b = std::fs::read(dir_b.path().join("seed_1").join(name)).expect("artifact exists");
        resume_identical &= a == b;
    }
    let pass = rerun_identical && resume_identical;
    verdict(
        14,
        "identical seeds reproduce and resume byte for byte",
        pass,
        &format!(
            "2 seeds at K {k}: rerun identical {rerun_identical}, resume from episode 64 identical {resume_identical}"
        ),
    );
}
