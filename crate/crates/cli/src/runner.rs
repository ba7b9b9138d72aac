//! Per-seed experiment execution with deterministic artifacts.
//!
//! Every seed gets its own directory holding the exact game, a manifest,
//! the per-episode metrics CSV, and state checkpoints at the configured
//! episodes. All randomness flows through per-episode counter-based
//! streams, so a run is a pure function of (game, learner config, seed)
//! and can be replayed or resumed from any checkpoint without storing
//! generator state.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nashq::eval::RunMetrics;
use nashq::game::{generate_random, nash_gap, MarkovGame};
use nashq::learner::{
    extract_marginals, run_episode, select_output_episode, LearnerConfig, LearnerState,
};
use nashq::rng::SplitMix64;
use nashq::textio::{TextReader, TextWriter};

use crate::config::{ExperimentConfig, GameSource};

pub const SUMMARY_CSV_HEADER: &str =
    "seed,status,episodes,final_value_gap,final_nash_gap,kstar,kstar_nash_gap,settled_fraction,error";

/// Successful per-seed results surfaced in the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub episodes: u64,
    pub final_value_gap: f64,
    pub final_nash_gap: f64,
    /// Episode whose deployed policy had the smallest value gap.
    pub kstar: u64,
    /// Nash gap of the marginal policy pair replayed at `kstar`.
    pub kstar_nash_gap: f64,
    pub settled_fraction: f64,
}

#[derive(Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub result: Result<SeedReport, String>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    /// One entry per configured seed, in configuration order.
    pub outcomes: Vec<SeedOutcome>,
    pub summary_path: PathBuf,
}

impl RunOutput {
    pub fn all_ok(&self) -> bool {
        self.outcomes.iter().all(|o| o.result.is_ok())
    }
}

/// Loads or generates the experiment's game. The same game is shared by
/// every seed; run seeds only drive exploration.
pub fn resolve_game(source: &GameSource) -> Result<MarkovGame, String> {
    match source {
        GameSource::Path(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read game {}: {e}", path.display()))?;
            MarkovGame::from_text(&text).map_err(|e| format!("bad game file: {e}"))
        }
        GameSource::Generated { seed, dims, concentration } => {
            generate_random(*seed, *dims, *concentration).map_err(|e| e.to_string())
        }
    }
}

/// Everything needed to continue a seed's run from a checkpoint, stored
/// next to the artifacts so resumption does not depend on the original
/// config file.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub learner: LearnerConfig,
    pub seed: u64,
    pub checkpoints: Vec<u64>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut w = TextWriter::new("run-manifest");
        w.float("c_b", self.learner.c_b);
        w.float("delta", self.learner.delta);
        w.int("total_episodes", self.learner.total_episodes);
        w.word("mode", self.learner.mode.as_str());
        w.int("seed", self.seed);
        w.int("num_checkpoints", self.checkpoints.len() as u64);
        w.ints("checkpoints", &self.checkpoints);
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let parse = || -> nashq::Result<Manifest> {
            let mut r = TextReader::open(text, "run-manifest")?;
            let c_b = r.float("c_b")?;
            let delta = r.float("delta")?;
            let total_episodes = r.int("total_episodes")?;
            let mode = nashq::learner::Mode::parse(&r.word("mode")?)?;
            let seed = r.int("seed")?;
            let n = r.int_usize("num_checkpoints")?;
            let checkpoints = r.ints("checkpoints", n)?;
            r.finish()?;
            Ok(Manifest {
                learner: LearnerConfig { c_b, delta, total_episodes, mode },
                seed,
                checkpoints,
            })
        };
        parse().map_err(|e| format!("bad manifest: {e}"))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    std::fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn nash_gap_of_state(game: &MarkovGame, state: &LearnerState) -> Result<f64, String> {
    let pair = extract_marginals(state);
    nash_gap(game, &pair.mu, &pair.nu).map_err(|e| format!("nash gap: {e}"))
}

/// Replays the first `episodes` episodes of a seed's run and returns the
/// Nash gap of the marginals at that point. Re-running is cheaper than
/// storing per-episode policies, which would break the memory contract.
fn replay_nash_gap(
    game: &MarkovGame,
    learner: LearnerConfig,
    seed: u64,
    episodes: u64,
) -> Result<f64, String> {
    let mut state = LearnerState::init(game.dims, learner).map_err(|e| e.to_string())?;
    for episode in 1..=episodes {
        let mut rng = SplitMix64::for_episode(seed, episode);
        run_episode(&mut state, game, &mut rng)
            .map_err(|e| format!("replay episode {episode}: {e}"))?;
    }
    nash_gap_of_state(game, &state)
}

/// Runs one seed end to end, writing its artifacts into `dir`.
pub fn run_seed(
    game: &MarkovGame,
    learner: LearnerConfig,
    checkpoints: &[u64],
    seed: u64,
    dir: &Path,
) -> Result<SeedReport, String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    write_file(&dir.join("game.txt"), &game.to_text())?;
    let manifest =
        Manifest { learner: learner.clone(), seed, checkpoints: checkpoints.to_vec() };
    write_file(&dir.join("manifest.txt"), &manifest.to_text())?;

    let mut state = LearnerState::init(game.dims, learner.clone()).map_err(|e| e.to_string())?;
    let metrics = advance(&mut state, game, RunMetrics::new(), checkpoints, seed, dir)?;
    finish_seed(game, &state, metrics, &manifest, dir)
}

/// Plays episodes `state.episode + 1 ..= K`, appending metrics rows and
/// writing checkpoints as they are reached. Shared by fresh runs and
/// resumption.
fn advance(
    state: &mut LearnerState,
    game: &MarkovGame,
    mut metrics: RunMetrics,
    checkpoints: &[u64],
    seed: u64,
    dir: &Path,
) -> Result<RunMetrics, String> {
    let horizon = game.dims.horizon;
    let total = state.config.total_episodes;
    for episode in state.episode + 1..=total {
        let mut rng = SplitMix64::for_episode(seed, episode);
        let record = run_episode(state, game, &mut rng)
            .map_err(|e| format!("episode {episode}: {e}"))?;
        let at_checkpoint = checkpoints.binary_search(&episode).is_ok();
        let gap = if at_checkpoint { Some(nash_gap_of_state(game, state)?) } else { None };
        metrics.push(episode, horizon, record.value_gap_s1, gap, state.settled_fraction());
        if at_checkpoint {
            write_file(&dir.join(format!("state_{episode}.txt")), &state.to_text())?;
        }
    }
    Ok(metrics)
}

/// Writes the metrics CSV and builds the summary entry, replaying to the
/// selected output episode for its Nash gap.
fn finish_seed(
    game: &MarkovGame,
    state: &LearnerState,
    metrics: RunMetrics,
    manifest: &Manifest,
    dir: &Path,
) -> Result<SeedReport, String> {
    write_file(&dir.join("metrics.csv"), &metrics.to_csv())?;
    let history: Vec<f64> = metrics.rows.iter().map(|r| r.value_gap_s1).collect();
    let kstar = select_output_episode(&history).map_err(|e| e.to_string())?;
    let kstar_nash_gap =
        replay_nash_gap(game, manifest.learner.clone(), manifest.seed, kstar)?;
    let last = metrics.rows.last().expect("K >= 1 guarantees at least one row");
    Ok(SeedReport {
        episodes: last.episode,
        final_value_gap: last.value_gap_s1,
        final_nash_gap: nash_gap_of_state(game, state)?,
        kstar,
        kstar_nash_gap,
        settled_fraction: last.settled_fraction,
    })
}

fn summary_row(outcome: &SeedOutcome) -> String {
    match &outcome.result {
        Ok(r) => format!(
            "{},ok,{},{},{},{},{},{},",
            outcome.seed,
            r.episodes,
            r.final_value_gap,
            r.final_nash_gap,
            r.kstar,
            r.kstar_nash_gap,
            r.settled_fraction
        ),
        Err(e) => {
            // Keep the summary a valid single-line CSV row.
            let cleaned: String =
                e.chars().map(|c| if c == ',' || c == '\n' { ';' } else { c }).collect();
            format!("{},error,,,,,,,{cleaned}", outcome.seed)
        }
    }
}

pub fn write_summary(out_dir: &Path, outcomes: &[SeedOutcome]) -> Result<PathBuf, String> {
    let mut text = String::from(SUMMARY_CSV_HEADER);
    text.push('\n');
    for outcome in outcomes {
        text.push_str(&summary_row(outcome));
        text.push('\n');
    }
    let path = out_dir.join("summary.csv");
    write_file(&path, &text)?;
    Ok(path)
}

/// Runs every configured seed, up to `parallelism` at a time. Seeds are
/// fully independent; a failure is recorded in that seed's outcome and
/// the summary, leaving the others untouched.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput, String> {
    let game = resolve_game(&config.game)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    let checkpoints = config.checkpoint_schedule();
    let workers = config.parallelism.min(config.seeds.len()).max(1);

    let slots: Mutex<Vec<Option<SeedOutcome>>> =
        Mutex::new((0..config.seeds.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = config.seeds.get(i) else { break };
                let dir = out_dir.join(format!("seed_{seed}"));
                let result =
                    run_seed(&game, config.learner.clone(), &checkpoints, seed, &dir);
                slots.lock().expect("no panics hold this lock")[i] =
                    Some(SeedOutcome { seed, dir, result });
            });
        }
    });

    let outcomes: Vec<SeedOutcome> = slots
        .into_inner()
        .expect("worker threads joined")
        .into_iter()
        .map(|o| o.expect("every index was processed"))
        .collect();
    let summary_path = write_summary(out_dir, &outcomes)?;
    Ok(RunOutput { out_dir: out_dir.to_path_buf(), outcomes, summary_path })
}

/// Continues a run from a `state_<k>.txt` checkpoint in place: metrics
/// rows after episode k are regenerated, later checkpoints rewritten, and
/// the final summary row refreshed. The result is byte-identical to an
/// uninterrupted run.
pub fn resume_run(checkpoint: &Path) -> Result<RunOutput, String> {
    let dir = checkpoint
        .parent()
        .ok_or_else(|| format!("checkpoint {} has no parent directory", checkpoint.display()))?
        .to_path_buf();
    let state_text = std::fs::read_to_string(checkpoint)
        .map_err(|e| format!("cannot read {}: {e}", checkpoint.display()))?;
    let mut state = LearnerState::from_text(&state_text)
        .map_err(|e| format!("bad checkpoint: {e}"))?;
    let manifest_text = std::fs::read_to_string(dir.join("manifest.txt"))
        .map_err(|e| format!("cannot read manifest next to checkpoint: {e}"))?;
    let manifest = Manifest::from_text(&manifest_text)?;
    let game_text = std::fs::read_to_string(dir.join("game.txt"))
        .map_err(|e| format!("cannot read game next to checkpoint: {e}"))?;
    let game = MarkovGame::from_text(&game_text).map_err(|e| format!("bad game file: {e}"))?;
    if state.config != manifest.learner {
        return Err("checkpoint learner config disagrees with the manifest".to_string());
    }

    // Prior rows up to the checkpoint episode are reused verbatim.
    let metrics_text = std::fs::read_to_string(dir.join("metrics.csv"))
        .map_err(|e| format!("cannot read metrics next to checkpoint: {e}"))?;
    let mut metrics =
        RunMetrics::from_csv(&metrics_text).map_err(|e| format!("bad metrics file: {e}"))?;
    metrics.rows.retain(|r| r.episode <= state.episode);
    if metrics.rows.len() as u64 != state.episode {
        return Err(format!(
            "metrics file holds {} rows up to episode {}, expected one per episode",
            metrics.rows.len(),
            state.episode
        ));
    }

    let metrics =
        advance(&mut state, &game, metrics, &manifest.checkpoints, manifest.seed, &dir)?;
    let report = finish_seed(&game, &state, metrics, &manifest, &dir)?;
    let out_dir = dir.parent().map(Path::to_path_buf).unwrap_or_else(|| dir.clone());
    let outcomes = vec![SeedOutcome { seed: manifest.seed, dir, result: Ok(report) }];
    let summary_path = write_summary(&out_dir, &outcomes)?;
    Ok(RunOutput { out_dir, outcomes, summary_path })
}
