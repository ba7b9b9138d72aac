//! Flat `section.key = value` experiment configuration.
//!
//! The format is deliberately primitive: one assignment per line, `#`
//! comments, no nesting, no quoting. Every key is checked against the
//! documented set, so a typo fails the parse instead of silently running
//! with a default. All findings are collected and reported together.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nashq::game::Dims;
use nashq::learner::{LearnerConfig, Mode};

/// Where the experiment's game comes from: a serialized file or the
/// deterministic generator.
#[derive(Debug, Clone, PartialEq)]
pub enum GameSource {
    Path(PathBuf),
    Generated { seed: u64, dims: Dims, concentration: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub game: GameSource,
    pub learner: LearnerConfig,
    /// Explicit checkpoint episodes; `None` means powers of two plus K.
    pub checkpoints: Option<Vec<u64>>,
    /// Episode window (inclusive) for the regret slope estimate.
    pub slope_window: (u64, u64),
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub parallelism: usize,
}

impl ExperimentConfig {
    /// The episodes at which the Nash gap is evaluated and a state
    /// checkpoint is written.
    pub fn checkpoint_schedule(&self) -> Vec<u64> {
        match &self.checkpoints {
            Some(list) => list.clone(),
            None => default_checkpoints(self.learner.total_episodes),
        }
    }
}

/// Powers of two up to K, plus K itself.
pub fn default_checkpoints(k: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut c = 1u64;
    while c < k {
        out.push(c);
        c = c.saturating_mul(2);
    }
    out.push(k);
    out
}

#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
}

const KNOWN_KEYS: &[&str] = &[
    "game.path",
    "game.seed",
    "game.states",
    "game.actions_max",
    "game.actions_min",
    "game.horizon",
    "game.concentration",
    "learner.c_b",
    "learner.delta",
    "learner.K",
    "learner.mode",
    "eval.checkpoints",
    "eval.slope_window",
    "run.seeds",
    "run.out",
    "run.parallelism",
];

/// One `key = value` assignment with its 1-based source line.
#[derive(Debug, Clone)]
pub struct Pair {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Splits the text into assignments; key syntax and duplicates are checked
/// here, value syntax later. All errors are collected.
pub fn read_pairs(text: &str) -> Result<Vec<Pair>, Vec<String>> {
    let mut pairs: Vec<Pair> = Vec::new();
    let mut errors = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            errors.push(format!("line {line}: expected `key = value`, got `{content}`"));
            continue;
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            errors.push(format!("unknown key `{key}` (line {line})"));
            continue;
        }
        if let Some(&first) = seen.get(&key) {
            errors.push(format!("duplicate key `{key}` (lines {first} and {line})"));
            continue;
        }
        seen.insert(key.clone(), line);
        pairs.push(Pair { key, value, line });
    }
    if errors.is_empty() {
        Ok(pairs)
    } else {
        Err(errors)
    }
}

struct Builder<'a> {
    map: HashMap<&'a str, &'a Pair>,
    errors: Vec<String>,
}

impl<'a> Builder<'a> {
    fn take(&mut self, key: &str) -> Option<&'a Pair> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, pair: &Pair, what: &str) -> Option<T> {
        match pair.value.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.errors.push(format!(
                    "{} must be {what}, got `{}` (line {})",
                    pair.key, pair.value, pair.line
                ));
                None
            }
        }
    }

    fn parse_list<T: std::str::FromStr>(&mut self, pair: &Pair, what: &str) -> Option<Vec<T>> {
        let mut out = Vec::new();
        for token in pair.value.split_whitespace() {
            match token.parse::<T>() {
                Ok(v) => out.push(v),
                Err(_) => {
                    self.errors.push(format!(
                        "{} must be a space-separated list of {what}, got `{token}` (line {})",
                        pair.key, pair.line
                    ));
                    return None;
                }
            }
        }
        Some(out)
    }
}

/// Validates assignments into a config. Used directly by the sweep driver,
/// which substitutes grid overrides before validation.
pub fn build_config(pairs: &[Pair]) -> Result<ParsedConfig, Vec<String>> {
    let mut b = Builder { map: pairs.iter().map(|p| (p.key.as_str(), p)).collect(), errors: Vec::new() };
    let mut warnings = Vec::new();

    let mut k = 0u64;
    match b.take("learner.K") {
        Some(p) => {
            if let Some(v) = b.parse::<u64>(p, "a positive integer") {
                if v == 0 {
                    b.errors.push("learner.K must be at least 1".to_string());
                }
                k = v;
            }
        }
        None => b.errors.push("learner.K is required".to_string()),
    }

    let c_b = b.take("learner.c_b").and_then(|p| b.parse::<f64>(p, "a number")).unwrap_or(2.0);
    let delta = b.take("learner.delta").and_then(|p| b.parse::<f64>(p, "a number")).unwrap_or(0.01);
    let mode = match b.take("learner.mode") {
        Some(p) => match Mode::parse(&p.value) {
            Ok(m) => m,
            Err(_) => {
                b.errors.push(format!(
                    "learner.mode must be `full` or `ucb_only`, got `{}` (line {})",
                    p.value, p.line
                ));
                Mode::Full
            }
        },
        None => Mode::Full,
    };
    let learner = LearnerConfig { c_b, delta, total_episodes: k, mode };
    if k > 0 {
        if let Err(e) = learner.check() {
            b.errors.push(format!("learner config rejected: {e}"));
        }
    }

    let game = build_game_source(&mut b);

    let checkpoints = match b.take("eval.checkpoints") {
        Some(p) => b.parse_list::<u64>(p, "episode numbers").map(|list| {
            if !list.windows(2).all(|w| w[0] < w[1]) {
                b.errors.push("eval.checkpoints must be strictly increasing".to_string());
            }
            if list.first().is_some_and(|&c| c < 1) || list.last().is_some_and(|&c| c > k) {
                b.errors.push(format!("eval.checkpoints must lie within [1, {k}]"));
            }
            if list.is_empty() {
                b.errors.push("eval.checkpoints must list at least one episode".to_string());
            }
            list
        }),
        None => None,
    };

    let slope_window = match b.take("eval.slope_window") {
        Some(p) => {
            let list = b.parse_list::<u64>(p, "episode numbers").unwrap_or_default();
            if list.len() == 2 && list[0] >= 1 && list[0] < list[1] {
                (list[0], list[1])
            } else {
                b.errors.push(format!(
                    "eval.slope_window must be two increasing episodes, got `{}` (line {})",
                    p.value, p.line
                ));
                (1000, 100_000)
            }
        }
        None => (1000, 100_000),
    };

    let seeds = match b.take("run.seeds") {
        Some(p) => {
            let raw = b.parse_list::<u64>(p, "64-bit integers").unwrap_or_default();
            if raw.is_empty() {
                b.errors.push("run.seeds must list at least one seed".to_string());
            }
            let mut seen = Vec::new();
            for s in raw {
                if seen.contains(&s) {
                    warnings.push(format!("duplicate seed {s} ignored"));
                } else {
                    seen.push(s);
                }
            }
            seen
        }
        None => {
            b.errors.push("run.seeds is required".to_string());
            Vec::new()
        }
    };

    let out_dir = b.take("run.out").map(|p| PathBuf::from(&p.value));
    let parallelism = match b.take("run.parallelism") {
        Some(p) => {
            let v = b.parse::<usize>(p, "a positive integer").unwrap_or(0);
            if v == 0 {
                b.errors.push("run.parallelism must be at least 1".to_string());
                1
            } else {
                v
            }
        }
        None => 1,
    };

    if !b.errors.is_empty() {
        return Err(b.errors);
    }
    Ok(ParsedConfig {
        config: ExperimentConfig {
            game: game.expect("game errors were collected above"),
            learner,
            checkpoints,
            slope_window,
            seeds,
            out_dir,
            parallelism,
        },
        warnings,
    })
}

fn build_game_source(b: &mut Builder) -> Option<GameSource> {
    let path = b.take("game.path").map(|p| PathBuf::from(&p.value));
    let generator_keys =
        ["game.seed", "game.states", "game.actions_max", "game.actions_min", "game.horizon"];
    let mut values = HashMap::new();
    for key in generator_keys {
        if let Some(p) = b.take(key) {
            if let Some(v) = b.parse::<u64>(p, "a positive integer") {
                values.insert(key, v);
            }
        }
    }
    let concentration =
        b.take("game.concentration").and_then(|p| b.parse::<f64>(p, "a number")).unwrap_or(1.0);

    match (path, values.is_empty()) {
        (Some(p), true) => Some(GameSource::Path(p)),
        (Some(_), false) => {
            b.errors
                .push("game.path and the game.* generator keys are mutually exclusive".to_string());
            None
        }
        (None, true) => {
            b.errors
                .push("missing game: set game.path or the game.* generator keys".to_string());
            None
        }
        (None, false) => {
            let missing: Vec<&str> = generator_keys
                .iter()
                .filter(|k| !values.contains_key(*k))
                .copied()
                .collect();
            if !missing.is_empty() {
                b.errors.push(format!("incomplete game generator: missing {}", missing.join(", ")));
                return None;
            }
            let dims = match Dims::new(
                values["game.states"] as usize,
                values["game.actions_max"] as usize,
                values["game.actions_min"] as usize,
                values["game.horizon"] as usize,
            ) {
                Ok(d) => d,
                Err(e) => {
                    b.errors.push(format!("game dimensions rejected: {e}"));
                    return None;
                }
            };
            Some(GameSource::Generated { seed: values["game.seed"], dims, concentration })
        }
    }
}

pub fn parse_config_text(text: &str) -> Result<ParsedConfig, Vec<String>> {
    build_config(&read_pairs(text)?)
}

pub fn parse_config(path: &Path) -> Result<ParsedConfig, Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("cannot read config {}: {e}", path.display())])?;
    parse_config_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
game.seed = 7
game.states = 2
game.actions_max = 2
game.actions_min = 2
game.horizon = 3
learner.K = 100
run.seeds = 1 2 3
";

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let parsed = parse_config_text(MINIMAL).unwrap();
        let c = parsed.config;
        assert_eq!(c.learner.c_b, 2.0);
        assert_eq!(c.learner.delta, 0.01);
        assert_eq!(c.learner.mode, Mode::Full);
        assert_eq!(c.learner.total_episodes, 100);
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert_eq!(c.parallelism, 1);
        assert_eq!(c.slope_window, (1000, 100_000));
        assert!(c.checkpoints.is_none());
        assert_eq!(c.checkpoint_schedule(), vec![1, 2, 4, 8, 16, 32, 64, 100]);
        assert!(parsed.warnings.is_empty());
        match c.game {
            GameSource::Generated { seed, dims, concentration } => {
                assert_eq!(seed, 7);
                assert_eq!(dims.num_states, 2);
                assert_eq!(concentration, 1.0);
            }
            other => panic!("unexpected game source {other:?}"),
        }
    }

    #[test]
    fn zero_episodes_names_the_offending_key() {
        let text = MINIMAL.replace("learner.K = 100", "learner.K = 0");
        let errors = parse_config_text(&text).unwrap_err();
        assert!(errors.iter().any(|e| e.contains("learner.K")), "{errors:?}");
    }

    #[test]
    fn duplicate_seeds_are_deduplicated_with_a_warning() {
        let text = MINIMAL.replace("run.seeds = 1 2 3", "run.seeds = 5 5 2");
        let parsed = parse_config_text(&text).unwrap();
        assert_eq!(parsed.config.seeds, vec![5, 2]);
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].contains("duplicate seed 5"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let text = format!("{MINIMAL}learner.cb = 3\n");
        let errors = parse_config_text(&text).unwrap_err();
        assert_eq!(errors.len(), 1);
        assert!(errors[0].contains("unknown key `learner.cb`"));
        assert!(errors[0].contains("line 8"));
    }

    #[test]
    fn all_findings_are_collected_not_just_the_first() {
        let text = "\
game.states = 2
learner.K = 0
run.seeds =
";
        let errors = parse_config_text(text).unwrap_err();
        assert!(errors.len() >= 3, "{errors:?}");
        assert!(errors.iter().any(|e| e.contains("learner.K")));
        assert!(errors.iter().any(|e| e.contains("run.seeds")));
        assert!(errors.iter().any(|e| e.contains("incomplete game generator")));
    }

    #[test]
    fn game_path_and_generator_are_mutually_exclusive() {
        let text = format!("{MINIMAL}game.path = some/game.txt\n");
        let errors = parse_config_text(&text).unwrap_err();
        assert!(errors.iter().any(|e| e.contains("mutually exclusive")), "{errors:?}");
    }

    #[test]
    fn checkpoints_must_increase_and_stay_in_range() {
        let ok = format!("{MINIMAL}eval.checkpoints = 1 10 100\n");
        let parsed = parse_config_text(&ok).unwrap();
        assert_eq!(parsed.config.checkpoint_schedule(), vec![1, 10, 100]);

        let out_of_range = format!("{MINIMAL}eval.checkpoints = 1 10 101\n");
        assert!(parse_config_text(&out_of_range).is_err());

        let not_increasing = format!("{MINIMAL}eval.checkpoints = 10 10\n");
        assert!(parse_config_text(&not_increasing).is_err());
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let text = format!("{MINIMAL}learner.K = 50\n");
        let errors = parse_config_text(&text).unwrap_err();
        assert!(errors[0].contains("duplicate key `learner.K`"), "{errors:?}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = format!("# experiment\n\n{MINIMAL}# trailing\n");
        assert!(parse_config_text(&text).is_ok());
    }

    #[test]
    fn default_schedule_is_doubling_plus_final() {
        assert_eq!(default_checkpoints(1), vec![1]);
        assert_eq!(default_checkpoints(2), vec![1, 2]);
        assert_eq!(default_checkpoints(9), vec![1, 2, 4, 8, 9]);
        assert_eq!(default_checkpoints(16), vec![1, 2, 4, 8, 16]);
    }
}
