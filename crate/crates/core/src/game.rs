//! Tabular two-player zero-sum Markov games: the model, random instance
//! generation, dynamics sampling, and exact solution oracles (Nash values
//! via backward induction, best responses, Nash gap).
//!
//! Conventions used throughout the crate: states, actions, and steps are
//! 0-based; step indices run over `0..horizon`. Value tables carry one extra
//! terminal level pinned to zero, so `v[(horizon, s)]` is always 0 and
//! backward recursions need no special casing.

use crate::error::{Error, Result};
use crate::linprog;
use crate::rng::SplitMix64;
use crate::textio::{TextReader, TextWriter};
use rand_distr::{Distribution, Gamma};

/// Per-table entry budget. The transition kernel is the largest table a
/// game stores, and learner state is smaller by a factor of S, so one limit
/// guards every allocation in the crate.
pub const TABLE_ENTRY_BUDGET: usize = 10_000_000;

/// Table dimensions of a two-player game: S states, A max-player actions,
/// B min-player actions, H steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub num_states: usize,
    pub num_actions_max: usize,
    pub num_actions_min: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn new(
        num_states: usize,
        num_actions_max: usize,
        num_actions_min: usize,
        horizon: usize,
    ) -> Result<Self> {
        let dims = Dims { num_states, num_actions_max, num_actions_min, horizon };
        dims.check()?;
        Ok(dims)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.num_states == 0
            || self.num_actions_max == 0
            || self.num_actions_min == 0
            || self.horizon == 0
        {
            return Err(Error::invalid("dimensions must be positive"));
        }
        let cells = (self.num_states as u128)
            * (self.num_actions_max as u128)
            * (self.num_actions_min as u128)
            * (self.horizon as u128);
        if cells * self.num_states as u128 > TABLE_ENTRY_BUDGET as u128 {
            return Err(Error::Capacity(format!(
                "transition table needs {} entries, budget is {TABLE_ENTRY_BUDGET}",
                cells * self.num_states as u128
            )));
        }
        Ok(())
    }

    /// Entries in one (h,s,a,b)-indexed table.
    pub fn cell_count(&self) -> usize {
        self.num_states * self.num_actions_max * self.num_actions_min * self.horizon
    }

    /// Entries in one (h,s)-indexed table over the H in-horizon levels.
    pub fn pair_count(&self) -> usize {
        self.horizon * self.num_states
    }

    /// Joint actions per stage game.
    pub fn joint_actions(&self) -> usize {
        self.num_actions_max * self.num_actions_min
    }

    /// Row-major index into (h,s,a,b) tables.
    #[inline]
    pub fn idx(&self, h: usize, s: usize, a: usize, b: usize) -> usize {
        ((h * self.num_states + s) * self.num_actions_max + a) * self.num_actions_min + b
    }

    /// Index into (h,s) value tables with the extra terminal level; `h` may
    /// equal `horizon`.
    #[inline]
    pub fn vidx(&self, h: usize, s: usize) -> usize {
        h * self.num_states + s
    }

    fn check_step_indices(&self, h: usize, s: usize, a: usize, b: usize) -> Result<()> {
        if h >= self.horizon || s >= self.num_states || a >= self.num_actions_max || b >= self.num_actions_min
        {
            return Err(Error::IndexOutOfRange(format!(
                "(h={h}, s={s}, a={a}, b={b}) outside {self:?}"
            )));
        }
        Ok(())
    }
}

/// Immutable finite-horizon two-player zero-sum Markov game. The max player
/// picks `a`, the min player picks `b`; rewards in [0,1] accrue to the max
/// player and are deterministic per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame {
    pub dims: Dims,
    /// Rewards, indexed by [`Dims::idx`].
    pub rewards: Vec<f64>,
    /// Transition kernel, indexed by `idx(h,s,a,b) * S + next_state`.
    pub transitions: Vec<f64>,
    pub initial_state: usize,
}

/// One invariant violation found by [`MarkovGame::validate`]; violations are
/// data, not failures, so malformed instances can be reported in full.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TransitionRowSum { h: usize, s: usize, a: usize, b: usize, sum: f64 },
    TransitionNegative { h: usize, s: usize, a: usize, b: usize, next_state: usize, value: f64 },
    RewardOutOfRange { h: usize, s: usize, a: usize, b: usize, value: f64 },
    InitialStateOutOfRange { initial_state: usize, num_states: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::TransitionRowSum { h, s, a, b, sum } => {
                write!(f, "transition row (h={h}, s={s}, a={a}, b={b}) sums to {sum}")
            }
            Violation::TransitionNegative { h, s, a, b, next_state, value } => write!(
                f,
                "transition (h={h}, s={s}, a={a}, b={b}, s'={next_state}) is negative: {value}"
            ),
            Violation::RewardOutOfRange { h, s, a, b, value } => {
                write!(f, "reward (h={h}, s={s}, a={a}, b={b}) outside [0,1]: {value}")
            }
            Violation::InitialStateOutOfRange { initial_state, num_states } => {
                write!(f, "initial state {initial_state} outside 0..{num_states}")
            }
        }
    }
}

const PROB_SUM_TOL: f64 = 1e-12;

impl MarkovGame {
    pub fn new(
        dims: Dims,
        rewards: Vec<f64>,
        transitions: Vec<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        dims.check()?;
        if rewards.len() != dims.cell_count() {
            return Err(Error::invalid(format!(
                "rewards table has {} entries, dims require {}",
                rewards.len(),
                dims.cell_count()
            )));
        }
        if transitions.len() != dims.cell_count() * dims.num_states {
            return Err(Error::invalid(format!(
                "transition table has {} entries, dims require {}",
                transitions.len(),
                dims.cell_count() * dims.num_states
            )));
        }
        Ok(MarkovGame { dims, rewards, transitions, initial_state })
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize, b: usize) -> f64 {
        self.rewards[self.dims.idx(h, s, a, b)]
    }

    /// Probability row over next states for one cell.
    #[inline]
    pub fn transition_row(&self, h: usize, s: usize, a: usize, b: usize) -> &[f64] {
        let base = self.dims.idx(h, s, a, b) * self.dims.num_states;
        &self.transitions[base..base + self.dims.num_states]
    }

    /// Checks every model invariant and returns all violations found; an
    /// empty list certifies the instance.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let d = &self.dims;
        if self.initial_state >= d.num_states {
            out.push(Violation::InitialStateOutOfRange {
                initial_state: self.initial_state,
                num_states: d.num_states,
            });
        }
        for h in 0..d.horizon {
            for s in 0..d.num_states {
                for a in 0..d.num_actions_max {
                    for b in 0..d.num_actions_min {
                        let r = self.reward(h, s, a, b);
                        if !(0.0..=1.0).contains(&r) || !r.is_finite() {
                            out.push(Violation::RewardOutOfRange { h, s, a, b, value: r });
                        }
                        let row = self.transition_row(h, s, a, b);
                        let mut sum = 0.0;
                        for (next_state, &p) in row.iter().enumerate() {
                            if p < 0.0 || !p.is_finite() {
                                out.push(Violation::TransitionNegative {
                                    h,
                                    s,
                                    a,
                                    b,
                                    next_state,
                                    value: p,
                                });
                            }
                            sum += p;
                        }
                        if (sum - 1.0).abs() > PROB_SUM_TOL {
                            out.push(Violation::TransitionRowSum { h, s, a, b, sum });
                        }
                    }
                }
            }
        }
        out
    }

    /// Validates and converts any violations into an error naming the first
    /// few, for call sites that need a hard gate rather than a report.
    pub fn check_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            return Ok(());
        }
        let shown: Vec<String> = violations.iter().take(3).map(|v| v.to_string()).collect();
        Err(Error::invalid(format!(
            "game fails validation with {} violation(s): {}",
            violations.len(),
            shown.join("; ")
        )))
    }

    /// Samples a next state from the stored transition row and returns it
    /// with the (deterministic) reward.
    pub fn sample_transition(
        &self,
        h: usize,
        s: usize,
        a: usize,
        b: usize,
        rng: &mut SplitMix64,
    ) -> Result<(usize, f64)> {
        self.dims.check_step_indices(h, s, a, b)?;
        let row = self.transition_row(h, s, a, b);
        let next = rng
            .sample_weighted(row)
            .ok_or_else(|| Error::invalid(format!("transition row (h={h}, s={s}, a={a}, b={b}) has zero mass")))?;
        Ok((next, self.reward(h, s, a, b)))
    }

    /// Serializes to the fixed-width structured text format.
    pub fn to_text(&self) -> String {
        let mut w = TextWriter::new("markov-game");
        w.int("num_states", self.dims.num_states as u64);
        w.int("num_actions_max", self.dims.num_actions_max as u64);
        w.int("num_actions_min", self.dims.num_actions_min as u64);
        w.int("horizon", self.dims.horizon as u64);
        w.int("initial_state", self.initial_state as u64);
        w.floats("rewards", &self.rewards);
        w.floats("transitions", &self.transitions);
        w.finish()
    }

    /// Parses the text format. Structural problems (bad header, wrong table
    /// lengths) are parse errors; semantic problems are left to `validate`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = TextReader::open(text, "markov-game")?;
        let num_states = r.int_usize("num_states")?;
        let num_actions_max = r.int_usize("num_actions_max")?;
        let num_actions_min = r.int_usize("num_actions_min")?;
        let horizon = r.int_usize("horizon")?;
        let initial_state = r.int_usize("initial_state")?;
        let dims = Dims::new(num_states, num_actions_max, num_actions_min, horizon)?;
        let rewards = r.floats("rewards", dims.cell_count())?;
        let transitions = r.floats("transitions", dims.cell_count() * num_states)?;
        r.finish()?;
        MarkovGame::new(dims, rewards, transitions, initial_state)
    }
}

/// Deterministically generates a random instance: rewards uniform on [0,1],
/// each transition row a symmetric Dirichlet draw whose concentration
/// parameter moves the dynamics from near-deterministic (small values) to
/// diffuse (large values). The initial state is 0.
pub fn generate_random(seed: u64, dims: Dims, concentration: f64) -> Result<MarkovGame> {
    dims.check()?;
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(Error::invalid(format!("concentration must be positive, got {concentration}")));
    }
    let mut rng = SplitMix64::new(seed);
    let cells = dims.cell_count();
    let mut rewards = Vec::with_capacity(cells);
    for _ in 0..cells {
        rewards.push(rng.next_f64());
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::invalid(format!("bad concentration {concentration}: {e}")))?;
    let mut transitions = vec![0.0; cells * dims.num_states];
    for row in transitions.chunks_mut(dims.num_states) {
        let mut sum = 0.0;
        for slot in row.iter_mut() {
            let g = gamma.sample(&mut rng);
            *slot = g;
            sum += g;
        }
        if sum > 0.0 {
            for slot in row.iter_mut() {
                *slot /= sum;
            }
        } else {
            // All Gamma draws underflowed to zero (possible for tiny
            // concentrations); fall back to a uniform row.
            row.fill(1.0 / dims.num_states as f64);
        }
    }
    MarkovGame::new(dims, rewards, transitions, 0)
}

/// One side's Markov policy: a distribution over that side's actions at
/// every (h,s).
#[derive(Debug, Clone, PartialEq)]
pub struct SidePolicy {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// Indexed `(h * num_states + s) * num_actions + action`.
    pub probs: Vec<f64>,
}

impl SidePolicy {
    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        SidePolicy { horizon, num_states, num_actions, probs: vec![p; horizon * num_states * num_actions] }
    }

    /// Point mass on one action everywhere.
    pub fn pure(horizon: usize, num_states: usize, num_actions: usize, action: usize) -> Self {
        let mut probs = vec![0.0; horizon * num_states * num_actions];
        for hs in 0..horizon * num_states {
            probs[hs * num_actions + action] = 1.0;
        }
        SidePolicy { horizon, num_states, num_actions, probs }
    }

    #[inline]
    pub fn at(&self, h: usize, s: usize) -> &[f64] {
        let base = (h * self.num_states + s) * self.num_actions;
        &self.probs[base..base + self.num_actions]
    }

    fn check_shape(&self, horizon: usize, num_states: usize, num_actions: usize) -> Result<()> {
        if self.horizon != horizon || self.num_states != num_states || self.num_actions != num_actions
        {
            return Err(Error::invalid(format!(
                "policy shaped (H={}, S={}, actions={}) does not match game (H={horizon}, S={num_states}, actions={num_actions})",
                self.horizon, self.num_states, self.num_actions
            )));
        }
        if self.probs.len() != horizon * num_states * num_actions {
            return Err(Error::invalid("policy table length does not match its dimensions"));
        }
        Ok(())
    }
}

/// Which player a one-sided computation concerns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Max,
    Min,
}

/// Exact equilibrium solution from backward induction: state values, stage
/// action values, and the equilibrium mixed strategies at every (h,s).
#[derive(Debug, Clone)]
pub struct ExactSolution {
    /// Indexed by [`Dims::vidx`]; terminal level is zero.
    pub v_star: Vec<f64>,
    /// Indexed by [`Dims::idx`].
    pub q_star: Vec<f64>,
    pub nash_row_strategy: SidePolicy,
    pub nash_col_strategy: SidePolicy,
}

/// Solves the game exactly by backward induction, calling the minimax LP on
/// each stage matrix: q*(h,s,a,b) = r + P·v*(h+1), v*(h,s) = value of the
/// stage matrix q*(h,s,·,·).
pub fn nash_values(game: &MarkovGame) -> Result<ExactSolution> {
    let d = game.dims;
    let mut v_star = vec![0.0; (d.horizon + 1) * d.num_states];
    let mut q_star = vec![0.0; d.cell_count()];
    let mut row_strategy =
        SidePolicy { horizon: d.horizon, num_states: d.num_states, num_actions: d.num_actions_max, probs: vec![0.0; d.pair_count() * d.num_actions_max] };
    let mut col_strategy =
        SidePolicy { horizon: d.horizon, num_states: d.num_states, num_actions: d.num_actions_min, probs: vec![0.0; d.pair_count() * d.num_actions_min] };

    let mut stage = vec![0.0; d.joint_actions()];
    for h in (0..d.horizon).rev() {
        for s in 0..d.num_states {
            for a in 0..d.num_actions_max {
                for b in 0..d.num_actions_min {
                    let row = game.transition_row(h, s, a, b);
                    let mut cont = 0.0;
                    for (next, &p) in row.iter().enumerate() {
                        cont += p * v_star[d.vidx(h + 1, next)];
                    }
                    let q = game.reward(h, s, a, b) + cont;
                    q_star[d.idx(h, s, a, b)] = q;
                    stage[a * d.num_actions_min + b] = q;
                }
            }
            let sol = linprog::matrix_game_value(&stage, d.num_actions_max, d.num_actions_min)
                .map_err(|e| Error::Solver(format!("stage game at (h={h}, s={s}): {e}")))?;
            v_star[d.vidx(h, s)] = sol.value;
            let rbase = (h * d.num_states + s) * d.num_actions_max;
            row_strategy.probs[rbase..rbase + d.num_actions_max].copy_from_slice(&sol.row_strategy);
            let cbase = (h * d.num_states + s) * d.num_actions_min;
            col_strategy.probs[cbase..cbase + d.num_actions_min].copy_from_slice(&sol.col_strategy);
        }
    }
    Ok(ExactSolution { v_star, q_star, nash_row_strategy: row_strategy, nash_col_strategy: col_strategy })
}

/// Value of the best response against a fixed opponent policy, computed by
/// plain dynamic programming (no LPs). For `side = Max` the opponent is the
/// min player's policy and the result is V^{max-BR, opponent}; symmetric for
/// `side = Min`. Returned table is (h,s)-indexed with a zero terminal level.
pub fn best_response_values(
    game: &MarkovGame,
    opponent: &SidePolicy,
    side: Side,
) -> Result<Vec<f64>> {
    let d = game.dims;
    match side {
        Side::Max => opponent.check_shape(d.horizon, d.num_states, d.num_actions_min)?,
        Side::Min => opponent.check_shape(d.horizon, d.num_states, d.num_actions_max)?,
    }
    let mut v = vec![0.0; (d.horizon + 1) * d.num_states];
    for h in (0..d.horizon).rev() {
        for s in 0..d.num_states {
            let opp = opponent.at(h, s);
            let mut best = match side {
                Side::Max => f64::NEG_INFINITY,
                Side::Min => f64::INFINITY,
            };
            let own_actions = match side {
                Side::Max => d.num_actions_max,
                Side::Min => d.num_actions_min,
            };
            for own in 0..own_actions {
                let mut q = 0.0;
                for (other, &w) in opp.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let (a, b) = match side {
                        Side::Max => (own, other),
                        Side::Min => (other, own),
                    };
                    let row = game.transition_row(h, s, a, b);
                    let mut cont = 0.0;
                    for (next, &p) in row.iter().enumerate() {
                        cont += p * v[d.vidx(h + 1, next)];
                    }
                    q += w * (game.reward(h, s, a, b) + cont);
                }
                best = match side {
                    Side::Max => best.max(q),
                    Side::Min => best.min(q),
                };
            }
            v[d.vidx(h, s)] = best;
        }
    }
    Ok(v)
}

/// Nash gap of a policy pair at the initial state: the max player's best
/// response against `nu` minus the min player's best response against `mu`.
/// Mathematically nonnegative; sub-1e-9 negative noise is clamped to zero.
pub fn nash_gap(game: &MarkovGame, mu: &SidePolicy, nu: &SidePolicy) -> Result<f64> {
    let d = game.dims;
    let best_vs_nu = best_response_values(game, nu, Side::Max)?;
    let best_vs_mu = best_response_values(game, mu, Side::Min)?;
    let s1 = game.initial_state;
    let gap = best_vs_nu[d.vidx(0, s1)] - best_vs_mu[d.vidx(0, s1)];
    if gap < 0.0 && gap >= -1e-9 {
        Ok(0.0)
    } else {
        Ok(gap)
    }
}
