//! The m-player general-sum extension of the two-player learner: one shared
//! visit counter and joint stage policy, a full optimistic/pessimistic table
//! family per player over the joint action space, and evaluation oracles for
//! coarse correlated equilibria (joint policy evaluation, unilateral best
//! responses against the opponents' marginal, and the resulting CCE gap).

use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::game::{MarkovGame, TABLE_ENTRY_BUDGET};
use crate::learner::{bonus_step, learning_rate, BonusCells, LearnerConfig, Mode};
use crate::linprog::{self, joint_strides, replace_digit};
use crate::rng::SplitMix64;
use crate::textio::{TextReader, TextWriter};

/// Probability rows must sum to 1 within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Shape of an m-player problem: per-player action counts plus the state
/// and horizon counts shared with the two-player case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiDims {
    pub action_counts: Vec<usize>,
    pub num_states: usize,
    pub horizon: usize,
}

impl MultiDims {
    pub fn new(action_counts: Vec<usize>, num_states: usize, horizon: usize) -> Result<Self> {
        let dims = MultiDims { action_counts, num_states, horizon };
        dims.check()?;
        Ok(dims)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.action_counts.len() < 2 {
            return Err(Error::invalid(format!(
                "need at least two players, got {}",
                self.action_counts.len()
            )));
        }
        if self.num_states == 0 || self.horizon == 0 {
            return Err(Error::invalid("num_states and horizon must be positive"));
        }
        if let Some(i) = self.action_counts.iter().position(|&a| a == 0) {
            return Err(Error::invalid(format!("player {i} has no actions")));
        }
        let joint = self.action_counts.iter().map(|&a| a as u128).product::<u128>();
        let cells = joint * self.num_states as u128 * self.horizon as u128;
        let budget = TABLE_ENTRY_BUDGET as u128;
        if cells > budget {
            return Err(Error::Capacity(format!(
                "joint tables need {cells} entries, budget is {TABLE_ENTRY_BUDGET}"
            )));
        }
        if cells * self.num_states as u128 > budget {
            return Err(Error::Capacity(format!(
                "transition table needs {} entries, budget is {TABLE_ENTRY_BUDGET}",
                cells * self.num_states as u128
            )));
        }
        if cells * self.action_counts.len() as u128 > budget {
            return Err(Error::Capacity(format!(
                "per-player tables need {} entries, budget is {TABLE_ENTRY_BUDGET}",
                cells * self.action_counts.len() as u128
            )));
        }
        Ok(())
    }

    pub fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    pub fn joint_actions(&self) -> usize {
        self.action_counts.iter().product()
    }

    /// Entries in one shared (h,s,joint-action) table.
    pub fn cell_count(&self) -> usize {
        self.num_states * self.horizon * self.joint_actions()
    }

    pub fn pair_count(&self) -> usize {
        self.num_states * self.horizon
    }

    #[inline]
    pub fn idx(&self, h: usize, s: usize, ja: usize) -> usize {
        (h * self.num_states + s) * self.joint_actions() + ja
    }

    /// Player-major index into per-player joint-action tables.
    #[inline]
    pub fn pidx(&self, i: usize, h: usize, s: usize, ja: usize) -> usize {
        i * self.cell_count() + self.idx(h, s, ja)
    }

    /// Value-table index; level h ranges over 0..=horizon, the last level
    /// being the all-zero terminal.
    #[inline]
    pub fn vidx(&self, h: usize, s: usize) -> usize {
        h * self.num_states + s
    }

    #[inline]
    pub fn pvidx(&self, i: usize, h: usize, s: usize) -> usize {
        i * (self.horizon + 1) * self.num_states + self.vidx(h, s)
    }

    /// Index of player i's settlement flag for (h,s).
    #[inline]
    pub fn flag(&self, i: usize, h: usize, s: usize) -> usize {
        (i * self.horizon + h) * self.num_states + s
    }

    pub fn check_step_indices(&self, h: usize, s: usize, ja: usize) -> Result<()> {
        if h >= self.horizon || s >= self.num_states || ja >= self.joint_actions() {
            return Err(Error::IndexOutOfRange(format!(
                "(h={h}, s={s}, ja={ja}) outside {:?}",
                self
            )));
        }
        Ok(())
    }
}

/// An m-player general-sum Markov game over a shared joint action space.
/// Rewards are per player in [0,1]; dynamics are common to all players.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralSumGame {
    pub dims: MultiDims,
    /// Player-major rewards, indexed by [`MultiDims::pidx`].
    pub rewards: Vec<f64>,
    /// Rows of length `num_states`, row base `MultiDims::idx * num_states`.
    pub transitions: Vec<f64>,
    pub initial_state: usize,
}

impl GeneralSumGame {
    pub fn new(
        dims: MultiDims,
        rewards: Vec<f64>,
        transitions: Vec<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        dims.check()?;
        let cells = dims.cell_count();
        if rewards.len() != cells * dims.num_players() {
            return Err(Error::invalid(format!(
                "reward table needs {} entries, got {}",
                cells * dims.num_players(),
                rewards.len()
            )));
        }
        if transitions.len() != cells * dims.num_states {
            return Err(Error::invalid(format!(
                "transition table needs {} entries, got {}",
                cells * dims.num_states,
                transitions.len()
            )));
        }
        let game = GeneralSumGame { dims, rewards, transitions, initial_state };
        let findings = game.validate();
        if !findings.is_empty() {
            let shown = findings.iter().take(3).cloned().collect::<Vec<_>>().join("; ");
            return Err(Error::invalid(format!(
                "{} validation findings, first: {shown}",
                findings.len()
            )));
        }
        Ok(game)
    }

    /// All invariant violations as readable findings; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let d = &self.dims;
        let mut out = Vec::new();
        if self.initial_state >= d.num_states {
            out.push(format!(
                "initial state {} outside 0..{}",
                self.initial_state, d.num_states
            ));
        }
        for (i, &r) in self.rewards.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) || !r.is_finite() {
                out.push(format!("reward {r} at flat index {i} outside [0,1]"));
            }
        }
        for (row_idx, row) in self.transitions.chunks(d.num_states).enumerate() {
            let mut sum = 0.0;
            for (s_next, &p) in row.iter().enumerate() {
                if !(p >= 0.0) || !p.is_finite() {
                    out.push(format!("negative probability {p} in row {row_idx}, column {s_next}"));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                out.push(format!("transition row {row_idx} sums to {sum}"));
            }
        }
        out
    }

    #[inline]
    pub fn reward(&self, i: usize, h: usize, s: usize, ja: usize) -> f64 {
        self.rewards[self.dims.pidx(i, h, s, ja)]
    }

    #[inline]
    pub fn transition_row(&self, h: usize, s: usize, ja: usize) -> &[f64] {
        let base = self.dims.idx(h, s, ja) * self.dims.num_states;
        &self.transitions[base..base + self.dims.num_states]
    }

    pub fn sample_transition(
        &self,
        h: usize,
        s: usize,
        ja: usize,
        rng: &mut SplitMix64,
    ) -> Result<usize> {
        self.dims.check_step_indices(h, s, ja)?;
        rng.sample_weighted(self.transition_row(h, s, ja))
            .ok_or_else(|| Error::internal(format!("transition row (h={h}, s={s}) has no mass")))
    }

    /// Embeds a two-player zero-sum game: player 0 keeps the row rewards,
    /// player 1 receives 1 - r, and the joint action a*B + b preserves the
    /// two-player cell layout.
    pub fn from_zero_sum(game: &MarkovGame) -> Self {
        let d = game.dims;
        let dims = MultiDims {
            action_counts: vec![d.num_actions_max, d.num_actions_min],
            num_states: d.num_states,
            horizon: d.horizon,
        };
        let mut rewards = Vec::with_capacity(2 * game.rewards.len());
        rewards.extend_from_slice(&game.rewards);
        rewards.extend(game.rewards.iter().map(|r| 1.0 - r));
        GeneralSumGame {
            dims,
            rewards,
            transitions: game.transitions.clone(),
            initial_state: game.initial_state,
        }
    }

    pub fn to_text(&self) -> String {
        let d = &self.dims;
        let mut w = TextWriter::new("general-sum-game");
        w.int("num_players", d.num_players() as u64);
        w.int("num_states", d.num_states as u64);
        w.int("horizon", d.horizon as u64);
        w.int("initial_state", self.initial_state as u64);
        let counts: Vec<u64> = d.action_counts.iter().map(|&a| a as u64).collect();
        w.ints("action_counts", &counts);
        w.floats("rewards", &self.rewards);
        w.floats("transitions", &self.transitions);
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = TextReader::open(text, "general-sum-game")?;
        let num_players = r.int_usize("num_players")?;
        let num_states = r.int_usize("num_states")?;
        let horizon = r.int_usize("horizon")?;
        let initial_state = r.int_usize("initial_state")?;
        let counts = r.ints("action_counts", num_players)?;
        let dims = MultiDims::new(
            counts.into_iter().map(|c| c as usize).collect(),
            num_states,
            horizon,
        )?;
        let cells = dims.cell_count();
        let rewards = r.floats("rewards", cells * dims.num_players())?;
        let transitions = r.floats("transitions", cells * num_states)?;
        r.finish()?;
        GeneralSumGame::new(dims, rewards, transitions, initial_state)
    }
}

/// Deterministically generates a random m-player instance: per-player
/// rewards uniform on [0,1], transition rows symmetric Dirichlet draws,
/// initial state 0.
pub fn generate_random_multi(
    seed: u64,
    dims: MultiDims,
    concentration: f64,
) -> Result<GeneralSumGame> {
    dims.check()?;
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(Error::invalid(format!("concentration must be positive, got {concentration}")));
    }
    let mut rng = SplitMix64::new(seed);
    let cells = dims.cell_count();
    let mut rewards = Vec::with_capacity(cells * dims.num_players());
    for _ in 0..cells * dims.num_players() {
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
            row.fill(1.0 / dims.num_states as f64);
        }
    }
    GeneralSumGame::new(dims, rewards, transitions, 0)
}

/// Learner state for the m-player algorithm: the two-player table family
/// replicated per player over the joint action space, sharing one visit
/// counter and one joint stage policy. Memory is O(m * S * H * prod A_i).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLearnerState {
    pub dims: MultiDims,
    pub config: LearnerConfig,
    pub episode: u64,

    /// Shared visit counts, indexed by [`MultiDims::idx`].
    pub n_visits: Vec<u64>,

    /// Per-player tables, indexed by [`MultiDims::pidx`].
    pub q_upper: Vec<f64>,
    pub q_lower: Vec<f64>,
    pub q_ucb: Vec<f64>,
    pub q_lcb: Vec<f64>,
    pub q_upper_ref: Vec<f64>,
    pub q_lower_ref: Vec<f64>,
    pub phi_r_upper: Vec<f64>,
    pub psi_r_upper: Vec<f64>,
    pub phi_a_upper: Vec<f64>,
    pub psi_a_upper: Vec<f64>,
    pub phi_r_lower: Vec<f64>,
    pub psi_r_lower: Vec<f64>,
    pub phi_a_lower: Vec<f64>,
    pub psi_a_lower: Vec<f64>,
    pub b_ref_upper: Vec<f64>,
    pub b_ref_lower: Vec<f64>,
    pub varphi_upper: Vec<f64>,
    pub varphi_lower: Vec<f64>,

    /// Per-player value tables, indexed by [`MultiDims::pvidx`]; the
    /// terminal level stays zero.
    pub v_upper: Vec<f64>,
    pub v_lower: Vec<f64>,
    pub v_upper_ref: Vec<f64>,
    pub v_lower_ref: Vec<f64>,

    /// Per-player settlement flags, indexed by [`MultiDims::flag`]; flip
    /// True -> False at most once.
    pub u_r: Vec<bool>,

    /// Shared joint stage policy, indexed by [`MultiDims::idx`].
    pub pi: Vec<f64>,

    pub clamp_total: f64,
    pub clamp_events: u64,

    /// ln(S * prod A_i * T / delta), cached from the config.
    log_term: f64,
}

impl MultiLearnerState {
    pub fn init(dims: MultiDims, config: LearnerConfig) -> Result<Self> {
        dims.check()?;
        config.check()?;
        if config.mode != Mode::Full {
            return Err(Error::invalid(
                "the reference-free mode is only defined for the two-player learner",
            ));
        }
        let m = dims.num_players();
        let cells = dims.cell_count();
        let per_player = cells * m;
        let levels = (dims.horizon + 1) * dims.num_states;
        let h = dims.horizon as f64;
        let t = config.total_episodes.saturating_mul(dims.horizon as u64);
        let log_term =
            ((dims.num_states * dims.joint_actions()) as f64 * t as f64 / config.delta).ln();

        let mut v_upper = vec![h; levels * m];
        let mut v_upper_ref = vec![h; levels * m];
        for i in 0..m {
            for s in 0..dims.num_states {
                v_upper[dims.pvidx(i, dims.horizon, s)] = 0.0;
                v_upper_ref[dims.pvidx(i, dims.horizon, s)] = 0.0;
            }
        }
        Ok(MultiLearnerState {
            n_visits: vec![0; cells],
            q_upper: vec![h; per_player],
            q_lower: vec![0.0; per_player],
            q_ucb: vec![h; per_player],
            q_lcb: vec![0.0; per_player],
            q_upper_ref: vec![h; per_player],
            q_lower_ref: vec![0.0; per_player],
            phi_r_upper: vec![0.0; per_player],
            psi_r_upper: vec![0.0; per_player],
            phi_a_upper: vec![0.0; per_player],
            psi_a_upper: vec![0.0; per_player],
            phi_r_lower: vec![0.0; per_player],
            psi_r_lower: vec![0.0; per_player],
            phi_a_lower: vec![0.0; per_player],
            psi_a_lower: vec![0.0; per_player],
            b_ref_upper: vec![0.0; per_player],
            b_ref_lower: vec![0.0; per_player],
            varphi_upper: vec![0.0; per_player],
            varphi_lower: vec![0.0; per_player],
            v_upper,
            v_lower: vec![0.0; levels * m],
            v_upper_ref,
            v_lower_ref: vec![0.0; levels * m],
            u_r: vec![true; dims.pair_count() * m],
            pi: vec![1.0 / dims.joint_actions() as f64; cells],
            clamp_total: 0.0,
            clamp_events: 0,
            episode: 0,
            log_term,
            dims,
            config,
        })
    }

    #[inline]
    pub fn pi_at(&self, h: usize, s: usize) -> &[f64] {
        let base = self.dims.idx(h, s, 0);
        &self.pi[base..base + self.dims.joint_actions()]
    }

    pub fn value_gap(&self, i: usize, h: usize, s: usize) -> f64 {
        let vi = self.dims.pvidx(i, h, s);
        self.v_upper[vi] - self.v_lower[vi]
    }

    /// Fraction of (player, h, s) triples whose references have settled.
    pub fn settled_fraction(&self) -> f64 {
        let settled = self.u_r.iter().filter(|&&f| !f).count();
        settled as f64 / self.u_r.len() as f64
    }

    pub fn to_text(&self) -> String {
        let d = &self.dims;
        let mut w = TextWriter::new("multi-learner-checkpoint");
        w.float("c_b", self.config.c_b);
        w.float("delta", self.config.delta);
        w.int("total_episodes", self.config.total_episodes);
        w.word("mode", self.config.mode.as_str());
        w.int("num_players", d.num_players() as u64);
        w.int("num_states", d.num_states as u64);
        w.int("horizon", d.horizon as u64);
        w.int("episode", self.episode);
        w.float("clamp_total", self.clamp_total);
        w.int("clamp_events", self.clamp_events);
        let counts: Vec<u64> = d.action_counts.iter().map(|&a| a as u64).collect();
        w.ints("action_counts", &counts);
        w.ints("n_visits", &self.n_visits);
        w.floats("q_upper", &self.q_upper);
        w.floats("q_lower", &self.q_lower);
        w.floats("q_ucb", &self.q_ucb);
        w.floats("q_lcb", &self.q_lcb);
        w.floats("q_upper_ref", &self.q_upper_ref);
        w.floats("q_lower_ref", &self.q_lower_ref);
        w.floats("phi_r_upper", &self.phi_r_upper);
        w.floats("psi_r_upper", &self.psi_r_upper);
        w.floats("phi_a_upper", &self.phi_a_upper);
        w.floats("psi_a_upper", &self.psi_a_upper);
        w.floats("phi_r_lower", &self.phi_r_lower);
        w.floats("psi_r_lower", &self.psi_r_lower);
        w.floats("phi_a_lower", &self.phi_a_lower);
        w.floats("psi_a_lower", &self.psi_a_lower);
        w.floats("b_ref_upper", &self.b_ref_upper);
        w.floats("b_ref_lower", &self.b_ref_lower);
        w.floats("varphi_upper", &self.varphi_upper);
        w.floats("varphi_lower", &self.varphi_lower);
        w.floats("v_upper", &self.v_upper);
        w.floats("v_lower", &self.v_lower);
        w.floats("v_upper_ref", &self.v_upper_ref);
        w.floats("v_lower_ref", &self.v_lower_ref);
        let flags: Vec<u64> = self.u_r.iter().map(|&f| f as u64).collect();
        w.ints("u_r", &flags);
        w.floats("pi", &self.pi);
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = TextReader::open(text, "multi-learner-checkpoint")?;
        let c_b = r.float("c_b")?;
        let delta = r.float("delta")?;
        let total_episodes = r.int("total_episodes")?;
        let mode = Mode::parse(&r.word("mode")?)?;
        let num_players = r.int_usize("num_players")?;
        let num_states = r.int_usize("num_states")?;
        let horizon = r.int_usize("horizon")?;
        let episode = r.int("episode")?;
        let clamp_total = r.float("clamp_total")?;
        let clamp_events = r.int("clamp_events")?;
        let counts = r.ints("action_counts", num_players)?;
        let dims = MultiDims::new(
            counts.into_iter().map(|c| c as usize).collect(),
            num_states,
            horizon,
        )?;
        let config = LearnerConfig { c_b, delta, total_episodes, mode };
        let mut state = MultiLearnerState::init(dims.clone(), config)?;
        state.episode = episode;
        state.clamp_total = clamp_total;
        state.clamp_events = clamp_events;
        let m = dims.num_players();
        let cells = dims.cell_count();
        let per_player = cells * m;
        let levels = (dims.horizon + 1) * dims.num_states * m;
        state.n_visits = r.ints("n_visits", cells)?;
        state.q_upper = r.floats("q_upper", per_player)?;
        state.q_lower = r.floats("q_lower", per_player)?;
        state.q_ucb = r.floats("q_ucb", per_player)?;
        state.q_lcb = r.floats("q_lcb", per_player)?;
        state.q_upper_ref = r.floats("q_upper_ref", per_player)?;
        state.q_lower_ref = r.floats("q_lower_ref", per_player)?;
        state.phi_r_upper = r.floats("phi_r_upper", per_player)?;
        state.psi_r_upper = r.floats("psi_r_upper", per_player)?;
        state.phi_a_upper = r.floats("phi_a_upper", per_player)?;
        state.psi_a_upper = r.floats("psi_a_upper", per_player)?;
        state.phi_r_lower = r.floats("phi_r_lower", per_player)?;
        state.psi_r_lower = r.floats("psi_r_lower", per_player)?;
        state.phi_a_lower = r.floats("phi_a_lower", per_player)?;
        state.psi_a_lower = r.floats("psi_a_lower", per_player)?;
        state.b_ref_upper = r.floats("b_ref_upper", per_player)?;
        state.b_ref_lower = r.floats("b_ref_lower", per_player)?;
        state.varphi_upper = r.floats("varphi_upper", per_player)?;
        state.varphi_lower = r.floats("varphi_lower", per_player)?;
        state.v_upper = r.floats("v_upper", levels)?;
        state.v_lower = r.floats("v_lower", levels)?;
        state.v_upper_ref = r.floats("v_upper_ref", levels)?;
        state.v_lower_ref = r.floats("v_lower_ref", levels)?;
        let flags = r.ints("u_r", dims.pair_count() * m)?;
        state.u_r = flags
            .into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::invalid(format!("u_r entry must be 0 or 1, got {other}"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        state.pi = r.floats("pi", cells)?;
        r.finish()?;
        Ok(state)
    }
}

/// Samples a joint action from the shared stage policy at (h,s).
pub fn sample_joint(state: &MultiLearnerState, h: usize, s: usize, rng: &mut SplitMix64) -> usize {
    rng.sample_weighted(state.pi_at(h, s)).expect("stage policy must have positive mass")
}

/// Full per-visit update at one (h,s,joint-action) cell: every player runs
/// the estimate refresh and monotone combine; the joint policy is
/// recomputed only when every player's gate holds; per-player value updates
/// and settlement always run, in player order.
pub fn step_update_multi(
    state: &mut MultiLearnerState,
    game: &GeneralSumGame,
    h: usize,
    s: usize,
    ja: usize,
    next_state: usize,
) -> Result<()> {
    let m = state.dims.num_players();
    let joint = state.dims.joint_actions();
    let horizon = state.dims.horizon;
    let c_b = state.config.c_b;
    let log_term = state.log_term;

    let ci = state.dims.idx(h, s, ja);
    state.n_visits[ci] += 1;
    let n = state.n_visits[ci];
    let eta = learning_rate(n, horizon);
    let iota = c_b * ((horizon as f64).powi(3) * log_term / n as f64).sqrt();

    let mut all_gates = true;
    for i in 0..m {
        let reward = game.reward(i, h, s, ja);
        let qi = state.dims.pidx(i, h, s, ja);
        let vn = state.dims.pvidx(i, h + 1, next_state);

        state.q_ucb[qi] = (1.0 - eta) * state.q_ucb[qi] + eta * (reward + state.v_upper[vn] + iota);
        state.q_lcb[qi] = (1.0 - eta) * state.q_lcb[qi] + eta * (reward + state.v_lower[vn] - iota);

        let (v_next, v_ref_next) = (state.v_upper[vn], state.v_upper_ref[vn]);
        let cells = BonusCells {
            phi_r: &mut state.phi_r_upper[qi],
            psi_r: &mut state.psi_r_upper[qi],
            phi_a: &mut state.phi_a_upper[qi],
            psi_a: &mut state.psi_a_upper[qi],
            b_ref: &mut state.b_ref_upper[qi],
            varphi: &mut state.varphi_upper[qi],
        };
        let (phi_r, bonus, clamped) =
            bonus_step(cells, v_next, v_ref_next, n, horizon, c_b, log_term);
        if clamped > 0.0 {
            state.clamp_total += clamped;
            state.clamp_events += 1;
        }
        let target = reward + v_next - v_ref_next + phi_r + bonus;
        state.q_upper_ref[qi] = (1.0 - eta) * state.q_upper_ref[qi] + eta * target;

        let (v_next, v_ref_next) = (state.v_lower[vn], state.v_lower_ref[vn]);
        let cells = BonusCells {
            phi_r: &mut state.phi_r_lower[qi],
            psi_r: &mut state.psi_r_lower[qi],
            phi_a: &mut state.phi_a_lower[qi],
            psi_a: &mut state.psi_a_lower[qi],
            b_ref: &mut state.b_ref_lower[qi],
            varphi: &mut state.varphi_lower[qi],
        };
        let (phi_r, bonus, clamped) =
            bonus_step(cells, v_next, v_ref_next, n, horizon, c_b, log_term);
        if clamped > 0.0 {
            state.clamp_total += clamped;
            state.clamp_events += 1;
        }
        let target = reward + v_next - v_ref_next + phi_r - bonus;
        state.q_lower_ref[qi] = (1.0 - eta) * state.q_lower_ref[qi] + eta * target;

        let fresh_upper = state.q_upper_ref[qi].min(state.q_ucb[qi]);
        let fresh_lower = state.q_lower_ref[qi].max(state.q_lcb[qi]);
        let prev_upper = state.q_upper[qi];
        let prev_lower = state.q_lower[qi];
        state.q_upper[qi] = fresh_upper.min(prev_upper);
        state.q_lower[qi] = fresh_lower.max(prev_lower);
        all_gates &= fresh_upper <= prev_upper && fresh_lower >= prev_lower;
    }

    if all_gates {
        let probs = {
            let mut uppers: Vec<&[f64]> = Vec::with_capacity(m);
            let mut lowers: Vec<&[f64]> = Vec::with_capacity(m);
            for i in 0..m {
                let qb = state.dims.pidx(i, h, s, 0);
                uppers.push(&state.q_upper[qb..qb + joint]);
                lowers.push(&state.q_lower[qb..qb + joint]);
            }
            linprog::compute_cce_multi(&state.dims.action_counts, &uppers, &lowers).map_err(
                |e| {
                    Error::Solver(format!(
                        "stage policy at (k={}, h={h}, s={s}): {e}",
                        state.episode + 1
                    ))
                },
            )?
        };
        let base = state.dims.idx(h, s, 0);
        state.pi[base..base + joint].copy_from_slice(&probs);
    }

    let base = state.dims.idx(h, s, 0);
    for i in 0..m {
        let qb = state.dims.pidx(i, h, s, 0);
        let mut expect_upper = 0.0;
        let mut expect_lower = 0.0;
        for u in 0..joint {
            let p = state.pi[base + u];
            expect_upper += p * state.q_upper[qb + u];
            expect_lower += p * state.q_lower[qb + u];
        }
        let vi = state.dims.pvidx(i, h, s);
        state.v_upper[vi] = expect_upper.min(state.v_upper[vi]);
        state.v_lower[vi] = expect_lower.max(state.v_lower[vi]);

        let gap = state.v_upper[vi] - state.v_lower[vi];
        let flag = state.dims.flag(i, h, s);
        if gap > 1.0 {
            state.v_upper_ref[vi] = state.v_upper[vi];
            state.v_lower_ref[vi] = state.v_lower[vi];
        } else if state.u_r[flag] {
            state.v_upper_ref[vi] = state.v_upper[vi];
            state.v_lower_ref[vi] = state.v_lower[vi];
            state.u_r[flag] = false;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStepRecord {
    pub h: usize,
    pub state: usize,
    pub joint_action: usize,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiEpisodeRecord {
    pub steps: Vec<MultiStepRecord>,
    /// Per-player (V_upper - V_lower) at the initial state after this
    /// episode's updates.
    pub value_gaps_s1: Vec<f64>,
}

/// Plays one self-play episode of the m-player learner.
pub fn run_episode_multi(
    state: &mut MultiLearnerState,
    game: &GeneralSumGame,
    rng: &mut SplitMix64,
) -> Result<MultiEpisodeRecord> {
    if game.dims != state.dims {
        return Err(Error::invalid(format!(
            "game dims {:?} do not match learner dims {:?}",
            game.dims, state.dims
        )));
    }
    let horizon = state.dims.horizon;
    let mut s = game.initial_state;
    let mut steps = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let ja = sample_joint(state, h, s, rng);
        let next_state = game.sample_transition(h, s, ja, rng)?;
        step_update_multi(state, game, h, s, ja, next_state)?;
        steps.push(MultiStepRecord { h, state: s, joint_action: ja, next_state });
        s = next_state;
    }
    state.episode += 1;
    let value_gaps_s1 = (0..state.dims.num_players())
        .map(|i| state.value_gap(i, 0, game.initial_state))
        .collect();
    Ok(MultiEpisodeRecord { steps, value_gaps_s1 })
}

/// A correlated Markov policy: one joint-action distribution per (h,s).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedPolicy {
    pub action_counts: Vec<usize>,
    pub num_states: usize,
    pub horizon: usize,
    /// Indexed `(h * num_states + s) * prod A_i + ja`.
    pub probs: Vec<f64>,
}

impl CorrelatedPolicy {
    pub fn uniform(dims: &MultiDims) -> Self {
        let joint = dims.joint_actions();
        CorrelatedPolicy {
            action_counts: dims.action_counts.clone(),
            num_states: dims.num_states,
            horizon: dims.horizon,
            probs: vec![1.0 / joint as f64; dims.pair_count() * joint],
        }
    }

    pub fn joint_actions(&self) -> usize {
        self.action_counts.iter().product()
    }

    #[inline]
    pub fn at(&self, h: usize, s: usize) -> &[f64] {
        let joint = self.joint_actions();
        let base = (h * self.num_states + s) * joint;
        &self.probs[base..base + joint]
    }

    pub fn check_matches(&self, dims: &MultiDims) -> Result<()> {
        if self.action_counts != dims.action_counts
            || self.num_states != dims.num_states
            || self.horizon != dims.horizon
            || self.probs.len() != dims.pair_count() * dims.joint_actions()
        {
            return Err(Error::invalid("policy shape does not match game dims"));
        }
        Ok(())
    }
}

/// Copies the learner's joint stage policies into a standalone policy.
pub fn extract_correlated(state: &MultiLearnerState) -> CorrelatedPolicy {
    CorrelatedPolicy {
        action_counts: state.dims.action_counts.clone(),
        num_states: state.dims.num_states,
        horizon: state.dims.horizon,
        probs: state.pi.clone(),
    }
}

/// Joint policy evaluation: every player's value of following the
/// correlated policy, per player a table over (h,s) with the terminal
/// level zero, indexed by [`MultiDims::vidx`].
pub fn policy_values(game: &GeneralSumGame, pi: &CorrelatedPolicy) -> Result<Vec<Vec<f64>>> {
    pi.check_matches(&game.dims)?;
    let d = &game.dims;
    let joint = d.joint_actions();
    let levels = (d.horizon + 1) * d.num_states;
    let mut values = vec![vec![0.0; levels]; d.num_players()];
    for i in 0..d.num_players() {
        for h in (0..d.horizon).rev() {
            for s in 0..d.num_states {
                let stage = pi.at(h, s);
                let mut acc = 0.0;
                for (ja, &p) in stage.iter().enumerate().take(joint) {
                    if p == 0.0 {
                        continue;
                    }
                    let mut q = game.reward(i, h, s, ja);
                    let row = game.transition_row(h, s, ja);
                    for (s_next, &pr) in row.iter().enumerate() {
                        q += pr * values[i][d.vidx(h + 1, s_next)];
                    }
                    acc += p * q;
                }
                values[i][d.vidx(h, s)] = acc;
            }
        }
    }
    Ok(values)
}

/// Player i's best response against the opponents' marginal of the
/// correlated policy: a backward induction over player i's induced MDP,
/// where at each (h,s) the deviation payoff of action a'_i averages the
/// joint policy with player i's coordinate replaced. Returns the value at
/// the initial state.
pub fn best_response_value_i(
    game: &GeneralSumGame,
    pi: &CorrelatedPolicy,
    player: usize,
) -> Result<f64> {
    pi.check_matches(&game.dims)?;
    let d = &game.dims;
    if player >= d.num_players() {
        return Err(Error::invalid(format!(
            "player {player} outside 0..{}",
            d.num_players()
        )));
    }
    let strides = joint_strides(&d.action_counts);
    let own_actions = d.action_counts[player];
    let joint = d.joint_actions();
    let mut next = vec![0.0; d.num_states];
    for h in (0..d.horizon).rev() {
        let mut cur = vec![0.0; d.num_states];
        for s in 0..d.num_states {
            let stage = pi.at(h, s);
            let mut deviation = vec![0.0; own_actions];
            for (ja, &p) in stage.iter().enumerate().take(joint) {
                if p == 0.0 {
                    continue;
                }
                for (dev, slot) in deviation.iter_mut().enumerate() {
                    let target = replace_digit(ja, strides[player], own_actions, dev);
                    let mut q = game.reward(player, h, s, target);
                    let row = game.transition_row(h, s, target);
                    for (s_next, &pr) in row.iter().enumerate() {
                        q += pr * next[s_next];
                    }
                    *slot += p * q;
                }
            }
            cur[s] = deviation.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        }
        next = cur;
    }
    Ok(next[game.initial_state])
}

/// Largest unilateral improvement any player gains by abandoning the
/// correlated policy: max_i (best response_i - V_i^pi) at the initial
/// state. Rounding noise in [-1e-9, 0) is clamped to zero.
pub fn cce_gap(game: &GeneralSumGame, pi: &CorrelatedPolicy) -> Result<f64> {
    let values = policy_values(game, pi)?;
    let d = &game.dims;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..d.num_players() {
        let br = best_response_value_i(game, pi, i)?;
        worst = worst.max(br - values[i][d.vidx(0, game.initial_state)]);
    }
    if worst < 0.0 && worst >= -1e-9 {
        Ok(0.0)
    } else {
        Ok(worst)
    }
}
