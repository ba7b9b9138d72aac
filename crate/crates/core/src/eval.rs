//! Metrics and theory oracles: weighted learning-rate sequences and their
//! bound checks, per-run metric series with the canonical CSV schema, regret
//! proxies and log-log slope fits, the optimism/pessimism sandwich checker,
//! and a support-enumeration matrix-game solver kept deliberately independent
//! of the simplex path in [`crate::linprog`].

use crate::error::{Error, Result};
use crate::game::ExactSolution;
use crate::learner::{learning_rate, LearnerState};

/// Slack admitted when checking the learning-rate bounds; the bounds are
/// exact in real arithmetic, so anything beyond rounding noise is a defect.
pub const LR_SLACK: f64 = 1e-10;

/// Tolerance for the sandwich comparison against exact equilibrium values.
pub const SANDWICH_TOL: f64 = 1e-9;

/// Weight of the n-th update in the N-step weighted average induced by the
/// learning rate: eta_n * prod_{i=n+1}^{N} (1 - eta_i) for 1 <= n <= N,
/// eta_n itself at n = N, and 0 for n > N. The n = 0 row carries the
/// initialization: 1 when nothing was ever averaged (N = 0), otherwise 0.
pub fn eta_weight(n: usize, n_total: usize, horizon: usize) -> f64 {
    if n == 0 {
        return if n_total == 0 { 1.0 } else { 0.0 };
    }
    if n > n_total {
        return 0.0;
    }
    let mut prod = 1.0;
    for i in (n + 1)..=n_total {
        prod *= 1.0 - learning_rate(i as u64, horizon);
    }
    learning_rate(n as u64, horizon) * prod
}

/// All weights for a fixed N in one backward sweep, index n in 0..=N.
/// Agrees with [`eta_weight`] pointwise but costs O(N) instead of O(N^2).
pub fn eta_row(n_total: usize, horizon: usize) -> Vec<f64> {
    let mut row = vec![0.0; n_total + 1];
    if n_total == 0 {
        row[0] = 1.0;
        return row;
    }
    let mut prod = 1.0;
    for n in (1..=n_total).rev() {
        let eta = learning_rate(n as u64, horizon);
        row[n] = eta * prod;
        prod *= 1.0 - eta;
    }
    row
}

/// Tightest observed slack of one bound, with the (H, N) pair or the
/// (H, n) pair for the tail property where it was attained. Negative
/// margins beyond [`LR_SLACK`] are violations.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyMargin {
    pub horizon: usize,
    pub property: &'static str,
    /// N for the per-row bounds, n for the tail partial sums.
    pub at: usize,
    pub margin: f64,
}

/// Outcome of sweeping the learning-rate bounds over a grid of horizons.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningRateReport {
    pub n_max: usize,
    /// One entry per (horizon, property): the smallest margin seen.
    pub tightest: Vec<PropertyMargin>,
    /// Margins below -[`LR_SLACK`], empty when every bound holds.
    pub violations: Vec<PropertyMargin>,
    /// Largest |sum_{n=1..N} weight - 1| over the sweep.
    pub max_sum_deviation: f64,
}

impl LearningRateReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verifies, for every horizon in `h_set` and every N up to `n_max`:
/// the weighted sums of n^{-1/2} and n^{-1} lie in [N^{-a}, 2 N^{-a}],
/// the largest weight and the sum of squared weights are at most 2H/N,
/// and the tail partial sums over N of the weight at fixed n stay below
/// 1 + 1/H. The tail bound is stated for the infinite sum; partial sums
/// are increasing in the cutoff, so checking them against the same bound
/// is sound.
pub fn check_learning_rate_properties(h_set: &[usize], n_max: usize) -> Result<LearningRateReport> {
    if h_set.is_empty() {
        return Err(Error::invalid("empty horizon set"));
    }
    if n_max < 1 {
        return Err(Error::invalid("n_max must be at least 1"));
    }
    if let Some(&h) = h_set.iter().find(|&&h| h == 0) {
        return Err(Error::invalid(format!("horizon must be positive, got {h}")));
    }

    let mut tightest: Vec<PropertyMargin> = Vec::new();
    let mut max_sum_deviation = 0.0f64;
    for &h in h_set {
        // (property name, smallest margin so far, N or n attaining it)
        let mut worst: [(&'static str, f64, usize); 7] = [
            ("sum_inv_sqrt_lower", f64::INFINITY, 0),
            ("sum_inv_sqrt_upper", f64::INFINITY, 0),
            ("sum_inv_lower", f64::INFINITY, 0),
            ("sum_inv_upper", f64::INFINITY, 0),
            ("max_weight", f64::INFINITY, 0),
            ("sum_squares", f64::INFINITY, 0),
            ("tail_sum", f64::INFINITY, 0),
        ];
        let observe = |slot: usize, margin: f64, at: usize, worst: &mut [(&'static str, f64, usize); 7]| {
            if margin < worst[slot].1 {
                worst[slot].1 = margin;
                worst[slot].2 = at;
            }
        };
        let mut tail = vec![0.0f64; n_max + 1];
        for n_total in 1..=n_max {
            let row = eta_row(n_total, h);
            let mut sum = 0.0;
            let mut sum_inv_sqrt = 0.0;
            let mut sum_inv = 0.0;
            let mut sum_sq = 0.0;
            let mut max_w = 0.0f64;
            for n in 1..=n_total {
                let w = row[n];
                sum += w;
                sum_inv_sqrt += w / (n as f64).sqrt();
                sum_inv += w / n as f64;
                sum_sq += w * w;
                max_w = max_w.max(w);
                tail[n] += w;
            }
            max_sum_deviation = max_sum_deviation.max((sum - 1.0).abs());
            let nf = n_total as f64;
            let cap = 2.0 * h as f64 / nf;
            observe(0, sum_inv_sqrt - 1.0 / nf.sqrt(), n_total, &mut worst);
            observe(1, 2.0 / nf.sqrt() - sum_inv_sqrt, n_total, &mut worst);
            observe(2, sum_inv - 1.0 / nf, n_total, &mut worst);
            observe(3, 2.0 / nf - sum_inv, n_total, &mut worst);
            observe(4, cap - max_w, n_total, &mut worst);
            observe(5, cap - sum_sq, n_total, &mut worst);
        }
        let tail_cap = 1.0 + 1.0 / h as f64;
        for n in 1..=n_max {
            observe(6, tail_cap - tail[n], n, &mut worst);
        }
        for (property, margin, at) in worst {
            tightest.push(PropertyMargin { horizon: h, property, at, margin });
        }
    }
    let violations = tightest.iter().filter(|m| m.margin < -LR_SLACK).cloned().collect();
    Ok(LearningRateReport { n_max, tightest, violations, max_sum_deviation })
}

/// Exact CSV header for per-run metrics.
pub const METRICS_CSV_HEADER: &str =
    "episode,samples,value_gap_s1,cum_value_gap,nash_gap,settled_fraction";

/// One per-episode metrics record. `nash_gap` is populated only on
/// checkpoint episodes where the marginals were scored against the exact
/// solution; elsewhere the CSV cell stays empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub episode: u64,
    pub samples: u64,
    pub value_gap_s1: f64,
    pub cum_value_gap: f64,
    pub nash_gap: Option<f64>,
    pub settled_fraction: f64,
}

/// Append-only metric series for one (config, seed) run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
}

impl RunMetrics {
    pub fn new() -> Self {
        Self { rows: Vec::new() }
    }

    /// Appends the record for `episode`, deriving the sample count and the
    /// running cumulative gap from the previous row.
    pub fn push(
        &mut self,
        episode: u64,
        horizon: usize,
        value_gap_s1: f64,
        nash_gap: Option<f64>,
        settled_fraction: f64,
    ) {
        let cum = self.rows.last().map_or(0.0, |r| r.cum_value_gap) + value_gap_s1;
        self.rows.push(MetricsRow {
            episode,
            samples: episode * horizon as u64,
            value_gap_s1,
            cum_value_gap: cum,
            nash_gap,
            settled_fraction,
        });
    }

    /// Renders the canonical CSV. Floats use the shortest representation
    /// that parses back to the same bits, so files are reproducible and
    /// [`RunMetrics::from_csv`] is an exact inverse.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(METRICS_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let gap = r.nash_gap.map_or(String::new(), |g| format!("{g}"));
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.episode, r.samples, r.value_gap_s1, r.cum_value_gap, gap, r.settled_fraction
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, head)) if head == METRICS_CSV_HEADER => {}
            Some((_, head)) => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header {METRICS_CSV_HEADER:?}, got {head:?}"),
                })
            }
            None => return Err(Error::Parse { line: 1, message: "empty metrics file".into() }),
        }
        let mut rows = Vec::new();
        for (idx, raw) in lines {
            let line = idx + 1;
            let fields: Vec<&str> = raw.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 6 fields, got {}", fields.len()),
                });
            }
            let bad = |what: &str| Error::Parse { line, message: format!("bad {what} field") };
            let nash_gap = if fields[4].is_empty() {
                None
            } else {
                Some(fields[4].parse::<f64>().map_err(|_| bad("nash_gap"))?)
            };
            rows.push(MetricsRow {
                episode: fields[0].parse().map_err(|_| bad("episode"))?,
                samples: fields[1].parse().map_err(|_| bad("samples"))?,
                value_gap_s1: fields[2].parse().map_err(|_| bad("value_gap_s1"))?,
                cum_value_gap: fields[3].parse().map_err(|_| bad("cum_value_gap"))?,
                nash_gap,
                settled_fraction: fields[5].parse().map_err(|_| bad("settled_fraction"))?,
            });
        }
        Ok(Self { rows })
    }

    /// Monotonicity defects in the series, as human-readable findings.
    /// Episodes must increase, the per-episode gap must never grow, and the
    /// cumulative gap and settled fraction must never shrink.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        for w in self.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.episode <= a.episode {
                out.push(format!("episode {} does not increase after {}", b.episode, a.episode));
            }
            if b.value_gap_s1 > a.value_gap_s1 {
                out.push(format!(
                    "value_gap_s1 rose from {} to {} at episode {}",
                    a.value_gap_s1, b.value_gap_s1, b.episode
                ));
            }
            if b.cum_value_gap < a.cum_value_gap {
                out.push(format!("cum_value_gap fell at episode {}", b.episode));
            }
            if b.settled_fraction < a.settled_fraction {
                out.push(format!("settled_fraction fell at episode {}", b.episode));
            }
        }
        out
    }
}

/// Cumulative sum of the per-episode value gaps, the regret proxy that
/// upper-bounds the true regret of the executed policies.
pub fn regret_curve(metrics: &RunMetrics) -> Result<Vec<f64>> {
    if metrics.rows.is_empty() {
        return Err(Error::invalid("empty metrics"));
    }
    let mut out = Vec::with_capacity(metrics.rows.len());
    let mut acc = 0.0;
    for r in &metrics.rows {
        acc += r.value_gap_s1;
        out.push(acc);
    }
    Ok(out)
}

/// Least-squares slope of ln(series[k-1]) against ln(k) for k in
/// [k_min, k_max]. Series values on the window must be strictly positive.
pub fn loglog_slope(series: &[f64], k_min: usize, k_max: usize) -> Result<f64> {
    if k_min < 1 || k_max <= k_min {
        return Err(Error::invalid(format!("bad window [{k_min}, {k_max}]")));
    }
    if k_max > series.len() {
        return Err(Error::invalid(format!(
            "window end {k_max} exceeds series length {}",
            series.len()
        )));
    }
    let mut xs = Vec::with_capacity(k_max - k_min + 1);
    let mut ys = Vec::with_capacity(k_max - k_min + 1);
    for k in k_min..=k_max {
        let v = series[k - 1];
        if !(v > 0.0) {
            return Err(Error::invalid(format!("non-positive series value {v} at k={k}")));
        }
        xs.push((k as f64).ln());
        ys.push(v.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    Ok(sxy / sxx)
}

/// Counts of cells where the maintained optimistic/pessimistic tables fail
/// to bracket the exact equilibrium values, with the worst excess on each
/// table family. `worst_q`/`worst_v` report the largest raw excess even
/// when it stays inside [`SANDWICH_TOL`], so a clean run shows how much
/// headroom remained.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub q_violations: usize,
    pub v_violations: usize,
    pub worst_q: f64,
    pub worst_v: f64,
    pub cells_checked: usize,
}

impl SandwichReport {
    pub fn total_violations(&self) -> usize {
        self.q_violations + self.v_violations
    }
}

/// Checks Q_lower <= Q* <= Q_upper and V_lower <= V* <= V_upper at every
/// in-horizon cell, with [`SANDWICH_TOL`] of slack.
pub fn sandwich_check(state: &LearnerState, oracle: &ExactSolution) -> Result<SandwichReport> {
    let d = state.dims;
    if oracle.q_star.len() != state.q_upper.len() || oracle.v_star.len() != state.v_upper.len() {
        return Err(Error::invalid("oracle dims do not match learner state"));
    }
    let mut report = SandwichReport {
        q_violations: 0,
        v_violations: 0,
        worst_q: 0.0,
        worst_v: 0.0,
        cells_checked: 0,
    };
    for i in 0..oracle.q_star.len() {
        let excess = (state.q_lower[i] - oracle.q_star[i]).max(oracle.q_star[i] - state.q_upper[i]);
        report.worst_q = report.worst_q.max(excess);
        if excess > SANDWICH_TOL {
            report.q_violations += 1;
        }
        report.cells_checked += 1;
    }
    for h in 0..d.horizon {
        for s in 0..d.num_states {
            let i = d.vidx(h, s);
            let excess =
                (state.v_lower[i] - oracle.v_star[i]).max(oracle.v_star[i] - state.v_upper[i]);
            report.worst_v = report.worst_v.max(excess);
            if excess > SANDWICH_TOL {
                report.v_violations += 1;
            }
            report.cells_checked += 1;
        }
    }
    Ok(report)
}

/// Largest distances between the running value estimates and their frozen
/// reference copies, one per side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceCloseness {
    pub upper: f64,
    pub lower: f64,
}

pub fn reference_closeness(state: &LearnerState) -> ReferenceCloseness {
    let d = state.dims;
    let mut upper = 0.0f64;
    let mut lower = 0.0f64;
    for h in 0..d.horizon {
        for s in 0..d.num_states {
            let i = d.vidx(h, s);
            upper = upper.max((state.v_upper[i] - state.v_upper_ref[i]).abs());
            lower = lower.max((state.v_lower[i] - state.v_lower_ref[i]).abs());
        }
    }
    ReferenceCloseness { upper, lower }
}

/// Solves `matrix * x = rhs` by Gaussian elimination with partial pivoting,
/// consuming both. Returns None when the system is numerically singular.
pub fn gaussian_solve(mut matrix: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = matrix.len();
    if n == 0 || rhs.len() != n || matrix.iter().any(|row| row.len() != n) {
        return None;
    }
    let scale = matrix
        .iter()
        .flatten()
        .fold(1.0f64, |m, &v| m.max(v.abs()));
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&a, &b| matrix[a][col].abs().total_cmp(&matrix[b][col].abs()))
            .unwrap();
        if matrix[pivot_row][col].abs() <= 1e-12 * scale {
            return None;
        }
        matrix.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for row in (col + 1)..n {
            let factor = matrix[row][col] / matrix[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                matrix[row][k] -= factor * matrix[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..n {
            acc -= matrix[row][k] * x[k];
        }
        x[row] = acc / matrix[row][row];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            rec(i + 1, n, k, current, out);
            current.pop();
        }
    }
    rec(0, n, k, &mut current, &mut out);
    out
}

/// Value of the zero-sum matrix game (row maximizes) by enumerating square
/// support pairs: every matrix game has an equilibrium whose supports have
/// equal size, so for each candidate pair the mixed strategies solve a
/// small linear system and are then verified against all pure deviations.
/// Shares no code with the simplex solver, which makes it a fair oracle.
pub fn matrix_game_value_by_supports(entries: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if rows == 0 || cols == 0 || entries.len() != rows * cols {
        return Err(Error::invalid("bad matrix shape"));
    }
    let at = |i: usize, j: usize| entries[i * cols + j];
    let tol = 1e-9;
    for k in 1..=rows.min(cols) {
        for row_support in combinations(rows, k) {
            'cols: for col_support in combinations(cols, k) {
                // Unknowns (p_i for i in support, v): row mix equalizes the
                // payoff v across the columns of the support and sums to 1.
                let mut m = vec![vec![0.0; k + 1]; k + 1];
                let mut b = vec![0.0; k + 1];
                for (eq, &j) in col_support.iter().enumerate() {
                    for (t, &i) in row_support.iter().enumerate() {
                        m[eq][t] = at(i, j);
                    }
                    m[eq][k] = -1.0;
                }
                m[k][..k].fill(1.0);
                b[k] = 1.0;
                let Some(p) = gaussian_solve(m, b) else { continue };
                let v = p[k];
                if p[..k].iter().any(|&x| x < -tol) {
                    continue;
                }
                // Same system transposed for the column mix.
                let mut m = vec![vec![0.0; k + 1]; k + 1];
                let mut b = vec![0.0; k + 1];
                for (eq, &i) in row_support.iter().enumerate() {
                    for (t, &j) in col_support.iter().enumerate() {
                        m[eq][t] = at(i, j);
                    }
                    m[eq][k] = -1.0;
                }
                m[k][..k].fill(1.0);
                b[k] = 1.0;
                let Some(q) = gaussian_solve(m, b) else { continue };
                if q[..k].iter().any(|&x| x < -tol) || (q[k] - v).abs() > 1e-8 {
                    continue;
                }
                // Certificates: the row mix guarantees at least v against
                // every column, the column mix concedes at most v.
                for j in 0..cols {
                    let payoff: f64 =
                        row_support.iter().enumerate().map(|(t, &i)| p[t] * at(i, j)).sum();
                    if payoff < v - tol {
                        continue 'cols;
                    }
                }
                for i in 0..rows {
                    let payoff: f64 =
                        col_support.iter().enumerate().map(|(t, &j)| q[t] * at(i, j)).sum();
                    if payoff > v + tol {
                        continue 'cols;
                    }
                }
                return Ok(v);
            }
        }
    }
    Err(Error::Solver("no support pair yields a verified equilibrium".into()))
}
