//! Dense linear programming and one-shot equilibrium subroutines.
//!
//! The solver is a two-phase primal simplex on a dense tableau with Bland's
//! anti-cycling pivot rule. It is written for the small programs this crate
//! produces (matrix games and correlated-equilibrium selection over a
//! handful of actions); there is no sparsity handling. A fast floating-point
//! pass runs first: rows are equilibrated to a power-of-two scale, and the
//! tableau is refactorized from the original rows after every pivot so each
//! decision sees entries accurate to the basis conditioning. Its result is
//! kept only when it is an optimum satisfying the original constraints;
//! infeasible and unbounded reports, drifted solutions, and budget blowups
//! are all settled by a second pass over arbitrary-precision rationals.
//! The correlated-equilibrium programs pair each deviation row with its
//! exact negation on a disjoint column block, which makes some bases
//! exactly singular; near convergence the float tableau cannot tell those
//! from conditioned ones, so verdicts other than a verified optimum cannot
//! be trusted without exact arithmetic. Determinism is absolute: the same
//! program yields the same pivot sequence and the same solution bytes on
//! every call.
//!
//! Set the `NASHQ_LP_DUMP` environment variable to dump every program to
//! stderr in a plain-text tableau format before it is solved.

use crate::error::{Error, Result};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    LessEq,
    Equal,
    GreaterEq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Per-variable interval; either end may be infinite. Default is `[0, +inf)`.
#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { lower: 0.0, upper: f64::INFINITY }
    }
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<Bounds>,
}

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram { sense, objective, constraints: Vec::new(), bounds: vec![Bounds::default(); n] }
    }

    pub fn subject_to(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.bounds[var] = Bounds { lower, upper };
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.objective.len();
        if n == 0 {
            return Err(Error::invalid("linear program has no variables"));
        }
        if self.bounds.len() != n {
            return Err(Error::invalid(format!(
                "bounds length {} does not match {} variables",
                self.bounds.len(),
                n
            )));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(Error::invalid(format!(
                    "constraint {i} has {} coefficients, expected {n}",
                    c.coeffs.len()
                )));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("constraint {i} contains a non-finite value")));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("objective contains a non-finite value"));
        }
        Ok(())
    }

    /// Plain-text rendering of the program, one constraint per line.
    pub fn tableau_text(&self) -> String {
        let mut out = String::new();
        let sense = match self.sense {
            Sense::Minimize => "minimize",
            Sense::Maximize => "maximize",
        };
        out.push_str(sense);
        out.push_str("  ");
        for (j, c) in self.objective.iter().enumerate() {
            out.push_str(&format!("{c:+.6}*x{j} "));
        }
        out.push('\n');
        for c in &self.constraints {
            out.push_str("  ");
            for (j, a) in c.coeffs.iter().enumerate() {
                out.push_str(&format!("{a:+.6}*x{j} "));
            }
            let rel = match c.relation {
                Relation::LessEq => "<=",
                Relation::Equal => "==",
                Relation::GreaterEq => ">=",
            };
            out.push_str(&format!("{rel} {:+.6}\n", c.rhs));
        }
        for (j, b) in self.bounds.iter().enumerate() {
            out.push_str(&format!("  x{j} in [{}, {}]\n", b.lower, b.upper));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    /// Unwraps the optimal solution, mapping the other outcomes to an
    /// internal-consistency error. For callers whose programs are feasible
    /// and bounded by construction.
    pub fn expect_optimal(self, what: &str) -> Result<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Ok(s),
            LpOutcome::Infeasible => Err(Error::internal(format!("{what}: lp reported infeasible"))),
            LpOutcome::Unbounded => Err(Error::internal(format!("{what}: lp reported unbounded"))),
        }
    }
}

const COST_EPS: f64 = 1e-9;
const PIVOT_EPS: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-7;
// Refactorizations allowed per phase before the current verdict stands.
const REFRESH_LIMIT: usize = 3;
// Tightest feasibility the float pass must deliver to be believed; chosen
// below the strictest residual any caller checks downstream.
const FLOAT_TRUST_TOL: f64 = 1e-10;

fn dump_enabled() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| std::env::var_os("NASHQ_LP_DUMP").is_some())
}

/// How each original variable was rewritten into nonnegative columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = lower + x'` with `x' >= 0`; column `col`.
    Shift { col: usize, lower: f64 },
    /// `x = upper - x'` with `x' >= 0`; column `col` (coefficients negated).
    Negate { col: usize, upper: f64 },
    /// Free variable split `x = x+ - x-`; columns `pos`, `neg`.
    Split { pos: usize, neg: usize },
}

/// Which objective the reduced-cost row tracks, so it can be rebuilt from
/// scratch after a refactorization.
enum CostKind<'a> {
    /// Phase 1: the sum of artificial variables.
    SumOfArtificials { first_artificial: usize },
    /// Phase 2: the standardized objective (zero on slack columns).
    Standard { std_obj: &'a [f64], std_cols: usize },
}

struct Tableau {
    rows: Vec<Vec<f64>>, // m rows, each total_cols + 1 wide (rhs last)
    cost: Vec<f64>,      // reduced-cost row, same width; last cell = -objective
    basis: Vec<usize>,
}

impl Tableau {
    fn width(&self) -> usize {
        self.cost.len()
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width();
        let inv = 1.0 / self.rows[row][col];
        for j in 0..w {
            self.rows[row][j] *= inv;
        }
        self.rows[row][col] = 1.0; // exact, avoids drift on the pivot cell
        for i in 0..self.rows.len() {
            if i != row {
                let factor = self.rows[i][col];
                if factor != 0.0 {
                    for j in 0..w {
                        self.rows[i][j] -= factor * self.rows[row][j];
                    }
                    self.rows[i][col] = 0.0;
                }
            }
        }
        let factor = self.cost[col];
        if factor != 0.0 {
            for j in 0..w {
                self.cost[j] -= factor * self.rows[row][j];
            }
            self.cost[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Rebuilds the rows from the pristine standardized data against the
    /// current basis with a fresh Gauss-Jordan elimination, discarding the
    /// rounding drift accumulated along the pivot path. Requires one
    /// pristine row per tableau row; returns false (leaving the tableau
    /// untouched) when the shapes differ or the basis matrix is numerically
    /// singular. The cost row is not rebuilt here.
    fn refresh_from(&mut self, pristine: &[Vec<f64>]) -> bool {
        let m = self.rows.len();
        if pristine.len() != m || (m > 0 && pristine[0].len() != self.width()) {
            return false;
        }
        let mut work = pristine.to_vec();
        let w = self.width();
        for k in 0..m {
            let col = self.basis[k];
            let mut best = k;
            for r in k + 1..m {
                if work[r][col].abs() > work[best][col].abs() {
                    best = r;
                }
            }
            if work[best][col].abs() <= PIVOT_EPS {
                return false;
            }
            work.swap(k, best);
            let inv = 1.0 / work[k][col];
            for j in 0..w {
                work[k][j] *= inv;
            }
            work[k][col] = 1.0;
            let pivot_row = work[k].clone();
            for (r, row) in work.iter_mut().enumerate() {
                if r == k {
                    continue;
                }
                let factor = row[col];
                if factor != 0.0 {
                    for j in 0..w {
                        row[j] -= factor * pivot_row[j];
                    }
                    row[col] = 0.0;
                }
            }
        }
        self.rows = work;
        true
    }

    /// Reduced costs for minimizing the sum of artificials over the current
    /// basis: `c_j - sum over artificial-basic rows of a_ij`, with the
    /// negated objective in the last cell.
    fn set_phase1_cost(&mut self, first_artificial: usize) {
        let total = self.width() - 1;
        for j in 0..total {
            let mut c = if j >= first_artificial { 1.0 } else { 0.0 };
            for (i, &b) in self.basis.iter().enumerate() {
                if b >= first_artificial {
                    c -= self.rows[i][j];
                }
            }
            self.cost[j] = c;
        }
        let mut obj = 0.0;
        for (i, &b) in self.basis.iter().enumerate() {
            if b >= first_artificial {
                obj += self.rows[i][total];
            }
        }
        self.cost[total] = -obj;
    }

    /// Reduced costs for the standardized objective over the current basis.
    /// Columns at `std_cols` and beyond (slacks) carry zero objective.
    fn set_phase2_cost(&mut self, std_obj: &[f64], std_cols: usize) {
        let total = self.width() - 1;
        for j in 0..total {
            let mut c = if j < std_cols { std_obj[j] } else { 0.0 };
            for (i, &b) in self.basis.iter().enumerate() {
                if b < std_cols {
                    c -= std_obj[b] * self.rows[i][j];
                }
            }
            self.cost[j] = c;
        }
        let mut obj = 0.0;
        for (i, &b) in self.basis.iter().enumerate() {
            if b < std_cols {
                obj += std_obj[b] * self.rows[i][total];
            }
        }
        self.cost[total] = -obj;
    }

    fn rebuild_cost(&mut self, kind: &CostKind) {
        match *kind {
            CostKind::SumOfArtificials { first_artificial } => {
                self.set_phase1_cost(first_artificial)
            }
            CostKind::Standard { std_obj, std_cols } => self.set_phase2_cost(std_obj, std_cols),
        }
    }

    /// Runs simplex iterations under Bland's rule: entering column is the
    /// lowest-index one with negative reduced cost, leaving row is chosen by
    /// the minimum-ratio test with ties broken toward the lowest basic
    /// variable index. Only columns below `allowed_cols` may enter.
    ///
    /// After every pivot the tableau is refactorized from `pristine` and the
    /// cost row rebuilt, so each decision is made on entries accurate to the
    /// basis conditioning rather than to the whole pivot path. Without this,
    /// a pivot on a small legitimate entry amplifies earlier rounding noise
    /// past the pivot tolerance, and a later pivot on such a noise entry
    /// makes the basis singular. When `pristine` no longer pairs with the
    /// rows (or the refactorization fails), iteration falls back to the
    /// incrementally updated tableau.
    fn iterate(
        &mut self,
        allowed_cols: usize,
        mut budget: usize,
        pristine: &[Vec<f64>],
        kind: &CostKind,
    ) -> Result<PhaseEnd> {
        let rhs = self.width() - 1;
        loop {
            let entering = (0..allowed_cols).find(|&j| self.cost[j] < -COST_EPS);
            let Some(e) = entering else {
                return Ok(PhaseEnd::Optimal);
            };
            let mut leave: Option<(f64, usize, usize)> = None; // (ratio, basis var, row)
            for i in 0..self.rows.len() {
                let a = self.rows[i][e];
                if a > PIVOT_EPS {
                    let ratio = self.rows[i][rhs] / a;
                    let candidate = (ratio, self.basis[i], i);
                    leave = Some(match leave {
                        None => candidate,
                        Some(best) => {
                            let tol = 1e-10 * (1.0 + best.0.abs());
                            if ratio < best.0 - tol || (ratio <= best.0 + tol && candidate.1 < best.1) {
                                candidate
                            } else {
                                best
                            }
                        }
                    });
                }
            }
            let Some((_, _, row)) = leave else {
                return Ok(PhaseEnd::Unbounded);
            };
            self.pivot(row, e);
            if self.refresh_from(pristine) {
                self.rebuild_cost(kind);
            }
            budget -= 1;
            if budget == 0 {
                return Err(Error::Solver(format!(
                    "pivot budget exhausted ({} rows, {} cols)",
                    self.rows.len(),
                    self.width() - 1
                )));
            }
        }
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

/// Solves the program with a dense two-phase simplex under Bland's rule.
///
/// Infeasible and unbounded programs are reported as outcomes; `Err` is
/// reserved for malformed inputs and solver breakdown (pivot budget).
/// The floating-point pass runs first; its answer is kept only when it is
/// an optimum whose relative violation of the original constraints stays
/// within `FLOAT_TRUST_TOL`. Every other report escalates to
/// [`solve_lp_exact`], since an ill-conditioned basis can make the float
/// tableau misjudge feasibility, boundedness, and extraction alike.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome> {
    lp.check_shape()?;
    if dump_enabled() {
        eprintln!("--- lp dump ---\n{}", lp.tableau_text());
    }
    if let Ok(LpOutcome::Optimal(sol)) = solve_lp_float(lp) {
        if max_violation(lp, &sol.x) <= FLOAT_TRUST_TOL {
            return Ok(LpOutcome::Optimal(sol));
        }
    }
    solve_lp_exact(lp)
}

/// Largest relative violation of the original constraints and bounds at `x`.
fn max_violation(lp: &LinearProgram, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for c in &lp.constraints {
        let mut dot = 0.0;
        let mut scale = 1.0f64.max(c.rhs.abs());
        for (a, xi) in c.coeffs.iter().zip(x) {
            dot += a * xi;
            scale = scale.max((a * xi).abs());
        }
        let gap = match c.relation {
            Relation::LessEq => dot - c.rhs,
            Relation::GreaterEq => c.rhs - dot,
            Relation::Equal => (dot - c.rhs).abs(),
        };
        worst = worst.max(gap / scale);
    }
    for (b, xi) in lp.bounds.iter().zip(x) {
        let scale = 1.0 + xi.abs();
        if b.lower.is_finite() {
            worst = worst.max((b.lower - xi) / scale);
        }
        if b.upper.is_finite() {
            worst = worst.max((xi - b.upper) / scale);
        }
    }
    worst
}

fn solve_lp_float(lp: &LinearProgram) -> Result<LpOutcome> {
    let n = lp.objective.len();

    // Rewrite every variable as a nonnegative column. Finite two-sided
    // intervals contribute an extra `x <= upper` row, expressed over the
    // original variables so the substitution below applies uniformly.
    let mut maps = Vec::with_capacity(n);
    let mut std_cols = 0usize;
    let mut extra_rows: Vec<Constraint> = Vec::new();
    for (j, b) in lp.bounds.iter().enumerate() {
        if b.lower > b.upper {
            return Ok(LpOutcome::Infeasible);
        }
        if b.lower.is_finite() {
            maps.push(VarMap::Shift { col: std_cols, lower: b.lower });
            std_cols += 1;
            if b.upper.is_finite() {
                let mut coeffs = vec![0.0; n];
                coeffs[j] = 1.0;
                extra_rows.push(Constraint { coeffs, relation: Relation::LessEq, rhs: b.upper });
            }
        } else if b.upper.is_finite() {
            maps.push(VarMap::Negate { col: std_cols, upper: b.upper });
            std_cols += 1;
        } else {
            maps.push(VarMap::Split { pos: std_cols, neg: std_cols + 1 });
            std_cols += 2;
        }
    }

    let min_sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut std_obj = vec![0.0; std_cols];
    for j in 0..n {
        let c = min_sign * lp.objective[j];
        match maps[j] {
            VarMap::Shift { col, .. } => std_obj[col] += c,
            VarMap::Negate { col, .. } => std_obj[col] -= c,
            VarMap::Split { pos, neg } => {
                std_obj[pos] += c;
                std_obj[neg] -= c;
            }
        }
    }

    struct StdRow {
        coeffs: Vec<f64>,
        relation: Relation,
        rhs: f64,
    }
    let mut std_rows: Vec<StdRow> = Vec::with_capacity(lp.constraints.len() + extra_rows.len());
    for c in lp.constraints.iter().chain(extra_rows.iter()) {
        let mut coeffs = vec![0.0; std_cols];
        let mut rhs = c.rhs;
        for j in 0..n {
            let a = c.coeffs[j];
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift { col, lower } => {
                    coeffs[col] += a;
                    rhs -= a * lower;
                }
                VarMap::Negate { col, upper } => {
                    coeffs[col] -= a;
                    rhs -= a * upper;
                }
                VarMap::Split { pos, neg } => {
                    coeffs[pos] += a;
                    coeffs[neg] -= a;
                }
            }
        }
        let mut relation = c.relation;
        if rhs < 0.0 {
            for v in coeffs.iter_mut() {
                *v = -*v;
            }
            rhs = -rhs;
            relation = match relation {
                Relation::LessEq => Relation::GreaterEq,
                Relation::Equal => Relation::Equal,
                Relation::GreaterEq => Relation::LessEq,
            };
        }
        std_rows.push(StdRow { coeffs, relation, rhs });
    }

    // Equilibrate each row to a power-of-two scale with its largest
    // coefficient magnitude in (0.5, 1]. Power-of-two scaling is exact, so
    // the feasible set is unchanged; without it, rows derived from
    // near-identical payoff entries enter the tableau orders of magnitude
    // smaller than their neighbors and force ill-conditioned pivots.
    for r in std_rows.iter_mut() {
        let max = r.coeffs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            continue;
        }
        let mut scale = 1.0f64;
        while max * scale > 1.0 {
            scale *= 0.5;
        }
        while max * scale <= 0.5 {
            scale *= 2.0;
        }
        if scale != 1.0 {
            for v in r.coeffs.iter_mut() {
                *v *= scale;
            }
            r.rhs *= scale;
        }
    }

    // Column layout: structural, then one slack/surplus per inequality row,
    // then one artificial per >=/== row. Slacks give a starting basis for
    // <= rows; artificials cover the rest.
    let m = std_rows.len();
    let n_slack = std_rows.iter().filter(|r| r.relation != Relation::Equal).count();
    let n_artificial = std_rows.iter().filter(|r| r.relation != Relation::LessEq).count();
    let total = std_cols + n_slack + n_artificial;
    let first_artificial = std_cols + n_slack;

    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut next_slack = std_cols;
    let mut next_art = first_artificial;
    for r in &std_rows {
        let mut row = vec![0.0; total + 1];
        row[..std_cols].copy_from_slice(&r.coeffs);
        row[total] = r.rhs;
        match r.relation {
            Relation::LessEq => {
                row[next_slack] = 1.0;
                basis.push(next_slack);
                next_slack += 1;
            }
            Relation::GreaterEq => {
                row[next_slack] = -1.0;
                next_slack += 1;
                row[next_art] = 1.0;
                basis.push(next_art);
                next_art += 1;
            }
            Relation::Equal => {
                row[next_art] = 1.0;
                basis.push(next_art);
                next_art += 1;
            }
        }
        rows.push(row);
    }

    let budget = (10_000usize).max(200 * (m + total));
    // Kept verbatim so the tableau can be refactorized against any later
    // basis; see Tableau::refresh_from.
    let mut pristine = rows.clone();
    let mut tab = Tableau { rows, cost: vec![0.0; total + 1], basis };
    // Dropping a redundant row breaks the one-to-one pairing with the
    // pristine copy, after which refactorization is no longer available.
    let mut rows_removed = false;

    if n_artificial > 0 {
        // Phase 1: minimize the sum of artificials.
        let kind = CostKind::SumOfArtificials { first_artificial };
        tab.set_phase1_cost(first_artificial);
        let mut refreshes = 0;
        loop {
            match tab.iterate(total, budget, &pristine, &kind)? {
                PhaseEnd::Optimal => {}
                PhaseEnd::Unbounded => {
                    return Err(Error::internal("phase-1 objective cannot be unbounded"));
                }
            }
            if -tab.cost[total] <= PHASE1_TOL {
                break;
            }
            // A positive artificial sum is only trusted on refactorized
            // rows; after long degenerate pivot runs the incremental
            // tableau can stall above the tolerance on feasible programs.
            if refreshes == REFRESH_LIMIT || !tab.refresh_from(&pristine) {
                return Ok(LpOutcome::Infeasible);
            }
            refreshes += 1;
            tab.set_phase1_cost(first_artificial);
            if -tab.cost[total] <= PHASE1_TOL {
                break;
            }
            if !(0..total).any(|j| tab.cost[j] < -COST_EPS) {
                return Ok(LpOutcome::Infeasible);
            }
        }

        // Drive any artificial still in the basis out of it, or drop its
        // row if the row has become redundant.
        let mut i = 0;
        while i < tab.basis.len() {
            if tab.basis[i] >= first_artificial {
                let pivot_col =
                    (0..first_artificial).find(|&j| tab.rows[i][j].abs() > PIVOT_EPS);
                match pivot_col {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        tab.rows.remove(i);
                        tab.basis.remove(i);
                        rows_removed = true;
                        continue;
                    }
                }
            }
            i += 1;
        }
        for row in tab.rows.iter_mut() {
            row.drain(first_artificial..total);
        }
        tab.cost.drain(first_artificial..total);
        for row in pristine.iter_mut() {
            row.drain(first_artificial..total);
        }
    }

    // Phase 2 reduced costs, rebuilt from scratch against the current basis.
    let total = first_artificial;
    let kind = CostKind::Standard { std_obj: &std_obj, std_cols };
    tab.set_phase2_cost(&std_obj, std_cols);
    let mut refreshes = 0;
    loop {
        match tab.iterate(total, budget, &pristine, &kind)? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded => return Ok(LpOutcome::Unbounded),
        }
        // Extraction reads basic values off the rhs column, so settle on a
        // refactorized tableau; the refresh can also expose profitable
        // pivots that drift had hidden.
        if rows_removed || refreshes == REFRESH_LIMIT || !tab.refresh_from(&pristine) {
            break;
        }
        refreshes += 1;
        tab.set_phase2_cost(&std_obj, std_cols);
        if !(0..total).any(|j| tab.cost[j] < -COST_EPS) {
            break;
        }
    }

    let mut x_std = vec![0.0; total];
    let rhs = tab.cost.len() - 1;
    for (i, &b) in tab.basis.iter().enumerate() {
        x_std[b] = tab.rows[i][rhs];
    }
    let mut x = vec![0.0; n];
    for j in 0..n {
        x[j] = match maps[j] {
            VarMap::Shift { col, lower } => lower + x_std[col],
            VarMap::Negate { col, upper } => upper - x_std[col],
            VarMap::Split { pos, neg } => x_std[pos] - x_std[neg],
        };
    }
    let objective = x.iter().zip(&lp.objective).map(|(xi, ci)| xi * ci).sum();
    Ok(LpOutcome::Optimal(LpSolution { x, objective }))
}

type Rat = BigRational;

// Exact: every finite f64 is a dyadic rational. Callers run behind
// check_shape, which rejects non-finite constraint and objective entries.
fn rat(v: f64) -> Rat {
    BigRational::from_float(v).expect("finite float")
}

struct RatTableau {
    rows: Vec<Vec<Rat>>,
    cost: Vec<Rat>,
    basis: Vec<usize>,
}

impl RatTableau {
    fn width(&self) -> usize {
        self.cost.len()
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let inv = self.rows[row][col].clone();
        for v in self.rows[row].iter_mut() {
            *v /= &inv;
        }
        let prow = self.rows[row].clone();
        for (i, r) in self.rows.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let factor = r[col].clone();
            if factor.is_zero() {
                continue;
            }
            for (v, p) in r.iter_mut().zip(&prow) {
                *v -= &factor * p;
            }
        }
        let factor = self.cost[col].clone();
        if !factor.is_zero() {
            for (v, p) in self.cost.iter_mut().zip(&prow) {
                *v -= &factor * p;
            }
        }
        self.basis[row] = col;
    }

    /// Reduced costs for minimizing the sum of artificials; mirrors the
    /// float `Tableau::set_phase1_cost` over exact rationals.
    fn set_phase1_cost(&mut self, first_artificial: usize) {
        let total = self.width() - 1;
        for j in 0..total {
            let mut c = if j >= first_artificial { Rat::one() } else { Rat::zero() };
            for (i, &b) in self.basis.iter().enumerate() {
                if b >= first_artificial {
                    c -= &self.rows[i][j];
                }
            }
            self.cost[j] = c;
        }
        let mut obj = Rat::zero();
        for (i, &b) in self.basis.iter().enumerate() {
            if b >= first_artificial {
                obj += &self.rows[i][total];
            }
        }
        self.cost[total] = -obj;
    }

    /// Reduced costs for the standardized objective; mirrors the float
    /// `Tableau::set_phase2_cost` over exact rationals.
    fn set_phase2_cost(&mut self, std_obj: &[Rat], std_cols: usize) {
        let total = self.width() - 1;
        for j in 0..total {
            let mut c = if j < std_cols { std_obj[j].clone() } else { Rat::zero() };
            for (i, &b) in self.basis.iter().enumerate() {
                if b < std_cols {
                    c -= &std_obj[b] * &self.rows[i][j];
                }
            }
            self.cost[j] = c;
        }
        let mut obj = Rat::zero();
        for (i, &b) in self.basis.iter().enumerate() {
            if b < std_cols {
                obj += &std_obj[b] * &self.rows[i][total];
            }
        }
        self.cost[total] = -obj;
    }

    /// Bland's rule with exact comparisons: no tolerances, no refresh, and
    /// guaranteed termination. The budget is pure defense against an
    /// implementation bug.
    fn iterate(&mut self, allowed_cols: usize, mut budget: usize) -> Result<PhaseEnd> {
        let rhs = self.width() - 1;
        loop {
            let entering = (0..allowed_cols).find(|&j| self.cost[j].is_negative());
            let Some(e) = entering else {
                return Ok(PhaseEnd::Optimal);
            };
            let mut leave: Option<(Rat, usize, usize)> = None; // (ratio, basis var, row)
            for i in 0..self.rows.len() {
                if self.rows[i][e].is_positive() {
                    let ratio = &self.rows[i][rhs] / &self.rows[i][e];
                    let candidate = (ratio, self.basis[i], i);
                    leave = Some(match leave {
                        None => candidate,
                        Some(best) => match candidate.0.cmp(&best.0) {
                            Ordering::Less => candidate,
                            Ordering::Equal if candidate.1 < best.1 => candidate,
                            _ => best,
                        },
                    });
                }
            }
            let Some((_, _, row)) = leave else {
                return Ok(PhaseEnd::Unbounded);
            };
            self.pivot(row, e);
            budget -= 1;
            if budget == 0 {
                return Err(Error::Solver(format!(
                    "exact pivot budget exhausted ({} rows, {} cols)",
                    self.rows.len(),
                    self.width() - 1
                )));
            }
        }
    }
}

/// Solves the program exactly over arbitrary-precision rationals with the
/// same two-phase Bland simplex as the float pass. Every comparison is
/// exact, so infeasible and unbounded verdicts are certificates rather
/// than numerical guesses. Cost grows with coefficient bit length; meant
/// for the small programs this crate produces and as the arbiter behind
/// [`solve_lp`].
pub fn solve_lp_exact(lp: &LinearProgram) -> Result<LpOutcome> {
    lp.check_shape()?;
    let n = lp.objective.len();

    enum RatMap {
        Shift { col: usize, lower: Rat },
        Negate { col: usize, upper: Rat },
        Split { pos: usize, neg: usize },
    }

    struct RatRow {
        coeffs: Vec<Rat>,
        relation: Relation,
        rhs: Rat,
    }

    // Keeps every right-hand side nonnegative so slack columns can seed the
    // starting basis.
    fn push_row(rows: &mut Vec<RatRow>, mut coeffs: Vec<Rat>, mut relation: Relation, mut rhs: Rat) {
        if rhs.is_negative() {
            for v in coeffs.iter_mut() {
                *v = -v.clone();
            }
            rhs = -rhs;
            relation = match relation {
                Relation::LessEq => Relation::GreaterEq,
                Relation::Equal => Relation::Equal,
                Relation::GreaterEq => Relation::LessEq,
            };
        }
        rows.push(RatRow { coeffs, relation, rhs });
    }

    let mut maps = Vec::with_capacity(n);
    let mut std_cols = 0usize;
    // Finite two-sided intervals contribute an `x' <= upper - lower` row
    // over the shifted column.
    let mut cap_rows: Vec<(usize, Rat)> = Vec::new();
    for b in lp.bounds.iter() {
        if b.lower > b.upper {
            return Ok(LpOutcome::Infeasible);
        }
        if b.lower.is_finite() {
            if b.upper.is_finite() {
                cap_rows.push((std_cols, rat(b.upper) - rat(b.lower)));
            }
            maps.push(RatMap::Shift { col: std_cols, lower: rat(b.lower) });
            std_cols += 1;
        } else if b.upper.is_finite() {
            maps.push(RatMap::Negate { col: std_cols, upper: rat(b.upper) });
            std_cols += 1;
        } else {
            maps.push(RatMap::Split { pos: std_cols, neg: std_cols + 1 });
            std_cols += 2;
        }
    }

    let mut std_obj = vec![Rat::zero(); std_cols];
    for j in 0..n {
        let mut c = rat(lp.objective[j]);
        if lp.sense == Sense::Maximize {
            c = -c;
        }
        match maps[j] {
            RatMap::Shift { col, .. } => std_obj[col] += &c,
            RatMap::Negate { col, .. } => std_obj[col] -= &c,
            RatMap::Split { pos, neg } => {
                std_obj[pos] += &c;
                std_obj[neg] -= &c;
            }
        }
    }

    let mut std_rows: Vec<RatRow> = Vec::with_capacity(lp.constraints.len() + cap_rows.len());
    for c in &lp.constraints {
        let mut coeffs = vec![Rat::zero(); std_cols];
        let mut rhs = rat(c.rhs);
        for j in 0..n {
            if c.coeffs[j] == 0.0 {
                continue;
            }
            let a = rat(c.coeffs[j]);
            match &maps[j] {
                RatMap::Shift { col, lower } => {
                    coeffs[*col] += &a;
                    rhs -= &a * lower;
                }
                RatMap::Negate { col, upper } => {
                    coeffs[*col] -= &a;
                    rhs -= &a * upper;
                }
                RatMap::Split { pos, neg } => {
                    coeffs[*pos] += &a;
                    coeffs[*neg] -= &a;
                }
            }
        }
        push_row(&mut std_rows, coeffs, c.relation, rhs);
    }
    for (col, cap) in cap_rows {
        let mut coeffs = vec![Rat::zero(); std_cols];
        coeffs[col] = Rat::one();
        push_row(&mut std_rows, coeffs, Relation::LessEq, cap);
    }

    // Column layout matches the float pass: structural, then one
    // slack/surplus per inequality row, then one artificial per >=/== row.
    let m = std_rows.len();
    let n_slack = std_rows.iter().filter(|r| r.relation != Relation::Equal).count();
    let n_artificial = std_rows.iter().filter(|r| r.relation != Relation::LessEq).count();
    let total = std_cols + n_slack + n_artificial;
    let first_artificial = std_cols + n_slack;

    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut next_slack = std_cols;
    let mut next_art = first_artificial;
    for r in std_rows {
        let mut row = vec![Rat::zero(); total + 1];
        for (j, v) in r.coeffs.into_iter().enumerate() {
            row[j] = v;
        }
        row[total] = r.rhs;
        match r.relation {
            Relation::LessEq => {
                row[next_slack] = Rat::one();
                basis.push(next_slack);
                next_slack += 1;
            }
            Relation::GreaterEq => {
                row[next_slack] = -Rat::one();
                next_slack += 1;
                row[next_art] = Rat::one();
                basis.push(next_art);
                next_art += 1;
            }
            Relation::Equal => {
                row[next_art] = Rat::one();
                basis.push(next_art);
                next_art += 1;
            }
        }
        rows.push(row);
    }

    let budget = (10_000usize).max(200 * (m + total));
    let mut tab = RatTableau { rows, cost: vec![Rat::zero(); total + 1], basis };

    if n_artificial > 0 {
        tab.set_phase1_cost(first_artificial);
        match tab.iterate(total, budget)? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded => {
                return Err(Error::internal("phase-1 objective cannot be unbounded"));
            }
        }
        // cost[total] holds the negated artificial sum; negative means the
        // artificials cannot all reach zero, an exact infeasibility proof.
        if tab.cost[total].is_negative() {
            return Ok(LpOutcome::Infeasible);
        }

        let mut i = 0;
        while i < tab.basis.len() {
            if tab.basis[i] >= first_artificial {
                let pivot_col = (0..first_artificial).find(|&j| !tab.rows[i][j].is_zero());
                match pivot_col {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        tab.rows.remove(i);
                        tab.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        for row in tab.rows.iter_mut() {
            row.drain(first_artificial..total);
        }
        tab.cost.drain(first_artificial..total);
    }

    let total = first_artificial;
    tab.set_phase2_cost(&std_obj, std_cols);
    match tab.iterate(total, budget)? {
        PhaseEnd::Optimal => {}
        PhaseEnd::Unbounded => return Ok(LpOutcome::Unbounded),
    }

    let mut x_std = vec![Rat::zero(); total];
    let rhs = tab.cost.len() - 1;
    for (i, &b) in tab.basis.iter().enumerate() {
        x_std[b] = tab.rows[i][rhs].clone();
    }
    let mut x = Vec::with_capacity(n);
    let mut objective = Rat::zero();
    for j in 0..n {
        let xj = match &maps[j] {
            RatMap::Shift { col, lower } => lower + &x_std[*col],
            RatMap::Negate { col, upper } => upper - &x_std[*col],
            RatMap::Split { pos, neg } => &x_std[*pos] - &x_std[*neg],
        };
        objective += rat(lp.objective[j]) * &xj;
        x.push(xj.to_f64().unwrap_or(f64::NAN));
    }
    Ok(LpOutcome::Optimal(LpSolution { x, objective: objective.to_f64().unwrap_or(f64::NAN) }))
}

/// Exact value and optimal mixed strategies of a zero-sum matrix game.
#[derive(Debug, Clone)]
pub struct MatrixGameSolution {
    pub value: f64,
    pub row_strategy: Vec<f64>,
    pub col_strategy: Vec<f64>,
}

/// Solves `max_x min_y x' M y` for a row-major `rows x cols` payoff matrix
/// (row player maximizes). Uses the standard normalization: shift entries
/// to be >= 1, solve the primal/dual pair of normalized programs, and map
/// back. Both one-sided optimality checks hold to solver precision.
pub fn matrix_game_value(matrix: &[f64], rows: usize, cols: usize) -> Result<MatrixGameSolution> {
    if rows == 0 || cols == 0 || matrix.len() != rows * cols {
        return Err(Error::invalid(format!(
            "matrix game expects rows*cols entries, got {} for {rows}x{cols}",
            matrix.len()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix game contains a non-finite payoff"));
    }
    let min_entry = matrix.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min_entry;
    let shifted = |a: usize, b: usize| matrix[a * cols + b] + shift;

    // Row player: min sum(p) subject to M'^T p >= 1. The optimal p scales to
    // the maximin strategy with value 1/sum(p).
    let mut row_lp = LinearProgram::new(Sense::Minimize, vec![1.0; rows]);
    for b in 0..cols {
        let coeffs = (0..rows).map(|a| shifted(a, b)).collect();
        row_lp.subject_to(coeffs, Relation::GreaterEq, 1.0);
    }
    let row_sol = solve_lp(&row_lp)?.expect_optimal("matrix game row program")?;

    // Column player: max sum(q) subject to M' q <= 1 (the dual).
    let mut col_lp = LinearProgram::new(Sense::Maximize, vec![1.0; cols]);
    for a in 0..rows {
        let coeffs = (0..cols).map(|b| shifted(a, b)).collect();
        col_lp.subject_to(coeffs, Relation::LessEq, 1.0);
    }
    let col_sol = solve_lp(&col_lp)?.expect_optimal("matrix game column program")?;

    // The two programs are exact duals. A visible gap means the float pass
    // kept a feasible but suboptimal vertex, which only exact arithmetic
    // can repair; feasibility validation alone cannot catch it.
    let (row_sol, col_sol) = if (1.0 / col_sol.objective - 1.0 / row_sol.objective).abs() > 1e-9 {
        (
            solve_lp_exact(&row_lp)?.expect_optimal("matrix game row program")?,
            solve_lp_exact(&col_lp)?.expect_optimal("matrix game column program")?,
        )
    } else {
        (row_sol, col_sol)
    };

    let value_shifted = 1.0 / row_sol.objective;
    let value = value_shifted - shift;
    let normalize = |raw: &[f64], scale: f64| -> Vec<f64> {
        let mut v: Vec<f64> = raw.iter().map(|&p| (p * scale).max(0.0)).collect();
        let sum: f64 = v.iter().sum();
        if sum > 0.0 {
            for p in v.iter_mut() {
                *p /= sum;
            }
        }
        v
    };
    let row_strategy = normalize(&row_sol.x, value_shifted);
    let col_strategy = normalize(&col_sol.x, 1.0 / col_sol.objective);

    // Defensive gate: the two normalized programs are exact duals, so a
    // large gap means the solver broke down rather than a bad input.
    let dual_gap = (1.0 / col_sol.objective - value_shifted).abs();
    if dual_gap > 1e-6 {
        return Err(Error::internal(format!("matrix game duality gap {dual_gap:.3e}")));
    }
    Ok(MatrixGameSolution { value, row_strategy, col_strategy })
}

/// A probability distribution over joint actions of a two-player game,
/// stored row-major as `probs[a * cols + b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    pub rows: usize,
    pub cols: usize,
    pub probs: Vec<f64>,
}

impl JointDistribution {
    pub fn uniform(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        JointDistribution { rows, cols, probs: vec![1.0 / n as f64; n] }
    }

    #[inline]
    pub fn prob(&self, a: usize, b: usize) -> f64 {
        self.probs[a * self.cols + b]
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.rows];
        for a in 0..self.rows {
            for b in 0..self.cols {
                m[a] += self.prob(a, b);
            }
        }
        m
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for a in 0..self.rows {
            for b in 0..self.cols {
                m[b] += self.prob(a, b);
            }
        }
        m
    }

    pub fn expectation(&self, table: &[f64]) -> f64 {
        self.probs.iter().zip(table).map(|(p, q)| p * q).sum()
    }
}

/// Largest violation of the two deviation-constraint families defining the
/// correlated policy: the row player must not gain on `q_upper` by any fixed
/// deviation, and the column player must not reduce `q_lower`. Nonnegative;
/// zero (to tolerance) certifies the distribution.
pub fn cce_deviation_residual(
    q_upper: &[f64],
    q_lower: &[f64],
    rows: usize,
    cols: usize,
    probs: &[f64],
) -> f64 {
    let expect = |table: &[f64]| -> f64 { probs.iter().zip(table).map(|(p, q)| p * q).sum() };
    let e_upper = expect(q_upper);
    let e_lower = expect(q_lower);
    let mut worst: f64 = 0.0;
    for a_dev in 0..rows {
        let mut dev = 0.0;
        for a in 0..rows {
            for b in 0..cols {
                dev += probs[a * cols + b] * q_upper[a_dev * cols + b];
            }
        }
        worst = worst.max(dev - e_upper);
    }
    for b_dev in 0..cols {
        let mut dev = 0.0;
        for a in 0..rows {
            for b in 0..cols {
                dev += probs[a * cols + b] * q_lower[a * cols + b_dev];
            }
        }
        worst = worst.max(e_lower - dev);
    }
    worst
}

fn uniform_is_valid(residual: f64) -> bool {
    residual <= 1e-12
}

/// Computes a correlated joint policy for optimistic/pessimistic value
/// matrices of a zero-sum stage game. The distribution satisfies both
/// deviation families (see [`cce_deviation_residual`]) and minimizes the
/// expected optimistic-pessimistic spread `E[q_upper - q_lower]`.
///
/// When the spread is constant every feasible point is optimal; if the
/// uniform distribution is feasible it is returned in that case, which keeps
/// early self-play (where both matrices are still flat) exploratory instead
/// of collapsing onto an arbitrary simplex vertex.
pub fn compute_cce(
    q_upper: &[f64],
    q_lower: &[f64],
    rows: usize,
    cols: usize,
) -> Result<JointDistribution> {
    let n = rows * cols;
    if n == 0 || q_upper.len() != n || q_lower.len() != n {
        return Err(Error::invalid(format!(
            "cce expects two {rows}x{cols} matrices, got {} and {} entries",
            q_upper.len(),
            q_lower.len()
        )));
    }
    if q_upper.iter().chain(q_lower.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("cce input contains a non-finite value"));
    }

    let spread: Vec<f64> = q_upper.iter().zip(q_lower).map(|(u, l)| u - l).collect();
    let s_min = spread.iter().cloned().fold(f64::INFINITY, f64::min);
    let s_max = spread.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if s_max - s_min <= 1e-12 * (1.0 + s_max.abs().max(s_min.abs())) {
        let uniform = JointDistribution::uniform(rows, cols);
        if uniform_is_valid(cce_deviation_residual(q_upper, q_lower, rows, cols, &uniform.probs)) {
            return Ok(uniform);
        }
    }

    let mut lp = LinearProgram::new(Sense::Minimize, spread);
    lp.subject_to(vec![1.0; n], Relation::Equal, 1.0);
    // Deviation rows are written as <= 0 so they start with a basic slack;
    // only the simplex row needs an artificial in phase 1.
    for a_dev in 0..rows {
        let mut coeffs = vec![0.0; n];
        for a in 0..rows {
            for b in 0..cols {
                coeffs[a * cols + b] = q_upper[a_dev * cols + b] - q_upper[a * cols + b];
            }
        }
        lp.subject_to(coeffs, Relation::LessEq, 0.0);
    }
    for b_dev in 0..cols {
        let mut coeffs = vec![0.0; n];
        for a in 0..rows {
            for b in 0..cols {
                coeffs[a * cols + b] = q_lower[a * cols + b] - q_lower[a * cols + b_dev];
            }
        }
        lp.subject_to(coeffs, Relation::LessEq, 0.0);
    }

    let sol = solve_lp(&lp)?.expect_optimal("cce program")?;
    let probs = sol.x.iter().map(|&p| p.max(0.0)).collect();
    Ok(JointDistribution { rows, cols, probs })
}

/// Strides for mixed-radix joint-action indexing, first player most
/// significant: `index = sum_i digit_i * stride_i`.
pub fn joint_strides(action_counts: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; action_counts.len()];
    for i in (0..action_counts.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * action_counts[i + 1];
    }
    strides
}

#[inline]
pub(crate) fn replace_digit(index: usize, stride: usize, count: usize, new_digit: usize) -> usize {
    let digit = (index / stride) % count;
    (index as isize + (new_digit as isize - digit as isize) * stride as isize) as usize
}

/// Largest violation, over all players and unilateral deviations, of the
/// optimistic no-gain constraints `E[q_upper_i] >= E[q_upper_i(a'_i, ·)]`.
pub fn cce_multi_deviation_residual(
    action_counts: &[usize],
    q_upper: &[&[f64]],
    probs: &[f64],
) -> f64 {
    let strides = joint_strides(action_counts);
    let mut worst: f64 = 0.0;
    for (i, &count) in action_counts.iter().enumerate() {
        let table = q_upper[i];
        let base: f64 = probs.iter().zip(table).map(|(p, q)| p * q).sum();
        for dev in 0..count {
            let mut dev_val = 0.0;
            for (u, &p) in probs.iter().enumerate() {
                dev_val += p * table[replace_digit(u, strides[i], count, dev)];
            }
            worst = worst.max(dev_val - base);
        }
    }
    worst
}

/// Multi-player generalization of [`compute_cce`] over the joint action
/// space. Each player's optimistic table `q_upper[i]` carries that player's
/// unilateral no-gain constraints; the pessimistic tables enter only the
/// objective, `min sum_i E[q_upper_i - q_lower_i]`.
///
/// Constraining each player through its own optimistic payoff is the exact
/// generalization of the two-player rule: there the column player's
/// optimistic payoff is the negated pessimistic row table, which turns the
/// no-gain form into the familiar no-loss constraint on `q_lower`. Adding
/// pessimistic no-loss constraints per player as well would make the system
/// infeasible for generic converged tables, so it is deliberately omitted;
/// [`cce_multi_deviation_residual`] checks exactly what is enforced.
pub fn compute_cce_multi(
    action_counts: &[usize],
    q_upper: &[&[f64]],
    q_lower: &[&[f64]],
) -> Result<Vec<f64>> {
    let m = action_counts.len();
    if m < 2 {
        return Err(Error::invalid("multi-player cce needs at least two players"));
    }
    if q_upper.len() != m || q_lower.len() != m {
        return Err(Error::invalid(format!(
            "expected {m} table pairs, got {} upper and {} lower",
            q_upper.len(),
            q_lower.len()
        )));
    }
    let joint: usize = action_counts.iter().product();
    if joint == 0 {
        return Err(Error::invalid("every player needs at least one action"));
    }
    for i in 0..m {
        if q_upper[i].len() != joint || q_lower[i].len() != joint {
            return Err(Error::invalid(format!(
                "player {i} tables must have {joint} entries"
            )));
        }
        if q_upper[i].iter().chain(q_lower[i].iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("player {i} table contains a non-finite value")));
        }
    }

    let mut spread = vec![0.0; joint];
    for i in 0..m {
        for u in 0..joint {
            spread[u] += q_upper[i][u] - q_lower[i][u];
        }
    }
    let s_min = spread.iter().cloned().fold(f64::INFINITY, f64::min);
    let s_max = spread.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if s_max - s_min <= 1e-12 * (1.0 + s_max.abs().max(s_min.abs())) {
        let uniform = vec![1.0 / joint as f64; joint];
        if uniform_is_valid(cce_multi_deviation_residual(action_counts, q_upper, &uniform)) {
            return Ok(uniform);
        }
    }

    let strides = joint_strides(action_counts);
    let mut lp = LinearProgram::new(Sense::Minimize, spread);
    lp.subject_to(vec![1.0; joint], Relation::Equal, 1.0);
    for (i, &count) in action_counts.iter().enumerate() {
        let table = q_upper[i];
        for dev in 0..count {
            let mut coeffs = vec![0.0; joint];
            for u in 0..joint {
                coeffs[u] = table[replace_digit(u, strides[i], count, dev)] - table[u];
            }
            lp.subject_to(coeffs, Relation::LessEq, 0.0);
        }
    }
    let sol = solve_lp(&lp)?.expect_optimal("multi-player cce program")?;
    Ok(sol.x.iter().map(|&p| p.max(0.0)).collect())
}
