//! Dense linear programming with bounded variables.
//!
//! A two-phase primal simplex over an explicit basis inverse. Variables carry
//! individual bounds (infinite allowed), rows are `<=`, `=` or `>=`. Pivoting
//! is Dantzig pricing with a deterministic tie-break and a Bland fallback that
//! engages after a stall, so identical inputs always take identical paths.

use thiserror::Error;

pub const INF: f64 = f64::INFINITY;

/// Reduced-cost tolerance: entering candidates must violate optimality by this much.
const TOL_DUAL: f64 = 1e-9;
/// Smallest pivot magnitude accepted in the ratio test.
const TOL_PIVOT: f64 = 1e-10;
/// Primal feasibility tolerance for the final solution check.
const TOL_FEAS: f64 = 1e-7;
/// Iterations without objective progress before Bland's rule engages.
const STALL_LIMIT: usize = 600;
/// Basis inverse is recomputed from scratch this often.
const REFACTOR_EVERY: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("variable index {0} out of range ({1} variables)")]
    BadVariable(usize, usize),
    #[error("non-finite coefficient")]
    NonFinite,
}

/// A linear program over `n_vars` bounded variables.
#[derive(Debug, Clone)]
pub struct LpModel {
    n_vars: usize,
    objective: Vec<f64>,
    sense: Sense,
    rows: Vec<Row>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The solver stalled or the basis went singular; never a wrong Optimal.
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpModel {
    pub fn new(n_vars: usize) -> Self {
        LpModel {
            n_vars,
            objective: vec![0.0; n_vars],
            sense: Sense::Min,
            rows: Vec::new(),
            lower: vec![-INF; n_vars],
            upper: vec![INF; n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub fn objective(&self) -> (&[f64], Sense) {
        (&self.objective, self.sense)
    }

    pub fn set_objective(&mut self, coeffs: &[(usize, f64)], sense: Sense) -> Result<(), LpError> {
        self.objective = vec![0.0; self.n_vars];
        for &(j, c) in coeffs {
            if j >= self.n_vars {
                return Err(LpError::BadVariable(j, self.n_vars));
            }
            if !c.is_finite() {
                return Err(LpError::NonFinite);
            }
            self.objective[j] += c;
        }
        self.sense = sense;
        Ok(())
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) -> Result<(), LpError> {
        if var >= self.n_vars {
            return Err(LpError::BadVariable(var, self.n_vars));
        }
        self.lower[var] = lo;
        self.upper[var] = hi;
        Ok(())
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> Result<usize, LpError> {
        for &(j, c) in &coeffs {
            if j >= self.n_vars {
                return Err(LpError::BadVariable(j, self.n_vars));
            }
            if !c.is_finite() {
                return Err(LpError::NonFinite);
            }
        }
        if !rhs.is_finite() {
            return Err(LpError::NonFinite);
        }
        self.rows.push(Row { coeffs, relation, rhs });
        Ok(self.rows.len() - 1)
    }

    pub fn solve(&self) -> LpSolution {
        self.solve_with_bounds(&[])
    }

    /// Solves with per-variable bound overrides, leaving the model untouched.
    /// Branch-and-bound uses this to fix binaries without cloning the model.
    pub fn solve_with_bounds(&self, overrides: &[(usize, f64, f64)]) -> LpSolution {
        let mut lower = self.lower.clone();
        let mut upper = self.upper.clone();
        for &(j, lo, hi) in overrides {
            lower[j] = lo;
            upper[j] = hi;
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; self.n_vars],
                objective: 0.0,
                iterations: 0,
            };
        }
        let mut simplex = Simplex::build(self, &lower, &upper);
        let mut sol = simplex.run();
        if sol.status == LpStatus::Optimal && self.sense == Sense::Max {
            sol.objective = -sol.objective;
        }
        sol
    }

    /// Text dump in the CPLEX LP interchange format, for debugging.
    pub fn to_lp_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        s.push_str(match self.sense {
            Sense::Min => "Minimize\n obj:",
            Sense::Max => "Maximize\n obj:",
        });
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                write!(s, " {c:+} x{j}").unwrap();
            }
        }
        s.push_str("\nSubject To\n");
        for (i, row) in self.rows.iter().enumerate() {
            write!(s, " c{i}:").unwrap();
            for &(j, c) in &row.coeffs {
                write!(s, " {c:+} x{j}").unwrap();
            }
            let rel = match row.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            writeln!(s, " {rel} {}", row.rhs).unwrap();
        }
        s.push_str("Bounds\n");
        for j in 0..self.n_vars {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo == -INF && hi == INF {
                writeln!(s, " x{j} free").unwrap();
            } else if lo == -INF {
                writeln!(s, " -inf <= x{j} <= {hi}").unwrap();
            } else if hi == INF {
                writeln!(s, " x{j} >= {lo}").unwrap();
            } else {
                writeln!(s, " {lo} <= x{j} <= {hi}").unwrap();
            }
        }
        s.push_str("End\n");
        s
    }
}

enum RatioLimit {
    /// The entering variable reaches its opposite bound first.
    OwnBound,
    /// Basic variable in this row hits the given bound.
    Basic { row: usize, at_upper: bool },
}

struct Simplex {
    m: usize,
    n_struct: usize,
    /// structural + slack count; artificials live at indices >= n_work.
    n_work: usize,
    n_total: usize,
    cols: Vec<Vec<(usize, f64)>>,
    art_sign: Vec<f64>,
    rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    real_cost: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    at_upper: Vec<bool>,
    x: Vec<f64>,
    binv: Vec<f64>,
    iterations: usize,
    bland: bool,
    pivots_since_refactor: usize,
    stall: usize,
    last_obj: f64,
}

impl Simplex {
    fn build(model: &LpModel, lower_in: &[f64], upper_in: &[f64]) -> Simplex {
        let m = model.rows.len();
        let n_struct = model.n_vars;
        let n_work = n_struct + m;
        let n_total = n_work + m;

        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_struct];
        let mut rhs = vec![0.0; m];
        let mut lower = vec![0.0; n_total];
        let mut upper = vec![0.0; n_total];
        lower[..n_struct].copy_from_slice(lower_in);
        upper[..n_struct].copy_from_slice(upper_in);

        for (i, row) in model.rows.iter().enumerate() {
            // Ge rows are negated into Le so every inequality slack is [0, inf).
            let flip = if row.relation == Relation::Ge { -1.0 } else { 1.0 };
            for &(j, c) in &row.coeffs {
                if c != 0.0 {
                    cols[j].push((i, flip * c));
                }
            }
            rhs[i] = flip * row.rhs;
            let s = n_struct + i;
            lower[s] = 0.0;
            upper[s] = if row.relation == Relation::Eq { 0.0 } else { INF };
        }

        let mut real_cost = vec![0.0; n_total];
        let sign = if model.sense == Sense::Max { -1.0 } else { 1.0 };
        for j in 0..n_struct {
            real_cost[j] = sign * model.objective[j];
        }

        // Nonbasic start: every structural/slack variable at its finite bound
        // of smaller magnitude, free variables at zero.
        let mut x = vec![0.0; n_total];
        let mut at_upper = vec![false; n_total];
        for j in 0..n_work {
            let (lo, hi) = (lower[j], upper[j]);
            if lo.is_finite() && hi.is_finite() {
                if hi.abs() < lo.abs() {
                    x[j] = hi;
                    at_upper[j] = true;
                } else {
                    x[j] = lo;
                }
            } else if lo.is_finite() {
                x[j] = lo;
            } else if hi.is_finite() {
                x[j] = hi;
                at_upper[j] = true;
            }
        }

        // Residual the artificial basis must carry.
        let mut resid = rhs.clone();
        for (j, col) in cols.iter().enumerate() {
            if x[j] != 0.0 {
                for &(i, c) in col {
                    resid[i] -= c * x[j];
                }
            }
        }
        // Slack start values are all zero, so they contribute nothing.

        let mut art_sign = vec![1.0; m];
        let mut basis = vec![0; m];
        let mut in_basis = vec![false; n_total];
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            let a = n_work + i;
            art_sign[i] = if resid[i] >= 0.0 { 1.0 } else { -1.0 };
            lower[a] = 0.0;
            upper[a] = INF;
            x[a] = resid[i].abs();
            basis[i] = a;
            in_basis[a] = true;
            binv[i * m + i] = art_sign[i];
        }

        Simplex {
            m,
            n_struct,
            n_work,
            n_total,
            cols,
            art_sign,
            rhs,
            lower,
            upper,
            cost: vec![0.0; n_total],
            real_cost,
            basis,
            in_basis,
            at_upper,
            x,
            binv,
            iterations: 0,
            bland: false,
            pivots_since_refactor: 0,
            stall: 0,
            last_obj: INF,
        }
    }

    fn for_column(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n_struct {
            for &(i, c) in &self.cols[j] {
                f(i, c);
            }
        } else if j < self.n_work {
            f(j - self.n_struct, 1.0);
        } else {
            let i = j - self.n_work;
            f(i, self.art_sign[i]);
        }
    }

    fn reduced_cost(&self, j: usize, y: &[f64]) -> f64 {
        let mut d = self.cost[j];
        self.for_column(j, |i, c| d -= y[i] * c);
        d
    }

    fn objective_value(&self) -> f64 {
        (0..self.n_total).map(|j| self.cost[j] * self.x[j]).sum()
    }

    fn run(&mut self) -> LpSolution {
        let max_iter = 50 * (self.m + self.n_work) + 10_000;

        // Phase 1: drive artificial variables to zero.
        for i in 0..self.m {
            self.cost[self.n_work + i] = 1.0;
        }
        match self.iterate(max_iter) {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded | PhaseEnd::Stalled => return self.failure(),
        }
        let infeasibility: f64 = (0..self.m).map(|i| self.x[self.n_work + i]).sum();
        if infeasibility > TOL_FEAS {
            return LpSolution {
                status: LpStatus::Infeasible,
                x: self.x[..self.n_struct].to_vec(),
                objective: 0.0,
                iterations: self.iterations,
            };
        }

        // Phase 2: artificials are pinned at zero and never re-enter.
        for i in 0..self.m {
            let a = self.n_work + i;
            self.lower[a] = 0.0;
            self.upper[a] = 0.0;
            if !self.in_basis[a] {
                self.x[a] = 0.0;
            }
        }
        self.cost.copy_from_slice(&self.real_cost);
        self.bland = false;
        self.stall = 0;
        self.last_obj = INF;
        match self.iterate(max_iter) {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded => {
                return LpSolution {
                    status: LpStatus::Unbounded,
                    x: self.x[..self.n_struct].to_vec(),
                    objective: -INF,
                    iterations: self.iterations,
                };
            }
            PhaseEnd::Stalled => return self.failure(),
        }

        if !self.check_feasible() {
            return self.failure();
        }
        let objective = (0..self.n_struct).map(|j| self.real_cost[j] * self.x[j]).sum();
        LpSolution {
            status: LpStatus::Optimal,
            x: self.x[..self.n_struct].to_vec(),
            objective,
            iterations: self.iterations,
        }
    }

    fn failure(&self) -> LpSolution {
        LpSolution {
            status: LpStatus::NumericalFailure,
            x: self.x[..self.n_struct].to_vec(),
            objective: 0.0,
            iterations: self.iterations,
        }
    }

    fn iterate(&mut self, max_iter: usize) -> PhaseEnd {
        loop {
            self.iterations += 1;
            if self.iterations > max_iter {
                return PhaseEnd::Stalled;
            }
            if self.pivots_since_refactor >= REFACTOR_EVERY && !self.refactorize() {
                return PhaseEnd::Stalled;
            }

            // Stall detection: without sustained progress, pricing goes Bland.
            let obj = self.objective_value();
            if obj < self.last_obj - 1e-12 {
                self.last_obj = obj;
                self.stall = 0;
            } else {
                self.stall += 1;
                if self.stall > STALL_LIMIT {
                    self.bland = true;
                }
            }

            // BTRAN: duals for the current basis.
            let mut y = vec![0.0; self.m];
            for i in 0..self.m {
                let cb = self.cost[self.basis[i]];
                if cb != 0.0 {
                    let row = &self.binv[i * self.m..(i + 1) * self.m];
                    for (k, yk) in y.iter_mut().enumerate() {
                        *yk += cb * row[k];
                    }
                }
            }

            // Pricing over structural and slack variables; artificials never re-enter.
            let mut enter: Option<(usize, f64, bool)> = None; // (var, |d|, increase)
            for j in 0..self.n_work {
                if self.in_basis[j] || self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = self.reduced_cost(j, &y);
                let free = self.lower[j] == -INF && self.upper[j] == INF;
                let (viol, increase) = if free {
                    (d.abs() > TOL_DUAL, d < 0.0)
                } else if self.at_upper[j] {
                    (d > TOL_DUAL, false)
                } else {
                    (d < -TOL_DUAL, true)
                };
                if !viol {
                    continue;
                }
                if self.bland {
                    enter = Some((j, d.abs(), increase));
                    break;
                }
                match enter {
                    Some((_, best, _)) if d.abs() <= best => {}
                    _ => enter = Some((j, d.abs(), increase)),
                }
            }
            let Some((j_enter, _, increase)) = enter else {
                return PhaseEnd::Optimal;
            };
            let sigma = if increase { 1.0 } else { -1.0 };

            // FTRAN: representation of the entering column in the basis.
            let mut w = vec![0.0; self.m];
            let m = self.m;
            let binv = &self.binv;
            self.for_column(j_enter, |i, c| {
                if c != 0.0 {
                    for (r, wr) in w.iter_mut().enumerate() {
                        *wr += binv[r * m + i] * c;
                    }
                }
            });

            // Ratio test.
            let own_span = self.upper[j_enter] - self.lower[j_enter];
            let mut theta = if own_span.is_finite() { own_span } else { INF };
            let mut limit = RatioLimit::OwnBound;
            for i in 0..self.m {
                let g = sigma * w[i];
                let b = self.basis[i];
                let (t, hits_upper) = if g > TOL_PIVOT {
                    if self.lower[b] == -INF {
                        continue;
                    }
                    ((self.x[b] - self.lower[b]) / g, false)
                } else if g < -TOL_PIVOT {
                    if self.upper[b] == INF {
                        continue;
                    }
                    ((self.upper[b] - self.x[b]) / (-g), true)
                } else {
                    continue;
                };
                let t = t.max(0.0);
                let replace = if t < theta - 1e-9 {
                    true
                } else if t < theta + 1e-9 {
                    // Near-tie: prefer the larger pivot for stability; Bland
                    // mode prefers the smallest leaving variable index.
                    match limit {
                        RatioLimit::OwnBound => true,
                        RatioLimit::Basic { row, .. } => {
                            if self.bland {
                                b < self.basis[row]
                            } else {
                                w[i].abs() > w[row].abs()
                            }
                        }
                    }
                } else {
                    false
                };
                if replace {
                    theta = t.min(theta);
                    limit = RatioLimit::Basic { row: i, at_upper: hits_upper };
                }
            }

            if theta == INF {
                return PhaseEnd::Unbounded;
            }

            // Apply the step.
            for i in 0..self.m {
                if w[i] != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= sigma * theta * w[i];
                }
            }
            self.x[j_enter] += sigma * theta;

            match limit {
                RatioLimit::OwnBound => {
                    let to_upper = !self.at_upper[j_enter];
                    self.x[j_enter] = if to_upper { self.upper[j_enter] } else { self.lower[j_enter] };
                    self.at_upper[j_enter] = to_upper;
                }
                RatioLimit::Basic { row, at_upper } => {
                    let leaving = self.basis[row];
                    self.x[leaving] = if at_upper { self.upper[leaving] } else { self.lower[leaving] };
                    self.at_upper[leaving] = at_upper;
                    self.in_basis[leaving] = false;
                    self.in_basis[j_enter] = true;
                    self.basis[row] = j_enter;

                    // Product-form update of the basis inverse.
                    let pivot = w[row];
                    if pivot.abs() < TOL_PIVOT {
                        return PhaseEnd::Stalled;
                    }
                    let inv = 1.0 / pivot;
                    for k in 0..self.m {
                        self.binv[row * self.m + k] *= inv;
                    }
                    for i in 0..self.m {
                        if i != row && w[i] != 0.0 {
                            let f = w[i];
                            for k in 0..self.m {
                                self.binv[i * self.m + k] -= f * self.binv[row * self.m + k];
                            }
                        }
                    }
                    self.pivots_since_refactor += 1;
                }
            }
        }
    }

    /// Rebuilds the basis inverse by Gauss-Jordan elimination and recomputes
    /// the basic variable values from the nonbasic bounds.
    fn refactorize(&mut self) -> bool {
        let m = self.m;
        let w = 2 * m;
        let mut work = vec![0.0; m * w];
        for (i, &b) in self.basis.iter().enumerate() {
            self.for_column(b, |r, c| work[r * w + i] = c);
        }
        for i in 0..m {
            work[i * w + m + i] = 1.0;
        }
        for col in 0..m {
            let mut piv_row = col;
            let mut piv_val = work[col * w + col].abs();
            for r in col + 1..m {
                let v = work[r * w + col].abs();
                if v > piv_val {
                    piv_val = v;
                    piv_row = r;
                }
            }
            if piv_val < 1e-12 {
                return false;
            }
            if piv_row != col {
                for k in 0..w {
                    work.swap(col * w + k, piv_row * w + k);
                }
            }
            let inv = 1.0 / work[col * w + col];
            for k in 0..w {
                work[col * w + k] *= inv;
            }
            for r in 0..m {
                if r != col {
                    let f = work[r * w + col];
                    if f != 0.0 {
                        for k in 0..w {
                            work[r * w + k] -= f * work[col * w + k];
                        }
                    }
                }
            }
        }
        for i in 0..m {
            for k in 0..m {
                self.binv[i * m + k] = work[i * w + m + k];
            }
        }

        // x_B = B^-1 (b - N x_N)
        let mut resid = self.rhs.clone();
        for j in 0..self.n_total {
            if !self.in_basis[j] && self.x[j] != 0.0 {
                let xj = self.x[j];
                self.for_column(j, |i, c| resid[i] -= c * xj);
            }
        }
        for i in 0..m {
            let mut v = 0.0;
            for k in 0..m {
                v += self.binv[i * m + k] * resid[k];
            }
            self.x[self.basis[i]] = v;
        }
        self.pivots_since_refactor = 0;
        true
    }

    fn check_feasible(&self) -> bool {
        for j in 0..self.n_work {
            let tol = TOL_FEAS * self.x[j].abs().max(1.0);
            if self.x[j] < self.lower[j] - tol || self.x[j] > self.upper[j] + tol {
                return false;
            }
        }
        let mut lhs = vec![0.0; self.m];
        for j in 0..self.n_total {
            if self.x[j] != 0.0 {
                let xj = self.x[j];
                self.for_column(j, |i, c| lhs[i] += c * xj);
            }
        }
        for i in 0..self.m {
            if (lhs[i] - self.rhs[i]).abs() > TOL_FEAS * self.rhs[i].abs().max(1.0) {
                return false;
            }
        }
        true
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
    Stalled,
}
