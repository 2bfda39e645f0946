//! Dense two-phase primal simplex for the discrete oracles.
//!
//! Maximizes c·x subject to Ax = b, x ≥ 0 on a full tableau. Pricing is
//! Dantzig's rule with a switch to Bland's rule after a run of degenerate
//! pivots, which guarantees termination. Optimal results carry an
//! independently recomputed certificate (primal residual, reduced costs and
//! duality gap against the original data).

use thiserror::Error;

const EPS: f64 = 1e-9;
/// Reduced costs below this never enter; keeps accumulated tableau dust from
/// driving endless degenerate pivots.
const ENTER_TOL: f64 = 1e-7;
/// Degenerate pivots tolerated before switching to Bland's rule.
const DEGENERACY_SWITCH: usize = 64;

#[derive(Debug, Error)]
pub enum SimplexError {
    #[error("pivot limit exceeded ({0} pivots)")]
    PivotLimit(usize),
    #[error("bad LP input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Optimality evidence recomputed from the original data, not the tableau.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub primal_residual: f64,
    pub max_reduced_cost: f64,
    pub duality_gap: f64,
    pub dual: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub status: SimplexStatus,
    pub value: f64,
    pub solution: Vec<f64>,
    pub pivots: usize,
    pub certificate: Option<Certificate>,
}

/// Equality-form LP: maximize `objective · x` s.t. `rows · x = rhs`, x ≥ 0.
pub struct EqualityLp {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

struct Tableau {
    /// m rows × (n + 1) columns; last column is the basic value.
    data: Vec<f64>,
    cols: usize,
    basis: Vec<usize>,
    /// Reduced-cost row r_j = c_j − z_j, with the objective value last.
    price: Vec<f64>,
    pivots: usize,
    /// Start of the artificial identity block, whose current tableau values
    /// are B⁻¹ — used by the lexicographic ratio test.
    identity_start: usize,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.basis.len()
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    /// Recompute the reduced-cost row for the given costs from scratch.
    fn reprice(&mut self, costs: &[f64]) {
        let m = self.rows();
        let width = self.cols + 1;
        let mut price = vec![0.0; width];
        price[..self.cols].copy_from_slice(costs);
        for i in 0..m {
            let cb = costs[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.data[i * width..(i + 1) * width];
            for (p, r) in price.iter_mut().zip(row) {
                *p -= cb * r;
            }
        }
        // The last entry becomes −objective value; store objective instead.
        price[self.cols] = -price[self.cols];
        self.price = price;
    }

    fn objective_value(&self) -> f64 {
        self.price[self.cols]
    }

    /// One pivot: `enter` becomes basic in row `leave_row`.
    fn pivot(&mut self, enter: usize, leave_row: usize) {
        let width = self.cols + 1;
        let pivot_val = self.at(leave_row, enter);
        debug_assert!(pivot_val.abs() > EPS * 1e-3);
        let inv = 1.0 / pivot_val;
        let start = leave_row * width;
        for v in &mut self.data[start..start + width] {
            *v *= inv;
        }
        // Copy the normalized pivot row out to keep the borrow checker happy.
        let prow: Vec<f64> = self.data[start..start + width].to_vec();
        for i in 0..self.rows() {
            if i == leave_row {
                continue;
            }
            let factor = self.at(i, enter);
            if factor == 0.0 {
                continue;
            }
            let rstart = i * width;
            let row = &mut self.data[rstart..rstart + width];
            for (v, p) in row.iter_mut().zip(&prow) {
                *v -= factor * p;
            }
            row[enter] = 0.0;
        }
        let factor = self.price[enter];
        if factor != 0.0 {
            // price has the objective stored with flipped sign in the last
            // slot relative to the tableau convention, so update it in two
            // parts: reduced costs minus factor·row, objective plus.
            for j in 0..self.cols {
                self.price[j] -= factor * prow[j];
            }
            self.price[enter] = 0.0;
            self.price[self.cols] += factor * prow[self.cols];
        }
        self.basis[leave_row] = enter;
        self.pivots += 1;
    }

    /// Among tied min-ratio rows, pick the lexicographically smallest row of
    /// [rhs | B⁻¹] scaled by the entering column's coefficient.
    fn lexico_min(&self, candidates: &[usize], enter: usize) -> usize {
        let width = self.cols + 1;
        let m = self.rows();
        let mut best = candidates[0];
        for &cand in &candidates[1..] {
            let (ab, ac) = (
                self.data[best * width + enter],
                self.data[cand * width + enter],
            );
            // Compare rhs first, then the B⁻¹ block column by column.
            let mut decided = false;
            let (rb, rc) = (self.rhs(best) / ab, self.rhs(cand) / ac);
            if (rb - rc).abs() > 1e-12 {
                if rc < rb {
                    best = cand;
                }
                continue;
            }
            for k in 0..m {
                let col = self.identity_start + k;
                let vb = self.data[best * width + col] / ab;
                let vc = self.data[cand * width + col] / ac;
                if (vb - vc).abs() > 1e-12 {
                    if vc < vb {
                        best = cand;
                    }
                    decided = true;
                    break;
                }
            }
            if !decided {
                // Identical rows up to tolerance; fall back to Bland.
                if self.basis[cand] < self.basis[best] {
                    best = cand;
                }
            }
        }
        best
    }

    /// Run simplex iterations on the current pricing. `allowed` masks the
    /// columns that may enter.
    /// `stop_at`: a known upper bound on the objective; once reached (within
    /// tolerance) the solve is declared optimal. Phase 1 uses 0.
    fn optimize(
        &mut self,
        allowed: &[bool],
        max_pivots: usize,
        stop_at: Option<f64>,
    ) -> Result<SimplexStatus, SimplexError> {
        let debug = std::env::var_os("MINMAX_SIMPLEX_DEBUG").is_some();
        let mut degenerate_run = 0usize;
        loop {
            if debug && self.pivots % 1000 == 0 {
                eprintln!(
                    "pivot {} objective {} degenerate_run {degenerate_run}",
                    self.pivots,
                    self.objective_value()
                );
            }
            if let Some(bound) = stop_at {
                if self.objective_value() >= bound - 1e-9 {
                    return Ok(SimplexStatus::Optimal);
                }
            }
            if self.pivots > max_pivots {
                return Err(SimplexError::PivotLimit(self.pivots));
            }
            let bland = degenerate_run >= DEGENERACY_SWITCH;
            // Entering column: Dantzig (most positive reduced cost) or Bland
            // (lowest index with positive reduced cost).
            let mut enter: Option<usize> = None;
            let mut best = ENTER_TOL;
            for j in 0..self.cols {
                if !allowed[j] {
                    continue;
                }
                let r = self.price[j];
                if r > best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = r;
                }
            }
            let Some(enter) = enter else {
                return Ok(SimplexStatus::Optimal);
            };
            // Ratio test with lexicographic tie-breaking over (rhs, B⁻¹)/a,
            // which rules out cycling on the heavily degenerate transport
            // polytopes (all masses equal).
            let width = self.cols + 1;
            let mut candidates: Vec<usize> = Vec::new();
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.rows() {
                let a = self.data[i * width + enter];
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    if ratio < best_ratio - EPS {
                        best_ratio = ratio;
                        candidates.clear();
                        candidates.push(i);
                    } else if ratio <= best_ratio + EPS {
                        candidates.push(i);
                    }
                }
            }
            if candidates.is_empty() {
                return Ok(SimplexStatus::Unbounded);
            }
            let leave_row = if candidates.len() == 1 {
                candidates[0]
            } else {
                self.lexico_min(&candidates, enter)
            };
            if best_ratio.abs() <= EPS {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(enter, leave_row);
        }
    }
}

/// Solve with a candidate starting basis (column indices). The tableau is
/// brought onto that basis by Gauss-Jordan pivots; rows it cannot cover keep
/// their artificial at zero. Falls back to the two-phase solve when the
/// candidate basis is not primal feasible.
pub fn solve_with_basis(lp: &EqualityLp, basis_cols: &[usize]) -> Result<SimplexResult, SimplexError> {
    let m = lp.rows.len();
    let n = lp.objective.len();
    if lp.rhs.len() != m || lp.rows.iter().any(|r| r.len() != n) {
        return Err(SimplexError::BadInput("inconsistent LP dimensions".into()));
    }
    let mut tab = initial_tableau(lp);
    for &j in basis_cols {
        if j >= n {
            return Err(SimplexError::BadInput("warm basis column out of range".into()));
        }
        // Pivot j in on the artificial-basic row with the largest coefficient.
        let width = tab.cols + 1;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if tab.basis[i] >= n {
                let a = tab.data[i * width + j].abs();
                if a > 1e-9 && best.map_or(true, |(_, b)| a > b) {
                    best = Some((i, a));
                }
            }
        }
        if let Some((row, _)) = best {
            tab.pivot(j, row);
        }
    }
    // Primal feasible? All basic values nonnegative and leftover artificials
    // at zero.
    let feasible = (0..m).all(|i| {
        let v = tab.rhs(i);
        v >= -1e-9 && (tab.basis[i] < n || v.abs() <= 1e-9)
    });
    if !feasible {
        return solve(lp);
    }
    tab.pivots = 0;
    finish_phase2(lp, tab)
}

/// Tableau with one artificial per row, rows flipped so the right-hand side
/// is nonnegative, artificials basic.
fn initial_tableau(lp: &EqualityLp) -> Tableau {
    let m = lp.rows.len();
    let n = lp.objective.len();
    let cols = n + m;
    let width = cols + 1;
    let mut data = vec![0.0; m * width];
    for i in 0..m {
        let flip = if lp.rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            data[i * width + j] = flip * lp.rows[i][j];
        }
        data[i * width + n + i] = 1.0;
        data[i * width + cols] = flip * lp.rhs[i];
    }
    Tableau {
        data,
        cols,
        basis: (n..n + m).collect(),
        price: vec![0.0; width],
        pivots: 0,
        identity_start: n,
    }
}

/// Solve an equality-form LP by two-phase primal simplex.
pub fn solve(lp: &EqualityLp) -> Result<SimplexResult, SimplexError> {
    let m = lp.rows.len();
    let n = lp.objective.len();
    if lp.rhs.len() != m || lp.rows.iter().any(|r| r.len() != n) {
        return Err(SimplexError::BadInput("inconsistent LP dimensions".into()));
    }
    if m == 0 || n == 0 {
        return Err(SimplexError::BadInput("empty LP".into()));
    }
    let mut tab = initial_tableau(lp);

    // Phase 1: maximize −Σ artificials.
    let cols = tab.cols;
    let mut phase1_costs = vec![0.0; cols];
    for c in phase1_costs.iter_mut().skip(n) {
        *c = -1.0;
    }
    tab.reprice(&phase1_costs);
    let allowed = vec![true; cols];
    let max_pivots = 2000 + 40 * (m + n);
    if tab.optimize(&allowed, max_pivots, Some(0.0))? == SimplexStatus::Unbounded {
        return Err(SimplexError::BadInput("phase 1 unbounded".into()));
    }
    if tab.objective_value() < -1e-7 {
        return Ok(SimplexResult {
            status: SimplexStatus::Infeasible,
            value: f64::NEG_INFINITY,
            solution: vec![],
            pivots: tab.pivots,
            certificate: None,
        });
    }

    // Drive leftover artificials out of the basis; rows that cannot pivot on
    // any original column are redundant and get neutralized.
    let width = tab.cols + 1;
    for i in 0..m {
        if tab.basis[i] >= n {
            let mut pivot_col = None;
            for j in 0..n {
                if tab.at(i, j).abs() > 1e-7 {
                    pivot_col = Some(j);
                    break;
                }
            }
            if let Some(j) = pivot_col {
                tab.pivot(j, i);
            } else {
                // Redundant row: zero it so it can never constrain phase 2.
                for v in &mut tab.data[i * width..i * width + width] {
                    *v = 0.0;
                }
                tab.data[i * width + tab.basis[i]] = 1.0;
            }
        }
    }

    finish_phase2(lp, tab)
}

/// Phase 2 on the real objective, artificials barred from entering.
fn finish_phase2(lp: &EqualityLp, mut tab: Tableau) -> Result<SimplexResult, SimplexError> {
    let m = lp.rows.len();
    let n = lp.objective.len();
    let max_pivots = 2000 + 40 * (m + n);
    let mut phase2_costs = vec![0.0; tab.cols];
    phase2_costs[..n].copy_from_slice(&lp.objective);
    tab.reprice(&phase2_costs);
    let mut allowed = vec![true; tab.cols];
    for a in allowed.iter_mut().skip(n) {
        *a = false;
    }
    let status = tab.optimize(&allowed, max_pivots, None)?;
    if status == SimplexStatus::Unbounded {
        return Ok(SimplexResult {
            status,
            value: f64::INFINITY,
            solution: vec![],
            pivots: tab.pivots,
            certificate: None,
        });
    }

    let mut solution = vec![0.0; n];
    for i in 0..m {
        if tab.basis[i] < n {
            solution[tab.basis[i]] = tab.rhs(i);
        }
    }
    let value: f64 = solution.iter().zip(&lp.objective).map(|(x, c)| x * c).sum();
    let certificate = certify(lp, &solution, &tab.basis, value);
    Ok(SimplexResult {
        status: SimplexStatus::Optimal,
        value,
        solution,
        pivots: tab.pivots,
        certificate: Some(certificate),
    })
}

/// Recompute feasibility and optimality evidence from the original data:
/// solve Bᵀy = c_B for the dual, then check residuals, reduced costs and the
/// duality gap.
fn certify(lp: &EqualityLp, solution: &[f64], basis: &[usize], value: f64) -> Certificate {
    let m = lp.rows.len();
    let n = lp.objective.len();
    // Primal residual ‖Ax − b‖∞.
    let mut primal_residual = 0.0f64;
    for i in 0..m {
        let ax: f64 = lp.rows[i].iter().zip(solution).map(|(a, x)| a * x).sum();
        primal_residual = primal_residual.max((ax - lp.rhs[i]).abs());
    }
    // Bᵀ y = c_B with artificial columns as unit vectors of cost 0.
    let mut mat = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for (k, &bj) in basis.iter().enumerate() {
        if bj < n {
            for i in 0..m {
                mat[k][i] = lp.rows[i][bj];
            }
            rhs[k] = lp.objective[bj];
        } else {
            mat[k][bj - n] = 1.0;
            rhs[k] = 0.0;
        }
    }
    let dual = gauss_solve(mat, rhs);
    let mut max_reduced_cost = 0.0f64;
    if let Some(y) = &dual {
        for j in 0..n {
            if basis.contains(&j) {
                continue;
            }
            let yaj: f64 = (0..m).map(|i| y[i] * lp.rows[i][j]).sum();
            max_reduced_cost = max_reduced_cost.max(lp.objective[j] - yaj);
        }
    }
    let duality_gap = match &dual {
        Some(y) => {
            let yb: f64 = y.iter().zip(&lp.rhs).map(|(yi, bi)| yi * bi).sum();
            (value - yb).abs()
        }
        None => f64::NAN,
    };
    Certificate {
        primal_residual,
        max_reduced_cost,
        duality_gap,
        dual: dual.unwrap_or_default(),
    }
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if pivot_val < 1e-12 {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}
