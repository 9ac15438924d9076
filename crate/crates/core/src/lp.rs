//! Dense two-phase simplex over `f64` with nonnegative variables.
//!
//! Small by design: the fairness step builds programs with at most a few
//! hundred variables and rows, and it needs to inspect which constraints are
//! tight at the optimum, so a transparent tableau beats an external solver.

/// Feasibility tolerance for all comparisons inside the solver.
pub const LP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    /// Dense coefficients, one per variable.
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Maximize `objective . x` subject to the constraints and `x >= 0`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram { num_vars, objective: vec![0.0; num_vars], constraints: Vec::new() }
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.num_vars);
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

struct Tableau {
    rows: usize,
    cols: usize, // total columns including rhs
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let cols = self.cols;
        let piv = self.at(pr, pc);
        for c in 0..cols {
            let v = self.at(pr, c) / piv;
            self.set(pr, c, v);
        }
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let factor = self.at(r, pc);
            if factor.abs() < 1e-13 {
                continue;
            }
            for c in 0..cols {
                let v = self.at(r, c) - factor * self.at(pr, c);
                self.set(r, c, v);
            }
            self.set(r, pc, 0.0);
        }
        self.basis[pr] = pc;
    }

    /// Runs simplex on the objective stored in the last row (a minimization
    /// row in reduced-cost form). Returns false on unboundedness.
    fn optimize(&mut self, active_cols: usize) -> bool {
        let obj_row = self.rows - 1;
        let mut iter = 0usize;
        // Dantzig's rule, switching to Bland's after a safety threshold.
        let bland_after = 50 * (self.rows + self.cols);
        loop {
            iter += 1;
            let use_bland = iter > bland_after;
            let mut pc = usize::MAX;
            let mut best = -LP_EPS;
            for c in 0..active_cols {
                let rc = self.at(obj_row, c);
                if rc < best {
                    if use_bland {
                        if rc < -LP_EPS {
                            pc = c;
                            break;
                        }
                    } else {
                        best = rc;
                        pc = c;
                    }
                }
            }
            if pc == usize::MAX {
                return true;
            }
            let mut pr = usize::MAX;
            let mut best_ratio = f64::INFINITY;
            for r in 0..obj_row {
                let a = self.at(r, pc);
                if a > LP_EPS {
                    let ratio = self.at(r, self.cols - 1) / a;
                    if ratio < best_ratio - LP_EPS
                        || (ratio < best_ratio + LP_EPS
                            && (pr == usize::MAX || self.basis[r] < self.basis[pr]))
                    {
                        best_ratio = ratio;
                        pr = r;
                    }
                }
            }
            if pr == usize::MAX {
                return false;
            }
            self.pivot(pr, pc);
        }
    }
}

/// Solves the program with the two-phase method.
pub fn solve(lp: &LinearProgram) -> LpOutcome {
    let n = lp.num_vars;
    let m = lp.constraints.len();

    // Normalize rows to nonnegative rhs, then count auxiliary columns.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::with_capacity(m);
    for c in &lp.constraints {
        let mut coeffs = c.coeffs.clone();
        let mut rel = c.relation;
        let mut rhs = c.rhs;
        if rhs < 0.0 {
            for v in coeffs.iter_mut() {
                *v = -*v;
            }
            rhs = -rhs;
            rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        rows.push((coeffs, rel, rhs));
    }
    let num_slack = rows
        .iter()
        .filter(|(_, r, _)| matches!(r, Relation::Le | Relation::Ge))
        .count();
    let num_art = rows
        .iter()
        .filter(|(_, r, _)| matches!(r, Relation::Eq | Relation::Ge))
        .count();

    let total = n + num_slack + num_art;
    let cols = total + 1;
    let mut t = Tableau {
        rows: m + 1,
        cols,
        data: vec![0.0; (m + 1) * cols],
        basis: vec![usize::MAX; m],
    };

    let mut slack_idx = n;
    let mut art_idx = n + num_slack;
    let mut artificials = Vec::new();
    for (r, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        for (c, &v) in coeffs.iter().enumerate() {
            t.set(r, c, v);
        }
        t.set(r, cols - 1, *rhs);
        match rel {
            Relation::Le => {
                t.set(r, slack_idx, 1.0);
                t.basis[r] = slack_idx;
                slack_idx += 1;
            }
            Relation::Ge => {
                t.set(r, slack_idx, -1.0);
                slack_idx += 1;
                t.set(r, art_idx, 1.0);
                t.basis[r] = art_idx;
                artificials.push(art_idx);
                art_idx += 1;
            }
            Relation::Eq => {
                t.set(r, art_idx, 1.0);
                t.basis[r] = art_idx;
                artificials.push(art_idx);
                art_idx += 1;
            }
        }
    }

    // Phase 1: minimize the sum of artificial variables.
    if !artificials.is_empty() {
        let obj = m;
        for &a in &artificials {
            t.set(obj, a, 1.0);
        }
        // Price out the artificial basis.
        for r in 0..m {
            if artificials.contains(&t.basis[r]) {
                for c in 0..cols {
                    let v = t.at(obj, c) - t.at(r, c);
                    t.set(obj, c, v);
                }
            }
        }
        if !t.optimize(total) {
            return LpOutcome::Infeasible;
        }
        if -t.at(m, cols - 1) > 1e-7 {
            return LpOutcome::Infeasible;
        }
        // Drive leftover artificials out of the basis when possible.
        for r in 0..m {
            if artificials.contains(&t.basis[r]) {
                let mut entered = false;
                for c in 0..n + num_slack {
                    if t.at(r, c).abs() > 1e-7 {
                        t.pivot(r, c);
                        entered = true;
                        break;
                    }
                }
                if !entered {
                    // Redundant row; leave the artificial at value zero.
                }
            }
        }
        // Zero the artificial columns so phase 2 cannot re-enter them.
        for &a in &artificials {
            for r in 0..=m {
                t.set(r, a, 0.0);
            }
        }
    }

    // Phase 2: minimize -objective.
    let obj = m;
    for c in 0..cols {
        t.set(obj, c, 0.0);
    }
    for c in 0..n {
        t.set(obj, c, -lp.objective[c]);
    }
    for r in 0..m {
        let b = t.basis[r];
        let factor = t.at(obj, b);
        if factor.abs() > 1e-13 {
            for c in 0..cols {
                let v = t.at(obj, c) - factor * t.at(r, c);
                t.set(obj, c, v);
            }
        }
    }
    if !t.optimize(n + num_slack) {
        return LpOutcome::Unbounded;
    }

    let mut x = vec![0.0; n];
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = t.at(r, cols - 1).max(0.0);
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpOutcome::Optimal(LpSolution { x, objective })
}
