//! Dense convex QP solver: primal active-set method for
//! `min 1/2 u'Hu + g'u  s.t.  Au <= b` with symmetric positive-definite `H`.
//!
//! Written for the small (tens of variables) problems this crate produces;
//! each active-set change solves one dense KKT system by Gaussian
//! elimination. Solutions are certified in tests through their KKT
//! residuals rather than against a reference solver.

use super::OptimError;

/// Primal feasibility tolerance on `Au <= b`.
pub const PRIMAL_TOL: f64 = 1e-8;
/// Step-size / stationarity tolerance.
const STEP_TOL: f64 = 1e-10;
/// Multiplier tolerance: active constraints may carry slightly negative
/// multipliers before being released.
const DUAL_TOL: f64 = 1e-9;

/// `min 1/2 u'Hu + g'u  s.t.  a_ub u <= b_ub`.
#[derive(Debug, Clone)]
pub struct Qp {
    pub h: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
}

impl Qp {
    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn m(&self) -> usize {
        self.b_ub.len()
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let n = self.n();
        if self.h.len() != n || self.h.iter().any(|r| r.len() != n) {
            return Err(OptimError::BadProblem(format!("H must be {n} x {n}")));
        }
        if self.a_ub.len() != self.m() || self.a_ub.iter().any(|r| r.len() != n) {
            return Err(OptimError::BadProblem("constraint matrix shape mismatch".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (self.h[i][j] - self.h[j][i]).abs() > 1e-9 {
                    return Err(OptimError::BadProblem("H must be symmetric".into()));
                }
            }
        }
        Ok(())
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let mut quad = 0.0;
        for i in 0..self.n() {
            for j in 0..self.n() {
                quad += u[i] * self.h[i][j] * u[j];
            }
        }
        0.5 * quad + dot(&self.g, u)
    }

    /// Largest violation of `Au <= b` (0 when feasible).
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        (0..self.m())
            .map(|i| dot(&self.a_ub[i], u) - self.b_ub[i])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: Vec<f64>,
    /// Constraint indices active at the solution.
    pub active: Vec<usize>,
    /// Multipliers, aligned with `active`.
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
}

impl QpSolution {
    /// Infinity norm of the stationarity residual `Hu + g + A_W' lambda`.
    pub fn stationarity_residual(&self, qp: &Qp) -> f64 {
        let n = qp.n();
        let mut r = vec![0.0; n];
        for i in 0..n {
            r[i] = qp.g[i] + dot(&qp.h[i], &self.u);
        }
        for (w, &ci) in self.active.iter().enumerate() {
            for i in 0..n {
                r[i] += self.lambda[w] * qp.a_ub[ci][i];
            }
        }
        r.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `Ax = b` in place by Gaussian elimination with partial pivoting;
/// `None` when (numerically) singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// Equality-constrained subproblem at `u` with working set `w`:
/// step `p` minimizing the model subject to `A_w p = 0`, plus multipliers.
fn eqp_step(qp: &Qp, u: &[f64], w: &[usize]) -> Result<(Vec<f64>, Vec<f64>), OptimError> {
    let n = qp.n();
    let k = w.len();
    let dim = n + k;
    let mut kkt = vec![vec![0.0; dim]; dim];
    let mut rhs = vec![0.0; dim];
    for i in 0..n {
        for j in 0..n {
            kkt[i][j] = qp.h[i][j];
        }
        rhs[i] = -(qp.g[i] + dot(&qp.h[i], u));
    }
    for (r, &ci) in w.iter().enumerate() {
        for i in 0..n {
            kkt[i][n + r] = qp.a_ub[ci][i];
            kkt[n + r][i] = qp.a_ub[ci][i];
        }
    }
    let sol = solve_dense(kkt, rhs)
        .ok_or_else(|| OptimError::SingularKkt { active: w.to_vec() })?;
    Ok((sol[..n].to_vec(), sol[n..].to_vec()))
}

/// Primal active-set solve from a feasible starting point.
pub fn solve_qp(qp: &Qp, u0: &[f64]) -> Result<QpSolution, OptimError> {
    qp.validate()?;
    let n = qp.n();
    if u0.len() != n {
        return Err(OptimError::BadProblem("start point dimension mismatch".into()));
    }
    for i in 0..qp.m() {
        let viol = dot(&qp.a_ub[i], u0) - qp.b_ub[i];
        if viol > PRIMAL_TOL {
            return Err(OptimError::InfeasibleStart { index: i, violation: viol });
        }
    }

    let mut u = u0.to_vec();
    let mut working: Vec<usize> = Vec::new();
    let max_iters = 50 * (n + qp.m()).max(4);
    for iter in 1..=max_iters {
        let (p, lambda) = eqp_step(qp, &u, &working)?;
        let p_norm = p.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if p_norm <= STEP_TOL {
            // Stationary on the working set: optimal unless a multiplier
            // says a constraint should be released.
            let (mut worst, mut worst_idx) = (-DUAL_TOL, None);
            for (i, &l) in lambda.iter().enumerate() {
                if l < worst {
                    worst = l;
                    worst_idx = Some(i);
                }
            }
            match worst_idx {
                None => {
                    let objective = qp.objective(&u);
                    return Ok(QpSolution { u, active: working, lambda, iterations: iter, objective });
                }
                Some(i) => {
                    working.remove(i);
                }
            }
            continue;
        }
        // Longest step along p that stays feasible.
        let mut alpha = 1.0f64;
        let mut blocking = None;
        for ci in 0..qp.m() {
            if working.contains(&ci) {
                continue;
            }
            let ap = dot(&qp.a_ub[ci], &p);
            if ap > 1e-14 {
                let slack = qp.b_ub[ci] - dot(&qp.a_ub[ci], &u);
                let step = (slack / ap).max(0.0);
                if step < alpha {
                    alpha = step;
                    blocking = Some(ci);
                }
            }
        }
        for i in 0..n {
            u[i] += alpha * p[i];
        }
        if let Some(ci) = blocking {
            working.push(ci);
        }
    }
    Err(OptimError::IterationLimit(max_iters))
}
