//! Dense convex QP solver.
//!
//! ```text
//! minimize   ½ zᵀHz + gᵀz
//! subject to l ≤ Gz ≤ u
//! ```
//!
//! The method is the dual active-set scheme of Goldfarb and Idnani: start
//! from the unconstrained minimizer and repeatedly add the most violated
//! constraint, dropping active constraints whose multiplier would turn
//! negative. Every iterate is dual feasible, so the method terminates at
//! the optimum or proves infeasibility. Rows with `l == u` are equality
//! constraints and are added first.
//!
//! Problems in this crate are small (tens of variables), so the projection
//! onto the active normals is refactored with a fresh QR each iteration
//! instead of being updated with Givens rotations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 4000;
const DUMP_MAGIC: &str = "%fcmpc-qp 1";

#[derive(Debug, Error)]
pub enum QpError {
    #[error("invalid QP: {0}")]
    Invalid(String),
    #[error("cannot read or write QP dump {path}: {msg}")]
    Dump { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// Constraint matrix `G`.
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, a: DMatrix<f64>, l: DVector<f64>, u: DVector<f64>) -> Result<Self, QpError> {
        let p = Self { h, g, a, l, u };
        p.validate()?;
        Ok(p)
    }

    /// Problem with no constraint rows.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Result<Self, QpError> {
        let n = g.len();
        Self::new(h, g, DMatrix::zeros(0, n), DVector::zeros(0), DVector::zeros(0))
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        if self.h.shape() != (n, n) {
            return Err(QpError::Invalid(format!("H is {:?}, expected {n}x{n}", self.h.shape())));
        }
        let m = self.m();
        if self.a.shape() != (m, n) || self.u.len() != m {
            return Err(QpError::Invalid(format!(
                "G is {:?}, l has {m} and u has {} entries for n = {n}",
                self.a.shape(),
                self.u.len()
            )));
        }
        if !self.h.iter().chain(self.g.iter()).chain(self.a.iter()).all(|v| v.is_finite()) {
            return Err(QpError::Invalid("H, g and G must be finite".into()));
        }
        let scale = self.h.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > 1e-10 * scale {
                    return Err(QpError::Invalid(format!("H is not symmetric at ({i}, {j})")));
                }
            }
        }
        for i in 0..m {
            let (l, u) = (self.l[i], self.u[i]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(QpError::Invalid(format!("row {i} has bounds [{l}, {u}]")));
            }
        }
        Ok(())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }

    /// Largest bound violation of `z`.
    pub fn primal_violation(&self, z: &DVector<f64>) -> f64 {
        let gz = &self.a * z;
        (0..self.m()).map(|i| (self.l[i] - gz[i]).max(gz[i] - self.u[i]).max(0.0)).fold(0.0, f64::max)
    }

    /// Write the problem as plain text that [`QpProblem::load_dump`] reads
    /// back bit-for-bit.
    pub fn dump(&self, path: &Path) -> Result<(), QpError> {
        let mut s = String::new();
        let row = |s: &mut String, it: &mut dyn Iterator<Item = f64>| {
            let parts: Vec<String> = it.map(|v| format!("{v:e}")).collect();
            s.push_str(&parts.join(" "));
            s.push('\n');
        };
        let _ = writeln!(s, "{DUMP_MAGIC}\n{} {}", self.n(), self.m());
        s.push_str("H\n");
        for r in 0..self.n() {
            row(&mut s, &mut self.h.row(r).iter().copied());
        }
        s.push_str("g\n");
        row(&mut s, &mut self.g.iter().copied());
        s.push_str("G\n");
        for r in 0..self.m() {
            row(&mut s, &mut self.a.row(r).iter().copied());
        }
        s.push_str("l\n");
        row(&mut s, &mut self.l.iter().copied());
        s.push_str("u\n");
        row(&mut s, &mut self.u.iter().copied());
        fs::write(path, s).map_err(|e| QpError::Dump { path: path.display().to_string(), msg: e.to_string() })
    }

    pub fn load_dump(path: &Path) -> Result<Self, QpError> {
        let err = |msg: String| QpError::Dump { path: path.display().to_string(), msg };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut lines = text.lines();
        if lines.next() != Some(DUMP_MAGIC) {
            return Err(err("missing header".into()));
        }
        let dims: Vec<usize> = lines
            .next()
            .ok_or_else(|| err("missing dimensions".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(format!("bad dimension `{t}`"))))
            .collect::<Result<_, _>>()?;
        let [n, m] = dims[..] else { return Err(err("expected `n m`".into())) };
        let mut floats = |tag: &str, rows: usize, cols: usize| -> Result<Vec<f64>, QpError> {
            if lines.next() != Some(tag) {
                return Err(err(format!("expected section `{tag}`")));
            }
            let mut out = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let line = lines.next().ok_or_else(|| err(format!("section `{tag}` is short")))?;
                for t in line.split_whitespace() {
                    out.push(t.parse::<f64>().map_err(|_| err(format!("bad number `{t}` in `{tag}`")))?);
                }
            }
            if out.len() != rows * cols {
                return Err(err(format!("section `{tag}` has {} values, expected {}", out.len(), rows * cols)));
            }
            Ok(out)
        };
        let h = DMatrix::from_row_slice(n, n, &floats("H", n, n)?);
        let g = DVector::from_vec(floats("g", 1, n)?);
        let a = DMatrix::from_row_slice(m, n, &floats("G", m, n)?);
        let l = DVector::from_vec(floats("l", 1, m)?);
        let u = DVector::from_vec(floats("u", 1, m)?);
        Self::new(h, g, a, l, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIter => "max-iter",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bound {
    Lower,
    Upper,
}

/// One side of one constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActiveConstraint {
    pub row: usize,
    pub bound: Bound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multipliers with `Hz + g + Gᵀλ = 0`; positive on upper bounds.
    pub lambda: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub primal_residual: f64,
    /// Stationarity residual `‖Hz + g + Gᵀλ‖∞`.
    pub dual_residual: f64,
    pub complementarity: f64,
    pub iterations: usize,
    /// Active set at exit, usable as a warm-start hint.
    pub active: Vec<ActiveConstraint>,
    /// Diagonal shift added to a singular `H` (0 when `H` was definite).
    pub regularization: f64,
}

#[derive(Clone, Copy)]
struct Active {
    c: ActiveConstraint,
    equality: bool,
}

struct Solver<'a> {
    p: &'a QpProblem,
    /// `L⁻ᵀ` for the Cholesky factor `H = LLᵀ`.
    j: DMatrix<f64>,
    row_norm: Vec<f64>,
    feas_tol: f64,
}

impl Solver<'_> {
    fn normal(&self, c: ActiveConstraint) -> DVector<f64> {
        let r = self.p.a.row(c.row).transpose();
        match c.bound {
            Bound::Lower => r,
            Bound::Upper => -r,
        }
    }

    /// Signed distance to the bound; negative means violated.
    fn slack(&self, c: ActiveConstraint, x: &DVector<f64>) -> f64 {
        let gx = self.p.a.row(c.row).dot(&x.transpose());
        match c.bound {
            Bound::Lower => gx - self.p.l[c.row],
            Bound::Upper => self.p.u[c.row] - gx,
        }
    }

    /// Most violated inequality side not in the active set, preferring
    /// sides listed in `hint`.
    fn pick(&self, x: &DVector<f64>, active: &[Active], hint: &[ActiveConstraint]) -> Option<ActiveConstraint> {
        let is_active = |row: usize| active.iter().any(|a| a.c.row == row);
        let violation = |c: ActiveConstraint| -self.slack(c, x) / self.row_norm[c.row];
        for &c in hint {
            if c.row < self.p.m() && !is_active(c.row) && self.row_norm[c.row] > 0.0 && violation(c) > self.feas_tol {
                return Some(c);
            }
        }
        let mut best: Option<(f64, ActiveConstraint)> = None;
        for row in 0..self.p.m() {
            if is_active(row) || self.row_norm[row] == 0.0 || self.p.l[row] == self.p.u[row] {
                continue;
            }
            for bound in [Bound::Lower, Bound::Upper] {
                let finite = match bound {
                    Bound::Lower => self.p.l[row].is_finite(),
                    Bound::Upper => self.p.u[row].is_finite(),
                };
                if !finite {
                    continue;
                }
                let c = ActiveConstraint { row, bound };
                let v = violation(c);
                if v > self.feas_tol && best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, c));
                }
            }
        }
        best.map(|(_, c)| c)
    }
}

enum Exit {
    Optimal,
    MaxIter,
    Infeasible,
}

fn factor(h: &DMatrix<f64>) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    if let Some(c) = h.clone().cholesky() {
        return Some((c, 0.0));
    }
    let n = h.nrows();
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(1.0, f64::max);
    let mut shift = 1e-12 * scale;
    while shift <= 1e-4 * scale {
        let shifted = h + DMatrix::identity(n, n) * shift;
        if let Some(c) = shifted.cholesky() {
            return Some((c, shift));
        }
        shift *= 10.0;
    }
    None
}

pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    solve_warm(problem, settings, &[])
}

/// Solve with a warm-start hint: violated constraints in `hint` are added
/// before any other, which reproduces a previous active set in as many
/// iterations as it has members.
pub fn solve_warm(problem: &QpProblem, settings: &QpSettings, hint: &[ActiveConstraint]) -> Result<QpSolution, QpError> {
    problem.validate()?;
    if !(settings.tol > 0.0) || settings.max_iter == 0 {
        return Err(QpError::Invalid(format!("settings {settings:?}")));
    }
    let n = problem.n();
    let m = problem.m();
    let (chol, regularization) =
        factor(&problem.h).ok_or_else(|| QpError::Invalid("H is not positive semidefinite".into()))?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| QpError::Invalid("singular Cholesky factor".into()))?;
    let solver = Solver {
        p: problem,
        j: l_inv.transpose(),
        row_norm: (0..m).map(|i| problem.a.row(i).norm()).collect(),
        feas_tol: (settings.tol * 1e-3).max(1e-12),
    };

    let mut x = chol.solve(&(-&problem.g));
    let mut active: Vec<Active> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    // A zero row can never be repaired by moving x.
    let mut exit = Exit::Optimal;
    for i in 0..m {
        if solver.row_norm[i] == 0.0 && (problem.l[i] > settings.tol || problem.u[i] < -settings.tol) {
            exit = Exit::Infeasible;
        }
    }
    let mut equalities: Vec<usize> =
        (0..m).filter(|&i| problem.l[i] == problem.u[i] && solver.row_norm[i] > 0.0).rev().collect();

    'outer: while matches!(exit, Exit::Optimal) {
        let (p, equality) = if let Some(row) = equalities.pop() {
            let lower = ActiveConstraint { row, bound: Bound::Lower };
            let c = if solver.slack(lower, &x) > 0.0 { ActiveConstraint { row, bound: Bound::Upper } } else { lower };
            (c, true)
        } else {
            match solver.pick(&x, &active, hint) {
                Some(c) => (c, false),
                None => break,
            }
        };
        let mut u_plus = 0.0;
        loop {
            iterations += 1;
            if iterations > settings.max_iter {
                iterations = settings.max_iter;
                exit = Exit::MaxIter;
                break 'outer;
            }
            let np = solver.normal(p);
            let d = solver.j.tr_mul(&np);
            let q = active.len();
            let (w, r) = if q == 0 {
                (d.clone(), DVector::zeros(0))
            } else {
                let mut nt = DMatrix::zeros(n, q);
                for (k, a) in active.iter().enumerate() {
                    nt.set_column(k, &solver.j.tr_mul(&solver.normal(a.c)));
                }
                let qr = nt.qr();
                let q1 = qr.q();
                let proj = q1.tr_mul(&d);
                let w = &d - &q1 * &proj;
                let r = qr.r().solve_upper_triangular(&proj).unwrap_or_else(|| DVector::zeros(q));
                (w, r)
            };
            let z = &solver.j * &w;

            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for (k, a) in active.iter().enumerate() {
                if !a.equality && r[k] > 0.0 {
                    let ratio = mult[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_k = Some(k);
                    }
                }
            }
            let s = solver.slack(p, &x);
            let full = w.norm() > 1e-12 * d.norm().max(f64::MIN_POSITIVE);
            let t2 = if full { -s / z.dot(&np) } else { f64::INFINITY };

            if !full && equality {
                // Dependent equality: consistent or not, nothing to add.
                if s.abs() > settings.tol {
                    exit = Exit::Infeasible;
                }
                break;
            }
            let t = t1.min(t2);
            if t.is_infinite() {
                exit = Exit::Infeasible;
                break 'outer;
            }
            for k in 0..q {
                mult[k] -= t * r[k];
            }
            u_plus += t;
            if full {
                x += &z * t;
            }
            if full && t2 <= t1 {
                active.push(Active { c: p, equality });
                mult.push(u_plus);
                break;
            }
            let k = drop_k.expect("finite partial step has a blocking constraint");
            active.remove(k);
            mult.remove(k);
        }
    }

    let mut lambda = DVector::zeros(m);
    for (a, &mu) in active.iter().zip(&mult) {
        match a.c.bound {
            Bound::Lower => lambda[a.c.row] -= mu,
            Bound::Upper => lambda[a.c.row] += mu,
        }
    }
    let gz = &problem.a * &x;
    let stationarity = (&problem.h * &x + &problem.g + problem.a.tr_mul(&lambda)).amax();
    let primal = problem.primal_violation(&x);
    let mut complementarity: f64 = 0.0;
    for i in 0..m {
        let gap = if lambda[i] > 0.0 {
            lambda[i] * (problem.u[i] - gz[i]).abs()
        } else if lambda[i] < 0.0 {
            -lambda[i] * (gz[i] - problem.l[i]).abs()
        } else {
            0.0
        };
        if gap.is_finite() {
            complementarity = complementarity.max(gap);
        } else {
            complementarity = f64::INFINITY;
        }
    }
    // Residuals are judged relative to the size of the problem data.
    let scale = 1.0_f64.max(problem.g.amax()).max(problem.h.amax() * x.amax());
    let status = match exit {
        Exit::Infeasible => QpStatus::Infeasible,
        Exit::MaxIter => QpStatus::MaxIter,
        Exit::Optimal => {
            let ok = stationarity <= settings.tol * scale
                && primal <= settings.tol * (1.0 + gz.amax())
                && complementarity <= settings.tol * scale;
            if ok {
                QpStatus::Solved
            } else {
                QpStatus::MaxIter
            }
        }
    };
    Ok(QpSolution {
        objective: problem.objective(&x),
        z: x,
        lambda,
        status,
        primal_residual: primal,
        dual_residual: stationarity,
        complementarity,
        iterations,
        active: active.iter().map(|a| a.c).collect(),
        regularization,
    })
}
