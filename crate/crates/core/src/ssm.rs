//! Incremental state-space model built from a network Jacobian.
//!
//! ```text
//! x = [V, P_H2, dI, Q_H2, Q_air]     u = [dQ_H2, dQ_air]     y = V
//!
//!     | 1 0 dV/dI 0 0 |         | dV/dQh2  dV/dQair |
//!     | 0 1 dP/dI 0 0 |         | dP/dQh2  dP/dQair |
//! A = | 0 0   0   0 0 |     B = |    0        0     |     C = [1 0 0 0 0]
//!     | 0 0   0   1 0 |         |    1        0     |
//!     | 0 0   0   0 1 |         |    0        1     |
//! ```
//!
//! The network already predicts one control interval ahead, so these are
//! the discrete-time matrices used by the controller without further
//! discretization.

use nalgebra::{SMatrix, SVector};
use crate::autodiff::{col, row, Jacobian};

pub const NX: usize = 5;
pub const NU: usize = 2;

/// State indices.
pub mod idx {
    pub const V: usize = 0;
    pub const P: usize = 1;
    pub const DI: usize = 2;
    pub const Q_H2: usize = 3;
    pub const Q_AIR: usize = 4;
}

pub type StateVec = SVector<f64, NX>;
pub type InputVec = SVector<f64, NU>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpaceModel {
    pub a: SMatrix<f64, NX, NX>,
    pub b: SMatrix<f64, NX, NU>,
    pub c: SMatrix<f64, 1, NX>,
}

impl StateSpaceModel {
    /// Model with identity coupling of `V` and `P_H2` across one step.
    pub fn assemble(jac: &Jacobian) -> Self {
        let mut a = SMatrix::<f64, NX, NX>::zeros();
        a[(idx::V, idx::V)] = 1.0;
        a[(idx::P, idx::P)] = 1.0;
        a[(idx::Q_H2, idx::Q_H2)] = 1.0;
        a[(idx::Q_AIR, idx::Q_AIR)] = 1.0;
        a[(idx::V, idx::DI)] = jac.get(row::V, col::CURRENT);
        a[(idx::P, idx::DI)] = jac.get(row::P, col::CURRENT);

        let mut b = SMatrix::<f64, NX, NU>::zeros();
        b[(idx::V, 0)] = jac.get(row::V, col::Q_H2);
        b[(idx::V, 1)] = jac.get(row::V, col::Q_AIR);
        b[(idx::P, 0)] = jac.get(row::P, col::Q_H2);
        b[(idx::P, 1)] = jac.get(row::P, col::Q_AIR);
        b[(idx::Q_H2, 0)] = 1.0;
        b[(idx::Q_AIR, 1)] = 1.0;

        let mut c = SMatrix::<f64, 1, NX>::zeros();
        c[(0, idx::V)] = 1.0;

        let model = Self { a, b, c };
        assert!(model.has_standard_structure(), "assembled model lost its structural entries");
        model
    }

    /// Variant that takes the `V`/`P_H2` block of `A` from the Jacobian's
    /// state partials instead of the identity.
    pub fn assemble_with_state_partials(jac: &Jacobian) -> Self {
        let mut model = Self::assemble(jac);
        model.a[(idx::V, idx::V)] = jac.get(row::V, col::V);
        model.a[(idx::V, idx::P)] = jac.get(row::V, col::P);
        model.a[(idx::P, idx::V)] = jac.get(row::P, col::V);
        model.a[(idx::P, idx::P)] = jac.get(row::P, col::P);
        model
    }

    /// Every data-independent entry of `(A, B, C)` matches the fixed pattern.
    pub fn has_standard_structure(&self) -> bool {
        let a = &self.a;
        let b = &self.b;
        for r in 0..NX {
            for c in 0..NX {
                let data_dependent = (r == idx::V || r == idx::P) && c == idx::DI;
                if data_dependent {
                    continue;
                }
                let expected = if r == c && r != idx::DI { 1.0 } else { 0.0 };
                if a[(r, c)] != expected {
                    return false;
                }
            }
        }
        let b_fixed = [
            (idx::DI, 0, 0.0),
            (idx::DI, 1, 0.0),
            (idx::Q_H2, 0, 1.0),
            (idx::Q_H2, 1, 0.0),
            (idx::Q_AIR, 0, 0.0),
            (idx::Q_AIR, 1, 1.0),
        ];
        if b_fixed.iter().any(|&(r, c, v)| b[(r, c)] != v) {
            return false;
        }
        self.c.iter().enumerate().all(|(i, &v)| v == if i == idx::V { 1.0 } else { 0.0 })
    }

    pub fn step(&self, x: &StateVec, u: &InputVec) -> StateVec {
        self.a * x + self.b * u
    }

    pub fn output(&self, x: &StateVec) -> f64 {
        (self.c * x)[0]
    }

    /// Iterate the model over `inputs`. `anticipated_di[k]`, when given,
    /// overwrites the `dI` entry of the state entering step `k + 1`;
    /// otherwise future current increments are zero. Returns
    /// `[x_1, ..., x_H]`.
    pub fn predict(&self, x0: &StateVec, inputs: &[InputVec], anticipated_di: Option<&[f64]>) -> Vec<StateVec> {
        assert!(!inputs.is_empty(), "prediction horizon must be at least 1");
        let mut out = Vec::with_capacity(inputs.len());
        let mut x = *x0;
        for (k, u) in inputs.iter().enumerate() {
            x = self.step(&x, u);
            if let Some(di) = anticipated_di {
                x[idx::DI] = di.get(k).copied().unwrap_or(0.0);
            }
            out.push(x);
        }
        out
    }
}
