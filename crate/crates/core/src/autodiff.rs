//! Forward-mode automatic differentiation of the network.
//!
//! [`Dual`] carries one tangent. Each Jacobian column is one forward pass
//! with the tangent seeded on one physical input, so the scaler's chain
//! rule is included and the entries come out in V/lpm, atm/A and so on.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::nn::{self, Network, NetworkWeights, Real, Scaler};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub deriv: f64,
}

impl Dual {
    pub fn new(value: f64, deriv: f64) -> Self {
        Self { value, deriv }
    }

    pub fn variable(value: f64) -> Self {
        Self { value, deriv: 1.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.deriv + rhs.deriv)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.deriv - rhs.deriv)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.value * rhs.value, self.deriv * rhs.value + self.value * rhs.deriv)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.deriv)
    }
}

impl Real for Dual {
    fn constant(x: f64) -> Self {
        Dual::new(x, 0.0)
    }

    /// Derivative 1 for `x > 0`, 0 otherwise (including the kink itself).
    fn relu(self) -> Self {
        if self.value > 0.0 {
            self
        } else {
            Dual::new(0.0, 0.0)
        }
    }

    fn scale(self, k: f64) -> Self {
        Dual::new(self.value * k, self.deriv * k)
    }
}

/// `d[v_next, p_next] / d[q_h2, q_air, i, v, p]`, physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jacobian(pub [[f64; 5]; 2]);

/// Column indices of [`Jacobian`].
pub mod col {
    pub const Q_H2: usize = 0;
    pub const Q_AIR: usize = 1;
    pub const CURRENT: usize = 2;
    pub const V: usize = 3;
    pub const P: usize = 4;
}

/// Row indices of [`Jacobian`].
pub mod row {
    pub const V: usize = 0;
    pub const P: usize = 1;
}

impl Jacobian {
    pub const ZERO: Jacobian = Jacobian([[0.0; 5]; 2]);

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row][col]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// `J * d`.
    pub fn apply(&self, d: &[f64; 5]) -> [f64; 2] {
        self.0.map(|r| r.iter().zip(d).map(|(a, b)| a * b).sum())
    }
}

/// Directional derivative of the network at `point` along `direction`,
/// one dual pass.
pub fn directional(weights: &NetworkWeights, scaler: &Scaler, point: &[f64; 5], direction: &[f64; 5]) -> [f64; 2] {
    let x: Vec<Dual> = point.iter().zip(direction).map(|(&v, &d)| Dual::new(v, d)).collect();
    let y = nn::forward(weights, scaler, &x);
    [y[0].deriv, y[1].deriv]
}

/// Full 2x5 Jacobian by five forward-mode passes.
pub fn jacobian_of(weights: &NetworkWeights, scaler: &Scaler, point: &[f64; 5]) -> Jacobian {
    let mut jac = [[0.0; 5]; 2];
    for j in 0..5 {
        let mut seed = [0.0; 5];
        seed[j] = 1.0;
        let column = directional(weights, scaler, point, &seed);
        jac[0][j] = column[0];
        jac[1][j] = column[1];
    }
    Jacobian(jac)
}

pub fn jacobian(network: &Network, point: &[f64; 5]) -> Jacobian {
    jacobian_of(&network.weights, &network.scaler, point)
}
