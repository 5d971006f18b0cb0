//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use fcmpc::nn::{self, NetworkWeights, Scaler};
use fcmpc::{QpProblem, Record};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Minimum of a strictly convex QP by enumerating every assignment of each
/// row to {inactive, at lower, at upper}, solving the face's KKT system
/// with LU and keeping the best feasible stationary point.
pub fn enumerate_qp(p: &QpProblem) -> Option<(f64, DVector<f64>)> {
    let n = p.n();
    let m = p.m();
    let mut choice = vec![0u8; m];
    let mut best: Option<(f64, DVector<f64>)> = None;
    loop {
        let valid = (0..m).all(|i| match choice[i] {
            1 => p.l[i].is_finite(),
            2 => p.u[i].is_finite() && p.l[i] != p.u[i],
            _ => true,
        });
        if valid {
            let rows: Vec<usize> = (0..m).filter(|&i| choice[i] != 0).collect();
            let k = rows.len();
            if k <= n {
                let mut kkt = DMatrix::zeros(n + k, n + k);
                let mut rhs = DVector::zeros(n + k);
                kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
                for j in 0..n {
                    rhs[j] = -p.g[j];
                }
                for (r, &i) in rows.iter().enumerate() {
                    for j in 0..n {
                        kkt[(n + r, j)] = p.a[(i, j)];
                        kkt[(j, n + r)] = p.a[(i, j)];
                    }
                    rhs[n + r] = if choice[i] == 1 { p.l[i] } else { p.u[i] };
                }
                let lu = kkt.lu();
                if let Some(sol) = lu.solve(&rhs) {
                    let z = sol.rows(0, n).into_owned();
                    if sol.iter().all(|v| v.is_finite()) {
                        let gz = &p.a * &z;
                        let feasible = (0..m).all(|i| {
                            let slack = 1e-9 * (1.0 + gz[i].abs());
                            gz[i] >= p.l[i] - slack && gz[i] <= p.u[i] + slack
                        });
                        if feasible {
                            let f = p.objective(&z);
                            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                                best = Some((f, z));
                            }
                        }
                    }
                }
            }
        }
        // Next assignment in base 3.
        let mut i = 0;
        loop {
            if i == m {
                return best;
            }
            choice[i] += 1;
            if choice[i] < 3 {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// Random strictly convex QP that is feasible by construction (a random
/// point satisfies every row). At most four rows are two-sided when there
/// are more than eight rows, to keep enumeration cheap.
pub fn random_qp<R: Rng>(rng: &mut R, max_n: usize, max_m: usize) -> QpProblem {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(0..=max_m);
    let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = f.transpose() * &f + DMatrix::identity(n, n) * rng.random_range(0.05..1.0);
    let h = (&h + h.transpose()) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
    let z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let gz0 = &a * &z0;
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    let mut two_sided = 0;
    for i in 0..m {
        let lo = gz0[i] - rng.random_range(0.0..1.0);
        let hi = gz0[i] + rng.random_range(0.0..1.0);
        let kind = rng.random_range(0..3);
        let kind = if kind == 2 && m > 8 && two_sided >= 4 { rng.random_range(0..2) } else { kind };
        match kind {
            0 => {
                l[i] = lo;
                u[i] = f64::INFINITY;
            }
            1 => {
                l[i] = f64::NEG_INFINITY;
                u[i] = hi;
            }
            _ => {
                two_sided += 1;
                l[i] = lo;
                u[i] = hi;
            }
        }
    }
    QpProblem::new(h, g, a, l, u).expect("generated problem is valid")
}

/// `(stationarity, primal, complementarity, dual sign)` residuals computed
/// from scratch.
pub fn kkt_residuals(p: &QpProblem, z: &DVector<f64>, lambda: &DVector<f64>) -> [f64; 4] {
    let stat = (&p.h * z + &p.g + p.a.transpose() * lambda).amax();
    let gz = &p.a * z;
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut sign: f64 = 0.0;
    for i in 0..p.m() {
        primal = primal.max(p.l[i] - gz[i]).max(gz[i] - p.u[i]);
        if lambda[i] > 0.0 {
            comp = comp.max(lambda[i] * (p.u[i] - gz[i]).abs());
            if !p.u[i].is_finite() {
                sign = sign.max(lambda[i]);
            }
        } else if lambda[i] < 0.0 {
            comp = comp.max(-lambda[i] * (gz[i] - p.l[i]).abs());
            if !p.l[i].is_finite() {
                sign = sign.max(-lambda[i]);
            }
        }
    }
    [stat, primal, comp, sign]
}

/// Forward pass through dense nalgebra products, written independently of
/// the library's layer loop. Returns the outputs in physical units and the
/// smallest `|pre-activation|` over hidden units (distance to a ReLU kink).
pub fn forward_oracle(w: &NetworkWeights, s: &Scaler, x: &[f64]) -> (Vec<f64>, f64) {
    let mut a = DVector::from_iterator(x.len(), x.iter().zip(s.input_shift.iter().zip(&s.input_scale)).map(|(v, (m, d))| (v - m) / d));
    let mut margin = f64::INFINITY;
    let last = w.layers.len() - 1;
    for (i, layer) in w.layers.iter().enumerate() {
        let m = DMatrix::from_row_slice(layer.outputs, layer.inputs, &layer.weights);
        let z = m * &a + DVector::from_column_slice(&layer.bias);
        if i == last {
            a = z;
        } else {
            margin = z.iter().fold(margin, |acc, v| acc.min(v.abs()));
            a = z.map(|v| v.max(0.0));
        }
    }
    let y = a.iter().zip(s.output_shift.iter().zip(&s.output_scale)).map(|(v, (m, d))| v * d + m).collect();
    (y, margin)
}

/// Central-difference Jacobian of the network in scaled coordinates,
/// `d y_scaled / d x_scaled`, as `[output][input]`.
pub fn fd_jacobian_scaled(w: &NetworkWeights, x_scaled: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n_out = w.n_outputs();
    let mut jac = vec![vec![0.0; x_scaled.len()]; n_out];
    for j in 0..x_scaled.len() {
        let mut up = x_scaled.to_vec();
        let mut dn = x_scaled.to_vec();
        up[j] += h;
        dn[j] -= h;
        let (fu, fd) = (w.forward_scaled(&up), w.forward_scaled(&dn));
        for r in 0..n_out {
            jac[r][j] = (fu[r] - fd[r]) / (2.0 * h);
        }
    }
    jac
}

/// Parameter `k` of layer `li`: weights first, then biases.
pub fn param_mut(net: &mut NetworkWeights, li: usize, k: usize) -> &mut f64 {
    let l = &mut net.layers[li];
    let nw = l.weights.len();
    if k < nw {
        &mut l.weights[k]
    } else {
        &mut l.bias[k - nw]
    }
}

/// Central-difference gradient of the training loss, laid out like the
/// weights.
pub fn fd_loss_gradient(w: &NetworkWeights, s: &Scaler, batch: &[Record], h: f64) -> NetworkWeights {
    let mut grad = NetworkWeights::zeros(&w.widths());
    let mut probe = w.clone();
    for li in 0..w.layers.len() {
        for k in 0..w.layers[li].weights.len() + w.layers[li].bias.len() {
            let orig = *param_mut(&mut probe, li, k);
            *param_mut(&mut probe, li, k) = orig + h;
            let fu = nn::loss(&probe, s, batch);
            *param_mut(&mut probe, li, k) = orig - h;
            let fd = nn::loss(&probe, s, batch);
            *param_mut(&mut probe, li, k) = orig;
            *param_mut(&mut grad, li, k) = (fu - fd) / (2.0 * h);
        }
    }
    grad
}
