//! Steady-state map of the surrogate plant around the 48 V operating line.
//!
//! ```text
//! cargo run --release --example calibrate
//! ```
//!
//! For each load current and air flow, bisects the hydrogen flow that holds
//! 48 V at equilibrium and prints the resulting anode pressure. Useful when
//! changing plant parameters: the pressure limit must leave headroom at the
//! highest scenario current.

use fcmpc::plant::{plant_output, settled_state, PlantInputs, PlantParams};

fn equilibrium_voltage(params: &PlantParams, q_h2: f64, q_air: f64, current: f64) -> Option<(f64, f64)> {
    let inputs = PlantInputs::new(q_h2, q_air, current);
    let s = settled_state(params, &inputs).ok()?;
    plant_output(&s, &inputs, params).ok()
}

fn main() {
    let params = PlantParams::default();
    let target = 48.0;
    println!("{:>6} {:>7} {:>8} {:>8}", "I (A)", "Q_air", "Q_H2", "P_H2");
    for current in [115.0, 125.0, 155.0] {
        for q_air in (300..=700).step_by(50).map(f64::from) {
            let (mut lo, mut hi) = (100.0, 400.0);
            let v_hi = equilibrium_voltage(&params, hi, q_air, current).map(|o| o.0);
            let v_lo = equilibrium_voltage(&params, lo, q_air, current).map(|o| o.0);
            match (v_lo, v_hi) {
                (Some(a), Some(b)) if a <= target && b >= target => {}
                _ => {
                    println!("{current:>6} {q_air:>7} {:>8} {:>8}", "-", "-");
                    continue;
                }
            }
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                match equilibrium_voltage(&params, mid, q_air, current) {
                    Some((v, _)) if v < target => lo = mid,
                    _ => hi = mid,
                }
            }
            let (_, p) = equilibrium_voltage(&params, hi, q_air, current).expect("bracketed");
            println!("{current:>6} {q_air:>7} {hi:>8.1} {p:>8.3}");
        }
    }
    let nominal = PlantInputs::new(250.0, 500.0, 125.0);
    if let Some((v, p)) = equilibrium_voltage(&params, nominal.q_h2, nominal.q_air, nominal.current) {
        println!("nominal (250, 500) lpm at 125 A: {v:.3} V, {p:.3} atm");
    }
}
