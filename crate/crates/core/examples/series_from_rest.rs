//! Motion from rest of a planar rigid body pushed sideways at an offset,
//! compared with the truncated series prediction for shrinking amplitudes.
//!
//! Run with `cargo run --release --example series_from_rest`.

use std::sync::Arc;

use geoctrl::dynamics::{IntegratorConfig, TimeFn};
use geoctrl::models;
use geoctrl::series::{truncation_study, ForcingField};
use nalgebra::DVector;

fn main() -> geoctrl::Result<()> {
    // body-y force at unit offset only
    let sys = models::planar_body(1.0, 1.0, 1.0, 0.0, &[1])?;
    let forcing = ForcingField::new(&sys, vec![Arc::new(|t: f64| t.sin()) as TimeFn])?;
    let q0 = DVector::zeros(3);
    let epsilons = [0.02, 0.01, 0.005, 0.0025];
    let cfg = IntegratorConfig::rk4(0.01);
    for order in 1..=3 {
        let table = truncation_study(&sys, &forcing, order, &q0, 2.0, &epsilons, &cfg)?;
        println!("K = {order}: slope {:.3}", table.slope);
        for (eps, err) in &table.rows {
            println!("  eps {eps:<8} err {err:.3e}");
        }
    }
    Ok(())
}
