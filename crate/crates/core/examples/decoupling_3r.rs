//! Decoupling fields of a three-link arm with two actuated joints, their
//! Lie-algebra rank and a rest-to-rest plan that switches between them.
//!
//! Run with `cargo run --release --example decoupling_3r`.

use geoctrl::dynamics::IntegratorConfig;
use geoctrl::kinematic::{
    kinematic_controllability, kinematic_plan, DecouplingCandidate, PlanSegment, TimeScaling,
    DEFAULT_RANK_TOL,
};
use geoctrl::models;
use nalgebra::DVector;

fn main() -> geoctrl::Result<()> {
    let q = DVector::from_vec(vec![0.3, 0.9, -0.6]);
    for pair in [[0, 1], [0, 2], [1, 2]] {
        let sys = models::three_link(&pair)?;
        let report = kinematic_controllability(&sys, &q, 2, DEFAULT_RANK_TOL)?;
        println!(
            "joints {}+{}: {} decoupling fields, worst residual {:.1e}, rank {} at depth {}",
            pair[0] + 1,
            pair[1] + 1,
            report.residuals.len(),
            report.residuals.iter().cloned().fold(0.0, f64::max),
            report.rank,
            report.depth
        );
    }

    let sys = models::three_link(&[0, 1])?;
    let fields = DecouplingCandidate::all_at(&sys, &q)?;
    let cfg = IntegratorConfig::rk4(0.01);
    for duration in [1.0, 2.0, 5.0] {
        for (label, scaling) in [
            ("cubic", TimeScaling::cubic(duration)?),
            ("trapezoidal", TimeScaling::trapezoidal(duration)?),
        ] {
            let segments = [
                PlanSegment::new(fields[0].clone(), 1.0, scaling),
                PlanSegment::new(fields[1].clone(), -1.0, scaling),
            ];
            let plan = kinematic_plan(&q, &segments, &cfg)?;
            println!(
                "T = {duration} {label:<11}: end q = {:.6?}, worst residual {:.2e}",
                plan.final_configuration().as_slice(),
                plan.reconstruction.max_residual()
            );
        }
    }
    Ok(())
}
