//! Christoffel symbols, covariant derivatives, symmetric products and the
//! lifted-field identities on small hand-checkable systems.
//!
//! Run with `cargo run --release --example geometry_operators`.

use std::sync::Arc;

use geoctrl::geometry::{
    covariant_derivative, homogeneity_defect, lifted_bracket, symmetric_product,
    DerivativeProvider, GeodesicSpray, InputField, Lift, LiftedBracket, LiftedVectorField,
    MechanicalSystem, SharedField, SharedLifted, SymmetricProductField,
};
use geoctrl::models;
use nalgebra::{DMatrix, DVector};

fn main() -> geoctrl::Result<()> {
    // Polar-like metric diag(1, 1 + q1²) with analytic partials.
    let sys = MechanicalSystem::builder(2, |q: &DVector<f64>| {
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 + q[0] * q[0]]))
    })
    .name("warped-plane")
    .inertia_partials(|q: &DVector<f64>| {
        vec![
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 2.0 * q[0]])),
            DMatrix::zeros(2, 2),
        ]
    })
    .provider(DerivativeProvider::Analytic)
    .input(|_: &DVector<f64>| DVector::from_vec(vec![0.0, 1.0]))
    .build()?;
    let q = DVector::from_vec(vec![0.7, -0.2]);
    let gamma = sys.christoffel(&q)?;
    println!(
        "Γ¹₂₂ = {:+.12} (hand value {:+.12})",
        gamma.get(0, 1, 1),
        -q[0]
    );
    println!(
        "Γ²₁₂ = {:+.12} (hand value {:+.12})",
        gamma.get(1, 0, 1),
        q[0] / (1.0 + q[0] * q[0])
    );

    let y = InputField::new(&sys, 0)?;
    println!(
        "∇_Y Y    = {:.6?}",
        covariant_derivative(&sys, &y, &y, &q)?.as_slice()
    );
    println!(
        "⟨Y:Y⟩    = {:.6?}",
        symmetric_product(&sys, &y, &y, &q)?.as_slice()
    );

    // PVTOL: the symmetric product of thrust and the coupled input.
    let pvtol = models::pvtol(1.0, 1.0, 1.0, 0.0, &[0, 1])?;
    let qp = DVector::from_vec(vec![0.1, -0.3, 0.4]);
    let y1: SharedField = Arc::new(InputField::new(&pvtol, 0)?);
    let y2: SharedField = Arc::new(InputField::new(&pvtol, 1)?);
    let s12 = SymmetricProductField::new(&pvtol, y1.clone(), y2.clone());
    println!(
        "PVTOL ⟨Y1:Y2⟩ = {:.6?}",
        geoctrl::geometry::VectorField::eval(&s12, &qp)?.as_slice()
    );

    // ⟨Y1:Y2⟩^lift = [Y2^lift, [Z, Y1^lift]] and the class bookkeeping.
    let z: SharedLifted = Arc::new(GeodesicSpray::new(&pvtol));
    let l1: SharedLifted = Arc::new(Lift::new(y1));
    let l2: SharedLifted = Arc::new(Lift::new(y2));
    let x = DVector::from_vec(vec![0.1, -0.3, 0.4, 0.5, 0.2, -0.7]);
    let inner: SharedLifted = Arc::new(LiftedBracket::new(z.clone(), l1.clone()));
    let rhs = lifted_bracket(l2.as_ref(), inner.as_ref(), &x)?;
    let lhs = Lift::new(Arc::new(s12)).eval(&x)?;
    println!("lift identity error {:.2e}", (lhs - rhs).norm());
    for (label, field) in [
        ("Z", z.clone()),
        ("[Z, Y1]", inner.clone()),
        (
            "[Y2, [Z, Y1]]",
            Arc::new(LiftedBracket::new(l2, inner)) as SharedLifted,
        ),
    ] {
        let class = field.class().unwrap_or(i32::MIN);
        println!(
            "{label:<14} class {class:+}, scaling defect at λ = 2: {:.1e}",
            homogeneity_defect(field.as_ref(), class, &x, 2.0)?
        );
    }
    Ok(())
}
