//! Affine-connection geometry of a mechanical system: Christoffel symbols,
//! covariant derivatives, Lie brackets, symmetric products and the lifted
//! vector fields on the state space.

pub mod christoffel;
pub mod field;
pub mod lifted;
pub mod system;

use nalgebra::{DMatrix, DVector};

pub use christoffel::ChristoffelTensor;
pub use field::{
    FnField, InputField, LieBracketField, LinearCombination, PotentialForceField, SharedField,
    SymmetricProductField, VectorField,
};
pub use lifted::{
    homogeneity_defect, lifted_bracket, DampingLift, GeodesicSpray, Lift, LiftedBracket,
    LiftedVectorField, SharedLifted,
};
pub use system::{DerivativeProvider, InertiaFactor, MechanicalSystem, MechanicalSystemBuilder};

use crate::error::Result;

/// Christoffel symbols of `sys` at `q`.
pub fn christoffel(sys: &MechanicalSystem, q: &DVector<f64>) -> Result<ChristoffelTensor> {
    sys.christoffel(q)
}

/// `(∇_X Y)ⁱ = (∂Yⁱ/∂qʲ)Xʲ + Γⁱ_jk XʲYᵏ`.
pub fn covariant_derivative(
    sys: &MechanicalSystem,
    x: &dyn VectorField,
    y: &dyn VectorField,
    q: &DVector<f64>,
) -> Result<DVector<f64>> {
    let gamma = sys.christoffel(q)?;
    let xv = x.eval(q)?;
    let yv = y.eval(q)?;
    let jy = y.jacobian(q)?;
    Ok(jy * &xv + gamma.contract(&xv, &yv))
}

/// `[X,Y]ⁱ = (∂Yⁱ/∂qʲ)Xʲ − (∂Xⁱ/∂qʲ)Yʲ`.
pub fn lie_bracket(
    x: &dyn VectorField,
    y: &dyn VectorField,
    q: &DVector<f64>,
) -> Result<DVector<f64>> {
    let xv = x.eval(q)?;
    let yv = y.eval(q)?;
    Ok(lie_bracket_parts(
        &xv,
        &x.jacobian(q)?,
        &yv,
        &y.jacobian(q)?,
    ))
}

/// `⟨Ya:Yb⟩ = ∇_{Ya}Yb + ∇_{Yb}Ya`.
pub fn symmetric_product(
    sys: &MechanicalSystem,
    ya: &dyn VectorField,
    yb: &dyn VectorField,
    q: &DVector<f64>,
) -> Result<DVector<f64>> {
    let gamma = sys.christoffel(q)?;
    let a = ya.eval(q)?;
    let b = yb.eval(q)?;
    Ok(symmetric_product_parts(
        &gamma,
        &a,
        &ya.jacobian(q)?,
        &b,
        &yb.jacobian(q)?,
    ))
}

pub(crate) fn lie_bracket_parts(
    x: &DVector<f64>,
    jx: &DMatrix<f64>,
    y: &DVector<f64>,
    jy: &DMatrix<f64>,
) -> DVector<f64> {
    jy * x - jx * y
}

pub(crate) fn symmetric_product_parts(
    gamma: &ChristoffelTensor,
    ya: &DVector<f64>,
    ja: &DMatrix<f64>,
    yb: &DVector<f64>,
    jb: &DMatrix<f64>,
) -> DVector<f64> {
    ja * yb + jb * ya + gamma.contract(ya, yb) + gamma.contract(yb, ya)
}

/// Symmetric products `⟨Y_a:Y_b⟩(q)` of the input fields for all `a ≤ b`,
/// indexed as `out[a][b]` (and mirrored), computed from one Christoffel
/// evaluation.
pub fn input_symmetric_products(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let m = sys.input_count();
    let gamma = sys.christoffel(q)?;
    let ys = sys.input_fields(q)?;
    let jacs = (0..m)
        .map(|a| sys.input_field_jacobian(a, q))
        .collect::<Result<Vec<_>>>()?;
    let cols: Vec<DVector<f64>> = (0..m).map(|a| ys.column(a).into_owned()).collect();
    let mut out = vec![vec![DVector::zeros(sys.dof()); m]; m];
    for a in 0..m {
        for b in a..m {
            let s = symmetric_product_parts(&gamma, &cols[a], &jacs[a], &cols[b], &jacs[b]);
            out[b][a] = s.clone();
            out[a][b] = s;
        }
    }
    Ok(out)
}
