use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::christoffel::ChristoffelTensor;
use crate::numeric::{central_jacobian, FD_STEP};

pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type MatrixPartialsFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Largest accepted condition number of the inertia matrix.
pub const MAX_INERTIA_CONDITION: f64 = 1e12;

/// How partial derivatives of `M`, `V` and `F_a` are obtained.
///
/// `Analytic` uses the closures supplied to the builder and falls back to
/// central differences with the default step for any that are missing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeProvider {
    Analytic,
    CentralDifference { h: f64 },
}

impl Default for DerivativeProvider {
    fn default() -> Self {
        DerivativeProvider::CentralDifference { h: FD_STEP }
    }
}

impl DerivativeProvider {
    fn step(&self) -> f64 {
        match self {
            DerivativeProvider::CentralDifference { h } => *h,
            DerivativeProvider::Analytic => FD_STEP,
        }
    }

    fn analytic(&self) -> bool {
        matches!(self, DerivativeProvider::Analytic)
    }
}

#[derive(Clone)]
struct InputCovector {
    value: VectorFn,
    jacobian: Option<MatrixFn>,
}

/// Memo of Christoffel tensors keyed by configuration quantized to 1e-9.
#[derive(Default)]
pub struct ChristoffelCache {
    entries: Mutex<HashMap<Vec<i64>, ChristoffelTensor>>,
}

impl ChristoffelCache {
    const GRID: f64 = 1e-9;
    const CAPACITY: usize = 1 << 16;

    fn key(q: &DVector<f64>) -> Vec<i64> {
        q.iter().map(|x| (x / Self::GRID).round() as i64).collect()
    }

    fn get(&self, q: &DVector<f64>) -> Option<ChristoffelTensor> {
        self.entries.lock().ok()?.get(&Self::key(q)).cloned()
    }

    fn insert(&self, q: &DVector<f64>, gamma: &ChristoffelTensor) {
        if let Ok(mut map) = self.entries.lock() {
            if map.len() >= Self::CAPACITY {
                map.clear();
            }
            map.insert(Self::key(q), gamma.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A mechanical control system
///
/// `q̈ + Γ(q)(q̇,q̇) = −M⁻¹∂V/∂q + k(q)q̇ + Σ_a Y_a(q) u_a`, with
/// `Y_a = M⁻¹F_a`. All callables are shared, so cloning is cheap.
#[derive(Clone)]
pub struct MechanicalSystem {
    name: String,
    n: usize,
    inertia: MatrixFn,
    inertia_partials: Option<MatrixPartialsFn>,
    potential: Option<ScalarFn>,
    potential_gradient: Option<VectorFn>,
    damping: Option<MatrixFn>,
    inputs: Vec<InputCovector>,
    provider: DerivativeProvider,
    cache: Option<Arc<ChristoffelCache>>,
}

impl fmt::Debug for MechanicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanicalSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.inputs.len())
            .field("potential", &self.potential.is_some())
            .field("damping", &self.damping.is_some())
            .field("provider", &self.provider)
            .finish()
    }
}

pub struct MechanicalSystemBuilder {
    sys: MechanicalSystem,
}

impl MechanicalSystemBuilder {
    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.sys.name = name.into();
        self
    }

    /// Analytic partials `∂M/∂q^k`, one matrix per coordinate.
    pub fn inertia_partials<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.sys.inertia_partials = Some(Arc::new(f));
        self
    }

    pub fn potential<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        self.sys.potential = Some(Arc::new(f));
        self
    }

    pub fn potential_gradient<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.sys.potential_gradient = Some(Arc::new(f));
        self
    }

    /// Damping matrix `k(q)`, applied as `+k(q)q̇` on the acceleration side.
    pub fn damping<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.sys.damping = Some(Arc::new(f));
        self
    }

    /// Adds an input co-vector field `F_a`.
    pub fn input<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.sys.inputs.push(InputCovector {
            value: Arc::new(f),
            jacobian: None,
        });
        self
    }

    /// Adds an input co-vector field together with its Jacobian `∂F_a^i/∂q^j`.
    pub fn input_with_jacobian<F, J>(mut self, f: F, jac: J) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.sys.inputs.push(InputCovector {
            value: Arc::new(f),
            jacobian: Some(Arc::new(jac)),
        });
        self
    }

    pub fn provider(mut self, provider: DerivativeProvider) -> Self {
        self.sys.provider = provider;
        self
    }

    pub fn christoffel_cache(mut self) -> Self {
        self.sys.cache = Some(Arc::new(ChristoffelCache::default()));
        self
    }

    pub fn build(self) -> Result<MechanicalSystem> {
        let sys = self.sys;
        if sys.n == 0 {
            return Err(Error::Precondition(
                "system needs at least one degree of freedom".into(),
            ));
        }
        if sys.inputs.len() > sys.n {
            return Err(Error::Precondition(format!(
                "{} inputs exceed {} degrees of freedom",
                sys.inputs.len(),
                sys.n
            )));
        }
        if let DerivativeProvider::CentralDifference { h } = sys.provider {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Precondition(format!(
                    "finite-difference step {h} must be positive"
                )));
            }
        }
        Ok(sys)
    }
}

/// Cholesky factor of `M(q)` after the symmetry and conditioning checks.
pub struct InertiaFactor {
    pub matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    pub condition: f64,
}

impl InertiaFactor {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let scale = matrix.amax();
        let asym = (&matrix - matrix.transpose()).amax();
        if !scale.is_finite() || asym > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidInertia(format!(
                "not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let eig = SymmetricEigen::new(matrix.clone());
        let lmin = eig.eigenvalues.min();
        let lmax = eig.eigenvalues.max();
        let condition = if lmin > 0.0 {
            lmax / lmin
        } else {
            f64::INFINITY
        };
        if condition > MAX_INERTIA_CONDITION {
            return Err(Error::SingularInertia { condition });
        }
        let chol = Cholesky::new(matrix.clone()).ok_or(Error::SingularInertia { condition })?;
        Ok(InertiaFactor {
            matrix,
            chol,
            condition,
        })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

impl MechanicalSystem {
    pub fn builder<F>(n: usize, inertia: F) -> MechanicalSystemBuilder
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        MechanicalSystemBuilder {
            sys: MechanicalSystem {
                name: "custom".into(),
                n,
                inertia: Arc::new(inertia),
                inertia_partials: None,
                potential: None,
                potential_gradient: None,
                damping: None,
                inputs: Vec::new(),
                provider: DerivativeProvider::default(),
                cache: None,
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Degrees of freedom `n`.
    pub fn dof(&self) -> usize {
        self.n
    }

    /// Number of inputs `m`.
    pub fn input_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn provider(&self) -> DerivativeProvider {
        self.provider
    }

    /// Same system evaluated with a different derivative provider.
    pub fn with_provider(&self, provider: DerivativeProvider) -> Self {
        let mut s = self.clone();
        s.provider = provider;
        s.cache = self
            .cache
            .as_ref()
            .map(|_| Arc::new(ChristoffelCache::default()));
        s
    }

    /// Same system keeping only the listed inputs (0-based).
    pub fn with_inputs(&self, indices: &[usize]) -> Result<Self> {
        let mut s = self.clone();
        s.inputs = indices
            .iter()
            .map(|&i| {
                self.inputs
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Precondition(format!("input index {i} out of range")))
            })
            .collect::<Result<_>>()?;
        Ok(s)
    }

    /// Same system with potential and damping removed.
    pub fn without_forces(&self) -> Self {
        let mut s = self.clone();
        s.potential = None;
        s.potential_gradient = None;
        s.damping = None;
        s
    }

    pub fn has_potential(&self) -> bool {
        self.potential.is_some() || self.potential_gradient.is_some()
    }

    pub fn has_damping(&self) -> bool {
        self.damping.is_some()
    }

    pub fn christoffel_cache(&self) -> Option<&ChristoffelCache> {
        self.cache.as_deref()
    }

    pub(crate) fn check_dim(&self, q: &DVector<f64>, context: &'static str) -> Result<()> {
        if q.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: q.len(),
                context,
            });
        }
        Ok(())
    }

    pub fn inertia(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(q, "configuration")?;
        let m = (self.inertia)(q);
        if m.nrows() != self.n || m.ncols() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: m.nrows(),
                context: "inertia matrix",
            });
        }
        Ok(m)
    }

    pub fn factor_inertia(&self, q: &DVector<f64>) -> Result<InertiaFactor> {
        InertiaFactor::new(self.inertia(q)?)
    }

    /// `∂M/∂q^k` for `k = 0..n`.
    pub fn inertia_partials(&self, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_dim(q, "configuration")?;
        if self.provider.analytic() {
            if let Some(f) = &self.inertia_partials {
                return Ok(f(q));
            }
        }
        let h = self.provider.step();
        let mut out = Vec::with_capacity(self.n);
        let mut x = q.clone();
        for k in 0..self.n {
            let orig = x[k];
            x[k] = orig + h;
            let mp = (self.inertia)(&x);
            x[k] = orig - h;
            let mm = (self.inertia)(&x);
            x[k] = orig;
            out.push((mp - mm) / (2.0 * h));
        }
        Ok(out)
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        self.potential.as_ref().map_or(0.0, |v| v(q))
    }

    /// `∂V/∂q`; zero when the system has no potential.
    pub fn potential_gradient(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(q, "configuration")?;
        if self.provider.analytic() {
            if let Some(g) = &self.potential_gradient {
                return Ok(g(q));
            }
        }
        match (&self.potential, &self.potential_gradient) {
            (Some(v), _) => {
                let h = self.provider.step();
                let mut grad = DVector::zeros(self.n);
                let mut x = q.clone();
                for k in 0..self.n {
                    let orig = x[k];
                    x[k] = orig + h;
                    let vp = v(&x);
                    x[k] = orig - h;
                    let vm = v(&x);
                    x[k] = orig;
                    grad[k] = (vp - vm) / (2.0 * h);
                }
                Ok(grad)
            }
            (None, Some(g)) => Ok(g(q)),
            (None, None) => Ok(DVector::zeros(self.n)),
        }
    }

    /// Damping matrix `k(q)`; zero when absent.
    pub fn damping(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.damping
            .as_ref()
            .map_or_else(|| DMatrix::zeros(self.n, self.n), |k| k(q))
    }

    pub fn covector(&self, a: usize, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(q, "configuration")?;
        let input = self.input(a)?;
        Ok((input.value)(q))
    }

    /// Input co-vectors as columns of an `n×m` matrix.
    pub fn covectors(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(q, "configuration")?;
        let mut f = DMatrix::zeros(self.n, self.inputs.len());
        for (a, input) in self.inputs.iter().enumerate() {
            f.set_column(a, &(input.value)(q));
        }
        Ok(f)
    }

    pub fn covector_jacobian(&self, a: usize, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(q, "configuration")?;
        let input = self.input(a)?;
        if self.provider.analytic() {
            if let Some(j) = &input.jacobian {
                return Ok(j(q));
            }
        }
        let value = input.value.clone();
        central_jacobian(|x| Ok(value(x)), q, self.provider.step())
    }

    fn input(&self, a: usize) -> Result<&InputCovector> {
        self.inputs
            .get(a)
            .ok_or_else(|| Error::Precondition(format!("input index {a} out of range")))
    }

    /// Input vector field `Y_a(q) = M(q)⁻¹F_a(q)`.
    pub fn input_field(&self, a: usize, q: &DVector<f64>) -> Result<DVector<f64>> {
        let factor = self.factor_inertia(q)?;
        let y = factor.solve(&self.covector(a, q)?);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "input field {a} is not finite at {:?}",
                q.as_slice()
            )));
        }
        Ok(y)
    }

    /// All input vector fields as columns of an `n×m` matrix.
    pub fn input_fields(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let factor = self.factor_inertia(q)?;
        Ok(factor.solve_matrix(&self.covectors(q)?))
    }

    /// `∂Y_a/∂q = M⁻¹(∂F_a/∂q − (∂M/∂q^k) Y_a)` column by column.
    pub fn input_field_jacobian(&self, a: usize, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let factor = self.factor_inertia(q)?;
        let y = factor.solve(&self.covector(a, q)?);
        let dm = self.inertia_partials(q)?;
        let df = self.covector_jacobian(a, q)?;
        let mut rhs = df;
        for (k, dmk) in dm.iter().enumerate() {
            let col = rhs.column(k) - dmk * &y;
            rhs.set_column(k, &col);
        }
        Ok(factor.solve_matrix(&rhs))
    }

    /// Christoffel symbols of the kinetic-energy connection at `q`.
    pub fn christoffel(&self, q: &DVector<f64>) -> Result<ChristoffelTensor> {
        if let Some(cache) = &self.cache {
            if let Some(g) = cache.get(q) {
                return Ok(g);
            }
        }
        let factor = self.factor_inertia(q)?;
        let dm = self.inertia_partials(q)?;
        let gamma = ChristoffelTensor::from_inertia(&factor.inverse(), &dm);
        if let Some(cache) = &self.cache {
            cache.insert(q, &gamma);
        }
        Ok(gamma)
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<f64> {
        let m = self.inertia(q)?;
        Ok(0.5 * qdot.dot(&(m * qdot)))
    }

    /// Kinetic plus potential energy.
    pub fn energy(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<f64> {
        Ok(self.kinetic_energy(q, qdot)? + self.potential(q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_system() -> MechanicalSystem {
        MechanicalSystem::builder(2, |q| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 + q[0] * q[0]]))
        })
        .input(|_| DVector::from_vec(vec![1.0, 0.0]))
        .build()
        .unwrap()
    }

    #[test]
    fn rejects_more_inputs_than_dof() {
        let r = MechanicalSystem::builder(1, |_| DMatrix::identity(1, 1))
            .input(|_| DVector::from_element(1, 1.0))
            .input(|_| DVector::from_element(1, 1.0))
            .build();
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn singular_inertia_is_a_typed_error() {
        let sys = MechanicalSystem::builder(2, |_| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-14]))
        })
        .build()
        .unwrap();
        let q = DVector::zeros(2);
        assert!(matches!(
            sys.christoffel(&q),
            Err(Error::SingularInertia { .. })
        ));
    }

    #[test]
    fn asymmetric_inertia_is_rejected() {
        let sys =
            MechanicalSystem::builder(2, |_| DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]))
                .build()
                .unwrap();
        assert!(matches!(
            sys.inertia(&DVector::zeros(2)).and_then(InertiaFactor::new),
            Err(Error::InvalidInertia(_))
        ));
    }

    #[test]
    fn input_field_jacobian_matches_finite_difference() {
        let sys = diag_system();
        let sys = MechanicalSystem::builder(2, move |q| sys.inertia(q).unwrap())
            .input(|q| DVector::from_vec(vec![q[1].cos(), q[0] * q[1]]))
            .build()
            .unwrap();
        let q = DVector::from_vec(vec![0.4, -0.7]);
        let jac = sys.input_field_jacobian(0, &q).unwrap();
        let fd = central_jacobian(|x| sys.input_field(0, x), &q, 1e-6).unwrap();
        assert!((jac - fd).amax() < 1e-8);
    }

    #[test]
    fn cache_memoizes_christoffel() {
        let sys = MechanicalSystem::builder(2, |q| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 + q[0] * q[0]]))
        })
        .christoffel_cache()
        .build()
        .unwrap();
        let q = DVector::from_vec(vec![1.0, 0.0]);
        let a = sys.christoffel(&q).unwrap();
        let b = sys.christoffel(&q).unwrap();
        assert_eq!(a, b);
        assert_eq!(sys.christoffel_cache().unwrap().len(), 1);
    }
}
