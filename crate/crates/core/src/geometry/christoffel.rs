use nalgebra::{DMatrix, DVector};

/// Christoffel symbols `Γⁱ_jk` at a fixed configuration, stored densely as
/// `values[i·n² + j·n + k]`. Symmetric in `(j, k)` by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelTensor {
    n: usize,
    values: Vec<f64>,
}

impl ChristoffelTensor {
    pub fn zeros(n: usize) -> Self {
        ChristoffelTensor {
            n,
            values: vec![0.0; n * n * n],
        }
    }

    /// `Γⁱ_jk = ½ M^{im}(∂_k M_mj + ∂_j M_mk − ∂_m M_jk)` from the inverse
    /// inertia and the partials `dm[k] = ∂M/∂q^k`.
    ///
    /// The `(j,k)` and `(k,j)` evaluations are averaged so that numerical
    /// asymmetry of `∂M` cannot leak into the tensor.
    pub fn from_inertia(minv: &DMatrix<f64>, dm: &[DMatrix<f64>]) -> Self {
        let n = minv.nrows();
        // first-kind symbols c[m][j][k]
        let mut first = vec![0.0; n * n * n];
        for m in 0..n {
            for j in 0..n {
                for k in j..n {
                    let a = dm[k][(m, j)] + dm[j][(m, k)] - dm[m][(j, k)];
                    let b = dm[j][(m, k)] + dm[k][(m, j)] - dm[m][(k, j)];
                    let v = 0.25 * (a + b);
                    first[m * n * n + j * n + k] = v;
                    first[m * n * n + k * n + j] = v;
                }
            }
        }
        let mut gamma = ChristoffelTensor::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in j..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += minv[(i, m)] * first[m * n * n + j * n + k];
                    }
                    gamma.values[i * n * n + j * n + k] = s;
                    gamma.values[i * n * n + k * n + j] = s;
                }
            }
        }
        gamma
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[i * self.n * self.n + j * self.n + k]
    }

    pub fn set_symmetric(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.n;
        self.values[i * n * n + j * n + k] = v;
        self.values[i * n * n + k * n + j] = v;
    }

    /// `Γⁱ_jk xʲ yᵏ`.
    pub fn contract(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |i, _| {
            let mut s = 0.0;
            for j in 0..n {
                if x[j] == 0.0 {
                    continue;
                }
                for k in 0..n {
                    s += self.values[i * n * n + j * n + k] * x[j] * y[k];
                }
            }
            s
        })
    }

    /// `Γ(q, v)ⁱ = Γⁱ_jk vʲ vᵏ`.
    pub fn quadratic(&self, v: &DVector<f64>) -> DVector<f64> {
        self.contract(v, v)
    }

    /// Matrix `Aⁱ_k = Γⁱ_jk vʲ`, so that `∂Γ(q,v)/∂v = 2A`.
    pub fn contract_first(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, k| {
            (0..n)
                .map(|j| self.values[i * n * n + j * n + k] * v[j])
                .sum()
        })
    }

    /// Largest `|Γⁱ_jk − Γⁱ_kj|`; zero by construction.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    worst = worst.max((self.get(i, j, k) - self.get(i, k, j)).abs());
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}
