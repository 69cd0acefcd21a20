//! Oscillatory control synthesis via averaging.
//!
//! Inputs `u_a = v_a(t,q) + (1/ε) w_a(t/ε, t)` with `w_a` periodic and
//! zero-mean in the fast time produce, to `O(ε)`, the averaged dynamics
//!
//! ```text
//! ∇_ṙ ṙ = Y₀ + k ṙ + Σ_a v_a Y_a
//!        + Σ_a (½Ū_a² − Ū_aa) ⟨Y_a:Y_a⟩ + Σ_{a<b} (Ū_a Ū_b − Ū_ab) ⟨Y_a:Y_b⟩
//! ```
//!
//! where `Ū` are averaged iterated integrals of the fast inputs. The
//! synthesis picks `w_a` from distinct frequencies `ψ_N(τ) = √2 N cos(Nτ)`
//! and `v_a` so that the averaged system reads
//! `∇_ṙ ṙ = Y₀ + k ṙ + Σ_a z_a Y_a + Σ_{b<c} z_bc ⟨Y_b:Y_c⟩`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    simulate, ControlLaw, IntegratorConfig, SecondOrderDynamics, State, TimeFn, Trajectory,
    ZeroControl,
};
use crate::error::{Error, Result};
use crate::geometry::{input_symmetric_products, MechanicalSystem};
use crate::numeric::{cumulative_simpson, fmt17, loglog_slope, numerical_rank};

/// Default fast period.
pub const DEFAULT_PERIOD: f64 = 2.0 * PI;

/// Quadrature nodes per period for averaged integrals.
pub const DEFAULT_QUADRATURE_NODES: usize = 4001;

/// Minimum accepted quadrature node count.
pub const MIN_QUADRATURE_NODES: usize = 2001;

/// Default tolerance on the span assumption for `⟨Y_a:Y_a⟩`.
pub const DEFAULT_SPAN_TOL: f64 = 1e-6;

/// Fast input `(τ, t) ↦ w(τ, t)`.
pub type FastFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Slow input `(t, q) ↦ v(t, q) ∈ ℝᵐ`.
pub type SlowFn = Arc<dyn Fn(f64, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;

/// `ψ_N(τ) = √2 N cos(Nτ)`.
pub fn psi(n: usize) -> impl Fn(f64) -> f64 + Send + Sync + Clone {
    assert!(n >= 1, "frequency index must be at least 1");
    let nf = n as f64;
    move |tau: f64| SQRT_2 * nf * (nf * tau).cos()
}

fn quadrature_nodes(nodes: usize) -> Result<usize> {
    if nodes < MIN_QUADRATURE_NODES {
        return Err(Error::Precondition(format!(
            "averaged integrals need at least {MIN_QUADRATURE_NODES} nodes per period, got {nodes}"
        )));
    }
    // composite Simpson wants an odd node count
    Ok(nodes | 1)
}

/// Running integrals `∫₀ˢ u_a(τ, t) dτ` sampled on the period grid.
fn running_integrals(u: &[FastFn], period: f64, t: f64, nodes: usize) -> Vec<Vec<f64>> {
    let h = period / (nodes - 1) as f64;
    u.iter()
        .map(|f| {
            let samples: Vec<f64> = (0..nodes).map(|i| f(i as f64 * h, t)).collect();
            cumulative_simpson(&samples, h)
        })
        .collect()
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `Ū_k(t) = (1/(T Π k_a!)) ∫₀ᵀ Π_a (∫₀ˢ u_a(τ,t) dτ)^{k_a} ds` by composite
/// Simpson with [`DEFAULT_QUADRATURE_NODES`] nodes.
pub fn averaged_iterated_integral(u: &[FastFn], k: &[usize], period: f64, t: f64) -> Result<f64> {
    averaged_iterated_integral_with(u, k, period, t, DEFAULT_QUADRATURE_NODES)
}

pub fn averaged_iterated_integral_with(
    u: &[FastFn],
    k: &[usize],
    period: f64,
    t: f64,
    nodes: usize,
) -> Result<f64> {
    if k.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: k.len(),
            context: "multi-index",
        });
    }
    if k.iter().sum::<usize>() == 0 {
        return Err(Error::Precondition(
            "multi-index must have positive total order".into(),
        ));
    }
    if !(period > 0.0) {
        return Err(Error::Precondition(format!(
            "period {period} must be positive"
        )));
    }
    let nodes = quadrature_nodes(nodes)?;
    let active: Vec<(usize, i32)> = k
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(a, &e)| (a, e as i32))
        .collect();
    let fns: Vec<FastFn> = active.iter().map(|(a, _)| u[*a].clone()).collect();
    let integrals = running_integrals(&fns, period, t, nodes);
    let h = period / (nodes - 1) as f64;
    let product: Vec<f64> = (0..nodes)
        .map(|i| {
            active
                .iter()
                .zip(&integrals)
                .map(|((_, e), w)| w[i].powi(*e))
                .product()
        })
        .collect();
    let total = cumulative_simpson(&product, h)[nodes - 1];
    let denom: f64 = k.iter().map(|&e| factorial(e)).product();
    Ok(total / (period * denom))
}

/// First- and second-order averaged integrals at one slow time.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedIntegrals {
    /// `Ū_a`.
    pub first: DVector<f64>,
    /// `Ū_ab` (symmetric; the diagonal holds `Ū_aa`).
    pub second: DMatrix<f64>,
}

impl AveragedIntegrals {
    pub fn compute(u: &[FastFn], period: f64, t: f64, nodes: usize) -> Result<Self> {
        let nodes = quadrature_nodes(nodes)?;
        let m = u.len();
        let w = running_integrals(u, period, t, nodes);
        let h = period / (nodes - 1) as f64;
        let mean = |vals: Vec<f64>| cumulative_simpson(&vals, h)[nodes - 1] / period;
        let first = DVector::from_fn(m, |a, _| mean(w[a].clone()));
        let mut second = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in a..m {
                let prod: Vec<f64> = w[a].iter().zip(&w[b]).map(|(x, y)| x * y).collect();
                // k_aa has Π k! = 2; k_ab with a ≠ b has 1
                let v = if a == b { 0.5 * mean(prod) } else { mean(prod) };
                second[(a, b)] = v;
                second[(b, a)] = v;
            }
        }
        Ok(AveragedIntegrals { first, second })
    }

    /// Coefficient of `⟨Y_a:Y_b⟩` in the averaged dynamics (`a ≤ b`).
    pub fn product_coefficient(&self, a: usize, b: usize) -> f64 {
        if a == b {
            0.5 * self.first[a].powi(2) - self.second[(a, a)]
        } else {
            self.first[a] * self.first[b] - self.second[(a, b)]
        }
    }
}

/// Scalar gain schedule `t ↦ z(t)`.
#[derive(Clone)]
pub enum Gain {
    Const(f64),
    /// `A sin(ω t + φ)`.
    Sinusoid {
        amplitude: f64,
        omega: f64,
        phase: f64,
    },
    Custom(TimeFn),
}

impl Gain {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Gain::Const(c) => *c,
            Gain::Sinusoid {
                amplitude,
                omega,
                phase,
            } => amplitude * (omega * t + phase).sin(),
            Gain::Custom(f) => f(t),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Gain::Const(c) if *c == 0.0)
    }
}

impl Default for Gain {
    fn default() -> Self {
        Gain::Const(0.0)
    }
}

impl fmt::Debug for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gain::Const(c) => write!(f, "const({c})"),
            Gain::Sinusoid {
                amplitude,
                omega,
                phase,
            } => write!(f, "sinusoid({amplitude}, {omega}, {phase})"),
            Gain::Custom(_) => write!(f, "custom"),
        }
    }
}

/// Parses `const(c)`, `sinusoid(A, ω, φ)` or a bare number.
impl FromStr for Gain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(c) = s.parse::<f64>() {
            return Ok(Gain::Const(c));
        }
        let bad = || {
            Error::Config(format!(
                "invalid gain `{s}`; expected const(c) or sinusoid(A, omega, phase)"
            ))
        };
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let args = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        match (s[..open].trim(), args.as_slice()) {
            ("const", [c]) => Ok(Gain::Const(*c)),
            ("sinusoid", [amplitude, omega]) => Ok(Gain::Sinusoid {
                amplitude: *amplitude,
                omega: *omega,
                phase: 0.0,
            }),
            ("sinusoid", [amplitude, omega, phase]) => Ok(Gain::Sinusoid {
                amplitude: *amplitude,
                omega: *omega,
                phase: *phase,
            }),
            _ => Err(bad()),
        }
    }
}

/// Desired averaged inputs `z_a(t)`, pair gains `z_bc(t)` and the pair
/// frequency enumeration `N(b, c)`. Indices are 0-based.
#[derive(Debug, Clone)]
pub struct AveragedGains {
    m: usize,
    inputs: Vec<Gain>,
    pairs: BTreeMap<(usize, usize), Gain>,
    enumeration: BTreeMap<(usize, usize), usize>,
}

impl AveragedGains {
    /// All gains zero, lexicographic enumeration `N = 1, 2, …`.
    pub fn new(m: usize) -> Self {
        let mut enumeration = BTreeMap::new();
        let mut next = 1;
        for a in 0..m {
            for b in a + 1..m {
                enumeration.insert((a, b), next);
                next += 1;
            }
        }
        AveragedGains {
            m,
            inputs: vec![Gain::default(); m],
            pairs: BTreeMap::new(),
            enumeration,
        }
    }

    pub fn input_count(&self) -> usize {
        self.m
    }

    pub fn with_input(mut self, a: usize, gain: Gain) -> Result<Self> {
        if a >= self.m {
            return Err(Error::Precondition(format!(
                "input {a} out of range 0..{}",
                self.m
            )));
        }
        self.inputs[a] = gain;
        Ok(self)
    }

    pub fn with_pair(mut self, b: usize, c: usize, gain: Gain) -> Result<Self> {
        if !(b < c && c < self.m) {
            return Err(Error::Precondition(format!(
                "pair ({b}, {c}) must satisfy b < c < {}",
                self.m
            )));
        }
        self.pairs.insert((b, c), gain);
        Ok(self)
    }

    /// Overrides the frequency enumeration; must be injective, cover every
    /// pair and use indices ≥ 1.
    pub fn with_enumeration(
        mut self,
        enumeration: BTreeMap<(usize, usize), usize>,
    ) -> Result<Self> {
        let expected: Vec<_> = self.enumeration.keys().copied().collect();
        let given: Vec<_> = enumeration.keys().copied().collect();
        if expected != given {
            return Err(Error::Precondition(
                "enumeration must cover exactly the pairs b < c".into(),
            ));
        }
        let mut seen: Vec<usize> = enumeration.values().copied().collect();
        seen.sort_unstable();
        if seen.first().is_some_and(|&n| n == 0) || seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Precondition(
                "enumeration must be injective with values ≥ 1".into(),
            ));
        }
        self.enumeration = enumeration;
        Ok(self)
    }

    pub fn input(&self, a: usize) -> &Gain {
        &self.inputs[a]
    }

    /// `z_bc(t)`; zero for pairs that were never set.
    pub fn pair_at(&self, b: usize, c: usize, t: f64) -> f64 {
        self.pairs.get(&(b, c)).map_or(0.0, |g| g.eval(t))
    }

    pub fn frequency(&self, b: usize, c: usize) -> usize {
        self.enumeration[&(b, c)]
    }

    pub fn max_frequency(&self) -> usize {
        self.enumeration.values().copied().max().unwrap_or(1)
    }

    /// `z_a(t)` as a vector.
    pub fn inputs_at(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(self.m, |a, _| self.inputs[a].eval(t))
    }

    /// `w_a(τ, t) = −Σ_{c<a} ψ_{N(c,a)}(τ) + Σ_{c>a} z_ac(t) ψ_{N(a,c)}(τ)`.
    pub fn fast(&self, a: usize, tau: f64, t: f64) -> f64 {
        let mut w = 0.0;
        for c in 0..a {
            w -= psi(self.frequency(c, a))(tau);
        }
        for c in a + 1..self.m {
            let z = self.pair_at(a, c, t);
            if z != 0.0 {
                w += z * psi(self.frequency(a, c))(tau);
            }
        }
        w
    }

    /// Weight `b − 1 + Σ_{c>b} z_bc(t)²` (1-based `b`) multiplying
    /// `½⟨Y_b:Y_b⟩`, i.e. `Ū_bb` of the synthesized fast inputs.
    pub fn self_product_weight(&self, b: usize, t: f64) -> f64 {
        b as f64
            + (b + 1..self.m)
                .map(|c| self.pair_at(b, c, t).powi(2))
                .sum::<f64>()
    }
}

/// `⟨Y_a:Y_a⟩(q) = Σ_b α_ab(q) Y_b(q)` solved by least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanCoefficients {
    /// `alpha[(a, b)] = α_ab`.
    pub alpha: DMatrix<f64>,
    /// `max_a ‖⟨Y_a:Y_a⟩ − Σ_b α_ab Y_b‖ / max(1, ‖⟨Y_a:Y_a⟩‖)`.
    pub residual: f64,
}

pub fn span_coefficients(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    tol: f64,
) -> Result<SpanCoefficients> {
    let m = sys.input_count();
    let ys = sys.input_fields(q)?;
    let svd = ys.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if m == 0 || smax == 0.0 || svd.singular_values.min() <= 1e-10 * smax {
        return Err(Error::RankDeficient {
            q: q.iter().copied().collect(),
        });
    }
    let products = input_symmetric_products(sys, q)?;
    let mut alpha = DMatrix::zeros(m, m);
    let mut residual: f64 = 0.0;
    for a in 0..m {
        let target = &products[a][a];
        let coeffs = svd
            .solve(target, 0.0)
            .map_err(|e| Error::Precondition(format!("least-squares solve failed: {e}")))?;
        residual = residual.max((target - &ys * &coeffs).norm() / target.norm().max(1.0));
        alpha.row_mut(a).copy_from(&coeffs.transpose());
    }
    if residual > tol {
        return Err(Error::AssumptionViolation {
            residual,
            q: q.iter().copied().collect(),
        });
    }
    Ok(SpanCoefficients { alpha, residual })
}

/// Synthesized inputs `u_a(t, q) = v_a(t, q) + (1/ε) w_a(t/ε, t)`.
#[derive(Debug, Clone)]
pub struct OscillatoryControl {
    sys: MechanicalSystem,
    gains: Arc<AveragedGains>,
    epsilon: f64,
    period: f64,
    span_tol: f64,
}

impl OscillatoryControl {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn gains(&self) -> &AveragedGains {
        &self.gains
    }

    /// `v(t, q)`; `α` is evaluated at `q` only when some weight is non-zero.
    pub fn slow(&self, t: f64, q: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.gains.m;
        let mut v = self.gains.inputs_at(t);
        let weights: Vec<f64> = (0..m)
            .map(|b| self.gains.self_product_weight(b, t))
            .collect();
        if weights.iter().any(|&w| w != 0.0) {
            let alpha = span_coefficients(&self.sys, q, self.span_tol)?.alpha;
            for a in 0..m {
                v[a] += 0.5 * (0..m).map(|b| alpha[(b, a)] * weights[b]).sum::<f64>();
            }
        }
        Ok(v)
    }

    /// `w(τ, t)`.
    pub fn fast(&self, tau: f64, t: f64) -> DVector<f64> {
        DVector::from_fn(self.gains.m, |a, _| self.gains.fast(a, tau, t))
    }

    /// Fast inputs as separate callables, for quadrature.
    pub fn fast_fns(&self) -> Vec<FastFn> {
        (0..self.gains.m)
            .map(|a| {
                let g = self.gains.clone();
                Arc::new(move |tau: f64, t: f64| g.fast(a, tau, t)) as FastFn
            })
            .collect()
    }

    pub fn slow_fn(&self) -> SlowFn {
        let me = self.clone();
        Arc::new(move |t, q| me.slow(t, q))
    }
}

impl ControlLaw for OscillatoryControl {
    fn input_count(&self) -> usize {
        self.gains.m
    }

    fn eval(&self, t: f64, q: &DVector<f64>, _qdot: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.slow(t, q)? + self.fast(t / self.epsilon, t) / self.epsilon)
    }

    fn fastest_period(&self) -> Option<f64> {
        (self.gains.m > 1).then(|| self.epsilon * self.period / self.gains.max_frequency() as f64)
    }
}

/// Builds the oscillatory inputs realising `gains` on average.
pub fn synthesize_controls(
    sys: &MechanicalSystem,
    gains: &AveragedGains,
    epsilon: f64,
    period: f64,
) -> Result<OscillatoryControl> {
    if gains.m != sys.input_count() {
        return Err(Error::DimensionMismatch {
            expected: sys.input_count(),
            actual: gains.m,
            context: "averaged gains",
        });
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) || !(period > 0.0 && period.is_finite()) {
        return Err(Error::Precondition(format!(
            "need ε > 0 and T > 0 (got {epsilon}, {period})"
        )));
    }
    if (period - DEFAULT_PERIOD).abs() > 1e-12 {
        // ψ_N is 2π/N periodic, so T must be a multiple of 2π for zero mean
        let k = period / DEFAULT_PERIOD;
        if (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
            return Err(Error::Precondition(format!(
                "period {period} must be a multiple of 2π"
            )));
        }
    }
    Ok(OscillatoryControl {
        sys: sys.clone(),
        gains: Arc::new(gains.clone()),
        epsilon,
        period,
        span_tol: DEFAULT_SPAN_TOL,
    })
}

/// Final averaged form
/// `∇_ṙ ṙ = Y₀ + k ṙ + Σ_a z_a Y_a + Σ_{b<c} z_bc ⟨Y_b:Y_c⟩`.
#[derive(Debug, Clone)]
pub struct AveragedSystem {
    sys: MechanicalSystem,
    gains: Arc<AveragedGains>,
}

pub fn averaged_system(sys: &MechanicalSystem, gains: &AveragedGains) -> Result<AveragedSystem> {
    if gains.m != sys.input_count() {
        return Err(Error::DimensionMismatch {
            expected: sys.input_count(),
            actual: gains.m,
            context: "averaged gains",
        });
    }
    Ok(AveragedSystem {
        sys: sys.clone(),
        gains: Arc::new(gains.clone()),
    })
}

/// Unforced acceleration `−Γ(q̇,q̇) − M⁻¹∇V + k q̇` plus `forcing`.
fn forced_acceleration(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    forcing: DVector<f64>,
) -> Result<DVector<f64>> {
    let zero = DVector::zeros(sys.input_count());
    Ok(crate::dynamics::acceleration(sys, q, qdot, &zero)? + forcing)
}

impl AveragedSystem {
    /// Columns `Y_a` followed by `⟨Y_b:Y_c⟩`, `b < c`.
    pub fn input_distribution(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = self.gains.m;
        let ys = self.sys.input_fields(q)?;
        let products = input_symmetric_products(&self.sys, q)?;
        let mut cols: Vec<DVector<f64>> = (0..m).map(|a| ys.column(a).into_owned()).collect();
        for b in 0..m {
            for c in b + 1..m {
                cols.push(products[b][c].clone());
            }
        }
        Ok(DMatrix::from_columns(&cols))
    }

    pub fn input_distribution_rank(&self, q: &DVector<f64>, tol: f64) -> Result<usize> {
        Ok(numerical_rank(&self.input_distribution(q)?, tol))
    }

    /// `Σ_a z_a Y_a + Σ_{b<c} z_bc ⟨Y_b:Y_c⟩` at `(t, q)`.
    pub fn forcing(&self, t: f64, q: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.gains.m;
        let mut f = self.sys.input_fields(q)? * self.gains.inputs_at(t);
        if m > 1 && self.gains.pairs.values().any(|g| !g.is_zero()) {
            let products = input_symmetric_products(&self.sys, q)?;
            for b in 0..m {
                for c in b + 1..m {
                    let z = self.gains.pair_at(b, c, t);
                    if z != 0.0 {
                        f += &products[b][c] * z;
                    }
                }
            }
        }
        Ok(f)
    }
}

impl SecondOrderDynamics for AveragedSystem {
    fn dof(&self) -> usize {
        self.sys.dof()
    }

    fn input_count(&self) -> usize {
        0
    }

    fn acceleration(
        &self,
        t: f64,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        forced_acceleration(&self.sys, q, qdot, self.forcing(t, q)?)
    }
}

/// The general averaged equation for arbitrary slow and fast inputs, with
/// the `Ū` coefficients obtained by quadrature at every slow time.
#[derive(Clone)]
pub struct GeneralAveragedSystem {
    sys: MechanicalSystem,
    slow: SlowFn,
    fast: Vec<FastFn>,
    period: f64,
    nodes: usize,
    cache: Arc<Mutex<Vec<(u64, AveragedIntegrals)>>>,
}

impl GeneralAveragedSystem {
    pub fn new(
        sys: &MechanicalSystem,
        slow: SlowFn,
        fast: Vec<FastFn>,
        period: f64,
    ) -> Result<Self> {
        if fast.len() != sys.input_count() {
            return Err(Error::DimensionMismatch {
                expected: sys.input_count(),
                actual: fast.len(),
                context: "fast inputs",
            });
        }
        Ok(GeneralAveragedSystem {
            sys: sys.clone(),
            slow,
            fast,
            period,
            nodes: DEFAULT_QUADRATURE_NODES,
            cache: Arc::new(Mutex::new(Vec::new())),
        })
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }

    pub fn integrals(&self, t: f64) -> Result<AveragedIntegrals> {
        let key = t.to_bits();
        if let Some((_, hit)) = self
            .cache
            .lock()
            .expect("cache lock")
            .iter()
            .find(|(k, _)| *k == key)
        {
            return Ok(hit.clone());
        }
        let value = AveragedIntegrals::compute(&self.fast, self.period, t, self.nodes)?;
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.len() >= 4 {
            cache.remove(0);
        }
        cache.push((key, value.clone()));
        Ok(value)
    }

    /// `Σ v_a Y_a + Σ_{a≤b} c_ab ⟨Y_a:Y_b⟩` at `(t, q)`.
    pub fn forcing(&self, t: f64, q: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.sys.input_count();
        let ubar = self.integrals(t)?;
        let mut f = self.sys.input_fields(q)? * (self.slow)(t, q)?;
        let products = input_symmetric_products(&self.sys, q)?;
        for a in 0..m {
            for b in a..m {
                let c = ubar.product_coefficient(a, b);
                if c != 0.0 {
                    f += &products[a][b] * c;
                }
            }
        }
        Ok(f)
    }
}

impl SecondOrderDynamics for GeneralAveragedSystem {
    fn dof(&self) -> usize {
        self.sys.dof()
    }

    fn input_count(&self) -> usize {
        0
    }

    fn acceleration(
        &self,
        t: f64,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        forced_acceleration(&self.sys, q, qdot, self.forcing(t, q)?)
    }
}

/// One line of the `Ū` coefficient audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub time: f64,
    /// 0-based inputs; `a == b` for self products.
    pub a: usize,
    pub b: usize,
    /// Coefficient of `⟨Y_a:Y_b⟩` from quadrature, including the slow-input
    /// compensation for self products.
    pub coefficient: f64,
    /// `0` for self products, `z_ab(t)` for pairs.
    pub target: f64,
    pub difference: f64,
}

/// `Ū` audit of the synthesized fast inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientAudit {
    pub entries: Vec<AuditEntry>,
}

impl CoefficientAudit {
    pub fn max_self_difference(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.a == e.b)
            .map(|e| e.difference)
            .fold(0.0, f64::max)
    }

    pub fn max_pair_difference(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.a != e.b)
            .map(|e| e.difference)
            .fold(0.0, f64::max)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// Evaluates the averaged coefficients of the synthesized fast inputs by
/// quadrature at each time in `times` and compares them with their targets.
pub fn coefficient_audit(
    gains: &AveragedGains,
    period: f64,
    times: &[f64],
) -> Result<CoefficientAudit> {
    let m = gains.m;
    let g = Arc::new(gains.clone());
    let fast: Vec<FastFn> = (0..m)
        .map(|a| {
            let g = g.clone();
            Arc::new(move |tau: f64, t: f64| g.fast(a, tau, t)) as FastFn
        })
        .collect();
    let mut entries = Vec::new();
    for &t in times {
        let ubar = AveragedIntegrals::compute(&fast, period, t, DEFAULT_QUADRATURE_NODES)?;
        for a in 0..m {
            for b in a..m {
                let (coefficient, target) = if a == b {
                    (
                        ubar.product_coefficient(a, a) + 0.5 * gains.self_product_weight(a, t),
                        0.0,
                    )
                } else {
                    (ubar.product_coefficient(a, b), gains.pair_at(a, b, t))
                };
                entries.push(AuditEntry {
                    time: t,
                    a,
                    b,
                    coefficient,
                    target,
                    difference: (coefficient - target).abs(),
                });
            }
        }
    }
    Ok(CoefficientAudit { entries })
}

/// Options for [`convergence_study`].
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceOptions {
    pub period: f64,
    /// RK4 steps per fastest fast-input period at the smallest `ε`.
    pub points_per_period: usize,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        ConvergenceOptions {
            period: DEFAULT_PERIOD,
            points_per_period: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub max_err: f64,
    /// Slope against the previous row; `None` for the first.
    pub slope_partial: Option<f64>,
}

/// Errors of the oscillatory runs against the averaged reference.
#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    pub slope: f64,
    pub dt: f64,
    pub reference: Trajectory,
    pub runs: Vec<Trajectory>,
}

impl ConvergenceStudy {
    /// Errors strictly decrease as `ε` decreases.
    pub fn is_monotone(&self) -> bool {
        let mut rows: Vec<&ConvergenceRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
        rows.windows(2).all(|w| w[1].max_err < w[0].max_err)
    }

    /// CSV with header `epsilon,max_err,slope_partial`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epsilon,max_err,slope_partial")?;
        for r in &self.rows {
            let slope = r.slope_partial.map_or_else(|| "nan".to_string(), fmt17);
            writeln!(w, "{},{},{}", fmt17(r.epsilon), fmt17(r.max_err), slope)?;
        }
        Ok(())
    }
}

/// Simulates the true system under the synthesized inputs for each `ε`
/// (in parallel) and the averaged system once, all with one common step
/// that resolves the fastest input period at the smallest `ε`.
pub fn convergence_study(
    sys: &MechanicalSystem,
    gains: &AveragedGains,
    x0: &State,
    t_final: f64,
    epsilons: &[f64],
    opts: &ConvergenceOptions,
) -> Result<ConvergenceStudy> {
    if epsilons.is_empty() || epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Precondition(
            "ε list must be non-empty and positive".into(),
        ));
    }
    if opts.points_per_period < 50 {
        return Err(Error::Precondition(
            "need at least 50 steps per fast period".into(),
        ));
    }
    if !(t_final > 0.0) {
        return Err(Error::Precondition(format!(
            "final time {t_final} must be positive"
        )));
    }
    let eps_min = epsilons.iter().copied().fold(f64::INFINITY, f64::min);
    let fastest = eps_min * opts.period / gains.max_frequency() as f64;
    let steps = (t_final / (fastest / opts.points_per_period as f64)).ceil() as usize;
    let cfg = IntegratorConfig::rk4(t_final / steps as f64);
    let controls = epsilons
        .iter()
        .map(|&e| synthesize_controls(sys, gains, e, opts.period))
        .collect::<Result<Vec<_>>>()?;

    let averaged = averaged_system(sys, gains)?;
    let reference = simulate(&averaged, &ZeroControl(0), x0, 0.0, t_final, &cfg)?;
    let runs = controls
        .par_iter()
        .map(|c| simulate(sys, c, x0, 0.0, t_final, &cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(epsilons.len());
    for (&epsilon, run) in epsilons.iter().zip(&runs) {
        let max_err = run.max_configuration_error(&reference)?;
        let slope_partial = rows
            .last()
            .map(|p| loglog_slope(&[(p.epsilon, p.max_err), (epsilon, max_err)]));
        rows.push(ConvergenceRow {
            epsilon,
            max_err,
            slope_partial,
        });
    }
    let slope = loglog_slope(
        &rows
            .iter()
            .map(|r| (r.epsilon, r.max_err))
            .collect::<Vec<_>>(),
    );
    Ok(ConvergenceStudy {
        rows,
        slope,
        dt: cfg.dt,
        reference,
        runs,
    })
}
