//! Decoupling vector fields, Lie-algebra rank tests and rest-to-rest
//! motion plans along decoupling fields.
//!
//! `V = Σ_a h_a(q) Y_a(q)` is decoupling when both `V` and `∇_V V` lie in
//! the input span. Modulo the span, `∇_V V = ½ Σ_{a,b} h_a h_b ⟨Y_a:Y_b⟩`,
//! so at each `q` the coefficient directions solve the quadratic system
//! `hᵀ Q_l h = 0` with `(Q_l)_ab = c_l · ⟨Y_a:Y_b⟩(q)` and `{c_l}` a basis
//! of the orthogonal complement of the span.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{
    reconstruct_inputs_with, AccelerationSource, InputReconstruction, IntegratorConfig, State,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::geometry::{
    covariant_derivative, input_symmetric_products, LieBracketField, MechanicalSystem, SharedField,
    VectorField,
};
use crate::numeric::{complement_basis, numerical_rank, span_basis};

/// Default relative tolerance for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Tolerance on the reconstruction residual of a kinematic plan.
pub const PLAN_RESIDUAL_TOL: f64 = 1e-6;

/// Tolerance on the decoupling residual along a planned path.
pub const PLAN_DECOUPLING_TOL: f64 = 1e-6;

const SPAN_TOL: f64 = 1e-10;
const ANGULAR_TOL: f64 = 1e-6;
const NEWTON_STARTS: usize = 100;
const NEWTON_SEED: u64 = 0x0dec_0091;

fn q_vec(q: &DVector<f64>) -> Vec<f64> {
    q.iter().copied().collect()
}

/// Orthonormal basis of the input span at `q`; errors when rank deficient.
fn input_span(sys: &MechanicalSystem, q: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ys = sys.input_fields(q)?;
    if ys.ncols() == 0 {
        return Ok((
            DMatrix::zeros(sys.dof(), 0),
            DMatrix::identity(sys.dof(), sys.dof()),
        ));
    }
    let basis = span_basis(&ys, SPAN_TOL).ok_or_else(|| Error::RankDeficient { q: q_vec(q) })?;
    Ok((basis, ys))
}

fn off_span(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    if basis.ncols() == 0 {
        return v.norm();
    }
    (v - basis * (basis.transpose() * v)).norm()
}

/// `max(‖P⊥∇_V V‖ / max(1, ‖∇_V V‖), ‖P⊥V‖ / max(1, ‖V‖))`.
pub fn decoupling_residual(
    sys: &MechanicalSystem,
    v: &dyn VectorField,
    q: &DVector<f64>,
) -> Result<f64> {
    let (basis, _) = input_span(sys, q)?;
    let vv = v.eval(q)?;
    let nabla = covariant_derivative(sys, v, v, q)?;
    Ok(span_residual(&basis, &vv, &nabla))
}

fn span_residual(basis: &DMatrix<f64>, v: &DVector<f64>, nabla: &DVector<f64>) -> f64 {
    let r_nabla = off_span(basis, nabla) / nabla.norm().max(1.0);
    let r_v = off_span(basis, v) / v.norm().max(1.0);
    r_nabla.max(r_v)
}

/// Symmetric `m × m` matrices `(Q_l)_ab = c_l · ⟨Y_a:Y_b⟩(q)`, one per
/// complement direction `c_l`.
pub fn decoupling_forms(sys: &MechanicalSystem, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
    let (_, ys) = input_span(sys, q)?;
    let m = sys.input_count();
    let comp = complement_basis(&ys);
    let products = input_symmetric_products(sys, q)?;
    Ok((0..comp.ncols())
        .map(|l| {
            let c = comp.column(l);
            DMatrix::from_fn(m, m, |a, b| c.dot(&products[a][b]))
        })
        .collect())
}

/// Result of the pointwise decoupling search.
#[derive(Debug, Clone, PartialEq)]
pub enum DecouplingSolutions {
    /// Every input direction is decoupling (all forms vanish identically).
    AllDirections,
    /// Unit coefficient directions, one representative per projective class.
    Directions(Vec<DVector<f64>>),
}

impl DecouplingSolutions {
    pub fn is_all_directions(&self) -> bool {
        matches!(self, DecouplingSolutions::AllDirections)
    }

    /// The directions found; empty for [`DecouplingSolutions::AllDirections`].
    pub fn directions(&self) -> &[DVector<f64>] {
        match self {
            DecouplingSolutions::AllDirections => &[],
            DecouplingSolutions::Directions(d) => d,
        }
    }

    pub fn len(&self) -> usize {
        self.directions().len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions().is_empty()
    }
}

/// Options for [`find_decoupling_fields_with`].
#[derive(Debug, Clone, Copy)]
pub struct DecouplingOptions {
    /// Use projective Newton even when the closed form applies.
    pub force_numeric: bool,
    pub starts: usize,
    pub seed: u64,
}

impl Default for DecouplingOptions {
    fn default() -> Self {
        DecouplingOptions {
            force_numeric: false,
            starts: NEWTON_STARTS,
            seed: NEWTON_SEED,
        }
    }
}

/// Real projective solutions `h` (‖h‖ = 1) of the decoupling conditions at `q`.
pub fn find_decoupling_fields(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
) -> Result<DecouplingSolutions> {
    find_decoupling_fields_with(sys, q, &DecouplingOptions::default())
}

pub fn find_decoupling_fields_with(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    opts: &DecouplingOptions,
) -> Result<DecouplingSolutions> {
    let m = sys.input_count();
    if m == 0 {
        return Ok(DecouplingSolutions::Directions(Vec::new()));
    }
    let forms = decoupling_forms(sys, q)?;
    let scale = forms.iter().map(|f| f.amax()).fold(0.0, f64::max);
    let zero_tol = 1e-12 * scale.max(1.0);
    let active: Vec<&DMatrix<f64>> = forms.iter().filter(|f| f.amax() > zero_tol).collect();
    if active.is_empty() {
        return Ok(DecouplingSolutions::AllDirections);
    }
    let dirs = if m == 1 {
        // the single direction decouples only if every form vanishes
        Vec::new()
    } else if m == 2 && !opts.force_numeric {
        two_input_roots(&active, zero_tol)
    } else {
        newton_roots(&active, m, opts)
    };
    Ok(DecouplingSolutions::Directions(dirs))
}

/// Sign convention: the entry of largest magnitude is positive.
fn canonical(h: DVector<f64>) -> DVector<f64> {
    let n = h.norm();
    let h = h / n;
    let idx = h.iamax();
    if h[idx] < 0.0 {
        -h
    } else {
        h
    }
}

fn push_unique(out: &mut Vec<DVector<f64>>, h: DVector<f64>) {
    let h = canonical(h);
    if !out
        .iter()
        .any(|g| (1.0 - g.dot(&h).abs()) < 0.5 * ANGULAR_TOL * ANGULAR_TOL)
    {
        out.push(h);
    }
}

fn quad(form: &DMatrix<f64>, h: &DVector<f64>) -> f64 {
    (h.transpose() * form * h)[(0, 0)]
}

/// Closed form for two inputs: `C r² + 2B r + A = 0` in `r = h₂/h₁`,
/// plus the `h₁ = 0` check.
fn two_input_roots(forms: &[&DMatrix<f64>], zero_tol: f64) -> Vec<DVector<f64>> {
    let first = forms[0];
    let (a, b, c) = (first[(0, 0)], first[(0, 1)], first[(1, 1)]);
    let mut candidates = Vec::new();
    if c.abs() <= zero_tol {
        candidates.push(DVector::from_vec(vec![0.0, 1.0]));
        if b.abs() > zero_tol {
            candidates.push(DVector::from_vec(vec![1.0, -a / (2.0 * b)]));
        }
    } else {
        let disc = b * b - a * c;
        let disc_tol = 1e-14 * (b * b).max((a * c).abs()).max(zero_tol * zero_tol);
        if disc >= -disc_tol {
            let root = disc.max(0.0).sqrt();
            let s = -(b + b.signum() * root);
            if s == 0.0 {
                // a = b = 0: double root r = 0
                candidates.push(DVector::from_vec(vec![1.0, 0.0]));
            } else {
                candidates.push(DVector::from_vec(vec![1.0, s / c]));
                candidates.push(DVector::from_vec(vec![1.0, a / s]));
            }
        }
    }
    let mut out = Vec::new();
    for h in candidates {
        let h = &h / h.norm();
        let ok = forms[1..]
            .iter()
            .all(|f| quad(f, &h).abs() <= 1e-10 * f.amax().max(1.0));
        if ok {
            push_unique(&mut out, h);
        }
    }
    out
}

/// Gauss-Newton on `[hᵀQ_l h = 0, ½(‖h‖² − 1) = 0]` from seeded random
/// unit starts.
fn newton_roots(forms: &[&DMatrix<f64>], m: usize, opts: &DecouplingOptions) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let scale = forms.iter().map(|f| f.amax()).fold(0.0, f64::max).max(1.0);
    let k = forms.len();
    let mut out = Vec::new();
    for _ in 0..opts.starts {
        let mut h = DVector::from_fn(m, |_, _| rand_distr_normal(&mut rng));
        h /= h.norm();
        for _ in 0..60 {
            let mut r = DVector::zeros(k + 1);
            let mut jac = DMatrix::zeros(k + 1, m);
            for (l, f) in forms.iter().enumerate() {
                let fh = *f * &h;
                r[l] = h.dot(&fh) / scale;
                jac.row_mut(l).copy_from(&(fh.transpose() * (2.0 / scale)));
            }
            r[k] = 0.5 * (h.norm_squared() - 1.0);
            jac.row_mut(k).copy_from(&h.transpose());
            if r.amax() < 1e-15 {
                break;
            }
            let svd = jac.svd(true, true);
            let Ok(step) = svd.solve(&r, 1e-12) else {
                break;
            };
            h -= step;
        }
        let hn = &h / h.norm();
        if forms.iter().all(|f| quad(f, &hn).abs() <= 1e-12 * scale) {
            push_unique(&mut out, hn);
        }
    }
    out
}

fn rand_distr_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    // Box-Muller keeps the start directions uniform on the sphere
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

type CoefficientFn = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;

#[derive(Clone)]
enum Coefficients {
    Given(CoefficientFn),
    /// Re-solved at every `q`, keeping the root nearest the reference.
    Branch(DVector<f64>),
}

/// Candidate decoupling field `V(q) = Σ_a h_a(q) Y_a(q)`.
#[derive(Clone)]
pub struct DecouplingCandidate {
    sys: MechanicalSystem,
    coefficients: Coefficients,
}

impl DecouplingCandidate {
    pub fn new<F>(sys: &MechanicalSystem, h: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        DecouplingCandidate {
            sys: sys.clone(),
            coefficients: Coefficients::Given(Arc::new(h)),
        }
    }

    /// Constant coefficients.
    pub fn constant(sys: &MechanicalSystem, h: DVector<f64>) -> Self {
        Self::new(sys, move |_| Ok(h.clone()))
    }

    /// Field obtained by solving the decoupling conditions pointwise and
    /// following the solution branch closest to `reference`.
    pub fn branch(sys: &MechanicalSystem, reference: DVector<f64>) -> Self {
        let n = reference.norm();
        DecouplingCandidate {
            sys: sys.clone(),
            coefficients: Coefficients::Branch(reference / n),
        }
    }

    /// One branch candidate per direction found at `q`.
    pub fn all_at(sys: &MechanicalSystem, q: &DVector<f64>) -> Result<Vec<Self>> {
        Ok(match find_decoupling_fields(sys, q)? {
            DecouplingSolutions::AllDirections => (0..sys.input_count())
                .map(|a| {
                    Self::constant(
                        sys,
                        DVector::from_fn(sys.input_count(), |i, _| if i == a { 1.0 } else { 0.0 }),
                    )
                })
                .collect(),
            DecouplingSolutions::Directions(d) => {
                d.into_iter().map(|h| Self::branch(sys, h)).collect()
            }
        })
    }

    pub fn system(&self) -> &MechanicalSystem {
        &self.sys
    }

    /// Same candidate with its branch reference moved to `reference`;
    /// candidates with given coefficients are returned unchanged.
    pub fn with_reference(&self, reference: &DVector<f64>) -> Self {
        match &self.coefficients {
            Coefficients::Given(_) => self.clone(),
            Coefficients::Branch(_) => Self::branch(&self.sys, reference.clone()),
        }
    }

    pub fn coefficients(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.coefficients {
            Coefficients::Given(f) => {
                let h = f(q)?;
                if h.len() != self.sys.input_count() {
                    return Err(Error::DimensionMismatch {
                        expected: self.sys.input_count(),
                        actual: h.len(),
                        context: "decoupling coefficients",
                    });
                }
                Ok(h)
            }
            Coefficients::Branch(reference) => match find_decoupling_fields(&self.sys, q)? {
                DecouplingSolutions::AllDirections => Ok(reference.clone()),
                DecouplingSolutions::Directions(dirs) => {
                    let best = dirs
                        .into_iter()
                        .max_by(|a, b| a.dot(reference).abs().total_cmp(&b.dot(reference).abs()))
                        .ok_or_else(|| Error::NoDecouplingField { q: q_vec(q) })?;
                    Ok(if best.dot(reference) < 0.0 {
                        -best
                    } else {
                        best
                    })
                }
            },
        }
    }
}

impl VectorField for DecouplingCandidate {
    fn dim(&self) -> usize {
        self.sys.dof()
    }

    fn eval(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.sys.input_fields(q)? * self.coefficients(q)?)
    }
}

/// Outcome of a Lie-algebra rank test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllabilityReport {
    pub rank: usize,
    /// Bracket depth at which the reported rank was reached.
    pub depth: usize,
    pub verdict: bool,
    /// Decoupling residual of each field, when known.
    pub residuals: Vec<f64>,
}

impl ControllabilityReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// Rank of the span of `fields` and their iterated brackets up to
/// `max_depth` (depth 1 is the fields themselves) at `q`.
pub fn larc_rank(
    fields: &[SharedField],
    q: &DVector<f64>,
    max_depth: usize,
    tol: f64,
) -> Result<ControllabilityReport> {
    if max_depth == 0 {
        return Err(Error::Precondition(
            "bracket depth must be at least 1".into(),
        ));
    }
    let n = q.len();
    let mut columns: Vec<DVector<f64>> = Vec::new();
    let mut level: Vec<SharedField> = fields.to_vec();
    let mut rank = 0;
    let mut depth = 0;
    for d in 1..=max_depth {
        if d > 1 {
            // right-normed brackets [X_i, B] span every bracket of this length
            let mut next: Vec<SharedField> = Vec::new();
            for x in fields {
                for b in &level {
                    next.push(Arc::new(LieBracketField::new(x.clone(), b.clone())));
                }
            }
            level = next;
        }
        for f in &level {
            columns.push(f.eval(q)?);
        }
        let mat = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
        let r = numerical_rank(&mat, tol);
        if r > rank || depth == 0 {
            rank = r;
            depth = d;
        }
        if rank == n {
            break;
        }
    }
    Ok(ControllabilityReport {
        rank,
        depth,
        verdict: rank == n,
        residuals: Vec::new(),
    })
}

/// Decoupling fields at `q`, their residuals and the rank of their
/// involutive closure.
pub fn kinematic_controllability(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    max_depth: usize,
    tol: f64,
) -> Result<ControllabilityReport> {
    let candidates = DecouplingCandidate::all_at(sys, q)?;
    let residuals = candidates
        .iter()
        .map(|c| decoupling_residual(sys, c, q))
        .collect::<Result<Vec<_>>>()?;
    let fields: Vec<SharedField> = candidates
        .into_iter()
        .map(|c| Arc::new(c) as SharedField)
        .collect();
    let mut report = if fields.is_empty() {
        ControllabilityReport {
            rank: 0,
            depth: 1,
            verdict: false,
            residuals: Vec::new(),
        }
    } else {
        larc_rank(&fields, q, max_depth, tol)?
    };
    report.residuals = residuals;
    Ok(report)
}

/// Time-scaling profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// `s = 3τ² − 2τ³`.
    Cubic,
    /// Constant acceleration over the first quarter, cruise over the middle
    /// half, constant deceleration over the last quarter.
    Trapezoidal,
}

/// Monotone reparameterisation `s: [0, T] → [0, 1]` with `ṡ(0) = ṡ(T) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeScaling {
    pub profile: Profile,
    pub duration: f64,
}

impl TimeScaling {
    pub fn new(profile: Profile, duration: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Precondition(format!(
                "time scaling duration {duration} must be positive"
            )));
        }
        Ok(TimeScaling { profile, duration })
    }

    pub fn cubic(duration: f64) -> Result<Self> {
        Self::new(Profile::Cubic, duration)
    }

    pub fn trapezoidal(duration: f64) -> Result<Self> {
        Self::new(Profile::Trapezoidal, duration)
    }

    /// `(s, ṡ, s̈)` at `t`, clamped to `[0, T]`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let big_t = self.duration;
        let t = t.clamp(0.0, big_t);
        match self.profile {
            Profile::Cubic => {
                let tau = t / big_t;
                (
                    tau * tau * (3.0 - 2.0 * tau),
                    6.0 * tau * (1.0 - tau) / big_t,
                    (6.0 - 12.0 * tau) / (big_t * big_t),
                )
            }
            Profile::Trapezoidal => {
                let a = 16.0 / (3.0 * big_t * big_t);
                let v = 4.0 / (3.0 * big_t);
                let t1 = 0.25 * big_t;
                let t2 = 0.75 * big_t;
                if t < t1 {
                    (0.5 * a * t * t, a * t, a)
                } else if t <= t2 {
                    (0.5 * a * t1 * t1 + v * (t - t1), v, 0.0)
                } else {
                    let r = big_t - t;
                    (1.0 - 0.5 * a * r * r, a * r, -a)
                }
            }
        }
    }

    pub fn s(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    pub fn s_dot(&self, t: f64) -> f64 {
        self.eval(t).1
    }

    pub fn s_ddot(&self, t: f64) -> f64 {
        self.eval(t).2
    }
}

/// One leg of a kinematic plan: follow `sign · V` under `scaling`.
#[derive(Clone)]
pub struct PlanSegment {
    pub field: DecouplingCandidate,
    pub sign: f64,
    pub scaling: TimeScaling,
}

impl PlanSegment {
    pub fn new(field: DecouplingCandidate, sign: f64, scaling: TimeScaling) -> Self {
        PlanSegment {
            field,
            sign,
            scaling,
        }
    }
}

/// Planned trajectory with its reconstructed inputs.
#[derive(Debug, Clone)]
pub struct KinematicPlan {
    /// Samples carry the exact kinematic accelerations and the
    /// reconstructed inputs.
    pub trajectory: Trajectory,
    /// Index of the first sample of every segment, plus the final index.
    pub boundaries: Vec<usize>,
    pub reconstruction: InputReconstruction,
}

impl KinematicPlan {
    pub fn final_configuration(&self) -> &DVector<f64> {
        &self.trajectory.last().q
    }
}

struct KinematicSample {
    q: DVector<f64>,
    qdot: DVector<f64>,
    qddot: DVector<f64>,
    decoupling: f64,
}

/// `(V, DV·V, decoupling residual)` at `q` for the given branch reference.
fn field_data(
    field: &DecouplingCandidate,
    q: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    let sys = field.system();
    let v = field.eval(q)?;
    let jac = field.jacobian(q)?;
    let dvv = &jac * &v;
    let nabla = &dvv + sys.christoffel(q)?.quadratic(&v);
    let (basis, _) = input_span(sys, q)?;
    Ok((v, dvv, span_residual(&basis, &field.eval(q)?, &nabla)))
}

/// Follows one solution branch along a path. The reference direction for
/// the next evaluation is extrapolated linearly in the path parameter, so
/// a neighbouring root sweeping past the tracked one is not picked up.
struct BranchTracker {
    field: DecouplingCandidate,
    s: f64,
    h: DVector<f64>,
    previous: Option<(f64, DVector<f64>)>,
}

impl BranchTracker {
    fn start(field: &DecouplingCandidate, q: &DVector<f64>) -> Result<Self> {
        let h = field.coefficients(q)?;
        Ok(BranchTracker {
            field: field.with_reference(&h),
            s: 0.0,
            h,
            previous: None,
        })
    }

    fn current(&self) -> &DecouplingCandidate {
        &self.field
    }

    fn predicted(&self, s: f64) -> DecouplingCandidate {
        match &self.previous {
            Some((s_prev, h_prev))
                if matches!(self.field.coefficients, Coefficients::Branch(_))
                    && self.s > *s_prev =>
            {
                let slope = (&self.h - h_prev) / (self.s - s_prev);
                self.field.with_reference(&(&self.h + slope * (s - self.s)))
            }
            _ => self.field.clone(),
        }
    }

    fn advance(&mut self, s: f64, q: &DVector<f64>) -> Result<()> {
        let h = self.predicted(s).coefficients(q)?;
        self.previous = Some((self.s, std::mem::replace(&mut self.h, h)));
        self.s = s;
        self.field = self.field.with_reference(&self.h);
        Ok(())
    }
}

/// Integrates `q̇ = ṡ(t)·sign·V(q)` segment by segment from rest at `q0`,
/// then checks that the inputs reconstructed from the exact kinematic
/// accelerations explain the motion to [`PLAN_RESIDUAL_TOL`].
pub fn kinematic_plan(
    q0: &DVector<f64>,
    segments: &[PlanSegment],
    cfg: &IntegratorConfig,
) -> Result<KinematicPlan> {
    let first = segments
        .first()
        .ok_or_else(|| Error::Precondition("a kinematic plan needs at least one segment".into()))?;
    let sys = first.field.system().clone();
    sys.check_dim(q0, "plan start configuration")?;
    let dt = cfg.dt;
    let mut q = q0.clone();
    let mut samples: Vec<KinematicSample> = Vec::new();
    let mut boundaries = Vec::with_capacity(segments.len() + 1);
    let mut reconstruction = InputReconstruction {
        samples: Vec::new(),
        times: Vec::new(),
        inputs: Vec::new(),
        residuals: Vec::new(),
        flagged: Vec::new(),
    };
    let mut t_offset = 0.0;

    for (idx, seg) in segments.iter().enumerate() {
        if seg.field.system().dof() != sys.dof()
            || seg.field.system().input_count() != sys.input_count()
        {
            return Err(Error::Precondition(format!(
                "segment {idx} uses a different system"
            )));
        }
        let steps = cfg.steps(0.0, seg.scaling.duration)?;
        let mut tracker = BranchTracker::start(&seg.field, &q)?;
        let mut seg_samples = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let t = i as f64 * dt;
            let (_, s_dot, s_ddot) = seg.scaling.eval(t);
            let (v, dvv, decoupling) = field_data(tracker.current(), &q)?;
            if decoupling > PLAN_DECOUPLING_TOL {
                return Err(Error::AssumptionViolation {
                    residual: decoupling,
                    q: q_vec(&q),
                });
            }
            seg_samples.push(KinematicSample {
                q: q.clone(),
                qdot: &v * (s_dot * seg.sign),
                qddot: &v * (s_ddot * seg.sign) + &dvv * (s_dot * s_dot),
                decoupling,
            });
            if i == steps {
                break;
            }
            let velocity = |tau: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
                let (s, s_dot, _) = seg.scaling.eval(tau);
                Ok(tracker.predicted(s).eval(x)? * (s_dot * seg.sign))
            };
            let k1 = velocity(t, &q)?;
            let k2 = velocity(t + 0.5 * dt, &(&q + &k1 * (0.5 * dt)))?;
            let k3 = velocity(t + 0.5 * dt, &(&q + &k2 * (0.5 * dt)))?;
            let k4 = velocity(t + dt, &(&q + &k3 * dt))?;
            q += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            if q.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteState {
                    time: t_offset + t + dt,
                });
            }
            tracker.advance(seg.scaling.s(t + dt), &q)?;
        }

        // validate this segment on its own so errors can name it
        let seg_traj = Trajectory {
            t0: 0.0,
            t1: seg.scaling.duration,
            dt,
            states: seg_samples
                .iter()
                .map(|s| State::new(s.q.clone(), s.qdot.clone()))
                .collect(),
            inputs: vec![DVector::zeros(sys.input_count()); seg_samples.len()],
            accelerations: Some(seg_samples.iter().map(|s| s.qddot.clone()).collect()),
        };
        let rec = reconstruct_inputs_with(&sys, &seg_traj, AccelerationSource::Recorded)?;
        if let Some((sample, residual)) = rec.worst() {
            if residual > PLAN_RESIDUAL_TOL {
                return Err(Error::ResidualViolation {
                    segment: idx,
                    sample,
                    residual,
                    tolerance: PLAN_RESIDUAL_TOL,
                });
            }
        }

        // junction samples are shared; the later segment's sample wins
        if idx > 0 {
            samples.pop();
            let last = samples.len();
            reconstruction.samples.pop();
            reconstruction.times.pop();
            reconstruction.inputs.pop();
            reconstruction.residuals.pop();
            reconstruction.flagged.retain(|&s| s < last);
        }
        let base = samples.len();
        boundaries.push(base);
        for (k, i) in rec.samples.iter().enumerate() {
            reconstruction.samples.push(base + i);
            reconstruction.times.push(t_offset + rec.times[k]);
            reconstruction.inputs.push(rec.inputs[k].clone());
            reconstruction.residuals.push(rec.residuals[k]);
        }
        reconstruction
            .flagged
            .extend(rec.flagged.iter().map(|i| base + i));
        samples.extend(seg_samples);
        t_offset += seg.scaling.duration;
    }
    boundaries.push(samples.len() - 1);

    log::debug!(
        "kinematic plan: {} samples, worst decoupling residual {:.3e}",
        samples.len(),
        samples.iter().map(|s| s.decoupling).fold(0.0, f64::max)
    );
    let trajectory = Trajectory {
        t0: 0.0,
        t1: t_offset,
        dt,
        states: samples
            .iter()
            .map(|s| State::new(s.q.clone(), s.qdot.clone()))
            .collect(),
        inputs: reconstruction.inputs.clone(),
        accelerations: Some(samples.iter().map(|s| s.qddot.clone()).collect()),
    };
    Ok(KinematicPlan {
        trajectory,
        boundaries,
        reconstruction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FnField, InputField};
    use crate::models;

    fn unit(m: usize, a: usize) -> DVector<f64> {
        DVector::from_fn(m, |i, _| if i == a { 1.0 } else { 0.0 })
    }

    #[test]
    fn fully_actuated_is_all_directions_with_zero_residual() {
        let sys = models::three_link(&[0, 1, 2]).unwrap();
        let q = DVector::from_vec(vec![0.3, -0.7, 1.2]);
        assert!(find_decoupling_fields(&sys, &q)
            .unwrap()
            .is_all_directions());
        let v = FnField::new(3, |q| DVector::from_vec(vec![q[1].sin(), 1.0, q[0] * q[2]]));
        assert!(decoupling_residual(&sys, &v, &q).unwrap() < 1e-15);
    }

    #[test]
    fn translation_through_centre_of_mass_is_decoupling() {
        let sys = models::planar_body(1.0, 1.0, 1.0, 0.0, &[0, 1]).unwrap();
        let q = DVector::from_vec(vec![0.4, -1.0, 0.8]);
        let v = InputField::new(&sys, 0).unwrap();
        assert!(decoupling_residual(&sys, &v, &q).unwrap() < 1e-8);
        // alone, the offset body-y force is not decoupling
        let single = models::planar_body(1.0, 1.0, 1.0, 0.0, &[1]).unwrap();
        let w = InputField::new(&single, 0).unwrap();
        assert!(decoupling_residual(&single, &w, &q).unwrap() > 1e-3);
    }

    #[test]
    fn rank_deficient_inputs_are_an_error() {
        let sys = MechanicalSystem::builder(2, |_| DMatrix::identity(2, 2))
            .input(|_| DVector::from_vec(vec![1.0, 0.0]))
            .input(|_| DVector::from_vec(vec![2.0, 0.0]))
            .build()
            .unwrap();
        let q = DVector::zeros(2);
        assert!(matches!(
            find_decoupling_fields(&sys, &q),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn closed_form_and_newton_agree_on_three_link() {
        let sys = models::three_link(&[0, 2]).unwrap();
        let q = DVector::from_vec(vec![0.2, 0.9, -0.4]);
        let closed = find_decoupling_fields(&sys, &q).unwrap();
        let numeric = find_decoupling_fields_with(
            &sys,
            &q,
            &DecouplingOptions {
                force_numeric: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(closed.len(), 2);
        assert_eq!(numeric.len(), 2);
        for h in closed.directions() {
            assert!(numeric
                .directions()
                .iter()
                .any(|g| (1.0 - g.dot(h).abs()) < 1e-10));
        }
        let forms = decoupling_forms(&sys, &q).unwrap();
        for h in closed.directions() {
            assert!(quad(&forms[0], h).abs() < 1e-10);
        }
    }

    #[test]
    fn branch_fields_are_decoupling_nearby() {
        let sys = models::three_link(&[0, 1]).unwrap();
        let q = DVector::from_vec(vec![0.5, 1.3, -0.8]);
        for c in DecouplingCandidate::all_at(&sys, &q).unwrap() {
            let r = decoupling_residual(&sys, &c, &q).unwrap();
            assert!(r < 1e-8, "residual {r}");
        }
    }

    #[test]
    fn commuting_fields_have_deficient_rank() {
        let fields: Vec<SharedField> = vec![
            FnField::constant(unit(3, 0)).shared(),
            FnField::constant(unit(3, 1)).shared(),
        ];
        let r = larc_rank(&fields, &DVector::zeros(3), 3, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r.rank, 2);
        assert!(!r.verdict);
    }

    #[test]
    fn unicycle_brackets_reach_full_rank() {
        let drive =
            FnField::new(3, |q| DVector::from_vec(vec![q[2].cos(), q[2].sin(), 0.0])).shared();
        let turn = FnField::constant(unit(3, 2)).shared();
        let q = DVector::from_vec(vec![0.0, 0.0, 0.7]);
        let bracket = crate::geometry::lie_bracket(drive.as_ref(), turn.as_ref(), &q).unwrap();
        let expected = DVector::from_vec(vec![0.7f64.sin(), -0.7f64.cos(), 0.0]);
        assert!((bracket - expected).norm() < 1e-9);
        let r = larc_rank(&[drive, turn], &q, 2, DEFAULT_RANK_TOL).unwrap();
        assert_eq!((r.rank, r.depth, r.verdict), (3, 2, true));
        assert!(larc_rank(&[], &q, 0, DEFAULT_RANK_TOL).is_err());
    }

    #[test]
    fn report_json_keys() {
        let r = ControllabilityReport {
            rank: 3,
            depth: 2,
            verdict: true,
            residuals: vec![1e-12, 2e-12],
        };
        let mut buf = Vec::new();
        r.write_json(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        for key in ["rank", "depth", "verdict", "residuals"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn time_scalings_hit_their_endpoints() {
        for s in [
            TimeScaling::cubic(2.0).unwrap(),
            TimeScaling::trapezoidal(2.0).unwrap(),
        ] {
            assert_eq!(s.s(0.0), 0.0);
            assert!((s.s(2.0) - 1.0).abs() < 1e-15);
            assert!(s.s_dot(0.0).abs() < 1e-12 && s.s_dot(2.0).abs() < 1e-12);
            // continuity of s and ṡ across the trapezoid corners
            for tc in [0.5, 1.5] {
                let (a, b) = (s.eval(tc - 1e-9), s.eval(tc + 1e-9));
                assert!((a.0 - b.0).abs() < 1e-8 && (a.1 - b.1).abs() < 1e-8);
            }
        }
        assert!(TimeScaling::cubic(0.0).is_err());
    }

    #[test]
    fn zero_field_plan_is_stationary() {
        let sys = models::three_link(&[0, 1]).unwrap();
        let q0 = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let seg = PlanSegment::new(
            DecouplingCandidate::constant(&sys, DVector::zeros(2)),
            1.0,
            TimeScaling::cubic(1.0).unwrap(),
        );
        let plan = kinematic_plan(&q0, &[seg], &IntegratorConfig::rk4(0.01)).unwrap();
        assert!(plan
            .trajectory
            .states
            .iter()
            .all(|s| s.q == q0 && s.qdot.norm() == 0.0));
    }

    #[test]
    fn non_decoupling_segment_is_rejected() {
        let sys = models::planar_body(1.0, 1.0, 1.0, 0.0, &[1]).unwrap();
        let seg = PlanSegment::new(
            DecouplingCandidate::constant(&sys, unit(1, 0)),
            1.0,
            TimeScaling::cubic(1.0).unwrap(),
        );
        let err =
            kinematic_plan(&DVector::zeros(3), &[seg], &IntegratorConfig::rk4(0.01)).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolation { .. }));
    }
}
