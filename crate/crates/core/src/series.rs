//! Series expansion of the forced motion from rest.
//!
//! With `Y(q,t) = Σ_a Y_a(q) u_a(t)` and no potential or damping,
//!
//! ```text
//! V₁(q,t) = ∫₀ᵗ Y(q,s) ds
//! V_k(q,t) = −½ Σ_{j=1}^{k−1} ∫₀ᵗ ⟨V_j(q,s) : V_{k−j}(q,s)⟩ ds
//! q̇(t) = Σ_k V_k(q(t), t)
//! ```
//!
//! Every `V_k` is a finite sum `Σ c_T(t) P_T(q)` over iterated symmetric
//! products `P_T` of the input fields (binary trees with input leaves), so
//! the time coefficients are integrated once on a uniform grid and the
//! configuration dependence is evaluated pointwise.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;

use crate::dynamics::{simulate, IntegratorConfig, OpenLoop, State, TimeFn, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{InputField, MechanicalSystem, SharedField, SymmetricProductField};
use crate::numeric::{cumulative_simpson, fmt17, loglog_slope};

/// Default cap on the truncation order.
pub const DEFAULT_MAX_ORDER: usize = 4;

/// Minimum quadrature density, in grid intervals per unit time.
pub const MIN_INTERVALS_PER_UNIT_TIME: f64 = 200.0;

/// `Y(q,t) = Σ_a Y_a(q) u_a(t)`.
#[derive(Clone)]
pub struct ForcingField {
    sys: MechanicalSystem,
    signals: Vec<TimeFn>,
}

impl ForcingField {
    pub fn new(sys: &MechanicalSystem, signals: Vec<TimeFn>) -> Result<Self> {
        if signals.len() != sys.input_count() {
            return Err(Error::DimensionMismatch {
                expected: sys.input_count(),
                actual: signals.len(),
                context: "forcing signals",
            });
        }
        Ok(ForcingField {
            sys: sys.clone(),
            signals,
        })
    }

    /// Same forcing with every input multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        ForcingField {
            sys: self.sys.clone(),
            signals: self
                .signals
                .iter()
                .map(|s| {
                    let s = s.clone();
                    Arc::new(move |t: f64| factor * s(t)) as TimeFn
                })
                .collect(),
        }
    }

    pub fn inputs(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.signals.len(), self.signals.iter().map(|s| s(t)))
    }

    pub fn eval(&self, q: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        Ok(self.sys.input_fields(q)? * self.inputs(t))
    }

    pub fn control(&self) -> OpenLoop {
        OpenLoop::new(self.signals.clone())
    }

    pub fn system(&self) -> &MechanicalSystem {
        &self.sys
    }
}

/// Uniform time grid `t_i = i·h`, `i = 0..nodes`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub h: f64,
    pub nodes: usize,
}

impl TimeGrid {
    pub fn new(h: f64, nodes: usize) -> Result<Self> {
        if !(h > 0.0) || nodes < 3 {
            return Err(Error::Precondition(format!(
                "invalid time grid (h = {h}, {nodes} nodes)"
            )));
        }
        if 1.0 / h < MIN_INTERVALS_PER_UNIT_TIME * (1.0 - 1e-9) {
            return Err(Error::Precondition(format!(
                "time grid spacing {h} is coarser than 1/{MIN_INTERVALS_PER_UNIT_TIME}"
            )));
        }
        Ok(TimeGrid { h, nodes })
    }

    /// Grid covering `[0, horizon]` with at least `MIN_INTERVALS_PER_UNIT_TIME`
    /// intervals per unit time.
    pub fn covering(horizon: f64) -> Result<Self> {
        let intervals = (horizon * MIN_INTERVALS_PER_UNIT_TIME).ceil().max(2.0) as usize;
        TimeGrid::new(horizon / intervals as f64, intervals + 1)
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.nodes - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Tree {
    Leaf(usize),
    Product(Box<Tree>, Box<Tree>),
}

impl Tree {
    fn product(a: &Tree, b: &Tree) -> Tree {
        if a <= b {
            Tree::Product(Box::new(a.clone()), Box::new(b.clone()))
        } else {
            Tree::Product(Box::new(b.clone()), Box::new(a.clone()))
        }
    }
}

struct ExpansionData {
    grid: TimeGrid,
    fields: Vec<SharedField>,
    /// Per order: `(field index, coefficient at every grid node)`.
    orders: Vec<Vec<(usize, Vec<f64>)>>,
}

impl ExpansionData {
    fn coefficient(&self, coeffs: &[f64], t: f64) -> f64 {
        let x = t / self.grid.h;
        let nearest = x.round();
        if (x - nearest).abs() < 1e-9 && nearest >= 0.0 && (nearest as usize) < coeffs.len() {
            return coeffs[nearest as usize];
        }
        // cubic Lagrange through the four surrounding nodes
        let last = coeffs.len() - 1;
        let base = (x.floor() as isize - 1).clamp(0, last as isize - 3) as usize;
        let mut s = 0.0;
        for i in 0..4 {
            let xi = (base + i) as f64;
            let mut w = 1.0;
            for j in 0..4 {
                if i != j {
                    let xj = (base + j) as f64;
                    w *= (x - xj) / (xi - xj);
                }
            }
            s += w * coeffs[base + i];
        }
        s
    }

    fn field_values(
        &self,
        q: &DVector<f64>,
        max_order: usize,
    ) -> Result<Vec<Option<DVector<f64>>>> {
        let mut needed = vec![false; self.fields.len()];
        for order in self.orders.iter().take(max_order) {
            for (f, _) in order {
                needed[*f] = true;
            }
        }
        needed
            .iter()
            .enumerate()
            .map(|(i, &need)| {
                if need {
                    self.fields[i].eval(q).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect()
    }

    fn combine(
        &self,
        values: &[Option<DVector<f64>>],
        order: usize,
        t: f64,
        n: usize,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(n);
        for (f, coeffs) in &self.orders[order - 1] {
            let c = self.coefficient(coeffs, t);
            if c != 0.0 {
                out += values[*f].as_ref().expect("field evaluated") * c;
            }
        }
        out
    }

    fn velocity(&self, q: &DVector<f64>, t: f64, max_order: usize) -> Result<DVector<f64>> {
        let values = self.field_values(q, max_order)?;
        let mut v = DVector::zeros(q.len());
        for k in 1..=max_order {
            v += self.combine(&values, k, t, q.len());
        }
        Ok(v)
    }
}

/// One term `V_k` of the expansion.
#[derive(Clone)]
pub struct SeriesTerm {
    order: usize,
    data: Arc<ExpansionData>,
}

impl SeriesTerm {
    pub fn order(&self) -> usize {
        self.order
    }

    /// `V_k(q, t)`; off-grid times use cubic interpolation of the coefficients.
    pub fn eval(&self, q: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let mut values = vec![None; self.data.fields.len()];
        for (f, _) in &self.data.orders[self.order - 1] {
            if values[*f].is_none() {
                values[*f] = Some(self.data.fields[*f].eval(q)?);
            }
        }
        Ok(self.data.combine(&values, self.order, t, q.len()))
    }

    /// Number of distinct iterated symmetric products in this term.
    pub fn component_count(&self) -> usize {
        self.data.orders[self.order - 1].len()
    }
}

/// Options for [`series_terms`].
#[derive(Debug, Clone, Copy)]
pub struct SeriesOptions {
    pub max_order: usize,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions {
            max_order: DEFAULT_MAX_ORDER,
        }
    }
}

fn check_series_preconditions(
    sys: &MechanicalSystem,
    order: usize,
    opts: &SeriesOptions,
) -> Result<()> {
    if sys.has_potential() || sys.has_damping() {
        return Err(Error::Precondition(
            "series expansion requires a system without potential or damping forces".into(),
        ));
    }
    if order == 0 || order > opts.max_order {
        return Err(Error::Precondition(format!(
            "truncation order {order} outside 1..={}",
            opts.max_order
        )));
    }
    Ok(())
}

/// Computes `V₁ … V_K` on `grid`.
pub fn series_terms(
    sys: &MechanicalSystem,
    forcing: &ForcingField,
    order: usize,
    grid: TimeGrid,
) -> Result<Vec<SeriesTerm>> {
    series_terms_with(sys, forcing, order, grid, &SeriesOptions::default())
}

pub fn series_terms_with(
    sys: &MechanicalSystem,
    forcing: &ForcingField,
    order: usize,
    grid: TimeGrid,
    opts: &SeriesOptions,
) -> Result<Vec<SeriesTerm>> {
    check_series_preconditions(sys, order, opts)?;
    if forcing.signals.len() != sys.input_count() {
        return Err(Error::DimensionMismatch {
            expected: sys.input_count(),
            actual: forcing.signals.len(),
            context: "forcing signals",
        });
    }
    let h = grid.h;
    let mut levels: Vec<BTreeMap<Tree, Vec<f64>>> = Vec::with_capacity(order);

    let mut first = BTreeMap::new();
    for (a, signal) in forcing.signals.iter().enumerate() {
        let samples: Vec<f64> = (0..grid.nodes).map(|i| signal(grid.time(i))).collect();
        if samples.iter().any(|v| *v != 0.0) {
            first.insert(Tree::Leaf(a), cumulative_simpson(&samples, h));
        }
    }
    levels.push(first);

    for k in 2..=order {
        let mut integrands: BTreeMap<Tree, Vec<f64>> = BTreeMap::new();
        for j in 1..k {
            for (ta, ca) in &levels[j - 1] {
                for (tb, cb) in &levels[k - j - 1] {
                    let entry = integrands
                        .entry(Tree::product(ta, tb))
                        .or_insert_with(|| vec![0.0; grid.nodes]);
                    for ((e, x), y) in entry.iter_mut().zip(ca).zip(cb) {
                        *e += x * y;
                    }
                }
            }
        }
        let level = integrands
            .into_iter()
            .map(|(tree, integrand)| {
                let c: Vec<f64> = cumulative_simpson(&integrand, h)
                    .into_iter()
                    .map(|v| -0.5 * v)
                    .collect();
                (tree, c)
            })
            .collect();
        levels.push(level);
    }

    let mut fields = Vec::new();
    let mut index: HashMap<Tree, usize> = HashMap::new();
    let mut orders = Vec::with_capacity(order);
    for level in levels {
        let mut comps = Vec::with_capacity(level.len());
        for (tree, coeffs) in level {
            let f = field_index(sys, &tree, &mut fields, &mut index)?;
            comps.push((f, coeffs));
        }
        orders.push(comps);
    }

    let data = Arc::new(ExpansionData {
        grid,
        fields,
        orders,
    });
    Ok((1..=order)
        .map(|k| SeriesTerm {
            order: k,
            data: data.clone(),
        })
        .collect())
}

fn field_index(
    sys: &MechanicalSystem,
    tree: &Tree,
    fields: &mut Vec<SharedField>,
    index: &mut HashMap<Tree, usize>,
) -> Result<usize> {
    if let Some(&i) = index.get(tree) {
        return Ok(i);
    }
    let field: SharedField = match tree {
        Tree::Leaf(a) => Arc::new(InputField::new(sys, *a)?),
        Tree::Product(l, r) => {
            let li = field_index(sys, l, fields, index)?;
            let ri = field_index(sys, r, fields, index)?;
            Arc::new(SymmetricProductField::new(
                sys,
                fields[li].clone(),
                fields[ri].clone(),
            ))
        }
    };
    fields.push(field);
    index.insert(tree.clone(), fields.len() - 1);
    Ok(fields.len() - 1)
}

/// Integrates `q̇ = Σ_{k≤K} V_k(q, t)` from `q0` with RK4 on `[0, horizon]`.
///
/// The quadrature grid is aligned with the RK4 stage times, so no
/// interpolation is needed along the prediction.
pub fn predict_from_rest(
    sys: &MechanicalSystem,
    forcing: &ForcingField,
    order: usize,
    q0: &DVector<f64>,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    sys.check_dim(q0, "initial configuration")?;
    let steps = cfg.steps(0.0, horizon)?;
    let dt = cfg.dt;
    // nodes per half step
    let sub = ((0.5 * dt) * MIN_INTERVALS_PER_UNIT_TIME).ceil().max(1.0) as usize;
    let grid = TimeGrid::new(dt / (2 * sub) as f64, 2 * sub * steps + 1)?;
    let terms = series_terms(sys, forcing, order, grid)?;
    let data = terms[0].data.clone();

    let mut q = q0.clone();
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = i as f64 * dt;
        let v0 = data.velocity(&q, t, order)?;
        states.push(State::new(q.clone(), v0.clone()));
        inputs.push(forcing.inputs(t));
        if i == steps {
            break;
        }
        let k1 = v0;
        let k2 = data.velocity(&(&q + &k1 * (0.5 * dt)), t + 0.5 * dt, order)?;
        let k3 = data.velocity(&(&q + &k2 * (0.5 * dt)), t + 0.5 * dt, order)?;
        let k4 = data.velocity(&(&q + &k3 * dt), t + dt, order)?;
        q += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { time: t + dt });
        }
    }
    Ok(Trajectory {
        t0: 0.0,
        t1: horizon,
        dt,
        states,
        inputs,
        accelerations: None,
    })
}

/// `(ε, error)` rows with the fitted log-log slope.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ErrorTable {
    pub rows: Vec<(f64, f64)>,
    pub slope: f64,
}

impl ErrorTable {
    pub fn new(rows: Vec<(f64, f64)>) -> Self {
        let slope = loglog_slope(&rows);
        ErrorTable { rows, slope }
    }

    /// CSV with header `epsilon,err`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epsilon,err")?;
        for (e, err) in &self.rows {
            writeln!(w, "{},{}", fmt17(*e), fmt17(*err))?;
        }
        Ok(())
    }
}

/// Maximum configuration error between the truncated series prediction and
/// direct simulation, for each amplitude in `epsilons` applied to `forcing`.
pub fn truncation_study(
    sys: &MechanicalSystem,
    forcing: &ForcingField,
    order: usize,
    q0: &DVector<f64>,
    horizon: f64,
    epsilons: &[f64],
    cfg: &IntegratorConfig,
) -> Result<ErrorTable> {
    let rows = epsilons
        .iter()
        .map(|&eps| {
            let scaled = forcing.scaled(eps);
            let predicted = predict_from_rest(sys, &scaled, order, q0, horizon, cfg)?;
            let simulated = simulate(
                sys,
                &scaled.control(),
                &State::at_rest(q0.clone()),
                0.0,
                horizon,
                cfg,
            )?;
            Ok((eps, predicted.max_configuration_error(&simulated)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorTable::new(rows))
}
