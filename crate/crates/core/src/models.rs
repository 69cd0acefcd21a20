//! Built-in mechanical systems with analytic derivatives.
//!
//! | name          | q              | inputs (1-based actuator ids)                          |
//! |---------------|----------------|--------------------------------------------------------|
//! | `flat`        | ℝⁿ             | unit forces along each axis                            |
//! | `pvtol`       | (x, y, θ)      | 1: body-x force at offset `h` (rolling moment), 2: thrust |
//! | `planar-body` | (x, y, θ)      | 1: body-x force through the centre of mass,            |
//! |               |                | 2: body-y force at offset `h`, 3: pure torque          |
//! | `blimp`       | (x, y, θ)      | as `planar-body`, with damping `k = −c·I`              |
//! | `three-link`  | joint angles   | joint torques                                          |
//!
//! Derivations (Lagrangian, constant inertia for the planar bodies):
//!
//! * Planar body / PVTOL: `M = diag(m, m, J)`, so `Γ = 0`. A body-frame
//!   force `(f_x, f_y)` applied at body point `(p_x, p_y)` has co-vector
//!   `(f_x cos θ − f_y sin θ, f_x sin θ + f_y cos θ, p_x f_y − p_y f_x)`.
//!   PVTOL gravity enters through `V = m g y`.
//! * Three-link planar chain with relative joint angles, uniform rods
//!   (centre of mass at `l/2`, `I = m l²/12`): with absolute angles
//!   `φ_ℓ = q₁ + … + q_ℓ` and `d_iℓ = l_ℓ` (ℓ < i), `d_ii = l_i/2`,
//!   `M_jk = Σ_{i ≥ max(j,k)} [ m_i Σ_{ℓ=j..i} Σ_{p=k..i} d_iℓ d_ip cos(φ_ℓ − φ_p) + I_i ]`
//!   and `V = g Σ_i m_i Σ_{ℓ≤i} d_iℓ sin φ_ℓ` when the plane is vertical.
//!
//! All parameters default to unit values (gravity 9.81 m/s² where it is
//! switched on). The blimp is the planar body plus isotropic linear damping,
//! an approximation of a real airship model.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DerivativeProvider, MechanicalSystem};

pub const GRAVITY: f64 = 9.81;

/// Name, parameters and active actuators of a built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub name: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    /// 1-based actuator ids; empty selects the model default.
    #[serde(default)]
    pub actuators: Vec<usize>,
}

impl ModelDescriptor {
    pub fn new(name: impl Into<String>) -> Self {
        ModelDescriptor {
            name: name.into(),
            parameters: BTreeMap::new(),
            actuators: Vec::new(),
        }
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.parameters.insert(key.to_string(), value);
        self
    }

    pub fn actuators(mut self, ids: &[usize]) -> Self {
        self.actuators = ids.to_vec();
        self
    }
}

/// Static description of a built-in model for listings.
#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub parameters: Vec<(&'static str, f64, &'static str)>,
    pub actuator_count: usize,
    pub default_actuators: Vec<usize>,
}

pub fn list_models() -> Vec<ModelInfo> {
    vec![
        ModelInfo {
            name: "flat",
            summary: "identity inertia on R^n, unit axis forces (actuators 1..=dof)",
            parameters: vec![("dof", 2.0, "count"), ("mass", 1.0, "kg")],
            actuator_count: 0,
            default_actuators: vec![1],
        },
        ModelInfo {
            name: "pvtol",
            summary: "planar vertical take-off and landing aircraft (x, y, theta)",
            parameters: vec![
                ("mass", 1.0, "kg"),
                ("inertia", 1.0, "kg m^2"),
                ("arm", 1.0, "m"),
                ("gravity", GRAVITY, "m/s^2"),
            ],
            actuator_count: 2,
            default_actuators: vec![1, 2],
        },
        ModelInfo {
            name: "planar-body",
            summary: "planar rigid body (x, y, theta) with body-fixed forces",
            parameters: vec![
                ("mass", 1.0, "kg"),
                ("inertia", 1.0, "kg m^2"),
                ("arm", 1.0, "m"),
            ],
            actuator_count: 3,
            default_actuators: vec![1, 2],
        },
        ModelInfo {
            name: "blimp",
            summary: "planar rigid body with isotropic linear damping k = -c I",
            parameters: vec![
                ("mass", 1.0, "kg"),
                ("inertia", 1.0, "kg m^2"),
                ("arm", 1.0, "m"),
                ("damping", 0.1, "1/s"),
            ],
            actuator_count: 3,
            default_actuators: vec![1, 2],
        },
        ModelInfo {
            name: "three-link",
            summary: "three revolute joint planar manipulator, uniform rods",
            parameters: vec![
                ("m1", 1.0, "kg"),
                ("m2", 1.0, "kg"),
                ("m3", 1.0, "kg"),
                ("l1", 1.0, "m"),
                ("l2", 1.0, "m"),
                ("l3", 1.0, "m"),
                ("gravity", 0.0, "m/s^2"),
            ],
            actuator_count: 3,
            default_actuators: vec![1, 2],
        },
    ]
}

struct Params<'a> {
    model: &'a str,
    given: &'a BTreeMap<String, f64>,
    defaults: Vec<(&'static str, f64, &'static str)>,
}

impl<'a> Params<'a> {
    fn new(desc: &'a ModelDescriptor, info: &ModelInfo) -> Result<Self> {
        for key in desc.parameters.keys() {
            if !info.parameters.iter().any(|(k, _, _)| k == key) {
                return Err(Error::InvalidDescriptor(format!(
                    "unknown parameter `{key}` for model `{}`",
                    desc.name
                )));
            }
        }
        Ok(Params {
            model: info.name,
            given: &desc.parameters,
            defaults: info.parameters.clone(),
        })
    }

    fn raw(&self, key: &str) -> f64 {
        self.given.get(key).copied().unwrap_or_else(|| {
            self.defaults
                .iter()
                .find(|(k, _, _)| *k == key)
                .map(|p| p.1)
                .unwrap_or(f64::NAN)
        })
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let v = self.raw(key);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidDescriptor(format!(
                "parameter `{key}` of `{}` must be strictly positive, got {v}",
                self.model
            )));
        }
        Ok(v)
    }

    /// Gravity and damping may be switched off with zero.
    fn non_negative(&self, key: &str) -> Result<f64> {
        let v = self.raw(key);
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidDescriptor(format!(
                "parameter `{key}` of `{}` must be non-negative, got {v}",
                self.model
            )));
        }
        Ok(v)
    }
}

fn actuator_indices(
    desc: &ModelDescriptor,
    available: usize,
    default: &[usize],
) -> Result<Vec<usize>> {
    let ids = if desc.actuators.is_empty() {
        default.to_vec()
    } else {
        desc.actuators.clone()
    };
    let mut seen = Vec::new();
    for &id in &ids {
        if id == 0 || id > available {
            return Err(Error::InvalidDescriptor(format!(
                "actuator {id} out of range 1..={available} for `{}`",
                desc.name
            )));
        }
        if seen.contains(&id) {
            return Err(Error::InvalidDescriptor(format!(
                "actuator {id} listed twice"
            )));
        }
        seen.push(id);
    }
    Ok(ids.into_iter().map(|i| i - 1).collect())
}

/// Builds a built-in model with the analytic derivative provider.
pub fn build(desc: &ModelDescriptor) -> Result<MechanicalSystem> {
    let info = list_models()
        .into_iter()
        .find(|m| m.name == desc.name)
        .ok_or_else(|| Error::UnknownModel(desc.name.clone()))?;
    let params = Params::new(desc, &info)?;
    match info.name {
        "flat" => {
            let dof = params.positive("dof")?;
            if dof.fract() != 0.0 {
                return Err(Error::InvalidDescriptor("`dof` must be an integer".into()));
            }
            let n = dof as usize;
            let mass = params.positive("mass")?;
            let acts = actuator_indices(desc, n, &[1])?;
            flat(n, mass, &acts)
        }
        "pvtol" => pvtol(
            params.positive("mass")?,
            params.positive("inertia")?,
            params.positive("arm")?,
            params.non_negative("gravity")?,
            &actuator_indices(desc, 2, &info.default_actuators)?,
        ),
        "planar-body" => planar_body(
            params.positive("mass")?,
            params.positive("inertia")?,
            params.positive("arm")?,
            0.0,
            &actuator_indices(desc, 3, &info.default_actuators)?,
        ),
        "blimp" => planar_body(
            params.positive("mass")?,
            params.positive("inertia")?,
            params.positive("arm")?,
            params.non_negative("damping")?,
            &actuator_indices(desc, 3, &info.default_actuators)?,
        ),
        "three-link" => {
            let masses = [
                params.positive("m1")?,
                params.positive("m2")?,
                params.positive("m3")?,
            ];
            let lengths = [
                params.positive("l1")?,
                params.positive("l2")?,
                params.positive("l3")?,
            ];
            PlanarChain::new(&masses, &lengths, params.non_negative("gravity")?)
                .system(&actuator_indices(desc, 3, &info.default_actuators)?)
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Identity-inertia system on `ℝⁿ` (scaled by `mass`) with axis forces.
pub fn flat(n: usize, mass: f64, actuators: &[usize]) -> Result<MechanicalSystem> {
    let mut b = MechanicalSystem::builder(n, move |_| DMatrix::identity(n, n) * mass)
        .name("flat")
        .provider(DerivativeProvider::Analytic)
        .inertia_partials(move |_| vec![DMatrix::zeros(n, n); n]);
    for &a in actuators {
        if a >= n {
            return Err(Error::InvalidDescriptor(format!(
                "actuator {} out of range",
                a + 1
            )));
        }
        b = b.input_with_jacobian(
            move |_| {
                let mut e = DVector::zeros(n);
                e[a] = 1.0;
                e
            },
            move |_| DMatrix::zeros(n, n),
        );
    }
    b.build()
}

type Covector = (fn(f64, f64) -> [f64; 3], fn(f64, f64) -> [f64; 3]);

/// Body-frame force co-vectors as `(F(θ, arm), ∂F/∂θ(θ, arm))`.
fn planar_force(id: usize, pvtol: bool) -> Covector {
    if pvtol {
        match id {
            // body-x force applied at (0, −arm): rolling moment plus lateral push
            0 => (
                |th, h| [th.cos(), th.sin(), h],
                |th, _| [-th.sin(), th.cos(), 0.0],
            ),
            _ => (
                |th, _| [-th.sin(), th.cos(), 0.0],
                |th, _| [-th.cos(), -th.sin(), 0.0],
            ),
        }
    } else {
        match id {
            0 => (
                |th, _| [th.cos(), th.sin(), 0.0],
                |th, _| [-th.sin(), th.cos(), 0.0],
            ),
            // body-y force applied at (arm, 0)
            1 => (
                |th, h| [-th.sin(), th.cos(), h],
                |th, _| [-th.cos(), -th.sin(), 0.0],
            ),
            _ => (|_, _| [0.0, 0.0, 1.0], |_, _| [0.0, 0.0, 0.0]),
        }
    }
}

fn planar_system(
    name: &str,
    mass: f64,
    inertia: f64,
    arm: f64,
    damping: f64,
    gravity: f64,
    forces: Vec<Covector>,
) -> Result<MechanicalSystem> {
    let mut b = MechanicalSystem::builder(3, move |_| {
        DMatrix::from_diagonal(&DVector::from_vec(vec![mass, mass, inertia]))
    })
    .name(name)
    .provider(DerivativeProvider::Analytic)
    .inertia_partials(|_| vec![DMatrix::zeros(3, 3); 3]);
    if gravity > 0.0 {
        b = b
            .potential(move |q| mass * gravity * q[1])
            .potential_gradient(move |_| DVector::from_vec(vec![0.0, mass * gravity, 0.0]));
    }
    if damping > 0.0 {
        b = b.damping(move |_| DMatrix::identity(3, 3) * -damping);
    }
    for (f, df) in forces {
        b = b.input_with_jacobian(
            move |q| DVector::from_row_slice(&f(q[2], arm)),
            move |q| {
                let mut j = DMatrix::zeros(3, 3);
                j.set_column(2, &DVector::from_row_slice(&df(q[2], arm)));
                j
            },
        );
    }
    b.build()
}

/// PVTOL aircraft: `M = diag(m, m, J)`, `V = m g y`.
pub fn pvtol(
    mass: f64,
    inertia: f64,
    arm: f64,
    gravity: f64,
    actuators: &[usize],
) -> Result<MechanicalSystem> {
    let forces = actuators.iter().map(|&a| planar_force(a, true)).collect();
    planar_system("pvtol", mass, inertia, arm, 0.0, gravity, forces)
}

/// Planar rigid body; `damping > 0` gives the blimp variant.
pub fn planar_body(
    mass: f64,
    inertia: f64,
    arm: f64,
    damping: f64,
    actuators: &[usize],
) -> Result<MechanicalSystem> {
    let forces = actuators.iter().map(|&a| planar_force(a, false)).collect();
    let name = if damping > 0.0 {
        "blimp"
    } else {
        "planar-body"
    };
    planar_system(name, mass, inertia, arm, damping, 0.0, forces)
}

/// Planar serial chain of uniform rods with relative joint angles.
#[derive(Debug, Clone)]
pub struct PlanarChain {
    masses: Vec<f64>,
    lengths: Vec<f64>,
    gravity: f64,
}

impl PlanarChain {
    pub fn new(masses: &[f64], lengths: &[f64], gravity: f64) -> Self {
        assert_eq!(masses.len(), lengths.len());
        PlanarChain {
            masses: masses.to_vec(),
            lengths: lengths.to_vec(),
            gravity,
        }
    }

    fn links(&self) -> usize {
        self.masses.len()
    }

    /// Lever `d_iℓ` of link ℓ in the centre-of-mass position of link i.
    fn lever(&self, i: usize, l: usize) -> f64 {
        if l < i {
            self.lengths[l]
        } else {
            0.5 * self.lengths[i]
        }
    }

    fn rod_inertia(&self, i: usize) -> f64 {
        self.masses[i] * self.lengths[i].powi(2) / 12.0
    }

    fn absolute(q: &DVector<f64>) -> Vec<f64> {
        q.iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    pub fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.links();
        let phi = Self::absolute(q);
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in j..n {
                let mut s = 0.0;
                for i in k..n {
                    let mut t = 0.0;
                    for l in j..=i {
                        for p in k..=i {
                            t += self.lever(i, l) * self.lever(i, p) * (phi[l] - phi[p]).cos();
                        }
                    }
                    s += self.masses[i] * t + self.rod_inertia(i);
                }
                m[(j, k)] = s;
                m[(k, j)] = s;
            }
        }
        m
    }

    pub fn inertia_partials(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let n = self.links();
        let phi = Self::absolute(q);
        let ind = |r: usize, l: usize| if r <= l { 1.0 } else { 0.0 };
        (0..n)
            .map(|r| {
                let mut d = DMatrix::zeros(n, n);
                for j in 0..n {
                    for k in j..n {
                        let mut s = 0.0;
                        for i in k..n {
                            let mut t = 0.0;
                            for l in j..=i {
                                for p in k..=i {
                                    let w = ind(r, l) - ind(r, p);
                                    if w != 0.0 {
                                        t -= self.lever(i, l)
                                            * self.lever(i, p)
                                            * (phi[l] - phi[p]).sin()
                                            * w;
                                    }
                                }
                            }
                            s += self.masses[i] * t;
                        }
                        d[(j, k)] = s;
                        d[(k, j)] = s;
                    }
                }
                d
            })
            .collect()
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        let phi = Self::absolute(q);
        (0..self.links())
            .map(|i| {
                let y: f64 = (0..=i).map(|l| self.lever(i, l) * phi[l].sin()).sum();
                self.masses[i] * self.gravity * y
            })
            .sum()
    }

    pub fn potential_gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        let n = self.links();
        let phi = Self::absolute(q);
        DVector::from_fn(n, |r, _| {
            (r..n)
                .map(|i| {
                    let s: f64 = (r..=i).map(|l| self.lever(i, l) * phi[l].cos()).sum();
                    self.masses[i] * self.gravity * s
                })
                .sum()
        })
    }

    /// System actuated by the listed joints (0-based).
    pub fn system(&self, actuators: &[usize]) -> Result<MechanicalSystem> {
        let n = self.links();
        let (c1, c2, c3) = (self.clone(), self.clone(), self.clone());
        let mut b = MechanicalSystem::builder(n, move |q| c1.inertia(q))
            .name("three-link")
            .provider(DerivativeProvider::Analytic)
            .inertia_partials(move |q| c2.inertia_partials(q));
        if self.gravity > 0.0 {
            let c4 = self.clone();
            b = b
                .potential(move |q| c3.potential(q))
                .potential_gradient(move |q| c4.potential_gradient(q));
        }
        for &a in actuators {
            if a >= n {
                return Err(Error::InvalidDescriptor(format!(
                    "joint {} out of range",
                    a + 1
                )));
            }
            b = b.input_with_jacobian(
                move |_| {
                    let mut e = DVector::zeros(n);
                    e[a] = 1.0;
                    e
                },
                move |_| DMatrix::zeros(n, n),
            );
        }
        b.build()
    }
}

/// Three-link arm with unit parameters in the horizontal plane.
pub fn three_link(actuators: &[usize]) -> Result<MechanicalSystem> {
    PlanarChain::new(&[1.0; 3], &[1.0; 3], 0.0).system(actuators)
}
