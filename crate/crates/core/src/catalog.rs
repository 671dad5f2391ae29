//! Analytic surfaces and invariant families with known properties.
//!
//! Null-coordinate conventions (all chosen so that `<z_u, z_v> < 0`):
//!
//! * product surface `(a cos phi, a sin phi, b cosh psi, b sinh psi)`:
//!   `a phi = (u - v)/2`, `b psi = (u + v)/2`, giving `f = 1/sqrt(2)`;
//! * cylinder `(r cos theta, r sin theta, 0, t)`:
//!   `r theta = (u - v)/2`, `t = (u + v)/2`, giving `f = 1/sqrt(2)`.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::analysis::SurfacePatch;
use crate::error::{Error, Result};
use crate::grid::{GridDomain, ScalarField, Vec4Field};
use crate::invariants::{
    theorem_conditions_residuals_with, EvalOptions, InvariantSet, ResidualReport, SurfaceType,
};
use crate::minkowski::Vec4;
use crate::reconstruction::{AnalyticCoefficients, PointInvariants};

/// A chart with its exact first derivatives.
pub struct AnalyticChart {
    pub z: Vec4Field,
    pub z_u: Vec4Field,
    pub z_v: Vec4Field,
}

impl AnalyticChart {
    pub fn patch(&self) -> SurfacePatch {
        SurfacePatch::new(self.z.clone())
    }
}

fn chart(domain: GridDomain, point: impl Fn(f64, f64) -> [Vec4; 3]) -> Result<AnalyticChart> {
    Ok(AnalyticChart {
        z: Vec4Field::from_fn(domain, |u, v| point(u, v)[0])?,
        z_u: Vec4Field::from_fn(domain, |u, v| point(u, v)[1])?,
        z_v: Vec4Field::from_fn(domain, |u, v| point(u, v)[2])?,
    })
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDomain(format!("{name} must be positive, got {x}")))
    }
}

pub fn product_chart(a: f64, b: f64, domain: GridDomain) -> Result<AnalyticChart> {
    positive("a", a)?;
    positive("b", b)?;
    chart(domain, |u, v| {
        let (p, q) = ((u - v) / (2.0 * a), (u + v) / (2.0 * b));
        let (s, c, sh, ch) = (p.sin(), p.cos(), q.sinh(), q.cosh());
        [
            Vec4::new(a * c, a * s, b * ch, b * sh),
            Vec4::new(-s, c, sh, ch) * 0.5,
            Vec4::new(s, -c, sh, ch) * 0.5,
        ]
    })
}

/// `(a cos phi, a sin phi, b cosh psi, b sinh psi)` in null coordinates.
pub fn product_surface(a: f64, b: f64, domain: GridDomain) -> Result<SurfacePatch> {
    Ok(product_chart(a, b, domain)?.patch())
}

pub fn cylinder_chart(r: f64, domain: GridDomain) -> Result<AnalyticChart> {
    positive("r", r)?;
    chart(domain, |u, v| {
        let th = (u - v) / (2.0 * r);
        let (s, c) = (th.sin(), th.cos());
        [
            Vec4::new(r * c, r * s, 0.0, (u + v) / 2.0),
            Vec4::new(-s, c, 0.0, 1.0) * 0.5,
            Vec4::new(s, -c, 0.0, 1.0) * 0.5,
        ]
    })
}

/// `(r cos theta, r sin theta, 0, t)` in null coordinates.
pub fn cylinder_surface(r: f64, domain: GridDomain) -> Result<SurfacePatch> {
    Ok(cylinder_chart(r, domain)?.patch())
}

/// `f = 1`, `nu = c`, `lambda1 = lambda2 = 0`, `mu1 = mu2 = c`.
pub fn constant_first_type(c: f64, domain: GridDomain) -> Result<InvariantSet> {
    if c == 0.0 || !c.is_finite() {
        return Err(Error::InvalidDomain(format!("constant must be nonzero, got {c}")));
    }
    InvariantSet::from_fn(domain, |_, _| [1.0, c, 0.0, 0.0, c, c])
}

pub fn constant_first_type_source(c: f64) -> AnalyticCoefficients<impl Fn(f64, f64) -> PointInvariants + Sync> {
    AnalyticCoefficients(move |_, _| PointInvariants {
        f: 1.0,
        nu: c,
        mu1: c,
        mu2: c,
        ..Default::default()
    })
}

/// Parameters of the third-type family in `s = u + v`:
/// `f = 1/s`, `nu = sqrt(2)`, `lambda1 = cc s^2`,
/// `mu1 = a s + b s^2 + mu1_shift`, `lambda2 = mu2 = 0`.
///
/// A nonzero `mu1_shift` breaks compatibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThirdTypeParams {
    pub cc: f64,
    pub a: f64,
    pub b: f64,
    pub mu1_shift: f64,
}

impl ThirdTypeParams {
    pub fn new(cc: f64, a: f64, b: f64) -> Self {
        ThirdTypeParams {
            cc,
            a,
            b,
            mu1_shift: 0.0,
        }
    }

    pub fn shifted(self, mu1_shift: f64) -> Self {
        ThirdTypeParams { mu1_shift, ..self }
    }

    /// Closed-form values, with `beta1 = (a s + 2 shift)/sqrt(2)` from the
    /// third-type elimination formula.
    pub fn point(&self, u: f64, v: f64) -> PointInvariants {
        let s = u + v;
        PointInvariants {
            f: 1.0 / s,
            nu: SQRT_2,
            lambda1: self.cc * s * s,
            lambda2: 0.0,
            mu1: self.a * s + self.b * s * s + self.mu1_shift,
            mu2: 0.0,
            gamma1: -1.0,
            gamma2: -1.0,
            beta1: (self.a * s + 2.0 * self.mu1_shift) / SQRT_2,
            beta2: 0.0,
        }
    }
}

fn check_third_domain(domain: &GridDomain) -> Result<()> {
    if domain.u0 + domain.v0 > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidDomain(format!(
            "third-type family needs u + v > 0, domain starts at u + v = {}",
            domain.u0 + domain.v0
        )))
    }
}

pub fn third_type_family(cc: f64, a: f64, b: f64, domain: GridDomain) -> Result<InvariantSet> {
    third_type_family_with(ThirdTypeParams::new(cc, a, b), domain)
}

pub fn third_type_family_with(params: ThirdTypeParams, domain: GridDomain) -> Result<InvariantSet> {
    check_third_domain(&domain)?;
    InvariantSet::from_fn(domain, |u, v| {
        let p = params.point(u, v);
        [p.f, p.nu, p.lambda1, p.lambda2, p.mu1, p.mu2]
    })
}

pub fn third_type_source(params: ThirdTypeParams) -> AnalyticCoefficients<impl Fn(f64, f64) -> PointInvariants + Sync> {
    AnalyticCoefficients(move |u, v| params.point(u, v))
}

/// Shape of `lambda2(v)` used by the second-type probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lambda2Profile {
    /// `lambda2 = 1/sqrt(p)` with `p'' = -2 mu0^2 / (nu0^3 sqrt(p))`,
    /// `p'(v0) = 0`, which makes the fourth condition hold.
    Balanced,
    /// `lambda2 = 1/sqrt(p0)`; violates the fourth condition.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub nu0: f64,
    pub mu0: f64,
    pub p0: f64,
    pub profile: Lambda2Profile,
    /// Max-norm above which the third or fourth condition makes the probe fail.
    pub threshold: f64,
    /// RK4 steps per grid interval in the one-dimensional solves.
    pub substeps: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            nu0: 1.0,
            mu0: 1.0,
            p0: 1.0,
            profile: Lambda2Profile::Balanced,
            threshold: 1e-3,
            substeps: 8,
        }
    }
}

/// Generated second-type data and its condition report.
#[derive(Debug, Clone)]
pub struct SecondTypeProbe {
    pub invariants: InvariantSet,
    pub report: ResidualReport,
}

fn rk4_scalar_system<const N: usize>(
    y0: [f64; N],
    t0: f64,
    h: f64,
    nodes: usize,
    substeps: usize,
    rhs: impl Fn(f64, [f64; N]) -> [f64; N],
) -> Vec<[f64; N]> {
    let add = |a: [f64; N], b: [f64; N], s: f64| std::array::from_fn(|k| a[k] + s * b[k]);
    let dt = h / substeps as f64;
    let mut y = y0;
    let mut out = vec![y];
    for n in 1..nodes {
        for s in 0..substeps {
            let t = t0 + (n - 1) as f64 * h + s as f64 * dt;
            let k1 = rhs(t, y);
            let k2 = rhs(t + dt / 2.0, add(y, k1, dt / 2.0));
            let k3 = rhs(t + dt / 2.0, add(y, k2, dt / 2.0));
            let k4 = rhs(t + dt, add(y, k3, dt));
            y = std::array::from_fn(|k| y[k] + dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]));
        }
        out.push(y);
    }
    out
}

/// Numerically generated second-type data.
///
/// Seeds `f = 1`, `nu = nu0`, `lambda2 = lambda2(v)` and
/// `lambda1 = nu0^2 / lambda2`, so that the first and third conditions hold
/// identically. `mu1` is then obtained from the second condition, read as
/// an ODE in `v` with `mu1(u, v0) = mu0`, by RK4 along every `v`-line; the
/// third and fourth conditions are checked afterwards.
pub fn second_type_probe(domain: GridDomain, cfg: &ProbeConfig) -> Result<SecondTypeProbe> {
    positive("nu0", cfg.nu0)?;
    positive("p0", cfg.p0)?;
    if cfg.mu0 == 0.0 {
        return Err(Error::InvalidDomain("mu0 must be nonzero".into()));
    }
    let d = domain;
    let substeps = cfg.substeps.max(1);
    let k = cfg.mu0 * cfg.mu0 / cfg.nu0.powi(3);
    let p: Vec<f64> = match cfg.profile {
        Lambda2Profile::Balanced => {
            rk4_scalar_system([cfg.p0, 0.0], d.v0, d.hv, d.nv, substeps, |_, [p, q]| {
                [q, -2.0 * k / p.max(f64::MIN_POSITIVE).sqrt()]
            })
            .into_iter()
            .map(|[p, _]| p)
            .collect()
        }
        Lambda2Profile::Constant => vec![cfg.p0; d.nv],
    };
    if let Some(j) = p.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::ProbeInfeasible {
            condition: format!("lambda2 profile (p <= 0 at v index {j})"),
            residual: p[j],
            threshold: 0.0,
        });
    }
    let lam2: Vec<f64> = p.iter().map(|x| 1.0 / x.sqrt()).collect();
    let lam1: Vec<f64> = lam2.iter().map(|l| cfg.nu0 * cfg.nu0 / l).collect();

    // seeds depend on v only; the second condition with f = 1, nu_u = 0 reads
    // mu1_v = (nu^2 - lambda1 lambda2) lambda1_v / (lambda2 mu1)
    let seed = |v: f64| -> (f64, f64, f64) {
        let t = ((v - d.v0) / d.hv).clamp(0.0, (d.nv - 1) as f64);
        let j = (t.floor() as usize).min(d.nv - 2);
        let a = t - j as f64;
        let l2 = (1.0 - a) * lam2[j] + a * lam2[j + 1];
        let l1 = cfg.nu0 * cfg.nu0 / l2;
        let l1v = (lam1[j + 1] - lam1[j]) / d.hv;
        (l1, l2, l1v)
    };
    let nu0 = cfg.nu0;
    let mu_line: Vec<f64> = rk4_scalar_system([cfg.mu0], d.v0, d.hv, d.nv, substeps, |v, [m]| {
        let (l1, l2, l1v) = seed(v);
        [(nu0 * nu0 - l1 * l2) * l1v / (l2 * m)]
    })
    .into_iter()
    .map(|[m]| m)
    .collect();

    let field = |g: &dyn Fn(usize) -> f64| -> Result<ScalarField> {
        ScalarField::new(d, (0..d.len()).map(|kk| g(d.coords(kk).1)).collect())
    };
    let inv = InvariantSet::new(
        ScalarField::constant(d, 1.0),
        ScalarField::constant(d, cfg.nu0),
        field(&|j| lam1[j])?,
        field(&|j| lam2[j])?,
        field(&|j| mu_line[j])?,
        ScalarField::zeros(d),
    )?;
    let report = theorem_conditions_residuals_with(&inv, SurfaceType::SecondType, &EvalOptions::default())?;
    for name in ["second_iii", "second_iv"] {
        let r = report.max_norm(name).unwrap_or(0.0);
        if !(r <= cfg.threshold) {
            return Err(Error::ProbeInfeasible {
                condition: name.into(),
                residual: r,
                threshold: cfg.threshold,
            });
        }
    }
    Ok(SecondTypeProbe {
        invariants: inv,
        report,
    })
}

/// Kind of object a catalog entry produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Surface,
    Invariants,
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub kind: EntryKind,
    pub surface_type: Option<SurfaceType>,
    pub params: &'static [(&'static str, f64)],
    pub description: &'static str,
}

pub const ENTRIES: &[CatalogEntry] = &[
    CatalogEntry {
        name: "product",
        kind: EntryKind::Surface,
        surface_type: Some(SurfaceType::FirstType),
        params: &[("a", 1.0), ("b", 2.0)],
        description: "(a cos phi, a sin phi, b cosh psi, b sinh psi), parallel mean curvature",
    },
    CatalogEntry {
        name: "cylinder",
        kind: EntryKind::Surface,
        surface_type: Some(SurfaceType::InflectionDegenerate),
        params: &[("r", 1.0)],
        description: "(r cos theta, r sin theta, 0, t), lies in a 3-space",
    },
    CatalogEntry {
        name: "constant-first",
        kind: EntryKind::Invariants,
        surface_type: Some(SurfaceType::FirstType),
        params: &[("c", 1.0)],
        description: "f = 1, nu = mu1 = mu2 = c, lambda1 = lambda2 = 0",
    },
    CatalogEntry {
        name: "third-type",
        kind: EntryKind::Invariants,
        surface_type: Some(SurfaceType::ThirdType),
        params: &[("cc", 1.0), ("a", 1.0), ("b", 1.0), ("mu1_shift", 0.0)],
        description: "f = 1/(u+v), nu = sqrt 2, lambda1 = cc s^2, mu1 = a s + b s^2 (+ shift)",
    },
    CatalogEntry {
        name: "second-probe",
        kind: EntryKind::Invariants,
        surface_type: Some(SurfaceType::SecondType),
        params: &[("nu0", 1.0), ("mu0", 1.0), ("p0", 1.0), ("balanced", 1.0)],
        description: "numerically generated second-type data (balanced = 0 gives constant lambda2)",
    },
];

pub fn entry(name: &str) -> Option<&'static CatalogEntry> {
    ENTRIES.iter().find(|e| e.name == name)
}

/// Default grid of each entry.
pub fn default_domain(name: &str) -> Result<GridDomain> {
    match name {
        "third-type" => GridDomain::square(0.25, 0.25, 0.02, 51),
        "second-probe" => GridDomain::square(0.0, 0.0, 0.01, 51),
        _ => GridDomain::square(0.0, 0.0, 0.01, 51),
    }
}

pub enum CatalogItem {
    Surface(SurfacePatch),
    Invariants(InvariantSet),
}

/// Generates a catalog entry; missing parameters take their defaults.
pub fn emit(name: &str, params: &BTreeMap<String, f64>, domain: GridDomain) -> Result<CatalogItem> {
    let e = entry(name).ok_or_else(|| Error::Format(format!("unknown catalog entry '{name}'")))?;
    for key in params.keys() {
        if !e.params.iter().any(|(k, _)| k == key) {
            return Err(Error::Format(format!("entry '{name}' has no parameter '{key}'")));
        }
    }
    let p = |k: &str| {
        params
            .get(k)
            .copied()
            .or_else(|| e.params.iter().find(|(n, _)| *n == k).map(|(_, v)| *v))
            .expect("parameter listed in entry")
    };
    Ok(match name {
        "product" => CatalogItem::Surface(product_surface(p("a"), p("b"), domain)?),
        "cylinder" => CatalogItem::Surface(cylinder_surface(p("r"), domain)?),
        "constant-first" => CatalogItem::Invariants(constant_first_type(p("c"), domain)?),
        "third-type" => CatalogItem::Invariants(third_type_family_with(
            ThirdTypeParams::new(p("cc"), p("a"), p("b")).shifted(p("mu1_shift")),
            domain,
        )?),
        "second-probe" => {
            let cfg = ProbeConfig {
                nu0: p("nu0"),
                mu0: p("mu0"),
                p0: p("p0"),
                profile: if p("balanced") != 0.0 {
                    Lambda2Profile::Balanced
                } else {
                    Lambda2Profile::Constant
                },
                ..Default::default()
            };
            CatalogItem::Invariants(second_type_probe(domain, &cfg)?.invariants)
        }
        _ => unreachable!("entry table and match agree"),
    })
}
