//! Integration of the frame system `W_u = A W`, `W_v = B W` (frame legs as
//! the rows of `W`) and of the position system `z_u = f x`, `z_v = f y`.
//!
//! Frames are propagated with classical RK4 along grid lines: first along
//! the line through the origin, then independently along every transverse
//! line. The position is integrated along the same lines by Simpson's
//! rule, with midpoint values of `f x` (or `f y`) taken from a cubic
//! through the four nearest nodes.

use nalgebra::Matrix4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::SurfacePatch;
use crate::error::{Error, Result};
use crate::grid::{d_du, d_dv, GridDomain, ScalarField, Vec4Field};
use crate::invariants::{
    classify, derived_coefficients_with, ConditionResidual, DerivedCoefficients, EvalOptions,
    InvariantSet, ResidualReport, SurfaceType,
};
use crate::minkowski::{frame_gram_residual, reorthonormalize, PseudoOrthonormalFrame, Vec4};

/// Invariant and connection values at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PointInvariants {
    pub f: f64,
    pub nu: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl PointInvariants {
    pub fn at_node(inv: &InvariantSet, dc: &DerivedCoefficients, i: usize, j: usize) -> Self {
        PointInvariants {
            f: inv.f.at(i, j),
            nu: inv.nu.at(i, j),
            lambda1: inv.lambda1.at(i, j),
            lambda2: inv.lambda2.at(i, j),
            mu1: inv.mu1.at(i, j),
            mu2: inv.mu2.at(i, j),
            gamma1: dc.gamma1.at(i, j),
            gamma2: dc.gamma2.at(i, j),
            beta1: dc.beta1.at(i, j),
            beta2: dc.beta2.at(i, j),
        }
    }

    /// Zeroes the entries that vanish for the given type.
    pub fn restricted(mut self, ty: SurfaceType) -> Self {
        match ty {
            SurfaceType::SecondType => self.mu2 = 0.0,
            SurfaceType::ThirdType => {
                self.mu2 = 0.0;
                self.lambda2 = 0.0;
                self.beta2 = 0.0;
            }
            _ => {}
        }
        self
    }
}

/// The matrices `A`, `B` of the frame system at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientMatrices {
    pub a: Matrix4<f64>,
    pub b: Matrix4<f64>,
}

impl CoefficientMatrices {
    pub fn from_point(p: &PointInvariants, ty: SurfaceType) -> Self {
        let p = p.restricted(ty);
        #[rustfmt::skip]
        let a = Matrix4::new(
            p.gamma1, 0.0, p.lambda1, p.mu1,
            0.0, -p.gamma1, -p.nu, 0.0,
            -p.nu, p.lambda1, 0.0, p.beta1,
            0.0, p.mu1, -p.beta1, 0.0,
        ) * p.f;
        #[rustfmt::skip]
        let b = Matrix4::new(
            -p.gamma2, 0.0, -p.nu, 0.0,
            0.0, p.gamma2, p.lambda2, p.mu2,
            p.lambda2, -p.nu, 0.0, p.beta2,
            p.mu2, 0.0, -p.beta2, 0.0,
        ) * p.f;
        CoefficientMatrices { a, b }
    }
}

pub fn build_coefficient_matrices(
    inv: &InvariantSet,
    dc: &DerivedCoefficients,
    ty: SurfaceType,
    i: usize,
    j: usize,
) -> CoefficientMatrices {
    CoefficientMatrices::from_point(&PointInvariants::at_node(inv, dc, i, j), ty)
}

/// Supplies coefficient values anywhere in the parameter domain.
pub trait CoefficientSource: Sync {
    fn at(&self, u: f64, v: f64) -> PointInvariants;
}

/// Sampled fields, bilinearly interpolated between nodes (linear along
/// grid lines).
pub struct SampledCoefficients<'a> {
    pub invariants: &'a InvariantSet,
    pub derived: &'a DerivedCoefficients,
}

impl CoefficientSource for SampledCoefficients<'_> {
    fn at(&self, u: f64, v: f64) -> PointInvariants {
        let (inv, dc) = (self.invariants, self.derived);
        PointInvariants {
            f: inv.f.sample(u, v),
            nu: inv.nu.sample(u, v),
            lambda1: inv.lambda1.sample(u, v),
            lambda2: inv.lambda2.sample(u, v),
            mu1: inv.mu1.sample(u, v),
            mu2: inv.mu2.sample(u, v),
            gamma1: dc.gamma1.sample(u, v),
            gamma2: dc.gamma2.sample(u, v),
            beta1: dc.beta1.sample(u, v),
            beta2: dc.beta2.sample(u, v),
        }
    }
}

/// Coefficients given in closed form.
pub struct AnalyticCoefficients<F>(pub F);

impl<F: Fn(f64, f64) -> PointInvariants + Sync> CoefficientSource for AnalyticCoefficients<F> {
    fn at(&self, u: f64, v: f64) -> PointInvariants {
        (self.0)(u, v)
    }
}

impl<T: CoefficientSource + ?Sized> CoefficientSource for Box<T> {
    fn at(&self, u: f64, v: f64) -> PointInvariants {
        (**self).at(u, v)
    }
}

/// Componentwise residuals of `A_v - B_u + AB - BA`, named `flat_r_c`.
pub fn flatness_residual(
    inv: &InvariantSet,
    dc: &DerivedCoefficients,
    ty: SurfaceType,
    opts: &EvalOptions,
) -> Result<ResidualReport> {
    let d = *inv.domain();
    let mats: Vec<CoefficientMatrices> = (0..d.len())
        .map(|k| {
            let (i, j) = d.coords(k);
            build_coefficient_matrices(inv, dc, ty, i, j)
        })
        .collect();
    let margin = opts.margin();
    let mut conditions = Vec::with_capacity(16);
    for r in 0..4 {
        for c in 0..4 {
            let a = ScalarField::new(d, mats.iter().map(|m| m.a[(r, c)]).collect())?;
            let b = ScalarField::new(d, mats.iter().map(|m| m.b[(r, c)]).collect())?;
            let av = d_dv(&a, opts.stencil)?;
            let bu = d_du(&b, opts.stencil)?;
            let vals = (0..d.len())
                .map(|k| {
                    let m = &mats[k];
                    let comm = (m.a * m.b - m.b * m.a)[(r, c)];
                    av.values()[k] - bu.values()[k] + comm
                })
                .collect();
            let field = ScalarField::new(d, vals)?;
            conditions.push(ConditionResidual::from_field(
                format!("flat_{}_{}", r + 1, c + 1),
                field,
                margin,
            ));
        }
    }
    Ok(ResidualReport { conditions })
}

/// Order of the two sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PathStrategy {
    /// Along `u` at `v = v0`, then along every `v`-line.
    #[default]
    UThenV,
    /// Along `v` at `u = u0`, then along every `u`-line.
    VThenU,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub path: PathStrategy,
    /// Re-project every `k` RK4 steps; `0` disables re-projection.
    pub reproject_every: usize,
    /// RK4 steps per grid interval.
    pub substeps: usize,
    /// Frame components beyond this trip [`Error::StepUnstable`].
    pub max_magnitude: f64,
    /// Flatness max-norm, relative to the field scale, that warns.
    pub flatness_warn: f64,
    /// Flatness max-norm, relative to the field scale, that refuses.
    pub flatness_fail: f64,
    /// Zero-tolerance for classification; `None` picks the relative default.
    pub zero_tol: Option<f64>,
    #[serde(skip)]
    pub eval: EvalOptions,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            path: PathStrategy::UThenV,
            reproject_every: 1,
            substeps: 1,
            max_magnitude: 1e8,
            flatness_warn: 1e-6,
            flatness_fail: 1e-2,
            zero_tol: None,
            eval: EvalOptions::default(),
        }
    }
}

/// Frames on every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFieldPatch {
    pub domain: GridDomain,
    pub frames: Vec<PseudoOrthonormalFrame>,
    /// Largest Gram residual seen before any re-projection.
    pub max_drift: f64,
}

impl FrameFieldPatch {
    pub fn at(&self, i: usize, j: usize) -> &PseudoOrthonormalFrame {
        &self.frames[self.domain.index(i, j)]
    }

    pub fn max_gram_residual(&self) -> f64 {
        self.frames.iter().map(frame_gram_residual).fold(0.0, f64::max)
    }
}

/// One grid line: parameter start, step, count, and which matrix drives it.
struct Line {
    along_u: bool,
    fixed: f64,
    t0: f64,
    h: f64,
    n: usize,
}

impl Line {
    fn point(&self, t: f64) -> (f64, f64) {
        if self.along_u {
            (t, self.fixed)
        } else {
            (self.fixed, t)
        }
    }
}

struct LineResult {
    frames: Vec<Matrix4<f64>>,
    drift: f64,
}

/// RK4 along one line; returns the frame at every node including the start.
fn propagate_line(
    source: &dyn CoefficientSource,
    ty: SurfaceType,
    line: &Line,
    start: Matrix4<f64>,
    cfg: &ReconstructionConfig,
    node_index: impl Fn(usize) -> (usize, usize),
) -> Result<LineResult> {
    let substeps = cfg.substeps.max(1);
    let dt = line.h / substeps as f64;
    let mat = |t: f64| {
        let (u, v) = line.point(t);
        let m = CoefficientMatrices::from_point(&source.at(u, v), ty);
        if line.along_u {
            m.a
        } else {
            m.b
        }
    };
    let mut w = start;
    // Kahan compensation for the small increments added to a growing frame
    let mut carry = Matrix4::<f64>::zeros();
    let mut out = Vec::with_capacity(line.n);
    out.push(w);
    let mut drift = 0.0_f64;
    let mut count = 0usize;
    for node in 1..line.n {
        for s in 0..substeps {
            let t = line.t0 + (node - 1) as f64 * line.h + s as f64 * dt;
            let m0 = mat(t);
            let mh = mat(t + 0.5 * dt);
            let m1 = mat(t + dt);
            let k1 = m0 * w;
            let k2 = mh * (w + k1 * (0.5 * dt));
            let k3 = mh * (w + k2 * (0.5 * dt));
            let k4 = m1 * (w + k3 * dt);
            let inc = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0) - carry;
            let next = w + inc;
            carry = (next - w) - inc;
            w = next;
            count += 1;
            let frame = PseudoOrthonormalFrame::from_matrix(&w);
            let magnitude = frame.max_abs();
            if !(magnitude <= cfg.max_magnitude) {
                let (i, j) = node_index(node);
                return Err(Error::StepUnstable { i, j, magnitude });
            }
            let r = frame_gram_residual(&frame);
            drift = drift.max(r);
            if cfg.reproject_every > 0 && count % cfg.reproject_every == 0 {
                w = reorthonormalize(&frame)?.to_matrix();
                carry = Matrix4::zeros();
            }
        }
        out.push(w);
    }
    Ok(LineResult { frames: out, drift })
}

/// Propagates `frame0` from the grid origin over the whole domain.
pub fn integrate_frame(
    source: &dyn CoefficientSource,
    ty: SurfaceType,
    domain: &GridDomain,
    frame0: &PseudoOrthonormalFrame,
    cfg: &ReconstructionConfig,
) -> Result<FrameFieldPatch> {
    let r0 = frame_gram_residual(frame0);
    if !(r0 < 1e-10) {
        return Err(Error::DegenerateFrame(format!(
            "initial frame Gram residual {r0:e} exceeds 1e-10"
        )));
    }
    let d = *domain;
    let first_along_u = cfg.path == PathStrategy::UThenV;
    let (n_first, n_second) = if first_along_u { (d.nu, d.nv) } else { (d.nv, d.nu) };
    let index = move |a: usize, b: usize| if first_along_u { (a, b) } else { (b, a) };

    let axis = Line {
        along_u: first_along_u,
        fixed: if first_along_u { d.v0 } else { d.u0 },
        t0: if first_along_u { d.u0 } else { d.v0 },
        h: if first_along_u { d.hu } else { d.hv },
        n: n_first,
    };
    let spine = propagate_line(source, ty, &axis, frame0.to_matrix(), cfg, |a| index(a, 0))?;

    let lines: Vec<LineResult> = (0..n_first)
        .into_par_iter()
        .map(|a| {
            let line = Line {
                along_u: !first_along_u,
                fixed: if first_along_u { d.u(a) } else { d.v(a) },
                t0: if first_along_u { d.v0 } else { d.u0 },
                h: if first_along_u { d.hv } else { d.hu },
                n: n_second,
            };
            propagate_line(source, ty, &line, spine.frames[a], cfg, |b| index(a, b))
        })
        .collect::<Result<_>>()?;

    let mut frames = vec![PseudoOrthonormalFrame::standard(); d.len()];
    let mut drift = spine.drift;
    for (a, lr) in lines.iter().enumerate() {
        drift = drift.max(lr.drift);
        for (b, w) in lr.frames.iter().enumerate() {
            let (i, j) = index(a, b);
            frames[d.index(i, j)] = PseudoOrthonormalFrame::from_matrix(w);
        }
    }
    Ok(FrameFieldPatch {
        domain: d,
        frames,
        max_drift: drift,
    })
}

/// Lagrange weights at `x` for nodes `0, 1, ..., n-1`.
fn lagrange_weights(n: usize, x: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            (0..n)
                .filter(|&m| m != k)
                .map(|m| (x - m as f64) / (k as f64 - m as f64))
                .product()
        })
        .collect()
}

/// Integrates `g` sampled at `n` equally spaced nodes, returning the running
/// integral at every node.
fn simpson_cumulative(g: &[Vec4], h: f64, start: Vec4) -> Vec<Vec4> {
    let n = g.len();
    let width = n.min(4);
    let mut out = Vec::with_capacity(n);
    out.push(start);
    let mut acc = start;
    for k in 0..n - 1 {
        // window of `width` nodes containing k, k+1, as centred as possible
        let lo = (k + 1).saturating_sub(width / 2).min(n - width);
        let w = lagrange_weights(width, (k - lo) as f64 + 0.5);
        let mid = (0..width).fold(Vec4::ZERO, |s, m| s + g[lo + m] * w[m]);
        acc += (g[k] + mid * 4.0 + g[k + 1]) * (h / 6.0);
        out.push(acc);
    }
    out
}

/// Integrates `z_u = f x`, `z_v = f y` from `z0` along the sweep of `path`.
pub fn integrate_position(
    f: &ScalarField,
    frames: &FrameFieldPatch,
    z0: Vec4,
    path: PathStrategy,
) -> Result<Vec4Field> {
    let d = frames.domain;
    if !f.domain().matches(&d) {
        return Err(Error::DomainMismatch);
    }
    let gu = |i: usize, j: usize| frames.at(i, j).x * f.at(i, j);
    let gv = |i: usize, j: usize| frames.at(i, j).y * f.at(i, j);
    let mut z = vec![Vec4::ZERO; d.len()];
    match path {
        PathStrategy::UThenV => {
            let axis: Vec<Vec4> = (0..d.nu).map(|i| gu(i, 0)).collect();
            let spine = simpson_cumulative(&axis, d.hu, z0);
            let lines: Vec<Vec<Vec4>> = (0..d.nu)
                .into_par_iter()
                .map(|i| {
                    let g: Vec<Vec4> = (0..d.nv).map(|j| gv(i, j)).collect();
                    simpson_cumulative(&g, d.hv, spine[i])
                })
                .collect();
            for (i, line) in lines.into_iter().enumerate() {
                for (j, p) in line.into_iter().enumerate() {
                    z[d.index(i, j)] = p;
                }
            }
        }
        PathStrategy::VThenU => {
            let axis: Vec<Vec4> = (0..d.nv).map(|j| gv(0, j)).collect();
            let spine = simpson_cumulative(&axis, d.hv, z0);
            let lines: Vec<Vec<Vec4>> = (0..d.nv)
                .into_par_iter()
                .map(|j| {
                    let g: Vec<Vec4> = (0..d.nu).map(|i| gu(i, j)).collect();
                    simpson_cumulative(&g, d.hu, spine[j])
                })
                .collect();
            for (j, line) in lines.into_iter().enumerate() {
                for (i, p) in line.into_iter().enumerate() {
                    z[d.index(i, j)] = p;
                }
            }
        }
    }
    Vec4Field::new(d, z)
}

/// Output of the reconstruction pipeline.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub patch: SurfacePatch,
    pub surface_type: SurfaceType,
    /// Empty when the coefficients came from a closed-form source.
    pub flatness: ResidualReport,
    pub max_drift: f64,
}

/// Scale used to make flatness thresholds relative.
pub fn field_scale(inv: &InvariantSet, dc: &DerivedCoefficients) -> f64 {
    let s = dc
        .fields()
        .iter()
        .map(|(_, g)| g.max_abs())
        .fold(inv.curvature_scale(), f64::max);
    let f = inv.f.max_abs();
    let scale = s * f;
    if scale > 0.0 {
        scale
    } else {
        1.0
    }
}

/// Type, derived coefficients and flatness report, refusing data whose
/// flatness exceeds the configured threshold.
pub fn prepare(
    inv: &InvariantSet,
    ty: Option<SurfaceType>,
    cfg: &ReconstructionConfig,
) -> Result<(SurfaceType, DerivedCoefficients, ResidualReport)> {
    let ty = match ty {
        Some(t) => t,
        None => classify(inv, cfg.zero_tol.unwrap_or_else(|| inv.default_zero_tol()))?,
    };
    if !ty.is_reconstructible() {
        return Err(Error::TypeMismatch(format!(
            "no reconstruction theorem covers {ty} data"
        )));
    }
    let eval = EvalOptions {
        zero_tol: cfg.zero_tol,
        ..cfg.eval
    };
    let dc = derived_coefficients_with(inv, ty, &eval)?;
    let flat = flatness_residual(inv, &dc, ty, &eval)?;
    let scale = field_scale(inv, &dc);
    let worst = flat.worst();
    if worst > cfg.flatness_fail * scale {
        return Err(Error::IncompatibleData(format!(
            "flatness residual {worst:e} exceeds {:e}",
            cfg.flatness_fail * scale
        )));
    }
    if worst > cfg.flatness_warn * scale {
        log::warn!("flatness residual {worst:e} is above the warning level");
    }
    Ok((ty, dc, flat))
}

/// Flatness on the grid and on its every-other-sample restriction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementCheck {
    pub surface_type: SurfaceType,
    /// Worst flatness residual at the finer spacing.
    pub fine: f64,
    pub coarse: f64,
    /// `log2(coarse / fine)`; `None` when both vanish.
    pub order: Option<f64>,
    pub scale: f64,
    pub compatible: bool,
}

/// Observed order below which a non-negligible flatness residual is
/// treated as a floor rather than discretization error.
pub const MIN_FLATNESS_ORDER: f64 = 1.0;

/// Tells discretization error from genuine incompatibility: compatible
/// data have a flatness residual that shrinks at the stencil order under
/// refinement, incompatible data keep a floor.
///
/// Grids with an even node count lose their last row or column first. Both
/// residuals are taken over the same parameter region.
pub fn flatness_refinement_check(
    inv: &InvariantSet,
    ty: Option<SurfaceType>,
    cfg: &ReconstructionConfig,
) -> Result<RefinementCheck> {
    let ty = match ty {
        Some(t) => t,
        None => classify(inv, cfg.zero_tol.unwrap_or_else(|| inv.default_zero_tol()))?,
    };
    if !ty.is_reconstructible() {
        return Err(Error::TypeMismatch(format!(
            "no reconstruction theorem covers {ty} data"
        )));
    }
    let d = inv.domain();
    let odd = |n: usize| if n % 2 == 1 { n } else { n - 1 };
    let fine_set = inv.leading(odd(d.nu), odd(d.nv))?;
    let coarse_set = fine_set.coarsened().ok_or_else(|| {
        let (axis, len) = if odd(d.nu) < 5 { ('u', d.nu) } else { ('v', d.nv) };
        Error::GridTooSmall {
            axis,
            len,
            required: 5,
        }
    })?;
    let base = EvalOptions {
        zero_tol: cfg.zero_tol,
        ..cfg.eval
    };
    let m = base.margin();
    let worst = |set: &InvariantSet, margin: usize| -> Result<(f64, f64)> {
        let eval = EvalOptions {
            margin: Some(margin),
            ..base
        };
        let dc = derived_coefficients_with(set, ty, &eval)?;
        let flat = flatness_residual(set, &dc, ty, &eval)?;
        Ok((flat.worst(), field_scale(set, &dc)))
    };
    let (fine, scale) = worst(&fine_set, 2 * m)?;
    let (coarse, _) = worst(&coarse_set, m)?;
    let order = if fine > 0.0 {
        Some((coarse / fine).log2())
    } else if coarse > 0.0 {
        Some(f64::INFINITY)
    } else {
        None
    };
    let negligible = fine <= cfg.flatness_warn * scale;
    let compatible = negligible || order.is_some_and(|q| q >= MIN_FLATNESS_ORDER);
    Ok(RefinementCheck {
        surface_type: ty,
        fine,
        coarse,
        order,
        scale,
        compatible,
    })
}

impl RefinementCheck {
    pub fn require_compatible(&self) -> Result<()> {
        if self.compatible {
            return Ok(());
        }
        Err(Error::IncompatibleData(format!(
            "flatness residual {:.3e} does not shrink under refinement ({:.3e} at twice the spacing, order {:.2})",
            self.fine,
            self.coarse,
            self.order.unwrap_or(0.0)
        )))
    }
}

/// Frames and position from sampled invariants.
pub fn reconstruct(
    inv: &InvariantSet,
    p0: Vec4,
    frame0: &PseudoOrthonormalFrame,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    reconstruct_as(inv, None, p0, frame0, cfg)
}

/// [`reconstruct`] with the surface type fixed by the caller.
pub fn reconstruct_as(
    inv: &InvariantSet,
    ty: Option<SurfaceType>,
    p0: Vec4,
    frame0: &PseudoOrthonormalFrame,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    let (ty, dc, flatness) = prepare(inv, ty, cfg)?;
    let source = SampledCoefficients {
        invariants: inv,
        derived: &dc,
    };
    let mut rec = reconstruct_from_source(&source, inv.domain(), ty, p0, frame0, cfg)?;
    rec.flatness = flatness;
    Ok(rec)
}

/// Frames and position from coefficients given anywhere in the domain.
pub fn reconstruct_from_source(
    source: &dyn CoefficientSource,
    domain: &GridDomain,
    ty: SurfaceType,
    p0: Vec4,
    frame0: &PseudoOrthonormalFrame,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    let frames = integrate_frame(source, ty, domain, frame0, cfg)?;
    let f = ScalarField::from_fn(*domain, |u, v| source.at(u, v).f)?;
    let z = integrate_position(&f, &frames, p0, cfg.path)?;
    let max_drift = frames.max_drift;
    let patch = SurfacePatch {
        z,
        frames: Some(frames.frames),
        f: Some(f),
    };
    Ok(Reconstruction {
        patch,
        surface_type: ty,
        flatness: ResidualReport::default(),
        max_drift,
    })
}

/// Euclidean distance between two patches' position and frame at the far
/// corner `(nu - 1, nv - 1)`.
pub fn corner_discrepancy(a: &SurfacePatch, b: &SurfacePatch) -> Result<f64> {
    let d = *a.domain();
    if !b.domain().matches(&d) {
        return Err(Error::DomainMismatch);
    }
    let (i, j) = (d.nu - 1, d.nv - 1);
    let mut m = (a.z.at(i, j) - b.z.at(i, j)).euclidean_norm();
    if let (Some(fa), Some(fb)) = (a.frame_at(i, j), b.frame_at(i, j)) {
        for (x, y) in fa.legs().iter().zip(fb.legs()) {
            m = m.max((*x - y).euclidean_norm());
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minkowski::minkowski_dot;

    fn constant(c: f64, d: GridDomain) -> InvariantSet {
        InvariantSet::from_fn(d, |_, _| [1.0, c, 0.0, 0.0, c, c]).unwrap()
    }

    #[test]
    fn constant_matrices_match_direct_substitution() {
        let c = 1.7;
        let d = GridDomain::square(0.0, 0.0, 0.1, 5).unwrap();
        let inv = constant(c, d);
        let dc = crate::invariants::derived_coefficients(&inv, SurfaceType::FirstType).unwrap();
        let m = build_coefficient_matrices(&inv, &dc, SurfaceType::FirstType, 2, 3);
        #[rustfmt::skip]
        let want = Matrix4::new(
            0.0, 0.0, 0.0, c,
            0.0, 0.0, -c, 0.0,
            -c, 0.0, 0.0, 0.0,
            0.0, c, 0.0, 0.0,
        );
        assert!((m.a - want).abs().max() < 1e-15);
        let r = flatness_residual(&inv, &dc, SurfaceType::FirstType, &EvalOptions::default()).unwrap();
        assert_eq!(r.conditions.len(), 16);
        // products of c in different orders round differently
        assert!(r.worst() < 1e-14);
        let one = constant(1.0, d);
        let dc = crate::invariants::derived_coefficients(&one, SurfaceType::FirstType).unwrap();
        let r = flatness_residual(&one, &dc, SurfaceType::FirstType, &EvalOptions::default()).unwrap();
        assert_eq!(r.worst(), 0.0);
    }

    #[test]
    fn third_type_b_has_zero_last_row() {
        let p = PointInvariants {
            f: 0.5,
            nu: 1.4,
            lambda1: 2.0,
            lambda2: 3.0,
            mu1: 1.0,
            mu2: 4.0,
            gamma1: -1.0,
            gamma2: -1.0,
            beta1: 0.7,
            beta2: 0.9,
        };
        let m = CoefficientMatrices::from_point(&p, SurfaceType::ThirdType);
        for c in 0..4 {
            assert_eq!(m.b[(3, c)], 0.0);
        }
    }

    /// `A J` antisymmetric for `J = gram(x, y, n1, n2)`: exact frames stay exact.
    #[test]
    fn matrices_preserve_the_target_gram() {
        let p = PointInvariants {
            f: 0.8,
            nu: 1.1,
            lambda1: -0.4,
            lambda2: 0.3,
            mu1: 0.9,
            mu2: -1.2,
            gamma1: 0.25,
            gamma2: -0.6,
            beta1: 0.35,
            beta2: -0.15,
        };
        let j = crate::minkowski::target_gram();
        let m = CoefficientMatrices::from_point(&p, SurfaceType::FirstType);
        for x in [m.a, m.b] {
            let s = x * j + (x * j).transpose();
            assert!(s.abs().max() < 1e-15, "{s}");
        }
    }

    #[test]
    fn zero_curvature_keeps_the_frame_constant() {
        // nu = lambda = mu = 0, f = 1: A = B = 0
        let d = GridDomain::square(0.0, 0.0, 0.1, 6).unwrap();
        let source = AnalyticCoefficients(|_, _| PointInvariants {
            f: 1.0,
            ..Default::default()
        });
        let f0 = PseudoOrthonormalFrame::standard();
        let fr = integrate_frame(&source, SurfaceType::FirstType, &d, &f0, &Default::default()).unwrap();
        assert!(fr.frames.iter().all(|f| *f == f0));
        let f = ScalarField::constant(d, 1.0);
        let z0 = Vec4::new(0.3, -1.0, 2.0, 0.5);
        let z = integrate_position(&f, &fr, z0, PathStrategy::UThenV).unwrap();
        for i in 0..d.nu {
            for j in 0..d.nv {
                let want = z0 + f0.x * d.u(i) + f0.y * d.v(j);
                assert!((z.at(i, j) - want).max_abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_data_matches_matrix_exponential_at_fourth_order() {
        // A B = B A = I, so W = exp(A u) exp(B v) W0
        let err = |h: f64, n: usize| {
            let d = GridDomain::square(0.0, 0.0, h, n).unwrap();
            let inv = constant(1.0, d);
            let cfg = ReconstructionConfig {
                reproject_every: 0,
                ..Default::default()
            };
            let dc = crate::invariants::derived_coefficients(&inv, SurfaceType::FirstType).unwrap();
            let src = SampledCoefficients {
                invariants: &inv,
                derived: &dc,
            };
            let f0 = PseudoOrthonormalFrame::standard();
            let fr = integrate_frame(&src, SurfaceType::FirstType, &d, &f0, &cfg).unwrap();
            let m = build_coefficient_matrices(&inv, &dc, SurfaceType::FirstType, 0, 0);
            let (u, v) = (d.u_max(), d.v_max());
            let want = (m.a * u).exp() * (m.b * v).exp() * f0.to_matrix();
            (fr.at(d.nu - 1, d.nv - 1).to_matrix() - want).abs().max()
        };
        let (e1, e2) = (err(0.1, 6), err(0.05, 11));
        let ratio = e1 / e2;
        assert!(ratio > 13.0 && ratio < 19.0, "{e1} {e2} {ratio}");
    }

    #[test]
    fn parallel_sweep_is_deterministic() {
        let d = GridDomain::square(0.0, 0.0, 0.05, 21).unwrap();
        let inv = constant(1.0, d);
        let a = reconstruct(&inv, Vec4::ZERO, &PseudoOrthonormalFrame::standard(), &Default::default()).unwrap();
        let b = reconstruct(&inv, Vec4::ZERO, &PseudoOrthonormalFrame::standard(), &Default::default()).unwrap();
        assert_eq!(a.patch, b.patch);
    }

    #[test]
    fn reconstructed_constant_patch_is_isotropic() {
        let d = GridDomain::square(0.0, 0.0, 0.01, 41).unwrap();
        let inv = constant(1.0, d);
        let rec = reconstruct(&inv, Vec4::ZERO, &PseudoOrthonormalFrame::standard(), &Default::default()).unwrap();
        assert_eq!(rec.surface_type, SurfaceType::FirstType);
        let f = crate::analysis::check_isotropic(&rec.patch, 1e-3).unwrap();
        assert!(f.values().iter().all(|v| (v - 1.0).abs() < 1e-6), "{}", f.max());
        let zu = rec.patch.z.d_du(crate::grid::Stencil::Second).unwrap();
        assert!(minkowski_dot(&zu.at(5, 5), &zu.at(5, 5)).abs() < 1e-4);
    }

    #[test]
    fn unstable_growth_is_reported() {
        let d = GridDomain::square(0.0, 0.0, 0.5, 30).unwrap();
        let source = AnalyticCoefficients(|_, _| PointInvariants {
            f: 1.0,
            nu: 3.0,
            mu1: 3.0,
            mu2: 3.0,
            ..Default::default()
        });
        let cfg = ReconstructionConfig {
            max_magnitude: 1e6,
            reproject_every: 0,
            ..Default::default()
        };
        let r = integrate_frame(&source, SurfaceType::FirstType, &d, &PseudoOrthonormalFrame::standard(), &cfg);
        assert!(matches!(r, Err(Error::StepUnstable { .. })));
    }

    #[test]
    fn rejects_degenerate_initial_frame_and_uncovered_types() {
        let d = GridDomain::square(0.0, 0.0, 0.1, 5).unwrap();
        let mut f0 = PseudoOrthonormalFrame::standard();
        f0.n1 = f0.n1 * 1.1;
        let src = AnalyticCoefficients(|_, _| PointInvariants {
            f: 1.0,
            ..Default::default()
        });
        assert!(matches!(
            integrate_frame(&src, SurfaceType::FirstType, &d, &f0, &Default::default()),
            Err(Error::DegenerateFrame(_))
        ));
        let infl = InvariantSet::from_fn(d, |_, _| [1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            reconstruct(&infl, Vec4::ZERO, &PseudoOrthonormalFrame::standard(), &Default::default()),
            Err(Error::TypeMismatch(_))
        ));
    }

    #[test]
    fn simpson_with_cubic_midpoints_is_exact_for_cubics() {
        let h = 0.1;
        let g: Vec<Vec4> = (0..7)
            .map(|k| {
                let t = k as f64 * h;
                Vec4::new(t * t * t, t * t, t, 1.0)
            })
            .collect();
        let z = simpson_cumulative(&g, h, Vec4::ZERO);
        for (k, p) in z.iter().enumerate() {
            let t = k as f64 * h;
            let want = Vec4::new(t.powi(4) / 4.0, t.powi(3) / 3.0, t * t / 2.0, t);
            assert!((*p - want).max_abs() < 1e-14, "{k}");
        }
        let w = lagrange_weights(3, 0.5);
        assert!((w[0] - 0.375).abs() < 1e-15 && (w[2] + 0.125).abs() < 1e-15);
    }

    #[test]
    fn refinement_check_separates_floor_from_stencil_error() {
        use crate::catalog::{third_type_family_with, ThirdTypeParams};
        let d = GridDomain::square(0.25, 0.25, 0.02, 51).unwrap();
        let good = ThirdTypeParams::new(1.0, 1.0, 1.0);
        let cfg = ReconstructionConfig::default();
        let inv = third_type_family_with(good, d).unwrap();
        let ok = flatness_refinement_check(&inv, None, &cfg).unwrap();
        assert_eq!(ok.surface_type, SurfaceType::ThirdType);
        assert!(ok.compatible && (ok.order.unwrap() - 2.0).abs() < 0.3, "{ok:?}");
        ok.require_compatible().unwrap();

        let bad = third_type_family_with(good.shifted(0.1), d).unwrap();
        let r = flatness_refinement_check(&bad, Some(SurfaceType::ThirdType), &cfg).unwrap();
        assert!(!r.compatible && r.order.unwrap() < 0.5, "{r:?}");
        assert!(matches!(r.require_compatible(), Err(Error::IncompatibleData(_))));

        // even node counts are trimmed, constants have no residual at all
        let even = GridDomain::square(0.0, 0.0, 0.05, 12).unwrap();
        let r = flatness_refinement_check(&constant(1.0, even), None, &cfg).unwrap();
        assert!(r.compatible && r.fine == 0.0 && r.order.is_none());
        let tiny = GridDomain::square(0.0, 0.0, 0.05, 4).unwrap();
        assert!(matches!(
            flatness_refinement_check(&constant(1.0, tiny), None, &cfg),
            Err(Error::GridTooSmall { .. })
        ));
    }
}
