//! Geometric frames and invariants of sampled surfaces given in isotropic
//! parameters, plus minimal/inflection point detection.
//!
//! With `x = z_u / f`, `y = z_v / f`, the normal part of a vector is
//! `N(w) = w + <w, y> x + <w, x> y` for an exact null pair; on samples the
//! projection uses the actual Gram matrix of `x, y`.
//!
//! Every quantity is built from direct difference stencils of `z`, never
//! from differences of differences along one axis, so boundary samples keep
//! the stencil order:
//!
//! * `sigma(x, x) = N(z_uu) / f^2`, `sigma(y, y) = N(z_vv) / f^2`,
//!   `H = -N(z_uv) / f^2`;
//! * `z_uv` is normal in isotropic parameters, so
//!   `beta1 = <(1/f) d_u n1, n2> = -<z_uuv, n2> / (nu f^3)` and
//!   `beta2 = -<z_uvv, n2> / (nu f^3)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IsotropyDefect, Result};
use crate::grid::{GridDomain, ScalarField, Stencil, Vec4Field};
use crate::invariants::{classify, DerivedCoefficients, InvariantSet, SurfaceType};
use crate::minkowski::{PseudoOrthonormalFrame, Vec4};

/// Relative isotropy tolerance for sampled patches.
pub const DEFAULT_ISOTROPY_TOL: f64 = 1e-3;
/// Below this `nu` a point counts as minimal.
pub const DEFAULT_MINIMAL_TOL: f64 = 1e-6;
/// Below this `sqrt(mu1^2 + mu2^2)` a point counts as an inflection point.
pub const DEFAULT_INFLECTION_TOL: f64 = 1e-6;

/// A sampled immersion with optional attached frames and metric function.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePatch {
    pub z: Vec4Field,
    pub frames: Option<Vec<PseudoOrthonormalFrame>>,
    pub f: Option<ScalarField>,
}

impl SurfacePatch {
    pub fn new(z: Vec4Field) -> Self {
        SurfacePatch {
            z,
            frames: None,
            f: None,
        }
    }

    pub fn domain(&self) -> &GridDomain {
        self.z.domain()
    }

    pub fn with_frames(mut self, frames: Vec<PseudoOrthonormalFrame>) -> Result<Self> {
        if frames.len() != self.domain().len() {
            return Err(Error::ShapeMismatch(format!(
                "{} frames for {} samples",
                frames.len(),
                self.domain().len()
            )));
        }
        self.frames = Some(frames);
        Ok(self)
    }

    pub fn with_f(mut self, f: ScalarField) -> Result<Self> {
        if !f.domain().matches(self.domain()) {
            return Err(Error::DomainMismatch);
        }
        self.f = Some(f);
        Ok(self)
    }

    /// Every other sample of the immersion, after dropping a trailing row or
    /// column where a count is even. Frames and `f` are not carried over.
    pub fn coarsened(&self) -> Option<SurfacePatch> {
        let d = self.domain();
        let odd = |n: usize| n - (1 - n % 2);
        let z = self.z.leading(odd(d.nu), odd(d.nv)).ok()?.coarsened()?;
        Some(SurfacePatch::new(z))
    }

    pub fn frame_at(&self, i: usize, j: usize) -> Option<&PseudoOrthonormalFrame> {
        self.frames
            .as_ref()
            .map(|fs| &fs[self.domain().index(i, j)])
    }
}

/// Which of the two unit normals orthogonal to `n1` is called `n2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormalOrientation {
    /// `det(x, y, n1, n2) > 0`.
    #[default]
    Positive,
    /// `det(x, y, n1, n2) < 0`.
    Negative,
}

/// Time orientation of the null tangent pair, read off the sign of the
/// last coordinate of `x` and `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeOrientation {
    Future,
    Past,
    /// Signs differ between the legs or across samples.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub stencil: Stencil,
    /// Relative tolerance: `|E| < tol |z_u|^2`, `|G| < tol |z_v|^2`,
    /// `F < -tol |z_u| |z_v|` (Euclidean norms).
    pub isotropy_tol: f64,
    pub minimal_tol: f64,
    pub orientation: NormalOrientation,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            stencil: Stencil::Second,
            isotropy_tol: DEFAULT_ISOTROPY_TOL,
            minimal_tol: DEFAULT_MINIMAL_TOL,
            orientation: NormalOrientation::Positive,
        }
    }
}

/// Tests tangent samples for isotropy and returns `f = sqrt(-F)`.
pub fn check_isotropic_tangents(zu: &Vec4Field, zv: &Vec4Field, tol: f64) -> Result<ScalarField> {
    let d = *zu.domain();
    if !zv.domain().matches(&d) {
        return Err(Error::DomainMismatch);
    }
    // worst relative defect per coefficient
    let mut worst: Option<(f64, IsotropyDefect, usize, f64)> = None;
    let mut note = |score: f64, defect, k, value| {
        if worst.map_or(true, |w| score > w.0) {
            worst = Some((score, defect, k, value));
        }
    };
    let mut f = Vec::with_capacity(d.len());
    for (k, (a, b)) in zu.values().iter().zip(zv.values()).enumerate() {
        let (na, nb) = (a.euclidean_norm(), b.euclidean_norm());
        let (e, g, ff) = (a.dot(a), b.dot(b), a.dot(b));
        if !(e.abs() < tol * na * na) {
            note(e.abs() / (na * na).max(f64::MIN_POSITIVE), IsotropyDefect::E, k, e);
        }
        if !(g.abs() < tol * nb * nb) {
            note(g.abs() / (nb * nb).max(f64::MIN_POSITIVE), IsotropyDefect::G, k, g);
        }
        if !(ff < -tol * na * nb) {
            note(ff / (na * nb).max(f64::MIN_POSITIVE) + tol, IsotropyDefect::F, k, ff);
        }
        f.push((-ff).max(0.0).sqrt());
    }
    if let Some((_, defect, k, value)) = worst {
        let (i, j) = d.coords(k);
        return Err(Error::NotIsotropic { defect, i, j, value });
    }
    ScalarField::new(d, f)
}

/// Verifies `E = G = 0`, `F < 0` on the sampled chart and returns `f`.
pub fn check_isotropic(patch: &SurfacePatch, tol: f64) -> Result<ScalarField> {
    check_isotropic_with(patch, tol, Stencil::Second)
}

pub fn check_isotropic_with(patch: &SurfacePatch, tol: f64, stencil: Stencil) -> Result<ScalarField> {
    let zu = patch.z.d_du(stencil)?;
    let zv = patch.z.d_dv(stencil)?;
    check_isotropic_tangents(&zu, &zv, tol)
}

/// Normal part of `w`: `w` minus its projection on `span(x, y)`, using
/// the sampled Gram matrix of `x, y` (exactly null only in the limit).
#[inline]
fn normal_part(w: Vec4, x: Vec4, y: Vec4) -> Vec4 {
    let (e, f, g) = (x.dot(&x), x.dot(&y), y.dot(&y));
    let (wx, wy) = (w.dot(&x), w.dot(&y));
    let det = e * g - f * f;
    let a = (g * wx - f * wy) / det;
    let b = (e * wy - f * wx) / det;
    w - x * a - y * b
}

/// The vector `c` with `<c, w> = det(a, b, d, w)` for every `w`.
fn minkowski_cross(a: Vec4, b: Vec4, d: Vec4) -> Vec4 {
    let m = nalgebra::Matrix4::from_fn(|r, c| match r {
        0 => a.0[c],
        1 => b.0[c],
        2 => d.0[c],
        _ => 0.0,
    });
    // Euclidean cofactors of the last row, then lower the index with eta
    let mut e = [0.0; 4];
    for (col, slot) in e.iter_mut().enumerate() {
        let minor = m.remove_row(3).remove_column(col);
        let sign = if (3 + col) % 2 == 0 { 1.0 } else { -1.0 };
        *slot = sign * minor.determinant();
    }
    Vec4([e[0], e[1], e[2], -e[3]])
}

/// Unit normal orthogonal to `x, y, n1` with the requested orientation.
fn complete_normal(x: Vec4, y: Vec4, n1: Vec4, orientation: NormalOrientation) -> Result<Vec4> {
    let c = minkowski_cross(x, y, n1);
    let q = c.dot(&c);
    if !(q > 0.0) {
        return Err(Error::DegenerateFrame(format!(
            "normal complement has <n2, n2> = {q:e}"
        )));
    }
    let n2 = c * (1.0 / q.sqrt());
    let det = PseudoOrthonormalFrame::new(x, y, n1, n2).orientation();
    let want = match orientation {
        NormalOrientation::Positive => 1.0,
        NormalOrientation::Negative => -1.0,
    };
    Ok(if det * want < 0.0 { -n2 } else { n2 })
}

/// Pointwise second-order data shared by frame construction, extraction
/// and degeneracy detection.
struct Geometry {
    domain: GridDomain,
    f: ScalarField,
    x: Vec4Field,
    y: Vec4Field,
    zuu: Vec4Field,
    zvv: Vec4Field,
    /// `sigma(x, x)`, `sigma(y, y)`, `H`
    sxx: Vec<Vec4>,
    syy: Vec<Vec4>,
    h: Vec<Vec4>,
    nu: Vec<f64>,
    /// Samples where `<H, H>` came out negative and was clamped.
    clamped: usize,
}

impl Geometry {
    fn new(patch: &SurfacePatch, opts: &AnalysisOptions) -> Result<Self> {
        let s = opts.stencil;
        let d = *patch.domain();
        let zu = patch.z.d_du(s)?;
        let zv = patch.z.d_dv(s)?;
        let f = check_isotropic_tangents(&zu, &zv, opts.isotropy_tol)?;
        let fv = f.values();
        let x = Vec4Field::new(d, zu.values().iter().zip(fv).map(|(a, f)| *a * (1.0 / f)).collect())?;
        let y = Vec4Field::new(d, zv.values().iter().zip(fv).map(|(a, f)| *a * (1.0 / f)).collect())?;
        let zuv = patch.z.d2_dudv(s)?;
        let zuu = patch.z.d2_duu(s)?;
        let zvv = patch.z.d2_dvv(s)?;
        let n = d.len();
        let mut sxx = Vec::with_capacity(n);
        let mut syy = Vec::with_capacity(n);
        let mut h = Vec::with_capacity(n);
        let mut nu = Vec::with_capacity(n);
        let mut clamped = 0;
        for k in 0..n {
            let (xk, yk, fk) = (x.values()[k], y.values()[k], fv[k]);
            let f2 = 1.0 / (fk * fk);
            sxx.push(normal_part(zuu.values()[k], xk, yk) * f2);
            syy.push(normal_part(zvv.values()[k], xk, yk) * f2);
            let hk = normal_part(zuv.values()[k], xk, yk) * (-1.0 / (fk * fk));
            let q = hk.dot(&hk);
            if q < 0.0 {
                clamped += 1;
            }
            nu.push(q.max(0.0).sqrt());
            h.push(hk);
        }
        if clamped > 0 {
            log::warn!("<H, H> < 0 clamped to 0 at {clamped} samples");
        }
        Ok(Geometry {
            domain: d,
            f,
            x,
            y,
            zuu,
            zvv,
            sxx,
            syy,
            h,
            nu,
            clamped,
        })
    }

    fn time_orientation(&self) -> TimeOrientation {
        let mut future = false;
        let mut past = false;
        for leg in self.x.values().iter().chain(self.y.values()) {
            if leg.0[3] > 0.0 {
                future = true;
            } else {
                past = true;
            }
        }
        match (future, past) {
            (true, false) => TimeOrientation::Future,
            (false, true) => TimeOrientation::Past,
            _ => TimeOrientation::Mixed,
        }
    }
}

/// Geometric frame field and mean curvature norm of a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricFrame {
    pub frames: Vec<PseudoOrthonormalFrame>,
    pub nu: ScalarField,
    pub f: ScalarField,
    pub time_orientation: TimeOrientation,
    /// Samples where a slightly negative `<H, H>` was clamped to 0.
    pub clamped_samples: usize,
}

impl GeometricFrame {
    pub fn max_gram_residual(&self) -> f64 {
        self.frames
            .iter()
            .map(crate::minkowski::frame_gram_residual)
            .fold(0.0, f64::max)
    }
}

fn frames_from(geo: &Geometry, opts: &AnalysisOptions) -> Result<GeometricFrame> {
    let d = geo.domain;
    let (k_min, nu_min) = geo
        .nu
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |a, (k, v)| if v < a.1 { (k, v) } else { a });
    if nu_min < opts.minimal_tol {
        let (i, j) = d.coords(k_min);
        return Err(Error::MinimalPoint { i, j, nu: nu_min });
    }
    let frames = (0..d.len())
        .into_par_iter()
        .map(|k| {
            let (x, y) = (geo.x.values()[k], geo.y.values()[k]);
            let n1 = geo.h[k] * (1.0 / geo.nu[k]);
            let n2 = complete_normal(x, y, n1, opts.orientation)?;
            Ok(PseudoOrthonormalFrame::new(x, y, n1, n2))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeometricFrame {
        frames,
        nu: ScalarField::new(d, geo.nu.clone())?,
        f: geo.f.clone(),
        time_orientation: geo.time_orientation(),
        clamped_samples: geo.clamped,
    })
}

/// `x = z_u / f`, `y = z_v / f`, `n1 = H / nu`, `n2` completing the frame.
pub fn geometric_frame(patch: &SurfacePatch, opts: &AnalysisOptions) -> Result<GeometricFrame> {
    let geo = Geometry::new(patch, opts)?;
    frames_from(&geo, opts)
}

/// Everything extraction produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub invariants: InvariantSet,
    pub derived: DerivedCoefficients,
    pub frame: GeometricFrame,
}

impl Extraction {
    pub fn classify(&self, tol: f64) -> Result<SurfaceType> {
        classify(&self.invariants, tol)
    }

    pub fn classify_default(&self) -> Result<SurfaceType> {
        crate::invariants::classify_default(&self.invariants)
    }

    /// The geometric frames attached to the patch they came from.
    pub fn framed_patch(&self, patch: &SurfacePatch) -> SurfacePatch {
        SurfacePatch {
            z: patch.z.clone(),
            frames: Some(self.frame.frames.clone()),
            f: Some(self.frame.f.clone()),
        }
    }
}

/// The invariant set and the connection coefficients of a patch.
pub fn extract_invariants(patch: &SurfacePatch, opts: &AnalysisOptions) -> Result<Extraction> {
    let s = opts.stencil;
    let geo = Geometry::new(patch, opts)?;
    let frame = frames_from(&geo, opts)?;
    let d = geo.domain;
    let zuuv = geo.zuu.d_dv(s)?;
    let zuvv = geo.zvv.d_du(s)?;
    let fv = geo.f.values();
    let n = d.len();
    let mut cols: [Vec<f64>; 6] = Default::default();
    for k in 0..n {
        let fr = &frame.frames[k];
        let vals = [
            geo.sxx[k].dot(&fr.n1),
            geo.syy[k].dot(&fr.n1),
            geo.sxx[k].dot(&fr.n2),
            geo.syy[k].dot(&fr.n2),
            -zuuv.values()[k].dot(&fr.n2) / (frame.nu.values()[k] * fv[k].powi(3)),
            -zuvv.values()[k].dot(&fr.n2) / (frame.nu.values()[k] * fv[k].powi(3)),
        ];
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    let [l1, l2, m1, m2, b1, b2] = cols.map(|c| ScalarField::new(d, c));
    let invariants = InvariantSet::new(geo.f.clone(), frame.nu.clone(), l1?, l2?, m1?, m2?)?;
    let fu = geo.f.d_du(s)?;
    let fvv = geo.f.d_dv(s)?;
    let derived = DerivedCoefficients {
        gamma1: fu.zip_map(&geo.f, |a, f| a / (f * f))?,
        gamma2: fvv.zip_map(&geo.f, |a, f| a / (f * f))?,
        beta1: b1?,
        beta2: b2?,
    };
    Ok(Extraction {
        invariants,
        derived,
        frame,
    })
}

/// Per-sample degeneracy flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyFlags {
    pub domain: GridDomain,
    pub minimal: Vec<bool>,
    pub inflection: Vec<bool>,
}

impl DegeneracyFlags {
    /// Fractions of flagged samples among those at least `margin` from the
    /// boundary: `(minimal, inflection)`.
    pub fn interior_fractions(&self, margin: usize) -> (f64, f64) {
        let mut total = 0usize;
        let (mut m, mut i) = (0usize, 0usize);
        for (a, b) in self.domain.interior(margin) {
            let k = self.domain.index(a, b);
            total += 1;
            m += self.minimal[k] as usize;
            i += self.inflection[k] as usize;
        }
        let t = total.max(1) as f64;
        (m as f64 / t, i as f64 / t)
    }
}

/// Flags minimal points (`nu < tol`) and inflection points.
///
/// Away from minimal points a sample is an inflection point when
/// `mu1^2 + mu2^2 < tol^2`, i.e. `sigma(x, x)` and `sigma(y, y)` are both
/// parallel to `H`. At minimal points the image of `sigma` is spanned by
/// `sigma(x, x)`, `sigma(y, y)` and the test is that their Gram determinant
/// is below `tol^4`.
pub fn detect_degeneracies(patch: &SurfacePatch, tol: f64, opts: &AnalysisOptions) -> Result<DegeneracyFlags> {
    let geo = Geometry::new(patch, opts)?;
    let n = geo.domain.len();
    let mut minimal = Vec::with_capacity(n);
    let mut inflection = Vec::with_capacity(n);
    for k in 0..n {
        let (sxx, syy) = (geo.sxx[k], geo.syy[k]);
        if geo.nu[k] < tol {
            minimal.push(true);
            let g = sxx.dot(&sxx) * syy.dot(&syy) - sxx.dot(&syy).powi(2);
            inflection.push(g < tol.powi(4));
        } else {
            minimal.push(false);
            let (x, y) = (geo.x.values()[k], geo.y.values()[k]);
            let n1 = geo.h[k] * (1.0 / geo.nu[k]);
            let n2 = complete_normal(x, y, n1, NormalOrientation::Positive)?;
            let (m1, m2) = (sxx.dot(&n2), syy.dot(&n2));
            inflection.push(m1 * m1 + m2 * m2 < tol * tol);
        }
    }
    Ok(DegeneracyFlags {
        domain: geo.domain,
        minimal,
        inflection,
    })
}
