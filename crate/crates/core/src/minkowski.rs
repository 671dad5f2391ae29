//! Linear algebra of Minkowski 4-space with signature (+,+,+,-).
//!
//! The time coordinate is always the last one. Frames are ordered
//! quadruples `(x, y, n1, n2)` where `x, y` are null with `<x, y> = -1` and
//! `n1, n2` are orthonormal spacelike vectors orthogonal to both.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::SurfacePatch;
use crate::error::{Error, Result};

/// Default tolerance for causal classification on unit-scale data.
pub const DEFAULT_CAUSAL_TOL: f64 = 1e-9;

/// Metric signature, time coordinate last.
pub const SIGNATURE: [f64; 4] = [1.0, 1.0, 1.0, -1.0];

/// A point or vector of Minkowski 4-space in standard coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vec4(pub [f64; 4]);

impl Vec4 {
    pub const ZERO: Vec4 = Vec4([0.0; 4]);

    pub const fn new(x1: f64, x2: f64, x3: f64, x4: f64) -> Self {
        Vec4([x1, x2, x3, x4])
    }

    /// Standard basis vector `e_k`, `k` in `0..4`.
    pub fn basis(k: usize) -> Self {
        let mut v = Vec4::ZERO;
        v.0[k] = 1.0;
        v
    }

    #[inline]
    pub fn dot(&self, other: &Vec4) -> f64 {
        minkowski_dot(self, other)
    }

    /// Minkowski square `<a, a>`.
    #[inline]
    pub fn norm_sq(&self) -> f64 {
        minkowski_dot(self, self)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    /// Euclidean length of the coordinate tuple.
    pub fn euclidean_norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::from(self.0)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Vec4([v[0], v[1], v[2], v[3]])
    }
}

impl Index<usize> for Vec4 {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

impl IndexMut<usize> for Vec4 {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.0[k]
    }
}

impl Add for Vec4 {
    type Output = Vec4;
    fn add(self, rhs: Vec4) -> Vec4 {
        Vec4(std::array::from_fn(|k| self.0[k] + rhs.0[k]))
    }
}

impl AddAssign for Vec4 {
    fn add_assign(&mut self, rhs: Vec4) {
        for k in 0..4 {
            self.0[k] += rhs.0[k];
        }
    }
}

impl Sub for Vec4 {
    type Output = Vec4;
    fn sub(self, rhs: Vec4) -> Vec4 {
        Vec4(std::array::from_fn(|k| self.0[k] - rhs.0[k]))
    }
}

impl SubAssign for Vec4 {
    fn sub_assign(&mut self, rhs: Vec4) {
        for k in 0..4 {
            self.0[k] -= rhs.0[k];
        }
    }
}

impl Mul<f64> for Vec4 {
    type Output = Vec4;
    fn mul(self, s: f64) -> Vec4 {
        Vec4(self.0.map(|c| c * s))
    }
}

impl Mul<Vec4> for f64 {
    type Output = Vec4;
    fn mul(self, v: Vec4) -> Vec4 {
        v * self
    }
}

impl Neg for Vec4 {
    type Output = Vec4;
    fn neg(self) -> Vec4 {
        Vec4(self.0.map(|c| -c))
    }
}

/// `a1 b1 + a2 b2 + a3 b3 - a4 b4`.
#[inline]
pub fn minkowski_dot(a: &Vec4, b: &Vec4) -> f64 {
    a.0[0] * b.0[0] + a.0[1] * b.0[1] + a.0[2] * b.0[2] - a.0[3] * b.0[3]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CausalClass {
    Spacelike,
    Timelike,
    Lightlike,
    Zero,
}

/// Causal character of `a`. `Zero` wins over `Lightlike` when both apply.
pub fn causal_class(a: &Vec4, tol: f64) -> CausalClass {
    if a.max_abs() < tol {
        return CausalClass::Zero;
    }
    let q = a.norm_sq();
    if q.abs() < tol {
        CausalClass::Lightlike
    } else if q > 0.0 {
        CausalClass::Spacelike
    } else {
        CausalClass::Timelike
    }
}

/// Gram matrix every pseudo-orthonormal frame must reproduce.
pub fn target_gram() -> Matrix4<f64> {
    Matrix4::new(
        0.0, -1.0, 0.0, 0.0, //
        -1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    )
}

/// Diagonal metric matrix `diag(1, 1, 1, -1)`.
pub fn metric() -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::from(SIGNATURE))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoOrthonormalFrame {
    pub x: Vec4,
    pub y: Vec4,
    pub n1: Vec4,
    pub n2: Vec4,
}

impl PseudoOrthonormalFrame {
    pub fn new(x: Vec4, y: Vec4, n1: Vec4, n2: Vec4) -> Self {
        PseudoOrthonormalFrame { x, y, n1, n2 }
    }

    /// `x = e1 + e4`, `y = (e4 - e1)/2`, `n1 = e2`, `n2 = e3`; this has
    /// `det(x, y, n1, n2) = +1`.
    pub fn standard() -> Self {
        PseudoOrthonormalFrame {
            x: Vec4::new(1.0, 0.0, 0.0, 1.0),
            y: Vec4::new(-0.5, 0.0, 0.0, 0.5),
            n1: Vec4::new(0.0, 1.0, 0.0, 0.0),
            n2: Vec4::new(0.0, 0.0, 1.0, 0.0),
        }
    }

    pub fn legs(&self) -> [Vec4; 4] {
        [self.x, self.y, self.n1, self.n2]
    }

    pub fn from_legs(legs: [Vec4; 4]) -> Self {
        let [x, y, n1, n2] = legs;
        PseudoOrthonormalFrame { x, y, n1, n2 }
    }

    /// Legs stacked as the rows of a 4x4 matrix.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let l = self.legs();
        Matrix4::from_fn(|r, c| l[r].0[c])
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self::from_legs(std::array::from_fn(|r| {
            Vec4(std::array::from_fn(|c| m[(r, c)]))
        }))
    }

    /// Pairwise Minkowski products of the legs.
    pub fn gram(&self) -> Matrix4<f64> {
        let l = self.legs();
        Matrix4::from_fn(|r, c| l[r].dot(&l[c]))
    }

    /// `det(x, y, n1, n2)` with the legs as rows.
    pub fn orientation(&self) -> f64 {
        self.to_matrix().determinant()
    }

    pub fn max_abs(&self) -> f64 {
        self.legs().iter().fold(0.0_f64, |m, l| m.max(l.max_abs()))
    }

    pub fn transformed(&self, linear: &Matrix4<f64>) -> Self {
        let t = |v: &Vec4| Vec4::from_vector(&(linear * v.to_vector()));
        PseudoOrthonormalFrame {
            x: t(&self.x),
            y: t(&self.y),
            n1: t(&self.n1),
            n2: t(&self.n2),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.legs().iter().all(Vec4::is_finite)
    }
}

/// The ten Gram functions `h1..h10` of a frame, in order.
pub fn gram_functions(frame: &PseudoOrthonormalFrame) -> [f64; 10] {
    let PseudoOrthonormalFrame { x, y, n1, n2 } = frame;
    [
        x.dot(x),
        y.dot(y),
        n1.dot(n1) - 1.0,
        n2.dot(n2) - 1.0,
        x.dot(y) + 1.0,
        x.dot(n1),
        x.dot(n2),
        y.dot(n1),
        y.dot(n2),
        n1.dot(n2),
    ]
}

/// Largest `|h_k|` over the ten Gram functions.
pub fn frame_gram_residual(frame: &PseudoOrthonormalFrame) -> f64 {
    gram_functions(frame)
        .iter()
        .fold(0.0_f64, |m, h| m.max(h.abs()))
}

/// Restores the pseudo-orthonormal Gram conditions.
///
/// The normals are normalized and orthogonalized first, the null pair is
/// then projected off the normal plane and corrected so that
/// `<x,x> = <y,y> = 0` and `<x,y> = -1`. Exact frames are fixed points.
pub fn reorthonormalize(frame: &PseudoOrthonormalFrame) -> Result<PseudoOrthonormalFrame> {
    let PseudoOrthonormalFrame {
        mut x,
        mut y,
        mut n1,
        mut n2,
    } = *frame;

    let q1 = n1.norm_sq();
    if !(q1 > 0.0) {
        return Err(Error::DegenerateFrame(format!("<n1,n1> = {q1:e} is not positive")));
    }
    n1 = n1 * (1.0 / q1.sqrt());

    n2 -= n1 * n2.dot(&n1);
    let q2 = n2.norm_sq();
    if !(q2 > 1e-2) {
        return Err(Error::DegenerateFrame(format!(
            "normal pair near-collinear: residual <n2,n2> = {q2:e}"
        )));
    }
    n2 = n2 * (1.0 / q2.sqrt());

    x -= n1 * x.dot(&n1) + n2 * x.dot(&n2);
    y -= n1 * y.dot(&n1) + n2 * y.dot(&n2);

    let a = x.norm_sq();
    let b = y.norm_sq();
    let c = x.dot(&y);
    if c.abs() < 0.1 {
        return Err(Error::DegenerateFrame(format!("<x,y> = {c:e} too small")));
    }
    let disc = c * c - a * b;
    if disc < 0.0 {
        return Err(Error::DegenerateFrame(
            "tangent plane is not Lorentzian".into(),
        ));
    }
    // small roots of b s^2 + 2c s + a = 0 and a t^2 + 2c t + b = 0
    let denom = c + c.signum() * disc.sqrt();
    let s = -a / denom;
    let t = -b / denom;
    let xn = x + y * s;
    let yn = y + x * t;
    let cn = xn.dot(&yn);
    if !(cn < 0.0) {
        return Err(Error::DegenerateFrame(format!(
            "null pair has <x,y> = {cn:e}, expected negative"
        )));
    }
    let scale = 1.0 / (-cn).sqrt();
    Ok(PseudoOrthonormalFrame {
        x: xn * scale,
        y: yn * scale,
        n1,
        n2,
    })
}

/// An affine map `p -> L p + t` whose linear part preserves the Minkowski product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzMotion {
    pub linear: Matrix4<f64>,
    pub translation: Vec4,
}

impl LorentzMotion {
    pub fn identity() -> Self {
        LorentzMotion {
            linear: Matrix4::identity(),
            translation: Vec4::ZERO,
        }
    }

    pub fn translation(t: Vec4) -> Self {
        LorentzMotion {
            linear: Matrix4::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` in the plane of spatial axes `i`, `j` (both in `0..3`).
    pub fn rotation(i: usize, j: usize, angle: f64) -> Self {
        assert!(i < 3 && j < 3 && i != j, "rotation needs two distinct spatial axes");
        let mut m = Matrix4::identity();
        let (s, c) = angle.sin_cos();
        m[(i, i)] = c;
        m[(i, j)] = -s;
        m[(j, i)] = s;
        m[(j, j)] = c;
        LorentzMotion {
            linear: m,
            translation: Vec4::ZERO,
        }
    }

    /// Boost with the given rapidity along spatial axis `i`.
    pub fn boost(i: usize, rapidity: f64) -> Self {
        assert!(i < 3, "boost axis must be spatial");
        let mut m = Matrix4::identity();
        let (sh, ch) = (rapidity.sinh(), rapidity.cosh());
        m[(i, i)] = ch;
        m[(i, 3)] = sh;
        m[(3, i)] = sh;
        m[(3, 3)] = ch;
        LorentzMotion {
            linear: m,
            translation: Vec4::ZERO,
        }
    }

    /// A proper Lorentz motion built from random plane rotations, boosts
    /// of rapidity at most `max_rapidity`, and a translation with
    /// components in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_rapidity: f64) -> Self {
        let mut m = LorentzMotion::identity();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            m = LorentzMotion::rotation(i, j, angle).then(&m);
        }
        if max_rapidity > 0.0 {
            for i in 0..3 {
                let r = rng.gen_range(-max_rapidity..=max_rapidity);
                m = LorentzMotion::boost(i, r).then(&m);
            }
        }
        m.translation = Vec4(std::array::from_fn(|_| rng.gen_range(-1.0..=1.0)));
        m
    }

    /// `other` after `self`: the motion `p -> other(self(p))`.
    pub fn then(&self, other: &LorentzMotion) -> LorentzMotion {
        LorentzMotion {
            linear: other.linear * self.linear,
            translation: other.apply_vector(&self.translation) + other.translation,
        }
    }

    pub fn apply_point(&self, p: &Vec4) -> Vec4 {
        self.apply_vector(p) + self.translation
    }

    pub fn apply_vector(&self, v: &Vec4) -> Vec4 {
        Vec4::from_vector(&(self.linear * v.to_vector()))
    }

    pub fn apply_frame(&self, frame: &PseudoOrthonormalFrame) -> PseudoOrthonormalFrame {
        frame.transformed(&self.linear)
    }

    /// Largest deviation of `L^T diag(1,1,1,-1) L` from the metric.
    pub fn metric_defect(&self) -> f64 {
        let eta = metric();
        (self.linear.transpose() * eta * self.linear - eta).amax()
    }

    pub fn is_lorentz(&self, tol: f64) -> bool {
        self.metric_defect() < tol
    }

    pub fn inverse(&self) -> LorentzMotion {
        // L^{-1} = eta L^T eta for Lorentz matrices
        let eta = metric();
        let inv = eta * self.linear.transpose() * eta;
        let t = Vec4::from_vector(&(inv * self.translation.to_vector()));
        LorentzMotion {
            linear: inv,
            translation: -t,
        }
    }
}

/// The motion taking point `p` to `q` and frame `from` leg-wise onto `to`.
pub fn motion_from_frames(
    p: &Vec4,
    from: &PseudoOrthonormalFrame,
    q: &Vec4,
    to: &PseudoOrthonormalFrame,
) -> Result<LorentzMotion> {
    for (name, frame) in [("source", from), ("target", to)] {
        let r = frame_gram_residual(frame);
        if !(r < 1e-8) {
            return Err(Error::DegenerateFrame(format!(
                "{name} frame Gram residual {r:e} exceeds 1e-8"
            )));
        }
    }
    // With legs as columns, L F^T = G^T. F^T is inverted through the Gram
    // identity F eta F^T = J: (F^T)^{-1} = J F eta, using J^{-1} = J.
    let f = from.to_matrix();
    let g = to.to_matrix();
    let linear = g.transpose() * target_gram() * f * metric();
    let motion = LorentzMotion {
        linear,
        translation: Vec4::ZERO,
    };
    let translation = *q - motion.apply_vector(p);
    Ok(LorentzMotion {
        linear,
        translation,
    })
}

/// Moves every sample by `L z + t`; attached frames only see `L`.
pub fn apply_motion(motion: &LorentzMotion, patch: &SurfacePatch) -> SurfacePatch {
    let z = patch.z.map(|p| motion.apply_point(p));
    let frames = patch
        .frames
        .as_ref()
        .map(|fs| fs.iter().map(|fr| motion.apply_frame(fr)).collect());
    SurfacePatch {
        z,
        frames,
        f: patch.f.clone(),
    }
}
