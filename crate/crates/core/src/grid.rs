//! Rectangular `(u, v)` grids, fields sampled on them, and finite-difference
//! derivative operators.
//!
//! Samples are stored row-major with `u` as the slow index: sample `(i, j)`
//! sits at `u0 + i*hu, v0 + j*hv` and has flat index `i*nv + j`.
//!
//! Stencils:
//!
//! | order | interior             | boundary closure                  |
//! |-------|----------------------|-----------------------------------|
//! | 2     | 3-point central      | 4-point (d1) / 5-point (d2) one-sided, error-matched |
//! | 4     | 5-point central      | 5-point (d1) / 6-point (d2) one-sided, 4th order |
//!
//! The second-order closures carry the same leading error term as the
//! central stencil, so the truncation error of a differenced field stays
//! smooth up to the edge and can be differenced again without an O(1/h)
//! kink in its error.
//!
//! The mixed derivative is the composition `d_du(d_dv(F))`, which keeps the
//! order of the underlying first-derivative stencil.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minkowski::Vec4;

/// Finite-difference accuracy order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum Stencil {
    #[default]
    Second,
    Fourth,
}

impl Stencil {
    pub fn order(self) -> u8 {
        match self {
            Stencil::Second => 2,
            Stencil::Fourth => 4,
        }
    }

    pub fn from_order(order: u8) -> Result<Self> {
        match order {
            2 => Ok(Stencil::Second),
            4 => Ok(Stencil::Fourth),
            o => Err(Error::Format(format!("unsupported stencil order {o}; use 2 or 4"))),
        }
    }

    fn min_len_d1(self) -> usize {
        match self {
            Stencil::Second => 4,
            Stencil::Fourth => 5,
        }
    }

    fn min_len_d2(self) -> usize {
        match self {
            Stencil::Second => 5,
            Stencil::Fourth => 6,
        }
    }

    /// Interior margin on which the central stencil is used throughout.
    pub fn margin(self) -> usize {
        match self {
            Stencil::Second => 1,
            Stencil::Fourth => 2,
        }
    }
}

impl Serialize for Stencil {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.order())
    }
}

impl<'de> Deserialize<'de> for Stencil {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let o = u8::deserialize(d)?;
        Stencil::from_order(o).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    pub u0: f64,
    pub v0: f64,
    pub hu: f64,
    pub hv: f64,
    pub nu: usize,
    pub nv: usize,
}

impl GridDomain {
    pub fn new(u0: f64, v0: f64, hu: f64, hv: f64, nu: usize, nv: usize) -> Result<Self> {
        let d = GridDomain {
            u0,
            v0,
            hu,
            hv,
            nu,
            nv,
        };
        d.validate()?;
        Ok(d)
    }

    /// Grid spanning `[u_min, u_max] x [v_min, v_max]` with the given sample counts.
    pub fn spanning(u_min: f64, u_max: f64, v_min: f64, v_max: f64, nu: usize, nv: usize) -> Result<Self> {
        if nu < 2 || nv < 2 {
            return Err(Error::InvalidDomain("need at least two samples per axis".into()));
        }
        Self::new(
            u_min,
            v_min,
            (u_max - u_min) / (nu - 1) as f64,
            (v_max - v_min) / (nv - 1) as f64,
            nu,
            nv,
        )
    }

    /// Square grid `[u0, u0 + (n-1) h] x [v0, v0 + (n-1) h]`.
    pub fn square(u0: f64, v0: f64, h: f64, n: usize) -> Result<Self> {
        Self::new(u0, v0, h, h, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u0.is_finite() && self.v0.is_finite()) {
            return Err(Error::InvalidDomain("origin must be finite".into()));
        }
        if !(self.hu > 0.0 && self.hv > 0.0 && self.hu.is_finite() && self.hv.is_finite()) {
            return Err(Error::InvalidDomain(format!(
                "steps must be positive, got hu={}, hv={}",
                self.hu, self.hv
            )));
        }
        if self.nu < 3 {
            return Err(Error::GridTooSmall {
                axis: 'u',
                len: self.nu,
                required: 3,
            });
        }
        if self.nv < 3 {
            return Err(Error::GridTooSmall {
                axis: 'v',
                len: self.nv,
                required: 3,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nu * self.nv
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nv + j
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k / self.nv, k % self.nv)
    }

    #[inline]
    pub fn u(&self, i: usize) -> f64 {
        self.u0 + i as f64 * self.hu
    }

    #[inline]
    pub fn v(&self, j: usize) -> f64 {
        self.v0 + j as f64 * self.hv
    }

    pub fn u_max(&self) -> f64 {
        self.u(self.nu - 1)
    }

    pub fn v_max(&self) -> f64 {
        self.v(self.nv - 1)
    }

    /// Same extent, half the step.
    pub fn refined(&self) -> GridDomain {
        GridDomain {
            hu: self.hu / 2.0,
            hv: self.hv / 2.0,
            nu: 2 * self.nu - 1,
            nv: 2 * self.nv - 1,
            ..*self
        }
    }

    /// Every other sample; `None` unless both counts are odd and the result
    /// keeps at least three samples per axis.
    pub fn coarsened(&self) -> Option<GridDomain> {
        if self.nu % 2 == 0 || self.nv % 2 == 0 {
            return None;
        }
        let d = GridDomain {
            hu: self.hu * 2.0,
            hv: self.hv * 2.0,
            nu: self.nu.div_ceil(2),
            nv: self.nv.div_ceil(2),
            ..*self
        };
        d.validate().ok().map(|_| d)
    }

    /// Transposed domain (`u` and `v` exchanged).
    pub fn transposed(&self) -> GridDomain {
        GridDomain {
            u0: self.v0,
            v0: self.u0,
            hu: self.hv,
            hv: self.hu,
            nu: self.nv,
            nv: self.nu,
        }
    }

    /// Equality up to a relative tolerance on the real-valued parameters.
    pub fn matches(&self, other: &GridDomain) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        self.nu == other.nu
            && self.nv == other.nv
            && close(self.u0, other.u0)
            && close(self.v0, other.v0)
            && close(self.hu, other.hu)
            && close(self.hv, other.hv)
    }

    /// Iterator over `(i, j)` with `margin <= i < nu - margin`, same for `j`.
    pub fn interior(&self, margin: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (nu, nv) = (self.nu, self.nv);
        (margin..nu.saturating_sub(margin))
            .flat_map(move |i| (margin..nv.saturating_sub(margin)).map(move |j| (i, j)))
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            what: what.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    domain: GridDomain,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(domain: GridDomain, values: Vec<f64>) -> Result<Self> {
        domain.validate()?;
        if values.len() != domain.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                domain.nu,
                domain.nv
            )));
        }
        check_finite(&values, "scalar field")?;
        Ok(ScalarField { domain, values })
    }

    pub fn constant(domain: GridDomain, c: f64) -> Self {
        ScalarField {
            domain,
            values: vec![c; domain.len()],
        }
    }

    pub fn zeros(domain: GridDomain) -> Self {
        Self::constant(domain, 0.0)
    }

    /// Samples `f(u, v)` at every node.
    pub fn from_fn(domain: GridDomain, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(domain.len());
        for i in 0..domain.nu {
            let u = domain.u(i);
            for j in 0..domain.nv {
                values.push(f(u, domain.v(j)));
            }
        }
        Self::new(domain, values)
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.domain.index(i, j)]
    }

    /// Pointwise map; the result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ScalarField> {
        ScalarField::new(self.domain, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same domain.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        if !self.domain.matches(&other.domain) {
            return Err(Error::DomainMismatch);
        }
        ScalarField::new(
            self.domain,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Linear combination `a*self + b*other`.
    pub fn combine(&self, a: f64, other: &ScalarField, b: f64) -> Result<ScalarField> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min_abs(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Position and value of the entry with the smallest magnitude.
    pub fn argmin_abs(&self) -> (usize, usize, f64) {
        let (k, v) = self
            .values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(k, v)| (k, *v))
            .unwrap_or((0, 0.0));
        let (i, j) = self.domain.coords(k);
        (i, j, v)
    }

    /// Max-norm over samples at least `margin` away from the boundary.
    pub fn interior_max_abs(&self, margin: usize) -> f64 {
        self.domain
            .interior(margin)
            .fold(0.0_f64, |m, (i, j)| m.max(self.at(i, j).abs()))
    }

    /// Quadrature L2 norm `sqrt(hu hv sum r^2)` over the interior.
    pub fn interior_l2(&self, margin: usize) -> f64 {
        let s: f64 = self
            .domain
            .interior(margin)
            .map(|(i, j)| self.at(i, j).powi(2))
            .sum();
        (s * self.domain.hu * self.domain.hv).sqrt()
    }

    /// Restriction to every other sample (see [`GridDomain::coarsened`]).
    pub fn coarsened(&self) -> Option<ScalarField> {
        let d = self.domain.coarsened()?;
        let mut values = Vec::with_capacity(d.len());
        for i in 0..d.nu {
            for j in 0..d.nv {
                values.push(self.at(2 * i, 2 * j));
            }
        }
        Some(ScalarField { domain: d, values })
    }

    /// The first `nu x nv` samples, anchored at the grid origin.
    pub fn leading(&self, nu: usize, nv: usize) -> Result<ScalarField> {
        if nu > self.domain.nu || nv > self.domain.nv {
            return Err(Error::ShapeMismatch(format!(
                "window {nu}x{nv} exceeds grid {}x{}",
                self.domain.nu, self.domain.nv
            )));
        }
        let d = GridDomain::new(self.domain.u0, self.domain.v0, self.domain.hu, self.domain.hv, nu, nv)?;
        let mut values = Vec::with_capacity(d.len());
        for i in 0..nu {
            for j in 0..nv {
                values.push(self.at(i, j));
            }
        }
        Ok(ScalarField { domain: d, values })
    }

    pub fn transposed(&self) -> ScalarField {
        let d = self.domain.transposed();
        let mut values = Vec::with_capacity(d.len());
        for i in 0..d.nu {
            for j in 0..d.nv {
                values.push(self.at(j, i));
            }
        }
        ScalarField { domain: d, values }
    }

    /// Bilinear interpolation at `(u, v)`; points outside the domain are
    /// clamped onto it.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let d = &self.domain;
        let (i, a) = locate(u, d.u0, d.hu, d.nu);
        let (j, b) = locate(v, d.v0, d.hv, d.nv);
        let f00 = self.at(i, j);
        let f01 = self.at(i, j + 1);
        let f10 = self.at(i + 1, j);
        let f11 = self.at(i + 1, j + 1);
        (1.0 - a) * ((1.0 - b) * f00 + b * f01) + a * ((1.0 - b) * f10 + b * f11)
    }

    pub fn d_du(&self, stencil: Stencil) -> Result<ScalarField> {
        d_du(self, stencil)
    }

    pub fn d_dv(&self, stencil: Stencil) -> Result<ScalarField> {
        d_dv(self, stencil)
    }
}

/// Cell index and fractional offset of `x` on a 1D lattice.
fn locate(x: f64, x0: f64, h: f64, n: usize) -> (usize, f64) {
    let t = ((x - x0) / h).clamp(0.0, (n - 1) as f64);
    let i = (t.floor() as usize).min(n - 2);
    (i, t - i as f64)
}

/// First derivative of one line of samples.
pub(crate) fn diff1(line: &[f64], h: f64, stencil: Stencil, out: &mut [f64]) {
    let n = line.len();
    let f = line;
    match stencil {
        Stencil::Second => {
            let inv = 1.0 / (2.0 * h);
            out[0] = (-4.0 * f[0] + 7.0 * f[1] - 4.0 * f[2] + f[3]) * inv;
            for i in 1..n - 1 {
                out[i] = (f[i + 1] - f[i - 1]) * inv;
            }
            let m = n - 1;
            out[m] = (4.0 * f[m] - 7.0 * f[m - 1] + 4.0 * f[m - 2] - f[m - 3]) * inv;
        }
        Stencil::Fourth => {
            let inv = 1.0 / (12.0 * h);
            out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) * inv;
            out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) * inv;
            for i in 2..n - 2 {
                out[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) * inv;
            }
            let m = n - 1;
            out[m - 1] =
                (3.0 * f[m] + 10.0 * f[m - 1] - 18.0 * f[m - 2] + 6.0 * f[m - 3] - f[m - 4]) * inv;
            out[m] = (25.0 * f[m] - 48.0 * f[m - 1] + 36.0 * f[m - 2] - 16.0 * f[m - 3]
                + 3.0 * f[m - 4])
                * inv;
        }
    }
}

/// Second derivative of one line of samples.
pub(crate) fn diff2(line: &[f64], h: f64, stencil: Stencil, out: &mut [f64]) {
    let n = line.len();
    let f = line;
    match stencil {
        Stencil::Second => {
            let inv = 1.0 / (h * h);
            let edge = |a: f64, b: f64, c: f64, d: f64, e: f64| {
                (3.0 * a - 9.0 * b + 10.0 * c - 5.0 * d + e) * inv
            };
            out[0] = edge(f[0], f[1], f[2], f[3], f[4]);
            for i in 1..n - 1 {
                out[i] = (f[i - 1] - 2.0 * f[i] + f[i + 1]) * inv;
            }
            let m = n - 1;
            out[m] = edge(f[m], f[m - 1], f[m - 2], f[m - 3], f[m - 4]);
        }
        Stencil::Fourth => {
            let inv = 1.0 / (12.0 * h * h);
            out[0] = (45.0 * f[0] - 154.0 * f[1] + 214.0 * f[2] - 156.0 * f[3] + 61.0 * f[4]
                - 10.0 * f[5])
                * inv;
            out[1] = (10.0 * f[0] - 15.0 * f[1] - 4.0 * f[2] + 14.0 * f[3] - 6.0 * f[4] + f[5])
                * inv;
            for i in 2..n - 2 {
                out[i] = (-f[i - 2] + 16.0 * f[i - 1] - 30.0 * f[i] + 16.0 * f[i + 1] - f[i + 2])
                    * inv;
            }
            let m = n - 1;
            out[m - 1] = (10.0 * f[m] - 15.0 * f[m - 1] - 4.0 * f[m - 2] + 14.0 * f[m - 3]
                - 6.0 * f[m - 4]
                + f[m - 5])
                * inv;
            out[m] = (45.0 * f[m] - 154.0 * f[m - 1] + 214.0 * f[m - 2] - 156.0 * f[m - 3]
                + 61.0 * f[m - 4]
                - 10.0 * f[m - 5])
                * inv;
        }
    }
}

#[derive(Clone, Copy)]
enum Axis {
    U,
    V,
}

fn apply_along(
    field: &ScalarField,
    axis: Axis,
    required: usize,
    kernel: impl Fn(&[f64], f64, &mut [f64]),
) -> Result<ScalarField> {
    let d = field.domain;
    let (len, name) = match axis {
        Axis::U => (d.nu, 'u'),
        Axis::V => (d.nv, 'v'),
    };
    if len < required {
        return Err(Error::GridTooSmall {
            axis: name,
            len,
            required,
        });
    }
    let mut out = vec![0.0; d.len()];
    match axis {
        Axis::V => {
            for (row, dst) in field.values.chunks(d.nv).zip(out.chunks_mut(d.nv)) {
                kernel(row, d.hv, dst);
            }
        }
        Axis::U => {
            let mut line = vec![0.0; d.nu];
            let mut res = vec![0.0; d.nu];
            for j in 0..d.nv {
                for (i, slot) in line.iter_mut().enumerate() {
                    *slot = field.values[d.index(i, j)];
                }
                kernel(&line, d.hu, &mut res);
                for (i, r) in res.iter().enumerate() {
                    out[d.index(i, j)] = *r;
                }
            }
        }
    }
    ScalarField::new(d, out)
}

pub fn d_du(field: &ScalarField, stencil: Stencil) -> Result<ScalarField> {
    apply_along(field, Axis::U, stencil.min_len_d1(), |l, h, o| diff1(l, h, stencil, o))
}

pub fn d_dv(field: &ScalarField, stencil: Stencil) -> Result<ScalarField> {
    apply_along(field, Axis::V, stencil.min_len_d1(), |l, h, o| diff1(l, h, stencil, o))
}

pub fn d2_duu(field: &ScalarField, stencil: Stencil) -> Result<ScalarField> {
    apply_along(field, Axis::U, stencil.min_len_d2(), |l, h, o| diff2(l, h, stencil, o))
}

pub fn d2_dvv(field: &ScalarField, stencil: Stencil) -> Result<ScalarField> {
    apply_along(field, Axis::V, stencil.min_len_d2(), |l, h, o| diff2(l, h, stencil, o))
}

/// `d_du(d_dv(F))`.
pub fn d2_dudv(field: &ScalarField, stencil: Stencil) -> Result<ScalarField> {
    d_du(&d_dv(field, stencil)?, stencil)
}

/// A field of Minkowski vectors on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Vec4Field {
    domain: GridDomain,
    values: Vec<Vec4>,
}

impl Vec4Field {
    pub fn new(domain: GridDomain, values: Vec<Vec4>) -> Result<Self> {
        domain.validate()?;
        if values.len() != domain.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} vectors for a {}x{} grid",
                values.len(),
                domain.nu,
                domain.nv
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "vector field".into(),
                index,
            });
        }
        Ok(Vec4Field { domain, values })
    }

    pub fn from_fn(domain: GridDomain, f: impl Fn(f64, f64) -> Vec4) -> Result<Self> {
        let mut values = Vec::with_capacity(domain.len());
        for i in 0..domain.nu {
            let u = domain.u(i);
            for j in 0..domain.nv {
                values.push(f(u, domain.v(j)));
            }
        }
        Self::new(domain, values)
    }

    pub fn from_components(c: [ScalarField; 4]) -> Result<Self> {
        let d = *c[0].domain();
        if c.iter().any(|f| !f.domain().matches(&d)) {
            return Err(Error::DomainMismatch);
        }
        let values = (0..d.len())
            .map(|k| Vec4([c[0].values[k], c[1].values[k], c[2].values[k], c[3].values[k]]))
            .collect();
        Ok(Vec4Field { domain: d, values })
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn values(&self) -> &[Vec4] {
        &self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Vec4 {
        self.values[self.domain.index(i, j)]
    }

    pub fn component(&self, k: usize) -> ScalarField {
        ScalarField {
            domain: self.domain,
            values: self.values.iter().map(|v| v.0[k]).collect(),
        }
    }

    pub fn components(&self) -> [ScalarField; 4] {
        std::array::from_fn(|k| self.component(k))
    }

    /// The first `nu x nv` samples, anchored at the grid origin.
    pub fn leading(&self, nu: usize, nv: usize) -> Result<Vec4Field> {
        let [a, b, c, d] = self.components();
        Vec4Field::from_components([a.leading(nu, nv)?, b.leading(nu, nv)?, c.leading(nu, nv)?, d.leading(nu, nv)?])
    }

    /// Every other sample (see [`GridDomain::coarsened`]).
    pub fn coarsened(&self) -> Option<Vec4Field> {
        let [a, b, c, d] = self.components();
        Vec4Field::from_components([a.coarsened()?, b.coarsened()?, c.coarsened()?, d.coarsened()?]).ok()
    }

    pub fn map(&self, f: impl Fn(&Vec4) -> Vec4) -> Vec4Field {
        Vec4Field {
            domain: self.domain,
            values: self.values.iter().map(f).collect(),
        }
    }

    fn componentwise(
        &self,
        op: impl Fn(&ScalarField, Stencil) -> Result<ScalarField>,
        stencil: Stencil,
    ) -> Result<Vec4Field> {
        let [a, b, c, d] = self.components();
        Vec4Field::from_components([
            op(&a, stencil)?,
            op(&b, stencil)?,
            op(&c, stencil)?,
            op(&d, stencil)?,
        ])
    }

    pub fn d_du(&self, stencil: Stencil) -> Result<Vec4Field> {
        self.componentwise(d_du, stencil)
    }

    pub fn d_dv(&self, stencil: Stencil) -> Result<Vec4Field> {
        self.componentwise(d_dv, stencil)
    }

    pub fn d2_duu(&self, stencil: Stencil) -> Result<Vec4Field> {
        self.componentwise(d2_duu, stencil)
    }

    pub fn d2_dvv(&self, stencil: Stencil) -> Result<Vec4Field> {
        self.componentwise(d2_dvv, stencil)
    }

    pub fn d2_dudv(&self, stencil: Stencil) -> Result<Vec4Field> {
        self.componentwise(d2_dudv, stencil)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dom(h: f64, n: usize) -> GridDomain {
        GridDomain::square(0.1, -0.2, h, n).unwrap()
    }

    /// Max interior+boundary error of `op(F)` against `exact`.
    fn error_of(
        h: f64,
        n: usize,
        f: impl Fn(f64, f64) -> f64,
        exact: impl Fn(f64, f64) -> f64,
        op: impl Fn(&ScalarField) -> ScalarField,
    ) -> f64 {
        let d = dom(h, n);
        let field = ScalarField::from_fn(d, f).unwrap();
        let got = op(&field);
        let want = ScalarField::from_fn(d, exact).unwrap();
        got.combine(1.0, &want, -1.0).unwrap().max_abs()
    }

    #[test]
    fn rejects_small_and_bad_grids() {
        assert!(matches!(
            GridDomain::new(0.0, 0.0, 0.1, 0.1, 2, 5),
            Err(Error::GridTooSmall { axis: 'u', .. })
        ));
        assert!(GridDomain::new(0.0, 0.0, -0.1, 0.1, 5, 5).is_err());
        let d = dom(0.1, 4);
        assert!(ScalarField::new(d, vec![0.0; 15]).is_err());
        let mut v = vec![0.0; 16];
        v[3] = f64::NAN;
        assert!(matches!(ScalarField::new(d, v), Err(Error::NonFinite { index: 3, .. })));
        let f = ScalarField::zeros(d);
        assert!(matches!(
            d_du(&f, Stencil::Fourth),
            Err(Error::GridTooSmall { required: 5, .. })
        ));
        assert!(matches!(
            d2_dvv(&ScalarField::zeros(dom(0.1, 4)), Stencil::Second),
            Err(Error::GridTooSmall { required: 5, .. })
        ));
    }

    #[test]
    fn second_order_closures_match_the_central_error() {
        // one degree past exactness the error is h^2 f'''/6 (d1) and
        // h^2 f''''/12 (d2) on every row, edges included
        let h = 0.1;
        let d = dom(h, 7);
        let c = ScalarField::from_fn(d, |u, _| u.powi(3) - u * u).unwrap();
        let du = d_du(&c, Stencil::Second).unwrap();
        let q = ScalarField::from_fn(d, |u, _| u.powi(4) - 2.0 * u.powi(3) + u).unwrap();
        let dd = d2_duu(&q, Stencil::Second).unwrap();
        for i in 0..d.nu {
            let u = d.u(i);
            assert!((du.at(i, 3) - (3.0 * u * u - 2.0 * u) - h * h).abs() < 1e-12, "d1 row {i}");
            assert!((dd.at(i, 3) - (12.0 * u * u - 12.0 * u) - 2.0 * h * h).abs() < 1e-10, "d2 row {i}");
        }
    }

    #[test]
    fn leading_and_coarsened_windows() {
        let d = dom(0.1, 8);
        let g = ScalarField::from_fn(d, |u, v| u + 10.0 * v).unwrap();
        let w = g.leading(7, 5).unwrap();
        assert_eq!((w.domain().nu, w.domain().nv), (7, 5));
        assert_eq!(w.at(6, 4), g.at(6, 4));
        let c = w.coarsened().unwrap();
        assert_eq!(c.at(3, 2), g.at(6, 4));
        assert!(g.leading(9, 2).is_err());
        assert!(g.coarsened().is_none());
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let f = ScalarField::constant(dom(0.1, 7), 3.5);
        for s in [Stencil::Second, Stencil::Fourth] {
            assert!(d_du(&f, s).unwrap().max_abs() < 1e-12);
            assert!(d_dv(&f, s).unwrap().max_abs() < 1e-12);
            assert!(d2_duu(&f, s).unwrap().max_abs() < 1e-10);
            assert!(d2_dudv(&f, s).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn linear_and_bilinear_exact() {
        let d = dom(0.1, 9);
        let u = ScalarField::from_fn(d, |u, _| u).unwrap();
        let uv = ScalarField::from_fn(d, |u, v| u * v).unwrap();
        for s in [Stencil::Second, Stencil::Fourth] {
            let du = d_du(&u, s).unwrap();
            assert!(du.values().iter().all(|x| (x - 1.0).abs() < 1e-12));
            assert!(d_dv(&u, s).unwrap().max_abs() < 1e-12);
            let m = d2_dudv(&uv, s).unwrap();
            assert!(m.values().iter().all(|x| (x - 1.0).abs() < 1e-12), "{s:?}");
        }
    }

    #[test]
    fn polynomial_exactness_of_closures() {
        // 2nd-order stencils are exact on quadratics, 4th-order on quartics,
        // boundary rows included.
        let d = dom(0.05, 11);
        let p2 = ScalarField::from_fn(d, |u, v| 1.0 + 2.0 * u - 3.0 * u * u + v * v).unwrap();
        let du = d_du(&p2, Stencil::Second).unwrap();
        let want = ScalarField::from_fn(d, |u, _| 2.0 - 6.0 * u).unwrap();
        assert!(du.combine(1.0, &want, -1.0).unwrap().max_abs() < 1e-10);
        let p3 = ScalarField::from_fn(d, |u, _| u * u * u).unwrap();
        let duu = d2_duu(&p3, Stencil::Second).unwrap();
        let want = ScalarField::from_fn(d, |u, _| 6.0 * u).unwrap();
        assert!(duu.combine(1.0, &want, -1.0).unwrap().max_abs() < 1e-8);

        let p4 = ScalarField::from_fn(d, |_, v| v.powi(4) - 2.0 * v.powi(3) + v).unwrap();
        let dv = d_dv(&p4, Stencil::Fourth).unwrap();
        let want = ScalarField::from_fn(d, |_, v| 4.0 * v.powi(3) - 6.0 * v * v + 1.0).unwrap();
        assert!(dv.combine(1.0, &want, -1.0).unwrap().max_abs() < 1e-9);
        let p5 = ScalarField::from_fn(d, |_, v| v.powi(5)).unwrap();
        let dvv = d2_dvv(&p5, Stencil::Fourth).unwrap();
        let want = ScalarField::from_fn(d, |_, v| 20.0 * v.powi(3)).unwrap();
        assert!(dvv.combine(1.0, &want, -1.0).unwrap().max_abs() < 1e-7);
    }

    fn observed_order(
        f: impl Fn(f64, f64) -> f64 + Copy,
        exact: impl Fn(f64, f64) -> f64 + Copy,
        op: impl Fn(&ScalarField) -> ScalarField + Copy,
    ) -> f64 {
        let (h, n) = (0.04, 26);
        let e1 = error_of(h, n, f, exact, op);
        let e2 = error_of(h / 2.0, 2 * n - 1, f, exact, op);
        (e1 / e2).log2()
    }

    #[test]
    fn sine_derivative_converges_at_stencil_order() {
        for (s, p) in [(Stencil::Second, 2.0), (Stencil::Fourth, 4.0)] {
            let q = observed_order(|u, _| u.sin(), |u, _| u.cos(), |f| d_du(f, s).unwrap());
            assert!((q - p).abs() < 0.3, "d_du {s:?}: {q}");
            let q = observed_order(|_, v| v.sin(), |_, v| -v.sin(), |f| d2_dvv(f, s).unwrap());
            assert!((q - p).abs() < 0.3, "d2_dvv {s:?}: {q}");
        }
    }

    #[test]
    fn exponential_mixed_derivative_converges() {
        for (s, p) in [(Stencil::Second, 2.0), (Stencil::Fourth, 4.0)] {
            let q = observed_order(
                |u, v| (u + v).exp(),
                |u, v| (u + v).exp(),
                |f| d2_dudv(f, s).unwrap(),
            );
            assert!((q - p).abs() < 0.3, "{s:?}: {q}");
        }
    }

    #[test]
    fn mixed_partials_commute_to_rounding() {
        let g = |u: f64, v: f64| (2.0 * u).sin() * (v * v + 1.0).ln() + u * v * v;
        for (h, n) in [(0.05, 21), (0.025, 41)] {
            let f = ScalarField::from_fn(dom(h, n), g).unwrap();
            let a = d_du(&d_dv(&f, Stencil::Second).unwrap(), Stencil::Second).unwrap();
            let b = d_dv(&d_du(&f, Stencil::Second).unwrap(), Stencil::Second).unwrap();
            // the closure weights sum to 16 in absolute value
            let bound = f64::EPSILON * f.max_abs() * (16.0 / (2.0 * h)).powi(2);
            assert!(a.combine(1.0, &b, -1.0).unwrap().max_abs() < bound, "h {h}");
        }
    }

    #[test]
    fn coarsen_and_transpose() {
        let d = dom(0.1, 9);
        let f = ScalarField::from_fn(d, |u, v| u + 10.0 * v).unwrap();
        let c = f.coarsened().unwrap();
        assert_eq!(c.domain().nu, 5);
        assert!((c.at(2, 3) - f.at(4, 6)).abs() < 1e-15);
        let t = f.transposed();
        assert_eq!(t.at(3, 1), f.at(1, 3));
        assert!(dom(0.1, 8).coarsened().is_none());
    }

    #[test]
    fn bilinear_sample_reproduces_bilinear_functions() {
        let d = dom(0.1, 6);
        let f = ScalarField::from_fn(d, |u, v| 1.0 + u - 2.0 * v + 3.0 * u * v).unwrap();
        for (u, v) in [(0.13, -0.17), (0.55, 0.2), (0.1, -0.2), (0.6, 0.3)] {
            let want = 1.0 + u - 2.0 * v + 3.0 * u * v;
            assert!((f.sample(u, v) - want).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn derivative_is_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            c1 in prop::array::uniform3(-1.0f64..1.0),
            c2 in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let d = dom(0.1, 8);
            let f = ScalarField::from_fn(d, |u, v| c1[0] * (u * c1[1]).sin() + c1[2] * v * v).unwrap();
            let g = ScalarField::from_fn(d, |u, v| c2[0] * (u + v).exp() + c2[1] * u * v + c2[2]).unwrap();
            for s in [Stencil::Second, Stencil::Fourth] {
                let lhs = d_du(&f.combine(a, &g, b).unwrap(), s).unwrap();
                let rhs = d_du(&f, s).unwrap().combine(a, &d_du(&g, s).unwrap(), b).unwrap();
                prop_assert!(lhs.combine(1.0, &rhs, -1.0).unwrap().max_abs() < 1e-12 * (1.0 + lhs.max_abs()));
            }
        }
    }
}
