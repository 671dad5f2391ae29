//! File formats.
//!
//! Invariant set (JSON):
//! `{"grid": {u0, v0, hu, hv, nu, nv, order}, "fields": {"f": [...], "nu": [...],
//! "lambda1": [...], "lambda2": [...], "mu1": [...], "mu2": [...]}}`, arrays
//! row-major with `u` slow. Optional keys: `"derived"` (gamma/beta arrays)
//! and `"surface_type"`.
//!
//! Surface patch (JSON): `{"grid": {...}, "z": {"x1": [...], ..., "x4": [...]},
//! "f": [...]?, "frames": {"x": [[4]...], "y": ..., "n1": ..., "n2": ...}?}`.
//!
//! Surface patch (CSV): header `u,v,x1,x2,x3,x4`, one row per sample.
//!
//! Written JSON has sorted keys and every float printed with 17
//! significant digits.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::analysis::SurfacePatch;
use crate::error::{Error, Result};
use crate::grid::{GridDomain, ScalarField, Stencil, Vec4Field};
use crate::invariants::{DerivedCoefficients, InvariantSet, ResidualReport, SurfaceType};
use crate::minkowski::{PseudoOrthonormalFrame, Vec4};

/// Grid header shared by all JSON formats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub u0: f64,
    pub v0: f64,
    pub hu: f64,
    pub hv: f64,
    pub nu: usize,
    pub nv: usize,
    #[serde(default)]
    pub order: Stencil,
}

impl GridHeader {
    pub fn new(d: &GridDomain, order: Stencil) -> Self {
        GridHeader {
            u0: d.u0,
            v0: d.v0,
            hu: d.hu,
            hv: d.hv,
            nu: d.nu,
            nv: d.nv,
            order,
        }
    }

    pub fn domain(&self) -> Result<GridDomain> {
        GridDomain::new(self.u0, self.v0, self.hu, self.hv, self.nu, self.nv)
    }
}

struct StableFormatter;

impl serde_json::ser::Formatter for StableFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes with sorted keys and fixed float formatting.
pub fn to_stable_string<T: Serialize>(value: &T) -> Result<String> {
    // round-trip through Value so map keys come out sorted
    let v = serde_json::to_value(value)?;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, StableFormatter);
    v.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

fn array(values: &[f64]) -> Value {
    Value::Array(values.iter().map(|&x| json!(x)).collect())
}

fn grid_value(d: &GridDomain, order: Stencil) -> Result<Value> {
    Ok(serde_json::to_value(GridHeader::new(d, order))?)
}

pub fn invariants_to_json(
    inv: &InvariantSet,
    derived: Option<&DerivedCoefficients>,
    surface_type: Option<SurfaceType>,
    order: Stencil,
) -> Result<Value> {
    let mut fields = Map::new();
    for (name, g) in inv.fields() {
        fields.insert(name.into(), array(g.values()));
    }
    let mut root = Map::new();
    root.insert("grid".into(), grid_value(inv.domain(), order)?);
    root.insert("fields".into(), Value::Object(fields));
    if let Some(dc) = derived {
        let mut m = Map::new();
        for (name, g) in dc.fields() {
            m.insert(name.into(), array(g.values()));
        }
        root.insert("derived".into(), Value::Object(m));
    }
    if let Some(t) = surface_type {
        root.insert("surface_type".into(), json!(t.name()));
    }
    Ok(Value::Object(root))
}

fn take<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::Format(format!("missing key '{key}'")))
}

fn numbers(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::Format(format!("'{what}' is not an array")))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::Format(format!("non-numeric entry in '{what}'")))
        })
        .collect()
}

fn header(v: &Value) -> Result<(GridDomain, Stencil)> {
    let h: GridHeader = serde_json::from_value(take(v, "grid")?.clone())
        .map_err(|e| Error::Format(format!("bad grid header: {e}")))?;
    Ok((h.domain()?, h.order))
}

/// Invariant set, stencil order and optional type tag from JSON.
pub fn invariants_from_json(v: &Value) -> Result<(InvariantSet, Stencil, Option<SurfaceType>)> {
    let (d, order) = header(v)?;
    let fields = take(v, "fields")?;
    let get = |name: &str| -> Result<ScalarField> {
        ScalarField::new(d, numbers(take(fields, name)?, name)?)
    };
    let inv = InvariantSet::new(
        get("f")?,
        get("nu")?,
        get("lambda1")?,
        get("lambda2")?,
        get("mu1")?,
        get("mu2")?,
    )?;
    let ty = match v.get("surface_type").and_then(Value::as_str) {
        Some(s) => Some(s.parse()?),
        None => None,
    };
    Ok((inv, order, ty))
}

pub fn surface_to_json(patch: &SurfacePatch, order: Stencil) -> Result<Value> {
    let d = patch.domain();
    let mut z = Map::new();
    for k in 0..4 {
        z.insert(format!("x{}", k + 1), array(patch.z.component(k).values()));
    }
    let mut root = Map::new();
    root.insert("grid".into(), grid_value(d, order)?);
    root.insert("z".into(), Value::Object(z));
    if let Some(f) = &patch.f {
        root.insert("f".into(), array(f.values()));
    }
    if let Some(frames) = &patch.frames {
        let mut m = Map::new();
        for (leg, name) in ["x", "y", "n1", "n2"].iter().enumerate() {
            let rows = frames
                .iter()
                .map(|fr| Value::Array(fr.legs()[leg].0.iter().map(|&c| json!(c)).collect()))
                .collect();
            m.insert((*name).into(), Value::Array(rows));
        }
        root.insert("frames".into(), Value::Object(m));
    }
    Ok(Value::Object(root))
}

fn vec4_rows(v: &Value, what: &str) -> Result<Vec<Vec4>> {
    v.as_array()
        .ok_or_else(|| Error::Format(format!("'{what}' is not an array")))?
        .iter()
        .map(|row| {
            let r = numbers(row, what)?;
            <[f64; 4]>::try_from(r)
                .map(Vec4)
                .map_err(|_| Error::Format(format!("'{what}' rows must have 4 entries")))
        })
        .collect()
}

pub fn surface_from_json(v: &Value) -> Result<(SurfacePatch, Stencil)> {
    let (d, order) = header(v)?;
    let z = take(v, "z")?;
    let comps: [Result<ScalarField>; 4] = std::array::from_fn(|k| {
        let name = format!("x{}", k + 1);
        ScalarField::new(d, numbers(take(z, &name)?, &name)?)
    });
    let [a, b, c, e] = comps;
    let mut patch = SurfacePatch::new(Vec4Field::from_components([a?, b?, c?, e?])?);
    if let Some(f) = v.get("f") {
        patch = patch.with_f(ScalarField::new(d, numbers(f, "f")?)?)?;
    }
    if let Some(fr) = v.get("frames") {
        let legs: [Result<Vec<Vec4>>; 4] = std::array::from_fn(|k| {
            let name = ["x", "y", "n1", "n2"][k];
            vec4_rows(take(fr, name)?, name)
        });
        let [x, y, n1, n2] = legs;
        let (x, y, n1, n2) = (x?, y?, n1?, n2?);
        if [&y, &n1, &n2].iter().any(|l| l.len() != x.len()) {
            return Err(Error::Format("frame legs have different lengths".into()));
        }
        let frames = (0..x.len())
            .map(|k| PseudoOrthonormalFrame::new(x[k], y[k], n1[k], n2[k]))
            .collect();
        patch = patch.with_frames(frames)?;
    }
    Ok((patch, order))
}

pub fn surface_to_csv(patch: &SurfacePatch) -> Result<String> {
    let d = *patch.domain();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["u", "v", "x1", "x2", "x3", "x4"])?;
    for i in 0..d.nu {
        for j in 0..d.nv {
            let p = patch.z.at(i, j);
            let row = [d.u(i), d.v(j), p.0[0], p.0[1], p.0[2], p.0[3]];
            w.write_record(row.iter().map(|x| format!("{x:.16e}")))?;
        }
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv flush failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv of ASCII numbers"))
}

/// Sorted distinct coordinates, merged within a relative tolerance.
fn axis(values: &mut Vec<f64>, name: &str) -> Result<(f64, f64, usize)> {
    values.sort_by(|a, b| a.total_cmp(b));
    let span = (values[values.len() - 1] - values[0]).abs().max(1.0);
    values.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * span);
    let n = values.len();
    if n < 3 {
        return Err(Error::Format(format!("{name} axis has {n} distinct values, need 3")));
    }
    let h = (values[n - 1] - values[0]) / (n - 1) as f64;
    for (k, x) in values.iter().enumerate() {
        if (x - (values[0] + k as f64 * h)).abs() > 1e-6 * h {
            return Err(Error::Format(format!("{name} samples are not equally spaced")));
        }
    }
    Ok((values[0], h, n))
}

/// Reads `u,v,x1,x2,x3,x4` rows in any order; the grid is inferred.
pub fn surface_from_csv<R: Read>(reader: R) -> Result<SurfacePatch> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let head = rdr.headers()?.clone();
    let expected = ["u", "v", "x1", "x2", "x3", "x4"];
    if head.len() != 6 || head.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::Format(format!("expected header u,v,x1,x2,x3,x4, got {head:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("not a number: '{s}'"))))
            .collect::<Result<_>>()?;
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::Format("no samples".into()));
    }
    let (u0, hu, nu) = axis(&mut rows.iter().map(|r| r[0]).collect(), "u")?;
    let (v0, hv, nv) = axis(&mut rows.iter().map(|r| r[1]).collect(), "v")?;
    let d = GridDomain::new(u0, v0, hu, hv, nu, nv)?;
    if rows.len() != d.len() {
        return Err(Error::Format(format!(
            "{} rows for a {nu}x{nv} grid",
            rows.len()
        )));
    }
    let mut z = vec![None; d.len()];
    for r in &rows {
        let i = ((r[0] - u0) / hu).round() as usize;
        let j = ((r[1] - v0) / hv).round() as usize;
        let slot = &mut z[d.index(i, j)];
        if slot.is_some() {
            return Err(Error::Format(format!("duplicate sample at u={}, v={}", r[0], r[1])));
        }
        *slot = Some(Vec4([r[2], r[3], r[4], r[5]]));
    }
    let z = z.into_iter().map(|p| p.expect("every slot filled once")).collect();
    Ok(SurfacePatch::new(Vec4Field::new(d, z)?))
}

/// `u,v,<name>...` rows for plotting.
pub fn fields_to_csv(fields: &[(&str, &ScalarField)]) -> Result<String> {
    let d = *fields
        .first()
        .ok_or_else(|| Error::Format("no fields to write".into()))?
        .1
        .domain();
    if fields.iter().any(|(_, g)| !g.domain().matches(&d)) {
        return Err(Error::DomainMismatch);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["u".to_string(), "v".to_string()];
    head.extend(fields.iter().map(|(n, _)| n.to_string()));
    w.write_record(&head)?;
    for i in 0..d.nu {
        for j in 0..d.nv {
            let mut row = vec![format!("{:.16e}", d.u(i)), format!("{:.16e}", d.v(j))];
            row.extend(fields.iter().map(|(_, g)| format!("{:.16e}", g.at(i, j))));
            w.write_record(&row)?;
        }
    }
    finish_csv(w)
}

pub fn invariants_to_csv(inv: &InvariantSet) -> Result<String> {
    fields_to_csv(&inv.fields())
}

/// Residual fields of a report as CSV columns (conditions without a
/// stored field are skipped).
pub fn report_fields_to_csv(report: &ResidualReport) -> Result<String> {
    let cols: Vec<(&str, &ScalarField)> = report
        .conditions
        .iter()
        .filter_map(|c| c.field.as_ref().map(|f| (c.name.as_str(), f)))
        .collect();
    fields_to_csv(&cols)
}

/// Reads and parses a JSON file; I/O and syntax errors both map to the
/// I/O-or-format error classes.
pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads a surface from `.csv` or JSON, chosen by extension.
pub fn read_surface(path: &Path) -> Result<(SurfacePatch, Stencil)> {
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        let file = std::fs::File::open(path)?;
        Ok((surface_from_csv(file)?, Stencil::Second))
    } else {
        surface_from_json(&read_json(path)?)
    }
}

pub fn read_invariants(path: &Path) -> Result<(InvariantSet, Stencil, Option<SurfaceType>)> {
    invariants_from_json(&read_json(path)?)
}

/// Whether a JSON document looks like a surface (has `z`) or an invariant
/// set (has `fields`).
pub fn document_kind(v: &Value) -> Option<crate::catalog::EntryKind> {
    if v.get("z").is_some() {
        Some(crate::catalog::EntryKind::Surface)
    } else if v.get("fields").is_some() {
        Some(crate::catalog::EntryKind::Invariants)
    } else {
        None
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses `key=value,key=value`.
pub fn parse_params(s: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("expected key=value, got '{part}'")))?;
        let x: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("not a number: '{v}'")))?;
        out.insert(k.trim().to_string(), x);
    }
    Ok(out)
}
