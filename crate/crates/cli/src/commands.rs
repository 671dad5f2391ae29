use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde_json::{json, Value};

use timelike_surfaces::analysis::{
    check_isotropic_with, extract_invariants, AnalysisOptions, Extraction, NormalOrientation, SurfacePatch,
};
use timelike_surfaces::catalog::{self, CatalogItem, EntryKind};
use timelike_surfaces::invariants::{
    classify, derived_coefficients_with, integrability_residuals_with, theorem_conditions_residuals_with,
    EvalOptions, InvariantSet, ResidualReport, SurfaceType,
};
use timelike_surfaces::io::{self, document_kind, invariants_to_csv, invariants_to_json, surface_to_csv, surface_to_json};
use timelike_surfaces::reconstruction::{
    corner_discrepancy, field_scale, flatness_refinement_check, flatness_residual, reconstruct_as,
    Reconstruction, ReconstructionConfig, MIN_FLATNESS_ORDER,
};
use timelike_surfaces::{
    congruence_distance, Error, GridDomain, LorentzMotion, PathStrategy, PseudoOrthonormalFrame, Result, Stencil,
    Vec4,
};

use timelike_surfaces::minkowski::{frame_gram_residual, reorthonormalize};
use crate::report::{kv_table, residual_table, Sink};
use crate::{CheckArgs, Common, EmitArgs, ExtractArgs, Format, IntegrationArgs, OrientationArg, PathArg, ReconstructArgs, RoundtripArgs};

/// Outcome of a command that ran to completion.
pub enum Status {
    Ok,
    /// A --strict test failed (exit 1).
    Rejected(String),
}

fn sink(c: &Common) -> Sink {
    Sink {
        output: c.output.clone(),
        format: c.format,
    }
}

fn stencil(c: &Common, file_order: Stencil) -> Result<Stencil> {
    match &c.order {
        Some(o) => Stencil::from_order(o.parse().map_err(|_| Error::Format(format!("bad order '{o}'")))?),
        None => Ok(file_order),
    }
}

fn theorem(s: &str) -> Result<Option<SurfaceType>> {
    match s {
        "auto" => Ok(None),
        other => Ok(Some(other.parse()?)),
    }
}

fn parse_origin(s: &str) -> Result<Vec4> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("origin must be four numbers, got '{s}'")))?;
    let arr: [f64; 4] = parts
        .try_into()
        .map_err(|_| Error::Format(format!("origin must be four numbers, got '{s}'")))?;
    Ok(Vec4(arr))
}

fn random_frame(seed: u64) -> PseudoOrthonormalFrame {
    let mut rng = StdRng::seed_from_u64(seed);
    LorentzMotion::random(&mut rng, 0.5).apply_frame(&PseudoOrthonormalFrame::standard())
}

fn parse_frame(s: &str) -> Result<PseudoOrthonormalFrame> {
    if s == "standard" {
        return Ok(PseudoOrthonormalFrame::standard());
    }
    if let Some(rest) = s.strip_prefix("random") {
        let seed = match rest.strip_prefix(':') {
            Some(n) => n.parse().map_err(|_| Error::Format(format!("bad seed in '{s}'")))?,
            None if rest.is_empty() => 0,
            None => return Err(Error::Format(format!("unknown frame '{s}'"))),
        };
        return Ok(random_frame(seed));
    }
    let v = io::read_json(Path::new(s))?;
    let leg = |k: &str| -> Result<Vec4> {
        let arr: [f64; 4] = serde_json::from_value(v.get(k).cloned().unwrap_or(Value::Null))
            .map_err(|_| Error::Format(format!("frame file needs a four-vector '{k}'")))?;
        Ok(Vec4(arr))
    };
    Ok(PseudoOrthonormalFrame::new(leg("x")?, leg("y")?, leg("n1")?, leg("n2")?))
}

fn recon_config(a: &IntegrationArgs, c: &Common, st: Stencil) -> ReconstructionConfig {
    ReconstructionConfig {
        path: match a.path {
            PathArg::Uv => PathStrategy::UThenV,
            PathArg::Vu => PathStrategy::VThenU,
        },
        reproject_every: a.reproject_every,
        substeps: a.substeps.max(1),
        flatness_fail: a.flatness_fail,
        zero_tol: c.zero_tol,
        eval: EvalOptions::with_stencil(st),
        ..Default::default()
    }
}

fn odd(n: usize) -> usize {
    n - (1 - n % 2)
}

/// The invariant set at twice the spacing, over the same region as the
/// returned (possibly trimmed) fine set.
fn refinement_pair(inv: &InvariantSet) -> Result<(InvariantSet, InvariantSet)> {
    let d = inv.domain();
    let fine = inv.leading(odd(d.nu), odd(d.nv))?;
    let coarse = fine.coarsened().ok_or(Error::GridTooSmall {
        axis: if odd(d.nu) < 5 { 'u' } else { 'v' },
        len: d.nu.min(d.nv),
        required: 5,
    })?;
    Ok((fine, coarse))
}

fn with_margin(e: &EvalOptions, margin: usize) -> EvalOptions {
    EvalOptions {
        margin: Some(margin),
        ..*e
    }
}

fn isotropy_error_hint(e: Error, tol: f64) -> Error {
    if let Error::NotIsotropic { .. } = &e {
        log::error!("relative isotropy tolerance is {tol:e}; see --tol");
    }
    e
}

fn extraction_pipeline(patch: &SurfacePatch, opts: &AnalysisOptions) -> Result<Extraction> {
    check_isotropic_with(patch, opts.isotropy_tol, opts.stencil).map_err(|e| isotropy_error_hint(e, opts.isotropy_tol))?;
    extract_invariants(patch, opts)
}

pub fn extract(a: &ExtractArgs) -> Result<Status> {
    let (patch, file_order) = io::read_surface(&a.input)?;
    let st = stencil(&a.common, file_order)?;
    let opts = AnalysisOptions {
        stencil: st,
        isotropy_tol: a.tol,
        orientation: match a.orientation {
            OrientationArg::Positive => NormalOrientation::Positive,
            OrientationArg::Negative => NormalOrientation::Negative,
        },
        ..Default::default()
    };
    let ex = extraction_pipeline(&patch, &opts)?;
    let inv = &ex.invariants;
    let zero_tol = a.common.zero_tol.unwrap_or_else(|| inv.default_zero_tol());
    let ty = classify(inv, zero_tol);
    let eval = EvalOptions {
        stencil: st,
        zero_tol: a.common.zero_tol,
        margin: None,
    };
    let mut residuals = integrability_residuals_with(inv, &ex.derived, &eval)?;
    if a.common.refine {
        let coarse_patch = patch
            .coarsened()
            .ok_or_else(|| Error::Format("surface grid too small for --refine".into()))?;
        let cex = extraction_pipeline(&coarse_patch, &opts)?;
        let d = inv.domain();
        let fine_inv = inv.leading(odd(d.nu), odd(d.nv))?;
        let fine_dc = ex_derived_window(&ex, odd(d.nu), odd(d.nv))?;
        let m = eval.margin();
        let fine = integrability_residuals_with(&fine_inv, &fine_dc, &with_margin(&eval, 2 * m))?;
        let coarse = integrability_residuals_with(&cex.invariants, &cex.derived, &with_margin(&eval, m))?;
        residuals = fine.with_orders_from(&coarse);
    }

    let ty_name = match &ty {
        Ok(t) => t.name().to_string(),
        Err(e) => format!("unclassified ({e})"),
    };
    let out = sink(&a.common);
    let beta = ex.derived.beta1.max_abs().max(ex.derived.beta2.max_abs());
    let mut text = kv_table(&[
        ("input", a.input.display().to_string()),
        ("samples", format!("{} x {}", inv.domain().nu, inv.domain().nv)),
        ("surface type", ty_name),
        ("time orientation", format!("{:?}", ex.frame.time_orientation)),
        ("nu range", format!("[{:.6e}, {:.6e}]", inv.nu.min(), inv.nu.max())),
        ("max |beta|", format!("{beta:.4e}")),
        ("clamped <H,H>", ex.frame.clamped_samples.to_string()),
    ]);
    text.push_str(&residual_table("integrability residuals", &residuals));
    out.table(&text);

    let doc = invariants_to_json(inv, Some(&ex.derived), ty.as_ref().ok().copied(), st)?;
    out.machine(&doc, Some(invariants_to_csv(inv)?))?;
    if let Some(p) = &a.report {
        let rep = json!({
            "input": a.input.display().to_string(),
            "surface_type": ty.as_ref().ok().map(|t| t.name()),
            "integrability": residuals,
        });
        io::write_text(p, &io::to_stable_string(&rep)?)?;
    }
    ty.map(|_| Status::Ok)
}

fn ex_derived_window(
    ex: &Extraction,
    nu: usize,
    nv: usize,
) -> Result<timelike_surfaces::invariants::DerivedCoefficients> {
    let d = &ex.derived;
    Ok(timelike_surfaces::invariants::DerivedCoefficients {
        gamma1: d.gamma1.leading(nu, nv)?,
        gamma2: d.gamma2.leading(nu, nv)?,
        beta1: d.beta1.leading(nu, nv)?,
        beta2: d.beta2.leading(nu, nv)?,
    })
}

struct CheckReports {
    integrability: ResidualReport,
    theorem: ResidualReport,
    flatness: Option<ResidualReport>,
}

fn check_reports(inv: &InvariantSet, ty: SurfaceType, eval: &EvalOptions) -> Result<CheckReports> {
    let dc = derived_coefficients_with(inv, ty, eval)?;
    Ok(CheckReports {
        integrability: integrability_residuals_with(inv, &dc, eval)?,
        theorem: theorem_conditions_residuals_with(inv, ty, eval)?,
        flatness: if ty.is_reconstructible() {
            Some(flatness_residual(inv, &dc, ty, eval)?)
        } else {
            None
        },
    })
}

pub fn check(a: &CheckArgs) -> Result<Status> {
    let (inv, file_order, file_ty) = io::read_invariants(&a.input)?;
    let st = stencil(&a.common, file_order)?;
    let eval = EvalOptions {
        stencil: st,
        zero_tol: a.common.zero_tol,
        margin: None,
    };
    let ty = match theorem(&a.theorem)?.or(file_ty) {
        Some(t) => t,
        None => classify(&inv, eval.zero_tol.unwrap_or_else(|| inv.default_zero_tol()))?,
    };
    let refine = a.common.refine || a.strict;
    let (reports, set) = if refine {
        let (fine, coarse) = refinement_pair(&inv)?;
        let m = eval.margin();
        let f = check_reports(&fine, ty, &with_margin(&eval, 2 * m))?;
        let c = check_reports(&coarse, ty, &with_margin(&eval, m))?;
        let reports = CheckReports {
            integrability: f.integrability.with_orders_from(&c.integrability),
            theorem: f.theorem.with_orders_from(&c.theorem),
            flatness: match (f.flatness, c.flatness) {
                (Some(x), Some(y)) => Some(x.with_orders_from(&y)),
                _ => None,
            },
        };
        (reports, fine)
    } else {
        (check_reports(&inv, ty, &eval)?, inv.clone())
    };

    // a residual that is neither negligible nor shrinking marks a violated condition
    let scale = set.curvature_scale().max(1.0) * set.f.max_abs().max(1.0);
    let threshold = a.tol * scale;
    let stuck: Vec<String> = reports
        .theorem
        .conditions
        .iter()
        .chain(reports.flatness.iter().flat_map(|r| r.conditions.iter()))
        .filter(|c| c.max_norm > threshold && c.convergence_order.is_none_or(|q| q < MIN_FLATNESS_ORDER))
        .map(|c| c.name.clone())
        .collect();

    let out = sink(&a.common);
    let mut text = kv_table(&[
        ("input", a.input.display().to_string()),
        ("samples", format!("{} x {}", inv.domain().nu, inv.domain().nv)),
        ("condition set", ty.name().to_string()),
    ]);
    text.push_str(&residual_table("fundamental conditions", &reports.theorem));
    text.push_str(&residual_table("integrability residuals", &reports.integrability));
    if let Some(f) = &reports.flatness {
        text.push_str(&format!(
            "flatness: worst of 16 entries {:.4e}{}\n",
            f.worst(),
            match f.conditions.iter().filter_map(|c| c.convergence_order.filter(|_| c.max_norm > threshold)).reduce(f64::min) {
                Some(q) => format!(", slowest order {q:.2}"),
                None => String::new(),
            }
        ));
    }
    if a.strict {
        text.push_str(&format!(
            "strict: threshold {threshold:.3e}, {}\n",
            if stuck.is_empty() { "all residuals negligible or converging".to_string() } else { format!("not converging: {}", stuck.join(", ")) }
        ));
    }
    out.table(&text);

    let doc = json!({
        "input": a.input.display().to_string(),
        "surface_type": ty.name(),
        "theorem": reports.theorem,
        "integrability": reports.integrability,
        "flatness": reports.flatness,
        "strict": if a.strict { json!({"threshold": threshold, "not_converging": stuck}) } else { Value::Null },
    });
    out.machine(&doc, Some(io::report_fields_to_csv(&reports.theorem)?))?;
    if a.strict && !stuck.is_empty() {
        return Ok(Status::Rejected(format!(
            "conditions with a residual floor: {}",
            stuck.join(", ")
        )));
    }
    Ok(Status::Ok)
}

fn run_reconstruction(
    inv: &InvariantSet,
    ty: Option<SurfaceType>,
    a: &IntegrationArgs,
    cfg: &ReconstructionConfig,
    p0: Vec4,
    frame0: &PseudoOrthonormalFrame,
) -> Result<(Reconstruction, Vec<(&'static str, String)>)> {
    let mut rows = Vec::new();
    if a.strict {
        let chk = flatness_refinement_check(inv, ty, cfg)?;
        rows.push((
            "strict check",
            format!(
                "flatness {:.3e} vs {:.3e} at twice the spacing, order {}",
                chk.fine,
                chk.coarse,
                chk.order.map(|q| format!("{q:.2}")).unwrap_or_else(|| "-".into())
            ),
        ));
        chk.require_compatible()?;
    }
    let rec = reconstruct_as(inv, ty, p0, frame0, cfg)?;
    Ok((rec, rows))
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<Status> {
    let (inv, file_order, file_ty) = io::read_invariants(&a.input)?;
    let st = stencil(&a.common, file_order)?;
    let cfg = recon_config(&a.integ, &a.common, st);
    let ty = theorem(&a.integ.theorem)?.or(file_ty);
    let p0 = parse_origin(&a.integ.origin)?;
    let frame0 = parse_frame(&a.integ.frame)?;
    let (rec, mut rows) = run_reconstruction(&inv, ty, &a.integ, &cfg, p0, &frame0)?;
    let dc = derived_coefficients_with(&inv, rec.surface_type, &cfg.eval)?;
    rows.splice(
        0..0,
        [
            ("input", a.input.display().to_string()),
            ("surface type", rec.surface_type.name().to_string()),
            (
                "flatness",
                format!("{:.4e} (scale {:.4e})", rec.flatness.worst(), field_scale(&inv, &dc)),
            ),
            ("max Gram drift", format!("{:.4e}", rec.max_drift)),
            ("path", format!("{:?}", cfg.path)),
        ],
    );
    if a.compare_paths {
        let other = ReconstructionConfig {
            path: match cfg.path {
                PathStrategy::UThenV => PathStrategy::VThenU,
                PathStrategy::VThenU => PathStrategy::UThenV,
            },
            ..cfg
        };
        let alt = reconstruct_as(&inv, Some(rec.surface_type), p0, &frame0, &other)?;
        let gap = corner_discrepancy(&rec.patch, &alt.patch)?;
        rows.push(("corner gap (other path)", format!("{gap:.4e}")));
    }
    let out = sink(&a.common);
    out.table(&kv_table(&rows));
    out.machine(&surface_to_json(&rec.patch, st)?, Some(surface_to_csv(&rec.patch)?))?;
    Ok(Status::Ok)
}

fn order_of(coarse: f64, fine: f64) -> Option<f64> {
    (coarse > 0.0 && fine > 0.0).then(|| (coarse / fine).log2())
}

fn fmt_order(q: Option<f64>) -> String {
    q.map(|q| format!("{q:.2}")).unwrap_or_else(|| "-".into())
}

struct InvariantRoundtrip {
    distance: f64,
    field_errors: Vec<(&'static str, f64)>,
    surface_type: SurfaceType,
}

fn invariant_roundtrip(
    inv: &InvariantSet,
    ty: Option<SurfaceType>,
    a: &RoundtripArgs,
    cfg: &ReconstructionConfig,
    opts: &AnalysisOptions,
) -> Result<InvariantRoundtrip> {
    let p0 = parse_origin(&a.integ.origin)?;
    let f0 = parse_frame(&a.integ.frame)?;
    let (r1, _) = run_reconstruction(inv, ty, &a.integ, cfg, p0, &f0)?;
    let r2 = reconstruct_as(inv, Some(r1.surface_type), p0, &random_frame(a.seed), cfg)?;
    let distance = congruence_distance(&r1.patch, &r2.patch)?;
    let ex = extraction_pipeline(&r1.patch, opts)?;
    let field_errors = inv
        .fields()
        .iter()
        .zip(ex.invariants.fields().iter())
        .map(|((name, want), (_, got))| {
            let e = want
                .values()
                .iter()
                .zip(got.values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            (*name, e)
        })
        .collect();
    Ok(InvariantRoundtrip {
        distance,
        field_errors,
        surface_type: r1.surface_type,
    })
}

struct SurfaceRoundtrip {
    distance: f64,
    surface_type: SurfaceType,
    flatness: f64,
}

fn surface_roundtrip(
    patch: &SurfacePatch,
    ty: Option<SurfaceType>,
    a: &RoundtripArgs,
    cfg: &ReconstructionConfig,
    opts: &AnalysisOptions,
) -> Result<SurfaceRoundtrip> {
    let ex = extraction_pipeline(patch, opts)?;
    let ty = match ty {
        Some(t) => t,
        None => classify(&ex.invariants, cfg.zero_tol.unwrap_or_else(|| ex.invariants.default_zero_tol()))?,
    };
    if !ty.is_reconstructible() {
        return Err(Error::TypeMismatch(format!(
            "extracted data are of type {ty}; no reconstruction theorem covers it"
        )));
    }
    let mut framed = ex.framed_patch(patch);
    // differenced tangents are null only up to truncation error
    let raw = framed.frame_at(0, 0).ok_or(Error::MissingFrames)?;
    log::debug!("extracted initial frame Gram residual {:e}", frame_gram_residual(raw));
    let frame0 = reorthonormalize(raw)?;
    let origin = patch.z.domain().index(0, 0);
    if let Some(fr) = framed.frames.as_mut() {
        fr[origin] = frame0;
    }
    let (rec, _) = run_reconstruction(&ex.invariants, Some(ty), &a.integ, cfg, patch.z.at(0, 0), &frame0)?;
    Ok(SurfaceRoundtrip {
        distance: congruence_distance(&framed, &rec.patch)?,
        surface_type: ty,
        flatness: rec.flatness.worst(),
    })
}

pub fn roundtrip(a: &RoundtripArgs) -> Result<Status> {
    let is_csv = a.input.extension().and_then(|e| e.to_str()) == Some("csv");
    let kind = if is_csv {
        EntryKind::Surface
    } else {
        document_kind(&io::read_json(&a.input)?)
            .ok_or_else(|| Error::Format("neither a surface nor an invariant set".into()))?
    };
    let ty = theorem(&a.integ.theorem)?;
    let out = sink(&a.common);
    let mut rows = vec![("input", a.input.display().to_string())];
    let doc = match kind {
        EntryKind::Surface => {
            let (patch, file_order) = io::read_surface(&a.input)?;
            let st = stencil(&a.common, file_order)?;
            let cfg = recon_config(&a.integ, &a.common, st);
            let opts = AnalysisOptions {
                stencil: st,
                isotropy_tol: a.tol,
                ..Default::default()
            };
            let fine = surface_roundtrip(&patch, ty, a, &cfg, &opts)?;
            let order = if a.common.refine {
                let coarse_patch = patch
                    .coarsened()
                    .ok_or_else(|| Error::Format("surface grid too small for --refine".into()))?;
                let coarse = surface_roundtrip(&coarse_patch, ty, a, &cfg, &opts)?;
                rows.push(("distance at 2h", format!("{:.4e}", coarse.distance)));
                order_of(coarse.distance, fine.distance)
            } else {
                None
            };
            rows.push(("surface type", fine.surface_type.name().to_string()));
            rows.push(("flatness of extracted data", format!("{:.4e}", fine.flatness)));
            rows.push(("congruence distance", format!("{:.4e}", fine.distance)));
            rows.push(("distance order", fmt_order(order)));
            json!({
                "input": a.input.display().to_string(),
                "kind": "surface",
                "surface_type": fine.surface_type.name(),
                "congruence_distance": fine.distance,
                "flatness": fine.flatness,
                "order": order,
            })
        }
        EntryKind::Invariants => {
            let (inv, file_order, file_ty) = io::read_invariants(&a.input)?;
            let st = stencil(&a.common, file_order)?;
            let cfg = recon_config(&a.integ, &a.common, st);
            let opts = AnalysisOptions {
                stencil: st,
                isotropy_tol: a.tol,
                ..Default::default()
            };
            let ty = ty.or(file_ty);
            let fine = invariant_roundtrip(&inv, ty, a, &cfg, &opts)?;
            let coarse = if a.common.refine {
                let (_, c) = refinement_pair(&inv)?;
                Some(invariant_roundtrip(&c, ty, a, &cfg, &opts)?)
            } else {
                None
            };
            rows.push(("surface type", fine.surface_type.name().to_string()));
            rows.push(("distance between frames", format!("{:.4e}", fine.distance)));
            let mut fields = serde_json::Map::new();
            for (k, (name, e)) in fine.field_errors.iter().enumerate() {
                let q = coarse.as_ref().and_then(|c| order_of(c.field_errors[k].1, *e));
                rows.push((name, format!("max error {e:.4e}, order {}", fmt_order(q))));
                fields.insert(name.to_string(), json!({"max_error": e, "order": q}));
            }
            json!({
                "input": a.input.display().to_string(),
                "kind": "invariants",
                "surface_type": fine.surface_type.name(),
                "congruence_distance": fine.distance,
                "fields": fields,
            })
        }
    };
    out.table(&kv_table(&rows));
    out.machine(&doc, None)?;
    Ok(Status::Ok)
}

pub fn catalog_list(format: Option<Format>) -> Result<Status> {
    if format == Some(Format::Json) {
        print!("{}", io::to_stable_string(&catalog::ENTRIES)?);
        return Ok(Status::Ok);
    }
    let mut rows = Vec::new();
    for e in catalog::ENTRIES {
        let params: Vec<String> = e.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        rows.push((
            e.name,
            format!(
                "{:<10} {:<10} {:<36} {}",
                format!("{:?}", e.kind).to_lowercase(),
                e.surface_type.map(|t| t.name()).unwrap_or("-"),
                params.join(","),
                e.description
            ),
        ));
    }
    print!("{}", kv_table(&rows));
    Ok(Status::Ok)
}

pub fn catalog_emit(a: &EmitArgs) -> Result<Status> {
    let params = io::parse_params(&a.params)?;
    let base = catalog::default_domain(&a.name)?;
    let h = a.h.unwrap_or(base.hu);
    let domain = GridDomain::new(
        a.u0.unwrap_or(base.u0),
        a.v0.unwrap_or(base.v0),
        h,
        h,
        a.n.unwrap_or(base.nu),
        a.n.unwrap_or(base.nv),
    )?;
    let st = Stencil::from_order(a.order.parse().map_err(|_| Error::Format("bad order".into()))?)?;
    let out = Sink {
        output: a.output.clone(),
        format: Some(a.format.unwrap_or(Format::Json)),
    };
    match catalog::emit(&a.name, &params, domain)? {
        CatalogItem::Surface(p) => out.machine(&surface_to_json(&p, st)?, Some(surface_to_csv(&p)?))?,
        CatalogItem::Invariants(inv) => {
            let ty = catalog::entry(&a.name).and_then(|e| e.surface_type);
            out.machine(&invariants_to_json(&inv, None, ty, st)?, Some(invariants_to_csv(&inv)?))?
        }
    }
    Ok(Status::Ok)
}
