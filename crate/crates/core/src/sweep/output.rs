//! CSV/JSON tables, run manifests and SVG heatmaps.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{CellResult, Contour, GapRow, PhaseDiagram, QSweep, SweepConfig};
use crate::error::Result;
use crate::spectral::Method;
use crate::sweep::config::OutputFormat;

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per cell; per-method columns follow `methods` order.
pub fn write_cells_csv<W: Write>(out: &mut W, cells: &[CellResult], methods: &[Method]) -> Result<()> {
    let mut header = String::from("index,setting,N,M,alpha,q,phi,p_B,B,s,b,eta,kappa,c");
    for m in methods {
        write!(header, ",{m}_lambda,{m}_stderr").unwrap();
    }
    header.push_str(",truth");
    for m in methods.iter().filter(|&&m| m != Method::Diagonalization) {
        write!(header, ",{m}_verdict").unwrap();
    }
    header.push_str(",failures");
    writeln!(out, "{header}")?;
    for c in cells {
        let mut row = format!(
            "{},{},{},{},{},{},{},{}",
            c.index,
            c.setting,
            c.n_assets,
            c.n_institutions,
            num(c.alpha()),
            num(c.q),
            opt(c.phi),
            opt(c.p_big)
        );
        let h = c.heterogeneity;
        let d = c.derived;
        for v in [
            h.map(|h| h.big),
            h.map(|h| h.small),
            d.map(|d| d.b),
            d.map(|d| d.eta),
            d.map(|d| d.kappa),
            d.map(|d| d.c),
        ] {
            write!(row, ",{}", opt(v)).unwrap();
        }
        for &m in methods {
            let e = c.estimate(m);
            write!(row, ",{},{}", opt(e.map(|e| e.value)), opt(e.map(|e| e.stderr))).unwrap();
        }
        let class = c.classification.as_ref();
        let truth = class
            .map(|k| serde_json::to_value(k.truth).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
            .unwrap_or_default();
        write!(row, ",{truth}").unwrap();
        for &m in methods.iter().filter(|&&m| m != Method::Diagonalization) {
            let v = class.and_then(|k| k.verdict(m)).map(|v| v.name()).unwrap_or("");
            write!(row, ",{v}").unwrap();
        }
        write!(row, ",{}", quote(&c.failures.join("; "))).unwrap();
        writeln!(out, "{row}")?;
    }
    Ok(())
}

pub fn write_contours_csv<W: Write>(out: &mut W, contours: &[Contour]) -> Result<()> {
    writeln!(out, "method,p_B,phi")?;
    for c in contours {
        for p in &c.points {
            writeln!(out, "{},{},{}", c.method, num(p.p_big), num(p.phi))?;
        }
    }
    Ok(())
}

pub fn write_curves_csv<W: Write>(out: &mut W, sweep: &QSweep) -> Result<()> {
    writeln!(out, "setting,N,M,alpha,method,argmin_q,min_lambda,interior_minimum")?;
    for c in &sweep.curves {
        let min = c.value.iter().copied().fold(f64::INFINITY, f64::min);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.setting,
            c.n_assets,
            c.n_institutions,
            num(c.alpha()),
            c.method,
            opt(c.argmin_q),
            num(min),
            c.has_interior_minimum()
        )?;
    }
    Ok(())
}

pub fn write_gap_csv<W: Write>(out: &mut W, rows: &[GapRow]) -> Result<()> {
    writeln!(
        out,
        "index,setting,d,N,M,q,diag_lambda,diag_stderr,surrogate_lambda,surrogate_stderr,corsi_lambda,corsi_gap,corsi_gap_stderr,surrogate_gap,surrogate_gap_stderr,replica_lambda,replica_stderr,replica_gap,failure"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.setting,
            r.scale,
            r.n_assets,
            r.n_institutions,
            num(r.q),
            num(r.diagonalization.mean),
            num(r.diagonalization.stderr),
            num(r.surrogate.mean),
            num(r.surrogate.stderr),
            num(r.corsi),
            num(r.corsi_gap),
            num(r.corsi_gap_stderr),
            num(r.surrogate_gap.mean),
            num(r.surrogate_gap.stderr),
            opt(r.replica.map(|e| e.value)),
            opt(r.replica.map(|e| e.stderr)),
            opt(r.replica_gap),
            quote(r.failure.as_deref().unwrap_or(""))
        )?;
    }
    Ok(())
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub workers: usize,
    pub config: &'a SweepConfig,
    pub outputs: Vec<String>,
    pub cells: usize,
    pub failed_cells: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, config: &'a SweepConfig) -> Self {
        Self {
            tool: "instab",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: config.seed,
            workers: config.workers,
            config,
            outputs: Vec::new(),
            cells: 0,
            failed_cells: 0,
            summary: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let mut f = fs::File::create(&path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(path)
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_table<F>(dir: &Path, stem: &str, format: OutputFormat, csv: F, json: &impl Serialize) -> Result<PathBuf>
where
    F: FnOnce(&mut fs::File) -> Result<()>,
{
    let path = dir.join(format!("{stem}.{}", format.extension()));
    let mut f = fs::File::create(&path)?;
    match format {
        OutputFormat::Csv => csv(&mut f)?,
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut f, json)?;
            writeln!(f)?;
        }
    }
    Ok(path)
}

/// Writes the cell table, contours, heatmaps (if enabled) and manifest.
pub fn write_phase_outputs(d: &PhaseDiagram, cfg: &SweepConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = vec![write_table(
        dir,
        "phase_diagram",
        cfg.format,
        |f| write_cells_csv(f, &d.cells, &cfg.methods),
        &d.cells,
    )?];
    paths.push(write_table(dir, "contours", cfg.format, |f| write_contours_csv(f, &d.contours), &d.contours)?);
    if cfg.svg {
        for &m in &cfg.methods {
            let path = dir.join(format!("heatmap_{m}.svg"));
            fs::write(&path, heatmap_svg(d, m))?;
            paths.push(path);
        }
    }
    let mut manifest = Manifest::new("phase-diagram", cfg);
    manifest.cells = d.cells.len();
    manifest.failed_cells = d.failed_cells();
    manifest.summary = Some(serde_json::json!({ "counts": d.counts, "contours": d.contours }));
    manifest.outputs = paths.iter().map(|p| file_name(p)).collect();
    paths.push(manifest.write(dir)?);
    Ok(paths)
}

pub fn write_q_sweep_outputs(s: &QSweep, cfg: &SweepConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = vec![write_table(
        dir,
        "q_sweep",
        cfg.format,
        |f| write_cells_csv(f, &s.cells, &cfg.methods),
        &s.cells,
    )?];
    paths.push(write_table(dir, "q_sweep_curves", cfg.format, |f| write_curves_csv(f, s), &s.curves)?);
    let mut manifest = Manifest::new("q-sweep", cfg);
    manifest.cells = s.cells.len();
    manifest.failed_cells = s.failed_cells();
    manifest.outputs = paths.iter().map(|p| file_name(p)).collect();
    paths.push(manifest.write(dir)?);
    Ok(paths)
}

pub fn write_gap_outputs(rows: &[GapRow], cfg: &SweepConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = vec![write_table(dir, "gap", cfg.format, |f| write_gap_csv(f, rows), &rows)?];
    let mut manifest = Manifest::new("gap", cfg);
    manifest.cells = rows.len();
    manifest.failed_cells = rows.iter().filter(|r| r.failure.is_some()).count();
    manifest.outputs = paths.iter().map(|p| file_name(p)).collect();
    paths.push(manifest.write(dir)?);
    Ok(paths)
}

/// Piecewise-linear viridis-like ramp on `t ∈ [0, 1]`.
fn ramp(t: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |u: f64, v: f64| (u + f * (v - u)).round() as u8;
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Heatmap of one method's estimate over `(p_B, φ)` with the `λ = 1`
/// contour. Approximate methods also show the diagonalization contour
/// (dashed) and mark false-stable (▼) and false-unstable (▲) cells.
pub fn heatmap_svg(d: &PhaseDiagram, m: Method) -> String {
    let (cw, ch) = (14.0, 14.0);
    let (left, top, right, bottom) = (60.0, 30.0, 130.0, 50.0);
    let (nx, ny) = (d.p_big.len(), d.phi.len());
    let (w, h) = (cw * nx as f64, ch * ny as f64);
    let values: Vec<f64> = d.cells.iter().filter_map(|c| c.estimate(m).map(|e| e.value)).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        left + w + right,
        top + h + bottom
    )
    .unwrap();
    writeln!(s, r#"<text x="{left}" y="18">{m}: E[λmax] over (p_B, φ)</text>"#).unwrap();
    // φ grows upwards.
    let x_of = |pb: f64| {
        let (a, b) = (d.p_big[0], *d.p_big.last().unwrap());
        let t = if b > a { (pb - a) / (b - a) } else { 0.5 };
        left + cw * 0.5 + t * (w - cw)
    };
    let y_of = |phi: f64| {
        let (a, b) = (d.phi[0], *d.phi.last().unwrap());
        let t = if b > a { (phi - a) / (b - a) } else { 0.5 };
        top + h - ch * 0.5 - t * (h - ch)
    };
    for i in 0..ny {
        for j in 0..nx {
            let c = d.cell(i, j);
            let x = left + cw * j as f64;
            let y = top + h - ch * (i + 1) as f64;
            let fill = match c.estimate(m) {
                Some(e) => {
                    let (r, g, b) = ramp((e.value - lo) / span);
                    format!("rgb({r},{g},{b})")
                }
                None => "#cccccc".to_string(),
            };
            writeln!(s, r#"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}"/>"#).unwrap();
            if m != Method::Diagonalization {
                let mark = match c.classification.as_ref().and_then(|k| k.verdict(m)) {
                    Some(super::Verdict::FalseStable) => Some("▼"),
                    Some(super::Verdict::FalseUnstable) => Some("▲"),
                    _ => None,
                };
                if let Some(mark) = mark {
                    writeln!(
                        s,
                        r#"<text x="{}" y="{}" text-anchor="middle" font-size="9" fill="white">{mark}</text>"#,
                        x + cw / 2.0,
                        y + ch * 0.75
                    )
                    .unwrap();
                }
            }
        }
    }
    let mut contour = |c: Option<&Contour>, style: &str| {
        let Some(c) = c else { return };
        if c.points.is_empty() {
            return;
        }
        let pts: Vec<String> = c.points.iter().map(|p| format!("{:.2},{:.2}", x_of(p.p_big), y_of(p.phi))).collect();
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="red" stroke-width="2" {style}/>"#,
            pts.join(" ")
        )
        .unwrap();
    };
    contour(d.contours.iter().find(|c| c.method == m), "");
    if m != Method::Diagonalization {
        contour(
            d.contours.iter().find(|c| c.method == Method::Diagonalization),
            r#"stroke-dasharray="5,3""#,
        );
    }
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">p_B</text>"#,
        left + w / 2.0,
        top + h + 36.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">φ</text>"#,
        top + h / 2.0,
        top + h / 2.0
    )
    .unwrap();
    for (v, x) in [(d.p_big[0], left), (*d.p_big.last().unwrap(), left + w)] {
        writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v:.3}</text>"#, top + h + 16.0).unwrap();
    }
    for (v, y) in [(d.phi[0], top + h), (*d.phi.last().unwrap(), top + 10.0)] {
        writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{v:.2}</text>"#, left - 4.0).unwrap();
    }
    // Colour bar.
    let bx = left + w + 20.0;
    for k in 0..50 {
        let t = k as f64 / 49.0;
        let (r, g, b) = ramp(t);
        writeln!(
            s,
            r#"<rect x="{bx}" y="{:.2}" width="14" height="{:.2}" fill="rgb({r},{g},{b})"/>"#,
            top + h - (k + 1) as f64 * h / 50.0,
            h / 50.0 + 0.5
        )
        .unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, bx + 18.0, top + 10.0, num(hi)).unwrap();
    writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, bx + 18.0, top + h, num(lo)).unwrap();
    let has_crossing = d.contours.iter().any(|c| c.method == m && !c.points.is_empty());
    let note = if has_crossing { "red: λ = 1" } else { "no λ = 1 crossing" };
    writeln!(s, r#"<text x="{left}" y="{}">{note}</text>"#, top + h + 48.0).unwrap();
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quoting() {
        assert_eq!(quote("a"), "a");
        assert_eq!(quote("a, b"), "\"a, b\"");
        assert_eq!(quote("say \"x\""), "\"say \"\"x\"\"\"");
        assert_eq!(num(f64::NAN), "");
        assert_eq!(num(0.5), "0.5");
    }

    #[test]
    fn ramp_ends() {
        assert_eq!(ramp(0.0), (68, 1, 84));
        assert_eq!(ramp(1.0), (253, 231, 37));
        assert_eq!(ramp(f64::NAN), ramp(0.0));
    }
}
