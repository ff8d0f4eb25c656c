//! CSV artifacts and run manifests. All numbers are written with 17
//! significant digits so a reader recovers every value bit-exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::analysis::{ConvergenceReport, DecayCurve, DiffusivityCurve, ResidualTable};
use crate::config::{parse_config_str, render_config};
use crate::ensemble::{upper_index, ExperimentConfig, MomentAccumulator};
use crate::error::{Error, Result};
use crate::spectral_field::VelocityField;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

/// Columns: `t, D11, D11_se, D22, D22_se, [D33, D33_se,] D12, count`.
pub fn diffusivity_csv(curve: &DiffusivityCurve) -> String {
    let d = curve.dim;
    let mut header = vec!["t".to_string()];
    for i in 1..=d {
        header.push(format!("D{i}{i}"));
        header.push(format!("D{i}{i}_se"));
    }
    header.push("D12".into());
    header.push("count".into());
    let mut out = String::new();
    row(&mut out, &header);
    for k in 0..curve.times.len() {
        let mut fields = vec![fmt_f64(curve.times[k])];
        for i in 0..d {
            fields.push(fmt_f64(curve.entry(k, i, i)));
            fields.push(fmt_f64(curve.stderr[k][i]));
        }
        fields.push(fmt_f64(curve.entry(k, 0, 1)));
        fields.push(curve.counts[k].to_string());
        row(&mut out, &fields);
    }
    out
}

/// Columns: `t, count, sumX_1..d, sumXX_ij (upper triangle), sumB_1..d, failed`.
pub fn raw_moments_csv(acc: &MomentAccumulator) -> String {
    let d = acc.dim();
    let mut header = vec!["t".to_string(), "count".to_string()];
    header.extend((1..=d).map(|i| format!("sumX_{i}")));
    for i in 1..=d {
        for j in i..=d {
            header.push(format!("sumXX_{i}{j}"));
        }
    }
    header.extend((1..=d).map(|i| format!("sumB_{i}")));
    header.push("failed".into());
    let mut out = String::new();
    row(&mut out, &header);
    for (t, rec) in acc.times().iter().zip(acc.records()) {
        let mut fields = vec![fmt_f64(*t), rec.count.to_string()];
        fields.extend(rec.sum_x.iter().map(|s| fmt_f64(s.value())));
        for i in 0..d {
            for j in i..d {
                fields.push(fmt_f64(rec.sum_xx[upper_index(d, i, j)].value()));
            }
        }
        fields.extend(rec.sum_b.iter().map(|s| fmt_f64(s.value())));
        fields.push(acc.failed().to_string());
        row(&mut out, &fields);
    }
    out
}

/// Columns: `dt, abs_error, stderr, included_in_fit`.
pub fn convergence_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("dt,abs_error,stderr,included_in_fit\n");
    for r in &report.rows {
        row(
            &mut out,
            &[
                fmt_f64(r.dt),
                fmt_f64(r.abs_error),
                fmt_f64(r.stderr),
                (r.included_in_fit as u8).to_string(),
            ],
        );
    }
    out
}

/// Columns: `n, t, variance, floor`. The header comment records both rate
/// interpretations.
pub fn decay_csv(curve: &DecayCurve) -> String {
    let mut out = String::new();
    let rate = |r: Option<f64>| r.map_or("unfit".to_string(), fmt_f64);
    let _ = writeln!(
        out,
        "# variance_rate (squared-norm decay) = {}; amplitude_rate (norm decay) = {}",
        rate(curve.variance_rate),
        rate(curve.amplitude_rate)
    );
    out.push_str("n,t,variance,floor\n");
    for k in 0..curve.steps.len() {
        row(
            &mut out,
            &[
                curve.steps[k].to_string(),
                fmt_f64(curve.times[k]),
                fmt_f64(curve.variance[k]),
                fmt_f64(curve.floor),
            ],
        );
    }
    out
}

/// Columns: `kappa, sigma, D11, D11_se`.
pub fn residual_csv(table: &ResidualTable) -> String {
    let mut out = String::from("kappa,sigma,D11,D11_se\n");
    for r in &table.rows {
        row(
            &mut out,
            &[fmt_f64(r.kappa), fmt_f64(r.sigma), fmt_f64(r.d11), fmt_f64(r.stderr)],
        );
    }
    out
}

/// Columns: `m, k_1..k_d, xi components, eta components`.
pub fn modes_csv<const D: usize>(field: &VelocityField<D>) -> String {
    let c = field.ou().components();
    let mut header = vec!["m".to_string()];
    header.extend((1..=D).map(|i| format!("k_{i}")));
    if c == 1 {
        header.push("xi".into());
        header.push("eta".into());
    } else {
        header.extend((1..=c).map(|i| format!("xi_{i}")));
        header.extend((1..=c).map(|i| format!("eta_{i}")));
    }
    let mut out = String::new();
    row(&mut out, &header);
    for (m, k) in field.modes().wavevectors().iter().enumerate() {
        let mut fields = vec![(m + 1).to_string()];
        fields.extend(k.iter().map(|v| fmt_f64(*v)));
        fields.extend(field.ou().xi()[m * c..(m + 1) * c].iter().map(|v| fmt_f64(*v)));
        fields.extend(field.ou().eta()[m * c..(m + 1) * c].iter().map(|v| fmt_f64(*v)));
        row(&mut out, &fields);
    }
    out
}

/// Minimal reader for the numeric CSVs above: header names and rows.
/// Lines starting with `#` are skipped.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Estimation("empty CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        let values = line
            .split(',')
            .map(|f| f.parse::<f64>().map_err(|_| Error::Estimation(format!("bad CSV field `{f}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != header.len() {
            return Err(Error::Estimation("ragged CSV row".into()));
        }
        rows.push(values);
    }
    Ok((header, rows))
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub command: String,
    /// Subcommand arguments beyond the config (dt list, σ list, ...).
    pub args: BTreeMap<String, String>,
    pub code_version: String,
    pub wall_clock_seconds: f64,
    pub failed_paths: usize,
    pub outputs: Vec<String>,
}

impl RunManifest {
    /// Config keys first, then `run.*` arguments and `meta.*` metadata. The
    /// text parses as a config file.
    pub fn render(&self) -> String {
        let mut out = String::from("# driftdiffuse run manifest\n");
        out.push_str(&render_config(&self.config));
        let _ = writeln!(out, "run.command = {}", self.command);
        for (k, v) in &self.args {
            let _ = writeln!(out, "run.{k} = {v}");
        }
        let _ = writeln!(out, "meta.code_version = {}", self.code_version);
        let _ = writeln!(out, "meta.seed = {}", self.config.seed);
        let _ = writeln!(out, "meta.wall_clock_seconds = {:.3}", self.wall_clock_seconds);
        let _ = writeln!(out, "meta.failed_paths = {}", self.failed_paths);
        let _ = writeln!(out, "meta.outputs = {}", self.outputs.join(","));
        out
    }

    pub fn parse(text: &str) -> Result<RunManifest> {
        let parsed = parse_config_str(text)?;
        let mut args = parsed.run;
        let command = args
            .remove("command")
            .ok_or_else(|| Error::config("run.command", "manifest has no command"))?;
        let meta = parsed.meta;
        let get = |k: &str| meta.get(k).cloned().unwrap_or_default();
        Ok(RunManifest {
            config: parsed.config,
            command,
            args,
            code_version: get("code_version"),
            wall_clock_seconds: get("wall_clock_seconds").parse().unwrap_or(0.0),
            failed_paths: get("failed_paths").parse().unwrap_or(0),
            outputs: get("outputs")
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        })
    }
}
