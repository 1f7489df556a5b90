//! CSV and manifest emission.
//!
//! Every subcommand writes one artifact with a fixed column order plus a
//! manifest recording the config hash, effective seeds and options, and the
//! tool version. Identical manifests imply byte-identical artifacts: floats
//! are printed with the shortest round-trip representation, rows follow the
//! deterministic generation order, and no timestamps enter either file.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::dichotomy::{BoundReport, DerivedExponents};
use crate::growth::LemmaSum;
use crate::robustness::SweepRow;

/// FNV-1a, hex-encoded; stable across platforms, used to key manifests.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

pub fn bound_report_csv(report: &BoundReport, side_header: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "point_id,ell,n,{side_header},lhs,rhs,margin,pass");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.point_id,
            r.ell,
            r.n,
            r.side,
            fmt_f64(r.lhs),
            fmt_f64(r.rhs),
            fmt_f64(r.margin),
            r.pass
        );
    }
    out
}

pub struct LemmaRow {
    pub rate_kind: &'static str,
    pub alpha: f64,
    pub s: usize,
    pub r: usize,
    pub out: LemmaSum,
}

pub fn lemma_csv(rows: &[LemmaRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "rate_kind,alpha,s,r,sum,lower,upper,holds");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.rate_kind,
            fmt_f64(row.alpha),
            row.s,
            row.r,
            fmt_f64(row.out.sum),
            fmt_f64(row.out.lower),
            fmt_f64(row.out.upper),
            row.out.holds
        );
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "magnitude,threshold,contraction_rate,converged,refit_lambda,refit_D"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(r.magnitude),
            fmt_f64(r.threshold),
            fmt_f64(r.contraction_rate),
            r.converged,
            fmt_f64(r.refit_lambda),
            fmt_f64(r.refit_d)
        );
    }
    out
}

pub fn derived_csv(d: &DerivedExponents) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "m2,n0,ln_n0,k0,a,b,d1,d2,m_star,c_lower,zeta_min,projection_bound_max,validation_pass,validation_worst_margin"
    );
    let zeta_min = d
        .zeta
        .iter()
        .map(|&(_, z)| z)
        .fold(f64::INFINITY, f64::min);
    let pb_max = d
        .projection_bound
        .iter()
        .map(|&(_, b)| b)
        .fold(0.0f64, f64::max);
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        fmt_f64(d.m2),
        fmt_f64(d.n0),
        fmt_f64(d.ln_n0),
        d.k0,
        fmt_f64(d.a),
        fmt_f64(d.b),
        fmt_f64(d.d1),
        fmt_f64(d.d2),
        d.m_star,
        fmt_f64(d.c_lower),
        fmt_f64(zeta_min),
        fmt_f64(pb_max),
        d.validation.pass,
        fmt_f64(d.validation.worst_margin)
    );
    out
}

#[derive(Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_hash: String,
    /// Hashes of any additional inputs (e.g. signal files).
    pub input_hashes: BTreeMap<String, String>,
    /// Effective options after CLI overrides, sorted by key.
    pub options: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(subcommand: &str, config_bytes: &[u8]) -> Manifest {
        Manifest {
            tool: "dichotomy-lab",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            config_hash: content_hash(config_bytes),
            input_hashes: BTreeMap::new(),
            options: BTreeMap::new(),
        }
    }

    pub fn with_option(mut self, key: &str, value: impl ToString) -> Manifest {
        self.options.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_input(mut self, key: &str, bytes: &[u8]) -> Manifest {
        self.input_hashes
            .insert(key.to_string(), content_hash(bytes));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
