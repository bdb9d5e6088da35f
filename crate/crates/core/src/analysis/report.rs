//! The analysis report record and its text and JSON serializations.
//!
//! The text form is a flat `key=value` file, one diagnostic per line, with
//! shortest round-trip float formatting so re-parsing reproduces the exact
//! values. The JSON form carries the same fields plus a schema version.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schema version stamped into both serializations.
pub const REPORT_VERSION: u32 = 1;

/// Number of regimes the clustering diagnostics are computed over.
pub const REPORT_CLUSTERS: usize = 18;

/// Pass thresholds for desk-scale runs (500 sequences per regime), applied
/// by the report summary and the acceptance suite.
pub mod thresholds {
    pub const PURITY_JEPA_MIN: f64 = 0.55;
    /// Minimum lead of the JEPA purity over the autoencoder baseline.
    pub const PURITY_GAP_MIN: f64 = 0.10;
    pub const FROB_REL_MAX: f64 = 0.10;
    pub const SKEW_REL_MAX: f64 = 0.10;
    pub const CENTROID_MEAN_MAX: f64 = 0.05;
    /// Eigenvalue magnitudes counted as "near one".
    pub const EIGEN_BAND: (f64, f64) = (0.85, 1.10);
    pub const EIGEN_IN_BAND_MIN: usize = 18;
    pub const INVARIANCE_MAX: f64 = 0.20;
    pub const DECOMPOSITION_GAP_MAX: f64 = 1e-6;
}

/// Published full-scale results (180,000 training pairs) quoted in the
/// report summary for comparison. Never used as pass thresholds: desk-scale
/// runs are two orders of magnitude smaller.
pub mod full_scale_reference {
    pub const PURITY_JEPA: f64 = 0.6548;
    pub const PURITY_AE: f64 = 0.3881;
    pub const FROB_REL: f64 = 0.0234;
    pub const SKEW_REL: f64 = 0.0206;
    pub const CENTROID_MEAN: f64 = 0.0080;
}

/// Every diagnostic of one analysis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub purity_jepa: f64,
    /// `None` when the run had no autoencoder checkpoint to compare with.
    pub purity_ae: Option<f64>,
    /// `|M - I|_F / |M|_F` of the linear predictor.
    pub frob_rel: f64,
    /// `|M - M^T|_F / |M|_F` of the linear predictor.
    pub skew_rel: f64,
    /// Eigenvalue magnitudes of the predictor, sorted descending.
    pub eigen_mags: Vec<f64>,
    /// Relative centroid displacements `|M c_i - c_i| / |c_i|`, one per
    /// cluster.
    pub centroid_errors: Vec<f64>,
    /// Mean relative drift of embeddings from context to target window.
    pub invariance_err: f64,
    /// Relative gap between the realized loss and the conditional-mean
    /// prediction error on noise-free regimes.
    pub decomposition_gap: f64,
}

impl AnalysisReport {
    pub fn centroid_mean(&self) -> f64 {
        self.centroid_errors.iter().sum::<f64>() / self.centroid_errors.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("purity_jepa", Some(self.purity_jepa)), ("purity_ae", self.purity_ae)]
        {
            if let Some(v) = value {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::contract(format!("{name} {v} outside [0, 1]")));
                }
            }
        }
        if self.centroid_errors.len() != REPORT_CLUSTERS {
            return Err(Error::contract(format!(
                "{} centroid errors, expected {REPORT_CLUSTERS}",
                self.centroid_errors.len()
            )));
        }
        if self.eigen_mags.is_empty() {
            return Err(Error::contract("eigen_mags must not be empty"));
        }
        let scalars = [
            self.frob_rel,
            self.skew_rel,
            self.invariance_err,
            self.decomposition_gap,
        ];
        let finite = scalars.iter().all(|v| v.is_finite())
            && self.eigen_mags.iter().all(|v| v.is_finite())
            && self.centroid_errors.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::numeric("report contains non-finite values"));
        }
        Ok(())
    }

    /// Flat `key=value` rendering, one line per field, fixed key order.
    pub fn to_text(&self) -> String {
        let join = |values: &[f64]| {
            values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
        };
        let purity_ae = match self.purity_ae {
            Some(v) => v.to_string(),
            None => "absent".to_string(),
        };
        format!(
            "report_version={REPORT_VERSION}\n\
             purity_jepa={}\n\
             purity_ae={purity_ae}\n\
             frob_rel={}\n\
             skew_rel={}\n\
             eigen_mags={}\n\
             centroid_errors={}\n\
             invariance_err={}\n\
             decomposition_gap={}\n",
            self.purity_jepa,
            self.frob_rel,
            self.skew_rel,
            join(&self.eigen_mags),
            join(&self.centroid_errors),
            self.invariance_err,
            self.decomposition_gap,
        )
    }

    /// Parses [`Self::to_text`] output. Errors carry the 1-based line
    /// number of the offending line.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut version: Option<u32> = None;
        let mut purity_jepa: Option<f64> = None;
        let mut purity_ae: Option<Option<f64>> = None;
        let mut frob_rel: Option<f64> = None;
        let mut skew_rel: Option<f64> = None;
        let mut eigen_mags: Option<Vec<f64>> = None;
        let mut centroid_errors: Option<Vec<f64>> = None;
        let mut invariance_err: Option<f64> = None;
        let mut decomposition_gap: Option<f64> = None;

        for (index, line) in text.lines().enumerate() {
            let line_no = index + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::format(format!("line {line_no}: {what}"));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key=value"))?;
            let scalar = |slot: &mut Option<f64>| -> Result<()> {
                if slot.is_some() {
                    return Err(bad(&format!("duplicate key {key}")));
                }
                *slot =
                    Some(value.parse().map_err(|_| bad(&format!("{key} is not a number")))?);
                Ok(())
            };
            let list = |slot: &mut Option<Vec<f64>>| -> Result<()> {
                if slot.is_some() {
                    return Err(bad(&format!("duplicate key {key}")));
                }
                *slot = Some(
                    value
                        .split(',')
                        .map(|v| v.parse().map_err(|_| bad(&format!("{key} entry {v:?}"))))
                        .collect::<Result<_>>()?,
                );
                Ok(())
            };
            match key {
                "report_version" => {
                    let v: u32 =
                        value.parse().map_err(|_| bad("report_version is not a u32"))?;
                    if v != REPORT_VERSION {
                        return Err(bad(&format!(
                            "report version {v} is not the supported {REPORT_VERSION}"
                        )));
                    }
                    version = Some(v);
                }
                "purity_jepa" => scalar(&mut purity_jepa)?,
                "purity_ae" => {
                    if purity_ae.is_some() {
                        return Err(bad("duplicate key purity_ae"));
                    }
                    purity_ae = Some(if value == "absent" {
                        None
                    } else {
                        Some(
                            value
                                .parse()
                                .map_err(|_| bad("purity_ae is not a number or 'absent'"))?,
                        )
                    });
                }
                "frob_rel" => scalar(&mut frob_rel)?,
                "skew_rel" => scalar(&mut skew_rel)?,
                "eigen_mags" => list(&mut eigen_mags)?,
                "centroid_errors" => list(&mut centroid_errors)?,
                "invariance_err" => scalar(&mut invariance_err)?,
                "decomposition_gap" => scalar(&mut decomposition_gap)?,
                other => return Err(bad(&format!("unknown key {other}"))),
            }
        }

        let missing = |what: &str| Error::format(format!("missing key {what}"));
        version.ok_or_else(|| missing("report_version"))?;
        let report = AnalysisReport {
            purity_jepa: purity_jepa.ok_or_else(|| missing("purity_jepa"))?,
            purity_ae: purity_ae.ok_or_else(|| missing("purity_ae"))?,
            frob_rel: frob_rel.ok_or_else(|| missing("frob_rel"))?,
            skew_rel: skew_rel.ok_or_else(|| missing("skew_rel"))?,
            eigen_mags: eigen_mags.ok_or_else(|| missing("eigen_mags"))?,
            centroid_errors: centroid_errors.ok_or_else(|| missing("centroid_errors"))?,
            invariance_err: invariance_err.ok_or_else(|| missing("invariance_err"))?,
            decomposition_gap: decomposition_gap.ok_or_else(|| missing("decomposition_gap"))?,
        };
        report.validate()?;
        Ok(report)
    }
}

#[derive(Serialize, Deserialize)]
struct VersionedReport {
    version: u32,
    #[serde(flatten)]
    report: AnalysisReport,
}

/// Writes the text form to `path`.
pub fn write_text_report(report: &AnalysisReport, path: &Path) -> Result<()> {
    report.validate()?;
    fs::write(path, report.to_text())?;
    Ok(())
}

/// Reads and validates a text report, prefixing errors with the file name.
pub fn read_text_report(path: &Path) -> Result<AnalysisReport> {
    let text = fs::read_to_string(path)?;
    AnalysisReport::parse_text(&text)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

/// Writes the JSON form, `{"version": 1, ...fields}`, to `path`.
pub fn write_json_report(report: &AnalysisReport, path: &Path) -> Result<()> {
    report.validate()?;
    let versioned = VersionedReport { version: REPORT_VERSION, report: report.clone() };
    let json = serde_json::to_string_pretty(&versioned)
        .map_err(|e| Error::format(format!("cannot serialize report: {e}")))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

/// Reads the JSON form, rejecting unknown versions.
pub fn read_json_report(path: &Path) -> Result<AnalysisReport> {
    let text = fs::read_to_string(path)?;
    let versioned: VersionedReport = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    if versioned.version != REPORT_VERSION {
        return Err(Error::format(format!(
            "{}: report version {} is not the supported {REPORT_VERSION}",
            path.display(),
            versioned.version
        )));
    }
    versioned.report.validate()?;
    Ok(versioned.report)
}
