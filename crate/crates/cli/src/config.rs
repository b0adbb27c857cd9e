//! Experiment configuration: one JSON document per run, validated up front
//! so every violation is reported at once.

use serde::{Deserialize, Serialize};

use eft_spectra_core::qksd::Regularization;
use eft_spectra_core::spectrum::{synth_exponential, load_spectrum, Spectrum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    QksdSweep,
    QksdBudget,
    SpeRun,
    SpeBoundCurve,
    OverlapAnalysis,
    Norms,
    Compare,
    AcdfCurve,
}

pub const MODE_NAMES: &str = "qksd-sweep, qksd-budget, spe-run, spe-bound-curve, \
overlap-analysis, norms, compare, acdf-curve";

impl Mode {
    /// Modes that draw random numbers and therefore require a seed.
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            Mode::QksdSweep | Mode::QksdBudget | Mode::SpeRun | Mode::Compare
        )
    }
}

/// Inline synthetic-spectrum description: dominant state plus an
/// exponentially decaying tail over the remaining values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisBlock {
    /// Physical eigenenergies in Hartree; (E - shift) / scale must land in
    /// [-1, 1]. The lowest entry is the ground state carrying weight p0.
    pub values: Vec<f64>,
    pub p0: f64,
    pub alpha: f64,
    pub shift: f64,
    pub scale: f64,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub spectrum_path: Option<String>,
    #[serde(default)]
    pub synthesis: Option<SynthesisBlock>,
    #[serde(default)]
    pub k_list: Vec<u64>,
    #[serde(default)]
    pub dk_list: Vec<u64>,
    /// "threshold", "threshold=1e-10", "top=2", ...
    #[serde(default)]
    pub policy: Option<String>,
    /// Hartree.
    #[serde(default)]
    pub target_err: Option<f64>,
    #[serde(default)]
    pub n_trials: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub p_success: Option<f64>,
    /// Total shots for fixed-budget sweeps; omit for a noiseless sweep.
    #[serde(default)]
    pub m_total: Option<u64>,
    /// Heaviside sharpness values for the bound-curve mode.
    #[serde(default)]
    pub beta_list: Vec<f64>,
    #[serde(default)]
    pub integrals_path: Option<String>,
    #[serde(default)]
    pub thc_path: Option<String>,
    /// Subset of {pauli, df, thc}; empty means every applicable one.
    #[serde(default)]
    pub representations: Vec<String>,
    /// Double-factorization rank; defaults to 5n.
    #[serde(default)]
    pub df_rank: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

pub fn parse_policy(text: &str) -> Result<Regularization, String> {
    if text == "threshold" {
        return Ok(Regularization::Threshold(
            eft_spectra_core::qksd::DEFAULT_THRESHOLD,
        ));
    }
    if let Some(v) = text.strip_prefix("threshold=") {
        let t: f64 = v
            .parse()
            .map_err(|_| format!("bad threshold value {v:?}"))?;
        if !(t > 0.0) {
            return Err(format!("threshold must be positive, got {t}"));
        }
        return Ok(Regularization::Threshold(t));
    }
    if let Some(v) = text.strip_prefix("top=") {
        let m: usize = v.parse().map_err(|_| format!("bad top count {v:?}"))?;
        if m == 0 {
            return Err("top count must be >= 1".into());
        }
        return Ok(Regularization::TopM(m));
    }
    Err(format!(
        "unknown policy {text:?} (expected \"threshold\", \"threshold=<t>\", or \"top=<m>\")"
    ))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    /// All schema violations, empty when the config is runnable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let needs_spectrum = matches!(
            self.mode,
            Mode::QksdSweep
                | Mode::QksdBudget
                | Mode::SpeRun
                | Mode::OverlapAnalysis
                | Mode::Compare
                | Mode::AcdfCurve
        );
        if needs_spectrum && self.spectrum_path.is_none() && self.synthesis.is_none() {
            v.push("spectrum_path or synthesis block required for this mode".into());
        }
        if self.spectrum_path.is_some() && self.synthesis.is_some() {
            v.push("spectrum_path and synthesis are mutually exclusive".into());
        }
        if self.mode.is_stochastic() && self.seed.is_none() {
            v.push(format!(
                "seed is mandatory for stochastic mode {}",
                serde_json::to_string(&self.mode).unwrap().trim_matches('"')
            ));
        }
        if let Some(p) = &self.policy {
            if let Err(e) = parse_policy(p) {
                v.push(e);
            }
        }
        if let Some(e) = self.target_err {
            if !(e > 0.0) || !e.is_finite() {
                v.push(format!("target_err must be positive and finite, got {e}"));
            }
        }
        if let Some(p) = self.p_success {
            if !(0.0 < p && p < 1.0) {
                v.push(format!("p_success must lie in (0, 1), got {p}"));
            }
        }
        match self.mode {
            Mode::QksdSweep | Mode::QksdBudget => {
                if self.k_list.is_empty() {
                    v.push("k_list must be non-empty".into());
                }
                if self.mode == Mode::QksdBudget && self.target_err.is_none() {
                    v.push("target_err required for qksd-budget".into());
                }
                if self.n_trials.unwrap_or(0) == 0 && self.mode == Mode::QksdBudget {
                    v.push("n_trials must be >= 1 for qksd-budget".into());
                }
            }
            Mode::SpeRun => {
                if self.target_err.is_none() {
                    v.push("target_err (Hartree resolution) required for spe-run".into());
                }
            }
            Mode::SpeBoundCurve => {
                if self.beta_list.is_empty() {
                    v.push("beta_list must be non-empty for spe-bound-curve".into());
                }
                if self.k_list.is_empty() {
                    v.push("k_list must be non-empty for spe-bound-curve".into());
                }
            }
            Mode::OverlapAnalysis => {
                if self.k_list.is_empty() {
                    v.push("k_list must be non-empty".into());
                }
            }
            Mode::Norms => {
                if self.integrals_path.is_none() {
                    v.push("integrals_path required for norms".into());
                }
                for r in &self.representations {
                    if !matches!(r.as_str(), "pauli" | "df" | "thc") {
                        v.push(format!(
                            "unknown representation {r:?} (expected pauli, df, or thc)"
                        ));
                    }
                }
                if self.representations.iter().any(|r| r == "thc") && self.thc_path.is_none() {
                    v.push("thc_path required when the thc representation is requested".into());
                }
            }
            Mode::Compare => {
                if self.k_list.is_empty() {
                    v.push("k_list must be non-empty for compare".into());
                }
                if self.n_trials.unwrap_or(0) == 0 {
                    v.push("n_trials must be >= 1 for compare".into());
                }
            }
            Mode::AcdfCurve => {
                if self.target_err.is_none() {
                    v.push("target_err (Hartree resolution) required for acdf-curve".into());
                }
            }
        }
        v
    }

    pub fn spectrum(&self) -> eft_spectra_core::Result<Spectrum> {
        if let Some(path) = &self.spectrum_path {
            return load_spectrum(path);
        }
        let b = self.synthesis.as_ref().expect("validated");
        synth_exponential(&b.values, b.p0, b.alpha, b.shift, b.scale)
    }
}
