//! Spectral emulation model: normalized spectra with initial-state weights,
//! the exact Chebyshev moment oracle, synthetic spectrum construction, the
//! shift-and-flip transform used by the phase-estimation pipeline, and text
//! file I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::numerics::chebyshev_t;
use crate::{Error, Result};

/// A normalized spectrum standing in for the quantum device.
///
/// Each entry pairs a dimensionless eigenvalue `values[r]` in `[-1, 1]` with
/// the initial-state population `weights[r]`. Physical energies are recovered
/// through the affine metadata: `E_r = shift + scale * values[r]` for an
/// ordinary spectrum. A spectrum produced by [`flip_for_spe`] instead uses
/// `E_r = shift + scale * (1/2 - values[r])`, with `scale` already holding
/// the enlarged flip rescale factor; `flipped` records which convention
/// applies.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
    weights: Vec<f64>,
    shift: f64,
    scale: f64,
    flipped: bool,
    label: String,
}

impl Spectrum {
    /// Build a spectrum from raw pairs, sorting ascending, merging entries
    /// whose values coincide to 1e-14, and renormalizing weights if their
    /// sum lies within `[0.99, 1.01]`.
    pub fn new(
        pairs: impl IntoIterator<Item = (f64, f64)>,
        shift: f64,
        scale: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        Self::build(pairs, shift, scale, false, label.into())
    }

    fn build(
        pairs: impl IntoIterator<Item = (f64, f64)>,
        shift: f64,
        scale: f64,
        flipped: bool,
        label: String,
    ) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !shift.is_finite() {
            return Err(Error::Validation(format!(
                "spectrum requires finite shift and positive scale (shift = {shift}, scale = {scale})"
            )));
        }
        let mut pairs: Vec<(f64, f64)> = pairs.into_iter().collect();
        if pairs.is_empty() {
            return Err(Error::Validation("spectrum has no entries".into()));
        }
        for &(v, w) in &pairs {
            if !v.is_finite() || !w.is_finite() {
                return Err(Error::Validation(
                    "spectrum entries must be finite".into(),
                ));
            }
            if v.abs() > 1.0 {
                return Err(Error::Validation(format!(
                    "normalized eigenvalue {v} lies outside [-1, 1]"
                )));
            }
            if w < 0.0 {
                return Err(Error::Validation(format!("negative weight {w}")));
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // Merge degenerate eigenvalues; they are indistinguishable to any
        // function of the spectrum.
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (v, w) in pairs {
            match values.last() {
                Some(&prev) if (v - prev).abs() <= 1e-14 => {
                    *weights.last_mut().unwrap() += w;
                }
                _ => {
                    values.push(v);
                    weights.push(w);
                }
            }
        }
        let sum: f64 = weights.iter().sum();
        if !(0.99..=1.01).contains(&sum) {
            return Err(Error::Validation(format!(
                "weights sum to {sum}, outside the accepted band [0.99, 1.01]"
            )));
        }
        if (sum - 1.0).abs() > 1e-12 {
            for w in weights.iter_mut() {
                *w /= sum;
            }
        }
        Ok(Self {
            values,
            weights,
            shift,
            scale,
            flipped,
            label,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn flipped(&self) -> bool {
        self.flipped
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Physical energy of entry `r` under the stored transform convention.
    pub fn energy(&self, r: usize) -> f64 {
        if self.flipped {
            self.shift + self.scale * (0.5 - self.values[r])
        } else {
            self.shift + self.scale * self.values[r]
        }
    }

    /// Index of the ground state: the lowest physical energy. For an
    /// ordinary spectrum that is the smallest value; after the flip the
    /// ground state sits at the largest value.
    pub fn ground_index(&self) -> usize {
        if self.flipped {
            self.values.len() - 1
        } else {
            0
        }
    }

    /// Physical ground-state energy.
    pub fn ground_energy(&self) -> f64 {
        self.energy(self.ground_index())
    }

    /// Ground-state population `p_0`.
    pub fn ground_weight(&self) -> f64 {
        self.weights[self.ground_index()]
    }
}

/// One entry of a [`MomentTable`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentEntry {
    pub value: f64,
    pub shots: u64,
    pub is_exact: bool,
}

/// Map from Chebyshev degree `k` to `<T_k(H)>`, exact or shot-noisy.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentTable {
    entries: BTreeMap<u64, MomentEntry>,
}

impl MomentTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, degree: u64, entry: MomentEntry) {
        self.entries.insert(degree, entry);
    }

    pub fn get(&self, degree: u64) -> Option<&MomentEntry> {
        self.entries.get(&degree)
    }

    /// Moment value for `degree`, or a contract error naming the degree.
    pub fn value(&self, degree: u64) -> Result<f64> {
        self.entries
            .get(&degree)
            .map(|e| e.value)
            .ok_or_else(|| Error::Contract(format!("moment table is missing degree {degree}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u64, &MomentEntry)> {
        self.entries.iter()
    }

    pub fn degrees(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_degree(&self) -> Option<u64> {
        self.entries.keys().next_back().copied()
    }

    /// CSV rendering with columns `degree,value,shots,is_exact`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("degree,value,shots,is_exact\n");
        for (k, e) in &self.entries {
            let _ = writeln!(out, "{},{:.17e},{},{}", k, e.value, e.shots, e.is_exact);
        }
        out
    }

    /// Parse the CSV produced by [`MomentTable::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut table = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("degree")) {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            if parts.len() != 4 {
                return Err(err("expected 4 comma-separated fields"));
            }
            let degree: u64 = parts[0].trim().parse().map_err(|_| err("bad degree"))?;
            let value: f64 = parts[1].trim().parse().map_err(|_| err("bad value"))?;
            let shots: u64 = parts[2].trim().parse().map_err(|_| err("bad shot count"))?;
            let is_exact: bool = parts[3].trim().parse().map_err(|_| err("bad flag"))?;
            table.insert(
                degree,
                MomentEntry {
                    value,
                    shots,
                    is_exact,
                },
            );
        }
        Ok(table)
    }
}

/// Load a spectrum from the plain-text format:
/// header lines `# shift_hartree=<f>`, `# scale_hartree=<f>`,
/// `# normalized=<true|false>`, then `<value>,<weight>` rows. With
/// `normalized=false` the value column carries physical energies in Hartree
/// that are mapped through `(E - shift)/scale`.
pub fn load_spectrum(path: impl AsRef<Path>) -> Result<Spectrum> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_spectrum(&text, &path.as_ref().display().to_string())
}

pub fn parse_spectrum(text: &str, label: &str) -> Result<Spectrum> {
    let mut shift: Option<f64> = None;
    let mut scale: Option<f64> = None;
    let mut normalized: Option<bool> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            line: lineno,
            msg,
        };
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some((key, val)) = rest.split_once('=') {
                let val = val.trim();
                match key.trim() {
                    "shift_hartree" => {
                        shift = Some(val.parse().map_err(|_| {
                            err(format!("cannot parse shift_hartree value '{val}'"))
                        })?)
                    }
                    "scale_hartree" => {
                        scale = Some(val.parse().map_err(|_| {
                            err(format!("cannot parse scale_hartree value '{val}'"))
                        })?)
                    }
                    "normalized" => {
                        normalized = Some(val.parse().map_err(|_| {
                            err(format!("normalized must be true or false, got '{val}'"))
                        })?)
                    }
                    _ => {} // free-form comment
                }
            }
            continue;
        }
        let (v_str, w_str) = line
            .split_once(',')
            .ok_or_else(|| err("expected '<value>,<weight>'".into()))?;
        let v: f64 = v_str
            .trim()
            .parse()
            .map_err(|_| err(format!("cannot parse value '{}'", v_str.trim())))?;
        let w: f64 = w_str
            .trim()
            .parse()
            .map_err(|_| err(format!("cannot parse weight '{}'", w_str.trim())))?;
        pairs.push((v, w));
    }

    let shift = shift.ok_or_else(|| Error::Validation("missing '# shift_hartree=' header".into()))?;
    let scale = scale.ok_or_else(|| Error::Validation("missing '# scale_hartree=' header".into()))?;
    let normalized = normalized.unwrap_or(true);
    if !(scale > 0.0) {
        return Err(Error::Validation(format!("scale must be positive, got {scale}")));
    }
    if !normalized {
        for (v, _) in pairs.iter_mut() {
            *v = (*v - shift) / scale;
        }
    }
    Spectrum::new(pairs, shift, scale, label)
}

/// Render a spectrum in the same text format `load_spectrum` reads.
pub fn spectrum_to_string(s: &Spectrum) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}", s.label());
    let _ = writeln!(out, "# shift_hartree={:.17e}", s.shift());
    let _ = writeln!(out, "# scale_hartree={:.17e}", s.scale());
    let _ = writeln!(out, "# normalized=true");
    for (v, w) in s.values().iter().zip(s.weights()) {
        let _ = writeln!(out, "{:.17e},{:.17e}", v, w);
    }
    out
}

/// Synthetic spectrum: ground state carries `p0`, the remaining population
/// is spread over the excited states as `p_r = (1 - p0) e^{-alpha r} /
/// sum_{k=1}^{R-1} e^{-alpha k}`.
pub fn synth_exponential(
    energies: &[f64],
    p0: f64,
    alpha: f64,
    shift: f64,
    scale: f64,
) -> Result<Spectrum> {
    if energies.len() < 2 {
        return Err(Error::Validation(
            "synthetic spectrum needs at least 2 energies".into(),
        ));
    }
    if !(0.0 < p0 && p0 < 1.0) {
        return Err(Error::Domain(format!("p0 must lie in (0, 1), got {p0}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let mut e = energies.to_vec();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let r_count = e.len();
    let denom: f64 = (1..r_count).map(|k| (-alpha * k as f64).exp()).sum();
    let mut pairs = Vec::with_capacity(r_count);
    for (r, &energy) in e.iter().enumerate() {
        let v = (energy - shift) / scale;
        if v.abs() > 1.0 {
            return Err(Error::Validation(format!(
                "energy {energy} maps to normalized value {v} outside [-1, 1]; increase the scale"
            )));
        }
        let w = if r == 0 {
            p0
        } else {
            (1.0 - p0) * (-alpha * r as f64).exp() / denom
        };
        pairs.push((v, w));
    }
    Spectrum::new(pairs, shift, scale, "synthetic-exponential")
}

/// Shift-and-flip transform preparing a spectrum for the phase-estimation
/// pipeline: values are compressed into `(-1/2, 1/2)` by the rescale factor
/// `2(1 + margin)` and mapped `v -> 1/2 - v`, so every output value is
/// positive and the ground state lands nearest 1. The returned spectrum
/// stores `scale * 2 * (1 + margin)` as its scale and sets the flipped flag,
/// keeping the physical energy map exact.
pub fn flip_for_spe(s: &Spectrum, margin: f64) -> Result<Spectrum> {
    if s.flipped() {
        return Err(Error::Contract("spectrum is already flipped".into()));
    }
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(Error::Domain(format!(
            "flip margin must be a non-negative real, got {margin}"
        )));
    }
    let factor = 2.0 * (1.0 + margin);
    let pairs: Vec<(f64, f64)> = s
        .values()
        .iter()
        .zip(s.weights())
        .map(|(&v, &w)| (0.5 - v / factor, w))
        .collect();
    Spectrum::build(
        pairs,
        s.shift(),
        s.scale() * factor,
        true,
        format!("{} (flipped)", s.label()),
    )
}

/// Default flip margin: keeps every value strictly inside (0, 1) without
/// materially changing the required polynomial degree.
pub const DEFAULT_FLIP_MARGIN: f64 = 1e-3;

/// Exact Chebyshev moment `<T_k(H)> = sum_r p_r T_k(lambda_r)`.
pub fn chebyshev_moment(s: &Spectrum, k: u64) -> f64 {
    s.values()
        .iter()
        .zip(s.weights())
        .map(|(&v, &w)| w * chebyshev_t(k, v).expect("spectrum values certified in [-1,1]"))
        .sum()
}

/// Exact moments for the requested degrees. Degrees 0 and 1 are flagged
/// exact unconditionally; they are never sampled downstream.
pub fn moment_table(s: &Spectrum, degrees: &BTreeSet<u64>) -> MomentTable {
    let mut table = MomentTable::new();
    for &k in degrees {
        table.insert(
            k,
            MomentEntry {
                value: chebyshev_moment(s, k),
                shots: 0,
                is_exact: true,
            },
        );
    }
    table
}

/// Textbook phase-estimation error envelope `pi / (K sqrt(M p0))`, used as
/// a comparison column only.
pub fn qpe_backenvelope(k: u64, m: u64, p0: f64) -> Result<f64> {
    if k < 1 || m < 1 {
        return Err(Error::Domain("qpe envelope requires K, M >= 1".into()));
    }
    if !(0.0 < p0 && p0 <= 1.0) {
        return Err(Error::Domain(format!("p0 must lie in (0, 1], got {p0}")));
    }
    Ok(std::f64::consts::PI / (k as f64 * (m as f64 * p0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> Spectrum {
        Spectrum::new([(0.5, 0.7), (-0.5, 0.3)], 0.0, 1.0, "two-point").unwrap()
    }

    #[test]
    fn new_sorts_and_merges() {
        let s = two_point();
        assert_eq!(s.values(), &[-0.5, 0.5]);
        assert_eq!(s.weights(), &[0.3, 0.7]);

        let merged = Spectrum::new([(0.2, 0.4), (0.2, 0.6)], 0.0, 1.0, "m").unwrap();
        assert_eq!(merged.len(), 1);
        assert!((merged.weights()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn new_renormalizes_in_band_only() {
        let s = Spectrum::new([(0.0, 0.5), (0.5, 0.499)], 0.0, 1.0, "r").unwrap();
        assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(Spectrum::new([(0.0, 0.5), (0.5, 0.4)], 0.0, 1.0, "bad").is_err());
        assert!(Spectrum::new([(1.2, 1.0)], 0.0, 1.0, "oob").is_err());
    }

    #[test]
    fn parse_roundtrip_and_errors() {
        let text = "# demo\n# shift_hartree=-2.5\n# scale_hartree=3.0\n# normalized=true\n0.5,0.7\n-0.5,0.3\n";
        let s = parse_spectrum(text, "demo").unwrap();
        assert_eq!(s.values(), &[-0.5, 0.5]);
        assert_eq!(s.shift(), -2.5);
        assert_eq!(s.scale(), 3.0);
        let back = parse_spectrum(&spectrum_to_string(&s), "demo").unwrap();
        assert_eq!(back.values(), s.values());

        // physical-energy rows
        let phys = "# shift_hartree=1.0\n# scale_hartree=2.0\n# normalized=false\n2.0,0.6\n0.0,0.4\n";
        let s = parse_spectrum(phys, "p").unwrap();
        assert_eq!(s.values(), &[-0.5, 0.5]);

        let bad = "# shift_hartree=0\n# scale_hartree=1\nnot-a-row\n";
        match parse_spectrum(bad, "b") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_spectrum("0.1,1.0\n", "no-header").is_err());
    }

    #[test]
    fn load_spectrum_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        std::fs::write(&path, "# shift_hartree=0\n# scale_hartree=1\n0.3,1.0\n").unwrap();
        let s = load_spectrum(&path).unwrap();
        assert_eq!(s.values(), &[0.3]);
    }

    #[test]
    fn synth_exponential_examples() {
        let s = synth_exponential(&[-1.0, 1.0], 0.5, 3.0, 0.0, 2.0).unwrap();
        assert_eq!(s.weights(), &[0.5, 0.5]);

        let s = synth_exponential(&[-1.0, 0.0, 1.0], 0.5, 1e-9, 0.0, 2.0).unwrap();
        assert!((s.weights()[1] - 0.25).abs() < 1e-9);
        assert!((s.weights()[2] - 0.25).abs() < 1e-9);

        // direct formula at R = 40
        let energies: Vec<f64> = (0..40).map(|i| -0.9 + 0.04 * i as f64).collect();
        let (p0, alpha) = (0.1, 0.001);
        let s = synth_exponential(&energies, p0, alpha, 0.0, 1.0).unwrap();
        let denom: f64 = (1..40).map(|k| (-alpha * k as f64).exp()).sum();
        for r in 1..40 {
            let want = (1.0 - p0) * (-alpha * r as f64).exp() / denom;
            assert!((s.weights()[r] - want).abs() < 1e-14);
        }
        assert!((s.weights()[0] - p0).abs() < 1e-15);

        assert!(synth_exponential(&[-5.0, 5.0], 0.5, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn flip_examples_and_roundtrip() {
        let s = two_point();
        let f = flip_for_spe(&s, 0.0).unwrap();
        assert_eq!(f.values(), &[0.25, 0.75]);
        assert!(f.flipped());
        // ground state (energy -0.5) maps to the largest value
        assert_eq!(f.ground_index(), 1);
        assert!((f.ground_energy() - s.ground_energy()).abs() < 1e-12);
        assert!((f.ground_weight() - 0.3).abs() < 1e-15);

        // boundary: value -0.5 at scale 0.5 flips to exactly 1
        let edge = Spectrum::new([(-1.0, 1.0)], 0.0, 0.5, "e").unwrap();
        let fe = flip_for_spe(&edge, 0.0).unwrap();
        assert_eq!(fe.values(), &[1.0]);

        // full physical round trip with nonzero shift/scale and margin
        let s = Spectrum::new([(-0.8, 0.4), (0.1, 0.35), (0.9, 0.25)], -3.0, 2.5, "rt").unwrap();
        let f = flip_for_spe(&s, DEFAULT_FLIP_MARGIN).unwrap();
        let mut orig: Vec<f64> = (0..s.len()).map(|r| s.energy(r)).collect();
        let mut flip: Vec<f64> = (0..f.len()).map(|r| f.energy(r)).collect();
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        flip.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in orig.iter().zip(&flip) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(flip_for_spe(&f, 0.0).is_err());
    }

    #[test]
    fn moment_trivial_cases() {
        let one = Spectrum::new([(1.0, 1.0)], 0.0, 1.0, "1").unwrap();
        for k in [0u64, 1, 5, 100] {
            assert!((chebyshev_moment(&one, k) - 1.0).abs() < 1e-12);
        }
        let zero = Spectrum::new([(0.0, 1.0)], 0.0, 1.0, "0").unwrap();
        assert!(chebyshev_moment(&zero, 1).abs() < 1e-15);
        assert!((chebyshev_moment(&zero, 2) + 1.0).abs() < 1e-15);

        let pm = Spectrum::new([(0.5, 0.5), (-0.5, 0.5)], 0.0, 1.0, "pm").unwrap();
        assert!(chebyshev_moment(&pm, 1).abs() < 1e-15);
        assert!((chebyshev_moment(&pm, 2) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn moment_permutation_invariance() {
        let a = Spectrum::new([(0.1, 0.2), (-0.3, 0.5), (0.7, 0.3)], 0.0, 1.0, "a").unwrap();
        let b = Spectrum::new([(0.7, 0.3), (0.1, 0.2), (-0.3, 0.5)], 0.0, 1.0, "b").unwrap();
        for k in 0..40 {
            assert_eq!(chebyshev_moment(&a, k), chebyshev_moment(&b, k));
        }
    }

    #[test]
    fn moment_table_matches_direct_calls() {
        let s = two_point();
        let degrees: BTreeSet<u64> = (0..=21).collect();
        let t = moment_table(&s, &degrees);
        assert_eq!(t.len(), 22);
        for k in 0..=21u64 {
            let e = t.get(k).unwrap();
            assert_eq!(e.value, chebyshev_moment(&s, k));
            assert!(e.is_exact);
        }
        assert!((t.value(0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(t.value(99), Err(Error::Contract(_))));
    }

    #[test]
    fn moment_csv_roundtrip() {
        let s = two_point();
        let degrees: BTreeSet<u64> = [0u64, 1, 4, 7].into_iter().collect();
        let t = moment_table(&s, &degrees);
        let csv = t.to_csv();
        assert!(csv.starts_with("degree,value,shots,is_exact\n"));
        let back = MomentTable::from_csv(&csv).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn qpe_envelope_arithmetic() {
        let v = qpe_backenvelope(1000, 100, 1.0).unwrap();
        assert!((v - std::f64::consts::PI * 1e-4).abs() < 1e-12);
        let half = qpe_backenvelope(500, 100, 1.0).unwrap();
        assert!((half - 2.0 * v).abs() < 1e-12);
        assert!((qpe_backenvelope(10, 1, 1.0).unwrap() - std::f64::consts::PI / 10.0).abs() < 1e-15);
        assert!(qpe_backenvelope(0, 1, 1.0).is_err());
        assert!(qpe_backenvelope(1, 1, 0.0).is_err());
    }
}
