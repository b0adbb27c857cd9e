//! Statistical phase estimation from Chebyshev moments: the scaled
//! error-function Fourier model with certified truncation bounds, parameter
//! selection, approximate-CDF evaluation, importance-sampled shot noise,
//! level-crossing binary search, and energy inversion.

use std::collections::BTreeMap;

use crate::numerics::{erfc, scaled_bessel_i_upto, RngStream};
use crate::spectrum::{
    chebyshev_moment, flip_for_spe, MomentEntry, MomentTable, Spectrum, DEFAULT_FLIP_MARGIN,
};
use crate::{Error, Result};

/// Truncated Fourier model of the smooth Heaviside step
/// `H(x) = (Q_{beta,K}(sin x) + 1) / 2`. Only the constant `F_0 = 1/2` and
/// the odd harmonics `F_{2j+1}` (purely imaginary) are nonzero.
#[derive(Clone, Debug)]
pub struct HeavisideModel {
    pub sharpness: f64,
    /// Truncation order K: odd harmonics run over degrees 1, 3, ..., 2K+1.
    pub order: usize,
    pub f0: f64,
    /// Imaginary parts of `F_{2j+1}` for j = 0..=K.
    pub f_imag: Vec<f64>,
    /// Certified sup-norm truncation error (tight form).
    pub bound_new: f64,
    /// Legacy comparison bound.
    pub bound_old: f64,
    /// `sum_j |F_j|` over every nonzero frequency, negative ones included.
    pub one_norm: f64,
}

impl HeavisideModel {
    /// Odd moment degrees the model consumes.
    pub fn odd_degrees(&self) -> impl Iterator<Item = u64> + '_ {
        (0..=self.order as u64).map(|j| 2 * j + 1)
    }
}

/// Tight truncation bound
/// `sqrt(2 beta / pi) (1/K) (1 - e^-b I_0(b) - 2 sum_{j=1}^K e^-b I_j(b))`,
/// an exact evaluation of the Bessel tail through the generating-function
/// identity.
pub fn truncation_bound_new(beta_erf: f64, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Domain("truncation order K must be >= 1".into()));
    }
    let ci = scaled_bessel_i_upto(k, beta_erf)?;
    let tail = 1.0 - ci[0] - 2.0 * ci[1..].iter().sum::<f64>();
    Ok(((2.0 * beta_erf / std::f64::consts::PI).sqrt() / k as f64) * tail.max(0.0))
}

/// Legacy truncation bound
/// `sqrt(2 beta / pi) (1/K) (2 e^{-((K+1)/t)^2} + (e/t)^t e^{-beta} / 2)`
/// for a free parameter `t >= beta`; with `t` unspecified the bound is
/// minimized over a logarithmic grid of `t`.
pub fn truncation_bound_old(beta_erf: f64, k: usize, t: Option<f64>) -> Result<f64> {
    if k < 1 {
        return Err(Error::Domain("truncation order K must be >= 1".into()));
    }
    if !(beta_erf > 0.0) || !beta_erf.is_finite() {
        return Err(Error::Domain(format!(
            "sharpness must be positive and finite, got {beta_erf}"
        )));
    }
    let prefactor = (2.0 * beta_erf / std::f64::consts::PI).sqrt() / k as f64;
    let eval = |t: f64| -> f64 {
        let a = (k as f64 + 1.0) / t;
        // (e/t)^t e^{-beta} in log space to dodge overflow
        let log_second = t * (1.0 - t.ln()) - beta_erf;
        2.0 * (-a * a).exp() + 0.5 * log_second.exp()
    };
    match t {
        Some(t) => {
            if t < beta_erf {
                return Err(Error::Domain(format!(
                    "free parameter t = {t} must be >= beta = {beta_erf}"
                )));
            }
            Ok(prefactor * eval(t))
        }
        None => {
            let mut best = f64::INFINITY;
            let mut t = beta_erf.max(1.0);
            let t_max = beta_erf.max(k as f64 + 1.0) * 100.0;
            while t <= t_max {
                best = best.min(eval(t));
                t *= 1.02;
            }
            Ok(prefactor * best)
        }
    }
}

/// Build the Fourier model at sharpness `beta_erf` and truncation order `k`.
pub fn fourier_coefficients(beta_erf: f64, k: usize) -> Result<HeavisideModel> {
    if k < 1 {
        return Err(Error::Domain("truncation order K must be >= 1".into()));
    }
    let ci = scaled_bessel_i_upto(k, beta_erf)?;
    let c = (2.0 * beta_erf / std::f64::consts::PI).sqrt();
    // H(x) = 1/2 + sum_m A_{2m+1} sin((2m+1) x) with
    // A_{2m+1} = c (ci_m + ci_{m+1}) / (2m+1), the last term lacking ci_{K+1}.
    let mut f_imag = Vec::with_capacity(k + 1);
    let mut one_norm = 0.5;
    for m in 0..=k {
        let next = if m + 1 <= k { ci[m + 1] } else { 0.0 };
        let a = c * (ci[m] + next) / (2 * m + 1) as f64;
        // A sin(jx) = A (e^{ijx} - e^{-ijx}) / (2i), so F_j = -i A / 2
        f_imag.push(-0.5 * a);
        one_norm += a.abs();
    }
    Ok(HeavisideModel {
        sharpness: beta_erf,
        order: k,
        f0: 0.5,
        f_imag,
        bound_new: truncation_bound_new(beta_erf, k)?,
        bound_old: truncation_bound_old(beta_erf, k, None)?,
        one_norm,
    })
}

/// Default cap for the sharpness bisection.
pub const BETA_ERF_CAP: f64 = 1e7;
/// Default cap for the truncation-order search.
pub const ORDER_CAP: usize = 1 << 26;

/// Smallest `(beta_erf, K)` achieving CDF error `epsilon` at resolution
/// `delta` (radians), splitting the budget evenly between the
/// error-function sharpness error and the truncation error.
pub fn select_parameters(delta: f64, epsilon: f64) -> Result<(f64, usize)> {
    if !(0.0 < delta && delta < std::f64::consts::FRAC_PI_4) {
        return Err(Error::Domain(format!(
            "delta must lie in (0, pi/4), got {delta}"
        )));
    }
    if !(0.0 < epsilon && epsilon < 0.5) {
        return Err(Error::Domain(format!(
            "epsilon must lie in (0, 1/2), got {epsilon}"
        )));
    }
    let s = (delta / 2.0).sin();
    let sharp_err = |beta: f64| erfc((2.0 * beta).sqrt() * s);
    if sharp_err(BETA_ERF_CAP) > epsilon / 2.0 {
        return Err(Error::BoundedSearch(format!(
            "no sharpness below {BETA_ERF_CAP:e} reaches erf error {:e}",
            epsilon / 2.0
        )));
    }
    let mut lo = 1.0_f64;
    let mut hi = BETA_ERF_CAP;
    if sharp_err(lo) <= epsilon / 2.0 {
        hi = lo;
    }
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if sharp_err(mid) <= epsilon / 2.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let beta_erf = hi;

    let fits = |k: usize| -> Result<bool> { Ok(truncation_bound_new(beta_erf, k)? <= epsilon / 2.0) };
    let mut hi_k = 1usize;
    while !fits(hi_k)? {
        hi_k *= 2;
        if hi_k > ORDER_CAP {
            return Err(Error::BoundedSearch(format!(
                "no truncation order below {ORDER_CAP} reaches error {:e}",
                epsilon / 2.0
            )));
        }
    }
    let mut lo_k = hi_k / 2;
    while hi_k - lo_k > 1 {
        let mid = (lo_k + hi_k) / 2;
        if mid == 0 || !fits(mid)? {
            lo_k = mid;
        } else {
            hi_k = mid;
        }
    }
    Ok((beta_erf, hi_k))
}

/// Evaluate the approximate CDF of the mirrored spectral measure (both
/// `+arccos` and `-arccos` images, each at full weight) at `x`. The value
/// approaches 2 far to the right of every jump but stays in `[0, 1]` on the
/// negative half-axis where the search runs, which is what the level
/// presets reference.
pub fn acdf_value(model: &HeavisideModel, moments: &MomentTable, x: f64) -> Result<f64> {
    let mut acc = 2.0 * model.f0 * moments.value(0)?;
    for (j, &fi) in model.f_imag.iter().enumerate() {
        let degree = 2 * j as u64 + 1;
        // frequencies +-j each contribute Re(2 i fi e^{+-i j x}) per unit
        // of mirrored mass; together -4 fi sin(j x) times the moment
        acc += -4.0 * fi * (degree as f64 * x).sin() * moments.value(degree)?;
    }
    Ok(acc)
}

/// Distribute `m_total` shots over the odd degrees proportionally to
/// `|F_j|` with a one-shot floor; degree 0 is exact and gets none.
pub fn spe_allocate(model: &HeavisideModel, m_total: u64) -> Result<BTreeMap<u64, u64>> {
    let count = model.f_imag.len() as u64;
    if m_total < count + 1 {
        return Err(Error::Contract(format!(
            "m_total = {m_total} is below the sampled-degree count {count} + 1"
        )));
    }
    let total_abs: f64 = model.f_imag.iter().map(|f| f.abs()).sum();
    let mut out = BTreeMap::new();
    out.insert(0, 0);
    for (j, &fi) in model.f_imag.iter().enumerate() {
        let degree = 2 * j as u64 + 1;
        let share = if total_abs > 0.0 {
            (fi.abs() * m_total as f64 / total_abs).floor() as u64
        } else {
            m_total / count
        };
        out.insert(degree, share.max(1));
    }
    Ok(out)
}

/// Corrupt every odd-degree moment with shot noise of standard deviation
/// `sqrt((1 - v^2) / M_j)`. Unlike the Krylov pipeline, degree 1 is sampled
/// here; only degree 0 stays exact.
pub fn spe_inject_noise(
    moments: &MomentTable,
    allocation: &BTreeMap<u64, u64>,
    stream: &mut RngStream,
) -> Result<MomentTable> {
    let mut out = MomentTable::new();
    for (&degree, entry) in moments.iter() {
        if degree == 0 {
            out.insert(degree, *entry);
            continue;
        }
        let shots = allocation.get(&degree).copied().unwrap_or(0);
        if shots == 0 {
            return Err(Error::Contract(format!(
                "no shots allocated to sampled degree {degree}"
            )));
        }
        let variance = (1.0 - entry.value * entry.value).max(0.0) / shots as f64;
        let noisy = stream.next_normal(entry.value, variance.sqrt())?;
        out.insert(
            degree,
            MomentEntry {
                value: noisy,
                shots,
                is_exact: false,
            },
        );
    }
    Ok(out)
}

/// Which jump of the mirrored-measure CDF the search targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Leftmost jump (unflipped spectra; level `3 eta / 4`).
    FirstJump,
    /// Rightmost jump (flipped spectra; level `1 - 3 eta / 4`).
    LastJump,
}

/// Binary-search configuration.
#[derive(Clone, Copy, Debug)]
pub struct SearchConfig {
    /// Lower bound on the ground-state population.
    pub eta: f64,
    /// Target resolution in radians.
    pub delta: f64,
    /// Crossing level tau.
    pub level: f64,
    pub orientation: Orientation,
    /// Search interval `(x_left, x_right)`.
    pub interval: (f64, f64),
    /// Redraw the noisy moment set at every query instead of reusing one.
    pub redraw_per_query: bool,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.eta && self.eta <= 1.0) {
            return Err(Error::Contract(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Contract("delta must be positive".into()));
        }
        if !(self.interval.0 < self.interval.1) {
            return Err(Error::Contract("search interval is empty".into()));
        }
        Ok(())
    }

    /// Level preset for the given orientation.
    pub fn preset_level(eta: f64, orientation: Orientation) -> f64 {
        match orientation {
            Orientation::FirstJump => 0.75 * eta,
            Orientation::LastJump => 1.0 - 0.75 * eta,
        }
    }
}

const MAX_SEARCH_ITER: usize = 200;

/// Locate the level crossing of an increasing approximate CDF with a
/// caller-supplied query. Each endpoint update overshoots the midpoint by
/// `2 delta / 3`, which keeps the bracket valid as long as every query is
/// answered within the certified `(delta, epsilon)` window; the final
/// midpoint is then within `delta` of the true crossing.
pub fn binary_search_with(
    mut query: impl FnMut(f64) -> Result<f64>,
    cfg: &SearchConfig,
) -> Result<f64> {
    cfg.validate()?;
    let (mut xl, mut xr) = cfg.interval;
    let mut iters = 0;
    while xr - xl > 2.0 * cfg.delta {
        iters += 1;
        if iters > MAX_SEARCH_ITER {
            return Err(Error::BoundedSearch(
                "binary search exceeded 200 iterations (inconsistent query answers)".into(),
            ));
        }
        let xm = 0.5 * (xl + xr);
        if query(xm)? > cfg.level {
            xr = xm + (2.0 / 3.0) * cfg.delta;
        } else {
            xl = xm - (2.0 / 3.0) * cfg.delta;
        }
    }
    Ok(0.5 * (xl + xr))
}

/// [`binary_search_with`] over a fixed noisy moment table.
pub fn binary_search(
    model: &HeavisideModel,
    noisy_moments: &MomentTable,
    cfg: &SearchConfig,
) -> Result<f64> {
    binary_search_with(|x| acdf_value(model, noisy_moments, x), cfg)
}

/// Range condition for the arccos inversion: every value in
/// `[sin(delta/2), 1]`.
pub fn certify_spe_range(s: &Spectrum, delta: f64) -> bool {
    let min = s.values().first().copied().unwrap_or(f64::NAN);
    let max = s.values().last().copied().unwrap_or(f64::NAN);
    min >= (delta / 2.0).sin() && max <= 1.0
}

/// Convert a located crossing back to a physical energy. Under the flipped
/// convention `E = shift + scale (1/2 - cos|x_star|)`; otherwise
/// `E = shift + scale cos(x_star)`. Also returns the error-amplification
/// factor `|sin x_star|`.
pub fn invert_energy(x_star: f64, shift: f64, scale: f64, flipped: bool) -> (f64, f64) {
    let e = if flipped {
        shift + scale * (0.5 - x_star.abs().cos())
    } else {
        shift + scale * x_star.cos()
    };
    (e, x_star.sin().abs())
}

/// Everything a run needs, computed once so repeated seeded runs stay cheap.
#[derive(Clone, Debug)]
pub struct SpePlan {
    pub model: HeavisideModel,
    pub flipped: Spectrum,
    pub search: SearchConfig,
    pub exact_moments: MomentTable,
    pub allocation: BTreeMap<u64, u64>,
    pub m_total: u64,
    pub eta: f64,
    pub epsilon: f64,
    pub delta_target: f64,
}

/// Result of one seeded run.
#[derive(Clone, Debug)]
pub struct SpeRun {
    pub x_star: f64,
    pub e0_phys: f64,
    pub amplification_factor: f64,
    /// Achieved |E - E_true| <= delta_target.
    pub success: bool,
}

/// Prepare a run: flip the spectrum if necessary, convert the Hartree
/// target to an arccos-space resolution with the worst-case unit
/// derivative, select `(beta_erf, K)`, size the budget
/// `M = ceil(2 F^2 / eta^2) * ceil(ln(1/(1 - p_success)))`, and allocate
/// shots.
pub fn spe_prepare(s: &Spectrum, delta_target_hartree: f64, p_success: f64) -> Result<SpePlan> {
    if !(delta_target_hartree > 0.0) {
        return Err(Error::Contract("target resolution must be positive".into()));
    }
    if !(0.0 < p_success && p_success < 1.0) {
        return Err(Error::Contract(format!(
            "success probability must lie in (0, 1), got {p_success}"
        )));
    }
    let flipped = if s.flipped() {
        s.clone()
    } else {
        flip_for_spe(s, DEFAULT_FLIP_MARGIN)?
    };
    let delta = delta_target_hartree / flipped.scale();
    if !certify_spe_range(&flipped, delta) {
        return Err(Error::Contract(format!(
            "spectrum violates the inversion range condition: values must lie in [sin(delta/2), 1] = [{:e}, 1]",
            (delta / 2.0).sin()
        )));
    }
    let eta = flipped.ground_weight() / 2.0;
    let epsilon = eta / 8.0;
    let (beta_erf, k) = select_parameters(delta, epsilon)?;
    let model = fourier_coefficients(beta_erf, k)?;
    let m_base = (2.0 * model.one_norm * model.one_norm / (eta * eta)).ceil() as u64;
    let log_factor = (1.0 / (1.0 - p_success)).ln().ceil().max(1.0) as u64;
    let m_total = (m_base * log_factor).max(model.f_imag.len() as u64 + 1);
    let allocation = spe_allocate(&model, m_total)?;

    let mut exact = MomentTable::new();
    exact.insert(
        0,
        MomentEntry {
            value: 1.0,
            shots: 0,
            is_exact: true,
        },
    );
    for degree in model.odd_degrees() {
        exact.insert(
            degree,
            MomentEntry {
                value: chebyshev_moment(&flipped, degree),
                shots: 0,
                is_exact: true,
            },
        );
    }
    let search = SearchConfig {
        eta,
        delta,
        level: SearchConfig::preset_level(eta, Orientation::LastJump),
        orientation: Orientation::LastJump,
        interval: (-(std::f64::consts::PI - delta) / 2.0, 0.0),
        redraw_per_query: false,
    };
    Ok(SpePlan {
        model,
        flipped,
        search,
        exact_moments: exact,
        allocation,
        m_total,
        eta,
        epsilon,
        delta_target: delta_target_hartree,
    })
}

/// Execute one seeded run of a prepared plan: draw a noisy moment set,
/// binary-search the crossing, invert the energy.
pub fn spe_run_seeded(plan: &SpePlan, seed: u64) -> Result<SpeRun> {
    let mut stream = RngStream::new(seed, 0);
    let x_star = if plan.search.redraw_per_query {
        binary_search_with(
            |x| {
                let noisy = spe_inject_noise(&plan.exact_moments, &plan.allocation, &mut stream)?;
                acdf_value(&plan.model, &noisy, x)
            },
            &plan.search,
        )?
    } else {
        let noisy = spe_inject_noise(&plan.exact_moments, &plan.allocation, &mut stream)?;
        binary_search(&plan.model, &noisy, &plan.search)?
    };
    let (e0_phys, amplification_factor) =
        invert_energy(x_star, plan.flipped.shift(), plan.flipped.scale(), true);
    let success = (e0_phys - plan.flipped.ground_energy()).abs() <= plan.delta_target;
    Ok(SpeRun {
        x_star,
        e0_phys,
        amplification_factor,
        success,
    })
}

/// Convenience wrapper: prepare and run once.
pub fn spe_run(
    s: &Spectrum,
    delta_target_hartree: f64,
    p_success: f64,
    seed: u64,
) -> Result<(SpePlan, SpeRun)> {
    let plan = spe_prepare(s, delta_target_hartree, p_success)?;
    let run = spe_run_seeded(&plan, seed)?;
    Ok((plan, run))
}

/// Exact mirrored-measure CDF `sum_r p_r (step(x - g_r) + step(x + g_r))`
/// with `g_r = arccos(value_r)`; the sandwich reference for the ACDF.
pub fn exact_mirrored_cdf(s: &Spectrum, x: f64) -> f64 {
    s.values()
        .iter()
        .zip(s.weights())
        .map(|(&v, &w)| {
            let g = v.clamp(-1.0, 1.0).acos();
            let mut c = 0.0;
            if x >= g {
                c += w;
            }
            if x >= -g {
                c += w;
            }
            c
        })
        .sum()
}
