//! Krylov diagonalization from Chebyshev moments: Toeplitz/Hankel matrix
//! assembly, regularized generalized eigensolve, moment-sensitivity
//! gradients, shot allocation and noise injection, Monte-Carlo error
//! statistics, shot-budget search, and the subsampling diagnostics.

use std::collections::{BTreeMap, BTreeSet};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::numerics::{chebyshev_t, sym_eig, RngStream, SquareMatrix};
use crate::spectrum::{moment_table, MomentEntry, MomentTable, Spectrum};
use crate::{Error, Result};

/// How the ill-conditioned overlap matrix is regularized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularization {
    /// Keep every overlap eigenvalue above the threshold.
    Threshold(f64),
    /// Keep only the `m` largest overlap eigenvalues.
    TopM(usize),
}

impl std::fmt::Display for Regularization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regularization::Threshold(t) => write!(f, "threshold={t:e}"),
            Regularization::TopM(m) => write!(f, "top{m}"),
        }
    }
}

/// Default overlap-eigenvalue threshold.
pub const DEFAULT_THRESHOLD: f64 = 1e-8;

/// Subspace geometry: matrix dimension `k_dim` and degree step `dk`.
#[derive(Clone, Copy, Debug)]
pub struct KrylovConfig {
    pub k_dim: usize,
    pub dk: u64,
}

impl KrylovConfig {
    pub fn new(k_dim: usize, dk: u64) -> Result<Self> {
        if k_dim < 1 || dk < 1 {
            return Err(Error::Contract(format!(
                "krylov config requires k_dim >= 1 and dk >= 1 (got {k_dim}, {dk})"
            )));
        }
        Ok(Self { k_dim, dk })
    }

    /// Dimension for a maximal polynomial degree `k_max` at step `dk`:
    /// rows use degrees `0, dk, 2 dk, ...` up to `k_max`.
    pub fn from_max_degree(k_max: u64, dk: u64) -> Result<Self> {
        Self::new((k_max / dk.max(1)) as usize + 1, dk)
    }

    /// Largest moment degree the matrices consume.
    pub fn max_degree(&self) -> u64 {
        2 * (self.k_dim as u64 - 1) * self.dk + 1
    }
}

/// Solution of the regularized projected eigenproblem.
#[derive(Clone, Debug)]
pub struct KrylovSolution {
    pub h_mat: SquareMatrix,
    pub s_mat: SquareMatrix,
    /// Retained overlap eigenvalues, descending.
    pub kept_eigs: Vec<f64>,
    /// Ritz values ascending, dimensionless.
    pub ritz_values: Vec<f64>,
    pub e0_norm: f64,
    pub e0_phys: f64,
}

/// Every moment degree the `(k_dim, dk)` matrices reference.
pub fn required_degrees(cfg: &KrylovConfig) -> BTreeSet<u64> {
    let mut set = BTreeSet::new();
    let dk = cfg.dk as i64;
    let kd = cfg.k_dim as i64;
    for k in 0..kd {
        for j in 0..kd {
            let sum = (k + j) * dk;
            let diff = (k - j) * dk;
            set.insert(sum as u64);
            set.insert(diff.unsigned_abs());
            set.insert((sum + 1) as u64);
            set.insert((sum - 1).unsigned_abs());
            set.insert((diff + 1).unsigned_abs());
            set.insert((diff - 1).unsigned_abs());
        }
    }
    set
}

/// Exact moments for everything `cfg` needs.
pub fn exact_moments(s: &Spectrum, cfg: &KrylovConfig) -> MomentTable {
    moment_table(s, &required_degrees(cfg))
}

/// Assemble the projected overlap and Hamiltonian matrices:
/// `S_kj = (T_{(k+j)dk} + T_{|k-j|dk}) / 2` and
/// `H_kj = (T_{|(k+j)dk+1|} + T_{|(k+j)dk-1|} + T_{|(k-j)dk+1|} + T_{|(k-j)dk-1|}) / 4`.
pub fn build_matrices(
    moments: &MomentTable,
    cfg: &KrylovConfig,
) -> Result<(SquareMatrix, SquareMatrix)> {
    let n = cfg.k_dim;
    let dk = cfg.dk as i64;
    let mut h = SquareMatrix::zeros(n);
    let mut s = SquareMatrix::zeros(n);
    for k in 0..n {
        for j in 0..n {
            let sum = (k + j) as i64 * dk;
            let diff = (k as i64 - j as i64) * dk;
            let sv = 0.5 * (moments.value(sum as u64)? + moments.value(diff.unsigned_abs())?);
            let hv = 0.25
                * (moments.value((sum + 1).unsigned_abs())?
                    + moments.value((sum - 1).unsigned_abs())?
                    + moments.value((diff + 1).unsigned_abs())?
                    + moments.value((diff - 1).unsigned_abs())?);
            s.set(k, j, sv);
            h.set(k, j, hv);
        }
    }
    Ok((h, s))
}

fn whitened_solve(
    h_mat: &SquareMatrix,
    s_mat: &SquareMatrix,
    keep: usize,
    s_eig: &crate::numerics::SymEigResult,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = s_mat.n();
    let kept_eigs: Vec<f64> = s_eig.eigenvalues[..keep].to_vec();
    // H_eff = D^{-1/2} V^T H V D^{-1/2} over the kept columns
    let mut heff = SquareMatrix::zeros(keep);
    for a in 0..keep {
        for b in 0..keep {
            let mut acc = 0.0;
            for i in 0..n {
                let via = s_eig.eigenvectors.get(i, a);
                for j in 0..n {
                    acc += via * h_mat.get(i, j) * s_eig.eigenvectors.get(j, b);
                }
            }
            heff.set(a, b, acc / (kept_eigs[a].sqrt() * kept_eigs[b].sqrt()));
        }
    }
    // enforce exact symmetry lost to rounding before the inner solve
    let heff = SquareMatrix::from_fn(keep, |a, b| 0.5 * (heff.get(a, b) + heff.get(b, a)));
    let mut ritz = sym_eig(&heff)?.eigenvalues;
    ritz.reverse();
    Ok((kept_eigs, ritz))
}

fn kept_count(policy: Regularization, eigs: &[f64]) -> Result<usize> {
    match policy {
        Regularization::Threshold(tau) => {
            if tau < 0.0 {
                return Err(Error::Contract("threshold must be >= 0".into()));
            }
            let keep = eigs.iter().take_while(|&&e| e > tau).count();
            if keep == 0 {
                return Err(Error::Numerical(format!(
                    "no overlap eigenvalue above threshold {tau:e} (largest is {:e})",
                    eigs.first().copied().unwrap_or(f64::NAN)
                )));
            }
            Ok(keep)
        }
        Regularization::TopM(m) => {
            if m == 0 || m > eigs.len() {
                return Err(Error::Contract(format!(
                    "top_m = {m} incompatible with matrix dimension {}",
                    eigs.len()
                )));
            }
            if eigs[m - 1] <= 0.0 {
                return Err(Error::Numerical(format!(
                    "top_m = {m} would retain a non-positive overlap eigenvalue ({:e})",
                    eigs[m - 1]
                )));
            }
            Ok(m)
        }
    }
}

/// Regularized generalized eigensolve by whitening: eigendecompose the
/// overlap matrix, keep directions per `policy`, project and solve.
/// `meta = (shift, scale)` converts the smallest Ritz value to Hartree.
pub fn solve_regularized(
    h_mat: &SquareMatrix,
    s_mat: &SquareMatrix,
    policy: Regularization,
    meta: (f64, f64),
) -> Result<KrylovSolution> {
    if h_mat.n() != s_mat.n() {
        return Err(Error::Contract(
            "overlap and Hamiltonian matrices differ in dimension".into(),
        ));
    }
    let s_eig = sym_eig(s_mat)?;
    let keep = kept_count(policy, &s_eig.eigenvalues)?;
    let (kept_eigs, ritz_values) = whitened_solve(h_mat, s_mat, keep, &s_eig)?;
    let e0_norm = ritz_values[0];
    Ok(KrylovSolution {
        h_mat: h_mat.clone(),
        s_mat: s_mat.clone(),
        kept_eigs,
        ritz_values,
        e0_norm,
        e0_phys: meta.0 + meta.1 * e0_norm,
    })
}

/// One component of the moment-sensitivity gradient.
#[derive(Clone, Copy, Debug)]
pub struct GradientEntry {
    pub degree: u64,
    /// dE0/d<T_k> in Hartree per unit moment.
    pub value: f64,
    /// Set when the retained-subspace count changed within the finite
    /// difference step at this degree.
    pub unstable: bool,
}

/// Default finite-difference step on a moment value.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Central finite-difference gradient of the physical ground energy with
/// respect to each moment entering the matrices. The retained-subspace
/// count is frozen at the base-point value during the perturbed solves.
pub fn energy_gradient(
    moments: &MomentTable,
    cfg: &KrylovConfig,
    policy: Regularization,
    meta: (f64, f64),
    step: f64,
) -> Result<Vec<GradientEntry>> {
    if !(step > 0.0) {
        return Err(Error::Contract("finite-difference step must be > 0".into()));
    }
    let (_, s0) = build_matrices(moments, cfg)?;
    let base_eig = sym_eig(&s0)?;
    let keep = kept_count(policy, &base_eig.eigenvalues)?;

    let solve_frozen = |table: &MomentTable| -> Result<f64> {
        let (h, s) = build_matrices(table, cfg)?;
        let s_eig = sym_eig(&s)?;
        let (_, ritz) = whitened_solve(&h, &s, keep, &s_eig)?;
        Ok(ritz[0])
    };
    let policy_keep = |table: &MomentTable| -> Option<usize> {
        let (_, s) = build_matrices(table, cfg).ok()?;
        let eig = sym_eig(&s).ok()?;
        kept_count(policy, &eig.eigenvalues).ok()
    };

    let mut out = Vec::new();
    for degree in required_degrees(cfg) {
        let base = moments.value(degree)?;
        let mut plus = moments.clone();
        let mut minus = moments.clone();
        let entry = *moments.get(degree).unwrap();
        plus.insert(degree, MomentEntry { value: base + step, ..entry });
        minus.insert(degree, MomentEntry { value: base - step, ..entry });
        let ep = solve_frozen(&plus)?;
        let em = solve_frozen(&minus)?;
        let unstable = policy_keep(&plus) != Some(keep) || policy_keep(&minus) != Some(keep);
        out.push(GradientEntry {
            degree,
            value: meta.1 * (ep - em) / (2.0 * step),
            unstable,
        });
    }
    Ok(out)
}

/// Distribute `m_total` shots across measured degrees proportionally to the
/// absolute gradient, with a one-shot floor. Degrees 0 and 1 are exact and
/// receive zero shots.
pub fn allocate_shots(
    gradient: &[GradientEntry],
    m_total: u64,
) -> Result<BTreeMap<u64, u64>> {
    let sampled: Vec<&GradientEntry> = gradient.iter().filter(|e| e.degree > 1).collect();
    if m_total < sampled.len() as u64 {
        return Err(Error::Contract(format!(
            "m_total = {m_total} is below the measured-degree count {}",
            sampled.len()
        )));
    }
    let total_abs: f64 = sampled.iter().map(|e| e.value.abs()).sum();
    let mut out = BTreeMap::new();
    for e in gradient {
        if e.degree <= 1 {
            out.insert(e.degree, 0);
            continue;
        }
        let share = if total_abs > 0.0 {
            (e.value.abs() * m_total as f64 / total_abs).floor() as u64
        } else {
            m_total / sampled.len() as u64
        };
        out.insert(e.degree, share.max(1));
    }
    Ok(out)
}

/// Corrupt each non-exact moment with Gaussian noise of standard deviation
/// `sqrt((1 - v^2) / M_k)`.
pub fn inject_noise(
    moments: &MomentTable,
    allocation: &BTreeMap<u64, u64>,
    stream: &mut RngStream,
) -> Result<MomentTable> {
    let mut out = MomentTable::new();
    for (&degree, entry) in moments.iter() {
        if degree <= 1 {
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

/// Monte-Carlo statistics of the noisy pipeline.
#[derive(Clone, Debug)]
pub struct TrialStats {
    /// Noiseless regularized energy, Hartree (the budget-search reference).
    pub noiseless_e0: f64,
    /// True ground energy of the spectrum, Hartree.
    pub true_e0: f64,
    /// Mean |E_trial - noiseless_e0| over successful trials.
    pub mean_abs_err: f64,
    /// sqrt(mean (E_trial - true_e0)^2) over successful trials.
    pub rmse: f64,
    pub energies: Vec<f64>,
    pub failed_trials: usize,
}

fn single_trial(
    exact: &MomentTable,
    allocation: &BTreeMap<u64, u64>,
    cfg: &KrylovConfig,
    policy: Regularization,
    meta: (f64, f64),
    seed: u64,
    trial: u64,
) -> Result<f64> {
    let mut stream = RngStream::new(seed, trial);
    let noisy = inject_noise(exact, allocation, &mut stream)?;
    let (h, s) = build_matrices(&noisy, cfg)?;
    Ok(solve_regularized(&h, &s, policy, meta)?.e0_phys)
}

/// Run `n_trials` independent noisy solves at total budget `m_total`.
/// Shots are allocated from the noiseless gradient; each trial derives its
/// random stream from `(seed, trial_index)`, so results do not depend on
/// scheduling.
pub fn run_trials(
    s: &Spectrum,
    cfg: &KrylovConfig,
    policy: Regularization,
    m_total: u64,
    n_trials: usize,
    seed: u64,
) -> Result<TrialStats> {
    let exact = exact_moments(s, cfg);
    let meta = (s.shift(), s.scale());
    let (h0, s0) = build_matrices(&exact, cfg)?;
    let noiseless = solve_regularized(&h0, &s0, policy, meta)?;
    let gradient = energy_gradient(&exact, cfg, policy, meta, DEFAULT_FD_STEP)?;
    let allocation = allocate_shots(&gradient, m_total)?;

    let results: Vec<Result<f64>> = {
        #[cfg(feature = "parallel")]
        {
            (0..n_trials as u64)
                .into_par_iter()
                .map(|t| single_trial(&exact, &allocation, cfg, policy, meta, seed, t))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n_trials as u64)
                .map(|t| single_trial(&exact, &allocation, cfg, policy, meta, seed, t))
                .collect()
        }
    };
    collect_stats(results, noiseless.e0_phys, s.ground_energy())
}

/// Sequential twin of [`run_trials`], available regardless of the
/// `parallel` feature; produces identical numbers.
pub fn run_trials_sequential(
    s: &Spectrum,
    cfg: &KrylovConfig,
    policy: Regularization,
    m_total: u64,
    n_trials: usize,
    seed: u64,
) -> Result<TrialStats> {
    let exact = exact_moments(s, cfg);
    let meta = (s.shift(), s.scale());
    let (h0, s0) = build_matrices(&exact, cfg)?;
    let noiseless = solve_regularized(&h0, &s0, policy, meta)?;
    let gradient = energy_gradient(&exact, cfg, policy, meta, DEFAULT_FD_STEP)?;
    let allocation = allocate_shots(&gradient, m_total)?;
    let results: Vec<Result<f64>> = (0..n_trials as u64)
        .map(|t| single_trial(&exact, &allocation, cfg, policy, meta, seed, t))
        .collect();
    collect_stats(results, noiseless.e0_phys, s.ground_energy())
}

fn collect_stats(
    results: Vec<Result<f64>>,
    noiseless_e0: f64,
    true_e0: f64,
) -> Result<TrialStats> {
    let mut energies = Vec::with_capacity(results.len());
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok(e) => energies.push(e),
            Err(Error::Numerical(_)) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if energies.is_empty() {
        return Err(Error::Numerical("every trial failed to solve".into()));
    }
    let n = energies.len() as f64;
    let mean_abs_err = energies.iter().map(|e| (e - noiseless_e0).abs()).sum::<f64>() / n;
    let rmse = (energies.iter().map(|e| (e - true_e0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(TrialStats {
        noiseless_e0,
        true_e0,
        mean_abs_err,
        rmse,
        energies,
        failed_trials: failed,
    })
}

/// Default cap on the shot-budget search.
pub const DEFAULT_BUDGET_CAP: u64 = 1_000_000_000_000;

/// Smallest total budget whose mean error against the noiseless reference
/// stays below `target_err`. The search starts at `1/(s_min eps)^2`,
/// brackets by decades, then refines with factor `10^(1/4)` steps.
pub fn find_shot_budget(
    s: &Spectrum,
    cfg: &KrylovConfig,
    policy: Regularization,
    target_err: f64,
    n_trials: usize,
    seed: u64,
) -> Result<u64> {
    if !(target_err > 0.0) {
        return Err(Error::Contract("target error must be positive".into()));
    }
    let exact = exact_moments(s, cfg);
    let meta = (s.shift(), s.scale());
    let (h0, s0) = build_matrices(&exact, cfg)?;
    let noiseless = solve_regularized(&h0, &s0, policy, meta)?;
    let s_min = *noiseless.kept_eigs.last().unwrap();
    let sampled_count = required_degrees(cfg).iter().filter(|&&d| d > 1).count() as u64;
    let m_min = sampled_count.max(1);

    let succeeds = |m: u64| -> Result<bool> {
        let stats = run_trials(s, cfg, policy, m, n_trials, seed)?;
        Ok(stats.mean_abs_err <= target_err && stats.failed_trials == 0)
    };

    let eps_norm = target_err / s.scale();
    let guess = (1.0 / (s_min * eps_norm)).powi(2);
    let mut m = if guess.is_finite() && guess >= 1.0 {
        (guess as u64).clamp(m_min, DEFAULT_BUDGET_CAP)
    } else {
        m_min
    };

    // decade bracketing
    let mut last_fail: Option<u64> = None;
    let mut last_success: Option<u64> = None;
    loop {
        if succeeds(m)? {
            last_success = Some(m);
            if m == m_min || last_fail.is_some() {
                break;
            }
            m = (m / 10).max(m_min);
        } else {
            last_fail = Some(m);
            if last_success.is_some() {
                break;
            }
            if m >= DEFAULT_BUDGET_CAP {
                return Err(Error::BoundedSearch(format!(
                    "target {target_err:e} Hartree unreachable below the budget cap {DEFAULT_BUDGET_CAP}"
                )));
            }
            m = (m.saturating_mul(10)).min(DEFAULT_BUDGET_CAP);
        }
    }
    let hi = last_success.unwrap();
    let lo = match last_fail {
        Some(lo) if lo < hi => lo,
        _ => return Ok(hi), // succeeded at the minimal feasible budget
    };

    // refine the bracket with quarter-decade steps
    let mut best = hi;
    let factor = 10f64.powf(0.25);
    let mut candidate = lo as f64;
    for _ in 0..3 {
        candidate *= factor;
        let mc = (candidate.round() as u64).clamp(m_min, DEFAULT_BUDGET_CAP);
        if mc >= best {
            break;
        }
        if succeeds(mc)? {
            best = mc;
            break;
        }
    }
    Ok(best)
}

/// Top overlap eigenvalues at one `(k_max, dk)` grid point.
#[derive(Clone, Copy, Debug)]
pub struct OverlapRecord {
    pub k_max: u64,
    pub dk: u64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

/// Overlap-eigenvalue survey plus growth slopes.
#[derive(Clone, Debug)]
pub struct OverlapAnalysis {
    pub records: Vec<OverlapRecord>,
    /// Per dk: least-squares slopes of (s1, s2, s3) against k_max, fitted
    /// over the largest half of the k grid.
    pub slopes: BTreeMap<u64, [f64; 3]>,
}

/// Three largest eigenvalues of the overlap matrix for every `(k_max, dk)`
/// pair. The nonzero spectrum of the Gram matrix is computed from the
/// R x R cross-correlation matrix `C_rs = sqrt(p_r p_s) v_r . v_s`, which
/// keeps large `k_max` cheap for few-state spectra.
pub fn overlap_analysis(
    s: &Spectrum,
    k_list: &[u64],
    dk_list: &[u64],
) -> Result<OverlapAnalysis> {
    if k_list.is_empty() || dk_list.is_empty() {
        return Err(Error::Contract("k_list and dk_list must be non-empty".into()));
    }
    let r_count = s.len();
    let mut records = Vec::new();
    for &dk in dk_list {
        if dk < 1 {
            return Err(Error::Contract("dk must be >= 1".into()));
        }
        for &k_max in k_list {
            let k_dim = (k_max / dk) as usize + 1;
            // v_r[k] = T_{k dk}(lambda_r)
            let v: Vec<Vec<f64>> = (0..r_count)
                .map(|r| {
                    (0..k_dim)
                        .map(|k| chebyshev_t(k as u64 * dk, s.values()[r]).unwrap())
                        .collect()
                })
                .collect();
            let c = SquareMatrix::from_fn(r_count, |a, b| {
                let dot: f64 = v[a].iter().zip(&v[b]).map(|(x, y)| x * y).sum();
                (s.weights()[a] * s.weights()[b]).sqrt() * dot
            });
            let eigs = sym_eig(&c)?.eigenvalues;
            let top = |i: usize| eigs.get(i).copied().unwrap_or(0.0).max(0.0);
            records.push(OverlapRecord {
                k_max,
                dk,
                s1: top(0),
                s2: top(1),
                s3: top(2),
            });
        }
    }

    let mut slopes = BTreeMap::new();
    let mut ks: Vec<u64> = k_list.to_vec();
    ks.sort_unstable();
    let half = &ks[ks.len() / 2..];
    for &dk in dk_list {
        let mut fit = [0.0f64; 3];
        for (i, slot) in fit.iter_mut().enumerate() {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| r.dk == dk && half.contains(&r.k_max))
                .map(|r| (r.k_max as f64, [r.s1, r.s2, r.s3][i]))
                .collect();
            *slot = least_squares_slope(&pts);
        }
        slopes.insert(dk, fit);
    }
    Ok(OverlapAnalysis { records, slopes })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return 0.0;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    num / den
}

/// Degree step that keeps the spectral window of interest resolvable:
/// `scale * sqrt(1 - lambda0^2)`.
pub fn optimal_dk(scale: f64, lambda0_norm: f64) -> Result<f64> {
    if lambda0_norm.abs() > 1.0 {
        return Err(Error::Domain(format!(
            "normalized target energy must lie in [-1, 1], got {lambda0_norm}"
        )));
    }
    Ok(scale * (1.0 - lambda0_norm * lambda0_norm).sqrt())
}

/// Closed-form estimate and bound for the cross-term energy window
/// integral between degrees `k` and `k + dk` over the angular window
/// `[theta_b, theta_a]`:
/// `value = scale sin(theta*) cos(dk (ta+tb)/2) sin(dk (ta-tb)/2) / dk`,
/// `bound = scale sin(theta*) / dk` with `theta*` the window midpoint.
pub fn window_overlap(
    _k: u64,
    dk: u64,
    theta_a: f64,
    theta_b: f64,
    scale: f64,
) -> Result<(f64, f64)> {
    if dk < 1 {
        return Err(Error::Contract("dk must be >= 1".into()));
    }
    if !(0.0 <= theta_b && theta_b < theta_a && theta_a <= std::f64::consts::PI) {
        return Err(Error::Domain(format!(
            "need 0 <= theta_b < theta_a <= pi (got {theta_b}, {theta_a})"
        )));
    }
    let mid = 0.5 * (theta_a + theta_b);
    let dkf = dk as f64;
    let value =
        scale * mid.sin() * (dkf * mid).cos() * (dkf * 0.5 * (theta_a - theta_b)).sin() / dkf;
    let bound = scale * mid.sin() / dkf;
    Ok((value, bound))
}

/// CSV header for sweep exports.
pub const RESULTS_CSV_HEADER: &str =
    "K,dk,policy,m_total,mean_abs_err,rmse,s1,s2,s3,failed_trials";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::chebyshev_moment;
    use crate::spectrum::Spectrum;

    fn two_point() -> Spectrum {
        Spectrum::new([(-0.5, 0.3), (0.5, 0.7)], 0.0, 1.0, "two-point").unwrap()
    }

    fn random_spectrum(r: usize, seed: u64) -> Spectrum {
        let mut rng = RngStream::new(seed, 0);
        let mut pairs = Vec::new();
        let mut wsum = 0.0;
        let mut raw = Vec::new();
        for _ in 0..r {
            let v = (rng.next_uniform() * 1.9 - 0.95).clamp(-0.95, 0.95);
            let w = rng.next_uniform() + 0.05;
            wsum += w;
            raw.push((v, w));
        }
        for (v, w) in raw {
            pairs.push((v, w / wsum));
        }
        Spectrum::new(pairs, 0.0, 1.0, "random").unwrap()
    }

    #[test]
    fn required_degrees_enumeration() {
        // K'=3, dk=2: degrees {m dk} for m = 0..=4 plus |m dk +- 1|
        let cfg = KrylovConfig::new(3, 2).unwrap();
        let got = required_degrees(&cfg);
        let mut want = BTreeSet::new();
        for m in 0..=4u64 {
            want.insert(m * 2);
            want.insert(m * 2 + 1);
            want.insert((m as i64 * 2 - 1).unsigned_abs());
        }
        assert_eq!(got, want);
    }

    #[test]
    fn build_matrices_trivial_and_diagonal() {
        let s = two_point();
        let cfg = KrylovConfig::new(1, 1).unwrap();
        let t = exact_moments(&s, &cfg);
        let (h, sm) = build_matrices(&t, &cfg).unwrap();
        assert!((sm.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((h.get(0, 0) - chebyshev_moment(&s, 1)).abs() < 1e-15);

        let cfg = KrylovConfig::new(5, 3).unwrap();
        let t = exact_moments(&s, &cfg);
        let (_, sm) = build_matrices(&t, &cfg).unwrap();
        for k in 0..5 {
            let want = 0.5 * (chebyshev_moment(&s, 2 * k as u64 * 3) + 1.0);
            assert!((sm.get(k, k) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn build_matrices_match_gram_oracle() {
        for seed in 0..6u64 {
            let s = random_spectrum(3 + (seed as usize % 10), 500 + seed);
            for dk in [1u64, 3] {
                let cfg = KrylovConfig::new(8, dk).unwrap();
                let t = exact_moments(&s, &cfg);
                let (h, sm) = build_matrices(&t, &cfg).unwrap();
                for k in 0..8usize {
                    for j in 0..8usize {
                        let mut sw = 0.0;
                        let mut hw = 0.0;
                        for (&v, &w) in s.values().iter().zip(s.weights()) {
                            let tk = chebyshev_t(k as u64 * dk, v).unwrap();
                            let tj = chebyshev_t(j as u64 * dk, v).unwrap();
                            sw += w * tk * tj;
                            hw += w * v * tk * tj;
                        }
                        assert!((sm.get(k, j) - sw).abs() < 1e-12, "S mismatch");
                        assert!((h.get(k, j) - hw).abs() < 1e-12, "H mismatch");
                    }
                }
            }
        }
    }

    #[test]
    fn build_matrices_missing_degree() {
        let cfg = KrylovConfig::new(3, 1).unwrap();
        let mut t = exact_moments(&two_point(), &cfg);
        let table = {
            let mut m = MomentTable::new();
            for (&d, &e) in t.iter() {
                if d != 4 {
                    m.insert(d, e);
                }
            }
            m
        };
        t = table;
        match build_matrices(&t, &cfg) {
            Err(Error::Contract(msg)) => assert!(msg.contains('4')),
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn solve_one_point_and_two_point() {
        let one = Spectrum::new([(0.3, 1.0)], 0.0, 1.0, "1").unwrap();
        let cfg = KrylovConfig::new(4, 1).unwrap();
        let t = exact_moments(&one, &cfg);
        let (h, sm) = build_matrices(&t, &cfg).unwrap();
        let sol =
            solve_regularized(&h, &sm, Regularization::Threshold(DEFAULT_THRESHOLD), (0.0, 1.0))
                .unwrap();
        assert_eq!(sol.kept_eigs.len(), 1);
        assert!((sol.e0_norm - 0.3).abs() < 1e-9);

        let s = two_point();
        let cfg = KrylovConfig::new(2, 1).unwrap();
        let t = exact_moments(&s, &cfg);
        let (h, sm) = build_matrices(&t, &cfg).unwrap();
        let sol =
            solve_regularized(&h, &sm, Regularization::Threshold(DEFAULT_THRESHOLD), (0.0, 1.0))
                .unwrap();
        assert!((sol.ritz_values[0] + 0.5).abs() < 1e-10);
        assert!((sol.ritz_values[1] - 0.5).abs() < 1e-10);

        let top1 = solve_regularized(&h, &sm, Regularization::TopM(1), (0.0, 1.0)).unwrap();
        assert_eq!(top1.ritz_values.len(), 1);
        assert!(top1.e0_norm >= -0.5 - 1e-12);
        // 1-D projection oracle: Rayleigh quotient of the dominant overlap
        // eigenvector
        let s_eig = sym_eig(&sm).unwrap();
        let v0: Vec<f64> = (0..2).map(|i| s_eig.eigenvectors.get(i, 0)).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                num += v0[i] * h.get(i, j) * v0[j];
                den += v0[i] * sm.get(i, j) * v0[j];
            }
        }
        assert!((top1.e0_norm - num / den).abs() < 1e-12);
    }

    #[test]
    fn exact_recovery_and_ritz_containment() {
        for seed in 0..5u64 {
            let r = 3 + (seed as usize % 6);
            let s = random_spectrum(r, 900 + seed);
            let cfg = KrylovConfig::new(r, 1).unwrap();
            let t = exact_moments(&s, &cfg);
            let (h, sm) = build_matrices(&t, &cfg).unwrap();
            let sol =
                solve_regularized(&h, &sm, Regularization::Threshold(1e-8), (0.0, 1.0)).unwrap();
            let lo = s.values()[0];
            let hi = *s.values().last().unwrap();
            for rv in &sol.ritz_values {
                assert!(*rv >= lo - 1e-9 && *rv <= hi + 1e-9, "ritz {rv} escapes");
            }
            if sol.ritz_values.len() == s.len() {
                for (rv, v) in sol.ritz_values.iter().zip(s.values()) {
                    assert!((rv - v).abs() < 1e-9, "{rv} vs {v}");
                }
            }
        }
    }

    #[test]
    fn solve_error_paths() {
        let s = two_point();
        let cfg = KrylovConfig::new(2, 1).unwrap();
        let t = exact_moments(&s, &cfg);
        let (h, sm) = build_matrices(&t, &cfg).unwrap();
        assert!(matches!(
            solve_regularized(&h, &sm, Regularization::Threshold(10.0), (0.0, 1.0)),
            Err(Error::Numerical(_))
        ));
        assert!(matches!(
            solve_regularized(&h, &sm, Regularization::TopM(5), (0.0, 1.0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gradient_identity_and_step_consistency() {
        // one-point spectrum at K'=1: e0_norm = <T_1> exactly, so the
        // physical gradient at degree 1 equals the scale
        let one = Spectrum::new([(0.4, 1.0)], 1.0, 2.5, "1").unwrap();
        let cfg = KrylovConfig::new(1, 1).unwrap();
        let t = exact_moments(&one, &cfg);
        let g = energy_gradient(&t, &cfg, Regularization::Threshold(1e-8), (1.0, 2.5), 1e-6)
            .unwrap();
        let g1 = g.iter().find(|e| e.degree == 1).unwrap();
        assert!((g1.value - 2.5).abs() < 1e-6);

        // step-halving consistency on the two-point instance
        let s = two_point();
        let cfg = KrylovConfig::new(3, 1).unwrap();
        let t = exact_moments(&s, &cfg);
        let meta = (s.shift(), s.scale());
        let ga = energy_gradient(&t, &cfg, Regularization::Threshold(1e-8), meta, 1e-5).unwrap();
        let gb = energy_gradient(&t, &cfg, Regularization::Threshold(1e-8), meta, 1e-6).unwrap();
        for (a, b) in ga.iter().zip(&gb) {
            if a.unstable || b.unstable || a.value.abs() < 1e-8 {
                continue;
            }
            assert!(
                ((a.value - b.value) / b.value).abs() < 1e-3,
                "degree {}: {} vs {}",
                a.degree,
                a.value,
                b.value
            );
        }
    }

    #[test]
    fn allocation_rules() {
        let g = vec![
            GradientEntry { degree: 0, value: 9.0, unstable: false },
            GradientEntry { degree: 1, value: 9.0, unstable: false },
            GradientEntry { degree: 2, value: 4.0, unstable: false },
            GradientEntry { degree: 3, value: -1.0, unstable: false },
        ];
        let a = allocate_shots(&g, 10).unwrap();
        assert_eq!(a[&0], 0);
        assert_eq!(a[&1], 0);
        assert_eq!(a[&2], 8);
        assert_eq!(a[&3], 2);

        let g = vec![
            GradientEntry { degree: 2, value: 1.0, unstable: false },
            GradientEntry { degree: 5, value: 0.0, unstable: false },
        ];
        let a = allocate_shots(&g, 100).unwrap();
        assert_eq!(a[&5], 1);
        assert_eq!(a[&2], 100);

        // uniform split
        let g: Vec<GradientEntry> = (2..7)
            .map(|d| GradientEntry { degree: d, value: 3.0, unstable: false })
            .collect();
        let a = allocate_shots(&g, 101).unwrap();
        for d in 2..7u64 {
            assert_eq!(a[&d], 20);
        }
        assert!(allocate_shots(&g, 3).is_err());
    }

    #[test]
    fn noise_determinism_and_edge_cases() {
        let s = two_point();
        let cfg = KrylovConfig::new(3, 1).unwrap();
        let t = exact_moments(&s, &cfg);
        let alloc: BTreeMap<u64, u64> = required_degrees(&cfg)
            .into_iter()
            .map(|d| (d, if d <= 1 { 0 } else { 100 }))
            .collect();
        let mut s1 = RngStream::new(7, 0);
        let mut s2 = RngStream::new(7, 0);
        let n1 = inject_noise(&t, &alloc, &mut s1).unwrap();
        let n2 = inject_noise(&t, &alloc, &mut s2).unwrap();
        assert_eq!(n1, n2);
        assert_eq!(n1.get(0).unwrap().value, 1.0);
        assert!(n1.get(0).unwrap().is_exact);
        assert!(!n1.get(3).unwrap().is_exact);

        // moment at +-1 has zero variance
        let one = Spectrum::new([(1.0, 1.0)], 0.0, 1.0, "edge").unwrap();
        let te = exact_moments(&one, &cfg);
        let mut st = RngStream::new(1, 0);
        let ne = inject_noise(&te, &alloc, &mut st).unwrap();
        for (&d, e) in ne.iter() {
            assert_eq!(e.value, 1.0, "degree {d}");
        }

        // missing allocation on a sampled degree
        let empty = BTreeMap::new();
        let mut st = RngStream::new(1, 0);
        assert!(matches!(
            inject_noise(&t, &empty, &mut st),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn noise_unbiased() {
        let s = two_point();
        let cfg = KrylovConfig::new(2, 1).unwrap();
        let t = exact_moments(&s, &cfg);
        let alloc: BTreeMap<u64, u64> = required_degrees(&cfg)
            .into_iter()
            .map(|d| (d, if d <= 1 { 0 } else { 50 }))
            .collect();
        let exact3 = t.get(3).unwrap().value;
        let sigma = ((1.0 - exact3 * exact3) / 50.0).sqrt();
        let n = 10_000;
        let mut sum = 0.0;
        for trial in 0..n {
            let mut st = RngStream::new(42, trial);
            sum += inject_noise(&t, &alloc, &mut st).unwrap().get(3).unwrap().value;
        }
        let mean = sum / n as f64;
        assert!(
            (mean - exact3).abs() < 4.0 * sigma / (n as f64).sqrt(),
            "mean {mean} vs exact {exact3}"
        );
    }

    #[test]
    fn trials_reproducible_and_parallel_matches_sequential() {
        let s = two_point();
        let cfg = KrylovConfig::new(3, 1).unwrap();
        let pol = Regularization::Threshold(1e-8);
        let a = run_trials(&s, &cfg, pol, 5000, 20, 11).unwrap();
        let b = run_trials(&s, &cfg, pol, 5000, 20, 11).unwrap();
        assert_eq!(a.energies, b.energies);
        let c = run_trials_sequential(&s, &cfg, pol, 5000, 20, 11).unwrap();
        assert_eq!(a.energies, c.energies);
        assert_eq!(a.failed_trials, 0);
    }

    #[test]
    fn trial_error_scales_inverse_sqrt_m() {
        let s = two_point();
        let cfg = KrylovConfig::new(3, 1).unwrap();
        // top-m regularization: with a rank-2 spectrum, noise would push the
        // third overlap eigenvalue just above a fixed threshold and the
        // whitened solve would amplify it without bound
        let pol = Regularization::TopM(2);
        let mut pts = Vec::new();
        for m in [3_000u64, 9_487, 30_000, 94_868, 300_000] {
            let stats = run_trials(&s, &cfg, pol, m, 200, 5).unwrap();
            pts.push(((m as f64).ln(), stats.mean_abs_err.ln()));
        }
        let slope = least_squares_slope(&pts);
        assert!(
            (slope + 0.5).abs() < 0.1,
            "log-log slope {slope}, expected -0.5"
        );
    }

    #[test]
    fn budget_search_basics() {
        let s = two_point();
        let cfg = KrylovConfig::new(3, 1).unwrap();
        let pol = Regularization::TopM(2);
        // infinite target: minimal feasible budget (one shot per degree)
        let m = find_shot_budget(&s, &cfg, pol, f64::INFINITY, 10, 3).unwrap();
        let sampled = required_degrees(&cfg).iter().filter(|&&d| d > 1).count() as u64;
        assert_eq!(m, sampled);

        // halving the target roughly quadruples the budget
        let m1 = find_shot_budget(&s, &cfg, pol, 2e-3, 60, 3).unwrap();
        let m2 = find_shot_budget(&s, &cfg, pol, 1e-3, 60, 3).unwrap();
        let ratio = m2 as f64 / m1 as f64;
        assert!(
            (2.0..=6.0).contains(&ratio),
            "budget ratio {ratio} (m1 = {m1}, m2 = {m2})"
        );
    }

    #[test]
    fn overlap_analysis_growth_and_ordering() {
        // K'=1 sanity
        let s = two_point();
        let a = overlap_analysis(&s, &[0], &[1]).unwrap();
        assert!((a.records[0].s1 - 1.0).abs() < 1e-12);

        let three = Spectrum::new(
            [(-0.8, 0.5), (0.0, 0.3), (0.75, 0.2)],
            0.0,
            1.0,
            "three",
        )
        .unwrap();
        let ks: Vec<u64> = (1..=20).map(|i| i * 20).collect();
        let a = overlap_analysis(&three, &ks, &[1, 10, 20]).unwrap();
        let slopes = &a.slopes[&1];
        for (got, want) in slopes.iter().zip([0.25, 0.15, 0.10]) {
            assert!(
                ((got - want) / want).abs() < 0.1,
                "slope {got} vs {want}"
            );
        }
        // interlacing across dk at every K
        for &k in &ks {
            let rec = |dk: u64| a.records.iter().find(|r| r.dk == dk && r.k_max == k).unwrap();
            let (r1, r10, r20) = (rec(1), rec(10), rec(20));
            for i in 0..3 {
                let v = |r: &OverlapRecord| [r.s1, r.s2, r.s3][i];
                assert!(v(r1) >= v(r10) - 1e-9, "K={k} s{}", i + 1);
                assert!(v(r10) >= v(r20) - 1e-9, "K={k} s{}", i + 1);
            }
        }
        // s1 non-decreasing in K at fixed dk
        let mut prev = 0.0;
        for &k in &ks {
            let r = a.records.iter().find(|r| r.dk == 1 && r.k_max == k).unwrap();
            assert!(r.s1 >= prev - 1e-9);
            prev = r.s1;
        }
    }

    #[test]
    fn optimal_dk_values() {
        assert!((optimal_dk(100.0, 0.0).unwrap() - 100.0).abs() < 1e-12);
        assert!(optimal_dk(5.0, 1.0).unwrap().abs() < 1e-12);
        assert!(optimal_dk(5.0, -1.0).unwrap().abs() < 1e-12);
        let v = optimal_dk(63.355, 0.14404).unwrap();
        let want = 63.355 * (1.0 - 0.14404f64 * 0.14404).sqrt();
        assert!((v - want).abs() < 1e-10);
        assert!((v - 62.69).abs() < 0.02, "got {v}");
        assert!(optimal_dk(1.0, 1.5).is_err());
    }

    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 0 { n } else { n + 1 };
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn window_overlap_zeros_and_quadrature() {
        let scale = 2.0;
        // sine zero: dk (ta - tb) / 2 = pi
        let dk = 8u64;
        let mid = 1.2;
        let half = std::f64::consts::PI / dk as f64;
        let (v, _) = window_overlap(100, dk, mid + half, mid - half, scale).unwrap();
        assert!(v.abs() < 1e-10, "sine zero violated: {v}");
        // cosine zero: dk (ta + tb) / 2 = pi / 2
        let mid = std::f64::consts::FRAC_PI_2 / dk as f64;
        let (v, _) = window_overlap(100, dk, mid + 0.01, mid - 0.01, scale).unwrap();
        assert!(v.abs() < 1e-10, "cosine zero violated: {v}");

        // quadrature oracle on narrow windows at large k
        let mut rng = RngStream::new(33, 0);
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 20 {
            attempts += 1;
            assert!(attempts < 500, "could not find 20 testable windows");
            // large k so the fast-oscillating cross term the closed form
            // drops is far below the slow term; moderate widths so the
            // midpoint approximation of sin(theta) stays tight
            let k = 800u64;
            let dk = 1 + (rng.next_u64() % 4);
            let mid = 0.9 + rng.next_uniform() * 0.7;
            let width = 0.12 + rng.next_uniform() * 0.08;
            let (ta, tb) = (mid + width / 2.0, mid - width / 2.0);
            let (value, bound) = window_overlap(k, dk, ta, tb, scale).unwrap();
            // skip windows near the analytic cosine zero, where a relative
            // comparison is meaningless
            if ((dk as f64) * mid).cos().abs() < 0.5 {
                continue;
            }
            let (ea, eb) = (scale * ta.cos(), scale * tb.cos());
            let f = |e: f64| {
                let th = (e / scale).clamp(-1.0, 1.0).acos();
                (k as f64 * th).cos() * ((k + dk) as f64 * th).cos()
            };
            let quad = simpson(&f, ea, eb, 20_000);
            assert!(
                ((quad - value) / value).abs() < 0.05,
                "k={k} dk={dk} window=({tb},{ta}): closed {value} vs quadrature {quad}"
            );
            assert!(value.abs() <= bound * 1.1);
            checked += 1;
        }
    }
}
