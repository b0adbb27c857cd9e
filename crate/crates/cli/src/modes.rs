//! One runner per experiment mode. Every runner appends its records to the
//! report builder and writes CSV artifacts into the output directory.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use eft_spectra_core::numerics::{erf, RngStream};
use eft_spectra_core::qksd::{
    self, exact_moments, find_shot_budget, overlap_analysis, run_trials, solve_regularized,
    KrylovConfig, Regularization, RESULTS_CSV_HEADER,
};
use eft_spectra_core::spe::{
    acdf_value, exact_mirrored_cdf, fourier_coefficients, spe_inject_noise, spe_run_seeded,
    truncation_bound_new, truncation_bound_old, HeavisideModel,
};
use eft_spectra_core::spectrum::{qpe_backenvelope, Spectrum};
use eft_spectra_core::hamrep::{
    double_factorize, load_integrals, load_thc_factors, one_body_eigenvalues, pauli_norm_shift,
    df_norm_shift, thc_norm_shift, IntegralTensors,
};
use eft_spectra_core::{Error, Result};

use crate::config::{parse_policy, ExperimentConfig};
use crate::report::ReportBuilder;

fn policy_of(cfg: &ExperimentConfig, default: Regularization) -> Regularization {
    cfg.policy
        .as_deref()
        .map(|p| parse_policy(p).expect("validated"))
        .unwrap_or(default)
}

fn dk_list_of(cfg: &ExperimentConfig) -> Vec<u64> {
    if cfg.dk_list.is_empty() {
        vec![1]
    } else {
        cfg.dk_list.clone()
    }
}

fn overlap_triplet(s: &Spectrum, k_max: u64, dk: u64) -> Result<(f64, f64, f64)> {
    let a = overlap_analysis(s, &[k_max], &[dk])?;
    let r = &a.records[0];
    Ok((r.s1, r.s2, r.s3))
}

pub fn qksd_sweep(
    cfg: &ExperimentConfig,
    s: &Spectrum,
    out: &Path,
    rb: &mut ReportBuilder,
) -> Result<()> {
    let policy = policy_of(cfg, Regularization::Threshold(qksd::DEFAULT_THRESHOLD));
    let n_trials = cfg.n_trials.unwrap_or(0);
    let seed = cfg.seed.unwrap_or(0);
    let mut body = String::from(RESULTS_CSV_HEADER);
    body.push('\n');
    let mut point = 0u64;
    for &dk in &dk_list_of(cfg) {
        for &k_max in &cfg.k_list {
            let kcfg = KrylovConfig::from_max_degree(k_max, dk)?;
            let (s1, s2, s3) = overlap_triplet(s, k_max, dk)?;
            let point_seed = seed.wrapping_add(point);
            let (m_total, mean_abs_err, rmse, failed) = match cfg.m_total {
                Some(m) if n_trials > 0 => {
                    let st = run_trials(s, &kcfg, policy, m, n_trials, point_seed)?;
                    (m, st.mean_abs_err, st.rmse, st.failed_trials)
                }
                _ => {
                    // noiseless reference point: error columns report the
                    // regularized solution against the true ground energy
                    let table = exact_moments(s, &kcfg);
                    let (h, sm) = qksd::build_matrices(&table, &kcfg)?;
                    let sol = solve_regularized(&h, &sm, policy, (s.shift(), s.scale()))?;
                    let err = (sol.e0_phys - s.ground_energy()).abs();
                    (0, err, err, 0)
                }
            };
            writeln!(
                body,
                "{k_max},{dk},{policy},{m_total},{mean_abs_err},{rmse},{s1},{s2},{s3},{failed}"
            )
            .unwrap();
            rb.push_record(json!({
                "k_max": k_max, "dk": dk, "policy": policy.to_string(),
                "m_total": m_total, "mean_abs_err": mean_abs_err, "rmse": rmse,
                "failed_trials": failed,
                "seed": point_seed, "streams": format!("0..{n_trials}"),
            }));
            point += 1;
        }
    }
    rb.write_csv(out, "results.csv", &body)?;
    Ok(())
}

pub fn qksd_budget(
    cfg: &ExperimentConfig,
    s: &Spectrum,
    out: &Path,
    rb: &mut ReportBuilder,
) -> Result<()> {
    let policy = policy_of(cfg, Regularization::TopM(2));
    let n_trials = cfg.n_trials.expect("validated");
    let target = cfg.target_err.expect("validated");
    let seed = cfg.seed.expect("validated");
    let mut body = String::from(RESULTS_CSV_HEADER);
    body.push('\n');
    let mut point = 0u64;
    for &dk in &dk_list_of(cfg) {
        for &k_max in &cfg.k_list {
            let kcfg = KrylovConfig::from_max_degree(k_max, dk)?;
            let point_seed = seed.wrapping_add(point);
            let m = find_shot_budget(s, &kcfg, policy, target, n_trials, point_seed)?;
            let st = run_trials(s, &kcfg, policy, m, n_trials, point_seed)?;
            let (s1, s2, s3) = overlap_triplet(s, k_max, dk)?;
            writeln!(
                body,
                "{k_max},{dk},{policy},{m},{},{},{s1},{s2},{s3},{}",
                st.mean_abs_err, st.rmse, st.failed_trials
            )
            .unwrap();
            rb.push_record(json!({
                "k_max": k_max, "dk": dk, "policy": policy.to_string(),
                "m_total": m, "mean_abs_err": st.mean_abs_err, "rmse": st.rmse,
                "failed_trials": st.failed_trials,
                "seed": point_seed, "streams": format!("0..{n_trials}"),
            }));
            point += 1;
        }
    }
    rb.write_csv(out, "results.csv", &body)?;
    Ok(())
}

pub fn spe_run(
    cfg: &ExperimentConfig,
    s: &Spectrum,
    out: &Path,
    rb: &mut ReportBuilder,
) -> Result<()> {
    let target = cfg.target_err.expect("validated");
    let p_success = cfg.p_success.unwrap_or(0.99);
    let seed = cfg.seed.expect("validated");
    let n_runs = cfg.n_trials.unwrap_or(1).max(1);
    let plan = eft_spectra_core::spe::spe_prepare(s, target, p_success)?;
    let mut body =
        String::from("run_seed,x_star,e0_hartree,abs_err_hartree,amplification_factor,success\n");
    let mut successes = 0usize;
    for i in 0..n_runs as u64 {
        let run_seed = seed.wrapping_add(i);
        let run = spe_run_seeded(&plan, run_seed)?;
        let err = (run.e0_phys - s.ground_energy()).abs();
        if run.success {
            successes += 1;
        }
        writeln!(
            body,
            "{run_seed},{},{},{err},{},{}",
            run.x_star, run.e0_phys, run.amplification_factor, run.success
        )
        .unwrap();
        rb.push_record(json!({
            "K": plan.model.order, "M": plan.m_total,
            "beta_erf": plan.model.sharpness, "eta": plan.eta,
            "delta_radians": plan.search.delta,
            "x_star": run.x_star, "e0_hartree": run.e0_phys,
            "amplification_factor": run.amplification_factor,
            "success": run.success,
            "seed": run_seed, "streams": "0",
        }));
    }
    rb.push_record(json!({
        "summary": {
            "n_runs": n_runs, "successes": successes,
            "K": plan.model.order, "max_degree": 2 * plan.model.order + 1,
            "M": plan.m_total, "beta_erf": plan.model.sharpness,
            "eta": plan.eta, "epsilon": plan.epsilon,
            "delta_radians": plan.search.delta,
            "one_norm": plan.model.one_norm,
        }
    }));
    rb.write_csv(out, "runs.csv", &body)?;
    Ok(())
}

fn heaviside_eval(model: &HeavisideModel, y: f64) -> f64 {
    let mut acc = model.f0;
    for (j, &fi) in model.f_imag.iter().enumerate() {
        acc += -2.0 * fi * ((2 * j + 1) as f64 * y).sin();
    }
    acc
}

pub fn spe_bound_curve(cfg: &ExperimentConfig, out: &Path, rb: &mut ReportBuilder) -> Result<()> {
    let mut body = String::from("beta,K,bound_new,bound_old,measured\n");
    for &beta in &cfg.beta_list {
        for &k in &cfg.k_list {
            let k = k as usize;
            let bound_new = truncation_bound_new(beta, k)?;
            let bound_old = truncation_bound_old(beta, k, None)?;
            let model = fourier_coefficients(beta, k)?;
            let mut measured = 0.0_f64;
            let n = 20_000;
            for i in 0..=n {
                let x = -1.0 + 2.0 * i as f64 / n as f64;
                let q = 2.0 * heaviside_eval(&model, x.asin()) - 1.0;
                measured = measured.max((erf((2.0 * beta).sqrt() * x) - q).abs());
            }
            writeln!(body, "{beta},{k},{bound_new},{bound_old},{measured}").unwrap();
            rb.push_record(json!({
                "beta": beta, "K": k, "bound_new": bound_new,
                "bound_old": bound_old, "measured": measured,
            }));
        }
    }
    rb.write_csv(out, "bounds.csv", &body)?;
    Ok(())
}

pub fn overlap_mode(
    cfg: &ExperimentConfig,
    s: &Spectrum,
    out: &Path,
    rb: &mut ReportBuilder,
) -> Result<()> {
    let analysis = overlap_analysis(s, &cfg.k_list, &dk_list_of(cfg))?;
    let mut body = String::from("K,dk,s1,s2,s3\n");
    for r in &analysis.records {
        writeln!(body, "{},{},{},{},{}", r.k_max, r.dk, r.s1, r.s2, r.s3).unwrap();
    }
    for (dk, slopes) in &analysis.slopes {
        rb.push_record(json!({
            "dk": dk,
            "slopes": {"s1": slopes[0], "s2": slopes[1], "s3": slopes[2]},
        }));
    }
    rb.write_csv(out, "overlap.csv", &body)?;
    Ok(())
}

fn thc_residual(t: &IntegralTensors, f: &eft_spectra_core::hamrep::ThcFactors) -> f64 {
    let n = t.n();
    let mut sq = 0.0;
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s_ in 0..n {
                    let mut approx = 0.0;
                    for mu in 0..f.rank() {
                        for nu in 0..f.rank() {
                            approx += f.chi(p, mu)
                                * f.chi(q, mu)
                                * f.zeta(mu, nu)
                                * f.chi(r, nu)
                                * f.chi(s_, nu);
                        }
                    }
                    let d = t.g(p, q, r, s_) - approx;
                    sq += d * d;
                }
            }
        }
    }
    sq.sqrt()
}

pub fn norms(cfg: &ExperimentConfig, out: &Path, rb: &mut ReportBuilder) -> Result<()> {
    let t = load_integrals(cfg.integrals_path.as_ref().expect("validated"))?;
    let n = t.n();
    let reps: Vec<String> = if cfg.representations.is_empty() {
        let mut r = vec!["pauli".to_string(), "df".to_string()];
        if cfg.thc_path.is_some() {
            r.push("thc".to_string());
        }
        r
    } else {
        cfg.representations.clone()
    };
    let mut body = String::from("representation,lambda_hartree,beta_hartree,residual,rank\n");
    for rep in &reps {
        let (lambda, beta, residual, rank) = match rep.as_str() {
            "pauli" => {
                let (l, b) = pauli_norm_shift(&t);
                (l, b, 0.0, 0)
            }
            "df" => {
                let rank = cfg.df_rank.unwrap_or(5 * n).min(n * n);
                let f = double_factorize(&t, rank)?;
                let (l, b) = df_norm_shift(&t, &f)?;
                (l, b, f.residual, rank)
            }
            "thc" => {
                let factors = load_thc_factors(cfg.thc_path.as_ref().expect("validated"))?;
                let f_o = one_body_eigenvalues(&t)?;
                let (l, b) = thc_norm_shift(&f_o, &factors, t.e_nuc());
                (l, b, thc_residual(&t, &factors), factors.rank())
            }
            other => {
                return Err(Error::Validation(format!(
                    "unknown representation {other:?}"
                )))
            }
        };
        writeln!(body, "{rep},{lambda},{beta},{residual},{rank}").unwrap();
        rb.push_record(json!({
            "representation": rep, "lambda_hartree": lambda,
            "beta_hartree": beta, "residual": residual, "rank": rank,
        }));
    }
    rb.write_csv(out, "norms.csv", &body)?;
    Ok(())
}

pub fn compare(
    cfg: &ExperimentConfig,
    s: &Spectrum,
    out: &Path,
    rb: &mut ReportBuilder,
) -> Result<()> {
    let policy = policy_of(cfg, Regularization::TopM(2));
    let target = cfg.target_err.unwrap_or(1e-3);
    let p_success = cfg.p_success.unwrap_or(0.99);
    let n_trials = cfg.n_trials.expect("validated");
    let seed = cfg.seed.expect("validated");
    let dk = dk_list_of(cfg)[0];
    let p0 = s.ground_weight();

    let mut qksd_rows = Vec::new();
    for (i, &k_max) in cfg.k_list.iter().enumerate() {
        let kcfg = KrylovConfig::from_max_degree(k_max, dk)?;
        let point_seed = seed.wrapping_add(i as u64);
        let m = find_shot_budget(s, &kcfg, policy, target, n_trials, point_seed)?;
        let st = run_trials(s, &kcfg, policy, m, n_trials, point_seed)?;
        qksd_rows.push((k_max, m, st.rmse, point_seed));
    }
    let rmse_at_kmax = qksd_rows.last().map(|r| r.2).unwrap_or(target);
    let delta_spe = target.max(rmse_at_kmax);
    let plan = eft_spectra_core::spe::spe_prepare(s, delta_spe, p_success)?;
    let k_spe = 2 * plan.model.order as u64 + 1;
    let m_spe = plan.m_total;

    let mut body =
        String::from("K,dk,policy,m_qksd,rmse_qksd,k_spe_degree,m_spe,delta_spe,qpe_err\n");
    for (k_max, m, rmse, point_seed) in &qksd_rows {
        let qpe = qpe_backenvelope(*k_max, *m, p0)?;
        writeln!(
            body,
            "{k_max},{dk},{policy},{m},{rmse},{k_spe},{m_spe},{delta_spe},{qpe}"
        )
        .unwrap();
        rb.push_record(json!({
            "k_max": k_max, "dk": dk, "policy": policy.to_string(),
            "m_qksd": m, "rmse_qksd": rmse,
            "k_spe_degree": k_spe, "m_spe": m_spe, "delta_spe": delta_spe,
            "qpe_err": qpe, "seed": point_seed, "streams": format!("0..{n_trials}"),
        }));
    }
    rb.write_csv(out, "compare.csv", &body)?;
    Ok(())
}

pub fn acdf_curve(
    cfg: &ExperimentConfig,
    s: &Spectrum,
    out: &Path,
    rb: &mut ReportBuilder,
) -> Result<()> {
    let target = cfg.target_err.expect("validated");
    let p_success = cfg.p_success.unwrap_or(0.99);
    let plan = eft_spectra_core::spe::spe_prepare(s, target, p_success)?;
    let noisy = match cfg.seed {
        Some(seed) => {
            let mut stream = RngStream::new(seed, 0);
            Some(spe_inject_noise(
                &plan.exact_moments,
                &plan.allocation,
                &mut stream,
            )?)
        }
        None => None,
    };
    let mut body = String::from("x,acdf_exact,acdf_noisy,exact_cdf\n");
    let (xl, xr) = plan.search.interval;
    let n = 2000;
    for i in 0..=n {
        let x = xl + (xr - xl) * i as f64 / n as f64;
        let exact = acdf_value(&plan.model, &plan.exact_moments, x)?;
        let noisy_v = match &noisy {
            Some(t) => acdf_value(&plan.model, t, x)?,
            None => f64::NAN,
        };
        let cdf = exact_mirrored_cdf(&plan.flipped, x);
        writeln!(body, "{x},{exact},{noisy_v},{cdf}").unwrap();
    }
    rb.push_record(json!({
        "K": plan.model.order, "M": plan.m_total,
        "beta_erf": plan.model.sharpness, "eta": plan.eta,
        "level": plan.search.level,
        "interval": [xl, xr],
        "seed": cfg.seed, "streams": "0",
    }));
    rb.write_csv(out, "acdf.csv", &body)?;
    Ok(())
}
