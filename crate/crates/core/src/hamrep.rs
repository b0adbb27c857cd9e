//! Hamiltonian-representation calculators: one-/two-electron integral
//! handling, one-norms and shifts for the Pauli, double-factorized and
//! tensor-hypercontracted representations, the block-invariant symmetry
//! shift transform, and a dense Fock-space oracle for small orbital counts.

use std::fmt::Write as _;
use std::path::Path;

use crate::numerics::{sym_eig, SquareMatrix};
use crate::{Error, Result};

/// One- and two-electron integrals in chemist convention, plus the nuclear
/// repulsion constant. `h` is `n x n`, `g` is `n^4` flat with the 8-fold
/// index symmetry `g_pqrs = g_qprs = g_pqsr = g_rspq`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegralTensors {
    n: usize,
    h: Vec<f64>,
    g: Vec<f64>,
    e_nuc: f64,
}

impl IntegralTensors {
    pub fn new(n: usize, h: Vec<f64>, g: Vec<f64>, e_nuc: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("orbital count must be >= 1".into()));
        }
        if h.len() != n * n || g.len() != n * n * n * n {
            return Err(Error::Validation(format!(
                "tensor sizes do not match n = {n}: h has {} entries, g has {}",
                h.len(),
                g.len()
            )));
        }
        if !e_nuc.is_finite()
            || h.iter().any(|v| !v.is_finite())
            || g.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Validation("integral tensors must be finite".into()));
        }
        let t = Self { n, h, g, e_nuc };
        let hscale = t.h.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        for p in 0..n {
            for q in 0..n {
                if (t.h(p, q) - t.h(q, p)).abs() > 1e-10 * hscale {
                    return Err(Error::Validation(format!(
                        "h is asymmetric at ({p}, {q})"
                    )));
                }
            }
        }
        let gscale = t.g.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        let v = t.g(p, q, r, s);
                        for w in [t.g(q, p, r, s), t.g(p, q, s, r), t.g(r, s, p, q)] {
                            if (v - w).abs() > 1e-10 * gscale {
                                return Err(Error::Validation(format!(
                                    "g violates 8-fold symmetry at ({p}, {q}, {r}, {s})"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn e_nuc(&self) -> f64 {
        self.e_nuc
    }

    #[inline]
    pub fn h(&self, p: usize, q: usize) -> f64 {
        self.h[p * self.n + q]
    }

    #[inline]
    pub fn g(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let n = self.n;
        self.g[((p * n + q) * n + r) * n + s]
    }
}

/// One leaf of a double factorization: an orthogonal basis `u`, the
/// rank-one vector `w`, and the sign of the parent eigenvalue. The leaf
/// reproduces `sign * sum_kl u_pk u_qk w_k w_l u_rl u_sl`.
#[derive(Clone, Debug)]
pub struct DfLeaf {
    pub u: SquareMatrix,
    pub w: Vec<f64>,
    pub sign: f64,
}

/// Double-factorized representation of the two-electron tensor.
#[derive(Clone, Debug)]
pub struct DfFactors {
    pub leaves: Vec<DfLeaf>,
    /// Frobenius norm of `g - reconstruction`.
    pub residual: f64,
}

/// Tensor-hypercontraction factors: `chi` is `n x rank` with unit-norm
/// columns, `zeta` is `rank x rank` symmetric.
#[derive(Clone, Debug)]
pub struct ThcFactors {
    n: usize,
    rank: usize,
    chi: Vec<f64>,
    zeta: Vec<f64>,
}

impl ThcFactors {
    pub fn new(n: usize, rank: usize, chi: Vec<f64>, zeta: Vec<f64>) -> Result<Self> {
        if chi.len() != n * rank || zeta.len() != rank * rank {
            return Err(Error::Validation(format!(
                "THC factor sizes do not match n = {n}, rank = {rank}"
            )));
        }
        let f = Self { n, rank, chi, zeta };
        for mu in 0..rank {
            let norm: f64 = (0..n).map(|p| f.chi(p, mu) * f.chi(p, mu)).sum();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::Validation(format!(
                    "chi column {mu} has squared norm {norm}, expected 1"
                )));
            }
        }
        for mu in 0..rank {
            for nu in 0..rank {
                if (f.zeta(mu, nu) - f.zeta(nu, mu)).abs() > 1e-10 {
                    return Err(Error::Validation(format!(
                        "zeta is asymmetric at ({mu}, {nu})"
                    )));
                }
            }
        }
        Ok(f)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn chi(&self, p: usize, mu: usize) -> f64 {
        self.chi[p * self.rank + mu]
    }

    #[inline]
    pub fn zeta(&self, mu: usize, nu: usize) -> f64 {
        self.zeta[mu * self.rank + nu]
    }
}

/// Parameters of the block-invariant symmetry shift.
#[derive(Clone, Debug)]
pub struct BlissParams {
    pub alpha1: f64,
    pub alpha2: f64,
    /// `n x n` symmetric.
    pub beta_mat: SquareMatrix,
    /// Particle number of the preserved sector.
    pub eta_particles: u32,
}

impl BlissParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.beta_mat.n() != n {
            return Err(Error::Validation(format!(
                "beta_mat dimension {} does not match orbital count {n}",
                self.beta_mat.n()
            )));
        }
        if self.beta_mat.max_asymmetry() > 1e-10 * self.beta_mat.max_abs().max(1e-300) {
            return Err(Error::Validation("beta_mat is asymmetric".into()));
        }
        Ok(())
    }
}

/// Effective one-body tensor `t_pq = h_pq - 1/2 sum_r g_prrq`.
pub fn effective_one_body(t: &IntegralTensors) -> SquareMatrix {
    let n = t.n();
    SquareMatrix::from_fn(n, |p, q| {
        t.h(p, q) - 0.5 * (0..n).map(|r| t.g(p, r, r, q)).sum::<f64>()
    })
}

/// One-norm and shift of the Pauli representation.
pub fn pauli_norm_shift(t: &IntegralTensors) -> (f64, f64) {
    let n = t.n();
    let mut lambda = 0.0;
    for p in 0..n {
        for q in 0..n {
            let one_body: f64 = t.h(p, q)
                + (0..n).map(|r| t.g(p, q, r, r)).sum::<f64>()
                - 0.5 * (0..n).map(|r| t.g(p, r, r, q)).sum::<f64>();
            lambda += one_body.abs();
        }
    }
    for p in 0..n {
        for r in 0..p {
            for s in 0..n {
                for q in 0..s {
                    lambda += 0.5 * (t.g(p, q, r, s) - t.g(p, s, r, q)).abs();
                }
            }
        }
    }
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s in 0..n {
                    lambda += 0.25 * t.g(p, q, r, s).abs();
                }
            }
        }
    }
    let mut beta = t.e_nuc();
    for p in 0..n {
        beta += t.h(p, p);
        for r in 0..n {
            beta += 0.5 * t.g(p, p, r, r) - 0.25 * t.g(p, r, r, p);
        }
    }
    (lambda, beta.abs())
}

/// Double factorization of the two-electron tensor, keeping the `n_df`
/// leaves with the largest absolute eigenvalues of the reshaped `n^2 x n^2`
/// matrix `g_(pq),(rs)`.
pub fn double_factorize(t: &IntegralTensors, n_df: usize) -> Result<DfFactors> {
    if n_df == 0 {
        return Err(Error::Contract("n_df must be >= 1".into()));
    }
    let n = t.n();
    let n2 = n * n;
    let reshaped = SquareMatrix::from_fn(n2, |pq, rs| {
        t.g(pq / n, pq % n, rs / n, rs % n)
    });
    let eig = sym_eig(&reshaped)?;
    let mut order: Vec<usize> = (0..n2).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .partial_cmp(&eig.eigenvalues[a].abs())
            .unwrap()
    });
    let kept = &order[..n_df.min(n2)];

    let mut leaves = Vec::with_capacity(kept.len());
    for &idx in kept {
        let e = eig.eigenvalues[idx];
        let a = SquareMatrix::from_fn(n, |p, q| eig.eigenvectors.get(p * n + q, idx));
        // Eigenvectors of a symmetric-slice matrix are symmetric up to
        // rounding; symmetrize before the inner decomposition.
        let a_sym = SquareMatrix::from_fn(n, |p, q| 0.5 * (a.get(p, q) + a.get(q, p)));
        let inner = sym_eig(&a_sym)?;
        let root = e.abs().sqrt();
        let w: Vec<f64> = inner.eigenvalues.iter().map(|&ev| root * ev).collect();
        leaves.push(DfLeaf {
            u: inner.eigenvectors,
            w,
            sign: if e < 0.0 { -1.0 } else { 1.0 },
        });
    }

    let mut residual_sq = 0.0;
    for pq in 0..n2 {
        for rs in 0..n2 {
            let mut recon = 0.0;
            for leaf in &leaves {
                let (p, q, r, s) = (pq / n, pq % n, rs / n, rs % n);
                let lp: f64 = (0..n)
                    .map(|k| leaf.u.get(p, k) * leaf.u.get(q, k) * leaf.w[k])
                    .sum();
                let lr: f64 = (0..n)
                    .map(|l| leaf.u.get(r, l) * leaf.u.get(s, l) * leaf.w[l])
                    .sum();
                recon += leaf.sign * lp * lr;
            }
            let d = reshaped.get(pq, rs) - recon;
            residual_sq += d * d;
        }
    }
    Ok(DfFactors {
        leaves,
        residual: residual_sq.sqrt(),
    })
}

/// Eigenvalues of `f_pq = t_pq + sum_r g_pqrr` (the one-body part absorbed
/// into the factorized representations).
pub fn one_body_eigenvalues(t: &IntegralTensors) -> Result<Vec<f64>> {
    let n = t.n();
    let eff = effective_one_body(t);
    let f = SquareMatrix::from_fn(n, |p, q| {
        eff.get(p, q) + (0..n).map(|r| t.g(p, q, r, r)).sum::<f64>()
    });
    Ok(sym_eig(&f)?.eigenvalues)
}

/// One-norm and shift of the double-factorized representation.
pub fn df_norm_shift(t: &IntegralTensors, f: &DfFactors) -> Result<(f64, f64)> {
    let f_o = one_body_eigenvalues(t)?;
    let mut lambda: f64 = f_o.iter().map(|v| v.abs()).sum();
    let mut beta: f64 = f_o.iter().sum();
    for leaf in &f.leaves {
        let abs_sum: f64 = leaf.w.iter().map(|v| v.abs()).sum();
        lambda += 0.25 * abs_sum * abs_sum;
        let signed_sum: f64 = leaf.w.iter().sum();
        beta -= 0.5 * leaf.sign * signed_sum * signed_sum;
    }
    Ok((lambda, beta.abs()))
}

/// One-norm and shift of the tensor-hypercontracted representation.
/// `f_o` are the one-body eigenvalues; `e_nuc` enters the shift additively.
pub fn thc_norm_shift(f_o: &[f64], factors: &ThcFactors, e_nuc: f64) -> (f64, f64) {
    let rank = factors.rank();
    let mut zeta_abs = 0.0;
    let mut zeta_sum = 0.0;
    for mu in 0..rank {
        for nu in 0..rank {
            zeta_abs += factors.zeta(mu, nu).abs();
            zeta_sum += factors.zeta(mu, nu);
        }
    }
    let lambda = f_o.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * zeta_abs;
    let beta = (e_nuc + f_o.iter().sum::<f64>() - 0.5 * zeta_sum).abs();
    (lambda, beta)
}

/// Block-invariant symmetry shift: modifies the tensors so that the
/// Hamiltonian changes only outside the `eta`-particle sector. The nuclear
/// constant is adjusted to keep the sector spectrum exactly unchanged.
pub fn bliss_transform(t: &IntegralTensors, p: &BlissParams) -> Result<IntegralTensors> {
    p.validate(t.n())?;
    let n = t.n();
    let eta = p.eta_particles as f64;
    // The transform acts on the effective one-body tensor
    // t'_pq = t_pq - alpha1 d_pq + (eta/2) beta_pq and on
    // g'_pqrs = g_pqrs - alpha2 d_pq d_rs - (beta_pq d_rs + d_pq beta_rs)/2.
    // Expressed back on h (which is what IntegralTensors stores) this is
    // h'_pq = h_pq - (alpha1 + alpha2/2) d_pq + ((eta - 1)/2) beta_pq.
    let mut h = Vec::with_capacity(n * n);
    for pp in 0..n {
        for q in 0..n {
            let d = if pp == q { 1.0 } else { 0.0 };
            h.push(
                t.h(pp, q) - (p.alpha1 + 0.5 * p.alpha2) * d
                    + 0.5 * (eta - 1.0) * p.beta_mat.get(pp, q),
            );
        }
    }
    let mut g = Vec::with_capacity(n * n * n * n);
    for pp in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s in 0..n {
                    let dpq = if pp == q { 1.0 } else { 0.0 };
                    let drs = if r == s { 1.0 } else { 0.0 };
                    g.push(
                        t.g(pp, q, r, s) - p.alpha2 * dpq * drs
                            - 0.5 * (p.beta_mat.get(pp, q) * drs + dpq * p.beta_mat.get(r, s)),
                    );
                }
            }
        }
    }
    let e_nuc = t.e_nuc() + p.alpha1 * eta + 0.5 * p.alpha2 * eta * eta;
    IntegralTensors::new(n, h, g, e_nuc)
}

/// Parse an FCIDUMP-style integral file: header `&FCI NORB=n,NELEC=m`
/// terminated by `/`, then `value p q r s` rows with 1-based indices;
/// `r = s = 0` marks one-electron entries and all-zero indices the nuclear
/// constant. Missing symmetry partners are filled by the 8-fold rule.
pub fn load_integrals(path: impl AsRef<Path>) -> Result<IntegralTensors> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_integrals(&text)
}

pub fn parse_integrals(text: &str) -> Result<IntegralTensors> {
    let mut lines = text.lines().enumerate();
    let mut n: Option<usize> = None;
    let mut header_done = false;
    let mut body_start = 0;
    for (i, line) in lines.by_ref() {
        let l = line.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(pos) = l.to_uppercase().find("NORB") {
            let rest = &l[pos + 4..];
            let num: String = rest
                .chars()
                .skip_while(|c| *c == '=' || c.is_whitespace())
                .take_while(|c| c.is_ascii_digit())
                .collect();
            n = Some(num.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: "cannot parse NORB value".into(),
            })?);
        }
        if l.contains('/') || l.to_uppercase().contains("&END") {
            header_done = true;
            body_start = i + 1;
            break;
        }
    }
    if !header_done {
        return Err(Error::Validation(
            "integral file has no '/' header terminator".into(),
        ));
    }
    let n = n.ok_or_else(|| Error::Validation("integral header is missing NORB".into()))?;
    if n == 0 {
        return Err(Error::Validation("NORB must be >= 1".into()));
    }

    let mut h = vec![0.0; n * n];
    let mut g = vec![0.0; n * n * n * n];
    let mut e_nuc = 0.0;
    let gi = |p: usize, q: usize, r: usize, s: usize| ((p * n + q) * n + r) * n + s;

    for (i, line) in text.lines().enumerate().skip(body_start) {
        let l = line.trim();
        if l.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let parts: Vec<&str> = l.split_whitespace().collect();
        let err = |msg: String| Error::Parse { line: lineno, msg };
        if parts.len() != 5 {
            return Err(err("expected 'value p q r s'".into()));
        }
        let v: f64 = parts[0]
            .parse()
            .map_err(|_| err(format!("cannot parse value '{}'", parts[0])))?;
        let idx: Vec<usize> = parts[1..]
            .iter()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| err(format!("cannot parse index '{s}'")))
            })
            .collect::<Result<_>>()?;
        let (p, q, r, s) = (idx[0], idx[1], idx[2], idx[3]);
        for &x in &idx {
            if x > n {
                return Err(err(format!("index {x} exceeds NORB = {n}")));
            }
        }
        if p == 0 && q == 0 && r == 0 && s == 0 {
            e_nuc = v;
        } else if r == 0 && s == 0 {
            if p == 0 || q == 0 {
                return Err(err("one-electron entry needs both p and q".into()));
            }
            h[(p - 1) * n + (q - 1)] = v;
            h[(q - 1) * n + (p - 1)] = v;
        } else {
            if p == 0 || q == 0 || r == 0 || s == 0 {
                return Err(err("two-electron entry needs all four indices".into()));
            }
            let (p, q, r, s) = (p - 1, q - 1, r - 1, s - 1);
            for (a, b, c, d) in [
                (p, q, r, s),
                (q, p, r, s),
                (p, q, s, r),
                (q, p, s, r),
                (r, s, p, q),
                (s, r, p, q),
                (r, s, q, p),
                (s, r, q, p),
            ] {
                g[gi(a, b, c, d)] = v;
            }
        }
    }

    // Symmetrize in case inconsistent explicit partners were supplied.
    let mut max_dev = 0.0_f64;
    for p in 0..n {
        for q in 0..=p {
            let avg = 0.5 * (h[p * n + q] + h[q * n + p]);
            max_dev = max_dev.max((h[p * n + q] - avg).abs());
            h[p * n + q] = avg;
            h[q * n + p] = avg;
        }
    }
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s in 0..n {
                    let group = [
                        gi(p, q, r, s),
                        gi(q, p, r, s),
                        gi(p, q, s, r),
                        gi(q, p, s, r),
                        gi(r, s, p, q),
                        gi(s, r, p, q),
                        gi(r, s, q, p),
                        gi(s, r, q, p),
                    ];
                    let avg: f64 = group.iter().map(|&i| g[i]).sum::<f64>() / 8.0;
                    for &i in &group {
                        max_dev = max_dev.max((g[i] - avg).abs());
                        g[i] = avg;
                    }
                }
            }
        }
    }
    if max_dev > 1e-8 {
        eprintln!(
            "warning: integral file violated index symmetry by up to {max_dev:e}; symmetrized"
        );
    }
    IntegralTensors::new(n, h, g, e_nuc)
}

/// Render tensors in the same FCIDUMP-style format `load_integrals` reads.
pub fn integrals_to_string(t: &IntegralTensors, n_elec: usize) -> String {
    let n = t.n();
    let mut out = String::new();
    let _ = writeln!(out, "&FCI NORB={n},NELEC={n_elec}");
    out.push_str("/\n");
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s in 0..n {
                    if t.g(p, q, r, s) != 0.0 {
                        let _ = writeln!(
                            out,
                            "{:.17e} {} {} {} {}",
                            t.g(p, q, r, s),
                            p + 1,
                            q + 1,
                            r + 1,
                            s + 1
                        );
                    }
                }
            }
        }
    }
    for p in 0..n {
        for q in 0..n {
            if t.h(p, q) != 0.0 {
                let _ = writeln!(out, "{:.17e} {} {} 0 0", t.h(p, q), p + 1, q + 1);
            }
        }
    }
    let _ = writeln!(out, "{:.17e} 0 0 0 0", t.e_nuc());
    out
}

/// Parse a THC factor file: a `chi n rank` header followed by `n` CSV rows
/// of `rank` values, then a `zeta rank` header followed by `rank` rows.
pub fn load_thc_factors(path: impl AsRef<Path>) -> Result<ThcFactors> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_thc_factors(&text)
}

pub fn parse_thc_factors(text: &str) -> Result<ThcFactors> {
    let mut n = 0usize;
    let mut rank = 0usize;
    let mut chi: Vec<f64> = Vec::new();
    let mut zeta: Vec<f64> = Vec::new();
    #[derive(PartialEq)]
    enum Block {
        None,
        Chi,
        Zeta,
    }
    let mut block = Block::None;
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        let lineno = i + 1;
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let lower = l.to_lowercase();
        if lower.starts_with("chi") {
            let dims: Vec<usize> = l
                .split(|c: char| c == ',' || c.is_whitespace())
                .skip(1)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| err(format!("bad chi dimension '{s}'"))))
                .collect::<Result<_>>()?;
            if dims.len() != 2 {
                return Err(err("chi header needs 'chi n rank'".into()));
            }
            n = dims[0];
            rank = dims[1];
            block = Block::Chi;
            continue;
        }
        if lower.starts_with("zeta") {
            block = Block::Zeta;
            continue;
        }
        let row: Vec<f64> = l
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| err(format!("cannot parse '{}'", s.trim())))
            })
            .collect::<Result<_>>()?;
        match block {
            Block::Chi => {
                if row.len() != rank {
                    return Err(err(format!("chi row has {} values, expected {rank}", row.len())));
                }
                chi.extend(row);
            }
            Block::Zeta => {
                if row.len() != rank {
                    return Err(err(format!("zeta row has {} values, expected {rank}", row.len())));
                }
                zeta.extend(row);
            }
            Block::None => return Err(err("data row before any block header".into())),
        }
    }
    ThcFactors::new(n, rank, chi, zeta)
}

/// Per-leaf CSV export of a double factorization: for each leaf a header
/// `leaf index sign`, the `w` row, then the `u` matrix rows.
pub fn df_factors_to_csv(f: &DfFactors) -> String {
    let mut out = String::new();
    for (i, leaf) in f.leaves.iter().enumerate() {
        let _ = writeln!(out, "leaf,{},{}", i, leaf.sign);
        let w: Vec<String> = leaf.w.iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(out, "{}", w.join(","));
        let n = leaf.u.n();
        for p in 0..n {
            let row: Vec<String> = (0..n).map(|k| format!("{:.17e}", leaf.u.get(p, k))).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
    }
    out
}

/// Dense Fock-space Hamiltonian `e_nuc + sum t_pq E_pq + 1/2 sum g_pqrs
/// E_pq E_rs` on `2n` spin orbitals (dimension `4^n`). Restricted to
/// `n <= 3` so the matrices stay at 64 x 64.
pub fn dense_fock_hamiltonian(t: &IntegralTensors) -> Result<SquareMatrix> {
    let n = t.n();
    if n > 3 {
        return Err(Error::Contract(format!(
            "dense Fock oracle supports n <= 3 orbitals, got {n}"
        )));
    }
    let m = 2 * n; // spin orbitals
    let dim = 1usize << m;
    let eff = effective_one_body(t);

    // E_pq = sum_sigma a^+_{p sigma} a_{q sigma} as dense matrices.
    let e_pq: Vec<SquareMatrix> = (0..n * n)
        .map(|idx| {
            let (p, q) = (idx / n, idx % n);
            let mut mat = SquareMatrix::zeros(dim);
            for sigma in 0..2 {
                let (ip, iq) = (2 * p + sigma, 2 * q + sigma);
                for ket in 0..dim {
                    if ket & (1 << iq) == 0 {
                        continue;
                    }
                    let mid = ket & !(1 << iq);
                    if mid & (1 << ip) != 0 {
                        continue;
                    }
                    let bra = mid | (1 << ip);
                    let sign_q = ((ket & ((1 << iq) - 1)).count_ones() % 2) as i32;
                    let sign_p = ((mid & ((1 << ip) - 1)).count_ones() % 2) as i32;
                    let sign = if (sign_q + sign_p) % 2 == 0 { 1.0 } else { -1.0 };
                    let old = mat.get(bra, ket);
                    mat.set(bra, ket, old + sign);
                }
            }
            mat
        })
        .collect();

    let mut hmat = SquareMatrix::zeros(dim);
    for i in 0..dim {
        hmat.set(i, i, t.e_nuc());
    }
    for p in 0..n {
        for q in 0..n {
            let c = eff.get(p, q);
            if c == 0.0 {
                continue;
            }
            let e = &e_pq[p * n + q];
            for i in 0..dim {
                for j in 0..dim {
                    let v = e.get(i, j);
                    if v != 0.0 {
                        hmat.set(i, j, hmat.get(i, j) + c * v);
                    }
                }
            }
        }
    }
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s in 0..n {
                    let c = 0.5 * t.g(p, q, r, s);
                    if c == 0.0 {
                        continue;
                    }
                    let a = &e_pq[p * n + q];
                    let b = &e_pq[r * n + s];
                    for i in 0..dim {
                        for k in 0..dim {
                            let av = a.get(i, k);
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..dim {
                                let bv = b.get(k, j);
                                if bv != 0.0 {
                                    hmat.set(i, j, hmat.get(i, j) + c * av * bv);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(hmat)
}

/// Eigenvalues of the dense Fock Hamiltonian restricted to the
/// `eta`-particle sector, ascending.
pub fn sector_eigenvalues(t: &IntegralTensors, eta: u32) -> Result<Vec<f64>> {
    let hmat = dense_fock_hamiltonian(t)?;
    let m = 2 * t.n();
    let states: Vec<usize> = (0..1usize << m)
        .filter(|b| b.count_ones() == eta)
        .collect();
    if states.is_empty() {
        return Err(Error::Domain(format!(
            "no {eta}-particle states on {m} spin orbitals"
        )));
    }
    let sector = SquareMatrix::from_fn(states.len(), |i, j| hmat.get(states[i], states[j]));
    let mut eigs = sym_eig(&sector)?.eigenvalues;
    eigs.reverse();
    Ok(eigs)
}
