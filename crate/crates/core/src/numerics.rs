//! Numerical kernels shared by the rest of the toolkit: scaled modified
//! Bessel functions of the first kind, stable Chebyshev evaluation, a cyclic
//! Jacobi symmetric eigensolver and counter-based Gaussian random streams.

use crate::{Error, Result};

/// `e^{-beta} I_j(beta)` for a single order `j`.
///
/// Scaled values stay in `[0, 1]` for every `beta`, which keeps the large
/// sharpness regimes (`beta ~ 1e4` and beyond) free of overflow.
pub fn scaled_bessel_i(j: usize, beta: f64) -> Result<f64> {
    Ok(scaled_bessel_i_upto(j, beta)?[j])
}

/// All of `e^{-beta} I_j(beta)` for `j = 0..=j_max`.
///
/// Backward (Miller) recurrence started well above both `j_max` and `beta`,
/// normalized with the generating-function identity
/// `I_0(beta) + 2 sum_{j>=1} I_j(beta) = e^beta`.
pub fn scaled_bessel_i_upto(j_max: usize, beta: f64) -> Result<Vec<f64>> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::Domain(format!(
            "scaled_bessel_i requires a positive finite beta, got {beta}"
        )));
    }
    let n0 = j_max.max(beta.ceil() as usize);
    // Start offset large enough for full double precision at the requested
    // orders; the usual sqrt(c*n) rule with a generous constant.
    let start = n0 + 24 + (60.0 * (n0 as f64 + 60.0)).sqrt() as usize;

    let mut out = vec![0.0_f64; j_max + 1];
    let mut f_next = 0.0_f64; // f_{k+1}
    let mut f_cur = 1e-280_f64; // f_k, arbitrary seed value
    let mut norm = 2.0 * f_cur; // accumulates f_0 + 2 sum_{k>=1} f_k
    let two_over_beta = 2.0 / beta;

    for k in (1..=start).rev() {
        let f_prev = f_next + (k as f64) * two_over_beta * f_cur;
        f_next = f_cur;
        f_cur = f_prev;
        norm += if k - 1 >= 1 { 2.0 * f_cur } else { f_cur };
        if k - 1 <= j_max {
            out[k - 1] = f_cur;
        }
        if f_cur > 1e280 {
            let s = 1e-280;
            f_cur *= s;
            f_next *= s;
            norm *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    for v in out.iter_mut() {
        *v /= norm;
    }
    Ok(out)
}

/// Error function, accurate to roughly 1e-15 absolute.
///
/// Common statistics crates carry rational approximations good to about
/// 1e-10, which is too coarse for validating truncation bounds down near
/// machine precision. This uses the cancellation-free confluent series for
/// small arguments and a Lentz-evaluated continued fraction for the tail.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x <= 3.0 {
        // erf(x) = (2/sqrt(pi)) e^{-x^2} sum_n (2x^2)^n x / (2n+1)!!,
        // all terms positive
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut denom = 1.0;
        while term > sum * 1e-18 {
            denom += 2.0;
            term *= 2.0 * x2 / denom;
            sum += term;
        }
        (2.0 / std::f64::consts::PI.sqrt()) * (-x2).exp() * sum
    } else {
        1.0 - erfc(x)
    }
}

/// Complementary error function; relatively accurate in the far tail.
pub fn erfc(x: f64) -> f64 {
    if x < 3.0 {
        return 1.0 - erf(x);
    }
    // erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + (2/2)/(x + ...)))
    // evaluated by the modified Lentz method
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..200 {
        let a = n as f64 / 2.0;
        d = 1.0 / (x + a * d);
        c = x + a / c;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
}

/// Chebyshev polynomial of the first kind, `T_k(x) = cos(k arccos x)`.
///
/// The trigonometric form is uniformly stable for degrees up to the 1e6
/// range needed by the depth sweeps; the three-term recurrence is not.
pub fn chebyshev_t(k: u64, x: f64) -> Result<f64> {
    if !x.is_finite() || x.abs() > 1.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "chebyshev_t is only defined on [-1, 1] (got x = {x})"
        )));
    }
    let xc = x.clamp(-1.0, 1.0);
    Ok(((k as f64) * xc.acos()).cos())
}

/// Dense square matrix in row-major storage. Only the handful of operations
/// the toolkit needs; this is deliberately not a linear-algebra library.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }
}

/// Result of a symmetric eigendecomposition: eigenvalues sorted descending,
/// orthonormal eigenvectors stored as the columns of `eigenvectors` in the
/// same order.
#[derive(Clone, Debug)]
pub struct SymEigResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: SquareMatrix,
}

/// Symmetric eigendecomposition by cyclic Jacobi sweeps.
///
/// Converges to `off(A) <= 1e-14 ||A||_F`. All matrices in this toolkit stay
/// below a few thousand rows, where Jacobi's simplicity and accuracy beat
/// anything fancier.
pub fn sym_eig(a: &SquareMatrix) -> Result<SymEigResult> {
    let n = a.n();
    if n == 0 {
        return Err(Error::Domain("sym_eig requires dimension >= 1".into()));
    }
    if !a.is_finite() {
        return Err(Error::Domain("sym_eig input has non-finite entries".into()));
    }
    let scale = a.max_abs();
    if a.max_asymmetry() > 1e-10 * scale.max(1e-300) {
        return Err(Error::Contract(format!(
            "sym_eig input is asymmetric beyond tolerance (max |a_ij - a_ji| = {:e})",
            a.max_asymmetry()
        )));
    }

    let mut m = SquareMatrix::from_fn(n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)));
    let mut v = SquareMatrix::identity(n);
    let fro = m.frobenius();
    let tol = 1e-14 * fro;

    let off = |m: &SquareMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m.get(i, j) * m.get(i, j);
            }
        }
        s.sqrt()
    };

    let mut converged = fro == 0.0;
    for _sweep in 0..100 {
        if off(&m) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= tol / (n as f64).max(1.0) {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    let np = c * akp - s * akq;
                    let nq = s * akp + c * akq;
                    m.set(k, p, np);
                    m.set(p, k, np);
                    m.set(k, q, nq);
                    m.set(q, k, nq);
                }
                m.set(p, p, app - t * apq);
                m.set(q, q, aqq + t * apq);
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged && off(&m) > tol {
        return Err(Error::Numerical(
            "jacobi eigensolver did not converge in 100 sweeps".into(),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).partial_cmp(&m.get(i, i)).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m.get(i, i)).collect();
    let mut eigenvectors = SquareMatrix::zeros(n);
    for (new_col, &old_col) in order.iter().enumerate() {
        let mut col = v.column(old_col);
        // Deterministic sign convention: first component of visible
        // magnitude is made positive.
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                for x in col.iter_mut() {
                    *x = -*x;
                }
            }
        }
        for (row, x) in col.iter().enumerate() {
            eigenvectors.set(row, new_col, *x);
        }
    }
    Ok(SymEigResult {
        eigenvalues,
        eigenvectors,
    })
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x
}

/// Counter-based Gaussian stream keyed by `(seed, stream_id, draw_index)`.
///
/// Every draw is a pure function of the key, so results do not depend on the
/// order in which parallel trials happen to be scheduled. Streams are cheap
/// value types; derive one per trial from `(seed, trial_index)`.
#[derive(Clone, Copy, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    base: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let base = mix64(mix64(seed ^ GOLDEN) ^ mix64(stream_id.wrapping_add(GOLDEN)));
        Self {
            seed,
            stream_id,
            base,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    #[inline]
    fn word(&mut self) -> u64 {
        let w = mix64(self.base ^ self.counter.wrapping_mul(GOLDEN));
        self.counter += 1;
        w
    }

    /// Uniform 64-bit word.
    pub fn next_u64(&mut self) -> u64 {
        self.word()
    }

    /// Uniform draw in `(0, 1]`.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.word() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
    }

    /// One `N(mu, sigma^2)` draw via Box-Muller.
    pub fn next_normal(&mut self, mu: f64, sigma: f64) -> Result<f64> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Domain(format!(
                "normal deviates require sigma >= 0, got {sigma}"
            )));
        }
        let u1 = self.next_uniform();
        let u2 = ((self.word() >> 11) as f64) * (1.0 / 9007199254740992.0);
        if sigma == 0.0 {
            return Ok(mu);
        }
        let r = (-2.0 * u1.ln()).sqrt();
        Ok(mu + sigma * r * (2.0 * std::f64::consts::PI * u2).cos())
    }
}

/// Free-function form of [`RngStream::next_normal`].
pub fn rng_normal(stream: &mut RngStream, mu: f64, sigma: f64) -> Result<f64> {
    stream.next_normal(mu, sigma)
}
