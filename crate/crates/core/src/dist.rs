//! Distribution primitives: diagonal Gaussians with reparametrized sampling,
//! categoricals with the Gumbel-softmax relaxation, Bernoulli likelihoods,
//! entropies and KL terms.
//!
//! Everything works in nats. Each primitive comes in value form (plain f64,
//! used by evaluation and oracles) and, where gradients must flow, in
//! recorded form suffixed `_t` that builds on a [`Tape`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var, PROB_EPS};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Diagonal Gaussian posterior parameters (mean and log-variance per
/// dimension). Log-variance keeps the optimization unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussianParams {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussianParams {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mu.len() != log_var.len() {
            return Err(Error::Dim {
                context: "DiagGaussianParams",
                expected: mu.len(),
                got: log_var.len(),
            });
        }
        if !log_var.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("log_var must be finite"));
        }
        Ok(DiagGaussianParams { mu, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussianParams {
            mu: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    /// z = μ + σ ⊙ ε with σ = exp(log_var / 2).
    pub fn reparam_sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if eps.len() != self.mu.len() {
            return Err(Error::Dim {
                context: "reparam_sample eps",
                expected: self.mu.len(),
                got: eps.len(),
            });
        }
        Ok(self
            .mu
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((&m, &lv), &e)| m + (lv / 2.0).exp() * e)
            .collect())
    }

    /// Closed-form KL(N(μ, σ²) ‖ N(0, I)) = Σ ½(μ² + σ² − 1 − ln σ²).
    pub fn kl_to_std(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.log_var)
            .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
            .sum()
    }

    /// Log-density of `z` under this Gaussian.
    pub fn log_prob(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.mu.len() {
            return Err(Error::Dim {
                context: "gaussian log_prob",
                expected: self.mu.len(),
                got: z.len(),
            });
        }
        Ok(self
            .mu
            .iter()
            .zip(&self.log_var)
            .zip(z)
            .map(|((&m, &lv), &zi)| {
                let d = zi - m;
                -0.5 * (LN_2PI + lv + d * d * (-lv).exp())
            })
            .sum())
    }
}

/// Categorical posterior parameters: unnormalized log-probabilities and a
/// relaxation temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalParams {
    pub logits: Vec<f64>,
    pub tau: f64,
}

impl CategoricalParams {
    pub fn new(logits: Vec<f64>, tau: f64) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::contract("categorical needs K >= 2"));
        }
        if !(tau > 0.0) {
            return Err(Error::contract(format!(
                "temperature must be > 0, got {tau}"
            )));
        }
        Ok(CategoricalParams { logits, tau })
    }

    pub fn k(&self) -> usize {
        self.logits.len()
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    /// yᵢ = exp((log πᵢ + gᵢ)/τ) / Σⱼ exp((log πⱼ + gⱼ)/τ).
    ///
    /// Shift invariance of softmax lets the unnormalized logits stand in for
    /// log π directly.
    pub fn gumbel_softmax_sample(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.logits.len() {
            return Err(Error::Dim {
                context: "gumbel_softmax g",
                expected: self.logits.len(),
                got: g.len(),
            });
        }
        let scaled: Vec<f64> = self
            .logits
            .iter()
            .zip(g)
            .map(|(&l, &gi)| (l + gi) / self.tau)
            .collect();
        Ok(softmax(&scaled))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn check_simplex(probs: &[f64], context: &'static str) -> Result<()> {
    if probs.iter().any(|&p| p < 0.0) {
        return Err(Error::contract(format!("{context}: negative probability")));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::contract(format!(
            "{context}: probabilities sum to {s}"
        )));
    }
    Ok(())
}

/// Shannon entropy −Σ pᵢ ln pᵢ with 0·ln 0 := 0.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    check_simplex(probs, "entropy")?;
    Ok(probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum())
}

/// KL(p ‖ uniform over K) = Σ pᵢ ln(pᵢ K), in [0, ln K].
pub fn categorical_kl_to_uniform(probs: &[f64]) -> Result<f64> {
    check_simplex(probs, "categorical_kl_to_uniform")?;
    let k = probs.len() as f64;
    Ok(probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p * k).ln())
        .sum())
}

/// Σ xᵢ ln pᵢ + (1−xᵢ) ln(1−pᵢ) with p clamped to [1e-7, 1−1e-7].
pub fn bernoulli_loglik(x: &[f64], p: &[f64]) -> Result<f64> {
    if x.len() != p.len() {
        return Err(Error::Dim {
            context: "bernoulli_loglik",
            expected: x.len(),
            got: p.len(),
        });
    }
    if x.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::contract("bernoulli_loglik: x outside [0, 1]"));
    }
    Ok(x.iter()
        .zip(p)
        .map(|(&xi, &pi)| {
            let ph = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
            xi * ph.ln() + (1.0 - xi) * (1.0 - ph).ln()
        })
        .sum())
}

/// Σ yᵢ ln probsᵢ: exact log-mass for one-hot y, cross-entropy surrogate for
/// relaxed y.
pub fn categorical_logprob(probs: &[f64], y: &[f64]) -> Result<f64> {
    if probs.len() != y.len() {
        return Err(Error::Dim {
            context: "categorical_logprob",
            expected: probs.len(),
            got: y.len(),
        });
    }
    check_simplex(probs, "categorical_logprob")?;
    Ok(y.iter()
        .zip(probs)
        .map(|(&yi, &pi)| yi * pi.clamp(PROB_EPS, 1.0).ln())
        .sum())
}

// ── recorded (differentiable) forms ─────────────────────────────────

/// z = μ + exp(log_var/2) ⊙ ε on the tape; `eps` is a constant leaf.
pub fn reparam_sample_t(tape: &mut Tape, mu: Var, log_var: Var, eps: Var) -> Result<Var> {
    let half_lv = tape.affine(log_var, 0.5, 0.0);
    let sigma = tape.exp(half_lv);
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

/// Scalar Σ over all elements of ½(μ² + e^lv − 1 − lv).
pub fn gaussian_kl_sum_t(tape: &mut Tape, mu: Var, log_var: Var) -> Result<Var> {
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(log_var);
    let a = tape.add(mu2, var)?;
    let b = tape.affine(log_var, -1.0, -1.0);
    let elems = tape.add(a, b)?;
    let s = tape.sum_all(elems);
    Ok(tape.affine(s, 0.5, 0.0))
}

/// Row-wise Gumbel-softmax samples: softmax((logits + g)/τ).
pub fn gumbel_softmax_t(tape: &mut Tape, logits: Var, g: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::contract(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    let shifted = tape.add(logits, g)?;
    let scaled = tape.affine(shifted, 1.0 / tau, 0.0);
    tape.softmax_rows(scaled)
}

/// Scalar Σ over rows of KL(softmax(logits) ‖ uniform) = Σ π (ln π + ln K).
pub fn categorical_kl_uniform_sum_t(tape: &mut Tape, logits: Var) -> Result<Var> {
    let k = tape.shape_of(logits)[1] as f64;
    let p = tape.softmax_rows(logits)?;
    let lp = tape.log_softmax_rows(logits)?;
    let shifted = tape.affine(lp, 1.0, k.ln());
    let prod = tape.mul(p, shifted)?;
    Ok(tape.sum_all(prod))
}

/// Scalar Σ over all elements of the Gaussian log-density of `target` under
/// (μ, log_var); all three operands may carry gradients.
pub fn gaussian_log_prob_sum_t(tape: &mut Tape, target: Var, mu: Var, log_var: Var) -> Result<Var> {
    let diff = tape.sub(target, mu)?;
    let diff2 = tape.mul(diff, diff)?;
    let neg_lv = tape.neg(log_var);
    let inv_var = tape.exp(neg_lv);
    let mahal = tape.mul(diff2, inv_var)?;
    let inner = tape.add(mahal, log_var)?;
    let ll = tape.affine(inner, -0.5, -0.5 * LN_2PI);
    Ok(tape.sum_all(ll))
}

/// Scalar Σ over rows of Σₖ yₖ · log_softmax(logits)ₖ.
pub fn categorical_logprob_sum_t(tape: &mut Tape, y: Var, logits: Var) -> Result<Var> {
    let lp = tape.log_softmax_rows(logits)?;
    let prod = tape.mul(y, lp)?;
    Ok(tape.sum_all(prod))
}

// ── noise ───────────────────────────────────────────────────────────

/// Seeded pseudo-random stream for all sampling in the crate. Identical
/// seeds give identical streams.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream position, for checkpointing.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    /// Independent stream derived from this source's seed and a label.
    pub fn derive(&self, label: u64) -> NoiseSource {
        NoiseSource::new(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ label)
    }

    pub fn standard_normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    /// Standard Gumbel(0,1) via −ln(−ln u), u uniform in the open interval.
    pub fn gumbel(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u = loop {
                    let u: f64 = self.rng.gen();
                    if u > 0.0 {
                        break u;
                    }
                };
                -(-u.ln()).ln()
            })
            .collect()
    }

    pub fn uniform(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.gen::<f64>()).collect()
    }

    pub fn gen_index(&mut self, bound: usize) -> usize {
        self.rng.gen_range(0..bound)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }

    /// Draws an index from an unnormalized weight vector.
    pub fn categorical_draw(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.gen::<f64>() * total;
        for (i, &w) in weights.iter().enumerate() {
            u -= w;
            if u <= 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, DEFAULT_STEP, DEFAULT_TOL};
    use crate::tensor::Tensor;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reparam_zero_eps_returns_mean() {
        let p = DiagGaussianParams::new(vec![0.3, -1.2], vec![0.5, 1.0]).unwrap();
        assert_eq!(p.reparam_sample(&[0.0, 0.0]).unwrap(), vec![0.3, -1.2]);
    }

    #[test]
    fn reparam_scalar_case() {
        // μ=1, log_var=ln 4 (σ=2), ε=0.5 → z = 2
        let p = DiagGaussianParams::new(vec![1.0], vec![4.0f64.ln()]).unwrap();
        assert_abs_diff_eq!(p.reparam_sample(&[0.5]).unwrap()[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn reparam_length_mismatch_errors() {
        let p = DiagGaussianParams::new(vec![0.0], vec![0.0]).unwrap();
        assert!(p.reparam_sample(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn reparam_monte_carlo_moments() {
        let (mu, var): (f64, f64) = (0.7, 2.25);
        let p = DiagGaussianParams::new(vec![mu], vec![var.ln()]).unwrap();
        let mut noise = NoiseSource::new(42);
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| p.reparam_sample(&noise.standard_normal(1)).unwrap()[0])
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let sample_var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
        // 3 standard errors: SE(mean) = σ/√n, SE(var) ≈ σ²√(2/n)
        let se_mean = var.sqrt() / (n as f64).sqrt();
        let se_var = var * (2.0 / n as f64).sqrt();
        assert!((mean - mu).abs() < 3.0 * se_mean, "mean {mean}");
        assert!((sample_var - var).abs() < 3.0 * se_var, "var {sample_var}");
    }

    #[test]
    fn kl_zero_for_standard_normal() {
        let p = DiagGaussianParams::standard(5);
        assert_eq!(p.kl_to_std(), 0.0);
    }

    #[test]
    fn kl_unit_mean_shift_is_half() {
        let p = DiagGaussianParams::new(vec![1.0], vec![0.0]).unwrap();
        assert_abs_diff_eq!(p.kl_to_std(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn kl_matches_numerical_integration() {
        // Simpson quadrature of ∫ q(z) ln(q(z)/p(z)) dz, an oracle
        // independent of the closed form.
        for &(mu, lv) in &[(1.0, 0.0), (0.0, 1.0), (-0.7, -0.5), (2.0, 0.8)] {
            let p = DiagGaussianParams::new(vec![mu], vec![lv]).unwrap();
            let sigma = (lv / 2.0f64).exp();
            let (lo, hi) = (mu - 12.0 * sigma.max(1.0), mu + 12.0 * sigma.max(1.0));
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let integrand = |z: f64| {
                let lq = -0.5 * (LN_2PI + lv + (z - mu) * (z - mu) / (sigma * sigma));
                let lp = -0.5 * (LN_2PI + z * z);
                lq.exp() * (lq - lp)
            };
            let mut acc = integrand(lo) + integrand(hi);
            for i in 1..n {
                let z = lo + i as f64 * h;
                acc += integrand(z) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let quad = acc * h / 3.0;
            assert_abs_diff_eq!(p.kl_to_std(), quad, epsilon = 1e-6);
        }
    }

    #[test]
    fn kl_additive_over_dimensions() {
        let a = DiagGaussianParams::new(vec![0.5], vec![0.3]).unwrap();
        let b = DiagGaussianParams::new(vec![-1.0], vec![-0.2]).unwrap();
        let joint = DiagGaussianParams::new(vec![0.5, -1.0], vec![0.3, -0.2]).unwrap();
        assert_abs_diff_eq!(
            joint.kl_to_std(),
            a.kl_to_std() + b.kl_to_std(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn gumbel_softmax_symmetry_gives_uniform() {
        let p = CategoricalParams::new(vec![0.4; 5], 0.7).unwrap();
        let y = p.gumbel_softmax_sample(&[1.3; 5]).unwrap();
        for v in y {
            assert_abs_diff_eq!(v, 0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn gumbel_softmax_two_class_value() {
        let p = CategoricalParams::new(vec![0.0, 0.0], 1.0).unwrap();
        let y = p.gumbel_softmax_sample(&[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(y[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], 1.0 / (e + 1.0), epsilon = 1e-12);
    }

    #[test]
    fn gumbel_softmax_low_temperature_is_one_hot() {
        let p = CategoricalParams::new(vec![0.2, 1.5, -0.3], 1e-3).unwrap();
        let g = [0.1, -0.2, 0.05];
        let y = p.gumbel_softmax_sample(&g).unwrap();
        // argmax of logits + g is index 1
        assert!((y[1] - 1.0).abs() < 1e-6);
        assert!(y[0] < 1e-6 && y[2] < 1e-6);
    }

    #[test]
    fn invalid_temperature_rejected() {
        assert!(CategoricalParams::new(vec![0.0, 0.0], 0.0).is_err());
        assert!(CategoricalParams::new(vec![0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn gumbel_argmax_matches_class_probabilities() {
        // Gumbel-max consistency: at low τ the argmax of samples follows
        // softmax(logits).
        let logits = vec![0.5, -0.3, 1.1, 0.0];
        let p = CategoricalParams::new(logits.clone(), 0.1).unwrap();
        let probs = p.probs();
        let mut noise = NoiseSource::new(2024);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let y = p.gumbel_softmax_sample(&noise.gumbel(4)).unwrap();
            let arg = y
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            counts[arg] += 1;
        }
        for k in 0..4 {
            let freq = counts[k] as f64 / n as f64;
            let se = (probs[k] * (1.0 - probs[k]) / n as f64).sqrt();
            assert!(
                (freq - probs[k]).abs() < 3.0 * se,
                "class {k}: freq {freq} vs prob {}",
                probs[k]
            );
        }
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(entropy(&[0.5, 0.5]).unwrap(), 2.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(entropy(&[0.1; 10]).unwrap(), 2.302585, epsilon = 1e-6);
    }

    #[test]
    fn categorical_kl_values() {
        assert_abs_diff_eq!(
            categorical_kl_to_uniform(&[0.25; 4]).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let mut onehot = vec![0.0; 10];
        onehot[3] = 1.0;
        assert_abs_diff_eq!(
            categorical_kl_to_uniform(&onehot).unwrap(),
            10.0f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            categorical_kl_to_uniform(&[0.5, 0.5, 0.0, 0.0]).unwrap(),
            2.0f64.ln(),
            epsilon = 1e-12
        );
        assert!(categorical_kl_to_uniform(&[1.2, -0.2]).is_err());
    }

    #[test]
    fn bernoulli_loglik_values() {
        let d = 7;
        assert_abs_diff_eq!(
            bernoulli_loglik(&vec![0.5; d], &vec![0.5; d]).unwrap(),
            -(d as f64) * 2.0f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            bernoulli_loglik(&[1.0], &[0.9]).unwrap(),
            0.9f64.ln(),
            epsilon = 1e-12
        );
        assert!(bernoulli_loglik(&[1.5], &[0.5]).is_err());
    }

    #[test]
    fn bernoulli_loglik_matches_naive_summation() {
        let mut noise = NoiseSource::new(5);
        let x = noise.uniform(32);
        let p = noise.uniform(32);
        let naive: f64 = (0..32)
            .map(|i| {
                let ph = p[i].clamp(PROB_EPS, 1.0 - PROB_EPS);
                x[i] * ph.ln() + (1.0 - x[i]) * (1.0 - ph).ln()
            })
            .sum();
        assert_abs_diff_eq!(bernoulli_loglik(&x, &p).unwrap(), naive, epsilon = 1e-12);
    }

    #[test]
    fn categorical_logprob_values() {
        let probs = softmax(&[0.3, -0.2, 0.9]);
        let onehot = [0.0, 0.0, 1.0];
        assert_abs_diff_eq!(
            categorical_logprob(&probs, &onehot).unwrap(),
            probs[2].ln(),
            epsilon = 1e-12
        );
        let k = 4;
        let uni = vec![1.0 / k as f64; k];
        assert_abs_diff_eq!(
            categorical_logprob(&uni, &uni).unwrap(),
            -(k as f64).ln(),
            epsilon = 1e-12
        );
        // mixed case against direct summation
        let y = [0.2, 0.3, 0.5];
        let direct: f64 = y.iter().zip(&probs).map(|(&yi, &pi)| yi * pi.ln()).sum();
        assert_abs_diff_eq!(
            categorical_logprob(&probs, &y).unwrap(),
            direct,
            epsilon = 1e-12
        );
    }

    #[test]
    fn noise_deterministic_under_seed() {
        let mut a = NoiseSource::new(99);
        let mut b = NoiseSource::new(99);
        assert_eq!(a.standard_normal(16), b.standard_normal(16));
        assert_eq!(a.gumbel(16), b.gumbel(16));
        assert_eq!(a.uniform(16), b.uniform(16));
        let mut c = NoiseSource::new(100);
        assert_ne!(a.standard_normal(16), c.standard_normal(16));
    }

    #[test]
    fn reparam_gradients_pass_fd_check() {
        let mut noise = NoiseSource::new(31);
        for _ in 0..10 {
            let mu = Tensor::from_vec(&[2, 3], noise.standard_normal(6)).unwrap();
            let lv = Tensor::from_vec(&[2, 3], noise.standard_normal(6)).unwrap();
            let eps = noise.standard_normal(6);
            let rep = check_gradients(
                &[mu, lv],
                |tape, vars| {
                    let e = tape.leaf_from(&[2, 3], eps.clone());
                    let z = reparam_sample_t(tape, vars[0], vars[1], e).unwrap();
                    let sq = tape.mul(z, z).unwrap();
                    tape.sum_all(sq)
                },
                DEFAULT_STEP,
            );
            assert!(rep.passes(DEFAULT_TOL), "rel err {}", rep.max_rel_err);
        }
    }

    #[test]
    fn gumbel_softmax_gradients_pass_fd_check() {
        let mut noise = NoiseSource::new(37);
        for &tau in &[0.4, 1.0, 2.5] {
            let logits = Tensor::from_vec(&[2, 4], noise.standard_normal(8)).unwrap();
            let g = noise.gumbel(8);
            let rep = check_gradients(
                &[logits],
                |tape, vars| {
                    let gv = tape.leaf_from(&[2, 4], g.clone());
                    let y = gumbel_softmax_t(tape, vars[0], gv, tau).unwrap();
                    let sq = tape.mul(y, y).unwrap();
                    tape.sum_all(sq)
                },
                DEFAULT_STEP,
            );
            assert!(
                rep.passes(DEFAULT_TOL),
                "tau {tau}: rel err {}",
                rep.max_rel_err
            );
        }
    }

    #[test]
    fn recorded_forms_match_value_forms() {
        let mut noise = NoiseSource::new(41);
        let mu = noise.standard_normal(4);
        let lv = noise.standard_normal(4);
        let eps = noise.standard_normal(4);
        let p = DiagGaussianParams::new(mu.clone(), lv.clone()).unwrap();

        let mut tape = Tape::new();
        let muv = tape.leaf_from(&[1, 4], mu);
        let lvv = tape.leaf_from(&[1, 4], lv);
        let ev = tape.leaf_from(&[1, 4], eps.clone());
        let z = reparam_sample_t(&mut tape, muv, lvv, ev).unwrap();
        assert_eq!(tape.value(z), &p.reparam_sample(&eps).unwrap()[..]);

        let kl = gaussian_kl_sum_t(&mut tape, muv, lvv).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(kl), p.kl_to_std(), epsilon = 1e-12);
    }

    #[test]
    fn categorical_kl_recorded_matches_value_form() {
        let logits = vec![0.3, -1.0, 0.7, 0.1];
        let probs = softmax(&logits);
        let mut tape = Tape::new();
        let lv = tape.leaf_from(&[1, 4], logits);
        let kl = categorical_kl_uniform_sum_t(&mut tape, lv).unwrap();
        assert_abs_diff_eq!(
            tape.scalar_value(kl),
            categorical_kl_to_uniform(&probs).unwrap(),
            epsilon = 1e-12
        );
    }
}
