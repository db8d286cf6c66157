//! Diagonal-covariance Gaussian mixtures fit by expectation maximization.
//!
//! Serves as the executable reference for coordinate ascent on a variational
//! lower bound: the E step makes the bound tight, the M step maximizes it,
//! and the data log-likelihood never decreases.

use crate::dist::{NoiseSource, LN_2PI};
use crate::error::{Error, Result};

const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GmmParams {
    /// Mixture weights, a simplex over components.
    pub weights: Vec<f64>,
    /// Per-component means.
    pub means: Vec<Vec<f64>>,
    /// Per-component diagonal variances, floored at 1e-6.
    pub variances: Vec<Vec<f64>>,
}

impl GmmParams {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn validate(&self) -> Result<()> {
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("mixture weights sum to {s}")));
        }
        if self
            .variances
            .iter()
            .flatten()
            .any(|&v| !(v > 0.0))
        {
            return Err(Error::contract("variances must be positive"));
        }
        Ok(())
    }
}

fn log_gaussian_diag(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((&xi, &mi), &vi)| {
            let d = xi - mi;
            -0.5 * (LN_2PI + vi.ln() + d * d / vi)
        })
        .sum()
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + vals.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// ln Σₖ πₖ N(x; μₖ, Σₖ) for a single point, via log-sum-exp.
pub fn gmm_loglik(params: &GmmParams, x: &[f64]) -> f64 {
    let terms: Vec<f64> = (0..params.k())
        .map(|k| params.weights[k].max(1e-300).ln() + log_gaussian_diag(x, &params.means[k], &params.variances[k]))
        .collect();
    log_sum_exp(&terms)
}

/// Mean log-likelihood over a dataset.
pub fn gmm_mean_loglik(params: &GmmParams, data: &[Vec<f64>]) -> f64 {
    data.iter().map(|x| gmm_loglik(params, x)).sum::<f64>() / data.len() as f64
}

/// E step: responsibilities r[n][k] ∝ πₖ N(xₙ; μₖ, Σₖ); rows sum to 1.
pub fn em_e_step(params: &GmmParams, data: &[Vec<f64>]) -> Vec<Vec<f64>> {
    data.iter()
        .map(|x| {
            let logs: Vec<f64> = (0..params.k())
                .map(|k| {
                    params.weights[k].max(1e-300).ln()
                        + log_gaussian_diag(x, &params.means[k], &params.variances[k])
                })
                .collect();
            let lse = log_sum_exp(&logs);
            logs.iter().map(|l| (l - lse).exp()).collect()
        })
        .collect()
}

/// M step: weighted maximum-likelihood updates from responsibilities.
pub fn em_m_step(responsibilities: &[Vec<f64>], data: &[Vec<f64>]) -> GmmParams {
    let n = data.len();
    let k = responsibilities[0].len();
    let d = data[0].len();

    let mut nk = vec![0.0; k];
    for r in responsibilities {
        for (j, &rj) in r.iter().enumerate() {
            nk[j] += rj;
        }
    }

    let mut means = vec![vec![0.0; d]; k];
    for (x, r) in data.iter().zip(responsibilities) {
        for j in 0..k {
            for (mi, &xi) in means[j].iter_mut().zip(x) {
                *mi += r[j] * xi;
            }
        }
    }
    for j in 0..k {
        let denom = nk[j].max(1e-12);
        means[j].iter_mut().for_each(|m| *m /= denom);
    }

    let mut variances = vec![vec![0.0; d]; k];
    for (x, r) in data.iter().zip(responsibilities) {
        for j in 0..k {
            for (vi, (&xi, &mi)) in variances[j].iter_mut().zip(x.iter().zip(&means[j])) {
                let diff = xi - mi;
                *vi += r[j] * diff * diff;
            }
        }
    }
    for j in 0..k {
        let denom = nk[j].max(1e-12);
        variances[j]
            .iter_mut()
            .for_each(|v| *v = (*v / denom).max(VAR_FLOOR));
    }

    let weights = nk.iter().map(|&c| c / n as f64).collect();
    GmmParams {
        weights,
        means,
        variances,
    }
}

/// k-means++-style seeding: first mean uniform, later means drawn with
/// probability proportional to squared distance from the nearest chosen one.
fn seed_means(data: &[Vec<f64>], k: usize, noise: &mut NoiseSource) -> Vec<Vec<f64>> {
    let mut means = Vec::with_capacity(k);
    means.push(data[noise.gen_index(data.len())].clone());
    while means.len() < k {
        let d2: Vec<f64> = data
            .iter()
            .map(|x| {
                means
                    .iter()
                    .map(|m| {
                        x.iter()
                            .zip(m)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            noise.categorical_draw(&d2)
        } else {
            noise.gen_index(data.len())
        };
        means.push(data[idx].clone());
    }
    means
}

/// Fits a k-component diagonal GMM; returns the parameters and the mean
/// log-likelihood trace (initial value first, one entry per iteration
/// after).
pub fn em_fit(
    data: &[Vec<f64>],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<(GmmParams, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::contract("em_fit: empty dataset"));
    }
    if k == 0 || k > data.len() {
        return Err(Error::contract(format!(
            "em_fit: k = {k} invalid for {} points",
            data.len()
        )));
    }
    let d = data[0].len();
    let mut noise = NoiseSource::new(seed);

    // initial params: seeded means, global variance, uniform weights
    let mut global_var = vec![0.0; d];
    let n = data.len() as f64;
    let mut global_mean = vec![0.0; d];
    for x in data {
        for (g, &xi) in global_mean.iter_mut().zip(x) {
            *g += xi / n;
        }
    }
    for x in data {
        for (v, (&xi, &mi)) in global_var.iter_mut().zip(x.iter().zip(&global_mean)) {
            *v += (xi - mi) * (xi - mi) / n;
        }
    }
    global_var.iter_mut().for_each(|v| *v = v.max(VAR_FLOOR));

    let mut params = GmmParams {
        weights: vec![1.0 / k as f64; k],
        means: seed_means(data, k, &mut noise),
        variances: vec![global_var; k],
    };
    params.validate()?;

    let mut trace = vec![gmm_mean_loglik(&params, data)];
    for _ in 0..iters {
        let resp = em_e_step(&params, data);
        params = em_m_step(&resp, data);
        trace.push(gmm_mean_loglik(&params, data));
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_blobs_2d;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standard_normal_density_at_origin() {
        let params = GmmParams {
            weights: vec![1.0],
            means: vec![vec![0.0]],
            variances: vec![vec![1.0]],
        };
        assert_abs_diff_eq!(
            gmm_loglik(&params, &[0.0]),
            -0.5 * LN_2PI,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(gmm_loglik(&params, &[0.0]), -0.9189385, epsilon = 1e-6);
    }

    #[test]
    fn duplicated_component_matches_single() {
        let single = GmmParams {
            weights: vec![1.0],
            means: vec![vec![0.3, -0.7]],
            variances: vec![vec![0.5, 2.0]],
        };
        let dup = GmmParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.3, -0.7], vec![0.3, -0.7]],
            variances: vec![vec![0.5, 2.0], vec![0.5, 2.0]],
        };
        let x = [0.1, 0.4];
        assert_abs_diff_eq!(
            gmm_loglik(&single, &x),
            gmm_loglik(&dup, &x),
            epsilon = 1e-12
        );
    }

    #[test]
    fn loglik_matches_naive_direct_summation() {
        let mut noise = NoiseSource::new(8);
        let params = GmmParams {
            weights: vec![0.2, 0.5, 0.3],
            means: (0..3).map(|_| noise.standard_normal(2)).collect(),
            variances: (0..3)
                .map(|_| noise.uniform(2).iter().map(|u| 0.5 + u).collect())
                .collect(),
        };
        for _ in 0..20 {
            let x = noise.standard_normal(2);
            let naive: f64 = (0..3)
                .map(|j| {
                    let mut dens = 1.0;
                    for i in 0..2 {
                        let v = params.variances[j][i];
                        let d = x[i] - params.means[j][i];
                        dens *= (-0.5 * d * d / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
                    }
                    params.weights[j] * dens
                })
                .sum::<f64>()
                .ln();
            assert_abs_diff_eq!(gmm_loglik(&params, &x), naive, epsilon = 1e-10);
        }
    }

    #[test]
    fn e_step_rows_are_stochastic_and_sensible() {
        let params = GmmParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![-10.0], vec![10.0]],
            variances: vec![vec![1.0], vec![1.0]],
        };
        let data = vec![vec![-10.0], vec![10.0], vec![0.0]];
        let r = em_e_step(&params, &data);
        for row in &r {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        assert!(r[0][0] > 0.999); // well separated point: near one-hot
        assert!(r[1][1] > 0.999);
        assert_abs_diff_eq!(r[2][0], 0.5, epsilon = 1e-9); // equidistant: uniform
    }

    #[test]
    fn equal_components_give_uniform_responsibilities() {
        let params = GmmParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![1.0, 2.0], vec![1.0, 2.0]],
            variances: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        };
        let r = em_e_step(&params, &[vec![0.3, 0.3]]);
        assert_abs_diff_eq!(r[0][0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn m_step_with_onehot_responsibilities_gives_cluster_moments() {
        let data = vec![vec![1.0], vec![3.0], vec![10.0], vec![14.0]];
        let resp = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        let p = em_m_step(&resp, &data);
        assert_abs_diff_eq!(p.means[0][0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.means[1][0], 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.variances[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.variances[1][0], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.weights[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn m_step_single_cluster_recovers_global_moments() {
        let data = vec![vec![0.0], vec![2.0], vec![4.0]];
        let resp = vec![vec![1.0]; 3];
        let p = em_m_step(&resp, &data);
        assert_abs_diff_eq!(p.means[0][0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.variances[0][0], 8.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn m_step_matches_two_pass_weighted_moment_oracle() {
        let mut noise = NoiseSource::new(12);
        let data: Vec<Vec<f64>> = (0..40).map(|_| noise.standard_normal(3)).collect();
        let resp: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let mut r = noise.uniform(2);
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|v| *v /= s);
                r
            })
            .collect();
        let p = em_m_step(&resp, &data);

        for j in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            for i in 0..3 {
                let mean: f64 = data
                    .iter()
                    .zip(&resp)
                    .map(|(x, r)| r[j] * x[i])
                    .sum::<f64>()
                    / nk;
                let var: f64 = data
                    .iter()
                    .zip(&resp)
                    .map(|(x, r)| r[j] * (x[i] - mean) * (x[i] - mean))
                    .sum::<f64>()
                    / nk;
                assert_abs_diff_eq!(p.means[j][i], mean, epsilon = 1e-10);
                assert_abs_diff_eq!(p.variances[j][i], var.max(VAR_FLOOR), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn fit_zero_iters_returns_initial_params() {
        let data = gaussian_blobs_2d(&[(0.0, 0.0)], 20, 1.0, 5);
        let (_, trace) = em_fit(&data, 2, 0, 3).unwrap();
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn fit_recovers_well_separated_clusters() {
        // centers at least 10 sigma apart; enough points that the sample
        // cluster means sit well inside the 0.1 recovery tolerance
        let centers = [(0.0, 0.0), (12.0, 0.0), (0.0, 12.0)];
        let data = gaussian_blobs_2d(&centers, 2000, 1.0, 21);
        let (params, trace) = em_fit(&data, 3, 50, 7).unwrap();

        // monotone trace
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace decreased: {} -> {}", w[0], w[1]);
        }

        // each true center matched by some component within 0.1
        for &(cx, cy) in &centers {
            let best = params
                .means
                .iter()
                .map(|m| ((m[0] - cx).powi(2) + (m[1] - cy).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "center ({cx},{cy}) off by {best}");
        }
    }

    #[test]
    fn loglik_trace_monotone_on_random_datasets() {
        for seed in 0..50u64 {
            let mut noise = NoiseSource::new(1000 + seed);
            let n = 30 + noise.gen_index(40);
            let data: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    noise
                        .standard_normal(2)
                        .iter()
                        .map(|v| 2.0 * v)
                        .collect()
                })
                .collect();
            let k = 2 + noise.gen_index(2);
            let (_, trace) = em_fit(&data, k, 25, seed).unwrap();
            for (i, w) in trace.windows(2).enumerate() {
                assert!(
                    w[1] >= w[0] - 1e-9,
                    "seed {seed} iter {i}: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn fit_rejects_empty_data() {
        assert!(em_fit(&[], 2, 5, 0).is_err());
    }
}
