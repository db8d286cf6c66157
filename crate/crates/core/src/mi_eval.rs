//! Mutual information measurement.
//!
//! Two layers: exact oracles over enumerable discrete joints (used to verify
//! everything else), and estimators for fixed neural models — a variational
//! lower bound obtained by training a fresh auxiliary network, and an
//! analytic KL upper bound.

use crate::dist::NoiseSource;
use crate::error::{Error, Result};

/// Joint probability table p(x = i, z = j): rows index x, columns index z.
#[derive(Debug, Clone)]
pub struct DiscreteJoint {
    table: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        if table.is_empty() || table[0].is_empty() {
            return Err(Error::contract("joint table must be non-empty"));
        }
        let cols = table[0].len();
        if table.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("joint table must be rectangular"));
        }
        if table.iter().flatten().any(|&p| p < 0.0) {
            return Err(Error::contract("joint table has negative entries"));
        }
        let total: f64 = table.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!(
                "joint table sums to {total}, expected 1"
            )));
        }
        Ok(DiscreteJoint { table })
    }

    pub fn n_x(&self) -> usize {
        self.table.len()
    }

    pub fn n_z(&self) -> usize {
        self.table[0].len()
    }

    pub fn prob(&self, x: usize, z: usize) -> f64 {
        self.table[x][z]
    }

    /// Marginal p(x).
    pub fn marginal_x(&self) -> Vec<f64> {
        self.table.iter().map(|r| r.iter().sum()).collect()
    }

    /// Marginal p(z).
    pub fn marginal_z(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_z()];
        for row in &self.table {
            for (j, &p) in row.iter().enumerate() {
                m[j] += p;
            }
        }
        m
    }

    /// Posterior p(z | x = i); rows of zero mass give a uniform posterior.
    pub fn posterior_z_given_x(&self, x: usize) -> Vec<f64> {
        let px: f64 = self.table[x].iter().sum();
        if px == 0.0 {
            return vec![1.0 / self.n_z() as f64; self.n_z()];
        }
        self.table[x].iter().map(|&p| p / px).collect()
    }

    /// Likelihood p(x | z = j).
    pub fn likelihood_x_given_z(&self, z: usize) -> Vec<f64> {
        let pz: f64 = self.table.iter().map(|r| r[z]).sum();
        if pz == 0.0 {
            return vec![1.0 / self.n_x() as f64; self.n_x()];
        }
        self.table.iter().map(|r| r[z] / pz).collect()
    }
}

/// Exact mutual information Σᵢⱼ pᵢⱼ ln(pᵢⱼ / (pᵢ pⱼ)) by enumeration,
/// skipping zero-probability terms. In nats.
pub fn brute_force_mi(joint: &DiscreteJoint) -> f64 {
    let px = joint.marginal_x();
    let pz = joint.marginal_z();
    let mut mi = 0.0;
    for i in 0..joint.n_x() {
        for j in 0..joint.n_z() {
            let p = joint.prob(i, j);
            if p > 0.0 {
                mi += p * (p / (px[i] * pz[j])).ln();
            }
        }
    }
    mi
}

/// Verifies E_{x, y|x}[f(x, y)] = E_{x, y|x, x'|y}[f(x', y)] by exhaustive
/// triple enumeration. Returns (lhs, rhs, |lhs − rhs|).
pub fn lemma1_check(joint: &DiscreteJoint, f: &[Vec<f64>]) -> Result<(f64, f64, f64)> {
    if f.len() != joint.n_x() || f.iter().any(|r| r.len() != joint.n_z()) {
        return Err(Error::Dim {
            context: "lemma1_check f table",
            expected: joint.n_x() * joint.n_z(),
            got: f.iter().map(|r| r.len()).sum(),
        });
    }
    let px = joint.marginal_x();

    let mut lhs = 0.0;
    for i in 0..joint.n_x() {
        let post = joint.posterior_z_given_x(i);
        for j in 0..joint.n_z() {
            lhs += px[i] * post[j] * f[i][j];
        }
    }

    let mut rhs = 0.0;
    for i in 0..joint.n_x() {
        let post = joint.posterior_z_given_x(i);
        for j in 0..joint.n_z() {
            let lik = joint.likelihood_x_given_z(j);
            for (i2, &l) in lik.iter().enumerate() {
                rhs += px[i] * post[j] * l * f[i2][j];
            }
        }
    }

    Ok((lhs, rhs, (lhs - rhs).abs()))
}

/// Fully enumerable latent-variable model built from a joint table: the
/// encoder is the exact posterior p(z|x), the decoder the exact likelihood
/// p(x|z), and the prior the exact marginal p(z). Its MI bound pipeline can
/// be checked against [`brute_force_mi`].
#[derive(Debug, Clone)]
pub struct ToyVae {
    pub joint: DiscreteJoint,
}

impl ToyVae {
    pub fn new(joint: DiscreteJoint) -> Self {
        ToyVae { joint }
    }

    /// Exact value of E_{x~p(x), z~q(z|x), x'~p(x'|z)}[ln Q(z|x')] + H(z) by
    /// triple enumeration, for an arbitrary conditional table Q(z|x').
    pub fn mi_lower_bound_exact(&self, q: &[Vec<f64>]) -> Result<f64> {
        let j = &self.joint;
        if q.len() != j.n_x() || q.iter().any(|r| r.len() != j.n_z()) {
            return Err(Error::Dim {
                context: "toy Q table",
                expected: j.n_x() * j.n_z(),
                got: q.iter().map(|r| r.len()).sum(),
            });
        }
        let px = j.marginal_x();
        let pz = j.marginal_z();
        let h_z = crate::dist::entropy(&pz)?;

        let mut expect = 0.0;
        for x in 0..j.n_x() {
            let post = j.posterior_z_given_x(x);
            for z in 0..j.n_z() {
                let lik = j.likelihood_x_given_z(z);
                for (x2, &l) in lik.iter().enumerate() {
                    let w = px[x] * post[z] * l;
                    if w > 0.0 {
                        expect += w * q[x2][z].max(1e-300).ln();
                    }
                }
            }
        }
        Ok(expect + h_z)
    }

    /// Monte Carlo estimate of the same bound; returns (mean, standard
    /// error) over `n` pipeline draws.
    pub fn mi_lower_bound_mc(
        &self,
        q: &[Vec<f64>],
        n: usize,
        noise: &mut NoiseSource,
    ) -> Result<(f64, f64)> {
        let j = &self.joint;
        let px = j.marginal_x();
        let pz = j.marginal_z();
        let h_z = crate::dist::entropy(&pz)?;

        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = noise.categorical_draw(&px);
            let z = noise.categorical_draw(&j.posterior_z_given_x(x));
            let x2 = noise.categorical_draw(&j.likelihood_x_given_z(z));
            let v = q[x2][z].max(1e-300).ln();
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        Ok((mean + h_z, se))
    }

    /// The exact posterior table Q(z|x) = p(z|x); plugging it into the bound
    /// makes the bound tight.
    pub fn exact_posterior_q(&self) -> Vec<Vec<f64>> {
        (0..self.joint.n_x())
            .map(|x| self.joint.posterior_z_given_x(x))
            .collect()
    }

    /// Conditional table fit by empirical frequencies of `budget` pipeline
    /// draws with additive smoothing; a crude but valid way to "train" Q.
    pub fn fit_q_from_samples(&self, budget: usize, noise: &mut NoiseSource) -> Vec<Vec<f64>> {
        let j = &self.joint;
        let px = j.marginal_x();
        let mut counts = vec![vec![1e-3; j.n_z()]; j.n_x()];
        for _ in 0..budget {
            let x = noise.categorical_draw(&px);
            let z = noise.categorical_draw(&j.posterior_z_given_x(x));
            let x2 = noise.categorical_draw(&j.likelihood_x_given_z(z));
            counts[x2][z] += 1.0;
        }
        for row in &mut counts {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|c| *c /= total);
        }
        counts
    }

    /// E_x[KL(p(z|x) ‖ p(z))] by enumeration. With the exact posterior as
    /// encoder this equals the mutual information, which makes it the
    /// matching upper bound.
    pub fn kl_upper_bound_exact(&self) -> f64 {
        let j = &self.joint;
        let px = j.marginal_x();
        let pz = j.marginal_z();
        let mut kl = 0.0;
        for x in 0..j.n_x() {
            if px[x] == 0.0 {
                continue;
            }
            let post = j.posterior_z_given_x(x);
            let term: f64 = post
                .iter()
                .zip(&pz)
                .filter(|(&q, _)| q > 0.0)
                .map(|(&q, &p)| q * (q / p).ln())
                .sum();
            kl += px[x] * term;
        }
        kl
    }
}

// ── estimators for neural models ────────────────────────────────────

use crate::data::Dataset;
use crate::dist::{categorical_logprob_sum_t, gaussian_log_prob_sum_t};
use crate::models::{AuxModel, MiTarget, QOutput, VaeModel};
use crate::objectives::entropy_const;
use crate::tensor::optim::{clip_global_norm, Adam};
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

/// Budget and sizes for a fresh-Q bound evaluation.
#[derive(Debug, Clone)]
pub struct MiEvalBudget {
    pub q_train_steps: usize,
    pub batch_size: usize,
    pub q_hidden: Vec<usize>,
    pub lr: f64,
    /// Independent evaluation passes used for the standard error.
    pub eval_passes: usize,
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for MiEvalBudget {
    fn default() -> Self {
        MiEvalBudget {
            q_train_steps: 300,
            batch_size: 100,
            q_hidden: vec![64],
            lr: 3e-3,
            eval_passes: 10,
            eval_batch: 200,
            seed: 0,
        }
    }
}

/// A bound estimate with its uncertainty and the Q training curve.
#[derive(Debug, Clone)]
pub struct MiBound {
    pub value: f64,
    pub se: f64,
    pub h_const: f64,
    pub q_training_curve: Vec<f64>,
}

/// Lower and upper MI estimates for one fixed model.
#[derive(Debug, Clone)]
pub struct MiReport {
    pub lower: MiBound,
    pub upper: f64,
    pub upper_se: f64,
}

/// One draw of the bound pipeline for a whole batch: encode, sample the
/// latent (exact categorical draws, not relaxed), decode to Bernoulli means,
/// and return (x′, target values). The target is the selected z subvector or
/// the sampled one-hot, depending on the model's MI target.
fn pipeline_batch(
    model: &VaeModel,
    data: &Dataset,
    idx: &[usize],
    noise: &mut NoiseSource,
) -> Result<(Tensor, Tensor)> {
    let x = data.batch(idx);
    let posts = model.encode(&x, 1.0)?;
    let g = model.layout.gaussian_dim;
    let k = model.layout.categorical_k;
    let b = idx.len();

    let target = model
        .layout
        .mi_target
        .as_ref()
        .ok_or_else(|| Error::contract("model layout has no MI target"))?;

    let mut dec_in = Vec::with_capacity(b * (g + k));
    let tdim = model.layout.target_dim().unwrap();
    let mut targets = Vec::with_capacity(b * tdim);
    for post in &posts {
        let z = post.gauss.reparam_sample(&noise.standard_normal(g))?;
        dec_in.extend_from_slice(&z);
        let mut onehot = Vec::new();
        if let Some(cat) = &post.cat {
            let probs = cat.probs();
            let drawn = noise.categorical_draw(&probs);
            onehot = vec![0.0; k];
            onehot[drawn] = 1.0;
            dec_in.extend_from_slice(&onehot);
        }
        match target {
            MiTarget::GaussianSubvector(cols) => {
                targets.extend(cols.iter().map(|&c| z[c]));
            }
            MiTarget::Categorical => targets.extend_from_slice(&onehot),
        }
    }
    let dec_in = Tensor::from_vec(&[b, g + k], dec_in)?;
    let x_prime = model.decoder.forward_plain(&dec_in)?;
    let targets = Tensor::from_vec(&[b, tdim], targets)?;
    Ok((x_prime, targets))
}

/// Batch mean of ln Q(target | x′) for a fixed Q (no gradients).
fn q_score(aux: &AuxModel, x_prime: &Tensor, targets: &Tensor) -> Result<f64> {
    let b = x_prime.shape()[0];
    let tdim = targets.shape()[1];
    let mut total = 0.0;
    match aux.q_infer(x_prime)? {
        QOutput::Gaussian(params) => {
            for (i, p) in params.iter().enumerate() {
                total += p.log_prob(&targets.data()[i * tdim..(i + 1) * tdim])?;
            }
        }
        QOutput::Categorical(params) => {
            for (i, p) in params.iter().enumerate() {
                total += crate::dist::categorical_logprob(
                    &p.probs(),
                    &targets.data()[i * tdim..(i + 1) * tdim],
                )?;
            }
        }
    }
    Ok(total / b as f64)
}

/// One ascent step of Q on a pipeline batch; the model itself stays out of
/// the tape entirely. Returns the batch bound value before the update.
fn q_fit_step(
    aux: &mut AuxModel,
    opt: &mut Adam,
    x_prime: &Tensor,
    targets: &Tensor,
    h_const: f64,
) -> Result<f64> {
    let b = x_prime.shape()[0];
    let mut tape = Tape::new();
    let aux_bound = aux.bind(&mut tape);
    let xv = tape.leaf(x_prime);
    let tv = tape.leaf(targets);
    let (head_a, head_b) = aux.q_infer_t(&mut tape, &aux_bound, xv)?;
    let log_q = match head_b {
        Some(lv) => gaussian_log_prob_sum_t(&mut tape, tv, head_a, lv)?,
        None => categorical_logprob_sum_t(&mut tape, tv, head_a)?,
    };
    let mean = tape.affine(log_q, 1.0 / b as f64, 0.0);
    let value = tape.scalar_value(mean) + h_const;
    let loss = tape.neg(mean);
    tape.backward(loss)?;
    aux.network.accumulate_grads(&tape, &aux_bound);
    let mut params = aux.params_mut();
    clip_global_norm(&mut params, 5.0);
    opt.step(&mut params)?;
    Ok(value)
}

/// Variational MI lower bound for a fixed model: trains a fresh auxiliary
/// network for `budget.q_train_steps` steps on the sampling pipeline, then
/// reports mean ± SE of the bound over independent evaluation passes.
pub fn mi_lower_bound(model: &VaeModel, data: &Dataset, budget: &MiEvalBudget) -> Result<MiBound> {
    if budget.q_train_steps == 0 {
        return Err(Error::contract("mi_lower_bound: zero training budget"));
    }
    if data.is_empty() {
        return Err(Error::contract("mi_lower_bound: empty dataset"));
    }
    let target = model
        .layout
        .mi_target
        .clone()
        .ok_or_else(|| Error::contract("model layout has no MI target"))?;
    let h_const = entropy_const(&target, model.layout.categorical_k);

    let mut init = NoiseSource::new(budget.seed).derive(0x0a);
    let mut aux = AuxModel::init(
        model.data_dim(),
        &budget.q_hidden,
        &model.layout,
        init.rng_mut(),
    )?;
    let mut opt = Adam::new(budget.lr);
    let mut noise = NoiseSource::new(budget.seed).derive(0x0b);

    let mut curve = Vec::with_capacity(budget.q_train_steps);
    for _ in 0..budget.q_train_steps {
        let idx: Vec<usize> = (0..budget.batch_size)
            .map(|_| noise.gen_index(data.len()))
            .collect();
        let (x_prime, targets) = pipeline_batch(model, data, &idx, &mut noise)?;
        curve.push(q_fit_step(&mut aux, &mut opt, &x_prime, &targets, h_const)?);
    }

    let mut pass_means = Vec::with_capacity(budget.eval_passes);
    for pass in 0..budget.eval_passes {
        let mut pn = NoiseSource::new(budget.seed).derive(0x100 + pass as u64);
        let idx: Vec<usize> = (0..budget.eval_batch)
            .map(|_| pn.gen_index(data.len()))
            .collect();
        let (x_prime, targets) = pipeline_batch(model, data, &idx, &mut pn)?;
        pass_means.push(q_score(&aux, &x_prime, &targets)? + h_const);
    }
    let n = pass_means.len() as f64;
    let mean = pass_means.iter().sum::<f64>() / n;
    let var = pass_means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let se = (var / n).sqrt();

    Ok(MiBound {
        value: mean,
        se,
        h_const,
        q_training_curve: curve,
    })
}

/// Dataset mean (and standard error) of the analytic KL between the
/// posterior over the MI target part and its prior: an upper bound on the
/// mutual information in expectation over the data.
pub fn kl_upper_bound(model: &VaeModel, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::contract("kl_upper_bound: empty dataset"));
    }
    let target = model
        .layout
        .mi_target
        .clone()
        .ok_or_else(|| Error::contract("model layout has no MI target"))?;

    let mut vals = Vec::with_capacity(data.len());
    let chunk = 256;
    let mut i = 0;
    while i < data.len() {
        let idx: Vec<usize> = (i..(i + chunk).min(data.len())).collect();
        let posts = model.encode(&data.batch(&idx), 1.0)?;
        for post in posts {
            let v = match &target {
                MiTarget::GaussianSubvector(cols) => cols
                    .iter()
                    .map(|&c| {
                        let (m, lv) = (post.gauss.mu[c], post.gauss.log_var[c]);
                        0.5 * (m * m + lv.exp() - 1.0 - lv)
                    })
                    .sum(),
                MiTarget::Categorical => {
                    crate::dist::categorical_kl_to_uniform(&post.cat.as_ref().unwrap().probs())?
                }
            };
            vals.push(v);
        }
        i += chunk;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, (var / n).sqrt()))
}

// ── diagnostic statistics ───────────────────────────────────────────

/// Histogram of flattened per-class posterior probabilities over [0, 1].
/// Counts sum to N·K; the value 1.0 lands in the last bin.
pub fn prob_histogram_from_probs<I>(probs: I, bins: usize) -> Vec<usize>
where
    I: IntoIterator<Item = f64>,
{
    let mut counts = vec![0usize; bins];
    for p in probs {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Posterior probability histogram for a model's categorical part.
pub fn categorical_prob_histogram(
    model: &VaeModel,
    data: &Dataset,
    bins: usize,
) -> Result<Vec<usize>> {
    if model.layout.categorical_k == 0 {
        return Err(Error::contract("model has no categorical latent"));
    }
    if bins == 0 {
        return Err(Error::contract("need at least one bin"));
    }
    let mut all = Vec::with_capacity(data.len() * model.layout.categorical_k);
    let mut i = 0;
    while i < data.len() {
        let idx: Vec<usize> = (i..(i + 256).min(data.len())).collect();
        for post in model.encode(&data.batch(&idx), 1.0)? {
            all.extend(post.cat.as_ref().unwrap().probs());
        }
        i += 256;
    }
    Ok(prob_histogram_from_probs(all, bins))
}

/// Argmax posterior category per sample.
pub fn argmax_categories(model: &VaeModel, data: &Dataset) -> Result<Vec<usize>> {
    if model.layout.categorical_k == 0 {
        return Err(Error::contract("model has no categorical latent"));
    }
    let mut cats = Vec::with_capacity(data.len());
    let mut i = 0;
    while i < data.len() {
        let idx: Vec<usize> = (i..(i + 256).min(data.len())).collect();
        for post in model.encode(&data.batch(&idx), 1.0)? {
            let probs = post.cat.as_ref().unwrap().probs();
            let arg = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            cats.push(arg);
        }
        i += 256;
    }
    Ok(cats)
}

/// K×L matrix counting (category, true label) pairs.
pub fn counts_from_assignments(
    cats: &[usize],
    labels: &[usize],
    k: usize,
    l: usize,
) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; l]; k];
    for (&c, &y) in cats.iter().zip(labels) {
        counts[c][y] += 1;
    }
    counts
}

/// Counts of argmax posterior category per true label.
pub fn onehot_label_counts(model: &VaeModel, data: &Dataset) -> Result<Vec<Vec<usize>>> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::contract("onehot_label_counts: dataset has no labels"))?;
    let l = data.num_classes().unwrap();
    let cats = argmax_categories(model, data)?;
    Ok(counts_from_assignments(
        &cats,
        labels,
        model.layout.categorical_k,
        l,
    ))
}

/// Majority-vote classifier accuracy: each category maps to its most common
/// training label (ties broken toward the lower label index), then argmax
/// categories on the test set are scored through that map.
pub fn majority_map_accuracy(
    train_cats: &[usize],
    train_labels: &[usize],
    test_cats: &[usize],
    test_labels: &[usize],
    k: usize,
    l: usize,
) -> f64 {
    let counts = counts_from_assignments(train_cats, train_labels, k, l);
    let map: Vec<usize> = counts
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map_or(0, |(label, _)| label)
        })
        .collect();
    let correct = test_cats
        .iter()
        .zip(test_labels)
        .filter(|(&c, &y)| map[c] == y)
        .count();
    correct as f64 / test_cats.len().max(1) as f64
}

/// End-to-end categorical classifier accuracy of a model: majority map
/// learned on `train`, scored on `test`.
pub fn categorical_accuracy(model: &VaeModel, train: &Dataset, test: &Dataset) -> Result<f64> {
    let train_labels = train
        .labels()
        .ok_or_else(|| Error::contract("categorical_accuracy: train set has no labels"))?;
    let test_labels = test
        .labels()
        .ok_or_else(|| Error::contract("categorical_accuracy: test set has no labels"))?;
    let l = train
        .num_classes()
        .unwrap()
        .max(test.num_classes().unwrap());
    let train_cats = argmax_categories(model, train)?;
    let test_cats = argmax_categories(model, test)?;
    Ok(majority_map_accuracy(
        &train_cats,
        train_labels,
        &test_cats,
        test_labels,
        model.layout.categorical_k,
        l,
    ))
}

/// Convenience: one shot lower + upper bound report for a fixed model.
pub fn mi_report(model: &VaeModel, data: &Dataset, budget: &MiEvalBudget) -> Result<MiReport> {
    let lower = mi_lower_bound(model, data, budget)?;
    let (upper, upper_se) = kl_upper_bound(model, data)?;
    Ok(MiReport {
        lower,
        upper,
        upper_se,
    })
}

#[cfg(test)]
pub(crate) fn random_joint(nx: usize, nz: usize, noise: &mut NoiseSource) -> DiscreteJoint {
    let mut table: Vec<Vec<f64>> = (0..nx).map(|_| noise.uniform(nz)).collect();
    let total: f64 = table.iter().flatten().sum();
    table.iter_mut().flatten().for_each(|p| *p /= total);
    // second pass pins the sum to 1 within 1e-12
    let total: f64 = table.iter().flatten().sum();
    table.iter_mut().flatten().for_each(|p| *p /= total);
    DiscreteJoint::new(table).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn independent_joint() -> DiscreteJoint {
        // non-uniform product marginals
        let px = [0.5, 0.3, 0.2];
        let pz = [0.7, 0.3];
        let table = px
            .iter()
            .map(|&a| pz.iter().map(|&b| a * b).collect())
            .collect();
        DiscreteJoint::new(table).unwrap()
    }

    fn identity_joint(k: usize) -> DiscreteJoint {
        let mut table = vec![vec![0.0; k]; k];
        for (i, row) in table.iter_mut().enumerate() {
            row[i] = 1.0 / k as f64;
        }
        DiscreteJoint::new(table).unwrap()
    }

    #[test]
    fn mi_zero_for_independent_joint() {
        assert_abs_diff_eq!(brute_force_mi(&independent_joint()), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mi_log_k_for_identity_coupling() {
        assert_abs_diff_eq!(
            brute_force_mi(&identity_joint(4)),
            4.0f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn mi_known_two_by_two_table() {
        let j = DiscreteJoint::new(vec![vec![0.4, 0.1], vec![0.1, 0.4]]).unwrap();
        let direct = 2.0 * 0.4 * (0.4f64 / 0.25).ln() + 2.0 * 0.1 * (0.1f64 / 0.25).ln();
        assert_abs_diff_eq!(brute_force_mi(&j), direct, epsilon = 1e-12);
        assert_abs_diff_eq!(brute_force_mi(&j), 0.19274475702175742, epsilon = 1e-12);
    }

    #[test]
    fn mi_stays_in_range_on_random_joints() {
        let mut noise = NoiseSource::new(1);
        for _ in 0..50 {
            let nx = 2 + noise.gen_index(4);
            let nz = 2 + noise.gen_index(4);
            let j = random_joint(nx, nz, &mut noise);
            let mi = brute_force_mi(&j);
            let cap = (nx.min(nz) as f64).ln();
            assert!(mi >= -1e-12 && mi <= cap + 1e-12, "mi {mi} cap {cap}");
        }
    }

    #[test]
    fn lemma1_constant_function() {
        let j = identity_joint(3);
        let f = vec![vec![2.5; 3]; 3];
        let (lhs, rhs, diff) = lemma1_check(&j, &f).unwrap();
        assert_abs_diff_eq!(lhs, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(rhs, 2.5, epsilon = 1e-15);
        assert!(diff < 1e-15);
    }

    #[test]
    fn lemma1_independent_joint_any_f() {
        let j = independent_joint();
        let mut noise = NoiseSource::new(2);
        let f: Vec<Vec<f64>> = (0..3).map(|_| noise.standard_normal(2)).collect();
        let (_, _, diff) = lemma1_check(&j, &f).unwrap();
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn lemma1_hundred_random_cases() {
        let mut noise = NoiseSource::new(3);
        for trial in 0..100 {
            let nx = 2 + noise.gen_index(4); // up to 5
            let nz = 2 + noise.gen_index(4);
            let j = random_joint(nx, nz, &mut noise);
            let f: Vec<Vec<f64>> = (0..nx)
                .map(|_| noise.standard_normal(nz).iter().map(|v| v * 3.0).collect())
                .collect();
            let (lhs, rhs, diff) = lemma1_check(&j, &f).unwrap();
            assert!(diff < 1e-12, "trial {trial}: lhs {lhs} rhs {rhs} diff {diff}");
        }
    }

    #[test]
    fn lemma1_rejects_bad_f_shape() {
        let j = identity_joint(3);
        let f = vec![vec![0.0; 2]; 3];
        assert!(lemma1_check(&j, &f).is_err());
    }

    #[test]
    fn toy_bound_tight_at_exact_posterior() {
        for j in [identity_joint(4), independent_joint()] {
            let toy = ToyVae::new(j);
            let q = toy.exact_posterior_q();
            let bound = toy.mi_lower_bound_exact(&q).unwrap();
            let exact = brute_force_mi(&toy.joint);
            assert_abs_diff_eq!(bound, exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn toy_bound_below_mi_for_arbitrary_q() {
        let mut noise = NoiseSource::new(4);
        for _ in 0..30 {
            let j = random_joint(3, 3, &mut noise);
            let toy = ToyVae::new(j);
            let q: Vec<Vec<f64>> = (0..3)
                .map(|_| {
                    let mut r = noise.uniform(3);
                    let t: f64 = r.iter().sum();
                    r.iter_mut().for_each(|v| *v /= t);
                    r
                })
                .collect();
            let bound = toy.mi_lower_bound_exact(&q).unwrap();
            let exact = brute_force_mi(&toy.joint);
            assert!(bound <= exact + 1e-12, "bound {bound} exceeds exact {exact}");
        }
    }

    #[test]
    fn toy_kl_upper_bound_equals_mi_with_exact_posterior() {
        let mut noise = NoiseSource::new(5);
        for _ in 0..20 {
            let j = random_joint(4, 3, &mut noise);
            let toy = ToyVae::new(j);
            let ub = toy.kl_upper_bound_exact();
            let mi = brute_force_mi(&toy.joint);
            assert!(ub >= mi - 1e-9, "ub {ub} below mi {mi}");
            assert_abs_diff_eq!(ub, mi, epsilon = 1e-9);
        }
    }

    #[test]
    fn toy_mc_bound_agrees_with_exact() {
        let mut noise = NoiseSource::new(6);
        let j = DiscreteJoint::new(vec![vec![0.4, 0.1], vec![0.1, 0.4]]).unwrap();
        let toy = ToyVae::new(j);
        let q = toy.exact_posterior_q();
        let exact = toy.mi_lower_bound_exact(&q).unwrap();
        let (mc, se) = toy.mi_lower_bound_mc(&q, 100_000, &mut noise).unwrap();
        assert!((mc - exact).abs() < 3.0 * se, "mc {mc} exact {exact} se {se}");
    }

    // ── neural estimators ───────────────────────────────────────────

    use crate::data::toy_blob_images;
    use crate::models::LatentLayout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cat_model(seed: u64) -> VaeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VaeModel::init(
            256,
            &[32],
            LatentLayout {
                gaussian_dim: 4,
                categorical_k: 5,
                mi_target: Some(MiTarget::Categorical),
            },
            &mut rng,
        )
        .unwrap()
    }

    fn quick_budget(seed: u64) -> MiEvalBudget {
        MiEvalBudget {
            q_train_steps: 120,
            batch_size: 32,
            q_hidden: vec![16],
            lr: 5e-3,
            eval_passes: 10,
            eval_batch: 64,
            seed,
        }
    }

    #[test]
    fn disconnected_target_gives_bound_near_zero() {
        // Independence needs both ends cut: zero the decoder's input weights
        // on the categorical columns (x′ ignores c) and the encoder's logit
        // head (q(c|x) uniform for every x, so c is not coupled to x′
        // through x either). Then I(c; x′) = 0 and the bound must sit at ≈ 0.
        let mut m = cat_model(60);
        let g = m.layout.gaussian_dim;
        let k = m.layout.categorical_k;
        {
            let first = &mut m.decoder.layers[0];
            let (out, inp) = (first.output_dim(), first.input_dim());
            let w = first.weights.data_mut();
            for o in 0..out {
                for c in g..g + k {
                    w[o * inp + c] = 0.0;
                }
            }
            assert_eq!(inp, g + k);
        }
        {
            let head = m.encoder.layers.last_mut().unwrap();
            let (out, inp) = (head.output_dim(), head.input_dim());
            let w = head.weights.data_mut();
            for o in 2 * g..out {
                for i in 0..inp {
                    w[o * inp + i] = 0.0;
                }
            }
            for o in 2 * g..out {
                head.bias.data_mut()[o] = 0.0;
            }
        }
        let data = toy_blob_images(32, 61);
        let bound = mi_lower_bound(&m, &data, &quick_budget(62)).unwrap();
        assert!(
            bound.value <= 3.0 * bound.se,
            "bound {} se {} should be ~0",
            bound.value,
            bound.se
        );
        assert!(
            bound.value >= -0.35,
            "trained Q should approach the uniform floor, got {}",
            bound.value
        );
    }

    #[test]
    fn q_training_curve_tightens() {
        let m = cat_model(63);
        let data = toy_blob_images(32, 64);
        let bound = mi_lower_bound(&m, &data, &quick_budget(65)).unwrap();
        let c = &bound.q_training_curve;
        assert_eq!(c.len(), 120);
        let head: f64 = c[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = c[c.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail >= head, "curve did not improve: {head} -> {tail}");
    }

    #[test]
    fn mi_lower_bound_deterministic_under_seed() {
        let m = cat_model(66);
        let data = toy_blob_images(16, 67);
        let mut b = quick_budget(68);
        b.q_train_steps = 30;
        let r1 = mi_lower_bound(&m, &data, &b).unwrap();
        let r2 = mi_lower_bound(&m, &data, &b).unwrap();
        assert_eq!(r1.value, r2.value);
        assert_eq!(r1.q_training_curve, r2.q_training_curve);
    }

    #[test]
    fn kl_upper_bound_zero_for_prior_posterior() {
        let mut m = cat_model(70);
        for layer in &mut m.encoder.layers {
            layer.weights.data_mut().iter_mut().for_each(|w| *w = 0.0);
            layer.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
        }
        let data = toy_blob_images(16, 71);
        let (ub, _) = kl_upper_bound(&m, &data).unwrap();
        assert_abs_diff_eq!(ub, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_upper_bound_respects_categorical_ceiling() {
        let m = cat_model(72);
        let data = toy_blob_images(16, 73);
        let (ub, _) = kl_upper_bound(&m, &data).unwrap();
        assert!(ub >= 0.0);
        assert!(ub <= (m.layout.categorical_k as f64).ln() + 1e-9);
    }

    #[test]
    fn histogram_edges_and_conservation() {
        // uniform probabilities: all mass in the bin containing 1/K
        let k = 5;
        let n = 40;
        let probs = vec![1.0 / k as f64; n * k];
        let h = prob_histogram_from_probs(probs, 10);
        assert_eq!(h[2], n * k); // 0.2 lands in bin [0.2, 0.3)
        assert_eq!(h.iter().sum::<usize>(), n * k);

        // one-hot posteriors: (K−1):1 split between the 0-bin and the 1-bin
        let mut onehot = Vec::new();
        for _ in 0..n {
            onehot.extend((0..k).map(|i| if i == 0 { 1.0 } else { 0.0 }));
        }
        let h = prob_histogram_from_probs(onehot, 10);
        assert_eq!(h[0], n * (k - 1));
        assert_eq!(h[9], n);
    }

    #[test]
    fn model_histogram_counts_conserved() {
        let m = cat_model(74);
        let data = toy_blob_images(20, 75);
        let h = categorical_prob_histogram(&m, &data, 20).unwrap();
        assert_eq!(h.iter().sum::<usize>(), 20 * m.layout.categorical_k);
    }

    #[test]
    fn label_count_matrix_properties() {
        // deterministic category = label → permutation-like matrix
        let cats: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let labels = cats.clone();
        let counts = counts_from_assignments(&cats, &labels, 4, 4);
        for (c, row) in counts.iter().enumerate() {
            for (l, &v) in row.iter().enumerate() {
                assert_eq!(v, if c == l { 10 } else { 0 });
            }
        }
        // row and column sums match the assignment counts
        let total: usize = counts.iter().flatten().sum();
        assert_eq!(total, 40);

        // uniform random assignment: cells ≈ N/(K·L) within 3 binomial SE
        let mut noise = NoiseSource::new(76);
        let n = 40_000;
        let cats: Vec<usize> = (0..n).map(|_| noise.gen_index(4)).collect();
        let labels: Vec<usize> = (0..n).map(|_| noise.gen_index(5)).collect();
        let counts = counts_from_assignments(&cats, &labels, 4, 5);
        let p = 1.0 / 20.0;
        let expect = n as f64 * p;
        let se = (n as f64 * p * (1.0 - p)).sqrt();
        for row in &counts {
            for &v in row {
                assert!((v as f64 - expect).abs() < 3.0 * se, "cell {v} vs {expect}");
            }
        }
    }

    #[test]
    fn majority_accuracy_cases() {
        // perfect 1:1 encoder → 1.0
        let cats: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let labels = cats.clone();
        assert_abs_diff_eq!(
            majority_map_accuracy(&cats, &labels, &cats, &labels, 10, 10),
            1.0
        );

        // uniform random categories on balanced labels → ≈ chance
        let mut noise = NoiseSource::new(77);
        let n = 20_000;
        let train_cats: Vec<usize> = (0..n).map(|_| noise.gen_index(10)).collect();
        let train_labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let test_cats: Vec<usize> = (0..n).map(|_| noise.gen_index(10)).collect();
        let acc = majority_map_accuracy(&train_cats, &train_labels, &test_cats, &train_labels, 10, 10);
        assert!((acc - 0.1).abs() < 0.02, "chance-level accuracy, got {acc}");

        // tie-breaking: category 0 seen equally with labels 1 and 2 → maps
        // to the lower label index
        let t_cats = vec![0, 0];
        let t_labels = vec![2, 1];
        let acc = majority_map_accuracy(&t_cats, &t_labels, &[0], &[1], 1, 3);
        assert_abs_diff_eq!(acc, 1.0);
    }
}
