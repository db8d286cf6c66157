//! Training objectives: the evidence lower bound and its weighted and
//! capacity-controlled variants, the mutual-information regularizer, and the
//! combined objective.
//!
//! Builders append to a [`Tape`] and return scalar nodes, so the same code
//! path serves training (gradients) and evaluation (values). Reconstruction
//! and KL terms are batch means in nats.

use crate::dist::{
    categorical_kl_uniform_sum_t, categorical_logprob_sum_t, gaussian_kl_sum_t,
    gaussian_log_prob_sum_t, gumbel_softmax_t, reparam_sample_t, NoiseSource, LN_2PI,
};
use crate::error::{Error, Result};
use crate::models::{AuxModel, BoundVae, MiTarget, Posterior, VaeModel};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{BoundMlp, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveVariant {
    /// recon − KL
    Elbo,
    /// recon − β·KL
    Beta,
    /// recon − γ·|KL − C|
    Capacity,
}

#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    pub variant: ObjectiveVariant,
    pub beta: f64,
    pub gamma: f64,
    pub capacity: f64,
    /// Weight of the MI regularizer; 0 disables the MI path.
    pub lambda: f64,
    pub mc_samples: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            variant: ObjectiveVariant::Elbo,
            beta: 1.0,
            gamma: 0.0,
            capacity: 0.0,
            lambda: 0.0,
            mc_samples: 1,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::contract("mc_samples must be >= 1"));
        }
        if self.lambda < 0.0 {
            return Err(Error::contract("lambda must be >= 0"));
        }
        match self.variant {
            ObjectiveVariant::Elbo => {}
            ObjectiveVariant::Beta => {
                if self.beta < 0.0 {
                    return Err(Error::contract("beta must be >= 0"));
                }
            }
            ObjectiveVariant::Capacity => {
                if self.gamma < 0.0 || self.capacity < 0.0 {
                    return Err(Error::contract("gamma and capacity must be >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn mi_enabled(&self) -> bool {
        self.lambda > 0.0
    }
}

/// Scalar values of one objective evaluation, all in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    pub recon: f64,
    pub kl_gauss: f64,
    pub kl_cat: f64,
    pub mi_term: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    /// Recomputes `total` from the parts under the active variant formula.
    pub fn recompose(&self, cfg: &ObjectiveConfig) -> f64 {
        let kl = self.kl_gauss + self.kl_cat;
        let base = match cfg.variant {
            ObjectiveVariant::Elbo => self.recon - kl,
            ObjectiveVariant::Beta => self.recon - cfg.beta * kl,
            ObjectiveVariant::Capacity => self.recon - cfg.gamma * (kl - cfg.capacity).abs(),
        };
        base + cfg.lambda * self.mi_term
    }
}

/// Tape nodes for the objective terms; `total` is the maximization target.
pub struct ObjectiveVars {
    pub recon: Var,
    pub kl_gauss: Var,
    pub kl_cat: Option<Var>,
    pub mi_term: Option<Var>,
    pub total: Var,
}

impl ObjectiveVars {
    pub fn eval(&self, tape: &Tape) -> ObjectiveBreakdown {
        ObjectiveBreakdown {
            recon: tape.scalar_value(self.recon),
            kl_gauss: tape.scalar_value(self.kl_gauss),
            kl_cat: self.kl_cat.map_or(0.0, |v| tape.scalar_value(v)),
            mi_term: self.mi_term.map_or(0.0, |v| tape.scalar_value(v)),
            total: tape.scalar_value(self.total),
        }
    }
}

/// Entropy constant H added to the MI bound: the target prior's entropy
/// (ln K for the categorical; the standard normal differential entropy for a
/// Gaussian subvector). Constant in all parameters, so it shifts the bound
/// without shaping gradients.
pub fn entropy_const(target: &MiTarget, categorical_k: usize) -> f64 {
    match target {
        MiTarget::Categorical => (categorical_k as f64).ln(),
        MiTarget::GaussianSubvector(idx) => {
            idx.len() as f64 * 0.5 * (LN_2PI + 1.0)
        }
    }
}

/// One latent draw: z via reparametrization and, when the layout has a
/// categorical part, a relaxed Gumbel-softmax sample at temperature `tau`.
pub struct LatentDraw {
    pub z: Var,
    pub c: Option<Var>,
}

pub fn draw_latent(
    tape: &mut Tape,
    model: &VaeModel,
    enc: &crate::models::EncodedVars,
    batch: usize,
    tau: f64,
    noise: &mut NoiseSource,
) -> Result<LatentDraw> {
    let g = model.layout.gaussian_dim;
    let eps = tape.leaf_from(&[batch, g], noise.standard_normal(batch * g));
    let z = reparam_sample_t(tape, enc.mu, enc.log_var, eps)?;
    let c = match enc.logits {
        None => None,
        Some(logits) => {
            let k = model.layout.categorical_k;
            let gum = tape.leaf_from(&[batch, k], noise.gumbel(batch * k));
            Some(gumbel_softmax_t(tape, logits, gum, tau)?)
        }
    };
    Ok(LatentDraw { z, c })
}

/// E[ln Q(target | x′)] + H for one already-drawn latent sample: decodes to
/// Bernoulli means x′, runs the auxiliary network on them, and scores the
/// sampled target part. Returns a scalar batch mean. Differentiable with
/// respect to encoder, decoder, and Q parameters.
pub fn mi_regularizer_t(
    tape: &mut Tape,
    model: &VaeModel,
    aux: &AuxModel,
    aux_bound: &BoundMlp,
    draw: &LatentDraw,
    x_prime: Var,
    batch: usize,
) -> Result<Var> {
    if model.layout.mi_target.as_ref() != Some(&aux.target) {
        return Err(Error::contract(
            "auxiliary network target does not match model layout",
        ));
    }
    let (head_a, head_b) = aux.q_infer_t(tape, aux_bound, x_prime)?;
    let log_q_sum = match &aux.target {
        MiTarget::GaussianSubvector(idx) => {
            let target = tape.select_cols(draw.z, idx)?;
            let q_mu = head_a;
            let q_lv = head_b.expect("gaussian head");
            gaussian_log_prob_sum_t(tape, target, q_mu, q_lv)?
        }
        MiTarget::Categorical => {
            let y = draw.c.ok_or_else(|| {
                Error::contract("categorical MI target but no categorical draw")
            })?;
            categorical_logprob_sum_t(tape, y, head_a)?
        }
    };
    let h = entropy_const(&aux.target, model.layout.categorical_k);
    Ok(tape.affine(log_q_sum, 1.0 / batch as f64, h))
}

/// Builds the full objective graph for a batch leaf `x` of shape [B × D].
///
/// The first Monte Carlo draw is shared between the reconstruction term and
/// the MI pipeline. When `cfg.lambda` is zero the MI term is still built for
/// reporting if an auxiliary network is supplied, but it is not added to
/// `total`, so the maximized quantity is exactly the chosen ELBO variant.
pub fn build_objective(
    tape: &mut Tape,
    model: &VaeModel,
    bound: &BoundVae,
    aux: Option<(&AuxModel, &BoundMlp)>,
    x: Var,
    cfg: &ObjectiveConfig,
    tau: f64,
    noise: &mut NoiseSource,
) -> Result<ObjectiveVars> {
    cfg.validate()?;
    let batch = tape.shape_of(x)[0];
    let inv_b = 1.0 / batch as f64;

    let enc = model.encode_t(tape, bound, x)?;

    let mut recon_sums = Vec::with_capacity(cfg.mc_samples);
    let mut mi_term = None;
    for s in 0..cfg.mc_samples {
        let draw = draw_latent(tape, model, &enc, batch, tau, noise)?;
        let x_prime = model.decode_t(tape, bound, draw.z, draw.c)?;
        let ll = tape.bernoulli_ll(x, x_prime)?;
        recon_sums.push(tape.sum_all(ll));
        if s == 0 {
            if let Some((aux_model, aux_bound)) = aux {
                mi_term = Some(mi_regularizer_t(
                    tape, model, aux_model, aux_bound, &draw, x_prime, batch,
                )?);
            }
        }
    }
    let mut recon_total = recon_sums[0];
    for &r in &recon_sums[1..] {
        recon_total = tape.add(recon_total, r)?;
    }
    let recon = tape.affine(recon_total, inv_b / cfg.mc_samples as f64, 0.0);

    let klg_sum = gaussian_kl_sum_t(tape, enc.mu, enc.log_var)?;
    let kl_gauss = tape.affine(klg_sum, inv_b, 0.0);
    let kl_cat = match enc.logits {
        None => None,
        Some(logits) => {
            let s = categorical_kl_uniform_sum_t(tape, logits)?;
            Some(tape.affine(s, inv_b, 0.0))
        }
    };

    let kl_total = match kl_cat {
        None => kl_gauss,
        Some(kc) => tape.add(kl_gauss, kc)?,
    };

    let base = match cfg.variant {
        ObjectiveVariant::Elbo => tape.sub(recon, kl_total)?,
        ObjectiveVariant::Beta => {
            let weighted = tape.affine(kl_total, cfg.beta, 0.0);
            tape.sub(recon, weighted)?
        }
        ObjectiveVariant::Capacity => {
            let shifted = tape.affine(kl_total, 1.0, -cfg.capacity);
            let dev = tape.abs(shifted);
            let weighted = tape.affine(dev, cfg.gamma, 0.0);
            tape.sub(recon, weighted)?
        }
    };

    let total = match mi_term {
        Some(mi) if cfg.lambda > 0.0 => {
            let weighted = tape.affine(mi, cfg.lambda, 0.0);
            tape.add(base, weighted)?
        }
        _ => base,
    };

    Ok(ObjectiveVars {
        recon,
        kl_gauss,
        kl_cat,
        mi_term,
        total,
    })
}

/// Combined objective value: variant total plus λ · MI.
pub fn total_objective(variant_total: f64, mi_term: f64, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::contract("lambda must be >= 0"));
    }
    Ok(variant_total + lambda * mi_term)
}

fn eval_variant(
    model: &VaeModel,
    x: &Tensor,
    noise: &mut NoiseSource,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveBreakdown> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let xv = tape.leaf(x);
    let vars = build_objective(&mut tape, model, &bound, None, xv, cfg, 1.0, noise)?;
    Ok(vars.eval(&tape))
}

/// Plain ELBO: recon − KL, Monte Carlo reconstruction with `mc_samples`
/// reparametrized draws, analytic KL terms.
pub fn elbo(
    model: &VaeModel,
    x: &Tensor,
    noise: &mut NoiseSource,
    mc_samples: usize,
) -> Result<ObjectiveBreakdown> {
    eval_variant(
        model,
        x,
        noise,
        &ObjectiveConfig {
            mc_samples,
            ..Default::default()
        },
    )
}

/// recon − β·KL. β = 1 reproduces [`elbo`] exactly.
pub fn beta_elbo(
    model: &VaeModel,
    x: &Tensor,
    noise: &mut NoiseSource,
    mc_samples: usize,
    beta: f64,
) -> Result<ObjectiveBreakdown> {
    eval_variant(
        model,
        x,
        noise,
        &ObjectiveConfig {
            variant: ObjectiveVariant::Beta,
            beta,
            mc_samples,
            ..Default::default()
        },
    )
}

/// recon − γ·|KL − C|.
pub fn capacity_elbo(
    model: &VaeModel,
    x: &Tensor,
    noise: &mut NoiseSource,
    mc_samples: usize,
    gamma: f64,
    capacity: f64,
) -> Result<ObjectiveBreakdown> {
    eval_variant(
        model,
        x,
        noise,
        &ObjectiveConfig {
            variant: ObjectiveVariant::Capacity,
            gamma,
            capacity,
            mc_samples,
            ..Default::default()
        },
    )
}

/// Value of the MI regularizer for the current models on a batch: one shared
/// latent draw through encode → decode → Q.
pub fn mi_regularizer(
    model: &VaeModel,
    aux: &AuxModel,
    x: &Tensor,
    noise: &mut NoiseSource,
    tau: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let aux_bound = aux.bind(&mut tape);
    let xv = tape.leaf(x);
    let batch = x.shape()[0];
    let enc = model.encode_t(&mut tape, &bound, xv)?;
    let draw = draw_latent(&mut tape, model, &enc, batch, tau, noise)?;
    let x_prime = model.decode_t(&mut tape, &bound, draw.z, draw.c)?;
    let mi = mi_regularizer_t(&mut tape, model, aux, &aux_bound, &draw, x_prime, batch)?;
    Ok(tape.scalar_value(mi))
}

/// Monte Carlo check of the joint-KL decomposition for one posterior:
/// returns (MC estimate of KL(q(z,c|x) ‖ p(z,c)), analytic kl_gauss +
/// kl_cat, standard error of the estimate).
pub fn joint_kl_mc_check(
    post: &Posterior,
    n_mc: usize,
    noise: &mut NoiseSource,
) -> Result<(f64, f64, f64)> {
    if n_mc == 0 {
        return Err(Error::contract("n_mc must be >= 1"));
    }
    let analytic = post.gauss.kl_to_std()
        + post
            .cat
            .as_ref()
            .map_or(Ok(0.0), |c| crate::dist::categorical_kl_to_uniform(&c.probs()))?;

    let dim = post.gauss.dim();
    let probs = post.cat.as_ref().map(|c| c.probs());
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_mc {
        let mut v = 0.0;
        if dim > 0 {
            let eps = noise.standard_normal(dim);
            let z = post.gauss.reparam_sample(&eps)?;
            let lq = post.gauss.log_prob(&z)?;
            let lp: f64 = z.iter().map(|&zi| -0.5 * (LN_2PI + zi * zi)).sum();
            v += lq - lp;
        }
        if let Some(p) = &probs {
            let k = noise.categorical_draw(p);
            v += (p[k].max(1e-300) * p.len() as f64).ln();
        }
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n_mc as f64;
    let var = (sum_sq / n_mc as f64 - mean * mean).max(0.0);
    Ok((mean, analytic, (var / n_mc as f64).sqrt()))
}

/// Batch version over a model's encodings: averages the per-sample MC
/// estimates and analytic sums; the returned SE pools the per-sample SEs.
pub fn joint_kl_decomposition_check(
    model: &VaeModel,
    x: &Tensor,
    noise: &mut NoiseSource,
    n_mc: usize,
) -> Result<(f64, f64, f64)> {
    let posts = model.encode(x, 1.0)?;
    let mut mc = 0.0;
    let mut analytic = 0.0;
    let mut var_sum = 0.0;
    let n = posts.len() as f64;
    for post in &posts {
        let (m, a, se) = joint_kl_mc_check(post, n_mc, noise)?;
        mc += m / n;
        analytic += a / n;
        var_sum += se * se / (n * n);
    }
    Ok((mc, analytic, var_sum.sqrt()))
}
