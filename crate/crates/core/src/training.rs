//! The alternating training loop: for each minibatch, first ascend the
//! objective in the auxiliary distribution Q (tightening the MI bound), then
//! ascend in the encoder/decoder parameters with Q frozen.
//!
//! Noise is split into independent streams (parameter init, VAE-phase draws,
//! Q-phase draws, batch shuffling) so that the Q machinery cannot perturb
//! the encoder/decoder trajectory when λ = 0.

use std::io::Write;
use std::path::PathBuf;

use crate::dist::NoiseSource;
use crate::error::{Error, Result};

use crate::models::{AuxModel, Checkpoint, LatentLayout, VaeModel};
use crate::objectives::{build_objective, ObjectiveConfig};
use crate::tensor::optim::{clip_global_norm, Adam};
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauDecay {
    Constant,
    Exponential,
}

/// Relaxation temperature schedule over the whole run.
#[derive(Debug, Clone)]
pub struct TauSchedule {
    pub start: f64,
    pub end: f64,
    pub decay: TauDecay,
    pub total_steps: usize,
}

/// Temperature at a global step: exponential interpolation from start to
/// end, constant when requested or degenerate.
pub fn tau_at(step: usize, schedule: &TauSchedule) -> f64 {
    match schedule.decay {
        TauDecay::Constant => schedule.start,
        TauDecay::Exponential => {
            if schedule.total_steps <= 1 || schedule.start == schedule.end {
                return schedule.start;
            }
            let t = (step.min(schedule.total_steps - 1)) as f64
                / (schedule.total_steps - 1) as f64;
            schedule.start * (schedule.end / schedule.start).powf(t)
        }
    }
}

/// Network sizes and latent layout for a fresh run.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub q_hidden: Vec<usize>,
    pub layout: LatentLayout,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model: ModelSpec,
    pub objective: ObjectiveConfig,
    pub lr_vae: f64,
    pub lr_q: f64,
    pub q_steps_per_batch: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_decay: TauDecay,
    /// Steps over which the MI weight ramps linearly from 0 to λ. Zero
    /// keeps λ fixed for the whole run. Ramping lets reconstruction
    /// organize the encoder before the regularizer starts sharpening the
    /// posterior, which otherwise can lock in an arbitrary early partition.
    pub lambda_warmup_steps: usize,
    pub eval_every: usize,
    pub grad_clip: f64,
    /// When set, metrics CSV and checkpoints are written here.
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(model: ModelSpec) -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            seed: 0,
            model,
            objective: ObjectiveConfig::default(),
            lr_vae: 1e-3,
            lr_q: 1e-3,
            q_steps_per_batch: 1,
            tau_start: 0.67,
            tau_end: 0.67,
            tau_decay: TauDecay::Constant,
            lambda_warmup_steps: 0,
            eval_every: 10,
            grad_clip: 5.0,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1"));
        }
        if self.q_steps_per_batch == 0 {
            return Err(Error::contract("q_steps_per_batch must be >= 1"));
        }
        if !(self.tau_end > 0.0) || self.tau_start < self.tau_end {
            return Err(Error::contract("need tau start >= end > 0"));
        }
        if self.eval_every == 0 {
            return Err(Error::contract("eval_every must be >= 1"));
        }
        self.objective.validate()?;
        self.model.layout.validate()
    }
}

/// Per-step scalars, all batch means in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub recon: f64,
    pub kl_gauss: f64,
    pub kl_cat: f64,
    pub mi_term: f64,
    pub total: f64,
    pub tau: f64,
}

pub const METRICS_HEADER: &str = "step,recon,kl_gauss,kl_cat,mi_term,total,tau";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.recon, self.kl_gauss, self.kl_cat, self.mi_term, self.total, self.tau
        )
    }
}

pub struct TrainState {
    pub model: VaeModel,
    pub aux: Option<AuxModel>,
    pub opt_vae: Adam,
    pub opt_q: Adam,
    pub step: usize,
    pub history: Vec<MetricsRecord>,
    pub noise_vae: NoiseSource,
    pub noise_q: NoiseSource,
    pub noise_data: NoiseSource,
}

impl TrainState {
    /// Fresh state with independently seeded streams. The auxiliary network
    /// is created whenever the layout names an MI target, so its bound can
    /// be tracked even for λ = 0 baselines.
    pub fn init(data_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let root = NoiseSource::new(cfg.seed);
        let mut init_vae = root.derive(0);
        let noise_vae = root.derive(1);
        let noise_q = root.derive(2);
        let noise_data = root.derive(3);
        let mut init_q = root.derive(4);

        let model = VaeModel::init(
            data_dim,
            &cfg.model.hidden,
            cfg.model.layout.clone(),
            init_vae.rng_mut(),
        )?;
        let aux = match cfg.model.layout.mi_target {
            Some(_) => Some(AuxModel::init(
                data_dim,
                &cfg.model.q_hidden,
                &cfg.model.layout,
                init_q.rng_mut(),
            )?),
            None => None,
        };

        Ok(TrainState {
            model,
            aux,
            opt_vae: Adam::new(cfg.lr_vae),
            opt_q: Adam::new(cfg.lr_q),
            step: 0,
            history: Vec::new(),
            noise_vae,
            noise_q,
            noise_data,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            aux: self.aux.clone(),
            rng_states: vec![
                (self.noise_vae.seed(), self.noise_vae.word_pos()),
                (self.noise_q.seed(), self.noise_q.word_pos()),
                (self.noise_data.seed(), self.noise_data.word_pos()),
            ],
        }
    }
}

/// One ascent step on Q alone (encoder/decoder frozen): maximizes the batch
/// mean of ln Q(target | x′). Returns the MI-bound value before the update.
pub fn q_step(
    model: &VaeModel,
    aux: &mut AuxModel,
    opt_q: &mut Adam,
    batch: &Tensor,
    tau: f64,
    noise: &mut NoiseSource,
    grad_clip: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let aux_bound = aux.bind(&mut tape);
    let xv = tape.leaf(batch);
    let b = batch.shape()[0];
    let enc = model.encode_t(&mut tape, &bound, xv)?;
    let draw = crate::objectives::draw_latent(&mut tape, model, &enc, b, tau, noise)?;
    let x_prime = model.decode_t(&mut tape, &bound, draw.z, draw.c)?;
    let mi = crate::objectives::mi_regularizer_t(
        &mut tape, model, aux, &aux_bound, &draw, x_prime, b,
    )?;
    let value = tape.scalar_value(mi);
    let loss = tape.neg(mi);
    tape.backward(loss)?;
    aux.network.accumulate_grads(&tape, &aux_bound);
    let mut params = aux.params_mut();
    clip_global_norm(&mut params, grad_clip);
    opt_q.step(&mut params)?;
    Ok(value)
}

/// One full training step: `q_steps_per_batch` ascent steps on Q, then one
/// ascent step on the encoder/decoder with Q frozen.
pub fn train_step(
    state: &mut TrainState,
    batch: &Tensor,
    cfg: &TrainConfig,
    tau: f64,
) -> Result<MetricsRecord> {
    // phase A: tighten the bound in Q
    if let Some(aux) = state.aux.as_mut() {
        for _ in 0..cfg.q_steps_per_batch {
            q_step(
                &state.model,
                aux,
                &mut state.opt_q,
                batch,
                tau,
                &mut state.noise_q,
                cfg.grad_clip,
            )?;
        }
    }

    // phase B: ascend the combined objective in (θ, φ)
    let mut objective = cfg.objective.clone();
    if cfg.lambda_warmup_steps > 0 && state.step < cfg.lambda_warmup_steps {
        objective.lambda *= state.step as f64 / cfg.lambda_warmup_steps as f64;
    }
    let mut tape = Tape::new();
    let bound = state.model.bind(&mut tape);
    let aux_pair = state.aux.as_ref().map(|a| {
        let b = a.bind(&mut tape);
        (a, b)
    });
    let xv = tape.leaf(batch);
    let vars = build_objective(
        &mut tape,
        &state.model,
        &bound,
        aux_pair.as_ref().map(|(a, b)| (*a, b)),
        xv,
        &objective,
        tau,
        &mut state.noise_vae,
    )?;
    let breakdown = vars.eval(&tape);
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite {
            what: "objective",
            step: state.step,
        });
    }
    let loss = tape.neg(vars.total);
    tape.backward(loss)?;
    state.model.accumulate_grads(&tape, &bound);
    let mut params = state.model.params_mut();
    clip_global_norm(&mut params, cfg.grad_clip);
    state.opt_vae.step(&mut params)?;
    if !state.model.all_finite() {
        return Err(Error::NonFinite {
            what: "parameters",
            step: state.step,
        });
    }

    let record = MetricsRecord {
        step: state.step,
        recon: breakdown.recon,
        kl_gauss: breakdown.kl_gauss,
        kl_cat: breakdown.kl_cat,
        mi_term: breakdown.mi_term,
        total: breakdown.total,
        tau,
    };
    state.step += 1;
    state.history.push(record);
    Ok(record)
}

fn write_metrics(path: &std::path::Path, history: &[MetricsRecord], eval_every: usize) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
    for (i, rec) in history.iter().enumerate() {
        if rec.step % eval_every == 0 || i + 1 == history.len() {
            writeln!(w, "{}", rec.csv_row()).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

/// Runs shuffled minibatch epochs over the dataset. Fully deterministic
/// under `cfg.seed`. When `cfg.out_dir` is set, writes `metrics.csv` and
/// `ckpt_final.bin` (and `ckpt_last_good.bin` if a step produces non-finite
/// values, before returning the error).
pub fn train(dataset: &crate::data::Dataset, cfg: &TrainConfig) -> Result<TrainState> {
    if dataset.is_empty() {
        return Err(Error::contract("train: empty dataset"));
    }
    cfg.validate()?;
    let mut state = TrainState::init(dataset.dim(), cfg)?;

    let n = dataset.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let schedule = TauSchedule {
        start: cfg.tau_start,
        end: cfg.tau_end,
        decay: cfg.tau_decay,
        total_steps: cfg.epochs * batches_per_epoch,
    };

    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.clone(), e))?;
    }

    let mut last_good: Option<Checkpoint> = None;
    let mut indices: Vec<usize> = (0..n).collect();
    for _epoch in 0..cfg.epochs {
        state.noise_data.shuffle(&mut indices);
        for chunk in indices.chunks(cfg.batch_size) {
            let tau = tau_at(state.step, &schedule);
            if state.step % cfg.eval_every == 0 {
                last_good = Some(state.checkpoint());
            }
            let batch = dataset.batch(chunk);
            match train_step(&mut state, &batch, cfg, tau) {
                Ok(_) => {}
                Err(e) => {
                    if let (Some(dir), Some(ckpt)) = (&cfg.out_dir, &last_good) {
                        let _ = crate::models::save_checkpoint(&dir.join("ckpt_last_good.bin"), ckpt);
                    }
                    return Err(e);
                }
            }
        }
    }

    if let Some(dir) = &cfg.out_dir {
        write_metrics(&dir.join("metrics.csv"), &state.history, cfg.eval_every)?;
        crate::models::save_checkpoint(&dir.join("ckpt_final.bin"), &state.checkpoint())?;
    }
    Ok(state)
}
