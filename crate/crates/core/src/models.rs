//! Encoder/decoder/auxiliary network assemblies.
//!
//! A [`VaeModel`] couples a probabilistic encoder producing diagonal-Gaussian
//! (and optionally categorical) posterior parameters with a Bernoulli-mean
//! decoder. An [`AuxModel`] is the separate network representing the
//! auxiliary distribution Q inside the mutual-information bound; it reads
//! decoder output (continuous Bernoulli means, keeping the path back to the
//! encoder and decoder differentiable) and predicts the targeted latent part.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::dist::{CategoricalParams, DiagGaussianParams};
use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Activation, BoundMlp, Mlp, Tensor};

/// Which part of the latent code the MI machinery targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MiTarget {
    /// A subset of Gaussian component indices.
    GaussianSubvector(Vec<usize>),
    /// The whole categorical variable.
    Categorical,
}

/// Latent code layout: Gaussian dimensions, optional categorical variable,
/// and the MI target selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentLayout {
    pub gaussian_dim: usize,
    /// 0 means no categorical part.
    pub categorical_k: usize,
    pub mi_target: Option<MiTarget>,
}

impl LatentLayout {
    pub fn validate(&self) -> Result<()> {
        if self.gaussian_dim == 0 && self.categorical_k == 0 {
            return Err(Error::contract("layout needs at least one latent part"));
        }
        if self.categorical_k == 1 {
            return Err(Error::contract("categorical part needs k >= 2"));
        }
        match &self.mi_target {
            None => {}
            Some(MiTarget::Categorical) => {
                if self.categorical_k < 2 {
                    return Err(Error::contract(
                        "categorical MI target requires a categorical latent",
                    ));
                }
            }
            Some(MiTarget::GaussianSubvector(idx)) => {
                if idx.is_empty() {
                    return Err(Error::contract("empty Gaussian MI target"));
                }
                if idx.iter().any(|&i| i >= self.gaussian_dim) {
                    return Err(Error::contract(format!(
                        "MI target indices {idx:?} out of range for {} Gaussian dims",
                        self.gaussian_dim
                    )));
                }
            }
        }
        Ok(())
    }

    /// Encoder head width: (μ, log σ²) per Gaussian dim plus K logits.
    pub fn encoder_out_dim(&self) -> usize {
        2 * self.gaussian_dim + self.categorical_k
    }

    /// Decoder input width: one sample of z and (relaxed) c.
    pub fn decoder_in_dim(&self) -> usize {
        self.gaussian_dim + self.categorical_k
    }

    /// Dimensionality of the targeted latent part.
    pub fn target_dim(&self) -> Option<usize> {
        match &self.mi_target {
            None => None,
            Some(MiTarget::Categorical) => Some(self.categorical_k),
            Some(MiTarget::GaussianSubvector(idx)) => Some(idx.len()),
        }
    }
}

/// Per-sample posterior parameters produced by the encoder.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub gauss: DiagGaussianParams,
    pub cat: Option<CategoricalParams>,
}

impl Posterior {
    /// log q(z, c | x) evaluated jointly in one pass.
    pub fn joint_log_prob(&self, z: &[f64], c_onehot: Option<&[f64]>) -> Result<f64> {
        let mut total = 0.0;
        // walk both parts inside one accumulation so the factorized and the
        // "joint" evaluation share no intermediate rounding
        total += self.gauss.log_prob(z)?;
        if let Some(cat) = &self.cat {
            let c = c_onehot.ok_or_else(|| Error::contract("joint_log_prob: missing c"))?;
            total += crate::dist::categorical_logprob(&cat.probs(), c)?;
        }
        Ok(total)
    }
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub layout: LatentLayout,
}

pub struct BoundVae {
    pub encoder: BoundMlp,
    pub decoder: BoundMlp,
}

/// Encoder outputs on the tape, already split into parts.
pub struct EncodedVars {
    pub mu: Var,
    pub log_var: Var,
    pub logits: Option<Var>,
}

impl VaeModel {
    /// Fresh model with tanh hidden layers; decoder mirrors the encoder's
    /// hidden stack and ends in a sigmoid.
    pub fn init(
        data_dim: usize,
        hidden: &[usize],
        layout: LatentLayout,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        layout.validate()?;
        let mut enc_dims = vec![data_dim];
        enc_dims.extend_from_slice(hidden);
        enc_dims.push(layout.encoder_out_dim());
        let encoder = Mlp::init(&enc_dims, Activation::Tanh, Activation::Identity, rng);

        let mut dec_dims = vec![layout.decoder_in_dim()];
        dec_dims.extend(hidden.iter().rev());
        dec_dims.push(data_dim);
        let decoder = Mlp::init(&dec_dims, Activation::Tanh, Activation::Sigmoid, rng);

        Ok(VaeModel {
            encoder,
            decoder,
            layout,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Per-sample posterior parameters for a [B × D] batch. `tau` seeds the
    /// categorical relaxation temperature carried on the returned params.
    pub fn encode(&self, x: &Tensor, tau: f64) -> Result<Vec<Posterior>> {
        let out = self.encoder.forward_plain(x)?;
        let b = out.shape()[0];
        let g = self.layout.gaussian_dim;
        let k = self.layout.categorical_k;
        let w = self.layout.encoder_out_dim();
        let mut posteriors = Vec::with_capacity(b);
        for i in 0..b {
            let row = &out.data()[i * w..(i + 1) * w];
            let gauss = DiagGaussianParams::new(row[..g].to_vec(), row[g..2 * g].to_vec())?;
            let cat = if k > 0 {
                Some(CategoricalParams::new(row[2 * g..].to_vec(), tau)?)
            } else {
                None
            };
            posteriors.push(Posterior { gauss, cat });
        }
        Ok(posteriors)
    }

    /// Bernoulli means over pixels for one latent sample.
    pub fn decode(&self, z: &[f64], c: Option<&[f64]>) -> Result<Vec<f64>> {
        let g = self.layout.gaussian_dim;
        let k = self.layout.categorical_k;
        if z.len() != g {
            return Err(Error::Dim {
                context: "decode z",
                expected: g,
                got: z.len(),
            });
        }
        let mut input = z.to_vec();
        match (k, c) {
            (0, None) => {}
            (0, Some(_)) => {
                return Err(Error::contract("decode: c given but layout has no categorical"))
            }
            (_, None) => {
                return Err(Error::contract("decode: layout has categorical but c missing"))
            }
            (_, Some(c)) => {
                if c.len() != k {
                    return Err(Error::Dim {
                        context: "decode c",
                        expected: k,
                        got: c.len(),
                    });
                }
                input.extend_from_slice(c);
            }
        }
        let t = Tensor::from_vec(&[1, g + k], input)?;
        Ok(self.decoder.forward_plain(&t)?.data().to_vec())
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundVae {
        BoundVae {
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
        }
    }

    /// Recorded encode: returns μ, log σ² (and logits when present) as tape
    /// nodes of shape [B × ·].
    pub fn encode_t(&self, tape: &mut Tape, bound: &BoundVae, x: Var) -> Result<EncodedVars> {
        let out = self.encoder.forward_tape(tape, &bound.encoder, x)?;
        let g = self.layout.gaussian_dim;
        let k = self.layout.categorical_k;
        let mu = tape.narrow_cols(out, 0, g)?;
        let log_var = tape.narrow_cols(out, g, g)?;
        let logits = if k > 0 {
            Some(tape.narrow_cols(out, 2 * g, k)?)
        } else {
            None
        };
        Ok(EncodedVars { mu, log_var, logits })
    }

    /// Recorded decode of a latent batch (z and optional relaxed c).
    pub fn decode_t(
        &self,
        tape: &mut Tape,
        bound: &BoundVae,
        z: Var,
        c: Option<Var>,
    ) -> Result<Var> {
        let input = match c {
            None => z,
            Some(c) => tape.concat_cols(z, c)?,
        };
        self.decoder.forward_tape(tape, &bound.decoder, input)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    /// Clones of all parameters in `bind` order.
    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.encoder
            .params()
            .into_iter()
            .chain(self.decoder.params())
            .cloned()
            .collect()
    }

    /// Rebuilds a binding from externally created leaves in `bind` order.
    pub fn bound_from_slice(&self, vars: &[Var]) -> BoundVae {
        let n_enc = 2 * self.encoder.layers.len();
        BoundVae {
            encoder: self.encoder.bound_from_slice(&vars[..n_enc]),
            decoder: self.decoder.bound_from_slice(&vars[n_enc..]),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.params().iter().all(|t| t.all_finite())
            && self.decoder.params().iter().all(|t| t.all_finite())
    }

    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundVae) {
        self.encoder.accumulate_grads(tape, &bound.encoder);
        self.decoder.accumulate_grads(tape, &bound.decoder);
    }
}

/// Output of the auxiliary network for a batch.
pub enum QOutput {
    Gaussian(Vec<DiagGaussianParams>),
    Categorical(Vec<CategoricalParams>),
}

#[derive(Debug, Clone)]
pub struct AuxModel {
    pub network: Mlp,
    pub target: MiTarget,
}

impl AuxModel {
    /// Network mapping decoder-output space to distribution parameters over
    /// the MI target.
    pub fn init(
        data_dim: usize,
        hidden: &[usize],
        layout: &LatentLayout,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let target = layout
            .mi_target
            .clone()
            .ok_or_else(|| Error::contract("AuxModel::init: layout has no MI target"))?;
        let out_dim = match &target {
            MiTarget::Categorical => layout.categorical_k,
            MiTarget::GaussianSubvector(idx) => 2 * idx.len(),
        };
        let mut dims = vec![data_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        Ok(AuxModel {
            network: Mlp::init(&dims, Activation::Tanh, Activation::Identity, rng),
            target,
        })
    }

    /// Distribution parameters over the target part for decoder-output-shaped
    /// input (continuous Bernoulli means).
    pub fn q_infer(&self, x_like: &Tensor) -> Result<QOutput> {
        let out = self.network.forward_plain(x_like)?;
        let b = out.shape()[0];
        let w = self.network.output_dim();
        match &self.target {
            MiTarget::GaussianSubvector(idx) => {
                let d = idx.len();
                let mut params = Vec::with_capacity(b);
                for i in 0..b {
                    let row = &out.data()[i * w..(i + 1) * w];
                    params.push(DiagGaussianParams::new(
                        row[..d].to_vec(),
                        row[d..].to_vec(),
                    )?);
                }
                Ok(QOutput::Gaussian(params))
            }
            MiTarget::Categorical => {
                let mut params = Vec::with_capacity(b);
                for i in 0..b {
                    let row = &out.data()[i * w..(i + 1) * w];
                    params.push(CategoricalParams::new(row.to_vec(), 1.0)?);
                }
                Ok(QOutput::Categorical(params))
            }
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        self.network.bind(tape)
    }

    /// Recorded head: (μ, log σ²) pair for a Gaussian target, logits
    /// otherwise (second slot `None`).
    pub fn q_infer_t(
        &self,
        tape: &mut Tape,
        bound: &BoundMlp,
        x_like: Var,
    ) -> Result<(Var, Option<Var>)> {
        let out = self.network.forward_tape(tape, bound, x_like)?;
        match &self.target {
            MiTarget::GaussianSubvector(idx) => {
                let d = idx.len();
                let mu = tape.narrow_cols(out, 0, d)?;
                let lv = tape.narrow_cols(out, d, d)?;
                Ok((mu, Some(lv)))
            }
            MiTarget::Categorical => Ok((out, None)),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.network.params_mut()
    }

    pub fn all_finite(&self) -> bool {
        self.network.params().iter().all(|t| t.all_finite())
    }
}

// ── checkpoint format ───────────────────────────────────────────────

const CKPT_MAGIC: &[u8; 8] = b"MIVAECKP";
const CKPT_VERSION: u32 = 1;

/// Everything a run needs to resume or evaluate: model, optional auxiliary
/// network, and the noise stream positions.
pub struct Checkpoint {
    pub model: VaeModel,
    pub aux: Option<AuxModel>,
    /// (seed, word position) per stream, in a caller-defined order.
    pub rng_states: Vec<(u64, u128)>,
}

fn act_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Tanh => 1,
        Activation::Relu => 2,
        Activation::Sigmoid => 3,
        Activation::Softplus => 4,
    }
}

fn act_from_code(c: u8) -> Result<Activation> {
    Ok(match c {
        0 => Activation::Identity,
        1 => Activation::Tanh,
        2 => Activation::Relu,
        3 => Activation::Sigmoid,
        4 => Activation::Softplus,
        _ => return Err(Error::contract(format!("unknown activation code {c}"))),
    })
}

struct CkptWriter<'a> {
    w: BufWriter<File>,
    path: &'a Path,
}

impl<'a> CkptWriter<'a> {
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u128(&mut self, v: u128) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.bytes(&v.to_le_bytes())?;
        }
        Ok(())
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.w.write_all(b).map_err(|e| Error::io(self.path, e))
    }

    fn mlp(&mut self, mlp: &Mlp) -> Result<()> {
        self.u32(mlp.layers.len() as u32)?;
        for layer in &mlp.layers {
            self.u32(layer.input_dim() as u32)?;
            self.u32(layer.output_dim() as u32)?;
            self.u8(act_code(layer.activation))?;
            self.f64s(layer.weights.data())?;
            self.f64s(layer.bias.data())?;
        }
        Ok(())
    }
}

struct CkptReader<'a> {
    r: BufReader<File>,
    path: &'a Path,
}

impl<'a> CkptReader<'a> {
    fn bytes(&mut self, out: &mut [u8]) -> Result<()> {
        self.r
            .read_exact(out)
            .map_err(|e| Error::io(self.path, e))
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn u128(&mut self) -> Result<u128> {
        let mut b = [0u8; 16];
        self.bytes(&mut b)?;
        Ok(u128::from_le_bytes(b))
    }
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.bytes(&mut b)?;
        Ok(b[0])
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.bytes(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }

    fn mlp(&mut self) -> Result<Mlp> {
        let n_layers = self.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let inp = self.u32()? as usize;
            let out = self.u32()? as usize;
            let act = act_from_code(self.u8()?)?;
            let weights = Tensor::from_vec(&[out, inp], self.f64s(out * inp)?)?;
            let bias = Tensor::from_vec(&[out], self.f64s(out)?)?;
            layers.push(crate::tensor::DenseLayer {
                weights,
                bias,
                activation: act,
            });
        }
        Ok(Mlp { layers })
    }
}

fn write_target(w: &mut CkptWriter, target: Option<&MiTarget>) -> Result<()> {
    match target {
        None => w.u8(0),
        Some(MiTarget::GaussianSubvector(idx)) => {
            w.u8(1)?;
            w.u32(idx.len() as u32)?;
            for &i in idx {
                w.u32(i as u32)?;
            }
            Ok(())
        }
        Some(MiTarget::Categorical) => w.u8(2),
    }
}

fn read_target(r: &mut CkptReader) -> Result<Option<MiTarget>> {
    Ok(match r.u8()? {
        0 => None,
        1 => {
            let n = r.u32()? as usize;
            let mut idx = Vec::with_capacity(n);
            for _ in 0..n {
                idx.push(r.u32()? as usize);
            }
            Some(MiTarget::GaussianSubvector(idx))
        }
        2 => Some(MiTarget::Categorical),
        c => return Err(Error::contract(format!("unknown MI target code {c}"))),
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = CkptWriter {
        w: BufWriter::new(f),
        path,
    };
    w.bytes(CKPT_MAGIC)?;
    w.u32(CKPT_VERSION)?;

    let layout = &ckpt.model.layout;
    w.u32(layout.gaussian_dim as u32)?;
    w.u32(layout.categorical_k as u32)?;
    write_target(&mut w, layout.mi_target.as_ref())?;
    w.mlp(&ckpt.model.encoder)?;
    w.mlp(&ckpt.model.decoder)?;

    match &ckpt.aux {
        None => w.u8(0)?,
        Some(aux) => {
            w.u8(1)?;
            write_target(&mut w, Some(&aux.target))?;
            w.mlp(&aux.network)?;
        }
    }

    w.u32(ckpt.rng_states.len() as u32)?;
    for &(seed, pos) in &ckpt.rng_states {
        w.u64(seed)?;
        w.u128(pos)?;
    }
    w.w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = CkptReader {
        r: BufReader::new(f),
        path,
    };
    let mut magic = [0u8; 8];
    r.bytes(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "not a checkpoint file".into(),
        });
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 8,
            message: format!("unsupported checkpoint version {version}"),
        });
    }

    let gaussian_dim = r.u32()? as usize;
    let categorical_k = r.u32()? as usize;
    let mi_target = read_target(&mut r)?;
    let encoder = r.mlp()?;
    let decoder = r.mlp()?;
    let layout = LatentLayout {
        gaussian_dim,
        categorical_k,
        mi_target,
    };
    layout.validate()?;
    let model = VaeModel {
        encoder,
        decoder,
        layout,
    };

    let aux = match r.u8()? {
        0 => None,
        1 => {
            let target = read_target(&mut r)?
                .ok_or_else(|| Error::contract("checkpoint aux without target"))?;
            let network = r.mlp()?;
            Some(AuxModel { network, target })
        }
        c => return Err(Error::contract(format!("bad aux flag {c}"))),
    };

    let n = r.u32()? as usize;
    let mut rng_states = Vec::with_capacity(n);
    for _ in 0..n {
        let seed = r.u64()?;
        let pos = r.u128()?;
        rng_states.push((seed, pos));
    }

    Ok(Checkpoint {
        model,
        aux,
        rng_states,
    })
}
