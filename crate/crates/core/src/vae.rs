//! LSTM text VAE.
//!
//! Encoder: embedding → LSTM → LSTM → dense(tanh) → (μ, log σ²).
//! Decoder: z initialises both LSTM layers through a tanh projection and is
//! also concatenated to every step's embedded input; a vocabulary-sized dense
//! layer with log-softmax scores the next token (teacher forcing).
//!
//! The training objective is the Monte Carlo ELBO
//! `L = 1/n Σ [−log q(z_n|x) + log p(x|z_n) + log p(z_n)]`, with the two
//! density terms optionally scaled by an annealing weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::layers::{uniform, Dense};
use crate::seq::{lstm_forward, lstm_forward_from, LstmCell, LstmVars};
use crate::tensor::{Bound, ParamId, ParamStore, Result, Tape, TensorError, Var};
use crate::text::{BOS, EOS, PAD};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub dense_dim: usize,
    pub latent_dim: usize,
    pub dropout: f64,
    /// Initial bias of the log-variance projection.
    pub logvar_bias: f64,
}

impl VaeConfig {
    /// 32-unit layers throughout, 32-dimensional latent, dropout 0.2.
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            hidden: 32,
            dense_dim: 32,
            latent_dim: 32,
            dropout: 0.2,
            logvar_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub config: VaeConfig,
    pub params: ParamStore,
    embedding: ParamId,
    enc1: LstmCell,
    enc2: LstmCell,
    enc_dense: Dense,
    mu_head: Dense,
    logvar_head: Dense,
    dec_init1: Dense,
    dec_init2: Dense,
    dec1: LstmCell,
    dec2: LstmCell,
    out: Dense,
}

/// Reparameterised latent sample. `z == μ + σ∗ε` elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
}

impl LatentCode {
    pub fn from_eps(mu: &[f64], sigma: &[f64], eps: Vec<f64>) -> Result<Self> {
        check_sigma(sigma)?;
        if mu.len() != sigma.len() || eps.len() != mu.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reparameterize",
                left: vec![mu.len(), sigma.len()],
                right: vec![eps.len()],
            });
        }
        let z = mu.iter().zip(sigma).zip(&eps).map(|((m, s), e)| m + s * e).collect();
        Ok(Self {
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
            eps,
            z,
        })
    }
}

fn check_sigma(sigma: &[f64]) -> Result<()> {
    match sigma.iter().position(|&s| s.is_nan() || s <= 0.0) {
        Some(index) => Err(TensorError::Invalid(format!(
            "sigma must be positive, got {} at {index}",
            sigma[index]
        ))),
        None => Ok(()),
    }
}

/// Draws `ε ~ N(0, I)` and returns `z = μ + σ∗ε`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], sigma: &[f64], rng: &mut R) -> Result<LatentCode> {
    check_sigma(sigma)?;
    let eps = standard_normal(mu.len(), rng);
    LatentCode::from_eps(mu, sigma, eps)
}

pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − ln σ²)`.
pub fn kl_closed_form(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(0.5
        * mu.iter()
            .zip(sigma)
            .map(|(m, s)| m * m + s * s - 1.0 - (s * s).ln())
            .sum::<f64>())
}

/// Diagonal-Gaussian log density.
pub fn log_normal_density(x: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((x, m), s)| -0.5 * LN_2PI - s.ln() - 0.5 * ((x - m) / s).powi(2))
        .sum()
}

/// Tape handles of one ELBO evaluation.
#[derive(Debug, Clone)]
pub struct ElboVars {
    /// `recon + kl_weight · kl`; equals `−L^MC` when the weight is 1.
    pub loss: Var,
    /// `−1/n Σ log p(x|z_n)`.
    pub recon: Var,
    /// `1/n Σ [log q(z_n|x) − log p(z_n)]`.
    pub kl: Var,
    pub mu: Var,
    pub logvar: Var,
    pub z: Vec<Var>,
}

/// Value-level ELBO estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    /// `−L^MC`.
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub latents: Vec<LatentCode>,
}

/// Per-step decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// `log p(target_t | target_<t, z)` for t ≥ 1, PAD targets excluded.
    pub step_log_probs: Vec<f64>,
    pub log_prob: f64,
}

impl Vae {
    pub fn new<R: Rng + ?Sized>(config: VaeConfig, rng: &mut R) -> Self {
        let c = &config;
        let mut p = ParamStore::new();
        let embedding = p.add("vae.embedding", uniform(&[c.vocab_size, c.embed_dim], 1.0, rng));
        let enc1 = LstmCell::new(&mut p, "vae.enc1", c.embed_dim, c.hidden, rng);
        let enc2 = LstmCell::new(&mut p, "vae.enc2", c.hidden, c.hidden, rng);
        let enc_dense = Dense::new(&mut p, "vae.enc_dense", c.hidden, c.dense_dim, rng);
        let mu_head = Dense::new(&mut p, "vae.mu", c.dense_dim, c.latent_dim, rng);
        let logvar_head = Dense::new(&mut p, "vae.logvar", c.dense_dim, c.latent_dim, rng);
        p.get_mut(logvar_head.bias).data_mut().iter_mut().for_each(|b| *b = c.logvar_bias);
        let dec_init1 = Dense::new(&mut p, "vae.dec_init1", c.latent_dim, c.hidden, rng);
        let dec_init2 = Dense::new(&mut p, "vae.dec_init2", c.latent_dim, c.hidden, rng);
        let dec1 = LstmCell::new(&mut p, "vae.dec1", c.embed_dim + c.latent_dim, c.hidden, rng);
        let dec2 = LstmCell::new(&mut p, "vae.dec2", c.hidden, c.hidden, rng);
        let out = Dense::new(&mut p, "vae.out", c.hidden, c.vocab_size, rng);
        Self {
            config,
            params: p,
            embedding,
            enc1,
            enc2,
            enc_dense,
            mu_head,
            logvar_head,
            dec_init1,
            dec_init2,
            dec1,
            dec2,
            out,
        }
    }

    /// Every parameter zero.
    pub fn zeroed(config: VaeConfig) -> Self {
        let mut vae = Self::new(config, &mut ChaCha8Rng::seed_from_u64(0));
        for t in vae.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        vae
    }

    /// The vocabulary-sized output layer, for tests that shape the decoder.
    pub fn output_layer(&self) -> &Dense {
        &self.out
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(TensorError::Invalid("empty token sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(TensorError::IndexOutOfRange {
                op: "token id",
                index: bad,
                len: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn embed(&self, tape: &mut Tape<'_>, table: Var, tokens: &[usize]) -> Result<Vec<Var>> {
        tokens
            .iter()
            .map(|&t| tape.embedding(table, &[t]))
            .collect()
    }

    fn drop_all<R: Rng + ?Sized>(&self, tape: &mut Tape<'_>, states: &[LstmVars], rng: &mut R) -> Vec<Var> {
        states
            .iter()
            .map(|s| tape.dropout(s.h, self.config.dropout, rng))
            .collect()
    }

    /// Encoder on the tape; returns `(μ, log σ²)`.
    pub fn encode_vars<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        tokens: &[usize],
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        self.check_tokens(tokens)?;
        let xs = self.embed(tape, bound[self.embedding], tokens)?;
        let l1 = lstm_forward(tape, &self.enc1, bound, &xs)?;
        let l1 = self.drop_all(tape, &l1, rng);
        let l2 = lstm_forward(tape, &self.enc2, bound, &l1)?;
        let last = l2.last().expect("non-empty").h;
        let last = tape.dropout(last, self.config.dropout, rng);
        let pre = self.enc_dense.forward(tape, bound, last)?;
        let dense = tape.tanh(pre);
        let mu = self.mu_head.forward(tape, bound, dense)?;
        let logvar = self.logvar_head.forward(tape, bound, dense)?;
        Ok((mu, logvar))
    }

    /// Deterministic encoding, `(μ, σ)` with `σ = exp(½ log σ²)`.
    pub fn encode(&self, tokens: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let (mu, logvar) = self.encode_vars(&mut tape, &bound, tokens, &mut unused)?;
        let sigma = tape.value(logvar).iter().map(|lv| (0.5 * lv).exp()).collect();
        Ok((tape.value(mu).to_vec(), sigma))
    }

    fn init_states(&self, tape: &mut Tape<'_>, bound: &Bound, z: Var) -> Result<(LstmVars, LstmVars)> {
        let h = self.config.hidden;
        let p1 = self.dec_init1.forward(tape, bound, z)?;
        let h1 = tape.tanh(p1);
        let p2 = self.dec_init2.forward(tape, bound, z)?;
        let h2 = tape.tanh(p2);
        let c1 = tape.vector(vec![0.0; h])?;
        let c2 = tape.vector(vec![0.0; h])?;
        Ok((LstmVars { h: h1, c: c1 }, LstmVars { h: h2, c: c2 }))
    }

    /// Teacher-forced decoder; returns per-step log-probabilities of the true
    /// next tokens (PAD targets skipped).
    pub fn decode_vars<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        z: Var,
        targets: &[usize],
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        self.check_tokens(targets)?;
        if targets[0] != BOS {
            return Err(TensorError::Invalid("decoder targets must start with BOS".into()));
        }
        if targets.len() < 2 {
            return Err(TensorError::Invalid("decoder targets need a token after BOS".into()));
        }
        if tape.shape(z) != [self.config.latent_dim] {
            return Err(TensorError::ShapeMismatch {
                op: "decode z",
                left: vec![self.config.latent_dim],
                right: tape.shape(z).to_vec(),
            });
        }
        let (s1, s2) = self.init_states(tape, bound, z)?;
        let prev = &targets[..targets.len() - 1];
        let embedded = self.embed(tape, bound[self.embedding], prev)?;
        let inputs = embedded
            .into_iter()
            .map(|e| tape.concat(&[e, z]))
            .collect::<Result<Vec<_>>>()?;
        let l1 = lstm_forward_from(tape, &self.dec1, bound, s1, &inputs)?;
        let l1 = self.drop_all(tape, &l1, rng);
        let l2 = lstm_forward_from(tape, &self.dec2, bound, s2, &l1)?;
        let l2 = self.drop_all(tape, &l2, rng);
        let mut out = Vec::with_capacity(l2.len());
        for (h, &target) in l2.iter().zip(&targets[1..]) {
            if target == PAD {
                continue;
            }
            let logits = self.out.forward(tape, bound, *h)?;
            let logp = tape.log_softmax(logits);
            out.push(tape.pick(logp, target)?);
        }
        Ok(out)
    }

    /// `log p(x|z)` with its per-step terms.
    pub fn decode(&self, z: &[f64], targets: &[usize]) -> Result<Decoded> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let zv = tape.vector(z.to_vec())?;
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let steps = self.decode_vars(&mut tape, &bound, zv, targets, &mut unused)?;
        let step_log_probs: Vec<f64> = steps.iter().map(|&v| tape.scalar(v)).collect();
        Ok(Decoded {
            log_prob: step_log_probs.iter().sum(),
            step_log_probs,
        })
    }

    /// Full next-token distributions under teacher forcing, one row per step.
    pub fn next_token_distributions(&self, z: &[f64], targets: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_tokens(targets)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let zv = tape.vector(z.to_vec())?;
        let (mut s1, mut s2) = self.init_states(&mut tape, &bound, zv)?;
        let mut rows = Vec::new();
        for &prev in &targets[..targets.len().saturating_sub(1)] {
            let (dist, n1, n2) = self.step_distribution(&mut tape, &bound, zv, prev, s1, s2)?;
            rows.push(dist);
            s1 = n1;
            s2 = n2;
        }
        Ok(rows)
    }

    fn step_distribution(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        z: Var,
        prev: usize,
        s1: LstmVars,
        s2: LstmVars,
    ) -> Result<(Vec<f64>, LstmVars, LstmVars)> {
        let e = tape.embedding(bound[self.embedding], &[prev])?;
        let x = tape.concat(&[e, z])?;
        let n1 = self.dec1.step(tape, bound, s1, x)?.state;
        let n2 = self.dec2.step(tape, bound, s2, n1.h)?.state;
        let logits = self.out.forward(tape, bound, n2.h)?;
        let p = tape.softmax(logits);
        Ok((tape.value(p).to_vec(), n1, n2))
    }

    /// Greedy decoding from BOS until EOS or `max_len` tokens; ties go to the
    /// lowest token id. EOS is not included in the output.
    pub fn generate(&self, z: &[f64], max_len: usize) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let zv = tape.vector(z.to_vec())?;
        let (mut s1, mut s2) = self.init_states(&mut tape, &bound, zv)?;
        let mut prev = BOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let (dist, n1, n2) = self.step_distribution(&mut tape, &bound, zv, prev, s1, s2)?;
            let next = argmax(&dist);
            if next == EOS {
                break;
            }
            out.push(next);
            prev = next;
            s1 = n1;
            s2 = n2;
        }
        Ok(out)
    }

    /// ELBO on the tape with the supplied standard-normal draws (one per
    /// Monte Carlo sample).
    pub fn elbo_vars<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        tokens: &[usize],
        eps: &[Vec<f64>],
        kl_weight: f64,
        rng: &mut R,
    ) -> Result<ElboVars> {
        if eps.is_empty() {
            return Err(TensorError::Invalid("elbo needs at least one sample".into()));
        }
        let d = self.config.latent_dim;
        let (mu, logvar) = self.encode_vars(tape, bound, tokens, rng)?;
        let half_lv = tape.scale(logvar, 0.5);
        let sigma = tape.exp(half_lv);
        let neg_half_lv = tape.scale(logvar, -0.5);
        let inv_sigma = tape.exp(neg_half_lv);
        let sum_lv = tape.sum(logvar);
        let n = eps.len() as f64;
        let mut recon_terms = Vec::with_capacity(eps.len());
        let mut kl_terms = Vec::with_capacity(eps.len());
        let mut zs = Vec::with_capacity(eps.len());
        for e in eps {
            let ev = tape.vector(e.clone())?;
            let noise = tape.mul(sigma, ev)?;
            let z = tape.add(mu, noise)?;
            let steps = self.decode_vars(tape, bound, z, tokens, rng)?;
            let log_px = tape.add_all(&steps)?;
            // log q(z|x) = −d/2 ln 2π − ½ Σ log σ² − ½ Σ ((z − μ)/σ)²
            let diff = tape.sub(z, mu)?;
            let scaled = tape.mul(diff, inv_sigma)?;
            let sq = tape.square(scaled);
            let sq_sum = tape.sum(sq);
            let quad = tape.add(sum_lv, sq_sum)?;
            let quad = tape.scale(quad, -0.5);
            let log_q = tape.offset(quad, -0.5 * d as f64 * LN_2PI);
            // log p(z) = −d/2 ln 2π − ½ Σ z²
            let zsq = tape.square(z);
            let zsq = tape.sum(zsq);
            let zsq = tape.scale(zsq, -0.5);
            let log_pz = tape.offset(zsq, -0.5 * d as f64 * LN_2PI);
            let kl_n = tape.sub(log_q, log_pz)?;
            recon_terms.push(log_px);
            kl_terms.push(kl_n);
            zs.push(z);
        }
        let log_px_sum = tape.add_all(&recon_terms)?;
        let recon = tape.scale(log_px_sum, -1.0 / n);
        let kl_sum = tape.add_all(&kl_terms)?;
        let kl = tape.scale(kl_sum, 1.0 / n);
        let weighted = tape.scale(kl, kl_weight);
        let loss = tape.add(recon, weighted)?;
        Ok(ElboVars {
            loss,
            recon,
            kl,
            mu,
            logvar,
            z: zs,
        })
    }

    /// Evaluation-mode Monte Carlo ELBO with fresh draws from `rng`.
    pub fn elbo_mc<R: Rng + ?Sized>(&self, tokens: &[usize], n_samples: usize, rng: &mut R) -> Result<ElboEstimate> {
        if n_samples == 0 {
            return Err(TensorError::Invalid("n_samples must be at least 1".into()));
        }
        let eps: Vec<Vec<f64>> = (0..n_samples)
            .map(|_| standard_normal(self.config.latent_dim, rng))
            .collect();
        self.elbo_with_eps(tokens, &eps)
    }

    /// Evaluation-mode ELBO with fixed draws.
    pub fn elbo_with_eps(&self, tokens: &[usize], eps: &[Vec<f64>]) -> Result<ElboEstimate> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let vars = self.elbo_vars(&mut tape, &bound, tokens, eps, 1.0, &mut unused)?;
        let mu = tape.value(vars.mu).to_vec();
        let sigma: Vec<f64> = tape.value(vars.logvar).iter().map(|lv| (0.5 * lv).exp()).collect();
        let latents = eps
            .iter()
            .map(|e| LatentCode::from_eps(&mu, &sigma, e.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ElboEstimate {
            loss: tape.scalar(vars.loss),
            recon: tape.scalar(vars.recon),
            kl: tape.scalar(vars.kl),
            latents,
        })
    }

    /// Share of positions where greedy generation from μ reproduces the
    /// sentence, over `max(len(target), len(generated))` positions.
    pub fn reconstruction_accuracy(&self, tokens: &[usize]) -> Result<f64> {
        let (mu, _) = self.encode(tokens)?;
        let content: Vec<usize> = tokens.iter().copied().filter(|&t| t != BOS && t != EOS).collect();
        let generated = self.generate(&mu, content.len() + 2)?;
        let denom = content.len().max(generated.len());
        if denom == 0 {
            return Ok(1.0);
        }
        let hits = content.iter().zip(&generated).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / denom as f64)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `id \t μ (comma separated) \t σ (comma separated)` per example.
pub fn latents_tsv<'a, I>(vae: &Vae, items: I) -> Result<String>
where
    I: IntoIterator<Item = (&'a str, &'a [usize])>,
{
    let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
    let mut out = String::from("id\tmu\tsigma\n");
    for (id, tokens) in items {
        let (mu, sigma) = vae.encode(tokens)?;
        out.push_str(&format!("{id}\t{}\t{}\n", join(&mu), join(&sigma)));
    }
    Ok(out)
}
