//! The generator: GRU encoder producing a content representation and an
//! attribute-conditioned GRU decoder with teacher-forced, hard-sampled and
//! soft-sampled decoding modes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::gru::{GruCell, GruVars};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::text::{AttributeSchema, AttributeVector, TokenSequence, BOS, EOS, PAD, UNK};

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenSizes {
    pub d_emb: usize,
    pub d_enc: usize,
    pub d_dec: usize,
    pub d_attr: usize,
}

impl GenSizes {
    /// Small sizes for desk-scale experiments.
    pub fn desk() -> Self {
        GenSizes { d_emb: 48, d_enc: 48, d_dec: 64, d_attr: 8 }
    }

    /// Full-scale preset: encoder 500, decoder 700, attribute embedding 200.
    pub fn full() -> Self {
        GenSizes { d_emb: 300, d_enc: 500, d_dec: 700, d_attr: 200 }
    }
}

/// How the decoder consumed its own outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    TeacherForced,
    HardGreedy,
    HardMultinomial,
    Soft,
}

/// Token selection during hard sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Greedy,
    Multinomial,
}

/// One decoding pass: hidden-state sequence, per-step logits, emitted (or
/// gold) tokens and the conditioning it ran under. Hidden states start at
/// the state after consuming BOS; the initial state is excluded.
pub struct DecoderTrace {
    pub hidden: Vec<Var>,
    pub logits: Vec<Var>,
    pub tokens: Vec<u32>,
    pub mode: DecodeMode,
    /// Attribute encoding the decoder was conditioned on.
    pub label_encoding: Vec<Real>,
    /// Summed cross-entropy over all steps (teacher-forced traces only).
    pub nll: Option<Var>,
    /// Differentiable input mixtures fed back at each step (soft traces only).
    pub soft_inputs: Vec<Var>,
}

impl DecoderTrace {
    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    /// Emitted content as a sequence (drops a trailing EOS if present).
    pub fn to_sequence(&self) -> Result<TokenSequence> {
        let content: Vec<u32> =
            self.tokens.iter().copied().filter(|&t| t != EOS).collect();
        if content.is_empty() {
            return Err(Error::Contract("decoded trace has no content tokens".into()));
        }
        Ok(TokenSequence::from_content(&content, content.len())?.0)
    }
}

/// Generator parameters: shared word-embedding table, encoder GRU (optional
/// second direction), attribute projection, decoder-init projection, decoder
/// GRU and output projection.
pub struct Generator {
    pub sizes: GenSizes,
    pub vocab_size: usize,
    pub attr_width: usize,
    pub store: ParamStore,
    emb: ParamId,
    enc: GruCell,
    enc_bwd: Option<GruCell>,
    attr_w: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    dec: GruCell,
    out_w: ParamId,
    out_b: ParamId,
}

impl Generator {
    pub fn new<R: Rng>(sizes: GenSizes, vocab_size: usize, attr_width: usize, rng: &mut R) -> Self {
        Self::with_encoder(sizes, vocab_size, attr_width, false, rng)
    }

    /// `bidirectional` adds a backward encoder pass; the content
    /// representation is then the concatenation of both final states.
    pub fn with_encoder<R: Rng>(
        sizes: GenSizes,
        vocab_size: usize,
        attr_width: usize,
        bidirectional: bool,
        rng: &mut R,
    ) -> Self {
        let mut store = ParamStore::new();
        let emb = store.add_weight("emb", vocab_size, sizes.d_emb, rng);
        let enc = GruCell::new(&mut store, "enc", sizes.d_emb, sizes.d_enc, rng);
        let enc_bwd = bidirectional
            .then(|| GruCell::new(&mut store, "enc_bwd", sizes.d_emb, sizes.d_enc, rng));
        let z_dim = sizes.d_enc * if bidirectional { 2 } else { 1 };
        let attr_w = store.add_weight("dec.attr_w", sizes.d_attr, attr_width, rng);
        let init_w = store.add_weight("dec.init_w", sizes.d_dec, z_dim + sizes.d_attr, rng);
        let init_b = store.add_zeros("dec.init_b", &[sizes.d_dec]);
        let dec = GruCell::new(&mut store, "dec.gru", sizes.d_emb, sizes.d_dec, rng);
        let out_w = store.add_weight("dec.out_w", vocab_size, sizes.d_dec, rng);
        let out_b = store.add_zeros("dec.out_b", &[vocab_size]);
        Generator {
            sizes,
            vocab_size,
            attr_width,
            store,
            emb,
            enc,
            enc_bwd,
            attr_w,
            init_w,
            init_b,
            dec,
            out_w,
            out_b,
        }
    }

    /// Width of the content representation.
    pub fn z_dim(&self) -> usize {
        self.sizes.d_enc * if self.enc_bwd.is_some() { 2 } else { 1 }
    }

    /// Overwrite embedding rows with externally trained vectors where given.
    pub fn set_pretrained_embeddings(&mut self, rows: &[Option<Vec<Real>>]) -> Result<()> {
        if rows.len() != self.vocab_size {
            return Err(Error::Shape(format!(
                "expected {} embedding rows, got {}",
                self.vocab_size,
                rows.len()
            )));
        }
        let d = self.sizes.d_emb;
        let table = self.store.value_mut(self.emb);
        for (i, row) in rows.iter().enumerate() {
            if let Some(v) = row {
                if v.len() != d {
                    return Err(Error::Shape(format!(
                        "embedding row {i} has {} values, expected {d}",
                        v.len()
                    )));
                }
                table.data_mut()[i * d..(i + 1) * d].copy_from_slice(v);
            }
        }
        Ok(())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    /// Register all generator parameters on a tape.
    pub fn vars(&self, tape: &mut Tape, frozen: bool) -> GenVars {
        let mut reg = |id: ParamId| {
            if frozen {
                tape.param_frozen(&self.store, id)
            } else {
                tape.param(&self.store, id)
            }
        };
        GenVars {
            emb: reg(self.emb),
            attr_w: reg(self.attr_w),
            init_w: reg(self.init_w),
            init_b: reg(self.init_b),
            out_w: reg(self.out_w),
            out_b: reg(self.out_b),
            enc: self.enc.vars(tape, &self.store, frozen),
            enc_bwd: self.enc_bwd.as_ref().map(|c| c.vars(tape, &self.store, frozen)),
            dec: self.dec.vars(tape, &self.store, frozen),
            d_enc: self.sizes.d_enc,
        }
    }

    /// Greedy rewrite of `x` under the target attribute vector. Runs on a
    /// throwaway tape; parameters are not touched.
    pub fn rewrite(
        &self,
        x: &TokenSequence,
        target: &AttributeVector,
        schema: &AttributeSchema,
        max_len: usize,
    ) -> Result<TokenSequence> {
        self.rewrite_with_encoding(x, &target.encoding(schema), max_len)
    }

    /// Greedy rewrite under a raw attribute encoding (all-zero to ignore
    /// attributes, as the plain seq2seq baseline does).
    pub fn rewrite_with_encoding(
        &self,
        x: &TokenSequence,
        label_encoding: &[Real],
        max_len: usize,
    ) -> Result<TokenSequence> {
        let mut tape = Tape::new();
        let gv = self.vars(&mut tape, true);
        let z = gv.encode(&mut tape, x)?;
        // Greedy decoding is deterministic; the RNG is never consulted.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace =
            gv.hard_sample(&mut tape, z, label_encoding, SampleMode::Greedy, &mut rng, max_len)?;
        trace.to_sequence()
    }
}

/// Tape-registered generator parameters, valid for one tape.
pub struct GenVars {
    pub emb: Var,
    attr_w: Var,
    init_w: Var,
    init_b: Var,
    out_w: Var,
    out_b: Var,
    enc: GruVars,
    enc_bwd: Option<GruVars>,
    dec: GruVars,
    d_enc: usize,
}

impl GenVars {
    fn run_direction(&self, tape: &mut Tape, cell: &GruVars, ids: &[u32]) -> Result<Var> {
        let mut h = tape.constant(Tensor::zeros(&[self.d_enc]));
        for &tok in ids {
            let e = tape.row(self.emb, tok as usize)?;
            h = cell.step(tape, e, h)?;
        }
        Ok(h)
    }

    /// Content representation: final encoder state after consuming the
    /// framed token sequence from a zero initial state (both directions
    /// concatenated when the encoder is bidirectional).
    pub fn encode(&self, tape: &mut Tape, x: &TokenSequence) -> Result<Var> {
        if x.content_len() == 0 {
            return Err(Error::Contract("cannot encode an empty sequence".into()));
        }
        let fwd = self.run_direction(tape, &self.enc.clone(), x.framed())?;
        match self.enc_bwd {
            Some(bwd_cell) => {
                let reversed: Vec<u32> = x.framed().iter().rev().copied().collect();
                let bwd = self.run_direction(tape, &bwd_cell, &reversed)?;
                tape.concat(fwd, bwd)
            }
            None => Ok(fwd),
        }
    }

    /// Encoder pass over differentiable input vectors (soft-sampled
    /// sequences). A BOS embedding is prepended and an EOS embedding
    /// appended to mirror the framing of discrete sequences.
    pub fn encode_soft(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Contract("cannot encode an empty soft sequence".into()));
        }
        let bos = tape.row(self.emb, BOS as usize)?;
        let eos = tape.row(self.emb, EOS as usize)?;
        let run = |tape: &mut Tape, cell: &GruVars, seq: &[Var]| -> Result<Var> {
            let mut h = tape.constant(Tensor::zeros(&[self.d_enc]));
            for &v in seq {
                h = cell.step(tape, v, h)?;
            }
            Ok(h)
        };
        let mut framed: Vec<Var> = Vec::with_capacity(inputs.len() + 2);
        framed.push(bos);
        framed.extend_from_slice(inputs);
        framed.push(eos);
        let fwd = run(tape, &self.enc.clone(), &framed)?;
        match self.enc_bwd {
            Some(bwd_cell) => {
                let reversed: Vec<Var> = framed.iter().rev().copied().collect();
                let bwd = run(tape, &bwd_cell, &reversed)?;
                tape.concat(fwd, bwd)
            }
            None => Ok(fwd),
        }
    }

    /// Initial decoder state from the content representation and the
    /// attribute embedding: `tanh(W_init [z ; A l_v] + b_init)`. Passing an
    /// all-zero encoding removes attribute conditioning (the plain seq2seq
    /// baseline).
    pub fn decoder_init(
        &self,
        tape: &mut Tape,
        z: Var,
        label_encoding: &[Real],
    ) -> Result<Var> {
        let l_v = tape.constant(Tensor::vector(label_encoding.to_vec()));
        let a = tape.matvec(self.attr_w, l_v)?;
        let cat = tape.concat(z, a)?;
        let pre = tape.matvec(self.init_w, cat)?;
        let pre = tape.add(pre, self.init_b)?;
        Ok(tape.tanh(pre))
    }

    fn step_logits(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let l = tape.matvec(self.out_w, h)?;
        tape.add(l, self.out_b)
    }

    /// Teacher-forced trace of `x` under `(z, label)`: inputs are BOS plus
    /// the gold tokens, targets are the gold tokens plus EOS. `nll` holds
    /// the summed per-step cross-entropy, i.e. `-log p(x | z, label)`.
    pub fn teacher_forced(
        &self,
        tape: &mut Tape,
        x: &TokenSequence,
        z: Var,
        label_encoding: &[Real],
    ) -> Result<DecoderTrace> {
        let mut h = self.decoder_init(tape, z, label_encoding)?;
        let framed = x.framed();
        let mut hidden = Vec::with_capacity(x.num_steps());
        let mut logits = Vec::with_capacity(x.num_steps());
        let mut tokens = Vec::with_capacity(x.num_steps());
        let mut nll: Option<Var> = None;
        for t in 0..x.num_steps() {
            let input = framed[t];
            let target = framed[t + 1];
            let e = tape.row(self.emb, input as usize)?;
            h = self.dec.step(tape, e, h)?;
            let lg = self.step_logits(tape, h)?;
            let ce = tape.softmax_cross_entropy(lg, target as usize)?;
            nll = Some(match nll {
                Some(acc) => tape.add(acc, ce)?,
                None => ce,
            });
            hidden.push(h);
            logits.push(lg);
            tokens.push(target);
        }
        Ok(DecoderTrace {
            hidden,
            logits,
            tokens,
            mode: DecodeMode::TeacherForced,
            label_encoding: label_encoding.to_vec(),
            nll,
            soft_inputs: Vec::new(),
        })
    }

    /// Hard-sampled trace under `(z, label)`: at each step the emitted
    /// discrete token is embedded as the next input. Token choice is
    /// detached by construction (ids carry no gradient); the hidden states
    /// stay on the tape so adversarial gradients flow through the
    /// recurrence. Stops after emitting EOS or after `max_len` content
    /// tokens. PAD/BOS/UNK are masked out of the choice, as is EOS on the
    /// first step so the trace always carries at least one content token.
    pub fn hard_sample<R: Rng>(
        &self,
        tape: &mut Tape,
        z: Var,
        label_encoding: &[Real],
        mode: SampleMode,
        rng: &mut R,
        max_len: usize,
    ) -> Result<DecoderTrace> {
        if max_len < 1 {
            return Err(Error::Contract("hard_sample requires max_len >= 1".into()));
        }
        let mut h = self.decoder_init(tape, z, label_encoding)?;
        let mut hidden = Vec::new();
        let mut logits = Vec::new();
        let mut tokens = Vec::new();
        let mut prev = BOS;
        loop {
            let e = tape.row(self.emb, prev as usize)?;
            h = self.dec.step(tape, e, h)?;
            let lg = self.step_logits(tape, h)?;
            let first = tokens.is_empty();
            let tok = choose_token(tape.value(lg).data(), mode, rng, first);
            hidden.push(h);
            logits.push(lg);
            tokens.push(tok);
            if tok == EOS || tokens.iter().filter(|&&t| t != EOS).count() >= max_len {
                break;
            }
            prev = tok;
        }
        Ok(DecoderTrace {
            hidden,
            logits,
            tokens,
            mode: match mode {
                SampleMode::Greedy => DecodeMode::HardGreedy,
                SampleMode::Multinomial => DecodeMode::HardMultinomial,
            },
            label_encoding: label_encoding.to_vec(),
            nll: None,
            soft_inputs: Vec::new(),
        })
    }

    /// Soft-sampled trace: the next input is the embedding table weighted by
    /// `softmax(logits / temperature)`, keeping the whole trace
    /// differentiable. Recorded tokens are the (masked) argmaxes, used for
    /// logging and the stop condition only.
    pub fn soft_sample(
        &self,
        tape: &mut Tape,
        z: Var,
        label_encoding: &[Real],
        temperature: Real,
        max_len: usize,
    ) -> Result<DecoderTrace> {
        if temperature <= 0.0 {
            return Err(Error::Contract(format!(
                "soft_sample requires temperature > 0, got {temperature}"
            )));
        }
        if max_len < 1 {
            return Err(Error::Contract("soft_sample requires max_len >= 1".into()));
        }
        let mut h = self.decoder_init(tape, z, label_encoding)?;
        let mut hidden = Vec::new();
        let mut logits = Vec::new();
        let mut tokens = Vec::new();
        let mut soft_inputs = Vec::new();
        let mut input = tape.row(self.emb, BOS as usize)?;
        loop {
            h = self.dec.step(tape, input, h)?;
            let lg = self.step_logits(tape, h)?;
            let probs = tape.softmax(lg, temperature)?;
            let mix = tape.matvec_t(self.emb, probs)?;
            let first = tokens.is_empty();
            let tok = argmax_masked(tape.value(lg).data(), first);
            hidden.push(h);
            logits.push(lg);
            tokens.push(tok);
            soft_inputs.push(mix);
            if tok == EOS || tokens.iter().filter(|&&t| t != EOS).count() >= max_len {
                break;
            }
            input = mix;
        }
        Ok(DecoderTrace {
            hidden,
            logits,
            tokens,
            mode: DecodeMode::Soft,
            label_encoding: label_encoding.to_vec(),
            nll: None,
            soft_inputs,
        })
    }
}

/// Coordinatewise mix `z_xy = g .* z_x + (1 - g) .* z_y` with a fixed
/// binary gate.
pub fn interpolate(tape: &mut Tape, z_x: Var, z_y: Var, gate: &[Real]) -> Result<Var> {
    if tape.value(z_x).shape() != tape.value(z_y).shape()
        || tape.value(z_x).len() != gate.len()
    {
        return Err(Error::Shape("interpolate operands must share one shape".into()));
    }
    let g = tape.constant(Tensor::vector(gate.to_vec()));
    let not_g = tape.one_minus(g);
    let a = tape.mul(g, z_x)?;
    let b = tape.mul(not_g, z_y)?;
    tape.add(a, b)
}

/// Sample a binary gate with `P(g_i = 1) = gamma`.
pub fn sample_gate<R: Rng>(gamma: Real, dim: usize, rng: &mut R) -> Result<Vec<Real>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Contract(format!("gamma must lie in [0,1], got {gamma}")));
    }
    Ok((0..dim)
        .map(|_| {
            let u: f64 = rng.gen::<f64>();
            if u < gamma as f64 {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

fn masked(tok: u32, first_step: bool) -> bool {
    tok == PAD || tok == BOS || tok == UNK || (first_step && tok == EOS)
}

fn argmax_masked(logits: &[Real], first_step: bool) -> u32 {
    let mut best = u32::MAX;
    let mut best_v = Real::NEG_INFINITY;
    for (i, &v) in logits.iter().enumerate() {
        if masked(i as u32, first_step) {
            continue;
        }
        if v > best_v {
            best_v = v;
            best = i as u32;
        }
    }
    best
}

fn choose_token<R: Rng>(logits: &[Real], mode: SampleMode, rng: &mut R, first_step: bool) -> u32 {
    match mode {
        SampleMode::Greedy => argmax_masked(logits, first_step),
        SampleMode::Multinomial => {
            let max = logits
                .iter()
                .enumerate()
                .filter(|(i, _)| !masked(*i as u32, first_step))
                .map(|(_, &v)| v)
                .fold(Real::NEG_INFINITY, Real::max);
            let weights: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if masked(i as u32, first_step) {
                        0.0
                    } else {
                        ((v - max) as f64).exp()
                    }
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut draw = rng.gen::<f64>() * total;
            for (i, w) in weights.iter().enumerate() {
                draw -= w;
                if draw <= 0.0 {
                    return i as u32;
                }
            }
            argmax_masked(logits, first_step)
        }
    }
}
