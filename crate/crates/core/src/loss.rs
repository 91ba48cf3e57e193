//! Training losses: autoencoding, back-translation, interpolated
//! reconstruction, and the conditional adversarial terms.

use rand::Rng;

use crate::disc::DiscVars;
use crate::error::{Error, Result};
use crate::model::{interpolate, sample_gate, DecoderTrace, GenVars, SampleMode};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::text::{AttributeSchema, AttributeVector, TokenSequence};

/// Floor applied inside adversarial logs; saturated discriminator outputs
/// otherwise produce infinities.
pub const LOG_FLOOR: Real = 1e-12;

/// The five supported loss configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossConfigName {
    Ae,
    Int,
    AeAdv,
    AeBtAdv,
    IntAdv,
}

impl LossConfigName {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "ae" => Ok(LossConfigName::Ae),
            "int" => Ok(LossConfigName::Int),
            "ae_adv" => Ok(LossConfigName::AeAdv),
            "ae_bt_adv" => Ok(LossConfigName::AeBtAdv),
            "int_adv" => Ok(LossConfigName::IntAdv),
            other => Err(Error::Config(format!(
                "unknown loss configuration `{other}` (expected ae, int, ae_adv, ae_bt_adv or int_adv)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LossConfigName::Ae => "ae",
            LossConfigName::Int => "int",
            LossConfigName::AeAdv => "ae_adv",
            LossConfigName::AeBtAdv => "ae_bt_adv",
            LossConfigName::IntAdv => "int_adv",
        }
    }

    pub fn all() -> [LossConfigName; 5] {
        [
            LossConfigName::Ae,
            LossConfigName::Int,
            LossConfigName::AeAdv,
            LossConfigName::AeBtAdv,
            LossConfigName::IntAdv,
        ]
    }

    /// Whether the adversarial terms are part of this configuration.
    pub fn adversarial(&self) -> bool {
        matches!(self, LossConfigName::AeAdv | LossConfigName::AeBtAdv | LossConfigName::IntAdv)
    }

    /// Whether mismatched-label samples `y` are needed at all.
    pub fn needs_samples(&self) -> bool {
        !matches!(self, LossConfigName::Ae)
    }

    /// Whether reconstruction goes through the interpolated representation.
    pub fn interpolated(&self) -> bool {
        matches!(self, LossConfigName::Int | LossConfigName::IntAdv)
    }

    /// Whether reconstruction adds the explicit back-translation term.
    pub fn back_translation(&self) -> bool {
        matches!(self, LossConfigName::AeBtAdv)
    }
}

/// Per-step scalar loss components, for logging and the history CSV.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub reconstruction: Real,
    pub adv_d: Real,
    pub adv_g: Real,
    pub total_g: Real,
    pub lambda: Real,
    pub config: LossConfigName,
}

/// How `y` is drawn during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Hard(SampleMode),
    Soft { temperature: Real },
}

/// Autoencoding loss `-log p(x | z_x, l)`; also returns the teacher-forced
/// trace for adversarial reuse.
pub fn loss_ae(
    tape: &mut Tape,
    gv: &GenVars,
    x: &TokenSequence,
    l: &AttributeVector,
    schema: &AttributeSchema,
) -> Result<(Var, DecoderTrace)> {
    let z = gv.encode(tape, x)?;
    let trace = gv.teacher_forced(tape, x, z, &l.encoding(schema))?;
    let nll = trace.nll.expect("teacher-forced trace has nll");
    Ok((nll, trace))
}

/// Everything produced by one interpolated-reconstruction forward.
pub struct IntForward {
    pub nll: Var,
    /// Teacher-forced reconstruction trace of `x` (the "real" trace).
    pub recon_trace: DecoderTrace,
    /// Trace of the sampled sequence `y` under the mismatched label.
    pub y_trace: DecoderTrace,
    pub y: TokenSequence,
    pub gate: Vec<Real>,
}

/// Interpolated reconstruction loss: sample `y` under the mismatched label,
/// re-encode it, mix `z_x`/`z_y` coordinatewise with a Bernoulli(gamma)
/// gate, and reconstruct `x` from the mix. Sampled token ids are constants;
/// `z_y` carries gradient into the encoder.
#[allow(clippy::too_many_arguments)]
pub fn loss_int<R: Rng>(
    tape: &mut Tape,
    gv: &GenVars,
    x: &TokenSequence,
    l: &AttributeVector,
    l_prime: &AttributeVector,
    gamma: Real,
    sampling: Sampling,
    max_len: usize,
    schema: &AttributeSchema,
    rng: &mut R,
) -> Result<IntForward> {
    if l == l_prime {
        return Err(Error::Contract("loss_int requires a mismatched label l' != l".into()));
    }
    let z_x = gv.encode(tape, x)?;
    let (y_trace, z_y) =
        sample_and_reencode(tape, gv, z_x, &l_prime.encoding(schema), sampling, max_len, rng)?;
    let y = y_trace.to_sequence()?;
    let gate = sample_gate(gamma, tape.value(z_x).len(), rng)?;
    let z_xy = interpolate(tape, z_x, z_y, &gate)?;
    let recon_trace = gv.teacher_forced(tape, x, z_xy, &l.encoding(schema))?;
    let nll = recon_trace.nll.expect("teacher-forced trace has nll");
    Ok(IntForward { nll, recon_trace, y_trace, y, gate })
}

/// Interpolated reconstruction with an externally fixed `y` and gate;
/// the measurement route for degeneration identities and gradient checks.
pub fn loss_int_given(
    tape: &mut Tape,
    gv: &GenVars,
    x: &TokenSequence,
    l: &AttributeVector,
    y: &TokenSequence,
    gate: &[Real],
    schema: &AttributeSchema,
) -> Result<Var> {
    let z_x = gv.encode(tape, x)?;
    let z_y = gv.encode(tape, y)?;
    let z_xy = interpolate(tape, z_x, z_y, gate)?;
    let trace = gv.teacher_forced(tape, x, z_xy, &l.encoding(schema))?;
    Ok(trace.nll.expect("teacher-forced trace has nll"))
}

/// Back-translation loss `-log p(x | z_y, l)` for a given sampled `y`.
pub fn loss_bt(
    tape: &mut Tape,
    gv: &GenVars,
    x: &TokenSequence,
    l: &AttributeVector,
    y: &TokenSequence,
    schema: &AttributeSchema,
) -> Result<Var> {
    let z_y = gv.encode(tape, y)?;
    let trace = gv.teacher_forced(tape, x, z_y, &l.encoding(schema))?;
    Ok(trace.nll.expect("teacher-forced trace has nll"))
}

/// Draw `y` under `(z_x, l')` and produce the representation of `y` for the
/// reconstruction mix. Hard modes re-encode the discrete tokens; soft mode
/// re-encodes the differentiable input mixtures.
pub fn sample_and_reencode<R: Rng>(
    tape: &mut Tape,
    gv: &GenVars,
    z_x: Var,
    l_prime_encoding: &[Real],
    sampling: Sampling,
    max_len: usize,
    rng: &mut R,
) -> Result<(DecoderTrace, Var)> {
    match sampling {
        Sampling::Hard(mode) => {
            let trace = gv.hard_sample(tape, z_x, l_prime_encoding, mode, rng, max_len)?;
            let y = trace.to_sequence()?;
            let z_y = gv.encode(tape, &y)?;
            Ok((trace, z_y))
        }
        Sampling::Soft { temperature } => {
            let trace = gv.soft_sample(tape, z_x, l_prime_encoding, temperature, max_len)?;
            // Drop the mixture at the EOS position; framing adds EOS itself.
            let n = trace.soft_inputs.len()
                - usize::from(trace.tokens.last() == Some(&crate::text::EOS));
            let inputs: Vec<Var> = trace.soft_inputs[..n.max(1)].to_vec();
            let z_y = gv.encode_soft(tape, &inputs)?;
            Ok((trace, z_y))
        }
    }
}

/// Discriminator objective value for one matched/mismatched triple:
/// `2 log D(h_x, l) + log(1 - D(h_y, l')) + log(1 - D(h_x, l'))`, logs
/// clamped at [`LOG_FLOOR`]. The discriminator maximizes this; training
/// minimizes its negation. `h_x`/`h_y` enter as detached values.
pub fn loss_adv_d(
    tape: &mut Tape,
    dv: &DiscVars,
    h_x: &[Tensor],
    h_y: &[Tensor],
    l: &AttributeVector,
    l_prime: &AttributeVector,
    schema: &AttributeSchema,
) -> Result<Var> {
    if l == l_prime {
        return Err(Error::Contract("loss_adv_d requires l' != l".into()));
    }
    let hx: Vec<Var> = h_x.iter().map(|t| tape.constant(t.clone())).collect();
    let hy: Vec<Var> = h_y.iter().map(|t| tape.constant(t.clone())).collect();
    let phi_x = dv.encode_states(tape, &hx)?;
    let phi_y = dv.encode_states(tape, &hy)?;
    let l_enc = l.encoding(schema);
    let lp_enc = l_prime.encoding(schema);

    let d_real = dv.score_summary(tape, phi_x, &l_enc)?;
    let real_term = tape.ln_clamped(d_real, LOG_FLOOR);
    let real_term = tape.scale(real_term, 2.0);

    let d_fake_y = dv.score_summary(tape, phi_y, &lp_enc)?;
    let one_minus_y = tape.one_minus(d_fake_y);
    let fake_y_term = tape.ln_clamped(one_minus_y, LOG_FLOOR);

    let d_fake_x = dv.score_summary(tape, phi_x, &lp_enc)?;
    let one_minus_x = tape.one_minus(d_fake_x);
    let fake_x_term = tape.ln_clamped(one_minus_x, LOG_FLOOR);

    let s = tape.add(real_term, fake_y_term)?;
    tape.add(s, fake_x_term)
}

/// Non-saturating generator adversarial loss `-log D(h_y, l')`. The trace
/// stays on the generator tape; register the discriminator frozen so only
/// generator parameters receive gradient.
pub fn loss_adv_g(tape: &mut Tape, dv: &DiscVars, h_y: &DecoderTrace) -> Result<Var> {
    let score = dv.score_states(tape, &h_y.hidden, &h_y.label_encoding)?;
    let ln = tape.ln_clamped(score, LOG_FLOOR);
    Ok(tape.scale(ln, -1.0))
}

/// Combine reconstruction and generator-adversarial terms on the tape:
/// `total = reconstruction + lambda * adv_g` (adversarial part optional).
pub fn total_generator_loss(
    tape: &mut Tape,
    reconstruction: Var,
    adv_g: Option<Var>,
    lambda: Real,
) -> Result<Var> {
    match adv_g {
        Some(a) => {
            let scaled = tape.scale(a, lambda);
            tape.add(reconstruction, scaled)
        }
        None => Ok(reconstruction),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disc::Discriminator;
    use crate::model::{GenSizes, Generator};
    use crate::params::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema() -> AttributeSchema {
        AttributeSchema::new(vec![(
            "sentiment".into(),
            vec!["neg".into(), "pos".into()],
        )])
        .unwrap()
    }

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence::from_content(ids, ids.len()).unwrap().0
    }

    fn small_generator(seed: u64, vocab: usize) -> Generator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Generator::new(GenSizes { d_emb: 6, d_enc: 5, d_dec: 7, d_attr: 3 }, vocab, 2, &mut rng)
    }

    #[test]
    fn uniform_model_gives_log_vocab_per_step() {
        let mut gen = small_generator(0, 1000);
        for id in gen.param_ids() {
            gen.store.value_mut(id).fill(0.0);
        }
        let sch = schema();
        let l = sch.encode(&[("sentiment", "pos")]).unwrap();
        let x = seq(&[10, 20]); // two content tokens + EOS = 3 steps
        let mut tape = Tape::new();
        let gv = gen.vars(&mut tape, true);
        let (nll, trace) = loss_ae(&mut tape, &gv, &x, &l, &sch).unwrap();
        assert_eq!(trace.len(), 3);
        let expected = 3.0 * (1000.0 as Real).ln();
        assert!((tape.value(nll).item() - expected).abs() < 1e-9);
    }

    #[test]
    fn interpolation_degenerates_to_ae_and_bt() {
        let gen = small_generator(1, 12);
        let sch = schema();
        let l = sch.encode(&[("sentiment", "neg")]).unwrap();
        let lp = sch.encode(&[("sentiment", "pos")]).unwrap();
        let x = seq(&[4, 5, 6]);

        // A fixed y, as if sampled earlier.
        let y = seq(&[7, 8]);

        let mut tape = Tape::new();
        let gv = gen.vars(&mut tape, true);
        let (ae, _) = loss_ae(&mut tape, &gv, &x, &l, &sch).unwrap();
        let ae = tape.value(ae).item();

        let mut tape = Tape::new();
        let gv = gen.vars(&mut tape, true);
        let gate = vec![1.0; gen.sizes.d_enc];
        let int1 = loss_int_given(&mut tape, &gv, &x, &l, &y, &gate, &sch).unwrap();
        let int1 = tape.value(int1).item();
        assert!((int1 - ae).abs() <= 1e-10 * ae.abs().max(1.0), "{int1} vs {ae}");

        let mut tape = Tape::new();
        let gv = gen.vars(&mut tape, true);
        let bt = loss_bt(&mut tape, &gv, &x, &l, &y, &sch).unwrap();
        let bt = tape.value(bt).item();

        let mut tape = Tape::new();
        let gv = gen.vars(&mut tape, true);
        let gate = vec![0.0; gen.sizes.d_enc];
        let int0 = loss_int_given(&mut tape, &gv, &x, &l, &y, &gate, &sch).unwrap();
        let int0 = tape.value(int0).item();
        assert!((int0 - bt).abs() <= 1e-10 * bt.abs().max(1.0), "{int0} vs {bt}");

        let _ = lp;
    }

    #[test]
    fn loss_int_rejects_matching_labels() {
        let gen = small_generator(2, 12);
        let sch = schema();
        let l = sch.encode(&[("sentiment", "neg")]).unwrap();
        let x = seq(&[4, 5]);
        let mut tape = Tape::new();
        let gv = gen.vars(&mut tape, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = loss_int(
            &mut tape,
            &gv,
            &x,
            &l,
            &l,
            0.5,
            Sampling::Hard(SampleMode::Greedy),
            8,
            &sch,
            &mut rng,
        );
        assert!(err.is_err());
    }

    #[test]
    fn loss_int_returns_reusable_sample() {
        let gen = small_generator(3, 12);
        let sch = schema();
        let l = sch.encode(&[("sentiment", "neg")]).unwrap();
        let lp = sch.encode(&[("sentiment", "pos")]).unwrap();
        let x = seq(&[4, 5, 6]);
        let mut tape = Tape::new();
        let gv = gen.vars(&mut tape, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fwd = loss_int(
            &mut tape,
            &gv,
            &x,
            &l,
            &lp,
            0.5,
            Sampling::Hard(SampleMode::Greedy),
            8,
            &sch,
            &mut rng,
        )
        .unwrap();
        assert_eq!(fwd.y_trace.tokens.iter().filter(|&&t| t != crate::text::EOS).count(),
                   fwd.y.content_len());
        assert_eq!(fwd.gate.len(), gen.sizes.d_enc);
        assert!(tape.value(fwd.nll).item() > 0.0);
        assert_eq!(fwd.recon_trace.len(), x.num_steps());
    }

    fn constant_state_disc(w_real: Real, w_mis: Real) -> (Discriminator, AttributeSchema) {
        // GRU biases push every state to tanh(2) regardless of input, so the
        // summary is a constant positive vector and W rows set the logits.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut disc = Discriminator::new(2, 7, 2, &mut rng);
        for id in disc.param_ids() {
            disc.store.value_mut(id).fill(0.0);
        }
        let bu = disc.store.find("disc.gru.b_u").unwrap();
        let bn = disc.store.find("disc.gru.b_n").unwrap();
        disc.store.value_mut(bu).fill(10.0);
        disc.store.value_mut(bn).fill(2.0);
        let w = disc.store.find("disc.w").unwrap();
        let wt = disc.store.value_mut(w);
        for j in 0..4 {
            wt.data_mut()[j] = w_real; // row 0: label "neg"
            wt.data_mut()[4 + j] = w_mis; // row 1: label "pos"
        }
        (disc, schema())
    }

    fn some_states(n: usize) -> Vec<Tensor> {
        (0..n).map(|i| Tensor::vector(vec![0.1 * i as Real; 7])).collect()
    }

    #[test]
    fn adv_d_plugin_value_at_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut disc = Discriminator::new(2, 7, 2, &mut rng);
        for id in disc.param_ids() {
            disc.store.value_mut(id).fill(0.0);
        }
        let sch = schema();
        let l = sch.encode(&[("sentiment", "neg")]).unwrap();
        let lp = sch.encode(&[("sentiment", "pos")]).unwrap();
        let mut tape = Tape::new();
        let dv = disc.vars(&mut tape, true);
        let v = loss_adv_d(&mut tape, &dv, &some_states(3), &some_states(4), &l, &lp, &sch).unwrap();
        let expected = 4.0 * (0.5 as Real).ln();
        assert!((tape.value(v).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn adv_d_supremum_approaches_zero_for_ideal_discriminator() {
        let (disc, sch) = constant_state_disc(5.0, -5.0);
        let l = sch.encode(&[("sentiment", "neg")]).unwrap();
        let lp = sch.encode(&[("sentiment", "pos")]).unwrap();
        let mut tape = Tape::new();
        let dv = disc.vars(&mut tape, true);
        let v = loss_adv_d(&mut tape, &dv, &some_states(3), &some_states(4), &l, &lp, &sch).unwrap();
        assert!(tape.value(v).item().abs() < 1e-6, "{}", tape.value(v).item());
    }

    #[test]
    fn adv_d_log_clamp_keeps_saturated_scores_finite() {
        // Real-pair score around 1e-15: below the 1e-12 floor.
        let (disc, sch) = constant_state_disc(-9.0, -9.0);
        let l = sch.encode(&[("sentiment", "neg")]).unwrap();
        let lp = sch.encode(&[("sentiment", "pos")]).unwrap();
        let mut tape = Tape::new();
        let dv = disc.vars(&mut tape, true);
        let hx = some_states(3);
        let phi_probe = {
            let vars: Vec<Var> = hx.iter().map(|t| tape.constant(t.clone())).collect();
            let s = dv.encode_states(&mut tape, &vars).unwrap();
            let d = dv.score_summary(&mut tape, s, &l.encoding(&sch)).unwrap();
            tape.value(d).item()
        };
        assert!(phi_probe < 1e-12, "score should saturate, got {phi_probe}");
        let v = loss_adv_d(&mut tape, &dv, &hx, &some_states(4), &l, &lp, &sch).unwrap();
        let value = tape.value(v).item();
        assert!(value.is_finite());
        // The real term hit the floor exactly.
        let floor_term = 2.0 * LOG_FLOOR.ln();
        assert!(value <= floor_term + 1.0 && value >= floor_term - 1.0, "{value}");
    }

    #[test]
    fn adv_d_is_not_symmetric_under_role_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let disc = Discriminator::new(3, 7, 2, &mut rng);
        let sch = schema();
        let l = sch.encode(&[("sentiment", "neg")]).unwrap();
        let lp = sch.encode(&[("sentiment", "pos")]).unwrap();
        let hx = some_states(3);
        let hy: Vec<Tensor> =
            (0..4).map(|i| Tensor::vector(vec![0.3 - 0.2 * i as Real; 7])).collect();

        let mut tape = Tape::new();
        let dv = disc.vars(&mut tape, true);
        let a = loss_adv_d(&mut tape, &dv, &hx, &hy, &l, &lp, &sch).unwrap();
        let b = loss_adv_d(&mut tape, &dv, &hy, &hx, &lp, &l, &sch).unwrap();
        assert!((tape.value(a).item() - tape.value(b).item()).abs() > 1e-9);
    }

    #[test]
    fn adv_g_values_at_known_scores() {
        // D == 0.5 everywhere (zero parameters): loss = ln 2.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut disc = Discriminator::new(2, 7, 2, &mut rng);
        for id in disc.param_ids() {
            disc.store.value_mut(id).fill(0.0);
        }
        let sch = schema();
        let lp = sch.encode(&[("sentiment", "pos")]).unwrap();
        let gen = small_generator(7, 12);
        let mut tape = Tape::new();
        let gv = gen.vars(&mut tape, true);
        let x = seq(&[4, 5, 6]);
        let z = gv.encode(&mut tape, &x).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(0);
        let trace = gv
            .hard_sample(&mut tape, z, &lp.encoding(&sch), SampleMode::Greedy, &mut rng2, 3)
            .unwrap();
        let dv = disc.vars(&mut tape, true);
        let g = loss_adv_g(&mut tape, &dv, &trace).unwrap();
        assert!((tape.value(g).item() - (2.0 as Real).ln()).abs() < 1e-12);

        // D -> 1 on (h_y, l'): loss -> 0.
        let (ideal, sch2) = constant_state_disc(-5.0, 5.0);
        let dv = ideal.vars(&mut tape, true);
        let g = loss_adv_g(&mut tape, &dv, &trace).unwrap();
        let _ = sch2;
        assert!(tape.value(g).item().abs() < 1e-6);
    }

    #[test]
    fn adv_g_gradient_reaches_decoder_weights() {
        let mut gen = small_generator(8, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let disc = Discriminator::new(3, 7, 2, &mut rng);
        let sch = schema();
        let lp = sch.encode(&[("sentiment", "pos")]).unwrap();
        let x = seq(&[4, 5, 6]);

        let mut tape = Tape::new();
        let gv = gen.vars(&mut tape, false);
        let z = gv.encode(&mut tape, &x).unwrap();
        let mut srng = ChaCha8Rng::seed_from_u64(0);
        let trace = gv
            .hard_sample(&mut tape, z, &lp.encoding(&sch), SampleMode::Greedy, &mut srng, 3)
            .unwrap();
        let dv = disc.vars(&mut tape, true); // frozen for the generator pass
        let g = loss_adv_g(&mut tape, &dv, &trace).unwrap();
        tape.backward(g, &mut gen.store).unwrap();
        for name in ["dec.gru.w_r", "dec.init_w", "enc.w_r"] {
            let id = gen.store.find(name).unwrap();
            let norm: Real = gen.store.grad(id).data().iter().map(|v| v.abs()).sum();
            assert!(norm > 0.0, "no adversarial gradient reached {name}");
        }
    }

    #[test]
    fn total_combination_arithmetic() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let rec = tape.constant_scalar(2.0);
        let adv = tape.constant_scalar(1.0);
        let t = total_generator_loss(&mut tape, rec, Some(adv), 1.5).unwrap();
        assert_eq!(tape.value(t).item(), 3.5);
        let t0 = total_generator_loss(&mut tape, rec, Some(adv), 0.0).unwrap();
        assert_eq!(tape.value(t0).item(), 2.0);
        let bare = total_generator_loss(&mut tape, rec, None, 1.5).unwrap();
        assert_eq!(tape.value(bare).item(), 2.0);
        let _ = &mut store;

        assert!(LossConfigName::parse("nope").is_err());
        assert_eq!(LossConfigName::parse("ae_bt_adv").unwrap(), LossConfigName::AeBtAdv);
    }
}
