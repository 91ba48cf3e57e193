//! Alternating adversarial training with validation-based model selection,
//! temperature annealing, supervised pretraining, and the ablation grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::bytes_digest;
use crate::classifier::AttributeClassifier;
use crate::config::{SamplingKind, TrainConfig};
use crate::disc::Discriminator;
use crate::error::{Error, Result};
use crate::eval::{attribute_accuracy, f_content, mean_bleu, BleuMode, NeuralRewriter};
use crate::loss::{
    loss_adv_d, loss_adv_g, loss_ae, loss_bt, loss_int, sample_and_reencode, total_generator_loss,
    LossBreakdown, LossConfigName, Sampling,
};
use crate::model::{DecoderTrace, Generator};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::text::{
    make_batches, AttributeSchema, AttributeVector, Batch, LabeledCorpus, Split, TokenSequence,
};

/// Exponentially decayed softmax temperature with a constant floor:
/// `max(floor, init * decay^step)`.
pub fn anneal_temperature(step: usize, init: Real, floor: Real, decay: Real) -> Result<Real> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::Config(format!("temperature decay must lie in (0,1), got {decay}")));
    }
    Ok((init * decay.powi(step as i32)).max(floor))
}

/// One validation measurement, appended in step order.
#[derive(Debug, Clone)]
pub struct ValidationRecord {
    pub step: usize,
    /// Autoencoding loss on the validation subset.
    pub recon_loss: Real,
    /// Classifier accuracy of greedy conditional samples.
    pub attribute_accuracy: Real,
    /// Round-trip content BLEU-1 on the validation subset.
    pub content_bleu: Real,
    /// Mean discriminator objective value since the previous record.
    pub adv_d: Real,
    /// Mean generator adversarial loss since the previous record.
    pub adv_g: Real,
    /// Digest of the generator parameters at this step.
    pub snapshot_digest: String,
}

/// Training history CSV, one row per validation.
pub fn history_csv(records: &[ValidationRecord]) -> String {
    let mut out = String::from("step,content_bleu,attribute_accuracy,recon_loss,adv_d,adv_g\n");
    for r in records {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.step, r.content_bleu, r.attribute_accuracy, r.recon_loss, r.adv_d, r.adv_g
        ));
    }
    out
}

/// Trajectory CSV for the ablation grid.
pub fn grid_csv(records: &[ValidationRecord]) -> String {
    let mut out = String::from("step,content_bleu,attribute_accuracy\n");
    for r in records {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            r.step, r.content_bleu, r.attribute_accuracy
        ));
    }
    out
}

/// Generator and discriminator freshly initialized from the config's seed.
pub fn build_models(cfg: &TrainConfig, vocab_size: usize, attr_width: usize) -> (Generator, Discriminator) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gen = Generator::with_encoder(
        cfg.gen_sizes(),
        vocab_size,
        attr_width,
        cfg.bidirectional_encoder,
        &mut rng,
    );
    let disc = Discriminator::new(cfg.d_disc, cfg.d_dec, attr_width, &mut rng);
    (gen, disc)
}

/// Generation cutoff: configured value, or 1.5x the longest training
/// sentence when left at 0.
pub fn resolve_gen_max_len(cfg: &TrainConfig, train: &LabeledCorpus) -> usize {
    if cfg.gen_max_len > 0 {
        cfg.gen_max_len
    } else {
        ((train.max_content_len() as f64) * 1.5).ceil() as usize
    }
}

fn label_encoding(cfg: &TrainConfig, l: &AttributeVector, schema: &AttributeSchema) -> Vec<Real> {
    if cfg.condition_on_attributes {
        l.encoding(schema)
    } else {
        vec![0.0; schema.encoding_width()]
    }
}

fn step_sampling(cfg: &TrainConfig, step: usize) -> Result<Sampling> {
    Ok(match cfg.sampling {
        SamplingKind::Soft => Sampling::Soft {
            temperature: anneal_temperature(step, cfg.temp_init, cfg.temp_floor, cfg.temp_decay)?,
        },
        kind => Sampling::Hard(kind.hard_mode().expect("hard kind")),
    })
}

struct SentenceTraces {
    recon_trace: DecoderTrace,
    y_trace: Option<DecoderTrace>,
    label: AttributeVector,
    mismatched: Option<AttributeVector>,
}

/// One discriminator update on detached traces followed by one generator
/// update; phases are skipped when the loss configuration excludes them.
/// Aborts with a diagnostic dump if any loss or gradient turns non-finite.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    gen: &mut Generator,
    disc: &mut Discriminator,
    gen_opt: &mut Adam,
    disc_opt: &mut Adam,
    batch: &Batch,
    schema: &AttributeSchema,
    cfg: &TrainConfig,
    step: usize,
    gen_max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let adv_phase = cfg.loss_config.adversarial() && step >= cfg.warmup_steps;
    let needs_samples = match cfg.loss_config {
        LossConfigName::Int | LossConfigName::IntAdv | LossConfigName::AeBtAdv => true,
        LossConfigName::AeAdv => adv_phase,
        LossConfigName::Ae => false,
    };
    let sampling = step_sampling(cfg, step)?;

    let mut tape = Tape::new();
    let gv = gen.vars(&mut tape, false);
    let mut recon_sum: Option<Var> = None;
    let mut traces: Vec<SentenceTraces> = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let x = batch.sequence(i);
        let l = batch.labels[i].clone();
        let (recon_i, recon_trace, y_trace, mismatched) = if cfg.loss_config.interpolated() {
            let lp = schema.sample_mismatched(&l, rng)?;
            let fwd =
                loss_int(&mut tape, &gv, &x, &l, &lp, cfg.gamma, sampling, gen_max_len, schema, rng)?;
            (fwd.nll, fwd.recon_trace, Some(fwd.y_trace), Some(lp))
        } else {
            let (ae_nll, ae_trace) = loss_ae(&mut tape, &gv, &x, &l, schema)?;
            if needs_samples {
                let lp = schema.sample_mismatched(&l, rng)?;
                let z_x = gv.encode(&mut tape, &x)?;
                let (y_trace, _z_y) = sample_and_reencode(
                    &mut tape,
                    &gv,
                    z_x,
                    &lp.encoding(schema),
                    sampling,
                    gen_max_len,
                    rng,
                )?;
                if cfg.loss_config.back_translation() {
                    let y = y_trace.to_sequence()?;
                    let bt_nll = loss_bt(&mut tape, &gv, &x, &l, &y, schema)?;
                    let combined = tape.add(ae_nll, bt_nll)?;
                    (combined, ae_trace, Some(y_trace), Some(lp))
                } else {
                    (ae_nll, ae_trace, Some(y_trace), Some(lp))
                }
            } else {
                (ae_nll, ae_trace, None, None)
            }
        };
        recon_sum = Some(match recon_sum {
            Some(acc) => tape.add(acc, recon_i)?,
            None => recon_i,
        });
        traces.push(SentenceTraces { recon_trace, y_trace, label: l, mismatched });
    }
    let recon_mean = tape.scale(recon_sum.expect("nonempty batch"), 1.0 / batch.len() as Real);
    let recon_val = tape.value(recon_mean).item();

    // Discriminator phase: detached hidden states, fresh tape, own optimizer.
    let mut adv_d_val = 0.0;
    let mut adv_g_var: Option<Var> = None;
    let mut adv_g_val = 0.0;
    if adv_phase {
        let mut disc_tape = Tape::new();
        let dv = disc.vars(&mut disc_tape, false);
        let mut d_sum: Option<Var> = None;
        for t in &traces {
            let (Some(y_trace), Some(lp)) = (&t.y_trace, &t.mismatched) else { continue };
            let h_x: Vec<Tensor> =
                t.recon_trace.hidden.iter().map(|&v| tape.value(v).clone()).collect();
            let h_y: Vec<Tensor> = y_trace.hidden.iter().map(|&v| tape.value(v).clone()).collect();
            let v = loss_adv_d(&mut disc_tape, &dv, &h_x, &h_y, &t.label, lp, schema)?;
            d_sum = Some(match d_sum {
                Some(acc) => disc_tape.add(acc, v)?,
                None => v,
            });
        }
        let d_mean = disc_tape.scale(d_sum.expect("adversarial batch"), 1.0 / batch.len() as Real);
        adv_d_val = disc_tape.value(d_mean).item();
        if !adv_d_val.is_finite() {
            return Err(non_finite_dump(step, recon_val, adv_d_val, adv_g_val, gen, disc));
        }
        // Maximize the objective value: minimize its negation.
        let d_loss = disc_tape.scale(d_mean, -1.0);
        disc_tape.backward(d_loss, &mut disc.store)?;
        disc.store.clip_grad_norm(cfg.clip_norm);
        disc_opt.step(&mut disc.store)?;

        // Generator phase scores h_y under the just-updated, frozen
        // discriminator; gradients flow only through the hidden states.
        let dv_frozen = disc.vars(&mut tape, true);
        let mut g_sum: Option<Var> = None;
        for t in &traces {
            let Some(y_trace) = &t.y_trace else { continue };
            let g = loss_adv_g(&mut tape, &dv_frozen, y_trace)?;
            g_sum = Some(match g_sum {
                Some(acc) => tape.add(acc, g)?,
                None => g,
            });
        }
        let g_mean = tape.scale(g_sum.expect("adversarial batch"), 1.0 / batch.len() as Real);
        adv_g_val = tape.value(g_mean).item();
        adv_g_var = Some(g_mean);
    }

    let total = total_generator_loss(&mut tape, recon_mean, adv_g_var, cfg.lambda)?;
    let total_val = tape.value(total).item();
    if !total_val.is_finite() || !recon_val.is_finite() || !adv_g_val.is_finite() {
        return Err(non_finite_dump(step, recon_val, adv_d_val, adv_g_val, gen, disc));
    }
    tape.backward(total, &mut gen.store)?;
    let gnorm = gen.store.grad_norm();
    if !gnorm.is_finite() {
        return Err(non_finite_dump(step, recon_val, adv_d_val, adv_g_val, gen, disc));
    }
    gen.store.clip_grad_norm(cfg.clip_norm);
    gen_opt.step(&mut gen.store)?;

    Ok(LossBreakdown {
        reconstruction: recon_val,
        adv_d: adv_d_val,
        adv_g: adv_g_val,
        total_g: total_val,
        lambda: cfg.lambda,
        config: cfg.loss_config,
    })
}

fn non_finite_dump(
    step: usize,
    recon: Real,
    adv_d: Real,
    adv_g: Real,
    gen: &Generator,
    disc: &Discriminator,
) -> Error {
    Error::NonFinite(format!(
        "aborting at step {step}: recon={recon:.6e} adv_d={adv_d:.6e} adv_g={adv_g:.6e} \
         gen_grad_norm={:.6e} disc_grad_norm={:.6e}",
        gen.store.grad_norm(),
        disc.store.grad_norm()
    ))
}

/// Mean autoencoding loss over (a subset of) a corpus, frozen parameters.
pub fn validation_ae_loss(
    gen: &Generator,
    items: &[(TokenSequence, AttributeVector)],
    schema: &AttributeSchema,
) -> Result<Real> {
    let mut total = 0.0;
    for chunk in items.chunks(32) {
        let mut tape = Tape::new();
        let gv = gen.vars(&mut tape, true);
        for (x, l) in chunk {
            let (nll, _) = loss_ae(&mut tape, &gv, x, l, schema)?;
            total += tape.value(nll).item();
        }
    }
    Ok(total / items.len().max(1) as Real)
}

fn snapshot(store: &ParamStore) -> Vec<(String, Tensor)> {
    store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

fn restore(store: &mut ParamStore, snap: &[(String, Tensor)]) {
    for (name, tensor) in snap {
        let id = store.find(name).expect("snapshot matches store");
        store.set_value(id, tensor.clone()).expect("snapshot shapes match");
    }
}

#[derive(Debug)]
pub struct FitOutcome {
    pub history: Vec<ValidationRecord>,
    /// Step of the selected checkpoint, when any validation ran.
    pub best_step: Option<usize>,
    pub gen_max_len: usize,
}

/// Train to `max_steps`, recording validation metrics every interval and
/// selecting the checkpoint with the best attribute accuracy among those
/// whose validation autoencoding loss stays within 10% of the running
/// minimum. The generator is left at the selected parameters.
pub fn fit(
    gen: &mut Generator,
    disc: &mut Discriminator,
    train: &LabeledCorpus,
    valid: &LabeledCorpus,
    cfg: &TrainConfig,
    classifier: Option<&AttributeClassifier>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Contract("fit needs nonempty train and validation splits".into()));
    }
    let schema = &train.schema;
    let gen_max_len = resolve_gen_max_len(cfg, train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen_opt = Adam::new(cfg.lr);
    let mut disc_opt = Adam::new(cfg.lr);

    let valid_items: Vec<(TokenSequence, AttributeVector)> =
        valid.items.iter().take(cfg.valid_subset).cloned().collect();
    let valid_subset = LabeledCorpus {
        schema: schema.clone(),
        split: Split::Valid,
        items: valid_items.clone(),
    };
    let content_subset = LabeledCorpus {
        schema: schema.clone(),
        split: Split::Valid,
        items: valid_items.iter().take(cfg.valid_subset.min(96)).cloned().collect(),
    };
    let bleu_mode = if cfg.bleu_corpus_level {
        BleuMode::CorpusLevel
    } else {
        BleuMode::SentenceAveraged
    };

    let mut history: Vec<ValidationRecord> = Vec::new();
    let mut best: Option<(usize, Real, Vec<(String, Tensor)>)> = None;
    let mut running_min_recon = Real::INFINITY;
    let mut acc_adv_d = 0.0;
    let mut acc_adv_g = 0.0;
    let mut acc_count = 0usize;

    let mut step = 0;
    'training: loop {
        if step >= cfg.max_steps {
            break;
        }
        let batches = make_batches(train, cfg.batch_size, &mut rng);
        for batch in &batches {
            if step >= cfg.max_steps {
                break 'training;
            }
            let breakdown = train_step(
                gen,
                disc,
                &mut gen_opt,
                &mut disc_opt,
                batch,
                schema,
                cfg,
                step,
                gen_max_len,
                &mut rng,
            )?;
            acc_adv_d += breakdown.adv_d;
            acc_adv_g += breakdown.adv_g;
            acc_count += 1;
            step += 1;

            if step % cfg.valid_interval == 0 {
                let classifier = classifier.ok_or_else(|| {
                    Error::Config(
                        "validation requires an attribute classifier for model selection".into(),
                    )
                })?;
                let recon = validation_ae_loss(gen, &valid_items, schema)?;
                let rewriter =
                    NeuralRewriter { generator: gen, schema, max_len: gen_max_len };
                let outcome = attribute_accuracy(
                    &rewriter,
                    &valid_subset,
                    classifier,
                    cfg.seed.wrapping_add(step as u64),
                )?;
                let content = f_content(&rewriter, &content_subset, 1, bleu_mode)?;
                let record = ValidationRecord {
                    step,
                    recon_loss: recon,
                    attribute_accuracy: outcome.overall,
                    content_bleu: content,
                    adv_d: acc_adv_d / acc_count.max(1) as Real,
                    adv_g: acc_adv_g / acc_count.max(1) as Real,
                    snapshot_digest: bytes_digest(&crate::checkpoint::encode_store(
                        &gen.store, "",
                    )),
                };
                acc_adv_d = 0.0;
                acc_adv_g = 0.0;
                acc_count = 0;
                running_min_recon = running_min_recon.min(recon);
                let qualifies = recon <= 1.1 * running_min_recon;
                let improves = best
                    .as_ref()
                    .map(|(_, acc, _)| outcome.overall > *acc)
                    .unwrap_or(true);
                if qualifies && improves {
                    best = Some((step, outcome.overall, snapshot(&gen.store)));
                }
                history.push(record);
            }
        }
    }

    let best_step = best.as_ref().map(|(s, _, _)| *s);
    if let Some((_, _, snap)) = &best {
        restore(&mut gen.store, snap);
    }
    Ok(FitOutcome { history, best_step, gen_max_len })
}

#[derive(Debug)]
pub struct PretrainOutcome {
    /// `(step, dev BLEU)` per validation.
    pub dev_bleu_history: Vec<(usize, Real)>,
    pub best_dev_bleu: Real,
    pub best_step: Option<usize>,
}

/// Supervised sequence-to-sequence training on aligned pairs: minimize the
/// teacher-forced NLL of the target given the encoded source and the target
/// labels. Serves as the seq2seq baseline (attributes ignored when
/// `condition_on_attributes` is off) and as the semi-supervised warm start.
/// The model is left at the best dev-BLEU checkpoint when dev pairs are
/// given.
pub fn pretrain_supervised(
    gen: &mut Generator,
    pairs: &[(TokenSequence, TokenSequence, AttributeVector)],
    dev: &[(TokenSequence, TokenSequence, AttributeVector)],
    schema: &AttributeSchema,
    cfg: &TrainConfig,
) -> Result<PretrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::Contract("supervised pretraining needs aligned pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt = Adam::new(cfg.lr);
    let gen_max_len = if cfg.gen_max_len > 0 {
        cfg.gen_max_len
    } else {
        let longest = pairs.iter().map(|(s, t, _)| s.content_len().max(t.content_len())).max();
        ((longest.unwrap_or(8) as f64) * 1.5).ceil() as usize
    };

    let mut history = Vec::new();
    let mut best: Option<(usize, Real, Vec<(String, Tensor)>)> = None;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0;
    'training: loop {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if step >= cfg.max_steps {
                break 'training;
            }
            let mut tape = Tape::new();
            let gv = gen.vars(&mut tape, false);
            let mut sum: Option<Var> = None;
            for &i in chunk {
                let (src, tgt, l_tgt) = &pairs[i];
                let z = gv.encode(&mut tape, src)?;
                let trace =
                    gv.teacher_forced(&mut tape, tgt, z, &label_encoding(cfg, l_tgt, schema))?;
                let nll = trace.nll.expect("teacher-forced trace has nll");
                sum = Some(match sum {
                    Some(acc) => tape.add(acc, nll)?,
                    None => nll,
                });
            }
            let loss = tape.scale(sum.expect("nonempty batch"), 1.0 / chunk.len() as Real);
            if !tape.value(loss).item().is_finite() {
                return Err(Error::NonFinite(format!(
                    "supervised pretraining diverged at step {step}"
                )));
            }
            tape.backward(loss, &mut gen.store)?;
            gen.store.clip_grad_norm(cfg.clip_norm);
            opt.step(&mut gen.store)?;
            step += 1;

            if step % cfg.valid_interval == 0 && !dev.is_empty() {
                let bleu = supervised_dev_bleu(gen, dev, schema, cfg, gen_max_len);
                history.push((step, bleu));
                let improves = best.as_ref().map(|(_, b, _)| bleu > *b).unwrap_or(true);
                if improves {
                    best = Some((step, bleu, snapshot(&gen.store)));
                }
            }
        }
    }
    let best_step = best.as_ref().map(|(s, _, _)| *s);
    let best_dev_bleu = best.as_ref().map(|(_, b, _)| *b).unwrap_or(Real::NAN);
    if let Some((_, _, snap)) = &best {
        restore(&mut gen.store, snap);
    }
    Ok(PretrainOutcome { dev_bleu_history: history, best_dev_bleu, best_step })
}

/// Greedy translation BLEU-1..4 (max_n 4) of `dev` pairs.
pub fn supervised_dev_bleu(
    gen: &Generator,
    dev: &[(TokenSequence, TokenSequence, AttributeVector)],
    schema: &AttributeSchema,
    cfg: &TrainConfig,
    gen_max_len: usize,
) -> Real {
    let outputs: Vec<TokenSequence> = crate::parallel::par_map(dev, |(src, _, l_tgt)| {
        gen.rewrite_with_encoding(src, &label_encoding(cfg, l_tgt, schema), gen_max_len)
            .expect("greedy decoding")
    });
    let refs: Vec<TokenSequence> = dev.iter().map(|(_, t, _)| t.clone()).collect();
    mean_bleu(&outputs, &refs, 4)
}

/// Run the five loss configurations with a shared seed and data; returns one
/// validation history per configuration.
pub fn run_ablation_grid(
    train: &LabeledCorpus,
    valid: &LabeledCorpus,
    base: &TrainConfig,
    classifier: &AttributeClassifier,
    configs: &[LossConfigName],
) -> Result<Vec<(LossConfigName, Vec<ValidationRecord>)>> {
    let mut out = Vec::new();
    for &name in configs {
        let cfg = TrainConfig { loss_config: name, ..base.clone() };
        let (mut gen, mut disc) =
            build_models(&cfg, classifier_vocab_size(classifier), train.schema.encoding_width());
        let outcome = fit(&mut gen, &mut disc, train, valid, &cfg, Some(classifier))?;
        out.push((name, outcome.history));
    }
    Ok(out)
}

fn classifier_vocab_size(classifier: &AttributeClassifier) -> usize {
    classifier.vocab_size
}
