//! GRU language model; perplexity of generated sentences serves as the
//! fluency metric.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gru::GruCell;
use crate::optim::Adam;
use crate::parallel::par_map;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Real;
use crate::text::{LabeledCorpus, TokenSequence};

#[derive(Debug, Clone)]
pub struct LmConfig {
    pub d_emb: usize,
    pub d_hidden: usize,
    pub lr: Real,
    pub batch_size: usize,
    pub steps: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { d_emb: 32, d_hidden: 48, lr: 1e-3, batch_size: 32, steps: 1200 }
    }
}

pub struct FluencyLM {
    pub vocab_size: usize,
    pub config: LmConfig,
    pub store: ParamStore,
    emb: ParamId,
    gru: GruCell,
    out_w: ParamId,
    out_b: ParamId,
    /// Held-out perplexity measured after training.
    pub held_out_perplexity: Real,
    pub train_perplexity: Real,
}

impl FluencyLM {
    pub fn new<R: Rng>(vocab_size: usize, config: LmConfig, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let emb = store.add_weight("lm.emb", vocab_size, config.d_emb, rng);
        let gru = GruCell::new(&mut store, "lm.gru", config.d_emb, config.d_hidden, rng);
        let out_w = store.add_weight("lm.out_w", vocab_size, config.d_hidden, rng);
        let out_b = store.add_zeros("lm.out_b", &[vocab_size]);
        FluencyLM {
            vocab_size,
            config,
            store,
            emb,
            gru,
            out_w,
            out_b,
            held_out_perplexity: Real::NAN,
            train_perplexity: Real::NAN,
        }
    }

    /// Summed NLL over the predicted positions of `x` (content tokens and
    /// EOS; BOS only conditions) and the number of predicted tokens.
    fn nll(&self, tape: &mut Tape, x: &TokenSequence, frozen: bool) -> Result<(Var, usize)> {
        let reg = |tape: &mut Tape, id: ParamId| {
            if frozen {
                tape.param_frozen(&self.store, id)
            } else {
                tape.param(&self.store, id)
            }
        };
        let emb = reg(tape, self.emb);
        let out_w = reg(tape, self.out_w);
        let out_b = reg(tape, self.out_b);
        let cell = self.gru.vars(tape, &self.store, frozen);
        let mut h = tape.constant(crate::tensor::Tensor::zeros(&[self.config.d_hidden]));
        let framed = x.framed();
        let mut total: Option<Var> = None;
        for t in 0..x.num_steps() {
            let e = tape.row(emb, framed[t] as usize)?;
            h = cell.step(tape, e, h)?;
            let lg = tape.matvec(out_w, h)?;
            let lg = tape.add(lg, out_b)?;
            let ce = tape.softmax_cross_entropy(lg, framed[t + 1] as usize)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, ce)?,
                None => ce,
            });
        }
        Ok((total.expect("sequence has at least one step"), x.num_steps()))
    }

    /// `exp(total NLL / total predicted tokens)` over a set of sentences.
    pub fn perplexity(&self, sentences: &[TokenSequence]) -> Result<Real> {
        if sentences.is_empty() {
            return Err(Error::Contract("perplexity over an empty set".into()));
        }
        let chunks: Vec<&[TokenSequence]> = sentences.chunks(64).collect();
        let partials = par_map(&chunks, |chunk| {
            let mut tape = Tape::new();
            let mut nats = 0.0;
            let mut count = 0usize;
            for s in chunk.iter() {
                let (nll, n) = self.nll(&mut tape, s, true).expect("lm forward");
                nats += tape.value(nll).item();
                count += n;
            }
            (nats, count)
        });
        let (nats, count) = partials
            .into_iter()
            .fold((0.0, 0usize), |(a, b), (c, d)| (a + c, b + d));
        Ok((nats / count as Real).exp())
    }
}

/// Teacher-forced LM training; reports train and held-out perplexity.
pub fn train_fluency_lm<R: Rng>(
    train: &LabeledCorpus,
    valid: &LabeledCorpus,
    config: LmConfig,
    vocab_size: usize,
    rng: &mut R,
) -> Result<FluencyLM> {
    if train.is_empty() {
        return Err(Error::Contract("language model training needs data".into()));
    }
    let mut lm = FluencyLM::new(vocab_size, config.clone(), rng);
    let mut adam = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    'outer: loop {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let mut total: Option<Var> = None;
            for &i in chunk {
                let (nll, _) = lm.nll(&mut tape, &train.items[i].0, false)?;
                total = Some(match total {
                    Some(t) => tape.add(t, nll)?,
                    None => nll,
                });
            }
            let loss = tape.scale(total.expect("nonempty batch"), 1.0 / chunk.len() as Real);
            tape.backward(loss, &mut lm.store)?;
            lm.store.clip_grad_norm(5.0);
            adam.step(&mut lm.store)?;
            step += 1;
            if step >= config.steps {
                break 'outer;
            }
        }
    }
    let train_seqs: Vec<TokenSequence> = train.items.iter().map(|(s, _)| s.clone()).collect();
    lm.train_perplexity = lm.perplexity(&train_seqs)?;
    if !valid.is_empty() {
        let valid_seqs: Vec<TokenSequence> = valid.items.iter().map(|(s, _)| s.clone()).collect();
        lm.held_out_perplexity = lm.perplexity(&valid_seqs)?;
    }
    Ok(lm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sentiment_grammar;
    use crate::text::{AttributeSchema, AttributeVector, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema() -> AttributeSchema {
        AttributeSchema::new(vec![("s".into(), vec!["a".into(), "b".into()])]).unwrap()
    }

    fn label(s: &AttributeSchema) -> AttributeVector {
        s.encode(&[("s", "a")]).unwrap()
    }

    fn corpus_of(seqs: Vec<TokenSequence>, split: Split) -> LabeledCorpus {
        let sch = schema();
        let l = label(&sch);
        LabeledCorpus {
            schema: sch,
            split,
            items: seqs.into_iter().map(|s| (s, l.clone())).collect(),
        }
    }

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence::from_content(ids, ids.len()).unwrap().0
    }

    #[test]
    fn uniform_untrained_lm_has_perplexity_equal_to_vocab() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lm = FluencyLM::new(50, LmConfig::default(), &mut rng);
        // Zero output projection: exactly uniform next-token distribution.
        let ow = lm.store.find("lm.out_w").unwrap();
        let ob = lm.store.find("lm.out_b").unwrap();
        lm.store.value_mut(ow).fill(0.0);
        lm.store.value_mut(ob).fill(0.0);
        let p = lm.perplexity(&[seq(&[4, 5, 6]), seq(&[7, 8])]).unwrap();
        assert!((p - 50.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn repeated_sentence_drives_perplexity_to_one() {
        let train = corpus_of(vec![seq(&[4, 5, 6]); 64], Split::Train);
        let valid = corpus_of(vec![seq(&[4, 5, 6]); 8], Split::Valid);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = LmConfig { steps: 400, ..LmConfig::default() };
        let lm = train_fluency_lm(&train, &valid, cfg, 10, &mut rng).unwrap();
        assert!(lm.held_out_perplexity < 1.15, "{}", lm.held_out_perplexity);
    }

    #[test]
    fn perplexity_is_exp_of_mean_token_nll() {
        // Single sentence: definitional identity.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lm = FluencyLM::new(10, LmConfig::default(), &mut rng);
        let s = seq(&[4, 5]);
        let mut tape = Tape::new();
        let (nll, n) = lm.nll(&mut tape, &s, true).unwrap();
        let expected = (tape.value(nll).item() / n as Real).exp();
        let got = lm.perplexity(std::slice::from_ref(&s)).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn grammar_lm_beats_double_branching_bound_and_orders_random_text() {
        let g = sentiment_grammar();
        let vocab = g.vocabulary();
        let corpus = g.generate(3000, 50, &vocab, Split::Train);
        let (train, valid) = corpus.split_tail(400, Split::Valid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = LmConfig { steps: 900, ..LmConfig::default() };
        let lm = train_fluency_lm(&train, &valid, cfg, vocab.size(), &mut rng).unwrap();
        let branching = g.entropy_per_token(4000, 9).exp();
        assert!(
            lm.held_out_perplexity < 2.0 * branching,
            "held-out ppl {} vs branching {branching}",
            lm.held_out_perplexity
        );

        // Random token strings must score far worse than grammar sentences.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let random: Vec<TokenSequence> = (0..100)
            .map(|_| {
                let ids: Vec<u32> =
                    (0..6).map(|_| rng.gen_range(4..vocab.size() as u32)).collect();
                seq(&ids)
            })
            .collect();
        let random_ppl = lm.perplexity(&random).unwrap();
        assert!(random_ppl > 3.0 * lm.held_out_perplexity);

        // Sentences from the LM's own training set score near train ppl.
        let sample: Vec<TokenSequence> =
            train.items.iter().take(200).map(|(s, _)| s.clone()).collect();
        let sample_ppl = lm.perplexity(&sample).unwrap();
        assert!((sample_ppl / lm.train_perplexity).ln().abs() < 0.35, "{sample_ppl}");
    }
}
