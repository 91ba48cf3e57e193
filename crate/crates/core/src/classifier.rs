//! Convolutional text classifier used as the attribute-accuracy oracle.
//!
//! Embeddings, parallel convolutions of widths 3/4/5 with max-over-time
//! pooling, and one linear head per attribute. A classifier refuses to act
//! as an evaluation oracle unless its held-out accuracy clears a gate.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::parallel::par_map;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Real;
use crate::text::{AttributeSchema, LabeledCorpus, TokenSequence, PAD};

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub d_emb: usize,
    pub filters: usize,
    pub widths: Vec<usize>,
    pub lr: Real,
    pub batch_size: usize,
    pub steps: usize,
    /// Minimum held-out accuracy (per attribute) to deploy as an oracle.
    pub min_accuracy: Real,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            d_emb: 24,
            filters: 24,
            widths: vec![3, 4, 5],
            lr: 1e-3,
            batch_size: 32,
            steps: 800,
            min_accuracy: 0.9,
        }
    }
}

pub struct AttributeClassifier {
    pub schema: AttributeSchema,
    pub vocab_size: usize,
    pub config: ClassifierConfig,
    pub store: ParamStore,
    emb: ParamId,
    convs: Vec<(ParamId, ParamId)>,
    heads: Vec<(ParamId, ParamId)>,
    /// Held-out accuracy per attribute, measured after training.
    pub held_out_accuracy: Vec<Real>,
}

impl AttributeClassifier {
    pub fn new<R: Rng>(
        schema: &AttributeSchema,
        vocab_size: usize,
        config: ClassifierConfig,
        rng: &mut R,
    ) -> Self {
        let mut store = ParamStore::new();
        let emb = store.add_weight("cls.emb", vocab_size, config.d_emb, rng);
        let convs = config
            .widths
            .iter()
            .map(|w| {
                let cw = store.add_weight(
                    &format!("cls.conv{w}.w"),
                    config.filters,
                    w * config.d_emb,
                    rng,
                );
                let cb = store.add_zeros(&format!("cls.conv{w}.b"), &[config.filters]);
                (cw, cb)
            })
            .collect();
        let feat = config.filters * config.widths.len();
        let heads = (0..schema.num_attributes())
            .map(|k| {
                let hw = store.add_weight(
                    &format!("cls.head_{}.w", schema.attribute_name(k)),
                    schema.labels(k).len(),
                    feat,
                    rng,
                );
                let hb = store.add_zeros(
                    &format!("cls.head_{}.b", schema.attribute_name(k)),
                    &[schema.labels(k).len()],
                );
                (hw, hb)
            })
            .collect();
        AttributeClassifier {
            schema: schema.clone(),
            vocab_size,
            config,
            store,
            emb,
            convs,
            heads,
            held_out_accuracy: Vec::new(),
        }
    }

    /// Per-attribute logits for one sentence. Content ids are right-padded
    /// with PAD up to the largest filter width.
    fn forward(&self, tape: &mut Tape, seq: &TokenSequence, frozen: bool) -> Result<Vec<Var>> {
        let reg = |tape: &mut Tape, id: ParamId| {
            if frozen {
                tape.param_frozen(&self.store, id)
            } else {
                tape.param(&self.store, id)
            }
        };
        let emb = reg(tape, self.emb);
        let max_w = self.config.widths.iter().copied().max().unwrap_or(1);
        let mut ids: Vec<u32> = seq.content().to_vec();
        while ids.len() < max_w {
            ids.push(PAD);
        }
        let embedded: Vec<Var> =
            ids.iter().map(|&t| tape.row(emb, t as usize)).collect::<Result<_>>()?;

        let mut banks: Option<Var> = None;
        for (wi, &w) in self.config.widths.iter().enumerate() {
            let (cw, cb) = self.convs[wi];
            let cw = reg(tape, cw);
            let cb = reg(tape, cb);
            let mut positions = Vec::with_capacity(ids.len() - w + 1);
            for start in 0..=ids.len() - w {
                let mut window = embedded[start];
                for &e in &embedded[start + 1..start + w] {
                    window = tape.concat(window, e)?;
                }
                let pre = tape.matvec(cw, window)?;
                let pre = tape.add(pre, cb)?;
                positions.push(tape.relu(pre));
            }
            let pooled = tape.vec_max(&positions)?;
            banks = Some(match banks {
                Some(b) => tape.concat(b, pooled)?,
                None => pooled,
            });
        }
        let feature = banks.expect("at least one filter width");
        self.heads
            .iter()
            .map(|&(hw, hb)| {
                let hw = reg(tape, hw);
                let hb = reg(tape, hb);
                let l = tape.matvec(hw, feature)?;
                tape.add(l, hb)
            })
            .collect()
    }

    /// Argmax label index per attribute.
    pub fn predict(&self, seq: &TokenSequence) -> Vec<usize> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, seq, true).expect("classifier forward");
        logits
            .iter()
            .map(|&lg| {
                tape.value(lg)
                    .data()
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .expect("nonempty label set")
                    .0
            })
            .collect()
    }

    /// Predictions over many sentences, fanned out in deterministic chunks.
    pub fn predict_batch(&self, seqs: &[TokenSequence]) -> Vec<Vec<usize>> {
        let chunks: Vec<&[TokenSequence]> = seqs.chunks(32).collect();
        par_map(&chunks, |chunk| chunk.iter().map(|s| self.predict(s)).collect::<Vec<_>>())
            .into_iter()
            .flatten()
            .collect()
    }

    /// Per-attribute accuracy against gold labels.
    pub fn accuracy(&self, corpus: &LabeledCorpus) -> Vec<Real> {
        let seqs: Vec<TokenSequence> = corpus.items.iter().map(|(s, _)| s.clone()).collect();
        let preds = self.predict_batch(&seqs);
        let k = self.schema.num_attributes();
        let mut correct = vec![0usize; k];
        for (pred, (_, gold)) in preds.iter().zip(&corpus.items) {
            for a in 0..k {
                if pred[a] == gold.label_index(a) {
                    correct[a] += 1;
                }
            }
        }
        correct.iter().map(|&c| c as Real / corpus.len().max(1) as Real).collect()
    }
}

/// Train a classifier to convergence and gate it on held-out accuracy:
/// deployment is refused when any attribute scores below the configured
/// minimum, because the downstream metric would be unreliable.
pub fn train_attribute_classifier<R: Rng>(
    train: &LabeledCorpus,
    valid: &LabeledCorpus,
    config: ClassifierConfig,
    vocab_size: usize,
    rng: &mut R,
) -> Result<AttributeClassifier> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Contract("classifier training needs train and validation data".into()));
    }
    let mut cls = AttributeClassifier::new(&train.schema, vocab_size, config.clone(), rng);
    let mut adam = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    'outer: loop {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let mut total: Option<Var> = None;
            for &i in chunk {
                let (seq, label) = &train.items[i];
                let logits = cls.forward(&mut tape, seq, false)?;
                for (k, &lg) in logits.iter().enumerate() {
                    let ce = tape.softmax_cross_entropy(lg, label.label_index(k))?;
                    total = Some(match total {
                        Some(t) => tape.add(t, ce)?,
                        None => ce,
                    });
                }
            }
            let loss = tape.scale(total.expect("nonempty batch"), 1.0 / chunk.len() as Real);
            tape.backward(loss, &mut cls.store)?;
            cls.store.clip_grad_norm(5.0);
            adam.step(&mut cls.store)?;
            step += 1;
            if step >= config.steps {
                break 'outer;
            }
        }
    }
    cls.held_out_accuracy = cls.accuracy(valid);
    let min = cls.held_out_accuracy.iter().cloned().fold(Real::INFINITY, Real::min);
    if min < cls.config.min_accuracy {
        return Err(Error::Gate(format!(
            "classifier held-out accuracy {:?} is below the {} gate; refusing to deploy it as an \
             evaluation oracle (the attribute metric would be unreliable)",
            cls.held_out_accuracy, cls.config.min_accuracy
        )));
    }
    Ok(cls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sentiment_grammar;
    use crate::text::Split;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quick_config() -> ClassifierConfig {
        ClassifierConfig { steps: 300, ..ClassifierConfig::default() }
    }

    #[test]
    fn separable_lexicon_corpus_classifies_nearly_perfectly() {
        let g = sentiment_grammar();
        let vocab = g.vocabulary();
        let corpus = g.generate(1500, 40, &vocab, Split::Train);
        let (train, valid) = corpus.split_tail(300, Split::Valid);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cls =
            train_attribute_classifier(&train, &valid, quick_config(), vocab.size(), &mut rng)
                .unwrap();
        assert!(cls.held_out_accuracy[0] >= 0.99, "{:?}", cls.held_out_accuracy);
        // Fit sanity: training accuracy at least matches held-out.
        let train_acc = cls.accuracy(&train)[0];
        assert!(train_acc >= cls.held_out_accuracy[0] - 1e-9);
    }

    #[test]
    fn label_shuffled_corpus_is_refused() {
        let g = sentiment_grammar();
        let vocab = g.vocabulary();
        let mut corpus = g.generate(600, 41, &vocab, Split::Train);
        // Destroy the token-label association.
        let labels: Vec<_> = corpus.items.iter().map(|(_, l)| l.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut rng);
        for ((_, slot), l) in corpus.items.iter_mut().zip(shuffled) {
            *slot = l;
        }
        let (train, valid) = corpus.split_tail(150, Split::Valid);
        let cfg = ClassifierConfig { steps: 120, ..ClassifierConfig::default() };
        let err = train_attribute_classifier(&train, &valid, cfg, vocab.size(), &mut rng);
        match err {
            Err(Error::Gate(msg)) => assert!(msg.contains("refusing"), "{msg}"),
            Err(other) => panic!("expected gate refusal, got {other}"),
            Ok(_) => panic!("expected gate refusal, classifier was deployed"),
        }
    }

    #[test]
    fn short_sentences_are_padded_for_wide_filters() {
        let g = sentiment_grammar();
        let vocab = g.vocabulary();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cls = AttributeClassifier::new(&g.schema, vocab.size(), quick_config(), &mut rng);
        let short = TokenSequence::from_content(&[5, 6], 2).unwrap().0;
        let preds = cls.predict(&short);
        assert_eq!(preds.len(), 1);
    }
}
