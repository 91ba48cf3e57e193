//! Evaluation metrics: classifier-measured attribute accuracy, round-trip
//! content BLEU, and language-model fluency perplexity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bleu::{bleu, corpus_bleu};
use crate::classifier::AttributeClassifier;
use crate::error::{Error, Result};
use crate::lm::FluencyLM;
use crate::model::Generator;
use crate::parallel::par_map;
use crate::synth::TemplateGrammar;
use crate::tensor::Real;
use crate::text::{AttributeSchema, AttributeVector, LabeledCorpus, TokenSequence, Vocabulary};

/// Anything that can rewrite a sentence toward target attribute values.
/// Implementations must be deterministic; metrics fan out over sentences.
pub trait Rewriter: Sync {
    fn rewrite(&self, x: &TokenSequence, target: &AttributeVector) -> TokenSequence;
}

/// Greedy decoding through a trained generator.
pub struct NeuralRewriter<'a> {
    pub generator: &'a Generator,
    pub schema: &'a AttributeSchema,
    pub max_len: usize,
}

impl Rewriter for NeuralRewriter<'_> {
    fn rewrite(&self, x: &TokenSequence, target: &AttributeVector) -> TokenSequence {
        self.generator
            .rewrite(x, target, self.schema, self.max_len)
            .expect("greedy decoding cannot fail on a valid sequence")
    }
}

/// Ground-truth rewriter backed by the grammar's aligned lexicons.
pub struct RuleRewriter<'a> {
    pub grammar: &'a TemplateGrammar,
    pub vocab: &'a Vocabulary,
}

impl Rewriter for RuleRewriter<'_> {
    fn rewrite(&self, x: &TokenSequence, target: &AttributeVector) -> TokenSequence {
        self.grammar
            .rule_transfer(x, target, self.vocab)
            .expect("rule rewriter requires grammar sentences")
    }
}

/// Copies the input unchanged (baseline probes).
pub struct IdentityRewriter;

impl Rewriter for IdentityRewriter {
    fn rewrite(&self, x: &TokenSequence, _target: &AttributeVector) -> TokenSequence {
        x.clone()
    }
}

/// How BLEU expectations are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BleuMode {
    /// Mean of sentence-level BLEU (the default reading of the expectation).
    SentenceAveraged,
    /// Pooled corpus-level BLEU.
    CorpusLevel,
}

/// Attribute accuracy of conditional samples plus the samples themselves.
pub struct TransferOutcome {
    /// Fraction of transfers whose predicted label matches the conditioning
    /// label, per attribute.
    pub per_attribute: Vec<Real>,
    /// Mean over attributes.
    pub overall: Real,
    /// The generated sentences, for fluency scoring or inspection.
    pub outputs: Vec<TokenSequence>,
    /// The conditioning labels drawn for each input.
    pub targets: Vec<AttributeVector>,
}

/// Generate one transfer per test sentence under a mismatched label drawn
/// with `seed` and classify the outputs. Draw `i` depends only on
/// `(seed, i)` so fan-out stays deterministic.
pub fn attribute_accuracy(
    rewriter: &dyn Rewriter,
    corpus: &LabeledCorpus,
    classifier: &AttributeClassifier,
    seed: u64,
) -> Result<TransferOutcome> {
    if corpus.is_empty() {
        return Err(Error::Contract("attribute accuracy over an empty corpus".into()));
    }
    let schema = &corpus.schema;
    let indexed: Vec<(usize, &(TokenSequence, AttributeVector))> =
        corpus.items.iter().enumerate().collect();
    let pairs: Vec<(TokenSequence, AttributeVector)> = par_map(&indexed, |(i, (x, l))| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(*i as u64);
        let target = schema.sample_mismatched(l, &mut rng).expect("schema has alternatives");
        (rewriter.rewrite(x, &target), target)
    });
    let outputs: Vec<TokenSequence> = pairs.iter().map(|(y, _)| y.clone()).collect();
    let targets: Vec<AttributeVector> = pairs.iter().map(|(_, t)| t.clone()).collect();
    let preds = classifier.predict_batch(&outputs);
    let k = schema.num_attributes();
    let mut correct = vec![0usize; k];
    for (pred, target) in preds.iter().zip(&targets) {
        for a in 0..k {
            if pred[a] == target.label_index(a) {
                correct[a] += 1;
            }
        }
    }
    let per_attribute: Vec<Real> =
        correct.iter().map(|&c| c as Real / corpus.len() as Real).collect();
    let overall = per_attribute.iter().sum::<Real>() / k as Real;
    Ok(TransferOutcome { per_attribute, overall, outputs, targets })
}

/// Round-trip content metric for one ordered domain pair:
/// `0.5 [ E_src BLEU(x, back(fwd(x))) + E_tgt BLEU(x, fwd(back(x))) ]`.
/// Symmetric in its two corpus arguments by construction.
pub fn f_content_pair(
    rewriter: &dyn Rewriter,
    src: &[TokenSequence],
    src_label: &AttributeVector,
    tgt: &[TokenSequence],
    tgt_label: &AttributeVector,
    max_n: usize,
    mode: BleuMode,
) -> Real {
    let direction = |xs: &[TokenSequence], there: &AttributeVector, back: &AttributeVector| {
        let trips: Vec<(TokenSequence, TokenSequence)> = par_map(xs, |x| {
            let over = rewriter.rewrite(x, there);
            (x.clone(), rewriter.rewrite(&over, back))
        });
        match mode {
            BleuMode::SentenceAveraged => {
                let scores: Vec<Real> = trips
                    .iter()
                    .map(|(x, rt)| bleu(rt.content(), &[x.content()], max_n))
                    .collect();
                scores.iter().sum::<Real>() / scores.len().max(1) as Real
            }
            BleuMode::CorpusLevel => {
                let pairs: Vec<(&[u32], &[u32])> =
                    trips.iter().map(|(x, rt)| (rt.content(), x.content())).collect();
                corpus_bleu(&pairs, max_n)
            }
        }
    };
    0.5 * (direction(src, tgt_label, src_label) + direction(tgt, src_label, tgt_label))
}

/// Content metric over a labeled corpus, generalized to any schema by
/// averaging [`f_content_pair`] over every unordered label pair of every
/// attribute (other attributes stay at each sentence's own labels).
pub fn f_content(
    rewriter: &dyn Rewriter,
    corpus: &LabeledCorpus,
    max_n: usize,
    mode: BleuMode,
) -> Result<Real> {
    if corpus.is_empty() {
        return Err(Error::Contract("content metric over an empty corpus".into()));
    }
    let schema = &corpus.schema;
    let mut per_attribute = Vec::new();
    for k in 0..schema.num_attributes() {
        let n_labels = schema.labels(k).len();
        let mut pair_scores = Vec::new();
        for a in 0..n_labels {
            for b in a + 1..n_labels {
                // Route a-sentences through b and b-sentences through a;
                // restoring targets are each sentence's own labels, so group
                // by the full label vector.
                let src: Vec<TokenSequence> = corpus
                    .items
                    .iter()
                    .filter(|(_, l)| l.label_index(k) == a)
                    .map(|(s, _)| s.clone())
                    .collect();
                let tgt: Vec<TokenSequence> = corpus
                    .items
                    .iter()
                    .filter(|(_, l)| l.label_index(k) == b)
                    .map(|(s, _)| s.clone())
                    .collect();
                if src.is_empty() || tgt.is_empty() {
                    continue;
                }
                let src_labels: Vec<AttributeVector> = corpus
                    .items
                    .iter()
                    .filter(|(_, l)| l.label_index(k) == a)
                    .map(|(_, l)| l.clone())
                    .collect();
                let tgt_labels: Vec<AttributeVector> = corpus
                    .items
                    .iter()
                    .filter(|(_, l)| l.label_index(k) == b)
                    .map(|(_, l)| l.clone())
                    .collect();
                pair_scores.push(f_content_pair_grouped(
                    rewriter,
                    &src,
                    &src_labels,
                    b,
                    &tgt,
                    &tgt_labels,
                    a,
                    k,
                    max_n,
                    mode,
                ));
            }
        }
        if !pair_scores.is_empty() {
            per_attribute
                .push(pair_scores.iter().sum::<Real>() / pair_scores.len() as Real);
        }
    }
    if per_attribute.is_empty() {
        return Err(Error::Contract("no label pair had sentences on both sides".into()));
    }
    Ok(per_attribute.iter().sum::<Real>() / per_attribute.len() as Real)
}

/// Directional round trips where every sentence keeps its own labels except
/// attribute `k`, which is routed through the opposite label and back.
#[allow(clippy::too_many_arguments)]
fn f_content_pair_grouped(
    rewriter: &dyn Rewriter,
    src: &[TokenSequence],
    src_labels: &[AttributeVector],
    src_via: usize,
    tgt: &[TokenSequence],
    tgt_labels: &[AttributeVector],
    tgt_via: usize,
    attr: usize,
    max_n: usize,
    mode: BleuMode,
) -> Real {
    let direction = |xs: &[TokenSequence], labels: &[AttributeVector], via: usize| {
        let indexed: Vec<usize> = (0..xs.len()).collect();
        let trips: Vec<(TokenSequence, TokenSequence)> = par_map(&indexed, |&i| {
            let there = labels[i].with_label(attr, via);
            let over = rewriter.rewrite(&xs[i], &there);
            (xs[i].clone(), rewriter.rewrite(&over, &labels[i]))
        });
        match mode {
            BleuMode::SentenceAveraged => {
                let scores: Vec<Real> = trips
                    .iter()
                    .map(|(x, rt)| bleu(rt.content(), &[x.content()], max_n))
                    .collect();
                scores.iter().sum::<Real>() / scores.len().max(1) as Real
            }
            BleuMode::CorpusLevel => {
                let pairs: Vec<(&[u32], &[u32])> =
                    trips.iter().map(|(x, rt)| (rt.content(), x.content())).collect();
                corpus_bleu(&pairs, max_n)
            }
        }
    };
    0.5 * (direction(src, src_labels, src_via) + direction(tgt, tgt_labels, tgt_via))
}

/// Perplexity of generated sentences under a fixed language model.
pub fn fluency(generated: &[TokenSequence], lm: &FluencyLM) -> Result<Real> {
    lm.perplexity(generated)
}

/// One row of the structured evaluation report.
#[derive(Debug, Clone)]
pub struct MetricReport {
    /// `(attribute name, accuracy)` per attribute.
    pub attribute_accuracy: Vec<(String, Real)>,
    pub overall_accuracy: Real,
    pub content_b1: Real,
    pub content_b4: Real,
    pub fluency_perplexity: Real,
    pub sample_count: usize,
}

impl MetricReport {
    /// Long-format CSV: `metric,attribute,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,attribute,value\n");
        for (name, acc) in &self.attribute_accuracy {
            out.push_str(&format!("attribute_accuracy,{name},{acc:.6}\n"));
        }
        out.push_str(&format!("attribute_accuracy,overall,{:.6}\n", self.overall_accuracy));
        out.push_str(&format!("content_bleu,b1,{:.6}\n", self.content_b1));
        out.push_str(&format!("content_bleu,b4,{:.6}\n", self.content_b4));
        out.push_str(&format!("fluency_perplexity,all,{:.6}\n", self.fluency_perplexity));
        out.push_str(&format!("sample_count,all,{}\n", self.sample_count));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "attribute accuracy: {:.3} overall ({} samples)\n",
            self.overall_accuracy, self.sample_count
        ));
        for (name, acc) in &self.attribute_accuracy {
            out.push_str(&format!("  {name}: {acc:.3}\n"));
        }
        out.push_str(&format!(
            "content (round-trip BLEU): B-1 {:.1}, B-4 {:.1}\n",
            self.content_b1, self.content_b4
        ));
        out.push_str(&format!("fluency perplexity: {:.2}\n", self.fluency_perplexity));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.attribute_accuracy.iter().all(|(_, a)| a.is_finite())
            && self.overall_accuracy.is_finite()
            && self.content_b1.is_finite()
            && self.content_b4.is_finite()
            && self.fluency_perplexity.is_finite()
    }
}

/// Compose the three metrics into one report for a live rewriter.
pub fn evaluate(
    rewriter: &dyn Rewriter,
    corpus: &LabeledCorpus,
    classifier: &AttributeClassifier,
    lm: &FluencyLM,
    seed: u64,
    mode: BleuMode,
) -> Result<MetricReport> {
    let outcome = attribute_accuracy(rewriter, corpus, classifier, seed)?;
    let content_b1 = f_content(rewriter, corpus, 1, mode)?;
    let content_b4 = f_content(rewriter, corpus, 4, mode)?;
    let ppl = fluency(&outcome.outputs, lm)?;
    Ok(MetricReport {
        attribute_accuracy: outcome
            .per_attribute
            .iter()
            .enumerate()
            .map(|(k, &a)| (corpus.schema.attribute_name(k).to_string(), a))
            .collect(),
        overall_accuracy: outcome.overall,
        content_b1,
        content_b4,
        fluency_perplexity: ppl,
        sample_count: corpus.len(),
    })
}

/// Score pre-generated `(input, output, conditioning labels)` rows, for
/// external systems. Content here is BLEU(input, output): a round trip
/// cannot be recomputed from one-step rows.
pub fn score_tsv_rows(
    rows: &[(TokenSequence, TokenSequence, AttributeVector)],
    schema: &AttributeSchema,
    classifier: &AttributeClassifier,
    lm: &FluencyLM,
    mode: BleuMode,
) -> Result<MetricReport> {
    if rows.is_empty() {
        return Err(Error::Contract("no rows to score".into()));
    }
    let outputs: Vec<TokenSequence> = rows.iter().map(|(_, y, _)| y.clone()).collect();
    let preds = classifier.predict_batch(&outputs);
    let k = schema.num_attributes();
    let mut correct = vec![0usize; k];
    for (pred, (_, _, target)) in preds.iter().zip(rows) {
        for a in 0..k {
            if pred[a] == target.label_index(a) {
                correct[a] += 1;
            }
        }
    }
    let per_attr: Vec<Real> = correct.iter().map(|&c| c as Real / rows.len() as Real).collect();
    let content = |max_n: usize| match mode {
        BleuMode::SentenceAveraged => {
            let scores: Vec<Real> = rows
                .iter()
                .map(|(x, y, _)| bleu(y.content(), &[x.content()], max_n))
                .collect();
            scores.iter().sum::<Real>() / scores.len() as Real
        }
        BleuMode::CorpusLevel => {
            let pairs: Vec<(&[u32], &[u32])> =
                rows.iter().map(|(x, y, _)| (y.content(), x.content())).collect();
            corpus_bleu(&pairs, max_n)
        }
    };
    Ok(MetricReport {
        attribute_accuracy: per_attr
            .iter()
            .enumerate()
            .map(|(a, &v)| (schema.attribute_name(a).to_string(), v))
            .collect(),
        overall_accuracy: per_attr.iter().sum::<Real>() / k as Real,
        content_b1: content(1),
        content_b4: content(4),
        fluency_perplexity: lm.perplexity(&outputs)?,
        sample_count: rows.len(),
    })
}

/// Fraction of transfers whose output the grammar oracle labels exactly as
/// conditioned, per attribute, plus the fraction that were decidable at all.
pub fn oracle_transfer_accuracy(
    rewriter: &dyn Rewriter,
    corpus: &LabeledCorpus,
    grammar: &TemplateGrammar,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<(Vec<Real>, Real)> {
    if corpus.is_empty() {
        return Err(Error::Contract("oracle accuracy over an empty corpus".into()));
    }
    let schema = &corpus.schema;
    let indexed: Vec<(usize, &(TokenSequence, AttributeVector))> =
        corpus.items.iter().enumerate().collect();
    let results: Vec<(Option<AttributeVector>, AttributeVector)> = par_map(&indexed, |(i, (x, l))| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(*i as u64);
        let target = schema.sample_mismatched(l, &mut rng).expect("schema has alternatives");
        let y = rewriter.rewrite(x, &target);
        (grammar.oracle_label(&y, vocab), target)
    });
    let k = schema.num_attributes();
    let mut correct = vec![0usize; k];
    let mut decidable = 0usize;
    for (found, target) in &results {
        if let Some(label) = found {
            decidable += 1;
            for a in 0..k {
                if label.label_index(a) == target.label_index(a) {
                    correct[a] += 1;
                }
            }
        }
    }
    let per_attr = correct.iter().map(|&c| c as Real / corpus.len() as Real).collect();
    Ok((per_attr, decidable as Real / corpus.len() as Real))
}

/// `rng` helper: mismatched target for item `i` of a deterministic stream.
pub fn mismatched_for_index(
    schema: &AttributeSchema,
    l: &AttributeVector,
    seed: u64,
    i: usize,
) -> AttributeVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    schema.sample_mismatched(l, &mut rng).expect("schema has alternatives")
}

/// Mean sentence BLEU of `candidates` against aligned references.
pub fn mean_bleu(
    candidates: &[TokenSequence],
    references: &[TokenSequence],
    max_n: usize,
) -> Real {
    let scores: Vec<Real> = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| bleu(c.content(), &[r.content()], max_n))
        .collect();
    scores.iter().sum::<Real>() / scores.len().max(1) as Real
}
