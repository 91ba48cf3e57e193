//! Deterministic synthetic corpora with exact attribute oracles.
//!
//! Sentences come from slot templates; each attribute is carried by tokens
//! drawn from label-partitioned lexicons that are index-aligned across
//! labels, so every sentence can be labeled exactly by lexicon membership
//! and rewritten exactly by swapping aligned tokens. Three grammars ship:
//! a binary-sentiment review grammar, a four-attribute grammar
//! (tense/negation/person/politeness), and an archaic-vs-modern "diglossia"
//! grammar used for the monolingual-translation experiments.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::tensor::Real;
use crate::text::{
    AttributeSchema, AttributeVector, LabeledCorpus, Split, TokenSequence, Vocabulary,
};

#[derive(Debug, Clone)]
enum LexKind {
    /// One shared lexicon, independent of labels.
    Neutral(Vec<String>),
    /// One lexicon per label of `attr`, index-aligned across labels.
    Attr { attr: usize, by_label: Vec<Vec<String>> },
}

#[derive(Debug, Clone)]
struct Lexicon {
    name: String,
    kind: LexKind,
}

/// Where a bearing token lives: (lexicon, attribute, label, aligned index).
type BearerInfo = (usize, usize, usize, usize);

#[derive(Debug, Clone)]
pub struct TemplateGrammar {
    pub name: String,
    pub schema: AttributeSchema,
    lexicons: Vec<Lexicon>,
    /// Each template is a sequence of lexicon indices, one token per slot.
    templates: Vec<Vec<usize>>,
    bearers: HashMap<String, BearerInfo>,
    all_tokens: HashSet<String>,
}

impl TemplateGrammar {
    fn new(
        name: &str,
        schema: AttributeSchema,
        lexicons: Vec<Lexicon>,
        templates: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let mut bearers: HashMap<String, BearerInfo> = HashMap::new();
        let mut all_tokens: HashSet<String> = HashSet::new();
        for (li, lex) in lexicons.iter().enumerate() {
            match &lex.kind {
                LexKind::Neutral(tokens) => {
                    for t in tokens {
                        all_tokens.insert(t.clone());
                    }
                }
                LexKind::Attr { attr, by_label } => {
                    if by_label.len() != schema.labels(*attr).len() {
                        return Err(Error::Schema(format!(
                            "lexicon {} must cover every label of attribute {}",
                            lex.name,
                            schema.attribute_name(*attr)
                        )));
                    }
                    let width = by_label[0].len();
                    for (label_idx, entries) in by_label.iter().enumerate() {
                        if entries.len() != width {
                            return Err(Error::Schema(format!(
                                "lexicon {} label lists must be index-aligned",
                                lex.name
                            )));
                        }
                        for (pos, t) in entries.iter().enumerate() {
                            if bearers.insert(t.clone(), (li, *attr, label_idx, pos)).is_some() {
                                return Err(Error::Schema(format!(
                                    "token `{t}` appears in more than one attribute partition"
                                )));
                            }
                            all_tokens.insert(t.clone());
                        }
                    }
                }
            }
        }
        // Attribute-bearing tokens must not double as neutral tokens.
        for lex in &lexicons {
            if let LexKind::Neutral(tokens) = &lex.kind {
                for t in tokens {
                    if bearers.contains_key(t) {
                        return Err(Error::Schema(format!(
                            "token `{t}` is both neutral and attribute-bearing"
                        )));
                    }
                }
            }
        }
        // Every template must realize every attribute at least once.
        for (ti, tpl) in templates.iter().enumerate() {
            let mut covered = vec![false; schema.num_attributes()];
            for &slot in tpl {
                if slot >= lexicons.len() {
                    return Err(Error::Schema(format!("template {ti} references missing lexicon")));
                }
                if let LexKind::Attr { attr, .. } = &lexicons[slot].kind {
                    covered[*attr] = true;
                }
            }
            if covered.iter().any(|c| !c) {
                return Err(Error::Schema(format!(
                    "template {ti} does not realize every attribute"
                )));
            }
        }
        Ok(TemplateGrammar {
            name: name.to_string(),
            schema,
            lexicons,
            templates,
            bearers,
            all_tokens,
        })
    }

    /// Closed vocabulary over all lexicon tokens (deterministic order).
    pub fn vocabulary(&self) -> Vocabulary {
        let mut tokens: Vec<&str> = self.all_tokens.iter().map(String::as_str).collect();
        tokens.sort_unstable();
        Vocabulary::build(tokens, 1, usize::MAX).expect("grammar has tokens")
    }

    /// Longest template, in tokens.
    pub fn max_sentence_len(&self) -> usize {
        self.templates.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn num_templates(&self) -> usize {
        self.templates.len()
    }

    fn slot_surface<R: Rng>(&self, slot: usize, label: &AttributeVector, rng: &mut R) -> &str {
        match &self.lexicons[slot].kind {
            LexKind::Neutral(tokens) => &tokens[rng.gen_range(0..tokens.len())],
            LexKind::Attr { attr, by_label } => {
                let entries = &by_label[label.label_index(*attr)];
                &entries[rng.gen_range(0..entries.len())]
            }
        }
    }

    fn render<R: Rng>(&self, template: usize, label: &AttributeVector, rng: &mut R) -> Vec<String> {
        self.templates[template]
            .iter()
            .map(|&slot| self.slot_surface(slot, label, rng).to_string())
            .collect()
    }

    /// Generate `n` sentences with uniformly sampled labels, deterministic
    /// under `seed`. Sentence `i` depends only on `(seed, i)`, so generation
    /// parallelizes without changing the output.
    pub fn generate_raw(&self, n: usize, seed: u64) -> Vec<(Vec<String>, AttributeVector)> {
        let combos = self.schema.all_combinations();
        let indices: Vec<usize> = (0..n).collect();
        par_map(&indices, |&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let label = combos[rng.gen_range(0..combos.len())].clone();
            let template = rng.gen_range(0..self.templates.len());
            (self.render(template, &label, &mut rng), label)
        })
    }

    /// Generate an encoded corpus against the grammar's own vocabulary.
    pub fn generate(&self, n: usize, seed: u64, vocab: &Vocabulary, split: Split) -> LabeledCorpus {
        let raw = self.generate_raw(n, seed);
        let max_len = self.max_sentence_len();
        let items = raw
            .into_iter()
            .map(|(tokens, label)| {
                let ids: Vec<u32> = tokens.iter().map(|t| vocab.id(t)).collect();
                (TokenSequence::from_content(&ids, max_len).expect("template is nonempty").0, label)
            })
            .collect();
        LabeledCorpus { schema: self.schema.clone(), split, items }
    }

    /// Label a surface-token sentence by lexicon membership. `None` when
    /// some attribute has tokens from multiple partitions or from none.
    pub fn oracle_label_tokens(&self, tokens: &[&str]) -> Option<AttributeVector> {
        let mut found: Vec<Option<usize>> = vec![None; self.schema.num_attributes()];
        for t in tokens {
            if let Some(&(_, attr, label_idx, _)) = self.bearers.get(*t) {
                match found[attr] {
                    None => found[attr] = Some(label_idx),
                    Some(existing) if existing == label_idx => {}
                    Some(_) => return None,
                }
            }
        }
        let indices: Option<Vec<usize>> = found.into_iter().collect();
        self.schema.from_indices(indices?).ok()
    }

    /// Label an encoded sentence; `None` when undecidable.
    pub fn oracle_label(&self, seq: &TokenSequence, vocab: &Vocabulary) -> Option<AttributeVector> {
        let tokens: Vec<&str> = seq.content().iter().map(|&id| vocab.token(id)).collect();
        self.oracle_label_tokens(&tokens)
    }

    /// Ground-truth rewrite: swap every attribute-bearing token for its
    /// aligned counterpart under the target labels; content slots untouched.
    pub fn rule_transfer_tokens(&self, tokens: &[&str], target: &AttributeVector) -> Result<Vec<String>> {
        if self.oracle_label_tokens(tokens).is_none() {
            return Err(Error::Contract(
                "rule transfer requires a grammar-conformant, decidable sentence".into(),
            ));
        }
        tokens
            .iter()
            .map(|t| {
                if !self.all_tokens.contains(*t) {
                    return Err(Error::Contract(format!("token `{t}` is not in the grammar")));
                }
                Ok(match self.bearers.get(*t) {
                    Some(&(lex, attr, _, pos)) => match &self.lexicons[lex].kind {
                        LexKind::Attr { by_label, .. } => {
                            by_label[target.label_index(attr)][pos].clone()
                        }
                        LexKind::Neutral(_) => unreachable!("bearer always indexes an attr lexicon"),
                    },
                    None => (*t).to_string(),
                })
            })
            .collect()
    }

    /// Encoded-sequence version of [`Self::rule_transfer_tokens`].
    pub fn rule_transfer(
        &self,
        seq: &TokenSequence,
        target: &AttributeVector,
        vocab: &Vocabulary,
    ) -> Result<TokenSequence> {
        let tokens: Vec<&str> = seq.content().iter().map(|&id| vocab.token(id)).collect();
        let swapped = self.rule_transfer_tokens(&tokens, target)?;
        let ids: Vec<u32> = swapped.iter().map(|t| vocab.id(t)).collect();
        Ok(TokenSequence::from_content(&ids, ids.len())?.0)
    }

    /// Which template a surface sentence instantiates, if any.
    pub fn parse_template(&self, tokens: &[&str]) -> Option<usize> {
        'tpl: for (ti, tpl) in self.templates.iter().enumerate() {
            if tpl.len() != tokens.len() {
                continue;
            }
            for (&slot, tok) in tpl.iter().zip(tokens) {
                let ok = match &self.lexicons[slot].kind {
                    LexKind::Neutral(entries) => entries.iter().any(|e| e == tok),
                    LexKind::Attr { by_label, .. } => {
                        by_label.iter().any(|entries| entries.iter().any(|e| e == tok))
                    }
                };
                if !ok {
                    continue 'tpl;
                }
            }
            return Some(ti);
        }
        None
    }

    /// Estimated entropy per predicted token (EOS included) of the grammar's
    /// sentence distribution, from `n` sampled sentences. The surprisal of a
    /// sentence is exact: uniform template, uniform label combination and
    /// uniform slot choices, and lexicon disjointness makes parses unique.
    pub fn entropy_per_token(&self, n: usize, seed: u64) -> Real {
        let combos = self.schema.num_combinations() as Real;
        let mut total_nats = 0.0;
        let mut total_steps = 0.0;
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let label_idx = rng.gen_range(0..self.schema.num_combinations());
            let label = self.schema.all_combinations()[label_idx].clone();
            let template = rng.gen_range(0..self.templates.len());
            let mut nats = (self.templates.len() as Real).ln() + combos.ln();
            for &slot in &self.templates[template] {
                let size = match &self.lexicons[slot].kind {
                    LexKind::Neutral(e) => e.len(),
                    LexKind::Attr { by_label, attr } => by_label[label.label_index(*attr)].len(),
                };
                nats += (size as Real).ln();
            }
            total_nats += nats;
            total_steps += (self.templates[template].len() + 1) as Real; // + EOS
        }
        total_nats / total_steps
    }

    /// Grammar registry for the CLI.
    pub fn by_name(name: &str) -> Result<TemplateGrammar> {
        match name {
            "sentiment" => Ok(sentiment_grammar()),
            "multi" => Ok(multi_attribute_grammar()),
            "diglossia" => Ok(diglossia_grammar()),
            other => Err(Error::Config(format!(
                "unknown grammar `{other}` (expected sentiment, multi or diglossia)"
            ))),
        }
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn neutral(name: &str, entries: &str) -> Lexicon {
    Lexicon { name: name.to_string(), kind: LexKind::Neutral(words(entries)) }
}

fn attr(name: &str, attr: usize, by_label: &[&str]) -> Lexicon {
    Lexicon {
        name: name.to_string(),
        kind: LexKind::Attr { attr, by_label: by_label.iter().map(|s| words(s)).collect() },
    }
}

/// Binary-sentiment review grammar, ~520 distinct tokens, at most two
/// sentiment-bearing tokens per sentence.
pub fn sentiment_grammar() -> TemplateGrammar {
    let schema = AttributeSchema::new(vec![(
        "sentiment".into(),
        vec!["negative".into(), "positive".into()],
    )])
    .expect("valid schema");

    let nouns = "food service pizza pasta burger salad soup steak sushi ramen bread cheese \
                 coffee tea juice cake pie dessert menu wine beer sauce rice chicken beef pork \
                 fish shrimp lobster taco burrito sandwich bagel muffin donut cookie brownie \
                 pancake waffle omelette curry noodle dumpling pho risotto lasagna gnocchi \
                 falafel hummus kebab gyro paella bisque chowder brisket ribs wings fries slaw \
                 salsa guacamole nachos pretzel popcorn chocolate vanilla caramel fudge pudding \
                 custard gelato sorbet sundae shake smoothie latte espresso cappuccino mocha \
                 cocoa cider ale lager stout porter merlot decor ambience atmosphere lighting \
                 music playlist seating booth patio terrace rooftop bar counter kitchen oven \
                 grill staff waiter waitress server hostess chef cook manager owner crew team \
                 crowd line queue parking entrance restroom table chair plate bowl cup glass \
                 fork spoon knife napkin tray bill check receipt price portion serving special \
                 brunch lunch dinner breakfast snack buffet platter combo deal view bathroom \
                 hallway lobby garden windows walls floors ceiling artwork silverware glassware \
                 appetizer entree starter tapenade bruschetta calamari carpaccio ceviche tartare \
                 antipasto focaccia ciabatta sourdough baguette croissant brioche scone biscuit \
                 granola oatmeal porridge yogurt parfait crepe quiche frittata souffle tagine \
                 goulash stroganoff schnitzel bratwurst chorizo prosciutto salami pastrami \
                 meatloaf casserole potpie cornbread grits gumbo jambalaya etouffee poke tempura \
                 teriyaki yakitori udon soba gyoza edamame kimchi bibimbap bulgogi satay laksa \
                 rendang biryani samosa naan roti dosa vindaloo korma tikka masala dal chutney \
                 raita espresso_bar cheesecake tiramisu baklava cannoli macaron eclair truffle \
                 praline nougat toffee brittle marzipan sherbet slush limeade lemonade kombucha \
                 matcha chai oolong earl_grey rooibos seltzer tonic cola rootbeer milkshake \
                 host valet barista sommelier busser runner dishwasher patron customer guest \
                 reservation website app signage awning mural chandelier candle centerpiece \
                 tablecloth coaster stemware pitcher carafe decanter ramekin skillet saucepan \
                 griddle fryer smoker rotisserie pantry cellar vineyard brewery distillery \
                 bakery deli cafe bistro diner eatery steakhouse pizzeria taqueria noodlehouse \
                 teahouse icecream froyo foodtruck stall stand cart vendor market bazaar";
    let adj_pos = "great excellent amazing wonderful fantastic delicious tasty fresh perfect \
                   lovely superb outstanding incredible delightful brilliant charming cozy \
                   friendly attentive prompt generous crisp juicy tender flavorful fragrant \
                   vibrant spotless immaculate inviting welcoming cheerful gorgeous stunning \
                   marvelous exquisite heavenly divine splendid terrific phenomenal impeccable \
                   stellar memorable satisfying refreshing hearty authentic creative balanced \
                   elegant polished graceful warm genuine affordable reasonable quick speedy \
                   courteous helpful pleasant";
    let adj_neg = "terrible awful horrible dreadful disgusting bland stale soggy greasy \
                   miserable lousy disappointing mediocre appalling atrocious dingy cramped \
                   rude inattentive slow stingy mushy dry tough flavorless rancid murky filthy \
                   grimy unwelcoming hostile dreary hideous ghastly abysmal revolting nasty \
                   sour vile wretched laughable overpriced sloppy forgettable unsatisfying \
                   watery thin pretentious chaotic messy cold fake unreasonable pricey sluggish \
                   dismissive unhelpful unpleasant shabby repulsive careless clumsy";
    let verb_pos = "loved enjoyed adored praised recommended savored relished appreciated \
                    admired devoured cherished liked celebrated endorsed applauded fancied \
                    treasured favored welcomed commended";
    let verb_neg = "hated despised loathed criticized avoided regretted disliked resented \
                    dreaded mocked ridiculed panned condemned rejected denounced scorned \
                    shunned detested bemoaned lamented";
    let adverbs = "really very quite truly simply absolutely genuinely utterly remarkably \
                   honestly surprisingly consistently definitely certainly incredibly \
                   especially particularly thoroughly notably downright";
    let subjects = "i we they everyone everybody somebody folks locals visitors tourists \
                    regulars critics";
    let places = "downtown midtown uptown brooklyn austin portland seattle denver boston \
                  chicago phoenix dallas vegas miami tucson omaha tulsa boise salem reno \
                  fresno oakland berkeley pasadena malibu venice soho tribeca chinatown \
                  riverside";
    let links = "was is seemed felt";

    let lexicons = vec![
        neutral("det", "the"),
        neutral("noun", nouns),
        neutral("link", links),
        attr("adj", 0, &[adj_neg, adj_pos]),
        neutral("adv", adverbs),
        neutral("subj", subjects),
        attr("verb", 0, &[verb_neg, verb_pos]),
        neutral("prep", "in"),
        neutral("place", places),
        neutral("conn", "and"),
    ];
    let (det, noun, link, adj, adv, subj, verb, prep, place, conn) =
        (0, 1, 2, 3, 4, 5, 6, 7, 8, 9);
    let templates = vec![
        vec![det, noun, link, adj],
        vec![det, noun, link, adj, conn, adj],
        vec![det, noun, link, adv, adj],
        vec![subj, verb, det, noun],
        vec![subj, verb, det, noun, prep, place],
        vec![subj, verb, det, adj, noun],
        vec![det, noun, prep, place, link, adj],
        vec![adv, subj, verb, det, noun],
    ];
    TemplateGrammar::new("sentiment", schema, lexicons, templates).expect("grammar is valid")
}

/// Four lexical attributes: tense (3-way), negation, person, politeness.
pub fn multi_attribute_grammar() -> TemplateGrammar {
    let schema = AttributeSchema::new(vec![
        ("tense".into(), vec!["past".into(), "present".into(), "future".into()]),
        ("negation".into(), vec!["plain".into(), "negated".into()]),
        ("person".into(), vec!["first".into(), "third".into()]),
        ("politeness".into(), vec!["plain".into(), "polite".into()]),
    ])
    .expect("valid schema");

    let verbs_past = "visited walked cleaned painted watched opened closed fixed moved planted \
                      washed carried";
    let verbs_present = "visits walks cleans paints watches opens closes fixes moves plants \
                         washes carries";
    let verbs_future = "will_visit will_walk will_clean will_paint will_watch will_open \
                        will_close will_fix will_move will_plant will_wash will_carry";

    let lexicons = vec![
        neutral("det", "the"),
        attr("subj", 2, &["i we", "he she"]),
        attr("verb", 0, &[verbs_past, verbs_present, verbs_future]),
        attr("negadv", 1, &["certainly truly gladly", "never hardly rarely"]),
        attr("polite", 3, &["anyway frankly honestly", "please kindly graciously"]),
        neutral(
            "noun",
            "market garden house school office library station bridge museum bakery farm \
             harbor castle temple tower cabin cottage barn mill church",
        ),
        neutral(
            "place",
            "town village city valley county district suburb plaza square park avenue street",
        ),
        neutral("adj", "old new small large quiet busy bright dark clean dusty narrow wide"),
        neutral("prep", "in"),
    ];
    let (det, subj, verb, negadv, polite, noun, place, adj, prep) = (0, 1, 2, 3, 4, 5, 6, 7, 8);
    let templates = vec![
        vec![subj, negadv, verb, det, noun, polite],
        vec![subj, negadv, verb, det, adj, noun, polite],
        vec![subj, negadv, verb, det, noun, prep, det, place, polite],
        vec![polite, subj, negadv, verb, det, noun],
        vec![subj, negadv, verb, det, adj, noun, prep, det, place, polite],
    ];
    TemplateGrammar::new("multi", schema, lexicons, templates).expect("grammar is valid")
}

/// Archaic-vs-modern writing style with index-aligned marker lexicons;
/// the paired-data source for the monolingual-translation experiments.
pub fn diglossia_grammar() -> TemplateGrammar {
    let schema = AttributeSchema::new(vec![(
        "style".into(),
        vec!["archaic".into(), "modern".into()],
    )])
    .expect("valid schema");

    let lexicons = vec![
        neutral("det", "the"),
        attr("pron", 0, &["thou", "you"]),
        attr("poss", 0, &["thy", "your"]),
        attr("aux", 0, &["hath doth", "has does"]),
        attr("time", 0, &["ere whilst", "before while"]),
        attr("affirm", 0, &["aye nay", "yes no"]),
        attr("loc", 0, &["hither thither", "here there"]),
        attr("why", 0, &["wherefore", "why"]),
        attr("oft", 0, &["oft", "often"]),
        neutral(
            "verb",
            "wandered rested feasted labored sang danced prayed traveled waited slept dreamed \
             hunted farmed sailed marched studied painted carved cooked gathered",
        ),
        neutral(
            "noun",
            "castle village knight garden river forest mountain meadow chapel tavern harbor \
             road bridge field orchard well lantern sword shield crown cloak horse wagon gate \
             wall tower feast song tale friend",
        ),
        neutral("adv", "slowly swiftly quietly boldly gladly sadly proudly calmly bravely gently"),
        neutral(
            "adj",
            "old young weary merry noble humble gentle fierce quiet proud golden silver",
        ),
        neutral("prep", "in"),
    ];
    let (det, pron, poss, aux, time, affirm, loc, why, oft, verb, noun, adv, adj, prep) =
        (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13);
    let templates = vec![
        vec![pron, verb, prep, det, noun],
        vec![poss, noun, verb, adv],
        vec![aux, det, noun, verb, loc],
        vec![pron, verb, det, adj, noun],
        vec![affirm, pron, verb, adv],
        vec![oft, pron, verb, prep, det, noun],
        vec![why, verb, det, noun, adv],
        vec![det, adj, noun, verb, loc],
        vec![pron, verb, prep, poss, noun],
        vec![time, det, noun, verb, adv],
    ];
    let _ = time;
    TemplateGrammar::new("diglossia", schema, lexicons, templates).expect("grammar is valid")
}
