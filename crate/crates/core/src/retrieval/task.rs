//! Deterministic synthetic knowledge-based VQA world.
//!
//! Entities carry one value per attribute. The corpus holds one fact document
//! per (entity, attribute) plus value-free distractors that reuse the same
//! vocabulary. A question names an attribute; the entity is only visible in
//! the image.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tinylm::{SyntheticImage, Vocabulary};

/// Attribute names and their (disjoint) single-word value sets.
pub const ATTRIBUTES: [(&str, [&str; 8]); 6] = [
    ("color", ["red", "blue", "green", "yellow", "black", "white", "purple", "orange"]),
    ("shape", ["round", "square", "oval", "flat", "long", "thin", "curved", "pointed"]),
    ("material", ["wood", "metal", "glass", "stone", "paper", "plastic", "cotton", "leather"]),
    ("size", ["tiny", "small", "medium", "large", "huge", "narrow", "wide", "tall"]),
    ("origin", ["france", "china", "brazil", "egypt", "india", "japan", "peru", "kenya"]),
    ("sound", ["loud", "quiet", "soft", "sharp", "deep", "shrill", "muffled", "silent"]),
];

const FILLER: [&str; 36] = [
    "the", "of", "is", "has", "a", "records", "say", "in", "known", "for", "its", "not",
    "recorded", "people", "often", "ask", "about", "was", "seen", "near", "old", "market",
    "and", "share", "no", "one", "knows", "today", "things", "past", "what", "which", "does", "this", "object", "have",
];
const PUNCT: [&str; 2] = ["?", "."];
/// Words of the hard prompts used to initialize learnable prompts.
const PROMPT_WORDS: [&str; 9] = [
    "summarize", "key", "information", "given", "passage", "concise", "manner", "image", "question",
];

const FACT_TEMPLATES: [&str; 4] = [
    "the {attr} of {ent} is {val} .",
    "{ent} has a {val} {attr} .",
    "records say {ent} is {val} in {attr} .",
    "{ent} is known for its {val} {attr} .",
];

/// Distractors mostly mention an entity or an attribute, rarely both.
const DISTRACTOR_TEMPLATES: [(&str, u32); 5] = [
    ("{ent} was seen near {ent2} in the old market .", 4),
    ("records say {ent} and {ent2} share a past .", 3),
    ("people often ask about old things in the market .", 3),
    ("no one knows {ent} today .", 2),
    ("the {attr} of {ent} is not recorded .", 1),
];

const QUESTION_TEMPLATES: [&str; 3] = [
    "what is the {attr} of this object ?",
    "which {attr} does this object have ?",
    "what {attr} is this ?",
];

pub fn entity_word(e: usize) -> String {
    format!("ent_{e}")
}

/// Every word the world can produce, in a fixed order.
pub fn lexicon(n_entities: usize, n_attributes: usize) -> Vec<String> {
    let mut words: Vec<String> = (0..n_entities).map(entity_word).collect();
    for (name, values) in ATTRIBUTES.iter().take(n_attributes) {
        words.push(name.to_string());
        words.extend(values.iter().map(|v| v.to_string()));
    }
    words.extend(FILLER.iter().chain(&PUNCT).chain(&PROMPT_WORDS).map(|w| w.to_string()));
    words
}

pub fn vocabulary(n_entities: usize, n_attributes: usize) -> Result<Vocabulary> {
    Vocabulary::new(lexicon(n_entities, n_attributes))
}

fn fill(template: &str, attr: &str, ent: usize, ent2: usize, val: &str) -> String {
    template
        .replace("{attr}", attr)
        .replace("{ent2}", &entity_word(ent2))
        .replace("{ent}", &entity_word(ent))
        .replace("{val}", val)
}

pub fn fact_text<R: Rng + ?Sized>(rng: &mut R, entity: usize, attribute: usize, value: usize) -> String {
    let (name, values) = ATTRIBUTES[attribute];
    let t = FACT_TEMPLATES[rng.gen_range(0..FACT_TEMPLATES.len())];
    fill(t, name, entity, entity, values[value])
}

pub fn question_text<R: Rng + ?Sized>(rng: &mut R, attribute: usize) -> String {
    let t = QUESTION_TEMPLATES[rng.gen_range(0..QUESTION_TEMPLATES.len())];
    fill(t, ATTRIBUTES[attribute].0, 0, 0, "")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub seed: u64,
    pub n_entities: usize,
    pub n_attributes: usize,
    /// Number of (entity, attribute) questions drawn, split into train and val.
    pub n_instances: usize,
    /// Fraction of the corpus made of value-free distractor documents.
    pub distractor_rate: f64,
    pub val_fraction: f64,
    pub n_patches: usize,
    pub patch_width: usize,
    /// Copies of the answer per instance, emulating several annotators.
    pub annotations: usize,
    /// Probability that an annotation is replaced by another value of the same attribute.
    pub annotation_noise: f64,
    /// Attach the entity's image patch codes to fact documents.
    pub multimodal_docs: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_entities: 100,
            n_attributes: 4,
            n_instances: 400,
            distractor_rate: 0.8,
            val_fraction: 0.3,
            n_patches: 8,
            patch_width: 8,
            annotations: 5,
            annotation_noise: 0.1,
            multimodal_docs: false,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_entities < 2 || self.n_attributes == 0 || self.n_instances < 2 {
            return bad("need at least 2 entities, 1 attribute and 2 instances".into());
        }
        if self.n_attributes > ATTRIBUTES.len() {
            return bad(format!("at most {} attributes are available", ATTRIBUTES.len()));
        }
        if self.n_instances > self.n_entities * self.n_attributes {
            return bad(format!(
                "{} instances requested but only {} distinct (entity, attribute) questions exist",
                self.n_instances,
                self.n_entities * self.n_attributes
            ));
        }
        if !(0.0..1.0).contains(&self.distractor_rate) {
            return bad("distractor_rate must be in [0, 1)".into());
        }
        if !(0.0 < self.val_fraction && self.val_fraction < 1.0) {
            return bad("val_fraction must be in (0, 1)".into());
        }
        if self.annotations == 0 || self.n_patches == 0 || self.patch_width == 0 {
            return bad("annotations and patch grid must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.annotation_noise) {
            return bad("annotation_noise must be in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: u64,
    pub text: String,
    /// Image patch codes for multimodal documents.
    pub image_codes: Option<Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqaInstance {
    pub id: u64,
    pub image: SyntheticImage,
    pub question: String,
    /// Annotated answers; duplicates emulate agreeing annotators.
    pub answers: Vec<String>,
}

impl VqaInstance {
    /// Most frequent annotation (first occurrence wins ties), used as the training target.
    pub fn target_answer(&self) -> &str {
        let mut best = &self.answers[0];
        let mut best_count = 0;
        for a in &self.answers {
            let c = self.answers.iter().filter(|b| *b == a).count();
            if c > best_count {
                best = a;
                best_count = c;
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub config: TaskConfig,
    pub corpus: Vec<Document>,
    pub train: Vec<VqaInstance>,
    pub val: Vec<VqaInstance>,
    /// `facts[entity][attribute]` = value index.
    pub facts: Vec<Vec<usize>>,
}

impl Task {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        vocabulary(self.config.n_entities, self.config.n_attributes)
    }

    pub fn document(&self, id: u64) -> Option<&Document> {
        self.corpus.get(id as usize).filter(|d| d.id == id)
    }
}

/// Builds the world, corpus and train/val split from `config.seed`.
pub fn generate_task(config: &TaskConfig) -> Result<Task> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (ne, na) = (config.n_entities, config.n_attributes);
    let facts: Vec<Vec<usize>> = (0..ne)
        .map(|_| (0..na).map(|_| rng.gen_range(0..8)).collect())
        .collect();

    let mut docs: Vec<(String, Option<Vec<u32>>)> = Vec::new();
    for (e, row) in facts.iter().enumerate() {
        for (a, &v) in row.iter().enumerate() {
            let codes = config
                .multimodal_docs
                .then(|| SyntheticImage::for_entity(e, config.n_patches, config.patch_width).codes().to_vec());
            docs.push((fact_text(&mut rng, e, a, v), codes));
        }
    }
    let n_facts = docs.len();
    let n_distractors =
        (n_facts as f64 * config.distractor_rate / (1.0 - config.distractor_rate)).round() as usize;
    let distractor_pick = WeightedIndex::new(DISTRACTOR_TEMPLATES.iter().map(|t| t.1)).expect("positive weights");
    for _ in 0..n_distractors {
        let e = rng.gen_range(0..ne);
        let mut e2 = rng.gen_range(0..ne - 1);
        if e2 >= e {
            e2 += 1;
        }
        let attr = ATTRIBUTES[rng.gen_range(0..na)].0;
        let t = DISTRACTOR_TEMPLATES[distractor_pick.sample(&mut rng)].0;
        docs.push((fill(t, attr, e, e2, ""), None));
    }
    docs.shuffle(&mut rng);
    let corpus = docs
        .into_iter()
        .enumerate()
        .map(|(i, (text, image_codes))| Document {
            id: i as u64,
            text,
            image_codes,
        })
        .collect();

    let mut pairs: Vec<(usize, usize)> = (0..ne).flat_map(|e| (0..na).map(move |a| (e, a))).collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(config.n_instances);
    let n_val = ((config.n_instances as f64 * config.val_fraction).round() as usize).clamp(1, config.n_instances - 1);
    let mut instances: Vec<VqaInstance> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(e, a))| {
            let values = ATTRIBUTES[a].1;
            let gold = facts[e][a];
            let answers = (0..config.annotations)
                .map(|_| {
                    if rng.gen_bool(config.annotation_noise) {
                        let mut other = rng.gen_range(0..7);
                        if other >= gold {
                            other += 1;
                        }
                        values[other].to_string()
                    } else {
                        values[gold].to_string()
                    }
                })
                .collect();
            VqaInstance {
                id: i as u64,
                image: SyntheticImage::for_entity(e, config.n_patches, config.patch_width),
                question: question_text(&mut rng, a),
                answers,
            }
        })
        .collect();
    let val = instances.split_off(instances.len() - n_val);
    Ok(Task {
        config: config.clone(),
        corpus,
        train: instances,
        val,
        facts,
    })
}

/// A fresh random-world example for Stage-0 pretraining: gold context (the
/// fact, sometimes followed by a second fact about the same entity), the image,
/// the question and the answer.
#[derive(Clone, Debug)]
pub struct PretrainExample {
    pub image: SyntheticImage,
    pub question: String,
    pub context: String,
    pub answer: String,
}

pub fn sample_pretrain_example<R: Rng + ?Sized>(
    rng: &mut R,
    n_entities: usize,
    n_attributes: usize,
    n_patches: usize,
    patch_width: usize,
) -> PretrainExample {
    let e = rng.gen_range(0..n_entities);
    let a = rng.gen_range(0..n_attributes);
    let v = rng.gen_range(0..8);
    let mut context = fact_text(rng, e, a, v);
    if n_attributes > 1 && rng.gen_bool(0.5) {
        let mut a2 = rng.gen_range(0..n_attributes - 1);
        if a2 >= a {
            a2 += 1;
        }
        let v2 = rng.gen_range(0..8);
        let other = fact_text(rng, e, a2, v2);
        context = if rng.gen_bool(0.5) {
            format!("{context} {other}")
        } else {
            format!("{other} {context}")
        };
    }
    PretrainExample {
        image: SyntheticImage::for_entity(e, n_patches, patch_width),
        question: question_text(rng, a),
        context,
        answer: ATTRIBUTES[a].1[v].to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TaskConfig {
        TaskConfig {
            n_entities: 10,
            n_instances: 30,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_task(&small()).unwrap(), generate_task(&small()).unwrap());
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let t = generate_task(&small()).unwrap();
        assert_eq!(t.train.len() + t.val.len(), 30);
        assert_eq!(t.val.len(), 9);
        for v in &t.val {
            assert!(!t.train.iter().any(|tr| tr.image == v.image && tr.question == v.question));
        }
    }

    #[test]
    fn distractor_share() {
        let t = generate_task(&small()).unwrap();
        assert_eq!(t.corpus.len(), 40 + 160);
        assert!(t.corpus.iter().enumerate().all(|(i, d)| d.id == i as u64));
    }

    #[test]
    fn all_text_is_in_vocabulary() {
        let t = generate_task(&small()).unwrap();
        let v = t.vocabulary().unwrap();
        for d in &t.corpus {
            v.tokenize(&d.text).unwrap();
        }
        for i in t.train.iter().chain(&t.val) {
            v.tokenize(&i.question).unwrap();
            for a in &i.answers {
                v.tokenize(a).unwrap();
            }
        }
    }

    #[test]
    fn unsatisfiable_sizes_rejected() {
        let cfg = TaskConfig {
            n_entities: 2,
            n_attributes: 1,
            n_instances: 3,
            ..Default::default()
        };
        assert!(generate_task(&cfg).is_err());
    }
}
