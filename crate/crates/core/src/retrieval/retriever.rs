use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::retrieval::task::{entity_word, Document, VqaInstance};
use crate::tinylm::{SyntheticImage, Vocabulary};

/// Top-K documents for one query, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievedSet {
    pub doc_ids: Vec<u64>,
    /// `(1 + cos) / 2`, descending, strictly positive.
    pub scores: Vec<f64>,
    /// One flag per document; empty until labeled.
    pub pseudo_relevant: Vec<bool>,
}

impl RetrievedSet {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    /// Fills `pseudo_relevant` from the documents' text.
    pub fn label(&mut self, corpus: &[Document], answers: &[String]) -> Result<()> {
        self.pseudo_relevant = self
            .doc_ids
            .iter()
            .map(|&id| {
                let doc = corpus.get(id as usize).filter(|d| d.id == id).ok_or(Error::NotFound(id))?;
                Ok(label_pseudo_relevance(&doc.text, answers))
            })
            .collect::<Result<_>>()?;
        Ok(())
    }
}

/// True iff some answer occurs in `text` as a contiguous run of whitespace tokens.
pub fn label_pseudo_relevance(text: &str, answers: &[String]) -> bool {
    let doc: Vec<&str> = text.split_whitespace().collect();
    answers.iter().any(|a| {
        let ans: Vec<&str> = a.split_whitespace().collect();
        !ans.is_empty() && doc.windows(ans.len()).any(|w| w == ans.as_slice())
    })
}

/// Fraction of sets whose first `k` documents include a pseudo-relevant one.
pub fn prrecall_at_k(sets: &[RetrievedSet], k: usize) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::EmptyInput("retrieved sets"));
    }
    let mut hits = 0usize;
    for s in sets {
        if s.pseudo_relevant.len() != s.doc_ids.len() {
            return Err(Error::LengthMismatch("retrieved set is not labeled".into()));
        }
        if s.pseudo_relevant.iter().take(k).any(|&f| f) {
            hits += 1;
        }
    }
    Ok(hits as f64 / sets.len() as f64)
}

/// Frozen bag-of-token retriever over random projections with IDF weighting.
/// Image patch codes embed as the token of the entity they depict.
#[derive(Clone, Debug)]
pub struct Retriever {
    vocab: Vocabulary,
    projection: Tensor,
    idf: Vec<f64>,
    n_patches: usize,
    doc_ids: Vec<u64>,
    doc_embs: Vec<Vec<f64>>,
}

/// Gaussian rows, Gram-Schmidt orthonormalized while `rows <= dim` allows it,
/// so cosine similarity between token bags is preserved exactly.
fn orthonormal_rows(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = Tensor::randn(&[rows, dim], 1.0, rng).to_vec();
    for i in 0..rows {
        let (done, rest) = data.split_at_mut(i * dim);
        let row = &mut rest[..dim];
        let basis = if i < dim { i } else { 0 };
        for j in 0..basis {
            let prev = &done[j * dim..(j + 1) * dim];
            let dot: f64 = row.iter().zip(prev).map(|(a, b)| a * b).sum();
            row.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
        }
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    Tensor::new(&[rows, dim], data).expect("positive projection shape")
}

pub const DEFAULT_DIM: usize = 256;

impl Retriever {
    pub fn new(corpus: &[Document], vocab: &Vocabulary, n_patches: usize, dim: usize, seed: u64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput("corpus"));
        }
        if dim == 0 || n_patches == 0 {
            return Err(Error::Config("retriever dimension and patch count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = orthonormal_rows(vocab.len(), dim, &mut rng);
        let mut r = Self {
            vocab: vocab.clone(),
            projection,
            idf: Vec::new(),
            n_patches,
            doc_ids: Vec::with_capacity(corpus.len()),
            doc_embs: Vec::with_capacity(corpus.len()),
        };
        let tokenized: Vec<Vec<usize>> = corpus
            .iter()
            .map(|d| {
                let mut ids = vocab.tokenize(&d.text)?;
                if ids.is_empty() {
                    return Err(Error::EmptyInput("document text"));
                }
                if let Some(codes) = &d.image_codes {
                    ids.extend(r.code_tokens(codes));
                }
                Ok(ids)
            })
            .collect::<Result<_>>()?;
        let mut df = vec![0usize; vocab.len()];
        for ids in &tokenized {
            let mut seen = ids.clone();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                df[t] += 1;
            }
        }
        let n = corpus.len() as f64;
        r.idf = df.iter().map(|&c| ((1.0 + n) / (1.0 + c as f64)).ln()).collect();
        for (d, ids) in corpus.iter().zip(&tokenized) {
            r.doc_ids.push(d.id);
            r.doc_embs.push(r.embed_ids(ids));
        }
        Ok(r)
    }

    fn code_tokens(&self, codes: &[u32]) -> Vec<usize> {
        codes
            .iter()
            .filter_map(|&c| self.vocab.id(&entity_word(c as usize / self.n_patches)).ok())
            .collect()
    }

    /// Unit-norm embedding of a token bag (zero vector if the bag is empty).
    fn embed_ids(&self, ids: &[usize]) -> Vec<f64> {
        let dim = self.projection.shape()[1];
        let mut e = vec![0.0; dim];
        // Image patches repeat the entity token; a bag counts each token once.
        let bag: BTreeSet<usize> = ids.iter().copied().collect();
        for &t in &bag {
            let w = self.idf[t];
            for (x, &p) in e.iter_mut().zip(self.projection.row(t)) {
                *x += w * p;
            }
        }
        let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            e.iter_mut().for_each(|x| *x /= n);
        }
        e
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed_ids(&self.vocab.tokenize(text)?))
    }

    pub fn embed_query(&self, image: &SyntheticImage, question: &str) -> Result<Vec<f64>> {
        let mut ids = self.vocab.tokenize(question)?;
        ids.extend(self.code_tokens(image.codes()));
        Ok(self.embed_ids(&ids))
    }

    pub fn corpus_len(&self) -> usize {
        self.doc_ids.len()
    }

    /// Exhaustive scan; ties go to the smaller document id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<RetrievedSet> {
        if k == 0 {
            return Err(Error::Config("K must be positive".into()));
        }
        if k > self.doc_ids.len() {
            return Err(Error::KTooLarge {
                k,
                corpus: self.doc_ids.len(),
            });
        }
        let mut scored: Vec<(f64, u64)> = self
            .doc_embs
            .iter()
            .zip(&self.doc_ids)
            .map(|(e, &id)| {
                let cos: f64 = e.iter().zip(query).map(|(a, b)| a * b).sum();
                (((1.0 + cos) / 2.0).clamp(f64::MIN_POSITIVE, 1.0), id)
            })
            .collect();
        scored.sort_by(|a, b| match b.0.total_cmp(&a.0) {
            Ordering::Equal => a.1.cmp(&b.1),
            o => o,
        });
        scored.truncate(k);
        Ok(RetrievedSet {
            doc_ids: scored.iter().map(|s| s.1).collect(),
            scores: scored.iter().map(|s| s.0).collect(),
            pseudo_relevant: Vec::new(),
        })
    }

    pub fn retrieve(&self, image: &SyntheticImage, question: &str, k: usize) -> Result<RetrievedSet> {
        self.top_k(&self.embed_query(image, question)?, k)
    }

    /// Retrieves for `instance` and labels the result against its answers.
    pub fn retrieve_labeled(&self, instance: &VqaInstance, corpus: &[Document], k: usize) -> Result<RetrievedSet> {
        let mut set = self.retrieve(&instance.image, &instance.question, k)?;
        set.label(corpus, &instance.answers)?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::task::{generate_task, TaskConfig};

    fn answers(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn labeling_rule() {
        assert!(label_pseudo_relevance("ent_7 color red", &answers(&["red"])));
        assert!(!label_pseudo_relevance("ent_7 color blue", &answers(&["red"])));
        assert!(label_pseudo_relevance("they moved to new york last year", &answers(&["new york"])));
        assert!(!label_pseudo_relevance("new jersey and york", &answers(&["new york"])));
        assert!(!label_pseudo_relevance("reddish", &answers(&["red"])));
    }

    fn set(flags: &[bool]) -> RetrievedSet {
        RetrievedSet {
            doc_ids: (0..flags.len() as u64).collect(),
            scores: vec![0.5; flags.len()],
            pseudo_relevant: flags.to_vec(),
        }
    }

    #[test]
    fn prrecall_arithmetic() {
        let all = vec![set(&[false, true]); 4];
        assert_eq!(prrecall_at_k(&all, 2).unwrap(), 1.0);
        assert_eq!(prrecall_at_k(&all, 1).unwrap(), 0.0);
        let mut three = all.clone();
        three[2] = set(&[false, false]);
        assert_eq!(prrecall_at_k(&three, 2).unwrap(), 0.75);
        assert!(prrecall_at_k(&[], 2).is_err());
    }

    #[test]
    fn self_query_ranks_first_and_scores_are_ordered() {
        let t = generate_task(&TaskConfig {
            n_entities: 20,
            n_instances: 40,
            ..Default::default()
        })
        .unwrap();
        let vocab = t.vocabulary().unwrap();
        let r = Retriever::new(&t.corpus, &vocab, t.config.n_patches, DEFAULT_DIM, 1).unwrap();
        let doc = &t.corpus[17];
        let s = r.top_k(&r.embed_text(&doc.text).unwrap(), 5).unwrap();
        // Duplicate texts tie; the smaller id wins.
        let first = &t.corpus[s.doc_ids[0] as usize];
        assert_eq!(first.text, doc.text);
        assert!(s.scores.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.scores.iter().all(|&p| p > 0.0 && p <= 1.0));
        assert!(matches!(r.top_k(&r.embed_text(&doc.text).unwrap(), 10_000), Err(Error::KTooLarge { .. })));
    }
}
