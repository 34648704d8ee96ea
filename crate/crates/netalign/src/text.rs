//! String and document similarity: normalized edit distance for screen
//! names, TF-IDF vectors with cosine for user documents.

use std::collections::HashMap;

/// Classic two-row DP edit distance over unicode chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// 1 - lev(a, b) / max(|a|, |b|). Any empty name scores 0: otherwise two
/// missing names would count as a perfect match.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    let (la, lb) = (a.chars().count(), b.chars().count());
    if la == 0 || lb == 0 {
        return 0.0;
    }
    1.0 - levenshtein(a, b) as f64 / la.max(lb) as f64
}

/// Sparse non-negative term-weight vector, sorted by term id.
#[derive(Clone, Debug, Default)]
pub struct DocVector(pub Vec<(u32, f64)>);

impl DocVector {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn cosine(&self, other: &DocVector) -> f64 {
        let mut dot = 0.0;
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += self.0[i].1 * other.0[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        if dot == 0.0 {
            return 0.0;
        }
        let na: f64 = self.0.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        let nb: f64 = other.0.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        (dot / (na * nb)).max(0.0)
    }
}

/// TF-IDF over the union corpus: log-scaled term frequency, smoothed IDF.
/// Sharing one IDF table keeps vectors comparable across the two networks.
pub struct TfIdf {
    term_ids: HashMap<String, u32>,
    idf: Vec<f64>,
}

impl TfIdf {
    /// `corpora` are token lists for every document of both networks;
    /// empty documents participate with zero weight (they do not affect IDF
    /// document counts other than by not containing terms).
    pub fn fit<'a, I>(corpora: I) -> TfIdf
    where
        I: IntoIterator<Item = &'a [String]>,
        I::IntoIter: Clone,
    {
        let docs = corpora.into_iter();
        // Stable term ids: lexicographic over the union vocabulary.
        let mut vocab: Vec<&str> = Vec::new();
        let mut seen: HashMap<&str, ()> = HashMap::new();
        let mut n_docs = 0usize;
        for doc in docs.clone() {
            if !doc.is_empty() {
                n_docs += 1;
            }
            for tok in doc {
                if seen.insert(tok.as_str(), ()).is_none() {
                    vocab.push(tok.as_str());
                }
            }
        }
        vocab.sort_unstable();
        let term_ids: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.to_string(), i as u32))
            .collect();

        let mut df = vec![0usize; vocab.len()];
        for doc in docs {
            let mut in_doc = vec![false; vocab.len()];
            for tok in doc {
                let id = term_ids[tok.as_str()] as usize;
                if !in_doc[id] {
                    in_doc[id] = true;
                    df[id] += 1;
                }
            }
        }
        let idf = df
            .iter()
            .map(|&d| ((1.0 + n_docs as f64) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        TfIdf { term_ids, idf }
    }

    pub fn vocab_len(&self) -> usize {
        self.idf.len()
    }

    pub fn vectorize(&self, doc: &[String]) -> DocVector {
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for tok in doc {
            if let Some(&id) = self.term_ids.get(tok.as_str()) {
                *counts.entry(id).or_insert(0) += 1;
            }
        }
        let mut weights: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(id, c)| (id, (1.0 + (c as f64).ln()) * self.idf[id as usize]))
            .collect();
        weights.sort_unstable_by_key(|(id, _)| *id);
        DocVector(weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn levenshtein_kitten_sitting() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn name_similarity_basics() {
        assert_eq!(name_similarity("abc", "abc"), 1.0);
        assert_eq!(name_similarity("abc", ""), 0.0);
        assert_eq!(name_similarity("", ""), 0.0);
        let got = name_similarity("kitten", "sitting");
        assert!((got - (1.0 - 3.0 / 7.0)).abs() < 1e-12);
    }

    #[test]
    fn name_similarity_prefers_shared_prefix() {
        assert!(name_similarity("ab", "ac") > name_similarity("ab", "cd"));
    }

    #[test]
    fn identical_token_multisets_have_cosine_one() {
        let docs = [toks(&["a", "b", "a"]), toks(&["b", "a", "a"])];
        let model = TfIdf::fit(docs.iter().map(|d| d.as_slice()));
        let u = model.vectorize(&docs[0]);
        let v = model.vectorize(&docs[1]);
        assert!((u.cosine(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_vocabularies_have_cosine_zero() {
        let docs = [toks(&["a", "b"]), toks(&["c", "d"])];
        let model = TfIdf::fit(docs.iter().map(|d| d.as_slice()));
        let u = model.vectorize(&docs[0]);
        let v = model.vectorize(&docs[1]);
        assert_eq!(u.cosine(&v), 0.0);
    }

    #[test]
    fn three_term_corpus_matches_hand_computation() {
        // Docs over vocab {x, y, z}: d0 = [x y], d1 = [x z]; share only "x".
        // N = 2; df(x) = 2, df(y) = df(z) = 1.
        // idf(x) = ln(3/3) + 1 = 1; idf(y) = idf(z) = ln(3/2) + 1.
        // tf weights all (1 + ln 1) = 1.
        // cos = idf_x^2 / (sqrt(idf_x^2 + idf_y^2) * sqrt(idf_x^2 + idf_z^2))
        let docs = [toks(&["x", "y"]), toks(&["x", "z"])];
        let model = TfIdf::fit(docs.iter().map(|d| d.as_slice()));
        let u = model.vectorize(&docs[0]);
        let v = model.vectorize(&docs[1]);
        let idf_x: f64 = 1.0;
        let idf_yz: f64 = (3.0f64 / 2.0).ln() + 1.0;
        let expect = idf_x * idf_x / (idf_x * idf_x + idf_yz * idf_yz);
        assert!((u.cosine(&v) - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_document_vector_is_empty() {
        let docs = [toks(&["a"]), toks(&[])];
        let model = TfIdf::fit(docs.iter().map(|d| d.as_slice()));
        let v = model.vectorize(&docs[1]);
        assert!(v.is_empty());
        assert_eq!(v.cosine(&model.vectorize(&docs[0])), 0.0);
    }

    #[test]
    fn weights_are_non_negative() {
        let docs = [toks(&["a", "a", "a", "b"]), toks(&["a", "c"])];
        let model = TfIdf::fit(docs.iter().map(|d| d.as_slice()));
        for d in &docs {
            assert!(model.vectorize(d).0.iter().all(|(_, w)| *w >= 0.0));
        }
    }
}
