//! Synthetic review corpora with controllable user and product effects.
//!
//! Each user carries a latent rating bias and each product a latent quality,
//! both in {-1, 0, +1}. A document samples a base sentiment level, draws its
//! words from that level's indicative token pool plus neutral fillers, and
//! embeds one user-marker and one product-marker token. The observed label is
//! `clamp(base + bias + quality, 0, classes-1)`, so a model that exploits
//! user and product identity can outperform one that reads text alone.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ReviewDoc;

const POOL_SIZE: usize = 8;
const N_FILLERS: usize = 12;

/// Class-indicative token pools, one per class.
pub fn sentiment_pools(classes: usize) -> Vec<Vec<String>> {
    (0..classes)
        .map(|c| (0..POOL_SIZE).map(|k| format!("s{c}w{k}")).collect())
        .collect()
}

fn fillers() -> Vec<String> {
    (0..N_FILLERS).map(|k| format!("f{k}")).collect()
}

/// A generated corpus split 80/10/10, with the latent user biases and
/// product qualities that produced the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<ReviewDoc>,
    pub dev: Vec<ReviewDoc>,
    pub test: Vec<ReviewDoc>,
    pub user_bias: HashMap<String, i64>,
    pub product_quality: HashMap<String, i64>,
}

impl SyntheticCorpus {
    pub fn all_docs(&self) -> impl Iterator<Item = &ReviewDoc> {
        self.train.iter().chain(self.dev.iter()).chain(self.test.iter())
    }
}

/// Generate a biased synthetic corpus. Deterministic in `seed`.
pub fn gen_synthetic(
    seed: u64,
    n_users: usize,
    n_products: usize,
    n_docs: usize,
    classes: usize,
) -> SyntheticCorpus {
    gen_synthetic_opts(seed, n_users, n_products, n_docs, classes, true)
}

/// Generator with an explicit choice of biased or flat latents. With
/// `biased = false` every bias and quality is zero, so labels equal the
/// sampled base levels exactly.
pub fn gen_synthetic_opts(
    seed: u64,
    n_users: usize,
    n_products: usize,
    n_docs: usize,
    classes: usize,
    biased: bool,
) -> SyntheticCorpus {
    assert!(classes >= 2, "need at least two classes");
    assert!(n_users > 0 && n_products > 0 && n_docs > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools = sentiment_pools(classes);
    let fillers = fillers();

    let latent = |i: usize| if biased { (i % 3) as i64 - 1 } else { 0 };
    let user_bias: HashMap<String, i64> =
        (0..n_users).map(|i| (format!("u{i}"), latent(i))).collect();
    let product_quality: HashMap<String, i64> =
        (0..n_products).map(|j| (format!("p{j}"), latent(j))).collect();

    let mut docs = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let ui = rng.gen_range(0..n_users);
        let pj = rng.gen_range(0..n_products);
        let base = rng.gen_range(0..classes) as i64;
        let label = (base + user_bias[&format!("u{ui}")] + product_quality[&format!("p{pj}")])
            .clamp(0, classes as i64 - 1) as u32;

        let n_sents = rng.gen_range(2..=4);
        let mut sentences: Vec<Vec<String>> = (0..n_sents)
            .map(|_| {
                let n_words = rng.gen_range(3..=8);
                (0..n_words)
                    .map(|_| {
                        if rng.gen_bool(0.6) {
                            pools[base as usize].choose(&mut rng).unwrap().clone()
                        } else {
                            fillers.choose(&mut rng).unwrap().clone()
                        }
                    })
                    .collect()
            })
            .collect();
        for sent in sentences.iter_mut() {
            for marker in [format!("mu{ui}"), format!("mp{pj}")] {
                let pos = rng.gen_range(0..=sent.len());
                sent.insert(pos, marker);
            }
        }
        docs.push(ReviewDoc {
            user: format!("u{ui}"),
            product: format!("p{pj}"),
            label,
            sentences,
        });
    }

    let n_train = n_docs * 8 / 10;
    let n_dev = n_docs / 10;
    let test = docs.split_off((n_train + n_dev).min(n_docs));
    let dev = docs.split_off(n_train.min(docs.len()));
    SyntheticCorpus { train: docs, dev, test, user_bias, product_quality }
}
