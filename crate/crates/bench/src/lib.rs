//! Fixtures shared by the benchmarks.

use lexhyper::lexicon::Lexicon;
use lexhyper::nn::layers::Builder;
use lexhyper::nn::{Mat, ParamGroup, ParamStore};
use lexhyper::synth::{generate_corpus, GeneratorConfig};
use lexhyper::Document;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// Registers parameters through `f` in a fresh store.
pub fn build<T>(seed: u64, f: impl FnOnce(&mut Builder<'_>) -> T) -> (T, ParamStore) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let built = f(&mut Builder::new(&mut store, &mut r, ParamGroup::Task));
    (built, store)
}

/// Synthetic documents with their lexicon.
pub fn corpus(num_docs: usize) -> (Vec<Document>, Lexicon) {
    let c = generate_corpus(&GeneratorConfig { num_docs, ..Default::default() }).expect("valid generator config");
    let lex = c.lexicon();
    (c.documents, lex)
}

/// The longest of the first `n` synthetic documents.
pub fn long_document(n: usize) -> Document {
    corpus(n).0.into_iter().max_by_key(|d| d.tokens.len()).expect("non-empty corpus")
}
