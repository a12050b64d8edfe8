//! Vocabularies, word-vector files, TSV corpora, and synthetic tasks.

mod corpus;
mod embeddings;
mod synth;
mod vocab;

pub use corpus::{pad_or_crop, read_labeled, read_pairs, tokenize, write_labeled, write_pairs, Labeled, Loaded, Pair};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use synth::{
    entailment_label, gen_synthetic, joined_pair, recall_symbols, SeqExample, SynthData, SynthSpec, SynthTask, NEGATION,
    PAIR_SEPARATOR, QUERY_MARKER,
};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};
