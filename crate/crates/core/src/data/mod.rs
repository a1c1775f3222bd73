//! Corpus ingestion, tokenization, vocabulary, score scaling, pretrained
//! embeddings and cross-validation folds.

mod corpus;
mod embeddings;
mod encode;
mod folds;
mod text;
mod vocab;

pub use corpus::{load_corpus, CorpusFormat, EssayRecord, ScoreScale, CANONICAL_HEADER};
pub use embeddings::{load_embeddings, random_embeddings, PretrainedEmbeddings, RANDOM_INIT_RANGE};
pub use encode::{encode_document, EncodedDocument};
pub use folds::{make_folds, FoldSplit};
pub use text::{split_sentences, tokenize, NUM_TOKEN};
pub use vocab::{Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
