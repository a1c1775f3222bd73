//! Synthetic source-dependent prompts shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use coattn::data::EssayRecord;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sentences per synthetic essay; at most this many are copied from the article.
pub const ESSAY_SENTENCES: usize = 4;
const SENTENCE_WORDS: usize = 7;

/// Letters only, so no word collapses to the number token.
fn word(prefix: char, i: usize) -> String {
    let letters = b"abcdefghijklmnopqrstuvwxyz";
    format!("{prefix}{}{}", letters[i / 26] as char, letters[i % 26] as char)
}

/// An article plus a generator of essays whose score is the number of
/// article sentences they copy. Every essay has the same number of
/// sentences and words, so length carries no signal.
pub struct SyntheticPrompt {
    pub article_sentences: Vec<String>,
    filler: Vec<String>,
    rng: ChaCha8Rng,
}

impl SyntheticPrompt {
    pub fn new(seed: u64, article_sentences: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let article_words: Vec<String> = (0..30).map(|i| word('q', i)).collect();
        let filler: Vec<String> = (0..30).map(|i| word('z', i)).collect();
        let article_sentences = (0..article_sentences)
            .map(|_| sentence(&mut rng, &article_words))
            .collect();
        Self {
            article_sentences,
            filler,
            rng,
        }
    }

    pub fn article(&self) -> String {
        self.article_sentences.join(" ")
    }

    /// `n` fresh essays; essay `i` copies `i mod (ESSAY_SENTENCES)` article
    /// sentences, so scores cycle through `0..ESSAY_SENTENCES`.
    pub fn essays(&mut self, n: usize) -> Vec<(String, i64)> {
        (0..n)
            .map(|i| {
                let copied = i % ESSAY_SENTENCES;
                let mut sents: Vec<String> = self
                    .article_sentences
                    .choose_multiple(&mut self.rng, copied)
                    .cloned()
                    .collect();
                for _ in copied..ESSAY_SENTENCES {
                    sents.push(sentence(&mut self.rng, &self.filler));
                }
                sents.shuffle(&mut self.rng);
                (sents.join(" "), copied as i64)
            })
            .collect()
    }
}

fn sentence(rng: &mut ChaCha8Rng, pool: &[String]) -> String {
    let words: Vec<&str> = (0..SENTENCE_WORDS)
        .map(|_| pool.choose(rng).expect("nonempty pool").as_str())
        .collect();
    format!("{}.", words.join(" "))
}

pub fn records(essays: &[(String, i64)]) -> Vec<EssayRecord> {
    essays
        .iter()
        .enumerate()
        .map(|(i, (text, score))| EssayRecord {
            essay_id: format!("e{i}"),
            prompt_id: "p1".into(),
            text: text.clone(),
            gold_score: *score,
        })
        .collect()
}

/// Writes essays in the canonical tab-separated corpus format.
pub fn write_corpus(path: &Path, essays: &[(String, i64)]) {
    let mut out = String::from("essay_id\tprompt_id\tscore\ttext\n");
    for (i, (text, score)) in essays.iter().enumerate() {
        let _ = writeln!(out, "e{i}\tp1\t{score}\t{text}");
    }
    fs::write(path, out).expect("write corpus");
}

/// A small but complete run file for quick cross-validation runs.
pub fn tiny_run_file(corpus: &Path, article: &Path, output_dir: &Path, seed: u64) -> String {
    format!(
        "corpus = {}\narticle = {}\noutput_dir = {}\nscore_min = 0\nscore_max = 3\nseed = {seed}\n\
         epochs = 3\nbatch_size = 4\nembed_dim = 6\nconv_kernel = 2\nconv_filters = 5\n\
         lstm_hidden = 4\nmodeling_hidden = 4\nvocab_size = 80\nmax_sentences = 8\nmax_tokens = 10\n",
        corpus.display(),
        article.display(),
        output_dir.display()
    )
}
