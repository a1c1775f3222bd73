use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One scored essay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EssayRecord {
    pub essay_id: String,
    pub prompt_id: String,
    pub text: String,
    pub gold_score: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    /// Header `essay_id\tprompt_id\tscore\ttext`, one essay per line.
    #[default]
    CanonicalTsv,
    /// The public ASAP release (`essay_id`, `essay_set`, `essay`, `domain1_score`).
    AsapTsv,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical_tsv" | "canonical" => Ok(Self::CanonicalTsv),
            "asap_tsv" | "asap" => Ok(Self::AsapTsv),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CanonicalTsv => "canonical_tsv",
            Self::AsapTsv => "asap_tsv",
        })
    }
}

pub const CANONICAL_HEADER: [&str; 4] = ["essay_id", "prompt_id", "score", "text"];

/// Inclusive integer score range of a prompt, and the map to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreScale {
    min: i64,
    max: i64,
}

impl ScoreScale {
    pub fn new(min: i64, max: i64) -> Result<Self> {
        if max <= min {
            return Err(Error::Validation(format!("score range [{min}, {max}] is empty")));
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> i64 {
        self.min
    }

    pub fn max(&self) -> i64 {
        self.max
    }

    pub fn contains(&self, score: i64) -> bool {
        (self.min..=self.max).contains(&score)
    }

    /// `(score − min) / (max − min)`.
    pub fn scale(&self, score: i64) -> Result<f64> {
        if !self.contains(score) {
            return Err(Error::Validation(format!(
                "score {score} outside [{}, {}]",
                self.min, self.max
            )));
        }
        Ok((score - self.min) as f64 / (self.max - self.min) as f64)
    }

    /// Inverse of [`scale`](Self::scale), rounding half up and clamping.
    pub fn unscale(&self, y: f64) -> Result<i64> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Validation(format!("scaled score {y} outside [0, 1]")));
        }
        let steps = (y * (self.max - self.min) as f64 + 0.5).floor() as i64;
        Ok((steps + self.min).clamp(self.min, self.max))
    }
}

/// Reads a corpus file. `prompt` keeps only that prompt's essays; `scale`
/// rejects any score outside the range.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    prompt: Option<&str>,
    scale: Option<ScoreScale>,
) -> Result<Vec<EssayRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = match format {
        CorpusFormat::CanonicalTsv => {
            let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("not UTF-8: {e}"),
            })?;
            parse_canonical(path, &text)?
        }
        // The public ASAP release is not valid UTF-8; fall back to Latin-1.
        CorpusFormat::AsapTsv => {
            let text = String::from_utf8(bytes).unwrap_or_else(|e| e.into_bytes().iter().map(|&b| b as char).collect());
            parse_asap(path, &text)?
        }
    };
    let records: Vec<EssayRecord> = records
        .into_iter()
        .filter(|r| prompt.is_none_or(|p| r.prompt_id == p))
        .collect();
    if let Some(scale) = scale {
        if let Some(bad) = records.iter().find(|r| !scale.contains(r.gold_score)) {
            return Err(Error::Validation(format!(
                "essay {} has score {} outside [{}, {}]",
                bad.essay_id,
                bad.gold_score,
                scale.min(),
                scale.max()
            )));
        }
    }
    Ok(records)
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_canonical(path: &Path, text: &str) -> Result<Vec<EssayRecord>> {
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.trim_end_matches('\r').split('\t').collect(),
        None => return Err(parse_error(path, 1, "missing header row")),
    };
    if header != CANONICAL_HEADER {
        return Err(parse_error(
            path,
            1,
            format!("header must be {}", CANONICAL_HEADER.join("\\t")),
        ));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        let [id, prompt, score, text] = fields[..] else {
            return Err(parse_error(
                path,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        };
        let gold_score = score
            .trim()
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("score `{score}` is not an integer")))?;
        out.push(EssayRecord {
            essay_id: id.to_string(),
            prompt_id: prompt.to_string(),
            text: text.to_string(),
            gold_score,
        });
    }
    Ok(out)
}

fn parse_asap(path: &Path, text: &str) -> Result<Vec<EssayRecord>> {
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.trim_end_matches('\r').split('\t').map(str::trim).collect(),
        None => return Err(parse_error(path, 1, "missing header row")),
    };
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| parse_error(path, 1, format!("missing column `{name}`")))
    };
    let (c_id, c_set, c_essay, c_score) = (
        col("essay_id")?,
        col("essay_set")?,
        col("essay")?,
        col("domain1_score")?,
    );
    let needed = c_id.max(c_set).max(c_essay).max(c_score) + 1;
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < needed {
            return Err(parse_error(
                path,
                lineno,
                format!("expected at least {needed} fields, found {}", fields.len()),
            ));
        }
        let score = fields[c_score].trim();
        let gold_score = score
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("score `{score}` is not an integer")))?;
        out.push(EssayRecord {
            essay_id: fields[c_id].trim().to_string(),
            prompt_id: fields[c_set].trim().to_string(),
            text: fields[c_essay].trim().trim_matches('"').to_string(),
            gold_score,
        });
    }
    Ok(out)
}
