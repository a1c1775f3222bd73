//! Loader for whitespace-separated text embeddings (GloVe layout: a token
//! followed by its vector components, one entry per line).

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::vocab::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Half-width of the uniform range for rows missing from the file.
pub const RANDOM_INIT_RANGE: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct PretrainedEmbeddings<T> {
    /// `vocab.len() × dim`
    pub matrix: Tensor<T>,
    /// Fraction of non-reserved vocabulary entries found in the file.
    pub coverage: f64,
}

/// Random `rows × dim` embedding table in `[−0.05, 0.05]` with a zero PAD row.
pub fn random_embeddings<T: Float, R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Tensor<T> {
    let data = (0..rows * dim)
        .map(|i| {
            let v = rng.gen_range(-RANDOM_INIT_RANGE..=RANDOM_INIT_RANGE);
            if i / dim == PAD_ID as usize {
                T::zero()
            } else {
                T::from_f64_lossy(v)
            }
        })
        .collect();
    Tensor::new(&[rows, dim], data).expect("shape matches data")
}

pub fn load_embeddings<T: Float, R: Rng>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<PretrainedEmbeddings<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut matrix = random_embeddings::<T, R>(vocab.len(), dim, rng);
    let mut found = vec![false; vocab.len()];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if !vocab.contains(token) {
            continue;
        }
        let id = vocab.id(token) as usize;
        if id == PAD_ID as usize || found[id] {
            continue;
        }
        let row = &mut matrix.data_mut()[id * dim..(id + 1) * dim];
        for (slot, raw) in row.iter_mut().zip(&values) {
            *slot = T::parse_value(raw).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("`{raw}` is not a number"),
            })?;
        }
        found[id] = true;
    }
    let words = vocab.len().saturating_sub(2).max(1);
    let coverage = found.iter().skip(2).filter(|&&f| f).count() as f64 / words as f64;
    Ok(PretrainedEmbeddings { matrix, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(vec!["<pad>".into(), "<unk>".into(), "the".into()]).unwrap()
    }

    #[test]
    fn loads_known_rows() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cat 9 9 9").unwrap();
        writeln!(f, "the 0.1 -0.2 0.3").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = load_embeddings::<f64, _>(f.path(), &vocab(), 3, &mut rng).unwrap();
        assert_eq!(e.matrix.row(2), &[0.1, -0.2, 0.3]);
        assert_eq!(e.matrix.row(0), &[0.0, 0.0, 0.0]);
        assert!(e.matrix.row(1).iter().all(|v| v.abs() <= 0.05));
        assert_eq!(e.coverage, 1.0);
    }

    #[test]
    fn empty_file_gives_random_rows() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = load_embeddings::<f32, _>(f.path(), &vocab(), 4, &mut rng).unwrap();
        assert_eq!(e.coverage, 0.0);
        assert_eq!(e.matrix.row(0), &[0.0; 4]);
        assert!(e.matrix.row(2).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn wrong_width_is_parse_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "the {}", vec!["0.5"; 50].join(" ")).unwrap();
        writeln!(f, "a {}", vec!["0.5"; 49].join(" ")).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        match load_embeddings::<f32, _>(f.path(), &vocab(), 50, &mut rng) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
