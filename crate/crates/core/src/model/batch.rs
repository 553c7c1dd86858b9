use crate::error::{Error, Result};

/// Reserved token ids shared by every vocabulary.
pub mod special {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;
    pub const COUNT: usize = 4;
}

/// Padded source/target id grids for one training step.
///
/// Source rows end with EOS; target rows are `BOS y_1 .. y_n EOS`. The
/// decoder reads `target_ids[.., ..T-1]` and predicts `target_ids[.., 1..]`,
/// so a batch has `target_len - 1` prediction positions per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub batch_size: usize,
    pub source_len: usize,
    pub target_len: usize,
    pub source_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub source_mask: Vec<bool>,
    pub target_mask: Vec<bool>,
}

impl Batch {
    /// Pads already-framed sequences into a batch.
    pub fn from_sequences(sources: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<Self> {
        if sources.is_empty() || sources.len() != targets.len() {
            return Err(Error::Validation(format!(
                "batch needs equally many (>0) sources and targets, got {} and {}",
                sources.len(),
                targets.len()
            )));
        }
        for (i, (s, t)) in sources.iter().zip(targets).enumerate() {
            if s.is_empty() {
                return Err(Error::Validation(format!("row {i} has an empty source")));
            }
            if t.len() < 2 || t[0] != special::BOS {
                return Err(Error::Validation(format!(
                    "row {i} target must start with BOS and predict at least one token"
                )));
            }
            if s.contains(&special::PAD) || t.contains(&special::PAD) {
                return Err(Error::Validation(format!("row {i} contains PAD inside its span")));
            }
        }
        let batch_size = sources.len();
        let source_len = sources.iter().map(Vec::len).max().unwrap_or(0);
        let target_len = targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut batch = Self {
            batch_size,
            source_len,
            target_len,
            source_ids: vec![special::PAD; batch_size * source_len],
            target_ids: vec![special::PAD; batch_size * target_len],
            source_mask: vec![false; batch_size * source_len],
            target_mask: vec![false; batch_size * target_len],
        };
        for (b, (s, t)) in sources.iter().zip(targets).enumerate() {
            for (j, &id) in s.iter().enumerate() {
                batch.source_ids[b * source_len + j] = id;
                batch.source_mask[b * source_len + j] = true;
            }
            for (j, &id) in t.iter().enumerate() {
                batch.target_ids[b * target_len + j] = id;
                batch.target_mask[b * target_len + j] = true;
            }
        }
        Ok(batch)
    }

    /// Prediction positions per row.
    pub fn num_positions(&self) -> usize {
        self.target_len - 1
    }

    pub fn source_row(&self, b: usize) -> Vec<usize> {
        (0..self.source_len)
            .filter(|&j| self.source_mask[b * self.source_len + j])
            .map(|j| self.source_ids[b * self.source_len + j])
            .collect()
    }

    pub fn target_row(&self, b: usize) -> Vec<usize> {
        (0..self.target_len)
            .filter(|&j| self.target_mask[b * self.target_len + j])
            .map(|j| self.target_ids[b * self.target_len + j])
            .collect()
    }

    /// The single row `b` as its own unpadded batch.
    pub fn row(&self, b: usize) -> Result<Batch> {
        Batch::from_sequences(&[self.source_row(b)], &[self.target_row(b)])
    }

    pub fn num_source_tokens(&self) -> usize {
        self.source_mask.iter().filter(|&&m| m).count()
    }

    pub fn num_target_tokens(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }

    /// Ground-truth ids for every prediction position.
    pub fn targets(&self) -> Targets {
        let cols = self.num_positions();
        let mut ids = Vec::with_capacity(self.batch_size * cols);
        let mut valid = Vec::with_capacity(self.batch_size * cols);
        for b in 0..self.batch_size {
            for t in 1..self.target_len {
                let i = b * self.target_len + t;
                ids.push(self.target_ids[i]);
                valid.push(self.target_mask[i]);
            }
        }
        Targets {
            rows: self.batch_size,
            cols,
            ids,
            valid,
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let bad = self
            .source_ids
            .iter()
            .chain(&self.target_ids)
            .find(|&&id| id >= vocab_size);
        if let Some(id) = bad {
            return Err(Error::Validation(format!(
                "token id {id} outside vocabulary of size {vocab_size}"
            )));
        }
        Ok(())
    }
}

/// Ground-truth token per prediction position, plus validity flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Targets {
    pub rows: usize,
    pub cols: usize,
    pub ids: Vec<usize>,
    pub valid: Vec<bool>,
}

impl Targets {
    pub fn new(rows: usize, cols: usize, ids: Vec<usize>, valid: Vec<bool>) -> Result<Self> {
        if ids.len() != rows * cols || valid.len() != rows * cols {
            return Err(Error::Dimension {
                op: "targets",
                left: vec![rows, cols],
                right: vec![ids.len(), valid.len()],
            });
        }
        if (0..rows).any(|r| !valid[r * cols..(r + 1) * cols].iter().any(|&v| v)) {
            return Err(Error::Validation("every row needs a valid position".into()));
        }
        Ok(Self {
            rows,
            cols,
            ids,
            valid,
        })
    }

    /// Every position valid.
    pub fn dense(rows: usize, cols: usize, ids: Vec<usize>) -> Result<Self> {
        Self::new(rows, cols, ids, vec![true; rows * cols])
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_and_targets() {
        let b = Batch::from_sequences(
            &[vec![5, 6, special::EOS], vec![7, special::EOS]],
            &[vec![1, 8, 9, 2], vec![1, 8, 2]],
        )
        .unwrap();
        assert_eq!(b.source_len, 3);
        assert_eq!(b.target_len, 4);
        assert_eq!(b.source_ids, vec![5, 6, 2, 7, 2, 0]);
        let t = b.targets();
        assert_eq!(t.ids, vec![8, 9, 2, 8, 2, 0]);
        assert_eq!(t.valid, vec![true, true, true, true, true, false]);
        assert_eq!(b.row(1).unwrap().target_ids, vec![1, 8, 2]);
    }

    #[test]
    fn rejects_targets_without_bos() {
        assert!(Batch::from_sequences(&[vec![5, 2]], &[vec![8, 2]]).is_err());
        assert!(Batch::from_sequences(&[vec![5, 2]], &[vec![1]]).is_err());
        assert!(Batch::from_sequences(&[vec![5, 0, 2]], &[vec![1, 2]]).is_err());
    }
}
