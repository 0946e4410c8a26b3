//! Generation state: the partially masked sequence, its unmasked-index set and
//! the confidence ledger recording how sure the sampler was when each token
//! was committed.
//!
//! All indices are relative to the generation region. The prompt is carried
//! along for backends that need it but never takes part in thresholding or
//! remasking.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::StateError;

/// Opaque token id.
pub type TokenId = u32;

/// Vocabulary size and the id reserved for the mask sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    size: u32,
    mask_id: TokenId,
}

impl VocabSpec {
    pub fn new(size: u32, mask_id: TokenId) -> Result<Self, StateError> {
        if size < 2 {
            return Err(StateError::Input(format!(
                "vocabulary size must be at least 2, got {size}"
            )));
        }
        if mask_id >= size {
            return Err(StateError::Input(format!(
                "mask id {mask_id} outside vocabulary of size {size}"
            )));
        }
        Ok(Self { size, mask_id })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn contains(&self, token: TokenId) -> bool {
        token < self.size
    }
}

/// A fixed-length masked sequence under generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceState {
    vocab: VocabSpec,
    prompt: Vec<TokenId>,
    gen: Vec<TokenId>,
    unmasked: BTreeSet<usize>,
    ledger: BTreeMap<usize, f64>,
    step: u64,
}

impl SequenceState {
    /// Creates an all-masked generation region of `gen_length` positions.
    pub fn new(
        prompt: Vec<TokenId>,
        gen_length: usize,
        vocab: VocabSpec,
    ) -> Result<Self, StateError> {
        if gen_length == 0 {
            return Err(StateError::Input("gen_length must be at least 1".into()));
        }
        if let Some((pos, &tok)) = prompt.iter().enumerate().find(|(_, &t)| !vocab.contains(t)) {
            return Err(StateError::Input(format!(
                "prompt token {tok} at position {pos} outside vocabulary of size {}",
                vocab.size()
            )));
        }
        Ok(Self {
            vocab,
            prompt,
            gen: vec![vocab.mask_id(); gen_length],
            unmasked: BTreeSet::new(),
            ledger: BTreeMap::new(),
            step: 0,
        })
    }

    pub fn vocab(&self) -> VocabSpec {
        self.vocab
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.prompt
    }

    pub fn gen(&self) -> &[TokenId] {
        &self.gen
    }

    pub fn len(&self) -> usize {
        self.gen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gen.is_empty()
    }

    pub fn unmasked(&self) -> &BTreeSet<usize> {
        &self.unmasked
    }

    pub fn ledger(&self) -> &BTreeMap<usize, f64> {
        &self.ledger
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_masked(&self, index: usize) -> bool {
        index < self.gen.len() && !self.unmasked.contains(&index)
    }

    /// Masked indices in ascending order.
    pub fn masked_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.gen.len()).filter(move |i| !self.unmasked.contains(i))
    }

    pub fn masked_count(&self) -> usize {
        self.gen.len() - self.unmasked.len()
    }

    pub fn is_complete(&self) -> bool {
        self.unmasked.len() == self.gen.len()
    }

    /// Commits `token` at a masked position, recording `confidence` in the ledger.
    pub fn apply_unmask(
        &mut self,
        index: usize,
        token: TokenId,
        confidence: f64,
    ) -> Result<(), StateError> {
        self.check_index(index)?;
        if token == self.vocab.mask_id() {
            return Err(StateError::Input(format!(
                "cannot unmask position {index} with the mask sentinel"
            )));
        }
        if !self.vocab.contains(token) {
            return Err(StateError::Input(format!(
                "token {token} outside vocabulary of size {}",
                self.vocab.size()
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(StateError::Input(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        if self.unmasked.contains(&index) {
            return Err(StateError::AlreadyUnmasked(index));
        }
        self.gen[index] = token;
        self.unmasked.insert(index);
        self.ledger.insert(index, confidence);
        Ok(())
    }

    /// Reverts an unmasked position to the mask sentinel and drops its ledger entry.
    pub fn apply_remask(&mut self, index: usize) -> Result<(), StateError> {
        self.check_index(index)?;
        if !self.unmasked.remove(&index) {
            return Err(StateError::NotUnmasked(index));
        }
        self.gen[index] = self.vocab.mask_id();
        self.ledger.remove(&index);
        Ok(())
    }

    /// Mean of the ledger confidences, `None` when nothing is unmasked.
    pub fn ledger_mean(&self) -> Option<f64> {
        compensated_mean(self.ledger.values().copied())
    }

    pub(crate) fn advance_step(&mut self) {
        self.step += 1;
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Same tokens, same unmasked set, same step, and ledger confidences
    /// equal within `tol`.
    pub fn matches(&self, other: &Self, tol: f64) -> bool {
        self.vocab == other.vocab
            && self.prompt == other.prompt
            && self.gen == other.gen
            && self.unmasked == other.unmasked
            && self.step == other.step
            && self.ledger.len() == other.ledger.len()
            && self
                .ledger
                .iter()
                .zip(other.ledger.iter())
                .all(|((i, a), (j, b))| i == j && (a - b).abs() <= tol)
    }

    fn check_index(&self, index: usize) -> Result<(), StateError> {
        if index >= self.gen.len() {
            return Err(StateError::Input(format!(
                "index {index} outside generation region of length {}",
                self.gen.len()
            )));
        }
        Ok(())
    }
}

/// Neumaier-compensated arithmetic mean.
pub(crate) fn compensated_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut n = 0usize;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
        n += 1;
    }
    (n > 0).then(|| (sum + comp) / n as f64)
}
