//! Scene-grouped cross-validation folds: all captures of one physical
//! scene (across every camera) land in the same fold, so no test fold
//! shares scene content with its training split.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub n_folds: usize,
    /// scene_id -> fold index.
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSpec {
    pub fn fold_of(&self, scene_id: &str) -> Option<usize> {
        self.assignment.get(scene_id).copied()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Shuffles the distinct scene ids with the given seed and deals them
/// round-robin, so fold sizes differ by at most one scene.
pub fn make_folds(dataset: &[LabeledImage], n_folds: usize, seed: u64) -> Result<FoldSpec> {
    if n_folds < 2 {
        return Err(Error::BadConfig(format!("n_folds must be >= 2, got {n_folds}")));
    }
    let scenes: BTreeSet<&str> = dataset.iter().map(|im| im.scene_id.as_str()).collect();
    if scenes.len() < n_folds {
        return Err(Error::TooFewScenes { needed: n_folds, found: scenes.len(), folds: n_folds });
    }
    let mut ordered: Vec<&str> = scenes.into_iter().collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    ordered.shuffle(&mut rng);
    let assignment = ordered
        .into_iter()
        .enumerate()
        .map(|(i, scene)| (scene.to_string(), i % n_folds))
        .collect();
    Ok(FoldSpec { n_folds, assignment })
}
