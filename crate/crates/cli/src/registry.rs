//! Class-to-weights mapping read from a JSON object such as
//! `{"chair": "weights/chair.bin"}`. Relative paths resolve against the
//! registry file's directory. Weights load on first use and are shared
//! read-only afterwards.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sketchforge::nn::{load_weights, ModelWeights, TemplateMesh};

use crate::error::ServiceError;

pub struct Model {
    pub weights: ModelWeights,
    pub template: TemplateMesh,
}

impl Model {
    pub fn new(weights: ModelWeights) -> Self {
        let template = TemplateMesh::from_config(&weights.config);
        Self { weights, template }
    }
}

#[derive(Default)]
pub struct Registry {
    entries: BTreeMap<String, PathBuf>,
    loaded: Mutex<HashMap<String, Arc<Model>>>,
}

impl Registry {
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ServiceError::BadRequest(format!("registry {}: {e}", path.display())))?;
        let raw: BTreeMap<String, PathBuf> = serde_json::from_slice(&bytes)
            .map_err(|e| ServiceError::BadRequest(format!("registry {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self::from_entries(raw.into_iter().map(|(k, v)| (k, base.join(v)))))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, PathBuf)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
            loaded: Mutex::default(),
        }
    }

    /// Registers already-loaded weights for `class`.
    pub fn insert(&mut self, class: impl Into<String>, weights: ModelWeights) {
        let class = class.into();
        self.entries.remove(&class);
        self.loaded
            .get_mut()
            .unwrap_or_else(|e| e.into_inner())
            .insert(class, Arc::new(Model::new(weights)));
    }

    pub fn classes(&self) -> Vec<String> {
        let loaded = self.loaded.lock().unwrap_or_else(|e| e.into_inner());
        let mut out: Vec<String> = self.entries.keys().chain(loaded.keys()).cloned().collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn get(&self, class: &str) -> Result<Arc<Model>, ServiceError> {
        let mut loaded = self.loaded.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(m) = loaded.get(class) {
            return Ok(m.clone());
        }
        let unknown = |reason: String| ServiceError::UnknownClass {
            class: class.to_string(),
            reason,
        };
        let path = self.entries.get(class).ok_or_else(|| unknown("not in the registry".into()))?;
        let weights = load_weights(path).map_err(|e| unknown(format!("{}: {e}", path.display())))?;
        let model = Arc::new(Model::new(weights));
        loaded.insert(class.to_string(), model.clone());
        Ok(model)
    }
}
