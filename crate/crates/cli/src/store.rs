//! On-disk scene store:
//!
//! ```text
//! <root>/scenes/<scene id>/scene.obj
//! <root>/scenes/<scene id>/objects/<object id>.obj
//! <root>/scenes/<scene id>/transforms.json
//! ```
//!
//! Scene meshes never change after creation. Object additions to one scene
//! are serialized; every file is written to a temporary name and renamed.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sketchforge::fusion::{PlacedObject, SceneDocument};
use sketchforge::geometry::{parse_obj, write_obj};
use sketchforge::placement::PlacementTransform;
use sketchforge::Mesh;

use crate::error::ServiceError;

/// One entry of `transforms.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: String,
    pub transform: PlacementTransform,
    pub source: String,
}

pub struct Store {
    root: PathBuf,
    next_scene: AtomicU64,
    next_object: AtomicU64,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    meshes: Mutex<HashMap<String, Arc<Mesh>>>,
}

const SCENE_PREFIX: &str = "scene-";
const OBJECT_PREFIX: &str = "obj-";

fn counter_after(names: impl Iterator<Item = String>, prefix: &str) -> u64 {
    names
        .filter_map(|n| n.strip_prefix(prefix)?.trim_end_matches(".obj").parse::<u64>().ok())
        .max()
        .map_or(1, |m| m + 1)
}

fn dir_names(dir: &Path) -> std::io::Result<Vec<String>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Store {
    /// Opens (creating if needed) the store at `root`. Id counters resume
    /// after the largest ids already present.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        let scenes = root.join("scenes");
        std::fs::create_dir_all(&scenes)?;
        let scene_names = dir_names(&scenes)?;
        let mut object_names = Vec::new();
        for s in &scene_names {
            object_names.extend(dir_names(&scenes.join(s).join("objects"))?);
        }
        Ok(Self {
            next_scene: AtomicU64::new(counter_after(scene_names.into_iter(), SCENE_PREFIX)),
            next_object: AtomicU64::new(counter_after(object_names.into_iter(), OBJECT_PREFIX)),
            root,
            locks: Mutex::new(HashMap::new()),
            meshes: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn scene_dir(&self, id: &str) -> Result<PathBuf, ServiceError> {
        let dir = self.root.join("scenes").join(id);
        if valid_id(id) && dir.join("scene.obj").is_file() {
            Ok(dir)
        } else {
            Err(ServiceError::UnknownScene(id.to_string()))
        }
    }

    fn scene_lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.scene_dir(id).is_ok()
    }

    /// Stores `mesh` as a new scene and returns its id.
    pub fn create_scene(&self, mesh: &Mesh) -> Result<String, ServiceError> {
        if mesh.is_empty() {
            return Err(ServiceError::BadRequest("scene mesh has no faces".into()));
        }
        let id = format!("{SCENE_PREFIX}{:04}", self.next_scene.fetch_add(1, Ordering::SeqCst));
        let dir = self.root.join("scenes").join(&id);
        std::fs::create_dir_all(dir.join("objects"))?;
        write_atomic(&dir.join("transforms.json"), b"[]")?;
        write_atomic(&dir.join("scene.obj"), write_obj(mesh).as_bytes())?;
        Ok(id)
    }

    /// The scene's own mesh, cached after the first read.
    pub fn scene_mesh(&self, id: &str) -> Result<Arc<Mesh>, ServiceError> {
        if let Some(m) = self.meshes.lock().unwrap_or_else(|e| e.into_inner()).get(id) {
            return Ok(m.clone());
        }
        let text = std::fs::read_to_string(self.scene_dir(id)?.join("scene.obj"))?;
        let mesh = Arc::new(parse_obj(&text).map_err(|e| ServiceError::Internal(e.to_string()))?);
        self.meshes
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.to_string(), mesh.clone());
        Ok(mesh)
    }

    pub fn scene_obj(&self, id: &str) -> Result<String, ServiceError> {
        Ok(std::fs::read_to_string(self.scene_dir(id)?.join("scene.obj"))?)
    }

    fn read_records(dir: &Path) -> Result<Vec<ObjectRecord>, ServiceError> {
        let bytes = std::fs::read(dir.join("transforms.json"))?;
        serde_json::from_slice(&bytes).map_err(|e| ServiceError::Internal(format!("transforms.json: {e}")))
    }

    pub fn objects(&self, id: &str) -> Result<Vec<ObjectRecord>, ServiceError> {
        Self::read_records(&self.scene_dir(id)?)
    }

    /// Scene mesh plus every stored object, in insertion order.
    pub fn load_scene(&self, id: &str) -> Result<SceneDocument, ServiceError> {
        let dir = self.scene_dir(id)?;
        let mut doc = SceneDocument::new(id, (*self.scene_mesh(id)?).clone());
        for r in Self::read_records(&dir)? {
            let text = std::fs::read_to_string(dir.join("objects").join(format!("{}.obj", r.id)))?;
            doc.objects.push(PlacedObject {
                mesh: parse_obj(&text).map_err(|e| ServiceError::Internal(e.to_string()))?,
                id: r.id,
                transform: r.transform,
                source: r.source,
            });
        }
        Ok(doc)
    }

    pub fn merged_obj(&self, id: &str) -> Result<String, ServiceError> {
        Ok(write_obj(&self.load_scene(id)?.merged_mesh()))
    }

    /// Appends an object to a scene and returns its new id.
    pub fn add_object(
        &self,
        scene: &str,
        mesh: &Mesh,
        transform: PlacementTransform,
        source: &str,
    ) -> Result<String, ServiceError> {
        transform.validate()?;
        let dir = self.scene_dir(scene)?;
        let lock = self.scene_lock(scene);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let id = format!("{OBJECT_PREFIX}{:06}", self.next_object.fetch_add(1, Ordering::SeqCst));
        write_atomic(&dir.join("objects").join(format!("{id}.obj")), write_obj(mesh).as_bytes())?;
        let mut records = Self::read_records(&dir)?;
        records.push(ObjectRecord {
            id: id.clone(),
            transform,
            source: source.to_string(),
        });
        let json = serde_json::to_vec_pretty(&records).map_err(|e| ServiceError::Internal(e.to_string()))?;
        write_atomic(&dir.join("transforms.json"), &json)?;
        Ok(id)
    }
}
