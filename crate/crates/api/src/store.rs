use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Whole-file JSON persistence with atomic replace.
#[derive(Debug, Clone)]
pub(crate) struct JsonFile {
    path: Option<PathBuf>,
}

impl JsonFile {
    pub fn new(path: Option<PathBuf>) -> Self {
        Self { path }
    }

    pub fn load<T: DeserializeOwned + Default>(&self) -> std::io::Result<T> {
        let Some(path) = &self.path else { return Ok(T::default()) };
        if !path.exists() {
            return Ok(T::default());
        }
        let text = std::fs::read(path)?;
        serde_json::from_slice(&text).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))
        })
    }

    pub fn save<T: Serialize>(&self, value: &T) -> std::io::Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(value).expect("serialization is infallible"))?;
        std::fs::rename(&tmp, path)
    }
}
