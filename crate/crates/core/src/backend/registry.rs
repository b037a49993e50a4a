use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::{Backend, BackendError, MockBackend, ProcessTransport, RemoteBackend, Result};

/// Environment variable naming a JSON file of extra (remote) backends.
pub const REGISTRY_ENV: &str = "FACTFILTER_BACKENDS";

pub type BackendFactory = Arc<dyn Fn() -> Result<Arc<dyn Backend>> + Send + Sync>;

/// Named backend constructors.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

/// One entry of a registry file:
///
/// ```json
/// {"backends": {"bart-large": {"command": ["python", "serve.py"],
///                              "config": {"embedding_layer": 17}}}}
/// ```
///
/// `config` is sent verbatim as a `configure` request after start-up. Real
/// model servers conventionally accept `embedding_layer`, `idf` and
/// `rescale_with_baseline` for the greedy-precision embedder; none of these
/// has a documented reference value, so servers pick their own defaults.
#[derive(Debug, Deserialize)]
struct RemoteEntry {
    command: Vec<String>,
    #[serde(default)]
    config: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    backends: BTreeMap<String, RemoteEntry>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry with the built-in `mock` backend.
    pub fn with_builtin() -> Self {
        let mut reg = Self::new();
        reg.register("mock", Arc::new(|| Ok(Arc::new(MockBackend::default()) as Arc<dyn Backend>)));
        reg
    }

    /// Built-ins plus whatever the file named by [`REGISTRY_ENV`] declares.
    pub fn from_env() -> Result<Self> {
        let mut reg = Self::with_builtin();
        if let Some(path) = std::env::var_os(REGISTRY_ENV) {
            reg.load_file(Path::new(&path))?;
        }
        Ok(reg)
    }

    pub fn register(&mut self, id: impl Into<String>, factory: BackendFactory) {
        self.factories.insert(id.into(), factory);
    }

    pub fn contains(&self, id: &str) -> bool {
        self.factories.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, id: &str) -> Result<Arc<dyn Backend>> {
        let factory = self
            .factories
            .get(id)
            .ok_or_else(|| BackendError::Unknown(id.to_string()))?;
        factory()
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let file: RegistryFile = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        for (id, entry) in file.backends {
            if entry.command.is_empty() {
                return Err(BackendError::Config(format!("backend `{id}` has an empty command")));
            }
            let RemoteEntry { command, config } = entry;
            self.register(
                id,
                Arc::new(move || {
                    let transport = ProcessTransport::spawn(&command)?;
                    let remote = RemoteBackend::connect(Box::new(transport), config.clone())?;
                    Ok(Arc::new(remote) as Arc<dyn Backend>)
                }),
            );
        }
        Ok(())
    }
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}
