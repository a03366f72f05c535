use std::path::PathBuf;

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::GatewayError;

/// One recorded exchange, stored as `<cache_dir>/<fingerprint>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture<Req, Resp> {
    pub request: Req,
    pub response: Resp,
    pub fingerprint: String,
    pub recorded_at: String,
}

impl<Req, Resp> Fixture<Req, Resp> {
    pub fn new(request: Req, response: Resp, fingerprint: String) -> Self {
        Self {
            request,
            response,
            fingerprint,
            recorded_at: chrono::Utc::now().to_rfc3339(),
        }
    }
}

/// Content-addressed fixture directory. Writes are serialized and atomic.
#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    pub fn open(dir: PathBuf) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(&dir)
            .map_err(|e| GatewayError::Store(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn path_for(&self, fingerprint: &str) -> PathBuf {
        self.dir.join(format!("{fingerprint}.json"))
    }

    pub fn load<Req: DeserializeOwned, Resp: DeserializeOwned>(
        &self,
        fingerprint: &str,
    ) -> Result<Option<Fixture<Req, Resp>>, GatewayError> {
        let path = self.path_for(fingerprint);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Store(format!("{}: {e}", path.display()))),
        };
        let fx: Fixture<Req, Resp> = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
        if fx.fingerprint != fingerprint {
            return Err(GatewayError::Store(format!(
                "{}: fingerprint field {} does not match file name",
                path.display(),
                fx.fingerprint
            )));
        }
        Ok(Some(fx))
    }

    pub fn save<Req: Serialize, Resp: Serialize>(
        &self,
        fixture: &Fixture<Req, Resp>,
    ) -> Result<(), GatewayError> {
        let path = self.path_for(&fixture.fingerprint);
        let text = serde_json::to_string_pretty(fixture)
            .map_err(|e| GatewayError::Store(e.to_string()))?;
        let _guard = self.write_lock.lock();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, &path))
            .map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))
    }
}
