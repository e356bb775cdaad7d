use std::collections::HashMap;
use std::fs;
use std::io::Cursor;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Attribute;
use crate::error::{Error, IoContext, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceAnalysisResult {
    pub face_detected: bool,
    pub attribute: Option<Attribute>,
    pub confidence: f64,
}

impl FaceAnalysisResult {
    pub fn no_face() -> Self {
        Self {
            face_detected: false,
            attribute: None,
            confidence: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    RemoteApi,
    Stub,
}

/// Something that can look at an image and report a face and its attribute.
pub trait FaceAnalysisClient: Send + Sync {
    fn kind(&self) -> ClientKind;

    fn analyze(&self, image: &RgbImage) -> Result<FaceAnalysisResult>;

    /// Analyses actually performed (cache hits excluded).
    fn calls(&self) -> usize {
        0
    }
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Analysis(format!("png encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

/// Hex SHA-256 of the image's PNG encoding.
pub fn content_key(image: &RgbImage) -> Result<String> {
    Ok(hex::encode(Sha256::digest(encode_png(image)?)))
}

/// Memoizes another client by image content, optionally persisting results
/// as `<dir>/<sha256>.json`. Failures are never cached.
pub struct CachedClient<C> {
    inner: C,
    memory: Mutex<HashMap<String, FaceAnalysisResult>>,
    dir: Option<PathBuf>,
    misses: AtomicUsize,
}

impl<C: FaceAnalysisClient> CachedClient<C> {
    pub fn new(inner: C, dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).at(d)?;
        }
        Ok(Self {
            inner,
            memory: Mutex::new(HashMap::new()),
            dir,
            misses: AtomicUsize::new(0),
        })
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: FaceAnalysisClient> FaceAnalysisClient for CachedClient<C> {
    fn kind(&self) -> ClientKind {
        self.inner.kind()
    }

    fn analyze(&self, image: &RgbImage) -> Result<FaceAnalysisResult> {
        let key = content_key(image)?;
        if let Some(r) = self.memory.lock().unwrap().get(&key) {
            return Ok(*r);
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{key}.json"));
            if let Ok(bytes) = fs::read(&path) {
                if let Ok(r) = serde_json::from_slice::<FaceAnalysisResult>(&bytes) {
                    self.memory.lock().unwrap().insert(key, r);
                    return Ok(r);
                }
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let r = self.inner.analyze(image)?;
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{key}.json"));
            fs::write(&path, serde_json::to_vec(&r)?).at(&path)?;
        }
        self.memory.lock().unwrap().insert(key, r);
        Ok(r)
    }

    fn calls(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

impl<T: FaceAnalysisClient + ?Sized> FaceAnalysisClient for Box<T> {
    fn kind(&self) -> ClientKind {
        (**self).kind()
    }

    fn analyze(&self, image: &RgbImage) -> Result<FaceAnalysisResult> {
        (**self).analyze(image)
    }

    fn calls(&self) -> usize {
        (**self).calls()
    }
}
