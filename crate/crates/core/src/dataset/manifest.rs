use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{Attribute, Pose};
use crate::error::{Error, Result};
use crate::exec;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub id: String,
    pub subject_id: String,
    pub attribute: Attribute,
    pub pose: Pose,
    pub session: String,
    /// Absolute, or relative to the manifest's directory.
    pub image_path: PathBuf,
}

/// A side-pose record and the frontal record of the same subject and session.
/// The pair is identified by its side record id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacePair {
    pub side: String,
    pub front: String,
}

impl FacePair {
    pub fn id(&self) -> &str {
        &self.side
    }
}

#[derive(Clone, Debug)]
pub struct FacePairManifest {
    pub root: PathBuf,
    pub records: Vec<FaceRecord>,
    pub pairs: Vec<FacePair>,
    pub resolution: usize,
    index: HashMap<String, usize>,
}

#[derive(Debug, Deserialize)]
struct Row {
    id: String,
    subject_id: String,
    attribute: String,
    pose: String,
    session: String,
    image_path: String,
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(Error::Image {
            path: path.to_path_buf(),
            message: "zero-sized image".into(),
        });
    }
    Ok(rgb)
}

/// Reads and validates a manifest CSV
/// (`id,subject_id,attribute,pose,session,image_path`).
///
/// Every referenced image must exist and decode; every side-pose record must
/// have exactly one frontal record with the same subject and session.
pub fn load_manifest(path: &Path) -> Result<FacePairManifest> {
    let row_err = |row: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| row_err(0, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| row_err(1, e.to_string()))?
        .clone();
    let expected = ["id", "subject_id", "attribute", "pose", "session", "image_path"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(row_err(1, format!("header must be `{}`", expected.join(","))));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut records = Vec::new();
    // Line numbers: header is line 1.
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| row_err(line, e.to_string()))?;
        let attribute = row.attribute.parse().map_err(|e: Error| row_err(line, e.to_string()))?;
        let pose = row.pose.parse().map_err(|e: Error| row_err(line, e.to_string()))?;
        if row.id.is_empty() || row.subject_id.is_empty() {
            return Err(row_err(line, "empty id or subject_id".into()));
        }
        records.push((
            line,
            FaceRecord {
                id: row.id,
                subject_id: row.subject_id,
                attribute,
                pose,
                session: row.session,
                image_path: PathBuf::from(row.image_path),
            },
        ));
    }

    let mut index = HashMap::new();
    for (i, (line, r)) in records.iter().enumerate() {
        if index.insert(r.id.clone(), i).is_some() {
            return Err(row_err(*line, format!("duplicate record id `{}`", r.id)));
        }
    }

    let mut fronts: HashMap<(&str, &str), (usize, &FaceRecord)> = HashMap::new();
    for (line, r) in records.iter().filter(|(_, r)| r.pose == Pose::Front) {
        if fronts
            .insert((r.subject_id.as_str(), r.session.as_str()), (*line, r))
            .is_some()
        {
            return Err(row_err(
                *line,
                format!(
                    "second frontal image for subject `{}` session `{}`",
                    r.subject_id, r.session
                ),
            ));
        }
    }

    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (line, r) in records.iter().filter(|(_, r)| r.pose.is_side()) {
        let (_, front) = fronts
            .get(&(r.subject_id.as_str(), r.session.as_str()))
            .ok_or_else(|| {
                row_err(
                    *line,
                    format!(
                        "side record `{}` has no frontal image for subject `{}` session `{}`",
                        r.id, r.subject_id, r.session
                    ),
                )
            })?;
        if front.attribute != r.attribute {
            return Err(row_err(*line, format!("attribute disagrees with frontal record `{}`", front.id)));
        }
        if !seen.insert((r.id.clone(), front.id.clone())) {
            return Err(row_err(*line, "duplicate pair".into()));
        }
        pairs.push(FacePair {
            side: r.id.clone(),
            front: front.id.clone(),
        });
    }

    let resolved: Vec<(usize, PathBuf)> = records
        .iter()
        .map(|(line, r)| (*line, resolve(&root, &r.image_path)))
        .collect();
    for (line, p) in &resolved {
        if !p.is_file() {
            return Err(row_err(*line, format!("image not found: {}", p.display())));
        }
    }
    let dims = exec::map(&resolved, |(line, p)| {
        load_image(p)
            .map(|img| img.width())
            .map_err(|e| row_err(*line, e.to_string()))
    });
    let mut resolution = 0;
    for d in dims {
        let w = d?;
        if resolution == 0 {
            resolution = w as usize;
        }
    }

    Ok(FacePairManifest {
        root,
        records: records.into_iter().map(|(_, r)| r).collect(),
        pairs,
        resolution,
        index,
    })
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

impl FacePairManifest {
    /// Builds a manifest from in-memory records without touching the filesystem.
    pub fn from_records(root: PathBuf, records: Vec<FaceRecord>, resolution: usize) -> Result<Self> {
        let index: HashMap<String, usize> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        if index.len() != records.len() {
            return Err(Error::Invalid("duplicate record ids".into()));
        }
        let mut pairs = Vec::new();
        for r in records.iter().filter(|r| r.pose.is_side()) {
            let front = records
                .iter()
                .find(|f| f.pose == Pose::Front && f.subject_id == r.subject_id && f.session == r.session)
                .ok_or_else(|| Error::Invalid(format!("side record `{}` is unpaired", r.id)))?;
            pairs.push(FacePair {
                side: r.id.clone(),
                front: front.id.clone(),
            });
        }
        Ok(Self {
            root,
            records,
            pairs,
            resolution,
            index,
        })
    }

    pub fn record(&self, id: &str) -> Option<&FaceRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn pair(&self, id: &str) -> Option<&FacePair> {
        self.record(id)?;
        self.pairs.iter().find(|p| p.side == id)
    }

    pub fn image_path(&self, record: &FaceRecord) -> PathBuf {
        resolve(&self.root, &record.image_path)
    }

    pub fn load_record_image(&self, id: &str) -> Result<RgbImage> {
        let r = self
            .record(id)
            .ok_or_else(|| Error::Invalid(format!("unknown record `{id}`")))?;
        load_image(&self.image_path(r))
    }

    /// Attribute of a pair (shared by its two records).
    pub fn pair_attribute(&self, pair: &FacePair) -> Attribute {
        self.record(&pair.side).expect("pair references known record").attribute
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_png(path: &Path, v: u8) {
        RgbImage::from_pixel(4, 4, image::Rgb([v, v, v])).save(path).unwrap();
    }

    fn fixture(rows: &str, images: &[&str]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        for name in images {
            write_png(&dir.path().join(name), 100);
        }
        let path = dir.path().join("manifest.csv");
        fs::write(&path, format!("id,subject_id,attribute,pose,session,image_path\n{rows}")).unwrap();
        (dir, path)
    }

    #[test]
    fn one_subject_three_poses_gives_two_pairs() {
        let rows = "l,s1,A,left,1,l.png\nr,s1,A,right,1,r.png\nf,s1,A,front,1,f.png\nx,s2,B,front,1,x.png\n";
        let (_d, path) = fixture(rows, &["l.png", "r.png", "f.png", "x.png"]);
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.pairs.len(), 2);
        assert_eq!(m.pairs[0], FacePair { side: "l".into(), front: "f".into() });
        assert_eq!(m.resolution, 4);
    }

    #[test]
    fn missing_image_names_the_path() {
        let (_d, path) = fixture("f,s1,A,front,1,gone.png\n", &[]);
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("gone.png"), "{err}");
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn unpaired_side_record_is_rejected() {
        let (_d, path) = fixture("l,s1,A,left,1,l.png\nf,s1,A,front,2,f.png\n", &["l.png", "f.png"]);
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("no frontal image"), "{err}");
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let (_d, path) = fixture("f,s1,C,front,1,f.png\n", &["f.png"]);
        assert!(load_manifest(&path).unwrap_err().to_string().contains("row 2"));
        let (_d, path) = fixture("f,s1,A,up,1,f.png\n", &["f.png"]);
        assert!(load_manifest(&path).is_err());
        let (_d, path) = fixture("f,s1,A\n", &["f.png"]);
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn undecodable_image_is_rejected() {
        let (d, path) = fixture("f,s1,A,front,1,f.png\n", &[]);
        fs::write(d.path().join("f.png"), b"not a png").unwrap();
        assert!(load_manifest(&path).is_err());
    }
}
