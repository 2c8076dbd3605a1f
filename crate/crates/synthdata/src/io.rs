//! Dataset files.
//!
//! A split file is `b"CALD"`, a version byte, the sample count as u64 LE,
//! then per sample: class, identity flag, identity, the four box
//! coordinates, background id and part count as u64 LE, each part center
//! as two f64 LE, and the image as a tensor record.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use cal_tensor::{read_u64, Tensor, TensorError};

use crate::error::{Result, SynthError};
use crate::generate::{BBox, RetrievalSplit, SyntheticSample};
use crate::spec::DatasetSpec;

pub const DATASET_MAGIC: &[u8; 4] = b"CALD";
pub const DATASET_VERSION: u8 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";

fn u64le<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub fn write_dataset<W: Write>(samples: &[SyntheticSample], w: &mut W) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&[DATASET_VERSION])?;
    u64le(w, samples.len() as u64)?;
    for s in samples {
        u64le(w, s.class_label as u64)?;
        u64le(w, s.identity_label.is_some() as u64)?;
        u64le(w, s.identity_label.unwrap_or(0) as u64)?;
        let b = s.object_bbox;
        for v in [
            b.x0,
            b.y0,
            b.x1,
            b.y1,
            s.background_id,
            s.part_centers.len(),
        ] {
            u64le(w, v as u64)?;
        }
        for &(x, y) in &s.part_centers {
            w.write_all(&x.to_le_bytes())?;
            w.write_all(&y.to_le_bytes())?;
        }
        s.image.write_to(w)?;
    }
    Ok(())
}

fn format_err(e: TensorError) -> SynthError {
    match e {
        TensorError::Format { offset, reason } => SynthError::Format { offset, reason },
        other => other.into(),
    }
}

fn field<R: Read>(r: &mut R, offset: &mut u64, what: &str) -> Result<u64> {
    read_u64(r, offset, what).map_err(format_err)
}

fn index<R: Read>(r: &mut R, offset: &mut u64, what: &str) -> Result<usize> {
    let at = *offset;
    let v = field(r, offset, what)?;
    usize::try_from(v).map_err(|_| SynthError::Format {
        offset: at,
        reason: format!("{what} {v} does not fit in memory"),
    })
}

/// Reads a whole split; any defect yields an error naming its byte offset.
pub fn read_dataset<R: Read>(r: &mut R) -> Result<Vec<SyntheticSample>> {
    let mut offset = 0u64;
    let mut head = [0u8; 5];
    let mut filled = 0;
    while filled < head.len() {
        let n = r.read(&mut head[filled..])?;
        if n == 0 {
            return Err(SynthError::Format {
                offset: filled as u64,
                reason: "truncated header".into(),
            });
        }
        filled += n;
    }
    if &head[..4] != DATASET_MAGIC {
        return Err(SynthError::Format {
            offset: 0,
            reason: format!("bad magic {:?}, expected \"CALD\"", &head[..4]),
        });
    }
    if head[4] != DATASET_VERSION {
        return Err(SynthError::Format {
            offset: 4,
            reason: format!("unsupported version {}", head[4]),
        });
    }
    offset += 5;
    let count = index(r, &mut offset, "sample count")?;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let class_label = index(r, &mut offset, "class label")?;
        let flag_at = offset;
        let has_identity = field(r, &mut offset, "identity flag")?;
        let identity = index(r, &mut offset, "identity label")?;
        let identity_label = match has_identity {
            0 => None,
            1 => Some(identity),
            other => {
                return Err(SynthError::Format {
                    offset: flag_at,
                    reason: format!("identity flag {other} is neither 0 nor 1"),
                })
            }
        };
        let box_at = offset;
        let mut coords = [0usize; 4];
        for c in &mut coords {
            *c = index(r, &mut offset, "box coordinate")?;
        }
        let object_bbox = BBox::new(coords[0], coords[1], coords[2], coords[3]).map_err(|e| {
            SynthError::Format {
                offset: box_at,
                reason: e.to_string(),
            }
        })?;
        let background_id = index(r, &mut offset, "background id")?;
        let parts = index(r, &mut offset, "part count")?;
        let mut part_centers = Vec::with_capacity(parts.min(64));
        for _ in 0..parts {
            let x = f64::from_bits(field(r, &mut offset, "part center")?);
            let y = f64::from_bits(field(r, &mut offset, "part center")?);
            part_centers.push((x, y));
        }
        let image = Tensor::read_from(r, &mut offset).map_err(format_err)?;
        samples.push(SyntheticSample {
            image,
            class_label,
            identity_label,
            object_bbox,
            part_centers,
            background_id,
        });
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(SynthError::Format {
            offset,
            reason: "trailing bytes after the last sample".into(),
        });
    }
    Ok(samples)
}

pub fn save_dataset(samples: &[SyntheticSample], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(samples, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<SyntheticSample>> {
    read_dataset(&mut BufReader::new(File::open(path)?))
}

/// A generated dataset together with the spec that produced it.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetBundle {
    Classification {
        spec: DatasetSpec,
        train: Vec<SyntheticSample>,
        test: Vec<SyntheticSample>,
    },
    Retrieval {
        spec: DatasetSpec,
        split: RetrievalSplit,
    },
}

impl DatasetBundle {
    pub fn spec(&self) -> &DatasetSpec {
        match self {
            DatasetBundle::Classification { spec, .. } | DatasetBundle::Retrieval { spec, .. } => {
                spec
            }
        }
    }

    pub fn mode(&self) -> &'static str {
        match self {
            DatasetBundle::Classification { .. } => "classification",
            DatasetBundle::Retrieval { .. } => "retrieval",
        }
    }

    /// Samples used for training.
    pub fn train(&self) -> &[SyntheticSample] {
        match self {
            DatasetBundle::Classification { train, .. } => train,
            DatasetBundle::Retrieval { split, .. } => &split.train,
        }
    }

    /// Number of distinct training labels.
    pub fn train_classes(&self) -> usize {
        match self {
            DatasetBundle::Classification { spec, .. } => spec.num_classes,
            DatasetBundle::Retrieval { split, .. } => split.train_ids.len(),
        }
    }

    fn splits(&self) -> Vec<(&'static str, &[SyntheticSample])> {
        match self {
            DatasetBundle::Classification { train, test, .. } => {
                vec![("train", train.as_slice()), ("test", test.as_slice())]
            }
            DatasetBundle::Retrieval { split, .. } => vec![
                ("train", split.train.as_slice()),
                ("query", split.query.as_slice()),
                ("gallery", split.gallery.as_slice()),
            ],
        }
    }

    pub fn manifest_text(&self) -> String {
        let mut lines = vec![
            "format=cal-dataset".to_string(),
            format!("version={DATASET_VERSION}"),
            format!("mode={}", self.mode()),
        ];
        lines.extend(self.spec().to_manifest_lines());
        for (name, samples) in self.splits() {
            lines.push(format!("{name}={}", samples.len()));
        }
        lines.join("\n") + "\n"
    }
}

fn split_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.bin"))
}

/// Writes the manifest and one file per split into `dir`, creating it.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, samples) in bundle.splits() {
        save_dataset(samples, &split_path(dir, name))?;
    }
    fs::write(dir.join(MANIFEST_FILE), bundle.manifest_text())?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let bad = |reason: String| SynthError::Bundle {
        path: manifest_path.clone(),
        reason,
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| bad(e.to_string()))?;
    let mut spec = DatasetSpec::default();
    let mut mode = None;
    let mut counts = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line without '=': {line}")))?;
        match key {
            "format" if value == "cal-dataset" => {}
            "version" if value == DATASET_VERSION.to_string() => {}
            "format" | "version" => return Err(bad(format!("unsupported {key} {value}"))),
            "mode" => mode = Some(value.to_string()),
            "train" | "test" | "query" | "gallery" => {
                counts.push((key.to_string(), value.to_string()))
            }
            _ => {
                if !spec.set_field(key, value)? {
                    return Err(bad(format!("unknown key {key}")));
                }
            }
        }
    }
    let load = |name: &str| -> Result<Vec<SyntheticSample>> {
        let samples = load_dataset(&split_path(dir, name))?;
        let declared = counts
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str());
        if declared != Some(samples.len().to_string().as_str()) {
            return Err(SynthError::Bundle {
                path: split_path(dir, name),
                reason: format!(
                    "holds {} samples, manifest says {declared:?}",
                    samples.len()
                ),
            });
        }
        Ok(samples)
    };
    match mode.as_deref() {
        Some("classification") => Ok(DatasetBundle::Classification {
            train: load("train")?,
            test: load("test")?,
            spec,
        }),
        Some("retrieval") => Ok(DatasetBundle::Retrieval {
            split: RetrievalSplit {
                train_ids: (0..spec.train_identities()).collect(),
                train: load("train")?,
                query: load("query")?,
                gallery: load("gallery")?,
            },
            spec,
        }),
        other => Err(bad(format!("unknown mode {other:?}"))),
    }
}
