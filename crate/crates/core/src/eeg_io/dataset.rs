use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::format::RecordingHeader;
use super::{load_recording, EegIoError, PatientMeta, RawRecording};

pub const META_FILE: &str = "patient.json";

/// A validated recording whose samples stay on disk until [`RecordingHandle::load`].
#[derive(Clone, Debug, PartialEq)]
pub struct RecordingHandle {
    pub header_path: PathBuf,
    pub hour_index: u32,
    pub fs_hz: f64,
    pub n_samples: usize,
    pub electrodes: Vec<String>,
}

impl RecordingHandle {
    pub fn load(&self) -> Result<RawRecording, EegIoError> {
        load_recording(&self.header_path)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.fs_hz
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientEntry {
    pub meta: PatientMeta,
    /// Sorted by hour index.
    pub recordings: Vec<RecordingHandle>,
}

/// Patients keyed (and therefore ordered) by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub patients: BTreeMap<String, PatientEntry>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.patients.keys().map(String::as_str)
    }
}

pub fn write_patient_meta(patient_dir: &Path, meta: &PatientMeta) -> Result<PathBuf, EegIoError> {
    meta.validate()?;
    let path = patient_dir.join(META_FILE);
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    fs::write(&path, json).map_err(|e| EegIoError::io(&path, e))?;
    Ok(path)
}

fn read_meta(path: &Path) -> Result<PatientMeta, EegIoError> {
    let text = fs::read_to_string(path).map_err(|_| EegIoError::MissingFile(path.to_path_buf()))?;
    let meta: PatientMeta = serde_json::from_str(&text).map_err(|e| EegIoError::MalformedHeader {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    meta.validate()?;
    Ok(meta)
}

/// Loads one patient directory (metadata plus recording headers).
pub fn load_patient(dir: &Path) -> Result<PatientEntry, EegIoError> {
    let meta = read_meta(&dir.join(META_FILE))?;
    let mut recordings = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| EegIoError::io(dir, e))?;
    let mut header_paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".hdr.json")))
        .collect();
    header_paths.sort();
    for header_path in header_paths {
        let header = RecordingHeader::read(&header_path)?;
        if header.patient_id != meta.patient_id {
            return Err(EegIoError::MalformedHeader {
                path: header_path,
                reason: format!("patient_id {:?} does not match metadata {:?}", header.patient_id, meta.patient_id),
            });
        }
        header.check_signal_size(&header_path)?;
        recordings.push(RecordingHandle {
            hour_index: header.hour_index,
            fs_hz: header.fs_hz,
            n_samples: header.n_samples,
            electrodes: header.electrodes,
            header_path,
        });
    }
    if recordings.is_empty() {
        return Err(EegIoError::InvalidRecording(format!("no recordings in {}", dir.display())));
    }
    recordings.sort_by_key(|r| r.hour_index);
    Ok(PatientEntry { meta, recordings })
}

/// Discovers every patient directory under `root`, validating metadata,
/// headers and signal sizes. Sample payloads are read lazily.
pub fn load_dataset(root: &Path) -> Result<Dataset, EegIoError> {
    let entries = fs::read_dir(root).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => EegIoError::MissingFile(root.to_path_buf()),
        _ => EegIoError::io(root, e),
    })?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();

    let mut patients = BTreeMap::new();
    for dir in dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let entry = load_patient(&dir).map_err(|source| EegIoError::Patient { patient_id: name.clone(), source: Box::new(source) })?;
        let id = entry.meta.patient_id.clone();
        if patients.insert(id.clone(), entry).is_some() {
            return Err(EegIoError::Patient {
                patient_id: id,
                source: Box::new(EegIoError::InvalidMeta("duplicate patient id".into())),
            });
        }
    }
    if patients.is_empty() {
        return Err(EegIoError::EmptyDataset(root.to_path_buf()));
    }
    Ok(Dataset { root: root.to_path_buf(), patients })
}
