//! Preprocessed segments held in memory, plus an on-disk cache of them.
//!
//! Cache layout under its root directory:
//! `store.json` (preprocessing settings and skipped recordings) and, per
//! patient, `<id>/patient.json` plus `<id>/h<hour>.seg.json` /
//! `<id>/h<hour>.seg.f32` pairs. A `.seg.f32` file holds every segment of
//! the hour back to back, each channel-major, as little-endian `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::dsp::{preprocess_with, BipolarSegment, PreprocessConfig, N_BIPOLAR, SEGMENT_SAMPLES};
use crate::eeg_io::{write_patient_meta, Dataset, Outcome, PatientMeta, RawRecording, META_FILE};

#[derive(Clone, Debug, PartialEq)]
pub struct StoredHour {
    pub hour_index: u32,
    pub segments: Vec<BipolarSegment>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredPatient {
    pub meta: PatientMeta,
    /// Sorted by hour; only hours that produced at least one segment.
    pub hours: Vec<StoredHour>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecording {
    pub patient_id: String,
    pub hour_index: u32,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedStore {
    /// Montage rows kept from each segment.
    pub channels: Vec<usize>,
    pub patients: BTreeMap<String, StoredPatient>,
    pub skipped: Vec<SkippedRecording>,
}

#[derive(Serialize, Deserialize)]
struct StoreManifest {
    preprocess: PreprocessConfig,
    skipped: Vec<SkippedRecording>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HourHeader {
    patient_id: String,
    hour_index: u32,
    n_segments: usize,
    n_channels: usize,
    segment_len: usize,
}

fn io_err(path: &Path, e: std::io::Error) -> TrainError {
    TrainError::Io { path: path.to_path_buf(), source: e }
}

fn cache_err(path: &Path, msg: impl std::fmt::Display) -> TrainError {
    TrainError::Cache(format!("{}: {msg}", path.display()))
}

impl PreprocessedStore {
    pub fn new(channels: Vec<usize>) -> Result<Self, TrainError> {
        if channels.is_empty() || channels.iter().any(|&c| c >= N_BIPOLAR) {
            return Err(TrainError::InvalidConfig(format!("channel selection {channels:?}")));
        }
        Ok(Self { channels, patients: BTreeMap::new(), skipped: Vec::new() })
    }

    fn entry(&mut self, meta: &PatientMeta) -> &mut StoredPatient {
        self.patients
            .entry(meta.patient_id.clone())
            .or_insert_with(|| StoredPatient { meta: meta.clone(), hours: Vec::new() })
    }

    /// Adds already-preprocessed 18-channel segments of one hour.
    pub fn add_segments(&mut self, meta: &PatientMeta, hour_index: u32, segments: Vec<BipolarSegment>) -> Result<(), TrainError> {
        let channels = self.channels.clone();
        let segments = segments.iter().map(|s| s.select_channels(&channels)).collect::<Result<Vec<_>, _>>()?;
        let patient = self.entry(meta);
        if !segments.is_empty() {
            patient.hours.push(StoredHour { hour_index, segments });
            patient.hours.sort_by_key(|h| h.hour_index);
        }
        Ok(())
    }

    /// Preprocesses one recording. Recordings the pipeline rejects (too
    /// short, missing electrodes) are listed in `skipped` rather than failing.
    pub fn add_recording(&mut self, meta: &PatientMeta, rec: &RawRecording, cfg: &PreprocessConfig) -> Result<(), TrainError> {
        match preprocess_with(rec, cfg) {
            Ok(segments) => self.add_segments(meta, rec.hour_index, segments),
            Err(e) => {
                self.entry(meta);
                self.skipped.push(SkippedRecording { patient_id: meta.patient_id.clone(), hour_index: rec.hour_index, reason: e.to_string() });
                Ok(())
            }
        }
    }

    /// Loads and preprocesses every recording of `dataset`, one at a time.
    pub fn from_dataset(dataset: &Dataset, channels: Vec<usize>, cfg: &PreprocessConfig) -> Result<Self, TrainError> {
        let ids: Vec<String> = dataset.patients.keys().cloned().collect();
        Self::from_patients(dataset, &ids, channels, cfg)
    }

    /// Like [`Self::from_dataset`], restricted to `ids`.
    pub fn from_patients(dataset: &Dataset, ids: &[String], channels: Vec<usize>, cfg: &PreprocessConfig) -> Result<Self, TrainError> {
        let mut store = Self::new(channels)?;
        for id in ids {
            let entry = dataset.patients.get(id).ok_or_else(|| TrainError::UnknownPatient(id.clone()))?;
            for handle in &entry.recordings {
                let rec = handle.load()?;
                store.add_recording(&entry.meta, &rec, cfg)?;
            }
        }
        Ok(store)
    }

    /// Patients with at least one usable segment, with their outcomes.
    pub fn usable_patients(&self) -> Vec<(String, Outcome)> {
        self.patients
            .values()
            .filter(|p| !p.hours.is_empty())
            .map(|p| (p.meta.patient_id.clone(), p.meta.outcome))
            .collect()
    }

    pub fn n_segments(&self) -> usize {
        self.patients.values().flat_map(|p| &p.hours).map(|h| h.segments.len()).sum()
    }

    /// Preprocesses `dataset` into a cache directory, keeping all 18 channels.
    pub fn write_cache(dataset: &Dataset, out: &Path, cfg: &PreprocessConfig) -> Result<CacheSummary, TrainError> {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        let mut summary = CacheSummary::default();
        for entry in dataset.patients.values() {
            let dir = out.join(&entry.meta.patient_id);
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            write_patient_meta(&dir, &entry.meta)?;
            summary.patients += 1;
            for handle in &entry.recordings {
                let rec = handle.load()?;
                match preprocess_with(&rec, cfg) {
                    Ok(segments) => {
                        write_hour(&dir, &entry.meta.patient_id, rec.hour_index, &segments)?;
                        summary.hours += 1;
                        summary.segments += segments.len();
                    }
                    Err(e) => summary.skipped.push(SkippedRecording {
                        patient_id: entry.meta.patient_id.clone(),
                        hour_index: rec.hour_index,
                        reason: e.to_string(),
                    }),
                }
            }
        }
        let manifest = StoreManifest { preprocess: cfg.clone(), skipped: summary.skipped.clone() };
        let path = out.join(STORE_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(|e| io_err(&path, e))?;
        Ok(summary)
    }

    /// Reads a cache written by [`PreprocessedStore::write_cache`], keeping `channels`.
    pub fn load_cache(root: &Path, channels: Vec<usize>) -> Result<Self, TrainError> {
        let manifest_path = root.join(STORE_MANIFEST);
        let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        let manifest: StoreManifest = serde_json::from_str(&text).map_err(|e| cache_err(&manifest_path, e))?;
        let mut store = Self::new(channels)?;
        store.skipped = manifest.skipped;

        let mut dirs: Vec<_> = fs::read_dir(root)
            .map_err(|e| io_err(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let meta_path = dir.join(META_FILE);
            let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
            let meta: PatientMeta = serde_json::from_str(&text).map_err(|e| cache_err(&meta_path, e))?;
            meta.validate()?;
            store.entry(&meta);
            let mut headers: Vec<_> = fs::read_dir(&dir)
                .map_err(|e| io_err(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".seg.json")))
                .collect();
            headers.sort();
            for header_path in headers {
                let (hour, segments) = read_hour(&header_path, &meta.patient_id)?;
                store.add_segments(&meta, hour, segments)?;
            }
        }
        if store.patients.is_empty() {
            return Err(cache_err(root, "cache holds no patients"));
        }
        Ok(store)
    }
}

pub const STORE_MANIFEST: &str = "store.json";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CacheSummary {
    pub patients: usize,
    pub hours: usize,
    pub segments: usize,
    pub skipped: Vec<SkippedRecording>,
}

fn write_hour(dir: &Path, patient_id: &str, hour_index: u32, segments: &[BipolarSegment]) -> Result<(), TrainError> {
    let stem = format!("h{hour_index:03}");
    let n_channels = segments.first().map_or(N_BIPOLAR, BipolarSegment::n_channels);
    let header = HourHeader {
        patient_id: patient_id.to_string(),
        hour_index,
        n_segments: segments.len(),
        n_channels,
        segment_len: SEGMENT_SAMPLES,
    };
    let mut payload = Vec::with_capacity(segments.len() * n_channels * SEGMENT_SAMPLES * 4);
    for seg in segments {
        for v in seg.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let data_path = dir.join(format!("{stem}.seg.f32"));
    fs::write(&data_path, payload).map_err(|e| io_err(&data_path, e))?;
    let header_path = dir.join(format!("{stem}.seg.json"));
    fs::write(&header_path, serde_json::to_string_pretty(&header).expect("header serializes")).map_err(|e| io_err(&header_path, e))
}

fn read_hour(header_path: &Path, patient_id: &str) -> Result<(u32, Vec<BipolarSegment>), TrainError> {
    let text = fs::read_to_string(header_path).map_err(|e| io_err(header_path, e))?;
    let h: HourHeader = serde_json::from_str(&text).map_err(|e| cache_err(header_path, e))?;
    if h.patient_id != patient_id || h.segment_len != SEGMENT_SAMPLES {
        return Err(cache_err(header_path, "header does not match its patient or segment length"));
    }
    let name = header_path.file_name().and_then(|n| n.to_str()).unwrap_or_default().replace(".seg.json", ".seg.f32");
    let data_path = header_path.with_file_name(name);
    let bytes = fs::read(&data_path).map_err(|e| io_err(&data_path, e))?;
    let per_segment = h.n_channels * SEGMENT_SAMPLES;
    if bytes.len() != 4 * per_segment * h.n_segments {
        return Err(cache_err(&data_path, format!("{} bytes, expected {}", bytes.len(), 4 * per_segment * h.n_segments)));
    }
    let segments = bytes
        .chunks_exact(4 * per_segment)
        .enumerate()
        .map(|(i, chunk)| {
            let data = chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            BipolarSegment::new(patient_id, h.hour_index, i as u32, h.n_channels, data)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((h.hour_index, segments))
}

/// A sampled segment with its patient's labels.
#[derive(Clone, Copy, Debug)]
pub struct TrainingExample<'a> {
    pub segment: &'a BipolarSegment,
    pub outcome: Outcome,
    pub cpc: u8,
    pub patient_id: &'a str,
}

/// Uniform patient, then uniform hour of that patient, then uniform segment of that hour.
pub fn sample_training_example<'a, R: Rng>(ids: &[String], store: &'a PreprocessedStore, rng: &mut R) -> Result<TrainingExample<'a>, TrainError> {
    if ids.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let id = &ids[rng.random_range(0..ids.len())];
    let patient = store.patients.get(id).ok_or_else(|| TrainError::UnknownPatient(id.clone()))?;
    if patient.hours.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let hour = &patient.hours[rng.random_range(0..patient.hours.len())];
    let segment = &hour.segments[rng.random_range(0..hour.segments.len())];
    Ok(TrainingExample { segment, outcome: patient.meta.outcome, cpc: patient.meta.cpc, patient_id: &patient.meta.patient_id })
}
