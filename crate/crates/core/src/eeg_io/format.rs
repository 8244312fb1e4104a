use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EegIoError, RawRecording};

pub const SIGNAL_DTYPE: &str = "f32le";

/// Contents of a `<name>.hdr.json` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingHeader {
    pub patient_id: String,
    pub hour_index: u32,
    pub fs_hz: f64,
    pub electrodes: Vec<String>,
    pub n_samples: usize,
    pub signal_file: String,
    pub dtype: String,
}

impl RecordingHeader {
    pub(crate) fn read(path: &Path) -> Result<Self, EegIoError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => EegIoError::MissingFile(path.to_path_buf()),
            _ => EegIoError::io(path, e),
        })?;
        let malformed = |reason: String| EegIoError::MalformedHeader { path: path.to_path_buf(), reason };
        let header: Self = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
        if header.dtype != SIGNAL_DTYPE {
            return Err(malformed(format!("dtype {:?}, expected {SIGNAL_DTYPE:?}", header.dtype)));
        }
        if !(header.fs_hz.is_finite() && header.fs_hz > 0.0) {
            return Err(malformed(format!("fs_hz {} must be positive", header.fs_hz)));
        }
        if header.electrodes.is_empty() || header.n_samples == 0 {
            return Err(malformed("no electrodes or zero samples".into()));
        }
        Ok(header)
    }

    pub(crate) fn signal_path(&self, header_path: &Path) -> PathBuf {
        header_path.parent().unwrap_or_else(|| Path::new(".")).join(&self.signal_file)
    }

    pub(crate) fn expected_values(&self) -> usize {
        self.electrodes.len() * self.n_samples
    }

    /// Checks the signal file size without reading it.
    pub(crate) fn check_signal_size(&self, header_path: &Path) -> Result<(), EegIoError> {
        let signal_path = self.signal_path(header_path);
        let len = fs::metadata(&signal_path).map_err(|_| EegIoError::MissingFile(signal_path.clone()))?.len() as usize;
        let expected = self.expected_values();
        if len != expected * 4 {
            return Err(EegIoError::SampleCountMismatch { path: signal_path, expected, found: len / 4 });
        }
        Ok(())
    }
}

fn file_stem(rec: &RawRecording) -> String {
    format!("{}_h{:03}", rec.patient_id, rec.hour_index)
}

/// Writes `<patient>_h<hour>.hdr.json` and `<patient>_h<hour>.f32` into `dir`.
pub fn write_recording(rec: &RawRecording, dir: &Path) -> Result<(PathBuf, PathBuf), EegIoError> {
    rec.validate()?;
    let stem = file_stem(rec);
    let signal_name = format!("{stem}.f32");
    let header_path = dir.join(format!("{stem}.hdr.json"));
    let signal_path = dir.join(&signal_name);

    let header = RecordingHeader {
        patient_id: rec.patient_id.clone(),
        hour_index: rec.hour_index,
        fs_hz: rec.fs_hz,
        electrodes: rec.electrodes.clone(),
        n_samples: rec.n_samples(),
        signal_file: signal_name,
        dtype: SIGNAL_DTYPE.to_string(),
    };
    let mut payload = Vec::with_capacity(header.expected_values() * 4);
    for row in &rec.samples {
        for v in row {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&signal_path, payload).map_err(|e| EegIoError::io(&signal_path, e))?;
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&header_path, json).map_err(|e| EegIoError::io(&header_path, e))?;
    Ok((header_path, signal_path))
}

pub fn load_recording(header_path: &Path) -> Result<RawRecording, EegIoError> {
    let header = RecordingHeader::read(header_path)?;
    let signal_path = header.signal_path(header_path);
    let bytes = fs::read(&signal_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => EegIoError::MissingFile(signal_path.clone()),
        _ => EegIoError::io(&signal_path, e),
    })?;
    let expected = header.expected_values();
    if bytes.len() != expected * 4 {
        return Err(EegIoError::SampleCountMismatch { path: signal_path, expected, found: bytes.len() / 4 });
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let samples: Vec<Vec<f32>> = values.chunks(header.n_samples).map(<[f32]>::to_vec).collect();
    let rec = RawRecording {
        patient_id: header.patient_id,
        hour_index: header.hour_index,
        fs_hz: header.fs_hz,
        electrodes: header.electrodes,
        samples,
    };
    rec.validate()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn recording(n_electrodes: usize, n_samples: usize) -> RawRecording {
        RawRecording {
            patient_id: "p01".into(),
            hour_index: 4,
            fs_hz: 250.0,
            electrodes: (0..n_electrodes).map(|i| format!("E{i}")).collect(),
            samples: (0..n_electrodes)
                .map(|e| (0..n_samples).map(|t| (e * 1000 + t) as f32 * 0.25 - 3.0).collect())
                .collect(),
        }
    }

    #[test]
    fn shape_contract() {
        let dir = tempfile::tempdir().unwrap();
        let (hdr, _) = write_recording(&recording(19, 1000), dir.path()).unwrap();
        let rec = load_recording(&hdr).unwrap();
        assert_eq!(rec.samples.len(), 19);
        assert!(rec.samples.iter().all(|r| r.len() == 1000));
    }

    #[test]
    fn payload_size_is_four_bytes_per_value() {
        let dir = tempfile::tempdir().unwrap();
        let (_, sig) = write_recording(&recording(1, 5), dir.path()).unwrap();
        assert_eq!(fs::metadata(sig).unwrap().len(), 20);
    }

    #[test]
    fn short_signal_file_is_a_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (hdr, sig) = write_recording(&recording(19, 1000), dir.path()).unwrap();
        let bytes = fs::read(&sig).unwrap();
        fs::write(&sig, &bytes[..19 * 999 * 4]).unwrap();
        match load_recording(&hdr) {
            Err(EegIoError::SampleCountMismatch { expected, found, .. }) => {
                assert_eq!((expected, found), (19_000, 18_981));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_recording(&dir.path().join("nope.hdr.json")), Err(EegIoError::MissingFile(_))));

        let (hdr, sig) = write_recording(&recording(2, 10), dir.path()).unwrap();
        let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&hdr).unwrap()).unwrap();
        json["extra"] = serde_json::json!(1);
        fs::write(&hdr, json.to_string()).unwrap();
        assert!(matches!(load_recording(&hdr), Err(EegIoError::MalformedHeader { .. })));

        json.as_object_mut().unwrap().remove("extra");
        json.as_object_mut().unwrap().remove("fs_hz");
        fs::write(&hdr, json.to_string()).unwrap();
        assert!(matches!(load_recording(&hdr), Err(EegIoError::MalformedHeader { .. })));

        json["fs_hz"] = serde_json::json!(250.0);
        json["dtype"] = serde_json::json!("f64le");
        fs::write(&hdr, json.to_string()).unwrap();
        assert!(matches!(load_recording(&hdr), Err(EegIoError::MalformedHeader { .. })));

        json["dtype"] = serde_json::json!("f32le");
        fs::write(&hdr, json.to_string()).unwrap();
        fs::remove_file(&sig).unwrap();
        assert!(matches!(load_recording(&hdr), Err(EegIoError::MissingFile(_))));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (hdr, sig) = write_recording(&recording(1, 4), dir.path()).unwrap();
        let mut bytes = fs::read(&sig).unwrap();
        bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&sig, bytes).unwrap();
        assert!(matches!(load_recording(&hdr), Err(EegIoError::NonFiniteSample { index: 2, .. })));
    }

    #[test]
    fn unwritable_directory_is_io_failure() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("does/not/exist");
        assert!(matches!(write_recording(&recording(1, 5), &missing), Err(EegIoError::IoFailure { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bitwise(
            rows in (1usize..4, 1usize..50).prop_flat_map(|(e, n)| {
                proptest::collection::vec(proptest::collection::vec(-1e6f32..1e6, n), e)
            }),
            hour in 0u32..100,
            fs in 1.0f64..2000.0,
        ) {
            let rec = RawRecording {
                patient_id: "rt".into(),
                hour_index: hour,
                fs_hz: fs,
                electrodes: (0..rows.len()).map(|i| format!("ch{i}")).collect(),
                samples: rows,
            };
            let dir = tempfile::tempdir().unwrap();
            let (hdr, _) = write_recording(&rec, dir.path()).unwrap();
            let back = load_recording(&hdr).unwrap();
            prop_assert_eq!(back.fs_hz.to_bits(), rec.fs_hz.to_bits());
            for (a, b) in back.samples.iter().flatten().zip(rec.samples.iter().flatten()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back, rec);
        }
    }
}
