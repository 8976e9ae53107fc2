//! Labeled image datasets: sliding-window extraction from traces,
//! deterministic 15:2:1 splitting, and a checksummed binary container.

use crate::signal::SignalTrace;
use crate::transform::{pid_transform, FeatureImage, Provenance, TransformError, CHANNELS, WINDOW_LEN};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// A window is labeled faulty once at least this many of its samples fall
/// inside the overload interval. Keeps ambiguous boundary windows out of
/// the positive class without discarding them.
pub const FAULT_LABEL_MIN_SAMPLES: usize = 128;

/// Default hop between window starts (75% overlap).
pub const DEFAULT_HOP: usize = 256;

pub const NORMAL: u8 = 0;
pub const FAULT: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: FeatureImage,
    pub label: u8,
}

/// Train/validation/test partition at fixed 15:2:1 proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledImage>,
    pub validation: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetError {
    /// Fewer images than the split ratio supports.
    TooFewImages { got: usize, needed: usize },
    Transform(TransformError),
    /// Container ingest failures.
    BadMagic,
    BadVersion { got: u16 },
    Truncated,
    TrailingBytes { extra: usize },
    ChecksumMismatch { expected: u32, got: u32 },
    BadLabel { record: usize, got: u8 },
    BadPixel { record: usize },
    Io(String),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::TooFewImages { got, needed } => {
                write!(f, "need at least {needed} images to split, got {got}")
            }
            DatasetError::Transform(e) => write!(f, "transform failed: {e}"),
            DatasetError::BadMagic => write!(f, "not a dataset file (bad magic)"),
            DatasetError::BadVersion { got } => write!(f, "unsupported dataset version {got}"),
            DatasetError::Truncated => write!(f, "dataset file is truncated"),
            DatasetError::TrailingBytes { extra } => {
                write!(f, "{extra} unexpected bytes after the checksum")
            }
            DatasetError::ChecksumMismatch { expected, got } => {
                write!(f, "checksum mismatch: stored {got:#010x}, computed {expected:#010x}")
            }
            DatasetError::BadLabel { record, got } => {
                write!(f, "record {record}: label must be 0 or 1, got {got}")
            }
            DatasetError::BadPixel { record } => {
                write!(f, "record {record}: pixel outside [0, 1]")
            }
            DatasetError::Io(msg) => write!(f, "dataset io: {msg}"),
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<TransformError> for DatasetError {
    fn from(e: TransformError) -> Self {
        DatasetError::Transform(e)
    }
}

/// Outcome flag for window extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowingStatus {
    Ok,
    /// The trace holds fewer samples than one window; nothing was emitted.
    TraceTooShort,
}

/// Slides a 1024-sample window across the trace at `hop` and encodes each
/// position. A window is labeled faulty when at least
/// [`FAULT_LABEL_MIN_SAMPLES`] of its samples lie at or after the fault
/// onset (and before shutdown, where one is recorded).
pub fn window_and_label(
    trace: &SignalTrace,
    hop: usize,
) -> Result<(Vec<LabeledImage>, WindowingStatus), DatasetError> {
    assert!(hop >= 1, "hop must be at least one sample");
    let samples = trace.samples();
    if samples.len() < WINDOW_LEN {
        log::warn!(
            "trace holds {} samples, one window needs {WINDOW_LEN}; nothing emitted",
            samples.len()
        );
        return Ok((Vec::new(), WindowingStatus::TraceTooShort));
    }

    let in_fault = |t: f64| -> bool {
        match trace.fault_onset() {
            Some(onset) => t >= onset && trace.fault_shutdown().is_none_or(|s| t < s),
            None => false,
        }
    };

    let mut images = Vec::new();
    let mut start = 0;
    while start + WINDOW_LEN <= samples.len() {
        let slice = &samples[start..start + WINDOW_LEN];
        let values: Vec<f64> = slice.iter().map(|&(_, c)| c).collect();
        let window = crate::transform::Window::new(values, trace.sample_interval())?;
        let mut image = pid_transform(&window)?;
        image.set_provenance(Provenance {
            start_index: start,
            trace_id: trace.rng_seed(),
        });
        let fault_samples = slice.iter().filter(|&&(t, _)| in_fault(t)).count();
        let label = if fault_samples >= FAULT_LABEL_MIN_SAMPLES { FAULT } else { NORMAL };
        images.push(LabeledImage { image, label });
        start += hop;
    }
    Ok((images, WindowingStatus::Ok))
}

/// Expected number of windows for a trace of `n` samples.
pub fn window_count(n: usize, hop: usize) -> usize {
    if n < WINDOW_LEN {
        0
    } else {
        (n - WINDOW_LEN) / hop + 1
    }
}

fn split_sizes(total: usize) -> (usize, usize, usize) {
    let validation = total * 2 / 18;
    let test = total / 18;
    (total - validation - test, validation, test)
}

fn positive_fraction(images: &[LabeledImage]) -> f64 {
    if images.is_empty() {
        return 0.0;
    }
    images.iter().filter(|i| i.label == FAULT).count() as f64 / images.len() as f64
}

/// Largest allowed deviation of any split's class balance from the whole,
/// in absolute fraction (five percentage points).
const BALANCE_SLACK: f64 = 0.05;

/// Deterministic shuffled partition at 15:2:1 (rounding down, remainder to
/// train). If plain shuffling skews any split's class balance by more than
/// five percentage points, the split is redrawn stratified by class.
pub fn split(images: &[LabeledImage], seed: u64) -> Result<DatasetSplit, DatasetError> {
    if images.len() < 18 {
        return Err(DatasetError::TooFewImages {
            got: images.len(),
            needed: 18,
        });
    }
    let (n_train, n_val, n_test) = split_sizes(images.len());

    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let assemble = |order: &[usize]| -> DatasetSplit {
        let pick = |range: std::ops::Range<usize>| -> Vec<LabeledImage> {
            order[range].iter().map(|&i| images[i].clone()).collect()
        };
        DatasetSplit {
            train: pick(0..n_train),
            validation: pick(n_train..n_train + n_val),
            test: pick(n_train + n_val..n_train + n_val + n_test),
            seed,
        }
    };

    let candidate = assemble(&order);
    let overall = positive_fraction(images);
    let balanced = [&candidate.train, &candidate.validation, &candidate.test]
        .iter()
        .all(|part| (positive_fraction(part) - overall).abs() <= BALANCE_SLACK);
    if balanced {
        return Ok(candidate);
    }

    // Stratified redraw: shuffle within each class, then deal classes
    // proportionally into each split.
    let mut positives: Vec<usize> = (0..images.len()).filter(|&i| images[i].label == FAULT).collect();
    let mut negatives: Vec<usize> = (0..images.len()).filter(|&i| images[i].label == NORMAL).collect();
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);

    let pos_sizes = {
        let (t, v, s) = split_sizes(positives.len());
        [t, v, s]
    };
    let mut stratified_order = Vec::with_capacity(images.len());
    let mut pos_iter = positives.into_iter();
    let mut neg_iter = negatives.into_iter();
    let sizes = [n_train, n_val, n_test];
    for part in 0..3 {
        let take_pos = pos_sizes[part].min(sizes[part]);
        for _ in 0..take_pos {
            if let Some(i) = pos_iter.next() {
                stratified_order.push(i);
            }
        }
        while stratified_order.len() < sizes[..=part].iter().sum::<usize>() {
            if let Some(i) = neg_iter.next() {
                stratified_order.push(i);
            } else if let Some(i) = pos_iter.next() {
                stratified_order.push(i);
            } else {
                break;
            }
        }
    }
    debug_assert_eq!(stratified_order.len(), images.len());
    Ok(assemble(&stratified_order))
}

pub const DATASET_MAGIC: &[u8; 4] = b"TRND";
pub const DATASET_VERSION: u16 = 1;

const RECORD_BYTES: usize = CHANNELS * WINDOW_LEN * 4 + 1;

/// Serializes a flat image sequence: magic `TRND`, version u16 LE, image
/// count u32 LE, then per record 3x32x32 f32 LE pixels plus a label byte,
/// closed by a CRC-32 over everything preceding it.
pub fn save_images(images: &[LabeledImage]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(10 + images.len() * RECORD_BYTES + 4);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(images.len() as u32).to_le_bytes());
    for item in images {
        for &v in item.image.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(item.label);
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Parses a flat image container, validating the checksum before returning
/// anything.
pub fn load_images(data: &[u8]) -> Result<Vec<LabeledImage>, DatasetError> {
    if data.len() < 14 {
        return Err(DatasetError::Truncated);
    }
    if &data[..4] != DATASET_MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = u16::from_le_bytes(data[4..6].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(DatasetError::BadVersion { got: version });
    }
    let count = u32::from_le_bytes(data[6..10].try_into().unwrap()) as usize;
    let body_len = 10 + count * RECORD_BYTES;
    if data.len() < body_len + 4 {
        return Err(DatasetError::Truncated);
    }
    if data.len() > body_len + 4 {
        return Err(DatasetError::TrailingBytes {
            extra: data.len() - body_len - 4,
        });
    }
    let stored = u32::from_le_bytes(data[body_len..body_len + 4].try_into().unwrap());
    let computed = crc32fast::hash(&data[..body_len]);
    if stored != computed {
        return Err(DatasetError::ChecksumMismatch {
            expected: computed,
            got: stored,
        });
    }

    let mut images = Vec::with_capacity(count);
    let mut pos = 10;
    for record in 0..count {
        let mut values = Vec::with_capacity(CHANNELS * WINDOW_LEN);
        for _ in 0..CHANNELS * WINDOW_LEN {
            values.push(f32::from_le_bytes(data[pos..pos + 4].try_into().unwrap()));
            pos += 4;
        }
        let label = data[pos];
        pos += 1;
        if label > 1 {
            return Err(DatasetError::BadLabel { record, got: label });
        }
        let image = FeatureImage::from_values(values, Provenance::default())
            .map_err(|_| DatasetError::BadPixel { record })?;
        images.push(LabeledImage { image, label });
    }
    Ok(images)
}

/// Persists a split as one container holding train, validation, and test
/// records in order. Boundaries are recovered from the fixed 15:2:1 rule,
/// so the container needs no extra framing; the shuffle seed is provenance
/// and is not stored.
pub fn save_dataset(split: &DatasetSplit) -> Vec<u8> {
    let mut all = Vec::with_capacity(split.total());
    all.extend_from_slice(&split.train);
    all.extend_from_slice(&split.validation);
    all.extend_from_slice(&split.test);
    save_images(&all)
}

/// Inverse of [`save_dataset`]. The returned split carries seed 0.
pub fn load_dataset(data: &[u8]) -> Result<DatasetSplit, DatasetError> {
    let mut images = load_images(data)?;
    let (n_train, n_val, n_test) = split_sizes(images.len());
    let test = images.split_off(n_train + n_val);
    let validation = images.split_off(n_train);
    debug_assert_eq!(test.len(), n_test);
    Ok(DatasetSplit {
        train: images,
        validation,
        test,
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{simulate_trace, FaultSpec, MotorProfile};
    use crate::transform::IMAGE_SIDE;

    fn healthy_trace(seed: u64, duration: f64) -> SignalTrace {
        simulate_trace(&MotorProfile::default(), duration, None, seed).unwrap()
    }

    fn fault_trace(seed: u64, duration: f64, onset: f64) -> SignalTrace {
        let fault = FaultSpec {
            onset_time: onset,
            ..FaultSpec::default()
        };
        simulate_trace(&MotorProfile::default(), duration, Some(&fault), seed).unwrap()
    }

    fn tiny_dataset(n_fault: usize, n_normal: usize) -> Vec<LabeledImage> {
        // Synthetic labels over real transformed windows.
        let (mut images, _) = window_and_label(&fault_trace(1, 12.0, 3.0), 256).unwrap();
        let (normals, _) = window_and_label(&healthy_trace(2, 12.0), 256).unwrap();
        images.extend(normals);
        let faults: Vec<LabeledImage> = images.iter().filter(|i| i.label == FAULT).cloned().collect();
        let normals: Vec<LabeledImage> = images.iter().filter(|i| i.label == NORMAL).cloned().collect();
        let mut out = Vec::new();
        for k in 0..n_fault {
            out.push(faults[k % faults.len()].clone());
        }
        for k in 0..n_normal {
            out.push(normals[k % normals.len()].clone());
        }
        out
    }

    #[test]
    fn healthy_trace_labels_are_all_zero() {
        let (images, status) = window_and_label(&healthy_trace(3, 4.0), 256).unwrap();
        assert_eq!(status, WindowingStatus::Ok);
        assert!(!images.is_empty());
        assert!(images.iter().all(|i| i.label == NORMAL));
    }

    #[test]
    fn window_inside_plateau_is_labeled_fault() {
        let trace = fault_trace(4, 8.0, 1.0);
        let (images, _) = window_and_label(&trace, 256).unwrap();
        // Windows starting well past onset sit fully inside the overload.
        let plateau_start = (2.0 / trace.sample_interval()) as usize;
        for item in &images {
            if item.image.provenance().start_index >= plateau_start {
                assert_eq!(item.label, FAULT, "window at {}", item.image.provenance().start_index);
            }
        }
        assert!(images.iter().any(|i| i.label == FAULT));
        assert!(images.iter().any(|i| i.label == NORMAL));
    }

    #[test]
    fn emitted_window_count_matches_arithmetic() {
        for (duration, hop) in [(2.0, 256), (4.0, 128), (3.5, 500), (1.024, 256)] {
            let trace = healthy_trace(5, duration);
            let (images, _) = window_and_label(&trace, hop).unwrap();
            assert_eq!(
                images.len(),
                window_count(trace.len(), hop),
                "duration {duration} hop {hop}"
            );
            assert_eq!(
                window_count(trace.len(), hop),
                (trace.len() - WINDOW_LEN) / hop + 1
            );
        }
    }

    #[test]
    fn short_trace_yields_warning_status() {
        // Build a 2-sample trace through the CSV reader.
        let mut data = "time_s,current_a\n0.000,1.0\n0.001,1.1\n".as_bytes();
        let trace = crate::signal::read_trace(&mut data).unwrap();
        let (images, status) = window_and_label(&trace, 1).unwrap();
        assert!(images.is_empty());
        assert_eq!(status, WindowingStatus::TraceTooShort);
    }

    #[test]
    fn shutdown_stops_fault_labeling() {
        let fault = FaultSpec {
            onset_time: 1.5,
            shutdown_time: Some(3.0),
            ..FaultSpec::default()
        };
        let trace = simulate_trace(&MotorProfile::default(), 8.0, Some(&fault), 6).unwrap();
        let (images, _) = window_and_label(&trace, 256).unwrap();
        let dt = trace.sample_interval();
        for item in &images {
            let start_t = item.image.provenance().start_index as f64 * dt;
            if start_t >= 3.0 {
                assert_eq!(item.label, NORMAL, "post-shutdown window at {start_t}");
            }
        }
    }

    #[test]
    fn split_sizes_match_ratio() {
        assert_eq!(split_sizes(18_000), (15_000, 2_000, 1_000));
        assert_eq!(split_sizes(1_800), (1_500, 200, 100));
        assert_eq!(split_sizes(18), (15, 2, 1));
        assert_eq!(split_sizes(19), (16, 2, 1));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let images = tiny_dataset(30, 60);
        let a = split(&images, 7).unwrap();
        let b = split(&images, 7).unwrap();
        assert_eq!(a, b);
        let c = split(&images, 8).unwrap();
        assert_ne!(a, c);

        assert_eq!(a.train.len(), 75);
        assert_eq!(a.validation.len(), 10);
        assert_eq!(a.test.len(), 5);
        assert_eq!(a.total(), images.len());
    }

    #[test]
    fn split_keeps_class_balance() {
        let images = tiny_dataset(40, 140);
        let overall = positive_fraction(&images);
        for seed in 0..10 {
            let s = split(&images, seed).unwrap();
            for part in [&s.train, &s.validation, &s.test] {
                assert!(
                    (positive_fraction(part) - overall).abs() <= BALANCE_SLACK + 1e-9,
                    "seed {seed}: part balance {} vs overall {overall}",
                    positive_fraction(part)
                );
            }
        }
    }

    #[test]
    fn split_rejects_too_few_images() {
        let images = tiny_dataset(3, 3);
        assert!(matches!(
            split(&images, 1),
            Err(DatasetError::TooFewImages { got: 6, needed: 18 })
        ));
    }

    #[test]
    fn container_round_trip() {
        let images = tiny_dataset(10, 26);
        let blob = save_images(&images);
        let loaded = load_images(&blob).unwrap();
        assert_eq!(images.len(), loaded.len());
        for (a, b) in images.iter().zip(&loaded) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.image.values(), b.image.values());
        }
    }

    #[test]
    fn split_round_trip() {
        let images = tiny_dataset(20, 52);
        let original = split(&images, 9).unwrap();
        let blob = save_dataset(&original);
        let loaded = load_dataset(&blob).unwrap();
        assert_eq!(loaded.train, original.train);
        assert_eq!(loaded.validation, original.validation);
        assert_eq!(loaded.test, original.test);
    }

    #[test]
    fn truncated_container_returns_nothing() {
        let images = tiny_dataset(5, 13);
        let blob = save_images(&images);
        for cut in [blob.len() - 1, blob.len() / 2, 9] {
            assert!(matches!(
                load_images(&blob[..cut]),
                Err(DatasetError::Truncated)
            ));
        }
    }

    #[test]
    fn corrupted_container_fails_checksum() {
        let images = tiny_dataset(5, 13);
        let mut blob = save_images(&images);
        let mid = blob.len() / 2;
        blob[mid] ^= 0x01;
        assert!(matches!(
            load_images(&blob),
            Err(DatasetError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn container_size_matches_format() {
        let images = tiny_dataset(4, 14);
        let blob = save_images(&images);
        assert_eq!(
            blob.len(),
            10 + images.len() * (CHANNELS * IMAGE_SIDE * IMAGE_SIDE * 4 + 1) + 4
        );
    }

    #[test]
    fn loaded_images_satisfy_invariants() {
        let images = tiny_dataset(8, 10);
        let loaded = load_images(&save_images(&images)).unwrap();
        for item in &loaded {
            assert!(item.label <= 1);
            assert!(item.image.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
