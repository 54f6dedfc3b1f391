//! Sample and label model, IDX byte-stream parsing, image rotation, the
//! three-way digit case splits, and synthetic domain-shift data with
//! closed-form posteriors for oracle tests.
//!
//! Training data only ever exists in the three available strata
//! (normal/source, anomaly/source, normal/target); the missing
//! (anomaly, target) stratum appears either in test sets or, for synthetic
//! oracle data, as an explicitly held-out block.
//!
//! File IO lives in the companion crate; everything here operates on byte
//! slices and in-memory arrays.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::math::{cos, exp, floor, log, log_add_exp, sin, sqrt, LN_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassLabel {
    Normal,
    Anomaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainLabel {
    Source,
    Target,
}

/// Test-time provenance of a sample. `UnseenAnomaly` never occurs in
/// training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Normal,
    SeenAnomaly,
    UnseenAnomaly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub class: ClassLabel,
    pub domain: DomainLabel,
    pub digit: u8,
    pub role: Role,
}

/// The three training strata of the availability constraint: no
/// (anomaly, target) stratum exists.
#[derive(Debug, Clone, Default)]
pub struct TrainStrata {
    pub normal_source: Vec<LabeledSample>,
    pub anomaly_source: Vec<LabeledSample>,
    pub normal_target: Vec<LabeledSample>,
}

impl TrainStrata {
    pub fn min_stratum_len(&self) -> usize {
        self.normal_source
            .len()
            .min(self.anomaly_source.len())
            .min(self.normal_target.len())
    }
}

#[derive(Debug, Clone)]
pub struct CaseDataset {
    pub case: CaseSplit,
    pub train: TrainStrata,
    pub test: Vec<LabeledSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    UnknownCase(u8),
    LabelImageCountMismatch { images: usize, labels: usize },
    EmptyStratum(&'static str),
    DimensionMismatch,
    NonPositiveVariance,
    /// The domain shift must be orthogonal to the class axis under the
    /// covariance metric, otherwise the covariate-shift-under-class-shift
    /// condition cannot hold exactly.
    ShiftNotClassOrthogonal { inner_product: f64 },
    InvalidClassPrior(f64),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownCase(id) => write!(f, "unknown case id {id} (valid: 1, 2, 3)"),
            Self::LabelImageCountMismatch { images, labels } => {
                write!(f, "image count {images} does not match label count {labels}")
            }
            Self::EmptyStratum(name) => write!(f, "stratum {name} has no samples"),
            Self::DimensionMismatch => write!(f, "synthetic spec field dimensions disagree"),
            Self::NonPositiveVariance => write!(f, "covariance entries must be positive"),
            Self::ShiftNotClassOrthogonal { inner_product } => write!(
                f,
                "shift is not orthogonal to the class axis (inner product {inner_product}); \
                 the exact covariate-shift construction needs shift^T cov^-1 (mean_a - mean_n) = 0"
            ),
            Self::InvalidClassPrior(p) => write!(f, "anomaly class prior {p} outside (0, 1)"),
        }
    }
}

impl core::error::Error for DataError {}

// ---------------------------------------------------------------------------
// IDX byte-stream parsing
// ---------------------------------------------------------------------------

pub const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
pub const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxError {
    /// Stream ends before the field starting at `offset` is complete.
    Truncated {
        offset: usize,
        expected_len: usize,
        actual_len: usize,
    },
    BadMagic {
        offset: usize,
        got: u32,
    },
    /// Header declares more payload than the stream carries (or extra
    /// trailing bytes follow it).
    LengthMismatch {
        expected_len: usize,
        actual_len: usize,
    },
}

impl fmt::Display for IdxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Truncated {
                offset,
                expected_len,
                actual_len,
            } => write!(
                f,
                "truncated IDX stream at byte {offset}: need {expected_len} bytes, have {actual_len}"
            ),
            Self::BadMagic { offset, got } => {
                write!(f, "bad IDX magic 0x{got:08x} at byte {offset}")
            }
            Self::LengthMismatch {
                expected_len,
                actual_len,
            } => write!(
                f,
                "IDX payload length mismatch: header implies {expected_len} bytes total, stream has {actual_len}"
            ),
        }
    }
}

impl core::error::Error for IdxError {}

#[derive(Debug, Clone, PartialEq)]
pub enum IdxContent {
    /// `count x rows x cols` uint8 image tensor, row-major.
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(IdxError::Truncated {
            offset,
            expected_len: end,
            actual_len: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses a big-endian IDX byte stream (magic 0x00000803 for uint8 image
/// tensors, 0x00000801 for uint8 label vectors).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxContent, IdxError> {
    let magic = read_be_u32(bytes, 0)?;
    match magic {
        IDX_MAGIC_IMAGES => {
            let count = read_be_u32(bytes, 4)? as usize;
            let rows = read_be_u32(bytes, 8)? as usize;
            let cols = read_be_u32(bytes, 12)? as usize;
            let expected_len = 16 + count * rows * cols;
            if bytes.len() != expected_len {
                return Err(IdxError::LengthMismatch {
                    expected_len,
                    actual_len: bytes.len(),
                });
            }
            Ok(IdxContent::Images {
                count,
                rows,
                cols,
                pixels: bytes[16..].to_vec(),
            })
        }
        IDX_MAGIC_LABELS => {
            let count = read_be_u32(bytes, 4)? as usize;
            let expected_len = 8 + count;
            if bytes.len() != expected_len {
                return Err(IdxError::LengthMismatch {
                    expected_len,
                    actual_len: bytes.len(),
                });
            }
            Ok(IdxContent::Labels(bytes[8..].to_vec()))
        }
        got => Err(IdxError::BadMagic { offset: 0, got }),
    }
}

/// A parsed image split: pixel tensor plus per-image labels.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl ImageSet {
    pub fn from_idx(images: IdxContent, labels: IdxContent) -> Result<Self, DataError> {
        match (images, labels) {
            (
                IdxContent::Images {
                    count,
                    rows,
                    cols,
                    pixels,
                },
                IdxContent::Labels(labels),
            ) => {
                if count != labels.len() {
                    return Err(DataError::LabelImageCountMismatch {
                        images: count,
                        labels: labels.len(),
                    });
                }
                Ok(Self {
                    rows,
                    cols,
                    pixels,
                    labels,
                })
            }
            _ => Err(DataError::DimensionMismatch),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image `i` as floats in [0, 1].
    pub fn image_f64(&self, i: usize) -> Vec<f64> {
        let n = self.rows * self.cols;
        self.pixels[i * n..(i + 1) * n]
            .iter()
            .map(|&p| p as f64 / 255.0)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Rotation
// ---------------------------------------------------------------------------

/// Rotates a square image about its center with bilinear interpolation.
///
/// Positive `degrees` rotate content counterclockwise in (row, col)
/// coordinates, i.e. a pixel at offset (dr, dc) from the center maps to
/// (dr cos t - dc sin t, dr sin t + dc cos t). Out-of-bounds source
/// coordinates read as 0; the output is clipped to [0, 1].
pub fn rotate_image(img: &[f64], side: usize, degrees: f64) -> Vec<f64> {
    debug_assert_eq!(img.len(), side * side);
    let theta = degrees.to_radians();
    let (s, c) = (sin(theta), cos(theta));
    let center = (side as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for col in 0..side {
            // Inverse map: rotate the destination offset by -theta.
            let dr = r as f64 - center;
            let dc = col as f64 - center;
            let sr = c * dr + s * dc + center;
            let sc = -s * dr + c * dc + center;
            let r0 = floor(sr);
            let c0 = floor(sc);
            let fr = sr - r0;
            let fc = sc - c0;
            let mut acc: f64 = 0.0;
            for (gr, wr) in [(r0, 1.0 - fr), (r0 + 1.0, fr)] {
                if !(0.0..side as f64).contains(&gr) {
                    continue;
                }
                for (gc, wc) in [(c0, 1.0 - fc), (c0 + 1.0, fc)] {
                    if !(0.0..side as f64).contains(&gc) {
                        continue;
                    }
                    acc += wr * wc * img[gr as usize * side + gc as usize];
                }
            }
            out[r * side + col] = acc.clamp(0.0, 1.0);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Case splits
// ---------------------------------------------------------------------------

/// Digit assignment for one experimental case. The three groups partition
/// the digits 1..=9; digit 0 is unused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseSplit {
    pub case_id: u8,
    pub normal_digits: [u8; 3],
    pub seen_digits: [u8; 3],
    pub unseen_digits: [u8; 3],
}

impl CaseSplit {
    pub fn from_id(case_id: u8) -> Result<Self, DataError> {
        match case_id {
            1 => Ok(Self {
                case_id,
                normal_digits: [1, 2, 3],
                seen_digits: [4, 5, 6],
                unseen_digits: [7, 8, 9],
            }),
            2 => Ok(Self {
                case_id,
                normal_digits: [4, 5, 6],
                seen_digits: [7, 8, 9],
                unseen_digits: [1, 2, 3],
            }),
            3 => Ok(Self {
                case_id,
                normal_digits: [7, 8, 9],
                seen_digits: [1, 2, 3],
                unseen_digits: [4, 5, 6],
            }),
            other => Err(DataError::UnknownCase(other)),
        }
    }

    pub fn all() -> [Self; 3] {
        [
            Self::from_id(1).unwrap(),
            Self::from_id(2).unwrap(),
            Self::from_id(3).unwrap(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct CaseBuildOptions {
    /// Target-domain rotation in degrees.
    pub rotation_degrees: f64,
    /// Cap on training images per digit group (one stratum draws from one
    /// group).
    pub train_cap_per_group: usize,
    /// Cap on test images per digit group and role.
    pub test_cap_per_group: usize,
    pub seed: u64,
}

impl Default for CaseBuildOptions {
    fn default() -> Self {
        Self {
            rotation_degrees: 45.0,
            train_cap_per_group: 1500,
            test_cap_per_group: 750,
            seed: 0,
        }
    }
}

/// Shuffled, capped indices of images whose digit is in `digits`.
fn select_group(
    set: &ImageSet,
    digits: &[u8; 3],
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..set.len())
        .filter(|&i| digits.contains(&set.labels[i]))
        .collect();
    idx.shuffle(rng);
    idx.truncate(cap);
    idx
}

fn make_samples(
    set: &ImageSet,
    indices: &[usize],
    class: ClassLabel,
    domain: DomainLabel,
    role: Role,
    rotation: Option<f64>,
) -> Vec<LabeledSample> {
    indices
        .iter()
        .map(|&i| {
            let x = match rotation {
                Some(deg) => rotate_image(&set.image_f64(i), set.rows, deg),
                None => set.image_f64(i),
            };
            LabeledSample {
                x,
                class,
                domain,
                digit: set.labels[i],
                role,
            }
        })
        .collect()
}

/// Assembles one case: source-domain strata from unrotated train-split
/// images, the target-domain training stratum and all test samples from
/// rotated images. Test samples come from the separate test split, so no
/// image appears in both training and test data.
pub fn build_case(
    case: &CaseSplit,
    train: &ImageSet,
    test: &ImageSet,
    opts: &CaseBuildOptions,
) -> Result<CaseDataset, DataError> {
    if train.rows != test.rows || train.cols != test.cols {
        return Err(DataError::DimensionMismatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let deg = opts.rotation_degrees;

    let ns_idx = select_group(train, &case.normal_digits, opts.train_cap_per_group, &mut rng);
    let as_idx = select_group(train, &case.seen_digits, opts.train_cap_per_group, &mut rng);
    let nt_idx = select_group(train, &case.normal_digits, opts.train_cap_per_group, &mut rng);
    let test_n_idx = select_group(test, &case.normal_digits, opts.test_cap_per_group, &mut rng);
    let test_s_idx = select_group(test, &case.seen_digits, opts.test_cap_per_group, &mut rng);
    let test_u_idx = select_group(test, &case.unseen_digits, opts.test_cap_per_group, &mut rng);

    let strata = TrainStrata {
        normal_source: make_samples(
            train,
            &ns_idx,
            ClassLabel::Normal,
            DomainLabel::Source,
            Role::Normal,
            None,
        ),
        anomaly_source: make_samples(
            train,
            &as_idx,
            ClassLabel::Anomaly,
            DomainLabel::Source,
            Role::SeenAnomaly,
            None,
        ),
        normal_target: make_samples(
            train,
            &nt_idx,
            ClassLabel::Normal,
            DomainLabel::Target,
            Role::Normal,
            Some(deg),
        ),
    };
    for (name, s) in [
        ("normal_source", &strata.normal_source),
        ("anomaly_source", &strata.anomaly_source),
        ("normal_target", &strata.normal_target),
    ] {
        if s.is_empty() {
            return Err(DataError::EmptyStratum(name));
        }
    }

    let mut test_samples = make_samples(
        test,
        &test_n_idx,
        ClassLabel::Normal,
        DomainLabel::Target,
        Role::Normal,
        Some(deg),
    );
    test_samples.extend(make_samples(
        test,
        &test_s_idx,
        ClassLabel::Anomaly,
        DomainLabel::Target,
        Role::SeenAnomaly,
        Some(deg),
    ));
    test_samples.extend(make_samples(
        test,
        &test_u_idx,
        ClassLabel::Anomaly,
        DomainLabel::Target,
        Role::UnseenAnomaly,
        Some(deg),
    ));

    Ok(CaseDataset {
        case: *case,
        train: strata,
        test: test_samples,
    })
}

// ---------------------------------------------------------------------------
// Synthetic domain-shift data with closed-form posteriors
// ---------------------------------------------------------------------------

/// Gaussian mixture construction for oracle tests. Both classes share a
/// diagonal covariance; the target domain is the source translated by
/// `shift`. When `shift` is orthogonal to the class axis under the
/// covariance metric, p(d | x, c) is exactly class-independent and
/// p(c | x, d) exactly domain-independent, so both importance-weight
/// identities hold with the closed-form ratios below.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub mean_normal: Vec<f64>,
    pub mean_anomaly: Vec<f64>,
    pub cov_diag: Vec<f64>,
    pub shift: Vec<f64>,
    /// p_A = p(c = A); p_N = 1 - p_A.
    pub class_prior_anomaly: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let d = self.mean_normal.len();
        if self.mean_anomaly.len() != d || self.cov_diag.len() != d || self.shift.len() != d {
            return Err(DataError::DimensionMismatch);
        }
        if self.cov_diag.iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err(DataError::NonPositiveVariance);
        }
        if !(self.class_prior_anomaly > 0.0 && self.class_prior_anomaly < 1.0) {
            return Err(DataError::InvalidClassPrior(self.class_prior_anomaly));
        }
        let ip: f64 = (0..d)
            .map(|i| self.shift[i] / self.cov_diag[i] * (self.mean_anomaly[i] - self.mean_normal[i]))
            .sum();
        if ip.abs() > 1e-9 {
            return Err(DataError::ShiftNotClassOrthogonal { inner_product: ip });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean_normal.len()
    }

    fn component_mean(&self, c: ClassLabel, d: DomainLabel) -> Vec<f64> {
        let base = match c {
            ClassLabel::Normal => &self.mean_normal,
            ClassLabel::Anomaly => &self.mean_anomaly,
        };
        match d {
            DomainLabel::Source => base.clone(),
            DomainLabel::Target => base.iter().zip(&self.shift).map(|(&m, &s)| m + s).collect(),
        }
    }

    /// log p(x | c, d)
    pub fn log_pdf_component(&self, c: ClassLabel, d: DomainLabel, x: &[f64]) -> f64 {
        let mean = self.component_mean(c, d);
        let mut acc = 0.0;
        for i in 0..self.dim() {
            let diff = x[i] - mean[i];
            acc += diff * diff / self.cov_diag[i] + log(self.cov_diag[i]) + LN_2PI;
        }
        -0.5 * acc
    }

    fn class_prior(&self, c: ClassLabel) -> f64 {
        match c {
            ClassLabel::Anomaly => self.class_prior_anomaly,
            ClassLabel::Normal => 1.0 - self.class_prior_anomaly,
        }
    }

    /// log p(x, c, d) under p(S) = p(T) = 1/2 and p(c | d) = p_c.
    pub fn log_pdf_joint(&self, c: ClassLabel, d: DomainLabel, x: &[f64]) -> f64 {
        self.log_pdf_component(c, d, x) + log(self.class_prior(c)) + log(0.5)
    }

    /// Closed-form p(d = T | x).
    pub fn prob_target_given_x(&self, x: &[f64]) -> f64 {
        let mut log_t = f64::NEG_INFINITY;
        let mut log_s = f64::NEG_INFINITY;
        for c in [ClassLabel::Normal, ClassLabel::Anomaly] {
            log_t = log_add_exp(log_t, self.log_pdf_joint(c, DomainLabel::Target, x));
            log_s = log_add_exp(log_s, self.log_pdf_joint(c, DomainLabel::Source, x));
        }
        let m = log_t.max(log_s);
        let et = exp(log_t - m);
        let es = exp(log_s - m);
        et / (et + es)
    }

    /// Closed-form p(c = A | x).
    pub fn prob_anomaly_given_x(&self, x: &[f64]) -> f64 {
        let mut log_a = f64::NEG_INFINITY;
        let mut log_n = f64::NEG_INFINITY;
        for d in [DomainLabel::Source, DomainLabel::Target] {
            log_a = log_add_exp(log_a, self.log_pdf_joint(ClassLabel::Anomaly, d, x));
            log_n = log_add_exp(log_n, self.log_pdf_joint(ClassLabel::Normal, d, x));
        }
        let m = log_a.max(log_n);
        let ea = exp(log_a - m);
        let en = exp(log_n - m);
        ea / (ea + en)
    }

    /// True density ratio p(d=T | x) / p(d=S | x).
    pub fn true_domain_ratio(&self, x: &[f64]) -> f64 {
        let p = self.prob_target_given_x(x);
        p / (1.0 - p)
    }

    /// True density ratio p(c=A | x) / p(c=N | x).
    pub fn true_class_ratio(&self, x: &[f64]) -> f64 {
        let p = self.prob_anomaly_given_x(x);
        p / (1.0 - p)
    }
}

/// Synthetic dataset: the three available training strata plus the held-out
/// (anomaly, target) block that only oracle evaluations may touch.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub strata: TrainStrata,
    pub heldout_anomaly_target: Vec<LabeledSample>,
}

/// Draws `n_per_stratum` samples for each of the four (class, domain)
/// combinations; the (A, T) block is returned as held-out data.
pub fn gen_synthetic(
    spec: &SyntheticSpec,
    n_per_stratum: usize,
    seed: u64,
) -> Result<SyntheticData, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |c: ClassLabel, d: DomainLabel| -> Vec<LabeledSample> {
        let mean = spec.component_mean(c, d);
        let role = match c {
            ClassLabel::Normal => Role::Normal,
            ClassLabel::Anomaly => Role::SeenAnomaly,
        };
        (0..n_per_stratum)
            .map(|_| {
                let x = mean
                    .iter()
                    .zip(&spec.cov_diag)
                    .map(|(&m, &v)| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        m + sqrt(v) * g
                    })
                    .collect();
                LabeledSample {
                    x,
                    class: c,
                    domain: d,
                    digit: 0,
                    role,
                }
            })
            .collect()
    };
    Ok(SyntheticData {
        strata: TrainStrata {
            normal_source: draw(ClassLabel::Normal, DomainLabel::Source),
            anomaly_source: draw(ClassLabel::Anomaly, DomainLabel::Source),
            normal_target: draw(ClassLabel::Normal, DomainLabel::Target),
        },
        heldout_anomaly_target: draw(ClassLabel::Anomaly, DomainLabel::Target),
    })
}
