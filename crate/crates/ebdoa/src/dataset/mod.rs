//! Dataset generation, feature extraction, record persistence, and WAV
//! ingestion. Records store everything needed to re-run either the network
//! or the classical beamformers on identical inputs: the trace-normalized
//! covariance feature, the supervision grid, the tagged true directions,
//! and the room geometry they came from.

mod wav;

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dcnn::TrainExample;
use crate::ebdsp::{CovarianceMatrix, time_cov};
use crate::error::{Error, Result};
use crate::roomsim::{
    DoaSet, RoomSpec, SourceKind, dist, encode_hoa, enumerate_images, first_order_truth,
    synth_source,
};
use crate::sphharm::{Direction, GridSpec, channel_count};
use crate::sps::{DEFAULT_SIGMA2, gaussian_label};

pub use wav::read_wav;

/// Minimum clearance between any wall and any source or microphone, and
/// (doubled) between the points themselves.
pub const WALL_MARGIN: f64 = 0.5;
pub const MIN_SEPARATION: f64 = 1.0;

const MAGIC: &[u8; 6] = b"EBDOA1";
const FORMAT_VERSION: u16 = 1;

/// Flattens a covariance row-major and divides by its trace, producing the
/// loudness-invariant length-`(N+1)^4` network feature.
pub fn featurize(cov: &CovarianceMatrix) -> Result<Vec<f64>> {
    let trace = cov.trace();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(Error::invalid(format!("covariance trace must be positive, got {trace}")));
    }
    let m = cov.matrix();
    let dim = cov.dim();
    let mut out = Vec::with_capacity(dim * dim);
    for r in 0..dim {
        for c in 0..dim {
            out.push(m[(r, c)] / trace);
        }
    }
    Ok(out)
}

/// Rebuilds the (unit-trace) covariance matrix from a stored feature
/// vector.
pub fn covariance_from_feature(feature: &[f64], order: usize) -> Result<CovarianceMatrix> {
    let dim = channel_count(order);
    if feature.len() != dim * dim {
        return Err(Error::invalid(format!(
            "feature length {} does not match a {dim}x{dim} covariance for order {order}",
            feature.len()
        )));
    }
    CovarianceMatrix::new(order, DMatrix::from_row_slice(dim, dim, feature))
}

/// One supervised example with its provenance. Bulk numeric payloads are
/// kept in the file's 32-bit precision so serialization round-trips
/// without loss; directions inside `truth` are likewise f32-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub feature: Vec<f32>,
    pub label: Vec<f32>,
    pub truth: DoaSet,
    pub room: [f32; 3],
    pub t60: f32,
    pub mic: [f32; 3],
    pub sources: Vec<[f32; 3]>,
    pub seed: u64,
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::invalid("record has no sources"));
        }
        if self.truth.len() != 7 * self.sources.len() {
            return Err(Error::invalid(format!(
                "record carries {} true directions for {} sources; expected 7 per source",
                self.truth.len(),
                self.sources.len()
            )));
        }
        if self.feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("record feature contains non-finite values"));
        }
        if self.label.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("record label values must lie in [0, 1]"));
        }
        if self.room.iter().any(|&d| !(d.is_finite() && d > 0.0)) || !(self.t60 > 0.0) {
            return Err(Error::invalid("record room geometry must be positive and finite"));
        }
        Ok(())
    }

    /// The feature widened back to f64 for the network.
    pub fn feature_f64(&self) -> Vec<f64> {
        self.feature.iter().map(|&v| v as f64).collect()
    }

    pub fn label_f64(&self) -> Vec<f64> {
        self.label.iter().map(|&v| v as f64).collect()
    }

    pub fn to_train_example(&self) -> TrainExample {
        TrainExample { feature: self.feature_f64(), label: self.label_f64() }
    }
}

/// Sampling ranges for dataset generation. Deserializes from TOML with
/// every field optional, falling back to the defaults.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub count: usize,
    pub sources_min: usize,
    pub sources_max: usize,
    pub t60_range: (f64, f64),
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub fs: f64,
    pub frame_len: usize,
    pub order: usize,
    pub image_order: u32,
    pub source_kind: SourceKind,
    pub master_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            count: 100,
            sources_min: 1,
            sources_max: 2,
            t60_range: (0.3, 1.0),
            room_min: [3.0, 3.0, 2.0],
            room_max: [10.0, 10.0, 4.0],
            fs: 16_000.0,
            frame_len: 5000,
            order: 4,
            image_order: 6,
            source_kind: SourceKind::SpeechLike,
            master_seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sources_min == 0 || self.sources_max < self.sources_min {
            return Err(Error::invalid("source count range must be non-empty and start at 1+"));
        }
        if self.sources_max > 8 {
            return Err(Error::invalid("more than 8 simultaneous sources is not supported"));
        }
        let (t_lo, t_hi) = self.t60_range;
        if !(t_lo.is_finite() && t_hi.is_finite() && 0.0 < t_lo && t_lo <= t_hi) {
            return Err(Error::invalid("t60 range must be positive and ordered"));
        }
        for axis in 0..3 {
            let (lo, hi) = (self.room_min[axis], self.room_max[axis]);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid("room ranges must be finite and ordered"));
            }
            if lo <= 2.0 * WALL_MARGIN {
                return Err(Error::invalid(format!(
                    "rooms of {lo} m leave no interior after the {WALL_MARGIN} m wall margin"
                )));
            }
        }
        if self.frame_len == 0 {
            return Err(Error::invalid("frame length must be positive"));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if self.order == 0 || self.order > crate::sphharm::MAX_ORDER {
            return Err(Error::invalid(format!(
                "hoa order must be in 1..={}",
                crate::sphharm::MAX_ORDER
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for record `index` under `master`. Records are generated from
/// independent streams, so any subset can be regenerated without the rest.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

fn draw_point(rng: &mut ChaCha8Rng, room: &RoomSpec) -> [f64; 3] {
    [
        rng.random_range(WALL_MARGIN..room.lx() - WALL_MARGIN),
        rng.random_range(WALL_MARGIN..room.ly() - WALL_MARGIN),
        rng.random_range(WALL_MARGIN..room.lz() - WALL_MARGIN),
    ]
}

fn generate_record(cfg: &GenConfig, index: u64) -> Result<DatasetRecord> {
    let seed = derive_seed(cfg.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut placed: Option<(RoomSpec, [f64; 3], Vec<[f64; 3]>)> = None;
    'attempt: for _ in 0..64 {
        let dims: Vec<f64> = (0..3)
            .map(|a| rng.random_range(cfg.room_min[a]..=cfg.room_max[a]))
            .collect();
        let t60 = rng.random_range(cfg.t60_range.0..=cfg.t60_range.1);
        let room = match RoomSpec::new(dims[0], dims[1], dims[2], t60) {
            Ok(r) => r,
            Err(Error::InfeasibleRoom { .. }) => continue,
            Err(e) => return Err(e),
        };
        let mic = draw_point(&mut rng, &room);
        let n_sources = rng.random_range(cfg.sources_min..=cfg.sources_max);
        let mut sources: Vec<[f64; 3]> = Vec::with_capacity(n_sources);
        for _ in 0..n_sources {
            let mut ok = false;
            for _ in 0..128 {
                let p = draw_point(&mut rng, &room);
                let clear = dist(p, mic) >= MIN_SEPARATION
                    && sources.iter().all(|&s| dist(p, s) >= MIN_SEPARATION);
                if clear {
                    sources.push(p);
                    ok = true;
                    break;
                }
            }
            if !ok {
                continue 'attempt;
            }
        }
        placed = Some((room, mic, sources));
        break;
    }
    let Some((room, mic, sources)) = placed else {
        return Err(Error::invalid(
            "could not place sources and microphone within the configured ranges \
             after 64 attempts",
        ));
    };

    let mut frame = crate::roomsim::HoaFrame::zeros(cfg.order, cfg.fs, cfg.frame_len)?;
    let mut truth = DoaSet::new();
    for (s, &src) in sources.iter().enumerate() {
        let images = enumerate_images(&room, src, mic, cfg.image_order)?;
        let signal = synth_source(&cfg.source_kind, cfg.frame_len, cfg.fs, rng.random())?;
        let encoded = encode_hoa(&images, mic, &signal, cfg.order, cfg.fs)?;
        frame.add_assign(&encoded)?;
        truth.extend(&first_order_truth(&images, mic)?.retagged(s as u8));
    }

    // Quantize the truth before building the label so the stored grid
    // matches what a reader reconstructs from the stored directions.
    let mut truth32 = DoaSet::new();
    for e in truth.entries() {
        let az = e.direction.azimuth() as f32 as f64;
        let el = (e.direction.elevation() as f32 as f64).clamp(-90.0, 90.0);
        truth32.push(Direction::new(az, el)?, e.source_id);
    }

    let cov = time_cov(&frame)?;
    let feature = featurize(&cov)?;
    let label = gaussian_label(&truth32, GridSpec::default(), DEFAULT_SIGMA2)?;

    let record = DatasetRecord {
        feature: feature.iter().map(|&v| v as f32).collect(),
        label: label.values().iter().map(|&v| v as f32).collect(),
        truth: truth32,
        room: [room.lx() as f32, room.ly() as f32, room.lz() as f32],
        t60: room.t60() as f32,
        mic: [mic[0] as f32, mic[1] as f32, mic[2] as f32],
        sources: sources.iter().map(|&s| [s[0] as f32, s[1] as f32, s[2] as f32]).collect(),
        seed,
    };
    record.validate()?;
    Ok(record)
}

/// Generates `cfg.count` records in memory. Record `i` depends only on the
/// master seed and `i`.
pub fn generate_records(cfg: &GenConfig) -> Result<Vec<DatasetRecord>> {
    cfg.validate()?;
    (0..cfg.count as u64).map(|i| generate_record(cfg, i)).collect()
}

/// Generates a dataset and writes it to `path`, plus a human-readable
/// `<path>.manifest` describing the draw. Output bytes depend only on the
/// configuration.
pub fn generate_dataset(cfg: &GenConfig, path: &Path) -> Result<()> {
    let records = generate_records(cfg)?;
    write_records(path, &records)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "format: EBDOA1 v{FORMAT_VERSION}");
    let _ = writeln!(manifest, "records: {}", records.len());
    let _ = writeln!(manifest, "master-seed: {}", cfg.master_seed);
    let _ = writeln!(manifest, "order: {}", cfg.order);
    let _ = writeln!(manifest, "fs: {}", cfg.fs);
    let _ = writeln!(manifest, "frame: {}", cfg.frame_len);
    let _ = writeln!(manifest, "image-order: {}", cfg.image_order);
    let _ = writeln!(manifest, "sources: {}..{}", cfg.sources_min, cfg.sources_max);
    let _ = writeln!(manifest, "t60: {}..{}", cfg.t60_range.0, cfg.t60_range.1);
    let _ = writeln!(
        manifest,
        "room-min: {},{},{}",
        cfg.room_min[0], cfg.room_min[1], cfg.room_min[2]
    );
    let _ = writeln!(
        manifest,
        "room-max: {},{},{}",
        cfg.room_max[0], cfg.room_max[1], cfg.room_max[2]
    );
    let _ = writeln!(manifest, "source-kind: {}", cfg.source_kind);
    let manifest_path = {
        let mut os = path.as_os_str().to_owned();
        os.push(".manifest");
        std::path::PathBuf::from(os)
    };
    std::fs::write(manifest_path, manifest)?;
    Ok(())
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Writes records in the `EBDOA1` binary layout. Every record is validated
/// first so files on disk are always well-formed.
pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| Error::invalid(format!("record {i}: {e}")))?;
        if r.truth.len() > u8::MAX as usize || r.sources.len() > u8::MAX as usize {
            return Err(Error::invalid(format!("record {i}: too many sources to serialize")));
        }
    }
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    writer.write_all(MAGIC)?;
    writer.write_all(&FORMAT_VERSION.to_le_bytes())?;
    writer.write_all(&(records.len() as u64).to_le_bytes())?;
    let mut buf = Vec::new();
    for r in records {
        buf.clear();
        buf.extend_from_slice(&r.seed.to_le_bytes());
        for &d in &r.room {
            put_f32(&mut buf, d);
        }
        put_f32(&mut buf, r.t60);
        for &m in &r.mic {
            put_f32(&mut buf, m);
        }
        buf.push(r.sources.len() as u8);
        for s in &r.sources {
            for &c in s {
                put_f32(&mut buf, c);
            }
        }
        buf.push(r.truth.len() as u8);
        for e in r.truth.entries() {
            put_f32(&mut buf, e.direction.azimuth() as f32);
            put_f32(&mut buf, e.direction.elevation() as f32);
            buf.push(e.source_id);
        }
        buf.extend_from_slice(&(r.feature.len() as u32).to_le_bytes());
        for &v in &r.feature {
            put_f32(&mut buf, v);
        }
        buf.extend_from_slice(&(r.label.len() as u32).to_le_bytes());
        for &v in &r.label {
            put_f32(&mut buf, v);
        }
        writer.write_all(&buf)?;
    }
    writer.flush()?;
    Ok(())
}

/// Streaming record reader; yields one record at a time.
pub struct RecordReader {
    reader: BufReader<File>,
    path: std::path::PathBuf,
    remaining: u64,
    index: u64,
}

impl RecordReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut reader = BufReader::new(file);
        let mut magic = [0u8; 6];
        read_fully(&mut reader, &mut magic, path, "file header")?;
        if &magic != MAGIC {
            return Err(Error::format(path, "bad magic; not an EBDOA1 dataset"));
        }
        let mut version = [0u8; 2];
        read_fully(&mut reader, &mut version, path, "format version")?;
        let version = u16::from_le_bytes(version);
        if version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported format version {version}, this build reads {FORMAT_VERSION}"),
            ));
        }
        let mut count = [0u8; 8];
        read_fully(&mut reader, &mut count, path, "record count")?;
        Ok(Self {
            reader,
            path: path.to_path_buf(),
            remaining: u64::from_le_bytes(count),
            index: 0,
        })
    }

    /// Records left to read.
    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    fn read_record(&mut self) -> Result<DatasetRecord> {
        let index = self.index;
        let path = self.path.clone();
        let reader = &mut self.reader;
        let mut u8buf = [0u8; 1];
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];

        read_fully(reader, &mut u64buf, &path, &format!("record {index} seed"))?;
        let seed = u64::from_le_bytes(u64buf);
        let mut room = [0f32; 3];
        for d in &mut room {
            *d = read_f32(reader, &path, index, "room dimensions")?;
        }
        let t60 = read_f32(reader, &path, index, "t60")?;
        let mut mic = [0f32; 3];
        for m in &mut mic {
            *m = read_f32(reader, &path, index, "microphone position")?;
        }
        read_fully(reader, &mut u8buf, &path, &format!("record {index} source count"))?;
        let n_sources = u8buf[0] as usize;
        let mut sources = Vec::new();
        for _ in 0..n_sources {
            let mut p = [0f32; 3];
            for c in &mut p {
                *c = read_f32(reader, &path, index, "source position")?;
            }
            sources.push(p);
        }
        read_fully(reader, &mut u8buf, &path, &format!("record {index} truth count"))?;
        let n_truth = u8buf[0] as usize;
        let mut truth = DoaSet::new();
        for _ in 0..n_truth {
            let az = read_f32(reader, &path, index, "truth azimuth")?;
            let el = read_f32(reader, &path, index, "truth elevation")?;
            read_fully(reader, &mut u8buf, &path, &format!("record {index} truth tag"))?;
            let dir = Direction::new(az as f64, el as f64).map_err(|e| {
                Error::format(&path, format!("record {index}: invalid true direction: {e}"))
            })?;
            truth.push(dir, u8buf[0]);
        }
        read_fully(reader, &mut u32buf, &path, &format!("record {index} feature length"))?;
        let feature_len = u32::from_le_bytes(u32buf) as usize;
        if feature_len > 1_000_000 {
            return Err(Error::format(
                &path,
                format!("record {index}: implausible feature length {feature_len}"),
            ));
        }
        let mut feature = vec![0f32; feature_len];
        for v in &mut feature {
            *v = read_f32(reader, &path, index, "feature values")?;
        }
        read_fully(reader, &mut u32buf, &path, &format!("record {index} label length"))?;
        let label_len = u32::from_le_bytes(u32buf) as usize;
        if label_len > 10_000_000 {
            return Err(Error::format(
                &path,
                format!("record {index}: implausible label length {label_len}"),
            ));
        }
        let mut label = vec![0f32; label_len];
        for v in &mut label {
            *v = read_f32(reader, &path, index, "label values")?;
        }

        let record = DatasetRecord { feature, label, truth, room, t60, mic, sources, seed };
        record
            .validate()
            .map_err(|e| Error::format(&path, format!("record {index}: {e}")))?;
        self.index += 1;
        Ok(record)
    }
}

impl Iterator for RecordReader {
    type Item = Result<DatasetRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            // A well-formed file ends exactly at the last record.
            let mut probe = [0u8; 1];
            return match self.reader.read(&mut probe) {
                Ok(0) => None,
                Ok(_) => Some(Err(Error::format(
                    &self.path,
                    "trailing bytes after the last record",
                ))),
                Err(e) => Some(Err(e.into())),
            };
        }
        self.remaining -= 1;
        Some(self.read_record())
    }
}

fn read_fully(reader: &mut BufReader<File>, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, format!("unexpected end of file while reading {what}"))
        } else {
            e.into()
        }
    })
}

fn read_f32(reader: &mut BufReader<File>, path: &Path, index: u64, what: &str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_fully(reader, &mut b, path, &format!("record {index} {what}"))?;
    Ok(f32::from_le_bytes(b))
}

/// Reads a whole dataset into memory, including the trailing-bytes check.
pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    let mut reader = RecordReader::open(path)?;
    let mut out = Vec::new();
    for record in &mut reader {
        out.push(record?);
    }
    Ok(out)
}

/// Seeded shuffle followed by a split at `round(n * train_fraction)`.
pub fn split(
    records: Vec<DatasetRecord>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let mut records = records;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);
    let train_count = ((records.len() as f64) * train_fraction).round() as usize;
    let test = records.split_off(train_count.min(records.len()));
    Ok((records, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::path::PathBuf;

    fn random_psd(dim: usize, seed: u64) -> CovarianceMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let m = &b * b.transpose();
        // Exact symmetry for the constructor.
        let sym = DMatrix::from_fn(dim, dim, |r, c| if r <= c { m[(r, c)] } else { m[(c, r)] });
        CovarianceMatrix::new(4, sym).unwrap()
    }

    #[test]
    fn featurize_identity_covariance() {
        let cov = CovarianceMatrix::new(4, DMatrix::identity(25, 25)).unwrap();
        let f = featurize(&cov).unwrap();
        assert_eq!(f.len(), 625);
        for r in 0..25 {
            for c in 0..25 {
                let expected = if r == c { 1.0 / 25.0 } else { 0.0 };
                assert_relative_eq!(f[r * 25 + c], expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn featurize_is_scale_invariant_and_invertible() {
        let cov = random_psd(25, 3);
        let f = featurize(&cov).unwrap();
        let scaled = CovarianceMatrix::new(4, cov.matrix() * 7.25).unwrap();
        let f_scaled = featurize(&scaled).unwrap();
        for (a, b) in f.iter().zip(&f_scaled) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-15);
        }

        let rebuilt = covariance_from_feature(&f, 4).unwrap();
        let recovered = rebuilt.matrix() * cov.trace();
        for r in 0..25 {
            for c in 0..25 {
                assert_relative_eq!(
                    recovered[(r, c)],
                    cov.matrix()[(r, c)],
                    max_relative = 1e-12,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn featurize_rejects_zero_trace() {
        let cov = CovarianceMatrix::new(4, DMatrix::zeros(25, 25)).unwrap();
        assert!(featurize(&cov).is_err());
    }

    fn small_cfg() -> GenConfig {
        GenConfig {
            count: 3,
            frame_len: 800,
            image_order: 2,
            master_seed: 11,
            ..GenConfig::default()
        }
    }

    #[test]
    fn generated_records_satisfy_the_documented_invariants() {
        let records = generate_records(&small_cfg()).unwrap();
        assert_eq!(records.len(), 3);
        for r in &records {
            r.validate().unwrap();
            assert!(r.t60 >= 0.3 && r.t60 <= 1.0);
            assert!(matches!(r.truth.len(), 7 | 14));
            assert_eq!(r.feature.len(), 625);
            assert_eq!(r.label.len(), 7200);
            let cfg = small_cfg();
            for (axis, &d) in r.room.iter().enumerate() {
                let d = d as f64;
                assert!(d >= cfg.room_min[axis] - 1e-5 && d <= cfg.room_max[axis] + 1e-5);
            }
            // Positions respect the wall margin and pairwise separation.
            let pts: Vec<[f32; 3]> =
                r.sources.iter().copied().chain([r.mic]).collect();
            for p in &pts {
                for axis in 0..3 {
                    assert!(p[axis] >= 0.5 - 1e-6);
                    assert!(p[axis] <= r.room[axis] - 0.5 + 1e-6);
                }
            }
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let d2: f32 = (0..3)
                        .map(|a| (pts[i][a] - pts[j][a]) * (pts[i][a] - pts[j][a]))
                        .sum();
                    assert!(d2.sqrt() >= 1.0 - 1e-5);
                }
            }

            // The stored feature reshapes to a symmetric PSD matrix with
            // unit trace.
            let cov = covariance_from_feature(&r.feature_f64(), 4).unwrap();
            assert_relative_eq!(cov.trace(), 1.0, epsilon = 1e-6);
            let eigen = cov.matrix().clone().symmetric_eigen();
            for &ev in eigen.eigenvalues.iter() {
                assert!(ev > -1e-6, "eigenvalue {ev} below tolerance");
            }

            // Direct paths appear first per source and labels peak at 1.
            assert_eq!(r.truth.entries()[0].source_id, 0);
            let max = r.label.iter().cloned().fold(f32::MIN, f32::max);
            assert!((max - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn generation_is_deterministic_and_prefix_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ds");
        let b = dir.path().join("b.ds");
        generate_dataset(&small_cfg(), &a).unwrap();
        generate_dataset(&small_cfg(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(
            std::fs::read(a.with_extension("ds.manifest")).unwrap(),
            std::fs::read(b.with_extension("ds.manifest")).unwrap()
        );

        // Each record depends only on (master seed, index), so a shorter
        // run is a prefix of a longer one.
        let long = generate_records(&GenConfig { count: 3, ..small_cfg() }).unwrap();
        let short = generate_records(&GenConfig { count: 2, ..small_cfg() }).unwrap();
        assert_eq!(&long[..2], &short[..]);
    }

    #[test]
    fn records_round_trip_through_the_file_format() {
        let records = generate_records(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.ds");
        write_records(&path, &records).unwrap();
        let loaded = read_records(&path).unwrap();
        assert_eq!(records, loaded);

        // Streaming agrees with the bulk read.
        let streamed: Vec<DatasetRecord> =
            RecordReader::open(&path).unwrap().map(|r| r.unwrap()).collect();
        assert_eq!(records, streamed);

        // Writing what was read reproduces the bytes.
        let copy = dir.path().join("copy.ds");
        write_records(&copy, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&copy).unwrap());
    }

    #[test]
    fn corrupt_dataset_files_error_with_context() {
        let records = generate_records(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.ds");
        write_records(&path, &records).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad_magic = dir.path().join("magic.ds");
        let mut m = bytes.clone();
        m[0] = b'Z';
        std::fs::write(&bad_magic, m).unwrap();
        assert!(matches!(read_records(&bad_magic), Err(Error::Format { .. })));

        let bad_version = dir.path().join("version.ds");
        let mut v = bytes.clone();
        v[6] = 9;
        std::fs::write(&bad_version, v).unwrap();
        assert!(matches!(read_records(&bad_version), Err(Error::Format { .. })));

        let truncated = dir.path().join("short.ds");
        std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_records(&truncated), Err(Error::Format { .. })));

        let trailing = dir.path().join("long.ds");
        let mut t = bytes.clone();
        t.extend_from_slice(&[1, 2, 3]);
        std::fs::write(&trailing, t).unwrap();
        assert!(matches!(read_records(&trailing), Err(Error::Format { .. })));

        let empty = dir.path().join("empty.ds");
        std::fs::write(&empty, b"").unwrap();
        assert!(matches!(read_records(&empty), Err(Error::Format { .. })));
    }

    #[test]
    fn split_is_exhaustive_disjoint_and_seeded() {
        let mut records = generate_records(&small_cfg()).unwrap();
        // Clone up to ten records with distinct seeds as identities.
        while records.len() < 10 {
            let mut r = records[records.len() % 3].clone();
            r.seed = records.len() as u64;
            records.push(r);
        }
        let (train, test) = split(records.clone(), 0.8, 5).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        let mut seen: Vec<u64> = train.iter().chain(&test).map(|r| r.seed).collect();
        seen.sort_unstable();
        let mut expected: Vec<u64> = records.iter().map(|r| r.seed).collect();
        expected.sort_unstable();
        assert_eq!(seen, expected);

        let (train2, test2) = split(records.clone(), 0.8, 5).unwrap();
        assert_eq!(train.iter().map(|r| r.seed).collect::<Vec<_>>(),
                   train2.iter().map(|r| r.seed).collect::<Vec<_>>());
        assert_eq!(test.iter().map(|r| r.seed).collect::<Vec<_>>(),
                   test2.iter().map(|r| r.seed).collect::<Vec<_>>());

        assert!(split(records.clone(), 0.0, 1).is_err());
        assert!(split(records, 1.0, 1).is_err());
    }

    #[test]
    fn gen_config_deserializes_partial_toml_over_defaults() {
        let cfg: GenConfig =
            toml::from_str("count = 5\nsource_kind = \"white\"\nt60_range = [0.4, 0.8]").unwrap();
        assert_eq!(cfg.count, 5);
        assert_eq!(cfg.source_kind, SourceKind::White);
        assert_eq!(cfg.t60_range, (0.4, 0.8));
        assert_eq!(cfg.order, GenConfig::default().order);
        assert_eq!(cfg.frame_len, GenConfig::default().frame_len);

        let file: GenConfig = toml::from_str("source_kind = \"file:/tmp/a.wav\"").unwrap();
        assert_eq!(file.source_kind, SourceKind::File(PathBuf::from("/tmp/a.wav")));

        assert!(toml::from_str::<GenConfig>("no_such_key = 1").is_err());
        assert!(toml::from_str::<GenConfig>("source_kind = \"pink\"").is_err());

        let text = toml::to_string(&GenConfig::default()).unwrap();
        let back: GenConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, GenConfig::default());
    }
}
