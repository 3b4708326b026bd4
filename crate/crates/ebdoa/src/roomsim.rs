//! Shoebox room simulation: image-source enumeration, source signal
//! synthesis, and encoding of the resulting sound field into higher-order
//! ambisonic channels.

use std::f64::consts::TAU;
use std::path::PathBuf;

use rand::SeedableRng;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::sphharm::{Direction, channel_count, manifold_vector};

/// Speed of sound in metres per second used throughout the simulator.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Distance floor applied to the spherical spreading loss so that sources
/// arbitrarily close to the microphone cannot produce unbounded amplitudes.
pub const MIN_SPREADING_DISTANCE: f64 = 0.1;

/// Euclidean distance between two points.
pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// A rectangular room with a uniform target reverberation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomSpec {
    lx: f64,
    ly: f64,
    lz: f64,
    t60: f64,
    c: f64,
}

impl RoomSpec {
    /// Creates a room with the default [`SPEED_OF_SOUND`].
    ///
    /// Fails if any dimension or the reverberation time is non-positive, or
    /// if the requested reverberation time is unreachable even with fully
    /// absorbing walls (Sabine absorption coefficient of one or more).
    pub fn new(lx: f64, ly: f64, lz: f64, t60: f64) -> Result<Self> {
        Self::with_speed(lx, ly, lz, t60, SPEED_OF_SOUND)
    }

    /// Same as [`RoomSpec::new`] with an explicit speed of sound.
    pub fn with_speed(lx: f64, ly: f64, lz: f64, t60: f64, c: f64) -> Result<Self> {
        for (name, v) in [("lx", lx), ("ly", ly), ("lz", lz), ("t60", t60), ("c", c)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!("room parameter {name} must be finite and positive, got {v}")));
            }
        }
        let room = Self { lx, ly, lz, t60, c };
        let alpha = room.sabine_alpha();
        if alpha >= 1.0 {
            return Err(Error::InfeasibleRoom { lx, ly, lz, t60, alpha });
        }
        Ok(room)
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn lz(&self) -> f64 {
        self.lz
    }

    pub fn t60(&self) -> f64 {
        self.t60
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.c
    }

    pub fn volume(&self) -> f64 {
        self.lx * self.ly * self.lz
    }

    pub fn surface_area(&self) -> f64 {
        2.0 * (self.lx * self.ly + self.lx * self.lz + self.ly * self.lz)
    }

    /// Uniform Sabine absorption coefficient matching the target
    /// reverberation time: `alpha = 0.161 V / (S T60)`.
    pub fn sabine_alpha(&self) -> f64 {
        0.161 * self.volume() / (self.surface_area() * self.t60)
    }

    /// Uniform wall reflection coefficient `beta = sqrt(1 - alpha)`.
    pub fn sabine_beta(&self) -> f64 {
        (1.0 - self.sabine_alpha()).sqrt()
    }

    /// True when the point lies strictly inside the room.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        p[0] > 0.0 && p[0] < self.lx && p[1] > 0.0 && p[1] < self.ly && p[2] > 0.0 && p[2] < self.lz
    }

    fn require_inside(&self, name: &str, p: [f64; 3]) -> Result<()> {
        if !p.iter().all(|v| v.is_finite()) || !self.contains(p) {
            return Err(Error::Geometry {
                context: format!("{name} position"),
                expected: format!("strictly inside {} x {} x {} m room", self.lx, self.ly, self.lz),
                actual: format!("({}, {}, {})", p[0], p[1], p[2]),
            });
        }
        Ok(())
    }
}

/// One mirrored copy of a source produced by the image-source model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    /// Mirrored source position in metres (may lie outside the room).
    pub position: [f64; 3],
    /// Total number of wall reflections encountered by this path.
    pub order: u32,
    /// Linear gain including wall absorption and spherical spreading.
    pub amplitude: f64,
    /// Propagation delay from the image to the microphone in seconds.
    pub delay: f64,
}

/// Per-axis mirrored coordinates with their reflection counts, up to the
/// given order budget.
fn axis_variants(s: f64, room_len: f64, budget: u32) -> Vec<(f64, u32)> {
    let budget = budget as i64;
    let mut out = Vec::new();
    // Mirrored coordinate (-1)^p * s + 2 m L with p in {0, 1} hits
    // |2m - p| walls along this axis.
    for p in 0..=1i64 {
        let a = p - budget;
        let lo = a.div_euclid(2) + i64::from(a.rem_euclid(2) != 0);
        let hi = (p + budget).div_euclid(2);
        for m in lo..=hi {
            let coord = if p == 0 { s } else { -s } + 2.0 * m as f64 * room_len;
            out.push((coord, (2 * m - p).unsigned_abs() as u32));
        }
    }
    out
}

/// Enumerates every image source whose total reflection order is at most
/// `max_order`, with amplitudes combining wall absorption (`beta^order`) and
/// distance attenuation, and exact (unquantized) propagation delays.
pub fn enumerate_images(
    room: &RoomSpec,
    src: [f64; 3],
    mic: [f64; 3],
    max_order: u32,
) -> Result<Vec<ImageSource>> {
    room.require_inside("source", src)?;
    room.require_inside("microphone", mic)?;
    if dist(src, mic) == 0.0 {
        return Err(Error::invalid("source and microphone positions coincide"));
    }

    let beta = room.sabine_beta();
    let mut beta_pow = vec![1.0; max_order as usize + 1];
    for k in 1..beta_pow.len() {
        beta_pow[k] = beta_pow[k - 1] * beta;
    }

    let xs = axis_variants(src[0], room.lx, max_order);
    let mut images = Vec::new();
    for &(x, ox) in &xs {
        if ox > max_order {
            continue;
        }
        let ys = axis_variants(src[1], room.ly, max_order - ox);
        for &(y, oy) in &ys {
            if ox + oy > max_order {
                continue;
            }
            let zs = axis_variants(src[2], room.lz, max_order - ox - oy);
            for &(z, oz) in &zs {
                let order = ox + oy + oz;
                if order > max_order {
                    continue;
                }
                let position = [x, y, z];
                let d = dist(position, mic);
                images.push(ImageSource {
                    position,
                    order,
                    amplitude: beta_pow[order as usize] / d.max(MIN_SPREADING_DISTANCE),
                    delay: d / room.c,
                });
            }
        }
    }
    Ok(images)
}

/// A direction of arrival tagged with the source that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoaEntry {
    pub direction: Direction,
    pub source_id: u8,
}

/// An ordered collection of arrival directions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DoaSet {
    entries: Vec<DoaEntry>,
}

impl DoaSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from bare directions, all tagged with source id 0.
    pub fn from_directions(dirs: impl IntoIterator<Item = Direction>) -> Self {
        Self { entries: dirs.into_iter().map(|direction| DoaEntry { direction, source_id: 0 }).collect() }
    }

    pub fn push(&mut self, direction: Direction, source_id: u8) {
        self.entries.push(DoaEntry { direction, source_id });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DoaEntry] {
        &self.entries
    }

    pub fn directions(&self) -> impl Iterator<Item = Direction> + '_ {
        self.entries.iter().map(|e| e.direction)
    }

    /// Returns the same directions retagged with a single source id.
    pub fn retagged(mut self, source_id: u8) -> Self {
        for e in &mut self.entries {
            e.source_id = source_id;
        }
        self
    }

    pub fn extend(&mut self, other: &DoaSet) {
        self.entries.extend_from_slice(&other.entries);
    }
}

/// Extracts the ground-truth arrival directions from an image expansion: the
/// direct path first, followed by the six first-order wall reflections in
/// enumeration order. All entries carry source id 0.
pub fn first_order_truth(images: &[ImageSource], mic: [f64; 3]) -> Result<DoaSet> {
    if !images.iter().any(|i| i.order == 0) {
        return Err(Error::invalid("image list does not contain the direct path (order 0)"));
    }
    let mut picked: Vec<&ImageSource> = images.iter().filter(|i| i.order <= 1).collect();
    picked.sort_by_key(|i| i.order);
    let mut set = DoaSet::new();
    for image in picked {
        set.push(Direction::from_vector(sub(image.position, mic))?, 0);
    }
    Ok(set)
}

/// What kind of excitation signal a simulated source emits.
///
/// The textual form used in manifests and config files is `speech-like`,
/// `white`, or `file:<path>`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SourceKind {
    /// Modulated low-pass noise with speech-like envelope and spectrum.
    SpeechLike,
    /// Stationary white Gaussian noise.
    White,
    /// An excerpt from a 16 kHz 16-bit PCM WAVE file.
    File(PathBuf),
}

impl std::fmt::Display for SourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceKind::SpeechLike => f.write_str("speech-like"),
            SourceKind::White => f.write_str("white"),
            SourceKind::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl std::str::FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech-like" => Ok(SourceKind::SpeechLike),
            "white" => Ok(SourceKind::White),
            _ => s
                .strip_prefix("file:")
                .filter(|p| !p.is_empty())
                .map(|p| SourceKind::File(PathBuf::from(p)))
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "unknown source kind {s:?} (expected speech-like, white, or file:<path>)"
                    ))
                }),
        }
    }
}

impl From<SourceKind> for String {
    fn from(kind: SourceKind) -> String {
        kind.to_string()
    }
}

impl TryFrom<String> for SourceKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

fn remove_mean_and_normalize(signal: &mut [f64]) -> Result<()> {
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    for s in signal.iter_mut() {
        *s -= mean;
    }
    let rms = (signal.iter().map(|s| s * s).sum::<f64>() / signal.len() as f64).sqrt();
    if rms < 1e-12 {
        return Err(Error::Numerical("source signal is silent after mean removal".into()));
    }
    for s in signal.iter_mut() {
        *s /= rms;
    }
    Ok(())
}

fn one_pole_lowpass(signal: &mut [f64], cutoff_hz: f64, fs: f64) {
    let a = (-TAU * cutoff_hz / fs).exp();
    let mut state = 0.0;
    for s in signal.iter_mut() {
        state = a * state + (1.0 - a) * *s;
        *s = state;
    }
}

fn synth_speech_like(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let ramp_len = ((0.02 * fs) as usize).max(1);
    let mut t = 0usize;
    while t < len {
        let voiced = ((rng.random_range(0.15..0.40) * fs) as usize).max(1);
        let f_syl = rng.random_range(2.5..6.0);
        let phase = rng.random_range(0.0..TAU);
        for i in 0..voiced.min(len - t) {
            let edge = i.min(voiced - 1 - i).min(ramp_len) as f64 / ramp_len as f64;
            let syllabic = 0.3 + 0.35 * (1.0 - (TAU * f_syl * i as f64 / fs + phase).cos());
            let noise: f64 = StandardNormal.sample(rng);
            out[t + i] = edge * syllabic * noise;
        }
        t += voiced;
        t += (rng.random_range(0.05..0.15) * fs) as usize;
    }
    // Two cascaded poles give a spectral tilt that keeps most energy below
    // 1 kHz, roughly matching long-term speech spectra.
    one_pole_lowpass(&mut out, 900.0, fs);
    one_pole_lowpass(&mut out, 900.0, fs);
    out
}

/// Synthesizes (or loads) a mono source signal of exactly `len` samples at
/// sample rate `fs`, zero-mean and normalized to unit RMS. The same `seed`
/// always yields the same signal; for [`SourceKind::File`] the seed picks
/// the excerpt offset.
pub fn synth_source(kind: &SourceKind, len: usize, fs: f64, seed: u64) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::invalid("source length must be positive"));
    }
    if !fs.is_finite() || fs <= 0.0 {
        return Err(Error::invalid(format!("sample rate must be finite and positive, got {fs}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut signal = match kind {
        SourceKind::White => (0..len).map(|_| StandardNormal.sample(&mut rng)).collect(),
        SourceKind::SpeechLike => synth_speech_like(len, fs, &mut rng),
        SourceKind::File(path) => {
            let (samples, file_fs) = crate::dataset::read_wav(path)?;
            if f64::from(file_fs) != fs {
                return Err(Error::invalid(format!(
                    "requested sample rate {fs} Hz does not match file rate {file_fs} Hz"
                )));
            }
            if samples.len() < len {
                return Err(Error::Wav {
                    path: path.clone(),
                    detail: format!("file has {} samples, need at least {len}", samples.len()),
                });
            }
            let offset = rng.random_range(0..=samples.len() - len);
            samples[offset..offset + len].to_vec()
        }
    };
    remove_mean_and_normalize(&mut signal)?;
    Ok(signal)
}

/// A block of time-domain ambisonic channel signals. Channels are stored
/// contiguously so per-channel operations stay cache-friendly.
#[derive(Debug, Clone, PartialEq)]
pub struct HoaFrame {
    order: usize,
    fs: f64,
    len: usize,
    data: Vec<f64>,
}

impl HoaFrame {
    /// An all-zero frame for the given ambisonic order.
    pub fn zeros(order: usize, fs: f64, len: usize) -> Result<Self> {
        if order > crate::sphharm::MAX_ORDER {
            return Err(Error::invalid(format!(
                "ambisonic order {order} exceeds supported maximum {}",
                crate::sphharm::MAX_ORDER
            )));
        }
        if len == 0 {
            return Err(Error::invalid("frame length must be positive"));
        }
        if !fs.is_finite() || fs <= 0.0 {
            return Err(Error::invalid(format!("sample rate must be finite and positive, got {fs}")));
        }
        let channels = channel_count(order);
        Ok(Self { order, fs, len, data: vec![0.0; channels * len] })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        channel_count(self.order)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    /// Copies the final `n` samples of every channel into a new frame.
    pub fn trailing_window(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len {
            return Err(Error::invalid(format!(
                "window of {n} samples does not fit in frame of {} samples",
                self.len
            )));
        }
        let mut out = Self::zeros(self.order, self.fs, n)?;
        for c in 0..self.channels() {
            out.channel_mut(c).copy_from_slice(&self.channel(c)[self.len - n..]);
        }
        Ok(out)
    }

    /// Adds `other` sample-wise into this frame; orders, rates, and lengths
    /// must match.
    pub fn add_assign(&mut self, other: &HoaFrame) -> Result<()> {
        if self.order != other.order || self.len != other.len || self.fs != other.fs {
            return Err(Error::invalid("cannot mix frames with different order, length, or rate"));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// Encodes the field produced by a set of image sources, all emitting the
/// same signal, into ambisonic channels at the microphone. Each image
/// contributes its signal delayed by linear interpolation (sub-sample
/// accuracy), scaled by its amplitude and by the real spherical-harmonic
/// manifold vector of its arrival direction.
pub fn encode_hoa(
    images: &[ImageSource],
    mic: [f64; 3],
    signal: &[f64],
    order: usize,
    fs: f64,
) -> Result<HoaFrame> {
    if images.is_empty() {
        return Err(Error::invalid("image list is empty"));
    }
    if signal.is_empty() {
        return Err(Error::invalid("source signal is empty"));
    }
    let len = signal.len();
    let mut frame = HoaFrame::zeros(order, fs, len)?;
    let mut delayed = vec![0.0; len];
    for image in images {
        let delay_samples = image.delay * fs;
        if !delay_samples.is_finite() || delay_samples < 0.0 {
            return Err(Error::Numerical(format!("invalid image delay of {} s", image.delay)));
        }
        let t0 = delay_samples.floor() as usize;
        if t0 >= len {
            continue;
        }
        let frac = delay_samples - t0 as f64;
        delayed[..t0].fill(0.0);
        delayed[t0] = (1.0 - frac) * signal[0];
        for t in t0 + 1..len {
            delayed[t] = (1.0 - frac) * signal[t - t0] + frac * signal[t - t0 - 1];
        }
        let direction = Direction::from_vector(sub(image.position, mic))?;
        let manifold = manifold_vector(direction, order)?;
        for (c, &y) in manifold.values().iter().enumerate() {
            let gain = image.amplitude * y;
            for (out, &d) in frame.channel_mut(c).iter_mut().zip(delayed.iter()) {
                *out += gain * d;
            }
        }
    }
    Ok(frame)
}

/// Renders the omnidirectional impulse response of an image expansion by
/// scattering each image's amplitude at its (linearly interpolated) delay.
pub fn impulse_response(images: &[ImageSource], fs: f64, len: usize) -> Vec<f64> {
    let mut ir = vec![0.0; len];
    for image in images {
        let delay_samples = image.delay * fs;
        let t0 = delay_samples.floor() as usize;
        let frac = delay_samples - t0 as f64;
        if t0 < len {
            ir[t0] += image.amplitude * (1.0 - frac);
        }
        if t0 + 1 < len {
            ir[t0 + 1] += image.amplitude * frac;
        }
    }
    ir
}

/// Estimates the reverberation time of an impulse response from the
/// Schroeder backward-integrated energy decay curve, fitting a line to the
/// -5 dB to -20 dB span and extrapolating to 60 dB of decay.
pub fn schroeder_t60(ir: &[f64], fs: f64) -> Result<f64> {
    if ir.is_empty() {
        return Err(Error::invalid("impulse response is empty"));
    }
    let mut edc = vec![0.0; ir.len()];
    let mut acc = 0.0;
    for (t, &s) in ir.iter().enumerate().rev() {
        acc += s * s;
        edc[t] = acc;
    }
    let total = edc[0];
    if total <= 0.0 {
        return Err(Error::Numerical("impulse response carries no energy".into()));
    }

    let db: Vec<f64> = edc.iter().take_while(|&&e| e > 0.0).map(|&e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&d| d <= -5.0);
    let end = db.iter().position(|&d| d <= -20.0);
    let (Some(start), Some(end)) = (start, end) else {
        return Err(Error::Numerical("impulse response too short to reach 20 dB of decay".into()));
    };
    if end <= start + 1 {
        return Err(Error::Numerical("energy decay curve drops too abruptly to fit".into()));
    }

    let n = (end - start + 1) as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for t in start..=end {
        let x = t as f64 / fs;
        let y = db[t];
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if !slope.is_finite() || slope >= 0.0 {
        return Err(Error::Numerical("energy decay curve is not decreasing".into()));
    }
    Ok(-60.0 / slope)
}

/// The smallest image order whose lattice is guaranteed to cover every
/// propagation path up to `duration` seconds long, with a small safety
/// margin.
pub fn required_image_order(room: &RoomSpec, duration: f64) -> u32 {
    let reach = room.c * duration;
    let density =
        (1.0 / (room.lx * room.lx) + 1.0 / (room.ly * room.ly) + 1.0 / (room.lz * room.lz)).sqrt();
    (reach * density).ceil() as u32 + 2
}
