//! Image-source room impulse responses for shoebox rooms.
//!
//! Every wall shares one energy absorption coefficient derived from the
//! target RT60 by Sabine inversion. Each image contributes
//! `r^reflections / (4 pi d)` at delay `d / c`, placed with an 81-tap
//! Hann-windowed sinc so sub-sample delays (the 5 cm secondary path sits at
//! about 2.3 samples) survive.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, cos, sinc, sqrt, PI};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_RIR_LEN: usize = 512;
pub const MAX_ORDER_CAP: usize = 40;
/// Taps in the fractional-delay kernel.
pub const FRACTIONAL_DELAY_TAPS: usize = 81;
pub const FRACTIONAL_DELAY_HALF_WIDTH: usize = FRACTIONAL_DELAY_TAPS / 2;

const SABINE_CONSTANT: f64 = 0.161;
const MIN_SOURCE_DISTANCE: f64 = 0.01;
/// Shortest time span the -5..-25 dB fit region may cover.
const MIN_DECAY_FIT_S: f64 = 0.005;

pub type Point = [f64; 3];

pub fn distance(a: &Point, b: &Point) -> f64 {
    sqrt((0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoomSpec {
    /// `(Lx, Ly, Lz)` in metres.
    pub dims: [f64; 3],
    pub rt60: f64,
    pub sample_rate: u32,
    pub speed_of_sound: f64,
    /// Cap on the total reflection count; derived from the RT60 when unset.
    pub max_order: Option<usize>,
    pub rir_len: usize,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self {
            dims: [4.0, 3.0, 2.5],
            rt60: 0.3,
            sample_rate: 16_000,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            max_order: None,
            rir_len: DEFAULT_RIR_LEN,
        }
    }
}

/// Result of converting an RT60 into a wall absorption coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorption {
    pub alpha: f64,
    /// Set when Sabine asked for `alpha > 1` and the value was clamped.
    pub clamped: bool,
}

impl Absorption {
    /// Pressure reflection coefficient `sqrt(1 - alpha)`.
    pub fn reflection(&self) -> f64 {
        sqrt((1.0 - self.alpha).max(0.0))
    }
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidRoom("room dimensions must be positive"));
        }
        if !(self.rt60 > 0.0 && self.rt60.is_finite()) {
            return Err(Error::InvalidRoom("rt60 must be positive"));
        }
        if self.rir_len == 0 {
            return Err(Error::InvalidRoom("rir length must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidRoom("sample rate must be positive"));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::InvalidRoom("speed of sound must be positive"));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    /// `ceil(c * rt60 / min_dim) + 1`, capped at [`MAX_ORDER_CAP`], unless
    /// set explicitly.
    pub fn effective_max_order(&self) -> usize {
        self.max_order.unwrap_or_else(|| {
            let min_dim = self.dims.iter().copied().fold(f64::INFINITY, f64::min);
            let order = math::ceil(self.speed_of_sound * self.rt60 / min_dim) as usize + 1;
            order.min(MAX_ORDER_CAP)
        })
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..3).all(|i| p[i] > 0.0 && p[i] < self.dims[i])
    }

    /// Samples the untruncated response is allowed to span: long enough to
    /// hold 1.2 x RT60 of decay.
    pub fn full_len(&self) -> usize {
        (math::ceil(1.2 * self.rt60 * self.sample_rate as f64) as usize).max(self.rir_len)
    }
}

/// Sabine inversion `alpha = 0.161 V / (S T60)`, uniform over the six walls
/// and clamped to `(0, 1]`.
pub fn absorption_from_rt60(room: &RoomSpec) -> Result<Absorption> {
    room.validate()?;
    let alpha = SABINE_CONSTANT * room.volume() / (room.surface() * room.rt60);
    if alpha > 1.0 {
        Ok(Absorption {
            alpha: 1.0,
            clamped: true,
        })
    } else {
        Ok(Absorption {
            alpha: alpha.max(f64::MIN_POSITIVE),
            clamped: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PathLabel {
    Primary,
    Secondary,
    Other,
}

/// Simulated acoustic path.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub src: Point,
    pub mic: Point,
    pub label: PathLabel,
}

impl Rir {
    /// A unit impulse, handy as an identity path.
    pub fn identity(sample_rate: u32) -> Self {
        Self {
            taps: vec![1.0],
            sample_rate,
            src: [0.0; 3],
            mic: [0.0; 3],
            label: PathLabel::Other,
        }
    }

    pub fn from_taps(taps: Vec<f64>, sample_rate: u32, label: PathLabel) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::EmptyKernel);
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("rir taps"));
        }
        Ok(Self {
            taps,
            sample_rate,
            src: [0.0; 3],
            mic: [0.0; 3],
            label,
        })
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    /// Direct-path delay in samples implied by the geometry.
    pub fn geometric_delay(&self, speed_of_sound: f64) -> f64 {
        distance(&self.src, &self.mic) / speed_of_sound * self.sample_rate as f64
    }

    /// Location and height of the largest peak of the band-limited signal the
    /// taps represent, found by sinc interpolation on a 1/64-sample grid
    /// around the largest tap.
    pub fn interpolated_peak(&self) -> (f64, f64) {
        let (kmax, _) =
            self.taps.iter().enumerate().fold(
                (0, 0.0f64),
                |best, (k, t)| if t.abs() > best.1 { (k, t.abs()) } else { best },
            );
        self.interpolated_peak_near(kmax as f64, 1.0)
    }

    /// Like [`Rir::interpolated_peak`], restricted to `center ± half_width`
    /// samples; picks out the direct path when a reflection is louder.
    pub fn interpolated_peak_near(&self, center: f64, half_width: f64) -> (f64, f64) {
        let value = |pos: f64| -> f64 {
            self.taps
                .iter()
                .enumerate()
                .map(|(k, &t)| t * sinc(pos - k as f64))
                .sum()
        };
        let steps = (128.0 * half_width).max(1.0) as usize;
        let mut best = (center, value(center));
        for s in 0..=steps {
            let pos = center - half_width + 2.0 * half_width * s as f64 / steps as f64;
            let v = value(pos);
            if v.abs() > best.1.abs() {
                best = (pos, v);
            }
        }
        best
    }

    /// Index of the first tap whose magnitude reaches `fraction` of the peak.
    pub fn onset(&self, fraction: f64) -> usize {
        let peak = self.taps.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        self.taps.iter().position(|t| t.abs() >= fraction * peak).unwrap_or(0)
    }
}

/// Image-source RIR truncated (or zero-padded) to `room.rir_len`.
pub fn simulate_rir(room: &RoomSpec, src: Point, mic: Point) -> Result<Rir> {
    simulate_rir_len(room, src, mic, room.rir_len)
}

/// Image-source RIR of [`RoomSpec::full_len`] samples, used for reverberation
/// checks that need the late tail.
pub fn simulate_rir_full(room: &RoomSpec, src: Point, mic: Point) -> Result<Rir> {
    simulate_rir_len(room, src, mic, room.full_len())
}

pub fn simulate_rir_len(room: &RoomSpec, src: Point, mic: Point, len: usize) -> Result<Rir> {
    room.validate()?;
    for p in [&src, &mic] {
        if !room.contains(p) {
            return Err(Error::OutsideRoom(p[0], p[1], p[2]));
        }
    }
    if distance(&src, &mic) <= MIN_SOURCE_DISTANCE {
        return Err(Error::DegenerateGeometry("source and microphone coincide"));
    }
    let absorption = absorption_from_rt60(room)?;
    let refl = absorption.reflection();
    let order = room.effective_max_order() as i64;
    let fs = room.sample_rate as f64;
    let c = room.speed_of_sound;
    let max_delay = (len + FRACTIONAL_DELAY_HALF_WIDTH) as f64;

    // per-axis candidate image coordinates with their reflection counts
    let axis_images = |axis: usize| -> Vec<(f64, i64)> {
        let l = room.dims[axis];
        let mut out = Vec::new();
        for n in -order..=order {
            for q in 0..2i64 {
                let count = (n - q).abs() + n.abs();
                if count > order {
                    continue;
                }
                let pos = (1 - 2 * q) as f64 * src[axis] + 2.0 * n as f64 * l;
                out.push((pos - mic[axis], count));
            }
        }
        out
    };
    let xs = axis_images(0);
    let ys = axis_images(1);
    let zs = axis_images(2);

    let mut taps = vec![0.0; len];
    let half = FRACTIONAL_DELAY_HALF_WIDTH as i64;
    for &(dx, cx) in &xs {
        for &(dy, cy) in &ys {
            if cx + cy > order {
                continue;
            }
            for &(dz, cz) in &zs {
                let count = cx + cy + cz;
                if count > order {
                    continue;
                }
                let d = sqrt(dx * dx + dy * dy + dz * dz);
                let delay = d / c * fs;
                if delay >= max_delay {
                    continue;
                }
                let amp = math::powf(refl, count as f64) / (4.0 * PI * d);
                if amp == 0.0 {
                    continue;
                }
                let center = math::round(delay) as i64;
                for k in -half..=half {
                    let n = center + k;
                    if n < 0 || n >= len as i64 {
                        continue;
                    }
                    let t = n as f64 - delay;
                    taps[n as usize] += amp * sinc(t) * window_at(t);
                }
            }
        }
    }
    Ok(Rir {
        taps,
        sample_rate: room.sample_rate,
        src,
        mic,
        label: PathLabel::Other,
    })
}

/// Hann window of the fractional-delay kernel evaluated at offset `t`.
fn window_at(t: f64) -> f64 {
    let width = FRACTIONAL_DELAY_TAPS as f64;
    if t.abs() > width / 2.0 {
        0.0
    } else {
        0.5 * (1.0 + cos(2.0 * PI * t / width))
    }
}

/// Schroeder backward integration with a least-squares fit over the
/// -5..-25 dB range, extrapolated to -60 dB.
pub fn estimate_rt60(rir: &Rir) -> Result<f64> {
    let fs = rir.sample_rate as f64;
    let energy: Vec<f64> = rir.taps.iter().map(|t| t * t).collect();
    let total: f64 = energy.iter().sum();
    if total <= 0.0 {
        return Err(Error::DecayRangeTooShort);
    }
    let mut edc = vec![0.0; energy.len()];
    let mut acc = 0.0;
    for i in (0..energy.len()).rev() {
        acc += energy[i];
        edc[i] = acc;
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * math::log10(e / total)).collect();
    let start = db.iter().position(|&v| v <= -5.0);
    let end = db.iter().position(|&v| v <= -25.0);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if e > s + 1 => (s, e),
        _ => return Err(Error::DecayRangeTooShort),
    };
    if ((end - start) as f64) / fs < MIN_DECAY_FIT_S {
        return Err(Error::DecayRangeTooShort);
    }
    let n = (end - start + 1) as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in db.iter().enumerate().take(end + 1).skip(start) {
        let x = i as f64 / fs;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if !(slope < 0.0) {
        return Err(Error::DecayRangeTooShort);
    }
    Ok(-60.0 / slope)
}

/// Transducer placement of a single-channel feedforward system.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransducerLayout {
    pub noise_src: Point,
    pub ref_mic: Point,
    pub err_mic: Point,
    pub sec_src: Point,
}

impl Default for TransducerLayout {
    fn default() -> Self {
        Self {
            noise_src: [1.00, 1.50, 1.20],
            ref_mic: [1.00, 1.50, 1.20],
            err_mic: [3.00, 1.50, 1.20],
            sec_src: [3.05, 1.50, 1.20],
        }
    }
}

impl TransducerLayout {
    pub fn validate(&self, room: &RoomSpec) -> Result<()> {
        for p in [&self.noise_src, &self.ref_mic, &self.err_mic, &self.sec_src] {
            if !room.contains(p) {
                return Err(Error::OutsideRoom(p[0], p[1], p[2]));
            }
        }
        Ok(())
    }
}

/// Primary (noise source to error mic) and secondary (loudspeaker to error
/// mic) paths of a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPair {
    pub primary: Rir,
    pub secondary: Rir,
}

pub fn simulate_paths(room: &RoomSpec, layout: &TransducerLayout) -> Result<PathPair> {
    layout.validate(room)?;
    let mut primary = simulate_rir(room, layout.noise_src, layout.err_mic)?;
    primary.label = PathLabel::Primary;
    let mut secondary = simulate_rir(room, layout.sec_src, layout.err_mic)?;
    secondary.label = PathLabel::Secondary;
    Ok(PathPair { primary, secondary })
}

/// 64-bit FNV-1a over the bit patterns of the room and layout.
pub fn room_fingerprint(room: &RoomSpec, layout: &TransducerLayout) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for d in room.dims {
        feed(&d.to_bits().to_le_bytes());
    }
    feed(&room.rt60.to_bits().to_le_bytes());
    feed(&room.sample_rate.to_le_bytes());
    feed(&room.speed_of_sound.to_bits().to_le_bytes());
    feed(&(room.effective_max_order() as u64).to_le_bytes());
    feed(&(room.rir_len as u64).to_le_bytes());
    for p in [&layout.noise_src, &layout.ref_mic, &layout.err_mic, &layout.sec_src] {
        for v in p {
            feed(&v.to_bits().to_le_bytes());
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn anechoic_room() -> RoomSpec {
        // Sabine gives alpha = 0.161 V / (S T) = 1 at T = 0.161 V / S
        let room = RoomSpec::default();
        RoomSpec {
            rt60: 0.161 * room.volume() / room.surface(),
            ..room
        }
    }

    #[test]
    fn sabine_default_room() {
        let a = absorption_from_rt60(&RoomSpec::default()).unwrap();
        let expect = 0.161 * 30.0 / (59.0 * 0.3);
        assert!((a.alpha - expect).abs() < 1e-12);
        assert!((a.alpha - 0.2729).abs() < 1e-4);
        assert!(!a.clamped);
    }

    #[test]
    fn sabine_limits() {
        let mut room = RoomSpec::default();
        room.rt60 = 1e9;
        let a = absorption_from_rt60(&room).unwrap();
        assert!(a.alpha > 0.0 && a.alpha < 1e-8);

        let cube = RoomSpec {
            dims: [1.0, 1.0, 1.0],
            rt60: 0.161 / 6.0,
            ..RoomSpec::default()
        };
        let a = absorption_from_rt60(&cube).unwrap();
        assert!((a.alpha - 1.0).abs() < 1e-12);
        assert!(a.reflection() < 1e-6);

        room.rt60 = 0.01;
        let a = absorption_from_rt60(&room).unwrap();
        assert!(a.clamped);
        assert_eq!(a.alpha, 1.0);
    }

    #[test]
    fn default_max_order_is_capped() {
        assert_eq!(RoomSpec::default().effective_max_order(), 40);
        let small = RoomSpec {
            rt60: 0.02,
            ..RoomSpec::default()
        };
        // 343 * 0.02 / 2.5 = 2.744 -> 3 + 1
        assert_eq!(small.effective_max_order(), 4);
    }

    #[test]
    fn anechoic_free_field_impulse() {
        let room = anechoic_room();
        let rir = simulate_rir(&room, [1.0, 1.5, 1.2], [3.0, 1.5, 1.2]).unwrap();
        let (pos, amp) = rir.interpolated_peak();
        let expect_delay = 2.0 / 343.0 * 16000.0;
        assert!((pos - expect_delay).abs() < 0.05, "{pos}");
        let expect_amp = 1.0 / (4.0 * PI * 2.0);
        assert!((amp - expect_amp).abs() / expect_amp < 0.01, "{amp}");
    }

    #[test]
    fn secondary_path_is_early() {
        let rir = simulate_rir(&RoomSpec::default(), [3.05, 1.5, 1.2], [3.0, 1.5, 1.2]).unwrap();
        assert_eq!(rir.taps.len(), 512);
        let (pos, _) = rir.interpolated_peak();
        assert!((pos - 0.05 / 343.0 * 16000.0).abs() < 0.2, "{pos}");
        let (kmax, _) = rir
            .taps
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |b, (k, t)| if t.abs() > b.1 { (k, t.abs()) } else { b });
        assert!(kmax < 5);
    }

    #[test]
    fn reciprocity() {
        let room = RoomSpec::default();
        let a = simulate_rir(&room, [1.0, 1.5, 1.2], [3.0, 1.1, 0.7]).unwrap();
        let b = simulate_rir(&room, [3.0, 1.1, 0.7], [1.0, 1.5, 1.2]).unwrap();
        for (p, q) in a.taps.iter().zip(&b.taps) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_and_outside() {
        let room = RoomSpec::default();
        assert!(matches!(
            simulate_rir(&room, [1.0, 1.5, 1.2], [1.0, 1.5, 1.2]),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(matches!(
            simulate_rir(&room, [5.0, 1.5, 1.2], [1.0, 1.5, 1.2]),
            Err(Error::OutsideRoom(..))
        ));
    }

    #[test]
    fn more_absorption_never_adds_energy() {
        let mut last = f64::INFINITY;
        for rt in [0.6, 0.4, 0.3, 0.2, 0.1] {
            let room = RoomSpec {
                rt60: rt,
                max_order: Some(10),
                ..RoomSpec::default()
            };
            let e = simulate_rir(&room, [1.0, 1.5, 1.2], [3.0, 1.5, 1.2]).unwrap().energy();
            assert!(e <= last);
            last = e;
        }
    }

    #[test]
    fn deterministic_taps() {
        let room = RoomSpec::default();
        let a = simulate_rir(&room, [1.0, 1.5, 1.2], [3.0, 1.5, 1.2]).unwrap();
        let b = simulate_rir(&room, [1.0, 1.5, 1.2], [3.0, 1.5, 1.2]).unwrap();
        assert!(a.taps.iter().zip(&b.taps).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn rt60_of_synthetic_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fs = 16000.0;
        let taps: Vec<f64> = (0..8000)
            .map(|n| {
                let t = n as f64 / fs;
                exp(-6.9 * t / 0.3) * rng.random_range(-1.0..1.0)
            })
            .collect();
        let rir = Rir::from_taps(taps, 16000, PathLabel::Other).unwrap();
        let rt = estimate_rt60(&rir).unwrap();
        assert!((rt - 0.3).abs() < 0.03, "{rt}");
    }

    #[test]
    fn rt60_needs_a_decay() {
        let rir = simulate_rir(&anechoic_room(), [1.0, 1.5, 1.2], [3.0, 1.5, 1.2]).unwrap();
        assert_eq!(estimate_rt60(&rir), Err(Error::DecayRangeTooShort));
        let silent = Rir::from_taps(vec![0.0; 100], 16000, PathLabel::Other).unwrap();
        assert_eq!(estimate_rt60(&silent), Err(Error::DecayRangeTooShort));
    }

    #[test]
    fn simulated_room_rt60_is_close_to_target() {
        let room = RoomSpec::default();
        let rir = simulate_rir_full(&room, [1.0, 1.5, 1.2], [3.0, 1.5, 1.2]).unwrap();
        let rt = estimate_rt60(&rir).unwrap();
        assert!((rt - 0.3).abs() <= 0.075, "{rt}");
    }

    #[test]
    fn fingerprint_tracks_geometry() {
        let room = RoomSpec::default();
        let layout = TransducerLayout::default();
        let a = room_fingerprint(&room, &layout);
        assert_eq!(a, room_fingerprint(&room, &layout));
        let mut moved = layout.clone();
        moved.err_mic[0] = 2.9;
        assert_ne!(a, room_fingerprint(&room, &moved));
    }
}
