//! Modality conversions: static images replicated over time, event streams
//! binned into spike frames, synthetic gesture streams, and the two dummy
//! initializers attacks start from.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::util::rng_for;

/// Dense [B,C,H,W] image batch with values conventionally in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub data: Vec<f64>,
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl ImageTensor {
    pub fn new(data: Vec<f64>, b: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if data.len() != b * c * h * w || b * c * h * w == 0 {
            return Err(Error::dimension(format!(
                "image buffer of {} values does not match [{b},{c},{h},{w}]",
                data.len()
            )));
        }
        Ok(ImageTensor { data, b, c, h, w })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.b, self.c, self.h, self.w]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// How a [T,B,C,H,W] spike tensor is to be interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpikeModality {
    /// Identical slices along T, values in [0,1] (a static image over time).
    ReplicatedImage,
    /// Per-step non-negative intensities (pre-binarization reconstructions,
    /// dummy spike inputs).
    EventFrames,
    /// Strictly {0,1} per cell (binned event data, thresholded outputs).
    BinarySpikes,
}

/// Rank-5 spike tensor [T,B,C,H,W].
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTensor {
    pub data: Vec<f64>,
    pub t: usize,
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub modality: SpikeModality,
}

impl SpikeTensor {
    pub fn new(
        data: Vec<f64>,
        dims: [usize; 5],
        modality: SpikeModality,
    ) -> Result<Self> {
        let [t, b, c, h, w] = dims;
        let numel = t * b * c * h * w;
        if data.len() != numel || numel == 0 {
            return Err(Error::dimension(format!(
                "spike buffer of {} values does not match {dims:?}",
                data.len()
            )));
        }
        Ok(SpikeTensor { data, t, b, c, h, w, modality })
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.t, self.b, self.c, self.h, self.w]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn step_len(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    /// Copy of timestep `t` as an image batch.
    pub fn slice_step(&self, t: usize) -> Result<ImageTensor> {
        if t >= self.t {
            return Err(Error::usage(format!("step {t} out of {} timesteps", self.t)));
        }
        let n = self.step_len();
        ImageTensor::new(self.data[t * n..(t + 1) * n].to_vec(), self.b, self.c, self.h, self.w)
    }

    /// Check the declared modality's value constraints.
    pub fn validate(&self) -> Result<()> {
        match self.modality {
            SpikeModality::BinarySpikes => {
                if self.data.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::validation("binary_spikes tensor contains values outside {0,1}"));
                }
            }
            SpikeModality::ReplicatedImage => {
                if self.data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::validation("replicated_image tensor has values outside [0,1]"));
                }
                let n = self.step_len();
                for t in 1..self.t {
                    if self.data[t * n..(t + 1) * n] != self.data[..n] {
                        return Err(Error::validation(format!(
                            "replicated_image slices differ at timestep {t}"
                        )));
                    }
                }
            }
            SpikeModality::EventFrames => {
                if self.data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(Error::validation("event_frames tensor has negative or non-finite values"));
                }
            }
        }
        Ok(())
    }
}

/// A single dynamic-vision-sensor event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    /// 0 = OFF (brightness decrease), 1 = ON.
    pub polarity: u8,
}

/// Ordered event record with its sensor geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    pub events: Vec<Event>,
    /// (H, W)
    pub sensor: (usize, usize),
}

impl EventStream {
    pub fn new(events: Vec<Event>, sensor: (usize, usize)) -> Result<Self> {
        let (h, w) = sensor;
        if h == 0 || w == 0 {
            return Err(Error::validation("sensor size must be positive"));
        }
        let mut prev = 0u64;
        for (i, e) in events.iter().enumerate() {
            if e.t_us < prev {
                return Err(Error::validation(format!(
                    "event {i} timestamp {} precedes {} (must be non-decreasing)",
                    e.t_us, prev
                )));
            }
            prev = e.t_us;
            if (e.x as usize) >= w || (e.y as usize) >= h {
                return Err(Error::validation(format!(
                    "event {i} at ({},{}) outside {h}x{w} sensor",
                    e.x, e.y
                )));
            }
            if e.polarity > 1 {
                return Err(Error::validation(format!("event {i} polarity {} not in {{0,1}}", e.polarity)));
            }
        }
        Ok(EventStream { events, sensor })
    }
}

/// Repeat a static image across T timesteps. The result carries the
/// replicated_image modality: per-pixel variance over T is zero by
/// construction.
pub fn replicate_image(img: &ImageTensor, t: usize) -> Result<SpikeTensor> {
    if t == 0 {
        return Err(Error::validation("replication needs T >= 1"));
    }
    if let Some(bad) = img.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::validation(format!("pixel value {bad} outside [0,1]")));
    }
    let mut data = Vec::with_capacity(t * img.numel());
    for _ in 0..t {
        data.extend_from_slice(&img.data);
    }
    SpikeTensor::new(data, [t, img.b, img.c, img.h, img.w], SpikeModality::ReplicatedImage)
}

/// Bin an event stream into T binary polarity frames [T,1,2,H,W].
///
/// The time axis [0, t_max] is split into T equal bins (timestamps count from
/// the start of the recording), counts per cell are clipped to {0,1}.
pub fn events_to_frames(ev: &EventStream, t_bins: usize) -> Result<SpikeTensor> {
    if ev.events.is_empty() {
        return Err(Error::validation("cannot bin an empty event stream"));
    }
    if t_bins == 0 {
        return Err(Error::validation("binning needs T >= 1"));
    }
    let (h, w) = ev.sensor;
    let t_max = ev.events.iter().map(|e| e.t_us).max().unwrap();
    let mut data = vec![0.0; t_bins * 2 * h * w];
    for e in &ev.events {
        let bin = ((e.t_us as u128 * t_bins as u128) / (t_max as u128 + 1)) as usize;
        let idx = ((bin * 2 + e.polarity as usize) * h + e.y as usize) * w + e.x as usize;
        data[idx] = 1.0;
    }
    SpikeTensor::new(data, [t_bins, 1, 2, h, w], SpikeModality::BinarySpikes)
}

/// Triangle wave on [0,1): 0 -> 1 -> 0.
fn tri(u: f64) -> f64 {
    let u = u.rem_euclid(1.0);
    if u < 0.5 {
        2.0 * u
    } else {
        2.0 - 2.0 * u
    }
}

/// Blob-center trajectory for one gesture class at phase u in [0,1).
fn gesture_center(class_id: usize, u: f64, cx: f64, cy: f64, r: f64) -> (f64, f64) {
    use std::f64::consts::TAU;
    match class_id {
        // clockwise / counter-clockwise circles
        0 => (cx + r * (TAU * u).cos(), cy + r * (TAU * u).sin()),
        1 => (cx + r * (TAU * u).cos(), cy - r * (TAU * u).sin()),
        // axis sweeps
        2 => (cx - r + 2.0 * r * tri(u), cy),
        3 => (cx, cy - r + 2.0 * r * tri(u)),
        // diagonal / anti-diagonal sweeps
        4 => (cx - r + 2.0 * r * tri(u), cy - r + 2.0 * r * tri(u)),
        5 => (cx - r + 2.0 * r * tri(u), cy + r - 2.0 * r * tri(u)),
        // figure eight
        6 => (cx + r * (TAU * u).sin(), cy + 0.5 * r * (2.0 * TAU * u).sin()),
        // fast small circle
        7 => (cx + 0.45 * r * (3.0 * TAU * u).cos(), cy + 0.45 * r * (3.0 * TAU * u).sin()),
        // in-out spiral
        8 => {
            let rr = r * tri(u);
            (cx + rr * (2.0 * TAU * u).cos(), cy + rr * (2.0 * TAU * u).sin())
        }
        // stationary pulsing blob (radius handled by caller via class id)
        9 => (cx, cy),
        // fast horizontal zigzag with slow vertical drift
        10 => (cx - r + 2.0 * r * tri(3.0 * u), cy - r + 2.0 * r * tri(u)),
        _ => unreachable!("class_id validated by caller"),
    }
}

/// Deterministic synthetic gesture: a bright blob moving along a
/// class-specific trajectory; pixels entering the blob emit ON events, pixels
/// leaving emit OFF events. A stand-in for a DVS gesture recording, scaled to
/// desk size.
pub fn synth_gesture_stream(
    class_id: usize,
    seed: u64,
    sensor: (usize, usize),
    duration_us: u64,
) -> Result<EventStream> {
    if class_id >= 11 {
        return Err(Error::validation(format!("gesture class {class_id} out of range (11 classes)")));
    }
    let (h, w) = sensor;
    if h < 8 || w < 8 {
        return Err(Error::validation("sensor too small for gesture synthesis (min 8x8)"));
    }
    if duration_us == 0 {
        return Err(Error::validation("duration must be positive"));
    }
    let mut rng = rng_for(seed, "gesture", class_id as u64);

    let steps: usize = 48;
    let base_cx = w as f64 / 2.0 + rng.random_range(-2.0..2.0);
    let base_cy = h as f64 / 2.0 + rng.random_range(-2.0..2.0);
    let r = 0.30 * h.min(w) as f64;
    let blob = rng.random_range(2.3..3.3);
    let phase: f64 = rng.random_range(0.0..1.0);
    let speed: f64 = rng.random_range(0.85..1.15);
    let dropout: f64 = 0.08;

    let mut events = Vec::new();
    let mut prev = vec![false; h * w];
    for step in 0..steps {
        let ts = step as u64 * duration_us / steps as u64;
        let u = (phase + speed * step as f64 / steps as f64).rem_euclid(1.0);
        let (cx, cy) = gesture_center(class_id, u, base_cx, base_cy, r);
        // class 9 pulses in place: radius carries the temporal signature
        let rb = if class_id == 9 { blob * (0.5 + 1.3 * tri(u)) } else { blob };
        let mut cur = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                cur[y * w + x] = dx * dx + dy * dy <= rb * rb;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if cur[i] == prev[i] {
                    continue;
                }
                if rng.random::<f64>() < dropout {
                    continue;
                }
                events.push(Event {
                    t_us: ts,
                    x: x as u16,
                    y: y as u16,
                    polarity: if cur[i] { 1 } else { 0 },
                });
            }
        }
        // background noise
        if rng.random::<f64>() < 0.5 {
            events.push(Event {
                t_us: ts,
                x: rng.random_range(0..w as u16),
                y: rng.random_range(0..h as u16),
                polarity: rng.random_range(0..2u8),
            });
        }
        prev = cur;
    }
    EventStream::new(events, sensor)
}

/// DLG-style image dummy: one [B,C,H,W] image drawn U(0.45, 0.55), presented
/// replicated across T. Attacks optimize the single shared image; the [0,1]
/// clamp after each optimizer step is the caller's contract.
pub fn init_dummy_image(b: usize, c: usize, h: usize, w: usize, t: usize, seed: u64) -> Result<SpikeTensor> {
    let mut rng = rng_for(seed, "dummy-image", 0);
    let img: Vec<f64> = (0..b * c * h * w).map(|_| rng.random_range(0.45..0.55)).collect();
    let img = ImageTensor::new(img, b, c, h, w)?;
    replicate_image(&img, t)
}

/// Spike-modality dummy: every cell of the full [T,B,C,H,W] tensor drawn from
/// |N(0, sigma)|. Non-negative by construction; attacks clamp only below at 0.
pub fn init_dummy_spikes(
    dims: [usize; 5],
    sigma: f64,
    seed: u64,
) -> Result<SpikeTensor> {
    if !(sigma > 0.0) {
        return Err(Error::validation(format!("sigma must be > 0, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::validation(format!("invalid normal parameters: {e}")))?;
    let mut rng = rng_for(seed, "dummy-spikes", 0);
    let numel: usize = dims.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| normal.sample(&mut rng).abs()).collect();
    SpikeTensor::new(data, dims, SpikeModality::EventFrames)
}
