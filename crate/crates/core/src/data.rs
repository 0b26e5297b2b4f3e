//! Parsers for external datasets and the artifact's native binary formats.
//!
//! Every parser rejects malformed input with a byte offset instead of
//! truncating. No download logic lives here; callers hand in raw bytes.

use crate::bytesio::{ByteReader, ByteWriter};
use crate::codec::{Event, EventStream, ImageTensor, SpikeModality, SpikeTensor};
use crate::error::{Error, Result};
use crate::models::ModelInput;

pub const SPKT_MAGIC: &[u8; 4] = b"SPKT";
pub const SPKT_VERSION: u32 = 1;
pub const EVST_MAGIC: &[u8; 4] = b"EVST";

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 2 + 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Immutable labeled sample collection.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub inputs: Vec<ModelInput>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(
        inputs: Vec<ModelInput>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::validation(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::validation(format!(
                "label {bad} outside [0,{num_classes})"
            )));
        }
        Ok(LabeledDataset { inputs, labels, num_classes, split })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Owned (input, label) pairs, e.g. for judge training.
    pub fn sample_pairs(&self) -> Vec<(ModelInput, usize)> {
        self.inputs.iter().cloned().zip(self.labels.iter().copied()).collect()
    }
}

fn be_u32(r: &mut ByteReader, what: &str) -> Result<u32> {
    let b = r.take(4, what)?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parse an IDX image/label file pair (the MNIST container format).
///
/// Pixels are scaled from u8 to [0,1]. 28x28 images are zero-padded by two
/// pixels per side so one 32x32 model spec serves every image dataset;
/// other sizes pass through unchanged. Labels must be digits, so the class
/// count is fixed at 10.
pub fn parse_idx(images: &[u8], labels: &[u8], split: Split) -> Result<LabeledDataset> {
    let mut ir = ByteReader::new(images);
    let magic = be_u32(&mut ir, "IDX image magic")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(0, format!("IDX image magic {magic:#010x}, want 0x00000803")));
    }
    let count = be_u32(&mut ir, "IDX image count")? as usize;
    let rows = be_u32(&mut ir, "IDX row count")? as usize;
    let cols = be_u32(&mut ir, "IDX column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(ir.pos(), "IDX image dimensions must be positive"));
    }
    let pixels = ir.take(count * rows * cols, "IDX pixel payload")?;
    ir.expect_end("IDX image file")?;

    let mut lr = ByteReader::new(labels);
    let magic = be_u32(&mut lr, "IDX label magic")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::format(0, format!("IDX label magic {magic:#010x}, want 0x00000801")));
    }
    let label_count = be_u32(&mut lr, "IDX label count")? as usize;
    if label_count != count {
        return Err(Error::format(
            4,
            format!("label file holds {label_count} entries but image file holds {count}"),
        ));
    }
    let label_bytes = lr.take(count, "IDX label payload")?;
    lr.expect_end("IDX label file")?;

    let pad = if rows == 28 && cols == 28 { 2 } else { 0 };
    let (oh, ow) = (rows + 2 * pad, cols + 2 * pad);
    let mut inputs = Vec::with_capacity(count);
    let mut out_labels = Vec::with_capacity(count);
    for i in 0..count {
        let src = &pixels[i * rows * cols..(i + 1) * rows * cols];
        let mut data = vec![0.0; oh * ow];
        for y in 0..rows {
            for x in 0..cols {
                data[(y + pad) * ow + (x + pad)] = src[y * cols + x] as f64 / 255.0;
            }
        }
        inputs.push(ModelInput::Image(ImageTensor::new(data, 1, 1, oh, ow)?));
        let label = label_bytes[i] as usize;
        if label > 9 {
            return Err(Error::format(8 + i, format!("IDX label {label} is not a digit")));
        }
        out_labels.push(label);
    }
    LabeledDataset::new(inputs, out_labels, 10, split)
}

/// Parse CIFAR-100 binary records (coarse u8, fine u8, 3072 plane-major
/// RGB pixels). `fine` selects the 100-class fine labels, else the 20
/// coarse ones. An empty file yields an empty dataset.
pub fn parse_cifar_bin(bytes: &[u8], fine: bool, split: Split) -> Result<LabeledDataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(
            bytes.len() - bytes.len() % CIFAR_RECORD,
            format!("CIFAR file length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    let num_classes = if fine { 100 } else { 20 };
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = if fine { rec[1] } else { rec[0] } as usize;
        if label >= num_classes {
            return Err(Error::validation(format!(
                "record {i}: {} label {label} outside [0,{num_classes})",
                if fine { "fine" } else { "coarse" }
            )));
        }
        let data: Vec<f64> = rec[2..].iter().map(|&p| p as f64 / 255.0).collect();
        inputs.push(ModelInput::Image(ImageTensor::new(data, 1, 3, 32, 32)?));
        labels.push(label);
    }
    LabeledDataset::new(inputs, labels, num_classes, split)
}

/// Serialize a spike tensor: SPKT magic, version, rank, dims, f32 payload.
///
/// Values are quantized to f32 on disk; tensors whose cells are already
/// f32-representable (all binary or f32-sourced data) round-trip exactly.
pub fn write_spike_tensor(st: &SpikeTensor) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(SPKT_MAGIC);
    w.u32(SPKT_VERSION);
    w.u32(5);
    for d in st.dims() {
        w.u32(d as u32);
    }
    for &v in &st.data {
        w.f32(v as f32);
    }
    w.buf
}

/// Inverse of [`write_spike_tensor`]. The file does not store a modality;
/// it is inferred: all-binary data is binary_spikes, identical [0,1] slices
/// along T are a replicated_image, anything else is event_frames.
pub fn read_spike_tensor(bytes: &[u8]) -> Result<SpikeTensor> {
    let mut r = ByteReader::new(bytes);
    r.magic(SPKT_MAGIC, "SPKT magic")?;
    let version = r.u32("SPKT version")?;
    if version != SPKT_VERSION {
        return Err(r.err(format!("SPKT version {version}, want {SPKT_VERSION}")));
    }
    let rank = r.u32("SPKT rank")?;
    if rank != 5 {
        return Err(r.err(format!("SPKT rank {rank}, want 5 ([T,B,C,H,W])")));
    }
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = r.u32("SPKT dimension")? as usize;
    }
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0 && n <= (1 << 28))
        .ok_or_else(|| r.err(format!("SPKT dims {dims:?} overflow or are empty")))?;
    let expected = numel * 4;
    if r.remaining() != expected {
        return Err(r.err(format!(
            "SPKT payload holds {} bytes, want {expected}",
            r.remaining()
        )));
    }
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(r.f32("SPKT payload")? as f64);
    }
    r.expect_end("SPKT file")?;

    let step = dims[1] * dims[2] * dims[3] * dims[4];
    let modality = if data.iter().all(|&v| v == 0.0 || v == 1.0) {
        SpikeModality::BinarySpikes
    } else if data.iter().all(|&v| (0.0..=1.0).contains(&v))
        && (1..dims[0]).all(|t| data[t * step..(t + 1) * step] == data[..step])
    {
        SpikeModality::ReplicatedImage
    } else {
        SpikeModality::EventFrames
    };
    let st = SpikeTensor::new(data, dims, modality)?;
    st.validate()?;
    Ok(st)
}

/// Serialize an event stream: EVST magic, sensor H/W, count, packed records
/// (u64 t_us, u16 x, u16 y, u8 p). Empty streams are rejected.
pub fn write_event_stream(ev: &EventStream) -> Result<Vec<u8>> {
    if ev.events.is_empty() {
        return Err(Error::validation("refusing to write an empty event stream"));
    }
    let mut w = ByteWriter::new();
    w.bytes(EVST_MAGIC);
    w.u32(ev.sensor.0 as u32);
    w.u32(ev.sensor.1 as u32);
    w.u64(ev.events.len() as u64);
    for e in &ev.events {
        w.u64(e.t_us);
        w.u16(e.x);
        w.u16(e.y);
        w.u8(e.polarity);
    }
    Ok(w.buf)
}

pub fn read_event_stream(bytes: &[u8]) -> Result<EventStream> {
    let mut r = ByteReader::new(bytes);
    r.magic(EVST_MAGIC, "EVST magic")?;
    let h = r.u32("EVST sensor height")? as usize;
    let w = r.u32("EVST sensor width")? as usize;
    let count = r.u64("EVST event count")? as usize;
    let expected = count * 13;
    if r.remaining() != expected {
        return Err(r.err(format!(
            "EVST payload holds {} bytes, want {expected} for {count} events",
            r.remaining()
        )));
    }
    let mut events = Vec::with_capacity(count);
    for _ in 0..count {
        events.push(Event {
            t_us: r.u64("event timestamp")?,
            x: r.u16("event x")?,
            y: r.u16("event y")?,
            polarity: r.u8("event polarity")?,
        });
    }
    r.expect_end("EVST file")?;
    EventStream::new(events, (h, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::synth_gesture_stream;
    use crate::util::rng_for;
    use rand::Rng;

    fn idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        b.extend_from_slice(&(images.len() as u32).to_be_bytes());
        b.extend_from_slice(&(rows as u32).to_be_bytes());
        b.extend_from_slice(&(cols as u32).to_be_bytes());
        for img in images {
            assert_eq!(img.len(), rows * cols);
            b.extend_from_slice(img);
        }
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_recovers_hand_built_pixels() {
        let img0: Vec<u8> = (0..16).map(|i| i * 16).collect();
        let img1 = vec![255u8; 16];
        let bytes = idx_images(&[img0.clone(), img1], 4, 4);
        let labels = idx_labels(&[3, 7]);
        let ds = parse_idx(&bytes, &labels, Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![3, 7]);
        assert_eq!(ds.num_classes, 10);
        assert_eq!(ds.split.as_str(), "train");

        let ModelInput::Image(a) = &ds.inputs[0] else { panic!() };
        assert_eq!(a.shape(), [1, 1, 4, 4]);
        for (i, &px) in img0.iter().enumerate() {
            assert_eq!(a.data[i], px as f64 / 255.0);
        }
        let ModelInput::Image(b) = &ds.inputs[1] else { panic!() };
        assert!(b.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn idx_pads_28x28_to_32x32() {
        let mut img = vec![0u8; 28 * 28];
        img[0] = 255;
        img[27] = 128;
        img[27 * 28 + 27] = 64;
        let bytes = idx_images(&[img], 28, 28);
        let labels = idx_labels(&[0]);
        let ds = parse_idx(&bytes, &labels, Split::Test).unwrap();
        let ModelInput::Image(t) = &ds.inputs[0] else { panic!() };
        assert_eq!(t.shape(), [1, 1, 32, 32]);
        // Border stays zero, corners land shifted by the 2px pad.
        assert_eq!(t.data[2 * 32 + 2], 1.0);
        assert_eq!(t.data[2 * 32 + 29], 128.0 / 255.0);
        assert_eq!(t.data[29 * 32 + 29], 64.0 / 255.0);
        assert!(t.data[..2 * 32].iter().all(|&v| v == 0.0));
        let all_zero = idx_images(&[vec![0u8; 28 * 28]], 28, 28);
        let z = parse_idx(&all_zero, &idx_labels(&[0]), Split::Test).unwrap();
        let ModelInput::Image(zt) = &z.inputs[0] else { panic!() };
        assert!(zt.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn idx_rejects_bad_magic_truncation_and_count_mismatch() {
        let good = idx_images(&[vec![1u8; 16]], 4, 4);
        let labels = idx_labels(&[1]);

        let mut bad_magic = good.clone();
        bad_magic[3] = 0x99;
        let err = parse_idx(&bad_magic, &labels, Split::Train).unwrap_err();
        assert!(err.to_string().contains("0x00000803"), "{err}");

        let truncated = &good[..good.len() - 3];
        let err = parse_idx(truncated, &labels, Split::Train).unwrap_err();
        assert!(err.to_string().contains("at byte"), "{err}");

        let err = parse_idx(&good, &idx_labels(&[1, 2]), Split::Train).unwrap_err();
        assert!(err.to_string().contains("2 entries"), "{err}");

        let err = parse_idx(&good, &idx_labels(&[12]), Split::Train).unwrap_err();
        assert!(err.to_string().contains("not a digit"), "{err}");
    }

    #[test]
    fn cifar_record_roundtrip_and_validation() {
        let mut rec = vec![0u8; CIFAR_RECORD];
        rec[0] = 11;
        rec[1] = 99;
        for (i, p) in rec[2..].iter_mut().enumerate() {
            *p = (i % 251) as u8;
        }
        let ds = parse_cifar_bin(&rec, true, Split::Train).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels[0], 99);
        assert_eq!(ds.num_classes, 100);
        let ModelInput::Image(img) = &ds.inputs[0] else { panic!() };
        assert_eq!(img.shape(), [1, 3, 32, 32]);
        assert_eq!(img.data[0], 0.0);
        assert_eq!(img.data[1], 1.0 / 255.0);
        assert_eq!(img.data[3071], (3071 % 251) as f64 / 255.0);

        let coarse = parse_cifar_bin(&rec, false, Split::Train).unwrap();
        assert_eq!(coarse.labels[0], 11);
        assert_eq!(coarse.num_classes, 20);

        let empty = parse_cifar_bin(&[], true, Split::Test).unwrap();
        assert!(empty.is_empty());

        let err = parse_cifar_bin(&rec[..100], true, Split::Train).unwrap_err();
        assert!(err.to_string().contains("3074"), "{err}");

        let mut bad = rec.clone();
        bad[1] = 100;
        assert!(parse_cifar_bin(&bad, true, Split::Train).is_err());
        bad[1] = 99;
        bad[0] = 20;
        assert!(parse_cifar_bin(&bad, false, Split::Train).is_err());
    }

    #[test]
    fn spike_tensor_roundtrips_bit_exact() {
        let mut rng = rng_for(7, "spkt-test", 0);
        let data: Vec<f64> = (0..2 * 1 * 2 * 3 * 3)
            .map(|_| (rng.random::<f32>() * 0.9 + 0.05) as f64)
            .collect();
        let st = SpikeTensor::new(data, [2, 1, 2, 3, 3], SpikeModality::EventFrames).unwrap();
        let bytes = write_spike_tensor(&st);
        let back = read_spike_tensor(&bytes).unwrap();
        assert_eq!(back, st);
        assert_eq!(write_spike_tensor(&back), bytes);

        let binary = SpikeTensor::new(
            vec![0.0, 1.0, 1.0, 0.0],
            [1, 1, 1, 2, 2],
            SpikeModality::BinarySpikes,
        )
        .unwrap();
        assert_eq!(read_spike_tensor(&write_spike_tensor(&binary)).unwrap(), binary);

        let replicated = SpikeTensor::new(
            vec![0.25, 0.5, 0.25, 0.5],
            [2, 1, 1, 1, 2],
            SpikeModality::ReplicatedImage,
        )
        .unwrap();
        assert_eq!(read_spike_tensor(&write_spike_tensor(&replicated)).unwrap(), replicated);
    }

    #[test]
    fn spike_tensor_read_rejects_malformed_files() {
        let st = SpikeTensor::new(vec![0.5; 4], [1, 1, 1, 2, 2], SpikeModality::EventFrames).unwrap();
        let good = write_spike_tensor(&st);

        let err = read_spike_tensor(&good[..good.len() - 2]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("14 bytes") && msg.contains("want 16"), "{msg}");

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(read_spike_tensor(&trailing).is_err());

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(read_spike_tensor(&bad_magic).is_err());

        let mut huge = good.clone();
        // Overflowing dims must be caught before allocation.
        for i in 12..20 {
            huge[i] = 0xff;
        }
        let err = read_spike_tensor(&huge).unwrap_err();
        assert!(err.to_string().contains("overflow"), "{err}");

        let mut bad_rank = good;
        bad_rank[8] = 4;
        assert!(read_spike_tensor(&bad_rank).is_err());
    }

    #[test]
    fn event_stream_roundtrips_and_rejects() {
        let ev = synth_gesture_stream(3, 9, (32, 32), 20_000).unwrap();
        assert!(!ev.events.is_empty());
        let bytes = write_event_stream(&ev).unwrap();
        let back = read_event_stream(&bytes).unwrap();
        assert_eq!(back, ev);

        let empty = EventStream::new(vec![], (32, 32)).unwrap();
        assert!(write_event_stream(&empty).is_err());

        let err = read_event_stream(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("want"), "{err}");

        let mut bad = bytes.clone();
        bad[1] = b'!';
        assert!(read_event_stream(&bad).is_err());
    }

    #[test]
    fn labeled_dataset_enforces_invariants() {
        let img = ModelInput::Image(ImageTensor::new(vec![0.0; 4], 1, 1, 2, 2).unwrap());
        assert!(LabeledDataset::new(vec![img.clone()], vec![0, 1], 2, Split::Train).is_err());
        assert!(LabeledDataset::new(vec![img.clone()], vec![2], 2, Split::Train).is_err());
        let ds = LabeledDataset::new(vec![img], vec![1], 2, Split::Test).unwrap();
        let pairs = ds.sample_pairs();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].1, 1);
    }
}
