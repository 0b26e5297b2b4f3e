//! Minimal federated round: clients turn private samples into per-sample
//! gradient messages, a server aggregates, and a passive eavesdropper copies
//! the messages off the wire. Messages cross a real serialization boundary
//! even in-process, so what the attacker sees is exactly what a network tap
//! would capture. Raw samples never enter any message.

use crate::bytesio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::models::{
    compute_victim_gradients, GradientSet, ModelInput, ModelSpec, NamedTensor, NeuronParams,
    ParameterSet,
};

const GMSG_MAGIC: &[u8; 4] = b"GMSG";
const GMSG_VERSION: u32 = 1;

/// One client with its private shard. Samples live only here; messages carry
/// gradients and public metadata.
pub struct ClientState<'a> {
    pub client_id: u64,
    pub samples: Vec<(ModelInput, usize)>,
    pub spec: &'a ModelSpec,
    pub params: &'a ParameterSet,
    pub neuron: &'a NeuronParams,
}

/// What actually travels to the server. The metadata (spec hash, timesteps,
/// batch size) is public under the threat model; the payload is gradients
/// only.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMessage {
    pub client_id: u64,
    pub round: u32,
    pub timesteps: u32,
    pub batch_size: u32,
    pub spec_hash: [u8; 32],
    pub gradients: GradientSet,
}

pub fn encode_message(msg: &GradientMessage) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(GMSG_MAGIC);
    w.u32(GMSG_VERSION);
    w.u64(msg.client_id);
    w.u32(msg.round);
    w.u32(msg.timesteps);
    w.u32(msg.batch_size);
    w.bytes(&msg.spec_hash);
    w.u32(msg.gradients.tensors.len() as u32);
    for t in &msg.gradients.tensors {
        w.u32(t.name.len() as u32);
        w.bytes(t.name.as_bytes());
        w.u32(t.shape.len() as u32);
        for &d in &t.shape {
            w.u32(d as u32);
        }
        for &v in &t.data {
            w.f64(v);
        }
    }
    w.buf
}

pub fn decode_message(bytes: &[u8]) -> Result<GradientMessage> {
    let mut r = ByteReader::new(bytes);
    r.magic(GMSG_MAGIC, "gradient message")?;
    let version = r.u32("version")?;
    if version != GMSG_VERSION {
        return Err(r.err(format!("unsupported message version {version}")));
    }
    let client_id = r.u64("client id")?;
    let round = r.u32("round")?;
    let timesteps = r.u32("timesteps")?;
    let batch_size = r.u32("batch size")?;
    let mut spec_hash = [0u8; 32];
    spec_hash.copy_from_slice(r.take(32, "spec hash")?);
    let count = r.u32("tensor count")? as usize;
    if count > 4096 {
        return Err(r.err(format!("implausible tensor count {count}")));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len > 256 {
            return Err(r.err(format!("implausible name length {name_len}")));
        }
        let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec())
            .map_err(|_| r.err("tensor name is not utf-8"))?;
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(r.err(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64("tensor payload")?);
        }
        tensors.push(NamedTensor { name, shape, data });
    }
    r.expect_end("gradient message")?;
    Ok(GradientMessage {
        client_id,
        round,
        timesteps,
        batch_size,
        spec_hash,
        gradients: GradientSet { tensors },
    })
}

impl<'a> ClientState<'a> {
    /// One local update on one private sample. The returned message has been
    /// pushed through the wire encoding and back, so downstream consumers see
    /// wire semantics; parameters are a fixed snapshot and never change.
    pub fn client_round(&self, sample_index: usize, round: u32) -> Result<GradientMessage> {
        let (input, label) = self
            .samples
            .get(sample_index)
            .ok_or_else(|| Error::usage(format!("sample index {sample_index} out of range")))?;
        let gradients = compute_victim_gradients(self.spec, self.params, input, *label, self.neuron)?;
        let msg = GradientMessage {
            client_id: self.client_id,
            round,
            timesteps: self.spec.timesteps as u32,
            batch_size: input.batch_size() as u32,
            spec_hash: self.spec.spec_hash(),
            gradients,
        };
        decode_message(&encode_message(&msg))
    }
}

/// Unweighted per-tensor mean across clients; the ordinary FedSGD server
/// step. Rejects mixed architectures.
pub fn server_aggregate(msgs: &[GradientMessage]) -> Result<GradientSet> {
    let first = msgs.first().ok_or_else(|| Error::protocol("cannot aggregate zero messages"))?;
    for m in msgs {
        if m.spec_hash != first.spec_hash {
            return Err(Error::protocol(format!(
                "spec hash mismatch between clients {} and {}",
                first.client_id, m.client_id
            )));
        }
        if m.gradients.tensors.len() != first.gradients.tensors.len() {
            return Err(Error::protocol("tensor count mismatch between clients"));
        }
    }
    let n = msgs.len() as f64;
    let mut tensors = Vec::with_capacity(first.gradients.tensors.len());
    for (i, proto) in first.gradients.tensors.iter().enumerate() {
        let mut data = vec![0.0; proto.data.len()];
        for m in msgs {
            let t = &m.gradients.tensors[i];
            if t.shape != proto.shape || t.name != proto.name {
                return Err(Error::protocol(format!("tensor {} differs in structure across clients", proto.name)));
            }
            for (acc, v) in data.iter_mut().zip(&t.data) {
                *acc += v;
            }
        }
        for v in data.iter_mut() {
            *v /= n;
        }
        tensors.push(NamedTensor { name: proto.name.clone(), shape: proto.shape.clone(), data });
    }
    Ok(GradientSet { tensors })
}

/// The honest-but-curious tap: per-client gradients exactly as transmitted.
/// Attacks consume these, never the aggregate.
pub fn eavesdrop(msgs: &[GradientMessage]) -> Vec<(u64, GradientSet)> {
    msgs.iter().map(|m| (m.client_id, m.gradients.clone())).collect()
}
