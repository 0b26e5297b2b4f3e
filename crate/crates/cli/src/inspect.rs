//! Artifact identification. Every binary format in the lab opens with a
//! 4-byte magic, so a file can be classified without guessing from its name.

use std::path::Path;

use spikeleak::data::{read_event_stream, read_spike_tensor, EVST_MAGIC, SPKT_MAGIC};
use spikeleak::fl::decode_message;
use spikeleak::models::decode_checkpoint;

use crate::CliError;

const SLMD_MAGIC: &[u8; 4] = b"SLMD";
const GMSG_MAGIC: &[u8; 4] = b"GMSG";

pub fn inspect_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::data(format!("read {}: {e}", path.display())))?;
    inspect_bytes(&bytes)
}

pub fn inspect_bytes(bytes: &[u8]) -> Result<String, CliError> {
    if bytes.len() < 4 {
        return Err(CliError::data("file too short to carry a format magic"));
    }
    let magic: &[u8; 4] = bytes[..4].try_into().expect("length checked");
    match magic {
        m if m == SPKT_MAGIC => {
            let st = read_spike_tensor(bytes).map_err(CliError::from_data)?;
            let active = st.data.iter().filter(|&&v| v != 0.0).count();
            let (lo, hi) = st
                .data
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            Ok(format!(
                "spike tensor [T={} B={} C={} H={} W={}]\n\
                 active entries: {active}/{} ({:.2}%)\nvalue range: [{lo:.4}, {hi:.4}]",
                st.t,
                st.b,
                st.c,
                st.h,
                st.w,
                st.data.len(),
                100.0 * active as f64 / st.data.len() as f64,
            ))
        }
        m if m == EVST_MAGIC => {
            let ev = read_event_stream(bytes).map_err(CliError::from_data)?;
            let on = ev.events.iter().filter(|e| e.polarity == 1).count();
            let span = match (ev.events.first(), ev.events.last()) {
                (Some(a), Some(b)) => b.t_us - a.t_us,
                _ => 0,
            };
            Ok(format!(
                "event stream, sensor {}x{}\n\
                 events: {} ({on} on, {} off)\ntime span: {span} us",
                ev.sensor.0,
                ev.sensor.1,
                ev.events.len(),
                ev.events.len() - on,
            ))
        }
        m if m == SLMD_MAGIC => {
            let ck = decode_checkpoint(bytes).map_err(CliError::from_data)?;
            let n_params: usize = ck.params.tensors.iter().map(|t| t.data.len()).sum();
            Ok(format!(
                "model checkpoint: {:?} {}x{}x{} -> {} classes, T={}\n\
                 parameters: {n_params} across {} tensors\ntest accuracy: {:.4}",
                ck.spec.kind,
                ck.spec.in_channels,
                ck.spec.height,
                ck.spec.width,
                ck.spec.num_classes,
                ck.spec.timesteps,
                ck.params.tensors.len(),
                ck.test_accuracy,
            ))
        }
        m if m == GMSG_MAGIC => {
            let msg = decode_message(bytes).map_err(CliError::from_data)?;
            let mut out = format!(
                "gradient message: client {}, round {}, T={}, batch {}\nspec hash: {}\n",
                msg.client_id,
                msg.round,
                msg.timesteps,
                msg.batch_size,
                hex_prefix(&msg.spec_hash),
            );
            for t in &msg.gradients.tensors {
                let norm = t.data.iter().map(|v| v * v).sum::<f64>().sqrt();
                out.push_str(&format!("  {:<12} {:?}  l2 {:.6e}\n", t.name, t.shape, norm));
            }
            out.pop();
            Ok(out)
        }
        other => Err(CliError::data(format!(
            "unrecognized magic {:?} (known: SPKT, EVST, SLMD, GMSG)",
            String::from_utf8_lossy(other)
        ))),
    }
}

fn hex_prefix(hash: &[u8; 32]) -> String {
    hash[..8].iter().map(|b| format!("{b:02x}")).collect::<String>() + ".."
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_and_short_input() {
        assert!(inspect_bytes(b"XY").is_err());
        assert!(inspect_bytes(b"NOPEnope").is_err());
    }
}
