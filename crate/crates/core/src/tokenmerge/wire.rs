//! Byte layout of a merged feature as sent over the link.
//!
//! ```text
//! header   16 bytes  u32 LE: d_C, J (sent tokens), b, n_pairs
//! values   d_C·J·b bits, column-major; b = 16 → IEEE half, b = 32 → f32, LE
//! aux      n_pairs entries of b bits, LE: src | dest << w, w = ⌈log2 J_max⌉
//! ```
//!
//! `J_max = J + n_pairs`. Everything after the header is exactly the
//! payload counted by the cost model. Entries need `2w ≤ b`; at J_max = 4096
//! that requires b = 32.

use half::f16;

use super::{LatentFeature, MergePlan};
use crate::error::{Error, Result};

pub const HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub bytes: Vec<u8>,
}

impl Encoded {
    /// Size of everything after the header, in bits.
    pub fn payload_bits(&self) -> u64 {
        8 * (self.bytes.len() - HEADER_BYTES) as u64
    }
}

fn index_width(j_max: usize) -> u32 {
    usize::BITS - (j_max.max(2) - 1).leading_zeros()
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "feature frame",
        reason: reason.into(),
    }
}

pub fn encode_feature(z: &LatentFeature, plan: &MergePlan, bits: u32) -> Result<Encoded> {
    if z.tokens() != plan.output_len() {
        return Err(Error::Dimension {
            expected: plan.output_len(),
            got: z.tokens(),
        });
    }
    let width = index_width(plan.j_max);
    if !matches!(bits, 16 | 32) || (!plan.pairs.is_empty() && 2 * width > bits) {
        return Err(format_err(format!(
            "{bits}-bit entries cannot index {} tokens",
            plan.j_max
        )));
    }
    let byte_len = (bits / 8) as usize;
    let mut bytes =
        Vec::with_capacity(HEADER_BYTES + byte_len * (z.as_slice().len() + plan.pairs.len()));
    for v in [z.channels(), z.tokens(), bits as usize, plan.pairs.len()] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in z.as_slice() {
        match bits {
            16 => bytes.extend_from_slice(&f16::from_f64(v).to_le_bytes()),
            _ => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    for &(dest, src) in &plan.pairs {
        let entry = (src as u64) | ((dest as u64) << width);
        bytes.extend_from_slice(&entry.to_le_bytes()[..byte_len]);
    }
    Ok(Encoded { bytes })
}

pub fn decode_feature(frame: &[u8]) -> Result<(LatentFeature, MergePlan)> {
    if frame.len() < HEADER_BYTES {
        return Err(format_err("truncated header"));
    }
    let word = |i: usize| {
        u32::from_le_bytes(frame[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize
    };
    let (channels, tokens, bits, n_pairs) = (word(0), word(1), word(2) as u32, word(3));
    if !matches!(bits, 16 | 32) || channels == 0 || tokens == 0 {
        return Err(format_err("bad header"));
    }
    let byte_len = (bits / 8) as usize;
    let n_values = channels * tokens;
    if frame.len() != HEADER_BYTES + byte_len * (n_values + n_pairs) {
        return Err(format_err("length does not match header"));
    }
    let body = &frame[HEADER_BYTES..];
    let values: Vec<f64> = body[..n_values * byte_len]
        .chunks_exact(byte_len)
        .map(|c| match bits {
            16 => f16::from_le_bytes([c[0], c[1]]).to_f64(),
            _ => f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
        })
        .collect();
    let j_max = tokens + n_pairs;
    let width = index_width(j_max);
    let mask = (1u64 << width) - 1;
    let pairs = body[n_values * byte_len..]
        .chunks_exact(byte_len)
        .map(|c| {
            let mut raw = [0u8; 8];
            raw[..byte_len].copy_from_slice(c);
            let entry = u64::from_le_bytes(raw);
            ((entry >> width) as usize, (entry & mask) as usize)
        })
        .collect();
    let z = LatentFeature::new(channels, values)?;
    let plan = MergePlan::from_pairs(j_max, pairs, bits)?;
    Ok((z, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::{payload_bits, CompressionMode};
    use crate::rng::stream;
    use crate::sysmodel::SystemParams;
    use crate::tokenmerge::{apply_merge, plan_merge};
    use rand::Rng;

    fn desk_system() -> SystemParams {
        SystemParams {
            d_c: 4,
            d_w: 4,
            d_h: 4,
            ..SystemParams::default()
        }
    }

    #[test]
    fn serialized_size_matches_cost_model() {
        let params = desk_system();
        let mut rng = stream(3, 3);
        for i in 0..=20 {
            let beta = i as f64 / 20.0;
            let data: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = LatentFeature::new(4, data).unwrap();
            let plan = plan_merge(&z, beta, 16, &mut rng).unwrap();
            let merged = apply_merge(&z, &plan).unwrap();
            let frame = encode_feature(&merged, &plan, 16).unwrap();
            assert_eq!(
                frame.payload_bits(),
                payload_bits(beta, CompressionMode::Merge, &params).unwrap(),
                "beta = {beta}"
            );
        }
    }

    #[test]
    fn wide_indices_need_wide_entries() {
        let z = LatentFeature::zeros(1, 4095);
        let plan = MergePlan::from_pairs(4096, vec![(0, 4095)], 16).unwrap();
        assert!(encode_feature(&z, &plan, 16).is_err());
        let frame = encode_feature(&z, &plan, 32).unwrap();
        let (_, back) = decode_feature(&frame.bytes).unwrap();
        assert_eq!(back.pairs, plan.pairs);
    }

    #[test]
    fn corrupt_frames_are_rejected() {
        assert!(decode_feature(&[0u8; 3]).is_err());
        let z = LatentFeature::zeros(2, 2);
        let mut frame = encode_feature(&z, &MergePlan::identity(2), 16)
            .unwrap()
            .bytes;
        frame.push(0);
        assert!(decode_feature(&frame).is_err());
    }
}
