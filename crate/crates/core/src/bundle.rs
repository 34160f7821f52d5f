//! `.rsfw` weight bundles.
//!
//! ```text
//! "RSFW" | version u8 = 1 | 3 zero bytes | entry count u32 LE
//! per entry: name length u32 LE | UTF-8 name | .rsft record
//! ```
//!
//! Matrices are stored as `1 x rows x cols` maps and vectors as `1 x 1 x len`.
//! The PCDC weight keeps its `K^2 x (D/G) x L` packing. Group counts are
//! recovered from the shapes: `G = D / width(pcdc weight)` and the
//! compressor's first-layer groups `= L / cols(conv1 weight)`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::guided_filter::GuidedFilterConfig;
use crate::ops::{GroupNormAffine, Matrix};
use crate::pcdc::{CompressorParams, PcdcBlockParams, PcdcParams, NORM_EPS, NORM_GROUPS};
use crate::tensor::FeatureMap;
use crate::upsampler::{ProjectionParams, ResfuParams};

pub const RSFW_MAGIC: [u8; 4] = *b"RSFW";
pub const RSFW_VERSION: u8 = 1;

fn vector(v: &[f32]) -> FeatureMap {
    FeatureMap::new(1, 1, v.len(), v.to_vec()).expect("non-empty vector")
}

fn block_entries(tag: char, b: &PcdcBlockParams) -> Vec<(String, FeatureMap)> {
    let c = &b.compressor;
    vec![
        (format!("norm_{tag}.gamma"), vector(&b.shared_norm.gamma)),
        (format!("norm_{tag}.beta"), vector(&b.shared_norm.beta)),
        (format!("pcdc_{tag}.weight"), b.pcdc.weight.clone()),
        (format!("pcdc_{tag}.bias"), vector(&b.pcdc.bias)),
        (format!("comp_{tag}.conv1.weight"), c.conv1_weight.to_map()),
        (format!("comp_{tag}.conv1.bias"), vector(&c.conv1_bias)),
        (format!("comp_{tag}.norm.gamma"), vector(&c.norm.gamma)),
        (format!("comp_{tag}.norm.beta"), vector(&c.norm.beta)),
        (format!("comp_{tag}.conv2.weight"), c.conv2_weight.to_map()),
        (format!("comp_{tag}.conv2.bias"), vector(&c.conv2_bias)),
    ]
}

/// Named tensors in canonical order.
pub fn bundle_entries(params: &ResfuParams) -> Vec<(String, FeatureMap)> {
    let p = &params.proj;
    let mut entries = vec![
        ("proj_q.weight".to_string(), p.weight_q.to_map()),
        ("proj_q.bias".to_string(), vector(&p.bias_q)),
        ("proj_k.weight".to_string(), p.weight_k.to_map()),
        ("proj_k.bias".to_string(), vector(&p.bias_k)),
    ];
    entries.extend(block_entries('s', &params.block_s));
    entries.extend(block_entries('d', &params.block_d));
    entries
}

pub fn encode_entries(entries: &[(String, FeatureMap)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&RSFW_MAGIC);
    out.push(RSFW_VERSION);
    out.extend_from_slice(&[0, 0, 0]);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, map) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&map.to_bytes());
    }
    out
}

pub fn decode_entries(bytes: &[u8]) -> Result<Vec<(String, FeatureMap)>> {
    let truncated = |expected: usize, found: usize| Error::TruncatedPayload { expected, found };
    if bytes.len() < 4 {
        return Err(truncated(12, bytes.len()));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != RSFW_MAGIC {
        return Err(Error::BadMagic {
            expected: RSFW_MAGIC,
            found,
        });
    }
    if bytes.len() < 12 {
        return Err(truncated(12, bytes.len()));
    }
    if bytes[4] != RSFW_VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut at = 12;
    let mut entries = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        if bytes.len() < at + 4 {
            return Err(truncated(at + 4, bytes.len()));
        }
        let len = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        at += 4;
        if bytes.len() < at + len {
            return Err(truncated(at + len, bytes.len()));
        }
        let name = std::str::from_utf8(&bytes[at..at + len])
            .map_err(|_| Error::Bundle("entry name is not UTF-8".into()))?
            .to_string();
        at += len;
        let (map, used) = FeatureMap::read_prefix(&bytes[at..])?;
        at += used;
        entries.push((name, map));
    }
    if at != bytes.len() {
        return Err(Error::TrailingBytes(bytes.len() - at));
    }
    Ok(entries)
}

struct Lookup(BTreeMap<String, FeatureMap>);

impl Lookup {
    fn take(&mut self, name: &str) -> Result<FeatureMap> {
        self.0
            .remove(name)
            .ok_or_else(|| Error::Bundle(format!("missing entry {name}")))
    }

    fn vector(&mut self, name: &str) -> Result<Vec<f32>> {
        let map = self.take(name)?;
        if map.height() != 1 || map.width() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "{name} must be stored as 1x1xN, got {}x{}x{}",
                map.height(),
                map.width(),
                map.channels()
            )));
        }
        Ok(map.into_data())
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        Matrix::from_map(&self.take(name)?).map_err(|e| Error::ShapeMismatch(format!("{name}: {e}")))
    }

    fn block(&mut self, tag: char) -> Result<PcdcBlockParams> {
        let gamma = self.vector(&format!("norm_{tag}.gamma"))?;
        let beta = self.vector(&format!("norm_{tag}.beta"))?;
        let dim = gamma.len();
        let weight = self.take(&format!("pcdc_{tag}.weight"))?;
        if weight.width() == 0 || dim % weight.width() != 0 {
            return Err(Error::ShapeMismatch(format!(
                "pcdc_{tag}.weight width {} does not divide D = {dim}",
                weight.width()
            )));
        }
        let groups = dim / weight.width();
        let bias = self.vector(&format!("pcdc_{tag}.bias"))?;
        let pcdc = PcdcParams::new(weight, bias, groups, 1)?;
        let conv1_weight = self.matrix(&format!("comp_{tag}.conv1.weight"))?;
        if pcdc.out_channels() % conv1_weight.cols() != 0 {
            return Err(Error::ShapeMismatch(format!(
                "comp_{tag}.conv1.weight has {} inputs per group for {} PCDC channels",
                conv1_weight.cols(),
                pcdc.out_channels()
            )));
        }
        let conv1_groups = pcdc.out_channels() / conv1_weight.cols();
        let compressor = CompressorParams {
            conv1_bias: self.vector(&format!("comp_{tag}.conv1.bias"))?,
            conv1_weight,
            conv1_groups,
            norm: GroupNormAffine {
                gamma: self.vector(&format!("comp_{tag}.norm.gamma"))?,
                beta: self.vector(&format!("comp_{tag}.norm.beta"))?,
                groups: NORM_GROUPS,
                eps: NORM_EPS,
            },
            conv2_weight: self.matrix(&format!("comp_{tag}.conv2.weight"))?,
            conv2_bias: self.vector(&format!("comp_{tag}.conv2.bias"))?,
        };
        Ok(PcdcBlockParams {
            shared_norm: GroupNormAffine {
                gamma,
                beta,
                groups: NORM_GROUPS,
                eps: NORM_EPS,
            },
            pcdc,
            compressor,
        })
    }
}

pub fn serialize_params(params: &ResfuParams) -> Vec<u8> {
    encode_entries(&bundle_entries(params))
}

/// Decodes a bundle; the guided-filter settings come from `gf`, since they are
/// not learned and not stored.
pub fn deserialize_params(bytes: &[u8], gf: GuidedFilterConfig) -> Result<ResfuParams> {
    let entries = decode_entries(bytes)?;
    let mut lookup = BTreeMap::new();
    for (name, map) in entries {
        if lookup.insert(name.clone(), map).is_some() {
            return Err(Error::Bundle(format!("duplicate entry {name}")));
        }
    }
    let mut lookup = Lookup(lookup);
    let proj = ProjectionParams {
        weight_q: lookup.matrix("proj_q.weight")?,
        bias_q: lookup.vector("proj_q.bias")?,
        weight_k: lookup.matrix("proj_k.weight")?,
        bias_k: lookup.vector("proj_k.bias")?,
    };
    let block_s = lookup.block('s')?;
    let block_d = lookup.block('d')?;
    if let Some(extra) = lookup.0.keys().next() {
        return Err(Error::Bundle(format!("unexpected entry {extra}")));
    }
    let params = ResfuParams {
        proj,
        block_s,
        block_d,
        gf,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::upsampler::{generate_params, UpsampleConfig};

    fn params() -> ResfuParams {
        generate_params(3, 5, &UpsampleConfig::default()).unwrap()
    }

    #[test]
    fn canonical_names() {
        let names: Vec<String> = bundle_entries(&params()).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 24);
        assert_eq!(&names[..4], &["proj_q.weight", "proj_q.bias", "proj_k.weight", "proj_k.bias"]);
        assert!(names.contains(&"comp_d.conv2.bias".to_string()));
    }

    #[test]
    fn pcdc_weight_packing() {
        let p = params();
        let entries = bundle_entries(&p);
        let (_, w) = entries.iter().find(|(n, _)| n == "pcdc_s.weight").unwrap();
        assert_eq!(w.dims(), (9, 8, 32));
        let (_, w) = entries.iter().find(|(n, _)| n == "proj_q.weight").unwrap();
        assert_eq!(w.dims(), (1, 32, 3));
    }

    #[test]
    fn round_trip_and_header() {
        let p = params();
        let bytes = serialize_params(&p);
        assert_eq!(&bytes[..4], b"RSFW");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &24u32.to_le_bytes());
        let back = deserialize_params(&bytes, p.gf).unwrap();
        assert_eq!(back, p);
        assert_eq!(serialize_params(&back), bytes);
    }

    #[test]
    fn corrupted_inputs() {
        let p = params();
        let mut bytes = serialize_params(&p);
        assert!(matches!(
            deserialize_params(&bytes[..bytes.len() - 3], p.gf),
            Err(Error::TruncatedPayload { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(deserialize_params(&bytes, p.gf), Err(Error::BadMagic { .. })));

        let mut entries = bundle_entries(&p);
        entries.retain(|(n, _)| n != "comp_s.norm.beta");
        assert!(matches!(
            deserialize_params(&encode_entries(&entries), p.gf),
            Err(Error::Bundle(msg)) if msg.contains("comp_s.norm.beta")
        ));

        let mut entries = bundle_entries(&p);
        entries[1].1 = vector(&[0.0; 7]);
        assert!(deserialize_params(&encode_entries(&entries), p.gf).is_err());
    }
}
