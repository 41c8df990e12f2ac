//! Network checkpoints reuse the dataset container: JSON header describing
//! every network's layers, then all parameters as little-endian `f32` in
//! network order (row-major weights, then bias, layer by layer).

use serde::{Deserialize, Serialize};

use super::dense::{DenseNet, LayerShape};
use super::scalar::Real;
use super::NnError;
use crate::data::container;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkHeader {
    pub name: String,
    pub layers: Vec<LayerShape>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    kind: String,
    networks: Vec<NetworkHeader>,
    #[serde(default)]
    meta: serde_json::Value,
}

const KIND: &str = "checkpoint";

pub fn write_networks<T: Real>(
    networks: &[(&str, &DenseNet<T>)],
    meta: serde_json::Value,
) -> Vec<u8> {
    let header = CheckpointHeader {
        kind: KIND.into(),
        networks: networks
            .iter()
            .map(|(name, net)| NetworkHeader {
                name: name.to_string(),
                layers: net.shapes().to_vec(),
            })
            .collect(),
        meta,
    };
    let mut payload = Vec::new();
    for (_, net) in networks {
        container::f32s_to_le(net.params().iter().map(|p| p.f64() as f32), &mut payload);
    }
    let header = serde_json::to_vec(&header).expect("header serializes");
    container::encode(&header, &payload)
}

/// Returns the named networks in file order together with the metadata blob.
pub fn read_networks<T: Real>(
    bytes: &[u8],
) -> Result<(Vec<(String, DenseNet<T>)>, serde_json::Value), NnError> {
    let (header_text, payload) =
        container::decode(bytes).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let header: CheckpointHeader =
        serde_json::from_str(header_text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if header.kind != KIND {
        return Err(NnError::Checkpoint(format!(
            "expected kind \"{KIND}\", found \"{}\"",
            header.kind
        )));
    }
    let floats = container::le_to_f32s(payload);
    if payload.len() % 4 != 0 {
        return Err(NnError::Checkpoint(
            "payload is not a whole number of f32".into(),
        ));
    }
    let mut at = 0;
    let mut out = Vec::with_capacity(header.networks.len());
    for nh in header.networks {
        let zeros = DenseNet::<T>::zeros(nh.layers.clone())?;
        let n = zeros.num_params();
        if at + n > floats.len() {
            return Err(NnError::Checkpoint(format!(
                "network {} needs {} parameters, only {} remain",
                nh.name,
                n,
                floats.len() - at
            )));
        }
        let params = floats[at..at + n]
            .iter()
            .map(|&v| T::of(v as f64))
            .collect();
        at += n;
        out.push((nh.name, DenseNet::from_params(nh.layers, params)?));
    }
    if at != floats.len() {
        return Err(NnError::Checkpoint(format!(
            "{} trailing parameters",
            floats.len() - at
        )));
    }
    Ok((out, header.meta))
}
