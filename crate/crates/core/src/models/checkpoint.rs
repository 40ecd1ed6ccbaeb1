//! Model checkpoints: one JSON header line, then one parameter per line in the
//! same value formatting as `.sptn` files.

use serde::{Deserialize, Serialize};

use super::{CompletionModel, ModelKind, Parametric};
use crate::error::{Error, Result};
use crate::io::{format_value, FormatError};
use crate::tensor::Shape;
use crate::models::EntryModel;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub model: CompletionModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelKind,
    shape: Vec<usize>,
    seed: u64,
    count: usize,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> String {
    let params = ckpt.model.params();
    let header = Header {
        model: ckpt.model.kind(),
        shape: ckpt.model.shape().dims().to_vec(),
        seed: ckpt.seed,
        count: params.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serialises");
    out.push('\n');
    for &p in params {
        out.push_str(&format_value(p));
        out.push('\n');
    }
    out
}

pub fn decode_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines();
    let header: Header = serde_json::from_str(lines.next().unwrap_or(""))
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    let shape = Shape::new(header.shape).map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    let params = lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(k, l)| {
            let v: f64 = l.trim().parse().map_err(|_| FormatError::MalformedLine {
                line: k + 2,
                reason: format!("bad value {l:?}"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::from(FormatError::NonFiniteValue { line: k + 2 }))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    if params.len() != header.count {
        return Err(FormatError::CountMismatch {
            expected: header.count,
            found: params.len(),
        }
        .into());
    }
    Ok(Checkpoint {
        seed: header.seed,
        model: CompletionModel::from_params(&header.model, &shape, params)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, ModelInit};

    #[test]
    fn round_trip_every_family() {
        let s = Shape::new(vec![3, 2, 4]).unwrap();
        for kind in [
            ModelKind::cp(2),
            ModelKind::Tucker { ranks: vec![2] },
            ModelKind::TensorTrain { ranks: vec![2, 2] },
            ModelKind::Neural {
                rank: 2,
                channels: 3,
                hidden: 4,
            },
        ] {
            let ckpt = Checkpoint {
                seed: 17,
                model: init_model(&kind, &s, &ModelInit::new(17)).unwrap(),
            };
            let text = encode_checkpoint(&ckpt);
            let back = decode_checkpoint(&text).unwrap();
            assert_eq!(back, ckpt);
            assert_eq!(encode_checkpoint(&back), text);
        }
    }

    #[test]
    fn wrong_count_rejected() {
        let s = Shape::new(vec![2, 2]).unwrap();
        let ckpt = Checkpoint {
            seed: 0,
            model: init_model(&ModelKind::cp(1), &s, &ModelInit::new(0)).unwrap(),
        };
        let mut text = encode_checkpoint(&ckpt);
        text.push_str("0.5\n");
        assert!(decode_checkpoint(&text).is_err());
    }
}
