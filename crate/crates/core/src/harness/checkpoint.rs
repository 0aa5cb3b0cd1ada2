//! Checkpoint format.
//!
//! Little-endian binary, mirroring the dataset conventions:
//!
//! ```text
//! magic "GIMC" | version u32 | model-kind u32 | input u32 | classes u32 |
//! hidden u32 | functional u32 | memory u32 | ae-hidden u32 |
//! module-count u32 | ae-count u32 | anchor-count u32
//! module*: frozen u32 | subtask u32 | block-count u32 | block*
//! ae*:     frozen u32 | trained-on u32 | block-count u32 | block*
//! anchor*: subtask u32 | block-count u32 | fisher block* | anchor block*
//! block:   name-len u32 | name | rows u32 | cols u32 | f64 × rows·cols
//! ```
//!
//! Parameters are stored as f64, so save/load round-trips are lossless and
//! reloaded models evaluate bit-identically.

use sha2::{Digest, Sha256};

use crate::autoenc::Autoencoder;
use crate::cells::{LmnParams, LstmParams};
use crate::error::{Error, Result};
use crate::ewc::FisherAnchor;
use crate::gim::{GimModel, GimModule};
use crate::harness::config::ModelKind;
use crate::model::{CellKind, CellParams, CellSizes, Classifier};
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"GIMC";
const VERSION: u32 = 1;

/// A fully trained model of any of the six configurations.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Plain(Classifier),
    Ewc(Classifier, Vec<FisherAnchor>),
    Gim(GimModel),
}

impl TrainedModel {
    pub fn model_kind(&self) -> ModelKind {
        match self {
            TrainedModel::Plain(net) => match net.cell.kind() {
                CellKind::Lstm => ModelKind::Lstm,
                CellKind::Lmn => ModelKind::Lmn,
            },
            TrainedModel::Ewc(net, _) => match net.cell.kind() {
                CellKind::Lstm => ModelKind::EwcLstm,
                CellKind::Lmn => ModelKind::EwcLmn,
            },
            TrainedModel::Gim(gim) => match gim.kind {
                CellKind::Lstm => ModelKind::GimLstm,
                CellKind::Lmn => ModelKind::GimLmn,
            },
        }
    }
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_block(buf: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    push_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    push_u32(buf, tensor.rows() as u32);
    push_u32(buf, tensor.cols() as u32);
    for &v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_named(buf: &mut Vec<u8>, named: &[(String, &Tensor)]) {
    push_u32(buf, named.len() as u32);
    for (name, tensor) in named {
        push_block(buf, name, tensor);
    }
}

fn cell_sizes(cell: &CellParams) -> (usize, usize, usize) {
    match cell {
        CellParams::Lstm(p) => (p.hidden_size, p.hidden_size, p.hidden_size),
        CellParams::Lmn(p) => (p.functional_size, p.functional_size, p.memory_size),
    }
}

/// Serializes a trained model to GIMC bytes.
pub fn encode_model(model: &TrainedModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    let kind_tag = ModelKind::ALL
        .iter()
        .position(|&k| k == model.model_kind())
        .expect("kind in table") as u32;
    push_u32(&mut buf, kind_tag);

    match model {
        TrainedModel::Plain(net) | TrainedModel::Ewc(net, _) => {
            let (hidden, functional, memory) = cell_sizes(&net.cell);
            push_u32(&mut buf, net.cell.input_size() as u32);
            push_u32(&mut buf, net.classes as u32);
            push_u32(&mut buf, hidden as u32);
            push_u32(&mut buf, functional as u32);
            push_u32(&mut buf, memory as u32);
            push_u32(&mut buf, 0); // no autoencoders
            let anchors: &[FisherAnchor] = match model {
                TrainedModel::Ewc(_, a) => a,
                _ => &[],
            };
            push_u32(&mut buf, 1); // module count
            push_u32(&mut buf, 0); // ae count
            push_u32(&mut buf, anchors.len() as u32);
            push_u32(&mut buf, 0); // frozen
            push_u32(&mut buf, 0); // subtask
            push_named(&mut buf, &net.named());
            let param_names: Vec<String> =
                net.named().into_iter().map(|(n, _)| n).collect();
            for anchor in anchors {
                push_u32(&mut buf, anchor.subtask as u32);
                push_u32(&mut buf, anchor.fisher.len() as u32);
                for (name, tensor) in param_names.iter().zip(&anchor.fisher) {
                    push_block(&mut buf, name, tensor);
                }
                for (name, tensor) in param_names.iter().zip(&anchor.anchor) {
                    push_block(&mut buf, name, tensor);
                }
            }
        }
        TrainedModel::Gim(gim) => {
            push_u32(&mut buf, gim.input_size as u32);
            push_u32(&mut buf, gim.classes as u32);
            push_u32(&mut buf, gim.sizes.hidden as u32);
            push_u32(&mut buf, gim.sizes.functional as u32);
            push_u32(&mut buf, gim.sizes.memory as u32);
            push_u32(&mut buf, gim.ae_hidden as u32);
            push_u32(&mut buf, gim.modules.len() as u32);
            push_u32(&mut buf, gim.autoencoders.len() as u32);
            push_u32(&mut buf, 0); // no anchors
            for m in &gim.modules {
                push_u32(&mut buf, m.frozen as u32);
                push_u32(&mut buf, m.subtask as u32);
                push_named(&mut buf, &m.net.named());
            }
            for ae in &gim.autoencoders {
                push_u32(&mut buf, ae.frozen as u32);
                push_u32(&mut buf, ae.trained_on as u32);
                push_named(&mut buf, &ae.named());
            }
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("GIMC file truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn block(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u32()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| Error::format("non-utf8 block name"))?;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok((name, Tensor::new(rows, cols, data)?))
    }

    fn named(&mut self) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32()? as usize;
        (0..count).map(|_| self.block()).collect()
    }
}

fn take_tensor(blocks: &mut Vec<(String, Tensor)>, name: &str) -> Result<Tensor> {
    let pos = blocks
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::format(format!("checkpoint missing block '{name}'")))?;
    Ok(blocks.remove(pos).1)
}

fn lstm_from_blocks(blocks: &mut Vec<(String, Tensor)>, prefix: &str) -> Result<LstmParams> {
    let take = |blocks: &mut Vec<(String, Tensor)>, n: &str| {
        take_tensor(blocks, &format!("{prefix}{n}"))
    };
    let w_xi = take(blocks, "w_xi")?;
    let (input_size, hidden_size) = w_xi.shape();
    Ok(LstmParams {
        input_size,
        hidden_size,
        w_xi,
        w_hi: take(blocks, "w_hi")?,
        b_i: take(blocks, "b_i")?,
        w_xf: take(blocks, "w_xf")?,
        w_hf: take(blocks, "w_hf")?,
        b_f: take(blocks, "b_f")?,
        w_xg: take(blocks, "w_xg")?,
        w_hg: take(blocks, "w_hg")?,
        b_g: take(blocks, "b_g")?,
        w_xo: take(blocks, "w_xo")?,
        w_ho: take(blocks, "w_ho")?,
        b_o: take(blocks, "b_o")?,
    })
}

fn lmn_from_blocks(blocks: &mut Vec<(String, Tensor)>, prefix: &str) -> Result<LmnParams> {
    let take = |blocks: &mut Vec<(String, Tensor)>, n: &str| {
        take_tensor(blocks, &format!("{prefix}{n}"))
    };
    let w_xh = take(blocks, "w_xh")?;
    let w_mm = take(blocks, "w_mm")?;
    let (input_size, functional_size) = w_xh.shape();
    let memory_size = w_mm.rows();
    Ok(LmnParams {
        input_size,
        functional_size,
        memory_size,
        w_xh,
        w_mh: take(blocks, "w_mh")?,
        w_hm: take(blocks, "w_hm")?,
        w_mm,
    })
}

fn classifier_from_blocks(
    kind: CellKind,
    mut blocks: Vec<(String, Tensor)>,
) -> Result<Classifier> {
    let cell = match kind {
        CellKind::Lstm => CellParams::Lstm(lstm_from_blocks(&mut blocks, "cell.")?),
        CellKind::Lmn => CellParams::Lmn(lmn_from_blocks(&mut blocks, "cell.")?),
    };
    let head_w = take_tensor(&mut blocks, "head_w")?;
    let head_b = take_tensor(&mut blocks, "head_b")?;
    let classes = head_w.cols();
    Ok(Classifier {
        cell,
        head_w,
        head_b,
        classes,
    })
}

fn autoencoder_from_blocks(
    mut blocks: Vec<(String, Tensor)>,
    trained_on: usize,
    frozen: bool,
) -> Result<Autoencoder> {
    let encoder = lstm_from_blocks(&mut blocks, "enc.")?;
    let decoder = lstm_from_blocks(&mut blocks, "dec.")?;
    let w_out = take_tensor(&mut blocks, "w_out")?;
    Ok(Autoencoder {
        hidden_size: encoder.hidden_size,
        input_size: encoder.input_size,
        encoder,
        decoder,
        w_out,
        trained_on,
        frozen,
    })
}

/// Parses GIMC bytes back into a [`TrainedModel`].
pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("bad GIMC magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported GIMC version {version}")));
    }
    let kind_tag = r.u32()? as usize;
    let model_kind = *ModelKind::ALL
        .get(kind_tag)
        .ok_or_else(|| Error::format(format!("bad model kind tag {kind_tag}")))?;
    let input_size = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let functional = r.u32()? as usize;
    let memory = r.u32()? as usize;
    let ae_hidden = r.u32()? as usize;
    let module_count = r.u32()? as usize;
    let ae_count = r.u32()? as usize;
    let anchor_count = r.u32()? as usize;
    let cell_kind = model_kind.cell_kind();

    let mut modules = Vec::with_capacity(module_count);
    for _ in 0..module_count {
        let frozen = r.u32()? != 0;
        let subtask = r.u32()? as usize;
        let blocks = r.named()?;
        modules.push((frozen, subtask, classifier_from_blocks(cell_kind, blocks)?));
    }
    let mut aes = Vec::with_capacity(ae_count);
    for _ in 0..ae_count {
        let frozen = r.u32()? != 0;
        let trained_on = r.u32()? as usize;
        let blocks = r.named()?;
        aes.push(autoencoder_from_blocks(blocks, trained_on, frozen)?);
    }
    let mut anchors = Vec::with_capacity(anchor_count);
    for _ in 0..anchor_count {
        let subtask = r.u32()? as usize;
        let block_count = r.u32()? as usize;
        let mut fisher = Vec::with_capacity(block_count);
        for _ in 0..block_count {
            fisher.push(r.block()?.1);
        }
        let mut anchor = Vec::with_capacity(block_count);
        for _ in 0..block_count {
            anchor.push(r.block()?.1);
        }
        anchors.push(FisherAnchor {
            fisher,
            anchor,
            subtask,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes in GIMC file"));
    }

    if model_kind.is_gim() {
        let gim = GimModel {
            kind: cell_kind,
            input_size,
            classes,
            sizes: CellSizes {
                hidden,
                functional,
                memory,
            },
            ae_hidden,
            modules: modules
                .into_iter()
                .map(|(frozen, subtask, net)| GimModule {
                    net,
                    frozen,
                    subtask,
                })
                .collect(),
            autoencoders: aes,
        };
        Ok(TrainedModel::Gim(gim))
    } else {
        let net = modules
            .into_iter()
            .next()
            .map(|(_, _, net)| net)
            .ok_or_else(|| Error::format("checkpoint without a model"))?;
        if model_kind.is_ewc() {
            Ok(TrainedModel::Ewc(net, anchors))
        } else {
            Ok(TrainedModel::Plain(net))
        }
    }
}

/// Hex SHA-256 of arbitrary bytes, used as the content hash of checkpoints
/// in the run manifest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn plain_model_round_trips() {
        let net = Classifier::init(
            &mut Rng::new(1),
            CellKind::Lstm,
            3,
            CellSizes::uniform(4),
            2,
        );
        let model = TrainedModel::Plain(net);
        let bytes = encode_model(&model);
        assert_eq!(&bytes[0..4], b"GIMC");
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn ewc_model_with_anchors_round_trips() {
        let net = Classifier::init(
            &mut Rng::new(2),
            CellKind::Lmn,
            2,
            CellSizes::uniform(3),
            2,
        );
        let anchor = FisherAnchor {
            fisher: net.named().iter().map(|(_, t)| t.map(|v| v * v)).collect(),
            anchor: net.snapshot(),
            subtask: 0,
        };
        let model = TrainedModel::Ewc(net, vec![anchor]);
        let bytes = encode_model(&model);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn gim_model_round_trips_with_frozen_flags() {
        let mut rng = Rng::new(3);
        let mut gim = GimModel::new(CellKind::Lmn, 2, 2, CellSizes::uniform(3), 4);
        gim.add_module(&mut rng);
        gim.add_module(&mut rng);
        let model = TrainedModel::Gim(gim);
        let bytes = encode_model(&model);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, model);
        if let TrainedModel::Gim(g) = back {
            assert!(g.modules[0].frozen);
            assert!(!g.modules[1].frozen);
            assert!(g.autoencoders[0].frozen);
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let net = Classifier::init(
            &mut Rng::new(4),
            CellKind::Lstm,
            1,
            CellSizes::uniform(2),
            2,
        );
        let model = TrainedModel::Plain(net);
        assert_eq!(encode_model(&model), encode_model(&model));
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let net = Classifier::init(
            &mut Rng::new(5),
            CellKind::Lstm,
            1,
            CellSizes::uniform(2),
            2,
        );
        let bytes = encode_model(&TrainedModel::Plain(net));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).is_err());
        assert!(decode_model(&bytes[..bytes.len() - 4]).is_err());
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
