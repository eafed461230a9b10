//! Versioned little-endian binary formats for trained models and for
//! resumable stage-2 training state. Layouts are documented in the README.

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Matrix, MlpModel};
use crate::rng::RngState;

const MODEL_MAGIC: &[u8; 8] = b"CNCMODEL";
const MODEL_VERSION: u32 = 1;

fn write_layer(w: &mut Writer, l: &Dense) {
    w.u64(l.in_dim() as u64);
    w.u64(l.out_dim() as u64);
    w.u8(match l.activation {
        Activation::Relu => 0,
        Activation::Identity => 1,
    });
    w.f64s(l.weight.data());
    w.f64s(&l.bias);
}

fn read_layer(r: &mut Reader) -> Result<Dense> {
    let in_dim = r.u64()? as usize;
    let out_dim = r.u64()? as usize;
    let activation = match r.u8()? {
        0 => Activation::Relu,
        1 => Activation::Identity,
        v => return Err(Error::Format(format!("unknown activation code {v}"))),
    };
    let weight = Matrix::from_vec(out_dim, in_dim, r.f64s()?)?;
    let bias = r.f64s()?;
    Ok(Dense {
        weight,
        bias,
        activation,
    })
}

pub(crate) fn write_model(w: &mut Writer, m: &MlpModel) {
    w.u32(m.encoder.len() as u32);
    for l in &m.encoder {
        write_layer(w, l);
    }
    write_layer(w, &m.classifier);
    w.u32(m.projection.len() as u32);
    for l in &m.projection {
        write_layer(w, l);
    }
}

pub(crate) fn read_model(r: &mut Reader) -> Result<MlpModel> {
    let ne = r.u32()? as usize;
    let encoder = (0..ne).map(|_| read_layer(r)).collect::<Result<Vec<_>>>()?;
    let classifier = read_layer(r)?;
    let np = r.u32()? as usize;
    let projection = (0..np).map(|_| read_layer(r)).collect::<Result<Vec<_>>>()?;
    MlpModel::from_layers(encoder, classifier, projection)
}

pub(crate) fn write_rng(w: &mut Writer, s: &RngState) {
    w.bytes(&s.seed);
    w.u64(s.stream);
    w.u128(s.word_pos);
}

pub(crate) fn read_rng(r: &mut Reader) -> Result<RngState> {
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    Ok(RngState {
        seed,
        stream: r.u64()?,
        word_pos: r.u128()?,
    })
}

pub(crate) fn check_header(r: &mut Reader, magic: &[u8; 8], version: u32, what: &str) -> Result<()> {
    if r.take(8)? != magic {
        return Err(Error::Format(format!("not a {what} file")));
    }
    let v = r.u32()?;
    if v != version {
        return Err(Error::Schema(format!("{what} version {v} unsupported (expected {version})")));
    }
    Ok(())
}

pub fn model_to_bytes(m: &MlpModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    write_model(&mut w, m);
    w.buf
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<MlpModel> {
    let mut r = Reader::new(bytes);
    check_header(&mut r, MODEL_MAGIC, MODEL_VERSION, "model")?;
    let m = read_model(&mut r)?;
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes after model payload".into()));
    }
    Ok(m)
}

pub fn save_model(m: &MlpModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(m))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    model_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use crate::rng;

    #[test]
    fn model_round_trip_is_exact() {
        let cfg = ModelConfig {
            input_dim: 4,
            hidden: vec![6, 5],
            classes: 3,
            projection: vec![7, 2],
        };
        let m = MlpModel::new(&cfg, &mut rng::stream(1, "init")).unwrap();
        let bytes = model_to_bytes(&m);
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert!(model_from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(model_from_bytes(&bad), Err(Error::Schema(_))));
    }
}
