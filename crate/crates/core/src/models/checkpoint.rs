//! KJC1 checkpoint files.
//!
//! Little-endian layout: magic `KJC1`, u32 format version, u64 architecture
//! digest, u32 parameter count, then per parameter a u16 name length, the
//! UTF-8 name, u32 rank, u32 dims and the f32 data. Online parameters come
//! first in inventory order; in JEPA mode the EMA encoder follows under the
//! `ema.` name prefix.

use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::config::{config_digest, ModelConfig, TrainMode};
use crate::models::net::Model;
use crate::numerics::{ModelParams, Tensor};

pub const KJC1_MAGIC: [u8; 4] = *b"KJC1";
pub const KJC1_VERSION: u32 = 1;

/// Writes the model to `path`, refusing non-finite parameters and anything
/// that does not match its own architecture inventory.
pub fn save_checkpoint(path: &Path, model: &Model<f32>) -> Result<()> {
    model.validate()?;
    let finite = model.online.all_finite() && model.ema.as_ref().is_none_or(|p| p.all_finite());
    if !finite {
        return Err(Error::numeric(format!(
            "refusing to write non-finite parameters to {}",
            path.display()
        )));
    }

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&KJC1_MAGIC)?;
    out.write_all(&KJC1_VERSION.to_le_bytes())?;
    out.write_all(&config_digest(&model.config, model.mode).to_le_bytes())?;
    let total = model.online.len() + model.ema.as_ref().map_or(0, |p| p.len());
    out.write_all(&(total as u32).to_le_bytes())?;
    for (name, tensor) in model.online.iter() {
        write_param(&mut out, name, tensor)?;
    }
    if let Some(ema) = &model.ema {
        for (name, tensor) in ema.iter() {
            write_param(&mut out, &format!("ema.{name}"), tensor)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_param(out: &mut impl Write, name: &str, tensor: &Tensor<f32>) -> Result<()> {
    let name_len = u16::try_from(name.len())
        .map_err(|_| Error::contract(format!("parameter name too long: {name:?}")))?;
    out.write_all(&name_len.to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    let rank = u32::try_from(tensor.shape().len())
        .map_err(|_| Error::contract(format!("parameter rank too large: {name:?}")))?;
    out.write_all(&rank.to_le_bytes())?;
    for &dim in tensor.shape() {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::contract(format!("dimension of {name:?} exceeds u32")))?;
        out.write_all(&dim.to_le_bytes())?;
    }
    for &v in tensor.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`] and validates it against
/// the given architecture: digest, parameter names, shapes and order must all
/// match, and every value must be finite.
pub fn load_checkpoint(path: &Path, config: &ModelConfig, mode: TrainMode) -> Result<Model<f32>> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };

    if cur.take(4)? != KJC1_MAGIC {
        return Err(Error::format(format!("{} is not a KJC1 checkpoint", path.display())));
    }
    let version = cur.u32()?;
    if version != KJC1_VERSION {
        return Err(Error::format(format!(
            "{}: unsupported checkpoint version {version} (expected {KJC1_VERSION})",
            path.display()
        )));
    }
    let digest = cur.u64()?;
    let expected = config_digest(config, mode);
    if digest != expected {
        return Err(Error::format(format!(
            "{}: checkpoint architecture digest {digest:#018x} does not match the configured \
             architecture digest {expected:#018x}",
            path.display()
        )));
    }

    let total = cur.u32()? as usize;
    let mut online = ModelParams::new();
    let mut ema = ModelParams::new();
    for _ in 0..total {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::format(format!("{}: parameter name is not UTF-8", path.display())))?
            .to_owned();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let len = shape.iter().product();
        let tensor = Tensor::new(shape, cur.f32s(len)?)?;
        if !tensor.all_finite() {
            return Err(Error::format(format!(
                "{}: parameter {name:?} contains non-finite values",
                path.display()
            )));
        }
        match name.strip_prefix("ema.") {
            Some(rest) => ema.insert(rest.to_owned(), tensor)?,
            None => online.insert(name, tensor)?,
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(format!(
            "{}: {} trailing bytes after the last parameter",
            path.display(),
            bytes.len() - cur.pos
        )));
    }

    let model = Model {
        config: config.clone(),
        mode,
        online,
        ema: (!ema.is_empty()).then_some(ema),
    };
    model.validate()?;
    Ok(model)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(format!(
                "{}: truncated checkpoint (needed {n} bytes at offset {})",
                self.path.display(),
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("sized slice")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("sized slice")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("sized slice")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("sized chunk"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    use super::*;
    use crate::models::config::{HeadKind, LinearInit, PredictorKind};

    fn tiny_config(latent_dim: usize) -> ModelConfig {
        ModelConfig {
            input_len: 16,
            latent_dim,
            head: HeadKind::TwoLayer,
            predictor: PredictorKind::Linear { init: LinearInit::Random },
        }
    }

    fn tiny_model(latent_dim: usize, mode: TrainMode, seed: u64) -> Model<f32> {
        Model::init(&tiny_config(latent_dim), mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn assert_params_equal(a: &ModelParams<f32>, b: &ModelParams<f32>) {
        let a_names: Vec<&str> = a.names().collect();
        let b_names: Vec<&str> = b.names().collect();
        assert_eq!(a_names, b_names);
        for (name, tensor) in a.iter() {
            let other = b.require(name).unwrap();
            assert_eq!(tensor.shape(), other.shape(), "{name}");
            assert_eq!(tensor.data(), other.data(), "{name}");
        }
    }

    #[test]
    fn round_trip_preserves_parameters_bit_for_bit() {
        let dir = tempdir().unwrap();
        for (mode, file) in [(TrainMode::Jepa, "jepa.kjc1"), (TrainMode::Ae, "ae.kjc1")] {
            let mut model = tiny_model(3, mode, 7);
            // Perturb the EMA so the round trip cannot pass by rebuilding it
            // from the online encoder.
            if let Some(ema) = model.ema.as_mut() {
                for v in ema.require_mut("encoder.conv1.bias").unwrap().data_mut() {
                    *v += 0.125;
                }
            }
            let path = dir.path().join(file);
            save_checkpoint(&path, &model).unwrap();
            let loaded = load_checkpoint(&path, &tiny_config(3), mode).unwrap();
            assert_eq!(loaded.mode, mode);
            assert_params_equal(&loaded.online, &model.online);
            match (&loaded.ema, &model.ema) {
                (Some(a), Some(b)) => assert_params_equal(a, b),
                (None, None) => {}
                other => panic!("ema presence mismatch: {other:?}"),
            }
        }
    }

    #[test]
    fn ema_prefix_appears_in_the_file_exactly_for_jepa() {
        let dir = tempdir().unwrap();
        let needle = b"ema.encoder.conv1.weight";
        let contains = |bytes: &[u8]| bytes.windows(needle.len()).any(|w| w == needle);

        let jepa_path = dir.path().join("jepa.kjc1");
        save_checkpoint(&jepa_path, &tiny_model(2, TrainMode::Jepa, 1)).unwrap();
        assert!(contains(&fs::read(&jepa_path).unwrap()));

        let ae_path = dir.path().join("ae.kjc1");
        save_checkpoint(&ae_path, &tiny_model(2, TrainMode::Ae, 1)).unwrap();
        assert!(!contains(&fs::read(&ae_path).unwrap()));
    }

    #[test]
    fn architecture_mismatch_is_rejected_by_digest() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.kjc1");
        save_checkpoint(&path, &tiny_model(2, TrainMode::Jepa, 3)).unwrap();

        let err = load_checkpoint(&path, &tiny_config(4), TrainMode::Jepa).unwrap_err();
        assert!(err.to_string().contains("digest"), "unexpected error: {err}");
        let err = load_checkpoint(&path, &tiny_config(2), TrainMode::Ae).unwrap_err();
        assert!(err.to_string().contains("digest"), "unexpected error: {err}");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.kjc1");
        save_checkpoint(&path, &tiny_model(2, TrainMode::Jepa, 5)).unwrap();
        let good = fs::read(&path).unwrap();

        let bad_magic = dir.path().join("bad_magic.kjc1");
        let mut bytes = good.clone();
        bytes[0] = b'X';
        fs::write(&bad_magic, &bytes).unwrap();
        let err = load_checkpoint(&bad_magic, &tiny_config(2), TrainMode::Jepa).unwrap_err();
        assert!(err.to_string().contains("not a KJC1"), "unexpected error: {err}");

        let truncated = dir.path().join("truncated.kjc1");
        fs::write(&truncated, &good[..good.len() - 10]).unwrap();
        let err = load_checkpoint(&truncated, &tiny_config(2), TrainMode::Jepa).unwrap_err();
        assert!(err.to_string().contains("truncated"), "unexpected error: {err}");

        let trailing = dir.path().join("trailing.kjc1");
        let mut bytes = good.clone();
        bytes.extend_from_slice(&[0u8; 3]);
        fs::write(&trailing, &bytes).unwrap();
        let err = load_checkpoint(&trailing, &tiny_config(2), TrainMode::Jepa).unwrap_err();
        assert!(err.to_string().contains("trailing"), "unexpected error: {err}");
    }

    #[test]
    fn non_finite_parameters_are_refused_on_save() {
        let dir = tempdir().unwrap();
        let mut model = tiny_model(2, TrainMode::Jepa, 9);
        model.online.require_mut("encoder.conv2.bias").unwrap().data_mut()[0] = f32::NAN;
        let err = save_checkpoint(&dir.path().join("nan.kjc1"), &model).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "unexpected error: {err}");
    }
}
