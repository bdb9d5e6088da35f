//! On-disk dataset format.
//!
//! A split file is little-endian binary: magic `KJD1`, `u32` version,
//! `u32` num_pairs, `u32` context_len, `u32` target_len, `u32`
//! num_regimes, then per pair a `u16` regime label, `u32` sequence index,
//! and the context and target samples as IEEE-754 single precision. The
//! sidecar manifest is plain `key=value` text carrying the generation
//! settings and each file's 64-bit content hash.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hash::{fnv1a64, Fnv1a64};
use crate::synthgen::dataset::{DatasetSplit, WindowPair};

pub const KJD1_MAGIC: [u8; 4] = *b"KJD1";
pub const KJD1_VERSION: u32 = 1;

/// Streaming writer that hashes every byte as it goes out, so the content
/// hash never needs a second pass over the file.
pub struct KjdWriter {
    out: BufWriter<File>,
    hash: Fnv1a64,
    context_len: u32,
    target_len: u32,
    num_regimes: u32,
    expected: u32,
    written: u32,
}

impl KjdWriter {
    pub fn create(
        path: &Path,
        num_pairs: u32,
        context_len: u32,
        target_len: u32,
        num_regimes: u32,
    ) -> Result<Self> {
        let file = File::create(path)?;
        let mut writer = Self {
            out: BufWriter::new(file),
            hash: Fnv1a64::new(),
            context_len,
            target_len,
            num_regimes,
            expected: num_pairs,
            written: 0,
        };
        writer.put(&KJD1_MAGIC)?;
        writer.put(&KJD1_VERSION.to_le_bytes())?;
        writer.put(&num_pairs.to_le_bytes())?;
        writer.put(&context_len.to_le_bytes())?;
        writer.put(&target_len.to_le_bytes())?;
        writer.put(&num_regimes.to_le_bytes())?;
        Ok(writer)
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.out.write_all(bytes)?;
        self.hash.update(bytes);
        Ok(())
    }

    pub fn write_pair(&mut self, pair: &WindowPair) -> Result<()> {
        if self.written == self.expected {
            return Err(Error::contract(format!(
                "file declared {} pairs, refusing to write more",
                self.expected
            )));
        }
        if pair.context.len() != self.context_len as usize
            || pair.target.len() != self.target_len as usize
        {
            return Err(Error::dim(format!(
                "pair windows {}x{} do not match header {}x{}",
                pair.context.len(),
                pair.target.len(),
                self.context_len,
                self.target_len
            )));
        }
        if u32::from(pair.regime_label) >= self.num_regimes {
            return Err(Error::contract(format!(
                "regime label {} out of range 0..{}",
                pair.regime_label, self.num_regimes
            )));
        }
        self.put(&pair.regime_label.to_le_bytes())?;
        self.put(&pair.seq_index.to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * (pair.context.len() + pair.target.len()));
        for v in pair.context.iter().chain(&pair.target) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.put(&buf)?;
        self.written += 1;
        Ok(())
    }

    /// Flushes and returns the content hash of everything written.
    pub fn finish(mut self) -> Result<u64> {
        if self.written != self.expected {
            return Err(Error::contract(format!(
                "file declared {} pairs but {} were written",
                self.expected, self.written
            )));
        }
        self.out.flush()?;
        Ok(self.hash.finish())
    }
}

/// Little-endian cursor over an in-memory file image.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(format!(
                "truncated file: wanted {n} bytes at offset {}, only {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("size checked")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("size checked")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("size checked"))).collect())
    }
}

/// Loads a split file, validating the header, the exact byte length, label
/// ranges and sample finiteness.
pub fn read_kjd1(path: &Path) -> Result<DatasetSplit> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(4)? != KJD1_MAGIC {
        return Err(Error::format(format!("{} is not a KJD1 file (bad magic)", path.display())));
    }
    let version = cur.u32()?;
    if version != KJD1_VERSION {
        return Err(Error::format(format!(
            "unsupported KJD1 version {version}, expected {KJD1_VERSION}"
        )));
    }
    let num_pairs = cur.u32()? as usize;
    let context_len = cur.u32()? as usize;
    let target_len = cur.u32()? as usize;
    let num_regimes = cur.u32()? as usize;

    let pair_bytes = 2 + 4 + 4 * (context_len + target_len);
    let expected = cur.pos + num_pairs * pair_bytes;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "file length {} does not match header ({} pairs of {} bytes)",
            bytes.len(),
            num_pairs,
            pair_bytes
        )));
    }

    let mut pairs = Vec::with_capacity(num_pairs);
    for _ in 0..num_pairs {
        let regime_label = cur.u16()?;
        if regime_label as usize >= num_regimes {
            return Err(Error::format(format!(
                "regime label {regime_label} out of range 0..{num_regimes}"
            )));
        }
        let seq_index = cur.u32()?;
        let context = cur.f32s(context_len)?;
        let target = cur.f32s(target_len)?;
        if !context.iter().chain(&target).all(|v| v.is_finite()) {
            return Err(Error::format(format!(
                "non-finite sample in pair (regime {regime_label}, seq {seq_index})"
            )));
        }
        pairs.push(WindowPair { regime_label, seq_index, context, target });
    }
    Ok(DatasetSplit { pairs, context_len, target_len, num_regimes })
}

/// Content hash of an arbitrary file, as recorded in manifests.
pub fn file_hash(path: &Path) -> Result<u64> {
    Ok(fnv1a64(&fs::read(path)?))
}

/// Sidecar manifest describing how a dataset was generated.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub generator: String,
    pub global_seed: u64,
    pub seqs_per_regime: u32,
    pub master_len: usize,
    pub context_len: usize,
    pub delta: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub hash_train: u64,
    pub hash_val: u64,
    pub hash_test: u64,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        format!(
            "generator={}\nglobal_seed={}\nseqs_per_regime={}\nmaster_len={}\ncontext_len={}\ndelta={}\ntrain_frac={}\nval_frac={}\ntest_frac={}\nhash_train={:#018x}\nhash_val={:#018x}\nhash_test={:#018x}\n",
            self.generator,
            self.global_seed,
            self.seqs_per_regime,
            self.master_len,
            self.context_len,
            self.delta,
            self.train_frac,
            self.val_frac,
            self.test_frac,
            self.hash_train,
            self.hash_val,
            self.hash_test,
        )
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut generator = None;
        let mut global_seed = None;
        let mut seqs_per_regime = None;
        let mut master_len = None;
        let mut context_len = None;
        let mut delta = None;
        let mut train_frac = None;
        let mut val_frac = None;
        let mut test_frac = None;
        let mut hash_train = None;
        let mut hash_val = None;
        let mut hash_test = None;

        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format(format!("manifest line {}: expected key=value", lineno + 1))
            })?;
            let parse_err = |what: &str| {
                Error::format(format!("manifest line {}: bad {what}: {value}", lineno + 1))
            };
            match key {
                "generator" => generator = Some(value.to_string()),
                "global_seed" => global_seed = Some(value.parse().map_err(|_| parse_err("u64"))?),
                "seqs_per_regime" => {
                    seqs_per_regime = Some(value.parse().map_err(|_| parse_err("u32"))?)
                }
                "master_len" => master_len = Some(value.parse().map_err(|_| parse_err("usize"))?),
                "context_len" => context_len = Some(value.parse().map_err(|_| parse_err("usize"))?),
                "delta" => delta = Some(value.parse().map_err(|_| parse_err("usize"))?),
                "train_frac" => train_frac = Some(value.parse().map_err(|_| parse_err("f64"))?),
                "val_frac" => val_frac = Some(value.parse().map_err(|_| parse_err("f64"))?),
                "test_frac" => test_frac = Some(value.parse().map_err(|_| parse_err("f64"))?),
                "hash_train" => hash_train = Some(parse_hex(value).ok_or_else(|| parse_err("hash"))?),
                "hash_val" => hash_val = Some(parse_hex(value).ok_or_else(|| parse_err("hash"))?),
                "hash_test" => hash_test = Some(parse_hex(value).ok_or_else(|| parse_err("hash"))?),
                other => {
                    return Err(Error::format(format!(
                        "manifest line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }

        let missing = |what: &str| Error::format(format!("manifest missing key {what:?}"));
        Ok(Self {
            generator: generator.ok_or_else(|| missing("generator"))?,
            global_seed: global_seed.ok_or_else(|| missing("global_seed"))?,
            seqs_per_regime: seqs_per_regime.ok_or_else(|| missing("seqs_per_regime"))?,
            master_len: master_len.ok_or_else(|| missing("master_len"))?,
            context_len: context_len.ok_or_else(|| missing("context_len"))?,
            delta: delta.ok_or_else(|| missing("delta"))?,
            train_frac: train_frac.ok_or_else(|| missing("train_frac"))?,
            val_frac: val_frac.ok_or_else(|| missing("val_frac"))?,
            test_frac: test_frac.ok_or_else(|| missing("test_frac"))?,
            hash_train: hash_train.ok_or_else(|| missing("hash_train"))?,
            hash_val: hash_val.ok_or_else(|| missing("hash_val"))?,
            hash_test: hash_test.ok_or_else(|| missing("hash_test"))?,
        })
    }
}

fn parse_hex(value: &str) -> Option<u64> {
    u64::from_str_radix(value.strip_prefix("0x")?, 16).ok()
}
