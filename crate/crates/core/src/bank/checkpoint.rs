//! Versioned little-endian binary checkpoint.
//!
//! ```text
//! magic       5 bytes  "EPIDG"
//! version     u32
//! n_domains   u32
//! flags       u8       bit0 = shared label space, bit1 = stem present
//! input_dim   u32
//! n_hidden    u32, then n_hidden × u32 widths
//! split_point u32
//! stem_layers u32
//! label space n_domains × u32
//! trainable   n_domains × u8 (domain-specific branches)
//! tensors     f64, row-major: stem, agnostic feature, agnostic heads,
//!             then per domain its feature and head, then the random heads;
//!             each layer as weights followed by bias
//! ```

use std::fs;
use std::path::Path;

use super::{ArchSpec, DomainBank, LabelSpaces};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Mlp};

pub const MAGIC: &[u8; 5] = b"EPIDG";
pub const VERSION: u32 = 1;

fn models(bank: &DomainBank) -> Vec<&Mlp> {
    let mut out: Vec<&Mlp> = Vec::new();
    out.extend(bank.stem.iter());
    out.push(&bank.agnostic.feature);
    out.extend(bank.agnostic.heads.iter());
    for b in &bank.specific {
        out.push(&b.feature);
        out.extend(b.heads.iter());
    }
    out.extend(bank.random.iter().map(|r| r.classifier()));
    out
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(bank: &DomainBank) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut buf, bank.n_domains());
    let flags = u8::from(bank.label_spaces.shared) | (u8::from(bank.stem.is_some()) << 1);
    buf.push(flags);
    put_u32(&mut buf, bank.arch.input_dim);
    put_u32(&mut buf, bank.arch.hidden.len());
    for &h in &bank.arch.hidden {
        put_u32(&mut buf, h);
    }
    put_u32(&mut buf, bank.arch.split());
    put_u32(&mut buf, bank.arch.stem_layers);
    for &k in &bank.label_spaces.per_domain {
        put_u32(&mut buf, k);
    }
    for b in &bank.specific {
        buf.push(u8::from(b.trainable));
    }
    for m in models(bank) {
        for t in m.params() {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: need {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }
}

// Header counts far beyond anything trainable here are treated as corruption
// rather than allocated.
const MAX_COUNT: usize = 1 << 20;

pub fn decode(bytes: &[u8]) -> Result<DomainBank> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let n = r.u32()?;
    let flags = r.u8()?;
    let input_dim = r.u32()?;
    let n_hidden = r.u32()?;
    if n > MAX_COUNT || n_hidden > MAX_COUNT {
        return Err(Error::Checkpoint("implausible header counts".into()));
    }
    let hidden = (0..n_hidden).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let split = r.u32()?;
    let stem_layers = r.u32()?;
    let per_domain = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let trainable = (0..n).map(|_| r.u8()).collect::<Result<Vec<_>>>()?;

    let arch = ArchSpec {
        input_dim,
        hidden,
        split_point: Some(split),
        stem_layers,
    };
    let spaces = LabelSpaces {
        per_domain,
        shared: flags & 1 == 1,
    };
    let mut bank = DomainBank::build(&arch, &spaces, &mut seeded_rng(0))
        .map_err(|e| Error::Checkpoint(format!("inconsistent header: {e}")))?;
    if bank.stem.is_some() != (flags & 2 == 2) {
        return Err(Error::Checkpoint("stem flag disagrees with stem_layers".into()));
    }
    let expected: usize = models(&bank).iter().map(|m| m.num_params()).sum::<usize>() * 8;
    if bytes.len() - r.pos != expected {
        return Err(Error::Checkpoint(format!(
            "header describes {expected} bytes of parameters, found {}",
            bytes.len() - r.pos
        )));
    }

    let mut fill = |m: &mut Mlp| -> Result<()> {
        for t in m.params_mut() {
            for v in t.data_mut() {
                *v = r.f64()?;
                if !v.is_finite() {
                    return Err(Error::Checkpoint("non-finite parameter".into()));
                }
            }
        }
        Ok(())
    };
    if let Some(stem) = bank.stem.as_mut() {
        fill(stem)?;
    }
    fill(&mut bank.agnostic.feature)?;
    for h in &mut bank.agnostic.heads {
        fill(h)?;
    }
    for (b, &t) in bank.specific.iter_mut().zip(&trainable) {
        fill(&mut b.feature)?;
        for h in &mut b.heads {
            fill(h)?;
        }
        b.trainable = t != 0;
    }
    let mut random = std::mem::take(&mut bank.random);
    for rc in &mut random {
        let mut m = rc.classifier().clone();
        fill(&mut m)?;
        *rc = super::RandomClassifier::from_mlp(m);
    }
    bank.random = random;
    if let Some(split) = bank.arch.split_point {
        if split == bank.arch.hidden.len() {
            bank.arch.split_point = None;
        }
    }
    Ok(bank)
}

pub fn checkpoint_save(bank: &DomainBank, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(bank))?;
    Ok(())
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<DomainBank> {
    decode(&fs::read(path)?)
}

/// Loads and checks that the bank has `n_domains` source domains.
pub fn checkpoint_load_expecting(path: impl AsRef<Path>, n_domains: usize) -> Result<DomainBank> {
    let bank = checkpoint_load(path)?;
    if bank.n_domains() != n_domains {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} domains, expected {n_domains}",
            bank.n_domains()
        )));
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(stem: usize, shared: bool) -> DomainBank {
        let arch = ArchSpec::new(5, vec![7, 6]).with_stem(stem);
        let spaces = if shared {
            LabelSpaces::homogeneous(3, 4)
        } else {
            LabelSpaces::heterogeneous(vec![4, 3, 5])
        };
        DomainBank::build(&arch, &spaces, &mut seeded_rng(17)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for (stem, shared) in [(0, true), (1, true), (0, false)] {
            let mut b = bank(stem, shared);
            b.specific[1].trainable = false;
            let back = decode(&encode(&b)).unwrap();
            assert_eq!(back.arch, b.arch);
            assert_eq!(back.label_spaces, b.label_spaces);
            assert!(back.agnostic.params_bit_eq(&b.agnostic));
            for (x, y) in back.specific.iter().zip(&b.specific) {
                assert!(x.params_bit_eq(y));
                assert_eq!(x.trainable, y.trainable);
            }
            for (x, y) in back.random.iter().zip(&b.random) {
                assert!(x.classifier().params_bit_eq(y.classifier()));
            }
            assert_eq!(back.stem.is_some(), b.stem.is_some());
            assert_eq!(encode(&back), encode(&b));
        }
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = encode(&bank(0, true));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(Error::Checkpoint(m)) if m.contains("magic")));

        let mut bad_version = bytes.clone();
        bad_version[5] = 9;
        assert!(matches!(decode(&bad_version), Err(Error::Checkpoint(m)) if m.contains("version")));

        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(&bytes[..20]).is_err());

        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(decode(&extra).is_err());

        // widen the first hidden layer without adding parameters
        let mut inconsistent = bytes.clone();
        inconsistent[5 + 4 + 4 + 1 + 4 + 4] = 8;
        assert!(decode(&inconsistent).is_err());
    }

    #[test]
    fn wrong_domain_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        checkpoint_save(&bank(0, true), &path).unwrap();
        assert!(checkpoint_load_expecting(&path, 3).is_ok());
        assert!(matches!(
            checkpoint_load_expecting(&path, 4),
            Err(Error::Checkpoint(_))
        ));
    }
}
