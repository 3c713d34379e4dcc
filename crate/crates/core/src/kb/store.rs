//! `.cmkb` knowledge base files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"CMKB"
//! version  u32
//! meta     section: JSON-encoded KbMeta
//! windows  section: JSON array of TimeWindow
//! vectors  section: u64 count, u32 dim, count * dim f64
//! ```
//!
//! Each section is `u64 length, payload, u32 crc32(payload)`. Trailing bytes
//! are rejected.

use super::{KbEntry, KbMeta, KnowledgeBase, TimeWindow};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CMKB";
pub const FORMAT_VERSION: u32 = 1;

pub(super) fn encode(kb: &KnowledgeBase) -> Vec<u8> {
    let meta = serde_json::to_vec(&kb.meta).expect("meta serializes");
    let windows: Vec<&TimeWindow> = kb.entries.iter().map(|e| &e.window).collect();
    let windows = serde_json::to_vec(&windows).expect("windows serialize");

    let dim = kb.dim();
    let mut vectors = Vec::with_capacity(12 + kb.entries.len() * dim * 8);
    vectors.extend_from_slice(&(kb.entries.len() as u64).to_le_bytes());
    vectors.extend_from_slice(&(dim as u32).to_le_bytes());
    for e in &kb.entries {
        for v in &e.embedding {
            vectors.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(8 + meta.len() + windows.len() + vectors.len() + 36);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for payload in [&meta, &windows, &vectors] {
        write_section(&mut out, payload);
    }
    out
}

fn write_section(out: &mut Vec<u8>, payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::Format(format!(
                "truncated {what}: need {n} bytes, {remaining} left"
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn section(&mut self, name: &'static str) -> Result<&'a [u8]> {
        let len = self.u64(name)?;
        let len = usize::try_from(len).map_err(|_| Error::Format(format!("{name} section length overflows")))?;
        let payload = self.take(len, name)?;
        let stored = self.u32(name)?;
        if crc32fast::hash(payload) != stored {
            return Err(Error::Checksum { section: name });
        }
        Ok(payload)
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<KnowledgeBase> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a knowledge base file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let meta: KbMeta = serde_json::from_slice(r.section("meta")?).map_err(|e| Error::Format(format!("meta: {e}")))?;
    let windows: Vec<TimeWindow> =
        serde_json::from_slice(r.section("windows")?).map_err(|e| Error::Format(format!("windows: {e}")))?;

    let vectors = r.section("vectors")?;
    let mut v = Reader { bytes: vectors, pos: 0 };
    let count = v.u64("vector count")? as usize;
    let dim = v.u32("vector dim")? as usize;
    if dim != meta.dim() || count != meta.entry_count || count != windows.len() {
        return Err(Error::Format(format!(
            "inconsistent sizes: meta says {} x {}, vectors {count} x {dim}, {} windows",
            meta.entry_count,
            meta.dim(),
            windows.len()
        )));
    }
    let expected = count
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Format("vector section size overflows".into()))?;
    let raw = v.take(expected, "vector data")?;
    if v.pos != vectors.len() {
        return Err(Error::Format("trailing bytes in vector section".into()));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after last section".into()));
    }

    let entries = windows
        .into_iter()
        .zip(raw.chunks_exact(dim.max(1) * 8))
        .map(|(window, chunk)| KbEntry {
            window,
            embedding: chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
        })
        .collect::<Vec<_>>();
    if entries.len() != count {
        return Err(Error::Format("vector data does not match window count".into()));
    }

    let kb = KnowledgeBase::from_entries(meta.clone(), entries)?;
    if kb.meta != meta {
        return Err(Error::Format("entries are not in canonical order".into()));
    }
    Ok(kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{FusionConfig, HashEmbedder};
    use crate::kb::{build_windows, index};
    use crate::model::{Dialogue, Scenario, Utterance};

    fn kb(n: usize) -> KnowledgeBase {
        let d = Dialogue {
            id: "dlg".into(),
            scenario: Scenario::SocialMedia,
            utterances: (0..n)
                .map(|i| Utterance::new(i, "s", format!("words {i} here"), i as f64, i as f64 + 0.5))
                .collect(),
            audio: Default::default(),
        };
        let f = FusionConfig::default();
        let ws = build_windows(&d, 10, 5, &f).unwrap();
        index(&ws, &d, &HashEmbedder::new(8, 2), &f).unwrap()
    }

    #[test]
    fn round_trip() {
        for n in [0, 12, 100] {
            let kb = if n == 0 {
                let base = kb(12);
                KnowledgeBase::from_entries(base.meta().clone(), Vec::new()).unwrap()
            } else {
                kb(n)
            };
            let bytes = kb.persist();
            assert_eq!(KnowledgeBase::load(&bytes).unwrap(), kb);
        }
    }

    #[test]
    fn every_single_byte_corruption_is_rejected() {
        let bytes = kb(12).persist();
        for pos in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x01;
            assert!(KnowledgeBase::load(&bad).is_err(), "flip at {pos} accepted");
        }
    }

    #[test]
    fn payload_corruption_is_checksum_error() {
        let mut bytes = kb(12).persist();
        let last_payload = bytes.len() - 5;
        bytes[last_payload] ^= 0xff;
        assert!(matches!(
            KnowledgeBase::load(&bytes),
            Err(Error::Checksum { section: "vectors" })
        ));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = kb(12).persist();
        bytes[4] = 9;
        assert!(matches!(
            KnowledgeBase::load(&bytes),
            Err(Error::VersionMismatch { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let bytes = kb(12).persist();
        assert!(KnowledgeBase::load(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(KnowledgeBase::load(&longer).is_err());
    }
}
