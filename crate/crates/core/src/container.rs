//! Self-describing binary container used for checkpoints and trial-batch exports.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic (format specific, ASCII)
//! 8       8     u64 header length H in bytes
//! 16      H     UTF-8 JSON header; must contain "blocks": [{"name", "len"}, ...]
//! 16+H    ...   blocks in header order, each `len` f64 values, little-endian IEEE-754
//! ```
//!
//! Nothing follows the last block.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

/// Writes `header` (a JSON object) with a `blocks` entry appended, followed by the blocks.
pub fn write<W: Write>(
    mut w: W,
    magic: &[u8; 8],
    mut header: Value,
    blocks: &[(&str, &[f64])],
) -> Result<()> {
    let infos: Vec<BlockInfo> = blocks
        .iter()
        .map(|(name, data)| BlockInfo {
            name: (*name).to_string(),
            len: data.len(),
        })
        .collect();
    let obj = header
        .as_object_mut()
        .ok_or_else(|| Error::Format("container header must be a JSON object".into()))?;
    obj.insert("blocks".into(), serde_json::to_value(&infos)?);
    let header_bytes = serde_json::to_vec(&header)?;

    w.write_all(magic)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, data) in blocks {
        let mut buf = Vec::with_capacity(data.len() * 8);
        for x in data.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a container, checking the magic. Returns the header and the named blocks.
pub fn read<R: Read>(mut r: R, magic: &[u8; 8]) -> Result<(Value, Vec<(String, Vec<f64>)>)> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let header_len = u64::from_le_bytes(len) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Value = serde_json::from_slice(&header_bytes)?;
    let infos: Vec<BlockInfo> = serde_json::from_value(
        header
            .get("blocks")
            .cloned()
            .ok_or_else(|| Error::Format("header has no blocks".into()))?,
    )?;

    let mut blocks = Vec::with_capacity(infos.len());
    for info in infos {
        let mut raw = vec![0u8; info.len * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        blocks.push((info.name, data));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last block".into()));
    }
    Ok((header, blocks))
}

pub(crate) fn take_block(blocks: &mut Vec<(String, Vec<f64>)>, name: &str) -> Result<Vec<f64>> {
    let pos = blocks
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Format(format!("missing block {name}")))?;
    Ok(blocks.remove(pos).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn layout_is_bit_exact() {
        let mut buf = Vec::new();
        write(&mut buf, b"TESTMAG1", json!({}), &[("a", &[1.0, -2.0])]).unwrap();
        let header = br#"{"blocks":[{"len":2,"name":"a"}]}"#;
        let mut expected = b"TESTMAG1".to_vec();
        expected.extend_from_slice(&(header.len() as u64).to_le_bytes());
        expected.extend_from_slice(header);
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_wrong_magic_and_trailing_bytes() {
        let mut buf = Vec::new();
        write(&mut buf, b"TESTMAG1", json!({"x": 1}), &[("a", &[3.0])]).unwrap();
        assert!(read(&buf[..], b"OTHERMAG").is_err());
        let (h, blocks) = read(&buf[..], b"TESTMAG1").unwrap();
        assert_eq!(h["x"], 1);
        assert_eq!(blocks[0].1, vec![3.0]);
        buf.push(0);
        assert!(read(&buf[..], b"TESTMAG1").is_err());
    }
}
