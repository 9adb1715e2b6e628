//! Loadable memory images.
//!
//! An image is the assembler's output and the machine's input: a sparse
//! list of initialized cells (numbers and instructions; never
//! capabilities, those only exist at run time) plus the entry cursor for
//! the boot capability. The on-disk form is JSON, optionally prefixed
//! with an 8-byte magic so tools can sniff it; both forms load.

use serde_json::{json, Map, Value};

use crate::insn::Insn;
use crate::word::Word;

pub const IMAGE_MAGIC: &[u8; 8] = b"CAPIMG01";
pub const IMAGE_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    /// Number of general-purpose registers the program was assembled for.
    pub m: usize,
    /// Initial pc cursor of the boot thread.
    pub entry: u64,
    /// Initialized cells, sorted by address.
    pub cells: Vec<(u64, Word)>,
}

impl Image {
    pub fn new(m: usize, entry: u64) -> Image {
        Image { m, entry, cells: Vec::new() }
    }

    /// One past the highest initialized address, if any cell is set.
    pub fn span(&self) -> Option<u64> {
        self.cells.iter().map(|&(a, _)| a + 1).max()
    }

    pub fn to_json(&self) -> Value {
        let cells: Vec<Value> = self
            .cells
            .iter()
            .map(|&(addr, word)| {
                let mut cell = Map::new();
                cell.insert("addr".into(), json!(addr));
                match word {
                    Word::Nat(n) => cell.insert("nat".into(), json!(n)),
                    Word::Insn(i) => cell.insert("insn".into(), json!(i.to_string())),
                    Word::Cap(_) => unreachable!("images never hold capabilities"),
                };
                Value::Object(cell)
            })
            .collect();
        json!({
            "format": "capstone-image",
            "version": IMAGE_VERSION,
            "m": self.m,
            "entry": self.entry,
            "cells": cells,
        })
    }

    pub fn from_json(v: &Value) -> Result<Image, String> {
        let obj = v.as_object().ok_or("image: not a JSON object")?;
        match obj.get("format").and_then(Value::as_str) {
            Some("capstone-image") => {}
            _ => return Err("image: bad or missing `format`".into()),
        }
        match obj.get("version").and_then(Value::as_u64) {
            Some(IMAGE_VERSION) => {}
            Some(other) => return Err(format!("image: unsupported version {other}")),
            None => return Err("image: missing `version`".into()),
        }
        let m = obj
            .get("m")
            .and_then(Value::as_u64)
            .ok_or("image: missing `m`")? as usize;
        let entry = obj
            .get("entry")
            .and_then(Value::as_u64)
            .ok_or("image: missing `entry`")?;
        let raw_cells = obj
            .get("cells")
            .and_then(Value::as_array)
            .ok_or("image: missing `cells`")?;

        let mut cells = Vec::with_capacity(raw_cells.len());
        for (i, cell) in raw_cells.iter().enumerate() {
            let cell = cell
                .as_object()
                .ok_or_else(|| format!("image: cell {i} is not an object"))?;
            let addr = cell
                .get("addr")
                .and_then(Value::as_u64)
                .ok_or_else(|| format!("image: cell {i} has no `addr`"))?;
            let word = match (cell.get("nat"), cell.get("insn")) {
                (Some(n), None) => Word::Nat(
                    n.as_u64()
                        .ok_or_else(|| format!("image: cell {i} has a non-integer `nat`"))?,
                ),
                (None, Some(text)) => {
                    let text = text
                        .as_str()
                        .ok_or_else(|| format!("image: cell {i} has a non-string `insn`"))?;
                    Word::Insn(Insn::parse(text, m).map_err(|e| format!("image: cell {i}: {e}"))?)
                }
                _ => {
                    return Err(format!(
                        "image: cell {i} must have exactly one of `nat`/`insn`"
                    ))
                }
            };
            cells.push((addr, word));
        }
        cells.sort_by_key(|&(a, _)| a);
        for pair in cells.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(format!("image: duplicate cell address {}", pair[0].0));
            }
        }
        Ok(Image { m, entry, cells })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = IMAGE_MAGIC.to_vec();
        out.extend_from_slice(self.to_json().to_string().as_bytes());
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Image, String> {
        let body = bytes.strip_prefix(IMAGE_MAGIC.as_slice()).unwrap_or(bytes);
        let v: Value =
            serde_json::from_slice(body).map_err(|e| format!("image: bad JSON: {e}"))?;
        Image::from_json(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Image {
        Image {
            m: 31,
            entry: 2,
            cells: vec![
                (0, Word::Nat(7)),
                (2, Word::Insn(Insn::Li { r: 3, imm: 5 })),
                (3, Word::Insn(Insn::Invalid)),
            ],
        }
    }

    #[test]
    fn bytes_round_trip_with_and_without_magic() {
        let img = sample();
        let bytes = img.to_bytes();
        assert!(bytes.starts_with(IMAGE_MAGIC));
        assert_eq!(Image::from_bytes(&bytes).unwrap(), img);

        let json = img.to_json().to_string();
        assert_eq!(Image::from_bytes(json.as_bytes()).unwrap(), img);
    }

    #[test]
    fn rejects_malformed_cells() {
        let mut v = sample().to_json();
        v["cells"][0] = json!({"addr": 0, "nat": 1, "insn": "jmp ret"});
        assert!(Image::from_json(&v).unwrap_err().contains("exactly one"));

        let mut v = sample().to_json();
        v["cells"][1]["addr"] = json!(0);
        assert!(Image::from_json(&v).unwrap_err().contains("duplicate"));

        let mut v = sample().to_json();
        v["cells"][1]["insn"] = json!("li r99 1");
        assert!(Image::from_json(&v).is_err());
    }

    #[test]
    fn span_is_one_past_highest_cell() {
        assert_eq!(sample().span(), Some(4));
        assert_eq!(Image::new(31, 0).span(), None);
    }
}
