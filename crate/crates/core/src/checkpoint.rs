//! Component checkpoints: a text header carrying the architecture descriptor
//! followed by every stored value as a little-endian `f32`, in declaration
//! order.
//!
//! ```text
//! GFR-CKPT 1
//! <descriptor>
//! <value count>
//! <count × f32 LE>
//! ```

use std::fs;
use std::path::Path;

use crate::error::{GfrError, Result};
use crate::nn::Parameterized;

const MAGIC: &str = "GFR-CKPT 1";

pub fn encode(descriptor: &str, module: &impl Parameterized) -> Vec<u8> {
    assert!(!descriptor.contains('\n'), "descriptor must be a single line");
    let mut state = Vec::new();
    module.state(&mut state);
    let count: usize = state.iter().map(|s| s.len()).sum();
    let mut out = format!("{MAGIC}\n{descriptor}\n{count}\n").into_bytes();
    out.reserve(count * 4);
    for v in state.iter().flat_map(|s| s.iter()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Splits a checkpoint into its descriptor and values.
pub fn decode(path: &Path, bytes: &[u8]) -> Result<(String, Vec<f32>)> {
    let mut lines = Vec::with_capacity(3);
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            lines.push(&bytes[start..i]);
            start = i + 1;
            if lines.len() == 3 {
                break;
            }
        }
    }
    if lines.len() < 3 {
        return Err(GfrError::format(path, "truncated checkpoint header"));
    }
    let text = |b: &[u8]| String::from_utf8(b.to_vec()).map_err(|_| GfrError::format(path, "header is not UTF-8"));
    if text(lines[0])? != MAGIC {
        return Err(GfrError::format(path, "not a checkpoint file"));
    }
    let descriptor = text(lines[1])?;
    let count: usize = text(lines[2])?
        .parse()
        .map_err(|_| GfrError::format(path, "bad value count"))?;
    let body = &bytes[start..];
    if body.len() != count * 4 {
        return Err(GfrError::format(
            path,
            format!("expected {count} values, found {} bytes", body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((descriptor, values))
}

/// Copies decoded values into a module whose layout matches.
pub fn restore(path: &Path, values: &[f32], module: &mut impl Parameterized) -> Result<()> {
    let mut state = Vec::new();
    module.state_mut(&mut state);
    let expected: usize = state.iter().map(|s| s.len()).sum();
    if expected != values.len() {
        return Err(GfrError::format(
            path,
            format!("checkpoint holds {} values, module expects {expected}", values.len()),
        ));
    }
    let mut it = values.iter();
    for s in state {
        for v in s.iter_mut() {
            *v = *it.next().expect("length checked") as f64;
        }
    }
    Ok(())
}

pub fn save(path: &Path, descriptor: &str, module: &impl Parameterized) -> Result<()> {
    fs::write(path, encode(descriptor, module)).map_err(|e| GfrError::io(path, e))
}

pub fn read(path: &Path) -> Result<(String, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| GfrError::io(path, e))?;
    decode(path, &bytes)
}

/// Loads values into `module`, requiring the stored descriptor to equal
/// `descriptor`.
pub fn load_into(path: &Path, descriptor: &str, module: &mut impl Parameterized) -> Result<()> {
    let (found, values) = read(path)?;
    if found != descriptor {
        return Err(GfrError::format(
            path,
            format!("architecture mismatch: file has `{found}`, expected `{descriptor}`"),
        ));
    }
    restore(path, &values, module)
}
