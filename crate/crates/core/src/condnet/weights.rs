//! `CNW1` weight files: a text manifest, then little-endian f32 payloads.
//!
//! ```text
//! CNW1
//! inputs 2
//! outputs 1
//! depth 4
//! log2_size 6
//! kernels.r 3 3 3 ; 3 3 3
//! kernels.s 5 5 5
//! kernels.t 5 5 5
//! tensor enc1.1.conv.w 4x1x3x3 0
//! ...
//! end
//! ```
//!
//! Tensor offsets are byte offsets into the payload that follows `end\n`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::NetConfig;
use super::network::{Network, Param};
use crate::error::{Error, Result};

const MAGIC: &str = "CNW1";

fn kernel_line(table: &[Vec<usize>]) -> String {
    table
        .iter()
        .map(|row| row.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join(" ; ")
}

pub fn encode_weights(net: &Network) -> Vec<u8> {
    let cfg = net.config();
    let mut head = String::new();
    let _ = writeln!(head, "{MAGIC}");
    let _ = writeln!(head, "inputs {}", cfg.inputs);
    let _ = writeln!(head, "outputs {}", cfg.outputs);
    let _ = writeln!(head, "depth {}", cfg.depth);
    let _ = writeln!(head, "log2_size {}", cfg.log2_size);
    let _ = writeln!(head, "kernels.r {}", kernel_line(&cfg.r));
    let _ = writeln!(head, "kernels.s {}", kernel_line(&cfg.s));
    let _ = writeln!(head, "kernels.t {}", kernel_line(&cfg.t));
    let mut offset = 0usize;
    for p in net.params() {
        let shape = p.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        let _ = writeln!(head, "tensor {} {} {}", p.name, shape, offset);
        offset += 4 * p.data.len();
    }
    head.push_str("end\n");
    let mut out = head.into_bytes();
    out.reserve(offset);
    for p in net.params() {
        for &v in &p.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn parse_kernels(line: usize, text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(';')
        .map(|row| {
            row.split_whitespace()
                .map(|k| k.parse().map_err(|_| Error::parse(line, format!("bad kernel size `{k}`"))))
                .collect()
        })
        .collect()
}

pub fn decode_weights(bytes: &[u8]) -> Result<Network> {
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| Error::MalformedHeader("weight manifest has no `end` line".into()))?;
    let head = std::str::from_utf8(&bytes[..end + 1])
        .map_err(|_| Error::MalformedHeader("weight manifest is not UTF-8".into()))?;
    let payload = &bytes[end + 5..];
    let mut lines = head.lines().enumerate();
    match lines.next() {
        Some((_, MAGIC)) => {}
        other => {
            return Err(Error::MalformedHeader(format!(
                "expected `{MAGIC}`, found `{}`",
                other.map(|(_, l)| l).unwrap_or("")
            )))
        }
    }
    let mut cfg = NetConfig::uniform(0, 0, 0, 0, 1, 1, 1);
    let mut tensors: Vec<(String, Vec<usize>, usize)> = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let (key, rest) = line.split_once(' ').ok_or_else(|| Error::parse(n, format!("malformed line `{line}`")))?;
        let number = |s: &str| -> Result<usize> { s.trim().parse().map_err(|_| Error::parse(n, format!("bad number `{s}`"))) };
        match key {
            "inputs" => cfg.inputs = number(rest)?,
            "outputs" => cfg.outputs = number(rest)?,
            "depth" => cfg.depth = number(rest)?,
            "log2_size" => cfg.log2_size = number(rest)?,
            "kernels.r" => cfg.r = parse_kernels(n, rest)?,
            "kernels.s" => cfg.s = parse_kernels(n, rest)?,
            "kernels.t" => cfg.t = parse_kernels(n, rest)?,
            "tensor" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let [name, shape, offset] = parts[..] else {
                    return Err(Error::parse(n, "tensor lines are `tensor <name> <shape> <offset>`"));
                };
                let shape = shape.split('x').map(number).collect::<Result<Vec<_>>>()?;
                tensors.push((name.to_string(), shape, number(offset)?));
            }
            other => return Err(Error::parse(n, format!("unknown key `{other}`"))),
        }
    }
    let mut net = Network::build(&cfg, 0)?;
    let mut params = Vec::with_capacity(tensors.len());
    for ((name, shape, offset), template) in tensors.into_iter().zip(net.params()) {
        let len: usize = shape.iter().product();
        let bytes = payload.get(offset..offset + 4 * len).ok_or(Error::PayloadMismatch {
            expected: offset + 4 * len,
            found: payload.len(),
        })?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        params.push(Param { name, shape, data, trainable: template.trainable });
    }
    net.load_params(params)?;
    Ok(net)
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_weights(net))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network> {
    decode_weights(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_values() {
        let cfg = NetConfig::uniform(2, 2, 2, 3, 3, 3, 1);
        let net = Network::build(&cfg, 4).unwrap();
        let bytes = encode_weights(&net);
        assert!(bytes.starts_with(b"CNW1\n"));
        let back = decode_weights(&bytes).unwrap();
        assert_eq!(back.config(), &cfg);
        for (a, b) in net.params().iter().zip(back.params()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert_eq!(encode_weights(&back), bytes);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let net = Network::build(&NetConfig::uniform(1, 1, 2, 3, 3, 3, 3), 1).unwrap();
        let bytes = encode_weights(&net);
        assert!(decode_weights(&bytes[..bytes.len() - 4]).is_err());
        assert!(decode_weights(b"CNW2\nend\n").is_err());
    }
}
