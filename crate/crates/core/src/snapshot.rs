//! Binary parameter snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "DACLSNAP"
//! version      u32      1
//! header_len   u32      byte length of the header
//! header       UTF-8 text, one `key=value` per line:
//!                vocab_size, extractor_hidden (comma list), shared_dim,
//!                domain_dim, c1_hidden, c2_hidden, disc_hidden, init_gain,
//!                private (comma list of 0/1, one per domain),
//!                second_classifier (0/1), discriminator (0/1),
//!              then one `param=<name> <rows> <cols>` line per matrix
//! payload      f64 little-endian, every matrix row-major, in header order
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Architecture, Components, ModelParams};

pub const MAGIC: &[u8; 8] = b"DACLSNAP";
pub const VERSION: u32 = 1;

fn header(params: &ModelParams) -> String {
    let a = &params.arch;
    let c = params.components();
    let flags: Vec<&str> = c
        .private
        .iter()
        .map(|&p| if p { "1" } else { "0" })
        .collect();
    let hidden: Vec<String> = a.extractor_hidden.iter().map(usize::to_string).collect();
    let mut h = String::new();
    let _ = writeln!(h, "vocab_size={}", a.vocab_size);
    let _ = writeln!(h, "extractor_hidden={}", hidden.join(","));
    let _ = writeln!(h, "shared_dim={}", a.shared_dim);
    let _ = writeln!(h, "domain_dim={}", a.domain_dim);
    let _ = writeln!(h, "c1_hidden={}", a.c1_hidden);
    let _ = writeln!(h, "c2_hidden={}", a.c2_hidden);
    let _ = writeln!(h, "disc_hidden={}", a.disc_hidden);
    let _ = writeln!(h, "init_gain={}", a.init_gain);
    let _ = writeln!(h, "private={}", flags.join(","));
    let _ = writeln!(h, "second_classifier={}", u8::from(c.second_classifier));
    let _ = writeln!(h, "discriminator={}", u8::from(c.discriminator));
    for (name, _, m) in params.named_params() {
        let _ = writeln!(h, "param={name} {} {}", m.rows(), m.cols());
    }
    h
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let h = header(params);
    let mut out = Vec::with_capacity(16 + h.len() + 8 * params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(h.as_bytes());
    for (_, _, m) in params.named_params() {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Snapshot(msg.into())
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(format!("bad {key} {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(bad(format!("bad {key} flag {v:?}"))),
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a parameter snapshot"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let text = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| bad("truncated header"))
        .and_then(|b| std::str::from_utf8(b).map_err(|_| bad("header is not UTF-8")))?;

    let mut arch = Architecture::default();
    let mut private: Option<Vec<bool>> = None;
    let (mut c2, mut disc) = (true, true);
    let mut shapes = Vec::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("bad header line {line:?}")))?;
        match k {
            "vocab_size" => arch.vocab_size = num(k, v)?,
            "extractor_hidden" => {
                arch.extractor_hidden = v
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| num(k, s))
                    .collect::<Result<_>>()?
            }
            "shared_dim" => arch.shared_dim = num(k, v)?,
            "domain_dim" => arch.domain_dim = num(k, v)?,
            "c1_hidden" => arch.c1_hidden = num(k, v)?,
            "c2_hidden" => arch.c2_hidden = num(k, v)?,
            "disc_hidden" => arch.disc_hidden = num(k, v)?,
            "init_gain" => arch.init_gain = num(k, v)?,
            "private" => private = Some(v.split(',').map(|s| flag(k, s)).collect::<Result<_>>()?),
            "second_classifier" => c2 = flag(k, v)?,
            "discriminator" => disc = flag(k, v)?,
            "param" => {
                let parts: Vec<&str> = v.split(' ').collect();
                if parts.len() != 3 {
                    return Err(bad(format!("bad param line {line:?}")));
                }
                shapes.push((
                    parts[0].to_string(),
                    num::<usize>(k, parts[1])?,
                    num::<usize>(k, parts[2])?,
                ));
            }
            other => return Err(bad(format!("unknown header key {other:?}"))),
        }
    }
    let private = private.ok_or_else(|| bad("header lacks domain flags"))?;
    let components = Components {
        domains: private.len(),
        private,
        second_classifier: c2,
        discriminator: disc,
    };
    let mut params = ModelParams::zeros(&arch, &components).map_err(|e| bad(e.to_string()))?;
    let expected: Vec<(String, usize, usize)> = params
        .named_params()
        .into_iter()
        .map(|(n, _, m)| (n, m.rows(), m.cols()))
        .collect();
    if expected != shapes {
        return Err(bad(
            "parameter list does not match the declared architecture",
        ));
    }
    let mut payload = &bytes[16 + hlen..];
    let total: usize = shapes.iter().map(|(_, r, c)| r * c).sum();
    if payload.len() != 8 * total {
        return Err(bad(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            8 * total
        )));
    }
    for m in params.params_mut() {
        for v in m.data_mut() {
            let (head, rest) = payload.split_at(8);
            *v = f64::from_le_bytes(head.try_into().expect("8 bytes"));
            payload = rest;
        }
    }
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DEFAULT_INIT_GAIN;

    fn arch() -> Architecture {
        Architecture {
            vocab_size: 12,
            extractor_hidden: vec![6, 5],
            shared_dim: 4,
            domain_dim: 3,
            c1_hidden: 4,
            c2_hidden: 3,
            disc_hidden: 4,
            init_gain: DEFAULT_INIT_GAIN,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let mut c = Components::full(3);
        c.private[1] = false;
        c.discriminator = false;
        let p = ModelParams::init(&arch(), &c, 4).unwrap();
        let back = decode(&encode(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::init(&arch(), &Components::full(2), 1).unwrap();
        let path = dir.path().join("s.bin");
        save(&p, &path).unwrap();
        assert_eq!(load(&path).unwrap(), p);
    }

    #[test]
    fn rejects_corruption() {
        let p = ModelParams::init(&arch(), &Components::full(2), 1).unwrap();
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode(&wrong), Err(Error::Snapshot(_))));
        let mut version = bytes;
        version[8] = 9;
        assert!(decode(&version).is_err());
    }
}
