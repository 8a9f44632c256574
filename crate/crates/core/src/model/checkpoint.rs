//! Versioned checkpoint container.
//!
//! ```text
//! HYBRID-CKPT v1\n
//! config <byte length>\n
//! <TOML model config>
//! tensors <count>\n
//! tensor <name> <rows> <cols>\n<rows*cols little-endian f64>   (repeated)
//! end\n
//! ```
//!
//! Tensors are written in layout order, so identical parameters give
//! identical bytes.

use std::io::{BufRead, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::params::{Layout, Parameters};
use super::ModelError;

pub const MAGIC: &str = "HYBRID-CKPT v1";

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(w: &mut W, params: &Parameters) -> std::io::Result<()> {
    let config = params.config.to_toml();
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "config {}", config.len())?;
    w.write_all(config.as_bytes())?;
    writeln!(w, "tensors {}", params.layout.params.len())?;
    for info in &params.layout.params {
        writeln!(w, "tensor {} {} {}", info.name, info.rows, info.cols)?;
        for x in &params.data[info.range()] {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    writeln!(w, "end")
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String, ModelError> {
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| ModelError::Io(e.to_string()))?;
    if !line.ends_with('\n') {
        return Err(bad("unexpected end of file"));
    }
    line.pop();
    Ok(line)
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str, ModelError> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| bad(format!("expected `{key}`, found `{line}`")))
}

fn parse_num(s: &str) -> Result<usize, ModelError> {
    s.parse().map_err(|_| bad(format!("bad number `{s}`")))
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Parameters, ModelError> {
    let magic = read_line(r)?;
    if magic != MAGIC {
        return Err(bad(format!("unsupported header `{magic}`")));
    }
    let config_len = parse_num(field(&read_line(r)?, "config")?)?;
    let mut config_bytes = vec![0; config_len];
    r.read_exact(&mut config_bytes).map_err(|e| bad(e.to_string()))?;
    let config_text = String::from_utf8(config_bytes).map_err(|_| bad("config is not UTF-8"))?;
    let config = ModelConfig::from_toml(&config_text)?;
    let layout = Layout::new(&config);
    let count = parse_num(field(&read_line(r)?, "tensors")?)?;
    if count != layout.params.len() {
        return Err(bad(format!("{count} tensors, config implies {}", layout.params.len())));
    }
    let mut data = vec![0.0; layout.total];
    let mut buf = [0u8; 8];
    for info in &layout.params {
        let header = read_line(r)?;
        let expected = format!("tensor {} {} {}", info.name, info.rows, info.cols);
        if header != expected {
            return Err(bad(format!("expected `{expected}`, found `{header}`")));
        }
        for x in &mut data[info.range()] {
            r.read_exact(&mut buf).map_err(|e| bad(format!("{}: {e}", info.name)))?;
            *x = f64::from_le_bytes(buf);
        }
    }
    if read_line(r)? != "end" {
        return Err(bad("missing end marker"));
    }
    let params = Parameters { config, layout, data };
    if !params.is_finite() {
        return Err(bad("non-finite parameter values"));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &Parameters) -> Result<(), ModelError> {
    let io = |e: std::io::Error| ModelError::Io(format!("{}: {e}", path.display()));
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, params).map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Parameters, ModelError> {
    let file = std::fs::File::open(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    read_checkpoint(&mut std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token_space::VocabSpec;

    #[test]
    fn roundtrip_is_exact() {
        let mut cfg = ModelConfig::tiny(VocabSpec::uniform(16, 8, 3));
        cfg.seed = 9;
        let p = Parameters::init(&cfg);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &p).unwrap();
        let q = read_checkpoint(&mut &bytes[..]).unwrap();
        assert_eq!(p, q);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &q).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn truncation_and_bad_magic_rejected() {
        let p = Parameters::init(&ModelConfig::tiny(VocabSpec::uniform(16, 8, 1)));
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &p).unwrap();
        assert!(read_checkpoint(&mut &bytes[..bytes.len() - 20]).is_err());
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&mut &bytes[..]), Err(ModelError::Checkpoint(_))));
    }
}
