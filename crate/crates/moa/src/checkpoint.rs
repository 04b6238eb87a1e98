//! Checkpoint format: a UTF-8 manifest of fixed-grammar lines followed by
//! a binary payload of little-endian float64 arrays, row-major. The
//! model-level manifest carries a config echo plus the tensor table.
//!
//! Grammar (one line each, `\n` terminated):
//! ```text
//! moa-checkpoint v1
//! config_lines <n>
//! <n verbatim config-echo lines>
//! tensors <t>
//! tensor <name> <d0>[x<d1>...] <byte_offset> , repeated t times
//! payload <total_bytes>
//! <raw little-endian f64 payload>
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::transformer::{model_param_specs, ModelConfig, TransformerModel};

pub const MAGIC: &str = "moa-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_echo: String,
    pub tensors: Vec<(TensorEntry, Vec<f64>)>,
}

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|p| {
            p.parse()
                .map_err(|_| Error::Parse(format!("bad shape component '{p}'")))
        })
        .collect()
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let echo_lines: Vec<&str> = if ckpt.config_echo.is_empty() {
        Vec::new()
    } else {
        ckpt.config_echo.lines().collect()
    };
    let mut header = format!("{MAGIC}\nconfig_lines {}\n", echo_lines.len());
    for line in &echo_lines {
        header.push_str(line);
        header.push('\n');
    }
    header.push_str(&format!("tensors {}\n", ckpt.tensors.len()));
    let mut offset = 0u64;
    for (entry, data) in &ckpt.tensors {
        let count: usize = entry.shape.iter().product();
        if count != data.len() {
            return Err(Error::Dim(format!(
                "tensor '{}' shape {:?} does not match {} values",
                entry.name,
                entry.shape,
                data.len()
            )));
        }
        header.push_str(&format!(
            "tensor {} {} {offset}\n",
            entry.name,
            shape_str(&entry.shape)
        ));
        offset += 8 * count as u64;
    }
    header.push_str(&format!("payload {offset}\n"));
    w.write_all(header.as_bytes())?;
    for (_, data) in &ckpt.tensors {
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    // the header ends after the `payload <n>` line; scan line by line
    let mut pos = 0usize;
    let next_line = |bytes: &[u8], pos: &mut usize| -> Result<String> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("unterminated checkpoint header line".into()))?
            + start;
        *pos = end + 1;
        String::from_utf8(bytes[start..end].to_vec())
            .map_err(|_| Error::Parse("checkpoint header is not UTF-8".into()))
    };
    if next_line(&bytes, &mut pos)? != MAGIC {
        return Err(Error::Parse("bad checkpoint magic".into()));
    }
    let count_of = |line: &str, tag: &str| -> Result<usize> {
        line.strip_prefix(tag)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("expected '{tag} <n>', got '{line}'")))
    };
    let n_echo = count_of(&next_line(&bytes, &mut pos)?, "config_lines")?;
    let mut echo = Vec::with_capacity(n_echo);
    for _ in 0..n_echo {
        echo.push(next_line(&bytes, &mut pos)?);
    }
    let n_tensors = count_of(&next_line(&bytes, &mut pos)?, "tensors")?;
    let mut entries = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let line = next_line(&bytes, &mut pos)?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(Error::Parse(format!("bad tensor line '{line}'")));
        }
        entries.push(TensorEntry {
            name: parts[1].to_string(),
            shape: parse_shape(parts[2])?,
            offset: parts[3]
                .parse()
                .map_err(|_| Error::Parse(format!("bad offset in '{line}'")))?,
        });
    }
    let payload_len = count_of(&next_line(&bytes, &mut pos)?, "payload")? as u64;
    let payload = &bytes[pos..];
    if payload.len() as u64 != payload_len {
        return Err(Error::Parse(format!(
            "payload is {} bytes, manifest says {payload_len}",
            payload.len()
        )));
    }
    let mut tensors = Vec::with_capacity(n_tensors);
    for entry in entries {
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 8 * count;
        if end > payload.len() {
            return Err(Error::Parse(format!(
                "tensor '{}' extends past the payload",
                entry.name
            )));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((entry, data));
    }
    Ok(Checkpoint { config_echo: echo.join("\n"), tensors })
}

/// Snapshot every model parameter in canonical spec order.
pub fn checkpoint_from_model(model: &TransformerModel, config_echo: &str) -> Checkpoint {
    let tensors = model_param_specs(&model.config)
        .into_iter()
        .map(|(name, shape)| {
            let data = model.param(&name).clone();
            (
                TensorEntry {
                    name,
                    shape,
                    offset: 0, // assigned on write
                },
                data,
            )
        })
        .collect();
    Checkpoint {
        config_echo: config_echo.to_string(),
        tensors,
    }
}

/// Load parameters into a freshly built model; the tensor table must match
/// the model's spec exactly (names, order, shapes).
pub fn restore_model(model: &mut TransformerModel, ckpt: &Checkpoint) -> Result<()> {
    let specs = model_param_specs(&model.config);
    if specs.len() != ckpt.tensors.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} tensors, model expects {}",
            ckpt.tensors.len(),
            specs.len()
        )));
    }
    for ((name, shape), (entry, data)) in specs.iter().zip(&ckpt.tensors) {
        if name != &entry.name || shape != &entry.shape {
            return Err(Error::Config(format!(
                "checkpoint tensor '{}' {:?} does not match expected '{}' {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        model.param_mut(name).copy_from_slice(data);
    }
    Ok(())
}

pub fn save_model(path: &Path, model: &TransformerModel, config_echo: &str) -> Result<()> {
    let ckpt = checkpoint_from_model(model, config_echo);
    let file = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), &ckpt)
}

pub fn load_model(path: &Path, config: &ModelConfig) -> Result<TransformerModel> {
    let file = std::fs::File::open(path)?;
    let ckpt = read_checkpoint(std::io::BufReader::new(file))?;
    let mut model = TransformerModel::build(config.clone(), 0)?;
    restore_model(&mut model, &ckpt)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn toy_model(seed: u64) -> TransformerModel {
        let mut run = RunConfig::default();
        run.set("model.d_model", "16").unwrap();
        run.set("model.n_head", "2").unwrap();
        run.set("model.n_layer", "1").unwrap();
        run.set("model.vocab_size", "32").unwrap();
        run.set("model.seq_len", "8").unwrap();
        TransformerModel::build(run.model_config().unwrap(), seed).unwrap()
    }

    #[test]
    fn roundtrip_preserves_every_parameter_bit_exactly() {
        let model = toy_model(7);
        let ckpt = checkpoint_from_model(&model, "schema_version = 1");
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.config_echo, "schema_version = 1");
        assert_eq!(back.tensors.len(), ckpt.tensors.len());
        for ((e1, d1), (e2, d2)) in ckpt.tensors.iter().zip(&back.tensors) {
            assert_eq!(e1.name, e2.name);
            assert_eq!(e1.shape, e2.shape);
            let same = d1.iter().zip(d2).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "tensor {} changed across roundtrip", e1.name);
        }
    }

    #[test]
    fn restore_rejects_mismatched_shapes() {
        let model = toy_model(1);
        let mut ckpt = checkpoint_from_model(&model, "");
        ckpt.tensors[0].0.shape = vec![1, 1];
        ckpt.tensors[0].1 = vec![0.0];
        let mut fresh = toy_model(2);
        // shape metadata no longer matches the model spec
        assert!(restore_model(&mut fresh, &ckpt).is_err());
    }

    #[test]
    fn restored_model_reproduces_the_original() {
        let model = toy_model(42);
        let ckpt = checkpoint_from_model(&model, "");
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        let mut fresh = toy_model(999);
        restore_model(&mut fresh, &back).unwrap();
        for (name, _) in model_param_specs(&model.config) {
            assert_eq!(model.param(&name), fresh.param(&name), "{name}");
        }
    }

    #[test]
    fn header_is_utf8_fixed_grammar() {
        let model = toy_model(3);
        let ckpt = checkpoint_from_model(&model, "a = 1\nb = 2");
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let text = String::from_utf8_lossy(&buf);
        assert!(text.starts_with("moa-checkpoint v1\nconfig_lines 2\na = 1\nb = 2\ntensors "));
        // corrupt magic
        let mut bad = buf.clone();
        bad[0] = b'x';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        // truncated payload
        let short = &buf[..buf.len() - 1];
        assert!(read_checkpoint(short).is_err());
    }
}
