//! Checkpoint and vocabulary files.
//!
//! Checkpoint layout: the ASCII magic `TIEDLM1\n`, a key=value header with
//! every model-config field, a blank line, a decimal tensor count, then per
//! tensor one `name rows cols` line followed by rows×cols little-endian
//! 64-bit floats in row-major order.  Loading reproduces the saved model
//! bit for bit.
//!
//! The vocabulary rides in a sidecar text file, one token per line in id
//! order, so a checkpoint plus its sidecar is everything `eval`/`predict`
//! need.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use tiedlm_core::corpus::Vocabulary;
use tiedlm_core::net::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 8] = b"TIEDLM1\n";

fn header_fields(cfg: &ModelConfig) -> [(&'static str, String); 8] {
    [
        ("vocab_size", cfg.vocab_size.to_string()),
        ("embed_dim", cfg.embed_dim.to_string()),
        ("hidden_dim", cfg.hidden_dim.to_string()),
        ("num_layers", cfg.num_layers.to_string()),
        ("tie_weights", cfg.tie_weights.to_string()),
        ("dropout_p", cfg.dropout_p.to_string()),
        ("unit_norm_embeddings", cfg.unit_norm_embeddings.to_string()),
        ("seed", cfg.seed.to_string()),
    ]
}

/// Write atomically: build the file under a temporary name, rename into
/// place, so a failed save never leaves a partial checkpoint behind.
pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    if params.vocab_size() != cfg.vocab_size
        || params.embed_dim() != cfg.embed_dim
        || params.hidden_dim() != cfg.hidden_dim
        || params.num_layers() != cfg.num_layers
        || params.is_tied() != cfg.tie_weights
    {
        bail!("model parameters do not match the config being saved");
    }
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp)
            .with_context(|| format!("creating checkpoint {}", tmp.display()))?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC)?;
        for (key, value) in header_fields(cfg) {
            writeln!(w, "{key}={value}")?;
        }
        writeln!(w)?;
        let tensors = params.tensors();
        writeln!(w, "{}", tensors.len())?;
        for (name, m) in tensors {
            writeln!(w, "{name} {} {}", m.rows(), m.cols())?;
            for &x in m.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)
        .with_context(|| format!("moving checkpoint into place at {}", path.display()))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .context("unexpected end of checkpoint while reading a header line")?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).context("checkpoint header is not valid UTF-8")
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let need = n * 8;
        let rest = &self.bytes[self.pos..];
        if rest.len() < need {
            bail!(
                "checkpoint truncated: tensor needs {need} bytes, {} remain",
                rest.len()
            );
        }
        self.pos += need;
        Ok(rest[..need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let bytes =
        fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        bail!("{} is not a checkpoint (bad magic)", path.display());
    }
    let mut cur = Cursor {
        bytes: &bytes,
        pos: MAGIC.len(),
    };

    let mut pairs = Vec::new();
    loop {
        let line = cur.line()?;
        if line.is_empty() {
            break;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("malformed header line {line:?}"))?;
        pairs.push((key.to_string(), value.to_string()));
    }
    let mut take = |key: &str| -> Result<String> {
        let i = pairs
            .iter()
            .position(|(k, _)| k == key)
            .with_context(|| format!("checkpoint header is missing {key}"))?;
        Ok(pairs.remove(i).1)
    };
    fn parse<T: std::str::FromStr>(key: &str, value: String) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse()
            .map_err(|e| anyhow::anyhow!("header field {key}={value}: {e}"))
    }
    let cfg = ModelConfig {
        vocab_size: parse("vocab_size", take("vocab_size")?)?,
        embed_dim: parse("embed_dim", take("embed_dim")?)?,
        hidden_dim: parse("hidden_dim", take("hidden_dim")?)?,
        num_layers: parse("num_layers", take("num_layers")?)?,
        tie_weights: parse("tie_weights", take("tie_weights")?)?,
        dropout_p: parse("dropout_p", take("dropout_p")?)?,
        unit_norm_embeddings: parse("unit_norm_embeddings", take("unit_norm_embeddings")?)?,
        seed: parse("seed", take("seed")?)?,
    };
    if let Some((key, _)) = pairs.first() {
        bail!("checkpoint header has unknown field {key}");
    }
    cfg.validate()?;

    let mut params = ModelParams::zeros(&cfg)?;
    let declared: usize = parse("tensor count", cur.line()?.to_string())?;
    let tensors = params.tensors_mut();
    if declared != tensors.len() {
        bail!("checkpoint declares {declared} tensors, model needs {}", tensors.len());
    }
    for (name, m) in tensors {
        let line = cur.line()?;
        let mut parts = line.split(' ');
        let (got_name, rows, cols) = (
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
        );
        if parts.next().is_some() || got_name != name {
            bail!("expected tensor {name}, found {line:?}");
        }
        let rows: usize = parse("rows", rows.to_string())?;
        let cols: usize = parse("cols", cols.to_string())?;
        if rows != m.rows() || cols != m.cols() {
            bail!(
                "tensor {name} is {rows}x{cols}, expected {}x{}",
                m.rows(),
                m.cols()
            );
        }
        let values = cur.floats(rows * cols)?;
        m.data_mut().copy_from_slice(&values);
    }
    if cur.pos != bytes.len() {
        bail!("checkpoint has {} trailing bytes", bytes.len() - cur.pos);
    }
    Ok((cfg, params))
}

pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut text = String::new();
    for word in vocab.words() {
        text.push_str(word);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing vocabulary {}", path.display()))
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading vocabulary {}", path.display()))?;
    let words: Vec<String> = text.lines().map(str::to_string).collect();
    Ok(Vocabulary::from_id_order(words)?)
}
