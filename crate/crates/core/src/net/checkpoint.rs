//! Plain-text parameter checkpoints.
//!
//! ```text
//! smt-net v1
//! arch 2 2 5 64 tanh        # input_dim output_dim hidden_layers hidden_width activation
//! seed 7                    # or `-` when unknown
//! count 16962
//! <count lines, one parameter each, shortest round-trip decimal>
//! ```
//!
//! Rust's shortest round-trip formatting of `f64` plus correctly rounded
//! parsing makes save/load bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{Activation, NetworkArch, NetworkParams};

pub const MAGIC: &str = "smt-net v1";

pub fn to_string(params: &NetworkParams, seed: Option<u64>) -> String {
    let a = &params.arch;
    let mut s = String::with_capacity(params.values.len() * 24 + 64);
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(
        s,
        "arch {} {} {} {} tanh",
        a.input_dim, a.output_dim, a.hidden_layers, a.hidden_width
    );
    match seed {
        Some(v) => {
            let _ = writeln!(s, "seed {v}");
        }
        None => s.push_str("seed -\n"),
    }
    let _ = writeln!(s, "count {}", params.values.len());
    for v in &params.values {
        let _ = writeln!(s, "{v:?}");
    }
    s
}

fn field<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| Error::Format(format!("missing `{key}` line")))?;
    line.strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| Error::Format(format!("expected `{key}`, found `{line}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("bad {what}: `{s}`")))
}

/// Returns the parameters and the stored seed.
pub fn from_str(text: &str) -> Result<(NetworkParams, Option<u64>)> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Format("not an smt-net v1 checkpoint".into()));
    }
    let arch_f: Vec<&str> = field(lines.next(), "arch")?.split_whitespace().collect();
    if arch_f.len() != 5 || arch_f[4] != "tanh" {
        return Err(Error::Format("arch line needs 4 counts and `tanh`".into()));
    }
    let arch = NetworkArch {
        input_dim: parse_num(arch_f[0], "input_dim")?,
        output_dim: parse_num(arch_f[1], "output_dim")?,
        hidden_layers: parse_num(arch_f[2], "hidden_layers")?,
        hidden_width: parse_num(arch_f[3], "hidden_width")?,
        activation: Activation::Tanh,
    };
    let seed = match field(lines.next(), "seed")? {
        "-" => None,
        s => Some(parse_num(s, "seed")?),
    };
    let count: usize = parse_num(field(lines.next(), "count")?, "count")?;
    if count != arch.parameter_count() {
        return Err(Error::Format(format!(
            "count {count} does not match arch ({})",
            arch.parameter_count()
        )));
    }
    let values = lines
        .take(count)
        .map(|l| parse_num::<f64>(l.trim(), "parameter"))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != count {
        return Err(Error::Format("truncated parameter list".into()));
    }
    Ok((NetworkParams::from_values(arch, values)?, seed))
}

pub fn save(path: &Path, params: &NetworkParams, seed: Option<u64>) -> Result<()> {
    std::fs::write(path, to_string(params, seed))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(NetworkParams, Option<u64>)> {
    from_str(&std::fs::read_to_string(path)?)
}
