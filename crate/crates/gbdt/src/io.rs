//! Versioned text model format.
//!
//! ```text
//! nsca-gbdt-model 1
//! fingerprint <16 hex digits>
//! n_features <n>
//! base_score <f64>
//! learning_rate <f64>
//! params <n_iterations> <num_leaves> <min_data_in_leaf> <max_bin> <max_depth|-> <early_stop|-> <seed>
//! bins <feature> <k> <u_0> ... <u_{k-1}>        (one line per feature)
//! trees <count>
//! tree <node count>
//! S <feature> <bin> <threshold> <right> <gain>   (internal node, preorder)
//! L <value>                                      (leaf)
//! checksum <sha256 of every preceding byte>
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a saved
//! model reloads with bit-identical leaf values and thresholds.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::binning::BinMapper;
use crate::model::{GbdtModel, GbdtParams};
use crate::tree::{Node, Tree};
use crate::{GbdtError, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "nsca-gbdt-model";

pub fn to_string(model: &GbdtModel) -> String {
    let mut s = String::new();
    let p = &model.params;
    let opt = |v: Option<usize>| v.map_or("-".to_string(), |d| d.to_string());
    writeln!(s, "{MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(s, "fingerprint {:016x}", model.fingerprint).unwrap();
    writeln!(s, "n_features {}", model.n_features()).unwrap();
    writeln!(s, "base_score {:?}", model.base_score).unwrap();
    writeln!(s, "learning_rate {:?}", model.learning_rate).unwrap();
    writeln!(
        s,
        "params {} {} {} {} {} {} {}",
        p.n_iterations,
        p.num_leaves,
        p.min_data_in_leaf,
        p.max_bin,
        opt(p.max_depth),
        opt(p.early_stopping_rounds),
        p.seed
    )
    .unwrap();
    for f in 0..model.n_features() {
        let bounds = model.mapper.bounds(f);
        write!(s, "bins {f} {}", bounds.len()).unwrap();
        for b in bounds {
            write!(s, " {b:?}").unwrap();
        }
        s.push('\n');
    }
    writeln!(s, "trees {}", model.trees.len()).unwrap();
    for tree in &model.trees {
        writeln!(s, "tree {}", tree.nodes().len()).unwrap();
        for node in tree.nodes() {
            match node {
                Node::Split {
                    feature,
                    bin,
                    threshold,
                    right,
                    gain,
                } => writeln!(s, "S {feature} {bin} {threshold:?} {right} {gain:?}").unwrap(),
                Node::Leaf { value } => writeln!(s, "L {value:?}").unwrap(),
            }
        }
    }
    let digest = hex(&Sha256::digest(s.as_bytes()));
    writeln!(s, "checksum {digest}").unwrap();
    s
}

pub fn save(model: &GbdtModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_string(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<GbdtModel> {
    from_str(&std::fs::read_to_string(path)?)
}

/// Loads a model and additionally requires a schema fingerprint.
pub fn load_for_schema(path: impl AsRef<Path>, fingerprint: u64) -> Result<GbdtModel> {
    let model = load(path)?;
    if model.fingerprint != fingerprint {
        return Err(GbdtError::SchemaMismatch {
            expected: fingerprint,
            found: model.fingerprint,
        });
    }
    Ok(model)
}

pub fn from_str(text: &str) -> Result<GbdtModel> {
    let body_end = text
        .rfind("checksum ")
        .ok_or_else(|| fmt_err("missing checksum"))?;
    let (body, tail) = text.split_at(body_end);
    let stated = tail["checksum ".len()..].trim();
    if hex(&Sha256::digest(body.as_bytes())) != stated {
        return Err(fmt_err("checksum mismatch"));
    }

    let mut lines = body.lines();
    let mut next = |what: &str| lines.next().ok_or_else(|| fmt_err(&format!("missing {what}")));

    let header = next("header")?;
    let version = field(header, MAGIC)?;
    if version != FORMAT_VERSION.to_string() {
        return Err(fmt_err(&format!("unsupported version {version}")));
    }
    let fingerprint = u64::from_str_radix(field(next("fingerprint")?, "fingerprint")?, 16)
        .map_err(|e| fmt_err(&e.to_string()))?;
    let n_features: usize = num(field(next("n_features")?, "n_features")?)?;
    let base_score: f64 = num(field(next("base_score")?, "base_score")?)?;
    let learning_rate: f64 = num(field(next("learning_rate")?, "learning_rate")?)?;
    let p: Vec<&str> = field(next("params")?, "params")?.split(' ').collect();
    if p.len() != 7 {
        return Err(fmt_err("params line"));
    }
    let opt = |s: &str| -> Result<Option<usize>> {
        if s == "-" {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    let params = GbdtParams {
        learning_rate,
        n_iterations: num(p[0])?,
        num_leaves: num(p[1])?,
        min_data_in_leaf: num(p[2])?,
        max_bin: num(p[3])?,
        max_depth: opt(p[4])?,
        early_stopping_rounds: opt(p[5])?,
        seed: num(p[6])?,
    };

    let mut bounds = Vec::with_capacity(n_features);
    for f in 0..n_features {
        let rest = field(next("bins")?, "bins")?;
        let mut parts = rest.split(' ');
        let feature: usize = num(parts.next().unwrap_or(""))?;
        let k: usize = num(parts.next().unwrap_or(""))?;
        if feature != f {
            return Err(fmt_err(&format!("bins for feature {feature}, expected {f}")));
        }
        let values = parts.map(num::<f64>).collect::<Result<Vec<_>>>()?;
        if values.len() != k || values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(fmt_err(&format!("bad bin bounds for feature {f}")));
        }
        bounds.push(values);
    }
    let mapper = BinMapper::from_bounds(bounds);

    let n_trees: usize = num(field(next("trees")?, "trees")?)?;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes: usize = num(field(next("tree")?, "tree")?)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let line = next("node")?;
            let parts: Vec<&str> = line.split(' ').collect();
            let node = match parts.as_slice() {
                ["L", v] => Node::Leaf { value: num(v)? },
                ["S", f, b, t, r, g] => {
                    let feature: usize = num(f)?;
                    let bin: usize = num(b)?;
                    let threshold: f64 = num(t)?;
                    if feature >= n_features || bin >= mapper.n_bins(feature) {
                        return Err(fmt_err(&format!("split references invalid bin: {line}")));
                    }
                    if threshold.to_bits() != mapper.upper_bound(feature, bin).to_bits() {
                        return Err(fmt_err(&format!("threshold disagrees with bins: {line}")));
                    }
                    Node::Split {
                        feature,
                        bin,
                        threshold,
                        right: num(r)?,
                        gain: num(g)?,
                    }
                }
                _ => return Err(fmt_err(&format!("bad node line: {line}"))),
            };
            nodes.push(node);
        }
        let tree = Tree::from_nodes(nodes);
        tree.validate(n_features).map_err(|e| fmt_err(&e))?;
        trees.push(tree);
    }
    if lines.next().is_some_and(|l| !l.is_empty()) {
        return Err(fmt_err("trailing data"));
    }

    Ok(GbdtModel {
        base_score,
        learning_rate,
        trees,
        mapper,
        fingerprint,
        params,
    })
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| fmt_err(&format!("expected `{key}`, got `{line}`")))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| fmt_err(&format!("`{s}`: {e}")))
}

fn fmt_err(msg: &str) -> GbdtError {
    GbdtError::Format(msg.to_string())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
