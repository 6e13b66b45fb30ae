//! Versioned binary model envelope (all integers little-endian):
//!
//! ```text
//! "POSM" | format u16 = 1 | kind u8 (0 tree, 1 forest) | model_version u32 | n_trees u32
//! per tree: n_nodes u32, then n_nodes 30-byte records
//!   flag u8 (0 internal, 1 leaf) | feature u8 | threshold f64 | left u32 | right u32 | counts 3 x u32
//! ```
//!
//! Internal nodes zero their counts; leaves zero feature, threshold, left
//! and right. Decoding rejects anything the encoder would not produce, so
//! encoding is canonical: equal models give equal bytes.

use thiserror::Error;

use super::ensemble::{Model, RandomForest};
use super::tree::{DecisionTree, TreeNode};
use crate::features::N_FEATURES;

pub const ENVELOPE_MAGIC: &[u8; 4] = b"POSM";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4;
const NODE_LEN: usize = 30;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("not a model envelope (bad magic)")]
    BadMagic,
    #[error("unsupported envelope format version {0}")]
    UnsupportedFormatVersion(u16),
    #[error("corrupt node table: {0}")]
    CorruptNodeTable(String),
}

fn corrupt<T>(msg: impl Into<String>) -> Result<T, EnvelopeError> {
    Err(EnvelopeError::CorruptNodeTable(msg.into()))
}

fn put_tree(out: &mut Vec<u8>, t: &DecisionTree) {
    out.extend_from_slice(&(t.nodes().len() as u32).to_le_bytes());
    for n in t.nodes() {
        match *n {
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                out.push(0);
                out.push(feature);
                out.extend_from_slice(&threshold.to_le_bytes());
                out.extend_from_slice(&left.to_le_bytes());
                out.extend_from_slice(&right.to_le_bytes());
                out.extend_from_slice(&[0u8; 12]);
            }
            TreeNode::Leaf { counts } => {
                out.push(1);
                out.extend_from_slice(&[0u8; 1 + 8 + 4 + 4]);
                for c in counts {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
    }
}

pub fn serialize_model(model: &Model, model_version: u32) -> Vec<u8> {
    let trees: &[DecisionTree] = match model {
        Model::Tree(t) => std::slice::from_ref(t),
        Model::Forest(f) => f.trees(),
    };
    let nodes: usize = trees.iter().map(|t| t.nodes().len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * trees.len() + NODE_LEN * nodes);
    out.extend_from_slice(ENVELOPE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match model {
        Model::Tree(_) => 0,
        Model::Forest(_) => 1,
    });
    out.extend_from_slice(&model_version.to_le_bytes());
    out.extend_from_slice(&(trees.len() as u32).to_le_bytes());
    for t in trees {
        put_tree(&mut out, t);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EnvelopeError> {
        match self.buf.get(self.pos..self.pos + n) {
            Some(s) => {
                self.pos += n;
                Ok(s)
            }
            None => corrupt("truncated envelope"),
        }
    }

    fn u32(&mut self) -> Result<u32, EnvelopeError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn get_tree(cur: &mut Cursor<'_>, tree_no: usize) -> Result<DecisionTree, EnvelopeError> {
    let n = cur.u32()? as usize;
    if n == 0 {
        return corrupt(format!("tree {tree_no} has no nodes"));
    }
    if cur.buf.len() - cur.pos < n.saturating_mul(NODE_LEN) {
        return corrupt("truncated envelope");
    }
    let mut nodes = Vec::with_capacity(n);
    let mut parents = vec![0u32; n];
    for i in 0..n {
        let r = cur.take(NODE_LEN)?;
        let flag = r[0];
        let feature = r[1];
        let threshold = f64::from_le_bytes(r[2..10].try_into().expect("8 bytes"));
        let left = u32::from_le_bytes(r[10..14].try_into().expect("4 bytes"));
        let right = u32::from_le_bytes(r[14..18].try_into().expect("4 bytes"));
        let counts: [u32; 3] = std::array::from_fn(|k| {
            u32::from_le_bytes(r[18 + 4 * k..22 + 4 * k].try_into().expect("4 bytes"))
        });
        let node = match flag {
            0 => {
                if usize::from(feature) >= N_FEATURES {
                    return corrupt(format!("tree {tree_no} node {i}: feature {feature} out of range"));
                }
                if threshold.is_nan() {
                    return corrupt(format!("tree {tree_no} node {i}: NaN threshold"));
                }
                for child in [left, right] {
                    let c = child as usize;
                    if c <= i || c >= n {
                        return corrupt(format!("tree {tree_no} node {i}: child {child} out of order or range"));
                    }
                    parents[c] += 1;
                }
                if counts != [0; 3] {
                    return corrupt(format!("tree {tree_no} node {i}: internal node with counts"));
                }
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                }
            }
            1 => {
                if feature != 0 || threshold.to_bits() != 0 || left != 0 || right != 0 {
                    return corrupt(format!("tree {tree_no} node {i}: leaf with split fields"));
                }
                if counts == [0; 3] {
                    return corrupt(format!("tree {tree_no} node {i}: empty leaf"));
                }
                TreeNode::Leaf { counts }
            }
            other => return corrupt(format!("tree {tree_no} node {i}: bad flag {other}")),
        };
        nodes.push(node);
    }
    // children point forward, so one parent per non-root node makes a tree
    if let Some(bad) = (1..n).find(|&i| parents[i] != 1) {
        return corrupt(format!("tree {tree_no} node {bad} has {} parents", parents[bad]));
    }
    Ok(DecisionTree::from_nodes(nodes))
}

pub fn deserialize_model(bytes: &[u8]) -> Result<(Model, u32), EnvelopeError> {
    if bytes.len() < 4 || &bytes[..4] != ENVELOPE_MAGIC {
        return Err(EnvelopeError::BadMagic);
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let fv = cur.take(2)?;
    let format = u16::from_le_bytes([fv[0], fv[1]]);
    if format != FORMAT_VERSION {
        return Err(EnvelopeError::UnsupportedFormatVersion(format));
    }
    let kind = cur.take(1)?[0];
    let version = cur.u32()?;
    let n_trees = cur.u32()? as usize;
    let model = match (kind, n_trees) {
        (0, 1) => Model::Tree(get_tree(&mut cur, 0)?),
        (0, n) => return corrupt(format!("decision tree envelope with {n} trees")),
        (1, 0) => return corrupt("forest without trees"),
        (1, n) => {
            // each tree needs at least a count and one node
            if bytes.len() - cur.pos < n.saturating_mul(4 + NODE_LEN) {
                return corrupt("truncated envelope");
            }
            let trees = (0..n).map(|t| get_tree(&mut cur, t)).collect::<Result<Vec<_>, _>>()?;
            Model::Forest(RandomForest::from_trees(trees, 0))
        }
        (k, _) => return corrupt(format!("unknown model kind {k}")),
    };
    if cur.pos != bytes.len() {
        return corrupt(format!("{} trailing bytes", bytes.len() - cur.pos));
    }
    Ok((model, version))
}
