//! Dense row-major tensors and named parameter trees.
//!
//! A [`ParamTree`] is an ordered tree whose leaves are [`Tensor`]s. Flattening
//! visits leaves depth-first in insertion order, which fixes the coordinate
//! order of every parameter-space vector in the crate.

use std::fmt;

use serde::de::{self, MapAccess, SeqAccess, Visitor};
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Flat coordinate vector in parameter space.
pub type FlatVector = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    /// Builds a matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (leading dimension; 1 for rank < 2).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Row `i` of a rank-2 tensor (the whole tensor for rank < 2).
    pub fn row(&self, i: usize) -> &[f64] {
        if self.shape.len() >= 2 {
            let w = self.data.len() / self.shape[0];
            &self.data[i * w..(i + 1) * w]
        } else {
            &self.data
        }
    }
}

/// Ordered tree of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamTree {
    Leaf(Tensor),
    Branch(Vec<(String, ParamTree)>),
}

impl ParamTree {
    pub fn branch(children: Vec<(impl Into<String>, ParamTree)>) -> Result<Self> {
        let children: Vec<(String, ParamTree)> =
            children.into_iter().map(|(k, v)| (k.into(), v)).collect();
        for (i, (name, _)) in children.iter().enumerate() {
            if children[..i].iter().any(|(other, _)| other == name) {
                return Err(Error::domain(format!("duplicate leaf name `{name}`")));
            }
        }
        Ok(ParamTree::Branch(children))
    }

    /// Total number of scalars.
    pub fn num_params(&self) -> usize {
        match self {
            ParamTree::Leaf(t) => t.len(),
            ParamTree::Branch(children) => children.iter().map(|(_, c)| c.num_params()).sum(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamTree> {
        match self {
            ParamTree::Leaf(_) => None,
            ParamTree::Branch(children) => {
                children.iter().find(|(n, _)| n == name).map(|(_, c)| c)
            }
        }
    }

    /// Leaves in flatten order, with their dotted paths.
    pub fn leaves(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.collect_leaves(String::new(), &mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, prefix: String, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            ParamTree::Leaf(t) => out.push((prefix, t)),
            ParamTree::Branch(children) => {
                for (name, child) in children {
                    let path = if prefix.is_empty() {
                        name.clone()
                    } else {
                        format!("{prefix}.{name}")
                    };
                    child.collect_leaves(path, out);
                }
            }
        }
    }

    /// Coordinate range `[start, end)` of the subtree at a dotted path.
    pub fn subtree_range(&self, path: &str) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        let mut node = self;
        for part in path.split('.').filter(|p| !p.is_empty()) {
            let ParamTree::Branch(children) = node else {
                return None;
            };
            let mut found = None;
            for (name, child) in children {
                if name == part {
                    found = Some(child);
                    break;
                }
                offset += child.num_params();
            }
            node = found?;
        }
        Some(offset..offset + node.num_params())
    }
}

/// Concatenates all leaves depth-first in insertion order.
pub fn flatten(params: &ParamTree) -> FlatVector {
    let mut out = Vec::with_capacity(params.num_params());
    fn walk(node: &ParamTree, out: &mut Vec<f64>) {
        match node {
            ParamTree::Leaf(t) => out.extend_from_slice(t.data()),
            ParamTree::Branch(children) => children.iter().for_each(|(_, c)| walk(c, out)),
        }
    }
    walk(params, &mut out);
    out
}

/// Inverse of [`flatten`] with shapes and names taken from `template`.
pub fn unflatten(v: &[f64], template: &ParamTree) -> Result<ParamTree> {
    let p = template.num_params();
    if v.len() != p {
        return Err(Error::dim(format!(
            "flat vector has length {}, template expects {p}",
            v.len()
        )));
    }
    fn build(node: &ParamTree, v: &[f64], pos: &mut usize) -> ParamTree {
        match node {
            ParamTree::Leaf(t) => {
                let n = t.len();
                let data = v[*pos..*pos + n].to_vec();
                *pos += n;
                ParamTree::Leaf(Tensor { shape: t.shape.clone(), data })
            }
            ParamTree::Branch(children) => ParamTree::Branch(
                children.iter().map(|(k, c)| (k.clone(), build(c, v, pos))).collect(),
            ),
        }
    }
    let mut pos = 0;
    Ok(build(template, v, &mut pos))
}

/// Selects the coordinates of parameter space treated probabilistically.
/// Masked-out coordinates are deterministic (zero posterior variance).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMask {
    total: usize,
    active: Vec<usize>,
}

impl ParamMask {
    pub fn all(total: usize) -> Self {
        Self { total, active: (0..total).collect() }
    }

    pub fn none(total: usize) -> Self {
        Self { total, active: Vec::new() }
    }

    pub fn from_indices(total: usize, mut active: Vec<usize>) -> Result<Self> {
        active.sort_unstable();
        active.dedup();
        if active.last().is_some_and(|&i| i >= total) {
            return Err(Error::dim("mask index outside parameter vector"));
        }
        Ok(Self { total, active })
    }

    /// Activates the subtree at a dotted path, e.g. `dense_2`.
    pub fn subtree(tree: &ParamTree, path: &str) -> Result<Self> {
        let range = tree
            .subtree_range(path)
            .ok_or_else(|| Error::domain(format!("no subtree `{path}` in parameter tree")))?;
        Ok(Self { total: tree.num_params(), active: range.collect() })
    }

    /// Full parameter dimension.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Number of active coordinates.
    pub fn dim(&self) -> usize {
        self.active.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.active
    }

    pub fn is_all(&self) -> bool {
        self.active.len() == self.total
    }

    /// Picks the active coordinates out of a full-length vector.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.active.iter().map(|&i| v[i]).collect()
    }

    /// Places active coordinates into a zero full-length vector.
    pub fn embed(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.total];
        for (&i, &x) in self.active.iter().zip(v) {
            out[i] = x;
        }
        out
    }
}

// Serialization: branches become JSON objects (insertion order kept), leaves
// become nested arrays in row-major order (a bare number for rank 0).

struct NestedArray<'a> {
    shape: &'a [usize],
    data: &'a [f64],
}

impl Serialize for NestedArray<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self.shape.split_first() {
            None => serializer.serialize_f64(self.data[0]),
            Some((&n, rest)) => {
                let stride: usize = rest.iter().product();
                let mut seq = serializer.serialize_seq(Some(n))?;
                for i in 0..n {
                    seq.serialize_element(&NestedArray {
                        shape: rest,
                        data: &self.data[i * stride..(i + 1) * stride],
                    })?;
                }
                seq.end()
            }
        }
    }
}

impl Serialize for Tensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        NestedArray { shape: &self.shape, data: &self.data }.serialize(serializer)
    }
}

impl Serialize for ParamTree {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ParamTree::Leaf(t) => t.serialize(serializer),
            ParamTree::Branch(children) => {
                let mut map = serializer.serialize_map(Some(children.len()))?;
                for (k, v) in children {
                    map.serialize_entry(k, v)?;
                }
                map.end()
            }
        }
    }
}

/// Untyped nested-array value used while decoding tensors.
enum Nested {
    Num(f64),
    List(Vec<Nested>),
}

impl Nested {
    fn into_tensor(self) -> std::result::Result<Tensor, String> {
        let mut shape = Vec::new();
        let mut probe = &self;
        while let Nested::List(items) = probe {
            shape.push(items.len());
            match items.first() {
                Some(first) => probe = first,
                None => break,
            }
        }
        let mut data = Vec::new();
        fn fill(node: Nested, depth: usize, shape: &[usize], out: &mut Vec<f64>) -> std::result::Result<(), String> {
            match node {
                Nested::Num(x) if depth == shape.len() => {
                    out.push(x);
                    Ok(())
                }
                Nested::List(items) if depth < shape.len() && items.len() == shape[depth] => {
                    items.into_iter().try_for_each(|c| fill(c, depth + 1, shape, out))
                }
                _ => Err("ragged nested array".to_string()),
            }
        }
        fill(self, 0, &shape, &mut data)?;
        Tensor::new(shape, data).map_err(|e| e.to_string())
    }
}

impl<'de> Deserialize<'de> for Nested {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Nested;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or nested array of numbers")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Nested, E> {
                Ok(Nested::Num(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Nested, E> {
                Ok(Nested::Num(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Nested, E> {
                Ok(Nested::Num(v as f64))
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Nested, A::Error> {
                let mut items = Vec::new();
                while let Some(item) = seq.next_element()? {
                    items.push(item);
                }
                Ok(Nested::List(items))
            }
        }
        d.deserialize_any(V)
    }
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Nested::deserialize(d)?.into_tensor().map_err(de::Error::custom)
    }
}

impl<'de> Deserialize<'de> for ParamTree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ParamTree;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a parameter tree (object or nested array)")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<ParamTree, A::Error> {
                let mut children: Vec<(String, ParamTree)> = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, ParamTree>()? {
                    if children.iter().any(|(n, _)| *n == k) {
                        return Err(de::Error::custom(format!("duplicate leaf name `{k}`")));
                    }
                    children.push((k, v));
                }
                Ok(ParamTree::Branch(children))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<ParamTree, E> {
                Ok(ParamTree::Leaf(Tensor::scalar(v)))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<ParamTree, E> {
                Ok(ParamTree::Leaf(Tensor::scalar(v as f64)))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<ParamTree, E> {
                Ok(ParamTree::Leaf(Tensor::scalar(v as f64)))
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<ParamTree, A::Error> {
                let mut items = Vec::new();
                while let Some(item) = seq.next_element::<Nested>()? {
                    items.push(item);
                }
                Nested::List(items)
                    .into_tensor()
                    .map(ParamTree::Leaf)
                    .map_err(de::Error::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tree() -> ParamTree {
        ParamTree::branch(vec![
            ("theta1", ParamTree::Leaf(Tensor::scalar(1.6556547))),
            ("theta2", ParamTree::Leaf(Tensor::scalar(1.0420421))),
        ])
        .unwrap()
    }

    #[test]
    fn flatten_uses_declaration_order() {
        assert_eq!(flatten(&sample_tree()), vec![1.6556547, 1.0420421]);
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        assert!(matches!(unflatten(&[1.0], &sample_tree()), Err(Error::Dimension(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = ParamTree::branch(vec![
            ("a", ParamTree::Leaf(Tensor::scalar(1.0))),
            ("a", ParamTree::Leaf(Tensor::scalar(2.0))),
        ]);
        assert!(t.is_err());
    }

    #[test]
    fn subtree_range_finds_nested_leaf() {
        let tree = ParamTree::branch(vec![
            ("a", ParamTree::Leaf(Tensor::vector(vec![1.0, 2.0]))),
            (
                "b",
                ParamTree::branch(vec![
                    ("w", ParamTree::Leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap())),
                    ("c", ParamTree::Leaf(Tensor::vector(vec![0.0; 3]))),
                ])
                .unwrap(),
            ),
        ])
        .unwrap();
        assert_eq!(tree.subtree_range("b"), Some(2..9));
        assert_eq!(tree.subtree_range("b.c"), Some(6..9));
        assert_eq!(tree.subtree_range("z"), None);
    }

    #[test]
    fn json_keeps_order_and_shapes() {
        let tree = ParamTree::branch(vec![
            ("z", ParamTree::Leaf(Tensor::matrix(2, 3, (0..6).map(f64::from).collect()).unwrap())),
            ("a", ParamTree::Leaf(Tensor::scalar(0.1))),
        ])
        .unwrap();
        let s = serde_json::to_string(&tree).unwrap();
        assert_eq!(s, r#"{"z":[[0.0,1.0,2.0],[3.0,4.0,5.0]],"a":0.1}"#);
        let back: ParamTree = serde_json::from_str(&s).unwrap();
        assert_eq!(back, tree);
    }

    #[test]
    fn ragged_arrays_rejected() {
        assert!(serde_json::from_str::<ParamTree>("[[1.0],[2.0,3.0]]").is_err());
    }
}
