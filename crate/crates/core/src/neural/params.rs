//! Named parameter tensors and their on-disk archive.
//!
//! An archive is a directory holding `params.txt` and one raw little-endian
//! f64 blob per tensor:
//!
//! ```text
//! meshrecon-params 1
//! seed 42
//! tensor fem.e0.conv.w 4,1,27 t0000.raw
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::tape::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub seed: u64,
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new(seed: u64) -> ParamStore {
        ParamStore { seed, tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Checks that every tensor matches `expected` by name and shape.
    pub fn check_shapes(&self, expected: &ParamStore) -> Result<()> {
        for (name, t) in expected.iter() {
            let have = self.get(name)?;
            if have.shape() != t.shape() {
                return Err(Error::ShapeMismatch(format!("{name}: {:?} vs expected {:?}", have.shape(), t.shape())));
            }
        }
        if self.len() != expected.len() {
            return Err(Error::ShapeMismatch(format!("{} tensors, expected {}", self.len(), expected.len())));
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = format!("meshrecon-params 1\nseed {}\n", self.seed);
        for (i, (name, t)) in self.tensors.iter().enumerate() {
            let file = format!("t{i:04}.raw");
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            manifest.push_str(&format!("tensor {name} {} {file}\n", shape.join(",")));
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            let p = dir.join(&file);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("params.txt");
        fs::write(&p, manifest).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<ParamStore> {
        let dir = dir.as_ref();
        let mpath = dir.join("params.txt");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let perr = |line: usize, msg: String| Error::Parse { path: mpath.clone(), line, msg };
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l.trim()) != Some("meshrecon-params 1") {
            return Err(perr(1, "expected header `meshrecon-params 1`".into()));
        }
        let mut store = ParamStore::new(0);
        for (i, line) in lines {
            let ln = i + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => {}
                ["seed", s] => store.seed = s.parse().map_err(|e| perr(ln, format!("bad seed: {e}")))?,
                ["tensor", name, shape, file] => {
                    let shape: Vec<usize> = shape
                        .split(',')
                        .map(|s| s.parse().map_err(|e| perr(ln, format!("bad shape: {e}"))))
                        .collect::<Result<_>>()?;
                    if file.contains(['/', '\\']) {
                        return Err(perr(ln, "blob name must be a plain file name".into()));
                    }
                    let p = dir.join(file);
                    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                    if bytes.len() % 8 != 0 {
                        return Err(perr(ln, format!("{file} is not a whole number of f64 values")));
                    }
                    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                    let t = Tensor::new(shape, data).map_err(|e| perr(ln, e.to_string()))?;
                    store.insert(*name, t);
                }
                _ => return Err(perr(ln, format!("unrecognized line `{line}`"))),
            }
        }
        Ok(store)
    }
}
