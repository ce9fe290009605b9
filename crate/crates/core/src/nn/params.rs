//! Named, seeded parameters with safetensors persistence.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Buffers whose name contains this marker are updated by forward passes,
/// not by the optimizer.
pub const BUFFER_MARKER: &str = "running_";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// `U(-bound, bound)`.
    Uniform(f64),
}

impl Init {
    /// He-style uniform bound for a layer with `fan_in` inputs.
    pub fn kaiming(fan_in: usize) -> Self {
        Init::Uniform((6.0 / fan_in.max(1) as f64).sqrt())
    }
}

pub struct ParamStore {
    vars: RefCell<BTreeMap<String, Var>>,
    seed: u64,
    dtype: DType,
    device: Device,
}

fn name_stream(name: &str) -> u64 {
    // FNV-1a, so every parameter draws from its own stream regardless of
    // construction order.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self { vars: RefCell::new(BTreeMap::new()), seed, dtype, device: Device::Cpu }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Scope<'_> {
        Scope { store: self, prefix: String::new() }
    }

    fn var(&self, name: String, shape: Shape, init: Init) -> Result<Var> {
        if let Some(v) = self.vars.borrow().get(&name) {
            if v.shape() != &shape {
                return Err(Error::Shape(format!("parameter {name} reused with shape {shape:?}, was {:?}", v.shape())));
            }
            return Ok(v.clone());
        }
        let n = shape.elem_count();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(bound) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(name_stream(&name));
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.vars.borrow_mut().insert(name, var.clone());
        Ok(var)
    }

    /// All variables, sorted by name.
    pub fn vars(&self) -> Vec<(String, Var)> {
        self.vars.borrow().iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.vars().into_iter().filter(|(k, _)| !k.contains(BUFFER_MARKER)).collect()
    }

    pub fn len(&self) -> usize {
        self.vars.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.trainable().iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.vars.borrow().iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.tensors(), path)?;
        Ok(())
    }

    /// Overwrites every registered variable from `path`. Names and shapes must
    /// match exactly.
    pub fn load(&self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let loaded = candle_core::safetensors::load(path, &self.device)?;
        self.assign(&loaded)
    }

    pub fn assign(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        let vars = self.vars.borrow();
        if tensors.len() != vars.len() {
            return Err(Error::Shape(format!("checkpoint has {} tensors, model has {}", tensors.len(), vars.len())));
        }
        for (name, var) in vars.iter() {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks parameter {name}")))?;
            if t.shape() != var.shape() {
                return Err(Error::Shape(format!("parameter {name}: checkpoint {:?}, model {:?}", t.shape(), var.shape())));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

/// A name prefix inside a [`ParamStore`].
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn sub(&self, name: impl AsRef<str>) -> Scope<'a> {
        let prefix =
            if self.prefix.is_empty() { name.as_ref().to_string() } else { format!("{}.{}", self.prefix, name.as_ref()) };
        Scope { store: self.store, prefix }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn get(&self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Tensor> {
        Ok(self.var(name, shape, init)?.as_tensor().clone())
    }

    pub fn var(&self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Var> {
        self.store.var(self.full(name), shape.into(), init)
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_order_independent() {
        let a = ParamStore::new(7, DType::F32);
        let x1 = a.root().sub("enc").get("w", (3, 4), Init::Uniform(0.5)).unwrap();
        let b = ParamStore::new(7, DType::F32);
        b.root().get("other", 5, Init::Uniform(1.0)).unwrap();
        let x2 = b.root().sub("enc").get("w", (3, 4), Init::Uniform(0.5)).unwrap();
        let v1: Vec<f32> = x1.flatten_all().unwrap().to_vec1().unwrap();
        let v2: Vec<f32> = x2.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(v1, v2);
        assert!(v1.iter().all(|v| v.abs() < 0.5));
        let c = ParamStore::new(8, DType::F32);
        let x3: Vec<f32> = c.root().sub("enc").get("w", (3, 4), Init::Uniform(0.5)).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_ne!(v1, x3);
    }

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let a = ParamStore::new(1, DType::F32);
        a.root().get("w", (4, 4), Init::Uniform(1.0)).unwrap();
        a.root().get("bn.running_mean", 4, Init::Zeros).unwrap();
        a.save(&path).unwrap();
        let b = ParamStore::new(2, DType::F32);
        b.root().get("w", (4, 4), Init::Uniform(1.0)).unwrap();
        b.root().get("bn.running_mean", 4, Init::Zeros).unwrap();
        b.load(&path).unwrap();
        let ta = a.tensors();
        let tb = b.tensors();
        for (k, v) in &ta {
            let x: Vec<f32> = v.flatten_all().unwrap().to_vec1().unwrap();
            let y: Vec<f32> = tb[k].flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(x.iter().map(|f| f.to_bits()).collect::<Vec<_>>(), y.iter().map(|f| f.to_bits()).collect::<Vec<_>>());
        }
        assert_eq!(b.trainable().len(), 1);
    }

    #[test]
    fn load_rejects_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let a = ParamStore::new(1, DType::F32);
        a.root().get("w", (4, 4), Init::Zeros).unwrap();
        a.save(&path).unwrap();
        let b = ParamStore::new(1, DType::F32);
        b.root().get("w", (4, 5), Init::Zeros).unwrap();
        assert!(b.load(&path).is_err());
        assert!(matches!(b.load(&dir.path().join("missing")), Err(Error::MissingCheckpoint(_))));
    }
}
