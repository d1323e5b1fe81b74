use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::dataio::{ImageSample, ItemId};
use crate::error::{Error, Result};
use crate::ife::Classifier;
use crate::scalar::Scalar;

pub const FEATURE_MAGIC: &[u8; 4] = b"VRFS";
pub const FEATURE_VERSION: u32 = 1;

/// One feature vector per catalogue item, kept sorted by item id.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<ItemId>,
    data: Vec<f64>,
}

impl FeatureStore {
    pub fn new(dim: usize, entries: impl IntoIterator<Item = (ItemId, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        let mut entries: Vec<(ItemId, Vec<f64>)> = entries.into_iter().collect();
        entries.sort_by_key(|e| e.0);
        let mut ids = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len() * dim);
        for (id, v) in entries {
            if v.len() != dim {
                return Err(Error::shape("feature store", format!("item {id}: {} values, expected {dim}", v.len())));
            }
            if ids.last() == Some(&id) {
                return Err(Error::InvalidArgument(format!("item {id} appears twice")));
            }
            ids.push(id);
            data.extend(v);
        }
        Ok(FeatureStore { dim, ids, data })
    }

    /// Runs the feature extractor over every image.
    pub fn extract<T: Scalar>(model: &Classifier<T>, images: &[ImageSample]) -> Result<Self> {
        let pixels: Vec<Vec<T>> = images
            .iter()
            .map(|s| s.pixels().iter().map(|&p| T::lit(p)).collect())
            .collect();
        let refs: Vec<&[T]> = pixels.iter().map(|p| p.as_slice()).collect();
        let feats = model.extract_many(&refs)?;
        Self::new(
            model.feature_dim(),
            images
                .iter()
                .zip(feats)
                .map(|(s, f)| (s.item, f.into_iter().map(|v| v.as_f64()).collect())),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn items(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn index_of(&self, item: ItemId) -> Option<usize> {
        self.ids.binary_search(&item).ok()
    }

    pub fn get(&self, item: ItemId) -> Option<&[f64]> {
        self.index_of(item).map(|i| self.row(i))
    }

    /// Feature vector of the `idx`-th item in id order.
    pub fn row(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Replaces the vectors of the given items; every item must already exist.
    pub fn with_replaced(&self, updates: impl IntoIterator<Item = (ItemId, Vec<f64>)>) -> Result<Self> {
        let mut out = self.clone();
        for (item, v) in updates {
            let idx = self
                .index_of(item)
                .ok_or_else(|| Error::InvalidArgument(format!("item {item} not in feature store")))?;
            if v.len() != self.dim {
                return Err(Error::shape("feature store", format!("item {item}: {} values", v.len())));
            }
            out.data[idx * self.dim..(idx + 1) * self.dim].copy_from_slice(&v);
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_u32::<LittleEndian>(FEATURE_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u64::<LittleEndian>(self.ids.len() as u64)?;
        for (i, &id) in self.ids.iter().enumerate() {
            w.write_u32::<LittleEndian>(id)?;
            for &v in self.row(i) {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        w.flush()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("feature store: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::Format("feature store: bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(fmt)?;
        if version != FEATURE_VERSION {
            return Err(Error::Format(format!("feature store: unsupported version {version}")));
        }
        let dim = r.read_u32::<LittleEndian>().map_err(fmt)? as usize;
        let count = r.read_u64::<LittleEndian>().map_err(fmt)? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id = r.read_u32::<LittleEndian>().map_err(fmt)?;
            let mut v = vec![0.0; dim];
            r.read_f64_into::<LittleEndian>(&mut v).map_err(fmt)?;
            entries.push((id, v));
        }
        Self::new(dim, entries)
    }
}
