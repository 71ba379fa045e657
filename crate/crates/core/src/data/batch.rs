//! Seeded batch ordering and lazy sample materialization.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::io::{load_image, load_mask, resize_to_target};
use super::manifest::SampleRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Record indices of each batch of one epoch. The permutation depends only
/// on `(seed, epoch)`; the final short batch is kept.
pub fn batch_order(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Loads, resizes and augments records on demand. Resized base pairs are
/// cached, so every augmentation of an image decodes it once.
#[derive(Debug, Default)]
pub struct SampleLoader {
    size: (usize, usize),
    cache: HashMap<(PathBuf, PathBuf), (Tensor, Tensor)>,
}

impl SampleLoader {
    pub fn new(size: (usize, usize)) -> Self {
        SampleLoader {
            size,
            cache: HashMap::new(),
        }
    }

    pub fn size(&self) -> (usize, usize) {
        self.size
    }

    /// Registers an in-memory pair under the given paths; it is resized like
    /// a loaded one.
    pub fn insert(&mut self, image_path: &Path, mask_path: &Path, image: &Tensor, mask: &Tensor) -> Result<()> {
        let pair = resize_to_target(image, mask, self.size.0, self.size.1)?;
        self.cache
            .insert((image_path.to_path_buf(), mask_path.to_path_buf()), pair);
        Ok(())
    }

    fn base(&mut self, image: &Path, mask: &Path) -> Result<&(Tensor, Tensor)> {
        let key = (image.to_path_buf(), mask.to_path_buf());
        if !self.cache.contains_key(&key) {
            let (img, m) = (load_image(image)?, load_mask(mask)?);
            let [_, _, ih, iw] = img.dims4()?;
            let [_, _, mh, mw] = m.dims4()?;
            if (ih, iw) != (mh, mw) {
                return Err(Error::Data(format!(
                    "{} is {ih}x{iw} but its mask {} is {mh}x{mw}",
                    image.display(),
                    mask.display()
                )));
            }
            let pair = resize_to_target(&img, &m, self.size.0, self.size.1)?;
            self.cache.insert(key.clone(), pair);
        }
        Ok(&self.cache[&key])
    }

    /// The transformed `[1, 3, H, W]` image and `[1, 1, H, W]` mask of one record.
    pub fn materialize(&mut self, record: &SampleRecord) -> Result<(Tensor, Tensor)> {
        let (img, mask) = self.base(&record.image, &record.mask)?;
        let (img, mask) = (img.clone(), mask.clone());
        record.augment.apply(&img, &mask)
    }

    /// Stacks the given records into one batch.
    pub fn batch(&mut self, records: &[SampleRecord], indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut images = Vec::with_capacity(indices.len());
        let mut masks = Vec::with_capacity(indices.len());
        for &i in indices {
            let rec = records
                .get(i)
                .ok_or_else(|| Error::invalid(format!("record index {i} out of range")))?;
            let (img, m) = self.materialize(rec)?;
            images.push(img);
            masks.push(m);
        }
        Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_partition() {
        let b = batch_order(10, 4, 1, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, batch_order(10, 4, 1, 0).unwrap());
        assert_ne!(b, batch_order(10, 4, 1, 1).unwrap());
        assert!(batch_order(3, 0, 0, 0).is_err());
    }
}
