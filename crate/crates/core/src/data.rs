//! IDX-format image/label ingestion and deterministic batching.
//!
//! Pixels are kept as raw bytes and scaled by 1/255 on gather, at f64
//! before conversion, so f32 and f64 consumers see consistent values.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// An image set with aligned labels. `hw` is the square image side.
#[derive(Debug, Clone)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    hw: usize,
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "{}: truncated at byte {offset} (need 4 header bytes)",
            path.display()
        )));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

impl Dataset {
    /// Parses a big-endian IDX image file and its label file. The whole
    /// pair is validated before anything is returned: bad magic,
    /// truncation, or an image/label count mismatch produce no partial
    /// dataset.
    pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
        let img = fs::read(images_path).map_err(|e| {
            Error::Data(format!("cannot read {}: {e}", images_path.display()))
        })?;
        let magic = read_u32_be(&img, 0, images_path)?;
        if magic != IMAGES_MAGIC {
            return Err(Error::Format(format!(
                "{}: bad magic {magic:#010x} at byte 0 (expected {IMAGES_MAGIC:#010x})",
                images_path.display()
            )));
        }
        let count = read_u32_be(&img, 4, images_path)? as usize;
        let rows = read_u32_be(&img, 8, images_path)? as usize;
        let cols = read_u32_be(&img, 12, images_path)? as usize;
        if rows != cols || rows == 0 {
            return Err(Error::Format(format!(
                "{}: only square images are supported, got {rows}x{cols}",
                images_path.display()
            )));
        }
        let want = 16 + count * rows * cols;
        if img.len() != want {
            return Err(Error::Format(format!(
                "{}: expected {want} bytes for {count} {rows}x{cols} images, found {} (truncated at byte {})",
                images_path.display(),
                img.len(),
                img.len().min(want)
            )));
        }

        let lbl = fs::read(labels_path).map_err(|e| {
            Error::Data(format!("cannot read {}: {e}", labels_path.display()))
        })?;
        let magic = read_u32_be(&lbl, 0, labels_path)?;
        if magic != LABELS_MAGIC {
            return Err(Error::Format(format!(
                "{}: bad magic {magic:#010x} at byte 0 (expected {LABELS_MAGIC:#010x})",
                labels_path.display()
            )));
        }
        let lbl_count = read_u32_be(&lbl, 4, labels_path)? as usize;
        if lbl.len() != 8 + lbl_count {
            return Err(Error::Format(format!(
                "{}: expected {} bytes for {lbl_count} labels, found {} (truncated at byte {})",
                labels_path.display(),
                8 + lbl_count,
                lbl.len(),
                lbl.len().min(8 + lbl_count)
            )));
        }
        if lbl_count != count {
            return Err(Error::Data(format!(
                "{} has {count} images but {} has {lbl_count} labels",
                images_path.display(),
                labels_path.display()
            )));
        }

        Ok(Dataset {
            pixels: img[16..].to_vec(),
            labels: lbl[8..].to_vec(),
            hw: rows,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.hw
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Mean pixel value after 1/255 scaling, over every image.
    pub fn mean_pixel(&self) -> f64 {
        let total: u64 = self.pixels.iter().map(|&b| b as u64).sum();
        total as f64 / (self.pixels.len() as f64 * 255.0)
    }

    /// Gathers the given examples into a `[k, 1, hw, hw]` batch tensor
    /// scaled into [0, 1].
    pub fn gather<S: Scalar>(&self, indices: &[usize]) -> Result<Tensor<S>> {
        let px = self.hw * self.hw;
        let mut data = Vec::with_capacity(indices.len() * px);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(format!(
                    "example index {i} out of range 0..{}",
                    self.len()
                )));
            }
            data.extend(
                self.pixels[i * px..(i + 1) * px]
                    .iter()
                    .map(|&b| S::from_f64(b as f64 / 255.0)),
            );
        }
        Tensor::from_vec(&[indices.len(), 1, self.hw, self.hw], data)
    }

    /// The first `n` examples as an independent dataset (desk-scale
    /// subsets).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::Contract(format!(
                "subset of {n} from a dataset of {}",
                self.len()
            )));
        }
        let px = self.hw * self.hw;
        Ok(Dataset {
            pixels: self.pixels[..n * px].to_vec(),
            labels: self.labels[..n].to_vec(),
            hw: self.hw,
        })
    }
}

/// Conventional file names inside a data directory.
pub fn mnist_paths(dir: &Path) -> [PathBuf; 4] {
    [
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    ]
}

/// One epoch's batching: a seeded shuffle of all indices chunked into
/// batches, keeping the final short batch.
pub fn epoch_batches<R: Rng>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Contract("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Ok(idx.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Exactly `per_class` examples of each digit 0-9, drawn without
/// replacement; within a class the picks are sorted ascending and
/// classes are emitted in digit order.
pub fn class_balanced_sample<R: Rng>(
    labels: &[u8],
    per_class: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut by_class: [Vec<usize>; 10] = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        if l > 9 {
            return Err(Error::Data(format!("label {l} at index {i} is not a digit")));
        }
        by_class[l as usize].push(i);
    }
    let mut out = Vec::with_capacity(10 * per_class);
    for (digit, pool) in by_class.iter().enumerate() {
        if pool.len() < per_class {
            return Err(Error::Contract(format!(
                "class {digit} has only {} examples, need {per_class}",
                pool.len()
            )));
        }
        let mut picks: Vec<usize> = rand::seq::index::sample(rng, pool.len(), per_class)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        picks.sort_unstable();
        out.extend(picks);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn write_idx(
        dir: &Path,
        count: usize,
        side: usize,
        pixel: impl Fn(usize, usize) -> u8,
        labels: &[u8],
    ) -> (PathBuf, PathBuf) {
        let img_path = dir.join("imgs");
        let lbl_path = dir.join("lbls");
        let mut img = Vec::new();
        img.extend(IMAGES_MAGIC.to_be_bytes());
        img.extend((count as u32).to_be_bytes());
        img.extend((side as u32).to_be_bytes());
        img.extend((side as u32).to_be_bytes());
        for i in 0..count {
            for p in 0..side * side {
                img.push(pixel(i, p));
            }
        }
        fs::File::create(&img_path).unwrap().write_all(&img).unwrap();
        let mut lbl = Vec::new();
        lbl.extend(LABELS_MAGIC.to_be_bytes());
        lbl.extend((labels.len() as u32).to_be_bytes());
        lbl.extend(labels);
        fs::File::create(&lbl_path).unwrap().write_all(&lbl).unwrap();
        (img_path, lbl_path)
    }

    #[test]
    fn loads_and_scales_a_small_idx_pair() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), 3, 2, |i, p| ((i * 4 + p) * 17) as u8, &[7, 0, 9]);
        let ds = Dataset::load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.side(), 2);
        assert_eq!(ds.labels(), &[7, 0, 9]);
        let batch: Tensor<f64> = ds.gather(&[0, 2]).unwrap();
        assert_eq!(batch.shape(), &[2, 1, 2, 2]);
        assert_eq!(batch.data()[0], 0.0);
        assert_eq!(batch.data()[3], 0.2); // 51/255
        assert_eq!(batch.data()[4], 8.0 * 17.0 / 255.0);
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), 2, 2, |_, _| 0, &[1, 2]);

        let mut img = fs::read(&ip).unwrap();
        img[3] = 0x99;
        fs::write(&ip, &img).unwrap();
        let err = Dataset::load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
        assert!(err.to_string().contains("byte 0"), "{err}");

        let (ip, lp) = write_idx(dir.path(), 2, 2, |_, _| 0, &[1, 2]);
        let img = fs::read(&ip).unwrap();
        fs::write(&ip, &img[..img.len() - 3]).unwrap();
        let err = Dataset::load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn count_mismatch_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = write_idx(dir.path(), 2, 2, |_, _| 0, &[1, 2]);
        let (_, lp3) = write_idx(dir.path(), 2, 2, |_, _| 0, &[1, 2, 3]);
        let err = Dataset::load_idx(&ip, &lp3).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn epoch_batching_covers_every_index_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let batches = epoch_batches(130, 64, &mut rng).unwrap();
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![64, 64, 2]);
        let mut seen: Vec<usize> = batches.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..130).collect::<Vec<_>>());
    }

    #[test]
    fn batching_is_seed_deterministic_and_shuffled() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            epoch_batches(100, 7, &mut rng).unwrap()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
        // not the identity order
        let first = &run(1)[0];
        assert_ne!(first, &(0..7).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_batch_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        assert_eq!(epoch_batches(5, 1, &mut rng).unwrap().len(), 5);
        assert!(matches!(
            epoch_batches(0, 4, &mut rng).unwrap_err(),
            Error::Contract(_)
        ));
        assert!(matches!(
            epoch_batches(5, 0, &mut rng).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn balanced_sample_hits_every_class_equally() {
        // labels 0..9 repeated 4 times each
        let labels: Vec<u8> = (0..40).map(|i| (i % 10) as u8).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let picks = class_balanced_sample(&labels, 2, &mut rng).unwrap();
        assert_eq!(picks.len(), 20);
        let mut hist = [0usize; 10];
        for &i in &picks {
            hist[labels[i] as usize] += 1;
        }
        assert_eq!(hist, [2; 10]);
        // deterministic
        let mut rng2 = ChaCha8Rng::seed_from_u64(82);
        assert_eq!(picks, class_balanced_sample(&labels, 2, &mut rng2).unwrap());

        let picks1 = class_balanced_sample(&labels, 1, &mut ChaCha8Rng::seed_from_u64(83)).unwrap();
        assert_eq!(picks1.len(), 10);
    }

    #[test]
    fn class_shortage_is_a_contract_error() {
        let labels: Vec<u8> = vec![0, 0, 1]; // classes 2..=9 empty
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        assert!(matches!(
            class_balanced_sample(&labels, 1, &mut rng).unwrap_err(),
            Error::Contract(_)
        ));
    }

    #[test]
    fn head_takes_a_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), 5, 2, |i, _| i as u8, &[0, 1, 2, 3, 4]);
        let ds = Dataset::load_idx(&ip, &lp).unwrap();
        let h = ds.head(2).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.labels(), &[0, 1]);
        assert!(ds.head(9).is_err());
    }
}
