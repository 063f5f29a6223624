use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use super::idx::{read_idx, IDX_IMAGES_MAGIC};
use super::{ImageBatch, IMAGE_PIXELS, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::seed;

/// Raw corpus: unsigned-byte pixels plus optional digit labels.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub pixels: Vec<u8>,
    pub labels: Option<Vec<u8>>,
    pub count: usize,
    /// SHA-256 over the decoded pixel and label bytes.
    pub digest: String,
}

impl Corpus {
    pub fn from_raw(pixels: Vec<u8>, labels: Option<Vec<u8>>) -> Result<Self> {
        if pixels.len() % IMAGE_PIXELS != 0 {
            return Err(Error::shape(
                "pixel payload is not a whole number of 28x28 images",
            ));
        }
        let count = pixels.len() / IMAGE_PIXELS;
        if labels.as_ref().is_some_and(|l| l.len() != count) {
            return Err(Error::shape("label count does not match image count"));
        }
        let mut h = Sha256::new();
        h.update(&pixels);
        if let Some(l) = &labels {
            h.update(l);
        }
        Ok(Corpus {
            pixels,
            labels,
            count,
            digest: hex::encode(h.finalize()),
        })
    }

    /// Normalizes the selected images into [-1, 1].
    pub fn batch(&self, indices: &[usize]) -> ImageBatch<f32> {
        let mut rows = Array2::<f32>::zeros((indices.len(), IMAGE_PIXELS));
        for (r, &i) in indices.iter().enumerate() {
            let src = &self.pixels[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS];
            for (dst, &p) in rows.row_mut(r).iter_mut().zip(src) {
                *dst = p as f32 / 127.5 - 1.0;
            }
        }
        ImageBatch::from_rows(rows).expect("normalized pixels are in range")
    }
}

/// Deterministic partition of a corpus into train and eval images.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: ImageBatch<f32>,
    pub eval: ImageBatch<f32>,
    pub train_labels: Option<Vec<u8>>,
    pub eval_labels: Option<Vec<u8>>,
    /// Corpus positions of the train images, ascending.
    pub train_indices: Vec<usize>,
    /// Corpus positions of the eval images, ascending.
    pub eval_indices: Vec<usize>,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub corpus_digest: String,
}

impl DatasetSplit {
    pub fn from_corpus(corpus: &Corpus, split_ratio: f64, split_seed: u64) -> Result<Self> {
        let (train_indices, eval_indices) = split_indices(corpus.count, split_ratio, split_seed)?;
        let pick = |idx: &[usize]| {
            corpus
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect::<Vec<_>>())
        };
        Ok(DatasetSplit {
            train: corpus.batch(&train_indices),
            eval: corpus.batch(&eval_indices),
            train_labels: pick(&train_indices),
            eval_labels: pick(&eval_indices),
            train_indices,
            eval_indices,
            split_ratio,
            split_seed,
            corpus_digest: corpus.digest.clone(),
        })
    }
}

/// Seeded permutation split. `floor(count * ratio)` images go to train.
pub fn split_indices(
    count: usize,
    split_ratio: f64,
    split_seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::arg(format!(
            "split ratio {split_ratio} not in (0, 1)"
        )));
    }
    if count == 0 {
        return Err(Error::arg("cannot split an empty corpus"));
    }
    // the epsilon keeps exact products like 70000 * 0.8 from rounding down
    let n_train = ((count as f64) * split_ratio + 1e-9).floor() as usize;
    let mut perm: Vec<usize> = (0..count).collect();
    perm.shuffle(&mut seed::rng(seed::derive_seed(split_seed, "split", 0)));
    let mut train = perm[..n_train].to_vec();
    let mut eval = perm[n_train..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    Ok((train, eval))
}

fn is_idx_images(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.contains("idx3"))
}

fn label_sibling(images: &Path) -> Option<PathBuf> {
    let name = images.file_name()?.to_str()?;
    let candidate = images.with_file_name(name.replace("idx3", "idx1").replace("images", "labels"));
    candidate.exists().then_some(candidate)
}

fn read_image_idx(path: &Path) -> Result<(Vec<u8>, Option<Vec<u8>>)> {
    let raw = fs::read(path).map_err(|e| Error::ingestion(path, e.to_string()))?;
    if !path.extension().is_some_and(|e| e == "gz")
        && raw.len() >= 4
        && u32::from_be_bytes([raw[0], raw[1], raw[2], raw[3]]) != IDX_IMAGES_MAGIC
    {
        return Err(Error::ingestion(
            path,
            "not an IDX image file (magic 0x00000803)",
        ));
    }
    let arr = read_idx(path)?;
    if arr.dims.len() != 3 || arr.dims[1] != IMAGE_SIDE || arr.dims[2] != IMAGE_SIDE {
        return Err(Error::ingestion(
            path,
            format!("expected Nx28x28 images, got {:?}", arr.dims),
        ));
    }
    let labels = match label_sibling(path) {
        Some(lp) => {
            let l = read_idx(&lp)?;
            if l.dims.len() != 1 || l.dims[0] != arr.dims[0] {
                return Err(Error::ingestion(
                    &lp,
                    "label file does not match image count",
                ));
            }
            Some(l.data)
        }
        None => None,
    };
    Ok((arr.data, labels))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::ingestion(dir, e.to_string()))?;
    for entry in entries {
        let p = entry
            .map_err(|e| Error::ingestion(dir, e.to_string()))?
            .path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn read_png(path: &Path) -> Result<Vec<u8>> {
    let file = fs::File::open(path).map_err(|e| Error::ingestion(path, e.to_string()))?;
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::ingestion(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::ingestion(path, e.to_string()))?;
    if info.width as usize != IMAGE_SIDE || info.height as usize != IMAGE_SIDE {
        return Err(Error::ingestion(
            path,
            format!("expected 28x28, got {}x{}", info.width, info.height),
        ));
    }
    let channels = info.color_type.samples();
    let buf = &buf[..info.buffer_size()];
    let gray = buf
        .chunks(channels)
        .map(|px| match channels {
            1 | 2 => px[0],
            _ => ((px[0] as u32 * 299 + px[1] as u32 * 587 + px[2] as u32 * 114) / 1000) as u8,
        })
        .collect();
    Ok(gray)
}

/// Loads a corpus from an IDX image file, a directory of IDX files, or a
/// directory tree of 28×28 PNGs. PNG labels come from single-digit parent
/// directory names when every image has one.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    if !path.exists() {
        return Err(Error::ingestion(path, "corpus path does not exist"));
    }
    let (pixels, labels) = if path.is_file() {
        read_image_idx(path)?
    } else {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        let idx_files: Vec<_> = files.iter().filter(|p| is_idx_images(p)).collect();
        if !idx_files.is_empty() {
            let mut pixels = Vec::new();
            let mut labels = Some(Vec::new());
            for f in idx_files {
                let (p, l) = read_image_idx(f)?;
                pixels.extend(p);
                labels = match (labels, l) {
                    (Some(mut acc), Some(l)) => {
                        acc.extend(l);
                        Some(acc)
                    }
                    _ => None,
                };
            }
            (pixels, labels)
        } else {
            let pngs: Vec<_> = files
                .iter()
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
                .collect();
            let mut pixels = Vec::with_capacity(pngs.len() * IMAGE_PIXELS);
            let mut labels = Vec::with_capacity(pngs.len());
            for p in &pngs {
                pixels.extend(read_png(p)?);
                labels.push(
                    p.parent()
                        .and_then(|d| d.file_name())
                        .and_then(|n| n.to_str())
                        .and_then(|n| n.parse::<u8>().ok())
                        .filter(|d| *d < 10),
                );
            }
            let labels = labels.into_iter().collect::<Option<Vec<u8>>>();
            (pixels, labels)
        }
    };
    if pixels.is_empty() {
        return Err(Error::ingestion(path, "corpus contains no images"));
    }
    Corpus::from_raw(pixels, labels).map_err(|e| Error::ingestion(path, e.to_string()))
}

/// Loads a corpus and partitions it with a seeded permutation.
pub fn load_dataset(corpus_path: &Path, split_ratio: f64, split_seed: u64) -> Result<DatasetSplit> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::arg(format!(
            "split ratio {split_ratio} not in (0, 1)"
        )));
    }
    let corpus = load_corpus(corpus_path)?;
    DatasetSplit::from_corpus(&corpus, split_ratio, split_seed)
}

const CACHE_MAGIC: &[u8; 8] = b"GCSPLIT1";

/// As [`load_dataset`], memoizing the split indices on disk keyed by
/// (corpus digest, ratio, seed). A stale or corrupt cache entry is rebuilt.
pub fn load_dataset_cached(
    corpus_path: &Path,
    split_ratio: f64,
    split_seed: u64,
    cache_dir: &Path,
) -> Result<DatasetSplit> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::arg(format!(
            "split ratio {split_ratio} not in (0, 1)"
        )));
    }
    let corpus = load_corpus(corpus_path)?;
    let key = format!(
        "split-{}-{:016x}-{}.bin",
        &corpus.digest[..16],
        split_ratio.to_bits(),
        split_seed
    );
    let cache_path = cache_dir.join(key);
    if let Ok(bytes) = fs::read(&cache_path) {
        if let Some((train_indices, eval_indices)) = decode_cache(&bytes, corpus.count) {
            let pick = |idx: &[usize]| {
                corpus
                    .labels
                    .as_ref()
                    .map(|l| idx.iter().map(|&i| l[i]).collect::<Vec<_>>())
            };
            return Ok(DatasetSplit {
                train: corpus.batch(&train_indices),
                eval: corpus.batch(&eval_indices),
                train_labels: pick(&train_indices),
                eval_labels: pick(&eval_indices),
                train_indices,
                eval_indices,
                split_ratio,
                split_seed,
                corpus_digest: corpus.digest.clone(),
            });
        }
    }
    let split = DatasetSplit::from_corpus(&corpus, split_ratio, split_seed)?;
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let mut bytes = CACHE_MAGIC.to_vec();
    bytes.extend((split.train_indices.len() as u64).to_le_bytes());
    for &i in split.train_indices.iter().chain(&split.eval_indices) {
        bytes.extend((i as u32).to_le_bytes());
    }
    crate::io::write_atomic(&cache_path, &bytes)?;
    Ok(split)
}

fn decode_cache(bytes: &[u8], count: usize) -> Option<(Vec<usize>, Vec<usize>)> {
    if bytes.len() != 16 + 4 * count || &bytes[..8] != CACHE_MAGIC {
        return None;
    }
    let n_train = u64::from_le_bytes(bytes[8..16].try_into().ok()?) as usize;
    if n_train > count {
        return None;
    }
    let all: Vec<usize> = bytes[16..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let mut seen = vec![false; count];
    for &i in &all {
        if i >= count || std::mem::replace(&mut seen[i], true) {
            return None;
        }
    }
    Some((all[..n_train].to_vec(), all[n_train..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::idx::{write_idx_images, write_idx_labels};

    fn write_corpus(dir: &Path, n: usize) -> PathBuf {
        let pixels: Vec<u8> = (0..n * IMAGE_PIXELS)
            .map(|i| (i * 31 % 256) as u8)
            .collect();
        let p = dir.join("c-images-idx3-ubyte");
        write_idx_images(&p, n, 28, 28, &pixels).unwrap();
        write_idx_labels(
            &dir.join("c-labels-idx1-ubyte"),
            &(0..n).map(|i| (i % 10) as u8).collect::<Vec<_>>(),
        )
        .unwrap();
        p
    }

    #[test]
    fn full_scale_split_sizes() {
        let (train, eval) = split_indices(70_000, 0.8, 3).unwrap();
        assert_eq!((train.len(), eval.len()), (56_000, 14_000));
    }

    #[test]
    fn split_is_a_partition_and_deterministic() {
        let (a_train, a_eval) = split_indices(1000, 0.8, 11).unwrap();
        let (b_train, b_eval) = split_indices(1000, 0.8, 11).unwrap();
        assert_eq!((&a_train, &a_eval), (&b_train, &b_eval));
        let mut all: Vec<_> = a_train.iter().chain(&a_eval).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_ne!(split_indices(1000, 0.8, 12).unwrap().0, a_train);
    }

    #[test]
    fn rejects_bad_ratio_and_empty_corpus() {
        for r in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(split_indices(10, r, 0), Err(Error::Argument(_))));
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e-images-idx3-ubyte");
        write_idx_images(&p, 0, 28, 28, &[]).unwrap();
        assert!(matches!(
            load_dataset(&p, 0.8, 0),
            Err(Error::Ingestion { .. })
        ));
        assert!(matches!(
            load_dataset(&dir.path().join("missing"), 0.8, 0),
            Err(Error::Ingestion { .. })
        ));
        let p = write_corpus(dir.path(), 5);
        assert!(matches!(load_dataset(&p, 1.0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn corrupt_corpus_is_an_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad-images-idx3-ubyte");
        fs::write(
            &p,
            [0u8, 0, 8, 3, 0, 0, 0, 9, 0, 0, 0, 28, 0, 0, 0, 28, 1, 2],
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&p, 0.8, 0),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn loads_normalized_split_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_corpus(dir.path(), 50);
        let split = load_dataset(&p, 0.8, 1).unwrap();
        assert_eq!((split.train.count(), split.eval.count()), (40, 10));
        let (lo, hi) = split.train.min_max().unwrap();
        assert!(lo >= -1.0 && hi <= 1.0);
        assert_eq!(lo, -1.0);
        assert_eq!(hi, 1.0);
        let labels = split.train_labels.as_ref().unwrap();
        for (k, &i) in split.train_indices.iter().enumerate() {
            assert_eq!(labels[k] as usize, i % 10);
        }
        // directory form finds the same files
        let by_dir = load_dataset(dir.path(), 0.8, 1).unwrap();
        assert_eq!(by_dir.train_indices, split.train_indices);
    }

    #[test]
    fn cache_round_trips_and_recovers_from_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_corpus(dir.path(), 30);
        let cache = dir.path().join("cache");
        let a = load_dataset_cached(&p, 0.8, 5, &cache).unwrap();
        let b = load_dataset_cached(&p, 0.8, 5, &cache).unwrap();
        assert_eq!(a.train_indices, b.train_indices);
        assert_eq!(a.train, b.train);
        let entry = fs::read_dir(&cache)
            .unwrap()
            .next()
            .unwrap()
            .unwrap()
            .path();
        fs::write(&entry, b"garbage").unwrap();
        let c = load_dataset_cached(&p, 0.8, 5, &cache).unwrap();
        assert_eq!(c.eval_indices, a.eval_indices);
    }

    #[test]
    fn png_directory_fallback() {
        let dir = tempfile::tempdir().unwrap();
        for (digit, shade) in [(3u8, 0u8), (7, 255)] {
            let sub = dir.path().join(digit.to_string());
            fs::create_dir_all(&sub).unwrap();
            let f = fs::File::create(sub.join("a.png")).unwrap();
            let mut enc = png::Encoder::new(f, 28, 28);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header()
                .unwrap()
                .write_image_data(&[shade; 784])
                .unwrap();
        }
        let corpus = load_corpus(dir.path()).unwrap();
        assert_eq!(corpus.count, 2);
        assert_eq!(corpus.labels, Some(vec![3, 7]));
        let b = corpus.batch(&[0, 1]);
        assert_eq!(b.image(0)[0], -1.0);
        assert_eq!(b.image(1)[0], 1.0);
    }
}
