use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::qvt::{read_tensor, write_tensor, Dtype};
use super::Mask;
use crate::nn::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// One chip: a `C × P × P` input, its `P × P` mask, and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub input: Tensor,
    pub mask: Mask,
    pub row: usize,
    pub col: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patch_size: usize,
    pub stride: usize,
    pub channels: usize,
    pub items: Vec<Patch>,
}

/// Window count along one axis: `⌊(extent − patch)/stride⌋ + 1`.
pub fn patch_grid(extent: usize, patch_size: usize, stride: usize) -> usize {
    if patch_size > extent || stride == 0 {
        0
    } else {
        (extent - patch_size) / stride + 1
    }
}

/// Cuts `image` (`C × H × W`) and `mask` into overlapping chips with origins
/// at multiples of `stride`, row-major. Pixels past the last full window are
/// dropped. Every chip starts in the train split.
pub fn extract_patches(image: &Tensor, mask: &Mask, patch_size: usize, stride: usize) -> Result<PatchSet> {
    let (channels, height, width) = match *image.dims() {
        [c, h, w] => (c, h, w),
        [h, w] => (1, h, w),
        ref d => return Err(Error::Shape(format!("expected C×H×W image, got dims {d:?}"))),
    };
    if mask.height() != height || mask.width() != width {
        return Err(Error::Shape(format!("image is {height}x{width}, mask is {}x{}", mask.height(), mask.width())));
    }
    if patch_size == 0 || stride == 0 {
        return Err(Error::Config("patch size and stride must be >= 1".into()));
    }
    if patch_size > height || patch_size > width {
        return Err(Error::Size(format!("patch {patch_size} larger than image {height}x{width}")));
    }

    let rows = patch_grid(height, patch_size, stride);
    let cols = patch_grid(width, patch_size, stride);
    let src = image.data();
    let mut items = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let (row, col) = (pr * stride, pc * stride);
            let mut input = Vec::with_capacity(channels * patch_size * patch_size);
            for c in 0..channels {
                for r in row..row + patch_size {
                    let start = (c * height + r) * width + col;
                    input.extend_from_slice(&src[start..start + patch_size]);
                }
            }
            let mut m = Vec::with_capacity(patch_size * patch_size);
            for r in row..row + patch_size {
                let start = r * width + col;
                m.extend_from_slice(&mask.data()[start..start + patch_size]);
            }
            items.push(Patch {
                input: Tensor::new(&[channels, patch_size, patch_size], input)?,
                mask: Mask::new(patch_size, patch_size, m)?,
                row,
                col,
                split: Split::Train,
            });
        }
    }
    Ok(PatchSet { patch_size, stride, channels, items })
}

/// Seeded shuffle; the first `⌈n·test_fraction⌉` chips become test, the rest train.
pub fn split(mut set: PatchSet, test_fraction: f64, seed: u64) -> Result<PatchSet> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let n = set.items.len();
    // Guard against products like 10 * 0.3 = 3.0000000000000004.
    let n_test = ((n as f64 * test_fraction) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for item in &mut set.items {
        item.split = Split::Train;
    }
    for &i in &order[..n_test.min(n)] {
        set.items[i].split = Split::Test;
    }
    Ok(set)
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, split: Split) -> usize {
        self.items.iter().filter(|p| p.split == split).count()
    }

    pub fn of_split(&self, split: Split) -> Vec<&Patch> {
        self.items.iter().filter(|p| p.split == split).collect()
    }

    /// Writes `inputs.qvt` (N×C×P×P, f64), `masks.qvt` (N×P×P, f32) and
    /// `index.tsv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::Data("refusing to write an empty patch set".into()));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let inputs: Vec<&Tensor> = self.items.iter().map(|p| &p.input).collect();
        write_tensor(&dir.join("inputs.qvt"), &Tensor::stack(&inputs)?, Dtype::F64)?;
        let p = self.patch_size;
        let masks: Vec<f64> = self.items.iter().flat_map(|it| it.mask.data().iter().map(|&v| v as f64)).collect();
        write_tensor(&dir.join("masks.qvt"), &Tensor::new(&[self.items.len(), p, p], masks)?, Dtype::F32)?;
        let mut index = format!(
            "# patch_size={} stride={} channels={}\nid\trow\tcol\tsplit\n",
            self.patch_size, self.stride, self.channels
        );
        for (i, it) in self.items.iter().enumerate() {
            index.push_str(&format!("{i}\t{}\t{}\t{}\n", it.row, it.col, it.split));
        }
        let path = dir.join("index.tsv");
        fs::write(&path, index).map_err(|e| Error::io(path, e))
    }

    pub fn read_dir(dir: &Path) -> Result<PatchSet> {
        let index_path = dir.join("index.tsv");
        let index = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let mut lines = index.lines().enumerate();
        let bad = |line: usize, message: &str| Error::Parse { line: line + 1, message: message.into() };

        let (_, header) = lines.next().ok_or_else(|| bad(0, "empty index"))?;
        let mut meta = [None; 3];
        for field in header.trim_start_matches('#').split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| bad(0, "malformed header"))?;
            let value: usize = value.parse().map_err(|_| bad(0, "malformed header value"))?;
            match key {
                "patch_size" => meta[0] = Some(value),
                "stride" => meta[1] = Some(value),
                "channels" => meta[2] = Some(value),
                _ => return Err(bad(0, "unknown header key")),
            }
        }
        let [Some(patch_size), Some(stride), Some(channels)] = meta else {
            return Err(bad(0, "incomplete header"));
        };
        lines.next();

        let (inputs, _) = read_tensor(&dir.join("inputs.qvt"))?;
        let (masks, _) = read_tensor(&dir.join("masks.qvt"))?;
        let p = patch_size;
        let n = match *inputs.dims() {
            [n, c, h, w] if c == channels && h == p && w == p => n,
            ref d => return Err(Error::Shape(format!("inputs.qvt has dims {d:?}"))),
        };
        if masks.dims() != [n, p, p] {
            return Err(Error::Shape(format!("masks.qvt has dims {:?}", masks.dims())));
        }

        let mut items = Vec::with_capacity(n);
        for (line, text) in lines {
            let fields: Vec<&str> = text.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(line, "expected 4 tab-separated fields"));
            }
            let id: usize = fields[0].parse().map_err(|_| bad(line, "bad id"))?;
            if id != items.len() || id >= n {
                return Err(bad(line, "ids must be consecutive and within the tensor"));
            }
            let chip = p * p;
            let input = inputs.data()[id * channels * chip..(id + 1) * channels * chip].to_vec();
            let mask: Vec<u8> = masks.data()[id * chip..(id + 1) * chip]
                .iter()
                .map(|&v| {
                    if v == 0.0 {
                        Ok(0)
                    } else if v == 1.0 {
                        Ok(1)
                    } else {
                        Err(bad(line, "non-binary mask"))
                    }
                })
                .collect::<Result<_>>()?;
            items.push(Patch {
                input: Tensor::new(&[channels, p, p], input)?,
                mask: Mask::new(p, p, mask)?,
                row: fields[1].parse().map_err(|_| bad(line, "bad row"))?,
                col: fields[2].parse().map_err(|_| bad(line, "bad col"))?,
                split: fields[3].parse().map_err(|_| bad(line, "bad split"))?,
            });
        }
        if items.len() != n {
            return Err(Error::Data(format!("index lists {} chips, tensors hold {n}", items.len())));
        }
        Ok(PatchSet { patch_size, stride, channels, items })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> (Tensor, Mask) {
        let img = Tensor::new(&[1, h, w], (0..h * w).map(|v| v as f64).collect()).unwrap();
        let mask = Mask::new(h, w, (0..h * w).map(|v| (v % 3 == 0) as u8).collect()).unwrap();
        (img, mask)
    }

    #[test]
    fn window_counts() {
        let (img, mask) = ramp(256, 256);
        assert_eq!(extract_patches(&img, &mask, 256, 128).unwrap().len(), 1);
        let (img, mask) = ramp(300, 300);
        let set = extract_patches(&img, &mask, 256, 128).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!((set.items[0].row, set.items[0].col), (0, 0));
        assert_eq!(patch_grid(1024, 256, 128), 7);
    }

    #[test]
    fn contents_match_subwindows_multichannel() {
        let (h, w) = (10, 12);
        let img = Tensor::new(&[2, h, w], (0..2 * h * w).map(|v| v as f64 * 0.5).collect()).unwrap();
        let mask = Mask::zeros(h, w);
        let set = extract_patches(&img, &mask, 4, 3).unwrap();
        assert_eq!(set.len(), patch_grid(h, 4, 3) * patch_grid(w, 4, 3));
        for p in &set.items {
            for c in 0..2 {
                for r in 0..4 {
                    for q in 0..4 {
                        let got = p.input.data()[(c * 4 + r) * 4 + q];
                        let want = img.data()[(c * h + p.row + r) * w + p.col + q];
                        assert_eq!(got.to_bits(), want.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn errors() {
        let (img, _) = ramp(8, 8);
        assert!(matches!(extract_patches(&img, &Mask::zeros(8, 9), 4, 4), Err(Error::Shape(_))));
        assert!(matches!(extract_patches(&img, &Mask::zeros(8, 8), 9, 4), Err(Error::Size(_))));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (img, mask) = ramp(1024, 1024);
        let set = extract_patches(&img, &mask, 256, 128).unwrap();
        let a = split(set.clone(), 0.2, 7).unwrap();
        assert_eq!(a.count(Split::Test), 10);
        assert_eq!(a.count(Split::Train), 39);
        let b = split(set.clone(), 0.2, 7).unwrap();
        assert_eq!(a, b);
        assert!(matches!(split(set.clone(), 0.0, 7), Err(Error::Config(_))));
        assert!(matches!(split(set, 1.0, 7), Err(Error::Config(_))));
    }

    #[test]
    fn split_ceiling_is_robust_to_rounding() {
        let (img, mask) = ramp(10, 1);
        let set = extract_patches(&img, &mask, 1, 1).unwrap();
        assert_eq!(set.len(), 10);
        assert_eq!(split(set, 0.3, 0).unwrap().count(Split::Test), 3);
    }

    #[test]
    fn directory_round_trip() {
        let (img, mask) = ramp(20, 20);
        let set = split(extract_patches(&img, &mask, 8, 4).unwrap(), 0.25, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.write_dir(dir.path()).unwrap();
        assert_eq!(PatchSet::read_dir(dir.path()).unwrap(), set);
    }
}
