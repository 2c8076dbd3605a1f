use cal_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SynthError};
use crate::render::{class_glyphs, identity_glyphs, identity_ink, Canvas};
use crate::spec::DatasetSpec;

const TRAIN_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1;
const RETRIEVAL_STREAM: u64 = 2;
const CLASS_INK: [f64; 3] = [0.1, 0.1, 0.1];

/// Axis-aligned pixel rectangle covering columns `x0..x1` and rows `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(SynthError::Spec(format!(
                "empty box ({x0},{y0})-({x1},{y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn intersection(&self, other: &BBox) -> usize {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w * h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        inter as f64 / (self.area() + other.area() - inter) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// `3×S×S`, values in `[0, 1]`.
    pub image: Tensor,
    pub class_label: usize,
    pub identity_label: Option<usize>,
    pub object_bbox: BBox,
    pub part_centers: Vec<(f64, f64)>,
    pub background_id: usize,
}

/// Train/query/gallery samples for retrieval; identities are disjoint
/// between `train` and the other two.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSplit {
    pub train_ids: Vec<usize>,
    pub train: Vec<SyntheticSample>,
    pub query: Vec<SyntheticSample>,
    pub gallery: Vec<SyntheticSample>,
}

fn sample_rng(seed: u64, split: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 48) | index as u64);
    rng
}

struct Style {
    glyphs: [usize; 4],
    ink: [f64; 3],
}

fn draw(
    spec: &DatasetSpec,
    rng: &mut ChaCha8Rng,
    background: usize,
    style: &Style,
) -> Result<(Tensor, BBox, Vec<(f64, f64)>)> {
    let size = spec.image_size;
    let side = size / 2;
    let phase = (rng.gen_range(0..4), rng.gen_range(0..4));
    let (x0, y0) = (
        rng.gen_range(0..=size - side),
        rng.gen_range(0..=size - side),
    );
    let plate = rng.gen_range(0.7..0.8);
    let mut canvas = Canvas::new(size);
    canvas.texture(background, spec.num_classes, phase);
    let centers = canvas.object(x0, y0, side, plate, style.ink, style.glyphs);
    canvas.add_noise(rng);
    let image = Tensor::new(vec![3, size, size], canvas.data)?;
    Ok((image, BBox::new(x0, y0, x0 + side, y0 + side)?, centers))
}

fn class_sample(spec: &DatasetSpec, split: u64, index: usize) -> Result<SyntheticSample> {
    let k = spec.num_classes;
    let class = index % k;
    let mut rng = sample_rng(spec.seed, split, index);
    let biased = rng.gen_bool(if split == TRAIN_STREAM {
        spec.bias_strength
    } else {
        0.0
    });
    let uniform = rng.gen_range(0..k);
    let background = if biased { class } else { uniform };
    let style = Style {
        glyphs: class_glyphs(class),
        ink: CLASS_INK,
    };
    let (image, object_bbox, part_centers) = draw(spec, &mut rng, background, &style)?;
    Ok(SyntheticSample {
        image,
        class_label: class,
        identity_label: None,
        object_bbox,
        part_centers,
        background_id: background,
    })
}

/// Builds the classification train and test splits.
///
/// Each class is a fixed arrangement of four part glyphs on a plate covering
/// a quarter of the image. Training backgrounds use the texture matching the
/// label with probability `bias_strength` and a uniformly drawn texture
/// otherwise; test backgrounds are always uniform. Sample `i` of each split
/// has class `i mod K` and its own RNG stream.
pub fn generate_dataset(
    spec: &DatasetSpec,
) -> Result<(Vec<SyntheticSample>, Vec<SyntheticSample>)> {
    spec.validate()?;
    let train = (0..spec.num_classes * spec.samples_per_class)
        .map(|i| class_sample(spec, TRAIN_STREAM, i))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..spec.num_classes * spec.test_samples_per_class)
        .map(|i| class_sample(spec, TEST_STREAM, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

/// Builds identity-labeled views. The first half of the identities trains;
/// for every other identity, view 0 is the query and the rest form the gallery.
/// Views of one identity share glyphs and ink color but differ in position,
/// plate shade, background and noise.
pub fn make_retrieval_split(spec: &DatasetSpec) -> Result<RetrievalSplit> {
    spec.validate_retrieval()?;
    let n_train = spec.train_identities();
    let mut split = RetrievalSplit {
        train_ids: (0..n_train).collect(),
        train: Vec::new(),
        query: Vec::new(),
        gallery: Vec::new(),
    };
    for id in 0..spec.num_identities {
        let style = Style {
            glyphs: identity_glyphs(id),
            ink: identity_ink(id),
        };
        for view in 0..spec.views_per_identity {
            let mut rng = sample_rng(
                spec.seed,
                RETRIEVAL_STREAM,
                id * spec.views_per_identity + view,
            );
            let background = rng.gen_range(0..spec.num_classes);
            let (image, object_bbox, part_centers) = draw(spec, &mut rng, background, &style)?;
            let sample = SyntheticSample {
                image,
                class_label: id,
                identity_label: Some(id),
                object_bbox,
                part_centers,
                background_id: background,
            };
            match (id < n_train, view) {
                (true, _) => split.train.push(sample),
                (false, 0) => split.query.push(sample),
                (false, _) => split.gallery.push(sample),
            }
        }
    }
    Ok(split)
}

/// Stacks the images at `indices` into an `N×3×S×S` batch.
pub fn image_batch(samples: &[SyntheticSample], indices: &[usize]) -> Result<Tensor> {
    let first = indices
        .first()
        .map(|&i| samples[i].image.shape().to_vec())
        .ok_or_else(|| SynthError::Spec("empty batch".into()))?;
    let mut data = Vec::with_capacity(indices.len() * samples[indices[0]].image.numel());
    for &i in indices {
        let image = &samples[i].image;
        if image.shape() != first.as_slice() {
            return Err(SynthError::Spec(format!(
                "sample {i} has shape {:?}, expected {first:?}",
                image.shape()
            )));
        }
        data.extend_from_slice(image.data());
    }
    let mut shape = vec![indices.len()];
    shape.extend_from_slice(&first);
    Ok(Tensor::new(shape, data)?)
}
