//! In-memory labelled image sets and batch streams.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Samples of identical `(c, h, w)` shape with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dims: [usize; 3],
    classes: usize,
    images: Vec<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    /// `images` holds `labels.len()` samples laid out back to back.
    pub fn new(
        dims: [usize; 3],
        classes: usize,
        images: Vec<f32>,
        labels: Vec<usize>,
    ) -> Option<Self> {
        let per = dims.iter().product::<usize>();
        (images.len() == per * labels.len() && labels.iter().all(|&y| y < classes)).then_some(
            Dataset {
                dims,
                classes,
                images,
                labels,
            },
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sample_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = self.sample_len();
        &self.images[i * per..(i + 1) * per]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gathers the given samples into one batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let mut data = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.dims;
        let t = Tensor::from_vec([idx.len(), c, h, w], data).unwrap();
        (t, idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Consecutive batches in index order (last one may be short).
    pub fn sequential(&self, batch: usize) -> impl Iterator<Item = (Tensor<f32>, Vec<usize>)> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let chunks: Vec<Vec<usize>> = idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |c| self.batch(&c))
    }

    /// First `k` samples and the rest.
    pub fn split(&self, k: usize) -> (Dataset, Dataset) {
        let k = k.min(self.len());
        let per = self.sample_len();
        let head = Dataset {
            dims: self.dims,
            classes: self.classes,
            images: self.images[..k * per].to_vec(),
            labels: self.labels[..k].to_vec(),
        };
        let tail = Dataset {
            dims: self.dims,
            classes: self.classes,
            images: self.images[k * per..].to_vec(),
            labels: self.labels[k..].to_vec(),
        };
        (head, tail)
    }
}

/// An endless stream of training batches.
pub trait BatchSource {
    fn next_batch(&mut self) -> (Tensor<f32>, Vec<usize>);
}

/// Cycles over a dataset, reshuffling at every epoch boundary.
pub struct ShuffledBatches<'a> {
    data: &'a Dataset,
    batch: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> ShuffledBatches<'a> {
    pub fn new(data: &'a Dataset, batch: usize, seed: u64) -> Self {
        assert!(!data.is_empty(), "cannot stream an empty dataset");
        ShuffledBatches {
            data,
            batch: batch.clamp(1, data.len()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            pos: 0,
        }
    }

    /// Full batches per pass over the data.
    pub fn batches_per_epoch(&self) -> usize {
        self.data.len() / self.batch
    }
}

impl BatchSource for ShuffledBatches<'_> {
    fn next_batch(&mut self) -> (Tensor<f32>, Vec<usize>) {
        if self.pos + self.batch > self.order.len() {
            self.order = (0..self.data.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let idx = &self.order[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        self.data.batch(idx)
    }
}

impl<B: BatchSource + ?Sized> BatchSource for &mut B {
    fn next_batch(&mut self) -> (Tensor<f32>, Vec<usize>) {
        (**self).next_batch()
    }
}
