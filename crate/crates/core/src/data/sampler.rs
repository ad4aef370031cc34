use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Domain};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Source minibatch: inputs with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Target minibatch: inputs only. `indices` point back into the dataset so
/// evaluation code can look up held-out truth.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledBatch {
    pub inputs: Tensor,
    pub indices: Vec<usize>,
}

/// Shuffled index pool consumed without replacement, reshuffled on exhaustion.
#[derive(Clone, Debug)]
struct Pool {
    order: Vec<usize>,
    cursor: usize,
}

impl Pool {
    fn new(mut order: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        order.shuffle(rng);
        Self { order, cursor: 0 }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

/// Class-aware source sampler: each batch covers `classes_per_batch`
/// classes (all of them when there are no more than that) with near-equal
/// counts per class.
#[derive(Clone, Debug)]
pub struct ClassAwareSampler {
    rng: ChaCha8Rng,
    classes: Vec<usize>,
    pools: Vec<Pool>,
    batch_size: usize,
    classes_per_batch: usize,
}

impl ClassAwareSampler {
    pub fn new(ds: &Dataset, batch_size: usize, classes_per_batch: usize, seed: u64) -> Result<Self> {
        if ds.domain() != Domain::Source {
            return Err(Error::invalid("class-aware sampling needs a labeled source dataset"));
        }
        if classes_per_batch == 0 || batch_size < classes_per_batch {
            return Err(Error::invalid(format!(
                "batch size {batch_size} must be at least classes_per_batch {classes_per_batch} > 0"
            )));
        }
        if batch_size > ds.len() {
            return Err(Error::invalid(format!(
                "batch size {batch_size} exceeds dataset size {}",
                ds.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let by_class = ds.class_indices().expect("source datasets carry labels");
        let mut classes = Vec::new();
        let mut pools = Vec::new();
        for (k, idx) in by_class.into_iter().enumerate() {
            if !idx.is_empty() {
                classes.push(k);
                pools.push(Pool::new(idx, &mut rng));
            }
        }
        Ok(Self {
            rng,
            classes,
            pools,
            batch_size,
            classes_per_batch,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn next_batch(&mut self, ds: &Dataset) -> Result<LabeledBatch> {
        let labels_all = ds
            .labels()
            .ok_or_else(|| Error::invalid("class-aware sampling needs labels"))?;
        let available = self.classes.len();
        // positions into `self.classes`
        let mut chosen: Vec<usize> = if available <= self.classes_per_batch {
            (0..available).collect()
        } else {
            index::sample(&mut self.rng, available, self.classes_per_batch).into_vec()
        };
        chosen.shuffle(&mut self.rng);
        let per = self.batch_size / chosen.len();
        let extra = self.batch_size % chosen.len();
        let mut indices = Vec::with_capacity(self.batch_size);
        for (rank, &c) in chosen.iter().enumerate() {
            let count = per + usize::from(rank < extra);
            for _ in 0..count {
                indices.push(self.pools[c].draw(&mut self.rng));
            }
        }
        let labels = indices.iter().map(|&i| labels_all[i]).collect();
        Ok(LabeledBatch {
            inputs: ds.inputs().select_rows(&indices)?,
            labels,
            indices,
        })
    }
}

/// Uniform without-replacement sampler, reshuffled after each pass.
#[derive(Clone, Debug)]
pub struct UniformSampler {
    rng: ChaCha8Rng,
    pool: Pool,
    batch_size: usize,
}

impl UniformSampler {
    pub fn new(ds: &Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > ds.len() {
            return Err(Error::invalid(format!(
                "batch size {batch_size} must be in 1..={}",
                ds.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool = Pool::new((0..ds.len()).collect(), &mut rng);
        Ok(Self {
            rng,
            pool,
            batch_size,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn next_batch(&mut self, ds: &Dataset) -> Result<UnlabeledBatch> {
        let indices: Vec<usize> = (0..self.batch_size)
            .map(|_| self.pool.draw(&mut self.rng))
            .collect();
        Ok(UnlabeledBatch {
            inputs: ds.inputs().select_rows(&indices)?,
            indices,
        })
    }
}
