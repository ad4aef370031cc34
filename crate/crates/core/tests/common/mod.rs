#![allow(dead_code)]

use cosca::data::{
    gen_two_moons_shift, standardize, ClassAwareSampler, Dataset, LabeledBatch, TargetTruth, UniformSampler,
    UnlabeledBatch,
};

pub struct Moons {
    pub source: Dataset,
    pub target: Dataset,
    pub truth: TargetTruth,
}

pub fn moons(n: usize, rotation: f64, seed: u64) -> Moons {
    let (s, t, truth) = gen_two_moons_shift(n, rotation, 0.1, seed).unwrap();
    let (source, target, _) = standardize(&s, &t).unwrap();
    Moons { source, target, truth }
}

pub fn batches(m: &Moons, size: usize, seed: u64) -> (LabeledBatch, UnlabeledBatch) {
    let mut s = ClassAwareSampler::new(&m.source, size, 2, seed).unwrap();
    let mut t = UniformSampler::new(&m.target, size, seed).unwrap();
    (s.next_batch(&m.source).unwrap(), t.next_batch(&m.target).unwrap())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
