//! Same-car and different-car pair manifests for training and calibrating a
//! car comparator.
//!
//! A positive pair joins two images of one car taken at different times; a
//! negative pair joins an image of a car with a random image of another car.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Label;
use crate::rng::stream_rng;

/// Resampling attempts before a duplicate pair is accepted.
const MAX_RETRIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PairgenError {
    #[error("need at least 2 cars, got {0}")]
    TooFewCars(usize),
    #[error("car {0} has no images")]
    NoImages(String),
    #[error("no car has 2 or more images, positive pairs are impossible")]
    NoPositives,
    #[error("pair count must be positive and even, got {0}")]
    InvalidCount(usize),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairManifestEntry {
    pub anchor_ref: String,
    pub other_ref: String,
    pub label: Label,
    pub car_a: String,
    pub car_b: String,
}

/// Car id to the image references of that car.
pub type CarImages = BTreeMap<String, Vec<String>>;

struct Sampler<'a> {
    cars: Vec<(&'a str, &'a [String])>,
    eligible: Vec<usize>,
    rng: ChaCha8Rng,
    seen: HashSet<(String, String)>,
}

impl<'a> Sampler<'a> {
    fn new(cars: &'a CarImages, rng: ChaCha8Rng) -> Result<Self, PairgenError> {
        if cars.len() < 2 {
            return Err(PairgenError::TooFewCars(cars.len()));
        }
        if let Some((car, _)) = cars.iter().find(|(_, refs)| refs.is_empty()) {
            return Err(PairgenError::NoImages(car.clone()));
        }
        let cars: Vec<_> = cars.iter().map(|(c, r)| (c.as_str(), r.as_slice())).collect();
        let eligible = (0..cars.len()).filter(|&i| cars[i].1.len() >= 2).collect();
        Ok(Self {
            cars,
            eligible,
            rng,
            seen: HashSet::new(),
        })
    }

    /// Uniform index in `0..n` other than `skip`.
    fn other_than(&mut self, n: usize, skip: usize) -> usize {
        let i = self.rng.random_range(0..n - 1);
        if i >= skip {
            i + 1
        } else {
            i
        }
    }

    fn positive_for(&mut self, car: usize, anchor: usize) -> PairManifestEntry {
        let (id, refs) = self.cars[car];
        let other = self.other_than(refs.len(), anchor);
        PairManifestEntry {
            anchor_ref: refs[anchor].clone(),
            other_ref: refs[other].clone(),
            label: Label::Positive,
            car_a: id.to_owned(),
            car_b: id.to_owned(),
        }
    }

    fn negative_for(&mut self, car: usize, anchor: usize) -> PairManifestEntry {
        let (id, refs) = self.cars[car];
        let other_car = self.other_than(self.cars.len(), car);
        let (other_id, other_refs) = self.cars[other_car];
        let other = self.rng.random_range(0..other_refs.len());
        PairManifestEntry {
            anchor_ref: refs[anchor].clone(),
            other_ref: other_refs[other].clone(),
            label: Label::Negative,
            car_a: id.to_owned(),
            car_b: other_id.to_owned(),
        }
    }

    fn random_positive(&mut self) -> PairManifestEntry {
        let car = self.eligible[self.rng.random_range(0..self.eligible.len())];
        let anchor = self.rng.random_range(0..self.cars[car].1.len());
        self.positive_for(car, anchor)
    }

    fn random_negative(&mut self) -> PairManifestEntry {
        let car = self.rng.random_range(0..self.cars.len());
        let anchor = self.rng.random_range(0..self.cars[car].1.len());
        self.negative_for(car, anchor)
    }

    fn unique(&mut self, draw: fn(&mut Self) -> PairManifestEntry) -> PairManifestEntry {
        let mut entry = draw(self);
        for _ in 1..MAX_RETRIES {
            if !self.seen.contains(&unordered(&entry)) {
                break;
            }
            entry = draw(self);
        }
        self.seen.insert(unordered(&entry));
        entry
    }
}

fn unordered(e: &PairManifestEntry) -> (String, String) {
    if e.anchor_ref <= e.other_ref {
        (e.anchor_ref.clone(), e.other_ref.clone())
    } else {
        (e.other_ref.clone(), e.anchor_ref.clone())
    }
}

/// Draws `count / 2` positive and `count / 2` negative pairs, alternating.
///
/// A fresh manifest per epoch is obtained by varying `seed`.
pub fn generate_epoch_pairs(cars: &CarImages, count: usize, seed: u64) -> Result<Vec<PairManifestEntry>, PairgenError> {
    if count == 0 || count % 2 != 0 {
        return Err(PairgenError::InvalidCount(count));
    }
    let mut s = Sampler::new(cars, stream_rng(seed, &[b"epoch-pairs"]))?;
    if s.eligible.is_empty() {
        return Err(PairgenError::NoPositives);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count / 2 {
        out.push(s.unique(Sampler::random_positive));
        out.push(s.unique(Sampler::random_negative));
    }
    Ok(out)
}

/// Evaluation pairs: for each car, one randomly chosen anchor image paired
/// with another image of the same car and with an image of a random other
/// car.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvalPairs {
    pub entries: Vec<PairManifestEntry>,
    /// Cars with a single image, for which no positive pair exists.
    pub shortfall: Vec<String>,
}

pub fn generate_eval_pairs(cars: &CarImages, seed: u64) -> Result<EvalPairs, PairgenError> {
    let mut s = Sampler::new(cars, stream_rng(seed, &[b"eval-pairs"]))?;
    let mut entries = Vec::with_capacity(2 * cars.len());
    let mut shortfall = Vec::new();
    for car in 0..s.cars.len() {
        let anchor = s.rng.random_range(0..s.cars[car].1.len());
        if s.cars[car].1.len() >= 2 {
            entries.push(s.positive_for(car, anchor));
        } else {
            shortfall.push(s.cars[car].0.to_owned());
        }
        entries.push(s.negative_for(car, anchor));
    }
    if !shortfall.is_empty() {
        log::warn!("{} car(s) have a single image and no positive pair", shortfall.len());
    }
    Ok(EvalPairs { entries, shortfall })
}

/// Writes the `anchor_ref,other_ref,label,car_a,car_b` CSV.
pub fn write_manifest<W: Write>(out: W, entries: &[PairManifestEntry]) -> Result<(), PairgenError> {
    let mut w = csv::Writer::from_writer(out);
    for e in entries {
        w.serialize(e).map_err(|e| PairgenError::Manifest(e.to_string()))?;
    }
    w.flush().map_err(|e| PairgenError::Manifest(e.to_string()))?;
    Ok(())
}

pub fn read_manifest<R: Read>(input: R) -> Result<Vec<PairManifestEntry>, PairgenError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| PairgenError::Manifest(e.to_string()))
}
