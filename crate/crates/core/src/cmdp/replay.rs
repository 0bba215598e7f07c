use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CmdpSpec, Transition};
use crate::error::{invalid, Error, Result};

/// Fixed-capacity FIFO store of transitions with its own seeded sampler.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    spec: CmdpSpec,
    capacity: usize,
    items: VecDeque<Transition>,
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    capacity: usize,
    seed: u64,
    stream: u64,
    transitions: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(spec: CmdpSpec, capacity: usize, seed: u64, stream: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("replay capacity must be positive"));
        }
        spec.validate()?;
        Ok(Self {
            spec,
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            seed,
            stream,
            rng: stream_rng(seed, stream),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        self.spec.check_transition(&t)?;
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Draws `batch` distinct transitions uniformly without replacement.
    pub fn sample_batch(&mut self, batch: usize) -> Result<Vec<Transition>> {
        if batch == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if batch > self.items.len() {
            return Err(Error::InsufficientData {
                requested: batch,
                available: self.items.len(),
            });
        }
        let idx = rand::seq::index::sample(&mut self.rng, self.items.len(), batch);
        Ok(idx.iter().map(|i| self.items[i].clone()).collect())
    }

    /// Restarts the sampling stream from its seed.
    pub fn reset_rng(&mut self) {
        self.rng = stream_rng(self.seed, self.stream);
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            capacity: self.capacity,
            seed: self.seed,
            stream: self.stream,
            transitions: self.items.iter().cloned().collect(),
        };
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &ck)?;
        Ok(())
    }

    /// Loads a checkpoint; the sampler restarts from the stored seed.
    pub fn load_json(spec: CmdpSpec, path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(f)?;
        let mut buf = Self::new(spec, ck.capacity, ck.seed, ck.stream)?;
        for t in ck.transitions {
            buf.push(t)?;
        }
        Ok(buf)
    }
}

/// Independent generator for `(seed, stream)`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
