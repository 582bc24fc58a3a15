//! Named random substreams derived from one master seed.
//!
//! Every consumer gets its own ChaCha stream id under a key fixed by the
//! master seed, so adding a consumer never perturbs the draws of another.
//! Parallel work splits a substream further into numbered chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamName {
    T1Data = 1,
    T1Train = 2,
    T1Eval = 3,
    T2Eval = 4,
    T2Data = 5,
    T3Train = 6,
    T3Eval = 7,
    GdmInit = 8,
    DrlInit = 9,
    DrlT1Train = 10,
    DrlT3Train = 11,
    DrlEval = 12,
    Collect = 13,
    Evaluate = 14,
    Train = 15,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStreams {
    master: u64,
}

/// One named stream; cheap to copy and send to worker threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substream {
    master: u64,
    id: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        SeedStreams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn substream(&self, name: StreamName) -> Substream {
        Substream {
            master: self.master,
            id: name as u64,
        }
    }
}

impl Substream {
    /// Generator for chunk `index` of this stream.
    pub fn chunk_rng(&self, index: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream((self.id << 32) | index as u64);
        rng
    }

    pub fn rng(&self) -> ChaCha8Rng {
        self.chunk_rng(0)
    }

    /// A 64-bit value for seeding a network initializer.
    pub fn derive_seed(&self) -> u64 {
        use rand::Rng;
        self.chunk_rng(u32::MAX).random()
    }
}
