use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose labels; each label selects an independent ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamName {
    WeightInit,
    Shuffle,
    Augment,
    NegativeLabels,
    DfaFeedback,
    Search,
    Split,
}

impl StreamName {
    pub fn label(self) -> &'static str {
        match self {
            StreamName::WeightInit => "weight-init",
            StreamName::Shuffle => "shuffle",
            StreamName::Augment => "augment",
            StreamName::NegativeLabels => "negative-labels",
            StreamName::DfaFeedback => "dfa-feedback",
            StreamName::Search => "search",
            StreamName::Split => "split",
        }
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Named, seeded random stream. Same `(name, seed)` gives the same sequence
/// on every platform.
#[derive(Clone, Debug)]
pub struct RngStream {
    name: StreamName,
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(name: StreamName, seed: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(fnv1a(name.label()));
        RngStream { name, seed, inner }
    }

    /// Child stream keyed by `(seed, epoch, index)`; independent of `self`'s position.
    pub fn derive(&self, epoch: u64, index: u64) -> Self {
        let key = splitmix(self.seed ^ splitmix(epoch.wrapping_add(1)) ^ splitmix(!index));
        let mut inner = ChaCha8Rng::seed_from_u64(key);
        inner.set_stream(fnv1a(self.name.label()));
        RngStream {
            name: self.name,
            seed: key,
            inner,
        }
    }

    pub fn name(&self) -> StreamName {
        self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`; unbiased by rejection.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
