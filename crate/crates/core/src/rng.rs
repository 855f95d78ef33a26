//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, replication, individual, index)`
//! so results never depend on thread count or scheduling order. The block
//! function is Philox4x64-10 (Salmon, Moraes, Dror & Shaw, 2011); the
//! reference vectors in the tests below are part of the reproducibility
//! contract and must not change.

const PHILOX_M0: u64 = 0xD2E7_470E_E14C_6C93;
const PHILOX_M1: u64 = 0xCA5A_8263_9512_1157;
const PHILOX_W0: u64 = 0x9E37_79B9_7F4A_7C15;
const PHILOX_W1: u64 = 0xBB67_AE85_84CA_A73B;
const ROUNDS: usize = 10;

#[inline]
fn mulhilo(a: u64, b: u64) -> (u64, u64) {
    let p = (a as u128) * (b as u128);
    ((p >> 64) as u64, p as u64)
}

/// One Philox4x64-10 block.
pub fn philox4x64(counter: [u64; 4], key: [u64; 2]) -> [u64; 4] {
    let mut ctr = counter;
    let mut k = key;
    for round in 0..ROUNDS {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0];
    }
    ctr
}

/// Maps 64 random bits to a double in `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn bits_to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A sequential view of one stream: key `(seed, replication)`, counter
/// `(individual, block)`.
#[derive(Debug, Clone)]
pub struct Stream {
    key: [u64; 2],
    individual: u64,
    block: u64,
    buf: [u64; 4],
    pos: usize,
}

impl Stream {
    pub fn new(seed: u64, replication: u64, individual: u64) -> Self {
        Self {
            key: [seed, replication],
            individual,
            block: 0,
            buf: [0; 4],
            pos: 4,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        if self.pos == 4 {
            self.buf = philox4x64([self.individual, self.block, 0, 0], self.key);
            self.block += 1;
            self.pos = 0;
        }
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        bits_to_unit(self.next_u64())
    }

    /// Uniform in `(0, 1]`, safe to pass to `ln`.
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Exponential draw with the given mean.
    #[inline]
    pub fn exponential(&mut self, mean: f64) -> f64 {
        -mean * self.uniform_open0().ln()
    }

    /// Standard normal via Box-Muller (one of the pair is discarded so the
    /// stream position stays a simple function of the draw count).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Lemire's multiply-shift with rejection.
        let threshold = n.wrapping_neg() % n;
        loop {
            let (hi, lo) = mulhilo(self.next_u64(), n);
            if lo >= threshold {
                return hi;
            }
        }
    }
}
