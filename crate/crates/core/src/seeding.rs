//! Keyed random streams.
//!
//! All randomness descends from one root seed. A stream is addressed by
//! `(purpose, level, index)`, so any shift or sample can be regenerated on
//! its own, on any thread, without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    SingleLevelShift,
    LatticeBase,
    IidSample,
    MlqmcShift,
    Bootstrap,
    Reference,
    SweepPoint,
    Test,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::SingleLevelShift => 0x5348_4946_5453_4c31,
            Purpose::LatticeBase => 0x4c41_5454_4241_5345,
            Purpose::IidSample => 0x4949_4453_414d_504c,
            Purpose::MlqmcShift => 0x4d4c_514d_4353_4846,
            Purpose::Bootstrap => 0x424f_4f54_5354_5250,
            Purpose::Reference => 0x5245_4645_5245_4e43,
            Purpose::SweepPoint => 0x5357_4545_5050_4f49,
            Purpose::Test => 0x5445_5354_5445_5354,
        }
    }
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit key of the stream `(root, purpose, level, index)`.
pub fn stream_key(root: u64, purpose: Purpose, level: u64, index: u64) -> u64 {
    let mut h = splitmix(root);
    h = splitmix(h ^ purpose.tag());
    h = splitmix(h ^ level.wrapping_mul(0xA24B_AED4_963E_E407));
    splitmix(h ^ index.wrapping_mul(0x9FB2_1C65_1E98_DF25))
}

/// Independent generator for one addressed stream.
pub fn stream_rng(root: u64, purpose: Purpose, level: u64, index: u64) -> ChaCha8Rng {
    let key = stream_key(root, purpose, level, index);
    let mut seed = [0u8; 32];
    let mut s = key;
    for chunk in seed.chunks_mut(8) {
        s = splitmix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
