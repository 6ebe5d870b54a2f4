//! Deterministic seed derivation shared by the randomized stages.
//!
//! Every randomized operation derives its stream from (user seed, stable
//! context labels, counters) so results depend only on seed + input, never
//! on iteration order or worker count.

/// splitmix64 step; the standard seed mixer.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes of a label, for mixing strings into seeds.
pub(crate) fn hash_label(label: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive a sub-seed from a base seed, a context label and a counter.
pub(crate) fn derive_seed(base: u64, label: &str, counter: u64) -> u64 {
    splitmix64(base ^ hash_label(label) ^ splitmix64(counter))
}

/// Counter-based uniform in [0,1): a pure function of (seed, counter).
pub(crate) fn unit_uniform(seed: u64, counter: u64) -> f64 {
    let bits = splitmix64(seed ^ splitmix64(counter.wrapping_add(0x6a09e667f3bcc909)));
    // 53 high bits -> [0,1)
    (bits >> 11) as f64 / (1u64 << 53) as f64
}
