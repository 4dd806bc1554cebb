//! Small shared helpers: stable hashing, seed derivation and number formatting.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

/// Continue an FNV-1a state with more bytes, so `a` then `b` hashes like `a ++ b`.
pub fn fnv1a64_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer; a bijective mixer on `u64`.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Named sub-seed of a master seed. Stages never share a random stream.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    splitmix64(master ^ fnv1a64(name.as_bytes()))
}

/// Locale-independent rendering with 9 significant digits.
///
/// Plain decimal notation for magnitudes in `[1e-5, 1e9)`, scientific otherwise.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.8e}", x);
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    if (-5..9).contains(&exp) {
        format!("{:.*}", (8 - exp) as usize, x)
    } else {
        sci
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64_extend(fnv1a64(b"L0_S1"), b"_F25"), fnv1a64(b"L0_S1_F25"));
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_num(0.11), "0.110000000");
        assert_eq!(fmt_num(1.0), "1.00000000");
        assert_eq!(fmt_num(-2.5), "-2.50000000");
        assert_eq!(fmt_num(1718.48), "1718.48000");
        assert_eq!(fmt_num(9.9999999999), "10.0000000");
        assert_eq!(fmt_num(1.5e-7), "1.50000000e-7");
        assert_eq!(fmt_num(0.0), "0");
    }

    #[test]
    fn derived_seeds_differ_by_name() {
        assert_ne!(derive_seed(2016, "stack"), derive_seed(2016, "oof"));
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
    }
}
