//! Small numeric helpers: exact multiset summation and dense vector ops.
//!
//! Specimen descriptors are means over bags of cells, and those means must be
//! bit-identical under any reordering or whole-bag duplication of the cells.
//! Plain left-to-right f64 summation does not have that property, so bag
//! averages go through [`ExactAcc`], a fixed-point superaccumulator that adds
//! every addend exactly and rounds once at the end. The rounded sum depends
//! only on the multiset of inputs.

/// 32-bit limbs spanning the full f64 exponent range plus carry headroom.
const LIMB_BITS: u32 = 32;
const LIMBS: usize = 70;
/// Weight of bit 0 of limb 0 is 2^BIT_OFFSET.
const BIT_OFFSET: i64 = -1074;
/// Normalize after this many raw adds so limbs never overflow i64.
const MAX_PENDING: u32 = 1 << 30;

/// Exact accumulator for f64 values.
///
/// Internally a signed fixed-point integer wide enough to hold any finite
/// f64 exactly; `add` never rounds, `round` performs one round-to-nearest-even
/// conversion back to f64.
#[derive(Clone)]
pub struct ExactAcc {
    limbs: [i64; LIMBS],
    pending: u32,
}

impl Default for ExactAcc {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactAcc {
    pub fn new() -> Self {
        ExactAcc { limbs: [0; LIMBS], pending: 0 }
    }

    /// Adds a finite f64 exactly. Panics on NaN or infinity.
    pub fn add(&mut self, x: f64) {
        assert!(x.is_finite(), "ExactAcc::add requires finite input, got {x}");
        if x == 0.0 {
            return;
        }
        let bits = x.to_bits();
        let sign: i64 = if bits >> 63 == 1 { -1 } else { 1 };
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        // mantissa m and exponent e with |x| = m * 2^e
        let (m, e) = if biased == 0 {
            (frac, -1074i64)
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        let off = e - BIT_OFFSET;
        debug_assert!(off >= 0);
        let limb = (off / LIMB_BITS as i64) as usize;
        let shift = (off % LIMB_BITS as i64) as u32;
        // A 53-bit mantissa shifted by <32 bits spans at most three limbs.
        let wide = (m as u128) << shift;
        let mask = (1u128 << LIMB_BITS) - 1;
        self.limbs[limb] += sign * ((wide & mask) as i64);
        self.limbs[limb + 1] += sign * (((wide >> LIMB_BITS) & mask) as i64);
        self.limbs[limb + 2] += sign * (((wide >> (2 * LIMB_BITS)) & mask) as i64);
        self.pending += 1;
        if self.pending >= MAX_PENDING {
            self.normalize();
        }
    }

    /// Carry-propagates so every limb is in [0, 2^32), except that a negative
    /// total leaves a negative top limb, which `round` resolves.
    fn normalize(&mut self) {
        let base = 1i64 << LIMB_BITS;
        let mut carry = 0i64;
        for limb in self.limbs.iter_mut() {
            let cur = *limb + carry;
            let low = cur.rem_euclid(base);
            carry = (cur - low) >> LIMB_BITS;
            *limb = low;
        }
        // The accumulator is sized so a finite sum cannot carry out of the top.
        debug_assert!(carry == 0 || carry == -1);
        if carry == -1 {
            // Value is negative; fold the carry back as a sign marker.
            self.limbs[LIMBS - 1] -= base;
        }
        self.pending = 0;
    }

    fn is_negative(&self) -> bool {
        self.limbs[LIMBS - 1] < 0
    }

    fn negate(&mut self) {
        for limb in self.limbs.iter_mut() {
            *limb = -*limb;
        }
        self.normalize();
        debug_assert!(!self.is_negative());
    }

    /// Rounds the exact sum to the nearest f64 (ties to even).
    pub fn round(&self) -> f64 {
        let mut acc = self.clone();
        acc.normalize();
        let negative = acc.is_negative();
        if negative {
            acc.negate();
        }
        let top = match (0..LIMBS).rev().find(|&i| acc.limbs[i] != 0) {
            Some(i) => i,
            None => return 0.0,
        };
        let msb_in_limb = 63 - (acc.limbs[top] as u64).leading_zeros() as i64;
        // Absolute bit index of the most significant set bit.
        let msb = top as i64 * LIMB_BITS as i64 + msb_in_limb;
        // Gather a 96-bit window ending at `msb` and a sticky flag below it.
        let window_lo = msb - 95;
        let mut window: u128 = 0;
        for i in (0..LIMBS).rev() {
            let limb_lo = i as i64 * LIMB_BITS as i64;
            if limb_lo > msb {
                continue;
            }
            if limb_lo + (LIMB_BITS as i64) <= window_lo {
                break;
            }
            let rel = limb_lo - window_lo;
            if rel >= 0 {
                window |= (acc.limbs[i] as u128) << rel;
            } else {
                window |= (acc.limbs[i] as u128) >> (-rel);
            }
        }
        let mut sticky = false;
        for i in 0..LIMBS {
            let limb_lo = i as i64 * LIMB_BITS as i64;
            if limb_lo + (LIMB_BITS as i64) <= window_lo {
                if acc.limbs[i] != 0 {
                    sticky = true;
                    break;
                }
            } else {
                if rel_low_bits_nonzero(acc.limbs[i] as u64, window_lo - limb_lo) {
                    sticky = true;
                }
                break;
            }
        }
        // Result binade: value lies in [2^msb, 2^(msb+1)) * 2^BIT_OFFSET.
        let binade = msb + BIT_OFFSET;
        if binade > 1023 {
            return if negative { f64::NEG_INFINITY } else { f64::INFINITY };
        }
        // Mantissa bits available below the leading bit (fewer for subnormals).
        let mant_bits: i64 = if binade >= -1022 { 52 } else { 52 - (-1022 - binade) };
        let keep = 1 + mant_bits.max(0);
        let drop = 96 - keep;
        let mut mantissa = (window >> drop) as u64;
        let rest = window & ((1u128 << drop) - 1);
        let half = 1u128 << (drop - 1);
        let round_up = rest > half || (rest == half && (sticky || mantissa & 1 == 1));
        if round_up {
            mantissa += 1;
        }
        let exp = msb - keep + 1 + BIT_OFFSET;
        let mut out = compose(mantissa, exp);
        if negative {
            out = -out;
        }
        out
    }
}

fn rel_low_bits_nonzero(limb: u64, below: i64) -> bool {
    if below <= 0 {
        return false;
    }
    if below >= 64 {
        return limb != 0;
    }
    limb & ((1u64 << below) - 1) != 0
}

/// mantissa * 2^exp with exact power-of-two scaling.
fn compose(mantissa: u64, exp: i64) -> f64 {
    let mut v = mantissa as f64;
    let mut e = exp;
    while e > 0 {
        let step = e.min(1000);
        v *= pow2(step);
        e -= step;
    }
    while e < 0 {
        let step = (-e).min(1000);
        v /= pow2(step);
        e += step;
    }
    v
}

fn pow2(k: i64) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((1023 + k) as u64) << 52)
}

/// Exact sum of a slice; result depends only on the multiset of values.
pub fn exact_sum(values: &[f64]) -> f64 {
    let mut acc = ExactAcc::new();
    for &v in values {
        acc.add(v);
    }
    acc.round()
}

/// Per-coordinate exact mean of equal-length rows; `None` when there are no rows.
pub fn exact_mean_rows<'a, I>(rows: I, dim: usize) -> Option<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut accs: Vec<ExactAcc> = vec![ExactAcc::new(); dim];
    let mut n = 0u64;
    for row in rows {
        assert_eq!(row.len(), dim, "row length mismatch in exact_mean_rows");
        for (acc, &v) in accs.iter_mut().zip(row) {
            acc.add(v);
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    Some(accs.iter().map(|a| a.round() / n as f64).collect())
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a base seed and a path of tags.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &p in parts {
        s = splitmix64(s ^ p.wrapping_mul(0xD6E8FEB86659FD93));
    }
    s
}

/// Units-in-last-place distance between two finite f64 values.
pub fn ulp_diff(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let to_ordinal = |x: f64| -> i64 {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN.wrapping_add(bits.wrapping_neg())
        } else {
            bits
        }
    };
    to_ordinal(a).abs_diff(to_ordinal(b))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm_sq(a).sqrt();
    let nb = norm_sq(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::prelude::*;

    #[test]
    fn sums_small_integers_exactly() {
        let vals = [1.0, 2.0, 3.0, -4.0, 0.5];
        assert_eq!(exact_sum(&vals), 2.5);
    }

    #[test]
    fn cancellation_is_exact() {
        // Naive summation loses the 1.0 here.
        let vals = [1e200, 1.0, -1e200];
        assert_eq!(exact_sum(&vals), 1.0);
        let naive: f64 = vals.iter().sum();
        assert_eq!(naive, 0.0);
    }

    #[test]
    fn matches_i128_oracle_on_scaled_integers() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let vals: Vec<i64> =
                (0..50).map(|_| rng.gen_range(-1_000_000..1_000_000)).collect();
            let floats: Vec<f64> = vals.iter().map(|&v| v as f64 / 1024.0).collect();
            let exact: i128 = vals.iter().map(|&v| v as i128).sum();
            assert_eq!(exact_sum(&floats), exact as f64 / 1024.0);
        }
    }

    #[test]
    fn subnormal_and_huge_inputs_round_trip() {
        assert_eq!(exact_sum(&[f64::from_bits(1)]), f64::from_bits(1));
        assert_eq!(exact_sum(&[f64::MAX]), f64::MAX);
        assert_eq!(exact_sum(&[f64::MAX, f64::MAX]), f64::INFINITY);
        assert_eq!(exact_sum(&[-f64::MAX, -f64::MAX]), f64::NEG_INFINITY);
        assert_eq!(exact_sum(&[f64::MAX, -f64::MAX]), 0.0);
    }

    #[test]
    fn single_value_round_trips() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..1000 {
            let v: f64 = rng.gen_range(-1e12..1e12) * 2f64.powi(rng.gen_range(-500..500));
            assert_eq!(exact_sum(&[v]), v, "value {v:e}");
        }
    }

    #[test]
    fn mean_rows_matches_scalar_mean() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![3.0, 5.0], vec![5.0, 8.0]];
        let mean = exact_mean_rows(rows.iter().map(|r| r.as_slice()), 2).unwrap();
        assert_eq!(mean, vec![3.0, 5.0]);
        assert!(exact_mean_rows(std::iter::empty(), 2).is_none());
    }

    #[test]
    fn ulp_diff_basics() {
        assert_eq!(ulp_diff(1.0, 1.0), 0);
        assert_eq!(ulp_diff(1.0, 1.0 + f64::EPSILON), 1);
        assert_eq!(ulp_diff(-0.0, 0.0), 0);
        assert!(ulp_diff(1.0, -1.0) > 1u64 << 60);
    }

    proptest! {
        #[test]
        fn permutation_invariant(
            vals in proptest::collection::vec(-1e100f64..1e100, 1..60),
            seed in 0u64..1000,
        ) {
            let mut shuffled = vals.clone();
            shuffled.shuffle(&mut StdRng::seed_from_u64(seed));
            prop_assert_eq!(exact_sum(&vals).to_bits(), exact_sum(&shuffled).to_bits());
        }

        #[test]
        fn duplication_doubles(vals in proptest::collection::vec(-1e100f64..1e100, 1..40)) {
            let mut doubled = Vec::with_capacity(vals.len() * 2);
            for &v in &vals {
                doubled.push(v);
                doubled.push(v);
            }
            let s = exact_sum(&vals);
            prop_assert_eq!((2.0 * s).to_bits(), exact_sum(&doubled).to_bits());
        }

        #[test]
        fn agrees_with_naive_on_benign_data(vals in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            let naive: f64 = vals.iter().sum();
            let exact = exact_sum(&vals);
            prop_assert!(ulp_diff(naive, exact) <= vals.len() as u64);
        }
    }
}
