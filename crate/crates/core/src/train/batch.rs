use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Splits items into batches of equal bucket key (e.g. sentence count).
/// Items are shuffled within each bucket, each bucket is cut into batches of
/// at most `batch_size`, and the batch order is shuffled. `seed` should
/// differ per epoch (see [`epoch_seed`]).
pub fn bucket_batches(keys: &[usize], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if keys.is_empty() {
        return Err(Error::Input("cannot batch an empty dataset".into()));
    }
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &k) in keys.iter().enumerate() {
        buckets.entry(k).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batches = Vec::new();
    for items in buckets.values_mut() {
        items.shuffle(&mut rng);
        batches.extend(items.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    mix_seed(seed, epoch as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_keys_form_one_bucket() {
        let b = bucket_batches(&[3; 10], 4, 1).unwrap();
        let sizes: Vec<usize> = b.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 10);
        assert_eq!(sizes.iter().filter(|&&s| s == 4).count(), 2);
    }

    #[test]
    fn small_example() {
        let mut b = bucket_batches(&[1, 1, 2], 2, 5).unwrap();
        for x in &mut b {
            x.sort();
        }
        b.sort();
        assert_eq!(b, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn errors() {
        assert!(matches!(bucket_batches(&[], 2, 0), Err(Error::Input(_))));
        assert!(matches!(bucket_batches(&[1], 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn epochs_reshuffle() {
        let keys = vec![0; 40];
        assert_ne!(
            bucket_batches(&keys, 4, epoch_seed(9, 0)).unwrap(),
            bucket_batches(&keys, 4, epoch_seed(9, 1)).unwrap()
        );
        assert_eq!(
            bucket_batches(&keys, 4, epoch_seed(9, 3)).unwrap(),
            bucket_batches(&keys, 4, epoch_seed(9, 3)).unwrap()
        );
    }
}
