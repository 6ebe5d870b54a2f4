//! Stratified train/val/test fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Fold, PartDataset, SampleSource};
use crate::rng::derive_seed;

/// Fold fractions. The bundled default is 0.81/0.09/0.10.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.81,
            val: 0.09,
            test: 0.10,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), DataError> {
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 || self.train < 0.0 || self.val < 0.0 || self.test < 0.0 {
            return Err(DataError::BadRatios([self.train, self.val, self.test]));
        }
        Ok(())
    }
}

/// Assign folds stratified per part class.
///
/// Only kept, non-augmented samples are eligible for val/test; augmented
/// kept samples always land in train. Per-class counts are rounded, so fold
/// ratios hold within one sample per class. Deterministic under the seed.
pub fn split(ds: PartDataset, ratios: SplitRatios, seed: u64) -> Result<PartDataset, DataError> {
    ratios.validate()?;
    let mut ds = ds;
    ds.clear_folds();

    let parts = ds.parts.clone();
    for part in &parts {
        let mut ids: Vec<String> = ds
            .kept()
            .filter(|s| s.label == *part && s.source != SampleSource::Augment)
            .map(|s| s.origin_id.clone())
            .collect();
        if ids.len() < 3 {
            return Err(DataError::ClassTooSmall {
                part: part.clone(),
                count: ids.len(),
            });
        }
        ids.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "split", crate::rng::hash_label(part)));
        ids.shuffle(&mut rng);

        let n = ids.len();
        let mut n_test = (ratios.test * n as f64).round() as usize;
        let mut n_val = (ratios.val * n as f64).round() as usize;
        // Rounding may not leave room for train; shave val first, then test.
        while n_test + n_val > n {
            if n_val > 0 {
                n_val -= 1;
            } else {
                n_test -= 1;
            }
        }
        for (i, id) in ids.iter().enumerate() {
            let fold = if i < n_test {
                Fold::Test
            } else if i < n_test + n_val {
                Fold::Val
            } else {
                Fold::Train
            };
            ds.set_fold(id, fold);
        }
    }
    // Augmented kept samples train only.
    let augmented: Vec<String> = ds
        .kept()
        .filter(|s| s.source == SampleSource::Augment)
        .map(|s| s.origin_id.clone())
        .collect();
    for id in augmented {
        ds.set_fold(&id, Fold::Train);
    }
    Ok(ds)
}

impl PartDataset {
    /// See [`split`].
    pub fn split(self, ratios: SplitRatios, seed: u64) -> Result<PartDataset, DataError> {
        split(self, ratios, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::testutil::noise_image;
    use crate::datakit::{ImageSample, SampleFlag};

    fn dataset(n: usize) -> PartDataset {
        let mut ds = PartDataset::new("h", vec!["p".into()]);
        for i in 0..n {
            ds.push(ImageSample::new(
                noise_image(4, 4, i as u64),
                "p",
                SampleSource::Crop,
                &format!("s{i:03}"),
            ))
            .unwrap();
        }
        ds
    }

    #[test]
    fn hundred_samples_default_ratios() {
        let ds = dataset(100).split(SplitRatios::default(), 9).unwrap();
        let train = ds.in_fold(Fold::Train).count();
        let val = ds.in_fold(Fold::Val).count();
        let test = ds.in_fold(Fold::Test).count();
        assert_eq!((train, val, test), (81, 9, 10));
    }

    #[test]
    fn all_train_ratios() {
        let ratios = SplitRatios {
            train: 1.0,
            val: 0.0,
            test: 0.0,
        };
        let ds = dataset(10).split(ratios, 3).unwrap();
        assert_eq!(ds.in_fold(Fold::Train).count(), 10);
        assert_eq!(ds.in_fold(Fold::Val).count(), 0);
        assert_eq!(ds.in_fold(Fold::Test).count(), 0);
    }

    #[test]
    fn same_seed_same_assignment() {
        let a = dataset(40).split(SplitRatios::default(), 77).unwrap();
        let b = dataset(40).split(SplitRatios::default(), 77).unwrap();
        for s in a.samples() {
            assert_eq!(a.fold(&s.origin_id), b.fold(&s.origin_id));
        }
        let c = dataset(40).split(SplitRatios::default(), 78).unwrap();
        let moved = a
            .samples()
            .iter()
            .filter(|s| a.fold(&s.origin_id) != c.fold(&s.origin_id))
            .count();
        assert!(moved > 0, "different seed should shuffle differently");
    }

    #[test]
    fn flagged_and_augmented_samples_are_handled() {
        let mut ds = dataset(20);
        ds.set_flag("s000", SampleFlag::Duplicate);
        ds.set_flag("s001", SampleFlag::Outlier);
        ds.push(ImageSample::new(
            noise_image(4, 4, 99),
            "p",
            SampleSource::Augment,
            "aug0",
        ))
        .unwrap();
        let ds = ds.split(SplitRatios::default(), 5).unwrap();
        assert_eq!(ds.fold("s000"), None);
        assert_eq!(ds.fold("s001"), None);
        assert_eq!(ds.fold("aug0"), Some(Fold::Train));
        // Folds partition the kept originals.
        let assigned = ds.in_fold(Fold::Train).count()
            + ds.in_fold(Fold::Val).count()
            + ds.in_fold(Fold::Test).count();
        assert_eq!(assigned, 19); // 18 kept originals + 1 augment
    }

    #[test]
    fn tiny_class_is_an_error() {
        let err = dataset(2).split(SplitRatios::default(), 1).unwrap_err();
        assert!(matches!(err, DataError::ClassTooSmall { .. }));
    }

    #[test]
    fn bad_ratios_rejected() {
        let err = dataset(10)
            .split(
                SplitRatios {
                    train: 0.5,
                    val: 0.2,
                    test: 0.2,
                },
                1,
            )
            .unwrap_err();
        assert!(matches!(err, DataError::BadRatios(_)));
    }
}
