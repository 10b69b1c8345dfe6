use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Patient-level train/val/test assignment (`split.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl SplitAssignment {
    pub fn split_of(&self, patient: &str) -> Option<Split> {
        let has = |v: &[String]| v.iter().any(|p| p == patient);
        if has(&self.train) {
            Some(Split::Train)
        } else if has(&self.val) {
            Some(Split::Val)
        } else if has(&self.test) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

pub fn validate_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::Config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

/// Shuffles the distinct patients by seed and cuts them into train/val/test.
/// Train and val sizes are floored; test takes the remainder.
pub fn split_by_patient<S: AsRef<str>>(
    patient_ids: &[S],
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    validate_fractions(fractions)?;
    let distinct: BTreeSet<&str> = patient_ids.iter().map(AsRef::as_ref).collect();
    if distinct.len() < 3 {
        return Err(Error::Split(format!(
            "{} distinct patients cannot fill three splits",
            distinct.len()
        )));
    }
    let mut patients: Vec<String> = distinct.into_iter().map(str::to_owned).collect();
    patients.shuffle(&mut rng_for(seed, "patient-split", 0));
    let n = patients.len() as f64;
    let n_train = (n * fractions[0] + 1e-9).floor() as usize;
    let n_val = (n * fractions[1] + 1e-9).floor() as usize;
    let test = patients.split_off(n_train + n_val);
    let val = patients.split_off(n_train);
    Ok(SplitAssignment {
        seed,
        train: patients,
        val,
        test,
    })
}
