use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ScarfError;
use crate::training::StopReason;

/// Label regime of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// All training labels.
    #[default]
    Full,
    /// 30% of training labels redrawn uniformly over the classes.
    Noise30,
    /// 25% of training rows keep their labels.
    Semi25,
}

impl Setting {
    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Full => "full",
            Setting::Noise30 => "noise30",
            Setting::Semi25 => "semi25",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = ScarfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Setting::Full),
            "noise30" => Ok(Setting::Noise30),
            "semi25" => Ok(Setting::Semi25),
            other => Err(ScarfError::Config(format!(
                "unknown setting '{other}' (expected full, noise30 or semi25)"
            ))),
        }
    }
}

/// One line of the results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub dataset_id: String,
    pub method: String,
    pub setting: Setting,
    pub trial: usize,
    pub seed: u64,
    pub test_accuracy: f64,
    /// Fine-tuning epochs of the final model.
    pub epochs_used: usize,
    pub stop_reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_stop_reason: Option<StopReason>,
}

impl MethodRun {
    pub fn key(&self) -> RunKey {
        RunKey {
            dataset_id: self.dataset_id.clone(),
            method: self.method.clone(),
            setting: self.setting,
            trial: self.trial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub dataset_id: String,
    pub method: String,
    pub setting: Setting,
    pub trial: usize,
}

/// Wall-clock time of a run, kept apart from the results so that those stay
/// reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    #[serde(flatten)]
    pub key: RunKey,
    pub wall_time: f64,
}

/// A run that raised an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    #[serde(flatten)]
    pub key: RunKey,
    pub seed: u64,
    pub error: String,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed shared by every method in one trial of one dataset.
pub fn trial_seed(base_seed: u64, dataset_id: &str, trial: usize) -> u64 {
    let h = splitmix64(base_seed ^ fnv1a(dataset_id.as_bytes()));
    splitmix64(h ^ splitmix64(trial as u64))
}

/// Independent sub-seed of `seed` for a named purpose.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    splitmix64(seed ^ fnv1a(purpose.as_bytes()))
}
