use std::fmt;
use std::str::FromStr;

use crate::error::ScarfError;
use crate::training::AutoencoderVariant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pretraining {
    Scarf,
    Autoencoder(AutoencoderVariant),
    Discriminative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wrapper {
    SelfTrain,
    TriTrain,
    Distill,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cotraining {
    Contrastive,
    Autoencoder,
}

/// A method is a `+`-joined list of components, e.g. `scarf+self_train`.
/// `control` alone is plain supervised training.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Method {
    pub name: String,
    pub pretraining: Option<Pretraining>,
    pub label_smoothing: bool,
    pub dropout: bool,
    pub mixup: bool,
    pub scarf_augmentation: bool,
    pub wrapper: Option<Wrapper>,
    pub cotraining: Option<Cotraining>,
}

pub const COMPONENTS: [&str; 15] = [
    "control",
    "scarf",
    "scarf_ae",
    "add_noise_ae",
    "no_noise_ae",
    "scarf_disc",
    "scarf_aug",
    "label_smoothing",
    "dropout",
    "mixup",
    "distill",
    "self_train",
    "tri_train",
    "cotrain",
    "cotrain_ae",
];

impl Method {
    pub fn control() -> Self {
        "control".parse().expect("control parses")
    }

    pub fn needs_decoder(&self) -> bool {
        matches!(self.pretraining, Some(Pretraining::Autoencoder(_))) || self.cotraining == Some(Cotraining::Autoencoder)
    }

    pub fn needs_discriminator(&self) -> bool {
        self.pretraining == Some(Pretraining::Discriminative)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for Method {
    type Err = ScarfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut m = Method {
            name: s.trim().to_string(),
            pretraining: None,
            label_smoothing: false,
            dropout: false,
            mixup: false,
            scarf_augmentation: false,
            wrapper: None,
            cotraining: None,
        };
        let name = m.name.clone();
        let parts: Vec<&str> = name.split('+').map(str::trim).collect();
        let conflict = |what: &str| ScarfError::Config(format!("method '{s}' combines more than one {what}"));
        for part in &parts {
            let pre = |p: Pretraining, m: &mut Method| {
                if m.pretraining.replace(p).is_some() {
                    Err(conflict("pre-training"))
                } else {
                    Ok(())
                }
            };
            let wrap = |w: Wrapper, m: &mut Method| {
                if m.wrapper.replace(w).is_some() {
                    Err(conflict("semi-supervised wrapper"))
                } else {
                    Ok(())
                }
            };
            match *part {
                "control" if parts.len() == 1 => {}
                "control" => {
                    return Err(ScarfError::Config(format!("'control' cannot be combined, got '{s}'")));
                }
                "scarf" => pre(Pretraining::Scarf, &mut m)?,
                "scarf_ae" => pre(Pretraining::Autoencoder(AutoencoderVariant::ScarfCorruption), &mut m)?,
                "add_noise_ae" => pre(Pretraining::Autoencoder(AutoencoderVariant::AdditiveNoise), &mut m)?,
                "no_noise_ae" => pre(Pretraining::Autoencoder(AutoencoderVariant::NoNoise), &mut m)?,
                "scarf_disc" => pre(Pretraining::Discriminative, &mut m)?,
                "scarf_aug" => m.scarf_augmentation = true,
                "label_smoothing" => m.label_smoothing = true,
                "dropout" => m.dropout = true,
                "mixup" => m.mixup = true,
                "distill" => wrap(Wrapper::Distill, &mut m)?,
                "self_train" => wrap(Wrapper::SelfTrain, &mut m)?,
                "tri_train" => wrap(Wrapper::TriTrain, &mut m)?,
                "cotrain" | "cotrain_ae" => {
                    let c = if *part == "cotrain" { Cotraining::Contrastive } else { Cotraining::Autoencoder };
                    if m.cotraining.replace(c).is_some() {
                        return Err(conflict("co-training objective"));
                    }
                }
                other => {
                    return Err(ScarfError::Config(format!(
                        "unknown method component '{other}' (known: {})",
                        COMPONENTS.join(", ")
                    )))
                }
            }
        }
        if m.cotraining.is_some() && m.wrapper.is_some() {
            return Err(ScarfError::Config(format!(
                "method '{s}': co-training cannot be combined with a semi-supervised wrapper"
            )));
        }
        Ok(m)
    }
}
