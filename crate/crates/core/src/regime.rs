//! Tuning regimes: which parameter groups train and how adapters attach.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapters::InsertionForm;
use crate::autograd::ParamGroup;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Full,
    FrozenVlOnly,
    AdapterSequential,
    AdapterParallel,
    SideM2ist,
    Lora,
    SideM2istPlusLora,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 7] = [
        Self::Full,
        Self::FrozenVlOnly,
        Self::AdapterSequential,
        Self::AdapterParallel,
        Self::SideM2ist,
        Self::Lora,
        Self::SideM2istPlusLora,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::FrozenVlOnly => "frozen_vl_only",
            Self::AdapterSequential => "adapter_sequential",
            Self::AdapterParallel => "adapter_parallel",
            Self::SideM2ist => "side_m2ist",
            Self::Lora => "lora",
            Self::SideM2istPlusLora => "side_m2ist_plus_lora",
        }
    }

    /// The insertion form this regime wires adapters with, if it has any.
    pub fn adapter_form(self) -> Option<InsertionForm> {
        match self {
            Self::AdapterSequential => Some(InsertionForm::Sequential),
            Self::AdapterParallel => Some(InsertionForm::Parallel),
            Self::SideM2ist | Self::SideM2istPlusLora => Some(InsertionForm::Side),
            Self::Full | Self::FrozenVlOnly | Self::Lora => None,
        }
    }

    pub fn uses_lora(self) -> bool {
        matches!(self, Self::Lora | Self::SideM2istPlusLora)
    }

    pub fn trains(self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Fusion | ParamGroup::Head => true,
            ParamGroup::VisionEncoder | ParamGroup::LanguageEncoder => self == Self::Full,
            ParamGroup::Adapter => self.adapter_form().is_some(),
            ParamGroup::Lora => self.uses_lora(),
        }
    }

    /// Encoder outputs are constants of the trainable parameters, so they
    /// can be computed once per sample and reused.
    pub fn encoders_constant(self) -> bool {
        matches!(self, Self::FrozenVlOnly | Self::SideM2ist)
    }

    /// Resolves the insertion form against an explicitly requested one.
    pub fn resolve_form(self, requested: Option<InsertionForm>) -> Result<Option<InsertionForm>> {
        match (self.adapter_form(), requested) {
            (own, None) => Ok(own),
            (Some(own), Some(req)) if own == req => Ok(Some(own)),
            (own, Some(req)) => Err(Error::Config(format!(
                "regime {self} cannot use the {req} insertion form (it uses {})",
                own.map_or("no adapters".to_string(), |f| format!("the {f} form"))
            ))),
        }
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegimeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|r| r.name()).collect();
            Error::Config(format!("unknown regime `{s}` (expected one of {})", names.join(", ")))
        })
    }
}
