//! Ablation axes and their configuration variants.

use std::fmt;
use std::str::FromStr;

use crate::adapters::{format_positions, Components, InsertionForm, Mixing};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::regime::RegimeKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Components,
    Mixing,
    Form,
    Positions,
    Density,
    InteractionWidth,
}

impl Axis {
    pub const ALL: [Axis; 6] = [
        Axis::Components,
        Axis::Mixing,
        Axis::Form,
        Axis::Positions,
        Axis::Density,
        Axis::InteractionWidth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Components => "components",
            Axis::Mixing => "mixing",
            Axis::Form => "form",
            Axis::Positions => "positions",
            Axis::Density => "density",
            Axis::InteractionWidth => "c_i",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Axis::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown ablation axis `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Labelled configurations along one axis, everything else taken from `base`.
///
/// | axis        | variants                                                   |
/// |-------------|------------------------------------------------------------|
/// | components  | none, lea, vea, lea+vea, iea, lea+vea+iea                  |
/// | mixing      | the four attention/feed-forward assignments                |
/// | form        | sequential, parallel and side insertion                    |
/// | positions   | vision 1..n_v with language 1..n_v, odd layers, last n_v   |
/// | density     | n/3, 2n/3 and n evenly spaced pairs                        |
/// | c_i         | min(c_v, c_l) / 4, / 2 and / 1                             |
pub fn variants(axis: Axis, base: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
    if axis != Axis::Form && base.regime().adapter_form().is_none() {
        return Err(Error::Config(format!(
            "regime {} has no adapters to ablate along `{axis}`",
            base.regime()
        )));
    }
    let with = |label: String, f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        (label, c)
    };
    let m = &base.model;
    let out: Vec<(String, RunConfig)> = match axis {
        Axis::Components => Components::ablation_rows()
            .into_iter()
            .map(|comp| with(comp.to_string(), &|c| c.model.adapter.components = comp))
            .collect(),
        Axis::Mixing => Mixing::all()
            .into_iter()
            .map(|mix| with(mix.to_string(), &|c| c.model.adapter.mixing = mix))
            .collect(),
        Axis::Form => [
            (InsertionForm::Sequential, RegimeKind::AdapterSequential),
            (InsertionForm::Parallel, RegimeKind::AdapterParallel),
            (InsertionForm::Side, RegimeKind::SideM2ist),
        ]
        .into_iter()
        .map(|(form, regime)| {
            with(form.to_string(), &|c| {
                c.model.regime = regime;
                c.form = None;
            })
        })
        .collect(),
        Axis::Positions => {
            let (n_v, n_l) = (m.vision.n_layers, m.language.n_layers);
            if n_l < n_v {
                return Err(Error::Config(format!(
                    "position ablation needs at least as many language layers ({n_l}) as vision layers ({n_v})"
                )));
            }
            let vision: Vec<usize> = (1..=n_v).collect();
            let odd: Vec<usize> = (0..n_v).map(|i| 2 * i + 1).filter(|&l| l <= n_l).collect();
            if odd.len() != n_v {
                return Err(Error::Config(format!(
                    "position ablation needs {} language layers for the odd-layer variant",
                    2 * n_v - 1
                )));
            }
            let last: Vec<usize> = (n_l - n_v + 1..=n_l).collect();
            [vision.clone(), odd, last]
                .into_iter()
                .map(|lang| {
                    let label = format!("{} / {}", format_positions(&vision), format_positions(&lang));
                    with(label, &|c| {
                        c.model.adapter.vision_positions = vision.clone();
                        c.model.adapter.language_positions = lang.clone();
                        c.density = None;
                    })
                })
                .collect()
        }
        Axis::Density => {
            let n = m.adapter.n_pairs();
            let mut ks = vec![n / 3, 2 * n / 3, n];
            ks.retain(|&k| k > 0);
            ks.dedup();
            ks.into_iter()
                .map(|k| with(format!("{k} pairs"), &|c| c.density = Some(k)))
                .collect()
        }
        Axis::InteractionWidth => {
            let min = m.vision.channel_dim.min(m.language.channel_dim);
            let mut widths = vec![min / 4, min / 2, min];
            widths.retain(|&w| w > 0);
            widths.dedup();
            widths
                .into_iter()
                .map(|w| with(format!("c_i={w}"), &|c| c.model.adapter.c_i = w))
                .collect()
        }
    };
    for (label, c) in &out {
        c.validate()
            .map_err(|e| Error::Config(format!("ablation variant `{label}`: {e}")))?;
    }
    Ok(out)
}
