//! Seeded synthetic referring-expression task.
//!
//! Each sample is a small canvas of coloured shapes, an expression that
//! singles out exactly one of them, and that object's tight box. Sample `i`
//! of a split draws from its own random stream, so any subset of a dataset
//! can be regenerated independently.

mod expr;
mod format;
mod scene;
pub mod vocab;

pub use expr::{Desc, Expr, Extreme, Relation, Template};
pub use format::{decode_samples, encode_samples, load_samples, save_samples, DATASET_MAGIC, DATASET_VERSION};
pub use scene::{Color, Image, Object, SceneSpec, Shape, BACKGROUND};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::BBox;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub template: Template,
    pub tokens: Vec<usize>,
    pub scene: SceneSpec,
    /// Index of the referred object in `scene.objects`.
    pub target: usize,
    pub gt: BBox,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn stream(self) -> Stream {
        match self {
            Split::Train => Stream::TrainSplit,
            Split::Val => Stream::ValSplit,
        }
    }
}

pub const CANVAS: usize = 32;

pub fn generate_dataset(seed: u64, n_train: usize, n_val: usize) -> Result<Dataset> {
    if n_train == 0 || n_val == 0 {
        return Err(Error::Config("dataset splits need at least one sample".into()));
    }
    Ok(Dataset {
        train: generate_split(seed, Split::Train, n_train)?,
        val: generate_split(seed, Split::Val, n_val)?,
    })
}

pub fn generate_split(seed: u64, split: Split, n: usize) -> Result<Vec<Sample>> {
    (0..n).map(|i| generate_sample(seed, split, i)).collect()
}

/// Templates cycle with the sample index, so every split is balanced.
pub fn generate_sample(seed: u64, split: Split, index: usize) -> Result<Sample> {
    let mut rng = stream_rng(seed, split.stream(), index as u64);
    let template = Template::ALL[index % 3];
    loop {
        let scene = SceneSpec::sample(&mut rng, CANVAS, CANVAS)?;
        for _ in 0..20 {
            if let Some((expr, target)) = propose(&mut rng, &scene, template) {
                let tokens = expr.tokens();
                debug_assert_eq!(Expr::parse(&tokens).ok(), Some(expr));
                let gt = scene.objects[target].bbox(scene.height, scene.width);
                let image = scene.render();
                return Ok(Sample {
                    template,
                    tokens,
                    scene,
                    target,
                    gt,
                    image,
                });
            }
        }
    }
}

fn descs_for(rng: &mut impl Rng, o: &Object) -> Vec<Desc> {
    let mut v = vec![
        Desc { color: Some(o.color), shape: Some(o.shape) },
        Desc { color: Some(o.color), shape: None },
        Desc { color: None, shape: Some(o.shape) },
    ];
    v.shuffle(rng);
    v
}

/// One attempt at an expression of the given kind with a unique referent.
fn propose(rng: &mut impl Rng, scene: &SceneSpec, template: Template) -> Option<(Expr, usize)> {
    let objs = &scene.objects;
    let unique = |e: &Expr| match e.referents(scene)[..] {
        [t] => Some(t),
        _ => None,
    };
    match template {
        Template::Attribute => {
            let t = rng.random_range(0..objs.len());
            descs_for(rng, &objs[t])
                .into_iter()
                .map(Expr::Attribute)
                .find_map(|e| (unique(&e) == Some(t)).then_some((e, t)))
        }
        Template::Relation => {
            let t = rng.random_range(0..objs.len());
            let mut a = rng.random_range(0..objs.len() - 1);
            if a >= t {
                a += 1;
            }
            let holding: Vec<Relation> = Relation::ALL
                .into_iter()
                .filter(|r| r.holds(&objs[t], &objs[a]))
                .collect();
            let relation = *holding.get(rng.random_range(0..holding.len()))?;
            let mut targets = descs_for(rng, &objs[t]);
            targets.push(Desc { color: None, shape: None });
            // Prefer the least specific target phrase so the relation matters.
            targets.sort_by_key(|d| d.color.is_some() as u8 + d.shape.is_some() as u8);
            let anchors = descs_for(rng, &objs[a]);
            for target in &targets {
                for anchor in &anchors {
                    let e = Expr::Relation {
                        target: *target,
                        relation,
                        anchor: *anchor,
                    };
                    if unique(&e) == Some(t) {
                        return Some((e, t));
                    }
                }
            }
            None
        }
        Template::Superlative => {
            let extreme = Extreme::ALL[rng.random_range(0..4)];
            let o = &objs[rng.random_range(0..objs.len())];
            let target = match rng.random_range(0..3) {
                0 => Desc { color: None, shape: None },
                1 => Desc { color: None, shape: Some(o.shape) },
                _ => Desc { color: Some(o.color), shape: None },
            };
            let e = Expr::Superlative { extreme, target };
            unique(&e).map(|t| (e, t))
        }
    }
}
