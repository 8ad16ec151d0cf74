//! Templated referring expressions, their parser and a reference
//! interpreter that resolves an expression against a scene.

use serde::{Deserialize, Serialize};

use super::scene::{Color, Object, SceneSpec, Shape};
use super::vocab::{self, WORDS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Template {
    Attribute,
    Relation,
    Superlative,
}

impl Template {
    pub const ALL: [Template; 3] = [Template::Attribute, Template::Relation, Template::Superlative];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

/// Noun phrase filter; `None` fields match anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Desc {
    pub color: Option<Color>,
    pub shape: Option<Shape>,
}

impl Desc {
    pub fn matches(&self, o: &Object) -> bool {
        self.color.is_none_or(|c| c == o.color) && self.shape.is_none_or(|s| s == o.shape)
    }

    fn words(&self) -> Vec<&'static str> {
        let mut w = Vec::with_capacity(2);
        if let Some(c) = self.color {
            w.push(c.word());
        }
        w.push(self.shape.map_or("object", Shape::word));
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below];

    /// Strict comparison of centres.
    pub fn holds(self, a: &Object, b: &Object) -> bool {
        let (ax, ay) = a.center2();
        let (bx, by) = b.center2();
        match self {
            Relation::LeftOf => ax < bx,
            Relation::RightOf => ax > bx,
            Relation::Above => ay < by,
            Relation::Below => ay > by,
        }
    }

    fn words(self) -> &'static [&'static str] {
        match self {
            Relation::LeftOf => &["to", "the", "left", "of"],
            Relation::RightOf => &["to", "the", "right", "of"],
            Relation::Above => &["above"],
            Relation::Below => &["below"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Leftmost,
    Rightmost,
    Topmost,
    Bottommost,
}

impl Extreme {
    pub const ALL: [Extreme; 4] = [Extreme::Leftmost, Extreme::Rightmost, Extreme::Topmost, Extreme::Bottommost];

    fn word(self) -> &'static str {
        match self {
            Extreme::Leftmost => "leftmost",
            Extreme::Rightmost => "rightmost",
            Extreme::Topmost => "topmost",
            Extreme::Bottommost => "bottommost",
        }
    }

    /// Key to minimise.
    fn key(self, o: &Object) -> i64 {
        let (x, y) = o.center2();
        match self {
            Extreme::Leftmost => x as i64,
            Extreme::Rightmost => -(x as i64),
            Extreme::Topmost => y as i64,
            Extreme::Bottommost => -(y as i64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expr {
    /// `the <color> <shape>`
    Attribute(Desc),
    /// `the <desc> <relation> the <desc>`
    Relation { target: Desc, relation: Relation, anchor: Desc },
    /// `the <extreme> <desc>`
    Superlative { extreme: Extreme, target: Desc },
}

impl Expr {
    pub fn template(&self) -> Template {
        match self {
            Expr::Attribute(_) => Template::Attribute,
            Expr::Relation { .. } => Template::Relation,
            Expr::Superlative { .. } => Template::Superlative,
        }
    }

    pub fn words(&self) -> Vec<&'static str> {
        let mut w = vec!["the"];
        match self {
            Expr::Attribute(d) => w.extend(d.words()),
            Expr::Relation { target, relation, anchor } => {
                w.extend(target.words());
                w.extend(relation.words());
                w.push("the");
                w.extend(anchor.words());
            }
            Expr::Superlative { extreme, target } => {
                w.push(extreme.word());
                w.extend(target.words());
            }
        }
        w
    }

    pub fn tokens(&self) -> Vec<usize> {
        self.words()
            .into_iter()
            .map(|w| vocab::word_id(w).expect("template words are in the vocabulary"))
            .collect()
    }

    /// Indices of every object the expression can denote.
    pub fn referents(&self, scene: &SceneSpec) -> Vec<usize> {
        let objs = &scene.objects;
        let matching = |d: &Desc| -> Vec<usize> { (0..objs.len()).filter(|&i| d.matches(&objs[i])).collect() };
        match self {
            Expr::Attribute(d) => matching(d),
            Expr::Relation { target, relation, anchor } => {
                let anchors = matching(anchor);
                let [a] = anchors[..] else {
                    return Vec::new();
                };
                matching(target)
                    .into_iter()
                    .filter(|&i| i != a && relation.holds(&objs[i], &objs[a]))
                    .collect()
            }
            Expr::Superlative { extreme, target } => {
                let cand = matching(target);
                let Some(best) = cand.iter().map(|&i| extreme.key(&objs[i])).min() else {
                    return Vec::new();
                };
                cand.into_iter().filter(|&i| extreme.key(&objs[i]) == best).collect()
            }
        }
    }

    /// Parses a token sequence produced by [`Expr::tokens`].
    pub fn parse(tokens: &[usize]) -> Result<Expr> {
        let words = tokens
            .iter()
            .map(|&t| WORDS.get(t).copied().ok_or_else(|| Error::Input(format!("token {t} out of vocabulary"))))
            .collect::<Result<Vec<_>>>()?;
        let mut p = Parser { words: &words, pos: 0 };
        p.expect("the")?;
        let expr = if let Some(extreme) = p.extreme() {
            Expr::Superlative {
                extreme,
                target: p.desc()?,
            }
        } else {
            let target = p.desc()?;
            match p.relation()? {
                None => Expr::Attribute(target),
                Some(relation) => {
                    p.expect("the")?;
                    Expr::Relation {
                        target,
                        relation,
                        anchor: p.desc()?,
                    }
                }
            }
        };
        if p.pos != words.len() {
            return Err(p.error("end of expression"));
        }
        Ok(expr)
    }
}

struct Parser<'a> {
    words: &'a [&'a str],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&str> {
        self.words.get(self.pos).copied()
    }

    fn error(&self, wanted: &str) -> Error {
        Error::Input(format!(
            "expected {wanted} at word {} of `{}`",
            self.pos,
            self.words.join(" ")
        ))
    }

    fn expect(&mut self, w: &str) -> Result<()> {
        if self.peek() == Some(w) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("`{w}`")))
        }
    }

    fn extreme(&mut self) -> Option<Extreme> {
        let e = Extreme::ALL.into_iter().find(|e| Some(e.word()) == self.peek())?;
        self.pos += 1;
        Some(e)
    }

    fn desc(&mut self) -> Result<Desc> {
        let color = self.peek().and_then(Color::from_word);
        if color.is_some() {
            self.pos += 1;
        }
        let shape = match self.peek() {
            Some("object") => None,
            Some(w) => Some(Shape::from_word(w).ok_or_else(|| self.error("a shape or `object`"))?),
            None => return Err(self.error("a shape or `object`")),
        };
        self.pos += 1;
        Ok(Desc { color, shape })
    }

    fn relation(&mut self) -> Result<Option<Relation>> {
        let r = match self.peek() {
            None => return Ok(None),
            Some("above") => Relation::Above,
            Some("below") => Relation::Below,
            Some("to") => {
                self.pos += 1;
                self.expect("the")?;
                let r = match self.peek() {
                    Some("left") => Relation::LeftOf,
                    Some("right") => Relation::RightOf,
                    _ => return Err(self.error("`left` or `right`")),
                };
                self.pos += 1;
                self.expect("of")?;
                return Ok(Some(r));
            }
            Some(_) => return Err(self.error("a relation")),
        };
        self.pos += 1;
        Ok(Some(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(shape: Shape, color: Color, x0: usize, y0: usize) -> Object {
        Object {
            shape,
            color,
            x0,
            y0,
            size: 6,
        }
    }

    fn scene() -> SceneSpec {
        SceneSpec {
            height: 32,
            width: 32,
            objects: vec![
                obj(Shape::Circle, Color::Red, 0, 0),
                obj(Shape::Circle, Color::Blue, 20, 0),
                obj(Shape::Square, Color::Red, 10, 20),
            ],
        }
    }

    #[test]
    fn interpreter_cases() {
        let s = scene();
        let parse = |t: &str| Expr::parse(&vocab::encode(t).unwrap()).unwrap();
        assert_eq!(parse("the red square").referents(&s), vec![2]);
        assert_eq!(parse("the red object").referents(&s), vec![0, 2]);
        assert_eq!(parse("the circle to the left of the red square").referents(&s), vec![0]);
        assert_eq!(parse("the circle above the square").referents(&s), vec![0, 1]);
        assert_eq!(parse("the rightmost circle").referents(&s), vec![1]);
        assert_eq!(parse("the bottommost object").referents(&s), vec![2]);
        // Ambiguous anchor resolves to nothing.
        assert!(parse("the square below the circle").referents(&s).is_empty());
    }

    #[test]
    fn tokens_round_trip_through_parser() {
        let exprs = [
            Expr::Attribute(Desc {
                color: Some(Color::Cyan),
                shape: Some(Shape::Triangle),
            }),
            Expr::Relation {
                target: Desc { color: None, shape: Some(Shape::Square) },
                relation: Relation::RightOf,
                anchor: Desc { color: Some(Color::White), shape: None },
            },
            Expr::Superlative {
                extreme: Extreme::Topmost,
                target: Desc { color: None, shape: None },
            },
        ];
        for e in exprs {
            assert_eq!(Expr::parse(&e.tokens()).unwrap(), e);
        }
    }

    #[test]
    fn malformed_expressions_are_rejected() {
        for t in ["red square", "the", "the red", "the square to the of the circle", "the square square"] {
            let ids = vocab::encode(t).unwrap();
            assert!(Expr::parse(&ids).is_err(), "{t}");
        }
        assert!(Expr::parse(&[99]).is_err());
    }
}
