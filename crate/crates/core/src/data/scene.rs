//! Scenes of coloured shapes and their rasterisation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::BBox;

pub const BACKGROUND: f64 = 0.5;
pub const MIN_SIZE: usize = 8;
pub const MAX_SIZE: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.word() == w)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
    Cyan,
    White,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
        Color::Cyan,
        Color::White,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
            Color::Cyan => "cyan",
            Color::White => "white",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.word() == w)
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 0.8, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
            Color::Purple => [0.6, 0.0, 0.8],
            Color::Orange => [1.0, 0.55, 0.0],
            Color::Cyan => [0.0, 1.0, 1.0],
            Color::White => [1.0, 1.0, 1.0],
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

/// A shape inscribed in the pixel square `[x0, x0+size) × [y0, y0+size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Object {
    pub shape: Shape,
    pub color: Color,
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
}

impl Object {
    /// Centre in half-pixel units, exact in integers.
    pub fn center2(&self) -> (usize, usize) {
        (2 * self.x0 + self.size, 2 * self.y0 + self.size)
    }

    /// Whether the pixel `(px, py)` is covered, sampled at the pixel centre.
    pub fn covers(&self, px: usize, py: usize) -> bool {
        if px < self.x0 || py < self.y0 || px >= self.x0 + self.size || py >= self.y0 + self.size {
            return false;
        }
        // Work in doubled coordinates so pixel centres are integers.
        let s = self.size as i64;
        let dx = 2 * (px - self.x0) as i64 + 1 - s;
        let dy = 2 * (py - self.y0) as i64 + 1 - s;
        match self.shape {
            Shape::Square => true,
            Shape::Circle => dx * dx + dy * dy <= s * s,
            // Apex at the top centre, base along the bottom row.
            Shape::Triangle => dx.abs() <= (py - self.y0) as i64 + 1,
        }
    }

    pub fn mask_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for py in self.y0..self.y0 + self.size {
            for px in self.x0..self.x0 + self.size {
                if self.covers(px, py) {
                    b = Some(match b {
                        None => (px, py, px, py),
                        Some((a, c, d, e)) => (a.min(px), c.min(py), d.max(px), e.max(py)),
                    });
                }
            }
        }
        b
    }

    /// Tight normalised box of the rasterised mask.
    pub fn bbox(&self, height: usize, width: usize) -> BBox {
        let (x0, y0, x1, y1) = self.mask_bounds().expect("objects cover at least one pixel");
        let (w, h) = (width as f64, height as f64);
        BBox {
            x: (x0 + x1 + 1) as f64 / (2.0 * w),
            y: (y0 + y1 + 1) as f64 / (2.0 * h),
            w: (x1 + 1 - x0) as f64 / w,
            h: (y1 + 1 - y0) as f64 / h,
        }
    }

    fn separated(&self, o: &Object) -> bool {
        self.x0 + self.size < o.x0
            || o.x0 + o.size < self.x0
            || self.y0 + self.size < o.y0
            || o.y0 + o.size < self.y0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub objects: Vec<Object>,
}

impl SceneSpec {
    /// 2 to 4 objects with pairwise separated bounding squares, which keeps
    /// every object fully visible.
    pub fn sample(rng: &mut impl Rng, height: usize, width: usize) -> Result<Self> {
        if height < 2 * MAX_SIZE || width < 2 * MAX_SIZE {
            return Err(Error::Config(format!("canvas {height}x{width} is too small for scenes")));
        }
        loop {
            let n = rng.random_range(2..=4);
            let mut objects: Vec<Object> = Vec::with_capacity(n);
            for _ in 0..100 {
                if objects.len() == n {
                    break;
                }
                let size = rng.random_range(MIN_SIZE..=MAX_SIZE);
                let o = Object {
                    shape: Shape::ALL[rng.random_range(0..3)],
                    color: Color::ALL[rng.random_range(0..8)],
                    x0: rng.random_range(0..=width - size),
                    y0: rng.random_range(0..=height - size),
                    size,
                };
                if objects.iter().all(|p| p.separated(&o)) {
                    objects.push(o);
                }
            }
            if objects.len() == n {
                return Ok(Self { height, width, objects });
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.objects.len()) {
            return Err(Error::Input(format!("scene has {} objects", self.objects.len())));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.size == 0 || o.x0 + o.size > self.width || o.y0 + o.size > self.height {
                return Err(Error::Input(format!("object {i} leaves the canvas")));
            }
            for p in &self.objects[..i] {
                let (a, b) = (o.center2(), p.center2());
                let d2 = (a.0 as f64 - b.0 as f64).powi(2) + (a.1 as f64 - b.1 as f64).powi(2);
                let r = o.size.max(p.size) as f64; // radius in half-pixel units
                if d2.sqrt() < r {
                    return Err(Error::Input(format!("object {i} sits too close to another")));
                }
            }
        }
        Ok(())
    }

    pub fn render(&self) -> Image {
        let mut img = Image::filled(self.height, self.width, BACKGROUND);
        for o in &self.objects {
            let rgb = o.color.rgb();
            for py in o.y0..o.y0 + o.size {
                for px in o.x0..o.x0 + o.size {
                    if o.covers(px, py) {
                        img.set(py, px, rgb);
                    }
                }
            }
        }
        img
    }
}

/// Row-major `H × W × 3` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![v; height * width * 3],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn square_pixel_count_and_background() {
        let scene = SceneSpec {
            height: 32,
            width: 32,
            objects: vec![Object {
                shape: Shape::Square,
                color: Color::Red,
                x0: 12,
                y0: 12,
                size: 8,
            }],
        };
        let img = scene.render();
        let red = (0..32)
            .flat_map(|y| (0..32).map(move |x| (y, x)))
            .filter(|&(y, x)| img.get(y, x) == [1.0, 0.0, 0.0])
            .count();
        assert_eq!(red, 64);
        for y in 0..12 {
            for x in 0..32 {
                assert_eq!(img.get(y, x), [BACKGROUND; 3]);
            }
        }
        assert_eq!(img, scene.render());
    }

    #[test]
    fn masks_fill_their_square_tightly() {
        for shape in Shape::ALL {
            for size in MIN_SIZE..=MAX_SIZE {
                let o = Object {
                    shape,
                    color: Color::Blue,
                    x0: 3,
                    y0: 5,
                    size,
                };
                let (x0, y0, x1, y1) = o.mask_bounds().unwrap();
                assert_eq!((y0, y1), (5, 5 + size - 1), "{shape:?} {size}");
                assert!(x1 + 1 - x0 >= size - 1, "{shape:?} {size}");
                let b = o.bbox(32, 32);
                assert!(b.is_valid());
            }
        }
    }

    #[test]
    fn triangle_widens_downwards() {
        let o = Object {
            shape: Shape::Triangle,
            color: Color::Green,
            x0: 0,
            y0: 0,
            size: 10,
        };
        let widths: Vec<usize> = (0..10).map(|y| (0..10).filter(|&x| o.covers(x, y)).count()).collect();
        assert!(widths.windows(2).all(|w| w[0] <= w[1]), "{widths:?}");
        assert!(widths[0] >= 1 && widths[9] >= 9);
    }

    #[test]
    fn sampled_scenes_are_valid() {
        let mut rng = stream_rng(1, Stream::TrainSplit, 0);
        for _ in 0..200 {
            let s = SceneSpec::sample(&mut rng, 32, 32).unwrap();
            s.validate().unwrap();
        }
    }
}
