//! Car intention image: an 84×84 RGB raster of the scene around the ego.
//!
//! The window is 40 m wide, axis aligned and centred on the ego. Row 0 is
//! the top edge (largest `y`). Storage is channel-major (`C × H × W`), the
//! layout the convolution stack consumes. Every primitive is placed relative
//! to the ego before rasterization, so a scene shifted together with the ego
//! renders the same pixels.

use std::path::Path;

use crate::belief::Belief;
use crate::geometry::{Pose, Rect, Vec2};

pub const IMAGE_SIZE: usize = 84;
pub const CHANNELS: usize = 3;
pub const WINDOW_M: f64 = 40.0;
pub const PAST_POSES: usize = 8;
const DOT_RADIUS: f64 = 0.5;
const PATH_SAMPLE: f64 = 0.1;
pub const EGO_LENGTH: f64 = 4.0;
pub const EGO_WIDTH: f64 = 1.8;

const R: usize = 0;
const G: usize = 1;
const B: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct IntentionImage {
    size: usize,
    data: Vec<f32>,
}

impl IntentionImage {
    pub fn zeros(size: usize) -> Self {
        IntentionImage { size, data: vec![0.0; CHANNELS * size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.size + row) * self.size + col]
    }

    fn raise(&mut self, c: usize, row: usize, col: usize, v: f64) {
        let v = v.clamp(0.0, 1.0) as f32;
        let i = (c * self.size + row) * self.size + col;
        if self.data[i] < v {
            self.data[i] = v;
        }
    }

    /// 8-bit RGB dump, value = round(255·v).
    pub fn save_png(&self, path: &Path) -> Result<(), image::ImageError> {
        let n = self.size as u32;
        let img = image::RgbImage::from_fn(n, n, |x, y| {
            let px = |c| (self.get(c, y as usize, x as usize) * 255.0).round() as u8;
            image::Rgb([px(R), px(G), px(B)])
        });
        img.save(path)
    }
}

/// Everything drawn into one image, already gathered from belief and planners.
#[derive(Clone, Debug, Default)]
pub struct RenderInput<'a> {
    pub ego: Pose,
    pub goal: Option<Vec2>,
    pub planned: &'a [Pose],
    /// Oldest first; only the last [`PAST_POSES`] are drawn.
    pub past: &'a [Pose],
    pub predictions: &'a [Vec<Vec2>],
    /// Particle positions with their weights.
    pub hypotheses: &'a [(Vec2, f64)],
    pub obstacles: &'a [Rect],
}

/// Top three particle positions per agent with their weights.
pub fn belief_hypotheses(b: &Belief) -> Vec<(Vec2, f64)> {
    let ranked = b.ranked();
    let mut out = Vec::with_capacity(3 * b.num_agents());
    for i in 0..b.num_agents() {
        for &p in ranked.iter().take(3) {
            out.push((b.particles[p].exo[i].pos, b.particles[p].weight));
        }
    }
    out
}

struct Frame {
    ego: Vec2,
    size: usize,
    px: f64,
}

impl Frame {
    fn new(ego: Vec2, size: usize) -> Self {
        Frame { ego, size, px: WINDOW_M / size as f64 }
    }

    /// Centre of pixel (row, col) relative to the ego.
    fn rel_center(&self, row: usize, col: usize) -> Vec2 {
        let half = WINDOW_M / 2.0;
        Vec2::new(-half + (col as f64 + 0.5) * self.px, half - (row as f64 + 0.5) * self.px)
    }

    fn col_of(&self, rel_x: f64) -> f64 {
        (rel_x + WINDOW_M / 2.0) / self.px
    }

    fn row_of(&self, rel_y: f64) -> f64 {
        (WINDOW_M / 2.0 - rel_y) / self.px
    }

    /// Pixel index span covering `[lo, hi]` along one axis, clipped.
    fn span(&self, a: f64, b: f64) -> Option<(usize, usize)> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let lo = lo.floor().max(0.0);
        let hi = hi.floor().min(self.size as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    /// Pixels whose centre satisfies `inside` in the rel-coordinate box.
    fn fill(&self, img: &mut IntentionImage, c: usize, v: f64, lo: Vec2, hi: Vec2, inside: impl Fn(Vec2) -> bool) {
        let Some((c0, c1)) = self.span(self.col_of(lo.x), self.col_of(hi.x)) else { return };
        let Some((r0, r1)) = self.span(self.row_of(hi.y), self.row_of(lo.y)) else { return };
        for row in r0..=r1 {
            for col in c0..=c1 {
                if inside(self.rel_center(row, col)) {
                    img.raise(c, row, col, v);
                }
            }
        }
    }

    fn disc(&self, img: &mut IntentionImage, c: usize, v: f64, p: Vec2, radius: f64) {
        let rel = p - self.ego;
        let r = Vec2::new(radius, radius);
        self.fill(img, c, v, rel - r, rel + r, |q| (q - rel).norm_sq() <= radius * radius);
    }

    fn rect(&self, img: &mut IntentionImage, c: usize, v: f64, r: &Rect) {
        let lo = r.min - self.ego;
        let hi = r.max - self.ego;
        self.fill(img, c, v, lo, hi, |q| q.x >= lo.x && q.x <= hi.x && q.y >= lo.y && q.y <= hi.y);
    }

    fn oriented_box(&self, img: &mut IntentionImage, c: usize, v: f64, pose: Pose, len: f64, width: f64) {
        let rel = pose.pos - self.ego;
        let (s, co) = pose.heading.sin_cos();
        let reach = (len * len + width * width).sqrt() / 2.0;
        let r = Vec2::new(reach, reach);
        self.fill(img, c, v, rel - r, rel + r, |q| {
            let d = q - rel;
            let along = d.x * co + d.y * s;
            let across = -d.x * s + d.y * co;
            along.abs() <= len / 2.0 && across.abs() <= width / 2.0
        });
    }

    fn polyline(&self, img: &mut IntentionImage, c: usize, v: f64, pts: &[Pose]) {
        for w in pts.windows(2) {
            let (a, b) = (w[0].pos - self.ego, w[1].pos - self.ego);
            let n = ((b - a).norm() / PATH_SAMPLE).ceil().max(1.0) as usize;
            for i in 0..=n {
                let q = a + (b - a) * (i as f64 / n as f64);
                self.point(img, c, v, q);
            }
        }
        if let [only] = pts {
            self.point(img, c, v, only.pos - self.ego);
        }
    }

    fn point(&self, img: &mut IntentionImage, c: usize, v: f64, rel: Vec2) {
        let (col, row) = (self.col_of(rel.x).floor(), self.row_of(rel.y).floor());
        let n = self.size as f64;
        if col >= 0.0 && row >= 0.0 && col < n && row < n {
            img.raise(c, row as usize, col as usize, v);
        }
    }
}

pub fn render(input: &RenderInput<'_>) -> IntentionImage {
    render_sized(input, IMAGE_SIZE)
}

pub fn render_sized(input: &RenderInput<'_>, size: usize) -> IntentionImage {
    let mut img = IntentionImage::zeros(size);
    let f = Frame::new(input.ego.pos, size);

    for r in input.obstacles {
        f.rect(&mut img, R, 1.0, r);
    }
    for path in input.predictions {
        let mut v = 1.0;
        for p in path {
            v *= 0.9;
            // step k (1-based) drawn at 0.9^k
            f.disc(&mut img, R, v, *p, DOT_RADIUS);
        }
    }
    for (p, w) in input.hypotheses {
        f.disc(&mut img, R, *w, *p, DOT_RADIUS);
    }

    f.polyline(&mut img, G, 1.0, input.planned);
    if let Some(goal) = input.goal {
        f.disc(&mut img, G, 0.7, goal, 2.0);
    }

    let past = &input.past[input.past.len().saturating_sub(PAST_POSES)..];
    let n = past.len();
    for (i, p) in past.iter().enumerate() {
        let v = if n > 1 { 0.3 + 0.7 * i as f64 / (n - 1) as f64 } else { 1.0 };
        f.disc(&mut img, B, v, p.pos, DOT_RADIUS);
    }
    f.oriented_box(&mut img, B, 1.0, input.ego, EGO_LENGTH, EGO_WIDTH);
    img
}
