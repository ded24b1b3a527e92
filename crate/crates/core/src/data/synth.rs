use serde::{Deserialize, Serialize};

use super::DataError;
use crate::imgcore::{rotate_point, Image, Mask, Point, Rgb};
use crate::signnet::{Attribute, AttributeVector, ATTRIBUTE_COUNT};
use crate::tensorad::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub side: usize,
    /// Rotation drawn uniformly from this range, in degrees.
    pub rotation_range: (f64, f64),
    /// Probability of each attribute, in label order.
    pub probabilities: [f64; ATTRIBUTE_COUNT],
    /// Standard deviation of the per-pixel noise, in grey levels.
    pub noise: f64,
    /// Largest random shift of the tongue centre, as a fraction of `side`.
    pub max_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 64,
            side: 256,
            rotation_range: (-45.0, 45.0),
            probabilities: [0.4; ATTRIBUTE_COUNT],
            noise: 3.0,
            max_shift: 0.04,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.side < 64 {
            return bad(format!("side must be at least 64, got {}", self.side));
        }
        if let Some(p) = self.probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return bad(format!("attribute probability {p} outside [0, 1]"));
        }
        let (lo, hi) = self.rotation_range;
        if !(lo <= hi) || lo < -90.0 || hi > 90.0 {
            return bad(format!("rotation range ({lo}, {hi}) must be ordered and within [-90, 90]"));
        }
        if !(self.noise >= 0.0) || !(0.0..=0.05).contains(&self.max_shift) {
            return bad("noise must be non-negative and max_shift within [0, 0.05]".into());
        }
        Ok(())
    }
}

/// Scalloped indentations along both sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dents {
    pub depth: f64,
    pub period: f64,
    pub phase: f64,
}

/// Tongue outline in a local frame: `u` across, `v` from the root (0) down
/// to the tip (`length`). The half-width is a superellipse quarter
/// `w (1 - (v / l)^p)^(1 / p)`, minus any dents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TongueShape {
    pub half_width: f64,
    pub length: f64,
    pub exponent: f64,
    pub center: Point,
    /// Rotation of the whole figure, degrees, positive counter-clockwise.
    pub phi: f64,
    pub dents: Option<Dents>,
}

impl TongueShape {
    fn smooth_half_width(&self, v: f64) -> f64 {
        if !(0.0..=self.length).contains(&v) {
            return 0.0;
        }
        let p = self.exponent;
        self.half_width * (1.0 - (v / self.length).powf(p)).max(0.0).powf(1.0 / p)
    }

    pub fn half_width_at(&self, v: f64) -> f64 {
        let base = self.smooth_half_width(v);
        match self.dents {
            Some(d) if v > 0.2 * self.length && v < 0.85 * self.length => {
                let s = (std::f64::consts::TAU * (v - d.phase) / d.period).sin().max(0.0);
                (base - d.depth * s.sqrt()).max(0.0)
            }
            _ => base,
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        v >= 0.0 && v <= self.length && u.abs() <= self.half_width_at(v)
    }

    pub fn to_image(&self, u: f64, v: f64) -> Point {
        let p = Point::new(self.center.x + u, self.center.y - self.length / 2.0 + v);
        rotate_point(p, self.phi, self.center)
    }

    pub fn to_local(&self, p: Point) -> (f64, f64) {
        let q = rotate_point(p, -self.phi, self.center);
        (q.x - self.center.x, q.y - self.center.y + self.length / 2.0)
    }

    /// Middle of the root edge.
    pub fn top(&self) -> Point {
        self.to_image(0.0, 0.0)
    }

    pub fn tip(&self) -> Point {
        self.to_image(0.0, self.length)
    }

    /// Closed outline, clockwise from the left root corner.
    pub fn boundary(&self, samples: usize) -> Vec<Point> {
        let n = samples.max(8);
        let mut pts = Vec::with_capacity(2 * n + 1);
        for i in 0..=n {
            let v = self.length * i as f64 / n as f64;
            pts.push(self.to_image(self.half_width_at(v), v));
        }
        for i in (0..=n).rev() {
            let v = self.length * i as f64 / n as f64;
            pts.push(self.to_image(-self.half_width_at(v), v));
        }
        pts
    }
}

/// One generated tongue with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image: Image,
    pub mask: Mask,
    pub labels: AttributeVector,
    pub shape: TongueShape,
    /// Image-space crack polyline, empty without a crack.
    pub crack: Vec<Point>,
    /// Topmost and bottommost mask pixel of every occupied column.
    pub upper: Vec<Point>,
    pub lower: Vec<Point>,
}

impl SynthSample {
    pub fn phi(&self) -> f64 {
        self.shape.phi
    }

    pub fn top(&self) -> Point {
        self.shape.top()
    }

    pub fn tip(&self) -> Point {
        self.shape.tip()
    }
}

#[derive(Debug, Clone, Copy)]
struct Disc {
    u: f64,
    v: f64,
    r: f64,
}

impl Disc {
    fn covers(&self, u: f64, v: f64) -> bool {
        (u - self.u).powi(2) + (v - self.v).powi(2) <= self.r * self.r
    }
}

const PALE_BASE: Rgb = [232, 196, 190];
const PINK_BASE: Rgb = [212, 118, 122];
const TIP_RED: Rgb = [196, 38, 48];
const FUR_WHITE: Rgb = [238, 236, 224];
const FUR_YELLOW: Rgb = [224, 198, 88];
const SPOT_RED: Rgb = [176, 22, 34];
const BRUISE: Rgb = [84, 46, 70];
const CRACK_DARK: Rgb = [104, 40, 48];

fn hash_unit(seed: u64, x: usize, y: usize) -> f64 {
    let mut z = seed ^ ((x as u64) << 32 | y as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn lift(c: Rgb) -> [f64; 3] {
    c.map(f64::from)
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Sample `index` of the corpus described by `cfg`; depends only on the seed
/// and the index.
pub fn synth_sample(cfg: &SynthConfig, index: usize) -> SynthSample {
    use Attribute::*;
    let mut rng = Rng::new(cfg.seed).derive(index as u64);
    let side = cfg.side as f64;
    let labels = AttributeVector(std::array::from_fn(|j| rng.bernoulli(cfg.probabilities[j])));

    let (lo, hi) = cfg.rotation_range;
    let phi = if hi > lo { rng.uniform(lo, hi) } else { lo };
    let shift = cfg.max_shift * side;
    let mid = (side - 1.0) / 2.0;
    let center = Point::new(
        mid + rng.uniform(-shift, shift),
        mid + rng.uniform(-shift, shift),
    );
    let length = side * rng.uniform(0.5, 0.6);
    let dents = labels.get(ToothMark).then(|| Dents {
        depth: side * rng.uniform(0.025, 0.035),
        period: length * rng.uniform(0.12, 0.16),
        phase: rng.uniform(0.0, length),
    });
    let shape = TongueShape {
        half_width: side * rng.uniform(0.18, 0.22),
        length,
        exponent: rng.uniform(2.2, 2.8),
        center,
        phi,
        dents,
    };

    let base = if labels.get(Pale) { PALE_BASE } else { PINK_BASE };
    let jitter: [f64; 3] = std::array::from_fn(|_| rng.uniform(-6.0, 6.0));
    let band = 0.06 * side;
    let fur_density = if labels.get(FurThick) {
        0.75
    } else if labels.get(FurYellow) {
        0.3
    } else {
        0.0
    };
    let fur_color = if labels.get(FurYellow) { FUR_YELLOW } else { FUR_WHITE };
    let fur_seed = rng.below(usize::MAX) as u64;

    let spots: Vec<Disc> = if labels.get(RedSpot) {
        let n = 25 + rng.below(16);
        (0..n)
            .map(|_| {
                let v = length * rng.uniform(0.3, 0.88);
                let hw = shape.smooth_half_width(v);
                Disc {
                    u: hw * rng.uniform(-0.8, 0.8),
                    v,
                    r: (0.012 * side).max(1.0),
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let bruises: Vec<Disc> = if labels.get(Ecchymosis) {
        let n = 2 + rng.below(3);
        (0..n)
            .map(|_| {
                let v = length * rng.uniform(0.35, 0.75);
                let hw = shape.smooth_half_width(v);
                let side_sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                Disc {
                    u: side_sign * hw * rng.uniform(0.6, 0.75),
                    v,
                    r: 0.035 * side,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let crack_local: Vec<(f64, f64)> = if labels.get(Crack) {
        let n = 6;
        (0..n)
            .map(|i| {
                let v = length * (0.15 + 0.55 * i as f64 / (n - 1) as f64);
                (shape.half_width * rng.uniform(-0.08, 0.08), v)
            })
            .collect()
    } else {
        Vec::new()
    };
    let crack_half = 0.5 * (0.008 * side).max(1.5);

    let mut image = Image::new(cfg.side, cfg.side, [0, 0, 0]);
    let mut mask = Mask::new(cfg.side, cfg.side);
    for y in 0..cfg.side {
        for x in 0..cfg.side {
            let (u, v) = shape.to_local(Point::new(x as f64, y as f64));
            if !shape.contains(u, v) {
                continue;
            }
            mask.set(x, y, true);
            let hw = shape.half_width_at(v);
            let mut c: [f64; 3] = std::array::from_fn(|k| base[k] as f64 + jitter[k]);
            if labels.get(TipSideRed) && v > 0.3 * length && hw - u.abs() < band {
                c = lift(TIP_RED);
            }
            if fur_density > 0.0
                && u.abs() < 0.6 * hw
                && (0.08 * length..0.65 * length).contains(&v)
                && hash_unit(fur_seed, x, y) < fur_density
            {
                let fur = lift(fur_color);
                c = std::array::from_fn(|k| 0.85 * fur[k] + 0.15 * c[k]);
            }
            if spots.iter().any(|d| d.covers(u, v)) {
                c = lift(SPOT_RED);
            }
            if bruises.iter().any(|d| d.covers(u, v)) {
                c = lift(BRUISE);
            }
            if crack_local
                .windows(2)
                .any(|s| segment_distance((u, v), s[0], s[1]) <= crack_half)
            {
                c = lift(CRACK_DARK);
            }
            let px = c.map(|ch| (ch + cfg.noise * rng.normal()).round().clamp(1.0, 255.0) as u8);
            image.set(x, y, px);
        }
    }

    let crack = crack_local.iter().map(|&(u, v)| shape.to_image(u, v)).collect();
    let (mut upper, mut lower) = (Vec::new(), Vec::new());
    for x in 0..cfg.side {
        let mut ys = (0..cfg.side).filter(|&y| mask.get(x, y));
        if let Some(t) = ys.next() {
            let b = ys.next_back().unwrap_or(t);
            upper.push(Point::new(x as f64, t as f64));
            lower.push(Point::new(x as f64, b as f64));
        }
    }
    SynthSample {
        image,
        mask,
        labels,
        shape,
        crack,
        upper,
        lower,
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SynthSample>, DataError> {
    cfg.validate()?;
    Ok((0..cfg.count).map(|i| synth_sample(cfg, i)).collect())
}
