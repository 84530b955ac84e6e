use serde::{Deserialize, Serialize};

use super::{BBox, BodyColor, Image, Sample, SampleMeta, Windshield};
use crate::params::Rng;

/// Background palettes. `Standard` backs every training split; `Shifted`
/// holds three colors never used in training, for the domain-shift set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Standard,
    Shifted,
}

const STANDARD_BACKGROUNDS: [[f64; 3]; 3] = [[0.5, 0.5, 0.5], [0.45, 0.55, 0.4], [0.4, 0.45, 0.55]];
const SHIFTED_BACKGROUNDS: [[f64; 3]; 3] = [[0.15, 0.15, 0.2], [0.85, 0.85, 0.8], [0.55, 0.4, 0.6]];

impl Background {
    fn palette(self) -> &'static [[f64; 3]; 3] {
        match self {
            Background::Standard => &STANDARD_BACKGROUNDS,
            Background::Shifted => &SHIFTED_BACKGROUNDS,
        }
    }

    fn id_offset(self) -> u32 {
        match self {
            Background::Standard => 0,
            Background::Shifted => 3,
        }
    }
}

/// Scene parameters for [`generate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_size: usize,
    pub body: BodyColor,
    pub windshield: Windshield,
    pub background: Background,
    /// Body side length range as a fraction of the image side.
    pub body_frac: (f64, f64),
    pub color_jitter: f64,
    pub noise_amp: f64,
    pub brightness: (f64, f64),
    pub blur_prob: f64,
}

impl SceneSpec {
    pub fn standard(image_size: usize, body: BodyColor, windshield: Windshield) -> Self {
        Self {
            image_size,
            body,
            windshield,
            background: Background::Standard,
            body_frac: (0.3, 0.6),
            color_jitter: 0.05,
            noise_amp: 0.05,
            brightness: (0.7, 1.3),
            blur_prob: 0.2,
        }
    }

    /// Unseen backgrounds and a wider lighting range.
    pub fn domain_shift(image_size: usize, body: BodyColor, windshield: Windshield) -> Self {
        Self {
            background: Background::Shifted,
            brightness: (0.4, 1.6),
            ..Self::standard(image_size, body, windshield)
        }
    }
}

fn fill_rect(img: &mut Image, x0: usize, y0: usize, w: usize, h: usize, rgb: [f32; 3]) {
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            img.set_pixel(x, y, rgb);
        }
    }
}

/// Edge-clamped 3×3 mean filter.
fn box_blur(img: &Image) -> Image {
    let s = img.size as isize;
    let mut out = img.clone();
    for y in 0..s {
        for x in 0..s {
            let mut acc = [0.0f32; 3];
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let p = img.pixel((x + dx).clamp(0, s - 1) as usize, (y + dy).clamp(0, s - 1) as usize);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
            }
            out.set_pixel(x as usize, y as usize, acc.map(|v| v / 9.0));
        }
    }
    out
}

/// Renders one sample. Pixels are quantized to multiples of 1/255 so a PPM
/// round trip is lossless.
///
/// Draw order from `rng`: background index, 3 body-color jitters, body
/// width, height, x, y, per-value noise, brightness, blur coin.
pub fn generate(spec: &SceneSpec, rng: &mut Rng) -> Sample {
    let s = spec.image_size;
    let bg_idx = rng.below(3) as usize;
    let bg = spec.background.palette()[bg_idx];
    let mut body = spec.body.rgb();
    for c in body.iter_mut() {
        *c += rng.uniform(-spec.color_jitter, spec.color_jitter);
    }

    let lo = ((spec.body_frac.0 * s as f64).round() as i64).max(1);
    let hi = ((spec.body_frac.1 * s as f64).round() as i64).clamp(lo, s as i64);
    let bw = rng.range_inclusive(lo, hi) as usize;
    let bh = rng.range_inclusive(lo, hi) as usize;
    let x0 = rng.range_inclusive(0, (s - bw) as i64) as usize;
    let y0 = rng.range_inclusive(0, (s - bh) as i64) as usize;

    let to32 = |c: [f64; 3]| c.map(|v| v as f32);
    let mut img = Image::filled(s, to32(bg));
    fill_rect(&mut img, x0, y0, bw, bh, to32(body));
    if let Some(ws) = spec.windshield.rgb() {
        let inset = (bw / 6).max(1);
        let ww = bw.saturating_sub(2 * inset).max(1);
        let wh = (bh / 3).max(1);
        let top = (y0 + 1).min(y0 + bh - wh);
        fill_rect(&mut img, x0 + inset.min(bw - 1), top, ww, wh, to32(ws));
    }

    for v in img.data.iter_mut() {
        *v += rng.uniform(-spec.noise_amp, spec.noise_amp) as f32;
    }
    let gain = rng.uniform(spec.brightness.0, spec.brightness.1) as f32;
    for v in img.data.iter_mut() {
        *v *= gain;
    }
    if rng.bernoulli(spec.blur_prob) {
        img = box_blur(&img);
    }
    for v in img.data.iter_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }

    let sf = s as f64;
    let bbox = BBox::new(
        spec.windshield.class_id(),
        (x0 as f64 + bw as f64 / 2.0) / sf,
        (y0 as f64 + bh as f64 / 2.0) / sf,
        bw as f64 / sf,
        bh as f64 / sf,
    );
    Sample {
        image: img,
        boxes: vec![bbox],
        meta: SampleMeta {
            body_color: spec.body,
            windshield: spec.windshield,
            background_id: spec.background.id_offset() + bg_idx as u32,
        },
    }
}
