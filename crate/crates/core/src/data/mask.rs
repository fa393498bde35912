use std::f32::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Mask, Plane};

const MAX_ATTEMPTS: usize = 100;

/// Random-walk brush strokes. Ranges are inclusive `(min, max)` pairs;
/// brush widths are given for side 64 and scale linearly with the side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub num_strokes: (usize, usize),
    pub brush_width: (f32, f32),
    pub vertices_per_stroke: (usize, usize),
    pub max_turn_angle: f32,
    /// Segment length as a fraction of the side.
    pub segment_length: (f32, f32),
    pub coverage_bounds: (f32, f32),
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            num_strokes: (1, 4),
            brush_width: (3.0, 10.0),
            vertices_per_stroke: (4, 12),
            max_turn_angle: 2.0 * PI / 5.0,
            segment_length: (0.08, 0.25),
            coverage_bounds: (0.15, 0.50),
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("mask config: {what}")));
        let (lo, hi) = self.coverage_bounds;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad("coverage bounds must satisfy 0 < min < max < 1");
        }
        if self.num_strokes.0 == 0 || self.num_strokes.0 > self.num_strokes.1 {
            return bad("num_strokes must be a non-empty range starting at 1 or more");
        }
        if self.vertices_per_stroke.0 < 2 || self.vertices_per_stroke.0 > self.vertices_per_stroke.1 {
            return bad("vertices_per_stroke must be a non-empty range starting at 2 or more");
        }
        if !(self.brush_width.0 > 0.0 && self.brush_width.0 <= self.brush_width.1) {
            return bad("brush_width must be a positive non-empty range");
        }
        if !(self.segment_length.0 > 0.0 && self.segment_length.0 <= self.segment_length.1) {
            return bad("segment_length must be a positive non-empty range");
        }
        if !(self.max_turn_angle >= 0.0 && self.max_turn_angle <= PI) {
            return bad("max_turn_angle must lie in [0, pi]");
        }
        Ok(())
    }
}

/// Free-form hole mask. The whole mask is redrawn until its coverage falls
/// inside `coverage_bounds`.
pub fn generate_freeform_mask(seed: u64, cfg: &MaskConfig, side: usize) -> Result<Mask> {
    cfg.validate()?;
    if side < 32 {
        return Err(Error::Config(format!("mask side must be at least 32, got {side}")));
    }
    let mut rng = super::mask_rng(seed);
    let (lo, hi) = cfg.coverage_bounds;
    for _ in 0..MAX_ATTEMPTS {
        let plane = draw_strokes(&mut rng, cfg, side);
        let coverage = plane.mean();
        if (lo..=hi).contains(&coverage) {
            return Ok(Mask(plane));
        }
    }
    Err(Error::Config(format!(
        "no mask with coverage in [{lo}, {hi}] after {MAX_ATTEMPTS} attempts at side {side}"
    )))
}

fn draw_strokes<R: Rng>(rng: &mut R, cfg: &MaskConfig, side: usize) -> Plane {
    let mut plane = Plane::zeros(side, side);
    let s = side as f32;
    let scale = s / 64.0;
    for _ in 0..rng.random_range(cfg.num_strokes.0..=cfg.num_strokes.1) {
        let vertices = rng.random_range(cfg.vertices_per_stroke.0..=cfg.vertices_per_stroke.1);
        let width = rng.random_range(cfg.brush_width.0..=cfg.brush_width.1) * scale;
        let mut p = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let mut heading = rng.random_range(0.0..TAU);
        for _ in 1..vertices {
            heading += rng.random_range(-cfg.max_turn_angle..=cfg.max_turn_angle);
            let len = rng.random_range(cfg.segment_length.0..=cfg.segment_length.1) * s;
            let mut q = (p.0 + len * heading.cos(), p.1 + len * heading.sin());
            // reflect off the border so strokes stay on the canvas
            if !(0.0..s).contains(&q.0) {
                heading = PI - heading;
                q.0 = q.0.clamp(0.0, s - 1.0);
            }
            if !(0.0..s).contains(&q.1) {
                heading = -heading;
                q.1 = q.1.clamp(0.0, s - 1.0);
            }
            stamp_segment(&mut plane, p, q, width / 2.0);
            p = q;
        }
    }
    plane
}

/// Sets every pixel whose centre lies within `radius` of segment `a-b`.
fn stamp_segment(plane: &mut Plane, a: (f32, f32), b: (f32, f32), radius: f32) {
    let (w, h) = (plane.width as f32, plane.height as f32);
    let x0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let x1 = (a.0.max(b.0) + radius).ceil().min(w - 1.0) as usize;
    let y0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let y1 = (a.1.max(b.1) + radius).ceil().min(h - 1.0) as usize;
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let t = if len2 > 0.0 { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (ex, ey) = (px - a.0 - t * dx, py - a.1 - t * dy);
            if ex * ex + ey * ey <= radius * radius {
                plane.data[y * plane.width + x] = 1.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_within_bounds_and_binary() {
        let cfg = MaskConfig::default();
        for seed in 0..200 {
            let m = generate_freeform_mask(seed, &cfg, 64).unwrap();
            let c = m.coverage();
            assert!((0.15..=0.50).contains(&c), "seed {seed}: coverage {c}");
            assert!(m.0.is_binary());
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = MaskConfig::default();
        assert_eq!(generate_freeform_mask(42, &cfg, 64).unwrap(), generate_freeform_mask(42, &cfg, 64).unwrap());
        assert_ne!(generate_freeform_mask(42, &cfg, 64).unwrap(), generate_freeform_mask(43, &cfg, 64).unwrap());
    }

    #[test]
    fn unreachable_coverage_is_a_config_error() {
        let cfg = MaskConfig { num_strokes: (1, 1), brush_width: (1.0, 1.0), vertices_per_stroke: (2, 2), coverage_bounds: (0.9, 0.95), ..Default::default() };
        assert!(matches!(generate_freeform_mask(0, &cfg, 64), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            MaskConfig { coverage_bounds: (0.5, 0.2), ..Default::default() },
            MaskConfig { coverage_bounds: (0.0, 0.2), ..Default::default() },
            MaskConfig { num_strokes: (3, 2), ..Default::default() },
            MaskConfig { brush_width: (0.0, 2.0), ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
        assert!(generate_freeform_mask(0, &MaskConfig::default(), 16).is_err());
    }

    #[test]
    fn larger_sides_work() {
        for side in [32, 128, 256] {
            let m = generate_freeform_mask(7, &MaskConfig::default(), side).unwrap();
            assert_eq!(m.height(), side);
        }
    }

    #[test]
    fn stamp_covers_round_caps() {
        let mut p = Plane::zeros(9, 9);
        stamp_segment(&mut p, (4.5, 4.5), (4.5, 4.5), 2.0);
        // a disc of radius 2 around a pixel centre covers 13 pixels
        assert_eq!(p.data.iter().filter(|&&v| v == 1.0).count(), 13);
    }
}
