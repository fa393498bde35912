use rand::Rng;

use crate::imaging::Image;

const SKIN: [[f32; 3]; 6] = [
    [0.96, 0.80, 0.69],
    [0.91, 0.72, 0.58],
    [0.80, 0.60, 0.45],
    [0.67, 0.48, 0.34],
    [0.52, 0.36, 0.25],
    [0.36, 0.24, 0.16],
];

const BACKGROUND: [[f32; 3]; 5] = [
    [0.20, 0.30, 0.55],
    [0.75, 0.78, 0.80],
    [0.35, 0.55, 0.35],
    [0.60, 0.25, 0.25],
    [0.10, 0.10, 0.12],
];

const IRIS: [[f32; 3]; 4] = [[0.25, 0.15, 0.08], [0.15, 0.35, 0.55], [0.20, 0.40, 0.20], [0.05, 0.05, 0.05]];

struct Canvas {
    side: usize,
    rgb: Vec<[f32; 3]>,
}

impl Canvas {
    fn fill_where(&mut self, color: [f32; 3], inside: impl Fn(f32, f32) -> bool) {
        for y in 0..self.side {
            for x in 0..self.side {
                if inside(x as f32 + 0.5, y as f32 + 0.5) {
                    self.rgb[y * self.side + x] = color;
                }
            }
        }
    }

    fn ellipse(&mut self, color: [f32; 3], cx: f32, cy: f32, rx: f32, ry: f32) {
        self.fill_where(color, |x, y| ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0);
    }

    fn segment(&mut self, color: [f32; 3], a: (f32, f32), b: (f32, f32), half_width: f32) {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = (dx * dx + dy * dy).max(1e-6);
        self.fill_where(color, |x, y| {
            let t = (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0);
            (x - a.0 - t * dx).powi(2) + (y - a.1 - t * dy).powi(2) <= half_width * half_width
        });
    }
}

fn jitter_color<R: Rng>(rng: &mut R, base: [f32; 3], amount: f32) -> [f32; 3] {
    base.map(|c| (c + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

fn darker(c: [f32; 3], f: f32) -> [f32; 3] {
    c.map(|v| v * f)
}

/// Procedural face: background, skin ellipse, two eyes, nose and mouth, each
/// with seeded jitter in position, size and colour.
pub fn synth_face(seed: u64, side: usize) -> Image {
    let mut rng = super::seeded_rng(seed, 0);
    let s = side as f32;
    let mut j = |spread: f32| rng.random_range(-spread..=spread) * s;
    let (cx, cy) = (0.5 * s + j(0.04), 0.52 * s + j(0.04));
    let (face_rx, face_ry) = (0.30 * s + j(0.04), 0.38 * s + j(0.04));
    let eye_dx = 0.13 * s + j(0.03);
    let eye_y = cy - 0.10 * s + j(0.03);
    let (eye_rx, eye_ry) = (0.065 * s + j(0.015), 0.035 * s + j(0.012));
    let eye_tilt = j(0.01);
    let nose_len = 0.12 * s + j(0.03);
    let nose_x = cx + j(0.015);
    let mouth_y = cy + 0.17 * s + j(0.03);
    let mouth_rx = 0.11 * s + j(0.03);
    let mouth_curve = 0.04 * s + j(0.03);
    let pupil_shift = j(0.02);

    let mut rng = super::seeded_rng(seed, 1);
    let pick = |rng: &mut rand_chacha::ChaCha8Rng, palette: &[[f32; 3]], amount: f32| {
        let base = palette[rng.random_range(0..palette.len())];
        jitter_color(rng, base, amount)
    };
    let bg = pick(&mut rng, &BACKGROUND, 0.08);
    let skin = pick(&mut rng, &SKIN, 0.04);
    let iris = pick(&mut rng, &IRIS, 0.05);
    let lips = jitter_color(&mut rng, [0.65, 0.25, 0.28], 0.08);

    let mut canvas = Canvas { side, rgb: vec![bg; side * side] };
    canvas.ellipse(skin, cx, cy, face_rx, face_ry);
    let line = (0.02 * s).max(0.75);
    for (sign, tilt) in [(-1.0f32, -eye_tilt), (1.0, eye_tilt)] {
        let ex = cx + sign * eye_dx;
        let ey = eye_y + tilt;
        canvas.ellipse([0.95, 0.95, 0.93], ex, ey, eye_rx, eye_ry);
        canvas.ellipse(iris, ex + pupil_shift, ey, eye_ry * 0.95, eye_ry * 0.95);
        canvas.segment(darker(skin, 0.55), (ex - eye_rx, ey - eye_ry * 1.9), (ex + eye_rx, ey - eye_ry * 2.1), line);
    }
    canvas.segment(darker(skin, 0.7), (nose_x, eye_y + eye_ry), (nose_x, eye_y + eye_ry + nose_len), line);
    // mouth arc: y = mouth_y + curve * (1 - t^2) for t in [-1, 1]
    let steps = 12;
    for k in 0..steps {
        let t0 = -1.0 + 2.0 * k as f32 / steps as f32;
        let t1 = -1.0 + 2.0 * (k + 1) as f32 / steps as f32;
        let p = |t: f32| (cx + t * mouth_rx, mouth_y + mouth_curve * (1.0 - t * t));
        canvas.segment(lips, p(t0), p(t1), line * 1.3);
    }

    let plane = side * side;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in canvas.rgb.iter().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = 2.0 * px[c] - 1.0;
        }
    }
    Image { channels: 3, height: side, width: side, data }
}
