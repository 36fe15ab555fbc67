//! Direction-to-hue flow rendering: hue encodes the flow angle, saturation
//! the magnitude relative to a normalization cap. Zero flow is white.

use crate::data::{FlowField, RgbImage};

/// Renders a flow field to RGB. `max_norm` defaults to the field's own
/// maximum magnitude; fields of zeros come out all white.
pub fn flow_to_color(flow: &FlowField, max_norm: Option<f32>) -> RgbImage {
    let cap = match max_norm {
        Some(m) if m > 0.0 => m,
        _ => flow.max_norm(),
    };
    let mut img = RgbImage::filled(flow.width(), flow.height(), [255, 255, 255]);
    if cap <= 0.0 {
        return img;
    }
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            let (u, v) = flow.get(x, y);
            let mag = (u * u + v * v).sqrt();
            let sat = (mag / cap).clamp(0.0, 1.0);
            let hue_deg = {
                let a = (v as f64).atan2(u as f64).to_degrees();
                if a < 0.0 {
                    a + 360.0
                } else {
                    a
                }
            };
            img.set(x, y, hsv_to_rgb(hue_deg, sat as f64, 1.0));
        }
    }
    img
}

/// h in [0,360), s and v in [0,1].
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

/// Hue angle of a rendered pixel in degrees, used by tests to bin colors.
pub fn rgb_hue_deg(rgb: [u8; 3]) -> Option<f64> {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d < 1e-9 {
        return None; // achromatic
    }
    let h = if max == r {
        60.0 * (((g - b) / d) % 6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    Some(if h < 0.0 { h + 360.0 } else { h })
}
