//! Dependency-free figure output: CSV series and binary PPM heatmaps.

use std::fmt::Write as _;

/// Blue, white, red anchors of the diverging colormap.
const COLD: [f64; 3] = [33.0, 102.0, 172.0];
const MID: [f64; 3] = [247.0, 247.0, 247.0];
const HOT: [f64; 3] = [178.0, 24.0, 43.0];

/// Colour of `v` on a diverging map over `[-limit, limit]`; zero is the
/// neutral background.
pub fn diverging(v: f64, limit: f64) -> [u8; 3] {
    let s = if limit > 0.0 {
        (v / limit).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let (end, t) = if s < 0.0 { (COLD, -s) } else { (HOT, s) };
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        rgb[c] = (MID[c] + (end[c] - MID[c]) * t).round() as u8;
    }
    rgb
}

/// Binary P6 image of a row-major `width × height` field. Row 0 of the
/// field is drawn at the bottom so `y` points up.
pub fn ppm(field: &[f64], width: usize, height: usize, limit: f64) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for row in (0..height).rev() {
        for col in 0..width {
            out.extend_from_slice(&diverging(field[row * width + col], limit));
        }
    }
    out
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `x,truth,prediction` rows.
pub fn series_csv(x: &[f64], truth: &[f64], pred: &[f64]) -> String {
    let mut s = String::from("x,truth,prediction\n");
    for i in 0..x.len() {
        let _ = writeln!(s, "{},{},{}", x[i], truth[i], pred[i]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_background() {
        assert_eq!(diverging(0.0, 1.0), [247, 247, 247]);
        assert_eq!(diverging(0.0, 0.0), [247, 247, 247]);
        assert_eq!(diverging(5.0, 1.0), [178, 24, 43]);
        assert_eq!(diverging(-1.0, 1.0), [33, 102, 172]);
    }

    #[test]
    fn rows_are_flipped() {
        let img = ppm(&[1.0, 0.0, 0.0, -1.0], 2, 2, 1.0);
        let body = &img[b"P6\n2 2\n255\n".len()..];
        assert_eq!(&body[..3], &[247, 247, 247]);
        assert_eq!(&body[3..6], &[33, 102, 172]);
        assert_eq!(&body[6..9], &[178, 24, 43]);
    }
}
