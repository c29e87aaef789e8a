//! Deterministic SVG rendering of a region atlas.
//!
//! A raster-sampled heatmap of the network output sits behind the stroked
//! region polygons. All numbers are written with fixed precision so the same
//! atlas always produces the same bytes.

use super::RegionAtlas;
use crate::network::Network;
use std::fmt::Write;

/// Five-stop color ramp, dark blue to yellow.
const RAMP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mix = |a: f64, b: f64| (a + f * (b - a)).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(RAMP[i][0], RAMP[i + 1][0]),
        mix(RAMP[i][1], RAMP[i + 1][1]),
        mix(RAMP[i][2], RAMP[i + 1][2])
    )
}

/// Renders the atlas over a `raster x raster` heatmap of `net`'s output.
/// Pass `None` to draw the polygons on a plain background.
pub fn render_svg(atlas: &RegionAtlas, net: Option<&Network>, raster: usize) -> String {
    let (x0, y0) = atlas
        .regions
        .iter()
        .flat_map(|r| r.polygon.vertices.iter())
        .fold((f64::INFINITY, f64::INFINITY), |acc, v| (acc.0.min(v[0]), acc.1.min(v[1])));
    let (x1, y1) = atlas
        .regions
        .iter()
        .flat_map(|r| r.polygon.vertices.iter())
        .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |acc, v| (acc.0.max(v[0]), acc.1.max(v[1])));
    let (x0, y0, x1, y1) = if let Some(n) = net {
        let b = n.input_bounds();
        (b[0].0, b[1].0, b[0].1, b[1].1)
    } else {
        (x0, y0, x1, y1)
    };
    let w = x1 - x0;
    let h = y1 - y0;
    let size = 640.0;
    let scale = size / w.max(h);
    let px = |x: f64| (x - x0) * scale;
    // SVG y runs downward; flip so the box reads like a plot.
    let py = |y: f64| (y1 - y) * scale;

    let mut s = String::new();
    write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.4} {:.4}\">\n",
        (w * scale).round(),
        (h * scale).round(),
        w * scale,
        h * scale
    )
    .unwrap();

    if let Some(net) = net {
        let n = raster.max(2);
        let mut values = vec![0.0; n * n];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                let x = x0 + w * (i as f64 + 0.5) / n as f64;
                let y = y0 + h * (j as f64 + 0.5) / n as f64;
                let v = net.forward(&[x, y]).map(|o| o[0]).unwrap_or(f64::NAN);
                values[i * n + j] = v;
                if v.is_finite() {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        let span = (hi - lo).max(1e-12);
        let cw = w * scale / n as f64;
        let ch = h * scale / n as f64;
        for i in 0..n {
            for j in 0..n {
                let v = (values[i * n + j] - lo) / span;
                let cx = i as f64 * cw;
                let cy = (n - 1 - j) as f64 * ch;
                write!(
                    s,
                    "<rect x=\"{cx:.4}\" y=\"{cy:.4}\" width=\"{:.4}\" height=\"{:.4}\" fill=\"{}\"/>\n",
                    cw + 0.05,
                    ch + 0.05,
                    color(v)
                )
                .unwrap();
            }
        }
    }

    for r in &atlas.regions {
        s.push_str("<polygon points=\"");
        for (k, v) in r.polygon.vertices.iter().enumerate() {
            if k > 0 {
                s.push(' ');
            }
            write!(s, "{:.4},{:.4}", px(v[0]), py(v[1])).unwrap();
        }
        s.push_str("\" fill=\"none\" stroke=\"#1a1a1a\" stroke-width=\"0.8\"/>\n");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ActivationKind, Layer, Network};
    use crate::regions::{enumerate, EnumerateOptions};
    use ndarray::{arr1, arr2};

    fn two_region_net() -> Network {
        Network::new(
            vec![
                Layer::new(arr2(&[[1.0, 0.0]]), arr1(&[0.0]), ActivationKind::Relu),
                Layer::new(arr2(&[[1.0]]), arr1(&[0.0]), ActivationKind::Identity),
            ],
            vec![(-1.0, 1.0), (-1.0, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn polygon_count_matches_regions() {
        let net = two_region_net();
        let atlas = enumerate(&net, &EnumerateOptions::default()).unwrap();
        let svg = render_svg(&atlas, Some(&net), 16);
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn no_hidden_neurons_renders_the_box() {
        let net = Network::new(
            vec![Layer::new(arr2(&[[1.0, 1.0]]), arr1(&[0.0]), ActivationKind::Identity)],
            vec![(0.0, 1.0), (0.0, 1.0)],
        )
        .unwrap();
        let atlas = enumerate(&net, &EnumerateOptions::default()).unwrap();
        let svg = render_svg(&atlas, Some(&net), 8);
        assert_eq!(svg.matches("<polygon").count(), 1);
    }

    #[test]
    fn deterministic_bytes() {
        let net = two_region_net();
        let atlas = enumerate(&net, &EnumerateOptions::default()).unwrap();
        let a = render_svg(&atlas, Some(&net), 32);
        let b = render_svg(&atlas, Some(&net), 32);
        assert_eq!(a, b);
    }
}
