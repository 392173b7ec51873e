//! Deterministic SVG scatter plots of 2-D embeddings.

use rashomon_dr::Embedding;

/// Fixed 20-color palette; class c uses color c mod 20.
const PALETTE: [&str; 20] = [
    "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c", "#98df8a", "#d62728", "#ff9896",
    "#9467bd", "#c5b0d5", "#8c564b", "#c49c94", "#e377c2", "#f7b6d2", "#7f7f7f", "#c7c7c7",
    "#bcbd22", "#dbdb8d", "#17becf", "#9edae5",
];

const SIZE: f64 = 640.0;
const MARGIN: f64 = 40.0;

/// Renders an axis-equal scatter of a 2-D embedding, colored by class when
/// labels are given. Output bytes are a pure function of the inputs.
pub fn render_scatter(e: &Embedding, labels: Option<&[usize]>) -> Result<String, String> {
    if e.dims() != 2 {
        return Err(format!("plot needs a 2-D embedding, got {} dims", e.dims()));
    }
    let coords = e.coords();
    let n = e.n();
    if let Some(l) = labels {
        if l.len() != n {
            return Err(format!("{} labels for {n} points", l.len()));
        }
    }

    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        min_x = min_x.min(coords[[i, 0]]);
        max_x = max_x.max(coords[[i, 0]]);
        min_y = min_y.min(coords[[i, 1]]);
        max_y = max_y.max(coords[[i, 1]]);
    }
    // Axis-equal: one scale for both axes, centered.
    let span = (max_x - min_x).max(max_y - min_y).max(1e-12);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let cx = (min_x + max_x) / 2.0;
    let cy = (min_y + max_y) / 2.0;
    let to_px = |x: f64, y: f64| {
        (
            SIZE / 2.0 + (x - cx) * scale,
            // SVG y grows downward.
            SIZE / 2.0 - (y - cy) * scale,
        )
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for i in 0..n {
        let (px, py) = to_px(coords[[i, 0]], coords[[i, 1]]);
        let color = match labels {
            Some(l) => PALETTE[l[i] % PALETTE.len()],
            None => PALETTE[0],
        };
        svg.push_str(&format!(
            "<circle cx=\"{px:.4}\" cy=\"{py:.4}\" r=\"2.5\" fill=\"{color}\" fill-opacity=\"0.8\"/>\n"
        ));
    }
    if let Some(l) = labels {
        let classes = l.iter().copied().max().map_or(0, |m| m + 1);
        for c in 0..classes {
            let y = 20.0 + 18.0 * c as f64;
            svg.push_str(&format!(
                "<rect x=\"{:.4}\" y=\"{:.4}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
                SIZE - 80.0,
                y,
                PALETTE[c % PALETTE.len()]
            ));
            svg.push_str(&format!(
                "<text x=\"{:.4}\" y=\"{:.4}\" font-size=\"12\" font-family=\"monospace\">{c}</text>\n",
                SIZE - 62.0,
                y + 10.0
            ));
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rashomon_dr::Provenance;

    #[test]
    fn scatter_has_one_circle_per_point() {
        let coords = ndarray::Array2::from_shape_fn((100, 2), |(i, d)| (i * 2 + d) as f64 * 0.01);
        let e = Embedding::new(coords, "t".into(), Provenance::external()).unwrap();
        let labels: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let svg = render_scatter(&e, Some(&labels)).unwrap();
        assert_eq!(svg.matches("<circle").count(), 100);
        assert!(svg.contains("</svg>"));
        // Deterministic bytes.
        assert_eq!(svg, render_scatter(&e, Some(&labels)).unwrap());
    }

    #[test]
    fn unlabeled_plot_is_single_color() {
        let coords = ndarray::Array2::from_shape_fn((10, 2), |(i, d)| (i + d) as f64);
        let e = Embedding::new(coords, "t".into(), Provenance::external()).unwrap();
        let svg = render_scatter(&e, None).unwrap();
        for color in PALETTE.iter().skip(1) {
            assert!(!svg.contains(color));
        }
        assert!(!svg.contains("<text"));
    }

    #[test]
    fn non_planar_embedding_rejected() {
        let coords = ndarray::Array2::zeros((5, 3));
        let e = Embedding::new(coords, "t".into(), Provenance::external()).unwrap();
        assert!(render_scatter(&e, None).is_err());
    }
}
