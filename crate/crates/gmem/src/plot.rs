//! Standalone SVG scatter of 2-D samples.

use std::fmt::Write;

use gmem_core::data::GmmSpec;
use gmem_core::Matrix;

use crate::error::{Error, Result};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 20.0;

fn color(k: usize, modes: usize) -> String {
    format!("hsl({:.1},70%,45%)", 360.0 * k as f64 / modes.max(1) as f64)
}

/// One `circle.sample` per row colored by its nearest mode, and one
/// `path.mode-mean` cross per mode mean.
pub fn scatter_svg(points: &Matrix, spec: &GmmSpec) -> Result<String> {
    if points.cols() != 2 || spec.dim() != 2 {
        return Err(Error::Config("plot needs 2-D samples and a 2-D mixture".into()));
    }
    if points.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite sample coordinates".into()));
    }
    let extent = points
        .data()
        .iter()
        .chain(spec.means().data())
        .fold(1e-9f64, |m, v| m.max(v.abs()))
        * 1.1;
    let scale = (SIZE - 2.0 * MARGIN) / (2.0 * extent);
    let px = |x: f64| MARGIN + (x + extent) * scale;
    let py = |y: f64| SIZE - MARGIN - (y + extent) * scale;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(s, r#"<g class="samples">"#);
    for p in points.row_iter() {
        let k = spec.nearest_mode(p);
        let _ = writeln!(
            s,
            r#"<circle class="sample" cx="{:.2}" cy="{:.2}" r="1.5" fill="{}" fill-opacity="0.6"/>"#,
            px(p[0]),
            py(p[1]),
            color(k, spec.modes())
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="means" stroke="black" stroke-width="2">"#);
    for m in spec.means().row_iter() {
        let (x, y) = (px(m[0]), py(m[1]));
        let _ = writeln!(
            s,
            r#"<path class="mode-mean" d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}"/>"#,
            x - 5.0,
            y - 5.0,
            x + 5.0,
            y + 5.0,
            x - 5.0,
            y + 5.0,
            x + 5.0,
            y - 5.0
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_dimension() {
        let spec = GmmSpec::default_ring();
        assert!(scatter_svg(&Matrix::zeros(3, 3), &spec).is_err());
        let bad = Matrix::from_fn(2, 2, |_, _| f64::NAN);
        assert_eq!(scatter_svg(&bad, &spec).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn empty_set_still_draws_means() {
        let svg = scatter_svg(&Matrix::zeros(0, 2), &GmmSpec::default_ring()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 0);
        assert_eq!(svg.matches("mode-mean").count(), 8);
    }
}
