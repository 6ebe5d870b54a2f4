//! Minimal deterministic SVG line plots for curve sets.

use partscope_core::evalkit::{Curve, CurveSet};

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 40.0;

fn polyline(curve: &Curve, color: &str, label: &str) -> String {
    let pts: Vec<String> = curve
        .fractions
        .iter()
        .zip(&curve.scores)
        .map(|(f, s)| {
            let x = MARGIN + f * (W - 2.0 * MARGIN);
            let y = H - MARGIN - f64::from(*s).clamp(0.0, 1.0) * (H - 2.0 * MARGIN);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"><title>{label}</title></polyline>\n",
        pts.join(" ")
    )
}

/// Deletion/insertion/preservation curves (solid) with an optional baseline
/// set (dashed gray substitute colors).
pub fn curve_svg(title: &str, method: &CurveSet, baseline: Option<&CurveSet>) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{b}\" x2=\"{m}\" y2=\"{t}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-size=\"12\" font-family=\"sans-serif\">{title}</text>\n",
        MARGIN
    ));
    svg.push_str(&polyline(
        &method.deletion,
        "#c0392b",
        &format!("deletion auc {:.4}", method.deletion.auc),
    ));
    svg.push_str(&polyline(
        &method.insertion,
        "#27ae60",
        &format!("insertion auc {:.4}", method.insertion.auc),
    ));
    svg.push_str(&polyline(
        &method.preservation,
        "#2980b9",
        &format!("preservation auc {:.4}", method.preservation.auc),
    ));
    if let Some(base) = baseline {
        svg.push_str(&polyline(
            &base.deletion,
            "#b0a8a0",
            &format!("baseline deletion auc {:.4}", base.deletion.auc),
        ));
        svg.push_str(&polyline(
            &base.insertion,
            "#7f8c8d",
            &format!("baseline insertion auc {:.4}", base.insertion.auc),
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
