//! SVG figures of one record: observed history, forecast and true future.

use std::fmt::Write as _;
use std::path::Path;

use crate::pose::{FrameSize, Pose, SKELETON_EDGES};

use super::IoError;

pub const HISTORY_COLOR: &str = "#4c78a8";
pub const PREDICTION_COLOR: &str = "#e45756";
pub const TRUTH_COLOR: &str = "#54a24b";

fn skeleton(out: &mut String, pose: &Pose, color: &str, opacity: f64) {
    let _ = writeln!(out, "  <g stroke=\"{color}\" stroke-opacity=\"{opacity:.2}\">");
    for &(a, b) in &SKELETON_EDGES {
        let (p, q) = (pose.joints[a], pose.joints[b]);
        if p.is_missing() || q.is_missing() {
            continue;
        }
        let _ = writeln!(
            out,
            "    <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/>",
            p.u, p.v, q.u, q.v
        );
    }
    out.push_str("  </g>\n");
}

fn layer(out: &mut String, id: &str, poses: &[Pose], color: &str) {
    let _ = writeln!(out, " <g id=\"{id}\">");
    let n = poses.len().max(1) as f64;
    for (i, p) in poses.iter().enumerate() {
        // Later frames drawn more opaque.
        skeleton(out, p, color, 0.25 + 0.75 * (i + 1) as f64 / n);
    }
    out.push_str(" </g>\n");
}

/// Renders the figure. With no predicted frames only the history is drawn;
/// otherwise `prediction` and `truth` must have the same length.
pub fn render_svg(history: &[Pose], prediction: &[Pose], truth: &[Pose], frame: FrameSize) -> Result<String, IoError> {
    if !prediction.is_empty() && prediction.len() != truth.len() {
        return Err(IoError::Schema(format!(
            "{} predicted frames but {} true future frames",
            prediction.len(),
            truth.len()
        )));
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" fill=\"none\" stroke-width=\"2\" stroke-linecap=\"round\">",
        w = frame.width,
        h = frame.height
    );
    s.push_str(" <rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    layer(&mut s, "history", history, HISTORY_COLOR);
    if !prediction.is_empty() {
        layer(&mut s, "truth", truth, TRUTH_COLOR);
        layer(&mut s, "prediction", prediction, PREDICTION_COLOR);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg(path: &Path, history: &[Pose], prediction: &[Pose], truth: &[Pose], frame: FrameSize) -> Result<(), IoError> {
    let svg = render_svg(history, prediction, truth, frame)?;
    std::fs::write(path, svg).map_err(IoError::io(path))
}
