//! Pose-error, smoothness and physics-violation metrics.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::hand::{HandModel, WRIST};
use crate::motion::{MotionSequence, FINGER_DIM, THETA_DIM};
use crate::physics::{grasp_pairs, kinetics_value, MotionState};

pub type Points = Vec<[f64; 3]>;

fn v3(p: [f64; 3]) -> Vector3<f64> {
    Vector3::from(p)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (v3(a) - v3(b)).norm()
}

/// Similarity (or rigid) transform of `pred` best matching `gt` in least squares.
pub fn procrustes_align(pred: &[[f64; 3]], gt: &[[f64; 3]], with_scale: bool) -> Result<Points> {
    if pred.len() != gt.len() {
        return Err(CoreError::input(format!(
            "procrustes: {} predicted vs {} reference points",
            pred.len(),
            gt.len()
        )));
    }
    let k = gt.len();
    if k < 3 {
        return Err(CoreError::Alignment(format!("need at least 3 points, got {k}")));
    }
    let n = k as f64;
    let mp = pred.iter().map(|p| v3(*p)).sum::<Vector3<f64>>() / n;
    let mg = gt.iter().map(|p| v3(*p)).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut scatter_g = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (pc, gc) = (v3(*p) - mp, v3(*g) - mg);
        cov += gc * pc.transpose();
        scatter_g += gc * gc.transpose();
        var_p += pc.norm_squared();
    }
    let sg = scatter_g.symmetric_eigenvalues();
    let (lo, hi) = sorted_pair(sg);
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(CoreError::Alignment("reference points are collinear".into()));
    }
    if !(var_p > 0.0) {
        return Err(CoreError::Alignment("predicted points coincide".into()));
    }
    // the optimum is the identity; skip the SVD so it is exact rather than round-off
    if pred == gt {
        return Ok(pred.to_vec());
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = if (u * vt).determinant() < 0.0 { -1.0 } else { 1.0 };
    let s_fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = u * s_fix * vt;
    let scale = if with_scale {
        let sv = svd.singular_values;
        (sv[0] + sv[1] + d * sv[2]) / var_p
    } else {
        1.0
    };
    let t = mg - scale * r * mp;
    Ok(pred.iter().map(|p| (scale * r * v3(*p) + t).into()).collect())
}

/// Second-largest and largest of three eigenvalues.
fn sorted_pair(e: Vector3<f64>) -> (f64, f64) {
    let mut v = [e[0], e[1], e[2]];
    v.sort_by(f64::total_cmp);
    (v[1], v[2])
}

fn check_frames(op: &str, a: &[Points], b: &[Points]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(CoreError::input(format!("{op}: shape mismatch between prediction and reference")));
    }
    if a.is_empty() {
        return Err(CoreError::input(format!("{op}: empty input")));
    }
    Ok(())
}

fn relative(frames: &[Points]) -> Vec<Points> {
    frames
        .iter()
        .map(|f| {
            let root = f[WRIST];
            f.iter().map(|p| [p[0] - root[0], p[1] - root[1], p[2] - root[2]]).collect()
        })
        .collect()
}

/// Mean per-joint position error, mm.
pub fn mje(pred: &[Points], gt: &[Points], root_relative: bool) -> Result<f64> {
    check_frames("mje", pred, gt)?;
    let (p, g) = if root_relative {
        (relative(pred), relative(gt))
    } else {
        (pred.to_vec(), gt.to_vec())
    };
    Ok(mean_distance(&p, &g))
}

fn mean_distance(a: &[Points], b: &[Points]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            total += dist(*p, *q);
            count += 1;
        }
    }
    total / count as f64
}

/// Mean point error after per-frame alignment.
pub fn aligned_error(pred: &[Points], gt: &[Points], with_scale: bool) -> Result<f64> {
    check_frames("aligned_error", pred, gt)?;
    let aligned = align_frames(pred, gt, with_scale)?;
    Ok(mean_distance(&aligned, gt))
}

pub fn align_frames(pred: &[Points], gt: &[Points], with_scale: bool) -> Result<Vec<Points>> {
    pred.iter()
        .zip(gt)
        .map(|(p, g)| procrustes_align(p, g, with_scale))
        .collect()
}

/// Mean norm of the discrete-acceleration difference, mm per frame squared.
pub fn accl_error(pred: &[Points], gt: &[Points], root_relative: bool) -> Result<f64> {
    check_frames("accl_error", pred, gt)?;
    if pred.len() < 3 {
        return Err(CoreError::TooShort { need: 3, got: pred.len() });
    }
    let (p, g) = if root_relative {
        (relative(pred), relative(gt))
    } else {
        (pred.to_vec(), gt.to_vec())
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 1..p.len() - 1 {
        for j in 0..p[t].len() {
            let acc = |s: &[Points]| v3(s[t + 1][j]) - 2.0 * v3(s[t][j]) + v3(s[t - 1][j]);
            total += (acc(&p) - acc(&g)).norm();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Direction-change violation in degrees on `[T, 48]` angles.
pub fn kin_metric(theta: &[f64], labels: &[MotionState]) -> f64 {
    kinetics_value(theta, THETA_DIM, labels).to_degrees()
}

/// Mean absolute finger-angle change over stable-grasp pairs, degrees, on `[T, 45]`.
pub fn sta_metric(finger_theta: &[f64], labels: &[MotionState]) -> f64 {
    let pairs = grasp_pairs(labels);
    if pairs.is_empty() {
        return 0.0;
    }
    let d = FINGER_DIM;
    let total: f64 = pairs
        .iter()
        .map(|&t| {
            (0..d)
                .map(|k| (finger_theta[(t + 1) * d + k] - finger_theta[t * d + k]).abs())
                .sum::<f64>()
                / d as f64
        })
        .sum();
    (total / pairs.len() as f64).to_degrees()
}

/// Fraction of points closer than `threshold` mm, averaged over frames.
pub fn f_score(pred: &[Points], gt: &[Points], threshold: f64) -> Result<f64> {
    check_frames("f_score", pred, gt)?;
    let per_frame: f64 = pred
        .iter()
        .zip(gt)
        .map(|(x, y)| {
            let hits = x.iter().zip(y).filter(|(p, q)| dist(**p, **q) < threshold).count();
            hits as f64 / x.len() as f64
        })
        .sum();
    Ok(per_frame / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Subtract the wrist before MJE and ACCL.
    pub root_relative: bool,
    /// Similarity rather than rigid alignment for the aligned metrics.
    pub with_scale: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            root_relative: true,
            with_scale: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub name: String,
    pub frames: usize,
    pub mje: f64,
    pub p_mje: f64,
    pub p_mve: f64,
    pub accl: f64,
    pub kin: f64,
    pub sta: f64,
    pub f5: f64,
    pub f15: f64,
}

impl SequenceMetrics {
    fn values(&self) -> [f64; 8] {
        [self.mje, self.p_mje, self.p_mve, self.accl, self.kin, self.sta, self.f5, self.f15]
    }
}

pub const METRIC_NAMES: [&str; 8] = ["mje", "p_mje", "p_mve", "accl", "kin", "sta", "f5", "f15"];

/// Joints and mesh of every frame.
pub fn kinematics(model: &HandModel, seq: &MotionSequence) -> Result<(Vec<Points>, Vec<Points>)> {
    let mut joints = Vec::with_capacity(seq.len());
    let mut verts = Vec::with_capacity(seq.len());
    for pose in seq.poses() {
        joints.push(model.forward_kinematics(&pose)?);
        verts.push(model.skin_mesh(&pose)?);
    }
    Ok((joints, verts))
}

/// All metrics of one predicted sequence against its reference and labels.
pub fn evaluate_sequence(
    name: &str,
    pred: &MotionSequence,
    gt: &MotionSequence,
    gt_labels: &[MotionState],
    model: &HandModel,
    opts: &EvalOptions,
) -> Result<SequenceMetrics> {
    if pred.len() != gt.len() || gt_labels.len() != gt.len() {
        return Err(CoreError::input(format!(
            "{name}: {} predicted frames, {} reference frames, {} labels",
            pred.len(),
            gt.len(),
            gt_labels.len()
        )));
    }
    let (pj, pv) = kinematics(model, pred)?;
    let (gj, gv) = kinematics(model, gt)?;
    let aligned_v = align_frames(&pv, &gv, opts.with_scale)?;
    Ok(SequenceMetrics {
        name: name.to_string(),
        frames: pred.len(),
        mje: mje(&pj, &gj, opts.root_relative)?,
        p_mje: aligned_error(&pj, &gj, opts.with_scale)?,
        p_mve: mean_distance(&aligned_v, &gv),
        accl: accl_error(&pj, &gj, opts.root_relative)?,
        kin: kin_metric(&pred.theta(), gt_labels),
        sta: sta_metric(&pred.finger_theta(), gt_labels),
        f5: f_score(&aligned_v, &gv, 5.0)?,
        f15: f_score(&aligned_v, &gv, 15.0)?,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mje: f64,
    pub p_mje: f64,
    pub p_mve: f64,
    pub accl: f64,
    pub kin: f64,
    pub sta: f64,
    pub f5: f64,
    pub f15: f64,
    pub sequences: Vec<SequenceMetrics>,
}

impl EvalReport {
    /// Aggregate is the unweighted mean of the per-sequence rows.
    pub fn from_rows(rows: Vec<SequenceMetrics>) -> Self {
        let n = rows.len().max(1) as f64;
        let mut acc = [0.0; 8];
        for r in &rows {
            acc.iter_mut().zip(r.values()).for_each(|(a, v)| *a += v);
        }
        let m = acc.map(|a| a / n);
        EvalReport {
            mje: m[0],
            p_mje: m[1],
            p_mve: m[2],
            accl: m[3],
            kin: m[4],
            sta: m[5],
            f5: m[6],
            f15: m[7],
            sequences: rows,
        }
    }

    pub fn aggregate(&self) -> SequenceMetrics {
        SequenceMetrics {
            name: "mean".into(),
            frames: self.sequences.iter().map(|s| s.frames).sum(),
            mje: self.mje,
            p_mje: self.p_mje,
            p_mve: self.p_mve,
            accl: self.accl,
            kin: self.kin,
            sta: self.sta,
            f5: self.f5,
            f15: self.f15,
        }
    }

    /// Aligned-column table, one row per sequence and a final mean row.
    pub fn table(&self) -> String {
        let rows: Vec<SequenceMetrics> = self.sequences.iter().cloned().chain([self.aggregate()]).collect();
        let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(8);
        let mut out = format!("{:<width$}", "sequence");
        for name in METRIC_NAMES {
            let _ = write!(out, " {name:>9}");
        }
        out.push('\n');
        for r in rows {
            let _ = write!(out, "{:<width$}", r.name);
            for v in r.values() {
                let _ = write!(out, " {v:>9.3}");
            }
            out.push('\n');
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("sequence,frames");
        METRIC_NAMES.iter().for_each(|n| {
            out.push(',');
            out.push_str(n);
        });
        out.push('\n');
        for r in &self.sequences {
            let _ = write!(out, "{},{}", r.name, r.frames);
            for v in r.values() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Minimal SVG line charts.
pub mod plot {
    use std::fmt::Write as _;

    use crate::physics::{MotionState, NUM_STATES};

    const W: f64 = 640.0;
    const H: f64 = 240.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#7f7f7f"];

    /// One or more series against frame index.
    pub fn line_chart(title: &str, y_label: &str, series: &[(&str, &[f64])]) -> String {
        let finite = series.iter().flat_map(|s| s.1.iter().copied()).filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0).max(-1.0), lo.max(0.0) + 1.0) };
        let len = series.iter().map(|s| s.1.len()).max().unwrap_or(1).max(2);
        let x = |t: usize| PAD + (W - 2.0 * PAD) * t as f64 / (len - 1) as f64;
        let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
        let mut svg = header(title);
        axes(&mut svg, y_label, lo, hi, len);
        for (i, (name, values)) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = values
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(t, v)| format!("{:.2},{:.2}", x(t), y(*v)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.0}" y="{:.0}" font-size="11" fill="{color}">{}</text>"#,
                W - PAD - 120.0,
                PAD + 14.0 * i as f64,
                escape(name)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }

    /// State index per frame as a step plot.
    pub fn state_timeline(title: &str, tracks: &[(&str, &[MotionState])]) -> String {
        let as_f64: Vec<(String, Vec<f64>)> = tracks
            .iter()
            .map(|(n, l)| (n.to_string(), l.iter().map(|s| s.index() as f64).collect()))
            .collect();
        let series: Vec<(&str, &[f64])> = as_f64.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
        let mut svg = line_chart(title, "state", &series);
        let legend: Vec<String> = MotionState::ALL
            .iter()
            .take(NUM_STATES)
            .map(|s| format!("{}={}", s.index(), s.name()))
            .collect();
        let tail = format!(
            r#"<text x="{PAD}" y="{:.0}" font-size="10">{}</text>"#,
            H - 6.0,
            legend.join("  ")
        );
        svg = svg.replace("</svg>\n", &format!("{tail}\n</svg>\n"));
        svg
    }

    fn header(title: &str) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{PAD}\" y=\"20\" font-size=\"13\">{}</text>\n",
            escape(title)
        )
    }

    fn axes(svg: &mut String, y_label: &str, lo: f64, hi: f64, len: usize) {
        let _ = writeln!(
            svg,
            r#"<path d="M{PAD},{PAD} L{PAD},{b} L{r},{b}" stroke="black" fill="none"/>"#,
            b = H - PAD,
            r = W - PAD
        );
        let _ = writeln!(svg, r#"<text x="4" y="{:.0}" font-size="10">{hi:.3}</text>"#, PAD);
        let _ = writeln!(svg, r#"<text x="4" y="{:.0}" font-size="10">{lo:.3}</text>"#, H - PAD);
        let _ = writeln!(
            svg,
            r#"<text x="{:.0}" y="{:.0}" font-size="10">frame (0..{})</text>"#,
            W / 2.0,
            H - PAD + 16.0,
            len - 1
        );
        let _ = writeln!(svg, r#"<text x="4" y="{:.0}" font-size="10">{}</text>"#, PAD - 8.0, escape(y_label));
    }

    fn escape(s: &str) -> String {
        s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
    }
}
