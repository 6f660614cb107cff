//! CSV tables written by the command-line tools.
//!
//! Floats use shortest round-trip notation, so every table is byte-stable.

use protofaith_core::evaluation::{AopcReport, AopcScore, MomentReport, PerturbationCurve};
use protofaith_core::protopnet::{ContributionScores, ForwardOutput};
use protofaith_core::shapley::{AttributionMap, Granularity};

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of UTF-8 fields")
}

/// `row,col,channel,value,std_error`; `channel` is empty for pixel maps and
/// `std_error` for estimates without one.
pub fn attribution_csv(map: &AttributionMap) -> String {
    let w = map.shape[1];
    let rows = map.values.iter().enumerate().map(|(i, &v)| {
        let (row, col, channel) = match map.granularity {
            Granularity::Pixel => (i / w, i % w, String::new()),
            Granularity::Scalar => {
                let c = map.shape[2];
                (i / (w * c), (i / c) % w, (i % c).to_string())
            }
        };
        let se = map.std_error.as_ref().map_or(String::new(), |s| num(s[i]));
        vec![row.to_string(), col.to_string(), channel, num(v), se]
    });
    table(&["row", "col", "channel", "value", "std_error"], rows)
}

/// `quantity,class,prototype_class,prototype_index,value` for one forward pass;
/// `psi` rows hold the contribution scores of `scores.class`.
pub fn forward_csv(out: &ForwardOutput, scores: &ContributionScores, per_class: usize) -> String {
    let mut rows = Vec::new();
    for (c, &v) in out.logits.iter().enumerate() {
        rows.push(vec![
            "logit".into(),
            c.to_string(),
            String::new(),
            String::new(),
            num(v),
        ]);
    }
    for (c, &v) in out.probabilities.iter().enumerate() {
        rows.push(vec![
            "probability".into(),
            c.to_string(),
            String::new(),
            String::new(),
            num(v),
        ]);
    }
    for (p, &v) in out.distances.values.iter().enumerate() {
        let (pc, pk) = (p / per_class, p % per_class);
        rows.push(vec![
            "distance".into(),
            String::new(),
            pc.to_string(),
            pk.to_string(),
            num(v),
        ]);
    }
    for (k, &v) in scores.psi.iter().enumerate() {
        rows.push(vec![
            "psi".into(),
            scores.class.to_string(),
            scores.class.to_string(),
            k.to_string(),
            num(v),
        ]);
    }
    rows.push(vec![
        "log_probability".into(),
        scores.class.to_string(),
        String::new(),
        String::new(),
        num(scores.log_probability),
    ]);
    table(
        &[
            "quantity",
            "class",
            "prototype_class",
            "prototype_index",
            "value",
        ],
        rows,
    )
}

/// `method,prototype_class,prototype_index,source_image,t,removed,s_t,term`, one row per step including `t = 0`.
pub fn curves_csv(method: &str, curves: &[PerturbationCurve]) -> String {
    let rows = curves.iter().flat_map(|c| {
        c.distances.iter().enumerate().map(move |(t, &s)| {
            let (removed, term) = if t == 0 {
                (String::new(), String::new())
            } else {
                (c.removed[t - 1].to_string(), num(c.terms[t - 1]))
            };
            vec![
                method.to_string(),
                c.class.to_string(),
                c.index.to_string(),
                c.source_image.to_string(),
                t.to_string(),
                removed,
                num(s),
                term,
            ]
        })
    });
    table(
        &[
            "method",
            "prototype_class",
            "prototype_index",
            "source_image",
            "t",
            "removed",
            "s_t",
            "term",
        ],
        rows,
    )
}

fn score_row(method: &str, s: &AopcScore) -> Vec<String> {
    vec![
        method.into(),
        s.normalization.name().into(),
        num(s.score),
        num(s.total),
        s.classes.to_string(),
        s.per_class.to_string(),
        s.steps.to_string(),
        s.curves.to_string(),
    ]
}

/// `method,normalization,score,total,classes,per_class,steps,curves` for the selected normalizations.
pub fn aopc_csv(report: &AopcReport, paper: bool, per_term: bool) -> String {
    let mut rows = Vec::new();
    for (name, m) in [("faith", &report.faith), ("legacy", &report.legacy)] {
        if paper {
            rows.push(score_row(name, &m.paper));
        }
        if per_term {
            rows.push(score_row(name, &m.per_term));
        }
    }
    table(
        &[
            "method",
            "normalization",
            "score",
            "total",
            "classes",
            "per_class",
            "steps",
            "curves",
        ],
        rows,
    )
}

/// `kind,case,closed_mean,closed_var,mc_mean,mc_var,z_mean,z_var,relative_mean,pass`.
pub fn moments_csv(report: &MomentReport) -> String {
    let rows = report.checks.iter().map(|c| {
        vec![
            c.case.kind().name().into(),
            c.case.describe(),
            num(c.closed.mean),
            num(c.closed.var),
            num(c.mc_mean),
            num(c.mc_var),
            num(c.z_mean),
            num(c.z_var),
            num(c.relative_mean),
            c.pass.to_string(),
        ]
    });
    table(
        &[
            "kind",
            "case",
            "closed_mean",
            "closed_var",
            "mc_mean",
            "mc_var",
            "z_mean",
            "z_var",
            "relative_mean",
            "pass",
        ],
        rows,
    )
}
