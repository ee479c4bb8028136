//! Prompt construction and response parsing for the act and cooperate
//! queries.
//!
//! Templates live in `assets/` as plain text. A line containing the row
//! placeholder (`<k>` or `<i>`) is expanded once per entry and the `...`
//! line after it is dropped; everything else is copied verbatim after
//! placeholder substitution.

use std::sync::OnceLock;

use regex::Regex;

use super::{ActGuidance, ActRequest, CoopRequest};

pub const ACT_TEMPLATE: &str = include_str!("../../assets/act_prompt.txt");
pub const COOP_TEMPLATE: &str = include_str!("../../assets/coop_prompt.txt");

/// Fixed literal lines of the act template (everything without a placeholder).
pub fn act_fixed_lines() -> Vec<&'static str> {
    fixed_lines(ACT_TEMPLATE)
}

/// Fixed literal lines of the cooperation template.
pub fn coop_fixed_lines() -> Vec<&'static str> {
    fixed_lines(COOP_TEMPLATE)
}

fn fixed_lines(template: &'static str) -> Vec<&'static str> {
    template
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.contains('<') && l.trim() != "...")
        .collect()
}

fn expand(template: &str, row_marker: &str, rows: &[String], subst: impl Fn(&str) -> String) -> String {
    let mut out = String::with_capacity(template.len() + rows.len() * 64);
    let mut lines = template.lines().peekable();
    while let Some(line) = lines.next() {
        if line.contains(row_marker) {
            for row in rows {
                out.push_str(row);
                out.push('\n');
            }
            if lines.peek().map(|l| l.trim()) == Some("...") {
                lines.next();
            }
            continue;
        }
        out.push_str(&subst(line));
        out.push('\n');
    }
    out
}

pub fn build_act_prompt(req: &ActRequest) -> String {
    let rows: Vec<String> = req
        .trajectory
        .iter()
        .map(|p| {
            format!(
                "Iteration {}: fitness={:.6e}, disagreement={:.6e} |",
                p.iteration, p.fitness, p.disagreement
            )
        })
        .collect();
    expand(ACT_TEMPLATE, "<k>", &rows, |line| {
        line.replace("<iter>", &req.iteration.to_string())
            .replace("<d>", &format!("{:.3}", req.current_d))
            .replace("<c>", &format!("{:.3}", req.current_c))
    })
}

pub fn build_coop_prompt(req: &CoopRequest) -> String {
    let rows: Vec<String> = req
        .neighbor_ids
        .iter()
        .zip(&req.stats)
        .map(|(id, s)| {
            format!(
                "Neighbor ID {}: avg fitness={:.6e}, avg disagreement={:.6e} |",
                id, s.avg_fitness, s.avg_disagreement
            )
        })
        .collect();
    expand(COOP_TEMPLATE, "<i>", &rows, |line| {
        line.replace("<N>", &req.neighbor_ids.len().to_string())
    })
}

const NUM: &str = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?";

fn pair_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(&format!(r"\(\s*({NUM})\s*,\s*({NUM})\s*\)")).expect("valid regex"))
}

fn list_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]]*)\]").expect("valid regex"))
}

/// Why a model response was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseFailure {
    NoMatch,
    BadNumber(String),
    WrongLength { expected: usize, found: usize },
}

/// Last parenthesized pair of reals, clamped into the guidance ranges.
pub fn parse_act_response(text: &str) -> Result<ActGuidance, ParseFailure> {
    let caps = pair_regex().captures_iter(text).last().ok_or(ParseFailure::NoMatch)?;
    let num = |i: usize| -> Result<f64, ParseFailure> {
        let s = &caps[i];
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ParseFailure::BadNumber(s.to_string()))
    };
    Ok(ActGuidance::clamped(num(1)?, num(2)?))
}

/// Last bracketed numeric list of exactly `expected_len` finite values.
/// Values are returned as given; normalization happens downstream.
pub fn parse_coop_response(text: &str, expected_len: usize) -> Result<Vec<f64>, ParseFailure> {
    let caps = list_regex().captures_iter(text).last().ok_or(ParseFailure::NoMatch)?;
    let body = caps[1].trim();
    let values = if body.is_empty() {
        Vec::new()
    } else {
        body.split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ParseFailure::BadNumber(tok.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.len() != expected_len {
        return Err(ParseFailure::WrongLength {
            expected: expected_len,
            found: values.len(),
        });
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::{NeighborStats, TrajectoryPoint};

    fn act_req(points: usize) -> ActRequest {
        ActRequest {
            iteration: 120,
            current_d: 0.7,
            current_c: 1.3,
            trajectory: (0..points)
                .map(|k| TrajectoryPoint {
                    iteration: 100 + k,
                    fitness: 10.0 / (k + 1) as f64,
                    disagreement: 0.5,
                })
                .collect(),
            disagreement_quartiles: (0.1, 1.0),
        }
    }

    #[test]
    fn act_prompt_literals() {
        let p = build_act_prompt(&act_req(3));
        assert!(p.contains("Constraints: d in [0.5, 1], c in [1, 1.8]."));
        assert!(p.contains("Example: (0.7, 1.3)"));
        assert!(p.contains("Current iteration: around 120."));
        assert!(p.contains("Current parameters: d=0.700, c=1.300."));
        assert_eq!(p.lines().filter(|l| l.starts_with("Iteration ")).count(), 3);
        assert!(!p.contains("...\n"));
        assert_eq!(p, build_act_prompt(&act_req(3)));
    }

    #[test]
    fn coop_prompt_literals() {
        let req = CoopRequest {
            owner: 4,
            neighbor_ids: vec![3, 5],
            stats: vec![
                NeighborStats { avg_fitness: 1.0, avg_disagreement: 0.2 },
                NeighborStats { avg_fitness: 2.0, avg_disagreement: 0.1 },
            ],
            own: NeighborStats { avg_fitness: 1.5, avg_disagreement: 0.3 },
        };
        let p = build_coop_prompt(&req);
        assert!(p.contains("Number of neighbors: 2."));
        assert!(p.contains("Neighbor ID 3: avg fitness=1.000000e0, avg disagreement=2.000000e-1 |"));
        assert!(p.contains("Please return the updated weights in the format [w1, w2, ..., wN]."));
        for line in coop_fixed_lines() {
            assert!(p.contains(line), "missing `{line}`");
        }
    }

    #[test]
    fn act_parse_examples() {
        assert_eq!(parse_act_response("(0.7, 1.3)").unwrap(), ActGuidance { d: 0.7, c: 1.3 });
        assert_eq!(
            parse_act_response("<think>maybe (0.6, 1.2)?</think> final: (0.9, 1.1)").unwrap(),
            ActGuidance { d: 0.9, c: 1.1 }
        );
        assert_eq!(parse_act_response("(2.0, 5.0)").unwrap(), ActGuidance { d: 1.0, c: 1.8 });
        assert_eq!(parse_act_response("no numbers"), Err(ParseFailure::NoMatch));
        assert_eq!(parse_act_response("(0.7; 1.3)"), Err(ParseFailure::NoMatch));
    }

    #[test]
    fn coop_parse_examples() {
        assert_eq!(parse_coop_response("[0.3, 0.5, 0.2]", 3).unwrap(), vec![0.3, 0.5, 0.2]);
        assert!(matches!(parse_coop_response("[0.3, 0.5]", 3), Err(ParseFailure::WrongLength { .. })));
        assert_eq!(
            parse_coop_response("weights: [0.25, 0.25, 0.5] done", 3).unwrap(),
            vec![0.25, 0.25, 0.5]
        );
        assert!(parse_coop_response("[0.1, inf, 0.3]", 3).is_err());
        assert!(parse_coop_response("[0.1, NaN, 0.3]", 3).is_err());
        assert!(parse_coop_response("[]", 2).is_err());
    }
}
