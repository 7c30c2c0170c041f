use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::graph::TaskMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Clean,
    Repaired,
    Fallback,
}

/// Parsed model output. `labels` are positions in the candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub mechanism: String,
    pub labels: Vec<usize>,
    pub status: ParseStatus,
}

fn tokens(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn normalize(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c == '.' || c == '"' || c == '\'' || c == '*')
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Candidate sharing the most distinct lowercase word tokens with `answer`,
/// ties to the earlier candidate; `None` when nothing overlaps.
pub fn best_overlap(answer: &str, candidates: &[String]) -> Option<usize> {
    let a = tokens(answer);
    let mut best: Option<(usize, usize)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let n = tokens(c).intersection(&a).count();
        if n > 0 && best.is_none_or(|(b, _)| n > b) {
            best = Some((n, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Finds `marker` case-insensitively (ASCII), returning the byte offset.
fn find_marker(text: &str, marker: &str) -> Option<usize> {
    text.to_ascii_lowercase().find(&marker.to_ascii_lowercase())
}

enum Match {
    Exact(usize),
    Overlap(usize),
    None,
}

fn match_item(item: &str, candidates: &[String], normalized: &[String]) -> Match {
    let n = normalize(item);
    if let Some(i) = normalized.iter().position(|c| *c == n) {
        return Match::Exact(i);
    }
    // a bare candidate number
    if let Ok(k) = n.trim_end_matches('.').parse::<usize>() {
        if (1..=candidates.len()).contains(&k) {
            return Match::Exact(k - 1);
        }
    }
    match best_overlap(item, candidates) {
        Some(i) => Match::Overlap(i),
        None => Match::None,
    }
}

/// Reads `Mechanism:` and `Answer:` sections and maps answers onto the
/// candidates: exact (case-insensitive) matches are clean, token-overlap
/// matches are repaired, and anything unusable falls back to the first
/// candidate. Multilabel answers are padded from candidate order up to
/// `answers` distinct labels.
pub fn parse_prediction(raw: &str, candidates: &[String], mode: TaskMode, answers: usize) -> ParsedAnswer {
    assert!(!candidates.is_empty(), "candidate list must be nonempty");
    let normalized: Vec<String> = candidates.iter().map(|c| normalize(c)).collect();
    let answer_at = find_marker(raw, "answer:");
    let mech_at = find_marker(raw, "mechanism:");
    let mechanism = match (mech_at, answer_at) {
        (Some(m), Some(a)) if m < a => raw[m + "mechanism:".len()..a].trim(),
        (Some(m), _) => raw[m + "mechanism:".len()..].trim(),
        (None, Some(a)) => raw[..a].trim(),
        (None, None) => raw.trim(),
    }
    .to_string();

    let fallback = |mechanism: String| {
        let labels = match mode {
            TaskMode::Multiclass => vec![0],
            TaskMode::Multilabel => (0..answers.min(candidates.len())).collect(),
        };
        ParsedAnswer {
            mechanism,
            labels,
            status: ParseStatus::Fallback,
        }
    };
    let Some(a) = answer_at else {
        return fallback(mechanism);
    };
    let answer_text = raw[a + "answer:".len()..].lines().next().unwrap_or("").trim();

    match mode {
        TaskMode::Multiclass => match match_item(answer_text, candidates, &normalized) {
            Match::Exact(i) => ParsedAnswer {
                mechanism,
                labels: vec![i],
                status: ParseStatus::Clean,
            },
            Match::Overlap(i) => ParsedAnswer {
                mechanism,
                labels: vec![i],
                status: ParseStatus::Repaired,
            },
            Match::None => fallback(mechanism),
        },
        TaskMode::Multilabel => {
            let sep = if answer_text.contains(';') { ';' } else { ',' };
            let mut labels = Vec::new();
            let mut repaired = false;
            for item in answer_text.split(sep).filter(|s| !s.trim().is_empty()) {
                let i = match match_item(item, candidates, &normalized) {
                    Match::Exact(i) => i,
                    Match::Overlap(i) => {
                        repaired = true;
                        i
                    }
                    Match::None => {
                        repaired = true;
                        continue;
                    }
                };
                if !labels.contains(&i) && labels.len() < answers {
                    labels.push(i);
                }
            }
            if labels.is_empty() {
                return fallback(mechanism);
            }
            let want = answers.min(candidates.len());
            for i in 0..candidates.len() {
                if labels.len() >= want {
                    break;
                }
                if !labels.contains(&i) {
                    labels.push(i);
                    repaired = true;
                }
            }
            ParsedAnswer {
                mechanism,
                labels,
                status: if repaired {
                    ParseStatus::Repaired
                } else {
                    ParseStatus::Clean
                },
            }
        }
    }
}
