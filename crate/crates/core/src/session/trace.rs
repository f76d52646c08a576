//! Trace JSONL: a header line followed by one [`TurnRecord`] per line.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{SessionConfig, SessionError, TurnRecord};
use crate::belief::{update_belief, Belief, EvidenceTriple, EvidenceValue};
use crate::kb::{KnowledgeBase, PriorStrategy};
use crate::sensor::ParsedValue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub session_id: String,
    pub config: SessionConfig,
    pub prior_strategy: PriorStrategy,
    pub kb_hash: String,
    pub profile_id: Option<String>,
    /// Triples extracted from the opening narrative, in application order.
    #[serde(default)]
    pub intake: Vec<EvidenceTriple>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub awaiting_opening: bool,
    /// Wall-clock start time; left out in canonical mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

pub fn write_trace_jsonl(out: &mut impl Write, header: &TraceHeader, records: &[TurnRecord]) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, header)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_jsonl(text: &str) -> Result<(TraceHeader, Vec<TurnRecord>), SessionError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).enumerate();
    let (_, first) = lines.next().ok_or_else(|| SessionError::Trace("empty trace".into()))?;
    let header: TraceHeader =
        serde_json::from_str(first).map_err(|e| SessionError::Trace(format!("line 1: {e}")))?;
    let records = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| SessionError::Trace(format!("line {}: {e}", i + 1))))
        .collect::<Result<Vec<TurnRecord>, _>>()?;
    Ok((header, records))
}

/// Recomputes the belief after every recorded turn from the prior and the
/// recorded triples, checking each against the stored top-5 within `tol`.
/// Returns the belief after intake followed by one belief per record.
pub fn replay_trace(
    kb: &KnowledgeBase,
    header: &TraceHeader,
    records: &[TurnRecord],
    tol: f64,
) -> Result<Vec<Belief>, SessionError> {
    let sigma = header.config.numeric_sigma;
    let mut b = kb.prior(&header.prior_strategy)?;
    for t in &header.intake {
        b = update_belief(&b, kb, t, sigma)?;
    }
    let mut out = vec![b.clone()];
    for r in records {
        if r.update_applied {
            let (ParsedValue::Evidence(v), Some(c)) = (&r.parsed.value, r.parsed.confidence) else {
                return Err(SessionError::Trace(format!("turn {}: applied update without a triple", r.turn)));
            };
            if *v == EvidenceValue::Unknown {
                return Err(SessionError::Trace(format!("turn {}: applied an unknown value", r.turn)));
            }
            let triple = EvidenceTriple::new(r.asked_feature.clone(), v.clone(), c, r.parsed.tier, r.turn);
            b = update_belief(&b, kb, &triple, sigma)?;
        }
        for entry in &r.posterior_top5 {
            let p = b
                .prob_of(&entry.disease_id)
                .ok_or_else(|| SessionError::Trace(format!("turn {}: unknown disease", r.turn)))?;
            if (p - entry.prob).abs() > tol {
                return Err(SessionError::Trace(format!(
                    "turn {}: {} replays to {p}, trace has {}",
                    r.turn, entry.disease_id, entry.prob
                )));
            }
        }
        out.push(b.clone());
    }
    Ok(out)
}
