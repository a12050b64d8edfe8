use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nse::Trace;

/// Memory contents after step `t`, each slot shown as a composition expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepRow {
    pub t: usize,
    /// Token consumed at this step (`None` for the initial row).
    pub input: Option<String>,
    /// Slot the step wrote to, i.e. the argmax of its key vector.
    pub highlighted: Option<usize>,
    pub slots: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryTable {
    pub rows: Vec<StepRow>,
}

impl MemoryTable {
    pub fn cell(&self, t: usize, slot: usize) -> Option<&str> {
        self.rows.get(t).and_then(|r| r.slots.get(slot)).map(String::as_str)
    }

    /// One block per step; the written slot is marked with `*`.
    ///
    /// ```text
    /// t=0
    ///    0  <S>
    ///    1  A
    /// t=1 input=<S>
    ///    0  <S>
    /// *  1  (<S> A)
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            match &r.input {
                Some(w) => {
                    let _ = writeln!(s, "t={} input={w}", r.t);
                }
                None => {
                    let _ = writeln!(s, "t={}", r.t);
                }
            }
            for (j, cell) in r.slots.iter().enumerate() {
                let mark = if r.highlighted == Some(j) { '*' } else { ' ' };
                let _ = writeln!(s, "{mark} {j:>2}  {cell}");
            }
        }
        s
    }
}

/// Replays a trace over the initial token list: when step `t` reads `w` and
/// its key vector peaks at slot `j`, slot `j` becomes `(w old)`, where `old`
/// is what the slot showed before. The first row is the token list itself.
pub fn dump_memory_states(trace: &Trace) -> Result<MemoryTable> {
    let tokens = trace
        .tokens
        .as_ref()
        .ok_or_else(|| Error::State("trace was recorded without token lineage".into()))?;
    let mut slots = tokens.clone();
    let mut rows = vec![StepRow {
        t: 0,
        input: None,
        highlighted: None,
        slots: slots.clone(),
    }];
    for (i, r) in trace.records.iter().enumerate() {
        if r.argmax >= slots.len() {
            return Err(Error::Input(format!(
                "step {} addresses slot {} of a {}-slot memory",
                r.step,
                r.argmax,
                slots.len()
            )));
        }
        slots[r.argmax] = format!("({} {})", r.token, slots[r.argmax]);
        rows.push(StepRow {
            t: i + 1,
            input: Some(r.token.clone()),
            highlighted: Some(r.argmax),
            slots: slots.clone(),
        });
    }
    Ok(MemoryTable { rows })
}
