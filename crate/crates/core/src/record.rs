//! Per-step trial logs and their CSV form.
//!
//! CSV columns, with vector fields expanded to 0-based indexed columns:
//!
//! ```text
//! k,x0..x{n-1},u_ce0..,u_cb0..,u_pr0..,w0..w{n-1},breaker,stage_cost
//! ```
//!
//! `breaker` is `0` when feedback passes through, `1` on a dwell step
//! (counter running) and `2` on the step the breaker trips. Floats are
//! written in shortest round-trip form, so a log read back is bit-identical
//! to the in-memory one. The terminal state `x_{T+1}` and the gain history
//! are not part of the CSV.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::controller::{GainOutcome, InputBreakdown};
use crate::error::{Error, Result};
use crate::plant::PlantSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BreakerFlag {
    Inactive,
    Dwell,
    Triggered,
}

impl BreakerFlag {
    pub fn from_breakdown(b: &InputBreakdown) -> Self {
        match (b.breaker_active, b.breaker_triggered_now) {
            (_, true) => BreakerFlag::Triggered,
            (true, false) => BreakerFlag::Dwell,
            (false, false) => BreakerFlag::Inactive,
        }
    }

    /// Feedback was zeroed at this step.
    pub fn is_active(self) -> bool {
        self != BreakerFlag::Inactive
    }

    pub fn code(self) -> u8 {
        match self {
            BreakerFlag::Inactive => 0,
            BreakerFlag::Dwell => 1,
            BreakerFlag::Triggered => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(BreakerFlag::Inactive),
            1 => Some(BreakerFlag::Dwell),
            2 => Some(BreakerFlag::Triggered),
            _ => None,
        }
    }
}

/// A gain change: `gain` is in effect from step `k` until the next entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRecord {
    pub k: u64,
    pub gain: DMatrix<f64>,
    pub outcome: GainOutcome,
}

#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub k: u64,
    pub x: &'a [f64],
    pub u_ce: &'a [f64],
    pub u_cb: &'a [f64],
    pub u_pr: &'a [f64],
    pub w: &'a [f64],
    pub breaker: BreakerFlag,
    pub stage_cost: f64,
}

impl StepView<'_> {
    /// Applied input `u_cb + u_pr`.
    pub fn u(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.u_cb.len(),
            self.u_cb.iter().zip(self.u_pr).map(|(a, b)| a + b),
        )
    }
}

/// Complete log of one trial, rows `k = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    n: usize,
    m: usize,
    data: Vec<f64>,
    breaker: Vec<BreakerFlag>,
    stage_cost: Vec<f64>,
    final_state: Option<DVector<f64>>,
    gains: Vec<GainRecord>,
    gain_history: bool,
}

impl TrialRecord {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            data: Vec::new(),
            breaker: Vec::new(),
            stage_cost: Vec::new(),
            final_state: None,
            gains: Vec::new(),
            gain_history: false,
        }
    }

    pub fn with_capacity(n: usize, m: usize, steps: usize) -> Self {
        let mut rec = Self::new(n, m);
        rec.data.reserve(steps * rec.stride());
        rec.breaker.reserve(steps);
        rec.stage_cost.reserve(steps);
        rec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn stride(&self) -> usize {
        2 * self.n + 3 * self.m
    }

    /// Number of logged steps `T`.
    pub fn len(&self) -> usize {
        self.stage_cost.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stage_cost.is_empty()
    }

    pub fn push(&mut self, x: &DVector<f64>, input: &InputBreakdown, w: &DVector<f64>, stage_cost: f64) {
        self.push_raw(
            x.as_slice(),
            input.u_ce.as_slice(),
            input.u_cb.as_slice(),
            input.u_pr.as_slice(),
            w.as_slice(),
            BreakerFlag::from_breakdown(input),
            stage_cost,
        );
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push_raw(
        &mut self,
        x: &[f64],
        u_ce: &[f64],
        u_cb: &[f64],
        u_pr: &[f64],
        w: &[f64],
        breaker: BreakerFlag,
        stage_cost: f64,
    ) {
        assert_eq!(x.len(), self.n);
        assert_eq!(w.len(), self.n);
        assert!(u_ce.len() == self.m && u_cb.len() == self.m && u_pr.len() == self.m);
        self.data.extend_from_slice(x);
        self.data.extend_from_slice(u_ce);
        self.data.extend_from_slice(u_cb);
        self.data.extend_from_slice(u_pr);
        self.data.extend_from_slice(w);
        self.breaker.push(breaker);
        self.stage_cost.push(stage_cost);
    }

    /// Row for step `k` (1-based).
    pub fn row(&self, k: u64) -> StepView<'_> {
        let i = (k - 1) as usize;
        let (n, m) = (self.n, self.m);
        let base = i * self.stride();
        let row = &self.data[base..base + self.stride()];
        StepView {
            k,
            x: &row[..n],
            u_ce: &row[n..n + m],
            u_cb: &row[n + m..n + 2 * m],
            u_pr: &row[n + 2 * m..n + 3 * m],
            w: &row[n + 3 * m..],
            breaker: self.breaker[i],
            stage_cost: self.stage_cost[i],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = StepView<'_>> + '_ {
        (1..=self.len() as u64).map(move |k| self.row(k))
    }

    pub fn stage_costs(&self) -> &[f64] {
        &self.stage_cost
    }

    pub fn breaker_flags(&self) -> &[BreakerFlag] {
        &self.breaker
    }

    pub fn set_final_state(&mut self, x: DVector<f64>) {
        self.final_state = Some(x);
    }

    /// Logged `x_{T+1}`, if the record came from a simulation.
    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.final_state.as_ref()
    }

    /// `x_{T+1}`: the logged value, or `A x_T + B u_T + w_T` rebuilt from
    /// the plant when the log was read from CSV.
    pub fn terminal_state(&self, plant: &PlantSpec) -> Option<DVector<f64>> {
        if let Some(x) = &self.final_state {
            return Some(x.clone());
        }
        let last = self.rows().last()?;
        let x = DVector::from_column_slice(last.x);
        let w = DVector::from_column_slice(last.w);
        Some(plant.sys().a() * x + plant.sys().b() * last.u() + w)
    }

    /// State `x_k` for `k = 1..=T+1`.
    pub fn state(&self, k: u64, plant: &PlantSpec) -> Option<DVector<f64>> {
        let t = self.len() as u64;
        if k >= 1 && k <= t {
            Some(DVector::from_column_slice(self.row(k).x))
        } else if k == t + 1 {
            self.terminal_state(plant)
        } else {
            None
        }
    }

    pub fn push_gain(&mut self, record: GainRecord) {
        self.gains.push(record);
        self.gain_history = true;
    }

    /// Marks the gain history as complete even while it holds no updates.
    pub fn track_gains(&mut self) {
        self.gain_history = true;
    }

    pub fn gains(&self) -> &[GainRecord] {
        &self.gains
    }

    pub fn has_gain_history(&self) -> bool {
        self.gain_history
    }

    /// `K̂_k`: the most recent gain set at or before step `k` (zero before
    /// the first update).
    pub fn gain_in_effect(&self, k: u64) -> DMatrix<f64> {
        let idx = self.gains.partition_point(|g| g.k <= k);
        match idx {
            0 => DMatrix::zeros(self.m, self.n),
            i => self.gains[i - 1].gain.clone(),
        }
    }

    pub fn csv_header(n: usize, m: usize) -> Vec<String> {
        let mut header = vec!["k".to_string()];
        for (name, dim) in [("x", n), ("u_ce", m), ("u_cb", m), ("u_pr", m), ("w", n)] {
            header.extend((0..dim).map(|i| format!("{name}{i}")));
        }
        header.push("breaker".into());
        header.push("stage_cost".into());
        header
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(Self::csv_header(self.n, self.m))?;
        let mut fields: Vec<String> = Vec::with_capacity(self.stride() + 3);
        for row in self.rows() {
            fields.clear();
            fields.push(row.k.to_string());
            for slice in [row.x, row.u_ce, row.u_cb, row.u_pr, row.w] {
                fields.extend(slice.iter().map(|v| v.to_string()));
            }
            fields.push(row.breaker.code().to_string());
            fields.push(row.stage_cost.to_string());
            wtr.write_record(&fields)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Parses a trial CSV; dimensions are inferred from the header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| {
                    h.strip_prefix(prefix)
                        .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
                })
                .count()
        };
        let (n, m) = (count("x"), count("u_ce"));
        if n == 0 || m == 0 {
            return Err(Error::IncompleteLog("header lacks x or u_ce columns".into()));
        }
        let expected = Self::csv_header(n, m);
        if header != expected {
            return Err(Error::IncompleteLog(format!(
                "unexpected header; expected {}",
                expected.join(",")
            )));
        }

        let mut rec = Self::new(n, m);
        let stride = rec.stride();
        let mut values = vec![0.0; stride];
        for (i, result) in rdr.records().enumerate() {
            let row_no = i as u64 + 1;
            let record = result.map_err(|e| Error::IncompleteLog(format!("row {row_no}: {e}")))?;
            if record.len() != expected.len() {
                return Err(Error::IncompleteLog(format!(
                    "row {row_no}: expected {} fields, found {}",
                    expected.len(),
                    record.len()
                )));
            }
            let field = |j: usize| -> Result<f64> {
                record[j].trim().parse::<f64>().map_err(|_| {
                    Error::IncompleteLog(format!("row {row_no}, column {}: cannot parse {:?}", expected[j], &record[j]))
                })
            };
            let k: u64 = record[0]
                .trim()
                .parse()
                .map_err(|_| Error::IncompleteLog(format!("row {row_no}, column k: cannot parse {:?}", &record[0])))?;
            if k != row_no {
                return Err(Error::IncompleteLog(format!("row {row_no}: step index {k} out of sequence")));
            }
            for (j, slot) in values.iter_mut().enumerate() {
                *slot = field(j + 1)?;
            }
            let breaker = record[stride + 1]
                .trim()
                .parse::<u8>()
                .ok()
                .and_then(BreakerFlag::from_code)
                .ok_or_else(|| {
                    Error::IncompleteLog(format!("row {row_no}, column breaker: invalid flag {:?}", &record[stride + 1]))
                })?;
            let stage_cost = field(stride + 2)?;
            let (x, rest) = values.split_at(n);
            let (u_ce, rest) = rest.split_at(m);
            let (u_cb, rest) = rest.split_at(m);
            let (u_pr, w) = rest.split_at(m);
            rec.push_raw(x, u_ce, u_cb, u_pr, w, breaker, stage_cost);
        }
        Ok(rec)
    }
}
