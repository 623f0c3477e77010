//! Omniscient in-process observer for debug-mirror runs.
//!
//! Parties deposit their shares of selected intermediate values under a label;
//! once all `m` shares of one deposit have arrived the tap reconstructs and
//! keeps the plaintext. Production code paths are unchanged when no tap is
//! attached. A tap obviously breaks secrecy and exists for tests and the
//! mirror oracle only.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use crate::numeric::{FieldElement, Modulus};
use crate::transport::PartyId;

/// A reconstructed deposit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TapRecord {
    pub seq: u64,
    pub meta: u64,
    pub values: Vec<FieldElement>,
}

/// One reconstructed truncation call (signed lifts).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncEvent {
    pub seq: u64,
    pub q: u32,
    pub floor: bool,
    pub input: Vec<i128>,
    pub output: Vec<i128>,
}

impl TruncEvent {
    /// Per-element rounding `output - floor(input / 2^q)`.
    pub fn rounding(&self) -> Vec<i128> {
        self.input.iter().zip(&self.output).map(|(x, y)| y - (x >> self.q)).collect()
    }
}

struct Pending {
    meta: u64,
    shares: Vec<Option<Vec<FieldElement>>>,
    arrived: usize,
}

#[derive(Default)]
struct TapState {
    pending: HashMap<(String, u64), Pending>,
    records: BTreeMap<String, Vec<TapRecord>>,
    errors: Vec<String>,
}

pub struct DebugTap {
    parties: usize,
    modulus: Modulus,
    state: Mutex<TapState>,
}

pub const TRUNC_LABEL: &str = "trunc";

impl DebugTap {
    pub fn new(parties: usize, modulus: Modulus) -> Self {
        DebugTap { parties, modulus, state: Mutex::new(TapState::default()) }
    }

    pub fn deposit(&self, label: &str, seq: u64, meta: u64, party: PartyId, values: &[FieldElement]) {
        let mut st = self.state.lock().unwrap();
        let key = (label.to_string(), seq);
        let parties = self.parties;
        let entry = st
            .pending
            .entry(key.clone())
            .or_insert_with(|| Pending { meta, shares: vec![None; parties], arrived: 0 });
        if entry.shares[party].is_some() || entry.meta != meta {
            st.errors.push(format!("inconsistent deposit `{label}` #{seq} from party {party}"));
            return;
        }
        entry.shares[party] = Some(values.to_vec());
        entry.arrived += 1;
        if entry.arrived < parties {
            return;
        }
        let done = st.pending.remove(&key).expect("present");
        let first = done.shares[0].as_ref().expect("complete");
        let mut acc = first.clone();
        let mut ok = true;
        for s in done.shares.iter().skip(1).flatten() {
            if s.len() != acc.len() {
                ok = false;
                break;
            }
            for (a, b) in acc.iter_mut().zip(s) {
                *a = self.modulus.add(*a, *b);
            }
        }
        if !ok {
            st.errors.push(format!("shape mismatch in deposit `{label}` #{seq}"));
            return;
        }
        st.records.entry(label.to_string()).or_default().push(TapRecord { seq, meta: done.meta, values: acc });
    }

    /// All complete records under `label`, ordered by deposit sequence.
    pub fn records(&self, label: &str) -> Vec<TapRecord> {
        let st = self.state.lock().unwrap();
        let mut v = st.records.get(label).cloned().unwrap_or_default();
        v.sort_by_key(|r| r.seq);
        v
    }

    pub fn labels(&self) -> Vec<String> {
        self.state.lock().unwrap().records.keys().cloned().collect()
    }

    /// Reconstructed truncation calls in execution order.
    pub fn trunc_trace(&self) -> Vec<TruncEvent> {
        self.records(TRUNC_LABEL)
            .into_iter()
            .map(|r| {
                let half = r.values.len() / 2;
                let lift = |v: &[FieldElement]| v.iter().map(|e| self.modulus.lift(*e)).collect::<Vec<_>>();
                TruncEvent {
                    seq: r.seq,
                    q: (r.meta & 0xFFFF) as u32,
                    floor: r.meta >> 16 & 1 == 1,
                    input: lift(&r.values[..half]),
                    output: lift(&r.values[half..]),
                }
            })
            .collect()
    }

    /// Deposits that never completed plus inconsistencies seen so far.
    pub fn problems(&self) -> Vec<String> {
        let st = self.state.lock().unwrap();
        let mut out = st.errors.clone();
        for (label, seq) in st.pending.keys() {
            out.push(format!("incomplete deposit `{label}` #{seq}"));
        }
        out
    }

    pub fn clear(&self) {
        *self.state.lock().unwrap() = TapState::default();
    }
}
