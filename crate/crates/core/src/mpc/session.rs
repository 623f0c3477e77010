//! In-process session runner: one thread per party over channel endpoints.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;

use sha2::{Digest, Sha256};

use super::{DebugTap, MpcError, OpenPurpose, Party};
use crate::dealer::Dealer;
use crate::numeric::FixedPoint;
use crate::transport::{in_process_network, ChannelMetrics, PartyId};

#[derive(Clone)]
pub struct SessionOptions {
    pub parties: usize,
    pub seed: u64,
    pub fp: FixedPoint,
    pub record_transcript: bool,
    pub tap: Option<Arc<DebugTap>>,
    pub dealer_limit: Option<u64>,
}

impl SessionOptions {
    pub fn new(parties: usize, seed: u64) -> Self {
        SessionOptions {
            parties,
            seed,
            fp: FixedPoint::default(),
            record_transcript: false,
            tap: None,
            dealer_limit: None,
        }
    }

    pub fn with_fp(mut self, fp: FixedPoint) -> Self {
        self.fp = fp;
        self
    }

    pub fn with_tap(mut self, tap: Arc<DebugTap>) -> Self {
        self.tap = Some(tap);
        self
    }

    pub fn recording(mut self) -> Self {
        self.record_transcript = true;
        self
    }
}

pub struct SessionOutput<R> {
    pub results: Vec<R>,
    pub metrics: ChannelMetrics,
    pub audits: Vec<BTreeMap<OpenPurpose, u64>>,
}

/// Seed for a party's private generator, derived from the session seed.
pub fn party_seed(seed: u64, party: PartyId) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"party-rng");
    h.update(seed.to_le_bytes());
    h.update((party as u64).to_le_bytes());
    h.finalize().into()
}

/// Runs `f` on every party of a fresh in-process session and joins the
/// results. If any party fails, the most informative error is returned
/// (protocol errors win over the disconnects they cause in peers).
pub fn run_in_process<R, F>(opts: &SessionOptions, f: F) -> Result<SessionOutput<R>, MpcError>
where
    R: Send,
    F: Fn(&mut Party) -> Result<R, MpcError> + Sync,
{
    let endpoints = in_process_network(opts.parties, opts.record_transcript);
    let meter = endpoints[0].metrics_handle();
    let dealer = Dealer::new(opts.seed, opts.parties, opts.fp);
    let f = &f;
    let joined: Vec<Result<(R, BTreeMap<OpenPurpose, u64>), MpcError>> = thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .enumerate()
            .map(|(id, ep)| {
                let mut stream = dealer.stream(id);
                if let Some(limit) = opts.dealer_limit {
                    stream = stream.with_limit(limit);
                }
                let tap = opts.tap.clone();
                let fp = opts.fp;
                let seed = party_seed(opts.seed, id);
                thread::Builder::new()
                    .name(format!("party-{id}"))
                    .stack_size(16 << 20)
                    .spawn_scoped(scope, move || {
                        let mut party = Party::new(Box::new(ep), Box::new(stream), fp, seed).with_tap(tap);
                        let r = f(&mut party)?;
                        Ok((r, party.audit().clone()))
                    })
                    .expect("spawn party thread")
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(id, h)| h.join().unwrap_or(Err(MpcError::Panic(id))))
            .collect()
    });
    let mut results = Vec::with_capacity(joined.len());
    let mut audits = Vec::with_capacity(joined.len());
    let mut first_err: Option<MpcError> = None;
    for r in joined {
        match r {
            Ok((v, a)) => {
                results.push(v);
                audits.push(a);
            }
            Err(e) => {
                let secondary = matches!(e, MpcError::Transport(_));
                match &first_err {
                    None => first_err = Some(e),
                    Some(MpcError::Transport(_)) if !secondary => first_err = Some(e),
                    _ => {}
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(SessionOutput { results, metrics: meter.snapshot(), audits })
}
