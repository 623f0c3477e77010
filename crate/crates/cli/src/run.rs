//! Session orchestration for the `run` subcommand.

use std::path::PathBuf;
use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use dpmpc_core::dealer::Dealer;
use dpmpc_core::mpc::session::party_seed;
use dpmpc_core::mpc::{run_in_process, MpcError, Party, SessionOptions};
use dpmpc_core::numeric::FixedPoint;
use dpmpc_core::train::{
    init_global_model, plaintext_dpsgd, secure_dpsgd, secure_evaluate, share_datasets, DpsgdConfig, InitCandidate,
    Model, PeaConfig, SharedData,
};
use dpmpc_core::transport::TcpTransport;
use serde::Serialize;

use crate::config::{ExperimentConfig, Mode, TrainingMode};
use crate::data::{prepare, PreparedData};
use crate::metrics::{write_json, InitSummary, MetricsRecord, MetricsSink, Summary};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MODEL_FILE: &str = "model.json";

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ModelFile {
    pub dim: usize,
    pub classes: usize,
    /// `[W (dim x classes, row-major) | b (classes)]`.
    pub params: Vec<f64>,
}

struct RunContext<'a> {
    cfg: &'a ExperimentConfig,
    fp: FixedPoint,
    data: PreparedData,
    local: DpsgdConfig,
    global: DpsgdConfig,
}

/// Outcome of one party.
pub struct PartyOutcome {
    pub summary: Summary,
    pub model: ModelFile,
}

/// File names for `party`: plain names in-process, suffixed per party in socket mode.
pub fn output_names(mode: Mode, party: usize) -> (String, String, String) {
    match mode {
        Mode::InProcess => (METRICS_FILE.into(), SUMMARY_FILE.into(), MODEL_FILE.into()),
        Mode::Socket => (
            format!("metrics.p{party}.jsonl"),
            format!("summary.p{party}.json"),
            format!("model.p{party}.json"),
        ),
    }
}

/// Runs the configured experiment. In socket mode `party` selects this
/// process's index, falling back to `transport.party`. Returns the summary written to disk.
pub fn run(cfg: &ExperimentConfig, party: Option<usize>) -> Result<Summary, CliError> {
    cfg.check()?;
    let fp = cfg.fixed_point.build()?;
    let data = prepare(cfg, &fp)?;
    let (local, global) = cfg.phases(data.train_rows())?;
    let out_dir = cfg.output_dir();
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Output(format!("cannot create {}: {e}", out_dir.display())))?;
    let ctx = RunContext { cfg, fp, data, local, global };
    let mode = cfg.transport.mode;
    let me = match mode {
        Mode::InProcess => 0,
        Mode::Socket => {
            let p = party
                .or(cfg.transport.party)
                .ok_or_else(|| CliError::Config("socket mode needs a party index (--party or transport.party)".into()))?;
            if p >= cfg.parties {
                return Err(CliError::Config(format!("party {p} out of range for {} parties", cfg.parties)));
            }
            p
        }
    };
    let (metrics_name, summary_name, model_name) = output_names(mode, me);
    let sink = MetricsSink::create(&out_dir.join(&metrics_name))?;
    let outcome = match mode {
        Mode::InProcess => run_local(&ctx, sink)?,
        Mode::Socket => run_socket(&ctx, me, sink)?,
    };
    write_json(&out_dir.join(summary_name), &outcome.summary)?;
    write_json(&out_dir.join(model_name), &outcome.model)?;
    Ok(outcome.summary)
}

/// Per-step send counters gathered from every in-process party. The shared
/// meter also holds bytes other threads sent after the step ended; each
/// party's own row at its own progress call does not.
struct TrafficBoard {
    parties: usize,
    state: Mutex<BoardState>,
    ready: Condvar,
}

#[derive(Default)]
struct BoardState {
    rows: BTreeMap<u64, Vec<Option<Vec<u64>>>>,
    finished: usize,
}

impl TrafficBoard {
    fn new(parties: usize) -> Self {
        TrafficBoard { parties, state: Mutex::new(BoardState::default()), ready: Condvar::new() }
    }

    fn deposit(&self, step: u64, party: usize, row: Vec<u64>) {
        let mut st = self.state.lock().unwrap();
        st.rows.entry(step).or_insert_with(|| vec![None; self.parties])[party] = Some(row);
        self.ready.notify_all();
    }

    fn finish(&self) {
        self.state.lock().unwrap().finished += 1;
        self.ready.notify_all();
    }

    /// Blocks until every party deposited `step`; `None` if one stopped first.
    fn collect(&self, step: u64) -> Option<Vec<Vec<u64>>> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(rows) = st.rows.get(&step) {
                if rows.iter().all(Option::is_some) {
                    let rows = st.rows.remove(&step)?;
                    return Some(rows.into_iter().flatten().collect());
                }
            }
            if st.finished > 0 {
                return None;
            }
            st = self.ready.wait(st).unwrap();
        }
    }
}

fn run_local(ctx: &RunContext, sink: MetricsSink) -> Result<PartyOutcome, CliError> {
    let opts = SessionOptions::new(ctx.cfg.parties, ctx.cfg.seed).with_fp(ctx.fp);
    let sink = Mutex::new(Some(sink));
    let board = TrafficBoard::new(ctx.cfg.parties);
    let session = run_in_process(&opts, |p| {
        let mut mine = if p.id() == 0 { sink.lock().unwrap().take() } else { None };
        let out = party_main(p, ctx, mine.as_mut(), Some(&board));
        board.finish();
        Ok(out)
    });
    let results = match session {
        Ok(s) => s.results,
        Err(e) => return Err(e.into()),
    };
    // a party's own error beats the disconnects it caused elsewhere
    let mut first: Option<CliError> = None;
    let mut outcomes = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                let secondary = matches!(e, CliError::Runtime(_));
                if first.is_none() || (!secondary && matches!(first, Some(CliError::Runtime(_)))) {
                    first = Some(e);
                }
            }
        }
    }
    if let Some(e) = first {
        return Err(e);
    }
    Ok(outcomes.swap_remove(0))
}

fn run_socket(ctx: &RunContext, me: usize, mut sink: MetricsSink) -> Result<PartyOutcome, CliError> {
    let cfg = ctx.cfg;
    let transport = TcpTransport::connect(me, &cfg.transport.endpoints, cfg.transport.timeout())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let stream = Dealer::new(cfg.seed, cfg.parties, ctx.fp).stream(me);
    let mut party = Party::new(Box::new(transport), Box::new(stream), ctx.fp, party_seed(cfg.seed, me));
    party_main(&mut party, ctx, Some(&mut sink), None)
}

/// `(local epsilon, global epsilon, T)`. After `t` of `T` steps at the
/// calibrated sigma the global phase has spent `epsilon * sqrt(t / T)`.
fn epsilon_tracker(local: &DpsgdConfig, global: &DpsgdConfig, pea: bool) -> Option<(f64, f64, u64)> {
    let b = global.budget()?;
    if global.iterations == 0 {
        return None;
    }
    let base = if pea { local.budget().map_or(0.0, |l| l.epsilon) } else { 0.0 };
    Some((base, b.epsilon, global.iterations))
}

fn party_main(
    p: &mut Party,
    ctx: &RunContext,
    mut sink: Option<&mut MetricsSink>,
    board: Option<&TrafficBoard>,
) -> Result<PartyOutcome, CliError> {
    let cfg = ctx.cfg;
    let fp = ctx.fp;
    let me = p.id();
    let start = Instant::now();
    let timing = cfg.training.record_timing;
    let train = &ctx.data.train_parts[me];
    let test = &ctx.data.test_parts[me];
    let (dim, classes) = (train.dim, train.classes);
    let pea_mode = cfg.training.mode == TrainingMode::Pea;
    let pea = PeaConfig { local: ctx.local, global: ctx.global, init_seed: cfg.init_seed(), init_scale: cfg.training.init_scale };
    let random = pea.random_model(dim, classes);

    let test_sh = share_datasets(p, test, &ctx.data.test_counts())?;
    let train_sh = share_datasets(p, train, &ctx.data.train_counts())?;
    let (init, init_summary, local_sigma) = if pea_mode {
        let local = plaintext_dpsgd(train, &random, &ctx.local, p.rng())?;
        let (init, report) = init_global_model(p, &local, &random, &test_sh)?;
        let chosen = match report.chosen {
            InitCandidate::Random => "random".to_string(),
            InitCandidate::Average => "average".to_string(),
            InitCandidate::BestLocal(i) => format!("local-{i}"),
        };
        let summary = InitSummary {
            chosen,
            chosen_accuracy: report.chosen_accuracy,
            random_accuracy: report.random_accuracy,
            average_accuracy: report.average_accuracy,
            local_accuracies: report.local_accuracies,
        };
        (init, Some(summary), Some(ctx.local.sigma()?))
    } else {
        (p.public(&random.encode(&fp)?), None, None)
    };

    let tracker = epsilon_tracker(&ctx.local, &ctx.global, pea_mode);
    let total = ctx.global.iterations;
    let per_epoch = (train_sh.n as u64).div_ceil(ctx.global.batch as u64).max(1);
    let eval_every = cfg.training.eval_every;
    let want_train = cfg.training.train_accuracy;
    let mut sink_error: Option<CliError> = None;
    let mut last_eval: Option<(f64, Option<f64>)> = None;
    let mut progress = |party: &mut Party, t: u64, theta: &[dpmpc_core::FieldElement]| -> Result<(), MpcError> {
        let step = t + 1;
        let eval = step == total || (eval_every > 0 && step % eval_every == 0);
        let (test_acc, train_acc) = if eval {
            let te = evaluate(party, theta, &test_sh)?;
            let tr = if want_train { Some(evaluate(party, theta, &train_sh)?) } else { None };
            if step == total {
                last_eval = Some((te, tr));
            }
            (Some(te), tr)
        } else {
            (None, None)
        };
        let (rounds, mut bytes_total, mut bytes_per_pair) = MetricsRecord::traffic(&party.metrics());
        if let Some(b) = board {
            b.deposit(step, me, bytes_per_pair[me].clone());
        }
        if let Some(s) = sink.as_deref_mut() {
            if let Some(b) = board {
                bytes_per_pair = b.collect(step).ok_or_else(|| MpcError::Domain("a party stopped early".into()))?;
                bytes_total = bytes_per_pair.iter().flatten().sum();
            }
            let epsilon_spent = tracker.map(|(base, eps, t_total)| {
                if step == t_total {
                    base + eps
                } else {
                    base + eps * (step as f64 / t_total as f64).sqrt()
                }
            });
            let rec = MetricsRecord {
                iteration: step,
                epoch: t / per_epoch,
                train_accuracy: train_acc,
                test_accuracy: test_acc,
                elapsed_ms: timing.then(|| start.elapsed().as_millis() as u64),
                rounds,
                bytes_total,
                bytes_per_pair,
                epsilon_spent,
            };
            if let Err(e) = s.write(&rec) {
                sink_error = Some(e);
                return Err(MpcError::Domain("metrics output failed".into()));
            }
        }
        Ok(())
    };
    let trained = secure_dpsgd(p, &train_sh, &init, &ctx.global, Some(&mut progress));
    if let Some(e) = sink_error {
        return Err(e);
    }
    let theta = trained?;
    let (final_test, final_train) = match last_eval {
        Some(v) => v,
        None => {
            let te = evaluate(p, &theta, &test_sh)?;
            let tr = if want_train { Some(evaluate(p, &theta, &train_sh)?) } else { None };
            (te, tr)
        }
    };
    let opened = p.reveal(&theta)?;
    let model = Model::decode(&fp, dim, classes, &opened)?;
    let metrics = p.metrics();
    let budget = if pea_mode {
        pea.total_budget()
    } else {
        ctx.global.budget()
    };
    let summary = Summary {
        party: me,
        mode: if pea_mode { "pea".into() } else { "secure".into() },
        iterations: total,
        final_test_accuracy: final_test,
        final_train_accuracy: final_train,
        epsilon: budget.map(|b| b.epsilon),
        delta: budget.map(|b| b.delta),
        local_sigma,
        global_sigma: ctx.global.sigma()?,
        init: init_summary,
        rounds: metrics.rounds,
        bytes_total: metrics.total_bytes(),
        openings: p.audit().iter().map(|(k, v)| (format!("{k:?}"), *v)).collect(),
        elapsed_ms: timing.then(|| start.elapsed().as_millis() as u64),
    };
    Ok(PartyOutcome { summary, model: ModelFile { dim, classes, params: model.params } })
}

fn evaluate(p: &mut Party, theta: &[dpmpc_core::FieldElement], data: &SharedData) -> Result<f64, MpcError> {
    secure_evaluate(p, theta, data).map(|a| a.rate()).map_err(|e| match e {
        dpmpc_core::train::TrainError::Mpc(m) => m,
        other => MpcError::Domain(other.to_string()),
    })
}

/// Where a config's outputs land, after the environment override.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir()
}
