//! Global training started from the best of a random, an averaged and a
//! locally trained model.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{
    aggregate_average, plaintext_dpsgd, secure_dpsgd, secure_evaluate, share_datasets, Dataset, DpsgdConfig, Model,
    ProgressFn, SharedData, TrainError,
};
use crate::dp::{parallel_compose, sequential_compose, PrivacyBudget};
use crate::mpc::Party;
use crate::numeric::FieldElement;
use crate::transport::PartyId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitCandidate {
    Random,
    Average,
    BestLocal(PartyId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitReport {
    pub random_accuracy: f64,
    pub average_accuracy: f64,
    pub local_accuracies: Vec<f64>,
    pub chosen: InitCandidate,
    pub chosen_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeaConfig {
    pub local: DpsgdConfig,
    pub global: DpsgdConfig,
    /// Public seed of the random initial model.
    pub init_seed: u64,
    pub init_scale: f64,
}

impl PeaConfig {
    pub fn random_model(&self, dim: usize, classes: usize) -> Model {
        Model::random(dim, classes, self.init_scale, &mut ChaCha20Rng::seed_from_u64(self.init_seed))
    }

    /// Local phases run on disjoint data and compose in parallel; the global
    /// phase composes sequentially after them.
    pub fn total_budget(&self) -> Option<PrivacyBudget> {
        let local = self.local.budget()?;
        let global = self.global.budget()?;
        Some(sequential_compose(&[parallel_compose(&[local]), global]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeaReport {
    pub init: InitReport,
    pub local_sigma: f64,
    pub global_sigma: f64,
    pub budget: Option<PrivacyBudget>,
}

/// Shares every party's local model, evaluates the random model, the average
/// and each local model on `test`, and returns shares of the most accurate of
/// `[random, average, best local]` (earlier candidates win ties).
pub fn init_global_model(
    party: &mut Party,
    local: &Model,
    random: &Model,
    test: &SharedData,
) -> Result<(Vec<FieldElement>, InitReport), TrainError> {
    let fp = *party.fp();
    let p = local.len();
    if random.len() != p || test.dim != local.dim || test.classes != local.classes {
        return Err(TrainError::Config("model and test shapes differ".into()));
    }
    let locals = party.input_all(&local.encode(&fp)?, &vec![p; party.parties()])?;
    let random_sh = party.public(&random.encode(&fp)?);
    let average = aggregate_average(party, &locals)?;
    let random_accuracy = secure_evaluate(party, &random_sh, test)?.rate();
    let average_accuracy = secure_evaluate(party, &average, test)?.rate();
    let mut local_accuracies = Vec::with_capacity(locals.len());
    for l in &locals {
        local_accuracies.push(secure_evaluate(party, l, test)?.rate());
    }
    let mut best_local = 0;
    for (i, &a) in local_accuracies.iter().enumerate() {
        if a > local_accuracies[best_local] {
            best_local = i;
        }
    }
    let candidates = [
        (InitCandidate::Random, random_accuracy),
        (InitCandidate::Average, average_accuracy),
        (InitCandidate::BestLocal(best_local), local_accuracies[best_local]),
    ];
    let mut chosen = candidates[0];
    for c in &candidates[1..] {
        if c.1 > chosen.1 {
            chosen = *c;
        }
    }
    let shares = match chosen.0 {
        InitCandidate::Random => random_sh,
        InitCandidate::Average => average,
        InitCandidate::BestLocal(i) => locals[i].clone(),
    };
    let report = InitReport {
        random_accuracy,
        average_accuracy,
        local_accuracies,
        chosen: chosen.0,
        chosen_accuracy: chosen.1,
    };
    Ok((shares, report))
}

/// Local DPSGD on each party's own rows, secure initialisation, then secure
/// DPSGD on the union. `train_counts` and `test_counts` are the public row
/// counts of every party.
#[allow(clippy::too_many_arguments)]
pub fn pea_train(
    party: &mut Party,
    train: &Dataset,
    test: &Dataset,
    train_counts: &[usize],
    test_counts: &[usize],
    cfg: &PeaConfig,
    progress: Option<&mut ProgressFn>,
) -> Result<(Vec<FieldElement>, PeaReport), TrainError> {
    cfg.local.validate()?;
    cfg.global.validate()?;
    let local_sigma = cfg.local.sigma()?;
    let global_sigma = cfg.global.sigma()?;
    let random = cfg.random_model(train.dim, train.classes);
    let local = plaintext_dpsgd(train, &random, &cfg.local, party.rng())?;
    let test_sh = share_datasets(party, test, test_counts)?;
    let (init, report) = init_global_model(party, &local, &random, &test_sh)?;
    let train_sh = share_datasets(party, train, train_counts)?;
    let theta = secure_dpsgd(party, &train_sh, &init, &cfg.global, progress)?;
    Ok((theta, PeaReport { init: report, local_sigma, global_sigma, budget: cfg.total_budget() }))
}
