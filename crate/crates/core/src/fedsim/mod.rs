//! Round-based federation engine.
//!
//! Each round fans out client work (local training, soft predictions,
//! distillation) over a thread pool and joins at server barriers (teacher
//! formation, coefficient update, aggregation, ledger). Results are always
//! reduced in ascending client id, so a run is bit-identical for any number
//! of worker threads.

pub mod client;
pub mod comms;
pub mod metrics;
pub mod sampling;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{carve_public, Dataset, Partition, PublicSet};
use crate::error::{Error, Result};
use crate::knowledge::{
    apply_coefficient_update, coeff_gradient, cosine_coefficients, ensemble_teacher,
    normalize_columns, soft_predict, topk_coefficients, CoefficientMatrix, KnowledgeHyper,
    SoftPredictionBank,
};
use crate::nn::{combine_models, kl_divergence_eps, Model};
use crate::seed::{derive_seed, rng_for, tag};
use crate::tensor::Tensor;

pub use client::{distill, ClientState};
pub use comms::{
    coefficient_bytes, parameter_bytes, soft_prediction_bytes, ByteTotals, CommsEntry, CommsLedger,
    Direction, PayloadKind,
};
pub use metrics::{write_metrics_csv, ClientMetrics, RoundMetrics, RunOutcome, METRICS_CSV_HEADER};
pub use sampling::{sample_clients, sample_count};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Learned knowledge coefficients.
    Ktpfl,
    /// Coefficients from cosine similarity of soft predictions.
    Simpfl,
    /// Cosine similarity restricted to the K most similar clients.
    Topkpfl,
    /// Every client distills toward the average soft prediction.
    Fedmd,
    /// Per-architecture parameter averaging plus server-side ensemble distillation.
    Feddf,
    /// FedDF followed by local fine-tuning of the fused prototypes.
    Pfeddf,
    /// Data-size weighted parameter averaging of one shared architecture.
    Fedavg,
    /// Local training only.
    Local,
    /// Personalized parameter aggregation weighted by learned coefficients.
    KtpflHomogeneous,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Ktpfl,
        Algorithm::Simpfl,
        Algorithm::Topkpfl,
        Algorithm::Fedmd,
        Algorithm::Feddf,
        Algorithm::Pfeddf,
        Algorithm::Fedavg,
        Algorithm::Local,
        Algorithm::KtpflHomogeneous,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ktpfl => "ktpfl",
            Algorithm::Simpfl => "simpfl",
            Algorithm::Topkpfl => "topkpfl",
            Algorithm::Fedmd => "fedmd",
            Algorithm::Feddf => "feddf",
            Algorithm::Pfeddf => "pfeddf",
            Algorithm::Fedavg => "fedavg",
            Algorithm::Local => "local",
            Algorithm::KtpflHomogeneous => "ktpfl_homogeneous",
        }
    }

    /// Whether every client must share one architecture.
    pub fn requires_homogeneous(self) -> bool {
        matches!(self, Algorithm::Fedavg | Algorithm::KtpflHomogeneous)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything that drives a run apart from the data itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub algorithm: Algorithm,
    pub rounds: usize,
    /// E
    pub local_epochs: usize,
    /// R
    pub distill_steps: usize,
    pub private_batch_size: usize,
    pub public_batch_size: usize,
    /// |D_r|
    pub public_size: usize,
    pub public_labeled: bool,
    pub lr_local: f64,
    /// Distillation steps use `lr_distill · lambda`.
    pub lr_distill: f64,
    pub knowledge: KnowledgeHyper,
    pub sample_rate: f64,
    /// Local fine-tuning epochs after the last FedDF round (pFedDF).
    pub finetune_epochs: usize,
    pub normalize_coefficients: bool,
    pub public_resample_each_round: bool,
    pub threads: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ktpfl,
            rounds: 30,
            local_epochs: 20,
            distill_steps: 1,
            private_batch_size: 128,
            public_batch_size: 256,
            public_size: 3000,
            public_labeled: true,
            lr_local: 0.01,
            lr_distill: 0.01,
            knowledge: KnowledgeHyper::default(),
            sample_rate: 1.0,
            finetune_epochs: 20,
            normalize_coefficients: true,
            public_resample_each_round: false,
            threads: 1,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Configuration(msg));
        if self.rounds == 0 {
            return cfg("rounds must be >= 1".into());
        }
        if self.local_epochs == 0 {
            return cfg("local_epochs must be >= 1".into());
        }
        if self.private_batch_size == 0 || self.public_batch_size == 0 {
            return cfg("batch sizes must be >= 1".into());
        }
        if !(self.lr_local >= 0.0 && self.lr_distill >= 0.0) {
            return cfg("learning rates must be >= 0".into());
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return cfg(format!("sample_rate must be in (0, 1], got {}", self.sample_rate));
        }
        if self.threads == 0 {
            return cfg("threads must be >= 1".into());
        }
        self.knowledge
            .validate()
            .map_err(|e| Error::Configuration(e.to_string()))
    }
}

/// How the server forms teachers in a distillation round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TeacherPolicy {
    Learned,
    Cosine,
    TopK,
    Average,
}

/// Server-side state.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub coefficients: CoefficientMatrix,
    /// The public data D_r currently in use.
    pub public: PublicSet,
    pub round: usize,
    pub algorithm: Algorithm,
    pub ledger: CommsLedger,
    /// Per-architecture prototypes (FedDF) or the single global model (FedAvg).
    pub shared_models: Vec<Model>,
}

/// A complete simulated federation.
pub struct Federation {
    config: SimConfig,
    num_classes: usize,
    public_source: PublicSet,
    clients: Vec<ClientState>,
    server: ServerState,
    history: Vec<RoundMetrics>,
    coefficient_history: Vec<CoefficientMatrix>,
    pool: rayon::ThreadPool,
}

impl Federation {
    /// Builds the client fleet. `architectures[n]` is the full layer-width
    /// list `[d_in, hidden.., C]` of client `n`; clients with equal
    /// architectures form one group.
    pub fn new(
        config: SimConfig,
        dataset: &Dataset,
        partition: &Partition,
        public_source: PublicSet,
        architectures: &[Vec<usize>],
    ) -> Result<Self> {
        config.validate()?;
        let n = partition.num_clients();
        if architectures.len() != n {
            return Err(Error::Configuration(format!(
                "{} architectures for {n} clients",
                architectures.len()
            )));
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for arch in architectures {
            if !groups.contains(arch) {
                groups.push(arch.clone());
            }
        }
        if config.algorithm.requires_homogeneous() && groups.len() != 1 {
            return Err(Error::Configuration(format!(
                "{} requires one shared architecture, found {}",
                config.algorithm,
                groups.len()
            )));
        }
        if public_source.inputs.cols() != dataset.input_dim() && !public_source.is_empty() {
            return Err(Error::Configuration(format!(
                "public data width {} differs from task width {}",
                public_source.inputs.cols(),
                dataset.input_dim()
            )));
        }
        let public = carve_public(
            &public_source,
            config.public_size,
            config.public_labeled,
            derive_seed(config.seed, &[tag::PUBLIC_CARVE]),
        )?;

        let mut clients = Vec::with_capacity(n);
        for (id, arch) in architectures.iter().enumerate() {
            let model = Model::init(arch, &mut rng_for(config.seed, &[tag::INIT, id as u64]))?;
            let group = groups.iter().position(|g| g == arch).expect("group registered");
            clients.push(ClientState::new(
                id,
                model,
                group,
                dataset,
                partition.private_shards[id].clone(),
                partition.test_shards[id].clone(),
            )?);
        }

        // Shared models start from the first member's initialization.
        let shared_models = match config.algorithm {
            Algorithm::Fedavg => vec![clients[0].model.clone()],
            Algorithm::Feddf | Algorithm::Pfeddf => groups
                .iter()
                .enumerate()
                .map(|(g, _)| {
                    clients
                        .iter()
                        .find(|c| c.group == g)
                        .expect("non-empty group")
                        .model
                        .clone()
                })
                .collect(),
            _ => Vec::new(),
        };
        for c in &mut clients {
            match config.algorithm {
                Algorithm::Fedavg => c.model = shared_models[0].clone(),
                Algorithm::Feddf | Algorithm::Pfeddf => c.model = shared_models[c.group].clone(),
                _ => {}
            }
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;

        Ok(Self {
            server: ServerState {
                coefficients: CoefficientMatrix::uniform(n),
                public,
                round: 0,
                algorithm: config.algorithm,
                ledger: CommsLedger::new(),
                shared_models,
            },
            config,
            num_classes: dataset.num_classes,
            public_source,
            clients,
            history: Vec::new(),
            coefficient_history: Vec::new(),
            pool,
        })
    }

    /// Replaces the initial coefficient matrix.
    pub fn with_coefficients(mut self, c: CoefficientMatrix) -> Result<Self> {
        if c.dim() != self.clients.len() {
            return Err(Error::Configuration(format!(
                "coefficient matrix is {0}×{0} for {1} clients",
                c.dim(),
                self.clients.len()
            )));
        }
        self.server.coefficients = c;
        Ok(self)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn coefficients(&self) -> &CoefficientMatrix {
        &self.server.coefficients
    }

    pub fn ledger(&self) -> &CommsLedger {
        &self.server.ledger
    }

    pub fn history(&self) -> &[RoundMetrics] {
        &self.history
    }

    /// Coefficient matrix at the end of every completed round.
    pub fn coefficient_history(&self) -> &[CoefficientMatrix] {
        &self.coefficient_history
    }

    pub fn outcome(&self) -> RunOutcome {
        RunOutcome::from_history(&self.history, self.server.ledger.totals())
    }

    /// Runs every remaining round.
    pub fn run(&mut self) -> Result<RunOutcome> {
        while self.server.round < self.config.rounds {
            self.run_round()?;
        }
        Ok(self.outcome())
    }

    /// Runs one round of the configured algorithm.
    pub fn run_round(&mut self) -> Result<&RoundMetrics> {
        match self.config.algorithm {
            Algorithm::Ktpfl => self.run_round_ktpfl(),
            Algorithm::Simpfl => self.run_round_distillation(TeacherPolicy::Cosine),
            Algorithm::Topkpfl => self.run_round_distillation(TeacherPolicy::TopK),
            Algorithm::Fedmd => self.run_round_fedmd(),
            Algorithm::Feddf => self.run_round_feddf(false),
            Algorithm::Pfeddf => {
                let last = self.server.round + 1 == self.config.rounds;
                self.run_round_feddf(last)
            }
            Algorithm::Fedavg => self.run_round_fedavg(),
            Algorithm::Local => self.run_round_local(),
            Algorithm::KtpflHomogeneous => self.run_round_homogeneous_ktpfl(),
        }
    }

    /// Local training, soft-prediction upload, personalized teachers from the
    /// coefficient matrix, distillation, then one coefficient update.
    pub fn run_round_ktpfl(&mut self) -> Result<&RoundMetrics> {
        self.run_round_distillation(TeacherPolicy::Learned)
    }

    /// Like [`Self::run_round_ktpfl`] with every teacher equal to the plain
    /// average of all soft predictions and no coefficients.
    pub fn run_round_fedmd(&mut self) -> Result<&RoundMetrics> {
        self.run_round_distillation(TeacherPolicy::Average)
    }

    fn begin_round(&mut self) -> Result<(usize, Vec<usize>)> {
        let round = self.server.round + 1;
        let sampled = sample_clients(
            self.clients.len(),
            self.config.sample_rate,
            round,
            self.config.seed,
        )?;
        if self.config.public_resample_each_round {
            self.server.public = carve_public(
                &self.public_source,
                self.config.public_size,
                self.config.public_labeled,
                derive_seed(self.config.seed, &[tag::PUBLIC_CARVE, round as u64]),
            )?;
        }
        Ok((round, sampled))
    }

    /// This round's public mini-batch ξ_r: `min(B_pub, |D_r|)` samples of D_r.
    fn public_batch(&self, round: usize) -> (Vec<usize>, Tensor) {
        let mut idx: Vec<usize> = (0..self.server.public.len()).collect();
        idx.shuffle(&mut rng_for(self.config.seed, &[tag::PUBLIC_BATCH, round as u64]));
        idx.truncate(self.config.public_batch_size);
        let x = self.server.public.inputs.select_rows(&idx);
        (idx, x)
    }

    /// Runs `f` on every sampled client, in parallel, returning results in
    /// ascending client order.
    fn for_sampled<T, F>(&mut self, sampled: &[usize], f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut ClientState) -> Result<T> + Sync,
    {
        let mut mask = vec![false; self.clients.len()];
        for &id in sampled {
            mask[id] = true;
        }
        let clients = &mut self.clients;
        let results: Vec<Result<T>> = self.pool.install(|| {
            clients
                .par_iter_mut()
                .filter(|c| mask[c.id])
                .map(|c| {
                    f(c).map_err(|e| Error::Protocol(format!("client {} failed: {e}", c.id)))
                })
                .collect()
        });
        results.into_iter().collect()
    }

    fn local_training(&mut self, sampled: &[usize], round: usize) -> Result<()> {
        let (epochs, batch, lr, seed) = (
            self.config.local_epochs,
            self.config.private_batch_size,
            self.config.lr_local,
            self.config.seed,
        );
        self.for_sampled(sampled, |c| {
            c.local_update(epochs, batch, lr, seed, client::LOCAL_STREAM, round)
        })?;
        Ok(())
    }

    fn collect_bank(
        &mut self,
        sampled: &[usize],
        batch_idx: &[usize],
        batch: &Tensor,
    ) -> Result<SoftPredictionBank> {
        let t = self.config.knowledge.temperature;
        let preds = self.for_sampled(sampled, |c| soft_predict(&c.model, batch, t))?;
        SoftPredictionBank::new(sampled.to_vec(), preds, batch_idx.to_vec())
    }

    /// D_n / Σ_{m ∈ sampled} D_m.
    fn data_weights(&self, sampled: &[usize]) -> Vec<f64> {
        let total: usize = sampled.iter().map(|&i| self.clients[i].num_samples()).sum();
        sampled
            .iter()
            .map(|&i| self.clients[i].num_samples() as f64 / total as f64)
            .collect()
    }

    /// The coefficients among the sampled clients, columns renormalized when
    /// only a subset participates.
    fn coefficient_view(&self, sampled: &[usize]) -> CoefficientMatrix {
        if sampled.len() == self.clients.len() {
            return self.server.coefficients.clone();
        }
        let sub = self.server.coefficients.restrict(sampled);
        if self.config.normalize_coefficients {
            normalize_columns(&sub)
        } else {
            sub
        }
    }

    fn store_coefficient_view(&mut self, sampled: &[usize], view: CoefficientMatrix) {
        if sampled.len() == self.clients.len() {
            self.server.coefficients = view;
        } else if self.config.normalize_coefficients {
            self.server.coefficients.embed_preserving_mass(sampled, &view);
        } else {
            self.server.coefficients.embed(sampled, &view);
        }
    }

    /// One gradient step on the coefficient objective with the models fixed.
    fn update_coefficients(
        &mut self,
        sampled: &[usize],
        bank: &SoftPredictionBank,
    ) -> Result<CoefficientMatrix> {
        let view = self.coefficient_view(sampled);
        let weights = self.data_weights(sampled);
        let g = coeff_gradient(bank, &view, &weights, &self.config.knowledge)?;
        let next = apply_coefficient_update(
            &view,
            &g,
            self.config.knowledge.coeff_lr,
            self.config.normalize_coefficients,
        )?;
        self.store_coefficient_view(sampled, next.clone());
        Ok(next)
    }

    fn record(&mut self, round: usize, client: usize, kind: PayloadKind, dir: Direction, bytes: usize) {
        self.server.ledger.record(round, client, kind, dir, bytes);
    }

    fn run_round_distillation(&mut self, policy: TeacherPolicy) -> Result<&RoundMetrics> {
        let (round, sampled) = self.begin_round()?;
        self.local_training(&sampled, round)?;

        let (batch_idx, batch) = self.public_batch(round);
        let mut distill_losses = vec![0.0; self.clients.len()];
        if !batch_idx.is_empty() {
            let bank = self.collect_bank(&sampled, &batch_idx, &batch)?;
            let msg = soft_prediction_bytes(batch_idx.len(), self.num_classes);
            for &id in &sampled {
                self.record(round, id, PayloadKind::SoftPrediction, Direction::Uplink, msg);
            }

            let teachers: Vec<Tensor> = match policy {
                TeacherPolicy::Average => {
                    let mut mean = Tensor::zeros(bank.predictions[0].shape());
                    for p in &bank.predictions {
                        for (m, v) in mean.data_mut().iter_mut().zip(p.data()) {
                            *m += v;
                        }
                    }
                    let k = bank.len() as f64;
                    mean.data_mut().iter_mut().for_each(|v| *v /= k);
                    vec![mean; bank.len()]
                }
                TeacherPolicy::Learned | TeacherPolicy::Cosine | TeacherPolicy::TopK => {
                    let view = match policy {
                        TeacherPolicy::Learned => self.coefficient_view(&sampled),
                        TeacherPolicy::Cosine => cosine_coefficients(&bank)?,
                        _ => topk_coefficients(&bank, self.config.knowledge.top_k.min(bank.len()))?,
                    };
                    let teachers = (0..bank.len())
                        .map(|i| ensemble_teacher(&bank, &view, i))
                        .collect::<Result<Vec<_>>>()?;
                    if policy != TeacherPolicy::Learned {
                        self.store_coefficient_view(&sampled, view);
                    }
                    teachers
                }
            };
            for &id in &sampled {
                self.record(round, id, PayloadKind::SoftPrediction, Direction::Downlink, msg);
            }

            let position: Vec<Option<usize>> = {
                let mut p = vec![None; self.clients.len()];
                for (i, &id) in sampled.iter().enumerate() {
                    p[id] = Some(i);
                }
                p
            };
            let steps = self.config.distill_steps;
            let lr = self.config.lr_distill * self.config.knowledge.lambda;
            let (t, eps) = (self.config.knowledge.temperature, self.config.knowledge.kl_eps);
            let losses = self.for_sampled(&sampled, |c| {
                let teacher = &teachers[position[c.id].expect("sampled")];
                distill(&mut c.model, &batch, teacher, steps, lr, t, eps)
            })?;
            for (&id, l) in sampled.iter().zip(losses) {
                distill_losses[id] = l;
            }

            if policy == TeacherPolicy::Learned {
                self.update_coefficients(&sampled, &bank)?;
                let msg = coefficient_bytes(self.clients.len());
                for &id in &sampled {
                    self.record(round, id, PayloadKind::Coefficients, Direction::Downlink, msg);
                }
            }
        }
        self.finish_round(round, distill_losses)
    }

    /// Homogeneous mode: the server builds each client's personalized model
    /// `w̃_n = Σ_m c[m][n]·w_m` after learning `c` from soft predictions.
    pub fn run_round_homogeneous_ktpfl(&mut self) -> Result<&RoundMetrics> {
        let (round, sampled) = self.begin_round()?;
        self.local_training(&sampled, round)?;
        let d_bytes = parameter_bytes(self.clients[0].model.param_count());
        for &id in &sampled {
            self.record(round, id, PayloadKind::Parameters, Direction::Uplink, d_bytes);
        }

        let (batch_idx, batch) = self.public_batch(round);
        let mut distill_losses = vec![0.0; self.clients.len()];
        let view = if batch_idx.is_empty() {
            self.coefficient_view(&sampled)
        } else {
            let bank = self.collect_bank(&sampled, &batch_idx, &batch)?;
            let msg = soft_prediction_bytes(batch_idx.len(), self.num_classes);
            for &id in &sampled {
                self.record(round, id, PayloadKind::SoftPrediction, Direction::Uplink, msg);
            }
            let eps = self.config.knowledge.kl_eps;
            let next = self.update_coefficients(&sampled, &bank)?;
            for (i, &id) in sampled.iter().enumerate() {
                let teacher = ensemble_teacher(&bank, &next, i)?;
                distill_losses[id] = kl_divergence_eps(&teacher, &bank.predictions[i], eps)?;
            }
            next
        };

        let personalized = {
            let models: Vec<&Model> = sampled.iter().map(|&i| &self.clients[i].model).collect();
            (0..sampled.len())
                .map(|j| combine_models(&models, &view.column(j)))
                .collect::<Result<Vec<_>>>()?
        };
        for (&id, model) in sampled.iter().zip(personalized) {
            self.clients[id].model = model;
            self.record(round, id, PayloadKind::Parameters, Direction::Downlink, d_bytes);
        }
        self.finish_round(round, distill_losses)
    }

    /// FedAvg: `w ← Σ (D_n/D)·w^n` over the sampled clients.
    pub fn run_round_fedavg(&mut self) -> Result<&RoundMetrics> {
        let (round, sampled) = self.begin_round()?;
        let global = self.server.shared_models[0].clone();
        let d_bytes = parameter_bytes(global.param_count());
        for &id in &sampled {
            self.clients[id].model = global.clone();
            self.record(round, id, PayloadKind::Parameters, Direction::Downlink, d_bytes);
        }
        self.local_training(&sampled, round)?;
        for &id in &sampled {
            self.record(round, id, PayloadKind::Parameters, Direction::Uplink, d_bytes);
        }
        let weights = self.data_weights(&sampled);
        let models: Vec<&Model> = sampled.iter().map(|&i| &self.clients[i].model).collect();
        let aggregate = combine_models(&models, &weights)?;
        for c in &mut self.clients {
            c.model = aggregate.clone();
        }
        self.server.shared_models[0] = aggregate;
        let zeros = vec![0.0; self.clients.len()];
        self.finish_round(round, zeros)
    }

    /// FedDF: per-architecture averaging, then each prototype is distilled on
    /// the server toward the average soft prediction of all sampled clients.
    /// With `finetune`, every client then trains its prototype locally (pFedDF).
    pub fn run_round_feddf(&mut self, finetune: bool) -> Result<&RoundMetrics> {
        let (round, sampled) = self.begin_round()?;
        for &id in &sampled {
            let proto = self.server.shared_models[self.clients[id].group].clone();
            let bytes = parameter_bytes(proto.param_count());
            self.clients[id].model = proto;
            self.record(round, id, PayloadKind::Parameters, Direction::Downlink, bytes);
        }
        self.local_training(&sampled, round)?;
        for &id in &sampled {
            let bytes = parameter_bytes(self.clients[id].model.param_count());
            self.record(round, id, PayloadKind::Parameters, Direction::Uplink, bytes);
        }

        for g in 0..self.server.shared_models.len() {
            let members: Vec<usize> = sampled
                .iter()
                .copied()
                .filter(|&i| self.clients[i].group == g)
                .collect();
            if members.is_empty() {
                continue;
            }
            let total: usize = members.iter().map(|&i| self.clients[i].num_samples()).sum();
            let weights: Vec<f64> = members
                .iter()
                .map(|&i| self.clients[i].num_samples() as f64 / total as f64)
                .collect();
            let models: Vec<&Model> = members.iter().map(|&i| &self.clients[i].model).collect();
            self.server.shared_models[g] = combine_models(&models, &weights)?;
        }

        let (batch_idx, batch) = self.public_batch(round);
        let mut group_loss = vec![0.0; self.server.shared_models.len()];
        if !batch_idx.is_empty() {
            // The server holds the uploaded models, so the ensemble is computed
            // server-side without extra traffic.
            let bank = self.collect_bank(&sampled, &batch_idx, &batch)?;
            let mut teacher = Tensor::zeros(bank.predictions[0].shape());
            for p in &bank.predictions {
                for (m, v) in teacher.data_mut().iter_mut().zip(p.data()) {
                    *m += v;
                }
            }
            let k = bank.len() as f64;
            teacher.data_mut().iter_mut().for_each(|v| *v /= k);
            let lr = self.config.lr_distill * self.config.knowledge.lambda;
            let (t, eps) = (self.config.knowledge.temperature, self.config.knowledge.kl_eps);
            for (proto, loss) in self.server.shared_models.iter_mut().zip(&mut group_loss) {
                *loss = distill(proto, &batch, &teacher, self.config.distill_steps, lr, t, eps)?;
            }
        }
        for c in &mut self.clients {
            c.model = self.server.shared_models[c.group].clone();
        }
        if finetune {
            let everyone: Vec<usize> = (0..self.clients.len()).collect();
            let (epochs, batch, lr, seed) = (
                self.config.finetune_epochs,
                self.config.private_batch_size,
                self.config.lr_local,
                self.config.seed,
            );
            if epochs > 0 {
                self.for_sampled(&everyone, |c| {
                    c.local_update(epochs, batch, lr, seed, client::FINETUNE_STREAM, round)
                })?;
            }
        }
        let losses = self.clients.iter().map(|c| group_loss[c.group]).collect();
        self.finish_round(round, losses)
    }

    /// Local training only; nothing is exchanged.
    pub fn run_round_local(&mut self) -> Result<&RoundMetrics> {
        let (round, sampled) = self.begin_round()?;
        self.local_training(&sampled, round)?;
        let zeros = vec![0.0; self.clients.len()];
        self.finish_round(round, zeros)
    }

    fn finish_round(&mut self, round: usize, distill_losses: Vec<f64>) -> Result<&RoundMetrics> {
        let everyone: Vec<usize> = (0..self.clients.len()).collect();
        let evals = self.for_sampled(&everyone, |c| Ok((c.test_accuracy()?, c.private_loss()?)))?;
        let clients = evals
            .into_iter()
            .zip(distill_losses)
            .enumerate()
            .map(|(id, ((test_acc, private_loss), distill_loss))| {
                let (up_bytes, down_bytes) = self.server.ledger.client_round(round, id);
                ClientMetrics {
                    client_id: id,
                    test_acc,
                    private_loss,
                    distill_loss,
                    up_bytes,
                    down_bytes,
                }
            })
            .collect();
        self.server.round = round;
        self.coefficient_history.push(self.server.coefficients.clone());
        self.history.push(RoundMetrics::new(round, clients));
        Ok(self.history.last().expect("just pushed"))
    }
}
